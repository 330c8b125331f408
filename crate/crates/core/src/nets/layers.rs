use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, SpectralNorm, Tape, Tensor, Var};

/// Tape handles for every parameter of one [`ParamSet`], indexed by [`ParamId`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Puts every parameter on the tape as a borrowed leaf. `track` decides
    /// whether gradients flow back to them.
    pub fn new<'a>(params: &'a ParamSet, tape: &mut Tape<'a>, track: bool) -> Self {
        let vars = params
            .iter()
            .map(|p| if track { tape.param(&p.value) } else { tape.constant_ref(&p.value) })
            .collect();
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub(crate) fn uniform_init<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect())
}

/// Fully-connected layer, `y = x·Wᵀ + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let k = 1.0 / (fan_in as f64).sqrt();
        let weight = params.push(format!("{name}.weight"), uniform_init(fan_out, fan_in, k, rng));
        let bias = params.push(format!("{name}.bias"), uniform_init(1, fan_out, k, rng));
        Linear { weight, bias, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, b: &Bound, x: Var) -> Var {
        tape.affine(x, b.var(self.weight), Some(b.var(self.bias)))
    }

    /// Forward with the weight divided by a (constant) σ.
    pub fn forward_scaled(&self, tape: &mut Tape<'_>, b: &Bound, x: Var, sigma: f64) -> Var {
        let w = tape.scale(b.var(self.weight), 1.0 / sigma);
        tape.affine(x, w, Some(b.var(self.bias)))
    }

    pub fn zero(&self, params: &mut ParamSet) {
        params.tensor_mut(self.weight).data_mut().fill(0.0);
        params.tensor_mut(self.bias).data_mut().fill(0.0);
    }
}

/// Three fully-connected layers with ReLU between them and spectral
/// normalization on the middle (penultimate) layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub layers: [Linear; 3],
    pub spectral: SpectralNorm,
}

impl Head {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let layers = [
            Linear::new(params, &format!("{name}.0"), fan_in, hidden, rng),
            Linear::new(params, &format!("{name}.1"), hidden, hidden, rng),
            Linear::new(params, &format!("{name}.2"), hidden, fan_out, rng),
        ];
        let spectral = SpectralNorm::new(hidden, hidden, rng);
        Head { layers, spectral }
    }

    /// Pre-activation output of the last layer.
    pub fn forward(&self, tape: &mut Tape<'_>, b: &Bound, x: Var) -> Var {
        let h = self.layers[0].forward(tape, b, x);
        let h = tape.relu(h);
        let h = self.layers[1].forward_scaled(tape, b, h, self.spectral.sigma);
        let h = tape.relu(h);
        self.layers[2].forward(tape, b, h)
    }

    /// Re-estimates σ of the penultimate weight with `iters` power iterations.
    pub fn refresh_spectral(&mut self, params: &ParamSet, iters: usize) -> f64 {
        self.spectral.refine(params.tensor(self.layers[1].weight), iters)
    }

    /// Zeroes the output layer so the head emits its bias-free zero logits.
    pub fn zero_output(&self, params: &mut ParamSet) {
        self.layers[2].zero(params);
    }
}
