use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{dot, l2_norm, Tensor};

/// Persistent power-iteration state for one weight matrix.
///
/// `u` tracks the leading left singular vector, `v` the right one, and
/// `sigma` the most recent estimate of the largest singular value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralNorm {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub sigma: f64,
}

impl SpectralNorm {
    pub fn new<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let mut u: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = l2_norm(&u);
        u.iter_mut().for_each(|x| *x /= n);
        SpectralNorm { u, v: vec![0.0; cols], sigma: 1.0 }
    }

    /// Refines the estimate with `iters` power-iteration steps and returns σ.
    ///
    /// A zero matrix leaves the state untouched and reports σ = 1 so that
    /// dividing by it is the identity.
    pub fn refine(&mut self, w: &Tensor, iters: usize) -> f64 {
        assert_eq!(w.shape(), [self.u.len(), self.v.len()], "spectral norm: shape changed");
        if w.data().iter().all(|&x| x == 0.0) {
            log::warn!("spectral_normalize: zero matrix left unnormalized");
            self.sigma = 1.0;
            return 1.0;
        }
        for _ in 0..iters {
            let mut v = w.matvec_t(&self.u);
            let nv = l2_norm(&v);
            if nv == 0.0 {
                break;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            let mut u = w.matvec(&v);
            let nu = l2_norm(&u);
            if nu == 0.0 {
                break;
            }
            u.iter_mut().for_each(|x| *x /= nu);
            self.u = u;
            self.v = v;
        }
        if iters > 0 {
            self.sigma = dot(&self.u, &w.matvec(&self.v));
        }
        if !(self.sigma > 0.0) {
            self.sigma = 1.0;
        }
        self.sigma
    }
}

/// `w / σ̂(w)`, refining the persistent estimate first.
pub fn spectral_normalize(w: &Tensor, state: &mut SpectralNorm, power_iters: usize) -> Tensor {
    let sigma = state.refine(w, power_iters);
    w.scaled(1.0 / sigma)
}
