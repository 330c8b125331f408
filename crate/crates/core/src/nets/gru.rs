use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{uniform_init, Bound};
use crate::autodiff::{ParamId, ParamSet, Tape, Var};

/// Gated recurrent unit.
///
/// ```text
/// z  = σ(W_z·[x, h] + b_z)
/// r  = σ(W_r·[x, h] + b_r)
/// h̃  = tanh(W_h·[x, r⊙h] + b_h)
/// h' = (1 − z)⊙h + z⊙h̃
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    w_z: ParamId,
    b_z: ParamId,
    w_r: ParamId,
    b_r: ParamId,
    w_h: ParamId,
    b_h: ParamId,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let cols = input + hidden;
        let mut gate = |g: &str| {
            (
                params.push(format!("{name}.w_{g}"), uniform_init(hidden, cols, k, rng)),
                params.push(format!("{name}.b_{g}"), uniform_init(1, hidden, k, rng)),
            )
        };
        let (w_z, b_z) = gate("z");
        let (w_r, b_r) = gate("r");
        let (w_h, b_h) = gate("h");
        GruCell { input, hidden, w_z, b_z, w_r, b_r, w_h, b_h }
    }

    pub fn param_ids(&self) -> [ParamId; 6] {
        [self.w_z, self.b_z, self.w_r, self.b_r, self.w_h, self.b_h]
    }

    /// One recurrence step over a batch: `x: [B, input]`, `h: [B, hidden]`.
    pub fn step(&self, tape: &mut Tape<'_>, b: &Bound, x: Var, h: Var) -> Var {
        let xh = tape.concat_cols(&[x, h]);
        let z = tape.affine(xh, b.var(self.w_z), Some(b.var(self.b_z)));
        let z = tape.sigmoid(z);
        let r = tape.affine(xh, b.var(self.w_r), Some(b.var(self.b_r)));
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h);
        let xrh = tape.concat_cols(&[x, rh]);
        let cand = tape.affine(xrh, b.var(self.w_h), Some(b.var(self.b_h)));
        let cand = tape.tanh(cand);
        let keep = tape.one_minus(z);
        let old = tape.mul(keep, h);
        let new = tape.mul(z, cand);
        tape.add(old, new)
    }
}
