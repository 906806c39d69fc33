use super::{BoundParams, NumericsError, Tape, Var};
use crate::scalar::Scalar;

/// Tape handles for one GRU cell's parameters.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

impl GruWeights {
    /// Looks up `{prefix}/w_z`, `{prefix}/u_z`, `{prefix}/b_z`, ... in a bound group.
    pub fn from_bound(bound: &BoundParams, prefix: &str) -> Result<Self, NumericsError> {
        let v = |name: &str| bound.var(&format!("{prefix}/{name}"));
        Ok(Self {
            w_z: v("w_z")?,
            u_z: v("u_z")?,
            b_z: v("b_z")?,
            w_r: v("w_r")?,
            u_r: v("u_r")?,
            b_r: v("b_r")?,
            w_h: v("w_h")?,
            u_h: v("u_h")?,
            b_h: v("b_h")?,
        })
    }
}

/// Parameter names and shapes of a GRU cell with input size `n_x` and hidden size `n_h`.
pub fn gru_param_shapes(n_x: usize, n_h: usize) -> Vec<(&'static str, Vec<usize>)> {
    let mut out = Vec::with_capacity(9);
    for gate in ["z", "r", "h"] {
        let (w, u, b) = match gate {
            "z" => ("w_z", "u_z", "b_z"),
            "r" => ("w_r", "u_r", "b_r"),
            _ => ("w_h", "u_h", "b_h"),
        };
        out.push((w, vec![n_h, n_x]));
        out.push((u, vec![n_h, n_h]));
        out.push((b, vec![n_h]));
    }
    out
}

/// One GRU step in Cho et al.'s original convention:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h̃  = tanh(W_h x + U_h (r ∘ h) + b_h)
/// h' = (1 − z) ∘ h + z ∘ h̃
/// ```
pub fn gru_cell<T: Scalar>(tape: &mut Tape<'_, T>, h_prev: Var, x: Var, w: &GruWeights) -> Result<Var, NumericsError> {
    let gate = |tape: &mut Tape<'_, T>, wx: Var, uh: Var, b: Var, hin: Var| -> Result<Var, NumericsError> {
        let a = tape.dense(x, wx, Some(b))?;
        let c = tape.dense(hin, uh, None)?;
        tape.add(a, c)
    };
    let z_pre = gate(tape, w.w_z, w.u_z, w.b_z, h_prev)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, w.w_r, w.u_r, w.b_r, h_prev)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h_prev)?;
    let cand_pre = gate(tape, w.w_h, w.u_h, w.b_h, rh)?;
    let cand = tape.tanh(cand_pre);
    // h + z ∘ (h̃ − h)
    let delta = tape.sub(cand, h_prev)?;
    let step = tape.mul(z, delta)?;
    tape.add(h_prev, step)
}
