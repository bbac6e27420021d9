use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Gate weights of one LSTM layer stacked as `[W_i; W_f; W_o; W_l]` (4K × in)
/// with biases `[b_i; b_f; b_o; b_l]` (4K × 1).
#[derive(Clone, Copy, Debug)]
pub struct GateVars {
    pub weight: Var,
    pub bias: Var,
    pub hidden: usize,
}

impl GateVars {
    /// Stacks the four gate blocks on the tape.
    pub fn stack(tape: &mut Tape, weights: [Var; 4], biases: [Var; 4]) -> Result<Self> {
        let hidden = tape.value(weights[0]).rows();
        Ok(GateVars {
            weight: tape.concat_rows(&weights)?,
            bias: tape.concat_rows(&biases)?,
            hidden,
        })
    }
}

/// One LSTM step on a batch of column vectors.
///
/// The gate input is `[h_prev; inputs...]`; gates are
/// `i, f, o = σ(·)`, `l = tanh(·)`, then `c = f⊙c_prev + i⊙l`, `h = o⊙tanh(c)`.
pub fn lstm_cell(tape: &mut Tape, gates: &GateVars, h_prev: Var, c_prev: Var, inputs: &[Var]) -> Result<(Var, Var)> {
    let k = gates.hidden;
    if tape.value(h_prev).rows() != k || tape.value(c_prev).shape() != tape.value(h_prev).shape() {
        return Err(Error::shape("lstm_cell", tape.value(h_prev).shape(), &[k, tape.value(c_prev).cols()]));
    }
    let mut parts = Vec::with_capacity(inputs.len() + 1);
    parts.push(h_prev);
    parts.extend_from_slice(inputs);
    let z = tape.concat_rows(&parts)?;
    let pre = tape.matmul(gates.weight, z)?;
    let g = tape.add_column(pre, gates.bias)?;
    let gi = tape.slice_rows(g, 0, k)?;
    let gf = tape.slice_rows(g, k, k)?;
    let go = tape.slice_rows(g, 2 * k, k)?;
    let gl = tape.slice_rows(g, 3 * k, k)?;
    let i = tape.sigmoid(gi);
    let f = tape.sigmoid(gf);
    let o = tape.sigmoid(go);
    let l = tape.tanh(gl);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, l)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Shared projection `ĥ = tanh(W h + b)` followed by one row per compartment.
#[derive(Clone, Copy, Debug)]
pub struct ReadoutVars {
    pub weight: Var,
    pub bias: Var,
    /// `[h_S; h_E; h_I; h_R]`, 4 × K.
    pub heads: Var,
}

/// Normalized `[S; E; I; R]` predictions, 4 × batch.
pub fn readout(tape: &mut Tape, vars: &ReadoutVars, h: Var) -> Result<Var> {
    let proj = tape.matmul(vars.weight, h)?;
    let shifted = tape.add_column(proj, vars.bias)?;
    let h_hat = tape.tanh(shifted);
    tape.matmul(vars.heads, h_hat)
}
