//! Shared single-layer LSTM run over every node's univariate segment.
//!
//! Weights are stored for right-multiplication: a batch of `n` nodes keeps its
//! hidden state as an `n × F` matrix, and the gate pre-activation is
//! `x·W_g + h·U_g + b_g` with `W_g: 1 × F`, `U_g: F × F`, `b_g: 1 × F`.

use rand::Rng;

use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::init::{glorot_uniform, zeros_row};

/// Gate order used everywhere: input, forget, output, candidate.
pub const GATES: [&str; 4] = ["i", "f", "o", "g"];

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub hidden: usize,
    pub input_weight: [ParamId; 4],
    pub recurrent_weight: [ParamId; 4],
    pub bias: [ParamId; 4],
}

impl LstmParams {
    /// Registers `{prefix}.w_{g}`, `{prefix}.u_{g}`, `{prefix}.b_{g}` for each gate.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        forget_bias: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("LSTM hidden size must be positive".into()));
        }
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in GATES {
            w.push(store.insert(format!("{prefix}.w_{gate}"), glorot_uniform(rng, 1, hidden))?);
            u.push(store.insert(format!("{prefix}.u_{gate}"), glorot_uniform(rng, hidden, hidden))?);
            let bias = if gate == "f" {
                Tensor::filled(&[1, hidden], forget_bias)
            } else {
                zeros_row(hidden)
            };
            b.push(store.insert(format!("{prefix}.b_{gate}"), bias)?);
        }
        Ok(Self {
            hidden,
            input_weight: w.try_into().unwrap(),
            recurrent_weight: u.try_into().unwrap(),
            bias: b.try_into().unwrap(),
        })
    }

    /// Fuses the four gates into single `1 × 4F`, `F × 4F`, `1 × 4F` operands.
    pub fn bind(&self, tape: &mut Tape, bound: &Bound) -> Result<LstmWeights> {
        let cat = |tape: &mut Tape, ids: &[ParamId; 4]| {
            let vars: Vec<Var> = ids.iter().map(|id| bound[*id]).collect();
            tape.concat_cols(&vars)
        };
        let input = cat(tape, &self.input_weight)?;
        let recurrent = cat(tape, &self.recurrent_weight)?;
        let bias = cat(tape, &self.bias)?;
        let f = self.hidden;
        let shapes_ok = tape.value(input).dims() == (1, 4 * f)
            && tape.value(recurrent).dims() == (f, 4 * f)
            && tape.value(bias).dims() == (1, 4 * f);
        if !shapes_ok {
            return Err(Error::dim(
                "lstm weights",
                tape.value(recurrent).shape(),
                &[f, 4 * f],
            ));
        }
        Ok(LstmWeights {
            hidden: f,
            input,
            recurrent,
            bias,
        })
    }
}

/// Gate-fused LSTM weights bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub hidden: usize,
    input: Var,
    recurrent: Var,
    bias: Var,
}

/// One LSTM timestep for a batch of `n` independent sequences.
///
/// `x` is `n × 1`, `h_prev` and `c_prev` are `n × F`:
/// `i, f, o = σ(·)`, `g = tanh(·)`, `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_step(
    tape: &mut Tape,
    weights: &LstmWeights,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let f = weights.hidden;
    let n = tape.value(x).rows();
    if tape.value(x).cols() != 1 {
        return Err(Error::dim("lstm_step input", tape.value(x).shape(), &[n, 1]));
    }
    for state in [h_prev, c_prev] {
        if tape.value(state).dims() != (n, f) {
            return Err(Error::dim("lstm_step state", tape.value(state).shape(), &[n, f]));
        }
    }
    let xw = tape.matmul(x, weights.input)?;
    let hu = tape.matmul(h_prev, weights.recurrent)?;
    let z = tape.add(xw, hu)?;
    let z = tape.add_row(z, weights.bias)?;
    let zi = tape.slice_cols(z, 0, f)?;
    let zf = tape.slice_cols(z, f, 2 * f)?;
    let zo = tape.slice_cols(z, 2 * f, 3 * f)?;
    let zg = tape.slice_cols(z, 3 * f, 4 * f)?;
    let i = tape.sigmoid(zi);
    let fg = tape.sigmoid(zf);
    let o = tape.sigmoid(zo);
    let g = tape.tanh(zg);
    let keep = tape.hadamard(fg, c_prev)?;
    let write = tape.hadamard(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.hadamard(o, tc)?;
    Ok((h, c))
}

/// Runs every column of a `w × N` segment through the shared LSTM from zero
/// state and returns the final hidden states as an `N × F` matrix.
pub fn encode_window(tape: &mut Tape, weights: &LstmWeights, segment: &Tensor) -> Result<Var> {
    let (w, n) = segment.dims();
    let f = weights.hidden;
    let mut h = tape.constant(Tensor::zeros(&[n, f]));
    let mut c = tape.constant(Tensor::zeros(&[n, f]));
    for s in 0..w {
        let x = tape.constant(Tensor::matrix(n, 1, segment.row(s).to_vec())?);
        (h, c) = lstm_step(tape, weights, x, h, c)?;
    }
    Ok(h)
}
