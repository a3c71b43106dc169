//! Local-global fusion and the classification head.

use rand::Rng;

use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::init::{glorot_uniform, zeros_row};

/// Dense layers with ReLU between them and an identity output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<(ParamId, ParamId)>,
    pub dims: Vec<usize>,
}

impl MlpParams {
    /// `dims = [in, hidden.., out]`; registers `{prefix}.{i}.weight` and `{prefix}.{i}.bias`.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!("MLP `{prefix}` needs at least one layer")));
        }
        if dims.contains(&0) {
            return Err(Error::Config(format!("MLP `{prefix}` has a zero width")));
        }
        let mut layers = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            let w = store.insert(format!("{prefix}.{i}.weight"), glorot_uniform(rng, pair[0], pair[1]))?;
            let b = store.insert(format!("{prefix}.{i}.bias"), zeros_row(pair[1]))?;
            layers.push((w, b));
        }
        Ok(Self {
            layers,
            dims: dims.to_vec(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }
}

/// Applies the MLP to every row of `input`.
pub fn mlp_forward(tape: &mut Tape, bound: &Bound, params: &MlpParams, input: Var) -> Result<Var> {
    let mut x = input;
    let last = params.layers.len() - 1;
    for (i, (w, b)) in params.layers.iter().enumerate() {
        let (rows, cols) = tape.value(x).dims();
        let (w_in, w_out) = tape.value(bound[*w]).dims();
        if cols != w_in || tape.value(bound[*b]).dims() != (1, w_out) {
            return Err(Error::dim(format!("mlp layer {i}"), &[rows, cols], &[w_in, w_out]));
        }
        let z = tape.matmul(x, bound[*w])?;
        let z = tape.add_row(z, bound[*b])?;
        x = if i == last { z } else { tape.relu(z) };
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    /// `1 × width` vector fed to the head.
    pub fused: Var,
    pub logits: Var,
}

/// Row-major flattening to a `1 × (rows·cols)` vector.
pub fn vectorize(tape: &mut Tape, x: Var) -> Result<Var> {
    let n = tape.value(x).numel();
    tape.reshape(x, &[1, n])
}

/// `logits = head(concat(vec(H^L), vec(gf(H⁰))))`; with `gf = None` the head
/// sees `vec(H^L)` alone.
pub fn fuse_and_predict(
    tape: &mut Tape,
    bound: &Bound,
    h0: Var,
    hl: Var,
    gf: Option<&MlpParams>,
    head: &MlpParams,
) -> Result<FusionOutput> {
    let pooled = vectorize(tape, hl)?;
    let fused = match gf {
        Some(gf) => {
            let global = mlp_forward(tape, bound, gf, h0)?;
            let global = vectorize(tape, global)?;
            tape.concat_cols(&[pooled, global])?
        }
        None => pooled,
    };
    let width = tape.value(fused).cols();
    if width != head.input_dim() {
        return Err(Error::dim("fusion head input", &[1, width], &[1, head.input_dim()]));
    }
    let logits = mlp_forward(tape, bound, head, fused)?;
    Ok(FusionOutput { fused, logits })
}

/// `−log softmax(logits)[label]` for a 1-based `label`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, label: usize) -> Result<Var> {
    let k = tape.value(logits).numel();
    if k < 2 {
        return Err(Error::Contract(format!("cross entropy needs at least 2 classes, got {k}")));
    }
    if label == 0 || label > k {
        return Err(Error::Contract(format!("label {label} outside 1..={k}")));
    }
    let row = tape.reshape(logits, &[1, k])?;
    let logp = tape.log_softmax_rows(row);
    let mut onehot = Tensor::zeros(&[1, k]);
    onehot.set(0, label - 1, 1.0);
    let mask = tape.constant(onehot);
    let picked = tape.hadamard(logp, mask)?;
    let total = tape.sum_all(picked);
    Ok(tape.scale(total, -1.0))
}

/// 1-based index of the largest entry; ties go to the lowest class.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best + 1
}
