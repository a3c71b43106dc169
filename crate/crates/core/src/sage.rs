//! GraphSAGE layers with the unweighted mean aggregator.

use rand::Rng;

use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::neighbors_of;
use crate::init::glorot_uniform;

/// `(2·d_in) × d_out` weight. The first `d_in` rows act on the node's own
/// features, the last `d_in` rows on its neighbor mean.
#[derive(Clone, Debug, PartialEq)]
pub struct SageLayerParams {
    pub weight: ParamId,
    pub index: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl SageLayerParams {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        index: usize,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Config(format!("SAGE layer {index} has a zero dimension")));
        }
        let weight = store.insert(name, glorot_uniform(rng, 2 * d_in, d_out))?;
        Ok(Self {
            weight,
            index,
            d_in,
            d_out,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// Row-normalized neighbor indicator `M`, so that `M·H` stacks the mean of
/// each node's neighbor features. Nodes without neighbors get a zero row.
pub fn mean_aggregator(adjacency: &Tensor) -> Tensor {
    let n = adjacency.rows();
    let mut m = Tensor::zeros(&[n, n]);
    for (i, nbrs) in neighbors_of(adjacency).into_iter().enumerate() {
        let inv = 1.0 / nbrs.len().max(1) as f64;
        for j in nbrs {
            m.set(i, j, inv);
        }
    }
    m
}

/// `out_v = σ(Wᵀ · concat(h_v, mean_{u∈N(v)} h_u))`, evaluated for all nodes at once.
pub fn sage_layer(
    tape: &mut Tape,
    bound: &Bound,
    params: &SageLayerParams,
    features: Var,
    aggregator: Var,
    activation: Activation,
) -> Result<Var> {
    let (n, d) = tape.value(features).dims();
    let layer = format!("sage layer {}", params.index);
    if d != params.d_in {
        return Err(Error::dim(layer, tape.value(features).shape(), &[n, params.d_in]));
    }
    if tape.value(aggregator).dims() != (n, n) {
        return Err(Error::dim(layer, tape.value(aggregator).shape(), &[n, n]));
    }
    let weight = bound[params.weight];
    if tape.value(weight).dims() != (2 * params.d_in, params.d_out) {
        return Err(Error::dim(
            layer,
            tape.value(weight).shape(),
            &[2 * params.d_in, params.d_out],
        ));
    }
    let neigh = tape.matmul(aggregator, features)?;
    let cat = tape.concat_cols(&[features, neigh])?;
    let out = tape.matmul(cat, weight)?;
    Ok(match activation {
        Activation::Relu => tape.relu(out),
        Activation::Identity => out,
    })
}

/// Applies `layers` in sequence with ReLU; the result is `H⁰`.
pub fn encode_spatial(
    tape: &mut Tape,
    bound: &Bound,
    layers: &[SageLayerParams],
    features: Var,
    aggregator: Var,
) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::Config("at least one SAGE layer is required".into()));
    }
    for pair in layers.windows(2) {
        if pair[0].d_out != pair[1].d_in {
            return Err(Error::Config(format!(
                "SAGE layer {} outputs {} features but layer {} expects {}",
                pair[0].index, pair[0].d_out, pair[1].index, pair[1].d_in
            )));
        }
    }
    let mut h = features;
    for layer in layers {
        h = sage_layer(tape, bound, layer, h, aggregator, Activation::Relu)?;
    }
    Ok(h)
}
