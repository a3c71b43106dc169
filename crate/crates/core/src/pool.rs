//! Differentiable soft-cluster pooling.
//!
//! Per level: `S = softmax_rows(GNN(A, H))`, `H' = SᵀH`, `A' = SᵀAS`, with
//! auxiliary losses `‖A − SSᵀ‖_F / n²` (link) and mean row entropy of `S`.

use rand::Rng;

use crate::autodiff::{Bound, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::sage::{mean_aggregator, sage_layer, Activation, SageLayerParams};

#[derive(Clone, Debug, PartialEq)]
pub struct PoolLevelParams {
    /// Produces one logit column per super-node; no activation before the softmax.
    pub assign_gnn: SageLayerParams,
    /// Post-pool GraphSAGE layer, present on the last level.
    pub embed_gnn: Option<SageLayerParams>,
    pub supernodes: usize,
}

impl PoolLevelParams {
    pub fn register(
        store: &mut ParamStore,
        level: usize,
        dim: usize,
        supernodes: usize,
        with_embed: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if supernodes == 0 {
            return Err(Error::Config("super-node count must be positive".into()));
        }
        let assign_gnn = SageLayerParams::register(
            store,
            &format!("pool.{level}.assign.weight"),
            level,
            dim,
            supernodes,
            rng,
        )?;
        let embed_gnn = if with_embed {
            Some(SageLayerParams::register(
                store,
                &format!("pool.{level}.embed.weight"),
                level,
                dim,
                dim,
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            assign_gnn,
            embed_gnn,
            supernodes,
        })
    }
}

/// Output of [`coarsen`].
#[derive(Clone, Copy, Debug)]
pub struct CoarsenedGraph {
    pub features: Var,
    pub adjacency: Var,
    pub assignment: Var,
}

/// `S = softmax_rows(assign_gnn(A, H))`.
pub fn assign(
    tape: &mut Tape,
    bound: &Bound,
    params: &PoolLevelParams,
    features: Var,
    aggregator: Var,
) -> Result<Var> {
    if params.assign_gnn.d_out != params.supernodes {
        return Err(Error::Config(format!(
            "assignment GNN emits {} columns, expected {} super-nodes",
            params.assign_gnn.d_out, params.supernodes
        )));
    }
    let logits = sage_layer(
        tape,
        bound,
        &params.assign_gnn,
        features,
        aggregator,
        Activation::Identity,
    )?;
    Ok(tape.softmax_rows(logits))
}

/// `H' = SᵀH`, `A' = SᵀAS`.
pub fn coarsen(tape: &mut Tape, s: Var, features: Var, adjacency: Var) -> Result<CoarsenedGraph> {
    let (n, k) = tape.value(s).dims();
    if tape.value(features).rows() != n {
        return Err(Error::dim("coarsen features", tape.value(features).shape(), &[n, k]));
    }
    if tape.value(adjacency).dims() != (n, n) {
        return Err(Error::dim("coarsen adjacency", tape.value(adjacency).shape(), &[n, n]));
    }
    let st = tape.transpose(s);
    let h = tape.matmul(st, features)?;
    let sta = tape.matmul(st, adjacency)?;
    let a = tape.matmul(sta, s)?;
    Ok(CoarsenedGraph {
        features: h,
        adjacency: a,
        assignment: s,
    })
}

/// `(‖A − SSᵀ‖_F / n², (1/n) Σ_v H(S_v))` with natural-log entropy.
pub fn pool_aux_loss(tape: &mut Tape, s: Var, adjacency: Var) -> Result<(Var, Var)> {
    let n = tape.value(s).rows();
    if tape.value(adjacency).dims() != (n, n) {
        return Err(Error::dim("pool_aux_loss", tape.value(adjacency).shape(), &[n, n]));
    }
    let st = tape.transpose(s);
    let sst = tape.matmul(s, st)?;
    let diff = tape.sub(adjacency, sst)?;
    let sq = tape.frobenius_sq(diff);
    let norm = tape.sqrt(sq);
    let link = tape.scale(norm, 1.0 / (n * n) as f64);
    let plogp = tape.xlogx(s);
    let total = tape.sum_all(plogp);
    let entropy = tape.scale(total, -1.0 / n as f64);
    Ok((link, entropy))
}

#[derive(Clone, Debug)]
pub struct PoolOutput {
    /// `H^(L)`: features after the post-pool SAGE layer.
    pub features: Var,
    pub link_loss: Var,
    pub entropy_loss: Var,
    pub assignments: Vec<Var>,
}

/// Runs every pooling level, then the last level's post-pool SAGE layer.
/// Auxiliary losses are summed over levels.
pub fn pool_forward(
    tape: &mut Tape,
    bound: &Bound,
    levels: &[PoolLevelParams],
    h0: Var,
    adjacency: Var,
    aggregator: Var,
) -> Result<PoolOutput> {
    let last = levels
        .last()
        .ok_or_else(|| Error::Config("at least one pooling level is required".into()))?;
    let embed = last
        .embed_gnn
        .as_ref()
        .ok_or_else(|| Error::Config("last pooling level needs a post-pool layer".into()))?;
    let mut h = h0;
    let mut a = adjacency;
    let mut agg = aggregator;
    let mut link_terms = Vec::new();
    let mut entropy_terms = Vec::new();
    let mut assignments = Vec::new();
    for level in levels {
        let s = assign(tape, bound, level, h, agg)?;
        let (link, entropy) = pool_aux_loss(tape, s, a)?;
        link_terms.push(link);
        entropy_terms.push(entropy);
        let coarse = coarsen(tape, s, h, a)?;
        assignments.push(s);
        h = coarse.features;
        a = coarse.adjacency;
        agg = tape.constant(mean_aggregator(tape.value(a)));
    }
    let features = sage_layer(tape, bound, embed, h, agg, Activation::Relu)?;
    let link_loss = sum_scalars(tape, &link_terms)?;
    let entropy_loss = sum_scalars(tape, &entropy_terms)?;
    Ok(PoolOutput {
        features,
        link_loss,
        entropy_loss,
        assignments,
    })
}

fn sum_scalars(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = tape.add(acc, *t)?;
    }
    Ok(acc)
}

/// Super-node count at each level: `supernodes` first, then halving (at least 1).
pub fn level_sizes(supernodes: usize, levels: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(levels);
    let mut k = supernodes;
    for _ in 0..levels {
        sizes.push(k.max(1));
        k = k.div_ceil(2);
    }
    sizes
}

/// Plain evaluation of `SᵀH` and `SᵀAS` on tensors.
pub fn coarsen_values(s: &Tensor, h: &Tensor, a: &Tensor) -> (Tensor, Tensor) {
    let st = s.transpose();
    (st.matmul(h), st.matmul(a).matmul(s))
}
