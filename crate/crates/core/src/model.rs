//! Full model assembly and single-window forward passes.

use rand::Rng;

use crate::autodiff::{Bound, ParamStore, Tape, Tensor, Var};
use crate::config::{Ablation, TrainConfig};
use crate::data::{NormStats, WindowedSample};
use crate::error::{Error, Result};
use crate::fusion::{argmax, fuse_and_predict, mlp_forward, MlpParams};
use crate::graph::build_snapshot;
use crate::lstm::{encode_window, LstmParams};
use crate::pool::{level_sizes, pool_forward, PoolLevelParams};
use crate::rng;
use crate::sage::{encode_spatial, mean_aggregator, SageLayerParams};

/// Θ: every trainable tensor plus the structure that addresses it.
#[derive(Clone, Debug)]
pub struct ModelParameters {
    pub config: TrainConfig,
    pub nodes: usize,
    pub classes: usize,
    pub store: ParamStore,
    pub lstm: Option<LstmParams>,
    /// Affine `w → F` map of raw segments, used when the LSTM is ablated.
    pub projection: Option<MlpParams>,
    pub sage: Vec<SageLayerParams>,
    pub pool: Vec<PoolLevelParams>,
    pub gf_mlp: Option<MlpParams>,
    pub head_mlp: MlpParams,
    /// Normalization fit on the training data, carried for evaluation.
    pub norm: Option<NormStats>,
}

impl ModelParameters {
    /// Seeded initialization from the `init` stream of `config.seed`.
    pub fn init(config: &TrainConfig, nodes: usize, classes: usize) -> Result<Self> {
        config.validate()?;
        if nodes == 0 {
            return Err(Error::Config("graph needs at least one node".into()));
        }
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        let mut rng = rng::stream(config.seed, "init", 0);
        let mut store = ParamStore::new();
        let ablation = config.ablation;
        let f = config.lstm_hidden;
        let d = config.sage_dim;

        let (lstm, projection) = if ablation.uses_lstm() {
            let p = LstmParams::register(&mut store, "lstm", f, config.forget_bias, &mut rng)?;
            (Some(p), None)
        } else {
            let p = MlpParams::register(&mut store, "projection", &[config.window_length, f], &mut rng)?;
            (None, Some(p))
        };

        let mut sage = Vec::new();
        for g in 0..config.sage_layers {
            let d_in = if g == 0 { f } else { d };
            sage.push(SageLayerParams::register(
                &mut store,
                &format!("sage.{g}.weight"),
                g,
                d_in,
                d,
                &mut rng,
            )?);
        }

        let mut pool = Vec::new();
        let head_input = if ablation.uses_pooling() {
            let sizes = level_sizes(config.supernodes, config.pool_levels);
            for (l, &k) in sizes.iter().enumerate() {
                let last = l + 1 == sizes.len();
                pool.push(PoolLevelParams::register(&mut store, l, d, k, last, &mut rng)?);
            }
            sizes.last().unwrap() * d
        } else {
            d
        };

        let gf_mlp = if ablation.uses_global_features() {
            Some(MlpParams::register(&mut store, "gf", &[d, d, config.gf_dim], &mut rng)?)
        } else {
            None
        };
        let head_input = head_input + if gf_mlp.is_some() { nodes * config.gf_dim } else { 0 };
        let head_mlp = MlpParams::register(
            &mut store,
            "head",
            &[head_input, config.head_hidden, classes],
            &mut rng,
        )?;

        Ok(Self {
            config: config.clone(),
            nodes,
            classes,
            store,
            lstm,
            projection,
            sage,
            pool,
            gf_mlp,
            head_mlp,
            norm: None,
        })
    }

    /// Draws every bias uniformly from `±scale`. Zero biases put ReLU inputs
    /// exactly on the kink for rows that are entirely zero, where central
    /// differences are meaningless; gradient checks start from here instead.
    pub fn randomize_biases(&mut self, scale: f64, seed: u64) {
        let mut rng = rng::stream(seed, "bias", 0);
        for (name, t) in self.store.iter_mut() {
            let is_bias = name.ends_with(".bias") || name.starts_with("lstm.b_");
            if is_bias {
                t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
            }
        }
    }

    /// Width of the vector fed to the classification head.
    pub fn fused_width(&self) -> usize {
        self.head_mlp.input_dim()
    }

    pub fn ablation(&self) -> Ablation {
        self.config.ablation
    }
}

/// Tape handles produced by [`forward_sample`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    pub fused: Var,
    /// Summed link and entropy losses over pooling levels; `None` without pooling.
    pub pool_loss: Option<Var>,
    pub link_loss: Option<Var>,
    pub entropy_loss: Option<Var>,
    pub assignments: Vec<Var>,
}

/// Snapshot adjacency for `window` under the model's threshold.
pub fn window_adjacency(params: &ModelParameters, window: &WindowedSample) -> Result<Tensor> {
    Ok(build_snapshot(window, params.config.corr_threshold)?.adjacency)
}

/// Forward pass of one window with a precomputed adjacency.
pub fn forward_with_adjacency(
    tape: &mut Tape,
    bound: &Bound,
    params: &ModelParameters,
    window: &WindowedSample,
    adjacency: &Tensor,
) -> Result<ForwardOutput> {
    let (w, n) = window.segment.dims();
    if n != params.nodes {
        return Err(Error::Config(format!(
            "window has {n} variables, model expects {}",
            params.nodes
        )));
    }
    if adjacency.dims() != (n, n) {
        return Err(Error::dim("adjacency", adjacency.shape(), &[n, n]));
    }
    let features = match (&params.lstm, &params.projection) {
        (Some(lstm), _) => {
            let weights = lstm.bind(tape, bound)?;
            encode_window(tape, &weights, &window.segment)?
        }
        (None, Some(proj)) => {
            if w != proj.input_dim() {
                return Err(Error::Config(format!(
                    "window length {w} differs from the model's {}",
                    proj.input_dim()
                )));
            }
            let raw = tape.constant(window.segment.transpose());
            mlp_forward(tape, bound, proj, raw)?
        }
        (None, None) => return Err(Error::Config("model has no temporal encoder".into())),
    };
    let aggregator = tape.constant(mean_aggregator(adjacency));
    let h0 = encode_spatial(tape, bound, &params.sage, features, aggregator)?;

    if params.pool.is_empty() {
        let readout = tape.constant(Tensor::filled(&[1, n], 1.0 / n as f64));
        let pooled = tape.matmul(readout, h0)?;
        let logits = mlp_forward(tape, bound, &params.head_mlp, pooled)?;
        return Ok(ForwardOutput {
            logits,
            fused: pooled,
            pool_loss: None,
            link_loss: None,
            entropy_loss: None,
            assignments: Vec::new(),
        });
    }

    let a = tape.constant(adjacency.clone());
    let pooled = pool_forward(tape, bound, &params.pool, h0, a, aggregator)?;
    let out = fuse_and_predict(
        tape,
        bound,
        h0,
        pooled.features,
        params.gf_mlp.as_ref(),
        &params.head_mlp,
    )?;
    let pool_loss = tape.add(pooled.link_loss, pooled.entropy_loss)?;
    Ok(ForwardOutput {
        logits: out.logits,
        fused: out.fused,
        pool_loss: Some(pool_loss),
        link_loss: Some(pooled.link_loss),
        entropy_loss: Some(pooled.entropy_loss),
        assignments: pooled.assignments,
    })
}

/// Builds the window's graph and runs the forward pass.
pub fn forward_sample(
    tape: &mut Tape,
    bound: &Bound,
    params: &ModelParameters,
    window: &WindowedSample,
) -> Result<ForwardOutput> {
    let adjacency = window_adjacency(params, window)?;
    forward_with_adjacency(tape, bound, params, window, &adjacency)
}

/// Values of one evaluation forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// 1-based predicted class.
    pub class: usize,
    pub logits: Vec<f64>,
    pub fused: Vec<f64>,
    pub assignments: Vec<Tensor>,
}

pub fn predict(params: &ModelParameters, window: &WindowedSample) -> Result<Prediction> {
    let mut tape = Tape::new();
    let bound = params.store.bind(&mut tape);
    let out = forward_sample(&mut tape, &bound, params, window)?;
    let logits = tape.value(out.logits).data().to_vec();
    Ok(Prediction {
        class: argmax(&logits),
        logits,
        fused: tape.value(out.fused).data().to_vec(),
        assignments: out.assignments.iter().map(|s| tape.value(*s).clone()).collect(),
    })
}
