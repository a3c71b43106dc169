//! Training hyperparameters and model variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which parts of the architecture are wired in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// LSTM, SAGE, pooling, global features.
    Full,
    /// Head sees the pooled features only.
    NoGf,
    /// A trainable affine projection of each raw segment replaces the LSTM.
    NoLstm,
    /// Projection, SAGE, mean readout.
    SageOnly,
    /// LSTM, SAGE, mean readout.
    SageLstm,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoGf,
        Ablation::NoLstm,
        Ablation::SageOnly,
        Ablation::SageLstm,
    ];

    /// Column order of the ablation table.
    pub const TABLE_ORDER: [Ablation; 5] = [
        Ablation::SageOnly,
        Ablation::SageLstm,
        Ablation::NoGf,
        Ablation::NoLstm,
        Ablation::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoGf => "no_gf",
            Ablation::NoLstm => "no_lstm",
            Ablation::SageOnly => "sage_only",
            Ablation::SageLstm => "sage_lstm",
        }
    }

    /// Column label used in the ablation table.
    pub fn title(self) -> &'static str {
        match self {
            Ablation::Full => "LGF-MLTG",
            Ablation::NoGf => "without GF",
            Ablation::NoLstm => "without LSTM",
            Ablation::SageOnly => "GraphSAGE",
            Ablation::SageLstm => "GraphSAGE with LSTM",
        }
    }

    pub fn uses_lstm(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoGf | Ablation::SageLstm)
    }

    pub fn uses_pooling(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoGf | Ablation::NoLstm)
    }

    pub fn uses_global_features(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoLstm)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub window_length: usize,
    pub stride: usize,
    pub corr_threshold: f64,
    pub lstm_hidden: usize,
    pub sage_dim: usize,
    pub sage_layers: usize,
    pub supernodes: usize,
    pub pool_levels: usize,
    pub alpha_pool: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    /// Output width of the global-feature MLP.
    pub gf_dim: usize,
    pub head_hidden: usize,
    pub forget_bias: f64,
    pub threads: usize,
}

impl TrainConfig {
    /// Full-scale settings. The epoch count has no default.
    pub fn with_epochs(epochs: usize) -> Self {
        Self {
            window_length: 100,
            stride: 1,
            corr_threshold: 0.5,
            lstm_hidden: 64,
            sage_dim: 64,
            sage_layers: 2,
            supernodes: 8,
            pool_levels: 1,
            alpha_pool: 0.1,
            lr: 0.003,
            batch: 32,
            epochs,
            seed: 0,
            ablation: Ablation::Full,
            gf_dim: 64,
            head_hidden: 128,
            forget_bias: 1.0,
            threads: 1,
        }
    }

    /// Small dimensions for quick experiments: `F = d = gf_dim = 16`, head width 32.
    pub fn desk(epochs: usize) -> Self {
        Self {
            lstm_hidden: 16,
            sage_dim: 16,
            gf_dim: 16,
            head_hidden: 32,
            ..Self::with_epochs(epochs)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window_length", self.window_length),
            ("stride", self.stride),
            ("lstm_hidden", self.lstm_hidden),
            ("sage_dim", self.sage_dim),
            ("sage_layers", self.sage_layers),
            ("supernodes", self.supernodes),
            ("pool_levels", self.pool_levels),
            ("batch", self.batch),
            ("gf_dim", self.gf_dim),
            ("head_hidden", self.head_hidden),
            ("threads", self.threads),
        ];
        for (key, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("`{key}` must be positive")));
            }
        }
        if self.window_length < 2 {
            return Err(Error::Config("`window_length` must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.corr_threshold) {
            return Err(Error::Config(format!(
                "`corr_threshold` must lie in [0, 1), got {}",
                self.corr_threshold
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("`lr` must be positive, got {}", self.lr)));
        }
        if !(self.alpha_pool.is_finite() && self.alpha_pool >= 0.0) {
            return Err(Error::Config(format!(
                "`alpha_pool` must be nonnegative, got {}",
                self.alpha_pool
            )));
        }
        if !self.forget_bias.is_finite() {
            return Err(Error::Config("`forget_bias` must be finite".into()));
        }
        Ok(())
    }
}
