//! Flat `key=value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use lgf_core::data::Schema;
use lgf_core::TrainConfig;

pub struct Key {
    pub name: &'static str,
    pub help: &'static str,
    /// Accepted as a bare `--flag`, meaning `true`.
    pub switch: bool,
}

const fn key(name: &'static str, help: &'static str) -> Key {
    Key { name, help, switch: false }
}

pub const KEYS: &[Key] = &[
    key("window_length", "samples per window"),
    key("stride", "step between window starts"),
    key("corr_threshold", "correlation magnitude below which edges are dropped"),
    key("lstm_hidden", "LSTM hidden width"),
    key("sage_dim", "GraphSAGE output width"),
    key("sage_layers", "number of GraphSAGE layers"),
    key("supernodes", "super-nodes at the first pooling level"),
    key("pool_levels", "number of pooling levels"),
    key("alpha_pool", "weight of the pooling auxiliary loss"),
    key("lr", "Adam learning rate"),
    key("batch", "mini-batch size"),
    key("epochs", "training epochs"),
    key("seed", "seed for every random stream"),
    key("ablation", "full, no_gf, no_lstm, sage_only or sage_lstm"),
    key("gf_dim", "global-feature MLP output width"),
    key("head_hidden", "classification head hidden width"),
    key("forget_bias", "initial LSTM forget-gate bias"),
    key("threads", "worker threads; 1 is bitwise reproducible"),
    key("train_data", "training CSV (train, ablate, inspect-graph)"),
    key("test_data", "test CSV (eval, ablate)"),
    key("label_column", "CSV column holding the 1-based class"),
    key("run_column", "CSV column holding the run id"),
    key("variable_columns", "comma-separated variable columns; empty means all others"),
    key("ignore_columns", "comma-separated columns skipped when inferring variables"),
    key("max_runs_per_class", "use at most this many runs per class; 0 means all"),
    key("out_dir", "directory for every output file"),
    key("checkpoint", "model checkpoint path"),
    key("tolerance", "largest relative gradient error gradcheck accepts"),
    key("step", "finite-difference step for gradcheck"),
    key("window_index", "window exported by inspect-graph"),
    Key { name: "export_assignments", help: "eval: write pooling assignments", switch: true },
    Key { name: "export_embeddings", help: "eval: write fused embeddings", switch: true },
    key("synth_classes", "synthetic classes"),
    key("synth_variables", "synthetic variables"),
    key("synth_runs_per_class", "synthetic runs per class"),
    key("synth_test_runs", "runs per class written to the test file"),
    key("synth_run_length", "samples per synthetic run"),
    key("synth_noise", "std of the synthetic white noise"),
];

/// Where a value came from, for error messages.
#[derive(Clone, Debug, PartialEq)]
pub enum Origin {
    File { path: PathBuf, line: usize },
    CommandLine,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File { path, line } => write!(f, "{}:{line}", path.display()),
            Origin::CommandLine => f.write_str("command line"),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown key `{key}` ({origin})")]
    UnknownKey { key: String, origin: Origin },
    #[error("invalid value `{value}` for `{key}` ({origin}): {message}")]
    Invalid {
        key: String,
        value: String,
        origin: Origin,
        message: String,
    },
    #[error("{path}:{line}: expected `key=value`, got `{text}`")]
    Syntax { path: PathBuf, line: usize, text: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("{0}")]
    Rejected(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub schema: Schema,
    pub max_runs_per_class: usize,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub tolerance: f64,
    pub step: f64,
    pub window_index: usize,
    pub export_assignments: bool,
    pub export_embeddings: bool,
    pub synth_classes: usize,
    pub synth_variables: usize,
    pub synth_runs_per_class: usize,
    pub synth_test_runs: usize,
    pub synth_run_length: usize,
    pub synth_noise: f64,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::with_epochs(100),
            train_data: None,
            test_data: None,
            schema: Schema::default(),
            max_runs_per_class: 0,
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            tolerance: 1e-4,
            step: 1e-5,
            window_index: 0,
            export_assignments: false,
            export_embeddings: false,
            synth_classes: 4,
            synth_variables: 10,
            synth_runs_per_class: 6,
            synth_test_runs: 1,
            synth_run_length: 200,
            synth_noise: 0.1,
        }
    }
}

fn parse<T: std::str::FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| e.to_string())
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl CliConfig {
    /// Assigns one key. `Ok(false)` means the key is unknown.
    fn set(&mut self, key: &str, value: &str) -> Result<bool, String> {
        let t = &mut self.train;
        match key {
            "window_length" => t.window_length = parse(value)?,
            "stride" => t.stride = parse(value)?,
            "corr_threshold" => t.corr_threshold = parse(value)?,
            "lstm_hidden" => t.lstm_hidden = parse(value)?,
            "sage_dim" => t.sage_dim = parse(value)?,
            "sage_layers" => t.sage_layers = parse(value)?,
            "supernodes" => t.supernodes = parse(value)?,
            "pool_levels" => t.pool_levels = parse(value)?,
            "alpha_pool" => t.alpha_pool = parse(value)?,
            "lr" => t.lr = parse(value)?,
            "batch" => t.batch = parse(value)?,
            "epochs" => t.epochs = parse(value)?,
            "seed" => t.seed = parse(value)?,
            "ablation" => t.ablation = parse(value)?,
            "gf_dim" => t.gf_dim = parse(value)?,
            "head_hidden" => t.head_hidden = parse(value)?,
            "forget_bias" => t.forget_bias = parse(value)?,
            "threads" => t.threads = parse(value)?,
            "train_data" => self.train_data = optional_path(value),
            "test_data" => self.test_data = optional_path(value),
            "label_column" => self.schema.label_column = value.trim().to_string(),
            "run_column" => self.schema.run_column = value.trim().to_string(),
            "variable_columns" => self.schema.variable_columns = list(value),
            "ignore_columns" => self.schema.ignore_columns = list(value),
            "max_runs_per_class" => self.max_runs_per_class = parse(value)?,
            "out_dir" => {
                self.out_dir = optional_path(value).ok_or("output directory cannot be empty")?
            }
            "checkpoint" => self.checkpoint = optional_path(value),
            "tolerance" => self.tolerance = parse(value)?,
            "step" => self.step = parse(value)?,
            "window_index" => self.window_index = parse(value)?,
            "export_assignments" => self.export_assignments = parse_bool(value)?,
            "export_embeddings" => self.export_embeddings = parse_bool(value)?,
            "synth_classes" => self.synth_classes = parse(value)?,
            "synth_variables" => self.synth_variables = parse(value)?,
            "synth_runs_per_class" => self.synth_runs_per_class = parse(value)?,
            "synth_test_runs" => self.synth_test_runs = parse(value)?,
            "synth_run_length" => self.synth_run_length = parse(value)?,
            "synth_noise" => self.synth_noise = parse(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Current value of `key` in the file syntax.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "window_length" => t.window_length.to_string(),
            "stride" => t.stride.to_string(),
            "corr_threshold" => t.corr_threshold.to_string(),
            "lstm_hidden" => t.lstm_hidden.to_string(),
            "sage_dim" => t.sage_dim.to_string(),
            "sage_layers" => t.sage_layers.to_string(),
            "supernodes" => t.supernodes.to_string(),
            "pool_levels" => t.pool_levels.to_string(),
            "alpha_pool" => t.alpha_pool.to_string(),
            "lr" => t.lr.to_string(),
            "batch" => t.batch.to_string(),
            "epochs" => t.epochs.to_string(),
            "seed" => t.seed.to_string(),
            "ablation" => t.ablation.to_string(),
            "gf_dim" => t.gf_dim.to_string(),
            "head_hidden" => t.head_hidden.to_string(),
            "forget_bias" => t.forget_bias.to_string(),
            "threads" => t.threads.to_string(),
            "train_data" => show_path(&self.train_data),
            "test_data" => show_path(&self.test_data),
            "label_column" => self.schema.label_column.clone(),
            "run_column" => self.schema.run_column.clone(),
            "variable_columns" => self.schema.variable_columns.join(","),
            "ignore_columns" => self.schema.ignore_columns.join(","),
            "max_runs_per_class" => self.max_runs_per_class.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "checkpoint" => show_path(&self.checkpoint),
            "tolerance" => self.tolerance.to_string(),
            "step" => self.step.to_string(),
            "window_index" => self.window_index.to_string(),
            "export_assignments" => self.export_assignments.to_string(),
            "export_embeddings" => self.export_embeddings.to_string(),
            "synth_classes" => self.synth_classes.to_string(),
            "synth_variables" => self.synth_variables.to_string(),
            "synth_runs_per_class" => self.synth_runs_per_class.to_string(),
            "synth_test_runs" => self.synth_test_runs.to_string(),
            "synth_run_length" => self.synth_run_length.to_string(),
            "synth_noise" => self.synth_noise.to_string(),
            _ => return None,
        })
    }

    pub fn apply(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        match self.set(key, value) {
            Ok(true) => Ok(()),
            Ok(false) => Err(ConfigError::UnknownKey {
                key: key.to_string(),
                origin,
            }),
            Err(message) => Err(ConfigError::Invalid {
                key: key.to_string(),
                value: value.trim().to_string(),
                origin,
                message,
            }),
        }
    }

    /// Every key in file syntax; parsing this text reproduces `self`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            out.push_str(k.name);
            out.push('=');
            out.push_str(&self.get(k.name).unwrap_or_default());
            out.push('\n');
        }
        out
    }

    pub fn require_train_data(&self) -> Result<&Path, ConfigError> {
        self.train_data.as_deref().ok_or(ConfigError::Missing("train_data"))
    }

    pub fn require_test_data(&self) -> Result<&Path, ConfigError> {
        self.test_data.as_deref().ok_or(ConfigError::Missing("test_data"))
    }

    pub fn require_checkpoint(&self) -> Result<&Path, ConfigError> {
        self.checkpoint.as_deref().ok_or(ConfigError::Missing("checkpoint"))
    }
}

/// Applies `text` (one `key=value` per line, `#` comments) on top of `config`.
pub fn apply_text(config: &mut CliConfig, text: &str, path: &Path) -> Result<(), ConfigError> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                path: path.to_path_buf(),
                line: i + 1,
                text: line.to_string(),
            });
        };
        let origin = Origin::File {
            path: path.to_path_buf(),
            line: i + 1,
        };
        config.apply(key.trim(), value, origin)?;
    }
    Ok(())
}

/// Defaults, then the file at `path` if any, then `overrides` in order.
pub fn parse_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<CliConfig, ConfigError> {
    let mut config = CliConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        apply_text(&mut config, &text, path)?;
    }
    for (key, value) in overrides {
        config.apply(key, value, Origin::CommandLine)?;
    }
    config
        .train
        .validate()
        .map_err(|e| ConfigError::Rejected(e.to_string()))?;
    Ok(config)
}
