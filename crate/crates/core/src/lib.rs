pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod init;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod pool;
pub mod rng;
pub mod sage;
pub mod train;

pub use config::{Ablation, TrainConfig};
pub use error::{Error, Result};
pub use model::ModelParameters;
