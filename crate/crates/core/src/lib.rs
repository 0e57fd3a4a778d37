//! Multi-class data description for out-of-distribution detection on
//! tabular data: a from-scratch MLP, the class-conditional Gaussian
//! distance head, a soft-boundary hypersphere variant, comparison
//! baselines, dataset handling and evaluation metrics.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod head;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod soft;
pub mod train;

pub use checkpoint::Checkpoint;
pub use data::{
    load_csv, make_loco_scenarios, LabelColumn, NormalizationMode, ScenarioData, ScenarioSplit, TabularDataset,
};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use metrics::{MetricsReport, ScoreSet};
pub use model::{train_method, Method, TrainOutcome, TrainedModel};
pub use nn::WeightInit;
pub use train::{Architecture, TrainConfig};
