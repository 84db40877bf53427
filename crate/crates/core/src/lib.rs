//! Out-of-distribution detection with the Wasserstein score.
//!
//! A softmax classifier doubles as an OoD scorer: the score of an input is the
//! cheapest optimal-transport cost from the predicted class distribution to a
//! one-hot target, so confident predictions score low and uniform ones high.
//! The classifier is trained against observed OoD samples and, optionally,
//! against a generator that searches for high-score regions of input space.
//!
//! Modules, bottom-up:
//!
//! - [`nn`]: dense networks, backpropagation, Adam, finite-difference oracle.
//! - [`wasserstein`]: cost matrices and the score.
//! - [`data`]: seeded Gaussian-cluster datasets.
//! - [`training`]: the discriminator/generator loop and the WOOD baseline.
//! - [`detection`]: threshold calibration, TPR at fixed TNR, heatmaps.
//! - [`experiment`]: config files, Monte Carlo replications, reports.

pub mod data;
pub mod detection;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod rng;
pub mod training;
pub mod wasserstein;

pub use data::{Dataset, LabeledPoint, Point};
pub use detection::{GridSpec, Heatmap, Threshold};
pub use error::{Error, Result};
pub use experiment::{
    compare_rejection_regions, parse_config, run_experiment, DataSource, ExperimentConfig,
    ExperimentReport, Preset,
};
pub use nn::{Activation, AdamState, Gradients, Mlp, OutputHead};
pub use rng::Rng;
pub use training::{Method, TrainConfig, TrainHistory};
pub use wasserstein::{CostMatrix, ProbVector};
