pub mod calibration;
pub mod error;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod oracles;
pub mod permutation;
pub mod synthlab;

pub use calibration::{
    calibrate_aggregate, calibrate_scalar, AggregateCalibrationResult, Aggregator, CalibrationConfig,
    CalibrationResult,
};
pub use error::{Error, Result};
pub use matrix::{center, EmbeddingMatrix, LayerStack};
pub use metrics::{MetricSpec, Similarity};
pub use permutation::{apply_permutation, Permutation, PermutationPlan};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/synthlab.md")]
    mod synthlab {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
