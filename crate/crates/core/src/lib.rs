//! Risk-controlled routing between a thinking model and a cheaper
//! non-thinking model, with per-group guarantees.

pub mod calibration;
pub mod clustering;
pub mod data;
pub mod error;
pub mod estimator;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod simulation;

pub use calibration::{
    calibrate_gpac, calibrate_marginal, route, Action, Assigner, Calibration, CalibrationTarget,
    GroupKey, Mode, RoutingPolicy, Threshold,
};
pub use clustering::{
    calibrate, calibrate_cpac, kmeans_1d, partition_gap, ClusterConfig, ClusterMode, Grouping,
    Partition,
};
pub use data::{LossKind, LossSpec, Record, ResolvedRecord};
pub use error::{Error, Result};
pub use estimator::{EstimatorConfig, UcbMethod};
pub use metrics::{MetricsReport, StpVariant};
pub use simulation::{
    coverage_experiment, CoverageReport, ExperimentConfig, SimMethod, SyntheticSpec,
};
