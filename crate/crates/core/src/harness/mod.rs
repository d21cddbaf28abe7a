//! Experiment drivers: scenario sampling, dataset generation, predictor
//! training, pipeline execution and CSV emission. Every run is a pure
//! function of its settings and the master seed: per-draw random streams are
//! addressed by a label path, so outputs are byte-identical across reruns
//! regardless of thread scheduling.

pub mod config;
pub mod data;
pub mod experiments;
pub mod report;
pub mod scenario;

pub use config::HarnessConfig;
pub use data::generate_dataset;
pub use experiments::{
    prepare_trained_set, run_eta_convergence, run_fitting_experiment, run_imperfect_ratio_sweep,
    run_online_learning, run_optimize_tables, EtaConvergenceResult, FittingResult,
    OnlineLearningResult, RatioSweepResult, TablesResult, TrainedSet,
};
pub use scenario::{DistortionRegime, Scenario, ScenarioSampler};
