//! Metrics, training loop and experiment runner for the synthetic benchmarks.

mod benchmark;
mod classifier;
mod config;
mod experiment;
mod metrics;
mod plot;
mod train;

pub use benchmark::{
    attach_checks, bench_tail, cell_config, hyper_grid, median, run_benchmark, suite_cells, tuned_hyper, BenchmarkOptions,
    BenchmarkReport, Cell, CellSummary, Check, Hyper, RunRecord, Suite, BENCH_LR, BENCH_LR_DECAY, ID_WEIGHT_GRID, MODE_GRID,
    PAIRED_PROPS, PAIRED_WEIGHT_GRID, STREAM_BASELINE,
};
pub use classifier::{ClassifierSpec, MlpClassifier, CLASSIFIER_HIDDEN};
pub use config::{
    AutoencoderConfig, EvalConfig, ExperimentConfig, LrDecay, LossConfig, Metric, ModelConfig, Orientation, TrainConfig, CONFIG_FORMAT_VERSION,
};
pub use experiment::{domain_adapt_eval, run_experiment, write_outputs, ExperimentOutcome, ExperimentResult, Metrics, TrainedMap};
pub use metrics::{
    likelihood_rel_mse, map_mse, map_mse_of, mog_linear_inverse, relative_density_mse, true_target_density_mog_linear,
};
pub use plot::movement_svg;
pub use train::{train, RunStatus, TrainData, TrainReport, Trainee};
