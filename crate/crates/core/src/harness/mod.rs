//! Command-line front door: datasets, configs, metrics and the commands.

mod commands;
mod config;
mod data;
mod metrics;
mod suites;

pub use commands::{
    bench_csv, bench_report, build_model, cmd_bench, cmd_equiv, cmd_train, cmd_verify, exit_code,
    time_median, BenchRecord, Outcome, CHECKPOINT_DIR, METRICS_FILE, SUMMARY_FILE,
};
pub use config::{BenchSpec, ConfigFile, EquivSpec, KChoice, ModelSpec, TrainSpec, SEED_ENV};
pub use data::{
    centroid_accuracy, gen_synthetic, load_cifar_binary, parse_cifar, DatasetDescriptor,
    DatasetKind, Split, SyntheticSpec, CIFAR100_MEAN, CIFAR100_STD, CIFAR10_MEAN, CIFAR10_STD,
};
pub use metrics::{MetricRecord, RunMetrics, RunSummary, CSV_HEADER};
pub use suites::{equivariance, knn_suite, run_suite, Property, SUITES, VIT_TINY_LAYOUT, VIT_TINY_WIDTH};
