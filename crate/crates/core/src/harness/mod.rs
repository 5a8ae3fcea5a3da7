//! Synthetic corpora, training and evaluation.

mod dataset;
mod experiment;
mod metrics;

pub use dataset::{
    check_disjoint, generate_dataset, generate_sample, generate_split, sample_specs, simulate_empty_scene, simulate_scene,
    Calibration, Dataset, DatasetConfig, DatasetPair, Environment, Sample, SampleSpec, Scene, Split,
};
pub use experiment::{
    ablation, bench_inference, detect_window, detector_sweep, empty_window, evaluate, format_ablation, motion_window,
    predict_all, train_network, AblationRow, DetectorSweep, LatencyStats,
};
pub use metrics::{eval_detector, ClassMetrics, Confusion, DetectorRates, MetricsReport};
