use std::fmt::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{check_disjoint, mix, simulate_empty_scene, simulate_scene, Dataset, DatasetConfig, SampleSpec};
use super::metrics::{eval_detector, DetectorRates, MetricsReport};
use crate::channel::{Activity, FrameMatrix};
use crate::dsp::{detect_motion, fast_time_std, DetectorConfig};
use crate::error::{Error, Result};
use crate::nn::{train, Branches, Example, Network, NetworkSpec, Scalar, TrainConfig, TrainReport, NUM_CLASSES};

pub fn predict_all<T: Scalar>(net: &Network<T>, examples: &[Example<T>]) -> Result<Vec<usize>> {
    examples.par_iter().map(|e| net.predict(&e.time, &e.freq)).collect()
}

pub fn evaluate<T: Scalar>(net: &Network<T>, data: &Dataset) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let examples = data.examples::<T>();
    let predicted = predict_all(net, &examples)?;
    let truth: Vec<usize> = examples.iter().map(|e| e.label).collect();
    MetricsReport::from_predictions(NUM_CLASSES, &truth, &predicted)
}

/// Trains a freshly initialised network on `data`.
pub fn train_network(
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    init_seed: u64,
    data: &[Example<f32>],
    on_epoch: impl FnMut(usize, f64),
) -> Result<(Network<f32>, TrainReport)> {
    let mut net = Network::new(spec.clone(), init_seed)?;
    let report = train(&mut net, data, cfg, on_epoch)?;
    Ok((net, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub params: usize,
    pub report: MetricsReport,
}

/// Trains fused, time-only and frequency-only networks on the same data with the same seeds.
pub fn ablation(
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    init_seed: u64,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<Vec<AblationRow>> {
    check_disjoint(&train_set.environment_ids(), &test_set.environment_ids())?;
    let train_examples = train_set.examples::<f32>();
    [("fused", Branches::Both), ("time_only", Branches::TimeOnly), ("freq_only", Branches::FreqOnly)]
        .into_iter()
        .map(|(name, branches)| {
            let restricted = spec.restricted(branches);
            let (net, _) = train_network(&restricted, cfg, init_seed, &train_examples, |_, _| {})?;
            Ok(AblationRow { name: name.to_string(), params: net.param_count(), report: evaluate(&net, test_set)? })
        })
        .collect()
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{:<10} {:>9} {:>9} {:>9}", "config", "params", "macro_f1", "accuracy").unwrap();
    for r in rows {
        writeln!(out, "{:<10} {:>9} {:>9.4} {:>9.4}", r.name, r.params, r.report.macro_f1, r.report.accuracy).unwrap();
    }
    out
}

/// Runs the detector on one preprocessed window.
pub fn detect_window(window: &FrameMatrix, det: &DetectorConfig) -> Result<bool> {
    let cfg = DetectorConfig { window_frames: window.frames(), ..*det };
    Ok(detect_motion(&fast_time_std(window, &cfg)?, &cfg)?.detected)
}

/// Preprocessed window of `activity` starting at `range_m` in environment `env_id`.
pub fn motion_window(cfg: &DatasetConfig, env_id: u32, activity: Activity, range_m: f64, seed: u64) -> Result<FrameMatrix> {
    let env = cfg.environment(env_id);
    let spec = SampleSpec { activity, environment_id: env_id, index: 0, seed };
    simulate_scene(cfg, &env, &spec, Some(range_m))?.window()
}

/// Preprocessed window of an empty room.
pub fn empty_window(cfg: &DatasetConfig, env_id: u32, seed: u64) -> Result<FrameMatrix> {
    simulate_empty_scene(cfg, &cfg.environment(env_id), seed)?.window()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSweep {
    /// `(range_m, tpr)` per tested range.
    pub per_range: Vec<(f64, f64)>,
    pub rates: DetectorRates,
}

/// Every activity at every range in every environment (`repeats` seeds each), plus `empty`
/// windows of empty rooms spread over the environments.
pub fn detector_sweep(
    cfg: &DatasetConfig,
    det: &DetectorConfig,
    environments: &[u32],
    ranges: &[f64],
    repeats: usize,
    empty: usize,
) -> Result<DetectorSweep> {
    if environments.is_empty() {
        return Err(Error::invalid("detector sweep needs an environment"));
    }
    let mut jobs = Vec::new();
    for (ri, &range) in ranges.iter().enumerate() {
        for &env in environments {
            for activity in Activity::ALL {
                for r in 0..repeats {
                    jobs.push((Some((ri, range, activity)), env, mix(&[cfg.seed, 0xD7, ri as u64, env as u64, activity.index() as u64, r as u64])));
                }
            }
        }
    }
    for i in 0..empty {
        let env = environments[i % environments.len()];
        jobs.push((None, env, mix(&[cfg.seed, 0xE0, i as u64])));
    }
    let outcomes: Vec<(Option<usize>, bool)> = jobs
        .par_iter()
        .map(|(motion, env, seed)| match motion {
            Some((ri, range, activity)) => {
                Ok((Some(*ri), detect_window(&motion_window(cfg, *env, *activity, *range, *seed)?, det)?))
            }
            None => Ok((None, detect_window(&empty_window(cfg, *env, *seed)?, det)?)),
        })
        .collect::<Result<_>>()?;
    let per_range = ranges
        .iter()
        .enumerate()
        .map(|(ri, &range)| {
            let hits: Vec<bool> = outcomes.iter().filter(|o| o.0 == Some(ri)).map(|o| o.1).collect();
            (range, hits.iter().filter(|h| **h).count() as f64 / hits.len().max(1) as f64)
        })
        .collect();
    let labelled: Vec<(bool, bool)> = outcomes.iter().map(|(m, d)| (m.is_some(), *d)).collect();
    Ok(DetectorSweep { per_range, rates: eval_detector(&labelled)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub runs: usize,
    pub min_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    pub mean_s: f64,
}

impl LatencyStats {
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("no latency samples"));
        }
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let at = |q: f64| samples[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
        Ok(LatencyStats {
            runs: n,
            min_s: samples[0],
            median_s: at(0.5),
            p95_s: at(0.95),
            mean_s: samples.iter().sum::<f64>() / n as f64,
        })
    }

    pub fn summary(&self) -> String {
        format!(
            "runs {} min {:.3} ms median {:.3} ms p95 {:.3} ms mean {:.3} ms",
            self.runs,
            self.min_s * 1e3,
            self.median_s * 1e3,
            self.p95_s * 1e3,
            self.mean_s * 1e3
        )
    }
}

/// Wall-clock time of `runs` sequential single-sample inferences, after a few warm-up runs.
pub fn bench_inference(net: &Network<f32>, example: &Example<f32>, runs: usize) -> Result<LatencyStats> {
    for _ in 0..runs.min(10) {
        net.forward(&example.time, &example.freq)?;
    }
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let p = net.forward(&example.time, &example.freq)?;
        samples.push(start.elapsed().as_secs_f64());
        std::hint::black_box(p);
    }
    LatencyStats::from_samples(samples)
}
