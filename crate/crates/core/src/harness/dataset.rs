//! Environment-disjoint synthetic corpora.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    simulate_activity, Activity, FrameMatrix, MotionProfile, NoiseModel, PathModel, RadioConfig, ScriptParams,
};
use crate::dsp::Preprocessor;
use crate::error::{Error, Result};
use crate::features::{featurize, Spectrogram, WINDOW_FRAMES};
use crate::nn::{Example, Scalar, Tensor};

/// Maps the radio's transmit power to reflector amplitudes and noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Calibration {
    /// Complex noise power `E|n|²`.
    pub noise_variance: f64,
    /// Torso SNR at 1 m; the amplitude falls off as `1/R²`.
    pub snr_db_at_1m: f64,
    /// Per-environment spread of the noise power, ± dB.
    pub noise_spread_db: f64,
    pub jitter_min_rad: f64,
    pub jitter_max_rad: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            noise_variance: 1e-5,
            snr_db_at_1m: 50.0,
            noise_spread_db: 3.0,
            jitter_min_rad: 0.1,
            jitter_max_rad: 0.3,
        }
    }
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        if self.noise_variance.is_nan() || self.noise_variance <= 0.0 || !self.snr_db_at_1m.is_finite() || self.noise_spread_db < 0.0 {
            return Err(Error::invalid("calibration needs positive noise variance and finite SNR"));
        }
        if !(0.0 <= self.jitter_min_rad && self.jitter_min_rad <= self.jitter_max_rad) {
            return Err(Error::invalid("calibration jitter range is empty"));
        }
        Ok(())
    }

    /// Torso amplitude at `range_m` under the nominal noise power.
    pub fn torso_amplitude(&self, range_m: f64) -> f64 {
        let at_1m = (self.noise_variance * 10f64.powf(self.snr_db_at_1m / 10.0)).sqrt();
        at_1m / (range_m * range_m)
    }

    pub fn snr_db(&self, range_m: f64) -> f64 {
        20.0 * (self.torso_amplitude(range_m) / self.noise_variance.sqrt()).log10()
    }
}

/// A room: static clutter, a noise power and a phase-jitter level.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub id: u32,
    pub static_paths: Vec<PathModel>,
    pub noise_variance: f64,
    pub jitter_std_rad: f64,
}

impl Environment {
    /// Clutter layout drawn from `(seed, id)`: one strong floor return at 2.5–3 m that serves as
    /// the phase reference, and 3–5 weaker furniture returns.
    pub fn generate(id: u32, seed: u64, cal: &Calibration) -> Environment {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0xE417, id as u64]));
        let mut static_paths = vec![PathModel::fixed(1.0, rng.gen_range(2.5..3.0))];
        for _ in 0..rng.gen_range(3..=5) {
            static_paths.push(PathModel::fixed(rng.gen_range(0.1..0.5), rng.gen_range(0.8..6.0)));
        }
        let spread = rng.gen_range(-cal.noise_spread_db..=cal.noise_spread_db);
        Environment {
            id,
            static_paths,
            noise_variance: cal.noise_variance * 10f64.powf(spread / 10.0),
            jitter_std_rad: rng.gen_range(cal.jitter_min_rad..=cal.jitter_max_rad),
        }
    }

    pub fn noise(&self, seed: u64) -> NoiseModel {
        NoiseModel { awgn_variance: self.noise_variance, phase_jitter_std_rad: self.jitter_std_rad, seed }
    }
}

/// SplitMix64 finaliser folded over `parts`.
pub(crate) fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub train_environments: Vec<u32>,
    pub test_environments: Vec<u32>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Settling time simulated before the window so the background estimate has converged.
    pub warmup_s: f64,
    /// The activity starts uniformly within this long after the window opens.
    pub max_onset_s: f64,
    pub min_range_m: f64,
    pub max_range_m: f64,
    /// Relative spread of speeds and durations around the nominal script.
    pub speed_jitter: f64,
    pub duration_jitter: f64,
    pub calibration: Calibration,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 7,
            train_environments: vec![0, 1],
            test_environments: vec![2, 3, 4, 5, 6],
            train_per_class: 50,
            test_per_class: 20,
            warmup_s: 0.5,
            max_onset_s: 0.15,
            min_range_m: 1.2,
            max_range_m: 4.5,
            speed_jitter: 0.15,
            duration_jitter: 0.15,
            calibration: Calibration::default(),
        }
    }
}

/// Frames simulated past the end of the window so the slow-time filter never sees its padding.
const TAIL_FRAMES: usize = 20;

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.calibration.validate()?;
        if self.train_environments.len() < 2 || self.test_environments.is_empty() {
            return Err(Error::invalid("need at least 2 train and 1 test environment"));
        }
        check_disjoint(&self.train_environments, &self.test_environments)?;
        if !(self.warmup_s >= 0.0 && self.max_onset_s >= 0.0) {
            return Err(Error::invalid("warmup and onset must be non-negative"));
        }
        if !(0.0 < self.min_range_m && self.min_range_m <= self.max_range_m) {
            return Err(Error::invalid("range interval is empty"));
        }
        if !(0.0..1.0).contains(&self.speed_jitter) || !(0.0..1.0).contains(&self.duration_jitter) {
            return Err(Error::invalid("jitter fractions must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn environment(&self, id: u32) -> Environment {
        Environment::generate(id, self.seed, &self.calibration)
    }

    pub fn environments(&self, split: Split) -> &[u32] {
        match split {
            Split::Train => &self.train_environments,
            Split::Test => &self.test_environments,
        }
    }

    pub fn per_class(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_class,
            Split::Test => self.test_per_class,
        }
    }
}

/// Fails when an environment id appears in both lists.
pub fn check_disjoint(train: &[u32], test: &[u32]) -> Result<()> {
    if let Some(id) = train.iter().find(|id| test.contains(id)) {
        return Err(Error::invalid(format!("environment {id} appears in both train and test splits")));
    }
    Ok(())
}

/// Everything needed to regenerate one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub activity: Activity,
    pub environment_id: u32,
    pub index: usize,
    pub seed: u64,
}

/// A simulated scene cropped to the classification window.
#[derive(Debug, Clone)]
pub struct Scene {
    pub raw: FrameMatrix,
    pub window_start: usize,
    pub profile: MotionProfile,
}

impl Scene {
    /// Preprocessed window of `WINDOW_FRAMES` frames.
    pub fn window(&self) -> Result<FrameMatrix> {
        Preprocessor::default().run(&self.raw)?.window(self.window_start, WINDOW_FRAMES)
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub time: Spectrogram,
    pub freq: Spectrogram,
    pub label: Activity,
    pub environment_id: u32,
    pub index: usize,
}

impl Sample {
    pub fn file_stem(&self, split: Split) -> String {
        format!("{}-env{}-{}-{:04}", split.as_str(), self.environment_id, self.label.as_str(), self.index)
    }

    pub fn example<T: Scalar>(&self) -> Example<T> {
        Example {
            time: Tensor::from_spectrogram(&self.time),
            freq: Tensor::from_spectrogram(&self.freq),
            label: self.label.index(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: Split,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn environment_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.environment_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn examples<T: Scalar>(&self) -> Vec<Example<T>> {
        self.samples.iter().map(Sample::example).collect()
    }

    pub fn class_counts(&self) -> [usize; Activity::COUNT] {
        let mut counts = [0; Activity::COUNT];
        for s in &self.samples {
            counts[s.label.index()] += 1;
        }
        counts
    }

    /// `sample_path,label,environment_id,split` lines, paths built from `file_stem`.
    pub fn manifest(&self, path_of: impl Fn(&Sample) -> String) -> String {
        let mut out = String::from("sample_path,label,environment_id,split\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{},{}\n", path_of(s), s.label.as_str(), s.environment_id, self.split.as_str()));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct DatasetPair {
    pub train: Dataset,
    pub test: Dataset,
}

impl DatasetPair {
    pub fn assert_disjoint(&self) -> Result<()> {
        check_disjoint(&self.train.environment_ids(), &self.test.environment_ids())
    }
}

/// Sample specs of one split, environments outermost, then repetitions, then classes.
pub fn sample_specs(cfg: &DatasetConfig, split: Split) -> Vec<SampleSpec> {
    let mut out = Vec::new();
    for &env in cfg.environments(split) {
        for index in 0..cfg.per_class(split) {
            for activity in Activity::ALL {
                let seed = mix(&[cfg.seed, env as u64, activity.index() as u64, index as u64]);
                out.push(SampleSpec { activity, environment_id: env, index, seed });
            }
        }
    }
    out
}

/// Range the torso covers between the window opening and its end.
fn in_window_displacement(activity: Activity, params: &ScriptParams, window_s: f64) -> f64 {
    match activity {
        Activity::Walking => params.direction * params.speed_scale * window_s,
        _ => activity.displacement_m(params),
    }
}

/// Simulates the scene for a sample spec. `range_m` overrides the random starting range.
pub fn simulate_scene(
    cfg: &DatasetConfig,
    env: &Environment,
    spec: &SampleSpec,
    range_m: Option<f64>,
) -> Result<Scene> {
    let radio = RadioConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let onset = rng.gen_range(0.0..=cfg.max_onset_s);
    let speed_scale = 1.0 + rng.gen_range(-cfg.speed_jitter..=cfg.speed_jitter);
    let duration_scale = 1.0 + rng.gen_range(-cfg.duration_jitter..=cfg.duration_jitter);
    let direction = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mut start = rng.gen_range(cfg.min_range_m..=cfg.max_range_m);
    let window_s = WINDOW_FRAMES as f64 / radio.pulse_repetition_hz;
    let mut params = ScriptParams {
        start_range_m: start,
        torso_attenuation: 0.0,
        lead_in_s: cfg.warmup_s + onset,
        speed_scale,
        duration_scale,
        direction,
    };
    let shift = in_window_displacement(spec.activity, &params, window_s);
    match range_m {
        Some(r) => start = r,
        None => start = start.clamp(cfg.min_range_m - shift.min(0.0), (cfg.max_range_m - shift.max(0.0)).max(cfg.min_range_m)),
    }
    params.start_range_m = start;
    params.torso_attenuation = cfg.calibration.torso_amplitude(start);
    let profile = spec.activity.script_with(&params);

    let window_start = (cfg.warmup_s * radio.pulse_repetition_hz).round() as usize;
    let total = window_start + WINDOW_FRAMES + TAIL_FRAMES;
    let raw = simulate_activity(
        &radio,
        &env.static_paths,
        &profile,
        &env.noise(mix(&[spec.seed, 1])),
        total as f64 / radio.pulse_repetition_hz,
    )?;
    Ok(Scene { raw, window_start, profile })
}

/// Noise-and-clutter scene with nobody in it.
pub fn simulate_empty_scene(cfg: &DatasetConfig, env: &Environment, seed: u64) -> Result<Scene> {
    let radio = RadioConfig::default();
    let window_start = (cfg.warmup_s * radio.pulse_repetition_hz).round() as usize;
    let total = window_start + WINDOW_FRAMES + TAIL_FRAMES;
    let profile = MotionProfile::stationary("empty", vec![]);
    let raw = simulate_activity(&radio, &env.static_paths, &profile, &env.noise(seed), total as f64 / radio.pulse_repetition_hz)?;
    Ok(Scene { raw, window_start, profile })
}

pub fn generate_sample(cfg: &DatasetConfig, spec: &SampleSpec) -> Result<Sample> {
    let env = cfg.environment(spec.environment_id);
    let scene = simulate_scene(cfg, &env, spec, None)?;
    let (time, freq) = featurize(&scene.window()?)?;
    Ok(Sample { time, freq, label: spec.activity, environment_id: spec.environment_id, index: spec.index })
}

pub fn generate_split(cfg: &DatasetConfig, split: Split) -> Result<Dataset> {
    cfg.validate()?;
    let samples = sample_specs(cfg, split)
        .par_iter()
        .map(|s| generate_sample(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { split, samples })
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<DatasetPair> {
    let pair = DatasetPair { train: generate_split(cfg, Split::Train)?, test: generate_split(cfg, Split::Test)? };
    pair.assert_disjoint()?;
    Ok(pair)
}
