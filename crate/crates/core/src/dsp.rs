//! Preprocessing: phase-jitter removal, the slow-time cascading filter, static background
//! removal and peak-average motion detection.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::FrameMatrix;
use crate::error::{Error, Result};

pub const FIR_TAPS: usize = 26;
pub const FIR_CUTOFF_HZ: f64 = 80.0;
pub const SLOW_TIME_RATE_HZ: f64 = 400.0;
pub const SMOOTH_POINTS: usize = 5;
pub const BACKGROUND_FORGETTING: f64 = 0.95;

/// Sample types the slow-time filters operate on.
pub trait Sample: Copy + Default + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {}

impl Sample for f64 {}
impl Sample for Complex64 {}

/// Rotates every frame so the strongest static reflector keeps a constant phase.
///
/// The reference bin is the one with the largest mean amplitude. Its mean phase is taken as the
/// argument of its mean complex value, and frame `k` is rotated by `exp(-j(φ_k - ω̂))`.
pub fn correct_phase(frames: &FrameMatrix) -> Result<FrameMatrix> {
    if frames.frames() < 2 {
        return Err(Error::invalid("phase correction needs at least 2 frames"));
    }
    let reference = reference_bin(frames)?;
    let column = frames.column(reference);
    let mean: Complex64 = column.iter().sum::<Complex64>() / column.len() as f64;
    let mean_phase = mean.arg();
    let bins = frames.bins();
    let mut data = frames.data().to_vec();
    for (k, row) in data.chunks_mut(bins).enumerate() {
        let rot = Complex64::from_polar(1.0, mean_phase - column[k].arg());
        row.iter_mut().for_each(|z| *z *= rot);
    }
    Ok(frames.with_data(data))
}

/// Fast-time index with the largest mean amplitude.
pub fn reference_bin(frames: &FrameMatrix) -> Result<usize> {
    let mut best = (0, 0.0);
    for bin in 0..frames.bins() {
        let amp: f64 = (0..frames.frames()).map(|k| frames.get(k, bin).norm()).sum::<f64>();
        if amp > best.1 {
            best = (bin, amp);
        }
    }
    if best.1 > 0.0 {
        Ok(best.0)
    } else {
        Err(Error::NoReference)
    }
}

/// Linear-phase FIR filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Fir {
    taps: Vec<f64>,
    sample_rate_hz: f64,
}

impl Fir {
    /// Hamming-windowed sinc low-pass with unit DC gain.
    pub fn lowpass(num_taps: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        if num_taps < 2 {
            return Err(Error::invalid("FIR needs at least 2 taps"));
        }
        let cutoff = cutoff_hz / sample_rate_hz;
        if !(cutoff > 0.0 && cutoff < 0.5) {
            return Err(Error::invalid(format!("cutoff {cutoff_hz} Hz outside (0, fs/2)")));
        }
        let mid = (num_taps - 1) as f64 / 2.0;
        let mut taps: Vec<f64> = (0..num_taps)
            .map(|n| {
                let x = n as f64 - mid;
                let sinc = if x == 0.0 {
                    2.0 * cutoff
                } else {
                    (2.0 * PI * cutoff * x).sin() / (PI * x)
                };
                let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / (num_taps - 1) as f64).cos();
                sinc * window
            })
            .collect();
        let dc: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= dc);
        Ok(Fir { taps, sample_rate_hz })
    }

    /// The 26-tap, 80 Hz design used along slow time.
    pub fn slow_time() -> Self {
        Fir::lowpass(FIR_TAPS, FIR_CUTOFF_HZ, SLOW_TIME_RATE_HZ).unwrap()
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        self.taps
            .iter()
            .enumerate()
            .map(|(n, h)| Complex64::from_polar(*h, -w * n as f64))
            .sum()
    }

    /// Same-length filtering: the output is advanced by `(taps - 1) / 2` samples (rounded down)
    /// to compensate the group delay. Samples beyond either end repeat the nearest edge sample,
    /// so a constant input maps to the same constant.
    pub fn apply<T: Sample>(&self, signal: &[T]) -> Result<Vec<T>> {
        let n = self.taps.len();
        if signal.len() < n {
            return Err(Error::invalid(format!(
                "signal of length {} is shorter than the {n}-tap filter",
                signal.len()
            )));
        }
        let delay = (n - 1) / 2;
        let len = signal.len() as isize;
        Ok((0..signal.len())
            .map(|i| {
                let mut acc = T::default();
                for (m, h) in self.taps.iter().enumerate() {
                    let j = (i as isize + delay as isize - m as isize).clamp(0, len - 1);
                    acc = acc + signal[j as usize] * *h;
                }
                acc
            })
            .collect())
    }
}

/// [`Fir::slow_time`] applied to one slow-time series.
pub fn fir_lowpass<T: Sample>(signal: &[T]) -> Result<Vec<T>> {
    Fir::slow_time().apply(signal)
}

/// Centred 5-point moving average; the window shrinks at the edges.
pub fn smooth<T: Sample>(signal: &[T]) -> Result<Vec<T>> {
    moving_average(signal, SMOOTH_POINTS)
}

pub fn moving_average<T: Sample>(signal: &[T], points: usize) -> Result<Vec<T>> {
    if points == 0 || points.is_multiple_of(2) {
        return Err(Error::invalid("moving average needs an odd window"));
    }
    if signal.len() < points {
        return Err(Error::invalid(format!(
            "signal of length {} is shorter than the {points}-point window",
            signal.len()
        )));
    }
    let half = points / 2;
    let n = signal.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let sum = signal[lo..=hi].iter().fold(T::default(), |a, b| a + *b);
            sum * (1.0 / (hi - lo + 1) as f64)
        })
        .collect())
}

/// Streaming exponential-forgetting background estimate per fast-time bin.
///
/// Each output frame is `x_k - b_{k-1}` with `b_k = λ·b_{k-1} + (1-λ)·x_k`; the estimate starts
/// at the first frame.
#[derive(Debug, Clone)]
pub struct BackgroundSubtractor {
    forgetting: f64,
    background: Option<Vec<Complex64>>,
}

impl BackgroundSubtractor {
    pub fn new(forgetting: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&forgetting) {
            return Err(Error::invalid("forgetting factor must be in [0, 1)"));
        }
        Ok(BackgroundSubtractor { forgetting, background: None })
    }

    pub fn push(&mut self, frame: &[Complex64]) -> Vec<Complex64> {
        let lambda = self.forgetting;
        match &mut self.background {
            None => {
                self.background = Some(frame.to_vec());
                vec![Complex64::new(0.0, 0.0); frame.len()]
            }
            Some(bg) => frame
                .iter()
                .zip(bg.iter_mut())
                .map(|(x, b)| {
                    let out = x - *b;
                    *b = *b * lambda + x * (1.0 - lambda);
                    out
                })
                .collect(),
        }
    }
}

pub fn background_subtract(frames: &FrameMatrix) -> Result<FrameMatrix> {
    background_subtract_with(frames, BACKGROUND_FORGETTING)
}

pub fn background_subtract_with(frames: &FrameMatrix, forgetting: f64) -> Result<FrameMatrix> {
    if frames.frames() < 2 {
        return Err(Error::invalid("background subtraction needs at least 2 frames"));
    }
    let mut sub = BackgroundSubtractor::new(forgetting)?;
    let mut data = Vec::with_capacity(frames.data().len());
    for k in 0..frames.frames() {
        data.extend(sub.push(frame_slice(frames, k)));
    }
    Ok(frames.with_data(data))
}

fn frame_slice(frames: &FrameMatrix, k: usize) -> &[Complex64] {
    frames.frame(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub coef: f64,
    /// Cells on each side of the peak left out of the noise-floor average.
    pub guard_cells: usize,
    /// Cells within the guard neighbourhood (peak included) that must exceed the threshold.
    pub min_cells_over: usize,
    /// Frames used for each standard deviation.
    pub window_frames: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { coef: 1.5, guard_cells: 3, min_cells_over: 1, window_frames: 400 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coef.is_nan() || self.coef <= 1.0 {
            return Err(Error::invalid("detector.coef must exceed 1"));
        }
        if self.window_frames < 2 {
            return Err(Error::invalid("detector.window_frames must be at least 2"));
        }
        if self.min_cells_over == 0 {
            return Err(Error::invalid("detector.min_cells_over must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionReport {
    pub detected: bool,
    pub peak_bin: usize,
    pub sd_vector: Vec<f64>,
    pub threshold: f64,
}

impl MotionReport {
    pub fn peak_sd(&self) -> f64 {
        self.sd_vector[self.peak_bin]
    }
}

/// Per-bin sample standard deviation of magnitudes over the last `window_frames` frames.
pub fn fast_time_std(frames: &FrameMatrix, cfg: &DetectorConfig) -> Result<Vec<f64>> {
    let n = cfg.window_frames;
    if n < 2 {
        return Err(Error::invalid("standard deviation needs at least 2 frames"));
    }
    if n > frames.frames() {
        return Err(Error::invalid(format!(
            "window of {n} frames exceeds the {} available",
            frames.frames()
        )));
    }
    let start = frames.frames() - n;
    Ok((0..frames.bins())
        .map(|bin| {
            let mags: Vec<f64> = (start..frames.frames()).map(|k| frames.get(k, bin).norm()).collect();
            let mean = mags.iter().sum::<f64>() / n as f64;
            let ss: f64 = mags.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        })
        .collect())
}

/// Peak-average rule: the global peak must exceed `coef` times the mean of the cells outside
/// its guard neighbourhood.
pub fn detect_motion(sd: &[f64], cfg: &DetectorConfig) -> Result<MotionReport> {
    if sd.len() < 2 * cfg.guard_cells + 3 {
        return Err(Error::invalid(format!(
            "{} cells is too few for {} guard cells",
            sd.len(),
            cfg.guard_cells
        )));
    }
    if sd.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("standard deviation vector has non-finite entries"));
    }
    let mut peak = 0;
    for (i, v) in sd.iter().enumerate() {
        if *v > sd[peak] {
            peak = i;
        }
    }
    let lo = peak.saturating_sub(cfg.guard_cells);
    let hi = (peak + cfg.guard_cells).min(sd.len() - 1);
    let floor_cells: Vec<f64> = sd
        .iter()
        .enumerate()
        .filter(|(i, _)| *i < lo || *i > hi)
        .map(|(_, v)| *v)
        .collect();
    let floor = floor_cells.iter().sum::<f64>() / floor_cells.len() as f64;
    let threshold = cfg.coef * floor;
    let over = sd[lo..=hi].iter().filter(|v| **v > threshold).count();
    Ok(MotionReport {
        detected: sd[peak] > threshold && over >= cfg.min_cells_over,
        peak_bin: peak,
        sd_vector: sd.to_vec(),
        threshold,
    })
}

/// The full preprocessing chain: phase correction, FIR, smoothing, background subtraction.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub fir: Fir,
    pub smooth_points: usize,
    pub forgetting: f64,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Preprocessor {
            fir: Fir::slow_time(),
            smooth_points: SMOOTH_POINTS,
            forgetting: BACKGROUND_FORGETTING,
        }
    }
}

impl Preprocessor {
    /// Phase correction followed by the cascading filter, without background removal.
    pub fn denoise(&self, frames: &FrameMatrix) -> Result<FrameMatrix> {
        let corrected = correct_phase(frames)?;
        corrected.map_columns(|col| {
            let filtered = self.fir.apply(col)?;
            moving_average(&filtered, self.smooth_points)
        })
    }

    pub fn run(&self, frames: &FrameMatrix) -> Result<FrameMatrix> {
        background_subtract_with(&self.denoise(frames)?, self.forgetting)
    }
}

pub fn preprocess(frames: &FrameMatrix) -> Result<FrameMatrix> {
    Preprocessor::default().run(frames)
}

/// Detection over consecutive non-overlapping windows of a preprocessed matrix.
pub fn detect_windows(frames: &FrameMatrix, cfg: &DetectorConfig) -> Result<Vec<(usize, MotionReport)>> {
    cfg.validate()?;
    let n = cfg.window_frames;
    let mut out = Vec::new();
    let mut start = 0;
    while start + n <= frames.frames() {
        let window = frames.window(start, n)?;
        let sd = fast_time_std(&window, cfg)?;
        out.push((start, detect_motion(&sd, cfg)?));
        start += n;
    }
    Ok(out)
}
