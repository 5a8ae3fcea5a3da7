//! Baseband channel simulator for a collocated UWB impulse radio.
//!
//! A frame holds `L` fast-time samples taken every `T_n` seconds after the pulse is emitted;
//! frames repeat at the pulse repetition frequency and stack into a `K × L` [`FrameMatrix`].
//! Each reflector contributes a delayed Gaussian envelope rotated by the carrier phase
//! accumulated over its round-trip delay.

mod profile;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use profile::{Activity, MotionProfile, PathOverride, ScriptParams, Segment};

pub const SPEED_OF_LIGHT: f64 = 2.998e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConfig {
    pub carrier_freq_hz: f64,
    /// -10 dB bandwidth.
    pub bandwidth_hz: f64,
    pub pulse_amplitude: f64,
    pub pulse_duration_s: f64,
    pub pulse_repetition_hz: f64,
    pub adc_interval_s: f64,
    pub fast_time_bins: usize,
    pub propagation_speed_mps: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        let bandwidth_hz = 1.4e9;
        RadioConfig {
            carrier_freq_hz: 7.3e9,
            bandwidth_hz,
            pulse_amplitude: 1.0,
            pulse_duration_s: 1.0e-9,
            pulse_repetition_hz: 400.0,
            // One fast-time sample per range cell: c·T_n/2 = c/(2B), so 60 bins span ≈ 6.4 m.
            adc_interval_s: 1.0 / bandwidth_hz,
            fast_time_bins: 60,
            propagation_speed_mps: SPEED_OF_LIGHT,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("pulse_amplitude", self.pulse_amplitude),
            ("pulse_duration_s", self.pulse_duration_s),
            ("pulse_repetition_hz", self.pulse_repetition_hz),
            ("adc_interval_s", self.adc_interval_s),
            ("propagation_speed_mps", self.propagation_speed_mps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("radio.{name} must be positive, got {v}")));
            }
        }
        if self.fast_time_bins == 0 {
            return Err(Error::invalid("radio.fast_time_bins must be positive"));
        }
        if self.fast_time_bins as f64 * self.adc_interval_s > self.frame_period_s() {
            return Err(Error::invalid(
                "fast-time window (fast_time_bins·adc_interval_s) exceeds the frame period",
            ));
        }
        let sigma = self.pulse_sigma_s();
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid("pulse standard deviation is not finite"));
        }
        Ok(())
    }

    /// Standard deviation of the Gaussian envelope for the configured -10 dB bandwidth.
    pub fn pulse_sigma_s(&self) -> f64 {
        1.0 / (2.0 * PI * self.bandwidth_hz * std::f64::consts::LOG10_E.sqrt())
    }

    pub fn frame_period_s(&self) -> f64 {
        1.0 / self.pulse_repetition_hz
    }

    pub fn wavelength_m(&self) -> f64 {
        self.propagation_speed_mps / self.carrier_freq_hz
    }

    /// Range spanned by one fast-time sample.
    pub fn bin_spacing_m(&self) -> f64 {
        self.propagation_speed_mps * self.adc_interval_s / 2.0
    }

    /// Fractional fast-time index at which a reflector at `range_m` peaks.
    pub fn range_to_bin(&self, range_m: f64) -> f64 {
        (2.0 * range_m / self.propagation_speed_mps + self.pulse_duration_s / 2.0)
            / self.adc_interval_s
    }

    /// Inverse of [`RadioConfig::range_to_bin`].
    pub fn bin_to_range(&self, bin: f64) -> f64 {
        (bin * self.adc_interval_s - self.pulse_duration_s / 2.0) * self.propagation_speed_mps
            / 2.0
    }

    /// Slow-time Doppler frequency of a reflector moving radially at `speed_mps`.
    pub fn doppler_hz(&self, speed_mps: f64) -> f64 {
        2.0 * speed_mps * self.carrier_freq_hz / self.propagation_speed_mps
    }

    /// Envelope value at fast time `t` for a pulse emitted at zero.
    pub fn envelope(&self, t: f64) -> f64 {
        let sigma = self.pulse_sigma_s();
        let dt = t - self.pulse_duration_s / 2.0;
        self.pulse_amplitude * (-dt * dt / (2.0 * sigma * sigma)).exp()
    }
}

/// Samples the transmitted envelope at `t = i·T_n` for `i` in `0..n_samples`.
pub fn synth_pulse(radio: &RadioConfig, n_samples: usize) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    Ok((0..n_samples)
        .map(|i| radio.envelope(i as f64 * radio.adc_interval_s))
        .collect())
}

/// Returns `(Δr, Δτ) = (c/2B, 1/2B)`.
pub fn range_resolution(radio: &RadioConfig) -> (f64, f64) {
    let delta_tau = 1.0 / (2.0 * radio.bandwidth_hz);
    (radio.propagation_speed_mps * delta_tau, delta_tau)
}

/// A single reflection path. Positive `radial_speed_mps` moves away from the radio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathModel {
    pub attenuation: f64,
    pub range_m: f64,
    #[serde(default)]
    pub radial_speed_mps: f64,
    #[serde(default)]
    pub micro_amplitude_m: f64,
    #[serde(default)]
    pub micro_freq_hz: f64,
}

impl PathModel {
    pub fn fixed(attenuation: f64, range_m: f64) -> Self {
        PathModel {
            attenuation,
            range_m,
            radial_speed_mps: 0.0,
            micro_amplitude_m: 0.0,
            micro_freq_hz: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.attenuation >= 0.0
            && self.range_m > 0.0
            && self.micro_amplitude_m >= 0.0
            && self.micro_freq_hz >= 0.0
            && self.radial_speed_mps.is_finite()
            && self.attenuation.is_finite()
            && self.range_m.is_finite()
            && self.micro_amplitude_m.is_finite()
            && self.micro_freq_hz.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid path {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Total complex noise power `E|n|²`.
    pub awgn_variance: f64,
    pub phase_jitter_std_rad: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { awgn_variance: 0.0, phase_jitter_std_rad: 0.0, seed: 0 }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.awgn_variance >= 0.0 && self.phase_jitter_std_rad >= 0.0 {
            Ok(())
        } else {
            Err(Error::invalid("noise variances must be non-negative"))
        }
    }

    /// Every frame draws from its own ChaCha stream, so a frame can be regenerated in isolation.
    fn rng_for_frame(&self, frame_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame_index);
        rng
    }
}

/// `K × L` complex baseband samples, slow-time major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    frames: usize,
    bins: usize,
    data: Vec<Complex64>,
    pub radio: RadioConfig,
    pub frame_period_s: f64,
}

impl FrameMatrix {
    pub fn new(radio: RadioConfig, frames: usize, data: Vec<Complex64>) -> Result<Self> {
        let bins = radio.fast_time_bins;
        if frames == 0 {
            return Err(Error::invalid("frame matrix needs at least one frame"));
        }
        if data.len() != frames * bins {
            return Err(Error::invalid(format!(
                "frame matrix data length {} != {frames}×{bins}",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("frame matrix contains non-finite samples"));
        }
        Ok(FrameMatrix { frames, bins, data, frame_period_s: radio.frame_period_s(), radio })
    }

    pub fn zeros(radio: RadioConfig, frames: usize) -> Self {
        let bins = radio.fast_time_bins;
        FrameMatrix {
            frames,
            bins,
            data: vec![Complex64::new(0.0, 0.0); frames * bins],
            frame_period_s: radio.frame_period_s(),
            radio,
        }
    }

    pub(crate) fn with_data(&self, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        FrameMatrix { data, ..self.clone() }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }

    /// Slow-time series of one fast-time bin.
    pub fn column(&self, bin: usize) -> Vec<Complex64> {
        (0..self.frames).map(|k| self.get(k, bin)).collect()
    }

    pub fn set_column(&mut self, bin: usize, values: &[Complex64]) {
        assert_eq!(values.len(), self.frames);
        for (k, v) in values.iter().enumerate() {
            self.data[k * self.bins + bin] = *v;
        }
    }

    /// Frames `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<FrameMatrix> {
        if len == 0 || start + len > self.frames {
            return Err(Error::invalid(format!(
                "window {start}..{} outside 0..{}",
                start + len,
                self.frames
            )));
        }
        let data = self.data[start * self.bins..(start + len) * self.bins].to_vec();
        Ok(FrameMatrix { frames: len, data, ..self.clone() })
    }

    /// Applies `f` to every slow-time column.
    pub fn map_columns<F>(&self, mut f: F) -> Result<FrameMatrix>
    where
        F: FnMut(&[Complex64]) -> Result<Vec<Complex64>>,
    {
        let mut out = self.clone();
        for bin in 0..self.bins {
            let col = f(&self.column(bin))?;
            out.set_column(bin, &col);
        }
        Ok(out)
    }
}

/// Instantaneous state of a reflector at one frame.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PathState {
    pub attenuation: f64,
    pub range_m: f64,
    pub micro_amplitude_m: f64,
    pub micro_phase_rad: f64,
}

fn frame_from_states(
    radio: &RadioConfig,
    states: &[PathState],
    frame_index: u64,
    noise: &NoiseModel,
) -> Vec<Complex64> {
    let c = radio.propagation_speed_mps;
    let mut frame = vec![Complex64::new(0.0, 0.0); radio.fast_time_bins];
    for st in states {
        let micro = 2.0 * st.micro_amplitude_m * (1.0 - st.micro_phase_rad.cos()) / c;
        let delay = 2.0 * st.range_m / c + micro;
        let rot = Complex64::from_polar(st.attenuation, 2.0 * PI * radio.carrier_freq_hz * delay);
        for (l, out) in frame.iter_mut().enumerate() {
            let env = radio.envelope(l as f64 * radio.adc_interval_s - delay);
            *out += rot * env;
        }
    }
    if noise.awgn_variance > 0.0 || noise.phase_jitter_std_rad > 0.0 {
        let mut rng = noise.rng_for_frame(frame_index);
        let jitter = if noise.phase_jitter_std_rad > 0.0 {
            Normal::new(0.0, noise.phase_jitter_std_rad).unwrap().sample(&mut rng)
        } else {
            0.0
        };
        if noise.awgn_variance > 0.0 {
            let component = Normal::new(0.0, (noise.awgn_variance / 2.0).sqrt()).unwrap();
            for out in frame.iter_mut() {
                let re = component.sample(&mut rng);
                let im = component.sample(&mut rng);
                *out += Complex64::new(re, im);
            }
        }
        if jitter != 0.0 {
            let rot = Complex64::from_polar(1.0, jitter);
            frame.iter_mut().for_each(|z| *z *= rot);
        }
    }
    frame
}

/// One fast-time frame for reflectors moving at constant speed, evaluated at slow-time index
/// `frame_index`.
pub fn synth_frame(
    radio: &RadioConfig,
    paths: &[PathModel],
    frame_index: u64,
    noise: &NoiseModel,
) -> Vec<Complex64> {
    let t = frame_index as f64 * radio.frame_period_s();
    let states: Vec<PathState> = paths
        .iter()
        .map(|p| PathState {
            attenuation: p.attenuation,
            range_m: p.range_m + p.radial_speed_mps * t,
            micro_amplitude_m: p.micro_amplitude_m,
            micro_phase_rad: 2.0 * PI * p.micro_freq_hz * t,
        })
        .collect();
    frame_from_states(radio, &states, frame_index, noise)
}

/// Simulates `duration_s` of slow time: static paths stay put, profile paths follow the
/// profile's segments with ranges integrated frame by frame.
pub fn simulate_activity(
    radio: &RadioConfig,
    static_paths: &[PathModel],
    profile: &MotionProfile,
    noise: &NoiseModel,
    duration_s: f64,
) -> Result<FrameMatrix> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::invalid("duration_s must be positive"));
    }
    radio.validate()?;
    noise.validate()?;
    profile.validate()?;
    for p in static_paths {
        p.validate()?;
    }
    let frames = (duration_s * radio.pulse_repetition_hz).round() as usize;
    if frames == 0 {
        return Err(Error::invalid("duration shorter than one frame"));
    }
    let ts = radio.frame_period_s();
    let bounds = profile.segment_end_frames(radio.pulse_repetition_hz);

    let statics: Vec<PathState> = static_paths
        .iter()
        .map(|p| PathState {
            attenuation: p.attenuation,
            range_m: p.range_m,
            micro_amplitude_m: p.micro_amplitude_m,
            micro_phase_rad: 0.0,
        })
        .collect();
    let mut moving: Vec<PathState> = profile
        .paths
        .iter()
        .map(|p| PathState {
            attenuation: p.attenuation,
            range_m: p.range_m,
            micro_amplitude_m: p.micro_amplitude_m,
            micro_phase_rad: 0.0,
        })
        .collect();

    let mut data = Vec::with_capacity(frames * radio.fast_time_bins);
    let mut segment = 0;
    let static_micro: Vec<f64> = static_paths.iter().map(|p| p.micro_freq_hz).collect();
    for k in 0..frames {
        while segment + 1 < bounds.len() && k >= bounds[segment] {
            segment += 1;
        }
        let params = profile.params_in_segment(segment);
        for (st, p) in moving.iter_mut().zip(&params) {
            st.micro_amplitude_m = p.micro_amplitude_m;
        }
        let mut states = statics.clone();
        for (st, f) in states.iter_mut().zip(&static_micro) {
            st.micro_phase_rad = 2.0 * PI * f * k as f64 * ts;
        }
        states.extend_from_slice(&moving);
        data.extend(frame_from_states(radio, &states, k as u64, noise));
        for (st, p) in moving.iter_mut().zip(&params) {
            st.range_m += p.radial_speed_mps * ts;
            st.micro_phase_rad += 2.0 * PI * p.micro_freq_hz * ts;
        }
    }
    FrameMatrix::new(*radio, frames, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radio() -> RadioConfig {
        RadioConfig::default()
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }

    /// Plain O(N²) DFT, used as the oracle for spectral checks.
    fn dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|q| {
                x.iter()
                    .enumerate()
                    .map(|(k, v)| {
                        v * Complex64::from_polar(1.0, -2.0 * PI * (q * k) as f64 / n as f64)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn pulse_peaks_at_half_duration() {
        let mut r = radio();
        // Put an ADC instant exactly on T_p/2.
        r.pulse_duration_s = 2.0 * 5.0 * r.adc_interval_s;
        let s = synth_pulse(&r, 20).unwrap();
        assert!((s[5] - 1.0).abs() < 1e-15);
        assert_eq!(argmax(&s), 5);
        assert!(synth_pulse(&r, 0).is_err());
    }

    #[test]
    fn pulse_sigma_for_default_bandwidth() {
        // 1 / (2π · 1.4e9 · sqrt(log10 e)) evaluated by hand: sqrt(0.4342945) = 0.6590106
        let sigma = radio().pulse_sigma_s();
        assert!((sigma - 1.7250e-10).abs() < 5e-14, "sigma = {sigma:e}");
        let r = radio();
        let v = r.envelope(r.pulse_duration_s / 2.0 + sigma);
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
        assert!((v - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn range_resolution_values() {
        let (dr, dtau) = range_resolution(&radio());
        assert!((dr - 0.107071).abs() < 1e-6, "dr = {dr}");
        assert!((dtau - 3.5714e-10).abs() < 1e-14);
        let mut wide = radio();
        wide.bandwidth_hz *= 2.0;
        let (dr2, _) = range_resolution(&wide);
        assert!((dr2 - dr / 2.0).abs() < 1e-15);
    }

    #[test]
    fn radio_validation() {
        assert!(radio().validate().is_ok());
        let mut r = radio();
        r.bandwidth_hz = 0.0;
        assert!(r.validate().is_err());
        let mut r = radio();
        r.fast_time_bins = 10_000_000;
        assert!(r.validate().is_err());
    }

    #[test]
    fn static_path_frames_repeat() {
        let r = radio();
        let paths = [PathModel::fixed(1.0, 2.0)];
        let n = NoiseModel::noiseless();
        assert_eq!(synth_frame(&r, &paths, 0, &n), synth_frame(&r, &paths, 1, &n));
    }

    #[test]
    fn empty_path_list_is_pure_noise() {
        let r = radio();
        let quiet = synth_frame(&r, &[], 3, &NoiseModel::noiseless());
        assert!(quiet.iter().all(|z| z.norm() == 0.0));
        let noise = NoiseModel { awgn_variance: 1.0, phase_jitter_std_rad: 0.0, seed: 9 };
        let noisy = synth_frame(&r, &[], 3, &noise);
        let power: f64 = noisy.iter().map(|z| z.norm_sqr()).sum::<f64>() / noisy.len() as f64;
        assert!(power > 0.3 && power < 3.0);
    }

    #[test]
    fn path_beyond_window_contributes_nothing() {
        let r = radio();
        let far = synth_frame(&r, &[PathModel::fixed(1.0, 50.0)], 0, &NoiseModel::noiseless());
        assert!(far.iter().all(|z| z.norm() < 1e-30));
    }

    #[test]
    fn phase_advance_per_frame_matches_doppler_delay() {
        let r = radio();
        let mut p = PathModel::fixed(1.0, 2.0);
        p.radial_speed_mps = 0.3;
        let n = NoiseModel::noiseless();
        let bin = r.range_to_bin(2.0).round() as usize;
        let a = synth_frame(&r, &[p], 10, &n)[bin];
        let b = synth_frame(&r, &[p], 11, &n)[bin];
        let measured = (b / a).arg();
        let expected = 2.0 * PI * r.carrier_freq_hz * (2.0 * p.radial_speed_mps * r.frame_period_s())
            / r.propagation_speed_mps;
        // Wrap the analytic advance into (-π, π].
        let wrapped = Complex64::from_polar(1.0, expected).arg();
        assert!((measured - wrapped).abs() < 1e-9, "{measured} vs {wrapped}");
    }

    #[test]
    fn one_metre_per_second_doppler_near_48_7_hz() {
        let r = radio();
        let fd = r.doppler_hz(1.0);
        assert!((fd - 48.699).abs() < 1e-2, "fd = {fd}");
        let mut p = PathModel::fixed(1.0, 3.0);
        p.radial_speed_mps = 1.0;
        let frames = 400;
        let bin = r.range_to_bin(3.2).round() as usize;
        let series: Vec<Complex64> = (0..frames)
            .map(|k| synth_frame(&r, &[p], k, &NoiseModel::noiseless())[bin])
            .collect();
        let mag: Vec<f64> = dft(&series).iter().map(|z| z.norm()).collect();
        // 400 frames at 400 Hz gives 1 Hz bins.
        assert_eq!(argmax(&mag), 49);
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let r = radio();
        let noise = NoiseModel { awgn_variance: 0.1, phase_jitter_std_rad: 0.2, seed: 42 };
        let paths = [PathModel::fixed(1.0, 2.0)];
        assert_eq!(synth_frame(&r, &paths, 5, &noise), synth_frame(&r, &paths, 5, &noise));
        let other = NoiseModel { seed: 43, ..noise };
        assert_ne!(synth_frame(&r, &paths, 5, &noise), synth_frame(&r, &paths, 5, &other));
        assert_ne!(synth_frame(&r, &paths, 5, &noise), synth_frame(&r, &paths, 6, &noise));
    }

    #[test]
    fn zero_speed_profile_frames_identical() {
        let r = radio();
        let profile = MotionProfile::stationary("still", vec![PathModel::fixed(0.5, 2.5)]);
        let m = simulate_activity(&r, &[PathModel::fixed(1.0, 2.7)], &profile, &NoiseModel::noiseless(), 0.2)
            .unwrap();
        assert_eq!(m.frames(), 80);
        for k in 1..m.frames() {
            assert_eq!(m.frame(k), m.frame(0));
        }
    }

    #[test]
    fn walking_toward_sensor_moves_peak_by_range_cells() {
        let r = radio();
        let (dr, _) = range_resolution(&r);
        // Start exactly on a sample so rounding is unambiguous.
        let start = r.bin_to_range(40.0);
        let mut torso = PathModel::fixed(1.0, start);
        torso.radial_speed_mps = -1.0;
        let profile = MotionProfile::constant("walk", vec![torso], 1.0);
        let m = simulate_activity(&r, &[], &profile, &NoiseModel::noiseless(), 1.0).unwrap();
        let first: Vec<f64> = m.frame(0).iter().map(|z| z.norm()).collect();
        let last: Vec<f64> = m.frame(m.frames() - 1).iter().map(|z| z.norm()).collect();
        let moved = argmax(&first) as i64 - argmax(&last) as i64;
        assert_eq!(moved, (1.0 / dr).round() as i64);
    }

    #[test]
    fn short_profile_holds_last_segment() {
        let r = radio();
        let mut base = PathModel::fixed(1.0, 3.0);
        base.radial_speed_mps = 0.0;
        let profile = MotionProfile {
            label: "step".into(),
            description: String::new(),
            paths: vec![base],
            segments: vec![
                Segment { duration_s: 0.1, overrides: vec![] },
                Segment {
                    duration_s: 0.1,
                    overrides: vec![PathOverride { path: 0, radial_speed_mps: Some(0.5), ..Default::default() }],
                },
            ],
        };
        let m = simulate_activity(&r, &[], &profile, &NoiseModel::noiseless(), 1.0).unwrap();
        // Range keeps growing past the scripted 0.2 s: displacement (1.0 - 0.1) s · 0.5 m/s.
        let last: Vec<f64> = m.frame(m.frames() - 1).iter().map(|z| z.norm()).collect();
        let expected = r.range_to_bin(3.0 + 0.5 * (m.frames() - 1 - 40) as f64 / 400.0);
        assert_eq!(argmax(&last), expected.round() as usize);
    }

    #[test]
    fn simulate_rejects_bad_duration() {
        let r = radio();
        let profile = MotionProfile::stationary("still", vec![]);
        assert!(simulate_activity(&r, &[], &profile, &NoiseModel::noiseless(), 0.0).is_err());
        assert!(simulate_activity(&r, &[], &profile, &NoiseModel::noiseless(), -1.0).is_err());
    }

    #[test]
    fn simulation_is_bit_identical_under_seed() {
        let r = radio();
        let profile = Activity::Walking.script(3.0, 1.0, 0.1);
        let noise = NoiseModel { awgn_variance: 1e-4, phase_jitter_std_rad: 0.3, seed: 7 };
        let a = simulate_activity(&r, &[PathModel::fixed(1.0, 2.7)], &profile, &noise, 0.5).unwrap();
        let b = simulate_activity(&r, &[PathModel::fixed(1.0, 2.7)], &profile, &noise, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn static_scene_energy_at_dc() {
        let r = radio();
        let paths = [PathModel::fixed(1.0, 2.0), PathModel::fixed(0.4, 4.1)];
        let frames: Vec<Vec<Complex64>> =
            (0..128).map(|k| synth_frame(&r, &paths, k, &NoiseModel::noiseless())).collect();
        for bin in [10usize, 20, 39] {
            let col: Vec<Complex64> = frames.iter().map(|f| f[bin]).collect();
            let spec = dft(&col);
            let total: f64 = spec.iter().map(|z| z.norm_sqr()).sum();
            if total < 1e-20 {
                continue;
            }
            assert!(spec[0].norm_sqr() / total >= 0.999);
        }
    }

    #[test]
    fn micro_motion_sidebands_at_micro_frequency() {
        let r = radio();
        let mut p = PathModel::fixed(1.0, 2.0);
        p.micro_amplitude_m = 0.001;
        p.micro_freq_hz = 5.0;
        let n = 400;
        let bin = r.range_to_bin(2.0).round() as usize;
        let col: Vec<Complex64> =
            (0..n).map(|k| synth_frame(&r, &[p], k as u64, &NoiseModel::noiseless())[bin]).collect();
        let mag: Vec<f64> = dft(&col).iter().map(|z| z.norm()).collect();
        let mut ac = mag.clone();
        ac[0] = 0.0;
        let peak = argmax(&ac);
        // 1 Hz resolution: the strongest non-DC line sits at +5 Hz or -5 Hz (bin 395).
        let hz = if peak > n / 2 { peak as f64 - n as f64 } else { peak as f64 };
        assert!((hz.abs() - 5.0).abs() <= 1.0, "peak at {hz} Hz");
        assert!((mag[5] - mag[n - 5]).abs() / mag[5] < 0.5);
    }

    #[test]
    fn doubling_attenuation_quadruples_power() {
        let r = radio();
        let n = NoiseModel::noiseless();
        let a = synth_frame(&r, &[PathModel::fixed(0.3, 2.0)], 0, &n);
        let b = synth_frame(&r, &[PathModel::fixed(0.6, 2.0)], 0, &n);
        let pa: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        let pb: f64 = b.iter().map(|z| z.norm_sqr()).sum();
        assert!((pb / pa - 4.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn path() -> impl Strategy<Value = PathModel> {
            (0.0f64..2.0, 0.5f64..6.0, -2.0f64..2.0, 0.0f64..0.01, 0.0f64..3.0).prop_map(
                |(attenuation, range_m, radial_speed_mps, micro_amplitude_m, micro_freq_hz)| PathModel {
                    attenuation,
                    range_m,
                    radial_speed_mps,
                    micro_amplitude_m,
                    micro_freq_hz,
                },
            )
        }

        proptest! {
            #[test]
            fn superposition(a in prop::collection::vec(path(), 0..4),
                             b in prop::collection::vec(path(), 0..4),
                             k in 0u64..1000) {
                let r = RadioConfig::default();
                let n = NoiseModel::noiseless();
                let fa = synth_frame(&r, &a, k, &n);
                let fb = synth_frame(&r, &b, k, &n);
                let union: Vec<PathModel> = a.iter().chain(&b).copied().collect();
                let fu = synth_frame(&r, &union, k, &n);
                let scale = fu.iter().map(|z| z.norm()).fold(1e-300, f64::max);
                for i in 0..fu.len() {
                    prop_assert!((fu[i] - fa[i] - fb[i]).norm() <= 1e-12 * scale);
                }
            }
        }
    }
}
