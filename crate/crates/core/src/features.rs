//! Time-domain and Doppler spectrograms of a preprocessed 400-frame window.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::channel::FrameMatrix;
use crate::error::{Error, Result};

pub const WINDOW_FRAMES: usize = 400;
pub const WINDOW_BINS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectrogramKind {
    TimeDomain,
    DopplerDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    None,
    ZScore,
}

/// Real `rows × cols` image, row-major. Rows are slow-time frames (time domain) or DFT bins
/// (Doppler domain); columns are fast-time bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    pub kind: SpectrogramKind,
    pub normalization: Normalization,
}

impl Spectrogram {
    pub fn from_raw(data: Vec<f64>, rows: usize, cols: usize, kind: SpectrogramKind) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "spectrogram data length {} != {rows}×{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("spectrogram has non-finite entries"));
        }
        Ok(Spectrogram { data, rows, cols, kind, normalization: Normalization::None })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }
}

fn check_window(frames: &FrameMatrix) -> Result<()> {
    if frames.frames() != WINDOW_FRAMES || frames.bins() != WINDOW_BINS {
        return Err(Error::invalid(format!(
            "expected a {WINDOW_FRAMES}×{WINDOW_BINS} window, got {}×{}",
            frames.frames(),
            frames.bins()
        )));
    }
    Ok(())
}

/// Magnitude of every sample.
pub fn time_spectrogram(frames: &FrameMatrix) -> Result<Spectrogram> {
    check_window(frames)?;
    let data = frames.data().iter().map(|z| z.norm()).collect();
    Spectrogram::from_raw(data, frames.frames(), frames.bins(), SpectrogramKind::TimeDomain)
}

/// Per-bin slow-time DFT, zero frequency first, unshifted.
pub fn doppler_dft(frames: &FrameMatrix) -> Vec<Vec<Complex64>> {
    let n = frames.frames();
    let fft = FftPlanner::new().plan_fft_forward(n);
    (0..frames.bins())
        .map(|bin| {
            let mut col = frames.column(bin);
            fft.process(&mut col);
            col
        })
        .collect()
}

/// `log(1 + |DFT_q|)` per fast-time bin, rows indexed by Doppler bin `q`.
pub fn doppler_spectrogram(frames: &FrameMatrix) -> Result<Spectrogram> {
    check_window(frames)?;
    let spectra = doppler_dft(frames);
    let (rows, cols) = (frames.frames(), frames.bins());
    let mut data = vec![0.0; rows * cols];
    for (l, spec) in spectra.iter().enumerate() {
        for (q, z) in spec.iter().enumerate() {
            data[q * cols + l] = z.norm().ln_1p();
        }
    }
    Spectrogram::from_raw(data, rows, cols, SpectrogramKind::DopplerDomain)
}

/// Z-score over the whole matrix; a constant matrix maps to zeros.
pub fn normalize(s: &Spectrogram) -> Spectrogram {
    let n = s.data.len() as f64;
    let mean = s.data.iter().sum::<f64>() / n;
    let var = s.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let data = if std > 1e-300 && std > 1e-12 * mean.abs() {
        s.data.iter().map(|v| (v - mean) / std).collect()
    } else {
        vec![0.0; s.data.len()]
    };
    Spectrogram { data, normalization: Normalization::ZScore, ..s.clone() }
}

/// Normalised (time, Doppler) pair for one window.
pub fn featurize(window: &FrameMatrix) -> Result<(Spectrogram, Spectrogram)> {
    Ok((normalize(&time_spectrogram(window)?), normalize(&doppler_spectrogram(window)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{simulate_activity, synth_frame, MotionProfile, NoiseModel, PathModel, RadioConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn window_from(f: impl Fn(usize, usize) -> Complex64) -> FrameMatrix {
        let radio = RadioConfig::default();
        let mut data = Vec::with_capacity(WINDOW_FRAMES * WINDOW_BINS);
        for k in 0..WINDOW_FRAMES {
            for l in 0..WINDOW_BINS {
                data.push(f(k, l));
            }
        }
        FrameMatrix::new(radio, WINDOW_FRAMES, data).unwrap()
    }

    fn random_window(seed: u64) -> FrameMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<Complex64> = (0..WINDOW_FRAMES * WINDOW_BINS)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        window_from(|k, l| vals[k * WINDOW_BINS + l])
    }

    fn brute_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|q| {
                x.iter()
                    .enumerate()
                    .map(|(k, v)| v * Complex64::from_polar(1.0, -2.0 * PI * ((q * k) % n) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    fn column_argmax(s: &Spectrogram, col: usize) -> usize {
        (0..s.rows()).max_by(|a, b| s.get(*a, col).partial_cmp(&s.get(*b, col)).unwrap()).unwrap()
    }

    #[test]
    fn zero_window_gives_zero_spectrograms() {
        let w = window_from(|_, _| Complex64::new(0.0, 0.0));
        assert!(time_spectrogram(&w).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(doppler_spectrogram(&w).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn wrong_shape_rejected() {
        let radio = RadioConfig::default();
        let m = FrameMatrix::zeros(radio, 399);
        assert!(time_spectrogram(&m).is_err());
        assert!(doppler_spectrogram(&m).is_err());
    }

    #[test]
    fn static_path_rows_identical_and_dc_only() {
        let radio = RadioConfig::default();
        let frame = synth_frame(&radio, &[PathModel::fixed(1.0, 3.0)], 0, &NoiseModel::noiseless());
        let w = window_from(|_, l| frame[l]);
        let t = time_spectrogram(&w).unwrap();
        for k in 1..t.rows() {
            assert_eq!(t.row(k), t.row(0));
        }
        let d = doppler_spectrogram(&w).unwrap();
        for q in 1..d.rows() {
            assert!(d.row(q).iter().all(|v| v.abs() < 1e-9));
        }
        assert!(d.row(0).iter().any(|v| *v > 1.0));
    }

    #[test]
    fn tone_lands_in_its_dft_bin() {
        let w = window_from(|k, l| {
            if l == 17 {
                Complex64::from_polar(1.0, 2.0 * PI * 50.0 * k as f64 / 400.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let d = doppler_spectrogram(&w).unwrap();
        assert_eq!(column_argmax(&d, 17), 50);
        let oracle = brute_dft(&w.column(17));
        for q in 0..400 {
            assert!((d.get(q, 17) - oracle[q].norm().ln_1p()).abs() < 1e-9);
        }
    }

    #[test]
    fn fft_matches_brute_force_dft() {
        let w = random_window(4);
        let spectra = doppler_dft(&w);
        for bin in [0usize, 31, 59] {
            let oracle = brute_dft(&w.column(bin));
            for (a, b) in spectra[bin].iter().zip(&oracle) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn one_metre_per_second_peaks_at_bin_49() {
        let radio = RadioConfig::default();
        let mut p = PathModel::fixed(1.0, 3.0);
        p.radial_speed_mps = 1.0;
        let profile = MotionProfile::constant("walk", vec![p], 1.0);
        let w = simulate_activity(&radio, &[], &profile, &NoiseModel::noiseless(), 1.0).unwrap();
        let d = doppler_spectrogram(&w).unwrap();
        let bin = radio.range_to_bin(3.25).round() as usize;
        assert_eq!(column_argmax(&d, bin), 49);
    }

    #[test]
    fn walking_ridge_slope() {
        let radio = RadioConfig::default();
        let (dr, _) = crate::channel::range_resolution(&radio);
        let mut p = PathModel::fixed(1.0, radio.bin_to_range(45.0));
        p.radial_speed_mps = -1.2;
        let profile = MotionProfile::constant("walk", vec![p], 1.0);
        let w = simulate_activity(&radio, &[], &profile, &NoiseModel::noiseless(), 1.0).unwrap();
        let t = time_spectrogram(&w).unwrap();
        let ridge: Vec<f64> = (0..t.rows())
            .map(|k| {
                // Sub-bin centroid of the envelope.
                let row = t.row(k);
                let total: f64 = row.iter().sum();
                row.iter().enumerate().map(|(i, v)| i as f64 * v).sum::<f64>() / total
            })
            .collect();
        let slope = (ridge[399] - ridge[0]) / (399.0 / 400.0);
        let expected = -1.2 / dr;
        assert!((slope - expected).abs() < 0.05 * expected.abs(), "{slope} vs {expected}");
    }

    #[test]
    fn normalize_statistics() {
        let s = time_spectrogram(&random_window(8)).unwrap();
        let n = normalize(&s);
        let len = n.data().len() as f64;
        let mean = n.data().iter().sum::<f64>() / len;
        let std = (n.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((std - 1.0).abs() < 1e-6);
        assert_eq!(n.normalization, Normalization::ZScore);
        let again = normalize(&n);
        for (a, b) in n.data().iter().zip(again.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let flat = Spectrogram::from_raw(vec![4.2; 12], 3, 4, SpectrogramKind::TimeDomain).unwrap();
        assert!(normalize(&flat).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn parseval_per_column() {
        let w = random_window(17);
        let spectra = doppler_dft(&w);
        for bin in 0..WINDOW_BINS {
            let time: f64 = w.column(bin).iter().map(|z| z.norm_sqr()).sum();
            let freq: f64 = spectra[bin].iter().map(|z| z.norm_sqr()).sum::<f64>() / WINDOW_FRAMES as f64;
            assert!((time - freq).abs() <= 1e-9 * time);
        }
    }

    #[test]
    fn conjugation_or_reversal_mirrors_doppler_axis() {
        let w = random_window(23);
        let d = doppler_spectrogram(&w).unwrap();
        let mirror = |q: usize| (WINDOW_FRAMES - q) % WINDOW_FRAMES;

        let conj = window_from(|k, l| w.get(k, l).conj());
        let reversed = window_from(|k, l| w.get((WINDOW_FRAMES - k) % WINDOW_FRAMES, l));
        let both = window_from(|k, l| w.get(WINDOW_FRAMES - 1 - k, l).conj());
        let dc = doppler_spectrogram(&conj).unwrap();
        let dr = doppler_spectrogram(&reversed).unwrap();
        let db = doppler_spectrogram(&both).unwrap();
        for q in 0..WINDOW_FRAMES {
            for l in 0..WINDOW_BINS {
                assert!((dc.get(q, l) - d.get(mirror(q), l)).abs() < 1e-9);
                assert!((dr.get(q, l) - d.get(mirror(q), l)).abs() < 1e-9);
                // Doing both undoes the mirror.
                assert!((db.get(q, l) - d.get(q, l)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn both_spectrograms_share_shape() {
        let (t, d) = featurize(&random_window(2)).unwrap();
        assert_eq!((t.rows(), t.cols()), (400, 60));
        assert_eq!((d.rows(), d.cols()), (400, 60));
        assert_eq!(t.kind, SpectrogramKind::TimeDomain);
        assert_eq!(d.kind, SpectrogramKind::DopplerDomain);
    }
}
