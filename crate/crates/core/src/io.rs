//! Binary frame-matrix container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "UWBF" | version: u16 | [kind: u16, version ≥ 2] | K: u32 | L: u32
//! | frame_period_s: f64 | carrier_freq_hz: f64 | bandwidth_hz: f64 | adc_interval_s: f64
//! | K·L × (re: f32, im: f32), slow-time major
//! ```
//!
//! Version 1 always holds complex frames. Version 2 adds a kind flag so the same container can
//! carry spectrograms; a paired spectrogram stores the time-domain value in `re` and the Doppler
//! value in `im`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::channel::{FrameMatrix, RadioConfig};
use crate::error::{Error, Result};
use crate::features::{Spectrogram, SpectrogramKind};

pub const FRAME_MAGIC: &[u8; 4] = b"UWBF";
pub const VERSION_FRAMES: u16 = 1;
pub const VERSION_TAGGED: u16 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ContainerKind {
    Frames = 0,
    TimeSpectrogram = 1,
    DopplerSpectrogram = 2,
    PairedSpectrogram = 3,
}

impl ContainerKind {
    fn from_u16(v: u16) -> Result<Self> {
        Ok(match v {
            0 => ContainerKind::Frames,
            1 => ContainerKind::TimeSpectrogram,
            2 => ContainerKind::DopplerSpectrogram,
            3 => ContainerKind::PairedSpectrogram,
            other => return Err(Error::Format(format!("unknown container kind {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: ContainerKind,
    pub rows: usize,
    pub cols: usize,
    pub frame_period_s: f64,
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub adc_interval_s: f64,
    pub samples: Vec<[f32; 2]>,
}

impl Container {
    pub fn from_frames(m: &FrameMatrix) -> Self {
        Container {
            kind: ContainerKind::Frames,
            rows: m.frames(),
            cols: m.bins(),
            frame_period_s: m.frame_period_s,
            carrier_freq_hz: m.radio.carrier_freq_hz,
            bandwidth_hz: m.radio.bandwidth_hz,
            adc_interval_s: m.radio.adc_interval_s,
            samples: m.data().iter().map(|z| [z.re as f32, z.im as f32]).collect(),
        }
    }

    /// Time spectrogram in `re`, Doppler spectrogram in `im`.
    pub fn from_pair(time: &Spectrogram, doppler: &Spectrogram, radio: &RadioConfig) -> Result<Self> {
        if time.kind != SpectrogramKind::TimeDomain || doppler.kind != SpectrogramKind::DopplerDomain {
            return Err(Error::invalid("paired container needs (time, doppler) spectrograms"));
        }
        if time.rows() != doppler.rows() || time.cols() != doppler.cols() {
            return Err(Error::invalid("spectrogram shapes differ"));
        }
        Ok(Container {
            kind: ContainerKind::PairedSpectrogram,
            rows: time.rows(),
            cols: time.cols(),
            frame_period_s: radio.frame_period_s(),
            carrier_freq_hz: radio.carrier_freq_hz,
            bandwidth_hz: radio.bandwidth_hz,
            adc_interval_s: radio.adc_interval_s,
            samples: time
                .data()
                .iter()
                .zip(doppler.data())
                .map(|(t, d)| [*t as f32, *d as f32])
                .collect(),
        })
    }

    pub fn radio(&self) -> RadioConfig {
        RadioConfig {
            carrier_freq_hz: self.carrier_freq_hz,
            bandwidth_hz: self.bandwidth_hz,
            pulse_repetition_hz: 1.0 / self.frame_period_s,
            adc_interval_s: self.adc_interval_s,
            fast_time_bins: self.cols,
            ..RadioConfig::default()
        }
    }

    pub fn to_frames(&self) -> Result<FrameMatrix> {
        if self.kind != ContainerKind::Frames {
            return Err(Error::Format(format!("expected complex frames, found {:?}", self.kind)));
        }
        let data = self
            .samples
            .iter()
            .map(|[re, im]| Complex64::new(*re as f64, *im as f64))
            .collect();
        let mut m = FrameMatrix::new(self.radio(), self.rows, data)?;
        m.frame_period_s = self.frame_period_s;
        Ok(m)
    }

    pub fn to_pair(&self) -> Result<(Spectrogram, Spectrogram)> {
        if self.kind != ContainerKind::PairedSpectrogram {
            return Err(Error::Format(format!("expected paired spectrograms, found {:?}", self.kind)));
        }
        let time = self.samples.iter().map(|s| s[0] as f64).collect();
        let doppler = self.samples.iter().map(|s| s[1] as f64).collect();
        Ok((
            Spectrogram::from_raw(time, self.rows, self.cols, SpectrogramKind::TimeDomain)?,
            Spectrogram::from_raw(doppler, self.rows, self.cols, SpectrogramKind::DopplerDomain)?,
        ))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(48 + self.samples.len() * 8);
        buf.extend_from_slice(FRAME_MAGIC);
        if self.kind == ContainerKind::Frames {
            buf.extend_from_slice(&VERSION_FRAMES.to_le_bytes());
        } else {
            buf.extend_from_slice(&VERSION_TAGGED.to_le_bytes());
            buf.extend_from_slice(&(self.kind as u16).to_le_bytes());
        }
        buf.extend_from_slice(&(self.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in [self.frame_period_s, self.carrier_freq_hz, self.bandwidth_hz, self.adc_interval_s] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for [re, im] in &self.samples {
            buf.extend_from_slice(&re.to_le_bytes());
            buf.extend_from_slice(&im.to_le_bytes());
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != FRAME_MAGIC {
            return Err(Error::Format("missing UWBF magic".into()));
        }
        let kind = match r.u16()? {
            VERSION_FRAMES => ContainerKind::Frames,
            VERSION_TAGGED => ContainerKind::from_u16(r.u16()?)?,
            v => return Err(Error::Format(format!("unsupported UWBF version {v}"))),
        };
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let frame_period_s = r.f64()?;
        let carrier_freq_hz = r.f64()?;
        let bandwidth_hz = r.f64()?;
        let adc_interval_s = r.f64()?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("sample count overflows".into()))?;
        if bytes.len() - r.pos != n * 8 {
            return Err(Error::Format(format!(
                "expected {} sample bytes, found {}",
                n * 8,
                bytes.len() - r.pos
            )));
        }
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            samples.push([r.f32()?, r.f32()?]);
        }
        Ok(Container {
            kind,
            rows,
            cols,
            frame_period_s,
            carrier_freq_hz,
            bandwidth_hz,
            adc_interval_s,
            samples,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.encode())?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }
}

pub fn write_frames(path: impl AsRef<Path>, m: &FrameMatrix) -> Result<()> {
    Container::from_frames(m).write(path)
}

pub fn read_frames(path: impl AsRef<Path>) -> Result<FrameMatrix> {
    Container::read(path)?.to_frames()
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
