//! Scripted motion: piecewise-constant radial speed and micro-motion per reflector.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PathModel;
use crate::error::{Error, Result};

/// Replacement values for one path during one segment. Unset fields take the base path's value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathOverride {
    pub path: usize,
    #[serde(default)]
    pub radial_speed_mps: Option<f64>,
    #[serde(default)]
    pub micro_amplitude_m: Option<f64>,
    #[serde(default)]
    pub micro_freq_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration_s: f64,
    #[serde(default)]
    pub overrides: Vec<PathOverride>,
}

/// Moving reflectors plus their timeline. Frames beyond the last segment keep its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionProfile {
    pub label: String,
    #[serde(default)]
    pub description: String,
    /// Initial state of every moving reflector.
    pub paths: Vec<PathModel>,
    pub segments: Vec<Segment>,
}

impl MotionProfile {
    pub fn stationary(label: &str, paths: Vec<PathModel>) -> Self {
        MotionProfile {
            label: label.to_string(),
            description: String::new(),
            paths,
            segments: vec![Segment { duration_s: 1.0, overrides: vec![] }],
        }
    }

    /// Base paths unchanged for `duration_s`.
    pub fn constant(label: &str, paths: Vec<PathModel>, duration_s: f64) -> Self {
        MotionProfile {
            segments: vec![Segment { duration_s, overrides: vec![] }],
            ..Self::stationary(label, paths)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::invalid(format!("profile '{}' has no segments", self.label)));
        }
        for p in &self.paths {
            p.validate()?;
        }
        for seg in &self.segments {
            if !(seg.duration_s > 0.0 && seg.duration_s.is_finite()) {
                return Err(Error::invalid(format!(
                    "profile '{}': segment durations must be positive",
                    self.label
                )));
            }
            for o in &seg.overrides {
                if o.path >= self.paths.len() {
                    return Err(Error::invalid(format!(
                        "profile '{}': override targets path {} of {}",
                        self.label,
                        o.path,
                        self.paths.len()
                    )));
                }
                if o.micro_amplitude_m.is_some_and(|v| v < 0.0)
                    || o.micro_freq_hz.is_some_and(|v| v < 0.0)
                {
                    return Err(Error::invalid("micro-motion overrides must be non-negative"));
                }
            }
        }
        Ok(())
    }

    pub fn total_duration_s(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    /// Exclusive end frame of every segment.
    pub(crate) fn segment_end_frames(&self, frame_rate_hz: f64) -> Vec<usize> {
        let mut t = 0.0;
        self.segments
            .iter()
            .map(|s| {
                t += s.duration_s;
                (t * frame_rate_hz).round() as usize
            })
            .collect()
    }

    /// Path parameters in effect during segment `index`.
    pub fn params_in_segment(&self, index: usize) -> Vec<PathModel> {
        let mut params = self.paths.clone();
        if let Some(seg) = self.segments.get(index) {
            for o in &seg.overrides {
                let p = &mut params[o.path];
                if let Some(v) = o.radial_speed_mps {
                    p.radial_speed_mps = v;
                }
                if let Some(v) = o.micro_amplitude_m {
                    p.micro_amplitude_m = v;
                }
                if let Some(v) = o.micro_freq_hz {
                    p.micro_freq_hz = v;
                }
            }
        }
        params
    }
}

/// The seven activity classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Bending,
    Falling,
    LyingDown,
    StandingUp,
    SittingDown,
    SquattingDown,
    Walking,
}

/// Per-sample variation applied on top of an activity's nominal script.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptParams {
    pub start_range_m: f64,
    pub torso_attenuation: f64,
    /// Stationary time before the activity starts.
    pub lead_in_s: f64,
    pub speed_scale: f64,
    pub duration_scale: f64,
    /// +1 walks away from the radio, -1 toward it. Only walking uses it.
    pub direction: f64,
}

// (duration, torso speed, limb speed, limb micro amplitude, limb micro frequency)
type Phase = (f64, f64, f64, f64, f64);

const TORSO_BREATHING_M: f64 = 0.005;
const TORSO_BREATHING_HZ: f64 = 0.3;
const REST_S: f64 = 1.0;

impl Activity {
    pub const ALL: [Activity; 7] = [
        Activity::Bending,
        Activity::Falling,
        Activity::LyingDown,
        Activity::StandingUp,
        Activity::SittingDown,
        Activity::SquattingDown,
        Activity::Walking,
    ];

    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|a| *a == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Activity> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activity::Bending => "bending",
            Activity::Falling => "falling",
            Activity::LyingDown => "lying_down",
            Activity::StandingUp => "standing_up",
            Activity::SittingDown => "sitting_down",
            Activity::SquattingDown => "squatting_down",
            Activity::Walking => "walking",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Activity::Bending => "B",
            Activity::Falling => "F",
            Activity::LyingDown => "L",
            Activity::StandingUp => "SU",
            Activity::SittingDown => "SD",
            Activity::SquattingDown => "SQ",
            Activity::Walking => "W",
        }
    }

    /// Nominal motion phases after the lead-in. Positive speeds move toward the floor.
    fn phases(self, direction: f64) -> Vec<Phase> {
        match self {
            Activity::Bending => vec![
                (0.35, 0.6, 0.1, 0.010, 1.0),
                (0.15, 0.0, 0.0, 0.005, 1.0),
                (0.35, -0.6, -0.1, 0.010, 1.0),
            ],
            Activity::Falling => vec![(0.3, 2.5, 2.2, 0.030, 3.0), (0.6, 0.0, 0.0, 0.002, 0.5)],
            Activity::LyingDown => vec![(0.4, 0.45, 0.3, 0.010, 1.0), (0.45, 1.0, 0.6, 0.015, 1.5)],
            Activity::StandingUp => vec![(0.6, -0.75, -0.4, 0.010, 1.2)],
            Activity::SittingDown => vec![(0.6, 0.7, 0.35, 0.010, 1.2)],
            Activity::SquattingDown => vec![(0.4, 1.1, 0.9, 0.020, 2.5)],
            Activity::Walking => vec![(3.0, direction, direction, 0.040, 1.8)],
        }
    }

    /// Torso displacement over the whole script, for keeping trajectories inside the window.
    pub fn displacement_m(self, p: &ScriptParams) -> f64 {
        self.phases(p.direction)
            .iter()
            .map(|(d, v, ..)| d * p.duration_scale * v * p.speed_scale)
            .sum::<f64>()
    }

    /// Three reflectors (torso and two limbs) following this activity's script, then at rest.
    pub fn script_with(self, p: &ScriptParams) -> MotionProfile {
        let torso = PathModel {
            attenuation: p.torso_attenuation,
            range_m: p.start_range_m,
            radial_speed_mps: 0.0,
            micro_amplitude_m: TORSO_BREATHING_M,
            micro_freq_hz: TORSO_BREATHING_HZ,
        };
        let limb = |scale: f64, offset: f64| PathModel {
            attenuation: p.torso_attenuation * scale,
            range_m: p.start_range_m + offset,
            radial_speed_mps: 0.0,
            micro_amplitude_m: 0.0,
            micro_freq_hz: 0.0,
        };
        let paths = vec![torso, limb(0.35, 0.25), limb(0.25, 0.6)];

        let mut segments = Vec::new();
        if p.lead_in_s > 0.0 {
            segments.push(Segment { duration_s: p.lead_in_s, overrides: vec![] });
        }
        for (dur, torso_v, limb_v, micro_a, micro_f) in self.phases(p.direction) {
            let limb_override = |path: usize, speed: f64| PathOverride {
                path,
                radial_speed_mps: Some(speed * p.speed_scale),
                micro_amplitude_m: Some(micro_a),
                micro_freq_hz: Some(micro_f * p.speed_scale),
            };
            segments.push(Segment {
                duration_s: dur * p.duration_scale,
                overrides: vec![
                    PathOverride {
                        path: 0,
                        radial_speed_mps: Some(torso_v * p.speed_scale),
                        ..Default::default()
                    },
                    limb_override(1, limb_v),
                    limb_override(2, 0.5 * (torso_v + limb_v)),
                ],
            });
        }
        segments.push(Segment { duration_s: REST_S, overrides: vec![] });
        MotionProfile {
            label: self.as_str().to_string(),
            description: format!("{} starting at {:.2} m", self.as_str(), p.start_range_m),
            paths,
            segments,
        }
    }

    /// Nominal script with no per-sample variation.
    pub fn script(self, start_range_m: f64, torso_attenuation: f64, lead_in_s: f64) -> MotionProfile {
        self.script_with(&ScriptParams {
            start_range_m,
            torso_attenuation,
            lead_in_s,
            speed_scale: 1.0,
            duration_scale: 1.0,
            direction: -1.0,
        })
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activity::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == s || a.short().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown activity '{s}'")))
    }
}
