//! Run configuration shared by every pipeline stage, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{Activity, RadioConfig};
use crate::dsp::DetectorConfig;
use crate::error::{Error, Result};
use crate::harness::DatasetConfig;
use crate::nn::{BlockSpec, NetworkSpec, Pooling, TrainConfig, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { out_dir: PathBuf::from("out") }
    }
}

/// Scene produced by the `simulate` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub activity: Activity,
    pub environment_id: u32,
    pub start_range_m: f64,
    pub lead_in_s: f64,
    pub duration_s: f64,
    /// +1 walks away from the radio, -1 toward it.
    pub direction: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            activity: Activity::Walking,
            environment_id: 0,
            start_range_m: 4.5,
            lead_in_s: 1.0,
            duration_s: 4.0,
            direction: -1.0,
        }
    }
}

/// Network hyper-parameters; both branches share the same block stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    /// Output channels of each block.
    pub channels: Vec<usize>,
    pub reduce_groups: Vec<usize>,
    /// Hidden FC widths; the 7-way output layer is appended.
    pub hidden: Vec<usize>,
    pub pooling: Pooling,
    pub init_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            kernel: 3,
            dilation: 2,
            stride: 2,
            channels: vec![16, 32, 64],
            reduce_groups: vec![1, 4, 4],
            hidden: vec![128],
            pooling: Pooling::RangeMean,
            init_seed: 1,
        }
    }
}

impl NetworkConfig {
    pub fn to_spec(&self) -> Result<NetworkSpec> {
        if self.channels.len() != self.reduce_groups.len() {
            return Err(Error::Config("network.channels and network.reduce_groups differ in length".into()));
        }
        let mut c_in = 1;
        let branch: Vec<BlockSpec> = self
            .channels
            .iter()
            .zip(&self.reduce_groups)
            .map(|(&c, &g)| {
                let b = BlockSpec {
                    reduce_groups: g,
                    kernel: self.kernel,
                    dilation: self.dilation,
                    stride: self.stride,
                    channels_in: c_in,
                    channels_mid: c,
                    channels_out: c,
                };
                c_in = c;
                b
            })
            .collect();
        let mut head = self.hidden.clone();
        head.push(NUM_CLASSES);
        let spec = NetworkSpec {
            time_branch: branch.clone(),
            freq_branch: branch,
            head,
            pooling: self.pooling,
            ..NetworkSpec::default()
        };
        spec.validate().map_err(|e| Error::Config(format!("network: {e}")))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub runs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { runs: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides the dataset, training and noise seeds when set.
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    pub radio: RadioConfig,
    pub scene: SceneConfig,
    pub detector: DetectorConfig,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub dataset: DatasetConfig,
    pub bench: BenchConfig,
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string().split_whitespace().collect::<Vec<_>>().join(" "))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Seed for dataset generation, falling back to the dataset section.
    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig { seed: self.seed.unwrap_or(self.dataset.seed), ..self.dataset.clone() }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig { seed: self.seed.unwrap_or(self.training.seed), ..self.training.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, r: Result<()>| r.map_err(|e| Error::Config(format!("{section}: {e}")));
        wrap("radio", self.radio.validate())?;
        wrap("detector", self.detector.validate())?;
        wrap("training", self.training.validate())?;
        wrap("dataset", self.dataset.validate())?;
        self.network.to_spec()?;
        if !(self.scene.duration_s > 0.0 && self.scene.start_range_m > 0.0 && self.scene.lead_in_s >= 0.0) {
            return Err(Error::Config("scene: duration and range must be positive".into()));
        }
        if self.bench.runs == 0 {
            return Err(Error::Config("bench: runs must be at least 1".into()));
        }
        Ok(())
    }
}
