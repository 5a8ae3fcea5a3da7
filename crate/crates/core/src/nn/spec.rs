use serde::{Deserialize, Serialize};

use super::ops::out_len;
use crate::error::{Error, Result};

/// Number of activity classes.
pub const NUM_CLASSES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Conv,
    PConv,
    DConv,
    GConv,
    SConv,
    FC,
    ReLU,
    Softmax,
    ChannelSplit,
    Concat,
}

impl OpKind {
    pub const ALL: [OpKind; 10] = [
        OpKind::Conv,
        OpKind::PConv,
        OpKind::DConv,
        OpKind::GConv,
        OpKind::SConv,
        OpKind::FC,
        OpKind::ReLU,
        OpKind::Softmax,
        OpKind::ChannelSplit,
        OpKind::Concat,
    ];

    pub fn code(self) -> u8 {
        OpKind::ALL.iter().position(|k| *k == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<OpKind> {
        OpKind::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Conv => "conv",
            OpKind::PConv => "pconv",
            OpKind::DConv => "dconv",
            OpKind::GConv => "gconv",
            OpKind::SConv => "sconv",
            OpKind::FC => "fc",
            OpKind::ReLU => "relu",
            OpKind::Softmax => "softmax",
            OpKind::ChannelSplit => "split",
            OpKind::Concat => "concat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Padding {
    #[default]
    Same,
}

/// One layer of the network as declared, independent of any weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub op_kind: OpKind,
    pub kernel: usize,
    pub groups: usize,
    pub dilation: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub padding: Padding,
}

impl LayerSpec {
    pub fn new(op_kind: OpKind, kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        LayerSpec {
            op_kind,
            kernel,
            groups: 1,
            dilation: 1,
            stride: 1,
            in_channels,
            out_channels,
            padding: Padding::Same,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilation == 0 || self.stride == 0 || self.groups == 0 {
            return Err(Error::invalid("dilation, stride and groups must be at least 1"));
        }
        let convolutional = matches!(self.op_kind, OpKind::Conv | OpKind::DConv | OpKind::GConv | OpKind::SConv);
        if convolutional && self.kernel.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel {} must be odd", self.kernel)));
        }
        match self.op_kind {
            OpKind::GConv if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) => {
                Err(Error::invalid(format!(
                    "channels {}→{} not divisible by {} groups",
                    self.in_channels, self.out_channels, self.groups
                )))
            }
            OpKind::DConv if self.in_channels != self.out_channels => {
                Err(Error::invalid("depth-wise convolution keeps the channel count"))
            }
            _ => Ok(()),
        }
    }

    /// Shape of the stored weight tensor, or `None` for weight-free layers.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        let (k, ci, co) = (self.kernel, self.in_channels, self.out_channels);
        match self.op_kind {
            OpKind::Conv => Some(vec![k, k, ci, co]),
            OpKind::GConv => Some(vec![k, k, ci / self.groups, co]),
            OpKind::PConv => Some(vec![ci, co]),
            OpKind::DConv => Some(vec![k, k, ci]),
            OpKind::FC => Some(vec![ci, co]),
            OpKind::SConv | OpKind::ReLU | OpKind::Softmax | OpKind::ChannelSplit | OpKind::Concat => None,
        }
    }

    pub fn bias_len(&self) -> usize {
        if self.op_kind == OpKind::FC {
            self.out_channels
        } else {
            0
        }
    }

    pub fn param_count(&self) -> usize {
        let (k, ci, co) = (self.kernel, self.in_channels, self.out_channels);
        match self.op_kind {
            OpKind::Conv => k * k * ci * co,
            OpKind::PConv => ci * co,
            OpKind::DConv => k * k * ci,
            OpKind::GConv => k * k * ci * co / self.groups,
            OpKind::SConv => k * k * ci + ci * co,
            OpKind::FC => ci * co + co,
            OpKind::ReLU | OpKind::Softmax | OpKind::ChannelSplit | OpKind::Concat => 0,
        }
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        match self.op_kind {
            OpKind::FC => (1, 1),
            _ => (out_len(h, self.stride), out_len(w, self.stride)),
        }
    }

    /// Two FLOPs per multiply-accumulate on an `h × w` input (FC ignores the spatial size).
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.output_hw(h, w);
        let pixels = (oh * ow) as u64;
        let (k, ci, co) = (self.kernel as u64, self.in_channels as u64, self.out_channels as u64);
        let macs = match self.op_kind {
            OpKind::Conv => pixels * k * k * ci * co,
            OpKind::GConv => pixels * k * k * (ci / self.groups as u64) * co,
            OpKind::PConv => pixels * ci * co,
            OpKind::DConv => pixels * k * k * ci,
            OpKind::SConv => pixels * (k * k * ci + ci * co),
            OpKind::FC => ci * co,
            OpKind::ReLU | OpKind::Softmax | OpKind::ChannelSplit | OpKind::Concat => 0,
        };
        2 * macs
    }
}

/// Reduce → split → separable transform → merge.
///
/// The first half of the reduced channels goes through the dilated separable convolution and the
/// second half is carried across (subsampled when `stride > 1`); the merge sees
/// `[transformed, carried]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub reduce_groups: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub channels_in: usize,
    pub channels_mid: usize,
    pub channels_out: usize,
}

impl BlockSpec {
    pub fn new(channels_in: usize, channels_mid: usize, channels_out: usize) -> Self {
        BlockSpec { reduce_groups: 1, kernel: 3, dilation: 2, stride: 2, channels_in, channels_mid, channels_out }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels_in == 0 || self.channels_out == 0 {
            return Err(Error::invalid("block channel counts must be positive"));
        }
        if self.channels_mid == 0 || !self.channels_mid.is_multiple_of(2) {
            return Err(Error::invalid(format!("mid channels {} must be even and positive", self.channels_mid)));
        }
        for layer in self.layers() {
            layer.validate()?;
        }
        Ok(())
    }

    pub fn reduce(&self) -> LayerSpec {
        LayerSpec::new(OpKind::GConv, 1, self.channels_in, self.channels_mid).with_groups(self.reduce_groups)
    }

    pub fn depthwise(&self) -> LayerSpec {
        let half = self.channels_mid / 2;
        LayerSpec::new(OpKind::DConv, self.kernel, half, half)
            .with_groups(half)
            .with_dilation(self.dilation)
            .with_stride(self.stride)
    }

    pub fn pointwise(&self) -> LayerSpec {
        let half = self.channels_mid / 2;
        LayerSpec::new(OpKind::PConv, 1, half, half)
    }

    pub fn merge(&self) -> LayerSpec {
        LayerSpec::new(OpKind::PConv, 1, self.channels_mid, self.channels_out)
    }

    /// Weighted layers in storage order.
    pub fn layers(&self) -> [LayerSpec; 4] {
        [self.reduce(), self.depthwise(), self.pointwise(), self.merge()]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerSpec::param_count).sum()
    }
}

/// Feature reduction between the last block and the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Pooling {
    /// Average over the range (width) axis, keeping the row axis.
    #[default]
    RangeMean,
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_rows: usize,
    pub input_cols: usize,
    /// Empty disables the branch.
    pub time_branch: Vec<BlockSpec>,
    pub freq_branch: Vec<BlockSpec>,
    pub head: Vec<usize>,
    pub pooling: Pooling,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        let branch = default_branch(3);
        NetworkSpec {
            input_rows: 400,
            input_cols: 60,
            time_branch: branch.clone(),
            freq_branch: branch,
            head: vec![128, NUM_CLASSES],
            pooling: Pooling::RangeMean,
        }
    }
}

fn default_branch(kernel: usize) -> Vec<BlockSpec> {
    let mut blocks = vec![BlockSpec::new(1, 16, 16), BlockSpec::new(16, 32, 32), BlockSpec::new(32, 64, 64)];
    for b in &mut blocks[1..] {
        b.reduce_groups = 4;
    }
    for b in &mut blocks {
        b.kernel = kernel;
    }
    blocks
}

/// Which branches feed the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branches {
    Both,
    TimeOnly,
    FreqOnly,
}

impl NetworkSpec {
    /// Same layout as the default network, with every block using kernel `k`.
    pub fn with_kernel(kernel: usize) -> Self {
        let branch = default_branch(kernel);
        NetworkSpec { time_branch: branch.clone(), freq_branch: branch, ..NetworkSpec::default() }
    }

    pub fn restricted(&self, branches: Branches) -> Self {
        let mut spec = self.clone();
        match branches {
            Branches::Both => {}
            Branches::TimeOnly => spec.freq_branch.clear(),
            Branches::FreqOnly => spec.time_branch.clear(),
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_rows == 0 || self.input_cols == 0 {
            return Err(Error::invalid("input size must be positive"));
        }
        if self.time_branch.is_empty() && self.freq_branch.is_empty() {
            return Err(Error::invalid("at least one branch is required"));
        }
        for branch in [&self.time_branch, &self.freq_branch] {
            let mut channels = 1;
            for block in branch {
                block.validate()?;
                if block.channels_in != channels {
                    return Err(Error::invalid(format!(
                        "block expects {} input channels, previous stage gives {channels}",
                        block.channels_in
                    )));
                }
                channels = block.channels_out;
            }
        }
        match self.head.last() {
            Some(&NUM_CLASSES) => {}
            _ => return Err(Error::invalid(format!("head must end in {NUM_CLASSES} classes"))),
        }
        if self.head.contains(&0) {
            return Err(Error::invalid("head layer widths must be positive"));
        }
        Ok(())
    }

    /// `(rows, cols, channels)` leaving the last block of a branch.
    pub fn branch_output(&self, branch: &[BlockSpec]) -> (usize, usize, usize) {
        branch.iter().fold((self.input_rows, self.input_cols, 1), |(h, w, _), b| {
            (out_len(h, b.stride), out_len(w, b.stride), b.channels_out)
        })
    }

    pub fn pooled_len(&self, branch: &[BlockSpec]) -> usize {
        if branch.is_empty() {
            return 0;
        }
        let (h, w, c) = self.branch_output(branch);
        match self.pooling {
            Pooling::RangeMean => h * c,
            Pooling::Flatten => h * w * c,
        }
    }

    pub fn head_layers(&self) -> Vec<LayerSpec> {
        let mut width = self.pooled_len(&self.time_branch) + self.pooled_len(&self.freq_branch);
        self.head
            .iter()
            .map(|&out| {
                let layer = LayerSpec::new(OpKind::FC, 1, width, out);
                width = out;
                layer
            })
            .collect()
    }

    /// Every weighted layer with its name and the spatial size it sees, in storage order.
    pub fn weighted_layers(&self) -> Vec<NamedLayer> {
        let mut out = Vec::new();
        for (prefix, branch) in [("time", &self.time_branch), ("freq", &self.freq_branch)] {
            let (mut h, mut w) = (self.input_rows, self.input_cols);
            for (i, block) in branch.iter().enumerate() {
                let (oh, ow) = (out_len(h, block.stride), out_len(w, block.stride));
                let parts = [("reduce", (h, w)), ("dw", (h, w)), ("pw", (oh, ow)), ("merge", (oh, ow))];
                for (layer, (part, input_hw)) in block.layers().into_iter().zip(parts) {
                    out.push(NamedLayer { name: format!("{prefix}.b{}.{part}", i + 1), layer, input_hw });
                }
                (h, w) = (oh, ow);
            }
        }
        for (i, layer) in self.head_layers().into_iter().enumerate() {
            out.push(NamedLayer { name: format!("head.fc{}", i + 1), layer, input_hw: (1, 1) });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedLayer {
    pub name: String,
    pub layer: LayerSpec,
    pub input_hw: (usize, usize),
}
