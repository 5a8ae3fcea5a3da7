use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{
    concat_channels, cross_entropy, dense_backward, dense_forward, depthwise_backward, depthwise_forward,
    grouped_backward, grouped_forward, mean_over_width, mean_over_width_backward, one_hot, out_len,
    relu_backward_slice, relu_slice, softmax, split_channels, subsample, subsample_backward, ConvGeometry,
};
use super::spec::{BlockSpec, LayerSpec, NetworkSpec, OpKind, Pooling, NUM_CLASSES};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Location and shape of one weighted layer inside the flat parameter vector.
///
/// FC layers store `[n_in, n_out]` weights followed by `n_out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub layer: LayerSpec,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub input_hw: (usize, usize),
}

impl ParamEntry {
    pub fn weight_len(&self) -> usize {
        self.shape.iter().product()
    }
}

pub(crate) fn build_layout(spec: &NetworkSpec) -> Vec<ParamEntry> {
    let mut offset = 0;
    spec.weighted_layers()
        .into_iter()
        .map(|named| {
            let shape = named.layer.weight_shape().expect("weighted layer");
            let len = named.layer.param_count();
            let entry = ParamEntry { name: named.name, layer: named.layer, shape, offset, len, input_hw: named.input_hw };
            offset += len;
            entry
        })
        .collect()
}

/// Pooled outputs of each enabled branch, before fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchFeatures<T> {
    pub time: Option<Vec<T>>,
    pub freq: Option<Vec<T>>,
}

struct BlockCache<T> {
    x: Vec<T>,
    a: Vec<T>,
    dz: Vec<T>,
    cat: Vec<T>,
    m: Vec<T>,
    in_hw: (usize, usize),
}

struct BranchCache<T> {
    blocks: Vec<BlockCache<T>>,
    out_dims: (usize, usize, usize),
}

/// Forward pass with every intermediate kept for back-propagation.
pub struct Trace<T> {
    pub features: BranchFeatures<T>,
    pub logits: Vec<T>,
    pub probabilities: Vec<T>,
    time: Option<BranchCache<T>>,
    freq: Option<BranchCache<T>>,
    head_inputs: Vec<Vec<T>>,
    head_pre: Vec<Vec<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn predicted(&self) -> usize {
        argmax(&self.probabilities)
    }

    /// Sign of every ReLU input, in layer order.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut mask = Vec::new();
        for cache in [&self.time, &self.freq].into_iter().flatten() {
            for b in &cache.blocks {
                mask.extend(b.m.iter().map(|v| *v > T::zero()));
            }
        }
        for pre in &self.head_pre {
            mask.extend(pre.iter().map(|v| *v > T::zero()));
        }
        mask
    }
}

pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

struct BlockWeights<'a, T> {
    reduce: &'a [T],
    dw: &'a [T],
    pw: &'a [T],
    merge: &'a [T],
}

fn block_geometry(b: &BlockSpec) -> (ConvGeometry, ConvGeometry) {
    (
        ConvGeometry::new(1, b.reduce_groups, 1, 1),
        ConvGeometry::new(b.kernel, b.channels_mid / 2, b.dilation, b.stride),
    )
}

fn run_block<T: Scalar>(
    b: &BlockSpec,
    w: &BlockWeights<'_, T>,
    x: Vec<T>,
    (h, wd): (usize, usize),
) -> (BlockCache<T>, Vec<T>, (usize, usize)) {
    let (reduce_g, dw_g) = block_geometry(b);
    let half = b.channels_mid / 2;
    let (oh, ow) = (out_len(h, b.stride), out_len(wd, b.stride));
    let r = grouped_forward(&x, (h, wd, b.channels_in), w.reduce, b.channels_mid, reduce_g);
    let (a, carried) = split_channels(&r, b.channels_mid);
    let dz = depthwise_forward(&a, (h, wd, half), w.dw, dw_g);
    let pz = grouped_forward(&dz, (oh, ow, half), w.pw, half, ConvGeometry::new(1, 1, 1, 1));
    let carried = subsample(&carried, (h, wd, half), b.stride);
    let cat = concat_channels(&pz, half, &carried, half);
    let m = grouped_forward(&cat, (oh, ow, b.channels_mid), w.merge, b.channels_out, ConvGeometry::new(1, 1, 1, 1));
    let mut y = m.clone();
    relu_slice(&mut y);
    (BlockCache { x, a, dz, cat, m, in_hw: (h, wd) }, y, (oh, ow))
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

/// Back-propagates through one block, accumulating weight gradients into `grad`
/// (the block's contiguous parameter region).
fn back_block<T: Scalar>(
    b: &BlockSpec,
    w: &BlockWeights<'_, T>,
    cache: &BlockCache<T>,
    mut gy: Vec<T>,
    grad: &mut [T],
    want_input_grad: bool,
) -> Option<Vec<T>> {
    let (reduce_g, dw_g) = block_geometry(b);
    let half = b.channels_mid / 2;
    let (h, wd) = cache.in_hw;
    let (oh, ow) = (out_len(h, b.stride), out_len(wd, b.stride));
    let (g_reduce, rest) = grad.split_at_mut(w.reduce.len());
    let (g_dw, rest) = rest.split_at_mut(w.dw.len());
    let (g_pw, g_merge) = rest.split_at_mut(w.pw.len());
    let point = ConvGeometry::new(1, 1, 1, 1);

    relu_backward_slice(&cache.m, &mut gy);
    let (g_cat, gw) =
        grouped_backward(&cache.cat, (oh, ow, b.channels_mid), w.merge, b.channels_out, point, &gy, true);
    add_into(g_merge, &gw);
    let (g_pz, g_carried) = split_channels(&g_cat.unwrap(), b.channels_mid);
    let (g_dz, gw) = grouped_backward(&cache.dz, (oh, ow, half), w.pw, half, point, &g_pz, true);
    add_into(g_pw, &gw);
    let (g_a, gw) = depthwise_backward(&cache.a, (h, wd, half), w.dw, dw_g, &g_dz.unwrap(), true);
    add_into(g_dw, &gw);
    let g_carried = subsample_backward(&g_carried, (h, wd, half), b.stride);
    let g_r = concat_channels(&g_a.unwrap(), half, &g_carried, half);
    let (gx, gw) =
        grouped_backward(&cache.x, (h, wd, b.channels_in), w.reduce, b.channels_mid, reduce_g, &g_r, want_input_grad);
    add_into(g_reduce, &gw);
    gx
}

fn check_block_weights<T>(spec: &BlockSpec, weights: &[T]) -> Result<()> {
    spec.validate()?;
    if weights.len() != spec.param_count() {
        return Err(Error::invalid(format!(
            "block needs {} weights, got {}",
            spec.param_count(),
            weights.len()
        )));
    }
    Ok(())
}

fn split_block_weights<'a, T>(spec: &BlockSpec, weights: &'a [T]) -> BlockWeights<'a, T> {
    let [r, d, p, _] = spec.layers().map(|l| l.param_count());
    let (reduce, rest) = weights.split_at(r);
    let (dw, rest) = rest.split_at(d);
    let (pw, merge) = rest.split_at(p);
    BlockWeights { reduce, dw, pw, merge }
}

/// One block on an `[H, W, c_in]` input. `weights` holds reduce, depth-wise, point-wise and merge
/// kernels back to back.
pub fn block_forward<T: Scalar>(x: &Tensor<T>, spec: &BlockSpec, weights: &[T]) -> Result<Tensor<T>> {
    check_block_weights(spec, weights)?;
    let (h, w, c) = x.hwc()?;
    if c != spec.channels_in {
        return Err(Error::invalid(format!("block expects {} channels, got {c}", spec.channels_in)));
    }
    let (_, y, (oh, ow)) = run_block(spec, &split_block_weights(spec, weights), x.data().to_vec(), (h, w));
    Tensor::new(vec![oh, ow, spec.channels_out], y)
}

/// Gradients of `Σ gy ⊙ block(x)` with respect to `x` and the block weights.
pub fn block_backward<T: Scalar>(
    x: &Tensor<T>,
    spec: &BlockSpec,
    weights: &[T],
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    check_block_weights(spec, weights)?;
    let (h, w, _) = x.hwc()?;
    let bw = split_block_weights(spec, weights);
    let (cache, y, _) = run_block(spec, &bw, x.data().to_vec(), (h, w));
    if y.len() != gy.len() {
        return Err(Error::invalid("output gradient shape mismatch"));
    }
    let mut grad = vec![T::zero(); weights.len()];
    let gx = back_block(spec, &bw, &cache, gy.data().to_vec(), &mut grad, true).unwrap();
    Ok((Tensor::new(x.shape().to_vec(), gx)?, grad))
}

/// The two-branch classifier with its weights in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    layout: Vec<ParamEntry>,
    params: Vec<T>,
}

impl<T: Scalar> Network<T> {
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layout = build_layout(&spec);
        let n = layout.last().map_or(0, |e| e.offset + e.len);
        Ok(Network { spec, layout, params: vec![T::zero(); n] })
    }

    /// Random initialisation. Layers followed by a ReLU use variance `2 / fan_in`, the linear
    /// layers inside a block and the output layer use `1 / fan_in`; biases start at zero.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut net = Network::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = net.layout.len() - 1;
        for (idx, entry) in net.layout.iter().enumerate() {
            let l = &entry.layer;
            let fan_in = match l.op_kind {
                OpKind::GConv => l.kernel * l.kernel * l.in_channels / l.groups,
                OpKind::DConv => l.kernel * l.kernel,
                _ => l.in_channels,
            };
            let feeds_relu = entry.name.ends_with(".merge") || (l.op_kind == OpKind::FC && idx != last);
            let gain = if feeds_relu { 2.0 } else { 1.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
            let weights = &mut net.params[entry.offset..entry.offset + entry.weight_len()];
            for v in weights.iter_mut() {
                *v = T::from_f64(normal.sample(&mut rng));
            }
        }
        Ok(net)
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<T>) -> Result<Self> {
        let mut net = Network::zeros(spec)?;
        if params.len() != net.params.len() {
            return Err(Error::invalid(format!(
                "network needs {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[ParamEntry] {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.layout.iter().find(|e| e.name == name)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    fn slice(&self, entry: &ParamEntry) -> &[T] {
        &self.params[entry.offset..entry.offset + entry.len]
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let want = [self.spec.input_rows, self.spec.input_cols, 1];
        if x.shape() != want {
            return Err(Error::invalid(format!("input shape {:?}, expected {want:?}", x.shape())));
        }
        Ok(())
    }

    fn branch_blocks(&self, time: bool) -> (&[BlockSpec], usize) {
        if time {
            (&self.spec.time_branch, 0)
        } else {
            (&self.spec.freq_branch, 4 * self.spec.time_branch.len())
        }
    }

    fn block_weights(&self, first_entry: usize) -> BlockWeights<'_, T> {
        let e = &self.layout[first_entry..first_entry + 4];
        BlockWeights { reduce: self.slice(&e[0]), dw: self.slice(&e[1]), pw: self.slice(&e[2]), merge: self.slice(&e[3]) }
    }

    fn run_branch(&self, time: bool, x: &Tensor<T>) -> Result<Option<(BranchCache<T>, Vec<T>)>> {
        let (blocks, first) = self.branch_blocks(time);
        if blocks.is_empty() {
            return Ok(None);
        }
        self.check_input(x)?;
        let mut hw = (self.spec.input_rows, self.spec.input_cols);
        let mut act = x.data().to_vec();
        let mut caches = Vec::with_capacity(blocks.len());
        for (i, b) in blocks.iter().enumerate() {
            let (cache, y, next) = run_block(b, &self.block_weights(first + 4 * i), act, hw);
            caches.push(cache);
            act = y;
            hw = next;
        }
        let dims = (hw.0, hw.1, blocks.last().unwrap().channels_out);
        let pooled = match self.spec.pooling {
            Pooling::RangeMean => mean_over_width(&act, dims),
            Pooling::Flatten => act,
        };
        Ok(Some((BranchCache { blocks: caches, out_dims: dims }, pooled)))
    }

    /// Full forward pass keeping every intermediate result.
    pub fn trace(&self, time: &Tensor<T>, freq: &Tensor<T>) -> Result<Trace<T>> {
        let t = self.run_branch(true, time)?;
        let f = self.run_branch(false, freq)?;
        let (time_cache, time_feat) = t.map_or((None, None), |(c, v)| (Some(c), Some(v)));
        let (freq_cache, freq_feat) = f.map_or((None, None), |(c, v)| (Some(c), Some(v)));
        let mut z = Vec::new();
        z.extend_from_slice(time_feat.as_deref().unwrap_or(&[]));
        z.extend_from_slice(freq_feat.as_deref().unwrap_or(&[]));

        let head = &self.layout[4 * (self.spec.time_branch.len() + self.spec.freq_branch.len())..];
        let mut head_inputs = Vec::with_capacity(head.len());
        let mut head_pre = Vec::with_capacity(head.len().saturating_sub(1));
        let mut act = z;
        for (i, entry) in head.iter().enumerate() {
            let p = self.slice(entry);
            let (w, bias) = p.split_at(entry.weight_len());
            let mut y = dense_forward(&act, w, bias);
            head_inputs.push(act);
            if i + 1 < head.len() {
                head_pre.push(y.clone());
                relu_slice(&mut y);
            }
            act = y;
        }
        let probabilities = softmax(&act);
        Ok(Trace {
            features: BranchFeatures { time: time_feat, freq: freq_feat },
            logits: act,
            probabilities,
            time: time_cache,
            freq: freq_cache,
            head_inputs,
            head_pre,
        })
    }

    /// Class probabilities.
    pub fn forward(&self, time: &Tensor<T>, freq: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.trace(time, freq)?.probabilities)
    }

    pub fn predict(&self, time: &Tensor<T>, freq: &Tensor<T>) -> Result<usize> {
        Ok(self.trace(time, freq)?.predicted())
    }

    pub fn branch_features(&self, time: &Tensor<T>, freq: &Tensor<T>) -> Result<BranchFeatures<T>> {
        Ok(self.trace(time, freq)?.features)
    }

    /// Cross-entropy of one sample; its gradient is added to `grad`.
    pub fn loss_and_gradient(&self, time: &Tensor<T>, freq: &Tensor<T>, label: usize, grad: &mut [T]) -> Result<T> {
        if label >= NUM_CLASSES {
            return Err(Error::invalid(format!("label {label} out of range")));
        }
        if grad.len() != self.params.len() {
            return Err(Error::invalid("gradient buffer length mismatch"));
        }
        let trace = self.trace(time, freq)?;
        let target = one_hot::<T>(label, NUM_CLASSES);
        let loss = cross_entropy(&trace.probabilities, &target);
        let g_logits: Vec<T> = trace.probabilities.iter().zip(&target).map(|(p, y)| *p - *y).collect();
        self.backward(&trace, g_logits, grad);
        Ok(loss)
    }

    /// Back-propagates a gradient on the logits through the whole network.
    pub(crate) fn backward(&self, trace: &Trace<T>, g_logits: Vec<T>, grad: &mut [T]) {
        let head_start = 4 * (self.spec.time_branch.len() + self.spec.freq_branch.len());
        let head = &self.layout[head_start..];
        let mut g = g_logits;
        for (i, entry) in head.iter().enumerate().rev() {
            let p = self.slice(entry);
            let (w, _) = p.split_at(entry.weight_len());
            let (mut gx, gw, gb) = dense_backward(&trace.head_inputs[i], w, &g);
            let region = &mut grad[entry.offset..entry.offset + entry.len];
            let (rw, rb) = region.split_at_mut(entry.weight_len());
            add_into(rw, &gw);
            add_into(rb, &gb);
            if i > 0 {
                relu_backward_slice(&trace.head_pre[i - 1], &mut gx);
            }
            g = gx;
        }
        let time_len = trace.features.time.as_ref().map_or(0, Vec::len);
        let (g_time, g_freq) = g.split_at(time_len);
        for (time, cache, gz) in [(true, &trace.time, g_time), (false, &trace.freq, g_freq)] {
            let Some(cache) = cache else { continue };
            let (blocks, first) = self.branch_blocks(time);
            let mut gy = match self.spec.pooling {
                Pooling::RangeMean => mean_over_width_backward(gz, cache.out_dims),
                Pooling::Flatten => gz.to_vec(),
            };
            for (i, b) in blocks.iter().enumerate().rev() {
                let e0 = &self.layout[first + 4 * i];
                let e3 = &self.layout[first + 4 * i + 3];
                let region = &mut grad[e0.offset..e3.offset + e3.len];
                match back_block(b, &self.block_weights(first + 4 * i), &cache.blocks[i], gy, region, i > 0) {
                    Some(gx) => gy = gx,
                    None => break,
                }
            }
        }
    }
}
