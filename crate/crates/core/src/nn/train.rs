use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Network, Scalar, Tensor};
use crate::error::{Error, Result};

/// One labelled pair of spectrograms, each `[rows, cols, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub time: Tensor<T>,
    pub freq: Tensor<T>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.01, momentum: 0.9, batch_size: 32, epochs: 12, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Samples per partial gradient. Fixed so that the summation order never depends on the
/// number of worker threads.
const REDUCE_CHUNK: usize = 4;

/// Summed loss and summed gradient over `batch`.
pub fn batch_gradient<T: Scalar>(net: &Network<T>, batch: &[&Example<T>]) -> Result<(f64, Vec<T>)> {
    let n = net.param_count();
    let partials: Vec<(f64, Vec<T>)> = batch
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut grad = vec![T::zero(); n];
            let mut loss = 0.0;
            for ex in chunk {
                loss += net.loss_and_gradient(&ex.time, &ex.freq, ex.label, &mut grad)?.to_f64();
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let mut parts = partials.into_iter();
    let (mut loss, mut grad) = parts.next().unwrap_or((0.0, vec![T::zero(); n]));
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += *b;
        }
    }
    Ok((loss, grad))
}

/// Momentum update `v ← μ·v + g`, `w ← w − η·v`.
pub fn sgd_step<T: Scalar>(net: &mut Network<T>, grad: &[T], velocity: &mut [T], learning_rate: f64, momentum: f64) {
    let (lr, mu) = (T::from_f64(learning_rate), T::from_f64(momentum));
    for ((w, v), g) in net.params_mut().iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = mu * *v + *g;
        *w -= lr * *v;
    }
}

/// Mini-batch SGD with momentum. `on_epoch` receives the epoch index and its mean loss.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    data: &[Example<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut velocity = vec![T::zero(); net.param_count()];
    let mut report = TrainReport { epoch_losses: Vec::with_capacity(cfg.epochs), steps: 0 };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_idx, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example<T>> = idx.iter().map(|&i| &data[i]).collect();
            let (loss, mut grad) = batch_gradient(net, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NanLoss { epoch, batch: batch_idx, loss: loss / batch.len() as f64 });
            }
            let scale = T::from_f64(1.0 / batch.len() as f64);
            grad.iter_mut().for_each(|g| *g *= scale);
            sgd_step(net, &grad, &mut velocity, cfg.learning_rate, cfg.momentum);
            total += loss;
            report.steps += 1;
        }
        let mean = total / data.len() as f64;
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(report)
}

/// Mean cross-entropy over `data`.
pub fn evaluate_loss<T: Scalar>(net: &Network<T>, data: &[Example<T>]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empty data set"));
    }
    let refs: Vec<&Example<T>> = data.iter().collect();
    let losses: Vec<f64> = refs
        .par_iter()
        .map(|ex| {
            let p = net.forward(&ex.time, &ex.freq)?;
            Ok(super::ops::cross_entropy(&p, &super::ops::one_hot::<T>(ex.label, p.len())).to_f64())
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BlockSpec, NetworkSpec, Pooling, NUM_CLASSES};
    use rand_distr::{Distribution, Normal};

    fn small_spec() -> NetworkSpec {
        let mut b1 = BlockSpec::new(1, 4, 4);
        b1.dilation = 1;
        let b2 = BlockSpec::new(4, 4, 6);
        NetworkSpec {
            input_rows: 8,
            input_cols: 8,
            time_branch: vec![b1, b2],
            freq_branch: vec![b1, b2],
            head: vec![8, NUM_CLASSES],
            pooling: Pooling::Flatten,
        }
    }

    /// Class `c` lights up row `c` of the time map and column `c` of the frequency map.
    fn separable_set(per_class: usize, seed: u64) -> Vec<Example<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut out = Vec::new();
        for _ in 0..per_class {
            for c in 0..NUM_CLASSES {
                let time = Tensor::from_fn(vec![8, 8, 1], |i| (if i / 8 == c { 2.0 } else { 0.0 }) + noise.sample(&mut rng));
                let freq = Tensor::from_fn(vec![8, 8, 1], |i| (if i % 8 == c { 2.0 } else { 0.0 }) + noise.sample(&mut rng));
                out.push(Example { time, freq, label: c });
            }
        }
        out
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let data = separable_set(6, 1);
        let mut net = Network::<f32>::new(small_spec(), 2).unwrap();
        let before = evaluate_loss(&net, &data).unwrap();
        let cfg = TrainConfig { learning_rate: 0.05, batch_size: 7, epochs: 40, ..TrainConfig::default() };
        let report = train(&mut net, &data, &cfg, |_, _| {}).unwrap();
        let after = evaluate_loss(&net, &data).unwrap();
        assert!(after < 0.5 * before, "{before} -> {after}");
        assert!(report.epoch_losses.last().unwrap() < report.epoch_losses.first().unwrap());
        assert_eq!(report.steps, 40 * 6);
    }

    #[test]
    fn single_step_descends() {
        let data: Vec<Example<f64>> = separable_set(1, 3)
            .into_iter()
            .map(|e| Example { time: e.time.cast(), freq: e.freq.cast(), label: e.label })
            .collect();
        let net = Network::<f64>::new(small_spec(), 4).unwrap();
        for ex in &data {
            let mut stepped = net.clone();
            let mut grad = vec![0.0; net.param_count()];
            let before = net.loss_and_gradient(&ex.time, &ex.freq, ex.label, &mut grad).unwrap();
            let mut velocity = vec![0.0; net.param_count()];
            sgd_step(&mut stepped, &grad, &mut velocity, 1e-3, 0.9);
            let after = evaluate_loss(&stepped, std::slice::from_ref(ex)).unwrap();
            assert!(after < before, "{before} -> {after}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable_set(2, 5);
        let cfg = TrainConfig { batch_size: 5, epochs: 2, seed: 11, ..TrainConfig::default() };
        let run = || {
            let mut net = Network::<f32>::new(small_spec(), 6).unwrap();
            train(&mut net, &data, &cfg, |_, _| {}).unwrap();
            net
        };
        let a = run();
        let b = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(run);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn nan_loss_aborts() {
        let mut data = separable_set(1, 7);
        data[0].time.data_mut()[0] = f32::NAN;
        let mut net = Network::<f32>::new(small_spec(), 8).unwrap();
        let cfg = TrainConfig { batch_size: 7, epochs: 1, ..TrainConfig::default() };
        match train(&mut net, &data, &cfg, |_, _| {}) {
            Err(Error::NanLoss { epoch: 0, .. }) => {}
            other => panic!("expected NanLoss, got {other:?}"),
        }
    }
}
