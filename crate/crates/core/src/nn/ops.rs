//! Convolution variants, activations and their gradients.
//!
//! The `*_backward` functions take the forward input and the gradient of the loss with respect
//! to the forward output, and return gradients for the input and the weights.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Spatial hyper-parameters shared by every convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub groups: usize,
    pub dilation: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, groups: usize, dilation: usize, stride: usize) -> Self {
        ConvGeometry { kernel, groups, dilation, stride }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel {} must be odd for same padding", self.kernel)));
        }
        if self.groups == 0 || self.dilation == 0 || self.stride == 0 {
            return Err(Error::invalid("groups, dilation and stride must be at least 1"));
        }
        Ok(())
    }

    fn radius(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Input coordinate read by output `i` through tap `l`, if it lies inside `0..n`.
    #[inline]
    fn source(&self, i: usize, l: usize, n: usize) -> Option<usize> {
        let pos = (i * self.stride + l * self.dilation) as isize - (self.radius() * self.dilation) as isize;
        if pos >= 0 && (pos as usize) < n {
            Some(pos as usize)
        } else {
            None
        }
    }
}

/// Output length of a same-padded axis of length `n` at stride `s`.
pub fn out_len(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yo, xo) in y.iter_mut().zip(x) {
        *yo += a * *xo;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

// ---------------------------------------------------------------------------------------------
// Slice kernels.

/// Grouped convolution. `x` is `[h, w, cin]`, `wt` is `[k, k, cin/G, cout]`.
pub(crate) fn grouped_forward<T: Scalar>(
    x: &[T],
    (h, w, cin): (usize, usize, usize),
    wt: &[T],
    cout: usize,
    g: ConvGeometry,
) -> Vec<T> {
    let (oh, ow) = (out_len(h, g.stride), out_len(w, g.stride));
    let (cin_g, cout_g) = (cin / g.groups, cout / g.groups);
    let k = g.kernel;
    let mut y = vec![T::zero(); oh * ow * cout];
    for i in 0..oh {
        for j in 0..ow {
            let ys = &mut y[(i * ow + j) * cout..(i * ow + j + 1) * cout];
            for l in 0..k {
                let Some(ii) = g.source(i, l, h) else { continue };
                for m in 0..k {
                    let Some(jj) = g.source(j, m, w) else { continue };
                    let xs = &x[(ii * w + jj) * cin..(ii * w + jj + 1) * cin];
                    let tap = &wt[(l * k + m) * cin_g * cout..(l * k + m + 1) * cin_g * cout];
                    for grp in 0..g.groups {
                        let yg = &mut ys[grp * cout_g..(grp + 1) * cout_g];
                        for c in 0..cin_g {
                            let row = &tap[c * cout + grp * cout_g..c * cout + (grp + 1) * cout_g];
                            axpy(yg, xs[grp * cin_g + c], row);
                        }
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn grouped_backward<T: Scalar>(
    x: &[T],
    (h, w, cin): (usize, usize, usize),
    wt: &[T],
    cout: usize,
    g: ConvGeometry,
    gy: &[T],
    want_input_grad: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let (oh, ow) = (out_len(h, g.stride), out_len(w, g.stride));
    let (cin_g, cout_g) = (cin / g.groups, cout / g.groups);
    let k = g.kernel;
    let mut gw = vec![T::zero(); wt.len()];
    let mut gx = want_input_grad.then(|| vec![T::zero(); x.len()]);
    for i in 0..oh {
        for j in 0..ow {
            let gys = &gy[(i * ow + j) * cout..(i * ow + j + 1) * cout];
            for l in 0..k {
                let Some(ii) = g.source(i, l, h) else { continue };
                for m in 0..k {
                    let Some(jj) = g.source(j, m, w) else { continue };
                    let px = (ii * w + jj) * cin;
                    let base = (l * k + m) * cin_g * cout;
                    for grp in 0..g.groups {
                        let gyg = &gys[grp * cout_g..(grp + 1) * cout_g];
                        for c in 0..cin_g {
                            let off = base + c * cout + grp * cout_g;
                            let xv = x[px + grp * cin_g + c];
                            axpy(&mut gw[off..off + cout_g], xv, gyg);
                            if let Some(gx) = gx.as_mut() {
                                gx[px + grp * cin_g + c] += dot(&wt[off..off + cout_g], gyg);
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw)
}

/// Depth-wise convolution. `x` is `[h, w, c]`, `wt` is `[k, k, c]`.
pub(crate) fn depthwise_forward<T: Scalar>(
    x: &[T],
    (h, w, c): (usize, usize, usize),
    wt: &[T],
    g: ConvGeometry,
) -> Vec<T> {
    let (oh, ow) = (out_len(h, g.stride), out_len(w, g.stride));
    let k = g.kernel;
    let mut y = vec![T::zero(); oh * ow * c];
    for i in 0..oh {
        for j in 0..ow {
            let ys = &mut y[(i * ow + j) * c..(i * ow + j + 1) * c];
            for l in 0..k {
                let Some(ii) = g.source(i, l, h) else { continue };
                for m in 0..k {
                    let Some(jj) = g.source(j, m, w) else { continue };
                    let xs = &x[(ii * w + jj) * c..(ii * w + jj + 1) * c];
                    let tap = &wt[(l * k + m) * c..(l * k + m + 1) * c];
                    for ((yo, xv), wv) in ys.iter_mut().zip(xs).zip(tap) {
                        *yo += *xv * *wv;
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn depthwise_backward<T: Scalar>(
    x: &[T],
    (h, w, c): (usize, usize, usize),
    wt: &[T],
    g: ConvGeometry,
    gy: &[T],
    want_input_grad: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let (oh, ow) = (out_len(h, g.stride), out_len(w, g.stride));
    let k = g.kernel;
    let mut gw = vec![T::zero(); wt.len()];
    let mut gx = want_input_grad.then(|| vec![T::zero(); x.len()]);
    for i in 0..oh {
        for j in 0..ow {
            let gys = &gy[(i * ow + j) * c..(i * ow + j + 1) * c];
            for l in 0..k {
                let Some(ii) = g.source(i, l, h) else { continue };
                for m in 0..k {
                    let Some(jj) = g.source(j, m, w) else { continue };
                    let px = (ii * w + jj) * c;
                    let tap = (l * k + m) * c;
                    let xs = &x[px..px + c];
                    for ((gwv, xv), gv) in gw[tap..tap + c].iter_mut().zip(xs).zip(gys) {
                        *gwv += *xv * *gv;
                    }
                    if let Some(gx) = gx.as_mut() {
                        for ((gxv, wv), gv) in gx[px..px + c].iter_mut().zip(&wt[tap..tap + c]).zip(gys) {
                            *gxv += *wv * *gv;
                        }
                    }
                }
            }
        }
    }
    (gx, gw)
}

/// Keeps every `stride`-th pixel on both axes.
pub(crate) fn subsample<T: Scalar>(x: &[T], (h, w, c): (usize, usize, usize), stride: usize) -> Vec<T> {
    if stride == 1 {
        return x.to_vec();
    }
    let (oh, ow) = (out_len(h, stride), out_len(w, stride));
    let mut y = Vec::with_capacity(oh * ow * c);
    for i in 0..oh {
        for j in 0..ow {
            let px = (i * stride * w + j * stride) * c;
            y.extend_from_slice(&x[px..px + c]);
        }
    }
    y
}

pub(crate) fn subsample_backward<T: Scalar>(gy: &[T], (h, w, c): (usize, usize, usize), stride: usize) -> Vec<T> {
    if stride == 1 {
        return gy.to_vec();
    }
    let ow = out_len(w, stride);
    let mut gx = vec![T::zero(); h * w * c];
    for i in 0..out_len(h, stride) {
        for j in 0..ow {
            let px = (i * stride * w + j * stride) * c;
            gx[px..px + c].copy_from_slice(&gy[(i * ow + j) * c..(i * ow + j + 1) * c]);
        }
    }
    gx
}

/// Splits `[P, c]` into `[P, c/2]` halves.
pub(crate) fn split_channels<T: Scalar>(x: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let half = c / 2;
    let pixels = x.len() / c;
    let mut a = Vec::with_capacity(pixels * half);
    let mut b = Vec::with_capacity(pixels * (c - half));
    for px in x.chunks_exact(c) {
        a.extend_from_slice(&px[..half]);
        b.extend_from_slice(&px[half..]);
    }
    (a, b)
}

pub(crate) fn concat_channels<T: Scalar>(a: &[T], ca: usize, b: &[T], cb: usize) -> Vec<T> {
    let pixels = a.len() / ca;
    debug_assert_eq!(pixels, b.len() / cb);
    let mut y = Vec::with_capacity(a.len() + b.len());
    for p in 0..pixels {
        y.extend_from_slice(&a[p * ca..(p + 1) * ca]);
        y.extend_from_slice(&b[p * cb..(p + 1) * cb]);
    }
    y
}

/// Mean over the width (fast-time) axis: `[h, w, c]` → `[h, c]`.
pub(crate) fn mean_over_width<T: Scalar>(x: &[T], (h, w, c): (usize, usize, usize)) -> Vec<T> {
    let scale = T::from_f64(1.0 / w as f64);
    let mut y = vec![T::zero(); h * c];
    for i in 0..h {
        let yr = &mut y[i * c..(i + 1) * c];
        for j in 0..w {
            for (yo, xv) in yr.iter_mut().zip(&x[(i * w + j) * c..(i * w + j + 1) * c]) {
                *yo += *xv;
            }
        }
        yr.iter_mut().for_each(|v| *v *= scale);
    }
    y
}

pub(crate) fn mean_over_width_backward<T: Scalar>(gy: &[T], (h, w, c): (usize, usize, usize)) -> Vec<T> {
    let scale = T::from_f64(1.0 / w as f64);
    let mut gx = Vec::with_capacity(h * w * c);
    for i in 0..h {
        let g: Vec<T> = gy[i * c..(i + 1) * c].iter().map(|v| *v * scale).collect();
        for _ in 0..w {
            gx.extend_from_slice(&g);
        }
    }
    gx
}

/// `y = x·W + b` with `W` stored `[n_in, n_out]`.
pub(crate) fn dense_forward<T: Scalar>(x: &[T], wt: &[T], bias: &[T]) -> Vec<T> {
    let n_out = bias.len();
    let mut y = bias.to_vec();
    for (i, xv) in x.iter().enumerate() {
        if *xv != T::zero() {
            axpy(&mut y, *xv, &wt[i * n_out..(i + 1) * n_out]);
        }
    }
    y
}

/// Returns `(g_x, g_W, g_b)`.
pub(crate) fn dense_backward<T: Scalar>(x: &[T], wt: &[T], gy: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n_out = gy.len();
    let mut gw = vec![T::zero(); wt.len()];
    let mut gx = vec![T::zero(); x.len()];
    for (i, xv) in x.iter().enumerate() {
        let row = i * n_out..(i + 1) * n_out;
        if *xv != T::zero() {
            axpy(&mut gw[row.clone()], *xv, gy);
        }
        gx[i] = dot(&wt[row], gy);
    }
    (gx, gw, gy.to_vec())
}

pub(crate) fn relu_slice<T: Scalar>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `g` where the forward pre-activation was not positive.
pub(crate) fn relu_backward_slice<T: Scalar>(pre: &[T], g: &mut [T]) {
    for (gv, p) in g.iter_mut().zip(pre) {
        if *p <= T::zero() {
            *gv = T::zero();
        }
    }
}

// ---------------------------------------------------------------------------------------------
// Tensor-level operations.

fn check_kernel<T: Scalar>(w: &Tensor<T>, rank: usize, what: &str) -> Result<()> {
    if w.shape().len() != rank {
        return Err(Error::invalid(format!("{what} kernel must have rank {rank}, got {:?}", w.shape())));
    }
    Ok(())
}

/// Grouped (and, with `groups = 1`, full) convolution with kernel `[k, k, c_in/G, c_out]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, geometry: ConvGeometry) -> Result<Tensor<T>> {
    let (h, wd, cin) = x.hwc()?;
    check_kernel(w, 4, "convolution")?;
    geometry.validate()?;
    let s = w.shape();
    let (k, cin_g, cout) = (s[0], s[2], s[3]);
    if s[1] != k || k != geometry.kernel {
        return Err(Error::invalid(format!("kernel shape {s:?} does not match k = {}", geometry.kernel)));
    }
    let g = geometry.groups;
    if cin % g != 0 || cout % g != 0 {
        return Err(Error::invalid(format!("channels {cin}→{cout} not divisible by {g} groups")));
    }
    if cin_g * g != cin {
        return Err(Error::invalid(format!(
            "kernel expects {} input channels, input has {cin}",
            cin_g * g
        )));
    }
    let y = grouped_forward(x.data(), (h, wd, cin), w.data(), cout, geometry);
    Tensor::new(vec![out_len(h, geometry.stride), out_len(wd, geometry.stride), cout], y)
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    geometry: ConvGeometry,
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let y = conv2d(x, w, geometry)?;
    if y.shape() != gy.shape() {
        return Err(Error::invalid("output gradient shape mismatch"));
    }
    let (h, wd, cin) = x.hwc()?;
    let cout = w.shape()[3];
    let (gx, gw) = grouped_backward(x.data(), (h, wd, cin), w.data(), cout, geometry, gy.data(), true);
    Ok((Tensor::new(x.shape().to_vec(), gx.unwrap())?, Tensor::new(w.shape().to_vec(), gw)?))
}

/// Standard convolution, stride 1.
pub fn conv<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dilation: usize) -> Result<Tensor<T>> {
    conv2d(x, w, ConvGeometry::new(w.shape().first().copied().unwrap_or(0), 1, dilation, 1))
}

/// Grouped convolution, stride 1.
pub fn gconv<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, groups: usize, dilation: usize) -> Result<Tensor<T>> {
    let k = w.shape().first().copied().unwrap_or(0);
    conv2d(x, w, ConvGeometry::new(k, groups, dilation, 1))
}

/// Point-wise convolution with weights `[c_in, c_out]`.
pub fn pconv<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, wd, cin) = x.hwc()?;
    check_kernel(w, 2, "point-wise")?;
    if w.shape()[0] != cin {
        return Err(Error::invalid(format!("point-wise kernel expects {} channels, input has {cin}", w.shape()[0])));
    }
    let cout = w.shape()[1];
    let y = grouped_forward(x.data(), (h, wd, cin), w.data(), cout, ConvGeometry::new(1, 1, 1, 1));
    Tensor::new(vec![h, wd, cout], y)
}

pub fn pconv_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, gy: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let y = pconv(x, w)?;
    if y.shape() != gy.shape() {
        return Err(Error::invalid("output gradient shape mismatch"));
    }
    let (h, wd, cin) = x.hwc()?;
    let (gx, gw) =
        grouped_backward(x.data(), (h, wd, cin), w.data(), w.shape()[1], ConvGeometry::new(1, 1, 1, 1), gy.data(), true);
    Ok((Tensor::new(x.shape().to_vec(), gx.unwrap())?, Tensor::new(w.shape().to_vec(), gw)?))
}

/// Depth-wise convolution with weights `[k, k, c]`.
pub fn dconv<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dilation: usize) -> Result<Tensor<T>> {
    dconv_strided(x, w, dilation, 1)
}

pub fn dconv_strided<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dilation: usize, stride: usize) -> Result<Tensor<T>> {
    let (h, wd, c) = x.hwc()?;
    check_kernel(w, 3, "depth-wise")?;
    let s = w.shape();
    if s[2] != c || s[0] != s[1] {
        return Err(Error::invalid(format!("depth-wise kernel {s:?} does not fit {c} channels")));
    }
    let g = ConvGeometry::new(s[0], c, dilation, stride);
    g.validate()?;
    let y = depthwise_forward(x.data(), (h, wd, c), w.data(), g);
    Tensor::new(vec![out_len(h, stride), out_len(wd, stride), c], y)
}

pub fn dconv_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dilation: usize,
    stride: usize,
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let y = dconv_strided(x, w, dilation, stride)?;
    if y.shape() != gy.shape() {
        return Err(Error::invalid("output gradient shape mismatch"));
    }
    let (h, wd, c) = x.hwc()?;
    let g = ConvGeometry::new(w.shape()[0], c, dilation, stride);
    let (gx, gw) = depthwise_backward(x.data(), (h, wd, c), w.data(), g, gy.data(), true);
    Ok((Tensor::new(x.shape().to_vec(), gx.unwrap())?, Tensor::new(w.shape().to_vec(), gw)?))
}

/// Depth-wise separable convolution: `pconv(w_p, dconv(w_d, x))`.
pub fn sconv<T: Scalar>(x: &Tensor<T>, w_d: &Tensor<T>, w_p: &Tensor<T>, dilation: usize) -> Result<Tensor<T>> {
    pconv(&dconv(x, w_d, dilation)?, w_p)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    relu_slice(y.data_mut());
    y
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    let mut g = gy.clone();
    relu_backward_slice(x.data(), g.data_mut());
    g
}

pub fn softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let m = x.iter().copied().fold(x[0], T::max);
    let e: Vec<T> = x.iter().map(|v| (*v - m).exp()).collect();
    let total: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Smallest probability passed to the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-Σ y_c log max(p_c, 1e-12)` for a probability vector `p` and one-hot (or soft) label `y`.
pub fn cross_entropy<T: Scalar>(p: &[T], y: &[T]) -> T {
    let floor = T::from_f64(PROB_FLOOR);
    -p.iter()
        .zip(y)
        .filter(|(_, t)| **t != T::zero())
        .map(|(pv, t)| *t * pv.max(floor).ln())
        .sum::<T>()
}

pub fn one_hot<T: Scalar>(label: usize, classes: usize) -> Vec<T> {
    (0..classes).map(|c| if c == label { T::one() } else { T::zero() }).collect()
}

pub fn channel_split<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w, c) = x.hwc()?;
    if c % 2 != 0 {
        return Err(Error::invalid(format!("cannot split {c} channels in half")));
    }
    let (a, b) = split_channels(x.data(), c);
    Ok((Tensor::new(vec![h, w, c / 2], a)?, Tensor::new(vec![h, w, c / 2], b)?))
}

pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ha, wa, ca) = a.hwc()?;
    let (hb, wb, cb) = b.hwc()?;
    if (ha, wa) != (hb, wb) {
        return Err(Error::invalid("concat needs matching spatial shapes"));
    }
    Tensor::new(vec![ha, wa, ca + cb], concat_channels(a.data(), ca, b.data(), cb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct evaluation of the grouped convolution sum, one output value at a time.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, groups: usize, d: usize, s: usize) -> Tensor<f64> {
        let (h, wd, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (k, cin_g, cout) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let cout_g = cout / groups;
        let r = (k / 2) as isize;
        let (oh, ow) = (h.div_ceil(s), wd.div_ceil(s));
        let mut y = vec![0.0; oh * ow * cout];
        for i in 0..oh {
            for j in 0..ow {
                for o in 0..cout {
                    let g = o / cout_g;
                    let mut acc = 0.0;
                    for l in 0..k {
                        for m in 0..k {
                            for c in 0..cin_g {
                                let ii = (i * s) as isize + d as isize * (l as isize - r);
                                let jj = (j * s) as isize + d as isize * (m as isize - r);
                                if ii < 0 || jj < 0 || ii >= h as isize || jj >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[(ii as usize * wd + jj as usize) * cin + g * cin_g + c];
                                acc += w.data()[((l * k + m) * cin_g + c) * cout + o] * xv;
                            }
                        }
                    }
                    y[(i * ow + j) * cout + o] = acc;
                }
            }
        }
        t(vec![oh, ow, cout], y)
    }

    #[test]
    fn identity_kernels() {
        let x = Tensor::<f64>::from_fn(vec![4, 5, 3], |i| i as f64 * 0.1 - 0.7);
        let mut eye = vec![0.0; 9];
        for c in 0..3 {
            eye[c * 3 + c] = 1.0;
        }
        assert_eq!(conv(&x, &t(vec![1, 1, 3, 3], eye.clone()), 1).unwrap(), x);
        assert_eq!(pconv(&x, &t(vec![3, 3], eye.clone())).unwrap(), x);
        let mut delta = vec![0.0; 27];
        for c in 0..3 {
            delta[4 * 3 + c] = 1.0;
        }
        let wd = t(vec![3, 3, 3], delta);
        assert_eq!(dconv(&x, &wd, 2).unwrap(), x);
        assert_eq!(sconv(&x, &wd, &t(vec![3, 3], eye), 1).unwrap(), x);
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::<f64>::from_fn(vec![5, 5, 1], |_| 1.0);
        let y = conv(&x, &t(vec![3, 3, 1, 1], vec![1.0; 9]), 1).unwrap();
        assert_eq!(y.shape(), &[5, 5, 1]);
        assert_eq!(y.data()[2 * 5 + 2], 9.0);
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(vec![6, 6, 4], &mut rng);
        let w = rand_tensor(vec![3, 3, 4, 8], &mut rng);
        for d in 1..=3 {
            assert!(conv(&x, &w, d).unwrap().max_abs_diff(&naive(&x, &w, 1, d, 1)) < 1e-12);
        }
        let wg = rand_tensor(vec![5, 5, 2, 6], &mut rng);
        let y = conv2d(&x, &wg, ConvGeometry::new(5, 2, 2, 2)).unwrap();
        assert!(y.max_abs_diff(&naive(&x, &wg, 2, 2, 2)) < 1e-12);
    }

    #[test]
    fn variant_equivalences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(vec![7, 5, 6], &mut rng);
        let wp = rand_tensor(vec![6, 4], &mut rng);
        let as_conv = t(vec![1, 1, 6, 4], wp.data().to_vec());
        assert!(pconv(&x, &wp).unwrap().max_abs_diff(&conv(&x, &as_conv, 1).unwrap()) < 1e-12);

        let wd = rand_tensor(vec![3, 3, 6], &mut rng);
        let as_group = t(vec![3, 3, 1, 6], wd.data().to_vec());
        for d in 1..=3 {
            let a = dconv(&x, &wd, d).unwrap();
            assert!(a.max_abs_diff(&gconv(&x, &as_group, 6, d).unwrap()) < 1e-12);
        }
        let w = rand_tensor(vec![3, 3, 6, 4], &mut rng);
        assert_eq!(gconv(&x, &w, 1, 2).unwrap(), conv(&x, &w, 2).unwrap());
    }

    #[test]
    fn sconv_is_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(vec![6, 6, 4], &mut rng);
        let wd = rand_tensor(vec![3, 3, 4], &mut rng);
        let wp = rand_tensor(vec![4, 5], &mut rng);
        let composed = naive(&naive(&x, &t(vec![3, 3, 1, 4], wd.data().to_vec()), 4, 2, 1), &t(vec![1, 1, 4, 5], wp.data().to_vec()), 1, 1, 1);
        assert!(sconv(&x, &wd, &wp, 2).unwrap().max_abs_diff(&composed) < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f64>::zeros(vec![4, 4, 3]);
        assert!(conv(&x, &Tensor::zeros(vec![3, 3, 2, 4]), 1).is_err());
        assert!(pconv(&x, &Tensor::zeros(vec![2, 4])).is_err());
        assert!(dconv(&x, &Tensor::zeros(vec![3, 3, 2]), 1).is_err());
        assert!(gconv(&Tensor::<f64>::zeros(vec![4, 4, 4]), &Tensor::zeros(vec![3, 3, 2, 3]), 2, 1).is_err());
        assert!(conv(&x, &Tensor::zeros(vec![2, 2, 3, 4]), 1).is_err());
        assert!(conv(&x, &Tensor::zeros(vec![3, 3, 3, 4]), 0).is_err());
        assert!(channel_split(&x).is_err());
    }

    #[test]
    fn softmax_and_loss() {
        let p = softmax(&[0.3f64; 7]);
        for v in &p {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
        let x = [0.1, -2.0, 3.5, 0.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 100.0).collect();
        for (a, b) in softmax(&x).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], &one_hot::<f64>(1, 3)), 0.0);
        let clamped = cross_entropy(&[1.0, 0.0], &one_hot::<f64>(1, 2));
        assert!((clamped - 12.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let z = [0.4, -1.2, 2.0, 0.1, -0.3, 0.9, 0.0];
        let y = one_hot::<f64>(2, 7);
        let p = softmax(&z);
        let eps = 1e-5;
        for c in 0..7 {
            let mut up = z;
            let mut dn = z;
            up[c] += eps;
            dn[c] -= eps;
            let fd = (cross_entropy(&softmax(&up), &y) - cross_entropy(&softmax(&dn), &y)) / (2.0 * eps);
            assert!((fd - (p[c] - y[c])).abs() < 1e-9);
        }
    }

    #[test]
    fn split_concat() {
        let x = Tensor::<f64>::from_fn(vec![2, 3, 4], |i| i as f64);
        let (a, b) = channel_split(&x).unwrap();
        assert_eq!(a.shape(), &[2, 3, 2]);
        assert_eq!(&a.data()[..2], &[0.0, 1.0]);
        assert_eq!(&b.data()[..2], &[2.0, 3.0]);
        assert_eq!(concat(&a, &b).unwrap(), x);
        let c = concat(&Tensor::<f64>::zeros(vec![3, 3, 8]), &Tensor::zeros(vec![3, 3, 8])).unwrap();
        assert_eq!(c.shape(), &[3, 3, 16]);
    }

    #[test]
    fn stride_output_sizes() {
        let x = Tensor::<f64>::zeros(vec![7, 6, 2]);
        let y = dconv_strided(&x, &Tensor::zeros(vec![3, 3, 2]), 2, 2).unwrap();
        assert_eq!(y.shape(), &[4, 3, 2]);
        assert_eq!(subsample(x.data(), (7, 6, 2), 2).len(), 4 * 3 * 2);
    }

    /// Loss `Σ c·y + ½Σ y²`, whose output gradient is `c + y`.
    fn probe_loss(y: &Tensor<f64>, c: &[f64]) -> f64 {
        y.data().iter().zip(c).map(|(y, c)| c * y + 0.5 * y * y).sum()
    }

    fn check_grads(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        f: impl Fn(&Tensor<f64>, &Tensor<f64>) -> Tensor<f64>,
        b: impl Fn(&Tensor<f64>, &Tensor<f64>, &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>),
    ) {
        let y = f(x, w);
        let c: Vec<f64> = (0..y.len()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        let gy = Tensor::new(y.shape().to_vec(), y.data().iter().zip(&c).map(|(y, c)| y + c).collect()).unwrap();
        let (gx, gw) = b(x, w, &gy);
        let eps = 1e-3;
        for (target, analytic) in [(0, &gx), (1, &gw)] {
            let base = if target == 0 { x } else { w };
            for i in 0..base.len() {
                let mut up = base.clone();
                let mut dn = base.clone();
                up.data_mut()[i] += eps;
                dn.data_mut()[i] -= eps;
                let (lu, ld) = if target == 0 {
                    (probe_loss(&f(&up, w), &c), probe_loss(&f(&dn, w), &c))
                } else {
                    (probe_loss(&f(x, &up), &c), probe_loss(&f(x, &dn), &c))
                };
                let fd = (lu - ld) / (2.0 * eps);
                let a = analytic.data()[i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-7);
                assert!(rel < 1e-6, "index {i}: analytic {a} numeric {fd}");
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(vec![5, 6, 4], &mut rng);
        for (k, groups, d, s) in [(3, 1, 1, 1), (3, 2, 2, 1), (5, 4, 1, 2), (3, 1, 3, 2)] {
            let w = rand_tensor(vec![k, k, 4 / groups, 4], &mut rng);
            let g = ConvGeometry::new(k, groups, d, s);
            check_grads(&x, &w, |x, w| conv2d(x, w, g).unwrap(), |x, w, gy| conv2d_backward(x, w, g, gy).unwrap());
        }
        let wp = rand_tensor(vec![4, 3], &mut rng);
        check_grads(&x, &wp, |x, w| pconv(x, w).unwrap(), |x, w, gy| pconv_backward(x, w, gy).unwrap());
        for (d, s) in [(1, 1), (2, 2), (3, 1)] {
            let wd = rand_tensor(vec![3, 3, 4], &mut rng);
            check_grads(
                &x,
                &wd,
                |x, w| dconv_strided(x, w, d, s).unwrap(),
                |x, w, gy| dconv_backward(x, w, d, s, gy).unwrap(),
            );
        }
    }

    #[test]
    fn relu_gradient_masks() {
        let x = t(vec![4], vec![-1.0, 0.0, 0.5, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 0.5, 2.0]);
        let g = relu_backward(&x, &t(vec![4], vec![1.0; 4]));
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn convolutions_are_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, d in 1usize..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x1 = rand_tensor(vec![5, 4, 4], &mut rng);
            let x2 = rand_tensor(vec![5, 4, 4], &mut rng);
            let mix = Tensor::new(vec![5, 4, 4], x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let w = rand_tensor(vec![3, 3, 2, 4], &mut rng);
            let wd = rand_tensor(vec![3, 3, 4], &mut rng);
            let wp = rand_tensor(vec![4, 6], &mut rng);
            let ops: Vec<Box<dyn Fn(&Tensor<f64>) -> Tensor<f64>>> = vec![
                Box::new(|x| gconv(x, &w, 2, d).unwrap()),
                Box::new(|x| dconv(x, &wd, d).unwrap()),
                Box::new(|x| pconv(x, &wp).unwrap()),
                Box::new(|x| sconv(x, &wd, &wp, d).unwrap()),
            ];
            for f in ops {
                let (y1, y2, ym) = (f(&x1), f(&x2), f(&mix));
                for ((p, q), m) in y1.data().iter().zip(y2.data()).zip(ym.data()) {
                    prop_assert!((a * p + b * q - m).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn softmax_is_a_distribution(v in proptest::collection::vec(-50.0f64..50.0, 1..12), label in 0usize..12) {
            let p = softmax(&v);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| *x >= 0.0 && *x <= 1.0));
            let y = one_hot::<f64>(label % v.len(), v.len());
            prop_assert!(cross_entropy(&p, &y) >= 0.0);
        }
    }
}
