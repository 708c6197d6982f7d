//! Convolution, normalization and activation kernels with their adjoints.
//!
//! Every kernel is a pure function of plain tensors. [`crate::tape::GradTape`]
//! records calls to these functions and invokes the `*_backward` companions
//! during the reverse sweep; the public wrappers here are the tape-free API.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::SeqTensor;

/// Static geometry of a 1D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Number of taps, `2m + 1`.
    pub width: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn new(in_channels: usize, out_channels: usize, width: usize, dilation: usize) -> Result<Self> {
        if width.is_multiple_of(2) {
            return Err(Error::Invalid(format!("kernel width {width} must be odd")));
        }
        if dilation == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::Invalid(format!(
                "conv geometry needs positive channels and dilation, got in={in_channels} out={out_channels} r={dilation}"
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            width,
            dilation,
        })
    }

    pub fn half_width(&self) -> usize {
        self.width / 2
    }

    /// Shape of the weight tensor: `out × (width · in)`.
    pub fn weight_shape(&self) -> (usize, usize) {
        (self.out_channels, self.width * self.in_channels)
    }

    /// Input frame read by tap `j` for output frame `t`, or `None` when it falls in the zero padding.
    #[inline]
    fn source(&self, t: usize, j: usize, frames: usize) -> Option<usize> {
        let offset = (j as isize - self.half_width() as isize) * self.dilation as isize;
        let s = t as isize + offset;
        (s >= 0 && (s as usize) < frames).then_some(s as usize)
    }
}

/// Dense 1D convolution kernel.
///
/// Weights are stored tap-major: row `o` holds `width` consecutive blocks of
/// `in_channels` values, so `weight[o][j * in + c]` multiplies input channel `c`
/// at tap `j` (tap `j` reads frame `t + dilation · (j − m)`).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1dKernel<S> {
    pub geom: ConvGeom,
    pub weight: SeqTensor<S>,
    pub bias: Option<SeqTensor<S>>,
}

impl<S: Scalar> Conv1dKernel<S> {
    pub fn new(geom: ConvGeom, weight: SeqTensor<S>, bias: Option<SeqTensor<S>>) -> Result<Self> {
        if weight.shape() != geom.weight_shape() {
            return Err(Error::shape(
                "Conv1dKernel",
                format!("weight {:?}, geometry wants {:?}", weight.shape(), geom.weight_shape()),
            ));
        }
        if let Some(b) = &bias {
            if b.shape() != (1, geom.out_channels) {
                return Err(Error::shape("Conv1dKernel", format!("bias {:?}", b.shape())));
            }
        }
        Ok(Self { geom, weight, bias })
    }

    /// Fan-in uniform initialization, zero bias.
    pub fn init<R: Rng + ?Sized>(geom: ConvGeom, bias: bool, gain: f64, rng: &mut R) -> Self {
        let (r, c) = geom.weight_shape();
        let bound = gain * (1.0 / (geom.in_channels * geom.width) as f64).sqrt();
        Self {
            geom,
            weight: uniform(r, c, bound, rng),
            bias: bias.then(|| SeqTensor::zeros(1, geom.out_channels)),
        }
    }
}

/// Per-channel 1D convolution: weight is `channels × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseKernel<S> {
    pub width: usize,
    pub dilation: usize,
    pub weight: SeqTensor<S>,
    pub bias: Option<SeqTensor<S>>,
}

impl<S: Scalar> DepthwiseKernel<S> {
    pub fn new(dilation: usize, weight: SeqTensor<S>, bias: Option<SeqTensor<S>>) -> Result<Self> {
        let width = weight.cols();
        if width.is_multiple_of(2) || dilation == 0 {
            return Err(Error::Invalid(format!(
                "depthwise kernel needs odd width and positive dilation, got width={width} r={dilation}"
            )));
        }
        if let Some(b) = &bias {
            if b.shape() != (1, weight.rows()) {
                return Err(Error::shape("DepthwiseKernel", format!("bias {:?}", b.shape())));
            }
        }
        Ok(Self {
            width,
            dilation,
            weight,
            bias,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        channels: usize,
        width: usize,
        dilation: usize,
        bias: bool,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let bound = gain * (1.0 / width as f64).sqrt();
        Self {
            width,
            dilation,
            weight: uniform(channels, width, bound, rng),
            bias: bias.then(|| SeqTensor::zeros(1, channels)),
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormAffine<S> {
    pub gamma: SeqTensor<S>,
    pub beta: SeqTensor<S>,
    pub eps: S,
}

impl<S: Scalar> LayerNormAffine<S> {
    pub fn identity(channels: usize, eps: S) -> Self {
        Self {
            gamma: SeqTensor::filled(1, channels, S::one()),
            beta: SeqTensor::zeros(1, channels),
            eps,
        }
    }
}

pub(crate) fn uniform<S: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> SeqTensor<S> {
    let data = (0..rows * cols)
        .map(|_| S::lit(rng.random_range(-bound..=bound)))
        .collect();
    SeqTensor::from_raw(rows, cols, data)
}

// ---------------------------------------------------------------------------
// Dense convolution

pub fn conv1d<S: Scalar>(x: &SeqTensor<S>, k: &Conv1dKernel<S>) -> Result<SeqTensor<S>> {
    check_conv_input(x, &k.geom)?;
    Ok(conv1d_forward(x, &k.weight, k.bias.as_ref(), &k.geom))
}

pub(crate) fn check_conv_input<S: Scalar>(x: &SeqTensor<S>, geom: &ConvGeom) -> Result<()> {
    if x.cols() != geom.in_channels {
        return Err(Error::shape(
            "conv1d",
            format!("input has {} channels, kernel expects {}", x.cols(), geom.in_channels),
        ));
    }
    Ok(())
}

pub(crate) fn conv1d_forward<S: Scalar>(
    x: &SeqTensor<S>,
    weight: &SeqTensor<S>,
    bias: Option<&SeqTensor<S>>,
    geom: &ConvGeom,
) -> SeqTensor<S> {
    let frames = x.rows();
    let cin = geom.in_channels;
    let cout = geom.out_channels;
    let mut out = match bias {
        Some(b) => {
            let mut d = Vec::with_capacity(frames * cout);
            for _ in 0..frames {
                d.extend_from_slice(b.data());
            }
            SeqTensor::from_raw(frames, cout, d)
        }
        None => SeqTensor::zeros(frames, cout),
    };
    let w = weight.data();
    for t in 0..frames {
        let orow = out.row_mut(t);
        for j in 0..geom.width {
            let Some(src) = geom.source(t, j, frames) else {
                continue;
            };
            let xrow = x.row(src);
            for (o, acc) in orow.iter_mut().enumerate() {
                let wrow = &w[o * geom.width * cin + j * cin..][..cin];
                *acc += dot(wrow, xrow);
            }
        }
    }
    out
}

/// Returns `(grad_x, grad_weight, grad_bias)`.
pub(crate) fn conv1d_backward<S: Scalar>(
    x: &SeqTensor<S>,
    weight: &SeqTensor<S>,
    grad: &SeqTensor<S>,
    geom: &ConvGeom,
) -> (SeqTensor<S>, SeqTensor<S>, SeqTensor<S>) {
    let frames = x.rows();
    let cin = geom.in_channels;
    let (wr, wc) = geom.weight_shape();
    let mut gx = SeqTensor::zeros(frames, cin);
    let mut gw = SeqTensor::zeros(wr, wc);
    let mut gb = SeqTensor::zeros(1, geom.out_channels);
    let w = weight.data();
    for t in 0..frames {
        let grow = grad.row(t);
        for (acc, &g) in gb.data_mut().iter_mut().zip(grow) {
            *acc += g;
        }
        for j in 0..geom.width {
            let Some(src) = geom.source(t, j, frames) else {
                continue;
            };
            let xrow = x.row(src);
            for (o, &g) in grow.iter().enumerate() {
                if g == S::zero() {
                    continue;
                }
                let base = o * geom.width * cin + j * cin;
                axpy(g, &w[base..base + cin], gx.row_mut(src));
                axpy(g, xrow, &mut gw.data_mut()[base..base + cin]);
            }
        }
    }
    (gx, gw, gb)
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

// ---------------------------------------------------------------------------
// Depthwise convolution

pub fn depthwise_conv1d<S: Scalar>(x: &SeqTensor<S>, k: &DepthwiseKernel<S>) -> Result<SeqTensor<S>> {
    check_depthwise_input(x, &k.weight)?;
    Ok(depthwise_forward(x, &k.weight, k.bias.as_ref(), k.dilation))
}

pub(crate) fn check_depthwise_input<S: Scalar>(x: &SeqTensor<S>, weight: &SeqTensor<S>) -> Result<()> {
    if x.cols() != weight.rows() {
        return Err(Error::shape(
            "depthwise_conv1d",
            format!("input has {} channels, kernel has {}", x.cols(), weight.rows()),
        ));
    }
    Ok(())
}

fn depthwise_geom(weight_cols: usize, dilation: usize) -> ConvGeom {
    ConvGeom {
        in_channels: 1,
        out_channels: 1,
        width: weight_cols,
        dilation,
    }
}

pub(crate) fn depthwise_forward<S: Scalar>(
    x: &SeqTensor<S>,
    weight: &SeqTensor<S>,
    bias: Option<&SeqTensor<S>>,
    dilation: usize,
) -> SeqTensor<S> {
    let (frames, ch) = x.shape();
    let geom = depthwise_geom(weight.cols(), dilation);
    let mut out = SeqTensor::zeros(frames, ch);
    for t in 0..frames {
        let orow = out.row_mut(t);
        if let Some(b) = bias {
            orow.copy_from_slice(b.data());
        }
        for j in 0..geom.width {
            let Some(src) = geom.source(t, j, frames) else {
                continue;
            };
            for (c, (acc, &xv)) in orow.iter_mut().zip(x.row(src)).enumerate() {
                *acc += weight.get(c, j) * xv;
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward<S: Scalar>(
    x: &SeqTensor<S>,
    weight: &SeqTensor<S>,
    grad: &SeqTensor<S>,
    dilation: usize,
) -> (SeqTensor<S>, SeqTensor<S>, SeqTensor<S>) {
    let (frames, ch) = x.shape();
    let geom = depthwise_geom(weight.cols(), dilation);
    let mut gx = SeqTensor::zeros(frames, ch);
    let mut gw = SeqTensor::zeros(ch, geom.width);
    let mut gb = SeqTensor::zeros(1, ch);
    for t in 0..frames {
        let grow = grad.row(t);
        for (acc, &g) in gb.data_mut().iter_mut().zip(grow) {
            *acc += g;
        }
        for j in 0..geom.width {
            let Some(src) = geom.source(t, j, frames) else {
                continue;
            };
            for c in 0..ch {
                let g = grow[c];
                let i = src * ch + c;
                gx.data_mut()[i] += g * weight.get(c, j);
                gw.data_mut()[c * geom.width + j] += g * x.data()[i];
            }
        }
    }
    (gx, gw, gb)
}

// ---------------------------------------------------------------------------
// Layer norm

pub fn layer_norm<S: Scalar>(x: &SeqTensor<S>, a: &LayerNormAffine<S>) -> Result<SeqTensor<S>> {
    check_norm_input(x, &a.gamma, &a.beta)?;
    Ok(layer_norm_forward(x, &a.gamma, &a.beta, a.eps).0)
}

pub(crate) fn check_norm_input<S: Scalar>(x: &SeqTensor<S>, gamma: &SeqTensor<S>, beta: &SeqTensor<S>) -> Result<()> {
    let d = x.cols();
    if gamma.shape() != (1, d) || beta.shape() != (1, d) {
        return Err(Error::shape(
            "layer_norm",
            format!("affine sized {:?}/{:?} for {d} channels", gamma.shape(), beta.shape()),
        ));
    }
    Ok(())
}

/// Returns the output plus the normalized activations and per-row inverse std.
pub(crate) fn layer_norm_forward<S: Scalar>(
    x: &SeqTensor<S>,
    gamma: &SeqTensor<S>,
    beta: &SeqTensor<S>,
    eps: S,
) -> (SeqTensor<S>, SeqTensor<S>, Vec<S>) {
    let (frames, d) = x.shape();
    let n = S::from_usize_exact(d);
    let mut y = SeqTensor::zeros(frames, d);
    let mut xhat = SeqTensor::zeros(frames, d);
    let mut rstd = Vec::with_capacity(frames);
    for t in 0..frames {
        let row = x.row(t);
        let mean = row.iter().copied().sum::<S>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        let r = S::one() / (var + eps).sqrt();
        rstd.push(r);
        for c in 0..d {
            let h = (row[c] - mean) * r;
            xhat.data_mut()[t * d + c] = h;
            y.data_mut()[t * d + c] = gamma.data()[c] * h + beta.data()[c];
        }
    }
    (y, xhat, rstd)
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub(crate) fn layer_norm_backward<S: Scalar>(
    xhat: &SeqTensor<S>,
    rstd: &[S],
    gamma: &SeqTensor<S>,
    grad: &SeqTensor<S>,
) -> (SeqTensor<S>, SeqTensor<S>, SeqTensor<S>) {
    let (frames, d) = xhat.shape();
    let n = S::from_usize_exact(d);
    let mut gx = SeqTensor::zeros(frames, d);
    let mut gg = SeqTensor::zeros(1, d);
    let mut gb = SeqTensor::zeros(1, d);
    let mut gh = vec![S::zero(); d];
    for t in 0..frames {
        let hrow = xhat.row(t);
        let grow = grad.row(t);
        let mut mean_gh = S::zero();
        let mut mean_ghh = S::zero();
        for c in 0..d {
            gg.data_mut()[c] += grow[c] * hrow[c];
            gb.data_mut()[c] += grow[c];
            gh[c] = grow[c] * gamma.data()[c];
            mean_gh += gh[c];
            mean_ghh += gh[c] * hrow[c];
        }
        mean_gh /= n;
        mean_ghh /= n;
        for (c, o) in gx.row_mut(t).iter_mut().enumerate() {
            *o = rstd[t] * (gh[c] - mean_gh - hrow[c] * mean_ghh);
        }
    }
    (gx, gg, gb)
}

// ---------------------------------------------------------------------------
// Activations

/// Exact GELU, `x · Φ(x)`.
pub fn gelu<S: Scalar>(x: &SeqTensor<S>) -> SeqTensor<S> {
    x.map(gelu_scalar)
}

#[inline]
pub fn gelu_scalar<S: Scalar>(x: S) -> S {
    x * std_normal_cdf(x)
}

#[inline]
fn std_normal_cdf<S: Scalar>(x: S) -> S {
    let half = S::lit(0.5);
    half * (S::one() + (x * S::FRAC_1_SQRT_2()).erf())
}

pub(crate) fn gelu_backward<S: Scalar>(x: &SeqTensor<S>, grad: &SeqTensor<S>) -> SeqTensor<S> {
    // d/dx x·Φ(x) = Φ(x) + x·φ(x)
    let inv_sqrt_2pi = S::FRAC_1_SQRT_2() * S::FRAC_2_SQRT_PI() * S::lit(0.5);
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| {
            let pdf = inv_sqrt_2pi * (-(v * v) * S::lit(0.5)).exp();
            g * (std_normal_cdf(v) + v * pdf)
        })
        .collect();
    SeqTensor::from_raw(x.rows(), x.cols(), data)
}

pub fn sigmoid<S: Scalar>(x: &SeqTensor<S>) -> SeqTensor<S> {
    x.map(sigmoid_scalar)
}

#[inline]
pub fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub(crate) fn sigmoid_backward<S: Scalar>(y: &SeqTensor<S>, grad: &SeqTensor<S>) -> SeqTensor<S> {
    let data = y
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&s, &g)| g * s * (S::one() - s))
        .collect();
    SeqTensor::from_raw(y.rows(), y.cols(), data)
}
