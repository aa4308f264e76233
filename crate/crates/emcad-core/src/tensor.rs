//! Dense NCHW tensor container and the numerical kernels every block is
//! built from.
//!
//! All kernels are pure functions: same inputs produce bit-identical
//! outputs. Accumulation order is row-major and fixed.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense NCHW 32-bit float tensor. `data[b*(c*h*w) + ch*(h*w) + y*w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4D {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Tensor4D {
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "all dims must be >= 1, got ({n},{c},{h},{w})"
            )));
        }
        if data.len() != n * c * h * w {
            return Err(Error::shape(format!(
                "data length {} does not match {n}x{c}x{h}x{w}",
                data.len()
            )));
        }
        Ok(Tensor4D { n, c, h, w, data })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4D {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn full(n: usize, c: usize, h: usize, w: usize, value: f32) -> Self {
        Tensor4D {
            n,
            c,
            h,
            w,
            data: vec![value; n * c * h * w],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn c(&self) -> usize {
        self.c
    }
    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, b: usize, ch: usize, y: usize, x: usize) -> f32 {
        self.data[((b * self.c + ch) * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, b: usize, ch: usize, y: usize, x: usize, v: f32) {
        self.data[((b * self.c + ch) * self.h + y) * self.w + x] = v;
    }

    /// Applies `f` to every element, preserving shape.
    pub fn map(&self, f: impl Fn(f32) -> f32 + Sync) -> Tensor4D {
        Tensor4D {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Learnable state of one convolution layer.
///
/// Weight layout: `out_channels x (in_channels/groups) x kernel_h x kernel_w`,
/// row-major.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl ConvParams {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 {
            return Err(Error::config("conv dims and stride must be positive"));
        }
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::config(format!(
                "groups {groups} must divide in_channels {in_channels} and out_channels {out_channels}"
            )));
        }
        let expect = out_channels * (in_channels / groups) * kernel_h * kernel_w;
        if weights.len() != expect {
            return Err(Error::config(format!(
                "weight length {} does not match expected {expect}",
                weights.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(Error::config(format!(
                    "bias length {} does not match out_channels {out_channels}",
                    b.len()
                )));
            }
        }
        Ok(ConvParams {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            groups,
            weights,
            bias,
        })
    }

    /// Number of learnable scalars (weights plus optional bias).
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }
}

/// Inference-mode batch normalization parameters for one layer.
#[derive(Debug, Clone)]
pub struct NormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
}

impl NormParams {
    pub fn new(
        gamma: Vec<f32>,
        beta: Vec<f32>,
        running_mean: Vec<f32>,
        running_var: Vec<f32>,
        eps: f32,
    ) -> Result<Self> {
        let c = gamma.len();
        if beta.len() != c || running_mean.len() != c || running_var.len() != c {
            return Err(Error::config(
                "gamma/beta/mean/var must have equal channel counts",
            ));
        }
        if running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::config("running_var must be non-negative"));
        }
        Ok(NormParams {
            gamma,
            beta,
            running_mean,
            running_var,
            eps,
        })
    }

    /// Identity normalization on `c` channels (gamma=1, beta=0, mean=0, var=1).
    pub fn identity(c: usize) -> Self {
        NormParams {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

/// Grouped 2D convolution, NCHW, direct algorithm.
///
/// Output group g reads only input group g. Accumulation per output element
/// is f32 in fixed row-major kernel order.
pub fn conv2d(input: &Tensor4D, p: &ConvParams) -> Result<Tensor4D> {
    if input.c != p.in_channels {
        return Err(Error::shape(format!(
            "conv2d: input has {} channels, params expect {}",
            input.c, p.in_channels
        )));
    }
    let oh_num = input.h + 2 * p.padding;
    let ow_num = input.w + 2 * p.padding;
    if oh_num < p.kernel_h || ow_num < p.kernel_w {
        return Err(Error::shape("conv2d: kernel larger than padded input"));
    }
    let out_h = (oh_num - p.kernel_h) / p.stride + 1;
    let out_w = (ow_num - p.kernel_w) / p.stride + 1;
    let cin_g = p.in_channels / p.groups;
    let cout_g = p.out_channels / p.groups;

    let mut out = Tensor4D::zeros(input.n, p.out_channels, out_h, out_w);
    let plane = out_h * out_w;
    let in_plane = input.h * input.w;
    let ksize = p.kernel_h * p.kernel_w;

    out.data
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, out_plane)| {
            let b = idx / p.out_channels;
            let oc = idx % p.out_channels;
            let g = oc / cout_g;
            let w_base = oc * cin_g * ksize;
            let bias = p.bias.as_ref().map_or(0.0, |bv| bv[oc]);
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = bias;
                    for ic in 0..cin_g {
                        let in_ch = g * cin_g + ic;
                        let in_base = (b * input.c + in_ch) * in_plane;
                        let wk = w_base + ic * ksize;
                        for ky in 0..p.kernel_h {
                            let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                            if iy < 0 || iy >= input.h as isize {
                                continue;
                            }
                            let row = in_base + iy as usize * input.w;
                            for kx in 0..p.kernel_w {
                                let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                                if ix < 0 || ix >= input.w as isize {
                                    continue;
                                }
                                acc += input.data[row + ix as usize]
                                    * p.weights[wk + ky * p.kernel_w + kx];
                            }
                        }
                    }
                    out_plane[oy * out_w + ox] = acc;
                }
            }
        });
    Ok(out)
}

/// Inference batch normalization: `gamma*(x - mean)/sqrt(var + eps) + beta`.
pub fn batchnorm_infer(input: &Tensor4D, p: &NormParams) -> Result<Tensor4D> {
    if input.c != p.channels() {
        return Err(Error::shape(format!(
            "batchnorm: input has {} channels, params expect {}",
            input.c,
            p.channels()
        )));
    }
    let mut out = input.clone();
    let plane = input.h * input.w;
    for b in 0..input.n {
        for ch in 0..input.c {
            let scale = p.gamma[ch] / (p.running_var[ch] + p.eps).sqrt();
            let shift = p.beta[ch] - p.running_mean[ch] * scale;
            let base = (b * input.c + ch) * plane;
            for v in &mut out.data[base..base + plane] {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(out)
}

pub fn relu(input: &Tensor4D) -> Tensor4D {
    input.map(|v| v.max(0.0))
}

pub fn relu6(input: &Tensor4D) -> Tensor4D {
    input.map(|v| v.max(0.0).min(6.0))
}

pub fn sigmoid(input: &Tensor4D) -> Tensor4D {
    input.map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Global pooling over the spatial dims to a (n, c, 1, 1) tensor.
pub fn adaptive_pool_1x1(input: &Tensor4D, mode: PoolMode) -> Tensor4D {
    let plane = input.h * input.w;
    let mut out = Tensor4D::zeros(input.n, input.c, 1, 1);
    for b in 0..input.n {
        for ch in 0..input.c {
            let base = (b * input.c + ch) * plane;
            let slice = &input.data[base..base + plane];
            let v = match mode {
                PoolMode::Max => slice.iter().copied().fold(f32::NEG_INFINITY, f32::max),
                PoolMode::Avg => slice.iter().sum::<f32>() / plane as f32,
            };
            out.data[b * input.c + ch] = v;
        }
    }
    out
}

/// Reduction across channels to a (n, 1, h, w) tensor.
pub fn channel_pool(input: &Tensor4D, mode: PoolMode) -> Tensor4D {
    let plane = input.h * input.w;
    let mut out = Tensor4D::zeros(input.n, 1, input.h, input.w);
    for b in 0..input.n {
        for i in 0..plane {
            let mut acc = match mode {
                PoolMode::Max => f32::NEG_INFINITY,
                PoolMode::Avg => 0.0,
            };
            for ch in 0..input.c {
                let v = input.data[(b * input.c + ch) * plane + i];
                match mode {
                    PoolMode::Max => acc = acc.max(v),
                    PoolMode::Avg => acc += v,
                }
            }
            if mode == PoolMode::Avg {
                acc /= input.c as f32;
            }
            out.data[b * plane + i] = acc;
        }
    }
    out
}

/// Doubles spatial dims. Nearest replicates each pixel into a 2x2 block;
/// bilinear uses the align-corners-false pixel-center convention.
pub fn upsample2x(input: &Tensor4D, mode: UpsampleMode) -> Tensor4D {
    match mode {
        UpsampleMode::Nearest => {
            let (n, c, h, w) = input.shape();
            let mut out = Tensor4D::zeros(n, c, 2 * h, 2 * w);
            for b in 0..n {
                for ch in 0..c {
                    for y in 0..2 * h {
                        for x in 0..2 * w {
                            out.set(b, ch, y, x, input.at(b, ch, y / 2, x / 2));
                        }
                    }
                }
            }
            out
        }
        UpsampleMode::Bilinear => bilinear_resize(input, 2 * input.h, 2 * input.w),
    }
}

/// Bilinear resize to an arbitrary target size, align-corners-false.
pub fn bilinear_resize(input: &Tensor4D, target_h: usize, target_w: usize) -> Tensor4D {
    let (n, c, h, w) = input.shape();
    if target_h == h && target_w == w {
        return input.clone();
    }
    let mut out = Tensor4D::zeros(n, c, target_h, target_w);
    let sy = h as f32 / target_h as f32;
    let sx = w as f32 / target_w as f32;
    for oy in 0..target_h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).max(0.0);
        let y0 = (fy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for ox in 0..target_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).max(0.0);
            let x0 = (fx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            for b in 0..n {
                for ch in 0..c {
                    let v00 = input.at(b, ch, y0, x0);
                    let v01 = input.at(b, ch, y0, x1);
                    let v10 = input.at(b, ch, y1, x0);
                    let v11 = input.at(b, ch, y1, x1);
                    let top = v00 + (v01 - v00) * wx;
                    let bot = v10 + (v11 - v10) * wx;
                    out.set(b, ch, oy, ox, top + (bot - top) * wy);
                }
            }
        }
    }
    out
}

/// Pure channel permutation: viewing channels as a groups x (c/groups)
/// grid, the output transposes it.
pub fn channel_shuffle(input: &Tensor4D, groups: usize) -> Result<Tensor4D> {
    if groups == 0 || input.c % groups != 0 {
        return Err(Error::config(format!(
            "channel_shuffle: groups {groups} does not divide c {}",
            input.c
        )));
    }
    let per = input.c / groups;
    let plane = input.h * input.w;
    let mut out = input.clone();
    for b in 0..input.n {
        for out_ch in 0..input.c {
            // output channel s*groups + t reads input channel t*per + s
            let s = out_ch / groups;
            let t = out_ch % groups;
            let in_ch = t * per + s;
            let src = (b * input.c + in_ch) * plane;
            let dst = (b * input.c + out_ch) * plane;
            out.data[dst..dst + plane].copy_from_slice(&input.data[src..src + plane]);
        }
    }
    Ok(out)
}

/// Elementwise sum of same-shape tensors.
pub fn add(a: &Tensor4D, b: &Tensor4D) -> Result<Tensor4D> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "add: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    for (o, &v) in out.data.iter_mut().zip(&b.data) {
        *o += v;
    }
    Ok(out)
}

/// Hadamard product. `b` may also be (n,c,1,1) or (n,1,h,w), broadcast
/// over the missing axes.
pub fn hadamard(a: &Tensor4D, b: &Tensor4D) -> Result<Tensor4D> {
    let plane = a.h * a.w;
    let mut out = a.clone();
    if a.shape() == b.shape() {
        for (o, &v) in out.data.iter_mut().zip(&b.data) {
            *o *= v;
        }
    } else if b.n == a.n && b.c == a.c && b.h == 1 && b.w == 1 {
        for bi in 0..a.n {
            for ch in 0..a.c {
                let scale = b.data[bi * a.c + ch];
                let base = (bi * a.c + ch) * plane;
                for v in &mut out.data[base..base + plane] {
                    *v *= scale;
                }
            }
        }
    } else if b.n == a.n && b.c == 1 && b.h == a.h && b.w == a.w {
        for bi in 0..a.n {
            for ch in 0..a.c {
                let base = (bi * a.c + ch) * plane;
                for i in 0..plane {
                    out.data[base + i] *= b.data[bi * plane + i];
                }
            }
        }
    } else {
        return Err(Error::shape(format!(
            "hadamard: shapes {:?} and {:?} are not broadcast-compatible",
            a.shape(),
            b.shape()
        )));
    }
    Ok(out)
}
