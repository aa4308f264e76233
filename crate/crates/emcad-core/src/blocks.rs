//! The decoder's building blocks: attention gates, channel/spatial
//! attention, the multi-scale convolution block, the up-convolution
//! block, and the segmentation head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::{
    add, adaptive_pool_1x1, batchnorm_infer, channel_pool, channel_shuffle, conv2d, hadamard,
    relu, relu6, sigmoid, upsample2x, ConvParams, NormParams, PoolMode, Tensor4D, UpsampleMode,
};

/// Initializes a convolution with uniform [-0.05, 0.05] weights.
pub fn conv_init(
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    groups: usize,
    with_bias: bool,
    rng: &mut CounterRng,
) -> Result<ConvParams> {
    let mut weights = vec![0.0; out_channels * (in_channels / groups) * kernel * kernel];
    rng.fill_uniform(&mut weights, -0.05, 0.05);
    let bias = if with_bias {
        let mut b = vec![0.0; out_channels];
        rng.fill_uniform(&mut b, -0.05, 0.05);
        Some(b)
    } else {
        None
    };
    // every k x k conv here is "same"-padded, stride 1
    ConvParams::new(
        in_channels,
        out_channels,
        kernel,
        kernel,
        1,
        kernel / 2,
        groups,
        weights,
        bias,
    )
}

/// Attention gate parameters. LGAG uses 3x3 grouped projections; the AG
/// baseline uses the same layout with 1x1 ungrouped projections.
#[derive(Debug, Clone)]
pub struct LGAGParams {
    pub gc_g: ConvParams,
    pub bn_g: NormParams,
    pub gc_x: ConvParams,
    pub bn_x: NormParams,
    pub psi: ConvParams,
    pub bn_psi: NormParams,
}

pub type AGParams = LGAGParams;

impl LGAGParams {
    /// LGAG: 3x3 grouped projections of both inputs into `f_int` channels.
    pub fn init_lgag(
        f_g: usize,
        f_l: usize,
        f_int: usize,
        groups: usize,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        Self::init(f_g, f_l, f_int, 3, groups, rng)
    }

    /// AG baseline: 1x1 ungrouped projections.
    pub fn init_ag(f_g: usize, f_l: usize, f_int: usize, rng: &mut CounterRng) -> Result<Self> {
        Self::init(f_g, f_l, f_int, 1, 1, rng)
    }

    fn init(
        f_g: usize,
        f_l: usize,
        f_int: usize,
        kernel: usize,
        groups: usize,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        Ok(LGAGParams {
            gc_g: conv_init(f_g, f_int, kernel, groups, false, rng)?,
            bn_g: NormParams::identity(f_int),
            gc_x: conv_init(f_l, f_int, kernel, groups, false, rng)?,
            bn_x: NormParams::identity(f_int),
            psi: conv_init(f_int, 1, 1, 1, true, rng)?,
            bn_psi: NormParams::identity(1),
        })
    }

    pub fn param_count(&self) -> usize {
        self.gc_g.param_count()
            + self.gc_x.param_count()
            + self.psi.param_count()
            + 2 * self.bn_g.channels()
            + 2 * self.bn_x.channels()
            + 2 * self.bn_psi.channels()
    }
}

/// Gated attention: `x (*) sigmoid(BN(psi(ReLU(BN(gc_g(g)) + BN(gc_x(x))))))`.
pub fn lgag_forward(p: &LGAGParams, g: &Tensor4D, x: &Tensor4D) -> Result<Tensor4D> {
    if (g.h(), g.w()) != (x.h(), x.w()) || g.n() != x.n() {
        return Err(Error::shape(format!(
            "attention gate: g {:?} and x {:?} disagree on batch/spatial dims",
            g.shape(),
            x.shape()
        )));
    }
    let qg = batchnorm_infer(&conv2d(g, &p.gc_g)?, &p.bn_g)?;
    let qx = batchnorm_infer(&conv2d(x, &p.gc_x)?, &p.bn_x)?;
    let q = relu(&add(&qg, &qx)?);
    let att = sigmoid(&batchnorm_infer(&conv2d(&q, &p.psi)?, &p.bn_psi)?);
    hadamard(x, &att)
}

pub fn ag_forward(p: &AGParams, g: &Tensor4D, x: &Tensor4D) -> Result<Tensor4D> {
    lgag_forward(p, g, x)
}

/// Channel attention block parameters. One reduce/expand weight pair is
/// applied to both the max-pooled and avg-pooled maps.
#[derive(Debug, Clone)]
pub struct CABParams {
    pub reduce: ConvParams,
    pub expand: ConvParams,
}

impl CABParams {
    pub fn init(channels: usize, reduction_ratio: f64, rng: &mut CounterRng) -> Result<Self> {
        let reduced = ((channels as f64 * reduction_ratio).round() as usize).max(1);
        Ok(CABParams {
            reduce: conv_init(channels, reduced, 1, 1, false, rng)?,
            expand: conv_init(reduced, channels, 1, 1, false, rng)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.reduce.param_count() + self.expand.param_count()
    }
}

/// Per-channel attention from global max/avg pooling:
/// `sigmoid(C2(R(C1(Pm(x)))) + C2(R(C1(Pa(x))))) (*) x`.
pub fn cab_forward(p: &CABParams, x: &Tensor4D) -> Result<Tensor4D> {
    if x.c() != p.reduce.in_channels {
        return Err(Error::shape(format!(
            "cab: input has {} channels, params expect {}",
            x.c(),
            p.reduce.in_channels
        )));
    }
    let branch = |pooled: &Tensor4D| -> Result<Tensor4D> {
        conv2d(&relu(&conv2d(pooled, &p.reduce)?), &p.expand)
    };
    let bm = branch(&adaptive_pool_1x1(x, PoolMode::Max))?;
    let ba = branch(&adaptive_pool_1x1(x, PoolMode::Avg))?;
    let att = sigmoid(&add(&bm, &ba)?);
    hadamard(x, &att)
}

/// Spatial attention block parameters: one large-kernel conv over the
/// concatenated cross-channel max and avg maps.
#[derive(Debug, Clone)]
pub struct SABParams {
    pub lkc: ConvParams,
}

impl SABParams {
    pub fn init(kernel: usize, rng: &mut CounterRng) -> Result<Self> {
        Ok(SABParams {
            lkc: conv_init(2, 1, kernel, 1, true, rng)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.lkc.param_count()
    }
}

/// Per-pixel attention: `sigmoid(LKC([Ch_max(x), Ch_avg(x)])) (*) x`.
/// Concatenation order is [max, avg].
pub fn sab_forward(p: &SABParams, x: &Tensor4D) -> Result<Tensor4D> {
    let cmax = channel_pool(x, PoolMode::Max);
    let cavg = channel_pool(x, PoolMode::Avg);
    let mut cat = Vec::with_capacity(2 * x.n() * x.h() * x.w());
    let plane = x.h() * x.w();
    for b in 0..x.n() {
        cat.extend_from_slice(&cmax.data()[b * plane..(b + 1) * plane]);
        cat.extend_from_slice(&cavg.data()[b * plane..(b + 1) * plane]);
    }
    let pooled = Tensor4D::new(x.n(), 2, x.h(), x.w(), cat)?;
    let att = sigmoid(&conv2d(&pooled, &p.lkc)?);
    hadamard(x, &att)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MsdcArrangement {
    Parallel,
    Sequential,
}

/// Multi-scale convolution block: expand (1x1) -> multi-scale depth-wise
/// -> channel shuffle -> project (1x1). No outer residual.
#[derive(Debug, Clone)]
pub struct MSCBParams {
    pub pwc1: ConvParams,
    pub bn1: NormParams,
    /// One (depth-wise conv, BN) pair per kernel size in the kernel set.
    pub dwcbs: Vec<(ConvParams, NormParams)>,
    pub pwc2: ConvParams,
    pub bn2: NormParams,
    pub shuffle_groups: usize,
    pub arrangement: MsdcArrangement,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl MSCBParams {
    pub fn init(
        channels: usize,
        out_channels: usize,
        expansion_factor: usize,
        kernel_set: &[usize],
        arrangement: MsdcArrangement,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        if kernel_set.is_empty() || kernel_set.iter().any(|k| k % 2 == 0) {
            return Err(Error::config("kernel set must be non-empty with odd entries"));
        }
        let expanded = channels * expansion_factor;
        let mut dwcbs = Vec::with_capacity(kernel_set.len());
        for &k in kernel_set {
            dwcbs.push((
                conv_init(expanded, expanded, k, expanded, false, rng)?,
                NormParams::identity(expanded),
            ));
        }
        // shuffle with |KS| groups when it divides the expanded width,
        // else fall back to gcd(C*e, |KS|)
        let ks_len = kernel_set.len();
        let shuffle_groups = if expanded % ks_len == 0 {
            ks_len
        } else {
            gcd(expanded, ks_len)
        };
        Ok(MSCBParams {
            pwc1: conv_init(channels, expanded, 1, 1, false, rng)?,
            bn1: NormParams::identity(expanded),
            dwcbs,
            pwc2: conv_init(expanded, out_channels, 1, 1, false, rng)?,
            bn2: NormParams::identity(out_channels),
            shuffle_groups,
            arrangement,
        })
    }

    pub fn param_count(&self) -> usize {
        self.pwc1.param_count()
            + self.pwc2.param_count()
            + 2 * self.bn1.channels()
            + 2 * self.bn2.channels()
            + self
                .dwcbs
                .iter()
                .map(|(c, bn)| c.param_count() + 2 * bn.channels())
                .sum::<usize>()
    }
}

fn dwcb(conv: &ConvParams, bn: &NormParams, x: &Tensor4D) -> Result<Tensor4D> {
    Ok(relu6(&batchnorm_infer(&conv2d(x, conv)?, bn)?))
}

/// Multi-scale depth-wise convolution over the expanded channels.
///
/// Parallel: sum of the per-kernel branches, all reading the same input.
/// Sequential: `x <- x + DWCB_ks(x)` iterated over the kernel set in order.
pub fn msdc_forward(p: &MSCBParams, x: &Tensor4D) -> Result<Tensor4D> {
    match p.arrangement {
        MsdcArrangement::Parallel => {
            let mut acc: Option<Tensor4D> = None;
            for (conv, bn) in &p.dwcbs {
                let branch = dwcb(conv, bn, x)?;
                acc = Some(match acc {
                    None => branch,
                    Some(a) => add(&a, &branch)?,
                });
            }
            Ok(acc.expect("kernel set is non-empty"))
        }
        MsdcArrangement::Sequential => {
            let mut cur = x.clone();
            for (conv, bn) in &p.dwcbs {
                let branch = dwcb(conv, bn, &cur)?;
                cur = add(&cur, &branch)?;
            }
            Ok(cur)
        }
    }
}

/// `BN(PWC2(CS(MSDC(R6(BN(PWC1(x)))))))`.
pub fn mscb_forward(p: &MSCBParams, x: &Tensor4D) -> Result<Tensor4D> {
    let expanded = relu6(&batchnorm_infer(&conv2d(x, &p.pwc1)?, &p.bn1)?);
    let fused = msdc_forward(p, &expanded)?;
    let shuffled = channel_shuffle(&fused, p.shuffle_groups)?;
    batchnorm_infer(&conv2d(&shuffled, &p.pwc2)?, &p.bn2)
}

/// `MSCB(SAB(CAB(x)))`.
pub fn mscam_forward(
    cab: &CABParams,
    sab: &SABParams,
    mscb: &MSCBParams,
    x: &Tensor4D,
) -> Result<Tensor4D> {
    mscb_forward(mscb, &sab_forward(sab, &cab_forward(cab, x)?)?)
}

/// Efficient up-convolution block parameters.
#[derive(Debug, Clone)]
pub struct EUCBParams {
    pub dwc: ConvParams,
    pub bn: NormParams,
    pub proj: ConvParams,
    pub upsample_mode: UpsampleMode,
}

impl EUCBParams {
    pub fn init(
        channels: usize,
        next_channels: usize,
        upsample_mode: UpsampleMode,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        Ok(EUCBParams {
            dwc: conv_init(channels, channels, 3, channels, false, rng)?,
            bn: NormParams::identity(channels),
            proj: conv_init(channels, next_channels, 1, 1, true, rng)?,
            upsample_mode,
        })
    }

    pub fn param_count(&self) -> usize {
        self.dwc.param_count() + 2 * self.bn.channels() + self.proj.param_count()
    }
}

/// `C_1x1(ReLU(BN(DWC(Up(x)))))`: doubles spatial dims, maps channels to
/// the next stage width.
pub fn eucb_forward(p: &EUCBParams, x: &Tensor4D) -> Result<Tensor4D> {
    if x.c() != p.dwc.in_channels {
        return Err(Error::shape(format!(
            "eucb: input has {} channels, params expect {}",
            x.c(),
            p.dwc.in_channels
        )));
    }
    let up = upsample2x(x, p.upsample_mode);
    conv2d(&relu(&batchnorm_infer(&conv2d(&up, &p.dwc)?, &p.bn)?), &p.proj)
}

/// Per-pixel linear map to class logits via a 1x1 convolution.
pub fn seg_head_forward(p: &ConvParams, x: &Tensor4D) -> Result<Tensor4D> {
    if p.kernel_h != 1 || p.kernel_w != 1 {
        return Err(Error::config("segmentation head must be a 1x1 convolution"));
    }
    conv2d(x, p)
}
