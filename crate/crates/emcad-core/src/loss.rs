//! Training losses as pure functions of prediction/target tensors:
//! boundary-weighted BCE+IoU for binary segmentation, CE+DICE for
//! multi-class, the additive deep-supervision loss, and the
//! combinatorial subset loss over the four prediction heads.

use crate::decoder::PredictionMaps;
use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize, Tensor4D};

/// Deep-supervision term weights plus the CE/DICE mix.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub delta: f64,
    pub ce_weight: f64,
    pub dice_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            zeta: 1.0,
            delta: 1.0,
            ce_weight: 0.3,
            dice_weight: 0.7,
        }
    }
}

/// Numerically stable binary cross-entropy with logits.
#[inline]
fn bce_with_logits(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (1.0 + (-z.abs()).exp()).ln()
}

/// Same-padded spatial average pooling (window x window, stride 1), the
/// divisor always window^2 (padding counted as zeros).
fn avg_pool_same(t: &Tensor4D, window: usize) -> Tensor4D {
    let (n, c, h, w) = t.shape();
    let half = window / 2;
    let mut out = Tensor4D::zeros(n, c, h, w);
    let norm = (window * window) as f32;
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0f32;
                    for ky in 0..window {
                        let iy = y as isize + ky as isize - half as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..window {
                            let ix = x as isize + kx as isize - half as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += t.at(b, ch, iy as usize, ix as usize);
                        }
                    }
                    out.set(b, ch, y, x, acc / norm);
                }
            }
        }
    }
    out
}

/// Boundary-weighted BCE + soft-IoU loss for binary targets.
///
/// Pixel weights are `1 + boost * |avg_pool_window(target) - target|`;
/// both terms are normalized per batch element, then batch-averaged.
pub fn bce_iou_weighted(
    pred_logits: &Tensor4D,
    target: &Tensor4D,
    pooling_window: usize,
    boost: f64,
) -> Result<f64> {
    if pred_logits.shape() != target.shape() {
        return Err(Error::shape(format!(
            "bce_iou: prediction {:?} and target {:?} differ",
            pred_logits.shape(),
            target.shape()
        )));
    }
    if target.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::config("bce_iou target must be binary (0/1)"));
    }
    let weights = avg_pool_same(target, pooling_window);
    let (n, c, h, w) = target.shape();
    let per = c * h * w;
    let mut total = 0.0f64;
    for b in 0..n {
        let base = b * per;
        let mut wsum = 0.0f64;
        let mut wbce = 0.0f64;
        let mut inter = 0.0f64;
        let mut union = 0.0f64;
        for i in 0..per {
            let t = target.data()[base + i] as f64;
            let z = pred_logits.data()[base + i] as f64;
            let wt = 1.0 + boost * (weights.data()[base + i] as f64 - t).abs();
            let p = 1.0 / (1.0 + (-z).exp());
            wsum += wt;
            wbce += wt * bce_with_logits(z, t);
            inter += wt * p * t;
            union += wt * (p + t);
        }
        let wiou = 1.0 - (inter + 1.0) / (union - inter + 1.0);
        total += wbce / wsum + wiou;
    }
    Ok(total / n as f64)
}

/// Combined cross-entropy (weight 0.3) and soft-DICE (weight 0.7) loss
/// for multi-class logits against integer label maps.
pub fn ce_dice_loss(pred_logits: &Tensor4D, target_labels: &Tensor4D, w: &LossWeights) -> Result<f64> {
    let (n, k, h, wd) = pred_logits.shape();
    if target_labels.shape() != (n, 1, h, wd) {
        return Err(Error::shape(format!(
            "ce_dice: labels must be (n,1,h,w) matching logits, got {:?} vs {:?}",
            target_labels.shape(),
            pred_logits.shape()
        )));
    }
    let plane = h * wd;
    let mut ce = 0.0f64;
    let mut class_p = vec![0.0f64; k];
    let mut class_t = vec![0.0f64; k];
    let mut class_inter = vec![0.0f64; k];
    for b in 0..n {
        for i in 0..plane {
            let label = target_labels.data()[b * plane + i];
            if label < 0.0 || label.fract() != 0.0 || label as usize >= k {
                return Err(Error::config(format!(
                    "ce_dice: label {label} out of range [0, {k})"
                )));
            }
            let y = label as usize;
            // per-pixel softmax in f64
            let mut m = f64::NEG_INFINITY;
            for ch in 0..k {
                m = m.max(pred_logits.data()[(b * k + ch) * plane + i] as f64);
            }
            let mut sum = 0.0f64;
            let mut exps = vec![0.0f64; k];
            for ch in 0..k {
                let e = ((pred_logits.data()[(b * k + ch) * plane + i] as f64) - m).exp();
                exps[ch] = e;
                sum += e;
            }
            ce -= (exps[y] / sum).ln();
            for ch in 0..k {
                let p = exps[ch] / sum;
                class_p[ch] += p;
                if ch == y {
                    class_t[ch] += 1.0;
                    class_inter[ch] += p;
                }
            }
        }
    }
    ce /= (n * plane) as f64;
    // smoothing constant 1.0 handles empty classes
    let mut dice = 0.0f64;
    for ch in 0..k {
        dice += (2.0 * class_inter[ch] + 1.0) / (class_p[ch] + class_t[ch] + 1.0);
    }
    dice /= k as f64;
    Ok(w.ce_weight * ce + w.dice_weight * (1.0 - dice))
}

fn resized_maps(maps: &PredictionMaps, target_h: usize, target_w: usize) -> Vec<Tensor4D> {
    maps.as_array()
        .iter()
        .map(|p| bilinear_resize(p, target_h, target_w))
        .collect()
}

fn sum_tensors(parts: &[&Tensor4D]) -> Tensor4D {
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        for (o, &v) in out.data_mut().iter_mut().zip(p.data()) {
            *o += v;
        }
    }
    out
}

/// Deep-supervision additive loss:
/// `a*L(p1) + b*L(p2) + g*L(p3) + z*L(p4) + d*L(p1+p2+p3+p4)`.
///
/// Maps are bilinearly resized to the target resolution first; the fifth
/// term sums raw logits before the base loss's own activation applies.
pub fn additive_loss(
    maps: &PredictionMaps,
    target_h: usize,
    target_w: usize,
    w: &LossWeights,
    base: &dyn Fn(&Tensor4D) -> Result<f64>,
) -> Result<f64> {
    let resized = resized_maps(maps, target_h, target_w);
    let coeffs = [w.alpha, w.beta, w.gamma, w.zeta];
    let mut total = 0.0;
    for (p, &c) in resized.iter().zip(&coeffs) {
        if c != 0.0 {
            total += c * base(p)?;
        }
    }
    if w.delta != 0.0 {
        let all: Vec<&Tensor4D> = resized.iter().collect();
        total += w.delta * base(&sum_tensors(&all))?;
    }
    Ok(total)
}

/// Combinatorial loss: the base loss over the logit sum of every
/// non-empty subset of the four prediction heads (15 terms). Summed by
/// default; `average` divides by the subset count.
pub fn mutation_loss(
    maps: &PredictionMaps,
    target_h: usize,
    target_w: usize,
    base: &dyn Fn(&Tensor4D) -> Result<f64>,
    average: bool,
) -> Result<f64> {
    let resized = resized_maps(maps, target_h, target_w);
    let mut total = 0.0;
    let mut count = 0u32;
    for mask in 1u32..16 {
        let subset: Vec<&Tensor4D> = (0..4)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| &resized[i])
            .collect();
        total += base(&sum_tensors(&subset))?;
        count += 1;
    }
    Ok(if average { total / count as f64 } else { total })
}
