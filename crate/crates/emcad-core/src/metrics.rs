//! Segmentation evaluation metrics: DICE, IoU, and the 95th-percentile
//! Hausdorff boundary distance.

use crate::error::{Error, Result};
use crate::tensor::Tensor4D;

fn binarize(t: &Tensor4D) -> Vec<bool> {
    t.data().iter().map(|&v| v > 0.5).collect()
}

fn check_shapes(pred: &Tensor4D, gt: &Tensor4D) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(format!(
            "metric: prediction {:?} and ground truth {:?} differ",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(())
}

/// DICE coefficient in percent: `100 * 2|Y n P| / (|Y| + |P|)`.
/// Both masks empty scores 100.
pub fn dice_score(pred_mask: &Tensor4D, gt_mask: &Tensor4D) -> Result<f64> {
    check_shapes(pred_mask, gt_mask)?;
    let p = binarize(pred_mask);
    let y = binarize(gt_mask);
    let inter = p.iter().zip(&y).filter(|(a, b)| **a && **b).count();
    let total = p.iter().filter(|v| **v).count() + y.iter().filter(|v| **v).count();
    if total == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * inter as f64 / total as f64)
}

/// IoU in percent: `100 * |Y n P| / |Y u P|`. Both masks empty scores 100.
pub fn iou_score(pred_mask: &Tensor4D, gt_mask: &Tensor4D) -> Result<f64> {
    check_shapes(pred_mask, gt_mask)?;
    let p = binarize(pred_mask);
    let y = binarize(gt_mask);
    let inter = p.iter().zip(&y).filter(|(a, b)| **a && **b).count();
    let union = p.iter().zip(&y).filter(|(a, b)| **a || **b).count();
    if union == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * inter as f64 / union as f64)
}

/// Boundary pixels of a plane: foreground pixels with at least one
/// 8-neighbor outside the mask (out-of-image counts as background).
fn boundary_pixels(mask: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let mut is_boundary = false;
            'scan: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        is_boundary = true;
                        break 'scan;
                    }
                    if !mask[ny as usize * w + nx as usize] {
                        is_boundary = true;
                        break 'scan;
                    }
                }
            }
            if is_boundary {
                out.push((y, x));
            }
        }
    }
    out
}

fn directed_distances(from: &[(usize, usize)], to: &[(usize, usize)], out: &mut Vec<f64>) {
    for &(fy, fx) in from {
        let mut best = f64::INFINITY;
        for &(ty, tx) in to {
            let dy = fy as f64 - ty as f64;
            let dx = fx as f64 - tx as f64;
            best = best.min(dy * dy + dx * dx);
        }
        out.push(best.sqrt());
    }
}

fn percentile(sorted: &[f64], pct: f64) -> f64 {
    // linear interpolation between closest ranks
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// How the percentile is taken over the two directed distance sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdConvention {
    /// Percentile of the pooled distances from both directions (default).
    Pooled,
    /// Max of the per-direction percentiles.
    MaxOfDirections,
}

/// 95th-percentile Hausdorff distance (pixels) between the boundaries of
/// two binary masks, both directions. Empty masks are an error rather
/// than a zero score.
pub fn hd95(pred_mask: &Tensor4D, gt_mask: &Tensor4D) -> Result<f64> {
    hd_percentile(pred_mask, gt_mask, 95.0, HdConvention::Pooled)
}

pub fn hd_percentile(
    pred_mask: &Tensor4D,
    gt_mask: &Tensor4D,
    pct: f64,
    convention: HdConvention,
) -> Result<f64> {
    check_shapes(pred_mask, gt_mask)?;
    let (n, c, h, w) = pred_mask.shape();
    let p = binarize(pred_mask);
    let y = binarize(gt_mask);
    let plane = h * w;
    let mut pb = Vec::new();
    let mut yb = Vec::new();
    let mut fwd = Vec::new(); // pred boundary -> gt boundary
    let mut bwd = Vec::new();
    for plane_idx in 0..n * c {
        let pm = &p[plane_idx * plane..(plane_idx + 1) * plane];
        let ym = &y[plane_idx * plane..(plane_idx + 1) * plane];
        pb.clear();
        yb.clear();
        pb.extend(boundary_pixels(pm, h, w));
        yb.extend(boundary_pixels(ym, h, w));
        if pb.is_empty() || yb.is_empty() {
            return Err(Error::config(
                "hd95 is undefined for an empty mask; result reported as missing",
            ));
        }
        directed_distances(&pb, &yb, &mut fwd);
        directed_distances(&yb, &pb, &mut bwd);
    }
    match convention {
        HdConvention::Pooled => {
            let mut pooled = fwd;
            pooled.extend(bwd);
            pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Ok(percentile(&pooled, pct))
        }
        HdConvention::MaxOfDirections => {
            fwd.sort_by(|a, b| a.partial_cmp(b).unwrap());
            bwd.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Ok(percentile(&fwd, pct).max(percentile(&bwd, pct)))
        }
    }
}
