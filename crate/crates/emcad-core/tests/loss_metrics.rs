//! Loss and metric tests against closed forms and independent scalar
//! re-implementations.

use emcad_core::decoder::PredictionMaps;
use emcad_core::loss::{
    additive_loss, bce_iou_weighted, ce_dice_loss, mutation_loss, LossWeights,
};
use emcad_core::metrics::{dice_score, hd95, hd_percentile, iou_score, HdConvention};
use emcad_core::rng::CounterRng;
use emcad_core::tensor::{bilinear_resize, Tensor4D};

fn rand_tensor(rng: &mut CounterRng, n: usize, c: usize, h: usize, w: usize) -> Tensor4D {
    let mut data = vec![0.0f32; n * c * h * w];
    rng.fill_uniform(&mut data, -3.0, 3.0);
    Tensor4D::new(n, c, h, w, data).unwrap()
}

fn rand_binary(rng: &mut CounterRng, n: usize, c: usize, h: usize, w: usize) -> Tensor4D {
    let mut data = vec![0.0f32; n * c * h * w];
    for v in &mut data {
        *v = (rng.next_u64() & 1) as f32;
    }
    Tensor4D::new(n, c, h, w, data).unwrap()
}

fn checkerboard(h: usize, w: usize) -> Tensor4D {
    let mut data = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = ((y + x) % 2) as f32;
        }
    }
    Tensor4D::new(1, 1, h, w, data).unwrap()
}

/// Independent scalar reference for the boundary-weighted BCE+IoU loss,
/// written directly from the definition.
fn bce_iou_reference(pred: &Tensor4D, target: &Tensor4D, window: usize, boost: f64) -> f64 {
    let (n, c, h, w) = target.shape();
    let per = c * h * w;
    let half = window as isize / 2;
    let mut total = 0.0f64;
    for b in 0..n {
        let mut wsum = 0.0;
        let mut wbce = 0.0;
        let mut inter = 0.0;
        let mut union = 0.0;
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let idx = ((b * c + ch) * h + y) * w + x;
                    let t = target.data()[idx] as f64;
                    let z = pred.data()[idx] as f64;
                    let mut pool = 0.0f64;
                    for ky in -half..=half {
                        for kx in -half..=half {
                            let (iy, ix) = (y as isize + ky, x as isize + kx);
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                pool += target.data()
                                    [((b * c + ch) * h + iy as usize) * w + ix as usize]
                                    as f64;
                            }
                        }
                    }
                    pool /= (window * window) as f64;
                    let wt = 1.0 + boost * (pool - t).abs();
                    let p = 1.0 / (1.0 + (-z).exp());
                    let bce = if t > 0.5 { -(p.max(1e-300)).ln() } else { -((1.0 - p).max(1e-300)).ln() };
                    wsum += wt;
                    wbce += wt * bce;
                    inter += wt * p * t;
                    union += wt * (p + t);
                }
            }
        }
        total += wbce / wsum + (1.0 - (inter + 1.0) / (union - inter + 1.0));
        let _ = per;
    }
    total / n as f64
}

/// Independent scalar reference for the CE(0.3)+DICE(0.7) loss.
fn ce_dice_reference(pred: &Tensor4D, labels: &Tensor4D) -> f64 {
    let (n, k, h, w) = pred.shape();
    let plane = h * w;
    let mut ce = 0.0f64;
    let mut cp = vec![0.0f64; k];
    let mut ct = vec![0.0f64; k];
    let mut ci = vec![0.0f64; k];
    for b in 0..n {
        for i in 0..plane {
            let y = labels.data()[b * plane + i] as usize;
            let logits: Vec<f64> = (0..k)
                .map(|ch| pred.data()[(b * k + ch) * plane + i] as f64)
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            ce -= (exps[y] / sum).ln();
            for ch in 0..k {
                let p = exps[ch] / sum;
                cp[ch] += p;
                if ch == y {
                    ct[ch] += 1.0;
                    ci[ch] += p;
                }
            }
        }
    }
    ce /= (n * plane) as f64;
    let dice: f64 = (0..k)
        .map(|ch| (2.0 * ci[ch] + 1.0) / (cp[ch] + ct[ch] + 1.0))
        .sum::<f64>()
        / k as f64;
    0.3 * ce + 0.7 * (1.0 - dice)
}

#[test]
fn bce_iou_cases() {
    // perfect prediction: huge correct-sign logits -> loss ~ 0
    let mut rng = CounterRng::new(1);
    let t = rand_binary(&mut rng, 2, 1, 8, 8);
    let perfect = t.map(|v| if v > 0.5 { 50.0 } else { -50.0 });
    assert!(bce_iou_weighted(&perfect, &t, 31, 5.0).unwrap() < 1e-6);

    // zero logits vs all-zero target: weights collapse to 1, giving
    // ln(2) + (1 - 1/(per/2 + 1)) exactly
    let z = Tensor4D::zeros(1, 1, 4, 4);
    let got = bce_iou_weighted(&z, &z, 31, 5.0).unwrap();
    let want = (2.0f64).ln() + (1.0 - 1.0 / 9.0);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");

    // checkerboard target, zero logits vs the scalar reference
    let t = checkerboard(4, 4);
    let z = Tensor4D::zeros(1, 1, 4, 4);
    // tolerance covers the library's f32 pooling vs the f64 reference
    let got = bce_iou_weighted(&z, &t, 3, 5.0).unwrap();
    assert!((got - bce_iou_reference(&z, &t, 3, 5.0)).abs() < 1e-6);

    // random logits and targets, several window sizes
    for window in [3, 5, 31] {
        let t = rand_binary(&mut rng, 2, 1, 7, 9);
        let p = rand_tensor(&mut rng, 2, 1, 7, 9);
        let got = bce_iou_weighted(&p, &t, window, 5.0).unwrap();
        let want = bce_iou_reference(&p, &t, window, 5.0);
        assert!((got - want).abs() < 1e-6, "window {window}: {got} vs {want}");
    }

    // non-binary target rejected; shape mismatch rejected
    let bad = Tensor4D::new(1, 1, 1, 1, vec![0.3]).unwrap();
    assert!(bce_iou_weighted(&bad, &bad, 31, 5.0).is_err());
    let small = Tensor4D::zeros(1, 1, 2, 2);
    let big = Tensor4D::zeros(1, 1, 4, 4);
    assert!(bce_iou_weighted(&small, &big, 31, 5.0).is_err());
}

#[test]
fn ce_dice_cases() {
    let w = LossWeights::default();
    // perfect one-hot logits -> loss ~ 0
    let labels = Tensor4D::new(1, 1, 2, 2, vec![0.0, 1.0, 2.0, 1.0]).unwrap();
    let mut logits = vec![-50.0f32; 3 * 4];
    for (i, &l) in labels.data().iter().enumerate() {
        logits[l as usize * 4 + i] = 50.0;
    }
    let pred = Tensor4D::new(1, 3, 2, 2, logits).unwrap();
    assert!(ce_dice_loss(&pred, &labels, &w).unwrap() < 1e-6);

    // uniform logits, K=2: CE term is exactly ln 2
    let pred = Tensor4D::zeros(1, 2, 2, 2);
    let labels = Tensor4D::new(1, 1, 2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    let got = ce_dice_loss(&pred, &labels, &w).unwrap();
    // dice per class: p = 0.5 each pixel -> cp = 2, ct = 2, ci = 1
    let dice = (2.0 * 1.0 + 1.0) / (2.0 + 2.0 + 1.0);
    let want = 0.3 * (2.0f64).ln() + 0.7 * (1.0 - dice);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");

    // random case vs the scalar reference
    let mut rng = CounterRng::new(2);
    for k in [2usize, 4] {
        let pred = rand_tensor(&mut rng, 2, k, 3, 3);
        let mut lab = vec![0.0f32; 2 * 9];
        for v in &mut lab {
            *v = (rng.next_u64() % k as u64) as f32;
        }
        let labels = Tensor4D::new(2, 1, 3, 3, lab).unwrap();
        let got = ce_dice_loss(&pred, &labels, &w).unwrap();
        let want = ce_dice_reference(&pred, &labels);
        assert!((got - want).abs() < 1e-9, "k={k}: {got} vs {want}");
    }

    // out-of-range and fractional labels rejected
    let labels = Tensor4D::new(1, 1, 2, 2, vec![0.0, 0.0, 0.0, 2.0]).unwrap();
    assert!(ce_dice_loss(&Tensor4D::zeros(1, 2, 2, 2), &labels, &w).is_err());
    let labels = Tensor4D::new(1, 1, 2, 2, vec![0.0, 0.5, 0.0, 0.0]).unwrap();
    assert!(ce_dice_loss(&Tensor4D::zeros(1, 2, 2, 2), &labels, &w).is_err());
}

fn rand_maps(rng: &mut CounterRng) -> PredictionMaps {
    PredictionMaps {
        p1: rand_tensor(rng, 1, 1, 2, 2),
        p2: rand_tensor(rng, 1, 1, 4, 4),
        p3: rand_tensor(rng, 1, 1, 8, 8),
        p4: rand_tensor(rng, 1, 1, 16, 16),
    }
}

#[test]
fn additive_loss_cases() {
    let mut rng = CounterRng::new(3);
    let maps = rand_maps(&mut rng);
    let target = rand_binary(&mut rng, 1, 1, 16, 16);
    let base = |p: &Tensor4D| bce_iou_weighted(p, &target, 31, 5.0);

    // all-zero weights -> 0
    let zero = LossWeights {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        zeta: 0.0,
        delta: 0.0,
        ..LossWeights::default()
    };
    assert_eq!(additive_loss(&maps, 16, 16, &zero, &base).unwrap(), 0.0);

    // weights (1,0,0,0,0) -> base(resized p1)
    let only_p1 = LossWeights { alpha: 1.0, ..zero };
    let got = additive_loss(&maps, 16, 16, &only_p1, &base).unwrap();
    let want = base(&bilinear_resize(&maps.p1, 16, 16)).unwrap();
    assert!((got - want).abs() < 1e-12);

    // delta = 0, unit stage weights -> plain sum of the four base losses
    let four = LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0, zeta: 1.0, ..zero };
    let got = additive_loss(&maps, 16, 16, &four, &base).unwrap();
    let want: f64 = maps
        .as_array()
        .iter()
        .map(|p| base(&bilinear_resize(p, 16, 16)).unwrap())
        .sum();
    assert!((got - want).abs() < 1e-12);

    // generic weights vs the hand-expanded five-term sum
    let w = LossWeights {
        alpha: 0.5,
        beta: 0.25,
        gamma: 2.0,
        zeta: 1.5,
        delta: 0.75,
        ..LossWeights::default()
    };
    let got = additive_loss(&maps, 16, 16, &w, &base).unwrap();
    let r: Vec<Tensor4D> = maps
        .as_array()
        .iter()
        .map(|p| bilinear_resize(p, 16, 16))
        .collect();
    let mut fused = r[0].clone();
    for t in &r[1..] {
        for (o, &v) in fused.data_mut().iter_mut().zip(t.data()) {
            *o += v;
        }
    }
    let want = 0.5 * base(&r[0]).unwrap()
        + 0.25 * base(&r[1]).unwrap()
        + 2.0 * base(&r[2]).unwrap()
        + 1.5 * base(&r[3]).unwrap()
        + 0.75 * base(&fused).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn mutation_loss_cases() {
    let mut rng = CounterRng::new(4);
    let target = rand_binary(&mut rng, 1, 1, 16, 16);
    let base = |p: &Tensor4D| bce_iou_weighted(p, &target, 31, 5.0);

    // enumeration oracle: all 15 non-empty subsets, summed
    let maps = rand_maps(&mut rng);
    let r: Vec<Tensor4D> = maps
        .as_array()
        .iter()
        .map(|p| bilinear_resize(p, 16, 16))
        .collect();
    let mut want = 0.0;
    let mut terms = 0;
    for mask in 1u32..16 {
        let mut acc = Tensor4D::zeros(1, 1, 16, 16);
        for i in 0..4 {
            if mask & (1 << i) != 0 {
                for (o, &v) in acc.data_mut().iter_mut().zip(r[i].data()) {
                    *o += v;
                }
            }
        }
        want += base(&acc).unwrap();
        terms += 1;
    }
    assert_eq!(terms, 15);
    let got = mutation_loss(&maps, 16, 16, &base, false).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    let avg = mutation_loss(&maps, 16, 16, &base, true).unwrap();
    assert!((avg - want / 15.0).abs() < 1e-12);

    // collapse: p2 = p3 = p4 = 0 at the target resolution, so every
    // subset containing p1 scores base(p1) (8 of them) and the rest
    // score base(0) (7 of them)
    let maps = PredictionMaps {
        p1: rand_tensor(&mut rng, 1, 1, 16, 16),
        p2: Tensor4D::zeros(1, 1, 16, 16),
        p3: Tensor4D::zeros(1, 1, 16, 16),
        p4: Tensor4D::zeros(1, 1, 16, 16),
    };
    let got = mutation_loss(&maps, 16, 16, &base, false).unwrap();
    let want = 8.0 * base(&maps.p1).unwrap() + 7.0 * base(&Tensor4D::zeros(1, 1, 16, 16)).unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

fn mask_from(points: &[(usize, usize)], h: usize, w: usize) -> Tensor4D {
    let mut data = vec![0.0f32; h * w];
    for &(y, x) in points {
        data[y * w + x] = 1.0;
    }
    Tensor4D::new(1, 1, h, w, data).unwrap()
}

#[test]
fn dice_iou_cases() {
    let a = mask_from(&[(0, 0), (0, 1), (1, 0), (1, 1)], 4, 4);
    assert_eq!(dice_score(&a, &a).unwrap(), 100.0);
    assert_eq!(iou_score(&a, &a).unwrap(), 100.0);

    // disjoint masks -> 0
    let b = mask_from(&[(2, 2), (2, 3), (3, 2), (3, 3)], 4, 4);
    assert_eq!(dice_score(&a, &b).unwrap(), 0.0);
    assert_eq!(iou_score(&a, &b).unwrap(), 0.0);

    // |Y| = 4, |P| = 4, overlap 2 -> dice 50, iou 33.33
    let c = mask_from(&[(1, 0), (1, 1), (2, 0), (2, 1)], 4, 4);
    assert!((dice_score(&c, &a).unwrap() - 50.0).abs() < 1e-12);
    assert!((iou_score(&c, &a).unwrap() - 100.0 * 2.0 / 6.0).abs() < 1e-9);

    // both empty -> 100 by convention
    let e = Tensor4D::zeros(1, 1, 4, 4);
    assert_eq!(dice_score(&e, &e).unwrap(), 100.0);
    assert_eq!(iou_score(&e, &e).unwrap(), 100.0);

    // dice = 2*iou / (1 + iou) consistency on random masks
    let mut rng = CounterRng::new(5);
    for _ in 0..50 {
        let p = rand_binary(&mut rng, 1, 1, 6, 6);
        let y = rand_binary(&mut rng, 1, 1, 6, 6);
        let d = dice_score(&p, &y).unwrap() / 100.0;
        let i = iou_score(&p, &y).unwrap() / 100.0;
        assert!((d - 2.0 * i / (1.0 + i)).abs() < 1e-9);
    }

    // shape mismatch rejected
    assert!(dice_score(&a, &Tensor4D::zeros(1, 1, 2, 2)).is_err());
}

/// Independent HD oracle: recompute boundaries and all pairwise
/// distances directly, then interpolate the percentile.
fn hd_oracle(pred: &Tensor4D, gt: &Tensor4D, pct: f64, pooled: bool) -> f64 {
    let (_, _, h, w) = pred.shape();
    let boundary = |t: &Tensor4D| {
        let mut pts = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if t.at(0, 0, y, x) <= 0.5 {
                    continue;
                }
                let mut edge = false;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            edge = true;
                        } else if gt_at(t, ny as usize, nx as usize) <= 0.5 {
                            edge = true;
                        }
                    }
                }
                if edge {
                    pts.push((y as f64, x as f64));
                }
            }
        }
        pts
    };
    fn gt_at(t: &Tensor4D, y: usize, x: usize) -> f32 {
        t.at(0, 0, y, x)
    }
    let directed = |from: &[(f64, f64)], to: &[(f64, f64)]| -> Vec<f64> {
        from.iter()
            .map(|&(fy, fx)| {
                to.iter()
                    .map(|&(ty, tx)| ((fy - ty).powi(2) + (fx - tx).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let pctile = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if v.len() == 1 {
            return v[0];
        }
        let rank = pct / 100.0 * (v.len() - 1) as f64;
        let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
    };
    let pb = boundary(pred);
    let yb = boundary(gt);
    let fwd = directed(&pb, &yb);
    let bwd = directed(&yb, &pb);
    if pooled {
        let mut all = fwd;
        all.extend(bwd);
        pctile(all)
    } else {
        pctile(fwd).max(pctile(bwd))
    }
}

#[test]
fn hd95_cases() {
    // identical masks -> 0
    let a = mask_from(&[(1, 1), (1, 2), (2, 1), (2, 2)], 5, 5);
    assert_eq!(hd95(&a, &a).unwrap(), 0.0);

    // two single pixels 5 apart -> 5
    let p = mask_from(&[(0, 0)], 8, 8);
    let y = mask_from(&[(0, 5)], 8, 8);
    assert!((hd95(&p, &y).unwrap() - 5.0).abs() < 1e-12);

    // 3x3 square vs a copy shifted by (2, 0), both conventions, against
    // the exhaustive oracle
    let sq = |oy: usize| {
        let pts: Vec<(usize, usize)> = (0..3).flat_map(|y| (0..3).map(move |x| (y + oy, x))).collect();
        mask_from(&pts, 10, 10)
    };
    let (p, y) = (sq(0), sq(2));
    for (conv, pooled) in [(HdConvention::Pooled, true), (HdConvention::MaxOfDirections, false)] {
        let got = hd_percentile(&p, &y, 95.0, conv).unwrap();
        let want = hd_oracle(&p, &y, 95.0, pooled);
        assert!((got - want).abs() < 1e-12, "{conv:?}: {got} vs {want}");
    }

    // random masks (guaranteed non-empty) against the oracle
    let mut rng = CounterRng::new(6);
    for _ in 0..20 {
        let mut p = rand_binary(&mut rng, 1, 1, 7, 7);
        let mut y = rand_binary(&mut rng, 1, 1, 7, 7);
        p.data_mut()[0] = 1.0;
        y.data_mut()[48] = 1.0;
        for (conv, pooled) in
            [(HdConvention::Pooled, true), (HdConvention::MaxOfDirections, false)]
        {
            let got = hd_percentile(&p, &y, 95.0, conv).unwrap();
            let want = hd_oracle(&p, &y, 95.0, pooled);
            assert!((got - want).abs() < 1e-9, "{conv:?}: {got} vs {want}");
        }
    }

    // empty mask is an error, not a zero score
    let empty = Tensor4D::zeros(1, 1, 5, 5);
    assert!(hd95(&a, &empty).is_err());
    assert!(hd95(&empty, &a).is_err());
}
