//! Self-check suites behind the `verify` CLI subcommand, plus the
//! brute-force oracles they compare against.
//!
//! The oracles are deliberately naive (nested loops, exhaustive scans)
//! and independent of the kernel implementations they check.

use crate::blocks::{
    ag_forward, cab_forward, lgag_forward, mscam_forward, mscb_forward, msdc_forward, sab_forward,
    CABParams, LGAGParams, MSCBParams, MsdcArrangement, SABParams,
};
use crate::cost::{compare_gate_costs, count_flops, count_params, FlopMode};
use crate::decoder::{
    build_decoder, decoder_forward, synth_features, DecoderConfig, FeatureDistribution,
};
use crate::error::Result;
use crate::io::write_weight_bundle;
use crate::loss::{bce_iou_weighted, mutation_loss, LossWeights};
use crate::metrics::{dice_score, hd95, iou_score};
use crate::rng::CounterRng;
use crate::tensor::{
    adaptive_pool_1x1, channel_pool, channel_shuffle, conv2d, upsample2x, ConvParams, PoolMode,
    Tensor4D, UpsampleMode,
};

/// Direct convolution oracle: six nested loops, no optimizations.
pub fn conv2d_oracle(input: &Tensor4D, p: &ConvParams) -> Tensor4D {
    let out_h = (input.h() + 2 * p.padding - p.kernel_h) / p.stride + 1;
    let out_w = (input.w() + 2 * p.padding - p.kernel_w) / p.stride + 1;
    let cin_g = p.in_channels / p.groups;
    let cout_g = p.out_channels / p.groups;
    let mut out = Tensor4D::zeros(input.n(), p.out_channels, out_h, out_w);
    for b in 0..input.n() {
        for oc in 0..p.out_channels {
            let g = oc / cout_g;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = p.bias.as_ref().map_or(0.0, |bv| bv[oc]);
                    for ic in 0..cin_g {
                        for ky in 0..p.kernel_h {
                            for kx in 0..p.kernel_w {
                                let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                                let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                                if iy >= 0
                                    && ix >= 0
                                    && (iy as usize) < input.h()
                                    && (ix as usize) < input.w()
                                {
                                    let widx = ((oc * cin_g + ic) * p.kernel_h + ky) * p.kernel_w
                                        + kx;
                                    acc += input.at(b, g * cin_g + ic, iy as usize, ix as usize)
                                        * p.weights[widx];
                                }
                            }
                        }
                    }
                    out.set(b, oc, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Exhaustive-scan pooling oracle.
pub fn pool_oracle(input: &Tensor4D, mode: PoolMode) -> Tensor4D {
    let mut out = Tensor4D::zeros(input.n(), input.c(), 1, 1);
    for b in 0..input.n() {
        for ch in 0..input.c() {
            let mut max = f32::NEG_INFINITY;
            let mut sum = 0.0f32;
            for y in 0..input.h() {
                for x in 0..input.w() {
                    let v = input.at(b, ch, y, x);
                    max = max.max(v);
                    sum += v;
                }
            }
            let v = match mode {
                PoolMode::Max => max,
                PoolMode::Avg => sum / (input.h() * input.w()) as f32,
            };
            out.set(b, ch, 0, 0, v);
        }
    }
    out
}

/// Per-pixel scalar bilinear interpolation oracle, align-corners-false.
pub fn bilinear2x_oracle(input: &Tensor4D) -> Tensor4D {
    let (n, c, h, w) = input.shape();
    let mut out = Tensor4D::zeros(n, c, 2 * h, 2 * w);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..2 * h {
                for ox in 0..2 * w {
                    let fy = ((oy as f64 + 0.5) / 2.0 - 0.5).max(0.0);
                    let fx = ((ox as f64 + 0.5) / 2.0 - 0.5).max(0.0);
                    let y0 = (fy.floor() as usize).min(h - 1);
                    let x0 = (fx.floor() as usize).min(w - 1);
                    let y1 = (y0 + 1).min(h - 1);
                    let x1 = (x0 + 1).min(w - 1);
                    let wy = fy - y0 as f64;
                    let wx = fx - x0 as f64;
                    let v = (1.0 - wy) * (1.0 - wx) * input.at(b, ch, y0, x0) as f64
                        + (1.0 - wy) * wx * input.at(b, ch, y0, x1) as f64
                        + wy * (1.0 - wx) * input.at(b, ch, y1, x0) as f64
                        + wy * wx * input.at(b, ch, y1, x1) as f64;
                    out.set(b, ch, oy, ox, v as f32);
                }
            }
        }
    }
    out
}

fn max_abs_diff(a: &Tensor4D, b: &Tensor4D) -> f32 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

fn random_tensor(rng: &mut CounterRng, n: usize, c: usize, h: usize, w: usize) -> Tensor4D {
    let mut data = vec![0.0; n * c * h * w];
    rng.fill_uniform(&mut data, -1.0, 1.0);
    Tensor4D::new(n, c, h, w, data).unwrap()
}

fn random_conv(
    rng: &mut CounterRng,
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    bias: bool,
) -> ConvParams {
    let mut weights = vec![0.0; out_c * (in_c / groups) * k * k];
    rng.fill_uniform(&mut weights, -1.0, 1.0);
    let bias = bias.then(|| {
        let mut b = vec![0.0; out_c];
        rng.fill_uniform(&mut b, -1.0, 1.0);
        b
    });
    ConvParams::new(in_c, out_c, k, k, stride, padding, groups, weights, bias).unwrap()
}

/// Outcome of one named invariant check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub error: Option<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error.is_none()
    }
}

type Check = std::result::Result<(), String>;

fn divisors_of(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n % d == 0).collect()
}

fn kernels_conv_oracle(instances: usize) -> Check {
    let mut rng = CounterRng::stream(42, 1);
    for i in 0..instances {
        let n = 1 + (rng.next_u64() % 4) as usize;
        let k = [1usize, 3, 5][(rng.next_u64() % 3) as usize];
        let h = k + (rng.next_u64() % 7) as usize;
        let w = k + (rng.next_u64() % 7) as usize;
        // pick channels with a valid group structure
        let groups = 1 + (rng.next_u64() % 4) as usize;
        let in_c = groups * (1 + (rng.next_u64() % 2) as usize);
        let out_c = groups * (1 + (rng.next_u64() % 2) as usize);
        let stride = 1 + (rng.next_u64() % 2) as usize;
        let padding = (rng.next_u64() % (k / 2 + 1) as u64) as usize;
        let p = random_conv(&mut rng, in_c, out_c, k, stride, padding, groups, i % 2 == 0);
        let x = random_tensor(&mut rng, n, in_c, h, w);
        let got = conv2d(&x, &p).map_err(|e| e.to_string())?;
        let want = conv2d_oracle(&x, &p);
        let diff = max_abs_diff(&got, &want);
        if diff >= 1e-5 {
            return Err(format!(
                "conv2d instance {i}: max abs diff {diff} (n={n} c={in_c}->{out_c} k={k} s={stride} p={padding} g={groups})"
            ));
        }
    }
    Ok(())
}

fn kernels_grouped_equals_slices() -> Check {
    let mut rng = CounterRng::stream(42, 2);
    for i in 0..20 {
        let groups = 1 + (rng.next_u64() % 3) as usize;
        let per = 1 + (rng.next_u64() % 2) as usize;
        let in_c = groups * per;
        let out_c = groups * per;
        let p = random_conv(&mut rng, in_c, out_c, 3, 1, 1, groups, false);
        let x = random_tensor(&mut rng, 2, in_c, 6, 5);
        let full = conv2d(&x, &p).map_err(|e| e.to_string())?;
        // concatenate G independent convolutions on channel slices
        for g in 0..groups {
            let mut slice_data = Vec::new();
            for b in 0..x.n() {
                for ch in g * per..(g + 1) * per {
                    for y in 0..x.h() {
                        for xx in 0..x.w() {
                            slice_data.push(x.at(b, ch, y, xx));
                        }
                    }
                }
            }
            let xs = Tensor4D::new(x.n(), per, x.h(), x.w(), slice_data).unwrap();
            let wlen = per * per * 9;
            let pw = ConvParams::new(
                per,
                per,
                3,
                3,
                1,
                1,
                1,
                p.weights[g * wlen..(g + 1) * wlen].to_vec(),
                None,
            )
            .unwrap();
            let part = conv2d(&xs, &pw).map_err(|e| e.to_string())?;
            for b in 0..x.n() {
                for ch in 0..per {
                    for y in 0..full.h() {
                        for xx in 0..full.w() {
                            let d = (full.at(b, g * per + ch, y, xx) - part.at(b, ch, y, xx)).abs();
                            if d >= 1e-5 {
                                return Err(format!(
                                    "instance {i}: grouped conv differs from slice conv by {d}"
                                ));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn kernels_pool_upsample_shuffle(instances: usize) -> Check {
    let mut rng = CounterRng::stream(42, 3);
    for i in 0..instances {
        let n = 1 + (rng.next_u64() % 3) as usize;
        let c = 2 * (1 + (rng.next_u64() % 3) as usize);
        let h = 1 + (rng.next_u64() % 8) as usize;
        let w = 1 + (rng.next_u64() % 8) as usize;
        let x = random_tensor(&mut rng, n, c, h, w);
        for mode in [PoolMode::Max, PoolMode::Avg] {
            let got = adaptive_pool_1x1(&x, mode);
            let want = pool_oracle(&x, mode);
            let d = max_abs_diff(&got, &want);
            if d >= 1e-5 {
                return Err(format!("instance {i}: adaptive pool diff {d}"));
            }
        }
        // channel pool vs transposed scan
        let cmax = channel_pool(&x, PoolMode::Max);
        let cavg = channel_pool(&x, PoolMode::Avg);
        for b in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    let mut mx = f32::NEG_INFINITY;
                    let mut sum = 0.0;
                    for ch in 0..c {
                        mx = mx.max(x.at(b, ch, y, xx));
                        sum += x.at(b, ch, y, xx);
                    }
                    if (cmax.at(b, 0, y, xx) - mx).abs() >= 1e-5
                        || (cavg.at(b, 0, y, xx) - sum / c as f32).abs() >= 1e-5
                    {
                        return Err(format!("instance {i}: channel pool mismatch"));
                    }
                }
            }
        }
        let up = upsample2x(&x, UpsampleMode::Bilinear);
        let d = max_abs_diff(&up, &bilinear2x_oracle(&x));
        if d >= 1e-5 {
            return Err(format!("instance {i}: bilinear upsample diff {d}"));
        }
        // nearest replicates each pixel into a 2x2 block
        let near = upsample2x(&x, UpsampleMode::Nearest);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        if near.at(b, ch, y, xx) != x.at(b, ch, y / 2, xx / 2) {
                            return Err(format!("instance {i}: nearest upsample mismatch"));
                        }
                    }
                }
            }
        }
        // shuffle then inverse shuffle is the identity
        for &g in divisors_of(c).iter() {
            let s = channel_shuffle(&x, g).map_err(|e| e.to_string())?;
            let back = channel_shuffle(&s, c / g).map_err(|e| e.to_string())?;
            if back != x {
                return Err(format!("instance {i}: shuffle inverse failed for g={g}"));
            }
        }
    }
    Ok(())
}

fn blocks_gating_bound(instances: usize) -> Check {
    let mut rng = CounterRng::stream(43, 1);
    for i in 0..instances {
        let c = 4 * (1 + (rng.next_u64() % 2) as usize);
        let h = 3 + (rng.next_u64() % 5) as usize;
        let w = 3 + (rng.next_u64() % 5) as usize;
        let x = random_tensor(&mut rng, 1, c, h, w);
        let g = random_tensor(&mut rng, 1, c, h, w);
        let lgag = LGAGParams::init_lgag(c, c, c / 2, c / 2, &mut rng).unwrap();
        let ag = LGAGParams::init_ag(c, c, c / 2, &mut rng).unwrap();
        let cab = CABParams::init(c, 1.0 / 4.0, &mut rng).unwrap();
        let sab = SABParams::init(7, &mut rng).unwrap();
        let outputs = [
            ("lgag", lgag_forward(&lgag, &g, &x).map_err(|e| e.to_string())?),
            ("ag", ag_forward(&ag, &g, &x).map_err(|e| e.to_string())?),
            ("cab", cab_forward(&cab, &x).map_err(|e| e.to_string())?),
            ("sab", sab_forward(&sab, &x).map_err(|e| e.to_string())?),
        ];
        for (name, out) in &outputs {
            for (o, xi) in out.data().iter().zip(x.data()) {
                if o.abs() > xi.abs() + 1e-6 {
                    return Err(format!(
                        "instance {i}: {name} output magnitude {o} exceeds input {xi}"
                    ));
                }
                // the multiplier lies strictly inside (0,1)
                if *xi != 0.0 && (o / xi <= 0.0 || o / xi >= 1.0) {
                    return Err(format!(
                        "instance {i}: {name} attention multiplier {} outside (0,1)",
                        o / xi
                    ));
                }
            }
        }
    }
    Ok(())
}

fn blocks_mscam_composition() -> Check {
    let mut rng = CounterRng::stream(43, 2);
    for i in 0..20 {
        let c = 4 + 2 * (rng.next_u64() % 3) as usize;
        let x = random_tensor(&mut rng, 2, c, 5, 6);
        let cab = CABParams::init(c, 1.0 / 4.0, &mut rng).unwrap();
        let sab = SABParams::init(7, &mut rng).unwrap();
        let mscb = MSCBParams::init(c, c, 2, &[1, 3], MsdcArrangement::Parallel, &mut rng).unwrap();
        let fused = mscam_forward(&cab, &sab, &mscb, &x).map_err(|e| e.to_string())?;
        let manual = mscb_forward(
            &mscb,
            &sab_forward(&sab, &cab_forward(&cab, &x).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        let d = max_abs_diff(&fused, &manual);
        if d >= 1e-5 {
            return Err(format!("instance {i}: mscam != mscb.sab.cab, diff {d}"));
        }
    }
    Ok(())
}

fn blocks_msdc_ordering() -> Check {
    let mut rng = CounterRng::stream(43, 3);
    let c = 6;
    let x = random_tensor(&mut rng, 1, c, 5, 5);
    let fwd = MSCBParams::init(c / 2, c / 2, 2, &[1, 3], MsdcArrangement::Parallel, &mut rng).unwrap();
    // same branch params, reversed kernel order
    let mut rev = fwd.clone();
    rev.dwcbs.reverse();
    let a = msdc_forward(&fwd, &x).map_err(|e| e.to_string())?;
    let b = msdc_forward(&rev, &x).map_err(|e| e.to_string())?;
    if max_abs_diff(&a, &b) >= 1e-6 {
        return Err("parallel MSDC is not order-invariant".into());
    }
    let mut seq_fwd = fwd.clone();
    seq_fwd.arrangement = MsdcArrangement::Sequential;
    let mut seq_rev = rev;
    seq_rev.arrangement = MsdcArrangement::Sequential;
    let a = msdc_forward(&seq_fwd, &x).map_err(|e| e.to_string())?;
    let b = msdc_forward(&seq_rev, &x).map_err(|e| e.to_string())?;
    if max_abs_diff(&a, &b) < 1e-7 {
        return Err("sequential MSDC unexpectedly order-invariant".into());
    }
    Ok(())
}

fn graph_determinism_and_shapes() -> Check {
    let mut cfg = DecoderConfig::standard();
    cfg.channels = [8, 16, 32, 64];
    cfg.num_classes = 3;
    let dec1 = build_decoder(&cfg, 7).map_err(|e| e.to_string())?;
    let dec2 = build_decoder(&cfg, 7).map_err(|e| e.to_string())?;
    let e1 = dec1.param_entries();
    let e2 = dec2.param_entries();
    for (a, b) in e1.iter().zip(&e2) {
        if a.name != b.name || a.values != b.values {
            return Err(format!("same seed produced different parameter '{}'", a.name));
        }
    }
    let f = synth_features(&cfg, 2, 64, 96, 5, FeatureDistribution::Uniform)
        .map_err(|e| e.to_string())?;
    let m1 = decoder_forward(&dec1, &f).map_err(|e| e.to_string())?;
    let m2 = decoder_forward(&dec2, &f).map_err(|e| e.to_string())?;
    for (a, b) in m1.as_array().iter().zip(m2.as_array().iter()) {
        if a.data() != b.data() {
            return Err("forward pass is not bit-deterministic".into());
        }
    }
    let expect = [(2, 3, 2, 3), (2, 3, 4, 6), (2, 3, 8, 12), (2, 3, 16, 24)];
    for (p, want) in m1.as_array().iter().zip(&expect) {
        if p.shape() != *want {
            return Err(format!("stage shape {:?}, expected {:?}", p.shape(), want));
        }
    }
    Ok(())
}

fn graph_gate_saturation() -> Check {
    // with the gate's psi bias saturated high the attention map is exactly
    // 1, so the gate is the identity on its x input (the upsampled
    // feature) and the decoder equals a hand-wired graph with s = u
    let mut cfg = DecoderConfig::standard();
    cfg.channels = [8, 16, 32, 64];
    cfg.num_classes = 1;
    let mut dec = build_decoder(&cfg, 11).map_err(|e| e.to_string())?;
    for stage in &mut dec.stages {
        if let Some(g) = &mut stage.gate {
            g.psi.weights.iter_mut().for_each(|w| *w = 0.0);
            if let Some(b) = &mut g.psi.bias {
                b.iter_mut().for_each(|v| *v = 50.0);
            }
        }
    }
    let f = synth_features(&cfg, 1, 64, 64, 3, FeatureDistribution::Uniform)
        .map_err(|e| e.to_string())?;
    let got = decoder_forward(&dec, &f).map_err(|e| e.to_string())?;

    let refine = |stage: &crate::decoder::Stage, x: &Tensor4D| -> std::result::Result<Tensor4D, String> {
        let m = stage.mscam.as_ref().expect("mscam enabled");
        mscam_forward(&m.cab, &m.sab, &m.mscb, x).map_err(|e| e.to_string())
    };
    let feats = f.deepest_first();
    let mut want = Vec::new();
    let mut d = refine(&dec.stages[0], feats[0])?;
    want.push(
        crate::blocks::seg_head_forward(&dec.stages[0].head, &d).map_err(|e| e.to_string())?,
    );
    for i in 1..4 {
        let stage = &dec.stages[i];
        let u = crate::blocks::eucb_forward(stage.eucb.as_ref().unwrap(), &d)
            .map_err(|e| e.to_string())?;
        let fused = crate::tensor::add(&u, &u).map_err(|e| e.to_string())?;
        d = refine(stage, &fused)?;
        want.push(crate::blocks::seg_head_forward(&stage.head, &d).map_err(|e| e.to_string())?);
    }
    for (x, y) in got.as_array().iter().zip(&want) {
        let diff = max_abs_diff(x, y);
        if diff >= 1e-5 {
            return Err(format!("saturated gate differs from identity wiring by {diff}"));
        }
    }
    Ok(())
}

fn cost_params_equal_serialized() -> Check {
    for cfg in [DecoderConfig::standard(), DecoderConfig::tiny()] {
        let dec = build_decoder(&cfg, 0).map_err(|e| e.to_string())?;
        let report = count_params(&dec);
        let scalar_count: usize = dec.param_entries().iter().map(|e| e.values.len()).sum();
        if report.root.params != scalar_count as u64 {
            return Err(format!(
                "count_params {} != serialized scalar count {scalar_count}",
                report.root.params
            ));
        }
        let mut buf = Vec::new();
        write_weight_bundle(&mut buf, &dec).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn cost_flops_quadratic_and_additive() -> Check {
    let cfg = DecoderConfig::standard();
    let dec = build_decoder(&cfg, 0).map_err(|e| e.to_string())?;
    let f1 = count_flops(&dec, 224, 224, FlopMode::ConvOnly).root.flops;
    let f2 = count_flops(&dec, 448, 448, FlopMode::ConvOnly).root.flops;
    // CAB convs run on pooled 1x1 maps, so they are resolution-independent;
    // exclude them from the exact quadratic-scaling check
    let cab1: u64 = count_flops(&dec, 224, 224, FlopMode::ConvOnly)
        .root
        .rows()
        .iter()
        .filter(|(n, _, _)| n.ends_with("/cab"))
        .map(|(_, _, f)| *f)
        .sum();
    let cab2: u64 = count_flops(&dec, 448, 448, FlopMode::ConvOnly)
        .root
        .rows()
        .iter()
        .filter(|(n, _, _)| n.ends_with("/cab"))
        .map(|(_, _, f)| *f)
        .sum();
    if f2 - cab2 != 4 * (f1 - cab1) {
        return Err(format!(
            "spatial FLOPs not exactly quadratic: {} vs 4*{}",
            f2 - cab2,
            f1 - cab1
        ));
    }
    // toggling MSCAM off removes exactly the MSCAM subtrees
    let mut no_mscam = cfg.clone();
    no_mscam.use_mscam = false;
    let dec2 = build_decoder(&no_mscam, 0).map_err(|e| e.to_string())?;
    let full = count_params(&dec);
    let reduced = count_params(&dec2);
    let mscam_params: u64 = full
        .root
        .rows()
        .iter()
        .filter(|(n, _, _)| n.ends_with("/mscam"))
        .map(|(_, p, _)| *p)
        .sum();
    if full.root.params - reduced.root.params != mscam_params {
        return Err("param totals are not additive over the MSCAM subtree".into());
    }
    let (lgag, ag) = compare_gate_costs(&cfg, 256, 256).map_err(|e| e.to_string())?;
    if lgag.root.params >= ag.root.params || lgag.root.flops >= ag.root.flops {
        return Err("LGAG should cost less than the AG baseline".into());
    }
    Ok(())
}

fn loss_suite_checks() -> Check {
    let mut rng = CounterRng::stream(44, 1);
    // mutation loss equals the explicit 15-subset enumeration bit-for-bit
    let maps = crate::decoder::PredictionMaps {
        p1: random_tensor(&mut rng, 1, 1, 4, 4),
        p2: random_tensor(&mut rng, 1, 1, 4, 4),
        p3: random_tensor(&mut rng, 1, 1, 4, 4),
        p4: random_tensor(&mut rng, 1, 1, 4, 4),
    };
    let mut target_data = vec![0.0f32; 16];
    for (i, v) in target_data.iter_mut().enumerate() {
        *v = (i % 2) as f32;
    }
    let target = Tensor4D::new(1, 1, 4, 4, target_data).unwrap();
    let base = |logits: &Tensor4D| bce_iou_weighted(logits, &target, 3, 5.0);
    let got = mutation_loss(&maps, 4, 4, &base, false).map_err(|e| e.to_string())?;
    let mut manual = 0.0f64;
    let arr = maps.as_array();
    for mask in 1u32..16 {
        let mut sum = Tensor4D::zeros(1, 1, 4, 4);
        for (i, p) in arr.iter().enumerate() {
            if mask & (1 << i) != 0 {
                for (o, &v) in sum.data_mut().iter_mut().zip(p.data()) {
                    *o += v;
                }
            }
        }
        manual += base(&sum).map_err(|e| e.to_string())?;
    }
    if got != manual {
        return Err(format!("mutation loss {got} != enumeration {manual}"));
    }
    // DICE = 2*IoU/(1+IoU) on random masks
    for i in 0..50 {
        let mut a = vec![0.0f32; 64];
        let mut b = vec![0.0f32; 64];
        for v in a.iter_mut() {
            *v = (rng.next_u64() % 2) as f32;
        }
        for v in b.iter_mut() {
            *v = (rng.next_u64() % 2) as f32;
        }
        let ta = Tensor4D::new(1, 1, 8, 8, a).unwrap();
        let tb = Tensor4D::new(1, 1, 8, 8, b).unwrap();
        let d = dice_score(&ta, &tb).map_err(|e| e.to_string())? / 100.0;
        let j = iou_score(&ta, &tb).map_err(|e| e.to_string())? / 100.0;
        if (d - 2.0 * j / (1.0 + j)).abs() > 1e-9 {
            return Err(format!("instance {i}: DICE/IoU ratio identity violated"));
        }
    }
    // identical masks have zero boundary distance
    let mut m = vec![0.0f32; 49];
    for y in 2..5 {
        for x in 2..5 {
            m[y * 7 + x] = 1.0;
        }
    }
    let t = Tensor4D::new(1, 1, 7, 7, m).unwrap();
    let h = hd95(&t, &t).map_err(|e| e.to_string())?;
    if h != 0.0 {
        return Err(format!("hd95 of identical masks is {h}, expected 0"));
    }
    // perfect prediction drives the loss to ~0
    let logits = t.map(|v| if v > 0.5 { 50.0 } else { -50.0 });
    let l = bce_iou_weighted(&logits, &t, 31, 5.0).map_err(|e| e.to_string())?;
    if l >= 1e-4 {
        return Err(format!("perfect-prediction loss {l} >= 1e-4"));
    }
    let labels = t.clone();
    let two_class = {
        let mut data = Vec::new();
        for &v in t.data() {
            data.push(if v > 0.5 { -50.0 } else { 50.0 });
        }
        for &v in t.data() {
            data.push(if v > 0.5 { 50.0 } else { -50.0 });
        }
        Tensor4D::new(1, 2, 7, 7, data).unwrap()
    };
    let l = crate::loss::ce_dice_loss(&two_class, &labels, &LossWeights::default())
        .map_err(|e| e.to_string())?;
    if l >= 1e-4 {
        return Err(format!("perfect-prediction ce_dice loss {l} >= 1e-4"));
    }
    Ok(())
}

fn run_checks(checks: Vec<(&str, &str, Check)>) -> Vec<CheckResult> {
    checks
        .into_iter()
        .map(|(suite, name, result)| CheckResult {
            suite: suite.into(),
            name: name.into(),
            error: result.err(),
        })
        .collect()
}

/// Runs the named invariant suite. Valid names: kernels, blocks, graph,
/// cost, loss, all.
pub fn run_suite(suite: &str) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let all = suite == "all";
    if all || suite == "kernels" {
        out.extend(run_checks(vec![
            ("kernels", "conv2d_vs_direct_oracle", kernels_conv_oracle(200)),
            ("kernels", "grouped_conv_vs_channel_slices", kernels_grouped_equals_slices()),
            ("kernels", "pool_upsample_shuffle_oracles", kernels_pool_upsample_shuffle(60)),
        ]));
    }
    if all || suite == "blocks" {
        out.extend(run_checks(vec![
            ("blocks", "gating_bound_and_open_interval", blocks_gating_bound(100)),
            ("blocks", "mscam_composition", blocks_mscam_composition()),
            ("blocks", "msdc_ordering", blocks_msdc_ordering()),
        ]));
    }
    if all || suite == "graph" {
        out.extend(run_checks(vec![
            ("graph", "determinism_and_shape_chain", graph_determinism_and_shapes()),
            ("graph", "gate_saturation_identity", graph_gate_saturation()),
        ]));
    }
    if all || suite == "cost" {
        out.extend(run_checks(vec![
            ("cost", "params_equal_serialized_scalars", cost_params_equal_serialized()),
            ("cost", "flops_quadratic_and_additive", cost_flops_quadratic_and_additive()),
        ]));
    }
    if all || suite == "loss" {
        out.extend(run_checks(vec![("loss", "loss_and_metric_identities", loss_suite_checks())]));
    }
    if out.is_empty() {
        return Err(crate::error::Error::config(format!(
            "unknown suite '{suite}' (expected kernels|blocks|graph|cost|loss|all)"
        )));
    }
    Ok(out)
}
