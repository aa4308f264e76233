//! Decoder-graph tests: shape schedule, determinism, ablation toggles,
//! and prediction aggregation.

use emcad_core::blocks::{mscam_forward, seg_head_forward};
use emcad_core::decoder::{
    aggregate_predictions, build_decoder, decoder_forward, final_map, softmax_channels,
    synth_features, DecoderConfig, FeatureDistribution, PredictionMaps,
};
use emcad_core::rng::CounterRng;
use emcad_core::tensor::Tensor4D;

fn small_config() -> DecoderConfig {
    DecoderConfig {
        channels: [8, 16, 32, 64],
        num_classes: 2,
        ..DecoderConfig::standard()
    }
}

fn max_abs_diff(a: &Tensor4D, b: &Tensor4D) -> f32 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max)
}

#[test]
fn build_is_deterministic() {
    let cfg = small_config();
    let a = build_decoder(&cfg, 42).unwrap();
    let b = build_decoder(&cfg, 42).unwrap();
    for (ea, eb) in a.param_entries().iter().zip(b.param_entries().iter()) {
        assert_eq!(ea.name, eb.name);
        assert_eq!(ea.dims, eb.dims);
        assert_eq!(ea.values, eb.values);
    }
    let c = build_decoder(&cfg, 43).unwrap();
    assert_ne!(
        a.param_entries()[0].values,
        c.param_entries()[0].values,
        "different seeds should differ"
    );
}

#[test]
fn config_validation() {
    let mut cfg = small_config();
    cfg.channels = [16, 8, 32, 64]; // not strictly increasing
    assert!(build_decoder(&cfg, 0).is_err());
    let mut cfg = small_config();
    cfg.kernel_set = vec![2];
    assert!(build_decoder(&cfg, 0).is_err());
    let mut cfg = small_config();
    cfg.channels = [0, 1, 2, 3];
    assert!(build_decoder(&cfg, 0).is_err());
}

#[test]
fn standard_shape_schedule_at_224() {
    let cfg = DecoderConfig::standard();
    let f = synth_features(&cfg, 1, 224, 224, 0, FeatureDistribution::Zeros).unwrap();
    assert_eq!(f.x1.shape(), (1, 64, 56, 56));
    assert_eq!(f.x4.shape(), (1, 512, 7, 7));
    let dec = build_decoder(&small_config(), 0).unwrap();
    let f = synth_features(&small_config(), 2, 224, 224, 1, FeatureDistribution::Uniform).unwrap();
    let maps = decoder_forward(&dec, &f).unwrap();
    assert_eq!(maps.p1.shape(), (2, 2, 7, 7));
    assert_eq!(maps.p2.shape(), (2, 2, 14, 14));
    assert_eq!(maps.p3.shape(), (2, 2, 28, 28));
    assert_eq!(maps.p4.shape(), (2, 2, 56, 56));
}

#[test]
fn zero_features_yield_constant_bias_maps() {
    // zero features with zeroed SH bias give exactly the bias constant
    let cfg = small_config();
    let f = synth_features(&cfg, 1, 64, 64, 0, FeatureDistribution::Zeros).unwrap();
    // non-cascaded so every stage sees the zero feature directly, and
    // strip MSCAM so no affine BN offsets creep in
    let mut plain = cfg.clone();
    plain.cascaded = false;
    plain.use_mscam = false;
    plain.use_lgag = false;
    let dec = build_decoder(&plain, 5).unwrap();
    let maps = decoder_forward(&dec, &f).unwrap();
    for (stage, p) in dec.stages.iter().zip(maps.as_array()) {
        let bias = stage.head.bias.as_ref().unwrap();
        for b in 0..p.n() {
            for ch in 0..p.c() {
                for y in 0..p.h() {
                    for x in 0..p.w() {
                        assert_eq!(p.at(b, ch, y, x), bias[ch]);
                    }
                }
            }
        }
    }
}

#[test]
fn forward_determinism_and_feature_mismatch() {
    let cfg = small_config();
    let dec = build_decoder(&cfg, 9).unwrap();
    let f = synth_features(&cfg, 1, 64, 96, 3, FeatureDistribution::Uniform).unwrap();
    let a = decoder_forward(&dec, &f).unwrap();
    let b = decoder_forward(&dec, &f).unwrap();
    for (x, y) in a.as_array().iter().zip(b.as_array().iter()) {
        assert_eq!(x.data(), y.data());
    }
    // wrong widths are a shape error naming the stage
    let other = DecoderConfig {
        channels: [4, 16, 32, 64],
        ..small_config()
    };
    let bad = synth_features(&other, 1, 64, 96, 3, FeatureDistribution::Uniform).unwrap();
    let err = decoder_forward(&dec, &bad).unwrap_err().to_string();
    assert!(err.contains("stage 3"), "error should name the stage: {err}");
}

#[test]
fn ablation_toggles_match_hand_wired_graphs() {
    let cfg = small_config();
    let f = synth_features(&cfg, 1, 64, 64, 7, FeatureDistribution::Uniform).unwrap();
    let full = decoder_forward(&build_decoder(&cfg, 11).unwrap(), &f).unwrap();

    let mut off = cfg.clone();
    off.use_lgag = false;
    off.use_mscam = false;
    let reduced_dec = build_decoder(&off, 11).unwrap();
    let reduced = decoder_forward(&reduced_dec, &f).unwrap();
    assert!(max_abs_diff(&full.p4, &reduced.p4) > 0.0, "toggles must change outputs");

    // hand-wire the reduced graph: d = eucb(d); d = d + x_i; p = head(d)
    let feats = f.deepest_first();
    let mut d = feats[0].clone();
    let mut want = Vec::new();
    want.push(seg_head_forward(&reduced_dec.stages[0].head, &d).unwrap());
    for i in 1..4 {
        let stage = &reduced_dec.stages[i];
        let u = emcad_core::blocks::eucb_forward(stage.eucb.as_ref().unwrap(), &d).unwrap();
        d = emcad_core::tensor::add(&u, feats[i]).unwrap();
        want.push(seg_head_forward(&stage.head, &d).unwrap());
    }
    for (got, want) in reduced.as_array().iter().zip(&want) {
        assert!(max_abs_diff(got, want) < 1e-6);
    }

    // non-cascaded: each stage refines its own feature independently
    let mut nc = cfg.clone();
    nc.cascaded = false;
    let nc_dec = build_decoder(&nc, 11).unwrap();
    let got = decoder_forward(&nc_dec, &f).unwrap();
    for (i, (stage, feat)) in nc_dec.stages.iter().zip(feats).enumerate() {
        let m = stage.mscam.as_ref().unwrap();
        let refined = mscam_forward(&m.cab, &m.sab, &m.mscb, feat).unwrap();
        let want = seg_head_forward(&stage.head, &refined).unwrap();
        assert!(max_abs_diff(got.as_array()[i], &want) < 1e-6);
        assert!(stage.eucb.is_none());
        assert!(stage.gate.is_none());
    }
}

#[test]
fn aggregation_and_final_map() {
    // four constant-0 binary logit maps -> constant 0.5 probability
    let zeros = |h: usize| Tensor4D::zeros(1, 1, h, h);
    let maps = PredictionMaps {
        p1: zeros(2),
        p2: zeros(4),
        p3: zeros(8),
        p4: zeros(16),
    };
    let agg = aggregate_predictions(&maps, 64, 64, 1).unwrap();
    for &v in agg.data() {
        assert!((v - 0.5).abs() < 1e-6);
    }

    // softmax sums to 1 per pixel
    let mut rng = CounterRng::new(21);
    let mk = |h: usize, rng: &mut CounterRng| {
        let mut data = vec![0.0; 3 * h * h];
        rng.fill_uniform(&mut data, -2.0, 2.0);
        Tensor4D::new(1, 3, h, h, data).unwrap()
    };
    let maps = PredictionMaps {
        p1: mk(2, &mut rng),
        p2: mk(4, &mut rng),
        p3: mk(8, &mut rng),
        p4: mk(16, &mut rng),
    };
    let agg = aggregate_predictions(&maps, 64, 64, 3).unwrap();
    for b in 0..1 {
        for y in 0..64 {
            for x in 0..64 {
                let s: f32 = (0..3).map(|ch| agg.at(b, ch, y, x)).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    // two-class logits (2, 0) -> softmax ~ (0.8808, 0.1192)
    let two = softmax_channels(&Tensor4D::new(1, 2, 1, 1, vec![2.0, 0.0]).unwrap());
    assert!((two.data()[0] - 0.8808).abs() < 1e-3);
    assert!((two.data()[1] - 0.1192).abs() < 1e-3);

    // final map: 56 -> 224 upsample factor
    let p4 = Tensor4D::zeros(1, 1, 56, 56);
    let f = final_map(&PredictionMaps {
        p1: Tensor4D::zeros(1, 1, 7, 7),
        p2: Tensor4D::zeros(1, 1, 14, 14),
        p3: Tensor4D::zeros(1, 1, 28, 28),
        p4,
    });
    assert_eq!(f.shape(), (1, 1, 224, 224));
    assert!((f.data()[0] - 0.5).abs() < 1e-6);
}

#[test]
fn synth_features_determinism_and_validation() {
    let cfg = small_config();
    let a = synth_features(&cfg, 1, 64, 64, 3, FeatureDistribution::Uniform).unwrap();
    let b = synth_features(&cfg, 1, 64, 64, 3, FeatureDistribution::Uniform).unwrap();
    assert_eq!(a.x2.data(), b.x2.data());
    assert!(synth_features(&cfg, 1, 60, 64, 3, FeatureDistribution::Uniform).is_err());
    let z = synth_features(&cfg, 1, 64, 64, 3, FeatureDistribution::Zeros).unwrap();
    assert!(z.x1.data().iter().all(|&v| v == 0.0));
}

#[test]
fn weight_roundtrip_through_load_params() {
    let cfg = small_config();
    let src = build_decoder(&cfg, 99).unwrap();
    let mut dst = build_decoder(&cfg, 1).unwrap();
    let entries: Vec<(String, Vec<f32>)> = src
        .param_entries()
        .iter()
        .map(|e| (e.name.clone(), e.values.to_vec()))
        .collect();
    dst.load_params(&entries).unwrap();
    for (a, b) in src.param_entries().iter().zip(dst.param_entries().iter()) {
        assert_eq!(a.values, b.values, "{} differs", a.name);
    }
    // wrong name rejected
    let mut bad = entries.clone();
    bad[0].0 = "bogus".into();
    assert!(dst.load_params(&bad).is_err());
    // wrong count rejected
    assert!(dst.load_params(&entries[1..]).is_err());
}
