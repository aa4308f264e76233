//! Acceptance criteria A1-A8, one printed pass line per criterion.
//! Run with `cargo test --test acceptance -- --nocapture` to see them.

use std::process::Command;
use std::time::Instant;

use emcad_core::cost::{analyze_config, compare_gate_costs, FlopMode};
use emcad_core::decoder::DecoderConfig;
use emcad_core::verify::run_suite;

fn within(got: u64, want: f64, rel: f64) -> bool {
    (got as f64 - want).abs() <= rel * want
}

fn assert_suite_clean(suite: &str) -> usize {
    let results = run_suite(suite).unwrap();
    for r in &results {
        assert!(r.passed(), "[{}] {}: {}", r.suite, r.name, r.error.as_deref().unwrap_or(""));
    }
    results.len()
}

#[test]
fn a1_parameter_totals() {
    let t0 = Instant::now();
    let std = analyze_config(&DecoderConfig::standard(), None, FlopMode::ConvOnly).unwrap();
    let tiny = analyze_config(&DecoderConfig::tiny(), None, FlopMode::ConvOnly).unwrap();
    assert!(within(std.root.params, 1.91e6, 0.02), "standard params {}", std.root.params);
    assert!(within(tiny.root.params, 0.507e6, 0.02), "tiny params {}", tiny.root.params);
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "took {dt:?}");
    println!(
        "A1 pass: params standard {} (1.91M +/- 2%), tiny {} (0.507M +/- 2%) in {dt:?}",
        std.root.params, tiny.root.params
    );
}

#[test]
fn a2_flop_totals() {
    let t0 = Instant::now();
    let s224 = analyze_config(&DecoderConfig::standard(), Some((224, 224)), FlopMode::ConvOnly)
        .unwrap();
    let s256 = analyze_config(&DecoderConfig::standard(), Some((256, 256)), FlopMode::ConvOnly)
        .unwrap();
    let t224 = analyze_config(&DecoderConfig::tiny(), Some((224, 224)), FlopMode::ConvOnly).unwrap();
    assert!(within(s224.root.flops, 0.381e9, 0.10), "standard @224 {}", s224.root.flops);
    assert!(within(s256.root.flops, 0.498e9, 0.10), "standard @256 {}", s256.root.flops);
    assert!(within(t224.root.flops, 0.110e9, 0.10), "tiny @224 {}", t224.root.flops);
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "took {dt:?}");
    println!(
        "A2 pass: flops {} @224, {} @256, tiny {} @224 (all +/- 10%) in {dt:?}",
        s224.root.flops, s256.root.flops, t224.root.flops
    );
}

#[test]
fn a3_ablation_ladder() {
    let rung = |lgag: bool, mscam: bool| {
        let mut cfg = DecoderConfig::standard();
        cfg.use_lgag = lgag;
        cfg.use_mscam = mscam;
        analyze_config(&cfg, Some((224, 224)), FlopMode::ConvOnly).unwrap().root
    };
    let table = [
        (false, false, 0.224e6, 0.100e9, "cascaded only"),
        (true, false, 0.235e6, 0.108e9, "+LGAG"),
        (false, true, 1.898e6, 0.373e9, "+MSCAM"),
        (true, true, 1.91e6, 0.381e9, "full"),
    ];
    for &(lgag, mscam, p, f, label) in &table {
        let r = rung(lgag, mscam);
        assert!(within(r.params, p, 0.05), "{label} params {}", r.params);
        assert!(within(r.flops, f, 0.10), "{label} flops {}", r.flops);
    }
    println!("A3 pass: all four ablation rungs within +/- 5% params, +/- 10% flops");
}

#[test]
fn a4_gate_calibration() {
    let (lgag, ag) = compare_gate_costs(&DecoderConfig::standard(), 256, 256).unwrap();
    assert!(within(lgag.root.params, 11.01e3, 0.05), "lgag params {}", lgag.root.params);
    assert!(within(lgag.root.flops, 10.47e6, 0.05), "lgag flops {}", lgag.root.flops);
    assert!(within(ag.root.params, 124.68e3, 0.05), "ag params {}", ag.root.params);
    assert!(within(ag.root.flops, 61.68e6, 0.05), "ag flops {}", ag.root.flops);
    let (tl, ta) = compare_gate_costs(&DecoderConfig::tiny(), 256, 256).unwrap();
    assert!(within(tl.root.params, 5.51e3, 0.05), "tiny lgag params {}", tl.root.params);
    assert!(within(tl.root.flops, 5.24e6, 0.05), "tiny lgag flops {}", tl.root.flops);
    assert!(within(ta.root.params, 31.62e3, 0.05), "tiny ag params {}", ta.root.params);
    assert!(within(ta.root.flops, 15.91e6, 0.05), "tiny ag flops {}", ta.root.flops);
    println!(
        "A4 pass: gates {}|{} vs AG {}|{} (standard), {}|{} vs {}|{} (tiny), all +/- 5%",
        lgag.root.params, lgag.root.flops, ag.root.params, ag.root.flops,
        tl.root.params, tl.root.flops, ta.root.params, ta.root.flops
    );
}

#[test]
fn a5_kernel_oracles() {
    let t0 = Instant::now();
    let n = assert_suite_clean("kernels");
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 30.0, "took {dt:?}");
    println!("A5 pass: kernel suite clean ({n} check groups, >=200 randomized oracle instances, <1e-5) in {dt:?}");
}

#[test]
fn a6_block_properties() {
    let n = assert_suite_clean("blocks");
    println!("A6 pass: block suite clean ({n} check groups: gating bounds on >=100 instances, mscam composition, msdc ordering)");
}

#[test]
fn a7_loss_suite() {
    let n = assert_suite_clean("loss");
    println!("A7 pass: loss suite clean ({n} check groups: 15-subset enumeration, dice-iou identity, hd95, perfect prediction)");
}

#[test]
fn a8_cli_determinism_and_speed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("standard.toml");
    std::fs::write(
        &cfg,
        "channels = [64, 128, 320, 512]\nnum_classes = 9\ninput_h = 224\ninput_w = 224\nseed = 3\n",
    )
    .unwrap();
    let run = |out_dir: &std::path::Path| {
        let t0 = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_emcad"))
            .env("EMCAD_THREADS", "1")
            .args(["forward"])
            .arg(&cfg)
            .arg("--out")
            .arg(out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        t0.elapsed()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let t1 = run(&a);
    let t2 = run(&b);
    for f in ["p1.emct", "p2.emct", "p3.emct", "p4.emct", "aggregate.emct"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs across runs"
        );
    }
    let slowest = t1.max(t2);
    assert!(slowest.as_secs_f64() < 10.0, "forward took {slowest:?}");
    println!(
        "A8 pass: byte-identical forward @224 on one core, {t1:?} and {t2:?} (< 10 s)"
    );
}
