//! Command-line surface over the decoder library: static cost analysis,
//! deterministic forward passes, invariant suites, and loss/metric
//! evaluation on tensor files.
//!
//! Exit codes: 0 success, 1 assertion/tolerance failure, 2 usage/format
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use emcad_core::cost::{analyze_config, render_table, CostReport, FlopMode, TableFormat};
use emcad_core::decoder::{
    aggregate_predictions, build_decoder, decoder_forward, final_map, synth_features,
    FeatureDistribution, PredictionMaps, PyramidFeatures,
};
use emcad_core::io::{load_config, load_tensor, read_bundle, save_tensor};
use emcad_core::loss::{additive_loss, bce_iou_weighted, ce_dice_loss, mutation_loss, LossWeights};
use emcad_core::metrics::{dice_score, hd95, iou_score};
use emcad_core::tensor::{bilinear_resize, sigmoid, Tensor4D};
use emcad_core::verify::run_suite;
use emcad_core::{Error, Result};

#[derive(Parser)]
#[command(name = "emcad", version, about = "Multi-scale convolutional attention decoder tool")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Aggregate {
    /// p4 upsampled 4x to input resolution, then activated.
    Final,
    /// All four maps upsampled to input resolution and summed, then activated.
    Sum,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossKind {
    #[value(name = "bce_iou")]
    BceIou,
    #[value(name = "ce_dice")]
    CeDice,
    Additive,
    Mutation,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the parameter/FLOP report for a config.
    Analyze {
        config: PathBuf,
        /// Input resolution H W (default: the config's input size).
        #[arg(long, num_args = 2, value_names = ["H", "W"])]
        res: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Count elementwise ops (BN, activations, adds) at 1 FLOP each.
        #[arg(long)]
        full: bool,
        /// CSV of expected rows (block,params,flops[,rel_tol]); exit 1 on
        /// any deviation beyond tolerance.
        #[arg(long)]
        expect: Option<PathBuf>,
    },
    /// Run the decoder forward pass and write the prediction maps.
    Forward {
        config: PathBuf,
        /// Feature bundle file with entries x1..x4 (mutually exclusive
        /// with --seed).
        #[arg(long, conflicts_with = "seed")]
        features: Option<PathBuf>,
        /// Seed for synthetic pyramid features (default: the config's seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for p1..p4 and the aggregate tensor files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "final")]
        aggregate: Aggregate,
    },
    /// Run the library's invariant suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Evaluate a loss on prediction/target tensor files. The last path
    /// is the target; the preceding paths are predictions (four for
    /// additive/mutation).
    Loss {
        #[arg(num_args = 2.., required = true)]
        paths: Vec<PathBuf>,
        #[arg(long = "loss", value_enum)]
        loss: LossKind,
        /// Also print DICE/IoU/HD95 of the thresholded prediction.
        #[arg(long)]
        metrics: bool,
    },
    /// DICE/IoU/HD95 between two binary mask tensor files.
    Metrics { pred: PathBuf, target: PathBuf },
}

fn init_thread_pool() -> Result<()> {
    if let Ok(v) = std::env::var("EMCAD_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::config(format!("EMCAD_THREADS must be an integer, got '{v}'")))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        }
    }
    Ok(())
}

/// Checks report rows against an expected CSV; returns the failures.
fn check_expectations(report: &CostReport, expect_path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(expect_path)?;
    let rows = report.root.rows();
    let mut failures = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("block,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(Error::format(format!(
                "{}:{}: expected 'block,params,flops[,rel_tol]'",
                expect_path.display(),
                lineno + 1
            )));
        }
        let parse_u64 = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::format(format!("bad count '{s}' in expect file")))
        };
        let want_params = parse_u64(fields[1])?;
        let want_flops = parse_u64(fields[2])?;
        let tol: f64 = if fields.len() == 4 {
            fields[3]
                .trim()
                .parse()
                .map_err(|_| Error::format(format!("bad tolerance '{}' in expect file", fields[3])))?
        } else {
            0.05
        };
        let name = fields[0].trim();
        let row = rows
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| Error::format(format!("expect file names unknown block '{name}'")))?;
        let within = |got: u64, want: u64| {
            (got as f64 - want as f64).abs() <= tol * (want as f64).max(1.0)
        };
        if !within(row.1, want_params) {
            failures.push(format!(
                "{name}: params {} outside {want_params} +/- {:.1}%",
                row.1,
                100.0 * tol
            ));
        }
        if !within(row.2, want_flops) {
            failures.push(format!(
                "{name}: flops {} outside {want_flops} +/- {:.1}%",
                row.2,
                100.0 * tol
            ));
        }
    }
    Ok(failures)
}

fn cmd_analyze(
    config: &Path,
    res: Option<(usize, usize)>,
    format: Format,
    full: bool,
    expect: Option<&Path>,
) -> Result<u8> {
    let cfg = load_config(config)?;
    let (h, w) = res.unwrap_or((cfg.input_h, cfg.input_w));
    if h % 32 != 0 || w % 32 != 0 {
        return Err(Error::config(format!(
            "resolution must be divisible by 32, got {h}x{w}"
        )));
    }
    let mode = if full { FlopMode::Full } else { FlopMode::ConvOnly };
    let report = analyze_config(&cfg.decoder_config(), Some((h, w)), mode)?;
    let table_format = match format {
        Format::Text => TableFormat::Text,
        Format::Csv => TableFormat::Csv,
    };
    print!("{}", render_table(&report, table_format));
    if let Some(path) = expect {
        let failures = check_expectations(&report, path)?;
        if !failures.is_empty() {
            for f in &failures {
                eprintln!("expectation failed: {f}");
            }
            return Ok(1);
        }
        println!("all expectations met");
    }
    Ok(0)
}

fn load_features(path: &Path) -> Result<PyramidFeatures> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let entries = read_bundle(&mut r)?;
    let mut levels: [Option<Tensor4D>; 4] = [None, None, None, None];
    for e in entries {
        let idx = match e.name.as_str() {
            "x1" => 0,
            "x2" => 1,
            "x3" => 2,
            "x4" => 3,
            other => {
                return Err(Error::format(format!(
                    "feature bundle entry '{other}' is not one of x1..x4"
                )))
            }
        };
        if e.dims.len() != 4 {
            return Err(Error::format(format!("feature '{}' must be rank 4", e.name)));
        }
        levels[idx] = Some(Tensor4D::new(
            e.dims[0] as usize,
            e.dims[1] as usize,
            e.dims[2] as usize,
            e.dims[3] as usize,
            e.values,
        )?);
    }
    let mut it = levels.into_iter();
    let mut take = |name: &str| {
        it.next()
            .unwrap()
            .ok_or_else(|| Error::format(format!("feature bundle is missing '{name}'")))
    };
    Ok(PyramidFeatures {
        x1: take("x1")?,
        x2: take("x2")?,
        x3: take("x3")?,
        x4: take("x4")?,
    })
}

fn cmd_forward(
    config: &Path,
    features: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    aggregate: Aggregate,
) -> Result<u8> {
    let cfg = load_config(config)?;
    let dcfg = cfg.decoder_config();
    let dec = build_decoder(&dcfg, cfg.seed)?;
    let feats = match features {
        Some(path) => load_features(path)?,
        None => synth_features(
            &dcfg,
            cfg.batch,
            cfg.input_h,
            cfg.input_w,
            seed.unwrap_or(cfg.seed),
            FeatureDistribution::Uniform,
        )?,
    };
    let maps = decoder_forward(&dec, &feats)?;
    std::fs::create_dir_all(out)?;
    for (i, p) in maps.as_array().iter().enumerate() {
        let path = out.join(format!("p{}.emct", i + 1));
        save_tensor(&path, p)?;
        println!("wrote {}", path.display());
    }
    let agg = match aggregate {
        Aggregate::Final => final_map(&maps),
        Aggregate::Sum => {
            let (h, w) = (4 * maps.p4.h(), 4 * maps.p4.w());
            aggregate_predictions(&maps, h, w, dcfg.num_classes)?
        }
    };
    let path = out.join("aggregate.emct");
    save_tensor(&path, &agg)?;
    println!("wrote {}", path.display());
    Ok(0)
}

fn cmd_verify(suite: &str) -> Result<u8> {
    let results = run_suite(suite)?;
    let mut failed = 0;
    for r in &results {
        match &r.error {
            None => println!("[{}] {} ... ok", r.suite, r.name),
            Some(msg) => {
                println!("[{}] {} ... FAIL: {msg}", r.suite, r.name);
                failed += 1;
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    Ok(if failed == 0 { 0 } else { 1 })
}

fn print_metrics(pred_mask: &Tensor4D, target: &Tensor4D) -> Result<()> {
    println!("dice = {}", dice_score(pred_mask, target)?);
    println!("iou = {}", iou_score(pred_mask, target)?);
    match hd95(pred_mask, target) {
        Ok(v) => println!("hd95 = {v}"),
        Err(_) => println!("hd95 = missing (empty mask)"),
    }
    Ok(())
}

/// Binary foreground mask from logits: sigmoid > 0.5 for one channel,
/// argmax != 0 for multi-class.
fn foreground_mask(logits: &Tensor4D) -> Tensor4D {
    let (n, c, h, w) = logits.shape();
    if c == 1 {
        return sigmoid(logits).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    }
    let mut out = Tensor4D::zeros(n, 1, h, w);
    let plane = h * w;
    for b in 0..n {
        for i in 0..plane {
            let mut best = 0usize;
            let mut best_v = logits.data()[b * c * plane + i];
            for ch in 1..c {
                let v = logits.data()[(b * c + ch) * plane + i];
                if v > best_v {
                    best_v = v;
                    best = ch;
                }
            }
            out.data_mut()[b * plane + i] = if best != 0 { 1.0 } else { 0.0 };
        }
    }
    out
}

fn cmd_loss(paths: &[PathBuf], kind: LossKind, metrics: bool) -> Result<u8> {
    if paths.len() < 2 {
        return Err(Error::config("need at least one prediction and a target"));
    }
    let (pred_paths, target_path) = paths.split_at(paths.len() - 1);
    let preds: Vec<Tensor4D> = pred_paths
        .iter()
        .map(load_tensor)
        .collect::<Result<_>>()?;
    let target = load_tensor(&target_path[0])?;
    let (_, _, th, tw) = target.shape();

    let value = match kind {
        LossKind::BceIou => {
            if preds.len() != 1 {
                return Err(Error::config("bce_iou takes exactly one prediction"));
            }
            bce_iou_weighted(&preds[0], &target, 31, 5.0)?
        }
        LossKind::CeDice => {
            if preds.len() != 1 {
                return Err(Error::config("ce_dice takes exactly one prediction"));
            }
            ce_dice_loss(&preds[0], &target, &LossWeights::default())?
        }
        LossKind::Additive | LossKind::Mutation => {
            if preds.len() != 4 {
                return Err(Error::config(format!(
                    "additive/mutation take exactly four predictions, got {}",
                    preds.len()
                )));
            }
            let mut it = preds.iter().cloned();
            let maps = PredictionMaps {
                p1: it.next().unwrap(),
                p2: it.next().unwrap(),
                p3: it.next().unwrap(),
                p4: it.next().unwrap(),
            };
            let multi_class = maps.p1.c() > 1;
            let base = |logits: &Tensor4D| -> Result<f64> {
                if multi_class {
                    ce_dice_loss(logits, &target, &LossWeights::default())
                } else {
                    bce_iou_weighted(logits, &target, 31, 5.0)
                }
            };
            match kind {
                LossKind::Additive => {
                    additive_loss(&maps, th, tw, &LossWeights::default(), &base)?
                }
                _ => mutation_loss(&maps, th, tw, &base, false)?,
            }
        }
    };
    println!("loss = {value}");

    if metrics {
        let last = preds.last().unwrap();
        let resized = bilinear_resize(last, th, tw);
        let mask = foreground_mask(&resized);
        let target_mask = target.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        print_metrics(&mask, &target_mask)?;
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    init_thread_pool()?;
    match cli.cmd {
        Cmd::Analyze {
            config,
            res,
            format,
            full,
            expect,
        } => cmd_analyze(
            &config,
            res.map(|v| (v[0], v[1])),
            format,
            full,
            expect.as_deref(),
        ),
        Cmd::Forward {
            config,
            features,
            seed,
            out,
            aggregate,
        } => cmd_forward(&config, features.as_deref(), seed, &out, aggregate),
        Cmd::Verify { suite } => cmd_verify(&suite),
        Cmd::Loss {
            paths,
            loss,
            metrics,
        } => cmd_loss(&paths, loss, metrics),
        Cmd::Metrics { pred, target } => {
            let p = load_tensor(&pred)?;
            let t = load_tensor(&target)?;
            print_metrics(&p, &t)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
