//! The four-stage cascaded decoder: block assembly, forward pass over
//! encoder pyramid features, and prediction-map aggregation.

use serde::{Deserialize, Serialize};

use crate::blocks::{
    conv_init, eucb_forward, lgag_forward, mscam_forward, seg_head_forward, CABParams,
    EUCBParams, LGAGParams, MSCBParams, MsdcArrangement, SABParams,
};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::{add, bilinear_resize, sigmoid, ConvParams, NormParams, Tensor4D, UpsampleMode};

/// Channel widths, kernel-scale set, and block toggles. Fully determines
/// the architecture and its cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    /// Stage widths [c1, c2, c3, c4], shallowest (1/4 scale) first.
    pub channels: [usize; 4],
    pub kernel_set: Vec<usize>,
    pub msdc_arrangement: MsdcArrangement,
    pub expansion_factor: usize,
    /// Grouped-conv group count for both LGAG projections; 0 = auto
    /// (equal to the intermediate width).
    pub lgag_group_count: usize,
    /// LGAG intermediate width; 0 = auto (half the gate width).
    pub lgag_intermediate: usize,
    pub num_classes: usize,
    pub use_lgag: bool,
    pub use_mscam: bool,
    pub cascaded: bool,
    pub upsample_mode: UpsampleMode,
    pub cab_reduction_ratio: f64,
    pub sab_kernel: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl DecoderConfig {
    /// Standard widths (PVTv2-b2 stage channels), 9 classes.
    pub fn standard() -> Self {
        DecoderConfig {
            channels: [64, 128, 320, 512],
            kernel_set: vec![1, 3, 5],
            msdc_arrangement: MsdcArrangement::Parallel,
            expansion_factor: 2,
            lgag_group_count: 0,
            lgag_intermediate: 0,
            num_classes: 9,
            use_lgag: true,
            use_mscam: true,
            cascaded: true,
            upsample_mode: UpsampleMode::Nearest,
            cab_reduction_ratio: 1.0 / 16.0,
            sab_kernel: 7,
        }
    }

    /// Tiny widths (PVTv2-b0 stage channels).
    pub fn tiny() -> Self {
        DecoderConfig {
            channels: [32, 64, 160, 256],
            ..Self::standard()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::config("channel widths must be positive"));
        }
        if !self.channels.windows(2).all(|p| p[0] < p[1]) {
            return Err(Error::config(
                "channels must be strictly increasing with depth",
            ));
        }
        if self.kernel_set.is_empty() || self.kernel_set.iter().any(|&k| k == 0 || k % 2 == 0) {
            return Err(Error::config("kernel set entries must be odd and positive"));
        }
        if self.expansion_factor == 0 {
            return Err(Error::config("expansion_factor must be >= 1"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be >= 1"));
        }
        if self.sab_kernel % 2 == 0 {
            return Err(Error::config("sab_kernel must be odd"));
        }
        for &c in &self.channels[..3] {
            let f_int = self.lgag_intermediate_for(c);
            let g = self.lgag_groups_for(c);
            if f_int == 0 || g == 0 || c % g != 0 || f_int % g != 0 {
                return Err(Error::config(format!(
                    "lgag groups {g} must divide gate width {c} and intermediate width {f_int}"
                )));
            }
        }
        Ok(())
    }

    /// Calibrated default intermediate width: half the gate width.
    pub fn lgag_intermediate_for(&self, gate_channels: usize) -> usize {
        if self.lgag_intermediate > 0 {
            self.lgag_intermediate
        } else {
            (gate_channels / 2).max(1)
        }
    }

    /// Calibrated default group count: equal to the intermediate width
    /// (one kernel column per input channel pair).
    pub fn lgag_groups_for(&self, gate_channels: usize) -> usize {
        if self.lgag_group_count > 0 {
            self.lgag_group_count
        } else {
            self.lgag_intermediate_for(gate_channels)
        }
    }
}

/// One MSCAM: channel attention, spatial attention, multi-scale conv block.
#[derive(Debug, Clone)]
pub struct MscamParams {
    pub cab: CABParams,
    pub sab: SABParams,
    pub mscb: MSCBParams,
}

/// One decoder stage. Stage 0 is the deepest (1/32 scale); stages 1..3
/// additionally carry the up-convolution and the gate feeding the fusion.
#[derive(Debug, Clone)]
pub struct Stage {
    pub eucb: Option<EUCBParams>,
    pub gate: Option<LGAGParams>,
    pub mscam: Option<MscamParams>,
    pub head: ConvParams,
}

/// Immutable decoder graph; all forward passes are pure.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub config: DecoderConfig,
    /// Deepest-first: stages[0] works on c4 at 1/32 scale.
    pub stages: Vec<Stage>,
}

/// Encoder pyramid features; x1 at 1/4 scale through x4 at 1/32 scale.
#[derive(Debug, Clone)]
pub struct PyramidFeatures {
    pub x1: Tensor4D,
    pub x2: Tensor4D,
    pub x3: Tensor4D,
    pub x4: Tensor4D,
}

impl PyramidFeatures {
    /// Deepest-first view matching the stage order.
    pub fn deepest_first(&self) -> [&Tensor4D; 4] {
        [&self.x4, &self.x3, &self.x2, &self.x1]
    }
}

/// The four per-stage logit maps; p1 at 1/32 scale (deepest) through p4
/// at 1/4 scale.
#[derive(Debug, Clone)]
pub struct PredictionMaps {
    pub p1: Tensor4D,
    pub p2: Tensor4D,
    pub p3: Tensor4D,
    pub p4: Tensor4D,
}

impl PredictionMaps {
    pub fn as_array(&self) -> [&Tensor4D; 4] {
        [&self.p1, &self.p2, &self.p3, &self.p4]
    }
}

/// Instantiates the decoder with deterministic uniform [-0.05, 0.05]
/// initialization; BN starts as identity (gamma=1, beta=0, mean=0, var=1).
pub fn build_decoder(cfg: &DecoderConfig, seed: u64) -> Result<Decoder> {
    cfg.validate()?;
    let mut rng = CounterRng::new(seed);
    // widths deepest-first: c4, c3, c2, c1
    let widths: Vec<usize> = cfg.channels.iter().rev().copied().collect();
    let mut stages = Vec::with_capacity(4);
    for (i, &c) in widths.iter().enumerate() {
        let eucb = if cfg.cascaded && i > 0 {
            Some(EUCBParams::init(widths[i - 1], c, cfg.upsample_mode, &mut rng)?)
        } else {
            None
        };
        let gate = if cfg.cascaded && cfg.use_lgag && i > 0 {
            Some(LGAGParams::init_lgag(
                c,
                c,
                cfg.lgag_intermediate_for(c),
                cfg.lgag_groups_for(c),
                &mut rng,
            )?)
        } else {
            None
        };
        let mscam = if cfg.use_mscam {
            Some(MscamParams {
                cab: CABParams::init(c, cfg.cab_reduction_ratio, &mut rng)?,
                sab: SABParams::init(cfg.sab_kernel, &mut rng)?,
                mscb: MSCBParams::init(
                    c,
                    c,
                    cfg.expansion_factor,
                    &cfg.kernel_set,
                    cfg.msdc_arrangement,
                    &mut rng,
                )?,
            })
        } else {
            None
        };
        let head = conv_init(c, cfg.num_classes, 1, 1, true, &mut rng)?;
        stages.push(Stage {
            eucb,
            gate,
            mscam,
            head,
        });
    }
    Ok(Decoder {
        config: cfg.clone(),
        stages,
    })
}

fn refine(stage: &Stage, x: &Tensor4D) -> Result<Tensor4D> {
    match &stage.mscam {
        Some(m) => mscam_forward(&m.cab, &m.sab, &m.mscb, x),
        None => Ok(x.clone()),
    }
}

/// Runs the cascaded forward pass, producing the four prediction maps.
pub fn decoder_forward(dec: &Decoder, f: &PyramidFeatures) -> Result<PredictionMaps> {
    let feats = f.deepest_first();
    let widths: Vec<usize> = dec.config.channels.iter().rev().copied().collect();
    for (i, x) in feats.iter().enumerate() {
        if x.c() != widths[i] {
            return Err(Error::shape(format!(
                "stage {i}: feature has {} channels, config expects {}",
                x.c(),
                widths[i]
            )));
        }
    }

    let mut maps = Vec::with_capacity(4);
    if dec.config.cascaded {
        let mut d = refine(&dec.stages[0], feats[0])?;
        maps.push(seg_head_forward(&dec.stages[0].head, &d)?);
        for i in 1..4 {
            let stage = &dec.stages[i];
            let u = eucb_forward(stage.eucb.as_ref().expect("cascaded stage has eucb"), &d)?;
            let skip = feats[i];
            if u.shape() != skip.shape() {
                return Err(Error::shape(format!(
                    "stage {i}: upsampled feature {:?} does not match skip {:?}",
                    u.shape(),
                    skip.shape()
                )));
            }
            let s = match &stage.gate {
                Some(g) => lgag_forward(g, skip, &u)?,
                None => skip.clone(),
            };
            d = refine(stage, &add(&u, &s)?)?;
            maps.push(seg_head_forward(&stage.head, &d)?);
        }
    } else {
        // non-cascaded ablation: each stage refines its own feature
        for i in 0..4 {
            let d = refine(&dec.stages[i], feats[i])?;
            maps.push(seg_head_forward(&dec.stages[i].head, &d)?);
        }
    }
    let mut it = maps.into_iter();
    Ok(PredictionMaps {
        p1: it.next().unwrap(),
        p2: it.next().unwrap(),
        p3: it.next().unwrap(),
        p4: it.next().unwrap(),
    })
}

/// Per-pixel softmax across channels.
pub fn softmax_channels(x: &Tensor4D) -> Tensor4D {
    let (n, c, h, w) = x.shape();
    let mut out = x.clone();
    let plane = h * w;
    for b in 0..n {
        for i in 0..plane {
            let mut m = f32::NEG_INFINITY;
            for ch in 0..c {
                m = m.max(x.data()[(b * c + ch) * plane + i]);
            }
            let mut sum = 0.0;
            for ch in 0..c {
                let e = (x.data()[(b * c + ch) * plane + i] - m).exp();
                out.data_mut()[(b * c + ch) * plane + i] = e;
                sum += e;
            }
            for ch in 0..c {
                out.data_mut()[(b * c + ch) * plane + i] /= sum;
            }
        }
    }
    out
}

fn activate(logits: &Tensor4D, num_classes: usize) -> Tensor4D {
    if num_classes == 1 {
        sigmoid(logits)
    } else {
        softmax_channels(logits)
    }
}

/// Bilinearly upsamples all four maps to the target size, sums them, and
/// applies sigmoid (binary) or per-pixel softmax (multi-class).
pub fn aggregate_predictions(
    maps: &PredictionMaps,
    target_h: usize,
    target_w: usize,
    num_classes: usize,
) -> Result<Tensor4D> {
    let mut sum: Option<Tensor4D> = None;
    for p in maps.as_array() {
        if p.h() > target_h || p.w() > target_w {
            return Err(Error::shape("target dims must be >= each map's dims"));
        }
        let up = bilinear_resize(p, target_h, target_w);
        sum = Some(match sum {
            None => up,
            Some(s) => add(&s, &up)?,
        });
    }
    Ok(activate(&sum.unwrap(), num_classes))
}

/// The final segmentation output: p4 upsampled 4x to input resolution,
/// then activated.
pub fn final_map(maps: &PredictionMaps) -> Tensor4D {
    let up = bilinear_resize(&maps.p4, 4 * maps.p4.h(), 4 * maps.p4.w());
    activate(&up, maps.p4.c())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureDistribution {
    Uniform,
    Zeros,
    Ramp,
}

/// Deterministic encoder stand-in: a pyramid at scales 1/4 .. 1/32 with
/// the configured widths.
pub fn synth_features(
    cfg: &DecoderConfig,
    batch: usize,
    input_h: usize,
    input_w: usize,
    seed: u64,
    distribution: FeatureDistribution,
) -> Result<PyramidFeatures> {
    if input_h % 32 != 0 || input_w % 32 != 0 {
        return Err(Error::config(format!(
            "input dims must be divisible by 32, got {input_h}x{input_w}"
        )));
    }
    if batch == 0 {
        return Err(Error::config("batch must be >= 1"));
    }
    let mut levels = Vec::with_capacity(4);
    for (i, &c) in cfg.channels.iter().enumerate() {
        let scale = 4 << i; // 4, 8, 16, 32
        let (h, w) = (input_h / scale, input_w / scale);
        let len = batch * c * h * w;
        let data = match distribution {
            FeatureDistribution::Zeros => vec![0.0; len],
            FeatureDistribution::Ramp => (0..len).map(|j| j as f32 / len as f32).collect(),
            FeatureDistribution::Uniform => {
                let mut rng = CounterRng::stream(seed, i as u64 + 1);
                let mut v = vec![0.0; len];
                rng.fill_uniform(&mut v, 0.0, 1.0);
                v
            }
        };
        levels.push(Tensor4D::new(batch, c, h, w, data)?);
    }
    let mut it = levels.into_iter();
    Ok(PyramidFeatures {
        x1: it.next().unwrap(),
        x2: it.next().unwrap(),
        x3: it.next().unwrap(),
        x4: it.next().unwrap(),
    })
}

/// One learnable parameter vector with its canonical name and shape.
pub struct ParamEntry<'a> {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: &'a [f32],
}

fn conv_entries<'a>(name: &str, p: &'a ConvParams, out: &mut Vec<ParamEntry<'a>>) {
    out.push(ParamEntry {
        name: format!("{name}.weight"),
        dims: vec![
            p.out_channels as u32,
            (p.in_channels / p.groups) as u32,
            p.kernel_h as u32,
            p.kernel_w as u32,
        ],
        values: &p.weights,
    });
    if let Some(b) = &p.bias {
        out.push(ParamEntry {
            name: format!("{name}.bias"),
            dims: vec![p.out_channels as u32],
            values: b,
        });
    }
}

fn norm_entries<'a>(name: &str, p: &'a NormParams, out: &mut Vec<ParamEntry<'a>>) {
    // learnable only; running stats stay at their identity defaults
    out.push(ParamEntry {
        name: format!("{name}.gamma"),
        dims: vec![p.channels() as u32],
        values: &p.gamma,
    });
    out.push(ParamEntry {
        name: format!("{name}.beta"),
        dims: vec![p.channels() as u32],
        values: &p.beta,
    });
}

impl Decoder {
    /// Flat list of learnable parameters in canonical build order.
    pub fn param_entries(&self) -> Vec<ParamEntry<'_>> {
        let mut out = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            let sname = format!("stage{i}");
            if let Some(e) = &stage.eucb {
                conv_entries(&format!("{sname}.eucb.dwc"), &e.dwc, &mut out);
                norm_entries(&format!("{sname}.eucb.bn"), &e.bn, &mut out);
                conv_entries(&format!("{sname}.eucb.proj"), &e.proj, &mut out);
            }
            if let Some(g) = &stage.gate {
                conv_entries(&format!("{sname}.lgag.gc_g"), &g.gc_g, &mut out);
                norm_entries(&format!("{sname}.lgag.bn_g"), &g.bn_g, &mut out);
                conv_entries(&format!("{sname}.lgag.gc_x"), &g.gc_x, &mut out);
                norm_entries(&format!("{sname}.lgag.bn_x"), &g.bn_x, &mut out);
                conv_entries(&format!("{sname}.lgag.psi"), &g.psi, &mut out);
                norm_entries(&format!("{sname}.lgag.bn_psi"), &g.bn_psi, &mut out);
            }
            if let Some(m) = &stage.mscam {
                conv_entries(&format!("{sname}.mscam.cab.reduce"), &m.cab.reduce, &mut out);
                conv_entries(&format!("{sname}.mscam.cab.expand"), &m.cab.expand, &mut out);
                conv_entries(&format!("{sname}.mscam.sab.lkc"), &m.sab.lkc, &mut out);
                conv_entries(&format!("{sname}.mscam.mscb.pwc1"), &m.mscb.pwc1, &mut out);
                norm_entries(&format!("{sname}.mscam.mscb.bn1"), &m.mscb.bn1, &mut out);
                for (k, (c, bn)) in m.mscb.dwcbs.iter().enumerate() {
                    conv_entries(&format!("{sname}.mscam.mscb.dwcb{k}.dwc"), c, &mut out);
                    norm_entries(&format!("{sname}.mscam.mscb.dwcb{k}.bn"), bn, &mut out);
                }
                conv_entries(&format!("{sname}.mscam.mscb.pwc2"), &m.mscb.pwc2, &mut out);
                norm_entries(&format!("{sname}.mscam.mscb.bn2"), &m.mscb.bn2, &mut out);
            }
            conv_entries(&format!("{sname}.head"), &stage.head, &mut out);
        }
        out
    }

    /// Overwrites parameters from (name, values) pairs in canonical order.
    pub fn load_params(&mut self, entries: &[(String, Vec<f32>)]) -> Result<()> {
        let expected: Vec<(String, usize)> = self
            .param_entries()
            .iter()
            .map(|e| (e.name.clone(), e.values.len()))
            .collect();
        if expected.len() != entries.len() {
            return Err(Error::format(format!(
                "weight bundle has {} entries, decoder expects {}",
                entries.len(),
                expected.len()
            )));
        }
        for ((name, values), (want_name, want_len)) in entries.iter().zip(&expected) {
            if name != want_name || values.len() != *want_len {
                return Err(Error::format(format!(
                    "weight bundle entry '{name}' ({} values) does not match expected '{want_name}' ({want_len} values)",
                    values.len()
                )));
            }
        }
        let mut it = entries.iter();
        let mut next = |target: &mut [f32]| {
            let (_, values) = it.next().expect("entry count checked above");
            target.copy_from_slice(values);
        };
        for stage in &mut self.stages {
            let conv = |p: &mut ConvParams, next: &mut dyn FnMut(&mut [f32])| {
                next(&mut p.weights);
                if let Some(b) = &mut p.bias {
                    next(b);
                }
            };
            let norm = |p: &mut NormParams, next: &mut dyn FnMut(&mut [f32])| {
                next(&mut p.gamma);
                next(&mut p.beta);
            };
            if let Some(e) = &mut stage.eucb {
                conv(&mut e.dwc, &mut next);
                norm(&mut e.bn, &mut next);
                conv(&mut e.proj, &mut next);
            }
            if let Some(g) = &mut stage.gate {
                conv(&mut g.gc_g, &mut next);
                norm(&mut g.bn_g, &mut next);
                conv(&mut g.gc_x, &mut next);
                norm(&mut g.bn_x, &mut next);
                conv(&mut g.psi, &mut next);
                norm(&mut g.bn_psi, &mut next);
            }
            if let Some(m) = &mut stage.mscam {
                conv(&mut m.cab.reduce, &mut next);
                conv(&mut m.cab.expand, &mut next);
                conv(&mut m.sab.lkc, &mut next);
                conv(&mut m.mscb.pwc1, &mut next);
                norm(&mut m.mscb.bn1, &mut next);
                for (c, bn) in &mut m.mscb.dwcbs {
                    conv(c, &mut next);
                    norm(bn, &mut next);
                }
                conv(&mut m.mscb.pwc2, &mut next);
                norm(&mut m.mscb.bn2, &mut next);
            }
            conv(&mut stage.head, &mut next);
        }
        Ok(())
    }
}
