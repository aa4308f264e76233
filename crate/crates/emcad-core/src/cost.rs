//! Static parameter and FLOP accounting over the decoder graph.
//!
//! FLOP convention: 1 MAC = 1 FLOP, convolutions only in the default
//! mode. Full mode additionally counts elementwise work (batch norm,
//! activations, additions, attention multiplies, pooling reads, conv
//! bias adds) at 1 FLOP per element. Counts are per batch element.

use crate::blocks::{LGAGParams, MsdcArrangement};
use crate::decoder::{build_decoder, Decoder, DecoderConfig, MscamParams, Stage};
use crate::error::Result;
use crate::rng::CounterRng;
use crate::tensor::ConvParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopMode {
    /// Convolution MACs only; everything else counts as zero.
    ConvOnly,
    /// Additionally counts elementwise ops at 1 FLOP per element.
    Full,
}

/// Hierarchical parameter/FLOP tally. Parent totals equal the sum of
/// their children.
#[derive(Debug, Clone)]
pub struct CostNode {
    pub name: String,
    pub params: u64,
    pub flops: u64,
    pub children: Vec<CostNode>,
}

impl CostNode {
    fn leaf(name: impl Into<String>, params: u64, flops: u64) -> Self {
        CostNode {
            name: name.into(),
            params,
            flops,
            children: Vec::new(),
        }
    }

    fn parent(name: impl Into<String>, children: Vec<CostNode>) -> Self {
        let params = children.iter().map(|c| c.params).sum();
        let flops = children.iter().map(|c| c.flops).sum();
        CostNode {
            name: name.into(),
            params,
            flops,
            children,
        }
    }

    /// Pre-order traversal as (path, params, flops) rows.
    pub fn rows(&self) -> Vec<(String, u64, u64)> {
        let mut out = Vec::new();
        self.collect_rows("", &mut out);
        out
    }

    fn collect_rows(&self, prefix: &str, out: &mut Vec<(String, u64, u64)>) {
        let path = if prefix.is_empty() {
            self.name.clone()
        } else {
            format!("{prefix}/{}", self.name)
        };
        out.push((path.clone(), self.params, self.flops));
        for c in &self.children {
            c.collect_rows(&path, out);
        }
    }
}

/// A full report: the tally tree plus the resolution the FLOPs refer to.
#[derive(Debug, Clone)]
pub struct CostReport {
    /// Input resolution the FLOP counts were computed at, if any.
    pub resolution: Option<(usize, usize)>,
    pub root: CostNode,
}

fn conv_node(name: &str, p: &ConvParams, out_hw: Option<(usize, usize)>, mode: FlopMode) -> CostNode {
    let params = p.param_count() as u64;
    let flops = match out_hw {
        None => 0,
        Some((h, w)) => {
            let out_elems = (h * w * p.out_channels) as u64;
            let macs = out_elems * (p.in_channels / p.groups) as u64 * (p.kernel_h * p.kernel_w) as u64;
            let bias = if mode == FlopMode::Full && p.bias.is_some() {
                out_elems
            } else {
                0
            };
            macs + bias
        }
    };
    CostNode::leaf(name, params, flops)
}

fn bn_node(name: &str, channels: usize, hw: Option<usize>, mode: FlopMode) -> CostNode {
    let flops = match (mode, hw) {
        (FlopMode::Full, Some(hw)) => (channels * hw) as u64,
        _ => 0,
    };
    CostNode::leaf(name, 2 * channels as u64, flops)
}

fn elementwise(name: &str, count: u64, mode: FlopMode, counted: bool) -> CostNode {
    let flops = if mode == FlopMode::Full && counted {
        count
    } else {
        0
    };
    CostNode::leaf(name, 0, flops)
}

fn gate_node(
    name: &str,
    g: &LGAGParams,
    gate_channels: usize,
    hw: Option<(usize, usize)>,
    mode: FlopMode,
) -> CostNode {
    let area = hw.map(|(h, w)| h * w);
    let f_int = g.gc_g.out_channels;
    let ew = |per_pixel: usize| area.map_or(0, |a| (a * per_pixel) as u64);
    CostNode::parent(
        name,
        vec![
            conv_node("gc_g", &g.gc_g, hw, mode),
            bn_node("bn_g", f_int, area, mode),
            conv_node("gc_x", &g.gc_x, hw, mode),
            bn_node("bn_x", f_int, area, mode),
            conv_node("psi", &g.psi, hw, mode),
            bn_node("bn_psi", 1, area, mode),
            elementwise("add", ew(f_int), mode, true),
            elementwise("relu", ew(f_int), mode, true),
            elementwise("sigmoid", ew(1), mode, true),
            elementwise("mul", ew(gate_channels), mode, true),
        ],
    )
}

fn mscam_node(
    name: &str,
    m: &MscamParams,
    channels: usize,
    hw: Option<(usize, usize)>,
    mode: FlopMode,
) -> CostNode {
    let area = hw.map(|(h, w)| h * w);
    let ew = |per_pixel: usize| area.map_or(0, |a| (a * per_pixel) as u64);
    let reduced = m.cab.reduce.out_channels;
    let cab = CostNode::parent(
        "cab",
        vec![
            // pooled maps are 1x1, so conv cost is per branch; one shared
            // weight set applied to both pooled maps
            elementwise("pool", 2 * ew(channels), mode, true),
            conv_node("reduce", &m.cab.reduce, hw.map(|_| (1, 1)), mode),
            conv_node("expand", &m.cab.expand, hw.map(|_| (1, 1)), mode),
            CostNode::leaf(
                "reduce_avg",
                0,
                conv_node("", &m.cab.reduce, hw.map(|_| (1, 1)), mode).flops,
            ),
            CostNode::leaf(
                "expand_avg",
                0,
                conv_node("", &m.cab.expand, hw.map(|_| (1, 1)), mode).flops,
            ),
            elementwise(
                "relu",
                if area.is_some() { 2 * reduced as u64 } else { 0 },
                mode,
                true,
            ),
            elementwise(
                "add_sigmoid",
                if area.is_some() { 2 * channels as u64 } else { 0 },
                mode,
                true,
            ),
            elementwise("mul", ew(channels), mode, true),
        ],
    );
    let sab = CostNode::parent(
        "sab",
        vec![
            elementwise("pool", 2 * ew(channels), mode, true),
            conv_node("lkc", &m.sab.lkc, hw, mode),
            elementwise("sigmoid", ew(1), mode, true),
            elementwise("mul", ew(channels), mode, true),
        ],
    );
    let expanded = m.mscb.pwc1.out_channels;
    let n_k = m.mscb.dwcbs.len();
    let mut mscb_children = vec![
        conv_node("pwc1", &m.mscb.pwc1, hw, mode),
        bn_node("bn1", expanded, area, mode),
        elementwise("relu6", ew(expanded), mode, true),
    ];
    for (k, (c, _bn)) in m.mscb.dwcbs.iter().enumerate() {
        mscb_children.push(CostNode::parent(
            format!("dwcb{k}"),
            vec![
                conv_node("dwc", c, hw, mode),
                bn_node("bn", expanded, area, mode),
                elementwise("relu6", ew(expanded), mode, true),
            ],
        ));
    }
    let adds = match m.mscb.arrangement {
        MsdcArrangement::Parallel => n_k.saturating_sub(1),
        MsdcArrangement::Sequential => n_k,
    };
    mscb_children.push(elementwise("msdc_add", ew(expanded) * adds as u64, mode, true));
    mscb_children.push(conv_node("pwc2", &m.mscb.pwc2, hw, mode));
    mscb_children.push(bn_node(
        "bn2",
        m.mscb.pwc2.out_channels,
        area,
        mode,
    ));
    let mscb = CostNode::parent("mscb", mscb_children);
    CostNode::parent(name, vec![cab, sab, mscb])
}

fn stage_node(
    stage: &Stage,
    index: usize,
    channels: usize,
    hw: Option<(usize, usize)>,
    mode: FlopMode,
) -> CostNode {
    let area = hw.map(|(h, w)| h * w);
    let mut children = Vec::new();
    if let Some(e) = &stage.eucb {
        // the up-conv runs at this stage's (already doubled) resolution
        children.push(CostNode::parent(
            "eucb",
            vec![
                conv_node("dwc", &e.dwc, hw, mode),
                bn_node("bn", e.dwc.out_channels, area, mode),
                elementwise(
                    "relu",
                    area.map_or(0, |a| (a * e.dwc.out_channels) as u64),
                    mode,
                    true,
                ),
                conv_node("proj", &e.proj, hw, mode),
            ],
        ));
    }
    if let Some(g) = &stage.gate {
        children.push(gate_node("lgag", g, channels, hw, mode));
        children.push(elementwise(
            "fusion_add",
            area.map_or(0, |a| (a * channels) as u64),
            mode,
            true,
        ));
    } else if stage.eucb.is_some() {
        children.push(elementwise(
            "fusion_add",
            area.map_or(0, |a| (a * channels) as u64),
            mode,
            true,
        ));
    }
    if let Some(m) = &stage.mscam {
        children.push(mscam_node("mscam", m, channels, hw, mode));
    }
    children.push(conv_node("head", &stage.head, hw, mode));
    CostNode::parent(format!("stage{index}"), children)
}

fn analyze(dec: &Decoder, resolution: Option<(usize, usize)>, mode: FlopMode) -> CostReport {
    let widths: Vec<usize> = dec.config.channels.iter().rev().copied().collect();
    let mut stages = Vec::with_capacity(4);
    for (i, stage) in dec.stages.iter().enumerate() {
        let hw = resolution.map(|(h, w)| {
            let scale = 32 >> i; // 32, 16, 8, 4 deepest-first
            (h / scale, w / scale)
        });
        stages.push(stage_node(stage, i, widths[i], hw, mode));
    }
    CostReport {
        resolution,
        root: CostNode::parent("decoder", stages),
    }
}

/// Parameter tally per named block. Conv params are
/// `out*(in/groups)*kh*kw (+out with bias)`; BN contributes its 2C
/// learnable scalars; pooling, shuffle, and activations are free.
pub fn count_params(dec: &Decoder) -> CostReport {
    analyze(dec, None, FlopMode::ConvOnly)
}

/// FLOP tally at the given input resolution (per batch element).
pub fn count_flops(dec: &Decoder, input_h: usize, input_w: usize, mode: FlopMode) -> CostReport {
    analyze(dec, Some((input_h, input_w)), mode)
}

/// Total params and FLOPs of the three decoder gates, LGAG vs the AG
/// baseline. FLOPs use the full convention (elementwise included), which
/// is the one the reference gate figures are quoted in.
pub fn compare_gate_costs(
    cfg: &DecoderConfig,
    input_h: usize,
    input_w: usize,
) -> Result<(CostReport, CostReport)> {
    cfg.validate()?;
    let mut rng = CounterRng::new(0);
    let mut lgag_nodes = Vec::new();
    let mut ag_nodes = Vec::new();
    // gates sit at stages 1..3 (widths c3, c2, c1), at 1/16, 1/8, 1/4 scale
    let widths = [cfg.channels[2], cfg.channels[1], cfg.channels[0]];
    let scales = [16usize, 8, 4];
    for (i, (&c, &s)) in widths.iter().zip(&scales).enumerate() {
        let hw = Some((input_h / s, input_w / s));
        let f_int = cfg.lgag_intermediate_for(c);
        let lgag = LGAGParams::init_lgag(c, c, f_int, cfg.lgag_groups_for(c), &mut rng)?;
        let ag = LGAGParams::init_ag(c, c, f_int, &mut rng)?;
        lgag_nodes.push(gate_node(&format!("lgag{}", i + 1), &lgag, c, hw, FlopMode::Full));
        ag_nodes.push(gate_node(&format!("ag{}", i + 1), &ag, c, hw, FlopMode::Full));
    }
    Ok((
        CostReport {
            resolution: Some((input_h, input_w)),
            root: CostNode::parent("lgag_gates", lgag_nodes),
        },
        CostReport {
            resolution: Some((input_h, input_w)),
            root: CostNode::parent("ag_gates", ag_nodes),
        },
    ))
}

/// Convenience: build a decoder from config and tally it in one step.
pub fn analyze_config(
    cfg: &DecoderConfig,
    resolution: Option<(usize, usize)>,
    mode: FlopMode,
) -> Result<CostReport> {
    let dec = build_decoder(cfg, 0)?;
    Ok(analyze(&dec, resolution, mode))
}

fn human(v: u64) -> String {
    if v >= 1_000_000_000 {
        format!("{:.3}G", v as f64 / 1e9)
    } else if v >= 1_000_000 {
        format!("{:.3}M", v as f64 / 1e6)
    } else if v >= 1_000 {
        format!("{:.2}K", v as f64 / 1e3)
    } else {
        v.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
}

/// Deterministic report rendering; pre-order rows, stable columns.
pub fn render_table(report: &CostReport, format: TableFormat) -> String {
    let rows = report.root.rows();
    match format {
        TableFormat::Csv => {
            let mut out = String::from("block,params,flops\n");
            for (name, params, flops) in rows {
                out.push_str(&format!("{name},{params},{flops}\n"));
            }
            out
        }
        TableFormat::Text => {
            let mut out = String::new();
            if let Some((h, w)) = report.resolution {
                out.push_str(&format!("# FLOPs at input resolution {h}x{w}\n"));
            }
            let width = rows.iter().map(|(n, _, _)| n.len()).max().unwrap_or(0);
            out.push_str(&format!(
                "{:<width$}  {:>12}  {:>14}\n",
                "block", "params", "flops"
            ));
            for (name, params, flops) in rows {
                out.push_str(&format!(
                    "{name:<width$}  {:>12}  {:>14}\n",
                    format!("{params} ({})", human(params)),
                    format!("{flops} ({})", human(flops)),
                ));
            }
            out
        }
    }
}
