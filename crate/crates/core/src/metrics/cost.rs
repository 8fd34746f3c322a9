//! Static per-image cost accounting.
//!
//! Convention: one multiply-accumulate counts as one FLOP. Elementwise work
//! (BN, activations, residual adds, gating, pooling) is tallied separately
//! at one op per element and is not part of the FLOPs total. Parameters are
//! trainable values only; BN running statistics are buffers.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;
use crate::graph::{Op, Sequence};
use crate::model::{group_of, Model};
use crate::mrffi::Mrffi;
use crate::params::{HasParams, ParamKind};
use crate::ssm::mixer::MIXER_CONV_KERNEL;
use crate::ssm::MambaMixer;

/// Selective-scan MACs per token, per inner channel and state dimension:
/// `exp(Δa)`, `b̄`, `ā·h`, `+ b̄·x`, `c·h`.
pub const SCAN_MACS_PER_STATE: u64 = 5;
/// Per token and inner channel, independent of the state size: `D·x`.
pub const SCAN_MACS_PER_CHANNEL: u64 = 1;

pub fn scan_macs_per_step(d_state: usize) -> u64 {
    SCAN_MACS_PER_STATE * d_state as u64 + SCAN_MACS_PER_CHANNEL
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Stem,
    Lp,
    Ffn,
    Mamba,
    Wt,
    Mk,
    Identity,
    Downsample,
    Head,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Stem => "stem",
            Branch::Lp => "lp",
            Branch::Ffn => "ffn",
            Branch::Mamba => "mamba",
            Branch::Wt => "wt",
            Branch::Mk => "mk",
            Branch::Identity => "identity",
            Branch::Downsample => "downsample",
            Branch::Head => "head",
        }
    }

    pub fn of(name: &str) -> Branch {
        let has = |p: &str| name.contains(p);
        if has(".mrffi.mamba") {
            Branch::Mamba
        } else if has(".mrffi.wt") {
            Branch::Wt
        } else if has(".mrffi.mk") {
            Branch::Mk
        } else if has(".mrffi.identity") {
            Branch::Identity
        } else if has(".lp.") || name.ends_with(".lp") {
            Branch::Lp
        } else if has(".ffn.") || name.ends_with(".ffn") {
            Branch::Ffn
        } else if name.starts_with("patch_embed") {
            Branch::Stem
        } else if name.starts_with("downsample") {
            Branch::Downsample
        } else {
            Branch::Head
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub name: String,
    pub kind: String,
    pub stage: String,
    pub branch: Branch,
    pub macs: u64,
    pub elementwise: u64,
    pub params: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CostTotals {
    pub macs: u64,
    pub elementwise: u64,
    pub params: u64,
}

impl CostTotals {
    fn add(&mut self, r: &CostRow) {
        self.macs += r.macs;
        self.elementwise += r.elementwise;
        self.params += r.params;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub model: String,
    pub resolution: usize,
    pub scan_macs_per_step: u64,
    pub rows: Vec<CostRow>,
}

/// Published totals: (MFLOPs, M params).
pub fn reference_costs(variant: &str) -> Option<(f64, f64)> {
    Some(match variant {
        "T2" => (255.0, 8.8),
        "T4" => (413.0, 14.2),
        "S6" => (652.0, 15.0),
        "B1" => (1080.0, 17.1),
        "B2" => (2427.0, 17.1),
        "B4" => (4313.0, 17.1),
        _ => return None,
    })
}

pub const FLOPS_TOLERANCE: f64 = 0.15;
pub const PARAMS_TOLERANCE: f64 = 0.10;

impl CostReport {
    pub fn totals(&self) -> CostTotals {
        let mut t = CostTotals::default();
        self.rows.iter().for_each(|r| t.add(r));
        t
    }

    fn grouped(&self, key: impl Fn(&CostRow) -> String) -> Vec<(String, CostTotals)> {
        let mut out: Vec<(String, CostTotals)> = Vec::new();
        for r in &self.rows {
            let k = key(r);
            match out.iter_mut().find(|(g, _)| *g == k) {
                Some((_, t)) => t.add(r),
                None => {
                    let mut t = CostTotals::default();
                    t.add(r);
                    out.push((k, t));
                }
            }
        }
        out
    }

    pub fn by_stage(&self) -> Vec<(String, CostTotals)> {
        self.grouped(|r| r.stage.clone())
    }

    pub fn by_branch(&self) -> Vec<(String, CostTotals)> {
        self.grouped(|r| r.branch.name().to_string())
    }

    /// Relative deviation `(ours / published − 1)` for FLOPs and params.
    pub fn deviation(&self, reference: (f64, f64)) -> (f64, f64) {
        let t = self.totals();
        (t.macs as f64 / 1e6 / reference.0 - 1.0, t.params as f64 / 1e6 / reference.1 - 1.0)
    }

    pub fn header(&self) -> String {
        format!(
            "# model={} resolution={} convention=1 MAC = 1 FLOP; elementwise ops reported separately; \
             scan MACs per token per inner channel={}; params exclude BN running statistics",
            self.model, self.resolution, self.scan_macs_per_step
        )
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "stage", "branch", "kind", "macs", "elementwise", "params"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.name.as_str(),
                &r.stage,
                r.branch.name(),
                &r.kind,
                &r.macs.to_string(),
                &r.elementwise.to_string(),
                &r.params.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let t = self.totals();
        w.write_record(["total", "", "", "", &t.macs.to_string(), &t.elementwise.to_string(), &t.params.to_string()])
            .map_err(csv_err)?;
        let body = String::from_utf8(w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?).expect("utf8");
        Ok(format!("{}\n{body}", self.header()))
    }

    /// Aligned plain-text table: per-layer rows, then stage and branch
    /// subtotals and, for known variants, the deviation from published totals.
    pub fn to_table(&self) -> String {
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
        let mut s = self.header();
        s.push('\n');
        let line = |s: &mut String, a: &str, b: &str, c: &str, d: u64, e: u64, f: u64| {
            let _ = writeln!(s, "{a:<name_w$}  {b:<11}  {c:<10}  {d:>14}  {e:>12}  {f:>10}");
        };
        let _ = writeln!(
            s,
            "{:<name_w$}  {:<11}  {:<10}  {:>14}  {:>12}  {:>10}",
            "layer", "stage", "branch", "macs", "elementwise", "params"
        );
        for r in &self.rows {
            line(&mut s, &r.name, &r.stage, r.branch.name(), r.macs, r.elementwise, r.params);
        }
        let t = self.totals();
        line(&mut s, "TOTAL", "", "", t.macs, t.elementwise, t.params);
        s.push_str("\nby stage\n");
        for (g, t) in self.by_stage() {
            line(&mut s, &g, "", "", t.macs, t.elementwise, t.params);
        }
        s.push_str("\nby branch\n");
        for (g, t) in self.by_branch() {
            line(&mut s, &g, "", "", t.macs, t.elementwise, t.params);
        }
        let _ = writeln!(
            s,
            "\ntotal: {:.1} MFLOPs (MAC), {:.1} MFLOPs (2xMAC), {:.3} M params",
            t.macs as f64 / 1e6,
            2.0 * t.macs as f64 / 1e6,
            t.params as f64 / 1e6
        );
        if let Some(r) = reference_costs(&self.model) {
            let (df, dp) = self.deviation(r);
            let _ = writeln!(
                s,
                "published: {:.0} MFLOPs, {:.1} M params; deviation FLOPs {:+.1}%, params {:+.1}%",
                r.0,
                r.1,
                df * 100.0,
                dp * 100.0
            );
        }
        s
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}

struct Counter {
    rows: Vec<CostRow>,
}

impl Counter {
    fn row(&mut self, name: String, kind: &str, macs: u64, elementwise: u64, params: u64) {
        self.rows.push(CostRow {
            stage: group_of(&name).to_string(),
            branch: Branch::of(&name),
            kind: kind.to_string(),
            name,
            macs,
            elementwise,
            params,
        });
    }

    fn sequence(&mut self, seq: &Sequence, mut s: [usize; 4]) -> Result<[usize; 4]> {
        for node in &seq.nodes {
            let out = node.op.output_shape(s)?;
            let numel = |sh: [usize; 4]| sh.iter().product::<usize>() as u64;
            let trainable = |p: &dyn HasParams| p.param_count(ParamKind::Trainable) as u64;
            match &node.op {
                Op::Conv2d(c) => {
                    let per_out = (c.in_channels() / c.spec.groups * c.spec.kernel * c.spec.kernel) as u64;
                    let bias_ops = if c.bias.is_some() { numel(out) } else { 0 };
                    self.row(node.name.clone(), "conv2d", numel(out) * per_out, bias_ops, trainable(c));
                }
                Op::Linear(l) => {
                    let tokens = (out[0] * out[2] * out[3]) as u64;
                    let bias_ops = if l.bias.is_some() { numel(out) } else { 0 };
                    let macs = tokens * (l.in_features * l.out_features) as u64;
                    self.row(node.name.clone(), "linear", macs, bias_ops, trainable(l));
                }
                Op::BatchNorm(bn) => self.row(node.name.clone(), "batchnorm", 0, numel(out), trainable(bn)),
                Op::Act(a) => self.row(node.name.clone(), a.name(), 0, numel(out), 0),
                Op::GlobalPool => self.row(node.name.clone(), "global_avg_pool", 0, numel(s), 0),
                Op::Residual(body) => {
                    self.sequence(body, s)?;
                    self.row(format!("{}.add", node.name), "add", 0, numel(out), 0);
                }
                Op::Mrffi(m) => self.mrffi(&node.name, m, s)?,
            }
            s = out;
        }
        Ok(s)
    }

    fn mrffi(&mut self, name: &str, m: &Mrffi, s: [usize; 4]) -> Result<()> {
        let [n, _, h, w] = s;
        if let Some(mixer) = &m.mamba {
            self.mamba(&format!("{name}.mamba"), mixer, (n * h * w) as u64);
        }
        if let Some(wt) = &m.wt {
            let (hh, hw) = (h.div_ceil(2), w.div_ceil(2));
            let coeffs = (n * 4 * m.c_global * hh * hw) as u64;
            // four taps per coefficient in each direction
            self.row(format!("{name}.wt.analysis"), "haar", 4 * coeffs, 0, 0);
            self.sequence(wt, [n, 4 * m.c_global, hh, hw])?;
            self.row(format!("{name}.wt.synthesis"), "haar", 4 * coeffs, 0, 0);
            self.row(format!("{name}.wt.sum"), "add", 0, (n * m.c_global * h * w) as u64, 0);
        }
        if !m.mk.is_empty() {
            let group = m.c_local / m.mk.len();
            for split in &m.mk {
                self.sequence(split, [n, group, h, w])?;
            }
        }
        self.row(format!("{name}.identity"), "identity", 0, 0, 0);
        Ok(())
    }

    fn mamba(&mut self, name: &str, m: &MambaMixer, tokens: u64) {
        let p = |l: &dyn HasParams| l.param_count(ParamKind::Trainable) as u64;
        let (c, inner, state) = (m.channels as u64, m.d_inner as u64, m.d_state as u64);
        self.row(format!("{name}.in_proj"), "linear", tokens * c * 2 * inner, tokens * 2 * inner, p(&m.in_proj));
        self.row(
            format!("{name}.conv1d"),
            "conv1d",
            tokens * inner * MIXER_CONV_KERNEL as u64,
            tokens * inner,
            (m.conv1d_weight.len() + m.conv1d_bias.len()) as u64,
        );
        // SiLU on the main and gate halves
        self.row(format!("{name}.silu"), "silu", 0, 2 * tokens * inner, 0);
        for (dir, ssm) in [("fwd", &m.forward_ssm), ("bwd", &m.backward_ssm)] {
            let prefix = format!("{name}.{dir}");
            let dt_bias = if ssm.dt_proj.bias.is_some() { tokens * inner } else { 0 };
            self.row(format!("{prefix}.dt_proj"), "linear", tokens * inner * inner, dt_bias, p(&ssm.dt_proj));
            self.row(format!("{prefix}.b_proj"), "linear", tokens * inner * state, 0, p(&ssm.b_proj));
            self.row(format!("{prefix}.c_proj"), "linear", tokens * inner * state, 0, p(&ssm.c_proj));
            self.row(
                format!("{prefix}.scan"),
                "selective_scan",
                tokens * inner * scan_macs_per_step(m.d_state),
                // softplus on Δ
                tokens * inner,
                (ssm.a_log.len() + ssm.d_skip.len()) as u64,
            );
        }
        // direction sum and gating
        self.row(format!("{name}.gate"), "mul", 0, 2 * tokens * inner, 0);
        self.row(format!("{name}.out_proj"), "linear", tokens * inner * c, tokens * c, p(&m.out_proj));
    }
}

/// Per-image costs of `graph` on a `resolution × resolution` RGB input.
pub fn count_costs(graph: &Sequence, model_name: &str, resolution: usize) -> Result<CostReport> {
    let d_state = first_state_size(graph).unwrap_or(1);
    let mut counter = Counter { rows: Vec::new() };
    counter.sequence(graph, [1, 3, resolution, resolution])?;
    Ok(CostReport {
        model: model_name.to_string(),
        resolution,
        scan_macs_per_step: scan_macs_per_step(d_state),
        rows: counter.rows,
    })
}

pub fn model_costs(model: &Model) -> Result<CostReport> {
    count_costs(&model.graph, &model.config.name, model.config.resolution)
}

fn first_state_size(g: &Sequence) -> Option<usize> {
    let mut found = None;
    g.visit_nodes(&mut |n| {
        if let (None, Op::Mrffi(m)) = (found, &n.op) {
            found = m.mamba.as_ref().map(|x| x.d_state);
        }
    });
    found
}
