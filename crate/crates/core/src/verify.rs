//! Self-check suite run by `mobilemamba verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::fusion::{fuse_graph, FUSION_TOLERANCE};
use crate::init::InitOptions;
use crate::metrics::cost::{model_costs, reference_costs, FLOPS_TOLERANCE, PARAMS_TOLERANCE};
use crate::model::{Model, ModelConfig, PRESET_NAMES};
use crate::mrffi::{partition, MrffiConfig};
use crate::ops::shape::{concat_channels, split_channels};
use crate::ssm::lti::{causal_conv, kernel_from_discrete};
use crate::ssm::reference::naive_selective_scan;
use crate::ssm::{scan_recurrent, selective_scan, zoh, ScanDirection, ScanOptions, ScanStep, SelectiveSsmParams};
use crate::tensor::{Matrix, Tensor};
use crate::wavelet::{filter_dot, iwt2d_cropped, wt2d, HaarFilterBank};

/// Deliberate defects for checking that the suite can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales `ā` by `1 + 1e-2` in the recurrent scan only.
    PerturbAbar,
}

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    pub fault: Option<Fault>,
    /// Checks fusion on every preset instead of the smallest one.
    pub full: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s += &format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        s += &format!("{}\n", if self.passed { "all checks passed" } else { "verification FAILED" });
        s
    }
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn wavelet_reconstruction(rng: &mut ChaCha8Rng) -> CheckResult {
    let bank = HaarFilterBank::haar();
    let mut worst = 0.0f32;
    let mut worst_energy = 0.0f64;
    for i in 0..100 {
        let (h, w) = match i % 4 {
            0 => (3, 3),
            1 => (7, 7),
            _ => (rng.gen_range(1..12), rng.gen_range(1..12)),
        };
        let c = rng.gen_range(1..4);
        let x = random_tensor(rng, [1, c, h, w]);
        let y = wt2d(&x, &bank);
        let back = iwt2d_cropped(&y, &bank, h, w).expect("valid shape");
        worst = worst.max(back.max_abs_diff(&x));
        let e = x.l2_norm();
        worst_energy = worst_energy.max((y.l2_norm() - e).abs() / e.max(1e-12));
    }
    check(
        "wavelet_reconstruction",
        worst <= 1e-5 && worst_energy <= 1e-4,
        format!("max abs err {worst:e}, max energy rel err {worst_energy:e}"),
    )
}

pub fn filter_orthonormality() -> CheckResult {
    let f = HaarFilterBank::haar().filters();
    let mut ok = true;
    for i in 0..4 {
        for j in 0..4 {
            ok &= filter_dot(&f[i], &f[j]) == if i == j { 1.0 } else { 0.0 };
        }
    }
    check("filter_orthonormality", ok, "pairwise dot products of LL/LH/HL/HH".into())
}

/// Largest `max|conv − rec| / max|rec|` over random LTI systems.
pub fn scan_kernel_equivalence(rng: &mut ChaCha8Rng, cases: usize, fault: Option<Fault>) -> (f32, CheckResult) {
    let mut worst = 0.0f32;
    for _ in 0..cases {
        let len = rng.gen_range(1..=128);
        let a = -rng.gen_range(-2.0f32..1.5).exp();
        let delta = rng.gen_range(1e-3f32..1.0);
        let (b, c) = (rng.gen_range(-1.0f32..1.0), rng.gen_range(-1.0f32..1.0));
        let x: Vec<f32> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a_bar, b_bar) = zoh(a, delta, b, false);
        let conv = causal_conv(&x, &kernel_from_discrete(a_bar, b_bar, c, len));
        let rec_a = match fault {
            Some(Fault::PerturbAbar) => a_bar * (1.0 + 1e-2),
            None => a_bar,
        };
        let steps = vec![ScanStep { a_bar: rec_a, b_bar, c }; len];
        let rec = scan_recurrent(&steps, &x, 0.0).expect("matching lengths");
        let scale = rec.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-12);
        let diff = conv.iter().zip(&rec).fold(0.0f32, |m, (p, q)| m.max((p - q).abs()));
        worst = worst.max(diff / scale);
    }
    (
        worst,
        check(
            "scan_kernel_equivalence",
            worst <= 1e-4,
            format!("{cases} systems, max relative err {worst:e}"),
        ),
    )
}

pub fn random_ssm_params(rng: &mut ChaCha8Rng, inner: usize, state: usize) -> SelectiveSsmParams {
    let mut p = SelectiveSsmParams::zeros(inner, state);
    p.a_log.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.5));
    p.dt_proj.weight.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    p.dt_proj.bias.iter_mut().flatten().for_each(|v| *v = rng.gen_range(-3.0..0.5));
    p.b_proj.weight.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    p.c_proj.weight.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    p.d_skip.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    p
}

pub fn selective_scan_oracle(rng: &mut ChaCha8Rng, cases: usize) -> CheckResult {
    let mut worst = 0.0f32;
    for i in 0..cases {
        let len = rng.gen_range(1..=64);
        let inner = rng.gen_range(1..=16);
        let p = random_ssm_params(rng, inner, 1);
        let x = Matrix::from_fn(len, inner, |_, _| rng.gen_range(-1.0..1.0));
        let dir = if i % 2 == 0 { ScanDirection::Forward } else { ScanDirection::Backward };
        let opts = ScanOptions::default();
        let got = selective_scan(&x, &p, dir, opts).expect("matching width");
        worst = worst.max(got.max_abs_diff(&naive_selective_scan(&x, &p, dir, opts)));
    }
    check(
        "selective_scan_oracle",
        worst <= 1e-5,
        format!("{cases} cases, max abs err {worst:e}"),
    )
}

pub fn fusion_equivalence(names: &[&str], seed: u64) -> Result<CheckResult> {
    let mut details = Vec::new();
    let mut ok = true;
    for &name in names {
        let cfg = if name == "micro" { ModelConfig::micro() } else { ModelConfig::preset(name)? };
        let m = Model::build(cfg, &InitOptions::stress(seed))?;
        let (graph, report) = fuse_graph(&m.graph)?;
        let fused = Model {
            config: m.config.clone(),
            graph,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let x = random_tensor(&mut rng, m.input_shape(2));
        let div = m.forward(&x)?.max_abs_diff(&fused.forward(&x)?);
        let fewer = report.layers_after < report.layers_before;
        ok &= div <= FUSION_TOLERANCE && fewer;
        details.push(format!("{name}: div {div:e}, layers {}->{}", report.layers_before, report.layers_after));
    }
    Ok(check("fusion_equivalence", ok, details.join("; ")))
}

pub fn split_concat_roundtrip(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut ok = true;
    for _ in 0..50 {
        let c = rng.gen_range(1..24);
        let shape = [rng.gen_range(1..3), c, rng.gen_range(1..6), rng.gen_range(1..6)];
        let x = random_tensor(rng, shape);
        let mut sizes = Vec::new();
        let mut left = c;
        while left > 0 {
            let s = rng.gen_range(1..=left);
            sizes.push(s);
            left -= s;
        }
        let parts = split_channels(&x, &sizes).expect("sizes sum to c");
        ok &= concat_channels(&parts).expect("same spatial") == x;
    }
    check("split_concat_roundtrip", ok, "50 random splits, bit-exact".into())
}

pub fn partition_conservation(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut ok = true;
    for _ in 0..1000 {
        let c = rng.gen_range(1..1024);
        let xi = rng.gen_range(0.0f32..=1.0);
        let mu = rng.gen_range(0.0f32..=1.0 - xi);
        let cfg = MrffiConfig {
            n_splits: rng.gen_range(1..5),
            ..MrffiConfig::with_ratios(xi, mu).expect("valid ratios")
        };
        let (g, l, id) = partition(c, &cfg).expect("valid");
        ok &= g + l + id == c && l % cfg.n_splits == 0;
    }
    check("partition_conservation", ok, "1000 random (c, xi, mu, n)".into())
}

pub fn variant_shape_builds() -> Result<CheckResult> {
    let mut details = Vec::new();
    let mut ok = true;
    for name in PRESET_NAMES {
        let m = Model::zeros(ModelConfig::preset(name)?)?;
        let shapes = m.group_shapes()?;
        let head = shapes.last().map(|(_, s)| *s);
        ok &= head == Some([1, m.config.num_classes, 1, 1]);
        let stages: Vec<String> = shapes
            .iter()
            .filter(|(g, _)| g.starts_with("stage"))
            .map(|(_, s)| format!("{}x{}", s[2], s[3]))
            .collect();
        details.push(format!("{name}: {}", stages.join(",")));
    }
    let micro = Model::build(ModelConfig::micro(), &InitOptions::new(0))?;
    ok &= micro.forward(&Tensor::zeros(micro.input_shape(1)))?.data().iter().all(|v| v.is_finite());
    Ok(check("variant_shape_builds", ok, details.join("; ")))
}

pub fn cost_report_tolerances() -> Result<CheckResult> {
    let mut details = Vec::new();
    let mut ok = true;
    for name in PRESET_NAMES {
        let m = Model::zeros(ModelConfig::preset(name)?)?;
        let r = model_costs(&m)?;
        let reference = reference_costs(name).expect("preset has reference");
        let (df, dp) = r.deviation(reference);
        ok &= df.abs() <= FLOPS_TOLERANCE && dp.abs() <= PARAMS_TOLERANCE;
        details.push(format!("{name}: flops {:+.1}%, params {:+.1}%", df * 100.0, dp * 100.0));
    }
    Ok(check("cost_report_tolerances", ok, details.join("; ")))
}

pub fn run(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let fusion_names: Vec<&str> = if opts.full { PRESET_NAMES.to_vec() } else { vec!["micro", "T2"] };
    let checks = vec![
        wavelet_reconstruction(&mut rng),
        filter_orthonormality(),
        scan_kernel_equivalence(&mut rng, 200, opts.fault).1,
        selective_scan_oracle(&mut rng, 100),
        fusion_equivalence(&fusion_names, opts.seed)?,
        split_concat_roundtrip(&mut rng),
        partition_conservation(&mut rng),
        variant_shape_builds()?,
        cost_report_tolerances()?,
    ];
    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
