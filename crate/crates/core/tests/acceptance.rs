//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::time::Instant;

use mobilemamba::fusion::{fuse_graph, FUSION_TOLERANCE};
use mobilemamba::init::{init_params, InitOptions};
use mobilemamba::metrics::{bench_pair, model_costs, BenchConfig};
use mobilemamba::model::{normalize_image, Model, ModelConfig, PRESET_NAMES};
use mobilemamba::mrffi::{Mrffi, MrffiConfig};
use mobilemamba::ops::split_channels;
use mobilemamba::ssm::lti::lti_steps;
use mobilemamba::ssm::{
    scan_convolutional, scan_recurrent, selective_scan, LtiSsm, ScanDirection, ScanOptions, SelectiveSsmParams,
};
use mobilemamba::wavelet::{iwt2d_cropped, wt2d, HaarFilterBank};
use mobilemamba::{Matrix, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn max_abs(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0f32, |m, (x, y)| {
        let d = (x - y).abs();
        if d > m || d.is_nan() {
            d
        } else {
            m
        }
    })
}

fn scan_kernel_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f32;
    for _ in 0..1000 {
        let len = r.gen_range(1..=128);
        let p = LtiSsm::from_log(
            r.gen_range(-3.0..2.0),
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
            10f32.powf(r.gen_range(-3.0..0.0)),
        )
        .unwrap();
        let x: Vec<f32> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
        let conv = scan_convolutional(&p, &x);
        let rec = scan_recurrent(&lti_steps(&p, len), &x, 0.0).unwrap();
        let scale = rec.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-12);
        worst = worst.max(max_abs(&conv, &rec) / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs < 10.0,
        format!("1000 systems, max relative err {worst:.2e}, {secs:.2}s"),
    )
}

fn softplus64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Scalar per-token loop in f64.
fn oracle_scan(x: &Matrix, p: &SelectiveSsmParams, backward: bool, opts: ScanOptions) -> Vec<f32> {
    let (len, d, m) = (x.rows(), p.d_inner, p.d_state);
    let proj = |w: &[f32], row: usize, t: usize| (0..d).map(|j| w[row * d + j] as f64 * x.at(t, j) as f64).sum::<f64>();
    let mut out = vec![0.0f32; len * d];
    for i in 0..d {
        let mut h = vec![0.0f64; m];
        for step in 0..len {
            let t = if backward { len - 1 - step } else { step };
            let bias = p.dt_proj.bias.as_ref().map_or(0.0, |b| b[i] as f64);
            let dt = softplus64(proj(&p.dt_proj.weight, i, t) + bias);
            let u = x.at(t, i) as f64;
            let mut y = 0.0;
            for s in 0..m {
                let a = -(p.a_log[i * m + s] as f64).exp();
                let decay = (dt * a).exp();
                let drive = if opts.euler_b { dt } else { (decay - 1.0) / a };
                h[s] = decay * h[s] + drive * proj(&p.b_proj.weight, s, t) * u;
                y += proj(&p.c_proj.weight, s, t) * h[s];
            }
            if opts.d_skip {
                y += p.d_skip[i] as f64 * u;
            }
            out[t * d + i] = y as f32;
        }
    }
    out
}

fn selective_scan_oracle() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f32;
    for case in 0..200 {
        let len = r.gen_range(1..=64);
        let d = r.gen_range(1..=16);
        let mut p = SelectiveSsmParams::zeros(d, 1);
        let mut fill = |v: &mut [f32], lo: f32, hi: f32| v.iter_mut().for_each(|e| *e = r.gen_range(lo..hi));
        fill(&mut p.a_log, -1.0, 1.5);
        fill(&mut p.dt_proj.weight, -0.5, 0.5);
        fill(p.dt_proj.bias.as_mut().unwrap(), -4.0, 0.5);
        fill(&mut p.b_proj.weight, -1.0, 1.0);
        fill(&mut p.c_proj.weight, -1.0, 1.0);
        fill(&mut p.d_skip, -1.0, 1.0);
        let x = Matrix::from_fn(len, d, |_, _| r.gen_range(-1.0..1.0));
        let opts = ScanOptions {
            euler_b: case % 4 == 3,
            d_skip: case % 5 != 4,
        };
        let backward = case % 2 == 1;
        let dir = if backward { ScanDirection::Backward } else { ScanDirection::Forward };
        let got = selective_scan(&x, &p, dir, opts).unwrap();
        worst = worst.max(max_abs(got.data(), &oracle_scan(&x, &p, backward, opts)));
    }
    outcome(worst <= 1e-5, format!("200 cases, max abs err {worst:.2e}"))
}

fn wavelet_reconstruction() -> Outcome {
    let mut r = rng(3);
    let bank = HaarFilterBank::haar();
    let (mut worst, mut worst_energy, mut ll_err) = (0.0f32, 0.0f64, 0.0f32);
    for i in 0..500 {
        let (h, w) = match i % 5 {
            0 => (3, 3),
            1 => (7, 7),
            _ => (r.gen_range(1..=16), r.gen_range(1..=16)),
        };
        let shape = [r.gen_range(1..=2), r.gen_range(1..=4), h, w];
        let x = Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0));
        let y = wt2d(&x, &bank);
        worst = worst.max(max_abs(iwt2d_cropped(&y, &bank, h, w).unwrap().data(), x.data()));
        let e = x.l2_norm();
        worst_energy = worst_energy.max((y.l2_norm() - e).abs() / e.max(1e-12));
        // low band of the top-left 2x2 block, zero-padded as needed
        let at = |hh: usize, ww: usize| if hh < h && ww < w { x.at([0, 0, hh, ww]) } else { 0.0 };
        let ll = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 2.0;
        ll_err = ll_err.max((y.at([0, 0, 0, 0]) - ll).abs());
    }
    outcome(
        worst <= 1e-5 && worst_energy <= 1e-4 && ll_err <= 1e-6,
        format!("500 tensors, max abs err {worst:.2e}, energy rel err {worst_energy:.2e}, LL check {ll_err:.2e}"),
    )
}

fn fusion_equivalence() -> Outcome {
    let mut details = Vec::new();
    let mut passed = true;
    for (i, name) in PRESET_NAMES.iter().enumerate() {
        let m = Model::build(ModelConfig::preset(name).unwrap(), &InitOptions::stress(100 + i as u64)).unwrap();
        let (graph, report) = fuse_graph(&m.graph).unwrap();
        let fused = Model {
            config: m.config.clone(),
            graph,
        };
        let x = m.random_input(8, 200 + i as u64).unwrap();
        let (a, b) = (m.forward(&x).unwrap(), fused.forward(&x).unwrap());
        let div = max_abs(a.data(), b.data());
        let ok = div <= FUSION_TOLERANCE && report.layers_after < report.layers_before;
        passed &= ok;
        details.push(format!("{name} {div:.1e} ({}->{})", report.layers_before, report.layers_after));
    }
    outcome(passed, details.join(", "))
}

fn cost_reproduction() -> Outcome {
    let published = [
        ("T2", 255.0, 8.8),
        ("T4", 413.0, 14.2),
        ("S6", 652.0, 15.0),
        ("B1", 1080.0, 17.1),
        ("B2", 2427.0, 17.1),
        ("B4", 4313.0, 17.1),
    ];
    let mut details = Vec::new();
    let mut passed = true;
    for (name, mflops, mparams) in published {
        let r = model_costs(&Model::zeros(ModelConfig::preset(name).unwrap()).unwrap()).unwrap();
        let t = r.totals();
        let rows_sum: u64 = r.rows.iter().map(|row| row.macs).sum();
        let identity_free = r.rows.iter().filter(|row| row.branch.name() == "identity").all(|row| row.macs == 0 && row.params == 0);
        let df = t.macs as f64 / 1e6 / mflops - 1.0;
        let dp = t.params as f64 / 1e6 / mparams - 1.0;
        passed &= df.abs() <= 0.15 && dp.abs() <= 0.10 && rows_sum == t.macs && identity_free;
        details.push(format!("{name} {:+.1}%/{:+.1}%", df * 100.0, dp * 100.0));
    }
    outcome(passed, format!("FLOPs/params deviation: {}", details.join(", ")))
}

fn shape_pipeline() -> Outcome {
    let mut passed = true;
    let mut details = Vec::new();
    for name in PRESET_NAMES {
        let m = Model::zeros(ModelConfig::preset(name).unwrap()).unwrap();
        let y = m.forward(&Tensor::zeros(m.input_shape(1))).unwrap();
        passed &= y.rows() == 1 && y.cols() == m.config.num_classes;
        let stages: Vec<usize> = m
            .group_shapes()
            .unwrap()
            .iter()
            .filter(|(g, _)| g.starts_with("stage"))
            .map(|(_, s)| s[2])
            .collect();
        if m.config.resolution == 192 {
            passed &= stages == [12, 6, 3];
        }
        details.push(format!("{name}@{} {:?}", m.config.resolution, stages));
    }
    let b1 = Model::zeros(ModelConfig::preset("B1").unwrap()).unwrap().trainable_params();
    for (res, preset) in [(384, "B2"), (512, "B4")] {
        let cfg = ModelConfig::preset("B1").unwrap().with_resolution(res);
        let p = Model::zeros(cfg).unwrap().trainable_params();
        let q = Model::zeros(ModelConfig::preset(preset).unwrap()).unwrap().trainable_params();
        passed &= p == b1 && q == b1;
    }
    details.push(format!("B1 params {b1} at 256/384/512"));
    outcome(passed, details.join(", "))
}

fn mrffi_degenerate() -> Outcome {
    let mut r = rng(7);
    let cfg = MrffiConfig::with_ratios(0.0, 0.0).unwrap();
    let mut block = Mrffi::new("m", 24, &cfg).unwrap();
    init_params(&mut block, &InitOptions::stress(7));
    let x = Tensor::from_fn([2, 24, 5, 6], |_| r.gen_range(-3.0..3.0));
    let mut passed = block.forward(&x).unwrap() == x;
    let mut checked = 0;
    while checked < 100 {
        let c = r.gen_range(4..=64);
        let xi = r.gen_range(0.0f32..0.8);
        let mu = r.gen_range(0.0f32..(0.95 - xi));
        let cfg = MrffiConfig {
            n_splits: r.gen_range(1..=3),
            wt_enabled: r.gen_bool(0.5),
            ..MrffiConfig::with_ratios(xi, mu).unwrap()
        };
        let Ok(mut block) = Mrffi::new("m", c, &cfg) else { continue };
        if block.c_identity == 0 {
            continue;
        }
        init_params(&mut block, &InitOptions::stress(checked));
        let x = Tensor::from_fn([1, c, r.gen_range(1..=6), r.gen_range(1..=6)], |_| r.gen_range(-2.0..2.0));
        let y = block.forward(&x).unwrap();
        let head = block.c_global + block.c_local;
        if head == 0 {
            passed &= y == x;
        } else {
            let sizes = [head, block.c_identity];
            let (xs, ys) = (split_channels(&x, &sizes).unwrap(), split_channels(&y, &sizes).unwrap());
            passed &= xs[1] == ys[1];
        }
        checked += 1;
    }
    outcome(passed, format!("xi=mu=0 identity and {checked} random identity slices bit-exact"))
}

fn fuzz_stability() -> Outcome {
    let m = Model::build(ModelConfig::micro(), &InitOptions::stress(8)).unwrap();
    let mut r = rng(8);
    let shape = m.input_shape(1);
    let mut bad = 0;
    for i in 0..10_000 {
        // images in [0, 1]: noise, flat fields, binary patterns, sparse spikes
        let raw = match i % 4 {
            0 => Tensor::from_fn(shape, |_| r.gen::<f32>()),
            1 => Tensor::full(shape, r.gen::<f32>()),
            2 => Tensor::from_fn(shape, |_| r.gen_bool(0.5) as u8 as f32),
            _ => Tensor::from_fn(shape, |_| if r.gen_bool(0.02) { 1.0 } else { 0.0 }),
        };
        let y = m.forward(&normalize_image(&raw).unwrap()).unwrap();
        bad += !y.data().iter().all(|v| v.is_finite()) as usize;
    }
    outcome(bad == 0, format!("10000 micro forwards, {bad} non-finite"))
}

fn bench_sanity() -> Outcome {
    let m = Model::build(ModelConfig::preset("S6").unwrap(), &InitOptions::new(9)).unwrap();
    let (fused, _) = mobilemamba::fusion::fuse_model(&m, &m.random_input(1, 9).unwrap()).unwrap();
    let cfg = BenchConfig {
        batch: 1,
        warmup: 5,
        iters: 400,
        threads: 0,
        seed: 9,
    };
    let r = bench_pair(&m, &fused, &cfg).unwrap();
    let (a, b) = (&r.a, &r.b);
    outcome(
        a.measured_iters >= 10 && b.measured_iters >= 10 && r.speedup >= 1.0,
        format!(
            "S6 unfused {:.2} img/s, fused {:.2} img/s, paired speedup {:.4} over {} iters",
            a.images_per_second, b.images_per_second, r.speedup, b.measured_iters
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("scan/kernel equivalence", scan_kernel_equivalence),
        ("selective-scan oracle", selective_scan_oracle),
        ("wavelet perfect reconstruction", wavelet_reconstruction),
        ("fusion equivalence", fusion_equivalence),
        ("cost reproduction", cost_reproduction),
        ("shape pipeline", shape_pipeline),
        ("MRFFI degenerate cases", mrffi_degenerate),
        ("fuzz stability", fuzz_stability),
        ("benchmark sanity", bench_sanity),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += !o.passed as usize;
        println!("{} {}. {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
