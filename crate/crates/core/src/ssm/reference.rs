//! Unoptimized scalar reference for the selective scan, evaluated in f64
//! with its own projections and discretization. Used by the verify suite.

use crate::ssm::selective::{ScanDirection, ScanOptions, SelectiveSsmParams};
use crate::tensor::Matrix;

/// `x` is `L × d_inner`; same contract as [`super::selective_scan`].
pub fn naive_selective_scan(x: &Matrix, p: &SelectiveSsmParams, dir: ScanDirection, opts: ScanOptions) -> Matrix {
    let (len, inner, m) = (x.rows(), p.d_inner, p.d_state);
    let dot = |w: &[f32], row: usize, t: usize| -> f64 {
        (0..inner).map(|j| w[row * inner + j] as f64 * x.at(t, j) as f64).sum()
    };
    let bias = |i: usize| p.dt_proj.bias.as_ref().map_or(0.0, |b| b[i] as f64);
    let order: Vec<usize> = match dir {
        ScanDirection::Forward => (0..len).collect(),
        ScanDirection::Backward => (0..len).rev().collect(),
    };
    let mut out = vec![0.0f32; len * inner];
    for i in 0..inner {
        let mut h = vec![0.0f64; m];
        for &t in &order {
            let pre = dot(&p.dt_proj.weight, i, t) + bias(i);
            let delta = pre.max(0.0) + (-pre.abs()).exp().ln_1p();
            let xt = x.at(t, i) as f64;
            let mut y = 0.0;
            for s in 0..m {
                let a = -(p.a_log[i * m + s] as f64).exp();
                let a_bar = (delta * a).exp();
                let bt = dot(&p.b_proj.weight, s, t);
                let b_bar = if opts.euler_b { delta * bt } else { (a_bar - 1.0) / a * bt };
                h[s] = a_bar * h[s] + b_bar * xt;
                y += dot(&p.c_proj.weight, s, t) * h[s];
            }
            if opts.d_skip {
                y += p.d_skip[i] as f64 * xt;
            }
            out[t * inner + i] = y as f32;
        }
    }
    Matrix::new(len, inner, out).expect("non-empty scan")
}
