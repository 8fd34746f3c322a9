//! Input-dependent (selective) scan: Δ, B and C are projected from each
//! token, discretized per step and run through the linear recurrence.

use crate::error::{Error, Result};
use crate::ops::act::softplus;
use crate::ops::LinearParams;
use crate::params::{join, HasParams, ParamRole, ParamView, ParamViewMut};
use crate::ssm::lti::zoh;
use crate::tensor::Matrix;

/// Order in which the row-major flattened `h·w` tokens are visited.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanDirection {
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanOptions {
    /// Use `b̄ = Δ·B` instead of the exact ZOH input coupling.
    pub euler_b: bool,
    /// Add the `D·x` feedthrough.
    pub d_skip: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            euler_b: false,
            d_skip: true,
        }
    }
}

/// Scan parameters for one direction.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveSsmParams {
    pub d_inner: usize,
    pub d_state: usize,
    /// `d_inner × d_state`, `A = −exp(a_log)`.
    pub a_log: Vec<f32>,
    /// `d_inner → d_inner`, with bias; softplus of its output is Δ.
    pub dt_proj: LinearParams,
    /// `d_inner → d_state`, no bias.
    pub b_proj: LinearParams,
    /// `d_inner → d_state`, no bias.
    pub c_proj: LinearParams,
    pub d_skip: Vec<f32>,
}

impl SelectiveSsmParams {
    pub fn zeros(d_inner: usize, d_state: usize) -> Self {
        Self {
            d_inner,
            d_state,
            a_log: vec![0.0; d_inner * d_state],
            dt_proj: LinearParams::zeros(d_inner, d_inner, true),
            b_proj: LinearParams::zeros(d_inner, d_state, false),
            c_proj: LinearParams::zeros(d_inner, d_state, false),
            d_skip: vec![0.0; d_inner],
        }
    }
}

impl HasParams for SelectiveSsmParams {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamView<'a>)) {
        f(ParamView {
            name: join(prefix, "a_log"),
            shape: vec![self.d_inner, self.d_state],
            role: ParamRole::ALog,
            data: &self.a_log,
        });
        self.dt_proj.visit_params(&join(prefix, "dt_proj"), &mut |mut p| {
            if p.role == ParamRole::Bias {
                p.role = ParamRole::DtBias;
            }
            f(p)
        });
        self.b_proj.visit_params(&join(prefix, "b_proj"), f);
        self.c_proj.visit_params(&join(prefix, "c_proj"), f);
        f(ParamView {
            name: join(prefix, "d_skip"),
            shape: vec![self.d_inner],
            role: ParamRole::DSkip,
            data: &self.d_skip,
        });
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamViewMut<'_>)) {
        f(ParamViewMut {
            name: join(prefix, "a_log"),
            shape: vec![self.d_inner, self.d_state],
            role: ParamRole::ALog,
            data: &mut self.a_log,
        });
        self.dt_proj.visit_params_mut(&join(prefix, "dt_proj"), &mut |mut p| {
            if p.role == ParamRole::Bias {
                p.role = ParamRole::DtBias;
            }
            f(p)
        });
        self.b_proj.visit_params_mut(&join(prefix, "b_proj"), f);
        self.c_proj.visit_params_mut(&join(prefix, "c_proj"), f);
        f(ParamViewMut {
            name: join(prefix, "d_skip"),
            shape: vec![self.d_inner],
            role: ParamRole::DSkip,
            data: &mut self.d_skip,
        });
    }
}

/// Token-major entry point: `x` is `L × d_inner`, result has the same shape.
pub fn selective_scan(
    x: &Matrix,
    p: &SelectiveSsmParams,
    dir: ScanDirection,
    opts: ScanOptions,
) -> Result<Matrix> {
    if x.cols() != p.d_inner {
        return Err(Error::shape("selective_scan", "inner channels", p.d_inner, x.cols()));
    }
    let len = x.rows();
    let u = x.transpose();
    let y = scan_channel_major(u.data(), len, p, dir, opts);
    Ok(Matrix::new(p.d_inner, len, y)?.transpose())
}

/// `u` is `d_inner × len` (channel-major); returns the same layout.
pub(crate) fn scan_channel_major(
    u: &[f32],
    len: usize,
    p: &SelectiveSsmParams,
    dir: ScanDirection,
    opts: ScanOptions,
) -> Vec<f32> {
    let (inner, m) = (p.d_inner, p.d_state);
    let mut delta = p.dt_proj.forward_channel_major(u, len);
    delta.iter_mut().for_each(|v| *v = softplus(*v));
    let b = p.b_proj.forward_channel_major(u, len);
    let c = p.c_proj.forward_channel_major(u, len);

    let mut out = vec![0.0f32; inner * len];
    let mut h = vec![0.0f32; m];
    let mut a = vec![0.0f32; m];
    for i in 0..inner {
        for (s, av) in a.iter_mut().enumerate() {
            *av = -p.a_log[i * m + s].exp();
        }
        h.fill(0.0);
        let d_i = if opts.d_skip { p.d_skip[i] } else { 0.0 };
        let row = i * len;
        let mut step = |t: usize| {
            let x = u[row + t];
            let dt = delta[row + t];
            let mut y = 0.0f32;
            for s in 0..m {
                let (a_bar, b_bar) = zoh(a[s], dt, b[s * len + t], opts.euler_b);
                h[s] = a_bar * h[s] + b_bar * x;
                y += c[s * len + t] * h[s];
            }
            out[row + t] = y + d_i * x;
        };
        match dir {
            ScanDirection::Forward => (0..len).for_each(&mut step),
            ScanDirection::Backward => (0..len).rev().for_each(&mut step),
        }
    }
    out
}

/// Forward scan with `fwd` plus backward scan with `bwd`, summed.
pub(crate) fn bidirectional_channel_major(
    u: &[f32],
    len: usize,
    fwd: &SelectiveSsmParams,
    bwd: &SelectiveSsmParams,
    opts: ScanOptions,
) -> Vec<f32> {
    let mut y = scan_channel_major(u, len, fwd, ScanDirection::Forward, opts);
    let yb = scan_channel_major(u, len, bwd, ScanDirection::Backward, opts);
    y.iter_mut().zip(&yb).for_each(|(a, b)| *a += b);
    y
}

/// Token-major bidirectional scan.
pub fn bidirectional_scan(
    x: &Matrix,
    fwd: &SelectiveSsmParams,
    bwd: &SelectiveSsmParams,
    opts: ScanOptions,
) -> Result<Matrix> {
    if x.cols() != fwd.d_inner || x.cols() != bwd.d_inner {
        return Err(Error::shape("bidirectional_scan", "inner channels", fwd.d_inner, x.cols()));
    }
    let len = x.rows();
    let y = bidirectional_channel_major(x.transpose().data(), len, fwd, bwd, opts);
    Ok(Matrix::new(fwd.d_inner, len, y)?.transpose())
}
