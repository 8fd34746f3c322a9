//! Multi-receptive-field feature interaction: the channels are split into a
//! global part (bidirectional Mamba plus wavelet-domain conv), a local part
//! (multi-kernel depthwise conv) and an untouched identity part.

use crate::error::{Error, Result};
use crate::graph::{conv_bn, Sequence};
use crate::ops::conv::ConvSpec;
use crate::ops::LinearParams;
use crate::ops::shape::{concat_channels, split_channels};
use crate::params::{join, HasParams, ParamView, ParamViewMut};
use crate::ssm::{MambaMixer, ScanOptions};
use crate::tensor::Tensor;
use crate::wavelet::{wavelet_domain, HaarFilterBank};

/// Slack for decimal ratios that are not exact in binary, e.g. `0.7 · 280`.
const RATIO_EPS: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MrffiConfig {
    /// Global ratio ξ.
    pub xi: f32,
    /// Local ratio μ, `ξ + μ ≤ 1`.
    pub mu: f32,
    pub n_splits: usize,
    pub expand: usize,
    pub d_state: usize,
    pub scan: ScanOptions,
    pub wt_enabled: bool,
}

impl Default for MrffiConfig {
    fn default() -> Self {
        Self {
            xi: 0.5,
            mu: 0.25,
            n_splits: 1,
            expand: 2,
            d_state: 1,
            scan: ScanOptions::default(),
            wt_enabled: true,
        }
    }
}

impl MrffiConfig {
    pub fn with_ratios(xi: f32, mu: f32) -> Result<Self> {
        let cfg = Self {
            xi,
            mu,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ok_ratio = |r: f32| (0.0..=1.0).contains(&r);
        if !ok_ratio(self.xi) || !ok_ratio(self.mu) {
            return Err(Error::Config(format!("ratios must lie in [0, 1]: xi={}, mu={}", self.xi, self.mu)));
        }
        if self.xi as f64 + self.mu as f64 > 1.0 + RATIO_EPS {
            return Err(Error::Config(format!("xi + mu = {} exceeds 1", self.xi + self.mu)));
        }
        if self.n_splits == 0 || self.expand == 0 || self.d_state == 0 {
            return Err(Error::Config("n_splits, expand and d_state must be >= 1".into()));
        }
        Ok(())
    }
}

/// `(c_g, c_l, c_id)`: floor for global, floor to a multiple of `n` for
/// local, remainder to identity.
pub fn partition(c: usize, cfg: &MrffiConfig) -> Result<(usize, usize, usize)> {
    cfg.validate()?;
    if c == 0 {
        return Err(Error::Config("cannot partition zero channels".into()));
    }
    let floor = |r: f32| ((r as f64 * c as f64 + RATIO_EPS).floor() as usize).min(c);
    let c_g = floor(cfg.xi);
    let c_l = floor(cfg.mu).min(c - c_g);
    let c_l = c_l - c_l % cfg.n_splits;
    Ok((c_g, c_l, c - c_g - c_l))
}

/// Split `j` (1-based) uses a depthwise `2j+1` kernel.
pub fn mk_kernel(j: usize) -> usize {
    2 * j + 1
}

/// Equal channel groups, one conv+BN sequence each, concatenated.
pub fn mk_deconv(x: &Tensor, splits: &[Sequence]) -> Result<Tensor> {
    let n = splits.len();
    if n == 0 || x.c() % n != 0 {
        return Err(Error::shape("mk_deconv", "channels (multiple of splits)", x.c().next_multiple_of(n.max(1)), x.c()));
    }
    if n == 1 {
        return splits[0].forward(x.clone());
    }
    let parts = split_channels(x, &vec![x.c() / n; n])?;
    let outs = parts
        .into_iter()
        .zip(splits)
        .map(|(p, s)| s.forward(p))
        .collect::<Result<Vec<_>>>()?;
    concat_channels(&outs)
}

fn rms(x: &Tensor) -> f32 {
    (x.l2_norm().powi(2) / x.numel().max(1) as f64).sqrt() as f32
}

/// Divides weights and bias by `by` when it is a usable scale.
fn scale_linear(l: &mut LinearParams, by: f32) {
    if by.is_finite() && by > 0.0 {
        l.weight.iter_mut().for_each(|v| *v /= by);
        l.bias.iter_mut().flatten().for_each(|v| *v /= by);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mrffi {
    pub c_global: usize,
    pub c_local: usize,
    pub c_identity: usize,
    pub mamba: Option<MambaMixer>,
    /// Depthwise 3×3 + BN over the `4·c_g` Haar sub-band channels.
    pub wt: Option<Sequence>,
    pub mk: Vec<Sequence>,
}

impl Mrffi {
    /// Zero weights, identity BN. `prefix` names the wavelet and split layers.
    pub fn new(prefix: &str, channels: usize, cfg: &MrffiConfig) -> Result<Self> {
        let (c_g, c_l, c_id) = partition(channels, cfg)?;
        let mamba = (c_g > 0).then(|| MambaMixer::zeros(c_g, cfg.expand, cfg.d_state, cfg.scan));
        let wt = (c_g > 0 && cfg.wt_enabled)
            .then(|| conv_bn(&join(prefix, "wt"), 4 * c_g, 4 * c_g, ConvSpec::depthwise(3, 1, 4 * c_g)));
        let mk = if c_l > 0 {
            let group = c_l / cfg.n_splits;
            (1..=cfg.n_splits)
                .map(|j| {
                    let name = join(prefix, &format!("mk.split{j}"));
                    conv_bn(&name, group, group, ConvSpec::depthwise(mk_kernel(j), 1, group))
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            c_global: c_g,
            c_local: c_l,
            c_identity: c_id,
            mamba,
            wt,
            mk,
        })
    }

    pub fn channels(&self) -> usize {
        self.c_global + self.c_local + self.c_identity
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.c() != self.channels() {
            return Err(Error::shape("mrffi", "channels", self.channels(), x.c()));
        }
        if self.c_identity == x.c() {
            return Ok(x.clone());
        }
        let sizes = [self.c_global, self.c_local, self.c_identity];
        let nonzero: Vec<usize> = sizes.iter().copied().filter(|&s| s > 0).collect();
        let mut parts = split_channels(x, &nonzero)?.into_iter();
        let mut outs = Vec::with_capacity(3);
        if self.c_global > 0 {
            outs.push(self.global(&parts.next().expect("global part"))?);
        }
        if self.c_local > 0 {
            outs.push(mk_deconv(&parts.next().expect("local part"), &self.mk)?);
        }
        outs.extend(parts);
        concat_channels(&outs)
    }

    /// Mamba mixer plus the wavelet branch, when present.
    pub fn global(&self, x_g: &Tensor) -> Result<Tensor> {
        let mamba = self.mamba.as_ref().ok_or_else(|| Error::Config("mrffi has no global branch".into()))?;
        let mut y = mamba.forward(x_g)?;
        if let Some(wt) = &self.wt {
            let w = wavelet_domain(x_g, &HaarFilterBank::haar(), |t| wt.forward(t))?;
            y.add_assign(&w)?;
        }
        Ok(y)
    }

    /// Forward pass that calibrates the BN layers inside the branches.
    pub fn calibrate(&mut self, x: &Tensor) -> Result<Tensor> {
        if self.c_identity == x.c() {
            return Ok(x.clone());
        }
        let sizes = [self.c_global, self.c_local, self.c_identity];
        let nonzero: Vec<usize> = sizes.iter().copied().filter(|&s| s > 0).collect();
        let mut parts = split_channels(x, &nonzero)?.into_iter();
        let mut outs = Vec::with_capacity(3);
        if self.c_global > 0 {
            let x_g = parts.next().expect("global part");
            let mamba = self.mamba.as_mut().ok_or_else(|| Error::Config("mrffi has no global branch".into()))?;
            // the mixer has no norm of its own: rescale in_proj for unit-RMS
            // input and out_proj for unit-RMS output
            scale_linear(&mut mamba.in_proj, rms(&x_g));
            let y = mamba.forward(&x_g)?;
            scale_linear(&mut mamba.out_proj, rms(&y));
            let mut y = mamba.forward(&x_g)?;
            if let Some(wt) = &mut self.wt {
                y.add_assign(&wavelet_domain(&x_g, &HaarFilterBank::haar(), |t| wt.calibrate(t))?)?;
            }
            outs.push(y);
        }
        if self.c_local > 0 {
            let x_l = parts.next().expect("local part");
            let n = self.mk.len();
            let pieces = split_channels(&x_l, &vec![x_l.c() / n; n])?;
            let ys = pieces
                .into_iter()
                .zip(&mut self.mk)
                .map(|(p, s)| s.calibrate(p))
                .collect::<Result<Vec<_>>>()?;
            outs.push(concat_channels(&ys)?);
        }
        outs.extend(parts);
        concat_channels(&outs)
    }

    pub fn layer_count(&self) -> usize {
        let mut n = self.mamba.is_some() as usize;
        self.visit_sequences(&mut |s| n += s.layer_count());
        n
    }

    pub fn visit_sequences<'a>(&'a self, f: &mut dyn FnMut(&'a Sequence)) {
        if let Some(wt) = &self.wt {
            f(wt);
        }
        self.mk.iter().for_each(|s| f(s));
    }

    pub fn visit_sequences_mut(&mut self, f: &mut dyn FnMut(&mut Sequence)) {
        if let Some(wt) = &mut self.wt {
            f(wt);
        }
        self.mk.iter_mut().for_each(|s| f(s));
    }
}

impl HasParams for Mrffi {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamView<'a>)) {
        if let Some(m) = &self.mamba {
            m.visit_params(&join(prefix, "mamba"), f);
        }
        self.visit_sequences(&mut |s| s.visit_params("", f));
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamViewMut<'_>)) {
        if let Some(m) = &mut self.mamba {
            m.visit_params_mut(&join(prefix, "mamba"), f);
        }
        self.visit_sequences_mut(&mut |s| s.visit_params_mut("", f));
    }
}
