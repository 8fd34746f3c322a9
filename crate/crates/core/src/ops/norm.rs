use crate::error::{Error, Result};
use crate::params::{join, HasParams, ParamRole, ParamView, ParamViewMut};
use crate::tensor::Tensor;

pub const DEFAULT_BN_EPS: f32 = 1e-5;

/// Samples per channel below which [`BatchNormParams::observe`] falls back
/// to a single uncentered statistic for the whole layer.
pub const MIN_OBSERVED_SAMPLES: usize = 16;

/// Inference-mode batch normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
}

impl BatchNormParams {
    /// gamma = 1, beta = 0, mean = 0, var = 1.
    pub fn identity(channels: usize, eps: f32) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Sets the running statistics to the per-channel mean and biased
    /// variance of `x` over batch and space (see [`MIN_OBSERVED_SAMPLES`]).
    pub fn observe(&mut self, x: &Tensor) -> Result<()> {
        if x.c() != self.channels() {
            return Err(Error::shape("batchnorm2d", "channels", self.channels(), x.c()));
        }
        let count = (x.n() * x.plane_len()) as f64;
        if count < MIN_OBSERVED_SAMPLES as f64 {
            // too few samples per channel: one layer-wide second moment
            let s2: f64 = x.data().iter().map(|&v| v as f64 * v as f64).sum();
            self.running_mean.fill(0.0);
            self.running_var.fill((s2 / x.numel().max(1) as f64) as f32);
            return Ok(());
        }
        for c in 0..x.c() {
            let (mut s, mut s2) = (0.0f64, 0.0f64);
            for n in 0..x.n() {
                for &v in x.plane(n, c) {
                    s += v as f64;
                    s2 += v as f64 * v as f64;
                }
            }
            let mean = s / count;
            self.running_mean[c] = mean as f32;
            self.running_var[c] = (s2 / count - mean * mean).max(0.0) as f32;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        for (what, len) in [
            ("beta length", self.beta.len()),
            ("running_mean length", self.running_mean.len()),
            ("running_var length", self.running_var.len()),
        ] {
            if len != c {
                return Err(Error::shape("batchnorm2d", what, c, len));
            }
        }
        for (ch, &v) in self.running_var.iter().enumerate() {
            let d = v + self.eps;
            if d <= 0.0 || d.is_nan() {
                return Err(Error::NonPositiveVariance { channel: ch, value: d });
            }
        }
        Ok(())
    }

    /// Per-channel `(scale, shift)` so that `bn(x) = x·scale + shift`.
    pub fn scale_shift(&self) -> Result<(Vec<f32>, Vec<f32>)> {
        self.validate()?;
        let scale: Vec<f32> = self
            .gamma
            .iter()
            .zip(&self.running_var)
            .map(|(g, v)| g / (v + self.eps).sqrt())
            .collect();
        let shift = self
            .beta
            .iter()
            .zip(&self.running_mean)
            .zip(&scale)
            .map(|((b, m), s)| b - m * s)
            .collect();
        Ok((scale, shift))
    }
}

impl HasParams for BatchNormParams {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamView<'a>)) {
        let c = self.channels();
        for (name, role, data) in [
            ("gamma", ParamRole::BnGamma, &self.gamma),
            ("beta", ParamRole::BnBeta, &self.beta),
            ("running_mean", ParamRole::BnMean, &self.running_mean),
            ("running_var", ParamRole::BnVar, &self.running_var),
        ] {
            f(ParamView {
                name: join(prefix, name),
                shape: vec![c],
                role,
                data,
            });
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamViewMut<'_>)) {
        let c = self.channels();
        for (name, role, data) in [
            ("gamma", ParamRole::BnGamma, &mut self.gamma),
            ("beta", ParamRole::BnBeta, &mut self.beta),
            ("running_mean", ParamRole::BnMean, &mut self.running_mean),
            ("running_var", ParamRole::BnVar, &mut self.running_var),
        ] {
            f(ParamViewMut {
                name: join(prefix, name),
                shape: vec![c],
                role,
                data,
            });
        }
    }
}

/// `(x − mean) / sqrt(var + eps) · gamma + beta`, per channel, running stats only.
pub fn batchnorm2d(x: &Tensor, p: &BatchNormParams) -> Result<Tensor> {
    let mut out = x.clone();
    batchnorm2d_inplace(&mut out, p)?;
    Ok(out)
}

pub fn batchnorm2d_inplace(x: &mut Tensor, p: &BatchNormParams) -> Result<()> {
    if p.channels() != x.c() {
        return Err(Error::shape("batchnorm2d", "channels", p.channels(), x.c()));
    }
    p.validate()?;
    let c = x.c();
    let plane_len = x.plane_len();
    for (i, plane) in x.data_mut().chunks_mut(plane_len).enumerate() {
        let ch = i % c;
        let inv_std = 1.0 / (p.running_var[ch] + p.eps).sqrt();
        let (mean, gamma, beta) = (p.running_mean[ch], p.gamma[ch], p.beta[ch]);
        for v in plane {
            *v = (*v - mean) * inv_std * gamma + beta;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bn(gamma: f32, beta: f32, mean: f32, var: f32, eps: f32) -> BatchNormParams {
        BatchNormParams {
            gamma: vec![gamma],
            beta: vec![beta],
            running_mean: vec![mean],
            running_var: vec![var],
            eps,
        }
    }

    #[test]
    fn observe_standardizes_its_input() {
        let x = Tensor::from_fn([2, 2, 4, 4], |[n, c, h, w]| (c as f32 + 1.0) * ((n * 16 + h * 4 + w) as f32).sin() + 3.0 * c as f32);
        let mut p = BatchNormParams::identity(2, 0.0);
        p.observe(&x).unwrap();
        let y = batchnorm2d(&x, &p).unwrap();
        for c in 0..2 {
            let v: Vec<f32> = (0..2).flat_map(|n| y.plane(n, c).to_vec()).collect();
            let mean = v.iter().sum::<f32>() / v.len() as f32;
            let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f32>() / v.len() as f32;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-4, "{mean} {var}");
        }
    }

    #[test]
    fn observe_with_few_samples_uses_layer_moment() {
        let x = Tensor::new([2, 2, 1, 1], vec![1.0, 3.0, -1.0, 1.0]).unwrap();
        let mut p = BatchNormParams::identity(2, 0.0);
        p.observe(&x).unwrap();
        assert_eq!(p.running_mean, [0.0, 0.0]);
        assert_eq!(p.running_var, [3.0, 3.0]);
    }

    #[test]
    fn identity_params_are_bit_exact() {
        let x = Tensor::from_fn([2, 3, 4, 5], |[a, b, c, d]| ((a * 7 + b * 5 + c * 3 + d) as f32).sin() * 13.7);
        let y = batchnorm2d(&x, &BatchNormParams::identity(3, 0.0)).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn formula() {
        let x = Tensor::full([1, 1, 1, 1], 2.0);
        assert_eq!(batchnorm2d(&x, &bn(3.0, 1.0, 0.0, 1.0, 0.0)).unwrap().data(), &[7.0]);
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor::from_fn([1, 1, 3, 3], |[_, _, h, w]| (h * 3 + w) as f32 - 4.0);
        let y = batchnorm2d(&x, &bn(0.0, 5.0, 0.3, 2.0, 1e-5)).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn non_positive_variance_is_rejected() {
        let x = Tensor::zeros([1, 1, 1, 1]);
        assert!(matches!(
            batchnorm2d(&x, &bn(1.0, 0.0, 0.0, 0.0, 0.0)),
            Err(Error::NonPositiveVariance { .. })
        ));
        assert!(batchnorm2d(&x, &bn(1.0, 0.0, 0.0, -1.0, 0.5)).is_err());
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::zeros([1, 2, 1, 1]);
        assert!(batchnorm2d(&x, &BatchNormParams::identity(3, 1e-5)).is_err());
    }
}
