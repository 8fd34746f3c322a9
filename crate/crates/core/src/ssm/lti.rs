//! Time-invariant scalar state-space model: zero-order-hold discretization,
//! the step-by-step recurrence and its unrolled convolution kernel.

use crate::error::{Error, Result};

/// Below this `|Δ·a|` the input coupling uses its second-order Taylor limit.
pub const ZOH_TAYLOR_THRESHOLD: f32 = 1e-4;

/// Continuous-time SSM with a one-dimensional state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LtiSsm {
    a: f32,
    pub b: f32,
    pub c_out: f32,
    delta: f32,
}

impl LtiSsm {
    /// `a = −exp(a_log)`, so the system is stable by construction.
    pub fn from_log(a_log: f32, b: f32, c_out: f32, delta: f32) -> Result<Self> {
        Self::new(-a_log.exp(), b, c_out, delta)
    }

    pub fn new(a: f32, b: f32, c_out: f32, delta: f32) -> Result<Self> {
        if !(a < 0.0) {
            return Err(Error::Config(format!("state matrix must be negative, got a = {a}")));
        }
        if !(delta > 0.0) {
            return Err(Error::Config(format!("timescale must be positive, got delta = {delta}")));
        }
        Ok(Self { a, b, c_out, delta })
    }

    pub fn a(&self) -> f32 {
        self.a
    }

    pub fn delta(&self) -> f32 {
        self.delta
    }
}

/// Exact ZOH: `ā = exp(Δa)`, `b̄ = (exp(Δa) − 1)/a · b`.
#[inline]
pub fn zoh_exact(a: f32, delta: f32, b: f32) -> (f32, f32) {
    let da = delta * a;
    (da.exp(), da.exp_m1() / a * b)
}

/// Small-`Δa` limit `b̄ ≈ Δ·b·(1 + Δa/2)`.
#[inline]
pub fn zoh_taylor(a: f32, delta: f32, b: f32) -> (f32, f32) {
    let da = delta * a;
    (da.exp(), delta * b * (1.0 + 0.5 * da))
}

/// Discretizes one `(a, Δ, b)` triple. With `euler_b` the input coupling is
/// the first-order `Δ·b` instead of the exact ZOH expression.
#[inline]
pub fn zoh(a: f32, delta: f32, b: f32, euler_b: bool) -> (f32, f32) {
    if euler_b {
        ((delta * a).exp(), delta * b)
    } else if (delta * a).abs() > ZOH_TAYLOR_THRESHOLD {
        zoh_exact(a, delta, b)
    } else {
        zoh_taylor(a, delta, b)
    }
}

pub fn discretize_zoh(p: &LtiSsm) -> (f32, f32) {
    zoh(p.a, p.delta, p.b, false)
}

/// Discrete parameters of one time step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanStep {
    pub a_bar: f32,
    pub b_bar: f32,
    pub c: f32,
}

/// `h_t = ā_t·h_{t−1} + b̄_t·x_t`, `y_t = c_t·h_t`, left to right.
pub fn scan_recurrent(steps: &[ScanStep], x: &[f32], h0: f32) -> Result<Vec<f32>> {
    if steps.len() != x.len() {
        return Err(Error::shape("scan_recurrent", "sequence length", steps.len(), x.len()));
    }
    if x.is_empty() {
        return Err(Error::shape("scan_recurrent", "sequence length (>= 1)", 1, 0));
    }
    let mut h = h0;
    Ok(steps
        .iter()
        .zip(x)
        .map(|(s, &xt)| {
            h = s.a_bar * h + s.b_bar * xt;
            s.c * h
        })
        .collect())
}

/// Constant-parameter steps for an LTI system.
pub fn lti_steps(p: &LtiSsm, len: usize) -> Vec<ScanStep> {
    let (a_bar, b_bar) = discretize_zoh(p);
    vec![
        ScanStep {
            a_bar,
            b_bar,
            c: p.c_out
        };
        len
    ]
}

/// `K̄[t] = c·āᵗ·b̄` for `t < len`.
pub fn ssm_kernel(p: &LtiSsm, len: usize) -> Vec<f32> {
    let (a_bar, b_bar) = discretize_zoh(p);
    kernel_from_discrete(a_bar, b_bar, p.c_out, len)
}

pub(crate) fn kernel_from_discrete(a_bar: f32, b_bar: f32, c: f32, len: usize) -> Vec<f32> {
    let mut pow = 1.0f32;
    (0..len)
        .map(|_| {
            let k = c * pow * b_bar;
            pow *= a_bar;
            k
        })
        .collect()
}

/// Causal convolution `y = x ∗ K̄`, equal to the recurrence with `h0 = 0`.
pub fn scan_convolutional(p: &LtiSsm, x: &[f32]) -> Vec<f32> {
    causal_conv(x, &ssm_kernel(p, x.len()))
}

pub(crate) fn causal_conv(x: &[f32], kernel: &[f32]) -> Vec<f32> {
    (0..x.len())
        .map(|t| (0..=t).map(|s| kernel[t - s] * x[s]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_ln2() {
        let p = LtiSsm::new(-1.0, 1.0, 1.0, std::f32::consts::LN_2).unwrap();
        let (a_bar, b_bar) = discretize_zoh(&p);
        assert!((a_bar - 0.5).abs() < 1e-7);
        assert!((b_bar - 0.5).abs() < 1e-7);
    }

    #[test]
    fn vanishing_a_limit() {
        let p = LtiSsm::new(-1e-12, 3.0, 1.0, 0.25).unwrap();
        let (a_bar, b_bar) = discretize_zoh(&p);
        assert_eq!(a_bar, 1.0);
        assert!((b_bar - 0.75).abs() < 1e-7);
    }

    #[test]
    fn vanishing_delta() {
        let p = LtiSsm::new(-1.0, 1.0, 1.0, 1e-9).unwrap();
        let (a_bar, b_bar) = discretize_zoh(&p);
        assert!((a_bar - 1.0).abs() < 1e-7);
        assert!((b_bar - 1e-9).abs() < 1e-15);
    }

    #[test]
    fn construction_enforces_stability() {
        assert!(LtiSsm::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(LtiSsm::new(-1.0, 1.0, 1.0, 0.0).is_err());
        assert!(LtiSsm::from_log(0.0, 1.0, 1.0, 1.0).unwrap().a() == -1.0);
    }

    #[test]
    fn euler_flag_uses_first_order_coupling() {
        let (_, b_bar) = zoh(-1.0, 0.5, 2.0, true);
        assert_eq!(b_bar, 1.0);
    }

    #[test]
    fn branches_agree_at_threshold() {
        for &delta in &[1e-4f32, 1e-3, 1e-2, 0.5, 1.0] {
            let a = -ZOH_TAYLOR_THRESHOLD / delta;
            for &b in &[-2.0f32, 0.3, 1.0, 5.0] {
                let (_, exact) = zoh_exact(a, delta, b);
                let (_, taylor) = zoh_taylor(a, delta, b);
                assert!((exact - taylor).abs() <= 1e-6, "delta={delta} b={b}: {exact} vs {taylor}");
            }
        }
    }

    #[test]
    fn memoryless_recurrence() {
        let steps = vec![ScanStep { a_bar: 0.0, b_bar: 0.5, c: 3.0 }; 4];
        let x = [1.0, -2.0, 4.0, 0.5];
        let y = scan_recurrent(&steps, &x, 10.0).unwrap();
        assert_eq!(y, vec![1.5, -3.0, 6.0, 0.75]);
    }

    #[test]
    fn running_sum() {
        let steps = vec![ScanStep { a_bar: 1.0, b_bar: 1.0, c: 1.0 }; 5];
        let y = scan_recurrent(&steps, &[1.0; 5], 0.0).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn zero_input_zero_output() {
        let steps = vec![ScanStep { a_bar: 0.9, b_bar: 0.3, c: 2.0 }; 6];
        assert!(scan_recurrent(&steps, &[0.0; 6], 0.0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn length_mismatch() {
        let steps = vec![ScanStep { a_bar: 0.9, b_bar: 0.3, c: 2.0 }; 3];
        assert!(scan_recurrent(&steps, &[0.0; 4], 0.0).is_err());
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(kernel_from_discrete(0.5, 0.5, 1.0, 3), vec![0.5, 0.25, 0.125]);
        let p = LtiSsm::new(-2.0, 1.5, 0.7, 0.3).unwrap();
        let (_, b_bar) = discretize_zoh(&p);
        assert_eq!(ssm_kernel(&p, 1), vec![0.7 * b_bar]);
        let p0 = LtiSsm::new(-2.0, 1.5, 0.0, 0.3).unwrap();
        assert!(ssm_kernel(&p0, 8).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_response_is_kernel() {
        let p = LtiSsm::new(-0.7, 1.3, -0.4, 0.2).unwrap();
        let mut x = vec![0.0; 16];
        x[0] = 1.0;
        assert_eq!(scan_convolutional(&p, &x), ssm_kernel(&p, 16));
    }

    #[test]
    fn time_invariance() {
        let p = LtiSsm::new(-0.7, 1.3, -0.4, 0.2).unwrap();
        let x: Vec<f32> = (0..20).map(|t| ((t * 7 % 5) as f32) - 2.0).collect();
        let mut shifted = vec![0.0];
        shifted.extend_from_slice(&x[..19]);
        let y = scan_convolutional(&p, &x);
        let ys = scan_convolutional(&p, &shifted);
        assert_eq!(ys[0], 0.0);
        for t in 1..20 {
            assert!((ys[t] - y[t - 1]).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn stable_discretization(a_log in -6.0f32..4.0, delta in 1e-6f32..10.0) {
            let p = LtiSsm::from_log(a_log, 1.0, 1.0, delta).unwrap();
            let (a_bar, _) = discretize_zoh(&p);
            prop_assert!(a_bar.abs() <= 1.0 && a_bar >= 0.0);
            if (delta * p.a()).abs() > 1e-6 {
                prop_assert!(a_bar < 1.0);
            }
        }

        #[test]
        fn routes_agree(a_log in -3.0f32..1.5, log_delta in -6.0f32..0.5, b in -2.0f32..2.0, c in -2.0f32..2.0,
                        x in prop::collection::vec(-1.0f32..1.0, 1..128)) {
            let p = LtiSsm::from_log(a_log, b, c, log_delta.exp()).unwrap();
            let conv = scan_convolutional(&p, &x);
            let rec = scan_recurrent(&lti_steps(&p, x.len()), &x, 0.0).unwrap();
            let scale = rec.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            let err = conv.iter().zip(&rec).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
            prop_assert!(err <= 1e-4 * scale.max(f32::MIN_POSITIVE), "err {} scale {}", err, scale);
        }
    }
}
