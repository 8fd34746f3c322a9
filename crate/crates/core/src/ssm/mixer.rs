//! Gated bidirectional Mamba mixer over the flattened spatial tokens.

use crate::error::{Error, Result};
use crate::ops::act::silu_scalar;
use crate::ops::conv::conv1d_depthwise_same;
use crate::ops::LinearParams;
use crate::params::{join, HasParams, ParamRole, ParamView, ParamViewMut};
use crate::ssm::selective::{bidirectional_channel_major, ScanOptions, SelectiveSsmParams};
use crate::tensor::Tensor;

pub const MIXER_CONV_KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct MambaMixer {
    pub channels: usize,
    pub d_inner: usize,
    pub d_state: usize,
    /// `channels → 2·d_inner`: main half then gate half.
    pub in_proj: LinearParams,
    /// `d_inner × 3` depthwise taps.
    pub conv1d_weight: Vec<f32>,
    pub conv1d_bias: Vec<f32>,
    pub forward_ssm: SelectiveSsmParams,
    pub backward_ssm: SelectiveSsmParams,
    /// `d_inner → channels`.
    pub out_proj: LinearParams,
    pub opts: ScanOptions,
}

impl MambaMixer {
    pub fn zeros(channels: usize, expand: usize, d_state: usize, opts: ScanOptions) -> Self {
        let d_inner = expand * channels;
        Self {
            channels,
            d_inner,
            d_state,
            in_proj: LinearParams::zeros(channels, 2 * d_inner, true),
            conv1d_weight: vec![0.0; d_inner * MIXER_CONV_KERNEL],
            conv1d_bias: vec![0.0; d_inner],
            forward_ssm: SelectiveSsmParams::zeros(d_inner, d_state),
            backward_ssm: SelectiveSsmParams::zeros(d_inner, d_state),
            out_proj: LinearParams::zeros(d_inner, channels, true),
            opts,
        }
    }

    /// Pre-scan activations for one item: `u = SiLU(conv1d(main))` and
    /// `g = SiLU(gate)`, both `d_inner × len`.
    pub(crate) fn branch_inputs(&self, x: &[f32], len: usize) -> Result<(Vec<f32>, Vec<f32>)> {
        let z = self.in_proj.forward_channel_major(x, len);
        let (main, gate) = z.split_at(self.d_inner * len);
        let mut u = conv1d_depthwise_same(
            main,
            self.d_inner,
            len,
            &self.conv1d_weight,
            MIXER_CONV_KERNEL,
            Some(&self.conv1d_bias),
        )?;
        u.iter_mut().for_each(|v| *v = silu_scalar(*v));
        let g = gate.iter().map(|&v| silu_scalar(v)).collect();
        Ok((u, g))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.c() != self.channels {
            return Err(Error::shape("mamba_mixer", "channels", self.channels, x.c()));
        }
        let len = x.plane_len();
        let mut out = Tensor::zeros(x.shape());
        for n in 0..x.n() {
            let (u, g) = self.branch_inputs(x.item(n), len)?;
            let mut y = bidirectional_channel_major(&u, len, &self.forward_ssm, &self.backward_ssm, self.opts);
            y.iter_mut().zip(&g).for_each(|(a, b)| *a *= b);
            let o = self.out_proj.forward_channel_major(&y, len);
            out.item_mut(n).copy_from_slice(&o);
        }
        Ok(out)
    }
}

pub fn mamba_mixer(x: &Tensor, mixer: &MambaMixer) -> Result<Tensor> {
    mixer.forward(x)
}

impl HasParams for MambaMixer {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamView<'a>)) {
        self.in_proj.visit_params(&join(prefix, "in_proj"), f);
        f(ParamView {
            name: join(prefix, "conv1d.weight"),
            shape: vec![self.d_inner, MIXER_CONV_KERNEL],
            role: ParamRole::Weight,
            data: &self.conv1d_weight,
        });
        f(ParamView {
            name: join(prefix, "conv1d.bias"),
            shape: vec![self.d_inner],
            role: ParamRole::Bias,
            data: &self.conv1d_bias,
        });
        self.forward_ssm.visit_params(&join(prefix, "fwd"), f);
        self.backward_ssm.visit_params(&join(prefix, "bwd"), f);
        self.out_proj.visit_params(&join(prefix, "out_proj"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamViewMut<'_>)) {
        self.in_proj.visit_params_mut(&join(prefix, "in_proj"), f);
        f(ParamViewMut {
            name: join(prefix, "conv1d.weight"),
            shape: vec![self.d_inner, MIXER_CONV_KERNEL],
            role: ParamRole::Weight,
            data: &mut self.conv1d_weight,
        });
        f(ParamViewMut {
            name: join(prefix, "conv1d.bias"),
            shape: vec![self.d_inner],
            role: ParamRole::Bias,
            data: &mut self.conv1d_bias,
        });
        self.forward_ssm.visit_params_mut(&join(prefix, "fwd"), f);
        self.backward_ssm.visit_params_mut(&join(prefix, "bwd"), f);
        self.out_proj.visit_params_mut(&join(prefix, "out_proj"), f);
    }
}
