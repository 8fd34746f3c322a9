use crate::error::{Error, Result};
use crate::ops::gemm::{gemm, gemm_bt};
use crate::params::{join, HasParams, ParamRole, ParamView, ParamViewMut};
use crate::tensor::Matrix;

/// Weights of a dense map `in_features → out_features`; `weight` is
/// `out × in` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl LinearParams {
    pub fn zeros(in_features: usize, out_features: usize, bias: bool) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: bias.then(|| vec![0.0; out_features]),
        }
    }

    pub fn weight_matrix(&self) -> Matrix {
        Matrix::new(self.out_features, self.in_features, self.weight.clone()).expect("linear weight shape")
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        linear(x, &self.weight_matrix(), self.bias.as_deref())
    }

    /// `in × len` → `out × len`.
    pub fn forward_channel_major(&self, x: &[f32], len: usize) -> Vec<f32> {
        linear_channel_major(x, len, &self.weight, self.out_features, self.in_features, self.bias.as_deref())
    }
}

impl HasParams for LinearParams {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamView<'a>)) {
        f(ParamView {
            name: join(prefix, "weight"),
            shape: vec![self.out_features, self.in_features],
            role: ParamRole::Weight,
            data: &self.weight,
        });
        if let Some(b) = &self.bias {
            f(ParamView {
                name: join(prefix, "bias"),
                shape: vec![self.out_features],
                role: ParamRole::Bias,
                data: b,
            });
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamViewMut<'_>)) {
        f(ParamViewMut {
            name: join(prefix, "weight"),
            shape: vec![self.out_features, self.in_features],
            role: ParamRole::Weight,
            data: &mut self.weight,
        });
        if let Some(b) = &mut self.bias {
            f(ParamViewMut {
                name: join(prefix, "bias"),
                shape: vec![self.out_features],
                role: ParamRole::Bias,
                data: b,
            });
        }
    }
}

/// `y = x·Wᵀ + b` for token-major `x` (`tokens × in`) and `W` (`out × in`).
pub fn linear(x: &Matrix, weight: &Matrix, bias: Option<&[f32]>) -> Result<Matrix> {
    let (tokens, inf) = (x.rows(), x.cols());
    let out = weight.rows();
    if weight.cols() != inf {
        return Err(Error::shape("linear", "in_features", weight.cols(), inf));
    }
    if let Some(b) = bias {
        if b.len() != out {
            return Err(Error::shape("linear", "bias length", out, b.len()));
        }
    }
    let mut y = Matrix::zeros(tokens, out);
    if let Some(b) = bias {
        for row in y.data_mut().chunks_mut(out) {
            row.copy_from_slice(b);
        }
    }
    gemm_bt(tokens, inf, out, x.data(), weight.data(), y.data_mut(), true);
    Ok(y)
}

/// Same map applied to a channel-major buffer (`in × len`), producing
/// `out × len`. This is the layout the NCHW engine works in.
pub(crate) fn linear_channel_major(
    x: &[f32],
    len: usize,
    weight: &[f32],
    out: usize,
    inf: usize,
    bias: Option<&[f32]>,
) -> Vec<f32> {
    debug_assert_eq!(x.len(), inf * len);
    debug_assert_eq!(weight.len(), out * inf);
    let mut y = vec![0.0f32; out * len];
    if let Some(b) = bias {
        for (row, &bv) in y.chunks_mut(len).zip(b) {
            row.fill(bv);
        }
    }
    gemm(out, inf, len, weight, x, &mut y, true);
    y
}
