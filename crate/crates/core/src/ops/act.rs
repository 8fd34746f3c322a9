use crate::tensor::Tensor;

const GELU_SQRT_2_OVER_PI: f32 = 0.797_884_560_8;
const GELU_CUBIC: f32 = 0.044715;

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu_scalar(x: f32) -> f32 {
    x * sigmoid(x)
}

/// tanh approximation, evaluated as `x·σ(2z)` since `(1 + tanh z)/2 = σ(2z)`.
#[inline]
pub fn gelu_scalar(x: f32) -> f32 {
    let z = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    x / (1.0 + (-2.0 * z).exp())
}

/// `ln(1 + eˣ)` without overflow for large `x`.
#[inline]
pub fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(silu_scalar)
}

pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Gelu,
}

impl Activation {
    #[inline]
    pub fn apply_scalar(self, x: f32) -> f32 {
        match self {
            Activation::Silu => silu_scalar(x),
            Activation::Gelu => gelu_scalar(x),
        }
    }

    pub fn apply_inplace(self, x: &mut Tensor) {
        match self {
            Activation::Silu => x.map_inplace(silu_scalar),
            Activation::Gelu => x.map_inplace(gelu_scalar),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Gelu => "gelu",
        }
    }
}
