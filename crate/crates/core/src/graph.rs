//! Executable layer graph: a named sequence of ops with nested residual
//! bodies and MRFFI blocks.

use crate::error::{Error, Result};
use crate::mrffi::Mrffi;
use crate::ops::act::Activation;
use crate::ops::conv::{conv2d, conv2d_output_shape, ConvSpec};
use crate::ops::norm::{batchnorm2d_inplace, BatchNormParams};
use crate::ops::shape::global_avg_pool;
use crate::ops::LinearParams;
use crate::params::{join, HasParams, ParamRole, ParamView, ParamViewMut};
use crate::tensor::{Matrix, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dLayer {
    /// `[out, in/groups, k, k]`.
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
    pub spec: ConvSpec,
}

impl Conv2dLayer {
    pub fn zeros(in_c: usize, out_c: usize, spec: ConvSpec, bias: bool) -> Self {
        Self {
            weight: Tensor::zeros([out_c, in_c / spec.groups, spec.kernel, spec.kernel]),
            bias: bias.then(|| vec![0.0; out_c]),
            spec,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.c() * self.spec.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.n()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, self.bias.as_deref(), self.spec)
    }
}

impl HasParams for Conv2dLayer {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamView<'a>)) {
        f(ParamView {
            name: join(prefix, "weight"),
            shape: self.weight.shape().to_vec(),
            role: ParamRole::Weight,
            data: self.weight.data(),
        });
        if let Some(b) = &self.bias {
            f(ParamView {
                name: join(prefix, "bias"),
                shape: vec![b.len()],
                role: ParamRole::Bias,
                data: b,
            });
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamViewMut<'_>)) {
        f(ParamViewMut {
            name: join(prefix, "weight"),
            shape: self.weight.shape().to_vec(),
            role: ParamRole::Weight,
            data: self.weight.data_vec_mut(),
        });
        if let Some(b) = &mut self.bias {
            f(ParamViewMut {
                name: join(prefix, "bias"),
                shape: vec![b.len()],
                role: ParamRole::Bias,
                data: b,
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Conv2d(Conv2dLayer),
    BatchNorm(BatchNormParams),
    Act(Activation),
    /// `x + body(x)`.
    Residual(Sequence),
    Mrffi(Box<Mrffi>),
    GlobalPool,
    /// Applied to `n×c×1×1` maps.
    Linear(LinearParams),
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Conv2d(_) => "conv2d",
            Op::BatchNorm(_) => "batchnorm",
            Op::Act(a) => a.name(),
            Op::Residual(_) => "residual",
            Op::Mrffi(_) => "mrffi",
            Op::GlobalPool => "global_avg_pool",
            Op::Linear(_) => "linear",
        }
    }

    pub fn output_shape(&self, s: [usize; 4]) -> Result<[usize; 4]> {
        match self {
            Op::Conv2d(c) => conv2d_output_shape(s, c.weight.shape(), &c.spec),
            Op::BatchNorm(bn) => {
                if bn.channels() != s[1] {
                    return Err(Error::shape("batchnorm", "channels", bn.channels(), s[1]));
                }
                Ok(s)
            }
            Op::Act(_) => Ok(s),
            Op::Residual(body) => {
                let out = body.output_shape(s)?;
                if out != s {
                    return Err(Error::InvalidShape {
                        shape: out.to_vec(),
                        reason: format!("residual body must preserve {s:?}"),
                    });
                }
                Ok(s)
            }
            Op::Mrffi(m) => {
                if m.channels() != s[1] {
                    return Err(Error::shape("mrffi", "channels", m.channels(), s[1]));
                }
                Ok(s)
            }
            Op::GlobalPool => Ok([s[0], s[1], 1, 1]),
            Op::Linear(l) => {
                if s[2] != 1 || s[3] != 1 {
                    return Err(Error::InvalidShape {
                        shape: s.to_vec(),
                        reason: "linear expects pooled n×c×1×1 input".into(),
                    });
                }
                if l.in_features != s[1] {
                    return Err(Error::shape("linear", "in features", l.in_features, s[1]));
                }
                Ok([s[0], l.out_features, 1, 1])
            }
        }
    }

    pub fn forward(&self, x: Tensor) -> Result<Tensor> {
        match self {
            Op::Conv2d(c) => c.forward(&x),
            Op::BatchNorm(bn) => {
                let mut x = x;
                batchnorm2d_inplace(&mut x, bn)?;
                Ok(x)
            }
            Op::Act(a) => {
                let mut x = x;
                a.apply_inplace(&mut x);
                Ok(x)
            }
            Op::Residual(body) => {
                let mut y = body.forward(x.clone())?;
                y.add_assign(&x)?;
                Ok(y)
            }
            Op::Mrffi(m) => m.forward(&x),
            Op::GlobalPool => Ok(global_avg_pool(&x)),
            Op::Linear(l) => {
                self.output_shape(x.shape())?;
                let m = Matrix::new(x.n(), x.c(), x.into_data())?;
                let y = l.forward(&m)?;
                Tensor::new([y.rows(), y.cols(), 1, 1], y.into_data())
            }
        }
    }

    /// Leaf layers, recursing into composite ops.
    pub fn layer_count(&self) -> usize {
        match self {
            Op::Residual(body) => body.layer_count(),
            Op::Mrffi(m) => m.layer_count(),
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    /// Full dotted path; also the parameter-name prefix.
    pub name: String,
    pub op: Op,
}

impl Node {
    pub fn new(name: impl Into<String>, op: Op) -> Self {
        Self { name: name.into(), op }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sequence {
    pub nodes: Vec<Node>,
}

impl Sequence {
    pub fn new(nodes: Vec<Node>) -> Self {
        Self { nodes }
    }

    pub fn push(&mut self, name: impl Into<String>, op: Op) {
        self.nodes.push(Node::new(name, op));
    }

    pub fn extend(&mut self, other: Sequence) {
        self.nodes.extend(other.nodes);
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        self.nodes.iter().try_fold(input, |s, node| {
            node.op.output_shape(s).map_err(|e| Error::InvalidShape {
                shape: s.to_vec(),
                reason: format!("at {}: {e}", node.name),
            })
        })
    }

    pub fn forward(&self, x: Tensor) -> Result<Tensor> {
        self.nodes.iter().try_fold(x, |x, node| node.op.forward(x))
    }

    pub fn layer_count(&self) -> usize {
        self.nodes.iter().map(|n| n.op.layer_count()).sum()
    }

    /// Like [`Sequence::forward`], but every BN first takes its running
    /// statistics from the activations reaching it.
    pub fn calibrate(&mut self, x: Tensor) -> Result<Tensor> {
        let mut x = x;
        for node in &mut self.nodes {
            x = match &mut node.op {
                Op::BatchNorm(bn) => {
                    bn.observe(&x)?;
                    node.op.forward(x)?
                }
                Op::Residual(body) => {
                    let mut y = body.calibrate(x.clone())?;
                    y.add_assign(&x)?;
                    y
                }
                Op::Mrffi(m) => m.calibrate(&x)?,
                op => op.forward(x)?,
            };
        }
        Ok(x)
    }

    /// Every node, depth first, including those inside residual bodies and
    /// MRFFI branches.
    pub fn visit_nodes<'a>(&'a self, f: &mut dyn FnMut(&'a Node)) {
        for node in &self.nodes {
            f(node);
            match &node.op {
                Op::Residual(body) => body.visit_nodes(f),
                Op::Mrffi(m) => m.visit_sequences(&mut |s| s.visit_nodes(f)),
                _ => {}
            }
        }
    }

    pub fn count_ops(&self, pred: impl Fn(&Op) -> bool) -> usize {
        let mut n = 0;
        self.visit_nodes(&mut |node| n += pred(&node.op) as usize);
        n
    }
}

/// Node names are absolute, so the prefix argument is ignored.
impl HasParams for Sequence {
    fn visit_params<'a>(&'a self, _prefix: &str, f: &mut dyn FnMut(ParamView<'a>)) {
        for node in &self.nodes {
            match &node.op {
                Op::Conv2d(c) => c.visit_params(&node.name, f),
                Op::BatchNorm(bn) => bn.visit_params(&node.name, f),
                Op::Linear(l) => l.visit_params(&node.name, f),
                Op::Residual(body) => body.visit_params("", f),
                Op::Mrffi(m) => m.visit_params(&node.name, f),
                Op::Act(_) | Op::GlobalPool => {}
            }
        }
    }

    fn visit_params_mut(&mut self, _prefix: &str, f: &mut dyn FnMut(ParamViewMut<'_>)) {
        for node in &mut self.nodes {
            match &mut node.op {
                Op::Conv2d(c) => c.visit_params_mut(&node.name, f),
                Op::BatchNorm(bn) => bn.visit_params_mut(&node.name, f),
                Op::Linear(l) => l.visit_params_mut(&node.name, f),
                Op::Residual(body) => body.visit_params_mut("", f),
                Op::Mrffi(m) => m.visit_params_mut(&node.name, f),
                Op::Act(_) | Op::GlobalPool => {}
            }
        }
    }
}

/// `prefix.conv` followed by `prefix.bn`.
pub fn conv_bn(prefix: &str, in_c: usize, out_c: usize, spec: ConvSpec) -> Sequence {
    Sequence::new(vec![
        Node::new(join(prefix, "conv"), Op::Conv2d(Conv2dLayer::zeros(in_c, out_c, spec, false))),
        Node::new(join(prefix, "bn"), Op::BatchNorm(BatchNormParams::identity(out_c, crate::ops::norm::DEFAULT_BN_EPS))),
    ])
}
