//! Inference-time folding of batch norm into the preceding conv or linear
//! layer.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Node, Op, Sequence};
use crate::model::Model;
use crate::ops::norm::BatchNormParams;
use crate::tensor::Tensor;

pub const FUSION_TOLERANCE: f32 = 1e-4;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FusionReport {
    pub layers_before: usize,
    pub layers_after: usize,
    /// `(producer, bn)` node names.
    pub fused_pairs: Vec<(String, String)>,
    /// BN layers with no foldable producer, left in place.
    pub unfused_bn: Vec<String>,
    pub max_abs_divergence: f32,
}

impl FusionReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "layers_before: {}\nlayers_after: {}\nfused_pairs: {}\nunfused_bn: {}\nmax_abs_divergence: {:e}\n",
            self.layers_before,
            self.layers_after,
            self.fused_pairs.len(),
            self.unfused_bn.len(),
            self.max_abs_divergence
        );
        for (p, bn) in &self.fused_pairs {
            s += &format!("  fused {p} <- {bn}\n");
        }
        for bn in &self.unfused_bn {
            s += &format!("  kept {bn}\n");
        }
        s
    }
}

/// `w'_c = w_c·s_c`, `b'_c = (b_c − mean_c)·s_c + beta_c` with
/// `s_c = gamma_c / sqrt(var_c + eps)`. `weight` holds one contiguous block
/// per output channel.
pub fn fold_bn(weight: &[f32], bias: Option<&[f32]>, bn: &BatchNormParams) -> Result<(Vec<f32>, Vec<f32>)> {
    bn.validate()?;
    let out = bn.channels();
    if out == 0 || weight.len() % out != 0 {
        return Err(Error::shape("fold_bn", "weight length (multiple of channels)", out, weight.len()));
    }
    if let Some(b) = bias {
        if b.len() != out {
            return Err(Error::shape("fold_bn", "bias length", out, b.len()));
        }
    }
    let per = weight.len() / out;
    let mut w = weight.to_vec();
    let mut b = vec![0.0; out];
    for c in 0..out {
        let s = bn.gamma[c] / (bn.running_var[c] + bn.eps).sqrt();
        w[c * per..(c + 1) * per].iter_mut().for_each(|v| *v *= s);
        let b0 = bias.map_or(0.0, |b| b[c]);
        b[c] = (b0 - bn.running_mean[c]) * s + bn.beta[c];
    }
    Ok((w, b))
}

fn producer_channels(op: &Op) -> Option<usize> {
    match op {
        Op::Conv2d(c) => Some(c.out_channels()),
        Op::Linear(l) => Some(l.out_features),
        _ => None,
    }
}

fn fold_into(producer: &mut Op, bn: &BatchNormParams) -> Result<()> {
    match producer {
        Op::Conv2d(c) => {
            let (w, b) = fold_bn(c.weight.data(), c.bias.as_deref(), bn)?;
            c.weight = Tensor::new(c.weight.shape(), w)?;
            c.bias = Some(b);
        }
        Op::Linear(l) => {
            let (w, b) = fold_bn(&l.weight, l.bias.as_deref(), bn)?;
            l.weight = w;
            l.bias = Some(b);
        }
        _ => unreachable!("not a producer"),
    }
    Ok(())
}

fn fuse_sequence(seq: &Sequence, report: &mut FusionReport) -> Result<Sequence> {
    let mut out: Vec<Node> = Vec::with_capacity(seq.nodes.len());
    for node in &seq.nodes {
        let op = match &node.op {
            Op::BatchNorm(bn) => {
                let foldable = out
                    .last()
                    .and_then(|prev| producer_channels(&prev.op))
                    .is_some_and(|c| c == bn.channels());
                if foldable {
                    let prev = out.last_mut().expect("producer");
                    fold_into(&mut prev.op, bn)?;
                    report.fused_pairs.push((prev.name.clone(), node.name.clone()));
                    continue;
                }
                report.unfused_bn.push(node.name.clone());
                node.op.clone()
            }
            Op::Residual(body) => Op::Residual(fuse_sequence(body, report)?),
            Op::Mrffi(m) => {
                let mut m = m.clone();
                let mut err = None;
                m.visit_sequences_mut(&mut |s| match fuse_sequence(s, report) {
                    Ok(f) => *s = f,
                    Err(e) => err = Some(e),
                });
                if let Some(e) = err {
                    return Err(e);
                }
                Op::Mrffi(m)
            }
            other => other.clone(),
        };
        out.push(Node::new(node.name.clone(), op));
    }
    Ok(Sequence::new(out))
}

/// Structural pass only; `max_abs_divergence` is left at zero.
pub fn fuse_graph(g: &Sequence) -> Result<(Sequence, FusionReport)> {
    let mut report = FusionReport {
        layers_before: g.layer_count(),
        ..Default::default()
    };
    let fused = fuse_sequence(g, &mut report)?;
    report.layers_after = fused.layer_count();
    Ok((fused, report))
}

/// Fuses and measures divergence on `probe`; fails if it exceeds
/// [`FUSION_TOLERANCE`].
pub fn fuse_model(model: &Model, probe: &Tensor) -> Result<(Model, FusionReport)> {
    let (graph, mut report) = fuse_graph(&model.graph)?;
    let fused = Model {
        config: model.config.clone(),
        graph,
    };
    let a = model.forward(probe)?;
    let b = fused.forward(probe)?;
    report.max_abs_divergence = a.max_abs_diff(&b);
    if !(report.max_abs_divergence <= FUSION_TOLERANCE) {
        return Err(Error::FusionDivergence {
            divergence: report.max_abs_divergence,
            tolerance: FUSION_TOLERANCE,
        });
    }
    Ok((fused, report))
}
