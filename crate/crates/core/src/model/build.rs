//! Graph assembly. Every layer is created with zero weights and identity BN;
//! [`crate::init`] fills them afterwards.

use crate::error::Result;
use crate::graph::{conv_bn, Conv2dLayer, Node, Op, Sequence};
use crate::model::config::ModelConfig;
use crate::mrffi::{Mrffi, MrffiConfig};
use crate::ops::act::Activation;
use crate::ops::conv::ConvSpec;
use crate::ops::norm::{BatchNormParams, DEFAULT_BN_EPS};
use crate::ops::LinearParams;
use crate::params::join;

/// Residual depthwise `k×k` conv + BN.
pub fn local_perception(prefix: &str, c: usize, k: usize) -> Node {
    Node::new(prefix, Op::Residual(conv_bn(prefix, c, c, ConvSpec::depthwise(k, 1, c))))
}

/// Residual pointwise expand (with bias) → GELU → pointwise project + BN.
pub fn ffn(prefix: &str, c: usize, hidden: usize) -> Node {
    let mut body = Sequence::new(vec![
        Node::new(join(prefix, "expand"), Op::Conv2d(Conv2dLayer::zeros(c, hidden, ConvSpec::pointwise(), true))),
        Node::new(join(prefix, "act"), Op::Act(Activation::Gelu)),
    ]);
    body.extend(conv_bn(&join(prefix, "project"), hidden, c, ConvSpec::pointwise()));
    Node::new(prefix, Op::Residual(body))
}

pub fn mrffi_node(prefix: &str, c: usize, cfg: &MrffiConfig) -> Result<Node> {
    let inner = Node::new(prefix, Op::Mrffi(Box::new(Mrffi::new(prefix, c, cfg)?)));
    Ok(Node::new(prefix, Op::Residual(Sequence::new(vec![inner]))))
}

/// One MobileMamba block of stage `stage` (0-based), block `index` (1-based).
pub fn block(cfg: &ModelConfig, stage: usize, index: usize) -> Result<Sequence> {
    let prefix = format!("stage{}.block{index}", stage + 1);
    let c = cfg.channels[stage];
    let k = cfg.local_kernels[stage];
    let hidden = cfg.ffn_hidden(c);
    let part = |p: &str| join(&prefix, p);
    let mrffi = mrffi_node(&part("mrffi"), c, &cfg.mrffi(stage))?;
    let nodes = if cfg.symmetric_lp {
        vec![
            local_perception(&part("lp.0"), c, k),
            ffn(&part("ffn.0"), c, hidden),
            mrffi,
            local_perception(&part("lp.1"), c, k),
            ffn(&part("ffn.1"), c, hidden),
        ]
    } else {
        vec![local_perception(&part("lp.0"), c, k), mrffi, ffn(&part("ffn.0"), c, hidden)]
    };
    Ok(Sequence::new(nodes))
}

/// Four stride-2 3×3 conv + BN stages, GELU between them.
pub fn patch_embed(cfg: &ModelConfig) -> Result<Sequence> {
    let ch = cfg.patch_embed_channels();
    let mut seq = Sequence::default();
    for i in 0..4 {
        let prefix = format!("patch_embed.{}", i + 1);
        seq.extend(conv_bn(&prefix, ch[i], ch[i + 1], ConvSpec::new(3, 2, 1, 1)?));
        if i < 3 {
            seq.push(join(&prefix, "act"), Op::Act(Activation::Gelu));
        }
    }
    Ok(seq)
}

/// Between stage `stage` and `stage + 1` (0-based): context at the input
/// width, an inverted-residual stride-2 merge, context at the output width.
pub fn downsample(cfg: &ModelConfig, stage: usize) -> Result<Sequence> {
    let prefix = format!("downsample{}", stage + 1);
    let (ci, co) = (cfg.channels[stage], cfg.channels[stage + 1]);
    let hid = 2 * ci;
    let p = |s: &str| join(&prefix, s);
    let mut seq = Sequence::new(vec![
        local_perception(&p("pre.lp"), ci, 3),
        ffn(&p("pre.ffn"), ci, cfg.ffn_hidden(ci)),
    ]);
    seq.extend(conv_bn(&p("merge.expand"), ci, hid, ConvSpec::pointwise()));
    seq.push(p("merge.act"), Op::Act(Activation::Gelu));
    seq.extend(conv_bn(&p("merge.dw"), hid, hid, ConvSpec::depthwise(3, 2, hid)));
    seq.extend(conv_bn(&p("merge.project"), hid, co, ConvSpec::pointwise()));
    seq.nodes.push(local_perception(&p("post.lp"), co, 3));
    seq.nodes.push(ffn(&p("post.ffn"), co, cfg.ffn_hidden(co)));
    Ok(seq)
}

pub fn head(cfg: &ModelConfig) -> Sequence {
    let c = cfg.channels[2];
    Sequence::new(vec![
        Node::new("head.pool", Op::GlobalPool),
        Node::new("head.bn", Op::BatchNorm(BatchNormParams::identity(c, DEFAULT_BN_EPS))),
        Node::new("head.fc", Op::Linear(LinearParams::zeros(c, cfg.num_classes, true))),
    ])
}

pub fn build_graph(cfg: &ModelConfig) -> Result<Sequence> {
    cfg.validate()?;
    let mut g = patch_embed(cfg)?;
    for stage in 0..3 {
        if stage > 0 {
            g.extend(downsample(cfg, stage - 1)?);
        }
        for b in 1..=cfg.depths[stage] {
            g.extend(block(cfg, stage, b)?);
        }
    }
    g.extend(head(cfg));
    g.output_shape([1, 3, cfg.resolution, cfg.resolution])?;
    Ok(g)
}
