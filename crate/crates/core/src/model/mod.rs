//! MobileMamba variants: configuration, graph assembly and inference.

pub mod build;
pub mod config;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Node, Op, Sequence};
use crate::init::{init_params, InitOptions};
use crate::params::{HasParams, ParamKind, ParamView, ParamViewMut};
use crate::tensor::{Matrix, Tensor};

pub use build::build_graph;
pub use config::{ModelConfig, PRESET_NAMES};

/// Per-channel RGB statistics applied by [`normalize_image`].
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Maps `[0, 1]` RGB to the normalized range the network expects.
pub fn normalize_image(x: &Tensor) -> Result<Tensor> {
    if x.c() != 3 {
        return Err(Error::shape("normalize_image", "channels", 3, x.c()));
    }
    let mut out = x.clone();
    for n in 0..x.n() {
        for c in 0..3 {
            let (m, s) = (IMAGENET_MEAN[c], IMAGENET_STD[c]);
            out.plane_mut(n, c).iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }
    Ok(out)
}

const CALIBRATION_SALT: u64 = 0xca11_b7a7e;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub graph: Sequence,
}

impl Model {
    /// Zero weights, identity BN.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let graph = build_graph(&config)?;
        Ok(Self { config, graph })
    }

    /// Seeded weights; with `init.calibration_batch > 0`, BN running
    /// statistics are then set from a seeded random batch.
    pub fn build(config: ModelConfig, init: &InitOptions) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        init_params(&mut m, init);
        if init.calibration_batch > 0 {
            let x = m.random_input(init.calibration_batch, init.seed ^ CALIBRATION_SALT)?;
            m.graph.calibrate(x)?;
        }
        Ok(m)
    }

    /// Seeded uniform `[0, 1)` images, already normalized.
    pub fn random_input(&self, batch: usize, seed: u64) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(self.input_shape(batch), |_| rng.gen::<f32>());
        normalize_image(&x)
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        Self::build(ModelConfig::preset(name)?, &InitOptions::new(seed))
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, 3, self.config.resolution, self.config.resolution]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = self.input_shape(x.n());
        const DIMS: [&str; 4] = ["n", "c", "h", "w"];
        for i in 1..4 {
            if x.shape()[i] != want[i] {
                return Err(Error::shape("model input", DIMS[i], want[i], x.shape()[i]));
            }
        }
        Ok(())
    }

    /// Logits `n × num_classes`. Batch items run in parallel on the current
    /// rayon pool; each item's result does not depend on the thread count.
    pub fn forward(&self, x: &Tensor) -> Result<Matrix> {
        self.check_input(x)?;
        let rows = if x.n() == 1 {
            vec![self.graph.forward(x.clone())?.into_data()]
        } else {
            let item_shape = self.input_shape(1);
            (0..x.n())
                .into_par_iter()
                .map(|i| {
                    let item = Tensor::new(item_shape, x.item(i).to_vec())?;
                    Ok(self.graph.forward(item)?.into_data())
                })
                .collect::<Result<Vec<_>>>()?
        };
        Matrix::new(x.n(), self.config.num_classes, rows.concat())
    }

    /// Runs the top-level nodes one by one, reporting each output.
    pub fn forward_traced(&self, x: &Tensor, mut tap: impl FnMut(&Node, &Tensor)) -> Result<Tensor> {
        self.check_input(x)?;
        let mut t = x.clone();
        for node in &self.graph.nodes {
            t = node.op.forward(t)?;
            tap(node, &t);
        }
        Ok(t)
    }

    /// Output shape of the last top-level node of each group
    /// (`patch_embed`, `stage1`, `downsample1`, ..., `head`).
    pub fn group_shapes(&self) -> Result<Vec<(String, [usize; 4])>> {
        let mut s = self.input_shape(1);
        let mut out: Vec<(String, [usize; 4])> = Vec::new();
        for node in &self.graph.nodes {
            s = node.op.output_shape(s)?;
            let group = group_of(&node.name).to_string();
            match out.last_mut() {
                Some((g, shape)) if *g == group => *shape = s,
                _ => out.push((group, s)),
            }
        }
        Ok(out)
    }

    pub fn layer_count(&self) -> usize {
        self.graph.layer_count()
    }

    pub fn batchnorm_count(&self) -> usize {
        self.graph.count_ops(|op| matches!(op, Op::BatchNorm(_)))
    }

    pub fn trainable_params(&self) -> usize {
        self.param_count(ParamKind::Trainable)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params("", &mut |p| names.push(p.name));
        names
    }
}

/// First dotted component of a layer name.
pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

impl HasParams for Model {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(ParamView<'a>)) {
        self.graph.visit_params(prefix, f)
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamViewMut<'_>)) {
        self.graph.visit_params_mut(prefix, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Op;
    use crate::init::InitOptions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn random_input(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn micro_forward_shape_and_determinism() {
        let m = Model::build(ModelConfig::micro(), &InitOptions::stress(1)).unwrap();
        let x = random_input(m.input_shape(1), 2);
        let a = m.forward(&x).unwrap();
        assert_eq!((a.rows(), a.cols()), (1, 10));
        assert_eq!(a, m.forward(&x).unwrap());
        let mut twice = x.data().to_vec();
        twice.extend_from_slice(x.data());
        let b = m.forward(&Tensor::new(m.input_shape(2), twice).unwrap()).unwrap();
        assert_eq!(b.row(0), b.row(1));
        assert_eq!(b.row(0), a.row(0));
    }

    #[test]
    fn calibrated_build_keeps_logits_bounded() {
        for name in ["T2", "S6"] {
            let m = Model::preset(name, 3).unwrap();
            let y = m.forward(&m.random_input(2, 11).unwrap()).unwrap();
            let rms = (y.data().iter().map(|v| v * v).sum::<f32>() / y.data().len() as f32).sqrt();
            assert!(rms.is_finite() && rms > 0.1 && rms < 20.0, "{name}: {rms}");
        }
        let raw = Model::build(ModelConfig::micro(), &InitOptions { calibration_batch: 0, ..InitOptions::new(3) }).unwrap();
        assert!(raw.graph.count_ops(|op| matches!(op, Op::BatchNorm(b) if b.running_var.iter().all(|&v| v == 1.0))) > 0);
    }

    #[test]
    fn rejects_wrong_resolution() {
        let m = Model::zeros(ModelConfig::micro()).unwrap();
        assert!(m.forward(&Tensor::zeros([1, 3, 48, 48])).is_err());
        assert!(m.forward(&Tensor::zeros([1, 1, 32, 32])).is_err());
    }

    #[test]
    fn t2_group_shapes() {
        let m = Model::zeros(ModelConfig::preset("T2").unwrap()).unwrap();
        let shapes = m.group_shapes().unwrap();
        let get = |g: &str| shapes.iter().find(|(n, _)| n == g).unwrap().1;
        assert_eq!(get("patch_embed"), [1, 144, 12, 12]);
        assert_eq!(get("stage1"), [1, 144, 12, 12]);
        assert_eq!(get("stage2"), [1, 272, 6, 6]);
        assert_eq!(get("stage3"), [1, 368, 3, 3]);
        assert_eq!(get("head"), [1, 1000, 1, 1]);
    }

    #[test]
    fn patch_embed_shapes() {
        let s6 = Model::zeros(ModelConfig::preset("S6").unwrap()).unwrap();
        assert_eq!(s6.group_shapes().unwrap()[0], ("patch_embed".into(), [1, 192, 14, 14]));
        assert!(Model::zeros(ModelConfig::preset("S6").unwrap().with_resolution(100)).is_err());
    }

    #[test]
    fn canonical_names_are_unique() {
        let m = Model::zeros(ModelConfig::preset("B1").unwrap()).unwrap();
        let names = m.param_names();
        let set: HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        for want in [
            "patch_embed.1.conv.weight",
            "stage1.block2.lp.0.conv.weight",
            "stage2.block3.mrffi.mamba.fwd.dt_proj.bias",
            "stage3.block1.mrffi.wt.conv.weight",
            "stage3.block2.mrffi.mk.split1.bn.gamma",
            "stage1.block1.ffn.1.project.bn.running_var",
            "downsample2.merge.dw.conv.weight",
            "head.fc.weight",
        ] {
            assert!(set.contains(&want.to_string()), "{want}");
        }
    }

    #[test]
    fn zero_branches_leave_block_identity() {
        // no identity channels: ξ + μ = 1 with exact splits
        let mut cfg = ModelConfig::micro();
        cfg.xi = [0.5; 3];
        cfg.mu = [0.5; 3];
        let block = build::block(&cfg, 0, 1).unwrap();
        let x = random_input([1, 16, 2, 2], 3);
        assert_eq!(block.forward(x.clone()).unwrap(), x);
    }

    #[test]
    fn zero_branches_double_identity_channels() {
        let cfg = ModelConfig::micro();
        let block = build::block(&cfg, 0, 1).unwrap();
        let Op::Residual(body) = &block.nodes[2].op else { panic!() };
        let Op::Mrffi(m) = &body.nodes[0].op else { panic!() };
        let x = random_input([1, 16, 2, 2], 4);
        let y = block.forward(x.clone()).unwrap();
        let off = (16 - m.c_identity) * 4;
        assert_eq!(&y.data()[..off], &x.data()[..off]);
        for (a, b) in y.data()[off..].iter().zip(&x.data()[off..]) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn normalization_constants() {
        let x = Tensor::from_fn([1, 3, 1, 1], |[_, c, _, _]| IMAGENET_MEAN[c]);
        assert!(normalize_image(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
