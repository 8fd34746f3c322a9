use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrffi::MrffiConfig;
use crate::ssm::ScanOptions;

pub const PRESET_NAMES: [&str; 6] = ["T2", "T4", "S6", "B1", "B2", "B4"];

/// Total spatial reduction of the patch embed.
pub const PATCH_STRIDE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub resolution: usize,
    pub channels: [usize; 3],
    pub depths: [usize; 3],
    pub xi: [f32; 3],
    pub mu: [f32; 3],
    pub local_kernels: [usize; 3],
    pub ffn_ratio: f32,
    pub num_classes: usize,
    /// Training-time only; kept for reference, inert at inference.
    pub drop_path: f32,
    pub n_splits: usize,
    pub expand: usize,
    pub d_state: usize,
    pub euler_b: bool,
    pub d_skip: bool,
    pub wt_enabled: bool,
    /// Local perception and FFN both before and after MRFFI.
    pub symmetric_lp: bool,
}

impl ModelConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (resolution, channels, depths) = match name {
            "T2" => (192, [144, 272, 368], [1, 2, 2]),
            "T4" => (192, [176, 368, 448], [1, 2, 2]),
            "S6" => (224, [192, 384, 448], [1, 2, 2]),
            "B1" => (256, [200, 376, 448], [2, 3, 2]),
            "B2" => (384, [200, 376, 448], [2, 3, 2]),
            "B4" => (512, [200, 376, 448], [2, 3, 2]),
            _ => {
                return Err(Error::UnknownVariant {
                    name: name.to_string(),
                    valid: PRESET_NAMES.join(", "),
                })
            }
        };
        Ok(Self {
            name: name.to_string(),
            resolution,
            channels,
            depths,
            xi: [0.8, 0.7, 0.6],
            mu: [0.2, 0.2, 0.3],
            local_kernels: [7, 5, 3],
            ffn_ratio: 2.0,
            num_classes: 1000,
            drop_path: if name.starts_with('B') { 0.03 } else { 0.0 },
            n_splits: 1,
            expand: 2,
            d_state: 1,
            euler_b: false,
            d_skip: true,
            wt_enabled: true,
            symmetric_lp: true,
        })
    }

    /// Tiny network for fuzzing and fast tests.
    pub fn micro() -> Self {
        Self {
            name: "micro".into(),
            resolution: 32,
            channels: [16, 24, 32],
            depths: [1, 1, 1],
            num_classes: 10,
            ..Self::preset("T2").expect("preset")
        }
    }

    pub fn with_resolution(mut self, resolution: usize) -> Self {
        self.resolution = resolution;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution % PATCH_STRIDE != 0 {
            return Err(Error::Config(format!(
                "resolution {} is not a positive multiple of {PATCH_STRIDE}",
                self.resolution
            )));
        }
        if self.depths.contains(&0) {
            return Err(Error::Config(format!("depths must be >= 1, got {:?}", self.depths)));
        }
        if self.channels.iter().any(|&c| c < 2) {
            return Err(Error::Config(format!("channels must be >= 2, got {:?}", self.channels)));
        }
        if self.local_kernels.iter().any(|&k| k % 2 == 0) {
            return Err(Error::Config(format!("local kernels must be odd, got {:?}", self.local_kernels)));
        }
        if !(self.ffn_ratio > 0.0) || self.num_classes == 0 {
            return Err(Error::Config("ffn_ratio and num_classes must be positive".into()));
        }
        for s in 0..3 {
            self.mrffi(s).validate()?;
        }
        Ok(())
    }

    pub fn scan_options(&self) -> ScanOptions {
        ScanOptions {
            euler_b: self.euler_b,
            d_skip: self.d_skip,
        }
    }

    pub fn mrffi(&self, stage: usize) -> MrffiConfig {
        MrffiConfig {
            xi: self.xi[stage],
            mu: self.mu[stage],
            n_splits: self.n_splits,
            expand: self.expand,
            d_state: self.d_state,
            scan: self.scan_options(),
            wt_enabled: self.wt_enabled,
        }
    }

    pub fn ffn_hidden(&self, c: usize) -> usize {
        ((c as f32 * self.ffn_ratio) as usize).max(1)
    }

    /// `3 → C1/8 → C1/4 → C1/2 → C1`, intermediate widths rounded up to even.
    pub fn patch_embed_channels(&self) -> [usize; 5] {
        let c1 = self.channels[0];
        let even = |d: usize| {
            let c = c1.div_ceil(d);
            c + c % 2
        };
        [3, even(8), even(4), even(2), c1]
    }

    /// Spatial size after the patch embed and after each downsample.
    pub fn stage_sizes(&self) -> [usize; 3] {
        let s1 = self.resolution / PATCH_STRIDE;
        let s2 = s1.div_ceil(2);
        [s1, s2, s2.div_ceil(2)]
    }
}
