//! Single-level 2-D Haar analysis/synthesis and the wavelet-domain
//! convolution branch.
//!
//! Analysis is a stride-2 correlation of every channel with the four 2×2
//! filters; the output stacks the sub-bands as `[LL | LH | HL | HH]`, each
//! block holding `c` channels. Odd spatial sizes are zero-padded on the
//! bottom/right before analysis and cropped after synthesis.

use crate::error::{Error, Result};
use crate::ops::conv::{conv2d, ConvSpec};
use crate::ops::norm::{batchnorm2d, BatchNormParams};
use crate::tensor::Tensor;

pub type Filter = [[f32; 2]; 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HaarFilterBank {
    pub ll: Filter,
    pub lh: Filter,
    pub hl: Filter,
    pub hh: Filter,
}

impl HaarFilterBank {
    pub fn haar() -> Self {
        Self {
            ll: [[0.5, 0.5], [0.5, 0.5]],
            lh: [[0.5, -0.5], [0.5, -0.5]],
            hl: [[0.5, 0.5], [-0.5, -0.5]],
            hh: [[0.5, -0.5], [-0.5, 0.5]],
        }
    }

    /// Sub-band order of the analysis output.
    pub fn filters(&self) -> [Filter; 4] {
        [self.ll, self.lh, self.hl, self.hh]
    }
}

impl Default for HaarFilterBank {
    fn default() -> Self {
        Self::haar()
    }
}

pub fn filter_dot(a: &Filter, b: &Filter) -> f32 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

/// `n×c×h×w` → `n×4c×⌈h/2⌉×⌈w/2⌉`.
pub fn wt2d(x: &Tensor, bank: &HaarFilterBank) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let filters = bank.filters();
    let mut out = Tensor::zeros([n, 4 * c, oh, ow]);
    let at = |plane: &[f32], y: usize, xx: usize| if y < h && xx < w { plane[y * w + xx] } else { 0.0 };
    for b in 0..n {
        for ch in 0..c {
            let input = x.plane(b, ch);
            for (band, f) in filters.iter().enumerate() {
                let dst = out.plane_mut(b, band * c + ch);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (y, xx) = (2 * oy, 2 * ox);
                        dst[oy * ow + ox] = f[0][0] * at(input, y, xx)
                            + f[0][1] * at(input, y, xx + 1)
                            + f[1][0] * at(input, y + 1, xx)
                            + f[1][1] * at(input, y + 1, xx + 1);
                    }
                }
            }
        }
    }
    out
}

/// `n×4c×h'×w'` → `n×c×2h'×2w'`, the transpose of [`wt2d`].
pub fn iwt2d(y: &Tensor, bank: &HaarFilterBank) -> Result<Tensor> {
    let [n, c4, h, w] = y.shape();
    if c4 % 4 != 0 {
        return Err(Error::shape("iwt2d", "channels (multiple of 4)", c4.next_multiple_of(4), c4));
    }
    let c = c4 / 4;
    let filters = bank.filters();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let bands: [&[f32]; 4] = std::array::from_fn(|k| y.plane(b, k * c + ch));
            let dst = out.plane_mut(b, ch);
            for py in 0..h {
                for px in 0..w {
                    let coeffs: [f32; 4] = std::array::from_fn(|k| bands[k][py * w + px]);
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = filters
                                .iter()
                                .zip(&coeffs)
                                .map(|(f, &cf)| f[dy][dx] * cf)
                                .sum();
                            dst[(2 * py + dy) * ow + 2 * px + dx] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Synthesis followed by a crop to `h×w` (undoes analysis padding).
pub fn iwt2d_cropped(y: &Tensor, bank: &HaarFilterBank, h: usize, w: usize) -> Result<Tensor> {
    let full = iwt2d(y, bank)?;
    crop(&full, h, w)
}

pub fn crop(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    if h > x.h() || w > x.w() || h == 0 || w == 0 {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: format!("cannot crop to {h}x{w}"),
        });
    }
    if h == x.h() && w == x.w() {
        return Ok(x.clone());
    }
    let [n, c, _, src_w] = x.shape();
    let mut out = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                dst[y * w..(y + 1) * w].copy_from_slice(&src[y * src_w..y * src_w + w]);
            }
        }
    }
    Ok(out)
}

/// Runs `inner` on the Haar coefficients of `x` and maps the result back to
/// `x`'s spatial size.
pub fn wavelet_domain(
    x: &Tensor,
    bank: &HaarFilterBank,
    inner: impl FnOnce(Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    let coeffs = wt2d(x, bank);
    let shape = coeffs.shape();
    let processed = inner(coeffs)?;
    if processed.shape() != shape {
        return Err(Error::InvalidShape {
            shape: processed.shape().to_vec(),
            reason: format!("wavelet-domain op must preserve {shape:?}"),
        });
    }
    iwt2d_cropped(&processed, bank, x.h(), x.w())
}

/// WT → depthwise 3×3 (pad 1) on the `4c` sub-band channels → BN → IWT.
pub fn wte_branch(x: &Tensor, conv_weight: &Tensor, bn: &BatchNormParams) -> Result<Tensor> {
    let bank = HaarFilterBank::haar();
    wavelet_domain(x, &bank, |coeffs| {
        let spec = ConvSpec::depthwise(3, 1, coeffs.c());
        batchnorm2d(&conv2d(&coeffs, conv_weight, None, spec)?, bn)
    })
}
