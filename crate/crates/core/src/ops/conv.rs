use crate::error::{Error, Result};
use crate::ops::gemm::gemm;
use crate::tensor::Tensor;

/// Square-kernel 2-D convolution geometry. Cross-correlation, zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(kernel: usize, stride: usize, padding: usize, groups: usize) -> Result<Self> {
        if kernel == 0 || kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel must be odd and >= 1, got {kernel}")));
        }
        if stride == 0 || groups == 0 {
            return Err(Error::Config("stride and groups must be >= 1".into()));
        }
        Ok(Self {
            kernel,
            stride,
            padding,
            groups,
        })
    }

    /// `k×k`, stride 1, padding `k/2`, dense.
    pub fn same(kernel: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }

    pub fn pointwise() -> Self {
        Self::same(1)
    }

    pub fn depthwise(kernel: usize, stride: usize, channels: usize) -> Self {
        Self {
            kernel,
            stride,
            padding: kernel / 2,
            groups: channels,
        }
    }

    pub fn output_dim(&self, input: usize) -> Result<usize> {
        let span = input as isize + 2 * self.padding as isize - self.kernel as isize;
        let out = span.div_euclid(self.stride as isize) + 1;
        if span < 0 || out < 1 {
            return Err(Error::EmptyOutput {
                op: "conv2d",
                dim: "spatial",
                size: if span < 0 { span } else { out },
            });
        }
        Ok(out as usize)
    }

    pub fn is_depthwise(&self, in_channels: usize, out_channels: usize) -> bool {
        self.groups == in_channels && self.groups == out_channels
    }
}

/// Validates `weight` (`[out_c, in_c/groups, k, k]`) against `x` and returns
/// the output shape.
pub fn conv2d_output_shape(x_shape: [usize; 4], weight_shape: [usize; 4], spec: &ConvSpec) -> Result<[usize; 4]> {
    let [n, in_c, h, w] = x_shape;
    let [out_c, w_in, kh, kw] = weight_shape;
    if kh != spec.kernel {
        return Err(Error::shape("conv2d", "kernel height", spec.kernel, kh));
    }
    if kw != spec.kernel {
        return Err(Error::shape("conv2d", "kernel width", spec.kernel, kw));
    }
    if in_c % spec.groups != 0 {
        return Err(Error::shape("conv2d", "input channels (multiple of groups)", spec.groups, in_c));
    }
    if out_c % spec.groups != 0 {
        return Err(Error::shape("conv2d", "output channels (multiple of groups)", spec.groups, out_c));
    }
    if w_in != in_c / spec.groups {
        return Err(Error::shape("conv2d", "weight input channels", in_c / spec.groups, w_in));
    }
    Ok([n, out_c, spec.output_dim(h)?, spec.output_dim(w)?])
}

pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&[f32]>, spec: ConvSpec) -> Result<Tensor> {
    let out_shape = conv2d_output_shape(x.shape(), weight.shape(), &spec)?;
    let out_c = out_shape[1];
    if let Some(b) = bias {
        if b.len() != out_c {
            return Err(Error::shape("conv2d", "bias length", out_c, b.len()));
        }
    }
    let mut out = Tensor::zeros(out_shape);
    if let Some(b) = bias {
        let plane = out_shape[2] * out_shape[3];
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            chunk.fill(b[i % out_c]);
        }
    }
    if spec.is_depthwise(x.c(), out_c) {
        depthwise(x, weight.data(), &spec, &mut out);
    } else if spec.kernel == 1 && spec.stride == 1 && spec.padding == 0 {
        pointwise(x, weight.data(), spec.groups, &mut out);
    } else {
        im2col_conv(x, weight.data(), &spec, &mut out);
    }
    Ok(out)
}

fn depthwise(x: &Tensor, weight: &[f32], spec: &ConvSpec, out: &mut Tensor) {
    let (h, w) = (x.h(), x.w());
    let (oh, ow) = (out.h(), out.w());
    let k = spec.kernel;
    let (s, p) = (spec.stride, spec.padding as isize);
    for n in 0..x.n() {
        for c in 0..x.c() {
            let input = x.plane(n, c);
            let kern = &weight[c * k * k..(c + 1) * k * k];
            let output = out.plane_mut(n, c);
            for kx in 0..k {
                // ox range with 0 <= ox*s + kx - p < w
                let off = kx as isize - p;
                let lo = if off < 0 { ((-off) as usize).div_ceil(s) } else { 0 };
                let hi_num = w as isize - 1 - off;
                if hi_num < 0 {
                    continue;
                }
                let hi = ((hi_num as usize) / s + 1).min(ow);
                if lo >= hi {
                    continue;
                }
                for oy in 0..oh {
                    let orow = &mut output[oy * ow..(oy + 1) * ow];
                    for ky in 0..k {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let wv = kern[ky * k + kx];
                        let irow = &input[iy as usize * w..(iy as usize + 1) * w];
                        if s == 1 {
                            let base = (lo as isize + off) as usize;
                            for (o, i) in orow[lo..hi].iter_mut().zip(&irow[base..base + hi - lo]) {
                                *o += wv * i;
                            }
                        } else {
                            for ox in lo..hi {
                                let ix = (ox * s) as isize + off;
                                orow[ox] += wv * irow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn pointwise(x: &Tensor, weight: &[f32], groups: usize, out: &mut Tensor) {
    let plane = x.plane_len();
    let cin_g = x.c() / groups;
    let cout_g = out.c() / groups;
    for n in 0..x.n() {
        for g in 0..groups {
            let xin = &x.item(n)[g * cin_g * plane..(g + 1) * cin_g * plane];
            let wg = &weight[g * cout_g * cin_g..(g + 1) * cout_g * cin_g];
            let dst = &mut out.item_mut(n)[g * cout_g * plane..(g + 1) * cout_g * plane];
            gemm(cout_g, cin_g, plane, wg, xin, dst, true);
        }
    }
}

fn im2col_conv(x: &Tensor, weight: &[f32], spec: &ConvSpec, out: &mut Tensor) {
    let (h, w) = (x.h(), x.w());
    let (oh, ow) = (out.h(), out.w());
    let k = spec.kernel;
    let (s, p) = (spec.stride as isize, spec.padding as isize);
    let cin_g = x.c() / spec.groups;
    let cout_g = out.c() / spec.groups;
    let rows = cin_g * k * k;
    let cols = oh * ow;
    let mut col = vec![0.0f32; rows * cols];
    for n in 0..x.n() {
        for g in 0..spec.groups {
            col.fill(0.0);
            for ci in 0..cin_g {
                let input = x.plane(n, g * cin_g + ci);
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ci * k + ky) * k + kx;
                        let dst = &mut col[row * cols..(row + 1) * cols];
                        for oy in 0..oh {
                            let iy = oy as isize * s + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    dst[oy * ow + ox] = input[iy as usize * w + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
            let wg = &weight[g * cout_g * rows..(g + 1) * cout_g * rows];
            let plane = oh * ow;
            let dst = &mut out.item_mut(n)[g * cout_g * plane..(g + 1) * cout_g * plane];
            gemm(cout_g, rows, cols, wg, &col, dst, true);
        }
    }
}

/// Depthwise 1-D convolution along rows of a channel-major `[channels × len]`
/// buffer, kernel `weight[channels × k]`, zero padded to keep the length.
pub fn conv1d_depthwise_same(
    x: &[f32],
    channels: usize,
    len: usize,
    weight: &[f32],
    kernel: usize,
    bias: Option<&[f32]>,
) -> Result<Vec<f32>> {
    if x.len() != channels * len {
        return Err(Error::shape("conv1d", "input length", channels * len, x.len()));
    }
    if weight.len() != channels * kernel {
        return Err(Error::shape("conv1d", "weight length", channels * kernel, weight.len()));
    }
    if kernel % 2 == 0 {
        return Err(Error::Config(format!("conv1d kernel must be odd, got {kernel}")));
    }
    let pad = (kernel / 2) as isize;
    let mut out = vec![0.0f32; channels * len];
    for c in 0..channels {
        let row = &x[c * len..(c + 1) * len];
        let kern = &weight[c * kernel..(c + 1) * kernel];
        let b = bias.map_or(0.0, |b| b[c]);
        let dst = &mut out[c * len..(c + 1) * len];
        for (t, o) in dst.iter_mut().enumerate() {
            let mut acc = b;
            for (j, &wv) in kern.iter().enumerate() {
                let i = t as isize + j as isize - pad;
                if i >= 0 && (i as usize) < len {
                    acc += wv * row[i as usize];
                }
            }
            *o = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct 7-loop reference.
    fn naive_conv(x: &Tensor, wt: &Tensor, bias: Option<&[f32]>, spec: ConvSpec) -> Tensor {
        let [n, cin, h, w] = x.shape();
        let [cout, cin_g, k, _] = wt.shape();
        let oh = (h + 2 * spec.padding - k) / spec.stride + 1;
        let ow = (w + 2 * spec.padding - k) / spec.stride + 1;
        let cout_g = cout / spec.groups;
        let _ = cin;
        Tensor::from_fn([n, cout, oh, ow], |[b, o, y, xx]| {
            let g = o / cout_g;
            let mut acc = bias.map_or(0.0, |b| b[o]);
            for ci in 0..cin_g {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (y * spec.stride + ky) as isize - spec.padding as isize;
                        let ix = (xx * spec.stride + kx) as isize - spec.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            acc += wt.at([o, ci, ky, kx]) * x.at([b, g * cin_g + ci, iy as usize, ix as usize]);
                        }
                    }
                }
            }
            acc
        })
    }

    fn seq(shape: [usize; 4], seed: u32) -> Tensor {
        let mut s = seed.wrapping_mul(2654435761).wrapping_add(12345);
        Tensor::from_fn(shape, |_| {
            s ^= s << 13;
            s ^= s >> 17;
            s ^= s << 5;
            (s % 2000) as f32 / 1000.0 - 1.0
        })
    }

    #[test]
    fn zero_input_gives_zero() {
        let x = Tensor::zeros([1, 1, 3, 3]);
        let wt = seq([1, 1, 3, 3], 7);
        let y = conv2d(&x, &wt, None, ConvSpec::depthwise(3, 1, 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ones_box_filter_counts_neighbours() {
        let x = Tensor::full([1, 1, 3, 3], 1.0);
        let wt = Tensor::full([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &wt, None, ConvSpec::depthwise(3, 1, 1)).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = seq([2, 3, 5, 4], 3);
        let wt = Tensor::full([3, 1, 1, 1], 1.0);
        let y = conv2d(&x, &wt, None, ConvSpec::depthwise(1, 1, 3)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn errors_name_the_dimension() {
        let x = Tensor::zeros([1, 4, 5, 5]);
        let wt = Tensor::zeros([4, 2, 3, 3]);
        let err = conv2d(&x, &wt, None, ConvSpec::same(3)).unwrap_err();
        assert!(err.to_string().contains("weight input channels"), "{err}");
        let err = conv2d(&Tensor::zeros([1, 1, 2, 2]), &Tensor::zeros([1, 1, 5, 5]), None, ConvSpec::new(5, 1, 0, 1).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::EmptyOutput { .. }), "{err}");
        assert!(ConvSpec::new(4, 1, 0, 1).is_err());
    }

    #[test]
    fn output_dims_follow_stride_arithmetic() {
        let s = ConvSpec::depthwise(3, 2, 8);
        assert_eq!(s.output_dim(12).unwrap(), 6);
        assert_eq!(s.output_dim(6).unwrap(), 3);
        assert_eq!(s.output_dim(7).unwrap(), 4);
        assert_eq!(s.output_dim(1).unwrap(), 1);
    }

    #[test]
    fn all_paths_match_naive() {
        let cases = [
            // (shape, cout, k, stride, pad, groups)
            ([2, 3, 7, 6], 3, 3, 1, 1, 3),
            ([1, 4, 9, 9], 4, 7, 1, 3, 4),
            ([1, 4, 9, 8], 4, 5, 2, 2, 4),
            ([2, 5, 4, 4], 6, 1, 1, 0, 1),
            ([1, 3, 16, 16], 8, 3, 2, 1, 1),
            ([1, 4, 6, 6], 6, 3, 1, 1, 2),
            ([1, 4, 5, 5], 8, 1, 1, 0, 2),
        ];
        for (i, (shape, cout, k, s, p, g)) in cases.into_iter().enumerate() {
            let x = seq(shape, i as u32);
            let wt = seq([cout, shape[1] / g, k, k], 100 + i as u32);
            let bias: Vec<f32> = (0..cout).map(|c| c as f32 * 0.1).collect();
            let spec = ConvSpec::new(k, s, p, g).unwrap();
            let got = conv2d(&x, &wt, Some(&bias), spec).unwrap();
            let want = naive_conv(&x, &wt, Some(&bias), spec);
            assert!(got.max_abs_diff(&want) <= 1e-5, "case {i}: {}", got.max_abs_diff(&want));
        }
    }

    #[test]
    fn conv1d_same_padding() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = conv1d_depthwise_same(&x, 1, 4, &[1.0, 1.0, 1.0], 3, Some(&[0.5])).unwrap();
        assert_eq!(y, vec![3.5, 6.5, 9.5, 7.5]);
    }

    fn small_tensor(c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor> {
        prop::collection::vec(-1.0f32..1.0, c * h * w).prop_map(move |d| Tensor::new([1, c, h, w], d).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // dense conv = sum over input channels of single-channel convolutions
        #[test]
        fn dense_is_sum_of_depthwise(
            (x, wt) in (1usize..4, 1usize..4, 1usize..5, 1usize..5)
                .prop_flat_map(|(cin, cout, h, w)| (small_tensor(cin, h, w), prop::collection::vec(-1.0f32..1.0, cout * cin * 9)
                    .prop_map(move |d| Tensor::new([cout, cin, 3, 3], d).unwrap())))
        ) {
            let spec = ConvSpec::same(3);
            let dense = conv2d(&x, &wt, None, spec).unwrap();
            let [cout, cin, _, _] = wt.shape();
            let mut acc = Tensor::zeros(dense.shape());
            for ci in 0..cin {
                let xc = Tensor::new([1, 1, x.h(), x.w()], x.plane(0, ci).to_vec()).unwrap();
                for o in 0..cout {
                    let k: Vec<f32> = (0..9).map(|j| wt.data()[(o * cin + ci) * 9 + j]).collect();
                    let kc = Tensor::new([1, 1, 3, 3], k).unwrap();
                    let part = conv2d(&xc, &kc, None, ConvSpec::depthwise(3, 1, 1)).unwrap();
                    for (a, b) in acc.plane_mut(0, o).iter_mut().zip(part.data()) {
                        *a += b;
                    }
                }
            }
            prop_assert!(dense.max_abs_diff(&acc) <= 1e-5);
            prop_assert!(dense.max_abs_diff(&naive_conv(&x, &wt, None, spec)) <= 1e-5);
        }

        #[test]
        fn conv_is_linear(
            (x, y, wt) in (1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(c, h, w)| (
                small_tensor(c, h, w), small_tensor(c, h, w),
                prop::collection::vec(-1.0f32..1.0, c * 9).prop_map(move |d| Tensor::new([c, 1, 3, 3], d).unwrap()))),
            a in -2.0f32..2.0, b in -2.0f32..2.0,
        ) {
            let spec = ConvSpec::depthwise(3, 1, x.c());
            let mixed = Tensor::new(x.shape(), x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let lhs = conv2d(&mixed, &wt, None, spec).unwrap();
            let rhs = conv2d(&x, &wt, None, spec).unwrap().scale(a).add(&conv2d(&y, &wt, None, spec).unwrap().scale(b)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-5);
        }
    }
}
