use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Splits along the channel axis. Zero-sized parts are not allowed.
pub fn split_channels(x: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let total: usize = sizes.iter().sum();
    if total != x.c() {
        return Err(Error::shape("split_channels", "sum of sizes", x.c(), total));
    }
    if sizes.contains(&0) {
        return Err(Error::Config(format!("split_channels: zero-sized part in {sizes:?}")));
    }
    let plane = x.plane_len();
    let mut parts: Vec<Vec<f32>> = sizes.iter().map(|&s| Vec::with_capacity(x.n() * s * plane)).collect();
    for n in 0..x.n() {
        let mut offset = 0;
        let item = x.item(n);
        for (part, &s) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&item[offset * plane..(offset + s) * plane]);
            offset += s;
        }
    }
    parts
        .into_iter()
        .zip(sizes)
        .map(|(d, &s)| Tensor::new([x.n(), s, x.h(), x.w()], d))
        .collect()
}

pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Config("concat_channels: no inputs".into()))?;
    let [n, _, h, w] = first.shape();
    for p in parts {
        if p.n() != n {
            return Err(Error::shape("concat_channels", "n", n, p.n()));
        }
        if p.h() != h {
            return Err(Error::shape("concat_channels", "h", h, p.h()));
        }
        if p.w() != w {
            return Err(Error::shape("concat_channels", "w", w, p.w()));
        }
    }
    let c: usize = parts.iter().map(Tensor::c).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for p in parts {
            data.extend_from_slice(p.item(b));
        }
    }
    Tensor::new([n, c, h, w], data)
}

/// Mean over `h·w`, giving `n×c×1×1`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let plane = x.plane_len();
    let data = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().sum::<f32>() / plane as f32)
        .collect();
    Tensor::new([x.n(), x.c(), 1, 1], data).expect("pool shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(c: usize) -> Tensor {
        Tensor::from_fn([2, c, 3, 2], |[n, c, h, w]| (n * 100 + c * 10 + h * 2 + w) as f32 * 0.37)
    }

    #[test]
    fn whole_split_is_identity() {
        let x = ramp(10);
        let parts = split_channels(&x, &[10]).unwrap();
        assert_eq!(parts[0], x);
    }

    #[test]
    fn split_concat_roundtrip() {
        let x = ramp(10);
        let parts = split_channels(&x, &[6, 3, 1]).unwrap();
        assert_eq!(parts.iter().map(Tensor::c).collect::<Vec<_>>(), vec![6, 3, 1]);
        assert_eq!(parts[1].at([1, 0, 2, 1]), x.at([1, 6, 2, 1]));
        assert_eq!(concat_channels(&parts).unwrap(), x);
    }

    #[test]
    fn bad_partition() {
        assert!(split_channels(&ramp(10), &[6, 3, 2]).is_err());
        assert!(split_channels(&ramp(10), &[10, 0]).is_err());
    }

    #[test]
    fn pooling() {
        assert_eq!(global_avg_pool(&Tensor::full([1, 2, 3, 3], 4.5)).data(), &[4.5, 4.5]);
        assert_eq!(global_avg_pool(&Tensor::zeros([1, 1, 2, 2])).data(), &[0.0]);
        let x = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).data(), &[2.5]);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(sizes in prop::collection::vec(1usize..5, 1..6), seed in any::<u32>()) {
            let c: usize = sizes.iter().sum();
            let x = Tensor::from_fn([2, c, 2, 3], |[n, ch, h, w]| {
                f32::from_bits(seed.wrapping_add((n * 31 + ch * 17 + h * 5 + w) as u32).wrapping_mul(2654435761) >> 2)
            });
            let back = concat_channels(&split_channels(&x, &sizes).unwrap()).unwrap();
            let same = back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
