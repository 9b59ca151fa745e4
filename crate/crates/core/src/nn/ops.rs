//! Elementwise and structural ops shared by the networks.

use ndarray::{Array1, Array3, Axis};

use super::LEAKY_SLOPE;
use crate::scalar::Scalar;

pub fn leaky_relu<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    let slope = F::cast(LEAKY_SLOPE);
    x.mapv(|v| if v > F::zero() { v } else { v * slope })
}

/// Backward through leaky-ReLU given the forward *output* (the slope is
/// positive, so the output sign equals the input sign).
pub fn leaky_relu_backward<F: Scalar>(y: &Array3<F>, dy: &Array3<F>) -> Array3<F> {
    let slope = F::cast(LEAKY_SLOPE);
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &out| {
        if out <= F::zero() {
            *d = *d * slope;
        }
    });
    dx
}

pub fn leaky_relu_vec<F: Scalar>(x: &[F]) -> Vec<F> {
    let slope = F::cast(LEAKY_SLOPE);
    x.iter().map(|&v| if v > F::zero() { v } else { v * slope }).collect()
}

pub fn leaky_relu_vec_backward<F: Scalar>(y: &[F], dy: &[F]) -> Vec<F> {
    let slope = F::cast(LEAKY_SLOPE);
    y.iter()
        .zip(dy)
        .map(|(&out, &d)| if out > F::zero() { d } else { d * slope })
        .collect()
}

pub fn sigmoid<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    x.mapv(|v| F::one() / (F::one() + (-v).exp()))
}

/// Backward through sigmoid given the forward output.
pub fn sigmoid_backward<F: Scalar>(y: &Array3<F>, dy: &Array3<F>) -> Array3<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &out| *d = *d * out * (F::one() - out));
    dx
}

pub fn sigmoid_scalar<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Nearest-neighbor 2x upsample.
pub fn upsample2x<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    let mut out = Array3::zeros((c, 2 * h, 2 * w));
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let v = x[(ch, y, xx)];
                out[(ch, 2 * y, 2 * xx)] = v;
                out[(ch, 2 * y, 2 * xx + 1)] = v;
                out[(ch, 2 * y + 1, 2 * xx)] = v;
                out[(ch, 2 * y + 1, 2 * xx + 1)] = v;
            }
        }
    }
    out
}

/// Adjoint of `upsample2x`: each source cell receives the sum of its four
/// replicas.
pub fn upsample2x_backward<F: Scalar>(dy: &Array3<F>) -> Array3<F> {
    let (c, h2, w2) = dy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                dx[(ch, y, xx)] = dy[(ch, 2 * y, 2 * xx)]
                    + dy[(ch, 2 * y, 2 * xx + 1)]
                    + dy[(ch, 2 * y + 1, 2 * xx)]
                    + dy[(ch, 2 * y + 1, 2 * xx + 1)];
            }
        }
    }
    dx
}

/// Per-channel spatial mean.
pub fn global_avg_pool<F: Scalar>(x: &Array3<F>) -> Array1<F> {
    let (c, h, w) = x.dim();
    let n = F::from_count(h * w);
    Array1::from_iter((0..c).map(|ch| x.index_axis(Axis(0), ch).iter().cloned().sum::<F>() / n))
}

pub fn global_avg_pool_backward<F: Scalar>(dvec: &Array1<F>, c: usize, h: usize, w: usize) -> Array3<F> {
    let n = F::from_count(h * w);
    let mut dx = Array3::zeros((c, h, w));
    for ch in 0..c {
        let g = dvec[ch] / n;
        dx.index_axis_mut(Axis(0), ch).fill(g);
    }
    dx
}

/// Stacks images along the channel axis.
pub fn concat_channels<F: Scalar>(parts: &[&Array3<F>]) -> Array3<F> {
    let (_, h, w) = parts[0].dim();
    let total: usize = parts.iter().map(|p| p.dim().0).sum();
    let mut out = Array3::zeros((total, h, w));
    let mut offset = 0;
    for p in parts {
        let (c, ph, pw) = p.dim();
        assert_eq!((ph, pw), (h, w), "concat spatial dims");
        out.slice_mut(ndarray::s![offset..offset + c, .., ..]).assign(p);
        offset += c;
    }
    out
}

/// Splits a channel-stacked gradient back into per-part gradients.
pub fn split_channels<F: Scalar>(dy: &Array3<F>, sizes: &[usize]) -> Vec<Array3<F>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &c in sizes {
        out.push(dy.slice(ndarray::s![offset..offset + c, .., ..]).to_owned());
        offset += c;
    }
    assert_eq!(offset, dy.dim().0, "split sizes must cover all channels");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_backward_is_adjoint() {
        // <up(x), y> == <x, up_backward(y)> for random-ish tensors.
        let x = Array3::from_shape_fn((2, 3, 3), |(c, y, xx)| ((c * 5 + y * 3 + xx) % 7) as f64 - 3.0);
        let y = Array3::from_shape_fn((2, 6, 6), |(c, h, w)| ((c + h * 2 + w) % 5) as f64 - 2.0);
        let lhs: f64 = (&upsample2x(&x) * &y).sum();
        let rhs: f64 = (&x * &upsample2x_backward(&y)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = Array3::<f32>::from_elem((2, 4, 4), 1.0);
        let b = Array3::<f32>::from_elem((3, 4, 4), 2.0);
        let cat = concat_channels(&[&a, &b]);
        assert_eq!(cat.dim(), (5, 4, 4));
        let parts = split_channels(&cat, &[2, 3]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn global_pool_mean_and_backward_spread() {
        let x = Array3::from_shape_fn((1, 2, 2), |(_, y, xx)| (y * 2 + xx) as f64);
        let p = global_avg_pool(&x);
        assert!((p[0] - 1.5).abs() < 1e-12);
        let dx = global_avg_pool_backward(&Array1::from_vec(vec![4.0]), 1, 2, 2);
        assert!(dx.iter().all(|&v| (v - 1.0f64).abs() < 1e-12));
    }
}
