//! 2D convolution via im2col + GEMM, with the matching backward pass.

use ndarray::{Array1, Array2, Array3};
use rand_chacha::ChaCha20Rng;

use super::he_matrix;
use crate::scalar::{gemm, Op, Scalar};

/// Convolution layer over a single (C, H, W) image. Padding is (k-1)/2, so
/// stride 1 preserves the spatial size and stride 2 halves it (even inputs).
pub struct Conv2d<F: Scalar> {
    /// Weights stored (cout, cin*k*k); logical shape [cout, cin, k, k].
    pub w: Array2<F>,
    pub b: Array1<F>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Gradient buffer matching one `Conv2d`.
#[derive(Clone)]
pub struct ConvGrads<F: Scalar> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(rng: &mut ChaCha20Rng, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        let fan_in = cin * k * k;
        Self {
            w: he_matrix(rng, cout, fan_in, fan_in),
            b: Array1::zeros(cout),
            cin,
            cout,
            k,
            stride,
            pad: (k - 1) / 2,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn grads(&self) -> ConvGrads<F> {
        ConvGrads {
            w: Array2::zeros(self.w.dim()),
            b: Array1::zeros(self.b.len()),
        }
    }

    pub fn forward(&self, x: &Array3<F>) -> Array3<F> {
        let (cin, h, w) = x.dim();
        assert_eq!(cin, self.cin, "conv input channels");
        let (oh, ow) = self.out_size(h, w);
        let cols = im2col(x, self.k, self.stride, self.pad, oh, ow);
        let mut out = vec![F::zero(); self.cout * oh * ow];
        gemm(
            self.cout,
            self.cin * self.k * self.k,
            oh * ow,
            self.w.as_slice().unwrap(),
            Op::N,
            cols.as_slice().unwrap(),
            Op::N,
            F::zero(),
            &mut out,
        );
        let n = oh * ow;
        for c in 0..self.cout {
            let bias = self.b[c];
            for v in &mut out[c * n..(c + 1) * n] {
                *v = *v + bias;
            }
        }
        Array3::from_shape_vec((self.cout, oh, ow), out).unwrap()
    }

    /// Backpropagates `dy` through the layer given the forward input `x`.
    /// Parameter gradients accumulate into `grads`; returns dL/dx.
    pub fn backward(&self, x: &Array3<F>, dy: &Array3<F>, grads: &mut ConvGrads<F>) -> Array3<F> {
        let (cin, h, w) = x.dim();
        let (cout, oh, ow) = dy.dim();
        assert_eq!(cin, self.cin);
        assert_eq!(cout, self.cout);
        let n = oh * ow;
        let kk = self.cin * self.k * self.k;
        let dy_flat = dy.as_slice().unwrap();

        // Bias gradient: per-channel sum, serial for fixed accumulation order.
        for c in 0..cout {
            let mut acc = F::zero();
            for &v in &dy_flat[c * n..(c + 1) * n] {
                acc = acc + v;
            }
            grads.b[c] = grads.b[c] + acc;
        }

        // dW += dY * cols^T
        let cols = im2col(x, self.k, self.stride, self.pad, oh, ow);
        gemm(
            cout,
            n,
            kk,
            dy_flat,
            Op::N,
            cols.as_slice().unwrap(),
            Op::T,
            F::one(),
            grads.w.as_slice_mut().unwrap(),
        );

        // dcols = W^T * dY, then scatter back to image layout.
        let mut dcols = vec![F::zero(); kk * n];
        gemm(
            kk,
            cout,
            n,
            self.w.as_slice().unwrap(),
            Op::T,
            dy_flat,
            Op::N,
            F::zero(),
            &mut dcols,
        );
        col2im(&dcols, cin, h, w, self.k, self.stride, self.pad, oh, ow)
    }

    /// Flat views used by the optimizer, in a fixed order: weight then bias.
    pub fn flat_mut(&mut self) -> Vec<&mut [F]> {
        vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }

    pub fn logical_weight_shape(&self) -> Vec<usize> {
        vec![self.cout, self.cin, self.k, self.k]
    }
}

impl<F: Scalar> ConvGrads<F> {
    pub fn add(&mut self, other: &Self) {
        self.w.zip_mut_with(&other.w, |a, &b| *a = *a + b);
        self.b.zip_mut_with(&other.b, |a, &b| *a = *a + b);
    }

    pub fn scale(&mut self, s: F) {
        self.w.mapv_inplace(|v| v * s);
        self.b.mapv_inplace(|v| v * s);
    }

    pub fn flat(&self) -> Vec<&[F]> {
        vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }
}

/// Unrolls conv patches to a (cin*k*k, oh*ow) matrix. Out-of-image taps are
/// zero. Stride-1 rows copy as contiguous slices.
fn im2col<F: Scalar>(x: &Array3<F>, k: usize, stride: usize, pad: usize, oh: usize, ow: usize) -> Array2<F> {
    let (cin, h, w) = x.dim();
    let mut cols = Array2::zeros((cin * k * k, oh * ow));
    let xs = x.as_slice().unwrap();
    let cs = cols.as_slice_mut().unwrap();
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst_base = row * oh * ow;
                for oy in 0..oh {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let src_row = ci * h * w + y as usize * w;
                    let dst_row = dst_base + oy * ow;
                    if stride == 1 {
                        let shift = kx as isize - pad as isize;
                        let ox_start = (-shift).max(0) as usize;
                        let ox_end = ((w as isize - shift).min(ow as isize)).max(0) as usize;
                        if ox_start < ox_end {
                            let src_start = (src_row as isize + shift) as usize;
                            cs[dst_row + ox_start..dst_row + ox_end].copy_from_slice(
                                &xs[src_start + ox_start..src_start + ox_end],
                            );
                        }
                    } else {
                        for ox in 0..ow {
                            let xp = (ox * stride + kx) as isize - pad as isize;
                            if xp >= 0 && xp < w as isize {
                                cs[dst_row + ox] = xs[src_row + xp as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of `im2col`: scatter-adds column gradients back to image layout.
#[allow(clippy::too_many_arguments)]
fn col2im<F: Scalar>(
    dcols: &[F],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array3<F> {
    let mut dx = Array3::zeros((cin, h, w));
    let ds = dx.as_slice_mut().unwrap();
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_base = row * oh * ow;
                for oy in 0..oh {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let dst_row = ci * h * w + y as usize * w;
                    let src_row = src_base + oy * ow;
                    for ox in 0..ow {
                        let xp = (ox * stride + kx) as isize - pad as isize;
                        if xp >= 0 && xp < w as isize {
                            ds[dst_row + xp as usize] = ds[dst_row + xp as usize] + dcols[src_row + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}
