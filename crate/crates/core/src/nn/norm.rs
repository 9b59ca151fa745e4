//! Per-channel activation normalization with a learned affine.
//!
//! Statistics are taken over the spatial extent of the sample being
//! processed (batch normalization at batch size one). This keeps forward
//! passes independent across batch members, which is what makes batched and
//! looped evaluation identical and training byte-reproducible.

use ndarray::{Array1, Array3};

use crate::scalar::Scalar;

pub struct SpatialNorm<F: Scalar> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub eps: F,
}

/// Values the backward pass needs from the forward pass.
pub struct NormCache<F: Scalar> {
    pub xhat: Array3<F>,
    pub inv_std: Array1<F>,
}

#[derive(Clone)]
pub struct NormGrads<F: Scalar> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

impl<F: Scalar> SpatialNorm<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::from_elem(channels, F::one()),
            beta: Array1::zeros(channels),
            eps: F::cast(1e-5),
        }
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub fn grads(&self) -> NormGrads<F> {
        NormGrads {
            gamma: Array1::zeros(self.gamma.len()),
            beta: Array1::zeros(self.beta.len()),
        }
    }

    pub fn forward(&self, x: &Array3<F>) -> (Array3<F>, NormCache<F>) {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.gamma.len(), "norm channels");
        let n = F::from_count(h * w);
        let mut xhat = Array3::zeros((c, h, w));
        let mut inv_std = Array1::zeros(c);
        let mut y = Array3::zeros((c, h, w));
        let xs = x.as_slice().unwrap();
        let hs = xhat.as_slice_mut().unwrap();
        let ys = y.as_slice_mut().unwrap();
        let plane = h * w;
        for ch in 0..c {
            let src = &xs[ch * plane..(ch + 1) * plane];
            let mut mean = F::zero();
            for &v in src {
                mean = mean + v;
            }
            mean = mean / n;
            let mut var = F::zero();
            for &v in src {
                let d = v - mean;
                var = var + d * d;
            }
            var = var / n;
            let istd = F::one() / (var + self.eps).sqrt();
            inv_std[ch] = istd;
            let (g, b) = (self.gamma[ch], self.beta[ch]);
            for i in 0..plane {
                let xh = (src[i] - mean) * istd;
                hs[ch * plane + i] = xh;
                ys[ch * plane + i] = g * xh + b;
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    /// Standard normalization backward, accounting for the dependence of the
    /// per-channel mean and variance on every spatial position.
    pub fn backward(&self, cache: &NormCache<F>, dy: &Array3<F>, grads: &mut NormGrads<F>) -> Array3<F> {
        let (c, h, w) = dy.dim();
        let plane = h * w;
        let n = F::from_count(plane);
        let mut dx = Array3::zeros((c, h, w));
        let dys = dy.as_slice().unwrap();
        let xh = cache.xhat.as_slice().unwrap();
        let dxs = dx.as_slice_mut().unwrap();
        for ch in 0..c {
            let dsl = &dys[ch * plane..(ch + 1) * plane];
            let xsl = &xh[ch * plane..(ch + 1) * plane];
            let mut sum_dy = F::zero();
            let mut sum_dy_xhat = F::zero();
            for i in 0..plane {
                sum_dy = sum_dy + dsl[i];
                sum_dy_xhat = sum_dy_xhat + dsl[i] * xsl[i];
            }
            grads.beta[ch] = grads.beta[ch] + sum_dy;
            grads.gamma[ch] = grads.gamma[ch] + sum_dy_xhat;
            let g = self.gamma[ch];
            let istd = cache.inv_std[ch];
            let mean_dy = sum_dy / n;
            let mean_dy_xhat = sum_dy_xhat / n;
            for i in 0..plane {
                let v = dsl[i] - mean_dy - xsl[i] * mean_dy_xhat;
                dxs[ch * plane + i] = g * istd * v;
            }
        }
        dx
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.gamma.as_slice_mut().unwrap(),
            self.beta.as_slice_mut().unwrap(),
        ]
    }
}

impl<F: Scalar> NormGrads<F> {
    pub fn add(&mut self, other: &Self) {
        self.gamma.zip_mut_with(&other.gamma, |a, &b| *a = *a + b);
        self.beta.zip_mut_with(&other.beta, |a, &b| *a = *a + b);
    }

    pub fn scale(&mut self, s: F) {
        self.gamma.mapv_inplace(|v| v * s);
        self.beta.mapv_inplace(|v| v * s);
    }

    pub fn flat(&self) -> Vec<&[F]> {
        vec![self.gamma.as_slice().unwrap(), self.beta.as_slice().unwrap()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_each_channel_to_zero_mean_unit_var() {
        let norm = SpatialNorm::<f64>::new(2);
        let x = Array3::from_shape_fn((2, 4, 4), |(c, y, x)| (c as f64 + 1.0) * (y as f64 - 0.5 * x as f64));
        let (y, _) = norm.forward(&x);
        for ch in 0..2 {
            let plane = y.index_axis(ndarray::Axis(0), ch);
            let mean: f64 = plane.iter().sum::<f64>() / 16.0;
            let var: f64 = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut norm = SpatialNorm::<f64>::new(2);
        norm.gamma[0] = 1.3;
        norm.gamma[1] = 0.7;
        norm.beta[0] = 0.1;
        let x = Array3::from_shape_fn((2, 3, 3), |(c, y, x)| ((c * 31 + y * 7 + x * 3) % 11) as f64 / 11.0);
        let coeff = Array3::from_shape_fn((2, 3, 3), |(c, y, x)| ((c + 2 * y + x) % 5) as f64 - 2.0);
        let loss = |norm: &SpatialNorm<f64>, x: &Array3<f64>| (norm.forward(x).0 * &coeff).sum();

        let (_, cache) = norm.forward(&x);
        let mut grads = norm.grads();
        let dx = norm.backward(&cache, &coeff, &mut grads);

        let eps = 1e-6;
        let mut x2 = x.clone();
        for &(c, y, xx) in &[(0usize, 0usize, 0usize), (1, 2, 1), (0, 1, 2)] {
            let orig = x2[(c, y, xx)];
            x2[(c, y, xx)] = orig + eps;
            let up = loss(&norm, &x2);
            x2[(c, y, xx)] = orig - eps;
            let down = loss(&norm, &x2);
            x2[(c, y, xx)] = orig;
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - dx[(c, y, xx)]).abs() < 1e-6, "dx({c},{y},{xx}): fd {fd} vs {}", dx[(c, y, xx)]);
        }
        for ch in 0..2 {
            let orig = norm.gamma[ch];
            norm.gamma[ch] = orig + eps;
            let up = loss(&norm, &x);
            norm.gamma[ch] = orig - eps;
            let down = loss(&norm, &x);
            norm.gamma[ch] = orig;
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - grads.gamma[ch]).abs() < 1e-6);
        }
    }
}
