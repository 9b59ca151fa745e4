//! Fully connected layer over flat vectors.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha20Rng;

use super::he_matrix;
use crate::scalar::{gemm, Op, Scalar};

pub struct Dense<F: Scalar> {
    /// (out, in), row-major.
    pub w: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Clone)]
pub struct DenseGrads<F: Scalar> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn new(rng: &mut ChaCha20Rng, input: usize, output: usize) -> Self {
        Self {
            w: he_matrix(rng, output, input, input),
            b: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.dim().1
    }

    pub fn output_dim(&self) -> usize {
        self.w.dim().0
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn grads(&self) -> DenseGrads<F> {
        DenseGrads {
            w: Array2::zeros(self.w.dim()),
            b: Array1::zeros(self.b.len()),
        }
    }

    pub fn forward(&self, x: &[F]) -> Vec<F> {
        let (out, inp) = self.w.dim();
        assert_eq!(x.len(), inp, "dense input length");
        let mut y = self.b.to_vec();
        gemm(out, inp, 1, self.w.as_slice().unwrap(), Op::N, x, Op::N, F::one(), &mut y);
        y
    }

    pub fn backward(&self, x: &[F], dy: &[F], grads: &mut DenseGrads<F>) -> Vec<F> {
        let (out, inp) = self.w.dim();
        assert_eq!(dy.len(), out);
        for (gb, &d) in grads.b.iter_mut().zip(dy) {
            *gb = *gb + d;
        }
        // dW += dy ⊗ x
        gemm(
            out,
            1,
            inp,
            dy,
            Op::N,
            x,
            Op::N,
            F::one(),
            grads.w.as_slice_mut().unwrap(),
        );
        // dx = W^T dy
        let mut dx = vec![F::zero(); inp];
        gemm(inp, out, 1, self.w.as_slice().unwrap(), Op::T, dy, Op::N, F::zero(), &mut dx);
        dx
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [F]> {
        vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }
}

impl<F: Scalar> DenseGrads<F> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut layer = Dense::<f64>::new(&mut rng, 5, 3);
        let x: Vec<f64> = (0..5).map(|i| i as f64 * 0.2 - 0.4).collect();
        let coeff = [0.3f64, -0.7, 1.1];
        let loss = |l: &Dense<f64>, x: &[f64]| -> f64 {
            l.forward(x).iter().zip(&coeff).map(|(y, c)| y * c).sum()
        };
        let mut grads = layer.grads();
        let dx = layer.backward(&x, &coeff, &mut grads);

        let eps = 1e-6;
        for (r, c) in [(0usize, 0usize), (2, 4), (1, 3)] {
            let orig = layer.w[(r, c)];
            layer.w[(r, c)] = orig + eps;
            let up = loss(&layer, &x);
            layer.w[(r, c)] = orig - eps;
            let down = loss(&layer, &x);
            layer.w[(r, c)] = orig;
            assert!(((up - down) / (2.0 * eps) - grads.w[(r, c)]).abs() < 1e-8);
        }
        let mut x2 = x.clone();
        for i in 0..5 {
            let orig = x2[i];
            x2[i] = orig + eps;
            let up = loss(&layer, &x2);
            x2[i] = orig - eps;
            let down = loss(&layer, &x2);
            x2[i] = orig;
            assert!(((up - down) / (2.0 * eps) - dx[i]).abs() < 1e-8);
        }
        assert_eq!(grads.b.to_vec(), coeff.to_vec());
    }
}
