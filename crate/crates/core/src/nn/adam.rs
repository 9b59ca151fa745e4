//! Adaptive-moment gradient descent over flat parameter slices.

use crate::scalar::Scalar;

/// Optimizer state is a pair of moment vectors per parameter tensor, aligned
/// with the network's fixed parameter order.
pub struct Adam<F: Scalar> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    pub t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr: F::cast(lr),
            beta1: F::cast(beta1),
            beta2: F::cast(beta2),
            eps: F::cast(1e-8),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update. `params` and `grads` must be aligned and keep the
    /// same order across calls; moments are allocated lazily on first use.
    pub fn step(&mut self, params: &mut [&mut [F]], grads: &[&[F]]) {
        assert_eq!(params.len(), grads.len(), "optimizer param/grad alignment");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
            self.v = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer state alignment");
        self.t += 1;
        let t = self.t as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        let one = F::one();
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (one - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (one - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = p[i] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    /// Moment vectors for checkpointing, flattened in parameter order.
    pub fn state(&self) -> (u64, &[Vec<F>], &[Vec<F>]) {
        (self.t, &self.m, &self.v)
    }

    pub fn restore(&mut self, t: u64, m: Vec<Vec<F>>, v: Vec<Vec<F>>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        // f(x) = (x - 3)^2, df/dx = 2(x - 3)
        let mut x = vec![0.0f64];
        let mut opt = Adam::<f64>::new(0.1, 0.9, 0.999);
        for _ in 0..500 {
            let g = vec![2.0 * (x[0] - 3.0)];
            opt.step(&mut [&mut x], &[&g]);
        }
        assert!((x[0] - 3.0).abs() < 1e-3, "x = {}", x[0]);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut x = vec![0.5f32, -0.25, 1.5];
            let mut opt = Adam::<f32>::new(0.01, 0.5, 0.999);
            for k in 0..50 {
                let g: Vec<f32> = x.iter().map(|v| v * 0.3 + k as f32 * 0.01).collect();
                opt.step(&mut [&mut x], &[&g]);
            }
            x
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
