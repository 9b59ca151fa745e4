//! Minimal convolutional-network substrate: layers with explicit forward and
//! backward passes over (C, H, W) tensors.
//!
//! There is no autodiff tape; each network wires its own backward walk.
//! Gradients accumulate into plain arrays owned by the caller, so shared-
//! weight branches can run in parallel into private buffers and reduce in a
//! fixed order, keeping training byte-reproducible.

pub mod adam;
pub mod conv;
pub mod dense;
pub mod norm;
pub mod ops;

pub use adam::Adam;
pub use conv::{Conv2d, ConvGrads};
pub use dense::{Dense, DenseGrads};
pub use norm::{NormCache, NormGrads, SpatialNorm};

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;

/// Leaky-ReLU slope used across all networks.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Numerical floor for probability clamping in log terms.
pub const PROB_EPS: f64 = 1e-7;

/// He-style normal init: std = sqrt(2 / fan_in). Draw order is the element
/// order, so identical seeds give identical parameters.
pub fn he_matrix<F: Scalar>(rng: &mut ChaCha20Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<F> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_fn((rows, cols), |_| F::cast(dist.sample(rng)))
}

pub fn zeros_vec<F: Scalar>(len: usize) -> Array1<F> {
    Array1::zeros(len)
}

pub fn ones_vec<F: Scalar>(len: usize) -> Array1<F> {
    Array1::from_elem(len, F::one())
}

/// A named flat view of one parameter tensor, for checkpointing and audits.
pub struct ParamEntry<'a, F: Scalar> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [F],
}

impl<'a, F: Scalar> ParamEntry<'a, F> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: &'a [F]) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}
