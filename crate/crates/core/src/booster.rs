//! The multi-input boosting network: fuses the four coarse frontal
//! estimates (channel-concatenated to H×W×12) into one refined image.
//!
//! Layer ladder: resblock1 (two 5x5,12 convs) → conv1 (5x5,64) →
//! resblock2 (two 3x3,64 convs) → conv2 (3x3,32) → conv3 (3x3,3), all
//! stride 1 padding-preserving, leaky-ReLU and normalization between
//! layers, sigmoid output. Fully convolutional, so tiny inputs work for
//! 64-bit gradient checks.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::facedata::ImageTensor;
use crate::nn::ops::{
    concat_channels, leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, split_channels,
};
use crate::nn::{Conv2d, ConvGrads, NormCache, NormGrads, SpatialNorm};
use crate::scalar::Scalar;

/// x + norm_b(conv_b(lrelu(norm_a(conv_a(x))))), identity shortcut.
struct ResBlock<F: Scalar> {
    conv_a: Conv2d<F>,
    norm_a: SpatialNorm<F>,
    conv_b: Conv2d<F>,
    norm_b: SpatialNorm<F>,
}

struct ResBlockTrace<F: Scalar> {
    input: Array3<F>,
    cache_a: NormCache<F>,
    h_act: Array3<F>,
    cache_b: NormCache<F>,
}

#[derive(Clone)]
pub struct ResBlockGrads<F: Scalar> {
    conv_a: ConvGrads<F>,
    norm_a: NormGrads<F>,
    conv_b: ConvGrads<F>,
    norm_b: NormGrads<F>,
}

impl<F: Scalar> ResBlock<F> {
    fn new(rng: &mut ChaCha20Rng, channels: usize, k: usize) -> Self {
        Self {
            conv_a: Conv2d::new(rng, channels, channels, k, 1),
            norm_a: SpatialNorm::new(channels),
            conv_b: Conv2d::new(rng, channels, channels, k, 1),
            norm_b: SpatialNorm::new(channels),
        }
    }

    fn forward(&self, x: &Array3<F>) -> (Array3<F>, ResBlockTrace<F>) {
        let (na, cache_a) = self.norm_a.forward(&self.conv_a.forward(x));
        let h_act = leaky_relu(&na);
        let (nb, cache_b) = self.norm_b.forward(&self.conv_b.forward(&h_act));
        let out = x + &nb;
        (
            out,
            ResBlockTrace {
                input: x.clone(),
                cache_a,
                h_act,
                cache_b,
            },
        )
    }

    fn backward(&self, trace: &ResBlockTrace<F>, dy: &Array3<F>, grads: &mut ResBlockGrads<F>) -> Array3<F> {
        let d_convb_out = self.norm_b.backward(&trace.cache_b, dy, &mut grads.norm_b);
        let d_h_act = self.conv_b.backward(&trace.h_act, &d_convb_out, &mut grads.conv_b);
        let d_na = leaky_relu_backward(&trace.h_act, &d_h_act);
        let d_conva_out = self.norm_a.backward(&trace.cache_a, &d_na, &mut grads.norm_a);
        let mut dx = self.conv_a.backward(&trace.input, &d_conva_out, &mut grads.conv_a);
        dx.zip_mut_with(dy, |a, &b| *a = *a + b); // identity shortcut
        dx
    }

    fn param_count(&self) -> usize {
        self.conv_a.param_count()
            + self.norm_a.param_count()
            + self.conv_b.param_count()
            + self.norm_b.param_count()
    }

    fn grads(&self) -> ResBlockGrads<F> {
        ResBlockGrads {
            conv_a: self.conv_a.grads(),
            norm_a: self.norm_a.grads(),
            conv_b: self.conv_b.grads(),
            norm_b: self.norm_b.grads(),
        }
    }
}

impl<F: Scalar> ResBlockGrads<F> {
    fn add(&mut self, other: &Self) {
        self.conv_a.add(&other.conv_a);
        self.norm_a.add(&other.norm_a);
        self.conv_b.add(&other.conv_b);
        self.norm_b.add(&other.norm_b);
    }

    fn scale(&mut self, s: F) {
        self.conv_a.scale(s);
        self.norm_a.scale(s);
        self.conv_b.scale(s);
        self.norm_b.scale(s);
    }

    fn flat(&self) -> Vec<&[F]> {
        let mut out = self.conv_a.flat();
        out.extend(self.norm_a.flat());
        out.extend(self.conv_b.flat());
        out.extend(self.norm_b.flat());
        out
    }
}

/// One row of the layer audit table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRow {
    pub layer: String,
    pub input: String,
    pub filter: String,
    /// Output shape as height x width x channels.
    pub output: [usize; 3],
    pub params: usize,
}

pub struct Booster<F: Scalar> {
    rb1: ResBlock<F>,
    conv1: Conv2d<F>,
    norm1: SpatialNorm<F>,
    rb2: ResBlock<F>,
    conv2: Conv2d<F>,
    norm2: SpatialNorm<F>,
    conv3: Conv2d<F>,
}

pub struct BoosterTrace<F: Scalar> {
    rb1: ResBlockTrace<F>,
    rb1_out: Array3<F>,
    cache1: NormCache<F>,
    c1_act: Array3<F>,
    rb2: ResBlockTrace<F>,
    rb2_out: Array3<F>,
    cache2: NormCache<F>,
    c2_act: Array3<F>,
    out: Array3<F>,
}

impl<F: Scalar> BoosterTrace<F> {
    /// Shapes after each named layer, in ladder order.
    pub fn shape_ladder(&self) -> Vec<(usize, usize, usize)> {
        vec![
            self.rb1.input.dim(),
            self.rb1_out.dim(),
            self.c1_act.dim(),
            self.rb2_out.dim(),
            self.c2_act.dim(),
            self.out.dim(),
        ]
    }
}

pub struct BoosterGrads<F: Scalar> {
    rb1: ResBlockGrads<F>,
    conv1: ConvGrads<F>,
    norm1: NormGrads<F>,
    rb2: ResBlockGrads<F>,
    conv2: ConvGrads<F>,
    norm2: NormGrads<F>,
    conv3: ConvGrads<F>,
}

impl<F: Scalar> BoosterGrads<F> {
    pub fn add(&mut self, other: &Self) {
        self.rb1.add(&other.rb1);
        self.conv1.add(&other.conv1);
        self.norm1.add(&other.norm1);
        self.rb2.add(&other.rb2);
        self.conv2.add(&other.conv2);
        self.norm2.add(&other.norm2);
        self.conv3.add(&other.conv3);
    }

    pub fn scale(&mut self, s: F) {
        self.rb1.scale(s);
        self.conv1.scale(s);
        self.norm1.scale(s);
        self.rb2.scale(s);
        self.conv2.scale(s);
        self.norm2.scale(s);
        self.conv3.scale(s);
    }

    pub fn flat(&self) -> Vec<&[F]> {
        let mut out = self.rb1.flat();
        out.extend(self.conv1.flat());
        out.extend(self.norm1.flat());
        out.extend(self.rb2.flat());
        out.extend(self.conv2.flat());
        out.extend(self.norm2.flat());
        out.extend(self.conv3.flat());
        out
    }
}

const IN_CHANNELS: usize = 12; // four RGB images, channel-concatenated
const CONV1_CH: usize = 64;
const CONV2_CH: usize = 32;
const OUT_CH: usize = 3;

impl<F: Scalar> Booster<F> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Self {
            rb1: ResBlock::new(&mut rng, IN_CHANNELS, 5),
            conv1: Conv2d::new(&mut rng, IN_CHANNELS, CONV1_CH, 5, 1),
            norm1: SpatialNorm::new(CONV1_CH),
            rb2: ResBlock::new(&mut rng, CONV1_CH, 3),
            conv2: Conv2d::new(&mut rng, CONV1_CH, CONV2_CH, 3, 1),
            norm2: SpatialNorm::new(CONV2_CH),
            conv3: Conv2d::new(&mut rng, CONV2_CH, OUT_CH, 3, 1),
        }
    }

    fn concat_inputs(coarse: [&ImageTensor<F>; 4]) -> Result<Array3<F>> {
        let dims = coarse[0].dims();
        if dims.0 != 3 {
            return Err(Error::shape("booster input", "3 channels", format!("{}", dims.0)));
        }
        for img in &coarse {
            if img.dims() != dims {
                return Err(Error::shape(
                    "booster input",
                    format!("{dims:?}"),
                    format!("{:?}", img.dims()),
                ));
            }
        }
        Ok(concat_channels(&[
            coarse[0].data(),
            coarse[1].data(),
            coarse[2].data(),
            coarse[3].data(),
        ]))
    }

    /// Fuses four full-resolution coarse outputs into one refined image.
    /// Input order is the canonical quadruple order.
    pub fn forward(&self, coarse: [&ImageTensor<F>; 4]) -> Result<ImageTensor<F>> {
        self.forward_trace(coarse).map(|(out, _)| out)
    }

    pub fn forward_trace(
        &self,
        coarse: [&ImageTensor<F>; 4],
    ) -> Result<(ImageTensor<F>, BoosterTrace<F>)> {
        let x = Self::concat_inputs(coarse)?;
        let (rb1_out, rb1) = self.rb1.forward(&x);
        let (n1, cache1) = self.norm1.forward(&self.conv1.forward(&rb1_out));
        let c1_act = leaky_relu(&n1);
        let (rb2_out, rb2) = self.rb2.forward(&c1_act);
        let (n2, cache2) = self.norm2.forward(&self.conv2.forward(&rb2_out));
        let c2_act = leaky_relu(&n2);
        let out = sigmoid(&self.conv3.forward(&c2_act));
        Ok((
            ImageTensor::from_raw(out.clone()),
            BoosterTrace {
                rb1,
                rb1_out,
                cache1,
                c1_act,
                rb2,
                rb2_out,
                cache2,
                c2_act,
                out,
            },
        ))
    }

    /// Backpropagates the output gradient; returns gradients for the four
    /// input images in order.
    pub fn backward(
        &self,
        trace: &BoosterTrace<F>,
        d_out: &Array3<F>,
        grads: &mut BoosterGrads<F>,
    ) -> [Array3<F>; 4] {
        let d_pre3 = sigmoid_backward(&trace.out, d_out);
        let d_c2act = self.conv3.backward(&trace.c2_act, &d_pre3, &mut grads.conv3);
        let d_n2 = leaky_relu_backward(&trace.c2_act, &d_c2act);
        let d_conv2_out = self.norm2.backward(&trace.cache2, &d_n2, &mut grads.norm2);
        let d_rb2out = self.conv2.backward(&trace.rb2_out, &d_conv2_out, &mut grads.conv2);
        let d_c1act = self.rb2.backward(&trace.rb2, &d_rb2out, &mut grads.rb2);
        let d_n1 = leaky_relu_backward(&trace.c1_act, &d_c1act);
        let d_conv1_out = self.norm1.backward(&trace.cache1, &d_n1, &mut grads.norm1);
        let d_rb1out = self.conv1.backward(&trace.rb1_out, &d_conv1_out, &mut grads.conv1);
        let d_x = self.rb1.backward(&trace.rb1, &d_rb1out, &mut grads.rb1);
        let parts = split_channels(&d_x, &[3, 3, 3, 3]);
        parts.try_into().map_err(|_| ()).expect("four parts")
    }

    pub fn grads(&self) -> BoosterGrads<F> {
        BoosterGrads {
            rb1: self.rb1.grads(),
            conv1: self.conv1.grads(),
            norm1: self.norm1.grads(),
            rb2: self.rb2.grads(),
            conv2: self.conv2.grads(),
            norm2: self.norm2.grads(),
            conv3: self.conv3.grads(),
        }
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        out.extend(self.rb1.conv_a.flat_mut());
        out.extend(self.rb1.norm_a.flat_mut());
        out.extend(self.rb1.conv_b.flat_mut());
        out.extend(self.rb1.norm_b.flat_mut());
        out.extend(self.conv1.flat_mut());
        out.extend(self.norm1.flat_mut());
        out.extend(self.rb2.conv_a.flat_mut());
        out.extend(self.rb2.norm_a.flat_mut());
        out.extend(self.rb2.conv_b.flat_mut());
        out.extend(self.rb2.norm_b.flat_mut());
        out.extend(self.conv2.flat_mut());
        out.extend(self.norm2.flat_mut());
        out.extend(self.conv3.flat_mut());
        out
    }

    pub fn named_params(&self) -> Vec<(String, Vec<usize>, Vec<F>)> {
        let mut out = Vec::new();
        let conv = |name: &str, c: &Conv2d<F>, out: &mut Vec<(String, Vec<usize>, Vec<F>)>| {
            out.push((format!("{name}/weight"), c.logical_weight_shape(), c.w.as_slice().unwrap().to_vec()));
            out.push((format!("{name}/bias"), vec![c.cout], c.b.to_vec()));
        };
        let norm = |name: &str, m: &SpatialNorm<F>, out: &mut Vec<(String, Vec<usize>, Vec<F>)>| {
            out.push((format!("{name}/gamma"), vec![m.gamma.len()], m.gamma.to_vec()));
            out.push((format!("{name}/beta"), vec![m.beta.len()], m.beta.to_vec()));
        };
        conv("resblock1/conv_a", &self.rb1.conv_a, &mut out);
        norm("resblock1/norm_a", &self.rb1.norm_a, &mut out);
        conv("resblock1/conv_b", &self.rb1.conv_b, &mut out);
        norm("resblock1/norm_b", &self.rb1.norm_b, &mut out);
        conv("conv1", &self.conv1, &mut out);
        norm("norm1", &self.norm1, &mut out);
        conv("resblock2/conv_a", &self.rb2.conv_a, &mut out);
        norm("resblock2/norm_a", &self.rb2.norm_a, &mut out);
        conv("resblock2/conv_b", &self.rb2.conv_b, &mut out);
        norm("resblock2/norm_b", &self.rb2.norm_b, &mut out);
        conv("conv2", &self.conv2, &mut out);
        norm("norm2", &self.norm2, &mut out);
        conv("conv3", &self.conv3, &mut out);
        out
    }

    pub fn save_into(&self, prefix: &str, container: &mut Container<F>) {
        for (name, shape, data) in self.named_params() {
            container.push(format!("{prefix}/{name}"), shape, data);
        }
        let table = serde_json::to_value(self.parameter_audit(128)).expect("table serializes");
        container.meta["arch"][prefix] = table;
    }

    pub fn load_from(&mut self, prefix: &str, container: &Container<F>) -> Result<()> {
        let stored = &container.meta["arch"][prefix];
        if !stored.is_null() {
            let stored_table: Vec<AuditRow> = serde_json::from_value(stored.clone())
                .map_err(|e| Error::checkpoint("<container>", format!("bad arch table: {e}")))?;
            if stored_table != self.parameter_audit(128) {
                return Err(Error::checkpoint(
                    "<container>",
                    format!("stored '{prefix}' architecture does not match the configured network"),
                ));
            }
        }
        let expected: Vec<(String, Vec<usize>)> = self
            .named_params()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        let mut values = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            values.push(container.require(&format!("{prefix}/{name}"), shape)?.to_vec());
        }
        for (slot, value) in self.flat_mut().into_iter().zip(values) {
            slot.copy_from_slice(&value);
        }
        Ok(())
    }

    /// Per-layer filter/shape/count table for a given input resolution.
    pub fn parameter_audit(&self, input_size: usize) -> Vec<AuditRow> {
        let s = input_size;
        vec![
            AuditRow {
                layer: "resblock1".into(),
                input: "concatenated image".into(),
                filter: "5x5, 12 x2".into(),
                output: [s, s, 12],
                params: self.rb1.param_count(),
            },
            AuditRow {
                layer: "conv1".into(),
                input: "resblock1".into(),
                filter: "5x5, 64".into(),
                output: [s, s, 64],
                params: self.conv1.param_count() + self.norm1.param_count(),
            },
            AuditRow {
                layer: "resblock2".into(),
                input: "conv1".into(),
                filter: "3x3, 64 x2".into(),
                output: [s, s, 64],
                params: self.rb2.param_count(),
            },
            AuditRow {
                layer: "conv2".into(),
                input: "resblock2".into(),
                filter: "3x3, 32".into(),
                output: [s, s, 32],
                params: self.conv2.param_count() + self.norm2.param_count(),
            },
            AuditRow {
                layer: "conv3".into(),
                input: "conv2".into(),
                filter: "3x3, 3".into(),
                output: [s, s, 3],
                params: self.conv3.param_count(),
            },
        ]
    }

    pub fn param_count(&self) -> usize {
        self.parameter_audit(128).iter().map(|r| r.params).sum()
    }

    #[cfg(test)]
    fn zero_resblock_convs(&mut self, which: usize) {
        let rb = if which == 0 { &mut self.rb1 } else { &mut self.rb2 };
        rb.conv_a.w.fill(F::zero());
        rb.conv_a.b.fill(F::zero());
        rb.conv_b.w.fill(F::zero());
        rb.conv_b.b.fill(F::zero());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_inputs<FS: Scalar>(size: usize) -> [ImageTensor<FS>; 4] {
        std::array::from_fn(|i| {
            let data = Array3::from_shape_fn((3, size, size), |(c, y, x)| {
                FS::cast((((i + 1) * 37 + c * 13 + y * 7 + x) % 101) as f64 / 101.0)
            });
            ImageTensor::new(data).unwrap()
        })
    }

    #[test]
    fn output_shape_range_and_ladder() {
        let b = Booster::<f32>::new(1);
        let inputs = test_inputs::<f32>(32);
        let refs: [&ImageTensor<f32>; 4] = std::array::from_fn(|i| &inputs[i]);
        let (out, trace) = b.forward_trace(refs).unwrap();
        assert_eq!(out.dims(), (3, 32, 32));
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(
            trace.shape_ladder(),
            vec![
                (12, 32, 32),
                (12, 32, 32),
                (64, 32, 32),
                (64, 32, 32),
                (32, 32, 32),
                (3, 32, 32)
            ]
        );
    }

    #[test]
    fn deterministic_across_calls() {
        let b = Booster::<f32>::new(2);
        let inputs = test_inputs::<f32>(16);
        let refs: [&ImageTensor<f32>; 4] = std::array::from_fn(|i| &inputs[i]);
        let a = b.forward(refs).unwrap();
        let c = b.forward(refs).unwrap();
        assert_eq!(a.data(), c.data());
    }

    #[test]
    fn input_order_matters() {
        let b = Booster::<f32>::new(3);
        let inputs = test_inputs::<f32>(16);
        let fwd = b
            .forward([&inputs[0], &inputs[1], &inputs[2], &inputs[3]])
            .unwrap();
        let swapped = b
            .forward([&inputs[1], &inputs[0], &inputs[2], &inputs[3]])
            .unwrap();
        assert_ne!(fwd.data(), swapped.data());
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let b = Booster::<f32>::new(4);
        let inputs = test_inputs::<f32>(16);
        let odd = test_inputs::<f32>(32);
        let err = b
            .forward([&inputs[0], &inputs[1], &inputs[2], &odd[0]])
            .unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn audit_rows_match_the_configuration_table() {
        let b = Booster::<f32>::new(0);
        let rows = b.parameter_audit(128);
        assert_eq!(rows[0].filter, "5x5, 12 x2");
        assert_eq!(rows[0].output, [128, 128, 12]);
        assert_eq!(rows[1].filter, "5x5, 64");
        assert_eq!(rows[1].output, [128, 128, 64]);
        assert_eq!(rows[2].filter, "3x3, 64 x2");
        assert_eq!(rows[2].output, [128, 128, 64]);
        assert_eq!(rows[3].filter, "3x3, 32");
        assert_eq!(rows[3].output, [128, 128, 32]);
        assert_eq!(rows[4].filter, "3x3, 3");
        assert_eq!(rows[4].output, [128, 128, 3]);
    }

    #[test]
    fn parameter_count_matches_closed_form_kernel_arithmetic() {
        // Independent hand computation from the layer table:
        // conv params = cout*cin*k*k + cout, norm params = 2*channels.
        let rb = |ch: usize, k: usize| 2 * (ch * ch * k * k + ch) + 2 * (2 * ch);
        let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
        let norm = |ch: usize| 2 * ch;
        let expected = rb(12, 5)
            + conv(12, 64, 5)
            + norm(64)
            + rb(64, 3)
            + conv(64, 32, 3)
            + norm(32)
            + conv(32, 3, 3);
        let b = Booster::<f32>::new(0);
        assert_eq!(b.param_count(), expected);
        assert_eq!(expected, 120_171);
    }

    #[test]
    fn zeroed_resblock_is_the_identity_map() {
        let mut b = Booster::<f64>::new(5);
        b.zero_resblock_convs(0);
        let x = Array3::from_shape_fn((12, 8, 8), |(c, y, xx)| ((c + y * 3 + xx) % 9) as f64 / 9.0 + 0.05);
        let (out, _) = b.rb1.forward(&x);
        assert_eq!(out, x, "resblock with zeroed convs must pass input through");
    }

    #[test]
    fn backward_matches_finite_differences_on_8x8() {
        let b = Booster::<f64>::new(6);
        let inputs = test_inputs::<f64>(8);
        let refs: [&ImageTensor<f64>; 4] = std::array::from_fn(|i| &inputs[i]);
        let coeff = Array3::from_shape_fn((3, 8, 8), |(c, y, x)| ((c * 3 + y + 2 * x) % 7) as f64 / 7.0 - 0.4);
        let probe = |b: &Booster<f64>, imgs: [&ImageTensor<f64>; 4]| -> f64 {
            (b.forward(imgs).unwrap().data() * &coeff).sum()
        };

        let (_, trace) = b.forward_trace(refs).unwrap();
        let mut grads = b.grads();
        let d_inputs = b.backward(&trace, &coeff, &mut grads);

        // Parameter gradients.
        let analytic = grads.flat();
        let mut b2 = Booster::<f64>::new(6);
        let eps = 1e-5;
        let mut max_rel: f64 = 0.0;
        for t in 0..analytic.len() {
            if analytic[t].is_empty() {
                continue;
            }
            let idx = (t * 2654435761) % analytic[t].len();
            let a = analytic[t][idx];
            let orig = b2.flat_mut()[t][idx];
            b2.flat_mut()[t][idx] = orig + eps;
            let up = probe(&b2, refs);
            b2.flat_mut()[t][idx] = orig - eps;
            let down = probe(&b2, refs);
            b2.flat_mut()[t][idx] = orig;
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(a.abs()).max(1e-6);
            max_rel = max_rel.max(((fd - a) / denom).abs());
        }
        assert!(max_rel <= 1e-3, "max relative error {max_rel:.2e}");

        // Input gradients for one member.
        let mut bumped = inputs[2].clone();
        for &(c, y, x) in &[(0usize, 0usize, 0usize), (2, 7, 7), (1, 3, 5)] {
            let orig = bumped.get(c, y, x);
            bumped.set(c, y, x, orig + eps);
            let up = probe(&b, [&inputs[0], &inputs[1], &bumped, &inputs[3]]);
            bumped.set(c, y, x, orig - eps);
            let down = probe(&b, [&inputs[0], &inputs[1], &bumped, &inputs[3]]);
            bumped.set(c, y, x, orig);
            let fd = (up - down) / (2.0 * eps);
            let a = d_inputs[2][(c, y, x)];
            let denom = fd.abs().max(a.abs()).max(1e-6);
            assert!(((fd - a) / denom).abs() <= 1e-3, "input grad ({c},{y},{x})");
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("booster.bgnc");
        let b = Booster::<f32>::new(11);
        let mut container = Container::new(serde_json::json!({"arch": {}}));
        b.save_into("booster", &mut container);
        container.save(&path).unwrap();
        let loaded = Container::<f32>::load(&path).unwrap();
        let mut fresh = Booster::<f32>::new(999);
        fresh.load_from("booster", &loaded).unwrap();
        let inputs = test_inputs::<f32>(16);
        let refs: [&ImageTensor<f32>; 4] = std::array::from_fn(|i| &inputs[i]);
        assert_eq!(b.forward(refs).unwrap().data(), fresh.forward(refs).unwrap().data());
    }
}
