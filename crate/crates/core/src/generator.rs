//! The coarse multi-occlusion frontal-view generator: a shared-weight
//! encoder-decoder applied independently to each of the four occluded
//! inputs, emitting a scale pyramid (full, half, quarter resolution).

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::facedata::{ImageTensor, OccludedQuadruple};
use crate::nn::ops::{
    concat_channels, leaky_relu, leaky_relu_backward, leaky_relu_vec, leaky_relu_vec_backward,
    sigmoid, sigmoid_backward, split_channels, upsample2x, upsample2x_backward,
};
use crate::nn::{Conv2d, ConvGrads, Dense, DenseGrads, NormCache, NormGrads, SpatialNorm};
use crate::scalar::Scalar;

/// Architecture knobs. The canonical configuration is fixed; smaller
/// variants exist so gradient checks can run at 64-bit on tiny inputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub input_size: usize,
    pub in_channels: usize,
    /// Encoder stage widths; stage 1 is stride 1, the rest stride 2.
    pub enc_channels: Vec<usize>,
    /// Decoder stage widths, same stage count as the encoder.
    pub dec_channels: Vec<usize>,
    /// Dimension of the flat bottleneck vector.
    pub bottleneck_dim: usize,
    /// Channels of the bottleneck feature map fed to the decoder.
    pub bottleneck_channels: usize,
    pub kernel: usize,
}

impl GeneratorConfig {
    /// The full-size network: 5 encoder stages down to 8x8, a 256-d
    /// bottleneck, 5 decoder stages with skip connections, side outputs at
    /// quarter and half resolution.
    pub fn canonical() -> Self {
        Self {
            input_size: 128,
            in_channels: 3,
            enc_channels: vec![64, 64, 128, 256, 512],
            dec_channels: vec![128, 64, 48, 24, 16],
            bottleneck_dim: 256,
            bottleneck_channels: 64,
            kernel: 3,
        }
    }

    /// Tiny variant with the same wiring, for 64-bit gradient checks.
    pub fn miniature(input_size: usize) -> Self {
        Self {
            input_size,
            in_channels: 3,
            enc_channels: vec![8, 12, 16],
            dec_channels: vec![16, 12, 8],
            bottleneck_dim: 32,
            bottleneck_channels: 8,
            kernel: 3,
        }
    }

    pub fn stages(&self) -> usize {
        self.enc_channels.len()
    }

    pub fn bottom_size(&self) -> usize {
        self.input_size >> (self.stages() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stages();
        if n < 3 {
            return Err(Error::config("enc_channels", "need at least 3 stages"));
        }
        if self.dec_channels.len() != n {
            return Err(Error::config(
                "dec_channels",
                "decoder stage count must match encoder",
            ));
        }
        if self.input_size % (1 << (n - 1)) != 0 || self.bottom_size() < 2 {
            return Err(Error::config(
                "input_size",
                format!("must be a multiple of {} with a bottom of at least 2", 1 << (n - 1)),
            ));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config("kernel", "must be odd"));
        }
        Ok(())
    }
}

/// Frontal-view estimates at full, half, and quarter resolution
/// (128/64/32 for the canonical configuration). The half and quarter images
/// are decoder side-outputs, not downsamples of the full output.
#[derive(Debug, Clone)]
pub struct MultiScaleOutput<F: Scalar> {
    pub full: ImageTensor<F>,
    pub half: ImageTensor<F>,
    pub quarter: ImageTensor<F>,
}

impl<F: Scalar> MultiScaleOutput<F> {
    pub fn scales(&self) -> [&ImageTensor<F>; 3] {
        [&self.full, &self.half, &self.quarter]
    }
}

/// One row of the architecture table emitted by `describe`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub kernel: String,
    pub stride: usize,
    /// Output shape as height x width x channels.
    pub output: [usize; 3],
    pub params: usize,
}

pub struct CoarseGenerator<F: Scalar> {
    pub cfg: GeneratorConfig,
    enc_convs: Vec<Conv2d<F>>,
    enc_norms: Vec<SpatialNorm<F>>,
    fc_down: Dense<F>,
    fc_up: Dense<F>,
    dec_convs: Vec<Conv2d<F>>,
    dec_norms: Vec<SpatialNorm<F>>,
    head_quarter: Conv2d<F>,
    head_half: Conv2d<F>,
    head_full: Conv2d<F>,
}

/// Forward intermediates needed by the backward pass.
pub struct GeneratorTrace<F: Scalar> {
    input: Array3<F>,
    enc_acts: Vec<Array3<F>>,
    enc_caches: Vec<NormCache<F>>,
    flat: Vec<F>,
    z_act: Vec<F>,
    up_act: Vec<F>,
    dec_inputs: Vec<Array3<F>>,
    dec_acts: Vec<Array3<F>>,
    dec_caches: Vec<NormCache<F>>,
    out_full: Array3<F>,
    out_half: Array3<F>,
    out_quarter: Array3<F>,
}

/// Gradient accumulator matching `CoarseGenerator`'s parameters.
pub struct GeneratorGrads<F: Scalar> {
    enc_convs: Vec<ConvGrads<F>>,
    enc_norms: Vec<NormGrads<F>>,
    fc_down: DenseGrads<F>,
    fc_up: DenseGrads<F>,
    dec_convs: Vec<ConvGrads<F>>,
    dec_norms: Vec<NormGrads<F>>,
    head_quarter: ConvGrads<F>,
    head_half: ConvGrads<F>,
    head_full: ConvGrads<F>,
}

impl<F: Scalar> GeneratorGrads<F> {
    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.enc_convs.iter_mut().zip(&other.enc_convs) {
            a.add(b);
        }
        for (a, b) in self.enc_norms.iter_mut().zip(&other.enc_norms) {
            a.add(b);
        }
        self.fc_down.add(&other.fc_down);
        self.fc_up.add(&other.fc_up);
        for (a, b) in self.dec_convs.iter_mut().zip(&other.dec_convs) {
            a.add(b);
        }
        for (a, b) in self.dec_norms.iter_mut().zip(&other.dec_norms) {
            a.add(b);
        }
        self.head_quarter.add(&other.head_quarter);
        self.head_half.add(&other.head_half);
        self.head_full.add(&other.head_full);
    }

    pub fn scale(&mut self, s: F) {
        for g in &mut self.enc_convs {
            g.scale(s);
        }
        for g in &mut self.enc_norms {
            g.scale(s);
        }
        self.fc_down.scale(s);
        self.fc_up.scale(s);
        for g in &mut self.dec_convs {
            g.scale(s);
        }
        for g in &mut self.dec_norms {
            g.scale(s);
        }
        self.head_quarter.scale(s);
        self.head_half.scale(s);
        self.head_full.scale(s);
    }

    /// Flat gradient slices in the network's fixed parameter order.
    pub fn flat(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for (c, n) in self.enc_convs.iter().zip(&self.enc_norms) {
            out.extend(c.flat());
            out.extend(n.flat());
        }
        out.extend(self.fc_down.flat());
        out.extend(self.fc_up.flat());
        for (c, n) in self.dec_convs.iter().zip(&self.dec_norms) {
            out.extend(c.flat());
            out.extend(n.flat());
        }
        out.extend(self.head_quarter.flat());
        out.extend(self.head_half.flat());
        out.extend(self.head_full.flat());
        out
    }
}

impl<F: Scalar> CoarseGenerator<F> {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = cfg.stages();
        let bottom = cfg.bottom_size();
        let k = cfg.kernel;

        let mut enc_convs = Vec::with_capacity(n);
        let mut enc_norms = Vec::with_capacity(n);
        for i in 0..n {
            let cin = if i == 0 { cfg.in_channels } else { cfg.enc_channels[i - 1] };
            let stride = if i == 0 { 1 } else { 2 };
            enc_convs.push(Conv2d::new(&mut rng, cin, cfg.enc_channels[i], k, stride));
            enc_norms.push(SpatialNorm::new(cfg.enc_channels[i]));
        }

        let flat_len = cfg.enc_channels[n - 1] * bottom * bottom;
        let fc_down = Dense::new(&mut rng, flat_len, cfg.bottleneck_dim);
        let fc_up = Dense::new(
            &mut rng,
            cfg.bottleneck_dim,
            cfg.bottleneck_channels * bottom * bottom,
        );

        let mut dec_convs = Vec::with_capacity(n);
        let mut dec_norms = Vec::with_capacity(n);
        for kdx in 0..n {
            let carry = if kdx == 0 { cfg.bottleneck_channels } else { cfg.dec_channels[kdx - 1] };
            let skip = cfg.enc_channels[n - 1 - kdx];
            dec_convs.push(Conv2d::new(&mut rng, carry + skip, cfg.dec_channels[kdx], k, 1));
            dec_norms.push(SpatialNorm::new(cfg.dec_channels[kdx]));
        }

        let (kq, kh) = (n - 3, n - 2);
        let head_quarter = Conv2d::new(&mut rng, cfg.dec_channels[kq], cfg.in_channels, 1, 1);
        let head_half = Conv2d::new(&mut rng, cfg.dec_channels[kh], cfg.in_channels, 1, 1);
        let head_full = Conv2d::new(&mut rng, cfg.dec_channels[n - 1], cfg.in_channels, 1, 1);

        Ok(Self {
            cfg,
            enc_convs,
            enc_norms,
            fc_down,
            fc_up,
            dec_convs,
            dec_norms,
            head_quarter,
            head_half,
            head_full,
        })
    }

    fn check_input(&self, x: &Array3<F>) -> Result<()> {
        let want = (self.cfg.in_channels, self.cfg.input_size, self.cfg.input_size);
        if x.dim() != want {
            return Err(Error::shape(
                "generator input",
                format!("{want:?}"),
                format!("{:?}", x.dim()),
            ));
        }
        Ok(())
    }

    /// Inference-mode forward pass (no trace retained).
    pub fn forward(&self, occluded: &ImageTensor<F>) -> Result<MultiScaleOutput<F>> {
        self.forward_trace(occluded).map(|(out, _)| out)
    }

    /// Forward pass retaining everything the backward pass needs.
    pub fn forward_trace(
        &self,
        occluded: &ImageTensor<F>,
    ) -> Result<(MultiScaleOutput<F>, GeneratorTrace<F>)> {
        self.check_input(occluded.data())?;
        let n = self.cfg.stages();
        let bottom = self.cfg.bottom_size();
        let r = self.cfg.input_size;

        let mut enc_acts: Vec<Array3<F>> = Vec::with_capacity(n);
        let mut enc_caches = Vec::with_capacity(n);
        for i in 0..n {
            let input = if i == 0 { occluded.data() } else { &enc_acts[i - 1] };
            let pre = self.enc_convs[i].forward(input);
            let (normed, cache) = self.enc_norms[i].forward(&pre);
            enc_acts.push(leaky_relu(&normed));
            enc_caches.push(cache);
        }

        let flat = enc_acts[n - 1].as_slice().unwrap().to_vec();
        let z_act = leaky_relu_vec(&self.fc_down.forward(&flat));
        let up_act = leaky_relu_vec(&self.fc_up.forward(&z_act));
        let mut carry = Array3::from_shape_vec(
            (self.cfg.bottleneck_channels, bottom, bottom),
            up_act.clone(),
        )
        .unwrap();

        let mut dec_inputs = Vec::with_capacity(n);
        let mut dec_acts: Vec<Array3<F>> = Vec::with_capacity(n);
        let mut dec_caches = Vec::with_capacity(n);
        let mut out_full = None;
        let mut out_half = None;
        let mut out_quarter = None;
        for kdx in 0..n {
            let skip = &enc_acts[n - 1 - kdx];
            let cat = concat_channels(&[&carry, skip]);
            let pre = self.dec_convs[kdx].forward(&cat);
            let (normed, cache) = self.dec_norms[kdx].forward(&pre);
            let act = leaky_relu(&normed);
            dec_inputs.push(cat);
            dec_caches.push(cache);

            let res = bottom << kdx;
            if res == r / 4 {
                out_quarter = Some(sigmoid(&self.head_quarter.forward(&act)));
            }
            if res == r / 2 {
                out_half = Some(sigmoid(&self.head_half.forward(&act)));
            }
            if kdx == n - 1 {
                out_full = Some(sigmoid(&self.head_full.forward(&act)));
            } else {
                carry = upsample2x(&act);
            }
            dec_acts.push(act);
        }

        let out_full = out_full.expect("full head always taken");
        let out_half = out_half.expect("half resolution always visited");
        let out_quarter = out_quarter.expect("quarter resolution always visited");
        let out = MultiScaleOutput {
            full: ImageTensor::from_raw(out_full.clone()),
            half: ImageTensor::from_raw(out_half.clone()),
            quarter: ImageTensor::from_raw(out_quarter.clone()),
        };
        let trace = GeneratorTrace {
            input: occluded.data().clone(),
            enc_acts,
            enc_caches,
            flat,
            z_act,
            up_act,
            dec_inputs,
            dec_acts,
            dec_caches,
            out_full,
            out_half,
            out_quarter,
        };
        Ok((out, trace))
    }

    /// Applies the same parameters to each quadruple member, in order.
    pub fn forward_quadruple(&self, quad: &OccludedQuadruple<F>) -> Result<[MultiScaleOutput<F>; 4]> {
        let outs: Vec<Result<MultiScaleOutput<F>>> =
            quad.images.par_iter().map(|img| self.forward(img)).collect();
        let mut done = Vec::with_capacity(4);
        for o in outs {
            done.push(o?);
        }
        Ok(done.try_into().map_err(|_| ()).expect("four members"))
    }

    /// Backpropagates per-scale output gradients, accumulating parameter
    /// gradients into `grads`.
    pub fn backward(
        &self,
        trace: &GeneratorTrace<F>,
        d_full: &Array3<F>,
        d_half: &Array3<F>,
        d_quarter: &Array3<F>,
        grads: &mut GeneratorGrads<F>,
    ) {
        let n = self.cfg.stages();
        let bottom = self.cfg.bottom_size();
        let r = self.cfg.input_size;

        // Encoder output gradients, filled in while walking the decoder.
        let mut d_enc: Vec<Option<Array3<F>>> = (0..n).map(|_| None).collect();
        let mut d_carry: Option<Array3<F>> = None; // grad on upsample output feeding stage k+1

        for kdx in (0..n).rev() {
            let act = &trace.dec_acts[kdx];
            let (c, h, w) = act.dim();
            let mut d_act = Array3::<F>::zeros((c, h, w));
            let res = bottom << kdx;

            if kdx == n - 1 {
                let d_pre = sigmoid_backward(&trace.out_full, d_full);
                let dx = self.head_full.backward(act, &d_pre, &mut grads.head_full);
                d_act.zip_mut_with(&dx, |a, &b| *a = *a + b);
            }
            if res == r / 2 {
                let d_pre = sigmoid_backward(&trace.out_half, d_half);
                let dx = self.head_half.backward(act, &d_pre, &mut grads.head_half);
                d_act.zip_mut_with(&dx, |a, &b| *a = *a + b);
            }
            if res == r / 4 {
                let d_pre = sigmoid_backward(&trace.out_quarter, d_quarter);
                let dx = self.head_quarter.backward(act, &d_pre, &mut grads.head_quarter);
                d_act.zip_mut_with(&dx, |a, &b| *a = *a + b);
            }
            if kdx < n - 1 {
                let d_up = d_carry.take().expect("carry grad from stage above");
                let dx = upsample2x_backward(&d_up);
                d_act.zip_mut_with(&dx, |a, &b| *a = *a + b);
            }

            let d_norm_out = leaky_relu_backward(act, &d_act);
            let d_conv_out = self.dec_norms[kdx].backward(&trace.dec_caches[kdx], &d_norm_out, &mut grads.dec_norms[kdx]);
            let d_cat = self.dec_convs[kdx].backward(&trace.dec_inputs[kdx], &d_conv_out, &mut grads.dec_convs[kdx]);

            let carry_ch = if kdx == 0 {
                self.cfg.bottleneck_channels
            } else {
                self.cfg.dec_channels[kdx - 1]
            };
            let skip_ch = self.cfg.enc_channels[n - 1 - kdx];
            let mut parts = split_channels(&d_cat, &[carry_ch, skip_ch]).into_iter();
            let (d_c, d_skip) = (parts.next().unwrap(), parts.next().unwrap());
            match &mut d_enc[n - 1 - kdx] {
                Some(existing) => existing.zip_mut_with(&d_skip, |a, &b| *a = *a + b),
                slot => *slot = Some(d_skip),
            }
            if kdx > 0 {
                d_carry = Some(d_c);
            } else {
                // Bottleneck path: reshaped fc_up output.
                let d_up_act: Vec<F> = d_c.as_slice().unwrap().to_vec();
                let d_up_pre = leaky_relu_vec_backward(&trace.up_act, &d_up_act);
                let d_z_act = self.fc_up.backward(&trace.z_act, &d_up_pre, &mut grads.fc_up);
                let d_z_pre = leaky_relu_vec_backward(&trace.z_act, &d_z_act);
                let d_flat = self.fc_down.backward(&trace.flat, &d_z_pre, &mut grads.fc_down);
                let d_bottom = Array3::from_shape_vec(
                    (self.cfg.enc_channels[n - 1], bottom, bottom),
                    d_flat,
                )
                .unwrap();
                match &mut d_enc[n - 1] {
                    Some(existing) => existing.zip_mut_with(&d_bottom, |a, &b| *a = *a + b),
                    slot => *slot = Some(d_bottom),
                }
            }
        }

        // Encoder walk, deepest stage first.
        let mut downstream: Option<Array3<F>> = None;
        for i in (0..n).rev() {
            let mut d_act = d_enc[i].take().unwrap_or_else(|| {
                let (c, h, w) = trace.enc_acts[i].dim();
                Array3::zeros((c, h, w))
            });
            if let Some(d) = downstream.take() {
                d_act.zip_mut_with(&d, |a, &b| *a = *a + b);
            }
            let d_norm_out = leaky_relu_backward(&trace.enc_acts[i], &d_act);
            let d_conv_out = self.enc_norms[i].backward(&trace.enc_caches[i], &d_norm_out, &mut grads.enc_norms[i]);
            let input = if i == 0 { &trace.input } else { &trace.enc_acts[i - 1] };
            let d_input = self.enc_convs[i].backward(input, &d_conv_out, &mut grads.enc_convs[i]);
            if i > 0 {
                downstream = Some(d_input);
            }
        }
    }

    pub fn grads(&self) -> GeneratorGrads<F> {
        GeneratorGrads {
            enc_convs: self.enc_convs.iter().map(|c| c.grads()).collect(),
            enc_norms: self.enc_norms.iter().map(|m| m.grads()).collect(),
            fc_down: self.fc_down.grads(),
            fc_up: self.fc_up.grads(),
            dec_convs: self.dec_convs.iter().map(|c| c.grads()).collect(),
            dec_norms: self.dec_norms.iter().map(|m| m.grads()).collect(),
            head_quarter: self.head_quarter.grads(),
            head_half: self.head_half.grads(),
            head_full: self.head_full.grads(),
        }
    }

    /// Mutable flat parameter slices in the fixed order shared with
    /// `GeneratorGrads::flat`.
    pub fn flat_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for (c, m) in self.enc_convs.iter_mut().zip(self.enc_norms.iter_mut()) {
            out.extend(c.flat_mut());
            out.extend(m.flat_mut());
        }
        out.extend(self.fc_down.flat_mut());
        out.extend(self.fc_up.flat_mut());
        for (c, m) in self.dec_convs.iter_mut().zip(self.dec_norms.iter_mut()) {
            out.extend(c.flat_mut());
            out.extend(m.flat_mut());
        }
        out.extend(self.head_quarter.flat_mut());
        out.extend(self.head_half.flat_mut());
        out.extend(self.head_full.flat_mut());
        out
    }

    /// Parameter names, shapes, and data in fixed order.
    pub fn named_params(&self) -> Vec<(String, Vec<usize>, Vec<F>)> {
        let mut out = Vec::new();
        let conv_entries = |name: String, c: &Conv2d<F>, out: &mut Vec<(String, Vec<usize>, Vec<F>)>| {
            out.push((format!("{name}/weight"), c.logical_weight_shape(), c.w.as_slice().unwrap().to_vec()));
            out.push((format!("{name}/bias"), vec![c.cout], c.b.to_vec()));
        };
        let norm_entries = |name: String, m: &SpatialNorm<F>, out: &mut Vec<(String, Vec<usize>, Vec<F>)>| {
            out.push((format!("{name}/gamma"), vec![m.gamma.len()], m.gamma.to_vec()));
            out.push((format!("{name}/beta"), vec![m.beta.len()], m.beta.to_vec()));
        };
        for (i, (c, m)) in self.enc_convs.iter().zip(&self.enc_norms).enumerate() {
            conv_entries(format!("enc{}/conv", i + 1), c, &mut out);
            norm_entries(format!("enc{}/norm", i + 1), m, &mut out);
        }
        out.push(("bottleneck/fc_down/weight".into(), vec![self.fc_down.output_dim(), self.fc_down.input_dim()], self.fc_down.w.as_slice().unwrap().to_vec()));
        out.push(("bottleneck/fc_down/bias".into(), vec![self.fc_down.output_dim()], self.fc_down.b.to_vec()));
        out.push(("bottleneck/fc_up/weight".into(), vec![self.fc_up.output_dim(), self.fc_up.input_dim()], self.fc_up.w.as_slice().unwrap().to_vec()));
        out.push(("bottleneck/fc_up/bias".into(), vec![self.fc_up.output_dim()], self.fc_up.b.to_vec()));
        for (i, (c, m)) in self.dec_convs.iter().zip(&self.dec_norms).enumerate() {
            conv_entries(format!("dec{}/conv", i + 1), c, &mut out);
            norm_entries(format!("dec{}/norm", i + 1), m, &mut out);
        }
        conv_entries("head_quarter".into(), &self.head_quarter, &mut out);
        conv_entries("head_half".into(), &self.head_half, &mut out);
        conv_entries("head_full".into(), &self.head_full, &mut out);
        out
    }

    /// Writes all parameters into `container` under `prefix`, plus the
    /// architecture table in the meta block.
    pub fn save_into(&self, prefix: &str, container: &mut Container<F>) {
        for (name, shape, data) in self.named_params() {
            container.push(format!("{prefix}/{name}"), shape, data);
        }
        let table = serde_json::to_value(self.describe()).expect("table serializes");
        container.meta["arch"][prefix] = table;
    }

    /// Loads parameters saved by `save_into`, rejecting containers whose
    /// architecture table does not match this configuration.
    pub fn load_from(&mut self, prefix: &str, container: &Container<F>) -> Result<()> {
        let stored = &container.meta["arch"][prefix];
        if !stored.is_null() {
            let stored_table: Vec<LayerDesc> = serde_json::from_value(stored.clone())
                .map_err(|e| Error::checkpoint("<container>", format!("bad arch table: {e}")))?;
            if stored_table != self.describe() {
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
            let data = container.require(&format!("{prefix}/{name}"), shape)?;
            values.push(data.to_vec());
        }
        for (slot, value) in self.flat_mut().into_iter().zip(values) {
            slot.copy_from_slice(&value);
        }
        Ok(())
    }

    /// The architecture table: one row per stage, bottleneck, and head.
    pub fn describe(&self) -> Vec<LayerDesc> {
        let n = self.cfg.stages();
        let bottom = self.cfg.bottom_size();
        let r = self.cfg.input_size;
        let k = self.cfg.kernel;
        let mut rows = Vec::new();
        for i in 0..n {
            let res = r >> i;
            rows.push(LayerDesc {
                name: format!("enc{}", i + 1),
                kernel: format!("{k}x{k}, {}", self.cfg.enc_channels[i]),
                stride: if i == 0 { 1 } else { 2 },
                output: [res, res, self.cfg.enc_channels[i]],
                params: self.enc_convs[i].param_count() + self.enc_norms[i].param_count(),
            });
        }
        rows.push(LayerDesc {
            name: "bottleneck/fc_down".into(),
            kernel: format!("dense, {}", self.cfg.bottleneck_dim),
            stride: 1,
            output: [1, 1, self.cfg.bottleneck_dim],
            params: self.fc_down.param_count(),
        });
        rows.push(LayerDesc {
            name: "bottleneck/fc_up".into(),
            kernel: format!("dense, {}", self.cfg.bottleneck_channels * bottom * bottom),
            stride: 1,
            output: [bottom, bottom, self.cfg.bottleneck_channels],
            params: self.fc_up.param_count(),
        });
        for kdx in 0..n {
            let res = bottom << kdx;
            rows.push(LayerDesc {
                name: format!("dec{}", kdx + 1),
                kernel: format!("{k}x{k}, {}", self.cfg.dec_channels[kdx]),
                stride: 1,
                output: [res, res, self.cfg.dec_channels[kdx]],
                params: self.dec_convs[kdx].param_count() + self.dec_norms[kdx].param_count(),
            });
        }
        rows.push(LayerDesc {
            name: "head_quarter".into(),
            kernel: format!("1x1, {}", self.cfg.in_channels),
            stride: 1,
            output: [r / 4, r / 4, self.cfg.in_channels],
            params: self.head_quarter.param_count(),
        });
        rows.push(LayerDesc {
            name: "head_half".into(),
            kernel: format!("1x1, {}", self.cfg.in_channels),
            stride: 1,
            output: [r / 2, r / 2, self.cfg.in_channels],
            params: self.head_half.param_count(),
        });
        rows.push(LayerDesc {
            name: "head_full".into(),
            kernel: format!("1x1, {}", self.cfg.in_channels),
            stride: 1,
            output: [r, r, self.cfg.in_channels],
            params: self.head_full.param_count(),
        });
        rows
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
    }

    /// Direct mutable access to one weight, for perturbation tests.
    pub fn enc_conv_weight_mut(&mut self, stage: usize) -> &mut ndarray::Array2<F> {
        &mut self.enc_convs[stage].w
    }

    pub fn head_quarter_weight_mut(&mut self) -> &mut ndarray::Array2<F> {
        &mut self.head_quarter.w
    }
}
