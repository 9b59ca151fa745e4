//! Pluggable identity-feature extractor supplying the two feature taps of
//! the identity-preserving loss (last-pooling tap and fully-connected tap),
//! plus a small trainable stand-in for desk-scale runs in place of a
//! large pre-trained recognition network.

use ndarray::{Array1, Array3};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::facedata::{mix_seed, Dataset, ImageTensor};
use crate::nn::ops::{
    global_avg_pool, global_avg_pool_backward, leaky_relu, leaky_relu_backward,
};
use crate::nn::{Adam, Conv2d, Dense};
use crate::scalar::Scalar;

/// The two feature vectors tapped from an extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTaps<F: Scalar> {
    /// Output of the last pooling layer.
    pub pool: Array1<F>,
    /// Output of the fully connected layer.
    pub fc: Array1<F>,
}

/// Anything that can supply identity features with an input-gradient path.
///
/// `extract` must be pure; `extract_vjp` returns dL/d(image) given upstream
/// gradients on the two taps.
pub trait FeatureExtractor<F: Scalar>: Sync {
    /// (pool tap dimension, fc tap dimension).
    fn tap_dims(&self) -> (usize, usize);
    fn extract(&self, image: &ImageTensor<F>) -> Result<FeatureTaps<F>>;
    fn extract_vjp(
        &self,
        image: &ImageTensor<F>,
        d_pool: &Array1<F>,
        d_fc: &Array1<F>,
    ) -> Result<Array3<F>>;
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct IdentityConfig {
    pub input_size: usize,
    pub in_channels: usize,
    /// Stride-2 convolution widths.
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Fully-connected tap dimension.
    pub fc_dim: usize,
}

impl IdentityConfig {
    pub fn canonical() -> Self {
        Self {
            input_size: 128,
            in_channels: 3,
            channels: vec![16, 32, 64, 128, 128],
            kernel: 3,
            fc_dim: 64,
        }
    }

    pub fn miniature(input_size: usize) -> Self {
        Self {
            input_size,
            in_channels: 3,
            channels: vec![6, 10],
            kernel: 3,
            fc_dim: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::config("channels", "need at least one stage"));
        }
        if self.input_size % (1 << self.channels.len()) != 0 {
            return Err(Error::config(
                "input_size",
                format!("must be divisible by {}", 1 << self.channels.len()),
            ));
        }
        Ok(())
    }
}

/// Stand-in recognizer: stride-2 convolutions, global average pooling
/// (pool tap), one dense layer (fc tap), and a classification head that is
/// only used during its own pretraining.
pub struct IdentityNet<F: Scalar> {
    pub cfg: IdentityConfig,
    convs: Vec<Conv2d<F>>,
    fc: Dense<F>,
    head: Option<Dense<F>>,
    frozen: bool,
}

struct IdentityTrace<F: Scalar> {
    input: Array3<F>,
    acts: Vec<Array3<F>>,
    pool: Array1<F>,
    fc: Array1<F>,
}

impl<F: Scalar> IdentityNet<F> {
    pub fn new(cfg: IdentityConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(cfg.channels.len());
        for (i, &ch) in cfg.channels.iter().enumerate() {
            let cin = if i == 0 { cfg.in_channels } else { cfg.channels[i - 1] };
            convs.push(Conv2d::new(&mut rng, cin, ch, cfg.kernel, 2));
        }
        let fc = Dense::new(&mut rng, *cfg.channels.last().unwrap(), cfg.fc_dim);
        Ok(Self {
            cfg,
            convs,
            fc,
            head: None,
            frozen: false,
        })
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn check_input(&self, x: &Array3<F>) -> Result<()> {
        let want = (self.cfg.in_channels, self.cfg.input_size, self.cfg.input_size);
        if x.dim() != want {
            return Err(Error::shape(
                "extractor input",
                format!("{want:?}"),
                format!("{:?}", x.dim()),
            ));
        }
        Ok(())
    }

    fn forward_trace(&self, image: &ImageTensor<F>) -> Result<IdentityTrace<F>> {
        self.check_input(image.data())?;
        let mut acts = Vec::with_capacity(self.convs.len());
        for (i, conv) in self.convs.iter().enumerate() {
            let input = if i == 0 { image.data() } else { &acts[i - 1] };
            acts.push(leaky_relu(&conv.forward(input)));
        }
        let pool = global_avg_pool(acts.last().unwrap());
        let fc = Array1::from_vec(self.fc.forward(pool.as_slice().unwrap()));
        Ok(IdentityTrace {
            input: image.data().clone(),
            acts,
            pool,
            fc,
        })
    }

    /// Input gradient given upstream tap gradients; used by both the
    /// identity loss and stand-in pretraining.
    fn backward_input(
        &self,
        trace: &IdentityTrace<F>,
        d_pool_direct: &Array1<F>,
        d_fc: &Array1<F>,
    ) -> Array3<F> {
        // d_pool gets the direct tap gradient plus the fc-path contribution.
        let mut fc_scratch = self.fc.grads();
        let d_pool_from_fc = self.fc.backward(
            trace.pool.as_slice().unwrap(),
            d_fc.as_slice().unwrap(),
            &mut fc_scratch,
        );
        let mut d_pool = d_pool_direct.clone();
        d_pool
            .iter_mut()
            .zip(&d_pool_from_fc)
            .for_each(|(a, &b)| *a = *a + b);

        let last = trace.acts.last().unwrap();
        let (c, h, w) = last.dim();
        let mut d_act = global_avg_pool_backward(&d_pool, c, h, w);
        for i in (0..self.convs.len()).rev() {
            let d_pre = leaky_relu_backward(&trace.acts[i], &d_act);
            let input = if i == 0 { &trace.input } else { &trace.acts[i - 1] };
            let mut scratch = self.convs[i].grads();
            d_act = self.convs[i].backward(input, &d_pre, &mut scratch);
        }
        d_act
    }

    pub fn named_params(&self) -> Vec<(String, Vec<usize>, Vec<F>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{}/weight", i + 1), c.logical_weight_shape(), c.w.as_slice().unwrap().to_vec()));
            out.push((format!("conv{}/bias", i + 1), vec![c.cout], c.b.to_vec()));
        }
        out.push(("fc/weight".into(), vec![self.fc.output_dim(), self.fc.input_dim()], self.fc.w.as_slice().unwrap().to_vec()));
        out.push(("fc/bias".into(), vec![self.fc.output_dim()], self.fc.b.to_vec()));
        out
    }

    fn flat_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for c in self.convs.iter_mut() {
            out.extend(c.flat_mut());
        }
        out.extend(self.fc.flat_mut());
        out
    }

    pub fn save_into(&self, prefix: &str, container: &mut Container<F>) {
        for (name, shape, data) in self.named_params() {
            container.push(format!("{prefix}/{name}"), shape, data);
        }
        container.meta["arch"][prefix] = serde_json::json!({
            "config": self.cfg,
            "taps": { "pool": self.tap_dims().0, "fc": self.tap_dims().1 },
        });
    }

    pub fn load_from(prefix: &str, container: &Container<F>) -> Result<Self> {
        let stored = &container.meta["arch"][prefix];
        if stored.is_null() {
            return Err(Error::checkpoint(
                "<container>",
                format!("container has no '{prefix}' descriptor"),
            ));
        }
        let cfg: IdentityConfig = serde_json::from_value(stored["config"].clone())
            .map_err(|e| Error::checkpoint("<container>", format!("bad extractor config: {e}")))?;
        let mut net = IdentityNet::new(cfg, 0)?;
        let expected: Vec<(String, Vec<usize>)> = net
            .named_params()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        let mut values = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            values.push(container.require(&format!("{prefix}/{name}"), shape)?.to_vec());
        }
        for (slot, value) in net.flat_mut().into_iter().zip(values) {
            slot.copy_from_slice(&value);
        }
        net.frozen = true;
        Ok(net)
    }

    /// Byte-level fingerprint of all parameters, for frozen-contract checks.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (_, _, data) in self.named_params() {
            for v in data {
                v.write_le(&mut out);
            }
        }
        out
    }
}

impl<F: Scalar> FeatureExtractor<F> for IdentityNet<F> {
    fn tap_dims(&self) -> (usize, usize) {
        (*self.cfg.channels.last().unwrap(), self.cfg.fc_dim)
    }

    fn extract(&self, image: &ImageTensor<F>) -> Result<FeatureTaps<F>> {
        let trace = self.forward_trace(image)?;
        Ok(FeatureTaps {
            pool: trace.pool,
            fc: trace.fc,
        })
    }

    fn extract_vjp(
        &self,
        image: &ImageTensor<F>,
        d_pool: &Array1<F>,
        d_fc: &Array1<F>,
    ) -> Result<Array3<F>> {
        let (pd, fd) = self.tap_dims();
        if d_pool.len() != pd || d_fc.len() != fd {
            return Err(Error::shape(
                "extractor tap gradients",
                format!("({pd}, {fd})"),
                format!("({}, {})", d_pool.len(), d_fc.len()),
            ));
        }
        let trace = self.forward_trace(image)?;
        Ok(self.backward_input(&trace, d_pool, d_fc))
    }
}

/// Pretrains a stand-in extractor as an identity classifier on the frontal
/// images of `dataset`, then freezes it. Same seed, same result.
pub fn train_standin<F: Scalar>(
    dataset: &Dataset<F>,
    cfg: IdentityConfig,
    epochs: usize,
    seed: u64,
) -> Result<IdentityNet<F>> {
    let mut ids: Vec<u32> = dataset.samples.iter().map(|s| s.identity).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Invalid {
            what: "stand-in training set".into(),
            detail: format!("needs at least 2 identities, found {}", ids.len()),
        });
    }
    let n_classes = ids.len();
    let class_of = |identity: u32| ids.binary_search(&identity).unwrap();

    let mut net = IdentityNet::new(cfg, mix_seed(seed, 0x1d))?;
    let mut head_rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, 0x2d));
    let mut head = Dense::<F>::new(&mut head_rng, net.cfg.fc_dim, n_classes);
    let mut opt_net = Adam::<F>::new(3e-3, 0.9, 0.999);
    let mut opt_head = Adam::<F>::new(3e-3, 0.9, 0.999);

    for epoch in 0..epochs {
        // Deterministic epoch order.
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, 0x1000 + epoch as u64));
        for i in (1..order.len()).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        for &idx in &order {
            let sample = &dataset.samples[idx];
            let target = class_of(sample.identity);
            let trace = net.forward_trace(&sample.frontal_gt)?;
            let logits = head.forward(trace.fc.as_slice().unwrap());

            // Softmax cross-entropy.
            let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
            let exps: Vec<F> = logits.iter().map(|&v| (v - max).exp()).collect();
            let sum: F = exps.iter().cloned().sum();
            let mut d_logits: Vec<F> = exps.iter().map(|&e| e / sum).collect();
            d_logits[target] = d_logits[target] - F::one();

            let mut head_grads = head.grads();
            let d_fc = head.backward(trace.fc.as_slice().unwrap(), &d_logits, &mut head_grads);

            // Backward through fc and the conv stack, collecting grads.
            let mut fc_grads = net.fc.grads();
            let d_pool = net.fc.backward(trace.pool.as_slice().unwrap(), &d_fc, &mut fc_grads);
            let last = trace.acts.last().unwrap();
            let (c, h, w) = last.dim();
            let mut d_act = global_avg_pool_backward(&Array1::from_vec(d_pool), c, h, w);
            let mut conv_grads: Vec<_> = net.convs.iter().map(|cv| cv.grads()).collect();
            for i in (0..net.convs.len()).rev() {
                let d_pre = leaky_relu_backward(&trace.acts[i], &d_act);
                let input = if i == 0 { &trace.input } else { &trace.acts[i - 1] };
                d_act = net.convs[i].backward(input, &d_pre, &mut conv_grads[i]);
            }

            let mut grad_slices: Vec<&[F]> = Vec::new();
            for g in &conv_grads {
                grad_slices.extend(g.flat());
            }
            grad_slices.extend(fc_grads.flat());
            opt_net.step(&mut net.flat_mut(), &grad_slices);

            let head_slices: Vec<&[F]> = head_grads.flat();
            opt_head.step(&mut head.flat_mut(), &head_slices);
        }
    }

    // The head is kept in memory so callers can measure training accuracy,
    // but it is not part of the extractor interface and never serialized.
    net.head = Some(head);
    net.frozen = true;
    Ok(net)
}

/// Classification accuracy of a trained (not yet head-discarded) stand-in
/// on the frontal images of `dataset`.
pub fn standin_train_accuracy<F: Scalar>(net: &IdentityNet<F>, dataset: &Dataset<F>) -> Result<f64> {
    let head = net.head.as_ref().ok_or_else(|| Error::Invalid {
        what: "stand-in head".into(),
        detail: "classification head was discarded".into(),
    })?;
    let mut ids: Vec<u32> = dataset.samples.iter().map(|s| s.identity).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut correct = 0usize;
    for sample in &dataset.samples {
        let taps = net.extract(&sample.frontal_gt)?;
        let logits = head.forward(taps.fc.as_slice().unwrap());
        let pred = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if ids[pred] == sample.identity {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Linear extractor used by loss unit tests and gradient checks: the pool
/// tap is the per-channel spatial mean, the fc tap a fixed projection of it.
pub struct LinearStubExtractor<F: Scalar> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    projection: ndarray::Array2<F>,
}

impl<F: Scalar> LinearStubExtractor<F> {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        let fc_dim = 2 * channels;
        let projection = ndarray::Array2::from_shape_fn((fc_dim, channels), |(i, j)| {
            F::cast((((i * 7 + j * 3) % 11) as f64 - 5.0) / 7.0)
        });
        Self {
            channels,
            height,
            width,
            projection,
        }
    }
}

impl<F: Scalar> FeatureExtractor<F> for LinearStubExtractor<F> {
    fn tap_dims(&self) -> (usize, usize) {
        (self.channels, 2 * self.channels)
    }

    fn extract(&self, image: &ImageTensor<F>) -> Result<FeatureTaps<F>> {
        let want = (self.channels, self.height, self.width);
        if image.dims() != want {
            return Err(Error::shape("stub extractor input", format!("{want:?}"), format!("{:?}", image.dims())));
        }
        let pool = global_avg_pool(image.data());
        let fc = self.projection.dot(&pool);
        Ok(FeatureTaps { pool, fc })
    }

    fn extract_vjp(
        &self,
        image: &ImageTensor<F>,
        d_pool: &Array1<F>,
        d_fc: &Array1<F>,
    ) -> Result<Array3<F>> {
        let total = d_pool + &self.projection.t().dot(d_fc);
        Ok(global_avg_pool_backward(
            &total,
            self.channels,
            image.height(),
            image.width(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facedata::FaceSample;
    use crate::fixture;

    fn tiny_image<FS: Scalar>(size: usize, salt: usize) -> ImageTensor<FS> {
        let data = Array3::from_shape_fn((3, size, size), |(c, y, x)| {
            FS::cast((((c + 1) * (y + 3) * (x + salt + 2)) % 53) as f64 / 53.0)
        });
        ImageTensor::new(data).unwrap()
    }

    #[test]
    fn extract_is_pure_and_dimensioned() {
        let net = IdentityNet::<f32>::new(IdentityConfig::miniature(8), 1).unwrap();
        let img = tiny_image(8, 0);
        let a = net.extract(&img).unwrap();
        let b = net.extract(&img).unwrap();
        assert_eq!(a, b);
        let (pd, fd) = net.tap_dims();
        assert_eq!(a.pool.len(), pd);
        assert_eq!(a.fc.len(), fd);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = IdentityNet::<f64>::new(IdentityConfig::miniature(8), 2).unwrap();
        let img = tiny_image::<f64>(8, 1);
        // Probe: sum of pool features.
        let probe = |img: &ImageTensor<f64>| net.extract(img).unwrap().pool.sum();
        let (pd, fd) = net.tap_dims();
        let d_pool = Array1::from_elem(pd, 1.0);
        let d_fc = Array1::zeros(fd);
        let grad = net.extract_vjp(&img, &d_pool, &d_fc).unwrap();
        let eps = 1e-6;
        let mut img2 = img.clone();
        for &(c, y, x) in &[(0usize, 0usize, 0usize), (1, 4, 6), (2, 7, 7)] {
            let orig = img2.get(c, y, x);
            img2.set(c, y, x, orig + eps);
            let up = probe(&img2);
            img2.set(c, y, x, orig - eps);
            let down = probe(&img2);
            img2.set(c, y, x, orig);
            let fd_val = (up - down) / (2.0 * eps);
            let a = grad[(c, y, x)];
            let denom = fd_val.abs().max(a.abs()).max(1e-6);
            assert!(((fd_val - a) / denom).abs() <= 1e-3, "pixel ({c},{y},{x})");
        }
    }

    fn synthetic_dataset(n_ids: usize, size: usize) -> Dataset<f32> {
        // Procedural fixture in memory, one frontal per identity and pose.
        let spec = fixture::FixtureSpec {
            identities: n_ids,
            poses: vec![-30, 30],
            size,
            seed: 5,
        };
        let samples: Vec<FaceSample<f32>> = fixture::render_samples(&spec);
        let manifest = crate::facedata::DatasetManifest {
            records: Vec::new(),
            root_dir: std::path::PathBuf::new(),
        };
        Dataset { manifest, samples }
    }

    #[test]
    fn standin_overfits_its_identities_and_is_reproducible() {
        let data = synthetic_dataset(8, 32);
        let cfg = IdentityConfig {
            input_size: 32,
            in_channels: 3,
            channels: vec![8, 16, 32, 64],
            kernel: 3,
            fc_dim: 16,
        };
        let net = train_standin(&data, cfg.clone(), 20, 11).unwrap();
        let acc = standin_train_accuracy(&net, &data).unwrap();
        assert!(acc > 0.9, "training accuracy {acc} (chance is 0.125)");

        let net2 = train_standin(&data, cfg, 20, 11).unwrap();
        assert_eq!(net.param_bytes(), net2.param_bytes());
    }

    #[test]
    fn single_identity_dataset_rejected() {
        let data = synthetic_dataset(1, 32);
        match train_standin(&data, IdentityConfig::miniature(32), 1, 0) {
            Err(Error::Invalid { .. }) => {}
            Err(other) => panic!("unexpected error {other}"),
            Ok(_) => panic!("single-identity dataset must be rejected"),
        }
    }

    #[test]
    fn frozen_extractor_checkpoint_roundtrip() {
        let data = synthetic_dataset(4, 32);
        let cfg = IdentityConfig {
            input_size: 32,
            in_channels: 3,
            channels: vec![8, 16],
            kernel: 3,
            fc_dim: 8,
        };
        let net = train_standin(&data, cfg, 3, 7).unwrap();
        assert!(net.is_frozen());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extractor.bgnc");
        let mut c = Container::new(serde_json::json!({"arch": {}}));
        net.save_into("extractor", &mut c);
        c.save(&path).unwrap();
        let loaded = Container::<f32>::load(&path).unwrap();
        let back = IdentityNet::<f32>::load_from("extractor", &loaded).unwrap();
        assert_eq!(net.param_bytes(), back.param_bytes());
        let img = &data.samples[0].frontal_gt;
        assert_eq!(net.extract(img).unwrap(), back.extract(img).unwrap());
    }
}
