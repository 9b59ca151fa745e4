//! The adversary: a stride-2 convolutional stack ending in a single
//! sigmoid unit, emitting the probability that its input is a real
//! (ground-truth) frontal image. Output is clamped away from {0, 1} so log
//! terms stay finite.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::facedata::ImageTensor;
use crate::nn::ops::{leaky_relu, leaky_relu_backward, sigmoid_scalar};
use crate::nn::{Conv2d, ConvGrads, Dense, DenseGrads, PROB_EPS};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub input_size: usize,
    pub in_channels: usize,
    /// Stage widths; every stage is a stride-2 convolution + leaky-ReLU.
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl DiscriminatorConfig {
    pub fn canonical() -> Self {
        Self {
            input_size: 128,
            in_channels: 3,
            channels: vec![64, 128, 256, 512, 512],
            kernel: 3,
        }
    }

    /// Tiny variant for 64-bit gradient checks on toy images.
    pub fn miniature(input_size: usize) -> Self {
        Self {
            input_size,
            in_channels: 3,
            channels: vec![8, 16],
            kernel: 3,
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

    fn final_spatial(&self) -> usize {
        self.input_size >> self.channels.len()
    }
}

pub struct Discriminator<F: Scalar> {
    pub cfg: DiscriminatorConfig,
    convs: Vec<Conv2d<F>>,
    head: Dense<F>,
}

pub struct DiscriminatorTrace<F: Scalar> {
    input: Array3<F>,
    acts: Vec<Array3<F>>,
    flat: Vec<F>,
    /// Raw sigmoid output before clamping.
    p_raw: F,
    /// Probability after clamping to [eps, 1-eps].
    pub p: F,
}

pub struct DiscriminatorGrads<F: Scalar> {
    convs: Vec<ConvGrads<F>>,
    head: DenseGrads<F>,
}

impl<F: Scalar> DiscriminatorGrads<F> {
    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            a.add(b);
        }
        self.head.add(&other.head);
    }

    pub fn scale(&mut self, s: F) {
        for g in &mut self.convs {
            g.scale(s);
        }
        self.head.scale(s);
    }

    pub fn flat(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for g in &self.convs {
            out.extend(g.flat());
        }
        out.extend(self.head.flat());
        out
    }
}

impl<F: Scalar> Discriminator<F> {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(cfg.channels.len());
        for (i, &ch) in cfg.channels.iter().enumerate() {
            let cin = if i == 0 { cfg.in_channels } else { cfg.channels[i - 1] };
            convs.push(Conv2d::new(&mut rng, cin, ch, cfg.kernel, 2));
        }
        let spatial = cfg.final_spatial();
        let flat_len = cfg.channels.last().unwrap() * spatial * spatial;
        let head = Dense::new(&mut rng, flat_len, 1);
        Ok(Self { cfg, convs, head })
    }

    fn check_input(&self, x: &Array3<F>) -> Result<()> {
        let want = (self.cfg.in_channels, self.cfg.input_size, self.cfg.input_size);
        if x.dim() != want {
            return Err(Error::shape(
                "discriminator input",
                format!("{want:?}"),
                format!("{:?}", x.dim()),
            ));
        }
        Ok(())
    }

    /// Probability in [eps, 1-eps] that the image is real.
    pub fn prob(&self, image: &ImageTensor<F>) -> Result<F> {
        self.forward_trace(image).map(|t| t.p)
    }

    pub fn forward_trace(&self, image: &ImageTensor<F>) -> Result<DiscriminatorTrace<F>> {
        self.check_input(image.data())?;
        let mut acts = Vec::with_capacity(self.convs.len());
        for (i, conv) in self.convs.iter().enumerate() {
            let input = if i == 0 { image.data() } else { &acts[i - 1] };
            acts.push(leaky_relu(&conv.forward(input)));
        }
        let flat = acts.last().unwrap().as_slice().unwrap().to_vec();
        let logit = self.head.forward(&flat)[0];
        let p_raw = sigmoid_scalar(logit);
        let eps = F::cast(PROB_EPS);
        let p = p_raw.max(eps).min(F::one() - eps);
        Ok(DiscriminatorTrace {
            input: image.data().clone(),
            acts,
            flat,
            p_raw,
            p,
        })
    }

    /// Backpropagates dL/dp. Parameter gradients accumulate into `grads`
    /// when given; the return value is dL/d(input image). When the forward
    /// pass clamped the probability, the gradient is zero (the clamp is
    /// flat).
    pub fn backward(
        &self,
        trace: &DiscriminatorTrace<F>,
        d_p: F,
        mut grads: Option<&mut DiscriminatorGrads<F>>,
    ) -> Array3<F> {
        let eps = F::cast(PROB_EPS);
        let clamped = trace.p_raw < eps || trace.p_raw > F::one() - eps;
        if clamped {
            return Array3::zeros(trace.input.dim());
        }
        let d_logit = d_p * trace.p_raw * (F::one() - trace.p_raw);
        let dy = vec![d_logit];
        let d_flat = match grads.as_deref_mut() {
            Some(g) => self.head.backward(&trace.flat, &dy, &mut g.head),
            None => {
                let mut scratch = self.head.grads();
                self.head.backward(&trace.flat, &dy, &mut scratch)
            }
        };
        let last = trace.acts.last().unwrap();
        let mut d_act = Array3::from_shape_vec(last.dim(), d_flat).unwrap();
        for i in (0..self.convs.len()).rev() {
            let d_pre = leaky_relu_backward(&trace.acts[i], &d_act);
            let input = if i == 0 { &trace.input } else { &trace.acts[i - 1] };
            d_act = match grads.as_deref_mut() {
                Some(g) => self.convs[i].backward(input, &d_pre, &mut g.convs[i]),
                None => {
                    let mut scratch = self.convs[i].grads();
                    self.convs[i].backward(input, &d_pre, &mut scratch)
                }
            };
        }
        d_act
    }

    pub fn grads(&self) -> DiscriminatorGrads<F> {
        DiscriminatorGrads {
            convs: self.convs.iter().map(|c| c.grads()).collect(),
            head: self.head.grads(),
        }
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for c in self.convs.iter_mut() {
            out.extend(c.flat_mut());
        }
        out.extend(self.head.flat_mut());
        out
    }

    pub fn named_params(&self) -> Vec<(String, Vec<usize>, Vec<F>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{}/weight", i + 1), c.logical_weight_shape(), c.w.as_slice().unwrap().to_vec()));
            out.push((format!("conv{}/bias", i + 1), vec![c.cout], c.b.to_vec()));
        }
        out.push(("head/weight".into(), vec![1, self.head.input_dim()], self.head.w.as_slice().unwrap().to_vec()));
        out.push(("head/bias".into(), vec![1], self.head.b.to_vec()));
        out
    }

    pub fn save_into(&self, prefix: &str, container: &mut Container<F>) {
        for (name, shape, data) in self.named_params() {
            container.push(format!("{prefix}/{name}"), shape, data);
        }
        container.meta["arch"][prefix] = serde_json::to_value(&self.cfg).expect("config serializes");
    }

    pub fn load_from(&mut self, prefix: &str, container: &Container<F>) -> Result<()> {
        let stored = &container.meta["arch"][prefix];
        if !stored.is_null() {
            let stored_cfg: DiscriminatorConfig = serde_json::from_value(stored.clone())
                .map_err(|e| Error::checkpoint("<container>", format!("bad config: {e}")))?;
            if stored_cfg != self.cfg {
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

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(|c| c.param_count()).sum::<usize>() + self.head.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image<FS: Scalar>(size: usize, salt: usize) -> ImageTensor<FS> {
        let data = Array3::from_shape_fn((3, size, size), |(c, y, x)| {
            FS::cast((((c + 2) * (y * size + x) + salt * 17) % 89) as f64 / 89.0)
        });
        ImageTensor::new(data).unwrap()
    }

    #[test]
    fn probability_is_strictly_interior_and_deterministic() {
        let d = Discriminator::<f32>::new(DiscriminatorConfig::canonical(), 1).unwrap();
        let img = test_image(128, 0);
        let p1 = d.prob(&img).unwrap();
        let p2 = d.prob(&img).unwrap();
        assert_eq!(p1, p2);
        assert!(p1 >= 1e-7 && p1 <= 1.0 - 1e-7);
    }

    #[test]
    fn wrong_shape_rejected() {
        let d = Discriminator::<f32>::new(DiscriminatorConfig::miniature(8), 1).unwrap();
        assert!(d.prob(&test_image(16, 0)).is_err());
    }

    #[test]
    fn batch_forward_equals_per_image_forward() {
        use rayon::prelude::*;
        let d = Discriminator::<f32>::new(DiscriminatorConfig::miniature(8), 3).unwrap();
        let images: Vec<_> = (0..6).map(|i| test_image::<f32>(8, i)).collect();
        let solo: Vec<f32> = images.iter().map(|im| d.prob(im).unwrap()).collect();
        let batched: Vec<f32> = images.par_iter().map(|im| d.prob(im).unwrap()).collect();
        assert_eq!(solo, batched);
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let d = Discriminator::<f64>::new(DiscriminatorConfig::miniature(8), 7).unwrap();
        let img = test_image::<f64>(8, 2);
        // Probe: log D(img), gradient w.r.t. parameters and input.
        let probe = |d: &Discriminator<f64>, img: &ImageTensor<f64>| d.prob(img).unwrap().ln();

        let trace = d.forward_trace(&img).unwrap();
        let mut grads = d.grads();
        let d_input = d.backward(&trace, 1.0 / trace.p, Some(&mut grads));

        let analytic = grads.flat();
        let mut d2 = Discriminator::<f64>::new(DiscriminatorConfig::miniature(8), 7).unwrap();
        let eps = 1e-6;
        let mut max_rel: f64 = 0.0;
        for t in 0..analytic.len() {
            if analytic[t].is_empty() {
                continue;
            }
            let idx = (t * 48271) % analytic[t].len();
            let a = analytic[t][idx];
            let orig = d2.flat_mut()[t][idx];
            d2.flat_mut()[t][idx] = orig + eps;
            let up = probe(&d2, &img);
            d2.flat_mut()[t][idx] = orig - eps;
            let down = probe(&d2, &img);
            d2.flat_mut()[t][idx] = orig;
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(a.abs()).max(1e-6);
            max_rel = max_rel.max(((fd - a) / denom).abs());
        }
        assert!(max_rel <= 1e-3, "max relative error {max_rel:.2e}");

        let mut img2 = img.clone();
        for &(c, y, x) in &[(0usize, 0usize, 0usize), (2, 7, 3), (1, 4, 4)] {
            let orig = img2.get(c, y, x);
            img2.set(c, y, x, orig + eps);
            let up = probe(&d, &img2);
            img2.set(c, y, x, orig - eps);
            let down = probe(&d, &img2);
            img2.set(c, y, x, orig);
            let fd = (up - down) / (2.0 * eps);
            let a = d_input[(c, y, x)];
            let denom = fd.abs().max(a.abs()).max(1e-6);
            assert!(((fd - a) / denom).abs() <= 1e-3, "input grad ({c},{y},{x})");
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_mismatch_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("disc.bgnc");
        let d = Discriminator::<f32>::new(DiscriminatorConfig::miniature(8), 5).unwrap();
        let mut c = Container::new(serde_json::json!({"arch": {}}));
        d.save_into("discriminator", &mut c);
        c.save(&path).unwrap();
        let loaded = Container::<f32>::load(&path).unwrap();
        let mut fresh = Discriminator::<f32>::new(DiscriminatorConfig::miniature(8), 99).unwrap();
        fresh.load_from("discriminator", &loaded).unwrap();
        let img = test_image(8, 4);
        assert_eq!(d.prob(&img).unwrap(), fresh.prob(&img).unwrap());
        let mut wrong = Discriminator::<f32>::new(DiscriminatorConfig::miniature(16), 1).unwrap();
        assert!(wrong.load_from("discriminator", &loaded).is_err());
    }
}
