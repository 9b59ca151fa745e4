//! Training objectives: the adversarial value function (both sides, in
//! minimizable form), the identity-preserving feature loss, the multi-scale
//! pixel loss, the symmetry loss, total-variation regularization, and their
//! weighted combination.
//!
//! Every loss is a pure function and ships with an explicit gradient
//! routine; the finite-difference suite in `gradcheck` exercises all of
//! them at 64-bit precision.

use ndarray::{Array1, Array3};
use serde::{Deserialize, Serialize};

use crate::discriminator::{Discriminator, DiscriminatorGrads};
use crate::error::{Error, Result};
use crate::facedata::ImageTensor;
use crate::generator::MultiScaleOutput;
use crate::identity::FeatureExtractor;
use crate::nn::PROB_EPS;
use crate::scalar::Scalar;

/// All five generated faces for one sample: four coarse scale pyramids and
/// the boosted refinement.
#[derive(Debug, Clone)]
pub struct GeneratedSet<F: Scalar> {
    pub coarse: [MultiScaleOutput<F>; 4],
    pub boosted: ImageTensor<F>,
}

impl<F: Scalar> GeneratedSet<F> {
    pub fn validate(&self) -> Result<()> {
        let full = self.boosted.dims();
        for (i, ms) in self.coarse.iter().enumerate() {
            if ms.full.dims() != full {
                return Err(Error::shape(
                    format!("coarse output {i}"),
                    format!("{full:?}"),
                    format!("{:?}", ms.full.dims()),
                ));
            }
            let (c, h, w) = full;
            if ms.half.dims() != (c, h / 2, w / 2) || ms.quarter.dims() != (c, h / 4, w / 4) {
                return Err(Error::shape(
                    format!("coarse pyramid {i}"),
                    "half and quarter scales of the full resolution",
                    format!("{:?} / {:?}", ms.half.dims(), ms.quarter.dims()),
                ));
            }
        }
        Ok(())
    }

    /// The five full-resolution generated images, coarse first.
    pub fn full_res_images(&self) -> [&ImageTensor<F>; 5] {
        [
            &self.coarse[0].full,
            &self.coarse[1].full,
            &self.coarse[2].full,
            &self.coarse[3].full,
            &self.boosted,
        ]
    }
}

/// Trade-off weights of the overall generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub adv: f64,
    pub pix: f64,
    pub sym: f64,
    pub ip: f64,
    pub tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adv: 2e1,
            pix: 1.0,
            sym: 3e-1,
            ip: 4e1,
            tv: 1e-3,
        }
    }
}

/// Minimizable loss components for one step, plus their weighted total.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv: f64,
    pub pix: f64,
    pub sym: f64,
    pub ip: f64,
    pub tv: f64,
    pub total: f64,
}

/// Gradients of a scalar loss with respect to every generated image of one
/// sample. Slots a loss does not touch stay zero.
pub struct SetGrads<F: Scalar> {
    pub coarse_full: [Array3<F>; 4],
    pub coarse_half: [Array3<F>; 4],
    pub coarse_quarter: [Array3<F>; 4],
    pub boosted: Array3<F>,
}

impl<F: Scalar> SetGrads<F> {
    pub fn zeros_like(gen: &GeneratedSet<F>) -> Self {
        Self {
            coarse_full: std::array::from_fn(|i| Array3::zeros(gen.coarse[i].full.dims())),
            coarse_half: std::array::from_fn(|i| Array3::zeros(gen.coarse[i].half.dims())),
            coarse_quarter: std::array::from_fn(|i| Array3::zeros(gen.coarse[i].quarter.dims())),
            boosted: Array3::zeros(gen.boosted.dims()),
        }
    }

    /// self += w * other
    pub fn add_scaled(&mut self, other: &Self, w: F) {
        for i in 0..4 {
            self.coarse_full[i].zip_mut_with(&other.coarse_full[i], |a, &b| *a = *a + w * b);
            self.coarse_half[i].zip_mut_with(&other.coarse_half[i], |a, &b| *a = *a + w * b);
            self.coarse_quarter[i].zip_mut_with(&other.coarse_quarter[i], |a, &b| *a = *a + w * b);
        }
        self.boosted.zip_mut_with(&other.boosted, |a, &b| *a = *a + w * b);
    }
}

fn sign<F: Scalar>(v: F) -> F {
    if v > F::zero() {
        F::one()
    } else if v < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

fn clamp_prob<F: Scalar>(p: F) -> F {
    let eps = F::cast(PROB_EPS);
    p.max(eps).min(F::one() - eps)
}

/// Anything that maps an image to a realness probability. Lets tests stub
/// the adversary with a constant.
pub trait Critic<F: Scalar>: Sync {
    fn prob(&self, image: &ImageTensor<F>) -> Result<F>;
}

impl<F: Scalar> Critic<F> for Discriminator<F> {
    fn prob(&self, image: &ImageTensor<F>) -> Result<F> {
        Discriminator::prob(self, image)
    }
}

/// Emits a fixed probability regardless of input.
pub struct ConstantCritic<F: Scalar>(pub F);

impl<F: Scalar> Critic<F> for ConstantCritic<F> {
    fn prob(&self, _image: &ImageTensor<F>) -> Result<F> {
        Ok(clamp_prob(self.0))
    }
}

// ---------------------------------------------------------------------------
// Adversarial losses
// ---------------------------------------------------------------------------

/// Discriminator objective in minimizable form, from raw probabilities:
/// -(1/N) Σ_n { log p_real + (1/5) Σ_{j=1..5} log(1 - p_fake_j) }.
pub fn adv_d_from_probs<F: Scalar>(p_real: &[F], p_fakes: &[[F; 5]]) -> F {
    assert_eq!(p_real.len(), p_fakes.len(), "batch sizes");
    assert!(!p_real.is_empty(), "batch must be non-empty");
    let fifth = F::cast(0.2);
    let mut total = F::zero();
    for (r, fakes) in p_real.iter().zip(p_fakes) {
        let mut term = clamp_prob(*r).ln();
        let mut fake_sum = F::zero();
        for &p in fakes {
            fake_sum = fake_sum + (F::one() - clamp_prob(p)).ln();
        }
        term = term + fifth * fake_sum;
        total = total + term;
    }
    -total / F::from_count(p_real.len())
}

/// Generator-side objective in minimizable form, from raw probabilities:
/// -(1/(5N)) Σ_n Σ_{j=1..5} log p_fake_j. Non-saturating: the generator
/// maximizes log D on its outputs rather than minimizing log(1 - D).
pub fn adv_g_from_probs<F: Scalar>(p_fakes: &[[F; 5]]) -> F {
    assert!(!p_fakes.is_empty(), "batch must be non-empty");
    let mut total = F::zero();
    for fakes in p_fakes {
        for &p in fakes {
            total = total + clamp_prob(p).ln();
        }
    }
    -total / F::from_count(5 * p_fakes.len())
}

fn fake_probs<F: Scalar>(critic: &dyn Critic<F>, gen: &GeneratedSet<F>) -> Result<[F; 5]> {
    let imgs = gen.full_res_images();
    let mut out = [F::zero(); 5];
    for (slot, img) in out.iter_mut().zip(imgs) {
        *slot = critic.prob(img)?;
    }
    Ok(out)
}

/// Discriminator loss over a batch. Only the full-resolution coarse outputs
/// and the boosted image face the adversary.
pub fn adv_d_loss<F: Scalar>(
    critic: &dyn Critic<F>,
    real: &[ImageTensor<F>],
    gen: &[GeneratedSet<F>],
) -> Result<F> {
    if real.len() != gen.len() || real.is_empty() {
        return Err(Error::shape(
            "adversarial batch",
            "equal non-zero real/generated counts",
            format!("{} vs {}", real.len(), gen.len()),
        ));
    }
    let p_real: Vec<F> = real.iter().map(|img| critic.prob(img)).collect::<Result<_>>()?;
    let p_fakes: Vec<[F; 5]> = gen.iter().map(|g| fake_probs(critic, g)).collect::<Result<_>>()?;
    Ok(adv_d_from_probs(&p_real, &p_fakes))
}

/// Generator adversarial loss over a batch.
pub fn adv_g_loss<F: Scalar>(critic: &dyn Critic<F>, gen: &[GeneratedSet<F>]) -> Result<F> {
    if gen.is_empty() {
        return Err(Error::shape("adversarial batch", ">= 1 generated set", "0"));
    }
    let p_fakes: Vec<[F; 5]> = gen.iter().map(|g| fake_probs(critic, g)).collect::<Result<_>>()?;
    Ok(adv_g_from_probs(&p_fakes))
}

/// Discriminator loss and parameter gradients over a batch.
pub fn adv_d_loss_grads<F: Scalar>(
    disc: &Discriminator<F>,
    real: &[ImageTensor<F>],
    gen: &[GeneratedSet<F>],
    grads: &mut DiscriminatorGrads<F>,
) -> Result<F> {
    if real.len() != gen.len() || real.is_empty() {
        return Err(Error::shape(
            "adversarial batch",
            "equal non-zero real/generated counts",
            format!("{} vs {}", real.len(), gen.len()),
        ));
    }
    let n = F::from_count(real.len());
    let fifth = F::cast(0.2);
    let mut p_real = Vec::with_capacity(real.len());
    let mut p_fakes = Vec::with_capacity(gen.len());
    for (r, g) in real.iter().zip(gen) {
        let trace = disc.forward_trace(r)?;
        // d/dp of -(1/N) log p
        let d_p = -(F::one() / n) / trace.p;
        disc.backward(&trace, d_p, Some(grads));
        p_real.push(trace.p);

        let mut fakes = [F::zero(); 5];
        for (slot, img) in fakes.iter_mut().zip(g.full_res_images()) {
            let trace = disc.forward_trace(img)?;
            // d/dp of -(1/(5N)) log(1 - p)
            let d_p = (fifth / n) / (F::one() - trace.p);
            disc.backward(&trace, d_p, Some(grads));
            *slot = trace.p;
        }
        p_fakes.push(fakes);
    }
    Ok(adv_d_from_probs(&p_real, &p_fakes))
}

/// Generator adversarial loss for one sample, with gradients on each of the
/// five generated images (through the adversary's input path only).
pub fn adv_g_loss_grads<F: Scalar>(
    disc: &Discriminator<F>,
    gen: &GeneratedSet<F>,
) -> Result<(F, SetGrads<F>)> {
    let fifth = F::cast(0.2);
    let mut grads = SetGrads::zeros_like(gen);
    let imgs = gen.full_res_images();
    let mut probs = [F::zero(); 5];
    for (j, img) in imgs.iter().enumerate() {
        let trace = disc.forward_trace(img)?;
        // d/dp of -(1/5) log p
        let d_p = -fifth / trace.p;
        let d_img = disc.backward(&trace, d_p, None);
        probs[j] = trace.p;
        if j < 4 {
            grads.coarse_full[j] = d_img;
        } else {
            grads.boosted = d_img;
        }
    }
    Ok((adv_g_from_probs(&[probs]), grads))
}

// ---------------------------------------------------------------------------
// Identity-preserving loss
// ---------------------------------------------------------------------------

/// Mean over the five generated images of the L1 distances of both feature
/// taps against the reference image.
pub fn identity_loss<F: Scalar>(
    extractor: &dyn FeatureExtractor<F>,
    gen: &GeneratedSet<F>,
    reference: &ImageTensor<F>,
) -> Result<F> {
    identity_loss_impl(extractor, gen, reference, false).map(|(l, _)| l)
}

pub fn identity_loss_grads<F: Scalar>(
    extractor: &dyn FeatureExtractor<F>,
    gen: &GeneratedSet<F>,
    reference: &ImageTensor<F>,
) -> Result<(F, SetGrads<F>)> {
    identity_loss_impl(extractor, gen, reference, true)
        .map(|(l, g)| (l, g.expect("grads requested")))
}

fn identity_loss_impl<F: Scalar>(
    extractor: &dyn FeatureExtractor<F>,
    gen: &GeneratedSet<F>,
    reference: &ImageTensor<F>,
    want_grads: bool,
) -> Result<(F, Option<SetGrads<F>>)> {
    let ref_taps = extractor.extract(reference)?;
    let (pd, fd) = extractor.tap_dims();
    if ref_taps.pool.len() != pd || ref_taps.fc.len() != fd {
        return Err(Error::shape(
            "extractor taps",
            format!("({pd}, {fd})"),
            format!("({}, {})", ref_taps.pool.len(), ref_taps.fc.len()),
        ));
    }
    let fifth = F::cast(0.2);
    let mut grads = want_grads.then(|| SetGrads::zeros_like(gen));
    let mut total = F::zero();
    for (j, img) in gen.full_res_images().iter().enumerate() {
        let taps = extractor.extract(img)?;
        let mut dist = F::zero();
        for (a, b) in taps.pool.iter().zip(ref_taps.pool.iter()) {
            dist = dist + (*a - *b).abs();
        }
        for (a, b) in taps.fc.iter().zip(ref_taps.fc.iter()) {
            dist = dist + (*a - *b).abs();
        }
        total = total + dist;
        if let Some(g) = grads.as_mut() {
            let d_pool =
                Array1::from_iter(taps.pool.iter().zip(ref_taps.pool.iter()).map(|(a, b)| sign(*a - *b) * fifth));
            let d_fc =
                Array1::from_iter(taps.fc.iter().zip(ref_taps.fc.iter()).map(|(a, b)| sign(*a - *b) * fifth));
            let d_img = extractor.extract_vjp(img, &d_pool, &d_fc)?;
            if j < 4 {
                g.coarse_full[j] = d_img;
            } else {
                g.boosted = d_img;
            }
        }
    }
    Ok((total * fifth, grads))
}

// ---------------------------------------------------------------------------
// Pixel-level losses
// ---------------------------------------------------------------------------

fn mean_abs_diff<F: Scalar>(a: &Array3<F>, b: &Array3<F>) -> F {
    let mut acc = F::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        acc = acc + (*x - *y).abs();
    }
    acc / F::from_count(a.len())
}

/// Multi-scale reconstruction loss: each coarse pyramid is supervised at
/// all three scales (ground truth downsampled by area averaging), the
/// boosted output at full scale only; the five image terms are averaged.
pub fn pixel_multiscale_loss<F: Scalar>(gen: &GeneratedSet<F>, gt: &ImageTensor<F>) -> Result<F> {
    pixel_loss_impl(gen, gt, false).map(|(l, _)| l)
}

pub fn pixel_multiscale_loss_grads<F: Scalar>(
    gen: &GeneratedSet<F>,
    gt: &ImageTensor<F>,
) -> Result<(F, SetGrads<F>)> {
    pixel_loss_impl(gen, gt, true).map(|(l, g)| (l, g.expect("grads requested")))
}

fn pixel_loss_impl<F: Scalar>(
    gen: &GeneratedSet<F>,
    gt: &ImageTensor<F>,
    want_grads: bool,
) -> Result<(F, Option<SetGrads<F>>)> {
    gen.validate()?;
    if gt.dims() != gen.boosted.dims() {
        return Err(Error::shape(
            "pixel loss ground truth",
            format!("{:?}", gen.boosted.dims()),
            format!("{:?}", gt.dims()),
        ));
    }
    let gt_half = gt.downsample_half()?;
    let gt_quarter = gt_half.downsample_half()?;
    let fifth = F::cast(0.2);
    let third = F::one() / F::cast(3.0);

    let mut grads = want_grads.then(|| SetGrads::zeros_like(gen));
    let mut total = F::zero();
    for (i, ms) in gen.coarse.iter().enumerate() {
        let mut term = F::zero();
        for (out, target) in [(&ms.full, gt), (&ms.half, &gt_half), (&ms.quarter, &gt_quarter)] {
            term = term + mean_abs_diff(out.data(), target.data());
        }
        total = total + term * third;
        if let Some(g) = grads.as_mut() {
            for (slot, out, target) in [
                (&mut g.coarse_full[i], &ms.full, gt),
                (&mut g.coarse_half[i], &ms.half, &gt_half),
                (&mut g.coarse_quarter[i], &ms.quarter, &gt_quarter),
            ] {
                let scale = fifth * third / F::from_count(out.data().len());
                let mut d = out.data().clone();
                d.zip_mut_with(target.data(), |a, &b| *a = sign(*a - b) * scale);
                *slot = d;
            }
        }
    }
    total = total + mean_abs_diff(gen.boosted.data(), gt.data());
    if let Some(g) = grads.as_mut() {
        let scale = fifth / F::from_count(gen.boosted.data().len());
        let mut d = gen.boosted.data().clone();
        d.zip_mut_with(gt.data(), |a, &b| *a = sign(*a - b) * scale);
        g.boosted = d;
    }
    Ok((total * fifth, grads))
}

/// Left-right asymmetry of one image: mean over channels, normalized by
/// (W/2)·H. Width must be even.
pub fn symmetry_of_image<F: Scalar>(img: &ImageTensor<F>) -> Result<F> {
    let (c, h, w) = img.dims();
    if w % 2 != 0 {
        return Err(Error::shape("symmetry loss", "even width", format!("{w}")));
    }
    let data = img.data();
    let mut acc = F::zero();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w / 2 {
                acc = acc + (data[(ch, y, x)] - data[(ch, y, w - 1 - x)]).abs();
            }
        }
    }
    Ok(acc / F::from_count((w / 2) * h * c))
}

/// Symmetry loss: mean of `symmetry_of_image` over the five full-resolution
/// generated images.
pub fn symmetry_loss<F: Scalar>(gen: &GeneratedSet<F>) -> Result<F> {
    let mut total = F::zero();
    for img in gen.full_res_images() {
        total = total + symmetry_of_image(img)?;
    }
    Ok(total * F::cast(0.2))
}

pub fn symmetry_loss_grads<F: Scalar>(gen: &GeneratedSet<F>) -> Result<(F, SetGrads<F>)> {
    let mut grads = SetGrads::zeros_like(gen);
    let mut total = F::zero();
    for (j, img) in gen.full_res_images().iter().enumerate() {
        total = total + symmetry_of_image(img)?;
        let (c, h, w) = img.dims();
        let scale = F::cast(0.2) / F::from_count((w / 2) * h * c);
        let data = img.data();
        let slot = if j < 4 { &mut grads.coarse_full[j] } else { &mut grads.boosted };
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w / 2 {
                    let s = sign(data[(ch, y, x)] - data[(ch, y, w - 1 - x)]) * scale;
                    slot[(ch, y, x)] = slot[(ch, y, x)] + s;
                    slot[(ch, y, w - 1 - x)] = slot[(ch, y, w - 1 - x)] - s;
                }
            }
        }
    }
    Ok((total * F::cast(0.2), grads))
}

/// Anisotropic total variation of one image: absolute differences of
/// horizontally and vertically adjacent pixels, summed over channels;
/// neighbor terms that would fall outside the image are omitted.
pub fn tv_of_image<F: Scalar>(img: &ImageTensor<F>) -> F {
    let (c, h, w) = img.dims();
    let data = img.data();
    let mut acc = F::zero();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    acc = acc + (data[(ch, y, x + 1)] - data[(ch, y, x)]).abs();
                }
                if y + 1 < h {
                    acc = acc + (data[(ch, y + 1, x)] - data[(ch, y, x)]).abs();
                }
            }
        }
    }
    acc
}

/// Total-variation regularizer: mean of `tv_of_image` over the five
/// full-resolution generated images.
pub fn tv_loss<F: Scalar>(gen: &GeneratedSet<F>) -> F {
    let mut total = F::zero();
    for img in gen.full_res_images() {
        total = total + tv_of_image(img);
    }
    total * F::cast(0.2)
}

pub fn tv_loss_grads<F: Scalar>(gen: &GeneratedSet<F>) -> (F, SetGrads<F>) {
    let fifth = F::cast(0.2);
    let mut grads = SetGrads::zeros_like(gen);
    let mut total = F::zero();
    for (j, img) in gen.full_res_images().iter().enumerate() {
        total = total + tv_of_image(img);
        let (c, h, w) = img.dims();
        let data = img.data();
        let slot = if j < 4 { &mut grads.coarse_full[j] } else { &mut grads.boosted };
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    if x + 1 < w {
                        let s = sign(data[(ch, y, x + 1)] - data[(ch, y, x)]) * fifth;
                        slot[(ch, y, x + 1)] = slot[(ch, y, x + 1)] + s;
                        slot[(ch, y, x)] = slot[(ch, y, x)] - s;
                    }
                    if y + 1 < h {
                        let s = sign(data[(ch, y + 1, x)] - data[(ch, y, x)]) * fifth;
                        slot[(ch, y + 1, x)] = slot[(ch, y + 1, x)] + s;
                        slot[(ch, y, x)] = slot[(ch, y, x)] - s;
                    }
                }
            }
        }
    }
    (total * fifth, grads)
}

// ---------------------------------------------------------------------------
// Overall generator objective
// ---------------------------------------------------------------------------

/// Weighted sum of the minimizable components. Rejects non-finite inputs,
/// naming the offending component.
pub fn total_generator_loss(weights: &LossWeights, adv: f64, pix: f64, sym: f64, ip: f64, tv: f64) -> Result<LossBreakdown> {
    for (name, v) in [("adv", adv), ("pix", pix), ("sym", sym), ("ip", ip), ("tv", tv)] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                component: name.into(),
            });
        }
    }
    let total = weights.adv * adv + weights.pix * pix + weights.sym * sym + weights.ip * ip + weights.tv * tv;
    if !total.is_finite() {
        return Err(Error::NonFinite {
            component: "total".into(),
        });
    }
    Ok(LossBreakdown {
        adv,
        pix,
        sym,
        ip,
        tv,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::LinearStubExtractor;

    fn image_from(values: Array3<f64>) -> ImageTensor<f64> {
        ImageTensor::new(values).unwrap()
    }

    fn toy_image(size: usize, salt: usize) -> ImageTensor<f64> {
        image_from(Array3::from_shape_fn((3, size, size), |(c, y, x)| {
            (((c + 1) * (y * size + x + 1) + salt * 29) % 97) as f64 / 97.0
        }))
    }

    fn pyramid_of(img: &ImageTensor<f64>) -> MultiScaleOutput<f64> {
        let half = img.downsample_half().unwrap();
        let quarter = half.downsample_half().unwrap();
        MultiScaleOutput {
            full: img.clone(),
            half,
            quarter,
        }
    }

    fn toy_set(size: usize, salt: usize) -> GeneratedSet<f64> {
        GeneratedSet {
            coarse: std::array::from_fn(|i| pyramid_of(&toy_image(size, salt + i))),
            boosted: toy_image(size, salt + 9),
        }
    }

    fn set_equal_to(gt: &ImageTensor<f64>) -> GeneratedSet<f64> {
        GeneratedSet {
            coarse: std::array::from_fn(|_| pyramid_of(gt)),
            boosted: gt.clone(),
        }
    }

    #[test]
    fn stubbed_adversary_matches_hand_arithmetic() {
        // p = 0.5 everywhere: D loss = -2 log 0.5, G loss = -log 0.5.
        let p = [[0.5f64; 5]];
        let d = adv_d_from_probs(&[0.5], &p);
        assert!((d - 2.0 * std::f64::consts::LN_2).abs() < 1e-9, "got {d}");
        let g = adv_g_from_probs(&p);
        assert!((g - std::f64::consts::LN_2).abs() < 1e-9, "got {g}");

        // Image-level wrappers with a constant critic agree.
        let gt = toy_image(4, 0);
        let gen = vec![set_equal_to(&gt)];
        let critic = ConstantCritic(0.5f64);
        assert!((adv_d_loss(&critic, &[gt.clone()], &gen).unwrap() - d).abs() < 1e-12);
        assert!((adv_g_loss(&critic, &gen).unwrap() - g).abs() < 1e-12);
    }

    #[test]
    fn optimal_adversary_drives_losses_to_zero() {
        let near_one: f64 = 1.0 - 1e-7;
        let d = adv_d_from_probs(&[near_one], &[[1e-7f64; 5]]);
        assert!(d.abs() < 1e-5, "got {d}");
        let g = adv_g_from_probs(&[[near_one; 5]]);
        assert!(g.abs() < 1e-5, "got {g}");
    }

    #[test]
    fn adv_d_batch_mean_equals_mean_of_singles() {
        let a = ([0.3f64], [[0.2f64, 0.4, 0.6, 0.8, 0.5]]);
        let b = ([0.9f64], [[0.1f64, 0.3, 0.5, 0.7, 0.9]]);
        let joint = adv_d_from_probs(&[a.0[0], b.0[0]], &[a.1[0], b.1[0]]);
        let mean = 0.5 * (adv_d_from_probs(&a.0, &a.1) + adv_d_from_probs(&b.0, &b.1));
        assert!((joint - mean).abs() < 1e-12);
    }

    #[test]
    fn clamped_log_terms_stay_bounded() {
        let worst = adv_d_from_probs(&[0.0f64], &[[1.0f64; 5]]);
        assert!(worst.is_finite());
        assert!(worst <= 2.0 * 16.12, "got {worst}");
        assert!(adv_g_from_probs(&[[0.0f64; 5]]).is_finite());
    }

    #[test]
    fn identity_loss_zero_when_generated_equals_reference() {
        let gt = toy_image(4, 1);
        let gen = set_equal_to(&gt);
        let stub = LinearStubExtractor::new(3, 4, 4);
        let l = identity_loss(&stub, &gen, &gt).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn identity_loss_decreases_as_image_approaches_reference() {
        let gt = image_from(Array3::from_elem((3, 4, 4), 0.8));
        let stub = LinearStubExtractor::new(3, 4, 4);
        let mut last = f64::INFINITY;
        for step in 0..4 {
            // Blend one generated image toward the reference.
            let blend = 0.25 * step as f64;
            let img = image_from(Array3::from_elem((3, 4, 4), 0.2 + 0.6 * blend));
            let mut gen = set_equal_to(&gt);
            gen.coarse[0] = pyramid_of(&img);
            let l = identity_loss(&stub, &gen, &gt).unwrap();
            assert!(l < last, "loss must fall monotonically: {l} !< {last}");
            last = l;
        }
    }

    #[test]
    fn identity_term_symmetric_in_absolute_value() {
        let a = toy_image(4, 2);
        let b = toy_image(4, 7);
        let stub = LinearStubExtractor::new(3, 4, 4);
        let l_ab = identity_loss(&stub, &set_equal_to(&a), &b).unwrap();
        let l_ba = identity_loss(&stub, &set_equal_to(&b), &a).unwrap();
        assert!((l_ab - l_ba).abs() < 1e-12);
    }

    #[test]
    fn pixel_loss_zero_at_ground_truth_and_shift_arithmetic() {
        let gt = toy_image(4, 3);
        assert_eq!(pixel_multiscale_loss(&set_equal_to(&gt), &gt).unwrap(), 0.0);

        // One coarse member's full output shifted by +0.1, everything else
        // exact: that member's term is 0.1/3, the total 0.1/15.
        let gt_flat = image_from(Array3::from_elem((3, 4, 4), 0.45));
        let mut gen = set_equal_to(&gt_flat);
        let shifted = image_from(gt_flat.data().mapv(|v| v + 0.1));
        gen.coarse[2] = MultiScaleOutput {
            full: shifted,
            half: gt_flat.downsample_half().unwrap(),
            quarter: gt_flat.downsample_half().unwrap().downsample_half().unwrap(),
        };
        let l = pixel_multiscale_loss(&gen, &gt_flat).unwrap();
        // Brute-force check of the same quantity.
        let brute = 0.1 / 15.0;
        assert!((l - brute).abs() < 1e-12, "got {l}, want {brute}");
    }

    #[test]
    fn pixel_loss_invariant_under_shared_horizontal_flip() {
        let gt = toy_image(8, 4);
        let gen = toy_set(8, 21);
        let l = pixel_multiscale_loss(&gen, &gt).unwrap();

        let flip_set = GeneratedSet {
            coarse: std::array::from_fn(|i| MultiScaleOutput {
                full: gen.coarse[i].full.flip_horizontal(),
                half: gen.coarse[i].half.flip_horizontal(),
                quarter: gen.coarse[i].quarter.flip_horizontal(),
            }),
            boosted: gen.boosted.flip_horizontal(),
        };
        let l_flip = pixel_multiscale_loss(&flip_set, &gt.flip_horizontal()).unwrap();
        assert!((l - l_flip).abs() < 1e-12);
    }

    #[test]
    fn symmetry_kernel_hand_cases() {
        // Mirror-symmetric image: zero.
        let sym = image_from(Array3::from_shape_fn((1, 2, 4), |(_, _, x)| {
            [0.1, 0.7, 0.7, 0.1][x]
        }));
        assert_eq!(symmetry_of_image(&sym).unwrap(), 0.0);

        // 2x2 single channel [[0,1],[0,1]] -> 1.0.
        let img = image_from(Array3::from_shape_fn((1, 2, 2), |(_, _, x)| x as f64));
        assert!((symmetry_of_image(&img).unwrap() - 1.0).abs() < 1e-12);

        // Constant image: zero.
        let flat = image_from(Array3::from_elem((3, 4, 4), 0.3));
        assert_eq!(symmetry_of_image(&flat).unwrap(), 0.0);

        // Odd width rejected.
        let odd = image_from(Array3::from_elem((1, 2, 3), 0.5));
        assert!(symmetry_of_image(&odd).is_err());
    }

    #[test]
    fn tv_kernel_hand_cases() {
        // Constant: zero.
        let flat = image_from(Array3::from_elem((3, 4, 4), 0.3));
        assert_eq!(tv_of_image(&flat), 0.0);

        // 2x2 single channel [[0,1],[0,1]]: all 4 in-bounds adjacent pairs sum to 2.
        let img = image_from(Array3::from_shape_fn((1, 2, 2), |(_, _, x)| x as f64));
        assert!((tv_of_image(&img) - 2.0).abs() < 1e-12);

        // Linear horizontal ramp over width 128: 1.0 per row, vertical 0.
        let ramp = image_from(Array3::from_shape_fn((1, 128, 128), |(_, _, x)| {
            x as f64 / 127.0
        }));
        assert!((tv_of_image(&ramp) - 128.0).abs() < 1e-9);
    }

    #[test]
    fn total_loss_composition_and_linearity() {
        let w = LossWeights::default();
        let b = total_generator_loss(&w, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((b.total - 61.301).abs() < 1e-9, "got {}", b.total);

        let zero = LossWeights {
            adv: 0.0,
            pix: 0.0,
            sym: 0.0,
            ip: 0.0,
            tv: 0.0,
        };
        assert_eq!(total_generator_loss(&zero, 5.0, 4.0, 3.0, 2.0, 1.0).unwrap().total, 0.0);

        // Doubling the pixel weight adds exactly one more pixel term.
        let mut w2 = w;
        w2.pix *= 2.0;
        let b2 = total_generator_loss(&w2, 1.0, 2.5, 1.0, 1.0, 1.0).unwrap();
        let b1 = total_generator_loss(&w, 1.0, 2.5, 1.0, 1.0, 1.0).unwrap();
        assert!((b2.total - b1.total - 2.5).abs() < 1e-12);

        // Non-finite components are named.
        let err = total_generator_loss(&w, 1.0, f64::NAN, 0.0, 0.0, 0.0).unwrap_err();
        match err {
            Error::NonFinite { component } => assert_eq!(component, "pix"),
            other => panic!("unexpected error {other}"),
        }
    }
}
