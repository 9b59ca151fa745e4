//! Finite-difference verification of every loss gradient, at 64-bit
//! precision on small toy tensors. Shared by the test suite and the
//! `gradcheck` CLI command.

use ndarray::Array3;

use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::Result;
use crate::facedata::ImageTensor;
use crate::generator::MultiScaleOutput;
use crate::identity::LinearStubExtractor;
use crate::losses::{
    adv_d_loss, adv_d_loss_grads, adv_g_loss, adv_g_loss_grads, identity_loss,
    identity_loss_grads, pixel_multiscale_loss, pixel_multiscale_loss_grads, symmetry_loss,
    symmetry_loss_grads, tv_loss, tv_loss_grads, GeneratedSet, SetGrads,
};

const FD_EPS: f64 = 1e-6;

/// One line of the gradient-check report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GradCheckRow {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

fn rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6)
}

fn toy_image(size: usize, salt: usize) -> ImageTensor<f64> {
    // Interior values with no exactly-tied neighbors, so L1 kinks sit far
    // from the finite-difference probes.
    ImageTensor::new(Array3::from_shape_fn((3, size, size), |(c, y, x)| {
        0.05 + 0.9 * ((((c + 1) * (y * size + x + 1) * 7 + salt * (31 + 13 * c)) % 97) as f64 / 97.0)
    }))
    .unwrap()
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
        coarse: std::array::from_fn(|i| pyramid_of(&toy_image(size, salt + 11 * i))),
        boosted: toy_image(size, salt + 5),
    }
}

/// Compares `analytic` image gradients of `loss_fn` against central
/// differences at every coordinate of every generated image.
fn check_image_grads(
    name: &str,
    gen: &GeneratedSet<f64>,
    analytic: &SetGrads<f64>,
    include_side_scales: bool,
    loss_fn: impl Fn(&GeneratedSet<f64>) -> f64,
) -> GradCheckRow {
    let mut max_rel: f64 = 0.0;
    let mut coords = 0usize;

    let mut probe = |set_pixel: &dyn Fn(&mut GeneratedSet<f64>, f64), base: f64, a: f64| {
        let mut up_set = gen.clone();
        set_pixel(&mut up_set, base + FD_EPS);
        let up = loss_fn(&up_set);
        let mut down_set = gen.clone();
        set_pixel(&mut down_set, base - FD_EPS);
        let down = loss_fn(&down_set);
        let fd = (up - down) / (2.0 * FD_EPS);
        if fd.abs().max(a.abs()) > 1e-7 {
            max_rel = max_rel.max(rel_err(fd, a));
        }
        coords += 1;
    };

    for j in 0..5 {
        let (c, h, w) = if j < 4 {
            gen.coarse[j].full.dims()
        } else {
            gen.boosted.dims()
        };
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let base = if j < 4 {
                        gen.coarse[j].full.get(ch, y, x)
                    } else {
                        gen.boosted.get(ch, y, x)
                    };
                    let a = if j < 4 {
                        analytic.coarse_full[j][(ch, y, x)]
                    } else {
                        analytic.boosted[(ch, y, x)]
                    };
                    probe(
                        &|s: &mut GeneratedSet<f64>, v: f64| {
                            if j < 4 {
                                s.coarse[j].full.set(ch, y, x, v);
                            } else {
                                s.boosted.set(ch, y, x, v);
                            }
                        },
                        base,
                        a,
                    );
                }
            }
        }
    }

    if include_side_scales {
        for j in 0..4 {
            for scale in [1usize, 2] {
                let (c, h, w) = if scale == 1 {
                    gen.coarse[j].half.dims()
                } else {
                    gen.coarse[j].quarter.dims()
                };
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            let base = if scale == 1 {
                                gen.coarse[j].half.get(ch, y, x)
                            } else {
                                gen.coarse[j].quarter.get(ch, y, x)
                            };
                            let a = if scale == 1 {
                                analytic.coarse_half[j][(ch, y, x)]
                            } else {
                                analytic.coarse_quarter[j][(ch, y, x)]
                            };
                            probe(
                                &|s: &mut GeneratedSet<f64>, v: f64| {
                                    if scale == 1 {
                                        s.coarse[j].half.set(ch, y, x, v);
                                    } else {
                                        s.coarse[j].quarter.set(ch, y, x, v);
                                    }
                                },
                                base,
                                a,
                            );
                        }
                    }
                }
            }
        }
    }

    GradCheckRow {
        name: name.into(),
        max_rel_err: max_rel,
        coords_checked: coords,
    }
}

/// Runs the full finite-difference suite on 4x4 toy tensors and returns one
/// row per loss. All rows are expected to stay within 1e-3 relative error.
pub fn run_loss_gradcheck(seed: u64) -> Result<Vec<GradCheckRow>> {
    let size = 4;
    let gen = toy_set(size, seed as usize % 13);
    let gt = toy_image(size, 3 + seed as usize % 7);
    let mut rows = Vec::new();

    // Adversarial losses through a miniature 64-bit adversary.
    let disc = Discriminator::<f64>::new(DiscriminatorConfig::miniature(size), seed)?;

    // Discriminator side: gradients w.r.t. adversary parameters.
    {
        let real = vec![gt.clone()];
        let batch = vec![gen.clone()];
        let mut grads = disc.grads();
        adv_d_loss_grads(&disc, &real, &batch, &mut grads)?;
        let analytic = grads.flat();
        let mut d2 = Discriminator::<f64>::new(DiscriminatorConfig::miniature(size), seed)?;
        let mut max_rel: f64 = 0.0;
        let mut coords = 0usize;
        for t in 0..analytic.len() {
            let len = analytic[t].len();
            if len == 0 {
                continue;
            }
            // A handful of indices per tensor.
            for probe_i in 0..3.min(len) {
                let idx = (probe_i * 7919 + t * 104729) % len;
                let a = analytic[t][idx];
                let orig = d2.flat_mut()[t][idx];
                d2.flat_mut()[t][idx] = orig + FD_EPS;
                let up = adv_d_loss(&d2, &real, &batch)?;
                d2.flat_mut()[t][idx] = orig - FD_EPS;
                let down = adv_d_loss(&d2, &real, &batch)?;
                d2.flat_mut()[t][idx] = orig;
                let fd = (up - down) / (2.0 * FD_EPS);
                if fd.abs().max(a.abs()) > 1e-7 {
                    max_rel = max_rel.max(rel_err(fd, a));
                }
                coords += 1;
            }
        }
        rows.push(GradCheckRow {
            name: "adv_d_loss (adversary parameters)".into(),
            max_rel_err: max_rel,
            coords_checked: coords,
        });
    }

    // Generator side: gradients w.r.t. the five generated images.
    {
        let (_, analytic) = adv_g_loss_grads(&disc, &gen)?;
        let disc_ref = &disc;
        rows.push(check_image_grads(
            "adv_g_loss (generated images)",
            &gen,
            &analytic,
            false,
            move |g| adv_g_loss(disc_ref, std::slice::from_ref(g)).unwrap(),
        ));
    }

    // Identity loss with the linear stub extractor.
    {
        let stub = LinearStubExtractor::new(3, size, size);
        let (_, analytic) = identity_loss_grads(&stub, &gen, &gt)?;
        let gt_ref = &gt;
        let stub_ref = &stub;
        rows.push(check_image_grads(
            "identity_loss (stub extractor)",
            &gen,
            &analytic,
            false,
            move |g| identity_loss(stub_ref, g, gt_ref).unwrap(),
        ));
    }

    // Pixel loss across all three scales.
    {
        let (_, analytic) = pixel_multiscale_loss_grads(&gen, &gt)?;
        let gt_ref = &gt;
        rows.push(check_image_grads(
            "pixel_multiscale_loss",
            &gen,
            &analytic,
            true,
            move |g| pixel_multiscale_loss(g, gt_ref).unwrap(),
        ));
    }

    // Symmetry loss.
    {
        let (_, analytic) = symmetry_loss_grads(&gen)?;
        rows.push(check_image_grads(
            "symmetry_loss",
            &gen,
            &analytic,
            false,
            |g| symmetry_loss(g).unwrap(),
        ));
    }

    // Total variation.
    {
        let (_, analytic) = tv_loss_grads(&gen);
        rows.push(check_image_grads("tv_loss", &gen, &analytic, false, |g| tv_loss(g)));
    }

    Ok(rows)
}

/// Renders the report as an aligned text table.
pub fn format_report(rows: &[GradCheckRow]) -> String {
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut out = format!("{:<name_w$}  {:>12}  {:>8}\n", "loss", "max rel err", "coords");
    for r in rows {
        out.push_str(&format!(
            "{:<name_w$}  {:>12.3e}  {:>8}\n",
            r.name, r.max_rel_err, r.coords_checked
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_losses_pass_finite_difference_checks() {
        let rows = run_loss_gradcheck(17).unwrap();
        assert_eq!(rows.len(), 6);
        for row in &rows {
            assert!(
                row.max_rel_err <= 1e-3,
                "{}: max relative error {:.3e}",
                row.name,
                row.max_rel_err
            );
            assert!(row.coords_checked > 0);
        }
    }
}
