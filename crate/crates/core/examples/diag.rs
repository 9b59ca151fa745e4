//! Scratch diagnostic (not part of the deliverable).
use boostgan_core::facedata::ImageTensor;
use boostgan_core::generator::MultiScaleOutput;
use boostgan_core::losses::{tv_loss, tv_loss_grads, GeneratedSet};
use ndarray::Array3;

fn toy_image(size: usize, salt: usize) -> ImageTensor<f64> {
    ImageTensor::new(Array3::from_shape_fn((3, size, size), |(c, y, x)| {
        0.05 + 0.9 * ((((c + 1) * (y * size + x + 1) * 7 + salt * (31 + 13 * c)) % 97) as f64 / 97.0)
    })).unwrap()
}
fn pyramid_of(img: &ImageTensor<f64>) -> MultiScaleOutput<f64> {
    let half = img.downsample_half().unwrap();
    let quarter = half.downsample_half().unwrap();
    MultiScaleOutput { full: img.clone(), half, quarter }
}

fn main() {
    let size = 4; let salt = 17usize % 13;
    let gen = GeneratedSet {
        coarse: std::array::from_fn(|i| pyramid_of(&toy_image(size, salt + 11 * i))),
        boosted: toy_image(size, salt + 5),
    };
    let (_, analytic) = tv_loss_grads(&gen);
    let eps = 1e-6;
    for j in 0..5usize {
        for c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    let base = if j < 4 { gen.coarse[j].full.get(c, y, x) } else { gen.boosted.get(c, y, x) };
                    let mut up = gen.clone(); let mut dn = gen.clone();
                    if j < 4 { up.coarse[j].full.set(c, y, x, base + eps); dn.coarse[j].full.set(c, y, x, base - eps); }
                    else { up.boosted.set(c, y, x, base + eps); dn.boosted.set(c, y, x, base - eps); }
                    let fd = (tv_loss(&up) - tv_loss(&dn)) / (2.0 * eps);
                    let a = if j < 4 { analytic.coarse_full[j][(c, y, x)] } else { analytic.boosted[(c, y, x)] };
                    let rel = ((fd - a) / fd.abs().max(a.abs()).max(1e-6)).abs();
                    if rel > 1e-4 {
                        println!("img {j} ({c},{y},{x}) base {base:.8} fd {fd:.8e} a {a:.8e} rel {rel:.3e}");
                        // print neighbors
                        let img = if j < 4 { &gen.coarse[j].full } else { &gen.boosted };
                        for (dy, dx, tag) in [(0i64,-1i64,"left"),(0,1,"right"),(-1,0,"up"),(1,0,"down")] {
                            let ny = y as i64 + dy; let nx = x as i64 + dx;
                            if ny >= 0 && ny < size as i64 && nx >= 0 && nx < size as i64 {
                                let v = img.get(c, ny as usize, nx as usize);
                                println!("   {tag}: {v:.10} diff {:.3e}", v - base);
                            }
                        }
                    }
                }
            }
        }
    }
}
