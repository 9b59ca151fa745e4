//! Dataset ingestion, the occlusion-synthesis protocol, and deterministic
//! batch construction.
//!
//! Images are unit-interval float tensors in channel-major (C, H, W) layout;
//! PNG loaders map 8-bit values by /255. Occlusion masks are square, white by
//! default, and clipped at image borders.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Environment variable that overrides a manifest's root directory.
pub const DATA_ROOT_ENV: &str = "BOOSTGAN_DATA_ROOT";

/// Canonical training resolution.
pub const CANONICAL_SIZE: usize = 128;
/// Side length of an occlusion square.
pub const OCCLUSION_SIZE: u32 = 32;

/// An H×W×C image with values in [0, 1], stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<F: Scalar> {
    data: Array3<F>, // (C, H, W)
}

impl<F: Scalar> ImageTensor<F> {
    /// Wraps a (C, H, W) array, rejecting values outside [0, 1].
    pub fn new(data: Array3<F>) -> Result<Self> {
        for &v in data.iter() {
            if !(v >= F::zero() && v <= F::one()) {
                return Err(Error::Invalid {
                    what: "image pixel".into(),
                    detail: format!("value {} outside [0, 1]", v.to_f64x()),
                });
            }
        }
        Ok(Self { data })
    }

    /// Wraps without the range scan. For internal producers whose output
    /// nonlinearity already guarantees [0, 1].
    pub(crate) fn from_raw(data: Array3<F>) -> Self {
        Self { data }
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: F) -> Result<Self> {
        Self::new(Array3::from_elem((channels, height, width), value))
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((channels, height, width)),
        }
    }

    pub fn data(&self) -> &Array3<F> {
        &self.data
    }

    pub fn into_data(self) -> Array3<F> {
        self.data
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.data.dim() == other.data.dim()
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> F {
        self.data[(channel, y, x)]
    }

    pub fn set(&mut self, channel: usize, y: usize, x: usize, value: F) {
        self.data[(channel, y, x)] = value;
    }

    /// 2×2 area-average downsample. Requires even height and width.
    pub fn downsample_half(&self) -> Result<Self> {
        let (c, h, w) = self.dims();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "downsample_half",
                "even height and width",
                format!("{h}x{w}"),
            ));
        }
        let quarter = F::cast(0.25);
        let mut out = Array3::zeros((c, h / 2, w / 2));
        for ch in 0..c {
            for y in 0..h / 2 {
                for x in 0..w / 2 {
                    let s = self.data[(ch, 2 * y, 2 * x)]
                        + self.data[(ch, 2 * y, 2 * x + 1)]
                        + self.data[(ch, 2 * y + 1, 2 * x)]
                        + self.data[(ch, 2 * y + 1, 2 * x + 1)];
                    out[(ch, y, x)] = s * quarter;
                }
            }
        }
        Ok(Self { data: out })
    }

    /// Mirror along the vertical axis (left-right flip).
    pub fn flip_horizontal(&self) -> Self {
        let (c, h, w) = self.dims();
        let mut out = Array3::zeros((c, h, w));
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[(ch, y, x)] = self.data[(ch, y, w - 1 - x)];
                }
            }
        }
        Self { data: out }
    }

    /// Loads an 8-bit RGB PNG, mapping values by /255.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let scale = F::cast(1.0 / 255.0);
        let mut data = Array3::zeros((3, h, w));
        for (x, y, pixel) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c, y as usize, x as usize)] = F::cast(pixel.0[c] as f64) * scale;
            }
        }
        Ok(Self { data })
    }

    /// Writes an 8-bit RGB PNG, quantizing by round(v*255).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (c, h, w) = self.dims();
        if c != 3 {
            return Err(Error::shape("save_png", "3 channels", format!("{c}")));
        }
        let mut buf = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    let v = self.data[(ch, y, x)].to_f64x().clamp(0.0, 1.0);
                    buf.push((v * 255.0).round() as u8);
                }
            }
        }
        let img = image::RgbImage::from_raw(w as u32, h as u32, buf)
            .expect("buffer sized to image");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })
    }
}

/// Pixel coordinate; `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

/// The four facial landmarks used for keypoint occlusion, on the profile image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub left_eye: Point,
    pub right_eye: Point,
    pub nose_tip: Point,
    pub mouth_center: Point,
}

impl KeypointSet {
    /// Canonical occlusion order: left eye, right eye, nose, mouth.
    pub fn ordered(&self) -> [Point; 4] {
        [self.left_eye, self.right_eye, self.nose_tip, self.mouth_center]
    }

    pub fn from_flat(v: [u32; 8]) -> Self {
        Self {
            left_eye: Point::new(v[0], v[1]),
            right_eye: Point::new(v[2], v[3]),
            nose_tip: Point::new(v[4], v[5]),
            mouth_center: Point::new(v[6], v[7]),
        }
    }

    pub fn to_flat(&self) -> [u32; 8] {
        let [a, b, c, d] = self.ordered();
        [a.x, a.y, b.x, b.y, c.x, c.y, d.x, d.y]
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        self.ordered()
            .iter()
            .all(|p| (p.x as usize) < width && (p.y as usize) < height)
    }
}

/// A square occlusion mask: side `size`, centered at `center`, constant fill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSpec {
    pub center: Point,
    pub size: u32,
    pub fill: f64,
}

impl OcclusionSpec {
    pub fn at(center: Point) -> Self {
        Self {
            center,
            size: OCCLUSION_SIZE,
            fill: 1.0,
        }
    }

    /// The clipped pixel rectangle covered by this mask on a width×height
    /// image: half-open ranges (y0..y1, x0..x1).
    pub fn clipped_rect(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let half = (self.size / 2) as i64;
        let side = self.size as i64;
        let x0 = (self.center.x as i64 - half).max(0) as usize;
        let y0 = (self.center.y as i64 - half).max(0) as usize;
        let x1 = ((self.center.x as i64 - half + side).max(0) as usize).min(width);
        let y1 = ((self.center.y as i64 - half + side).max(0) as usize).min(height);
        (y0, y1, x0, x1)
    }
}

/// One identity-labeled training pair plus landmarks and pose.
#[derive(Debug, Clone)]
pub struct FaceSample<F: Scalar> {
    pub profile: ImageTensor<F>,
    pub frontal_gt: ImageTensor<F>,
    pub keypoints: KeypointSet,
    pub identity: u32,
    pub pose_deg: i32,
}

impl<F: Scalar> FaceSample<F> {
    pub fn validate(&self) -> Result<()> {
        if !self.profile.same_dims(&self.frontal_gt) {
            return Err(Error::shape(
                "face sample",
                format!("{:?}", self.profile.dims()),
                format!("{:?}", self.frontal_gt.dims()),
            ));
        }
        if !self.keypoints.within(self.profile.width(), self.profile.height()) {
            return Err(Error::Invalid {
                what: "keypoints".into(),
                detail: "landmark outside image bounds".into(),
            });
        }
        Ok(())
    }
}

/// The four masked variants of one profile image.
#[derive(Debug, Clone)]
pub struct OccludedQuadruple<F: Scalar> {
    pub images: [ImageTensor<F>; 4],
    pub specs: [OcclusionSpec; 4],
}

/// How occlusion centers are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionMode {
    Keypoint,
    Random,
}

impl std::fmt::Display for OcclusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OcclusionMode::Keypoint => write!(f, "keypoint"),
            OcclusionMode::Random => write!(f, "random"),
        }
    }
}

/// Returns a copy of `image` with the mask square set to the fill value in
/// all channels. Pixels outside the (border-clipped) square are bit-identical
/// to the input.
pub fn apply_mask<F: Scalar>(image: &ImageTensor<F>, spec: &OcclusionSpec) -> Result<ImageTensor<F>> {
    let (c, h, w) = image.dims();
    if (spec.center.x as usize) >= w || (spec.center.y as usize) >= h {
        return Err(Error::OutOfBounds {
            what: "occlusion center".into(),
            x: spec.center.x as i64,
            y: spec.center.y as i64,
            width: w,
            height: h,
        });
    }
    if spec.size == 0 {
        return Err(Error::Invalid {
            what: "occlusion size".into(),
            detail: "must be >= 1".into(),
        });
    }
    if !(0.0..=1.0).contains(&spec.fill) {
        return Err(Error::Invalid {
            what: "occlusion fill".into(),
            detail: format!("{} outside [0, 1]", spec.fill),
        });
    }
    let fill = F::cast(spec.fill);
    let (y0, y1, x0, x1) = spec.clipped_rect(w, h);
    let mut out = image.clone();
    for ch in 0..c {
        for y in y0..y1 {
            for x in x0..x1 {
                out.data[(ch, y, x)] = fill;
            }
        }
    }
    Ok(out)
}

/// Masks the profile at each facial landmark, in canonical order.
pub fn make_keypoint_quadruple<F: Scalar>(sample: &FaceSample<F>) -> Result<OccludedQuadruple<F>> {
    sample.validate()?;
    let specs = sample.keypoints.ordered().map(OcclusionSpec::at);
    let mut images = Vec::with_capacity(4);
    for spec in &specs {
        images.push(apply_mask(&sample.profile, spec)?);
    }
    Ok(OccludedQuadruple {
        images: images.try_into().map_err(|_| unreachable!()).unwrap(),
        specs,
    })
}

/// Masks the profile at four centers drawn uniformly over all in-image
/// positions. Same (sample, seed) always yields bit-identical output.
pub fn make_random_quadruple<F: Scalar>(
    sample: &FaceSample<F>,
    seed: u64,
) -> Result<OccludedQuadruple<F>> {
    sample.validate()?;
    let (_, h, w) = sample.profile.dims();
    if w < OCCLUSION_SIZE as usize || h < OCCLUSION_SIZE as usize {
        return Err(Error::shape(
            "random occlusion",
            format!("image at least {OCCLUSION_SIZE}x{OCCLUSION_SIZE}"),
            format!("{h}x{w}"),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(4);
    let mut images = Vec::with_capacity(4);
    for _ in 0..4 {
        let x = rng.random_range(0..w as u32);
        let y = rng.random_range(0..h as u32);
        let spec = OcclusionSpec::at(Point::new(x, y));
        images.push(apply_mask(&sample.profile, &spec)?);
        specs.push(spec);
    }
    Ok(OccludedQuadruple {
        images: images.try_into().map_err(|_| unreachable!()).unwrap(),
        specs: specs.try_into().unwrap(),
    })
}

/// One manifest line: paths are relative to the manifest root.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub profile_path: String,
    pub frontal_path: String,
    pub identity: u32,
    pub pose_deg: i32,
    pub keypoints: [u32; 8],
}

/// Parsed dataset manifest with a resolved root directory.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub root_dir: PathBuf,
}

/// Reads a line-delimited JSON manifest. The root directory is the manifest's
/// parent, unless `BOOSTGAN_DATA_ROOT` is set. Every referenced file must
/// exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root_dir = match std::env::var_os(DATA_ROOT_ENV) {
        Some(v) => PathBuf::from(v),
        None => path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
    };
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        for rel in [&record.profile_path, &record.frontal_path] {
            let full = root_dir.join(rel);
            if !full.is_file() {
                return Err(Error::MissingFile {
                    path: full,
                    detail: format!("referenced by {} line {}", path.display(), i + 1),
                });
            }
        }
        records.push(record);
    }
    Ok(DatasetManifest { records, root_dir })
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Loads the images for one record.
    pub fn load_sample<F: Scalar>(&self, index: usize) -> Result<FaceSample<F>> {
        let record = self.records.get(index).ok_or_else(|| Error::IndexOutOfRange {
            what: "manifest record".into(),
            index,
            len: self.records.len(),
        })?;
        let profile = ImageTensor::load_png(&self.root_dir.join(&record.profile_path))?;
        let frontal_gt = ImageTensor::load_png(&self.root_dir.join(&record.frontal_path))?;
        let sample = FaceSample {
            profile,
            frontal_gt,
            keypoints: KeypointSet::from_flat(record.keypoints),
            identity: record.identity,
            pose_deg: record.pose_deg,
        };
        sample.validate()?;
        Ok(sample)
    }
}

/// A manifest with all images decoded up front. Training touches the same
/// few dozen files thousands of times, so paying the decode cost once keeps
/// the data path off the profile.
#[derive(Debug, Clone)]
pub struct Dataset<F: Scalar> {
    pub manifest: DatasetManifest,
    pub samples: Vec<FaceSample<F>>,
}

impl<F: Scalar> Dataset<F> {
    pub fn load(manifest: DatasetManifest) -> Result<Self> {
        let samples = (0..manifest.len())
            .map(|i| manifest.load_sample(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Derives a per-sample seed from a base seed and a salt (sample index,
/// batch counter, ...). SplitMix64 finalizer; stable across platforms.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds a batch of quadruple/sample pairs for the given indices. The
/// per-slot mask seed derives from (seed, sample index), so the result is
/// independent of worker scheduling.
pub fn make_batch<F: Scalar>(
    dataset: &Dataset<F>,
    indices: &[usize],
    mode: OcclusionMode,
    seed: u64,
) -> Result<Vec<(OccludedQuadruple<F>, FaceSample<F>)>> {
    let mut batch = Vec::with_capacity(indices.len());
    for &index in indices {
        let sample = dataset.samples.get(index).ok_or_else(|| Error::IndexOutOfRange {
            what: "batch index".into(),
            index,
            len: dataset.len(),
        })?;
        let quad = match mode {
            OcclusionMode::Keypoint => make_keypoint_quadruple(sample)?,
            OcclusionMode::Random => make_random_quadruple(sample, mix_seed(seed, index as u64))?,
        };
        batch.push((quad, sample.clone()));
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient_image(h: usize, w: usize) -> ImageTensor<f32> {
        let mut img = ImageTensor::zeros(3, h, w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    img.set(c, y, x, ((c + 1) * (y * w + x)) as f32 % 97.0 / 97.0);
                }
            }
        }
        img
    }

    fn sample_128() -> FaceSample<f32> {
        FaceSample {
            profile: gradient_image(128, 128),
            frontal_gt: gradient_image(128, 128),
            keypoints: KeypointSet::from_flat([40, 50, 88, 50, 64, 70, 64, 95]),
            identity: 0,
            pose_deg: 30,
        }
    }

    #[test]
    fn mask_covers_centered_square() {
        let img = gradient_image(128, 128);
        let spec = OcclusionSpec::at(Point::new(64, 64));
        let out = apply_mask(&img, &spec).unwrap();
        let mut unchanged = 0usize;
        for y in 0..128 {
            for x in 0..128 {
                let inside = (48..=79).contains(&y) && (48..=79).contains(&x);
                for c in 0..3 {
                    if inside {
                        assert_eq!(out.get(c, y, x), 1.0, "({y},{x}) should be fill");
                    } else {
                        assert_eq!(out.get(c, y, x).to_bits(), img.get(c, y, x).to_bits());
                    }
                }
                if !inside {
                    unchanged += 1;
                }
            }
        }
        assert_eq!(unchanged, 15360);
    }

    #[test]
    fn mask_clips_at_border() {
        let img = gradient_image(128, 128);
        let spec = OcclusionSpec::at(Point::new(4, 4));
        let out = apply_mask(&img, &spec).unwrap();
        for y in 0..128 {
            for x in 0..128 {
                let inside = y <= 19 && x <= 19;
                for c in 0..3 {
                    if inside {
                        assert_eq!(out.get(c, y, x), 1.0);
                    } else {
                        assert_eq!(out.get(c, y, x).to_bits(), img.get(c, y, x).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn mask_pixel_count_matches_brute_force_oracle() {
        let img = ImageTensor::constant(3, 128, 128, 0.5f32).unwrap();
        let spec = OcclusionSpec::at(Point::new(10, 120));
        let out = apply_mask(&img, &spec).unwrap();
        let mx = out.data().iter().cloned().fold(f32::MIN, f32::max);
        let mn = out.data().iter().cloned().fold(f32::MAX, f32::min);
        assert_eq!(mx, 1.0);
        assert_eq!(mn, 0.5);
        // Independent pixel count.
        let (y0, y1, x0, x1) = spec.clipped_rect(128, 128);
        let expected_area = (y1 - y0) * (x1 - x0);
        let ones = out.data().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(ones, expected_area * 3);
    }

    #[test]
    fn mask_center_outside_rejected() {
        let img = gradient_image(32, 32);
        let err = apply_mask(&img, &OcclusionSpec::at(Point::new(32, 0))).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { .. }));
    }

    #[test]
    fn keypoint_quadruple_differs_only_inside_each_square() {
        let sample = sample_128();
        let quad = make_keypoint_quadruple(&sample).unwrap();
        for (img, spec) in quad.images.iter().zip(quad.specs.iter()) {
            let (y0, y1, x0, x1) = spec.clipped_rect(128, 128);
            for y in 0..128 {
                for x in 0..128 {
                    let inside = (y0..y1).contains(&y) && (x0..x1).contains(&x);
                    for c in 0..3 {
                        if inside {
                            assert_eq!(img.get(c, y, x), 1.0);
                        } else {
                            assert_eq!(
                                img.get(c, y, x).to_bits(),
                                sample.profile.get(c, y, x).to_bits()
                            );
                        }
                    }
                }
            }
        }
        // Disjoint squares here, so members pairwise differ.
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(quad.images[i], quad.images[j], "members {i} and {j}");
            }
        }
    }

    #[test]
    fn coincident_keypoints_give_identical_members() {
        let mut sample = sample_128();
        sample.keypoints.right_eye = sample.keypoints.left_eye;
        let quad = make_keypoint_quadruple(&sample).unwrap();
        assert_eq!(quad.images[0], quad.images[1]);
    }

    #[test]
    fn random_quadruple_is_seed_deterministic() {
        let sample = sample_128();
        let a = make_random_quadruple(&sample, 7).unwrap();
        let b = make_random_quadruple(&sample, 7).unwrap();
        assert_eq!(a.specs, b.specs);
        for (x, y) in a.images.iter().zip(b.images.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn random_quadruple_varies_across_seeds() {
        let sample = sample_128();
        let base = make_random_quadruple(&sample, 0).unwrap();
        let mut any_differ = false;
        for seed in 1..=10 {
            let other = make_random_quadruple(&sample, seed).unwrap();
            if other.specs != base.specs {
                any_differ = true;
            }
        }
        assert!(any_differ, "10 seeds should not all collide");
    }

    #[test]
    fn random_centers_always_in_bounds() {
        let sample = sample_128();
        for seed in 0..250 {
            let quad = make_random_quadruple(&sample, seed).unwrap();
            for spec in &quad.specs {
                assert!(spec.center.x < 128 && spec.center.y < 128);
            }
        }
    }

    #[test]
    fn quadruple_does_not_mutate_sample() {
        let sample = sample_128();
        let before = sample.profile.clone();
        let _ = make_keypoint_quadruple(&sample).unwrap();
        let _ = make_random_quadruple(&sample, 3).unwrap();
        assert_eq!(sample.profile, before);
    }

    #[test]
    fn downsample_half_area_averages() {
        let mut img = ImageTensor::zeros(1, 2, 2);
        img.set(0, 0, 0, 0.0);
        img.set(0, 0, 1, 1.0);
        img.set(0, 1, 0, 1.0);
        img.set(0, 1, 1, 1.0);
        let half = img.downsample_half().unwrap();
        assert_eq!(half.dims(), (1, 1, 1));
        assert!((half.get(0, 0, 0) - 0.75f32).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn mask_is_idempotent(cx in 0u32..128, cy in 0u32..128, size in 1u32..64) {
            let img = gradient_image(128, 128);
            let spec = OcclusionSpec { center: Point::new(cx, cy), size, fill: 1.0 };
            let once = apply_mask(&img, &spec).unwrap();
            let twice = apply_mask(&once, &spec).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn pixels_outside_mask_are_bit_exact(cx in 0u32..128, cy in 0u32..128) {
            let img = gradient_image(128, 128);
            let spec = OcclusionSpec::at(Point::new(cx, cy));
            let out = apply_mask(&img, &spec).unwrap();
            let (y0, y1, x0, x1) = spec.clipped_rect(128, 128);
            for y in 0..128 {
                for x in 0..128 {
                    if !((y0..y1).contains(&y) && (x0..x1).contains(&x)) {
                        for c in 0..3 {
                            prop_assert_eq!(out.get(c, y, x).to_bits(), img.get(c, y, x).to_bits());
                        }
                    }
                }
            }
        }
    }
}
