//! Image preprocessing and the stochastic perturbations that produce the
//! two views of each unlabeled sample: color jitter, horizontal flip, and
//! random translation via cropping. No additive noise anywhere. Pixels
//! stay in [0,1] after every stage.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// ITU-R BT.601 luma weights.
const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Interleaved-channel image with pixel values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, `channels` values per pixel.
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::BadShape { context: "Image::new", shape: vec![width, height, channels] });
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Invalid("Image::new: pixel count does not match dimensions".into()));
        }
        Ok(Image { width, height, channels, pixels })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Image { width, height, channels, pixels: vec![value; width * height * channels] }
    }

    fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Single-channel image as a [1,H,W] tensor.
    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        if self.channels != 1 {
            return Err(Error::Invalid("to_tensor expects a grayscale image".into()));
        }
        Tensor::new(&[1, self.height, self.width], self.pixels.clone())
    }
}

/// The perturbation policy for view-pair generation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    /// Brightness delta drawn uniformly from [-b, +b].
    pub brightness_delta: f32,
    /// Saturation factor drawn uniformly from this range (1 = identity,
    /// 0 = grayscale).
    pub saturation_range: (f32, f32),
    pub hflip_probability: f32,
    pub source_size: (usize, usize),
    pub crop_size: (usize, usize),
}

impl AugmentSpec {
    /// The 144 -> 128 policy used for the real-image experiments.
    pub fn default_144() -> Self {
        AugmentSpec {
            brightness_delta: 0.2,
            saturation_range: (0.5, 1.5),
            hflip_probability: 0.5,
            source_size: (144, 144),
            crop_size: (128, 128),
        }
    }

    /// Same jitter policy at an arbitrary source/crop geometry.
    pub fn with_geometry(source: usize, crop: usize) -> Self {
        AugmentSpec {
            source_size: (source, source),
            crop_size: (crop, crop),
            ..Self::default_144()
        }
    }

    /// All randomness off: identity jitter, no flip, center crop. Makes
    /// the train path coincide with the eval path.
    pub fn degenerate(source: usize, crop: usize) -> Self {
        AugmentSpec {
            brightness_delta: 0.0,
            saturation_range: (1.0, 1.0),
            hflip_probability: 0.0,
            source_size: (source, source),
            crop_size: (crop, crop),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_size.0 > self.source_size.0 || self.crop_size.1 > self.source_size.1 {
            return Err(Error::Invalid("AugmentSpec: crop size exceeds source size".into()));
        }
        Ok(())
    }
}

/// Bilinear resize with half-pixel centers, clamped to [0,1].
pub fn resize(img: &Image, w: usize, h: usize) -> Image {
    if w == img.width && h == img.height {
        return img.clone();
    }
    let sx = img.width as f32 / w as f32;
    let sy = img.height as f32 / h as f32;
    let mut pixels = vec![0.0f32; w * h * img.channels];
    for y in 0..h {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f32);
        let y0 = fy as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let wy = fy - y0 as f32;
        for x in 0..w {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f32);
            let x0 = fx as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let wx = fx - x0 as f32;
            for c in 0..img.channels {
                let top = img.at(x0, y0, c) * (1.0 - wx) + img.at(x1, y0, c) * wx;
                let bot = img.at(x0, y1, c) * (1.0 - wx) + img.at(x1, y1, c) * wx;
                pixels[(y * w + x) * img.channels + c] = (top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0);
            }
        }
    }
    Image { width: w, height: h, channels: img.channels, pixels }
}

/// Brightness shift plus saturation blend toward luma, clamped to [0,1].
/// On 1-channel images saturation is a no-op.
pub fn color_jitter(img: &Image, delta: f32, saturation: f32) -> Image {
    let mut out = img.clone();
    match img.channels {
        1 => {
            for p in out.pixels.iter_mut() {
                *p = (*p + delta).clamp(0.0, 1.0);
            }
        }
        _ => {
            for px in out.pixels.chunks_mut(3) {
                let luma = LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2];
                for v in px.iter_mut() {
                    let sat = luma + saturation * (*v - luma);
                    *v = (sat + delta).clamp(0.0, 1.0);
                }
            }
        }
    }
    out
}

/// Reverse the column order.
pub fn hflip(img: &Image) -> Image {
    let mut out = img.clone();
    let (w, c) = (img.width, img.channels);
    for y in 0..img.height {
        for x in 0..w {
            for ch in 0..c {
                out.pixels[(y * w + x) * c + ch] = img.pixels[(y * w + (w - 1 - x)) * c + ch];
            }
        }
    }
    out
}

pub fn crop(img: &Image, ox: usize, oy: usize, cw: usize, ch: usize) -> Result<Image> {
    if ox + cw > img.width || oy + ch > img.height {
        return Err(Error::Invalid("crop region exceeds source image".into()));
    }
    let c = img.channels;
    let mut pixels = Vec::with_capacity(cw * ch * c);
    for y in oy..oy + ch {
        let row = &img.pixels[(y * img.width + ox) * c..(y * img.width + ox + cw) * c];
        pixels.extend_from_slice(row);
    }
    Ok(Image { width: cw, height: ch, channels: c, pixels })
}

/// Uniform offsets over the full slack range.
pub fn random_crop(img: &Image, cw: usize, ch: usize, rng: &mut impl Rng) -> Result<Image> {
    if cw > img.width || ch > img.height {
        return Err(Error::Invalid("random_crop: source smaller than crop".into()));
    }
    let ox = rng.random_range(0..=img.width - cw);
    let oy = rng.random_range(0..=img.height - ch);
    crop(img, ox, oy, cw, ch)
}

pub fn center_crop(img: &Image, cw: usize, ch: usize) -> Result<Image> {
    if cw > img.width || ch > img.height {
        return Err(Error::Invalid("center_crop: source smaller than crop".into()));
    }
    crop(img, (img.width - cw) / 2, (img.height - ch) / 2, cw, ch)
}

/// BT.601 luma; already-grayscale input passes through unchanged.
pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let pixels = img
        .pixels
        .chunks(3)
        .map(|px| LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2])
        .collect();
    Image { width: img.width, height: img.height, channels: 1, pixels }
}

/// One stochastic pass of the train-time pipeline:
/// jitter -> flip (with probability p) -> random crop -> grayscale.
pub fn augment_once(img: &Image, spec: &AugmentSpec, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    spec.validate()?;
    let b = spec.brightness_delta;
    let delta = if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 };
    let (s_lo, s_hi) = spec.saturation_range;
    let sat = if s_hi > s_lo { rng.random_range(s_lo..=s_hi) } else { s_lo };
    let mut out = color_jitter(img, delta, sat);
    if spec.hflip_probability > 0.0 && rng.random::<f32>() < spec.hflip_probability {
        out = hflip(&out);
    }
    let (cw, ch) = spec.crop_size;
    if cw > img.width || ch > img.height {
        return Err(Error::Invalid("augment: source smaller than crop".into()));
    }
    out = if (img.width, img.height) == (cw, ch) {
        out
    } else if spec.brightness_delta == 0.0
        && spec.hflip_probability == 0.0
        && spec.saturation_range.0 == spec.saturation_range.1
    {
        // degenerate spec: fixed center crop, no rng consumption
        center_crop(&out, cw, ch)?
    } else {
        random_crop(&out, cw, ch, rng)?
    };
    to_grayscale(&out).to_tensor()
}

/// Generate the two perturbed views of one unlabeled image, each from its
/// own rng substream derived from the caller's stream.
pub fn perturb_pair(
    img: &Image,
    spec: &AugmentSpec,
    rng: &mut impl Rng,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let s1 = rng.random::<u64>();
    let s2 = rng.random::<u64>();
    perturb_pair_seeded(img, spec, s1, s2)
}

/// Substream-explicit variant; swapping the seeds swaps the two views.
pub fn perturb_pair_seeded(
    img: &Image,
    spec: &AugmentSpec,
    seed1: u64,
    seed2: u64,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let v1 = augment_once(img, spec, &mut ChaCha8Rng::seed_from_u64(seed1))?;
    let v2 = augment_once(img, spec, &mut ChaCha8Rng::seed_from_u64(seed2))?;
    Ok((v1, v2))
}

/// Deterministic test-time path: center crop, then grayscale.
pub fn eval_path(img: &Image, crop_w: usize, crop_h: usize) -> Result<Tensor<f32>> {
    to_grayscale(&center_crop(img, crop_w, crop_h)?).to_tensor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn checker(w: usize, h: usize) -> Image {
        let pixels = (0..w * h).map(|i| ((i % w + i / w) % 2) as f32).collect();
        Image::new(w, h, 1, pixels).unwrap()
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::constant(7, 5, 3, 0.42);
        let out = resize(&img, 13, 11);
        assert!(out.pixels.iter().all(|&p| (p - 0.42).abs() < 1e-6));
    }

    #[test]
    fn resize_identity() {
        let img = checker(144, 144);
        assert_eq!(resize(&img, 144, 144), img);
    }

    #[test]
    fn resize_2x2_to_4x4_bilinear_weights() {
        // columns [0,1] upsampled 2x with half-pixel centers:
        // dst x=0 -> src -0.25 (clamped) = 0; x=1 -> 0.25 blend = 0.25;
        // x=2 -> 0.75 blend = 0.75; x=3 -> 1.25 (clamped) = 1
        let img = Image::new(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = resize(&img, 4, 4);
        for row in 0..4 {
            let r = &out.pixels[row * 4..row * 4 + 4];
            assert_relative_eq!(r[0], 0.0);
            assert_relative_eq!(r[1], 0.25, max_relative = 1e-6);
            assert_relative_eq!(r[2], 0.75, max_relative = 1e-6);
            assert_relative_eq!(r[3], 1.0);
        }
    }

    #[test]
    fn jitter_identity_parameters() {
        let img = checker(8, 8);
        assert_eq!(color_jitter(&img, 0.0, 1.0), img);
    }

    #[test]
    fn full_desaturation_equals_grayscale() {
        let pixels = vec![0.8, 0.1, 0.3, 0.2, 0.9, 0.4];
        let img = Image::new(2, 1, 3, pixels).unwrap();
        let des = color_jitter(&img, 0.0, 0.0);
        let gray = to_grayscale(&img);
        for p in 0..2 {
            for c in 0..3 {
                assert_relative_eq!(des.at(p, 0, c), gray.at(p, 0, 0), max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn brightness_clamps_at_one() {
        let img = Image::constant(2, 2, 1, 0.95);
        let out = color_jitter(&img, 0.1, 1.0);
        assert!(out.pixels.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn hflip_is_involution() {
        let img = checker(9, 4);
        assert_eq!(hflip(&hflip(&img)), img);
        let tiny = Image::new(2, 1, 1, vec![0.25, 0.75]).unwrap();
        assert_eq!(hflip(&tiny).pixels, vec![0.75, 0.25]);
    }

    #[test]
    fn center_crop_region() {
        // 144x144 -> 128x128 picks [8..136)^2
        let img = Image::new(
            144,
            144,
            1,
            (0..144 * 144).map(|i| (i % 251) as f32 / 251.0).collect(),
        )
        .unwrap();
        let out = center_crop(&img, 128, 128).unwrap();
        assert_eq!(out.at(0, 0, 0), img.at(8, 8, 0));
        assert_eq!(out.at(127, 127, 0), img.at(135, 135, 0));
    }

    #[test]
    fn crop_too_large_rejected() {
        let img = checker(16, 16);
        assert!(center_crop(&img, 17, 16).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(random_crop(&img, 16, 17, &mut rng).is_err());
    }

    #[test]
    fn grayscale_weights() {
        let white = Image::new(1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        assert_relative_eq!(to_grayscale(&white).pixels[0], 1.0, max_relative = 1e-6);
        let red = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(to_grayscale(&red).pixels[0], 0.299, max_relative = 1e-6);
        let gray = checker(3, 3);
        assert_eq!(to_grayscale(&gray), gray);
    }

    #[test]
    fn degenerate_spec_views_identical_and_equal_eval_path() {
        let img = checker(40, 40);
        let spec = AugmentSpec::degenerate(40, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (v1, v2) = perturb_pair(&img, &spec, &mut rng).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(v1, eval_path(&img, 32, 32).unwrap());
    }

    #[test]
    fn pair_is_seed_reproducible_and_exchangeable() {
        let img = checker(40, 40);
        let spec = AugmentSpec::with_geometry(40, 32);
        let (a1, a2) = perturb_pair_seeded(&img, &spec, 11, 22).unwrap();
        let (b1, b2) = perturb_pair_seeded(&img, &spec, 11, 22).unwrap();
        assert_eq!((&a1, &a2), (&b1, &b2));
        let (c1, c2) = perturb_pair_seeded(&img, &spec, 22, 11).unwrap();
        assert_eq!((c1, c2), (a2, a1));
    }

    #[test]
    fn default_spec_views_almost_always_differ() {
        let img = checker(40, 40);
        let spec = AugmentSpec::with_geometry(40, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut differ = 0;
        for _ in 0..1000 {
            let (v1, v2) = perturb_pair(&img, &spec, &mut rng).unwrap();
            if v1 != v2 {
                differ += 1;
            }
        }
        assert!(differ >= 990, "only {differ} of 1000 pairs differed");
    }

    #[test]
    fn stages_preserve_unit_range() {
        let img = checker(40, 40);
        let spec = AugmentSpec::with_geometry(40, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (v1, v2) = perturb_pair(&img, &spec, &mut rng).unwrap();
            for v in v1.data().iter().chain(v2.data()) {
                assert!((0.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn eval_path_is_deterministic_composition() {
        let img = checker(40, 40);
        let a = eval_path(&img, 32, 32).unwrap();
        let b = eval_path(&img, 32, 32).unwrap();
        assert_eq!(a, b);
        let manual = to_grayscale(&center_crop(&img, 32, 32).unwrap()).to_tensor().unwrap();
        assert_eq!(a, manual);
        let c = Image::constant(40, 40, 1, 0.5);
        assert!(eval_path(&c, 32, 32).unwrap().data().iter().all(|&v| v == 0.5));
    }
}
