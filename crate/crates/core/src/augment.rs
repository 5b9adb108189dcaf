//! Seeded, label-preserving image augmentation.
//!
//! A sample is augmented with probability `probability`. An augmented
//! sample receives between one and `max_transforms` distinct transforms,
//! chosen uniformly from the enabled set and applied in a fixed physical
//! order: geometric, blur, noise, degradation, lighting. Nothing here sees
//! the label; transforms only map images to images.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::prng::{Lcg, PrngError};
use crate::raster::{clamp_u8, quantize, RasterImage, Rgb};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Rotation,
    Skew,
    GaussianBlur,
    MotionBlur,
    GaussianNoise,
    SaltPepper,
    Jpeg,
    Resolution,
    Brightness,
    Contrast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Geometric,
    Blur,
    Noise,
    Degradation,
    Lighting,
}

impl TransformKind {
    /// All kinds, in application order.
    pub const ALL: [TransformKind; 10] = [
        TransformKind::Rotation,
        TransformKind::Skew,
        TransformKind::GaussianBlur,
        TransformKind::MotionBlur,
        TransformKind::GaussianNoise,
        TransformKind::SaltPepper,
        TransformKind::Jpeg,
        TransformKind::Resolution,
        TransformKind::Brightness,
        TransformKind::Contrast,
    ];

    pub fn category(self) -> Category {
        use TransformKind::*;
        match self {
            Rotation | Skew => Category::Geometric,
            GaussianBlur | MotionBlur => Category::Blur,
            GaussianNoise | SaltPepper => Category::Noise,
            Jpeg | Resolution => Category::Degradation,
            Brightness | Contrast => Category::Lighting,
        }
    }

    pub fn name(self) -> &'static str {
        use TransformKind::*;
        match self {
            Rotation => "rotation",
            Skew => "skew",
            GaussianBlur => "gaussian_blur",
            MotionBlur => "motion_blur",
            GaussianNoise => "gaussian_noise",
            SaltPepper => "salt_pepper",
            Jpeg => "jpeg",
            Resolution => "resolution",
            Brightness => "brightness",
            Contrast => "contrast",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .or(match norm.as_str() {
                "rotate" => Some(TransformKind::Rotation),
                "shear" => Some(TransformKind::Skew),
                "blur" => Some(TransformKind::GaussianBlur),
                "motion" => Some(TransformKind::MotionBlur),
                "noise" => Some(TransformKind::GaussianNoise),
                "salt_and_pepper" => Some(TransformKind::SaltPepper),
                "jpeg_compression" => Some(TransformKind::Jpeg),
                "downscale" => Some(TransformKind::Resolution),
                _ => None,
            })
            .ok_or_else(|| format!("unknown transform {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub probability: f64,
    pub max_transforms: usize,
    pub enabled: Vec<TransformKind>,
    /// Rotation angle is drawn from `[-rotation_max, rotation_max]` degrees.
    pub rotation_max: f64,
    /// Horizontal shear from `[-skew_max, skew_max]`, vertical from half that.
    pub skew_max: f64,
    pub blur_sigma: [f64; 2],
    pub motion_length: [u32; 2],
    pub noise_sigma: [f64; 2],
    pub salt_pepper: [f64; 2],
    pub jpeg_quality: [u8; 2],
    pub resolution_scale: [f64; 2],
    pub brightness: [f64; 2],
    pub contrast: [f64; 2],
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            probability: 0.7,
            max_transforms: 4,
            enabled: TransformKind::ALL.to_vec(),
            rotation_max: 10.0,
            skew_max: 0.2,
            blur_sigma: [0.5, 2.0],
            motion_length: [3, 7],
            noise_sigma: [5.0, 25.0],
            salt_pepper: [0.01, 0.05],
            jpeg_quality: [30, 70],
            resolution_scale: [0.3, 0.7],
            brightness: [-0.15, 0.15],
            contrast: [0.7, 1.3],
        }
    }
}

impl AugmentationConfig {
    /// Enabled kinds, deduplicated, in application order.
    pub fn enabled_kinds(&self) -> Vec<TransformKind> {
        let mut kinds = self.enabled.clone();
        kinds.sort();
        kinds.dedup();
        kinds
    }

    /// Problems as `(field, message)` pairs; empty when valid.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field: &'static str, msg: String| {
            if !ok {
                out.push((field, msg));
            }
        };
        let range = |r: [f64; 2], lo: f64, hi: f64| r[0] <= r[1] && r[0] >= lo && r[1] <= hi;
        check(
            (0.0..=1.0).contains(&self.probability),
            "probability",
            format!("must lie in [0, 1], got {}", self.probability),
        );
        check(self.max_transforms >= 1, "max_transforms", "must be at least 1".into());
        check(
            (0.0..=45.0).contains(&self.rotation_max),
            "rotation_max",
            format!("must lie in [0, 45] degrees, got {}", self.rotation_max),
        );
        check(
            (0.0..=0.5).contains(&self.skew_max),
            "skew_max",
            format!("must lie in [0, 0.5], got {}", self.skew_max),
        );
        check(
            range(self.blur_sigma, f64::MIN_POSITIVE, 50.0),
            "blur_sigma",
            format!("need 0 < lo <= hi <= 50, got {:?}", self.blur_sigma),
        );
        let [klo, khi] = self.motion_length;
        check(
            klo <= khi && klo >= 1 && khi <= 15,
            "motion_length",
            format!("need 1 <= lo <= hi <= 15, got {:?}", self.motion_length),
        );
        check(
            range(self.noise_sigma, 0.0, 255.0),
            "noise_sigma",
            format!("need 0 <= lo <= hi <= 255, got {:?}", self.noise_sigma),
        );
        check(
            range(self.salt_pepper, 0.0, 1.0),
            "salt_pepper",
            format!("need 0 <= lo <= hi <= 1, got {:?}", self.salt_pepper),
        );
        let [qlo, qhi] = self.jpeg_quality;
        check(
            qlo <= qhi && qlo >= 1 && qhi <= 100,
            "jpeg_quality",
            format!("need 1 <= lo <= hi <= 100, got {:?}", self.jpeg_quality),
        );
        check(
            range(self.resolution_scale, f64::MIN_POSITIVE, 1.0),
            "resolution_scale",
            format!("need 0 < lo <= hi <= 1, got {:?}", self.resolution_scale),
        );
        check(
            range(self.brightness, -1.0, f64::MAX),
            "brightness",
            format!("need -1 <= lo <= hi, got {:?}", self.brightness),
        );
        check(
            range(self.contrast, f64::MIN_POSITIVE, 10.0),
            "contrast",
            format!("need 0 < lo <= hi <= 10, got {:?}", self.contrast),
        );
        out
    }
}

/// A transform with its sampled parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Rotation { degrees: f64 },
    Skew { sx: f64, sy: f64 },
    GaussianBlur { sigma: f64 },
    MotionBlur { length: u32, angle: f64 },
    GaussianNoise { sigma: f64 },
    SaltPepper { probability: f64 },
    Jpeg { quality: u8 },
    Resolution { scale: f64 },
    Brightness { delta: f64 },
    Contrast { gamma: f64 },
}

impl Transform {
    pub fn kind(&self) -> TransformKind {
        match self {
            Transform::Rotation { .. } => TransformKind::Rotation,
            Transform::Skew { .. } => TransformKind::Skew,
            Transform::GaussianBlur { .. } => TransformKind::GaussianBlur,
            Transform::MotionBlur { .. } => TransformKind::MotionBlur,
            Transform::GaussianNoise { .. } => TransformKind::GaussianNoise,
            Transform::SaltPepper { .. } => TransformKind::SaltPepper,
            Transform::Jpeg { .. } => TransformKind::Jpeg,
            Transform::Resolution { .. } => TransformKind::Resolution,
            Transform::Brightness { .. } => TransformKind::Brightness,
            Transform::Contrast { .. } => TransformKind::Contrast,
        }
    }

    /// Draws parameters for `kind` from the configured ranges.
    fn sample(kind: TransformKind, cfg: &AugmentationConfig, rng: &mut Lcg) -> Result<Self, PrngError> {
        let uniform = |rng: &mut Lcg, r: [f64; 2]| rng.uniform_range(r[0], r[1]);
        Ok(match kind {
            TransformKind::Rotation => Transform::Rotation {
                degrees: rng.uniform_range(-cfg.rotation_max, cfg.rotation_max)?,
            },
            TransformKind::Skew => Transform::Skew {
                sx: rng.uniform_range(-cfg.skew_max, cfg.skew_max)?,
                sy: rng.uniform_range(-cfg.skew_max / 2.0, cfg.skew_max / 2.0)?,
            },
            TransformKind::GaussianBlur => Transform::GaussianBlur {
                sigma: uniform(rng, cfg.blur_sigma)?,
            },
            TransformKind::MotionBlur => {
                let [lo, hi] = cfg.motion_length;
                let length = rng.int_range(i64::from(lo), i64::from(hi))? as u32;
                Transform::MotionBlur {
                    length: odd_length(length),
                    angle: rng.uniform_range(0.0, std::f64::consts::TAU)?,
                }
            }
            TransformKind::GaussianNoise => Transform::GaussianNoise {
                sigma: uniform(rng, cfg.noise_sigma)?,
            },
            TransformKind::SaltPepper => Transform::SaltPepper {
                probability: uniform(rng, cfg.salt_pepper)?,
            },
            TransformKind::Jpeg => {
                let [lo, hi] = cfg.jpeg_quality;
                Transform::Jpeg {
                    quality: rng.int_range(i64::from(lo), i64::from(hi))? as u8,
                }
            }
            TransformKind::Resolution => Transform::Resolution {
                scale: uniform(rng, cfg.resolution_scale)?,
            },
            TransformKind::Brightness => Transform::Brightness {
                delta: uniform(rng, cfg.brightness)?,
            },
            TransformKind::Contrast => Transform::Contrast {
                gamma: uniform(rng, cfg.contrast)?,
            },
        })
    }

    /// Whether every parameter lies inside the configured range.
    pub fn within(&self, cfg: &AugmentationConfig) -> bool {
        let inside = |v: f64, r: [f64; 2]| v >= r[0] && v <= r[1];
        match *self {
            Transform::Rotation { degrees } => degrees.abs() <= cfg.rotation_max,
            Transform::Skew { sx, sy } => sx.abs() <= cfg.skew_max && sy.abs() <= cfg.skew_max / 2.0,
            Transform::GaussianBlur { sigma } => inside(sigma, cfg.blur_sigma),
            Transform::MotionBlur { length, angle } => {
                let [lo, hi] = cfg.motion_length;
                length >= lo && length <= odd_length(hi) && (0.0..std::f64::consts::TAU).contains(&angle)
            }
            Transform::GaussianNoise { sigma } => inside(sigma, cfg.noise_sigma),
            Transform::SaltPepper { probability } => inside(probability, cfg.salt_pepper),
            Transform::Jpeg { quality } => (cfg.jpeg_quality[0]..=cfg.jpeg_quality[1]).contains(&quality),
            Transform::Resolution { scale } => inside(scale, cfg.resolution_scale),
            Transform::Brightness { delta } => inside(delta, cfg.brightness),
            Transform::Contrast { gamma } => inside(gamma, cfg.contrast),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Transform::Rotation { degrees } => write!(f, "rotation({degrees:.3})"),
            Transform::Skew { sx, sy } => write!(f, "skew({sx:.4},{sy:.4})"),
            Transform::GaussianBlur { sigma } => write!(f, "gaussian_blur({sigma:.3})"),
            Transform::MotionBlur { length, angle } => write!(f, "motion_blur({length},{angle:.3})"),
            Transform::GaussianNoise { sigma } => write!(f, "gaussian_noise({sigma:.3})"),
            Transform::SaltPepper { probability } => write!(f, "salt_pepper({probability:.4})"),
            Transform::Jpeg { quality } => write!(f, "jpeg({quality})"),
            Transform::Resolution { scale } => write!(f, "resolution({scale:.3})"),
            Transform::Brightness { delta } => write!(f, "brightness({delta:.4})"),
            Transform::Contrast { gamma } => write!(f, "contrast({gamma:.4})"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AugmentationRecipe {
    /// Outcome of the augmentation gate.
    pub applied: bool,
    pub transforms: Vec<Transform>,
}

impl AugmentationRecipe {
    pub fn is_clean(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn summary(&self) -> String {
        if self.transforms.is_empty() {
            return "clean".into();
        }
        self.transforms.iter().map(ToString::to_string).collect::<Vec<_>>().join("+")
    }
}

/// Draws the gate, the transform count, the selection and each
/// transform's parameters, in that order.
pub fn plan_recipe(cfg: &AugmentationConfig, rng: &mut Lcg) -> Result<AugmentationRecipe, PrngError> {
    let applied = rng.bernoulli(cfg.probability)?;
    let mut pool = cfg.enabled_kinds();
    if !applied || pool.is_empty() {
        return Ok(AugmentationRecipe {
            applied,
            transforms: Vec::new(),
        });
    }
    let n = pool.len();
    let m = rng.int_range(1, cfg.max_transforms.clamp(1, n) as i64)? as usize;
    // Partial Fisher-Yates: the first m slots become the selection.
    for j in 0..m {
        let k = rng.int_range(j as i64, n as i64 - 1)? as usize;
        pool.swap(j, k);
    }
    let mut selected = pool[..m].to_vec();
    selected.sort();
    let transforms = selected
        .into_iter()
        .map(|kind| Transform::sample(kind, cfg, rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AugmentationRecipe { applied, transforms })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ApplyStats {
    pub jpeg_failures: usize,
}

/// Applies the recipe in order. Noise transforms draw per-pixel values from
/// `rng`; `fill` colors regions uncovered by geometric transforms.
pub fn apply(img: &RasterImage, recipe: &AugmentationRecipe, fill: Rgb, rng: &mut Lcg) -> (RasterImage, ApplyStats) {
    let mut stats = ApplyStats::default();
    let mut current = img.clone();
    for t in &recipe.transforms {
        current = match *t {
            Transform::Rotation { degrees } => rotate(&current, degrees, fill),
            Transform::Skew { sx, sy } => skew(&current, sx, sy, fill),
            Transform::GaussianBlur { sigma } => gaussian_blur(&current, sigma),
            Transform::MotionBlur { length, angle } => motion_blur(&current, length, angle),
            Transform::GaussianNoise { sigma } => gaussian_noise(&current, sigma, rng),
            Transform::SaltPepper { probability } => salt_pepper(&current, probability, rng),
            Transform::Jpeg { quality } => match jpeg_degrade(&current, quality) {
                Ok(out) => out,
                Err(e) => {
                    log::warn!("jpeg transform skipped: {e}");
                    stats.jpeg_failures += 1;
                    current
                }
            },
            Transform::Resolution { scale } => resolution_degrade(&current, scale),
            Transform::Brightness { delta } => brightness(&current, delta),
            Transform::Contrast { gamma } => contrast(&current, gamma),
        };
    }
    (current, stats)
}

/// Bilinear sample where taps outside the image read `fill`.
#[inline]
fn sample_with_fill(img: &RasterImage, x: f64, y: f64, fill: Rgb) -> Rgb {
    let w = i64::from(img.width());
    let h = i64::from(img.height());
    if x <= -1.0 || y <= -1.0 || x >= w as f64 || y >= h as f64 {
        return fill;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let tap = |xi: i64, yi: i64| -> [u8; 3] {
        if xi < 0 || yi < 0 || xi >= w || yi >= h {
            fill.0
        } else {
            img.pixel(xi as u32, yi as u32).0
        }
    };
    let p00 = tap(x0, y0);
    let p10 = tap(x0 + 1, y0);
    let p01 = tap(x0, y0 + 1);
    let p11 = tap(x0 + 1, y0 + 1);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
        let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    quantize(out)
}

/// Inverse-maps every destination pixel through the 2x2 matrix `inv`
/// about the image center.
fn warp_about_center(img: &RasterImage, inv: [[f64; 2]; 2], fill: Rgb) -> RasterImage {
    let (w, h) = (img.width(), img.height());
    let cx = (f64::from(w) - 1.0) / 2.0;
    let cy = (f64::from(h) - 1.0) / 2.0;
    let mut out = RasterImage::filled(w, h, fill);
    for y in 0..h {
        let dy = f64::from(y) - cy;
        for x in 0..w {
            let dx = f64::from(x) - cx;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            out.set_pixel(x, y, sample_with_fill(img, sx, sy, fill));
        }
    }
    out
}

/// Rotation about the image center by `degrees`, bilinear, exposed regions
/// filled with `fill`.
pub fn rotate(img: &RasterImage, degrees: f64, fill: Rgb) -> RasterImage {
    if degrees == 0.0 {
        return img.clone();
    }
    let (s, c) = degrees.to_radians().sin_cos();
    // Inverse of [[c, -s], [s, c]].
    warp_about_center(img, [[c, s], [-s, c]], fill)
}

/// Center-anchored shear `[[1, sx], [sy, 1]]`.
pub fn skew(img: &RasterImage, sx: f64, sy: f64, fill: Rgb) -> RasterImage {
    if sx == 0.0 && sy == 0.0 {
        return img.clone();
    }
    let det = 1.0 - sx * sy;
    warp_about_center(img, [[1.0 / det, -sx / det], [-sy / det, 1.0 / det]], fill)
}

/// 1-D Gaussian taps for radius `ceil(3 sigma)`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(0.0) as i64;
    let two_s2 = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / two_s2).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable convolution with clamp-to-edge borders; `horizontal` and
/// `vertical` are odd-length tap lists centered on their middle element.
fn convolve_separable(img: &RasterImage, horizontal: &[f64], vertical: &[f64]) -> RasterImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let src = img.as_bytes();
    let hr = (horizontal.len() / 2) as i64;
    let vr = (vertical.len() / 2) as i64;
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (i, &k) in horizontal.iter().enumerate() {
                let sx = (x + i as i64 - hr).clamp(0, w - 1);
                let o = ((y * w + sx) * 3) as usize;
                for c in 0..3 {
                    acc[c] += k * f64::from(src[o + c]);
                }
            }
            let o = ((y * w + x) * 3) as usize;
            tmp[o..o + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (i, &k) in vertical.iter().enumerate() {
                let sy = (y + i as i64 - vr).clamp(0, h - 1);
                let o = ((sy * w + x) * 3) as usize;
                for c in 0..3 {
                    acc[c] += k * tmp[o + c];
                }
            }
            let o = ((y * w + x) * 3) as usize;
            for c in 0..3 {
                out[o + c] = clamp_u8(acc[c]);
            }
        }
    }
    RasterImage::from_raw(img.width(), img.height(), out).expect("same dimensions")
}

pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> RasterImage {
    if !(sigma > 0.0) {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    convolve_separable(img, &k, &k)
}

/// Rounds an even length up to the next odd value.
pub fn odd_length(k: u32) -> u32 {
    if k % 2 == 0 {
        k + 1
    } else {
        k
    }
}

/// Taps of a `k`-long line through the origin at angle `angle` (radians),
/// as `((dx, dy), weight)`. Taps that round onto the same pixel merge.
pub fn motion_kernel(k: u32, angle: f64) -> Vec<((i64, i64), f64)> {
    let k = odd_length(k.max(1));
    let half = i64::from(k / 2);
    let (s, c) = angle.sin_cos();
    let mut taps: BTreeMap<(i64, i64), f64> = BTreeMap::new();
    for t in -half..=half {
        let dx = (t as f64 * c).round() as i64;
        let dy = (t as f64 * s).round() as i64;
        *taps.entry((dx, dy)).or_default() += 1.0 / f64::from(k);
    }
    let total: f64 = taps.values().sum();
    taps.into_iter().map(|(d, w)| (d, w / total)).collect()
}

pub fn motion_blur(img: &RasterImage, k: u32, angle: f64) -> RasterImage {
    let taps = motion_kernel(k, angle);
    if taps.len() == 1 {
        return img.clone();
    }
    let (w, h) = (img.width() as i64, img.height() as i64);
    let src = img.as_bytes();
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for &((dx, dy), wt) in &taps {
                let sx = (x + dx).clamp(0, w - 1);
                let sy = (y + dy).clamp(0, h - 1);
                let o = ((sy * w + sx) * 3) as usize;
                for c in 0..3 {
                    acc[c] += wt * f64::from(src[o + c]);
                }
            }
            let o = ((y * w + x) * 3) as usize;
            for c in 0..3 {
                out[o + c] = clamp_u8(acc[c]);
            }
        }
    }
    RasterImage::from_raw(img.width(), img.height(), out).expect("same dimensions")
}

/// Adds one Gaussian deviate per pixel, shared by the three channels.
pub fn gaussian_noise(img: &RasterImage, sigma: f64, rng: &mut Lcg) -> RasterImage {
    if sigma == 0.0 {
        return img.clone();
    }
    let mut out = img.clone();
    for px in out.as_bytes_mut().chunks_exact_mut(3) {
        let noise = rng.gaussian() * sigma;
        for v in px.iter_mut() {
            *v = clamp_u8(f64::from(*v) + noise);
        }
    }
    out
}

/// Per pixel: black with probability `p/2`, white with probability `p/2`.
pub fn salt_pepper(img: &RasterImage, p: f64, rng: &mut Lcg) -> RasterImage {
    if p <= 0.0 {
        return img.clone();
    }
    let mut out = img.clone();
    for px in out.as_bytes_mut().chunks_exact_mut(3) {
        let u = rng.next_f64();
        if u < p / 2.0 {
            px.fill(0);
        } else if u < p {
            px.fill(255);
        }
    }
    out
}

pub fn jpeg_encode(img: &RasterImage, quality: u8) -> Result<Vec<u8>, image::ImageError> {
    let mut buf = Vec::new();
    let mut encoder = JpegEncoder::new_with_quality(&mut buf, quality.clamp(1, 100));
    encoder.encode(img.as_bytes(), img.width(), img.height(), ExtendedColorType::Rgb8)?;
    Ok(buf)
}

/// JPEG round trip at `quality`.
pub fn jpeg_degrade(img: &RasterImage, quality: u8) -> Result<RasterImage, image::ImageError> {
    let bytes = jpeg_encode(img, quality)?;
    let decoded = image::load(Cursor::new(bytes), ImageFormat::Jpeg)?.to_rgb8();
    let (w, h) = decoded.dimensions();
    Ok(RasterImage::from_raw(w, h, decoded.into_raw()).expect("decoder returns consistent buffers"))
}

/// Bilinear downscale by `scale`, then back up to the original size.
pub fn resolution_degrade(img: &RasterImage, scale: f64) -> RasterImage {
    if scale >= 1.0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let dw = ((f64::from(w) * scale).floor() as u32).max(1);
    let dh = ((f64::from(h) * scale).floor() as u32).max(1);
    img.resize_bilinear(dw, dh).resize_bilinear(w, h)
}

fn map_channels(img: &RasterImage, lut: &[u8; 256]) -> RasterImage {
    let mut out = img.clone();
    for v in out.as_bytes_mut() {
        *v = lut[*v as usize];
    }
    out
}

/// `I * (1 + delta)`, clipped.
pub fn brightness(img: &RasterImage, delta: f64) -> RasterImage {
    let lut: [u8; 256] = std::array::from_fn(|v| clamp_u8(v as f64 * (1.0 + delta)));
    map_channels(img, &lut)
}

/// `255 * (I / 255)^gamma`, rounded.
pub fn contrast(img: &RasterImage, gamma: f64) -> RasterImage {
    let lut: [u8; 256] = std::array::from_fn(|v| clamp_u8(255.0 * (v as f64 / 255.0).powf(gamma)));
    map_channels(img, &lut)
}
