//! 8-bit RGB raster buffers, PNG encoding and bilinear resampling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("PNG encoding failed: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error("image decoding failed: {0}")]
    Decode(String),
    #[error("pixel buffer of {len} bytes does not match {width}x{height} RGB")]
    BadBuffer { width: u32, height: u32, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLACK: Rgb = Rgb([0, 0, 0]);
    pub const WHITE: Rgb = Rgb([255, 255, 255]);

    pub fn hex(&self) -> String {
        format!("#{:02X}{:02X}{:02X}", self.0[0], self.0[1], self.0[2])
    }
}

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

impl FromStr for Rgb {
    type Err = String;

    /// `#RRGGBB` (the `#` is optional).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let h = s.strip_prefix('#').unwrap_or(s);
        if h.len() != 6 || !h.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(format!("invalid color {s:?}, expected #RRGGBB"));
        }
        let byte = |i: usize| u8::from_str_radix(&h[i..i + 2], 16).unwrap();
        Ok(Rgb([byte(0), byte(2), byte(4)]))
    }
}

impl Serialize for Rgb {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.hex())
    }
}

impl<'de> Deserialize<'de> for Rgb {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Row-major RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RasterImage({}x{})", self.width, self.height)
    }
}

impl RasterImage {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&color.0);
        }
        RasterImage { width, height, pixels }
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(RasterError::BadBuffer {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(RasterImage { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let o = self.offset(x, y);
        Rgb([self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]])
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, c: Rgb) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&c.0);
    }

    /// Channel-wise mean, rounded.
    pub fn mean_color(&self) -> Rgb {
        let n = (self.width as u64 * self.height as u64).max(1);
        let mut sums = [0u64; 3];
        for px in self.pixels.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += u64::from(px[c]);
            }
        }
        Rgb(sums.map(|s| ((s + n / 2) / n) as u8))
    }

    /// Encodes with fixed settings and no ancillary chunks, so identical
    /// pixels always give identical bytes.
    pub fn to_png(&self) -> Result<Vec<u8>, RasterError> {
        let mut out = Vec::with_capacity(self.pixels.len() / 4 + 64);
        {
            let mut encoder = png::Encoder::new(&mut out, self.width, self.height);
            encoder.set_color(png::ColorType::Rgb);
            encoder.set_depth(png::BitDepth::Eight);
            encoder.set_compression(png::Compression::Fast);
            encoder.set_filter(png::Filter::Adaptive);
            let mut writer = encoder.write_header()?;
            writer.write_image_data(&self.pixels)?;
            writer.finish()?;
        }
        Ok(out)
    }

    /// Decodes PNG or JPEG bytes to RGB.
    pub fn decode(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory(bytes).map_err(|e| RasterError::Decode(e.to_string()))?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        RasterImage::from_raw(w, h, rgb.into_raw())
    }

    /// Bilinear sample at continuous coordinates (pixel centers at
    /// integer positions), clamping at the border.
    #[inline]
    pub fn sample_clamped(&self, x: f64, y: f64) -> [f64; 3] {
        let max_x = f64::from(self.width - 1);
        let max_y = f64::from(self.height - 1);
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as u32;
        let y0 = y0 as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let p00 = self.pixel(x0, y0).0;
        let p10 = self.pixel(x1, y0).0;
        let p01 = self.pixel(x0, y1).0;
        let p11 = self.pixel(x1, y1).0;
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
            let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
            out[c] = top * (1.0 - fy) + bottom * fy;
        }
        out
    }

    /// Bilinear resample to the given size using pixel-center alignment.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> RasterImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = f64::from(self.width) / f64::from(width);
        let sy = f64::from(self.height) / f64::from(height);
        let mut out = RasterImage::filled(width, height, Rgb::BLACK);
        for y in 0..height {
            let src_y = (f64::from(y) + 0.5) * sy - 0.5;
            for x in 0..width {
                let src_x = (f64::from(x) + 0.5) * sx - 0.5;
                out.set_pixel(x, y, quantize(self.sample_clamped(src_x, src_y)));
            }
        }
        out
    }
}

#[inline]
pub fn quantize(v: [f64; 3]) -> Rgb {
    Rgb(v.map(clamp_u8))
}

#[inline]
pub fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn has_png_signature(bytes: &[u8]) -> bool {
    bytes.len() >= 8 && bytes[..8] == PNG_SIGNATURE
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_parsing() {
        assert_eq!("#FF8000".parse::<Rgb>().unwrap(), Rgb([255, 128, 0]));
        assert_eq!("00ff00".parse::<Rgb>().unwrap(), Rgb([0, 255, 0]));
        assert!("#FFF".parse::<Rgb>().is_err());
        assert!("#GGGGGG".parse::<Rgb>().is_err());
        assert_eq!(Rgb([1, 2, 255]).to_string(), "#0102FF");
    }

    #[test]
    fn png_is_deterministic_and_decodes() {
        let mut img = RasterImage::filled(16, 8, Rgb([10, 20, 30]));
        img.set_pixel(3, 4, Rgb([200, 100, 50]));
        let a = img.to_png().unwrap();
        let b = img.to_png().unwrap();
        assert_eq!(a, b);
        assert!(has_png_signature(&a));
        assert_eq!(RasterImage::decode(&a).unwrap(), img);
    }

    #[test]
    fn from_raw_checks_length() {
        assert!(RasterImage::from_raw(2, 2, vec![0; 11]).is_err());
        assert!(RasterImage::from_raw(2, 2, vec![0; 12]).is_ok());
    }

    #[test]
    fn resize_constant_is_constant() {
        let img = RasterImage::filled(37, 11, Rgb([90, 91, 92]));
        let r = img.resize_bilinear(100, 50);
        assert!(r.as_bytes().chunks(3).all(|p| p == [90, 91, 92]));
        assert_eq!(img.resize_bilinear(37, 11), img);
    }

    #[test]
    fn mean_color_rounds() {
        let mut img = RasterImage::filled(2, 1, Rgb([0, 0, 0]));
        img.set_pixel(1, 0, Rgb([255, 1, 3]));
        assert_eq!(img.mean_color(), Rgb([128, 1, 2]));
    }
}
