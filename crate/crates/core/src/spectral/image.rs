use std::path::Path;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What produced an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImageKind {
    Visible,
    Infrared,
    Seg,
    Grey,
}

/// `height x width x channels` grid of intensities in `[0, 255]`, stored
/// interleaved (HWC) as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
    kind: ImageKind,
}

impl Image {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f64>,
        kind: ImageKind,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Image(format!("empty image {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Image(format!("{channels} channels; expected 1 or 3")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Image(format!(
                "{} pixels for a {height}x{width}x{channels} image",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::Image(format!("pixel value {bad} outside [0, 255]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
            kind,
        })
    }

    /// Builds an image, clamping every value into `[0, 255]`.
    pub fn from_clamped(
        height: usize,
        width: usize,
        channels: usize,
        mut pixels: Vec<f64>,
        kind: ImageKind,
    ) -> Result<Self> {
        pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 255.0));
        Self::new(height, width, channels, pixels, kind)
    }

    pub fn filled(height: usize, width: usize, color: &[f64], kind: ImageKind) -> Result<Self> {
        let pixels = color.iter().copied().cycle().take(height * width * color.len()).collect();
        Self::new(height, width, color.len(), pixels, kind)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kind(&self) -> ImageKind {
        self.kind
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// One channel as a row-major `H x W` grid.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.pixels.iter().skip(c).step_by(self.channels).copied().collect()
    }

    /// Assembles an image from row-major per-channel grids.
    pub fn from_channels(
        height: usize,
        width: usize,
        planes: &[Vec<f64>],
        kind: ImageKind,
    ) -> Result<Self> {
        let channels = planes.len();
        let mut pixels = vec![0.0; height * width * channels];
        for (c, plane) in planes.iter().enumerate() {
            if plane.len() != height * width {
                return Err(Error::Image("channel plane has wrong size".into()));
            }
            for (i, &v) in plane.iter().enumerate() {
                pixels[i * channels + c] = v;
            }
        }
        Self::new(height, width, channels, pixels, kind)
    }

    pub fn with_kind(mut self, kind: ImageKind) -> Self {
        self.kind = kind;
        self
    }

    /// Mirror along the vertical axis.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        let c = self.channels;
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + (self.width - 1 - x)) * c;
                let dst = (y * self.width + x) * c;
                out.pixels[dst..dst + c].copy_from_slice(&self.pixels[src..src + c]);
            }
        }
        out
    }

    /// Three-channel view: grey images are replicated, colour images cloned.
    pub fn to_three_channels(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        Self {
            pixels,
            channels: 3,
            ..self.clone()
        }
    }

    /// 8-bit quantisation with round-half-up.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize(v)).collect()
    }

    pub fn load_png(path: impl AsRef<Path>, kind: ImageKind) -> Result<Self> {
        let img = image::open(path.as_ref())?;
        let (pixels, channels) = match img.color().channel_count() {
            1 | 2 => (img.to_luma8().into_raw(), 1),
            _ => (img.to_rgb8().into_raw(), 3),
        };
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::new(h, w, channels, pixels.into_iter().map(f64::from).collect(), kind)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let raw = self.to_u8();
        match self.channels {
            1 => GrayImage::from_raw(w, h, raw)
                .ok_or_else(|| Error::Image("buffer size".into()))?
                .save(path)?,
            _ => RgbImage::from_raw(w, h, raw)
                .ok_or_else(|| Error::Image("buffer size".into()))?
                .save(path)?,
        }
        Ok(())
    }
}

pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Channel weights of the luminance transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrayscaleCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for GrayscaleCoefficients {
    fn default() -> Self {
        Self {
            alpha: 0.299,
            beta: 0.587,
            gamma: 0.114,
        }
    }
}

impl GrayscaleCoefficients {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let c = Self { alpha, beta, gamma };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.alpha + self.beta + self.gamma;
        if (s - 1.0).abs() > 1e-9 || [self.alpha, self.beta, self.gamma].iter().any(|v| *v < 0.0) {
            return Err(Error::Config(format!(
                "grayscale coefficients must be non-negative and sum to 1, got {s}"
            )));
        }
        Ok(())
    }

    pub fn apply(&self, r: f64, g: f64, b: f64) -> f64 {
        self.alpha * r + self.beta * g + self.gamma * b
    }
}

/// Weighted channel sum of a three-channel image, kept unrounded.
pub fn rgb_to_grey(img: &Image, coeffs: &GrayscaleCoefficients) -> Result<Image> {
    if img.channels != 3 {
        return Err(Error::Image(format!(
            "grey conversion needs 3 channels, got {}",
            img.channels
        )));
    }
    let pixels = img
        .pixels
        .chunks_exact(3)
        .map(|p| coeffs.apply(p[0], p[1], p[2]).clamp(0.0, 255.0))
        .collect();
    Image::new(img.height, img.width, 1, pixels, ImageKind::Grey)
}

/// Copies a single grey channel into three identical channels.
pub fn replicate_channels(img: &Image) -> Result<Image> {
    if img.channels != 1 {
        return Err(Error::Image(format!(
            "channel replication needs 1 channel, got {}",
            img.channels
        )));
    }
    Ok(img.to_three_channels().with_kind(ImageKind::Grey))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixel(rgb: [f64; 3]) -> Image {
        Image::new(1, 1, 3, rgb.to_vec(), ImageKind::Visible).unwrap()
    }

    fn grey_of(rgb: [f64; 3]) -> f64 {
        rgb_to_grey(&pixel(rgb), &GrayscaleCoefficients::default()).unwrap().pixels()[0]
    }

    #[test]
    fn grey_of_known_pixels() {
        assert!((grey_of([100.0, 100.0, 100.0]) - 100.0).abs() < 1e-12);
        assert!((grey_of([255.0, 0.0, 0.0]) - 76.245).abs() < 1e-9);
        assert!((grey_of([0.0, 255.0, 0.0]) - 149.685).abs() < 1e-9);
    }

    #[test]
    fn grey_rejects_single_channel() {
        let g = Image::filled(2, 2, &[3.0], ImageKind::Grey).unwrap();
        assert!(rgb_to_grey(&g, &GrayscaleCoefficients::default()).is_err());
        let v = Image::filled(2, 2, &[1.0, 2.0, 3.0], ImageKind::Visible).unwrap();
        assert!(replicate_channels(&v).is_err());
    }

    #[test]
    fn replicate_channels_are_identical() {
        let g = Image::new(2, 3, 1, vec![0.0, 1.5, 7.25, 100.0, 255.0, 42.0], ImageKind::Grey).unwrap();
        let g3 = replicate_channels(&g).unwrap();
        assert_eq!(g3.channels(), 3);
        for c in 0..3 {
            assert_eq!(g3.channel(c), g.channel(0));
        }
        let z = replicate_channels(&Image::filled(4, 4, &[0.0], ImageKind::Grey).unwrap()).unwrap();
        assert!(z.pixels().iter().all(|&v| v == 0.0));
        assert_eq!(z.channels(), 3);
    }

    #[test]
    fn coefficients_must_sum_to_one() {
        assert!(GrayscaleCoefficients::new(0.3, 0.3, 0.3).is_err());
        assert!(GrayscaleCoefficients::default().validate().is_ok());
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(Image::new(1, 1, 1, vec![256.0], ImageKind::Grey).is_err());
        assert!(Image::new(1, 1, 1, vec![-0.1], ImageKind::Grey).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0], ImageKind::Grey).is_err());
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.5), 1);
        assert_eq!(quantize(0.49), 0);
        assert_eq!(quantize(254.5), 255);
        assert_eq!(quantize(76.245), 76);
    }
}
