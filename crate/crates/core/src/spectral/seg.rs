use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::fft::{fft2, ifft2, ComplexGrid};
use crate::spectral::{replicate_channels, rgb_to_grey, GrayscaleCoefficients, Image, ImageKind};

/// Bins whose magnitude is below this fraction of the channel peak carry no
/// usable phase; their phase is pinned to zero.
const NEGLIGIBLE_MAGNITUDE: f64 = 1e-9;

/// Per-channel phase and amplitude spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub height: usize,
    pub width: usize,
    /// Row-major grids in `(-pi, pi]`, one per channel.
    pub phase: Vec<Vec<f64>>,
    /// Row-major non-negative grids, one per channel.
    pub amplitude: Vec<Vec<f64>>,
}

impl SpectralDecomposition {
    pub fn channels(&self) -> usize {
        self.phase.len()
    }

    /// `amplitude * exp(i * phase)` for one channel.
    pub fn recombine(&self, channel: usize) -> ComplexGrid {
        let data = self.amplitude[channel]
            .iter()
            .zip(&self.phase[channel])
            .map(|(&a, &p)| Complex64::from_polar(a, p))
            .collect();
        ComplexGrid {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

fn wrap_phase(p: f64) -> f64 {
    if p <= -PI {
        p + 2.0 * PI
    } else {
        p
    }
}

/// Phase and amplitude of the 2D DFT of every channel.
pub fn decompose(img: &Image) -> Result<SpectralDecomposition> {
    let (h, w) = (img.height(), img.width());
    let mut phase = Vec::with_capacity(img.channels());
    let mut amplitude = Vec::with_capacity(img.channels());
    for c in 0..img.channels() {
        let spec = fft2(h, w, &img.channel(c))?;
        let amp: Vec<f64> = spec.data.iter().map(|z| z.norm()).collect();
        let peak = amp.iter().copied().fold(0.0, f64::max);
        let ph = spec
            .data
            .iter()
            .zip(&amp)
            .map(|(z, &a)| {
                if a <= NEGLIGIBLE_MAGNITUDE * peak {
                    0.0
                } else {
                    wrap_phase(z.im.atan2(z.re))
                }
            })
            .collect();
        phase.push(ph);
        amplitude.push(amp);
    }
    Ok(SpectralDecomposition {
        height: h,
        width: w,
        phase,
        amplitude,
    })
}

/// Real spatial signal rebuilt from the phase spectrum alone.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReconstruction {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<Vec<f64>>,
    /// Largest imaginary component discarded when taking the real part.
    pub max_imag_residue: f64,
}

/// Inverse transform of the unit-magnitude spectrum `exp(i * phase)`.
pub fn phase_reconstruct(dec: &SpectralDecomposition) -> PhaseReconstruction {
    let mut channels = Vec::with_capacity(dec.channels());
    let mut residue = 0.0f64;
    for phase in &dec.phase {
        let unit = ComplexGrid {
            height: dec.height,
            width: dec.width,
            data: phase.iter().map(|&p| Complex64::from_polar(1.0, p)).collect(),
        };
        let spatial = ifft2(&unit);
        residue = residue.max(spatial.max_abs_imag());
        channels.push(spatial.real_part());
    }
    if residue >= 1e-4 {
        log::warn!("phase-only reconstruction left imaginary residue {residue:e}");
    }
    PhaseReconstruction {
        height: dec.height,
        width: dec.width,
        channels,
        max_imag_residue: residue,
    }
}

/// Which image the phase spectrum is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumSource {
    /// Each RGB channel separately; reconstructions are added channelwise.
    #[default]
    Rgb,
    /// The grey image; its reconstruction is replicated to three channels.
    Grey,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegConfig {
    pub coeffs: GrayscaleCoefficients,
    /// Weight of the normalised phase reconstruction.
    pub weight: f64,
    pub source: SpectrumSource,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            coeffs: GrayscaleCoefficients::default(),
            weight: 1.0,
            source: SpectrumSource::Rgb,
        }
    }
}

impl SegConfig {
    pub fn with_weight(weight: f64) -> Self {
        Self {
            weight,
            ..Self::default()
        }
    }
}

/// Min-max rescale to `[0, 255]`. Returns `None` for a flat signal.
fn normalize_to_pixel_range(values: &[f64]) -> Option<Vec<f64>> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 1e-12 * hi.abs().max(1.0)) {
        return None;
    }
    Some(values.iter().map(|v| (v - lo) / span * 255.0).collect())
}

/// Spectrally enhanced grey image: the replicated grey image plus the
/// weighted, min-max normalised phase-only reconstruction, clamped to
/// `[0, 255]`.
pub fn compose_seg(vis: &Image, cfg: &SegConfig) -> Result<Image> {
    if vis.channels() != 3 {
        return Err(Error::Image(format!(
            "SEG composition needs a 3-channel visible image, got {} channels",
            vis.channels()
        )));
    }
    if !(cfg.weight >= 0.0 && cfg.weight.is_finite()) {
        return Err(Error::Config(format!("SEG weight must be >= 0, got {}", cfg.weight)));
    }
    cfg.coeffs.validate()?;
    let grey = rgb_to_grey(vis, &cfg.coeffs)?;
    let grey3 = replicate_channels(&grey)?;
    if cfg.weight == 0.0 {
        return Ok(grey3.with_kind(ImageKind::Seg));
    }

    let recon = match cfg.source {
        SpectrumSource::Rgb => phase_reconstruct(&decompose(vis)?).channels,
        SpectrumSource::Grey => {
            let single = phase_reconstruct(&decompose(&grey)?).channels;
            vec![single[0].clone(), single[0].clone(), single[0].clone()]
        }
    };
    let (h, w) = (vis.height(), vis.width());
    let mut planes = Vec::with_capacity(3);
    for (c, r) in recon.iter().enumerate() {
        let base = grey3.channel(c);
        let plane = match normalize_to_pixel_range(r) {
            Some(norm) => base
                .iter()
                .zip(&norm)
                .map(|(g, n)| (g + cfg.weight * n).clamp(0.0, 255.0))
                .collect(),
            None => {
                log::warn!("flat phase reconstruction in channel {c}; treating it as zero");
                base
            }
        };
        planes.push(plane);
    }
    Image::from_channels(h, w, &planes, ImageKind::Seg)
}
