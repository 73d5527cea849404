//! Grayscale transformation, Fourier phase/amplitude decomposition and
//! spectrally enhanced grey (SEG) image composition.

mod fft;
mod image;
mod seg;

pub use self::fft::{fft2, ifft2, ComplexGrid};
pub use self::image::{quantize, replicate_channels, rgb_to_grey, GrayscaleCoefficients, Image, ImageKind};
pub use self::seg::{
    compose_seg, decompose, phase_reconstruct, PhaseReconstruction, SegConfig, SpectralDecomposition,
    SpectrumSource,
};
