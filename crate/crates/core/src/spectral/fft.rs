//! Unnormalised forward / normalised inverse 2D DFT over row-major grids.
//!
//! Any `H x W` is accepted; `rustfft` picks mixed-radix or Bluestein plans
//! for non-power-of-two lengths.

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};

/// Row-major `height x width` complex grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn at(&self, u: usize, v: usize) -> Complex64 {
        self.data[u * self.width + v]
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.re).collect()
    }

    pub fn max_abs_imag(&self) -> f64 {
        self.data.iter().fold(0.0, |m, c| m.max(c.im.abs()))
    }
}

fn transform(height: usize, width: usize, data: &mut [Complex64], direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(width, direction);
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft(height, direction);
    let mut column = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
}

/// Forward 2D DFT of a real `height x width` grid, without normalisation.
pub fn fft2(height: usize, width: usize, grid: &[f64]) -> Result<ComplexGrid> {
    if height == 0 || width == 0 || grid.len() != height * width {
        return Err(Error::Image(format!(
            "fft2 over {height}x{width} with {} samples",
            grid.len()
        )));
    }
    let mut data: Vec<Complex64> = grid.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(height, width, &mut data, FftDirection::Forward);
    Ok(ComplexGrid { height, width, data })
}

/// Inverse 2D DFT scaled by `1 / (height * width)`.
pub fn ifft2(spectrum: &ComplexGrid) -> ComplexGrid {
    let mut data = spectrum.data.clone();
    transform(spectrum.height, spectrum.width, &mut data, FftDirection::Inverse);
    let scale = 1.0 / (spectrum.height * spectrum.width) as f64;
    data.iter_mut().for_each(|c| *c *= scale);
    ComplexGrid {
        height: spectrum.height,
        width: spectrum.width,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct O(H^2 W^2) evaluation of the DFT sum.
    fn naive_dft(h: usize, w: usize, x: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex64::default();
                for y in 0..h {
                    for xx in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                        acc += x[y * w + xx] * Complex64::from_polar(1.0, ang);
                    }
                }
                out[u * w + v] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_direct_summation_on_odd_sizes() {
        let (h, w) = (5, 7);
        let x: Vec<f64> = (0..h * w).map(|i| ((i * 37) % 11) as f64 - 3.0).collect();
        let fast = fft2(h, w, &x).unwrap();
        for (a, b) in fast.data.iter().zip(naive_dft(h, w, &x)) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn constant_grid_has_only_dc() {
        let (h, w, c) = (6, 4, 2.5);
        let s = fft2(h, w, &vec![c; h * w]).unwrap();
        assert!((s.at(0, 0).re - c * (h * w) as f64).abs() < 1e-4);
        for (i, z) in s.data.iter().enumerate().skip(1) {
            assert!(z.norm() < 1e-4, "bin {i}: {z}");
        }
    }

    #[test]
    fn inverse_round_trips() {
        let (h, w) = (9, 4);
        let x: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.7).sin() * 100.0).collect();
        let back = ifft2(&fft2(h, w, &x).unwrap());
        for (a, b) in back.real_part().iter().zip(&x) {
            assert!((a - b).abs() < 1e-4);
        }
        assert!(back.max_abs_imag() < 1e-4);
    }

    #[test]
    fn rejects_empty_grid() {
        assert!(fft2(0, 3, &[]).is_err());
        assert!(fft2(2, 2, &[1.0; 3]).is_err());
    }
}
