//! Convolution kernels (im2col + row-major matmul).

use crate::numerics::real::{axpy, dot};
use crate::numerics::{Real, Tensor};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Fills `cols` ([C*kh*kw, out_h*out_w]) from one sample's `[C,H,W]` slice.
fn im2col<T: Real>(g: &ConvGeometry, sample: &[T], cols: &mut [T]) {
    let positions = g.positions();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &sample[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into one sample's `[C,H,W]` gradient slice.
fn col2im<T: Real>(g: &ConvGeometry, cols: &[T], sample: &mut [T]) {
    let positions = g.positions();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &mut sample[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(g: &ConvGeometry, input: &Tensor<T>, weight: &Tensor<T>) -> Tensor<T> {
    let patch = g.patch_len();
    let positions = g.positions();
    let in_stride = g.in_channels * g.height * g.width;
    let out_stride = g.out_channels * positions;
    let mut out = Tensor::zeros(&[g.batch, g.out_channels, g.out_h, g.out_w]);
    let mut cols = vec![T::zero(); patch * positions];
    let w = weight.data();
    for b in 0..g.batch {
        im2col(g, &input.data()[b * in_stride..(b + 1) * in_stride], &mut cols);
        let dst = &mut out.data_mut()[b * out_stride..(b + 1) * out_stride];
        for k in 0..g.out_channels {
            let out_row = &mut dst[k * positions..(k + 1) * positions];
            let w_row = &w[k * patch..(k + 1) * patch];
            for (r, &wv) in w_row.iter().enumerate() {
                if wv != T::zero() {
                    axpy(wv, &cols[r * positions..(r + 1) * positions], out_row);
                }
            }
        }
    }
    out
}

/// Returns `(d_input, d_weight)` for upstream gradient `d_out`.
pub(crate) fn backward<T: Real>(
    g: &ConvGeometry,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    d_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let patch = g.patch_len();
    let positions = g.positions();
    let in_stride = g.in_channels * g.height * g.width;
    let out_stride = g.out_channels * positions;
    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weight = Tensor::zeros(weight.shape());
    let mut cols = vec![T::zero(); patch * positions];
    let mut d_cols = vec![T::zero(); patch * positions];
    let w = weight.data();
    for b in 0..g.batch {
        im2col(g, &input.data()[b * in_stride..(b + 1) * in_stride], &mut cols);
        let dy = &d_out.data()[b * out_stride..(b + 1) * out_stride];
        d_cols.iter_mut().for_each(|v| *v = T::zero());
        for k in 0..g.out_channels {
            let dy_row = &dy[k * positions..(k + 1) * positions];
            let dw_row = &mut d_weight.data_mut()[k * patch..(k + 1) * patch];
            for r in 0..patch {
                dw_row[r] = dw_row[r] + dot(dy_row, &cols[r * positions..(r + 1) * positions]);
            }
            let w_row = &w[k * patch..(k + 1) * patch];
            for (r, &wv) in w_row.iter().enumerate() {
                if wv != T::zero() {
                    axpy(wv, dy_row, &mut d_cols[r * positions..(r + 1) * positions]);
                }
            }
        }
        col2im(g, &d_cols, &mut d_input.data_mut()[b * in_stride..(b + 1) * in_stride]);
    }
    (d_input, d_weight)
}
