//! Forward and backward numeric kernels used by the autodiff tape.
//!
//! Convolutions are stride-1 with symmetric zero padding and lower to an
//! im2col buffer multiplied with `matrixmultiply::dgemm`.

use crate::tensor::Tensor;

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe in-bounds row/column-major views of the
    // slices; callers size every buffer as m*k, k*n and m*n respectively.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(input: &[f64], channels: usize, h: usize, w: usize, k: usize, pad: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; channels * k * k * hw];
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst_row = &mut dst[y * w..(y + 1) * w];
                    let shift = kx as isize - pad as isize;
                    let x_lo = (-shift).max(0) as usize;
                    let x_hi = (w as isize - shift).min(w as isize).max(0) as usize;
                    if x_lo < x_hi {
                        let s_lo = (x_lo as isize + shift) as usize;
                        dst_row[x_lo..x_hi].copy_from_slice(&src_row[s_lo..s_lo + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], channels: usize, h: usize, w: usize, k: usize, pad: usize) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; channels * hw];
    for c in 0..channels {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let shift = kx as isize - pad as isize;
                    let x_lo = (-shift).max(0) as usize;
                    let x_hi = (w as isize - shift).min(w as isize).max(0) as usize;
                    let dst_row = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for x in x_lo..x_hi {
                        dst_row[(x as isize + shift) as usize] += src[y * w + x];
                    }
                }
            }
        }
    }
    out
}

/// `[Ci,H,W] * [Co,Ci,k,k] (+ bias[Co]) -> [Co,H,W]`.
pub(crate) fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, pad: usize) -> Tensor {
    let (ci, h, w) = input.chw();
    let (co, k) = (weight.shape()[0], weight.shape()[2]);
    let hw = h * w;
    let kdim = ci * k * k;
    let mut out = vec![0.0; co * hw];
    if let Some(b) = bias {
        for (o, &bv) in b.data().iter().enumerate() {
            out[o * hw..(o + 1) * hw].fill(bv);
        }
    }
    if k == 1 && pad == 0 {
        gemm(co, kdim, hw, weight.data(), (kdim as isize, 1), input.data(), (hw as isize, 1), 1.0, &mut out);
    } else {
        let cols = im2col(input.data(), ci, h, w, k, pad);
        gemm(co, kdim, hw, weight.data(), (kdim as isize, 1), &cols, (hw as isize, 1), 1.0, &mut out);
    }
    Tensor::from_vec(&[co, h, w], out).expect("conv output shape")
}

/// Returns `(d_input, d_weight, d_bias)`.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    pad: usize,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (ci, h, w) = input.chw();
    let (co, k) = (weight.shape()[0], weight.shape()[2]);
    let hw = h * w;
    let kdim = ci * k * k;
    let go = grad_out.data();

    let d_bias: Vec<f64> = (0..co).map(|o| go[o * hw..(o + 1) * hw].iter().sum()).collect();

    let direct = k == 1 && pad == 0;
    let cols_owned;
    let cols: &[f64] = if direct {
        input.data()
    } else {
        cols_owned = im2col(input.data(), ci, h, w, k, pad);
        &cols_owned
    };

    // dW[co, kdim] = dOut[co, hw] * cols^T
    let mut d_weight = vec![0.0; co * kdim];
    gemm(co, hw, kdim, go, (hw as isize, 1), cols, (1, hw as isize), 0.0, &mut d_weight);

    // dCols[kdim, hw] = W^T * dOut
    let mut d_cols = vec![0.0; kdim * hw];
    gemm(kdim, co, hw, weight.data(), (1, kdim as isize), go, (hw as isize, 1), 0.0, &mut d_cols);
    let d_input = if direct { d_cols } else { col2im(&d_cols, ci, h, w, k, pad) };

    (
        Tensor::from_vec(&[ci, h, w], d_input).expect("conv d_input"),
        Tensor::from_vec(weight.shape(), d_weight).expect("conv d_weight"),
        Tensor::from_vec(&[co], d_bias).expect("conv d_bias"),
    )
}

/// 2x2 max pooling with stride 2. Returns the pooled map and the flat
/// argmax index (into the input) of every output cell.
pub(crate) fn maxpool2_forward(input: &Tensor) -> (Tensor, Vec<usize>) {
    let (c, h, w) = input.chw();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (y, x) = (oy * 2 + dy, ox * 2 + dx);
                        if y < h && x < w {
                            let idx = (ch * h + y) * w + x;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (Tensor::from_vec(&[c, oh, ow], out).expect("pool shape"), arg)
}

/// Source indices and blend weight of one output coordinate along an axis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Separable bilinear resampling plan, half-pixel centers
/// (`src = (dst + 0.5) * in / out - 0.5`, clamped to the valid range).
#[derive(Clone, Debug)]
pub(crate) struct ResizePlan {
    in_h: usize,
    in_w: usize,
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

impl ResizePlan {
    pub(crate) fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        Self {
            in_h,
            in_w,
            rows: axis_taps(in_h, out_h),
            cols: axis_taps(in_w, out_w),
        }
    }

    pub(crate) fn forward(&self, input: &Tensor) -> Tensor {
        let (c, h, w) = input.chw();
        debug_assert_eq!((h, w), (self.in_h, self.in_w));
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let src = input.data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            for (oy, ry) in self.rows.iter().enumerate() {
                let r0 = &plane[ry.lo * w..(ry.lo + 1) * w];
                let r1 = &plane[ry.hi * w..(ry.hi + 1) * w];
                let dst = &mut out[(ch * oh + oy) * ow..(ch * oh + oy + 1) * ow];
                for (ox, cx) in self.cols.iter().enumerate() {
                    let top = r0[cx.lo] * (1.0 - cx.frac) + r0[cx.hi] * cx.frac;
                    let bot = r1[cx.lo] * (1.0 - cx.frac) + r1[cx.hi] * cx.frac;
                    dst[ox] = top * (1.0 - ry.frac) + bot * ry.frac;
                }
            }
        }
        Tensor::from_vec(&[c, oh, ow], out).expect("resize shape")
    }

    pub(crate) fn backward(&self, grad_out: &Tensor) -> Tensor {
        let (c, oh, ow) = grad_out.chw();
        let (h, w) = (self.in_h, self.in_w);
        let g = grad_out.data();
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            let plane = &mut out[ch * h * w..(ch + 1) * h * w];
            for (oy, ry) in self.rows.iter().enumerate() {
                for (ox, cx) in self.cols.iter().enumerate() {
                    let v = g[(ch * oh + oy) * ow + ox];
                    let top = v * (1.0 - ry.frac);
                    let bot = v * ry.frac;
                    plane[ry.lo * w + cx.lo] += top * (1.0 - cx.frac);
                    plane[ry.lo * w + cx.hi] += top * cx.frac;
                    plane[ry.hi * w + cx.lo] += bot * (1.0 - cx.frac);
                    plane[ry.hi * w + cx.hi] += bot * cx.frac;
                }
            }
        }
        Tensor::from_vec(&[c, h, w], out).expect("resize grad shape")
    }
}

/// Bilinear resize of a `[C,H,W]` map.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (_, h, w) = input.chw();
    ResizePlan::new(h, w, out_h, out_w).forward(input)
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Sobel responses of a single `H x W` plane with replicated borders.
pub(crate) fn sobel(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = (0.0, 0.0);
            for (dy, (kx_row, ky_row)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                let yy = (y + dy).saturating_sub(1).min(h - 1);
                for dx in 0..3 {
                    let xx = (x + dx).saturating_sub(1).min(w - 1);
                    let v = plane[yy * w + xx];
                    sx += kx_row[dx] * v;
                    sy += ky_row[dx] * v;
                }
            }
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
        }
    }
    (gx, gy)
}

/// Transpose of [`sobel`]: scatters `(d_gx, d_gy)` back onto the plane.
pub(crate) fn sobel_backward(d_gx: &[f64], d_gy: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (ax, ay) = (d_gx[y * w + x], d_gy[y * w + x]);
            if ax == 0.0 && ay == 0.0 {
                continue;
            }
            for (dy, (kx_row, ky_row)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                let yy = (y + dy).saturating_sub(1).min(h - 1);
                for dx in 0..3 {
                    let xx = (x + dx).saturating_sub(1).min(w - 1);
                    out[yy * w + xx] += kx_row[dx] * ax + ky_row[dx] * ay;
                }
            }
        }
    }
    out
}

/// Soft boundary strength `tanh(gx^2 + gy^2)` of a single plane, in `[0, 1)`.
pub fn soft_boundary(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (gx, gy) = sobel(plane, h, w);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).tanh()).collect()
}

/// Sobel gradient magnitude of a single plane.
pub fn sobel_magnitude(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (gx, gy) = sobel(plane, h, w);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect()
}
