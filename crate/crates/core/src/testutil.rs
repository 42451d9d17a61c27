//! Slow reference implementations used as test oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Direct same-padded cross-correlation, one output at a time.
pub fn conv_oracle(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (ci, h, w) = input.chw();
    let (co, k) = (weight.shape()[0], weight.shape()[2]);
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(&[co, h, w]);
    for o in 0..co {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias.data()[o];
                for c in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - pad;
                            let sx = x as isize + kx as isize - pad;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            let wv = weight.data()[((o * ci + c) * k + ky) * k + kx];
                            acc += wv * input.at(c, sy as usize, sx as usize);
                        }
                    }
                }
                out.data_mut()[(o * h + y) * w + x] = acc;
            }
        }
    }
    out
}

/// Bilinear resize with half-pixel centres, evaluated per output pixel.
pub fn bilinear_oracle(t: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (c, h, w) = t.chw();
    let src = |d: usize, n_in: usize, n_out: usize| {
        let s = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    for ch in 0..c {
        for y in 0..out_h {
            let (y0, y1, fy) = src(y, h, out_h);
            for x in 0..out_w {
                let (x0, x1, fx) = src(x, w, out_w);
                let top = t.at(ch, y0, x0) * (1.0 - fx) + t.at(ch, y0, x1) * fx;
                let bottom = t.at(ch, y1, x0) * (1.0 - fx) + t.at(ch, y1, x1) * fx;
                out.data_mut()[(ch * out_h + y) * out_w + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}
