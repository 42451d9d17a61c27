//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use salient_edge::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn binary(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 }).collect()).unwrap()
}

/// Per-threshold counts straight from the definition: a pixel is positive
/// at threshold `k` when `p >= k / 255`.
pub struct BrutePr {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub tp: Vec<Vec<u64>>,
    pub pp: Vec<Vec<u64>>,
    pub images: usize,
    pub skipped: usize,
}

pub fn brute_pr(preds: &[Tensor], gts: &[Tensor]) -> BrutePr {
    let mut out = BrutePr {
        precision: vec![0.0; 256],
        recall: vec![0.0; 256],
        tp: Vec::new(),
        pp: Vec::new(),
        images: 0,
        skipped: 0,
    };
    for (p, g) in preds.iter().zip(gts) {
        let pos = g.data().iter().filter(|&&v| v > 0.5).count() as u64;
        if pos == 0 {
            out.skipped += 1;
            continue;
        }
        out.images += 1;
        let mut tps = Vec::with_capacity(256);
        let mut pps = Vec::with_capacity(256);
        for k in 0..256 {
            let t = k as f64 / 255.0;
            let mut tp = 0u64;
            let mut pp = 0u64;
            for (&pv, &gv) in p.data().iter().zip(g.data()) {
                if pv >= t {
                    pp += 1;
                    if gv > 0.5 {
                        tp += 1;
                    }
                }
            }
            out.precision[k] += if pp == 0 { 1.0 } else { tp as f64 / pp as f64 };
            out.recall[k] += tp as f64 / pos as f64;
            tps.push(tp);
            pps.push(pp);
        }
        out.tp.push(tps);
        out.pp.push(pps);
    }
    for k in 0..256 {
        out.precision[k] /= out.images as f64;
        out.recall[k] /= out.images as f64;
    }
    out
}

pub fn brute_mae(p: &Tensor, g: &Tensor) -> f64 {
    let mut s = 0.0;
    for i in 0..p.numel() {
        s += (p.data()[i] - g.data()[i]).abs();
    }
    s / p.numel() as f64
}

/// Same-padded cross-correlation by direct summation.
pub fn conv(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (ci, h, w) = input.chw();
    let (co, k) = (weight.shape()[0], weight.shape()[2]);
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(&[co, h, w]);
    for o in 0..co {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = bias.data()[o];
                for c in 0..ci {
                    for ky in 0..k as isize {
                        for kx in 0..k as isize {
                            let (sy, sx) = (y + ky - pad, x + kx - pad);
                            if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                                let wi = ((o * ci + c) * k + ky as usize) * k + kx as usize;
                                acc += weight.data()[wi] * input.at(c, sy as usize, sx as usize);
                            }
                        }
                    }
                }
                out.data_mut()[(o * h + y as usize) * w + x as usize] = acc;
            }
        }
    }
    out
}

pub fn relu(t: &Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}
