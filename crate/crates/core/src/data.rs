//! Samples, salient-edge ground truth, the synthetic shape generator and
//! folder I/O.
//!
//! On disk a dataset is a directory with `images/<id>.png` (8-bit RGB),
//! `masks/<id>.png` (8-bit gray, 0 or 255) and an optional `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One image with its binary saliency mask `Y` and salient-edge mask `Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[3, H, W]`, values in `[0, 1]`.
    pub image: Tensor,
    /// `[1, H, W]`, values in `{0, 1}`.
    pub mask: Tensor,
    /// `[1, H, W]`, the inner boundary of `mask`.
    pub edge: Tensor,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor, mask: Tensor) -> Result<Self> {
        let (c, h, w) = image.chw();
        if c != 3 || mask.shape() != [1, h, w] {
            return Err(Error::shape("Sample mask", &[1, h, w], mask.shape()));
        }
        let edge = derive_edge_gt(&mask);
        Ok(Self {
            id: id.into(),
            image,
            mask,
            edge,
        })
    }

    pub fn resolution(&self) -> (usize, usize) {
        let (_, h, w) = self.image.chw();
        (h, w)
    }
}

/// Foreground pixels with at least one 4-connected background neighbour;
/// pixels outside the image count as background.
pub fn derive_edge_gt(mask: &Tensor) -> Tensor {
    let (_, h, w) = mask.chw();
    let y = mask.data();
    let fg = |r: isize, c: isize| r >= 0 && c >= 0 && r < h as isize && c < w as isize && y[r as usize * w + c as usize] > 0.5;
    let mut out = Tensor::zeros(&[1, h, w]);
    for r in 0..h as isize {
        for c in 0..w as isize {
            if fg(r, c) && !(fg(r - 1, c) && fg(r + 1, c) && fg(r, c - 1) && fg(r, c + 1)) {
                out.data_mut()[r as usize * w + c as usize] = 1.0;
            }
        }
    }
    out
}

/// Area-average downsampling by `factor`, binarized at 0.5.
pub fn downsample_mask(mask: &Tensor, factor: usize) -> Tensor {
    pool_mask(mask, factor, |block| {
        let mean = block.iter().sum::<f64>() / block.len() as f64;
        if mean >= 0.5 {
            1.0
        } else {
            0.0
        }
    })
}

/// Max-pool downsampling by `factor`, keeping every thin edge.
pub fn downsample_edge(edge: &Tensor, factor: usize) -> Tensor {
    pool_mask(edge, factor, |block| block.iter().fold(0.0, |m: f64, &v| m.max(v)))
}

fn pool_mask(mask: &Tensor, factor: usize, reduce: impl Fn(&[f64]) -> f64) -> Tensor {
    let (_, h, w) = mask.chw();
    if factor == 1 {
        return mask.clone();
    }
    let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
    let mut out = Tensor::zeros(&[1, oh, ow]);
    let mut block = Vec::with_capacity(factor * factor);
    for oy in 0..oh {
        for ox in 0..ow {
            block.clear();
            for y in oy * factor..((oy + 1) * factor).min(h) {
                for x in ox * factor..((ox + 1) * factor).min(w) {
                    block.push(mask.data()[y * w + x]);
                }
            }
            out.data_mut()[oy * ow + ox] = reduce(&block);
        }
    }
    out
}

/// Ground truth of one sample at every supervision stride.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub mask: Tensor,
    pub edge: Tensor,
    mask_pyramid: BTreeMap<usize, Tensor>,
    edge_pyramid: BTreeMap<usize, Tensor>,
}

impl GroundTruth {
    pub fn new(sample: &Sample) -> Self {
        let strides = [2, 4, 8, 16, 32];
        Self {
            mask: sample.mask.clone(),
            edge: sample.edge.clone(),
            mask_pyramid: strides.iter().map(|&s| (s, downsample_mask(&sample.mask, s))).collect(),
            edge_pyramid: strides.iter().map(|&s| (s, downsample_edge(&sample.edge, s))).collect(),
        }
    }

    /// `Y` at `stride` (1 is the input resolution).
    pub fn mask_at(&self, stride: usize) -> &Tensor {
        if stride == 1 {
            &self.mask
        } else {
            &self.mask_pyramid[&stride]
        }
    }

    /// `Z` at `stride` (1 is the input resolution).
    pub fn edge_at(&self, stride: usize) -> &Tensor {
        if stride == 1 {
            &self.edge
        } else {
            &self.edge_pyramid[&stride]
        }
    }
}

/// Describes how to reproduce a split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub count: usize,
    pub resolution: usize,
    /// Generator seed for synthetic splits.
    pub seed: Option<u64>,
    /// Source directory for ingested splits.
    pub source_dir: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn synthetic(split: impl Into<String>, count: usize, resolution: usize, seed: u64) -> Self {
        Self {
            split: split.into(),
            count,
            resolution,
            seed: Some(seed),
            source_dir: None,
        }
    }

    pub fn directory(split: impl Into<String>, dir: impl Into<PathBuf>, count: usize, resolution: usize) -> Self {
        Self {
            split: split.into(),
            count,
            resolution,
            seed: None,
            source_dir: Some(dir.into()),
        }
    }

    /// Regenerates or reloads the samples the manifest describes.
    pub fn materialize(&self) -> Result<Vec<Sample>> {
        match (&self.seed, &self.source_dir) {
            (Some(seed), None) => gen_synthetic(self.count, self.resolution, *seed),
            (None, Some(dir)) => {
                let samples = load_dataset(dir)?;
                if samples.len() != self.count {
                    return Err(Error::Dataset(format!(
                        "{} holds {} samples, manifest says {}",
                        dir.display(),
                        samples.len(),
                        self.count
                    )));
                }
                Ok(samples)
            }
            _ => Err(Error::Config(
                "manifest needs exactly one of `seed` or `source_dir`".into(),
            )),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Clone, Copy, Debug)]
enum ShapeKind {
    Ellipse { rx: f64, ry: f64, angle: f64 },
    Polygon { n: usize, verts: [(f64, f64); 4] },
}

fn inside(kind: &ShapeKind, cx: f64, cy: f64, x: f64, y: f64) -> bool {
    match kind {
        ShapeKind::Ellipse { rx, ry, angle } => {
            let (s, c) = angle.sin_cos();
            let (dx, dy) = (x - cx, y - cy);
            let u = (dx * c + dy * s) / rx;
            let v = (-dx * s + dy * c) / ry;
            u * u + v * v <= 1.0
        }
        ShapeKind::Polygon { n, verts } => {
            // convex polygon, vertices in counter-clockwise order
            (0..*n).all(|i| {
                let (ax, ay) = verts[i];
                let (bx, by) = verts[(i + 1) % n];
                (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0.0
            })
        }
    }
}

fn random_shape(rng: &mut ChaCha8Rng, res: f64) -> (ShapeKind, f64, f64) {
    let size = rng.random_range(0.08..0.26) * res;
    let cx = rng.random_range(0.15..0.85) * res;
    let cy = rng.random_range(0.15..0.85) * res;
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let kind = match rng.random_range(0..3) {
        0 => ShapeKind::Ellipse {
            rx: size,
            ry: size * rng.random_range(0.5..1.0),
            angle,
        },
        1 => {
            let (hw, hh) = (size, size * rng.random_range(0.5..1.0));
            let (s, c) = angle.sin_cos();
            let corner = |u: f64, v: f64| (cx + u * c - v * s, cy + u * s + v * c);
            ShapeKind::Polygon {
                n: 4,
                verts: [corner(-hw, -hh), corner(hw, -hh), corner(hw, hh), corner(-hw, hh)],
            }
        }
        _ => {
            let mut verts = [(0.0, 0.0); 4];
            for (k, v) in verts.iter_mut().take(3).enumerate() {
                let a = angle + k as f64 * 2.0 * std::f64::consts::PI / 3.0 + rng.random_range(-0.3..0.3);
                let r = size * rng.random_range(0.8..1.2);
                *v = (cx + r * a.cos(), cy + r * a.sin());
            }
            ShapeKind::Polygon { n: 3, verts }
        }
    };
    (kind, cx, cy)
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum Euclidean RGB distance between a shape and the background.
pub const MIN_CONTRAST: f64 = 0.35;
/// Foreground coverage bounds of a synthetic sample.
pub const COVERAGE_RANGE: (f64, f64) = (0.01, 0.60);

/// Draws sample `index` of the synthetic family identified by `seed`.
pub fn synthetic_sample(index: usize, resolution: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let res = resolution as f64;
    let n = resolution * resolution;

    loop {
        let bg = random_color(&mut rng);
        // two oriented stripe patterns give the background non-salient edges
        let waves: Vec<(f64, f64, f64, f64)> = (0..2)
            .map(|_| {
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let freq = rng.random_range(2.0..10.0) * std::f64::consts::TAU / res;
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp = rng.random_range(0.04..0.12);
                (theta, freq, phase, amp)
            })
            .collect();

        let shapes = rng.random_range(1..=3);
        let mut mask = vec![0u8; n];
        let mut fills: Vec<(Vec<usize>, [f64; 3])> = Vec::new();
        let mut attempts = 0;
        while fills.len() < shapes && attempts < 50 {
            attempts += 1;
            let (kind, cx, cy) = random_shape(&mut rng, res);
            let mut pixels = Vec::new();
            let mut clash = false;
            for y in 0..resolution {
                for x in 0..resolution {
                    if inside(&kind, cx, cy, x as f64 + 0.5, y as f64 + 0.5) {
                        // keep one background pixel between shapes
                        let near = (y.saturating_sub(1)..=(y + 1).min(resolution - 1))
                            .any(|yy| (x.saturating_sub(1)..=(x + 1).min(resolution - 1)).any(|xx| mask[yy * resolution + xx] != 0));
                        clash |= near;
                        pixels.push(y * resolution + x);
                    }
                }
            }
            if clash || pixels.is_empty() {
                continue;
            }
            let color = loop {
                let c = random_color(&mut rng);
                if color_distance(c, bg) >= MIN_CONTRAST {
                    break c;
                }
            };
            for &p in &pixels {
                mask[p] = 1;
            }
            fills.push((pixels, color));
        }

        let coverage = mask.iter().filter(|&&m| m != 0).count() as f64 / n as f64;
        if fills.is_empty() || coverage < COVERAGE_RANGE.0 || coverage > COVERAGE_RANGE.1 {
            continue;
        }

        let mut image = vec![0.0; 3 * n];
        for y in 0..resolution {
            for x in 0..resolution {
                let mut tex = 0.0;
                for &(theta, freq, phase, amp) in &waves {
                    let t = (x as f64 * theta.cos() + y as f64 * theta.sin()) * freq + phase;
                    tex += amp * t.sin();
                }
                for c in 0..3 {
                    image[c * n + y * resolution + x] = bg[c] + tex;
                }
            }
        }
        for (pixels, color) in &fills {
            for &p in pixels {
                for c in 0..3 {
                    image[c * n + p] = color[c];
                }
            }
        }
        for v in &mut image {
            *v = (*v + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0);
        }

        let image = Tensor::from_vec(&[3, resolution, resolution], image).expect("image shape");
        let mask = Tensor::from_vec(&[1, resolution, resolution], mask.iter().map(|&m| m as f64).collect())
            .expect("mask shape");
        return Sample::new(format!("syn-{seed}-{index:05}"), image, mask).expect("consistent sample");
    }
}

/// `count` synthetic samples of size `resolution`; sample `i` depends only
/// on `(seed, i, resolution)`.
pub fn gen_synthetic(count: usize, resolution: usize, seed: u64) -> Result<Vec<Sample>> {
    if resolution == 0 || resolution % 32 != 0 {
        return Err(Error::Dimension {
            axis: "resolution",
            size: resolution,
            reason: "must be a positive multiple of 32".into(),
        });
    }
    Ok((0..count).map(|i| synthetic_sample(i, resolution, seed)).collect())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a single-channel `[1, H, W]` map in `[0, 1]` as 8-bit gray PNG
/// with `round(255 * v)`.
pub fn save_gray_png(path: &Path, map: &Tensor) -> Result<()> {
    let (_, h, w) = map.chw();
    let buf: Vec<u8> = map.data().iter().map(|&v| to_u8(v)).collect();
    let img = GrayImage::from_raw(w as u32, h as u32, buf).expect("gray buffer size");
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn save_rgb_png(path: &Path, image: &Tensor) -> Result<()> {
    let (_, h, w) = image.chw();
    let n = h * w;
    let mut buf = Vec::with_capacity(3 * n);
    for p in 0..n {
        for c in 0..3 {
            buf.push(to_u8(image.data()[c * n + p]));
        }
    }
    let img = RgbImage::from_raw(w as u32, h as u32, buf).expect("rgb buffer size");
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads an 8-bit gray map as `[1, H, W]` values `v / 255`.
pub fn load_gray_png(path: &Path) -> Result<Tensor> {
    let img = open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Tensor::from_vec(&[1, h as usize, w as usize], img.pixels().map(|p| p.0[0] as f64 / 255.0).collect())
}

fn load_rgb(path: &Path) -> Result<Tensor> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = h * w;
    let mut data = vec![0.0; 3 * n];
    for (p, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + p] = px.0[c] as f64 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Writes samples (and the manifest, when given) in the folder layout.
pub fn save_dataset(dir: &Path, samples: &[Sample], manifest: Option<&DatasetManifest>) -> Result<()> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for s in samples {
        save_rgb_png(&dir.join("images").join(format!("{}.png", s.id)), &s.image)?;
        save_gray_png(&dir.join("masks").join(format!("{}.png", s.id)), &s.mask)?;
    }
    if let Some(m) = manifest {
        m.write(&dir.join("manifest.json"))?;
    }
    Ok(())
}

fn stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"));
        if is_image {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Loads `images/` and `masks/` paired by basename, sorted by basename.
/// Masks are binarized at 0.5 and `Z` is derived from them.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let images = stems(&dir.join("images"))?;
    let masks = stems(&dir.join("masks"))?;
    let image_keys: BTreeSet<_> = images.keys().collect();
    let mask_keys: BTreeSet<_> = masks.keys().collect();
    let unpaired: Vec<String> = image_keys.symmetric_difference(&mask_keys).map(|s| s.to_string()).collect();
    if !unpaired.is_empty() {
        return Err(Error::Unpaired {
            dir: dir.to_path_buf(),
            basenames: unpaired,
        });
    }
    let mut samples = Vec::with_capacity(images.len());
    for (stem, path) in &images {
        let image = load_rgb(path)?;
        let mask = load_gray_png(&masks[stem])?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        let (_, h, w) = image.chw();
        if mask.shape() != [1, h, w] {
            return Err(Error::Dataset(format!(
                "{stem}: image is {h}x{w}, mask is {}x{}",
                mask.shape()[1],
                mask.shape()[2]
            )));
        }
        for (axis, size) in [("height", h), ("width", w)] {
            if size % 32 != 0 {
                return Err(Error::Dimension {
                    axis,
                    size,
                    reason: format!("{stem}: must be divisible by 32"),
                });
            }
        }
        samples.push(Sample::new(stem.clone(), image, mask)?);
    }
    Ok(samples)
}

/// Loads prediction maps and ground-truth masks paired by basename, sorted
/// by basename. Masks are binarized at 0.5; predictions are kept as is.
pub fn load_map_pairs(pred_dir: &Path, gt_dir: &Path) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let preds = stems(pred_dir)?;
    let gts = stems(gt_dir)?;
    let missing: Vec<String> = gts.keys().filter(|k| !preds.contains_key(*k)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::Unpaired {
            dir: pred_dir.to_path_buf(),
            basenames: missing,
        });
    }
    if gts.is_empty() {
        return Err(Error::EmptyDataset("ground-truth directory"));
    }
    let mut p = Vec::with_capacity(gts.len());
    let mut g = Vec::with_capacity(gts.len());
    for (stem, path) in &gts {
        let pred = load_gray_png(&preds[stem])?;
        let gt = load_gray_png(path)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        if pred.shape() != gt.shape() {
            return Err(Error::Dataset(format!("{stem}: prediction and mask sizes differ")));
        }
        p.push(pred);
        g.push(gt);
    }
    Ok((p, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, ones: impl Fn(usize, usize) -> bool) -> Tensor {
        let mut t = Tensor::zeros(&[1, h, w]);
        for y in 0..h {
            for x in 0..w {
                if ones(y, x) {
                    t.data_mut()[y * w + x] = 1.0;
                }
            }
        }
        t
    }

    #[test]
    fn isolated_pixel_is_its_own_edge() {
        let y = mask(3, 3, |r, c| r == 1 && c == 1);
        assert_eq!(derive_edge_gt(&y), y);
    }

    #[test]
    fn block_edge_is_its_perimeter() {
        let y = mask(6, 6, |r, c| (1..5).contains(&r) && (1..5).contains(&c));
        let z = derive_edge_gt(&y);
        assert_eq!(z.sum(), 12.0);
        let expected = mask(6, 6, |r, c| {
            (1..5).contains(&r) && (1..5).contains(&c) && (r == 1 || r == 4 || c == 1 || c == 4)
        });
        assert_eq!(z, expected);
    }

    #[test]
    fn empty_mask_has_no_edge_and_border_counts_as_background() {
        assert_eq!(derive_edge_gt(&Tensor::zeros(&[1, 4, 4])).sum(), 0.0);
        let full = Tensor::full(&[1, 4, 4], 1.0);
        assert_eq!(derive_edge_gt(&full).sum(), 12.0);
    }

    #[test]
    fn pyramids_have_expected_sizes() {
        let s = synthetic_sample(0, 64, 1);
        let gt = GroundTruth::new(&s);
        for stride in [1, 2, 4, 8, 16, 32] {
            assert_eq!(gt.mask_at(stride).shape(), &[1, 64 / stride, 64 / stride]);
            assert_eq!(gt.edge_at(stride).shape(), &[1, 64 / stride, 64 / stride]);
        }
        // max-pooling keeps every edge pixel's cell
        assert!(gt.edge_at(2).sum() > 0.0);
    }

    #[test]
    fn generator_rejects_bad_resolution() {
        assert!(gen_synthetic(1, 100, 0).is_err());
    }

    #[test]
    fn manifest_json_has_fixed_key_order() {
        let m = DatasetManifest::synthetic("train", 8, 64, 7);
        let text = m.to_json().unwrap();
        let keys: Vec<usize> = ["split", "count", "resolution", "seed", "source_dir"]
            .iter()
            .map(|k| text.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]), "{text}");
        assert_eq!(DatasetManifest::from_json(&text).unwrap(), m);
    }
}
