//! Subpixel particle localization.
//!
//! Two detectors are provided: thresholding + connected components refined by
//! the radial-symmetry estimator, and a Laplacian-of-Gaussian blob detector
//! refined by three-point Gaussian peak interpolation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::NeighborIndex;
use crate::types::{Dim, Image, ParticleSet, Point};
use crate::{Error, Result};

/// Width of the pre-smoothing applied before gradient estimation.
const RADIAL_SMOOTHING_SIGMA: f64 = 0.5;
/// Centroids closer than this are merged.
const DUPLICATE_DIST: f64 = 1.0;
/// Default lower bound on component size, px^d.
const DEFAULT_MIN_VOLUME: f64 = 2.0;
/// Relative floor for log-intensities in peak interpolation.
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMethod {
    ThresholdRadial,
    LogGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub method: DetectionMethod,
    /// Fraction of the image (or response) maximum.
    pub intensity_threshold: f64,
    /// Nominal particle radius in pixels.
    pub p_size: f64,
    pub min_blob_volume: Option<f64>,
    pub max_blob_volume: Option<f64>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            method: DetectionMethod::ThresholdRadial,
            intensity_threshold: 0.5,
            p_size: 3.0,
            min_blob_volume: None,
            max_blob_volume: None,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.intensity_threshold > 0.0 && self.intensity_threshold < 1.0) {
            return bad(format!("intensity threshold {} outside (0, 1)", self.intensity_threshold));
        }
        if !(self.p_size >= 1.0) {
            return bad(format!("particle radius {} below 1 px", self.p_size));
        }
        if let Some(v) = self.min_blob_volume {
            if !(v >= 1.0) {
                return bad(format!("minimum blob volume {v} below 1"));
            }
        }
        if let (Some(lo), Some(hi)) = (self.min_blob_volume, self.max_blob_volume) {
            if hi < lo {
                return bad("maximum blob volume below minimum".into());
            }
        }
        Ok(())
    }

    /// Smallest accepted component. The default only rejects single-pixel
    /// speckle: a unit-σ blob centered between pixels keeps just two pixels
    /// above a half-maximum threshold once noise inflates the image maximum.
    pub fn min_volume(&self, _dim: Dim) -> f64 {
        self.min_blob_volume.unwrap_or(DEFAULT_MIN_VOLUME)
    }

    /// Largest accepted component, `(4 p_size)^d` unless configured.
    pub fn max_volume(&self, dim: Dim) -> f64 {
        self.max_blob_volume.unwrap_or_else(|| (4.0 * self.p_size).powi(dim.n() as i32))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detections {
    pub particles: ParticleSet,
    /// Set when nothing was found; an empty result is not an error.
    pub warning: Option<String>,
}

impl Detections {
    fn finish(dim: Dim, frame: usize, mut points: Vec<Point>) -> Self {
        points.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let points = dedup(dim, points);
        let warning = points.is_empty().then(|| "no particles found".to_string());
        Self { particles: ParticleSet::new(dim, frame, points), warning }
    }
}

/// Runs the configured detector.
pub fn detect(image: &Image, cfg: &DetectionConfig) -> Result<Detections> {
    match cfg.method {
        DetectionMethod::ThresholdRadial => detect_threshold_radial(image, cfg),
        DetectionMethod::LogGaussian => detect_log(image, cfg),
    }
}

/// Drops every point closer than one pixel to an earlier (lexicographically smaller) one.
fn dedup(dim: Dim, points: Vec<Point>) -> Vec<Point> {
    if points.len() < 2 {
        return points;
    }
    let index = NeighborIndex::new(&points, dim);
    let mut keep = vec![true; points.len()];
    for i in 0..points.len() {
        if !keep[i] {
            continue;
        }
        for n in index.within(&points[i], DUPLICATE_DIST, Some(i)) {
            if n.index > i && n.dist < DUPLICATE_DIST {
                keep[n.index] = false;
            }
        }
    }
    points.into_iter().zip(keep).filter_map(|(p, k)| k.then_some(p)).collect()
}

#[derive(Debug, Clone, Copy)]
struct Bounds {
    lo: [usize; 3],
    hi: [usize; 3],
}

/// Threshold, label, filter by size, and localize each blob by radial symmetry.
pub fn detect_threshold_radial(image: &Image, cfg: &DetectionConfig) -> Result<Detections> {
    cfg.validate()?;
    let dim = image.dim;
    let max = image.max();
    if image.is_empty() || !(max > 0.0) {
        return Ok(Detections::finish(dim, 0, Vec::new()));
    }
    let cut = cfg.intensity_threshold * max;
    let mask: Vec<bool> = image.data.iter().map(|&v| v > cut).collect();
    let (min_v, max_v) = (cfg.min_volume(dim), cfg.max_volume(dim));
    let blobs: Vec<Bounds> = connected_components(image, &mask)
        .into_iter()
        .filter(|(_, size)| (*size as f64) >= min_v && (*size as f64) <= max_v)
        .map(|(b, _)| b)
        .collect();
    if blobs.is_empty() {
        return Ok(Detections::finish(dim, 0, Vec::new()));
    }
    let smoothed = gaussian_smooth(image, RADIAL_SMOOTHING_SIGMA);
    let points = blobs
        .par_iter()
        .map(|b| radial_symmetry_center(&smoothed, dilate(image, *b)))
        .collect();
    Ok(Detections::finish(dim, 0, points))
}

fn dilate(image: &Image, b: Bounds) -> Bounds {
    let mut out = b;
    for a in 0..image.dim.n() {
        out.lo[a] = b.lo[a].saturating_sub(1);
        out.hi[a] = (b.hi[a] + 1).min(image.dims[a] - 1);
    }
    out
}

/// Labels foreground pixels with 8- (2D) or 26-connectivity; returns bounding boxes and sizes.
fn connected_components(image: &Image, mask: &[bool]) -> Vec<(Bounds, usize)> {
    let dims = image.dims;
    let zr: isize = if image.dim == Dim::Three { 1 } else { 0 };
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let c = image.coords(start);
        let mut bounds = Bounds { lo: c, hi: c };
        let mut size = 0usize;
        while let Some(idx) = stack.pop() {
            size += 1;
            let c = image.coords(idx);
            for a in 0..3 {
                bounds.lo[a] = bounds.lo[a].min(c[a]);
                bounds.hi[a] = bounds.hi[a].max(c[a]);
            }
            for dz in -zr..=zr {
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dx == 0 && dy == 0 && dz == 0 {
                            continue;
                        }
                        let (x, y, z) = (c[0] as isize + dx, c[1] as isize + dy, c[2] as isize + dz);
                        if x < 0 || y < 0 || z < 0 || x >= dims[0] as isize || y >= dims[1] as isize || z >= dims[2] as isize {
                            continue;
                        }
                        let j = image.index(x as usize, y as usize, z as usize);
                        if mask[j] && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        out.push((bounds, size));
    }
    out
}

/// Normalized sampled Gaussian, truncated at `radius`.
fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let k: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable correlation with `kernel` along `axis`; taps falling outside the
/// image are dropped and, when `renormalize`, the remaining weights rescaled.
fn convolve_axis(image: &Image, kernel: &[f64], axis: usize, renormalize: bool) -> Image {
    let r = (kernel.len() / 2) as isize;
    let dims = image.dims;
    let n = dims[axis] as isize;
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let mut out = image.clone();
    out.data.par_iter_mut().enumerate().for_each(|(idx, v)| {
        let c = [idx % dims[0], (idx / dims[0]) % dims[1], idx / (dims[0] * dims[1])];
        let pos = c[axis] as isize;
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (t, w) in kernel.iter().enumerate() {
            let q = pos + t as isize - r;
            if q < 0 || q >= n {
                continue;
            }
            let j = (idx as isize + (q - pos) * stride as isize) as usize;
            acc += w * image.data[j];
            wsum += w;
        }
        *v = if renormalize && wsum > 0.0 { acc / wsum } else { acc };
    });
    out
}

fn gaussian_smooth(image: &Image, sigma: f64) -> Image {
    let kernel = gaussian_kernel(sigma, (3.0 * sigma).ceil() as usize);
    let mut out = image.clone();
    for a in 0..image.dim.n() {
        out = convolve_axis(&out, &kernel, a, true);
    }
    out
}

/// Central-difference gradient (one-sided at the image border).
fn gradient_at(img: &Image, c: [usize; 3]) -> Point {
    let mut g = [0.0; 3];
    for a in 0..img.dim.n() {
        let n = img.dims[a];
        if n < 2 {
            continue;
        }
        let mut lo = c;
        let mut hi = c;
        lo[a] = c[a].saturating_sub(1);
        hi[a] = (c[a] + 1).min(n - 1);
        let span = (hi[a] - lo[a]) as f64;
        g[a] = (img.get(hi[0], hi[1], hi[2]) - img.get(lo[0], lo[1], lo[2])) / span;
    }
    g
}

/// Least-squares point closest to all gradient lines of the patch, each line
/// weighted by squared gradient magnitude over distance to the intensity centroid.
fn radial_symmetry_center(smoothed: &Image, b: Bounds) -> Point {
    let n = smoothed.dim.n();
    let mut pixels = Vec::new();
    let (mut wsum, mut centroid) = (0.0, [0.0; 3]);
    for z in b.lo[2]..=b.hi[2] {
        for y in b.lo[1]..=b.hi[1] {
            for x in b.lo[0]..=b.hi[0] {
                let v = smoothed.get(x, y, z).max(0.0);
                let p = [x as f64, y as f64, z as f64];
                for a in 0..3 {
                    centroid[a] += v * p[a];
                }
                wsum += v;
                pixels.push(([x, y, z], p));
            }
        }
    }
    if wsum > 0.0 {
        for c in &mut centroid {
            *c /= wsum;
        }
    } else {
        for a in 0..3 {
            centroid[a] = 0.5 * (b.lo[a] + b.hi[a]) as f64;
        }
    }

    let mut lhs = nalgebra::Matrix3::<f64>::zeros();
    let mut rhs = nalgebra::Vector3::<f64>::zeros();
    for (c, p) in &pixels {
        let g = gradient_at(smoothed, *c);
        let g2: f64 = g[..n].iter().map(|v| v * v).sum();
        if g2 <= 0.0 {
            continue;
        }
        let d = crate::types::dist2(p, &centroid).sqrt().max(1e-3);
        let w = g2 / d;
        let gn = nalgebra::Vector3::new(g[0], g[1], g[2]) / g2.sqrt();
        let mut proj = nalgebra::Matrix3::<f64>::identity() - gn * gn.transpose();
        if n == 2 {
            proj[(2, 2)] = 0.0;
        }
        lhs += proj * w;
        rhs += proj * nalgebra::Vector3::new(p[0], p[1], p[2]) * w;
    }
    if n == 2 {
        lhs[(2, 2)] = 1.0;
        rhs[2] = 0.0;
    }
    let scale = lhs.abs().max().max(f64::MIN_POSITIVE);
    let solved = if lhs.determinant().abs() > 1e-12 * scale.powi(3) { lhs.try_inverse().map(|inv| inv * rhs) } else { None };
    let mut out = match solved {
        Some(v) if v.iter().all(|x| x.is_finite()) => [v[0], v[1], v[2]],
        _ => centroid,
    };
    for a in 0..n {
        out[a] = out[a].clamp(b.lo[a] as f64, b.hi[a] as f64);
    }
    if n == 2 {
        out[2] = 0.0;
    }
    out
}

/// Negative Laplacian-of-Gaussian response at scale `sigma`.
pub fn log_response(image: &Image, sigma: f64) -> Image {
    let radius = (4.0 * sigma).ceil() as usize;
    let g = gaussian_kernel(sigma, radius);
    let s2 = sigma * sigma;
    let mut d2: Vec<f64> = g
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let t = i as f64 - radius as f64;
            w * (t * t - s2) / (s2 * s2)
        })
        .collect();
    // zero-mean second derivative so flat regions give no response
    let mean = d2.iter().sum::<f64>() / d2.len() as f64;
    for v in &mut d2 {
        *v -= mean;
    }
    let n = image.dim.n();
    let mut total = Image::zeros(image.dim, image.dims);
    for a in 0..n {
        let mut part = image.clone();
        for b in 0..n {
            part = if a == b { convolve_axis(&part, &d2, b, false) } else { convolve_axis(&part, &g, b, false) };
        }
        for (t, v) in total.data.iter_mut().zip(&part.data) {
            *t -= v;
        }
    }
    total
}

/// LoG blob detection with non-maximum suppression and Gaussian peak interpolation.
pub fn detect_log(image: &Image, cfg: &DetectionConfig) -> Result<Detections> {
    cfg.validate()?;
    let dim = image.dim;
    let n = dim.n();
    if image.is_empty() || !(image.max() > 0.0) {
        return Ok(Detections::finish(dim, 0, Vec::new()));
    }
    let response = log_response(image, cfg.p_size / 2f64.sqrt());
    let rmax = response.max();
    if !(rmax > 0.0) {
        return Ok(Detections::finish(dim, 0, Vec::new()));
    }
    let cut = cfg.intensity_threshold * rmax;
    let floor = LOG_FLOOR * rmax;
    let w = cfg.p_size.round().max(1.0) as isize;
    let dims = image.dims;
    let points: Vec<Point> = (0..response.len())
        .into_par_iter()
        .filter_map(|idx| {
            let v = response.data[idx];
            if !(v > cut) {
                return None;
            }
            let c = response.coords(idx);
            let zr = if n == 3 { w } else { 0 };
            for dz in -zr..=zr {
                for dy in -w..=w {
                    for dx in -w..=w {
                        let q = [c[0] as isize + dx, c[1] as isize + dy, c[2] as isize + dz];
                        if (0..3).any(|a| q[a] < 0 || q[a] >= dims[a] as isize) {
                            continue;
                        }
                        let j = response.index(q[0] as usize, q[1] as usize, q[2] as usize);
                        let u = response.data[j];
                        if u > v || (u == v && j < idx) {
                            return None;
                        }
                    }
                }
            }
            let mut p = [c[0] as f64, c[1] as f64, c[2] as f64];
            for a in 0..n {
                if c[a] == 0 || c[a] + 1 >= dims[a] {
                    return None;
                }
                let mut lo = c;
                let mut hi = c;
                lo[a] -= 1;
                hi[a] += 1;
                let lm = response.get(lo[0], lo[1], lo[2]).max(floor).ln();
                let l0 = v.max(floor).ln();
                let lp = response.get(hi[0], hi[1], hi[2]).max(floor).ln();
                let denom = lm - 2.0 * l0 + lp;
                let offset = if denom != 0.0 { 0.5 * (lm - lp) / denom } else { 0.0 };
                if !(offset.abs() <= 1.0) {
                    return None;
                }
                p[a] += offset;
            }
            Some(p)
        })
        .collect();
    Ok(Detections::finish(dim, 0, points))
}
