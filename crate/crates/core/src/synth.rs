//! Synthetic ground truth: seeding, prescribed deformations and Gaussian-PSF rendering.

use std::f64::consts::{PI, TAU};

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::types::{normalize_dims, Dim, Image, ParticleSet, Point};
use crate::{Error, Result};

/// Gaussian kernels are truncated at this many standard deviations.
const KERNEL_CUTOFF: f64 = 7.0;
/// Fraction of the densest packing a seeding request may occupy.
const MAX_PACKING_FRACTION: f64 = 0.4;
const ATTEMPTS_PER_PARTICLE: usize = 30;
const TOTAL_ATTEMPT_FACTOR: usize = 100;

/// Prescribed displacement fields. Angles are in degrees, centers in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeformationSpec {
    Translation {
        shift: Point,
    },
    /// Rigid rotation about the z axis.
    Rotation {
        degrees: f64,
        center: Point,
    },
    UniaxialStretch {
        axis: usize,
        ratio: f64,
        center: Point,
    },
    /// `u[displaced] = tan_gamma * (x[gradient] - center[gradient])`.
    SimpleShear {
        displaced: usize,
        gradient: usize,
        tan_gamma: f64,
        center: Point,
    },
    /// Vertical sine wave whose period grows linearly with `x`:
    /// `period(x) = period_start + (period_end - period_start) / span * (x - 1)`.
    StarPattern {
        amplitude: f64,
        period_start: f64,
        period_end: f64,
        span: f64,
    },
}

impl DeformationSpec {
    pub fn star(amplitude: f64) -> Self {
        DeformationSpec::StarPattern { amplitude, period_start: 10.0, period_end: 300.0, span: 4001.0 }
    }

    pub fn validate(&self, dim: Dim) -> Result<()> {
        let n = dim.n();
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match *self {
            DeformationSpec::Translation { shift } => {
                if dim == Dim::Two && shift[2] != 0.0 {
                    return Err(Error::DimMismatch { expected: 2, actual: 3 });
                }
                if shift.iter().any(|s| !s.is_finite()) {
                    return bad("translation must be finite".into());
                }
            }
            DeformationSpec::Rotation { degrees, .. } => {
                if !(0.0..360.0).contains(&degrees) {
                    return bad(format!("rotation angle {degrees} outside [0, 360)"));
                }
            }
            DeformationSpec::UniaxialStretch { axis, ratio, .. } => {
                if axis >= n {
                    return Err(Error::DimMismatch { expected: n, actual: axis + 1 });
                }
                if !(ratio > 0.0) {
                    return bad(format!("stretch ratio {ratio} must be positive"));
                }
            }
            DeformationSpec::SimpleShear { displaced, gradient, tan_gamma, .. } => {
                if displaced >= n || gradient >= n {
                    return Err(Error::DimMismatch { expected: n, actual: displaced.max(gradient) + 1 });
                }
                if displaced == gradient {
                    return bad("shear needs two distinct axes".into());
                }
                if !(tan_gamma >= 0.0) {
                    return bad(format!("tan(gamma) {tan_gamma} must be nonnegative"));
                }
            }
            DeformationSpec::StarPattern { period_start, period_end, span, .. } => {
                if dim != Dim::Two {
                    return Err(Error::DimMismatch { expected: 2, actual: n });
                }
                if !(period_start > 0.0 && period_end > 0.0 && span > 0.0) {
                    return bad("star-pattern periods and span must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Displacement at reference position `p`.
    pub fn displacement(&self, p: &Point) -> Point {
        match *self {
            DeformationSpec::Translation { shift } => shift,
            DeformationSpec::Rotation { degrees, center } => {
                let (s, c) = degrees.to_radians().sin_cos();
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                [c * dx - s * dy - dx, s * dx + c * dy - dy, 0.0]
            }
            DeformationSpec::UniaxialStretch { axis, ratio, center } => {
                let mut u = [0.0; 3];
                u[axis] = (ratio - 1.0) * (p[axis] - center[axis]);
                u
            }
            DeformationSpec::SimpleShear { displaced, gradient, tan_gamma, center } => {
                let mut u = [0.0; 3];
                u[displaced] = tan_gamma * (p[gradient] - center[gradient]);
                u
            }
            DeformationSpec::StarPattern { amplitude, .. } => {
                [0.0, amplitude * (TAU * p[0] / self.star_period(p[0])).sin(), 0.0]
            }
        }
    }

    /// Displacement gradient `∂u_i/∂x_j` at `p` (the deformation gradient is `I + ∇u`).
    pub fn gradient(&self, p: &Point) -> Matrix3<f64> {
        let mut g = Matrix3::zeros();
        match *self {
            DeformationSpec::Translation { .. } => {}
            DeformationSpec::Rotation { degrees, .. } => {
                let (s, c) = degrees.to_radians().sin_cos();
                g[(0, 0)] = c - 1.0;
                g[(0, 1)] = -s;
                g[(1, 0)] = s;
                g[(1, 1)] = c - 1.0;
            }
            DeformationSpec::UniaxialStretch { axis, ratio, .. } => g[(axis, axis)] = ratio - 1.0,
            DeformationSpec::SimpleShear { displaced, gradient, tan_gamma, .. } => g[(displaced, gradient)] = tan_gamma,
            DeformationSpec::StarPattern { amplitude, period_start, period_end, span } => {
                let slope = (period_end - period_start) / span;
                let period = self.star_period(p[0]);
                let phase = TAU * p[0] / period;
                let dphase = TAU * (period - p[0] * slope) / (period * period);
                g[(1, 0)] = amplitude * phase.cos() * dphase;
            }
        }
        g
    }

    /// Local period of the star pattern at `x` (NaN for other kinds).
    pub fn star_period(&self, x: f64) -> f64 {
        match *self {
            DeformationSpec::StarPattern { period_start, period_end, span, .. } => {
                period_start + (period_end - period_start) / span * (x - 1.0)
            }
            _ => f64::NAN,
        }
    }
}

/// Parameters of a rendered synthetic image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthImageSpec {
    pub dims: Vec<usize>,
    /// Particles per pixel (2D) or voxel (3D).
    pub seeding_density: f64,
    #[serde(default = "one")]
    pub psf_amplitude: f64,
    #[serde(default = "one")]
    pub psf_sigma: f64,
    /// Noise standard deviation as a fraction of the amplitude.
    #[serde(default)]
    pub noise_pct: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// Minimum center spacing; defaults to the nominal particle diameter.
    #[serde(default = "default_min_dist")]
    pub min_dist: f64,
    /// Optional `[lo, hi]` clamp applied after noise.
    #[serde(default)]
    pub clamp: Option<[f64; 2]>,
}

fn one() -> f64 {
    1.0
}

fn default_min_dist() -> f64 {
    5.0
}

impl SynthImageSpec {
    pub fn new(dims: &[usize], seeding_density: f64) -> Self {
        Self {
            dims: dims.to_vec(),
            seeding_density,
            psf_amplitude: 1.0,
            psf_sigma: 1.0,
            noise_pct: 0.0,
            rng_seed: 0,
            min_dist: default_min_dist(),
            clamp: None,
        }
    }

    pub fn dim(&self) -> Result<Dim> {
        Dim::from_n(self.dims.len())
    }

    pub fn extent(&self) -> Result<[usize; 3]> {
        let dim = self.dim()?;
        let mut d = [1; 3];
        d[..self.dims.len()].copy_from_slice(&self.dims);
        Ok(normalize_dims(dim, d))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        self.dim()?;
        if self.dims.contains(&0) {
            return bad("image extents must be positive");
        }
        if !(self.seeding_density > 0.0) {
            return bad("seeding density must be positive");
        }
        if !(self.psf_sigma > 0.0) {
            return bad("psf sigma must be positive");
        }
        if !(self.noise_pct >= 0.0) {
            return bad("noise fraction must be nonnegative");
        }
        if !(self.min_dist >= 0.0) {
            return bad("minimum distance must be nonnegative");
        }
        Ok(())
    }
}

/// Seeds `round(density · volume)` particles over the image `dims`, at least
/// `min_dist` apart and `min_dist / 2` away from the image edges.
pub fn poisson_disc_sample(dims: &[usize], min_dist: f64, density: f64, seed: u64) -> Result<ParticleSet> {
    let dim = Dim::from_n(dims.len())?;
    let volume: f64 = dims.iter().map(|&n| n as f64).product();
    let count = (density * volume).round() as usize;
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for (a, &n) in dims.iter().enumerate() {
        lo[a] = -0.5 + min_dist / 2.0;
        hi[a] = n as f64 - 0.5 - min_dist / 2.0;
    }
    poisson_disc_in_box(dim, lo, hi, count, min_dist, seed)
}

/// Dart throwing of `count` points in the box `[lo, hi]` with a background grid.
pub fn poisson_disc_in_box(dim: Dim, lo: Point, hi: Point, count: usize, min_dist: f64, seed: u64) -> Result<ParticleSet> {
    let n = dim.n();
    let mut volume = 1.0;
    for a in 0..n {
        let side = hi[a] - lo[a];
        if !(side >= 0.0) {
            return Err(Error::InfeasibleDensity(format!("sampling box has negative extent on axis {a}")));
        }
        volume *= side;
    }
    if count == 0 {
        return Ok(ParticleSet::new(dim, 0, Vec::new()));
    }
    if min_dist > 0.0 {
        let densest = match dim {
            Dim::Two => 2.0 / (3f64.sqrt() * min_dist * min_dist),
            Dim::Three => 2f64.sqrt() / min_dist.powi(3),
        };
        let fraction = count as f64 / (volume * densest);
        if !(fraction <= MAX_PACKING_FRACTION) {
            return Err(Error::InfeasibleDensity(format!(
                "{count} particles at spacing {min_dist} fill {fraction:.2} of the densest packing"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = if min_dist > 0.0 { min_dist / (n as f64).sqrt() } else { f64::INFINITY };
    let mut cells = [1usize; 3];
    if cell.is_finite() {
        for a in 0..n {
            cells[a] = (((hi[a] - lo[a]) / cell).floor() as usize + 1).max(1);
        }
    }
    let mut grid: Vec<Vec<u32>> = vec![Vec::new(); cells[0] * cells[1] * cells[2]];
    let cell_of = |p: &Point| -> [usize; 3] {
        let mut c = [0usize; 3];
        if cell.is_finite() {
            for a in 0..n {
                c[a] = (((p[a] - lo[a]) / cell).floor().max(0.0) as usize).min(cells[a] - 1);
            }
        }
        c
    };
    let reach = if cell.is_finite() { (min_dist / cell).ceil() as usize } else { 0 };
    let min2 = min_dist * min_dist;

    let mut points: Vec<Point> = Vec::with_capacity(count);
    let budget = TOTAL_ATTEMPT_FACTOR * count;
    let mut attempts = 0usize;
    while points.len() < count {
        let mut placed = false;
        for _ in 0..ATTEMPTS_PER_PARTICLE {
            if attempts >= budget {
                break;
            }
            attempts += 1;
            let mut p = [0.0; 3];
            for a in 0..n {
                p[a] = if hi[a] > lo[a] { rng.random_range(lo[a]..hi[a]) } else { lo[a] };
            }
            let c = cell_of(&p);
            let mut ok = true;
            'scan: for z in c[2].saturating_sub(reach)..=(c[2] + reach).min(cells[2] - 1) {
                for y in c[1].saturating_sub(reach)..=(c[1] + reach).min(cells[1] - 1) {
                    for x in c[0].saturating_sub(reach)..=(c[0] + reach).min(cells[0] - 1) {
                        for &q in &grid[x + cells[0] * (y + cells[1] * z)] {
                            if crate::types::dist2(&p, &points[q as usize]) < min2 {
                                ok = false;
                                break 'scan;
                            }
                        }
                    }
                }
            }
            if ok {
                grid[c[0] + cells[0] * (c[1] + cells[1] * c[2])].push(points.len() as u32);
                points.push(p);
                placed = true;
                break;
            }
        }
        if !placed && attempts >= budget {
            return Err(Error::InfeasibleDensity(format!(
                "placed {} of {count} particles within the attempt budget",
                points.len()
            )));
        }
    }
    Ok(ParticleSet::new(dim, 0, points))
}

/// Deformed particle positions together with in-frame flags.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformedSet {
    pub particles: ParticleSet,
    /// False when the deformed center lies outside the image extent.
    pub in_frame: Vec<bool>,
}

/// Maps each particle to `x + u(x)`; particles leaving `dims` are kept but flagged.
pub fn apply_deformation(particles: &ParticleSet, spec: &DeformationSpec, dims: &[usize]) -> Result<DeformedSet> {
    spec.validate(particles.dim)?;
    if dims.len() != particles.dim.n() {
        return Err(Error::DimMismatch { expected: particles.dim.n(), actual: dims.len() });
    }
    let points: Vec<Point> = particles
        .points
        .iter()
        .map(|p| crate::types::add(p, &spec.displacement(p)))
        .collect();
    let in_frame = points.iter().map(|p| inside_frame(p, dims)).collect();
    Ok(DeformedSet { particles: ParticleSet::new(particles.dim, particles.frame, points), in_frame })
}

/// Whether a point lies within the pixel footprint of an image of extent `dims`.
pub fn inside_frame(p: &Point, dims: &[usize]) -> bool {
    dims.iter().enumerate().all(|(a, &n)| p[a] >= -0.5 && p[a] < n as f64 - 0.5)
}

/// Renders isotropic Gaussian particles plus optional noise.
pub fn render_image(particles: &ParticleSet, spec: &SynthImageSpec) -> Result<Image> {
    render_shaped(particles, spec, |_| None)
}

/// Renders particles whose PSF is distorted by a per-particle deformation
/// gradient `F` (covariance `σ² F Fᵀ`); `None` keeps the isotropic kernel.
pub fn render_shaped(
    particles: &ParticleSet,
    spec: &SynthImageSpec,
    shape: impl Fn(usize) -> Option<Matrix3<f64>>,
) -> Result<Image> {
    spec.validate()?;
    let dim = spec.dim()?;
    if dim != particles.dim {
        return Err(Error::DimMismatch { expected: dim.n(), actual: particles.dim.n() });
    }
    let mut img = Image::zeros(dim, spec.extent()?);
    let sigma = spec.psf_sigma;
    for (i, p) in particles.points.iter().enumerate() {
        match shape(i) {
            None => splat(&mut img, p, spec.psf_amplitude, &isotropic_precision(dim, sigma), [KERNEL_CUTOFF * sigma; 3]),
            Some(f) => {
                let f = embed(dim, f);
                let cov = f * f.transpose() * (sigma * sigma);
                let precision = cov
                    .try_inverse()
                    .ok_or_else(|| Error::InvalidConfig(format!("singular particle shape at particle {i}")))?;
                let mut half = [0.0; 3];
                for a in 0..dim.n() {
                    half[a] = KERNEL_CUTOFF * cov[(a, a)].sqrt();
                }
                splat(&mut img, p, spec.psf_amplitude, &precision, half);
            }
        }
    }
    add_noise(&mut img, spec.noise_pct * spec.psf_amplitude, spec.rng_seed);
    if let Some([lo, hi]) = spec.clamp {
        for v in &mut img.data {
            *v = v.clamp(lo, hi);
        }
    }
    Ok(img)
}

fn isotropic_precision(dim: Dim, sigma: f64) -> Matrix3<f64> {
    embed(dim, Matrix3::identity() / (sigma * sigma))
}

/// Zeroes the out-of-plane row and column for 2D data.
fn embed(dim: Dim, mut m: Matrix3<f64>) -> Matrix3<f64> {
    if dim == Dim::Two {
        for k in 0..3 {
            m[(2, k)] = 0.0;
            m[(k, 2)] = 0.0;
        }
        m[(2, 2)] = 1.0;
    }
    m
}

fn splat(img: &mut Image, p: &Point, amplitude: f64, precision: &Matrix3<f64>, half: [f64; 3]) {
    let n = img.dim.n();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..n {
        let l = (p[a] - half[a]).ceil().max(0.0);
        let h = (p[a] + half[a]).floor().min(img.dims[a] as f64 - 1.0);
        if l > h {
            return;
        }
        lo[a] = l as usize;
        hi[a] = h as usize;
    }
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let d = [x as f64 - p[0], y as f64 - p[1], if n == 3 { z as f64 - p[2] } else { 0.0 }];
                let mut q = 0.0;
                for r in 0..n {
                    for c in 0..n {
                        q += d[r] * precision[(r, c)] * d[c];
                    }
                }
                let idx = img.index(x, y, z);
                img.data[idx] += amplitude * (-0.5 * q).exp();
            }
        }
    }
}

/// Additive white Gaussian noise drawn pixel by pixel in storage order.
fn add_noise(img: &mut Image, std: f64, seed: u64) {
    if std <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, std).expect("finite positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for v in &mut img.data {
        *v += normal.sample(&mut rng);
    }
}

/// Area (2D) or volume (3D) of a ball of radius `r`.
pub fn ball_volume(dim: Dim, r: f64) -> f64 {
    match dim {
        Dim::Two => PI * r * r,
        Dim::Three => 4.0 / 3.0 * PI * r.powi(3),
    }
}
