//! Global step of the ADMM loop.
//!
//! Scattered displacement samples are gridded onto a regular mesh, projected
//! onto a smooth field by solving `(I - (α/μ) Δ) û = u - θ` with homogeneous
//! Neumann boundaries, and read back at particle positions by multilinear
//! interpolation.

mod cg;

pub use cg::{pcg, CgStats};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::types::{Dim, Point};
use crate::{Error, Result};

/// Relative residual targeted by the screened-Poisson and inpainting solves.
pub const SOLVER_TOL: f64 = 1e-10;

/// Regular axis-aligned node lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: Dim,
    pub origin: Point,
    pub spacing: Point,
    /// Node counts per axis; the third is 1 for 2D grids.
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(dim: Dim, origin: Point, spacing: f64, dims: [usize; 3]) -> Self {
        let mut dims = dims;
        let mut sp = [spacing; 3];
        if dim == Dim::Two {
            dims[2] = 1;
            sp[2] = 1.0;
        }
        Self { dim, origin, spacing: sp, dims }
    }

    /// Smallest lattice with spacing `h` covering `points`, padded by one cell.
    pub fn covering(points: &[Point], dim: Dim, h: f64) -> Self {
        let n = dim.n();
        let mut lo = [0.0; 3];
        let mut dims = [1; 3];
        for a in 0..n {
            let (mn, mx) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), p| (mn.min(p[a]), mx.max(p[a])));
            let (mn, mx) = if mn.is_finite() { (mn, mx) } else { (0.0, 0.0) };
            lo[a] = mn - h;
            let cells = ((mx + h - lo[a]) / h).ceil() as usize;
            dims[a] = (cells + 1).max(2);
        }
        Self::new(dim, lo, h, dims)
    }

    pub fn node_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    pub fn node_coords(&self, idx: usize) -> [usize; 3] {
        let ix = idx % self.dims[0];
        let iy = (idx / self.dims[0]) % self.dims[1];
        let iz = idx / (self.dims[0] * self.dims[1]);
        [ix, iy, iz]
    }

    pub fn node_position(&self, idx: usize) -> Point {
        let c = self.node_coords(idx);
        let mut p = [0.0; 3];
        for a in 0..self.dim.n() {
            p[a] = self.origin[a] + c[a] as f64 * self.spacing[a];
        }
        p
    }

    pub fn node_positions(&self) -> Vec<Point> {
        (0..self.node_count()).map(|i| self.node_position(i)).collect()
    }

    /// Nearest node to `p`, clamped into the lattice.
    pub fn nearest_node(&self, p: &Point) -> usize {
        let mut c = [0usize; 3];
        for a in 0..self.dim.n() {
            let t = ((p[a] - self.origin[a]) / self.spacing[a]).round();
            c[a] = t.clamp(0.0, (self.dims[a] - 1) as f64) as usize;
        }
        self.index(c[0], c[1], c[2])
    }

    /// Axes with more than one node.
    fn active_axes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim.n()).filter(move |&a| self.dims[a] > 1)
    }

    fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.dims[0],
            _ => self.dims[0] * self.dims[1],
        }
    }
}

/// Vector field sampled on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub spec: GridSpec,
    pub values: Vec<Point>,
}

impl GridField {
    /// Adds the affine field `c + G x` at every node.
    pub fn add_affine(&mut self, c: &Point, g: &nalgebra::Matrix3<f64>) {
        for (i, v) in self.values.iter_mut().enumerate() {
            let x = self.spec.node_position(i);
            for a in 0..3 {
                v[a] += c[a] + (0..3).map(|b| g[(a, b)] * x[b]).sum::<f64>();
            }
        }
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self { values: vec![[0.0; 3]; spec.node_count()], spec }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(&Point) -> Point) -> Self {
        let values = (0..spec.node_count()).map(|i| f(&spec.node_position(i))).collect();
        Self { spec, values }
    }

    pub fn component(&self, a: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[a]).collect()
    }

    fn set_component(&mut self, a: usize, data: &[f64]) {
        for (v, d) in self.values.iter_mut().zip(data) {
            v[a] = *d;
        }
    }

    /// Nodewise `self - other`; both fields must share a grid.
    pub fn sub(&self, other: &GridField) -> GridField {
        debug_assert_eq!(self.spec, other.spec);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| crate::types::sub(a, b))
            .collect();
        GridField { spec: self.spec, values }
    }

    /// Largest nodewise Euclidean difference.
    pub fn max_diff(&self, other: &GridField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| crate::types::norm(&crate::types::sub(a, b)))
            .fold(0.0, f64::max)
    }

    /// Multilinear interpolation at `p`; points outside clamp to the boundary.
    pub fn interpolate(&self, p: &Point) -> Point {
        let spec = &self.spec;
        let n = spec.dim.n();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..n {
            if spec.dims[a] == 1 {
                continue;
            }
            let t = ((p[a] - spec.origin[a]) / spec.spacing[a]).clamp(0.0, (spec.dims[a] - 1) as f64);
            let mut i = t.floor() as usize;
            let mut f = t - i as f64;
            if i + 1 >= spec.dims[a] {
                i = spec.dims[a] - 2;
                f = 1.0;
            }
            base[a] = i;
            frac[a] = f;
        }
        let mut acc = [0.0; 3];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut c = [0usize; 3];
            for a in 0..n {
                let bit = (corner >> a) & 1;
                if spec.dims[a] == 1 {
                    if bit == 1 {
                        w = 0.0;
                    }
                    continue;
                }
                c[a] = base[a] + bit;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            let v = &self.values[spec.index(c[0], c[1], c[2])];
            for a in 0..3 {
                acc[a] += w * v[a];
            }
        }
        acc
    }

    /// Resamples this field onto another lattice.
    pub fn resample(&self, spec: GridSpec) -> GridField {
        if spec == self.spec {
            return self.clone();
        }
        GridField::from_fn(spec, |p| self.interpolate(p))
    }
}

/// Evaluates `field` at each point by multilinear interpolation.
pub fn grid_to_scatter(field: &GridField, points: &[Point]) -> Vec<Point> {
    points.par_iter().map(|p| field.interpolate(p)).collect()
}

/// Grids scattered samples: per-node averaging of the samples nearest to each
/// node, then harmonic inpainting of the remaining nodes.
pub fn scatter_to_grid(positions: &[Point], values: &[Point], spec: GridSpec) -> Result<GridField> {
    let (mut field, defined) = average_nearest(positions, values, spec)?;
    inpaint(&mut field, &defined)?;
    Ok(field)
}

/// Per-node means of the samples nearest to each node, zero elsewhere, and
/// the mask of nodes that received samples.
fn average_nearest(positions: &[Point], values: &[Point], spec: GridSpec) -> Result<(GridField, Vec<bool>)> {
    if positions.is_empty() {
        return Err(Error::NoSamples);
    }
    let nn = spec.node_count();
    let mut sum = vec![[0.0; 3]; nn];
    let mut count = vec![0usize; nn];
    for (p, v) in positions.iter().zip(values) {
        let i = spec.nearest_node(p);
        for a in 0..3 {
            sum[i][a] += v[a];
        }
        count[i] += 1;
    }
    let defined: Vec<bool> = count.iter().map(|&c| c > 0).collect();
    let mut field = GridField::zeros(spec);
    for i in 0..nn {
        if defined[i] {
            let c = count[i] as f64;
            field.values[i] = [sum[i][0] / c, sum[i][1] / c, sum[i][2] / c];
        }
    }
    Ok((field, defined))
}

/// Grids samples relative to a current estimate: the residuals `values - base`
/// are averaged onto the nodes nearest to samples and added back onto `base`.
/// Plain per-node averaging smears any displacement gradient across the cell
/// offset; residuals of a good estimate are nearly flat, so this removes that
/// bias (exactly for linear fields once `base` interpolates them).
///
/// Nodes without samples ignore `base`: they get the affine trend of the
/// samples plus the harmonic extension of the deviation from it, so stale
/// values in unobserved regions are not carried from one estimate to the next.
pub fn scatter_to_grid_relative(positions: &[Point], values: &[Point], base: &GridField) -> Result<GridField> {
    let spec = base.spec;
    let at = grid_to_scatter(base, positions);
    let residual: Vec<Point> = values.iter().zip(&at).map(|(v, b)| crate::types::sub(v, b)).collect();
    let (mut field, defined) = average_nearest(positions, &residual, spec)?;
    for ((v, b), &d) in field.values.iter_mut().zip(&base.values).zip(&defined) {
        if d {
            *v = crate::types::add(v, b);
        }
    }
    if defined.iter().all(|&d| d) {
        return Ok(field);
    }
    match fit_affine(positions, values, spec.dim) {
        Some((c, g)) => {
            let mut trend = GridField::zeros(spec);
            trend.add_affine(&c, &g);
            let mut dev = field.sub(&trend);
            inpaint(&mut dev, &defined)?;
            for (v, t) in dev.values.iter_mut().zip(&trend.values) {
                *v = crate::types::add(v, t);
            }
            Ok(dev)
        }
        None => {
            inpaint(&mut field, &defined)?;
            Ok(field)
        }
    }
}

/// Least-squares affine fit `u(x) ≈ c + G x` over the active axes; `None`
/// when the samples do not determine it.
pub fn fit_affine(positions: &[Point], values: &[Point], dim: Dim) -> Option<(Point, nalgebra::Matrix3<f64>)> {
    let n = dim.n();
    if positions.len() <= n {
        return None;
    }
    // centered for conditioning
    let mut mean = [0.0; 3];
    for p in positions {
        for a in 0..n {
            mean[a] += p[a] / positions.len() as f64;
        }
    }
    let rows = positions.len();
    let design = nalgebra::DMatrix::from_fn(rows, n + 1, |r, c| if c == 0 { 1.0 } else { positions[r][c - 1] - mean[c - 1] });
    let svd = design.svd(true, true);
    let mut c = [0.0; 3];
    let mut g = nalgebra::Matrix3::zeros();
    for a in 0..n {
        let rhs = nalgebra::DVector::from_fn(rows, |r, _| values[r][a]);
        let coef = svd.solve(&rhs, 1e-9).ok()?;
        let mut shift = coef[0];
        for b in 0..n {
            g[(a, b)] = coef[b + 1];
            shift -= coef[b + 1] * mean[b];
        }
        c[a] = shift;
    }
    if svd.singular_values.iter().any(|s| !s.is_finite()) || svd.rank(1e-9 * svd.singular_values.max()) < n + 1 {
        return None;
    }
    Some((c, g))
}

/// Fills undefined nodes with the discrete harmonic extension of the defined
/// ones: each filled node equals the mean of its lattice neighbors.
pub fn inpaint(field: &mut GridField, defined: &[bool]) -> Result<()> {
    let spec = field.spec;
    if defined.iter().all(|&d| d) {
        return Ok(());
    }
    if !defined.iter().any(|&d| d) {
        return Err(Error::NoSamples);
    }
    let nn = spec.node_count();
    let axes: Vec<usize> = spec.active_axes().collect();

    // Unknowns are the undefined nodes; couplings to defined nodes move to the rhs.
    let unknown: Vec<usize> = (0..nn).filter(|&i| !defined[i]).collect();
    let mut slot = vec![usize::MAX; nn];
    for (k, &i) in unknown.iter().enumerate() {
        slot[i] = k;
    }
    let nu = unknown.len();
    let mut degree = Vec::with_capacity(nu);
    let mut offsets = Vec::with_capacity(nu + 1);
    let mut free = Vec::new();
    let mut fixed_start = Vec::with_capacity(nu + 1);
    let mut fixed = Vec::new();
    offsets.push(0);
    fixed_start.push(0);
    for &i in &unknown {
        let c = spec.node_coords(i);
        let mut d = 0.0;
        for &a in &axes {
            let s = spec.stride(a);
            let lower = (c[a] > 0).then(|| i - s);
            let upper = (c[a] + 1 < spec.dims[a]).then(|| i + s);
            for j in [lower, upper].into_iter().flatten() {
                d += 1.0;
                if defined[j] {
                    fixed.push(j);
                } else {
                    free.push(slot[j]);
                }
            }
        }
        degree.push(d);
        offsets.push(free.len());
        fixed_start.push(fixed.len());
    }
    let apply = |x: &[f64], y: &mut [f64]| {
        for k in 0..nu {
            let mut acc = degree[k] * x[k];
            for &j in &free[offsets[k]..offsets[k + 1]] {
                acc -= x[j];
            }
            y[k] = acc;
        }
    };

    for a in 0..spec.dim.n() {
        let known = field.component(a);
        let b: Vec<f64> = (0..nu).map(|k| fixed[fixed_start[k]..fixed_start[k + 1]].iter().map(|&j| known[j]).sum()).collect();
        // start the unknowns from the mean of the data
        let (sum, count) = (0..nn).filter(|&i| defined[i]).fold((0.0, 0.0), |(s, c), i| (s + known[i], c + 1.0));
        let mut x = vec![sum / count; nu];
        pcg(apply, &degree, &b, &mut x, SOLVER_TOL, 10 * nn)
            .map_err(|s| Error::SolverDiverged { iterations: s.iterations, residual: s.relative_residual })?;
        for (k, &i) in unknown.iter().enumerate() {
            field.values[i][a] = x[k];
        }
    }
    Ok(())
}

/// Applies the symmetrized screened-Poisson operator `W (I - c Δ)` where `W`
/// halves boundary rows per axis so that mirrored-ghost Neumann rows become
/// symmetric.
fn screened_apply(spec: &GridSpec, c: f64, x: &[f64], y: &mut [f64]) {
    let axes: Vec<usize> = spec.active_axes().collect();
    y.par_iter_mut().enumerate().for_each(|(i, yi)| {
        let coords = spec.node_coords(i);
        let mut lap = 0.0;
        let mut w = 1.0;
        for &a in &axes {
            let s = spec.stride(a);
            let n = spec.dims[a];
            let h2 = spec.spacing[a] * spec.spacing[a];
            let (lo, hi) = if coords[a] == 0 {
                w *= 0.5;
                (x[i + s], x[i + s])
            } else if coords[a] == n - 1 {
                w *= 0.5;
                (x[i - s], x[i - s])
            } else {
                (x[i - s], x[i + s])
            };
            lap += (lo + hi - 2.0 * x[i]) / h2;
        }
        *yi = w * (x[i] - c * lap);
    });
}

fn boundary_weight(spec: &GridSpec, i: usize) -> f64 {
    let coords = spec.node_coords(i);
    spec.active_axes()
        .map(|a| if coords[a] == 0 || coords[a] == spec.dims[a] - 1 { 0.5 } else { 1.0 })
        .product()
}

/// Solves `(I - (α/μ) Δ) û = rhs` componentwise with homogeneous Neumann
/// boundaries (mirrored ghost nodes).
pub fn solve_global(rhs: &GridField, alpha_over_mu: f64) -> Result<GridField> {
    if !(alpha_over_mu >= 0.0) {
        return Err(Error::InvalidConfig(format!("alpha_over_mu must be >= 0, got {alpha_over_mu}")));
    }
    if alpha_over_mu == 0.0 {
        return Ok(rhs.clone());
    }
    let spec = rhs.spec;
    let nn = spec.node_count();
    let weights: Vec<f64> = (0..nn).map(|i| boundary_weight(&spec, i)).collect();
    let lap_diag: f64 = spec
        .active_axes()
        .map(|a| 2.0 / (spec.spacing[a] * spec.spacing[a]))
        .sum();
    let diag: Vec<f64> = weights.iter().map(|w| w * (1.0 + alpha_over_mu * lap_diag)).collect();
    let apply = |x: &[f64], y: &mut [f64]| screened_apply(&spec, alpha_over_mu, x, y);
    let solved: Vec<Result<Vec<f64>>> = (0..spec.dim.n())
        .into_par_iter()
        .map(|a| {
            let comp = rhs.component(a);
            let b: Vec<f64> = comp.iter().zip(&weights).map(|(v, w)| v * w).collect();
            let mut x = comp;
            pcg(apply, &diag, &b, &mut x, SOLVER_TOL, 10 * nn)
                .map_err(|s| Error::SolverDiverged { iterations: s.iterations, residual: s.relative_residual })?;
            Ok(x)
        })
        .collect();
    let mut out = GridField::zeros(spec);
    for (a, comp) in solved.into_iter().enumerate() {
        out.set_component(a, &comp?);
    }
    Ok(out)
}

/// Dual ascent: `θ' = θ + û - u`.
pub fn update_dual(theta: &GridField, u_hat: &GridField, u_grid: &GridField) -> GridField {
    let values = theta
        .values
        .iter()
        .zip(&u_hat.values)
        .zip(&u_grid.values)
        .map(|((t, h), u)| [t[0] + h[0] - u[0], t[1] + h[1] - u[1], t[2] + h[2] - u[2]])
        .collect();
    GridField { spec: theta.spec, values }
}

#[cfg(test)]
mod tests;
