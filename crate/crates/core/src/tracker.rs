//! The ADMM tracking loops for shape-rigid ("hard") and deformable ("soft") particles.
//!
//! Each iteration matches descriptors between the reference set, warped by
//! the current global field, and the deformed set (local step); grids the
//! matched displacements and smooths them (global step); optionally discards
//! ghost particles; and updates the scaled dual variable.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::descriptor::{build_all, match_particles, remove_outliers, resolve_conflicts, NeighborIndex, OutlierConfig};
use crate::detect::{detect, DetectionConfig};
use crate::globalstep::{fit_affine, grid_to_scatter, scatter_to_grid_relative, solve_global, update_dual, GridField, GridSpec};
use crate::types::{add, dist2, sub, Dim, Image, ParticleSet, Point};
use crate::{Error, Result};

/// Perfect-ratio iterations after which the loop stops.
const PERFECT_RATIO_EXIT: usize = 5;
/// Fewer re-detected particles than this aborts soft tracking.
const MIN_REDETECTED: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingMode {
    Incremental,
    Cumulative,
    DoubleFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rigidity {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub mode: TrackingMode,
    pub rigidity: Rigidity,
    /// Neighbor count of the first iteration.
    pub k_start: usize,
    /// Neighbor and candidate search radius in px; may be infinite.
    #[serde(serialize_with = "ser_radius", deserialize_with = "de_radius")]
    pub search_radius: f64,
    pub alpha_over_mu: f64,
    /// Max-norm change of the global field that counts as converged, px.
    pub eps_converge: f64,
    pub iter_max: usize,
    /// Ghost distance; defaults to half the mean nearest-neighbor spacing.
    pub eps_d: Option<f64>,
    pub ghost_removal: bool,
    pub detection: DetectionConfig,
    /// Grid spacing; defaults to `max(2, 0.5 · mean NN spacing)`.
    pub grid_spacing: Option<f64>,
    pub outlier: OutlierConfig,
    /// Segment join distance for trajectory merging; defaults to `eps_d`.
    pub join_tol: Option<f64>,
    /// After the first iteration candidates are sought within this many mean
    /// NN spacings of the warped position (capped by `search_radius`).
    pub refine_radius_factor: f64,
    /// Seed each pair with the previous pair's global field.
    pub use_predictor: bool,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            mode: TrackingMode::Incremental,
            rigidity: Rigidity::Hard,
            k_start: 25,
            search_radius: f64::INFINITY,
            alpha_over_mu: 1e-2,
            eps_converge: 1e-2,
            iter_max: 20,
            eps_d: None,
            ghost_removal: true,
            detection: DetectionConfig::default(),
            grid_spacing: None,
            outlier: OutlierConfig::default(),
            join_tol: None,
            refine_radius_factor: 2.0,
            use_predictor: true,
        }
    }
}

fn ser_radius<S: Serializer>(r: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if r.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*r)
    }
}

fn de_radius<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Radius {
        Num(f64),
        Text(String),
    }
    match Radius::deserialize(d)? {
        Radius::Num(v) => Ok(v),
        Radius::Text(t) if matches!(t.to_ascii_lowercase().as_str(), "inf" | "infinity") => Ok(f64::INFINITY),
        Radius::Text(t) => Err(serde::de::Error::custom(format!("invalid search radius {t:?}"))),
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k_start < 1 {
            return bad("k_start must be at least 1".into());
        }
        if !(self.search_radius > 0.0) {
            return bad(format!("search radius {} must be positive", self.search_radius));
        }
        if !(self.alpha_over_mu >= 0.0) || !self.alpha_over_mu.is_finite() {
            return bad(format!("alpha_over_mu {} must be finite and nonnegative", self.alpha_over_mu));
        }
        if !(self.eps_converge >= 0.0) {
            return bad("eps_converge must be nonnegative".into());
        }
        if self.iter_max < 1 {
            return bad("iter_max must be at least 1".into());
        }
        for (name, v) in [("eps_d", self.eps_d), ("grid_spacing", self.grid_spacing), ("join_tol", self.join_tol)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return bad(format!("{name} {v} must be finite and positive"));
                }
            }
        }
        if !(self.refine_radius_factor >= 0.0) {
            return bad("refine_radius_factor must be nonnegative".into());
        }
        self.detection.validate()
    }
}

/// Neighbor count for a given iteration: halves every two iterations, floor 1.
pub fn k_schedule(iteration: usize, k_start: usize) -> usize {
    let k = (k_start as f64 * 2f64.powf(-(iteration as f64) / 2.0)).round();
    (k as usize).max(1)
}

/// One tracked correspondence, indices into the caller's input sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedPair {
    pub a: usize,
    pub b: usize,
    pub pos_a: Point,
    pub pos_b: Point,
    /// Total displacement `pos_b - pos_a`.
    pub u: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub dim: Dim,
    pub matches: Vec<TrackedPair>,
    /// Size of the reference set handed to the tracker.
    pub reference_count: usize,
    /// Final kinematically compatible field.
    pub u_hat: GridField,
    pub theta: GridField,
    /// Gridded local displacements of the final iteration.
    pub u_grid: GridField,
    pub iterations: usize,
    pub match_ratio_history: Vec<f64>,
    pub converged: bool,
    pub ghosts_a: Vec<usize>,
    pub ghosts_b: Vec<usize>,
}

impl TrackResult {
    /// Tracked fraction of the reference set.
    pub fn tracking_ratio(&self) -> f64 {
        if self.reference_count == 0 {
            0.0
        } else {
            self.matches.len() as f64 / self.reference_count as f64
        }
    }

    pub fn reference_positions(&self) -> Vec<Point> {
        self.matches.iter().map(|m| m.pos_a).collect()
    }
}

/// Ghost test: a reference particle survives when some deformed particle lies
/// within `eps_d` of its warped position, and a deformed particle survives
/// when it lies within `eps_d` of some warped reference particle. Both
/// warps use the field evaluated at reference positions.
pub fn remove_ghosts(a: &[Point], b: &[Point], u_hat: &GridField, dim: Dim, eps_d: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let warped: Vec<Point> = a.iter().zip(grid_to_scatter(u_hat, a)).map(|(p, u)| add(p, &u)).collect();
    let (keep_a, keep_b) = ghost_flags(&warped, b, dim, eps_d);
    let ka: Vec<usize> = (0..a.len()).filter(|&i| keep_a[i]).collect();
    let kb: Vec<usize> = (0..b.len()).filter(|&i| keep_b[i]).collect();
    if ka.is_empty() {
        return Err(Error::EmptyAfterRemoval("reference"));
    }
    if kb.is_empty() {
        return Err(Error::EmptyAfterRemoval("deformed"));
    }
    Ok((ka, kb))
}

fn ghost_flags(warped: &[Point], b: &[Point], dim: Dim, eps_d: f64) -> (Vec<bool>, Vec<bool>) {
    let near = |set: &[Point], queries: &[Point]| -> Vec<bool> {
        if set.is_empty() {
            return vec![false; queries.len()];
        }
        let index = NeighborIndex::new(set, dim);
        queries
            .par_iter()
            .map(|q| index.nearest(q).is_some_and(|n| n.dist < eps_d))
            .collect()
    };
    (near(b, warped), near(warped, b))
}

/// Inverse warp: `out(x) = image(x + û(x))`, zero where the sample leaves the image footprint.
pub fn warp_image(image: &Image, u_hat: &GridField) -> Image {
    let mut out = Image::zeros(image.dim, image.dims);
    let n = image.dim.n();
    let dims = image.dims;
    out.data.par_iter_mut().enumerate().for_each(|(idx, v)| {
        let c = [idx % dims[0], (idx / dims[0]) % dims[1], idx / (dims[0] * dims[1])];
        let mut x = [c[0] as f64, c[1] as f64, 0.0];
        if n == 3 {
            x[2] = c[2] as f64;
        }
        let u = u_hat.interpolate(&x);
        *v = image.sample(&add(&x, &u));
    });
    out
}

/// Quantities derived once per tracking job.
struct Setup {
    dim: Dim,
    spec: GridSpec,
    eps_d: f64,
    refine_radius: f64,
}

fn setup(cfg: &TrackingConfig, a: &ParticleSet, cover: &[Point]) -> Result<Setup> {
    let spacing = a.mean_nn_spacing().filter(|s| *s > 0.0);
    let h = cfg.grid_spacing.unwrap_or_else(|| spacing.map_or(2.0, |s| (0.5 * s).max(2.0)));
    let eps_d = cfg.eps_d.unwrap_or_else(|| spacing.map_or(1.0, |s| 0.5 * s));
    let refine_radius = match spacing {
        Some(s) if cfg.refine_radius_factor > 0.0 => (cfg.refine_radius_factor * s).min(cfg.search_radius),
        _ => cfg.search_radius,
    };
    Ok(Setup { dim: a.dim, spec: GridSpec::covering(cover, a.dim, h), eps_d, refine_radius })
}

/// Mutable state of one ADMM run.
struct Admm {
    u_hat: GridField,
    theta: GridField,
    u_grid: GridField,
    alive_a: Vec<usize>,
    alive_b: Vec<usize>,
    ghosts_a: Vec<usize>,
    ghosts_b: Vec<usize>,
    history: Vec<f64>,
    perfect: usize,
    pairs: Vec<TrackedPair>,
}

/// Outcome of one local + global step.
enum Step {
    Continue,
    Converged,
}

impl Admm {
    fn new(setup: &Setup, predictor: Option<&GridField>, n_a: usize, n_b: usize) -> Self {
        let u_hat = match predictor {
            Some(p) => p.resample(setup.spec),
            None => GridField::zeros(setup.spec),
        };
        Self {
            u_hat,
            theta: GridField::zeros(setup.spec),
            u_grid: GridField::zeros(setup.spec),
            alive_a: (0..n_a).collect(),
            alive_b: (0..n_b).collect(),
            ghosts_a: Vec::new(),
            ghosts_b: Vec::new(),
            history: Vec::new(),
            perfect: 0,
            pairs: Vec::new(),
        }
    }

    /// Runs iteration `iter` with deformed positions `b` (all of them; only alive ones are used).
    fn step(&mut self, iter: usize, a: &[Point], b: &[Point], cfg: &TrackingConfig, setup: &Setup) -> Result<Step> {
        let dim = setup.dim;
        let k = k_schedule(iter, cfg.k_start);
        let a_ref: Vec<Point> = self.alive_a.iter().map(|&i| a[i]).collect();
        let a_warp: Vec<Point> = a_ref.iter().zip(grid_to_scatter(&self.u_hat, &a_ref)).map(|(p, u)| add(p, &u)).collect();
        let b_alive: Vec<Point> = self.alive_b.iter().map(|&i| b[i]).collect();

        let a_index = NeighborIndex::new(&a_warp, dim);
        let b_index = NeighborIndex::new(&b_alive, dim);
        let a_desc = build_all(&a_warp, &a_index, k, cfg.search_radius);
        let b_desc = build_all(&b_alive, &b_index, k, cfg.search_radius);
        let radius = if iter == 0 { cfg.search_radius } else { setup.refine_radius };
        let local = match_particles(&a_warp, &a_desc, &b_alive, &b_desc, &b_index, radius);
        let mut local = resolve_conflicts(&local, &a_warp, &b_alive);
        let ratio = local.match_ratio();
        self.history.push(ratio);
        // judge outliers on total displacement at reference positions
        for m in &mut local.matches {
            m.u = sub(&b_alive[m.b], &a_ref[m.a]);
        }
        let local = remove_outliers(&local, &a_ref, dim, &cfg.outlier);

        self.pairs = local
            .valid()
            .map(|m| {
                let (ia, ib) = (self.alive_a[m.a], self.alive_b[m.b]);
                TrackedPair { a: ia, b: ib, pos_a: a[ia], pos_b: b[ib], u: m.u }
            })
            .collect();

        let previous = self.u_hat.clone();
        if !self.pairs.is_empty() {
            let pos: Vec<Point> = self.pairs.iter().map(|p| p.pos_a).collect();
            let us: Vec<Point> = self.pairs.iter().map(|p| p.u).collect();
            // grid relative to the current field plus the affine trend of
            // what it misses, so cell offsets do not turn gradients into noise
            let mut base = self.u_hat.clone();
            let at = grid_to_scatter(&base, &pos);
            let resid: Vec<Point> = us.iter().zip(&at).map(|(u, b)| sub(u, b)).collect();
            if let Some((c, g)) = fit_affine(&pos, &resid, dim) {
                base.add_affine(&c, &g);
            }
            self.u_grid = scatter_to_grid_relative(&pos, &us, &base)?;
            let rhs = self.u_grid.sub(&self.theta);
            self.u_hat = solve_global(&rhs, cfg.alpha_over_mu)?;

            if cfg.ghost_removal && iter > 0 {
                self.drop_ghosts(a, b, setup);
            }
            self.theta = update_dual(&self.theta, &self.u_hat, &self.u_grid);
        }
        if ratio == 1.0 {
            self.perfect += 1;
        }
        let change = self.u_hat.max_diff(&previous);
        Ok(if change <= cfg.eps_converge { Step::Converged } else { Step::Continue })
    }

    /// Re-collects the non-ghost particles of both full sets under the
    /// current field, so a particle dropped while the field was still rough
    /// comes back once it fits.
    fn drop_ghosts(&mut self, a: &[Point], b: &[Point], setup: &Setup) {
        // an emptied set would end tracking; keep both sets for this iteration instead
        let Ok((ka, kb)) = remove_ghosts(a, b, &self.u_hat, setup.dim, setup.eps_d) else {
            return;
        };
        self.ghosts_a = complement(&ka, a.len());
        self.ghosts_b = complement(&kb, b.len());
        self.alive_a = ka;
        self.alive_b = kb;
    }

    fn finish(mut self, dim: Dim, reference_count: usize, iterations: usize, converged: bool) -> Result<TrackResult> {
        let mut alive_a = vec![false; reference_count];
        self.alive_a.iter().for_each(|&i| alive_a[i] = true);
        let alive_b: std::collections::HashSet<usize> = self.alive_b.iter().copied().collect();
        self.pairs.retain(|p| alive_a[p.a] && alive_b.contains(&p.b));
        if self.pairs.is_empty() {
            return Err(Error::NoMatches);
        }
        self.ghosts_a.sort_unstable();
        self.ghosts_b.sort_unstable();
        Ok(TrackResult {
            dim,
            matches: self.pairs,
            reference_count,
            u_hat: self.u_hat,
            theta: self.theta,
            u_grid: self.u_grid,
            iterations,
            match_ratio_history: self.history,
            converged,
            ghosts_a: self.ghosts_a,
            ghosts_b: self.ghosts_b,
        })
    }
}

/// Indices below `n` missing from the sorted list `keep`.
fn complement(keep: &[usize], n: usize) -> Vec<usize> {
    let mut flag = vec![true; n];
    keep.iter().for_each(|&i| flag[i] = false);
    (0..n).filter(|&i| flag[i]).collect()
}

fn check_sets(a: &ParticleSet, b: &ParticleSet) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::DimMismatch { expected: a.dim.n(), actual: b.dim.n() });
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::NoMatches);
    }
    Ok(())
}

/// Tracks shape-rigid particles from `a` to `b`.
///
/// With a predictor the reference positions are first warped forward by it,
/// so matching only has to resolve the residual motion; reported
/// displacements are always total.
pub fn track_hard(a: &ParticleSet, b: &ParticleSet, cfg: &TrackingConfig, predictor: Option<&GridField>) -> Result<TrackResult> {
    cfg.validate()?;
    check_sets(a, b)?;
    let cover: Vec<Point> = a.points.iter().chain(&b.points).copied().collect();
    let setup = setup(cfg, a, &cover)?;
    let mut state = Admm::new(&setup, predictor, a.len(), b.len());
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.iter_max && state.perfect < PERFECT_RATIO_EXIT {
        let step = state.step(iterations, &a.points, &b.points, cfg, &setup)?;
        iterations += 1;
        if matches!(step, Step::Converged) {
            converged = true;
            break;
        }
    }
    state.finish(setup.dim, a.len(), iterations, converged)
}

/// Tracks deformable particles between two images: the deformed image is
/// warped back by the current field and re-detected every iteration.
pub fn track_soft(image_a: &Image, image_b: &Image, cfg: &TrackingConfig, predictor: Option<&GridField>) -> Result<TrackResult> {
    let a = detect(image_a, &cfg.detection)?.particles;
    track_soft_from(&a, image_b, cfg, predictor)
}

/// Soft tracking with an already detected reference set.
pub fn track_soft_from(a: &ParticleSet, image_b: &Image, cfg: &TrackingConfig, predictor: Option<&GridField>) -> Result<TrackResult> {
    cfg.validate()?;
    if a.dim != image_b.dim {
        return Err(Error::DimMismatch { expected: a.dim.n(), actual: image_b.dim.n() });
    }
    if a.is_empty() {
        return Err(Error::NoMatches);
    }
    let mut cover = a.points.clone();
    let far: Vec<f64> = (0..3).map(|k| image_b.dims[k] as f64 - 1.0).collect();
    cover.push([0.0; 3]);
    cover.push([far[0], far[1], if a.dim == Dim::Three { far[2] } else { 0.0 }]);
    let setup = setup(cfg, a, &cover)?;
    let mut state = Admm::new(&setup, predictor, a.len(), 0);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.iter_max && state.perfect < PERFECT_RATIO_EXIT {
        let warped = warp_image(image_b, &state.u_hat);
        let found = detect(&warped, &cfg.detection)?.particles.points;
        if found.len() < MIN_REDETECTED {
            return Err(Error::DetectionCollapse(found.len()));
        }
        // map detections in the warped frame to the deformed configuration
        let b_points: Vec<Point> = found.iter().zip(grid_to_scatter(&state.u_hat, &found)).map(|(p, u)| add(p, &u)).collect();
        state.alive_b = (0..b_points.len()).collect();
        let step = state.step(iterations, &a.points, &b_points, cfg, &setup)?;
        iterations += 1;
        if matches!(step, Step::Converged) {
            converged = true;
            break;
        }
    }
    state.finish(setup.dim, a.len(), iterations, converged)
}

/// Brute-force ghost test used as a reference in tests.
pub fn ghost_flags_brute_force(a: &[Point], u_at_a: &[Point], b: &[Point], eps_d: f64) -> (Vec<bool>, Vec<bool>) {
    let warped: Vec<Point> = a.iter().zip(u_at_a).map(|(p, u)| add(p, u)).collect();
    let eps2 = eps_d * eps_d;
    let ka = warped.iter().map(|w| b.iter().any(|q| dist2(w, q) < eps2)).collect();
    let kb = b.iter().map(|q| warped.iter().any(|w| dist2(w, q) < eps2)).collect();
    (ka, kb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, extent: f64, seed: u64) -> ParticleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n).map(|_| [rng.random_range(0.0..extent), rng.random_range(0.0..extent), 0.0]).collect();
        ParticleSet::new(Dim::Two, 0, pts)
    }

    #[test]
    fn schedule_values() {
        assert_eq!(k_schedule(0, 25), 25);
        assert_eq!(k_schedule(2, 25), 13);
        assert_eq!(k_schedule(12, 25), 1);
        assert_eq!(k_schedule(40, 25), 1);
        let ks: Vec<usize> = (0..20).map(|i| k_schedule(i, 25)).collect();
        assert!(ks.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn ghosts_identity_and_far_point() {
        let a = random_set(60, 100.0, 1);
        let spec = GridSpec::covering(&a.points, Dim::Two, 5.0);
        let zero = GridField::zeros(spec);
        let (ka, kb) = remove_ghosts(&a.points, &a.points, &zero, Dim::Two, 1.0).unwrap();
        assert_eq!(ka.len(), 60);
        assert_eq!(kb.len(), 60);

        let mut b = a.points.clone();
        b.push([500.0, 500.0, 0.0]);
        let (ka, kb) = remove_ghosts(&a.points, &b, &zero, Dim::Two, 1.0).unwrap();
        assert_eq!(ka.len(), 60);
        assert_eq!(kb, (0..60).collect::<Vec<_>>());
    }

    #[test]
    fn ghosts_constant_shift() {
        let a = random_set(50, 100.0, 2);
        let b: Vec<Point> = a.points.iter().map(|p| [p[0] + 3.0, p[1], 0.0]).collect();
        let spec = GridSpec::covering(&a.points, Dim::Two, 5.0);
        let shift = GridField::from_fn(spec, |_| [3.0, 0.0, 0.0]);
        let (ka, kb) = remove_ghosts(&a.points, &b, &shift, Dim::Two, 0.5).unwrap();
        assert_eq!((ka.len(), kb.len()), (50, 50));
    }

    #[test]
    fn ghosts_match_brute_force() {
        for seed in 0..20 {
            let a = random_set(80, 60.0, seed);
            let b = random_set(90, 60.0, seed + 100);
            let spec = GridSpec::covering(&a.points, Dim::Two, 4.0);
            let field = GridField::from_fn(spec, |p| [0.02 * p[1], -0.01 * p[0], 0.0]);
            let u = grid_to_scatter(&field, &a.points);
            let (fa, fb) = ghost_flags_brute_force(&a.points, &u, &b.points, 2.5);
            let want_a: Vec<usize> = (0..80).filter(|&i| fa[i]).collect();
            let want_b: Vec<usize> = (0..90).filter(|&i| fb[i]).collect();
            match remove_ghosts(&a.points, &b.points, &field, Dim::Two, 2.5) {
                Ok((ka, kb)) => assert_eq!((ka, kb), (want_a, want_b)),
                Err(_) => assert!(want_a.is_empty() || want_b.is_empty()),
            }
        }
    }

    #[test]
    fn zero_motion_converges() {
        let a = random_set(300, 200.0, 3);
        let res = track_hard(&a, &a, &TrackingConfig::default(), None).unwrap();
        assert_eq!(res.matches.len(), 300);
        assert_eq!(res.match_ratio_history[0], 1.0);
        assert!(res.matches.iter().all(|m| m.a == m.b && m.u == [0.0; 3]));
        assert!(res.u_hat.values.iter().all(|v| v.iter().all(|c| c.abs() <= 1e-6)));
        assert!(res.converged);
    }

    #[test]
    fn translation_is_recovered() {
        let a = random_set(400, 200.0, 4);
        let b = ParticleSet::new(Dim::Two, 1, a.points.iter().map(|p| [p[0] + 3.7, p[1] - 1.2, 0.0]).collect());
        let res = track_hard(&a, &b, &TrackingConfig::default(), None).unwrap();
        assert!(res.tracking_ratio() >= 0.99, "{}", res.tracking_ratio());
        assert!(res.matches.iter().all(|m| m.a == m.b));
        let target = [3.7, -1.2, 0.0];
        let dev = res.u_hat.values.iter().map(|v| dist2(v, &target).sqrt()).fold(0.0, f64::max);
        assert!(dev <= 1e-3, "max deviation {dev}");
        assert!(res.iterations <= 20);
    }

    #[test]
    fn warp_identity_and_integer_shift() {
        let mut img = Image::zeros(Dim::Two, [20, 12, 1]);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let spec = GridSpec::covering(&[[0.0; 3], [19.0, 11.0, 0.0]], Dim::Two, 2.0);
        assert_eq!(warp_image(&img, &GridField::zeros(spec)), img);
        let shifted = warp_image(&img, &GridField::from_fn(spec, |_| [-2.0, 0.0, 0.0]));
        for y in 0..12 {
            for x in 2..20 {
                assert!((shifted.get(x, y, 0) - img.get(x - 2, y, 0)).abs() <= 1e-12);
            }
            assert_eq!(shifted.get(0, y, 0), 0.0);
        }
    }

    #[test]
    fn config_rejects_bad_values() {
        let cfg = TrackingConfig { eps_d: Some(-1.0), ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrackingConfig { k_start: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrackingConfig { iter_max: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn search_radius_round_trips() {
        let json = serde_json::to_string(&TrackingConfig::default()).unwrap();
        assert!(json.contains("\"search_radius\":\"inf\""));
        let back: TrackingConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, TrackingConfig::default());
        let cfg: TrackingConfig = serde_json::from_str(r#"{"search_radius": 50}"#).unwrap();
        assert_eq!(cfg.search_radius, 50.0);
        assert!(serde_json::from_str::<TrackingConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
