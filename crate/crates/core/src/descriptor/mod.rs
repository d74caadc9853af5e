//! Topology descriptors and local feature matching.
//!
//! Each particle is described by its `k` nearest neighbors: distances
//! normalized by the first-neighbor distance, plus angles measured in a
//! frame attached to the neighbor cloud itself. In 2D the angles are taken
//! relative to the first-neighbor direction; in 3D a right-handed frame
//! `{e1, e2, e3}` is built from the first three neighbors. Both choices
//! make the descriptor invariant to rotation and uniform scaling.

mod index;
mod matching;
mod outliers;

pub use index::{Neighbor, NeighborIndex};
pub use matching::{match_particles, resolve_conflicts, FeatureDistances, Match, MatchSet, SCORE_TIE};
pub use outliers::{remove_outliers, OutlierConfig};

use std::f64::consts::TAU;

use rayon::prelude::*;

use crate::types::{cross, dot, norm, scale, sub, Dim, Point};
use crate::{Error, Result};

/// Tolerance below which two neighbor directions count as parallel.
const PARALLEL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    /// Neighbor distances divided by the first-neighbor distance; `radial[0] == 1`.
    pub radial: Vec<f64>,
    /// 2D: angle relative to the first-neighbor direction in `[0, 2π)`.
    /// 3D: polar angle from `e3` in `[0, π]`.
    pub angle: Vec<f64>,
    /// 3D only: azimuth about `e3` measured from `e1`, in `[0, 2π)`. Empty in 2D.
    pub azimuth: Vec<f64>,
}

impl Descriptor {
    pub fn len(&self) -> usize {
        self.radial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radial.is_empty()
    }
}

/// Orthonormal frame attached to a 3D neighbor cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub e1: Point,
    pub e2: Point,
    pub e3: Point,
}

/// Builds the right-handed frame from neighbor offsets sorted by distance.
///
/// `e1` follows the first neighbor and `e3` is normal to the plane of the
/// first neighbor and the next non-parallel one, oriented so that the
/// following neighbor has a positive `e3` component.
pub fn local_frame(offsets: &[Point]) -> Option<LocalFrame> {
    let first = offsets.first()?;
    let r1 = norm(first);
    if r1 == 0.0 {
        return None;
    }
    let e1 = scale(first, 1.0 / r1);
    for j in 1..offsets.len() {
        let c = cross(&e1, &offsets[j]);
        let cn = norm(&c);
        if cn <= PARALLEL_TOL * norm(&offsets[j]) {
            continue;
        }
        let normal = scale(&c, 1.0 / cn);
        for r3 in &offsets[j + 1..] {
            let s = dot(&normal, r3);
            if s.abs() <= PARALLEL_TOL * norm(r3) {
                continue;
            }
            let e3 = if s > 0.0 { normal } else { scale(&normal, -1.0) };
            let e2 = cross(&e3, &e1);
            return Some(LocalFrame { e1, e2, e3 });
        }
        return None;
    }
    None
}

/// Descriptor of particle `p` from at most `k` neighbors within `search_radius`.
pub fn build_descriptor(p: usize, points: &[Point], index: &NeighborIndex, k: usize, search_radius: f64) -> Result<Descriptor> {
    let center = points[p];
    let dim = index.dim();
    // 3D needs spare neighbors for the frame and its degenerate fallback.
    let wanted = match dim {
        Dim::Two => k.max(1),
        Dim::Three => k.max(3) + 2,
    };
    let neighbors = index.knn_within(&center, wanted, search_radius, Some(p));
    let min_needed = match dim {
        Dim::Two => 1,
        Dim::Three => 3,
    };
    if neighbors.len() < min_needed || neighbors[0].dist == 0.0 {
        return Err(Error::TooFewNeighbors(p));
    }
    let offsets: Vec<Point> = neighbors.iter().map(|n| sub(index.point(n.index), &center)).collect();
    let m = k.max(1).min(offsets.len());
    let r1 = neighbors[0].dist;
    let mut radial = Vec::with_capacity(m);
    radial.push(1.0);
    radial.extend(neighbors[1..m].iter().map(|n| n.dist / r1));

    match dim {
        Dim::Two => {
            let v1 = offsets[0];
            let angle = offsets[..m]
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    if i == 0 {
                        return 0.0;
                    }
                    let c = v1[0] * v[1] - v1[1] * v[0];
                    let d = v1[0] * v[0] + v1[1] * v[1];
                    wrap_angle(c.atan2(d))
                })
                .collect();
            Ok(Descriptor { radial, angle, azimuth: Vec::new() })
        }
        Dim::Three => {
            let frame = local_frame(&offsets).ok_or(Error::TooFewNeighbors(p))?;
            let mut angle = Vec::with_capacity(m);
            let mut azimuth = Vec::with_capacity(m);
            for v in &offsets[..m] {
                let x = dot(v, &frame.e1);
                let y = dot(v, &frame.e2);
                let z = dot(v, &frame.e3);
                angle.push(x.hypot(y).atan2(z));
                azimuth.push(wrap_angle(y.atan2(x)));
            }
            Ok(Descriptor { radial, angle, azimuth })
        }
    }
}

/// Descriptors for every point; particles without enough neighbors get `None`.
pub fn build_all(points: &[Point], index: &NeighborIndex, k: usize, search_radius: f64) -> Vec<Option<Descriptor>> {
    (0..points.len())
        .into_par_iter()
        .map(|p| build_descriptor(p, points, index, k, search_radius).ok())
        .collect()
}

/// Maps an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Circular distance between two angles.
pub fn circular_diff(a: f64, b: f64) -> f64 {
    let mut d = (a - b).abs();
    // wrapped inputs never need the (slow) remainder
    if d >= TAU {
        d = d.rem_euclid(TAU);
    }
    d.min(TAU - d)
}
