use serde::{Deserialize, Serialize};

use super::{MatchSet, NeighborIndex};
use crate::types::{norm, sub, Dim, Point};

/// Parameters of the normalized median test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierConfig {
    pub threshold: f64,
    /// Noise floor added to the median residual, px.
    pub epsilon: f64,
    /// Neighbors per test; `None` means 8 in 2D and 26 in 3D.
    pub neighborhood: Option<usize>,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self { threshold: 4.0, epsilon: 0.1, neighborhood: None }
    }
}

impl OutlierConfig {
    pub fn neighborhood_for(&self, dim: Dim) -> usize {
        self.neighborhood.unwrap_or(match dim {
            Dim::Two => 8,
            Dim::Three => 26,
        })
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One pass of the normalized median test over valid samples.
///
/// `positions[m.a]` is the location of each sample. Every sample is judged
/// against the validity state on entry, so the result does not depend on
/// evaluation order.
pub fn remove_outliers(matches: &MatchSet, positions: &[Point], dim: Dim, cfg: &OutlierConfig) -> MatchSet {
    let nbhd = cfg.neighborhood_for(dim);
    let valid: Vec<usize> = (0..matches.matches.len()).filter(|&i| matches.matches[i].valid).collect();
    if valid.len() < nbhd + 1 {
        return matches.clone();
    }
    let pts: Vec<Point> = valid.iter().map(|&i| positions[matches.matches[i].a]).collect();
    let index = NeighborIndex::new(&pts, dim);
    let n = dim.n();
    let mut out = matches.clone();
    for (slot, &mi) in valid.iter().enumerate() {
        let neighbors = index.knn(&pts[slot], nbhd, Some(slot));
        let us: Vec<Point> = neighbors.iter().map(|nb| matches.matches[valid[nb.index]].u).collect();
        let mut med = [0.0; 3];
        for (a, m) in med.iter_mut().enumerate().take(n) {
            let mut comp: Vec<f64> = us.iter().map(|u| u[a]).collect();
            *m = median(&mut comp);
        }
        let mut resid: Vec<f64> = us.iter().map(|u| norm(&sub(u, &med))).collect();
        let scale = median(&mut resid) + cfg.epsilon;
        let r = norm(&sub(&matches.matches[mi].u, &med)) / scale;
        if r > cfg.threshold {
            out.matches[mi].valid = false;
        }
    }
    out
}
