use std::cmp::Ordering;

use rayon::prelude::*;

use super::{circular_diff, Descriptor, NeighborIndex};
use crate::types::{dist2, sub, Point};

/// One correspondence `a -> b` with displacement sample `u = pos_b - pos_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub a: usize,
    pub b: usize,
    pub u: Point,
    pub valid: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchSet {
    pub matches: Vec<Match>,
    /// Size of the reference set; denominator of the match ratio.
    pub reference_count: usize,
}

impl MatchSet {
    /// Fraction of reference particles that received a match.
    pub fn match_ratio(&self) -> f64 {
        if self.reference_count == 0 {
            0.0
        } else {
            self.matches.len() as f64 / self.reference_count as f64
        }
    }

    pub fn valid(&self) -> impl Iterator<Item = &Match> {
        self.matches.iter().filter(|m| m.valid)
    }

    pub fn valid_count(&self) -> usize {
        self.valid().count()
    }
}

/// Per-feature mismatch between two descriptors, each normalized by the
/// number of compared entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureDistances {
    pub radial: f64,
    pub angle: f64,
    pub azimuth: Option<f64>,
}

impl FeatureDistances {
    pub fn between(a: &Descriptor, b: &Descriptor) -> Self {
        let m = a.len().min(b.len());
        let inv = 1.0 / m as f64;
        let radial: f64 = a.radial[..m].iter().zip(&b.radial[..m]).map(|(x, y)| (x - y) * (x - y)).sum();
        let angle: f64 = a.angle[..m].iter().zip(&b.angle[..m]).map(|(x, y)| circular_diff(*x, *y).powi(2)).sum();
        let azimuth = if a.azimuth.is_empty() || b.azimuth.is_empty() {
            None
        } else {
            Some(a.azimuth[..m].iter().zip(&b.azimuth[..m]).map(|(x, y)| circular_diff(*x, *y).powi(2)).sum::<f64>() * inv)
        };
        Self { radial: radial * inv, angle: angle * inv, azimuth }
    }
}

/// Feature scores within this of the minimum count as tied. Some entries are
/// constant by construction (the first 3D neighbors lie in the frame plane),
/// so their scores differ only by rounding and must not decide a match.
pub const SCORE_TIE: f64 = 1e-12;

/// Whether each candidate is within `SCORE_TIE` of the least score.
fn near_least(scores: impl Iterator<Item = f64> + Clone) -> Vec<bool> {
    let least = scores.clone().fold(f64::INFINITY, f64::min);
    scores.map(|s| s <= least + SCORE_TIE).collect()
}

/// Links each particle of `A` to the candidate of `B` that simultaneously
/// minimizes every descriptor feature mismatch.
///
/// Candidates are the `B` particles within `search_radius` of the `A`
/// position. Scores within `SCORE_TIE` of a feature's minimum all count as
/// minimal; a match needs a candidate minimal in every feature, and several
/// such candidates are resolved by proximity, then by index. With
/// single-neighbor descriptors this reduces to nearest-neighbor search.
pub fn match_particles(
    a_pos: &[Point],
    a_desc: &[Option<Descriptor>],
    b_pos: &[Point],
    b_desc: &[Option<Descriptor>],
    b_index: &NeighborIndex,
    search_radius: f64,
) -> MatchSet {
    let matches: Vec<Match> = (0..a_pos.len())
        .into_par_iter()
        .filter_map(|a| {
            let da = a_desc[a].as_ref()?;
            // (index, squared distance) and the feature distances of each candidate
            let mut cands: Vec<(usize, f64)> = Vec::new();
            let mut feats: Vec<FeatureDistances> = Vec::new();
            b_index.for_each_within(&a_pos[a], search_radius, |b, d2| {
                let Some(db) = b_desc[b].as_ref() else { return };
                cands.push((b, d2));
                feats.push(FeatureDistances::between(da, db));
            });
            let mut minimal = near_least(feats.iter().map(|f| f.radial));
            let angle = near_least(feats.iter().map(|f| f.angle));
            minimal.iter_mut().zip(&angle).for_each(|(m, a)| *m &= a);
            if feats.iter().all(|f| f.azimuth.is_some()) {
                let azimuth = near_least(feats.iter().map(|f| f.azimuth.unwrap_or(0.0)));
                minimal.iter_mut().zip(&azimuth).for_each(|(m, z)| *m &= z);
            }
            let r = (0..cands.len())
                .filter(|&c| minimal[c])
                .min_by(|&x, &y| cands[x].1.total_cmp(&cands[y].1).then(cands[x].0.cmp(&cands[y].0)))
                .map(|c| cands[c].0)?;
            Some(Match { a, b: r, u: sub(&b_pos[r], &a_pos[a]), valid: true })
        })
        .collect();
    MatchSet { matches, reference_count: a_pos.len() }
}

/// Makes the links one-to-one: when several `A` particles claim the same `B`
/// particle only the closest claim (ties to the lower `A` index) survives.
/// Positions are those the matching was done in.
pub fn resolve_conflicts(set: &MatchSet, a_pos: &[Point], b_pos: &[Point]) -> MatchSet {
    let mut best: std::collections::HashMap<usize, (f64, usize)> = std::collections::HashMap::new();
    for m in &set.matches {
        let d = dist2(&a_pos[m.a], &b_pos[m.b]);
        best.entry(m.b)
            .and_modify(|cur| {
                if d.total_cmp(&cur.0).then(m.a.cmp(&cur.1)) == Ordering::Less {
                    *cur = (d, m.a);
                }
            })
            .or_insert((d, m.a));
    }
    MatchSet {
        matches: set.matches.iter().filter(|m| best[&m.b].1 == m.a).copied().collect(),
        reference_count: set.reference_count,
    }
}
