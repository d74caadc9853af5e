//! Sequence-level tracking: frame pairing, cumulative tracking with a
//! predictor, and chaining of incremental matches into trajectories with
//! extrapolate-and-join gap closing.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::NeighborIndex;
use crate::detect::detect;
use crate::globalstep::GridField;
use crate::tracker::{track_hard, track_soft_from, Rigidity, TrackResult, TrackingConfig, TrackingMode};
use crate::types::{add, dist2, scale, sub, Image, ParticleSet, Point};
use crate::{Error, Result};

/// Maximum number of extrapolate-and-join rounds.
pub const MERGE_ROUNDS: usize = 5;

/// Reference/deformed frame index pairs for a sequence of `n` frames.
pub fn pair_frames(n: usize, mode: TrackingMode) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 frames, got {n}")));
    }
    Ok(match mode {
        TrackingMode::Incremental => (0..n - 1).map(|t| (t, t + 1)).collect(),
        TrackingMode::Cumulative => (1..n).map(|t| (0, t)).collect(),
        TrackingMode::DoubleFrame => {
            if n % 2 == 1 {
                return Err(Error::OddFrameCount(n));
            }
            (0..n / 2).map(|j| (2 * j, 2 * j + 1)).collect()
        }
    })
}

/// One frame of a sequence. Soft tracking needs the image; hard tracking
/// only the detected particles.
#[derive(Debug, Clone)]
pub struct Frame {
    pub particles: ParticleSet,
    pub image: Option<Image>,
}

impl Frame {
    pub fn from_particles(particles: ParticleSet) -> Self {
        Frame { particles, image: None }
    }

    /// Detects particles in `image` and keeps the image for soft tracking.
    pub fn detect(image: Image, cfg: &TrackingConfig) -> Result<Self> {
        let particles = detect(&image, &cfg.detection)?.particles;
        Ok(Frame { particles, image: Some(image) })
    }
}

/// Result of tracking one frame pair. Failures are kept so the remaining
/// pairs of a sequence still run.
#[derive(Debug)]
pub struct PairOutcome {
    pub reference: usize,
    pub deformed: usize,
    pub result: Result<TrackResult>,
}

fn track_pair(a: &Frame, b: &Frame, cfg: &TrackingConfig, predictor: Option<&GridField>) -> Result<TrackResult> {
    match cfg.rigidity {
        Rigidity::Hard => track_hard(&a.particles, &b.particles, cfg, predictor),
        Rigidity::Soft => {
            let image = b
                .image
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("soft tracking needs the deformed image".into()))?;
            track_soft_from(&a.particles, image, cfg, predictor)
        }
    }
}

/// Tracks `pairs` in order. With the predictor enabled each pair is seeded
/// with the field of the last successful pair, which serializes the run;
/// otherwise pairs are tracked in parallel.
pub fn track_pairs(frames: &[Frame], pairs: &[(usize, usize)], cfg: &TrackingConfig) -> Vec<PairOutcome> {
    let run = |&(r, d): &(usize, usize), predictor: Option<&GridField>| PairOutcome {
        reference: r,
        deformed: d,
        result: track_pair(&frames[r], &frames[d], cfg, predictor),
    };
    if !cfg.use_predictor {
        return pairs.par_iter().map(|p| run(p, None)).collect();
    }
    let mut out: Vec<PairOutcome> = Vec::with_capacity(pairs.len());
    let mut last: Option<usize> = None;
    for p in pairs {
        let predictor = last.and_then(|i| out[i].result.as_ref().ok()).map(|r| &r.u_hat);
        let outcome = run(p, predictor);
        if outcome.result.is_ok() {
            last = Some(out.len());
        }
        out.push(outcome);
    }
    out
}

/// Tracks every frame against frame 0, seeding pair (0, t) with the field
/// found for (0, t-1).
pub fn cumulative_track(frames: &[Frame], cfg: &TrackingConfig) -> Result<Vec<PairOutcome>> {
    let pairs = pair_frames(frames.len(), TrackingMode::Cumulative)?;
    Ok(track_pairs(frames, &pairs, cfg))
}

/// Tracks (0,1), (2,3), ... independently.
pub fn double_frame_track(frames: &[Frame], cfg: &TrackingConfig) -> Result<Vec<PairOutcome>> {
    let pairs = pair_frames(frames.len(), TrackingMode::DoubleFrame)?;
    let cfg = TrackingConfig { use_predictor: false, ..cfg.clone() };
    Ok(track_pairs(frames, &pairs, &cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Tracked,
    Extrapolated,
}

/// A particle followed over the contiguous frames `start..start + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySegment {
    pub start: usize,
    pub positions: Vec<Point>,
    pub source: Vec<Source>,
    /// Index into the frame's particle set for tracked frames.
    pub particle: Vec<Option<usize>>,
}

impl TrajectorySegment {
    fn single(frame: usize, particle: usize, p: Point) -> Self {
        TrajectorySegment { start: frame, positions: vec![p], source: vec![Source::Tracked], particle: vec![Some(particle)] }
    }

    /// Last frame covered (inclusive).
    pub fn end(&self) -> usize {
        self.start + self.positions.len() - 1
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn covers(&self, frame: usize) -> bool {
        frame >= self.start && frame <= self.end()
    }

    pub fn position(&self, frame: usize) -> Option<Point> {
        self.covers(frame).then(|| self.positions[frame - self.start])
    }

    pub fn source_at(&self, frame: usize) -> Option<Source> {
        self.covers(frame).then(|| self.source[frame - self.start])
    }

    /// Displacement at `frame` relative to the first frame of the segment.
    pub fn displacement(&self, frame: usize) -> Option<Point> {
        self.position(frame).map(|p| sub(&p, &self.positions[0]))
    }

    /// Per-frame velocity at the tail (or head), from the two terminal
    /// frames; zero for a single frame.
    fn velocity(&self, tail: bool) -> Point {
        let n = self.positions.len();
        if n < 2 {
            return [0.0; 3];
        }
        if tail {
            sub(&self.positions[n - 1], &self.positions[n - 2])
        } else {
            sub(&self.positions[1], &self.positions[0])
        }
    }

    /// Constant-velocity extrapolation `steps` frames past the end.
    fn extrapolate_forward(&self, steps: usize) -> Point {
        add(&self.positions[self.positions.len() - 1], &scale(&self.velocity(true), steps as f64))
    }

    /// Constant-velocity extrapolation `steps` frames before the start.
    fn extrapolate_backward(&self, steps: usize) -> Point {
        sub(&self.positions[0], &scale(&self.velocity(false), steps as f64))
    }
}

/// Options for chaining and gap closing.
#[derive(Debug, Clone, Copy)]
pub struct MergeConfig {
    /// Distance under which an extrapolated position joins another segment.
    pub join_tol: f64,
    pub rounds: usize,
}

/// Position-based lookup from a match endpoint to the next frame's particle
/// index: exact for hard tracking, nearest detection for soft tracking where
/// endpoints come from re-detected images.
fn endpoint_index(frame: &ParticleSet, index: &NeighborIndex, b: usize, pos: &Point) -> Option<usize> {
    if frame.points.get(b) == Some(pos) {
        return Some(b);
    }
    index.nearest(pos).filter(|n| n.dist <= 0.5).map(|n| n.index)
}

/// Chains incremental matches into segments and closes gaps by
/// extrapolate-and-join rounds.
///
/// `frames[t]` must be the particle set used as reference for pair
/// (t, t+1); `pairs` are the outcomes of those pairs in any order. Unmatched
/// detections form single-frame segments so they can be picked up by joins.
pub fn merge_segments(frames: &[ParticleSet], pairs: &[PairOutcome], cfg: &MergeConfig) -> Vec<TrajectorySegment> {
    let n = frames.len();
    // successor[t][i] = particle in frame t+1 linked to particle i of frame t
    let mut successor: Vec<HashMap<usize, (usize, Point, Point)>> = vec![HashMap::new(); n];
    let mut has_pred: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.len()]).collect();
    for outcome in pairs {
        let (t, d) = (outcome.reference, outcome.deformed);
        if d != t + 1 || d >= n {
            continue;
        }
        let Ok(res) = &outcome.result else { continue };
        let index = NeighborIndex::new(&frames[d].points, frames[d].dim);
        for m in &res.matches {
            let Some(j) = endpoint_index(&frames[d], &index, m.b, &m.pos_b) else { continue };
            if has_pred[d][j] || m.a >= frames[t].len() {
                continue;
            }
            has_pred[d][j] = true;
            successor[t].insert(m.a, (j, m.pos_a, m.pos_b));
        }
    }

    let mut segments = Vec::new();
    for t in 0..n {
        for i in 0..frames[t].len() {
            if has_pred[t][i] {
                continue;
            }
            let mut seg = TrajectorySegment::single(t, i, frames[t].points[i]);
            let (mut f, mut cur) = (t, i);
            while let Some(&(j, _, pos_b)) = successor[f].get(&cur) {
                seg.positions.push(pos_b);
                seg.source.push(Source::Tracked);
                seg.particle.push(Some(j));
                f += 1;
                cur = j;
            }
            segments.push(seg);
        }
    }
    join_segments(segments, cfg)
}

/// Extrapolate-and-join: in round r each segment reaches r frames past both
/// ends. A join links a segment to one starting after it when either
/// extrapolation lands within `join_tol` of the other's terminal position at
/// the same frame. Rounds stop early once a round joins nothing and no
/// remaining gap is wider than the current reach.
pub fn join_segments(mut segments: Vec<TrajectorySegment>, cfg: &MergeConfig) -> Vec<TrajectorySegment> {
    let tol2 = cfg.join_tol * cfg.join_tol;
    for round in 1..=cfg.rounds {
        // candidates (distance², earlier, later)
        let mut by_start: HashMap<usize, Vec<usize>> = HashMap::new();
        for (k, s) in segments.iter().enumerate() {
            by_start.entry(s.start).or_default().push(k);
        }
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        let mut wider_gap = false;
        for (k, s) in segments.iter().enumerate() {
            for gap in 1..=cfg.rounds {
                let Some(later) = by_start.get(&(s.end() + gap)) else { continue };
                if gap > round {
                    wider_gap = true;
                    break;
                }
                let ahead = s.extrapolate_forward(gap);
                for &l in later {
                    let other = &segments[l];
                    let back = other.extrapolate_backward(gap);
                    let d2 = dist2(&ahead, &other.positions[0]).min(dist2(&back, &s.positions[s.len() - 1]));
                    if d2 <= tol2 {
                        candidates.push((d2, k, l));
                    }
                }
            }
        }
        candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut next: Vec<Option<usize>> = vec![None; segments.len()];
        let mut taken = vec![false; segments.len()];
        for &(_, k, l) in &candidates {
            if next[k].is_none() && !taken[l] {
                next[k] = Some(l);
                taken[l] = true;
            }
        }
        let joined = next.iter().filter(|x| x.is_some()).count();
        if joined > 0 {
            segments = apply_joins(segments, &next, &taken);
        } else if !wider_gap {
            break;
        }
    }
    segments.sort_by(|a, b| a.start.cmp(&b.start).then(a.particle[0].cmp(&b.particle[0])));
    segments
}

fn apply_joins(segments: Vec<TrajectorySegment>, next: &[Option<usize>], taken: &[bool]) -> Vec<TrajectorySegment> {
    let mut slots: Vec<Option<TrajectorySegment>> = segments.into_iter().map(Some).collect();
    let mut out = Vec::new();
    for head in 0..slots.len() {
        if taken[head] {
            continue;
        }
        let Some(mut seg) = slots[head].take() else { continue };
        let mut cur = head;
        while let Some(l) = next[cur] {
            let other = slots[l].take().expect("segment joined twice");
            let gap = other.start - seg.end();
            for _ in 1..gap {
                seg.positions.push(seg.extrapolate_forward(1));
                seg.source.push(Source::Extrapolated);
                seg.particle.push(None);
            }
            seg.positions.extend(other.positions);
            seg.source.extend(other.source);
            seg.particle.extend(other.particle);
            cur = l;
        }
        out.push(seg);
    }
    out
}

/// Cumulative displacement of a frame-0 particle at some frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CumulativeEntry {
    pub trajectory: usize,
    /// Index of the particle in frame 0.
    pub particle: usize,
    pub position: Point,
    pub u: Point,
    pub extrapolated: bool,
}

/// Outcome of incremental tracking over a sequence.
#[derive(Debug)]
pub struct IncrementalRun {
    pub pairs: Vec<PairOutcome>,
    pub trajectories: Vec<TrajectorySegment>,
}

impl IncrementalRun {
    /// Cumulative displacements at `frame` of every trajectory that starts
    /// at frame 0 and covers `frame`.
    pub fn cumulative_at(&self, frame: usize) -> Vec<CumulativeEntry> {
        cumulative_at(&self.trajectories, frame)
    }
}

pub fn cumulative_at(trajectories: &[TrajectorySegment], frame: usize) -> Vec<CumulativeEntry> {
    trajectories
        .iter()
        .enumerate()
        .filter(|(_, t)| t.start == 0 && t.covers(frame))
        .map(|(k, t)| CumulativeEntry {
            trajectory: k,
            particle: t.particle[0].expect("trajectories start on a tracked frame"),
            position: t.position(frame).unwrap(),
            u: t.displacement(frame).unwrap(),
            extrapolated: t.source_at(frame) == Some(Source::Extrapolated),
        })
        .collect()
}

/// Tracks consecutive pairs, then merges them into trajectories.
/// `join_tol` defaults to the ghost distance, half the mean spacing of the
/// first frame.
pub fn incremental_cumulative(frames: &[Frame], cfg: &TrackingConfig) -> Result<IncrementalRun> {
    let pairs = pair_frames(frames.len(), TrackingMode::Incremental)?;
    let outcomes = track_pairs(frames, &pairs, cfg);
    let join_tol = match cfg.join_tol.or(cfg.eps_d) {
        Some(t) => t,
        None => 0.5 * frames[0].particles.mean_nn_spacing().unwrap_or(1.0),
    };
    let sets: Vec<ParticleSet> = frames.iter().map(|f| f.particles.clone()).collect();
    let trajectories = merge_segments(&sets, &outcomes, &MergeConfig { join_tol, rounds: MERGE_ROUNDS });
    Ok(IncrementalRun { pairs: outcomes, trajectories })
}

#[cfg(test)]
mod tests;
