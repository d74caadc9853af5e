use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::synth::poisson_disc_in_box;
use crate::types::Dim;

fn cloud(count: usize, seed: u64) -> ParticleSet {
    poisson_disc_in_box(Dim::Two, [0.0, 0.0, 0.0], [200.0, 200.0, 0.0], count, 5.0, seed).unwrap()
}

fn shifted(set: &ParticleSet, frame: usize, shift: [f64; 3]) -> ParticleSet {
    ParticleSet::new(set.dim, frame, set.points.iter().map(|p| add(p, &shift)).collect())
}

fn frames_of(sets: Vec<ParticleSet>) -> Vec<Frame> {
    sets.into_iter().map(Frame::from_particles).collect()
}

fn seg(start: usize, positions: Vec<Point>) -> TrajectorySegment {
    let n = positions.len();
    TrajectorySegment { start, positions, source: vec![Source::Tracked; n], particle: (0..n).map(Some).collect() }
}

fn line(start: usize, len: usize, v: f64) -> TrajectorySegment {
    seg(start, (start..start + len).map(|t| [10.0 + v * t as f64, 5.0, 0.0]).collect())
}

const MERGE: MergeConfig = MergeConfig { join_tol: 0.5, rounds: MERGE_ROUNDS };

#[test]
fn pairing_examples() {
    assert_eq!(pair_frames(4, TrackingMode::Incremental).unwrap(), vec![(0, 1), (1, 2), (2, 3)]);
    assert_eq!(pair_frames(4, TrackingMode::Cumulative).unwrap(), vec![(0, 1), (0, 2), (0, 3)]);
    assert_eq!(pair_frames(4, TrackingMode::DoubleFrame).unwrap(), vec![(0, 1), (2, 3)]);
    assert!(matches!(pair_frames(5, TrackingMode::DoubleFrame), Err(Error::OddFrameCount(5))));
    assert!(pair_frames(1, TrackingMode::Incremental).is_err());
}

proptest! {
    #[test]
    fn pairing_is_exhaustive(n in 2usize..40) {
        let inc = pair_frames(n, TrackingMode::Incremental).unwrap();
        prop_assert_eq!(inc.len(), n - 1);
        prop_assert!(inc.iter().enumerate().all(|(t, &(a, b))| a == t && b == t + 1));
        let cum = pair_frames(n, TrackingMode::Cumulative).unwrap();
        prop_assert!(cum.iter().enumerate().all(|(t, &(a, b))| a == 0 && b == t + 1));
        match pair_frames(n, TrackingMode::DoubleFrame) {
            Ok(df) => {
                prop_assert_eq!(n % 2, 0);
                let mut seen: Vec<usize> = df.iter().flat_map(|&(a, b)| [a, b]).collect();
                seen.sort();
                prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
                prop_assert!(df.iter().all(|&(a, b)| a % 2 == 0 && b == a + 1));
            }
            Err(e) => prop_assert!(n % 2 == 1 && matches!(e, Error::OddFrameCount(_))),
        }
    }
}

#[test]
fn adjacent_segments_join() {
    let merged = join_segments(vec![line(0, 4, 1.5), line(4, 4, 1.5)], &MERGE);
    assert_eq!(merged.len(), 1);
    assert_eq!((merged[0].start, merged[0].end()), (0, 7));
    assert!(merged[0].source.iter().all(|s| *s == Source::Tracked));
}

#[test]
fn gap_is_filled_with_flagged_extrapolation() {
    // frames 4 and 5 missing
    let merged = join_segments(vec![line(0, 4, 1.0), line(6, 3, 1.0)], &MERGE);
    assert_eq!(merged.len(), 1);
    let m = &merged[0];
    assert_eq!((m.start, m.end()), (0, 8));
    for t in [4, 5] {
        assert_eq!(m.source_at(t), Some(Source::Extrapolated));
        assert_eq!(m.particle[t], None);
        assert!((m.position(t).unwrap()[0] - (10.0 + t as f64)).abs() < 1e-12);
    }
    assert!((m.displacement(8).unwrap()[0] - 8.0).abs() < 1e-12);
}

#[test]
fn far_segments_stay_apart() {
    let mut b = line(4, 4, 1.0);
    b.positions.iter_mut().for_each(|p| p[1] += 3.0);
    let merged = join_segments(vec![line(0, 4, 1.0), b], &MERGE);
    assert_eq!(merged.len(), 2);
    // gaps beyond the round budget are never bridged
    let merged = join_segments(vec![line(0, 3, 1.0), line(3 + MERGE_ROUNDS + 1, 3, 1.0)], &MERGE);
    assert_eq!(merged.len(), 2);
}

#[test]
fn single_frame_segment_extrapolates_at_rest() {
    let merged = join_segments(vec![seg(0, vec![[1.0, 1.0, 0.0]]), seg(2, vec![[1.2, 1.1, 0.0], [1.4, 1.2, 0.0]])], &MERGE);
    assert_eq!(merged.len(), 1);
    assert_eq!(merged[0].position(1), Some([1.0, 1.0, 0.0]));
}

#[test]
fn joins_pick_the_closest_candidate() {
    let near = seg(4, vec![[14.1, 5.0, 0.0], [15.1, 5.0, 0.0]]);
    let nearer = seg(4, vec![[14.0, 5.0, 0.0], [15.0, 5.0, 0.0]]);
    let merged = join_segments(vec![line(0, 4, 1.0), near, nearer.clone()], &MERGE);
    assert_eq!(merged.len(), 2);
    let long = merged.iter().find(|s| s.start == 0).unwrap();
    assert_eq!(long.position(4), nearer.position(4));
}

fn translation_sequence(n: usize, step: f64, seed: u64) -> Vec<ParticleSet> {
    let base = cloud(300, seed);
    (0..n).map(|t| shifted(&base, t, [step * t as f64, 0.0, 0.0])).collect()
}

#[test]
fn three_frame_translation_accumulates() {
    let frames = frames_of(translation_sequence(3, 1.0, 3));
    let run = incremental_cumulative(&frames, &TrackingConfig::default()).unwrap();
    let cum = run.cumulative_at(2);
    assert!(cum.len() as f64 >= 0.95 * frames[0].particles.len() as f64);
    for e in &cum {
        assert!((e.u[0] - 2.0).abs() <= 0.05 && e.u[1].abs() <= 0.05);
        assert!(!e.extrapolated);
    }
}

#[test]
fn fully_tracked_sequence_needs_no_joins() {
    let sets = translation_sequence(4, 0.7, 4);
    let frames = frames_of(sets.clone());
    let outcomes = track_pairs(&frames, &pair_frames(4, TrackingMode::Incremental).unwrap(), &TrackingConfig::default());
    assert!(outcomes.iter().all(|o| o.result.as_ref().unwrap().matches.len() == sets[0].len()));
    let chained = merge_segments(&sets, &outcomes, &MergeConfig { join_tol: 2.0, rounds: 0 });
    let merged = merge_segments(&sets, &outcomes, &MergeConfig { join_tol: 2.0, rounds: MERGE_ROUNDS });
    assert_eq!(chained, merged);
    assert_eq!(merged.len(), sets[0].len());
    assert!(merged.iter().all(|s| s.start == 0 && s.end() == 3));
}

#[test]
fn single_pair_matches_direct_tracking() {
    let sets = translation_sequence(2, 1.3, 5);
    let cfg = TrackingConfig::default();
    let run = incremental_cumulative(&frames_of(sets.clone()), &cfg).unwrap();
    let direct = track_hard(&sets[0], &sets[1], &cfg, None).unwrap();
    let from_run = run.pairs[0].result.as_ref().unwrap();
    assert_eq!(from_run.matches, direct.matches);
    let cum = run.cumulative_at(1);
    assert_eq!(cum.len(), direct.matches.len());
    for (e, m) in cum.iter().zip(&direct.matches) {
        assert_eq!((e.particle, e.u), (m.a, m.u));
    }
}

#[test]
fn blank_frame_is_bridged() {
    let mut sets = translation_sequence(6, 0.5, 6);
    sets[3].points.clear();
    let run = incremental_cumulative(&frames_of(sets.clone()), &TrackingConfig::default()).unwrap();
    for o in &run.pairs {
        let touches_blank = o.reference == 3 || o.deformed == 3;
        assert_eq!(touches_blank, matches!(o.result, Err(Error::NoMatches)), "pair {:?}", (o.reference, o.deformed));
    }
    let cum = run.cumulative_at(5);
    assert!(cum.len() as f64 >= 0.9 * sets[0].len() as f64, "{} bridged", cum.len());
    for e in &cum {
        assert!((e.u[0] - 2.5).abs() < 1e-6);
    }
    let at_gap = run.cumulative_at(3);
    assert!(at_gap.iter().all(|e| e.extrapolated));
}

fn dropout_sequence(n: usize, seed: u64) -> Vec<ParticleSet> {
    let base = cloud(300, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|t| {
            let pts = base.points.iter().filter(|_| t == 0 || rng.random::<f64>() >= 0.1).map(|p| [p[0] + 0.8 * t as f64, p[1], 0.0]).collect();
            ParticleSet::new(Dim::Two, t, pts)
        })
        .collect()
}

fn coverage(segments: &[TrajectorySegment], frame: usize) -> usize {
    cumulative_at(segments, frame).len()
}

#[test]
fn merging_only_adds_coverage() {
    let sets = dropout_sequence(8, 7);
    let cfg = TrackingConfig::default();
    let outcomes = track_pairs(&frames_of(sets.clone()), &pair_frames(8, TrackingMode::Incremental).unwrap(), &cfg);
    let before = merge_segments(&sets, &outcomes, &MergeConfig { join_tol: 2.0, rounds: 0 });
    let after = merge_segments(&sets, &outcomes, &MergeConfig { join_tol: 2.0, rounds: MERGE_ROUNDS });
    for t in 1..8 {
        assert!(coverage(&after, t) >= coverage(&before, t));
    }
    assert!(coverage(&after, 7) > coverage(&before, 7));
    // tracked entries keep their detected positions
    for s in &after {
        for t in s.start..=s.end() {
            if let Some(i) = s.particle[t - s.start] {
                assert_eq!(s.source_at(t), Some(Source::Tracked));
                assert_eq!(s.position(t).unwrap(), sets[t].points[i]);
            }
        }
    }
}

#[test]
fn incremental_agrees_with_cumulative_under_jitter() {
    let base = cloud(300, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut jitter = |p: &Point| [p[0] + 0.03 * (rng.random::<f64>() - 0.5) * 2.0, p[1] + 0.03 * (rng.random::<f64>() - 0.5) * 2.0, 0.0];
    let sets: Vec<ParticleSet> = (0..11)
        .map(|t| ParticleSet::new(Dim::Two, t, base.points.iter().map(|p| jitter(&[p[0] + 0.5 * t as f64, p[1], 0.0])).collect()))
        .collect();
    let frames = frames_of(sets);
    let cfg = TrackingConfig::default();
    let run = incremental_cumulative(&frames, &cfg).unwrap();
    let direct = cumulative_track(&frames, &cfg).unwrap();
    let last = direct.last().unwrap().result.as_ref().unwrap();
    let by_particle: HashMap<usize, Point> = last.matches.iter().map(|m| (m.a, m.u)).collect();
    let cum = run.cumulative_at(10);
    let shared: Vec<_> = cum.iter().filter_map(|e| by_particle.get(&e.particle).map(|d| (d, e.u))).collect();
    assert!(shared.len() as f64 >= 0.9 * base.len() as f64, "{} shared", shared.len());
    for (d, u) in shared {
        assert!(dist2(d, &u).sqrt() <= 0.1);
    }
}

#[test]
fn cumulative_on_identical_frames_is_zero() {
    let base = cloud(200, 9);
    let frames = frames_of(vec![base.clone(), base.clone(), base]);
    for o in cumulative_track(&frames, &TrackingConfig::default()).unwrap() {
        let r = o.result.unwrap();
        assert!(r.matches.iter().all(|m| m.u == [0.0; 3]));
        assert!(r.u_hat.values.iter().all(|u| u.iter().all(|c| c.abs() < 1e-9)));
    }
}

#[test]
fn double_frame_rejects_odd_sequences() {
    let frames = frames_of(translation_sequence(3, 1.0, 10));
    assert!(matches!(double_frame_track(&frames, &TrackingConfig::default()), Err(Error::OddFrameCount(3))));
    let frames = frames_of(translation_sequence(4, 1.0, 10));
    let out = double_frame_track(&frames, &TrackingConfig::default()).unwrap();
    assert_eq!(out.iter().map(|o| (o.reference, o.deformed)).collect::<Vec<_>>(), vec![(0, 1), (2, 3)]);
}
