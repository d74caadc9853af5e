use std::f64::consts::TAU;

use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serialtrack_core::descriptor::{build_all, build_descriptor, local_frame, match_particles, Descriptor, NeighborIndex};
use serialtrack_core::detect::{detect, DetectionConfig};
use serialtrack_core::globalstep::{grid_to_scatter, scatter_to_grid, solve_global, GridField, GridSpec};
use serialtrack_core::synth::{apply_deformation, poisson_disc_sample, render_image, DeformationSpec, SynthImageSpec};
use serialtrack_core::tracker::{ghost_flags_brute_force, remove_ghosts, track_hard, TrackingConfig};
use serialtrack_core::types::{dist2, sub};
use serialtrack_core::{Dim, ParticleSet, Point};

/// Random points at least 2 apart, like centers of non-overlapping particles.
fn cloud(dim: Dim, n: usize, extent: f64, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(n);
    while out.len() < n {
        let mut p = [0.0; 3];
        for a in 0..dim.n() {
            p[a] = rng.random_range(0.0..extent);
        }
        if out.iter().all(|q| dist2(&p, q) >= 4.0) {
            out.push(p);
        }
    }
    out
}

fn rotation(dim: Dim, rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    match dim {
        Dim::Two => *Rotation3::from_axis_angle(&Vector3::z_axis(), rng.random_range(0.0..TAU)).matrix(),
        Dim::Three => {
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let axis = nalgebra::Unit::new_normalize(axis + Vector3::new(0.0, 0.0, 1e-3));
            *Rotation3::from_axis_angle(&axis, rng.random_range(0.0..TAU)).matrix()
        }
    }
}

fn transform(points: &[Point], r: &Matrix3<f64>, s: f64, t: Point) -> Vec<Point> {
    points
        .iter()
        .map(|p| {
            let v = r * Vector3::new(p[0], p[1], p[2]) * s;
            [v.x + t[0], v.y + t[1], v.z + t[2]]
        })
        .collect()
}

fn max_descriptor_gap(a: &Descriptor, b: &Descriptor) -> f64 {
    let circ = |x: f64, y: f64| {
        let d = (x - y).abs() % TAU;
        d.min(TAU - d)
    };
    let radial = a.radial.iter().zip(&b.radial).map(|(x, y)| (x - y).abs());
    let angle = a.angle.iter().zip(&b.angle).map(|(x, y)| circ(*x, *y));
    let azimuth = a.azimuth.iter().zip(&b.azimuth).map(|(x, y)| circ(*x, *y));
    radial.chain(angle).chain(azimuth).fold(0.0, f64::max)
}

fn dim_of(three: bool) -> Dim {
    if three {
        Dim::Three
    } else {
        Dim::Two
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn seeding_respects_spacing_and_seed(seed in any::<u64>(), density in 0.002f64..0.02, three in any::<bool>()) {
        let dims: Vec<usize> = if three { vec![24, 24, 24] } else { vec![96, 80] };
        let density = if three { density / 10.0 } else { density };
        let a = poisson_disc_sample(&dims, 3.0, density, seed).unwrap();
        for i in 0..a.len() {
            for j in 0..i {
                prop_assert!(dist2(&a.points[i], &a.points[j]) >= 9.0);
            }
        }
        prop_assert_eq!(&a, &poisson_disc_sample(&dims, 3.0, density, seed).unwrap());
    }

    #[test]
    fn translations_compose(seed in any::<u64>(), s1 in prop::array::uniform3(-20.0f64..20.0), s2 in prop::array::uniform3(-20.0f64..20.0)) {
        let dims = [64, 64, 64];
        let p = poisson_disc_sample(&dims, 4.0, 1e-3, seed).unwrap();
        let ta = DeformationSpec::Translation { shift: s1 };
        let tb = DeformationSpec::Translation { shift: s2 };
        let tab = DeformationSpec::Translation { shift: [s1[0] + s2[0], s1[1] + s2[1], s1[2] + s2[2]] };
        let twice = apply_deformation(&apply_deformation(&p, &ta, &dims).unwrap().particles, &tb, &dims).unwrap();
        let once = apply_deformation(&p, &tab, &dims).unwrap();
        for (x, y) in twice.particles.points.iter().zip(&once.particles.points) {
            for a in 0..3 {
                prop_assert!((x[a] - y[a]).abs() <= 1e-12);
            }
        }
        prop_assert_eq!(twice.in_frame, once.in_frame);
    }

    #[test]
    fn rendering_is_linear(seed in any::<u64>(), split in 1usize..10) {
        let spec = SynthImageSpec::new(&[64, 48], 0.01);
        let all = poisson_disc_sample(&[64, 48], 5.0, 0.01, seed).unwrap();
        let (left, right): (Vec<_>, Vec<_>) = all.points.iter().enumerate().partition(|(i, _)| i % split == 0);
        let set = |v: Vec<(usize, &Point)>| ParticleSet::new(Dim::Two, 0, v.into_iter().map(|(_, p)| *p).collect());
        let (l, r) = (render_image(&set(left), &spec).unwrap(), render_image(&set(right), &spec).unwrap());
        let whole = render_image(&all, &spec).unwrap();
        for i in 0..whole.data.len() {
            prop_assert!((whole.data[i] - l.data[i] - r.data[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn detections_are_never_duplicated(seed in any::<u64>(), density in 0.003f64..0.012) {
        let mut spec = SynthImageSpec::new(&[96, 96], density);
        spec.noise_pct = 0.05;
        spec.rng_seed = seed;
        let truth = poisson_disc_sample(&[96, 96], 5.0, density, seed).unwrap();
        let img = render_image(&truth, &spec).unwrap();
        let found = detect(&img, &DetectionConfig::default()).unwrap().particles.points;
        for i in 0..found.len() {
            for j in 0..i {
                prop_assert!(dist2(&found[i], &found[j]) >= 1.0);
            }
        }
    }

    #[test]
    fn descriptors_ignore_rotation_scale_and_shift(seed in any::<u64>(), three in any::<bool>(), k in 1usize..20) {
        let dim = dim_of(three);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = cloud(dim, 30, 50.0, &mut rng);
        let r = rotation(dim, &mut rng);
        let s = rng.random_range(0.1..10.0);
        let mut t = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), 0.0];
        if three {
            t[2] = rng.random_range(-100.0..100.0);
        }
        let scaled = transform(&pts, &Matrix3::identity(), s, [0.0; 3]);
        let moved = transform(&pts, &r, s, t);
        let (i0, i1, i2) = (NeighborIndex::new(&pts, dim), NeighborIndex::new(&scaled, dim), NeighborIndex::new(&moved, dim));
        for p in 0..pts.len() {
            let Ok(d0) = build_descriptor(p, &pts, &i0, k, f64::INFINITY) else { continue };
            let d1 = build_descriptor(p, &scaled, &i1, k, f64::INFINITY).unwrap();
            let d2 = build_descriptor(p, &moved, &i2, k, f64::INFINITY).unwrap();
            prop_assert!(max_descriptor_gap(&d0, &d1) <= 1e-12);
            prop_assert!(max_descriptor_gap(&d0, &d2) <= 1e-9);
        }
    }

    #[test]
    fn local_frames_are_right_handed(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offsets = cloud(Dim::Three, 6, 10.0, &mut rng);
        for o in &mut offsets {
            for a in 0..3 {
                o[a] -= 5.0;
            }
        }
        offsets.sort_by(|x, y| dist2(x, &[0.0; 3]).total_cmp(&dist2(y, &[0.0; 3])));
        let f = local_frame(&offsets).unwrap();
        let m = Matrix3::from_columns(&[Vector3::from(f.e1), Vector3::from(f.e2), Vector3::from(f.e3)]);
        prop_assert!((m.determinant() - 1.0).abs() <= 1e-12);
        prop_assert!(Vector3::from(f.e3).dot(&Vector3::from(offsets[2])) > 0.0);
    }

    #[test]
    fn clean_rigid_matching_is_symmetric(seed in any::<u64>(), three in any::<bool>(), k in 2usize..10) {
        let dim = dim_of(three);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = cloud(dim, 40, 60.0, &mut rng);
        let b = transform(&a, &rotation(dim, &mut rng), 1.0, [3.0, -2.0, if three { 1.0 } else { 0.0 }]);
        let (ia, ib) = (NeighborIndex::new(&a, dim), NeighborIndex::new(&b, dim));
        let (da, db) = (build_all(&a, &ia, k, f64::INFINITY), build_all(&b, &ib, k, f64::INFINITY));
        let mut fwd: Vec<(usize, usize)> =
            match_particles(&a, &da, &b, &db, &ib, f64::INFINITY).matches.iter().map(|m| (m.a, m.b)).collect();
        let mut back: Vec<(usize, usize)> =
            match_particles(&b, &db, &a, &da, &ia, f64::INFINITY).matches.iter().map(|m| (m.b, m.a)).collect();
        fwd.sort_unstable();
        back.sort_unstable();
        prop_assert_eq!(fwd, back);
    }

    #[test]
    fn global_solve_obeys_the_maximum_principle(seed in any::<u64>(), c in 1e-3f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = GridSpec::new(Dim::Two, [0.0; 3], 2.0, [12, 9, 1]);
        let values = (0..spec.node_count()).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0]).collect();
        let rhs = GridField { spec, values };
        let out = solve_global(&rhs, c).unwrap();
        for a in 0..2 {
            let v = rhs.component(a);
            let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(*x), h.max(*x)));
            prop_assert!(out.component(a).iter().all(|x| *x >= lo - 1e-8 && *x <= hi + 1e-8));
        }
    }

    #[test]
    fn constant_samples_round_trip(seed in any::<u64>(), value in prop::array::uniform3(-50.0f64..50.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = cloud(Dim::Three, 25, 30.0, &mut rng);
        let spec = GridSpec::covering(&pos, Dim::Three, 4.0);
        let field = scatter_to_grid(&pos, &vec![value; pos.len()], spec).unwrap();
        for u in grid_to_scatter(&field, &pos) {
            for a in 0..3 {
                prop_assert!((u[a] - value[a]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn ghost_removal_matches_brute_force(seed in any::<u64>(), eps in 0.5f64..6.0, three in any::<bool>()) {
        let dim = dim_of(three);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = cloud(dim, rng.random_range(1..=100), 40.0, &mut rng);
        let b = cloud(dim, rng.random_range(1..=100), 44.0, &mut rng);
        let dims = [12, 12, if three { 12 } else { 1 }];
        let spec = GridSpec::new(dim, [-2.0; 3], 4.0, dims);
        let values = (0..spec.node_count())
            .map(|_| {
                let mut v = [0.0; 3];
                for c in 0..dim.n() {
                    v[c] = rng.random_range(-2.0..2.0);
                }
                v
            })
            .collect();
        let field = GridField { spec, values };
        let (fa, fb) = ghost_flags_brute_force(&a, &grid_to_scatter(&field, &a), &b, eps);
        let want_a: Vec<usize> = (0..a.len()).filter(|&i| fa[i]).collect();
        let want_b: Vec<usize> = (0..b.len()).filter(|&i| fb[i]).collect();
        match remove_ghosts(&a, &b, &field, dim, eps) {
            Ok((ka, kb)) => {
                prop_assert_eq!(ka, want_a);
                prop_assert_eq!(kb, want_b);
            }
            Err(_) => prop_assert!(want_a.is_empty() || want_b.is_empty()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn rigid_translation_gives_a_constant_field(seed in any::<u64>(), shift in prop::array::uniform2(-3.0f64..3.0)) {
        let a = poisson_disc_sample(&[160, 160], 5.0, 0.006, seed).unwrap();
        let b = ParticleSet::new(Dim::Two, 1, a.points.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], 0.0]).collect());
        let cfg = TrackingConfig::default();
        let res = track_hard(&a, &b, &cfg, None).unwrap();
        prop_assert!(res.iterations <= cfg.iter_max);
        prop_assert!(res.tracking_ratio() > 0.99);
        for m in &res.matches {
            let u = sub(&m.pos_b, &m.pos_a);
            prop_assert!((u[0] - shift[0]).abs() < 1e-9 && (u[1] - shift[1]).abs() < 1e-9);
        }
        for v in &res.u_hat.values {
            prop_assert!((v[0] - shift[0]).abs() <= 1e-3 && (v[1] - shift[1]).abs() <= 1e-3);
        }
    }
}
