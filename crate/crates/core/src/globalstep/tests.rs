use super::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn spec2(nx: usize, ny: usize, h: f64) -> GridSpec {
    GridSpec::new(Dim::Two, [0.0; 3], h, [nx, ny, 1])
}

/// Dense `I - c L` with the unsymmetrized mirrored-ghost Neumann stencil.
fn dense_operator(spec: &GridSpec, c: f64) -> DMatrix<f64> {
    let n = spec.node_count();
    let mut m = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        let co = spec.node_coords(i);
        for a in 0..spec.dim.n() {
            let na = spec.dims[a];
            if na == 1 {
                continue;
            }
            let h2 = spec.spacing[a] * spec.spacing[a];
            let mut nb = co;
            let lo = if co[a] == 0 { 1 } else { co[a] - 1 };
            let hi = if co[a] == na - 1 { na - 2 } else { co[a] + 1 };
            nb[a] = lo;
            let jl = spec.index(nb[0], nb[1], nb[2]);
            nb[a] = hi;
            let jh = spec.index(nb[0], nb[1], nb[2]);
            m[(i, jl)] -= c / h2;
            m[(i, jh)] -= c / h2;
            m[(i, i)] += 2.0 * c / h2;
        }
    }
    m
}

fn random_field(spec: GridSpec, seed: u64) -> GridField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..spec.node_count())
        .map(|_| {
            let z = if spec.dim == Dim::Three { rng.random_range(-1.0..1.0) } else { 0.0 };
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), z]
        })
        .collect();
    GridField { spec, values }
}

#[test]
fn zero_regularization_is_identity() {
    let rhs = random_field(spec2(9, 7, 1.5), 1);
    assert_eq!(solve_global(&rhs, 0.0).unwrap(), rhs);
}

#[test]
fn constants_are_preserved() {
    for spec in [spec2(20, 13, 2.0), GridSpec::new(Dim::Three, [1.0, 2.0, 3.0], 1.0, [6, 5, 7])] {
        let rhs = GridField::from_fn(spec, |_| [1.25, -3.0, if spec.dim == Dim::Three { 0.5 } else { 0.0 }]);
        for c in [1e-3, 1e-1, 10.0] {
            let out = solve_global(&rhs, c).unwrap();
            assert!(out.max_diff(&rhs) < 1e-8);
        }
    }
}

#[test]
fn cosine_eigenfunction_is_damped() {
    let l = 64.0;
    let spec = GridSpec::new(Dim::Two, [0.0; 3], l / 64.0, [65, 4, 1]);
    let rhs = GridField::from_fn(spec, |p| [(PI * p[0] / l).cos(), 0.0, 0.0]);
    let c = 0.1;
    let out = solve_global(&rhs, c).unwrap();
    let factor = 1.0 / (1.0 + c * (PI / l).powi(2));
    for (p, v) in spec.node_positions().iter().zip(&out.values) {
        let want = (PI * p[0] / l).cos() * factor;
        assert!((v[0] - want).abs() <= 0.01 * want.abs().max(1e-3), "{} vs {}", v[0], want);
    }
}

#[test]
fn matches_dense_direct_solve() {
    let specs = [
        spec2(16, 16, 1.0),
        spec2(11, 5, 2.5),
        GridSpec::new(Dim::Three, [0.0; 3], 1.0, [6, 7, 5]),
    ];
    for (s, spec) in specs.into_iter().enumerate() {
        let rhs = random_field(spec, 10 + s as u64);
        for c in [1e-3, 1e-2, 1e-1, 1.0] {
            let out = solve_global(&rhs, c).unwrap();
            let m = dense_operator(&spec, c);
            let lu = m.lu();
            for a in 0..spec.dim.n() {
                let b = DVector::from_vec(rhs.component(a));
                let x = lu.solve(&b).unwrap();
                let got = DVector::from_vec(out.component(a));
                let rel = (&got - &x).norm() / x.norm();
                assert!(rel <= 1e-8, "relative error {rel}");
            }
        }
    }
}

#[test]
fn maximum_principle() {
    let rhs = random_field(spec2(30, 20, 1.0), 4);
    for c in [1e-2, 1.0, 50.0] {
        let out = solve_global(&rhs, c).unwrap();
        for a in 0..2 {
            let comp = rhs.component(a);
            let lo = comp.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = comp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(out.values.iter().all(|v| v[a] >= lo - 1e-8 && v[a] <= hi + 1e-8));
        }
    }
}

fn total_variation(f: &GridField) -> f64 {
    let spec = f.spec;
    let mut tv = 0.0;
    for i in 0..spec.node_count() {
        let c = spec.node_coords(i);
        if c[0] + 1 < spec.dims[0] {
            tv += (f.values[i + 1][0] - f.values[i][0]).abs();
        }
        if c[1] + 1 < spec.dims[1] {
            tv += (f.values[i + spec.dims[0]][0] - f.values[i][0]).abs();
        }
    }
    tv
}

#[test]
fn smoothing_reduces_total_variation() {
    let rhs = random_field(spec2(25, 25, 1.0), 5);
    let tvs: Vec<f64> = [1e-3, 1e-2, 1e-1]
        .iter()
        .map(|&c| total_variation(&solve_global(&rhs, c).unwrap()))
        .collect();
    assert!(tvs[0] >= tvs[1] && tvs[1] >= tvs[2], "{tvs:?}");
    assert!(tvs[0] <= total_variation(&rhs));
}

#[test]
fn gridding_constant_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pos: Vec<Point> = (0..200).map(|_| [rng.random_range(0.0..50.0), rng.random_range(0.0..40.0), 0.0]).collect();
    let vals = vec![[2.0, 0.0, 0.0]; pos.len()];
    let spec = GridSpec::covering(&pos, Dim::Two, 3.0);
    let g = scatter_to_grid(&pos, &vals, spec).unwrap();
    assert!(g.values.iter().all(|v| (v[0] - 2.0).abs() < 1e-6 && v[1].abs() < 1e-6));
    // round trip back to the samples
    let back = grid_to_scatter(&g, &pos);
    assert!(back.iter().all(|v| (v[0] - 2.0).abs() < 1e-6));
}

#[test]
fn single_sample_fills_grid() {
    let spec = spec2(5, 5, 1.0);
    let g = scatter_to_grid(&[[2.2, 1.9, 0.0]], &[[0.7, -0.4, 0.0]], spec).unwrap();
    assert!(g.values.iter().all(|v| (v[0] - 0.7).abs() < 1e-9 && (v[1] + 0.4).abs() < 1e-9));
}

#[test]
fn no_samples_is_an_error() {
    assert!(matches!(scatter_to_grid(&[], &[], spec2(3, 3, 1.0)), Err(Error::NoSamples)));
}

#[test]
fn linear_field_at_defined_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pos: Vec<Point> = (0..500).map(|_| [rng.random_range(0.0..63.0), rng.random_range(0.0..63.0), 0.0]).collect();
    let vals: Vec<Point> = pos.iter().map(|p| [0.01 * p[0], 0.0, 0.0]).collect();
    let spec = spec2(64, 64, 1.0);
    let g = scatter_to_grid(&pos, &vals, spec).unwrap();
    let mut defined = vec![false; spec.node_count()];
    for p in &pos {
        defined[spec.nearest_node(p)] = true;
    }
    for (i, v) in g.values.iter().enumerate() {
        if defined[i] {
            let x = spec.node_position(i)[0];
            assert!((v[0] - 0.01 * x).abs() <= 0.02);
        }
    }
}

#[test]
fn interpolation_reproduces_linears() {
    let spec = GridSpec::new(Dim::Three, [1.0, -2.0, 0.5], 1.5, [5, 6, 4]);
    let f = |p: &Point| [1.0 + 0.3 * p[0] - 0.2 * p[1] + 0.1 * p[2], p[1] * 0.5, -p[2]];
    let field = GridField::from_fn(spec, f);
    for i in 0..spec.node_count() {
        let p = spec.node_position(i);
        let got = field.interpolate(&p);
        for a in 0..3 {
            assert!((got[a] - field.values[i][a]).abs() <= 1e-15);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let p = [rng.random_range(1.0..7.0), rng.random_range(-2.0..5.5), rng.random_range(0.5..5.0)];
        let got = field.interpolate(&p);
        let want = f(&p);
        for a in 0..3 {
            assert!((got[a] - want[a]).abs() < 1e-12);
        }
    }
    let constant = GridField::from_fn(spec, |_| [3.0, 1.0, 2.0]);
    assert_eq!(constant.interpolate(&[100.0, 100.0, -9.0]), [3.0, 1.0, 2.0]);
}

#[test]
fn dual_update() {
    let spec = spec2(2, 2, 1.0);
    let theta = GridField::zeros(spec);
    let u_hat = GridField::from_fn(spec, |_| [1.0, 0.0, 0.0]);
    let u = GridField::zeros(spec);
    let t1 = update_dual(&theta, &u_hat, &u);
    assert!(t1.values.iter().all(|v| *v == [1.0, 0.0, 0.0]));
    assert_eq!(update_dual(&t1, &u_hat, &u_hat), t1);
    let t2 = update_dual(&t1, &u_hat, &u);
    assert!(t2.values.iter().all(|v| *v == [2.0, 0.0, 0.0]));
}

#[test]
fn covering_grid_pads_one_cell() {
    let pts = [[3.0, 4.0, 0.0], [20.0, 9.0, 0.0]];
    let spec = GridSpec::covering(&pts, Dim::Two, 2.0);
    assert_eq!(spec.origin[0], 1.0);
    let last = spec.node_position(spec.node_count() - 1);
    assert!(last[0] >= 22.0 && last[1] >= 11.0);
    assert!(spec.dims[0] >= 2 && spec.dims[1] >= 2 && spec.dims[2] == 1);
}

#[test]
fn relative_gridding_is_exact_for_linear_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spec = spec2(40, 40, 3.0);
    let pos: Vec<Point> = (0..300).map(|_| [rng.random_range(0.0..117.0), rng.random_range(0.0..117.0), 0.0]).collect();
    let field = |p: &Point| [0.17 * p[1] - 0.02 * p[0] + 1.0, -0.17 * p[0] + 3.0, 0.0];
    let vals: Vec<Point> = pos.iter().map(field).collect();
    let base = GridField::from_fn(spec, field);
    let g = scatter_to_grid_relative(&pos, &vals, &base).unwrap();
    assert!(g.max_diff(&base) < 1e-9);
    // with a zero base, observed nodes get plain per-node averages
    let plain = scatter_to_grid(&pos, &vals, spec).unwrap();
    let zero = scatter_to_grid_relative(&pos, &vals, &GridField::zeros(spec)).unwrap();
    for p in &pos {
        let i = spec.nearest_node(p);
        assert!((0..2).all(|a| (plain.values[i][a] - zero.values[i][a]).abs() < 1e-12));
    }
}

#[test]
fn unobserved_nodes_ignore_stale_estimates() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let spec = spec2(40, 40, 3.0);
    // samples only in the left half
    let pos: Vec<Point> = (0..200).map(|_| [rng.random_range(0.0..55.0), rng.random_range(0.0..117.0), 0.0]).collect();
    let field = |p: &Point| [0.1 * p[1] + 2.0, -0.1 * p[0], 0.0];
    let vals: Vec<Point> = pos.iter().map(field).collect();
    let mut base = GridField::from_fn(spec, field);
    for (i, v) in base.values.iter_mut().enumerate() {
        if spec.node_position(i)[0] > 70.0 {
            *v = [25.0, -40.0, 0.0];
        }
    }
    let g = scatter_to_grid_relative(&pos, &vals, &base).unwrap();
    assert!(g.max_diff(&GridField::from_fn(spec, field)) < 1e-6);
}

#[test]
fn affine_fit_recovers_affine_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for dim in [Dim::Two, Dim::Three] {
        let n = dim.n();
        let pos: Vec<Point> = (0..50)
            .map(|_| {
                let mut p = [0.0; 3];
                for a in 0..n {
                    p[a] = rng.random_range(-20.0..80.0);
                }
                p
            })
            .collect();
        let mut g = nalgebra::Matrix3::zeros();
        let mut c = [0.0; 3];
        for a in 0..n {
            c[a] = rng.random_range(-5.0..5.0);
            for b in 0..n {
                g[(a, b)] = rng.random_range(-1.0..1.0);
            }
        }
        let vals: Vec<Point> = pos
            .iter()
            .map(|p| {
                let mut v = [0.0; 3];
                for a in 0..n {
                    v[a] = c[a] + (0..n).map(|b| g[(a, b)] * p[b]).sum::<f64>();
                }
                v
            })
            .collect();
        let (fc, fg) = fit_affine(&pos, &vals, dim).unwrap();
        for a in 0..n {
            assert!((fc[a] - c[a]).abs() < 1e-9);
            for b in 0..n {
                assert!((fg[(a, b)] - g[(a, b)]).abs() < 1e-11);
            }
        }
        let mut field = GridField::zeros(GridSpec::new(dim, [0.0; 3], 2.0, [4, 5, if n == 3 { 3 } else { 1 }]));
        field.add_affine(&fc, &fg);
        for (i, v) in field.values.iter().enumerate() {
            let x = field.spec.node_position(i);
            for a in 0..n {
                let want = c[a] + (0..n).map(|b| g[(a, b)] * x[b]).sum::<f64>();
                assert!((v[a] - want).abs() < 1e-9);
            }
        }
    }
    // collinear samples do not determine a 2D fit
    let line: Vec<Point> = (0..10).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
    assert!(fit_affine(&line, &line, Dim::Two).is_none());
}
