//! Jacobi-preconditioned conjugate gradients for matrix-free SPD operators.

/// Outcome of a converged solve.
#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` starting from the contents of `x`.
///
/// Returns `Err(stats)` if the relative residual `|b - Ax| / |b|` is still
/// above `tol` after `max_iter` iterations.
pub fn pcg<F>(apply: F, diag: &[f64], b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<CgStats, CgStats>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats { iterations: 0, relative_residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / b_norm;
    let mut it = 0;
    while res > tol {
        if it >= max_iter {
            return Err(CgStats { iterations: it, relative_residual: res });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(CgStats { iterations: it, relative_residual: res });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = dot(&r, &r).sqrt() / b_norm;
        it += 1;
    }
    Ok(CgStats { iterations: it, relative_residual: res })
}
