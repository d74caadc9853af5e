//! Deformation gradients and strains from gridded displacements, polar
//! decomposition, and benchmark metrics against synthetic ground truth.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::descriptor::NeighborIndex;
use crate::globalstep::{grid_to_scatter, GridField, GridSpec};
use crate::tracker::TrackResult;
use crate::types::{dist2, sub, Dim, ParticleSet, Point};
use crate::{Error, Result};

/// Determinants at or below this are treated as singular.
const SINGULAR_DET: f64 = 1e-12;

/// A d×d tensor per grid node, embedded in 3×3 (2D tensors live in the
/// upper-left block). Nodes whose stencil was one-sided are not `valid`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub spec: GridSpec,
    pub tensors: Vec<Matrix3<f64>>,
    pub valid: Vec<bool>,
}

/// Deformation gradient with its small and Green–Lagrange strains.
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    pub f: TensorField,
    pub small_strain: TensorField,
    pub green_lagrange: TensorField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrainMeasure {
    Small,
    #[default]
    GreenLagrange,
}

impl StrainMeasure {
    /// Strain of the displacement gradient `grad` (∇u).
    pub fn of_gradient(self, grad: &Matrix3<f64>, dim: Dim) -> Matrix3<f64> {
        let g = embed(grad, dim, 0.0);
        match self {
            StrainMeasure::Small => 0.5 * (g + g.transpose()),
            StrainMeasure::GreenLagrange => {
                let f = Matrix3::identity() + g;
                embed(&(0.5 * (f.transpose() * f - Matrix3::identity())), dim, 0.0)
            }
        }
    }
}

impl Kinematics {
    pub fn strain(&self, measure: StrainMeasure) -> &TensorField {
        match measure {
            StrainMeasure::Small => &self.small_strain,
            StrainMeasure::GreenLagrange => &self.green_lagrange,
        }
    }
}

/// Zeroes rows/columns beyond `dim` and puts `diag` on their diagonal.
fn embed(m: &Matrix3<f64>, dim: Dim, diag: f64) -> Matrix3<f64> {
    let mut out = *m;
    if dim == Dim::Two {
        for k in 0..3 {
            out[(2, k)] = 0.0;
            out[(k, 2)] = 0.0;
        }
        out[(2, 2)] = diag;
    }
    out
}

/// F = I + ∇u by central differences, one-sided (and flagged) on the grid
/// boundary.
pub fn deformation_gradient(u: &GridField) -> Result<Kinematics> {
    let spec = u.spec;
    let n = spec.dim.n();
    if spec.dims[..n].iter().any(|&d| d < 3) {
        return Err(Error::GridTooSmall(spec.dims));
    }
    let strides = [1, spec.dims[0], spec.dims[0] * spec.dims[1]];
    let count = spec.node_count();
    let mut grads = Vec::with_capacity(count);
    let mut valid = Vec::with_capacity(count);
    for i in 0..count {
        let c = spec.node_coords(i);
        let mut g = Matrix3::zeros();
        let mut interior = true;
        for a in 0..n {
            let s = strides[a];
            let h = spec.spacing[a];
            let (lo, hi, span) = if c[a] == 0 {
                interior = false;
                (i, i + s, h)
            } else if c[a] + 1 == spec.dims[a] {
                interior = false;
                (i - s, i, h)
            } else {
                (i - s, i + s, 2.0 * h)
            };
            for comp in 0..n {
                g[(comp, a)] = (u.values[hi][comp] - u.values[lo][comp]) / span;
            }
        }
        grads.push(g);
        valid.push(interior);
    }
    let dim = spec.dim;
    let field = |f: &dyn Fn(&Matrix3<f64>) -> Matrix3<f64>| TensorField { spec, tensors: grads.iter().map(f).collect(), valid: valid.clone() };
    Ok(Kinematics {
        f: field(&|g| embed(&(Matrix3::identity() + g), dim, 1.0)),
        small_strain: field(&|g| StrainMeasure::Small.of_gradient(g, dim)),
        green_lagrange: field(&|g| StrainMeasure::GreenLagrange.of_gradient(g, dim)),
    })
}

/// Polar decomposition F = R·U with U = (FᵀF)^½ from a symmetric
/// eigendecomposition. 2D tensors are passed embedded with F33 = 1.
pub fn polar_decompose(f: &Matrix3<f64>) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let det = f.determinant();
    if det <= SINGULAR_DET {
        return Err(Error::SingularF(det));
    }
    let eig = SymmetricEigen::new(f.transpose() * f);
    let v = eig.eigenvectors;
    let root = eig.eigenvalues.map(f64::sqrt);
    let u = v * Matrix3::from_diagonal(&root) * v.transpose();
    let u_inv = v * Matrix3::from_diagonal(&root.map(|x| 1.0 / x)) * v.transpose();
    let mut r = f * u_inv;
    // one Newton step tidies the rounding of the eigen route
    r = 0.5 * (r + r.transpose().try_inverse().ok_or(Error::SingularF(det))?);
    let u = 0.5 * (u + u.transpose());
    Ok((r, u))
}

/// Ground truth for one synthetic frame pair.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub reference: ParticleSet,
    /// True deformed positions, indexed like `reference`.
    pub deformed: Vec<Point>,
    /// Whether each deformed particle is inside the deformed frame.
    pub in_frame: Vec<bool>,
}

/// A reported correspondence with its displacement estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchSample {
    pub pos_a: Point,
    pub pos_b: Point,
    pub u: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub detected: usize,
    pub matched: usize,
    pub correct: usize,
    /// Matched / detected in the reference frame.
    pub tracking_ratio: f64,
    /// Correct / matched.
    pub correct_match_ratio: f64,
    /// Displacement RMS (vector norm) over correct matches, on the reported field.
    pub disp_rms: f64,
    /// Same, on the raw matched displacement B − A.
    pub local_disp_rms: f64,
    pub strain_rms: Option<f64>,
}

/// Detections further than this from every true particle are unassociated.
pub const ASSOCIATION_TOL: f64 = 1.0;

impl GroundTruth {
    fn associate(&self) -> (NeighborIndex, NeighborIndex, Vec<usize>) {
        let dim = self.reference.dim;
        let ids: Vec<usize> = (0..self.deformed.len()).filter(|&i| self.in_frame[i]).collect();
        let deformed: Vec<Point> = ids.iter().map(|&i| self.deformed[i]).collect();
        (NeighborIndex::new(&self.reference.points, dim), NeighborIndex::new(&deformed, dim), ids)
    }

    /// Scores `samples` against the truth. A sample is correct when both its
    /// endpoints lie within [`ASSOCIATION_TOL`] of the same true particle.
    pub fn evaluate(&self, samples: &[MatchSample], local: &[Point], detected: usize) -> Metrics {
        let (ref_index, def_index, ids) = self.associate();
        let tol = ASSOCIATION_TOL;
        let mut correct = 0;
        let (mut e2, mut l2) = (0.0, 0.0);
        for (s, lu) in samples.iter().zip(local) {
            let a = ref_index.nearest(&s.pos_a).filter(|n| n.dist <= tol).map(|n| n.index);
            let b = def_index.nearest(&s.pos_b).filter(|n| n.dist <= tol).map(|n| ids[n.index]);
            if let (Some(a), Some(b)) = (a, b) {
                if a == b {
                    correct += 1;
                    let truth = sub(&self.deformed[a], &self.reference.points[a]);
                    e2 += dist2(&s.u, &truth);
                    l2 += dist2(lu, &truth);
                }
            }
        }
        let ratio = |x: usize, y: usize| if y == 0 { 0.0 } else { x as f64 / y as f64 };
        let rms = |x: f64| if correct == 0 { f64::NAN } else { (x / correct as f64).sqrt() };
        Metrics {
            detected,
            matched: samples.len(),
            correct,
            tracking_ratio: ratio(samples.len(), detected),
            correct_match_ratio: ratio(correct, samples.len()),
            disp_rms: rms(e2),
            local_disp_rms: rms(l2),
            strain_rms: None,
        }
    }

    /// Metrics of a pair result, reporting the regularized field at the
    /// matched reference positions.
    pub fn evaluate_track(&self, result: &TrackResult) -> Metrics {
        let refs = result.reference_positions();
        let smooth = grid_to_scatter(&result.u_hat, &refs);
        let samples: Vec<MatchSample> =
            result.matches.iter().zip(&smooth).map(|(m, u)| MatchSample { pos_a: m.pos_a, pos_b: m.pos_b, u: *u }).collect();
        let local: Vec<Point> = result.matches.iter().map(|m| m.u).collect();
        self.evaluate(&samples, &local, result.reference_count)
    }
}

/// RMS over valid nodes inside `region` of the Frobenius distance between the
/// measured strain and the strain of the analytic displacement gradient.
pub fn strain_rms(
    kin: &Kinematics,
    measure: StrainMeasure,
    analytic_gradient: &dyn Fn(&Point) -> Matrix3<f64>,
    region: Option<(Point, Point)>,
) -> Option<f64> {
    let field = kin.strain(measure);
    let spec = field.spec;
    let n = spec.dim.n();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, e) in field.tensors.iter().enumerate() {
        if !field.valid[i] {
            continue;
        }
        let p = spec.node_position(i);
        if let Some((lo, hi)) = region {
            if (0..n).any(|a| p[a] < lo[a] || p[a] > hi[a]) {
                continue;
            }
        }
        let truth = measure.of_gradient(&analytic_gradient(&p), spec.dim);
        sum += (e - truth).norm_squared();
        count += 1;
    }
    (count > 0).then(|| (sum / count as f64).sqrt())
}

/// Axis-aligned bounding box of `points`.
pub fn bounding_box(points: &[Point]) -> Option<(Point, Point)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(mut lo, mut hi), p| {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
        (lo, hi)
    }))
}
