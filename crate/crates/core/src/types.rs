//! Shared geometric and image types.
//!
//! Points are stored as `[f64; 3]` for both 2D and 3D data; the unused `z`
//! component of 2D data is kept at zero.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Point = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dim {
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3")]
    Three,
}

impl Dim {
    pub fn n(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    pub fn from_n(n: usize) -> Result<Self> {
        match n {
            2 => Ok(Dim::Two),
            3 => Ok(Dim::Three),
            other => Err(Error::InvalidConfig(format!("unsupported dimensionality {other}"))),
        }
    }
}

/// Centroids of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub dim: Dim,
    pub frame: usize,
    pub points: Vec<Point>,
}

impl ParticleSet {
    pub fn new(dim: Dim, frame: usize, points: Vec<Point>) -> Self {
        Self { dim, frame, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean distance from each particle to its nearest neighbor.
    pub fn mean_nn_spacing(&self) -> Option<f64> {
        if self.points.len() < 2 {
            return None;
        }
        let index = crate::descriptor::NeighborIndex::new(&self.points, self.dim);
        let total: f64 = (0..self.points.len())
            .map(|i| {
                index
                    .knn(&self.points[i], 1, Some(i))
                    .first()
                    .map(|n| n.dist)
                    .unwrap_or(0.0)
            })
            .sum();
        Some(total / self.points.len() as f64)
    }
}

/// Scalar raster. `x` varies fastest, then `y`, then `z`; 2D images have
/// `dims[2] == 1`. Pixel `(i, j, k)` has its center at coordinates `(i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub dim: Dim,
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(dim: Dim, dims: [usize; 3]) -> Self {
        let dims = normalize_dims(dim, dims);
        Self { dim, dims, data: vec![0.0; dims[0] * dims[1] * dims[2]] }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        let dim = Dim::from_n(dims.len())?;
        let mut d = [1; 3];
        d[..dims.len()].copy_from_slice(dims);
        if d.contains(&0) {
            return Err(Error::InvalidConfig(format!("empty image extent {dims:?}")));
        }
        Ok(Self::zeros(dim, d))
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Multilinear interpolation; samples outside the image footprint return 0.
    pub fn sample(&self, p: &Point) -> f64 {
        let n = self.dim.n();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..n {
            let max = (self.dims[a] - 1) as f64;
            // zero outside the pixel footprint, edge values within its outer half pixel
            if !(p[a] >= -0.5 && p[a] <= max + 0.5) {
                return 0.0;
            }
            let c = p[a].clamp(0.0, max);
            let f = c.floor();
            let mut i = f as usize;
            let mut t = c - f;
            if i + 1 >= self.dims[a] {
                if self.dims[a] == 1 {
                    t = 0.0;
                    i = 0;
                } else {
                    i = self.dims[a] - 2;
                    t = 1.0;
                }
            }
            base[a] = i;
            frac[a] = t;
        }
        let corners = 1usize << n;
        let mut acc = 0.0;
        for c in 0..corners {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..n {
                let bit = (c >> a) & 1;
                if bit == 1 {
                    w *= frac[a];
                    idx[a] = base[a] + 1;
                } else {
                    w *= 1.0 - frac[a];
                    idx[a] = base[a];
                }
            }
            if w != 0.0 {
                acc += w * self.get(idx[0], idx[1], idx[2]);
            }
        }
        acc
    }
}

pub(crate) fn normalize_dims(dim: Dim, mut dims: [usize; 3]) -> [usize; 3] {
    if dim == Dim::Two {
        dims[2] = 1;
    }
    dims
}

// Small vector helpers shared across modules.

#[inline]
pub fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Point, b: &Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: &Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let d = sub(a, b);
    dot(&d, &d)
}

#[inline]
pub fn cross(a: &Point, b: &Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
