//! CSV artifacts and raw `f32` images with a JSON header.
//!
//! Floats are written with Rust's shortest round-trip formatting, so the
//! same values always produce the same bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::globalstep::GridField;
use crate::postproc::TensorField;
use crate::tracker::TrackedPair;
use crate::trajectory::{Source, TrajectorySegment};
use crate::types::{Dim, Image, ParticleSet, Point};
use crate::{Error, Result};

const AXES: [&str; 3] = ["x", "y", "z"];

fn header(cols: impl IntoIterator<Item = String>) -> String {
    let mut s = cols.into_iter().collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

fn axis_cols(prefix: &str, suffix: &str, dim: Dim) -> Vec<String> {
    AXES[..dim.n()].iter().map(|a| format!("{prefix}{a}{suffix}")).collect()
}

fn push_point(out: &mut String, p: &Point, dim: Dim) {
    for v in &p[..dim.n()] {
        write!(out, ",{v}").unwrap();
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

/// `id,x,y[,z]`
pub fn particles_csv(set: &ParticleSet) -> String {
    let mut out = header(std::iter::once("id".to_string()).chain(axis_cols("", "", set.dim)));
    for (i, p) in set.points.iter().enumerate() {
        write!(out, "{i}").unwrap();
        push_point(&mut out, p, set.dim);
        out.push('\n');
    }
    out
}

pub fn write_particles(path: &Path, set: &ParticleSet) -> Result<()> {
    write_file(path, &particles_csv(set))
}

/// Reads an `id,x,y[,z]` file; the dimensionality comes from the header.
/// Rows keep file order; ids are not required to be contiguous.
pub fn read_particles(path: &Path, frame: usize) -> Result<ParticleSet> {
    let text = fs::read_to_string(path)?;
    parse_particles(&text, frame)
}

pub fn parse_particles(text: &str, frame: usize) -> Result<ParticleSet> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head: Vec<&str> = lines.next().ok_or_else(|| Error::Parse("empty particle file".into()))?.split(',').map(str::trim).collect();
    let dim = match head.as_slice() {
        ["id", "x", "y"] => Dim::Two,
        ["id", "x", "y", "z"] => Dim::Three,
        _ => return Err(Error::Parse(format!("unexpected particle header {head:?}"))),
    };
    let mut points = Vec::new();
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != head.len() {
            return Err(Error::Parse(format!("row {}: expected {} fields", row + 2, head.len())));
        }
        let mut p: Point = [0.0; 3];
        for a in 0..dim.n() {
            p[a] = fields[a + 1].parse().map_err(|_| Error::Parse(format!("row {}: bad number {:?}", row + 2, fields[a + 1])))?;
            if !p[a].is_finite() {
                return Err(Error::Parse(format!("row {}: non-finite coordinate", row + 2)));
            }
        }
        points.push(p);
    }
    Ok(ParticleSet::new(dim, frame, points))
}

/// `idA,xA,yA[,zA],ux,uy[,uz]`
pub fn matches_csv(dim: Dim, matches: &[TrackedPair]) -> String {
    let mut out = header(["idA".to_string()].into_iter().chain(axis_cols("", "A", dim)).chain(axis_cols("u", "", dim)));
    for m in matches {
        write!(out, "{}", m.a).unwrap();
        push_point(&mut out, &m.pos_a, dim);
        push_point(&mut out, &m.u, dim);
        out.push('\n');
    }
    out
}

pub fn write_matches(path: &Path, dim: Dim, matches: &[TrackedPair]) -> Result<()> {
    write_file(path, &matches_csv(dim, matches))
}

/// `x,y[,z],ux,uy[,uz]` per grid node.
pub fn grid_csv(field: &GridField) -> String {
    let dim = field.spec.dim;
    let mut out = header(axis_cols("", "", dim).into_iter().chain(axis_cols("u", "", dim)));
    for (i, u) in field.values.iter().enumerate() {
        let p = field.spec.node_position(i);
        let mut row = String::new();
        push_point(&mut row, &p, dim);
        push_point(&mut row, u, dim);
        out.push_str(&row[1..]);
        out.push('\n');
    }
    out
}

pub fn write_grid(path: &Path, field: &GridField) -> Result<()> {
    write_file(path, &grid_csv(field))
}

/// `traj_id,frame,x,y[,z],ux_cum,uy_cum[,uz_cum],extrapolated`
pub fn trajectories_csv(dim: Dim, trajectories: &[TrajectorySegment]) -> String {
    let mut out = header(
        ["traj_id".to_string(), "frame".to_string()]
            .into_iter()
            .chain(axis_cols("", "", dim))
            .chain(axis_cols("u", "_cum", dim))
            .chain(["extrapolated".to_string()]),
    );
    for (id, t) in trajectories.iter().enumerate() {
        for frame in t.start..=t.end() {
            write!(out, "{id},{frame}").unwrap();
            push_point(&mut out, &t.position(frame).unwrap(), dim);
            push_point(&mut out, &t.displacement(frame).unwrap(), dim);
            let flag = u8::from(t.source_at(frame) == Some(Source::Extrapolated));
            writeln!(out, ",{flag}").unwrap();
        }
    }
    out
}

pub fn write_trajectories(path: &Path, dim: Dim, trajectories: &[TrajectorySegment]) -> Result<()> {
    write_file(path, &trajectories_csv(dim, trajectories))
}

/// `x,y[,z],T11,T12,...,valid`, components row by row; `prefix` names the
/// tensor (`F`, `E`, ...).
pub fn tensor_csv(field: &TensorField, prefix: &str) -> String {
    let dim = field.spec.dim;
    let n = dim.n();
    let comps = (0..n).flat_map(|i| (0..n).map(move |j| (i, j)));
    let mut out = header(
        axis_cols("", "", dim)
            .into_iter()
            .chain(comps.clone().map(|(i, j)| format!("{prefix}{}{}", i + 1, j + 1)))
            .chain(["valid".to_string()]),
    );
    for (k, t) in field.tensors.iter().enumerate() {
        let mut row = String::new();
        push_point(&mut row, &field.spec.node_position(k), dim);
        for (i, j) in comps.clone() {
            write!(row, ",{}", t[(i, j)]).unwrap();
        }
        out.push_str(&row[1..]);
        writeln!(out, ",{}", u8::from(field.valid[k])).unwrap();
    }
    out
}

pub fn write_tensor(path: &Path, field: &TensorField, prefix: &str) -> Result<()> {
    write_file(path, &tensor_csv(field, prefix))
}

/// JSON sidecar of a raw image. `dims` lists the extent along x, y(, z);
/// x varies fastest in the data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageHeader {
    pub dims: Vec<usize>,
    pub dtype: String,
    pub order: String,
    /// Data file name relative to the header; defaults to the header path
    /// with a `.raw` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
}

fn raw_path(header_path: &Path, header: &ImageHeader) -> PathBuf {
    match &header.data {
        Some(name) => header_path.parent().unwrap_or(Path::new("")).join(name),
        None => header_path.with_extension("raw"),
    }
}

/// Writes `<stem>.json` and `<stem>.raw` (little-endian `f32`).
pub fn write_image(header_path: &Path, image: &Image) -> Result<()> {
    let header = ImageHeader {
        dims: image.dims[..image.dim.n()].to_vec(),
        dtype: "f32".into(),
        order: "row-major".into(),
        data: None,
    };
    let mut bytes = Vec::with_capacity(image.len() * 4);
    for v in &image.data {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let json = serde_json::to_string_pretty(&header).map_err(|e| Error::Parse(e.to_string()))?;
    write_file(header_path, &(json + "\n"))?;
    fs::write(raw_path(header_path, &header), bytes)?;
    Ok(())
}

pub fn read_image(header_path: &Path) -> Result<Image> {
    let text = fs::read_to_string(header_path)?;
    let header: ImageHeader = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", header_path.display())))?;
    if header.dtype != "f32" || header.order != "row-major" {
        return Err(Error::Parse(format!("unsupported image layout {}/{}", header.dtype, header.order)));
    }
    let mut image = Image::from_dims(&header.dims)?;
    let bytes = fs::read(raw_path(header_path, &header))?;
    if bytes.len() != image.len() * 4 {
        return Err(Error::Parse(format!("expected {} bytes of image data, found {}", image.len() * 4, bytes.len())));
    }
    for (v, chunk) in image.data.iter_mut().zip(bytes.chunks_exact(4)) {
        *v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    Ok(image)
}
