//! Runs a preset at one seeding density: synthesizes the frame sequence,
//! detects, tracks, and scores every pair against the ground truth.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serialtrack_core::detect::detect;
use serialtrack_core::globalstep::grid_to_scatter;
use serialtrack_core::io;
use serialtrack_core::postproc::{bounding_box, deformation_gradient, strain_rms, GroundTruth, Metrics, StrainMeasure};
use serialtrack_core::synth::{apply_deformation, poisson_disc_in_box, poisson_disc_sample, render_image, render_shaped, DeformedSet, SynthImageSpec};
use serialtrack_core::tracker::{Rigidity, TrackResult, TrackingConfig, TrackingMode};
use serialtrack_core::trajectory::{cumulative_track, double_frame_track, incremental_cumulative, Frame, PairOutcome};
use serialtrack_core::{descriptor::NeighborIndex, Image, ParticleSet, Point};

use crate::error::{CliError, ErrorRecord};
use crate::presets::{Parameter, Preset};

/// Independent stream seeds derived from one run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A true particle counts as detected when a centroid lies this close.
pub const DETECTION_TOL: f64 = 0.5;

const PARTICLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 1 << 20;

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    pub density: f64,
    pub max_steps: Option<usize>,
    pub noise_pct: Option<f64>,
    pub tracking: Option<TrackingConfig>,
    pub write_images: bool,
    pub strain_measure: StrainMeasure,
}

impl SuiteOptions {
    pub fn new(seed: u64, density: f64) -> Self {
        SuiteOptions {
            seed,
            density,
            max_steps: None,
            noise_pct: None,
            tracking: None,
            write_images: false,
            strain_measure: StrainMeasure::GreenLagrange,
        }
    }
}

/// Per-pair outcome and scores. Truth-based fields are absent outside benchmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub reference: usize,
    pub deformed: usize,
    pub value: Option<f64>,
    pub status: String,
    pub error: Option<ErrorRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub match_ratio_history: Vec<f64>,
    pub tracking_ratio: f64,
    pub metrics: Option<Metrics>,
}

impl PairRow {
    pub fn from_outcome(o: &PairOutcome, value: Option<f64>) -> Self {
        match &o.result {
            Ok(r) => PairRow {
                reference: o.reference,
                deformed: o.deformed,
                value,
                status: "ok".into(),
                error: None,
                iterations: r.iterations,
                converged: r.converged,
                match_ratio_history: r.match_ratio_history.clone(),
                tracking_ratio: r.tracking_ratio(),
                metrics: None,
            },
            Err(e) => PairRow {
                reference: o.reference,
                deformed: o.deformed,
                value,
                status: "error".into(),
                error: Some(e.into()),
                iterations: 0,
                converged: false,
                match_ratio_history: Vec::new(),
                tracking_ratio: 0.0,
                metrics: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub frame: usize,
    pub in_frame: usize,
    pub detected: usize,
    /// True particles with a detection within `DETECTION_TOL`, over `in_frame`.
    pub detection_ratio: f64,
}

/// Tracked fraction against frame 0 as the sequence rotates away from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub frame: usize,
    pub value: f64,
    /// Correctly tracked frame-0 detections over all frame-0 detections.
    pub tracked_fraction: f64,
    /// Frame-0 particles still inside the field of view.
    pub geometric_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarSummary {
    pub row: f64,
    /// Least-squares amplitude of the recovered profile on the known waveform.
    pub amplitude_right: f64,
    pub amplitude_left: f64,
    pub split_x: f64,
    pub truth_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub preset: String,
    pub seeding_density: f64,
    pub parameter: String,
    pub mode: TrackingMode,
    pub rigidity: Rigidity,
    pub rows: Vec<PairRow>,
    pub detection: Vec<DetectionRow>,
    /// Hard tracking of the same images, for soft presets.
    pub hard_rows: Option<Vec<PairRow>>,
    pub overlap: Option<Vec<OverlapRow>>,
    pub star: Option<StarSummary>,
    pub artifacts: Vec<String>,
}

impl SuiteReport {
    pub fn last_ok(&self) -> Option<&PairRow> {
        self.rows.iter().rev().find(|r| r.status == "ok")
    }
}

/// Ground-truth particles and rendered images of a preset sequence.
pub struct Sequence {
    pub truth: Vec<DeformedSet>,
    pub images: Vec<Image>,
}

pub fn synthesize(preset: &Preset, opts: &SuiteOptions) -> Result<Sequence, CliError> {
    let frames = opts.max_steps.map_or(preset.frames(), |s| (s + 1).min(preset.frames()));
    let seed = derive_seed(opts.seed, PARTICLE_STREAM);
    let reference = if preset.region == full_region(&preset.canvas) {
        poisson_disc_sample(&preset.canvas, preset.min_dist, opts.density, seed)?
    } else {
        let (lo, hi) = preset.region;
        let volume: f64 = (0..preset.dim.n()).map(|a| hi[a] - lo[a] + 1.0).product();
        let count = (opts.density * volume).round() as usize;
        poisson_disc_in_box(preset.dim, lo, hi, count, preset.min_dist, seed)?
    };
    let truth = (0..frames)
        .map(|t| apply_deformation(&reference, &preset.deformation(t), &preset.canvas))
        .collect::<serialtrack_core::Result<Vec<_>>>()?;
    let images = (0..frames)
        .into_par_iter()
        .map(|t| {
            let mut spec = SynthImageSpec::new(&preset.canvas, opts.density);
            spec.noise_pct = opts.noise_pct.unwrap_or(preset.noise_pct);
            spec.min_dist = preset.min_dist;
            spec.rng_seed = derive_seed(opts.seed, NOISE_STREAM + t as u64);
            let particles = &truth[t].particles;
            if preset.soft() {
                let def = preset.deformation(t);
                render_shaped(particles, &spec, |i| Some(Matrix3::identity() + def.gradient(&reference.points[i])))
            } else {
                render_image(particles, &spec)
            }
        })
        .collect::<serialtrack_core::Result<Vec<_>>>()?;
    Ok(Sequence { truth, images })
}

fn full_region(canvas: &[usize]) -> (Point, Point) {
    let mut hi = [0.0; 3];
    for (a, &n) in canvas.iter().enumerate() {
        hi[a] = n as f64 - 1.0;
    }
    ([0.0; 3], hi)
}

fn detection_row(frame: usize, truth: &DeformedSet, found: &ParticleSet) -> DetectionRow {
    let in_frame: Vec<Point> = truth.particles.points.iter().zip(&truth.in_frame).filter(|(_, f)| **f).map(|(p, _)| *p).collect();
    let index = NeighborIndex::new(&found.points, found.dim);
    let hit = in_frame.iter().filter(|p| index.knn(p, 1, None).first().is_some_and(|n| n.dist <= DETECTION_TOL)).count();
    DetectionRow {
        frame,
        in_frame: in_frame.len(),
        detected: found.len(),
        detection_ratio: if in_frame.is_empty() { 0.0 } else { hit as f64 / in_frame.len() as f64 },
    }
}

fn truth_pair(seq: &Sequence, r: usize, d: usize) -> GroundTruth {
    GroundTruth {
        reference: seq.truth[r].particles.clone(),
        deformed: seq.truth[d].particles.points.clone(),
        in_frame: seq.truth[d].in_frame.clone(),
    }
}

/// Displacement gradient of the motion from frame `r` to frame `d`, at a
/// point of frame `r` (exact for the homogeneous presets and whenever `r` is 0).
fn increment_gradient(preset: &Preset, r: usize, d: usize, p: &Point) -> Matrix3<f64> {
    let f = |t: usize| Matrix3::identity() + preset.deformation(t).gradient(p);
    let fr_inv = f(r).try_inverse().unwrap_or_else(Matrix3::identity);
    f(d) * fr_inv - Matrix3::identity()
}

fn score(preset: &Preset, seq: &Sequence, outcome: &PairOutcome, measure: StrainMeasure) -> PairRow {
    let mut row = PairRow::from_outcome(outcome, Some(preset.values[outcome.deformed]));
    if let Ok(res) = &outcome.result {
        let mut m = truth_pair(seq, outcome.reference, outcome.deformed).evaluate_track(res);
        m.strain_rms = pair_strain(preset, outcome.reference, outcome.deformed, res, measure);
        row.metrics = Some(m);
    }
    row
}

fn pair_strain(preset: &Preset, r: usize, d: usize, res: &TrackResult, measure: StrainMeasure) -> Option<f64> {
    let kin = deformation_gradient(&res.u_hat).ok()?;
    let region = bounding_box(&res.reference_positions());
    strain_rms(&kin, measure, &|p| increment_gradient(preset, r, d, p), region)
}

fn track(frames: &[Frame], cfg: &TrackingConfig) -> Result<(Vec<PairOutcome>, Option<Vec<serialtrack_core::trajectory::TrajectorySegment>>), CliError> {
    Ok(match cfg.mode {
        TrackingMode::Incremental => {
            let run = incremental_cumulative(frames, cfg)?;
            (run.pairs, Some(run.trajectories))
        }
        TrackingMode::Cumulative => (cumulative_track(frames, cfg)?, None),
        TrackingMode::DoubleFrame => (double_frame_track(frames, cfg)?, None),
    })
}

/// Artifact sink rooted at a suite directory; records relative paths.
struct Artifacts {
    root: Option<PathBuf>,
    prefix: String,
    written: Vec<String>,
}

impl Artifacts {
    fn put(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        if let Some(root) = &self.root {
            std::fs::create_dir_all(root)?;
            std::fs::write(root.join(name), contents)?;
            self.written.push(format!("{}/{name}", self.prefix));
        }
        Ok(())
    }

    fn image(&mut self, name: &str, image: &Image) -> Result<(), CliError> {
        if let Some(root) = &self.root {
            io::write_image(&root.join(format!("{name}.json")), image)?;
            self.written.push(format!("{}/{name}.json", self.prefix));
            self.written.push(format!("{}/{name}.raw", self.prefix));
        }
        Ok(())
    }
}

pub fn suite_dir(preset: &str, density: f64) -> String {
    format!("{preset}/sd_{density}")
}

fn pair_name(r: usize, d: usize) -> String {
    format!("pair_{r:03}_{d:03}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn metrics_csv(parameter: &str, rows: &[PairRow]) -> String {
    let mut out = format!(
        "reference,deformed,{parameter},status,tracking_ratio,correct_match_ratio,disp_rms,local_disp_rms,strain_rms,iterations,converged\n"
    );
    for r in rows {
        let m = r.metrics.as_ref();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.reference,
            r.deformed,
            opt(r.value),
            r.status,
            r.tracking_ratio,
            opt(m.map(|m| m.correct_match_ratio)),
            opt(m.map(|m| m.disp_rms)),
            opt(m.map(|m| m.local_disp_rms)),
            opt(m.and_then(|m| m.strain_rms)),
            r.iterations,
            u8::from(r.converged)
        )
        .unwrap();
    }
    out
}

/// Runs one preset at one density; artifacts go under `out/<preset>/sd_<density>/`.
pub fn run_suite(preset: &Preset, opts: &SuiteOptions, out: Option<&Path>) -> Result<SuiteReport, CliError> {
    let prefix = suite_dir(preset.name, opts.density);
    let mut art = Artifacts { root: out.map(|o| o.join(&prefix)), prefix, written: Vec::new() };
    let cfg = opts.tracking.clone().unwrap_or_else(|| preset.tracking.clone());
    let seq = synthesize(preset, opts)?;
    let n = seq.images.len();

    let detected = seq
        .images
        .par_iter()
        .enumerate()
        .map(|(t, img)| detect(img, &cfg.detection).map(|d| ParticleSet::new(d.particles.dim, t, d.particles.points)))
        .collect::<serialtrack_core::Result<Vec<_>>>()?;
    let detection: Vec<DetectionRow> = (0..n).map(|t| detection_row(t, &seq.truth[t], &detected[t])).collect();
    let frames: Vec<Frame> = detected
        .iter()
        .zip(&seq.images)
        .map(|(p, img)| Frame { particles: p.clone(), image: (cfg.rigidity == Rigidity::Soft).then(|| img.clone()) })
        .collect();

    let (outcomes, trajectories) = track(&frames, &cfg)?;
    let rows: Vec<PairRow> = outcomes.iter().map(|o| score(preset, &seq, o, opts.strain_measure)).collect();

    let hard_rows = if cfg.rigidity == Rigidity::Soft {
        let hard = TrackingConfig { rigidity: Rigidity::Hard, ..cfg.clone() };
        let (hard_outcomes, _) = track(&frames, &hard)?;
        Some(hard_outcomes.iter().map(|o| score(preset, &seq, o, opts.strain_measure)).collect::<Vec<_>>())
    } else {
        None
    };

    let overlap = if preset.parameter == Parameter::RotationDeg {
        let cum = TrackingConfig { mode: TrackingMode::Cumulative, ..cfg.clone() };
        let outcomes = cumulative_track(&frames, &cum)?;
        let in0: Vec<bool> = seq.truth[0].in_frame.clone();
        let n0 = in0.iter().filter(|f| **f).count().max(1) as f64;
        let mut rows = vec![OverlapRow { frame: 0, value: preset.values[0], tracked_fraction: 1.0, geometric_fraction: 1.0 }];
        for o in &outcomes {
            let d = o.deformed;
            let tracked = match &o.result {
                Ok(res) => truth_pair(&seq, 0, d).evaluate_track(res).correct as f64 / detected[0].len().max(1) as f64,
                Err(_) => 0.0,
            };
            let both = in0.iter().zip(&seq.truth[d].in_frame).filter(|(a, b)| **a && **b).count() as f64;
            rows.push(OverlapRow { frame: d, value: preset.values[d], tracked_fraction: tracked, geometric_fraction: both / n0 });
        }
        Some(rows)
    } else {
        None
    };

    let mut star = None;
    if preset.parameter == Parameter::Amplitude {
        if let Some(Ok(res)) = outcomes.last().map(|o| &o.result) {
            let (summary, profile) = star_profile(preset, res);
            art.put("profile.csv", &profile)?;
            star = Some(summary);
        }
    }

    // artifacts
    art.put("metrics.csv", &metrics_csv(preset.parameter.name(), &rows))?;
    if let Some(h) = &hard_rows {
        art.put("metrics_hard.csv", &metrics_csv(preset.parameter.name(), h))?;
    }
    let mut det = String::from("frame,in_frame,detected,detection_ratio\n");
    for d in &detection {
        writeln!(det, "{},{},{},{}", d.frame, d.in_frame, d.detected, d.detection_ratio).unwrap();
    }
    art.put("detection.csv", &det)?;
    if let Some(ov) = &overlap {
        let mut s = String::from("frame,rotation_deg,tracked_fraction,geometric_fraction\n");
        for r in ov {
            writeln!(s, "{},{},{},{}", r.frame, r.value, r.tracked_fraction, r.geometric_fraction).unwrap();
        }
        art.put("overlap.csv", &s)?;
    }
    for (t, p) in detected.iter().enumerate() {
        art.put(&format!("particles_{t:03}.csv"), &io::particles_csv(p))?;
        let inside: Vec<Point> = seq.truth[t].particles.points.iter().zip(&seq.truth[t].in_frame).filter(|(_, f)| **f).map(|(p, _)| *p).collect();
        art.put(&format!("truth_{t:03}.csv"), &io::particles_csv(&ParticleSet::new(preset.dim, t, inside)))?;
        if opts.write_images {
            art.image(&format!("frame_{t:03}"), &seq.images[t])?;
        }
    }
    for o in &outcomes {
        if let Ok(res) = &o.result {
            let name = pair_name(o.reference, o.deformed);
            art.put(&format!("{name}_matches.csv"), &io::matches_csv(preset.dim, &res.matches))?;
            art.put(&format!("{name}_field.csv"), &io::grid_csv(&res.u_hat))?;
        }
    }
    if let Some(Ok(res)) = outcomes.last().map(|o| &o.result) {
        if let Ok(kin) = deformation_gradient(&res.u_hat) {
            art.put("final_F.csv", &io::tensor_csv(&kin.f, "F"))?;
        }
    }
    if let Some(traj) = &trajectories {
        art.put("trajectories.csv", &io::trajectories_csv(preset.dim, traj))?;
    }

    Ok(SuiteReport {
        preset: preset.name.to_string(),
        seeding_density: opts.density,
        parameter: preset.parameter.name().to_string(),
        mode: cfg.mode,
        rigidity: cfg.rigidity,
        rows,
        detection,
        hard_rows,
        overlap,
        star,
        artifacts: art.written,
    })
}

/// Boundary between the fine-wavelength region and the rest of the star pattern.
pub const STAR_SPLIT_X: f64 = 500.0;

/// Center-row profile of the recovered vertical displacement and the
/// least-squares amplitude on the known waveform right and left of the split.
fn star_profile(preset: &Preset, res: &TrackResult) -> (StarSummary, String) {
    let spec = preset.deformation(1);
    let row = (preset.canvas[1] as f64 - 1.0) / 2.0;
    let xs: Vec<Point> = (0..preset.canvas[0]).map(|x| [x as f64, row, 0.0]).collect();
    let u = grid_to_scatter(&res.u_hat, &xs);
    let mut csv = String::from("x,uy,uy_true\n");
    let (mut num_r, mut den_r, mut num_l, mut den_l) = (0.0, 0.0, 0.0, 0.0);
    let amplitude = preset.values[1];
    for (p, v) in xs.iter().zip(&u) {
        let wave = (TAU * p[0] / spec.star_period(p[0])).sin();
        writeln!(csv, "{},{},{}", p[0], v[1], amplitude * wave).unwrap();
        if p[0] > STAR_SPLIT_X {
            num_r += v[1] * wave;
            den_r += wave * wave;
        } else {
            num_l += v[1] * wave;
            den_l += wave * wave;
        }
    }
    let summary = StarSummary {
        row,
        amplitude_right: num_r / den_r,
        amplitude_left: num_l / den_l,
        split_x: STAR_SPLIT_X,
        truth_amplitude: amplitude,
    };
    (summary, csv)
}
