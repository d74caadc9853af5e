//! Benchmark presets: synthetic deformation sequences with their imaging and
//! tracking parameters.

use serialtrack_core::synth::DeformationSpec;
use serialtrack_core::tracker::{Rigidity, TrackingConfig, TrackingMode};
use serialtrack_core::{Dim, Point};

pub const SWEEP_2D: [f64; 3] = [0.003, 0.006, 0.012];
pub const SWEEP_3D: [f64; 3] = [1e-4, 5e-4, 1e-3];
/// Default image noise, as a fraction of the particle amplitude.
pub const NOISE_PCT: f64 = 0.05;

/// What a preset varies along its sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameter {
    Shift,
    RotationDeg,
    Stretch,
    TanGamma,
    Amplitude,
}

impl Parameter {
    pub fn name(self) -> &'static str {
        match self {
            Parameter::Shift => "shift",
            Parameter::RotationDeg => "rotation_deg",
            Parameter::Stretch => "stretch",
            Parameter::TanGamma => "tan_gamma",
            Parameter::Amplitude => "amplitude",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub dim: Dim,
    pub canvas: Vec<usize>,
    /// Box the reference particles are seeded in.
    pub region: (Point, Point),
    pub parameter: Parameter,
    /// Parameter value of every frame; frame 0 is undeformed.
    pub values: Vec<f64>,
    pub tracking: TrackingConfig,
    pub densities: Vec<f64>,
    pub noise_pct: f64,
    pub min_dist: f64,
}

impl Preset {
    pub fn frames(&self) -> usize {
        self.values.len()
    }

    fn center(&self) -> Point {
        let mut c = [0.0; 3];
        for (a, &n) in self.canvas.iter().enumerate() {
            c[a] = (n as f64 - 1.0) / 2.0;
        }
        c
    }

    /// Total deformation of frame `t` relative to frame 0.
    pub fn deformation(&self, t: usize) -> DeformationSpec {
        let v = self.values[t];
        let center = self.center();
        match self.parameter {
            Parameter::Shift => DeformationSpec::Translation { shift: [v, 0.0, 0.0] },
            Parameter::RotationDeg => DeformationSpec::Rotation { degrees: v, center },
            Parameter::Stretch => DeformationSpec::UniaxialStretch { axis: 0, ratio: v, center },
            Parameter::TanGamma => DeformationSpec::SimpleShear { displaced: 0, gradient: 1, tan_gamma: v, center },
            Parameter::Amplitude => DeformationSpec::star(v),
        }
    }

    pub fn soft(&self) -> bool {
        self.tracking.rigidity == Rigidity::Soft
    }
}

fn steps(start: f64, step: f64, count: usize) -> Vec<f64> {
    // computed from integers so values print exactly as 0.1, 0.2, ...
    (0..=count).map(|i| ((start / step).round() + i as f64) * step).map(|v| (v * 1e9).round() / 1e9).collect()
}

fn tracking(mode: TrackingMode, rigidity: Rigidity, search_radius: f64) -> TrackingConfig {
    let mut t = TrackingConfig { mode, rigidity, search_radius, k_start: 25, ..TrackingConfig::default() };
    t.detection.intensity_threshold = 0.5;
    t.detection.p_size = 3.0;
    t
}

fn full(canvas: &[usize]) -> (Point, Point) {
    let mut hi = [0.0; 3];
    for (a, &n) in canvas.iter().enumerate() {
        hi[a] = n as f64 - 1.0;
    }
    ([0.0; 3], hi)
}

/// The seeding box of a canvas widened along x to leave room for motion:
/// particles occupy x ∈ [margin, width - 1 - margin].
fn inset_x(canvas: &[usize], margin: f64) -> (Point, Point) {
    let (mut lo, mut hi) = full(canvas);
    lo[0] += margin;
    hi[0] -= margin;
    (lo, hi)
}

pub const NAMES: [&str; 11] = [
    "translation2d",
    "translation3d",
    "rotation2d",
    "rotation3d",
    "stretch2d",
    "stretch3d",
    "shear2d",
    "shear3d",
    "star2d",
    "soft_stretch2d",
    "soft_shear2d",
];

pub fn preset(name: &str) -> Option<Preset> {
    let name: &'static str = NAMES.iter().find(|n| **n == name)?;
    use Parameter::*;
    use Rigidity::{Hard, Soft};
    use TrackingMode::{Cumulative, Incremental};
    let inf = f64::INFINITY;
    let sq2 = vec![512, 512];
    let cube = vec![64, 64, 64];
    let make = |name, dim, canvas: Vec<usize>, region, parameter, values, tracking, densities: &[f64]| Preset {
        name,
        dim,
        canvas,
        region,
        parameter,
        values,
        tracking,
        densities: densities.to_vec(),
        noise_pct: NOISE_PCT,
        min_dist: 5.0,
    };
    let p = match name {
        "translation2d" => make(name, Dim::Two, sq2.clone(), full(&sq2), Shift, steps(0.0, 0.1, 40), tracking(Incremental, Hard, inf), &SWEEP_2D),
        "translation3d" => make(name, Dim::Three, cube.clone(), full(&cube), Shift, steps(0.0, 0.1, 40), tracking(Incremental, Hard, inf), &SWEEP_3D),
        "rotation2d" => make(name, Dim::Two, sq2.clone(), full(&sq2), RotationDeg, steps(0.0, 10.0, 18), tracking(Incremental, Hard, inf), &SWEEP_2D),
        "rotation3d" => make(name, Dim::Three, cube.clone(), full(&cube), RotationDeg, steps(0.0, 10.0, 18), tracking(Incremental, Hard, inf), &SWEEP_3D),
        // stretched about the center to λ = 3: a 3× wide canvas keeps the
        // central third in view
        "stretch2d" => {
            let canvas = vec![1536, 512];
            let region = inset_x(&canvas, 518.0);
            make(name, Dim::Two, canvas, region, Stretch, steps(1.0, 0.1, 20), tracking(Cumulative, Hard, 50.0), &SWEEP_2D)
        }
        "stretch3d" => {
            let canvas = vec![192, 64, 64];
            let region = inset_x(&canvas, 66.0);
            make(name, Dim::Three, canvas, region, Stretch, steps(1.0, 0.1, 20), tracking(Cumulative, Hard, 50.0), &SWEEP_3D)
        }
        // tan γ = 0.45 moves the top and bottom rows by ±0.225 of the height
        "shear2d" => {
            let canvas = vec![768, 512];
            let region = inset_x(&canvas, 128.0);
            make(name, Dim::Two, canvas, region, TanGamma, steps(0.0, 0.05, 9), tracking(Cumulative, Hard, 50.0), &SWEEP_2D)
        }
        "shear3d" => {
            let canvas = vec![96, 64, 64];
            let region = inset_x(&canvas, 16.0);
            make(name, Dim::Three, canvas, region, TanGamma, steps(0.0, 0.05, 9), tracking(Cumulative, Hard, 50.0), &SWEEP_3D)
        }
        "star2d" => {
            let canvas = vec![4001, 501];
            let mut p = make(name, Dim::Two, canvas.clone(), full(&canvas), Amplitude, vec![0.0, 2.0], tracking(Incremental, Hard, 50.0), &SWEEP_2D);
            p.noise_pct = 0.0;
            p
        }
        "soft_stretch2d" => {
            let canvas = vec![768, 512];
            let region = inset_x(&canvas, 136.0);
            make(name, Dim::Two, canvas, region, Stretch, steps(1.0, 0.1, 5), tracking(Cumulative, Soft, 50.0), &SWEEP_2D)
        }
        "soft_shear2d" => {
            let canvas = vec![768, 512];
            let region = inset_x(&canvas, 128.0);
            make(name, Dim::Two, canvas, region, TanGamma, steps(0.0, 0.05, 9), tracking(Cumulative, Soft, 50.0), &SWEEP_2D)
        }
        _ => return None,
    };
    Some(p)
}
