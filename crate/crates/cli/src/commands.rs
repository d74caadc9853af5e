//! The four commands. Each returns a `Summary`; `run` writes it as
//! `summary.json` next to the artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serialtrack_core::detect::detect;
use serialtrack_core::io;
use serialtrack_core::postproc::deformation_gradient;
use serialtrack_core::synth::{apply_deformation, poisson_disc_sample, render_image, render_shaped};
use serialtrack_core::tracker::{Rigidity, TrackingMode};
use serialtrack_core::trajectory::{cumulative_track, double_frame_track, incremental_cumulative, Frame};

use crate::bench::{derive_seed, run_suite, PairRow, SuiteOptions, SuiteReport};
use crate::config::{Command, RunConfig, SCHEMA_VERSION};
use crate::error::{CliError, ErrorRecord};
use crate::presets::preset;

pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub command: Command,
    /// `"ok"` or `"error"`.
    pub status: String,
    pub error: Option<ErrorRecord>,
    pub seed: u64,
    pub wall_clock_s: f64,
    /// Paths relative to the output directory, sorted.
    pub artifacts: Vec<String>,
    pub frames: usize,
    pub pairs: Vec<PairRow>,
    pub suites: Vec<SuiteReport>,
}

impl Summary {
    fn new(command: Command, seed: u64) -> Self {
        Summary {
            schema: SCHEMA_VERSION,
            command,
            status: "ok".into(),
            error: None,
            seed,
            wall_clock_s: 0.0,
            artifacts: Vec::new(),
            frames: 0,
            pairs: Vec::new(),
            suites: Vec::new(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_parallel: Option<usize>,
}

/// Output sink that records what it writes.
struct Out<'a> {
    root: &'a Path,
    written: Vec<String>,
}

impl Out<'_> {
    fn text(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.root.join(name);
        if let Some(p) = path.parent() {
            std::fs::create_dir_all(p)?;
        }
        std::fs::write(path, contents)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn image(&mut self, name: &str, image: &serialtrack_core::Image) -> Result<(), CliError> {
        io::write_image(&self.root.join(format!("{name}.json")), image)?;
        self.written.push(format!("{name}.json"));
        self.written.push(format!("{name}.raw"));
        Ok(())
    }
}

/// Validates `cfg` and runs it. Configuration errors come back as `Err`
/// before anything is written; pipeline failures produce an error summary.
pub fn run(cfg: &RunConfig, ov: &Overrides) -> Result<Summary, CliError> {
    cfg.validate()?;
    if ov.max_parallel == Some(0) {
        return Err(CliError::ConfigInvalid("max_parallel must be at least 1".into()));
    }
    let out = ov
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| CliError::ConfigInvalid("no output directory given".into()))?;
    let seed = ov.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let threads = ov.max_parallel.or(cfg.max_parallel).unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::ConfigInvalid(e.to_string()))?;

    let started = Instant::now();
    let mut summary = Summary::new(cfg.command, seed);
    std::fs::create_dir_all(&out)?;
    let result = pool.install(|| {
        let mut sink = Out { root: &out, written: Vec::new() };
        let r = match cfg.command {
            Command::Synth => synth(cfg, seed, &mut sink, &mut summary),
            Command::Detect => detect_cmd(cfg, &mut sink, &mut summary),
            Command::Track => track(cfg, &mut sink, &mut summary),
            Command::Benchmark => benchmark(cfg, seed, &out, &mut summary),
        };
        summary.artifacts.extend(sink.written);
        r
    });
    if let Err(e) = result {
        if matches!(e, CliError::Output(_)) {
            return Err(e);
        }
        summary.status = "error".into();
        summary.error = Some(e.record());
    }
    summary.wall_clock_s = started.elapsed().as_secs_f64();
    summary.artifacts.push("summary.json".into());
    summary.artifacts.sort();
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(out.join("summary.json"), json + "\n")?;
    Ok(summary)
}

fn synth(cfg: &RunConfig, seed: u64, out: &mut Out, summary: &mut Summary) -> Result<(), CliError> {
    let s = cfg.synth.as_ref().expect("validated");
    let reference = poisson_disc_sample(&s.image.dims, s.image.min_dist, s.image.seeding_density, derive_seed(seed, 1))?;
    let mut truth = vec![reference.clone()];
    for d in &s.deformations {
        truth.push(apply_deformation(&reference, d, &s.image.dims)?.particles);
    }
    let images = truth
        .par_iter()
        .enumerate()
        .map(|(t, particles)| {
            let mut spec = s.image.clone();
            spec.rng_seed = derive_seed(seed ^ s.image.rng_seed, (1 << 20) + t as u64);
            if t == 0 {
                render_image(particles, &spec)
            } else {
                let def = &s.deformations[t - 1];
                render_shaped(particles, &spec, |i| Some(nalgebra::Matrix3::identity() + def.gradient(&reference.points[i])))
            }
        })
        .collect::<serialtrack_core::Result<Vec<_>>>()?;
    for (t, (img, p)) in images.iter().zip(&truth).enumerate() {
        out.image(&format!("frame_{t:03}"), img)?;
        let mut set = p.clone();
        set.frame = t;
        out.text(&format!("truth_{t:03}.csv"), &io::particles_csv(&set))?;
    }
    summary.frames = images.len();
    Ok(())
}

fn detect_cmd(cfg: &RunConfig, out: &mut Out, summary: &mut Summary) -> Result<(), CliError> {
    let tracking = cfg.tracking();
    for (t, path) in cfg.inputs.iter().enumerate() {
        let image = io::read_image(path)?;
        let found = detect(&image, &tracking.detection)?;
        let mut set = found.particles;
        set.frame = t;
        out.text(&format!("particles_{t:03}.csv"), &io::particles_csv(&set))?;
    }
    summary.frames = cfg.inputs.len();
    Ok(())
}

fn load_frame(path: &Path, t: usize, cfg: &serialtrack_core::tracker::TrackingConfig) -> Result<Frame, CliError> {
    let is_image = path.extension().is_some_and(|e| e == "json");
    Ok(if is_image {
        Frame::detect(io::read_image(path)?, cfg)?
    } else {
        if cfg.rigidity == Rigidity::Soft {
            return Err(CliError::ConfigInvalid("soft tracking needs image inputs".into()));
        }
        Frame::from_particles(io::read_particles(path, t)?)
    })
}

fn track(cfg: &RunConfig, out: &mut Out, summary: &mut Summary) -> Result<(), CliError> {
    let tracking = cfg.tracking();
    let frames = cfg
        .inputs
        .iter()
        .enumerate()
        .map(|(t, p)| load_frame(p, t, &tracking))
        .collect::<Result<Vec<_>, _>>()?;
    let dim = frames[0].particles.dim;
    summary.frames = frames.len();
    for (t, f) in frames.iter().enumerate() {
        let mut set = f.particles.clone();
        set.frame = t;
        out.text(&format!("particles_{t:03}.csv"), &io::particles_csv(&set))?;
    }
    let (pairs, trajectories) = match tracking.mode {
        TrackingMode::Incremental => {
            let run = incremental_cumulative(&frames, &tracking)?;
            (run.pairs, Some(run.trajectories))
        }
        TrackingMode::Cumulative => (cumulative_track(&frames, &tracking)?, None),
        TrackingMode::DoubleFrame => (double_frame_track(&frames, &tracking)?, None),
    };
    for o in &pairs {
        summary.pairs.push(PairRow::from_outcome(o, None));
        if let Ok(res) = &o.result {
            let name = format!("pair_{:03}_{:03}", o.reference, o.deformed);
            out.text(&format!("{name}_matches.csv"), &io::matches_csv(dim, &res.matches))?;
            out.text(&format!("{name}_field.csv"), &io::grid_csv(&res.u_hat))?;
            if let Ok(kin) = deformation_gradient(&res.u_hat) {
                out.text(&format!("{name}_F.csv"), &io::tensor_csv(&kin.f, "F"))?;
            }
        }
    }
    if let Some(t) = &trajectories {
        out.text("trajectories.csv", &io::trajectories_csv(dim, t))?;
    }
    if pairs.iter().all(|o| o.result.is_err()) {
        if let Some(Err(e)) = pairs.into_iter().next().map(|o| o.result) {
            return Err(e.into());
        }
    }
    Ok(())
}

fn benchmark(cfg: &RunConfig, seed: u64, out: &Path, summary: &mut Summary) -> Result<(), CliError> {
    let b = cfg.benchmark.as_ref().expect("validated");
    let p = preset(&b.preset).expect("validated");
    let densities = b.seeding_densities.clone().unwrap_or_else(|| p.densities.clone());
    summary.frames = b.max_steps.map_or(p.frames(), |s| (s + 1).min(p.frames()));
    let reports = densities
        .par_iter()
        .map(|&sd| {
            let opts = SuiteOptions {
                max_steps: b.max_steps,
                noise_pct: b.noise_pct,
                tracking: cfg.tracking.clone(),
                write_images: b.write_images,
                ..SuiteOptions::new(seed, sd)
            };
            run_suite(&p, &opts, Some(out))
        })
        .collect::<Vec<_>>();
    for r in reports {
        let r = r?;
        summary.artifacts.extend(r.artifacts.iter().cloned());
        summary.suites.push(r);
    }
    Ok(())
}
