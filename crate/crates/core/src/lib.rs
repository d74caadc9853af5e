//! Particle tracking with a scale- and rotation-invariant topology descriptor.
//!
//! The pipeline stages are:
//!
//! 1. **synth** – ground-truth seeding, prescribed deformations and Gaussian-PSF rendering.
//! 2. **detect** – subpixel centroid localization (radial symmetry or LoG + Gaussian fit).
//! 3. **descriptor** – neighbor topology features, local matching and outlier rejection.
//! 4. **globalstep** – gridding and the screened-Poisson projection of the ADMM loop.
//! 5. **tracker** – the hard/soft ADMM tracking loops, ghost removal and image warping.
//! 6. **trajectory** – frame pairing, cumulative tracking and segment merging.
//! 7. **postproc** – deformation gradients, polar decomposition and benchmark metrics.

pub mod descriptor;
pub mod detect;
pub mod error;
pub mod globalstep;
pub mod io;
pub mod postproc;
pub mod synth;
pub mod tracker;
pub mod trajectory;
pub mod types;

pub use error::{Error, Result};
pub use types::{Dim, Image, ParticleSet, Point};
