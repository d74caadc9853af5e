//! Command-line front end: run configurations, benchmark presets and the
//! synth / detect / track / benchmark commands.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod presets;
