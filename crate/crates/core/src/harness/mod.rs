//! Configuration, persistence, sweeps and rate fits.

pub mod config;
pub mod io;
pub mod particle_run;
pub mod run;
pub mod sweep;
pub mod verify;

pub use config::RunConfig;
pub use run::{run_and_record, run_kinetic, RunManifest, RunSummary};
pub use sweep::{fit_rate, run_sweep, RateFit, SweepManifest};
