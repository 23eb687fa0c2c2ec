//! Command line front end. Exit code 0 iff every requested check passes.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fhnlab::harness::io::{write_json, CsvWriter};
use fhnlab::harness::particle_run::{cross_validate, particle_trajectory, write_cross_validation, write_particle_moments};
use fhnlab::harness::run::{read_manifest, run_and_record, snapshot_times, MANIFEST};
use fhnlab::harness::sweep::{run_sweep, SWEEP_MANIFEST};
use fhnlab::harness::verify::{all_passed, verify_run, verify_sweep, Check};
use fhnlab::harness::{fit_rate, RunConfig, SweepManifest};
use fhnlab::kinetic::Schedule;
use fhnlab::macro_limit::{MacroState, MacroSystem};
use fhnlab::{csv_row, Error, Result};

/// Thread count of the worker pool; nothing else is read from the environment.
const THREADS_VAR: &str = "FHN_THREADS";

#[derive(Parser)]
#[command(name = "fhnlab", version, about = "FitzHugh-Nagumo mean-field numerical lab")]
struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Snapshot spacing.
    #[arg(long)]
    stride: Option<f64>,
    /// Cells per phase-space axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Spatial nodes.
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(x) = self.epsilon {
            c.model.epsilon = x;
        }
        if let Some(x) = self.t_end {
            c.schedule.t_end = x;
        }
        if let Some(x) = self.dt {
            c.schedule.dt = x;
        }
        if let Some(x) = self.stride {
            c.schedule.stride = x;
        }
        if let Some(n) = self.grid {
            c.grid.n_v = n;
            c.grid.n_w = n;
        }
        if let Some(n) = self.nodes {
            c.space.nodes = n;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.output.dir = o.clone();
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Checks the configuration against the standing assumptions.
    Validate,
    /// One kinetic run with diagnostics.
    KineticRun {
        #[command(flatten)]
        o: Overrides,
        /// Also evolve the sandwich pair and certify the envelopes.
        #[arg(long)]
        envelopes: bool,
        #[arg(long)]
        dump_snapshots: bool,
        #[arg(long)]
        dump_phi: bool,
    },
    /// Limit macroscopic system.
    MacroRun {
        #[command(flatten)]
        o: Overrides,
    },
    /// Particle system; with `--compare`, also the cross-validation against the kinetic means.
    ParticleRun {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        n: Option<usize>,
        /// Particle time step.
        #[arg(long)]
        particle_dt: Option<f64>,
        #[arg(long)]
        compare: bool,
    },
    /// Kinetic runs over the configured eps list and rate fits.
    SweepEps {
        #[command(flatten)]
        o: Overrides,
        /// Comma separated, strictly decreasing.
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
    },
    /// Re-evaluates the checks of a run or sweep directory.
    Verify { dir: PathBuf },
    /// Log-log slope of a two-column CSV `(eps, statistic)` with header.
    FitRate {
        csv: PathBuf,
        /// Fail unless the slope reaches this value.
        #[arg(long)]
        min_slope: Option<f64>,
    },
}

fn load(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn report(checks: &[Check]) -> bool {
    for c in checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    all_passed(checks)
}

fn write_macro(dir: &Path, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let setup = config.setup()?;
    let system = MacroSystem::from_kinetic(&setup.model);
    let s = &config.schedule;
    let times = snapshot_times(&Schedule::new(0.0, s.t_end, s.dt, s.stride)?);
    let start = MacroState {
        t: 0.0,
        v: setup.v0.values.clone(),
        w: setup.w0.values.clone(),
    };
    let traj = system.integrate_to(&start, &times, s.macro_dt)?;
    let mut w = CsvWriter::create(&dir.join("macro_limit.csv"), &["t", "x_index", "V", "W"])?;
    for st in &traj {
        for i in 0..st.v.len() {
            w.row(csv_row![st.t, i, st.v[i], st.w[i]])?;
        }
    }
    w.finish()
}

fn read_pairs(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split(',').map(|x| x.trim().parse::<f64>());
            match (it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b))) => Ok((a, b)),
                _ => Err(Error::Config(format!("bad row `{l}` in {}", path.display()))),
            }
        })
        .collect()
}

fn execute(cli: Cli) -> Result<bool> {
    let mut config = load(&cli.config)?;
    match cli.command {
        Command::Validate => {
            let structural = match config.validate() {
                Ok(()) => Check {
                    name: "configuration".into(),
                    passed: true,
                    detail: "all fields valid".into(),
                },
                Err(e) => Check {
                    name: "configuration".into(),
                    passed: false,
                    detail: e.to_string(),
                },
            };
            let mut checks = vec![structural];
            if let Ok(list) = config.assumptions() {
                checks.extend(list.into_iter().map(|a| Check {
                    name: a.name.into(),
                    passed: a.passed,
                    detail: a.detail,
                }));
            }
            Ok(report(&checks))
        }
        Command::KineticRun {
            o,
            envelopes,
            dump_snapshots,
            dump_phi,
        } => {
            o.apply(&mut config);
            config.output.dump_snapshots |= dump_snapshots;
            config.output.dump_phi |= dump_phi;
            let m = run_and_record(&config, &config.output.dir, envelopes);
            Ok(report(&verify_run(&m)))
        }
        Command::MacroRun { o } => {
            o.apply(&mut config);
            write_macro(&config.output.dir, &config)?;
            println!("PASS macro-run: wrote {}", config.output.dir.join("macro_limit.csv").display());
            Ok(true)
        }
        Command::ParticleRun { o, n, particle_dt, compare } => {
            o.apply(&mut config);
            if let Some(n) = n {
                config.particles.n = n;
            }
            if let Some(dt) = particle_dt {
                config.particles.dt = dt;
            }
            let dir = config.output.dir.clone();
            std::fs::create_dir_all(&dir)?;
            let traj = particle_trajectory(&config, config.seed, config.schedule.stride)?;
            write_particle_moments(&dir.join("particle_moments.csv"), &traj)?;
            if !compare {
                return Ok(true);
            }
            let cv = cross_validate(&config)?;
            write_cross_validation(&dir.join("cross_validation.csv"), &cv)?;
            write_json(&dir.join("cross_validation.json"), &cv)?;
            let need = cv.checkpoints.saturating_sub(cv.checkpoints / 10);
            let checks = vec![
                Check {
                    name: "particle means, sample standard error".into(),
                    passed: cv.accepted(false, need),
                    detail: format!("passes per cell {:?}, need {need}", cv.passes(false)),
                },
                Check {
                    name: "particle means, replica standard error".into(),
                    passed: cv.accepted(true, need),
                    detail: format!("passes per cell {:?}, need {need}", cv.passes(true)),
                },
            ];
            Ok(report(&checks))
        }
        Command::SweepEps { o, epsilons } => {
            o.apply(&mut config);
            if let Some(e) = epsilons {
                config.sweep.epsilons = e;
            }
            let root = config.output.dir.clone();
            let m = run_sweep(&config, &root)?;
            Ok(report(&verify_sweep(&m)))
        }
        Command::Verify { dir } => {
            if dir.join(SWEEP_MANIFEST).exists() {
                let text = std::fs::read_to_string(dir.join(SWEEP_MANIFEST))?;
                let m: SweepManifest = serde_json::from_str(&text)?;
                Ok(report(&verify_sweep(&m)))
            } else if dir.join(MANIFEST).exists() {
                Ok(report(&verify_run(&read_manifest(&dir)?)))
            } else {
                Err(Error::Config(format!("{} holds no manifest", dir.display())))
            }
        }
        Command::FitRate { csv, min_slope } => {
            let fit = fit_rate(&read_pairs(&csv)?)?;
            println!("slope {:.6} r2 {:.6} pairs {}", fit.slope, fit.r2, fit.pairs.len());
            Ok(min_slope.map_or(true, |m| fit.slope >= m))
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_VAR} must be a positive integer, got `{raw}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|_| execute(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
