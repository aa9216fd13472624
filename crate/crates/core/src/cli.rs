//! Command-line front end.
//!
//! Exit codes: 0 success, 1 numerical or I/O failure, 2 configuration error
//! or failed validation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{ConfigSource, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::{
    initial_profile, penalty_comparison_study, space_refinement_study, time_refinement_study, StudyResult,
};
use crate::flow::{run_flow, step_condition, StepRecord};
use crate::mobility::MobilityEvaluator;
use crate::output::{self, OutputLock, RunManifest};
use crate::variational::assemble_weighted_laplacian;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "crystal-surface", version, about = "1D crystal surface relaxation solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config file and $CRYSTAL_SURFACE_OUT).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print one line per outer step to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    /// Override a config key, e.g. `--set pdhg.lambda=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Run the flow and write snapshots and diagnostics.
    Evolve,
    /// Spatial refinement study.
    SpaceRefine,
    /// Temporal refinement study.
    TimeRefine,
    /// Inner iteration counts for the two penalizations.
    PenaltyCompare,
    /// Check the configuration and the step-size condition at the initial state.
    Validate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::SpaceRefine => "space-refine",
            Command::TimeRefine => "time-refine",
            Command::PenaltyCompare => "penalty-compare",
            Command::Validate => "validate",
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidParameter { .. } | Error::InvalidEpsilon(_) | Error::InvalidSlope(_) => {
            EXIT_CONFIG
        }
        Error::GridTooSmall(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match run(&cli, &cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let source = match &cli.config {
        Some(path) => ConfigSource::from_file(path)?,
        None => ConfigSource::default(),
    };
    source.with_overrides(cli.set.iter().cloned()).parse()
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<i32> {
    let started = output::now_millis();
    let dir = cfg.output_dir(cli.out.as_deref());
    match cli.command {
        Command::Validate => validate(cfg),
        Command::Evolve => evolve(cli, cfg, &dir, started),
        cmd => study(cmd, cfg, &dir, started),
    }
}

fn validate(cfg: &RunConfig) -> Result<i32> {
    let flow = cfg.flow()?;
    let h0 = initial_profile(flow.initial, flow.grid);
    let m = MobilityEvaluator::new(flow.mobility, flow.grid)?.evaluate(&h0)?;
    let a = assemble_weighted_laplacian(&m);
    let c = step_condition(&a, flow.tau(), flow.pdhg.lambda);
    println!("config: ok (nx = {}, nt = {}, tau = {:e})", cfg.nx, cfg.nt, flow.tau());
    println!(
        "||A D^T D|| estimate = {:.6e} (power iteration {} after {} iterations)",
        c.estimate,
        if c.power_converged {
            "converged"
        } else {
            "did not converge"
        },
        c.power_iterations
    );
    println!("(tau/lambda)*||A D^T D|| = {:.6e}", c.ratio);
    if c.passes {
        println!("step condition: ok (margin {:.3}x)", 1.0 / c.ratio);
        Ok(EXIT_OK)
    } else {
        println!("step condition: violated");
        Ok(EXIT_CONFIG)
    }
}

fn step_line(r: &StepRecord, nt: usize) {
    eprintln!(
        "step {}/{} t={:.6e} tv={:.9e} iters={} converged={} phi={:.9e}->{:.9e}",
        r.n, nt, r.t, r.tv_energy, r.inner_iters, r.converged, r.phi_before, r.phi_after
    );
}

fn evolve(cli: &Cli, cfg: &RunConfig, dir: &Path, started: u128) -> Result<i32> {
    let flow = cfg.flow()?;
    let _lock = OutputLock::acquire(dir)?;
    let verbose = cli.verbose;
    let run = run_flow(&flow, |r| {
        if verbose {
            step_line(r, flow.n_t)
        }
    })?;
    let mut manifest = RunManifest::new(Command::Evolve.name(), cfg, started);
    manifest.record(&output::write_snapshot_csv(&run.trace, dir)?);
    manifest.record(&output::write_diagnostics_csv(&run.trace, dir)?);
    let code = match &run.error {
        None => EXIT_OK,
        Some(e) => {
            eprintln!("error: {e}");
            manifest.error = Some(e.to_string());
            EXIT_FAILURE
        }
    };
    manifest.exit_status = code;
    manifest.write(dir)?;
    Ok(code)
}

fn study(cmd: Command, cfg: &RunConfig, dir: &Path, started: u128) -> Result<i32> {
    let _lock = OutputLock::acquire(dir)?;
    let result: StudyResult = match cmd {
        Command::SpaceRefine => space_refinement_study(&cfg.studies, &cfg.pdhg)?,
        Command::TimeRefine => time_refinement_study(&cfg.studies, &cfg.pdhg)?,
        Command::PenaltyCompare => penalty_comparison_study(&cfg.studies, &cfg.pdhg)?,
        Command::Evolve | Command::Validate => unreachable!("handled by caller"),
    };
    let mut manifest = RunManifest::new(cmd.name(), cfg, started);
    manifest.record(&output::write_study_csv(&result, dir)?);
    manifest.study = Some((&result).into());
    if let Some(fit) = result.fit {
        println!(
            "{}: log-log slope {:.4} (rms residual {:.4})",
            result.study, fit.slope, fit.residual
        );
    }
    let censored = result.rows.iter().filter(|r| r.censored).count();
    if censored > 0 {
        println!("{}: {censored} censored run(s) hit max_iter", result.study);
    }
    let code = match &result.failure {
        None => EXIT_OK,
        Some(msg) => {
            eprintln!("error: {msg}");
            manifest.error = Some(msg.clone());
            EXIT_FAILURE
        }
    };
    manifest.exit_status = code;
    manifest.write(dir)?;
    Ok(code)
}
