//! Configuration loading, run artifacts and the command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::design::{
    equal_contamination_schedule, lifetime_estimates, quantile_penetration_report, quantile_schedule,
    uniform_schedule, LayerSchedule,
};
use crate::engine::{run, EngineError, SimulationTrace, StopReason};
use crate::model::{ApertureState, BlockingLaw, CellGrid, Chemistry, ConfigError, FilterConfig, FilterRadius, TimeStep};
use crate::sediment::{calibrate_rate_constant, stationary_velocity, CalibrationInput};

/// Exit status of a run that ended because the network became degenerate.
pub const EXIT_DEGENERATE: i32 = 3;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Syntax {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: ConfigError },
    #[error("{path}: r_filter schedule {schedule}: {reason}")]
    Schedule {
        path: PathBuf,
        schedule: PathBuf,
        reason: String,
    },
}

/// Parses a configuration from TOML text. A schedule path in `r_filter` is
/// left unresolved.
pub fn parse_config(text: &str) -> Result<FilterConfig, toml::de::Error> {
    toml::from_str(text)
}

/// Reads, resolves and validates a configuration file. A relative
/// `r_filter` schedule path is taken relative to the file's directory.
pub fn load_config(path: &Path) -> Result<FilterConfig, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut config = parse_config(&text).map_err(|source| LoadError::Syntax {
        path: path.to_owned(),
        source,
    })?;
    if let FilterRadius::Schedule(rel) = &config.r_filter {
        let full = path.parent().unwrap_or(Path::new(".")).join(rel);
        let schedule = LayerSchedule::read(&full).map_err(|e| LoadError::Schedule {
            path: path.to_owned(),
            schedule: rel.clone(),
            reason: e.to_string(),
        })?;
        config.r_filter = schedule.as_filter_radius();
    }
    config.validate().map_err(|source| LoadError::Invalid {
        path: path.to_owned(),
        source,
    })?;
    Ok(config)
}

/// Shortest round-trip representation, identical across runs and platforms.
fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn trace_csv(trace: &SimulationTrace) -> String {
    let m = trace.final_grid.membrane_count();
    let mut out = String::new();
    out.push_str("# time: s; total_flow: m^3/s; counts: filtering apertures per membrane\n");
    out.push_str("# caught: physical apertures that caught a particle\n");
    out.push_str("time,total_flow,open,blocked,sealed,caught,side_sealed,diffusion_limited,depletion_negligible");
    for k in 1..=m {
        let _ = write!(out, ",open_{k},blocked_{k},sealed_{k}");
    }
    out.push('\n');
    for s in &trace.snapshots {
        let t = s.totals();
        let dep = match s.depletion_negligible {
            Some(true) => "yes",
            Some(false) => "no",
            None => "",
        };
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            num(s.time),
            num(s.total_flow),
            t.open,
            t.blocked,
            t.sealed,
            t.caught,
            s.side_sealed,
            s.diffusion_limited,
            dep
        );
        for c in &s.membranes {
            let _ = write!(out, ",{},{},{}", c.open, c.blocked, c.sealed);
        }
        out.push('\n');
    }
    out
}

/// Text maps of every membrane: `.` open, `#` particle-blocked,
/// `o` sediment-sealed. Rows run over y, columns over x.
pub fn membrane_maps(grid: &CellGrid, states: &[ApertureState]) -> String {
    let [nx, ny, _] = grid.dims;
    let mut out = String::new();
    for m in 0..grid.membrane_count() {
        let _ = writeln!(out, "membrane {}", m + 1);
        for j in 0..ny {
            for i in 0..nx {
                out.push(states[grid.z_aperture(i, j, m)].symbol());
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn membrane_csv(grid: &CellGrid) -> String {
    let [nx, ny, _] = grid.dims;
    let mut out = String::from("# radius, sediment: m\nmembrane,i,j,state,radius,sediment,caught\n");
    for m in 0..grid.membrane_count() {
        for j in 0..ny {
            for i in 0..nx {
                let ap = &grid.apertures[grid.z_aperture(i, j, m)];
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    m + 1,
                    i + 1,
                    j + 1,
                    ap.state.symbol(),
                    num(ap.radius),
                    num(ap.sediment),
                    ap.caught
                );
            }
        }
    }
    out
}

pub fn contamination_csv(trace: &SimulationTrace) -> String {
    let mut out = String::from("membrane,blocked,caught,blocked_fraction\n");
    let last = trace.last();
    for (k, (c, f)) in last.membranes.iter().zip(trace.contamination()).enumerate() {
        let _ = writeln!(out, "{},{},{},{}", k + 1, c.blocked, c.caught, num(f));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub stop: StopReason,
    pub stop_time: f64,
    pub steps: usize,
    pub clean_flow: f64,
    pub final_flow: f64,
    pub open: usize,
    pub blocked: usize,
    pub sealed: usize,
    pub caught: usize,
    pub side_sealed: usize,
    pub depletion_flagged: usize,
}

impl RunSummary {
    pub fn new(config: &FilterConfig, trace: &SimulationTrace) -> Self {
        let last = trace.last();
        let t = last.totals();
        Self {
            seed: config.seed,
            stop: trace.stop,
            stop_time: last.time,
            steps: trace.steps,
            clean_flow: trace.snapshots[0].total_flow,
            final_flow: last.total_flow,
            open: t.open,
            blocked: t.blocked,
            sealed: t.sealed,
            caught: t.caught,
            side_sealed: last.side_sealed,
            depletion_flagged: trace
                .snapshots
                .iter()
                .filter(|s| s.depletion_negligible == Some(false))
                .count(),
        }
    }
}

/// Writes every artifact of one run into `dir`.
pub fn write_run(dir: &Path, config: &FilterConfig, trace: &SimulationTrace) -> Result<RunSummary> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    };
    write("config.toml", toml::to_string(config).context("serialising configuration")?)?;
    write("trace.csv", trace_csv(trace))?;
    let grid = &trace.final_grid;
    let finals: Vec<_> = grid.filtering().iter().map(|a| a.state).collect();
    write("membranes.txt", membrane_maps(grid, &finals))?;
    if let Some((t, states)) = &trace.before_sealing {
        write(
            "membranes_before_sealing.txt",
            format!("# time {} s\n{}", num(*t), membrane_maps(grid, states)),
        )?;
    }
    write("membranes.csv", membrane_csv(grid))?;
    write("contamination.csv", contamination_csv(trace))?;
    let summary = RunSummary::new(config, trace);
    write("summary.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// `N` or an inclusive range `a..b`.
pub fn parse_seeds(text: &str) -> Result<RangeInclusive<u64>, String> {
    let parse = |s: &str| s.trim().parse::<u64>().map_err(|e| format!("bad seed {s:?}: {e}"));
    match text.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (parse(a)?, parse(b)?);
            if a > b {
                return Err(format!("empty seed range {text}"));
            }
            Ok(a..=b)
        }
        None => {
            let n = parse(text)?;
            Ok(n..=n)
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "filtersim", version, about = "Layered porous filter simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the filter from clean to clogged.
    Simulate(SimulateArgs),
    /// Build a catch-probability schedule for the membranes.
    Design(DesignArgs),
    /// Recover the reaction rate constant from an observed growth rate.
    Calibrate(CalibrateArgs),
    /// Closed-form lifetime estimate for a clean filter.
    Estimate(EstimateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Seed or inclusive range `a..b`; a range writes one directory per seed.
    #[arg(long, value_parser = parse_seeds)]
    pub seed: Option<RangeInclusive<u64>>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Simulated time limit, s.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Fixed time step, s (default: the configured one).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub blocking_law: Option<BlockingLaw>,
    /// Ignore the chemistry section.
    #[arg(long)]
    pub no_chemistry: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DesignKind {
    EqualContamination,
    Quantile,
    Uniform,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[arg(long, value_enum)]
    pub kind: DesignKind,
    /// Catch probability of the first membrane (equal-contamination) or of
    /// every membrane (uniform).
    #[arg(long)]
    pub q1: Option<f64>,
    #[arg(long)]
    pub membranes: Option<usize>,
    /// Cell layers of the quantile design.
    #[arg(long)]
    pub n_z: Option<usize>,
    /// Particle length, m; when given, the schedule includes radii.
    #[arg(long)]
    pub l: Option<f64>,
    /// CSV output path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Observed growth rate under slow flow, m/s.
    #[arg(long)]
    pub growth_rate: f64,
    /// TOML file with the calibration inputs.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub config: PathBuf,
}

fn simulate(args: &SimulateArgs) -> Result<i32> {
    let mut base = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    if let Some(t) = args.time_limit {
        base.time_limit = Some(t);
    }
    if let Some(dt) = args.dt {
        base.dt = TimeStep::Fixed(dt);
    }
    if let Some(law) = args.blocking_law {
        base.blocking_law = law;
    }
    if args.no_chemistry {
        base.chemistry = None;
    }
    if let Err(e) = base.validate() {
        eprintln!("error: {e}");
        return Ok(EXIT_CONFIG);
    }
    let seeds = args.seed.clone().unwrap_or(base.seed..=base.seed);
    let batch = seeds.start() != seeds.end();
    let mut code = 0;
    let mut batch_rows = String::from("seed,stop,stop_time,blocked,sealed,caught,final_flow\n");
    for seed in seeds {
        let config = FilterConfig { seed, ..base.clone() };
        let trace = match run(&config) {
            Ok(t) => t,
            Err(e @ (EngineError::Config(_) | EngineError::Disconnected)) => {
                eprintln!("error: {e}");
                return Ok(EXIT_CONFIG);
            }
            Err(e) => bail!("seed {seed}: {e}"),
        };
        let dir = if batch {
            args.out.join(format!("seed-{seed}"))
        } else {
            args.out.clone()
        };
        let s = write_run(&dir, &config, &trace)?;
        println!(
            "seed {seed}: {} at {} s ({:.3} d), blocked {}, sealed {}, open {}",
            s.stop.as_str(),
            num(s.stop_time),
            s.stop_time / 86_400.0,
            s.blocked,
            s.sealed,
            s.open
        );
        let _ = writeln!(
            batch_rows,
            "{seed},{},{},{},{},{},{}",
            s.stop.as_str(),
            num(s.stop_time),
            s.blocked,
            s.sealed,
            s.caught,
            num(s.final_flow)
        );
        if s.stop == StopReason::Degenerate {
            code = EXIT_DEGENERATE;
        }
    }
    if batch {
        fs::write(args.out.join("batch.csv"), batch_rows)?;
    }
    Ok(code)
}

fn design(args: &DesignArgs) -> Result<i32> {
    let need = |v: Option<usize>, name: &str| v.with_context(|| format!("--{name} is required for this design"));
    let schedule = match args.kind {
        DesignKind::EqualContamination => {
            let q1 = args.q1.context("--q1 is required for this design")?;
            equal_contamination_schedule(q1, need(args.membranes, "membranes")?)?
        }
        DesignKind::Uniform => {
            let q1 = args.q1.context("--q1 is required for this design")?;
            uniform_schedule(q1, need(args.membranes, "membranes")?)?
        }
        DesignKind::Quantile => {
            let n_z = need(args.n_z, "n-z")?;
            let m = args.membranes.unwrap_or(n_z - 1);
            let s = quantile_schedule(m, n_z)?;
            println!("{}", quantile_penetration_report(n_z)?);
            s
        }
    };
    let schedule = match args.l {
        Some(l) => schedule.with_radii(l)?,
        None => schedule,
    };
    println!("penetration probability: {}", num(schedule.penetration()));
    match &args.out {
        Some(path) => fs::write(path, schedule.to_csv()).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{}", schedule.to_csv()),
    }
    Ok(0)
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationFile {
    /// kg/m³
    c0_mass: f64,
    mu0: f64,
    mu2: f64,
    rho2: f64,
    #[serde(default = "one")]
    n: u32,
    #[serde(default = "one")]
    n2: u32,
    #[serde(rename = "D")]
    diffusivity: f64,
    #[serde(rename = "R")]
    radius: f64,
}

fn one() -> u32 {
    1
}

fn calibrate(args: &CalibrateArgs) -> Result<i32> {
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let f: CalibrationFile = toml::from_str(&text).with_context(|| format!("parsing {}", args.input.display()))?;
    let cal = calibrate_rate_constant(&CalibrationInput {
        growth_rate: args.growth_rate,
        c0_mass: f.c0_mass,
        dissolved_molar_mass: f.mu0,
        sediment_molar_mass: f.mu2,
        sediment_density: f.rho2,
        order: f.n,
        sediment_per_event: f.n2,
        diffusivity: f.diffusivity,
        radius: f.radius,
    })?;
    let chem: Chemistry = cal.chemistry;
    println!("K = {} m^(3n-2)/s", num(chem.rate_constant));
    println!("c0 = {} m^-3", num(cal.c0));
    println!("c1 = {} m^-3", num(cal.c1));
    println!("v_stat = {} m/s", num(stationary_velocity(&chem, f.radius, cal.c0)));
    Ok(0)
}

fn estimate(args: &EstimateArgs) -> Result<i32> {
    let config = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    let e = lifetime_estimates(&config)?;
    println!("total flow: {} m^3/s", num(e.total_flow));
    println!("cell flow: {} m^3/s", num(e.cell_flow));
    println!("N T: {} s/m^3", num(e.concentration_time));
    println!("lifetime: {} s ({:.2} d)", num(e.time), e.time / 86_400.0);
    println!("capacity: {} particles", num(e.capacity));
    Ok(0)
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Design(a) => design(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Estimate(a) => estimate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}
