//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation failure, 2 solver failure, 3 I/O failure.
//! Log verbosity comes from `COLIFT_LOG` (`error`, `warn`, `info`, `debug`, `trace`).

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use crate::control::ControllerOptions;
use crate::ergonomics::optimize_posture;
use crate::error::Error;
use crate::files::{self, FileKind, RunManifest, SolutionFile, TraceTable};
use crate::sim::{run_scenario, SimConfig};
use crate::summary::{summarize, Summary};

pub const LOG_ENV: &str = "COLIFT_LOG";

#[derive(Debug, Parser)]
#[command(name = "colift", version, about = "Shared whole-body control for two agents lifting a payload")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check model, scenario, gains, sequence, problem or solution files.
    Validate {
        paths: Vec<PathBuf>,
        /// Scenario to check gains and sequences against.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Solve a posture problem and write the solution file.
    Optimize {
        problem: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate one or more scenarios and write trace.csv, summary.json and manifest.json.
    Run(RunArgs),
    /// Recompute summary.json from an existing trace.csv.
    ReportData {
        trace: PathBuf,
        /// Defaults to summary.json next to the trace.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file; repeat to run several.
    #[arg(long, required_unless_present = "manifest")]
    pub scenario: Vec<PathBuf>,
    /// Gains file, once or once per scenario.
    #[arg(long)]
    pub gains: Vec<PathBuf>,
    /// Sequence file, once or once per scenario.
    #[arg(long)]
    pub sequence: Vec<PathBuf>,
    /// Output directory; with several scenarios each run gets a `<scenario>-<sequence>` subdirectory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Integration step (s).
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Controller period (s).
    #[arg(long, default_value_t = 1e-2)]
    pub control_period: f64,
    /// Stop after this much simulated time (s).
    #[arg(long)]
    pub duration: Option<f64>,
    /// Worker threads for several scenarios.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Validate inputs and print the tick plan without simulating.
    #[arg(long)]
    pub dry_run: bool,
    /// Re-run from a manifest written by a previous run.
    #[arg(long, conflicts_with_all = ["scenario", "gains", "sequence"])]
    pub manifest: Option<PathBuf>,
}

/// One scenario run, fully specified.
#[derive(Debug, Clone)]
pub struct RunJob {
    pub scenario: PathBuf,
    pub gains: PathBuf,
    pub sequence: PathBuf,
    pub out: PathBuf,
    pub config: SimConfig,
}

pub fn init_logging() {
    let env = env_logger::Env::default().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args`, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Validate { paths, scenario } => cmd_validate(&paths, scenario.as_deref()),
        Command::Optimize { problem, out } => cmd_optimize(&problem, &out).map(|_| ()),
        Command::Run(args) => cmd_run(&args).map(|_| ()),
        Command::ReportData { trace, out } => {
            let out = out.unwrap_or_else(|| trace.with_file_name("summary.json"));
            cmd_report_data(&trace, &out).map(|_| ())
        }
    }
}

pub fn cmd_validate(paths: &[PathBuf], scenario: Option<&Path>) -> Result<(), Error> {
    if paths.is_empty() && scenario.is_none() {
        return Err(Error::Usage("nothing to validate".into()));
    }
    let context = scenario.map(files::load_scenario).transpose()?;
    if let (Some(path), Some(sc)) = (scenario, &context) {
        info!("{}: scenario `{}` with {} agents is valid", path.display(), sc.name, sc.system.agents().len());
    }
    for path in paths {
        let kind = files::detect_kind(path)?;
        let needs = |what: &str| Error::Usage(format!("{}: checking a {what} file needs --scenario", path.display()));
        match kind {
            FileKind::Model => {
                let m = files::load_model(path)?;
                info!("{}: model `{}` with {} joints is valid", path.display(), m.name(), m.num_joints());
            }
            FileKind::Scenario => {
                let sc = files::load_scenario(path)?;
                info!("{}: scenario `{}` with {} agents is valid", path.display(), sc.name, sc.system.agents().len());
            }
            FileKind::Gains => {
                let sc = context.as_ref().ok_or_else(|| needs("gains"))?;
                files::load_gains(path, &sc.system)?;
                info!("{}: gains are valid", path.display());
            }
            FileKind::Sequence => {
                let sc = context.as_ref().ok_or_else(|| needs("sequence"))?;
                let seq = files::load_sequence(path, sc)?;
                info!("{}: sequence with {} phases, {:.2} s, is valid", path.display(), seq.phases.len(), seq.total_time());
            }
            FileKind::Problem => {
                files::load_problem(path)?;
                info!("{}: posture problem is valid", path.display());
            }
            FileKind::Solution => {
                files::load_solution(path)?;
                info!("{}: solution parses", path.display());
            }
        }
    }
    Ok(())
}

pub fn cmd_optimize(problem_path: &Path, out: &Path) -> Result<SolutionFile, Error> {
    let (scenario, problem) = files::load_problem(problem_path)?;
    let started = Instant::now();
    let solution = optimize_posture(&problem)?;
    let file = SolutionFile::new(&scenario.name, &problem.system, problem.payload_target.as_ref(), &solution);
    info!(
        "objective {:.6} -> {:.6} ({:.1}% lower) in {} iterations, {:.2} s",
        file.initial_objective,
        file.objective,
        100.0 * file.improvement,
        file.iterations,
        started.elapsed().as_secs_f64()
    );
    if !file.converged {
        warn!("not converged: projected gradient {:.3e} after {} iterations", file.projected_gradient, file.iterations);
    }
    files::write_json(out, &file)?;
    Ok(file)
}

fn pick<'a>(list: &'a [PathBuf], i: usize, what: &str, n: usize) -> Result<&'a PathBuf, Error> {
    match list.len() {
        1 => Ok(&list[0]),
        k if k == n => Ok(&list[i]),
        k => Err(Error::Usage(format!("{k} --{what} values for {n} scenarios (give one, or one per scenario)"))),
    }
}

/// Expands the run arguments into one job per scenario.
pub fn plan_jobs(args: &RunArgs) -> Result<Vec<RunJob>, Error> {
    if let Some(path) = &args.manifest {
        let text = files::read_text(path)?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.clone(), line: e.line(), column: e.column(), msg: e.to_string() })?;
        let config = SimConfig { dt: m.dt, control_period: m.control_period, duration: m.duration, ..SimConfig::default() };
        let out = if args.out == Path::new("out") { PathBuf::from(&m.out) } else { args.out.clone() };
        return Ok(vec![RunJob { scenario: m.scenario.into(), gains: m.gains.into(), sequence: m.sequence.into(), out, config }]);
    }
    let n = args.scenario.len();
    let config = SimConfig { dt: args.dt, control_period: args.control_period, duration: args.duration, ..SimConfig::default() };
    config.validate()?;
    let mut jobs = Vec::with_capacity(n);
    for (i, scenario) in args.scenario.iter().enumerate() {
        let out = if n == 1 {
            args.out.clone()
        } else {
            let stem = |p: &Path| p.file_stem().map_or_else(|| format!("run{i}"), |s| s.to_string_lossy().into_owned());
            let sequence = pick(&args.sequence, i, "sequence", n)?;
            args.out.join(format!("{}-{}", stem(scenario), stem(sequence)))
        };
        jobs.push(RunJob {
            scenario: scenario.clone(),
            gains: pick(&args.gains, i, "gains", n)?.clone(),
            sequence: pick(&args.sequence, i, "sequence", n)?.clone(),
            out,
            config,
        });
    }
    let mut outs: Vec<&PathBuf> = jobs.iter().map(|j| &j.out).collect();
    outs.sort();
    if outs.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Usage("two runs would write to the same output directory".into()));
    }
    Ok(jobs)
}

/// Runs one job; with `dry_run` only loads the inputs and prints the plan.
pub fn run_job(job: &RunJob, dry_run: bool) -> Result<Option<Summary>, Error> {
    let scenario = files::load_scenario(&job.scenario)?;
    let gains = files::load_gains(&job.gains, &scenario.system)?;
    let sequence = files::load_sequence(&job.sequence, &scenario)?;
    if dry_run {
        print!("{}: {}\n{}", job.scenario.display(), scenario.name, files::describe_plan(&sequence, job.config.dt, job.config.control_period, job.config.duration));
        return Ok(None);
    }
    let started = Instant::now();
    let trace = run_scenario(&scenario, &gains, &sequence, &job.config, &ControllerOptions::default())?;
    info!("{}: simulated {:.2} s in {:.2} s", scenario.name, trace.samples.last().map_or(0.0, |s| s.t), started.elapsed().as_secs_f64());
    let table = TraceTable::from_trace(&trace, &scenario.system);
    let summary = summarize(&table);
    files::write_trace(&job.out.join("trace.csv"), &table)?;
    files::write_json(&job.out.join("summary.json"), &summary)?;
    // absolute paths, so the manifest replays from any directory
    let abs = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string();
    let manifest = RunManifest {
        scenario: abs(&job.scenario),
        gains: abs(&job.gains),
        sequence: abs(&job.sequence),
        out: abs(&job.out),
        dt: job.config.dt,
        control_period: job.config.control_period,
        duration: job.config.duration,
        seed: 0,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    files::write_json(&job.out.join("manifest.json"), &manifest)?;
    Ok(Some(summary))
}

/// Runs every job, `jobs` at a time. Returns the summaries in job order.
pub fn cmd_run(args: &RunArgs) -> Result<Vec<Option<Summary>>, Error> {
    let jobs = plan_jobs(args)?;
    let workers = args.jobs.max(1).min(jobs.len().max(1));
    let mut results: Vec<Option<Result<Option<Summary>, Error>>> = (0..jobs.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let r = run_job(job, args.dry_run);
                if let Err(e) = &r {
                    error!("{}: {e}", job.scenario.display());
                }
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    // report the first failure by job order
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}

pub fn cmd_report_data(trace: &Path, out: &Path) -> Result<Summary, Error> {
    let table = files::read_trace(trace)?;
    let summary = summarize(&table);
    files::write_json(out, &summary)?;
    info!("{}: {} ticks, {} phases", out.display(), summary.ticks, summary.phases.len());
    Ok(summary)
}
