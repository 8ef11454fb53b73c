//! `snakesim` command-line entry point.

mod compare;
mod failure;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use snakesim::config::{Engine, OutputFormat, TorqueMode};
use snakesim::contact::{solve_impulses, ContactProblem, SolveStatus, SolverTolerances};
use snakesim::trajectory::Summary;
use snakesim::{Error, RunConfig};

use failure::Failure;

/// Environment variable that overrides the output directory of `run`, `sweep` and `compare`.
pub const OUTPUT_DIR_ENV: &str = "SNAKESIM_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "snakesim",
    version,
    about = "Planar snake-robot contact simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum EngineArg {
    Moreau,
    Penalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ModeArg {
    Pd,
    Allocation,
}

#[derive(Debug, Clone, clap::Args)]
struct Overrides {
    /// Contact engine; overrides `run.engine`.
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    /// Torque mode; overrides `run.mode`.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Seed for the initial joint perturbation; overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time in seconds; overrides `run.horizon`.
    #[arg(long)]
    horizon: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), Failure> {
        if let Some(e) = self.engine {
            cfg.run.engine = match e {
                EngineArg::Moreau => Engine::Moreau,
                EngineArg::Penalty => Engine::Penalty,
            };
        }
        if let Some(m) = self.mode {
            cfg.run.mode = match m {
                ModeArg::Pd => TorqueMode::Pd,
                ModeArg::Allocation => TorqueMode::Allocation,
            };
        }
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(h) = self.horizon {
            cfg.run.horizon = Some(h);
        }
        cfg.validate().map_err(Failure::from)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one configuration and write its artifacts.
    Run {
        /// TOML configuration; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory; overrides `outputs.dir`.
        #[arg(long, env = OUTPUT_DIR_ENV)]
        out: Option<PathBuf>,
    },
    /// Compare two run directories signal by signal.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Directory for `comparison.json` and `head_overlay.csv`.
        #[arg(long, env = OUTPUT_DIR_ENV, default_value = "compare_out")]
        out: PathBuf,
    },
    /// Re-solve an archived contact problem and print the solution.
    Replay {
        problem: PathBuf,
        /// Take solver tolerances from this configuration's `stepping.tolerances`.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run several configurations concurrently.
    Sweep {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Comma-separated seeds; every configuration runs once per seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[command(flatten)]
        overrides: Overrides,
        /// Parent directory; each run writes to its own subdirectory.
        #[arg(long, env = OUTPUT_DIR_ENV, default_value = "sweep_out")]
        out: PathBuf,
    },
    /// Parse and validate a configuration, printing the resolved values.
    ValidateConfig { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            overrides,
            out,
        } => cmd_run(config.as_deref(), &overrides, out),
        Command::Compare { run_a, run_b, out } => compare::cmd_compare(&run_a, &run_b, &out),
        Command::Replay { problem, config } => cmd_replay(&problem, config.as_deref()),
        Command::Sweep {
            configs,
            jobs,
            seeds,
            overrides,
            out,
        } => cmd_sweep(&configs, jobs, &seeds, &overrides, &out),
        Command::ValidateConfig { config } => cmd_validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::from_path(p).map_err(Failure::from),
        None => Ok(RunConfig::default()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::io(e.to_string()))?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::io(e.to_string())),
        _ => Ok(()),
    }
}

pub(crate) fn write_file(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    write(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

/// Simulates `cfg` and writes its artifacts into `out`.
fn execute(cfg: &RunConfig, out: &Path) -> Result<Summary, Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    write_file(&out.join("config.toml"), |w| {
        w.write_all(cfg.to_toml().as_bytes())
    })?;
    let model = cfg.model()?;
    let initial = cfg.initial_state(&model);
    let started = SystemTime::now();
    let clock = Instant::now();
    let log = cfg
        .simulate(&model, &initial)
        .map_err(|e| Failure::from_run(e, out))?;
    let wall = clock.elapsed().as_secs_f64();

    if cfg.outputs.formats.contains(&OutputFormat::Csv) {
        write_file(&out.join("trajectory.csv"), |w| log.write_csv(w))?;
        write_file(&out.join("contacts.csv"), |w| log.write_contact_csv(w))?;
    }
    let summary = log.summary();
    if cfg.outputs.formats.contains(&OutputFormat::Json) {
        write_json(&out.join("summary.json"), &summary)?;
    }
    let started_unix = started
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64());
    write_json(
        &out.join("metadata.json"),
        &json!({
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix_s": started_unix,
            "wall_clock_s": wall,
        }),
    )?;
    Ok(summary)
}

fn brief(summary: &Summary, out: &Path) -> serde_json::Value {
    json!({
        "out_dir": out,
        "engine": summary.engine,
        "samples": summary.samples,
        "head_displacement": summary.head_displacement,
        "peak_torque": summary.peak_torque,
        "mean_abs_torque": summary.mean_abs_torque,
        "peak_contact_force": summary.peak_contact_force,
    })
}

fn cmd_run(
    config: Option<&Path>,
    overrides: &Overrides,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    overrides.apply(&mut cfg)?;
    let out = out.unwrap_or_else(|| cfg.outputs.dir.clone());
    let summary = execute(&cfg, &out)?;
    print_json(&brief(&summary, &out))
}

fn cmd_replay(path: &Path, config: Option<&Path>) -> Result<(), Failure> {
    let tol = match config {
        Some(p) => RunConfig::from_path(p)?.stepping.tolerances,
        None => SolverTolerances::default(),
    };
    let text =
        fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let problem: ContactProblem = serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    problem
        .validate()
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let solution = solve_impulses(&problem, &tol).map_err(Failure::from)?;
    print_json(&solution)?;
    if solution.status != SolveStatus::Converged {
        return Err(Failure::new(
            failure::EXIT_SOLVER,
            "non_convergence",
            format!(
                "replayed problem did not meet the tolerances (residual {:.3e})",
                solution.diagnostics.final_residual
            ),
        ));
    }
    Ok(())
}

fn cmd_sweep(
    configs: &[PathBuf],
    jobs: usize,
    seeds: &[u64],
    overrides: &Overrides,
    out: &Path,
) -> Result<(), Failure> {
    if jobs == 0 {
        return Err(Failure::config("--jobs must be >= 1"));
    }
    let mut runs = Vec::new();
    let mut names = std::collections::BTreeSet::new();
    for path in configs {
        let mut cfg = RunConfig::from_path(path)?;
        overrides.apply(&mut cfg)?;
        let stem = path
            .file_stem()
            .map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned());
        if !names.insert(stem.clone()) {
            return Err(Failure::config(format!(
                "duplicate configuration name `{stem}`"
            )));
        }
        if seeds.is_empty() {
            runs.push((path.clone(), cfg, out.join(&stem)));
        } else {
            for &seed in seeds {
                let mut c = cfg.clone();
                c.run.seed = seed;
                runs.push((path.clone(), c, out.join(format!("{stem}_seed{seed}"))));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::io(e.to_string()))?;
    let results: Vec<(serde_json::Value, u8)> = pool.install(|| {
        runs.par_iter()
            .map(|(path, cfg, dir)| match execute(cfg, dir) {
                Ok(summary) => {
                    let mut v = brief(&summary, dir);
                    v["config"] = json!(path);
                    v["seed"] = json!(cfg.run.seed);
                    v["status"] = json!("ok");
                    (v, 0)
                }
                Err(f) => (
                    json!({
                        "config": path,
                        "seed": cfg.run.seed,
                        "out_dir": dir,
                        "status": "failed",
                        "error": f.to_json()["error"],
                    }),
                    f.exit_code(),
                ),
            })
            .collect()
    });
    let worst = results.iter().map(|r| r.1).max().unwrap_or(0);
    let report: Vec<_> = results.into_iter().map(|r| r.0).collect();
    print_json(&report)?;
    if worst == 0 {
        Ok(())
    } else {
        Err(Failure::new(worst, "sweep", "one or more runs failed"))
    }
}

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let cfg = RunConfig::from_path(path)?;
    print_json(&json!({ "valid": true, "config": cfg }))
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from_error(&e, None)
    }
}
