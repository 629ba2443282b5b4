use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dagfed::report::{load_run, render};
use dagfed::sim::{build_world, calibrate_pol, run_experiment, ConfigError, ExperimentConfig, SimError};

#[derive(Parser)]
#[command(name = "dagfed", version, about = "DAG federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// INI experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set runners.cpu=1,2,4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to $DAGFED_OUT/<framework>-<seed>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Calibrate the PoL distance threshold and write the report.
    CalibratePol {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write the train/test split and per-runner shards as CSV.
    GenData {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare finished run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Write the markdown here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Inseparable(String),
    Invariants(String),
    Other(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_inseparable() {
            Failure::Inseparable(e.to_string())
        } else if let SimError::Config(c) = e {
            Failure::Config(c.to_string())
        } else {
            Failure::Other(e.to_string())
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn io(e: impl std::fmt::Display) -> Failure {
    Failure::Other(e.to_string())
}

fn load(args: &ConfigArgs, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let base = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut pairs = Vec::new();
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("{o}: expected KEY=VALUE")))?;
        pairs.push((k.trim(), v.trim()));
    }
    let seed = seed.map(|s| s.to_string());
    if let Some(s) = &seed {
        pairs.push(("experiment.seed", s.as_str()));
    }
    if let Some(out) = &args.out {
        let dir = out.to_string_lossy().into_owned();
        let cfg = base.with_overrides(pairs)?;
        return Ok(cfg.with_overrides([("experiment.output_dir", dir.as_str())])?);
    }
    Ok(base.with_overrides(pairs)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { seed, cfg } => {
            let cfg = load(&cfg, Some(seed))?;
            let out = run_experiment(&cfg)?;
            let dir = cfg.output_dir();
            out.write(&dir).map_err(io)?;
            let s = &out.summary;
            println!(
                "{} seed {}: final accuracy {:.4}, best {:.4}, {} ticks -> {}",
                s.framework,
                s.seed,
                s.final_accuracy,
                s.best_accuracy,
                s.end_tick,
                dir.display()
            );
            if !s.invariants_hold() {
                return Err(Failure::Invariants(s.invariant_failures.join("; ")));
            }
        }
        Command::CalibratePol { seed, cfg } => {
            let cfg = load(&cfg, seed)?;
            let c = calibrate_pol(&cfg)?;
            let dir = cfg.output_dir();
            std::fs::create_dir_all(&dir).map_err(io)?;
            let path = dir.join("calibration.json");
            std::fs::write(&path, serde_json::to_string_pretty(&c).map_err(io)?).map_err(io)?;
            let h = c.honest.iter().copied().fold(0.0, f64::max);
            let f = c.falsified.iter().copied().fold(f64::INFINITY, f64::min);
            println!(
                "epsilon {:.6} (honest max {h:.6}, falsified min {f:.6}, noise {}) -> {}",
                c.epsilon,
                c.noise_std,
                path.display()
            );
        }
        Command::GenData { seed, cfg } => {
            let cfg = load(&cfg, seed)?;
            cfg.validate()?;
            let world = build_world(&cfg)?;
            let dir = cfg.output_dir();
            std::fs::create_dir_all(&dir).map_err(io)?;
            world.test.write_csv(&dir.join("test.csv")).map_err(io)?;
            for r in &world.runners {
                world.clean_shards[r.index]
                    .write_csv(&dir.join(format!("shard-{:02}.csv", r.index)))
                    .map_err(io)?;
                if r.kind != dagfed::adversary::AdversaryKind::Normal {
                    r.train
                        .write_csv(&dir.join(format!("shard-{:02}-{}.csv", r.index, r.kind)))
                        .map_err(io)?;
                }
            }
            println!("{} shards and test set -> {}", world.runners.len(), dir.display());
        }
        Command::Report { runs, out } => {
            let loaded = runs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>, _>>().map_err(io)?;
            let text = render(&loaded).map_err(io)?;
            match out {
                Some(p) => std::fs::write(p, text).map_err(io)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Inseparable(m)) => {
            eprintln!("calibration failed: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Invariants(m)) => {
            eprintln!("invariant failure: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
