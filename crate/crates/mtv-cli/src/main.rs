use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtv_cli::code::{code_center, code_zero, parse_word};
use mtv_cli::config::PipelineConfig;
use mtv_cli::export::write_all;
use mtv_cli::pipeline::{build, Built, Partition};
use mtv_cli::verify::verify;
use mtv_cli::PipelineError;
use mtv_core::torus_model::AffinePHSystem;

#[derive(Parser)]
#[command(name = "mtv", version, about = "Markov families and symbolic coding for partially hyperbolic torus maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Coding horizon `L`: windows are `[-L, L]`.
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Sets every sample count.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Coding tolerance.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Degenerate mode: classical partition of a 2-torus automorphism.
    #[arg(long, global = true)]
    zero_center: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Builds the family and writes every artifact.
    Build,
    /// Runs the verification suites on a partition.
    Verify {
        /// Defaults to `<out>/partition.json`.
        #[arg(long)]
        partition: Option<PathBuf>,
    },
    /// Evaluates the coding map on a periodic word, e.g. `3,3,7`.
    Code {
        word: String,
        #[arg(long)]
        partition: Option<PathBuf>,
    },
    /// Writes the graph and picture artifacts of an existing partition.
    Export {
        #[arg(long)]
        partition: Option<PathBuf>,
    },
}

fn config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut c = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None if cli.zero_center => PipelineConfig::from_system(AffinePHSystem::cat2().spec().clone()),
        None => return Err(PipelineError::Input("--config is required".into())),
    };
    c.zero_center |= cli.zero_center;
    if let Some(o) = &cli.out {
        c.out = o.clone();
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(h) = cli.horizon {
        c.horizon = h;
    }
    if let Some(n) = cli.samples {
        c.samples = c.samples.clone().scaled(n);
    }
    if let Some(t) = cli.tolerance {
        c.tolerances.coding = t;
    }
    Ok(c)
}

fn partition_path(c: &PipelineConfig, p: &Option<PathBuf>) -> PathBuf {
    p.clone().unwrap_or_else(|| c.out.join("partition.json"))
}

fn write_report(dir: &Path, name: &str, text: &str) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Input(format!("{}: {e}", dir.display())))?;
    std::fs::write(dir.join(name), text).map_err(|e| PipelineError::Input(format!("{}: {e}", dir.join(name).display())))
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let c = config(cli)?;
    match &cli.command {
        Command::Build => {
            let built = build(&c)?;
            for p in write_all(&c.out, &built, &built.partition(), &c.svg_discs)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Export { partition } => {
            let loaded = Partition::load(&partition_path(&c, partition))?;
            let built = build(&c)?;
            for p in write_all(&c.out, &built, &loaded, &c.svg_discs)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Verify { partition } => {
            let loaded = Partition::load(&partition_path(&c, partition))?;
            let report = verify(&c, &loaded)?;
            print!("{}", report.text());
            write_report(&c.out, "verify_report.json", &serde_json::to_string_pretty(&report).expect("plain data"))?;
            if !report.passed() {
                let failed: Vec<&str> = report.suites.iter().filter(|s| !s.passed).map(|s| s.name).collect();
                return Err(PipelineError::Verification(failed.join(", ")));
            }
        }
        Command::Code { word, partition } => {
            let word = parse_word(word)?;
            let loaded = Partition::load(&partition_path(&c, partition))?;
            let out = match (build(&c)?, &loaded) {
                (Built::Center(b), Partition::Center(m)) => code_center(&b.family, m, &word, c.horizon, c.tolerances.coding)?,
                (Built::ZeroCenter(z), Partition::ZeroCenter(p)) => code_zero(&z.system, p, &word, c.horizon, c.tolerances.coding)?,
                _ => return Err(PipelineError::Input("partition kind does not match the config".into())),
            };
            print!("{}", out.text());
            log::info!("{}", out.trace());
            write_report(&c.out, "code.json", &serde_json::to_string_pretty(&out).expect("plain data"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MTV_LOG", "warn")).init();
    // Usage errors are input failures, not parameter violations.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(3);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mtv: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
