use std::path::PathBuf;
use std::process::ExitCode;

use adaptive_sampling::admm::{Method, Mode};
use adaptive_sampling::checks::{gpcheck, gradcheck, qpcheck, CheckReport};
use adaptive_sampling::sim::{run_batch, write_outputs, ExperimentConfig};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(version, about = "Adaptive sampling with a nonholonomic mobile sensor network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of seeded episodes and write metrics, traces and field snapshots.
    Run(RunArgs),
    /// Compare the gradient of f0 with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: u64,
    },
    /// Compare the QP solver with active-set enumeration and soft-thresholding.
    Qpcheck {
        #[arg(long, default_value_t = 100)]
        instances: u64,
    },
    /// Compare GP prediction with explicit dense formulas.
    Gpcheck {
        #[arg(long, default_value_t = 50)]
        instances: u64,
    },
    /// Print the default configuration as JSON.
    DefaultConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Scadmm,
    Ladmm,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Central,
    Distributed,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON file with `ExperimentConfig` fields; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Refit the GP hyperparameters every K measurement steps.
    #[arg(long, value_name = "K")]
    retrain_every: Option<usize>,
    /// Voronoi shrink margin in meters.
    #[arg(long)]
    safety_margin: Option<f64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(m) = args.method {
        cfg.method = match m {
            MethodArg::Scadmm => Method::Scadmm,
            MethodArg::Ladmm => Method::Ladmm,
        };
    }
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeArg::Central => Mode::Centralized,
            ModeArg::Distributed => Mode::Distributed,
        };
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if args.retrain_every.is_some() {
        cfg.retrain_every = args.retrain_every;
    }
    if let Some(e) = args.safety_margin {
        cfg.safety_margin = e;
    }
    if let Some(n) = args.noise_sd {
        cfg.noise_sd = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &RunArgs) -> Result<bool> {
    let cfg = load_config(args)?;
    let report = run_batch(&cfg, cfg.runs)?;
    write_outputs(&args.out, &cfg, &report)?;
    std::fs::write(args.out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    for (run, rec) in report.records.iter().enumerate() {
        let (first, last) = (rec.steps.first(), rec.steps.last());
        if let (Some(a), Some(b)) = (first, last) {
            println!(
                "run {run} seed {}: alpv {:.3} -> {:.3}, rmse {:.3}, mae {:.3}{}",
                rec.seed,
                a.alpv,
                b.alpv,
                b.rmse,
                b.mae,
                rec.error.as_deref().map(|e| format!(" (stopped: {e})")).unwrap_or_default()
            );
        }
    }
    for (run, e) in &report.run_errors {
        println!("run {run} failed to start: {e}");
    }
    if let Some(q) = report.summary.solve_wall_ms {
        println!("solve wall ms: median {:.1}, q1 {:.1}, q3 {:.1}", q.median, q.q1, q.q3);
    }
    println!("outputs written to {}", args.out.display());
    Ok(report.summary.failures == 0)
}

fn print_check(name: &str, r: &CheckReport) -> bool {
    let verdict = if r.passed() { "ok" } else { "FAILED" };
    println!("{name}: worst {:.3e} over {} instances (tolerance {:.0e}) {verdict}", r.worst, r.instances, r.tolerance);
    r.passed()
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let ok = match &cli.command {
        Command::Run(args) => run(args)?,
        Command::Gradcheck { instances } => print_check("gradient vs central differences", &gradcheck(*instances)?),
        Command::Gpcheck { instances } => print_check("posterior vs dense formulas", &gpcheck(*instances)?),
        Command::Qpcheck { instances } => {
            let (boxes, l1) = qpcheck(*instances);
            let a = print_check("box QPs vs active-set enumeration", &boxes);
            print_check("L1 prox vs soft-threshold", &l1) && a
        }
        Command::DefaultConfig => {
            println!("{}", serde_json::to_string_pretty(&ExperimentConfig::default())?);
            true
        }
    };
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
