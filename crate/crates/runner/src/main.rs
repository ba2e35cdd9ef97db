use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfgp_bench::config::{parse_doe_sizes, parse_methods, ExperimentConfig, Format};
use mfgp_bench::ingest::ingest_csv;
use mfgp_bench::problem::list_problems;
use mfgp_bench::{run_experiment, BenchError};

#[derive(Parser)]
#[command(name = "mfgp-bench", version, about = "Multi-fidelity GP benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        problem: Option<String>,
        /// Comma-separated subset of gp_hf,lmc,ar1,nargp,nargp_nested,mfdgp.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        format: Option<String>,
        /// Comma-separated NLFxNHF pairs, e.g. 30x10,40x8.
        #[arg(long)]
        doe_sizes: Option<String>,
        #[arg(long)]
        test_set_size: Option<usize>,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        normalize: Option<bool>,
    },
    /// Parse a dataset CSV (header x1..xd,y,fidelity) and summarize it.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        dim: usize,
    },
    /// List the built-in problems.
    ListProblems,
}

fn run(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Run {
            config,
            problem,
            methods,
            reps,
            seed,
            out,
            workers,
            format,
            doe_sizes,
            test_set_size,
            n_samples,
            normalize,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(v) = problem {
                cfg.problem = v;
            }
            if let Some(v) = methods {
                cfg.methods = parse_methods(&v)?;
            }
            if let Some(v) = reps {
                cfg.reps = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = out {
                cfg.out = v;
            }
            if let Some(v) = workers {
                cfg.workers = v;
            }
            if let Some(v) = format {
                cfg.format = v.parse::<Format>()?;
            }
            if let Some(v) = doe_sizes {
                cfg.doe_sizes = parse_doe_sizes(&v)?;
            }
            if let Some(v) = test_set_size {
                cfg.test_set_size = Some(v);
            }
            if let Some(v) = n_samples {
                cfg.n_samples = v;
            }
            if let Some(v) = normalize {
                cfg.normalize = v;
            }
            let report = run_experiment(&cfg)?;
            let path = report.emit(cfg.format, &cfg.out)?;
            print!("{}", report.to_csv());
            eprintln!("wrote {}", path.display());
        }
        Command::Ingest { csv, dim } => {
            let data = ingest_csv(&csv, dim)?;
            println!("levels: {}", data.n_levels());
            for (i, l) in data.levels.iter().enumerate() {
                println!("fidelity {}: {} rows", i + 1, l.len());
            }
            println!("nested: {}", data.is_nested());
        }
        Command::ListProblems => {
            for p in list_problems() {
                println!("{p}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
