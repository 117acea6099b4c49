use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use laplace_pricing::cli::{
    ensure_reference, reference_path, render_table, run, run_oracles, unix_now, write_outputs,
    ExampleId, ExperimentConfig,
};
use laplace_pricing::Result;

/// Option pricing by Laplace transformation in time.
#[derive(Parser)]
#[command(name = "price", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one example and write its tables, plot data and manifest.
    Run {
        #[arg(long, value_enum)]
        example: ExampleId,
        #[arg(long)]
        config: PathBuf,
        /// Overrides the worker count of the configuration.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the output directory of the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scalar inversion oracles and randomised inequality checks.
    Oracle {
        #[arg(long, default_value_t = 20240601)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        fields: usize,
    },
    /// Build or refresh the cached basket reference solution.
    Reference {
        #[arg(long, default_value = "configs/ex3.json")]
        config: PathBuf,
        /// Rebuild even when a matching cache exists.
        #[arg(long)]
        rebuild: bool,
    },
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            example,
            config,
            workers,
            out,
        } => {
            let started = unix_now();
            let base = config_dir(&config);
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if cfg.example != example {
                return Err(laplace_pricing::Error::Config(format!(
                    "--example {} does not match the configuration ({})",
                    example.as_str(),
                    cfg.example.as_str()
                )));
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let out = out
                .or_else(|| cfg.out.clone())
                .unwrap_or_else(|| PathBuf::from("out").join(example.as_str()));
            let report = run(&cfg, &base)?;
            for table in &report.tables {
                println!("{}", render_table(table));
            }
            for s in &report.speedups {
                println!(
                    "workers {:>2}: {:.3} s, speedup {:.2}, efficiency {:.3}",
                    s.workers,
                    s.wall_seconds,
                    s.speedup,
                    s.efficiency()
                );
            }
            if let Some(d) = report.deterministic {
                println!("bitwise identical across worker counts: {d}");
            }
            let files = write_outputs(&report, &cfg, &out, started)?;
            println!("wrote {} files to {}", files.len(), out.display());
            Ok(true)
        }
        Command::Oracle { seed, fields } => {
            let checks = run_oracles(seed, fields)?;
            for c in &checks {
                println!("{}", c.line());
            }
            Ok(checks.iter().all(|c| c.passed))
        }
        Command::Reference { config, rebuild } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let base = config_dir(&config);
            let path = reference_path(&cfg, &base)?;
            let reference = ensure_reference(&cfg, &base, rebuild)?;
            println!(
                "reference {}x{} with {} steps at {}",
                reference.mesh.m1,
                reference.mesh.m2,
                reference.steps,
                path.display()
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
