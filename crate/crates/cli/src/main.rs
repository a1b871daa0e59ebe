use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dynamo_cli::{Experiment, Result};

#[derive(Parser)]
#[command(name = "dynamo", version, about = "Dynamic tomography with optical-flow regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for flow solves and concurrent methods.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the ground-truth sequence.
    Phantom(Common),
    /// Simulate the sinogram and export the operator manifest.
    Simulate(Common),
    /// Run every configured method.
    Reconstruct(Common),
    /// Estimate flows between consecutive ground-truth frames.
    Flow(Common),
    /// Print the summary table, reconstructing first if needed.
    Report(Common),
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match &cli.command {
        Command::Phantom(c) => ("phantom", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Reconstruct(c) => ("reconstruct", c),
        Command::Flow(c) => ("flow", c),
        Command::Report(c) => ("report", c),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| dynamo_cli::CliError::Config(e.to_string()))?;
    }
    let exp = Experiment::load(&common.config, common.out.clone(), common.seed)?;
    match name {
        "phantom" => {
            let u = exp.cmd_phantom()?;
            println!("wrote {}x{}x{} phantom to {}", u.n_x, u.n_y, u.n_t, exp.out_dir.display());
        }
        "simulate" => {
            let s = exp.cmd_simulate()?;
            println!("wrote {} measurements to {}", s.sinogram.data.len(), exp.out_dir.display());
        }
        "reconstruct" => {
            for o in exp.cmd_reconstruct()? {
                let r = &o.reconstruction.report;
                println!(
                    "{:<6} rre {:.4} ssim {:.4} ({} iterations, {:.1} s)",
                    o.name,
                    r.final_rre().unwrap_or(f64::NAN),
                    r.final_ssim().unwrap_or(f64::NAN),
                    r.iterations.len(),
                    r.wall_seconds
                );
            }
        }
        "flow" => {
            let f = exp.cmd_flow()?;
            println!("wrote {} flow fields to {}", f.len(), exp.out_dir.join("flows").display());
        }
        _ => print!("{}", exp.cmd_report()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
