use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use patchsweep_cli::{
    cmd_bench, cmd_mesh, cmd_run, cmd_verify, BenchAxis, MeshSpec, RunSpec, VerifyOutcome,
};

#[derive(Parser)]
#[command(
    name = "patchsweep",
    version,
    about = "Patch-centric parallel Sn sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve with source iteration on the runtime.
    Run(RunSpec),
    /// Compare the runtime against the sequential reference sweep bit for bit.
    Verify(RunSpec),
    /// Repeat a run over a list of values of one parameter and print CSV.
    Bench {
        #[command(flatten)]
        spec: RunSpec,
        #[arg(long, value_enum)]
        axis: BenchAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Write a tetrahedral toy mesh as JSON.
    Mesh(MeshSpec),
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(spec) => {
            let report = cmd_run(&spec)?;
            println!("{}", report.summary);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(spec) => match cmd_verify(&spec)? {
            VerifyOutcome::Match {
                iterations,
                vertices,
            } => {
                println!("match: {vertices} vertices bitwise equal over {iterations} iterations");
                Ok(ExitCode::SUCCESS)
            }
            VerifyOutcome::Diverged(d) => {
                println!("{d}");
                Ok(ExitCode::from(1))
            }
        },
        Command::Bench {
            spec,
            axis,
            values,
            csv_out,
        } => {
            let csv = cmd_bench(&spec, axis, &values)?;
            match csv_out {
                Some(path) => std::fs::write(&path, csv)?,
                None => print!("{csv}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Mesh(spec) => {
            let cells = cmd_mesh(&spec)?;
            println!("wrote {cells} cells to {}", spec.out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
