use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eigensymm::harness::{load_config, run_batch, summary_line, thread_budget, write_report, Task};

#[derive(Parser)]
#[command(name = "eigensymm", about = "Symmetrization and principal eigenvalue comparisons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario JSON: one scenario or {"scenarios": [...]}.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for JSON reports and CSV tables.
    #[arg(long)]
    out: PathBuf,
    /// Override the grid resolution of every scenario.
    #[arg(long)]
    grid: Option<usize>,
    /// Override the number of level bins of every scenario.
    #[arg(long)]
    levels: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Faber-Krahn comparisons against the equal-measure disk.
    Rfk(RunArgs),
    /// Rearrange torsion or eigenfunction level sets and verify the inequalities.
    Symmetrize(RunArgs),
    /// Planar λ₁ against the radial problem with rearranged coefficients.
    Compare(RunArgs),
    /// Extremal drift under L∞ constraints.
    Extremal(RunArgs),
    /// Large-drift asymptotics of the ball eigenvalue.
    Asympt(RunArgs),
    /// Prescribed distributions, Schwarz and shell rearrangements.
    Distcheck(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, args) = match cli.command {
        Command::Rfk(a) => (Task::Rfk, a),
        Command::Symmetrize(a) => (Task::Symmetrize, a),
        Command::Compare(a) => (Task::Compare, a),
        Command::Extremal(a) => (Task::Extremal, a),
        Command::Asympt(a) => (Task::Asympt, a),
        Command::Distcheck(a) => (Task::Distcheck, a),
    };
    let mut scenarios = match load_config(&args.config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    for s in &mut scenarios {
        if let Some(t) = s.task {
            if t != task {
                eprintln!("error: scenario {} has task {} but `{}` was requested", s.name, t.name(), task.name());
                return ExitCode::from(2);
            }
        }
        s.task = Some(task);
        if let Some(g) = args.grid {
            s.grid = g;
        }
        if let Some(k) = args.levels {
            s.levels = k;
        }
    }

    let mut ok = true;
    for (s, result) in scenarios.iter().zip(run_batch(&scenarios, thread_budget())) {
        match result {
            Ok(report) => {
                println!("{}", summary_line(&report));
                ok &= report.pass;
                if let Err(e) = write_report(&report, &args.out) {
                    eprintln!("error: writing {}: {e}", s.name);
                    ok = false;
                }
            }
            Err(e) => {
                println!("FAIL {} [{}] error: {e}", s.name, task.name());
                ok = false;
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
