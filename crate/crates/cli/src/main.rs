use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfgc::commands::{
    run_check, run_gas_demo, run_solve, run_uniqueness, CommandError, DemoOptions, Outcome, EXIT_FAILURE,
};
use mfgc::config::parse_config;

#[derive(Debug, Parser)]
#[command(name = "mfgc", version, about = "Equilibria of deterministic mean field games of controls")]
struct Cli {
    /// Worker threads; falls back to MFGC_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for an equilibrium and write price, trajectory, convergence and report files.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to output.dir of the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the model assumptions and certify a trajectories file.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
    },
    /// Solve from several starts and compare the equilibria.
    Uniqueness {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        starts: usize,
    },
    /// Built-in demonstrations.
    Demo {
        #[command(subcommand)]
        which: Demo,
    },
}

#[derive(Debug, Subcommand)]
enum Demo {
    /// Storage fleet with congestion and a saturating price.
    Gas {
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 64)]
        agents: usize,
        #[arg(long, default_value_t = 100)]
        nt: usize,
        #[arg(long, default_value = "mfgc-demo-gas")]
        out: PathBuf,
    },
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("MFGC_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| format!("MFGC_THREADS must be a positive integer, got {v:?}")),
        Err(_) => Ok(None),
    }
}

fn dispatch(command: Command) -> Result<Outcome, CommandError> {
    match command {
        Command::Solve { config, out } => {
            let run = parse_config(&config)?;
            eprintln!("configuration:\n{run}");
            let dir = out.unwrap_or_else(|| run.output.dir.clone());
            run_solve(&run, &dir)
        }
        Command::Check { config, trajectories } => {
            let run = parse_config(&config)?;
            eprintln!("configuration:\n{run}");
            run_check(&run, &trajectories)
        }
        Command::Uniqueness { config, starts } => {
            let run = parse_config(&config)?;
            eprintln!("configuration:\n{run}");
            run_uniqueness(&run, starts)
        }
        Command::Demo {
            which: Demo::Gas { epsilon, agents, nt, out },
        } => run_gas_demo(&DemoOptions { epsilon, agents, nt }, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match threads(cli.threads) {
        Ok(Some(0)) => {
            eprintln!("error: thread count must be positive");
            return ExitCode::from(EXIT_FAILURE as u8);
        }
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("error: cannot start {n} worker threads: {e}");
                return ExitCode::from(EXIT_FAILURE as u8);
            }
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE as u8);
        }
    }
    match dispatch(cli.command) {
        Ok(outcome) => {
            print!("{}", outcome.summary.render());
            for path in &outcome.written {
                eprintln!("wrote {}", path.display());
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE as u8)
        }
    }
}
