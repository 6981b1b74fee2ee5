use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pacoh::runner::{self, Command, RunOptions};

#[derive(Parser)]
#[command(name = "pacoh", version, about = "PAC-Bayesian meta-learning of GP and BNN priors")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a synthetic environment into CSV task directories.
    EnvGen(Common),
    /// Meta-learn a set of priors.
    MetaTrain(Common),
    /// Predict on new tasks with meta-learned priors and score the result.
    MetaTest(Common),
    /// Score saved predictions.
    Eval(Common),
    /// Evaluate the meta-learning bound and print its decomposition.
    Bound(Common),
    /// Run a bandit on an arm pool.
    Bandit(Common),
    /// Assemble reports into one table.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "PACOH_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "PACOH_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, c) = match cli.command {
        Cmd::EnvGen(c) => (Command::EnvGen, c),
        Cmd::MetaTrain(c) => (Command::MetaTrain, c),
        Cmd::MetaTest(c) => (Command::MetaTest, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::Bound(c) => (Command::Bound, c),
        Cmd::Bandit(c) => (Command::Bandit, c),
        Cmd::Report(c) => (Command::Report, c),
    };
    let opts = RunOptions {
        config: c.config,
        out: c.out,
        seed: c.seed,
        threads: c.threads,
    };
    match runner::run(command, &opts) {
        Ok(outcome) => {
            if let Some(s) = outcome.stdout {
                println!("{s}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", runner::error_json(&e));
            ExitCode::from(runner::exit_code(&e) as u8)
        }
    }
}
