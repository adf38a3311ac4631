use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use vaml_lab::config::ExperimentConfig;
use vaml_lab::mdp_json::load_mdp;
use vaml_lab::output::write_atomic;
use vaml_lab::{commands, sweep, train};

#[derive(Parser)]
#[command(name = "vaml-lab", version, about = "Tabular value-aware model learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, seed) pair and write CSV curves.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check the simulation lemma, deviation corollary and loose bound on random MDP pairs.
    VerifyLemmas {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        max_states: usize,
        /// Perturb this MDP instead of drawing fresh ones.
        #[arg(long)]
        mdp: Option<PathBuf>,
    },
    /// Finite-difference check of every objective gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Log-scale sweep over alpha (and the VPS weight) per method.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write the exact gridworld MDP as JSON.
    BuildEnv {
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn status(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut stdout = std::io::stdout();
    match cli.command {
        Command::Train { config, jobs } => {
            let config = ExperimentConfig::load(&config)?;
            let (dir, outcomes) = train::train(&config, jobs)?;
            for o in &outcomes {
                match &o.result {
                    Ok(r) => match r.divergence {
                        Some(d) => eprintln!("{} seed {}: diverged at iteration {} (|logit| {:e})", o.job.method, o.job.seed, d.iteration, d.max_abs_logit),
                        None => println!(
                            "{} seed {}: final return {:.3}",
                            o.job.method,
                            o.job.seed,
                            r.final_return().unwrap_or(f64::NAN)
                        ),
                    },
                    Err(e) => eprintln!("{} seed {}: failed: {e}", o.job.method, o.job.seed),
                }
            }
            println!("wrote {}", dir.display());
            Ok(status(outcomes.iter().all(|o| o.result.is_ok())))
        }
        Command::VerifyLemmas { trials, seed, max_states, mdp } => {
            let base = mdp.as_deref().map(load_mdp).transpose()?;
            let (_, ok) = commands::verify_lemmas(trials, seed, max_states, base.as_ref(), &mut stdout)?;
            Ok(status(ok))
        }
        Command::Gradcheck { seed } => {
            let (_, ok) = commands::gradcheck(seed, &mut stdout)?;
            Ok(status(ok))
        }
        Command::Sweep { config, jobs } => {
            let config = ExperimentConfig::load(&config)?;
            let report = sweep::sweep(&config, jobs)?;
            let text = serde_json::to_string_pretty(&report)? + "\n";
            let path = config.resolved_output_dir().join("sweep.json");
            write_atomic(&path, text.as_bytes())?;
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Command::BuildEnv { size, out } => {
            let world = commands::build_env(size, &out).with_context(|| format!("building {size}x{size} gridworld"))?;
            println!("{} states, wrote {}", world.num_states(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
