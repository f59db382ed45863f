//! Thin CLI over the library: single runs and free-rider sweeps.

use clap::{Parser, Subcommand};
use mdgan::config::{DefenseKind, ExperimentConfig, Overrides, Protocol};
use mdgan::runner;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mdgan",
    version,
    about = "Multi-discriminator GAN simulator: free-rider attacks and defenses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment; writes metrics.csv, roundlog.jsonl, samples.csv.
    Run {
        /// TOML config file; missing keys fall back to built-in defaults
        /// (5 benign clients, 100 rounds, swap every 5, probe every 10,
        /// probe size 500, batch 160, 5 D-steps per G-step, ns_gan, mean).
        #[arg(long)]
        config: PathBuf,
        /// Root seed for every random stream.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (created if missing).
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Client communication pattern.
        #[arg(long)]
        protocol: Option<Protocol>,
        /// Free-rider countermeasure.
        #[arg(long)]
        defense: Option<DefenseKind>,
        /// Number of free-riding clients.
        #[arg(long)]
        freeriders: Option<usize>,
        /// Training rounds.
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Run the cross product defenses x free-rider counts x seeds and
    /// write per-run artifacts plus sweep_summary.csv.
    Sweep {
        /// TOML config file used as the base for every cell.
        #[arg(long)]
        config: PathBuf,
        /// Counts as an inclusive range "0..5" or a comma list "0,3,5".
        #[arg(long, default_value = "0..5")]
        freeriders: String,
        /// Seeds per cell (config seed, +1, +2, ...).
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        /// Output directory (created if missing).
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Defenses to sweep; defaults to the config's defense.
        #[arg(long, value_delimiter = ',')]
        defenses: Vec<DefenseKind>,
    },
}

fn parse_counts(text: &str) -> Result<Vec<usize>, String> {
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| format!("bad count: {lo}"))?;
        let hi: usize = hi.trim().parse().map_err(|_| format!("bad count: {hi}"))?;
        if hi < lo {
            return Err(format!("empty range: {text}"));
        }
        return Ok((lo..=hi).collect());
    }
    text.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| format!("bad count: {part}"))
        })
        .collect()
}

fn real_main() -> Result<(), String> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out,
            protocol,
            defense,
            freeriders,
            rounds,
        } => {
            let overrides = Overrides {
                seed,
                protocol,
                defense,
                freeriders,
                rounds,
            };
            let config = ExperimentConfig::load(Some(&config), &overrides)
                .map_err(|e| e.to_string())?;
            let outcome = runner::run(&config, &out).map_err(|e| e.to_string())?;
            for log in &outcome.output.round_logs {
                if log.detection.as_ref().is_some_and(|d| d.degenerate) {
                    eprintln!(
                        "warning: round {} probe was degenerate; nobody was flagged",
                        log.round
                    );
                }
            }
            let last = outcome.output.metrics.last().expect("round-0 row exists");
            println!(
                "final frechet_distance {:.4} after {} rounds (seed {})",
                last.frechet_distance, config.rounds, config.seed
            );
            println!("artifacts in {}", out.display());
            Ok(())
        }
        Command::Sweep {
            config,
            freeriders,
            seeds,
            out,
            defenses,
        } => {
            let base = ExperimentConfig::load(Some(&config), &Overrides::default())
                .map_err(|e| e.to_string())?;
            let counts = parse_counts(&freeriders)?;
            let defenses = if defenses.is_empty() {
                vec![base.defense]
            } else {
                defenses
            };
            let outcome =
                runner::sweep(&base, &counts, seeds, &defenses, &out).map_err(|e| e.to_string())?;
            let failed: Vec<&str> = outcome
                .rows
                .iter()
                .filter_map(|r| r.error.as_deref())
                .collect();
            println!(
                "{} cells -> {}",
                outcome.rows.len(),
                outcome.summary_csv.display()
            );
            if !failed.is_empty() {
                eprintln!("warning: {} cell(s) recorded errors", failed.len());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
