//! Baseline MD-GAN run: five benign clients, no free-riders, no defense.
//!
//! The Fréchet distance between generated samples and the real ring should
//! fall by an order of magnitude as the generator learns the eight modes.

use mdgan::config::{DefenseKind, ExperimentConfig};
use mdgan::sim::run_experiment;

fn main() {
    let mut config = ExperimentConfig::default();
    config.seed = 0;
    config.rounds = 60;
    config.defense = DefenseKind::None;
    config.deterministic_timing = true;

    let out = run_experiment(&config).unwrap();

    println!("round | frechet distance | mean d_loss");
    for record in &out.metrics {
        let d_loss = out
            .round_logs
            .iter()
            .find(|l| l.round == record.round)
            .map(|l| l.d_loss.values().sum::<f64>() / l.d_loss.len().max(1) as f64);
        match d_loss {
            Some(d) => println!(
                "{:5} | {:16.4} | {:.4}",
                record.round, record.frechet_distance, d
            ),
            None => println!("{:5} | {:16.4} |", record.round, record.frechet_distance),
        }
    }

    let first = out.metrics.first().unwrap().frechet_distance;
    let last = out.metrics.last().unwrap().frechet_distance;
    println!(
        "\nfd {first:.3} -> {last:.3}  ({:.1}% of the untrained value)",
        100.0 * last / first
    );
    println!(
        "generator updates: {}",
        out.round_logs.iter().map(|l| l.g_updates).sum::<usize>()
    );
}
