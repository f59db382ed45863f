//! How free-riders degrade the generator when nothing defends against them.
//!
//! Free-riders hold no data; their "gradients" come from an untrained
//! discriminator, and aggregating that noise dilutes the benign signal.
//! Under the swap protocol riders additionally hijack trained models, but a
//! stolen model keeps scoring this small 2-D problem well after it is
//! frozen, so the swap column stays near the healthy level here instead of
//! degrading — the hijack costs little when retraining is cheap.

use mdgan::config::{DefenseKind, ExperimentConfig, Protocol};
use mdgan::sim::run_experiment;

fn mean_final_fd(protocol: Protocol, freeriders: usize, seeds: u64) -> f64 {
    let mut sum = 0.0;
    for seed in 0..seeds {
        let mut config = ExperimentConfig::default();
        config.seed = seed;
        config.rounds = 60;
        config.protocol = protocol;
        config.n_freeriders = freeriders;
        config.defense = DefenseKind::None;
        config.deterministic_timing = true;
        let out = run_experiment(&config).unwrap();
        sum += out.metrics.last().unwrap().frechet_distance;
    }
    sum / seeds as f64
}

fn main() {
    let seeds = 3;
    println!("mean final Fréchet distance over {seeds} seeds (no defense):\n");
    println!("free-riders |  simple  |   swap");
    for count in 0..=5usize {
        let simple = mean_final_fd(Protocol::Simple, count, seeds);
        let swap = mean_final_fd(Protocol::Swap, count, seeds);
        println!("{count:11} | {simple:8.4} | {swap:8.4}");
    }
    println!("\nHigher is worse; the generator trains on 5 benign clients each time.");
    println!("The simple column degrades with the count; the swap column stays flat");
    println!("because stolen discriminators remain useful critics at this scale.");
}
