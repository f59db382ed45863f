//! Deterministic, CPU-only simulator of multi-discriminator GAN (MD-GAN)
//! training in the presence of free-riding clients.
//!
//! One generator lives on a server; `N` discriminator clients each hold a
//! private shard of a 2-D mixture-of-Gaussians ring. Every round the server
//! broadcasts generated batches, clients run local discriminator steps and
//! return generator feedback, and (under the swap protocol) clients
//! periodically exchange discriminators with a random peer. Free-riders own
//! no data and answer through an untrained network. The `defense` module
//! implements probe-based detection that clusters client responses to a
//! shared probe batch, plus a swap-gating extension and a detector-free
//! ablation.
//!
//! Everything is seeded: two runs with the same [`config::ExperimentConfig`]
//! produce byte-identical metrics and logs.
//!
//! The examples directory is the front door; each file is a runnable
//! demonstration of one capability:
//!
//! ```text
//! cargo run --release -p mdgan --example frechet_metric
//! cargo run --release -p mdgan --example ring_dataset
//! cargo run --release -p mdgan --example healthy_training
//! cargo run --release -p mdgan --example freerider_impact
//! cargo run --release -p mdgan --example dfg_detection
//! cargo run --release -p mdgan --example swap_gating
//! cargo run --release -p mdgan --example detector_ablation
//! ```
//!
//! The thin `mdgan` binary wraps [`runner::run`] and [`runner::sweep`] for
//! scripted experiments; see the README for the flag reference.

pub mod config;
pub mod data;
pub mod defense;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod runner;
pub mod sim;

pub use error::{Error, Result};
