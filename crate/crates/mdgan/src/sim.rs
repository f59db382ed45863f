//! Round orchestration: client state machines, swap phase, and the full run.

use crate::config::{DefenseKind, ExperimentConfig, Protocol};
use crate::data::{
    latent_batch, make_ring_dataset, partition_shards, round_batches, ClientShard, RingDataset,
};
use crate::defense::{
    client_swap_gate, pairwise_distance_matrix, run_dfg, run_dfg_adj, DetectionResult, ProbeSet,
    ResponseVector,
};
use crate::error::{Error, Result};
use crate::gan::{
    discriminator_step, generator_feedback, generator_update, GeneratorContribution,
    GeneratorUpdateOutcome, LossMode,
};
use crate::metrics::{
    frechet_distance, precision_recall, swap_action_stats, ActorKind, MetricsRecord, Stopwatch,
    SwapAction, SwapStats,
};
use crate::nn::{Activation, Batch, MlpNetwork, OptimizerState};
use crate::rng::{stream, Stream};
use rand::Rng;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

/// One protocol message. The simulated network delivers instantly, reliably,
/// and in order; this enum pins the vocabulary clients and generator share.
#[derive(Debug, Clone)]
pub enum Message {
    /// Generator → client: a batch of generated points.
    FakeBatch(Batch),
    /// Client → generator: ∂loss/∂input for the client's fake batch.
    GradientFeedback(Batch),
    /// Generator → client: the probe set to score.
    ProbeRequest(ProbeSet),
    /// Client → generator: scores over the probe set.
    ProbeResponse(ResponseVector),
    /// Generator → client: that client's row of the distance matrix.
    DistanceRow { client: usize, row: Vec<f64> },
    /// Generator → client: proposed swap partner.
    SwapProposal { peer: usize },
    /// Client → generator: accept or refuse the proposed swap.
    SwapDecision { accept: bool },
    /// Client → client (via the generator): discriminator parameters.
    ModelWeights(MlpNetwork),
}

impl Message {
    /// Variant name, for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Message::FakeBatch(_) => "FakeBatch",
            Message::GradientFeedback(_) => "GradientFeedback",
            Message::ProbeRequest(_) => "ProbeRequest",
            Message::ProbeResponse(_) => "ProbeResponse",
            Message::DistanceRow { .. } => "DistanceRow",
            Message::SwapProposal { .. } => "SwapProposal",
            Message::SwapDecision { .. } => "SwapDecision",
            Message::ModelWeights(_) => "ModelWeights",
        }
    }
}

/// How many messages of each kind crossed the simulated network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MessageCounts {
    pub fake_batches: u64,
    pub gradient_feedbacks: u64,
    pub probe_requests: u64,
    pub probe_responses: u64,
    pub distance_rows: u64,
    pub swap_proposals: u64,
    pub swap_decisions: u64,
    pub model_weights: u64,
}

/// What a client is: a data-holding trainer or a free-rider.
#[derive(Debug, Clone)]
pub enum ClientRole {
    Benign {
        shard: ClientShard,
        discriminator: MlpNetwork,
        optimizer: OptimizerState,
    },
    /// Holds no data; `fake_model` is randomly initialized at start and
    /// `swapped_model` is whatever the latest successful swap delivered.
    FreeRider {
        fake_model: MlpNetwork,
        swapped_model: Option<MlpNetwork>,
    },
}

/// One participant in the protocol.
#[derive(Debug, Clone)]
pub struct Client {
    pub id: usize,
    pub role: ClientRole,
}

impl Client {
    /// Whether this client actually holds data and trains.
    pub fn is_benign(&self) -> bool {
        matches!(self.role, ClientRole::Benign { .. })
    }

    /// Ground-truth role for swap accounting.
    pub fn actor_kind(&self) -> ActorKind {
        if self.is_benign() {
            ActorKind::Benign
        } else {
            ActorKind::FreeRider
        }
    }

    /// The model this client uses to answer probes, produce feedback, and
    /// offer in swaps: its discriminator if benign, else the latest swapped
    /// model falling back to the fake one.
    pub fn current_model(&self) -> &MlpNetwork {
        match &self.role {
            ClientRole::Benign { discriminator, .. } => discriminator,
            ClientRole::FreeRider {
                fake_model,
                swapped_model,
            } => swapped_model.as_ref().unwrap_or(fake_model),
        }
    }

    /// The shard, when this client holds one.
    pub fn shard(&self) -> Option<&ClientShard> {
        match &self.role {
            ClientRole::Benign { shard, .. } => Some(shard),
            ClientRole::FreeRider { .. } => None,
        }
    }

    fn receive_weights(&mut self, weights: MlpNetwork) {
        match &mut self.role {
            ClientRole::Benign {
                discriminator,
                optimizer,
                ..
            } => {
                // The received parameters replace the previous model; the
                // optimizer's moments belong to the old ones, so they reset.
                *discriminator = weights;
                optimizer.reset();
            }
            ClientRole::FreeRider { swapped_model, .. } => *swapped_model = Some(weights),
        }
    }
}

/// What one client did with one fake batch.
#[derive(Debug)]
pub struct ClientBatchOutcome {
    /// Discriminator loss before the step (benign clients only).
    pub d_loss: Option<f64>,
    /// `GradientFeedback` when feedback was requested.
    pub feedback: Option<Message>,
}

/// One client's part of one mini-batch step: benign clients train their
/// discriminator on `real` + the incoming fakes, free-riders do nothing;
/// both return gradient feedback when `want_feedback` is set.
pub fn client_round(
    client: &mut Client,
    incoming: &Message,
    real: Option<&Batch>,
    loss_mode: LossMode,
    want_feedback: bool,
    rng: &mut impl Rng,
) -> Result<ClientBatchOutcome> {
    let Message::FakeBatch(fake) = incoming else {
        return Err(Error::Protocol(format!(
            "client {} expected a FakeBatch, got {}",
            client.id,
            incoming.kind()
        )));
    };
    match &mut client.role {
        ClientRole::Benign {
            discriminator,
            optimizer,
            ..
        } => {
            let real = real.unwrap_or_else(|| {
                panic!("benign client {} was given no mini-batch", client.id)
            });
            let d_loss = discriminator_step(discriminator, real, fake, loss_mode, optimizer, rng)?;
            let feedback = if want_feedback {
                Some(Message::GradientFeedback(generator_feedback(
                    discriminator,
                    fake,
                    loss_mode,
                )?))
            } else {
                None
            };
            Ok(ClientBatchOutcome {
                d_loss: Some(d_loss),
                feedback,
            })
        }
        ClientRole::FreeRider {
            fake_model,
            swapped_model,
        } => {
            assert!(
                real.is_none(),
                "free-rider {} holds no data but was handed a real batch",
                client.id
            );
            let model = swapped_model.as_ref().unwrap_or(fake_model);
            let feedback = if want_feedback {
                Some(Message::GradientFeedback(generator_feedback(
                    model, fake, loss_mode,
                )?))
            } else {
                None
            };
            Ok(ClientBatchOutcome {
                d_loss: None,
                feedback,
            })
        }
    }
}

/// Disjoint random pairs over `ids`: a maximum matching on a uniformly
/// shuffled order. An odd count leaves exactly one id unpaired; fewer than
/// two ids yield no pairs.
pub fn random_pairing(ids: &[usize], rng: &mut impl Rng) -> Vec<(usize, usize)> {
    use rand::seq::SliceRandom;
    let mut order = ids.to_vec();
    order.shuffle(rng);
    order.chunks_exact(2).map(|c| (c[0], c[1])).collect()
}

/// Per-client allowed-peer sets from the latest probe (benign clients only;
/// free-riders accept every proposal).
pub type SwapGates = BTreeMap<usize, BTreeSet<usize>>;

/// Executes one swap phase over disjoint `pairs`.
///
/// Without gates every pair exchanges models. With gates, the exchange
/// happens only when every benign member permits its peer; free-riders
/// always accept. Every attempt is recorded, executed or not.
pub fn swap_phase(
    clients: &mut [Client],
    pairs: &[(usize, usize)],
    gates: Option<&SwapGates>,
) -> Result<Vec<SwapAction>> {
    let mut seen = BTreeSet::new();
    for &(a, b) in pairs {
        if a == b || !seen.insert(a) || !seen.insert(b) {
            return Err(Error::Protocol(format!(
                "swap pairs overlap: client {} paired twice",
                if seen.contains(&a) { a } else { b }
            )));
        }
        if a >= clients.len() || b >= clients.len() {
            return Err(Error::Protocol(format!(
                "swap pair ({a}, {b}) names an unknown client"
            )));
        }
    }

    let permits = |c: &Client, peer: usize| -> bool {
        if !c.is_benign() {
            return true;
        }
        match gates.and_then(|g| g.get(&c.id)) {
            Some(allowed) => allowed.contains(&peer),
            None => true,
        }
    };

    let mut records = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let executed = permits(&clients[a], b) && permits(&clients[b], a);
        records.push(SwapAction {
            a,
            b,
            role_a: clients[a].actor_kind(),
            role_b: clients[b].actor_kind(),
            executed,
        });
        if executed {
            let (lo, hi) = (a.min(b), a.max(b));
            let (left, right) = clients.split_at_mut(hi);
            let first = &mut left[lo];
            let second = &mut right[0];
            let from_first = first.current_model().clone();
            let from_second = second.current_model().clone();
            first.receive_weights(from_second);
            second.receive_weights(from_first);
        }
    }
    Ok(records)
}

/// Everything observed at one probe round, kept for offline re-analysis
/// (for example, applying a different detection rule to the same trace).
#[derive(Debug, Clone)]
pub struct ProbeSnapshot {
    pub round: usize,
    /// Client responses in ascending client-id order.
    pub responses: Vec<ResponseVector>,
    /// The fresh detector's response (client id = number of clients).
    pub detector_response: ResponseVector,
    /// What the configured defense concluded.
    pub detection: DetectionResult,
}

/// One round's log entry.
#[derive(Debug, Clone, Serialize)]
pub struct RoundLog {
    pub round: usize,
    /// Mean discriminator loss over the round's mini-batches, per benign client.
    pub d_loss: BTreeMap<usize, f64>,
    /// Clients excluded from generator aggregation at the end of this round.
    pub flagged: BTreeSet<usize>,
    /// Detection output when this round probed.
    pub detection: Option<DetectionResult>,
    /// Swap attempts of this round (empty when no swap phase ran).
    pub swaps: Vec<SwapAction>,
    pub g_updates: usize,
    pub g_updates_skipped: usize,
    pub defense_ms: f64,
    pub train_ms: f64,
}

/// Result of a full experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub generator: MlpNetwork,
    pub dataset: RingDataset,
    pub round_logs: Vec<RoundLog>,
    pub metrics: Vec<MetricsRecord>,
    pub probes: Vec<ProbeSnapshot>,
    pub message_counts: MessageCounts,
}

/// `n` generator samples drawn from `rng`.
pub fn sample_generator(
    g: &MlpNetwork,
    n: usize,
    latent_dim: usize,
    rng: &mut impl Rng,
) -> Result<Batch> {
    let latents = latent_batch(n, latent_dim, rng);
    g.forward(&latents)
}

struct ProbeOutcome {
    snapshot: ProbeSnapshot,
    gates: Option<SwapGates>,
}

/// Runs the configured defense at round `t` and derives flags (and gates,
/// under the gating defense). The probe set, every response, and a fresh
/// detector are produced for all defense kinds so one trace supports
/// re-analysis under the others.
fn probe_phase(
    config: &ExperimentConfig,
    g: &MlpNetwork,
    clients: &[Client],
    t: usize,
    counts: &mut MessageCounts,
) -> Result<ProbeOutcome> {
    let models: Vec<(usize, &MlpNetwork)> =
        clients.iter().map(|c| (c.id, c.current_model())).collect();
    let probabilistic = config.loss_mode().probabilistic();
    let mut probe_rng = stream(config.seed, Stream::Probe, t as u64, 0);
    let (dfg_detection, dfg_probe) = run_dfg(
        g,
        &models,
        &config.d_dims(),
        probabilistic,
        config.probe_size,
        t,
        &mut probe_rng,
    )?;
    counts.probe_requests += clients.len() as u64 + 1;
    counts.probe_responses += clients.len() as u64 + 1;

    let detection = match config.defense {
        DefenseKind::Dfg | DefenseKind::DfgPlus => dfg_detection,
        DefenseKind::DfgAdj => run_dfg_adj(&dfg_probe.responses)?,
        DefenseKind::None => unreachable!("probe_phase is never entered without a defense"),
    };

    let gates = if config.defense == DefenseKind::DfgPlus {
        let mut refs: Vec<&ResponseVector> = dfg_probe.responses.iter().collect();
        refs.push(&dfg_probe.detector_response);
        let matrix = pairwise_distance_matrix(&refs)?;
        counts.distance_rows += clients.len() as u64;
        let detector_index = clients.len();
        let mut map = SwapGates::new();
        for c in clients.iter().filter(|c| c.is_benign()) {
            let gate = client_swap_gate(c.id, matrix.row(c.id))?;
            let allowed: BTreeSet<usize> = gate
                .allowed
                .into_iter()
                .filter(|&i| i != detector_index)
                .collect();
            map.insert(c.id, allowed);
        }
        Some(map)
    } else {
        None
    };

    Ok(ProbeOutcome {
        snapshot: ProbeSnapshot {
            round: t,
            responses: dfg_probe.responses,
            detector_response: dfg_probe.detector_response,
            detection,
        },
        gates,
    })
}

fn evaluate(
    config: &ExperimentConfig,
    g: &MlpNetwork,
    dataset: &RingDataset,
    round: usize,
    flagged: &BTreeSet<usize>,
    truth: &BTreeSet<usize>,
    swaps: SwapStats,
    defense_ms: f64,
    train_ms: f64,
) -> Result<MetricsRecord> {
    let mut rng = stream(config.seed, Stream::Eval, round as u64, 0);
    let samples = sample_generator(g, config.eval_samples, config.arch.latent_dim, &mut rng)?;
    let fd = frechet_distance(&dataset.points, &samples)?;
    let (precision, recall) = precision_recall(flagged, truth);
    Ok(MetricsRecord {
        round,
        frechet_distance: fd,
        precision,
        recall,
        swaps,
        defense_ms,
        train_ms,
    })
}

/// Runs the full experiment described by `config`.
///
/// Round `t` (1-based): every mini-batch, the generator sends each client a
/// fake batch and benign clients take one discriminator step; on every
/// `d_steps_per_g_step`-th batch all clients return gradient feedback and
/// the generator updates over the non-flagged set. On probe rounds
/// (`t % probe_period == 0`) the defense runs during the first
/// generator-training batch, before that batch's generator update. On swap
/// rounds (`t % swap_period == 0`, swap protocol) the swap phase runs at the
/// end of the round. Metrics are recorded at round 0 and every
/// `metrics_period` rounds. Everything is deterministic in `config.seed`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let seed = config.seed;
    let d_dims = config.d_dims();

    let mut g = MlpNetwork::kaiming(
        &config.g_dims(),
        Activation::Relu,
        Activation::Identity,
        &mut stream(seed, Stream::GeneratorInit, 0, 0),
    )?;
    let mut g_opt = config.generator_optimizer();

    let dataset = make_ring_dataset(
        config.data.modes,
        config.data.radius,
        config.data.noise_std,
        config.data.points_per_client * config.n_benign,
        &mut stream(seed, Stream::Dataset, 0, 0),
    )?;
    let mut clients: Vec<Client> = Vec::with_capacity(config.n_total());
    for shard in partition_shards(&dataset, config.n_benign)? {
        let id = shard.client_id;
        clients.push(Client {
            id,
            role: ClientRole::Benign {
                shard,
                discriminator: MlpNetwork::kaiming(
                    &d_dims,
                    Activation::LeakyRelu,
                    Activation::Identity,
                    &mut stream(seed, Stream::DiscriminatorInit, id as u64, 0),
                )?,
                optimizer: config.discriminator_optimizer(),
            },
        });
    }
    for k in 0..config.n_freeriders {
        let id = config.n_benign + k;
        clients.push(Client {
            id,
            role: ClientRole::FreeRider {
                fake_model: MlpNetwork::kaiming(
                    &d_dims,
                    Activation::LeakyRelu,
                    Activation::Identity,
                    &mut stream(seed, Stream::FreeRiderInit, id as u64, 0),
                )?,
                swapped_model: None,
            },
        });
    }
    for (i, c) in clients.iter().enumerate() {
        assert!(c.id == i, "client ids must be dense and ascending");
    }
    let truth: BTreeSet<usize> = (config.n_benign..config.n_total()).collect();

    let loss_mode = config.loss_mode();
    let aggregation = config.aggregation();
    let batches = config.batches_per_round();
    let mut flagged: BTreeSet<usize> = BTreeSet::new();
    let mut gates: Option<SwapGates> = None;
    let mut swap_total = SwapStats::default();
    let mut counts = MessageCounts::default();
    let mut round_logs: Vec<RoundLog> = Vec::with_capacity(config.rounds);
    let mut probes: Vec<ProbeSnapshot> = Vec::new();
    let mut metrics = Vec::new();

    // Baseline row before any training.
    metrics.push(evaluate(
        config, &g, &dataset, 0, &flagged, &truth, swap_total, 0.0, 0.0,
    )?);

    for t in 1..=config.rounds {
        let round_watch = Stopwatch::start();
        let mut defense_ms = 0.0f64;
        let mut d_loss_sums: BTreeMap<usize, f64> = BTreeMap::new();
        let mut detection_log = None;
        let mut g_updates = 0usize;
        let mut g_updates_skipped = 0usize;

        if config.freerider_reinit_every_round {
            for c in &mut clients {
                if let ClientRole::FreeRider {
                    fake_model,
                    swapped_model,
                } = &mut c.role
                {
                    *fake_model = MlpNetwork::kaiming(
                        &d_dims,
                        Activation::LeakyRelu,
                        Activation::Identity,
                        &mut stream(seed, Stream::FreeRiderInit, c.id as u64, t as u64),
                    )?;
                    *swapped_model = None;
                }
            }
        }

        // Each benign client shuffles its shard into this round's batches.
        let mut schedules: BTreeMap<usize, Vec<Batch>> = BTreeMap::new();
        for c in &clients {
            if let Some(shard) = c.shard() {
                schedules.insert(
                    c.id,
                    round_batches(
                        shard,
                        config.batch_size,
                        &mut stream(seed, Stream::BatchOrder, c.id as u64, t as u64),
                    )?,
                );
            }
        }

        let probe_due = config.defense != DefenseKind::None && t % config.probe_period == 0;
        let mut probed = false;

        for j in 0..batches {
            let g_batch = (j + 1) % config.d_steps_per_g_step == 0;
            let mut contributions: Vec<GeneratorContribution> = Vec::new();
            for idx in 0..clients.len() {
                let id = clients[idx].id;
                let sub = ((j as u64) << 32) | id as u64;
                let latents = latent_batch(
                    config.batch_size,
                    config.arch.latent_dim,
                    &mut stream(seed, Stream::Latent, t as u64, sub),
                );
                let fake = g.forward(&latents)?;
                counts.fake_batches += 1;
                let mut gp_rng = stream(seed, Stream::GradientPenalty, t as u64, sub);
                let outcome = client_round(
                    &mut clients[idx],
                    &Message::FakeBatch(fake),
                    schedules.get(&id).map(|s| &s[j]),
                    loss_mode,
                    g_batch,
                    &mut gp_rng,
                )
                .map_err(|e| Error::Training {
                    round: t,
                    batch: j,
                    client: id,
                    message: e.to_string(),
                })?;
                if let Some(loss) = outcome.d_loss {
                    *d_loss_sums.entry(id).or_insert(0.0) += loss;
                }
                if let Some(Message::GradientFeedback(input_grads)) = outcome.feedback {
                    counts.gradient_feedbacks += 1;
                    contributions.push(GeneratorContribution {
                        client_id: id,
                        latents,
                        input_grads,
                    });
                }
            }
            if g_batch {
                // The defense runs during the round's first generator-training
                // batch, so fresh flags apply to this very update.
                if probe_due && !probed {
                    probed = true;
                    let watch = Stopwatch::start();
                    let outcome = probe_phase(config, &g, &clients, t, &mut counts)?;
                    defense_ms += watch.elapsed_ms();
                    flagged = outcome.snapshot.detection.flagged.clone();
                    detection_log = Some(outcome.snapshot.detection.clone());
                    if outcome.gates.is_some() {
                        gates = outcome.gates;
                    }
                    probes.push(outcome.snapshot);
                }
                // Barrier: exactly one feedback per client for this batch.
                assert!(
                    contributions.len() == clients.len(),
                    "feedback barrier violated at round {t}"
                );
                let included: BTreeSet<usize> = clients
                    .iter()
                    .map(|c| c.id)
                    .filter(|id| !flagged.contains(id))
                    .collect();
                match generator_update(&mut g, &contributions, &included, aggregation, &mut g_opt)?
                {
                    GeneratorUpdateOutcome::Applied { .. } => g_updates += 1,
                    GeneratorUpdateOutcome::SkippedEmptyIncludedSet => g_updates_skipped += 1,
                }
            }
        }

        let mut swap_records = Vec::new();
        if config.protocol == Protocol::Swap
            && t % config.swap_period == 0
            && clients.len() >= 2
            // Under the gating defense the swap phase waits for the first
            // probe: gates exist from then on.
            && (config.defense != DefenseKind::DfgPlus || gates.is_some())
        {
            let ids: Vec<usize> = clients.iter().map(|c| c.id).collect();
            let pairs = random_pairing(&ids, &mut stream(seed, Stream::Pairing, t as u64, 0));
            swap_records = swap_phase(&mut clients, &pairs, gates.as_ref())?;
            counts.swap_proposals += swap_records.len() as u64;
            counts.swap_decisions += swap_records.len() as u64;
            counts.model_weights +=
                2 * swap_records.iter().filter(|r| r.executed).count() as u64;
        }
        swap_total.merge(&swap_action_stats(&swap_records));

        let train_ms = (round_watch.elapsed_ms() - defense_ms).max(0.0);
        let (defense_ms, train_ms) = if config.deterministic_timing {
            (0.0, 0.0)
        } else {
            (defense_ms, train_ms)
        };
        round_logs.push(RoundLog {
            round: t,
            d_loss: d_loss_sums
                .iter()
                .map(|(id, sum)| (*id, sum / batches as f64))
                .collect(),
            flagged: flagged.clone(),
            detection: detection_log,
            swaps: swap_records,
            g_updates,
            g_updates_skipped,
            defense_ms,
            train_ms,
        });

        if t % config.metrics_period == 0 {
            metrics.push(evaluate(
                config, &g, &dataset, t, &flagged, &truth, swap_total, defense_ms, train_ms,
            )?);
        }
    }

    Ok(ExperimentOutput {
        config: config.clone(),
        generator: g,
        dataset,
        round_logs,
        metrics,
        probes,
        message_counts: counts,
    })
}
