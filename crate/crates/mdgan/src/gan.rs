//! Loss functions and one-step training rules for discriminators and the
//! generator.
//!
//! Discriminators always emit raw scores (logits); the non-saturating GAN
//! loss applies the sigmoid inside its stable binary cross-entropy, and the
//! Wasserstein modes read the scores as critic values. The generator never
//! sees real data: its update is assembled purely from per-client
//! `input_grads` feedback back-propagated through its own layers.

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    mixed_second_grads, sigmoid, Batch, GradientSet, MlpNetwork, OptimizerState,
};

/// Loss family used by every client and the generator in one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMode {
    /// Non-saturating GAN: binary cross-entropy on sigmoid scores.
    NsGan,
    /// Wasserstein critic with post-step weight clipping to `[-clip, clip]`.
    WganClip { clip: f64 },
    /// Wasserstein critic with a gradient penalty of weight `lambda` on
    /// real/fake interpolates.
    WganGp { lambda: f64 },
}

impl LossMode {
    /// True when discriminator scores are probabilities after a sigmoid
    /// (used by probe responses, which must be comparable across clients).
    pub fn probabilistic(&self) -> bool {
        matches!(self, LossMode::NsGan)
    }
}

/// Numerically stable `ln(1 + exp(x))`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn constant(rows: usize, v: f64) -> Batch {
    Batch::from_fn(rows, 1, |_, _| v)
}

fn check_discriminator_batches(d: &MlpNetwork, real: &Batch, fake: &Batch) -> Result<()> {
    if d.out_dim() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "discriminator must have scalar output, got width {}",
            d.out_dim()
        )));
    }
    if real.rows() == 0 || real.rows() != fake.rows() {
        return Err(Error::ShapeMismatch(format!(
            "real/fake batches must be nonempty and equal-sized, got {} and {}",
            real.rows(),
            fake.rows()
        )));
    }
    Ok(())
}

/// Random interpolates between paired real and fake samples, one uniform
/// coefficient per row (the gradient-penalty anchor points).
pub fn gp_interpolates(real: &Batch, fake: &Batch, rng: &mut impl Rng) -> Result<Batch> {
    if real.rows() != fake.rows() || real.cols() != fake.cols() {
        return Err(Error::ShapeMismatch(format!(
            "cannot interpolate {}x{} with {}x{}",
            real.rows(),
            real.cols(),
            fake.rows(),
            fake.cols()
        )));
    }
    let eps: Vec<f64> = (0..real.rows()).map(|_| rng.random::<f64>()).collect();
    Ok(Batch::from_fn(real.rows(), real.cols(), |r, c| {
        eps[r] * real.row(r)[c] + (1.0 - eps[r]) * fake.row(r)[c]
    }))
}

/// One discriminator training step on paired real and fake batches.
///
/// Returns the loss at the pre-step parameters. The generator is untouched
/// by construction: it is not even in scope here. `rng` is consumed only by
/// the gradient-penalty mode (interpolation coefficients).
pub fn discriminator_step(
    d: &mut MlpNetwork,
    real: &Batch,
    fake: &Batch,
    mode: LossMode,
    opt: &mut OptimizerState,
    rng: &mut impl Rng,
) -> Result<f64> {
    check_discriminator_batches(d, real, fake)?;
    let b = real.rows() as f64;

    let (loss, grads) = match mode {
        LossMode::NsGan => {
            // Stable BCE with logits: real samples push scores up, fake
            // samples push them down.
            let logits_r = d.forward(real)?;
            let logits_f = d.forward(fake)?;
            let loss = logits_r
                .as_slice()
                .iter()
                .map(|&z| softplus(-z))
                .chain(logits_f.as_slice().iter().map(|&z| softplus(z)))
                .sum::<f64>()
                / b;
            let up_r = Batch::from_fn(real.rows(), 1, |r, _| -sigmoid(-logits_r.row(r)[0]) / b);
            let up_f = Batch::from_fn(fake.rows(), 1, |r, _| sigmoid(logits_f.row(r)[0]) / b);
            let mut grads = d.forward_backward(real, &up_r)?.grads;
            grads.add_scaled(&d.forward_backward(fake, &up_f)?.grads, 1.0)?;
            (loss, grads)
        }
        LossMode::WganClip { .. } | LossMode::WganGp { .. } => {
            // Critic maximizes real-minus-fake score, i.e. minimizes the
            // fake-minus-real difference.
            let fb_r = d.forward_backward(real, &constant(real.rows(), -1.0 / b))?;
            let fb_f = d.forward_backward(fake, &constant(fake.rows(), 1.0 / b))?;
            let mean = |batch: &Batch| batch.as_slice().iter().sum::<f64>() / b;
            let mut loss = mean(&fb_f.outputs) - mean(&fb_r.outputs);
            let mut grads = fb_r.grads;
            grads.add_scaled(&fb_f.grads, 1.0)?;
            if let LossMode::WganGp { lambda } = mode {
                let anchors = gp_interpolates(real, fake, rng)?;
                let fb_gp = d.forward_backward(&anchors, &constant(anchors.rows(), 1.0))?;
                let mut scales = Vec::with_capacity(anchors.rows());
                for r in 0..anchors.rows() {
                    let g = fb_gp.input_grads.row(r);
                    let norm = (g.iter().map(|v| v * v).sum::<f64>() + 1e-12).sqrt();
                    loss += lambda * (norm - 1.0) * (norm - 1.0) / b;
                    scales.push(2.0 * lambda * (norm - 1.0) / (b * norm));
                }
                let penalty_grads =
                    mixed_second_grads(d, &anchors, &fb_gp.input_grads, &scales)?;
                grads.add_scaled(&penalty_grads, 1.0)?;
            }
            (loss, grads)
        }
    };

    if !loss.is_finite() {
        return Err(Error::NonFinite("discriminator loss".to_owned()));
    }
    opt.step(d, &grads)?;
    if let LossMode::WganClip { clip } = mode {
        d.clamp_params(clip);
    }
    Ok(loss)
}

/// Gradient of the generator's loss with respect to the fake samples,
/// evaluated through a fixed discriminator.
///
/// This `B x 2` matrix is the only payload a client returns for generator
/// training; the generator back-propagates it through its own layers.
pub fn generator_feedback(d: &MlpNetwork, fake: &Batch, mode: LossMode) -> Result<Batch> {
    if d.out_dim() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "discriminator must have scalar output, got width {}",
            d.out_dim()
        )));
    }
    let b = fake.rows() as f64;
    let upstream = match mode {
        LossMode::NsGan => {
            // Non-saturating generator loss: minimize softplus(-D(fake)).
            let logits = d.forward(fake)?;
            Batch::from_fn(fake.rows(), 1, |r, _| -sigmoid(-logits.row(r)[0]) / b)
        }
        // Maximize the critic score on fakes: minimize -mean(D(fake)).
        LossMode::WganClip { .. } | LossMode::WganGp { .. } => constant(fake.rows(), -1.0 / b),
    };
    Ok(d.forward_backward(fake, &upstream)?.input_grads)
}

/// One client's payload for a generator update: the latent batch it was
/// served (as held by the generator) and the feedback it returned.
#[derive(Debug, Clone)]
pub struct GeneratorContribution {
    pub client_id: usize,
    pub latents: Batch,
    pub input_grads: Batch,
}

/// How per-client generator gradients are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Plain sum of client gradients.
    Sum,
    /// Mean over included clients; effective step size independent of N.
    Mean,
}

/// Outcome of [`generator_update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorUpdateOutcome {
    /// The step was applied over this many client contributions.
    Applied { n_included: usize },
    /// Every contribution was excluded; parameters were left untouched.
    SkippedEmptyIncludedSet,
}

/// Accumulates included clients' feedback through the generator and applies
/// one optimizer step.
///
/// Each contribution's `input_grads` is back-propagated from that client's
/// own latent batch; flagged (non-included) clients contribute nothing. An
/// empty included set skips the step entirely so no division by zero can
/// occur — the caller is expected to surface a warning.
pub fn generator_update(
    g: &mut MlpNetwork,
    contributions: &[GeneratorContribution],
    included: &BTreeSet<usize>,
    aggregation: Aggregation,
    opt: &mut OptimizerState,
) -> Result<GeneratorUpdateOutcome> {
    let mut total = GradientSet::zeros_like(g);
    let mut n_included = 0usize;
    for c in contributions {
        if !included.contains(&c.client_id) {
            continue;
        }
        let fb = g.forward_backward(&c.latents, &c.input_grads)?;
        total.add_scaled(&fb.grads, 1.0)?;
        n_included += 1;
    }
    if n_included == 0 {
        return Ok(GeneratorUpdateOutcome::SkippedEmptyIncludedSet);
    }
    if aggregation == Aggregation::Mean {
        total.scale(1.0 / n_included as f64);
    }
    opt.step(g, &total)?;
    Ok(GeneratorUpdateOutcome::Applied { n_included })
}
