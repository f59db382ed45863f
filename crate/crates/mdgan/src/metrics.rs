//! Run metrics: Fréchet distance on raw 2-D samples, detection
//! precision/recall, swap-action accounting, and wall-clock bookkeeping.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::Batch;

/// Moment fit of a sample set: mean vector and regularized covariance.
#[derive(Debug, Clone)]
pub struct GaussianFit {
    /// Feature-wise sample mean.
    pub mean: Vec<f64>,
    /// Row-major `d x d` sample covariance (denominator `n - 1`), with
    /// `1e-6` added to the diagonal to keep near-collapsed fits invertible.
    pub cov: Vec<f64>,
}

const COV_REGULARIZER: f64 = 1e-6;

impl GaussianFit {
    /// Fits mean and covariance to `samples`; needs at least `d + 1` rows.
    pub fn fit(samples: &Batch) -> Result<Self> {
        let (n, d) = (samples.rows(), samples.cols());
        if n < d + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{n} samples are too few to fit a {d}-dimensional covariance"
            )));
        }
        if !samples.is_finite() {
            return Err(Error::NonFinite("samples for moment fit".to_owned()));
        }
        let mut mean = vec![0.0; d];
        for row in samples.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut cov = vec![0.0; d * d];
        for row in samples.iter_rows() {
            for i in 0..d {
                let di = row[i] - mean[i];
                for j in 0..d {
                    cov[i * d + j] += di * (row[j] - mean[j]);
                }
            }
        }
        for v in cov.iter_mut() {
            *v /= (n - 1) as f64;
        }
        for i in 0..d {
            cov[i * d + i] += COV_REGULARIZER;
        }
        Ok(GaussianFit { mean, cov })
    }
}

/// Fréchet distance between the moment fits of two 2-D sample sets:
/// `||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))`.
///
/// For 2x2 covariances the trace of the matrix square root has a closed
/// form, `tr sqrt(M) = sqrt(tr M + 2 sqrt(det M))` applied to
/// `M = sqrt(S1) S2 sqrt(S1)`, whose trace and determinant equal those of
/// `S1 S2`; no explicit square root is materialized.
pub fn frechet_distance(real: &Batch, generated: &Batch) -> Result<f64> {
    if real.cols() != 2 || generated.cols() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "frechet_distance expects 2-D samples, got widths {} and {}",
            real.cols(),
            generated.cols()
        )));
    }
    let a = GaussianFit::fit(real)?;
    let b = GaussianFit::fit(generated)?;
    let dmean: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();

    let tr_a = a.cov[0] + a.cov[3];
    let tr_b = b.cov[0] + b.cov[3];
    let det_a = a.cov[0] * a.cov[3] - a.cov[1] * a.cov[2];
    let det_b = b.cov[0] * b.cov[3] - b.cov[1] * b.cov[2];
    // Regularized sample covariances are PSD up to rounding; anything
    // clearly negative means the fit itself is broken.
    if det_a < -1e-12 || det_b < -1e-12 {
        return Err(Error::NonFinite(
            "covariance fit is not positive semi-definite".to_owned(),
        ));
    }
    let tr_ab = a.cov[0] * b.cov[0]
        + a.cov[1] * b.cov[2]
        + a.cov[2] * b.cov[1]
        + a.cov[3] * b.cov[3];
    let cross = (tr_ab + 2.0 * (det_a.max(0.0) * det_b.max(0.0)).sqrt()).max(0.0);
    let fd = dmean + tr_a + tr_b - 2.0 * cross.sqrt();
    if !fd.is_finite() {
        return Err(Error::NonFinite("frechet distance".to_owned()));
    }
    // The distance is mathematically nonnegative; clamp rounding residue.
    Ok(fd.max(0.0))
}

/// Precision and recall of a flagged set against the true free-rider set.
///
/// Precision is absent when nothing was flagged; recall is absent when
/// there are no true free-riders.
pub fn precision_recall(
    flagged: &BTreeSet<usize>,
    truth: &BTreeSet<usize>,
) -> (Option<f64>, Option<f64>) {
    let hits = flagged.intersection(truth).count() as f64;
    let precision = (!flagged.is_empty()).then(|| hits / flagged.len() as f64);
    let recall = (!truth.is_empty()).then(|| hits / truth.len() as f64);
    (precision, recall)
}

/// Ground-truth role of a swap participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Benign,
    FreeRider,
}

/// One attempted swap between clients `a` and `b`, with ground-truth roles
/// and whether the exchange actually happened.
#[derive(Debug, Clone, Serialize)]
pub struct SwapAction {
    pub a: usize,
    pub b: usize,
    pub role_a: ActorKind,
    pub role_b: ActorKind,
    pub executed: bool,
}

/// Tallies of swap outcomes against ground truth.
///
/// `correct` counts executed benign-benign and free-rider-free-rider swaps
/// plus prevented benign-free-rider swaps; `wrong_prevention` counts
/// refused benign-benign pairs; `wrong_permission` counts executed
/// benign-free-rider pairs. Prevented free-rider pairs fall in none of the
/// three buckets, so the fractions sum to at most one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SwapStats {
    pub attempts: usize,
    pub correct: usize,
    pub wrong_prevention: usize,
    pub wrong_permission: usize,
}

impl SwapStats {
    /// Adds one batch of counts into a running total.
    pub fn merge(&mut self, other: &SwapStats) {
        self.attempts += other.attempts;
        self.correct += other.correct;
        self.wrong_prevention += other.wrong_prevention;
        self.wrong_permission += other.wrong_permission;
    }

    fn frac(&self, count: usize) -> Option<f64> {
        (self.attempts > 0).then(|| count as f64 / self.attempts as f64)
    }

    /// Fraction of attempts resolved correctly; absent without attempts.
    pub fn correct_frac(&self) -> Option<f64> {
        self.frac(self.correct)
    }

    /// Fraction of benign-benign pairs wrongly refused.
    pub fn wrong_prevention_frac(&self) -> Option<f64> {
        self.frac(self.wrong_prevention)
    }

    /// Fraction of benign-free-rider pairs wrongly executed.
    pub fn wrong_permission_frac(&self) -> Option<f64> {
        self.frac(self.wrong_permission)
    }
}

/// Classifies swap records against ground truth.
pub fn swap_action_stats(records: &[SwapAction]) -> SwapStats {
    let mut stats = SwapStats {
        attempts: records.len(),
        ..SwapStats::default()
    };
    use ActorKind::*;
    for r in records {
        let benign_pair = r.role_a == Benign && r.role_b == Benign;
        let rider_pair = r.role_a == FreeRider && r.role_b == FreeRider;
        if r.executed {
            if benign_pair || rider_pair {
                stats.correct += 1;
            } else {
                stats.wrong_permission += 1;
            }
        } else if benign_pair {
            stats.wrong_prevention += 1;
        } else if !rider_pair {
            // Prevented mixed pair: the gate did its job.
            stats.correct += 1;
        }
        // A prevented free-rider pair is neither correct nor wrong.
    }
    stats
}

/// One row of the per-run metrics table.
///
/// Swap counts are cumulative from round 1 through this row's round, so the
/// final row summarizes the whole run. Timing columns are the wall-clock of
/// this row's round (zero for the baseline row at round 0).
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRecord {
    pub round: usize,
    pub frechet_distance: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub swaps: SwapStats,
    pub defense_ms: f64,
    pub train_ms: f64,
}

impl MetricsRecord {
    /// Header line of `metrics.csv`.
    pub fn csv_header() -> &'static str {
        "round,fd,precision,recall,correct_frac,wrong_prevention_frac,wrong_permission_frac,defense_ms,train_ms"
    }

    /// One CSV row; absent optionals render as empty fields.
    pub fn to_csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.round,
            self.frechet_distance,
            opt(self.precision),
            opt(self.recall),
            opt(self.swaps.correct_frac()),
            opt(self.swaps.wrong_prevention_frac()),
            opt(self.swaps.wrong_permission_frac()),
            self.defense_ms,
            self.train_ms,
        )
    }
}

/// Millisecond stopwatch over the monotonic clock.
#[derive(Debug)]
pub struct Stopwatch(Instant);

impl Stopwatch {
    /// Starts timing now.
    pub fn start() -> Self {
        Stopwatch(Instant::now())
    }

    /// Milliseconds elapsed since start.
    pub fn elapsed_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Four points with exact sample mean `mu` and sample covariance
    /// `s2 * I` (denominator `n - 1 = 3`).
    fn exact_iso_set(mu: [f64; 2], s2: f64) -> Batch {
        let a = (1.5 * s2).sqrt();
        Batch::from_fn(4, 2, |r, c| {
            let offset = match r {
                0 => [a, 0.0],
                1 => [-a, 0.0],
                2 => [0.0, a],
                _ => [0.0, -a],
            };
            mu[c] + offset[c]
        })
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let mut rng = StdRng::seed_from_u64(1);
        let x = Batch::from_fn(50, 2, |_, _| rng.random_range(-2.0..2.0));
        let fd = frechet_distance(&x, &x).unwrap();
        assert!(fd.abs() < 1e-9, "fd = {fd}");
    }

    #[test]
    fn mean_shift_with_unit_covariance_is_squared_distance() {
        // mu1 = (0,0), mu2 = (3,0), S1 = S2 = I: distance is exactly 9.
        let a = exact_iso_set([0.0, 0.0], 1.0);
        let b = exact_iso_set([3.0, 0.0], 1.0);
        let fd = frechet_distance(&a, &b).unwrap();
        assert!((fd - 9.0).abs() < 1e-9, "fd = {fd}");
    }

    #[test]
    fn commuting_isotropic_covariances() {
        // mu1 = mu2, S1 = 4I, S2 = I: tr(5I - 2*2I) = 2.
        let a = exact_iso_set([1.0, -1.0], 4.0);
        let b = exact_iso_set([1.0, -1.0], 1.0);
        let fd = frechet_distance(&a, &b).unwrap();
        assert!((fd - 2.0).abs() < 1e-6, "fd = {fd}");
    }

    /// Samples from a random anisotropic, sheared 2-D Gaussian.
    fn random_gaussian_samples(rng: &mut StdRng) -> Batch {
        use rand_distr::Distribution;
        let cx = rng.random_range(-3.0..3.0);
        let cy = rng.random_range(-3.0..3.0);
        let sx = rng.random_range(0.1..2.0);
        let sy = rng.random_range(0.1..2.0);
        let shear = rng.random_range(-1.0..1.0);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let mut data = Vec::with_capacity(400);
        for _ in 0..200 {
            let u: f64 = normal.sample(rng);
            let v: f64 = normal.sample(rng);
            data.push(cx + sx * u);
            data.push(cy + sy * (shear * u + v));
        }
        Batch::from_vec(200, 2, data).unwrap()
    }

    /// Fréchet distance via an independent eigendecomposition of the
    /// symmetrized product, using nalgebra.
    fn frechet_eigen_oracle(x: &Batch, y: &Batch) -> f64 {
        use nalgebra::{Matrix2, Vector2};
        let fit = |b: &Batch| {
            let f = GaussianFit::fit(b).unwrap();
            (
                Vector2::new(f.mean[0], f.mean[1]),
                Matrix2::new(f.cov[0], f.cov[1], f.cov[2], f.cov[3]),
            )
        };
        let (m1, s1) = fit(x);
        let (m2, s2) = fit(y);
        let sqrt_s1 = {
            let eig = nalgebra::SymmetricEigen::new(s1);
            let d = Matrix2::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
            eig.eigenvectors * d * eig.eigenvectors.transpose()
        };
        let inner = sqrt_s1 * s2 * sqrt_s1;
        let eig = nalgebra::SymmetricEigen::new(inner);
        let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
        (m1 - m2).norm_squared() + (s1 + s2).trace() - 2.0 * tr_sqrt
    }

    #[test]
    fn closed_form_matches_eigen_oracle() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..25 {
            let x = random_gaussian_samples(&mut rng);
            let y = random_gaussian_samples(&mut rng);
            let ours = frechet_distance(&x, &y).unwrap();
            let oracle = frechet_eigen_oracle(&x, &y);
            assert!(
                (ours - oracle).abs() < 1e-6,
                "closed form {ours} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn too_few_samples_are_rejected() {
        let x = Batch::zeros(2, 2);
        assert!(frechet_distance(&x, &x).is_err());
    }

    #[test]
    fn precision_recall_examples() {
        let set = |ids: &[usize]| ids.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(
            precision_recall(&set(&[2, 3]), &set(&[3])),
            (Some(0.5), Some(1.0))
        );
        assert_eq!(precision_recall(&set(&[]), &set(&[])), (None, None));
        assert_eq!(
            precision_recall(&set(&[1, 4, 5]), &set(&[1, 4, 5])),
            (Some(1.0), Some(1.0))
        );
        // Flagged but empty truth: precision defined, recall absent.
        assert_eq!(precision_recall(&set(&[2]), &set(&[])), (Some(0.0), None));
    }

    fn action(role_a: ActorKind, role_b: ActorKind, executed: bool) -> SwapAction {
        SwapAction {
            a: 0,
            b: 1,
            role_a,
            role_b,
            executed,
        }
    }

    #[test]
    fn swap_stats_examples() {
        use ActorKind::*;
        let stats = swap_action_stats(&[
            action(Benign, Benign, true),
            action(Benign, FreeRider, false),
        ]);
        assert_eq!(stats.correct_frac(), Some(1.0));
        assert_eq!(stats.wrong_prevention_frac(), Some(0.0));
        assert_eq!(stats.wrong_permission_frac(), Some(0.0));

        let stats = swap_action_stats(&[action(Benign, Benign, false)]);
        assert_eq!(stats.wrong_prevention_frac(), Some(1.0));

        let stats = swap_action_stats(&[action(FreeRider, Benign, true)]);
        assert_eq!(stats.wrong_permission_frac(), Some(1.0));

        // Prevented free-rider pair is neither correct nor wrong; the three
        // fractions plus that case account for every attempt.
        let stats = swap_action_stats(&[
            action(FreeRider, FreeRider, false),
            action(FreeRider, FreeRider, true),
            action(Benign, Benign, true),
            action(Benign, FreeRider, true),
            action(Benign, Benign, false),
        ]);
        assert_eq!(stats.attempts, 5);
        assert_eq!(
            stats.correct + stats.wrong_prevention + stats.wrong_permission,
            4
        );
    }

    #[test]
    fn empty_swap_stats_have_no_fractions() {
        let stats = swap_action_stats(&[]);
        assert_eq!(stats.correct_frac(), None);
        assert_eq!(stats.wrong_prevention_frac(), None);
        assert_eq!(stats.wrong_permission_frac(), None);
    }

    #[test]
    fn csv_row_uses_empty_fields_for_absent_optionals() {
        let rec = MetricsRecord {
            round: 0,
            frechet_distance: 1.5,
            precision: None,
            recall: None,
            swaps: SwapStats::default(),
            defense_ms: 0.0,
            train_ms: 0.0,
        };
        assert_eq!(rec.to_csv_row(), "0,1.5,,,,,,0,0");
    }

    proptest! {
        #[test]
        fn frechet_is_symmetric_and_translation_invariant(
            seed in 0u64..500,
            dx in -5.0f64..5.0,
            dy in -5.0f64..5.0,
        ) {
            let mut rng = StdRng::seed_from_u64(seed);
            let x = Batch::from_fn(40, 2, |_, _| rng.random_range(-2.0..2.0));
            let y = Batch::from_fn(40, 2, |_, _| rng.random_range(-2.0..2.0));
            let fd_xy = frechet_distance(&x, &y).unwrap();
            let fd_yx = frechet_distance(&y, &x).unwrap();
            prop_assert!((fd_xy - fd_yx).abs() < 1e-9);
            prop_assert!(fd_xy >= 0.0);
            // Shift both sets rigidly: the distance must not move.
            let shift = |b: &Batch| Batch::from_fn(b.rows(), 2, |r, c| {
                b.row(r)[c] + if c == 0 { dx } else { dy }
            });
            let fd_shifted = frechet_distance(&shift(&x), &shift(&y)).unwrap();
            prop_assert!((fd_xy - fd_shifted).abs() < 1e-7);
        }
    }
}
