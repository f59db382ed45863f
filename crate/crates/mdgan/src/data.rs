//! Synthetic 2-D ring dataset, deterministic client sharding, and batch
//! sampling.
//!
//! The training data is a mixture of `K` Gaussians whose centers sit equally
//! spaced on a circle. It is multi-modal enough that lost coverage shows up
//! in the Fréchet distance, yet small enough that full experiments run in
//! seconds.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::Batch;

/// A sampled ring dataset: `points` row `i` belongs to mode `mode_labels[i]`.
#[derive(Debug, Clone)]
pub struct RingDataset {
    /// Number of mixture modes.
    pub modes: usize,
    /// Circle radius the mode centers sit on.
    pub radius: f64,
    /// Per-coordinate Gaussian noise around each center.
    pub noise_std: f64,
    /// All samples, one per row.
    pub points: Batch,
    /// Mode index of each row.
    pub mode_labels: Vec<usize>,
}

/// One benign client's slice of the dataset.
#[derive(Debug, Clone)]
pub struct ClientShard {
    /// Owning client id (0-based over benign clients).
    pub client_id: usize,
    /// The shard's samples, one per row.
    pub points: Batch,
    /// Mode index of each row.
    pub mode_labels: Vec<usize>,
}

/// Centers of `k` modes equally spaced on a circle of the given radius,
/// starting at angle zero.
pub fn ring_centers(k: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..k)
        .map(|i| {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
            [radius * angle.cos(), radius * angle.sin()]
        })
        .collect()
}

/// Samples a ring dataset with `total_points / k` points per mode.
///
/// Draws are rejection-sampled so every point lies within `6 * noise_std`
/// of its mode center, keeping the modes cleanly separated.
pub fn make_ring_dataset(
    k: usize,
    radius: f64,
    noise_std: f64,
    total_points: usize,
    rng: &mut impl Rng,
) -> Result<RingDataset> {
    if k == 0 {
        return Err(Error::InvalidConfig("mode count must be positive".to_owned()));
    }
    if noise_std <= 0.0 || !noise_std.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "mode noise std must be positive and finite, got {noise_std}"
        )));
    }
    if total_points % k != 0 {
        return Err(Error::InvalidConfig(format!(
            "{total_points} points cannot be split evenly over {k} modes"
        )));
    }
    let centers = ring_centers(k, radius);
    let per_mode = total_points / k;
    let normal = Normal::new(0.0, noise_std).expect("positive std");
    let mut points = Batch::zeros(total_points, 2);
    let mut mode_labels = Vec::with_capacity(total_points);
    for (mode, center) in centers.iter().enumerate() {
        for i in 0..per_mode {
            let row = points.row_mut(mode * per_mode + i);
            loop {
                let dx: f64 = normal.sample(rng);
                let dy: f64 = normal.sample(rng);
                if (dx * dx + dy * dy).sqrt() <= 6.0 * noise_std {
                    row[0] = center[0] + dx;
                    row[1] = center[1] + dy;
                    break;
                }
            }
            mode_labels.push(mode);
        }
    }
    Ok(RingDataset {
        modes: k,
        radius,
        noise_std,
        points,
        mode_labels,
    })
}

/// Splits a dataset into `n_benign` shards with per-mode counts equal up to
/// one point.
///
/// Assignment is deterministic in dataset order: each mode's block is cut
/// into consecutive runs, client `i` taking the `i`-th run of every mode.
pub fn partition_shards(dataset: &RingDataset, n_benign: usize) -> Result<Vec<ClientShard>> {
    if n_benign == 0 {
        return Err(Error::InvalidConfig(
            "cannot shard over zero benign clients".to_owned(),
        ));
    }
    // Indices of each mode, in dataset order.
    let mut by_mode: Vec<Vec<usize>> = vec![Vec::new(); dataset.modes];
    for (idx, &m) in dataset.mode_labels.iter().enumerate() {
        by_mode[m].push(idx);
    }
    let mut shard_indices: Vec<Vec<usize>> = vec![Vec::new(); n_benign];
    for mode_idxs in &by_mode {
        let base = mode_idxs.len() / n_benign;
        let extra = mode_idxs.len() % n_benign;
        let mut cursor = 0;
        for (i, shard) in shard_indices.iter_mut().enumerate() {
            let take = base + usize::from(i < extra);
            shard.extend_from_slice(&mode_idxs[cursor..cursor + take]);
            cursor += take;
        }
    }
    Ok(shard_indices
        .into_iter()
        .enumerate()
        .map(|(client_id, mut idxs)| {
            idxs.sort_unstable();
            let points = Batch::from_fn(idxs.len(), 2, |r, c| dataset.points.row(idxs[r])[c]);
            let mode_labels = idxs.iter().map(|&i| dataset.mode_labels[i]).collect();
            ClientShard {
                client_id,
                points,
                mode_labels,
            }
        })
        .collect())
}

/// One round's pass over a shard: a fresh permutation chunked into
/// `batch_size` mini-batches (without replacement within the round).
///
/// A trailing remainder smaller than `batch_size` is dropped, so a round
/// sees `floor(m / batch_size)` batches.
pub fn round_batches(
    shard: &ClientShard,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Batch>> {
    let m = shard.points.rows();
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".to_owned()));
    }
    if batch_size > m {
        return Err(Error::InvalidConfig(format!(
            "batch size {batch_size} exceeds shard size {m}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    Ok(order
        .chunks_exact(batch_size)
        .map(|chunk| Batch::from_fn(batch_size, 2, |r, c| shard.points.row(chunk[r])[c]))
        .collect())
}

/// I.i.d. standard-normal latent batch of shape `batch_size x dim`.
pub fn latent_batch(batch_size: usize, dim: usize, rng: &mut impl Rng) -> Batch {
    let normal = Normal::new(0.0, 1.0).expect("unit std");
    Batch::from_fn(batch_size, dim, |_, _| normal.sample(rng))
}

/// Writes a dataset as CSV (`x,y,mode_label`) for external plotting.
pub fn write_dataset_csv(dataset: &RingDataset, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut out = String::from("x,y,mode_label\n");
    for (row, label) in dataset.points.iter_rows().zip(&dataset.mode_labels) {
        out.push_str(&format!("{},{},{label}\n", row[0], row[1]));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}
