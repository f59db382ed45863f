//! File-emitting front end: single runs, free-rider sweeps, and manifests.

use crate::config::{DefenseKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::nn::MlpNetwork;
use crate::rng::{stream, Stream};
use crate::sim::{run_experiment, sample_generator, ExperimentOutput};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Artifact paths of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunArtifacts {
    pub metrics_csv: PathBuf,
    pub roundlog_jsonl: PathBuf,
    pub samples_csv: PathBuf,
}

/// Written to `manifest.json` before execution starts; re-running the same
/// manifest reproduces the same outputs (byte-identical when the config sets
/// `deterministic_timing`).
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub artifacts: Vec<RunArtifacts>,
}

/// A finished single run: everything computed plus where it was written.
#[derive(Debug)]
pub struct RunOutcome {
    pub output: ExperimentOutput,
    pub artifacts: RunArtifacts,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn metrics_csv_text(metrics: &[MetricsRecord]) -> String {
    let mut out = String::from(MetricsRecord::csv_header());
    out.push('\n');
    for m in metrics {
        out.push_str(&m.to_csv_row());
        out.push('\n');
    }
    out
}

/// Writes `n` generator samples to `path` as `x,y` CSV rows.
pub fn emit_samples(
    g: &MlpNetwork,
    n: usize,
    latent_dim: usize,
    path: &Path,
    rng: &mut impl Rng,
) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidConfig(
            "emit_samples: need at least one sample".to_owned(),
        ));
    }
    let samples = sample_generator(g, n, latent_dim, rng)?;
    let mut text = String::from("x,y\n");
    for row in samples.iter_rows() {
        text.push_str(&format!("{},{}\n", row[0], row[1]));
    }
    write_text(path, &text)
}

/// Executes one experiment and writes `manifest.json`, `metrics.csv`,
/// `roundlog.jsonl`, and `samples.csv` into `out_dir` (created if missing).
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let artifacts = RunArtifacts {
        metrics_csv: out_dir.join("metrics.csv"),
        roundlog_jsonl: out_dir.join("roundlog.jsonl"),
        samples_csv: out_dir.join("samples.csv"),
    };
    let manifest = RunManifest {
        config: config.clone(),
        seeds: vec![config.seed],
        out_dir: out_dir.to_path_buf(),
        artifacts: vec![artifacts.clone()],
    };
    let manifest_text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Serialize(e.to_string()))?;
    write_text(&out_dir.join("manifest.json"), &manifest_text)?;

    let output = run_experiment(config)?;

    write_text(&artifacts.metrics_csv, &metrics_csv_text(&output.metrics))?;

    let mut log_text = String::new();
    for entry in &output.round_logs {
        let line = serde_json::to_string(entry).map_err(|e| Error::Serialize(e.to_string()))?;
        log_text.push_str(&line);
        log_text.push('\n');
    }
    write_text(&artifacts.roundlog_jsonl, &log_text)?;

    let mut sample_rng = stream(config.seed, Stream::Eval, config.rounds as u64, 1);
    emit_samples(
        &output.generator,
        config.eval_samples,
        config.arch.latent_dim,
        &artifacts.samples_csv,
        &mut sample_rng,
    )?;

    Ok(RunOutcome { output, artifacts })
}

/// One (defense, free-rider count) cell of a sweep summary: means over the
/// seeds that completed, plus the first error if any seed failed.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub defense: DefenseKind,
    pub freeriders: usize,
    pub seeds_completed: usize,
    pub mean_final_fd: Option<f64>,
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
    pub mean_correct_frac: Option<f64>,
    pub mean_wrong_prevention_frac: Option<f64>,
    pub mean_wrong_permission_frac: Option<f64>,
    pub error: Option<String>,
}

/// A finished sweep: the summary rows in cell order and the summary path.
#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub summary_csv: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
struct SweepManifest {
    base_config: ExperimentConfig,
    defenses: Vec<DefenseKind>,
    freerider_counts: Vec<usize>,
    seeds: Vec<u64>,
    out_dir: PathBuf,
    run_dirs: Vec<PathBuf>,
}

/// Per-run quantities the summary aggregates (from the final metrics row).
#[derive(Debug, Clone, Copy)]
struct FinalStats {
    fd: f64,
    precision: Option<f64>,
    recall: Option<f64>,
    correct_frac: Option<f64>,
    wrong_prevention_frac: Option<f64>,
    wrong_permission_frac: Option<f64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    mean(&present)
}

fn csv_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_quote(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_owned()
    }
}

/// Runs the cross product `defenses x counts x seeds` and writes per-run
/// artifacts plus `sweep_summary.csv`.
///
/// Seeds are `base.seed, base.seed + 1, ...`. Cells run in parallel; each is
/// internally deterministic, and the summary keeps cell order. A failing run
/// is recorded in its cell's row and the remaining runs continue.
pub fn sweep(
    base: &ExperimentConfig,
    counts: &[usize],
    n_seeds: usize,
    defenses: &[DefenseKind],
    out_dir: &Path,
) -> Result<SweepOutcome> {
    if counts.is_empty() || n_seeds == 0 || defenses.is_empty() {
        return Err(Error::InvalidConfig(
            "sweep: counts, seeds, and defenses must be nonempty".to_owned(),
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let seeds: Vec<u64> = (0..n_seeds).map(|i| base.seed + i as u64).collect();

    let mut jobs: Vec<(DefenseKind, usize, u64, PathBuf)> = Vec::new();
    for &defense in defenses {
        for &count in counts {
            for &seed in &seeds {
                let dir = out_dir.join(format!("{}_f{}_s{}", defense.as_str(), count, seed));
                jobs.push((defense, count, seed, dir));
            }
        }
    }
    let manifest = SweepManifest {
        base_config: base.clone(),
        defenses: defenses.to_vec(),
        freerider_counts: counts.to_vec(),
        seeds: seeds.clone(),
        out_dir: out_dir.to_path_buf(),
        run_dirs: jobs.iter().map(|(_, _, _, d)| d.clone()).collect(),
    };
    let manifest_text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serialize(e.to_string()))?;
    write_text(&out_dir.join("manifest.json"), &manifest_text)?;

    let results: Vec<std::result::Result<FinalStats, String>> = jobs
        .par_iter()
        .map(|(defense, count, seed, dir)| {
            let mut config = base.clone();
            config.defense = *defense;
            config.n_freeriders = *count;
            config.seed = *seed;
            let outcome = run(&config, dir).map_err(|e| e.to_string())?;
            let last = outcome
                .output
                .metrics
                .last()
                .expect("metrics always contain the round-0 row");
            Ok(FinalStats {
                fd: last.frechet_distance,
                precision: last.precision,
                recall: last.recall,
                correct_frac: last.swaps.correct_frac(),
                wrong_prevention_frac: last.swaps.wrong_prevention_frac(),
                wrong_permission_frac: last.swaps.wrong_permission_frac(),
            })
        })
        .collect();

    let mut rows = Vec::new();
    let per_cell = seeds.len();
    for (cell, chunk) in results.chunks(per_cell).enumerate() {
        let (defense, count, _, _) = jobs[cell * per_cell];
        let ok: Vec<FinalStats> = chunk.iter().filter_map(|r| r.as_ref().ok()).copied().collect();
        let error = chunk.iter().find_map(|r| r.as_ref().err().cloned());
        rows.push(SweepRow {
            defense,
            freeriders: count,
            seeds_completed: ok.len(),
            mean_final_fd: mean(&ok.iter().map(|s| s.fd).collect::<Vec<_>>()),
            mean_precision: mean_present(ok.iter().map(|s| s.precision)),
            mean_recall: mean_present(ok.iter().map(|s| s.recall)),
            mean_correct_frac: mean_present(ok.iter().map(|s| s.correct_frac)),
            mean_wrong_prevention_frac: mean_present(
                ok.iter().map(|s| s.wrong_prevention_frac),
            ),
            mean_wrong_permission_frac: mean_present(
                ok.iter().map(|s| s.wrong_permission_frac),
            ),
            error,
        });
    }

    let mut text = String::from(
        "defense,freeriders,seeds_completed,mean_final_fd,mean_precision,mean_recall,\
         mean_correct_frac,mean_wrong_prevention_frac,mean_wrong_permission_frac,error\n",
    );
    for row in &rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.defense.as_str(),
            row.freeriders,
            row.seeds_completed,
            csv_field(row.mean_final_fd),
            csv_field(row.mean_precision),
            csv_field(row.mean_recall),
            csv_field(row.mean_correct_frac),
            csv_field(row.mean_wrong_prevention_frac),
            csv_field(row.mean_wrong_permission_frac),
            csv_quote(row.error.as_deref().unwrap_or("")),
        ));
    }
    let summary_csv = out_dir.join("sweep_summary.csv");
    write_text(&summary_csv, &text)?;

    Ok(SweepOutcome { rows, summary_csv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Protocol;
    use crate::nn::Activation;

    fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.n_benign = 2;
        c.data.modes = 4;
        c.data.points_per_client = 60;
        c.batch_size = 20;
        c.d_steps_per_g_step = 3;
        c.rounds = 2;
        c.defense = DefenseKind::None;
        c.probe_period = 1;
        c.probe_size = 16;
        c.metrics_period = 1;
        c.eval_samples = 64;
        c.arch.latent_dim = 4;
        c.arch.g_hidden = vec![8];
        c.arch.d_hidden = vec![8];
        c.deterministic_timing = true;
        c.validate().unwrap();
        c
    }

    fn read(path: &Path) -> String {
        std::fs::read_to_string(path).unwrap()
    }

    #[test]
    fn run_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let outcome = run(&config, dir.path()).unwrap();

        let metrics = read(&outcome.artifacts.metrics_csv);
        let lines: Vec<&str> = metrics.trim_end().lines().collect();
        // Header + round 0 baseline + rounds 1..=2.
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("round,fd,"));

        let log = read(&outcome.artifacts.roundlog_jsonl);
        assert_eq!(log.trim_end().lines().count(), 2);
        for line in log.trim_end().lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("round").is_some());
        }

        let samples = read(&outcome.artifacts.samples_csv);
        assert_eq!(samples.trim_end().lines().count(), config.eval_samples + 1);

        let manifest = read(&dir.path().join("manifest.json"));
        let v: serde_json::Value = serde_json::from_str(&manifest).unwrap();
        assert_eq!(v["config"]["n_benign"], 2);
    }

    #[test]
    fn identical_seeds_write_identical_bytes() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let a = run(&config, dir_a.path()).unwrap();
        let b = run(&config, dir_b.path()).unwrap();
        assert_eq!(read(&a.artifacts.metrics_csv), read(&b.artifacts.metrics_csv));
        assert_eq!(
            read(&a.artifacts.roundlog_jsonl),
            read(&b.artifacts.roundlog_jsonl)
        );
        assert_eq!(read(&a.artifacts.samples_csv), read(&b.artifacts.samples_csv));
    }

    #[test]
    fn emit_samples_matches_the_spec_shape() {
        let dir = tempfile::tempdir().unwrap();
        let g = MlpNetwork::kaiming(
            &[4, 8, 2],
            Activation::Relu,
            Activation::Identity,
            &mut stream(1, Stream::GeneratorInit, 0, 0),
        )
        .unwrap();
        let path = dir.path().join("one.csv");
        emit_samples(&g, 1, 4, &path, &mut stream(1, Stream::Eval, 0, 1)).unwrap();
        let text = read(&path);
        let lines: Vec<&str> = text.trim_end().lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "x,y");

        let again = dir.path().join("two.csv");
        emit_samples(&g, 1, 4, &again, &mut stream(1, Stream::Eval, 0, 1)).unwrap();
        assert_eq!(text, read(&again));

        assert!(emit_samples(&g, 0, 4, &path, &mut stream(1, Stream::Eval, 0, 1)).is_err());
    }

    #[test]
    fn sweep_produces_one_row_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let outcome = sweep(
            &config,
            &[0, 1],
            1,
            &[DefenseKind::None, DefenseKind::Dfg],
            dir.path(),
        )
        .unwrap();
        assert_eq!(outcome.rows.len(), 4);
        let text = read(&outcome.summary_csv);
        assert_eq!(text.trim_end().lines().count(), 5);
        assert!(dir.path().join("none_f0_s0").join("metrics.csv").exists());
        assert!(dir.path().join("dfg_f1_s0").join("roundlog.jsonl").exists());
        for row in &outcome.rows {
            assert_eq!(row.seeds_completed, 1);
            assert!(row.error.is_none());
            assert!(row.mean_final_fd.is_some());
        }
    }

    #[test]
    fn failing_cells_are_recorded_and_the_rest_continue() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config();
        config.protocol = Protocol::Simple;
        let outcome = sweep(
            &config,
            &[0],
            1,
            &[DefenseKind::DfgPlus, DefenseKind::None],
            dir.path(),
        )
        .unwrap();
        assert_eq!(outcome.rows.len(), 2);
        let bad = &outcome.rows[0];
        assert_eq!(bad.seeds_completed, 0);
        assert!(bad.error.as_deref().unwrap().contains("dfg_plus"));
        assert!(bad.mean_final_fd.is_none());
        let good = &outcome.rows[1];
        assert!(good.error.is_none());
        assert_eq!(good.seeds_completed, 1);

        let text = read(&outcome.summary_csv);
        assert!(text.contains("dfg_plus,0,0,,,"));
    }

    #[test]
    fn empty_sweep_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        assert!(sweep(&config, &[], 1, &[DefenseKind::None], dir.path()).is_err());
        assert!(sweep(&config, &[0], 0, &[DefenseKind::None], dir.path()).is_err());
        assert!(sweep(&config, &[0], 1, &[], dir.path()).is_err());
    }
}
