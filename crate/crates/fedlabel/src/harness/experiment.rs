//! Experiment loop: data preparation, per-round execution with the model
//! schedule applied, and per-round persistence (metrics, score-table
//! snapshots, optional audit dumps).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::dataset::{partition_noniid, LabeledSet, PrivateShard, PublicDataset, UserId};
use crate::data::features::make_feature_window;
use crate::data::ingest::ingest_csv;
use crate::data::labels::ActivityLabel;
use crate::data::recording::window;
use crate::data::synth::{synth_generate, SynthParams};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::federation::{run_round, ClientState, GlobalScoreTable, ProtocolConfig, RoundMetrics};
use crate::harness::config::{CsvSource, DataSource, ExperimentConfig, SyntheticSource};
use crate::harness::report::write_metrics_csv;
use crate::matrix::Matrix;
use crate::rng::mix_seed;

#[derive(Debug)]
pub struct ExperimentOutput {
    pub rounds: Vec<RoundMetrics>,
    pub final_global: GlobalScoreTable,
}

/// Per-iteration shard source. Synthetic shards are generated on demand;
/// CSV shards come from a pre-partitioned grid.
enum ShardSource {
    Synthetic { params: SynthParams, dip: Option<(UserId, usize, f64)> },
    Grid(Vec<Vec<PrivateShard>>),
}

struct PreparedData {
    public: PublicDataset,
    shards: ShardSource,
}

fn prepare_synthetic(cfg: &ExperimentConfig, s: &SyntheticSource) -> Result<PreparedData> {
    let params = SynthParams::new(s.dim, s.separation, s.drift_magnitude, cfg.seed)?;
    let public_set = synth_generate(
        &params,
        &cfg.labels,
        cfg.public_per_label,
        0,
        0.0,
        mix_seed(cfg.seed, &[0]),
    )?;
    let public = PublicDataset::new(public_set, &cfg.labels)?;
    let dip = s.dip.as_ref().map(|d| (d.user, d.iteration, d.magnitude));
    Ok(PreparedData { public, shards: ShardSource::Synthetic { params, dip } })
}

fn prepare_csv(cfg: &ExperimentConfig, c: &CsvSource) -> Result<PreparedData> {
    let report = ingest_csv(&c.path, &c.schema)?;
    if report.malformed_rows > 0 {
        log::info!("skipped {} malformed csv rows", report.malformed_rows);
    }
    let name_to_label =
        |name: &str| -> Option<&ActivityLabel> { cfg.labels.iter().find(|l| l.name == name) };
    let expected_len = cfg.feature_dim();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<u32> = Vec::new();
    let mut foreign = 0usize;
    for rec in &report.recordings {
        let Some(label) = name_to_label(&rec.label.name) else {
            foreign += 1;
            continue;
        };
        let rate = rec.rate.round();
        if (rec.rate - rate).abs() > 0.5 || rate <= 0.0 {
            return Err(Error::InvalidRate(format!(
                "recording rate {} Hz is not a whole number",
                rec.rate
            )));
        }
        for seg in window(rec, c.window_seconds) {
            let fw = make_feature_window(&seg, rate as u32, c.target_rate, label)?;
            if fw.features.len() != expected_len {
                return Err(Error::Shape(format!(
                    "feature window of {} values, expected {expected_len}",
                    fw.features.len()
                )));
            }
            rows.push(fw.features);
            ys.push(label.id);
        }
    }
    if foreign > 0 {
        log::info!("ignored {foreign} recordings with labels outside the experiment universe");
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("csv source produced no feature windows".into()));
    }
    let pool = LabeledSet { features: Matrix::from_rows(&rows)?, labels: ys };

    // Carve the public dataset out of the pool, then partition the rest.
    let mut public_idx: Vec<usize> = Vec::new();
    let mut rest_idx: Vec<usize> = Vec::new();
    for label in &cfg.labels {
        let mut mine: Vec<usize> = pool
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label.id)
            .map(|(i, _)| i)
            .collect();
        use rand::seq::SliceRandom;
        let mut rng = crate::rng::rng_from_seed(mix_seed(cfg.seed, &[30, label.id as u64]));
        mine.shuffle(&mut rng);
        if mine.len() < cfg.public_per_label {
            return Err(Error::Capacity {
                label: label.name.clone(),
                detail: format!(
                    "public dataset needs {} windows, pool has {}",
                    cfg.public_per_label,
                    mine.len()
                ),
            });
        }
        public_idx.extend_from_slice(&mine[..cfg.public_per_label]);
        rest_idx.extend_from_slice(&mine[cfg.public_per_label..]);
    }
    let public_set = LabeledSet {
        features: pool.features.select_rows(&public_idx),
        labels: public_idx.iter().map(|&i| pool.labels[i]).collect(),
    };
    let public = PublicDataset::new(public_set, &cfg.labels)?;

    let rest = LabeledSet {
        features: pool.features.select_rows(&rest_idx),
        labels: rest_idx.iter().map(|&i| pool.labels[i]).collect(),
    };
    let label_sets: Vec<_> = cfg.users.iter().map(|u| u.labels.clone()).collect();
    let grid = partition_noniid(
        &rest,
        &cfg.labels,
        &label_sets,
        cfg.iterations,
        cfg.per_label_per_iteration,
        mix_seed(cfg.seed, &[31]),
    )?;
    Ok(PreparedData { public, shards: ShardSource::Grid(grid) })
}

fn shards_for_iteration(
    cfg: &ExperimentConfig,
    source: &ShardSource,
    iteration: usize,
) -> Result<Vec<PrivateShard>> {
    match source {
        ShardSource::Synthetic { params, dip } => {
            let mut shards = Vec::with_capacity(cfg.users.len());
            for (k, user) in cfg.users.iter().enumerate() {
                let id = k as UserId + 1;
                let members: Vec<ActivityLabel> =
                    user.labels.iter().map(|l| cfg.labels[l as usize].clone()).collect();
                let dip_magnitude = match dip {
                    Some((u, i, m)) if *u == id && *i == iteration => *m,
                    _ => 0.0,
                };
                let set = synth_generate(
                    params,
                    &members,
                    cfg.per_label_per_iteration,
                    iteration,
                    dip_magnitude,
                    mix_seed(cfg.seed, &[2, id as u64, iteration as u64]),
                )?;
                shards.push(PrivateShard::new(id, iteration, set, user.labels.clone())?);
            }
            Ok(shards)
        }
        ShardSource::Grid(grid) => Ok(grid.iter().map(|row| row[iteration - 1].clone()).collect()),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutput> {
    run_experiment_with_mode(cfg, out_dir, &ExecMode::from_env())
}

/// Run all iterations. When `out_dir` is given, writes per-round score
/// snapshots (plus audit dumps when enabled) and a final `metrics.csv`.
pub fn run_experiment_with_mode(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
    mode: &ExecMode,
) -> Result<ExperimentOutput> {
    let data = match &cfg.source {
        DataSource::Synthetic(s) => prepare_synthetic(cfg, s)?,
        DataSource::Csv(c) => prepare_csv(cfg, c)?,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::create_dir_all(dir.join("snapshots"))?;
        if cfg.audit {
            fs::create_dir_all(dir.join("audit"))?;
        }
    }

    let protocol = ProtocolConfig {
        temperature: cfg.temperature,
        train: cfg.train.clone(),
        beta_granularity: cfg.beta_granularity,
        restrict_accuracy: cfg.restrict_accuracy,
        base_seed: cfg.seed,
    };

    let mut global = GlobalScoreTable::zeros(data.public.rows(), cfg.labels.len());
    let mut rounds: Vec<RoundMetrics> = Vec::with_capacity(cfg.iterations);
    for iteration in 1..=cfg.iterations {
        let clients: Vec<ClientState> = cfg
            .users
            .iter()
            .enumerate()
            .map(|(k, u)| ClientState {
                user: k as UserId + 1,
                labels: u.labels.clone(),
                spec: u.schedule.spec_at(iteration).clone(),
            })
            .collect();
        let shards = shards_for_iteration(cfg, &data.shards, iteration)?;
        let out = run_round(&data.public, &clients, &shards, &global, iteration, &protocol, mode)
            .map_err(|e| Error::Protocol(format!("round {iteration} failed: {e}")))?;
        global = out.global;

        if let Some(dir) = out_dir {
            write_snapshot(&dir.join("snapshots"), iteration, &global)?;
            if cfg.audit {
                let path =
                    dir.join("audit").join(format!("round_{iteration:02}_submissions.json"));
                let json = serde_json::to_string_pretty(&out.submissions)?;
                fs::write(path, json)?;
            }
        }
        rounds.push(out.metrics);
    }

    if let Some(dir) = out_dir {
        write_metrics_csv(&rounds, &dir.join("metrics.csv"))?;
    }
    Ok(ExperimentOutput { rounds, final_global: global })
}

/// Snapshot layout: `rows: u64 LE`, `cols: u64 LE`, then row-major data as
/// 64-bit little-endian floats.
pub fn write_snapshot(dir: &Path, iteration: usize, global: &GlobalScoreTable) -> Result<PathBuf> {
    let path = dir.join(format!("round_{iteration:02}.f64"));
    let mut file = fs::File::create(&path)?;
    file.write_all(&(global.scores.rows() as u64).to_le_bytes())?;
    file.write_all(&(global.scores.cols() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(global.scores.data().len() * 8);
    for v in global.scores.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(path)
}

pub fn read_snapshot(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(Error::InvalidInput(format!("snapshot {} is truncated", path.display())));
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let need = 16 + rows * cols * 8;
    if bytes.len() != need {
        return Err(Error::InvalidInput(format!(
            "snapshot {} has {} bytes, expected {need}",
            path.display(),
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn tiny_config(extra: &str) -> ExperimentConfig {
        let text = format!(
            "experiment.labels = A, B, C, D\n\
             experiment.iterations = 2\n\
             experiment.seed = 3\n\
             data.dim = 12\n\
             data.separation = 3.0\n\
             data.public_per_label = 12\n\
             data.per_label_per_iteration = 10\n\
             train.batch_size = 8\n\
             user.1.labels = A, B\n\
             user.2.labels = B, C\n\
             user.3.labels = C, D\n\
             {extra}"
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn experiment_emits_one_metrics_row_set_per_round() {
        let cfg = tiny_config("");
        let out = run_experiment_with_mode(&cfg, None, &ExecMode::Sequential).unwrap();
        assert_eq!(out.rounds.len(), 2);
        for (i, round) in out.rounds.iter().enumerate() {
            assert_eq!(round.iteration, i + 1);
            assert_eq!(round.per_user.len(), 3);
        }
        assert_eq!(out.final_global.iteration, 2);
    }

    #[test]
    fn experiment_is_deterministic() {
        let cfg = tiny_config("");
        let a = run_experiment_with_mode(&cfg, None, &ExecMode::Sequential).unwrap();
        let b = run_experiment_with_mode(&cfg, None, &ExecMode::Sequential).unwrap();
        assert_eq!(a.final_global.scores, b.final_global.scores);
        for (ra, rb) in a.rounds.iter().zip(&b.rounds) {
            assert_eq!(ra.per_user, rb.per_user);
        }
    }

    #[test]
    fn swap_does_not_alter_earlier_rounds() {
        let base = tiny_config("");
        let swapped = tiny_config("user.1.swap.2 = ann(4)\n");
        let a = run_experiment_with_mode(&base, None, &ExecMode::Sequential).unwrap();
        let b = run_experiment_with_mode(&swapped, None, &ExecMode::Sequential).unwrap();
        // Identical before the swap iteration...
        assert_eq!(a.rounds[0].per_user, b.rounds[0].per_user);
        // ...and the swapped user's round-2 model differs, so the round-2
        // aggregated scores differ.
        assert_ne!(a.final_global.scores, b.final_global.scores);
    }

    #[test]
    fn snapshots_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config("");
        let out = run_experiment_with_mode(&cfg, Some(dir.path()), &ExecMode::Sequential).unwrap();
        let snap = read_snapshot(&dir.path().join("snapshots/round_02.f64")).unwrap();
        assert_eq!(snap, out.final_global.scores);
        assert!(dir.path().join("metrics.csv").exists());
    }

    #[test]
    fn audit_dump_is_written_when_enabled() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config("output.audit = true\n");
        run_experiment_with_mode(&cfg, Some(dir.path()), &ExecMode::Sequential).unwrap();
        let audit = dir.path().join("audit/round_01_submissions.json");
        let text = std::fs::read_to_string(audit).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.as_array().unwrap().len(), 3);
    }
}
