use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use igrec::checkpoint::Checkpoint;
use igrec::config::TrainConfig;
use igrec::data::{load_dataset, AnchorKind, Dataset, Split};
use igrec::eval::{Metric, RankingReport, TaskMetrics};
use igrec::model::{GraphContext, Model};
use igrec::train::{evaluate_model, EpochLog, FitResult, Trainer};

use crate::{ConfigArgs, TaskArg};

pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SELECTION_FILE: &str = "selection.csv";

pub fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let base = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    Ok(base.with_overrides(&args.overrides)?)
}

pub fn load_data(dir: &Path) -> Result<Dataset> {
    load_dataset(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

pub fn seeds_or_default(seeds: &[u64], config: &TrainConfig) -> Vec<u64> {
    if seeds.is_empty() {
        vec![config.seed]
    } else {
        seeds.to_vec()
    }
}

pub fn checkpoint_name(seed: u64) -> String {
    format!("seed-{seed}.ckpt")
}

pub fn tasks(arg: TaskArg) -> Vec<AnchorKind> {
    match arg {
        TaskArg::User => vec![AnchorKind::User],
        TaskArg::Group => vec![AnchorKind::Group],
        TaskArg::Both => vec![AnchorKind::User, AnchorKind::Group],
    }
}

pub fn fit(config: &TrainConfig, ds: &Dataset, seed: u64) -> Result<FitResult> {
    let c = TrainConfig { seed, ..config.clone() };
    let trainer = Trainer::new(&c, ds)?;
    log::info!("seed {seed}: {} steps per epoch", trainer.steps_per_epoch());
    Ok(trainer.fit(|_| {})?)
}

pub fn write_train_log(path: &Path, runs: &[(u64, &[EpochLog])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([
        "seed",
        "epoch",
        "l_bpr",
        "l_group",
        "reg_interest",
        "reg_params",
        "total",
        "val_ndcg10",
        "seconds",
    ])?;
    for (seed, log) in runs {
        for r in log.iter() {
            w.write_record([
                seed.to_string(),
                r.epoch.to_string(),
                r.l_bpr.to_string(),
                r.l_group.to_string(),
                r.reg_interest.to_string(),
                r.reg_params.to_string(),
                r.total.to_string(),
                r.val_ndcg10.map(|v| v.to_string()).unwrap_or_default(),
                r.seconds.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Test metrics of `model` for each task.
pub fn test_metrics(model: &Model, ds: &Dataset, tasks: &[AnchorKind], ks: &[usize]) -> Result<Vec<TaskMetrics>> {
    let ctx = GraphContext::new(ds);
    tasks.iter().map(|&t| Ok(evaluate_model(model, &ctx, ds, t, Split::Test, ks)?)).collect()
}

/// Collects per-seed metrics into one report per task.
pub fn reports(tasks: &[AnchorKind], ks: &[usize], runs: Vec<(u64, Vec<TaskMetrics>)>) -> Vec<RankingReport> {
    tasks
        .iter()
        .enumerate()
        .map(|(j, &task)| RankingReport {
            task,
            ks: ks.to_vec(),
            runs: runs.iter().map(|(s, m)| (*s, m[j].clone())).collect(),
        })
        .collect()
}

pub fn metric_columns(tasks: &[AnchorKind], ks: &[usize]) -> Vec<(AnchorKind, Metric, usize)> {
    let mut out = Vec::new();
    for &t in tasks {
        for &k in ks {
            for m in [Metric::Recall, Metric::Ndcg] {
                out.push((t, m, k));
            }
        }
    }
    out
}

/// Checkpoints named `seed-<n>.ckpt` in `dir`, ordered by seed.
pub fn run_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(u64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        if let Some(seed) = name.strip_prefix("seed-").and_then(|s| s.strip_suffix(".ckpt")) {
            if let Ok(seed) = seed.parse() {
                found.push((seed, path));
            }
        }
    }
    if found.is_empty() {
        bail!("no seed-*.ckpt checkpoints in {}", dir.display());
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Loads a checkpoint and checks it was trained on `ds`.
pub fn load_checkpoint(path: &Path, ds: &Dataset) -> Result<(Checkpoint, Model)> {
    let ck = Checkpoint::load(path)?;
    if let Some(fp) = &ck.dataset_fingerprint {
        if *fp != ds.fingerprint() {
            return Err(igrec::Error::Checkpoint(format!(
                "{} was trained on a different dataset (fingerprint {fp})",
                path.display()
            ))
            .into());
        }
    }
    let model = ck.to_model()?;
    if model.n_users() != ds.n_users() || model.n_items() != ds.n_items() {
        return Err(igrec::Error::Checkpoint(format!(
            "{} expects {} users and {} items, dataset has {} and {}",
            path.display(),
            model.n_users(),
            model.n_items(),
            ds.n_users(),
            ds.n_items()
        ))
        .into());
    }
    Ok((ck, model))
}

/// Relative change of `value` against `base`; empty when `base` is 0.
pub fn rel_delta(value: f64, base: f64) -> String {
    if base == 0.0 {
        String::new()
    } else {
        format!("{}", value / base - 1.0)
    }
}
