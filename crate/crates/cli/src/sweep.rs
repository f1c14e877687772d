use std::path::Path;

use anyhow::{bail, Context, Result};
use igrec::config::TrainConfig;
use igrec::data::{AnchorKind, Dataset};
use igrec::eval::{mean_std, DEFAULT_KS};
use rayon::prelude::*;

use crate::manifest::RunManifest;
use crate::run;
use crate::SweepArgs;

pub const SWEEP_FILE: &str = "sweep.csv";

/// Axes in key order, each with its values as TOML literals.
pub type Grid = Vec<(String, Vec<String>)>;

pub fn load_grid(path: &Path) -> Result<Grid> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| igrec::Error::Config(e.to_string()))?;
    let mut grid = Grid::new();
    for (k, v) in table {
        let values = match v {
            toml::Value::Array(a) => a,
            other => vec![other],
        };
        if values.is_empty() {
            bail!(igrec::Error::Config(format!("grid axis {k:?} has no values")));
        }
        grid.push((k, values.iter().map(|v| v.to_string()).collect()));
    }
    Ok(grid)
}

/// Cartesian product in odometer order, last axis fastest.
pub fn grid_points(grid: &Grid) -> Vec<Vec<usize>> {
    let mut points = vec![Vec::new()];
    for (_, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                (0..values.len()).map(move |j| {
                    let mut q = p.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    points
}

struct Trial {
    index: usize,
    point: Vec<usize>,
    val: f64,
    metrics: Vec<f64>,
}

fn run_trial(config: &TrainConfig, ds: &Dataset, seeds: &[u64], tasks: &[AnchorKind]) -> Result<(f64, Vec<f64>)> {
    let mut vals = Vec::new();
    let mut per_seed: Vec<Vec<f64>> = Vec::new();
    for &s in seeds {
        let fit = run::fit(config, ds, s)?;
        vals.push(fit.best_val);
        let m = run::test_metrics(&fit.model, ds, tasks, &DEFAULT_KS)?;
        let cols = run::metric_columns(tasks, &DEFAULT_KS);
        per_seed.push(
            cols.iter()
                .map(|&(t, metric, k)| {
                    let j = tasks.iter().position(|&x| x == t).unwrap();
                    m[j].get(metric, k).unwrap_or(0.0)
                })
                .collect(),
        );
    }
    let ncols = per_seed[0].len();
    let means = (0..ncols).map(|c| mean_std(&per_seed.iter().map(|r| r[c]).collect::<Vec<_>>()).0).collect();
    Ok((mean_std(&vals).0, means))
}

pub fn sweep(a: SweepArgs, args: &[String]) -> Result<()> {
    if a.budget == Some(0) {
        bail!(igrec::Error::InvalidArgument("--budget must be at least 1".into()));
    }
    let base = run::resolve_config(&a.config)?;
    let grid = load_grid(&a.grid)?;
    let ds = run::load_data(&a.data)?;
    let seeds = run::seeds_or_default(&a.seeds, &base);
    let mut points = grid_points(&grid);
    if let Some(b) = a.budget {
        points.truncate(b);
    }
    // validate everything before any training
    let configs: Vec<TrainConfig> = points
        .iter()
        .map(|p| {
            let kv: Vec<String> = grid.iter().zip(p).map(|((k, vs), &j)| format!("{k}={}", vs[j])).collect();
            Ok(base.with_overrides(&kv)?)
        })
        .collect::<Result<_>>()?;
    let tasks = [AnchorKind::User, AnchorKind::Group];
    let mut trials: Vec<Trial> = configs
        .par_iter()
        .zip(points.par_iter())
        .enumerate()
        .map(|(index, (c, p))| {
            let (val, metrics) = run_trial(c, &ds, &seeds, &tasks)?;
            log::info!("trial {index}: val ndcg@10 {val:.4}");
            Ok(Trial { index, point: p.clone(), val, metrics })
        })
        .collect::<Result<_>>()?;
    trials.sort_by(|x, y| y.val.total_cmp(&x.val).then(x.index.cmp(&y.index)));

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let metric_names: Vec<String> =
        run::metric_columns(&tasks, &DEFAULT_KS).iter().map(|(t, m, k)| format!("{t}_{m}@{k}")).collect();
    let mut w = csv::Writer::from_path(a.out.join(SWEEP_FILE))?;
    let mut header = vec!["rank".to_string(), "trial".to_string()];
    header.extend(grid.iter().map(|(k, _)| k.clone()));
    header.push("val_ndcg@10".into());
    header.extend(metric_names.iter().cloned());
    w.write_record(&header)?;
    for (rank, t) in trials.iter().enumerate() {
        let mut row = vec![(rank + 1).to_string(), t.index.to_string()];
        row.extend(grid.iter().zip(&t.point).map(|((_, vs), &j)| vs[j].trim_matches('"').to_string()));
        row.push(t.val.to_string());
        row.extend(t.metrics.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;

    for (axis, (key, values)) in grid.iter().enumerate() {
        let mut w = csv::Writer::from_path(a.out.join(format!("sensitivity_{key}.csv")))?;
        let mut header = vec![key.clone(), "trials".into(), "val_ndcg@10".into()];
        header.extend(metric_names.iter().cloned());
        w.write_record(&header)?;
        for (j, v) in values.iter().enumerate() {
            // trials are sorted, so the first match is the best at this value
            let at: Vec<&Trial> = trials.iter().filter(|t| t.point[axis] == j).collect();
            let Some(best) = at.first() else { continue };
            let mut row = vec![v.trim_matches('"').to_string(), at.len().to_string(), best.val.to_string()];
            row.extend(best.metrics.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    RunManifest::new(args, &a.out).with_config(&base).with_dataset(&ds).with_seeds(&seeds).write(&a.out)
}
