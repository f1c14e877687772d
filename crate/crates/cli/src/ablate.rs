use anyhow::{bail, Context, Result};
use igrec::config::{InterestGenerator, TrainConfig, Variant};
use igrec::data::AnchorKind;
use igrec::eval::{mean_std, TaskMetrics};
use rayon::prelude::*;

use crate::manifest::RunManifest;
use crate::run;
use crate::AblateArgs;

pub const ABLATION_FILE: &str = "ablation.csv";
pub const GENERATORS_FILE: &str = "generators.csv";

struct Arm {
    label: String,
    config: TrainConfig,
}

/// Puts `first` at the front of `items`, adding it when missing.
fn with_reference<T: PartialEq + Copy>(mut items: Vec<T>, first: T) -> Vec<T> {
    items.retain(|&x| x != first);
    items.insert(0, first);
    items
}

pub fn ablate(a: AblateArgs, args: &[String]) -> Result<()> {
    let base = run::resolve_config(&a.config)?;
    let ds = run::load_data(&a.data)?;
    let seeds = run::seeds_or_default(&a.seeds, &base);
    if a.k.is_empty() || a.k.contains(&0) {
        bail!(igrec::Error::InvalidArgument("--k needs positive cutoffs".into()));
    }
    let generator_mode = !a.generators.is_empty();
    let arms: Vec<Arm> = if generator_mode {
        let gens = a.generators.iter().map(|s| s.trim().parse()).collect::<igrec::Result<Vec<InterestGenerator>>>()?;
        with_reference(gens, InterestGenerator::SelfGating)
            .into_iter()
            .map(|g| Arm { label: g.to_string(), config: TrainConfig { interest_generator: g, ..base.clone() } })
            .collect()
    } else {
        let vars = a.variants.iter().map(|s| s.parse()).collect::<igrec::Result<Vec<Variant>>>()?;
        with_reference(vars, Variant::Full)
            .into_iter()
            .map(|v| Arm { label: v.to_string(), config: TrainConfig { variant: v, ..base.clone() } })
            .collect()
    };
    for arm in &arms {
        arm.config.validate()?;
    }

    let tasks = [AnchorKind::User, AnchorKind::Group];
    let jobs: Vec<(usize, u64)> = (0..arms.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let results: Vec<(usize, Vec<TaskMetrics>, usize)> = jobs
        .par_iter()
        .map(|&(i, s)| {
            let fit = run::fit(&arms[i].config, &ds, s)?;
            let m = run::test_metrics(&fit.model, &ds, &tasks, &a.k)?;
            log::info!("{} seed {s}: done", arms[i].label);
            Ok((i, m, fit.model.generator_size()))
        })
        .collect::<Result<_>>()?;

    let cols = run::metric_columns(&tasks, &a.k);
    // summary[arm][col] = (mean, std)
    let summary: Vec<Vec<(f64, f64)>> = (0..arms.len())
        .map(|i| {
            cols.iter()
                .map(|&(t, metric, k)| {
                    let j = tasks.iter().position(|&x| x == t).unwrap();
                    let v: Vec<f64> =
                        results.iter().filter(|r| r.0 == i).filter_map(|r| r.1[j].get(metric, k)).collect();
                    mean_std(&v)
                })
                .collect()
        })
        .collect();

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let file = if generator_mode { GENERATORS_FILE } else { ABLATION_FILE };
    let mut w = csv::Writer::from_path(a.out.join(file))?;
    let mut header: Vec<&str> = vec![if generator_mode { "generator" } else { "variant" }];
    if generator_mode {
        header.extend(["params", "formula"]);
    }
    header.extend(["task", "metric", "k", "mean", "std", "rel_delta"]);
    w.write_record(&header)?;
    for (i, arm) in arms.iter().enumerate() {
        for (c, &(t, metric, k)) in cols.iter().enumerate() {
            let (mean, std) = summary[i][c];
            let mut row = vec![arm.label.clone()];
            if generator_mode {
                let params = results.iter().find(|r| r.0 == i).map(|r| r.2).unwrap_or(0);
                row.push(params.to_string());
                row.push(arm.config.interest_generator.param_formula().to_string());
            }
            row.extend([
                t.to_string(),
                metric.to_string(),
                k.to_string(),
                mean.to_string(),
                std.to_string(),
                run::rel_delta(mean, summary[0][c].0),
            ]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    RunManifest::new(args, &a.out).with_config(&base).with_dataset(&ds).with_seeds(&seeds).write(&a.out)
}
