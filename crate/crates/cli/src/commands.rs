use std::io::Write;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Parser;
use igrec::checkpoint::Checkpoint;
use igrec::data::{
    generate_synthetic, load_unsplit_dataset, write_dataset, write_splits, SyntheticSpec, GROUP_ITEMS_FILE,
};
use igrec::eval::{evaluate_scores, export_report, popularity_embeddings, SimilarityMatrix};
use igrec::model::GraphContext;
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::run::{self, SELECTION_FILE, TRAIN_LOG_FILE};
use crate::{ablate, sweep, Cli, Command, EvalArgs, PrepareArgs, SynthArgs, TrainArgs};

pub const TRUTH_FILE: &str = "truth.json";

pub fn dispatch(cli: Cli, args: &[String]) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a, args),
        Command::Prepare(a) => prepare(a, args),
        Command::Train(a) => train(a, args),
        Command::Eval(a) => eval(a, args),
        Command::Sweep(a) => sweep::sweep(a, args),
        Command::Ablate(a) => ablate::ablate(a, args),
        Command::Rerun(a) => {
            let m = RunManifest::load(&a.manifest)?;
            let replay = m.args_with_out(&a.out);
            log::info!("replaying {replay:?}");
            let argv = std::iter::once("igrec".to_string()).chain(replay.iter().cloned());
            let cli = Cli::try_parse_from(argv).context("manifest arguments no longer parse")?;
            dispatch(cli, &replay)
        }
    }
}

#[derive(Serialize)]
struct Truth<'a> {
    spec: &'a SyntheticSpec,
    user_interests: &'a [Vec<usize>],
    group_interest: &'a [usize],
    item_interest: &'a [usize],
}

fn synth(a: SynthArgs, args: &[String]) -> Result<()> {
    let spec = SyntheticSpec {
        n_users: a.users,
        n_items: a.items,
        n_groups: a.groups,
        n_interests: a.interests,
        noise: a.noise,
        seed: a.seed,
        second_interest_prob: a.second_interest,
        ..SyntheticSpec::default()
    };
    let world = generate_synthetic(&spec)?;
    write_dataset(&a.out, &world.dataset)?;
    write_splits(&a.out, &world.dataset)?;
    let truth = Truth {
        spec: &spec,
        user_interests: &world.user_interests,
        group_interest: &world.group_interest,
        item_interest: &world.item_interest,
    };
    let path = a.out.join(TRUTH_FILE);
    std::fs::write(&path, serde_json::to_string(&truth)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    RunManifest::new(args, &a.out).with_dataset(&world.dataset).with_seeds(&[a.seed]).write(&a.out)
}

fn prepare(a: PrepareArgs, args: &[String]) -> Result<()> {
    let ds = load_unsplit_dataset(&a.data).with_context(|| format!("loading dataset from {}", a.data.display()))?;
    let cap = a.synthesize_groups.then_some(a.cap);
    let ds = ds.resplit(cap, a.seed)?;
    if cap.is_some() {
        let path = a.data.join(GROUP_ITEMS_FILE);
        let mut w = std::io::BufWriter::new(
            std::fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?,
        );
        for &(g, i) in ds.group_items.edges() {
            writeln!(w, "{g}\t{i}")?;
        }
        w.flush()?;
    }
    write_splits(&a.data, &ds)?;
    log::info!("{}: {} user edges, {} group edges split", ds.name, ds.user_items.len(), ds.group_items.len());
    RunManifest::new(args, &a.data).with_dataset(&ds).with_seeds(&[a.seed]).write(&a.data)
}

fn train(a: TrainArgs, args: &[String]) -> Result<()> {
    let config = run::resolve_config(&a.config)?;
    let ds = run::load_data(&a.data)?;
    let seeds = run::seeds_or_default(&a.seeds, &config);
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let fits: Vec<_> = seeds.par_iter().map(|&s| run::fit(&config, &ds, s)).collect::<Result<_>>()?;
    let fingerprint = ds.fingerprint();
    let mut sel = csv::Writer::from_path(a.out.join(SELECTION_FILE))?;
    sel.write_record(["seed", "best_epoch", "best_val_ndcg10", "checksum"])?;
    for (&seed, fit) in seeds.iter().zip(&fits) {
        Checkpoint::from_model(&fit.model, Some(fingerprint.clone())).save(&a.out.join(run::checkpoint_name(seed)))?;
        sel.write_record([
            seed.to_string(),
            fit.best_epoch.to_string(),
            fit.best_val.to_string(),
            fit.model.params().checksum(),
        ])?;
    }
    sel.flush()?;
    let logs: Vec<(u64, &[_])> = seeds.iter().zip(&fits).map(|(&s, f)| (s, f.log.as_slice())).collect();
    run::write_train_log(&a.out.join(TRAIN_LOG_FILE), &logs)?;
    RunManifest::new(args, &a.out).with_config(&config).with_dataset(&ds).with_seeds(&seeds).write(&a.out)
}

fn eval(a: EvalArgs, args: &[String]) -> Result<()> {
    let t0 = Instant::now();
    let ds = run::load_data(&a.data)?;
    let tasks = run::tasks(a.task);
    if a.k.is_empty() || a.k.contains(&0) {
        bail!(igrec::Error::InvalidArgument("--k needs positive cutoffs".into()));
    }
    if a.seeds == Some(0) {
        bail!(igrec::Error::InvalidArgument("--seeds must be at least 1".into()));
    }
    let manifest = RunManifest::new(args, &a.out).with_dataset(&ds);

    if a.popularity {
        let n = a.seeds.unwrap_or(1);
        let mut runs = Vec::new();
        for seed in 0..n as u64 {
            let metrics = tasks
                .iter()
                .map(|&t| {
                    let edges = ds.interactions(t);
                    let (anchors, items) = popularity_embeddings(edges);
                    Ok(evaluate_scores(&anchors, &items, edges, igrec::data::Split::Test, &a.k)?)
                })
                .collect::<Result<Vec<_>>>()?;
            runs.push((seed, metrics));
        }
        let seeds: Vec<u64> = runs.iter().map(|r| r.0).collect();
        let reports = run::reports(&tasks, &a.k, runs);
        let config = serde_json::json!({ "model": "popularity" });
        export_report(&a.out, &ds.name, config, &reports, None, t0.elapsed().as_secs_f64())?;
        return manifest.with_seeds(&seeds).write(&a.out);
    }

    let mut paths = a.checkpoints.clone();
    if let Some(dir) = &a.run {
        paths.extend(run::run_checkpoints(dir)?);
    }
    if paths.is_empty() {
        bail!(igrec::Error::InvalidArgument("give --checkpoint, --run or --popularity".into()));
    }
    if let Some(n) = a.seeds {
        if paths.len() < n {
            bail!(igrec::Error::InvalidArgument(format!("--seeds {n} but only {} checkpoints", paths.len())));
        }
        paths.truncate(n);
    }
    let loaded = paths.iter().map(|p| run::load_checkpoint(p, &ds)).collect::<Result<Vec<_>>>()?;
    let runs: Vec<_> = loaded
        .par_iter()
        .map(|(ck, model)| Ok((ck.config.seed, run::test_metrics(model, &ds, &tasks, &a.k)?)))
        .collect::<Result<_>>()?;
    let seeds: Vec<u64> = runs.iter().map(|r| r.0).collect();
    let reports = run::reports(&tasks, &a.k, runs);
    let (first_ck, first_model) = &loaded[0];
    let emb = first_model.embed(&GraphContext::new(&ds))?;
    let sim = (!emb.interests.is_empty()).then(|| SimilarityMatrix::from_interests(&emb.interests));
    let config = serde_json::to_value(&first_ck.config)?;
    export_report(&a.out, &ds.name, config, &reports, sim.as_ref(), t0.elapsed().as_secs_f64())?;
    manifest.with_config(&first_ck.config).with_seeds(&seeds).write(&a.out)
}
