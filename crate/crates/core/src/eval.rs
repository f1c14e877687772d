//! Full-ranking evaluation: Recall@K and NDCG@K over every item, masking
//! items the anchor has already been seen with.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::cosine_parts;
use crate::data::{AnchorKind, LabeledEdges, Split};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

pub const DEFAULT_KS: [usize; 2] = [5, 10];

/// `|top-k ∩ relevant| / |relevant|`; `None` when nothing is relevant.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    Some(hits as f64 / relevant.len() as f64)
}

/// Binary-relevance NDCG with gain `1 / log2(rank + 1)`.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..relevant.len().min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    Some(dcg / idcg)
}

/// Indices of the `k` largest scores, best first; ties go to the smaller
/// index. `masked` items are never returned.
pub fn top_k(scores: &[f64], masked: &[usize], k: usize) -> Vec<usize> {
    let mut keep = vec![true; scores.len()];
    for &m in masked {
        keep[m] = false;
    }
    let better = |a: usize, b: usize| scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    let mut best: Vec<usize> = Vec::with_capacity(k + 1);
    for i in (0..scores.len()).filter(|&i| keep[i]) {
        if best.len() == k && !better(i, best[k - 1]) {
            continue;
        }
        let pos = best.partition_point(|&b| better(b, i));
        best.insert(pos, i);
        best.truncate(k);
    }
    best
}

/// Mean metrics for one task at each cutoff.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    /// Anchors with a nonempty target set.
    pub n_anchors: usize,
}

impl TaskMetrics {
    pub fn get(&self, metric: Metric, k: usize) -> Option<f64> {
        match metric {
            Metric::Recall => self.recall.get(&k).copied(),
            Metric::Ndcg => self.ndcg.get(&k).copied(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Recall,
    Ndcg,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Recall => "recall",
            Metric::Ndcg => "ndcg",
        })
    }
}

/// Ranks every item for every anchor by `anchor_emb · item_emb` and scores
/// against the `target` split. Items in earlier splits (train, plus valid
/// when the target is test) are masked.
pub fn evaluate_scores(
    anchor_emb: &Tensor,
    item_emb: &Tensor,
    edges: &LabeledEdges,
    target: Split,
    ks: &[usize],
) -> Result<TaskMetrics> {
    if anchor_emb.cols() != item_emb.cols()
        || anchor_emb.rows() != edges.n_anchors()
        || item_emb.rows() != edges.n_items()
    {
        return Err(Error::Shape(format!(
            "anchors {:?} and items {:?} against {} x {} interactions",
            anchor_emb.shape(),
            item_emb.shape(),
            edges.n_anchors(),
            edges.n_items()
        )));
    }
    if target == Split::Train {
        return Err(Error::InvalidArgument("evaluation target must be valid or test".into()));
    }
    let mut masked = edges.items_by_anchor(Split::Train);
    if target == Split::Test {
        for (m, v) in masked.iter_mut().zip(edges.items_by_anchor(Split::Valid)) {
            m.extend(v);
        }
    }
    let relevant = edges.items_by_anchor(target);
    let anchors: Vec<usize> = (0..edges.n_anchors()).filter(|&a| !relevant[a].is_empty()).collect();
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let (ni, d) = (item_emb.rows(), item_emb.cols());
    const CHUNK: usize = 64;
    let per_anchor: Vec<(Vec<f64>, Vec<f64>)> = anchors
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            let block = anchor_emb.select_rows(chunk);
            let mut scores = Tensor::zeros(chunk.len(), ni);
            if d > 0 {
                gemm(false, true, &block, item_emb, 1.0, 0.0, &mut scores);
            }
            chunk
                .iter()
                .enumerate()
                .map(|(r, &a)| {
                    let ranked = top_k(scores.row_slice(r), &masked[a], kmax);
                    let rec = ks.iter().map(|&k| recall_at_k(&ranked, &relevant[a], k).unwrap()).collect();
                    let nd = ks.iter().map(|&k| ndcg_at_k(&ranked, &relevant[a], k).unwrap()).collect();
                    (rec, nd)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let n = per_anchor.len();
    let avg = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>, j: usize| {
        if n == 0 {
            0.0
        } else {
            per_anchor.iter().map(|p| pick(p)[j]).sum::<f64>() / n as f64
        }
    };
    Ok(TaskMetrics {
        recall: ks.iter().enumerate().map(|(j, &k)| (k, avg(|p| &p.0, j))).collect(),
        ndcg: ks.iter().enumerate().map(|(j, &k)| (k, avg(|p| &p.1, j))).collect(),
        n_anchors: n,
    })
}

/// Item scores by training interaction count; ties resolve to the smaller
/// id through [`top_k`]. Returned as embeddings so the popularity ranking
/// goes through the same evaluator.
pub fn popularity_embeddings(edges: &LabeledEdges) -> (Tensor, Tensor) {
    let mut counts = vec![0.0; edges.n_items()];
    for (_, i) in edges.edges_in(Split::Train) {
        counts[i] += 1.0;
    }
    (Tensor::full(edges.n_anchors(), 1, 1.0), Tensor::column(&counts))
}

/// Items ordered by training popularity.
pub fn popularity_ranking(edges: &LabeledEdges) -> Vec<usize> {
    let (_, items) = popularity_embeddings(edges);
    top_k(items.data(), &[], edges.n_items())
}

/// Mean absolute pairwise cosine similarity between interests, averaged
/// over users. Diagonal fixed at 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn from_interests(interests: &[Tensor]) -> Self {
        let m = interests.len();
        let mut values = vec![vec![0.0; m]; m];
        for p in 0..m {
            values[p][p] = 1.0;
            for q in p + 1..m {
                let n = interests[p].rows();
                let s: f64 =
                    (0..n).map(|u| cosine_parts(interests[p].row_slice(u), interests[q].row_slice(u)).0.abs()).sum();
                let v = if n == 0 { 0.0 } else { s / n as f64 };
                values[p][q] = v;
                values[q][p] = v;
            }
        }
        Self { values }
    }

    pub fn off_diagonal_mean(&self) -> f64 {
        let m = self.values.len();
        if m < 2 {
            return 0.0;
        }
        let s: f64 = (0..m)
            .flat_map(|p| (0..m).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| self.values[p][q])
            .sum();
        s / (m * (m - 1)) as f64
    }
}

/// Mean and sample standard deviation. Identical values give a standard
/// deviation of exactly 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let base = values[0];
    let n = values.len() as f64;
    let shift: f64 = values.iter().map(|v| v - base).sum::<f64>() / n;
    let mean = base + shift;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - base - shift).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Metrics for one task across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingReport {
    pub task: AnchorKind,
    pub ks: Vec<usize>,
    /// `(seed, metrics)` per run.
    pub runs: Vec<(u64, TaskMetrics)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl RankingReport {
    pub fn summary(&self, metric: Metric, k: usize) -> MeanStd {
        let v: Vec<f64> = self.runs.iter().filter_map(|(_, m)| m.get(metric, k)).collect();
        let (mean, std) = mean_std(&v);
        MeanStd { mean, std }
    }

    /// `metric@k -> {mean, std}`.
    pub fn summary_table(&self) -> BTreeMap<String, MeanStd> {
        let mut out = BTreeMap::new();
        for metric in [Metric::Recall, Metric::Ndcg] {
            for &k in &self.ks {
                out.insert(format!("{metric}@{k}"), self.summary(metric, k));
            }
        }
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub config: serde_json::Value,
    pub results: BTreeMap<String, BTreeMap<String, MeanStd>>,
    pub wall_time_s: f64,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SIMILARITY_FILE: &str = "interest_sim.csv";

/// Writes `metrics.csv`, `summary.json` and, when given, `interest_sim.csv`
/// into `dir`.
pub fn export_report(
    dir: &Path,
    dataset: &str,
    config: serde_json::Value,
    reports: &[RankingReport],
    similarity: Option<&SimilarityMatrix>,
    wall_time_s: f64,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(METRICS_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["task", "metric", "k", "seed", "value"])?;
    for r in reports {
        for (seed, m) in &r.runs {
            for metric in [Metric::Recall, Metric::Ndcg] {
                for &k in &r.ks {
                    if let Some(v) = m.get(metric, k) {
                        w.write_record([
                            r.task.to_string(),
                            metric.to_string(),
                            k.to_string(),
                            seed.to_string(),
                            format!("{v}"),
                        ])?;
                    }
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let summary = Summary {
        dataset: dataset.to_string(),
        config,
        results: reports.iter().map(|r| (r.task.to_string(), r.summary_table())).collect(),
        wall_time_s,
    };
    let path = dir.join(SUMMARY_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;

    if let Some(sim) = similarity {
        let path = dir.join(SIMILARITY_FILE);
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&path)?;
        for row in &sim.values {
            w.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
