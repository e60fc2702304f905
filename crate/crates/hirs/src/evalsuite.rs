//! Ranking metrics, gate-order diagnostics, incidence dumps, and the
//! runtime scaling bench.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::data::{DataSample, Dataset, FeatureVocab};
use crate::error::HirsError;
use crate::numerics::Tensor;
use crate::trainer::{train, ScoreOpts, TrainConfig};

/// Default gate binarization threshold for order statistics.
pub const ORDER_THRESHOLD: f64 = 0.5;

// ── ranking metrics ──────────────────────────────────────────────────

/// One scored candidate of one user.
#[derive(Debug, Clone, Copy)]
pub struct ScoredItem {
    pub item: u32,
    pub score: f64,
    pub relevant: bool,
}

/// Metric table over the requested cutoffs, averaged across users with at
/// least one relevant candidate (users without any are excluded, counted).
#[derive(Debug, Clone, Serialize)]
pub struct MetricTable {
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub users_evaluated: usize,
    pub users_skipped: usize,
}

impl MetricTable {
    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall.get(&k).copied().unwrap_or(0.0)
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(0.0)
    }
}

/// Sort candidates by score descending, ties broken by ascending item id.
fn rank(items: &mut [ScoredItem]) {
    items.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.item.cmp(&b.item))
    });
}

fn log2_discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Recall@K and NDCG@K with binary gains over per-user candidate lists.
pub fn rank_metrics(per_user: &[(u32, Vec<ScoredItem>)], ks: &[usize]) -> MetricTable {
    let mut recall_sum: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut ndcg_sum: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut evaluated = 0usize;
    let mut skipped = 0usize;

    for (_user, items) in per_user {
        let total_relevant = items.iter().filter(|i| i.relevant).count();
        if total_relevant == 0 {
            skipped += 1;
            continue;
        }
        evaluated += 1;
        let mut ranked = items.clone();
        rank(&mut ranked);
        for &k in ks {
            let hits = ranked
                .iter()
                .take(k)
                .filter(|i| i.relevant)
                .count();
            *recall_sum.get_mut(&k).unwrap() += hits as f64 / total_relevant as f64;

            let dcg: f64 = ranked
                .iter()
                .take(k)
                .enumerate()
                .filter(|(_, i)| i.relevant)
                .map(|(r, _)| log2_discount(r + 1))
                .sum();
            let idcg: f64 = (1..=total_relevant.min(k)).map(log2_discount).sum();
            *ndcg_sum.get_mut(&k).unwrap() += dcg / idcg;
        }
    }

    let denom = evaluated.max(1) as f64;
    MetricTable {
        recall: recall_sum.into_iter().map(|(k, v)| (k, v / denom)).collect(),
        ndcg: ndcg_sum.into_iter().map(|(k, v)| (k, v / denom)).collect(),
        users_evaluated: evaluated,
        users_skipped: skipped,
    }
}

/// Group test samples by user into scored candidate lists. Candidates are
/// that user's own test samples: positives plus their paired negatives.
pub fn group_by_user(samples: &[DataSample], scores: &[f64]) -> Vec<(u32, Vec<ScoredItem>)> {
    assert_eq!(samples.len(), scores.len());
    let mut by_user: BTreeMap<u32, Vec<ScoredItem>> = BTreeMap::new();
    for (s, &score) in samples.iter().zip(scores) {
        by_user.entry(s.user_id).or_default().push(ScoredItem {
            item: s.item_id,
            score,
            relevant: s.label == 1,
        });
    }
    by_user.into_iter().collect()
}

/// Fraction of samples classified correctly at probability 0.5.
pub fn accuracy(samples: &[DataSample], scores: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = samples
        .iter()
        .zip(scores)
        .filter(|(s, &p)| (p > 0.5) == (s.label == 1))
        .count();
    correct as f64 / samples.len() as f64
}

// ── order histogram ──────────────────────────────────────────────────

/// Distribution of hyperedge orders (column-wise count of gates above the
/// threshold) over every edge of every sample.
#[derive(Debug, Clone, Serialize)]
pub struct OrderHistogram {
    pub counts: Vec<u64>,
    pub fractions: Vec<f64>,
    pub total_edges: u64,
    pub threshold: f64,
}

impl OrderHistogram {
    pub fn fraction_at(&self, order: usize) -> f64 {
        self.fractions.get(order).copied().unwrap_or(0.0)
    }

    pub fn mean_order(&self) -> f64 {
        self.fractions
            .iter()
            .enumerate()
            .map(|(o, f)| o as f64 * f)
            .sum()
    }

    /// Mass at order 0 plus orders >= `m - 2` (the empty-or-everything
    /// failure signature of gate collapse).
    pub fn collapse_mass(&self, m: usize) -> f64 {
        let lo = self.fraction_at(0);
        let hi: f64 = self
            .fractions
            .iter()
            .enumerate()
            .filter(|(o, _)| *o + 2 >= m && *o > 0)
            .map(|(_, f)| f)
            .sum();
        lo + hi
    }
}

pub fn order_histogram(gate_values: &[Tensor], threshold: f64) -> OrderHistogram {
    let max_m = gate_values.iter().map(Tensor::rows).max().unwrap_or(0);
    let mut counts = vec![0u64; max_m + 1];
    let mut total = 0u64;
    for g in gate_values {
        for j in 0..g.cols() {
            let order = (0..g.rows()).filter(|&i| g.at(i, j) > threshold).count();
            counts[order] += 1;
            total += 1;
        }
    }
    let fractions = counts
        .iter()
        .map(|&c| c as f64 / total.max(1) as f64)
        .collect();
    OrderHistogram {
        counts,
        fractions,
        total_edges: total,
        threshold,
    }
}

/// Per-column orders of one thresholded gate matrix.
pub fn column_orders(gates: &Tensor, threshold: f64) -> Vec<usize> {
    (0..gates.cols())
        .map(|j| (0..gates.rows()).filter(|&i| gates.at(i, j) > threshold).count())
        .collect()
}

// ── incidence dump ───────────────────────────────────────────────────

/// Human-readable incidence grid for one sample: empty columns removed,
/// remaining columns sorted by ascending order (duplicates preserved),
/// rows labeled by feature name, entries binarized at the threshold.
pub fn dump_incidence(
    sample: &DataSample,
    gates: &Tensor,
    vocab: &FeatureVocab,
    threshold: f64,
) -> String {
    let orders = column_orders(gates, threshold);
    let mut cols: Vec<usize> = (0..gates.cols()).filter(|&j| orders[j] > 0).collect();
    cols.sort_by_key(|&j| (orders[j], j));

    let labels: Vec<String> = sample
        .features
        .iter()
        .map(|&(id, _)| vocab.name(id).unwrap_or("?").to_string())
        .collect();
    let width = labels.iter().map(String::len).max().unwrap_or(1).max(7);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "sample user={} item={} label={} edges={}",
        sample.user_id,
        sample.item_id,
        sample.label,
        cols.len()
    );
    let _ = write!(out, "{:width$}", "feature");
    for &j in &cols {
        let _ = write!(out, " e{j:02}");
    }
    out.push('\n');
    for (i, label) in labels.iter().enumerate() {
        let _ = write!(out, "{label:width$}");
        for &j in &cols {
            let bit = u8::from(gates.at(i, j) > threshold);
            let _ = write!(out, " {bit:>3}");
        }
        out.push('\n');
    }
    out
}

// ── scaling bench ────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub k: usize,
    pub m: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of seconds against k (at the largest measured m).
    pub slope_k: f64,
    /// Least-squares slope of seconds against m (at the largest measured k).
    pub slope_m: f64,
}

impl ScalingTable {
    pub fn to_csv(&self, header: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(h) = header {
            let _ = writeln!(out, "# {h}");
        }
        out.push_str("k,m,seconds\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.6}", r.k, r.m, r.seconds);
        }
        out
    }

    pub fn seconds_at(&self, k: usize, m: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.k == k && r.m == m)
            .map(|r| r.seconds)
    }
}

fn lsq_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let var: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    cov / var
}

/// Measure training epoch wall-time across a (k, m) grid on a fixed slice
/// of data. Per configuration the sample features are truncated to the
/// first `m`, the model is rebuilt with the given `k`, and the median epoch
/// time over `cfg.epochs` epochs (after one warmup epoch) is reported.
pub fn scaling_bench(
    dataset: &Dataset,
    k_list: &[usize],
    m_list: &[usize],
    cfg: &TrainConfig,
) -> Result<ScalingTable, HirsError> {
    let mut rows = Vec::new();
    for &m in m_list {
        for &k in k_list {
            let truncated: Vec<DataSample> = dataset
                .samples
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.features.truncate(m);
                    s
                })
                .collect();
            let mut bench_cfg = cfg.clone();
            bench_cfg.k = k;
            let slice = crate::data::SplitDataset {
                vocab: dataset.vocab.clone(),
                train: truncated,
                val: Vec::new(),
                test: Vec::new(),
            };
            // warmup epoch, then median of measured epochs
            let mut warm_cfg = bench_cfg.clone();
            warm_cfg.epochs = 1;
            let _ = train(&slice, &warm_cfg, None)?;
            let started = Instant::now();
            let outcome = train(&slice, &bench_cfg, None)?;
            let total = started.elapsed().as_secs_f64();
            let mut epoch_secs: Vec<f64> = outcome.logs.iter().map(|l| l.seconds).collect();
            epoch_secs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let seconds = if epoch_secs.is_empty() {
                total
            } else {
                epoch_secs[epoch_secs.len() / 2]
            };
            rows.push(ScalingRow { k, m, seconds });
        }
    }
    let big_m = m_list.iter().copied().max().unwrap_or(0);
    let big_k = k_list.iter().copied().max().unwrap_or(0);
    let slope_k = lsq_slope(
        &rows
            .iter()
            .filter(|r| r.m == big_m)
            .map(|r| (r.k as f64, r.seconds))
            .collect::<Vec<_>>(),
    );
    let slope_m = lsq_slope(
        &rows
            .iter()
            .filter(|r| r.k == big_k)
            .map(|r| (r.m as f64, r.seconds))
            .collect::<Vec<_>>(),
    );
    Ok(ScalingTable {
        rows,
        slope_k,
        slope_m,
    })
}

/// Collect eval-mode gate matrices for a set of samples.
pub fn collect_gate_values(
    state: &crate::model::ModelState,
    samples: &[DataSample],
    opts: &ScoreOpts,
) -> Result<Vec<Tensor>, HirsError> {
    crate::trainer::eval_gate_values(state, samples, opts)
}
