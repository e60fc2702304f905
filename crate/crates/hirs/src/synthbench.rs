//! Synthetic data with planted ground-truth interactions.
//!
//! Feature values are iid {-1,+1}, so any planted multiplicative
//! interaction is zero-mean and carries no marginal single-feature signal:
//! a model can only fit the labels by actually modeling the planted sets.
//! Labels are Bernoulli through a logistic link over the sum of planted
//! products plus optional Gaussian noise on the logit.
//!
//! Recovery is scored on gate activations rather than predictions, because
//! the claim under test is interaction detection, not accuracy alone.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{DataSample, Dataset, FeatureVocab, SplitDataset};
use crate::error::{HirsError, Result};
use crate::evalsuite::{order_histogram, ORDER_THRESHOLD};
use crate::model::ModelState;
use crate::numerics::{sigmoid, Phase, Tape, Tensor, Var};
use crate::trainer::{
    ablate, eval_gate_values, forward_sample, AblationFlags, ScoreOpts, TrainConfig,
    VariantReport,
};

// ── planted spec ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedInteraction {
    pub features: Vec<u32>,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedSpec {
    /// Features per sample; every sample carries all m features with ±1
    /// values.
    pub m: usize,
    pub interactions: Vec<PlantedInteraction>,
    /// Standard deviation of Gaussian noise added to the logit.
    pub noise: f64,
    /// Synthetic users own this many consecutive samples (for ranking).
    pub samples_per_user: usize,
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for q in &self.interactions {
            if q.features.len() < 2 {
                return Err(HirsError::Invalid(format!(
                    "planted interaction {:?} has order < 2",
                    q.features
                )));
            }
            let set: BTreeSet<u32> = q.features.iter().copied().collect();
            if set.len() != q.features.len() {
                return Err(HirsError::Invalid(format!(
                    "planted interaction {:?} repeats a feature",
                    q.features
                )));
            }
            if let Some(&max) = set.iter().max() {
                if max as usize >= self.m {
                    return Err(HirsError::Invalid(format!(
                        "planted interaction {:?} exceeds m={}",
                        q.features, self.m
                    )));
                }
            }
            if !seen.insert(set) {
                return Err(HirsError::Invalid(
                    "planted interactions must be distinct".to_string(),
                ));
            }
        }
        if self.samples_per_user == 0 {
            return Err(HirsError::Invalid("samples_per_user must be > 0".to_string()));
        }
        Ok(())
    }

    /// Features covered by at least one planted set.
    pub fn planted_features(&self) -> BTreeSet<u32> {
        self.interactions
            .iter()
            .flat_map(|q| q.features.iter().copied())
            .collect()
    }

    /// Parse the text spec format: `key = value` lines plus
    /// `interaction: 2,5,7 coeff: 3.0` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = PlantedSpec {
            m: 0,
            interactions: Vec::new(),
            noise: 0.0,
            samples_per_user: 20,
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| {
                HirsError::Config(format!("spec line {}: {msg}: {raw:?}", lineno + 1))
            };
            if let Some(rest) = line.strip_prefix("interaction:") {
                let (ids_part, coeff_part) = rest
                    .split_once("coeff:")
                    .ok_or_else(|| bad("missing coeff"))?;
                let features = ids_part
                    .trim()
                    .split(',')
                    .map(|t| t.trim().parse::<u32>())
                    .collect::<std::result::Result<Vec<u32>, _>>()
                    .map_err(|_| bad("bad feature list"))?;
                let coeff: f64 = coeff_part
                    .trim()
                    .parse()
                    .map_err(|_| bad("bad coefficient"))?;
                spec.interactions.push(PlantedInteraction { features, coeff });
            } else if let Some((key, value)) = line.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "m" => spec.m = value.parse().map_err(|_| bad("bad m"))?,
                    "noise" => spec.noise = value.parse().map_err(|_| bad("bad noise"))?,
                    "samples_per_user" => {
                        spec.samples_per_user =
                            value.parse().map_err(|_| bad("bad samples_per_user"))?
                    }
                    other => return Err(bad(&format!("unknown key {other:?}"))),
                }
            } else {
                return Err(bad("unparseable line"));
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "m = {}\nnoise = {}\nsamples_per_user = {}\n",
            self.m, self.noise, self.samples_per_user
        );
        for q in &self.interactions {
            let ids: Vec<String> = q.features.iter().map(u32::to_string).collect();
            out.push_str(&format!(
                "interaction: {} coeff: {}\n",
                ids.join(","),
                q.coeff
            ));
        }
        out
    }

    fn logit(&self, values: &[f64]) -> f64 {
        self.interactions
            .iter()
            .map(|q| q.coeff * q.features.iter().map(|&f| values[f as usize]).product::<f64>())
            .sum()
    }
}

/// The default desk-scale spec: 10 features, three planted interactions,
/// three decoy features (7..9) in no interaction.
pub fn default_spec() -> PlantedSpec {
    PlantedSpec {
        m: 10,
        interactions: vec![
            PlantedInteraction {
                features: vec![0, 1],
                coeff: 3.0,
            },
            PlantedInteraction {
                features: vec![2, 3, 4],
                coeff: 3.0,
            },
            PlantedInteraction {
                features: vec![5, 6],
                coeff: -3.0,
            },
        ],
        noise: 0.25,
        samples_per_user: 20,
    }
}

// ── generation ───────────────────────────────────────────────────────

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draw a dataset from the spec. Every sample holds all m features with
/// values in {-1,+1}; the label is Bernoulli over the logistic link.
pub fn generate(spec: &PlantedSpec, n_samples: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    spec.validate()?;
    let mut vocab = FeatureVocab::new();
    for f in 0..spec.m {
        vocab.intern(&format!("f{f}"));
    }
    let mut samples = Vec::with_capacity(n_samples);
    for idx in 0..n_samples {
        let values: Vec<f64> = (0..spec.m)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let mut logit = spec.logit(&values);
        if spec.noise > 0.0 {
            logit += spec.noise * gaussian(rng);
        }
        let label = u8::from(rng.gen::<f64>() < sigmoid(logit));
        samples.push(DataSample {
            user_id: (idx / spec.samples_per_user) as u32,
            item_id: idx as u32,
            features: (0..spec.m as u32).map(|f| (f, values[f as usize])).collect(),
            label,
        });
    }
    Ok(Dataset { vocab, samples })
}

/// Bayes-optimal accuracy by enumeration over the joint values of all
/// planted features (requires zero noise for exactness).
pub fn bayes_accuracy(spec: &PlantedSpec) -> f64 {
    assert_eq!(spec.noise, 0.0, "enumeration oracle requires zero noise");
    let planted: Vec<u32> = spec.planted_features().into_iter().collect();
    let u = planted.len();
    assert!(u <= 20, "enumeration over 2^{u} is unreasonable");
    let mut acc = 0.0;
    for mask in 0..(1u32 << u) {
        let mut values = vec![1.0; spec.m];
        for (bit, &f) in planted.iter().enumerate() {
            values[f as usize] = if mask >> bit & 1 == 1 { 1.0 } else { -1.0 };
        }
        let p = sigmoid(spec.logit(&values));
        acc += p.max(1.0 - p);
    }
    acc / (1u32 << u) as f64
}

// ── recovery scoring ─────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    /// AUC of "feature is in some planted set" against mean gate
    /// activation per feature.
    pub auc: f64,
    /// Mean over samples and planted sets of the best-matching thresholded
    /// column's Jaccard similarity.
    pub mean_jaccard: f64,
    /// Total-variation distance between the learned order histogram and
    /// the planted order distribution.
    pub order_distance: f64,
}

/// Mann-Whitney AUC with average ranks for ties.
fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg_rank;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&r, _)| r)
        .sum();
    (pos_rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64)
}

fn jaccard(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    inter / union
}

/// Score eval-mode gate matrices against the planted truth.
pub fn recovery_score(gate_values: &[Tensor], spec: &PlantedSpec) -> RecoveryReport {
    let planted = spec.planted_features();
    let m = spec.m;

    // mean activation per feature over all samples and columns
    let mut activation = vec![0.0; m];
    let mut total_cols = 0usize;
    for g in gate_values {
        for i in 0..g.rows().min(m) {
            activation[i] += g.row_slice(i).iter().sum::<f64>();
        }
        total_cols += g.cols();
    }
    for a in activation.iter_mut() {
        *a /= total_cols.max(1) as f64;
    }
    let labels: Vec<bool> = (0..m as u32).map(|f| planted.contains(&f)).collect();
    let auc_value = auc(&activation, &labels);

    // best-match Jaccard per planted set per sample
    let mut jac_sum = 0.0;
    let mut jac_count = 0usize;
    for g in gate_values {
        let columns: Vec<BTreeSet<u32>> = (0..g.cols())
            .map(|j| {
                (0..g.rows() as u32)
                    .filter(|&i| g.at(i as usize, j) > ORDER_THRESHOLD)
                    .collect()
            })
            .collect();
        for q in &spec.interactions {
            let target: BTreeSet<u32> = q.features.iter().copied().collect();
            let best = columns
                .iter()
                .map(|c| jaccard(&target, c))
                .fold(0.0, f64::max);
            jac_sum += best;
            jac_count += 1;
        }
    }

    // order histogram distance to the planted order distribution
    let hist = order_histogram(gate_values, ORDER_THRESHOLD);
    let mut planted_frac = vec![0.0; hist.fractions.len().max(m + 1)];
    for q in &spec.interactions {
        planted_frac[q.features.len()] += 1.0 / spec.interactions.len() as f64;
    }
    let order_distance = 0.5
        * planted_frac
            .iter()
            .enumerate()
            .map(|(o, &p)| (p - hist.fraction_at(o)).abs())
            .sum::<f64>();

    RecoveryReport {
        auc: auc_value,
        mean_jaccard: jac_sum / jac_count.max(1) as f64,
        order_distance,
    }
}

/// Monte-Carlo expectation of the recovery metrics for random binary gate
/// matrices with the given open-entry density.
pub fn random_gate_baseline(
    spec: &PlantedSpec,
    k: usize,
    n_samples: usize,
    density: f64,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> RecoveryReport {
    let mut auc_sum = 0.0;
    let mut jac_sum = 0.0;
    let mut dist_sum = 0.0;
    for _ in 0..trials {
        let gates: Vec<Tensor> = (0..n_samples)
            .map(|_| {
                Tensor::from_vec_unchecked(
                    vec![spec.m, k],
                    (0..spec.m * k)
                        .map(|_| if rng.gen::<f64>() < density { 1.0 } else { 0.0 })
                        .collect(),
                )
            })
            .collect();
        let r = recovery_score(&gates, spec);
        auc_sum += r.auc;
        jac_sum += r.mean_jaccard;
        dist_sum += r.order_distance;
    }
    let n = trials.max(1) as f64;
    RecoveryReport {
        auc: auc_sum / n,
        mean_jaccard: jac_sum / n,
        order_distance: dist_sum / n,
    }
}

/// Density of open entries in thresholded gate matrices.
pub fn gate_density(gate_values: &[Tensor], threshold: f64) -> f64 {
    let mut open = 0usize;
    let mut total = 0usize;
    for g in gate_values {
        open += g.data().iter().filter(|&&v| v > threshold).count();
        total += g.numel();
    }
    open as f64 / total.max(1) as f64
}

// ── statistical-interaction check ────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct Prop2Report {
    pub nonlinear_mse: f64,
    pub linear_mse: f64,
}

/// Fit `y = x_a * x_b` with a single fixed hyperedge over the two features.
/// Nonlinear edge modeling must fit it (MSE < 0.01); the linear ablation
/// cannot (the target is orthogonal to every linear function of the value
/// pair, so its MSE stays near 1).
pub fn statistical_interaction_check(
    epochs: usize,
    seed: u64,
) -> Result<Prop2Report> {
    let run = |nonlinear: bool| -> Result<f64> {
        let cfg = TrainConfig {
            d: 8,
            k: 1,
            hidden: 32,
            lr: 0.01,
            batch_size: 64,
            seed,
            ablation: AblationFlags {
                no_hp: true, // fixed all-ones incidence: one edge over {a,b}
                no_nm: !nonlinear,
                no_mi: true,
                no_l0: true,
            },
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // all four value combinations, replicated
        let n = 256;
        let values: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                (
                    if rng.gen::<bool>() { 1.0 } else { -1.0 },
                    if rng.gen::<bool>() { 1.0 } else { -1.0 },
                )
            })
            .collect();
        let samples: Vec<DataSample> = values
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| DataSample {
                user_id: 0,
                item_id: i as u32,
                features: vec![(0, a), (1, b)],
                label: u8::from(a * b > 0.0),
            })
            .collect();
        let targets: Vec<f64> = values.iter().map(|&(a, b)| a * b).collect();

        let mut init_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut model = ModelState::init(&cfg.model_config(2), &mut init_rng);
        let mut adams: Vec<crate::numerics::AdamState> = model
            .named_params()
            .iter()
            .map(|(_, t)| crate::numerics::AdamState::new(t.shape(), cfg.lr))
            .collect();
        let mut gate_rng = ChaCha8Rng::seed_from_u64(0);

        let mse_of = |model: &ModelState| -> Result<f64> {
            let tape = Tape::new();
            let bound = model.bind(&tape);
            let mut eval_rng = ChaCha8Rng::seed_from_u64(0);
            let mut sq = 0.0;
            for (s, &y) in samples.iter().zip(&targets) {
                let fwd = forward_sample(s, &bound, &cfg, &tape, Phase::Eval, &mut eval_rng)?;
                let err = fwd.readout.logit.item() - y;
                sq += err * err;
            }
            Ok(sq / samples.len() as f64)
        };

        for _ in 0..epochs {
            let tape = Tape::new();
            let bound = model.bind(&tape);
            let mut logits = Vec::with_capacity(samples.len());
            for s in &samples {
                let fwd = forward_sample(s, &bound, &cfg, &tape, Phase::Train, &mut gate_rng)?;
                logits.push(fwd.readout.logit);
            }
            let preds = Var::stack_scalars(&tape, &logits)?;
            let target_t = tape.leaf(Tensor::vector(targets.clone()));
            let diff = preds.sub(&target_t)?;
            let loss = diff.mul(&diff)?.mean_all();
            loss.backward()?;
            let grads = bound.grads();
            for ((_, param), (adam, grad)) in model
                .named_params_mut()
                .into_iter()
                .zip(adams.iter_mut().zip(&grads))
            {
                adam.step(param, grad);
            }
        }
        mse_of(&model)
    };

    Ok(Prop2Report {
        nonlinear_mse: run(true)?,
        linear_mse: run(false)?,
    })
}

// ── ablation suite ───────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub name: String,
    pub median_accuracy: f64,
    pub median_recall10: f64,
    pub median_order0: f64,
    pub median_mean_order: f64,
    pub median_collapse_mass: f64,
    pub median_recovery_auc: f64,
    pub median_recovery_jaccard: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub spec: PlantedSpec,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<Vec<SeedVariant>>,
    pub summaries: Vec<VariantSummary>,
    pub checks: Vec<DirectionCheck>,
    pub baseline: RecoveryReport,
    pub full_recovery: RecoveryReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedVariant {
    pub report: VariantReport,
    pub recovery: RecoveryReport,
    /// Fraction of thresholded-open entries in this variant's eval gates.
    pub gate_density: f64,
}

pub const SUITE_VARIANTS: [AblationFlags; 6] = [
    AblationFlags {
        no_mi: false,
        no_l0: false,
        no_hp: false,
        no_nm: false,
    },
    AblationFlags {
        no_mi: true,
        no_l0: false,
        no_hp: false,
        no_nm: false,
    },
    AblationFlags {
        no_mi: false,
        no_l0: true,
        no_hp: false,
        no_nm: false,
    },
    AblationFlags {
        no_mi: false,
        no_l0: false,
        no_hp: true,
        no_nm: false,
    },
    AblationFlags {
        no_mi: false,
        no_l0: false,
        no_hp: false,
        no_nm: true,
    },
    AblationFlags {
        no_mi: false,
        no_l0: false,
        no_hp: true,
        no_nm: true,
    },
];

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if values.is_empty() {
        return f64::NAN;
    }
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

use rand::SeedableRng;

/// Train all six variants across the given seeds with identical budgets,
/// compute per-variant medians, and run the directional assertions. The
/// accuracy margin allows a variant to tie the full model within 0.005.
pub fn ablation_suite(
    spec: &PlantedSpec,
    cfg: &TrainConfig,
    seeds: &[u64],
    n_samples: usize,
) -> Result<SuiteReport> {
    spec.validate()?;
    let mut per_seed: Vec<Vec<SeedVariant>> = Vec::new();
    for &seed in seeds {
        let mut gen_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDA7A);
        let dataset = generate(spec, n_samples, &mut gen_rng)?;
        let mut split_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5617);
        let data = SplitDataset::from_dataset(&dataset, (0.7, 0.15, 0.15), &mut split_rng)?;
        let mut seed_cfg = cfg.clone();
        seed_cfg.seed = seed;
        let outcome = ablate(&data, &seed_cfg, &SUITE_VARIANTS)?;
        let mut with_recovery = Vec::new();
        for (report, model) in outcome.reports_with_models() {
            let mut vcfg = seed_cfg.clone();
            vcfg.ablation = report.flags;
            let gates = eval_gate_values(model, &data.test, &ScoreOpts::from_cfg(&vcfg))?;
            let recovery = recovery_score(&gates, spec);
            with_recovery.push(SeedVariant {
                report: report.clone(),
                recovery,
                gate_density: gate_density(&gates, ORDER_THRESHOLD),
            });
        }
        per_seed.push(with_recovery);
    }

    let summaries: Vec<VariantSummary> = (0..SUITE_VARIANTS.len())
        .map(|v| {
            let pick = |f: &dyn Fn(&SeedVariant) -> f64| {
                let mut vals: Vec<f64> = per_seed.iter().map(|s| f(&s[v])).collect();
                median(&mut vals)
            };
            VariantSummary {
                name: SUITE_VARIANTS[v].label(),
                median_accuracy: pick(&|s| s.report.test_accuracy),
                median_recall10: pick(&|s| s.report.recall10),
                median_order0: pick(&|s| s.report.order0_fraction),
                median_mean_order: pick(&|s| s.report.mean_edge_order),
                median_collapse_mass: pick(&|s| s.report.collapse_mass),
                median_recovery_auc: pick(&|s| s.recovery.auc),
                median_recovery_jaccard: pick(&|s| s.recovery.mean_jaccard),
            }
        })
        .collect();

    // matched-density random baseline for the full model's recovery AUC
    let full_density = {
        let mut vals: Vec<f64> = per_seed
            .iter()
            .map(|s| s[0].gate_density.clamp(0.01, 0.99))
            .collect();
        median(&mut vals)
    };
    let mut baseline_rng = ChaCha8Rng::seed_from_u64(0xBA5E);
    let baseline = random_gate_baseline(
        spec,
        cfg.k,
        200,
        full_density,
        100,
        &mut baseline_rng,
    );

    let full_recovery = RecoveryReport {
        auc: summaries[0].median_recovery_auc,
        mean_jaccard: summaries[0].median_recovery_jaccard,
        order_distance: 0.0,
    };

    let margin = 0.005;
    let full = &summaries[0];
    let mut checks = Vec::new();
    for v in 1..5 {
        let s = &summaries[v];
        checks.push(DirectionCheck {
            name: format!("full >= {} (accuracy, margin {margin})", s.name),
            pass: full.median_accuracy >= s.median_accuracy - margin,
            detail: format!(
                "full {:.4} vs {} {:.4}",
                full.median_accuracy, s.name, s.median_accuracy
            ),
        });
    }
    let both = &summaries[5];
    let strictly_worst = summaries[..5]
        .iter()
        .all(|s| both.median_accuracy < s.median_accuracy);
    checks.push(DirectionCheck {
        name: "no_hp+no_nm strictly worst (accuracy)".to_string(),
        pass: strictly_worst,
        detail: format!(
            "no_hp+no_nm {:.4} vs min(others) {:.4}",
            both.median_accuracy,
            summaries[..5]
                .iter()
                .map(|s| s.median_accuracy)
                .fold(f64::INFINITY, f64::min)
        ),
    });
    checks.push(DirectionCheck {
        name: "no_mi order-0 fraction exceeds full".to_string(),
        pass: summaries[1].median_order0 > full.median_order0,
        detail: format!(
            "no_mi {:.4} vs full {:.4}",
            summaries[1].median_order0, full.median_order0
        ),
    });
    checks.push(DirectionCheck {
        name: "no_l0 mean edge order exceeds full".to_string(),
        pass: summaries[2].median_mean_order > full.median_mean_order,
        detail: format!(
            "no_l0 {:.4} vs full {:.4}",
            summaries[2].median_mean_order, full.median_mean_order
        ),
    });
    checks.push(DirectionCheck {
        name: "no_mi collapse mass (order 0 or >= m-2) exceeds full".to_string(),
        pass: summaries[1].median_collapse_mass > full.median_collapse_mass,
        detail: format!(
            "no_mi {:.4} vs full {:.4}",
            summaries[1].median_collapse_mass, full.median_collapse_mass
        ),
    });
    checks.push(DirectionCheck {
        name: "full recovery AUC beats matched-density random baseline by 0.2".to_string(),
        pass: full.median_recovery_auc >= baseline.auc + 0.2,
        detail: format!(
            "full {:.4} vs baseline {:.4}",
            full.median_recovery_auc, baseline.auc
        ),
    });

    Ok(SuiteReport {
        spec: spec.clone(),
        seeds: seeds.to_vec(),
        per_seed,
        summaries,
        checks,
        baseline,
        full_recovery,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn spec_round_trips_through_text() {
        let spec = default_spec();
        let parsed = PlantedSpec::parse(&spec.to_text()).unwrap();
        assert_eq!(parsed, spec);
    }

    #[test]
    fn spec_rejects_order_one_and_out_of_range() {
        assert!(PlantedSpec::parse("m = 4\ninteraction: 1 coeff: 1.0\n").is_err());
        assert!(PlantedSpec::parse("m = 4\ninteraction: 1,9 coeff: 1.0\n").is_err());
        assert!(PlantedSpec::parse("m = 4\nbogus_key = 3\n").is_err());
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let spec = default_spec();
        let a = generate(&spec, 50, &mut rng(5)).unwrap();
        let b = generate(&spec, 50, &mut rng(5)).unwrap();
        assert_eq!(a, b);
        let c = generate(&spec, 50, &mut rng(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn no_interactions_give_coin_flip_labels() {
        let spec = PlantedSpec {
            m: 5,
            interactions: Vec::new(),
            noise: 0.0,
            samples_per_user: 10,
        };
        let data = generate(&spec, 4000, &mut rng(7)).unwrap();
        let pos = data.samples.iter().filter(|s| s.label == 1).count() as f64;
        let frac = pos / 4000.0;
        assert!((frac - 0.5).abs() < 0.03, "positive fraction {frac}");
    }

    #[test]
    fn bayes_accuracy_of_single_strong_pair() {
        // logit = ±3 on every assignment: accuracy = sigmoid(3)
        let spec = PlantedSpec {
            m: 4,
            interactions: vec![PlantedInteraction {
                features: vec![0, 1],
                coeff: 3.0,
            }],
            noise: 0.0,
            samples_per_user: 10,
        };
        let expect = sigmoid(3.0);
        assert!((bayes_accuracy(&spec) - expect).abs() < 1e-12);
    }

    #[test]
    fn oracle_gates_score_perfect_recovery() {
        let spec = default_spec();
        // gates exactly equal to the planted incidence
        let mut g = Tensor::zeros(&[spec.m, spec.interactions.len()]);
        for (j, q) in spec.interactions.iter().enumerate() {
            for &f in &q.features {
                g.set(f as usize, j, 1.0);
            }
        }
        let gates = vec![g; 120];
        let r = recovery_score(&gates, &spec);
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.mean_jaccard, 1.0);
        assert!(r.order_distance < 1e-12);
    }

    #[test]
    fn all_ones_gates_have_closed_form_jaccard() {
        let spec = default_spec();
        let gates = vec![Tensor::full(&[spec.m, 4], 1.0); 10];
        let r = recovery_score(&gates, &spec);
        // every column is the full feature set: Jaccard = |q| / m
        let expect: f64 = spec
            .interactions
            .iter()
            .map(|q| q.features.len() as f64 / spec.m as f64)
            .sum::<f64>()
            / spec.interactions.len() as f64;
        assert!((r.mean_jaccard - expect).abs() < 1e-12);
        // constant activation scores: AUC degenerates to 0.5 via tie ranks
        assert!((r.auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_gates_match_monte_carlo_expectation() {
        let spec = default_spec();
        let mut r1 = rng(8);
        let base_a = random_gate_baseline(&spec, 6, 50, 0.3, 50, &mut r1);
        // random activations carry no membership signal
        assert!((base_a.auc - 0.5).abs() < 0.1, "auc {}", base_a.auc);
        assert!(base_a.mean_jaccard > 0.0 && base_a.mean_jaccard < 1.0);
    }

    #[test]
    fn auc_handles_ties_and_perfect_separation() {
        assert_eq!(auc(&[1.0, 1.0, 1.0], &[true, false, true]), 0.5);
        assert_eq!(
            auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]),
            1.0
        );
    }
}
