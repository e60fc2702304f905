//! The combined training objective and the Adam loop.
//!
//! Per batch the loss is
//! `mean_n[BCE(logit_n, y_n) + lambda1 * L0_n] + lambda2 * L_smax + lambda3 * L_min`,
//! all four signals trained jointly in one minimization. Ablation switches
//! zero out terms (`no_mi`, `no_l0`), replace the generated gates with an
//! all-ones incidence (`no_hp`), or strip the hyperedge MLP's nonlinearity
//! (`no_nm`).
//!
//! Every rng stream is derived from (seed, epoch, role), so resuming from a
//! checkpoint at an epoch boundary replays the uninterrupted run bit for
//! bit.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{make_batches, Batch, DataSample, SplitDataset};
use crate::edgegen::{
    eval_gates, l0_penalty, node_context_logalpha, sample_gates, GateMatrix, HardConcreteConfig,
};
use crate::error::{HirsError, Result};
use crate::evalsuite::{group_by_user, rank_metrics};
use crate::ihgnn::{edge_representations, graph_readout, SampleReadout};
use crate::infomax::{discriminator_loss, infomin_pairs, s_infomax_pairs, SampleReprs};
use crate::model::{BoundModel, ModelConfig, ModelState};
use crate::numerics::{AdamState, Phase, Tape, Tensor, Var};

pub const CKPT_MAGIC: &[u8; 9] = b"HIRSCKPT1";

// ── configuration ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AblationFlags {
    /// Drop both mutual-information terms.
    pub no_mi: bool,
    /// Drop the L0 activation penalty.
    pub no_l0: bool,
    /// Bypass the generator; gates are a fully connected (all-ones) matrix.
    pub no_hp: bool,
    /// Remove the hyperedge MLP's ReLU (linear interaction modeling).
    pub no_nm: bool,
}

impl AblationFlags {
    pub fn parse(spec: &str) -> Result<Self> {
        let mut flags = AblationFlags::default();
        for tok in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "no_mi" => flags.no_mi = true,
                "no_l0" => flags.no_l0 = true,
                "no_hp" => flags.no_hp = true,
                "no_nm" => flags.no_nm = true,
                other => {
                    return Err(HirsError::Config(format!(
                        "unknown ablation flag {other:?}; valid: no_mi,no_l0,no_hp,no_nm"
                    )))
                }
            }
        }
        Ok(flags)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.no_mi {
            parts.push("no_mi");
        }
        if self.no_l0 {
            parts.push("no_l0");
        }
        if self.no_hp {
            parts.push("no_hp");
        }
        if self.no_nm {
            parts.push("no_nm");
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub d: usize,
    pub k: usize,
    pub hidden: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub ablation: AblationFlags,
    pub gate: HardConcreteConfig,
    /// Insert the infomax graph-repr partners as constants instead of
    /// letting gradient flow into them.
    pub detach_mi: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 64,
            k: 40,
            hidden: 64,
            lambda1: 0.02,
            lambda2: 1.0,
            lambda3: 0.1,
            dropout: 0.1,
            lr: 1e-3,
            batch_size: 256,
            epochs: 10,
            seed: 0,
            eval_every: 1,
            ablation: AblationFlags::default(),
            gate: HardConcreteConfig::default(),
            detach_mi: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(HirsError::Config("lambdas must be >= 0".to_string()));
        }
        if self.k < 1 || self.d < 1 {
            return Err(HirsError::Config("k and d must be >= 1".to_string()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(HirsError::Config("dropout must be in [0,1)".to_string()));
        }
        self.gate.validate().map_err(HirsError::Config)
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d: self.d,
            k: self.k,
            hidden: self.hidden,
        }
    }
}

// ── per-sample forward ───────────────────────────────────────────────

pub struct SampleForward {
    pub gates: GateMatrix,
    pub readout: SampleReadout,
    pub l0: Option<Var>,
}

/// One sample through generator, gates and hypergraph readout, honoring
/// the ablation flags and phase.
pub fn forward_sample(
    sample: &DataSample,
    bound: &BoundModel,
    cfg: &TrainConfig,
    tape: &Tape,
    phase: Phase,
    gate_rng: &mut ChaCha8Rng,
) -> Result<SampleForward> {
    let (gates, l0) = if cfg.ablation.no_hp {
        let ones = Tensor::full(&[sample.m(), cfg.k], 1.0);
        (GateMatrix::fixed(tape, ones), None)
    } else {
        let logalpha = node_context_logalpha(sample, &bound.emb_e, &bound.mlp_gen)?;
        let gates = match phase {
            Phase::Train => sample_gates(&logalpha, &cfg.gate, gate_rng)?,
            Phase::Eval => eval_gates(&logalpha, &cfg.gate)?,
        };
        let l0 = (!cfg.ablation.no_l0).then(|| l0_penalty(&logalpha, &cfg.gate));
        (gates, l0)
    };
    let h = edge_representations(
        sample,
        &gates,
        &bound.emb_g,
        &bound.f_edge,
        !cfg.ablation.no_nm,
    )?;
    let readout = graph_readout(&gates, &h, &bound.readout_w, &bound.readout_b)?;
    Ok(SampleForward { gates, readout, l0 })
}

// ── batch loss ───────────────────────────────────────────────────────

/// Unweighted loss components of one batch; the weighted sum is `total`.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub bce: f64,
    pub l0: f64,
    pub smax: f64,
    pub min: f64,
    /// Both MI terms were skipped because the batch held one label.
    pub mi_skipped: bool,
}

pub struct BatchRngs<'a> {
    pub gates: &'a mut ChaCha8Rng,
    pub pairs: &'a mut ChaCha8Rng,
    pub dropout: &'a mut ChaCha8Rng,
}

/// Assemble the full objective for one batch on `tape`.
pub fn total_loss(
    batch: &Batch,
    bound: &BoundModel,
    cfg: &TrainConfig,
    tape: &Tape,
    phase: Phase,
    rngs: &mut BatchRngs,
) -> Result<(Var, LossBreakdown)> {
    assert!(!batch.is_empty(), "total_loss on an empty batch");
    let mut forwards = Vec::with_capacity(batch.len());
    for sample in &batch.samples {
        forwards.push(forward_sample(sample, bound, cfg, tape, phase, rngs.gates)?);
    }

    let logits: Vec<Var> = forwards.iter().map(|f| f.readout.logit.clone()).collect();
    let targets = Tensor::vector(batch.samples.iter().map(|s| s.label as f64).collect());
    let bce = Var::stack_scalars(tape, &logits)?
        .bce_with_logits(&targets)?
        .mean_all();

    let l0_terms: Vec<Var> = forwards.iter().filter_map(|f| f.l0.clone()).collect();
    let l0 = if l0_terms.is_empty() {
        tape.scalar(0.0)
    } else {
        Var::stack_scalars(tape, &l0_terms)?.mean_all()
    };

    let want_mi = !cfg.ablation.no_mi && (cfg.lambda2 > 0.0 || cfg.lambda3 > 0.0);
    let mi_skipped = want_mi && batch.single_label;
    let (smax, min) = if want_mi && !batch.single_label {
        let reprs: Vec<SampleReprs> = forwards
            .iter()
            .zip(&batch.samples)
            .map(|(f, s)| SampleReprs {
                h: &f.readout.reprs.h,
                c: &f.readout.reprs.c,
                label: s.label,
            })
            .collect();
        let smax_pairs = s_infomax_pairs(&reprs, cfg.detach_mi, rngs.pairs)?;
        let min_pairs = infomin_pairs(&reprs, cfg.dropout, phase, rngs.dropout)?;
        (
            discriminator_loss(&smax_pairs, &bound.w_theta)?,
            discriminator_loss(&min_pairs, &bound.w_omega)?,
        )
    } else {
        (tape.scalar(0.0), tape.scalar(0.0))
    };

    let lambda1 = if cfg.ablation.no_l0 || cfg.ablation.no_hp {
        0.0
    } else {
        cfg.lambda1
    };
    let (lambda2, lambda3) = if cfg.ablation.no_mi {
        (0.0, 0.0)
    } else {
        (cfg.lambda2, cfg.lambda3)
    };
    let total = bce
        .add(&l0.scale(lambda1))?
        .add(&smax.scale(lambda2))?
        .add(&min.scale(lambda3))?;

    let breakdown = LossBreakdown {
        total: total.item(),
        bce: bce.item(),
        l0: l0.item(),
        smax: smax.item(),
        min: min.item(),
        mi_skipped,
    };
    Ok((total, breakdown))
}

// ── training loop ────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_bce: f64,
    pub loss_l0: f64,
    pub loss_smax: f64,
    pub loss_min: f64,
    pub recall10: Option<f64>,
    pub ndcg10: Option<f64>,
    pub seconds: f64,
    pub single_label_batches: usize,
}

/// Best-validation snapshot tracked during training.
#[derive(Debug, Clone, PartialEq)]
pub struct BestVal {
    pub metric: f64,
    pub epoch: usize,
    pub model: ModelState,
}

/// Everything needed to continue a run: model, optimizer moments, the next
/// epoch to execute, and the best-val snapshot so far. The rng state is
/// fully determined by (seed, epoch) since streams are re-derived per
/// epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub model: ModelState,
    pub adam: Vec<AdamState>,
    pub next_epoch: usize,
    pub best: Option<BestVal>,
}

pub struct TrainOutcome {
    pub state: TrainerState,
    pub logs: Vec<EpochLog>,
}

impl TrainOutcome {
    /// The model selected by best validation Recall@10, falling back to the
    /// final state when no validation happened.
    pub fn selected_model(&self) -> &ModelState {
        match &self.state.best {
            Some(b) => &b.model,
            None => &self.state.model,
        }
    }
}

fn stream_rng(seed: u64, epoch: usize, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((epoch as u64) * 8 + role);
    rng
}

/// The stream used to initialize a fresh model for `seed`.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, 0, 7)
}

/// Run (or resume) training. Stratified batches, one Adam step per batch,
/// per-epoch validation ranking metrics, best-val model selection.
pub fn train(
    data: &SplitDataset,
    cfg: &TrainConfig,
    resume: Option<TrainerState>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(HirsError::Invalid("empty training set".to_string()));
    }
    let mut state = match resume {
        Some(s) => s,
        None => {
            let mut init_rng = stream_rng(cfg.seed, 0, 7);
            let model = ModelState::init(&cfg.model_config(data.vocab.len()), &mut init_rng);
            let adam = model
                .named_params()
                .iter()
                .map(|(_, t)| AdamState::new(t.shape(), cfg.lr))
                .collect();
            TrainerState {
                model,
                adam,
                next_epoch: 0,
                best: None,
            }
        }
    };

    let mut logs = Vec::new();
    for epoch in state.next_epoch..cfg.epochs {
        let started = Instant::now();
        let mut batch_rng = stream_rng(cfg.seed, epoch, 0);
        let mut gate_rng = stream_rng(cfg.seed, epoch, 1);
        let mut pair_rng = stream_rng(cfg.seed, epoch, 2);
        let mut drop_rng = stream_rng(cfg.seed, epoch, 3);

        let batches = make_batches(&data.train, cfg.batch_size, true, &mut batch_rng);
        let mut sums = LossBreakdown::default();
        let mut single_label_batches = 0usize;
        let mut seen = 0usize;
        for (batch_no, batch) in batches.iter().enumerate() {
            let tape = Tape::new();
            let bound = state.model.bind(&tape);
            let mut rngs = BatchRngs {
                gates: &mut gate_rng,
                pairs: &mut pair_rng,
                dropout: &mut drop_rng,
            };
            let (loss, parts) = total_loss(batch, &bound, cfg, &tape, Phase::Train, &mut rngs)?;
            for (component, value) in [
                ("bce", parts.bce),
                ("l0", parts.l0),
                ("smax", parts.smax),
                ("min", parts.min),
                ("total", parts.total),
            ] {
                if !value.is_finite() {
                    return Err(HirsError::NanLoss {
                        component: match component {
                            "bce" => "bce",
                            "l0" => "l0",
                            "smax" => "smax",
                            "min" => "min",
                            _ => "total",
                        },
                        epoch,
                        batch: batch_no,
                    });
                }
            }
            loss.backward()?;
            let grads = bound.grads();
            for ((_, param), (adam, grad)) in state
                .model
                .named_params_mut()
                .into_iter()
                .zip(state.adam.iter_mut().zip(&grads))
            {
                adam.step(param, grad);
            }
            let w = batch.len() as f64;
            sums.total += parts.total * w;
            sums.bce += parts.bce * w;
            sums.l0 += parts.l0 * w;
            sums.smax += parts.smax * w;
            sums.min += parts.min * w;
            single_label_batches += usize::from(parts.mi_skipped || batch.single_label);
            seen += batch.len();
        }
        let n = seen.max(1) as f64;

        let (recall10, ndcg10) = if !data.val.is_empty() && (epoch + 1) % cfg.eval_every == 0 {
            let scores = score_samples(&state.model, &data.val, &ScoreOpts::from_cfg(cfg))?;
            let table = rank_metrics(&group_by_user(&data.val, &scores), &[10]);
            let metric = table.recall_at(10);
            let better = state.best.as_ref().map_or(true, |b| metric > b.metric);
            if better {
                state.best = Some(BestVal {
                    metric,
                    epoch,
                    model: state.model.clone(),
                });
            }
            (Some(metric), Some(table.ndcg_at(10)))
        } else {
            (None, None)
        };

        logs.push(EpochLog {
            epoch,
            loss_total: sums.total / n,
            loss_bce: sums.bce / n,
            loss_l0: sums.l0 / n,
            loss_smax: sums.smax / n,
            loss_min: sums.min / n,
            recall10,
            ndcg10,
            seconds: started.elapsed().as_secs_f64(),
            single_label_batches,
        });
        state.next_epoch = epoch + 1;
    }

    Ok(TrainOutcome { state, logs })
}

// ── scoring ──────────────────────────────────────────────────────────

/// Eval-phase scoring options (the ablation structure must match training).
#[derive(Debug, Clone)]
pub struct ScoreOpts {
    pub cfg: TrainConfig,
}

impl ScoreOpts {
    pub fn from_cfg(cfg: &TrainConfig) -> Self {
        ScoreOpts { cfg: cfg.clone() }
    }
}

/// Deterministic eval-mode probabilities for a set of samples.
pub fn score_samples(
    model: &ModelState,
    samples: &[DataSample],
    opts: &ScoreOpts,
) -> Result<Vec<f64>> {
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(samples.len());
    for sample in samples {
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let fwd = forward_sample(sample, &bound, &opts.cfg, &tape, Phase::Eval, &mut unused)?;
        out.push(fwd.readout.prob.item());
    }
    Ok(out)
}

/// Deterministic eval-mode gate matrices for a set of samples.
pub fn eval_gate_values(
    model: &ModelState,
    samples: &[DataSample],
    opts: &ScoreOpts,
) -> Result<Vec<Tensor>> {
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(samples.len());
    for sample in samples {
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let fwd = forward_sample(sample, &bound, &opts.cfg, &tape, Phase::Eval, &mut unused)?;
        out.push(fwd.gates.values());
    }
    Ok(out)
}

// ── ablation runner ──────────────────────────────────────────────────

/// Report for one trained variant.
#[derive(Debug, Clone, Serialize)]
pub struct VariantReport {
    pub name: String,
    pub flags: AblationFlags,
    pub test_accuracy: f64,
    pub recall10: f64,
    pub ndcg10: f64,
    pub order_fractions: Vec<f64>,
    pub order0_fraction: f64,
    pub mean_edge_order: f64,
    pub collapse_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub seed: u64,
    pub variants: Vec<VariantReport>,
}

/// Ablation reports plus the trained models behind them (for downstream
/// gate analysis).
pub struct AblationOutcome {
    pub report: AblationReport,
    pub models: Vec<ModelState>,
}

impl AblationOutcome {
    pub fn reports_with_models(&self) -> impl Iterator<Item = (&VariantReport, &ModelState)> {
        self.report.variants.iter().zip(&self.models)
    }
}

/// Train one variant per flag set with an identical seed and budget and
/// report test metrics plus gate-order statistics for each.
pub fn ablate(
    data: &SplitDataset,
    cfg: &TrainConfig,
    variants: &[AblationFlags],
) -> Result<AblationOutcome> {
    let mut reports = Vec::new();
    let mut models = Vec::new();
    for &flags in variants {
        let mut vcfg = cfg.clone();
        vcfg.ablation = flags;
        let outcome = train(data, &vcfg, None)?;
        let model = outcome.selected_model().clone();
        let opts = ScoreOpts::from_cfg(&vcfg);
        let scores = score_samples(&model, &data.test, &opts)?;
        let table = rank_metrics(&group_by_user(&data.test, &scores), &[10]);
        let gates = eval_gate_values(&model, &data.test, &opts)?;
        let hist = crate::evalsuite::order_histogram(&gates, crate::evalsuite::ORDER_THRESHOLD);
        let m_max = data.test.iter().map(DataSample::m).max().unwrap_or(0);
        reports.push(VariantReport {
            name: flags.label(),
            flags,
            test_accuracy: crate::evalsuite::accuracy(&data.test, &scores),
            recall10: table.recall_at(10),
            ndcg10: table.ndcg_at(10),
            order_fractions: hist.fractions.clone(),
            order0_fraction: hist.fraction_at(0),
            mean_edge_order: hist.mean_order(),
            collapse_mass: hist.collapse_mass(m_max),
        });
        models.push(model);
    }
    Ok(AblationOutcome {
        report: AblationReport {
            seed: cfg.seed,
            variants: reports,
        },
        models,
    })
}

// ── whole-model gradient check ───────────────────────────────────────

/// Gradcheck the complete frozen-noise forward: generator, hard-concrete
/// gates, hypergraph readout, prediction BCE, and both infomax losses.
/// Stochastic draws are frozen by reseeding the gate/pair/dropout streams
/// identically on every evaluation; finite-difference probes that cross a
/// relu/clamp kink are excluded by branch tracing.
pub fn gradcheck_full_forward(
    cfg: &TrainConfig,
    vocab_size: usize,
    batch_samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<crate::numerics::GradCheckReport> {
    use rand::Rng;
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<DataSample> = (0..batch_samples)
        .map(|i| {
            let m = data_rng.gen_range(2..=4usize);
            let mut ids: Vec<u32> = (0..vocab_size as u32).collect();
            for j in (1..ids.len()).rev() {
                ids.swap(j, data_rng.gen_range(0..=j));
            }
            DataSample {
                user_id: 0,
                item_id: i as u32,
                features: ids
                    .into_iter()
                    .take(m)
                    .map(|id| (id, if data_rng.gen::<bool>() { 1.0 } else { -1.0 }))
                    .collect(),
                label: (i % 2) as u8,
            }
        })
        .collect();
    let batch = Batch::from_samples(samples);

    let mut init = ChaCha8Rng::seed_from_u64(seed ^ 0x1217);
    let state = ModelState::init(&cfg.model_config(vocab_size), &mut init);
    let mut params: Vec<(String, Tensor)> = state
        .named_params()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();

    let report = crate::numerics::gradcheck(
        &mut params,
        |p, _| {
            let tape = Tape::new();
            tape.trace_branches();
            let mut st = state.clone();
            st.load_from(p.iter().map(|(_, t)| t.clone()).collect())
                .expect("parameter shapes are fixed");
            let bound = st.bind(&tape);
            let mut gates = ChaCha8Rng::seed_from_u64(seed ^ 0xA);
            let mut pairs = ChaCha8Rng::seed_from_u64(seed ^ 0xB);
            let mut dropout = ChaCha8Rng::seed_from_u64(seed ^ 0xC);
            let mut rngs = BatchRngs {
                gates: &mut gates,
                pairs: &mut pairs,
                dropout: &mut dropout,
            };
            let (loss, _) = total_loss(&batch, &bound, cfg, &tape, Phase::Train, &mut rngs)
                .map_err(|e| match e {
                    HirsError::Numerics(n) => n,
                    other => panic!("unexpected error in gradcheck eval: {other}"),
                })?;
            loss.backward()?;
            Ok(crate::numerics::Eval {
                loss: loss.item(),
                grads: Some(bound.grads()),
                branches: tape.take_branch_trace(),
            })
        },
        1e-5,
        tolerance,
    )?;
    Ok(report)
}

// ── checkpoints ──────────────────────────────────────────────────────

struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u8(t.shape().len() as u8);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
    fn model(&mut self, m: &ModelState) {
        let params = m.named_params();
        self.u32(params.len() as u32);
        for (name, t) in params {
            let bytes = name.as_bytes();
            self.u32(bytes.len() as u32);
            self.0.extend_from_slice(bytes);
            self.tensor(t);
        }
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(HirsError::Checkpoint("truncated checkpoint".to_string()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(self.f64()?);
        }
        Tensor::from_vec(shape, data)
            .map_err(|e| HirsError::Checkpoint(format!("bad tensor: {e}")))
    }
    fn model(&mut self, template: &ModelState) -> Result<ModelState> {
        let count = self.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = self.u32()? as usize;
            let _name = self.take(name_len)?;
            tensors.push(self.tensor()?);
        }
        let mut model = template.clone();
        model.load_from(tensors).map_err(HirsError::Checkpoint)?;
        Ok(model)
    }
}

/// Serialize a trainer state as the versioned `HIRSCKPT1` binary format.
pub fn checkpoint_to_bytes(state: &TrainerState, seed: u64, config_hash: u64) -> Vec<u8> {
    let mut w = ByteWriter(Vec::new());
    w.0.extend_from_slice(CKPT_MAGIC);
    w.u32(1); // version
    w.u64(config_hash);
    w.u64(seed);
    w.u64(state.next_epoch as u64);
    w.u8(u8::from(state.best.is_some()));
    if let Some(best) = &state.best {
        w.f64(best.metric);
        w.u64(best.epoch as u64);
        w.model(&best.model);
    }
    w.model(&state.model);
    w.u32(state.adam.len() as u32);
    for a in &state.adam {
        w.u64(a.step_count);
        w.f64(a.lr);
        w.f64(a.beta1);
        w.f64(a.beta2);
        w.f64(a.eps);
        w.tensor(&a.first_moment);
        w.tensor(&a.second_moment);
    }
    w.0
}

/// Parse a checkpoint. `template` supplies the expected parameter shapes;
/// `expect_hash`, when given, must match the stored config hash.
pub fn checkpoint_from_bytes(
    bytes: &[u8],
    template: &ModelState,
    expect_hash: Option<u64>,
) -> Result<(TrainerState, u64, u64)> {
    let mut r = ByteReader { buf: bytes, pos: 0 };
    if r.take(9)? != CKPT_MAGIC {
        return Err(HirsError::Checkpoint("bad magic".to_string()));
    }
    let version = r.u32()?;
    if version != 1 {
        return Err(HirsError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let config_hash = r.u64()?;
    if let Some(expect) = expect_hash {
        if expect != config_hash {
            return Err(HirsError::Checkpoint(format!(
                "config hash mismatch: checkpoint {config_hash:016x}, run {expect:016x}"
            )));
        }
    }
    let seed = r.u64()?;
    let next_epoch = r.u64()? as usize;
    let best = if r.u8()? == 1 {
        let metric = r.f64()?;
        let epoch = r.u64()? as usize;
        let model = r.model(template)?;
        Some(BestVal {
            metric,
            epoch,
            model,
        })
    } else {
        None
    };
    let model = r.model(template)?;
    let n_adam = r.u32()? as usize;
    let mut adam = Vec::with_capacity(n_adam);
    for _ in 0..n_adam {
        let step_count = r.u64()?;
        let lr = r.f64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let eps = r.f64()?;
        let first_moment = r.tensor()?;
        let second_moment = r.tensor()?;
        adam.push(AdamState {
            first_moment,
            second_moment,
            step_count,
            lr,
            beta1,
            beta2,
            eps,
        });
    }
    Ok((
        TrainerState {
            model,
            adam,
            next_epoch,
            best,
        },
        seed,
        config_hash,
    ))
}

/// Render epoch logs as JSON lines (stable key order via the struct).
pub fn logs_to_jsonl(logs: &[EpochLog]) -> String {
    let mut out = String::new();
    for log in logs {
        out.push_str(&serde_json::to_string(log).expect("epoch log serializes"));
        out.push('\n');
    }
    out
}
