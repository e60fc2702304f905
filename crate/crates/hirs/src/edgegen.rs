//! Hyperedge prediction: per-node log-alpha rows, hard-concrete gate
//! sampling, deterministic eval-time gates, and the closed-form L0
//! activation penalty.
//!
//! The generator MLP's output is read directly as log-alpha (no positivity
//! transform), which keeps the sampling formula and the penalty formula on
//! the same parameterization and avoids an exp/log round trip.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::DataSample;
use crate::error::NumericsError;
use crate::model::BoundMlp;
use crate::numerics::{Phase, Tape, Tensor, Var};

/// Division-by-zero guard in the gate-weighted node patch mean.
pub const PATCH_EPS: f64 = 1e-8;

/// Stretched-interval and temperature constants of the hard concrete
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardConcreteConfig {
    /// Lower stretch bound, < 0.
    pub gamma: f64,
    /// Upper stretch bound, > 0.
    pub delta: f64,
    /// Temperature, > 0.
    pub tau: f64,
}

impl Default for HardConcreteConfig {
    fn default() -> Self {
        HardConcreteConfig {
            gamma: -0.1,
            delta: 1.1,
            tau: 0.66,
        }
    }
}

impl HardConcreteConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.gamma >= 0.0 || self.delta <= 0.0 || self.tau <= 0.0 {
            return Err(format!(
                "hard concrete requires gamma < 0 < delta and tau > 0, got ({}, {}, {})",
                self.gamma, self.delta, self.tau
            ));
        }
        Ok(())
    }

    /// The shift `tau * log(-gamma/delta)` appearing in both the open-gate
    /// probability and the L0 penalty.
    pub fn open_shift(&self) -> f64 {
        self.tau * (-self.gamma / self.delta).ln()
    }

    /// Closed-form P(gate > 0) for a given log-alpha.
    pub fn open_prob(&self, logalpha: f64) -> f64 {
        crate::numerics::sigmoid(logalpha - self.open_shift())
    }
}

/// The m-by-k continuous incidence matrix for one sample.
#[derive(Clone)]
pub struct GateMatrix {
    pub node: Var,
    pub phase: Phase,
}

impl GateMatrix {
    pub fn values(&self) -> Tensor {
        self.node.value()
    }

    pub fn rows(&self) -> usize {
        self.node.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.node.shape()[1]
    }

    /// Wrap an externally fixed incidence (binary or all-ones) as an
    /// eval-style gate matrix on `tape`.
    pub fn fixed(tape: &Tape, incidence: Tensor) -> Self {
        GateMatrix {
            node: tape.leaf(incidence),
            phase: Phase::Eval,
        }
    }

    /// Text export: one row per feature, one column per hyperedge, entries
    /// rounded to 3 decimals.
    pub fn to_text(&self) -> String {
        let v = self.values();
        let mut out = String::new();
        for r in 0..v.rows() {
            let row: Vec<String> = v.row_slice(r).iter().map(|x| format!("{x:.3}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Per-node log-alpha rows: row i is the generator MLP applied to the
/// concatenation of node i's embedding and the sum of all other node
/// embeddings. The m = 1 case works through the empty-sum convention
/// (context is the zero vector).
pub fn node_context_logalpha(
    sample: &DataSample,
    emb_e: &Var,
    mlp_gen: &BoundMlp,
) -> Result<Var, NumericsError> {
    let m = sample.m();
    let ids = sample.feature_ids();
    let tape = raw_tape(emb_e);
    let values = tape.leaf(Tensor::vector(sample.feature_values()));
    let v_e = emb_e.gather_rows(&ids)?.scale_rows(&values)?;
    // sum over j != i  ==  total - row i
    let total = v_e.sum_axis(0)?;
    let context = total.repeat_row(m)?.sub(&v_e)?;
    let x = v_e.concat_cols(&context)?;
    mlp_gen.forward(&x, true)
}

fn raw_tape(var: &Var) -> Tape {
    // All vars of one forward share a tape; recover it from any of them.
    var.tape_handle()
}

/// The stretched, clamped binary-concrete transform applied to fixed noise.
/// `noise` holds the logistic draws `log z - log(1-z)`; sampling and
/// gradcheck both route through here so the noise can be frozen.
pub fn hard_concrete_transform(
    logalpha: &Var,
    noise: &Tensor,
    cfg: &HardConcreteConfig,
) -> Result<Var, NumericsError> {
    let tape = raw_tape(logalpha);
    let noise = tape.leaf(noise.clone());
    let s = logalpha
        .add(&noise)?
        .scale(1.0 / cfg.tau)
        .sigmoid();
    let stretched = s.scale(cfg.delta - cfg.gamma).add_scalar(cfg.gamma);
    Ok(stretched.clamp(0.0, 1.0))
}

/// Draw logistic noise for an m-by-k gate matrix. Uniform draws are clamped
/// to [1e-6, 1-1e-6] before the logit so the transform stays finite.
pub fn draw_gate_noise(m: usize, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..m * k)
        .map(|_| {
            let z: f64 = rng.gen::<f64>().clamp(1e-6, 1.0 - 1e-6);
            z.ln() - (1.0 - z).ln()
        })
        .collect();
    Tensor::from_vec_unchecked(vec![m, k], data)
}

/// Stochastic train-mode gates.
pub fn sample_gates(
    logalpha: &Var,
    cfg: &HardConcreteConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GateMatrix, NumericsError> {
    let shape = logalpha.shape();
    let noise = draw_gate_noise(shape[0], shape[1], rng);
    Ok(GateMatrix {
        node: hard_concrete_transform(logalpha, &noise, cfg)?,
        phase: Phase::Train,
    })
}

/// Deterministic eval-mode gates: `clamp(sigmoid(logalpha)*(delta-gamma)+gamma, 0, 1)`,
/// the standard test-time hard-concrete estimate. No randomness, so the
/// result is seed-independent and idempotent.
pub fn eval_gates(
    logalpha: &Var,
    cfg: &HardConcreteConfig,
) -> Result<GateMatrix, NumericsError> {
    let gate = logalpha
        .sigmoid()
        .scale(cfg.delta - cfg.gamma)
        .add_scalar(cfg.gamma)
        .clamp(0.0, 1.0);
    Ok(GateMatrix {
        node: gate,
        phase: Phase::Eval,
    })
}

/// Closed-form expected L0 norm of the gate matrix:
/// `sum_ij sigmoid(logalpha_ij - tau*log(-gamma/delta))`.
pub fn l0_penalty(logalpha: &Var, cfg: &HardConcreteConfig) -> Var {
    logalpha.add_scalar(-cfg.open_shift()).sigmoid().sum_all()
}
