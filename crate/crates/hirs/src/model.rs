//! Trainable parameters and their tape bindings.
//!
//! `ModelState` owns every parameter tensor: two embedding tables (one for
//! the gate generator, one for interaction modeling), the generator MLP,
//! the hyperedge MLP, the linear readout, and the two bilinear
//! discriminators. Forward code never touches `ModelState` directly; it
//! binds the state onto a tape once per batch and works with the resulting
//! `BoundModel` vars.

use rand_chacha::ChaCha8Rng;

use crate::error::NumericsError;
use crate::numerics::{randn, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Embedding dimension for both tables.
    pub d: usize,
    /// Number of generated hyperedges.
    pub k: usize,
    /// Hidden width of the generator and hyperedge MLPs.
    pub hidden: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, d: usize, k: usize) -> Self {
        ModelConfig {
            vocab_size,
            d,
            k,
            hidden: 64,
        }
    }
}

/// One-hidden-layer MLP parameters (`in -> hidden -> out`).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl MlpParams {
    fn init(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        MlpParams {
            w1: randn(&[input, hidden], (2.0 / input as f64).sqrt(), rng),
            b1: Tensor::zeros(&[hidden]),
            w2: randn(&[hidden, output], (1.0 / hidden as f64).sqrt(), rng),
            b2: Tensor::zeros(&[output]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// Embedding table feeding the hyperedge generator.
    pub emb_e: Tensor,
    /// Embedding table feeding interaction modeling; distinct storage from
    /// `emb_e` by contract.
    pub emb_g: Tensor,
    /// Generator MLP: `2d -> hidden -> k`, outputs log-alpha rows.
    pub mlp_gen: MlpParams,
    /// Hyperedge MLP `f_E`: `d -> hidden -> d`.
    pub f_edge: MlpParams,
    /// Linear readout `d -> 1`.
    pub readout_w: Tensor,
    pub readout_b: Tensor,
    /// Bilinear discriminator against label-conditioned graph reprs.
    pub w_theta: Tensor,
    /// Bilinear discriminator between hyperedge reprs.
    pub w_omega: Tensor,
}

impl ModelState {
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d;
        let mut mlp_gen = MlpParams::init(2 * d, cfg.hidden, cfg.k, rng);
        // Gates start open: a saturated-closed gate passes no prediction
        // gradient while the L0 penalty keeps pushing it down, so closed
        // initialization is irreversible. Open initialization lets the
        // prediction and infomax signals decide which edges survive.
        mlp_gen.b2.fill(2.0);
        ModelState {
            emb_e: randn(&[cfg.vocab_size, d], 0.1, rng),
            emb_g: randn(&[cfg.vocab_size, d], 0.1, rng),
            mlp_gen,
            f_edge: MlpParams::init(d, cfg.hidden, d, rng),
            readout_w: randn(&[d], (1.0 / d as f64).sqrt(), rng),
            readout_b: Tensor::zeros(&[]),
            w_theta: randn(&[d, d], (1.0 / d as f64).sqrt(), rng),
            w_omega: randn(&[d, d], (1.0 / d as f64).sqrt(), rng),
        }
    }

    /// Fixed-order named view; checkpoint layout and the optimizer both key
    /// off this order.
    pub fn named_params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("emb_e", &self.emb_e),
            ("emb_g", &self.emb_g),
            ("mlp_gen.w1", &self.mlp_gen.w1),
            ("mlp_gen.b1", &self.mlp_gen.b1),
            ("mlp_gen.w2", &self.mlp_gen.w2),
            ("mlp_gen.b2", &self.mlp_gen.b2),
            ("f_edge.w1", &self.f_edge.w1),
            ("f_edge.b1", &self.f_edge.b1),
            ("f_edge.w2", &self.f_edge.w2),
            ("f_edge.b2", &self.f_edge.b2),
            ("readout_w", &self.readout_w),
            ("readout_b", &self.readout_b),
            ("w_theta", &self.w_theta),
            ("w_omega", &self.w_omega),
        ]
    }

    pub fn named_params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("emb_e", &mut self.emb_e),
            ("emb_g", &mut self.emb_g),
            ("mlp_gen.w1", &mut self.mlp_gen.w1),
            ("mlp_gen.b1", &mut self.mlp_gen.b1),
            ("mlp_gen.w2", &mut self.mlp_gen.w2),
            ("mlp_gen.b2", &mut self.mlp_gen.b2),
            ("f_edge.w1", &mut self.f_edge.w1),
            ("f_edge.b1", &mut self.f_edge.b1),
            ("f_edge.w2", &mut self.f_edge.w2),
            ("f_edge.b2", &mut self.f_edge.b2),
            ("readout_w", &mut self.readout_w),
            ("readout_b", &mut self.readout_b),
            ("w_theta", &mut self.w_theta),
            ("w_omega", &mut self.w_omega),
        ]
    }

    /// Insert every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &Tape) -> BoundModel {
        BoundModel {
            emb_e: tape.leaf(self.emb_e.clone()),
            emb_g: tape.leaf(self.emb_g.clone()),
            mlp_gen: BoundMlp::bind(tape, &self.mlp_gen),
            f_edge: BoundMlp::bind(tape, &self.f_edge),
            readout_w: tape.leaf(self.readout_w.clone()),
            readout_b: tape.leaf(self.readout_b.clone()),
            w_theta: tape.leaf(self.w_theta.clone()),
            w_omega: tape.leaf(self.w_omega.clone()),
        }
    }

    /// Overwrite parameters from a flat tensor list in `named_params` order.
    pub fn load_from(&mut self, tensors: Vec<Tensor>) -> Result<(), String> {
        let mut params = self.named_params_mut();
        if tensors.len() != params.len() {
            return Err(format!(
                "expected {} parameter tensors, got {}",
                params.len(),
                tensors.len()
            ));
        }
        for ((name, slot), t) in params.iter_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(format!(
                    "parameter {name}: shape {:?} != checkpoint {:?}",
                    slot.shape(),
                    t.shape()
                ));
            }
            **slot = t;
        }
        Ok(())
    }
}

/// Tape-bound view of an `MlpParams`.
pub struct BoundMlp {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl BoundMlp {
    pub fn bind(tape: &Tape, p: &MlpParams) -> Self {
        BoundMlp {
            w1: tape.leaf(p.w1.clone()),
            b1: tape.leaf(p.b1.clone()),
            w2: tape.leaf(p.w2.clone()),
            b2: tape.leaf(p.b2.clone()),
        }
    }

    /// Row-wise application to a `[m, in]` matrix. `nonlinear: false` drops
    /// the hidden ReLU (the linear-modeling ablation) but keeps both layers.
    pub fn forward(&self, x: &Var, nonlinear: bool) -> Result<Var, NumericsError> {
        let h = x.matmul(&self.w1)?.add_row_broadcast(&self.b1)?;
        let h = if nonlinear { h.relu() } else { h };
        h.matmul(&self.w2)?.add_row_broadcast(&self.b2)
    }
}

/// Tape-bound view of the whole model.
pub struct BoundModel {
    pub emb_e: Var,
    pub emb_g: Var,
    pub mlp_gen: BoundMlp,
    pub f_edge: BoundMlp,
    pub readout_w: Var,
    pub readout_b: Var,
    pub w_theta: Var,
    pub w_omega: Var,
}

impl BoundModel {
    /// Collect gradients in `named_params` order (after a backward pass).
    pub fn grads(&self) -> Vec<Tensor> {
        vec![
            self.emb_e.grad(),
            self.emb_g.grad(),
            self.mlp_gen.w1.grad(),
            self.mlp_gen.b1.grad(),
            self.mlp_gen.w2.grad(),
            self.mlp_gen.b2.grad(),
            self.f_edge.w1.grad(),
            self.f_edge.b1.grad(),
            self.f_edge.w2.grad(),
            self.f_edge.b2.grad(),
            self.readout_w.grad(),
            self.readout_b.grad(),
            self.w_theta.grad(),
            self.w_omega.grad(),
        ]
    }
}
