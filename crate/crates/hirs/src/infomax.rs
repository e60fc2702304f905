//! Supervised infomax and infomin objectives.
//!
//! Both terms are GAN-style: a bilinear discriminator scores pairs and is
//! trained with BCE against joint/marginal targets, jointly with the
//! generator (one minimization, no alternating phases). The s-Infomax pairs
//! tie each hyperedge representation to graph representations of same-label
//! samples (target 1) and opposite-label samples (target 0). The Infomin
//! pairs swap the roles: dropout-perturbed copies of the same hyperedge are
//! the target-1 class, distinct hyperedges of one sample the target-0
//! class, which pushes hyperedge representations apart.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::NumericsError;
use crate::numerics::{Phase, Tensor, Var};

/// Why a pair batch came back empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// The batch holds one label only; no opposite-label graph repr exists.
    SingleLabel,
    /// k = 1: no distinct hyperedge to contrast against.
    SingleEdge,
}

/// Discriminator input pairs with binary targets.
pub struct PairBatch {
    pub left: Vec<Var>,
    pub right: Vec<Var>,
    pub targets: Vec<f64>,
    pub skipped: Option<SkipReason>,
}

impl PairBatch {
    fn empty(reason: SkipReason) -> Self {
        PairBatch {
            left: Vec::new(),
            right: Vec::new(),
            targets: Vec::new(),
            skipped: Some(reason),
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Per-sample view handed to the pair builders.
pub struct SampleReprs<'a> {
    /// `[k,d]` hyperedge representations.
    pub h: &'a Var,
    /// `[d]` graph representation.
    pub c: &'a Var,
    pub label: u8,
}

/// One joint and one marginal pair per hyperedge of every sample. The
/// joint partner is the graph representation of a uniformly drawn other
/// same-label sample (the sample itself when it is the only one with its
/// label); the marginal partner comes from a uniformly drawn opposite-label
/// sample. With `detach` the partners enter as constants so no gradient
/// reaches them.
pub fn s_infomax_pairs(
    reprs: &[SampleReprs],
    detach: bool,
    rng: &mut ChaCha8Rng,
) -> Result<PairBatch, NumericsError> {
    let pos: Vec<usize> = (0..reprs.len()).filter(|&i| reprs[i].label == 1).collect();
    let neg: Vec<usize> = (0..reprs.len()).filter(|&i| reprs[i].label == 0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Ok(PairBatch::empty(SkipReason::SingleLabel));
    }

    let partner = |c: &Var| -> Var {
        if detach {
            c.tape_handle().leaf(c.value())
        } else {
            c.clone()
        }
    };

    let mut batch = PairBatch {
        left: Vec::new(),
        right: Vec::new(),
        targets: Vec::new(),
        skipped: None,
    };
    for (n, r) in reprs.iter().enumerate() {
        let same = if r.label == 1 { &pos } else { &neg };
        let opposite = if r.label == 1 { &neg } else { &pos };
        let same_others: Vec<usize> = same.iter().copied().filter(|&i| i != n).collect();
        let k = r.h.shape()[0];
        for i in 0..k {
            let h_i = r.h.row(i)?;
            let joint_idx = if same_others.is_empty() {
                n
            } else {
                same_others[rng.gen_range(0..same_others.len())]
            };
            let marginal_idx = opposite[rng.gen_range(0..opposite.len())];
            batch.left.push(h_i.clone());
            batch.right.push(partner(reprs[joint_idx].c));
            batch.targets.push(1.0);
            batch.left.push(h_i);
            batch.right.push(partner(reprs[marginal_idx].c));
            batch.targets.push(0.0);
        }
    }
    Ok(batch)
}

/// Per hyperedge: one dropout-perturbed self pair (target 1) and one pair
/// against a uniformly drawn different hyperedge of the same sample
/// (target 0). Dropout masks are drawn independently per appearance so the
/// discriminator cannot match identical vectors verbatim.
pub fn infomin_pairs(
    reprs: &[SampleReprs],
    dropout_p: f64,
    phase: Phase,
    rng: &mut ChaCha8Rng,
) -> Result<PairBatch, NumericsError> {
    let k = match reprs.first() {
        Some(r) => r.h.shape()[0],
        None => return Ok(PairBatch::empty(SkipReason::SingleEdge)),
    };
    if k < 2 {
        return Ok(PairBatch::empty(SkipReason::SingleEdge));
    }
    let mut batch = PairBatch {
        left: Vec::new(),
        right: Vec::new(),
        targets: Vec::new(),
        skipped: None,
    };
    for r in reprs {
        for i in 0..k {
            let j = {
                let off = rng.gen_range(1..k);
                (i + off) % k
            };
            let h_i = r.h.row(i)?;
            let h_j = r.h.row(j)?;
            batch.left.push(h_i.dropout(dropout_p, phase, rng));
            batch.right.push(h_i.dropout(dropout_p, phase, rng));
            batch.targets.push(1.0);
            batch.left.push(h_i.dropout(dropout_p, phase, rng));
            batch.right.push(h_j.dropout(dropout_p, phase, rng));
            batch.targets.push(0.0);
        }
    }
    Ok(batch)
}

/// Mean BCE of `sigmoid(left^T W right)` against the pair targets. An empty
/// batch returns a constant zero that contributes no gradient.
pub fn discriminator_loss(pairs: &PairBatch, w: &Var) -> Result<Var, NumericsError> {
    if pairs.is_empty() {
        return Ok(w.tape_handle().scalar(0.0));
    }
    let tape = w.tape_handle();
    let left = Var::stack_rows(&tape, &pairs.left)?;
    let right = Var::stack_rows(&tape, &pairs.right)?;
    let scores = left.bilinear_rows(w, &right)?;
    let targets = Tensor::vector(pairs.targets.clone());
    Ok(scores.bce_with_logits(&targets)?.mean_all())
}

/// Fraction of pairs the discriminator classifies correctly at threshold
/// 0.5 (score > 0 on logits).
pub fn discriminator_accuracy(pairs: &PairBatch, w: &Var) -> Result<f64, NumericsError> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let tape = w.tape_handle();
    let left = Var::stack_rows(&tape, &pairs.left)?;
    let right = Var::stack_rows(&tape, &pairs.right)?;
    let scores = left.bilinear_rows(w, &right)?.value();
    let correct = scores
        .data()
        .iter()
        .zip(&pairs.targets)
        .filter(|(&s, &t)| (s > 0.0) == (t > 0.5))
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{randn, AdamState, Tape};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    struct Owned {
        h: Var,
        c: Var,
        label: u8,
    }

    fn make_reprs(tape: &Tape, labels: &[u8], k: usize, d: usize, seed: u64) -> Vec<Owned> {
        let mut r = rng(seed);
        labels
            .iter()
            .map(|&label| Owned {
                h: tape.leaf(randn(&[k, d], 1.0, &mut r)),
                c: tape.leaf(randn(&[d], 1.0, &mut r)),
                label,
            })
            .collect()
    }

    fn views(owned: &[Owned]) -> Vec<SampleReprs<'_>> {
        owned
            .iter()
            .map(|o| SampleReprs {
                h: &o.h,
                c: &o.c,
                label: o.label,
            })
            .collect()
    }

    #[test]
    fn pair_counts_are_two_k_per_sample() {
        let tape = Tape::new();
        let owned = make_reprs(&tape, &[1, 0], 40, 4, 1);
        let mut r = rng(2);
        let smax = s_infomax_pairs(&views(&owned), false, &mut r).unwrap();
        assert_eq!(smax.len(), 160); // 80 joint + 80 marginal
        assert_eq!(smax.targets.iter().filter(|&&t| t == 1.0).count(), 80);
        let min = infomin_pairs(&views(&owned), 0.1, Phase::Train, &mut r).unwrap();
        assert_eq!(min.len(), 160);
    }

    #[test]
    fn lone_same_label_candidate_is_always_chosen() {
        let tape = Tape::new();
        let owned = make_reprs(&tape, &[1, 1, 0], 3, 4, 3);
        let mut r = rng(4);
        let pairs = s_infomax_pairs(&views(&owned), false, &mut r).unwrap();
        // joint partners of sample 0 must all be sample 1's c (and vice versa)
        let c1 = owned[1].c.value();
        for idx in 0..3 {
            let right = pairs.right[2 * idx].value();
            assert_eq!(right, c1);
        }
    }

    #[test]
    fn single_label_batch_skips_with_flag() {
        let tape = Tape::new();
        let owned = make_reprs(&tape, &[1, 1, 1], 3, 4, 5);
        let mut r = rng(6);
        let pairs = s_infomax_pairs(&views(&owned), false, &mut r).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(pairs.skipped, Some(SkipReason::SingleLabel));
    }

    #[test]
    fn single_edge_infomin_skips_with_flag() {
        let tape = Tape::new();
        let owned = make_reprs(&tape, &[1, 0], 1, 4, 7);
        let mut r = rng(8);
        let pairs = infomin_pairs(&views(&owned), 0.1, Phase::Train, &mut r).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(pairs.skipped, Some(SkipReason::SingleEdge));
    }

    #[test]
    fn zero_dropout_self_pairs_are_identical() {
        let tape = Tape::new();
        let owned = make_reprs(&tape, &[1, 0], 2, 4, 9);
        let mut r = rng(10);
        let pairs = infomin_pairs(&views(&owned), 0.0, Phase::Train, &mut r).unwrap();
        for idx in (0..pairs.len()).step_by(2) {
            assert_eq!(pairs.left[idx].value(), pairs.right[idx].value());
        }
    }

    #[test]
    fn cross_pairs_never_self_compare() {
        let tape = Tape::new();
        let owned = make_reprs(&tape, &[1, 0], 2, 4, 11);
        let mut r = rng(12);
        let pairs = infomin_pairs(&views(&owned), 0.0, Phase::Train, &mut r).unwrap();
        // with k=2 the cross partner of edge i must be edge 1-i
        for (s, o) in owned.iter().enumerate() {
            let hv = o.h.value();
            for i in 0..2 {
                let cross_right = pairs.right[s * 4 + 2 * i + 1].value();
                let expect = Tensor::vector(hv.row_slice(1 - i).to_vec());
                assert_eq!(cross_right, expect);
            }
        }
    }

    #[test]
    fn zero_discriminator_gives_ln2_loss() {
        let tape = Tape::new();
        let owned = make_reprs(&tape, &[1, 0], 3, 4, 13);
        let mut r = rng(14);
        let pairs = s_infomax_pairs(&views(&owned), false, &mut r).unwrap();
        let w = tape.leaf(Tensor::zeros(&[4, 4]));
        let loss = discriminator_loss(&pairs, &w).unwrap();
        assert!((loss.item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn empty_pair_batch_contributes_zero_without_gradient() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::full(&[4, 4], 0.3));
        let pairs = PairBatch::empty(SkipReason::SingleLabel);
        let loss = discriminator_loss(&pairs, &w).unwrap();
        assert_eq!(loss.item(), 0.0);
        loss.backward().unwrap();
        assert!(w.grad().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_is_invariant_to_pair_order() {
        let tape = Tape::new();
        let owned = make_reprs(&tape, &[1, 0, 1], 3, 4, 15);
        let mut r = rng(16);
        let pairs = s_infomax_pairs(&views(&owned), false, &mut r).unwrap();
        let w_t = randn(&[4, 4], 0.5, &mut r);
        let w = tape.leaf(w_t.clone());
        let base = discriminator_loss(&pairs, &w).unwrap().item();

        let perm: Vec<usize> = (0..pairs.len()).rev().collect();
        let reordered = PairBatch {
            left: perm.iter().map(|&i| pairs.left[i].clone()).collect(),
            right: perm.iter().map(|&i| pairs.right[i].clone()).collect(),
            targets: perm.iter().map(|&i| pairs.targets[i]).collect(),
            skipped: None,
        };
        let shuffled = discriminator_loss(&reordered, &w).unwrap().item();
        assert!((base - shuffled).abs() < 1e-12);
    }

    #[test]
    fn detach_blocks_gradient_into_graph_reprs() {
        let tape = Tape::new();
        let owned = make_reprs(&tape, &[1, 0], 2, 4, 17);
        let mut r = rng(18);
        let pairs = s_infomax_pairs(&views(&owned), true, &mut r).unwrap();
        let w = tape.leaf(randn(&[4, 4], 0.5, &mut r));
        let loss = discriminator_loss(&pairs, &w).unwrap();
        loss.backward().unwrap();
        for o in &owned {
            assert!(o.c.grad().data().iter().all(|&g| g == 0.0));
            assert!(o.h.grad().data().iter().any(|&g| g != 0.0));
        }
    }

    #[test]
    fn scores_lie_in_unit_interval() {
        let tape = Tape::new();
        let owned = make_reprs(&tape, &[1, 0], 3, 4, 19);
        let mut r = rng(20);
        let pairs = s_infomax_pairs(&views(&owned), false, &mut r).unwrap();
        let w = tape.leaf(randn(&[4, 4], 2.0, &mut r));
        let left = Var::stack_rows(&tape, &pairs.left).unwrap();
        let right = Var::stack_rows(&tape, &pairs.right).unwrap();
        let probs = left.bilinear_rows(&w, &right).unwrap().sigmoid().value();
        assert!(probs.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn separable_clusters_are_learned_by_the_discriminator_alone() {
        // Graph reprs clustered by label; training only W for 500 steps must
        // push loss under 0.2 and accuracy over 0.9.
        let d = 8;
        let r = rng(21);
        let mu: Vec<f64> = (0..d).map(|_| 1.0).collect();
        let labels: Vec<u8> = (0..16).map(|i| (i % 2) as u8).collect();

        let build_pairs = |tape: &Tape, r: &mut ChaCha8Rng| -> (Vec<Owned>, PairBatch) {
            let owned: Vec<Owned> = labels
                .iter()
                .map(|&label| {
                    let sign = if label == 1 { 1.0 } else { -1.0 };
                    let jitter = randn(&[3, d], 0.2, r);
                    let h = Tensor::matrix(
                        3,
                        d,
                        (0..3 * d)
                            .map(|i| sign * mu[i % d] + jitter.data()[i])
                            .collect(),
                    );
                    let cj = randn(&[d], 0.2, r);
                    let c = Tensor::vector(
                        (0..d).map(|i| sign * mu[i] + cj.data()[i]).collect(),
                    );
                    Owned {
                        h: tape.leaf(h),
                        c: tape.leaf(c),
                        label,
                    }
                })
                .collect();
            let mut pair_rng = rng(22);
            let views: Vec<SampleReprs> = owned
                .iter()
                .map(|o| SampleReprs {
                    h: &o.h,
                    c: &o.c,
                    label: o.label,
                })
                .collect();
            let pairs = s_infomax_pairs(&views, false, &mut pair_rng).unwrap();
            (owned, pairs)
        };

        let mut w_t = Tensor::zeros(&[d, d]);
        let mut adam = AdamState::new(&[d, d], 0.01);
        let mut final_loss = f64::INFINITY;
        let mut final_acc = 0.0;
        for _ in 0..500 {
            let tape = Tape::new();
            let (_owned, pairs) = build_pairs(&tape, &mut r.clone());
            let w = tape.leaf(w_t.clone());
            let loss = discriminator_loss(&pairs, &w).unwrap();
            loss.backward().unwrap();
            final_loss = loss.item();
            final_acc = discriminator_accuracy(&pairs, &w).unwrap();
            adam.step(&mut w_t, &w.grad());
        }
        assert!(final_loss < 0.2, "loss {final_loss}");
        assert!(final_acc > 0.9, "accuracy {final_acc}");
    }
}
