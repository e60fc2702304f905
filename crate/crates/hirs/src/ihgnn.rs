//! Interaction-based hypergraph modeling.
//!
//! Hyperedge j is modeled as `h_j = f_E(sum_i gates_ij * V_i)` — the
//! gate-weighted relaxation of summing over linked nodes, exact whenever
//! gates are binary. Node patches are gate-weighted means of the incident
//! edge representations, the graph representation is the element-wise mean
//! over node patches, and a linear readout maps it to the prediction logit.
//!
//! The second half of the module instantiates fixed binary incidences whose
//! forward collapses to classical factorization models; direct closed-form
//! scorers for those models live alongside as independent oracles.

use rand_chacha::ChaCha8Rng;

use crate::data::DataSample;
use crate::edgegen::{GateMatrix, PATCH_EPS};
use crate::error::NumericsError;
use crate::model::{BoundMlp, MlpParams};
use crate::numerics::{randn, Tape, Tensor, Var};

/// Per-sample hyperedge representations `[k,d]`, node patches `[m,d]`, and
/// the graph representation `[d]` (mean of patch rows).
pub struct EdgeReprSet {
    pub h: Var,
    pub node_patch: Var,
    pub c: Var,
}

/// Readout of one sample: representations plus logit and probability.
pub struct SampleReadout {
    pub reprs: EdgeReprSet,
    pub logit: Var,
    pub prob: Var,
}

/// `h_j = f_E(sum_i gates_ij * V^g_i)` for all k edges at once via
/// `gates^T @ V`. An all-zero column yields `f_E(0)`, a parameter-dependent
/// constant. `nonlinear: false` is the linear-modeling ablation.
pub fn edge_representations(
    sample: &DataSample,
    gates: &GateMatrix,
    emb_g: &Var,
    f_edge: &BoundMlp,
    nonlinear: bool,
) -> Result<Var, NumericsError> {
    let ids = sample.feature_ids();
    let tape = emb_g.tape_handle();
    let values = tape.leaf(Tensor::vector(sample.feature_values()));
    let v_g = emb_g.gather_rows(&ids)?.scale_rows(&values)?;
    let pooled = gates.node.transpose()?.matmul(&v_g)?; // [k,d]
    f_edge.forward(&pooled, nonlinear)
}

/// Node patching, graph pooling and the linear readout. The patch for node
/// i is `(sum_j gates_ij h_j) / (sum_j gates_ij + eps)`; an isolated node
/// (all-zero gate row) patches to the zero vector through the eps guard.
pub fn graph_readout(
    gates: &GateMatrix,
    h: &Var,
    readout_w: &Var,
    readout_b: &Var,
) -> Result<SampleReadout, NumericsError> {
    let weighted = gates.node.matmul(h)?; // [m,d]
    let degree = gates.node.sum_axis(1)?; // [m]
    let inv = degree.add_scalar(PATCH_EPS).recip();
    let node_patch = weighted.scale_rows(&inv)?;
    let c = node_patch.mean_axis(0)?; // [d]
    let logit = c.dot(readout_w)?.add(readout_b)?;
    let prob = logit.sigmoid();
    Ok(SampleReadout {
        reprs: EdgeReprSet {
            h: h.clone(),
            node_patch,
            c,
        },
        logit,
        prob,
    })
}

// ── fixed incidences (classical model reductions) ────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedEdgeModel {
    /// Degree-2 columns score `<v_a, v_b>`; degree-1 self-loops score a
    /// per-feature linear weight. Columns of any other degree are invalid.
    DotProduct,
    /// Element-wise product of member vectors (vector output).
    ElemProduct,
    /// MLP over the sum of member vectors (vector output).
    Mlp,
    /// Degree 1-2 like `DotProduct`, higher degrees through a scalar MLP.
    DegreeDispatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedReadout {
    /// Sum of scalar edge outputs.
    Sum,
    /// Linear map over the mean of vector edge outputs.
    Linear,
    /// Scalar MLP over the sum of vector edge outputs.
    Mlp,
}

#[derive(Debug, Clone)]
pub struct FixedIncidence {
    /// Binary m-by-k0 membership matrix.
    pub incidence: Tensor,
    pub edge_model: FixedEdgeModel,
    pub readout: FixedReadout,
}

impl FixedIncidence {
    pub fn columns(&self) -> usize {
        self.incidence.cols()
    }

    pub fn column_members(&self, j: usize) -> Vec<usize> {
        (0..self.incidence.rows())
            .filter(|&i| self.incidence.at(i, j) != 0.0)
            .collect()
    }

    /// Same text export format as a gate matrix.
    pub fn to_text(&self) -> String {
        GateMatrix::fixed(&Tape::new(), self.incidence.clone()).to_text()
    }
}

fn pairwise_incidence(m: usize, self_loops: bool) -> Tensor {
    let pairs = m * (m - 1) / 2;
    let k0 = pairs + if self_loops { m } else { 0 };
    let mut inc = Tensor::zeros(&[m, k0.max(1)]);
    let mut col = 0;
    for i in 0..m {
        for j in i + 1..m {
            inc.set(i, col, 1.0);
            inc.set(j, col, 1.0);
            col += 1;
        }
    }
    if self_loops {
        for i in 0..m {
            inc.set(i, col, 1.0);
            col += 1;
        }
    }
    inc
}

/// All `C(m,2)` unordered pairs plus m self-loops; dot-product edges, sum
/// readout. The self-loops carry the point-wise linear terms.
pub fn build_fm_incidence(m: usize) -> FixedIncidence {
    assert!(m >= 1);
    FixedIncidence {
        incidence: pairwise_incidence(m, true),
        edge_model: FixedEdgeModel::DotProduct,
        readout: FixedReadout::Sum,
    }
}

/// Pairs only; element-wise-product edges pooled by sum into a scalar MLP.
pub fn build_nfm_incidence(m: usize) -> FixedIncidence {
    assert!(m >= 2);
    FixedIncidence {
        incidence: pairwise_incidence(m, false),
        edge_model: FixedEdgeModel::ElemProduct,
        readout: FixedReadout::Mlp,
    }
}

/// The FM incidence plus one all-ones column; the full column is modeled by
/// a scalar MLP while pair/self-loop columns keep the FM modeling.
pub fn build_deepfm_incidence(m: usize) -> FixedIncidence {
    assert!(m >= 1);
    let fm = pairwise_incidence(m, true);
    let k0 = fm.cols() + 1;
    let mut inc = Tensor::zeros(&[m, k0]);
    for i in 0..m {
        for j in 0..fm.cols() {
            inc.set(i, j, fm.at(i, j));
        }
        inc.set(i, k0 - 1, 1.0);
    }
    FixedIncidence {
        incidence: inc,
        edge_model: FixedEdgeModel::DegreeDispatch,
        readout: FixedReadout::Sum,
    }
}

/// All pairs without self-loops, MLP edge model, linear readout — the
/// graph-network reduction exercised in tests.
pub fn build_pairwise_mlp_incidence(m: usize) -> FixedIncidence {
    assert!(m >= 2);
    FixedIncidence {
        incidence: pairwise_incidence(m, false),
        edge_model: FixedEdgeModel::Mlp,
        readout: FixedReadout::Linear,
    }
}

/// Parameters for the fixed-incidence forward paths.
#[derive(Debug, Clone)]
pub struct FixedModelParams {
    /// Shared `[v,d]` embedding table.
    pub emb: Tensor,
    /// `[v,1]` per-feature linear weights (self-loop terms).
    pub bias: Tensor,
    /// Vector-output MLP `d -> hidden -> d` for MLP edge modeling.
    pub mlp_vec: MlpParams,
    /// Scalar-output MLP `d -> hidden -> 1` for full-edge and MLP readout.
    pub mlp_scalar: MlpParams,
    /// Linear readout over pooled vector edges.
    pub linear_w: Tensor,
    pub linear_b: Tensor,
}

impl FixedModelParams {
    pub fn init(vocab_size: usize, d: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        FixedModelParams {
            emb: randn(&[vocab_size, d], 0.5, rng),
            bias: randn(&[vocab_size, 1], 0.5, rng),
            mlp_vec: mlp_init(d, hidden, d, rng),
            mlp_scalar: mlp_init(d, hidden, 1, rng),
            linear_w: randn(&[d], 0.5, rng),
            linear_b: randn(&[], 0.5, rng),
        }
    }

    pub fn zero_embeddings(mut self) -> Self {
        self.emb = Tensor::zeros(self.emb.shape());
        self
    }
}

fn mlp_init(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> MlpParams {
    MlpParams {
        w1: randn(&[input, hidden], (2.0 / input as f64).sqrt(), rng),
        b1: randn(&[hidden], 0.1, rng),
        w2: randn(&[hidden, output], (1.0 / hidden as f64).sqrt(), rng),
        b2: randn(&[output], 0.1, rng),
    }
}

pub struct BoundFixedModel {
    pub emb: Var,
    pub bias: Var,
    pub mlp_vec: BoundMlp,
    pub mlp_scalar: BoundMlp,
    pub linear_w: Var,
    pub linear_b: Var,
}

impl BoundFixedModel {
    pub fn bind(tape: &Tape, p: &FixedModelParams) -> Self {
        BoundFixedModel {
            emb: tape.leaf(p.emb.clone()),
            bias: tape.leaf(p.bias.clone()),
            mlp_vec: BoundMlp::bind(tape, &p.mlp_vec),
            mlp_scalar: BoundMlp::bind(tape, &p.mlp_scalar),
            linear_w: tape.leaf(p.linear_w.clone()),
            linear_b: tape.leaf(p.linear_b.clone()),
        }
    }
}

enum EdgeOut {
    Scalar(Var),
    Vector(Var),
}

/// Forward pass over a fixed binary incidence. Edge outputs are scalars or
/// vectors depending on the edge model; the readout kind must match.
pub fn fixed_forward(
    sample: &DataSample,
    inc: &FixedIncidence,
    model: &BoundFixedModel,
) -> Result<Var, NumericsError> {
    let tape = model.emb.tape_handle();
    let ids = sample.feature_ids();
    let values = tape.leaf(Tensor::vector(sample.feature_values()));
    let v = model.emb.gather_rows(&ids)?.scale_rows(&values)?; // [m,d]

    let scalar_edge = |members: &[usize]| -> Result<Var, NumericsError> {
        match members.len() {
            1 => {
                let i = members[0];
                let w = sample.features[i].1;
                Ok(model
                    .bias
                    .gather_rows(&[ids[i]])?
                    .sum_all()
                    .scale(w))
            }
            2 => v.row(members[0])?.dot(&v.row(members[1])?),
            deg => Err(NumericsError::BadShape {
                op: "fixed_forward",
                expected: "dot-product columns of degree 1 or 2",
                got: vec![deg],
            }),
        }
    };

    let member_sum = |members: &[usize]| -> Result<Var, NumericsError> {
        let rows: Vec<Var> = members
            .iter()
            .map(|&i| v.row(i))
            .collect::<Result<_, _>>()?;
        Var::stack_rows(&tape, &rows)?.sum_axis(0)
    };

    let mut outputs = Vec::with_capacity(inc.columns());
    for j in 0..inc.columns() {
        let members = inc.column_members(j);
        let out = match inc.edge_model {
            FixedEdgeModel::DotProduct => EdgeOut::Scalar(scalar_edge(&members)?),
            FixedEdgeModel::DegreeDispatch => {
                if members.len() <= 2 {
                    EdgeOut::Scalar(scalar_edge(&members)?)
                } else {
                    let pooled = Var::stack_rows(&tape, &[member_sum(&members)?])?;
                    EdgeOut::Scalar(model.mlp_scalar.forward(&pooled, true)?.sum_all())
                }
            }
            FixedEdgeModel::ElemProduct => {
                let mut acc = v.row(members[0])?;
                for &i in &members[1..] {
                    acc = acc.mul(&v.row(i)?)?;
                }
                EdgeOut::Vector(acc)
            }
            FixedEdgeModel::Mlp => {
                let pooled = Var::stack_rows(&tape, &[member_sum(&members)?])?;
                EdgeOut::Vector(model.mlp_vec.forward(&pooled, true)?.row(0)?)
            }
        };
        outputs.push(out);
    }

    match inc.readout {
        FixedReadout::Sum => {
            let scalars: Vec<Var> = outputs
                .into_iter()
                .map(|o| match o {
                    EdgeOut::Scalar(s) => Ok(s),
                    EdgeOut::Vector(_) => Err(NumericsError::BadShape {
                        op: "fixed_forward",
                        expected: "scalar edge outputs for sum readout",
                        got: vec![],
                    }),
                })
                .collect::<Result<_, _>>()?;
            Ok(Var::stack_scalars(&tape, &scalars)?.sum_all())
        }
        FixedReadout::Linear | FixedReadout::Mlp => {
            let vectors: Vec<Var> = outputs
                .into_iter()
                .map(|o| match o {
                    EdgeOut::Vector(h) => Ok(h),
                    EdgeOut::Scalar(_) => Err(NumericsError::BadShape {
                        op: "fixed_forward",
                        expected: "vector edge outputs for linear/mlp readout",
                        got: vec![],
                    }),
                })
                .collect::<Result<_, _>>()?;
            let stacked = Var::stack_rows(&tape, &vectors)?;
            if inc.readout == FixedReadout::Linear {
                stacked
                    .mean_axis(0)?
                    .dot(&model.linear_w)?
                    .add(&model.linear_b)
            } else {
                let pooled = Var::stack_rows(&tape, &[stacked.sum_axis(0)?])?;
                Ok(model.mlp_scalar.forward(&pooled, true)?.sum_all())
            }
        }
    }
}

// ── direct closed-form oracles ────────────────────────────────────────

/// Plain-math factorization-machine score over value-scaled embeddings:
/// `sum_{i<j} <v_i, v_j> + sum_i b_i * w_i`. Independent of the tape path.
pub fn direct_fm_score(sample: &DataSample, params: &FixedModelParams) -> f64 {
    let d = params.emb.cols();
    let vs: Vec<Vec<f64>> = sample
        .features
        .iter()
        .map(|&(id, w)| {
            params.emb.row_slice(id as usize)
                .iter()
                .map(|e| e * w)
                .collect()
        })
        .collect();
    let m = vs.len();
    let mut score = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            score += (0..d).map(|t| vs[i][t] * vs[j][t]).sum::<f64>();
        }
    }
    for &(id, w) in &sample.features {
        score += params.bias.at(id as usize, 0) * w;
    }
    score
}

/// Plain-math bi-interaction pooling followed by the scalar MLP:
/// `mlp(sum_{i<j} v_i ⊙ v_j)`.
pub fn direct_nfm_score(sample: &DataSample, params: &FixedModelParams) -> f64 {
    let d = params.emb.cols();
    let vs: Vec<Vec<f64>> = sample
        .features
        .iter()
        .map(|&(id, w)| {
            params.emb.row_slice(id as usize)
                .iter()
                .map(|e| e * w)
                .collect()
        })
        .collect();
    let m = vs.len();
    let mut pooled = vec![0.0; d];
    for i in 0..m {
        for j in i + 1..m {
            for t in 0..d {
                pooled[t] += vs[i][t] * vs[j][t];
            }
        }
    }
    direct_mlp_scalar(&pooled, &params.mlp_scalar)
}

fn direct_mlp_scalar(x: &[f64], mlp: &MlpParams) -> f64 {
    let hidden = mlp.b1.numel();
    let mut h = vec![0.0; hidden];
    for (j, hv) in h.iter_mut().enumerate() {
        let mut acc = mlp.b1.data()[j];
        for (i, &xv) in x.iter().enumerate() {
            acc += xv * mlp.w1.at(i, j);
        }
        *hv = acc.max(0.0);
    }
    let mut out = mlp.b2.data()[0];
    for (j, &hv) in h.iter().enumerate() {
        out += hv * mlp.w2.at(j, 0);
    }
    out
}

/// Compute both routes for one sample: the fixed-incidence forward and the
/// direct formula. Equality within 1e-9 is the reduction contract.
pub fn fm_oracle_equivalence(
    sample: &DataSample,
    params: &FixedModelParams,
) -> Result<(f64, f64), NumericsError> {
    let tape = Tape::new();
    let bound = BoundFixedModel::bind(&tape, params);
    let inc = build_fm_incidence(sample.m());
    let score = fixed_forward(sample, &inc, &bound)?.item();
    Ok((score, direct_fm_score(sample, params)))
}

pub fn nfm_oracle_equivalence(
    sample: &DataSample,
    params: &FixedModelParams,
) -> Result<(f64, f64), NumericsError> {
    let tape = Tape::new();
    let bound = BoundFixedModel::bind(&tape, params);
    let inc = build_nfm_incidence(sample.m());
    let score = fixed_forward(sample, &inc, &bound)?.item();
    Ok((score, direct_nfm_score(sample, params)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edgegen::{eval_gates, HardConcreteConfig};
    use crate::model::{ModelConfig, ModelState};
    use crate::numerics::Phase;
    use rand::Rng;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn sample_with(ids: &[u32], values: &[f64]) -> DataSample {
        DataSample {
            user_id: 0,
            item_id: 0,
            features: ids.iter().copied().zip(values.iter().copied()).collect(),
            label: 1,
        }
    }

    fn unit_sample(ids: &[u32]) -> DataSample {
        sample_with(ids, &vec![1.0; ids.len()])
    }

    #[test]
    fn empty_column_yields_parameter_constant() {
        let mut r = rng(1);
        let state = ModelState::init(&ModelConfig::new(6, 4, 3), &mut r);
        let tape = Tape::new();
        let bound = state.bind(&tape);
        let gates = GateMatrix::fixed(&tape, Tensor::zeros(&[2, 3]));
        let h = edge_representations(
            &unit_sample(&[0, 1]),
            &gates,
            &bound.emb_g,
            &bound.f_edge,
            true,
        )
        .unwrap();
        // f_E(0) for every column
        let expect = {
            let zero = Var::stack_rows(&tape, &[tape.leaf(Tensor::zeros(&[4]))]).unwrap();
            bound.f_edge.forward(&zero, true).unwrap().value()
        };
        let hv = h.value();
        for j in 0..3 {
            for t in 0..4 {
                assert!((hv.at(j, t) - expect.at(0, t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn binary_gates_reduce_to_member_sums() {
        let mut r = rng(2);
        let state = ModelState::init(&ModelConfig::new(6, 4, 2), &mut r);
        let tape = Tape::new();
        let bound = state.bind(&tape);
        let mut inc = Tensor::zeros(&[3, 2]);
        inc.set(0, 0, 1.0);
        inc.set(2, 0, 1.0);
        inc.set(1, 1, 1.0);
        let s = sample_with(&[0, 1, 2], &[1.0, 2.0, -1.0]);
        let gates = GateMatrix::fixed(&tape, inc);
        let h = edge_representations(&s, &gates, &bound.emb_g, &bound.f_edge, true).unwrap();

        // oracle: explicit sums of value-scaled embedding rows
        let row = |id: usize, w: f64| -> Vec<f64> {
            state.emb_g.row_slice(id).iter().map(|v| v * w).collect()
        };
        let e0: Vec<f64> = row(0, 1.0)
            .iter()
            .zip(row(2, -1.0))
            .map(|(a, b)| a + b)
            .collect();
        let e1 = row(1, 2.0);
        for (j, input) in [e0, e1].into_iter().enumerate() {
            let expect = {
                let x = Var::stack_rows(&tape, &[tape.leaf(Tensor::vector(input))]).unwrap();
                bound.f_edge.forward(&x, true).unwrap().value()
            };
            for t in 0..4 {
                assert!((h.value().at(j, t) - expect.at(0, t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outputs_invariant_under_node_permutation() {
        let mut r = rng(3);
        let state = ModelState::init(&ModelConfig::new(8, 4, 3), &mut r);
        let ids: [u32; 4] = [1, 3, 5, 7];
        let perm: [u32; 4] = [5, 1, 7, 3];
        let row_map = [1usize, 3, 0, 2]; // position of ids[i] inside perm

        let forward = |order: &[u32], inc: Tensor| -> (Tensor, Tensor) {
            let tape = Tape::new();
            let bound = state.bind(&tape);
            let gates = GateMatrix::fixed(&tape, inc);
            let h = edge_representations(
                &unit_sample(order),
                &gates,
                &bound.emb_g,
                &bound.f_edge,
                true,
            )
            .unwrap();
            let out = graph_readout(&gates, &h, &bound.readout_w, &bound.readout_b).unwrap();
            (h.value(), out.reprs.c.value())
        };

        let mut inc = Tensor::zeros(&[4, 3]);
        inc.set(0, 0, 1.0);
        inc.set(1, 0, 1.0);
        inc.set(2, 1, 1.0);
        inc.set(3, 1, 1.0);
        inc.set(1, 2, 1.0);
        let mut inc_perm = Tensor::zeros(&[4, 3]);
        for i in 0..4 {
            for j in 0..3 {
                inc_perm.set(row_map[i], j, inc.at(i, j));
            }
        }

        let (h_a, c_a) = forward(&ids, inc);
        let (h_b, c_b) = forward(&perm, inc_perm);
        for (a, b) in h_a.data().iter().zip(h_b.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in c_a.data().iter().zip(c_b.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_node_patches_to_zero() {
        let mut r = rng(4);
        let state = ModelState::init(&ModelConfig::new(6, 4, 2), &mut r);
        let tape = Tape::new();
        let bound = state.bind(&tape);
        let mut inc = Tensor::zeros(&[2, 2]);
        inc.set(0, 0, 1.0);
        inc.set(0, 1, 1.0);
        let gates = GateMatrix::fixed(&tape, inc);
        let h = edge_representations(&unit_sample(&[0, 1]), &gates, &bound.emb_g, &bound.f_edge, true)
            .unwrap();
        let out = graph_readout(&gates, &h, &bound.readout_w, &bound.readout_b).unwrap();
        let patch = out.reprs.node_patch.value();
        for t in 0..4 {
            assert_eq!(patch.at(1, t), 0.0);
        }
    }

    #[test]
    fn single_full_edge_collapses_to_its_representation() {
        let mut r = rng(5);
        let state = ModelState::init(&ModelConfig::new(6, 4, 1), &mut r);
        let tape = Tape::new();
        let bound = state.bind(&tape);
        let gates = GateMatrix::fixed(&tape, Tensor::full(&[3, 1], 1.0));
        let s = unit_sample(&[0, 1, 2]);
        let h = edge_representations(&s, &gates, &bound.emb_g, &bound.f_edge, true).unwrap();
        let out = graph_readout(&gates, &h, &bound.readout_w, &bound.readout_b).unwrap();
        let hv = h.value();
        let patch = out.reprs.node_patch.value();
        let c = out.reprs.c.value();
        // eps shifts the patch by denom/(denom+eps); 1e-8 on degree 1
        for i in 0..3 {
            for t in 0..4 {
                assert!((patch.at(i, t) - hv.at(0, t)).abs() < 1e-6);
            }
        }
        for t in 0..4 {
            assert!((c.data()[t] - hv.at(0, t)).abs() < 1e-6);
        }
        let p = out.prob.item();
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn whole_gated_forward_passes_gradcheck() {
        use crate::numerics::{gradcheck, Eval};
        let mc = ModelConfig {
            vocab_size: 5,
            d: 3,
            k: 2,
            hidden: 4,
        };
        let mut r = rng(6);
        let state = ModelState::init(&mc, &mut r);
        let hc = HardConcreteConfig::default();
        let s = unit_sample(&[0, 2, 4]);
        let noise = crate::edgegen::draw_gate_noise(3, 2, &mut r);

        let mut params: Vec<(String, Tensor)> = state
            .named_params()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        let report = gradcheck(
            &mut params,
            |p, _| {
                let tape = Tape::new();
                tape.trace_branches();
                let mut st = state.clone();
                st.load_from(p.iter().map(|(_, t)| t.clone()).collect()).unwrap();
                let bound = st.bind(&tape);
                let la = crate::edgegen::node_context_logalpha(&s, &bound.emb_e, &bound.mlp_gen)?;
                let gates = GateMatrix {
                    node: crate::edgegen::hard_concrete_transform(&la, &noise, &hc)?,
                    phase: Phase::Train,
                };
                let h = edge_representations(&s, &gates, &bound.emb_g, &bound.f_edge, true)?;
                let out = graph_readout(&gates, &h, &bound.readout_w, &bound.readout_b)?;
                let loss = out
                    .logit
                    .bce_with_logits(&Tensor::scalar(1.0))?
                    .sum_all();
                loss.backward()?;
                Ok(Eval {
                    loss: loss.item(),
                    grads: Some(bound.grads()),
                    branches: tape.take_branch_trace(),
                })
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{}", report.summary());
    }

    #[test]
    fn fm_incidence_has_pairs_plus_self_loops() {
        let inc = build_fm_incidence(3);
        assert_eq!(inc.columns(), 6); // C(3,2) + 3, by enumeration
        for j in 0..3 {
            assert_eq!(inc.column_members(j).len(), 2);
        }
        for j in 3..6 {
            assert_eq!(inc.column_members(j).len(), 1);
        }
        let single = build_fm_incidence(1);
        assert_eq!(single.columns(), 1);
        assert_eq!(single.column_members(0).len(), 1);
    }

    #[test]
    fn deepfm_incidence_adds_one_full_column() {
        let inc = build_deepfm_incidence(3);
        assert_eq!(inc.columns(), 7); // 6 FM columns + 1 full
        let full = inc.column_members(6);
        assert_eq!(full.len(), 3);
        assert_eq!(inc.edge_model, FixedEdgeModel::DegreeDispatch);
    }

    #[test]
    fn deepfm_dispatch_applies_mlp_only_to_full_column() {
        let mut r = rng(7);
        let params = FixedModelParams::init(8, 4, 6, &mut r);
        let s = unit_sample(&[0, 2, 5]);

        let score = |inc: FixedIncidence| {
            let tape = Tape::new();
            let bound = BoundFixedModel::bind(&tape, &params);
            fixed_forward(&s, &inc, &bound).unwrap().item()
        };
        let fm = score(build_fm_incidence(3));
        let deepfm = score(build_deepfm_incidence(3));

        // the difference must be exactly the scalar MLP on the summed nodes
        let pooled: Vec<f64> = (0..4)
            .map(|t| {
                s.features
                    .iter()
                    .map(|&(id, w)| params.emb.at(id as usize, t) * w)
                    .sum()
            })
            .collect();
        let deep_part = super::direct_mlp_scalar(&pooled, &params.mlp_scalar);
        assert!((deepfm - fm - deep_part).abs() < 1e-9);
    }

    #[test]
    fn fm_mode_matches_direct_formula() {
        let mut r = rng(8);
        for trial in 0..50 {
            let m = 2 + (trial % 7);
            let ids: Vec<u32> = {
                let mut pool: Vec<u32> = (0..12).collect();
                rand::seq::SliceRandom::shuffle(&mut pool[..], &mut r);
                pool.into_iter().take(m).collect()
            };
            let values: Vec<f64> = (0..m).map(|_| r.gen_range(-2.0..2.0)).collect();
            let s = sample_with(&ids, &values);
            let params = FixedModelParams::init(12, 8, 6, &mut r);
            let (ihgnn, direct) = fm_oracle_equivalence(&s, &params).unwrap();
            assert!(
                (ihgnn - direct).abs() < 1e-9,
                "trial {trial}: {ihgnn} vs {direct}"
            );
        }
    }

    #[test]
    fn nfm_mode_matches_direct_formula() {
        let mut r = rng(9);
        for trial in 0..50 {
            let m = 2 + (trial % 6);
            let ids: Vec<u32> = (0..m as u32).collect();
            let values: Vec<f64> = (0..m).map(|_| r.gen_range(-1.5..1.5)).collect();
            let s = sample_with(&ids, &values);
            let params = FixedModelParams::init(8, 6, 5, &mut r);
            let (ihgnn, direct) = nfm_oracle_equivalence(&s, &params).unwrap();
            assert!(
                (ihgnn - direct).abs() < 1e-9,
                "trial {trial}: {ihgnn} vs {direct}"
            );
        }
    }

    #[test]
    fn zero_embeddings_collapse_fm_to_bias_terms() {
        let mut r = rng(10);
        let params = FixedModelParams::init(6, 4, 5, &mut r).zero_embeddings();
        let s = unit_sample(&[0, 3, 5]);
        let (ihgnn, direct) = fm_oracle_equivalence(&s, &params).unwrap();
        let bias_only: f64 = [0usize, 3, 5].iter().map(|&i| params.bias.at(i, 0)).sum();
        assert!((ihgnn - bias_only).abs() < 1e-12);
        assert!((direct - bias_only).abs() < 1e-12);
    }

    #[test]
    fn dot_product_rejects_degree_three_columns() {
        let mut r = rng(11);
        let params = FixedModelParams::init(6, 4, 5, &mut r);
        let tape = Tape::new();
        let bound = BoundFixedModel::bind(&tape, &params);
        let inc = FixedIncidence {
            incidence: Tensor::full(&[3, 1], 1.0),
            edge_model: FixedEdgeModel::DotProduct,
            readout: FixedReadout::Sum,
        };
        assert!(fixed_forward(&unit_sample(&[0, 1, 2]), &inc, &bound).is_err());
    }

    #[test]
    fn eval_gate_pipeline_stays_deterministic() {
        let mut r = rng(12);
        let state = ModelState::init(&ModelConfig::new(6, 4, 3), &mut r);
        let s = unit_sample(&[1, 4]);
        let run = || {
            let tape = Tape::new();
            let bound = state.bind(&tape);
            let la =
                crate::edgegen::node_context_logalpha(&s, &bound.emb_e, &bound.mlp_gen).unwrap();
            let gates = eval_gates(&la, &HardConcreteConfig::default()).unwrap();
            let h = edge_representations(&s, &gates, &bound.emb_g, &bound.f_edge, true).unwrap();
            graph_readout(&gates, &h, &bound.readout_w, &bound.readout_b)
                .unwrap()
                .logit
                .item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
