//! Dynamic reverse-mode differentiation tape.
//!
//! A [`Tape`] records one forward pass as an append-only arena of nodes.
//! Each node stores its value, a zero-initialized gradient slot, and a list
//! of `(parent index, local-gradient closure)` pairs. Because nodes are
//! appended in evaluation order, a parent always precedes its children, so
//! [`backward`](Var::backward) is a single reverse sweep.
//!
//! Tapes are rebuilt per forward pass: gate-dependent aggregation changes
//! the graph shape per sample, so a static graph buys nothing here. A tape
//! is confined to one worker; independent tapes may run in parallel.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::NumericsError;
use crate::numerics::tensor::Tensor;

/// Forward-pass phase. Dropout and gate sampling behave differently in
/// `Train` (stochastic) and `Eval` (deterministic) mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

type GradFn = Box<dyn Fn(&Tensor) -> Tensor>;

struct Node {
    value: Tensor,
    grad: Tensor,
    parents: Vec<(usize, GradFn)>,
}

struct TapeInner {
    nodes: Vec<Node>,
    // When present, relu/clamp record branch decisions here so a finite
    // difference probe can detect kink crossings.
    branch_trace: Option<Vec<u8>>,
}

/// An append-only record of one differentiable computation.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                branch_trace: None,
            })),
        }
    }

    /// Start recording relu/clamp branch decisions (used by gradcheck to
    /// reject finite-difference probes that cross a nondifferentiable point).
    pub fn trace_branches(&self) {
        self.inner.borrow_mut().branch_trace = Some(Vec::new());
    }

    pub fn take_branch_trace(&self) -> Vec<u8> {
        self.inner
            .borrow_mut()
            .branch_trace
            .take()
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, parents: Vec<(usize, GradFn)>) -> Var {
        let grad = Tensor::zeros(value.shape());
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            grad,
            parents,
        });
        Var {
            tape: Rc::clone(&self.inner),
            idx,
        }
    }

    fn record_branches(&self, bytes: impl IntoIterator<Item = u8>) {
        if let Some(trace) = self.inner.borrow_mut().branch_trace.as_mut() {
            trace.extend(bytes);
        }
    }

    /// Insert a leaf node. Leaves accumulate gradients like any other node;
    /// whether anyone reads them back is the caller's business.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Vec::new())
    }

    /// Leaf from a scalar constant.
    pub fn scalar(&self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }
}

/// A handle to one tape node.
#[derive(Clone)]
pub struct Var {
    tape: Rc<RefCell<TapeInner>>,
    idx: usize,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("idx", &self.idx)
            .field("shape", &self.shape())
            .finish()
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl Var {
    fn tape(&self) -> Tape {
        Tape {
            inner: Rc::clone(&self.tape),
        }
    }

    /// The tape this var lives on.
    pub fn tape_handle(&self) -> Tape {
        self.tape()
    }

    pub fn value(&self) -> Tensor {
        self.tape.borrow().nodes[self.idx].value.clone()
    }

    pub fn grad(&self) -> Tensor {
        self.tape.borrow().nodes[self.idx].grad.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.borrow().nodes[self.idx].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.tape.borrow().nodes[self.idx].value.item()
    }

    fn with_values<R>(&self, other: &Var, f: impl FnOnce(&Tensor, &Tensor) -> R) -> R {
        let inner = self.tape.borrow();
        f(
            &inner.nodes[self.idx].value,
            &inner.nodes[other.idx].value,
        )
    }

    fn push1(&self, value: Tensor, grad_fn: GradFn) -> Var {
        self.tape().push(value, vec![(self.idx, grad_fn)])
    }

    // ── element-wise binary ──────────────────────────────────────────

    pub fn add(&self, other: &Var) -> Result<Var, NumericsError> {
        let value = self.with_values(other, |a, b| {
            if a.shape() != b.shape() {
                return Err(shape_err("add", a.shape(), b.shape()));
            }
            let mut out = a.clone();
            out.add_assign(b);
            Ok(out)
        })?;
        Ok(self.tape().push(
            value,
            vec![
                (self.idx, Box::new(|g: &Tensor| g.clone())),
                (other.idx, Box::new(|g: &Tensor| g.clone())),
            ],
        ))
    }

    pub fn sub(&self, other: &Var) -> Result<Var, NumericsError> {
        let value = self.with_values(other, |a, b| {
            if a.shape() != b.shape() {
                return Err(shape_err("sub", a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
            Ok(Tensor::from_vec_unchecked(a.shape().to_vec(), data))
        })?;
        Ok(self.tape().push(
            value,
            vec![
                (self.idx, Box::new(|g: &Tensor| g.clone())),
                (other.idx, Box::new(|g: &Tensor| g.map(|v| -v))),
            ],
        ))
    }

    pub fn mul(&self, other: &Var) -> Result<Var, NumericsError> {
        let (value, a_val, b_val) = self.with_values(other, |a, b| {
            if a.shape() != b.shape() {
                return Err(shape_err("mul", a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            Ok((
                Tensor::from_vec_unchecked(a.shape().to_vec(), data),
                a.clone(),
                b.clone(),
            ))
        })?;
        Ok(self.tape().push(
            value,
            vec![
                (
                    self.idx,
                    Box::new(move |g: &Tensor| {
                        let data = g.data().iter().zip(b_val.data()).map(|(x, y)| x * y).collect();
                        Tensor::from_vec_unchecked(g.shape().to_vec(), data)
                    }),
                ),
                (
                    other.idx,
                    Box::new(move |g: &Tensor| {
                        let data = g.data().iter().zip(a_val.data()).map(|(x, y)| x * y).collect();
                        Tensor::from_vec_unchecked(g.shape().to_vec(), data)
                    }),
                ),
            ],
        ))
    }

    // ── scalar-constant variants ─────────────────────────────────────

    pub fn scale(&self, c: f64) -> Var {
        let value = self.value().map(|v| v * c);
        self.push1(value, Box::new(move |g: &Tensor| g.map(|v| v * c)))
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        let value = self.value().map(|v| v + c);
        self.push1(value, Box::new(|g: &Tensor| g.clone()))
    }

    // ── matrix ops ───────────────────────────────────────────────────

    pub fn matmul(&self, other: &Var) -> Result<Var, NumericsError> {
        let (value, a_val, b_val) = self.with_values(other, |a, b| {
            if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
                return Err(shape_err("matmul", a.shape(), b.shape()));
            }
            Ok((matmul_nn(a, b), a.clone(), b.clone()))
        })?;
        let b_for_a = b_val.clone();
        let a_for_b = a_val;
        Ok(self.tape().push(
            value,
            vec![
                // dA = G @ B^T
                (self.idx, Box::new(move |g: &Tensor| matmul_nt(g, &b_for_a))),
                // dB = A^T @ G
                (other.idx, Box::new(move |g: &Tensor| matmul_tn(&a_for_b, g))),
            ],
        ))
    }

    pub fn transpose(&self) -> Result<Var, NumericsError> {
        let value = {
            let inner = self.tape.borrow();
            let a = &inner.nodes[self.idx].value;
            if a.shape().len() != 2 {
                return Err(NumericsError::BadShape {
                    op: "transpose",
                    expected: "rank-2 tensor",
                    got: a.shape().to_vec(),
                });
            }
            transpose(a)
        };
        Ok(self.push1(value, Box::new(|g: &Tensor| transpose(g))))
    }

    /// Concatenate two matrices along columns: `[m,p] ++ [m,q] -> [m,p+q]`.
    pub fn concat_cols(&self, other: &Var) -> Result<Var, NumericsError> {
        let (value, p, q) = self.with_values(other, |a, b| {
            if a.shape().len() != 2 || b.shape().len() != 2 || a.rows() != b.rows() {
                return Err(shape_err("concat_cols", a.shape(), b.shape()));
            }
            let (m, p, q) = (a.rows(), a.cols(), b.cols());
            let mut data = Vec::with_capacity(m * (p + q));
            for r in 0..m {
                data.extend_from_slice(a.row_slice(r));
                data.extend_from_slice(b.row_slice(r));
            }
            Ok((Tensor::matrix(m, p + q, data), p, q))
        })?;
        Ok(self.tape().push(
            value,
            vec![
                (
                    self.idx,
                    Box::new(move |g: &Tensor| {
                        let m = g.rows();
                        let mut data = Vec::with_capacity(m * p);
                        for r in 0..m {
                            data.extend_from_slice(&g.row_slice(r)[..p]);
                        }
                        Tensor::matrix(m, p, data)
                    }),
                ),
                (
                    other.idx,
                    Box::new(move |g: &Tensor| {
                        let m = g.rows();
                        let mut data = Vec::with_capacity(m * q);
                        for r in 0..m {
                            data.extend_from_slice(&g.row_slice(r)[p..]);
                        }
                        Tensor::matrix(m, q, data)
                    }),
                ),
            ],
        ))
    }

    /// Extract row `i` of a matrix as a vector.
    pub fn row(&self, i: usize) -> Result<Var, NumericsError> {
        let (value, rows, cols) = {
            let inner = self.tape.borrow();
            let a = &inner.nodes[self.idx].value;
            if a.shape().len() != 2 || i >= a.rows() {
                return Err(NumericsError::BadShape {
                    op: "row",
                    expected: "rank-2 tensor with i < rows",
                    got: a.shape().to_vec(),
                });
            }
            (Tensor::vector(a.row_slice(i).to_vec()), a.rows(), a.cols())
        };
        Ok(self.push1(
            value,
            Box::new(move |g: &Tensor| {
                let mut out = Tensor::zeros(&[rows, cols]);
                out.data_mut()[i * cols..(i + 1) * cols].copy_from_slice(g.data());
                out
            }),
        ))
    }

    // ── reductions ───────────────────────────────────────────────────

    pub fn sum_all(&self) -> Var {
        let (value, shape) = {
            let inner = self.tape.borrow();
            let a = &inner.nodes[self.idx].value;
            (
                Tensor::scalar(a.data().iter().sum()),
                a.shape().to_vec(),
            )
        };
        self.push1(
            value,
            Box::new(move |g: &Tensor| Tensor::full(&shape, g.item())),
        )
    }

    pub fn mean_all(&self) -> Var {
        let (value, shape, n) = {
            let inner = self.tape.borrow();
            let a = &inner.nodes[self.idx].value;
            let n = a.numel() as f64;
            (
                Tensor::scalar(a.data().iter().sum::<f64>() / n),
                a.shape().to_vec(),
                n,
            )
        };
        self.push1(
            value,
            Box::new(move |g: &Tensor| Tensor::full(&shape, g.item() / n)),
        )
    }

    /// Sum of a matrix along `axis` (0: over rows -> `[cols]`, 1: over
    /// columns -> `[rows]`).
    pub fn sum_axis(&self, axis: usize) -> Result<Var, NumericsError> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var, NumericsError> {
        self.reduce_axis(axis, true)
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Result<Var, NumericsError> {
        let (value, rows, cols) = {
            let inner = self.tape.borrow();
            let a = &inner.nodes[self.idx].value;
            if a.shape().len() != 2 || axis > 1 {
                return Err(NumericsError::BadShape {
                    op: "reduce_axis",
                    expected: "rank-2 tensor, axis in {0,1}",
                    got: a.shape().to_vec(),
                });
            }
            let (rows, cols) = (a.rows(), a.cols());
            let denom = if mean {
                if axis == 0 {
                    rows as f64
                } else {
                    cols as f64
                }
            } else {
                1.0
            };
            let value = if axis == 0 {
                let mut out = vec![0.0; cols];
                for r in 0..rows {
                    for (o, v) in out.iter_mut().zip(a.row_slice(r)) {
                        *o += v;
                    }
                }
                Tensor::vector(out.into_iter().map(|v| v / denom).collect())
            } else {
                let out = (0..rows)
                    .map(|r| a.row_slice(r).iter().sum::<f64>() / denom)
                    .collect();
                Tensor::vector(out)
            };
            (value, rows, cols)
        };
        let denom = if mean {
            if axis == 0 {
                rows as f64
            } else {
                cols as f64
            }
        } else {
            1.0
        };
        Ok(self.push1(
            value,
            Box::new(move |g: &Tensor| {
                let mut out = Tensor::zeros(&[rows, cols]);
                for r in 0..rows {
                    for c in 0..cols {
                        let gv = if axis == 0 { g.data()[c] } else { g.data()[r] };
                        out.data_mut()[r * cols + c] = gv / denom;
                    }
                }
                out
            }),
        ))
    }

    /// Broadcast a vector `[d]` into a matrix `[m,d]` by row repetition.
    pub fn repeat_row(&self, m: usize) -> Result<Var, NumericsError> {
        let (value, d) = {
            let inner = self.tape.borrow();
            let a = &inner.nodes[self.idx].value;
            if a.shape().len() != 1 {
                return Err(NumericsError::BadShape {
                    op: "repeat_row",
                    expected: "rank-1 tensor",
                    got: a.shape().to_vec(),
                });
            }
            let d = a.numel();
            let mut data = Vec::with_capacity(m * d);
            for _ in 0..m {
                data.extend_from_slice(a.data());
            }
            (Tensor::matrix(m, d, data), d)
        };
        Ok(self.push1(
            value,
            Box::new(move |g: &Tensor| {
                let mut out = vec![0.0; d];
                for r in 0..m {
                    for (o, v) in out.iter_mut().zip(g.row_slice(r)) {
                        *o += v;
                    }
                }
                Tensor::vector(out)
            }),
        ))
    }

    /// Add a vector `[d]` to every row of a matrix `[m,d]` (bias broadcast).
    pub fn add_row_broadcast(&self, bias: &Var) -> Result<Var, NumericsError> {
        let value = self.with_values(bias, |a, b| {
            if a.shape().len() != 2 || b.shape().len() != 1 || a.cols() != b.numel() {
                return Err(shape_err("add_row_broadcast", a.shape(), b.shape()));
            }
            let cols = a.cols();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + b.data()[i % cols])
                .collect();
            Ok(Tensor::from_vec_unchecked(a.shape().to_vec(), data))
        })?;
        Ok(self.tape().push(
            value,
            vec![
                (self.idx, Box::new(|g: &Tensor| g.clone())),
                (
                    bias.idx,
                    Box::new(|g: &Tensor| {
                        let cols = g.cols();
                        let mut out = vec![0.0; cols];
                        for r in 0..g.rows() {
                            for (o, v) in out.iter_mut().zip(g.row_slice(r)) {
                                *o += v;
                            }
                        }
                        Tensor::vector(out)
                    }),
                ),
            ],
        ))
    }

    /// Scale row `i` of a matrix `[m,d]` by entry `i` of a vector `[m]`.
    pub fn scale_rows(&self, scales: &Var) -> Result<Var, NumericsError> {
        let (value, mat, sc) = self.with_values(scales, |a, s| {
            if a.shape().len() != 2 || s.shape().len() != 1 || a.rows() != s.numel() {
                return Err(shape_err("scale_rows", a.shape(), s.shape()));
            }
            let cols = a.cols();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v * s.data()[i / cols])
                .collect();
            Ok((
                Tensor::from_vec_unchecked(a.shape().to_vec(), data),
                a.clone(),
                s.clone(),
            ))
        })?;
        let mat_for_s = mat;
        Ok(self.tape().push(
            value,
            vec![
                (
                    self.idx,
                    Box::new(move |g: &Tensor| {
                        let cols = g.cols();
                        let data = g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(i, v)| v * sc.data()[i / cols])
                            .collect();
                        Tensor::from_vec_unchecked(g.shape().to_vec(), data)
                    }),
                ),
                (
                    scales.idx,
                    Box::new(move |g: &Tensor| {
                        let out = (0..g.rows())
                            .map(|r| {
                                g.row_slice(r)
                                    .iter()
                                    .zip(mat_for_s.row_slice(r))
                                    .map(|(x, y)| x * y)
                                    .sum()
                            })
                            .collect();
                        Tensor::vector(out)
                    }),
                ),
            ],
        ))
    }

    // ── element-wise unary ───────────────────────────────────────────

    pub fn recip(&self) -> Var {
        let value = self.value().map(|v| 1.0 / v);
        let x = self.value();
        self.push1(
            value,
            Box::new(move |g: &Tensor| {
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| -gv / (xv * xv))
                    .collect();
                Tensor::from_vec_unchecked(g.shape().to_vec(), data)
            }),
        )
    }

    pub fn sigmoid(&self) -> Var {
        let value = self.value().map(sigmoid);
        let y = value.clone();
        self.push1(
            value,
            Box::new(move |g: &Tensor| {
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| gv * yv * (1.0 - yv))
                    .collect();
                Tensor::from_vec_unchecked(g.shape().to_vec(), data)
            }),
        )
    }

    pub fn relu(&self) -> Var {
        let x = self.value();
        self.tape()
            .record_branches(x.data().iter().map(|&v| u8::from(v > 0.0)));
        let value = x.map(|v| v.max(0.0));
        self.push1(
            value,
            Box::new(move |g: &Tensor| {
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                Tensor::from_vec_unchecked(g.shape().to_vec(), data)
            }),
        )
    }

    /// Element-wise clamp to `[lo, hi]`. The local gradient is 1 strictly
    /// inside the interval and 0 at or beyond either bound (one-sided
    /// saturation, matching the hard-concrete gate formulation).
    pub fn clamp(&self, lo: f64, hi: f64) -> Var {
        let x = self.value();
        self.tape().record_branches(x.data().iter().map(|&v| {
            if v <= lo {
                0u8
            } else if v >= hi {
                2
            } else {
                1
            }
        }));
        let value = x.map(|v| v.clamp(lo, hi));
        self.push1(
            value,
            Box::new(move |g: &Tensor| {
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| if *xv > lo && *xv < hi { *gv } else { 0.0 })
                    .collect();
                Tensor::from_vec_unchecked(g.shape().to_vec(), data)
            }),
        )
    }

    pub fn log(&self) -> Result<Var, NumericsError> {
        let x = self.value();
        if let Some((i, &v)) = x.data().iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(NumericsError::NonFinite {
                context: "log: nonpositive input",
                index: i,
                value: v,
            });
        }
        let value = x.map(f64::ln);
        Ok(self.push1(
            value,
            Box::new(move |g: &Tensor| {
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| gv / xv)
                    .collect();
                Tensor::from_vec_unchecked(g.shape().to_vec(), data)
            }),
        ))
    }

    /// Inverted dropout. Train mode zeroes each entry with probability `p`
    /// and scales survivors by `1/(1-p)`; eval mode is the identity (the
    /// input var is returned unchanged).
    pub fn dropout(&self, p: f64, phase: Phase, rng: &mut ChaCha8Rng) -> Var {
        if phase == Phase::Eval || p <= 0.0 {
            return self.clone();
        }
        let keep = 1.0 - p;
        let x = self.value();
        let mask: Vec<f64> = x
            .data()
            .iter()
            .map(|_| {
                if rng.gen::<f64>() < p {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::from_vec_unchecked(x.shape().to_vec(), data);
        self.push1(
            value,
            Box::new(move |g: &Tensor| {
                let data = g.data().iter().zip(&mask).map(|(gv, m)| gv * m).collect();
                Tensor::from_vec_unchecked(g.shape().to_vec(), data)
            }),
        )
    }

    /// Numerically stable per-element binary cross-entropy on logits:
    /// `max(x,0) - x*t + ln(1 + exp(-|x|))`. Targets are data, not nodes.
    pub fn bce_with_logits(&self, targets: &Tensor) -> Result<Var, NumericsError> {
        let x = self.value();
        if x.shape() != targets.shape() {
            return Err(shape_err("bce_with_logits", x.shape(), targets.shape()));
        }
        let data = x
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&xv, &t)| xv.max(0.0) - xv * t + (-xv.abs()).exp().ln_1p())
            .collect();
        let value = Tensor::from_vec_unchecked(x.shape().to_vec(), data);
        let t = targets.clone();
        Ok(self.push1(
            value,
            Box::new(move |g: &Tensor| {
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .zip(t.data())
                    .map(|((gv, &xv), &tv)| gv * (sigmoid(xv) - tv))
                    .collect();
                Tensor::from_vec_unchecked(g.shape().to_vec(), data)
            }),
        ))
    }

    /// Bilinear form `a^T W b` for vectors `a, b` of dim `d` and `W: [d,d]`.
    pub fn bilinear(&self, w: &Var, b: &Var) -> Result<Var, NumericsError> {
        let (a_val, w_val, b_val) = {
            let inner = self.tape.borrow();
            let a = &inner.nodes[self.idx].value;
            let wt = &inner.nodes[w.idx].value;
            let bv = &inner.nodes[b.idx].value;
            let d = a.numel();
            if a.shape().len() != 1
                || bv.shape().len() != 1
                || wt.shape() != [d, bv.numel()]
            {
                return Err(shape_err("bilinear", a.shape(), wt.shape()));
            }
            (a.clone(), wt.clone(), bv.clone())
        };
        let d = a_val.numel();
        let e = b_val.numel();
        let mut score = 0.0;
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..e {
                acc += w_val.at(i, j) * b_val.data()[j];
            }
            score += a_val.data()[i] * acc;
        }
        let (a1, w1, b1) = (a_val.clone(), w_val.clone(), b_val.clone());
        let (a2, b2) = (a_val.clone(), b_val.clone());
        let (a3, w3) = (a_val, w_val);
        Ok(self.tape().push(
            Tensor::scalar(score),
            vec![
                (
                    self.idx,
                    Box::new(move |g: &Tensor| {
                        // da = g * (W b)
                        let gv = g.item();
                        let out = (0..a1.numel())
                            .map(|i| {
                                gv * (0..b1.numel())
                                    .map(|j| w1.at(i, j) * b1.data()[j])
                                    .sum::<f64>()
                            })
                            .collect();
                        Tensor::vector(out)
                    }),
                ),
                (
                    w.idx,
                    Box::new(move |g: &Tensor| {
                        // dW = g * (a ⊗ b)
                        let gv = g.item();
                        let mut out = Tensor::zeros(&[a2.numel(), b2.numel()]);
                        for i in 0..a2.numel() {
                            for j in 0..b2.numel() {
                                out.set(i, j, gv * a2.data()[i] * b2.data()[j]);
                            }
                        }
                        out
                    }),
                ),
                (
                    b.idx,
                    Box::new(move |g: &Tensor| {
                        // db = g * (W^T a)
                        let gv = g.item();
                        let out = (0..w3.cols())
                            .map(|j| {
                                gv * (0..a3.numel())
                                    .map(|i| w3.at(i, j) * a3.data()[i])
                                    .sum::<f64>()
                            })
                            .collect();
                        Tensor::vector(out)
                    }),
                ),
            ],
        ))
    }

    /// Row-wise bilinear scores: rows `A[r]`, `B[r]` of `[n,d]` matrices
    /// against one `[d,d]` matrix, producing `[n]` with entry `A_r^T W B_r`.
    pub fn bilinear_rows(&self, w: &Var, b: &Var) -> Result<Var, NumericsError> {
        let (a_val, w_val, b_val) = {
            let inner = self.tape.borrow();
            let a = &inner.nodes[self.idx].value;
            let wt = &inner.nodes[w.idx].value;
            let bv = &inner.nodes[b.idx].value;
            if a.shape().len() != 2 || a.shape() != bv.shape() {
                return Err(shape_err("bilinear_rows", a.shape(), bv.shape()));
            }
            let d = a.cols();
            if wt.shape() != [d, d] {
                return Err(shape_err("bilinear_rows", a.shape(), wt.shape()));
            }
            (a.clone(), wt.clone(), bv.clone())
        };
        let n = a_val.rows();
        let d = a_val.cols();
        // scores_r = A_r . (W @ B_r)
        let mut wb = vec![0.0; n * d]; // row-major [n,d], wb[r] = W @ B_r
        for r in 0..n {
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += w_val.at(i, j) * b_val.at(r, j);
                }
                wb[r * d + i] = acc;
            }
        }
        let scores = (0..n)
            .map(|r| {
                a_val
                    .row_slice(r)
                    .iter()
                    .zip(&wb[r * d..(r + 1) * d])
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let wb_t = Tensor::matrix(n, d, wb);
        let (a1, b1) = (a_val.clone(), b_val.clone());
        let (a2, w2) = (a_val, w_val);
        Ok(self.tape().push(
            Tensor::vector(scores),
            vec![
                (
                    self.idx,
                    // dA_r = g_r * (W @ B_r)
                    Box::new(move |g: &Tensor| {
                        let data = wb_t
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(i, v)| v * g.data()[i / d])
                            .collect();
                        Tensor::from_vec_unchecked(vec![n, d], data)
                    }),
                ),
                (
                    w.idx,
                    // dW = sum_r g_r * A_r ⊗ B_r
                    Box::new(move |g: &Tensor| {
                        let mut out = Tensor::zeros(&[d, d]);
                        for r in 0..n {
                            let gr = g.data()[r];
                            if gr == 0.0 {
                                continue;
                            }
                            for i in 0..d {
                                let ai = a1.at(r, i) * gr;
                                for j in 0..d {
                                    let cur = out.at(i, j);
                                    out.set(i, j, cur + ai * b1.at(r, j));
                                }
                            }
                        }
                        out
                    }),
                ),
                (
                    b.idx,
                    // dB_r = g_r * (W^T @ A_r)
                    Box::new(move |g: &Tensor| {
                        let mut out = Tensor::zeros(&[n, d]);
                        for r in 0..n {
                            let gr = g.data()[r];
                            if gr == 0.0 {
                                continue;
                            }
                            for j in 0..d {
                                let mut acc = 0.0;
                                for i in 0..d {
                                    acc += w2.at(i, j) * a2.at(r, i);
                                }
                                out.set(r, j, gr * acc);
                            }
                        }
                        out
                    }),
                ),
            ],
        ))
    }

    // ── n-ary constructors ───────────────────────────────────────────

    /// Stack same-length vectors into a `[n,d]` matrix.
    pub fn stack_rows(tape: &Tape, rows: &[Var]) -> Result<Var, NumericsError> {
        assert!(!rows.is_empty(), "stack_rows of zero vars");
        let d = {
            let shape = rows[0].shape();
            if shape.len() != 1 {
                return Err(NumericsError::BadShape {
                    op: "stack_rows",
                    expected: "rank-1 inputs",
                    got: shape,
                });
            }
            shape[0]
        };
        let n = rows.len();
        let mut data = Vec::with_capacity(n * d);
        for v in rows {
            let t = v.value();
            if t.shape() != [d] {
                return Err(shape_err("stack_rows", &[d], t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let parents = rows
            .iter()
            .enumerate()
            .map(|(r, v)| {
                let gf: GradFn = Box::new(move |g: &Tensor| Tensor::vector(g.row_slice(r).to_vec()));
                (v.idx, gf)
            })
            .collect();
        Ok(tape.push(Tensor::matrix(n, d, data), parents))
    }

    /// Stack scalar vars into a `[n]` vector.
    pub fn stack_scalars(tape: &Tape, scalars: &[Var]) -> Result<Var, NumericsError> {
        assert!(!scalars.is_empty(), "stack_scalars of zero vars");
        let mut data = Vec::with_capacity(scalars.len());
        for v in scalars {
            let t = v.value();
            if !t.is_scalar() {
                return Err(NumericsError::BadShape {
                    op: "stack_scalars",
                    expected: "scalar inputs",
                    got: t.shape().to_vec(),
                });
            }
            data.push(t.item());
        }
        let parents = scalars
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let gf: GradFn = Box::new(move |g: &Tensor| Tensor::scalar(g.data()[i]));
                (v.idx, gf)
            })
            .collect();
        Ok(tape.push(Tensor::vector(data), parents))
    }

    /// Dot product of two vectors; composed from `mul` + `sum_all`.
    pub fn dot(&self, other: &Var) -> Result<Var, NumericsError> {
        Ok(self.mul(other)?.sum_all())
    }

    /// Embedding lookup: gather rows `ids` of a `[v,d]` table into `[m,d]`.
    /// The gradient scatter-adds back into the table (duplicate ids sum).
    pub fn gather_rows(&self, ids: &[u32]) -> Result<Var, NumericsError> {
        let (value, v_rows, d) = {
            let inner = self.tape.borrow();
            let table = &inner.nodes[self.idx].value;
            if table.shape().len() != 2 {
                return Err(NumericsError::BadShape {
                    op: "gather_rows",
                    expected: "rank-2 table",
                    got: table.shape().to_vec(),
                });
            }
            let (v_rows, d) = (table.rows(), table.cols());
            let mut data = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id as usize >= v_rows {
                    return Err(NumericsError::BadShape {
                        op: "gather_rows",
                        expected: "ids within table rows",
                        got: vec![id as usize, v_rows],
                    });
                }
                data.extend_from_slice(table.row_slice(id as usize));
            }
            (Tensor::matrix(ids.len(), d, data), v_rows, d)
        };
        let ids = ids.to_vec();
        Ok(self.push1(
            value,
            Box::new(move |g: &Tensor| {
                let mut out = Tensor::zeros(&[v_rows, d]);
                for (r, &id) in ids.iter().enumerate() {
                    let dst = id as usize * d;
                    let src = g.row_slice(r);
                    for (k, v) in src.iter().enumerate() {
                        out.data_mut()[dst + k] += v;
                    }
                }
                out
            }),
        ))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients of every node reachable
    /// from the loss are accumulated in place; unreachable nodes keep their
    /// zero gradient. Call once per tape.
    pub fn backward(&self) -> Result<(), NumericsError> {
        let mut inner = self.tape.borrow_mut();
        {
            let loss = &mut inner.nodes[self.idx];
            if !loss.value.is_scalar() {
                return Err(NumericsError::NonScalarLoss {
                    got: loss.value.shape().to_vec(),
                });
            }
            loss.grad.fill(1.0);
        }
        for i in (0..=self.idx).rev() {
            let (before, rest) = inner.nodes.split_at_mut(i);
            let node = &rest[0];
            if node.parents.is_empty() {
                continue;
            }
            if node.grad.data().iter().all(|&v| v == 0.0) {
                continue;
            }
            for (p, f) in &node.parents {
                let contrib = f(&node.grad);
                before[*p].grad.add_assign(&contrib);
            }
        }
        Ok(())
    }
}

/// Numerically stable scalar logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row_slice(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (k, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = b.row_slice(k);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

// A @ B^T
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, p, n) = (a.rows(), a.cols(), b.rows());
    debug_assert_eq!(p, b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row_slice(i);
        for j in 0..n {
            out[i * n + j] = arow.iter().zip(b.row_slice(j)).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::matrix(m, n, out)
}

// A^T @ B
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (p, m, n) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(p, b.rows());
    let mut out = vec![0.0; m * n];
    for k in 0..p {
        let arow = a.row_slice(k);
        let brow = b.row_slice(k);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.at(i, j);
        }
    }
    Tensor::matrix(n, m, out)
}
