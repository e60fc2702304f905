//! Tensors, the differentiation tape, Adam, and gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use gradcheck::{gradcheck, Eval, GradCheckReport};
pub use tape::{sigmoid, Phase, Tape, Var};
pub use tensor::Tensor;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fill a tensor with N(0, std^2) draws.
pub fn randn(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| std * gaussian(rng)).collect();
    Tensor::from_vec_unchecked(shape.to_vec(), data)
}

/// Box-Muller; two uniforms per draw keeps the stream layout simple.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let tape = Tape::new();
        let x = tape.scalar(0.0);
        assert_eq!(x.sigmoid().item(), 0.5);
    }

    #[test]
    fn clamp_saturation_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.scalar(1.3);
        let y = x.clamp(0.0, 1.0);
        assert_eq!(y.item(), 1.0);
        y.backward().unwrap();
        assert_eq!(x.grad().item(), 0.0);
    }

    #[test]
    fn bce_with_logits_at_zero_is_ln2() {
        // -ln(sigmoid(0)) = ln 2, evaluated by hand.
        let tape = Tape::new();
        let x = tape.scalar(0.0);
        let loss = x.bce_with_logits(&Tensor::scalar(1.0)).unwrap();
        assert!((loss.item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn backward_square_sum() {
        // d/dx sum(x*x) = 2x
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let loss = x.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_constant_loss_gives_zero_grads() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.scalar(5.0);
        c.backward().unwrap();
        assert_eq!(x.grad().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(x.backward().is_err());
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let err = a.add(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add") && msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn dropout_eval_is_bit_identical_identity() {
        let tape = Tape::new();
        let mut r = rng(7);
        let t = randn(&[4, 5], 1.0, &mut r);
        let x = tape.leaf(t.clone());
        let y = x.dropout(0.5, Phase::Eval, &mut r);
        assert_eq!(y.value(), t);
    }

    #[test]
    fn dropout_train_scales_survivors() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0; 1000]));
        let mut r = rng(3);
        let y = x.dropout(0.25, Phase::Train, &mut r).value();
        let kept: Vec<f64> = y.data().iter().copied().filter(|&v| v != 0.0).collect();
        assert!(kept.iter().all(|&v| (v - 1.0 / 0.75).abs() < 1e-12));
        // E[kept fraction] = 0.75
        let frac = kept.len() as f64 / 1000.0;
        assert!((frac - 0.75).abs() < 0.05, "kept fraction {frac}");
    }

    /// Central finite differences on a random scalar-valued graph built from
    /// one op. This is the per-op oracle required of every registered op.
    fn fd_check_op(name: &str, build: impl Fn(&Tape, &[Var]) -> Var, shapes: &[Vec<usize>], seed: u64) {
        let mut r = rng(seed);
        let leaves: Vec<Tensor> = shapes.iter().map(|s| randn(s, 1.0, &mut r)).collect();
        let h = 1e-5;

        let eval = |tensors: &[Tensor]| -> (f64, Vec<Tensor>) {
            let tape = Tape::new();
            let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = build(&tape, &vars);
            let loss = if out.value().is_scalar() {
                out
            } else {
                out.sum_all()
            };
            loss.backward().unwrap();
            (loss.item(), vars.iter().map(Var::grad).collect())
        };

        let (_, grads) = eval(&leaves);
        for (li, t) in leaves.iter().enumerate() {
            for c in 0..t.numel() {
                let mut plus = leaves.clone();
                plus[li].data_mut()[c] += h;
                let mut minus = leaves.clone();
                minus[li].data_mut()[c] -= h;
                let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let analytic = grads[li].data()[c];
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
                assert!(
                    err < 1e-4,
                    "{name} leaf {li} coord {c}: analytic {analytic} vs numeric {numeric} (err {err:.2e})"
                );
            }
        }
    }

    #[test]
    fn every_op_matches_finite_differences_on_random_shapes() {
        // 100 random shape/seed draws spread over the op set.
        let mut r = rng(991);
        for round in 0..100u64 {
            let m = r.gen_range(1..4usize);
            let n = r.gen_range(1..4usize);
            let p = r.gen_range(1..4usize);
            let seed = 1000 + round;
            match round % 20 {
                0 => fd_check_op("add", |_, v| v[0].add(&v[1]).unwrap(), &[vec![m, n], vec![m, n]], seed),
                1 => fd_check_op("sub", |_, v| v[0].sub(&v[1]).unwrap(), &[vec![m, n], vec![m, n]], seed),
                2 => fd_check_op("mul", |_, v| v[0].mul(&v[1]).unwrap(), &[vec![m, n], vec![m, n]], seed),
                3 => fd_check_op("matmul", |_, v| v[0].matmul(&v[1]).unwrap(), &[vec![m, p], vec![p, n]], seed),
                4 => fd_check_op("transpose", |_, v| v[0].transpose().unwrap(), &[vec![m, n]], seed),
                5 => fd_check_op("concat_cols", |_, v| v[0].concat_cols(&v[1]).unwrap(), &[vec![m, n], vec![m, p]], seed),
                6 => fd_check_op("row", |_, v| v[0].row(m - 1).unwrap(), &[vec![m, n]], seed),
                7 => fd_check_op("sum_axis0", |_, v| v[0].sum_axis(0).unwrap(), &[vec![m, n]], seed),
                8 => fd_check_op("mean_axis1", |_, v| v[0].mean_axis(1).unwrap(), &[vec![m, n]], seed),
                9 => fd_check_op("repeat_row", |_, v| v[0].repeat_row(m).unwrap(), &[vec![n]], seed),
                10 => fd_check_op("scale_rows", |_, v| v[0].scale_rows(&v[1]).unwrap(), &[vec![m, n], vec![m]], seed),
                11 => fd_check_op("add_row_broadcast", |_, v| v[0].add_row_broadcast(&v[1]).unwrap(), &[vec![m, n], vec![n]], seed),
                12 => fd_check_op(
                    "recip",
                    |_, v| v[0].add_scalar(4.0).recip(),
                    &[vec![m, n]],
                    seed,
                ),
                13 => fd_check_op("sigmoid", |_, v| v[0].sigmoid(), &[vec![m, n]], seed),
                14 => fd_check_op("relu", |_, v| v[0].relu(), &[vec![m, n]], seed),
                15 => fd_check_op("clamp", |_, v| v[0].clamp(-0.5, 0.5), &[vec![m, n]], seed),
                16 => fd_check_op(
                    "log",
                    |_, v| v[0].mul(&v[0]).unwrap().add_scalar(1.0).log().unwrap(),
                    &[vec![m, n]],
                    seed,
                ),
                17 => fd_check_op(
                    "bce_with_logits",
                    |_, v| {
                        let t = Tensor::full(&[m, n], 1.0);
                        v[0].bce_with_logits(&t).unwrap()
                    },
                    &[vec![m, n]],
                    seed,
                ),
                18 => fd_check_op(
                    "bilinear",
                    |_, v| v[0].bilinear(&v[1], &v[2]).unwrap(),
                    &[vec![n], vec![n, n], vec![n]],
                    seed,
                ),
                _ => fd_check_op(
                    "bilinear_rows",
                    |_, v| v[0].bilinear_rows(&v[1], &v[2]).unwrap(),
                    &[vec![m, n], vec![n, n], vec![m, n]],
                    seed,
                ),
            }
        }
    }

    #[test]
    fn stacks_scale_and_gather_match_finite_differences() {
        fd_check_op(
            "stack_rows+scale+add_scalar",
            |tape, v| {
                let rows: Vec<Var> = (0..3).map(|i| v[0].row(i).unwrap()).collect();
                Var::stack_rows(tape, &rows).unwrap().scale(2.5).add_scalar(1.0)
            },
            &[vec![3, 4]],
            5,
        );
        fd_check_op(
            "stack_scalars+dot",
            |tape, v| {
                let s: Vec<Var> = vec![v[0].dot(&v[1]).unwrap(), v[0].sum_all()];
                Var::stack_scalars(tape, &s).unwrap()
            },
            &[vec![4], vec![4]],
            6,
        );
        fd_check_op(
            "gather_rows",
            |_, v| v[0].gather_rows(&[0, 2, 2, 1]).unwrap(),
            &[vec![3, 4]],
            8,
        );
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        // grad(a*L1 + b*L2) == a*grad(L1) + b*grad(L2)
        let mut r = rng(42);
        let x0 = randn(&[3, 3], 1.0, &mut r);
        let (a, b) = (2.5, -1.25);

        let build = |which: u8| -> (f64, Tensor) {
            let tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let l1 = x.mul(&x).unwrap().sum_all();
            let l2 = x.sigmoid().mean_all();
            let loss = match which {
                1 => l1,
                2 => l2,
                _ => l1.scale(a).add(&l2.scale(b)).unwrap(),
            };
            loss.backward().unwrap();
            (loss.item(), x.grad())
        };

        let (_, g1) = build(1);
        let (_, g2) = build(2);
        let (_, gc) = build(0);
        for i in 0..x0.numel() {
            let expect = a * g1.data()[i] + b * g2.data()[i];
            assert!((gc.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        // Random 3-layer MLP, rel err < 1e-4 against central differences.
        let mut r = rng(17);
        let x0 = randn(&[2, 4], 0.8, &mut r);
        let w1 = randn(&[4, 5], 0.8, &mut r);
        let w2 = randn(&[5, 5], 0.8, &mut r);
        let w3 = randn(&[5, 1], 0.8, &mut r);
        let mut params = vec![
            ("w1".to_string(), w1),
            ("w2".to_string(), w2),
            ("w3".to_string(), w3),
        ];
        let report = gradcheck(
            &mut params,
            |p, _| {
                let tape = Tape::new();
                tape.trace_branches();
                let x = tape.leaf(x0.clone());
                let vs: Vec<Var> = p.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
                let h1 = x.matmul(&vs[0]).unwrap().relu();
                let h2 = h1.matmul(&vs[1]).unwrap().sigmoid();
                let out = h2.matmul(&vs[2]).unwrap().sum_all();
                out.backward().unwrap();
                Ok(Eval {
                    loss: out.item(),
                    grads: Some(vs.iter().map(Var::grad).collect()),
                    branches: tape.take_branch_trace(),
                })
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{}", report.summary());
    }
}
