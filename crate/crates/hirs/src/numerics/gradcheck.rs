//! Central finite-difference verification of analytic gradients.
//!
//! The caller supplies a deterministic loss function over named parameter
//! tensors (stochastic paths must be frozen by reseeding their rng per
//! evaluation). Each probe compares the tape gradient against
//! `(f(x+h) - f(x-h)) / 2h`. Probes whose two evaluations take different
//! relu/clamp branches sit on a kink where the finite difference is
//! meaningless; they are counted and excluded rather than compared.

use crate::error::NumericsError;
use crate::numerics::tensor::Tensor;

pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    /// Worst coordinate: (param name, flat index, analytic, numeric).
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    pub fn summary(&self) -> String {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        let worst = match &self.worst {
            Some((name, i, a, n)) => {
                format!(" worst={name}[{i}] analytic={a:.6e} numeric={n:.6e}")
            }
            None => String::new(),
        };
        format!(
            "gradcheck {status}: max_rel_err={:.3e} (tol {:.0e}, {} coords, {} kink-skipped){worst}",
            self.max_rel_err, self.tolerance, self.checked, self.skipped_kinks
        )
    }
}

/// One evaluation of the checked fragment: loss value, optionally the
/// analytic gradients (same order as `params`), and the branch signature.
pub struct Eval {
    pub loss: f64,
    pub grads: Option<Vec<Tensor>>,
    pub branches: Vec<u8>,
}

/// Relative error with an absolute floor: coordinates with both gradients
/// below 1 are compared absolutely, larger ones relatively.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

pub fn gradcheck<F>(
    params: &mut [(String, Tensor)],
    mut eval: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NumericsError>
where
    F: FnMut(&[(String, Tensor)], bool) -> Result<Eval, NumericsError>,
{
    let base = eval(params, true)?;
    let grads = base.grads.expect("eval must return gradients when asked");
    assert_eq!(grads.len(), params.len());

    let mut max_rel_err: f64 = 0.0;
    let mut worst = None;
    let mut checked = 0;
    let mut skipped = 0;

    for p in 0..params.len() {
        for c in 0..params[p].1.numel() {
            let orig = params[p].1.data()[c];

            params[p].1.data_mut()[c] = orig + step;
            let plus = eval(params, false)?;
            params[p].1.data_mut()[c] = orig - step;
            let minus = eval(params, false)?;
            params[p].1.data_mut()[c] = orig;

            if plus.branches != minus.branches {
                skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * step);
            let analytic = grads[p].data()[c];
            let err = rel_err(analytic, numeric);
            checked += 1;
            if err > max_rel_err {
                max_rel_err = err;
                worst = Some((params[p].0.clone(), c, analytic, numeric));
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_err,
        tolerance,
        checked,
        skipped_kinks: skipped,
        worst,
    })
}
