//! Adam with bias correction, one state per tracked parameter tensor.

use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shape: &[usize], lr: f64) -> Self {
        AdamState {
            first_moment: Tensor::zeros(shape),
            second_moment: Tensor::zeros(shape),
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected update, in place. Shapes must match the tracked
    /// parameter.
    pub fn step(&mut self, param: &mut Tensor, grad: &Tensor) {
        assert_eq!(param.shape(), grad.shape(), "adam_step: shape mismatch");
        assert_eq!(param.shape(), self.first_moment.shape());
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        let m = self.first_moment.data_mut();
        let v = self.second_moment.data_mut();
        let p = param.data_mut();
        for i in 0..p.len() {
            let g = grad.data()[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
