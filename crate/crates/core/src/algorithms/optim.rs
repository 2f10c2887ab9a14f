use crate::diffcore::Tensor;

/// Adam with coupled L2 weight decay (`grad + weight_decay * param`).
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gj = gj + self.weight_decay * *w;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut adam = Adam::new(3e-5, 0.0, 0.9, 0.999, 1e-8);
        let mut p = Tensor::row(vec![1.0, -2.0, 0.5, 0.0]);
        let before = p.clone();
        let g = Tensor::row(vec![0.3, -4.0, 1e-3, 0.0]);
        adam.step(vec![&mut p], std::slice::from_ref(&g));
        for j in 0..4 {
            let delta = before.data()[j] - p.data()[j];
            let gj = g.data()[j];
            let expected = 3e-5 * gj / (gj.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-15, "{delta} vs {expected}");
        }
    }

    #[test]
    fn zero_gradient_moves_only_by_decay() {
        let mut adam = Adam::new(1e-3, 5e-4, 0.9, 0.999, 1e-8);
        let mut p = Tensor::row(vec![2.0, -1.0, 0.0]);
        adam.step(vec![&mut p], &[Tensor::zeros(1, 3)]);
        // decay-only gradient shrinks each weight towards zero, zero stays put
        assert!(p.data()[0] < 2.0 && p.data()[0] > 2.0 - 1.1e-3);
        assert!(p.data()[1] > -1.0 && p.data()[1] < -1.0 + 1.1e-3);
        assert_eq!(p.data()[2], 0.0);

        let mut q = Tensor::row(vec![2.0]);
        Adam::new(1e-3, 0.0, 0.9, 0.999, 1e-8).step(vec![&mut q], &[Tensor::zeros(1, 1)]);
        assert_eq!(q.data()[0], 2.0);
    }
}
