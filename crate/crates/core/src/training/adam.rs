use super::model::ModelParams;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        assert_eq!(params.n_params(), self.m.len(), "optimizer/parameter size mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .values_mut()
            .zip(grad.values())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::model::Architecture;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = ModelParams::init(Architecture::Mlp1 { hidden: 4 }, 3, 2, 5);
        let before = p.clone();
        let zero = p.zeros_like();
        let mut opt = Adam::new(p.n_params(), 1e-3);
        for _ in 0..5 {
            opt.update(&mut p, &zero);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = ModelParams::zeros(Architecture::Linear, 2, 2);
        let mut g = p.zeros_like();
        g.layers[0].weights[[0, 0]] = 3.0;
        g.layers[0].weights[[1, 1]] = -0.01;
        let mut opt = Adam::new(p.n_params(), 1e-3);
        opt.update(&mut p, &g);
        assert!((p.layers[0].weights[[0, 0]] + 1e-3).abs() < 1e-9);
        assert!((p.layers[0].weights[[1, 1]] - 1e-3).abs() < 1e-6);
        assert_eq!(p.layers[0].weights[[0, 1]], 0.0);
    }
}
