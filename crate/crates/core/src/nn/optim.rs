//! Adam and plain gradient descent over a model's layers.

use super::layer::{Dense, DenseGrad};
use super::model::OptimizerConfig;

/// Plain gradient descent: `w <- w - lr * g`.
pub fn sgd_step<'a>(layers: impl Iterator<Item = &'a mut Dense>, grads: &[DenseGrad], lr: f64) {
    for (l, g) in layers.zip(grads) {
        l.w.scaled_add(-lr, &g.w);
        l.b.scaled_add(-lr, &g.b);
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<DenseGrad>,
    v: Vec<DenseGrad>,
}

impl Adam {
    pub fn new<'a>(layers: impl Iterator<Item = &'a Dense>, cfg: &OptimizerConfig) -> Self {
        let m: Vec<DenseGrad> = layers.map(DenseGrad::zeros_like).collect();
        Adam {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update.
    pub fn step<'a>(&mut self, layers: impl Iterator<Item = &'a mut Dense>, grads: &[DenseGrad], lr: f64) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((l, g), m), v) in layers.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut l.w)
                .and(&g.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut l.b)
                .and(&g.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}
