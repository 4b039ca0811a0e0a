use ndarray::{Array2, Zip};

use super::{GradientTape, TrainingConfig};
use crate::model::ChannelModel;

/// Adam with bias correction, one moment pair per trainable tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(model: &ChannelModel, cfg: &TrainingConfig) -> Self {
        let zeros: Vec<Array2<f64>> = model
            .params()
            .into_iter()
            .map(|(_, p)| Array2::zeros(p.dim()))
            .collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut ChannelModel, grads: &GradientTape) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let params = model.params_mut();
        assert_eq!(params.len(), grads.len(), "gradient tape does not match model");
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
        }
    }
}
