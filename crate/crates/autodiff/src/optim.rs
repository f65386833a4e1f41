use std::collections::HashMap;

use crate::{Gradients, ParamId, ParamStore, Tensor};

/// Adaptive-moment gradient descent.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<ParamId, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter in `trainable` that has a
    /// gradient. Parameters outside `trainable` are never touched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, trainable: &[ParamId]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for &id in trainable {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = self.moments.entry(id).or_insert_with(|| {
                let shape = g.shape();
                let n = g.len();
                (
                    Tensor::new(shape.to_vec(), vec![0.0; n]).expect("gradient shape is valid"),
                    Tensor::new(shape.to_vec(), vec![0.0; n]).expect("gradient shape is valid"),
                )
            });
            let p = store.get_mut(id);
            let (b1, b2) = (self.beta1, self.beta2);
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mh = *mv / bc1;
                let vh = *vv / bc2;
                *pv -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
