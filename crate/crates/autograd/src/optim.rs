//! Adam with optional global-norm gradient clipping.

use crate::{Matrix, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 clip applied to the gradients of one step; `None` disables it.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(5.0) }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Matrix,
    pub v: Matrix,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients for frozen parameters are ignored.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Matrix)]) {
        self.step += 1;
        let scale = match self.config.clip_norm {
            Some(max) => {
                let norm = grads.iter().map(|(_, g)| g.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
                if norm > max { max / norm } else { 1.0 }
            }
            None => 1.0,
        };
        let AdamConfig { learning_rate, beta1, beta2, eps, .. } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (id, grad) in grads {
            if !store.is_trainable(*id) {
                continue;
            }
            let idx = id.index();
            if self.moments.len() <= idx {
                self.moments.resize(idx + 1, None);
            }
            let param = store.get_mut(*id);
            let fresh = match &self.moments[idx] {
                Some(mo) => mo.m.shape() != param.shape(),
                None => true,
            };
            if fresh {
                let (r, c) = param.shape();
                self.moments[idx] = Some(Moments { m: Matrix::zeros(r, c), v: Matrix::zeros(r, c) });
            }
            let mo = self.moments[idx].as_mut().expect("moments initialised above");
            let p = param.data_mut();
            for (((w, &g), m), v) in
                p.iter_mut().zip(grad.data()).zip(mo.m.data_mut()).zip(mo.v.data_mut())
            {
                let g = g * scale;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Drops the moment estimates of one parameter (e.g. after its shape changed).
    pub fn reset(&mut self, id: ParamId) {
        if let Some(slot) = self.moments.get_mut(id.index()) {
            *slot = None;
        }
    }

    pub fn moments(&self, id: ParamId) -> Option<&Moments> {
        self.moments.get(id.index()).and_then(Option::as_ref)
    }

    /// Restores saved state; used when resuming from a checkpoint.
    pub fn restore(&mut self, step: u64, moments: Vec<(ParamId, Moments)>) {
        self.step = step;
        self.moments.clear();
        for (id, mo) in moments {
            if self.moments.len() <= id.index() {
                self.moments.resize(id.index() + 1, None);
            }
            self.moments[id.index()] = Some(mo);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_params_are_untouched() {
        let mut store = ParamStore::new();
        let a = store.insert("vit.w", Matrix::filled(2, 2, 1.0)).unwrap();
        let b = store.insert("text.w", Matrix::filled(2, 2, 1.0)).unwrap();
        store.set_trainable_prefix("vit.", false);
        let mut adam = Adam::new(AdamConfig::default());
        let g = Matrix::filled(2, 2, 0.5);
        adam.step(&mut store, &[(a, g.clone()), (b, g)]);
        assert_eq!(store.get(a), &Matrix::filled(2, 2, 1.0));
        assert!(store.get(b).data().iter().all(|&x| x < 1.0));
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let x = store.insert("x", Matrix::row_vector(vec![3.0, -2.0])).unwrap();
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.1, clip_norm: None, ..Default::default() });
        for _ in 0..500 {
            let g = store.get(x).scale(2.0);
            adam.step(&mut store, &[(x, g)]);
        }
        assert!(store.get(x).frobenius_norm() < 1e-2);
    }
}
