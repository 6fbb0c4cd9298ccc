//! Adam optimizer with bias-corrected moment estimates.

use crate::autodiff::params::{GradientMap, ParamStore};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators, one pair per parameter.
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .ids()
            .map(|id| {
                let t = params.get(id);
                Tensor::zeros(t.rows(), t.cols())
            })
            .collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every parameter from `grads` at learning rate `lr`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradientMap, lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                context: "adam step",
                expected: format!("{} parameters", self.m.len()),
                got: format!("{}", params.len()),
            });
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.cfg.beta1.powf(t);
        let c2 = 1.0 - self.cfg.beta2.powf(t);
        for id in params.ids().collect::<Vec<_>>() {
            let g = grads.get(id);
            let i = id.index();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.get_mut(id).data_mut();
            for e in 0..p.len() {
                let ge = g.data()[e];
                m[e] = self.cfg.beta1 * m[e] + (1.0 - self.cfg.beta1) * ge;
                v[e] = self.cfg.beta2 * v[e] + (1.0 - self.cfg.beta2) * ge * ge;
                let mhat = m[e] / c1;
                let vhat = v[e] / c2;
                p[e] -= lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::Tape;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let w = store.register("w", Tensor::from_vec(1, 2, vec![3.0, -2.0]));
        let mut opt = AdamState::new(&store);
        for _ in 0..800 {
            let mut tape = Tape::eval();
            let wv = tape.param(&store, w);
            let sq = tape.matmul_nt(wv, wv).unwrap(); // sum of squares
            let loss = tape.sum_all(sq).unwrap();
            let grads = tape.backward(loss, &store).unwrap();
            opt.step(&mut store, &grads, 0.05).unwrap();
        }
        for &v in store.get(w).data() {
            assert!(v.abs() < 1e-3, "did not converge: {v}");
        }
    }

    #[test]
    fn first_step_moves_by_lr_regardless_of_gradient_scale() {
        // Bias correction makes the first update lr * sign(g), up to eps.
        for scale in [1e-3, 1.0, 1e6] {
            let mut store = ParamStore::new();
            let w = store.register("w", Tensor::scalar_value(1.0));
            let mut opt = AdamState::new(&store);
            let grads = GradientMap::new(vec![Tensor::scalar_value(scale)]);
            opt.step(&mut store, &grads, 0.01).unwrap();
            let moved = 1.0 - store.get(w).scalar();
            assert!((moved - 0.01).abs() < 1e-4, "moved {moved} at scale {scale}");
        }
    }
}
