use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        Self { cfg, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *w -= c.lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row_vector(vec![1.0, -2.0, 0.0])).unwrap();
        let mut g = Graph::new();
        let x = g.param(&store, w);
        let c = g.constant(Tensor::row_vector(vec![0.0, 0.0, 5.0]));
        let l = g.mse(x, c).unwrap();
        g.backward(l, &mut store).unwrap();
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &store);
        opt.step(&mut store);
        let v = store.value(w).data();
        assert!((v[0] - 0.9).abs() < 1e-6);
        assert!((v[1] + 1.9).abs() < 1e-6);
        assert!((v[2] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row_vector(vec![3.0, -4.0])).unwrap();
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &store);
        for _ in 0..2000 {
            store.zero_grad();
            let mut g = Graph::new();
            let x = g.param(&store, w);
            let c = g.constant(Tensor::row_vector(vec![1.0, 2.0]));
            let l = g.mse(x, c).unwrap();
            g.backward(l, &mut store).unwrap();
            opt.step(&mut store);
        }
        let v = store.value(w).data();
        assert!((v[0] - 1.0).abs() < 1e-3 && (v[1] - 2.0).abs() < 1e-3, "{v:?}");
    }
}
