//! AdamW with decoupled weight decay.
//!
//! Moment buffers are allocated per parameter at construction and indexed by
//! [`ParamId`], so the optimizer stays in lockstep with the store it was
//! built for. Frozen parameters are skipped outright — values, moments, and
//! step logic never touch them — which keeps a frozen submodel bit-identical
//! across however many steps the rest of the model takes.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::ParameterStore;

pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    /// Conventional defaults: betas 0.9 / 0.999, epsilon 1e-8.
    pub fn new(store: &ParameterStore, lr: f64, weight_decay: f64) -> Self {
        let m = store.ids().map(|id| vec![0.0; store.value(id).numel()]).collect();
        let v = store.ids().map(|id| vec![0.0; store.value(id).numel()]).collect();
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step_count: 0,
            m,
            v,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Applies one update from the gradients currently in the store.
    pub fn step(&mut self, store: &mut ParameterStore) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for id in store.ids() {
            if store.is_frozen(id) {
                continue;
            }
            let i = id.index();
            let (value, grad) = store.value_and_grad_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..value.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                value[j] -=
                    self.lr * (mhat / (libm::sqrt(vhat) + self.eps) + self.weight_decay * value[j]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, GradAccumulator, Init, LinearLayer};
    use crate::rng::Stream;
    use crate::tensor::Tensor;

    #[test]
    fn drives_a_quadratic_toward_its_minimum() {
        let mut store = ParameterStore::new();
        let p = store.register("p", Tensor::new(vec![1], vec![10.0]).unwrap()).unwrap();
        let mut opt = AdamW::new(&store, 0.05, 0.0);
        for _ in 0..2000 {
            // loss = (p - 3)^2
            let mut g = Graph::new(&store);
            let pv = g.param(p).unwrap();
            let c = g.tape.constant(vec![1], vec![3.0]).unwrap();
            let d = g.tape.sub(pv, c).unwrap();
            let sq = g.tape.mul(d, d).unwrap();
            let loss = g.tape.sum(sq).unwrap();
            g.backward(loss).unwrap();
            let mut acc = GradAccumulator::new(&store);
            acc.add_from(&g);
            drop(g);
            acc.mean_into(&mut store);
            opt.step(&mut store);
        }
        let final_p = store.value(p).data()[0];
        assert!((final_p - 3.0).abs() < 1e-3, "converged to {final_p}");
    }

    #[test]
    fn frozen_parameters_stay_bit_identical() {
        let mut store = ParameterStore::new();
        let mut rng = Stream::for_domain(7, "optim");
        let frozen =
            LinearLayer::register(&mut store, "frozen", 4, 4, Init::Standard, &mut rng).unwrap();
        let live =
            LinearLayer::register(&mut store, "live", 4, 1, Init::Standard, &mut rng).unwrap();
        store.freeze_matching("frozen.*").unwrap();
        let before = store.value(frozen.weight_id()).data().to_vec();
        let before_b = store.value(frozen.bias_id()).data().to_vec();

        let mut opt = AdamW::new(&store, 1e-2, 1e-4);
        for step in 0..25 {
            let mut g = Graph::new(&store);
            let x = g
                .tape
                .constant(vec![2, 4], (0..8).map(|i| (i + step) as f64 * 0.1).collect())
                .unwrap();
            let h = frozen.forward(&mut g, x).unwrap();
            let a = g.tape.gelu(h).unwrap();
            let y = live.forward(&mut g, a).unwrap();
            let sq = g.tape.mul(y, y).unwrap();
            let loss = g.tape.sum(sq).unwrap();
            g.backward(loss).unwrap();
            let mut acc = GradAccumulator::new(&store);
            acc.add_from(&g);
            drop(g);
            acc.mean_into(&mut store);
            opt.step(&mut store);
        }
        assert_eq!(store.value(frozen.weight_id()).data(), before.as_slice());
        assert_eq!(store.value(frozen.bias_id()).data(), before_b.as_slice());
    }

    #[test]
    fn weight_decay_shrinks_parameters_under_zero_gradient() {
        let mut store = ParameterStore::new();
        let p = store.register("p", Tensor::new(vec![1], vec![2.0]).unwrap()).unwrap();
        let (lr, wd) = (0.1, 0.5);
        let mut opt = AdamW::new(&store, lr, wd);
        store.zero_grads();
        let mut expected = 2.0;
        for _ in 0..5 {
            opt.step(&mut store);
            expected *= 1.0 - lr * wd; // zero grad leaves only the decay term
            assert!((store.value(p).data()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut store = ParameterStore::new();
            let mut rng = Stream::for_domain(3, "optim_det");
            let lin =
                LinearLayer::register(&mut store, "l", 3, 2, Init::Standard, &mut rng).unwrap();
            let mut opt = AdamW::new(&store, 1e-3, 1e-4);
            for _ in 0..10 {
                let mut g = Graph::new(&store);
                let x = g.tape.constant(vec![1, 3], vec![0.2, -0.4, 0.6]).unwrap();
                let y = lin.forward(&mut g, x).unwrap();
                let sq = g.tape.mul(y, y).unwrap();
                let loss = g.tape.sum(sq).unwrap();
                g.backward(loss).unwrap();
                let mut acc = GradAccumulator::new(&store);
                acc.add_from(&g);
                drop(g);
                acc.mean_into(&mut store);
                opt.step(&mut store);
            }
            store.value(lin.weight_id()).data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
