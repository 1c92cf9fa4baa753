//! Stochastic gradient descent with momentum and weight decay.

use alloc::vec::Vec;

use crate::graph::{Grads, Params};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: Vec::new() }
    }

    /// One update of every trainable slot:
    /// `v ← μ·v + (g + d·w)`, `w ← w − η·v`. With `μ = 0` the step is
    /// `w ← w·(1 − η·d) − η·g`, so a zero gradient scales weights by exactly
    /// `1 − η·d`. A zero rate leaves weights untouched.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Grads<T>, lr: f64) {
        if self.velocity.is_empty() {
            self.velocity = grads.slots().iter().map(|g| alloc::vec![T::zero(); g.len()]).collect();
        }
        let eta = T::from_f64c(lr);
        let d = T::from_f64c(self.weight_decay);
        let mu = T::from_f64c(self.momentum);
        for ((p, g), v) in params.iter_mut().zip(grads.slots()).zip(&mut self.velocity) {
            if !p.trainable || g.is_empty() {
                continue;
            }
            let w = p.tensor.data_mut();
            if lr == 0.0 {
                if self.momentum != 0.0 {
                    for ((vi, &gi), &wi) in v.iter_mut().zip(g).zip(w.iter()) {
                        *vi = mu * *vi + gi + d * wi;
                    }
                }
                continue;
            }
            if self.momentum == 0.0 {
                let keep = T::one() - eta * d;
                for (wi, &gi) in w.iter_mut().zip(g) {
                    *wi = *wi * keep - eta * gi;
                }
                continue;
            }
            for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = mu * *vi + gi + d * *wi;
                *wi -= eta * *vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store() -> Params<f32> {
        let mut p = Params::new();
        p.push("w".into(), Tensor::from_vec(&[3], alloc::vec![0.3, -1.7, 2.5]).unwrap(), true);
        p.push("buf".into(), Tensor::from_vec(&[1], alloc::vec![4.0]).unwrap(), false);
        p
    }

    #[test]
    fn zero_rate_is_identity() {
        let mut p = store();
        let before = p.clone();
        let mut g = p.zero_grads();
        g.slot_mut(p.find("w").unwrap()).copy_from_slice(&[1.0, 2.0, 3.0]);
        Sgd::new(0.9, 1e-4).step(&mut p, &g, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn decay_only_step_scales_exactly() {
        let mut p = store();
        let before = p.clone();
        let g = p.zero_grads();
        let (eta, d) = (0.1, 0.01);
        Sgd::new(0.0, d).step(&mut p, &g, eta);
        let keep = 1.0f32 - eta as f32 * d as f32;
        for (a, b) in p.iter().zip(before.iter()) {
            let expect: Vec<f32> = if a.trainable { b.tensor.data().iter().map(|w| w * keep).collect() } else { b.tensor.data().to_vec() };
            assert_eq!(a.tensor.data(), expect.as_slice());
        }
    }
}
