//! SGD with momentum and Adam over the trainable entries of a [`ParamStore`].
//! Both check every gradient for finiteness before touching any parameter,
//! and zero the gradients after a successful step.

use crate::data::Checkpoint;
use crate::numerics::{ParamId, ParamStore, Real, Tensor};
use crate::{Error, Result};

pub const SGD_MOMENTUM: f64 = 0.9;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

fn check_finite<T: Real>(store: &ParamStore<T>, ids: &[ParamId]) -> Result<()> {
    for &id in ids {
        if !store.grad(id).is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
        }
    }
    Ok(())
}

fn zero_buffers<T: Real>(store: &ParamStore<T>, ids: &[ParamId]) -> Vec<Tensor<T>> {
    ids.iter().map(|&id| Tensor::zeros(store.value(id).shape())).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdState<T> {
    pub momentum: f64,
    ids: Vec<ParamId>,
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Real> SgdState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let ids = store.trainable_ids();
        Self {
            momentum: SGD_MOMENTUM,
            velocity: zero_buffers(store, &ids),
            ids,
        }
    }

    /// `v ← μ·v + g; θ ← θ − lr·v`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        check_finite(store, &self.ids)?;
        let (mu, lr) = (T::lit(self.momentum), T::lit(lr));
        for (&id, v) in self.ids.iter().zip(&mut self.velocity) {
            let p = store.param_mut(id);
            for ((w, g), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(v.data_mut()) {
                *v = mu * *v + *g;
                *w -= lr * *v;
            }
        }
        store.zero_grads();
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    ids: Vec<ParamId>,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let ids = store.trainable_ids();
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: zero_buffers(store, &ids),
            v: zero_buffers(store, &ids),
            ids,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        check_finite(store, &self.ids)?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (T::lit(self.beta1), T::lit(self.beta2), T::lit(self.eps));
        let (c1, c2, lr) = (T::lit(c1), T::lit(c2), T::lit(lr));
        for ((&id, m), v) in self.ids.iter().zip(&mut self.m).zip(&mut self.v) {
            let p = store.param_mut(id);
            let it = p.value.data_mut().iter_mut().zip(p.grad.data());
            for ((w, &g), (m, v)) in it.zip(m.data_mut().iter_mut().zip(v.data_mut())) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer<T> {
    Sgd(SgdState<T>),
    Adam(AdamState<T>),
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, store: &ParamStore<T>) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd(SgdState::new(store)),
            OptimizerKind::Adam => Self::Adam(AdamState::new(store)),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        match self {
            Self::Sgd(s) => s.step(store, lr),
            Self::Adam(s) => s.step(store, lr),
        }
    }
}

impl Optimizer<f32> {
    /// Buffers go under `opt.<buffer>.<param name>`.
    pub fn save(&self, store: &ParamStore<f32>, ckpt: &mut Checkpoint) {
        match self {
            Self::Sgd(s) => {
                for (&id, v) in s.ids.iter().zip(&s.velocity) {
                    ckpt.insert(&format!("opt.velocity.{}", store.name(id)), v.clone());
                }
            }
            Self::Adam(s) => {
                for ((&id, m), v) in s.ids.iter().zip(&s.m).zip(&s.v) {
                    ckpt.insert(&format!("opt.m.{}", store.name(id)), m.clone());
                    ckpt.insert(&format!("opt.v.{}", store.name(id)), v.clone());
                }
                ckpt.insert_u64("opt.step", s.step);
            }
        }
    }

    pub fn load(&mut self, store: &ParamStore<f32>, ckpt: &Checkpoint) -> Result<()> {
        let fetch = |prefix: &str, id: ParamId, into: &mut Tensor<f32>| -> Result<()> {
            let name = format!("{prefix}.{}", store.name(id));
            let t = ckpt.get(&name)?;
            if t.shape() != into.shape() {
                return Err(Error::Checkpoint(format!("{name}: shape {:?}", t.shape())));
            }
            *into = t.clone();
            Ok(())
        };
        match self {
            Self::Sgd(s) => {
                for (&id, v) in s.ids.iter().zip(&mut s.velocity) {
                    fetch("opt.velocity", id, v)?;
                }
            }
            Self::Adam(s) => {
                for ((&id, m), v) in s.ids.iter().zip(&mut s.m).zip(&mut s.v) {
                    fetch("opt.m", id, m)?;
                    fetch("opt.v", id, v)?;
                }
                s.step = ckpt.get_u64("opt.step")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("x", Tensor::full(&[1], x), true).unwrap();
        (s, id)
    }

    #[test]
    fn sgd_zero_grad_keeps_params() {
        let (mut s, id) = scalar_store(0.3);
        let mut o = SgdState::new(&s);
        o.step(&mut s, 0.1).unwrap();
        assert_eq!(s.value(id).data(), &[0.3]);
    }

    #[test]
    fn sgd_momentum_unrolled() {
        let (mut s, id) = scalar_store(1.0);
        let mut o = SgdState::new(&s);
        s.grad_mut(id).data_mut()[0] = 1.0;
        o.step(&mut s, 0.1).unwrap();
        assert!((s.value(id).data()[0] - 0.9).abs() < 1e-15);
        assert_eq!(s.grad(id).data(), &[0.0]);
        s.grad_mut(id).data_mut()[0] = 1.0;
        o.step(&mut s, 0.1).unwrap();
        // v1 = 1, v2 = 0.9 + 1 = 1.9
        assert!((s.value(id).data()[0] - (1.0 - 0.1 * 2.9)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_and_names_param() {
        let (mut s, id) = scalar_store(1.0);
        s.grad_mut(id).data_mut()[0] = f64::NAN;
        let mut o = SgdState::new(&s);
        match o.step(&mut s, 0.1) {
            Err(Error::NonFinite(m)) => assert!(m.contains('x')),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.value(id).data(), &[1.0]);
        let mut a = AdamState::new(&s);
        assert!(a.step(&mut s, 0.1).is_err());
        assert_eq!(a.step, 0);
    }

    #[test]
    fn adam_zero_grad_and_first_step() {
        let (mut s, id) = scalar_store(0.5);
        let mut o = AdamState::new(&s);
        o.step(&mut s, 0.01).unwrap();
        assert_eq!(s.value(id).data(), &[0.5]);
        for g in [1e-3, 1.0, 1e3] {
            let (mut s, id) = scalar_store(0.0);
            let mut o = AdamState::new(&s);
            s.grad_mut(id).data_mut()[0] = g;
            o.step(&mut s, 0.01).unwrap();
            assert!((s.value(id).data()[0] + 0.01).abs() < 1e-7, "g={g}");
        }
    }

    #[test]
    fn adam_quadratic_trajectory() {
        // f(x) = x², grad 2x, lr 0.1, from x = 1; hand recurrence below.
        let (mut s, id) = scalar_store(1.0);
        let mut o = AdamState::new(&s);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            s.grad_mut(id).data_mut()[0] = 2.0 * s.value(id).data()[0];
            o.step(&mut s, 0.1).unwrap();
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((s.value(id).data()[0] - x).abs() < 1e-6, "step {t}");
        }
        // Each early step moves by about lr, so x ≈ 0.5 after five.
        assert!((x - 0.5).abs() < 0.05);
    }

    #[test]
    fn state_round_trips_through_checkpoint() {
        let mut s = ParamStore::<f32>::new();
        let id = s.insert("w", Tensor::full(&[2], 1.0), true).unwrap();
        s.insert("bn.mean", Tensor::zeros(&[2]), false).unwrap();
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut o = Optimizer::new(kind, &s);
            s.grad_mut(id).data_mut().copy_from_slice(&[0.5, -2.0]);
            o.step(&mut s, 0.1).unwrap();
            let mut c = Checkpoint::new();
            o.save(&s, &mut c);
            let mut back = Optimizer::new(kind, &s);
            back.load(&s, &c).unwrap();
            assert_eq!(back, o);
        }
    }
}
