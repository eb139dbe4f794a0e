use super::{Activation, BatchNorm, BnCache, Forward, Linear};
use crate::numerics::{ParamStore, Real, SplitMix64, Tensor};
use crate::Result;

/// Linear map, optional batch norm, activation.
#[derive(Clone, Debug)]
pub struct MlpLayer {
    pub linear: Linear,
    pub bn: Option<BatchNorm>,
    pub act: Activation,
}

#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    x: Tensor<T>,
    bn: Option<BnCache<T>>,
    y: Tensor<T>,
}

impl MlpLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut SplitMix64,
        name: &str,
        cin: usize,
        cout: usize,
        bn: bool,
        act: Activation,
    ) -> Result<Self> {
        let linear = Linear::new(store, rng, name, cin, cout, true)?;
        let bn = if bn {
            Some(BatchNorm::new(store, &format!("{name}.bn"), cout)?)
        } else {
            None
        };
        Ok(Self { linear, bn, act })
    }

    pub fn cin(&self) -> usize {
        self.linear.cin
    }

    pub fn cout(&self) -> usize {
        self.linear.cout
    }

    pub fn forward<T: Real>(&self, fwd: &mut Forward<'_, T>, x: &Tensor<T>) -> Result<(Tensor<T>, MlpCache<T>)> {
        let z = self.linear.forward(fwd.store, x)?;
        let (mut y, bn) = match &self.bn {
            Some(bn) => {
                let (y, c) = bn.forward(fwd, &z);
                (y, Some(c))
            }
            None => (z, None),
        };
        self.act.apply(y.data_mut());
        let cache = MlpCache {
            x: x.clone(),
            bn,
            y: y.clone(),
        };
        Ok((y, cache))
    }

    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, cache: &MlpCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let mut d = dy.clone();
        self.act.backward_in_place(cache.y.data(), d.data_mut());
        if let (Some(bn), Some(bc)) = (&self.bn, &cache.bn) {
            d = bn.backward(store, bc, &d);
        }
        self.linear.backward(store, &cache.x, &d)
    }
}

/// Inverted dropout: kept activations are scaled by `1/(1-p)` in train mode.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    /// Returns the output and the mask (empty when dropout is inactive).
    pub fn forward<T: Real>(&self, fwd: &mut Forward<'_, T>, x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        if !fwd.train() || self.p <= 0.0 {
            return (x.clone(), Vec::new());
        }
        let keep = T::lit(1.0 / (1.0 - self.p));
        let p = self.p;
        let mask: Vec<T> = (0..x.len())
            .map(|_| if fwd.rng().next_f64() < p { T::zero() } else { keep })
            .collect();
        let mut y = x.clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
        (y, mask)
    }

    pub fn backward<T: Real>(&self, mask: &[T], dy: &Tensor<T>) -> Tensor<T> {
        if mask.is_empty() {
            return dy.clone();
        }
        let mut d = dy.clone();
        d.data_mut().iter_mut().zip(mask).for_each(|(v, &m)| *v *= m);
        d
    }
}
