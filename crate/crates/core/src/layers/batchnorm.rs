use super::{BnUpdate, Forward};
use crate::numerics::{ParamId, ParamStore, Real, Tensor};
use crate::Result;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization with learned scale/shift and running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.insert(&format!("{name}.gamma"), Tensor::full(&[channels], T::one()), true)?,
            beta: store.insert(&format!("{name}.beta"), Tensor::zeros(&[channels]), true)?,
            running_mean: store.insert(&format!("{name}.running_mean"), Tensor::zeros(&[channels]), false)?,
            running_var: store.insert(
                &format!("{name}.running_var"),
                Tensor::full(&[channels], T::one()),
                false,
            )?,
            channels,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        })
    }

    pub fn forward<T: Real>(&self, fwd: &mut Forward<'_, T>, x: &Tensor<T>) -> (Tensor<T>, BnCache<T>) {
        let c = self.channels;
        let rows = x.rows();
        assert_eq!(x.cols(), c, "batch norm channels");
        let eps = T::lit(self.eps);
        let (mean, var) = if fwd.train() {
            let inv_n = T::one() / T::lit(rows as f64);
            let mut mean = vec![T::zero(); c];
            for r in x.data().chunks(c) {
                mean.iter_mut().zip(r).for_each(|(m, &v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m *= inv_n);
            let mut var = vec![T::zero(); c];
            for r in x.data().chunks(c) {
                for ((s, &v), &m) in var.iter_mut().zip(r).zip(&mean) {
                    let d = v - m;
                    *s += d * d;
                }
            }
            let unbiased: Vec<T> = if rows > 1 {
                let f = T::one() / T::lit((rows - 1) as f64);
                var.iter().map(|&s| s * f).collect()
            } else {
                var.clone()
            };
            var.iter_mut().for_each(|s| *s *= inv_n);
            fwd.push_update(BnUpdate {
                mean_id: self.running_mean,
                var_id: self.running_var,
                batch_mean: mean.clone(),
                batch_var_unbiased: unbiased,
                momentum: T::lit(self.momentum),
            });
            (mean, var)
        } else {
            (
                fwd.store.value(self.running_mean).data().to_vec(),
                fwd.store.value(self.running_var).data().to_vec(),
            )
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = fwd.store.value(self.gamma).data();
        let beta = fwd.store.value(self.beta).data();
        let mut xhat = x.data().to_vec();
        let mut y = vec![T::zero(); x.len()];
        for (xr, yr) in xhat.chunks_mut(c).zip(y.chunks_mut(c)) {
            for j in 0..c {
                xr[j] = (xr[j] - mean[j]) * inv_std[j];
                yr[j] = gamma[j] * xr[j] + beta[j];
            }
        }
        (
            Tensor::from_vec(x.shape(), y).expect("bn shape"),
            BnCache {
                xhat,
                inv_std,
                batch_stats: fwd.train(),
            },
        )
    }

    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, cache: &BnCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let c = self.channels;
        let rows = dy.rows();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (d, xh) in dy.data().chunks(c).zip(cache.xhat.chunks(c)) {
            for j in 0..c {
                dgamma[j] += d[j] * xh[j];
                dbeta[j] += d[j];
            }
        }
        let gamma = store.value(self.gamma).data().to_vec();
        let mut dx = vec![T::zero(); dy.len()];
        if cache.batch_stats {
            // dx = γ·inv_std/n · (n·dy - Σdy - x̂·Σ(dy·x̂))
            let inv_n = T::one() / T::lit(rows as f64);
            for ((o, d), xh) in dx.chunks_mut(c).zip(dy.data().chunks(c)).zip(cache.xhat.chunks(c)) {
                for j in 0..c {
                    o[j] = gamma[j] * cache.inv_std[j] * (d[j] - inv_n * (dbeta[j] + xh[j] * dgamma[j]));
                }
            }
        } else {
            for (o, d) in dx.chunks_mut(c).zip(dy.data().chunks(c)) {
                for j in 0..c {
                    o[j] = gamma[j] * cache.inv_std[j] * d[j];
                }
            }
        }
        store.add_grad(self.gamma, &dgamma);
        store.add_grad(self.beta, &dbeta);
        Tensor::from_vec(dy.shape(), dx).expect("bn backward shape")
    }
}
