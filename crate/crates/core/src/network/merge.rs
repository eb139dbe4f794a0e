use super::{global_max_pool, global_max_pool_backward};
use crate::layers::activation::sigmoid;
use crate::layers::{Forward, Linear};
use crate::numerics::{ParamStore, Real, SplitMix64, Tensor};
use crate::{Error, Result};

/// Channel gate computed from the pooled MR features:
/// `F_DR = F_FR ⊙ σ(W·maxpool(F_MR) + b)`.
#[derive(Clone, Debug)]
pub struct MergeGate {
    pub gate: Linear,
}

#[derive(Clone, Debug)]
pub struct MergeCache<T> {
    ffr: Tensor<T>,
    pooled: Tensor<T>,
    arg: Vec<usize>,
    sig: Tensor<T>,
    mr_rows: usize,
}

impl MergeGate {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut SplitMix64,
        name: &str,
        mr_width: usize,
        width: usize,
    ) -> Result<Self> {
        Ok(Self {
            gate: Linear::new(store, rng, name, mr_width, width, true)?,
        })
    }

    pub fn forward<T: Real>(
        &self,
        fwd: &mut Forward<'_, T>,
        ffr: &Tensor<T>,
        fmr: &Tensor<T>,
        clouds: usize,
    ) -> Result<(Tensor<T>, MergeCache<T>)> {
        let e = ffr.cols();
        if e != self.gate.cout || ffr.rows() != fmr.rows() || clouds == 0 || !ffr.rows().is_multiple_of(clouds) {
            return Err(Error::Shape(format!(
                "merge got F_FR {:?} and F_MR {:?}",
                ffr.shape(),
                fmr.shape()
            )));
        }
        let (pooled, arg) = global_max_pool(fmr, clouds);
        let sig = self.gate.forward(fwd.store, &pooled)?.map(sigmoid);
        let n = ffr.rows() / clouds;
        let mut out = ffr.clone();
        for (i, row) in out.data_mut().chunks_mut(e).enumerate() {
            row.iter_mut().zip(sig.row(i / n)).for_each(|(v, &s)| *v *= s);
        }
        Ok((
            out,
            MergeCache {
                ffr: ffr.clone(),
                pooled,
                arg,
                sig,
                mr_rows: fmr.rows(),
            },
        ))
    }

    /// Returns `(∂L/∂F_FR, ∂L/∂F_MR)`.
    pub fn backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        cache: &MergeCache<T>,
        d_out: &Tensor<T>,
    ) -> (Tensor<T>, Tensor<T>) {
        let e = cache.ffr.cols();
        let clouds = cache.sig.rows();
        let n = cache.ffr.rows() / clouds;
        let mut d_ffr = d_out.clone();
        let mut dz = Tensor::zeros(&[clouds, e]);
        for i in 0..cache.ffr.rows() {
            let b = i / n;
            let s = cache.sig.row(b);
            let f = cache.ffr.row(i);
            let dzr = dz.row_mut(b);
            for ((dv, (&fv, &sv)), acc) in d_ffr.row_mut(i).iter_mut().zip(f.iter().zip(s)).zip(dzr.iter_mut()) {
                *acc += *dv * fv;
                *dv *= sv;
            }
        }
        for (g, &s) in dz.data_mut().iter_mut().zip(cache.sig.data()) {
            *g *= s * (T::one() - s);
        }
        let dpool = self.gate.backward(store, &cache.pooled, &dz);
        (d_ffr, global_max_pool_backward(&dpool, &cache.arg, cache.mr_rows))
    }
}

/// Eval-mode gated merge of one batch.
pub fn merge<T: Real>(
    store: &ParamStore<T>,
    ffr: &Tensor<T>,
    fmr: &Tensor<T>,
    clouds: usize,
    gate: &MergeGate,
) -> Result<Tensor<T>> {
    let mut fwd = Forward::eval(store);
    Ok(gate.forward(&mut fwd, ffr, fmr, clouds)?.0)
}
