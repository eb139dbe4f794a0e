use super::{global_max_pool, global_max_pool_backward};
use crate::layers::{Activation, Dropout, Forward, Linear, MlpCache, MlpLayer};
use crate::numerics::{concat_cols, split_cols, ParamStore, Real, SplitMix64, Tensor};
use crate::{Error, Result};

fn hidden_stack<T: Real>(
    store: &mut ParamStore<T>,
    rng: &mut SplitMix64,
    name: &str,
    cin: usize,
    widths: &[usize],
    slope: f64,
) -> Result<(Vec<MlpLayer>, usize)> {
    let mut layers = Vec::with_capacity(widths.len());
    let mut c = cin;
    for (i, &w) in widths.iter().enumerate() {
        layers.push(MlpLayer::new(
            store,
            rng,
            &format!("{name}.fc{}", i + 1),
            c,
            w,
            true,
            Activation::LeakyRelu(slope),
        )?);
        c = w;
    }
    Ok((layers, c))
}

/// Global max-pool, FC stack with dropout after each hidden layer, class logits.
#[derive(Clone, Debug)]
pub struct ClsHead {
    pub hidden: Vec<MlpLayer>,
    pub dropout: Dropout,
    pub out: Linear,
}

#[derive(Clone, Debug)]
pub struct ClsCache<T> {
    rows: usize,
    arg: Vec<usize>,
    hidden: Vec<MlpCache<T>>,
    masks: Vec<Vec<T>>,
    last: Tensor<T>,
}

impl ClsHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut SplitMix64,
        name: &str,
        cin: usize,
        widths: &[usize],
        classes: usize,
        dropout: f64,
        slope: f64,
    ) -> Result<Self> {
        let (hidden, c) = hidden_stack(store, rng, name, cin, widths, slope)?;
        let out = Linear::new(store, rng, &format!("{name}.out"), c, classes, true)?;
        Ok(Self {
            hidden,
            dropout: Dropout { p: dropout },
            out,
        })
    }

    pub fn forward<T: Real>(
        &self,
        fwd: &mut Forward<'_, T>,
        x: &Tensor<T>,
        clouds: usize,
    ) -> Result<(Tensor<T>, ClsCache<T>)> {
        let (mut h, arg) = global_max_pool(x, clouds);
        let mut hidden = Vec::with_capacity(self.hidden.len());
        let mut masks = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let (y, c) = layer.forward(fwd, &h)?;
            let (y, mask) = self.dropout.forward(fwd, &y);
            hidden.push(c);
            masks.push(mask);
            h = y;
        }
        let logits = self.out.forward(fwd.store, &h)?;
        Ok((
            logits,
            ClsCache {
                rows: x.rows(),
                arg,
                hidden,
                masks,
                last: h,
            },
        ))
    }

    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, cache: &ClsCache<T>, d_logits: &Tensor<T>) -> Tensor<T> {
        let mut d = self.out.backward(store, &cache.last, d_logits);
        for ((layer, c), mask) in self.hidden.iter().zip(&cache.hidden).zip(&cache.masks).rev() {
            d = self.dropout.backward(mask, &d);
            d = layer.backward(store, c, &d);
        }
        global_max_pool_backward(&d, &cache.arg, cache.rows)
    }
}

/// Per-point FC stack over `[F_DR, pooled F_DR, category one-hot]`.
#[derive(Clone, Debug)]
pub struct SegHead {
    pub hidden: Vec<MlpLayer>,
    pub out: Linear,
    pub categories: usize,
}

#[derive(Clone, Debug)]
pub struct SegCache<T> {
    width: usize,
    arg: Vec<usize>,
    hidden: Vec<MlpCache<T>>,
    last: Tensor<T>,
}

impl SegHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut SplitMix64,
        name: &str,
        cin: usize,
        widths: &[usize],
        parts: usize,
        categories: usize,
        slope: f64,
    ) -> Result<Self> {
        let (hidden, c) = hidden_stack(store, rng, name, 2 * cin + categories, widths, slope)?;
        let out = Linear::new(store, rng, &format!("{name}.out"), c, parts, true)?;
        Ok(Self {
            hidden,
            out,
            categories,
        })
    }

    pub fn forward<T: Real>(
        &self,
        fwd: &mut Forward<'_, T>,
        x: &Tensor<T>,
        categories: &[usize],
    ) -> Result<(Tensor<T>, SegCache<T>)> {
        let clouds = categories.len();
        if clouds == 0 || !x.rows().is_multiple_of(clouds) {
            return Err(Error::Shape(format!(
                "{} rows do not split into {clouds} clouds",
                x.rows()
            )));
        }
        if let Some(&c) = categories.iter().find(|&&c| c >= self.categories) {
            return Err(Error::InvalidArgument(format!(
                "category {c} out of range 0..{}",
                self.categories
            )));
        }
        let n = x.rows() / clouds;
        let (pooled, arg) = global_max_pool(x, clouds);
        let rows_of = |i: usize| i / n;
        let per_point: Vec<usize> = (0..x.rows()).map(rows_of).collect();
        let broadcast = pooled.gather_rows(&per_point);
        let mut onehot = Tensor::zeros(&[x.rows(), self.categories]);
        for i in 0..x.rows() {
            onehot.row_mut(i)[categories[rows_of(i)]] = T::one();
        }
        let mut h = concat_cols(&[x, &broadcast, &onehot]);
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let (y, c) = layer.forward(fwd, &h)?;
            hidden.push(c);
            h = y;
        }
        let logits = self.out.forward(fwd.store, &h)?;
        Ok((
            logits,
            SegCache {
                width: x.cols(),
                arg,
                hidden,
                last: h,
            },
        ))
    }

    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, cache: &SegCache<T>, d_logits: &Tensor<T>) -> Tensor<T> {
        let mut d = self.out.backward(store, &cache.last, d_logits);
        for (layer, c) in self.hidden.iter().zip(&cache.hidden).rev() {
            d = layer.backward(store, c, &d);
        }
        let e = cache.width;
        let mut parts = split_cols(&d, &[e, e, self.categories]).into_iter();
        let (mut dx, dbroad) = (parts.next().unwrap(), parts.next().unwrap());
        let rows = dx.rows();
        let clouds = cache.arg.len() / e;
        let n = rows / clouds;
        let mut dpool = Tensor::zeros(&[clouds, e]);
        for i in 0..rows {
            let dst = dpool.row_mut(i / n);
            dst.iter_mut().zip(dbroad.row(i)).for_each(|(a, &b)| *a += b);
        }
        let dp = global_max_pool_backward(&dpool, &cache.arg, rows);
        dx.data_mut().iter_mut().zip(dp.data()).for_each(|(a, &b)| *a += b);
        dx
    }
}
