//! Local graph encoding, neighborhood max-pooling, back-projection and the
//! error loss.

use super::{Activation, Forward, MlpCache, MlpLayer};
use crate::numerics::{IndexMatrix, ParamStore, Real, SplitMix64, Tensor};
use crate::{Error, Result};

/// Edge features `(p_i, p_j - p_i)` for every selected neighbor `j` of `i`.
///
/// `p` is rows×c, `idx` rows×k with indices into the rows of `p`; the result
/// has shape `[rows, k, 2c]`.
pub fn graph_encode<T: Real>(p: &Tensor<T>, idx: &IndexMatrix) -> Result<Tensor<T>> {
    let (n, c) = (p.rows(), p.cols());
    if idx.rows != n {
        return Err(Error::Shape(format!("{} index rows for {n} points", idx.rows)));
    }
    if let Some(&bad) = idx.data.iter().find(|&&j| j >= n) {
        return Err(Error::InvalidArgument(format!("neighbor index {bad} out of range for {n} points")));
    }
    let k = idx.cols;
    let mut out = vec![T::zero(); n * k * 2 * c];
    for i in 0..n {
        let pi = p.row(i);
        for (s, &j) in idx.row(i).iter().enumerate() {
            let e = &mut out[(i * k + s) * 2 * c..(i * k + s + 1) * 2 * c];
            let pj = p.row(j);
            e[..c].copy_from_slice(pi);
            for a in 0..c {
                e[c + a] = pj[a] - pi[a];
            }
        }
    }
    Tensor::from_vec(&[n, k, 2 * c], out)
}

/// Adjoint of [`graph_encode`]: scatters edge gradients back onto the points.
pub fn graph_encode_backward<T: Real>(d_edges: &Tensor<T>, idx: &IndexMatrix, c: usize) -> Tensor<T> {
    let (n, k) = (idx.rows, idx.cols);
    let mut dp = vec![T::zero(); n * c];
    for i in 0..n {
        for (s, &j) in idx.row(i).iter().enumerate() {
            let e = &d_edges.data()[(i * k + s) * 2 * c..(i * k + s + 1) * 2 * c];
            for a in 0..c {
                dp[i * c + a] += e[a] - e[c + a];
                dp[j * c + a] += e[c + a];
            }
        }
    }
    Tensor::from_vec(&[n, c], dp).expect("graph backward shape")
}

/// Channel-wise max over the neighbor axis of a `[rows, k, c]` tensor.
/// Also returns the winning neighbor slot per output entry (first on ties).
pub fn max_pool_neighbors<T: Real>(g: &Tensor<T>, k: usize) -> (Tensor<T>, Vec<u32>) {
    let n = g.rows();
    let c = g.len() / (n * k);
    let mut out = vec![T::zero(); n * c];
    let mut arg = vec![0u32; n * c];
    for i in 0..n {
        let base = i * k * c;
        out[i * c..(i + 1) * c].copy_from_slice(&g.data()[base..base + c]);
        for s in 1..k {
            let row = &g.data()[base + s * c..base + (s + 1) * c];
            for a in 0..c {
                if row[a] > out[i * c + a] {
                    out[i * c + a] = row[a];
                    arg[i * c + a] = s as u32;
                }
            }
        }
    }
    (Tensor::from_vec(&[n, c], out).expect("pool shape"), arg)
}

pub fn max_pool_backward<T: Real>(d: &Tensor<T>, arg: &[u32], k: usize) -> Tensor<T> {
    let (n, c) = (d.rows(), d.cols());
    let mut g = vec![T::zero(); n * k * c];
    for i in 0..n {
        for a in 0..c {
            let s = arg[i * c + a] as usize;
            g[(i * k + s) * c + a] = d.data()[i * c + a];
        }
    }
    Tensor::from_vec(&[n, k, c], g).expect("pool backward shape")
}

/// Shared 1×k convolution over a local graph (weights c×(k·c')), then BN and ReLU.
#[derive(Clone, Debug)]
pub struct BackProjection {
    pub mlp: MlpLayer,
    pub k: usize,
    pub graph_channels: usize,
}

impl BackProjection {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut SplitMix64,
        name: &str,
        k: usize,
        graph_channels: usize,
        out_channels: usize,
        bn: bool,
    ) -> Result<Self> {
        Ok(Self {
            mlp: MlpLayer::new(store, rng, name, k * graph_channels, out_channels, bn, Activation::Relu)?,
            k,
            graph_channels,
        })
    }

    /// `g` is `[rows, k, c']`; returns rows×c.
    pub fn forward<T: Real>(&self, fwd: &mut Forward<'_, T>, g: &Tensor<T>) -> Result<(Tensor<T>, MlpCache<T>)> {
        let rows = g.rows();
        let flat = g.clone().reshape(&[rows, self.k * self.graph_channels])?;
        self.mlp.forward(fwd, &flat)
    }

    /// Returns the gradient in `[rows, k, c']` layout.
    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, cache: &MlpCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let rows = dy.rows();
        self.mlp
            .backward(store, cache, dy)
            .reshape(&[rows, self.k, self.graph_channels])
            .expect("back-projection grad shape")
    }
}

/// Back-projected features `ReLU(BN(W·flatten(G_i) + b))` for every point.
pub fn back_project<T: Real>(fwd: &mut Forward<'_, T>, g: &Tensor<T>, bp: &BackProjection) -> Result<Tensor<T>> {
    Ok(bp.forward(fwd, g)?.0)
}

/// Mean over points of the Euclidean norm of `f_B[i] - p[i]`.
pub fn error_loss<T: Real>(fb: &Tensor<T>, p: &Tensor<T>) -> Result<T> {
    if fb.shape() != p.shape() {
        return Err(Error::Shape(format!("error loss: {:?} vs {:?}", fb.shape(), p.shape())));
    }
    let c = p.cols();
    let n = p.rows();
    let total: T = fb
        .data()
        .chunks(c)
        .zip(p.data().chunks(c))
        .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt())
        .sum();
    Ok(total / T::lit(n as f64))
}

/// Gradient of `scale · error_loss` with respect to `f_B` (the gradient with
/// respect to `p` is its negation). Zero-norm rows get zero gradient.
pub fn error_loss_grad<T: Real>(fb: &Tensor<T>, p: &Tensor<T>, scale: T) -> Tensor<T> {
    let c = p.cols();
    let s = scale / T::lit(p.rows() as f64);
    let mut d = vec![T::zero(); fb.len()];
    for ((o, a), b) in d.chunks_mut(c).zip(fb.data().chunks(c)).zip(p.data().chunks(c)) {
        let norm = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt();
        if norm > T::zero() {
            for j in 0..c {
                o[j] = s * (a[j] - b[j]) / norm;
            }
        }
    }
    Tensor::from_vec(fb.shape(), d).expect("error grad shape")
}
