//! Adaptive dilated point grouping.
//!
//! Each point looks at the squared distances of its `k·d_max` nearest
//! candidates, a two-layer head maps them to a scalar `h`, and the dilation
//! factor is `clamp(round(5·sigmoid(h) + 0.5), 1, d_max)`. The point then
//! keeps candidates `0, d, 2d, …, (k-1)d`.
//!
//! Rounding and index selection have no derivative. When the surrogate is
//! enabled the E-M module scales its pooled output by `1 + (gate - gate)`
//! with the second term detached, which is 1 in the forward pass and hands
//! `∂L/∂gate` to [`DilationHead::backward`].

use crate::geometry::{candidate_search, CandidateSet};
use crate::layers::activation::sigmoid;
use crate::layers::Linear;
use crate::numerics::{IndexMatrix, ParamStore, Real, SplitMix64, Tensor};
use crate::{Error, Result};

pub const GATE_SCALE: f64 = 5.0;
pub const GATE_OFFSET: f64 = 0.5;

/// Two-layer projection from the candidate metrics to one scalar per point.
#[derive(Clone, Debug)]
pub struct DilationHead {
    pub layer1: Linear,
    pub layer2: Linear,
    pub k: usize,
    pub d_max: usize,
    /// ReLU between the two layers (off by default).
    pub hidden_relu: bool,
    /// Divide each metric row by its maximum before the head (off by default).
    pub normalize_metrics: bool,
}

/// Per-point dilation factors and the continuous gate they were rounded from.
#[derive(Clone, Debug, PartialEq)]
pub struct DilationVector<T> {
    pub factors: Vec<usize>,
    pub gate: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct HeadCache<T> {
    input: Tensor<T>,
    hidden: Tensor<T>,
    sig: Vec<T>,
}

/// Round half away from zero, then clamp to `[1, d_max]`.
pub fn gate_to_factor(gate: f64, d_max: usize) -> usize {
    (gate.round().max(1.0) as usize).min(d_max.max(1))
}

impl DilationHead {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut SplitMix64,
        name: &str,
        k: usize,
        d_max: usize,
    ) -> Result<Self> {
        let width = k * d_max;
        if width == 0 || !width.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "dilation head needs an even positive k·d_max, got {k}·{d_max}"
            )));
        }
        Ok(Self {
            layer1: Linear::new(store, rng, &format!("{name}.layer1"), width, width / 2, true)?,
            layer2: Linear::new(store, rng, &format!("{name}.layer2"), width / 2, 1, true)?,
            k,
            d_max,
            hidden_relu: false,
            normalize_metrics: false,
        })
    }

    pub fn width(&self) -> usize {
        self.k * self.d_max
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        metrics: &Tensor<T>,
    ) -> Result<(DilationVector<T>, HeadCache<T>)> {
        if metrics.cols() != self.width() {
            return Err(Error::Shape(format!(
                "dilation head expects {} metrics per point, got {}",
                self.width(),
                metrics.cols()
            )));
        }
        if !metrics.is_finite() {
            return Err(Error::NonFinite("candidate metrics".into()));
        }
        let mut input = metrics.clone();
        if self.normalize_metrics {
            for i in 0..input.rows() {
                let row = input.row_mut(i);
                let m = row.iter().fold(T::zero(), |a, &b| a.max(b));
                if m > T::zero() {
                    row.iter_mut().for_each(|v| *v /= m);
                }
            }
        }
        let mut hidden = self.layer1.forward(store, &input)?;
        if self.hidden_relu {
            crate::layers::Activation::Relu.apply(hidden.data_mut());
        }
        let h = self.layer2.forward(store, &hidden)?;
        let sig: Vec<T> = h.data().iter().map(|&v| sigmoid(v)).collect();
        let (scale, offset) = (T::lit(GATE_SCALE), T::lit(GATE_OFFSET));
        let gate: Vec<T> = sig.iter().map(|&s| scale * s + offset).collect();
        let factors = gate
            .iter()
            .map(|g| gate_to_factor(g.to_f64_lossy(), self.d_max))
            .collect();
        Ok((DilationVector { factors, gate }, HeadCache { input, hidden, sig }))
    }

    /// Accumulates head parameter gradients from `∂L/∂gate`. Metrics are
    /// treated as constants, so no input gradient is produced.
    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, cache: &HeadCache<T>, dgate: &[T]) {
        let scale = T::lit(GATE_SCALE);
        let dh: Vec<T> = dgate
            .iter()
            .zip(&cache.sig)
            .map(|(&g, &s)| g * scale * s * (T::one() - s))
            .collect();
        let dh = Tensor::from_vec(&[dh.len(), 1], dh).expect("head grad shape");
        let mut dhidden = self.layer2.backward(store, &cache.hidden, &dh);
        if self.hidden_relu {
            crate::layers::Activation::Relu.backward_in_place(cache.hidden.data(), dhidden.data_mut());
        }
        self.layer1.backward(store, &cache.input, &dhidden);
    }
}

/// Dilation factors for every row of a candidate metric matrix.
pub fn learn_dilation<T: Real>(
    metrics: &Tensor<T>,
    head: &DilationHead,
    store: &ParamStore<T>,
) -> Result<DilationVector<T>> {
    Ok(head.forward(store, metrics)?.0)
}

/// Candidates at positions `0, d_i, …, (k-1)·d_i` of each row, shifted by `offset`.
pub(crate) fn dilated_select_raw(
    cand: &[usize],
    width: usize,
    factors: &[usize],
    k: usize,
    offset: usize,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(factors.len() * k);
    for (i, &d) in factors.iter().enumerate() {
        let row = &cand[i * width..(i + 1) * width];
        out.extend((0..k).map(|s| row[s * d] + offset));
    }
    out
}

pub fn dilated_select<T: Real>(
    candidates: &CandidateSet<T>,
    dilation: &DilationVector<T>,
    k: usize,
) -> Result<IndexMatrix> {
    let (n, width) = (candidates.indices.rows, candidates.indices.cols);
    if dilation.factors.len() != n {
        return Err(Error::Shape(format!("{} factors for {n} points", dilation.factors.len())));
    }
    let max_d = dilation.factors.iter().copied().max().unwrap_or(1);
    if k == 0 || dilation.factors.contains(&0) || k * max_d > width {
        return Err(Error::InvalidArgument(format!(
            "{width} candidates cannot hold {k} neighbors at dilation {max_d}"
        )));
    }
    IndexMatrix::new(n, k, dilated_select_raw(&candidates.indices.data, width, &dilation.factors, k, 0))
}

/// Candidate search, learned dilation and dilated selection for one cloud.
pub fn adpg<T: Real>(
    p: &Tensor<T>,
    k: usize,
    d_max: usize,
    head: &DilationHead,
    store: &ParamStore<T>,
) -> Result<(IndexMatrix, DilationVector<T>)> {
    let cands = candidate_search(p, k, d_max)?;
    let dil = learn_dilation(&cands.metrics, head, store)?;
    let idx = dilated_select(&cands, &dil, k)?;
    Ok((idx, dil))
}
