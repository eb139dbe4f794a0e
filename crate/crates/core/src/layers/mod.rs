//! Building blocks with explicit forward caches and backward passes.
//!
//! Activations are row matrices: one row per point (or per edge for graph
//! tensors), channels along columns. Batches stack clouds along rows, so
//! batch-norm statistics in train mode cover every row of the batch.
//! Backward functions add parameter gradients into the [`ParamStore`] and
//! return the gradient for the layer input.

pub(crate) mod activation;
mod batchnorm;
mod em;
mod graph;
mod linear;
mod mlp;

pub use activation::Activation;
pub use batchnorm::{BatchNorm, BnCache, BN_EPS, BN_MOMENTUM};
pub use em::{EmCache, EmConfig, EmModule, EmOutput};
pub use graph::{
    back_project, error_loss, error_loss_grad, graph_encode, graph_encode_backward, max_pool_backward,
    max_pool_neighbors, BackProjection,
};
pub use linear::Linear;
pub use mlp::{Dropout, MlpCache, MlpLayer};

use crate::numerics::{ParamId, ParamStore, Real, SplitMix64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Pending running-statistics update produced by a train-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub batch_mean: Vec<T>,
    pub batch_var_unbiased: Vec<T>,
    pub momentum: T,
}

/// State threaded through a forward pass: read-only parameters, the mode,
/// the dropout stream and the collected batch-norm updates.
pub struct Forward<'a, T: Real> {
    pub store: &'a ParamStore<T>,
    pub mode: Mode,
    rng: SplitMix64,
    updates: Vec<BnUpdate<T>>,
}

impl<'a, T: Real> Forward<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: Mode, dropout_seed: u64) -> Self {
        Self {
            store,
            mode,
            rng: SplitMix64::new(dropout_seed),
            updates: Vec::new(),
        }
    }

    pub fn eval(store: &'a ParamStore<T>) -> Self {
        Self::new(store, Mode::Eval, 0)
    }

    pub fn train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub(crate) fn rng(&mut self) -> &mut SplitMix64 {
        &mut self.rng
    }

    pub(crate) fn push_update(&mut self, u: BnUpdate<T>) {
        self.updates.push(u);
    }

    pub fn into_updates(self) -> Vec<BnUpdate<T>> {
        self.updates
    }
}

/// Folds batch statistics into the running buffers:
/// `running = (1 - momentum)·running + momentum·batch`.
pub fn apply_bn_updates<T: Real>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>]) {
    for u in updates {
        for (id, batch) in [(u.mean_id, &u.batch_mean), (u.var_id, &u.batch_var_unbiased)] {
            for (r, &b) in store.value_mut(id).data_mut().iter_mut().zip(batch) {
                *r = (T::one() - u.momentum) * *r + u.momentum * b;
            }
        }
    }
}
