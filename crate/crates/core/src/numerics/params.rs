use indexmap::IndexMap;

use super::{Real, SplitMix64, Tensor};
use crate::{Error, Result};

/// Handle to an entry of a [`ParamStore`] (its insertion index).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Buffers such as batch-norm running statistics are stored but never optimized.
    pub trainable: bool,
}

/// Named tensors with gradients, iterated in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Param<T>>,
}

/// Half-width of the symmetric uniform initializer, `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.entries.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        let (idx, _) = self.entries.insert_full(
            name.to_string(),
            Param {
                value,
                grad,
                trainable,
            },
        );
        Ok(ParamId(idx))
    }

    /// Weight of shape `[fan_out, fan_in]` drawn uniformly from `±glorot_bound`.
    pub fn insert_glorot(
        &mut self,
        name: &str,
        fan_out: usize,
        fan_in: usize,
        rng: &mut SplitMix64,
    ) -> Result<ParamId> {
        let b = glorot_bound(fan_in, fan_out);
        let data = (0..fan_out * fan_in)
            .map(|_| T::lit(rng.uniform(-b, b)))
            .collect();
        self.insert(name, Tensor::from_vec(&[fan_out, fan_in], data)?, true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).expect("param id").0
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        self.entries.get_index(id.0).expect("param id").1
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        self.entries.get_index_mut(id.0).expect("param id").1
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.param(id).value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.param_mut(id).value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.param(id).grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.param_mut(id).grad
    }

    pub fn add_grad(&mut self, id: ParamId, g: &[T]) {
        let dst = self.grad_mut(id).data_mut();
        assert_eq!(dst.len(), g.len(), "gradient length");
        for (d, &v) in dst.iter_mut().zip(g) {
            *d += v;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Param<T>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, p))| (ParamId(i), n.as_str(), p))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, _, p)| p.trainable)
            .map(|(id, _, _)| id)
            .collect()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(n, p)| {
                    (
                        n.clone(),
                        Param {
                            value: p.value.cast(),
                            grad: p.grad.cast(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }
}
