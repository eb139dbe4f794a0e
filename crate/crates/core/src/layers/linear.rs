use crate::numerics::{matmul_nn, matmul_nt, matmul_tn_acc, ParamId, ParamStore, Real, SplitMix64, Tensor};
use crate::{Error, Result};

/// Shared per-row affine map `y = W·x + b` (a 1×1 convolution over points).
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut SplitMix64,
        name: &str,
        cin: usize,
        cout: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.insert_glorot(&format!("{name}.weight"), cout, cin, rng)?;
        let bias = if bias {
            Some(store.insert(&format!("{name}.bias"), Tensor::zeros(&[cout]), true)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            cin,
            cout,
        })
    }

    fn check(&self, x: &Tensor<impl Real>) -> Result<()> {
        if x.cols() != self.cin {
            return Err(Error::Shape(format!(
                "linear expects {} input channels, got {}",
                self.cin,
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let rows = x.rows();
        let mut y = matmul_nt(x.data(), rows, self.cin, store.value(self.weight).data(), self.cout);
        if let Some(b) = self.bias {
            let b = store.value(b).data();
            for r in y.chunks_mut(self.cout) {
                r.iter_mut().zip(b).for_each(|(v, &bb)| *v += bb);
            }
        }
        Tensor::from_vec(&[rows, self.cout], y)
    }

    /// Accumulates `dW`, `db` and returns `dX`.
    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let rows = x.rows();
        debug_assert_eq!(dy.len(), rows * self.cout);
        matmul_tn_acc(
            dy.data(),
            x.data(),
            rows,
            self.cout,
            self.cin,
            store.grad_mut(self.weight).data_mut(),
        );
        if let Some(b) = self.bias {
            let mut db = vec![T::zero(); self.cout];
            for r in dy.data().chunks(self.cout) {
                db.iter_mut().zip(r).for_each(|(s, &v)| *s += v);
            }
            store.add_grad(b, &db);
        }
        let dx = matmul_nn(dy.data(), rows, self.cout, store.value(self.weight).data(), self.cin);
        Tensor::from_vec(&[rows, self.cin], dx).expect("linear backward shape")
    }
}
