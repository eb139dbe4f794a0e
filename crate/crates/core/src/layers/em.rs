//! Error-minimizing module: adaptive dilated grouping, local graph encoding,
//! neighbor max-pooling, and a back-projection branch whose reconstruction
//! error is returned as an auxiliary loss.

use super::graph::{error_loss, error_loss_grad};
use super::{
    graph_encode, graph_encode_backward, max_pool_backward, max_pool_neighbors, Activation, BackProjection,
    Forward, MlpCache, MlpLayer,
};
use crate::geometry::candidates_raw;
use crate::grouping::{dilated_select_raw, DilationHead, DilationVector, HeadCache};
use crate::numerics::{par, IndexMatrix, ParamStore, Real, SplitMix64, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    pub k: usize,
    pub d_max: usize,
    pub c_in: usize,
    pub c_out: usize,
    /// Number of edge MLPs; the first one produces the graph fed to back-projection.
    pub graph_depth: usize,
    pub leaky_slope: f64,
    /// Route loss gradient into the dilation head through the unit surrogate factor.
    pub surrogate: bool,
    pub head_hidden_relu: bool,
    pub normalize_metrics: bool,
}

impl EmConfig {
    pub fn new(k: usize, d_max: usize, c_in: usize, c_out: usize) -> Self {
        Self {
            k,
            d_max,
            c_in,
            c_out,
            graph_depth: 1,
            leaky_slope: 0.2,
            surrogate: true,
            head_hidden_relu: false,
            normalize_metrics: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmModule {
    pub head: DilationHead,
    pub graph_mlps: Vec<MlpLayer>,
    pub back_proj: BackProjection,
    pub cfg: EmConfig,
}

#[derive(Clone, Debug)]
pub struct EmOutput<T> {
    /// rows×c_out pooled local features.
    pub features: Tensor<T>,
    /// Mean back-projection error over every point of the batch.
    pub error_loss: T,
    pub dilation: DilationVector<T>,
    /// Selected neighbors as row indices into the batch.
    pub neighbors: IndexMatrix,
}

#[derive(Clone, Debug)]
pub struct EmCache<T> {
    input: Tensor<T>,
    neighbors: IndexMatrix,
    head: HeadCache<T>,
    mlps: Vec<MlpCache<T>>,
    back_proj: MlpCache<T>,
    back_projected: Tensor<T>,
    pooled: Tensor<T>,
    argmax: Vec<u32>,
}

impl EmModule {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut SplitMix64, name: &str, cfg: EmConfig) -> Result<Self> {
        if cfg.graph_depth == 0 {
            return Err(Error::InvalidArgument("graph_depth must be at least 1".into()));
        }
        let mut head = DilationHead::new(store, rng, &format!("{name}.dilation"), cfg.k, cfg.d_max)?;
        head.hidden_relu = cfg.head_hidden_relu;
        head.normalize_metrics = cfg.normalize_metrics;
        let act = Activation::LeakyRelu(cfg.leaky_slope);
        let mut graph_mlps = Vec::with_capacity(cfg.graph_depth);
        for l in 0..cfg.graph_depth {
            let cin = if l == 0 { 2 * cfg.c_in } else { cfg.c_out };
            graph_mlps.push(MlpLayer::new(store, rng, &format!("{name}.edge{l}"), cin, cfg.c_out, true, act)?);
        }
        let back_proj = BackProjection::new(store, rng, &format!("{name}.backproj"), cfg.k, cfg.c_out, cfg.c_in, true)?;
        Ok(Self {
            head,
            graph_mlps,
            back_proj,
            cfg,
        })
    }

    /// `p` stacks `clouds` equally sized clouds along its rows.
    pub fn forward<T: Real>(
        &self,
        fwd: &mut Forward<'_, T>,
        p: &Tensor<T>,
        clouds: usize,
    ) -> Result<(EmOutput<T>, EmCache<T>)> {
        let (k, c) = (self.cfg.k, self.cfg.c_in);
        if p.cols() != c {
            return Err(Error::Shape(format!("E-M module expects {c} channels, got {}", p.cols())));
        }
        let rows = p.rows();
        if clouds == 0 || !rows.is_multiple_of(clouds) {
            return Err(Error::Shape(format!("{rows} rows do not split into {clouds} clouds")));
        }
        let n = rows / clouds;
        let width = k * self.cfg.d_max;
        if width > n {
            return Err(Error::CloudTooSmall { needed: width, got: n });
        }

        let per_cloud = par::map_range(clouds, |b| candidates_raw(&p.data()[b * n * c..(b + 1) * n * c], n, c, width));
        let mut metrics = Vec::with_capacity(rows * width);
        for (m, _) in &per_cloud {
            metrics.extend_from_slice(m);
        }
        let metrics = Tensor::from_vec(&[rows, width], metrics)?;
        let (dilation, head_cache) = self.head.forward(fwd.store, &metrics)?;
        let mut sel = Vec::with_capacity(rows * k);
        for (b, (_, cand)) in per_cloud.iter().enumerate() {
            sel.extend(dilated_select_raw(
                cand,
                width,
                &dilation.factors[b * n..(b + 1) * n],
                k,
                b * n,
            ));
        }
        let neighbors = IndexMatrix::new(rows, k, sel)?;

        let edges = graph_encode(p, &neighbors)?.reshape(&[rows * k, 2 * c])?;
        let mut mlps = Vec::with_capacity(self.graph_mlps.len());
        let (mut g, first) = self.graph_mlps[0].forward(fwd, &edges)?;
        mlps.push(first);
        let graph = g.clone().reshape(&[rows, k, self.cfg.c_out])?;
        for layer in &self.graph_mlps[1..] {
            let (next, cache) = layer.forward(fwd, &g)?;
            mlps.push(cache);
            g = next;
        }
        let (back_projected, bp_cache) = self.back_proj.forward(fwd, &graph)?;
        let err = error_loss(&back_projected, p)?;
        let (pooled, argmax) = max_pool_neighbors(&g.reshape(&[rows, k, self.cfg.c_out])?, k);

        Ok((
            EmOutput {
                features: pooled.clone(),
                error_loss: err,
                dilation,
                neighbors: neighbors.clone(),
            },
            EmCache {
                input: p.clone(),
                neighbors,
                head: head_cache,
                mlps,
                back_proj: bp_cache,
                back_projected,
                pooled,
                argmax,
            },
        ))
    }

    /// Backward for `L = <d_features, F> + d_error·L_er`; returns `∂L/∂p`.
    pub fn backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        cache: &EmCache<T>,
        d_features: &Tensor<T>,
        d_error: T,
    ) -> Tensor<T> {
        let (k, c, co) = (self.cfg.k, self.cfg.c_in, self.cfg.c_out);
        let rows = cache.input.rows();
        if self.cfg.surrogate {
            let dgate: Vec<T> = d_features
                .data()
                .chunks(co)
                .zip(cache.pooled.data().chunks(co))
                .map(|(d, f)| d.iter().zip(f).map(|(&a, &b)| a * b).sum())
                .collect();
            self.head.backward(store, &cache.head, &dgate);
        }
        let mut dg = max_pool_backward(d_features, &cache.argmax, k)
            .reshape(&[rows * k, co])
            .expect("pool grad shape");
        for (layer, lc) in self.graph_mlps.iter().zip(&cache.mlps).skip(1).rev() {
            dg = layer.backward(store, lc, &dg);
        }
        let mut dp_direct = None;
        if d_error != T::zero() {
            let dfb = error_loss_grad(&cache.back_projected, &cache.input, d_error);
            let dgraph = self.back_proj.backward(store, &cache.back_proj, &dfb);
            dg.data_mut()
                .iter_mut()
                .zip(dgraph.data())
                .for_each(|(a, &b)| *a += b);
            dp_direct = Some(dfb);
        }
        let dedges = self.graph_mlps[0].backward(store, &cache.mlps[0], &dg);
        let mut dp = graph_encode_backward(&dedges, &cache.neighbors, c);
        if let Some(dfb) = dp_direct {
            dp.data_mut().iter_mut().zip(dfb.data()).for_each(|(a, &b)| *a -= b);
        }
        dp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::numerics::{finite_difference_gradient, max_relative_error, rng_uniform};

    #[test]
    fn output_shape_and_sign() {
        let mut store = ParamStore::<f32>::new();
        let em = EmModule::new(&mut store, &mut SplitMix64::new(1), "em", EmConfig::new(4, 2, 3, 64)).unwrap();
        let p = rng_uniform::<f32>(2, -1.0, 1.0, &[32, 3]).unwrap();
        let (o, _) = em.forward(&mut Forward::new(&store, Mode::Train, 0), &p, 1).unwrap();
        assert_eq!(o.features.shape(), &[32, 64]);
        assert!(o.error_loss >= 0.0);
        assert_eq!(o.dilation.factors.len(), 32);
        assert_eq!((o.neighbors.rows, o.neighbors.cols), (32, 4));
        assert!(o.dilation.factors.iter().all(|&d| (1..=2).contains(&d)));
    }

    #[test]
    fn duplicated_cloud_gives_identical_outputs() {
        let mut store = ParamStore::<f64>::new();
        let em = EmModule::new(&mut store, &mut SplitMix64::new(4), "em", EmConfig::new(4, 2, 3, 16)).unwrap();
        let p = rng_uniform::<f64>(9, -1.0, 1.0, &[24, 3]).unwrap();
        let mut twice = p.data().to_vec();
        twice.extend_from_slice(p.data());
        let batch = Tensor::from_vec(&[48, 3], twice).unwrap();
        let (single, _) = em.forward(&mut Forward::eval(&store), &p, 1).unwrap();
        let (o, _) = em.forward(&mut Forward::eval(&store), &batch, 2).unwrap();
        for i in 0..24 {
            assert_eq!(o.features.row(i), o.features.row(i + 24));
            assert_eq!(o.features.row(i), single.features.row(i));
            assert_eq!(o.neighbors.row(i + 24).iter().map(|j| j - 24).collect::<Vec<_>>(), o.neighbors.row(i));
        }
        assert!((o.error_loss - single.error_loss).abs() < 1e-12 * single.error_loss);
    }

    #[test]
    fn too_small_cloud_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        let em = EmModule::new(&mut store, &mut SplitMix64::new(4), "em", EmConfig::new(4, 2, 3, 8)).unwrap();
        let p = rng_uniform::<f64>(9, -1.0, 1.0, &[7, 3]).unwrap();
        assert!(matches!(
            em.forward(&mut Forward::eval(&store), &p, 1),
            Err(Error::CloudTooSmall { needed: 8, got: 7 })
        ));
    }

    #[test]
    fn error_loss_gradient_matches_differences() {
        let mut store = ParamStore::<f64>::new();
        let mut cfg = EmConfig::new(3, 2, 4, 5);
        cfg.surrogate = false;
        let em = EmModule::new(&mut store, &mut SplitMix64::new(12), "em", cfg).unwrap();
        let p = rng_uniform::<f64>(13, -1.0, 1.0, &[8, 4]).unwrap();
        let zero = Tensor::zeros(&[8, 5]);
        let (_, cache) = em.forward(&mut Forward::new(&store, Mode::Train, 0), &p, 1).unwrap();
        let mut grads = store.clone();
        grads.zero_grads();
        em.backward(&mut grads, &cache, &zero, 1.0);
        for id in store.trainable_ids() {
            let mut work = store.clone();
            let fd = finite_difference_gradient(
                |v| {
                    work.value_mut(id).data_mut().copy_from_slice(v.data());
                    Ok(em.forward(&mut Forward::new(&work, Mode::Train, 0), &p, 1)?.0.error_loss)
                },
                store.value(id),
                1e-6,
            )
            .unwrap();
            let err = max_relative_error(grads.grad(id).data(), fd.data(), 1e-4);
            assert!(err < 1e-4, "{}: {err}", store.name(id));
        }
    }
}
