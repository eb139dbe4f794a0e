//! Full network: FR branch of E-M modules, MR down/up-sampling branch, the
//! channel-gated merge and the classification or segmentation head.

mod fr;
mod head;
mod loss;
mod merge;
mod mr;

pub use fr::{FrBranch, FrCache, FrOutput};
pub use head::{ClsCache, ClsHead, SegCache, SegHead};
pub use loss::{
    combine_losses, cross_entropy, total_loss, weighted_total_loss, LossBreakdown, ERROR_LOSS_WEIGHTS,
};
pub use merge::{merge, MergeCache, MergeGate};
pub use mr::{pad_map, padded_len, MrBranch, MrCache};

use crate::grouping::DilationVector;
use crate::layers::{BnUpdate, Forward, Mode};
use crate::numerics::{IndexMatrix, ParamStore, Real, SplitMix64, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Segmentation,
}

/// Space in which the MR branch builds its knn graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KnnSpace {
    Feature,
    Coordinate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub task: TaskKind,
    /// Object classes (classification) or part labels (segmentation).
    pub classes: usize,
    /// Object categories fed as one-hot to the segmentation head.
    pub categories: usize,
    pub k: usize,
    pub d_max: usize,
    pub fr_widths: Vec<usize>,
    pub embed_width: usize,
    /// Widths of the N/4 and N/16 levels.
    pub mr_widths: [usize; 2],
    pub mr_out_width: usize,
    pub k_mr: usize,
    pub mr_knn: KnnSpace,
    pub cls_hidden: Vec<usize>,
    pub seg_hidden: Vec<usize>,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub graph_depth: usize,
    pub surrogate: bool,
    pub head_hidden_relu: bool,
    pub normalize_metrics: bool,
    pub er_weights: Vec<f64>,
}

impl NetConfig {
    /// Small-scale defaults used for synthetic data (64 points per cloud).
    pub fn desk(task: TaskKind, classes: usize, categories: usize) -> Self {
        Self {
            task,
            classes,
            categories,
            k: 8,
            d_max: 5,
            fr_widths: vec![64, 64, 128, 256],
            embed_width: 256,
            mr_widths: [128, 256],
            mr_out_width: 256,
            k_mr: 20,
            mr_knn: KnnSpace::Feature,
            cls_hidden: vec![512, 256],
            seg_hidden: vec![256, 128],
            dropout: 0.5,
            leaky_slope: 0.2,
            graph_depth: 1,
            surrogate: true,
            head_hidden_relu: false,
            normalize_metrics: false,
            er_weights: ERROR_LOSS_WEIGHTS.to_vec(),
        }
    }

    /// Full-size widths (1024-d embedding, k=20).
    pub fn paper(task: TaskKind, classes: usize, categories: usize) -> Self {
        Self {
            k: 20,
            embed_width: 1024,
            mr_out_width: 1024,
            ..Self::desk(task, classes, categories)
        }
    }

    /// Tiny widths for finite-difference checks.
    pub fn tiny(task: TaskKind, classes: usize, categories: usize) -> Self {
        Self {
            k: 3,
            d_max: 2,
            fr_widths: vec![4, 4, 6, 6],
            embed_width: 6,
            mr_widths: [4, 6],
            mr_out_width: 5,
            k_mr: 3,
            cls_hidden: vec![6, 5],
            seg_hidden: vec![6, 5],
            dropout: 0.0,
            surrogate: false,
            ..Self::desk(task, classes, categories)
        }
    }

    pub fn min_points(&self) -> usize {
        self.k * self.d_max
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes == 0 {
            return bad("classes must be positive".into());
        }
        if self.task == TaskKind::Segmentation && self.categories == 0 {
            return bad("segmentation needs at least one category".into());
        }
        if self.k == 0 || self.d_max == 0 || self.k_mr == 0 {
            return bad("k, d_max and k_mr must be positive".into());
        }
        if self.fr_widths.is_empty() || self.fr_widths.contains(&0) {
            return bad("fr_widths must be non-empty and positive".into());
        }
        if self.er_weights.len() != self.fr_widths.len() {
            return bad(format!(
                "{} error-loss weights for {} modules",
                self.er_weights.len(),
                self.fr_widths.len()
            ));
        }
        if self.embed_width == 0 || self.mr_out_width == 0 || self.mr_widths.contains(&0) {
            return bad("widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.graph_depth == 0 {
            return bad("graph_depth must be positive".into());
        }
        Ok(())
    }
}

/// Per-cloud, per-channel max over points. `arg` holds the winning global
/// row for each `(cloud, channel)`; ties go to the lowest row.
pub(crate) fn global_max_pool<T: Real>(x: &Tensor<T>, clouds: usize) -> (Tensor<T>, Vec<usize>) {
    let (rows, c) = (x.rows(), x.cols());
    let n = rows / clouds;
    let mut out = Tensor::full(&[clouds, c], T::neg_infinity());
    let mut arg = vec![0usize; clouds * c];
    for i in 0..rows {
        let b = i / n;
        let dst = out.row_mut(b);
        for (ch, (&v, o)) in x.row(i).iter().zip(dst.iter_mut()).enumerate() {
            if i % n == 0 || v > *o {
                *o = v;
                arg[b * c + ch] = i;
            }
        }
    }
    (out, arg)
}

pub(crate) fn global_max_pool_backward<T: Real>(d: &Tensor<T>, arg: &[usize], rows: usize) -> Tensor<T> {
    let c = d.cols();
    let mut out = Tensor::zeros(&[rows, c]);
    for (j, &r) in arg.iter().enumerate() {
        out.row_mut(r)[j % c] += d.data()[j];
    }
    out
}

#[derive(Clone, Debug)]
pub enum Head {
    Cls(ClsHead),
    Seg(SegHead),
}

/// Parameter-free network description; parameters live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Architecture {
    pub cfg: NetConfig,
    pub fr: FrBranch,
    pub mr: MrBranch,
    pub gate: MergeGate,
    pub head: Head,
}

/// A batch of equally sized clouds stacked along rows.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub coords: Tensor<T>,
    pub clouds: usize,
    /// Object category per cloud (segmentation only).
    pub categories: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn single(coords: Tensor<T>) -> Self {
        Self {
            coords,
            clouds: 1,
            categories: Vec::new(),
        }
    }

    pub fn points_per_cloud(&self) -> usize {
        self.coords.rows() / self.clouds.max(1)
    }
}

#[derive(Clone, Debug)]
pub struct NetOutput<T> {
    /// clouds×C for classification, (clouds·N)×S for segmentation.
    pub logits: Tensor<T>,
    pub error_losses: Vec<T>,
    pub dilations: Vec<DilationVector<T>>,
    pub neighbors: Vec<IndexMatrix>,
}

#[derive(Clone, Debug)]
pub struct NetCache<T> {
    fr: FrCache<T>,
    mr: MrCache<T>,
    merge: MergeCache<T>,
    head: HeadCache<T>,
}

#[derive(Clone, Debug)]
enum HeadCache<T> {
    Cls(ClsCache<T>),
    Seg(SegCache<T>),
}

impl Architecture {
    pub fn build<T: Real>(cfg: NetConfig, store: &mut ParamStore<T>, rng: &mut SplitMix64) -> Result<Self> {
        cfg.validate()?;
        let fr = FrBranch::new(store, rng, "fr", &cfg)?;
        let mr = MrBranch::new(store, rng, "mr", &cfg)?;
        let gate = MergeGate::new(store, rng, "gate", cfg.mr_out_width, cfg.embed_width)?;
        let head = match cfg.task {
            TaskKind::Classification => Head::Cls(ClsHead::new(
                store,
                rng,
                "head",
                cfg.embed_width,
                &cfg.cls_hidden,
                cfg.classes,
                cfg.dropout,
                cfg.leaky_slope,
            )?),
            TaskKind::Segmentation => Head::Seg(SegHead::new(
                store,
                rng,
                "head",
                cfg.embed_width,
                &cfg.seg_hidden,
                cfg.classes,
                cfg.categories,
                cfg.leaky_slope,
            )?),
        };
        Ok(Self {
            cfg,
            fr,
            mr,
            gate,
            head,
        })
    }

    pub fn forward<T: Real>(&self, fwd: &mut Forward<'_, T>, batch: &Batch<T>) -> Result<(NetOutput<T>, NetCache<T>)> {
        let p0 = &batch.coords;
        if p0.shape().len() != 2 || p0.cols() != 3 {
            return Err(Error::Shape(format!("expected N×3 coordinates, got {:?}", p0.shape())));
        }
        if batch.clouds == 0 || !p0.rows().is_multiple_of(batch.clouds) {
            return Err(Error::Shape(format!(
                "{} rows do not split into {} clouds",
                p0.rows(),
                batch.clouds
            )));
        }
        if self.cfg.task == TaskKind::Segmentation && batch.categories.len() != batch.clouds {
            return Err(Error::InvalidArgument(format!(
                "{} categories for {} clouds",
                batch.categories.len(),
                batch.clouds
            )));
        }
        let (fro, frc) = self.fr.forward(fwd, p0, batch.clouds)?;
        let (fmr, mrc) = self.mr.forward(fwd, &fro.f1, p0, batch.clouds)?;
        let (fdr, mc) = self.gate.forward(fwd, &fro.features, &fmr, batch.clouds)?;
        let (logits, hc) = match &self.head {
            Head::Cls(h) => {
                let (l, c) = h.forward(fwd, &fdr, batch.clouds)?;
                (l, HeadCache::Cls(c))
            }
            Head::Seg(h) => {
                let (l, c) = h.forward(fwd, &fdr, &batch.categories)?;
                (l, HeadCache::Seg(c))
            }
        };
        Ok((
            NetOutput {
                logits,
                error_losses: fro.error_losses,
                dilations: fro.dilations,
                neighbors: fro.neighbors,
            },
            NetCache {
                fr: frc,
                mr: mrc,
                merge: mc,
                head: hc,
            },
        ))
    }

    /// Accumulates parameter gradients of `<d_logits, logits> + Σ d_er[i]·L_er[i]`
    /// and returns the gradient with respect to the input coordinates.
    pub fn backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        cache: &NetCache<T>,
        d_logits: &Tensor<T>,
        d_er: &[T],
    ) -> Tensor<T> {
        let d_fdr = match (&self.head, &cache.head) {
            (Head::Cls(h), HeadCache::Cls(c)) => h.backward(store, c, d_logits),
            (Head::Seg(h), HeadCache::Seg(c)) => h.backward(store, c, d_logits),
            _ => unreachable!("head cache matches head"),
        };
        let (d_ffr, d_fmr) = self.gate.backward(store, &cache.merge, &d_fdr);
        let d_f1 = self.mr.backward(store, &cache.mr, &d_fmr);
        self.fr.backward(store, &cache.fr, &d_ffr, Some(&d_f1), d_er)
    }
}

/// Architecture plus parameters.
#[derive(Clone, Debug)]
pub struct DrNet<T> {
    pub arch: Architecture,
    pub store: ParamStore<T>,
}

impl<T: Real> DrNet<T> {
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = SplitMix64::new(seed);
        let arch = Architecture::build(cfg, &mut store, &mut rng)?;
        Ok(Self { arch, store })
    }

    pub fn cfg(&self) -> &NetConfig {
        &self.arch.cfg
    }

    pub fn forward(
        &self,
        batch: &Batch<T>,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<(NetOutput<T>, NetCache<T>, Vec<BnUpdate<T>>)> {
        let mut fwd = Forward::new(&self.store, mode, dropout_seed);
        let (o, c) = self.arch.forward(&mut fwd, batch)?;
        Ok((o, c, fwd.into_updates()))
    }

    pub fn eval(&self, batch: &Batch<T>) -> Result<NetOutput<T>> {
        Ok(self.forward(batch, Mode::Eval, 0)?.0)
    }

    pub fn backward(&mut self, cache: &NetCache<T>, d_logits: &Tensor<T>, d_er: &[T]) -> Tensor<T> {
        self.arch.backward(&mut self.store, cache, d_logits, d_er)
    }

    /// Eval-mode class logits for one cloud.
    pub fn classify(&self, coords: &Tensor<T>) -> Result<Tensor<T>> {
        if self.cfg().task != TaskKind::Classification {
            return Err(Error::InvalidArgument("model is not a classifier".into()));
        }
        let out = self.eval(&Batch::single(coords.clone()))?;
        let c = out.logits.cols();
        out.logits.reshape(&[c])
    }

    /// Eval-mode per-point part logits for one cloud of the given category.
    pub fn segment(&self, coords: &Tensor<T>, category: usize) -> Result<Tensor<T>> {
        if self.cfg().task != TaskKind::Segmentation {
            return Err(Error::InvalidArgument("model is not a segmenter".into()));
        }
        let batch = Batch {
            coords: coords.clone(),
            clouds: 1,
            categories: vec![category],
        };
        Ok(self.eval(&batch)?.logits)
    }

    pub fn cast<U: Real>(&self) -> DrNet<U> {
        DrNet {
            arch: self.arch.clone(),
            store: self.store.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_uniform;

    fn small(task: TaskKind) -> NetConfig {
        NetConfig {
            k: 4,
            d_max: 3,
            fr_widths: vec![8, 8, 12, 16],
            embed_width: 16,
            mr_widths: [8, 12],
            mr_out_width: 10,
            cls_hidden: vec![16, 12],
            seg_hidden: vec![16, 12],
            ..NetConfig::desk(task, 4, 2)
        }
    }

    /// Deterministic permutation from a seed.
    fn permutation(n: usize, seed: u64) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        SplitMix64::new(seed).shuffle(&mut p);
        p
    }

    #[test]
    fn desk_shapes() {
        let net = DrNet::<f32>::new(NetConfig::desk(TaskKind::Classification, 4, 0), 1).unwrap();
        let p = rng_uniform::<f32>(3, -1.0, 1.0, &[64, 3]).unwrap();
        assert_eq!(net.classify(&p).unwrap().shape(), &[4]);
        let (fr, _) = {
            let mut fwd = Forward::eval(&net.store);
            net.arch.fr.forward(&mut fwd, &p, 1).unwrap()
        };
        assert_eq!(fr.features.shape(), &[64, 256]);
        assert_eq!(fr.f1.shape(), &[64, 64]);
        assert_eq!(fr.error_losses.len(), 4);
        assert!(fr.error_losses.iter().all(|&l| l >= 0.0));
        assert_eq!(net.arch.fr.fuse.cin(), 512);
    }

    #[test]
    fn segmentation_shape_and_padding() {
        let net = DrNet::<f64>::new(small(TaskKind::Segmentation), 2).unwrap();
        for n in [64, 60, 12] {
            let p = rng_uniform::<f64>(n as u64, -1.0, 1.0, &[n, 3]).unwrap();
            assert_eq!(net.segment(&p, 1).unwrap().shape(), &[n, 4]);
        }
        let p = rng_uniform::<f64>(5, -1.0, 1.0, &[64, 3]).unwrap();
        assert!(matches!(net.segment(&p, 2), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            net.segment(&p.gather_rows(&[0, 1, 2, 3, 4]), 0),
            Err(Error::CloudTooSmall { .. })
        ));
    }

    #[test]
    fn mr_levels_for_64_points() {
        assert_eq!(padded_len(64) / 4, 16);
        assert_eq!(padded_len(64) / 16, 4);
        let net = DrNet::<f64>::new(small(TaskKind::Classification), 2).unwrap();
        let f1 = rng_uniform::<f64>(1, -1.0, 1.0, &[64, 8]).unwrap();
        let p = rng_uniform::<f64>(2, -1.0, 1.0, &[64, 3]).unwrap();
        let (out, _) = net.arch.mr.forward(&mut Forward::eval(&net.store), &f1, &p, 1).unwrap();
        assert_eq!(out.shape(), &[64, 10]);
    }

    #[test]
    fn classification_is_permutation_invariant() {
        let net = DrNet::<f64>::new(small(TaskKind::Classification), 3).unwrap();
        for s in 0..5 {
            let p = rng_uniform::<f64>(100 + s, -1.0, 1.0, &[64, 3]).unwrap();
            let q = p.gather_rows(&permutation(64, s));
            let (a, b) = (net.classify(&p).unwrap(), net.classify(&q).unwrap());
            assert!(a.max_abs_diff(&b) < 1e-9, "{}", a.max_abs_diff(&b));
        }
    }

    #[test]
    fn segmentation_is_permutation_equivariant() {
        let net = DrNet::<f64>::new(small(TaskKind::Segmentation), 4).unwrap();
        for s in 0..5 {
            let p = rng_uniform::<f64>(200 + s, -1.0, 1.0, &[64, 3]).unwrap();
            let perm = permutation(64, s);
            let a = net.segment(&p, (s % 2) as usize).unwrap();
            let b = net.segment(&p.gather_rows(&perm), (s % 2) as usize).unwrap();
            assert_eq!(a.gather_rows(&perm), b);
        }
    }

    #[test]
    fn first_module_receives_gradient() {
        let mut net = DrNet::<f32>::new(small(TaskKind::Classification), 5).unwrap();
        let p = rng_uniform::<f32>(9, -1.0, 1.0, &[128, 3]).unwrap();
        let batch = Batch {
            coords: p,
            clouds: 2,
            categories: vec![],
        };
        let (o, cache, _) = net.forward(&batch, Mode::Train, 1).unwrap();
        let (_, d) = total_loss(&o.logits, &[1, 3], &o.error_losses).unwrap();
        let w: Vec<f32> = ERROR_LOSS_WEIGHTS.iter().map(|&w| w as f32).collect();
        net.backward(&cache, &d, &w);
        let id = net.arch.fr.modules[0].graph_mlps[0].linear.weight;
        assert!(net.store.grad(id).data().iter().any(|&g| g != 0.0));
        let head = net.arch.fr.modules[0].head.layer1.weight;
        assert!(net.store.grad(head).data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn eval_is_deterministic_and_batch_independent() {
        let net = DrNet::<f32>::new(small(TaskKind::Classification), 6).unwrap();
        let p = rng_uniform::<f32>(10, -1.0, 1.0, &[64, 3]).unwrap();
        let q = rng_uniform::<f32>(11, -1.0, 1.0, &[64, 3]).unwrap();
        let mut both = p.data().to_vec();
        both.extend_from_slice(q.data());
        let batch = Batch {
            coords: Tensor::from_vec(&[128, 3], both).unwrap(),
            clouds: 2,
            categories: vec![],
        };
        let o = net.eval(&batch).unwrap();
        assert_eq!(o.logits.row(0), net.classify(&p).unwrap().data());
        assert_eq!(o.logits.row(1), net.classify(&q).unwrap().data());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = NetConfig::desk(TaskKind::Classification, 4, 0);
        c.er_weights.pop();
        assert!(DrNet::<f32>::new(c, 0).is_err());
        let mut c = NetConfig::desk(TaskKind::Classification, 4, 0);
        c.dropout = 1.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(NetConfig::desk(TaskKind::Segmentation, 5, 0).validate().is_err());
    }
}
