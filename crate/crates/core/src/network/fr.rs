use super::NetConfig;
use crate::grouping::DilationVector;
use crate::layers::{Activation, EmCache, EmConfig, EmModule, Forward, MlpCache, MlpLayer};
use crate::numerics::{concat_cols, split_cols, IndexMatrix, ParamStore, Real, SplitMix64, Tensor};
use crate::Result;

/// Cascade of E-M modules whose concatenated outputs are fused to width `e`.
#[derive(Clone, Debug)]
pub struct FrBranch {
    pub modules: Vec<EmModule>,
    pub fuse: MlpLayer,
}

#[derive(Clone, Debug)]
pub struct FrOutput<T> {
    pub features: Tensor<T>,
    pub error_losses: Vec<T>,
    /// Output of the first module; feeds the MR branch.
    pub f1: Tensor<T>,
    pub dilations: Vec<DilationVector<T>>,
    pub neighbors: Vec<IndexMatrix>,
}

#[derive(Clone, Debug)]
pub struct FrCache<T> {
    ems: Vec<EmCache<T>>,
    fuse: MlpCache<T>,
}

impl FrBranch {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut SplitMix64, name: &str, cfg: &NetConfig) -> Result<Self> {
        let mut modules = Vec::with_capacity(cfg.fr_widths.len());
        let mut c_in = 3;
        for (i, &w) in cfg.fr_widths.iter().enumerate() {
            let mut ec = EmConfig::new(cfg.k, cfg.d_max, c_in, w);
            ec.graph_depth = cfg.graph_depth;
            ec.leaky_slope = cfg.leaky_slope;
            ec.surrogate = cfg.surrogate;
            ec.head_hidden_relu = cfg.head_hidden_relu;
            ec.normalize_metrics = cfg.normalize_metrics;
            modules.push(EmModule::new(store, rng, &format!("{name}.em{}", i + 1), ec)?);
            c_in = w;
        }
        let total: usize = cfg.fr_widths.iter().sum();
        let fuse = MlpLayer::new(
            store,
            rng,
            &format!("{name}.fuse"),
            total,
            cfg.embed_width,
            true,
            Activation::LeakyRelu(cfg.leaky_slope),
        )?;
        Ok(Self { modules, fuse })
    }

    pub fn widths(&self) -> Vec<usize> {
        self.modules.iter().map(|m| m.cfg.c_out).collect()
    }

    pub fn forward<T: Real>(
        &self,
        fwd: &mut Forward<'_, T>,
        p0: &Tensor<T>,
        clouds: usize,
    ) -> Result<(FrOutput<T>, FrCache<T>)> {
        let mut outs = Vec::with_capacity(self.modules.len());
        let mut ems = Vec::with_capacity(self.modules.len());
        let mut x = p0.clone();
        for m in &self.modules {
            let (o, c) = m.forward(fwd, &x, clouds)?;
            x = o.features.clone();
            outs.push(o);
            ems.push(c);
        }
        let parts: Vec<&Tensor<T>> = outs.iter().map(|o| &o.features).collect();
        let (features, fuse) = self.fuse.forward(fwd, &concat_cols(&parts))?;
        let f1 = outs[0].features.clone();
        let mut error_losses = Vec::with_capacity(outs.len());
        let mut dilations = Vec::with_capacity(outs.len());
        let mut neighbors = Vec::with_capacity(outs.len());
        for o in outs {
            error_losses.push(o.error_loss);
            dilations.push(o.dilation);
            neighbors.push(o.neighbors);
        }
        Ok((
            FrOutput {
                features,
                error_losses,
                f1,
                dilations,
                neighbors,
            },
            FrCache { ems, fuse },
        ))
    }

    /// `d_f1` is the extra gradient reaching the first module's output from MR.
    pub fn backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        cache: &FrCache<T>,
        d_features: &Tensor<T>,
        d_f1: Option<&Tensor<T>>,
        d_er: &[T],
    ) -> Tensor<T> {
        let dcat = self.fuse.backward(store, &cache.fuse, d_features);
        let mut douts = split_cols(&dcat, &self.widths());
        if let Some(extra) = d_f1 {
            douts[0].data_mut().iter_mut().zip(extra.data()).for_each(|(a, &b)| *a += b);
        }
        let mut carry: Option<Tensor<T>> = None;
        for i in (0..self.modules.len()).rev() {
            let mut d = douts[i].clone();
            if let Some(c) = carry.take() {
                d.data_mut().iter_mut().zip(c.data()).for_each(|(a, &b)| *a += b);
            }
            carry = Some(self.modules[i].backward(store, &cache.ems[i], &d, d_er[i]));
        }
        carry.expect("at least one module")
    }
}
