//! Finite-difference gradient suite.
//!
//! Every check builds a scalar loss `L = <R, y> (+ auxiliary terms)` with a
//! fixed random `R`, runs the hand-written backward pass once and compares
//! each trainable parameter and each checked input against central
//! differences in f64. Train-mode batch norm is used throughout so the batch
//! statistics are part of what gets differentiated.
//!
//! Neighbor indices, FPS selections, dilation factors and interpolation
//! weights are piecewise constant or treated as constants by the backward
//! pass; checks perturb only quantities those choices are constant in.

use crate::geometry::knn;
use crate::grouping::DilationHead;
use crate::layers::{
    error_loss, error_loss_grad, graph_encode, graph_encode_backward, max_pool_backward, max_pool_neighbors,
    Activation, BackProjection, BatchNorm, Dropout, EmConfig, EmModule, Forward, Linear, MlpLayer, Mode,
};
use crate::network::{
    cross_entropy, weighted_total_loss, Architecture, Batch, ClsHead, FrBranch, MergeGate, MrBranch, NetConfig,
    SegHead, TaskKind,
};
use crate::numerics::{finite_difference_gradient, relative_error, ParamStore, SplitMix64, Tensor};
use crate::Result;

/// Central-difference step.
pub const FD_EPS: f64 = 1e-6;
/// Denominator floor for relative errors.
pub const REL_FLOOR: f64 = 1e-4;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Points per cloud and clouds per batch in the suite.
pub const SUITE_POINTS: usize = 8;
pub const SUITE_CLOUDS: usize = 2;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Number of gradient entries compared.
    pub entries: usize,
    /// Parameter or input holding the worst entry.
    pub worst: String,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

type Inputs = Vec<Tensor<f64>>;

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn random(rng: &mut SplitMix64, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).expect("positive shape")
}

struct Tracker {
    max: f64,
    entries: usize,
    worst: String,
}

impl Tracker {
    fn compare(&mut self, label: &str, analytic: &Tensor<f64>, numeric: &Tensor<f64>) {
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            let e = relative_error(*a, *n, REL_FLOOR);
            if e > self.max || self.entries == 0 {
                self.max = self.max.max(e);
                self.worst = format!("{label} (analytic {a:.6e}, numeric {n:.6e})");
            }
            self.entries += 1;
        }
    }
}

/// Compares analytic gradients of `loss` with central differences over every
/// trainable parameter in `store` and every tensor in `inputs`.
///
/// `grad` must zero-initialise nothing itself: it receives a store with zeroed
/// gradients, accumulates parameter gradients into it and returns the input
/// gradients in the order of `inputs`.
pub fn check<L, G>(name: &str, store: &ParamStore<f64>, inputs: &Inputs, loss: L, grad: G) -> Result<GradCheck>
where
    L: Fn(&ParamStore<f64>, &Inputs) -> Result<f64>,
    G: Fn(&mut ParamStore<f64>, &Inputs) -> Result<Inputs>,
{
    let mut analytic = store.clone();
    analytic.zero_grads();
    let d_inputs = grad(&mut analytic, inputs)?;
    let mut t = Tracker {
        max: 0.0,
        entries: 0,
        worst: String::new(),
    };
    let mut work = store.clone();
    for id in store.trainable_ids() {
        let orig = store.value(id).clone();
        let numeric = finite_difference_gradient(
            |v| {
                work.value_mut(id).data_mut().copy_from_slice(v.data());
                loss(&work, inputs)
            },
            &orig,
            FD_EPS,
        )?;
        work.value_mut(id).data_mut().copy_from_slice(orig.data());
        t.compare(store.name(id), analytic.grad(id), &numeric);
    }
    for (i, (x, dx)) in inputs.iter().zip(&d_inputs).enumerate() {
        let numeric = finite_difference_gradient(
            |v| {
                let mut probe = inputs.clone();
                probe[i] = v.clone();
                loss(store, &probe)
            },
            x,
            FD_EPS,
        )?;
        t.compare(&format!("input{i}"), dx, &numeric);
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_error: t.max,
        entries: t.entries,
        worst: t.worst,
    })
}

fn train<'a>(store: &'a ParamStore<f64>, seed: u64) -> Forward<'a, f64> {
    Forward::new(store, Mode::Train, seed)
}

fn check_mlp(rng: &mut SplitMix64, name: &str, act: Activation, bn: bool) -> Result<GradCheck> {
    let mut store = ParamStore::new();
    let layer = MlpLayer::new(&mut store, rng, "mlp", 5, 4, bn, act)?;
    let x = random(rng, &[12, 5]);
    let r = random(rng, &[12, 4]);
    check(
        name,
        &store,
        &vec![x],
        |s, x| Ok(dot(&r, &layer.forward(&mut train(s, 0), &x[0])?.0)),
        |s, x| {
            let (_, c) = layer.forward(&mut train(&s.clone(), 0), &x[0])?;
            Ok(vec![layer.backward(s, &c, &r)])
        },
    )
}

fn check_linear(rng: &mut SplitMix64) -> Result<GradCheck> {
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, rng, "linear", 6, 3, true)?;
    let x = random(rng, &[7, 6]);
    let r = random(rng, &[7, 3]);
    check(
        "linear",
        &store,
        &vec![x],
        |s, x| Ok(dot(&r, &lin.forward(s, &x[0])?)),
        |s, x| Ok(vec![lin.backward(s, &x[0], &r)]),
    )
}

fn check_bn_eval(rng: &mut SplitMix64) -> Result<GradCheck> {
    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 4)?;
    for id in [bn.gamma, bn.beta, bn.running_mean] {
        *store.value_mut(id) = random(rng, &[4]);
    }
    *store.value_mut(bn.running_var) = random(rng, &[4]).map(|v| 0.5 + v.abs());
    let x = random(rng, &[6, 4]);
    let r = random(rng, &[6, 4]);
    check(
        "batchnorm_eval",
        &store,
        &vec![x],
        |s, x| Ok(dot(&r, &bn.forward(&mut Forward::eval(s), &x[0]).0)),
        |s, x| {
            let (_, c) = bn.forward(&mut Forward::eval(&s.clone()), &x[0]);
            Ok(vec![bn.backward(s, &c, &r)])
        },
    )
}

fn check_dropout(rng: &mut SplitMix64) -> Result<GradCheck> {
    let store = ParamStore::new();
    let drop = Dropout { p: 0.4 };
    let x = random(rng, &[5, 4]);
    let r = random(rng, &[5, 4]);
    check(
        "dropout",
        &store,
        &vec![x],
        |s, x| Ok(dot(&r, &drop.forward(&mut train(s, 11), &x[0]).0)),
        |s, x| {
            let (_, mask) = drop.forward(&mut train(&s.clone(), 11), &x[0]);
            Ok(vec![drop.backward(&mask, &r)])
        },
    )
}

fn check_graph_pool(rng: &mut SplitMix64) -> Result<GradCheck> {
    let store = ParamStore::new();
    let p = random(rng, &[SUITE_POINTS, 3]);
    let idx = knn(&p, 3)?;
    let r = random(rng, &[SUITE_POINTS, 6]);
    check(
        "graph_encode_max_pool",
        &store,
        &vec![p],
        |_, x| {
            let g = graph_encode(&x[0], &idx)?;
            Ok(dot(&r, &max_pool_neighbors(&g, 3).0))
        },
        |_, x| {
            let g = graph_encode(&x[0], &idx)?;
            let (_, arg) = max_pool_neighbors(&g, 3);
            let d = max_pool_backward(&r, &arg, 3).reshape(&[SUITE_POINTS * 3, 6])?;
            Ok(vec![graph_encode_backward(&d, &idx, 3)])
        },
    )
}

fn check_back_projection(rng: &mut SplitMix64) -> Result<GradCheck> {
    let mut store = ParamStore::new();
    let bp = BackProjection::new(&mut store, rng, "bp", 3, 4, 3, true)?;
    let g = random(rng, &[SUITE_POINTS, 3, 4]);
    let r = random(rng, &[SUITE_POINTS, 3]);
    check(
        "back_projection",
        &store,
        &vec![g],
        |s, x| Ok(dot(&r, &bp.forward(&mut train(s, 0), &x[0])?.0)),
        |s, x| {
            let (_, c) = bp.forward(&mut train(&s.clone(), 0), &x[0])?;
            Ok(vec![bp.backward(s, &c, &r)])
        },
    )
}

fn check_error_loss(rng: &mut SplitMix64) -> Result<GradCheck> {
    let store = ParamStore::new();
    let fb = random(rng, &[SUITE_POINTS, 3]);
    let p = random(rng, &[SUITE_POINTS, 3]);
    check(
        "error_loss",
        &store,
        &vec![fb, p],
        |_, x| error_loss(&x[0], &x[1]),
        |_, x| {
            let d = error_loss_grad(&x[0], &x[1], 1.0);
            let neg = d.map(|v| -v);
            Ok(vec![d, neg])
        },
    )
}

fn check_dilation_head(rng: &mut SplitMix64) -> Result<GradCheck> {
    let mut store = ParamStore::new();
    let mut head = DilationHead::new(&mut store, rng, "head", 3, 2)?;
    head.hidden_relu = true;
    let m = random(rng, &[SUITE_POINTS, 6]).map(f64::abs);
    let c: Vec<f64> = (0..SUITE_POINTS).map(|_| rng.uniform(-1.0, 1.0)).collect();
    check(
        "dilation_head",
        &store,
        &vec![],
        |s, _| {
            let (d, _) = head.forward(s, &m)?;
            Ok(d.gate.iter().zip(&c).map(|(g, w)| g * w).sum())
        },
        |s, _| {
            let (_, cache) = head.forward(&s.clone(), &m)?;
            head.backward(s, &cache, &c);
            Ok(vec![])
        },
    )
}

fn tiny_em(rng: &mut SplitMix64, store: &mut ParamStore<f64>, surrogate: bool) -> Result<EmModule> {
    let mut cfg = EmConfig::new(3, 2, 3, 4);
    cfg.surrogate = surrogate;
    cfg.graph_depth = 2;
    EmModule::new(store, rng, "em", cfg)
}

fn check_em(rng: &mut SplitMix64) -> Result<GradCheck> {
    let mut store = ParamStore::new();
    let em = tiny_em(rng, &mut store, false)?;
    let rows = SUITE_CLOUDS * SUITE_POINTS;
    let p = random(rng, &[rows, 3]);
    let r = random(rng, &[rows, 4]);
    let w = 0.7;
    check(
        "em_module",
        &store,
        &vec![p],
        |s, x| {
            let (o, _) = em.forward(&mut train(s, 0), &x[0], SUITE_CLOUDS)?;
            Ok(dot(&r, &o.features) + w * o.error_loss)
        },
        |s, x| {
            let (_, c) = em.forward(&mut train(&s.clone(), 0), &x[0], SUITE_CLOUDS)?;
            Ok(vec![em.backward(s, &c, &r, w)])
        },
    )
}

/// With the surrogate on, the head receives `∂L/∂gate_i = <dF_i, F_i>`. The
/// reference is the head-parameter gradient of `Σ_i <dF_i, F_i>·gate_i(θ)`.
fn check_surrogate(rng: &mut SplitMix64) -> Result<GradCheck> {
    let mut store = ParamStore::new();
    let em = tiny_em(rng, &mut store, true)?;
    let rows = SUITE_CLOUDS * SUITE_POINTS;
    let p = random(rng, &[rows, 3]);
    let r = random(rng, &[rows, 4]);

    let (out, _) = em.forward(&mut train(&store, 0), &p, SUITE_CLOUDS)?;
    let coef: Vec<f64> = r
        .data()
        .chunks(4)
        .zip(out.features.data().chunks(4))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum())
        .collect();
    let mut metrics = Vec::new();
    for b in 0..SUITE_CLOUDS {
        let cloud = Tensor::from_vec(&[SUITE_POINTS, 3], p.data()[b * SUITE_POINTS * 3..(b + 1) * SUITE_POINTS * 3].to_vec())?;
        metrics.extend_from_slice(crate::geometry::candidate_search(&cloud, 3, 2)?.metrics.data());
    }
    let metrics = Tensor::from_vec(&[rows, 6], metrics)?;

    let mut full = store.clone();
    full.zero_grads();
    let (_, cache) = em.forward(&mut train(&store, 0), &p, SUITE_CLOUDS)?;
    em.backward(&mut full, &cache, &r, 0.0);

    let head_ids: Vec<_> = [em.head.layer1.weight, em.head.layer2.weight]
        .into_iter()
        .chain(em.head.layer1.bias)
        .chain(em.head.layer2.bias)
        .collect();
    let mut head_store = ParamStore::new();
    let mut remap = Vec::new();
    for &id in &head_ids {
        let nid = head_store.insert(store.name(id), store.value(id).clone(), true)?;
        remap.push((id, nid));
    }
    let mut head = em.head.clone();
    let lookup = |id| remap.iter().find(|(o, _)| *o == id).map(|(_, n)| *n).unwrap();
    head.layer1.weight = lookup(head.layer1.weight);
    head.layer2.weight = lookup(head.layer2.weight);
    head.layer1.bias = head.layer1.bias.map(lookup);
    head.layer2.bias = head.layer2.bias.map(lookup);

    let mut res = check(
        "em_surrogate",
        &head_store,
        &vec![],
        |s, _| {
            let (d, _) = head.forward(s, &metrics)?;
            Ok(d.gate.iter().zip(&coef).map(|(g, w)| g * w).sum())
        },
        |s, _| {
            for &(old, new) in &remap {
                let g = full.grad(old).data().to_vec();
                s.add_grad(new, &g);
            }
            Ok(vec![])
        },
    )?;
    res.name = "em_surrogate".into();
    Ok(res)
}

fn suite_cfg(task: TaskKind) -> NetConfig {
    match task {
        TaskKind::Classification => NetConfig::tiny(task, 3, 0),
        TaskKind::Segmentation => NetConfig::tiny(task, 5, 2),
    }
}

fn check_fr(rng: &mut SplitMix64) -> Result<GradCheck> {
    let cfg = suite_cfg(TaskKind::Classification);
    let mut store = ParamStore::new();
    let fr = FrBranch::new(&mut store, rng, "fr", &cfg)?;
    let rows = SUITE_CLOUDS * SUITE_POINTS;
    let p = random(rng, &[rows, 3]);
    let r = random(rng, &[rows, cfg.embed_width]);
    let r1 = random(rng, &[rows, cfg.fr_widths[0]]);
    let w = cfg.er_weights.clone();
    check(
        "fr_branch",
        &store,
        &vec![p],
        |s, x| {
            let (o, _) = fr.forward(&mut train(s, 0), &x[0], SUITE_CLOUDS)?;
            let er: f64 = o.error_losses.iter().zip(&w).map(|(l, w)| l * w).sum();
            Ok(dot(&r, &o.features) + dot(&r1, &o.f1) + er)
        },
        |s, x| {
            let (_, c) = fr.forward(&mut train(&s.clone(), 0), &x[0], SUITE_CLOUDS)?;
            Ok(vec![fr.backward(s, &c, &r, Some(&r1), &w)])
        },
    )
}

fn check_mr(rng: &mut SplitMix64, points: usize) -> Result<GradCheck> {
    let cfg = suite_cfg(TaskKind::Classification);
    let mut store = ParamStore::new();
    let mr = MrBranch::new(&mut store, rng, "mr", &cfg)?;
    let rows = SUITE_CLOUDS * points;
    let f1 = random(rng, &[rows, cfg.fr_widths[0]]);
    let coords = random(rng, &[rows, 3]);
    let r = random(rng, &[rows, cfg.mr_out_width]);
    check(
        &format!("mr_branch_n{points}"),
        &store,
        &vec![f1],
        |s, x| Ok(dot(&r, &mr.forward(&mut train(s, 0), &x[0], &coords, SUITE_CLOUDS)?.0)),
        |s, x| {
            let (_, c) = mr.forward(&mut train(&s.clone(), 0), &x[0], &coords, SUITE_CLOUDS)?;
            Ok(vec![mr.backward(s, &c, &r)])
        },
    )
}

fn check_merge(rng: &mut SplitMix64) -> Result<GradCheck> {
    let mut store = ParamStore::new();
    let gate = MergeGate::new(&mut store, rng, "gate", 5, 6)?;
    let rows = SUITE_CLOUDS * SUITE_POINTS;
    let ffr = random(rng, &[rows, 6]);
    let fmr = random(rng, &[rows, 5]);
    let r = random(rng, &[rows, 6]);
    check(
        "merge",
        &store,
        &vec![ffr, fmr],
        |s, x| Ok(dot(&r, &gate.forward(&mut train(s, 0), &x[0], &x[1], SUITE_CLOUDS)?.0)),
        |s, x| {
            let (_, c) = gate.forward(&mut train(&s.clone(), 0), &x[0], &x[1], SUITE_CLOUDS)?;
            let (a, b) = gate.backward(s, &c, &r);
            Ok(vec![a, b])
        },
    )
}

fn check_cls_head(rng: &mut SplitMix64) -> Result<GradCheck> {
    let mut store = ParamStore::new();
    let head = ClsHead::new(&mut store, rng, "head", 6, &[6, 5], 3, 0.5, 0.2)?;
    let clouds = 4;
    let x = random(rng, &[clouds * 3, 6]);
    let t = [0usize, 2, 1, 2];
    check(
        "cls_head",
        &store,
        &vec![x],
        |s, x| Ok(cross_entropy(&head.forward(&mut train(s, 5), &x[0], clouds)?.0, &t)?.0),
        |s, x| {
            let (l, c) = head.forward(&mut train(&s.clone(), 5), &x[0], clouds)?;
            let (_, d) = cross_entropy(&l, &t)?;
            Ok(vec![head.backward(s, &c, &d)])
        },
    )
}

fn check_seg_head(rng: &mut SplitMix64) -> Result<GradCheck> {
    let mut store = ParamStore::new();
    let head = SegHead::new(&mut store, rng, "head", 6, &[6, 5], 5, 2, 0.2)?;
    let rows = SUITE_CLOUDS * SUITE_POINTS;
    let x = random(rng, &[rows, 6]);
    let t: Vec<usize> = (0..rows).map(|i| (i * 7) % 5).collect();
    let cats = [1usize, 0];
    check(
        "seg_head",
        &store,
        &vec![x],
        |s, x| Ok(cross_entropy(&head.forward(&mut train(s, 0), &x[0], &cats)?.0, &t)?.0),
        |s, x| {
            let (l, c) = head.forward(&mut train(&s.clone(), 0), &x[0], &cats)?;
            let (_, d) = cross_entropy(&l, &t)?;
            Ok(vec![head.backward(s, &c, &d)])
        },
    )
}

fn check_network(rng: &mut SplitMix64, task: TaskKind) -> Result<GradCheck> {
    let cfg = suite_cfg(task);
    let mut store = ParamStore::new();
    let arch = Architecture::build(cfg.clone(), &mut store, rng)?;
    let rows = SUITE_CLOUDS * SUITE_POINTS;
    let coords = random(rng, &[rows, 3]);
    let (targets, categories) = match task {
        TaskKind::Classification => (vec![2, 0], vec![]),
        TaskKind::Segmentation => ((0..rows).map(|i| (i * 3) % 5).collect(), vec![0, 1]),
    };
    let batch = Batch {
        coords,
        clouds: SUITE_CLOUDS,
        categories,
    };
    let w = cfg.er_weights.clone();
    let name = match task {
        TaskKind::Classification => "network_cls",
        TaskKind::Segmentation => "network_seg",
    };
    check(
        name,
        &store,
        &vec![],
        |s, _| {
            let (o, _) = arch.forward(&mut train(s, 0), &batch)?;
            Ok(weighted_total_loss(&o.logits, &targets, &o.error_losses, &w)?.0.total)
        },
        |s, _| {
            let (o, c) = arch.forward(&mut train(&s.clone(), 0), &batch)?;
            let (_, d) = weighted_total_loss(&o.logits, &targets, &o.error_losses, &w)?;
            arch.backward(s, &c, &d, &w);
            Ok(vec![])
        },
    )
}

fn check_cross_entropy(rng: &mut SplitMix64) -> Result<GradCheck> {
    let store = ParamStore::new();
    let logits = random(rng, &[5, 4]).map(|v| 3.0 * v);
    let t = [3usize, 0, 1, 1, 2];
    check(
        "cross_entropy",
        &store,
        &vec![logits],
        |_, x| Ok(cross_entropy(&x[0], &t)?.0),
        |_, x| Ok(vec![cross_entropy(&x[0], &t)?.1]),
    )
}

/// Runs every check. The seed fixes parameters, inputs and probe directions.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = SplitMix64::new(seed);
    let r = &mut rng;
    Ok(vec![
        check_linear(r)?,
        check_mlp(r, "mlp_bn_relu", Activation::Relu, true)?,
        check_mlp(r, "mlp_bn_leaky_relu", Activation::LeakyRelu(0.2), true)?,
        check_mlp(r, "mlp_bn_sigmoid", Activation::Sigmoid, true)?,
        check_mlp(r, "mlp_identity", Activation::Identity, false)?,
        check_bn_eval(r)?,
        check_dropout(r)?,
        check_graph_pool(r)?,
        check_back_projection(r)?,
        check_error_loss(r)?,
        check_dilation_head(r)?,
        check_em(r)?,
        check_surrogate(r)?,
        check_fr(r)?,
        check_mr(r, SUITE_POINTS)?,
        check_mr(r, 16)?,
        check_merge(r)?,
        check_cls_head(r)?,
        check_seg_head(r)?,
        check_cross_entropy(r)?,
        check_network(r, TaskKind::Classification)?,
        check_network(r, TaskKind::Segmentation)?,
    ])
}
