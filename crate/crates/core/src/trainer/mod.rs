//! Optimizers, schedules, augmentation, vote-averaged evaluation, metrics and
//! the epoch loop with checkpoint/resume.
//!
//! Every random draw in a run comes from the master seed through
//! [`derive_seed`] with a fixed stream per purpose, indexed by epoch (shuffle)
//! or global step (augmentation, dropout). A run resumed from a checkpoint
//! therefore replays exactly the draws an uninterrupted run would make.

mod augment;
mod metrics;
mod optim;
mod schedule;

pub use augment::{argmax, augment, vote_eval, vote_segment, Similarity, Vote, DEFAULT_VOTES, SCALE_RANGE, SHIFT_RANGE};
pub use metrics::{compute_miou, predict_parts, restricted_argmax, shape_iou, MetricReport, SegShape};
pub use optim::{
    AdamState, Optimizer, OptimizerKind, SgdState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, SGD_MOMENTUM,
};
pub use schedule::{cosine_lr, cosine_lr_range, step_decay_lr, step_decay_lr_with, LrSchedule};

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{load_checkpoint, save_checkpoint, Checkpoint, Dataset, LabeledCloud};
use crate::layers::{apply_bn_updates, Mode};
use crate::network::{weighted_total_loss, Batch, DrNet, NetConfig, TaskKind};
use crate::numerics::{derive_seed, SplitMix64, Tensor};
use crate::{Error, Result};

const STREAM_INIT: u64 = 0x11;
const STREAM_SHUFFLE: u64 = 0x12;
const STREAM_AUGMENT: u64 = 0x13;
const STREAM_DROPOUT: u64 = 0x14;
const STREAM_VOTE: u64 = 0x15;

/// Clouds per forward pass during evaluation.
pub const EVAL_BATCH: usize = 16;
pub const LOG_HEADER: &str = "epoch,lr,ce,er1,er2,er3,er4,train_acc,val_metric";
pub const LOG_FILE: &str = "train_log.csv";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub schedule: LrSchedule,
    pub augment: bool,
}

impl TrainConfig {
    /// Desk scale: 100 epochs, batch 8; SGD + cosine for classification,
    /// Adam + step decay for segmentation.
    pub fn desk(task: TaskKind, classes: usize, categories: usize) -> Self {
        Self::with_net(NetConfig::desk(task, classes, categories), 100, 8)
    }

    /// 300 (classification) or 200 (segmentation) epochs at batch 32.
    pub fn paper(task: TaskKind, classes: usize, categories: usize) -> Self {
        let epochs = match task {
            TaskKind::Classification => 300,
            TaskKind::Segmentation => 200,
        };
        Self::with_net(NetConfig::paper(task, classes, categories), epochs, 32)
    }

    pub fn with_net(net: NetConfig, epochs: usize, batch_size: usize) -> Self {
        let (optimizer, schedule) = match net.task {
            TaskKind::Classification => (OptimizerKind::Sgd, LrSchedule::COSINE),
            TaskKind::Segmentation => (OptimizerKind::Adam, LrSchedule::STEP_DECAY),
        };
        Self {
            net,
            epochs,
            batch_size,
            seed: 1,
            optimizer,
            schedule,
            augment: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.schedule.lr(epoch, self.epochs)
    }
}

/// Loss terms of one optimizer step. `total` is the value the step optimized
/// (accumulated in the training precision); the components are exact copies.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub ce: f64,
    pub error_losses: Vec<f64>,
}

/// One line of the training log plus the steps behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub ce: f64,
    pub error_losses: Vec<f64>,
    pub total: f64,
    pub train_acc: f64,
    /// Validation accuracy (classification) or mIoU (segmentation); NaN without a validation set.
    pub val_metric: f64,
    pub steps: Vec<StepRecord>,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        let mut s = format!("{},{},{}", self.epoch, self.lr, self.ce);
        for e in &self.error_losses {
            let _ = write!(s, ",{e}");
        }
        let _ = write!(s, ",{},{}", self.train_acc, self.val_metric);
        s
    }
}

fn stack_batch(clouds: &[&LabeledCloud], coords: Vec<Tensor<f32>>, task: TaskKind) -> Result<Batch<f32>> {
    let n = coords[0].rows();
    if coords.iter().any(|c| c.rows() != n) {
        return Err(Error::Data("clouds in one batch must have the same number of points".into()));
    }
    let mut data = Vec::with_capacity(n * 3 * coords.len());
    for c in &coords {
        data.extend_from_slice(c.data());
    }
    let categories = match task {
        TaskKind::Segmentation => clouds
            .iter()
            .map(|c| c.category.ok_or_else(|| Error::Data("cloud without category".into())))
            .collect::<Result<_>>()?,
        TaskKind::Classification => Vec::new(),
    };
    Ok(Batch {
        coords: Tensor::from_vec(&[n * coords.len(), 3], data)?,
        clouds: coords.len(),
        categories,
    })
}

fn targets(clouds: &[&LabeledCloud], task: TaskKind) -> Result<Vec<usize>> {
    let missing = || Error::Data("cloud without the labels its task needs".into());
    match task {
        TaskKind::Classification => clouds.iter().map(|c| c.cloud_label.ok_or_else(missing)).collect(),
        TaskKind::Segmentation => {
            let mut t = Vec::new();
            for c in clouds {
                t.extend_from_slice(c.point_labels.as_deref().ok_or_else(missing)?);
            }
            Ok(t)
        }
    }
}

/// Predicted labels for the rows of `logits` (one per cloud or per point).
fn batch_predictions(logits: &Tensor<f32>, batch: &Batch<f32>, ds: &Dataset) -> Vec<usize> {
    match ds.task {
        TaskKind::Classification => (0..logits.rows())
            .map(|i| argmax(&logits.row(i).iter().map(|&v| v as f64).collect::<Vec<_>>()))
            .collect(),
        TaskKind::Segmentation => {
            let n = batch.points_per_cloud();
            (0..logits.rows())
                .map(|i| restricted_argmax(logits.row(i), &ds.categories[batch.categories[i / n]].parts))
                .collect()
        }
    }
}

/// Model, optimizer state and progress counters.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub net: DrNet<f32>,
    pub opt: Optimizer<f32>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub best_val: f64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = DrNet::new(cfg.net.clone(), derive_seed(cfg.seed, STREAM_INIT, 0))?;
        let opt = Optimizer::new(cfg.optimizer, &net.store);
        Ok(Self {
            cfg,
            net,
            opt,
            epoch: 0,
            step: 0,
            best_val: f64::NEG_INFINITY,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::from_store(&self.net.store);
        self.opt.save(&self.net.store, &mut c);
        c.insert_u64("meta.seed", self.cfg.seed);
        c.insert_u64("meta.classes", self.cfg.net.classes as u64);
        c.insert_u64("meta.categories", self.cfg.net.categories as u64);
        c.insert_u64("meta.epoch", self.epoch as u64);
        c.insert_u64("meta.step", self.step);
        c.insert_f64("meta.best_val", self.best_val);
        c
    }

    /// Class and category counts the checkpointed model was built with.
    pub fn checkpoint_label_counts(ckpt: &Checkpoint) -> Result<(usize, usize)> {
        Ok((
            ckpt.get_u64("meta.classes")? as usize,
            ckpt.get_u64("meta.categories")? as usize,
        ))
    }

    pub fn from_checkpoint(cfg: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(cfg)?;
        ckpt.restore_store(&mut t.net.store)?;
        t.opt.load(&t.net.store, ckpt)?;
        let seed = ckpt.get_u64("meta.seed")?;
        if seed != t.cfg.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with seed {seed}, config says {}",
                t.cfg.seed
            )));
        }
        t.epoch = ckpt.get_u64("meta.epoch")? as usize;
        t.step = ckpt.get_u64("meta.step")?;
        t.best_val = ckpt.get_f64("meta.best_val")?;
        Ok(t)
    }

    /// One pass over `train` in a seeded shuffled order; the last partial batch is kept.
    /// Returns the record without the validation metric (NaN).
    pub fn train_epoch(&mut self, train: &Dataset) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        if train.task != self.cfg.net.task {
            return Err(Error::Data("dataset task does not match the model".into()));
        }
        let epoch = self.epoch;
        let lr = self.cfg.lr(epoch);
        let seed = self.cfg.seed;
        let weights = self.cfg.net.er_weights.clone();
        let d_er: Vec<f32> = weights.iter().map(|&w| w as f32).collect();
        let mut order: Vec<usize> = (0..train.len()).collect();
        SplitMix64::new(derive_seed(seed, STREAM_SHUFFLE, epoch as u64)).shuffle(&mut order);

        let mut steps = Vec::new();
        let (mut correct, mut seen) = (0usize, 0usize);
        for chunk in order.chunks(self.cfg.batch_size) {
            let clouds: Vec<&LabeledCloud> = chunk.iter().map(|&i| &train.clouds[i]).collect();
            let mut rng = SplitMix64::new(derive_seed(seed, STREAM_AUGMENT, self.step));
            let coords = clouds
                .iter()
                .map(|c| if self.cfg.augment { augment(&c.coords, &mut rng) } else { c.coords.clone() })
                .collect();
            let batch = stack_batch(&clouds, coords, train.task)?;
            let target = targets(&clouds, train.task)?;

            let (out, cache, updates) =
                self.net
                    .forward(&batch, Mode::Train, derive_seed(seed, STREAM_DROPOUT, self.step))?;
            let (loss, d_logits) = weighted_total_loss(&out.logits, &target, &out.error_losses, &weights)?;
            let rec = StepRecord {
                epoch,
                step: self.step,
                lr,
                total: loss.total as f64,
                ce: loss.ce as f64,
                error_losses: loss.error_losses.iter().map(|&v| v as f64).collect(),
            };
            if !rec.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {} at epoch {epoch}, step {} (ce {}, error losses {:?})",
                    rec.total, self.step, rec.ce, rec.error_losses
                )));
            }
            let pred = batch_predictions(&out.logits, &batch, train);
            correct += pred.iter().zip(&target).filter(|(p, t)| p == t).count();
            seen += target.len();

            apply_bn_updates(&mut self.net.store, &updates);
            self.net.backward(&cache, &d_logits, &d_er);
            self.opt.step(&mut self.net.store, lr)?;
            self.step += 1;
            steps.push(rec);
        }
        self.epoch += 1;

        let mean = |f: &dyn Fn(&StepRecord) -> f64| steps.iter().map(f).sum::<f64>() / steps.len() as f64;
        Ok(EpochRecord {
            epoch,
            lr,
            ce: mean(&|s| s.ce),
            error_losses: (0..weights.len()).map(|i| mean(&|s| s.error_losses[i])).collect(),
            total: mean(&|s| s.total),
            train_acc: correct as f64 / seen as f64,
            val_metric: f64::NAN,
            steps,
        })
    }

    /// Trains one epoch, then scores `val` (if given) and updates `best_val`.
    /// The boolean is true when this epoch set a new best.
    pub fn run_epoch(&mut self, train: &Dataset, val: Option<&Dataset>) -> Result<(EpochRecord, bool)> {
        let mut rec = self.train_epoch(train)?;
        let tracked = match val {
            Some(v) => {
                rec.val_metric = evaluate(&self.net, v, 1, self.cfg.seed)?.headline();
                rec.val_metric
            }
            None => rec.train_acc,
        };
        let improved = tracked > self.best_val;
        if improved {
            self.best_val = tracked;
        }
        Ok((rec, improved))
    }
}

/// Scores `net` on every cloud of `ds` in eval mode. With `votes > 1`, each
/// cloud's softmax is averaged over that many randomly rescaled copies.
pub fn evaluate(net: &DrNet<f32>, ds: &Dataset, votes: usize, seed: u64) -> Result<MetricReport> {
    let mut logits: Vec<Tensor<f32>> = Vec::with_capacity(ds.len());
    if votes <= 1 {
        let mut start = 0;
        while start < ds.len() {
            let n = ds.clouds[start].points();
            let mut end = start + 1;
            while end < ds.len() && end - start < EVAL_BATCH && ds.clouds[end].points() == n {
                end += 1;
            }
            let clouds: Vec<&LabeledCloud> = ds.clouds[start..end].iter().collect();
            let batch = stack_batch(&clouds, clouds.iter().map(|c| c.coords.clone()).collect(), ds.task)?;
            let out = net.eval(&batch)?;
            let rows = out.logits.rows() / clouds.len();
            for i in 0..clouds.len() {
                let idx: Vec<usize> = (i * rows..(i + 1) * rows).collect();
                logits.push(out.logits.gather_rows(&idx));
            }
            start = end;
        }
    } else {
        for (i, c) in ds.clouds.iter().enumerate() {
            let mut rng = SplitMix64::new(derive_seed(seed, STREAM_VOTE, i as u64));
            let probs = match ds.task {
                TaskKind::Classification => {
                    let v = vote_eval(net, &c.coords, votes, Some(&mut rng))?;
                    Tensor::from_vec(&[1, v.probs.len()], v.probs)?
                }
                TaskKind::Segmentation => {
                    let cat = c.category.ok_or_else(|| Error::Data("cloud without category".into()))?;
                    vote_segment(net, &c.coords, cat, votes, Some(&mut rng))?
                }
            };
            logits.push(probs.cast());
        }
    }
    let names = ds.class_names.clone();
    match ds.task {
        TaskKind::Classification => {
            let truth = targets(&ds.clouds.iter().collect::<Vec<_>>(), ds.task)?;
            let preds: Vec<usize> = logits
                .iter()
                .map(|l| argmax(&l.data().iter().map(|&v| v as f64).collect::<Vec<_>>()))
                .collect();
            Ok(MetricReport::classification(names, &preds, &truth))
        }
        TaskKind::Segmentation => {
            let mut shapes = Vec::with_capacity(ds.len());
            for (c, l) in ds.clouds.iter().zip(&logits) {
                shapes.push(SegShape {
                    logits: l,
                    truth: c.point_labels.as_deref().ok_or_else(|| Error::Data("cloud without point labels".into()))?,
                    category: c.category.ok_or_else(|| Error::Data("cloud without category".into()))?,
                });
            }
            MetricReport::segmentation(names, &ds.categories, &shapes)
        }
    }
}

/// Where and how far [`train_loop`] runs.
#[derive(Clone, Debug, Default)]
pub struct LoopOptions {
    /// Receives the CSV log and the `last`/`best` checkpoints.
    pub out_dir: Option<PathBuf>,
    /// Continue from `out_dir/last.ckpt`.
    pub resume: bool,
    /// Stop once this many epochs are complete (the schedule still spans `cfg.epochs`).
    pub stop_after: Option<usize>,
}

fn write_log(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{LOG_HEADER}")?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    Ok(())
}

fn append_log(path: &Path, line: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Runs epochs until `cfg.epochs` (or `opts.stop_after`) are complete.
/// With an output directory, each epoch appends a log line and then rewrites
/// `last.ckpt` (and `best.ckpt` on a new best validation score). A resumed run
/// first truncates the log to the epochs recorded in the checkpoint.
pub fn train_loop(
    cfg: &TrainConfig,
    train: &Dataset,
    val: Option<&Dataset>,
    opts: &LoopOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Trainer, Vec<EpochRecord>)> {
    let log_path = opts.out_dir.as_ref().map(|d| d.join(LOG_FILE));
    let mut trainer = if opts.resume {
        let dir = opts
            .out_dir
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("resume needs an output directory".into()))?;
        let t = Trainer::from_checkpoint(cfg.clone(), &load_checkpoint(&dir.join(LAST_CHECKPOINT))?)?;
        let path = log_path.as_ref().expect("log path");
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        let kept: Vec<String> = text.lines().skip(1).take(t.epoch).map(str::to_string).collect();
        if kept.len() != t.epoch {
            return Err(Error::Data(format!(
                "{} has {} epochs, checkpoint has {}",
                path.display(),
                kept.len(),
                t.epoch
            )));
        }
        write_log(path, &kept)?;
        t
    } else {
        if let Some(d) = &opts.out_dir {
            std::fs::create_dir_all(d)?;
        }
        if let Some(p) = &log_path {
            write_log(p, &[])?;
        }
        Trainer::new(cfg.clone())?
    };
    let end = opts.stop_after.unwrap_or(cfg.epochs).min(cfg.epochs);
    let mut records = Vec::new();
    while trainer.epoch < end {
        let (rec, improved) = trainer.run_epoch(train, val)?;
        if let (Some(dir), Some(log)) = (&opts.out_dir, &log_path) {
            append_log(log, &rec.log_line())?;
            let ckpt = trainer.to_checkpoint();
            save_checkpoint(&dir.join(LAST_CHECKPOINT), &ckpt)?;
            if improved {
                save_checkpoint(&dir.join(BEST_CHECKPOINT), &ckpt)?;
            }
        }
        on_epoch(&rec);
        records.push(rec);
    }
    Ok((trainer, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_cls_dataset, gen_seg_splits};

    fn tiny_cfg(task: TaskKind, classes: usize, categories: usize) -> TrainConfig {
        let mut c = TrainConfig::with_net(NetConfig::tiny(task, classes, categories), 4, 4);
        c.seed = 3;
        c
    }

    #[test]
    fn first_epoch_logs_initial_lr() {
        let (train, test) = gen_cls_dataset(1, 3, 1, 32).unwrap();
        let cfg = tiny_cfg(TaskKind::Classification, 4, 0);
        let (_, recs) = train_loop(&cfg, &train, Some(&test), &LoopOptions { stop_after: Some(1), ..Default::default() }, |_| {}).unwrap();
        assert_eq!(recs[0].lr, 0.1);
        assert_eq!(recs[0].steps.len(), 3);
        assert!(recs[0].log_line().starts_with("0,0.1,"));
    }

    #[test]
    fn partial_batch_is_kept() {
        let (train, _) = gen_cls_dataset(1, 2, 1, 32).unwrap();
        let mut cfg = tiny_cfg(TaskKind::Classification, 4, 0);
        cfg.batch_size = 3;
        let mut t = Trainer::new(cfg).unwrap();
        let r = t.train_epoch(&train).unwrap();
        assert_eq!(r.steps.len(), 3);
        assert_eq!(t.step, 3);
    }

    #[test]
    fn loss_components_compose() {
        let (train, _) = gen_seg_splits(2, 4, 1, 32).unwrap();
        let cfg = tiny_cfg(TaskKind::Segmentation, 5, 2);
        let mut t = Trainer::new(cfg).unwrap();
        let r = t.train_epoch(&train).unwrap();
        for s in &r.steps {
            let w = [0.1, 0.01, 0.01, 0.01];
            let sum = s.ce + s.error_losses.iter().zip(w).map(|(l, w)| l * w).sum::<f64>();
            assert!((s.total - sum).abs() < 1e-6);
        }
    }

    #[test]
    fn runs_are_reproducible_and_resume_matches() {
        let (train, test) = gen_seg_splits(5, 4, 2, 32).unwrap();
        let cfg = tiny_cfg(TaskKind::Segmentation, 5, 2);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let full = LoopOptions { out_dir: Some(a.path().into()), ..Default::default() };
        let (ta, _) = train_loop(&cfg, &train, Some(&test), &full, |_| {}).unwrap();
        let half = LoopOptions { out_dir: Some(b.path().into()), stop_after: Some(2), ..Default::default() };
        train_loop(&cfg, &train, Some(&test), &half, |_| {}).unwrap();
        let rest = LoopOptions { out_dir: Some(b.path().into()), resume: true, ..Default::default() };
        let (tb, recs) = train_loop(&cfg, &train, Some(&test), &rest, |_| {}).unwrap();
        assert_eq!(recs.len(), 2);
        let la = std::fs::read(a.path().join(LOG_FILE)).unwrap();
        let lb = std::fs::read(b.path().join(LOG_FILE)).unwrap();
        assert_eq!(String::from_utf8(la.clone()).unwrap().lines().count(), 5);
        assert_eq!(la, lb);
        assert_eq!(ta.to_checkpoint(), tb.to_checkpoint());
        assert!(b.path().join(BEST_CHECKPOINT).is_file());
    }

    #[test]
    fn checkpoint_restores_trainer() {
        let (train, _) = gen_cls_dataset(1, 2, 1, 32).unwrap();
        let cfg = tiny_cfg(TaskKind::Classification, 4, 0);
        let mut t = Trainer::new(cfg.clone()).unwrap();
        t.train_epoch(&train).unwrap();
        let back = Trainer::from_checkpoint(cfg.clone(), &t.to_checkpoint()).unwrap();
        assert_eq!((back.epoch, back.step), (1, 2));
        assert_eq!(back.opt, t.opt);
        let mut other = cfg;
        other.seed = 4;
        assert!(Trainer::from_checkpoint(other, &t.to_checkpoint()).is_err());
    }

    #[test]
    fn diverging_run_reports_non_finite() {
        let (train, _) = gen_cls_dataset(1, 2, 1, 32).unwrap();
        let mut cfg = tiny_cfg(TaskKind::Classification, 4, 0);
        cfg.schedule = LrSchedule::Cosine { max: 1e30, min: 1e30 };
        let mut t = Trainer::new(cfg).unwrap();
        let mut res = Ok(());
        for _ in 0..20 {
            res = t.train_epoch(&train).map(|_| ());
            if res.is_err() {
                break;
            }
        }
        assert!(matches!(res, Err(Error::NonFinite(_))), "{res:?}");
    }

    #[test]
    fn evaluation_is_deterministic() {
        let (train, test) = gen_seg_splits(6, 2, 3, 32).unwrap();
        let t = Trainer::new(tiny_cfg(TaskKind::Segmentation, 5, 2)).unwrap();
        let a = evaluate(&t.net, &test, 1, 0).unwrap();
        assert_eq!(a, evaluate(&t.net, &test, 1, 0).unwrap());
        let v = evaluate(&t.net, &train, 3, 9).unwrap();
        assert_eq!(v, evaluate(&t.net, &train, 3, 9).unwrap());
        assert!((0.0..=1.0).contains(&v.miou.unwrap()));
    }
}
