//! Accuracy, class-averaged accuracy and part-segmentation IoU.

use std::fmt::Write as _;

use crate::data::Category;
use crate::network::TaskKind;
use crate::numerics::{Real, Tensor};
use crate::{Error, Result};

/// Global part id with the largest logit among `parts`; ties pick the earlier entry.
pub fn restricted_argmax<T: Real>(row: &[T], parts: &[usize]) -> usize {
    let mut best = parts[0];
    for &p in &parts[1..] {
        if row[p] > row[best] {
            best = p;
        }
    }
    best
}

pub fn predict_parts<T: Real>(logits: &Tensor<T>, parts: &[usize]) -> Vec<usize> {
    (0..logits.rows()).map(|i| restricted_argmax(logits.row(i), parts)).collect()
}

/// Mean over `parts` of |pred ∩ truth| / |pred ∪ truth|; a part absent from
/// both counts as IoU 1.
pub fn shape_iou(pred: &[usize], truth: &[usize], parts: &[usize]) -> f64 {
    let total: f64 = parts
        .iter()
        .map(|&p| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&a, &b) in pred.iter().zip(truth) {
                let (x, y) = (a == p, b == p);
                inter += (x && y) as usize;
                union += (x || y) as usize;
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .sum();
    total / parts.len() as f64
}

/// One segmented shape: per-point logits over all parts, ground truth and category.
#[derive(Clone, Copy, Debug)]
pub struct SegShape<'a, T> {
    pub logits: &'a Tensor<T>,
    pub truth: &'a [usize],
    pub category: usize,
}

/// Per-shape IoU (argmax restricted to the shape's category) and their mean.
/// An empty shape list has mIoU 0.
pub fn compute_miou<T: Real>(shapes: &[SegShape<'_, T>], categories: &[Category]) -> Result<(Vec<f64>, f64)> {
    let mut ious = Vec::with_capacity(shapes.len());
    for s in shapes {
        let cat = categories
            .get(s.category)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown category {}", s.category)))?;
        if s.truth.len() != s.logits.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} logit rows",
                s.truth.len(),
                s.logits.rows()
            )));
        }
        ious.push(shape_iou(&predict_parts(s.logits, &cat.parts), s.truth, &cat.parts));
    }
    let miou = if ious.is_empty() { 0.0 } else { ious.iter().sum::<f64>() / ious.len() as f64 };
    Ok((ious, miou))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub task: TaskKind,
    /// Classes (classification) or parts (segmentation).
    pub class_names: Vec<String>,
    /// `confusion[truth][pred]`, counted per cloud or per point.
    pub confusion: Vec<Vec<usize>>,
    pub overall_acc: f64,
    /// Mean of `per_class_acc` over classes that occur in the ground truth.
    pub avg_class_acc: f64,
    /// 0 for classes with no ground-truth samples.
    pub per_class_acc: Vec<f64>,
    pub miou: Option<f64>,
    pub category_names: Vec<String>,
    /// Mean shape IoU per category; 0 for categories with no shapes.
    pub per_category_iou: Vec<f64>,
}

impl MetricReport {
    pub fn from_confusion(task: TaskKind, class_names: Vec<String>, confusion: Vec<Vec<usize>>) -> Self {
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        let per_class_acc: Vec<f64> = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[i] as f64 / n as f64
                }
            })
            .collect();
        let present: Vec<f64> = confusion
            .iter()
            .zip(&per_class_acc)
            .filter(|(row, _)| row.iter().sum::<usize>() > 0)
            .map(|(_, &a)| a)
            .collect();
        Self {
            task,
            class_names,
            overall_acc: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            avg_class_acc: if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 },
            per_class_acc,
            confusion,
            miou: None,
            category_names: Vec::new(),
            per_category_iou: Vec::new(),
        }
    }

    pub fn classification(class_names: Vec<String>, preds: &[usize], truth: &[usize]) -> Self {
        let c = class_names.len();
        let mut confusion = vec![vec![0; c]; c];
        for (&p, &t) in preds.iter().zip(truth) {
            confusion[t][p] += 1;
        }
        Self::from_confusion(TaskKind::Classification, class_names, confusion)
    }

    /// Point-level confusion plus per-shape IoU grouped by category.
    pub fn segmentation<T: Real>(
        part_names: Vec<String>,
        categories: &[Category],
        shapes: &[SegShape<'_, T>],
    ) -> Result<Self> {
        let (ious, miou) = compute_miou(shapes, categories)?;
        let s = part_names.len();
        let mut confusion = vec![vec![0; s]; s];
        let mut sums = vec![(0.0, 0usize); categories.len()];
        for (shape, iou) in shapes.iter().zip(&ious) {
            let parts = &categories[shape.category].parts;
            for (p, &t) in predict_parts(shape.logits, parts).into_iter().zip(shape.truth) {
                confusion[t][p] += 1;
            }
            sums[shape.category].0 += iou;
            sums[shape.category].1 += 1;
        }
        let mut r = Self::from_confusion(TaskKind::Segmentation, part_names, confusion);
        r.miou = Some(miou);
        r.category_names = categories.iter().map(|c| c.name.clone()).collect();
        r.per_category_iou = sums.iter().map(|&(s, n)| if n == 0 { 0.0 } else { s / n as f64 }).collect();
        Ok(r)
    }

    /// Validation number tracked during training: accuracy or mIoU.
    pub fn headline(&self) -> f64 {
        self.miou.unwrap_or(self.overall_acc)
    }

    /// `metric,value` lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "overall_acc,{}", self.overall_acc);
        let _ = writeln!(s, "avg_class_acc,{}", self.avg_class_acc);
        for (n, a) in self.class_names.iter().zip(&self.per_class_acc) {
            let _ = writeln!(s, "class_acc.{n},{a}");
        }
        if let Some(m) = self.miou {
            let _ = writeln!(s, "miou,{m}");
            for (n, v) in self.category_names.iter().zip(&self.per_category_iou) {
                let _ = writeln!(s, "category_iou.{n},{v}");
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "overall accuracy {:.2}%, mean class accuracy {:.2}%",
            100.0 * self.overall_acc,
            100.0 * self.avg_class_acc
        );
        if let Some(m) = self.miou {
            let _ = write!(s, ", mIoU {:.4}", m);
            for (n, v) in self.category_names.iter().zip(&self.per_category_iou) {
                let _ = write!(s, "\n  {n:<14} IoU {v:.4}");
            }
        }
        for (n, a) in self.class_names.iter().zip(&self.per_class_acc) {
            let _ = write!(s, "\n  {n:<14} acc {:.2}%", 100.0 * a);
        }
        s
    }
}
