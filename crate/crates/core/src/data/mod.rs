//! Labeled clouds and datasets, synthetic generators, the text cloud format,
//! dataset manifests and binary checkpoints.

mod checkpoint;
mod cloud_io;
mod manifest;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cloud_io::{format_cloud, load_cloud, parse_cloud, save_cloud};
pub use manifest::{load_dataset, save_dataset, Manifest, ManifestEntry, Split};
pub use synth::{density_gradient_cloud, gen_cls_dataset, gen_seg_dataset, gen_seg_splits};

use crate::network::TaskKind;
use crate::numerics::{Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCloud {
    pub coords: Tensor<f32>,
    pub cloud_label: Option<usize>,
    pub point_labels: Option<Vec<usize>>,
    pub category: Option<usize>,
}

impl LabeledCloud {
    pub fn points(&self) -> usize {
        self.coords.rows()
    }
}

/// Segmentation category and the global part ids it owns.
#[derive(Clone, Debug, PartialEq)]
pub struct Category {
    pub name: String,
    pub parts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    /// Object classes (classification) or part names (segmentation).
    pub class_names: Vec<String>,
    pub categories: Vec<Category>,
    pub clouds: Vec<LabeledCloud>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Checks that every cloud carries the labels its task needs, in range.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_classes();
        for (i, c) in self.clouds.iter().enumerate() {
            let bad = |m: String| Err(Error::Data(format!("cloud {i}: {m}")));
            match self.task {
                TaskKind::Classification => match c.cloud_label {
                    Some(l) if l < n => {}
                    Some(l) => return bad(format!("label {l} out of range 0..{n}")),
                    None => return bad("missing cloud label".into()),
                },
                TaskKind::Segmentation => {
                    let Some(cat) = c.category.filter(|&k| k < self.categories.len()) else {
                        return bad("missing or unknown category".into());
                    };
                    let Some(labels) = &c.point_labels else {
                        return bad("missing point labels".into());
                    };
                    if labels.len() != c.points() {
                        return bad(format!("{} labels for {} points", labels.len(), c.points()));
                    }
                    if let Some(l) = labels.iter().find(|l| !self.categories[cat].parts.contains(l)) {
                        return bad(format!("part {l} not in category {}", self.categories[cat].name));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Moves the centroid to the origin and scales the farthest point to norm 1.
/// A cloud whose points all coincide ends up at the origin.
pub fn normalize<T: Real>(coords: &Tensor<T>) -> Tensor<T> {
    let n = coords.rows();
    let c = coords.cols();
    let inv = T::one() / T::lit(n as f64);
    let mut centroid = vec![T::zero(); c];
    for r in coords.data().chunks(c) {
        centroid.iter_mut().zip(r).for_each(|(m, &v)| *m += v);
    }
    centroid.iter_mut().for_each(|m| *m *= inv);
    let mut out = coords.clone();
    let mut max_norm = T::zero();
    for r in out.data_mut().chunks_mut(c) {
        r.iter_mut().zip(&centroid).for_each(|(v, &m)| *v -= m);
        max_norm = max_norm.max(r.iter().map(|&v| v * v).sum::<T>().sqrt());
    }
    if max_norm > T::zero() {
        out.data_mut().iter_mut().for_each(|v| *v /= max_norm);
    }
    out
}
