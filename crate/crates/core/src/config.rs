//! Run configuration: a flat `key = value` file plus command-line overrides.
//!
//! ```text
//! # comments and blank lines are ignored
//! preset = desk        # desk | paper, applied before every other key
//! task = seg           # cls | seg
//! epochs = 50
//! er_weights = 0.1,0.01,0.01,0.01
//! ```
//!
//! Keys may appear in any order; a later occurrence overrides an earlier one
//! and `--set key=value` overrides the file. Unknown keys and out-of-range
//! values are errors.

use std::path::{Path, PathBuf};

use crate::data::synth::{seg_part_table, CLS_CLASSES, MIN_POINTS, SEG_PART_NAMES};
use crate::network::{KnnSpace, TaskKind};
use crate::trainer::{LrSchedule, OptimizerKind, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub train: TrainConfig,
    /// Points per generated cloud.
    pub points: usize,
    pub data_seed: u64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub train_shapes: usize,
    pub test_shapes: usize,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub votes: usize,
}

/// Every accepted key with its documented range.
pub const KEYS: &[(&str, &str)] = &[
    ("preset", "desk | paper"),
    ("task", "cls | seg"),
    ("points", "32..=100000"),
    ("k", "1..=64"),
    ("d_max", "1..=8"),
    ("embed_width", "1..=4096"),
    ("mr_embed_width", "1..=4096"),
    ("k_mr", "1..=64"),
    ("mr_knn", "feature | coords"),
    ("dropout", "0 <= p < 1"),
    ("graph_depth", "1..=4"),
    ("surrogate", "true | false"),
    ("er_weights", "four comma-separated values >= 0"),
    ("epochs", "1..=10000"),
    ("batch", "1..=1024"),
    ("seed", "u64"),
    ("data_seed", "u64"),
    ("optimizer", "sgd | adam"),
    ("schedule", "cosine | step"),
    ("augment", "true | false"),
    ("votes", "1..=100"),
    ("train_per_class", "1..=100000"),
    ("test_per_class", "0..=100000"),
    ("train_shapes", "1..=100000"),
    ("test_shapes", "0..=100000"),
    ("data_dir", "path"),
    ("out_dir", "path"),
];

/// One `key = value` assignment and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub key: String,
    pub value: String,
    pub origin: String,
}

pub fn parse_assignment(text: &str, origin: &str) -> Result<Assignment> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("{origin}: expected key=value, got {text:?}")))?;
    let (key, value) = (k.trim(), v.trim());
    if !KEYS.iter().any(|(n, _)| *n == key) {
        return Err(Error::Config(format!("{origin}: unknown key {key:?}")));
    }
    if value.is_empty() {
        return Err(Error::Config(format!("{origin}: empty value for {key}")));
    }
    Ok(Assignment {
        key: key.to_string(),
        value: value.to_string(),
        origin: origin.to_string(),
    })
}

pub fn parse_config_text(text: &str, source: &str) -> Result<Vec<Assignment>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if !line.is_empty() {
            out.push(parse_assignment(line, &format!("{source}:{}", i + 1))?);
        }
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(a: &Assignment) -> Result<T> {
    a.value
        .parse()
        .map_err(|_| Error::Config(format!("{}: {} expects a number, got {:?}", a.origin, a.key, a.value)))
}

fn ranged(a: &Assignment, lo: usize, hi: usize) -> Result<usize> {
    let v: usize = parse_num(a)?;
    if !(lo..=hi).contains(&v) {
        return Err(Error::Config(format!("{}: {} = {v} outside {lo}..={hi}", a.origin, a.key)));
    }
    Ok(v)
}

fn boolean(a: &Assignment) -> Result<bool> {
    match a.value.as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{}: {} expects true or false", a.origin, a.key))),
    }
}

fn choice<T: Copy>(a: &Assignment, options: &[(&str, T)]) -> Result<T> {
    options
        .iter()
        .find(|(n, _)| *n == a.value)
        .map(|&(_, v)| v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("{}: {} must be one of {}", a.origin, a.key, names.join(", ")))
        })
}

impl RunConfig {
    pub fn defaults(preset: Preset, task: TaskKind) -> Self {
        let (classes, categories) = match task {
            TaskKind::Classification => (CLS_CLASSES.len(), 0),
            TaskKind::Segmentation => (SEG_PART_NAMES.len(), seg_part_table().len()),
        };
        let train = match preset {
            Preset::Desk => TrainConfig::desk(task, classes, categories),
            Preset::Paper => TrainConfig::paper(task, classes, categories),
        };
        Self {
            preset,
            train,
            points: match preset {
                Preset::Desk => 64,
                Preset::Paper => 1024,
            },
            data_seed: 1,
            train_per_class: 60,
            test_per_class: 20,
            train_shapes: 80,
            test_shapes: 20,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("run"),
            votes: 1,
        }
    }

    /// Builds a config from assignments. `preset` and `task` are resolved
    /// first (last occurrence wins), then every key is applied in order.
    pub fn from_assignments(assignments: &[Assignment]) -> Result<Self> {
        let last = |key: &str| assignments.iter().rev().find(|a| a.key == key);
        let preset = match last("preset") {
            Some(a) => choice(a, &[("desk", Preset::Desk), ("paper", Preset::Paper)])?,
            None => Preset::Desk,
        };
        let task = match last("task") {
            Some(a) => choice(a, &[("cls", TaskKind::Classification), ("seg", TaskKind::Segmentation)])?,
            None => TaskKind::Classification,
        };
        let mut c = Self::defaults(preset, task);
        for a in assignments {
            c.apply(a)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut all = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                parse_config_text(&text, &p.display().to_string())?
            }
            None => Vec::new(),
        };
        for (i, o) in overrides.iter().enumerate() {
            all.push(parse_assignment(o, &format!("--set #{}", i + 1))?);
        }
        Self::from_assignments(&all)
    }

    fn apply(&mut self, a: &Assignment) -> Result<()> {
        let net = &mut self.train.net;
        match a.key.as_str() {
            "preset" | "task" => {}
            "points" => self.points = ranged(a, MIN_POINTS, 100_000)?,
            "k" => net.k = ranged(a, 1, 64)?,
            "d_max" => net.d_max = ranged(a, 1, 8)?,
            "embed_width" => net.embed_width = ranged(a, 1, 4096)?,
            "mr_embed_width" => net.mr_out_width = ranged(a, 1, 4096)?,
            "k_mr" => net.k_mr = ranged(a, 1, 64)?,
            "mr_knn" => net.mr_knn = choice(a, &[("feature", KnnSpace::Feature), ("coords", KnnSpace::Coordinate)])?,
            "dropout" => {
                let p: f64 = parse_num(a)?;
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::Config(format!("{}: dropout = {p} outside [0, 1)", a.origin)));
                }
                net.dropout = p;
            }
            "graph_depth" => net.graph_depth = ranged(a, 1, 4)?,
            "surrogate" => net.surrogate = boolean(a)?,
            "er_weights" => {
                let w = a
                    .value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Config(format!("{}: er_weights expects numbers", a.origin)))?;
                if w.len() != net.fr_widths.len() || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::Config(format!(
                        "{}: er_weights needs {} non-negative values",
                        a.origin,
                        net.fr_widths.len()
                    )));
                }
                net.er_weights = w;
            }
            "epochs" => self.train.epochs = ranged(a, 1, 10_000)?,
            "batch" => self.train.batch_size = ranged(a, 1, 1024)?,
            "seed" => self.train.seed = parse_num(a)?,
            "data_seed" => self.data_seed = parse_num(a)?,
            "optimizer" => {
                self.train.optimizer = choice(a, &[("sgd", OptimizerKind::Sgd), ("adam", OptimizerKind::Adam)])?
            }
            "schedule" => {
                self.train.schedule = choice(a, &[("cosine", LrSchedule::COSINE), ("step", LrSchedule::STEP_DECAY)])?
            }
            "augment" => self.train.augment = boolean(a)?,
            "votes" => self.votes = ranged(a, 1, 100)?,
            "train_per_class" => self.train_per_class = ranged(a, 1, 100_000)?,
            "test_per_class" => self.test_per_class = ranged(a, 0, 100_000)?,
            "train_shapes" => self.train_shapes = ranged(a, 1, 100_000)?,
            "test_shapes" => self.test_shapes = ranged(a, 0, 100_000)?,
            "data_dir" => self.data_dir = PathBuf::from(&a.value),
            "out_dir" => self.out_dir = PathBuf::from(&a.value),
            other => return Err(Error::Config(format!("{}: unknown key {other:?}", a.origin))),
        }
        Ok(())
    }

    pub fn task(&self) -> TaskKind {
        self.train.net.task
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let need = self.train.net.min_points();
        if self.points < need {
            return Err(Error::Config(format!("points = {} but k·d_max = {need}", self.points)));
        }
        Ok(())
    }
}
