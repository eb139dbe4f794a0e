//! Dataset manifest: a line-oriented text file next to the cloud files.
//!
//! ```text
//! task seg
//! class mallet.head
//! category mallet 0 1
//! cloud train train/00000.txt category=0
//! cloud test test/00000.txt label=2
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{load_cloud, save_cloud, Category, Dataset, LabeledCloud};
use crate::network::TaskKind;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    /// Path relative to the manifest directory.
    pub file: String,
    pub split: Split,
    pub label: Option<usize>,
    pub category: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub task: TaskKind,
    pub class_names: Vec<String>,
    pub categories: Vec<Category>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let task = match self.task {
            TaskKind::Classification => "cls",
            TaskKind::Segmentation => "seg",
        };
        let _ = writeln!(s, "task {task}");
        for c in &self.class_names {
            let _ = writeln!(s, "class {c}");
        }
        for c in &self.categories {
            let parts: Vec<String> = c.parts.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(s, "category {} {}", c.name, parts.join(" "));
        }
        for e in &self.entries {
            let _ = write!(s, "cloud {} {}", e.split.as_str(), e.file);
            if let Some(l) = e.label {
                let _ = write!(s, " label={l}");
            }
            if let Some(c) = e.category {
                let _ = write!(s, " category={c}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            source_name: source.to_string(),
            line,
            msg,
        };
        let num = |ln: usize, v: &str| v.parse::<usize>().map_err(|_| err(ln, format!("bad number {v:?}")));
        let mut task = None;
        let mut class_names = Vec::new();
        let mut categories = Vec::new();
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                [] => {}
                [c, ..] if c.starts_with('#') => {}
                ["task", "cls"] => task = Some(TaskKind::Classification),
                ["task", "seg"] => task = Some(TaskKind::Segmentation),
                ["class", name] => class_names.push(name.to_string()),
                ["category", name, parts @ ..] if !parts.is_empty() => categories.push(Category {
                    name: name.to_string(),
                    parts: parts.iter().map(|p| num(ln, p)).collect::<Result<_>>()?,
                }),
                ["cloud", split, file, attrs @ ..] => {
                    let split = match *split {
                        "train" => Split::Train,
                        "test" => Split::Test,
                        other => return Err(err(ln, format!("unknown split {other:?}"))),
                    };
                    let mut e = ManifestEntry {
                        file: file.to_string(),
                        split,
                        label: None,
                        category: None,
                    };
                    for a in attrs {
                        match a.split_once('=') {
                            Some(("label", v)) => e.label = Some(num(ln, v)?),
                            Some(("category", v)) => e.category = Some(num(ln, v)?),
                            _ => return Err(err(ln, format!("unknown attribute {a:?}"))),
                        }
                    }
                    entries.push(e);
                }
                _ => return Err(err(ln, format!("unrecognized line {line:?}"))),
            }
        }
        let task = task.ok_or_else(|| err(0, "missing task line".into()))?;
        Ok(Self {
            task,
            class_names,
            categories,
            entries,
        })
    }
}

/// Writes `train/NNNNN.txt`, `test/NNNNN.txt` and the manifest under `dir`.
pub fn save_dataset(dir: &Path, train: &Dataset, test: &Dataset) -> Result<Manifest> {
    let mut entries = Vec::new();
    for (split, ds) in [(Split::Train, train), (Split::Test, test)] {
        let sub = dir.join(split.as_str());
        std::fs::create_dir_all(&sub)?;
        for (i, c) in ds.clouds.iter().enumerate() {
            let file = format!("{}/{i:05}.txt", split.as_str());
            save_cloud(&dir.join(&file), c)?;
            entries.push(ManifestEntry {
                file,
                split,
                label: c.cloud_label,
                category: c.category,
            });
        }
    }
    let manifest = Manifest {
        task: train.task,
        class_names: train.class_names.clone(),
        categories: train.categories.clone(),
        entries,
    };
    std::fs::write(dir.join(MANIFEST_FILE), manifest.to_text())?;
    Ok(manifest)
}

/// Reads the manifest under `dir` and every cloud it lists; returns `(train, test)`.
pub fn load_dataset(dir: &Path) -> Result<(Dataset, Dataset)> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let m = Manifest::parse(&text, &path.display().to_string())?;
    let empty = || Dataset {
        task: m.task,
        class_names: m.class_names.clone(),
        categories: m.categories.clone(),
        clouds: Vec::new(),
    };
    let (mut train, mut test) = (empty(), empty());
    let labels = match m.task {
        TaskKind::Segmentation => Some(m.class_names.len()),
        TaskKind::Classification => None,
    };
    for e in &m.entries {
        let file = dir.join(&e.file);
        if !file.is_file() {
            return Err(Error::Data(format!("manifest lists missing file {}", file.display())));
        }
        let c = load_cloud(&file, labels)?;
        let cloud = LabeledCloud {
            cloud_label: e.label,
            category: e.category,
            ..c
        };
        match e.split {
            Split::Train => train.clouds.push(cloud),
            Split::Test => test.clouds.push(cloud),
        }
    }
    train.validate()?;
    test.validate()?;
    Ok((train, test))
}
