//! One point per line: `x y z [label]`, whitespace separated. Coordinates are
//! written with 9 significant digits, which round-trips every `f32`.

use std::fmt::Write as _;
use std::path::Path;

use super::LabeledCloud;
use crate::numerics::Tensor;
use crate::{Error, Result};

pub fn format_cloud(coords: &Tensor<f32>, labels: Option<&[usize]>) -> String {
    let mut s = String::with_capacity(coords.rows() * 48);
    for i in 0..coords.rows() {
        let r = coords.row(i);
        let _ = write!(s, "{:.8e} {:.8e} {:.8e}", r[0], r[1], r[2]);
        if let Some(l) = labels {
            let _ = write!(s, " {}", l[i]);
        }
        s.push('\n');
    }
    s
}

/// Parses cloud text. Blank lines are skipped; every other line must have
/// three coordinates, optionally followed by a label below `num_labels`.
/// Either all lines carry a label or none do.
pub fn parse_cloud(text: &str, source: &str, num_labels: Option<usize>) -> Result<LabeledCloud> {
    let err = |line: usize, msg: String| Error::Parse {
        source_name: source.to_string(),
        line,
        msg,
    };
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    let mut labeled: Option<bool> = None;
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 && fields.len() != 4 {
            return Err(err(ln, format!("expected 3 or 4 fields, found {}", fields.len())));
        }
        for f in &fields[..3] {
            let v: f32 = f.parse().map_err(|_| err(ln, format!("bad coordinate {f:?}")))?;
            if !v.is_finite() {
                return Err(err(ln, format!("non-finite coordinate {f:?}")));
            }
            coords.push(v);
        }
        let has = fields.len() == 4;
        if *labeled.get_or_insert(has) != has {
            return Err(err(ln, "labeled and unlabeled lines are mixed".into()));
        }
        if has {
            let l: usize = fields[3]
                .parse()
                .map_err(|_| err(ln, format!("bad label {:?}", fields[3])))?;
            if let Some(n) = num_labels {
                if l >= n {
                    return Err(err(ln, format!("label {l} out of range 0..{n}")));
                }
            }
            labels.push(l);
        }
    }
    if coords.is_empty() {
        return Err(err(0, "no points".into()));
    }
    let n = coords.len() / 3;
    Ok(LabeledCloud {
        coords: Tensor::from_vec(&[n, 3], coords)?,
        cloud_label: None,
        point_labels: if labeled == Some(true) { Some(labels) } else { None },
        category: None,
    })
}

pub fn save_cloud(path: &Path, cloud: &LabeledCloud) -> Result<()> {
    std::fs::write(path, format_cloud(&cloud.coords, cloud.point_labels.as_deref()))?;
    Ok(())
}

pub fn load_cloud(path: &Path, num_labels: Option<usize>) -> Result<LabeledCloud> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_cloud(&text, &path.display().to_string(), num_labels)
}
