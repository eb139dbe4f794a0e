//! Per-point export of the learned dilation factors of one E-M module.

use std::fmt::Write as _;

use crate::network::{Batch, DrNet, TaskKind};
use crate::numerics::{Real, Tensor};
use crate::{Error, Result};

pub const DUMP_HEADER: &str = "x,y,z,dilation_factor,gate";

/// Dilation factors and gates of E-M module `layer` (1-based) for one cloud, eval mode.
pub fn dilation_factors<T: Real>(
    net: &DrNet<T>,
    coords: &Tensor<T>,
    layer: usize,
    category: usize,
) -> Result<(Vec<usize>, Vec<T>)> {
    let modules = net.cfg().fr_widths.len();
    if layer == 0 || layer > modules {
        return Err(Error::InvalidArgument(format!("layer {layer} outside 1..={modules}")));
    }
    let batch = Batch {
        coords: coords.clone(),
        clouds: 1,
        categories: match net.cfg().task {
            TaskKind::Segmentation => vec![category],
            TaskKind::Classification => Vec::new(),
        },
    };
    let mut d = net.eval(&batch)?.dilations.swap_remove(layer - 1);
    Ok((std::mem::take(&mut d.factors), d.gate))
}

/// CSV with one row per input point.
pub fn dilation_csv<T: Real>(coords: &Tensor<T>, factors: &[usize], gate: &[T]) -> String {
    let mut s = String::with_capacity(64 * (coords.rows() + 1));
    s.push_str(DUMP_HEADER);
    s.push('\n');
    for i in 0..coords.rows() {
        let r = coords.row(i);
        let _ = writeln!(s, "{},{},{},{},{}", r[0], r[1], r[2], factors[i], gate[i]);
    }
    s
}
