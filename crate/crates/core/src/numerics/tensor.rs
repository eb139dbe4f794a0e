use std::cmp::Ordering;

use super::Real;
use crate::{Error, Result};

/// Dense row-major tensor. Two-dimensional views treat the first axis as rows
/// and fold the remaining axes into columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("extents must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.as_ref().len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::from_vec(&[rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Rows selected by `idx`, in that order.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Self { shape, data }
    }
}

/// Column-wise concatenation of matrices with equal row counts.
pub fn concat_cols<T: Real>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let rows = parts[0].rows();
    let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            assert_eq!(p.rows(), rows, "concat_cols row mismatch");
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor {
        shape: vec![rows, total],
        data,
    }
}

/// Inverse of [`concat_cols`].
pub fn split_cols<T: Real>(t: &Tensor<T>, widths: &[usize]) -> Vec<Tensor<T>> {
    let rows = t.rows();
    assert_eq!(widths.iter().sum::<usize>(), t.cols(), "split_cols widths");
    let mut out: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
    for r in 0..rows {
        let mut off = 0;
        let row = t.row(r);
        for (o, &w) in out.iter_mut().zip(widths) {
            o.extend_from_slice(&row[off..off + w]);
            off += w;
        }
    }
    out.into_iter()
        .zip(widths)
        .map(|(d, &w)| Tensor {
            shape: vec![rows, w],
            data: d,
        })
        .collect()
}

/// Adjoint of [`Tensor::gather_rows`]: adds row `r` of `d` into row `idx[r]`.
pub fn scatter_add_rows<T: Real>(d: &Tensor<T>, idx: &[usize], rows: usize) -> Tensor<T> {
    let c = d.cols();
    let mut out = vec![T::zero(); rows * c];
    for (r, &i) in idx.iter().enumerate() {
        for (o, &v) in out[i * c..(i + 1) * c].iter_mut().zip(d.row(r)) {
            *o += v;
        }
    }
    Tensor {
        shape: vec![rows, c],
        data: out,
    }
}

/// Row-major matrix of indices (neighbor sets, sort permutations).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<usize>,
}

impl IndexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<usize>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} index matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub(crate) fn cmp_real<T: Real>(a: T, b: T) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Per-row ascending argsort. Equal values keep their original column order.
pub fn argsort_rows_ascending<T: Real>(m: &Tensor<T>) -> Result<IndexMatrix> {
    if m.shape().len() != 2 {
        return Err(Error::Shape(format!("argsort expects a matrix, got {:?}", m.shape())));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("argsort input".into()));
    }
    let (rows, cols) = (m.rows(), m.cols());
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let row = m.row(i);
        let mut order: Vec<usize> = (0..cols).collect();
        order.sort_by(|&a, &b| cmp_real(row[a], row[b]));
        data.extend(order);
    }
    IndexMatrix::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_uniform;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 0], vec![]).is_err());
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!((t.rows(), t.cols()), (2, 3));
    }

    #[test]
    fn argsort_simple_rows() {
        let m = Tensor::from_rows(&[[3.0, 1.0, 2.0], [0.0, 0.0, 5.0]]).unwrap();
        let s = argsort_rows_ascending(&m).unwrap();
        assert_eq!(s.row(0), &[1, 2, 0]);
        assert_eq!(s.row(1), &[0, 1, 2]);
    }

    fn selection_sort_oracle(row: &[f64]) -> Vec<usize> {
        let mut used = vec![false; row.len()];
        let mut out = Vec::new();
        for _ in 0..row.len() {
            let mut best: Option<usize> = None;
            for j in 0..row.len() {
                if used[j] {
                    continue;
                }
                match best {
                    None => best = Some(j),
                    Some(b) if row[j] < row[b] => best = Some(j),
                    _ => {}
                }
            }
            let b = best.unwrap();
            used[b] = true;
            out.push(b);
        }
        out
    }

    #[test]
    fn argsort_matches_selection_sort() {
        let m = rng_uniform::<f64>(77, -1.0, 1.0, &[16, 16]).unwrap();
        // Quantize so that ties occur.
        let m = m.map(|v| (v * 4.0).round());
        let s = argsort_rows_ascending(&m).unwrap();
        for i in 0..16 {
            assert_eq!(s.row(i), &selection_sort_oracle(m.row(i))[..]);
        }
    }
}
