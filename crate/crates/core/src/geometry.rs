//! Squared-distance kernel, candidate/knn search, farthest point sampling and
//! inverse-distance feature propagation.
//!
//! Slice-level `*_raw` variants work on one cloud stored row-major
//! (`n` rows of `c` values) and are what the batched layers call.

use std::cmp::Ordering;

use crate::numerics::{IndexMatrix, Real, Tensor};
use crate::{Error, Result};

/// Added to squared distances before inverting in feature propagation.
pub const PROPAGATION_EPS: f64 = 1e-8;

/// Neighbors blended per fine point in feature propagation.
pub const PROPAGATION_NEIGHBORS: usize = 3;

/// `E[i][j] = |p_i|² + |p_j|² - 2·p_i·p_j`, clamped at zero.
///
/// Every dot product is accumulated in channel order so `E` is exactly
/// symmetric with an exactly zero diagonal.
pub(crate) fn sq_dist_raw<T: Real>(p: &[T], n: usize, c: usize) -> Vec<T> {
    let dot = |i: usize, j: usize| -> T {
        let (a, b) = (&p[i * c..(i + 1) * c], &p[j * c..(j + 1) * c]);
        a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
    };
    let norms: Vec<T> = (0..n).map(|i| dot(i, i)).collect();
    let two = T::lit(2.0);
    let mut e = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = (norms[i] + norms[j] - two * dot(i, j)).max(T::zero());
            e[i * n + j] = v;
            e[j * n + i] = v;
        }
    }
    e
}

pub fn pairwise_sq_distances<T: Real>(p: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = matrix_dims(p, "pairwise_sq_distances")?;
    Tensor::from_vec(&[n, n], sq_dist_raw(p.data(), n, c))
}

fn matrix_dims<T: Real>(p: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    if p.shape().len() != 2 {
        return Err(Error::Shape(format!("{what}: expected N×c, got {:?}", p.shape())));
    }
    Ok((p.rows(), p.cols()))
}

/// The `k·d_max` nearest candidates of every point, nearest first.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet<T> {
    /// N×width squared distances, non-decreasing along each row.
    pub metrics: Tensor<T>,
    /// N×width point indices matching `metrics`; column 0 is the point itself.
    pub indices: IndexMatrix,
}

/// Row order for candidate lists: ascending distance, the query point first
/// among zero-distance ties, then the lexicographic order of the two
/// candidates' rows, then ascending index. Comparing row contents before
/// indices keeps exact distance ties (common enough in 32-bit feature space)
/// independent of how the points happen to be stored.
fn candidate_order<T: Real>(p: &[T], c: usize, row: &[T], query: usize, a: usize, b: usize) -> Ordering {
    row[a]
        .partial_cmp(&row[b])
        .unwrap_or(Ordering::Equal)
        .then_with(|| (a != query).cmp(&(b != query)))
        .then_with(|| {
            let (ra, rb) = (&p[a * c..(a + 1) * c], &p[b * c..(b + 1) * c]);
            ra.iter()
                .zip(rb)
                .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.cmp(&b))
}

/// Sorted first `width` columns of each distance row.
pub(crate) fn candidates_raw<T: Real>(
    p: &[T],
    n: usize,
    c: usize,
    width: usize,
) -> (Vec<T>, Vec<usize>) {
    let e = sq_dist_raw(p, n, c);
    let mut metrics = Vec::with_capacity(n * width);
    let mut indices = Vec::with_capacity(n * width);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let row = &e[i * n..(i + 1) * n];
        order.clear();
        order.extend(0..n);
        if width < n {
            order.select_nth_unstable_by(width - 1, |&a, &b| candidate_order(p, c, row, i, a, b));
            order.truncate(width);
        }
        order.sort_unstable_by(|&a, &b| candidate_order(p, c, row, i, a, b));
        metrics.extend(order.iter().map(|&j| row[j]));
        indices.extend_from_slice(&order);
    }
    (metrics, indices)
}

pub fn candidate_search<T: Real>(p: &Tensor<T>, k: usize, d_max: usize) -> Result<CandidateSet<T>> {
    let (n, c) = matrix_dims(p, "candidate_search")?;
    let width = k * d_max;
    if width == 0 {
        return Err(Error::InvalidArgument("k and d_max must be positive".into()));
    }
    if width > n {
        return Err(Error::CloudTooSmall { needed: width, got: n });
    }
    let (metrics, indices) = candidates_raw(p.data(), n, c, width);
    Ok(CandidateSet {
        metrics: Tensor::from_vec(&[n, width], metrics)?,
        indices: IndexMatrix::new(n, width, indices)?,
    })
}

pub(crate) fn knn_raw<T: Real>(p: &[T], n: usize, c: usize, k: usize) -> Vec<usize> {
    candidates_raw(p, n, c, k).1
}

/// Plain k-nearest neighbors; each point lists itself first.
pub fn knn<T: Real>(p: &Tensor<T>, k: usize) -> Result<IndexMatrix> {
    let (n, c) = matrix_dims(p, "knn")?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if k > n {
        return Err(Error::CloudTooSmall { needed: k, got: n });
    }
    IndexMatrix::new(n, k, knn_raw(p.data(), n, c, k))
}

fn sq_dist3<T: Real>(a: &[T], b: &[T]) -> T {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

fn lex_cmp<T: Real>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).unwrap_or(Ordering::Equal) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Index with the largest score; ties go to the lexicographically largest
/// coordinate triple, then to the smallest index.
fn argmax_point<T: Real>(coords: &[T], score: &[T], candidates: impl Iterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for j in candidates {
        best = Some(match best {
            None => j,
            Some(b) => {
                let o = score[j]
                    .partial_cmp(&score[b])
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| lex_cmp(&coords[j * 3..j * 3 + 3], &coords[b * 3..b * 3 + 3]));
                if o == Ordering::Greater {
                    j
                } else {
                    b
                }
            }
        });
    }
    best.expect("non-empty candidate set")
}

/// Greedy max-min subset of `m` points. The first pick is the point farthest
/// from the centroid, so the selected set does not depend on input order.
pub(crate) fn fps_raw<T: Real>(coords: &[T], n: usize, m: usize) -> Vec<usize> {
    let inv = T::one() / T::lit(n as f64);
    let mut centroid = [T::zero(); 3];
    for i in 0..n {
        for a in 0..3 {
            centroid[a] += coords[i * 3 + a];
        }
    }
    centroid.iter_mut().for_each(|v| *v *= inv);
    let from_centroid: Vec<T> = (0..n).map(|i| sq_dist3(&coords[i * 3..i * 3 + 3], &centroid)).collect();
    let seed = argmax_point(coords, &from_centroid, 0..n);

    let mut picked = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_d = vec![T::infinity(); n];
    let mut last = seed;
    picked.push(seed);
    taken[seed] = true;
    while picked.len() < m {
        let lp = &coords[last * 3..last * 3 + 3];
        for j in 0..n {
            let d = sq_dist3(&coords[j * 3..j * 3 + 3], lp);
            if d < min_d[j] {
                min_d[j] = d;
            }
        }
        last = argmax_point(coords, &min_d, (0..n).filter(|&j| !taken[j]));
        taken[last] = true;
        picked.push(last);
    }
    picked
}

pub fn farthest_point_sampling<T: Real>(coords: &Tensor<T>, m: usize) -> Result<Vec<usize>> {
    let (n, c) = matrix_dims(coords, "farthest_point_sampling")?;
    if c != 3 {
        return Err(Error::Shape(format!("FPS expects N×3 coordinates, got N×{c}")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    if m > n {
        return Err(Error::CloudTooSmall { needed: m, got: n });
    }
    Ok(fps_raw(coords.data(), n, m))
}

/// Sparse fine×coarse interpolation matrix from inverse squared distances.
/// Rows hold up to three coarse neighbors with weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Interpolation<T> {
    pub fine: usize,
    pub coarse: usize,
    /// Neighbors per fine point (`min(3, coarse)`).
    pub count: usize,
    pub neighbors: Vec<usize>,
    pub weights: Vec<T>,
}

impl<T: Real> Interpolation<T> {
    pub fn new(coarse_coords: &[T], m: usize, fine_coords: &[T], n: usize) -> Self {
        let count = PROPAGATION_NEIGHBORS.min(m);
        let eps = T::lit(PROPAGATION_EPS);
        let mut neighbors = Vec::with_capacity(n * count);
        let mut weights = Vec::with_capacity(n * count);
        let mut d = vec![T::zero(); m];
        let mut order: Vec<usize> = Vec::with_capacity(m);
        for i in 0..n {
            let f = &fine_coords[i * 3..i * 3 + 3];
            for (j, dj) in d.iter_mut().enumerate() {
                *dj = sq_dist3(f, &coarse_coords[j * 3..j * 3 + 3]);
            }
            order.clear();
            order.extend(0..m);
            order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
            let raw: Vec<T> = order[..count].iter().map(|&j| T::one() / (d[j] + eps)).collect();
            let total: T = raw.iter().copied().sum();
            neighbors.extend_from_slice(&order[..count]);
            weights.extend(raw.into_iter().map(|w| w / total));
        }
        Self {
            fine: n,
            coarse: m,
            count,
            neighbors,
            weights,
        }
    }

    /// Fine features (fine×c) from coarse features (coarse×c).
    pub fn apply(&self, feats: &[T], c: usize) -> Vec<T> {
        assert_eq!(feats.len(), self.coarse * c);
        let mut out = vec![T::zero(); self.fine * c];
        for i in 0..self.fine {
            let dst = &mut out[i * c..(i + 1) * c];
            for s in 0..self.count {
                let (j, w) = (self.neighbors[i * self.count + s], self.weights[i * self.count + s]);
                for (o, &v) in dst.iter_mut().zip(&feats[j * c..(j + 1) * c]) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// Adjoint of [`apply`](Self::apply): routes fine gradients back to coarse rows.
    pub fn apply_transpose(&self, d_fine: &[T], c: usize) -> Vec<T> {
        assert_eq!(d_fine.len(), self.fine * c);
        let mut out = vec![T::zero(); self.coarse * c];
        for i in 0..self.fine {
            let src = &d_fine[i * c..(i + 1) * c];
            for s in 0..self.count {
                let (j, w) = (self.neighbors[i * self.count + s], self.weights[i * self.count + s]);
                for (o, &g) in out[j * c..(j + 1) * c].iter_mut().zip(src) {
                    *o += w * g;
                }
            }
        }
        out
    }
}

/// Interpolates coarse features onto fine points from their three nearest coarse points.
pub fn feature_propagation<T: Real>(
    coarse_coords: &Tensor<T>,
    fine_coords: &Tensor<T>,
    coarse_feats: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (m, c3) = matrix_dims(coarse_coords, "feature_propagation")?;
    let (n, f3) = matrix_dims(fine_coords, "feature_propagation")?;
    if c3 != 3 || f3 != 3 {
        return Err(Error::Shape("feature_propagation expects 3-D coordinates".into()));
    }
    if coarse_feats.rows() != m {
        return Err(Error::Shape(format!(
            "{m} coarse points but {} feature rows",
            coarse_feats.rows()
        )));
    }
    let c = coarse_feats.cols();
    let interp = Interpolation::new(coarse_coords.data(), m, fine_coords.data(), n);
    Tensor::from_vec(&[n, c], interp.apply(coarse_feats.data(), c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{rng_uniform, SplitMix64};
    use proptest::prelude::*;

    fn t(rows: &[[f64; 3]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn exact_ties_follow_content_not_storage() {
        // Points 1..=4 are all at squared distance 1 from the origin.
        let rows = [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [-1.0, 0.0, 0.0]];
        let a = knn(&t(&rows), 5).unwrap();
        assert_eq!(a.row(0), &[0, 4, 3, 1, 2]);
        let perm = [3, 0, 4, 2, 1];
        let permuted: Vec<[f64; 3]> = perm.iter().map(|&i| rows[i]).collect();
        let b = knn(&t(&permuted), 5).unwrap();
        let relabeled: Vec<usize> = b.row(1).iter().map(|&j| perm[j]).collect();
        assert_eq!(relabeled, a.row(0));
    }

    fn collinear4() -> Tensor<f64> {
        t(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
    }

    #[test]
    fn unit_separation() {
        let e = pairwise_sq_distances(&t(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])).unwrap();
        assert_eq!(e.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn coincident_points_have_zero_distance() {
        let e = pairwise_sq_distances(&t(&[[0.3, 0.1, -2.0], [1.0, 2.0, 3.0], [0.3, 0.1, -2.0]])).unwrap();
        assert_eq!(e.at(0, 2), 0.0);
        assert_eq!(e.at(2, 0), 0.0);
    }

    #[test]
    fn distance_kernel_matches_double_loop() {
        let p = rng_uniform::<f64>(11, -1.0, 1.0, &[32, 3]).unwrap();
        let e = pairwise_sq_distances(&p).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                let d: f64 = (0..3).map(|a| (p.at(i, a) - p.at(j, a)).powi(2)).sum();
                assert!((e.at(i, j) - d).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn collinear_candidates() {
        let cs = candidate_search(&collinear4(), 2, 2).unwrap();
        assert_eq!(cs.indices.row(0), &[0, 1, 2, 3]);
        assert_eq!(cs.metrics.row(0), &[0.0, 1.0, 4.0, 9.0]);
        assert_eq!(knn(&collinear4(), 2).unwrap().row(0), &[0, 1]);
    }

    #[test]
    fn paper_scale_candidate_width() {
        let p = rng_uniform::<f32>(3, -1.0, 1.0, &[128, 3]).unwrap();
        let cs = candidate_search(&p, 20, 5).unwrap();
        assert_eq!(cs.metrics.shape(), &[128, 100]);
    }

    #[test]
    fn too_small_cloud_is_rejected() {
        assert!(matches!(
            candidate_search(&collinear4(), 3, 2),
            Err(Error::CloudTooSmall { needed: 6, got: 4 })
        ));
        assert!(knn(&collinear4(), 5).is_err());
    }

    #[test]
    fn self_comes_first_even_with_duplicates() {
        let p = t(&[[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]);
        let nn = knn(&p, 2).unwrap();
        assert_eq!(nn.row(0), &[0, 1]);
        assert_eq!(nn.row(1), &[1, 0]);
    }

    #[test]
    fn k1_is_self() {
        let p = rng_uniform::<f64>(5, -1.0, 1.0, &[10, 3]).unwrap();
        let nn = knn(&p, 1).unwrap();
        assert_eq!(nn.data, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn candidates_match_full_sort() {
        let p = rng_uniform::<f64>(21, -1.0, 1.0, &[64, 3]).unwrap();
        let cs = candidate_search(&p, 4, 3).unwrap();
        for i in 0..64 {
            let mut all: Vec<(f64, usize)> = (0..64)
                .map(|j| ((0..3).map(|a| (p.at(i, a) - p.at(j, a)).powi(2)).sum(), j))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<usize> = all[..12].iter().map(|x| x.1).collect();
            assert_eq!(cs.indices.row(i), &want[..]);
        }
        assert_eq!(candidate_search(&p, 5, 1).unwrap().indices, knn(&p, 5).unwrap());
    }

    #[test]
    fn fps_exhaustive_is_a_permutation() {
        let p = rng_uniform::<f64>(8, -1.0, 1.0, &[20, 3]).unwrap();
        let mut s = farthest_point_sampling(&p, 20).unwrap();
        s.sort();
        assert_eq!(s, (0..20).collect::<Vec<_>>());
        assert!(farthest_point_sampling(&p, 21).is_err());
    }

    #[test]
    fn fps_segment_endpoints() {
        let p = t(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]]);
        let mut s = farthest_point_sampling(&p, 2).unwrap();
        s.sort();
        assert_eq!(s, [0, 1]);
    }

    fn min_pairwise(p: &Tensor<f64>, set: &[usize]) -> f64 {
        let mut best = f64::INFINITY;
        for (a, &i) in set.iter().enumerate() {
            for &j in &set[a + 1..] {
                best = best.min(sq_dist3(p.row(i), p.row(j)));
            }
        }
        best
    }

    #[test]
    fn fps_square_corners_is_max_min_subset() {
        let p = t(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.5, 0.5, 0.0],
        ]);
        let mut s = farthest_point_sampling(&p, 4).unwrap();
        s.sort();
        // Enumerate all 4-subsets; the corners are the unique max-min subset.
        let mut best = (f64::NEG_INFINITY, vec![]);
        for skip in 0..5 {
            let set: Vec<usize> = (0..5).filter(|&i| i != skip).collect();
            let v = min_pairwise(&p, &set);
            if v > best.0 {
                best = (v, set);
            }
        }
        assert_eq!(s, best.1);
        assert_eq!(s, [0, 1, 2, 3]);
    }

    #[test]
    fn propagation_coincident_point_takes_coarse_feature() {
        let coarse = t(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let fine = t(&[[1.0, 0.0, 0.0]]);
        let feats = Tensor::from_rows(&[[1.0, 2.0], [5.0, -3.0], [7.0, 7.0]]).unwrap();
        let out = feature_propagation(&coarse, &fine, &feats).unwrap();
        assert!(((out.at(0, 0) - 5.0) / 5.0).abs() < 1e-4);
        assert!(((out.at(0, 1) + 3.0) / 3.0).abs() < 1e-4);
    }

    #[test]
    fn propagation_single_coarse_point() {
        let coarse = t(&[[0.2, 0.0, 0.0]]);
        let fine = rng_uniform::<f64>(4, -1.0, 1.0, &[6, 3]).unwrap();
        let feats = Tensor::from_rows(&[[3.0, -1.0, 0.5]]).unwrap();
        let out = feature_propagation(&coarse, &fine, &feats).unwrap();
        for i in 0..6 {
            for (a, b) in out.row(i).iter().zip([3.0, -1.0, 0.5]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn propagation_equidistant_pair_averages() {
        let coarse = t(&[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let fine = t(&[[0.0, 0.5, 0.0]]);
        let feats = Tensor::from_rows(&[[2.0, 4.0], [6.0, -8.0]]).unwrap();
        let out = feature_propagation(&coarse, &fine, &feats).unwrap();
        assert!((out.at(0, 0) - 4.0).abs() < 1e-12);
        assert!((out.at(0, 1) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn propagation_transpose_is_adjoint() {
        let coarse = rng_uniform::<f64>(30, -1.0, 1.0, &[5, 3]).unwrap();
        let fine = rng_uniform::<f64>(31, -1.0, 1.0, &[9, 3]).unwrap();
        let it = Interpolation::new(coarse.data(), 5, fine.data(), 9);
        let x = rng_uniform::<f64>(32, -1.0, 1.0, &[5, 2]).unwrap();
        let y = rng_uniform::<f64>(33, -1.0, 1.0, &[9, 2]).unwrap();
        let lhs: f64 = it.apply(x.data(), 2).iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = it.apply_transpose(y.data(), 2).iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    fn shuffled(p: &Tensor<f64>, seed: u64) -> (Tensor<f64>, Vec<usize>) {
        let mut perm: Vec<usize> = (0..p.rows()).collect();
        SplitMix64::new(seed).shuffle(&mut perm);
        (p.gather_rows(&perm), perm)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn distances_symmetric_nonnegative(seed in any::<u64>(), n in 1usize..24, c in 1usize..6) {
            let p = rng_uniform::<f64>(seed, -2.0, 2.0, &[n, c]).unwrap();
            let e = pairwise_sq_distances(&p).unwrap();
            for i in 0..n {
                prop_assert_eq!(e.at(i, i), 0.0);
                for j in 0..n {
                    prop_assert!(e.at(i, j) >= 0.0);
                    prop_assert_eq!(e.at(i, j), e.at(j, i));
                }
            }
        }

        #[test]
        fn knn_relabels_under_permutation(seed in any::<u64>(), n in 6usize..30) {
            let p = rng_uniform::<f64>(seed, -1.0, 1.0, &[n, 3]).unwrap();
            let (q, perm) = shuffled(&p, seed ^ 1);
            let k = 5.min(n);
            let a = candidate_search(&p, k, 1).unwrap();
            let b = candidate_search(&q, k, 1).unwrap();
            // Row r of q is point perm[r] of p.
            for r in 0..n {
                let mapped: Vec<usize> = b.indices.row(r).iter().map(|&j| perm[j]).collect();
                prop_assert_eq!(&mapped[..], a.indices.row(perm[r]));
            }
        }

        #[test]
        fn fps_set_is_permutation_invariant(seed in any::<u64>(), n in 4usize..40, frac in 1usize..4) {
            let p = rng_uniform::<f64>(seed, -1.0, 1.0, &[n, 3]).unwrap();
            let m = (n * frac / 4).max(1);
            let (q, perm) = shuffled(&p, seed ^ 7);
            let mut a = farthest_point_sampling(&p, m).unwrap();
            let mut b: Vec<usize> = farthest_point_sampling(&q, m).unwrap().into_iter().map(|j| perm[j]).collect();
            prop_assert_eq!(&a, &b);
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn propagation_weights_sum_to_one(seed in any::<u64>(), m in 1usize..10, n in 1usize..20) {
            let coarse = rng_uniform::<f64>(seed, -1.0, 1.0, &[m, 3]).unwrap();
            let fine = rng_uniform::<f64>(seed ^ 3, -1.0, 1.0, &[n, 3]).unwrap();
            let it = Interpolation::new(coarse.data(), m, fine.data(), n);
            for i in 0..n {
                let s: f64 = it.weights[i * it.count..(i + 1) * it.count].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}
