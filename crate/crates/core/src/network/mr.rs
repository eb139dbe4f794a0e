//! Multi-resolution branch: two FPS levels (N/4, N/16) with knn graph
//! encoding on the way down and dense interpolated skips on the way up.

use super::{KnnSpace, NetConfig};
use crate::geometry::{fps_raw, knn_raw, Interpolation};
use crate::layers::{graph_encode, graph_encode_backward, max_pool_backward, max_pool_neighbors};
use crate::layers::{Activation, Forward, MlpCache, MlpLayer};
use crate::numerics::{concat_cols, par, scatter_add_rows, split_cols, IndexMatrix, ParamStore, Real, SplitMix64, Tensor};
use crate::{Error, Result};

/// Point count after padding: the next multiple of 16, at least 16.
pub fn padded_len(n: usize) -> usize {
    n.div_ceil(16).max(1) * 16
}

/// Source row for every padded row. Extra rows repeat the final points of the
/// cloud (cycling when the cloud is shorter than the padding).
pub fn pad_map(n: usize) -> Vec<usize> {
    let np = padded_len(n);
    let pad = np - n;
    (0..np)
        .map(|j| {
            if j < n {
                j
            } else if pad <= n {
                n - pad + (j - n)
            } else {
                (j - n) % n
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct MrBranch {
    pub down1: MlpLayer,
    pub down2: MlpLayer,
    pub up: MlpLayer,
    pub out: MlpLayer,
    pub k_mr: usize,
    pub knn_space: KnnSpace,
}

#[derive(Clone, Debug)]
struct CloudGeometry<T> {
    s1: Vec<usize>,
    s2: Vec<usize>,
    i21: Interpolation<T>,
    i10: Interpolation<T>,
    i20: Interpolation<T>,
}

#[derive(Clone, Debug)]
pub struct MrCache<T> {
    n: usize,
    np: usize,
    clouds: usize,
    pad_src: Vec<usize>,
    geo: Vec<CloudGeometry<T>>,
    g1: Vec<usize>,
    knn1: IndexMatrix,
    down1: MlpCache<T>,
    arg1: Vec<u32>,
    g2: Vec<usize>,
    knn2: IndexMatrix,
    down2: MlpCache<T>,
    arg2: Vec<u32>,
    up: MlpCache<T>,
    out: MlpCache<T>,
}

fn batched_knn<T: Real>(x: &Tensor<T>, clouds: usize, m: usize, k: usize) -> Result<IndexMatrix> {
    let c = x.cols();
    let per = par::map_range(clouds, |b| knn_raw(&x.data()[b * m * c..(b + 1) * m * c], m, c, k));
    let mut idx = Vec::with_capacity(clouds * m * k);
    for (b, v) in per.into_iter().enumerate() {
        idx.extend(v.into_iter().map(|j| j + b * m));
    }
    IndexMatrix::new(clouds * m, k, idx)
}

fn interp_batch<T: Real>(
    interps: &[&Interpolation<T>],
    x: &Tensor<T>,
    transpose: bool,
) -> Tensor<T> {
    let c = x.cols();
    let mut out = Vec::new();
    let mut off = 0;
    for it in interps {
        let (src, _dst) = if transpose { (it.fine, it.coarse) } else { (it.coarse, it.fine) };
        let slice = &x.data()[off * c..(off + src) * c];
        out.extend(if transpose { it.apply_transpose(slice, c) } else { it.apply(slice, c) });
        off += src;
    }
    let rows = out.len() / c;
    Tensor::from_vec(&[rows, c], out).expect("interpolation shape")
}

fn add_into<T: Real>(a: &mut Tensor<T>, b: &Tensor<T>) {
    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, &y)| *x += y);
}

fn gather_coords<T: Real>(c: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().flat_map(|&i| c[i * 3..i * 3 + 3].iter().copied()).collect()
}

impl MrBranch {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut SplitMix64, name: &str, cfg: &NetConfig) -> Result<Self> {
        let act = Activation::LeakyRelu(cfg.leaky_slope);
        let c1 = cfg.fr_widths[0];
        let [wb, wc] = cfg.mr_widths;
        Ok(Self {
            down1: MlpLayer::new(store, rng, &format!("{name}.down1"), 2 * c1, wb, true, act)?,
            down2: MlpLayer::new(store, rng, &format!("{name}.down2"), 2 * wb, wc, true, act)?,
            up: MlpLayer::new(store, rng, &format!("{name}.up"), wb + wc, wb, true, act)?,
            out: MlpLayer::new(store, rng, &format!("{name}.out"), c1 + wb + wc, cfg.mr_out_width, true, act)?,
            k_mr: cfg.k_mr,
            knn_space: cfg.mr_knn,
        })
    }

    fn widths(&self) -> (usize, usize, usize) {
        (self.down1.cin() / 2, self.down1.cout(), self.down2.cout())
    }

    /// `f1` and `coords` stack `clouds` clouds of equal size along rows.
    pub fn forward<T: Real>(
        &self,
        fwd: &mut Forward<'_, T>,
        f1: &Tensor<T>,
        coords: &Tensor<T>,
        clouds: usize,
    ) -> Result<(Tensor<T>, MrCache<T>)> {
        let (c1, wb, wc) = self.widths();
        let rows = f1.rows();
        if f1.cols() != c1 || coords.rows() != rows || coords.cols() != 3 || clouds == 0 || !rows.is_multiple_of(clouds) {
            return Err(Error::Shape(format!(
                "MR branch got features {:?} and coordinates {:?} for {clouds} clouds",
                f1.shape(),
                coords.shape()
            )));
        }
        let n = rows / clouds;
        let np = padded_len(n);
        let (m1, m2) = (np / 4, np / 16);
        let local = pad_map(n);
        let pad_src: Vec<usize> = (0..clouds).flat_map(|b| local.iter().map(move |&s| b * n + s)).collect();
        let a0 = f1.gather_rows(&pad_src);
        let cp = coords.gather_rows(&pad_src);

        let geo = par::map_range(clouds, |b| {
            let c0 = &cp.data()[b * np * 3..(b + 1) * np * 3];
            let s1 = fps_raw(c0, np, m1);
            let x1 = gather_coords(c0, &s1);
            let s2 = fps_raw(&x1, m1, m2);
            let x2 = gather_coords(&x1, &s2);
            CloudGeometry {
                i21: Interpolation::new(&x2, m2, &x1, m1),
                i10: Interpolation::new(&x1, m1, c0, np),
                i20: Interpolation::new(&x2, m2, c0, np),
                s1,
                s2,
            }
        });

        let g1: Vec<usize> = geo
            .iter()
            .enumerate()
            .flat_map(|(b, g)| g.s1.iter().map(move |&s| b * np + s))
            .collect();
        let x1 = a0.gather_rows(&g1);
        let k1 = self.k_mr.min(m1);
        let knn1 = match self.knn_space {
            KnnSpace::Feature => batched_knn(&x1, clouds, m1, k1)?,
            KnnSpace::Coordinate => batched_knn(&cp.gather_rows(&g1), clouds, m1, k1)?,
        };
        let e1 = graph_encode(&x1, &knn1)?.reshape(&[clouds * m1 * k1, 2 * c1])?;
        let (h1, down1) = self.down1.forward(fwd, &e1)?;
        let (bf, arg1) = max_pool_neighbors(&h1.reshape(&[clouds * m1, k1, wb])?, k1);

        let g2: Vec<usize> = geo
            .iter()
            .enumerate()
            .flat_map(|(b, g)| g.s2.iter().map(move |&s| b * m1 + s))
            .collect();
        let x2 = bf.gather_rows(&g2);
        let k2 = self.k_mr.min(m2);
        let knn2 = match self.knn_space {
            KnnSpace::Feature => batched_knn(&x2, clouds, m2, k2)?,
            KnnSpace::Coordinate => {
                let g12: Vec<usize> = g2.iter().map(|&i| g1[i]).collect();
                batched_knn(&cp.gather_rows(&g12), clouds, m2, k2)?
            }
        };
        let e2 = graph_encode(&x2, &knn2)?.reshape(&[clouds * m2 * k2, 2 * wb])?;
        let (h2, down2) = self.down2.forward(fwd, &e2)?;
        let (cf, arg2) = max_pool_neighbors(&h2.reshape(&[clouds * m2, k2, wc])?, k2);

        let i21: Vec<_> = geo.iter().map(|g| &g.i21).collect();
        let i10: Vec<_> = geo.iter().map(|g| &g.i10).collect();
        let i20: Vec<_> = geo.iter().map(|g| &g.i20).collect();
        let (bp, up) = self.up.forward(fwd, &concat_cols(&[&bf, &interp_batch(&i21, &cf, false)]))?;
        let z = concat_cols(&[&a0, &interp_batch(&i10, &bp, false), &interp_batch(&i20, &cf, false)]);
        let (fp, out) = self.out.forward(fwd, &z)?;
        let keep: Vec<usize> = (0..clouds).flat_map(|b| (0..n).map(move |j| b * np + j)).collect();
        Ok((
            fp.gather_rows(&keep),
            MrCache {
                n,
                np,
                clouds,
                pad_src,
                geo,
                g1,
                knn1,
                down1,
                arg1,
                g2,
                knn2,
                down2,
                arg2,
                up,
                out,
            },
        ))
    }

    /// Returns the gradient with respect to `f1`; coordinates are treated as constants.
    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, cache: &MrCache<T>, d_out: &Tensor<T>) -> Tensor<T> {
        let (c1, wb, wc) = self.widths();
        let (n, np, clouds) = (cache.n, cache.np, cache.clouds);
        let (m1, m2) = (np / 4, np / 16);
        let (k1, k2) = (cache.knn1.cols, cache.knn2.cols);
        let keep: Vec<usize> = (0..clouds).flat_map(|b| (0..n).map(move |j| b * np + j)).collect();
        let dfp = scatter_add_rows(d_out, &keep, clouds * np);
        let dz = self.out.backward(store, &cache.out, &dfp);
        let mut dz = split_cols(&dz, &[c1, wb, wc]).into_iter();
        let (mut da0, d_up_b0, d_up_c0) = (dz.next().unwrap(), dz.next().unwrap(), dz.next().unwrap());

        let i21: Vec<_> = cache.geo.iter().map(|g| &g.i21).collect();
        let i10: Vec<_> = cache.geo.iter().map(|g| &g.i10).collect();
        let i20: Vec<_> = cache.geo.iter().map(|g| &g.i20).collect();
        let dbp = interp_batch(&i10, &d_up_b0, true);
        let mut dcf = interp_batch(&i20, &d_up_c0, true);
        let du = self.up.backward(store, &cache.up, &dbp);
        let mut du = split_cols(&du, &[wb, wc]).into_iter();
        let (mut dbf, d_up_c1) = (du.next().unwrap(), du.next().unwrap());
        add_into(&mut dcf, &interp_batch(&i21, &d_up_c1, true));

        let dh2 = max_pool_backward(&dcf, &cache.arg2, k2)
            .reshape(&[clouds * m2 * k2, wc])
            .expect("pool grad shape");
        let de2 = self.down2.backward(store, &cache.down2, &dh2);
        let dx2 = graph_encode_backward(&de2, &cache.knn2, wb);
        add_into(&mut dbf, &scatter_add_rows(&dx2, &cache.g2, clouds * m1));

        let dh1 = max_pool_backward(&dbf, &cache.arg1, k1)
            .reshape(&[clouds * m1 * k1, wb])
            .expect("pool grad shape");
        let de1 = self.down1.backward(store, &cache.down1, &dh1);
        let dx1 = graph_encode_backward(&de1, &cache.knn1, c1);
        add_into(&mut da0, &scatter_add_rows(&dx1, &cache.g1, clouds * np));
        scatter_add_rows(&da0, &cache.pad_src, clouds * n)
    }
}
