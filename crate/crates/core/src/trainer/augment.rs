//! Random similarity transforms for training and vote-averaged inference.

use crate::network::{Batch, DrNet};
use crate::numerics::{Real, SplitMix64, Tensor};
use crate::Result;

pub const SCALE_RANGE: (f64, f64) = (0.8, 1.25);
pub const SHIFT_RANGE: f64 = 0.1;
pub const DEFAULT_VOTES: usize = 10;

/// Isotropic scale and translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub shift: [f64; 3],
}

impl Similarity {
    pub const IDENTITY: Self = Self {
        scale: 1.0,
        shift: [0.0; 3],
    };

    /// Scale first, then the three shift components.
    pub fn draw(rng: &mut SplitMix64) -> Self {
        let scale = rng.uniform(SCALE_RANGE.0, SCALE_RANGE.1);
        let shift = [(); 3].map(|_| rng.uniform(-SHIFT_RANGE, SHIFT_RANGE));
        Self { scale, shift }
    }

    pub fn draw_scale(rng: &mut SplitMix64) -> Self {
        Self {
            scale: rng.uniform(SCALE_RANGE.0, SCALE_RANGE.1),
            shift: [0.0; 3],
        }
    }

    pub fn apply<T: Real>(&self, p: &Tensor<T>) -> Tensor<T> {
        let mut out = p.clone();
        let s = T::lit(self.scale);
        let t = self.shift.map(T::lit);
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = s * *v + t[j];
            }
        }
        out
    }
}

/// `s·P + t` with `s ~ U[0.8, 1.25]`, `t ~ U[−0.1, 0.1]³`.
pub fn augment<T: Real>(p: &Tensor<T>, rng: &mut SplitMix64) -> Tensor<T> {
    Similarity::draw(rng).apply(p)
}

fn vote_copies<T: Real>(coords: &Tensor<T>, votes: usize, mut rng: Option<&mut SplitMix64>) -> Tensor<T> {
    let votes = votes.max(1);
    let mut data = Vec::with_capacity(coords.len() * votes);
    for _ in 0..votes {
        let sim = match rng.as_deref_mut() {
            Some(r) => Similarity::draw_scale(r),
            None => Similarity::IDENTITY,
        };
        data.extend_from_slice(sim.apply(coords).data());
    }
    Tensor::from_vec(&[coords.rows() * votes, 3], data).expect("stacked copies")
}

fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..logits.rows())
        .map(|i| {
            let z: Vec<f64> = logits.row(i).iter().map(|v| v.to_f64_lossy()).collect();
            let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vote {
    pub class: usize,
    pub probs: Vec<f64>,
}

/// Averages class softmax over `votes` randomly rescaled copies (eval mode).
/// With `rng = None` the copies are unmodified.
pub fn vote_eval<T: Real>(
    net: &DrNet<T>,
    coords: &Tensor<T>,
    votes: usize,
    rng: Option<&mut SplitMix64>,
) -> Result<Vote> {
    let votes = votes.max(1);
    let batch = Batch {
        coords: vote_copies(coords, votes, rng),
        clouds: votes,
        categories: Vec::new(),
    };
    let out = net.eval(&batch)?;
    let probs = mean_rows(&softmax_rows(&out.logits), votes, 1);
    Ok(Vote {
        class: argmax(&probs[0]),
        probs: probs.into_iter().next().expect("one row"),
    })
}

/// Per-point part probabilities averaged over `votes` rescaled copies.
pub fn vote_segment<T: Real>(
    net: &DrNet<T>,
    coords: &Tensor<T>,
    category: usize,
    votes: usize,
    rng: Option<&mut SplitMix64>,
) -> Result<Tensor<f64>> {
    let votes = votes.max(1);
    let n = coords.rows();
    let batch = Batch {
        coords: vote_copies(coords, votes, rng),
        clouds: votes,
        categories: vec![category; votes],
    };
    let out = net.eval(&batch)?;
    Tensor::from_rows(&mean_rows(&softmax_rows(&out.logits), votes, n))
}

/// Averages `votes` consecutive groups of `rows` rows element-wise.
fn mean_rows(p: &[Vec<f64>], votes: usize, rows: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|i| {
            let mut acc = vec![0.0; p[i].len()];
            for v in 0..votes {
                for (a, x) in acc.iter_mut().zip(&p[v * rows + i]) {
                    *a += x;
                }
            }
            acc.iter().map(|a| a / votes as f64).collect()
        })
        .collect()
}
