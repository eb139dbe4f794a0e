//! Synthetic datasets sampled from primitive surfaces.
//!
//! Samplers draw uniformly by surface area. Every cloud gets its own RNG
//! derived from the dataset seed, so datasets are pure functions of the seed.

use std::f64::consts::{PI, TAU};

use super::{normalize, Category, Dataset, LabeledCloud};
use crate::network::TaskKind;
use crate::numerics::{derive_seed, SplitMix64, Tensor};
use crate::{Error, Result};

pub type Point = [f64; 3];

/// Smallest cloud the generators accept.
pub const MIN_POINTS: usize = 32;

pub const CLS_CLASSES: [&str; 4] = ["sphere", "cube", "cylinder", "torus"];

pub const SEG_CATEGORIES: [&str; 2] = ["mallet", "lamp"];

/// Global part ids per segmentation category.
pub fn seg_part_table() -> Vec<Vec<usize>> {
    vec![vec![0, 1], vec![2, 3, 4]]
}

pub const SEG_PART_NAMES: [&str; 5] = ["mallet.head", "mallet.handle", "lamp.base", "lamp.pole", "lamp.shade"];

/// Allowed fraction of a shape's points per part, indexed like [`SEG_PART_NAMES`].
pub const SEG_PART_FRACTIONS: [(f64, f64); 5] = [(0.35, 0.50), (0.50, 0.65), (0.20, 0.30), (0.30, 0.50), (0.30, 0.40)];

const STREAM_CLS_TRAIN: u64 = 1;
const STREAM_CLS_TEST: u64 = 2;
const STREAM_SEG: u64 = 3;
const STREAM_SEG_TEST: u64 = 4;

pub fn sample_sphere(rng: &mut SplitMix64, n: usize, radius: f64) -> Vec<Point> {
    (0..n)
        .map(|_| loop {
            let v = [rng.normal(), rng.normal(), rng.normal()];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm > 1e-12 {
                break [radius * v[0] / norm, radius * v[1] / norm, radius * v[2] / norm];
            }
        })
        .collect()
}

fn pick_weighted(rng: &mut SplitMix64, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.uniform(0.0, total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Surface of the axis-aligned box `[-h, h]` centred at the origin.
pub fn sample_box(rng: &mut SplitMix64, n: usize, half: [f64; 3]) -> Vec<Point> {
    let [a, b, c] = half;
    let areas = [b * c, a * c, a * b];
    (0..n)
        .map(|_| {
            let axis = pick_weighted(rng, &areas);
            let side = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
            let mut p = [rng.uniform(-a, a), rng.uniform(-b, b), rng.uniform(-c, c)];
            p[axis] = side * half[axis];
            p
        })
        .collect()
}

/// Cylinder with axis `z ∈ [0, height]`, optionally with both caps.
pub fn sample_cylinder(rng: &mut SplitMix64, n: usize, radius: f64, height: f64, caps: bool) -> Vec<Point> {
    let side = TAU * radius * height;
    let cap = if caps { PI * radius * radius } else { 0.0 };
    (0..n)
        .map(|_| {
            let t = rng.uniform(0.0, TAU);
            match pick_weighted(rng, &[side, cap, cap]) {
                0 => [radius * t.cos(), radius * t.sin(), rng.uniform(0.0, height)],
                part => {
                    let r = radius * rng.next_f64().sqrt();
                    [r * t.cos(), r * t.sin(), if part == 1 { 0.0 } else { height }]
                }
            }
        })
        .collect()
}

/// Flat disk in the plane `z = 0`.
pub fn sample_disk(rng: &mut SplitMix64, n: usize, radius: f64) -> Vec<Point> {
    (0..n)
        .map(|_| {
            let t = rng.uniform(0.0, TAU);
            let r = radius * rng.next_f64().sqrt();
            [r * t.cos(), r * t.sin(), 0.0]
        })
        .collect()
}

/// Torus around the z axis. The tube angle is rejection sampled so the
/// density is uniform over the surface.
pub fn sample_torus(rng: &mut SplitMix64, n: usize, major: f64, minor: f64) -> Vec<Point> {
    (0..n)
        .map(|_| loop {
            let u = rng.uniform(0.0, TAU);
            let v = rng.uniform(0.0, TAU);
            let ring = major + minor * v.cos();
            if rng.next_f64() * (major + minor) < ring {
                break [ring * u.cos(), ring * u.sin(), minor * v.sin()];
            }
        })
        .collect()
}

pub fn rotate_z(points: &mut [Point], angle: f64) {
    let (s, c) = angle.sin_cos();
    for p in points {
        let (x, y) = (p[0], p[1]);
        p[0] = c * x - s * y;
        p[1] = s * x + c * y;
    }
}

fn translate(points: &mut [Point], t: Point) {
    for p in points {
        for a in 0..3 {
            p[a] += t[a];
        }
    }
}

fn to_tensor(points: &[Point]) -> Tensor<f64> {
    Tensor::from_vec(&[points.len(), 3], points.iter().flatten().copied().collect()).expect("non-empty cloud")
}

fn finish(points: &[Point]) -> Tensor<f32> {
    normalize(&to_tensor(points)).cast()
}

fn check_points(points: usize) -> Result<()> {
    if points < MIN_POINTS {
        return Err(Error::InvalidArgument(format!(
            "clouds need at least {MIN_POINTS} points, got {points}"
        )));
    }
    Ok(())
}

/// One primitive of class `class` (index into [`CLS_CLASSES`]), rotated about z, unnormalized.
pub fn sample_primitive(rng: &mut SplitMix64, class: usize, n: usize) -> Vec<Point> {
    let mut pts = match class {
        0 => sample_sphere(rng, n, 1.0),
        1 => sample_box(rng, n, [1.0; 3]),
        2 => {
            let (r, h) = (rng.uniform(0.4, 0.6), rng.uniform(1.2, 2.0));
            let mut p = sample_cylinder(rng, n, r, h, true);
            translate(&mut p, [0.0, 0.0, -h / 2.0]);
            p
        }
        3 => {
            let minor = rng.uniform(0.25, 0.45);
            sample_torus(rng, n, 1.0, minor)
        }
        _ => panic!("unknown primitive class {class}"),
    };
    rotate_z(&mut pts, rng.uniform(0.0, TAU));
    pts
}

fn cls_split(seed: u64, stream: u64, per_class: usize, points: usize) -> Vec<LabeledCloud> {
    let mut clouds = Vec::with_capacity(per_class * CLS_CLASSES.len());
    for class in 0..CLS_CLASSES.len() {
        for i in 0..per_class {
            let mut rng = SplitMix64::new(derive_seed(seed, stream, (class * per_class + i) as u64));
            clouds.push(LabeledCloud {
                coords: finish(&sample_primitive(&mut rng, class, points)),
                cloud_label: Some(class),
                point_labels: None,
                category: None,
            });
        }
    }
    clouds
}

/// Four-class primitive dataset: `(train, test)`.
pub fn gen_cls_dataset(seed: u64, train_per_class: usize, test_per_class: usize, points: usize) -> Result<(Dataset, Dataset)> {
    check_points(points)?;
    let make = |clouds| Dataset {
        task: TaskKind::Classification,
        class_names: CLS_CLASSES.iter().map(|s| s.to_string()).collect(),
        categories: Vec::new(),
        clouds,
    };
    Ok((
        make(cls_split(seed, STREAM_CLS_TRAIN, train_per_class, points)),
        make(cls_split(seed, STREAM_CLS_TEST, test_per_class, points)),
    ))
}

/// Point counts per part with fractions drawn inside [`SEG_PART_FRACTIONS`].
fn part_counts(rng: &mut SplitMix64, parts: &[usize], n: usize) -> Vec<usize> {
    // Handle and pole take the remainder.
    let (fixed, rest): (Vec<usize>, usize) = match parts {
        [head, handle] => (vec![*head], *handle),
        [base, pole, shade] => (vec![*base, *shade], *pole),
        _ => unreachable!("part tables have two or three parts"),
    };
    let mut counts = [0; 5];
    let mut used = 0;
    for &p in &fixed {
        let (lo, hi) = SEG_PART_FRACTIONS[p];
        let c = (rng.uniform(lo, hi) * n as f64).round() as usize;
        counts[p] = c;
        used += c;
    }
    counts[rest] = n - used;
    parts.iter().map(|&p| counts[p]).collect()
}

/// One composite shape of `category`; returns points and global part labels.
pub fn sample_composite(rng: &mut SplitMix64, category: usize, n: usize) -> (Vec<Point>, Vec<usize>) {
    let table = seg_part_table();
    let parts = &table[category];
    let counts = part_counts(rng, parts, n);
    let mut pts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut push = |p: Vec<Point>, label: usize, pts: &mut Vec<Point>| {
        labels.extend(std::iter::repeat_n(label, p.len()));
        pts.extend(p);
    };
    match category {
        0 => {
            let len = rng.uniform(1.2, 1.6);
            let half = [rng.uniform(0.35, 0.5), 0.15, 0.15];
            let mut head = sample_box(rng, counts[0], half);
            translate(&mut head, [0.0, 0.0, len + half[2]]);
            let handle = sample_cylinder(rng, counts[1], 0.06, len, false);
            push(head, parts[0], &mut pts);
            push(handle, parts[1], &mut pts);
        }
        1 => {
            let base_r = rng.uniform(0.45, 0.6);
            let height = rng.uniform(0.9, 1.3);
            let shade_r = rng.uniform(0.25, 0.35);
            let base = sample_disk(rng, counts[0], base_r);
            let pole = sample_cylinder(rng, counts[1], 0.04, height, false);
            let mut shade = sample_sphere(rng, counts[2], shade_r);
            translate(&mut shade, [0.0, 0.0, height + shade_r]);
            push(base, parts[0], &mut pts);
            push(pole, parts[1], &mut pts);
            push(shade, parts[2], &mut pts);
        }
        _ => panic!("unknown category {category}"),
    }
    rotate_z(&mut pts, rng.uniform(0.0, TAU));
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    (order.iter().map(|&i| pts[i]).collect(), order.iter().map(|&i| labels[i]).collect())
}

fn seg_split(seed: u64, stream: u64, shapes: usize, points: usize) -> Dataset {
    let clouds = (0..shapes)
        .map(|i| {
            let category = i % SEG_CATEGORIES.len();
            let mut rng = SplitMix64::new(derive_seed(seed, stream, i as u64));
            let (pts, labels) = sample_composite(&mut rng, category, points);
            LabeledCloud {
                coords: finish(&pts),
                cloud_label: None,
                point_labels: Some(labels),
                category: Some(category),
            }
        })
        .collect();
    Dataset {
        task: TaskKind::Segmentation,
        class_names: SEG_PART_NAMES.iter().map(|s| s.to_string()).collect(),
        categories: SEG_CATEGORIES
            .iter()
            .zip(seg_part_table())
            .map(|(name, parts)| Category {
                name: name.to_string(),
                parts,
            })
            .collect(),
        clouds,
    }
}

/// Mallet/lamp part dataset; categories alternate.
pub fn gen_seg_dataset(seed: u64, shapes: usize, points: usize) -> Result<Dataset> {
    check_points(points)?;
    Ok(seg_split(seed, STREAM_SEG, shapes, points))
}

/// Train and held-out splits drawn from independent streams.
pub fn gen_seg_splits(seed: u64, train: usize, test: usize, points: usize) -> Result<(Dataset, Dataset)> {
    check_points(points)?;
    Ok((
        seg_split(seed, STREAM_SEG, train, points),
        seg_split(seed, STREAM_SEG_TEST, test, points),
    ))
}

/// Unit-sphere surface whose density falls linearly along x from `ratio`
/// (at x = -1) to 1 (at x = +1). Unnormalized.
pub fn density_gradient_points(seed: u64, n: usize, ratio: f64) -> Result<Vec<Point>> {
    if n == 0 || !(ratio >= 1.0) {
        return Err(Error::InvalidArgument("need n > 0 and ratio >= 1".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let p = sample_sphere(&mut rng, 1, 1.0)[0];
        let w = (1.0 + (ratio - 1.0) * (1.0 - p[0]) / 2.0) / ratio;
        if rng.next_f64() < w {
            pts.push(p);
        }
    }
    Ok(pts)
}

/// Normalized [`density_gradient_points`].
pub fn density_gradient_cloud(seed: u64, n: usize, ratio: f64) -> Result<Tensor<f32>> {
    Ok(finish(&density_gradient_points(seed, n, ratio)?))
}
