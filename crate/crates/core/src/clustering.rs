//! k-means over hyponym→hypernym offset vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{BoundPair, RelationPair};
use crate::embeddings::EmbeddingTable;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{squared_distance, Matrix};

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Matrix,
    /// Sum of squared distances of the fitted points to their centroids.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step, in order.
    pub inertia_trace: Vec<f64>,
}

impl ClusterModel {
    /// A single cluster centered at the origin, for models trained without clustering.
    pub fn single(dim: usize) -> Self {
        ClusterModel {
            centroids: Matrix::zeros(1, dim),
            inertia: 0.0,
            iterations: 0,
            inertia_trace: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    /// Nearest centroid by squared Euclidean distance, lowest index on ties.
    pub fn assign(&self, offset: &[f64]) -> usize {
        nearest(&self.centroids, offset).0
    }

    pub fn assign_checked(&self, offset: &[f64]) -> Result<usize> {
        check_dim(self.dim(), offset.len())?;
        Ok(self.assign(offset))
    }
}

fn nearest(centroids: &Matrix, point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.row_iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// `target - source` per pair, one row each.
pub fn offsets(pairs: &[RelationPair], table: &EmbeddingTable) -> Result<Matrix> {
    let mut bound = Vec::with_capacity(pairs.len());
    for p in pairs {
        let source = table
            .lookup(&p.source)
            .ok_or_else(|| Error::UnknownWord(p.source.clone()))?;
        let target = table
            .lookup(&p.target)
            .ok_or_else(|| Error::UnknownWord(p.target.clone()))?;
        bound.push(BoundPair { source, target });
    }
    Ok(bound_offsets(&bound, table))
}

pub fn bound_offsets(pairs: &[BoundPair], table: &EmbeddingTable) -> Matrix {
    let d = table.dim();
    let mut out = Matrix::zeros(pairs.len(), d);
    for (i, p) in pairs.iter().enumerate() {
        offset_into(table, *p, out.row_mut(i));
    }
    out
}

pub(crate) fn offset_into(table: &EmbeddingTable, p: BoundPair, dst: &mut [f64]) {
    for ((o, y), x) in dst.iter_mut().zip(table.vector(p.target)).zip(table.vector(p.source)) {
        *o = y - x;
    }
}

/// Lloyd's algorithm from a seeded k-means++ start.
///
/// Stops once no centroid moves more than `tol` (Euclidean) or after
/// `max_iter` updates. A cluster that ends up empty is reseeded at the point
/// lying farthest from its own centroid.
pub fn fit_kmeans(points: &Matrix, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<ClusterModel> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Invalid(format!("k = {k} exceeds the number of points ({n})")));
    }
    if max_iter == 0 {
        return Err(Error::Invalid("max_iter must be at least 1".into()));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("offset matrix".into()));
    }
    let d = points.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);

    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    let mut trace = Vec::new();
    let mut iterations = 0;

    loop {
        let inertia = assign_all(points, &centroids, &mut labels, &mut dists);
        trace.push(inertia);
        if iterations == max_iter {
            break;
        }
        iterations += 1;

        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        let mut next = Matrix::zeros(k, d);
        let mut taken = vec![false; n];
        #[allow(clippy::needless_range_loop)]
        for c in 0..k {
            if counts[c] == 0 {
                // Farthest point from its assigned centroid, never reused twice.
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("k <= n");
                taken[far] = true;
                dists[far] = 0.0;
                next.row_mut(c).copy_from_slice(points.row(far));
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in next.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        let shift = (0..k)
            .map(|c| squared_distance(centroids.row(c), next.row(c)).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < tol {
            let inertia = assign_all(points, &centroids, &mut labels, &mut dists);
            trace.push(inertia);
            break;
        }
    }

    Ok(ClusterModel {
        centroids,
        inertia: *trace.last().expect("at least one assignment"),
        iterations,
        inertia_trace: trace,
    })
}

fn assign_all(points: &Matrix, centroids: &Matrix, labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.row_iter().enumerate() {
        let (c, dist) = nearest(centroids, p);
        labels[i] = c;
        dists[i] = dist;
        inertia += dist;
    }
    inertia
}

fn plus_plus_init<R: Rng>(points: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut best: Vec<f64> = points
        .row_iter()
        .map(|p| squared_distance(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in best.iter().enumerate() {
                if w > 0.0 && r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            // Rounding can leave `r` past the end; fall back to the last positive weight.
            if best[pick] == 0.0 {
                pick = best.iter().rposition(|&w| w > 0.0).expect("positive total");
            }
            pick
        } else {
            // All remaining points coincide with a centroid.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        for (b, p) in best.iter_mut().zip(points.row_iter()) {
            *b = b.min(squared_distance(p, points.row(pick)));
        }
    }
    let mut centroids = Matrix::zeros(k, points.cols());
    for (c, &i) in chosen.iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(points.row(i));
    }
    centroids
}
