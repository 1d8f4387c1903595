//! Lloyd's k-means with k-means++ seeding: turns feature frames into base
//! token ids.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, Reader, Writer};
use crate::corpus_io::{FeatureMatrix, TokenSequence};
use crate::error::{Error, Result};

pub const KMEANS_MAGIC: &[u8; 8] = b"ABPEKMNS";
pub const KMEANS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    k: usize,
    dim: usize,
    centroids: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the largest centroid shift (L2) is at most this.
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

/// Result of [`kmeans_fit`] with the optimisation trace.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: KMeansModel,
    /// Inertia of the data assigned to the k-means++ seeds.
    pub initial_inertia: f64,
    /// Inertia after each assignment step, in iteration order.
    pub inertia_history: Vec<f64>,
    /// Inertia of the returned model.
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &c)| {
            let d = x as f64 - c;
            d * d
        })
        .sum()
}

/// Nearest centroid by squared L2, lowest index on ties.
fn nearest(point: &[f32], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_all(
    features: &FeatureMatrix,
    centroids: &[f64],
    labels: &mut [usize],
    dists: &mut [f64],
) -> f64 {
    let dim = features.dim();
    let mut inertia = 0.0;
    for (i, row) in features.iter_rows().enumerate() {
        let (j, d) = nearest(row, centroids, dim);
        labels[i] = j;
        dists[i] = d;
        inertia += d;
    }
    inertia
}

fn plus_plus_seeds(features: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = features.rows();
    let dim = features.dim();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend(features.row(first).iter().map(|&v| v as f64));
    let mut d2: Vec<f64> = features
        .iter_rows()
        .map(|r| sq_dist(r, &centroids[..dim]))
        .collect();

    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > u {
                    chosen = Some(i);
                    break;
                }
            }
            // Rounding can leave u at the very end of the cumulative sum.
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend(features.row(pick).iter().map(|&v| v as f64));
        let c = &centroids[start..];
        for (i, row) in features.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(row, c));
        }
    }
    centroids
}

/// Fits `config.k` centroids with Lloyd iterations from k-means++ seeds.
///
/// A cluster left empty by an assignment step is moved onto the point that is
/// currently farthest from its own centroid. Deterministic for a fixed config.
pub fn kmeans_fit(features: &FeatureMatrix, config: &KMeansConfig) -> Result<KMeansFit> {
    let KMeansConfig {
        k,
        seed,
        max_iters,
        tol,
    } = *config;
    let n = features.rows();
    let dim = features.dim();
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if n < k {
        return Err(Error::invalid(format!("need at least k={k} rows, got {n}")));
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be positive"));
    }
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(Error::invalid("tol must be finite and non-negative"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(features, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut dists = vec![0f64; n];
    let mut history = Vec::new();
    let mut initial_inertia = None;
    let mut converged = false;
    let mut iterations = 0;

    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    while iterations < max_iters {
        let inertia = assign_all(features, &centroids, &mut labels, &mut dists);
        initial_inertia.get_or_insert(inertia);
        history.push(inertia);
        iterations += 1;

        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for (i, row) in features.iter_rows().enumerate() {
            let j = labels[i];
            counts[j] += 1;
            for (s, &v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(row) {
                *s += v as f64;
            }
        }

        let mut updated = centroids.clone();
        let mut empties = Vec::new();
        for j in 0..k {
            if counts[j] == 0 {
                empties.push(j);
                continue;
            }
            let inv = counts[j] as f64;
            for (u, &s) in updated[j * dim..(j + 1) * dim]
                .iter_mut()
                .zip(&sums[j * dim..])
            {
                *u = s / inv;
            }
        }
        if !empties.is_empty() {
            // Farthest points first, lowest row index on ties.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
            for (j, &row) in empties.iter().zip(&order) {
                for (u, &v) in updated[j * dim..(j + 1) * dim]
                    .iter_mut()
                    .zip(features.row(row))
                {
                    *u = v as f64;
                }
            }
        }

        let shift = centroids
            .chunks_exact(dim)
            .zip(updated.chunks_exact(dim))
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        centroids = updated;
        if shift <= tol {
            converged = true;
            break;
        }
    }

    let model = KMeansModel {
        k,
        dim,
        centroids: centroids.iter().map(|&c| c as f32).collect(),
    };
    let inertia = model.inertia(features)?;
    Ok(KMeansFit {
        model,
        initial_inertia: initial_inertia.unwrap_or(inertia),
        inertia_history: history,
        inertia,
        iterations,
        converged,
    })
}

impl KMeansModel {
    pub fn new(k: usize, dim: usize, centroids: Vec<f32>) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::invalid("k and dim must be positive"));
        }
        if centroids.len() != k * dim {
            return Err(Error::DimensionMismatch {
                expected: k * dim,
                actual: centroids.len(),
            });
        }
        if centroids.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite centroid"));
        }
        Ok(KMeansModel { k, dim, centroids })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    /// The centroids as a feature matrix (one row per centroid).
    pub fn centroid_matrix(&self) -> FeatureMatrix {
        FeatureMatrix::new(self.k, self.dim, self.centroids.clone()).unwrap()
    }

    fn centroids_f64(&self) -> Vec<f64> {
        self.centroids.iter().map(|&c| c as f64).collect()
    }

    /// Sum of squared distances from each row to its nearest centroid.
    pub fn inertia(&self, features: &FeatureMatrix) -> Result<f64> {
        self.check_dim(features)?;
        let c = self.centroids_f64();
        Ok(features
            .iter_rows()
            .map(|r| nearest(r, &c, self.dim).1)
            .sum())
    }

    fn check_dim(&self, features: &FeatureMatrix) -> Result<()> {
        if features.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: features.dim(),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = Writer::new(KMEANS_MAGIC, KMEANS_VERSION);
        w.u64(self.k as u64);
        w.u64(self.dim as u64);
        for &c in &self.centroids {
            w.f32(c);
        }
        w.write_to(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = binio::read_file(path)?;
        let (mut r, version) = Reader::open(&bytes, path, KMEANS_MAGIC)?;
        if version != KMEANS_VERSION {
            return Err(r.error(format!("unsupported k-means model version {version}")));
        }
        let k = r.u64()? as usize;
        let dim = r.u64()? as usize;
        if k == 0 || dim == 0 {
            return Err(r.error(format!("empty k-means model {k}x{dim}")));
        }
        if k.checked_mul(dim).and_then(|c| c.checked_mul(4)) != Some(r.remaining()) {
            return Err(r.error("centroid payload size does not match header"));
        }
        let mut centroids = Vec::with_capacity(k * dim);
        for _ in 0..k * dim {
            centroids.push(r.f32()?);
        }
        r.finish()?;
        KMeansModel::new(k, dim, centroids).map_err(|e| Error::binary(path, e.to_string()))
    }
}

/// Nearest-centroid id for every row.
pub fn kmeans_assign(model: &KMeansModel, features: &FeatureMatrix) -> Result<TokenSequence> {
    model.check_dim(features)?;
    let c = model.centroids_f64();
    Ok(features
        .iter_rows()
        .map(|r| nearest(r, &c, model.dim).0 as u32)
        .collect())
}

/// Uniform sample of `m` row indices out of `n` (reservoir sampling), returned
/// in ascending order. Returns all indices when `m >= n`.
pub fn reservoir_sample(n: usize, m: usize, seed: u64) -> Vec<usize> {
    if m >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir: Vec<usize> = (0..m).collect();
    for i in m..n {
        let j = rng.random_range(0..=i);
        if j < m {
            reservoir[j] = i;
        }
    }
    reservoir.sort_unstable();
    reservoir
}
