//! PCA pre-reduction and exact t-SNE for 2D maps of genotype and feature space.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::stats::band_of;

pub const EARLY_EXAGGERATION: f64 = 12.0;
pub const EXAGGERATION_ITERS: usize = 250;
pub const INITIAL_MOMENTUM: f64 = 0.5;
pub const FINAL_MOMENTUM: f64 = 0.8;
const MIN_GAIN: f64 = 0.01;
const KL_LOG_EVERY: usize = 50;
const ENTROPY_TOL: f64 = 1e-6;
const MAX_BISECTIONS: usize = 200;

pub const GENOTYPE_PERPLEXITY: f64 = 60.0;
pub const FEATURE_PERPLEXITY: f64 = 20.0;
pub const MAP_LEARNING_RATE: f64 = 10.0;
pub const FEATURE_PRE_REDUCE_DIMS: usize = 50;
pub const DEFAULT_ITERATIONS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("requested {requested} components but at most {max} are available")]
    TooManyComponents { requested: usize, max: usize },
    #[error("perplexity {perplexity} infeasible for {n} points")]
    InfeasiblePerplexity { perplexity: f64, n: usize },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("non-finite input data")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("distance matrix must be square, symmetric, non-negative with zero diagonal")]
    BadDistances,
}

pub type Result<T> = std::result::Result<T, EmbedError>;

#[derive(Debug, Clone)]
pub struct PcaResult {
    /// n x k projected data.
    pub projected: DMatrix<f64>,
    /// d x k loadings, columns ordered by descending eigenvalue.
    pub components: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Principal component projection of the mean-centred rows of `data`.
///
/// Eigen-decomposes whichever of the covariance (d x d) or Gram (n x n) matrix
/// is smaller. Each component's largest-magnitude loading is made positive.
pub fn pca(data: &DMatrix<f64>, out_dims: usize) -> Result<PcaResult> {
    let (n, d) = data.shape();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(EmbedError::NonFinite);
    }
    let max = n.min(d);
    if out_dims == 0 || out_dims > max {
        return Err(EmbedError::TooManyComponents { requested: out_dims, max });
    }
    let mean: Vec<f64> = (0..d).map(|j| data.column(j).mean()).collect();
    let mut centered = data.clone();
    for j in 0..d {
        centered.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let denom = (n.max(2) - 1) as f64;

    let (eigenvalues, components) = if d <= n {
        let cov = centered.transpose() * &centered / denom;
        let (vals, vecs) = sorted_eigen(cov);
        (vals[..out_dims].to_vec(), vecs.columns(0, out_dims).into_owned())
    } else {
        let gram = &centered * centered.transpose() / denom;
        let (vals, vecs) = sorted_eigen(gram);
        let mut comps = DMatrix::zeros(d, out_dims);
        for k in 0..out_dims {
            let lambda = vals[k];
            if lambda > 1e-12 * vals[0].max(1e-300) {
                let v = centered.transpose() * vecs.column(k);
                let norm = v.norm();
                if norm > 0.0 {
                    comps.set_column(k, &(v / norm));
                }
            }
        }
        (vals[..out_dims].to_vec(), comps)
    };

    let mut components = components;
    for k in 0..out_dims {
        let mut col = components.column_mut(k);
        let pivot = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    let projected = &centered * &components;
    Ok(PcaResult {
        projected,
        components,
        eigenvalues: eigenvalues.into_iter().map(|v| v.max(0.0)).collect(),
        mean,
    })
}

fn sorted_eigen(sym: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_columns(
        &order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>(),
    );
    (vals, vecs)
}

/// Row-major n x n squared Euclidean distances.
pub fn squared_distances(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    out
}

/// Gaussian affinities calibrated to a target perplexity.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    pub n: usize,
    /// Row-major conditional p(j|i).
    pub conditional: Vec<f64>,
    /// Row-major symmetrised joint (p(j|i) + p(i|j)) / 2n.
    pub joint: Vec<f64>,
    /// Precision 1/(2 sigma^2) of each row's Gaussian.
    pub betas: Vec<f64>,
    /// Achieved Shannon entropy of each conditional row, in bits.
    pub entropies: Vec<f64>,
}

/// Conditional row for precision `beta` over squared distances; returns the
/// row and its entropy in bits.
fn gaussian_row(sq: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    let min = sq
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, &d) in sq.iter().enumerate() {
        if j == i {
            row[j] = 0.0;
            continue;
        }
        let shifted = d - min;
        let p = (-beta * shifted).exp();
        row[j] = p;
        sum += p;
        weighted += shifted * p;
    }
    for p in row.iter_mut() {
        *p /= sum;
    }
    (sum.ln() + beta * weighted / sum) / std::f64::consts::LN_2
}

/// Calibration on squared distances (row-major n x n).
pub fn calibrate_squared(sq: &[f64], n: usize, perplexity: f64) -> Result<Affinities> {
    if n < 2 || !(perplexity > 0.0) || perplexity > (n - 1) as f64 {
        return Err(EmbedError::InfeasiblePerplexity { perplexity, n });
    }
    let target = perplexity.log2();
    let mut conditional = vec![0.0; n * n];
    let mut betas = vec![1.0; n];
    let mut entropies = vec![0.0; n];
    for i in 0..n {
        let d = &sq[i * n..(i + 1) * n];
        let row = &mut conditional[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        let mut h = gaussian_row(d, i, beta, row);
        for _ in 0..MAX_BISECTIONS {
            if (h - target).abs() < ENTROPY_TOL {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            h = gaussian_row(d, i, beta, row);
        }
        betas[i] = beta;
        entropies[i] = h;
    }
    let mut joint = vec![0.0; n * n];
    let scale = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) / scale;
        }
    }
    Ok(Affinities { n, conditional, joint, betas, entropies })
}

/// Perplexity calibration from a (non-squared) distance matrix.
pub fn perplexity_calibration(distances: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let n = distances.len();
    for (i, row) in distances.iter().enumerate() {
        if row.len() != n || row[i] != 0.0 {
            return Err(EmbedError::BadDistances);
        }
        for (j, &d) in row.iter().enumerate() {
            if !(d >= 0.0) || !d.is_finite() || (d - distances[j][i]).abs() > 1e-12 * d.max(1.0) {
                return Err(EmbedError::BadDistances);
            }
        }
    }
    let sq: Vec<f64> = distances.iter().flatten().map(|d| d * d).collect();
    calibrate_squared(&sq, n, perplexity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    /// Learning rate.
    pub epsilon: f64,
    pub iterations: usize,
    pub seed: u64,
    pub pre_reduce_dims: Option<usize>,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            epsilon: 200.0,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            pre_reduce_dims: None,
        }
    }
}

impl TsneConfig {
    pub fn genotype(seed: u64) -> Self {
        Self {
            perplexity: GENOTYPE_PERPLEXITY,
            epsilon: MAP_LEARNING_RATE,
            iterations: DEFAULT_ITERATIONS,
            seed,
            pre_reduce_dims: None,
        }
    }

    pub fn feature(seed: u64) -> Self {
        Self {
            perplexity: FEATURE_PERPLEXITY,
            epsilon: MAP_LEARNING_RATE,
            iterations: DEFAULT_ITERATIONS,
            seed,
            pre_reduce_dims: Some(FEATURE_PRE_REDUCE_DIMS),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 10 {
            return Err(EmbedError::TooFewPoints { needed: 10, got: n });
        }
        if !(self.perplexity > 0.0) || self.perplexity >= (n - 1) as f64 / 3.0 {
            return Err(EmbedError::InfeasiblePerplexity { perplexity: self.perplexity, n });
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(EmbedError::InvalidConfig(format!("learning rate {}", self.epsilon)));
        }
        if self.iterations < EXAGGERATION_ITERS {
            return Err(EmbedError::InvalidConfig(format!(
                "iterations {} < {EXAGGERATION_ITERS}",
                self.iterations
            )));
        }
        if self.pre_reduce_dims == Some(0) {
            return Err(EmbedError::InvalidConfig("pre_reduce_dims must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub ids: Vec<String>,
    pub points: Vec<[f64; 2]>,
    pub final_kl: f64,
    /// KL divergence (against the un-exaggerated affinities) every 50
    /// iterations and at the end of the exaggeration phase.
    pub kl_history: Vec<(usize, f64)>,
    pub config: TsneConfig,
}

impl Embedding2D {
    pub fn kl_at(&self, iteration: usize) -> Option<f64> {
        self.kl_history.iter().find(|(i, _)| *i == iteration).map(|&(_, k)| k)
    }
}

fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += student_t(&y[i], &y[j]);
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                let q = (student_t(&y[i], &y[j]) / z).max(1e-300);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl.max(0.0)
}

fn student_t(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    1.0 / (1.0 + dx * dx + dy * dy)
}

/// Exact O(n^2) t-SNE with a Student-t output kernel, momentum gradient
/// descent with per-parameter gains, and early exaggeration.
pub fn tsne(ids: &[String], data: &[Vec<f64>], cfg: &TsneConfig) -> Result<Embedding2D> {
    let n = data.len();
    assert_eq!(ids.len(), n, "one id per row");
    cfg.validate(n)?;
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EmbedError::NonFinite);
    }
    let reduced;
    let rows: &[Vec<f64>] = match cfg.pre_reduce_dims {
        Some(k) if data.first().is_some_and(|r| r.len() > k) && n > k => {
            let m = DMatrix::from_fn(n, data[0].len(), |i, j| data[i][j]);
            let p = pca(&m, k)?.projected;
            reduced = (0..n).map(|i| p.row(i).iter().copied().collect()).collect::<Vec<Vec<f64>>>();
            &reduced
        }
        _ => data,
    };
    let sq = squared_distances(rows);
    let aff = calibrate_squared(&sq, n, cfg.perplexity)?;
    let p: Vec<f64> = aff.joint.iter().map(|&v| v.max(1e-12)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];
    let mut kl_history = Vec::new();

    for iter in 0..cfg.iterations {
        let exaggeration = if iter < EXAGGERATION_ITERS { EARLY_EXAGGERATION } else { 1.0 };
        let momentum = if iter < EXAGGERATION_ITERS { INITIAL_MOMENTUM } else { FINAL_MOMENTUM };

        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let t = student_t(&y[i], &y[j]);
                num[i * n + j] = t;
                num[j * n + i] = t;
                z += 2.0 * t;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let t = num[i * n + j];
                let mult = (exaggeration * p[i * n + j] - t / z) * t;
                g[0] += mult * (y[i][0] - y[j][0]);
                g[1] += mult * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for k in 0..2 {
                let same_sign = (grad[i][k] > 0.0) == (update[i][k] > 0.0);
                gains[i][k] = if same_sign { gains[i][k] * 0.8 } else { gains[i][k] + 0.2 };
                gains[i][k] = gains[i][k].max(MIN_GAIN);
                update[i][k] = momentum * update[i][k] - cfg.epsilon * gains[i][k] * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
        let cx = y.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let cy = y.iter().map(|p| p[1]).sum::<f64>() / n as f64;
        for pt in &mut y {
            pt[0] -= cx;
            pt[1] -= cy;
        }

        let done = iter + 1;
        if done % KL_LOG_EVERY == 0 || done == EXAGGERATION_ITERS || done == cfg.iterations {
            let kl = kl_divergence(&p, &y);
            if !kl.is_finite() || y.iter().flatten().any(|v| !v.is_finite()) {
                return Err(EmbedError::NonFinite);
            }
            if kl_history.last().map(|&(i, _)| i) != Some(done) {
                kl_history.push((done, kl));
            }
        }
    }
    let final_kl = kl_history.last().map(|&(_, k)| k).unwrap_or(0.0);
    Ok(Embedding2D {
        ids: ids.to_vec(),
        points: y,
        final_kl,
        kl_history,
        config: cfg.clone(),
    })
}

/// Genotype map: min-max normalised genotypes, perplexity 60, learning rate 10.
pub fn embed_genotypes(ds: &Dataset, seed: u64) -> Result<Embedding2D> {
    embed_genotypes_with(ds, &TsneConfig::genotype(seed))
}

pub fn embed_genotypes_with(ds: &Dataset, cfg: &TsneConfig) -> Result<Embedding2D> {
    let bounds = ds.genotype_bounds();
    let ids: Vec<String> = ds.specimens().iter().map(|s| s.id.clone()).collect();
    let rows: Vec<Vec<f64>> = ds
        .specimens()
        .iter()
        .map(|s| bounds.normalize(&s.genotype).to_vec())
        .collect();
    tsne(&ids, &rows, cfg)
}

/// Feature map: raw feature vectors, PCA to 50 dimensions, perplexity 20,
/// learning rate 10.
pub fn embed_features(ids: &[String], features: &[Vec<f64>], seed: u64) -> Result<Embedding2D> {
    tsne(ids, features, &TsneConfig::feature(seed))
}

/// One embedded specimen with its display annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub category: Option<String>,
    pub score: Option<u8>,
    /// Six-band score class.
    pub band: Option<usize>,
}

pub const DISPLAY_BANDS: usize = 6;

pub fn annotate(emb: &Embedding2D, ds: &Dataset) -> Vec<EmbeddingRow> {
    emb.ids
        .iter()
        .zip(&emb.points)
        .map(|(id, p)| {
            let s = ds.get(id);
            let score = s.and_then(|s| s.score());
            EmbeddingRow {
                id: id.clone(),
                x: p[0],
                y: p[1],
                category: s.and_then(|s| s.category().map(str::to_string)),
                score,
                band: score.map(|v| band_of(v, DISPLAY_BANDS)),
            }
        })
        .collect()
}

pub fn rows_to_csv(rows: &[EmbeddingRow]) -> String {
    let mut out = String::from("id,x,y,category,score,band\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.id,
            r.x,
            r.y,
            r.category.as_deref().unwrap_or(""),
            r.score.map(|s| s.to_string()).unwrap_or_default(),
            r.band.map(|b| b.to_string()).unwrap_or_default()
        ));
    }
    out
}

/// Mean silhouette coefficient of a labelled point set (Euclidean).
pub fn silhouette_score(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += dist(&points[i], &points[j]);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pca_line_has_zero_reconstruction_error() {
        let data = DMatrix::from_fn(20, 2, |i, j| if j == 0 { i as f64 } else { 2.0 * i as f64 });
        let r = pca(&data, 1).unwrap();
        let recon = &r.projected * r.components.transpose();
        for i in 0..20 {
            for j in 0..2 {
                let centered = data[(i, j)] - r.mean[j];
                assert!((recon[(i, j)] - centered).abs() < 1e-9);
            }
        }
        assert!(r.components[(1, 0)] > 0.0);
    }

    #[test]
    fn pca_rejects_too_many_components() {
        let data = DMatrix::from_fn(5, 3, |i, j| (i * j) as f64);
        assert!(matches!(pca(&data, 4), Err(EmbedError::TooManyComponents { .. })));
        // Rank-deficient input is fine.
        assert!(pca(&data, 3).is_ok());
    }

    #[test]
    fn pca_gram_path_matches_covariance_path() {
        // 6 points in 8 dimensions exercises the Gram branch.
        let data = DMatrix::from_fn(6, 8, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * (i as f64) * (j as f64));
        let wide = pca(&data, 3).unwrap();
        let cov = {
            let mut c = data.clone();
            for j in 0..8 {
                let m = c.column(j).mean();
                c.column_mut(j).add_scalar_mut(-m);
            }
            c.transpose() * &c / 5.0
        };
        let (vals, _) = sorted_eigen(cov);
        for k in 0..3 {
            assert!((wide.eigenvalues[k] - vals[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn calibration_rejects_infeasible_perplexity() {
        let d = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(perplexity_calibration(&d, 2.0).is_err());
        assert!(perplexity_calibration(&d, 1.0).is_ok());
        let asym = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        assert_eq!(perplexity_calibration(&asym, 1.0), Err(EmbedError::BadDistances));
    }

    #[test]
    fn equidistant_rows_are_uniform() {
        let d: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect();
        let a = perplexity_calibration(&d, 1.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert!((a.conditional[i * 4 + j] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(TsneConfig::default().validate(9).is_err());
        let cfg = TsneConfig { perplexity: 2.5, ..Default::default() };
        assert!(cfg.validate(10).is_ok());
        let cfg = TsneConfig { perplexity: 3.0, ..Default::default() };
        assert!(cfg.validate(10).is_err());
        let cfg = TsneConfig { perplexity: 3.0, iterations: 100, ..Default::default() };
        assert!(cfg.validate(10).is_err());
        assert_eq!(TsneConfig::genotype(0).perplexity, 60.0);
        assert_eq!(TsneConfig::genotype(0).epsilon, 10.0);
        assert_eq!(TsneConfig::feature(0).perplexity, 20.0);
        assert_eq!(TsneConfig::feature(0).pre_reduce_dims, Some(50));
    }

    #[test]
    fn silhouette_of_separated_clusters() {
        let pts = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        assert!(silhouette_score(&pts, &[0, 0, 1, 1]) > 0.95);
    }
}
