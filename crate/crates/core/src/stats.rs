//! Correlation and distribution statistics relating measures to scores and
//! categories.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::dataset::{Dataset, UNLABELED_TOKEN};
use crate::measures::MeasureRecord;
use crate::SCORE_CLASSES;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} points, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("series `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("invalid band count {0}")]
    InvalidBands(usize),
    #[error("unknown measure `{0}`")]
    UnknownMeasure(String),
    #[error("non-finite value in series")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, StatsError>;

fn check_pair(x: &[f64], y: &[f64], needed: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < needed {
        return Err(StatsError::TooFew { needed, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Sample Pearson correlation with a two-sided p-value from Student's t with
/// `n - 2` degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_pair(x, y, 3)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance("x".into()));
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroVariance("y".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok((r, correlation_p_value(r, x.len())))
}

fn correlation_p_value(r: f64, n: usize) -> f64 {
    let dof = (n - 2) as f64;
    if 1.0 - r.abs() < 1e-15 {
        return 0.0;
    }
    let t = r * (dof / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
    (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0)
}

/// Ranks starting at 1; ties receive the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_pair(x, y, 3)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Hoeffding's D, scaled by 30 so it lies in about [-0.5, 1] with 1 for a
/// perfectly dependent pair. Ties are handled through average ranks and the
/// usual quarter/half credit in the bivariate rank.
pub fn hoeffding_d(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 5)?;
    let n = x.len();
    let r = average_ranks(x);
    let s = average_ranks(y);
    let q: Vec<f64> = (0..n)
        .map(|i| {
            let mut q = 1.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let xl = x[j] < x[i];
                let xe = x[j] == x[i];
                let yl = y[j] < y[i];
                let ye = y[j] == y[i];
                if xl && yl {
                    q += 1.0;
                } else if xe && ye {
                    q += 0.25;
                } else if (xe && yl) || (xl && ye) {
                    q += 0.5;
                }
            }
            q
        })
        .collect();
    let d1: f64 = q.iter().map(|q| (q - 1.0) * (q - 2.0)).sum();
    let d2: f64 = (0..n)
        .map(|i| (r[i] - 1.0) * (r[i] - 2.0) * (s[i] - 1.0) * (s[i] - 2.0))
        .sum();
    let d3: f64 = (0..n)
        .map(|i| (r[i] - 2.0) * (s[i] - 2.0) * (q[i] - 1.0))
        .sum();
    let nf = n as f64;
    let num = (nf - 2.0) * (nf - 3.0) * d1 + d2 - 2.0 * (nf - 2.0) * d3;
    let den = nf * (nf - 1.0) * (nf - 2.0) * (nf - 3.0) * (nf - 4.0);
    Ok(30.0 * num / den)
}

/// Symmetric correlation matrix with p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub p_values: Vec<Vec<f64>>,
    /// Number of observations the matrix was computed from.
    pub n: usize,
}

impl CorrelationMatrix {
    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.eq_ignore_ascii_case(label))
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.values[self.index(a)?][self.index(b)?])
    }

    pub fn p_value(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.p_values[self.index(a)?][self.index(b)?])
    }

    /// Label (other than `target` itself) with the largest correlation against
    /// `target`.
    pub fn top_correlate(&self, target: &str) -> Option<(&str, f64)> {
        let t = self.index(target)?;
        self.labels
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != t)
            .map(|(i, l)| (l.as_str(), self.values[i][t]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,r,p\n");
        for (i, a) in self.labels.iter().enumerate() {
            for (j, b) in self.labels.iter().enumerate() {
                out.push_str(&format!(
                    "{a},{b},{},{}\n",
                    self.values[i][j], self.p_values[i][j]
                ));
            }
        }
        out
    }
}

/// Pearson matrix over named columns of equal length.
pub fn correlation_matrix(labels: &[String], columns: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    let k = columns.len();
    assert_eq!(labels.len(), k, "one label per column");
    let n = columns.first().map_or(0, Vec::len);
    let mut values = vec![vec![1.0; k]; k];
    let mut p_values = vec![vec![0.0; k]; k];
    for i in 0..k {
        check_pair(&columns[i], &columns[i], 3)?;
        for j in 0..i {
            let (r, p) = pearson(&columns[i], &columns[j]).map_err(|e| match e {
                StatsError::ZeroVariance(w) => {
                    StatsError::ZeroVariance(if w == "x" { labels[i].clone() } else { labels[j].clone() })
                }
                other => other,
            })?;
            values[i][j] = r;
            values[j][i] = r;
            p_values[i][j] = p;
            p_values[j][i] = p;
        }
    }
    Ok(CorrelationMatrix {
        labels: labels.to_vec(),
        values,
        p_values,
        n,
    })
}

/// The 8x8 table over the seven measures plus score.
pub fn correlation_table(records: &[MeasureRecord], scores: &[f64]) -> Result<CorrelationMatrix> {
    if records.len() != scores.len() {
        return Err(StatsError::LengthMismatch(records.len(), scores.len()));
    }
    let mut labels: Vec<String> = MeasureRecord::NAMES.iter().map(|s| s.to_string()).collect();
    labels.push("score".into());
    let mut columns: Vec<Vec<f64>> = (0..7)
        .map(|k| records.iter().map(|r| r.as_array()[k]).collect())
        .collect();
    columns.push(scores.to_vec());
    correlation_matrix(&labels, &columns)
}

/// Equal-width banding of the integer score scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Banding {
    pub bands: Vec<usize>,
    /// `n_bands + 1` edges on the continuous score axis [-0.5, 10.5].
    pub edges: Vec<f64>,
}

pub fn band_of(score: u8, n_bands: usize) -> usize {
    // floor((s + 0.5) * n / 11) in exact integer arithmetic
    ((2 * score as usize + 1) * n_bands / (2 * SCORE_CLASSES)).min(n_bands - 1)
}

pub fn band_scores(scores: &[u8], n_bands: usize) -> Result<Banding> {
    if !(2..=SCORE_CLASSES).contains(&n_bands) {
        return Err(StatsError::InvalidBands(n_bands));
    }
    let width = SCORE_CLASSES as f64 / n_bands as f64;
    Ok(Banding {
        bands: scores.iter().map(|&s| band_of(s, n_bands)).collect(),
        edges: (0..=n_bands).map(|b| -0.5 + b as f64 * width).collect(),
    })
}

/// Equal-width histogram over `[lo, hi]`; the top value lands in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = if width > 0.0 {
                (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Dependence statistic reported for one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "snake_case")]
pub enum DependenceTest {
    Spearman { rho: f64, p: f64 },
    /// Used when the category's scores are constant.
    HoeffdingD { d: f64 },
    /// Too few members or no variation in the measure.
    Undefined { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryHistogram {
    pub category: String,
    pub count: usize,
    pub score: Histogram,
    pub measure: Histogram,
    pub test: DependenceTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBundle {
    pub measure: String,
    pub bins: usize,
    pub categories: Vec<CategoryHistogram>,
}

pub const MEASURE_BINS: usize = 20;

/// Per-category score (11 bins) and measure (20 bins over the observed range)
/// histograms with a dependence test between score and measure. Specimens
/// without a measure record or without a score are skipped.
pub fn category_histograms(
    ds: &Dataset,
    measures: &BTreeMap<String, MeasureRecord>,
    measure_name: &str,
) -> Result<HistogramBundle> {
    let key = MeasureRecord::NAMES
        .iter()
        .find(|n| n.eq_ignore_ascii_case(measure_name))
        .ok_or_else(|| StatsError::UnknownMeasure(measure_name.to_string()))?;
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in ds.specimens() {
        let (Some(rec), Some(score)) = (measures.get(&s.id), s.score()) else {
            continue;
        };
        let g = groups
            .entry(s.category().unwrap_or(UNLABELED_TOKEN).to_string())
            .or_default();
        g.0.push(score as f64);
        g.1.push(rec.get(key).expect("known measure"));
    }
    let all: Vec<f64> = groups.values().flat_map(|g| g.1.iter().copied()).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let categories = groups
        .into_iter()
        .map(|(category, (scores, values))| {
            let test = dependence_test(&scores, &values);
            CategoryHistogram {
                count: scores.len(),
                score: Histogram::new(&scores, -0.5, 10.5, SCORE_CLASSES),
                measure: Histogram::new(&values, lo, hi, MEASURE_BINS),
                test,
                category,
            }
        })
        .collect();
    Ok(HistogramBundle {
        measure: key.to_string(),
        bins: MEASURE_BINS,
        categories,
    })
}

fn dependence_test(scores: &[f64], values: &[f64]) -> DependenceTest {
    let constant_scores = scores.windows(2).all(|w| w[0] == w[1]);
    if constant_scores {
        return match hoeffding_d(scores, values) {
            Ok(d) => DependenceTest::HoeffdingD { d },
            Err(e) => DependenceTest::Undefined { reason: e.to_string() },
        };
    }
    match spearman(scores, values) {
        Ok((rho, p)) => DependenceTest::Spearman { rho, p },
        Err(e) => DependenceTest::Undefined { reason: e.to_string() },
    }
}
