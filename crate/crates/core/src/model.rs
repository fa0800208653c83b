//! Trained predictors and their on-disk format.
//!
//! Model file layout (all integers little-endian):
//!
//! ```text
//! b"SPCM" | u32 version | u32 header_len | header JSON | u64 n_params | n_params x f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Genotype, GenotypeBounds};
use crate::learn::{self, argmax, confidence, expected_class, EvalReport, MlpParams, MlpSpec, TrainSchedule};
use crate::SCORE_CLASSES;

pub const MODEL_MAGIC: &[u8; 4] = b"SPCM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model version {0}")]
    UnsupportedVersion(u32),
    #[error("bad model header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("input has {got} values, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Learn(#[from] learn::LearnError),
    #[error("model is inconsistent: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// A probability distribution over a label set plus its argmax and margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub distribution: Vec<f64>,
    pub predicted: String,
    /// Top-1 minus top-2 probability.
    pub confidence: f64,
    /// Decoded score for score predictors.
    pub score: Option<f64>,
}

impl Prediction {
    /// Prediction whose label is the distribution's argmax.
    pub fn from_distribution(distribution: Vec<f64>, labels: &[String], decode_score: bool) -> Self {
        let top = argmax(&distribution);
        Self {
            predicted: labels[top].clone(),
            confidence: confidence(&distribution),
            score: decode_score.then(|| expected_class(&distribution)),
            distribution,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionTarget {
    Category,
    Score,
}

impl PredictionTarget {
    pub fn as_str(&self) -> &'static str {
        match self {
            PredictionTarget::Category => "category",
            PredictionTarget::Score => "score",
        }
    }
}

/// Labels of the 11 score classes, "0" through "10".
pub fn score_labels() -> Vec<String> {
    (0..SCORE_CLASSES).map(|s| s.to_string()).collect()
}

/// What the model consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "space", rename_all = "snake_case")]
pub enum InputSpace {
    /// Raw genotypes, min-max normalised with bounds fitted on the training set.
    Genotype { bounds: GenotypeBounds },
    /// Raw feature vectors of a fixed length.
    Features { dim: usize },
}

impl InputSpace {
    pub fn dim(&self) -> usize {
        match self {
            InputSpace::Genotype { .. } => crate::GENOTYPE_DIM,
            InputSpace::Features { dim } => *dim,
        }
    }

    fn prepare(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.dim() {
            return Err(ModelError::DimensionMismatch { expected: self.dim(), got: raw.len() });
        }
        Ok(match self {
            InputSpace::Genotype { bounds } => {
                let g = Genotype::from_slice(raw)
                    .map_err(|e| ModelError::Inconsistent(e.to_string()))?;
                bounds.normalize(&g).to_vec()
            }
            InputSpace::Features { .. } => raw.to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnWeighting {
    Uniform,
    InverseDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub weighting: KnnWeighting,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 5, weighting: KnnWeighting::Uniform }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    Mlp {
        spec: MlpSpec,
        #[serde(skip)]
        params: Option<MlpParams>,
    },
    Knn {
        config: KnnConfig,
        /// Normalised training inputs.
        points: Vec<Vec<f64>>,
        /// Class index per point (score class for score targets).
        classes: Vec<usize>,
    },
}

/// Training provenance stored in the model header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelMeta {
    pub schedule: Option<TrainSchedule>,
    pub seed: u64,
    pub metrics: Vec<EvalReport>,
    pub config_hash: String,
    /// Number of training samples.
    pub trained_on: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub target: PredictionTarget,
    pub labels: Vec<String>,
    pub input: InputSpace,
    pub backend: Backend,
    pub meta: ModelMeta,
}

impl PredictorModel {
    pub fn mlp(
        target: PredictionTarget,
        labels: Vec<String>,
        input: InputSpace,
        spec: MlpSpec,
        params: MlpParams,
        meta: ModelMeta,
    ) -> Self {
        Self { target, labels, input, backend: Backend::Mlp { spec, params: Some(params) }, meta }
    }

    pub fn is_knn(&self) -> bool {
        matches!(self.backend, Backend::Knn { .. })
    }

    pub fn predict_input(&self, raw: &[f64]) -> Result<Prediction> {
        let x = self.input.prepare(raw)?;
        let decode = self.target == PredictionTarget::Score;
        match &self.backend {
            Backend::Mlp { spec, params } => {
                let params = params
                    .as_ref()
                    .ok_or_else(|| ModelError::Inconsistent("missing parameters".into()))?;
                let dist = learn::mlp_forward(spec, params, &x)?;
                Ok(Prediction::from_distribution(dist, &self.labels, decode))
            }
            Backend::Knn { config, points, classes } => {
                Ok(knn_vote(points, classes, &x, config, &self.labels, self.target))
            }
        }
    }

    pub fn predict_genotype(&self, g: &Genotype) -> Result<Prediction> {
        self.predict_input(g.values())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(self)?;
        let params: Vec<f64> = match &self.backend {
            Backend::Mlp { params: Some(p), .. } => p.flatten(),
            Backend::Mlp { params: None, .. } => {
                return Err(ModelError::Inconsistent("missing parameters".into()))
            }
            Backend::Knn { .. } => Vec::new(),
        };
        let mut out = Vec::with_capacity(16 + header.len() + 4 * params.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(ModelError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != MODEL_VERSION {
            return Err(ModelError::UnsupportedVersion(version));
        }
        let header_len = read_u32(&mut r)? as usize;
        if header_len > r.len() {
            return Err(ModelError::Inconsistent("truncated header".into()));
        }
        let (header, mut rest) = r.split_at(header_len);
        let mut model: PredictorModel = serde_json::from_slice(header)?;
        let mut count = [0u8; 8];
        rest.read_exact(&mut count)?;
        let count = u64::from_le_bytes(count) as usize;
        if rest.len() != count * 4 {
            return Err(ModelError::Inconsistent("parameter block length".into()));
        }
        let flat: Vec<f64> = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if let Backend::Mlp { spec, params } = &mut model.backend {
            *params = Some(MlpParams::from_flat(spec, &flat)?);
        } else if !flat.is_empty() {
            return Err(ModelError::Inconsistent("k-NN model with parameters".into()));
        }
        Ok(model)
    }
}

/// Accuracy, confusion, RMSE and confidence quartiles of predictions against
/// class-index truths. For score targets the class index is the score and
/// RMSE uses the decoded score.
pub fn evaluate_predictions(
    preds: &[Prediction],
    truths: &[usize],
    ids: &[String],
    labels: &[String],
    target: PredictionTarget,
) -> EvalReport {
    let n = preds.len();
    assert_eq!(n, truths.len());
    assert_eq!(n, ids.len());
    let k = labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = Vec::with_capacity(n);
    let mut confidences = Vec::with_capacity(n);
    let mut sq = 0.0;
    let mut loss = 0.0;
    for (p, &t) in preds.iter().zip(truths) {
        let pred = labels.iter().position(|l| *l == p.predicted).unwrap_or(0);
        confusion[t][pred] += 1;
        correct.push(pred == t);
        confidences.push(p.confidence);
        loss -= p.distribution[t].max(1e-12).ln();
        if let Some(s) = p.score {
            sq += (s - t as f64).powi(2);
        }
    }
    let hits = correct.iter().filter(|&&c| c).count();
    let nf = n.max(1) as f64;
    EvalReport {
        accuracy: hits as f64 / nf,
        rmse: (target == PredictionTarget::Score).then(|| (sq / nf).sqrt()),
        confusion,
        per_quartile_accuracy: learn::quartile_accuracy_of(&confidences, &correct, ids),
        loss: loss / nf,
        n,
    }
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Indices of the `k` nearest points (distance, then index).
pub fn nearest(points: &[Vec<f64>], query: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()))
        .collect();
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.truncate(k.min(points.len()));
    d
}

fn knn_vote(
    points: &[Vec<f64>],
    classes: &[usize],
    query: &[f64],
    config: &KnnConfig,
    labels: &[String],
    target: PredictionTarget,
) -> Prediction {
    let neighbours = nearest(points, query, config.k);
    let weight = |d: f64| match config.weighting {
        KnnWeighting::Uniform => 1.0,
        KnnWeighting::InverseDistance => 1.0 / (d + 1e-9),
    };
    let mut votes = vec![0.0; labels.len()];
    let mut dist_sum = vec![0.0; labels.len()];
    let mut dist_n = vec![0usize; labels.len()];
    for &(i, d) in &neighbours {
        votes[classes[i]] += weight(d);
        dist_sum[classes[i]] += d;
        dist_n[classes[i]] += 1;
    }
    let total: f64 = votes.iter().sum();
    let distribution: Vec<f64> = votes.iter().map(|v| v / total).collect();
    match target {
        PredictionTarget::Category => {
            let best = votes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let winner = (0..labels.len())
                .filter(|&c| votes[c] == best)
                .min_by(|&a, &b| {
                    let ma = dist_sum[a] / dist_n[a] as f64;
                    let mb = dist_sum[b] / dist_n[b] as f64;
                    ma.total_cmp(&mb).then(a.cmp(&b))
                })
                .expect("at least one neighbour");
            Prediction {
                predicted: labels[winner].clone(),
                confidence: confidence(&distribution),
                score: None,
                distribution,
            }
        }
        PredictionTarget::Score => {
            let mean = expected_class(&distribution);
            Prediction {
                predicted: labels[(mean.round() as usize).min(labels.len() - 1)].clone(),
                confidence: confidence(&distribution),
                score: Some(mean),
                distribution,
            }
        }
    }
}
