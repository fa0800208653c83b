//! Phenotype-side prediction from precomputed image-network feature vectors.
//!
//! Sidecar binary layout (little-endian):
//!
//! ```text
//! b"FVEC" | u32 count | u32 dim | count x (u16 id_len | id bytes | dim x f32)
//! ```
//!
//! A CSV form (`id,v0,...,v{dim-1}`, optional header row starting with `id`)
//! is accepted too.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Split};
use crate::learn::{self, Decoding, MlpSpec, Samples, Target, TrainSchedule};
use crate::model::{self, InputSpace, ModelMeta, Prediction, PredictionTarget, PredictorModel};
use crate::util::config_hash;
use crate::FEATURE_DIM;

pub const FVEC_MAGIC: &[u8; 4] = b"FVEC";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("feature file is truncated or malformed: {0}")]
    Malformed(String),
    #[error("record {record} ({id}) has {got} values, expected {expected}")]
    WrongLength { record: usize, id: String, got: usize, expected: usize },
    #[error("record {record} ({id}) has a non-finite value")]
    NonFinite { record: usize, id: String },
    #[error("duplicate feature id {0}")]
    DuplicateId(String),
    #[error("no {0} samples with features and labels")]
    NoSamples(&'static str),
    #[error(transparent)]
    Learn(#[from] learn::LearnError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub specimen_id: String,
    pub values: Vec<f64>,
}

/// Feature vectors of one fixed length, unique by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    dim: usize,
    vectors: Vec<FeatureVector>,
    index: BTreeMap<String, usize>,
}

impl FeatureSet {
    pub fn new(dim: usize, vectors: Vec<FeatureVector>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, v) in vectors.iter().enumerate() {
            check_vector(i + 1, &v.specimen_id, &v.values, dim)?;
            if index.insert(v.specimen_id.clone(), i).is_some() {
                return Err(FeatureError::DuplicateId(v.specimen_id.clone()));
            }
        }
        Ok(Self { dim, vectors, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[FeatureVector] {
        &self.vectors
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.vectors[i].values.as_slice())
    }
}

fn check_vector(record: usize, id: &str, values: &[f64], dim: usize) -> Result<()> {
    if values.len() != dim {
        return Err(FeatureError::WrongLength { record, id: id.to_string(), got: values.len(), expected: dim });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite { record, id: id.to_string() });
    }
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FeatureError + '_ {
    move |source| FeatureError::Io { path: path.display().to_string(), source }
}

pub fn write_fvec(set: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::new();
    buf.extend_from_slice(FVEC_MAGIC);
    buf.extend_from_slice(&(set.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(set.dim as u32).to_le_bytes());
    for v in &set.vectors {
        let id = v.specimen_id.as_bytes();
        let len = u16::try_from(id.len()).map_err(|_| FeatureError::Malformed(format!("id too long: {}", v.specimen_id)))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(id);
        for &x in &v.values {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn parse_fvec(bytes: &[u8]) -> Result<FeatureSet> {
    let mut r = bytes;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if r.len() < n {
            return Err(FeatureError::Malformed(format!("truncated {what}")));
        }
        let (head, tail) = r.split_at(n);
        r = tail;
        Ok(head)
    };
    if take(4, "magic")? != FVEC_MAGIC {
        return Err(FeatureError::Malformed("bad magic".into()));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
    let count = u32_at(take(4, "count")?);
    let dim = u32_at(take(4, "dim")?);
    let mut vectors = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let l = take(2, "id length")?;
        let id_len = u16::from_le_bytes([l[0], l[1]]) as usize;
        let id = std::str::from_utf8(take(id_len, "id")?)
            .map_err(|_| FeatureError::Malformed("id is not UTF-8".into()))?
            .to_string();
        let values = take(4 * dim, "values")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        vectors.push(FeatureVector { specimen_id: id, values });
    }
    if !r.is_empty() {
        return Err(FeatureError::Malformed("trailing bytes".into()));
    }
    FeatureSet::new(dim, vectors)
}

/// CSV rows `id,v0,...`; every row must have `dim` values.
pub fn parse_feature_csv(text: &str, dim: usize) -> Result<FeatureSet> {
    let mut vectors = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default().trim().to_string();
        if line_no == 0 && id.eq_ignore_ascii_case("id") {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> = fields.map(|f| f.trim().parse::<f64>()).collect();
        let values = values
            .map_err(|e| FeatureError::Malformed(format!("line {}: {e}", line_no + 1)))?;
        check_vector(vectors.len() + 1, &id, &values, dim)?;
        vectors.push(FeatureVector { specimen_id: id, values });
    }
    FeatureSet::new(dim, vectors)
}

pub fn write_feature_csv(set: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut line = String::new();
    for v in &set.vectors {
        line.clear();
        line.push_str(&v.specimen_id);
        for x in &v.values {
            line.push(',');
            line.push_str(&x.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a sidecar in either format (detected by magic) and checks `dim`.
pub fn read_features(path: impl AsRef<Path>, dim: usize) -> Result<FeatureSet> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path).map_err(io_err(path))?.read_to_end(&mut bytes).map_err(io_err(path))?;
    let set = if bytes.starts_with(FVEC_MAGIC) {
        parse_fvec(&bytes)?
    } else {
        let text = String::from_utf8(bytes).map_err(|_| FeatureError::Malformed("not FVEC and not UTF-8 CSV".into()))?;
        parse_feature_csv(&text, dim)?
    };
    if set.dim != dim {
        let first = set.vectors.first().map(|v| v.specimen_id.clone()).unwrap_or_default();
        return Err(FeatureError::WrongLength { record: 1, id: first, got: set.dim, expected: dim });
    }
    Ok(set)
}

/// Features resolved against a dataset.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub features: FeatureSet,
    /// Ids in the sidecar that the dataset does not know.
    pub unmatched: Vec<String>,
    /// Dataset ids with no feature vector.
    pub missing: Vec<String>,
}

pub fn ingest_features(path: impl AsRef<Path>, ds: &Dataset) -> Result<Ingested> {
    ingest_features_with_dim(path, ds, FEATURE_DIM)
}

pub fn ingest_features_with_dim(path: impl AsRef<Path>, ds: &Dataset, dim: usize) -> Result<Ingested> {
    Ok(align(read_features(path, dim)?, ds))
}

/// Keeps vectors whose ids are in the dataset, in dataset order.
pub fn align(set: FeatureSet, ds: &Dataset) -> Ingested {
    let unmatched: Vec<String> =
        set.vectors.iter().filter(|v| !ds.contains(&v.specimen_id)).map(|v| v.specimen_id.clone()).collect();
    let mut vectors = Vec::new();
    let mut missing = Vec::new();
    for s in ds.specimens() {
        match set.get(&s.id) {
            Some(v) => vectors.push(FeatureVector { specimen_id: s.id.clone(), values: v.to_vec() }),
            None => missing.push(s.id.clone()),
        }
    }
    let features = FeatureSet::new(set.dim, vectors).expect("subset of a valid set");
    Ingested { features, unmatched, missing }
}

/// Head architecture and training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: Vec<usize>,
    pub schedule: TrainSchedule,
}

impl HeadConfig {
    pub fn category(seed: u64) -> Self {
        Self { hidden: Vec::new(), schedule: TrainSchedule::new(&[(4, 1e-3), (4, 1e-5)], seed) }
    }

    pub fn score(seed: u64) -> Self {
        Self { hidden: Vec::new(), schedule: TrainSchedule::new(&[(4, 1e-2), (4, 1e-3)], seed) }
    }
}

/// Labelled train/validation samples for one target, plus the label set.
pub struct HeadData {
    pub labels: Vec<String>,
    pub train: Samples,
    pub validation: Samples,
}

/// Specimens with a feature vector and a label for `target`, split by their
/// `split` field. Category labels are the sorted union over both splits.
pub fn head_data(ds: &Dataset, features: &FeatureSet, target: PredictionTarget) -> Result<HeadData> {
    let labels: Vec<String> = match target {
        PredictionTarget::Score => model::score_labels(),
        PredictionTarget::Category => {
            let set: std::collections::BTreeSet<String> = ds
                .specimens()
                .iter()
                .filter(|s| s.split != Split::Unassigned && features.get(&s.id).is_some())
                .filter_map(|s| s.category().map(str::to_string))
                .collect();
            set.into_iter().collect()
        }
    };
    let mut train = Samples::default();
    let mut validation = Samples::default();
    for s in ds.specimens() {
        let Some(x) = features.get(&s.id) else { continue };
        let class = match target {
            PredictionTarget::Score => s.score().map(usize::from),
            PredictionTarget::Category => s.category().and_then(|c| labels.iter().position(|l| l == c)),
        };
        let Some(class) = class else { continue };
        let dest = match s.split {
            Split::Train => &mut train,
            Split::Validation => &mut validation,
            Split::Unassigned => continue,
        };
        dest.ids.push(s.id.clone());
        dest.inputs.push(x.to_vec());
        dest.targets.push(Target::Class(class));
    }
    if train.is_empty() {
        return Err(FeatureError::NoSamples("training"));
    }
    if validation.is_empty() {
        return Err(FeatureError::NoSamples("validation"));
    }
    Ok(HeadData { labels, train, validation })
}

pub fn train_head(
    ds: &Dataset,
    features: &FeatureSet,
    target: PredictionTarget,
    cfg: &HeadConfig,
) -> Result<PredictorModel> {
    train_head_with_progress(ds, features, target, cfg, &mut |_| {})
}

pub fn train_head_with_progress(
    ds: &Dataset,
    features: &FeatureSet,
    target: PredictionTarget,
    cfg: &HeadConfig,
    progress: &mut dyn FnMut(f64),
) -> Result<PredictorModel> {
    let data = head_data(ds, features, target)?;
    let spec = MlpSpec::classifier(features.dim(), cfg.hidden.clone(), data.labels.len());
    let decoding = match target {
        PredictionTarget::Category => Decoding::Category,
        PredictionTarget::Score => Decoding::ExpectedScore,
    };
    let out = learn::train_with_progress(&spec, &cfg.schedule, &data.train, &data.validation, decoding, progress)?;
    let meta = ModelMeta {
        schedule: Some(cfg.schedule.clone()),
        seed: cfg.schedule.seed,
        metrics: out.reports,
        config_hash: config_hash(&(target, cfg)),
        trained_on: data.train.len(),
    };
    Ok(PredictorModel::mlp(target, data.labels, InputSpace::Features { dim: features.dim() }, spec, out.params, meta))
}

pub fn train_category_head(ds: &Dataset, features: &FeatureSet, seed: u64) -> Result<PredictorModel> {
    train_head(ds, features, PredictionTarget::Category, &HeadConfig::category(seed))
}

pub fn train_score_head(ds: &Dataset, features: &FeatureSet, seed: u64) -> Result<PredictorModel> {
    train_head(ds, features, PredictionTarget::Score, &HeadConfig::score(seed))
}

pub fn predict(model: &PredictorModel, feature: &[f64]) -> Result<Prediction> {
    Ok(model.predict_input(feature)?)
}

/// Predictions for every vector in `features`, in set order.
pub fn predict_all(model: &PredictorModel, features: &FeatureSet) -> Result<Vec<(String, Prediction)>> {
    features
        .vectors()
        .iter()
        .map(|v| Ok((v.specimen_id.clone(), predict(model, &v.values)?)))
        .collect()
}

/// Accuracy per confidence quartile, highest first. Quartiles are ordered by
/// confidence descending with ties broken by specimen id.
pub fn quartile_accuracy(predictions: &[(String, Prediction)], truths: &[String]) -> Option<[f64; 4]> {
    assert_eq!(predictions.len(), truths.len());
    let ids: Vec<String> = predictions.iter().map(|(id, _)| id.clone()).collect();
    let conf: Vec<f64> = predictions.iter().map(|(_, p)| p.confidence).collect();
    let correct: Vec<bool> = predictions.iter().zip(truths).map(|((_, p), t)| p.predicted == *t).collect();
    learn::quartile_accuracy_of(&conf, &correct, &ids)
}

/// Ids grouped by predicted label (label order), each group by confidence
/// descending then id.
pub fn order_by_confidence(predictions: &[(String, Prediction)]) -> Vec<(String, Vec<String>)> {
    let mut groups: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (id, p) in predictions {
        if seen.insert(id.as_str()) {
            groups.entry(p.predicted.as_str()).or_default().push((id.as_str(), p.confidence));
        }
    }
    groups
        .into_iter()
        .map(|(label, mut items)| {
            items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            (label.to_string(), items.into_iter().map(|(id, _)| id.to_string()).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(id: &str, values: Vec<f64>) -> FeatureVector {
        FeatureVector { specimen_id: id.into(), values }
    }

    fn pred(label: &str, confidence: f64) -> Prediction {
        Prediction { distribution: vec![1.0], predicted: label.into(), confidence, score: None }
    }

    #[test]
    fn fvec_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = FeatureSet::new(3, vec![fv("a", vec![1.0, 2.5, -3.0]), fv("b", vec![0.0, 0.5, 9.0])]).unwrap();
        let p = dir.path().join("f.fvec");
        write_fvec(&set, &p).unwrap();
        assert_eq!(read_features(&p, 3).unwrap(), set);
        let c = dir.path().join("f.csv");
        write_feature_csv(&set, &c).unwrap();
        assert_eq!(read_features(&c, 3).unwrap(), set);
    }

    #[test]
    fn csv_rejects_short_row_and_duplicates() {
        let err = parse_feature_csv("id,a,b\nx,1,2\ny,1\n", 2).unwrap_err();
        assert!(matches!(err, FeatureError::WrongLength { record: 2, got: 1, .. }));
        let err = parse_feature_csv("x,1,2\nx,3,4\n", 2).unwrap_err();
        assert!(matches!(err, FeatureError::DuplicateId(_)));
    }

    #[test]
    fn truncated_fvec_is_malformed() {
        let set = FeatureSet::new(2, vec![fv("a", vec![1.0, 2.0])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.fvec");
        write_fvec(&set, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(matches!(parse_fvec(&bytes[..bytes.len() - 1]), Err(FeatureError::Malformed(_))));
    }

    #[test]
    fn head_schedules() {
        assert_eq!(HeadConfig::category(0).schedule.echo(), vec![(4, 1e-3), (4, 1e-5)]);
        assert_eq!(HeadConfig::score(0).schedule.echo(), vec![(4, 1e-2), (4, 1e-3)]);
        assert!(HeadConfig::category(0).hidden.is_empty());
    }

    #[test]
    fn order_groups_and_sorts() {
        let preds = vec![
            ("1".to_string(), pred("brain", 0.9)),
            ("2".to_string(), pred("brain", 0.5)),
            ("3".to_string(), pred("brain", 0.7)),
            ("4".to_string(), pred("mess", 0.2)),
            ("0".to_string(), pred("mess", 0.2)),
        ];
        let groups = order_by_confidence(&preds);
        assert_eq!(groups[0], ("brain".to_string(), vec!["1".into(), "3".into(), "2".into()]));
        assert_eq!(groups[1], ("mess".to_string(), vec!["0".into(), "4".into()]));
        assert!(order_by_confidence(&[]).is_empty());
    }

    #[test]
    fn quartiles_all_correct() {
        let preds: Vec<(String, Prediction)> = (0..9).map(|i| (format!("{i}"), pred("a", i as f64 / 10.0))).collect();
        let truths = vec!["a".to_string(); 9];
        assert_eq!(quartile_accuracy(&preds, &truths), Some([1.0; 4]));
        assert_eq!(quartile_accuracy(&preds[..3], &truths[..3]), None);
    }
}
