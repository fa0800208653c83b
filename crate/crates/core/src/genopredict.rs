//! Genotype-side predictors: a tabular MLP and a k-NN baseline, plus a
//! side-by-side benchmark.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Genotype, GenotypeBounds, Split};
use crate::learn::{self, Decoding, MlpSpec, Samples, Target, TrainSchedule};
use crate::model::{
    self, evaluate_predictions, Backend, InputSpace, KnnConfig, KnnWeighting, ModelMeta, Prediction,
    PredictionTarget, PredictorModel,
};
use crate::util::config_hash;

pub const DEFAULT_HIDDEN: [usize; 2] = [200, 100];
pub const DEFAULT_SCHEDULE: [(usize, f64); 1] = [(8, 0.003)];
pub const KNN_SWEEP: [usize; 4] = [1, 3, 5, 7];

#[derive(Debug, Error)]
pub enum GenoError {
    #[error("no {0} specimens with a label for this target")]
    NoSamples(&'static str),
    #[error("k = {k} must be in 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error(transparent)]
    Learn(#[from] learn::LearnError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
}

pub type Result<T> = std::result::Result<T, GenoError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularConfig {
    pub hidden: Vec<usize>,
    pub schedule: TrainSchedule,
}

impl TabularConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { hidden: DEFAULT_HIDDEN.to_vec(), schedule: TrainSchedule::new(&DEFAULT_SCHEDULE, seed) }
    }
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self::with_seed(0)
    }
}

/// Train/validation genotypes with class targets, normalised by bounds
/// fitted on the training split.
#[derive(Debug, Clone)]
pub struct GenoData {
    pub labels: Vec<String>,
    pub bounds: GenotypeBounds,
    pub train: Samples,
    pub validation: Samples,
}

fn class_of(s: &crate::dataset::Specimen, target: PredictionTarget, labels: &[String]) -> Option<usize> {
    match target {
        PredictionTarget::Score => s.score().map(usize::from),
        PredictionTarget::Category => s.category().and_then(|c| labels.iter().position(|l| l == c)),
    }
}

pub fn geno_data(ds: &Dataset, target: PredictionTarget) -> Result<GenoData> {
    let labels = match target {
        PredictionTarget::Score => model::score_labels(),
        PredictionTarget::Category => {
            let set: std::collections::BTreeSet<String> = ds
                .specimens()
                .iter()
                .filter(|s| s.split != Split::Unassigned)
                .filter_map(|s| s.category().map(str::to_string))
                .collect();
            set.into_iter().collect()
        }
    };
    let labelled = |split: Split| {
        ds.in_split(split).filter(|s| class_of(s, target, &labels).is_some()).collect::<Vec<_>>()
    };
    let train_specs = labelled(Split::Train);
    let val_specs = labelled(Split::Validation);
    if train_specs.is_empty() {
        return Err(GenoError::NoSamples("training"));
    }
    if val_specs.is_empty() {
        return Err(GenoError::NoSamples("validation"));
    }
    let bounds = GenotypeBounds::enclosing(train_specs.iter().map(|s| &s.genotype)).expect("nonempty");
    let build = |specs: &[&crate::dataset::Specimen]| {
        let mut out = Samples::default();
        for s in specs {
            out.ids.push(s.id.clone());
            out.inputs.push(bounds.normalize(&s.genotype).to_vec());
            out.targets.push(Target::Class(class_of(s, target, &labels).expect("filtered")));
        }
        out
    };
    let train = build(&train_specs);
    let validation = build(&val_specs);
    Ok(GenoData { labels, bounds, train, validation })
}

pub fn train_tabular(ds: &Dataset, cfg: &TabularConfig, target: PredictionTarget) -> Result<PredictorModel> {
    train_tabular_with_progress(ds, cfg, target, &mut |_| {})
}

pub fn train_tabular_with_progress(
    ds: &Dataset,
    cfg: &TabularConfig,
    target: PredictionTarget,
    progress: &mut dyn FnMut(f64),
) -> Result<PredictorModel> {
    let data = geno_data(ds, target)?;
    let spec = MlpSpec::classifier(crate::GENOTYPE_DIM, cfg.hidden.clone(), data.labels.len());
    let decoding = match target {
        PredictionTarget::Category => Decoding::Category,
        PredictionTarget::Score => Decoding::ExpectedScore,
    };
    let out = learn::train_with_progress(&spec, &cfg.schedule, &data.train, &data.validation, decoding, progress)?;
    let meta = ModelMeta {
        schedule: Some(cfg.schedule.clone()),
        seed: cfg.schedule.seed,
        metrics: out.reports,
        config_hash: config_hash(&("tabular", target, cfg)),
        trained_on: data.train.len(),
    };
    Ok(PredictorModel::mlp(target, data.labels, InputSpace::Genotype { bounds: data.bounds }, spec, out.params, meta))
}

/// k-NN "model": the normalised training split itself.
pub fn fit_knn(ds: &Dataset, cfg: KnnConfig, target: PredictionTarget) -> Result<PredictorModel> {
    let data = geno_data(ds, target)?;
    let n = data.train.len();
    if cfg.k == 0 || cfg.k > n {
        return Err(GenoError::InvalidK { k: cfg.k, n });
    }
    let classes = data
        .train
        .targets
        .iter()
        .map(|t| match t {
            Target::Class(c) => *c,
            Target::Value(_) => unreachable!("class targets"),
        })
        .collect();
    Ok(PredictorModel {
        target,
        labels: data.labels,
        input: InputSpace::Genotype { bounds: data.bounds },
        backend: Backend::Knn { config: cfg, points: data.train.inputs, classes },
        meta: ModelMeta { config_hash: config_hash(&("knn", target, cfg)), trained_on: n, ..Default::default() },
    })
}

pub fn knn_predict(model: &PredictorModel, query: &Genotype) -> Result<Prediction> {
    Ok(model.predict_genotype(query)?)
}

/// Validation report for any genotype predictor.
pub fn evaluate_on_validation(model: &PredictorModel, ds: &Dataset) -> Result<learn::EvalReport> {
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    let mut ids = Vec::new();
    for s in ds.in_split(Split::Validation) {
        let Some(t) = class_of(s, model.target, &model.labels) else { continue };
        preds.push(model.predict_genotype(&s.genotype)?);
        truths.push(t);
        ids.push(s.id.clone());
    }
    if preds.is_empty() {
        return Err(GenoError::NoSamples("validation"));
    }
    Ok(evaluate_predictions(&preds, &truths, &ids, &model.labels, model.target))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub predictor: String,
    pub target: String,
    pub metric: String,
    pub value: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    pub fn value(&self, predictor: &str, target: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.predictor == predictor && r.target == target && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("predictor,target,metric,value,config_hash\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.predictor, r.target, r.metric, r.value, r.config_hash));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("rows serialise")
    }

    fn push(&mut self, predictor: &str, target: PredictionTarget, metric: &str, value: f64, hash: &str) {
        self.rows.push(BenchmarkRow {
            predictor: predictor.into(),
            target: target.as_str().into(),
            metric: metric.into(),
            value,
            config_hash: hash.into(),
        });
    }
}

/// Tabular MLP against k-NN over a sweep of k, on both targets. Rows:
/// `tabular`, `knn_k{k}` for each k, and `knn_best` (highest accuracy for
/// categories, lowest RMSE for scores).
pub fn compare_predictors(ds: &Dataset, cfg: &TabularConfig, ks: &[usize]) -> Result<BenchmarkReport> {
    let mut report = BenchmarkReport::default();
    for target in [PredictionTarget::Category, PredictionTarget::Score] {
        let metric = match target {
            PredictionTarget::Category => "accuracy",
            PredictionTarget::Score => "rmse",
        };
        let pick = |r: &learn::EvalReport| match target {
            PredictionTarget::Category => r.accuracy,
            PredictionTarget::Score => r.rmse.expect("score rmse"),
        };
        let tab = train_tabular(ds, cfg, target)?;
        let r = evaluate_on_validation(&tab, ds)?;
        report.push("tabular", target, metric, pick(&r), &tab.meta.config_hash);
        if target == PredictionTarget::Score {
            report.push("tabular", target, "accuracy", r.accuracy, &tab.meta.config_hash);
        }
        let mut best: Option<(f64, String)> = None;
        for &k in ks {
            let knn = fit_knn(ds, KnnConfig { k, weighting: KnnWeighting::Uniform }, target)?;
            let v = pick(&evaluate_on_validation(&knn, ds)?);
            report.push(&format!("knn_k{k}"), target, metric, v, &knn.meta.config_hash);
            let better = match (&best, target) {
                (None, _) => true,
                (Some((b, _)), PredictionTarget::Category) => v > *b,
                (Some((b, _)), PredictionTarget::Score) => v < *b,
            };
            if better {
                best = Some((v, knn.meta.config_hash.clone()));
            }
        }
        if let Some((v, hash)) = best {
            report.push("knn_best", target, metric, v, &hash);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Evaluation, Specimen};

    fn specimen(id: usize, g: [f64; 12], cat: &str, score: i64, split: Split) -> Specimen {
        Specimen {
            id: format!("s{id:03}"),
            genotype: Genotype::new(g).unwrap(),
            image_path: None,
            evaluation: Some(Evaluation::new(Some(score), Some(cat), "t", chrono::DateTime::UNIX_EPOCH).unwrap()),
            split,
        }
    }

    fn tiny() -> Dataset {
        let mut v = Vec::new();
        for i in 0..20 {
            let x = i as f64 / 19.0;
            let mut g = [0.5; 12];
            g[0] = x;
            g[1] = (i % 3) as f64;
            let (cat, score) = if x > 0.5 { ("hi", 8) } else { ("lo", 2) };
            let split = if i % 4 == 0 { Split::Validation } else { Split::Train };
            v.push(specimen(i, g, cat, score, split));
        }
        Dataset::new(v, "/tmp/m.csv").unwrap()
    }

    #[test]
    fn knn_k1_returns_own_label() {
        let ds = tiny();
        let m = fit_knn(&ds, KnnConfig { k: 1, weighting: KnnWeighting::Uniform }, PredictionTarget::Category).unwrap();
        for s in ds.in_split(Split::Train) {
            assert_eq!(m.predict_genotype(&s.genotype).unwrap().predicted, s.category().unwrap());
        }
    }

    #[test]
    fn knn_k_n_gives_global_mean_score() {
        let ds = tiny();
        let train: Vec<_> = ds.in_split(Split::Train).collect();
        let n = train.len();
        let mean = train.iter().map(|s| s.score().unwrap() as f64).sum::<f64>() / n as f64;
        let m = fit_knn(&ds, KnnConfig { k: n, weighting: KnnWeighting::Uniform }, PredictionTarget::Score).unwrap();
        let p = m.predict_genotype(&train[0].genotype).unwrap();
        assert!((p.score.unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn knn_rejects_bad_k() {
        let ds = tiny();
        let err = fit_knn(&ds, KnnConfig { k: 0, weighting: KnnWeighting::Uniform }, PredictionTarget::Score);
        assert!(matches!(err, Err(GenoError::InvalidK { .. })));
        let err = fit_knn(&ds, KnnConfig { k: 1000, weighting: KnnWeighting::Uniform }, PredictionTarget::Score);
        assert!(matches!(err, Err(GenoError::InvalidK { .. })));
    }

    #[test]
    fn default_config() {
        let c = TabularConfig::default();
        assert_eq!(c.hidden, vec![200, 100]);
        assert_eq!(c.schedule.echo(), vec![(8, 0.003)]);
    }

    #[test]
    fn benchmark_csv_header() {
        let mut r = BenchmarkReport::default();
        r.push("tabular", PredictionTarget::Category, "accuracy", 0.5, "abc");
        assert_eq!(r.to_csv(), "predictor,target,metric,value,config_hash\ntabular,category,accuracy,0.5,abc\n");
        assert_eq!(r.value("tabular", "category", "accuracy"), Some(0.5));
    }
}
