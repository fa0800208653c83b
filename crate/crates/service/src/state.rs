use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use speciescope::dataset::{self, Ledger, LedgerEntry};
use speciescope::embed::Embedding2D;
use speciescope::features::{self, FeatureSet};
use speciescope::model::{ModelError, PredictionTarget};
use speciescope::{Dataset, Evaluation, GenotypeBounds, MeasureRecord, PredictorModel, Specimen};

use crate::error::{ApiError, ApiResult, ServiceError};
use crate::jobs::JobQueue;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const PROPOSALS_FILE: &str = "proposals.csv";
pub const FEATURE_FILES: [&str; 2] = ["features.fvec", "features.csv"];
pub const MODELS_DIR: &str = "models";
pub const STATIC_DIR: &str = "static";

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_WORKERS: usize = 2;
pub const DEFAULT_QUEUE_CAPACITY: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub data_root: PathBuf,
    pub port: u16,
    pub workers: usize,
    pub queue_capacity: usize,
}

impl ServiceConfig {
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        Self {
            data_root: data_root.into(),
            port: DEFAULT_PORT,
            workers: DEFAULT_WORKERS,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }

    /// Reads `SPECIESCOPE_DATA` (required) and `SPECIESCOPE_PORT`.
    pub fn from_env() -> Result<Self, ServiceError> {
        let root = std::env::var_os("SPECIESCOPE_DATA").ok_or(ServiceError::NoDataRoot)?;
        let mut cfg = Self::new(root);
        if let Ok(p) = std::env::var("SPECIESCOPE_PORT") {
            cfg.port = p.parse().map_err(|_| ServiceError::BadPort(p))?;
        }
        Ok(cfg)
    }
}

/// Named model store slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSlot {
    CategoryHead,
    ScoreHead,
    TabularCategory,
    TabularScore,
}

impl ModelSlot {
    pub const ALL: [ModelSlot; 4] =
        [ModelSlot::CategoryHead, ModelSlot::ScoreHead, ModelSlot::TabularCategory, ModelSlot::TabularScore];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelSlot::CategoryHead => "category_head",
            ModelSlot::ScoreHead => "score_head",
            ModelSlot::TabularCategory => "tabular_category",
            ModelSlot::TabularScore => "tabular_score",
        }
    }

    pub fn head(target: PredictionTarget) -> Self {
        match target {
            PredictionTarget::Category => ModelSlot::CategoryHead,
            PredictionTarget::Score => ModelSlot::ScoreHead,
        }
    }

    pub fn tabular(target: PredictionTarget) -> Self {
        match target {
            PredictionTarget::Category => ModelSlot::TabularCategory,
            PredictionTarget::Score => ModelSlot::TabularScore,
        }
    }

    fn file_name(&self) -> String {
        format!("{}.spcm", self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Genotype,
    Feature,
}

#[derive(Debug, Clone)]
pub struct StoredEmbedding {
    pub embedding: Embedding2D,
    pub ledger_seq: u64,
}

/// Manifest specimens followed by generated proposals.
struct Catalog {
    base: Dataset,
    manifest_len: usize,
    manifest_bounds: GenotypeBounds,
    current: Arc<Dataset>,
}

pub struct AppState {
    root: PathBuf,
    catalog: RwLock<Catalog>,
    ledger: Mutex<Ledger>,
    features: Option<FeatureSet>,
    models: RwLock<HashMap<ModelSlot, Arc<PredictorModel>>>,
    model_writer: Mutex<()>,
    measures: RwLock<HashMap<String, MeasureRecord>>,
    embeddings: RwLock<HashMap<Space, StoredEmbedding>>,
    static_index: RwLock<HashMap<String, PathBuf>>,
    image_names: RwLock<HashMap<String, String>>,
    replies: Mutex<HashMap<String, serde_json::Value>>,
    pub(crate) jobs: JobQueue,
}

fn read<T>(l: &RwLock<T>) -> RwLockReadGuard<'_, T> {
    l.read().unwrap_or_else(|e| e.into_inner())
}

fn write<T>(l: &RwLock<T>) -> RwLockWriteGuard<'_, T> {
    l.write().unwrap_or_else(|e| e.into_inner())
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
    move |source| ServiceError::Io { path: path.to_path_buf(), source }
}

/// Writes through a temporary file and a rename so readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or_default()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl AppState {
    /// Loads the manifest, replays the ledger and picks up any proposals,
    /// feature sidecar and saved models under the data root.
    pub fn open(cfg: &ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        let root = cfg.data_root.clone();
        let manifest_path = root.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Err(ServiceError::DatasetMissing(manifest_path));
        }
        let manifest = dataset::load_manifest(&manifest_path)?;
        let manifest_len = manifest.len();
        let manifest_bounds = manifest.genotype_bounds();
        let mut specimens = manifest.specimens().to_vec();
        let proposals_path = root.join(PROPOSALS_FILE);
        if proposals_path.is_file() {
            specimens.extend(dataset::load_manifest(&proposals_path)?.specimens().iter().cloned());
        }
        let base = Dataset::new(specimens, &manifest_path)?;
        let ledger = Ledger::open(root.join(LEDGER_FILE))?;
        let current = Arc::new(base.with_evaluations(ledger.evaluations()));

        let mut features = None;
        for name in FEATURE_FILES {
            let p = root.join(name);
            if p.is_file() {
                let ing = features::ingest_features(&p, &base)?;
                if !ing.unmatched.is_empty() {
                    tracing::warn!(count = ing.unmatched.len(), "feature ids not in the manifest");
                }
                features = Some(ing.features);
                break;
            }
        }

        for dir in [MODELS_DIR, STATIC_DIR] {
            let d = root.join(dir);
            std::fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        let mut models = HashMap::new();
        for slot in ModelSlot::ALL {
            let p = root.join(MODELS_DIR).join(slot.file_name());
            if p.is_file() {
                let m = PredictorModel::load(&p).map_err(|source| ServiceError::Model { path: p.clone(), source })?;
                models.insert(slot, Arc::new(m));
            }
        }

        Ok(Arc::new(Self {
            catalog: RwLock::new(Catalog { base, manifest_len, manifest_bounds, current }),
            ledger: Mutex::new(ledger),
            features,
            models: RwLock::new(models),
            model_writer: Mutex::new(()),
            measures: RwLock::new(HashMap::new()),
            embeddings: RwLock::new(HashMap::new()),
            static_index: RwLock::new(HashMap::new()),
            image_names: RwLock::new(HashMap::new()),
            replies: Mutex::new(HashMap::new()),
            jobs: JobQueue::new(cfg.workers, cfg.queue_capacity),
            root,
        }))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Manifest plus proposals with the latest evaluations.
    pub fn dataset(&self) -> Arc<Dataset> {
        read(&self.catalog).current.clone()
    }

    pub fn manifest_len(&self) -> usize {
        read(&self.catalog).manifest_len
    }

    pub fn is_proposal(&self, index: usize) -> bool {
        index >= self.manifest_len()
    }

    /// Manifest specimens only, with the latest evaluations.
    pub fn manifest_dataset(&self) -> Dataset {
        let c = read(&self.catalog);
        let specimens = c.current.specimens()[..c.manifest_len].to_vec();
        Dataset::new(specimens, c.current.manifest_path()).expect("ids unique")
    }

    pub fn manifest_bounds(&self) -> GenotypeBounds {
        read(&self.catalog).manifest_bounds.clone()
    }

    pub fn features(&self) -> Option<&FeatureSet> {
        self.features.as_ref()
    }

    pub fn ledger_seq(&self) -> u64 {
        lock(&self.ledger).last_sequence()
    }

    pub fn ledger_len(&self) -> usize {
        lock(&self.ledger).len()
    }

    /// Appends an evaluation (idempotent per request id) and refreshes the
    /// catalog. Returns the entry and whether it was a replay.
    pub fn record_evaluation(
        &self,
        id: &str,
        eval: Evaluation,
        request_id: Option<&str>,
    ) -> ApiResult<(LedgerEntry, bool)> {
        let mut ledger = lock(&self.ledger);
        let before = ledger.last_sequence();
        let ds = self.dataset();
        let entry = ledger.record_with_request(&ds, id, eval, request_id)?;
        let duplicate = ledger.last_sequence() == before;
        if !duplicate {
            let mut c = write(&self.catalog);
            c.current = Arc::new(c.base.with_evaluations(ledger.evaluations()));
        }
        Ok((entry, duplicate))
    }

    /// Adds proposal specimens not already present and persists them.
    pub fn add_proposals(&self, new: Vec<Specimen>) -> ApiResult<()> {
        let ledger = lock(&self.ledger);
        let mut c = write(&self.catalog);
        let fresh: Vec<Specimen> = new.into_iter().filter(|s| !c.base.contains(&s.id)).collect();
        if fresh.is_empty() {
            return Ok(());
        }
        let mut all = c.base.specimens().to_vec();
        all.extend(fresh);
        let base = Dataset::new(all, c.base.manifest_path())?;
        let proposals = Dataset::new(base.specimens()[c.manifest_len..].to_vec(), c.base.manifest_path())?;
        let path = self.root.join(PROPOSALS_FILE);
        let tmp = self.root.join(format!("{PROPOSALS_FILE}.tmp"));
        dataset::write_manifest(&proposals, &tmp)?;
        std::fs::rename(&tmp, &path).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
        c.current = Arc::new(base.with_evaluations(ledger.evaluations()));
        c.base = base;
        Ok(())
    }

    pub fn model(&self, slot: ModelSlot) -> Option<Arc<PredictorModel>> {
        read(&self.models).get(&slot).cloned()
    }

    /// Persists a model to its slot and swaps it in. Returns the model's static
    /// resource name.
    pub fn store_model(&self, slot: ModelSlot, model: PredictorModel) -> Result<String, ModelError> {
        let bytes = model.to_bytes()?;
        let _writer = lock(&self.model_writer);
        write_atomic(&self.root.join(MODELS_DIR).join(slot.file_name()), &bytes)?;
        let name = self.put_static(&bytes, "spcm")?;
        write(&self.models).insert(slot, Arc::new(model));
        Ok(name)
    }

    /// Stores bytes under `static/<sha256>.<ext>`, returning the file name.
    pub fn put_static(&self, bytes: &[u8], ext: &str) -> std::io::Result<String> {
        let name = format!("{}.{ext}", sha256_hex(bytes));
        let path = self.root.join(STATIC_DIR).join(&name);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(name)
    }

    /// Content-hash static name for a specimen image, hashing it on first use.
    pub fn image_name(&self, specimen: &Specimen, ds: &Dataset) -> Option<String> {
        if let Some(n) = read(&self.image_names).get(&specimen.id) {
            return Some(n.clone());
        }
        let path = ds.image_file(specimen)?;
        let bytes = std::fs::read(&path).ok()?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("bin").to_ascii_lowercase();
        let name = format!("{}.{ext}", sha256_hex(&bytes));
        write(&self.static_index).insert(name.clone(), path);
        write(&self.image_names).insert(specimen.id.clone(), name.clone());
        Some(name)
    }

    /// Resolves a static resource name to a file.
    pub fn static_path(&self, name: &str) -> Option<PathBuf> {
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            return None;
        }
        if let Some(p) = read(&self.static_index).get(name) {
            return Some(p.clone());
        }
        let p = self.root.join(STATIC_DIR).join(name);
        p.is_file().then_some(p)
    }

    pub fn cached_measures(&self, ids: &[String]) -> Vec<Option<MeasureRecord>> {
        let m = read(&self.measures);
        ids.iter().map(|id| m.get(id).copied()).collect()
    }

    pub fn cache_measures(&self, rows: impl IntoIterator<Item = (String, MeasureRecord)>) {
        write(&self.measures).extend(rows);
    }

    pub fn embedding(&self, space: Space) -> Option<StoredEmbedding> {
        read(&self.embeddings).get(&space).cloned()
    }

    pub fn store_embedding(&self, space: Space, e: StoredEmbedding) {
        write(&self.embeddings).insert(space, e);
    }

    pub fn reply(&self, request_id: &str) -> Option<serde_json::Value> {
        lock(&self.replies).get(request_id).cloned()
    }

    pub fn remember_reply(&self, request_id: &str, value: serde_json::Value) {
        lock(&self.replies).insert(request_id.to_string(), value);
    }
}
