//! Bounded background job queue for training, embedding and measuring.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use speciescope::embed::{self, TsneConfig};
use speciescope::features::{self, HeadConfig};
use speciescope::genopredict::{self, TabularConfig, DEFAULT_HIDDEN, DEFAULT_SCHEDULE};
use speciescope::learn::TrainSchedule;
use speciescope::measures::{self, SComplexParams};
use speciescope::model::PredictionTarget;
use speciescope::config_hash;
use tokio::sync::Semaphore;

use crate::error::{ApiError, ApiResult};
use crate::state::{AppState, ModelSlot, Space, StoredEmbedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Train,
    Embed,
    Measure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobRequest {
    TrainHead {
        target: PredictionTarget,
        #[serde(default)]
        seed: u64,
    },
    TrainTabular {
        target: PredictionTarget,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        hidden: Option<Vec<usize>>,
        /// `[epochs, max_lr]` phases.
        #[serde(default)]
        schedule: Option<Vec<(usize, f64)>>,
    },
    Embed {
        space: Space,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        perplexity: Option<f64>,
        #[serde(default)]
        iterations: Option<usize>,
    },
    Measure {
        #[serde(default)]
        r_cg: Option<usize>,
        #[serde(default)]
        delta: Option<f64>,
    },
}

impl JobRequest {
    pub fn kind(&self) -> JobKind {
        match self {
            JobRequest::TrainHead { .. } | JobRequest::TrainTabular { .. } => JobKind::Train,
            JobRequest::Embed { .. } => JobKind::Embed,
            JobRequest::Measure { .. } => JobKind::Measure,
        }
    }

    fn tsne_config(&self) -> Option<(Space, TsneConfig)> {
        let JobRequest::Embed { space, seed, perplexity, iterations } = self else { return None };
        let mut cfg = match space {
            Space::Genotype => TsneConfig::genotype(*seed),
            Space::Feature => TsneConfig::feature(*seed),
        };
        if let Some(p) = perplexity {
            cfg.perplexity = *p;
        }
        if let Some(i) = iterations {
            cfg.iterations = *i;
        }
        Some((*space, cfg))
    }

    fn tabular_config(&self) -> Option<(PredictionTarget, TabularConfig)> {
        let JobRequest::TrainTabular { target, seed, hidden, schedule } = self else { return None };
        let phases = schedule.clone().unwrap_or_else(|| DEFAULT_SCHEDULE.to_vec());
        Some((
            *target,
            TabularConfig {
                hidden: hidden.clone().unwrap_or_else(|| DEFAULT_HIDDEN.to_vec()),
                schedule: TrainSchedule::new(&phases, *seed),
            },
        ))
    }

    fn scomplex(&self) -> Option<SComplexParams> {
        let JobRequest::Measure { r_cg, delta } = self else { return None };
        let d = SComplexParams::default();
        Some(SComplexParams { r_cg: r_cg.unwrap_or(d.r_cg), delta: delta.unwrap_or(d.delta) })
    }

    /// Synchronous parameter checks, so bad requests fail before queueing.
    fn validate(&self, state: &AppState) -> ApiResult<()> {
        let n = state.manifest_len();
        match self {
            JobRequest::TrainHead { .. } => {
                if state.features().is_none() {
                    return Err(ApiError::bad_request("no feature sidecar in the data root"));
                }
            }
            JobRequest::TrainTabular { hidden, .. } => {
                if hidden.as_ref().is_some_and(|h| h.contains(&0)) {
                    return Err(ApiError::bad_request("hidden layer sizes must be positive"));
                }
                let (_, cfg) = self.tabular_config().expect("tabular");
                cfg.schedule.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
            }
            JobRequest::Embed { space, .. } => {
                let (_, cfg) = self.tsne_config().expect("embed");
                let n = match space {
                    Space::Genotype => n,
                    Space::Feature => match state.features() {
                        Some(f) => f.len(),
                        None => return Err(ApiError::bad_request("no feature sidecar in the data root")),
                    },
                };
                cfg.validate(n).map_err(|e| ApiError::bad_request(e.to_string()))?;
            }
            JobRequest::Measure { .. } => {
                self.scomplex().expect("measure").validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Cache key: the request plus, for results that depend on evaluations,
    /// the ledger position.
    fn cache_key(&self, ledger_seq: u64) -> String {
        match self.kind() {
            JobKind::Measure => config_hash(self),
            _ => config_hash(&(self, ledger_seq)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobHandle {
    pub job_id: String,
    pub kind: JobKind,
    pub request: JobRequest,
    pub state: JobState,
    pub progress: f64,
    pub result_ref: Option<String>,
    pub error: Option<String>,
    pub config_hash: String,
}

#[derive(Default)]
struct JobsInner {
    jobs: HashMap<String, JobHandle>,
    by_key: HashMap<String, String>,
    by_request: HashMap<String, String>,
    queued: usize,
    next: u64,
}

pub struct JobQueue {
    workers: Arc<Semaphore>,
    capacity: usize,
    inner: Mutex<JobsInner>,
}

impl JobQueue {
    pub fn new(workers: usize, capacity: usize) -> Self {
        Self { workers: Arc::new(Semaphore::new(workers.max(1))), capacity: capacity.max(1), inner: Mutex::default() }
    }

    fn lock(&self) -> MutexGuard<'_, JobsInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn get(&self, id: &str) -> Option<JobHandle> {
        self.lock().jobs.get(id).cloned()
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobHandle)) {
        let mut inner = self.lock();
        let was_queued = inner.jobs.get(id).is_some_and(|j| j.state == JobState::Queued);
        if let Some(job) = inner.jobs.get_mut(id) {
            f(job);
            let now_queued = job.state == JobState::Queued;
            if was_queued && !now_queued {
                inner.queued -= 1;
            }
        }
    }

    fn set_progress(&self, id: &str, p: f64) {
        self.update(id, |j| {
            if j.state == JobState::Running && p.is_finite() {
                j.progress = j.progress.max(p.clamp(0.0, 1.0));
            }
        });
    }
}

/// Validates and enqueues a job. An identical request (same config and, where
/// relevant, ledger position) that has not failed returns the existing job.
pub fn submit(state: &Arc<AppState>, req: JobRequest, request_id: Option<&str>) -> ApiResult<(JobHandle, bool)> {
    let queue = &state.jobs;
    if let Some(id) = request_id.and_then(|r| queue.lock().by_request.get(r).cloned()) {
        return Ok((queue.get(&id).expect("recorded job"), true));
    }
    req.validate(state)?;
    let key = req.cache_key(state.ledger_seq());
    let handle = {
        let mut inner = queue.lock();
        let existing = inner.by_key.get(&key).and_then(|id| inner.jobs.get(id)).filter(|j| j.state != JobState::Failed).cloned();
        if let Some(job) = existing {
            if let Some(r) = request_id {
                inner.by_request.insert(r.to_string(), job.job_id.clone());
            }
            return Ok((job, true));
        }
        if inner.queued >= queue.capacity {
            return Err(ApiError::new(axum::http::StatusCode::SERVICE_UNAVAILABLE, "job queue is full"));
        }
        inner.next += 1;
        let job = JobHandle {
            job_id: format!("job-{}-{}", inner.next, &key[..8]),
            kind: req.kind(),
            request: req.clone(),
            state: JobState::Queued,
            progress: 0.0,
            result_ref: None,
            error: None,
            config_hash: key.clone(),
        };
        inner.queued += 1;
        inner.by_key.insert(key, job.job_id.clone());
        if let Some(r) = request_id {
            inner.by_request.insert(r.to_string(), job.job_id.clone());
        }
        inner.jobs.insert(job.job_id.clone(), job.clone());
        job
    };
    let st = state.clone();
    let id = handle.job_id.clone();
    tokio::spawn(async move {
        let permit = st.jobs.workers.clone().acquire_owned().await;
        st.jobs.update(&id, |j| j.state = JobState::Running);
        let worker_state = st.clone();
        let worker_id = id.clone();
        let outcome = tokio::task::spawn_blocking(move || execute(&worker_state, &worker_id, &req)).await;
        drop(permit);
        let outcome = outcome.unwrap_or_else(|e| Err(format!("job panicked: {e}")));
        st.jobs.update(&id, |j| match outcome {
            Ok(result_ref) => {
                j.state = JobState::Done;
                j.progress = 1.0;
                j.result_ref = Some(result_ref);
            }
            Err(e) => {
                j.state = JobState::Failed;
                j.error = Some(e);
            }
        });
    });
    Ok((handle, false))
}

fn static_ref(name: String) -> String {
    format!("/static/{name}")
}

fn execute(state: &Arc<AppState>, id: &str, req: &JobRequest) -> Result<String, String> {
    let progress = |p: f64| state.jobs.set_progress(id, p);
    let err = |e: &dyn std::fmt::Display| e.to_string();
    match req {
        JobRequest::TrainHead { target, seed } => {
            let fs = state.features().ok_or("no feature sidecar")?;
            let cfg = match target {
                PredictionTarget::Category => HeadConfig::category(*seed),
                PredictionTarget::Score => HeadConfig::score(*seed),
            };
            let ds = state.manifest_dataset();
            let model = features::train_head_with_progress(&ds, fs, *target, &cfg, &mut |p| progress(p))
                .map_err(|e| err(&e))?;
            state.store_model(ModelSlot::head(*target), model).map(static_ref).map_err(|e| err(&e))
        }
        JobRequest::TrainTabular { .. } => {
            let (target, cfg) = req.tabular_config().expect("tabular");
            let ds = state.manifest_dataset();
            let model = genopredict::train_tabular_with_progress(&ds, &cfg, target, &mut |p| progress(p))
                .map_err(|e| err(&e))?;
            state.store_model(ModelSlot::tabular(target), model).map(static_ref).map_err(|e| err(&e))
        }
        JobRequest::Embed { .. } => {
            let (space, cfg) = req.tsne_config().expect("embed");
            let seq = state.ledger_seq();
            let ds = state.manifest_dataset();
            progress(0.05);
            let embedding = match space {
                Space::Genotype => embed::embed_genotypes_with(&ds, &cfg),
                Space::Feature => {
                    let fs = state.features().ok_or("no feature sidecar")?;
                    let (ids, rows): (Vec<String>, Vec<Vec<f64>>) =
                        fs.vectors().iter().map(|v| (v.specimen_id.clone(), v.values.clone())).unzip();
                    embed::tsne(&ids, &rows, &cfg)
                }
            }
            .map_err(|e| err(&e))?;
            let rows = embed::annotate(&embedding, &ds);
            let json = serde_json::to_vec(&rows).map_err(|e| err(&e))?;
            state.store_embedding(space, StoredEmbedding { embedding, ledger_seq: seq });
            state.put_static(&json, "json").map(static_ref).map_err(|e| err(&e))
        }
        JobRequest::Measure { .. } => {
            let params = req.scomplex().expect("measure");
            let ds = state.manifest_dataset();
            let (rows, failures) =
                measures::measure_dataset_with_progress(&ds, &params, &progress).map_err(|e| err(&e))?;
            if params == SComplexParams::default() {
                state.cache_measures(rows.iter().map(|m| (m.id.clone(), m.record)));
            }
            if !failures.is_empty() {
                tracing::warn!(count = failures.len(), first = %failures[0].error, "unmeasurable images");
            }
            let csv = measures::measures_to_csv(&rows, &params);
            state.put_static(csv.as_bytes(), "csv").map(static_ref).map_err(|e| err(&e))
        }
    }
}
