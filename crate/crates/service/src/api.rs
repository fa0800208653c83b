use std::collections::HashMap;
use std::io::Cursor;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use speciescope::dataset::LedgerEntry;
use speciescope::embed::{self, EmbeddingRow};
use speciescope::explore::{
    self, CrossSectionMap, ExploreError, LegendEntry, MapRequest, McFilter, Parent, Proposal, Provenance, Strategy,
};
use speciescope::features;
use speciescope::measures::{self, MeasuredSpecimen};
use speciescope::model::PredictionTarget;
use speciescope::stats::{self, CorrelationMatrix, StatsError};
use speciescope::{config_hash, Dataset, Evaluation, Genotype, Prediction, Specimen, Split, GENOTYPE_DIM};

use crate::error::{ApiError, ApiResult};
use crate::jobs::{self, JobHandle, JobRequest};
use crate::state::{AppState, ModelSlot, Space};

pub const MAX_MAP_RESOLUTION: usize = 256;
pub const DEFAULT_MAP_RESOLUTION: usize = 32;
pub const MAX_PROPOSALS: usize = 256;
pub const PROPOSAL_IMAGE_SIZE: usize = 128;
const MAP_IMAGE_PX: usize = 512;

type AppStateRef = State<Arc<AppState>>;

pub fn routes(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/specimens", get(list_specimens))
        .route("/api/evaluations", post(post_evaluation))
        .route("/api/measures", get(get_measures))
        .route("/api/correlations", get(get_correlations))
        .route("/api/embedding", get(get_embedding))
        .route("/api/jobs", post(post_job))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/maps", get(get_map))
        .route("/api/proposals", post(post_proposals))
        .route("/static/{name}", get(get_static))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn static_url(name: &str) -> String {
    format!("/static/{name}")
}

fn explore_err(e: ExploreError) -> ApiError {
    match e {
        ExploreError::Model(m) => ApiError::internal(m.to_string()),
        ExploreError::Image(m) => ApiError::internal(m),
        other => ApiError::bad_request(other.to_string()),
    }
}

fn stats_err(e: StatsError) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
}

async fn health(State(st): AppStateRef) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "specimens": st.manifest_len(),
        "proposals": st.dataset().len() - st.manifest_len(),
        "ledger_seq": st.ledger_seq(),
        "features": st.features().is_some(),
        "models": ModelSlot::ALL.iter().filter(|s| st.model(**s).is_some()).map(|s| s.as_str()).collect::<Vec<_>>(),
    }))
}

// ---- specimens --------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Source {
    #[default]
    Manifest,
    Proposals,
    All,
}

#[derive(Debug, Deserialize)]
struct SpecimenQuery {
    split: Option<String>,
    category: Option<String>,
    order: Option<String>,
    #[serde(default)]
    source: Source,
}

#[derive(Debug, Serialize)]
struct PredictedLabel {
    label: String,
    confidence: f64,
    source: &'static str,
}

#[derive(Debug, Serialize)]
struct SpecimenRow {
    id: String,
    genotype: Vec<f64>,
    image: Option<String>,
    score: Option<u8>,
    category: Option<String>,
    split: Split,
    proposal: bool,
    predicted: Option<PredictedLabel>,
}

#[derive(Debug, Serialize)]
struct Group {
    label: String,
    ids: Vec<String>,
}

/// Category predictions from the feature head where a vector exists,
/// otherwise the genotype model.
fn category_predictions(st: &AppState, specimens: &[&Specimen]) -> ApiResult<Option<Vec<(String, Prediction, &'static str)>>> {
    let head = st.model(ModelSlot::CategoryHead).filter(|_| st.features().is_some());
    let tab = st.model(ModelSlot::TabularCategory);
    if head.is_none() && tab.is_none() {
        return Ok(None);
    }
    let mut out = Vec::with_capacity(specimens.len());
    for s in specimens {
        let from_head = match (&head, st.features().and_then(|f| f.get(&s.id))) {
            (Some(m), Some(v)) => Some(m.predict_input(v).map_err(|e| ApiError::internal(e.to_string()))?),
            _ => None,
        };
        let (p, src) = match (from_head, &tab) {
            (Some(p), _) => (p, "features"),
            (None, Some(m)) => (m.predict_genotype(&s.genotype).map_err(|e| ApiError::internal(e.to_string()))?, "genotype"),
            (None, None) => continue,
        };
        out.push((s.id.clone(), p, src));
    }
    Ok(Some(out))
}

async fn list_specimens(State(st): AppStateRef, Query(q): Query<SpecimenQuery>) -> ApiResult<Json<Value>> {
    let split = match q.split.as_deref().map(str::to_ascii_lowercase).as_deref() {
        None | Some("") | Some("all") => None,
        Some("train") => Some(Split::Train),
        Some("validation") | Some("valid") => Some(Split::Validation),
        Some("unassigned") => Some(Split::Unassigned),
        Some(other) => return Err(ApiError::bad_request(format!("unknown split `{other}`"))),
    };
    let by_confidence = match q.order.as_deref() {
        None | Some("") | Some("id") | Some("manifest") => false,
        Some("confidence") => true,
        Some(other) => return Err(ApiError::bad_request(format!("unknown order `{other}`"))),
    };
    let category = q.category.as_deref().and_then(speciescope::dataset::normalize_category);
    blocking(move || {
        let ds = st.dataset();
        let n_manifest = st.manifest_len();
        let selected: Vec<(usize, &Specimen)> = ds
            .specimens()
            .iter()
            .enumerate()
            .filter(|(i, _)| match q.source {
                Source::Manifest => *i < n_manifest,
                Source::Proposals => *i >= n_manifest,
                Source::All => true,
            })
            .filter(|(_, s)| split.is_none_or(|sp| s.split == sp))
            .filter(|(_, s)| category.as_deref().is_none_or(|c| s.category() == Some(c)))
            .collect();
        let refs: Vec<&Specimen> = selected.iter().map(|(_, s)| *s).collect();
        let preds = category_predictions(&st, &refs)?;
        if by_confidence && preds.is_none() {
            return Err(ApiError::conflict("no category model trained; submit a train job first"));
        }
        let mut pred_map: HashMap<String, (Prediction, &'static str)> =
            preds.clone().unwrap_or_default().into_iter().map(|(id, p, s)| (id, (p, s))).collect();

        let mut order: Vec<usize> = (0..selected.len()).collect();
        let mut groups = None;
        if by_confidence {
            let pairs: Vec<(String, Prediction)> =
                preds.unwrap_or_default().into_iter().map(|(id, p, _)| (id, p)).collect();
            let grouped = features::order_by_confidence(&pairs);
            let pos: HashMap<&str, usize> = selected.iter().enumerate().map(|(k, (_, s))| (s.id.as_str(), k)).collect();
            order = grouped.iter().flat_map(|(_, ids)| ids.iter().map(|id| pos[id.as_str()])).collect();
            groups = Some(grouped.into_iter().map(|(label, ids)| Group { label, ids }).collect::<Vec<_>>());
        }
        let rows: Vec<SpecimenRow> = order
            .into_iter()
            .map(|k| {
                let (i, s) = selected[k];
                SpecimenRow {
                    id: s.id.clone(),
                    genotype: s.genotype.values().to_vec(),
                    image: st.image_name(s, &ds).map(|n| static_url(&n)),
                    score: s.score(),
                    category: s.category().map(str::to_string),
                    split: s.split,
                    proposal: i >= n_manifest,
                    predicted: pred_map
                        .remove(&s.id)
                        .map(|(p, source)| PredictedLabel { label: p.predicted, confidence: p.confidence, source }),
                }
            })
            .collect();
        Ok(Json(json!({ "count": rows.len(), "specimens": rows, "groups": groups })))
    })
    .await
}

// ---- evaluations ------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct EvaluationBody {
    id: String,
    score: Option<i64>,
    category: Option<String>,
    author: Option<String>,
    request_id: Option<String>,
}

#[derive(Debug, Serialize)]
struct EvaluationReply {
    entry: LedgerEntry,
    duplicate: bool,
}

async fn post_evaluation(State(st): AppStateRef, Json(b): Json<EvaluationBody>) -> ApiResult<(StatusCode, Json<EvaluationReply>)> {
    if b.score.is_none() && b.category.as_deref().is_none_or(|c| c.trim().is_empty()) {
        return Err(ApiError::bad_request("an evaluation needs a score or a category"));
    }
    let author = b.author.unwrap_or_else(|| "anonymous".to_string());
    let eval = Evaluation::new(b.score, b.category.as_deref(), author, chrono::Utc::now())?;
    let (entry, duplicate) =
        blocking(move || st.record_evaluation(&b.id, eval, b.request_id.as_deref())).await?;
    let status = if duplicate { StatusCode::OK } else { StatusCode::CREATED };
    Ok((status, Json(EvaluationReply { entry, duplicate })))
}

// ---- measures and correlations ----------------------------------------------

#[derive(Debug, Deserialize)]
struct MeasureQuery {
    ids: Option<String>,
}

/// Measures for `ids` with default parameters, computing and caching misses.
fn ensure_measures(st: &AppState, ds: &Dataset, ids: &[String]) -> ApiResult<(Vec<MeasuredSpecimen>, Vec<measures::MeasureFailure>)> {
    let cached = st.cached_measures(ids);
    let missing: Vec<Specimen> = ids
        .iter()
        .zip(&cached)
        .filter(|(_, c)| c.is_none())
        .filter_map(|(id, _)| ds.get(id).cloned())
        .collect();
    let mut failures = Vec::new();
    if !missing.is_empty() {
        let sub = Dataset::new(missing, ds.manifest_path())?;
        let (ok, failed) = measures::measure_dataset(&sub, &Default::default())
            .map_err(|e| ApiError::internal(e.to_string()))?;
        st.cache_measures(ok.into_iter().map(|m| (m.id, m.record)));
        failures = failed;
    }
    let rows = ids
        .iter()
        .zip(st.cached_measures(ids))
        .filter_map(|(id, r)| r.map(|record| MeasuredSpecimen { id: id.clone(), record }))
        .collect();
    Ok((rows, failures))
}

async fn get_measures(State(st): AppStateRef, Query(q): Query<MeasureQuery>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let ds = st.dataset();
        let ids: Vec<String> = match q.ids.as_deref().filter(|s| !s.trim().is_empty()) {
            Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            None => ds.specimens()[..st.manifest_len()].iter().map(|s| s.id.clone()).collect(),
        };
        if let Some(bad) = ids.iter().find(|id| !ds.contains(id)) {
            return Err(ApiError::not_found(format!("unknown specimen `{bad}`")));
        }
        let (rows, failures) = ensure_measures(&st, &ds, &ids)?;
        Ok(Json(json!({ "measures": rows, "failures": failures })))
    })
    .await
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
enum Variant {
    #[default]
    All,
    NoEmpty,
}

#[derive(Debug, Deserialize)]
struct CorrelationQuery {
    #[serde(default)]
    variant: Variant,
}

#[derive(Debug, Serialize)]
struct CorrelationReply {
    variant: Variant,
    n: usize,
    matrix: CorrelationMatrix,
    top_score_correlate: Option<(String, f64)>,
    failures: Vec<measures::MeasureFailure>,
}

async fn get_correlations(State(st): AppStateRef, Query(q): Query<CorrelationQuery>) -> ApiResult<Json<CorrelationReply>> {
    blocking(move || {
        let full = st.manifest_dataset();
        let ds = match q.variant {
            Variant::All => full,
            Variant::NoEmpty => full.without_empty(),
        };
        let ids: Vec<String> = ds.specimens().iter().filter(|s| s.score().is_some()).map(|s| s.id.clone()).collect();
        let (rows, failures) = ensure_measures(&st, &ds, &ids)?;
        let scores: Vec<f64> = rows.iter().map(|m| f64::from(ds.get(&m.id).and_then(Specimen::score).unwrap_or(0))).collect();
        let records: Vec<_> = rows.iter().map(|m| m.record).collect();
        let matrix = stats::correlation_table(&records, &scores).map_err(stats_err)?;
        let top = matrix.top_correlate("score").map(|(l, r)| (l.to_string(), r));
        Ok(Json(CorrelationReply { variant: q.variant, n: matrix.n, top_score_correlate: top, matrix, failures }))
    })
    .await
}

// ---- embedding --------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct EmbeddingQuery {
    space: Space,
}

#[derive(Debug, Serialize)]
struct EmbeddingReply {
    space: Space,
    rows: Vec<EmbeddingRow>,
    final_kl: f64,
    ledger_seq: u64,
    /// Evaluations were recorded after the embedding was computed; positions
    /// are unaffected but the job can be resubmitted to refresh the cache key.
    stale: bool,
}

async fn get_embedding(State(st): AppStateRef, Query(q): Query<EmbeddingQuery>) -> ApiResult<Json<EmbeddingReply>> {
    let stored = st
        .embedding(q.space)
        .ok_or_else(|| ApiError::not_found("no embedding computed for this space; submit an embed job"))?;
    let rows = embed::annotate(&stored.embedding, &st.dataset());
    Ok(Json(EmbeddingReply {
        space: q.space,
        rows,
        final_kl: stored.embedding.final_kl,
        ledger_seq: stored.ledger_seq,
        stale: stored.ledger_seq != st.ledger_seq(),
    }))
}

// ---- jobs -------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct JobBody {
    request_id: Option<String>,
    #[serde(flatten)]
    request: JobRequest,
}

#[derive(Debug, Serialize)]
struct JobReply {
    #[serde(flatten)]
    job: JobHandle,
    cache_hit: bool,
}

async fn post_job(State(st): AppStateRef, body: axum::body::Bytes) -> ApiResult<(StatusCode, Json<JobReply>)> {
    let b: JobBody = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid job request: {e}")))?;
    let (job, cache_hit) = jobs::submit(&st, b.request, b.request_id.as_deref())?;
    let status = if cache_hit { StatusCode::OK } else { StatusCode::ACCEPTED };
    Ok((status, Json(JobReply { job, cache_hit })))
}

async fn get_job(State(st): AppStateRef, Path(id): Path<String>) -> ApiResult<Json<JobHandle>> {
    st.jobs.get(&id).map(Json).ok_or_else(|| ApiError::not_found(format!("unknown job `{id}`")))
}

// ---- maps -------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct MapQuery {
    base_id: String,
    dim_x: usize,
    dim_y: usize,
    res: Option<usize>,
    #[serde(default = "default_target")]
    target: PredictionTarget,
}

fn default_target() -> PredictionTarget {
    PredictionTarget::Category
}

#[derive(Debug, Serialize)]
struct MapReply {
    map: CrossSectionMap,
    image: String,
    legend: Vec<LegendEntry>,
    label_changes: usize,
}

fn encode_png(img: &image::DynamicImage) -> ApiResult<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).map_err(|e| ApiError::internal(format!("png encoding: {e}")))?;
    Ok(buf.into_inner())
}

async fn get_map(State(st): AppStateRef, Query(q): Query<MapQuery>) -> ApiResult<Json<MapReply>> {
    if q.dim_x == q.dim_y {
        return Err(ApiError::bad_request(format!("dim_x and dim_y must differ (both {})", q.dim_x)));
    }
    if q.dim_x >= GENOTYPE_DIM || q.dim_y >= GENOTYPE_DIM {
        return Err(ApiError::bad_request(format!("dimensions must be below {GENOTYPE_DIM}")));
    }
    let res = q.res.unwrap_or(DEFAULT_MAP_RESOLUTION);
    if !(2..=MAX_MAP_RESOLUTION).contains(&res) {
        return Err(ApiError::bad_request(format!("res must be in 2..={MAX_MAP_RESOLUTION}")));
    }
    let model = st
        .model(ModelSlot::tabular(q.target))
        .ok_or_else(|| ApiError::conflict(format!("no genotype {} model trained; submit a train job first", q.target.as_str())))?;
    blocking(move || {
        let ds = st.dataset();
        let base = ds.get(&q.base_id).ok_or_else(|| ApiError::not_found(format!("unknown specimen `{}`", q.base_id)))?;
        let bounds = match &model.input {
            speciescope::model::InputSpace::Genotype { bounds } => bounds.clone(),
            _ => st.manifest_bounds(),
        };
        let req = MapRequest {
            base: base.genotype.clone(),
            dim_x: q.dim_x,
            dim_y: q.dim_y,
            range_x: (bounds.lo[q.dim_x], bounds.hi[q.dim_x]),
            range_y: (bounds.lo[q.dim_y], bounds.hi[q.dim_y]),
            resolution: (res, res),
        };
        let map = explore::cross_section(model.as_ref(), &req, Some(&bounds)).map_err(explore_err)?;
        let cell_px = (MAP_IMAGE_PX / res).max(1) as u32;
        let png = encode_png(&image::DynamicImage::ImageRgb8(explore::render_map(&map, cell_px)))?;
        let name = st.put_static(&png, "png").map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(Json(MapReply { legend: explore::map_legend(&map), label_changes: map.label_changes(), image: static_url(&name), map }))
    })
    .await
}

// ---- proposals --------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ProposalStrategy {
    Random,
    Mutation,
    Crossover,
    Montecarlo,
    Explicit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProposalBody {
    strategy: ProposalStrategy,
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    parents: Vec<String>,
    #[serde(default = "default_sigma")]
    sigma: f64,
    min_score: Option<f64>,
    category: Option<String>,
    #[serde(default = "default_attempts")]
    max_attempts: usize,
    #[serde(default)]
    genotypes: Vec<Vec<f64>>,
    request_id: Option<String>,
}

fn default_n() -> usize {
    8
}

fn default_sigma() -> f64 {
    0.1
}

fn default_attempts() -> usize {
    10_000
}

#[derive(Debug, Serialize)]
struct ProposalRow {
    id: String,
    genotype: Vec<f64>,
    strategy: ProposalStrategy,
    provenance: Provenance,
    image: String,
    predicted_category: Option<PredictedLabel>,
    predicted_score: Option<f64>,
}

fn proposal_rows(st: &AppState, b: &ProposalBody) -> ApiResult<Value> {
    if b.n == 0 || b.n > MAX_PROPOSALS {
        return Err(ApiError::bad_request(format!("n must be in 1..={MAX_PROPOSALS}")));
    }
    let bounds = st.manifest_bounds();
    let ds = st.dataset();
    let parents = || -> ApiResult<Vec<Parent>> {
        b.parents
            .iter()
            .map(|id| ds.get(id).map(Parent::from).ok_or_else(|| ApiError::not_found(format!("unknown parent `{id}`"))))
            .collect()
    };
    let mut mc = None;
    let proposals: Vec<Proposal> = match b.strategy {
        ProposalStrategy::Random => explore::propose_random(b.n, &bounds, b.seed).map_err(explore_err)?,
        ProposalStrategy::Mutation => explore::propose_mutation(&parents()?, b.sigma, b.n, &bounds, b.seed).map_err(explore_err)?,
        ProposalStrategy::Crossover => explore::propose_crossover(&parents()?, b.n, &bounds, b.seed).map_err(explore_err)?,
        ProposalStrategy::Montecarlo => {
            let (filter, slot) = match (&b.min_score, &b.category) {
                (Some(s), None) => (McFilter::MinScore(*s), ModelSlot::TabularScore),
                (None, Some(c)) => (
                    McFilter::Category(speciescope::dataset::normalize_category(c).unwrap_or_default()),
                    ModelSlot::TabularCategory,
                ),
                _ => return Err(ApiError::bad_request("montecarlo needs exactly one of min_score or category")),
            };
            let model = st
                .model(slot)
                .ok_or_else(|| ApiError::conflict(format!("montecarlo needs a trained {} model", slot.as_str())))?;
            let out = explore::propose_montecarlo(model.as_ref(), b.n, &bounds, &filter, b.seed, b.max_attempts)
                .map_err(explore_err)?;
            let props = out.proposals.clone();
            mc = Some(out);
            props
        }
        ProposalStrategy::Explicit => {
            if b.genotypes.is_empty() || b.genotypes.len() > MAX_PROPOSALS {
                return Err(ApiError::bad_request(format!("explicit proposals need 1..={MAX_PROPOSALS} genotypes")));
            }
            b.genotypes
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    Ok(Proposal {
                        genotype: Genotype::from_slice(g)?,
                        strategy: Strategy::Random,
                        provenance: Provenance {
                            parents: Vec::new(),
                            operator: "explicit".into(),
                            seed: b.seed,
                            index: i as u64,
                            params: Default::default(),
                        },
                        predicted: None,
                    })
                })
                .collect::<ApiResult<_>>()?
        }
    };

    let cat_model = st.model(ModelSlot::TabularCategory);
    let score_model = st.model(ModelSlot::TabularScore);
    let mut rows = Vec::with_capacity(proposals.len());
    let mut specimens = Vec::with_capacity(proposals.len());
    for p in proposals {
        let unit = Genotype::new(bounds.normalize(&p.genotype)).map_err(ApiError::from)?;
        let luma = explore::toy_generate(&speciescope::GenotypeBounds::unit().clamp(&unit)).map_err(explore_err)?;
        let small = measures::resize_area(&luma, PROPOSAL_IMAGE_SIZE, PROPOSAL_IMAGE_SIZE);
        let png = encode_png(&image::DynamicImage::ImageLuma8(small.to_image()))?;
        let name = st.put_static(&png, "png").map_err(|e| ApiError::internal(e.to_string()))?;
        let id = format!("prop-{}", config_hash(&p.genotype));
        let predict = |m: &Option<Arc<speciescope::PredictorModel>>| -> ApiResult<Option<Prediction>> {
            m.as_ref()
                .map(|m| m.predict_genotype(&p.genotype).map_err(|e| ApiError::internal(e.to_string())))
                .transpose()
        };
        let cat = predict(&cat_model)?;
        let score = match &p.predicted {
            Some(pr) if pr.score.is_some() => pr.score,
            _ => predict(&score_model)?.and_then(|pr| pr.score),
        };
        specimens.push(Specimen {
            id: id.clone(),
            genotype: p.genotype.clone(),
            image_path: Some(format!("{}/{name}", crate::state::STATIC_DIR)),
            evaluation: None,
            split: Split::Unassigned,
        });
        rows.push(ProposalRow {
            id,
            genotype: p.genotype.values().to_vec(),
            strategy: b.strategy,
            provenance: p.provenance,
            image: static_url(&name),
            predicted_category: cat.map(|c| PredictedLabel { label: c.predicted, confidence: c.confidence, source: "genotype" }),
            predicted_score: score,
        });
    }
    st.add_proposals(specimens)?;
    let mut reply = json!({ "count": rows.len(), "proposals": rows });
    if let Some(out) = mc {
        reply["attempted"] = json!(out.attempted);
        reply["accepted"] = json!(out.accepted);
        reply["acceptance_rate"] = json!(out.acceptance_rate);
        reply["warning"] = json!(out.warning);
    }
    Ok(reply)
}

async fn post_proposals(State(st): AppStateRef, Json(b): Json<ProposalBody>) -> ApiResult<Json<Value>> {
    if let Some(prev) = b.request_id.as_deref().and_then(|r| st.reply(r)) {
        return Ok(Json(prev));
    }
    blocking(move || {
        let reply = proposal_rows(&st, &b)?;
        if let Some(r) = &b.request_id {
            st.remember_reply(r, reply.clone());
        }
        Ok(Json(reply))
    })
    .await
}

// ---- static -----------------------------------------------------------------

fn content_type(name: &str) -> &'static str {
    match name.rsplit('.').next().map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("json") => "application/json",
        Some("csv") => "text/csv",
        _ => "application/octet-stream",
    }
}

async fn get_static(State(st): AppStateRef, Path(name): Path<String>) -> Response {
    let Some(path) = st.static_path(&name) else {
        return ApiError::not_found(format!("no static resource `{name}`")).into_response();
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => (
            [(header::CONTENT_TYPE, content_type(&name)), (header::CACHE_CONTROL, "public, max-age=31536000, immutable")],
            bytes,
        )
            .into_response(),
        Err(e) => ApiError::not_found(format!("{name}: {e}")).into_response(),
    }
}
