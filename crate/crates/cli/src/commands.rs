use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use speciescope::dataset::{self, Ledger};
use speciescope::embed::{self, TsneConfig};
use speciescope::explore::{self, McFilter, MapRequest, Parent, Proposal};
use speciescope::features::{self, FeatureSet, HeadConfig};
use speciescope::genopredict::{self, TabularConfig, DEFAULT_HIDDEN, DEFAULT_SCHEDULE};
use speciescope::learn::{EvalReport, Target, TrainSchedule};
use speciescope::measures::{self, SComplexParams};
use speciescope::model::{self, InputSpace, KnnConfig, KnnWeighting, PredictionTarget};
use speciescope::stats::{self, CorrelationMatrix};
use speciescope::synth::{self, SynthConfig};
use speciescope::{config_hash, Dataset, GenotypeBounds, PredictorModel, Specimen, Split};

use crate::exit::{Numeric, Usage};
use crate::{Cli, Command, DataArgs, ModelKind, SpaceArg, StrategyArg, TargetArg, VariantArg, Weighting};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Writes the command result; a closed stdout (e.g. `| head`) is not an error.
fn emit(json_mode: bool, value: &Value, text: impl FnOnce() -> String) {
    use std::io::Write;
    let body = if json_mode { format!("{}\n", serde_json::to_string_pretty(value).expect("json")) } else { text() };
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(body.as_bytes()).and_then(|_| out.flush());
}

fn target(t: TargetArg) -> PredictionTarget {
    match t {
        TargetArg::Category => PredictionTarget::Category,
        TargetArg::Score => PredictionTarget::Score,
    }
}

fn load_dataset(data: &DataArgs) -> Result<Dataset> {
    let ds = dataset::load_manifest(&data.manifest)
        .with_context(|| format!("loading manifest {}", data.manifest.display()))?;
    let Some(path) = &data.ledger else { return Ok(ds) };
    if !path.is_file() {
        bail!(dataset::DatasetError::Io {
            path: path.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "ledger not found"),
        });
    }
    let ledger = Ledger::open(path).with_context(|| format!("replaying ledger {}", path.display()))?;
    Ok(ds.with_evaluations(ledger.evaluations()))
}

fn load_features(path: &Path, ds: &Dataset) -> Result<FeatureSet> {
    let ing = features::ingest_features(path, ds).with_context(|| format!("reading features {}", path.display()))?;
    if !ing.unmatched.is_empty() {
        tracing::warn!(count = ing.unmatched.len(), "feature ids not in the manifest");
    }
    if !ing.missing.is_empty() {
        tracing::warn!(count = ing.missing.len(), "manifest specimens without features");
    }
    Ok(ing.features)
}

fn parse_hidden(s: Option<&str>, default: &[usize]) -> Result<Vec<usize>> {
    let Some(s) = s else { return Ok(default.to_vec()) };
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|w| match w.trim().parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(usage(format!("bad hidden width `{w}`"))),
        })
        .collect()
}

fn parse_schedule(s: Option<&str>, default: &[(usize, f64)]) -> Result<Vec<(usize, f64)>> {
    let Some(s) = s else { return Ok(default.to_vec()) };
    s.split(',')
        .map(|p| {
            let (e, lr) = p.trim().split_once(':').ok_or_else(|| usage(format!("phase `{p}` is not epochs:max_lr")))?;
            let e = e.parse().map_err(|_| usage(format!("bad epochs in `{p}`")))?;
            let lr = lr.parse().map_err(|_| usage(format!("bad max_lr in `{p}`")))?;
            Ok((e, lr))
        })
        .collect()
}

fn parse_ks(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|k| k.trim().parse::<usize>().map_err(|_| usage(format!("bad k `{k}`"))))
        .collect()
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn report_json(r: &EvalReport) -> Value {
    serde_json::to_value(r).expect("report serialises")
}

fn report_text(r: &EvalReport) -> String {
    let mut s = format!("n={} accuracy={:.4}", r.n, r.accuracy);
    if let Some(rmse) = r.rmse {
        s.push_str(&format!(" rmse={rmse:.4}"));
    }
    if let Some(q) = r.per_quartile_accuracy {
        s.push_str(&format!(" quartiles=[{:.3}, {:.3}, {:.3}, {:.3}]", q[0], q[1], q[2], q[3]));
    }
    s
}

pub fn run(cli: Cli) -> Result<()> {
    let (seed, js) = (cli.seed, cli.json);
    match cli.command {
        Command::Measure { manifest, out, r_cg, delta, skip_bad } => measure(&manifest, &out, SComplexParams { r_cg, delta }, skip_bad, js),
        Command::Correlate { measures, data, variant, out } => correlate(&measures, &data, variant, out.as_deref(), js),
        Command::Embed { data, space, features, perplexity, iterations, out } => {
            embed_cmd(&data, space, features.as_deref(), perplexity, iterations, &out, seed, js)
        }
        Command::Train { data, kind, target: t, features, hidden, schedule, k, weighting, out } => train(
            &data,
            kind,
            target(t),
            features.as_deref(),
            hidden.as_deref(),
            schedule.as_deref(),
            KnnConfig {
                k,
                weighting: match weighting {
                    Weighting::Uniform => KnnWeighting::Uniform,
                    Weighting::InverseDistance => KnnWeighting::InverseDistance,
                },
            },
            &out,
            seed,
            js,
        ),
        Command::Eval { data, model, features, hidden, schedule, ks, out } => {
            eval(&data, model.as_deref(), features.as_deref(), hidden.as_deref(), schedule.as_deref(), &ks, out.as_deref(), seed, js)
        }
        Command::Map { model, data, base_id, dim_x, dim_y, res, cell_px, out } => {
            map(&model, &data, &base_id, dim_x, dim_y, res, cell_px, &out, js)
        }
        Command::Propose { data, strategy, n, parents, sigma, model, min_score, category, max_attempts, out, render } => {
            propose(
                &data,
                ProposeArgs { strategy, n, parents, sigma, model, min_score, category, max_attempts },
                &out,
                render.as_deref(),
                seed,
                js,
            )
        }
        Command::Serve { data, port, workers } => serve(data, port, workers),
        Command::Synth { out, n, image_size, train_fraction, features } => {
            let cfg = SynthConfig { n, seed, image_size, train_fraction, with_features: features };
            let s = synth::write_synthetic(&out, &cfg).map_err(|e| match e {
                synth::SynthError::Empty | synth::SynthError::ImageSize(_) => usage(e.to_string()),
                other => anyhow::Error::new(other),
            })?;
            emit(js, &serde_json::to_value(&s)?, || format!("wrote {} specimens to {}\n", s.n, s.manifest.display()));
            Ok(())
        }
    }
}

fn measure(manifest: &Path, out: &Path, params: SComplexParams, skip_bad: bool, js: bool) -> Result<()> {
    params.validate()?;
    let ds = dataset::load_manifest(manifest).with_context(|| format!("loading manifest {}", manifest.display()))?;
    let (rows, failures) = measures::measure_dataset(&ds, &params)?;
    for f in &failures {
        tracing::warn!(id = %f.id, error = %f.error, "unmeasurable image");
    }
    if !failures.is_empty() && !skip_bad {
        bail!(measures::MeasureError::Decode(format!(
            "{} of {} images could not be measured (first: {}: {}); rerun with --skip-bad to skip them",
            failures.len(),
            ds.len(),
            failures[0].id,
            failures[0].error
        )));
    }
    write_file(out, measures::measures_to_csv(&rows, &params))?;
    let v = json!({ "out": out, "rows": rows.len(), "skipped": failures, "r_cg": params.r_cg, "delta": params.delta });
    emit(js, &v, || format!("measured {} images ({} skipped) -> {}\n", rows.len(), failures.len(), out.display()));
    Ok(())
}

fn correlation_summary(m: &CorrelationMatrix) -> Value {
    let measures_only: Vec<(&str, f64)> = speciescope::MeasureRecord::NAMES
        .iter()
        .filter_map(|n| m.get(n, "score").map(|r| (*n, r)))
        .collect();
    let top = measures_only.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1));
    let max_p = m
        .p_values
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, p)| *p))
        .fold(0.0, f64::max);
    json!({
        "n": m.n,
        "labels": m.labels,
        "r": m.values,
        "p": m.p_values,
        "entropy_energy": m.get("entropy", "energy"),
        "contours_euler": m.get("contours", "euler"),
        "acomplex_score": m.get("acomplex", "score"),
        "top_score_correlate": top.map(|t| t.0),
        "acomplex_is_top": top.is_some_and(|t| t.0 == "acomplex"),
        "max_p_value": max_p,
    })
}

fn matrix_text(name: &str, m: &CorrelationMatrix) -> String {
    let top = correlation_summary(m)["top_score_correlate"].as_str().map(str::to_string);
    let mut s = format!("[{name}] n = {}\n{:>10}", m.n, "");
    for l in &m.labels {
        s.push_str(&format!("{l:>10}"));
    }
    s.push('\n');
    for (i, a) in m.labels.iter().enumerate() {
        s.push_str(&format!("{a:>10}"));
        for (j, b) in m.labels.iter().enumerate() {
            let mark = if b == "score" && Some(a.as_str()) == top.as_deref() || a == "score" && Some(b.as_str()) == top.as_deref() {
                "*"
            } else {
                " "
            };
            s.push_str(&format!("{:>9.3}{mark}", m.values[i][j]));
        }
        s.push('\n');
    }
    if let Some(t) = top {
        s.push_str(&format!("* highest correlation with score: {t}\n"));
    }
    s
}

fn correlate(measures_csv: &Path, data: &DataArgs, variant: VariantArg, out: Option<&Path>, js: bool) -> Result<()> {
    let text = std::fs::read_to_string(measures_csv).with_context(|| format!("reading {}", measures_csv.display()))?;
    let (params, rows) = measures::parse_measures_csv(&text)?;
    let ds = load_dataset(data)?;
    let variants: Vec<(&str, Dataset)> = match variant {
        VariantArg::All => vec![("all", ds)],
        VariantArg::NoEmpty => vec![("no_empty", ds.without_empty())],
        VariantArg::Both => {
            let ne = ds.without_empty();
            vec![("all", ds), ("no_empty", ne)]
        }
    };
    let mut out_json = serde_json::Map::new();
    let mut text_out = String::new();
    for (name, d) in &variants {
        let (records, scores): (Vec<_>, Vec<f64>) = rows
            .iter()
            .filter_map(|m| d.get(&m.id).and_then(Specimen::score).map(|s| (m.record, f64::from(s))))
            .unzip();
        let matrix = stats::correlation_table(&records, &scores)
            .with_context(|| format!("{name}: correlating {} scored measurements", records.len()))?;
        if let Some(dir) = out {
            write_file(&dir.join(format!("correlations_{name}.csv")), matrix.to_csv())?;
        }
        text_out.push_str(&matrix_text(name, &matrix));
        out_json.insert(name.to_string(), correlation_summary(&matrix));
    }
    out_json.insert("params".into(), serde_json::to_value(params)?);
    emit(js, &Value::Object(out_json), || text_out);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn embed_cmd(
    data: &DataArgs,
    space: SpaceArg,
    features: Option<&Path>,
    perplexity: Option<f64>,
    iterations: Option<usize>,
    out: &Path,
    seed: u64,
    js: bool,
) -> Result<()> {
    let ds = load_dataset(data)?;
    let mut cfg = match space {
        SpaceArg::Genotype => TsneConfig::genotype(seed),
        SpaceArg::Feature => TsneConfig::feature(seed),
    };
    if let Some(p) = perplexity {
        cfg.perplexity = p;
    }
    if let Some(i) = iterations {
        cfg.iterations = i;
    }
    let emb = match space {
        SpaceArg::Genotype => embed::embed_genotypes_with(&ds, &cfg)?,
        SpaceArg::Feature => {
            let path = features.ok_or_else(|| usage("--space feature needs --features"))?;
            let fs = load_features(path, &ds)?;
            let (ids, rows): (Vec<String>, Vec<Vec<f64>>) =
                fs.vectors().iter().map(|v| (v.specimen_id.clone(), v.values.clone())).unzip();
            embed::tsne(&ids, &rows, &cfg)?
        }
    };
    if !emb.final_kl.is_finite() {
        bail!(Numeric("embedding diverged (non-finite KL)".into()));
    }
    let rows = embed::annotate(&emb, &ds);
    write_file(out, embed::rows_to_csv(&rows))?;
    let v = json!({ "out": out, "n": rows.len(), "final_kl": emb.final_kl, "config": cfg, "config_hash": config_hash(&cfg) });
    emit(js, &v, || format!("embedded {} points (KL {:.4}) -> {}\n", rows.len(), emb.final_kl, out.display()));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    data: &DataArgs,
    kind: ModelKind,
    target: PredictionTarget,
    features: Option<&Path>,
    hidden: Option<&str>,
    schedule: Option<&str>,
    knn: KnnConfig,
    out: &Path,
    seed: u64,
    js: bool,
) -> Result<()> {
    let ds = load_dataset(data)?;
    let (model, report) = match kind {
        ModelKind::Tabular => {
            let cfg = TabularConfig {
                hidden: parse_hidden(hidden, &DEFAULT_HIDDEN)?,
                schedule: TrainSchedule::new(&parse_schedule(schedule, &DEFAULT_SCHEDULE)?, seed),
            };
            cfg.schedule.validate()?;
            let m = genopredict::train_tabular(&ds, &cfg, target)?;
            let r = genopredict::evaluate_on_validation(&m, &ds)?;
            (m, r)
        }
        ModelKind::Knn => {
            let m = genopredict::fit_knn(&ds, knn, target)?;
            let r = genopredict::evaluate_on_validation(&m, &ds)?;
            (m, r)
        }
        ModelKind::Head => {
            let path = features.ok_or_else(|| usage("--kind head needs --features"))?;
            let fs = load_features(path, &ds)?;
            let mut cfg = match target {
                PredictionTarget::Category => HeadConfig::category(seed),
                PredictionTarget::Score => HeadConfig::score(seed),
            };
            if let Some(h) = hidden {
                cfg.hidden = parse_hidden(Some(h), &[])?;
            }
            if let Some(s) = schedule {
                cfg.schedule = TrainSchedule::new(&parse_schedule(Some(s), &[])?, seed);
            }
            cfg.schedule.validate()?;
            let m = features::train_head(&ds, &fs, target, &cfg)?;
            let r = head_report(&m, &ds, &fs)?;
            (m, r)
        }
    };
    if !report.loss.is_finite() {
        bail!(Numeric("validation loss is not finite".into()));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    model.save(out).with_context(|| format!("writing {}", out.display()))?;
    let sha = sha256_file(out)?;
    let v = json!({
        "out": out,
        "sha256": sha,
        "target": target,
        "labels": model.labels,
        "config_hash": model.meta.config_hash,
        "trained_on": model.meta.trained_on,
        "validation": report_json(&report),
    });
    emit(js, &v, || format!("{} -> {} (sha256 {sha})\nvalidation: {}\n", target.as_str(), out.display(), report_text(&report)));
    Ok(())
}

/// Validation report of a feature-space model.
fn head_report(model: &PredictorModel, ds: &Dataset, fs: &FeatureSet) -> Result<EvalReport> {
    let data = features::head_data(ds, fs, model.target)?;
    let mut preds = Vec::with_capacity(data.validation.len());
    let mut truths = Vec::with_capacity(data.validation.len());
    let mut ids = Vec::with_capacity(data.validation.len());
    for ((id, x), t) in data.validation.ids.iter().zip(&data.validation.inputs).zip(&data.validation.targets) {
        let Target::Class(c) = t else { continue };
        let Some(truth) = model.labels.iter().position(|l| *l == data.labels[*c]) else { continue };
        preds.push(model.predict_input(x)?);
        truths.push(truth);
        ids.push(id.clone());
    }
    if preds.is_empty() {
        bail!(features::FeatureError::NoSamples("validation"));
    }
    Ok(model::evaluate_predictions(&preds, &truths, &ids, &model.labels, model.target))
}

#[allow(clippy::too_many_arguments)]
fn eval(
    data: &DataArgs,
    model_path: Option<&Path>,
    features: Option<&Path>,
    hidden: Option<&str>,
    schedule: Option<&str>,
    ks: &str,
    out: Option<&Path>,
    seed: u64,
    js: bool,
) -> Result<()> {
    let ds = load_dataset(data)?;
    if let Some(path) = model_path {
        let model = PredictorModel::load(path).with_context(|| format!("loading model {}", path.display()))?;
        let report = match &model.input {
            InputSpace::Genotype { .. } => genopredict::evaluate_on_validation(&model, &ds)?,
            InputSpace::Features { .. } => {
                let fp = features.ok_or_else(|| usage("this model reads features; pass --features"))?;
                head_report(&model, &ds, &load_features(fp, &ds)?)?
            }
        };
        let v = json!({ "model": path, "target": model.target, "validation": report_json(&report) });
        emit(js, &v, || format!("{}: {}\n", model.target.as_str(), report_text(&report)));
        return Ok(());
    }
    let cfg = TabularConfig {
        hidden: parse_hidden(hidden, &DEFAULT_HIDDEN)?,
        schedule: TrainSchedule::new(&parse_schedule(schedule, &DEFAULT_SCHEDULE)?, seed),
    };
    cfg.schedule.validate()?;
    let ks = parse_ks(ks)?;
    let report = genopredict::compare_predictors(&ds, &cfg, &ks)?;
    if let Some(p) = out {
        write_file(p, report.to_csv())?;
    }
    let v = json!({ "rows": report.rows });
    emit(js, &v, || {
        let mut s = format!("{:<10} {:<9} {:<9} {:>8}\n", "predictor", "target", "metric", "value");
        for r in &report.rows {
            s.push_str(&format!("{:<10} {:<9} {:<9} {:>8.4}\n", r.predictor, r.target, r.metric, r.value));
        }
        s
    });
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn map(
    model_path: &Path,
    data: &DataArgs,
    base_id: &str,
    dim_x: usize,
    dim_y: usize,
    res: usize,
    cell_px: u32,
    out: &Path,
    js: bool,
) -> Result<()> {
    if dim_x == dim_y {
        return Err(usage(format!("--dim-x and --dim-y must differ (both {dim_x})")));
    }
    if cell_px == 0 {
        return Err(usage("--cell-px must be positive"));
    }
    let model = PredictorModel::load(model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    let InputSpace::Genotype { bounds } = &model.input else {
        return Err(usage("maps need a genotype model (train --kind tabular or knn)"));
    };
    let ds = load_dataset(data)?;
    let base = ds.get(base_id).ok_or_else(|| usage(format!("unknown --base-id `{base_id}`")))?;
    if dim_x >= speciescope::GENOTYPE_DIM || dim_y >= speciescope::GENOTYPE_DIM {
        return Err(usage(format!("dimensions must be below {}", speciescope::GENOTYPE_DIM)));
    }
    let req = MapRequest {
        base: base.genotype.clone(),
        dim_x,
        dim_y,
        range_x: (bounds.lo[dim_x], bounds.hi[dim_x]),
        range_y: (bounds.lo[dim_y], bounds.hi[dim_y]),
        resolution: (res, res),
    };
    let m = explore::cross_section(&model, &req, Some(bounds))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    explore::export_map(&m, out, cell_px)?;
    let v = json!({
        "png": out.with_extension("png"),
        "json": out.with_extension("json"),
        "label_changes": m.label_changes(),
        "legend": explore::map_legend(&m),
        "warnings": m.warnings,
    });
    emit(js, &v, || format!("{}x{} map -> {}.png/.json ({} label changes)\n", res, res, out.display(), m.label_changes()));
    Ok(())
}

struct ProposeArgs {
    strategy: StrategyArg,
    n: usize,
    parents: Vec<String>,
    sigma: f64,
    model: Option<PathBuf>,
    min_score: Option<f64>,
    category: Option<String>,
    max_attempts: usize,
}

fn propose(data: &DataArgs, a: ProposeArgs, out: &Path, render: Option<&Path>, seed: u64, js: bool) -> Result<()> {
    let ds = load_dataset(data)?;
    let bounds = ds.genotype_bounds();
    let parents = || -> Result<Vec<Parent>> {
        a.parents
            .iter()
            .map(|id| ds.get(id).map(Parent::from).ok_or_else(|| usage(format!("unknown parent `{id}`"))))
            .collect()
    };
    let mut extra = json!({});
    let proposals: Vec<Proposal> = match a.strategy {
        StrategyArg::Random => explore::propose_random(a.n, &bounds, seed)?,
        StrategyArg::Mutation => explore::propose_mutation(&parents()?, a.sigma, a.n, &bounds, seed)?,
        StrategyArg::Crossover => explore::propose_crossover(&parents()?, a.n, &bounds, seed)?,
        StrategyArg::Montecarlo => {
            let path = a.model.as_deref().ok_or_else(|| usage("montecarlo needs --model"))?;
            let model = PredictorModel::load(path).with_context(|| format!("loading model {}", path.display()))?;
            let filter = match (a.min_score, &a.category) {
                (Some(s), None) => McFilter::MinScore(s),
                (None, Some(c)) => McFilter::Category(dataset::normalize_category(c).unwrap_or_default()),
                _ => return Err(usage("montecarlo needs exactly one of --min-score or --category")),
            };
            let outcome = explore::propose_montecarlo(&model, a.n, &bounds, &filter, seed, a.max_attempts)?;
            if let Some(w) = &outcome.warning {
                tracing::warn!("{w}");
            }
            extra = json!({
                "attempted": outcome.attempted,
                "accepted": outcome.accepted,
                "acceptance_rate": outcome.acceptance_rate,
                "warning": outcome.warning,
            });
            outcome.proposals
        }
    };
    let out_dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut specimens = Vec::with_capacity(proposals.len());
    for p in &proposals {
        let id = format!("prop-{}", config_hash(&p.genotype));
        let image_path = match render {
            Some(dir) => {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let unit = GenotypeBounds::unit().clamp(&speciescope::Genotype::new(bounds.normalize(&p.genotype))?);
                let img = measures::resize_area(&explore::toy_generate(&unit)?, 128, 128).to_image();
                let file = dir.join(format!("{id}.png"));
                img.save(&file).with_context(|| format!("writing {}", file.display()))?;
                Some(relative_to(&file, out_dir))
            }
            None => None,
        };
        specimens.push(Specimen { id, genotype: p.genotype.clone(), image_path, evaluation: None, split: Split::Unassigned });
    }
    let manifest = Dataset::new(specimens, out)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    dataset::write_manifest(&manifest, out)?;
    let rows: Vec<Value> = manifest
        .specimens()
        .iter()
        .zip(&proposals)
        .map(|(s, p)| json!({ "id": s.id, "image": s.image_path, "genotype": p.genotype, "provenance": p.provenance, "predicted": p.predicted }))
        .collect();
    let mut v = json!({ "out": out, "count": rows.len(), "proposals": rows });
    if let (Value::Object(o), Value::Object(e)) = (&mut v, extra) {
        o.extend(e);
    }
    emit(js, &v, || format!("{} proposals -> {}\n", manifest.len(), out.display()));
    Ok(())
}

fn relative_to(file: &Path, dir: &Path) -> String {
    let abs = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (f, d) = (abs(file), abs(dir));
    f.strip_prefix(&d).map(Path::to_path_buf).unwrap_or(f).to_string_lossy().replace('\\', "/")
}

fn serve(data: PathBuf, port: u16, workers: usize) -> Result<()> {
    let mut cfg = speciescope_service::ServiceConfig::new(data);
    cfg.port = port;
    cfg.workers = workers.max(1);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(speciescope_service::serve(cfg))?;
    Ok(())
}
