//! Specimen dataset, train/validation splits and the evaluation ledger.
//!
//! The manifest is a flat CSV (`id, image, g0..g11, score, category, split`).
//! It is treated as read-only: new artist judgements go to an append-only
//! JSON-lines ledger which is replayed on top of the manifest.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::GENOTYPE_DIM;

/// Census key for specimens that carry no category.
pub const UNLABELED_TOKEN: &str = "<unlabeled>";

/// Labels the artist uses for empty (all black) renders.
pub const EMPTY_LABELS: &[&str] = &["black", "empty"];

pub const MAX_SCORE: u8 = 10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest header: {0}")]
    MalformedHeader(String),
    #[error("{} manifest row(s) rejected: {}", .0.len(), summarize_rejections(.0))]
    RejectedRows(Vec<RowRejection>),
    #[error("duplicate specimen id `{0}`")]
    DuplicateId(String),
    #[error("unknown specimen id `{0}`")]
    UnknownSpecimen(String),
    #[error("score {0} outside 0..=10")]
    ScoreOutOfRange(i64),
    #[error("invalid genotype: {0}")]
    InvalidGenotype(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("corrupt ledger at line {line}: {reason}")]
    CorruptLedger { line: usize, reason: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn summarize_rejections(rows: &[RowRejection]) -> String {
    rows.iter()
        .take(5)
        .map(|r| format!("row {}: {}", r.row, r.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, DatasetError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A rejected manifest row. `row` is the 1-based data row (header excluded).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowRejection {
    pub row: usize,
    pub id: Option<String>,
    pub reason: String,
}

/// Twelve real generative parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Genotype {
    values: [f64; GENOTYPE_DIM],
}

impl Genotype {
    pub fn new(values: [f64; GENOTYPE_DIM]) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DatasetError::InvalidGenotype(format!("g{i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; GENOTYPE_DIM] = values.try_into().map_err(|_| {
            DatasetError::InvalidGenotype(format!(
                "expected {GENOTYPE_DIM} values, got {}",
                values.len()
            ))
        })?;
        Self::new(arr)
    }

    /// Validates both finiteness and membership in `bounds`.
    pub fn bounded(values: [f64; GENOTYPE_DIM], bounds: &GenotypeBounds) -> Result<Self> {
        let g = Self::new(values)?;
        if let Some(d) = bounds.violation(&g) {
            return Err(DatasetError::InvalidGenotype(format!(
                "g{d}={} outside [{}, {}]",
                g.values[d], bounds.lo[d], bounds.hi[d]
            )));
        }
        Ok(g)
    }

    pub fn zeros() -> Self {
        Self {
            values: [0.0; GENOTYPE_DIM],
        }
    }

    pub fn values(&self) -> &[f64; GENOTYPE_DIM] {
        &self.values
    }

    pub fn get(&self, dim: usize) -> f64 {
        self.values[dim]
    }

    pub fn with_value(mut self, dim: usize, value: f64) -> Self {
        self.values[dim] = value;
        self
    }

    /// Point on the segment from `self` (t = 0) to `other` (t = 1).
    pub fn lerp(&self, other: &Genotype, t: f64) -> Genotype {
        let mut values = [0.0; GENOTYPE_DIM];
        for (d, v) in values.iter_mut().enumerate() {
            *v = self.values[d] + t * (other.values[d] - self.values[d]);
        }
        Genotype { values }
    }
}

impl TryFrom<Vec<f64>> for Genotype {
    type Error = DatasetError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_slice(&v)
    }
}

impl From<Genotype> for Vec<f64> {
    fn from(g: Genotype) -> Self {
        g.values.to_vec()
    }
}

/// Per-dimension closed intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenotypeBounds {
    pub lo: [f64; GENOTYPE_DIM],
    pub hi: [f64; GENOTYPE_DIM],
}

impl GenotypeBounds {
    pub fn new(lo: [f64; GENOTYPE_DIM], hi: [f64; GENOTYPE_DIM]) -> Result<Self> {
        for d in 0..GENOTYPE_DIM {
            if !lo[d].is_finite() || !hi[d].is_finite() || lo[d] > hi[d] {
                return Err(DatasetError::InvalidGenotype(format!(
                    "bad bounds for g{d}: [{}, {}]",
                    lo[d], hi[d]
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self {
            lo: [0.0; GENOTYPE_DIM],
            hi: [1.0; GENOTYPE_DIM],
        }
    }

    /// Tight bounds around a set of genotypes; `None` when empty.
    pub fn enclosing<'a>(genotypes: impl IntoIterator<Item = &'a Genotype>) -> Option<Self> {
        let mut it = genotypes.into_iter();
        let first = it.next()?;
        let mut lo = first.values;
        let mut hi = first.values;
        for g in it {
            for d in 0..GENOTYPE_DIM {
                lo[d] = lo[d].min(g.values[d]);
                hi[d] = hi[d].max(g.values[d]);
            }
        }
        Some(Self { lo, hi })
    }

    pub fn range(&self, dim: usize) -> f64 {
        self.hi[dim] - self.lo[dim]
    }

    fn violation(&self, g: &Genotype) -> Option<usize> {
        (0..GENOTYPE_DIM).find(|&d| g.values[d] < self.lo[d] || g.values[d] > self.hi[d])
    }

    pub fn contains(&self, g: &Genotype) -> bool {
        self.violation(g).is_none()
    }

    pub fn clamp(&self, g: &Genotype) -> Genotype {
        let mut values = g.values;
        for (d, v) in values.iter_mut().enumerate() {
            *v = v.clamp(self.lo[d], self.hi[d]);
        }
        Genotype { values }
    }

    /// Min-max normalisation; zero-width dimensions map to 0.
    pub fn normalize(&self, g: &Genotype) -> [f64; GENOTYPE_DIM] {
        let mut out = [0.0; GENOTYPE_DIM];
        for (d, o) in out.iter_mut().enumerate() {
            let r = self.range(d);
            *o = if r > 0.0 { (g.values[d] - self.lo[d]) / r } else { 0.0 };
        }
        out
    }
}

/// An artist judgement. An absent score means "never rated"; 0 is an explicit
/// failure verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub score: Option<u8>,
    pub category: Option<String>,
    pub author: String,
    pub timestamp: DateTime<Utc>,
}

impl Evaluation {
    pub fn new(
        score: Option<i64>,
        category: Option<&str>,
        author: impl Into<String>,
        timestamp: DateTime<Utc>,
    ) -> Result<Self> {
        let score = match score {
            Some(s) if !(0..=MAX_SCORE as i64).contains(&s) => {
                return Err(DatasetError::ScoreOutOfRange(s))
            }
            Some(s) => Some(s as u8),
            None => None,
        };
        Ok(Self {
            score,
            category: category.and_then(normalize_category),
            author: author.into(),
            timestamp,
        })
    }

    /// Evaluation as read from the manifest, which carries no author or time.
    fn from_manifest(score: Option<u8>, category: Option<String>) -> Self {
        Self {
            score,
            category,
            author: "manifest".to_string(),
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
        }
    }
}

/// Lowercase-trimmed label, or `None` for blank input.
pub fn normalize_category(raw: &str) -> Option<String> {
    let t = raw.trim().to_lowercase();
    (!t.is_empty()).then_some(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    #[default]
    Unassigned,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Unassigned => "",
        }
    }

    fn parse(s: &str) -> Option<Split> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "validation" | "valid" => Some(Split::Validation),
            "" | "unassigned" => Some(Split::Unassigned),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Specimen {
    pub id: String,
    pub genotype: Genotype,
    /// Path relative to the manifest directory.
    pub image_path: Option<String>,
    pub evaluation: Option<Evaluation>,
    pub split: Split,
}

impl Specimen {
    pub fn score(&self) -> Option<u8> {
        self.evaluation.as_ref().and_then(|e| e.score)
    }

    pub fn category(&self) -> Option<&str> {
        self.evaluation.as_ref().and_then(|e| e.category.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    specimens: Vec<Specimen>,
    manifest_path: PathBuf,
    category_set: BTreeSet<String>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(specimens: Vec<Specimen>, manifest_path: impl Into<PathBuf>) -> Result<Self> {
        let mut index = HashMap::with_capacity(specimens.len());
        for (i, s) in specimens.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateId(s.id.clone()));
            }
        }
        let category_set = specimens
            .iter()
            .filter_map(|s| s.category().map(str::to_string))
            .collect();
        Ok(Self {
            specimens,
            manifest_path: manifest_path.into(),
            category_set,
            index,
        })
    }

    pub fn specimens(&self) -> &[Specimen] {
        &self.specimens
    }

    pub fn len(&self) -> usize {
        self.specimens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specimens.is_empty()
    }

    pub fn manifest_path(&self) -> &Path {
        &self.manifest_path
    }

    /// Directory image paths are relative to.
    pub fn root(&self) -> &Path {
        self.manifest_path.parent().unwrap_or_else(|| Path::new("."))
    }

    pub fn image_file(&self, specimen: &Specimen) -> Option<PathBuf> {
        specimen.image_path.as_ref().map(|p| self.root().join(p))
    }

    pub fn category_set(&self) -> &BTreeSet<String> {
        &self.category_set
    }

    pub fn get(&self, id: &str) -> Option<&Specimen> {
        self.index.get(id).map(|&i| &self.specimens[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &Specimen> {
        self.specimens.iter().filter(move |s| s.split == split)
    }

    /// Bounds enclosing every genotype in the dataset, or the unit box when empty.
    pub fn genotype_bounds(&self) -> GenotypeBounds {
        GenotypeBounds::enclosing(self.specimens.iter().map(|s| &s.genotype))
            .unwrap_or_else(GenotypeBounds::unit)
    }

    /// Copy of the dataset with the ledger's latest evaluations overlaid.
    pub fn with_evaluations(&self, evaluations: &BTreeMap<String, Evaluation>) -> Dataset {
        let specimens = self
            .specimens
            .iter()
            .map(|s| {
                let mut s = s.clone();
                if let Some(e) = evaluations.get(&s.id) {
                    s.evaluation = Some(e.clone());
                }
                s
            })
            .collect();
        Dataset::new(specimens, self.manifest_path.clone()).expect("ids already unique")
    }

    /// Drops specimens labelled as empty renders.
    pub fn without_empty(&self) -> Dataset {
        let specimens = self
            .specimens
            .iter()
            .filter(|s| !s.category().is_some_and(|c| EMPTY_LABELS.contains(&c)))
            .cloned()
            .collect();
        Dataset::new(specimens, self.manifest_path.clone()).expect("ids already unique")
    }
}

fn genotype_columns() -> Vec<String> {
    (0..GENOTYPE_DIM).map(|i| format!("g{i}")).collect()
}

fn manifest_header() -> Vec<String> {
    let mut h = vec!["id".to_string(), "image".to_string()];
    h.extend(genotype_columns());
    h.extend(["score", "category", "split"].map(String::from));
    h
}

struct ColumnMap {
    id: usize,
    image: usize,
    genes: [usize; GENOTYPE_DIM],
    score: usize,
    category: usize,
    split: usize,
    width: usize,
}

impl ColumnMap {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| DatasetError::MalformedHeader(format!("missing column `{name}`")))
        };
        let mut genes = [0; GENOTYPE_DIM];
        for (d, g) in genes.iter_mut().enumerate() {
            *g = find(&format!("g{d}"))?;
        }
        Ok(Self {
            id: find("id")?,
            image: find("image")?,
            genes,
            score: find("score")?,
            category: find("category")?,
            split: find("split")?,
            width: header.len(),
        })
    }
}

fn parse_row(cols: &ColumnMap, rec: &csv::StringRecord) -> std::result::Result<Specimen, String> {
    if rec.len() != cols.width {
        return Err(format!("expected {} fields, found {}", cols.width, rec.len()));
    }
    let id = rec[cols.id].trim().to_string();
    if id.is_empty() {
        return Err("empty id".into());
    }
    let mut values = [0.0; GENOTYPE_DIM];
    for (d, v) in values.iter_mut().enumerate() {
        let cell = rec[cols.genes[d]].trim();
        *v = cell
            .parse::<f64>()
            .map_err(|_| format!("non-numeric genotype cell g{d}=`{cell}`"))?;
        if !v.is_finite() {
            return Err(format!("non-finite genotype cell g{d}"));
        }
    }
    let score_cell = rec[cols.score].trim();
    let score = if score_cell.is_empty() {
        None
    } else {
        let s: i64 = score_cell
            .parse()
            .map_err(|_| format!("non-integer score `{score_cell}`"))?;
        if !(0..=MAX_SCORE as i64).contains(&s) {
            return Err(format!("score {s} outside 0..=10"));
        }
        Some(s as u8)
    };
    let category = normalize_category(&rec[cols.category]);
    let split = Split::parse(&rec[cols.split])
        .ok_or_else(|| format!("unknown split `{}`", &rec[cols.split]))?;
    let image = rec[cols.image].trim();
    let evaluation =
        (score.is_some() || category.is_some()).then(|| Evaluation::from_manifest(score, category));
    Ok(Specimen {
        id,
        genotype: Genotype { values },
        image_path: (!image.is_empty()).then(|| image.to_string()),
        evaluation,
        split,
    })
}

/// Loads a manifest, returning the accepted specimens together with a report of
/// rejected rows. Duplicate ids and header problems are hard errors.
pub fn load_manifest_lenient(path: impl AsRef<Path>) -> Result<(Dataset, Vec<RowRejection>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header = rdr
        .headers()
        .map_err(|e| DatasetError::MalformedHeader(e.to_string()))?
        .clone();
    let cols = ColumnMap::from_header(&header)?;

    let mut specimens = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RowRejection { row, id: None, reason: e.to_string() });
                continue;
            }
        };
        match parse_row(&cols, &rec) {
            Ok(s) => {
                if !seen.insert(s.id.clone()) {
                    return Err(DatasetError::DuplicateId(s.id));
                }
                specimens.push(s);
            }
            Err(reason) => rejected.push(RowRejection {
                row,
                id: rec.get(cols.id).map(|s| s.trim().to_string()),
                reason,
            }),
        }
    }
    Ok((Dataset::new(specimens, path)?, rejected))
}

/// Loads a manifest; any rejected row fails the whole load with a row-indexed
/// report.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let (ds, rejected) = load_manifest_lenient(path)?;
    if rejected.is_empty() {
        Ok(ds)
    } else {
        Err(DatasetError::RejectedRows(rejected))
    }
}

pub fn write_manifest(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(manifest_header())?;
    for s in &ds.specimens {
        let mut row = vec![s.id.clone(), s.image_path.clone().unwrap_or_default()];
        row.extend(s.genotype.values.iter().map(|v| v.to_string()));
        row.push(s.score().map(|v| v.to_string()).unwrap_or_default());
        row.push(s.category().unwrap_or_default().to_string());
        row.push(s.split.as_str().to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// How to assign specimens to train/validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// Explicit id lists; ids in neither list become unassigned.
    Explicit {
        train: Vec<String>,
        validation: Vec<String>,
    },
    /// Seeded shuffle of the manifest order; `fraction` goes to train.
    Fraction { fraction: f64, seed: u64 },
}

pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<Dataset> {
    let mut assignment = vec![Split::Unassigned; ds.len()];
    match spec {
        SplitSpec::Explicit { train, validation } => {
            let train_set: HashSet<&str> = train.iter().map(String::as_str).collect();
            for id in validation {
                if train_set.contains(id.as_str()) {
                    return Err(DatasetError::InvalidSplit(format!(
                        "`{id}` listed in both train and validation"
                    )));
                }
            }
            for (ids, split) in [(train, Split::Train), (validation, Split::Validation)] {
                for id in ids {
                    let &i = ds
                        .index
                        .get(id)
                        .ok_or_else(|| DatasetError::UnknownSpecimen(id.clone()))?;
                    assignment[i] = split;
                }
            }
        }
        SplitSpec::Fraction { fraction, seed } => {
            if !(*fraction > 0.0 && *fraction < 1.0) {
                return Err(DatasetError::InvalidSplit(format!(
                    "fraction {fraction} outside (0, 1)"
                )));
            }
            let mut order: Vec<usize> = (0..ds.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            let n_train = (ds.len() as f64 * fraction).round() as usize;
            for (rank, &i) in order.iter().enumerate() {
                assignment[i] = if rank < n_train { Split::Train } else { Split::Validation };
            }
        }
    }
    let specimens = ds
        .specimens
        .iter()
        .zip(assignment)
        .map(|(s, split)| Specimen { split, ..s.clone() })
        .collect();
    Dataset::new(specimens, ds.manifest_path.clone())
}

/// Specimen count per category; unlabelled specimens are counted under
/// [`UNLABELED_TOKEN`].
pub fn category_census(ds: &Dataset) -> BTreeMap<String, usize> {
    let mut census = BTreeMap::new();
    for s in &ds.specimens {
        let key = s.category().unwrap_or(UNLABELED_TOKEN).to_string();
        *census.entry(key).or_insert(0) += 1;
    }
    census
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    #[serde(rename = "seq")]
    pub sequence: u64,
    #[serde(rename = "id")]
    pub specimen_id: String,
    #[serde(flatten)]
    pub evaluation: LedgerEvaluation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

/// Wire form of an [`Evaluation`] inside a ledger line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvaluation {
    pub score: Option<u8>,
    pub category: Option<String>,
    pub author: String,
    pub ts: DateTime<Utc>,
}

impl From<&Evaluation> for LedgerEvaluation {
    fn from(e: &Evaluation) -> Self {
        Self {
            score: e.score,
            category: e.category.clone(),
            author: e.author.clone(),
            ts: e.timestamp,
        }
    }
}

impl From<&LedgerEvaluation> for Evaluation {
    fn from(e: &LedgerEvaluation) -> Self {
        Self {
            score: e.score,
            category: e.category.clone(),
            author: e.author.clone(),
            timestamp: e.ts,
        }
    }
}

impl LedgerEntry {
    pub fn evaluation(&self) -> Evaluation {
        Evaluation::from(&self.evaluation)
    }
}

/// Append-only JSON-lines evaluation log. Single writer: every append goes
/// through `&mut self` and is synced to disk before returning.
#[derive(Debug)]
pub struct Ledger {
    path: PathBuf,
    file: File,
    last_seq: u64,
    state: BTreeMap<String, Evaluation>,
    by_request: HashMap<String, LedgerEntry>,
    entries: usize,
}

impl Ledger {
    /// Opens (creating if needed) and replays the ledger. A partial trailing line
    /// left by an interrupted write is truncated away.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw).map_err(io_err(&path))?;
        let complete = raw.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        if complete < raw.len() {
            file.set_len(complete as u64).map_err(io_err(&path))?;
            file.seek(SeekFrom::End(0)).map_err(io_err(&path))?;
        }

        let mut ledger = Self {
            path,
            file,
            last_seq: 0,
            state: BTreeMap::new(),
            by_request: HashMap::new(),
            entries: 0,
        };
        for (i, line) in BufReader::new(&raw[..complete]).lines().enumerate() {
            let line = line.map_err(io_err(&ledger.path))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LedgerEntry =
                serde_json::from_str(&line).map_err(|e| DatasetError::CorruptLedger {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            if entry.sequence <= ledger.last_seq {
                return Err(DatasetError::CorruptLedger {
                    line: i + 1,
                    reason: format!(
                        "sequence {} does not follow {}",
                        entry.sequence, ledger.last_seq
                    ),
                });
            }
            ledger.apply(entry);
        }
        Ok(ledger)
    }

    fn apply(&mut self, entry: LedgerEntry) {
        self.last_seq = entry.sequence;
        self.entries += 1;
        self.state
            .insert(entry.specimen_id.clone(), entry.evaluation());
        if let Some(rid) = &entry.request_id {
            self.by_request.insert(rid.clone(), entry);
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn last_sequence(&self) -> u64 {
        self.last_seq
    }

    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    /// Latest evaluation per specimen.
    pub fn evaluations(&self) -> &BTreeMap<String, Evaluation> {
        &self.state
    }

    pub fn record(&mut self, ds: &Dataset, specimen_id: &str, eval: Evaluation) -> Result<LedgerEntry> {
        self.record_with_request(ds, specimen_id, eval, None)
    }

    /// Appends an evaluation. When `request_id` was already recorded, the
    /// original entry is returned and nothing is written.
    pub fn record_with_request(
        &mut self,
        ds: &Dataset,
        specimen_id: &str,
        eval: Evaluation,
        request_id: Option<&str>,
    ) -> Result<LedgerEntry> {
        if let Some(prev) = request_id.and_then(|r| self.by_request.get(r)) {
            return Ok(prev.clone());
        }
        if !ds.contains(specimen_id) {
            return Err(DatasetError::UnknownSpecimen(specimen_id.to_string()));
        }
        if let Some(s) = eval.score.filter(|&s| s > MAX_SCORE) {
            return Err(DatasetError::ScoreOutOfRange(s as i64));
        }
        let entry = LedgerEntry {
            sequence: self.last_seq + 1,
            specimen_id: specimen_id.to_string(),
            evaluation: LedgerEvaluation::from(&eval),
            request_id: request_id.map(str::to_string),
        };
        let mut line = serde_json::to_vec(&entry).expect("ledger entry serialises");
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))?;
        self.apply(entry.clone());
        Ok(entry)
    }
}

/// Free-function form of [`Ledger::record`].
pub fn record_evaluation(
    ledger: &mut Ledger,
    ds: &Dataset,
    specimen_id: &str,
    eval: Evaluation,
) -> Result<LedgerEntry> {
    ledger.record(ds, specimen_id, eval)
}
