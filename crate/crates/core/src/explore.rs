//! Design-space navigation: cross-section maps, transition scanning,
//! proposal strategies and the generator plugin interface.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Genotype, GenotypeBounds, Specimen};
use crate::measures::GrayImage;
use crate::model::{self, Prediction, PredictorModel};
use crate::util::indexed_rng;
use crate::GENOTYPE_DIM;

pub const TRANSITION_TOLERANCE: f64 = 1e-3;
pub const TOY_SIZE: usize = 512;

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("dim_x and dim_y must differ (both {0})")]
    SameDims(usize),
    #[error("dimension {0} out of range 0..12")]
    BadDim(usize),
    #[error("resolution must be at least 2x2, got {0}x{1}")]
    BadResolution(usize, usize),
    #[error("empty range for dimension {dim} after clipping to bounds")]
    EmptyRange { dim: usize },
    #[error("steps must be at least 2")]
    BadSteps,
    #[error("need at least {need} parents, got {got}")]
    TooFewParents { need: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("predictor gives no score; use a category filter or a score model")]
    NoScore,
    #[error("genotype outside generator bounds: {0}")]
    OutOfBounds(String),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error("image export failed: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, ExploreError>;

/// Anything that maps a genotype to a prediction.
pub trait GenotypePredictor {
    fn predict(&self, g: &Genotype) -> Result<Prediction>;
}

impl GenotypePredictor for PredictorModel {
    fn predict(&self, g: &Genotype) -> Result<Prediction> {
        Ok(self.predict_genotype(g)?)
    }
}

/// Wraps a closure as a predictor (oracles in tests and scripts).
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&Genotype) -> Prediction> GenotypePredictor for FnPredictor<F> {
    fn predict(&self, g: &Genotype) -> Result<Prediction> {
        Ok((self.0)(g))
    }
}

/// One-hot prediction for a label; handy for building oracles.
pub fn certain(label: &str) -> Prediction {
    Prediction { distribution: vec![1.0], predicted: label.to_string(), confidence: 1.0, score: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRequest {
    pub base: Genotype,
    pub dim_x: usize,
    pub dim_y: usize,
    pub range_x: (f64, f64),
    pub range_y: (f64, f64),
    pub resolution: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapCell {
    pub ix: usize,
    pub iy: usize,
    pub x: f64,
    pub y: f64,
    pub label: String,
    pub confidence: f64,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSectionMap {
    pub base: Genotype,
    pub dim_x: usize,
    pub dim_y: usize,
    pub range_x: (f64, f64),
    pub range_y: (f64, f64),
    pub resolution: (usize, usize),
    /// Row-major: all x for iy = 0, then iy = 1, ...
    pub cells: Vec<MapCell>,
    pub warnings: Vec<String>,
}

impl CrossSectionMap {
    pub fn cell(&self, ix: usize, iy: usize) -> &MapCell {
        &self.cells[iy * self.resolution.0 + ix]
    }

    /// Number of horizontally or vertically adjacent cell pairs whose labels
    /// differ.
    pub fn label_changes(&self) -> usize {
        let (nx, ny) = self.resolution;
        let mut n = 0;
        for iy in 0..ny {
            for ix in 0..nx {
                let c = &self.cell(ix, iy).label;
                if ix + 1 < nx && *c != self.cell(ix + 1, iy).label {
                    n += 1;
                }
                if iy + 1 < ny && *c != self.cell(ix, iy + 1).label {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("map serialises")
    }
}

/// Grid coordinate `i` of `n` over the inclusive range.
pub fn grid_value(range: (f64, f64), i: usize, n: usize) -> f64 {
    if i + 1 == n {
        return range.1;
    }
    range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64
}

fn clip(range: (f64, f64), dim: usize, bounds: Option<&GenotypeBounds>, warnings: &mut Vec<String>) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = if range.0 <= range.1 { range } else { (range.1, range.0) };
    if let Some(b) = bounds {
        if lo < b.lo[dim] || hi > b.hi[dim] {
            warnings.push(format!(
                "range for g{dim} [{lo}, {hi}] clipped to [{}, {}]",
                b.lo[dim].max(lo).min(b.hi[dim]),
                b.hi[dim].min(hi).max(b.lo[dim])
            ));
            lo = lo.max(b.lo[dim]);
            hi = hi.min(b.hi[dim]);
        }
    }
    if !(lo < hi) {
        return Err(ExploreError::EmptyRange { dim });
    }
    Ok((lo, hi))
}

/// Predictions over a 2-D grid through `base`, varying `dim_x` and `dim_y`.
pub fn cross_section(
    model: &dyn GenotypePredictor,
    req: &MapRequest,
    bounds: Option<&GenotypeBounds>,
) -> Result<CrossSectionMap> {
    for d in [req.dim_x, req.dim_y] {
        if d >= GENOTYPE_DIM {
            return Err(ExploreError::BadDim(d));
        }
    }
    if req.dim_x == req.dim_y {
        return Err(ExploreError::SameDims(req.dim_x));
    }
    let (nx, ny) = req.resolution;
    if nx < 2 || ny < 2 {
        return Err(ExploreError::BadResolution(nx, ny));
    }
    let mut warnings = Vec::new();
    let range_x = clip(req.range_x, req.dim_x, bounds, &mut warnings)?;
    let range_y = clip(req.range_y, req.dim_y, bounds, &mut warnings)?;
    let mut cells = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        let y = grid_value(range_y, iy, ny);
        for ix in 0..nx {
            let x = grid_value(range_x, ix, nx);
            let g = req.base.clone().with_value(req.dim_x, x).with_value(req.dim_y, y);
            let p = model.predict(&g)?;
            cells.push(MapCell { ix, iy, x, y, label: p.predicted, confidence: p.confidence, score: p.score });
        }
    }
    Ok(CrossSectionMap {
        base: req.base.clone(),
        dim_x: req.dim_x,
        dim_y: req.dim_y,
        range_x,
        range_y,
        resolution: (nx, ny),
        cells,
        warnings,
    })
}

const PALETTE: [[u8; 3]; 12] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [0, 0, 0],
    [255, 255, 255],
];

fn heat(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    [(255.0 * t) as u8, (255.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8, (255.0 * (1.0 - t)) as u8]
}

/// Colour key for a rendered map: one entry per category label, or the
/// score ramp sampled at 0..=10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub label: String,
    pub rgb: [u8; 3],
}

fn map_labels(map: &CrossSectionMap) -> Vec<&str> {
    let mut labels: Vec<&str> = map.cells.iter().map(|c| c.label.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    labels
}

pub fn map_legend(map: &CrossSectionMap) -> Vec<LegendEntry> {
    if map.cells.iter().any(|c| c.score.is_some()) {
        return (0..=10).map(|s| LegendEntry { label: s.to_string(), rgb: heat(s as f64 / 10.0) }).collect();
    }
    map_labels(map)
        .into_iter()
        .enumerate()
        .map(|(i, l)| LegendEntry { label: l.to_string(), rgb: PALETTE[i % PALETTE.len()] })
        .collect()
}

/// Renders the map with `cell_px` square pixels per cell, y increasing
/// upwards. Score cells use a blue-to-red ramp over 0..10; category cells a
/// fixed palette indexed by sorted label.
pub fn render_map(map: &CrossSectionMap, cell_px: u32) -> image::RgbImage {
    let (nx, ny) = map.resolution;
    let labels = map_labels(map);
    let mut img = image::RgbImage::new(nx as u32 * cell_px, ny as u32 * cell_px);
    for c in &map.cells {
        let rgb = match c.score {
            Some(s) => heat(s / 10.0),
            None => PALETTE[labels.binary_search(&c.label.as_str()).unwrap_or(0) % PALETTE.len()],
        };
        let px = c.ix as u32 * cell_px;
        let py = (ny - 1 - c.iy) as u32 * cell_px;
        for dy in 0..cell_px {
            for dx in 0..cell_px {
                img.put_pixel(px + dx, py + dy, image::Rgb(rgb));
            }
        }
    }
    img
}

/// Writes `<stem>.png` and `<stem>.json`.
pub fn export_map(map: &CrossSectionMap, stem: impl AsRef<Path>, cell_px: u32) -> Result<()> {
    let stem = stem.as_ref();
    render_map(map, cell_px)
        .save(stem.with_extension("png"))
        .map_err(|e| ExploreError::Image(e.to_string()))?;
    std::fs::write(stem.with_extension("json"), map.to_json()).map_err(|e| ExploreError::Image(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: f64,
    pub label_before: String,
    pub label_after: String,
}

/// Label changes along the segment `start -> end`, sampled at `steps + 1`
/// points, each located by bisection to within the tolerance.
pub fn find_transitions(
    model: &dyn GenotypePredictor,
    start: &Genotype,
    end: &Genotype,
    steps: usize,
) -> Result<Vec<Transition>> {
    if steps < 2 {
        return Err(ExploreError::BadSteps);
    }
    let label = |t: f64| model.predict(&start.lerp(end, t)).map(|p| p.predicted);
    let ts: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
    let labels: Vec<String> = ts.iter().map(|&t| label(t)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for i in 0..steps {
        if labels[i] == labels[i + 1] {
            continue;
        }
        let (mut a, mut b) = (ts[i], ts[i + 1]);
        while b - a > TRANSITION_TOLERANCE {
            let mid = 0.5 * (a + b);
            if label(mid)? == labels[i] {
                a = mid;
            } else {
                b = mid;
            }
        }
        out.push(Transition {
            t: 0.5 * (a + b),
            label_before: labels[i].clone(),
            label_after: labels[i + 1].clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Mutation,
    Crossover,
    Montecarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub parents: Vec<String>,
    pub operator: String,
    pub seed: u64,
    pub index: u64,
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub genotype: Genotype,
    pub strategy: Strategy,
    pub provenance: Provenance,
    pub predicted: Option<Prediction>,
}

/// A parent for mutation or crossover.
#[derive(Debug, Clone, PartialEq)]
pub struct Parent {
    pub id: String,
    pub genotype: Genotype,
    pub score: Option<u8>,
}

impl From<&Specimen> for Parent {
    fn from(s: &Specimen) -> Self {
        Self { id: s.id.clone(), genotype: s.genotype.clone(), score: s.score() }
    }
}

/// Selection weight: score floored at 1, unrated counting as 1.
pub fn fitness_weight(score: Option<u8>) -> f64 {
    f64::from(score.unwrap_or(0).max(1))
}

fn uniform_genotype(bounds: &GenotypeBounds, seed: u64, index: u64) -> Genotype {
    let mut rng = indexed_rng(seed, index);
    let mut v = [0.0; GENOTYPE_DIM];
    for (d, x) in v.iter_mut().enumerate() {
        let u: f64 = rng.random();
        *x = (bounds.lo[d] + u * bounds.range(d)).min(bounds.hi[d]);
    }
    Genotype::new(v).expect("finite")
}

fn provenance(parents: Vec<String>, operator: &str, seed: u64, index: u64, params: &[(&str, f64)]) -> Provenance {
    Provenance {
        parents,
        operator: operator.into(),
        seed,
        index,
        params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

pub fn propose_random(n: usize, bounds: &GenotypeBounds, seed: u64) -> Result<Vec<Proposal>> {
    if n == 0 {
        return Err(ExploreError::InvalidParam("n must be at least 1".into()));
    }
    Ok((0..n as u64)
        .map(|i| Proposal {
            genotype: uniform_genotype(bounds, seed, i),
            strategy: Strategy::Random,
            provenance: provenance(Vec::new(), "uniform", seed, i, &[]),
            predicted: None,
        })
        .collect())
}

/// Gaussian mutation of fitness-weighted parents, with per-dimension standard
/// deviation `sigma * range`, clamped to bounds.
pub fn propose_mutation(
    parents: &[Parent],
    sigma: f64,
    n: usize,
    bounds: &GenotypeBounds,
    seed: u64,
) -> Result<Vec<Proposal>> {
    if parents.is_empty() {
        return Err(ExploreError::TooFewParents { need: 1, got: 0 });
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(ExploreError::InvalidParam(format!("sigma = {sigma}")));
    }
    let weights: Vec<f64> = parents.iter().map(|p| fitness_weight(p.score)).collect();
    let pick = WeightedIndex::new(&weights).expect("positive weights");
    let mut out = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let mut rng = indexed_rng(seed, i);
        let parent = &parents[pick.sample(&mut rng)];
        let mut v = *parent.genotype.values();
        for (d, x) in v.iter_mut().enumerate() {
            let sd = sigma * bounds.range(d);
            if sd > 0.0 {
                *x += Normal::new(0.0, sd).expect("valid sd").sample(&mut rng);
            }
        }
        out.push(Proposal {
            genotype: bounds.clamp(&Genotype::new(v).expect("finite")),
            strategy: Strategy::Mutation,
            provenance: provenance(vec![parent.id.clone()], "gaussian", seed, i, &[("sigma", sigma)]),
            predicted: None,
        });
    }
    Ok(out)
}

/// Uniform crossover of two distinct fitness-weighted parents.
pub fn propose_crossover(parents: &[Parent], n: usize, bounds: &GenotypeBounds, seed: u64) -> Result<Vec<Proposal>> {
    if parents.len() < 2 {
        return Err(ExploreError::TooFewParents { need: 2, got: parents.len() });
    }
    let weights: Vec<f64> = parents.iter().map(|p| fitness_weight(p.score)).collect();
    let first = WeightedIndex::new(&weights).expect("positive weights");
    let mut out = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let mut rng = indexed_rng(seed, i);
        let a = first.sample(&mut rng);
        let mut rest = weights.clone();
        rest[a] = 0.0;
        let b = WeightedIndex::new(&rest).expect("another parent").sample(&mut rng);
        let (pa, pb) = (&parents[a], &parents[b]);
        let mut v = [0.0; GENOTYPE_DIM];
        for (d, x) in v.iter_mut().enumerate() {
            *x = if rng.random::<bool>() { pa.genotype.get(d) } else { pb.genotype.get(d) };
        }
        out.push(Proposal {
            genotype: bounds.clamp(&Genotype::new(v).expect("finite")),
            strategy: Strategy::Crossover,
            provenance: provenance(vec![pa.id.clone(), pb.id.clone()], "uniform_crossover", seed, i, &[]),
            predicted: None,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McFilter {
    /// Keep candidates whose decoded score is at least this value.
    MinScore(f64),
    /// Keep candidates predicted as this category.
    Category(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOutcome {
    pub proposals: Vec<Proposal>,
    pub attempted: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub warning: Option<String>,
}

/// Rejection sampling of uniform candidates against a predictor. Candidate
/// `j` uses the same stream as `propose_random`'s `j`-th sample, so a filter
/// that accepts everything reproduces random proposals.
pub fn propose_montecarlo(
    model: &dyn GenotypePredictor,
    n: usize,
    bounds: &GenotypeBounds,
    filter: &McFilter,
    seed: u64,
    max_attempts: usize,
) -> Result<MonteCarloOutcome> {
    if n == 0 {
        return Err(ExploreError::InvalidParam("n must be at least 1".into()));
    }
    let mut proposals = Vec::with_capacity(n);
    let mut attempted = 0;
    while proposals.len() < n && attempted < max_attempts {
        let j = attempted as u64;
        attempted += 1;
        let g = uniform_genotype(bounds, seed, j);
        let p = model.predict(&g)?;
        let keep = match filter {
            McFilter::MinScore(th) => p.score.ok_or(ExploreError::NoScore)? >= *th,
            McFilter::Category(c) => p.predicted == *c,
        };
        if keep {
            let params = match filter {
                McFilter::MinScore(th) => vec![("min_predicted_score", *th)],
                McFilter::Category(_) => vec![],
            };
            proposals.push(Proposal {
                genotype: g,
                strategy: Strategy::Montecarlo,
                provenance: provenance(Vec::new(), "rejection", seed, j, &params),
                predicted: Some(p),
            });
        }
    }
    let accepted = proposals.len();
    let warning = (accepted < n)
        .then(|| format!("only {accepted} of {n} proposals accepted within {max_attempts} attempts"));
    Ok(MonteCarloOutcome {
        proposals,
        attempted,
        accepted,
        acceptance_rate: if attempted == 0 { 0.0 } else { accepted as f64 / attempted as f64 },
        warning,
    })
}

/// A source of phenotype rasters.
pub trait GeneratorPlugin: Send + Sync {
    fn name(&self) -> &str;
    fn deterministic(&self) -> bool;
    fn render(&self, g: &Genotype) -> Result<GrayImage>;
}

/// Built-in stand-in generator over the unit cube: warped superposed waves
/// pushed through a soft threshold.
///
/// g0 brightness, g1..g4 frequency and angle of two plane waves, g5
/// anisotropy, g6 radial frequency, g7 warp, g8/g9 wave mix, g10 threshold,
/// g11 sharpness. The all-zero genotype renders solid black.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyGenerator;

impl GeneratorPlugin for ToyGenerator {
    fn name(&self) -> &str {
        "toy-waves"
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn render(&self, g: &Genotype) -> Result<GrayImage> {
        toy_generate(g)
    }
}

pub fn toy_generate(g: &Genotype) -> Result<GrayImage> {
    if !GenotypeBounds::unit().contains(g) {
        return Err(ExploreError::OutOfBounds(format!("{:?}", g.values())));
    }
    let v = g.values();
    let pi = std::f64::consts::PI;
    let (f1, a1) = (1.0 + 24.0 * v[1], pi * v[2]);
    let (f2, a2) = (1.0 + 24.0 * v[3], pi * v[4]);
    let aniso = 0.25 + 1.5 * v[5];
    let fr = 20.0 * v[6];
    let warp = 0.5 * v[7];
    let tau = 0.8 * (2.0 * v[10] - 1.0);
    let sharp = 1.0 + 30.0 * v[11];
    let norm = 1.0 + v[8] + v[9];
    let n = TOY_SIZE;
    Ok(GrayImage::from_fn(n, n, |x, y| {
        let u = 2.0 * (x as f64 + 0.5) / n as f64 - 1.0;
        let w = 2.0 * (y as f64 + 0.5) / n as f64 - 1.0;
        let xp = u + warp * (3.0 * pi * w).sin();
        let yp = aniso * (w + warp * (3.0 * pi * u).sin());
        let w1 = (pi * f1 * (xp * a1.cos() + yp * a1.sin())).cos();
        let w2 = (pi * f2 * (xp * a2.cos() + yp * a2.sin())).cos();
        let wr = (pi * fr * (xp * xp + yp * yp).sqrt()).cos();
        let field = (w1 + v[8] * w2 + v[9] * wr) / norm;
        v[0] / (1.0 + (-sharp * (field - tau)).exp())
    }))
}
