//! Seeded synthetic datasets for demos and tests: toy-rendered images, a
//! manifest with rule-derived scores and categories, and optional features.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError, SplitSpec};
use crate::explore::{self, ExploreError};
use crate::features::{self, FeatureError, FeatureSet, FeatureVector};
use crate::measures;
use crate::util::indexed_rng;
use crate::{Dataset, Evaluation, Genotype, Specimen, Split, FEATURE_DIM};

pub const CATEGORIES: [&str; 4] = ["black", "brain", "shell", "swirl"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("n must be at least 1")]
    Empty,
    #[error("image size must be between 16 and 512, got {0}")]
    ImageSize(u32),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("png encoding: {0}")]
    Image(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    /// Side of the saved PNGs (renders are 512 px and area-downsampled).
    pub image_size: u32,
    pub train_fraction: f64,
    pub with_features: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n: 200, seed: 0, image_size: 128, train_fraction: 0.8, with_features: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub manifest: PathBuf,
    pub features: Option<PathBuf>,
    pub n: usize,
}

/// Category rule over unit-cube genotypes.
pub fn synth_category(g: &Genotype) -> &'static str {
    let v = g.values();
    if v[0] < 0.1 {
        "black"
    } else if v[6] > 0.6 {
        "shell"
    } else if v[1] > 0.5 {
        "swirl"
    } else {
        "brain"
    }
}

/// Score rule: busier, brighter renders score higher; black renders fail.
pub fn synth_score(g: &Genotype) -> u8 {
    let v = g.values();
    if v[0] < 0.1 {
        return 0;
    }
    (10.0 * (0.55 * v[1] + 0.25 * v[3] + 0.2 * v[0])).round().clamp(0.0, 10.0) as u8
}

/// Feature vector keyed to the category with per-specimen noise.
fn synth_feature(category: &str, seed: u64, index: u64) -> Vec<f64> {
    let c = CATEGORIES.iter().position(|x| *x == category).unwrap_or(0);
    let block = FEATURE_DIM / CATEGORIES.len();
    let mut rng = indexed_rng(seed ^ 0xfea7, index);
    (0..FEATURE_DIM)
        .map(|d| {
            let base = 0.3 * rng.random::<f64>();
            if d / block == c && rng.random::<f64>() < 0.2 {
                base + 1.0 + rng.random::<f64>()
            } else {
                base
            }
        })
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.to_path_buf(), source }
}

/// Writes `manifest.csv`, `images/*.png` and optionally `features.fvec` under
/// `root`.
pub fn write_synthetic(root: impl AsRef<Path>, cfg: &SynthConfig) -> Result<SynthSummary, SynthError> {
    if cfg.n == 0 {
        return Err(SynthError::Empty);
    }
    if !(16..=512).contains(&cfg.image_size) {
        return Err(SynthError::ImageSize(cfg.image_size));
    }
    let root = root.as_ref();
    let images = root.join("images");
    std::fs::create_dir_all(&images).map_err(io_err(&images))?;

    let mut specimens = Vec::with_capacity(cfg.n);
    let mut vectors = Vec::new();
    for i in 0..cfg.n {
        let mut rng = indexed_rng(cfg.seed, i as u64);
        let g = Genotype::new(std::array::from_fn(|_| rng.random::<f64>())).expect("finite");
        let id = format!("sp{i:05}");
        let rel = format!("images/{id}.png");
        let size = cfg.image_size as usize;
        let img = measures::resize_area(&explore::toy_generate(&g)?, size, size).to_image();
        let path = root.join(&rel);
        img.save(&path).map_err(|e| SynthError::Image(format!("{}: {e}", path.display())))?;
        let category = synth_category(&g);
        let eval = Evaluation::new(Some(i64::from(synth_score(&g))), Some(category), "synth", chrono::DateTime::UNIX_EPOCH)?;
        if cfg.with_features {
            vectors.push(FeatureVector { specimen_id: id.clone(), values: synth_feature(category, cfg.seed, i as u64) });
        }
        specimens.push(Specimen { id, genotype: g, image_path: Some(rel), evaluation: Some(eval), split: Split::Unassigned });
    }
    let manifest = root.join("manifest.csv");
    let ds = Dataset::new(specimens, &manifest)?;
    let ds = if cfg.n >= 2 {
        dataset::split_dataset(&ds, &SplitSpec::Fraction { fraction: cfg.train_fraction, seed: cfg.seed })?
    } else {
        ds
    };
    dataset::write_manifest(&ds, &manifest)?;
    let features = if cfg.with_features {
        let path = root.join("features.fvec");
        features::write_fvec(&FeatureSet::new(FEATURE_DIM, vectors)?, &path)?;
        Some(path)
    } else {
        None
    };
    Ok(SynthSummary { manifest, features, n: cfg.n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_a_loadable_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { n: 12, seed: 4, image_size: 32, train_fraction: 0.75, with_features: true };
        let s = write_synthetic(dir.path(), &cfg).unwrap();
        let ds = dataset::load_manifest(&s.manifest).unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.in_split(Split::Train).count(), 9);
        for sp in ds.specimens() {
            assert!(ds.image_file(sp).unwrap().exists());
            assert_eq!(sp.score(), Some(synth_score(&sp.genotype)));
        }
        let ing = features::ingest_features(s.features.unwrap(), &ds).unwrap();
        assert!(ing.missing.is_empty() && ing.unmatched.is_empty());
        let again = tempfile::tempdir().unwrap();
        write_synthetic(again.path(), &cfg).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("manifest.csv")).unwrap(),
            std::fs::read(again.path().join("manifest.csv")).unwrap()
        );
    }
}
