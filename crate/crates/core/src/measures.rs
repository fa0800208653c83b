//! The seven per-image aesthetic measures, computed on luminance rasters.
//!
//! Histogram measures (entropy, energy) use 256 intensity levels. Morphology
//! (contours, Euler number) and box counting work on an Otsu-binarised mask with
//! 8-connected foreground and 4-connected background.

use std::io::Write;
use std::path::Path;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use image::DynamicImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length every image is resampled to before measuring.
pub const MEASURE_SIZE: u32 = 512;

const REC709: [f64; 3] = [0.2126, 0.7152, 0.0722];

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("empty raster")]
    Empty,
    #[error("image {width}x{height} too small for coarse-grain radius {radius}")]
    TooSmall { width: usize, height: usize, radius: usize },
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("invalid structural-complexity parameters: {0}")]
    InvalidParams(String),
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("measures CSV: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, MeasureError>;

/// Row-major grayscale raster with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// Values are clamped into [0, 1].
    pub fn new(width: usize, height: usize, mut data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "raster size mismatch");
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(x, self.height - 1 - y))
    }

    /// 8-bit quantised intensities, row-major.
    pub fn levels(&self) -> Vec<u8> {
        self.data.iter().map(|&v| level(v)).collect()
    }

    pub fn to_image(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width as u32, self.height as u32, self.levels())
            .expect("buffer matches dimensions")
    }
}

fn level(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Foreground mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask size mismatch");
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Parameters of the structural-complexity measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SComplexParams {
    /// Coarse-grain radius in pixels.
    pub r_cg: usize,
    /// Difference threshold.
    pub delta: f64,
}

impl Default for SComplexParams {
    fn default() -> Self {
        Self { r_cg: 5, delta: 0.23 }
    }
}

impl SComplexParams {
    pub fn validate(&self) -> Result<()> {
        if self.r_cg == 0 {
            return Err(MeasureError::InvalidParams("r_cg must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(MeasureError::InvalidParams(format!(
                "delta {} outside (0, 1)",
                self.delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureRecord {
    pub entropy: f64,
    pub energy: f64,
    pub contours: u64,
    pub euler: i64,
    pub acomplex: f64,
    pub scomplex: f64,
    pub fdim: f64,
}

impl MeasureRecord {
    pub const NAMES: [&'static str; 7] = [
        "entropy", "energy", "contours", "euler", "acomplex", "scomplex", "fdim",
    ];

    /// Values in [`Self::NAMES`] order.
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.entropy,
            self.energy,
            self.contours as f64,
            self.euler as f64,
            self.acomplex,
            self.scomplex,
            self.fdim,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let i = Self::NAMES.iter().position(|n| n.eq_ignore_ascii_case(name))?;
        Some(self.as_array()[i])
    }
}

/// Rec.709 luma of the (gamma-encoded) RGB channels; alpha is ignored and
/// grayscale images pass through unchanged.
pub fn to_luminance(image: &DynamicImage) -> GrayImage {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if !image.color().has_color() {
        let g = image.to_luma32f();
        return GrayImage::new(w, h, g.into_raw().into_iter().map(f64::from).collect());
    }
    let rgb = image.to_rgb32f();
    let data = rgb
        .pixels()
        .map(|p| {
            REC709[0] * p.0[0] as f64 + REC709[1] * p.0[1] as f64 + REC709[2] * p.0[2] as f64
        })
        .collect();
    GrayImage::new(w, h, data)
}

pub fn load_luminance(path: impl AsRef<Path>) -> Result<GrayImage> {
    let img = image::open(path.as_ref()).map_err(|e| MeasureError::Decode(e.to_string()))?;
    Ok(to_luminance(&img))
}

/// Overlap weights of each destination cell with the source cells.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let a = o as f64 * scale;
            let b = (o + 1) as f64 * scale;
            let first = a.floor() as usize;
            let last = (b.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let overlap = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Area-averaging resample (box filter weighted by pixel overlap).
pub fn resize_area(img: &GrayImage, width: usize, height: usize) -> GrayImage {
    if img.width == width && img.height == height {
        return img.clone();
    }
    let wx = area_weights(img.width, width);
    let wy = area_weights(img.height, height);
    let mut horiz = vec![0.0; width * img.height];
    for y in 0..img.height {
        let row = &img.data[y * img.width..(y + 1) * img.width];
        for (ox, weights) in wx.iter().enumerate() {
            horiz[y * width + ox] = weights.iter().map(|&(i, w)| row[i] * w).sum();
        }
    }
    let mut out = vec![0.0; width * height];
    for (oy, weights) in wy.iter().enumerate() {
        for ox in 0..width {
            out[oy * width + ox] = weights.iter().map(|&(i, w)| horiz[i * width + ox] * w).sum();
        }
    }
    GrayImage::new(width, height, out)
}

pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in &img.data {
        h[level(v) as usize] += 1;
    }
    h
}

fn probabilities(img: &GrayImage) -> Result<impl Iterator<Item = f64>> {
    if img.is_empty() {
        return Err(MeasureError::Empty);
    }
    let n = img.data.len() as f64;
    Ok(histogram(img).into_iter().filter(|&c| c > 0).map(move |c| c as f64 / n))
}

/// Shannon entropy (bits) of the 256-level histogram.
pub fn entropy(img: &GrayImage) -> Result<f64> {
    Ok(probabilities(img)?.map(|p| -p * p.log2()).sum::<f64>().max(0.0))
}

/// Sum of squared histogram probabilities.
pub fn energy(img: &GrayImage) -> Result<f64> {
    Ok(probabilities(img)?.map(|p| p * p).sum())
}

/// Pixels at or above `threshold` are foreground.
pub fn binarize(img: &GrayImage, threshold: f64) -> Result<BinaryImage> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MeasureError::InvalidThreshold(threshold));
    }
    Ok(BinaryImage::new(
        img.width,
        img.height,
        img.data.iter().map(|&v| v >= threshold).collect(),
    ))
}

/// Otsu threshold on the 256-level histogram, expressed so that
/// `binarize(img, t)` keeps exactly the levels above the Otsu split. When the
/// between-class variance is maximal over a run of levels the middle of the
/// run is used; a single-level image falls back to 0.5.
pub fn otsu_threshold(img: &GrayImage) -> f64 {
    let hist = histogram(img);
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.5;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    let mut best = 0.0;
    let mut best_range: Option<(usize, usize)> = None;
    for t in 0..255 {
        w0 += hist[t];
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if var > best * (1.0 + 1e-12) {
            best = var;
            best_range = Some((t, t));
        } else if best_range.is_some() && var >= best * (1.0 - 1e-12) {
            if let Some(r) = best_range.as_mut() {
                r.1 = t;
            }
        }
    }
    match best_range {
        Some((a, b)) => ((a + b) / 2) as f64 / 255.0 + 0.5 / 255.0,
        None => 0.5,
    }
}

pub fn binarize_otsu(img: &GrayImage) -> BinaryImage {
    binarize(img, otsu_threshold(img)).expect("otsu threshold lies in (0, 1)")
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        Self { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labelling; counts connected components of `value`
/// pixels in a `width`-wide row-major grid.
fn count_components(bits: &[bool], width: usize, value: bool, eight: bool) -> usize {
    if width == 0 {
        return 0;
    }
    let height = bits.len() / width;
    let mut labels = vec![u32::MAX; bits.len()];
    let mut sets = DisjointSet::new();
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if bits[i] != value {
                continue;
            }
            let mut neighbours = [u32::MAX; 4];
            if x > 0 {
                neighbours[0] = labels[i - 1];
            }
            if y > 0 {
                neighbours[1] = labels[i - width];
                if eight {
                    if x > 0 {
                        neighbours[2] = labels[i - width - 1];
                    }
                    if x + 1 < width {
                        neighbours[3] = labels[i - width + 1];
                    }
                }
            }
            let mut label = u32::MAX;
            for &n in neighbours.iter().filter(|&&n| n != u32::MAX) {
                if label == u32::MAX {
                    label = n;
                } else {
                    sets.union(label, n);
                }
            }
            labels[i] = if label == u32::MAX { sets.make() } else { label };
        }
    }
    (0..sets.parent.len() as u32)
        .filter(|&l| sets.find(l) == l)
        .count()
}

/// Foreground components and holes of a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Topology {
    pub components: usize,
    pub holes: usize,
}

pub fn topology(mask: &BinaryImage) -> Topology {
    let components = count_components(&mask.bits, mask.width, true, true);
    // Pad with a background frame so every border-touching background region
    // merges into one outer region; the rest are holes.
    let (pw, ph) = (mask.width + 2, mask.height + 2);
    let mut padded = vec![false; pw * ph];
    for y in 0..mask.height {
        let src = &mask.bits[y * mask.width..(y + 1) * mask.width];
        padded[(y + 1) * pw + 1..(y + 1) * pw + 1 + mask.width].copy_from_slice(src);
    }
    let background = count_components(&padded, pw, false, false);
    Topology {
        components,
        holes: background.saturating_sub(1),
    }
}

/// Number of closed boundary curves (outer boundaries plus hole boundaries).
pub fn contours(img: &GrayImage) -> Result<u64> {
    if img.is_empty() {
        return Err(MeasureError::Empty);
    }
    let t = topology(&binarize_otsu(img));
    Ok((t.components + t.holes) as u64)
}

/// Components minus holes.
pub fn euler(img: &GrayImage) -> Result<i64> {
    if img.is_empty() {
        return Err(MeasureError::Empty);
    }
    let t = topology(&binarize_otsu(img));
    Ok(t.components as i64 - t.holes as i64)
}

/// Raw-deflate (level 9) size of the 8-bit raster divided by its raw size.
pub fn acomplex(img: &GrayImage) -> Result<f64> {
    if img.is_empty() {
        return Err(MeasureError::Empty);
    }
    let raw = img.levels();
    let mut enc = DeflateEncoder::new(Vec::with_capacity(raw.len() / 2), Compression::best());
    enc.write_all(&raw).expect("in-memory write");
    let compressed = enc.finish().expect("in-memory write");
    Ok((compressed.len() as f64 / raw.len() as f64).clamp(0.0, 1.0))
}

/// Mean over the disk of radius `radius` around each pixel, restricted to
/// in-bounds pixels.
pub fn disk_mean(img: &GrayImage, radius: usize) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let r = radius as i64;
    let half: Vec<i64> = (-r..=r)
        .map(|dy| {
            let mut dx = 0;
            while (dx + 1) * (dx + 1) + dy * dy <= r * r {
                dx += 1;
            }
            dx
        })
        .collect();
    // Row prefix sums: prefix[y][x] = sum of row y over [0, x).
    let mut prefix = vec![0.0; (w + 1) * h];
    for y in 0..h {
        for x in 0..w {
            prefix[y * (w + 1) + x + 1] = prefix[y * (w + 1) + x] + img.data[y * w + x];
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut sum = 0.0;
            let mut count = 0i64;
            for (k, dy) in (-r..=r).enumerate() {
                let yy = y + dy;
                if yy < 0 || yy >= h as i64 {
                    continue;
                }
                let x0 = (x - half[k]).max(0);
                let x1 = (x + half[k]).min(w as i64 - 1);
                let row = yy as usize * (w + 1);
                sum += prefix[row + x1 as usize + 1] - prefix[row + x0 as usize];
                count += x1 - x0 + 1;
            }
            out[y as usize * w + x as usize] = sum / count as f64;
        }
    }
    GrayImage::new(w, h, out)
}

/// Fraction of pixels whose deviation from the disk-mean coarse-graining
/// exceeds `delta`.
pub fn scomplex(img: &GrayImage, params: &SComplexParams) -> Result<f64> {
    params.validate()?;
    if img.width <= 2 * params.r_cg || img.height <= 2 * params.r_cg {
        return Err(MeasureError::TooSmall {
            width: img.width,
            height: img.height,
            radius: params.r_cg,
        });
    }
    let coarse = disk_mean(img, params.r_cg);
    let above = img
        .data
        .iter()
        .zip(&coarse.data)
        .filter(|(a, b)| (*a - *b).abs() > params.delta)
        .count();
    Ok(above as f64 / img.data.len() as f64)
}

/// Box sizes used for counting: powers of two up to a quarter of the short side.
pub fn box_sizes(width: usize, height: usize) -> Vec<usize> {
    let limit = width.min(height) / 4;
    std::iter::successors(Some(2usize), |s| Some(s * 2))
        .take_while(|&s| s <= limit)
        .collect()
}

/// Occupied-box count at each size.
pub fn box_counts(mask: &BinaryImage, sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .map(|&s| {
            let bw = mask.width.div_ceil(s);
            let bh = mask.height.div_ceil(s);
            let mut occupied = vec![false; bw * bh];
            for y in 0..mask.height {
                for x in 0..mask.width {
                    if mask.get(x, y) {
                        occupied[(y / s) * bw + x / s] = true;
                    }
                }
            }
            occupied.iter().filter(|&&b| b).count()
        })
        .collect()
}

/// Least-squares slope of `ln N(s)` against `ln(1/s)`.
pub fn box_counting_dimension(mask: &BinaryImage) -> f64 {
    let sizes = box_sizes(mask.width, mask.height);
    if sizes.len() < 2 || mask.count() == 0 {
        return 0.0;
    }
    let counts = box_counts(mask, &sizes);
    let xs: Vec<f64> = sizes.iter().map(|&s| -(s as f64).ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    let mx = crate::util::mean(&xs);
    let my = crate::util::mean(&ys);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxy / sxx).clamp(0.0, 2.0)
}

pub fn fractal_dim(img: &GrayImage) -> Result<f64> {
    if img.is_empty() {
        return Err(MeasureError::Empty);
    }
    Ok(box_counting_dimension(&binarize_otsu(img)))
}

/// All seven measures of a luminance raster, without resampling.
pub fn measure_luma(img: &GrayImage, params: &SComplexParams) -> Result<MeasureRecord> {
    if img.is_empty() {
        return Err(MeasureError::Empty);
    }
    let mask = binarize_otsu(img);
    let topo = topology(&mask);
    Ok(MeasureRecord {
        entropy: entropy(img)?,
        energy: energy(img)?,
        contours: (topo.components + topo.holes) as u64,
        euler: topo.components as i64 - topo.holes as i64,
        acomplex: acomplex(img)?,
        scomplex: scomplex(img, params)?,
        fdim: box_counting_dimension(&mask),
    })
}

/// Luminance conversion, area resampling to 512x512, then all seven measures.
pub fn measure_all(image: &DynamicImage, params: &SComplexParams) -> Result<MeasureRecord> {
    let luma = to_luminance(image);
    if luma.is_empty() {
        return Err(MeasureError::Empty);
    }
    let size = MEASURE_SIZE as usize;
    measure_luma(&resize_area(&luma, size, size), params)
}

pub fn measure_file(path: impl AsRef<Path>, params: &SComplexParams) -> Result<MeasureRecord> {
    let img = image::open(path.as_ref()).map_err(|e| MeasureError::Decode(e.to_string()))?;
    measure_all(&img, params)
}

/// One measured specimen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredSpecimen {
    pub id: String,
    #[serde(flatten)]
    pub record: MeasureRecord,
}

/// A specimen whose image could not be measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureFailure {
    pub id: String,
    pub error: String,
}

/// Measures every specimen image in parallel, in dataset order. Specimens
/// without an image path are reported as failures.
pub fn measure_dataset(
    ds: &crate::Dataset,
    params: &SComplexParams,
) -> Result<(Vec<MeasuredSpecimen>, Vec<MeasureFailure>)> {
    measure_dataset_with_progress(ds, params, &|_| {})
}

pub fn measure_dataset_with_progress(
    ds: &crate::Dataset,
    params: &SComplexParams,
    progress: &(dyn Fn(f64) + Sync),
) -> Result<(Vec<MeasuredSpecimen>, Vec<MeasureFailure>)> {
    use rayon::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    params.validate()?;
    let total = ds.len().max(1);
    let done = AtomicUsize::new(0);
    let results: Vec<std::result::Result<MeasuredSpecimen, MeasureFailure>> = ds
        .specimens()
        .par_iter()
        .map(|s| {
            let out = match ds.image_file(s) {
                None => Err(MeasureFailure { id: s.id.clone(), error: "no image path".into() }),
                Some(path) => measure_file(&path, params)
                    .map(|record| MeasuredSpecimen { id: s.id.clone(), record })
                    .map_err(|e| MeasureFailure { id: s.id.clone(), error: format!("{}: {e}", path.display()) }),
            };
            progress((done.fetch_add(1, Ordering::Relaxed) + 1) as f64 / total as f64);
            out
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(m) => ok.push(m),
            Err(f) => failed.push(f),
        }
    }
    Ok((ok, failed))
}

pub const MEASURE_CSV_HEADER: &str = "id,entropy,energy,contours,euler,acomplex,scomplex,fdim";

/// Measures CSV: a `# r_cg=.. delta=..` comment line, a header, one row per
/// specimen.
pub fn measures_to_csv(rows: &[MeasuredSpecimen], params: &SComplexParams) -> String {
    let mut out = format!("# r_cg={} delta={}\n{MEASURE_CSV_HEADER}\n", params.r_cg, params.delta);
    for m in rows {
        let r = &m.record;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            m.id, r.entropy, r.energy, r.contours, r.euler, r.acomplex, r.scomplex, r.fdim
        ));
    }
    out
}

/// Parses [`measures_to_csv`] output. The parameter comment is optional.
pub fn parse_measures_csv(text: &str) -> Result<(Option<SComplexParams>, Vec<MeasuredSpecimen>)> {
    let mut params = None;
    let mut body = String::new();
    for line in text.lines() {
        if let Some(c) = line.strip_prefix('#') {
            let mut p = SComplexParams::default();
            let mut seen = false;
            for kv in c.split_whitespace() {
                match kv.split_once('=') {
                    Some(("r_cg", v)) => {
                        p.r_cg = v.parse().map_err(|_| MeasureError::Csv(format!("bad r_cg `{v}`")))?;
                        seen = true;
                    }
                    Some(("delta", v)) => {
                        p.delta = v.parse().map_err(|_| MeasureError::Csv(format!("bad delta `{v}`")))?;
                        seen = true;
                    }
                    _ => {}
                }
            }
            if seen {
                params = Some(p);
            }
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let headers = reader.headers().map_err(|e| MeasureError::Csv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != MEASURE_CSV_HEADER {
        return Err(MeasureError::Csv(format!("unexpected header `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    #[derive(Deserialize)]
    struct Row {
        id: String,
        entropy: f64,
        energy: f64,
        contours: u64,
        euler: i64,
        acomplex: f64,
        scomplex: f64,
        fdim: f64,
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        let r = rec.map_err(|e| MeasureError::Csv(format!("row {}: {e}", i + 1)))?;
        let Row { id, entropy, energy, contours, euler, acomplex, scomplex, fdim } = r;
        rows.push(MeasuredSpecimen {
            id,
            record: MeasureRecord { entropy, energy, contours, euler, acomplex, scomplex, fdim },
        });
    }
    Ok((params, rows))
}
