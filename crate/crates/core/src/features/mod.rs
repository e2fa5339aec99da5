//! Fixed-dimension image features: native bag-of-visual-words histograms and
//! imported external embeddings, plus the shared feature CSV format.
//!
//! Feature files (both imported embeddings and files written by this crate)
//! are CSV without a column header: line 1 is `extractor_id,<id>`, every
//! following line is `image_id,v0,v1,…`.

mod codebook;
mod descriptor;

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

pub use codebook::{build_codebook, nearest, squared_distance, Codebook, MAX_ITERATIONS, SHIFT_TOLERANCE};
pub use descriptor::{
    dense_descriptors, grid_count, orientation_bin, Descriptor, GrayImage, CELLS, CLAMP, DESCRIPTOR_DIM,
    ORIENTATIONS, PATCH, STRIDE,
};

use crate::dataset::{resolve_raster, ImageRecord};
use crate::rng::SeededRng;

pub const DEFAULT_K: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("undecodable image: {0}")]
    UndecodableImage(String),
    #[error("image too small: {width}x{height}, need at least {PATCH}x{PATCH}")]
    ImageTooSmall { width: usize, height: usize },
    #[error("need at least {need} distinct descriptors, have {have}")]
    TooFewDescriptors { have: usize, need: usize },
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
    #[error("row {row}: expected dimension {expected}, found {found}")]
    DimensionMismatch { row: usize, expected: usize, found: usize },
    #[error("row {row}, column {col}: non-finite value")]
    NonFiniteValue { row: usize, col: usize },
    #[error("row {row}, column {col}: unparsable value {text:?}")]
    MalformedValue { row: usize, col: usize, text: String },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("row {row}: duplicate image id {image_id}")]
    DuplicateImage { row: usize, image_id: String },
    #[error("image {image_id}: {source}")]
    Image { image_id: String, source: Box<FeatureError> },
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub image_id: String,
    pub extractor_id: String,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Word histogram of `descriptors`, L1-normalized.
///
/// Zero descriptors (patches without any gradient) carry no orientation
/// information and are not counted, so an image made only of flat patches
/// maps to the all-zeros vector.
pub fn bovw_histogram(descriptors: &[Descriptor], codebook: &Codebook) -> Vec<f64> {
    let mut hist = vec![0.0; codebook.k()];
    for d in descriptors.iter().filter(|d| d.iter().any(|&v| v != 0.0)) {
        hist[nearest(&codebook.centroids, d).0] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    if total > 0.0 {
        hist.iter_mut().for_each(|h| *h /= total);
    }
    hist
}

pub fn extract_bovw(image_id: &str, img: &GrayImage, codebook: &Codebook) -> Result<FeatureVector, FeatureError> {
    let descriptors = dense_descriptors(img)?;
    Ok(FeatureVector {
        image_id: image_id.to_string(),
        extractor_id: codebook.extractor_id.clone(),
        values: bovw_histogram(&descriptors, codebook),
    })
}

fn load_for(manifest_path: &Path, rec: &ImageRecord) -> Result<GrayImage, FeatureError> {
    GrayImage::open(&resolve_raster(manifest_path, &rec.raster_path))
        .map_err(|e| FeatureError::Image { image_id: rec.image_id.clone(), source: Box::new(e) })
}

/// BoVW vectors for every manifest image, computed in parallel and returned
/// sorted by image id.
pub fn extract_manifest(
    manifest_path: &Path,
    images: &[ImageRecord],
    codebook: &Codebook,
) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut out = images
        .par_iter()
        .map(|rec| {
            let img = load_for(manifest_path, rec)?;
            extract_bovw(&rec.image_id, &img, codebook)
                .map_err(|e| FeatureError::Image { image_id: rec.image_id.clone(), source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(out)
}

/// Descriptor sample for codebook building: up to `per_image` descriptors
/// from each image, chosen by a seeded shuffle, images visited in id order.
pub fn sample_descriptors(
    manifest_path: &Path,
    images: &[ImageRecord],
    per_image: usize,
    seed: u64,
) -> Result<Vec<Descriptor>, FeatureError> {
    let mut sorted: Vec<&ImageRecord> = images.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let per_image_descriptors = sorted
        .par_iter()
        .map(|rec| {
            let img = load_for(manifest_path, rec)?;
            dense_descriptors(&img).map_err(|e| FeatureError::Image { image_id: rec.image_id.clone(), source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = SeededRng::new(seed);
    let mut sample = Vec::new();
    for mut ds in per_image_descriptors {
        rng.shuffle(&mut ds);
        ds.truncate(per_image);
        sample.extend(ds);
    }
    Ok(sample)
}

/// Write vectors in the feature CSV format, sorted by image id.
pub fn write_features(path: &Path, extractor_id: &str, vectors: &[FeatureVector]) -> Result<(), FeatureError> {
    let mut sorted: Vec<&FeatureVector> = vectors.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let file = std::fs::File::create(path).map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e: std::io::Error| FeatureError::Io(e.to_string());
    writeln!(w, "extractor_id,{extractor_id}").map_err(io)?;
    for v in sorted {
        write!(w, "{}", v.image_id).map_err(io)?;
        for x in &v.values {
            write!(w, ",{x}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Read a feature CSV; enforces a constant dimension and finite values.
pub fn import_embeddings(path: &Path) -> Result<Vec<FeatureVector>, FeatureError> {
    let file = std::fs::File::open(path).map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))?;
    parse_embeddings(file)
}

pub fn parse_embeddings(reader: impl Read) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| FeatureError::Io(e.to_string()))?,
        None => return Err(FeatureError::MalformedHeader("empty file".into())),
    };
    let extractor_id = match header.trim_end_matches('\r').split_once(',') {
        Some(("extractor_id", id)) if !id.is_empty() && !id.contains(',') => id.to_string(),
        _ => return Err(FeatureError::MalformedHeader(header)),
    };

    let mut out: Vec<FeatureVector> = Vec::new();
    let mut seen = HashSet::new();
    let mut dim = None;
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let line = line.map_err(|e| FeatureError::Io(e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let image_id = fields.next().unwrap_or_default().to_string();
        let mut values = Vec::new();
        for (j, text) in fields.enumerate() {
            let col = j + 1;
            let v: f64 = text
                .trim()
                .parse()
                .map_err(|_| FeatureError::MalformedValue { row, col, text: text.to_string() })?;
            if !v.is_finite() {
                return Err(FeatureError::NonFiniteValue { row, col });
            }
            values.push(v);
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(FeatureError::DimensionMismatch { row, expected: d, found: values.len() })
            }
            _ => {}
        }
        if !seen.insert(image_id.clone()) {
            return Err(FeatureError::DuplicateImage { row, image_id });
        }
        out.push(FeatureVector { image_id, extractor_id: extractor_id.clone(), values });
    }
    Ok(out)
}

/// Index vectors by image id.
pub fn by_image(vectors: Vec<FeatureVector>) -> BTreeMap<String, FeatureVector> {
    vectors.into_iter().map(|v| (v.image_id.clone(), v)).collect()
}
