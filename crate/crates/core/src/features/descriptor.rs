//! Dense 128-d gradient-orientation patch descriptors.
//!
//! This fills the role of the classic SIFT histogram baseline with a fixed
//! dense grid instead of keypoint detection: 16×16 patches every 8 px, each
//! split into 4×4 cells of 4×4 px with an 8-bin orientation histogram of
//! gradient magnitude per cell.

use std::path::Path;

use super::FeatureError;

pub const PATCH: usize = 16;
pub const STRIDE: usize = 8;
pub const CELLS: usize = 4;
pub const ORIENTATIONS: usize = 8;
pub const DESCRIPTOR_DIM: usize = CELLS * CELLS * ORIENTATIONS;
/// Component cap applied between the two L2 normalizations.
pub const CLAMP: f64 = 0.2;

const CELL_PX: usize = PATCH / CELLS;

pub type Descriptor = Vec<f64>;

/// Row-major luma raster.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel buffer size");
        GrayImage { width, height, pixels }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let pixels = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        GrayImage { width, height, pixels }
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B` of an 8-bit RGB buffer.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Self {
        let pixels = rgb
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect();
        GrayImage::new(width, height, pixels)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FeatureError> {
        let img = image::load_from_memory(bytes).map_err(|e| FeatureError::UndecodableImage(e.to_string()))?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(GrayImage::from_rgb8(w as usize, h as usize, rgb.as_raw()))
    }

    pub fn open(path: &Path) -> Result<Self, FeatureError> {
        let bytes = std::fs::read(path)
            .map_err(|e| FeatureError::UndecodableImage(format!("{}: {e}", path.display())))?;
        GrayImage::decode(&bytes).map_err(|e| match e {
            FeatureError::UndecodableImage(m) => FeatureError::UndecodableImage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> f64 {
        self.at(x, y)
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

/// Number of descriptors `dense_descriptors` yields for a `width × height` image.
pub fn grid_count(width: usize, height: usize) -> usize {
    if width < PATCH || height < PATCH {
        return 0;
    }
    ((width - PATCH) / STRIDE + 1) * ((height - PATCH) / STRIDE + 1)
}

/// Orientation bin of a gradient. Bins are centered on multiples of 45°,
/// so purely horizontal gradients land in bins 0 (+x) and 4 (−x) and purely
/// vertical ones in bins 2 (+y, image rows downward) and 6.
pub fn orientation_bin(dx: f64, dy: f64) -> usize {
    let sector = std::f64::consts::TAU / ORIENTATIONS as f64;
    ((dy.atan2(dx) / sector).round() as i64).rem_euclid(ORIENTATIONS as i64) as usize
}

/// Descriptors on the dense grid, row-major over patch positions.
pub fn dense_descriptors(img: &GrayImage) -> Result<Vec<Descriptor>, FeatureError> {
    if img.width < PATCH || img.height < PATCH {
        return Err(FeatureError::ImageTooSmall { width: img.width, height: img.height });
    }
    let (w, h) = (img.width, img.height);
    // central differences, replicated border
    let mut magnitude = vec![0.0; w * h];
    let mut bin = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let dx = img.at((x + 1).min(w - 1), y) - img.at(x.saturating_sub(1), y);
            let dy = img.at(x, (y + 1).min(h - 1)) - img.at(x, y.saturating_sub(1));
            let m = dx.hypot(dy);
            magnitude[y * w + x] = m;
            if m > 0.0 {
                bin[y * w + x] = orientation_bin(dx, dy) as u8;
            }
        }
    }

    let mut out = Vec::with_capacity(grid_count(w, h));
    for py in (0..=h - PATCH).step_by(STRIDE) {
        for px in (0..=w - PATCH).step_by(STRIDE) {
            let mut d = vec![0.0; DESCRIPTOR_DIM];
            for y in py..py + PATCH {
                let cy = (y - py) / CELL_PX;
                for x in px..px + PATCH {
                    let m = magnitude[y * w + x];
                    if m > 0.0 {
                        let cx = (x - px) / CELL_PX;
                        d[(cy * CELLS + cx) * ORIENTATIONS + bin[y * w + x] as usize] += m;
                    }
                }
            }
            normalize_clamped(&mut d);
            out.push(d);
        }
    }
    Ok(out)
}

/// L2-normalize, cap components at [`CLAMP`], renormalize. Zero vectors stay zero.
fn normalize_clamped(d: &mut [f64]) {
    if !l2_normalize(d) {
        return;
    }
    for v in d.iter_mut() {
        *v = v.min(CLAMP);
    }
    l2_normalize(d);
}

fn l2_normalize(d: &mut [f64]) -> bool {
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return false;
    }
    d.iter_mut().for_each(|v| *v /= norm);
    true
}
