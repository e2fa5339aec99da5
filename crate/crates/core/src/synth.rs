//! Procedural demo corpus: a street grid, rendered facade/street images with
//! class-correlated gradient statistics, expert-style labels and survey
//! responses.
//!
//! Facade images are oriented stripe textures whose orientation depends on
//! the quality class (1: 0°, 2: 45°, 3: 90°, 4: 135°). Discontinuous facades
//! have a vertical gap band of isotropic noise. Street images have a smooth
//! sky over a noisy road surface. Each segment carries a latent quality
//! level and continuity rate, so segment averages and survey means are
//! related without being identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};

use crate::dataset::{write_manifest, DatasetError, ImageRecord, LabelRecord, LabelStore, Task};
use crate::features::GrayImage;
use crate::geo::{network_to_geojson, sample_points, CameraSide, LonLat, StreetSegment, DEFAULT_INTERVAL_M};
use crate::pipeline::{write_survey, PipelineError, SurveyRecord, AGE_BANDS, EDUCATION_LEVELS, GENDERS, RESIDENCES};
use crate::rng::SeededRng;

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub n_images: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Share of labels replaced by a random other class.
    pub label_noise: f64,
    pub grid: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { n_images: 400, seed: 7, width: 64, height: 64, label_noise: 0.05, grid: 6 }
    }
}

/// Hidden ground truth for one generated image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truth {
    pub qualified: bool,
    pub quality: i64,
    pub continuous: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub dir: PathBuf,
    pub network_path: PathBuf,
    pub manifest_path: PathBuf,
    pub labels_path: PathBuf,
    pub survey_path: PathBuf,
    pub segments: Vec<StreetSegment>,
    pub images: Vec<ImageRecord>,
    pub truth: BTreeMap<String, Truth>,
}

/// Square street grid near central Beijing; blocks are about 500 m.
pub fn grid_network(n: usize) -> Vec<StreetSegment> {
    let (lon0, lat0) = (116.38, 39.90);
    let (dlon, dlat) = (0.00586, 0.0045);
    let at = |c: usize, r: usize| LonLat { lon: lon0 + c as f64 * dlon, lat: lat0 + r as f64 * dlat };
    let mut segs = Vec::new();
    for r in 0..n {
        for c in 0..n.saturating_sub(1) {
            segs.push(StreetSegment::new(format!("h{r:02}-{c:02}"), vec![at(c, r), at(c + 1, r)]).expect("valid grid"));
        }
    }
    for c in 0..n {
        for r in 0..n.saturating_sub(1) {
            segs.push(StreetSegment::new(format!("v{c:02}-{r:02}"), vec![at(c, r), at(c, r + 1)]).expect("valid grid"));
        }
    }
    segs
}

const STRIPE_ANGLES_DEG: [f64; 4] = [0.0, 45.0, 90.0, 135.0];

pub fn render(truth: Truth, width: usize, height: usize, rng: &mut SeededRng) -> GrayImage {
    let noise = |sd: f64| Normal::new(0.0, sd).expect("positive sd");
    if !truth.qualified {
        let horizon = height as f64 * (0.4 + 0.2 * rng.unit());
        let sky = noise(3.0);
        let road = noise(40.0);
        let mut px = Vec::with_capacity(width * height);
        for y in 0..height {
            for _x in 0..width {
                let v = if (y as f64) < horizon {
                    200.0 - 30.0 * y as f64 / horizon + sky.sample(rng.inner())
                } else {
                    100.0 + road.sample(rng.inner())
                };
                px.push(v.clamp(0.0, 255.0).round());
            }
        }
        return GrayImage::new(width, height, px);
    }

    let jitter = noise(6.0).sample(rng.inner());
    let theta = (STRIPE_ANGLES_DEG[(truth.quality - 1) as usize] + jitter).to_radians();
    let period = 6.0 + 4.0 * rng.unit();
    let phase = std::f64::consts::TAU * rng.unit();
    let (gap_lo, gap_hi) = if truth.continuous {
        (usize::MAX, usize::MAX)
    } else {
        let w = width * 3 / 8;
        let lo = rng.below((width - w) as u64 + 1) as usize;
        (lo, lo + w)
    };
    let pixel_noise = noise(12.0);
    let gap_noise = noise(45.0);
    let mut px = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let v = if (gap_lo..gap_hi).contains(&x) {
                170.0 + gap_noise.sample(rng.inner())
            } else {
                let u = x as f64 * theta.cos() + y as f64 * theta.sin();
                128.0 + 70.0 * (std::f64::consts::TAU * u / period + phase).sin() + pixel_noise.sample(rng.inner())
            };
            px.push(v.clamp(0.0, 255.0).round());
        }
    }
    GrayImage::new(width, height, px)
}

fn save_png(img: &GrayImage, path: &Path) -> Result<(), PipelineError> {
    let bytes: Vec<u8> = (0..img.height())
        .flat_map(|y| (0..img.width()).map(move |x| (x, y)))
        .map(|(x, y)| img.pixel(x, y) as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes).expect("buffer size");
    buf.save(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

fn noisy_label(value: i64, task: Task, noise: f64, rng: &mut SeededRng) -> i64 {
    if rng.unit() >= noise {
        return value;
    }
    let others: Vec<i64> = task.classes().iter().copied().filter(|&c| c != value).collect();
    others[rng.below(others.len() as u64) as usize]
}

/// Generate the corpus under `dir`: `network.geojson`, `images/*.png`,
/// `images.csv`, `labels.jsonl` and `survey.csv`.
pub fn generate(dir: &Path, params: &SynthParams) -> Result<SyntheticCorpus, PipelineError> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut rng = SeededRng::new(params.seed);

    let segments = grid_network(params.grid);
    let network_path = dir.join("network.geojson");
    std::fs::write(&network_path, network_to_geojson(&segments))?;

    let mut points = Vec::new();
    for seg in &segments {
        points.extend(sample_points(seg, DEFAULT_INTERVAL_M, CameraSide::Right)?);
    }

    // latent per-segment character
    let mut latent: BTreeMap<String, (i64, f64)> = BTreeMap::new();
    for seg in &segments {
        let level = 1 + rng.below(4) as i64;
        let continuity_rate = if rng.unit() < 0.5 { 0.2 } else { 0.8 };
        latent.insert(seg.segment_id().to_string(), (level, continuity_rate));
    }

    let mut images = Vec::with_capacity(params.n_images);
    let mut truth = BTreeMap::new();
    let mut rendered = Vec::with_capacity(params.n_images);
    for i in 0..params.n_images {
        let point = &points[i % points.len()];
        let (level, rate) = latent[&point.segment_id];
        let qualified = i % 4 != 3;
        let quality = if rng.unit() < 0.6 { level } else { 1 + rng.below(4) as i64 };
        let continuous = rng.unit() < rate;
        let t = Truth { qualified, quality, continuous };
        let image_id = format!("img-{i:05}");
        rendered.push(render(t, params.width, params.height, &mut rng));
        truth.insert(image_id.clone(), t);
        images.push(ImageRecord {
            image_id: image_id.clone(),
            point_id: point.point_id.clone(),
            segment_id: point.segment_id.clone(),
            raster_path: format!("images/{image_id}.png"),
            width_px: params.width as u32,
            height_px: params.height as u32,
        });
    }
    for (img, rec) in rendered.iter().zip(&images) {
        save_png(img, &dir.join(&rec.raster_path))?;
    }
    let manifest_path = dir.join("images.csv");
    write_manifest(&manifest_path, &images)?;

    let labels_path = dir.join("labels.jsonl");
    if labels_path.exists() {
        std::fs::remove_file(&labels_path)?;
    }
    let store = LabelStore::open(&labels_path)?;
    let mut ts = 1_500_000_000;
    let mut push = |image_id: &str, task: Task, value: i64, rng: &mut SeededRng| -> Result<(), DatasetError> {
        ts += 1;
        let value = noisy_label(value, task, params.label_noise, rng);
        store.append(LabelRecord { image_id: image_id.to_string(), task, value, rater_id: "expert-1".into(), ts })
    };
    for (id, t) in &truth {
        push(id, Task::Qualification, i64::from(t.qualified), &mut rng)?;
        if t.qualified {
            push(id, Task::Quality, t.quality, &mut rng)?;
            push(id, Task::Continuity, i64::from(t.continuous), &mut rng)?;
        }
    }

    let rating_noise = Normal::new(0.0, 0.7).expect("positive sd");
    let mut surveys = Vec::new();
    for (segment_id, &(level, _)) in &latent {
        let n = 10 + rng.below(6) as usize;
        for _ in 0..n {
            let raw = 1.0 + (level - 1) as f64 * 4.0 / 3.0 + rating_noise.sample(rng.inner());
            let pick = |options: &[&str], rng: &mut SeededRng| options[rng.below(options.len() as u64) as usize].to_string();
            surveys.push(SurveyRecord {
                segment_id: segment_id.clone(),
                rating: raw.round().clamp(1.0, 5.0) as i64,
                gender: Some(pick(GENDERS, &mut rng)),
                age_band: Some(pick(AGE_BANDS, &mut rng)),
                residence: Some(pick(RESIDENCES, &mut rng)),
                education: Some(pick(EDUCATION_LEVELS, &mut rng)),
            });
        }
    }
    let survey_path = dir.join("survey.csv");
    write_survey(&survey_path, &surveys)?;

    Ok(SyntheticCorpus {
        dir: dir.to_path_buf(),
        network_path,
        manifest_path,
        labels_path,
        survey_path,
        segments,
        images,
        truth,
    })
}
