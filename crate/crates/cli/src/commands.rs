use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use streetscape::dataset::{read_labels, read_manifest, resolve_labels, stratified_split, write_manifest, Split, Subset, Task};
use streetscape::features::{
    build_codebook, by_image, extract_manifest, import_embeddings, sample_descriptors, write_features, Codebook,
    FeatureVector,
};
use streetscape::geo::{export_geojson, parse_network, points_csv, sample_points, BinSpec, CameraSide, MapBins};
use streetscape::metrics::{classification_table, mse_table, MetricsReport};
use streetscape::model::{load_model, save_model, Hyperparams, Normalize};
use streetscape::pipeline::{
    evaluate_model, predictions_csv, read_scores, read_survey, score_segments, screen_qualified, train_task,
    validate_against_survey, validation_csv, write_scores, Features,
};
use streetscape::synth::{generate, SynthParams};

use crate::*;

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Sample(a) => sample(a),
        Command::Codebook(a) => codebook(a),
        Command::Features(a) => features(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Screen(a) => screen(a),
        Command::Score(a) => score(a),
        Command::Map(a) => map(a),
        Command::Validate(a) => validate(a),
        Command::Serve(a) => serve(a),
        Command::Synth(a) => synth(a),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_features(path: &Path) -> Result<Features, CliError> {
    let vectors = import_embeddings(path)?;
    if vectors.is_empty() {
        return Err(CliError::Data(format!("{}: no feature rows", path.display())));
    }
    Ok(by_image(vectors))
}

fn extractor_of(features: &Features) -> &str {
    features.values().next().map_or("", |fv| fv.extractor_id.as_str())
}

fn sample(a: SampleArgs) -> Result<(), CliError> {
    if !(a.interval_m.is_finite() && a.interval_m > 0.0) {
        return Err(CliError::Usage(format!("--interval-m must be positive, got {}", a.interval_m)));
    }
    let side = match a.side {
        Side::Right => CameraSide::Right,
        Side::Left => CameraSide::Left,
    };
    let mut segments = parse_network(&read_text(&a.network)?)?;
    segments.sort_by(|x, y| x.segment_id().cmp(y.segment_id()));
    let mut points = Vec::new();
    for seg in &segments {
        points.extend(sample_points(seg, a.interval_m, side)?);
    }
    write_text(&a.out, &points_csv(&points))?;
    println!("{} points on {} segments", points.len(), segments.len());
    Ok(())
}

fn codebook(a: CodebookArgs) -> Result<(), CliError> {
    if a.k < 2 || a.per_image == 0 {
        return Err(CliError::Usage("--k must be at least 2 and --per-image at least 1".into()));
    }
    let images = read_manifest(&a.manifest)?;
    let sample = sample_descriptors(&a.manifest, &images, a.per_image, a.seed)?;
    let cb = build_codebook(&sample, a.k, a.seed)?;
    cb.save(&a.out)?;
    println!("{}: {} words from {} descriptors (inertia {:.4})", cb.extractor_id, cb.k(), sample.len(), cb.inertia(&sample));
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<(), CliError> {
    let (extractor_id, vectors): (String, Vec<FeatureVector>) = match (a.import, a.manifest, a.codebook) {
        (Some(path), _, _) => {
            let vectors = import_embeddings(&path)?;
            let id = vectors
                .first()
                .map(|v| v.extractor_id.clone())
                .ok_or_else(|| CliError::Data(format!("{}: no embedding rows", path.display())))?;
            (id, vectors)
        }
        (None, Some(manifest), Some(codebook)) => {
            let cb = Codebook::load(&codebook)?;
            let images = read_manifest(&manifest)?;
            (cb.extractor_id.clone(), extract_manifest(&manifest, &images, &cb)?)
        }
        _ => return Err(CliError::Usage("give --manifest and --codebook, or --import".into())),
    };
    write_features(&a.out, &extractor_id, &vectors)?;
    println!("{} vectors ({extractor_id})", vectors.len());
    Ok(())
}

fn split(a: SplitArgs) -> Result<(), CliError> {
    let labels = resolve_labels(&read_labels(&a.labels)?, a.task);
    let split = stratified_split(&labels, a.per_class_dev, a.per_class_test, a.seed)?;
    split.save(&a.out)?;
    println!(
        "{}: train {} / dev {} / test {}",
        a.task,
        split.train_ids.len(),
        split.dev_ids.len(),
        split.test_ids.len()
    );
    Ok(())
}

fn model_label(extractor_id: &str) -> String {
    format!("{extractor_id}+svm")
}

/// Metrics CSV: MSE per subset for quality, P/R/F1 per subset otherwise.
fn metrics_csv(task: Task, label: &str, reports: &[(Subset, Option<&MetricsReport>)]) -> String {
    if task.is_binary() {
        let rows: Vec<(String, &MetricsReport)> = reports
            .iter()
            .filter_map(|(s, r)| r.map(|r| (format!("{label}/{}", s.as_str()), r)))
            .collect();
        classification_table(&rows)
    } else {
        let mut cols = [None; 3];
        for (s, r) in reports {
            let i = Subset::ALL.iter().position(|x| x == s).expect("known subset");
            cols[i] = r.and_then(|r| r.mse);
        }
        mse_table(&[(label.to_string(), cols)])
    }
}

fn print_reports(task: Task, label: &str, reports: &[(Subset, Option<&MetricsReport>)]) {
    let rows: Vec<(String, &MetricsReport)> = reports
        .iter()
        .filter_map(|(s, r)| r.map(|r| (format!("{label}/{}", s.as_str()), r)))
        .collect();
    print!("{}", classification_table(&rows));
    if !task.is_binary() {
        print!("{}", metrics_csv(task, label, reports));
    }
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    if !(a.lambda.is_finite() && a.lambda > 0.0) || a.epochs == 0 {
        return Err(CliError::Usage("--lambda must be positive and --epochs at least 1".into()));
    }
    if let Some(bad) = a.lambda_grid.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(CliError::Usage(format!("--lambda-grid values must be positive, got {bad}")));
    }
    let labels = resolve_labels(&read_labels(&a.labels)?, a.task);
    let features = load_features(&a.features)?;
    let split = Split::load(&a.split)?;
    let extractor_id = extractor_of(&features).to_string();
    let normalize = a.normalize.unwrap_or_else(|| Normalize::default_for(&extractor_id));
    let hyper = Hyperparams { lambda: a.lambda, epochs: a.epochs, seed: a.seed, normalize };
    let outcome = train_task(a.task, &labels, &features, &hyper, &split, &a.lambda_grid)?;
    save_model(&outcome.model, &a.out)?;

    for (lambda, r) in &outcome.dev_search {
        eprintln!("dev lambda={lambda:e}: f1={:.4} mse={}", r.f1, r.mse.map_or("-".into(), |m| format!("{m:.4}")));
    }
    println!("{} model, lambda={:e}, normalize={normalize}", a.task, outcome.lambda);
    let label = model_label(&extractor_id);
    let reports: Vec<(Subset, Option<&MetricsReport>)> = Subset::ALL.iter().map(|&s| (s, outcome.report(s))).collect();
    print_reports(a.task, &label, &reports);
    if let Some(path) = a.metrics {
        write_text(&path, &metrics_csv(a.task, &label, &reports))?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let labels = resolve_labels(&read_labels(&a.labels)?, model.task);
    let features = load_features(&a.features)?;
    let split = Split::load(&a.split)?;
    let subset: Subset = a.subset.into();
    let report = evaluate_model(&model, &labels, &features, split.ids(subset))?
        .ok_or_else(|| CliError::Data(format!("the {} subset has no labeled images", subset.as_str())))?;
    let label = model_label(&model.extractor_id);
    let reports = [(subset, Some(&report))];
    print_reports(model.task, &label, &reports);
    if let Some(path) = a.out {
        write_text(&path, &metrics_csv(model.task, &label, &reports))?;
    }
    Ok(())
}

fn screen(a: ScreenArgs) -> Result<(), CliError> {
    let images = read_manifest(&a.manifest)?;
    let model = load_model(&a.model)?;
    let features = load_features(&a.features)?;
    let s = screen_qualified(&images, &model, &features)?;
    write_manifest(&a.out, &s.qualified)?;
    if let Some(path) = a.predictions {
        write_text(&path, &predictions_csv(&s.predictions))?;
    }
    println!(
        "qualified {} / rejected {} ({:.1}% street images)",
        s.qualified.len(),
        s.rejected.len(),
        100.0 * s.rejected_share()
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Result<(), CliError> {
    let qualified = read_manifest(&a.manifest)?;
    let quality = load_model(&a.quality_model)?;
    let continuity = load_model(&a.continuity_model)?;
    let features = load_features(&a.features)?;
    let (scores, predictions) = score_segments(&qualified, &quality, &continuity, &features)?;
    write_scores(&a.out, &scores)?;
    if let Some(path) = a.predictions {
        write_text(&path, &predictions_csv(&predictions))?;
    }
    println!("{} segments scored from {} images", scores.len(), qualified.len());
    Ok(())
}

fn bins(edges: Vec<f64>, default: BinSpec, flag: &str) -> Result<BinSpec, CliError> {
    if edges.is_empty() {
        return Ok(default);
    }
    BinSpec::new(edges).map_err(|e| CliError::Usage(format!("{flag}: {e}")))
}

fn map(a: MapArgs) -> Result<(), CliError> {
    let bins = MapBins {
        quality: bins(a.quality_bins, BinSpec::quality_default(), "--quality-bins")?,
        continuity: bins(a.continuity_bins, BinSpec::continuity_default(), "--continuity-bins")?,
    };
    let scores = read_scores(&a.scores)?;
    let segments = parse_network(&read_text(&a.network)?)?;
    write_text(&a.out, &export_geojson(&scores, &segments, &bins)?)?;
    println!("{} features", scores.len());
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<(), CliError> {
    let scores = read_scores(&a.scores)?;
    let surveys = read_survey(&a.survey)?;
    let text = validation_csv(&validate_against_survey(&scores, &surveys)?);
    print!("{text}");
    if let Some(path) = a.out {
        write_text(&path, &text)?;
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let config = labelsvc::Config {
        listen: a.listen,
        manifest: a.manifest,
        labels: a.labels,
        models: a.models,
        features: a.features,
        ui_dir: a.ui_dir,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(labelsvc::serve(config))?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    if a.n_images == 0 || a.size < 16 || !(0.0..=1.0).contains(&a.label_noise) {
        return Err(CliError::Usage("--n-images >= 1, --size >= 16 and --label-noise in [0, 1] required".into()));
    }
    let params = SynthParams {
        n_images: a.n_images,
        seed: a.seed,
        width: a.size,
        height: a.size,
        label_noise: a.label_noise,
        ..SynthParams::default()
    };
    let corpus = generate(&a.out, &params)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in corpus.truth.values() {
        *counts.entry(if t.qualified { "building" } else { "street" }).or_default() += 1;
    }
    println!(
        "{} images ({} building, {} street) on {} segments in {}",
        corpus.images.len(),
        counts.get("building").unwrap_or(&0),
        counts.get("street").unwrap_or(&0),
        corpus.segments.len(),
        corpus.dir.display()
    );
    Ok(())
}
