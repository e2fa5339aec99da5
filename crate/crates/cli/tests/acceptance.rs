//! Acceptance suite: one PASS/FAIL line per criterion, each with its own
//! runtime budget. Exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand_like::Gen;
use streetscape::dataset::{read_labels, resolve_labels, Split, Task};
use streetscape::features::{by_image, import_embeddings};
use streetscape::geo::{haversine_m, sample_points, CameraSide, LonLat, StreetSegment};
use streetscape::metrics::{confusion, f1_from_pr, mse, prf1, spearman, ConfusionCounts};
use streetscape::model::{
    hinge_loss, hinge_subgradient, load_model, save_model, train_binary, Hyperparams, Normalize,
};
use streetscape::pipeline::{evaluate_model, validate_against_survey, ScoreFeature, SegmentScore, SurveyRecord};

/// Small helpers over the crate's seeded generator.
mod rand_like {
    use streetscape::rng::SeededRng;

    pub struct Gen(pub SeededRng);

    impl Gen {
        pub fn new(seed: u64) -> Self {
            Gen(SeededRng::new(seed))
        }

        pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
            lo + (hi - lo) * self.0.unit()
        }

        pub fn int(&mut self, lo: i64, hi_inclusive: i64) -> i64 {
            lo + self.0.below((hi_inclusive - lo + 1) as u64) as i64
        }

        pub fn normal(&mut self) -> f64 {
            // Box–Muller
            let u1 = self.0.unit().max(f64::MIN_POSITIVE);
            let u2 = self.0.unit();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        }
    }
}

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- oracles

fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn brute_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
}

fn brute_spearman(a: &[f64], b: &[f64]) -> f64 {
    brute_pearson(&brute_ranks(a), &brute_ranks(b))
}

// ---------------------------------------------------------------- criteria

fn published_f1_rows() -> Outcome {
    // (precision %, recall %, printed F1 %) for the three qualification rows
    let rows = [("SIFTHist", 45.06, 71.28, 55.22), ("AlexNet", 48.23, 85.94, 61.78), ("GoogLeNet", 48.13, 86.31, 61.79)];
    let mut worst: f64 = 0.0;
    for (name, p, r, f1) in rows {
        let got = 100.0 * f1_from_pr(p / 100.0, r / 100.0);
        worst = worst.max((got - f1).abs());
        check((got - f1).abs() <= 0.02, || format!("{name}: {got:.4} vs printed {f1}"))?;
    }
    Ok(format!("3 rows, max |ΔF1| = {worst:.4} pp"))
}

fn formula_oracles() -> Outcome {
    let mut g = Gen::new(2024);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let n = g.int(3, 20) as usize;
        // small integer ranges force plenty of ties
        let a: Vec<f64> = (0..n).map(|_| g.int(0, 5) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| g.int(0, 5) as f64).collect();
        let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
        if !constant(&a) && !constant(&b) {
            let got = spearman(&a, &b).map_err(|e| format!("case {case}: {e}"))?;
            let want = brute_spearman(&a, &b);
            worst = worst.max((got - want).abs());
            check((got - want).abs() <= 1e-12, || format!("spearman case {case}: {got} vs {want}"))?;
        }

        let y: Vec<f64> = (0..n).map(|_| g.uniform(-10.0, 10.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| g.uniform(-10.0, 10.0)).collect();
        let mut acc = 0.0;
        for i in 0..n {
            acc += (y[i] - t[i]).powi(2);
        }
        let got = mse(&y, &t).map_err(|e| e.to_string())?;
        worst = worst.max((got - acc / n as f64).abs());
        check((got - acc / n as f64).abs() <= 1e-12, || format!("mse case {case}"))?;

        let yt: Vec<i64> = (0..n).map(|_| g.int(0, 1)).collect();
        let yp: Vec<i64> = (0..n).map(|_| g.int(0, 1)).collect();
        let c = confusion(&yt, &yp).map_err(|e| e.to_string())?;
        let count = |a: i64, b: i64| yt.iter().zip(&yp).filter(|(x, y)| **x == a && **y == b).count();
        let (tp, fp, fn_, tn) = (count(1, 1), count(0, 1), count(1, 0), count(0, 0));
        check(c == ConfusionCounts { tp, fp, fn_, tn, p: tp + fn_ }, || format!("confusion case {case}: {c:?}"))?;

        let (p, r, f) = prf1(&c);
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (wp, wr) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
        let wf = if wp + wr == 0.0 { 0.0 } else { 2.0 * wp * wr / (wp + wr) };
        worst = worst.max((p - wp).abs()).max((r - wr).abs()).max((f - wf).abs());
        check((p - wp).abs() <= 1e-12 && (r - wr).abs() <= 1e-12 && (f - wf).abs() <= 1e-12, || {
            format!("prf1 case {case}: {:?} vs {:?}", (p, r, f), (wp, wr, wf))
        })?;
    }
    Ok(format!("1000 cases x 4 formulas, max deviation {worst:.1e}"))
}

fn sampling_law() -> Outcome {
    let mut g = Gen::new(99);
    let mut points = 0;
    for case in 0..500 {
        let mut chain = vec![LonLat { lon: g.uniform(-170.0, 170.0), lat: g.uniform(-60.0, 60.0) }];
        for _ in 0..g.int(1, 8) {
            let last = *chain.last().unwrap();
            chain.push(LonLat { lon: last.lon + g.uniform(-0.02, 0.02), lat: last.lat + g.uniform(-0.02, 0.02) });
        }
        let length: f64 = chain.windows(2).map(|w| haversine_m(w[0], w[1])).sum();
        let seg = StreetSegment::new(format!("s{case}"), chain).map_err(|e| e.to_string())?;
        let pts = sample_points(&seg, 200.0, CameraSide::Right).map_err(|e| e.to_string())?;
        let expected = (length / 200.0).floor() as usize + 1;
        check(pts.len() == expected, || format!("case {case}: {} points, expected {expected} (L={length})", pts.len()))?;
        for (i, p) in pts.iter().enumerate() {
            check(p.offset_m == i as f64 * 200.0, || format!("case {case}: offset {} at index {i}", p.offset_m))?;
        }
        points += pts.len();
    }
    Ok(format!("500 polylines, {points} points"))
}

fn blobs() -> (Vec<Vec<f64>>, Vec<i64>) {
    let mut g = Gen::new(11);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (label, c) in [(1, 2.0), (0, -2.0)] {
        for _ in 0..50 {
            xs.push(vec![c + 0.1 * g.normal(), c + 0.1 * g.normal()]);
            ys.push(label);
        }
    }
    (xs, ys)
}

fn svm_fixture() -> Outcome {
    let (xs, ys) = blobs();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let hyper = Hyperparams { epochs: 30, ..Hyperparams::new(Normalize::None) };
    let model = train_binary(Task::Qualification, "blobs", &refs, &ys, &hyper).map_err(|e| e.to_string())?;
    let correct = xs.iter().zip(&ys).filter(|(x, &y)| model.predict(x).unwrap() == y).count();
    check(correct == xs.len(), || format!("training accuracy {correct}/{}", xs.len()))?;

    let mut g = Gen::new(5);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 10 {
        let w: Vec<f64> = (0..3).map(|_| g.uniform(-2.0, 2.0)).collect();
        let x: Vec<f64> = (0..3).map(|_| g.uniform(-2.0, 2.0)).collect();
        let b = g.uniform(-0.5, 0.5);
        let y = if g.int(0, 1) == 1 { 1.0 } else { -1.0 };
        let margin = y * (w.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>() + b);
        if (margin - 1.0).abs() < 1e-4 {
            continue;
        }
        let (gw, gb) = hinge_subgradient(&w, b, &x, y);
        let h = 1e-5;
        for j in 0..3 {
            let (mut plus, mut minus) = (w.clone(), w.clone());
            plus[j] += h;
            minus[j] -= h;
            let fd = (hinge_loss(&plus, b, &x, y) - hinge_loss(&minus, b, &x, y)) / (2.0 * h);
            worst = worst.max((fd - gw[j]).abs());
        }
        let fd = (hinge_loss(&w, b + h, &x, y) - hinge_loss(&w, b - h, &x, y)) / (2.0 * h);
        worst = worst.max((fd - gb).abs());
        checked += 1;
    }
    check(worst <= 1e-6, || format!("finite-difference gap {worst:e}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("blobs.fsvm");
    save_model(&model, &path).map_err(|e| e.to_string())?;
    let back = load_model(&path).map_err(|e| e.to_string())?;
    let mut gap: f64 = 0.0;
    for x in &xs {
        gap = gap.max((model.decision_values(x).unwrap()[0] - back.decision_values(x).unwrap()[0]).abs());
    }
    check(gap <= 1e-12, || format!("round-trip decision gap {gap:e}"))?;
    Ok(format!("accuracy 100%, subgradient gap {worst:.1e}, round-trip gap {gap:.1e}"))
}

// ---------------------------------------------------------------- CLI chain

fn cli(args: &[&str], cwd: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_streetscape"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    if !out.status.success() {
        return Err(format!("`streetscape {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Run `synth → sample → codebook → features → split → train` for all three
/// tasks in `dir`, then `screen → score → map` when `full` is set.
fn run_chain(dir: &Path, full: bool) -> Result<(), String> {
    let seeded = |a: &[&str]| cli(a, dir).map(|_| ());
    seeded(&["synth", "--out", "corpus", "--seed", "7"])?;
    seeded(&["sample", "--network", "corpus/network.geojson", "--out", "points.csv"])?;
    seeded(&["codebook", "--manifest", "corpus/images.csv", "--out", "codebook.json", "--k", "64", "--per-image", "16", "--seed", "1"])?;
    seeded(&["features", "--manifest", "corpus/images.csv", "--codebook", "codebook.json", "--out", "features.csv"])?;
    for task in ["qualification", "quality", "continuity"] {
        let split = format!("split-{task}.json");
        let model = format!("{task}.fsvm");
        let metrics = format!("metrics-{task}.csv");
        // 40/60 per class scaled down to the 400-image corpus
        seeded(&["split", "--labels", "corpus/labels.jsonl", "--task", task, "--out", &split, "--per-class-dev", "10", "--per-class-test", "15", "--seed", "5"])?;
        seeded(&["train", "--task", task, "--labels", "corpus/labels.jsonl", "--features", "features.csv", "--split", &split, "--out", &model, "--seed", "3", "--lambda-grid", "1e-4,1e-3,1e-2", "--metrics", &metrics])?;
    }
    if full {
        seeded(&["screen", "--manifest", "corpus/images.csv", "--model", "qualification.fsvm", "--features", "features.csv", "--out", "qualified.csv"])?;
        seeded(&["score", "--manifest", "qualified.csv", "--quality-model", "quality.fsvm", "--continuity-model", "continuity.fsvm", "--features", "features.csv", "--out", "scores.csv", "--predictions", "predictions.csv"])?;
        seeded(&["map", "--scores", "scores.csv", "--network", "corpus/network.geojson", "--out", "map.geojson"])?;
    }
    Ok(())
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    run_chain(dir, false)?;
    let records = read_labels(&dir.join("corpus/labels.jsonl")).map_err(|e| e.to_string())?;
    let features = by_image(import_embeddings(&dir.join("features.csv")).map_err(|e| e.to_string())?);
    let mut detail = Vec::new();

    for (task, name) in [(Task::Quality, "quality"), (Task::Qualification, "qualification")] {
        let split_path = dir.join(format!("split-{name}.json"));
        let shown = cli(
            &["evaluate", "--model", &format!("{name}.fsvm"), "--labels", "corpus/labels.jsonl", "--features", "features.csv", "--split", split_path.to_str().unwrap(), "--subset", "test"],
            dir,
        )?;
        let labels = resolve_labels(&records, task);
        let split = Split::load(&split_path).map_err(|e| e.to_string())?;
        let model = load_model(&dir.join(format!("{name}.fsvm"))).map_err(|e| e.to_string())?;
        let report = evaluate_model(&model, &labels, &features, &split.test_ids)
            .map_err(|e| e.to_string())?
            .ok_or("empty test set")?;
        let test: Vec<&String> = split.test_ids.iter().filter(|id| labels.contains_key(*id)).collect();
        match task {
            Task::Quality => {
                let train: Vec<f64> = split.train_ids.iter().filter_map(|id| labels.get(id)).map(|&v| v as f64).collect();
                let mean = train.iter().sum::<f64>() / train.len() as f64;
                let truth: Vec<f64> = test.iter().map(|id| labels[*id] as f64).collect();
                let baseline = mse(&truth, &vec![mean; truth.len()]).map_err(|e| e.to_string())?;
                let got = report.mse.ok_or("quality report without mse")?;
                check(shown.contains(&format!("{got:.3}")), || format!("evaluate output disagrees: {shown}"))?;
                check(got < baseline, || format!("test MSE {got:.4} not below constant-mean {baseline:.4}"))?;
                detail.push(format!("quality MSE {got:.3} < baseline {baseline:.3}"));
            }
            _ => {
                let truth: Vec<i64> = test.iter().map(|id| labels[*id]).collect();
                let c = confusion(&truth, &vec![1; truth.len()]).map_err(|e| e.to_string())?;
                let baseline = prf1(&c).2;
                check(shown.contains(&format!("{:.2}", 100.0 * report.f1)), || format!("evaluate output disagrees: {shown}"))?;
                check(report.f1 > baseline, || format!("F1 {:.4} not above always-positive {baseline:.4}", report.f1))?;
                detail.push(format!("qualification F1 {:.3} > baseline {baseline:.3}", report.f1));
            }
        }
    }
    Ok(detail.join(", "))
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_chain(a.path(), true)?;
    run_chain(b.path(), true)?;
    let mut sizes = Vec::new();
    for file in ["predictions.csv", "map.geojson", "scores.csv", "points.csv", "features.csv"] {
        let read = |d: &Path| std::fs::read(d.join(file)).map_err(|e| format!("{file}: {e}"));
        let (x, y) = (read(a.path())?, read(b.path())?);
        check(x == y, || format!("{file} differs between runs"))?;
        sizes.push(format!("{file} {}B", x.len()));
    }
    let map: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("map.geojson")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let scored = std::fs::read_to_string(a.path().join("scores.csv")).map_err(|e| e.to_string())?.lines().count() - 1;
    let features = map["features"].as_array().map_or(0, Vec::len);
    check(features == scored, || format!("{features} map features for {scored} scored segments"))?;
    Ok(format!("byte-identical: {}", sizes.join(", ")))
}

fn validation_path() -> Outcome {
    let mut g = Gen::new(56);
    let mut scores = Vec::new();
    let mut surveys = Vec::new();
    for i in 0..56 {
        let id = format!("seg-{i:02}");
        let quality = 1.0 + 3.0 * g.0.unit();
        let share = g.0.unit();
        scores.push(SegmentScore { segment_id: id.clone(), quality_mean: Some(quality), continuity_share: Some(share), n_images: 5 });
        // ratings rise with the machine score, jittered enough to swap nearby ranks
        for _ in 0..g.int(10, 15) {
            let raw = 1.0 + (quality - 1.0) * 4.0 / 3.0 + 0.8 * g.normal();
            surveys.push(SurveyRecord::new(id.clone(), raw.round().clamp(1.0, 5.0) as i64));
        }
    }
    // a survey-only segment must not change anything
    surveys.push(SurveyRecord::new("unscored", 5));

    let reports = validate_against_survey(&scores, &surveys).map_err(|e| e.to_string())?;
    let quality = reports.iter().find(|r| r.feature == ScoreFeature::Quality).ok_or("no quality report")?;
    let mut sums: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for s in &surveys {
        let e = sums.entry(s.segment_id.as_str()).or_default();
        e.0 += s.rating as f64;
        e.1 += 1.0;
    }
    let machine: Vec<f64> = scores.iter().map(|s| s.quality_mean.unwrap()).collect();
    let survey: Vec<f64> = scores.iter().map(|s| sums[s.segment_id.as_str()]).map(|(sum, n)| sum / n).collect();
    let want = brute_spearman(&machine, &survey);
    check(quality.n_segments == 56, || format!("n_segments {}", quality.n_segments))?;
    check((quality.spearman_r - want).abs() <= 0.05, || format!("r {} vs brute force {want}", quality.spearman_r))?;
    Ok(format!("r = {:.4}, brute force {want:.4}, gap {:.1e}", quality.spearman_r, (quality.spearman_r - want).abs()))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("metric-consistency fixtures", Duration::from_secs(1), published_f1_rows),
        ("formula oracles", Duration::from_secs(10), formula_oracles),
        ("sampling law", Duration::from_secs(5), sampling_law),
        ("svm fixture", Duration::from_secs(10), svm_fixture),
        ("end-to-end synthetic corpus", Duration::from_secs(300), end_to_end),
        ("determinism", Duration::from_secs(300), determinism),
        ("validation path", Duration::from_secs(1), validation_path),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|d| {
            if elapsed <= budget {
                Ok(d)
            } else {
                Err(format!("{d}; took {elapsed:.2?}, budget {budget:.0?}"))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{elapsed:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{elapsed:.2?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
