use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use grace_cli::synth::{load_truth, synth, SyntheticSpec};
use grace_core::io::{load_manifest, read_embedding, write_embedding, write_manifest, Embedding};
use serde_json::Value;
use tempfile::TempDir;

fn grace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grace"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn grace")
}

fn ok(args: &[&str]) -> Output {
    let out = grace(args);
    assert!(
        out.status.success(),
        "grace {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn labels() -> Vec<String> {
    grace_cli::PipelineConfig::default().labels
}

fn small(categories: usize, per_category: usize) -> SyntheticSpec {
    SyntheticSpec {
        categories,
        per_category,
        ..Default::default()
    }
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn dir_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Parses `token,frame,weight` rows with plain string splitting.
fn plan_rows(path: &Path) -> Vec<(String, usize, f64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("token,frame,weight"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 3, "{l}");
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn one_sample_smoke() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    ok(&["synth", "--out", s(&data), "--categories", "1", "--per-category", "1"]);
    ok(&["align", "--manifest", s(&data.join("manifest.json")), "--out", s(&out)]);

    let files = dir_bytes(&out);
    assert_eq!(files.len(), 3, "{:?}", files.keys());
    let sum = summary(&out);
    let r = &sum["results"][0];
    assert_eq!(r["outcome"], "converged");

    let spec = SyntheticSpec::default();
    let rows = plan_rows(&out.join(r["plan_csv"].as_str().unwrap()));
    assert_eq!(rows.len(), spec.tokens * spec.frames);
    let ranking = fs::read_to_string(out.join(r["ranking_csv"].as_str().unwrap())).unwrap();
    let ranking: Vec<&str> = ranking.lines().collect();
    assert_eq!(ranking[0], "rank,frame,score");
    assert_eq!(ranking.len(), 1 + 8);
}

#[test]
fn zero_norm_token_fails_alone() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let run = synth(&small(3, 1), &labels(), &data).unwrap();
    let victim = &run.samples[1];
    let text_path = data.join(&victim.text_file);
    let Embedding::Matrix(mut m) = read_embedding(&text_path).unwrap() else {
        panic!("text file is a matrix");
    };
    m.row_mut(2).fill(0.0);
    write_embedding(&text_path, &[m.nrows(), m.ncols()], m.as_slice().unwrap()).unwrap();

    let out = tmp.path().join("out");
    ok(&["align", "--manifest", s(&run.manifest), "--out", s(&out)]);
    let sum = summary(&out);
    assert_eq!(sum["failed"], 1);
    assert_eq!(sum["converged"], 2);
    for r in sum["results"].as_array().unwrap() {
        if r["id"] == victim.id.as_str() {
            assert_eq!(r["outcome"], "failed");
            assert_eq!(r["error"]["kind"], "ZeroNormVector");
        } else {
            assert_eq!(r["outcome"], "converged");
            assert!(out.join(r["plan_csv"].as_str().unwrap()).exists());
        }
    }
}

#[test]
fn twenty_sample_plans_reverify_from_csv() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let spec = small(4, 5);
    synth(&spec, &labels(), &data).unwrap();
    let out = tmp.path().join("out");
    ok(&["align", "--manifest", s(&data.join("manifest.json")), "--out", s(&out)]);

    let sum = summary(&out);
    assert_eq!(sum["samples"], 20);
    let (l, frames) = (spec.tokens, spec.frames);
    // nine printed decimals: each entry is off by at most 5e-10
    let rounding = 5e-10;
    let mut checked = 0;
    for r in sum["results"].as_array().unwrap() {
        if r["outcome"] != "converged" {
            continue;
        }
        let rows = plan_rows(&out.join(r["plan_csv"].as_str().unwrap()));
        assert_eq!(rows.len(), l * frames);
        let mut token_sums = vec![0.0; l];
        let mut frame_sums = vec![0.0; frames];
        for (n, (_, frame, w)) in rows.iter().enumerate() {
            assert_eq!(*frame, n % frames);
            assert!(*w >= 0.0);
            token_sums[n / frames] += w;
            frame_sums[*frame] += w;
        }
        let row_v = r["row_violation"].as_f64().unwrap();
        let col_v = r["col_violation"].as_f64().unwrap();
        let row_dev: f64 = token_sums.iter().map(|v| (v - 1.0 / l as f64).abs()).sum();
        let col_dev: f64 = frame_sums.iter().map(|v| (v - 1.0 / frames as f64).abs()).sum();
        assert!(row_dev <= row_v + (l * frames) as f64 * rounding, "{row_dev} vs {row_v}");
        assert!(col_dev <= col_v + (l * frames) as f64 * rounding, "{col_dev} vs {col_v}");
        assert!(row_v <= 1e-6 && col_v <= 1e-6);
        checked += 1;
    }
    assert_eq!(checked, 20);
}

#[test]
fn synth_is_byte_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["synth", "--out", s(dir), "--per-category", "4", "--seed", "11"]);
    }
    let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    // manifest paths are relative, so whole directories compare equal
    assert!(fa == fb);

    let c = tmp.path().join("c");
    ok(&["synth", "--out", s(&c), "--per-category", "4", "--seed", "12"]);
    assert!(dir_bytes(&c) != fa);
}

#[test]
fn seventy_records_all_load() {
    let tmp = TempDir::new().unwrap();
    let run = synth(&small(7, 10), &labels(), tmp.path()).unwrap();
    let samples = load_manifest(&run.manifest).unwrap();
    assert_eq!(samples.len(), 70);
    for m in &samples {
        let Embedding::Tensor(v) = read_embedding(&m.visual_file).unwrap() else {
            panic!("visual is rank 4");
        };
        assert_eq!(v.dims().as_array(), m.dims.visual);
        assert_eq!(read_embedding(&m.text_file).unwrap().shape(), m.dims.text.to_vec());
    }
    assert_eq!(load_truth(&run.truth).unwrap().len(), 70);
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

#[test]
fn noiseless_category_token_is_closest_to_planted_patches() {
    let tmp = TempDir::new().unwrap();
    let spec = SyntheticSpec {
        per_category: 3,
        planted: 1,
        sigma: 0.0,
        ..Default::default()
    };
    let run = synth(&spec, &labels(), tmp.path()).unwrap();
    let pos = spec.emotion_token();
    for (m, truth) in load_manifest(&run.manifest).unwrap().iter().zip(&run.planted) {
        let Embedding::Matrix(text) = read_embedding(&m.text_file).unwrap() else {
            panic!()
        };
        let Embedding::Tensor(visual) = read_embedding(&m.visual_file).unwrap() else {
            panic!()
        };
        let token = text.row(pos).to_vec();
        let planted = truth.planted_frames[0];
        let mut best = f64::INFINITY;
        let mut argmin = Vec::new();
        for t in 0..spec.frames {
            for h in 0..spec.rows {
                for w in 0..spec.cols {
                    let c = cosine_distance(&token, visual.cell(t, h, w));
                    if c < best - 1e-12 {
                        best = c;
                        argmin.clear();
                    }
                    if (c - best).abs() <= 1e-12 {
                        argmin.push((t, h, w));
                    }
                }
            }
        }
        assert!(best.abs() < 1e-12, "{best}");
        let expected: Vec<_> = (0..spec.rows)
            .flat_map(|h| (0..spec.cols).map(move |w| (h, w)))
            .filter(|&(h, w)| spec.is_expressive_cell(h, w))
            .map(|(h, w)| (planted, h, w))
            .collect();
        assert_eq!(argmin, expected, "{}", m.id);
    }
}

fn read_fused(path: &Path) -> Vec<(String, String, Vec<f64>)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..2], ["id", "label"]);
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), header.len());
            (f[0].into(), f[1].into(), f[2..].iter().map(|v| v.parse().unwrap()).collect())
        })
        .collect()
}

#[test]
fn fused_export_has_d_coordinates() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let fused = tmp.path().join("fused.csv");
    ok(&[
        "synth", "--out", s(&data), "--categories", "1", "--per-category", "1", "--channels", "4", "--dim", "4",
    ]);
    ok(&[
        "align",
        "--manifest",
        s(&data.join("manifest.json")),
        "--out",
        s(&tmp.path().join("out")),
        "--export-fused",
        s(&fused),
    ]);
    let rows = read_fused(&fused);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].0, "happiness-000");
    assert_eq!(rows[0].2.len(), 4);
}

/// With uniform token mass the fused vector is Σ_j b_j W_j x_j; rebuilt from
/// the raw features and the saliency CSV.
#[test]
fn fused_vector_matches_weighted_patch_mean() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let spec = SyntheticSpec {
        per_category: 2,
        ..Default::default()
    };
    synth(&spec, &labels(), &data).unwrap();
    let manifest = data.join("manifest.json");
    let fused = tmp.path().join("fused.csv");
    let sal = tmp.path().join("sal");
    ok(&["align", "--manifest", s(&manifest), "--out", s(&tmp.path().join("out")), "--export-fused", s(&fused)]);
    ok(&["saliency", "--manifest", s(&manifest), "--out", s(&sal)]);

    let samples = load_manifest(&manifest).unwrap();
    let rows = read_fused(&fused);
    assert_eq!(rows.len(), samples.len());
    for (m, (id, label, f)) in samples.iter().zip(&rows) {
        assert_eq!((&m.id, &m.label), (id, label));
        let Embedding::Tensor(x) = read_embedding(&m.visual_file).unwrap() else {
            panic!()
        };
        let text = fs::read_to_string(sal.join(format!("{id}.saliency.csv"))).unwrap();
        let n = spec.frames * spec.rows * spec.cols;
        let mut expected = vec![0.0; spec.channels];
        for (j, line) in text.lines().skip(1).enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let (t, h, w): (usize, usize, usize) = (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap());
            assert_eq!(j, (t * spec.rows + h) * spec.cols + w);
            let weight: f64 = f[3].parse().unwrap();
            for (e, v) in expected.iter_mut().zip(x.cell(t, h, w)) {
                *e += weight * v / n as f64;
            }
        }
        for (a, b) in f.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-7, "{id}: {a} vs {b}");
        }
    }
}

#[test]
fn removing_a_sample_leaves_others_unchanged() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let run = synth(&small(2, 3), &labels(), &data).unwrap();
    let full = tmp.path().join("full");
    ok(&["align", "--manifest", s(&run.manifest), "--out", s(&full), "--jobs", "3"]);

    let samples = load_manifest(&run.manifest).unwrap();
    let dropped = samples[2].id.clone();
    let partial_manifest = tmp.path().join("partial.json");
    let kept: Vec<_> = samples.iter().filter(|m| m.id != dropped).cloned().collect();
    write_manifest(&partial_manifest, &kept).unwrap();
    let partial = tmp.path().join("partial");
    ok(&["align", "--manifest", s(&partial_manifest), "--out", s(&partial), "--jobs", "1"]);

    let (before, after) = (dir_bytes(&full), dir_bytes(&partial));
    for (name, bytes) in &after {
        if name == Path::new("summary.json") {
            continue;
        }
        assert_eq!(before.get(name), Some(bytes), "{}", name.display());
    }
    assert_eq!(before.len(), after.len() + 2);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(grace(&["--help"]).status.code(), Some(0));
    assert_eq!(grace(&["--version"]).status.code(), Some(0));
    assert_eq!(grace(&["align", "--nope"]).status.code(), Some(1));
    assert_eq!(grace(&["align", "--out", s(tmp.path())]).status.code(), Some(1));

    let bad_config = tmp.path().join("bad.json");
    fs::write(&bad_config, r#"{"sinkhorn": {"lambda": 0.1, "speed": 2}}"#).unwrap();
    let missing = tmp.path().join("missing.json");
    assert_eq!(
        grace(&["align", "--config", s(&bad_config), "--manifest", s(&missing), "--out", s(tmp.path())])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(grace(&["align", "--manifest", s(&missing), "--out", s(tmp.path())]).status.code(), Some(2));
    assert_eq!(grace(&["align", "--lambda=-1", "--manifest", s(&missing), "--out", s(tmp.path())]).status.code(), Some(1));

    let data = tmp.path().join("data");
    ok(&["synth", "--out", s(&data), "--categories", "1", "--per-category", "2"]);
    let manifest = data.join("manifest.json");
    let o = tmp.path().join("o");
    let starved = ["align", "--manifest", s(&manifest), "--out", s(&o), "--max-iter", "1"];
    assert_eq!(grace(&starved).status.code(), Some(0));
    let mut strict = starved.to_vec();
    strict.push("--strict");
    assert_eq!(grace(&strict).status.code(), Some(3));
    assert_eq!(summary(&o)["not_converged"], 2);
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--out", s(&data), "--categories", "1", "--per-category", "1"]);
    let manifest = data.join("manifest.json");
    let config = tmp.path().join("config.json");
    fs::write(
        &config,
        format!(
            r#"{{"key_frames": 5, "paths": {{"manifest": {:?}}}, "sinkhorn": {{"lambda": 0.5}}}}"#,
            s(&manifest)
        ),
    )
    .unwrap();
    let ranking = |out: &Path| {
        let text = fs::read_to_string(out.join("happiness-000.ranking.csv")).unwrap();
        text.lines().count() - 1
    };

    let from_file = tmp.path().join("file");
    ok(&["align", "--config", s(&config), "--out", s(&from_file)]);
    assert_eq!(ranking(&from_file), 5);
    let flagged = tmp.path().join("flag");
    ok(&["align", "--config", s(&config), "--out", s(&flagged), "--key-frames", "2"]);
    assert_eq!(ranking(&flagged), 2);

    // λ from the file reaches the solver unless a flag replaces it
    let cost = |out: &Path| summary(out)["results"][0]["transport_cost"].as_f64().unwrap();
    let lambda_flag = tmp.path().join("lambda");
    ok(&["align", "--config", s(&config), "--out", s(&lambda_flag), "--lambda", "0.5"]);
    assert_eq!(cost(&from_file), cost(&lambda_flag));
    let default_lambda = tmp.path().join("default");
    ok(&["align", "--manifest", s(&manifest), "--out", s(&default_lambda)]);
    assert!(cost(&from_file) != cost(&default_lambda));
}

#[test]
fn report_writes_spans_from_plans() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--out", s(&data), "--categories", "1", "--per-category", "1"]);
    let manifest = data.join("manifest.json");
    let out = tmp.path().join("out");
    ok(&["align", "--manifest", s(&manifest), "--out", s(&out)]);
    ok(&["report", "--manifest", s(&manifest), "--align-dir", s(&out)]);

    let spans = fs::read_to_string(out.join("happiness-000.spans.csv")).unwrap();
    let mut lines = spans.lines();
    assert_eq!(lines.next(), Some("span,frame,weight"));
    let mut per_span: BTreeMap<String, f64> = BTreeMap::new();
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        *per_span.entry(f[0].into()).or_default() += f[2].parse::<f64>().unwrap();
    }
    // lead 3 tokens, emotion 1, trail 2, out of 6
    let expect = [("emotion", 1.0 / 6.0), ("lead", 0.5), ("trail", 1.0 / 3.0)];
    for (name, mass) in expect {
        assert!((per_span[name] - mass).abs() < 1e-6, "{name}: {}", per_span[name]);
    }
    assert!(fs::read_to_string(out.join("happiness-000.spans.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn losses_and_refine_commands() {
    let tmp = TempDir::new().unwrap();
    let batch = tmp.path().join("batch.json");
    fs::write(
        &batch,
        r#"{"labels": [0, 1, 0, 1],
            "logits": [[1.0, -0.5], [0.2, 0.4], [2.0, 0.0], [-1.0, 1.5]],
            "visual": [[1, 0.2, 0], [0, 1, 0.3], [0.8, 0.1, 0.1], [0.1, 0.9, 0]],
            "text": [[0.9, 0, 0.1], [0.2, 1, 0], [1, 0.3, 0], [0, 0.8, 0.4]]}"#,
    )
    .unwrap();
    let out = tmp.path().join("losses.json");
    ok(&["losses", "--batch", s(&batch), "--out", s(&out), "--temperature", "0.5"]);
    let r: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    for part in ["focal", "supcon", "aux"] {
        assert!(r["gradient_check"][part].as_f64().unwrap() < 1e-4, "{part}");
    }

    let refined = ok(&["refine", "--caption", "raises eyebrows", "--categories", "surprise,fear"]);
    let v: Value = serde_json::from_slice(&refined.stdout).unwrap();
    assert_eq!(v["prompt"], "raises eyebrows\nan emotion of surprise; an emotion of fear");
    assert_eq!(grace(&["refine", "--caption", "x", "--scores", "0.1,0.2"]).status.code(), Some(1));
}

#[test]
fn eval_from_label_files() {
    let tmp = TempDir::new().unwrap();
    let gold = tmp.path().join("gold.csv");
    let pred = tmp.path().join("pred.csv");
    fs::write(&gold, "id,label\na,fear\nb,fear\nc,anger\n").unwrap();
    fs::write(&pred, "id,label\nc,anger\nb,anger\na,fear\n").unwrap();
    let out = ok(&["eval", "--gold", s(&gold), "--pred", s(&pred)]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["war"].as_f64().unwrap(), 2.0 / 3.0);
    assert_eq!(v["uar"].as_f64().unwrap(), 0.75);
    fs::write(&pred, "id,label\nc,anger\n").unwrap();
    assert_eq!(grace(&["eval", "--gold", s(&gold), "--pred", s(&pred)]).status.code(), Some(2));
}
