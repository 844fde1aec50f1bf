use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use radlabel::layout::{Layout, SetId};
use radlabel::{generate_synthetic, label_corpus, run_pipeline, PipelineConfig, PipelineError, SynthOptions};
use radlabel_core::clustering::read_labeling;
use radlabel_core::fusion::FusionMethod;
use radlabel_core::matrix::Source;

const ALL: [Source; 3] = [Source::Diagnosis, Source::Tags, Source::Image];

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("pipeline").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_corpus(dir: &Path) {
    let opts = SynthOptions { classes: 3, per_class: 30, image_size: 32, seed: 11, ..SynthOptions::default() };
    generate_synthetic(dir, &opts).unwrap();
}

fn config(corpus: &Path, out: &Path) -> PipelineConfig {
    let json = serde_json::json!({
        "seed": 3,
        "paths": { "input": corpus, "output": out },
        "clustering": { "kappa_grid": [2, 3, 4] },
        "images": { "pca_components": 4 },
        "fusion": { "source_kappa": 3 },
        "label": { "kappa": 3 },
    });
    PipelineConfig::from_json(&json.to_string()).unwrap()
}

/// One finished run shared by the tests that only read from it.
fn fitted() -> &'static (PathBuf, PathBuf) {
    static RUN: OnceLock<(PathBuf, PathBuf)> = OnceLock::new();
    RUN.get_or_init(|| {
        let root = scratch("fitted");
        let (corpus, out) = (root.join("corpus"), root.join("out"));
        small_corpus(&corpus);
        let manifest = run_pipeline(&config(&corpus, &out)).unwrap();
        assert!(manifest.succeeded(), "{:#?}", manifest.stages);
        (corpus, out)
    })
}

#[test]
fn run_writes_every_stage_artifact() {
    let (_, out) = fitted();
    for rel in ["manifest.json", "cohort.csv", "features/tags.rnem", "features/image.rnem", "features/diagnosis.rnem", "eval/summary.csv"] {
        assert!(out.join(rel).exists(), "{rel} missing");
    }
    assert!(!out.join("FAILED").exists());
    let summary = fs::read_to_string(out.join("eval/summary.csv")).unwrap();
    for method in ["embeddings", "clusterdists", "clusterprobs"] {
        assert!(summary.contains(&format!("diagnosis+tags+image@{method}/")), "no {method} rows");
    }
}

#[test]
fn labeling_the_training_corpus_reproduces_the_fit() {
    let (corpus, out) = fitted();
    let layout = Layout::new(out);
    for method in [FusionMethod::Embeddings, FusionMethod::ClusterDists, FusionMethod::ClusterProbs] {
        let mut cfg = config(corpus, out);
        cfg.label.method = method;
        let dest = scratch(&format!("relabel-{}", method.as_str()));
        let summary = label_corpus(&cfg, corpus, &dest).unwrap();
        assert_eq!(summary.k, 3);
        let stored = read_labeling(&layout.labels(&SetId::fused(&ALL, method), &cfg.label.spec, 3)).unwrap();
        let relabeled = read_labeling(&dest.join("labels.csv")).unwrap();
        assert_eq!(relabeled, stored, "{} labels drifted", method.as_str());
    }
}

#[test]
fn unreadable_files_are_skipped_and_counted() {
    let (corpus, out) = fitted();
    let copy = scratch("with-junk");
    fs::copy(corpus.join("diagnoses.csv"), copy.join("diagnoses.csv")).unwrap();
    let dicom = copy.join("dicom");
    fs::create_dir_all(&dicom).unwrap();
    let mut n = 0;
    for e in walk(&corpus.join("dicom")) {
        let target = dicom.join(e.strip_prefix(corpus.join("dicom")).unwrap());
        fs::create_dir_all(target.parent().unwrap()).unwrap();
        fs::copy(&e, target).unwrap();
        n += 1;
    }
    fs::write(dicom.join("zz_not_dicom.dcm"), b"this is not a DICOM file").unwrap();

    let summary = label_corpus(&config(corpus, out), &copy, &copy.join("labels")).unwrap();
    assert_eq!(summary.files, n + 1);
    assert_eq!(summary.skipped.get("parse_error"), Some(&1));
    assert_eq!(summary.labeled + summary.skipped.values().sum::<usize>(), n + 1);
    let skipped = fs::read_to_string(copy.join("labels/skipped.csv")).unwrap();
    assert!(skipped.contains("zz_not_dicom.dcm"));
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn unknown_config_keys_are_rejected() {
    for json in [r#"{"seed": 1, "sede": 2}"#, r#"{"clustering": {"kappa_grd": [2, 3]}}"#, r#"{"label": {"kapa": 3}}"#] {
        assert!(matches!(PipelineConfig::from_json(json), Err(PipelineError::Config(_))), "{json} accepted");
    }
    let dir = scratch("bad-config");
    let path = dir.join("cfg.json");
    fs::write(&path, r#"{"seed": 1, "unknown": true}"#).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_radlabel")).arg("--config").arg(&path).arg("ingest").status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let root = scratch("determinism");
    let corpus = root.join("corpus");
    small_corpus(&corpus);
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = root.join(name);
        let mut cfg = config(&corpus, &out);
        cfg.fusion.methods = vec![FusionMethod::ClusterProbs];
        assert!(run_pipeline(&cfg).unwrap().succeeded());
        outputs.push(out);
    }
    let files: Vec<PathBuf> = walk(&outputs[0])
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "rnem") || p.to_string_lossy().ends_with("labels.csv"))
        .collect();
    assert!(files.len() > 10);
    for f in files {
        let rel = f.strip_prefix(&outputs[0]).unwrap();
        assert_eq!(fs::read(&f).unwrap(), fs::read(outputs[1].join(rel)).unwrap(), "{} differs", rel.display());
    }
}

#[test]
fn synth_command_writes_a_corpus() {
    let dir = scratch("synth-cli");
    let status = Command::new(env!("CARGO_BIN_EXE_radlabel"))
        .args(["synth", "--classes", "2", "--per-class", "4", "--image-size", "16", "--seed", "5", "--out"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.join("diagnoses.csv").exists());
    assert_eq!(walk(&dir.join("dicom")).len(), 8);
}
