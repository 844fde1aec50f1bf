//! `ingest` parses the corpus and decides which files enter the pipeline;
//! `export-images` windows the accepted files to PNG and fixes the cohort
//! and its exam-level split.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use radlabel_core::dicom::{parse_file, DicomError, DicomInstance, ExtractionConfig};
use radlabel_core::image::{export_instance, ImageError, ManifestRow};
use radlabel_core::split::split_by_exam;
use radlabel_core::tags::{raw_row, BpeRules, RawTagRow};
use radlabel_core::text::accept_diagnosis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::layout::{read_csv, sha256_hex, target_row, write_bytes, write_csv, Cohort, Layout, TargetRow, UNKNOWN};
use crate::manifest::StageOutcome;

pub const PROCESSED: &str = "processed";
pub const REJECTED: &str = "rejected";
pub const FAILED: &str = "failed";

/// What happened to one input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the `dicom/` directory of the corpus.
    pub path: String,
    pub sha256: String,
    pub instance_id: String,
    pub exam_id: String,
    pub status: String,
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub instance_id: String,
    pub exam_id: String,
    pub tags: RawTagRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisRow {
    pub exam_id: String,
    pub diagnosis: String,
}

pub fn load_bpe_rules(cfg: &PipelineConfig) -> Result<BpeRules> {
    match &cfg.paths.bpe_rules {
        None => Ok(BpeRules::starter()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?;
            Ok(BpeRules::from_json(&text)?)
        }
    }
}

/// Every regular file below `root`, sorted by path.
pub fn list_files(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(PipelineError::Input(format!("{} is not a directory", root.display())));
    }
    let mut out = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| PipelineError::Io { path: root.to_owned(), message: e.to_string() })?;
        if entry.file_type().is_file() {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

pub fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

/// `exam_id → diagnosis`; the first row of a repeated exam wins.
pub fn read_diagnoses(path: &Path) -> Result<(HashMap<String, String>, usize)> {
    let rows: Vec<DiagnosisRow> = read_csv(path).map_err(|e| match e {
        PipelineError::MissingArtifact(p) => PipelineError::Input(format!("diagnoses file {} not found", p.display())),
        other => other,
    })?;
    let mut map = HashMap::new();
    let mut repeated = 0;
    for r in rows {
        if map.contains_key(&r.exam_id) {
            repeated += 1;
        } else {
            map.insert(r.exam_id, r.diagnosis);
        }
    }
    Ok((map, repeated))
}

struct Parsed {
    rel: String,
    sha256: String,
    outcome: std::result::Result<(String, String, RawTagRow), String>,
}

fn bump(counts: &mut BTreeMap<String, usize>, key: impl Into<String>) {
    *counts.entry(key.into()).or_insert(0) += 1;
}

pub fn ingest(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutcome> {
    let extraction = ExtractionConfig::from_spec(&cfg.ingest.extraction)?;
    let rules = load_bpe_rules(cfg)?;
    let dicom_root = cfg.paths.input.join("dicom");
    let files = list_files(&dicom_root)?;
    let (diagnoses, repeated) = read_diagnoses(&cfg.paths.input.join("diagnoses.csv"))?;
    let mut out = StageOutcome::default();
    if repeated > 0 {
        out.warn(format!("{repeated} repeated exam rows in diagnoses.csv ignored"));
    }

    let parsed: Vec<Parsed> = files
        .par_iter()
        .map(|p| {
            let rel = relative(&dicom_root, p);
            match fs::read(p) {
                Err(e) => Parsed { rel, sha256: String::new(), outcome: Err(format!("read_error: {e}")) },
                Ok(bytes) => Parsed {
                    rel,
                    sha256: sha256_hex(&bytes),
                    outcome: parse_file(&bytes, &extraction, false)
                        .map(|inst| (inst.instance_id.clone(), inst.exam_id.clone(), raw_row(&inst)))
                        .map_err(|e| format!("parse_error: {e}")),
                },
            }
        })
        .collect();

    let mut records = Vec::with_capacity(parsed.len());
    let mut rows: Vec<Option<RawTagRow>> = Vec::with_capacity(parsed.len());
    let mut seen = HashSet::new();
    for p in parsed {
        let mut rec = FileRecord {
            path: p.rel,
            sha256: p.sha256,
            instance_id: String::new(),
            exam_id: String::new(),
            status: PROCESSED.into(),
            reason: String::new(),
            detail: String::new(),
        };
        match p.outcome {
            Err(msg) => {
                let (reason, detail) = msg.split_once(": ").unwrap_or((&msg, ""));
                rec.status = FAILED.into();
                rec.reason = reason.into();
                rec.detail = detail.into();
                rows.push(None);
            }
            Ok((instance, exam, raw)) => {
                rec.instance_id = instance;
                rec.exam_id = exam;
                if !seen.insert(rec.instance_id.clone()) {
                    rec.status = REJECTED.into();
                    rec.reason = "duplicate_instance".into();
                }
                rows.push(Some(raw));
            }
        }
        records.push(rec);
    }

    let mut per_exam: HashMap<String, usize> = HashMap::new();
    for r in records.iter().filter(|r| r.status == PROCESSED) {
        *per_exam.entry(r.exam_id.clone()).or_insert(0) += 1;
    }
    for r in records.iter_mut().filter(|r| r.status == PROCESSED) {
        let files_in_exam = per_exam[&r.exam_id];
        let reason = if files_in_exam > cfg.ingest.max_files_per_exam {
            Some(("exam_too_large", format!("{files_in_exam} files")))
        } else {
            match diagnoses.get(&r.exam_id) {
                None => Some(("missing_diagnosis", String::new())),
                Some(d) if !accept_diagnosis(d) => Some(("short_diagnosis", format!("{} characters", d.trim().chars().count()))),
                Some(_) => None,
            }
        };
        if let Some((reason, detail)) = reason {
            r.status = REJECTED.into();
            r.reason = reason.into();
            r.detail = detail;
        }
    }

    let mut accepted: Vec<(RawRecord, TargetRow)> = records
        .iter()
        .zip(rows)
        .filter(|(r, _)| r.status == PROCESSED)
        .map(|(r, raw)| {
            let raw = raw.expect("processed files were parsed");
            let target = target_row(&r.instance_id, &r.exam_id, &raw, &rules);
            (RawRecord { instance_id: r.instance_id.clone(), exam_id: r.exam_id.clone(), tags: raw }, target)
        })
        .collect();
    accepted.sort_by(|a, b| (&a.0.exam_id, &a.0.instance_id).cmp(&(&b.0.exam_id, &b.0.instance_id)));

    for r in &records {
        bump(&mut out.counts, format!("files_{}", r.status));
        if !r.reason.is_empty() {
            bump(&mut out.counts, format!("{}:{}", r.status, r.reason));
        }
    }
    let unknown_modality = accepted.iter().filter(|(_, t)| t.modality == UNKNOWN).count();
    let unknown_bpe = accepted.iter().filter(|(_, t)| t.body_part == UNKNOWN).count();
    let by_rule = accepted.iter().filter(|(_, t)| t.body_part_source == "rule").count();
    out.counts.insert("body_part_from_rules".into(), by_rule);
    if unknown_modality > 0 {
        out.warn(format!("{unknown_modality} instances have no Modality; labelled {UNKNOWN}"));
    }
    if unknown_bpe > 0 {
        out.warn(format!("{unknown_bpe} instances have no BodyPartExamined and match no rule; labelled {UNKNOWN}"));
    }

    write_csv(&layout.files_csv(), &records)?;
    let mut jsonl = Vec::new();
    for (raw, _) in &accepted {
        serde_json::to_writer(&mut jsonl, raw)?;
        jsonl.push(b'\n');
    }
    write_bytes(&layout.raw_tags(), &jsonl)?;
    let targets: Vec<&TargetRow> = accepted.iter().map(|(_, t)| t).collect();
    write_csv(&layout.targets(), &targets)?;
    let mut exams: Vec<&str> = accepted.iter().map(|(r, _)| r.exam_id.as_str()).collect();
    exams.dedup();
    let diag_rows: Vec<DiagnosisRow> =
        exams.iter().map(|e| DiagnosisRow { exam_id: (*e).to_owned(), diagnosis: diagnoses[*e].clone() }).collect();
    write_csv(&layout.diagnoses(), &diag_rows)?;
    Ok(out)
}

pub fn load_raw_records(path: &Path) -> Result<Vec<RawRecord>> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_owned()));
    }
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    text.lines().filter(|l| !l.is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Manifest row for a file whose pixel data could not be decoded.
pub fn pixel_failure(instance_id: &str, exam_id: &str, err: &DicomError) -> ManifestRow {
    let reason = match err {
        DicomError::MissingPixelData => ImageError::MissingPixelData.reason(),
        _ => "pixel_decode_error",
    };
    ManifestRow {
        instance_id: instance_id.to_owned(),
        exam_id: exam_id.to_owned(),
        frame: None,
        window_center: None,
        window_width: None,
        value_ratio: None,
        shape_ratio: None,
        reject_reason: reason.to_owned(),
    }
}

pub fn export_images(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutcome> {
    let extraction = ExtractionConfig::from_spec(&cfg.ingest.extraction)?;
    let records: Vec<FileRecord> = read_csv(&layout.files_csv())?;
    let dicom_root = cfg.paths.input.join("dicom");
    let png_dir = layout.root.join("images/png");
    if png_dir.exists() {
        fs::remove_dir_all(&png_dir).map_err(|e| PipelineError::io(&png_dir, e))?;
    }
    fs::create_dir_all(&png_dir).map_err(|e| PipelineError::io(&png_dir, e))?;

    let todo: Vec<&FileRecord> = records.iter().filter(|r| r.status == PROCESSED).collect();
    let rows: Vec<Result<ManifestRow>> = todo
        .par_iter()
        .map(|r| {
            let path = dicom_root.join(&r.path);
            let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
            let inst: DicomInstance = match parse_file(&bytes, &extraction, true) {
                Ok(i) => i,
                Err(e) => return Ok(pixel_failure(&r.instance_id, &r.exam_id, &e)),
            };
            match export_instance(&inst, &cfg.images.export) {
                Ok(img) => {
                    let p = layout.png(&img.instance_id);
                    let mut f = fs::File::create(&p).map_err(|e| PipelineError::io(&p, e))?;
                    img.write_png(&mut f)?;
                    f.flush().map_err(|e| PipelineError::io(&p, e))?;
                    Ok(ManifestRow::accepted(&img, &r.exam_id))
                }
                Err(e) => Ok(ManifestRow::rejected(&r.instance_id, &r.exam_id, &e)),
            }
        })
        .collect();
    let mut rows: Vec<ManifestRow> = rows.into_iter().collect::<Result<_>>()?;
    rows.sort_by(|a, b| (&a.exam_id, &a.instance_id).cmp(&(&b.exam_id, &b.instance_id)));
    write_csv(&layout.image_manifest(), &rows)?;

    let mut out = StageOutcome::default();
    for r in &rows {
        if r.reject_reason.is_empty() {
            bump(&mut out.counts, "images_accepted");
        } else {
            bump(&mut out.counts, format!("rejected:image_{}", r.reject_reason));
        }
    }
    let kept: Vec<&ManifestRow> = rows.iter().filter(|r| r.reject_reason.is_empty()).collect();
    let exams: Vec<&str> = kept.iter().map(|r| r.exam_id.as_str()).collect();
    let split = split_by_exam(&exams, cfg.split, cfg.seed)?;
    let cohort = Cohort {
        ids: kept.iter().map(|r| r.instance_id.clone()).collect(),
        exams: kept.iter().map(|r| r.exam_id.clone()).collect(),
        splits: kept.iter().map(|r| split[&r.exam_id]).collect(),
    };
    for s in &cohort.splits {
        bump(&mut out.counts, format!("cohort_{}", s.as_str()));
    }
    cohort.save(&layout.cohort())?;
    Ok(out)
}
