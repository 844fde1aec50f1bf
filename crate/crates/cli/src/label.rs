//! Applies the frozen pipeline of a finished run to a new corpus.
//!
//! Nothing is refitted. Every matrix is rounded the way the fitting stages
//! saw it on disk, so labeling the training corpus reproduces the stored
//! fit-time labels exactly.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use radlabel_core::clustering::{assign, write_labeling, ClusterModel};
use radlabel_core::dicom::{parse_file, ExtractionConfig};
use radlabel_core::image::export_instance;
use radlabel_core::matrix::{EmbeddingMatrix, Source};
use radlabel_core::pca::PcaModel;
use radlabel_core::tags::{raw_row, RawTagRow};
use radlabel_core::text::accept_diagnosis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::features::{image_embedding, load_corpus, pixel_matrix, tag_table, text_embedding, TagModels};
use crate::ingest::{list_files, load_bpe_rules, read_diagnoses, relative};
use crate::layout::{as_persisted, read_json, target_row, write_csv, write_json, Layout, SetId};
use crate::runs::{apply_fusion, chosen_kappa, load_sidecar, write_composition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub instance_id: String,
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub set: String,
    pub spec: String,
    pub k: usize,
    pub files: usize,
    pub labeled: usize,
    pub skipped: BTreeMap<String, usize>,
    pub cluster_sizes: Vec<usize>,
    pub tag_cells_imputed: usize,
    /// Continuous tag values outside the training range.
    pub tag_values_out_of_range: usize,
    /// Categorical tag values never seen during fitting.
    pub tag_values_unseen: usize,
}

struct Candidate {
    path: String,
    instance_id: String,
    exam_id: String,
    raw: RawTagRow,
    pixels: std::result::Result<Option<Vec<u8>>, String>,
}

/// Labels every usable file below `corpus/dicom` with the model chosen in
/// `cfg.label`, reading the fitted state from `cfg.paths.output`. Writes
/// `labels.csv`, `skipped.csv`, `label_summary.json` and a composition
/// report into `out`.
pub fn label_corpus(cfg: &PipelineConfig, corpus: &Path, out: &Path) -> Result<LabelSummary> {
    let layout = Layout::new(&cfg.paths.output);
    let set = SetId::fused(&cfg.label.sources, cfg.label.method);
    let spec = &cfg.label.spec;
    let k = chosen_kappa(cfg.label.kappa, &layout, &set, spec)?;
    let stem = layout.model_stem(&set, spec, k);
    if !stem.with_extension("json").exists() {
        return Err(PipelineError::MissingArtifact(stem.with_extension("json")));
    }
    let model = ClusterModel::load(&stem)?;
    let uses = |s: Source| set.sources.contains(&s);

    let extraction = ExtractionConfig::from_spec(&cfg.ingest.extraction)?;
    let dicom_root = corpus.join("dicom");
    let files = list_files(&dicom_root)?;
    let mut skipped = Vec::new();
    let parsed: Vec<std::result::Result<Candidate, SkippedFile>> = files
        .par_iter()
        .map(|p| {
            let path = relative(&dicom_root, p);
            let skip = |instance_id: &str, reason: &str, detail: String| SkippedFile { path: path.clone(), instance_id: instance_id.to_owned(), reason: reason.to_owned(), detail };
            let bytes = fs::read(p).map_err(|e| skip("", "read_error", e.to_string()))?;
            let inst = parse_file(&bytes, &extraction, uses(Source::Image)).map_err(|e| skip("", "parse_error", e.to_string()))?;
            // image rejections are applied after the exam rules, as in the fitting run
            let pixels = match uses(Source::Image) {
                true => export_instance(&inst, &cfg.images.export).map(|img| Some(img.pixels)).map_err(|e| format!("image_{}", e.reason())),
                false => Ok(None),
            };
            Ok(Candidate { path, instance_id: inst.instance_id.clone(), exam_id: inst.exam_id.clone(), raw: raw_row(&inst), pixels })
        })
        .collect();

    // the same admission rules as ingest, in the same order
    let mut seen = HashSet::new();
    let mut candidates = Vec::new();
    for r in parsed {
        match r {
            Err(s) => skipped.push(s),
            Ok(c) if !seen.insert(c.instance_id.clone()) => {
                skipped.push(SkippedFile { path: c.path, instance_id: c.instance_id, reason: "duplicate_instance".into(), detail: String::new() });
            }
            Ok(c) => candidates.push(c),
        }
    }
    let mut per_exam: HashMap<String, usize> = HashMap::new();
    for c in &candidates {
        *per_exam.entry(c.exam_id.clone()).or_insert(0) += 1;
    }
    let diagnoses = if uses(Source::Diagnosis) { Some(read_diagnoses(&corpus.join("diagnoses.csv"))?.0) } else { None };
    let mut kept = Vec::new();
    for c in candidates {
        let reason = if per_exam[&c.exam_id] > cfg.ingest.max_files_per_exam {
            Some("exam_too_large")
        } else {
            match diagnoses.as_ref().map(|d| d.get(&c.exam_id)) {
                Some(None) => Some("missing_diagnosis"),
                Some(Some(d)) if !accept_diagnosis(d) => Some("short_diagnosis"),
                _ => None,
            }
        };
        let reason = reason.map(str::to_owned).or_else(|| c.pixels.as_ref().err().cloned());
        match reason {
            Some(reason) => skipped.push(SkippedFile { path: c.path, instance_id: c.instance_id, reason, detail: String::new() }),
            None => kept.push(c),
        }
    }
    kept.sort_by(|a, b| (&a.exam_id, &a.instance_id).cmp(&(&b.exam_id, &b.instance_id)));
    if kept.is_empty() {
        return Err(PipelineError::Input(format!("no file in {} could be labeled", corpus.display())));
    }
    let ids: Vec<String> = kept.iter().map(|c| c.instance_id.clone()).collect();

    let mut summary = LabelSummary {
        set: set.to_string(),
        spec: spec.name(),
        k,
        files: files.len(),
        labeled: kept.len(),
        skipped: BTreeMap::new(),
        cluster_sizes: Vec::new(),
        tag_cells_imputed: 0,
        tag_values_out_of_range: 0,
        tag_values_unseen: 0,
    };
    let mut feats = BTreeMap::new();
    if uses(Source::Tags) {
        let rows: Vec<RawTagRow> = kept.iter().map(|c| c.raw.clone()).collect();
        let (m, report, imputed) = TagModels::load(&layout)?.embed(&tag_table(ids.clone(), &rows))?;
        summary.tag_cells_imputed = imputed;
        summary.tag_values_out_of_range = report.total_out_of_range();
        summary.tag_values_unseen = report.total_unseen();
        feats.insert(Source::Tags, as_persisted(m));
    }
    if let Some(diagnoses) = &diagnoses {
        let corpus = load_corpus(&layout)?;
        let docs: Vec<&str> = kept.iter().map(|c| diagnoses[&c.exam_id].as_str()).collect();
        feats.insert(Source::Diagnosis, as_persisted(text_embedding(&corpus, &cfg.text, ids.clone(), &docs)?));
    }
    if uses(Source::Image) {
        let images: Vec<Vec<u8>> = kept.iter_mut().map(|c| std::mem::replace(&mut c.pixels, Ok(None)).ok().flatten().expect("pixels exported")).collect();
        let pca: PcaModel = read_json(&layout.pca())?;
        feats.insert(Source::Image, as_persisted(image_embedding(&pca, &pixel_matrix(ids.clone(), &images)?)?));
    }
    let x: EmbeddingMatrix = match set.method {
        None => feats.remove(&set.sources[0]).expect("single source embedded"),
        Some(_) => as_persisted(apply_fusion(&layout, spec, &load_sidecar(&layout, &set, spec)?, &feats)?),
    };
    let labels = assign(&model, &x)?.labels;

    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    write_labeling(&out.join("labels.csv"), &ids, &labels)?;
    skipped.sort_by(|a, b| a.path.cmp(&b.path));
    write_csv(&out.join("skipped.csv"), &skipped)?;
    let rules = load_bpe_rules(cfg)?;
    let targets: Vec<_> = kept.iter().map(|c| target_row(&c.instance_id, &c.exam_id, &c.raw, &rules)).collect();
    let modality: Vec<String> = targets.iter().map(|t| t.modality.clone()).collect();
    let body_part: Vec<String> = targets.iter().map(|t| t.body_part.clone()).collect();
    write_composition(out, &format!("labeled {set} {} k={k}", spec.name()), &labels, k, &modality, &body_part)?;

    for s in &skipped {
        *summary.skipped.entry(s.reason.clone()).or_insert(0) += 1;
    }
    summary.cluster_sizes = vec![0; k];
    for &l in &labels {
        summary.cluster_sizes[l] += 1;
    }
    write_json(&out.join("label_summary.json"), &summary)?;
    Ok(summary)
}

