//! Where every artifact lives under the output directory, plus the small
//! readers and writers shared by the stages.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use radlabel_core::fusion::FusionMethod;
use radlabel_core::matrix::{EmbeddingMatrix, Source};
use radlabel_core::split::Split;
use radlabel_core::tags::{impute_bpe, BpeRules, RawTagRow};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SpecConfig;
use crate::error::{PipelineError, Result};

pub const UNKNOWN: &str = "UNKNOWN";

/// The three single sources in canonical order.
pub const SOURCES: [Source; 3] = [Source::Diagnosis, Source::Tags, Source::Image];

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn files_csv(&self) -> PathBuf {
        self.root.join("ingest/files.csv")
    }

    pub fn raw_tags(&self) -> PathBuf {
        self.root.join("ingest/raw_tags.jsonl")
    }

    pub fn targets(&self) -> PathBuf {
        self.root.join("ingest/targets.csv")
    }

    pub fn diagnoses(&self) -> PathBuf {
        self.root.join("ingest/diagnoses.csv")
    }

    pub fn png(&self, instance_id: &str) -> PathBuf {
        self.root.join("images/png").join(format!("{}.png", file_stem(instance_id)))
    }

    pub fn image_manifest(&self) -> PathBuf {
        self.root.join("images/manifest.csv")
    }

    pub fn cohort(&self) -> PathBuf {
        self.root.join("cohort.csv")
    }

    pub fn tags_dir(&self) -> PathBuf {
        self.root.join("tags")
    }

    pub fn imputer(&self) -> PathBuf {
        self.root.join("tags/imputer.json")
    }

    pub fn encoder(&self) -> PathBuf {
        self.root.join("tags/encoder.json")
    }

    pub fn text_corpus(&self) -> PathBuf {
        self.root.join("text/corpus.json")
    }

    pub fn pca(&self) -> PathBuf {
        self.root.join("images/pca.json")
    }

    pub fn feature(&self, source: Source) -> PathBuf {
        self.root.join("features").join(format!("{}.rnem", source.as_str()))
    }

    /// Matrix clustered for `set` under `spec`. The distance-based fusions
    /// depend on the per-source models, hence on the spec.
    pub fn set_matrix(&self, set: &SetId, spec: &SpecConfig) -> PathBuf {
        match set.method {
            None => self.feature(set.sources[0]),
            Some(FusionMethod::Embeddings) => self.root.join("fused").join(format!("{set}.rnem")),
            Some(_) => self.root.join("fused").join(spec.name()).join(format!("{set}.rnem")),
        }
    }

    pub fn run_dir(&self, set: &SetId, spec: &SpecConfig) -> PathBuf {
        self.root.join("runs").join(set.to_string()).join(spec.name())
    }

    pub fn model_stem(&self, set: &SetId, spec: &SpecConfig, k: usize) -> PathBuf {
        self.run_dir(set, spec).join(format!("k{k}"))
    }

    pub fn labels(&self, set: &SetId, spec: &SpecConfig, k: usize) -> PathBuf {
        self.run_dir(set, spec).join(format!("k{k}.labels.csv"))
    }

    pub fn elbow(&self, set: &SetId, spec: &SpecConfig) -> PathBuf {
        self.run_dir(set, spec).join("elbow.json")
    }

    pub fn evaluation(&self, set: &SetId, spec: &SpecConfig, k: usize) -> PathBuf {
        self.root.join("eval").join(set.to_string()).join(spec.name()).join(format!("k{k}.json"))
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("eval/summary.csv")
    }

    pub fn selected(&self) -> PathBuf {
        self.root.join("eval/selected.csv")
    }

    pub fn report_dir(&self, set: &SetId, spec: &SpecConfig) -> PathBuf {
        self.root.join("report").join(set.to_string()).join(spec.name())
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn failure_marker(&self) -> PathBuf {
        self.root.join("FAILED")
    }
}

/// A clustered representation: one source, or a fusion of several.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SetId {
    /// Canonical order, no duplicates.
    pub sources: Vec<Source>,
    /// `None` exactly when there is a single source.
    pub method: Option<FusionMethod>,
}

impl SetId {
    pub fn single(source: Source) -> Self {
        Self { sources: vec![source], method: None }
    }

    pub fn fused(sources: &[Source], method: FusionMethod) -> Self {
        let mut s = sources.to_vec();
        s.sort();
        s.dedup();
        if s.len() == 1 {
            Self::single(s[0])
        } else {
            Self { sources: s, method: Some(method) }
        }
    }

    /// Every source combination: three singles, then the pairs and the
    /// triple under each method.
    pub fn all(methods: &[FusionMethod]) -> Vec<SetId> {
        let mut out: Vec<SetId> = SOURCES.iter().map(|&s| Self::single(s)).collect();
        out.extend(Self::fused_only(methods));
        out
    }

    pub fn fused_only(methods: &[FusionMethod]) -> Vec<SetId> {
        let combos: [&[Source]; 4] = [
            &[Source::Diagnosis, Source::Tags],
            &[Source::Diagnosis, Source::Image],
            &[Source::Tags, Source::Image],
            &[Source::Diagnosis, Source::Tags, Source::Image],
        ];
        methods.iter().flat_map(|&m| combos.iter().map(move |c| Self::fused(c, m))).collect()
    }
}

impl fmt::Display for SetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.sources.iter().map(|s| s.as_str()).collect();
        f.write_str(&names.join("+"))?;
        if let Some(m) = self.method {
            write!(f, "@{}", m.as_str())?;
        }
        Ok(())
    }
}

/// Instances that survived ingest and image export, ordered by
/// (exam, instance), with their split.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub ids: Vec<String>,
    pub exams: Vec<String>,
    pub splits: Vec<Split>,
}

#[derive(Serialize, Deserialize)]
struct CohortRow {
    instance_id: String,
    exam_id: String,
    split: Split,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn rows(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for i in 0..self.len() {
            w.serialize(CohortRow { instance_id: self.ids[i].clone(), exam_id: self.exams[i].clone(), split: self.splits[i] })?;
        }
        w.flush().map_err(|e| PipelineError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<CohortRow> = read_csv(path)?;
        Ok(Self {
            ids: rows.iter().map(|r| r.instance_id.clone()).collect(),
            exams: rows.iter().map(|r| r.exam_id.clone()).collect(),
            splits: rows.iter().map(|r| r.split).collect(),
        })
    }

    /// Errors unless every listed row belongs to the training split. Called
    /// wherever statistics are fitted.
    pub fn assert_train(&self, rows: &[usize], what: &str) -> Result<()> {
        match rows.iter().find(|&&i| self.splits[i] != Split::Train) {
            Some(&i) => Err(PipelineError::Input(format!("{what} would see non-training instance {}", self.ids[i]))),
            None => Ok(()),
        }
    }
}

/// Modality and body part of an instance as used for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetRow {
    pub instance_id: String,
    pub exam_id: String,
    pub modality: String,
    pub body_part: String,
    /// `recorded`, `rule` or `unknown`.
    pub body_part_source: String,
}

pub fn target_row(instance_id: &str, exam_id: &str, raw: &RawTagRow, rules: &BpeRules) -> TargetRow {
    let modality = raw
        .get("Modality")
        .and_then(|v| v.first())
        .map(|s| s.trim().to_uppercase())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| UNKNOWN.to_owned());
    let recorded = raw.get("BodyPartExamined").is_some_and(|v| v.iter().any(|s| !s.trim().is_empty()));
    let imputed = impute_bpe(|name| raw.get(name).map(|v| v.join("\\")), rules);
    let body_part_source = match (&imputed, recorded) {
        (None, _) => "unknown",
        (Some(_), true) => "recorded",
        (Some(_), false) => "rule",
    };
    TargetRow {
        instance_id: instance_id.to_owned(),
        exam_id: exam_id.to_owned(),
        modality,
        body_part: imputed.unwrap_or_else(|| UNKNOWN.to_owned()),
        body_part_source: body_part_source.to_owned(),
    }
}

/// Targets aligned to `ids`.
pub fn load_targets(path: &Path, ids: &[String]) -> Result<(Vec<String>, Vec<String>)> {
    let rows: Vec<TargetRow> = read_csv(path)?;
    let by_id: HashMap<&str, &TargetRow> = rows.iter().map(|r| (r.instance_id.as_str(), r)).collect();
    let mut modality = Vec::with_capacity(ids.len());
    let mut body_part = Vec::with_capacity(ids.len());
    for id in ids {
        let r = by_id.get(id.as_str()).ok_or_else(|| PipelineError::Input(format!("no target row for {id}")))?;
        modality.push(r.modality.clone());
        body_part.push(r.body_part.clone());
    }
    Ok((modality, body_part))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_owned()));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_owned()));
    }
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    Ok(())
}

pub fn load_matrix(path: &Path, source: Source) -> Result<EmbeddingMatrix> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_owned()));
    }
    Ok(EmbeddingMatrix::load(path, source)?)
}

pub fn save_matrix(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    ensure_parent(path)?;
    Ok(m.save(path)?)
}

/// The values a matrix has after a save/load round trip (RNEM stores f32).
/// Applied to every in-memory matrix the label path would otherwise use at
/// full precision, so it sees exactly what the fitting stages read back.
pub fn as_persisted(m: EmbeddingMatrix) -> EmbeddingMatrix {
    let (ids, source, d, mut data) = m.into_parts();
    data.iter_mut().for_each(|v| *v = f64::from(*v as f32));
    EmbeddingMatrix::new(ids, source, d, data).expect("shape unchanged")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// A seed for one named sub-task, so that adding or reordering tasks does
/// not shift the random streams of the others.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Instance ids are UIDs in practice; anything else is mapped to `_`.
pub fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' }).collect()
}
