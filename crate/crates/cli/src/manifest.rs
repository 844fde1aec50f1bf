//! Stage sequencing and the run manifest.
//!
//! Stages talk to each other only through files under the output
//! directory, so any stage can be rerun alone. After every run the
//! manifest is rewritten with a digest of every artifact on disk.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::time::Instant;

use radlabel_core::image::ManifestRow;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::features::{extract, prep_tags, prep_text};
use crate::ingest::{export_images, ingest, list_files, relative, FileRecord, REJECTED};
use crate::layout::{read_csv, read_json, sha256_hex, write_bytes, write_json, Layout, SetId, SOURCES};
use crate::runs::{cluster, evaluate, existing_sets, fuse, report};

/// What one stage did: counters, non-fatal warnings and per-item failures.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub counts: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
    /// Items that failed while the stage as a whole carried on.
    pub failures: Vec<String>,
}

impl StageOutcome {
    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    pub fn fail(&mut self, message: impl Into<String>) {
        self.failures.push(message.into());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    ExportImages,
    PrepTags,
    PrepText,
    Extract,
    Cluster,
    Fuse,
    ClusterFused,
    Evaluate,
    Report,
}

impl Stage {
    /// Order of a full run. Single-source clustering comes before fusion
    /// because the distance-based fusions read the single-source models.
    pub const PIPELINE: [Stage; 10] = [
        Stage::Ingest,
        Stage::ExportImages,
        Stage::PrepTags,
        Stage::PrepText,
        Stage::Extract,
        Stage::Cluster,
        Stage::Fuse,
        Stage::ClusterFused,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::ExportImages => "export-images",
            Stage::PrepTags => "prep-tags",
            Stage::PrepText => "prep-text",
            Stage::Extract => "extract",
            Stage::Cluster => "cluster",
            Stage::Fuse => "fuse",
            Stage::ClusterFused => "cluster-fused",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    fn execute(self, cfg: &PipelineConfig, layout: &Layout, in_pipeline: bool) -> Result<StageOutcome> {
        match self {
            Stage::Ingest => ingest(cfg, layout),
            Stage::ExportImages => export_images(cfg, layout),
            Stage::PrepTags => prep_tags(cfg, layout),
            Stage::PrepText => prep_text(cfg, layout),
            Stage::Extract => extract(cfg, layout),
            // run alone, `cluster` refreshes every set whose matrix exists
            Stage::Cluster if in_pipeline => cluster(cfg, layout, &SOURCES.map(SetId::single)),
            Stage::Cluster => cluster(cfg, layout, &existing_sets(cfg, layout, SetId::all(&cfg.fusion.methods))),
            Stage::Fuse => fuse(cfg, layout),
            Stage::ClusterFused => cluster(cfg, layout, &SetId::fused_only(&cfg.fusion.methods)),
            Stage::Evaluate => evaluate(cfg, layout),
            Stage::Report => report(cfg, layout),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    /// Finished, but some items failed.
    Partial,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: Stage,
    pub status: StageStatus,
    pub seconds: f64,
    pub outcome: StageOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub sha256: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub stages: Vec<StageRecord>,
    /// Every input file, keyed by its path below `dicom/`.
    pub inputs: BTreeMap<String, InputRecord>,
    /// Every file under the output directory except the manifest itself,
    /// keyed by relative path.
    pub artifacts: BTreeMap<String, String>,
    /// Rejected and failed inputs per reason.
    pub rejections: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    fn new(cfg: &PipelineConfig) -> Result<Self> {
        Ok(Self {
            config: serde_json::to_value(cfg)?,
            stages: Vec::new(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            rejections: BTreeMap::new(),
            warnings: Vec::new(),
        })
    }

    pub fn succeeded(&self) -> bool {
        self.stages.iter().all(|s| matches!(s.status, StageStatus::Ok))
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == stage)
    }

    fn record(&mut self, rec: StageRecord) {
        match self.stages.iter_mut().find(|s| s.name == rec.name) {
            Some(old) => *old = rec,
            None => {
                self.stages.push(rec);
                self.stages.sort_by_key(|s| s.name);
            }
        }
    }

    /// Recomputes everything derived from disk and from the stage records,
    /// then writes the manifest and the failure marker.
    fn finish(&mut self, layout: &Layout) -> Result<()> {
        self.inputs = input_records(layout)?;
        self.rejections.clear();
        for r in self.inputs.values().filter(|r| !r.reason.is_empty()) {
            *self.rejections.entry(r.reason.clone()).or_insert(0) += 1;
        }
        self.warnings = self
            .stages
            .iter()
            .flat_map(|s| s.outcome.warnings.iter().map(move |w| format!("{}: {w}", s.name)))
            .collect();

        let marker = layout.failure_marker();
        let problems: Vec<String> = self
            .stages
            .iter()
            .filter(|s| matches!(s.status, StageStatus::Failed | StageStatus::Partial))
            .flat_map(|s| {
                let head = s.message.iter().map(move |m| format!("{}: {m}", s.name));
                head.chain(s.outcome.failures.iter().map(move |f| format!("{}: {f}", s.name)))
            })
            .collect();
        if problems.is_empty() {
            if marker.exists() {
                fs::remove_file(&marker).map_err(|e| PipelineError::io(&marker, e))?;
            }
        } else {
            write_bytes(&marker, format!("{}\n", problems.join("\n")).as_bytes())?;
        }
        self.artifacts = artifact_digests(layout)?;
        write_json(&layout.manifest(), self)
    }
}

/// Ingest status of every input file, with later image rejections folded in.
fn input_records(layout: &Layout) -> Result<BTreeMap<String, InputRecord>> {
    if !layout.files_csv().exists() {
        return Ok(BTreeMap::new());
    }
    let files: Vec<FileRecord> = read_csv(&layout.files_csv())?;
    let images: HashMap<String, String> = if layout.image_manifest().exists() {
        read_csv::<ManifestRow>(&layout.image_manifest())?
            .into_iter()
            .filter(|r| !r.reject_reason.is_empty())
            .map(|r| (r.instance_id, r.reject_reason))
            .collect()
    } else {
        HashMap::new()
    };
    Ok(files
        .into_iter()
        .map(|f| {
            let mut rec = InputRecord { sha256: f.sha256, status: f.status, reason: f.reason };
            if rec.reason.is_empty() {
                if let Some(reason) = images.get(&f.instance_id) {
                    rec.status = REJECTED.into();
                    rec.reason = format!("image_{reason}");
                }
            }
            (f.path, rec)
        })
        .collect())
}

fn artifact_digests(layout: &Layout) -> Result<BTreeMap<String, String>> {
    let manifest = layout.manifest();
    let mut out = BTreeMap::new();
    for path in list_files(&layout.root)? {
        if path == manifest {
            continue;
        }
        let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        out.insert(relative(&layout.root, &path), sha256_hex(&bytes));
    }
    Ok(out)
}

fn run_one(stage: Stage, cfg: &PipelineConfig, layout: &Layout, in_pipeline: bool) -> (StageRecord, bool) {
    let start = Instant::now();
    let result = stage.execute(cfg, layout, in_pipeline);
    let seconds = start.elapsed().as_secs_f64();
    match result {
        Ok(outcome) => {
            let status = if outcome.failures.is_empty() { StageStatus::Ok } else { StageStatus::Partial };
            (StageRecord { name: stage, status, seconds, outcome, message: None }, true)
        }
        Err(e) => {
            let rec = StageRecord { name: stage, status: StageStatus::Failed, seconds, outcome: StageOutcome::default(), message: Some(e.to_string()) };
            (rec, false)
        }
    }
}

/// Runs every stage in order. A stage error stops the run: the remaining
/// stages are recorded as skipped and the outputs so far are kept.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    let layout = Layout::new(&cfg.paths.output);
    fs::create_dir_all(&layout.root).map_err(|e| PipelineError::io(&layout.root, e))?;
    let mut manifest = RunManifest::new(cfg)?;
    let mut alive = true;
    for stage in Stage::PIPELINE {
        if !alive {
            let message = Some("an earlier stage failed".to_owned());
            manifest.record(StageRecord { name: stage, status: StageStatus::Skipped, seconds: 0.0, outcome: StageOutcome::default(), message });
            continue;
        }
        let (rec, ok) = run_one(stage, cfg, &layout, true);
        alive = ok;
        manifest.record(rec);
    }
    manifest.finish(&layout)?;
    Ok(manifest)
}

/// Runs a single stage and merges its record into the existing manifest.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<RunManifest> {
    let layout = Layout::new(&cfg.paths.output);
    fs::create_dir_all(&layout.root).map_err(|e| PipelineError::io(&layout.root, e))?;
    let mut manifest = match read_json::<RunManifest>(&layout.manifest()) {
        Ok(m) => m,
        Err(PipelineError::MissingArtifact(_)) => RunManifest::new(cfg)?,
        Err(e) => return Err(e),
    };
    manifest.config = serde_json::to_value(cfg)?;
    let (rec, _) = run_one(stage, cfg, &layout, false);
    manifest.record(rec);
    manifest.finish(&layout)?;
    Ok(manifest)
}
