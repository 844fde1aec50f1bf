//! Grid clustering, fusion, evaluation and composition reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use radlabel_core::clustering::{assign, elbow, fit, read_labeling, write_labeling, ClusterModel, ClusterSpec, Elbow};
use radlabel_core::fusion::{
    fuse_clusterdists, fuse_clusterprobs, fuse_embeddings, DistNormalizer, FusionMethod, FusionSidecar, SourceInfo,
};
use radlabel_core::matrix::{EmbeddingMatrix, Source};
use radlabel_core::metrics::{composition_report, evaluate as evaluate_labels, EvaluationReport, Targets};
use radlabel_core::report::{composition_svg, write_composition_csv, write_size_histogram, write_summary_csv, TargetVariable};
use radlabel_core::split::Split;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, SpecConfig};
use crate::error::{PipelineError, Result};
use crate::layout::{
    derive_seed, ensure_parent, load_matrix, load_targets, read_json, save_matrix, write_bytes, write_json, Cohort, Layout,
    SetId, SOURCES,
};
use crate::manifest::StageOutcome;

/// Inertia curve of one (set, spec) grid and its knee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowRecord {
    pub grid: Vec<usize>,
    pub inertias: Vec<f64>,
    /// Grid values larger than the training split, not fitted.
    pub skipped: Vec<usize>,
    pub elbow: Option<Elbow>,
}

fn source_of(set: &SetId) -> Source {
    match set.method {
        None => set.sources[0],
        Some(_) => Source::Fused,
    }
}

fn sidecar_path(matrix: &Path) -> PathBuf {
    matrix.with_extension("json")
}

/// Loads the matrix clustered for `set` and checks it against the cohort.
pub fn load_set_matrix(layout: &Layout, cohort: &Cohort, set: &SetId, spec: &SpecConfig) -> Result<EmbeddingMatrix> {
    let m = load_matrix(&layout.set_matrix(set, spec), source_of(set))?;
    if m.ids != cohort.ids {
        return Err(PipelineError::Input(format!("rows of {set} do not match the cohort; rerun the earlier stages")));
    }
    Ok(m)
}

/// Fits every κ of the grid on the training rows and assigns all rows
/// with the persisted model, so that the stored labels are exactly what a
/// later `label` run reproduces.
pub fn cluster_set(cfg: &PipelineConfig, layout: &Layout, cohort: &Cohort, set: &SetId, spec: &SpecConfig) -> Result<ElbowRecord> {
    let m = load_set_matrix(layout, cohort, set, spec)?;
    let train = cohort.rows(Split::Train);
    cohort.assert_train(&train, "cluster fitting")?;
    let x_train = m.select_rows(&train);
    let mut record = ElbowRecord { grid: Vec::new(), inertias: Vec::new(), skipped: Vec::new(), elbow: None };
    for &k in &cfg.clustering.kappa_grid {
        if k > train.len() {
            record.skipped.push(k);
            continue;
        }
        let cspec = ClusterSpec { algorithm: spec.algorithm, metric: spec.metric, k };
        let seed = derive_seed(cfg.seed, &format!("cluster/{set}/{}/k{k}", spec.name()));
        let model = fit(&x_train, cspec, seed, cfg.clustering.kmeans)?;
        let stem = layout.model_stem(set, spec, k);
        ensure_parent(&stem)?;
        model.save(&stem)?;
        let model = ClusterModel::load(&stem)?;
        let a = assign(&model, &m)?;
        write_labeling(&layout.labels(set, spec, k), &m.ids, &a.labels)?;
        record.grid.push(k);
        record.inertias.push(model.inertia);
    }
    if record.grid.len() >= 3 {
        record.elbow = Some(elbow(&record.grid, &record.inertias)?);
    }
    write_json(&layout.elbow(set, spec), &record)?;
    Ok(record)
}

/// Clusters the given sets under every configured spec. Failures of one
/// (set, spec) pair are recorded and do not stop the others.
pub fn cluster(cfg: &PipelineConfig, layout: &Layout, sets: &[SetId]) -> Result<StageOutcome> {
    let cohort = Cohort::load(&layout.cohort())?;
    let mut out = StageOutcome::default();
    for set in sets {
        for spec in &cfg.clustering.specs {
            if !layout.set_matrix(set, spec).exists() {
                continue;
            }
            match cluster_set(cfg, layout, &cohort, set, spec) {
                Ok(rec) => {
                    *out.counts.entry("grid_runs".into()).or_insert(0) += rec.grid.len();
                    if !rec.skipped.is_empty() {
                        out.warn(format!("{set}/{}: κ {:?} exceed the training split and were skipped", spec.name(), rec.skipped));
                    }
                    if rec.elbow.as_ref().is_some_and(|e| !e.knee_found) {
                        out.warn(format!("{set}/{}: no knee found, grid midpoint used", spec.name()));
                    }
                }
                Err(e) => out.fail(format!("{set}/{}: {e}", spec.name())),
            }
        }
    }
    Ok(out)
}

/// Every set whose matrix exists for at least one spec.
pub fn existing_sets(cfg: &PipelineConfig, layout: &Layout, sets: Vec<SetId>) -> Vec<SetId> {
    sets.into_iter().filter(|s| cfg.clustering.specs.iter().any(|spec| layout.set_matrix(s, spec).exists())).collect()
}

pub fn elbow_record(layout: &Layout, set: &SetId, spec: &SpecConfig) -> Result<ElbowRecord> {
    read_json(&layout.elbow(set, spec))
}

/// κ given explicitly, or the knee of the run's inertia curve.
pub fn chosen_kappa(fixed: Option<usize>, layout: &Layout, set: &SetId, spec: &SpecConfig) -> Result<usize> {
    if let Some(k) = fixed {
        return Ok(k);
    }
    elbow_record(layout, set, spec)?
        .elbow
        .map(|e| e.k)
        .ok_or_else(|| PipelineError::Input(format!("{set}/{}: no elbow available; fix κ in the config", spec.name())))
}

/// Per-cluster distances of every row, as a block of the given source.
pub fn distance_block(model: &ClusterModel, m: &EmbeddingMatrix, source: Source) -> Result<EmbeddingMatrix> {
    let a = assign(model, m)?;
    Ok(EmbeddingMatrix::new(m.ids.clone(), source, a.k, a.distances)?)
}

/// Distance blocks from the single-source models named in `infos`.
pub fn distance_blocks(layout: &Layout, spec: &SpecConfig, infos: &[SourceInfo], feats: &BTreeMap<Source, EmbeddingMatrix>) -> Result<Vec<EmbeddingMatrix>> {
    infos
        .iter()
        .map(|info| {
            let k = info.k.ok_or_else(|| PipelineError::Input(format!("fusion sidecar lacks κ for {}", info.source)))?;
            let model = ClusterModel::load(&layout.model_stem(&SetId::single(info.source), spec, k))?;
            let feat = feats.get(&info.source).ok_or_else(|| PipelineError::Input(format!("{} features missing", info.source)))?;
            distance_block(&model, feat, info.source)
        })
        .collect()
}

/// Applies a fitted fusion (described by its sidecar) to new source
/// features. Used by `label`; `fuse` builds the same result while fitting.
pub fn apply_fusion(layout: &Layout, spec: &SpecConfig, sidecar: &FusionSidecar, feats: &BTreeMap<Source, EmbeddingMatrix>) -> Result<EmbeddingMatrix> {
    match sidecar.method {
        FusionMethod::Embeddings => {
            let blocks: Vec<&EmbeddingMatrix> = sidecar
                .sources
                .iter()
                .map(|i| feats.get(&i.source).ok_or_else(|| PipelineError::Input(format!("{} features missing", i.source))))
                .collect::<Result<_>>()?;
            Ok(fuse_embeddings(&blocks)?)
        }
        FusionMethod::ClusterDists => {
            let blocks = distance_blocks(layout, spec, &sidecar.sources, feats)?;
            let normalizer = sidecar.normalizer.as_ref().ok_or_else(|| PipelineError::Input("clusterdists sidecar lacks its normalizer".into()))?;
            Ok(fuse_clusterdists(&blocks.iter().collect::<Vec<_>>(), normalizer)?.0)
        }
        FusionMethod::ClusterProbs => {
            let blocks = distance_blocks(layout, spec, &sidecar.sources, feats)?;
            Ok(fuse_clusterprobs(&blocks.iter().collect::<Vec<_>>())?)
        }
    }
}

pub fn load_sidecar(layout: &Layout, set: &SetId, spec: &SpecConfig) -> Result<FusionSidecar> {
    let p = sidecar_path(&layout.set_matrix(set, spec));
    if !p.exists() {
        return Err(PipelineError::MissingArtifact(p));
    }
    Ok(FusionSidecar::load(&p)?)
}

fn load_features(layout: &Layout, cohort: &Cohort) -> Result<BTreeMap<Source, EmbeddingMatrix>> {
    let mut feats = BTreeMap::new();
    for s in SOURCES {
        let p = layout.feature(s);
        if p.exists() {
            let m = load_matrix(&p, s)?;
            if m.ids != cohort.ids {
                return Err(PipelineError::Input(format!("{s} features do not match the cohort")));
            }
            feats.insert(s, m);
        }
    }
    Ok(feats)
}

fn fuse_one(cfg: &PipelineConfig, layout: &Layout, cohort: &Cohort, feats: &BTreeMap<Source, EmbeddingMatrix>, set: &SetId, spec: &SpecConfig) -> Result<usize> {
    let method = set.method.expect("fused set");
    for s in &set.sources {
        if !feats.contains_key(s) {
            return Err(PipelineError::MissingArtifact(layout.feature(*s)));
        }
    }
    let train = cohort.rows(Split::Train);
    let (fused, sidecar) = match method {
        FusionMethod::Embeddings => {
            let blocks: Vec<&EmbeddingMatrix> = set.sources.iter().map(|s| &feats[s]).collect();
            let infos = set.sources.iter().map(|s| SourceInfo { source: *s, dim: feats[s].ncols(), k: None }).collect();
            let fused = fuse_embeddings(&blocks)?;
            let dim = fused.ncols();
            (fused, FusionSidecar { method, sources: infos, fused_dim: dim, normalizer: None, dists_report: None })
        }
        FusionMethod::ClusterDists | FusionMethod::ClusterProbs => {
            let infos: Vec<SourceInfo> = set
                .sources
                .iter()
                .map(|&s| {
                    let k = chosen_kappa(cfg.fusion.source_kappa, layout, &SetId::single(s), spec)?;
                    Ok(SourceInfo { source: s, dim: k, k: Some(k) })
                })
                .collect::<Result<_>>()?;
            let blocks = distance_blocks(layout, spec, &infos, feats)?;
            let refs: Vec<&EmbeddingMatrix> = blocks.iter().collect();
            if method == FusionMethod::ClusterDists {
                cohort.assert_train(&train, "distance normalization")?;
                let train_blocks: Vec<EmbeddingMatrix> = blocks.iter().map(|b| b.select_rows(&train)).collect();
                let normalizer = DistNormalizer::fit(&train_blocks.iter().collect::<Vec<_>>(), cfg.fusion.norm_scope)?;
                let (fused, report) = fuse_clusterdists(&refs, &normalizer)?;
                let dim = fused.ncols();
                (fused, FusionSidecar { method, sources: infos, fused_dim: dim, normalizer: Some(normalizer), dists_report: Some(report) })
            } else {
                let fused = fuse_clusterprobs(&refs)?;
                let dim = fused.ncols();
                (fused, FusionSidecar { method, sources: infos, fused_dim: dim, normalizer: None, dists_report: None })
            }
        }
    };
    let path = layout.set_matrix(set, spec);
    save_matrix(&path, &fused)?;
    sidecar.save(&sidecar_path(&path))?;
    Ok(fused.ncols())
}

pub fn fuse(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutcome> {
    let cohort = Cohort::load(&layout.cohort())?;
    let feats = load_features(layout, &cohort)?;
    let mut out = StageOutcome::default();
    for set in SetId::fused_only(&cfg.fusion.methods) {
        // the raw concatenation does not depend on the clustering spec
        let specs: &[SpecConfig] = if set.method == Some(FusionMethod::Embeddings) { &cfg.clustering.specs[..1] } else { &cfg.clustering.specs };
        for spec in specs {
            match fuse_one(cfg, layout, &cohort, &feats, &set, spec) {
                Ok(dim) => {
                    out.counts.insert(format!("dim:{set}"), dim);
                }
                Err(e) => out.fail(format!("{set}/{}: {e}", spec.name())),
            }
        }
    }
    Ok(out)
}

/// Labels of a stored run, checked against the cohort order.
pub fn load_labels(layout: &Layout, cohort: &Cohort, set: &SetId, spec: &SpecConfig, k: usize) -> Result<Vec<usize>> {
    let path = layout.labels(set, spec, k);
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path));
    }
    let (ids, labels) = read_labeling(&path)?;
    if ids != cohort.ids {
        return Err(PipelineError::Input(format!("{} does not match the cohort", path.display())));
    }
    Ok(labels)
}

fn pick<T: Clone>(v: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&i| v[i].clone()).collect()
}

/// One evaluation per (set, spec, κ) on the configured split, plus a table
/// of the selected κ per (set, spec).
pub fn evaluate(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutcome> {
    let cohort = Cohort::load(&layout.cohort())?;
    let rows = cohort.rows(cfg.evaluation.split);
    if rows.is_empty() {
        return Err(PipelineError::Input(format!("the {} split is empty", cfg.evaluation.split.as_str())));
    }
    let (modality, body_part) = load_targets(&layout.targets(), &cohort.ids)?;
    let (modality, body_part) = (pick(&modality, &rows), pick(&body_part, &rows));
    let targets = Targets { modality: &modality, body_part: &body_part };
    let feats = load_features(layout, &cohort)?;
    let image = feats.get(&Source::Image).map(|m| m.select_rows(&rows));
    let diagnosis = feats.get(&Source::Diagnosis).map(|m| m.select_rows(&rows));

    let mut out = StageOutcome::default();
    let mut summary: Vec<(String, EvaluationReport)> = Vec::new();
    let mut selected: Vec<(String, EvaluationReport)> = Vec::new();
    for set in SetId::all(&cfg.fusion.methods) {
        for spec in &cfg.clustering.specs {
            let Ok(record) = elbow_record(layout, &set, spec) else { continue };
            let mut by_k = BTreeMap::new();
            for &k in &record.grid {
                let result = load_labels(layout, &cohort, &set, spec, k).and_then(|labels| {
                    Ok(evaluate_labels(&pick(&labels, &rows), k, &targets, image.as_ref(), diagnosis.as_ref(), cfg.evaluation.small_clusters)?)
                });
                match result {
                    Ok(report) => {
                        write_json(&layout.evaluation(&set, spec, k), &report)?;
                        summary.push((format!("{set}/{}/k{k}", spec.name()), report.clone()));
                        by_k.insert(k, report);
                    }
                    Err(e) => out.fail(format!("{set}/{}/k{k}: {e}", spec.name())),
                }
            }
            match chosen_kappa(cfg.evaluation.kappa, layout, &set, spec) {
                Ok(k) => match by_k.remove(&k) {
                    Some(r) => selected.push((format!("{set}/{}", spec.name()), r)),
                    None => out.warn(format!("{set}/{}: no evaluation at κ = {k}", spec.name())),
                },
                Err(e) => out.warn(e.to_string()),
            }
        }
    }
    out.counts.insert("evaluations".into(), summary.len());
    out.counts.insert("evaluated_instances".into(), rows.len());
    write_summary(&layout.summary(), &summary)?;
    write_summary(&layout.selected(), &selected)?;
    Ok(out)
}

fn write_summary(path: &Path, rows: &[(String, EvaluationReport)]) -> Result<()> {
    let refs: Vec<(String, &EvaluationReport)> = rows.iter().map(|(n, r)| (n.clone(), r)).collect();
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, &refs)?;
    write_bytes(path, &buf)
}

/// Composition CSV, size histogram and bar charts for a labeling.
pub fn write_composition(dir: &Path, title: &str, labels: &[usize], k: usize, modality: &[String], body_part: &[String]) -> Result<()> {
    let composition = composition_report(labels, k, modality, body_part)?;
    ensure_parent(&dir.join("x"))?;
    let mut buf = Vec::new();
    write_composition_csv(&mut buf, &composition)?;
    write_bytes(&dir.join("composition.csv"), &buf)?;
    let mut buf = Vec::new();
    write_size_histogram(&mut buf, &composition)?;
    write_bytes(&dir.join("sizes.csv"), &buf)?;
    for t in [TargetVariable::Modality, TargetVariable::BodyPart] {
        let svg = composition_svg(&composition, t, &format!("{title}: {}", t.as_str().replace('_', " ")));
        write_bytes(&dir.join(format!("{}.svg", t.as_str())), svg.as_bytes())?;
    }
    Ok(())
}

/// Composition reports over the whole cohort at the selected κ of every
/// (set, spec), for comparison with bulk-labeling reports.
pub fn report(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutcome> {
    let cohort = Cohort::load(&layout.cohort())?;
    let (modality, body_part) = load_targets(&layout.targets(), &cohort.ids)?;
    let mut out = StageOutcome::default();
    for set in SetId::all(&cfg.fusion.methods) {
        for spec in &cfg.clustering.specs {
            if !layout.elbow(&set, spec).exists() {
                continue;
            }
            let result = chosen_kappa(cfg.evaluation.kappa, layout, &set, spec).and_then(|k| {
                let labels = load_labels(layout, &cohort, &set, spec, k)?;
                let title = format!("{set} {} k={k}", spec.name());
                write_composition(&layout.report_dir(&set, spec), &title, &labels, k, &modality, &body_part)
            });
            match result {
                Ok(()) => *out.counts.entry("reports".into()).or_insert(0) += 1,
                Err(e) => out.fail(format!("{set}/{}: {e}", spec.name())),
            }
        }
    }
    Ok(out)
}
