//! Per-source feature stages. Each fits its state on the training split
//! and then applies that frozen state to every cohort row; `label` reuses
//! the same apply functions on new data.

use std::collections::HashMap;
use std::fs;

use radlabel_core::image::read_gray_png;
use radlabel_core::matrix::{EmbeddingMatrix, Source};
use radlabel_core::pca::{pca_fit, pca_transform, PcaModel};
use radlabel_core::split::Split;
use radlabel_core::tags::encode::ApplyReport;
use radlabel_core::tags::forest::ForestOptions;
use radlabel_core::tags::{
    dictionary_kind, filter_tags, DropReason, missforest_impute, missingness_report, split_multivalue, Encoder, FrozenImputer,
    MissForestOptions, RawTagRow, TagTable,
};
use radlabel_core::text::{Corpus, StemmerRules};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{PipelineConfig, TextConfig};
use crate::error::{PipelineError, Result};
use crate::ingest::{load_raw_records, DiagnosisRow};
use crate::layout::{
    derive_seed, ensure_parent, read_csv, read_json, save_matrix, write_bytes, write_csv, write_json, Cohort, Layout,
};
use crate::manifest::StageOutcome;

/// Typed tag table for raw rows, multi-valued tags split by position.
pub fn tag_table(ids: Vec<String>, rows: &[RawTagRow]) -> TagTable {
    TagTable::from_string_columns(ids, split_multivalue(rows), dictionary_kind)
}

#[derive(Serialize)]
struct DroppedColumn {
    column: String,
    reason: DropReason,
}

/// Frozen tag transforms: imputation, then encoding.
pub struct TagModels {
    pub imputer: FrozenImputer,
    pub encoder: Encoder,
}

impl TagModels {
    pub fn load(layout: &Layout) -> Result<Self> {
        Ok(Self { imputer: read_json(&layout.imputer())?, encoder: read_json(&layout.encoder())? })
    }

    /// Returns the embedding, the encoder's out-of-range report and the
    /// number of imputed cells.
    pub fn embed(&self, table: &TagTable) -> Result<(EmbeddingMatrix, ApplyReport, usize)> {
        let (completed, imputed) = self.imputer.apply(table)?;
        let (m, report) = self.encoder.apply(&completed)?;
        Ok((m, report, imputed))
    }
}

pub fn prep_tags(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutcome> {
    let cohort = Cohort::load(&layout.cohort())?;
    let records = load_raw_records(&layout.raw_tags())?;
    let by_id: HashMap<&str, &RawTagRow> = records.iter().map(|r| (r.instance_id.as_str(), &r.tags)).collect();
    let rows: Vec<RawTagRow> = cohort
        .ids
        .iter()
        .map(|id| by_id.get(id.as_str()).map(|r| (*r).clone()).ok_or_else(|| PipelineError::Input(format!("no tag row for {id}"))))
        .collect::<Result<_>>()?;
    let table = tag_table(cohort.ids.clone(), &rows);

    let train = cohort.rows(Split::Train);
    cohort.assert_train(&train, "tag filtering and imputation")?;
    let (train_raw, dropped) = filter_tags(&table.select_rows(&train), &cfg.tags.filter);
    if train_raw.columns.is_empty() {
        return Err(PipelineError::Input("no tag column survived filtering".into()));
    }
    let mut out = StageOutcome::default();
    out.counts.insert("tag_columns_kept".into(), train_raw.columns.len());
    out.counts.insert("tag_columns_dropped".into(), dropped.len());
    let dropped: Vec<DroppedColumn> = dropped.into_iter().map(|(column, reason)| DroppedColumn { column, reason }).collect();
    write_csv(&layout.tags_dir().join("dropped.csv"), &dropped)?;

    let seed = derive_seed(cfg.seed, "tags");
    let report = missingness_report(&train_raw, seed)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_bytes(&layout.tags_dir().join("missingness.csv"), &buf)?;
    write_json(&layout.tags_dir().join("missingness_verdicts.json"), &report.columns)?;
    out.counts.insert("columns_not_mcar".into(), report.columns.iter().filter(|c| c.not_mcar).count());

    let mf_opts = MissForestOptions { max_iter: cfg.tags.missforest_max_iter, forest: cfg.tags.forest };
    let (completed_train, mf_report) = missforest_impute(&train_raw, seed, mf_opts)?;
    write_json(&layout.tags_dir().join("missforest.json"), &mf_report)?;
    let imputer_opts = ForestOptions { n_trees: cfg.tags.imputer_trees, ..cfg.tags.forest };
    let imputer = FrozenImputer::fit(&train_raw, &completed_train, mf_report.iterations, imputer_opts, seed)?;
    let mut encoder = Encoder::fit(&completed_train)?;
    encoder.clamp = cfg.tags.clamp;
    if encoder.dim() == 0 {
        return Err(PipelineError::Input("every kept tag column is constant on the training split".into()));
    }
    if !encoder.zero_range_dropped.is_empty() {
        out.warn(format!("constant continuous tag columns dropped: {}", encoder.zero_range_dropped.join(", ")));
    }

    let models = TagModels { imputer, encoder };
    let (embedding, apply_report, imputed) = models.embed(&table)?;
    out.counts.insert("tag_cells_imputed".into(), imputed);
    out.counts.insert("tag_dim".into(), embedding.ncols());
    ensure_parent(&layout.imputer())?;
    let kept = TagTable { ids: table.ids.clone(), columns: table.columns.iter().filter(|c| train_raw.column(&c.name).is_some()).cloned().collect() };
    kept.save(&layout.tags_dir().join("raw_table.csv"))?;
    write_json(&layout.imputer(), &models.imputer)?;
    write_json(&layout.encoder(), &models.encoder)?;
    write_json(&layout.tags_dir().join("apply_report.json"), &apply_report)?;
    save_matrix(&layout.feature(Source::Tags), &embedding)?;
    Ok(out)
}

pub fn load_stemmer(cfg: &PipelineConfig) -> Result<StemmerRules> {
    match &cfg.paths.stemmer_rules {
        None => Ok(StemmerRules::default()),
        Some(p) => Ok(StemmerRules::from_json(&fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?)?),
    }
}

pub fn text_embedding(corpus: &Corpus, text: &TextConfig, ids: Vec<String>, docs: &[&str]) -> Result<EmbeddingMatrix> {
    let rows: Vec<Vec<f64>> = docs.par_iter().map(|d| corpus.vectorize(d, text.vectorizer, text.normalize_bow)).collect();
    Ok(EmbeddingMatrix::from_rows(ids, Source::Diagnosis, &rows)?)
}

pub fn load_corpus(layout: &Layout) -> Result<Corpus> {
    let path = layout.text_corpus();
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path));
    }
    Ok(Corpus::from_json(&fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?)?)
}

pub fn prep_text(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutcome> {
    let cohort = Cohort::load(&layout.cohort())?;
    let rows: Vec<DiagnosisRow> = read_csv(&layout.diagnoses())?;
    let by_exam: HashMap<&str, &str> = rows.iter().map(|r| (r.exam_id.as_str(), r.diagnosis.as_str())).collect();
    let docs: Vec<&str> = cohort
        .exams
        .iter()
        .map(|e| by_exam.get(e.as_str()).copied().ok_or_else(|| PipelineError::Input(format!("no diagnosis for exam {e}"))))
        .collect::<Result<_>>()?;

    // one document per training exam, however many instances it has
    let train = cohort.rows(Split::Train);
    cohort.assert_train(&train, "corpus building")?;
    let mut train_exams: Vec<&str> = train.iter().map(|&i| cohort.exams[i].as_str()).collect();
    train_exams.sort_unstable();
    train_exams.dedup();
    let train_docs: Vec<&str> = train_exams.iter().map(|e| by_exam[e]).collect();
    let corpus = Corpus::build(&train_docs, Split::Train, cfg.text.min_word_frequency, load_stemmer(cfg)?)?;

    let m = text_embedding(&corpus, &cfg.text, cohort.ids.clone(), &docs)?;
    let mut out = StageOutcome::default();
    out.counts.insert("vocabulary".into(), corpus.len());
    out.counts.insert("training_documents".into(), train_docs.len());
    let empty = m.rows().filter(|r| r.iter().all(|&v| v == 0.0)).count();
    if empty > 0 {
        out.warn(format!("{empty} diagnoses share no stem with the training vocabulary"));
    }
    write_json(&layout.text_corpus(), &corpus)?;
    save_matrix(&layout.feature(Source::Diagnosis), &m)?;
    Ok(out)
}

/// Row-major pixel matrix scaled to [0, 1], one row per image.
pub fn pixel_matrix(ids: Vec<String>, images: &[Vec<u8>]) -> Result<EmbeddingMatrix> {
    let d = images.first().map_or(0, Vec::len);
    if images.iter().any(|p| p.len() != d) {
        return Err(PipelineError::Input("exported images differ in size".into()));
    }
    let data = images.iter().flat_map(|p| p.iter().map(|&v| f64::from(v) / 255.0)).collect();
    Ok(EmbeddingMatrix::new(ids, Source::Image, d, data)?)
}

pub fn image_embedding(pca: &PcaModel, pixels: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    Ok(pca_transform(pca, pixels)?.with_source(Source::Image))
}

pub fn extract(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutcome> {
    let cohort = Cohort::load(&layout.cohort())?;
    let images: Vec<Vec<u8>> = cohort
        .ids
        .par_iter()
        .map(|id| {
            let p = layout.png(id);
            let bytes = fs::read(&p).map_err(|e| PipelineError::io(&p, e))?;
            Ok(read_gray_png(&bytes)?.2)
        })
        .collect::<Result<_>>()?;
    let pixels = pixel_matrix(cohort.ids.clone(), &images)?;
    let train = cohort.rows(Split::Train);
    cohort.assert_train(&train, "PCA fitting")?;
    let model = pca_fit(&pixels.select_rows(&train), cfg.images.pca_components, cfg.images.solver, derive_seed(cfg.seed, "pca"))?
        .with_whitening(cfg.images.whiten);
    let m = image_embedding(&model, &pixels)?;
    let mut out = StageOutcome::default();
    out.counts.insert("image_dim".into(), m.ncols());
    out.counts.insert("pixels_per_image".into(), pixels.ncols());
    write_json(&layout.pca(), &model)?;
    save_matrix(&layout.feature(Source::Image), &m)?;
    Ok(out)
}
