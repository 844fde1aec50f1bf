//! Pipeline configuration: one JSON file, unknown keys rejected, seed
//! mandatory. Relative paths resolve against the directory of the file.

use std::path::{Path, PathBuf};

use radlabel_core::clustering::{Algorithm, KMeansOptions, Metric};
use radlabel_core::dicom::ExtractionSpec;
use radlabel_core::fusion::{FusionMethod, NormScope};
use radlabel_core::image::ExportOptions;
use radlabel_core::matrix::Source;
use radlabel_core::metrics::SmallClusterPolicy;
use radlabel_core::pca::PcaSolver;
use radlabel_core::split::{Split, SplitFractions};
use radlabel_core::tags::forest::ForestOptions;
use radlabel_core::tags::FilterOptions;
use radlabel_core::text::TextVectorizer;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub const DEFAULT_KAPPA_GRID: [usize; 11] = [5, 10, 15, 20, 25, 30, 40, 50, 75, 100, 150];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub images: ImageConfig,
    #[serde(default)]
    pub tags: TagConfig,
    #[serde(default)]
    pub text: TextConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub label: LabelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Corpus root holding `dicom/` and `diagnoses.csv`.
    pub input: PathBuf,
    pub output: PathBuf,
    /// BodyPartExamined rules; the bundled starter rules when absent.
    pub bpe_rules: Option<PathBuf>,
    /// Stemmer rules; the bundled starter rules when absent.
    pub stemmer_rules: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { input: PathBuf::from("corpus"), output: PathBuf::from("out"), bpe_rules: None, stemmer_rules: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    /// Exams with more files than this are dropped whole.
    pub max_files_per_exam: usize,
    pub extraction: ExtractionSpec,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { max_files_per_exam: 15, extraction: ExtractionSpec::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageConfig {
    pub export: ExportOptions,
    pub pca_components: usize,
    pub solver: PcaSolver,
    /// Scale every principal component to unit variance.
    pub whiten: bool,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self { export: ExportOptions::default(), pca_components: 8, solver: PcaSolver::Randomized, whiten: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TagConfig {
    pub filter: FilterOptions,
    pub missforest_max_iter: usize,
    pub forest: ForestOptions,
    /// Trees per column in the frozen imputer used for every split.
    pub imputer_trees: usize,
    /// Clamp encoded continuous values into [0, 1] outside the training range.
    pub clamp: bool,
}

impl Default for TagConfig {
    fn default() -> Self {
        Self {
            filter: FilterOptions::default(),
            missforest_max_iter: 10,
            forest: ForestOptions::default(),
            imputer_trees: 30,
            clamp: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextConfig {
    pub min_word_frequency: usize,
    pub vectorizer: TextVectorizer,
    pub normalize_bow: bool,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self { min_word_frequency: 2, vectorizer: TextVectorizer::Tfidf, normalize_bow: false }
    }
}

/// An (algorithm, metric) pair; κ comes from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub algorithm: Algorithm,
    pub metric: Metric,
}

impl SpecConfig {
    pub fn name(&self) -> String {
        format!("{}-{}", self.algorithm.as_str(), self.metric.as_str())
    }
}

impl Default for SpecConfig {
    fn default() -> Self {
        Self { algorithm: Algorithm::KMeans, metric: Metric::Euclidean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub kappa_grid: Vec<usize>,
    pub specs: Vec<SpecConfig>,
    pub kmeans: KMeansOptions,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self { kappa_grid: DEFAULT_KAPPA_GRID.to_vec(), specs: vec![SpecConfig::default()], kmeans: KMeansOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub methods: Vec<FusionMethod>,
    pub norm_scope: NormScope,
    /// κ of the per-source models feeding the distance methods; the
    /// elbow of each source when absent.
    pub source_kappa: Option<usize>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { methods: FusionMethod::ALL.to_vec(), norm_scope: NormScope::default(), source_kappa: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub split: Split,
    /// κ used for the selected reports; the elbow of each run when absent.
    pub kappa: Option<usize>,
    pub small_clusters: SmallClusterPolicy,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { split: Split::Test, kappa: None, small_clusters: SmallClusterPolicy::default() }
    }
}

/// Which fitted model `label` applies to a new corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub sources: Vec<Source>,
    pub method: FusionMethod,
    pub spec: SpecConfig,
    /// The elbow κ of the chosen run when absent.
    pub kappa: Option<usize>,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            sources: vec![Source::Diagnosis, Source::Tags, Source::Image],
            method: FusionMethod::Embeddings,
            spec: SpecConfig::default(),
            kappa: None,
        }
    }
}

impl PipelineConfig {
    /// A config with every default and the given seed.
    pub fn with_seed(seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "seed": seed })).expect("defaults are valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, validates and anchors relative paths at the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve_against(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.split.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let grid = &self.clustering.kappa_grid;
        if grid.is_empty() || grid[0] == 0 {
            return bad("kappa_grid must hold positive values".into());
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("kappa_grid must be strictly increasing, got {grid:?}"));
        }
        if grid.len() < 3 && (self.evaluation.kappa.is_none() || self.fusion.source_kappa.is_none() || self.label.kappa.is_none()) {
            return bad("kappa_grid needs at least 3 values for the elbow unless every κ is fixed".into());
        }
        if self.clustering.specs.is_empty() {
            return bad("clustering.specs is empty".into());
        }
        for s in &self.clustering.specs {
            if s.algorithm == Algorithm::KMeans && s.metric == Metric::Cosine {
                return bad("k-means supports only the euclidean metric".into());
            }
        }
        if !self.clustering.specs.contains(&self.label.spec) {
            return bad(format!("label.spec {} is not among clustering.specs", self.label.spec.name()));
        }
        for (what, k) in [("evaluation.kappa", self.evaluation.kappa), ("fusion.source_kappa", self.fusion.source_kappa), ("label.kappa", self.label.kappa)] {
            if let Some(k) = k {
                if !grid.contains(&k) {
                    return bad(format!("{what} = {k} is not on the kappa grid"));
                }
            }
        }
        if self.ingest.max_files_per_exam == 0 {
            return bad("ingest.max_files_per_exam must be at least 1".into());
        }
        if self.images.pca_components == 0 {
            return bad("images.pca_components must be at least 1".into());
        }
        if self.text.min_word_frequency == 0 {
            return bad("text.min_word_frequency must be at least 1".into());
        }
        if self.tags.missforest_max_iter == 0 || self.tags.imputer_trees == 0 {
            return bad("tags.missforest_max_iter and tags.imputer_trees must be at least 1".into());
        }
        let mut sources = self.label.sources.clone();
        sources.sort();
        sources.dedup();
        if sources.is_empty() || sources.len() != self.label.sources.len() || sources.contains(&Source::Fused) {
            return bad("label.sources must list distinct diagnosis/tags/image sources".into());
        }
        if sources.len() > 1 && !self.fusion.methods.contains(&self.label.method) {
            return bad(format!("label.method {} is not among fusion.methods", self.label.method.as_str()));
        }
        Ok(())
    }
}

impl PathsConfig {
    fn resolve_against(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input);
        fix(&mut self.output);
        if let Some(p) = self.bpe_rules.as_mut() {
            fix(p);
        }
        if let Some(p) = self.stemmer_rules.as_mut() {
            fix(p);
        }
    }
}
