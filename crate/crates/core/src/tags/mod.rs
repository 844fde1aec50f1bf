//! DICOM tag preprocessing: a column-typed table with missing cells,
//! multi-value splitting, body-part imputation rules, column filtering,
//! missingness analysis, MissForest imputation and encoding.

pub mod bpe;
pub mod encode;
pub mod forest;
pub mod missforest;
pub mod missingness;
pub mod stats;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dicom::{tag_by_name, tag_name, tag_vr, DicomInstance, Vr};

pub use bpe::{impute_bpe, BpeRule, BpeRules};
pub use encode::{ApplyReport, EncodedColumn, Encoder};
pub use missforest::{missforest_impute, FrozenImputer, MissForestOptions, MissForestReport};
pub use missingness::{missingness_report, MissingnessReport};

#[derive(Debug, Error)]
pub enum TagError {
    #[error("rules file invalid: {0}")]
    RulesFileInvalid(String),
    #[error("column {0} has no observed values")]
    AllMissingColumn(String),
    #[error("table needs at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("table is not complete: column {0} has missing cells")]
    Incomplete(String),
    #[error("schema drift: column {0} missing from the input table")]
    SchemaDrift(String),
    #[error("column {column} is {expected:?} in the encoder but {got:?} in the table")]
    KindMismatch { column: String, expected: ColumnKind, got: ColumnKind },
    #[error("table file: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Matrix(#[from] crate::matrix::MatrixError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Continuous(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn kind(&self) -> ColumnKind {
        match self.data {
            ColumnData::Continuous(_) => ColumnKind::Continuous,
            ColumnData::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Continuous(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match &self.data {
            ColumnData::Continuous(v) => v[row].is_none(),
            ColumnData::Categorical(v) => v[row].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_missing(i)).count()
    }

    pub fn fill_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        1.0 - self.missing_count() as f64 / self.len() as f64
    }

    /// Distinct observed values, rendered as strings.
    pub fn distinct(&self) -> BTreeSet<String> {
        match &self.data {
            ColumnData::Continuous(v) => v.iter().flatten().map(|x| x.to_string()).collect(),
            ColumnData::Categorical(v) => v.iter().flatten().cloned().collect(),
        }
    }

    fn cell_string(&self, row: usize) -> String {
        match &self.data {
            ColumnData::Continuous(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
            ColumnData::Categorical(v) => v[row].clone().unwrap_or_default(),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        let data = match &self.data {
            ColumnData::Continuous(v) => ColumnData::Continuous(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical(v) => ColumnData::Categorical(rows.iter().map(|&i| v[i].clone()).collect()),
        };
        Column { name: self.name.clone(), data }
    }
}

/// Instances × tag columns. A cell is missing exactly when it is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct TagTable {
    pub ids: Vec<String>,
    pub columns: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSchema {
    pub columns: Vec<ColumnSchema>,
}

impl TagTable {
    pub fn nrows(&self) -> usize {
        self.ids.len()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// n × p mask, row-major; true where a cell is missing.
    pub fn missing_mask(&self) -> Vec<Vec<bool>> {
        (0..self.nrows()).map(|i| self.columns.iter().map(|c| c.is_missing(i)).collect()).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.columns.iter().all(|c| c.missing_count() == 0)
    }

    pub fn schema(&self) -> TableSchema {
        TableSchema { columns: self.columns.iter().map(|c| ColumnSchema { name: c.name.clone(), kind: c.kind() }).collect() }
    }

    pub fn select_rows(&self, rows: &[usize]) -> TagTable {
        TagTable {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
        }
    }

    /// Builds typed columns from split string cells. A column is continuous
    /// when every observed value parses as a finite number and the hint does
    /// not say otherwise.
    pub fn from_string_columns(
        ids: Vec<String>,
        columns: Vec<(String, Vec<Option<String>>)>,
        hint: impl Fn(&str) -> Option<ColumnKind>,
    ) -> TagTable {
        let columns = columns
            .into_iter()
            .map(|(name, cells)| {
                let numeric: Option<Vec<Option<f64>>> = cells
                    .iter()
                    .map(|c| match c {
                        None => Some(None),
                        Some(s) => s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).map(Some),
                    })
                    .collect();
                let data = match (hint(&name), numeric) {
                    (Some(ColumnKind::Categorical), _) | (_, None) => ColumnData::Categorical(cells),
                    (_, Some(v)) => ColumnData::Continuous(v),
                };
                Column { name, data }
            })
            .collect();
        TagTable { ids, columns }
    }

    /// Reads `<path>` (CSV) typed by the schema at `<path>.schema.json`.
    pub fn load(path: &Path) -> Result<TagTable, TagError> {
        let schema: TableSchema = serde_json::from_slice(&fs::read(schema_path(path))?)?;
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let mut cols: Vec<Vec<Option<String>>> = vec![Vec::new(); schema.columns.len()];
        let positions: Vec<usize> = schema
            .columns
            .iter()
            .map(|c| headers.iter().position(|h| h == c.name).ok_or_else(|| TagError::SchemaDrift(c.name.clone())))
            .collect::<Result<_, _>>()?;
        let mut ids = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            ids.push(rec.get(0).unwrap_or_default().to_owned());
            for (c, &p) in positions.iter().enumerate() {
                let v = rec.get(p).unwrap_or_default();
                cols[c].push((!v.is_empty()).then(|| v.to_owned()));
            }
        }
        let kinds: HashMap<String, ColumnKind> = schema.columns.iter().map(|c| (c.name.clone(), c.kind)).collect();
        let named = schema.columns.iter().map(|c| c.name.clone()).zip(cols).collect();
        let table = TagTable::from_string_columns(ids, named, |n| kinds.get(n).copied());
        for (col, s) in table.columns.iter().zip(&schema.columns) {
            if col.kind() != s.kind {
                return Err(TagError::KindMismatch { column: s.name.clone(), expected: s.kind, got: col.kind() });
            }
        }
        Ok(table)
    }

    /// Writes the CSV (first column `instance_id`, empty cell = missing) and
    /// its schema sidecar.
    pub fn save(&self, path: &Path) -> Result<(), TagError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["instance_id".to_owned()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for i in 0..self.nrows() {
            let mut rec = vec![self.ids[i].clone()];
            rec.extend(self.columns.iter().map(|c| c.cell_string(i)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        fs::write(schema_path(path), serde_json::to_vec_pretty(&self.schema())?)?;
        Ok(())
    }
}

fn schema_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".schema.json");
    p.into()
}

/// Per-instance raw tag values keyed by tag name; each value is the list
/// of its components in file order.
pub type RawTagRow = BTreeMap<String, Vec<String>>;

pub fn raw_row(instance: &DicomInstance) -> RawTagRow {
    instance
        .tags
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(t, v)| (tag_name(*t), v.values().into_iter().map(|s| s.trim().to_owned()).collect()))
        .collect()
}

/// Splits multi-valued tags into one column per position: a tag whose
/// longest value has m > 1 components becomes `Tag0 .. Tag{m-1}`; shorter
/// rows are padded with missing cells. Single-valued tags keep their name.
/// Columns come out ordered by tag name.
pub fn split_multivalue(rows: &[RawTagRow]) -> Vec<(String, Vec<Option<String>>)> {
    let mut arity: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rows {
        for (k, v) in r {
            let a = arity.entry(k).or_insert(0);
            *a = (*a).max(v.len());
        }
    }
    let mut out = Vec::new();
    for (name, m) in arity {
        for pos in 0..m.max(1) {
            let col_name = if m > 1 { format!("{name}{pos}") } else { name.to_owned() };
            let cells = rows
                .iter()
                .map(|r| r.get(name).and_then(|v| v.get(pos)).filter(|s| !s.is_empty()).cloned())
                .collect();
            out.push((col_name, cells));
        }
    }
    out
}

/// Kind hint from the DICOM dictionary: numeric VRs are continuous,
/// code-string and other text VRs categorical. Split columns (`X0`, `X1`)
/// resolve through their base name.
pub fn dictionary_kind(column: &str) -> Option<ColumnKind> {
    let base = column.trim_end_matches(|c: char| c.is_ascii_digit());
    let tag = tag_by_name(column).or_else(|| tag_by_name(base))?;
    match tag_vr(tag)? {
        Vr::DS | Vr::IS | Vr::US | Vr::SS | Vr::UL | Vr::SL | Vr::FL | Vr::FD => Some(ColumnKind::Continuous),
        _ => Some(ColumnKind::Categorical),
    }
}

/// Builds the raw tag table for a set of parsed instances.
pub fn table_from_instances(instances: &[DicomInstance]) -> TagTable {
    let rows: Vec<RawTagRow> = instances.iter().map(raw_row).collect();
    let ids = instances.iter().map(|i| i.instance_id.clone()).collect();
    TagTable::from_string_columns(ids, split_multivalue(&rows), dictionary_kind)
}

/// Identifier and free-text tags dropped before encoding, plus the two
/// target tags so the tag embedding does not contain the labels it is
/// scored against.
pub const DEFAULT_BLOCKLIST: &[&str] = &[
    "SOPInstanceUID",
    "StudyInstanceUID",
    "SeriesInstanceUID",
    "TransferSyntaxUID",
    "SpecificCharacterSet",
    "PatientID",
    "AccessionNumber",
    "InstanceNumber",
    "ProtocolName",
    "StudyDescription",
    "SeriesDescription",
    "RequestedProcedureDescription",
    "AdmittingDiagnosesDescription",
    "ImageComments",
    "Modality",
    "BodyPartExamined",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterOptions {
    pub fill_rate_min: f64,
    pub min_distinct: usize,
    pub max_categories: usize,
    pub blocklist: Vec<String>,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            fill_rate_min: 0.35,
            min_distinct: 2,
            max_categories: 50,
            blocklist: DEFAULT_BLOCKLIST.iter().map(|s| (*s).to_owned()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Blocklisted,
    LowFillRate,
    TooFewDistinct,
    TooManyCategories,
}

/// Drops blocklisted, sparse, near-constant and high-cardinality columns.
/// A split column is blocklisted through its base tag name as well.
pub fn filter_tags(table: &TagTable, opts: &FilterOptions) -> (TagTable, Vec<(String, DropReason)>) {
    let block: BTreeSet<&str> = opts.blocklist.iter().map(String::as_str).collect();
    let mut dropped = Vec::new();
    let mut kept = Vec::new();
    for c in &table.columns {
        let base = c.name.trim_end_matches(|ch: char| ch.is_ascii_digit());
        let reason = if block.contains(c.name.as_str()) || block.contains(base) {
            Some(DropReason::Blocklisted)
        } else if c.fill_rate() < opts.fill_rate_min {
            Some(DropReason::LowFillRate)
        } else {
            let distinct = c.distinct().len();
            if distinct < opts.min_distinct {
                Some(DropReason::TooFewDistinct)
            } else if c.kind() == ColumnKind::Categorical && distinct > opts.max_categories {
                Some(DropReason::TooManyCategories)
            } else {
                None
            }
        };
        match reason {
            Some(r) => dropped.push((c.name.clone(), r)),
            None => kept.push(c.clone()),
        }
    }
    (TagTable { ids: table.ids.clone(), columns: kept }, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pairs: &[(&str, &[&str])]) -> RawTagRow {
        pairs.iter().map(|(k, v)| ((*k).to_owned(), v.iter().map(|s| (*s).to_owned()).collect())).collect()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("i{i}")).collect()
    }

    #[test]
    fn split_examples() {
        let cols = split_multivalue(&[row(&[("ImageType", &["ORIGINAL", "PRIMARY"]), ("Modality", &["CT"])])]);
        assert_eq!(cols[0], ("ImageType0".to_owned(), vec![Some("ORIGINAL".to_owned())]));
        assert_eq!(cols[1], ("ImageType1".to_owned(), vec![Some("PRIMARY".to_owned())]));
        assert_eq!(cols[2], ("Modality".to_owned(), vec![Some("CT".to_owned())]));

        let cols = split_multivalue(&[row(&[("X", &["a"])]), row(&[("X", &["b", "c", "d"])])]);
        let names: Vec<&str> = cols.iter().map(|c| c.0.as_str()).collect();
        assert_eq!(names, ["X0", "X1", "X2"]);
        assert_eq!(cols[0].1, vec![Some("a".to_owned()), Some("b".to_owned())]);
        assert_eq!(cols[1].1, vec![None, Some("c".to_owned())]);
        assert_eq!(cols[2].1, vec![None, Some("d".to_owned())]);
    }

    #[test]
    fn kinds_follow_dictionary_and_parsing() {
        let rows = [row(&[("KVP", &["120"]), ("PatientSex", &["1"]), ("Custom", &["3.5"]), ("Other", &["x"])])];
        let t = TagTable::from_string_columns(ids(1), split_multivalue(&rows), dictionary_kind);
        let kind = |n: &str| t.column(n).unwrap().kind();
        assert_eq!(kind("KVP"), ColumnKind::Continuous);
        assert_eq!(kind("PatientSex"), ColumnKind::Categorical);
        assert_eq!(kind("Custom"), ColumnKind::Continuous);
        assert_eq!(kind("Other"), ColumnKind::Categorical);
        assert_eq!(dictionary_kind("WindowCenter1"), Some(ColumnKind::Continuous));
    }

    fn cat(name: &str, cells: &[Option<&str>]) -> Column {
        Column { name: name.into(), data: ColumnData::Categorical(cells.iter().map(|c| c.map(str::to_owned)).collect()) }
    }

    #[test]
    fn filter_examples() {
        let n = 100;
        let filled = |k: usize| -> Vec<Option<&str>> { (0..n).map(|i| if i < k { Some(if i % 2 == 0 { "a" } else { "b" }) } else { None }).collect() };
        let table = TagTable {
            ids: ids(n),
            columns: vec![
                cat("Sparse", &filled(34)),
                cat("Enough", &filled(35)),
                cat("Constant", &vec![Some("x"); n]),
                cat("SOPInstanceUID", &filled(n)),
                cat("ImageType0", &filled(n)),
            ],
        };
        let mut opts = FilterOptions::default();
        opts.blocklist.push("ImageType".into());
        let (kept, dropped) = filter_tags(&table, &opts);
        let names: Vec<&str> = kept.columns.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["Enough"]);
        assert!(dropped.contains(&("Sparse".into(), DropReason::LowFillRate)));
        assert!(dropped.contains(&("Constant".into(), DropReason::TooFewDistinct)));
        assert!(dropped.contains(&("SOPInstanceUID".into(), DropReason::Blocklisted)));
        assert!(dropped.contains(&("ImageType0".into(), DropReason::Blocklisted)));
        // idempotent
        assert_eq!(filter_tags(&kept, &opts).0, kept);

        let many: Vec<String> = (0..51).map(|i| format!("v{i}")).collect();
        let wide = TagTable { ids: ids(51), columns: vec![cat("Wide", &many.iter().map(|s| Some(s.as_str())).collect::<Vec<_>>())] };
        assert_eq!(filter_tags(&wide, &opts).1, vec![("Wide".into(), DropReason::TooManyCategories)]);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let table = TagTable {
            ids: ids(3),
            columns: vec![
                Column { name: "KVP".into(), data: ColumnData::Continuous(vec![Some(120.0), None, Some(80.5)]) },
                cat("PatientSex", &[Some("M"), Some("F"), None]),
                // numeric-looking but categorical by schema
                cat("Code", &[Some("1"), Some("2"), Some("1")]),
            ],
        };
        let path = dir.path().join("tags.csv");
        table.save(&path).unwrap();
        assert_eq!(TagTable::load(&path).unwrap(), table);
        assert_eq!(table.missing_mask()[1], vec![true, false, false]);
    }
}
