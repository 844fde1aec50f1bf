//! One-hot and min-max encoding of a complete tag table.
//!
//! The encoder is fitted on the training split and then applied unchanged
//! to every other split and to bulk data.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ColumnData, ColumnKind, TagError, TagTable};
use crate::matrix::{EmbeddingMatrix, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncodedColumn {
    Continuous { name: String, min: f64, max: f64 },
    Categorical { name: String, categories: Vec<String> },
}

impl EncodedColumn {
    pub fn name(&self) -> &str {
        match self {
            EncodedColumn::Continuous { name, .. } | EncodedColumn::Categorical { name, .. } => name,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            EncodedColumn::Continuous { .. } => 1,
            EncodedColumn::Categorical { categories, .. } => categories.len(),
        }
    }

    fn kind(&self) -> ColumnKind {
        match self {
            EncodedColumn::Continuous { .. } => ColumnKind::Continuous,
            EncodedColumn::Categorical { .. } => ColumnKind::Categorical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub columns: Vec<EncodedColumn>,
    /// Continuous columns with min = max on the training table.
    pub zero_range_dropped: Vec<String>,
    #[serde(default)]
    pub clamp: bool,
}

/// Cells that fell outside what the encoder saw during fitting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApplyReport {
    /// Continuous cells scaled outside [0, 1] (or clamped, if enabled).
    pub out_of_range: BTreeMap<String, usize>,
    /// Categorical cells whose category was not in the vocabulary.
    pub unseen: BTreeMap<String, usize>,
    pub clamped: bool,
}

impl ApplyReport {
    pub fn total_out_of_range(&self) -> usize {
        self.out_of_range.values().sum()
    }

    pub fn total_unseen(&self) -> usize {
        self.unseen.values().sum()
    }
}

fn require_complete(table: &TagTable) -> Result<(), TagError> {
    match table.columns.iter().find(|c| c.missing_count() > 0) {
        Some(c) => Err(TagError::Incomplete(c.name.clone())),
        None => Ok(()),
    }
}

impl Encoder {
    pub fn fit(table: &TagTable) -> Result<Encoder, TagError> {
        require_complete(table)?;
        let mut columns = Vec::new();
        let mut zero_range_dropped = Vec::new();
        for c in &table.columns {
            match &c.data {
                ColumnData::Continuous(v) => {
                    let (min, max) = v.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
                    if min < max {
                        columns.push(EncodedColumn::Continuous { name: c.name.clone(), min, max });
                    } else {
                        zero_range_dropped.push(c.name.clone());
                    }
                }
                ColumnData::Categorical(_) => {
                    columns.push(EncodedColumn::Categorical { name: c.name.clone(), categories: c.distinct().into_iter().collect() });
                }
            }
        }
        Ok(Encoder { columns, zero_range_dropped, clamp: false })
    }

    pub fn dim(&self) -> usize {
        self.columns.iter().map(EncodedColumn::width).sum()
    }

    /// `Name` for continuous columns, `Name=category` for one-hot slots.
    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .flat_map(|c| match c {
                EncodedColumn::Continuous { name, .. } => vec![name.clone()],
                EncodedColumn::Categorical { name, categories } => categories.iter().map(|k| format!("{name}={k}")).collect(),
            })
            .collect()
    }

    /// Column names the input table must provide.
    pub fn required_columns(&self) -> Vec<&str> {
        self.columns.iter().map(EncodedColumn::name).collect()
    }

    pub fn apply(&self, table: &TagTable) -> Result<(EmbeddingMatrix, ApplyReport), TagError> {
        let n = table.nrows();
        let d = self.dim();
        let mut data = vec![0.0; n * d];
        let mut report = ApplyReport { clamped: self.clamp, ..Default::default() };
        let mut offset = 0;
        for enc in &self.columns {
            let col = table.column(enc.name()).ok_or_else(|| TagError::SchemaDrift(enc.name().to_owned()))?;
            if col.kind() != enc.kind() {
                return Err(TagError::KindMismatch { column: enc.name().to_owned(), expected: enc.kind(), got: col.kind() });
            }
            if col.missing_count() > 0 {
                return Err(TagError::Incomplete(col.name.clone()));
            }
            match (enc, &col.data) {
                (EncodedColumn::Continuous { name, min, max }, ColumnData::Continuous(v)) => {
                    let mut outside = 0;
                    for (i, x) in v.iter().flatten().enumerate() {
                        let mut s = (x - min) / (max - min);
                        if !(0.0..=1.0).contains(&s) {
                            outside += 1;
                            if self.clamp {
                                s = s.clamp(0.0, 1.0);
                            }
                        }
                        data[i * d + offset] = s;
                    }
                    if outside > 0 {
                        report.out_of_range.insert(name.clone(), outside);
                    }
                }
                (EncodedColumn::Categorical { name, categories }, ColumnData::Categorical(v)) => {
                    let mut unseen = 0;
                    for (i, x) in v.iter().flatten().enumerate() {
                        match categories.binary_search(x) {
                            Ok(k) => data[i * d + offset + k] = 1.0,
                            Err(_) => unseen += 1,
                        }
                    }
                    if unseen > 0 {
                        report.unseen.insert(name.clone(), unseen);
                    }
                }
                _ => unreachable!("kinds checked above"),
            }
            offset += enc.width();
        }
        Ok((EmbeddingMatrix::new(table.ids.clone(), Source::Tags, d, data)?, report))
    }

    pub fn save(&self, path: &Path) -> Result<(), TagError> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Encoder, TagError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Fits on `table` and encodes it.
pub fn encode(table: &TagTable) -> Result<(EmbeddingMatrix, Encoder), TagError> {
    let enc = Encoder::fit(table)?;
    let (m, _) = enc.apply(table)?;
    Ok((m, enc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tags::Column;
    use proptest::prelude::*;

    fn table(cols: Vec<Column>) -> TagTable {
        let n = cols[0].len();
        TagTable { ids: (0..n).map(|i| format!("i{i}")).collect(), columns: cols }
    }

    fn cont(name: &str, v: &[f64]) -> Column {
        Column { name: name.into(), data: ColumnData::Continuous(v.iter().map(|&x| Some(x)).collect()) }
    }

    fn cat(name: &str, v: &[&str]) -> Column {
        Column { name: name.into(), data: ColumnData::Categorical(v.iter().map(|s| Some((*s).to_owned())).collect()) }
    }

    #[test]
    fn one_hot_and_min_max() {
        let t = table(vec![cat("Modality", &["CT", "MR", "CR"]), cont("Kvp", &[0.0, 50.0, 100.0])]);
        let (m, enc) = encode(&t).unwrap();
        assert_eq!(enc.dim(), 4);
        assert_eq!(enc.feature_names(), ["Modality=CR", "Modality=CT", "Modality=MR", "Kvp"]);
        assert_eq!(m.row(0), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 0.0, 1.0, 0.5]);
        assert_eq!(m.row(2), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.source, Source::Tags);
    }

    #[test]
    fn out_of_range_and_unseen_at_apply_time() {
        let enc = Encoder::fit(&table(vec![cont("x", &[0.0, 100.0]), cat("c", &["a", "b"])])).unwrap();
        let (m, rep) = enc.apply(&table(vec![cont("x", &[120.0]), cat("c", &["z"])])).unwrap();
        assert!((m.get(0, 0) - 1.2).abs() < 1e-15);
        assert_eq!(&m.row(0)[1..], &[0.0, 0.0]);
        assert_eq!(rep.total_out_of_range(), 1);
        assert_eq!(rep.total_unseen(), 1);

        let clamped = Encoder { clamp: true, ..enc };
        let (m, rep) = clamped.apply(&table(vec![cont("x", &[-20.0]), cat("c", &["a"])])).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        assert!(rep.clamped);
        assert_eq!(rep.total_out_of_range(), 1);
    }

    #[test]
    fn zero_range_column_is_dropped_and_flagged() {
        let enc = Encoder::fit(&table(vec![cont("k", &[3.0, 3.0]), cont("x", &[1.0, 2.0])])).unwrap();
        assert_eq!(enc.zero_range_dropped, ["k"]);
        assert_eq!(enc.dim(), 1);
    }

    #[test]
    fn errors() {
        let enc = Encoder::fit(&table(vec![cont("x", &[0.0, 1.0])])).unwrap();
        assert!(matches!(enc.apply(&table(vec![cont("y", &[0.5])])), Err(TagError::SchemaDrift(c)) if c == "x"));
        assert!(matches!(enc.apply(&table(vec![cat("x", &["a"])])), Err(TagError::KindMismatch { .. })));
        let holes = table(vec![Column { name: "x".into(), data: ColumnData::Continuous(vec![None, Some(1.0)]) }]);
        assert!(matches!(Encoder::fit(&holes), Err(TagError::Incomplete(_))));
    }

    #[test]
    fn persisted_state_reproduces_output() {
        let t = table(vec![cat("c", &["a", "b", "a"]), cont("x", &[1.0, 5.0, 3.0])]);
        let (m, enc) = encode(&t).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("enc.json");
        enc.save(&p).unwrap();
        let back = Encoder::load(&p).unwrap();
        assert_eq!(back, enc);
        assert_eq!(back.apply(&t).unwrap().0, m);
    }

    proptest! {
        #[test]
        fn train_encoding_is_bounded_and_one_hot(
            rows in prop::collection::vec((-1e6f64..1e6, 0usize..4), 2..40)
        ) {
            let names = ["p", "q", "r", "s"];
            let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let cs: Vec<&str> = rows.iter().map(|r| names[r.1]).collect();
            let t = table(vec![cont("x", &xs), cat("c", &cs)]);
            let (m, enc) = encode(&t).unwrap();
            let x_cols = usize::from(enc.zero_range_dropped.is_empty());
            for row in m.rows() {
                for &v in &row[..x_cols] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert_eq!(row[x_cols..].iter().sum::<f64>(), 1.0);
            }
        }
    }
}
