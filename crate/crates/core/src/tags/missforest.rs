//! Iterative random-forest imputation (MissForest).
//!
//! Categorical columns enter the forests as ordinal category codes; the
//! target of a categorical column is predicted as a class.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use super::forest::{Features, ForestOptions, RandomForest, Target};
use super::{Column, ColumnData, ColumnKind, TagError, TagTable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissForestOptions {
    pub max_iter: usize,
    pub forest: ForestOptions,
}

impl Default for MissForestOptions {
    fn default() -> Self {
        Self { max_iter: 10, forest: ForestOptions::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MissForestReport {
    /// Iterations whose result was kept.
    pub iterations: usize,
    /// Normalized squared change of continuous cells per iteration.
    pub continuous_change: Vec<f64>,
    /// Fraction of missing categorical cells whose value changed.
    pub categorical_change: Vec<f64>,
    pub stopped_on_increase: bool,
}

/// Numeric working copy of a table: continuous values as-is, categories
/// as codes into a sorted vocabulary.
struct Working {
    values: Vec<Vec<f64>>,
    vocab: Vec<Option<Vec<String>>>,
    missing: Vec<Vec<usize>>,
    /// Mean, or mode code, used for the initial fill.
    fill: Vec<f64>,
}

fn to_working(table: &TagTable) -> Result<Working, TagError> {
    let n = table.nrows();
    let mut values = Vec::new();
    let mut vocab = Vec::new();
    let mut missing = Vec::new();
    let mut fill = Vec::new();
    for c in &table.columns {
        let miss: Vec<usize> = (0..n).filter(|&i| c.is_missing(i)).collect();
        if miss.len() == n && n > 0 {
            return Err(TagError::AllMissingColumn(c.name.clone()));
        }
        match &c.data {
            ColumnData::Continuous(v) => {
                let obs: Vec<f64> = v.iter().flatten().copied().collect();
                let mean = obs.iter().sum::<f64>() / obs.len().max(1) as f64;
                values.push(v.iter().map(|x| x.unwrap_or(mean)).collect());
                vocab.push(None);
                fill.push(mean);
            }
            ColumnData::Categorical(v) => {
                let cats: Vec<String> = v.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
                let mut counts = vec![0usize; cats.len()];
                let codes: Vec<Option<usize>> = v
                    .iter()
                    .map(|x| x.as_ref().map(|s| cats.binary_search(s).expect("category in vocabulary")))
                    .collect();
                codes.iter().flatten().for_each(|&k| counts[k] += 1);
                let mode = counts.iter().enumerate().fold(0, |b, (k, &c)| if c > counts[b] { k } else { b });
                values.push(codes.iter().map(|x| x.unwrap_or(mode) as f64).collect());
                vocab.push(Some(cats));
                fill.push(mode as f64);
            }
        }
        missing.push(miss);
    }
    Ok(Working { values, vocab, missing, fill })
}

fn from_working(table: &TagTable, w: &Working) -> TagTable {
    let columns = table
        .columns
        .iter()
        .zip(&w.values)
        .zip(&w.vocab)
        .map(|((c, v), voc)| {
            let data = match voc {
                None => ColumnData::Continuous(v.iter().map(|&x| Some(x)).collect()),
                Some(cats) => ColumnData::Categorical(v.iter().map(|&x| Some(cats[x as usize].clone())).collect()),
            };
            Column { name: c.name.clone(), data }
        })
        .collect();
    TagTable { ids: table.ids.clone(), columns }
}

/// Imputes every missing cell. Observed cells are never changed. Stops
/// when the change between iterations grows (for both column types when
/// both are present) and returns the previous iteration's values.
pub fn missforest_impute(table: &TagTable, seed: u64, opts: MissForestOptions) -> Result<(TagTable, MissForestReport), TagError> {
    let n = table.nrows();
    let p = table.columns.len();
    let mut w = to_working(table)?;
    let mut report = MissForestReport::default();
    let mut order: Vec<usize> = (0..p).filter(|&j| !w.missing[j].is_empty()).collect();
    order.sort_by_key(|&j| w.missing[j].len());
    if order.is_empty() || p < 2 {
        return Ok((from_working(table, &w), report));
    }
    let has_cont = order.iter().any(|&j| w.vocab[j].is_none());
    let has_cat = order.iter().any(|&j| w.vocab[j].is_some());
    let n_missing_cat: usize = order.iter().filter(|&&j| w.vocab[j].is_some()).map(|&j| w.missing[j].len()).sum();
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = (f64::INFINITY, f64::INFINITY);

    for _ in 0..opts.max_iter {
        let old = w.values.clone();
        for &s in &order {
            let preds: Vec<usize> = (0..p).filter(|&j| j != s).collect();
            let row = |i: usize, out: &mut Vec<f64>| preds.iter().for_each(|&j| out.push(w.values[j][i]));
            let missing: BTreeSet<usize> = w.missing[s].iter().copied().collect();
            let observed: Vec<usize> = (0..n).filter(|i| !missing.contains(i)).collect();
            let mut xs = Vec::with_capacity(observed.len() * preds.len());
            observed.iter().for_each(|&i| row(i, &mut xs));
            let features = Features::new(&xs, preds.len());
            let y: Vec<f64> = observed.iter().map(|&i| w.values[s][i]).collect();
            let forest_seed = seeder.random();
            let labels: Vec<usize>;
            let target = match &w.vocab[s] {
                None => Target::Regression(&y),
                Some(cats) => {
                    labels = y.iter().map(|&v| v as usize).collect();
                    Target::Classification { labels: &labels, n_classes: cats.len() }
                }
            };
            let forest = RandomForest::fit(features, target, opts.forest, forest_seed);
            let mut buf = Vec::with_capacity(preds.len());
            let filled: Vec<f64> = w.missing[s]
                .iter()
                .map(|&i| {
                    buf.clear();
                    row(i, &mut buf);
                    match &w.vocab[s] {
                        None => forest.predict_regression(&buf),
                        Some(_) => forest.predict_class(&buf) as f64,
                    }
                })
                .collect();
            for (&i, v) in w.missing[s].iter().zip(filled) {
                w.values[s][i] = v;
            }
        }
        let (mut num, mut den, mut changed) = (0.0, 0.0, 0usize);
        for j in 0..p {
            match w.vocab[j] {
                None => {
                    for i in 0..n {
                        num += (w.values[j][i] - old[j][i]).powi(2);
                        den += w.values[j][i].powi(2);
                    }
                }
                Some(_) => changed += w.missing[j].iter().filter(|&&i| w.values[j][i] != old[j][i]).count(),
            }
        }
        let cont = if den > 0.0 { num / den } else { 0.0 };
        let cat = if n_missing_cat > 0 { changed as f64 / n_missing_cat as f64 } else { 0.0 };
        report.continuous_change.push(cont);
        report.categorical_change.push(cat);
        let grew_cont = cont > prev.0;
        let grew_cat = cat > prev.1;
        let stop = match (has_cont, has_cat) {
            (true, true) => grew_cont && grew_cat,
            (true, false) => grew_cont,
            _ => grew_cat,
        };
        if stop {
            w.values = old;
            report.stopped_on_increase = true;
            break;
        }
        report.iterations += 1;
        prev = (cont, cat);
        if cont == 0.0 && cat == 0.0 {
            break;
        }
    }
    Ok((from_working(table, &w), report))
}

/// Per-column forests learned from a completed training table, applied
/// row by row to any table with the same columns. A row's imputation
/// depends only on that row, so re-imputing the training rows reproduces
/// exactly what the pipeline used at fit time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrozenImputer {
    pub columns: Vec<FrozenColumn>,
    /// Column visiting order: ascending training missingness.
    pub order: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrozenColumn {
    pub name: String,
    pub kind: ColumnKind,
    /// Initial fill: training mean, or the code of the training mode.
    pub fill: f64,
    pub vocab: Option<Vec<String>>,
    pub forest: Option<RandomForest>,
}

impl FrozenImputer {
    /// `raw` is the training table before imputation and `completed` the
    /// same table after it. Each column's forest is trained on the rows
    /// where that column was observed in `raw`.
    pub fn fit(raw: &TagTable, completed: &TagTable, iterations: usize, opts: ForestOptions, seed: u64) -> Result<Self, TagError> {
        if let Some(c) = completed.columns.iter().find(|c| c.missing_count() > 0) {
            return Err(TagError::Incomplete(c.name.clone()));
        }
        let w_raw = to_working(raw)?;
        let w_done = to_working(completed)?;
        let n = raw.nrows();
        let p = raw.columns.len();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by_key(|&j| w_raw.missing[j].len());
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        let mut columns = Vec::with_capacity(p);
        for (s, col) in raw.columns.iter().enumerate() {
            let forest_seed: u64 = seeder.random();
            let fill = w_raw.fill[s];
            let forest = (p >= 2).then(|| {
                let missing: BTreeSet<usize> = w_raw.missing[s].iter().copied().collect();
                let observed: Vec<usize> = (0..n).filter(|i| !missing.contains(i)).collect();
                let mut xs = Vec::with_capacity(observed.len() * (p - 1));
                for &i in &observed {
                    (0..p).filter(|&j| j != s).for_each(|j| xs.push(w_done.values[j][i]));
                }
                let y: Vec<f64> = observed.iter().map(|&i| w_raw.values[s][i]).collect();
                let labels: Vec<usize>;
                let target = match &w_raw.vocab[s] {
                    None => Target::Regression(&y),
                    Some(cats) => {
                        labels = y.iter().map(|&v| v as usize).collect();
                        Target::Classification { labels: &labels, n_classes: cats.len() }
                    }
                };
                RandomForest::fit(Features::new(&xs, p - 1), target, opts, forest_seed)
            });
            columns.push(FrozenColumn { name: col.name.clone(), kind: col.kind(), fill, vocab: w_raw.vocab[s].clone(), forest });
        }
        Ok(FrozenImputer { columns, order, iterations: iterations.max(1) })
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Fills every missing cell of the frozen columns; other columns of
    /// `table` are dropped. Categories unseen during fitting stay in the
    /// output but enter the forests as the training mode.
    pub fn apply(&self, table: &TagTable) -> Result<(TagTable, usize), TagError> {
        let n = table.nrows();
        let p = self.columns.len();
        let mut cols = Vec::with_capacity(p);
        for fc in &self.columns {
            let c = table.column(&fc.name).ok_or_else(|| TagError::SchemaDrift(fc.name.clone()))?;
            if c.kind() != fc.kind {
                return Err(TagError::KindMismatch { column: fc.name.clone(), expected: fc.kind, got: c.kind() });
            }
            cols.push(c);
        }
        let imputed: usize = cols.iter().map(|c| c.missing_count()).sum();
        let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut v = vec![0.0; p];
                let mut miss = vec![false; p];
                for (j, (c, fc)) in cols.iter().zip(&self.columns).enumerate() {
                    v[j] = match &c.data {
                        ColumnData::Continuous(x) => x[i].unwrap_or(fc.fill),
                        ColumnData::Categorical(x) => x[i]
                            .as_ref()
                            .and_then(|s| fc.vocab.as_ref().and_then(|voc| voc.binary_search(s).ok()))
                            .map_or(fc.fill, |k| k as f64),
                    };
                    miss[j] = c.is_missing(i);
                }
                let mut buf = Vec::with_capacity(p.saturating_sub(1));
                for _ in 0..self.iterations {
                    for &s in &self.order {
                        let (true, Some(forest)) = (miss[s], &self.columns[s].forest) else { continue };
                        buf.clear();
                        (0..p).filter(|&j| j != s).for_each(|j| buf.push(v[j]));
                        v[s] = match self.columns[s].kind {
                            ColumnKind::Continuous => forest.predict_regression(&buf),
                            ColumnKind::Categorical => forest.predict_class(&buf) as f64,
                        };
                    }
                }
                (v, miss)
            })
            .collect();
        let columns = cols
            .iter()
            .zip(&self.columns)
            .enumerate()
            .map(|(j, (c, fc))| {
                let data = match &c.data {
                    ColumnData::Continuous(x) => {
                        ColumnData::Continuous((0..n).map(|i| Some(if rows[i].1[j] { rows[i].0[j] } else { x[i].expect("observed") })).collect())
                    }
                    ColumnData::Categorical(x) => ColumnData::Categorical(
                        (0..n)
                            .map(|i| {
                                if rows[i].1[j] {
                                    fc.vocab.as_ref().map(|voc| voc[rows[i].0[j] as usize].clone())
                                } else {
                                    x[i].clone()
                                }
                            })
                            .collect(),
                    ),
                };
                Column { name: fc.name.clone(), data }
            })
            .collect();
        Ok((TagTable { ids: table.ids.clone(), columns }, imputed))
    }
}

/// Baseline: column mean for continuous cells, mode for categorical.
pub fn mean_impute(table: &TagTable) -> Result<TagTable, TagError> {
    Ok(from_working(table, &to_working(table)?))
}

/// Normalized RMSE over the cells that were missing in column `col`:
/// `sqrt(mean((truth − imputed)²) / var(truth))`, variance over the
/// missing cells' true values.
pub fn nrmse(truth: &[f64], imputed: &[f64], missing: &[usize]) -> f64 {
    let t: Vec<f64> = missing.iter().map(|&i| truth[i]).collect();
    let mse = missing.iter().map(|&i| (truth[i] - imputed[i]).powi(2)).sum::<f64>() / t.len() as f64;
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.len() as f64;
    (mse / var).sqrt()
}
