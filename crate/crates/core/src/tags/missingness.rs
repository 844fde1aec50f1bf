//! Univariate evidence on whether each column's missingness depends on the
//! other columns.
//!
//! For a column `m` with missing cells, every other column `o` is split into
//! the rows where `m` is missing and the rows where it is present. Continuous
//! `o` goes through a Shapiro-Wilk gate on both sides and then a t-test or a
//! Mann-Whitney U test; categorical `o` gets a chi-square test on the 2×C
//! contingency table.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::stats::{chi_square, mann_whitney_u, shapiro_wilk, t_test};
use super::{ColumnData, TagError, TagTable};

pub const ALPHA: f64 = 0.05;
pub const SHAPIRO_MAX_N: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    TTest,
    MannWhitney,
    ChiSquare,
    Skipped,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::TTest => "t_test",
            TestKind::MannWhitney => "mann_whitney",
            TestKind::ChiSquare => "chi_square",
            TestKind::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairTest {
    pub missing_column: String,
    pub other_column: String,
    pub test: TestKind,
    pub n_missing_side: usize,
    pub n_present_side: usize,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// Why a pair was skipped (`DegenerateColumn: ...`).
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnVerdict {
    pub column: String,
    pub missing: usize,
    pub tests_run: usize,
    pub min_p: Option<f64>,
    pub not_mcar: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MissingnessReport {
    pub tests: Vec<PairTest>,
    pub columns: Vec<ColumnVerdict>,
}

impl MissingnessReport {
    pub fn verdict(&self, column: &str) -> Option<&ColumnVerdict> {
        self.columns.iter().find(|v| v.column == column)
    }

    /// One row per tested pair.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TagError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["missing_column", "other_column", "test", "n_missing_side", "n_present_side", "statistic", "p_value", "note"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for t in &self.tests {
            out.write_record([
                t.missing_column.as_str(),
                t.other_column.as_str(),
                t.test.as_str(),
                &t.n_missing_side.to_string(),
                &t.n_present_side.to_string(),
                &opt(t.statistic),
                &opt(t.p_value),
                t.note.as_deref().unwrap_or(""),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn is_normal(side: &[f64], rng: &mut ChaCha8Rng) -> bool {
    let result = if side.len() > SHAPIRO_MAX_N {
        let picked: Vec<f64> = sample(rng, side.len(), SHAPIRO_MAX_N).into_iter().map(|i| side[i]).collect();
        shapiro_wilk(&picked)
    } else {
        shapiro_wilk(side)
    };
    result.is_some_and(|r| r.p_value >= ALPHA)
}

fn continuous_pair(miss: &[f64], present: &[f64], rng: &mut ChaCha8Rng) -> Result<(TestKind, f64, f64), String> {
    let first = miss.first().or(present.first()).copied().unwrap_or(0.0);
    if miss.iter().chain(present).all(|&v| v == first) {
        return Err("constant column".into());
    }
    let normal = is_normal(miss, rng) && is_normal(present, rng);
    let (kind, res) = if normal {
        (TestKind::TTest, t_test(miss, present))
    } else {
        (TestKind::MannWhitney, mann_whitney_u(miss, present))
    };
    res.map(|r| (kind, r.statistic, r.p_value)).ok_or_else(|| format!("{} undefined", kind.as_str()))
}

fn categorical_pair(miss: &[&str], present: &[&str]) -> Result<(TestKind, f64, f64), String> {
    let cats: BTreeSet<&str> = miss.iter().chain(present).copied().collect();
    if cats.len() < 2 {
        return Err("constant column".into());
    }
    let index: BTreeMap<&str, usize> = cats.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let mut table = vec![vec![0.0; cats.len()]; 2];
    miss.iter().for_each(|c| table[0][index[c]] += 1.0);
    present.iter().for_each(|c| table[1][index[c]] += 1.0);
    chi_square(&table)
        .map(|r| (TestKind::ChiSquare, r.statistic, r.p_value))
        .ok_or_else(|| "chi-square undefined".into())
}

/// Runs the test battery for every column with missing cells. `seed`
/// drives the subsampling of partitions larger than the Shapiro-Wilk limit.
pub fn missingness_report(table: &TagTable, seed: u64) -> Result<MissingnessReport, TagError> {
    let n = table.nrows();
    if n < 2 {
        return Err(TagError::TooFewRows { needed: 2, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = MissingnessReport::default();
    for m in table.columns.iter().filter(|c| c.missing_count() > 0) {
        let mut verdict = ColumnVerdict { column: m.name.clone(), missing: m.missing_count(), tests_run: 0, min_p: None, not_mcar: false };
        for o in table.columns.iter().filter(|o| o.name != m.name) {
            let rows = (0..n).filter(|&i| !o.is_missing(i));
            let (miss_rows, present_rows): (Vec<usize>, Vec<usize>) = rows.partition(|&i| m.is_missing(i));
            let outcome = if miss_rows.is_empty() || present_rows.is_empty() {
                Err("empty partition".to_owned())
            } else {
                match &o.data {
                    ColumnData::Continuous(v) => {
                        let pick = |rows: &[usize]| rows.iter().map(|&i| v[i].expect("observed")).collect::<Vec<f64>>();
                        continuous_pair(&pick(&miss_rows), &pick(&present_rows), &mut rng)
                    }
                    ColumnData::Categorical(v) => {
                        let pick = |rows: &[usize]| rows.iter().map(|&i| v[i].as_deref().expect("observed")).collect::<Vec<&str>>();
                        categorical_pair(&pick(&miss_rows), &pick(&present_rows))
                    }
                }
            };
            let mut test = PairTest {
                missing_column: m.name.clone(),
                other_column: o.name.clone(),
                test: TestKind::Skipped,
                n_missing_side: miss_rows.len(),
                n_present_side: present_rows.len(),
                statistic: None,
                p_value: None,
                note: None,
            };
            match outcome {
                Ok((kind, stat, p)) => {
                    test.test = kind;
                    test.statistic = Some(stat);
                    test.p_value = Some(p);
                    verdict.tests_run += 1;
                    verdict.min_p = Some(verdict.min_p.map_or(p, |q: f64| q.min(p)));
                    verdict.not_mcar |= p < ALPHA;
                }
                Err(why) => test.note = Some(format!("DegenerateColumn: {why}")),
            }
            report.tests.push(test);
        }
        report.columns.push(verdict);
    }
    Ok(report)
}
