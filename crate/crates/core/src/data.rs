//! Dataset representation, CSV ingestion, categorical binarization, and
//! honest train/validation/test splitting.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column `{0}` not found in CSV header")]
    MissingColumn(String),
    #[error("column `{0}` appears more than once in the schema")]
    DuplicateColumn(String),
    #[error("categorical column `{0}` must declare at least 2 levels")]
    TooFewLevels(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a finite number")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: treatment value `{value}` is not 0 or 1")]
    BadTreatment { row: usize, value: String },
    #[error("row {row}, column `{column}`: binary column holds `{value}`, expected 0 or 1")]
    BadBinary {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: level `{value}` is not in the declared level set")]
    UnseenLevel {
        row: usize,
        column: String,
        value: String,
    },
    #[error("duplicate unit id `{0}`")]
    DuplicateId(String),
    #[error("dataset has no rows")]
    Empty,
    #[error("dataset shape mismatch: {0}")]
    Shape(String),
    #[error("split fractions must satisfy 0 < train, 0 <= validation, train + validation < 1")]
    BadFractions,
    #[error("{split} split is empty: fraction {fraction} of {n} units rounds to zero")]
    EmptySplit {
        split: &'static str,
        fraction: f64,
        n: usize,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Kind of a materialized (already numeric) covariate column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

/// Records that an indicator column was produced from a categorical source,
/// so box bounds can be reported in the original levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalOrigin {
    pub source: String,
    pub level: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    pub origin: Option<CategoricalOrigin>,
}

impl ColumnMeta {
    pub fn continuous(name: impl Into<String>) -> Self {
        ColumnMeta {
            name: name.into(),
            kind: ColumnKind::Continuous,
            origin: None,
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        ColumnMeta {
            name: name.into(),
            kind: ColumnKind::Binary,
            origin: None,
        }
    }
}

/// Declared kind of a raw input column, before binarization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    Continuous,
    Binary,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub name: String,
    /// When false (the default) a missing outcome column yields a dataset
    /// without outcomes instead of an error.
    #[serde(default)]
    pub required: bool,
}

/// Column-role map for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSchema {
    pub covariates: Vec<CovariateSpec>,
    pub treatment: String,
    #[serde(default)]
    pub outcome: Option<OutcomeSpec>,
    /// Column holding unit ids; row numbers are used when absent.
    #[serde(default)]
    pub id: Option<String>,
}

impl DataSchema {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        let mut names: Vec<&str> = self.covariates.iter().map(|c| c.name.as_str()).collect();
        names.push(self.treatment.as_str());
        if let Some(o) = &self.outcome {
            names.push(o.name.as_str());
        }
        if let Some(id) = &self.id {
            names.push(id.as_str());
        }
        for name in names {
            if !seen.insert(name) {
                return Err(DataError::DuplicateColumn(name.to_string()));
            }
        }
        for cov in &self.covariates {
            if let CovariateKind::Categorical { levels } = &cov.kind {
                if levels.len() < 2 || levels.iter().collect::<HashSet<_>>().len() != levels.len()
                {
                    return Err(DataError::TooFewLevels(cov.name.clone()));
                }
            }
        }
        if self.covariates.is_empty() {
            return Err(DataError::Shape("schema declares no covariates".into()));
        }
        Ok(())
    }
}

/// String-valued table straight out of a CSV file, before schema application.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            rows.push(record.iter().map(|c| c.trim().to_string()).collect());
        }
        Ok(RawTable { headers, rows })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    fn column(&self, name: &str) -> Result<usize, DataError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }
}

/// Covariates, treatment indicators, and optional outcomes for n units.
/// Immutable after construction; rows are units, columns are covariates.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Vec<f64>,
    t: Vec<u8>,
    y: Option<Vec<f64>>,
    cols: Vec<ColumnMeta>,
    ids: Vec<String>,
    cat_levels: Vec<(String, Vec<String>)>,
}

impl Dataset {
    /// Builds a dataset from already numeric parts. `x` is row-major n×p.
    pub fn from_parts(
        x: Vec<f64>,
        t: Vec<u8>,
        y: Option<Vec<f64>>,
        cols: Vec<ColumnMeta>,
        ids: Vec<String>,
    ) -> Result<Self, DataError> {
        let n = t.len();
        let p = cols.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        if p == 0 {
            return Err(DataError::Shape("no covariate columns".into()));
        }
        if x.len() != n * p {
            return Err(DataError::Shape(format!(
                "covariate matrix has {} entries, expected {}x{}",
                x.len(),
                n,
                p
            )));
        }
        if ids.len() != n {
            return Err(DataError::Shape(format!(
                "{} unit ids for {} rows",
                ids.len(),
                n
            )));
        }
        if let Some(y) = &y {
            if y.len() != n {
                return Err(DataError::Shape(format!(
                    "{} outcomes for {} rows",
                    y.len(),
                    n
                )));
            }
        }
        if t.iter().any(|&v| v > 1) {
            return Err(DataError::Shape("treatment entries must be 0 or 1".into()));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(DataError::DuplicateId(id.clone()));
            }
        }
        for (j, col) in cols.iter().enumerate() {
            if col.kind == ColumnKind::Binary {
                for (i, row) in x.chunks_exact(p).enumerate() {
                    if row[j] != 0.0 && row[j] != 1.0 {
                        return Err(DataError::BadBinary {
                            row: i + 1,
                            column: col.name.clone(),
                            value: row[j].to_string(),
                        });
                    }
                }
            }
        }
        Ok(Dataset {
            x,
            t,
            y,
            cols,
            ids,
            cat_levels: Vec::new(),
        })
    }

    pub fn from_csv_reader<R: Read>(reader: R, schema: &DataSchema) -> Result<Self, DataError> {
        let raw = RawTable::from_csv_reader(reader)?;
        build_dataset(&raw, schema)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, schema: &DataSchema) -> Result<Self, DataError> {
        let raw = RawTable::from_csv_path(path)?;
        build_dataset(&raw, schema)
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn p(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p()..(i + 1) * self.p()]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.p() + j]
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.t[i] == 1
    }

    pub fn treatments(&self) -> &[u8] {
        &self.t
    }

    pub fn outcome(&self, i: usize) -> Option<f64> {
        self.y.as_ref().map(|y| y[i])
    }

    pub fn outcomes(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    pub fn has_outcomes(&self) -> bool {
        self.y.is_some()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of_id(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|u| u == id)
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.cols
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.cols.iter().position(|c| c.name == name)
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.t[i] == 1).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.t[i] == 0).collect()
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&v| v == 1).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    /// Min and max of column j over all rows.
    pub fn column_range(&self, j: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n() {
            let v = self.value(i, j);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let p = self.p();
        let mut x = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            x,
            t: indices.iter().map(|&i| self.t[i]).collect(),
            y: self
                .y
                .as_ref()
                .map(|y| indices.iter().map(|&i| y[i]).collect()),
            cols: self.cols.clone(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            cat_levels: self.cat_levels.clone(),
        }
    }

    /// Declared level set of a categorical source column, if this dataset
    /// was built by binarizing one.
    pub fn categorical_levels(&self, source: &str) -> Option<&[String]> {
        self.cat_levels
            .iter()
            .find(|(s, _)| s == source)
            .map(|(_, levels)| levels.as_slice())
    }

    /// Original levels of `source` consistent with per-column bounds, i.e.
    /// levels whose one-hot encoding lies inside `[lower, upper]` on the
    /// source's indicator columns. Inverts binarization for reporting.
    pub fn levels_in_bounds(
        &self,
        source: &str,
        lower: &[f64],
        upper: &[f64],
    ) -> Option<Vec<String>> {
        let levels = self.categorical_levels(source)?;
        let indicators: Vec<(usize, &str)> = self
            .cols
            .iter()
            .enumerate()
            .filter_map(|(j, c)| {
                c.origin
                    .as_ref()
                    .filter(|o| o.source == source)
                    .map(|o| (j, o.level.as_str()))
            })
            .collect();
        let mut out = Vec::new();
        for level in levels {
            let fits = indicators.iter().all(|&(j, ind_level)| {
                let v = if ind_level == level { 1.0 } else { 0.0 };
                lower[j] <= v && v <= upper[j]
            });
            if fits {
                out.push(level.clone());
            }
        }
        Some(out)
    }
}

/// Applies a schema to a raw table: parses numeric columns, expands each
/// k-level categorical into k−1 indicators (reference = first declared
/// level), and validates treatment values.
pub fn build_dataset(raw: &RawTable, schema: &DataSchema) -> Result<Dataset, DataError> {
    schema.validate()?;
    if raw.rows.is_empty() {
        return Err(DataError::Empty);
    }
    let t_col = raw.column(&schema.treatment)?;
    let y_col = match &schema.outcome {
        Some(spec) => match raw.column(&spec.name) {
            Ok(j) => Some(j),
            Err(e) if spec.required => return Err(e),
            Err(_) => None,
        },
        None => None,
    };
    let id_col = match &schema.id {
        Some(name) => Some(raw.column(name)?),
        None => None,
    };

    enum Plan {
        Numeric { raw_col: usize, kind: ColumnKind },
        Indicator { raw_col: usize, level_idx: usize },
    }
    let mut cols = Vec::new();
    let mut plans = Vec::new();
    let mut cat_levels = Vec::new();
    for cov in &schema.covariates {
        let raw_col = raw.column(&cov.name)?;
        match &cov.kind {
            CovariateKind::Continuous => {
                cols.push(ColumnMeta::continuous(&cov.name));
                plans.push(Plan::Numeric {
                    raw_col,
                    kind: ColumnKind::Continuous,
                });
            }
            CovariateKind::Binary => {
                cols.push(ColumnMeta::binary(&cov.name));
                plans.push(Plan::Numeric {
                    raw_col,
                    kind: ColumnKind::Binary,
                });
            }
            CovariateKind::Categorical { levels } => {
                for (level_idx, level) in levels.iter().enumerate().skip(1) {
                    cols.push(ColumnMeta {
                        name: format!("{}={}", cov.name, level),
                        kind: ColumnKind::Binary,
                        origin: Some(CategoricalOrigin {
                            source: cov.name.clone(),
                            level: level.clone(),
                        }),
                    });
                    plans.push(Plan::Indicator { raw_col, level_idx });
                }
                cat_levels.push((cov.name.clone(), levels.clone()));
            }
        }
    }

    let levels_of = |raw_col: usize| -> &[String] {
        let name = &raw.headers[raw_col];
        schema
            .covariates
            .iter()
            .find_map(|c| match (&c.name == name, &c.kind) {
                (true, CovariateKind::Categorical { levels }) => Some(levels.as_slice()),
                _ => None,
            })
            .unwrap_or(&[])
    };

    let n = raw.rows.len();
    let p = cols.len();
    let mut x = Vec::with_capacity(n * p);
    let mut t = Vec::with_capacity(n);
    let mut y = y_col.map(|_| Vec::with_capacity(n));
    let mut ids = Vec::with_capacity(n);
    for (idx, cells) in raw.rows.iter().enumerate() {
        let row = idx + 1;
        for plan in &plans {
            match plan {
                Plan::Numeric { raw_col, kind } => {
                    let cell = &cells[*raw_col];
                    let v: f64 = cell.parse().map_err(|_| DataError::BadNumber {
                        row,
                        column: raw.headers[*raw_col].clone(),
                        value: cell.clone(),
                    })?;
                    if !v.is_finite() {
                        return Err(DataError::BadNumber {
                            row,
                            column: raw.headers[*raw_col].clone(),
                            value: cell.clone(),
                        });
                    }
                    if *kind == ColumnKind::Binary && v != 0.0 && v != 1.0 {
                        return Err(DataError::BadBinary {
                            row,
                            column: raw.headers[*raw_col].clone(),
                            value: cell.clone(),
                        });
                    }
                    x.push(v);
                }
                Plan::Indicator { raw_col, level_idx } => {
                    let cell = &cells[*raw_col];
                    let levels = levels_of(*raw_col);
                    let found =
                        levels
                            .iter()
                            .position(|l| l == cell)
                            .ok_or_else(|| DataError::UnseenLevel {
                                row,
                                column: raw.headers[*raw_col].clone(),
                                value: cell.clone(),
                            })?;
                    x.push(if found == *level_idx { 1.0 } else { 0.0 });
                }
            }
        }
        let t_cell = &cells[t_col];
        match t_cell.parse::<f64>() {
            Ok(0.0) => t.push(0),
            Ok(1.0) => t.push(1),
            _ => {
                return Err(DataError::BadTreatment {
                    row,
                    value: t_cell.clone(),
                })
            }
        }
        if let (Some(y), Some(y_col)) = (&mut y, y_col) {
            let cell = &cells[y_col];
            let v: f64 = cell.parse().map_err(|_| DataError::BadNumber {
                row,
                column: raw.headers[y_col].clone(),
                value: cell.clone(),
            })?;
            if !v.is_finite() {
                return Err(DataError::BadNumber {
                    row,
                    column: raw.headers[y_col].clone(),
                    value: cell.clone(),
                });
            }
            y.push(v);
        }
        ids.push(match id_col {
            Some(j) => cells[j].clone(),
            None => row.to_string(),
        });
    }

    let mut data = Dataset::from_parts(x, t, y, cols, ids)?;
    data.cat_levels = cat_levels;
    Ok(data)
}

/// Fractional sizes for an honest split; the remainder is the test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    #[serde(default)]
    pub validation_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub validation: Option<Dataset>,
    pub test: Dataset,
}

/// Randomly partitions units into train/validation/test. Sizes are
/// round(fraction·n) for train and validation; test takes the rest.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<Split, DataError> {
    let (ft, fv) = (spec.train_fraction, spec.validation_fraction);
    if !(ft > 0.0 && ft < 1.0 && (0.0..1.0).contains(&fv) && ft + fv < 1.0) {
        return Err(DataError::BadFractions);
    }
    let n = data.n();
    let n_train = (ft * n as f64).round() as usize;
    let n_val = (fv * n as f64).round() as usize;
    if n_train == 0 {
        return Err(DataError::EmptySplit {
            split: "train",
            fraction: ft,
            n,
        });
    }
    if fv > 0.0 && n_val == 0 {
        return Err(DataError::EmptySplit {
            split: "validation",
            fraction: fv,
            n,
        });
    }
    if n_train + n_val >= n {
        return Err(DataError::EmptySplit {
            split: "test",
            fraction: 1.0 - ft - fv,
            n,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let mut train_idx: Vec<usize> = order[..n_train].to_vec();
    let mut val_idx: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test_idx: Vec<usize> = order[n_train + n_val..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    test_idx.sort_unstable();

    Ok(Split {
        train: data.subset(&train_idx),
        validation: if n_val > 0 {
            Some(data.subset(&val_idx))
        } else {
            None
        },
        test: data.subset(&test_idx),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema_xty() -> DataSchema {
        DataSchema {
            covariates: vec![CovariateSpec {
                name: "x1".into(),
                kind: CovariateKind::Continuous,
            }],
            treatment: "t".into(),
            outcome: Some(OutcomeSpec {
                name: "y".into(),
                required: false,
            }),
            id: None,
        }
    }

    #[test]
    fn parses_three_row_csv() {
        let csv = "x1,t,y\n0.1,0,1.5\n0.2,1,2.5\n0.3,0,3.5\n";
        let data = Dataset::from_csv_reader(csv.as_bytes(), &schema_xty()).unwrap();
        assert_eq!(data.n(), 3);
        assert_eq!(data.p(), 1);
        assert_eq!(data.value(1, 0), 0.2);
        assert!(data.is_treated(1));
        assert_eq!(data.outcome(2), Some(3.5));
        assert_eq!(data.id(0), "1");
    }

    #[test]
    fn rejects_treatment_outside_01_naming_row() {
        let csv = "x1,t,y\n0.1,0,1.5\n0.2,2,2.5\n";
        let err = Dataset::from_csv_reader(csv.as_bytes(), &schema_xty()).unwrap_err();
        match err {
            DataError::BadTreatment { row, value } => {
                assert_eq!(row, 2);
                assert_eq!(value, "2");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn optional_outcome_column_may_be_absent() {
        let csv = "x1,t\n0.1,0\n0.2,1\n";
        let data = Dataset::from_csv_reader(csv.as_bytes(), &schema_xty()).unwrap();
        assert!(!data.has_outcomes());
        assert_eq!(data.outcome(0), None);
    }

    #[test]
    fn required_outcome_column_must_exist() {
        let csv = "x1,t\n0.1,0\n";
        let mut schema = schema_xty();
        schema.outcome.as_mut().unwrap().required = true;
        let err = Dataset::from_csv_reader(csv.as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(c) if c == "y"));
    }

    #[test]
    fn non_numeric_covariate_cell_is_a_parse_error() {
        let csv = "x1,t,y\n0.1,0,1.0\nfoo,1,2.0\n";
        let err = Dataset::from_csv_reader(csv.as_bytes(), &schema_xty()).unwrap_err();
        match err {
            DataError::BadNumber { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "x1", "foo"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    fn schema_cat() -> DataSchema {
        DataSchema {
            covariates: vec![CovariateSpec {
                name: "color".into(),
                kind: CovariateKind::Categorical {
                    levels: vec!["a".into(), "b".into(), "c".into()],
                },
            }],
            treatment: "t".into(),
            outcome: None,
            id: None,
        }
    }

    #[test]
    fn binarizes_three_levels_into_two_indicators() {
        let csv = "color,t\na,0\nb,0\nc,1\n";
        let data = Dataset::from_csv_reader(csv.as_bytes(), &schema_cat()).unwrap();
        assert_eq!(data.p(), 2);
        assert_eq!(data.columns()[0].name, "color=b");
        assert_eq!(data.columns()[1].name, "color=c");
        assert_eq!(data.row(0), &[0.0, 0.0]);
        assert_eq!(data.row(1), &[1.0, 0.0]);
        assert_eq!(data.row(2), &[0.0, 1.0]);
        for col in data.columns() {
            assert_eq!(col.kind, ColumnKind::Binary);
            assert_eq!(col.origin.as_ref().unwrap().source, "color");
        }
    }

    #[test]
    fn binary_column_passes_through_unchanged() {
        let csv = "w,t\n0,0\n1,1\n";
        let schema = DataSchema {
            covariates: vec![CovariateSpec {
                name: "w".into(),
                kind: CovariateKind::Binary,
            }],
            treatment: "t".into(),
            outcome: None,
            id: None,
        };
        let data = Dataset::from_csv_reader(csv.as_bytes(), &schema).unwrap();
        assert_eq!(data.p(), 1);
        assert_eq!(data.columns()[0].name, "w");
        assert_eq!(data.value(0, 0), 0.0);
        assert_eq!(data.value(1, 0), 1.0);
    }

    #[test]
    fn four_level_column_adds_two_net_columns() {
        let csv = "q,t\na,0\nd,1\n";
        let schema = DataSchema {
            covariates: vec![CovariateSpec {
                name: "q".into(),
                kind: CovariateKind::Categorical {
                    levels: vec!["a".into(), "b".into(), "c".into(), "d".into()],
                },
            }],
            treatment: "t".into(),
            outcome: None,
            id: None,
        };
        let data = Dataset::from_csv_reader(csv.as_bytes(), &schema).unwrap();
        assert_eq!(data.p(), 3);
    }

    #[test]
    fn unseen_level_is_rejected() {
        let csv = "color,t\na,0\nz,1\n";
        let err = Dataset::from_csv_reader(csv.as_bytes(), &schema_cat()).unwrap_err();
        match err {
            DataError::UnseenLevel { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "color", "z"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn levels_in_bounds_inverts_binarization() {
        let csv = "color,t\na,0\nb,0\nc,1\n";
        let data = Dataset::from_csv_reader(csv.as_bytes(), &schema_cat()).unwrap();
        // [0,0] on color=b and [0,1] on color=c admits a and c but not b.
        let got = data
            .levels_in_bounds("color", &[0.0, 0.0], &[0.0, 1.0])
            .unwrap();
        assert_eq!(got, vec!["a".to_string(), "c".to_string()]);
        // Full box admits every level.
        let got = data
            .levels_in_bounds("color", &[0.0, 0.0], &[1.0, 1.0])
            .unwrap();
        assert_eq!(got.len(), 3);
        // Pinning color=b to 1 forces level b alone.
        let got = data
            .levels_in_bounds("color", &[1.0, 0.0], &[1.0, 1.0])
            .unwrap();
        assert_eq!(got, vec!["b".to_string()]);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let csv = "x1,t,y,unit\n0.1,0,1.0,u1\n0.2,1,2.0,u1\n";
        let mut schema = schema_xty();
        schema.id = Some("unit".into());
        let err = Dataset::from_csv_reader(csv.as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, DataError::DuplicateId(id) if id == "u1"));
    }

    fn uniform_dataset(n: usize) -> Dataset {
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let ids = (0..n).map(|i| format!("u{i}")).collect();
        Dataset::from_parts(x, t, None, vec![ColumnMeta::continuous("x1")], ids).unwrap()
    }

    #[test]
    fn split_600_two_thirds_gives_400_200() {
        let data = uniform_dataset(600);
        let spec = SplitSpec {
            train_fraction: 2.0 / 3.0,
            validation_fraction: 0.0,
            seed: 9,
        };
        let parts = split(&data, &spec).unwrap();
        assert_eq!(parts.train.n(), 400);
        assert!(parts.validation.is_none());
        assert_eq!(parts.test.n(), 200);
    }

    #[test]
    fn split_is_deterministic_under_seed() {
        let data = uniform_dataset(50);
        let spec = SplitSpec {
            train_fraction: 0.5,
            validation_fraction: 0.2,
            seed: 42,
        };
        let a = split(&data, &spec).unwrap();
        let b = split(&data, &spec).unwrap();
        assert_eq!(a.train.ids(), b.train.ids());
        assert_eq!(
            a.validation.as_ref().unwrap().ids(),
            b.validation.as_ref().unwrap().ids()
        );
        assert_eq!(a.test.ids(), b.test.ids());
    }

    #[test]
    fn split_rejects_empty_test() {
        let data = uniform_dataset(10);
        let spec = SplitSpec {
            train_fraction: 0.99,
            validation_fraction: 0.0,
            seed: 1,
        };
        let err = split(&data, &spec).unwrap_err();
        assert!(matches!(err, DataError::EmptySplit { split: "test", .. }));
    }

    proptest! {
        #[test]
        fn split_partitions_every_id(n in 3usize..120, seed in any::<u64>(),
                                     ft in 0.1f64..0.7, fv in 0.0f64..0.25) {
            let data = uniform_dataset(n);
            let spec = SplitSpec { train_fraction: ft, validation_fraction: fv, seed };
            if let Ok(parts) = split(&data, &spec) {
                let mut seen: Vec<&str> = Vec::new();
                seen.extend(parts.train.ids().iter().map(|s| s.as_str()));
                if let Some(v) = &parts.validation {
                    seen.extend(v.ids().iter().map(|s| s.as_str()));
                }
                seen.extend(parts.test.ids().iter().map(|s| s.as_str()));
                prop_assert_eq!(seen.len(), n);
                let unique: HashSet<&str> = seen.iter().copied().collect();
                prop_assert_eq!(unique.len(), n);
            }
        }
    }
}
