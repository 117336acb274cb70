//! Labeled tabular data, class statistics, CSV ingestion and preprocessing.
//!
//! Class ids are dense and zero-based: a dataset with `M` classes uses ids
//! `0..M`, assigned in order of first appearance when loaded from CSV. The
//! original label strings are kept in [`Dataset::class_names`].

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

/// Feature matrix plus dense class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    class_counts: Vec<usize>,
    class_names: Vec<String>,
    feature_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking that every label is below `n_classes` and
    /// every class occurs at least once.
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let class_names = (0..n_classes).map(|m| m.to_string()).collect();
        let feature_names = (0..features.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(features, labels, class_names, feature_names)
    }

    pub fn with_names(
        features: Array2<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n_classes = class_names.len();
        if labels.is_empty() {
            return Err(Error::Empty("dataset has no rows"));
        }
        if features.ncols() == 0 {
            return Err(Error::Empty("dataset has no feature columns"));
        }
        if features.nrows() != labels.len() {
            return Err(Error::Dimension {
                expected: labels.len(),
                got: features.nrows(),
            });
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::Dimension {
                expected: features.ncols(),
                got: feature_names.len(),
            });
        }
        let class_counts = count_labels(&labels, n_classes)?;
        if let Some(m) = class_counts.iter().position(|&c| c == 0) {
            return Err(Error::MissingClass(m));
        }
        let features = features.as_standard_layout().into_owned();
        Ok(Self {
            features,
            labels,
            class_counts,
            class_names,
            feature_names,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Size of the smallest class, `n_(1)`.
    pub fn minority_count(&self) -> usize {
        *self.class_counts.iter().min().expect("at least one class")
    }

    /// Id of the smallest class (lowest id on ties).
    pub fn minority_class(&self) -> usize {
        let min = self.minority_count();
        self.class_counts.iter().position(|&c| c == min).unwrap()
    }

    pub fn imbalance_ratio(&self) -> ImbalanceRatio {
        imbalance_ratio(self)
    }

    /// Rows `rows` (in the given order) as a new dataset with the same class
    /// set. Fails if a class ends up empty.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let d = self.dim();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        let features = Array2::from_shape_vec((rows.len(), d), data).expect("shape");
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        Self::with_names(
            features,
            labels,
            self.class_names.clone(),
            self.feature_names.clone(),
        )
    }

    /// SHA-256 over shape, feature bits and labels.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        h.update((self.n_classes() as u64).to_le_bytes());
        for v in self.features.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        h.finalize().into()
    }

    /// Writes the dataset as CSV with a header row and the label last.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
        self.write_csv_to(&mut out).map_err(io_err)?;
        out.flush().map_err(io_err)
    }

    pub fn write_csv_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let header: Vec<&str> = self
            .feature_names
            .iter()
            .map(String::as_str)
            .chain(std::iter::once("label"))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.n() {
            for v in self.row(i) {
                write!(out, "{v},")?;
            }
            writeln!(out, "{}", self.class_names[self.labels[i]])?;
        }
        Ok(())
    }
}

fn count_labels(labels: &[usize], n_classes: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0; n_classes];
    for &y in labels {
        if y >= n_classes {
            return Err(Error::config(format!(
                "label {y} outside 0..{n_classes}"
            )));
        }
        counts[y] += 1;
    }
    Ok(counts)
}

/// `rho = M * n_(1) / n`, in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ImbalanceRatio(f64);

impl ImbalanceRatio {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::config(format!("imbalance ratio {rho} outside (0, 1]")));
        }
        Ok(Self(rho))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for ImbalanceRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.0)
    }
}

pub fn imbalance_ratio(ds: &Dataset) -> ImbalanceRatio {
    ImbalanceRatio(ds.n_classes() as f64 * ds.minority_count() as f64 / ds.n() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NumericImpute {
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CategoricalImpute {
    Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CategoricalEncoding {
    OneHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scaling {
    /// Per-feature min-max to `[0, 1]`; constant columns map to 0.
    MinMax,
    None,
}

/// How raw CSV columns become features.
///
/// Missing cells are empty strings or `?`. When `categorical_columns` is
/// `None`, a column is categorical iff some non-missing cell does not parse
/// as a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub numeric_impute: NumericImpute,
    pub categorical_impute: CategoricalImpute,
    pub categorical_encoding: CategoricalEncoding,
    pub scaling: Scaling,
    pub categorical_columns: Option<Vec<String>>,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            numeric_impute: NumericImpute::Mean,
            categorical_impute: CategoricalImpute::Mode,
            categorical_encoding: CategoricalEncoding::OneHot,
            scaling: Scaling::MinMax,
            categorical_columns: None,
        }
    }
}

impl PreprocessSpec {
    pub fn unscaled() -> Self {
        Self {
            scaling: Scaling::None,
            ..Self::default()
        }
    }
}

/// Label column selector: header name or zero-based index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "?"
}

fn parse_num(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Loads a CSV file. A header row is assumed when the label column is given
/// by name, or when no cell of the first row parses as a number.
pub fn load_csv(path: &Path, label: &LabelColumn, spec: &PreprocessSpec) -> Result<Dataset> {
    load_csv_with(path, label, spec, None)
}

/// Like [`load_csv`] with an explicit header flag.
pub fn load_csv_with(
    path: &Path,
    label: &LabelColumn,
    spec: &PreprocessSpec,
    has_header: Option<bool>,
) -> Result<Dataset> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, label, spec, has_header)
}

/// Parses CSV from any reader; see [`load_csv`].
pub fn read_csv<R: std::io::Read>(
    reader: R,
    label: &LabelColumn,
    spec: &PreprocessSpec,
    has_header: Option<bool>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(reader);
    let mut records: Vec<(u64, Vec<String>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            row: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        records.push((line, rec.iter().map(str::to_string).collect()));
    }
    if records.is_empty() {
        return Err(Error::Empty("CSV file has no rows"));
    }

    let header = match has_header {
        Some(h) => h,
        None => {
            matches!(label, LabelColumn::Name(_))
                || records[0].1.iter().all(|c| parse_num(c).is_none())
        }
    };
    let width = records[0].1.len();
    let names: Vec<String> = if header {
        records.remove(0).1
    } else {
        (0..width).map(|j| format!("x{j}")).collect()
    };
    if records.is_empty() {
        return Err(Error::Empty("CSV file has a header but no data rows"));
    }

    let label_idx = match label {
        LabelColumn::Name(n) => names
            .iter()
            .position(|h| h.trim() == n)
            .ok_or_else(|| Error::MissingLabelColumn(n.clone()))?,
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => return Err(Error::MissingLabelColumn(i.to_string())),
    };

    // labels, dense in order of first appearance
    let mut class_ids: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();
    let mut labels = Vec::with_capacity(records.len());
    for (line, rec) in &records {
        let raw = rec[label_idx].trim();
        if is_missing(raw) {
            return Err(Error::Parse {
                row: *line,
                message: "missing label".into(),
            });
        }
        let id = *class_ids.entry(raw.to_string()).or_insert_with(|| {
            class_names.push(raw.to_string());
            class_names.len() - 1
        });
        labels.push(id);
    }
    if class_names.len() < 2 {
        return Err(Error::SingleClass);
    }

    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut feature_names = Vec::new();
    for j in (0..width).filter(|&j| j != label_idx) {
        let name = names[j].trim().to_string();
        let categorical = match &spec.categorical_columns {
            Some(list) => list.iter().any(|c| c == &name),
            None => records
                .iter()
                .any(|(_, r)| !is_missing(&r[j]) && parse_num(&r[j]).is_none()),
        };
        if categorical {
            encode_categorical(&records, j, &name, &mut columns, &mut feature_names);
        } else {
            columns.push(impute_numeric(&records, j, &name)?);
            feature_names.push(name);
        }
    }
    if columns.is_empty() {
        return Err(Error::Empty("CSV file has no feature columns"));
    }

    if spec.scaling == Scaling::MinMax {
        for col in &mut columns {
            let (lo, hi) = min_max(col.iter().copied());
            for v in col.iter_mut() {
                *v = scale(*v, lo, hi);
            }
        }
    }

    let n = labels.len();
    let d = columns.len();
    let features = Array2::from_shape_fn((n, d), |(i, j)| columns[j][i]);
    Dataset::with_names(features, labels, class_names, feature_names)
}

fn impute_numeric(records: &[(u64, Vec<String>)], j: usize, name: &str) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(records.len());
    let (mut sum, mut count) = (0.0, 0usize);
    for (line, r) in records {
        if is_missing(&r[j]) {
            values.push(None);
        } else {
            let v = parse_num(&r[j]).ok_or_else(|| Error::NonNumeric {
                row: *line,
                column: name.to_string(),
                value: r[j].clone(),
            })?;
            sum += v;
            count += 1;
            values.push(Some(v));
        }
    }
    let mean = if count > 0 { sum / count as f64 } else { 0.0 };
    Ok(values.into_iter().map(|v| v.unwrap_or(mean)).collect())
}

fn encode_categorical(
    records: &[(u64, Vec<String>)],
    j: usize,
    name: &str,
    columns: &mut Vec<Vec<f64>>,
    feature_names: &mut Vec<String>,
) {
    let mut levels: Vec<String> = Vec::new();
    let mut freq: Vec<usize> = Vec::new();
    let mut cells = Vec::with_capacity(records.len());
    for (_, r) in records {
        if is_missing(&r[j]) {
            cells.push(None);
            continue;
        }
        let v = r[j].trim();
        let idx = match levels.iter().position(|l| l == v) {
            Some(i) => i,
            None => {
                levels.push(v.to_string());
                freq.push(0);
                levels.len() - 1
            }
        };
        freq[idx] += 1;
        cells.push(Some(idx));
    }
    // mode; first-seen level wins ties
    let mode = freq
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, usize)>, (i, &f)| match best {
            Some((_, bf)) if bf >= f => best,
            _ => Some((i, f)),
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    if levels.is_empty() {
        levels.push(String::new());
    }
    for (li, level) in levels.iter().enumerate() {
        columns.push(
            cells
                .iter()
                .map(|c| f64::from(u8::from(c.unwrap_or(mode) == li)))
                .collect(),
        );
        feature_names.push(format!("{name}={level}"));
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn scale(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// Min-max statistics fitted on a subset of rows (typically a training fold)
/// and applied to any dataset with the same columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(ds: &Dataset, rows: &[usize]) -> Self {
        let (lo, hi) = (0..ds.dim())
            .map(|j| min_max(rows.iter().map(|&i| ds.row(i)[j])))
            .unzip();
        Self { lo, hi }
    }

    pub fn transform(&self, ds: &Dataset) -> Dataset {
        let mut out = ds.clone();
        for mut row in out.features.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = scale(*v, self.lo[j], self.hi[j]);
            }
        }
        out
    }

    pub fn transform_row(&self, row: ArrayView1<'_, f64>) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &v)| scale(v, self.lo[j], self.hi[j]))
            .collect()
    }
}

/// One cross-validation split; both index lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold split. Each class is shuffled with a seeded stream and
/// dealt round-robin over the folds, continuing where the previous class
/// stopped so fold sizes stay within one of each other.
pub fn stratified_kfold(ds: &Dataset, folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if folds < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {folds}")));
    }
    for (class, &count) in ds.class_counts().iter().enumerate() {
        if count < folds {
            return Err(Error::ClassTooSmall {
                class,
                count,
                folds,
            });
        }
    }
    let mut rng = rng::stream(seed);
    let mut assignment = vec![0usize; ds.n()];
    let mut offset = 0;
    for class in 0..ds.n_classes() {
        let mut rows: Vec<usize> = (0..ds.n()).filter(|&i| ds.label(i) == class).collect();
        rows.shuffle(&mut rng);
        for (j, &i) in rows.iter().enumerate() {
            assignment[i] = (offset + j) % folds;
        }
        offset = (offset + rows.len()) % folds;
    }
    Ok((0..folds)
        .map(|f| {
            let (test, train) = (0..ds.n()).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(text: &str, label: LabelColumn, spec: &PreprocessSpec) -> Result<Dataset> {
        read_csv(text.as_bytes(), &label, spec, None)
    }

    #[test]
    fn counts_minority_from_csv() {
        let ds = csv(
            "x,y\n1,a\n2,a\n3,b\n4,a\n",
            LabelColumn::Name("y".into()),
            &PreprocessSpec::unscaled(),
        )
        .unwrap();
        assert_eq!(ds.n_classes(), 2);
        assert_eq!(ds.class_counts(), &[3, 1]);
        assert_eq!(ds.class_names()[ds.minority_class()], "b");
    }

    #[test]
    fn mean_imputes_missing_numeric_cell() {
        let ds = csv(
            "1,a\n2,b\n,a\n3,b\n",
            LabelColumn::Index(1),
            &PreprocessSpec::unscaled(),
        )
        .unwrap();
        assert_eq!(ds.features().column(0).to_vec(), vec![1.0, 2.0, 2.0, 3.0]);
    }

    #[test]
    fn min_max_scales_column() {
        let ds = csv("0,a\n5,b\n10,a\n", LabelColumn::Index(1), &PreprocessSpec::default())
            .unwrap();
        assert_eq!(ds.features().column(0).to_vec(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_column_scales_to_zero() {
        let ds = csv("4,1,a\n4,2,b\n", LabelColumn::Index(2), &PreprocessSpec::default())
            .unwrap();
        assert_eq!(ds.features().column(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn one_hot_with_mode_imputation() {
        let ds = csv(
            "c,v,y\nred,1,p\nblue,2,q\n?,3,p\nred,4,q\n",
            LabelColumn::Name("y".into()),
            &PreprocessSpec::unscaled(),
        )
        .unwrap();
        assert_eq!(ds.feature_names(), &["c=red", "c=blue", "v"]);
        assert_eq!(ds.row(2), &[1.0, 0.0, 3.0]);
    }

    #[test]
    fn non_numeric_in_declared_numeric_column() {
        let spec = PreprocessSpec {
            categorical_columns: Some(vec![]),
            ..PreprocessSpec::unscaled()
        };
        let err = csv("v,y\n1,a\nfoo,b\n", LabelColumn::Name("y".into()), &spec).unwrap_err();
        assert!(matches!(err, Error::NonNumeric { row: 3, .. }), "{err}");
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = csv(
            "1,2,a\n3,b\n",
            LabelColumn::Index(2),
            &PreprocessSpec::unscaled(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
    }

    #[test]
    fn single_class_rejected() {
        let err = csv("1,a\n2,a\n", LabelColumn::Index(1), &PreprocessSpec::unscaled())
            .unwrap_err();
        assert!(matches!(err, Error::SingleClass));
    }

    #[test]
    fn missing_file() {
        let err = load_csv(
            Path::new("/nonexistent/data.csv"),
            &LabelColumn::Index(0),
            &PreprocessSpec::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    fn counts_ds(counts: &[usize]) -> Dataset {
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(m, &c)| std::iter::repeat_n(m, c))
            .collect();
        let n = labels.len();
        let features = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        Dataset::new(features, labels, counts.len()).unwrap()
    }

    #[test]
    fn imbalance_ratio_examples() {
        assert!((counts_ds(&[900, 100]).imbalance_ratio().value() - 0.2).abs() < 1e-15);
        assert_eq!(counts_ds(&[10, 10, 10]).imbalance_ratio().value(), 1.0);
        let moons = counts_ds(&[20000, 200]).imbalance_ratio().value();
        assert!((moons - 400.0 / 20200.0).abs() < 1e-15);
        assert!((moons - 0.0198).abs() < 1e-4);
    }

    #[test]
    fn kfold_partitions_and_stratifies() {
        let ds = counts_ds(&[53, 17, 30]);
        let folds = stratified_kfold(&ds, 5, 9).unwrap();
        let mut seen = vec![0; ds.n()];
        for f in &folds {
            for &i in &f.test {
                seen[i] += 1;
            }
            assert_eq!(f.train.len() + f.test.len(), ds.n());
            for m in 0..3 {
                let c = f.test.iter().filter(|&&i| ds.label(i) == m).count() as f64;
                let expect = ds.class_counts()[m] as f64 / 5.0;
                assert!((c - expect).abs() < 1.0, "class {m}: {c} vs {expect}");
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        assert_eq!(folds, stratified_kfold(&ds, 5, 9).unwrap());
        assert_ne!(folds, stratified_kfold(&ds, 5, 10).unwrap());
    }

    #[test]
    fn kfold_rejects_small_class() {
        let ds = counts_ds(&[20, 3]);
        assert!(matches!(
            stratified_kfold(&ds, 5, 0),
            Err(Error::ClassTooSmall { class: 1, .. })
        ));
    }

    #[test]
    fn scaler_uses_train_rows_only() {
        let ds = counts_ds(&[3, 2]);
        let sc = MinMaxScaler::fit(&ds, &[0, 1, 2]);
        let t = sc.transform(&ds);
        assert_eq!(t.features().column(0).to_vec(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }
}
