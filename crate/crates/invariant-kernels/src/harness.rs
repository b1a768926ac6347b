//! Dataset handling, cross-validation, and the two benchmark protocols:
//! pooled-feature classification and invariant-kernel SVM classification,
//! both scored on group-augmented test folds while the training folds stay
//! untouched.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::group_algebra::OrthogonalSet;
use crate::invariant_features::{kernel_signature, linear_signature, PoolingMode, PoolingSpec};
use crate::invariant_kernel::{random_unit_templates, InvariantKernel, TemplateBank};
use crate::kernels::KernelSpec;
use crate::svm::{SolveOptions, SvmModel};

/// Row-normalization tolerance for [`Dataset`].
const ROW_NORM_TOL: f64 = 1e-10;

/// A labelled sample matrix: one row per sample, labels in {+1, -1}.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    x: Array2<f64>,
    y: Vec<f64>,
    normalized: bool,
}

impl Dataset {
    /// Wraps raw samples without normalizing. Labels must be +-1 with both
    /// classes present; entries must be finite.
    pub fn new(name: impl Into<String>, x: Array2<f64>, y: Vec<f64>) -> Result<Self> {
        let data = Self::build(name.into(), x, y, false)?;
        data.require_both_classes()?;
        Ok(data)
    }

    /// Like [`Dataset::new`] but rescales every row to unit l2 norm first.
    /// Zero rows are rejected by index.
    pub fn normalized(name: impl Into<String>, mut x: Array2<f64>, y: Vec<f64>) -> Result<Self> {
        for (row, mut r) in x.rows_mut().into_iter().enumerate() {
            let norm = r.dot(&r).sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFinite);
            }
            if norm == 0.0 {
                return Err(Error::ZeroNormRow { row });
            }
            r /= norm;
        }
        let data = Self::build(name.into(), x, y, true)?;
        data.require_both_classes()?;
        Ok(data)
    }

    fn require_both_classes(&self) -> Result<()> {
        if !self.y.iter().any(|v| *v == 1.0) || !self.y.iter().any(|v| *v == -1.0) {
            return Err(Error::SingleClassLabels);
        }
        Ok(())
    }

    fn build(name: String, x: Array2<f64>, y: Vec<f64>, normalized: bool) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if y.iter().any(|v| *v != 1.0 && *v != -1.0) {
            return Err(Error::Parse("labels must be +1 or -1".into()));
        }
        // Both-class presence is enforced only by the ingestion
        // constructors; derived views (fold subsets, augmented folds) may
        // legitimately hold a single class.
        if normalized {
            for (row, r) in x.rows().into_iter().enumerate() {
                if (r.dot(&r).sqrt() - 1.0).abs() > ROW_NORM_TOL {
                    return Err(Error::ZeroNormRow { row });
                }
            }
        }
        Ok(Self { name, x, y, normalized })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Row subset in the given index order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut x = Array2::zeros((indices.len(), self.dim()));
        let mut y = Vec::with_capacity(indices.len());
        for (out, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange { index: i, len: self.len() });
            }
            x.row_mut(out).assign(&self.x.row(i));
            y.push(self.y[i]);
        }
        Self::build(self.name.clone(), x, y, self.normalized)
    }

    /// Built-in benchmark: two seeded Gaussian clouds at antipodal means,
    /// unit-normalized, labels alternating so every prefix is balanced.
    pub fn synthetic_two_gaussians(dim: usize, n: usize, seed: u64) -> Result<Dataset> {
        if dim == 0 {
            return Err(Error::InvalidDimension);
        }
        if n < 2 {
            return Err(Error::TooFewSamples);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Class direction drawn once per seed.
        let mut dir = Array1::<f64>::zeros(dim);
        for v in dir.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        dir /= dir.dot(&dir).sqrt();
        let noise = 0.35;
        let mut x = Array2::zeros((n, dim));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = label * dir[j] + noise * z;
            }
            y.push(label);
        }
        Self::normalized(format!("synthetic(d={dim},n={n},seed={seed})"), x, y)
    }
}

/// Which CSV column carries the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    First,
    Last,
}

impl FromStr for LabelColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Self::First),
            "last" => Ok(Self::Last),
            other => Err(Error::Parse(format!("label column must be first|last, got {other}"))),
        }
    }
}

/// Loads a delimited numeric file. A first record with any non-numeric field
/// is treated as a header and skipped. The two distinct raw label values are
/// remapped to (-1, +1) by sorted order (numeric when both parse, lexical
/// otherwise).
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: LabelColumn,
    delimiter: u8,
    normalize: bool,
) -> Result<Dataset> {
    let name = path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .from_path(path.as_ref())?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let is_first = rows.is_empty() && raw_labels.is_empty();
        let numeric: Vec<Option<f64>> =
            record.iter().map(|f| f.trim().parse::<f64>().ok()).collect();
        let label_idx = match label_column {
            LabelColumn::First => 0,
            LabelColumn::Last => record.len().saturating_sub(1),
        };
        let features_parse = numeric
            .iter()
            .enumerate()
            .all(|(i, v)| i == label_idx || v.is_some());
        if is_first && !features_parse {
            continue; // header row
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::RaggedRow {
                    row: idx,
                    got: record.len(),
                    expected: w,
                })
            }
            _ => {}
        }
        if !features_parse {
            return Err(Error::Parse(format!("non-numeric feature in row {idx}")));
        }
        let mut features = Vec::with_capacity(record.len() - 1);
        for (i, v) in numeric.iter().enumerate() {
            if i != label_idx {
                features.push(v.ok_or(Error::NonFinite)?);
            }
        }
        raw_labels.push(record[label_idx].trim().to_string());
        rows.push(features);
    }
    if rows.len() < 2 {
        return Err(Error::TooFewSamples);
    }

    // Sorted distinct raw labels -> (-1, +1).
    let mut distinct: Vec<String> = raw_labels.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() != 2 {
        return Err(Error::LabelCardinality { count: distinct.len() });
    }
    let both_numeric = distinct.iter().all(|l| l.parse::<f64>().is_ok());
    if both_numeric {
        let a: f64 = distinct[0].parse().unwrap();
        let b: f64 = distinct[1].parse().unwrap();
        if a > b {
            distinct.swap(0, 1);
        }
    }
    let y: Vec<f64> = raw_labels
        .iter()
        .map(|l| if *l == distinct[0] { -1.0 } else { 1.0 })
        .collect();

    let d = rows[0].len();
    let mut x = Array2::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            x[[i, j]] = *v;
        }
    }
    if normalize {
        Dataset::normalized(name, x, y)
    } else {
        Dataset::new(name, x, y)
    }
}

/// A cross-validation partition: `test_folds[f]` lists the test indices of
/// fold `f`; every sample appears in exactly one test fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    test_folds: Vec<Vec<usize>>,
    n: usize,
}

impl FoldPlan {
    pub fn folds(&self) -> usize {
        self.test_folds.len()
    }

    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.test_folds[fold]
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let test: std::collections::HashSet<usize> =
            self.test_folds[fold].iter().copied().collect();
        (0..self.n).filter(|i| !test.contains(i)).collect()
    }
}

/// Seeded near-equal split; deterministic under (n, folds, seed).
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds == 0 {
        return Err(Error::EmptySet);
    }
    if folds > n {
        return Err(Error::TooManyFolds { folds, samples: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let base = n / folds;
    let extra = n % folds;
    let mut test_folds = Vec::with_capacity(folds);
    let mut cursor = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        let mut fold: Vec<usize> = order[cursor..cursor + size].to_vec();
        fold.sort_unstable();
        test_folds.push(fold);
        cursor += size;
    }
    Ok(FoldPlan { test_folds, n })
}

/// Replaces the test fold by its orbit under the observed set: output row
/// (g, i) is g * x_i with label y_i, ordered g-outer. Size multiplies by
/// |G0|; the training data is never passed through this.
pub fn augment_test_fold(test: &Dataset, set: &OrthogonalSet) -> Result<Dataset> {
    if test.dim() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            got: test.dim(),
        });
    }
    let n = test.len();
    let mut x = Array2::zeros((set.len() * n, test.dim()));
    let mut y = Vec::with_capacity(set.len() * n);
    for (gi, g) in set.iter().enumerate() {
        for i in 0..n {
            let gx = g.dot(&test.x().row(i));
            x.row_mut(gi * n + i).assign(&gx);
            y.push(test.y()[i]);
        }
    }
    Dataset::build(format!("{}+G0", test.name()), x, y, test.is_normalized())
}

/// Benchmark configuration; defaults follow the reference protocol
/// (10 folds, |G0| = 10, |T| = 100, max pooling). C defaults to 100: with
/// the per-sample box C/N, C = 1 leaves every training point a margin
/// violator on the built-in benchmark and the bias becomes degenerate.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub group_size: usize,
    pub template_count: usize,
    pub group_seed: u64,
    pub template_seed: u64,
    pub fold_seed: u64,
    pub c: f64,
    pub rbf_sigma: f64,
    pub poly_degree: u32,
    pub poly_offset: f64,
    pub pooling: PoolingSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            group_size: 10,
            template_count: 100,
            group_seed: 7,
            template_seed: 11,
            fold_seed: 13,
            c: 100.0,
            rbf_sigma: 1.0,
            poly_degree: 2,
            poly_offset: 1.0,
            pooling: PoolingSpec::new(PoolingMode::Max).expect("max pooling is valid"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds == 0 || self.group_size == 0 || self.template_count == 0 {
            return Err(Error::EmptySet);
        }
        if !(self.c > 0.0) {
            return Err(Error::Parse(format!("C must be positive, got {}", self.c)));
        }
        KernelSpec::rbf(self.rbf_sigma)?;
        KernelSpec::polynomial(self.poly_degree, self.poly_offset)?;
        Ok(())
    }

    /// Flat `key=value` file, one entry per line; `#` starts a comment.
    /// Unknown keys are rejected. Missing keys keep their defaults.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_kv_text(&text)
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Parse(format!("bad value for {key}: {value}")))
        }
        match key {
            "folds" => self.folds = num(key, value)?,
            "group_size" => self.group_size = num(key, value)?,
            "template_count" => self.template_count = num(key, value)?,
            "group_seed" => self.group_seed = num(key, value)?,
            "template_seed" => self.template_seed = num(key, value)?,
            "fold_seed" => self.fold_seed = num(key, value)?,
            "c" => self.c = num(key, value)?,
            "rbf_sigma" => self.rbf_sigma = num(key, value)?,
            "poly_degree" => self.poly_degree = num(key, value)?,
            "poly_offset" => self.poly_offset = num(key, value)?,
            "pooling" => self.pooling = value.parse()?,
            other => return Err(Error::Parse(format!("unknown config key: {other}"))),
        }
        Ok(())
    }

    /// Serialization matching [`ExperimentConfig::from_kv_text`]; ordered.
    pub fn to_kv_text(&self) -> String {
        let mut entries = BTreeMap::new();
        entries.insert("folds", self.folds.to_string());
        entries.insert("group_size", self.group_size.to_string());
        entries.insert("template_count", self.template_count.to_string());
        entries.insert("group_seed", self.group_seed.to_string());
        entries.insert("template_seed", self.template_seed.to_string());
        entries.insert("fold_seed", self.fold_seed.to_string());
        entries.insert("c", format!("{:?}", self.c));
        entries.insert("rbf_sigma", format!("{:?}", self.rbf_sigma));
        entries.insert("poly_degree", self.poly_degree.to_string());
        entries.insert("poly_offset", format!("{:?}", self.poly_offset));
        entries.insert("pooling", self.pooling.to_string());
        entries
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

/// Per-fold accuracy table with a mean row; renders as aligned text or CSV,
/// byte-deterministic for fixed inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub title: String,
    pub columns: Vec<String>,
    pub row_labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ReportTable {
    pub fn new(title: impl Into<String>, columns: Vec<String>) -> Self {
        Self {
            title: title.into(),
            columns,
            row_labels: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, label: impl Into<String>, values: Vec<f64>) {
        assert_eq!(values.len(), self.columns.len());
        self.row_labels.push(label.into());
        self.rows.push(values);
    }

    /// Appends a "mean" row over the rows pushed so far.
    pub fn push_mean_row(&mut self) {
        let n = self.rows.len();
        if n == 0 {
            return;
        }
        let mut mean = vec![0.0; self.columns.len()];
        for row in &self.rows {
            for (m, v) in mean.iter_mut().zip(row.iter()) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        self.push_row("mean", mean);
    }

    /// The values of the row labelled "mean", if present.
    pub fn mean_row(&self) -> Option<&[f64]> {
        self.row_labels
            .iter()
            .position(|l| l == "mean")
            .map(|i| self.rows[i].as_slice())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.len().max(6)).collect();
        let label_width = self
            .row_labels
            .iter()
            .map(|l| l.len())
            .chain(std::iter::once(4))
            .max()
            .unwrap();
        for row in &self.rows {
            for (w, v) in widths.iter_mut().zip(row.iter()) {
                *w = (*w).max(format!("{v:.4}").len());
            }
        }
        let mut out = String::new();
        out.push_str(&self.title);
        out.push('\n');
        out.push_str(&format!("{:label_width$}", "fold"));
        for (c, w) in self.columns.iter().zip(&widths) {
            out.push_str(&format!("  {c:>w$}"));
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.rows) {
            out.push_str(&format!("{label:label_width$}"));
            for (v, w) in row.iter().zip(&widths) {
                out.push_str(&format!("  {v:>w$.4}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("fold");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.rows) {
            out.push_str(label);
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }
}

/// Shared per-experiment context: the observed set and the two template
/// banks, all derived from the config seeds.
struct ExperimentContext {
    set: OrthogonalSet,
    templates: Array2<f64>,
    bank_rbf: Arc<TemplateBank>,
    bank_poly: Arc<TemplateBank>,
}

fn build_context(config: &ExperimentConfig, dim: usize) -> Result<ExperimentContext> {
    let set = OrthogonalSet::sample(dim, config.group_size, config.group_seed, true)?;
    let templates = random_unit_templates(dim, config.template_count, config.template_seed);
    let bank_rbf = Arc::new(TemplateBank::new(
        templates.clone(),
        set.clone(),
        KernelSpec::rbf(config.rbf_sigma)?,
        None,
    )?);
    let bank_poly = Arc::new(TemplateBank::new(
        templates.clone(),
        set.clone(),
        KernelSpec::polynomial(config.poly_degree, config.poly_offset)?,
        None,
    )?);
    Ok(ExperimentContext { set, templates, bank_rbf, bank_poly })
}

fn feature_matrix_linear(
    data: &Dataset,
    set: &OrthogonalSet,
    templates: &Array2<f64>,
    pooling: &PoolingSpec,
) -> Result<Array2<f64>> {
    let width = templates.ncols() * pooling.n_outputs();
    let mut out = Array2::zeros((data.len(), width));
    for (i, row) in data.x().rows().into_iter().enumerate() {
        let sig = linear_signature(row, set, templates.view(), pooling)?;
        out.row_mut(i).assign(&sig.flatten());
    }
    Ok(out)
}

fn feature_matrix_kernel(
    data: &Dataset,
    bank: &TemplateBank,
    pooling: &PoolingSpec,
) -> Result<Array2<f64>> {
    let width = bank.template_count() * pooling.n_outputs();
    let mut out = Array2::zeros((data.len(), width));
    for (i, row) in data.x().rows().into_iter().enumerate() {
        let sig = kernel_signature(row, bank, pooling)?;
        out.row_mut(i).assign(&sig.flatten());
    }
    Ok(out)
}

fn linear_svm_accuracy(
    train_features: &Array2<f64>,
    train_labels: &[f64],
    test_sets: &[(&Array2<f64>, &[f64])],
    c: f64,
) -> Result<Vec<f64>> {
    let model = SvmModel::train(
        train_features.clone(),
        train_labels.to_vec(),
        Arc::new(KernelSpec::Linear),
        "linear",
        c,
        &SolveOptions::default(),
    )?;
    test_sets
        .iter()
        .map(|(x, y)| model.accuracy(x.view(), y))
        .collect()
}

/// Pooled-feature protocol: per fold, train linear SVMs on raw features and
/// on the mu / RBF / polynomial signatures of the untouched training fold,
/// then score on the group-augmented test fold. The first column scores raw
/// features on the unaugmented fold as the difficulty reference.
pub fn run_feature_experiment(config: &ExperimentConfig, dataset: &Dataset) -> Result<ReportTable> {
    config.validate()?;
    if dataset.len() < config.folds {
        return Err(Error::TooManyFolds {
            folds: config.folds,
            samples: dataset.len(),
        });
    }
    let ctx = build_context(config, dataset.dim())?;
    let plan = make_folds(dataset.len(), config.folds, config.fold_seed)?;
    let columns = vec![
        "raw/plain".to_string(),
        "raw/aug".to_string(),
        "mu/aug".to_string(),
        "rbf-sig/aug".to_string(),
        "poly-sig/aug".to_string(),
    ];
    let mut table = ReportTable::new(
        format!("feature benchmark on {}", dataset.name()),
        columns,
    );
    for fold in 0..plan.folds() {
        let train = dataset.subset(&plan.train_indices(fold))?;
        let test = dataset.subset(plan.test_indices(fold))?;
        let augmented = augment_test_fold(&test, &ctx.set)?;

        let raw_train = train.x().to_owned();
        let raw = linear_svm_accuracy(
            &raw_train,
            train.y(),
            &[
                (&test.x().to_owned(), test.y()),
                (&augmented.x().to_owned(), augmented.y()),
            ],
            config.c,
        )?;

        let mu_train = feature_matrix_linear(&train, &ctx.set, &ctx.templates, &config.pooling)?;
        let mu_test = feature_matrix_linear(&augmented, &ctx.set, &ctx.templates, &config.pooling)?;
        let mu = linear_svm_accuracy(&mu_train, train.y(), &[(&mu_test, augmented.y())], config.c)?;

        let rbf_train = feature_matrix_kernel(&train, &ctx.bank_rbf, &config.pooling)?;
        let rbf_test = feature_matrix_kernel(&augmented, &ctx.bank_rbf, &config.pooling)?;
        let rbf =
            linear_svm_accuracy(&rbf_train, train.y(), &[(&rbf_test, augmented.y())], config.c)?;

        let poly_train = feature_matrix_kernel(&train, &ctx.bank_poly, &config.pooling)?;
        let poly_test = feature_matrix_kernel(&augmented, &ctx.bank_poly, &config.pooling)?;
        let poly =
            linear_svm_accuracy(&poly_train, train.y(), &[(&poly_test, augmented.y())], config.c)?;

        table.push_row(
            fold.to_string(),
            vec![raw[0], raw[1], mu[0], rbf[0], poly[0]],
        );
    }
    table.push_mean_row();
    Ok(table)
}

/// Invariant-kernel protocol: per fold, a standard RBF SVM and a
/// template-mode invariant-kernel SVM, both trained on the untouched
/// training fold and scored on the augmented test fold; first column is the
/// standard SVM on the unaugmented fold.
pub fn run_kernel_experiment(config: &ExperimentConfig, dataset: &Dataset) -> Result<ReportTable> {
    config.validate()?;
    if dataset.len() < config.folds {
        return Err(Error::TooManyFolds {
            folds: config.folds,
            samples: dataset.len(),
        });
    }
    let ctx = build_context(config, dataset.dim())?;
    let plan = make_folds(dataset.len(), config.folds, config.fold_seed)?;
    let rbf = KernelSpec::rbf(config.rbf_sigma)?;
    let invariant = InvariantKernel::template_shared(Arc::clone(&ctx.bank_rbf));
    let columns = vec![
        "std/plain".to_string(),
        "std/aug".to_string(),
        "inv/aug".to_string(),
    ];
    let mut table = ReportTable::new(
        format!("kernel benchmark on {}", dataset.name()),
        columns,
    );
    for fold in 0..plan.folds() {
        let train = dataset.subset(&plan.train_indices(fold))?;
        let test = dataset.subset(plan.test_indices(fold))?;
        let augmented = augment_test_fold(&test, &ctx.set)?;

        let standard = SvmModel::train(
            train.x().to_owned(),
            train.y().to_vec(),
            Arc::new(rbf.clone()),
            rbf.to_string(),
            config.c,
            &SolveOptions::default(),
        )?;
        let std_plain = standard.accuracy(test.x(), test.y())?;
        let std_aug = standard.accuracy(augmented.x(), augmented.y())?;

        let inv_acc = invariant_svm_accuracy(&invariant, &train, &augmented, config.c)?;
        table.push_row(fold.to_string(), vec![std_plain, std_aug, inv_acc]);
    }
    table.push_mean_row();
    Ok(table)
}

/// Trains the invariant-kernel SVM from a precomputed (symmetrized) Gram and
/// scores a test set through one batched cross-Gram instead of per-pair
/// kernel calls.
fn invariant_svm_accuracy(
    invariant: &InvariantKernel,
    train: &Dataset,
    test: &Dataset,
    c: f64,
) -> Result<f64> {
    let mut gram = invariant.gram(train.x(), train.x())?;
    // The template-mode estimator is symmetric only up to solver error when
    // the observed set is not a group; fold the two triangles together.
    let gram_t = gram.t().to_owned();
    gram += &gram_t;
    gram /= 2.0;
    let model = SvmModel::from_gram(
        gram,
        train.x().to_owned(),
        train.y().to_vec(),
        Arc::new(invariant.clone()),
        format!("invariant({})", invariant.base_spec()),
        c,
        &SolveOptions::default(),
    )?;
    let cross = invariant.gram(train.x(), test.x())?;
    let mut hits = 0usize;
    for (j, &label) in test.y().iter().enumerate() {
        let mut f = model.solution.bias;
        for &i in &model.solution.support_indices {
            f += model.solution.alpha[i] * train.y()[i] * cross[[i, j]];
        }
        let predicted = if f >= 0.0 { 1.0 } else { -1.0 };
        if predicted == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.y().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group_algebra::GroupKind;
    use crate::kernels::{Kernel, RecordingKernel};
    use ndarray::array;

    #[test]
    fn csv_label_remap_sorted() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(file, "1.0,0.0,1\n0.0,1.0,0\n0.5,0.5,1\n0.2,0.8,0\n").unwrap();
        let data = load_csv(file.path(), LabelColumn::Last, b',', false).unwrap();
        assert_eq!(data.y(), &[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(data.dim(), 2);
    }

    #[test]
    fn csv_header_skipped_and_first_column_labels() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(file, "label,a,b\npos,1.0,0.0\nneg,0.0,2.0\n").unwrap();
        let data = load_csv(file.path(), LabelColumn::First, b',', true).unwrap();
        // "neg" < "pos" so neg -> -1.
        assert_eq!(data.y(), &[1.0, -1.0]);
        assert!((data.x().row(1).dot(&data.x().row(1)) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn csv_rejects_three_labels_and_ragged_rows() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(file, "1.0,0.0,a\n0.0,1.0,b\n0.5,0.5,c\n").unwrap();
        assert!(matches!(
            load_csv(file.path(), LabelColumn::Last, b',', false),
            Err(Error::LabelCardinality { count: 3 })
        ));
        let mut ragged = tempfile::NamedTempFile::new().unwrap();
        write!(ragged, "1.0,0.0,1\n0.0,1\n").unwrap();
        assert!(matches!(
            load_csv(ragged.path(), LabelColumn::Last, b',', false),
            Err(Error::RaggedRow { .. })
        ));
    }

    #[test]
    fn csv_zero_row_rejected_under_normalization() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(file, "1.0,0.0,1\n0.0,0.0,0\n").unwrap();
        assert!(matches!(
            load_csv(file.path(), LabelColumn::Last, b',', true),
            Err(Error::ZeroNormRow { row: 1 })
        ));
    }

    #[test]
    fn folds_partition_and_are_deterministic() {
        let plan = make_folds(23, 5, 42).unwrap();
        let mut all: Vec<usize> = plan
            .test_folds
            .iter()
            .flat_map(|f| f.iter().copied())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        for f in 0..5 {
            let train = plan.train_indices(f);
            assert_eq!(train.len() + plan.test_indices(f).len(), 23);
        }
        assert_eq!(plan, make_folds(23, 5, 42).unwrap());
        assert_ne!(plan, make_folds(23, 5, 43).unwrap());
        assert!(matches!(
            make_folds(4, 5, 0),
            Err(Error::TooManyFolds { folds: 5, samples: 4 })
        ));
    }

    #[test]
    fn augmentation_identity_and_cardinality() {
        let data = Dataset::normalized(
            "toy",
            array![[1.0, 0.0], [0.0, 2.0], [3.0, 4.0]],
            vec![1.0, -1.0, 1.0],
        )
        .unwrap();
        let identity =
            OrthogonalSet::from_elements(vec![ndarray::Array2::eye(2)], true, "identity").unwrap();
        let same = augment_test_fold(&data, &identity).unwrap();
        assert_eq!(same.x(), data.x());
        assert_eq!(same.y(), data.y());

        let set = OrthogonalSet::sample(2, 5, 9, true).unwrap();
        let aug = augment_test_fold(&data, &set).unwrap();
        assert_eq!(aug.len(), 15);
        assert_eq!(&aug.y()[..3], data.y());
        assert_eq!(&aug.y()[3..6], data.y());
        // Orthogonal action preserves row norms.
        for row in aug.x().rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn config_roundtrip_and_unknown_key() {
        let config = ExperimentConfig {
            folds: 4,
            rbf_sigma: 0.5,
            ..ExperimentConfig::default()
        };
        let text = config.to_kv_text();
        let back = ExperimentConfig::from_kv_text(&text).unwrap();
        assert_eq!(back.folds, 4);
        assert_eq!(back.rbf_sigma, 0.5);
        assert_eq!(back.pooling.to_string(), config.pooling.to_string());
        assert!(ExperimentConfig::from_kv_text("bogus=1\n").is_err());
    }

    #[test]
    fn synthetic_dataset_shape() {
        let data = Dataset::synthetic_two_gaussians(20, 40, 1).unwrap();
        assert_eq!(data.len(), 40);
        assert_eq!(data.dim(), 20);
        assert!(data.is_normalized());
        assert_eq!(data.y().iter().filter(|y| **y == 1.0).count(), 20);
        // Deterministic under seed.
        let again = Dataset::synthetic_two_gaussians(20, 40, 1).unwrap();
        assert_eq!(data.x(), again.x());
    }

    #[test]
    fn report_rendering_is_deterministic() {
        let mut table = ReportTable::new("t", vec!["a".into(), "b".into()]);
        table.push_row("0", vec![0.5, 1.0]);
        table.push_row("1", vec![0.25, 0.75]);
        table.push_mean_row();
        assert_eq!(table.mean_row().unwrap(), &[0.375, 0.875]);
        let text = table.to_text();
        assert!(text.contains("mean"));
        assert_eq!(text, table.clone().to_text());
        let csv = table.to_csv_string();
        assert!(csv.starts_with("fold,a,b\n"));
    }

    #[test]
    fn feature_experiment_smoke_and_determinism() {
        let data = Dataset::synthetic_two_gaussians(6, 40, 5).unwrap();
        let config = ExperimentConfig {
            folds: 3,
            group_size: 3,
            template_count: 8,
            ..ExperimentConfig::default()
        };
        let a = run_feature_experiment(&config, &data).unwrap();
        let b = run_feature_experiment(&config, &data).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        assert_eq!(a.rows.len(), 4); // 3 folds + mean
        for row in &a.rows {
            for v in row {
                assert!((0.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn kernel_experiment_smoke_and_determinism() {
        let data = Dataset::synthetic_two_gaussians(6, 40, 5).unwrap();
        let config = ExperimentConfig {
            folds: 3,
            group_size: 3,
            template_count: 8,
            ..ExperimentConfig::default()
        };
        let a = run_kernel_experiment(&config, &data).unwrap();
        let b = run_kernel_experiment(&config, &data).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        assert_eq!(a.columns.len(), 3);
    }

    #[test]
    fn identity_group_makes_augmented_equal_plain() {
        // With G0 = {I} the augmented fold is the plain fold, so the two raw
        // columns agree exactly.
        let data = Dataset::synthetic_two_gaussians(5, 30, 2).unwrap();
        let config = ExperimentConfig {
            folds: 3,
            group_size: 1,
            template_count: 6,
            ..ExperimentConfig::default()
        };
        let table = run_feature_experiment(&config, &data).unwrap();
        let raw_plain = table.column("raw/plain").unwrap();
        let raw_aug = table.column("raw/aug").unwrap();
        for row in &table.rows {
            assert_eq!(row[raw_plain], row[raw_aug]);
        }
    }

    #[test]
    fn leakage_guard_no_transformed_labelled_samples() {
        // Instrumented bank: every kernel argument must be either an
        // original sample or a (transformed) template -- never g*x for a
        // labelled sample and a non-identity g.
        let data = Dataset::synthetic_two_gaussians(4, 12, 3).unwrap();
        let set = OrthogonalSet::sample(4, 3, 1, true).unwrap();
        let templates = random_unit_templates(4, 5, 2);
        let spec = KernelSpec::rbf(1.0).unwrap();
        let recorder = Arc::new(RecordingKernel::new(spec.clone()));
        let bank = TemplateBank::with_kernel(
            templates.clone(),
            set.clone(),
            spec,
            Arc::clone(&recorder) as Arc<dyn Kernel>,
            None,
        )
        .unwrap();
        let pooling = PoolingSpec::new(PoolingMode::Max).unwrap();
        for row in data.x().rows() {
            kernel_signature(row, &bank, &pooling).unwrap();
        }
        let mut forbidden: Vec<Vec<f64>> = Vec::new();
        for g in set.iter().skip(1) {
            for row in data.x().rows() {
                forbidden.push(g.dot(&row).to_vec());
            }
        }
        let close = |a: &[f64], b: &[f64]| {
            a.len() == b.len()
                && a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= 1e-12)
        };
        for (lhs, rhs) in recorder.calls() {
            for bad in &forbidden {
                assert!(!close(&lhs, bad) && !close(&rhs, bad));
            }
        }
        assert!(recorder.call_count() > 0);
    }

    #[test]
    fn subset_preserves_rows() {
        let data = Dataset::new(
            "toy",
            array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]],
            vec![1.0, -1.0, 1.0],
        )
        .unwrap();
        let sub = data.subset(&[2, 0]).unwrap();
        assert_eq!(sub.x().row(0), data.x().row(2));
        // Single-class subsets are fine (test folds can be one-sided)...
        assert_eq!(sub.y(), &[1.0, 1.0]);
        // ...but single-class ingestion is not.
        assert!(Dataset::new("bad", array![[1.0, 0.0], [0.0, 1.0]], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn exact_group_available_for_augmentation() {
        let set = OrthogonalSet::exact(GroupKind::Reflection { dim: 2, axis: 1 }).unwrap();
        let data = Dataset::normalized(
            "toy",
            array![[1.0, 1.0], [1.0, -1.0]],
            vec![1.0, -1.0],
        )
        .unwrap();
        let aug = augment_test_fold(&data, &set).unwrap();
        assert_eq!(aug.len(), 4);
        // Reflection flips the second coordinate of each source row.
        assert_eq!(aug.x()[[2, 1]], -data.x()[[0, 1]]);
    }
}
