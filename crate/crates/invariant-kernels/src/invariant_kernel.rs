//! The group-invariant kernel in three modes.
//!
//! Direct mode double-averages the base kernel over the observed set. For
//! exact groups the one-sided average is identical and |G| times cheaper.
//! Template mode observes the group only through transformed copies of an
//! unlabelled template bank: labelled samples are never transformed.

use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::cholesky::{CholeskyFactorized, FactorizeC, SolveC};
use ndarray_linalg::UPLO;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::group_algebra::OrthogonalSet;
use crate::kernels::{gram_matrix, Kernel, KernelSpec};

/// Relative residual allowed for the template-coefficient solve.
const SOLVE_RESIDUAL_TOL: f64 = 1e-8;

/// Unlabelled templates T with their transformed copies {gT} and the
/// factorized Gram system used to compute projection coefficients u_x.
pub struct TemplateBank {
    dim: usize,
    templates: Array2<f64>,
    set: OrthogonalSet,
    transformed: Vec<Array2<f64>>,
    spec: KernelSpec,
    kernel: Arc<dyn Kernel>,
    gram_tt: Array2<f64>,
    ridge: f64,
    factor: CholeskyFactorized<ndarray::OwnedRepr<f64>>,
    template_grams: Vec<Array2<f64>>,
    avg_template_gram: Array2<f64>,
}

impl TemplateBank {
    /// Builds a bank from `templates` (one template per column) over the
    /// observed set. `ridge` defaults to `1e-8 * trace(K(T,T)) / M`.
    pub fn new(
        templates: Array2<f64>,
        set: OrthogonalSet,
        spec: KernelSpec,
        ridge: Option<f64>,
    ) -> Result<Self> {
        spec.validate()?;
        let kernel: Arc<dyn Kernel> = Arc::new(spec.clone());
        Self::with_kernel(templates, set, spec, kernel, ridge)
    }

    /// Like [`TemplateBank::new`] but evaluating through an explicit kernel
    /// implementation (e.g. a [`crate::kernels::RecordingKernel`]). The
    /// `spec` is kept for serialization and must describe the same kernel.
    pub fn with_kernel(
        templates: Array2<f64>,
        set: OrthogonalSet,
        spec: KernelSpec,
        kernel: Arc<dyn Kernel>,
        ridge: Option<f64>,
    ) -> Result<Self> {
        let dim = templates.nrows();
        let m = templates.ncols();
        if m == 0 {
            return Err(Error::EmptySet);
        }
        if dim != set.dim() {
            return Err(Error::DimensionMismatch {
                expected: set.dim(),
                got: dim,
            });
        }
        // Columns are templates; gram entries index templates.
        let t_rows = templates.t();
        let gram_tt = gram_matrix(kernel.as_ref(), t_rows, t_rows)?;
        let ridge = match ridge {
            Some(r) if r >= 0.0 => r,
            Some(r) => {
                return Err(Error::InvalidKernel(format!("ridge must be >= 0, got {r}")))
            }
            None => 1e-8 * gram_tt.diag().sum() / m as f64,
        };
        let mut system = gram_tt.clone();
        for i in 0..m {
            system[[i, i]] += ridge;
        }
        let factor = system
            .factorizec(UPLO::Lower)
            .map_err(|_| Error::FactorizationFailed { ridge })?;
        let transformed: Vec<Array2<f64>> = set.iter().map(|g| g.dot(&templates)).collect();
        let template_grams: Vec<Array2<f64>> = transformed
            .iter()
            .map(|gt| gram_matrix(kernel.as_ref(), gt.t(), templates.t()))
            .collect::<Result<_>>()?;
        let mut avg_template_gram = Array2::zeros((m, m));
        for tg in &template_grams {
            avg_template_gram += tg;
        }
        avg_template_gram /= template_grams.len() as f64;
        Ok(Self {
            dim,
            templates,
            set,
            transformed,
            spec,
            kernel,
            gram_tt,
            ridge,
            factor,
            template_grams,
            avg_template_gram,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn template_count(&self) -> usize {
        self.templates.ncols()
    }

    pub fn group_size(&self) -> usize {
        self.set.len()
    }

    pub fn set(&self) -> &OrthogonalSet {
        &self.set
    }

    pub fn templates(&self) -> &Array2<f64> {
        &self.templates
    }

    /// Transformed copies gT, one d x M matrix per group element.
    pub fn transformed(&self) -> &[Array2<f64>] {
        &self.transformed
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn kernel(&self) -> &Arc<dyn Kernel> {
        &self.kernel
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn gram_tt(&self) -> &Array2<f64> {
        &self.gram_tt
    }

    /// Precomputed K(gT, T), one M x M matrix per group element.
    pub fn template_grams(&self) -> &[Array2<f64>] {
        &self.template_grams
    }

    /// (1/|G|) sum_g K(gT, T).
    pub fn averaged_template_gram(&self) -> &Array2<f64> {
        &self.avg_template_gram
    }

    /// Projection coefficients u_x solving (K(T,T) + ridge I) u = k(T, x).
    pub fn project(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let rhs = self.kernel_against_templates(x);
        let u = self
            .factor
            .solvec(&rhs)
            .map_err(|_| Error::FactorizationFailed { ridge: self.ridge })?;
        let mut residual = self.gram_tt.dot(&u);
        residual.scaled_add(self.ridge, &u);
        residual -= &rhs;
        let rel = norm2(residual.view()) / norm2(rhs.view()).max(1.0);
        if rel > SOLVE_RESIDUAL_TOL {
            return Err(Error::SolveResidual { residual: rel });
        }
        Ok(u)
    }

    /// k(t_i, x) for every template.
    pub fn kernel_against_templates(&self, x: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_iter(
            self.templates
                .columns()
                .into_iter()
                .map(|t| self.kernel.eval(t, x)),
        )
    }

    /// Projection coefficients for every row of `x`, as columns of an M x N
    /// matrix.
    pub fn project_all(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut u = Array2::zeros((self.template_count(), x.nrows()));
        for (i, row) in x.rows().into_iter().enumerate() {
            u.column_mut(i).assign(&self.project(row)?);
        }
        Ok(u)
    }

    /// Writes the orthogonal-set block followed by a `templates d M` header
    /// and the d x M template matrix. Kernel spec and ridge are not stored;
    /// a bank is reconstructable bit-exactly from (file, spec, ridge).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        self.set.write_to(&mut w)?;
        writeln!(w, "templates {} {}", self.dim, self.template_count())?;
        for row in self.templates.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(
        r: R,
        spec: KernelSpec,
        ridge: Option<f64>,
        descriptor: impl Into<String>,
    ) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut content = String::new();
        reader.read_to_string(&mut content)?;
        let marker = content
            .find("\ntemplates ")
            .ok_or_else(|| Error::Parse("missing templates block".into()))?;
        let (set_part, rest) = content.split_at(marker + 1);
        let set = OrthogonalSet::read_from(set_part.as_bytes(), descriptor)?;
        let mut lines = rest.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing templates header".into()))?;
        let mut toks = header.split_whitespace();
        if toks.next() != Some("templates") {
            return Err(Error::Parse("bad templates header".into()));
        }
        let d: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse("bad templates d".into()))?;
        let m: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse("bad templates M".into()))?;
        let mut templates = Array2::zeros((d, m));
        for i in 0..d {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("truncated template block".into()))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<_>>()?;
            if row.len() != m {
                return Err(Error::Parse(format!(
                    "template row has {} entries, expected {m}",
                    row.len()
                )));
            }
            for (j, v) in row.into_iter().enumerate() {
                templates[[i, j]] = v;
            }
        }
        Self::new(templates, set, spec, ridge)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(
        path: impl AsRef<Path>,
        spec: KernelSpec,
        ridge: Option<f64>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::read_from(file, spec, ridge, format!("file({})", path.display()))
    }
}

/// Unit-norm random template columns, deterministic under seed.
pub fn random_unit_templates(dim: usize, count: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Array2::zeros((dim, count));
    for mut col in t.columns_mut() {
        loop {
            for v in col.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let n = norm2(col.view());
            if n > 1e-12 {
                col.mapv_inplace(|v| v / n);
                break;
            }
        }
    }
    t
}

#[derive(Clone)]
enum Inner {
    Direct {
        set: OrthogonalSet,
        kernel: Arc<dyn Kernel>,
        spec: KernelSpec,
    },
    OneSided {
        set: OrthogonalSet,
        kernel: Arc<dyn Kernel>,
        spec: KernelSpec,
    },
    Template { bank: Arc<TemplateBank> },
}

/// Evaluation mode of an invariant kernel handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Direct,
    OneSided,
    Template,
}

/// A G-invariant kernel `k_Psi` backed by a base unitary kernel.
#[derive(Clone)]
pub struct InvariantKernel {
    inner: Inner,
}

impl InvariantKernel {
    /// Double average: (1/|G|^2) sum_g sum_g' k(gx, g'y).
    pub fn direct(set: OrthogonalSet, spec: KernelSpec) -> Result<Self> {
        spec.validate()?;
        let kernel: Arc<dyn Kernel> = Arc::new(spec.clone());
        Ok(Self {
            inner: Inner::Direct { set, kernel, spec },
        })
    }

    pub fn direct_with_kernel(
        set: OrthogonalSet,
        spec: KernelSpec,
        kernel: Arc<dyn Kernel>,
    ) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            inner: Inner::Direct { set, kernel, spec },
        })
    }

    /// One-sided average: (1/|G|) sum_g k(x, gy). Valid only for exact
    /// groups, where it equals the direct form.
    pub fn one_sided(set: OrthogonalSet, spec: KernelSpec) -> Result<Self> {
        if !set.is_exact_group() {
            return Err(Error::NotExactGroup);
        }
        spec.validate()?;
        let kernel: Arc<dyn Kernel> = Arc::new(spec.clone());
        Ok(Self {
            inner: Inner::OneSided { set, kernel, spec },
        })
    }

    /// Template mode: (1/|G|) sum_g u_x^T K(gT, T) u_y. Observes the group
    /// only through the bank's transformed templates.
    pub fn template(bank: TemplateBank) -> Self {
        Self {
            inner: Inner::Template {
                bank: Arc::new(bank),
            },
        }
    }

    pub fn template_shared(bank: Arc<TemplateBank>) -> Self {
        Self {
            inner: Inner::Template { bank },
        }
    }

    pub fn mode(&self) -> Mode {
        match &self.inner {
            Inner::Direct { .. } => Mode::Direct,
            Inner::OneSided { .. } => Mode::OneSided,
            Inner::Template { .. } => Mode::Template,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.inner {
            Inner::Direct { set, .. } | Inner::OneSided { set, .. } => set.dim(),
            Inner::Template { bank } => bank.dim(),
        }
    }

    pub fn base_spec(&self) -> &KernelSpec {
        match &self.inner {
            Inner::Direct { spec, .. } | Inner::OneSided { spec, .. } => spec,
            Inner::Template { bank } => bank.spec(),
        }
    }

    pub fn bank(&self) -> Option<&Arc<TemplateBank>> {
        match &self.inner {
            Inner::Template { bank } => Some(bank),
            _ => None,
        }
    }

    pub fn group_set(&self) -> &OrthogonalSet {
        match &self.inner {
            Inner::Direct { set, .. } | Inner::OneSided { set, .. } => set,
            Inner::Template { bank } => bank.set(),
        }
    }

    pub fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        if y.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: y.len() });
        }
        match &self.inner {
            Inner::Direct { set, kernel, .. } => Ok(eval_direct(set, kernel.as_ref(), x, y)),
            Inner::OneSided { set, kernel, .. } => Ok(eval_one_sided(set, kernel.as_ref(), x, y)),
            Inner::Template { bank } => {
                let u_x = bank.project(x)?;
                let u_y = bank.project(y)?;
                Ok(u_x.dot(&bank.avg_template_gram.dot(&u_y)))
            }
        }
    }

    /// Entrywise Gram over sample rows.
    pub fn gram(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        let d = self.dim();
        if x.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.ncols() });
        }
        if y.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: y.ncols() });
        }
        match &self.inner {
            Inner::Direct { set, kernel, .. } => {
                let scale = 1.0 / (set.len() * set.len()) as f64;
                let mut acc = Array2::zeros((x.nrows(), y.nrows()));
                for g in set.iter() {
                    let gx = x.dot(&g.t());
                    for h in set.iter() {
                        let hy = y.dot(&h.t());
                        acc += &gram_matrix(kernel.as_ref(), gx.view(), hy.view())?;
                    }
                }
                acc *= scale;
                Ok(acc)
            }
            Inner::OneSided { set, kernel, .. } => {
                let scale = 1.0 / set.len() as f64;
                let mut acc = Array2::zeros((x.nrows(), y.nrows()));
                for g in set.iter() {
                    let gy = y.dot(&g.t());
                    acc += &gram_matrix(kernel.as_ref(), x, gy.view())?;
                }
                acc *= scale;
                Ok(acc)
            }
            Inner::Template { bank } => {
                let u_x = bank.project_all(x)?;
                let u_y = bank.project_all(y)?;
                Ok(u_x.t().dot(&bank.avg_template_gram).dot(&u_y))
            }
        }
    }
}

impl Kernel for InvariantKernel {
    fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        InvariantKernel::eval(self, x, y).expect("invariant kernel eval")
    }
}

fn eval_direct(
    set: &OrthogonalSet,
    kernel: &dyn Kernel,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> f64 {
    let gx: Vec<Array1<f64>> = set.iter().map(|g| g.dot(&x)).collect();
    let gy: Vec<Array1<f64>> = set.iter().map(|g| g.dot(&y)).collect();
    let mut acc = 0.0;
    for a in &gx {
        for b in &gy {
            acc += kernel.eval(a.view(), b.view());
        }
    }
    acc / (set.len() * set.len()) as f64
}

fn eval_one_sided(
    set: &OrthogonalSet,
    kernel: &dyn Kernel,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> f64 {
    let mut acc = 0.0;
    for g in set.iter() {
        let gy = g.dot(&y);
        acc += kernel.eval(x, gy.view());
    }
    acc / set.len() as f64
}

fn norm2(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

#[allow(unused)]
fn _axis_check(a: &Array2<f64>) -> usize {
    a.len_of(Axis(0))
}
