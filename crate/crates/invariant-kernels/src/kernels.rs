//! Base positive semi-definite kernels and the unitarity check.
//!
//! All three shipped kernels depend on their inputs only through `<x, y>`
//! and `||x - y||`, so they are unchanged when both arguments are hit by
//! the same orthogonal transformation.

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use ndarray_linalg::{Eigh, UPLO};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::group_algebra::OrthogonalSet;

/// Anything that evaluates a kernel product between two vectors.
///
/// Implementations may assume equal, finite inputs; `kernel_eval` is the
/// checked entry point.
pub trait Kernel: Send + Sync {
    fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64;

    /// True when k(x, x) = 1 for all x.
    fn is_normalized(&self) -> bool {
        false
    }
}

/// Declarative kernel configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Linear,
    Rbf { sigma: f64 },
    Polynomial { degree: u32, offset: f64 },
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidKernel(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self::Rbf { sigma })
    }

    pub fn polynomial(degree: u32, offset: f64) -> Result<Self> {
        if degree < 1 {
            return Err(Error::InvalidKernel("degree must be >= 1".into()));
        }
        if !offset.is_finite() {
            return Err(Error::InvalidKernel("offset must be finite".into()));
        }
        Ok(Self::Polynomial { degree, offset })
    }

    /// All shipped kinds depend on inputs only through inner products and
    /// distances, hence are unitary in the sense of the unitarity check.
    pub fn claims_unitary(&self) -> bool {
        true
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Linear => Ok(()),
            Self::Rbf { sigma } => Self::rbf(*sigma).map(|_| ()),
            Self::Polynomial { degree, offset } => Self::polynomial(*degree, *offset).map(|_| ()),
        }
    }
}

impl Kernel for KernelSpec {
    fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match self {
            Self::Linear => x.dot(&y),
            Self::Rbf { sigma } => {
                let mut sq = 0.0;
                for (a, b) in x.iter().zip(y.iter()) {
                    let d = a - b;
                    sq += d * d;
                }
                (-sq / (2.0 * sigma * sigma)).exp()
            }
            Self::Polynomial { degree, offset } => (x.dot(&y) + offset).powi(*degree as i32),
        }
    }

    fn is_normalized(&self) -> bool {
        matches!(self, Self::Rbf { .. })
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear => write!(f, "linear"),
            Self::Rbf { sigma } => write!(f, "rbf:sigma={sigma}"),
            Self::Polynomial { degree, offset } => write!(f, "poly:d={degree},c={offset}"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    /// Grammar: `linear`, `rbf:sigma=<float>` (also accepts `σ=`),
    /// `poly:d=<int>,c=<float>` (c defaults to 1).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "linear" {
            return Ok(Self::Linear);
        }
        if let Some(rest) = s.strip_prefix("rbf:") {
            let val = rest
                .strip_prefix("sigma=")
                .or_else(|| rest.strip_prefix("\u{3c3}="))
                .ok_or_else(|| Error::Parse(format!("bad rbf spec: {s}")))?;
            let sigma: f64 = val
                .parse()
                .map_err(|e| Error::Parse(format!("bad sigma: {e}")))?;
            return Self::rbf(sigma);
        }
        if let Some(rest) = s.strip_prefix("poly:") {
            let mut degree = None;
            let mut offset = 1.0;
            for part in rest.split(',') {
                if let Some(v) = part.strip_prefix("d=") {
                    degree = Some(
                        v.parse::<u32>()
                            .map_err(|e| Error::Parse(format!("bad degree: {e}")))?,
                    );
                } else if let Some(v) = part.strip_prefix("c=") {
                    offset = v
                        .parse()
                        .map_err(|e| Error::Parse(format!("bad offset: {e}")))?;
                } else {
                    return Err(Error::Parse(format!("bad poly field: {part}")));
                }
            }
            let degree = degree.ok_or_else(|| Error::Parse("poly spec needs d=".into()))?;
            return Self::polynomial(degree, offset);
        }
        Err(Error::Parse(format!("unknown kernel spec: {s}")))
    }
}

/// Checked single evaluation.
pub fn kernel_eval(kernel: &dyn Kernel, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(kernel.eval(x, y))
}

/// Entry (i, j) = k(X_i, Y_j) for row-major sample matrices.
pub fn gram_matrix(
    kernel: &dyn Kernel,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: y.ncols(),
        });
    }
    let mut gram = Array2::zeros((x.nrows(), y.nrows()));
    for (i, xi) in x.rows().into_iter().enumerate() {
        for (j, yj) in y.rows().into_iter().enumerate() {
            gram[[i, j]] = kernel.eval(xi, yj);
        }
    }
    Ok(gram)
}

/// Max over sampled (x, y, g) of |k(gx, gy) - k(x, y)|.
pub fn verify_unitarity(
    kernel: &dyn Kernel,
    set: &OrthogonalSet,
    trials: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = set.dim();
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let x: Array1<f64> = Array1::from_iter((0..d).map(|_| StandardNormal.sample(&mut rng)));
        let y: Array1<f64> = Array1::from_iter((0..d).map(|_| StandardNormal.sample(&mut rng)));
        let base = kernel.eval(x.view(), y.view());
        let g = set.elements()[t % set.len()].view();
        let gx = g.dot(&x);
        let gy = g.dot(&y);
        worst = worst.max((kernel.eval(gx.view(), gy.view()) - base).abs());
    }
    worst
}

/// Smallest eigenvalue of a symmetric matrix; used by PSD checks. The PSD
/// tolerance scales with N to absorb eigensolver error.
pub fn min_symmetric_eigenvalue(m: &Array2<f64>) -> Result<f64> {
    let (eigs, _) = m
        .eigh(UPLO::Lower)
        .map_err(|e| Error::Parse(format!("eigendecomposition failed: {e}")))?;
    Ok(eigs.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Wraps a kernel and records every argument pair it is asked to evaluate.
/// Test instrumentation for the no-transformed-labelled-sample contracts.
pub struct RecordingKernel<K> {
    inner: K,
    log: Mutex<Vec<(Vec<f64>, Vec<f64>)>>,
}

impl<K: Kernel> RecordingKernel<K> {
    pub fn new(inner: K) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.log.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn clear(&self) {
        self.log.lock().unwrap().clear();
    }
}

impl<K: Kernel> Kernel for RecordingKernel<K> {
    fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        self.log
            .lock()
            .unwrap()
            .push((x.to_vec(), y.to_vec()));
        self.inner.eval(x, y)
    }

    fn is_normalized(&self) -> bool {
        self.inner.is_normalized()
    }
}

impl<K: Kernel + ?Sized> Kernel for std::sync::Arc<K> {
    fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        (**self).eval(x, y)
    }

    fn is_normalized(&self) -> bool {
        (**self).is_normalized()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group_algebra::GroupKind;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn rbf_zero_distance() {
        let k = KernelSpec::rbf(1.0).unwrap();
        let x = array![0.3, -0.7, 2.0];
        assert_eq!(kernel_eval(&k, x.view(), x.view()).unwrap(), 1.0);
    }

    #[test]
    fn poly_trivial_value() {
        let k = KernelSpec::polynomial(2, 1.0).unwrap();
        let x = array![1.0, 0.0];
        assert_eq!(kernel_eval(&k, x.view(), x.view()).unwrap(), 4.0);
    }

    #[test]
    fn rbf_formula_oracle() {
        // Direct formula evaluation: exp(-0.5) for unit separation.
        let k = KernelSpec::rbf(1.0).unwrap();
        let x = array![0.0, 0.0];
        let y = array![1.0, 0.0];
        let v = kernel_eval(&k, x.view(), y.view()).unwrap();
        assert!((v - (-0.5f64).exp()).abs() <= 1e-15);
        assert!((v - 0.60653).abs() <= 1e-5);
    }

    #[test]
    fn rejects_dimension_mismatch_and_nonfinite() {
        let k = KernelSpec::Linear;
        assert!(kernel_eval(&k, array![1.0].view(), array![1.0, 2.0].view()).is_err());
        assert!(kernel_eval(&k, array![f64::NAN].view(), array![1.0].view()).is_err());
    }

    #[test]
    fn linear_gram_of_basis_is_identity() {
        let x = Array2::eye(2);
        let g = gram_matrix(&KernelSpec::Linear, x.view(), x.view()).unwrap();
        assert_eq!(g, Array2::eye(2));
    }

    #[test]
    fn single_row_gram() {
        let x = array![[0.1, 0.2, 0.3]];
        let g = gram_matrix(&KernelSpec::rbf(2.0).unwrap(), x.view(), x.view()).unwrap();
        assert_eq!(g.shape(), &[1, 1]);
        assert_eq!(g[[0, 0]], 1.0);
    }

    #[test]
    fn rbf_gram_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20;
        let data: Vec<f64> = (0..n * 4).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = Array2::from_shape_vec((n, 4), data).unwrap();
        let g = gram_matrix(&KernelSpec::rbf(1.0).unwrap(), x.view(), x.view()).unwrap();
        let sym = crate::group_algebra::max_norm_diff(&g.t().to_owned(), &g);
        assert!(sym <= 1e-12);
        let min_eig = min_symmetric_eigenvalue(&g).unwrap();
        assert!(min_eig >= -1e-8 * n as f64);
    }

    #[test]
    fn unitarity_of_shipped_kernels() {
        let groups = [
            OrthogonalSet::exact(GroupKind::Permutations { dim: 3 }).unwrap(),
            OrthogonalSet::exact(GroupKind::CyclicRotation {
                dim: 3,
                plane: (0, 1),
                order: 8,
            })
            .unwrap(),
        ];
        let kernels: Vec<KernelSpec> = vec![
            KernelSpec::Linear,
            KernelSpec::rbf(1.0).unwrap(),
            KernelSpec::polynomial(2, 1.0).unwrap(),
        ];
        for set in &groups {
            for k in &kernels {
                assert!(verify_unitarity(k, set, 100, 9) <= 1e-10, "{k}");
            }
        }
    }

    #[test]
    fn spec_grammar_roundtrip() {
        for s in ["linear", "rbf:sigma=1", "poly:d=2,c=1"] {
            let k: KernelSpec = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        // Unicode sigma accepted on input.
        let k: KernelSpec = "rbf:\u{3c3}=0.5".parse().unwrap();
        assert_eq!(k, KernelSpec::Rbf { sigma: 0.5 });
        assert!("rbf:sigma=0".parse::<KernelSpec>().is_err());
        assert!("poly:d=0".parse::<KernelSpec>().is_err());
        assert!("gauss".parse::<KernelSpec>().is_err());
    }

    #[test]
    fn recording_kernel_logs_calls() {
        let rec = RecordingKernel::new(KernelSpec::Linear);
        let x = array![1.0, 2.0];
        rec.eval(x.view(), x.view());
        assert_eq!(rec.call_count(), 1);
        assert_eq!(rec.calls()[0].0, vec![1.0, 2.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kernels_are_symmetric(
            xs in proptest::collection::vec(-5.0f64..5.0, 4),
            ys in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let x = Array1::from_vec(xs);
            let y = Array1::from_vec(ys);
            for k in [
                KernelSpec::Linear,
                KernelSpec::rbf(1.0).unwrap(),
                KernelSpec::polynomial(3, 1.0).unwrap(),
            ] {
                let a = k.eval(x.view(), y.view());
                let b = k.eval(y.view(), x.view());
                prop_assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
            }
        }
    }
}
