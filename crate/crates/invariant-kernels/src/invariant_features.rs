//! Pooled invariant signatures and the stability bound checker.
//!
//! A signature pools a nonlinearity over the projections of one sample onto
//! the transformed copies of each template. The sample itself is never
//! transformed; the group acts only on the (unlabelled) templates.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::group_algebra::OrthogonalSet;
use crate::invariant_kernel::TemplateBank;
use crate::kernels::Kernel;

/// Unit-norm tolerance for signature inputs.
const NORMALIZATION_TOL: f64 = 1e-8;
/// Slack allowed before a stability bound counts as violated.
const STABILITY_SLACK: f64 = 1e-9;

/// Pooling nonlinearity applied over the per-template projection set.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolingMode {
    /// Arithmetic mean of the projections (first moment).
    Mean,
    /// Maximum projection; the infinite-moment limit.
    Max,
    /// Mean of the n-th powers, signed for odd n.
    Moment(u32),
    /// Smoothed CDF bins: sigmoid((a - b_n) / smoothing) with thresholds
    /// b_n uniform on [-1, 1].
    Cdf { bins: usize, smoothing: f64 },
}

/// Pooling configuration: a mode plus an output scale factor. The scale
/// multiplies every pooled value and hence the Lipschitz constant, which is
/// how a mode is brought under the stability premise N_out * L <= 1/sqrt(2).
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingSpec {
    mode: PoolingMode,
    scale: f64,
}

impl PoolingSpec {
    pub fn new(mode: PoolingMode) -> Result<Self> {
        Self::scaled(mode, 1.0)
    }

    pub fn scaled(mode: PoolingMode, scale: f64) -> Result<Self> {
        match &mode {
            PoolingMode::Moment(n) if *n < 1 => {
                return Err(Error::Parse("moment order must be >= 1".into()))
            }
            PoolingMode::Cdf { bins, smoothing } => {
                if *bins < 1 {
                    return Err(Error::Parse("cdf bins must be >= 1".into()));
                }
                if !(*smoothing > 0.0) {
                    return Err(Error::Parse("cdf smoothing must be positive".into()));
                }
            }
            _ => {}
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Parse("pooling scale must be positive".into()));
        }
        Ok(Self { mode, scale })
    }

    /// A spec of the given mode rescaled so that N_out * L = `target`
    /// (default callers use a value below 1/sqrt(2)).
    pub fn compliant(mode: PoolingMode, target: f64) -> Result<Self> {
        let base = Self::scaled(mode, 1.0)?;
        if !base.is_certifiable() {
            return Err(Error::NonCertifiablePooling);
        }
        let product = base.n_outputs() as f64 * base.lipschitz_bound();
        Self::scaled(base.mode, target / product)
    }

    pub fn mode(&self) -> &PoolingMode {
        &self.mode
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Number of pooled outputs per template.
    pub fn n_outputs(&self) -> usize {
        match &self.mode {
            PoolingMode::Cdf { bins, .. } => *bins,
            _ => 1,
        }
    }

    /// Lipschitz constant of each pooled output as a function of a single
    /// projection value, for normalized projections (|a| <= 1).
    pub fn lipschitz_bound(&self) -> f64 {
        let base = match &self.mode {
            PoolingMode::Mean => 1.0,
            PoolingMode::Max => 1.0,
            PoolingMode::Moment(n) => *n as f64,
            PoolingMode::Cdf { smoothing, .. } => 1.0 / (4.0 * smoothing),
        };
        base * self.scale
    }

    /// Max pooling is non-smooth and exempt from the Lipschitz-sum premise;
    /// it is tested for invariance only.
    pub fn is_certifiable(&self) -> bool {
        !matches!(self.mode, PoolingMode::Max)
    }

    /// True when N_out * L <= 1/sqrt(2).
    pub fn satisfies_stability_premise(&self) -> bool {
        self.is_certifiable()
            && self.n_outputs() as f64 * self.lipschitz_bound()
                <= std::f64::consts::FRAC_1_SQRT_2 + 1e-12
    }

    /// Pools one projection set into `n_outputs` values.
    pub fn pool(&self, projections: &[f64]) -> Vec<f64> {
        let m = projections.len() as f64;
        match &self.mode {
            PoolingMode::Mean => {
                vec![self.scale * projections.iter().sum::<f64>() / m]
            }
            PoolingMode::Max => {
                vec![self.scale * projections.iter().cloned().fold(f64::NEG_INFINITY, f64::max)]
            }
            PoolingMode::Moment(n) => {
                let s: f64 = projections.iter().map(|a| a.powi(*n as i32)).sum();
                vec![self.scale * s / m]
            }
            PoolingMode::Cdf { bins, smoothing } => (0..*bins)
                .map(|b| {
                    let threshold = cdf_threshold(b, *bins);
                    let s: f64 = projections
                        .iter()
                        .map(|a| sigmoid((a - threshold) / smoothing))
                        .sum();
                    self.scale * s / m
                })
                .collect(),
        }
    }
}

impl std::fmt::Display for PoolingSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.mode {
            PoolingMode::Mean => write!(f, "mean")?,
            PoolingMode::Max => write!(f, "max")?,
            PoolingMode::Moment(n) => write!(f, "moment:n={n}")?,
            PoolingMode::Cdf { bins, smoothing } => {
                write!(f, "cdf:bins={bins},s={smoothing}")?
            }
        }
        if self.scale != 1.0 {
            write!(f, "@scale={}", self.scale)?;
        }
        Ok(())
    }
}

impl std::str::FromStr for PoolingSpec {
    type Err = Error;

    /// Grammar: `mean`, `max`, `moment:n=<int>`, `cdf:bins=<int>,s=<float>`,
    /// optionally suffixed with `@scale=<float>`.
    fn from_str(s: &str) -> Result<Self> {
        let (body, scale) = match s.split_once("@scale=") {
            Some((b, sc)) => (
                b,
                sc.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad pooling scale: {e}")))?,
            ),
            None => (s, 1.0),
        };
        let mode = match body.trim() {
            "mean" => PoolingMode::Mean,
            "max" => PoolingMode::Max,
            other => {
                if let Some(rest) = other.strip_prefix("moment:n=") {
                    PoolingMode::Moment(
                        rest.parse()
                            .map_err(|e| Error::Parse(format!("bad moment order: {e}")))?,
                    )
                } else if let Some(rest) = other.strip_prefix("cdf:") {
                    let mut bins = None;
                    let mut smoothing = None;
                    for part in rest.split(',') {
                        if let Some(v) = part.strip_prefix("bins=") {
                            bins = Some(
                                v.parse()
                                    .map_err(|e| Error::Parse(format!("bad bins: {e}")))?,
                            );
                        } else if let Some(v) = part.strip_prefix("s=") {
                            smoothing = Some(
                                v.parse()
                                    .map_err(|e| Error::Parse(format!("bad smoothing: {e}")))?,
                            );
                        } else {
                            return Err(Error::Parse(format!("bad cdf field: {part}")));
                        }
                    }
                    PoolingMode::Cdf {
                        bins: bins.ok_or_else(|| Error::Parse("cdf needs bins=".into()))?,
                        smoothing: smoothing
                            .ok_or_else(|| Error::Parse("cdf needs s=".into()))?,
                    }
                } else {
                    return Err(Error::Parse(format!("unknown pooling spec: {s}")));
                }
            }
        };
        Self::scaled(mode, scale)
    }
}

fn cdf_threshold(bin: usize, bins: usize) -> f64 {
    // Interior points uniform on [-1, 1], increasing with bin index.
    -1.0 + 2.0 * (bin as f64 + 1.0) / (bins as f64 + 1.0)
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// A K x N_out pooled feature array for one sample.
#[derive(Debug, Clone)]
pub struct PooledSignature {
    values: Array2<f64>,
    config: PoolingSpec,
    normalized: bool,
}

impl PooledSignature {
    fn new(values: Array2<f64>, config: PoolingSpec, normalized: bool) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            values,
            config,
            normalized,
        })
    }

    /// Row k holds the pooled outputs for template k.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn config(&self) -> &PoolingSpec {
        &self.config
    }

    pub fn template_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    /// Row-major flattening: template-major, then pooled output index.
    pub fn flatten(&self) -> Array1<f64> {
        Array1::from_iter(self.values.iter().cloned())
    }

    /// Column names matching [`PooledSignature::flatten`]: `t<k>_eta<n>`.
    pub fn feature_names(&self) -> Vec<String> {
        let n_out = self.values.ncols();
        (0..self.values.nrows())
            .flat_map(|k| (0..n_out).map(move |n| format!("t{k}_eta{n}")))
            .collect()
    }

    /// Squared distance averaged over the K templates.
    pub fn distance_squared(&self, other: &PooledSignature) -> f64 {
        let diff = &self.values - &other.values;
        diff.iter().map(|v| v * v).sum::<f64>() / self.values.nrows() as f64
    }
}

/// Linear signature: entry (k, n) pools eta_n over {<x, g t_k> : g in set}.
/// Inputs must be unit-normalized.
pub fn linear_signature(
    x: ArrayView1<f64>,
    set: &OrthogonalSet,
    templates: ArrayView2<f64>,
    pooling: &PoolingSpec,
) -> Result<PooledSignature> {
    let d = set.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    if templates.nrows() != d {
        return Err(Error::DimensionMismatch { expected: d, got: templates.nrows() });
    }
    require_unit(x)?;
    for t in templates.columns() {
        require_unit(t)?;
    }
    let n_out = pooling.n_outputs();
    let mut values = Array2::zeros((templates.ncols(), n_out));
    let mut projections = vec![0.0; set.len()];
    for (k, t) in templates.columns().into_iter().enumerate() {
        for (slot, g) in projections.iter_mut().zip(set.iter()) {
            *slot = x.dot(&g.dot(&t));
        }
        let pooled = pooling.pool(&projections);
        for (n, v) in pooled.into_iter().enumerate() {
            values[[k, n]] = v;
        }
    }
    PooledSignature::new(values, pooling.clone(), true)
}

/// Kernel signature: entry (k, n) pools eta_n over
/// {k(x, g t_k) / sqrt(k(x,x) k(t_k,t_k)) : g in the bank's set}. The
/// sample `x` is never transformed; only the stored gT copies are touched.
pub fn kernel_signature(
    x: ArrayView1<f64>,
    bank: &TemplateBank,
    pooling: &PoolingSpec,
) -> Result<PooledSignature> {
    if x.len() != bank.dim() {
        return Err(Error::DimensionMismatch { expected: bank.dim(), got: x.len() });
    }
    let kernel = bank.kernel();
    let k_xx = kernel.eval(x, x);
    if !(k_xx > 0.0) {
        return Err(Error::UnnormalizedKernel { deviation: (k_xx - 1.0).abs() });
    }
    let n_out = pooling.n_outputs();
    let kcount = bank.template_count();
    let mut values = Array2::zeros((kcount, n_out));
    let mut projections = vec![0.0; bank.group_size()];
    for k in 0..kcount {
        let k_tt = bank.gram_tt()[[k, k]];
        let norm = (k_xx * k_tt).sqrt();
        for (slot, gt) in projections.iter_mut().zip(bank.transformed().iter()) {
            *slot = kernel.eval(x, gt.column(k)) / norm;
        }
        let pooled = pooling.pool(&projections);
        for (n, v) in pooled.into_iter().enumerate() {
            values[[k, n]] = v;
        }
    }
    PooledSignature::new(values, pooling.clone(), true)
}

/// Partially invariant signature over an observed set G0 that need not be a
/// group. The computation is that of [`kernel_signature`]; invariance holds
/// only under the localization premise (projections supported inside G0).
pub fn partial_signature(
    x: ArrayView1<f64>,
    bank: &TemplateBank,
    pooling: &PoolingSpec,
) -> Result<PooledSignature> {
    kernel_signature(x, bank, pooling)
}

/// Outcome of a stability sweep.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// Pairs sampled.
    pub pairs: usize,
    /// Pairs whose signature distance exceeded the bound by more than the
    /// slack.
    pub violations: usize,
    /// Max over pairs of (distance^2 - bound); negative means every pair
    /// had margin.
    pub max_slack: f64,
    /// Which bound was checked: the Hausdorff bound for |G0| > 1, the plain
    /// 1 - k(x, x') bound for |G0| = 1.
    pub hausdorff_bound: bool,
}

/// Samples normalized pairs (x, x') and checks the stability bound
/// ||Y(x) - Y(x')||^2 < 1 - k(x, x')_H (or 1 - k(x, x') when |G0| = 1).
/// Refuses to certify unless the pooling satisfies N_out * L <= 1/sqrt(2)
/// and the kernel is normalized.
pub fn check_stability(
    bank: &TemplateBank,
    pooling: &PoolingSpec,
    pair_count: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if !pooling.is_certifiable() {
        return Err(Error::NonCertifiablePooling);
    }
    let n_out = pooling.n_outputs() as f64;
    let product = n_out * pooling.lipschitz_bound();
    if product > std::f64::consts::FRAC_1_SQRT_2 + 1e-12 {
        return Err(Error::LipschitzPremise {
            actual: product,
            required: std::f64::consts::FRAC_1_SQRT_2 / n_out,
        });
    }
    let kernel = bank.kernel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = bank.dim();
    // Normalized-kernel premise, probed on samples.
    for _ in 0..8 {
        let x = random_unit(d, &mut rng);
        let deviation = (kernel.eval(x.view(), x.view()) - 1.0).abs();
        if deviation > 1e-12 {
            return Err(Error::UnnormalizedKernel { deviation });
        }
    }
    let set = bank.set();
    let singleton = set.len() == 1;
    let mut violations = 0usize;
    let mut max_slack = f64::NEG_INFINITY;
    for _ in 0..pair_count {
        let x = random_unit(d, &mut rng);
        let y = random_unit(d, &mut rng);
        let sx = kernel_signature(x.view(), bank, pooling)?;
        let sy = kernel_signature(y.view(), bank, pooling)?;
        let dist = sx.distance_squared(&sy);
        let bound = if singleton {
            1.0 - kernel.eval(x.view(), y.view())
        } else {
            1.0 - hausdorff_kernel(kernel.as_ref(), set, x.view(), y.view())
        };
        let slack = dist - bound;
        max_slack = max_slack.max(slack);
        if slack > STABILITY_SLACK {
            violations += 1;
        }
    }
    Ok(StabilityReport {
        pairs: pair_count,
        violations,
        max_slack,
        hausdorff_bound: !singleton,
    })
}

/// Hausdorff kernel similarity: max over g, g' in the set of k(gx, g'y).
pub fn hausdorff_kernel(
    kernel: &dyn Kernel,
    set: &OrthogonalSet,
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
) -> f64 {
    let gx: Vec<Array1<f64>> = set.iter().map(|g| g.dot(&x)).collect();
    let gy: Vec<Array1<f64>> = set.iter().map(|g| g.dot(&y)).collect();
    let mut best = f64::NEG_INFINITY;
    for a in &gx {
        for b in &gy {
            best = best.max(kernel.eval(a.view(), b.view()));
        }
    }
    best
}

fn require_unit(v: ArrayView1<f64>) -> Result<()> {
    let norm = v.dot(&v).sqrt();
    if (norm - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Unnormalized { norm });
    }
    Ok(())
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    loop {
        let v: Array1<f64> = Array1::from_iter((0..dim).map(|_| StandardNormal.sample(rng)));
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            return v / n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group_algebra::GroupKind;
    use crate::invariant_kernel::random_unit_templates;
    use crate::kernels::KernelSpec;
    use ndarray::array;

    fn mean() -> PoolingSpec {
        PoolingSpec::new(PoolingMode::Mean).unwrap()
    }

    fn max_pool() -> PoolingSpec {
        PoolingSpec::new(PoolingMode::Max).unwrap()
    }

    #[test]
    fn singleton_mean_is_plain_projection() {
        let set = OrthogonalSet::sample(3, 1, 0, true).unwrap();
        let t = random_unit_templates(3, 2, 1);
        let x = random_unit(3, &mut ChaCha8Rng::seed_from_u64(2));
        let sig = linear_signature(x.view(), &set, t.view(), &mean()).unwrap();
        for k in 0..2 {
            assert!((sig.values()[[k, 0]] - x.dot(&t.column(k))).abs() <= 1e-14);
        }
    }

    #[test]
    fn swap_group_max_pooling_orbit() {
        let set = OrthogonalSet::exact(GroupKind::Permutations { dim: 2 }).unwrap();
        let t = array![[1.0], [0.0]];
        let x = array![0.6, 0.8];
        // Orbit projections {0.6, 0.8}; max is 0.8.
        let sig = linear_signature(x.view(), &set, t.view(), &max_pool()).unwrap();
        assert!((sig.values()[[0, 0]] - 0.8).abs() <= 1e-14);
        // Invariance: the swapped input pools the same orbit.
        let xs = array![0.8, 0.6];
        let sig2 = linear_signature(xs.view(), &set, t.view(), &max_pool()).unwrap();
        assert!((sig2.values()[[0, 0]] - sig.values()[[0, 0]]).abs() <= 1e-14);
    }

    #[test]
    fn rejects_unnormalized_inputs() {
        let set = OrthogonalSet::exact(GroupKind::Permutations { dim: 2 }).unwrap();
        let t = array![[1.0], [0.0]];
        let x = array![1.0, 1.0];
        assert!(matches!(
            linear_signature(x.view(), &set, t.view(), &mean()),
            Err(Error::Unnormalized { .. })
        ));
    }

    #[test]
    fn kernel_signature_singleton_bank() {
        let set = OrthogonalSet::sample(3, 1, 0, true).unwrap();
        let t = random_unit_templates(3, 3, 4);
        let spec = KernelSpec::rbf(1.0).unwrap();
        let bank = TemplateBank::new(t.clone(), set, spec.clone(), Some(0.0)).unwrap();
        let x = random_unit(3, &mut ChaCha8Rng::seed_from_u64(5));
        let sig = kernel_signature(x.view(), &bank, &mean()).unwrap();
        for k in 0..3 {
            let expect = spec.eval(x.view(), t.column(k));
            assert!((sig.values()[[k, 0]] - expect).abs() <= 1e-14);
        }
    }

    #[test]
    fn linear_bank_matches_linear_signature() {
        let set = OrthogonalSet::exact(GroupKind::Permutations { dim: 3 }).unwrap();
        let t = random_unit_templates(3, 4, 6);
        // Four templates in d=3 make the linear K(T,T) singular; let the
        // default ridge keep the factorization alive (signatures never use
        // the projection solve anyway).
        let bank = TemplateBank::new(t.clone(), set.clone(), KernelSpec::Linear, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for pooling in [mean(), max_pool()] {
            for _ in 0..10 {
                let x = random_unit(3, &mut rng);
                let a = linear_signature(x.view(), &set, t.view(), &pooling).unwrap();
                let b = kernel_signature(x.view(), &bank, &pooling).unwrap();
                let diff = (&a.values().clone() - b.values())
                    .iter()
                    .map(|v| v.abs())
                    .fold(0.0f64, f64::max);
                assert!(diff <= 1e-12);
            }
        }
    }

    #[test]
    fn kernel_signature_invariance_exact_group() {
        let set = OrthogonalSet::exact(GroupKind::CyclicRotation {
            dim: 2,
            plane: (0, 1),
            order: 8,
        })
        .unwrap();
        let t = random_unit_templates(2, 3, 8);
        let spec = KernelSpec::rbf(1.0).unwrap();
        let bank = TemplateBank::new(t, set.clone(), spec, Some(0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for pooling in [
            mean(),
            max_pool(),
            PoolingSpec::new(PoolingMode::Moment(2)).unwrap(),
            PoolingSpec::new(PoolingMode::Cdf { bins: 3, smoothing: 0.5 }).unwrap(),
        ] {
            for _ in 0..10 {
                let x = random_unit(2, &mut rng);
                let base = kernel_signature(x.view(), &bank, &pooling).unwrap();
                for g in set.iter() {
                    let gx = g.dot(&x);
                    let moved = kernel_signature(gx.view(), &bank, &pooling).unwrap();
                    let diff = (&base.values().clone() - moved.values())
                        .iter()
                        .map(|v| v.abs())
                        .fold(0.0f64, f64::max);
                    assert!(diff <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn partial_equals_kernel_signature_on_full_group() {
        let set = OrthogonalSet::exact(GroupKind::Permutations { dim: 3 }).unwrap();
        let t = random_unit_templates(3, 2, 10);
        let bank = TemplateBank::new(t, set, KernelSpec::rbf(1.0).unwrap(), Some(0.0)).unwrap();
        let x = random_unit(3, &mut ChaCha8Rng::seed_from_u64(11));
        let a = kernel_signature(x.view(), &bank, &mean()).unwrap();
        let b = partial_signature(x.view(), &bank, &mean()).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn partial_singleton_is_single_evaluation() {
        let set = OrthogonalSet::sample(2, 1, 0, true).unwrap();
        let t = array![[1.0], [0.0]];
        let spec = KernelSpec::rbf(1.0).unwrap();
        let bank = TemplateBank::new(t.clone(), set, spec.clone(), Some(0.0)).unwrap();
        let x = array![0.0, 1.0];
        let sig = partial_signature(x.view(), &bank, &max_pool()).unwrap();
        assert!((sig.values()[[0, 0]] - spec.eval(x.view(), t.column(0))).abs() <= 1e-14);
    }

    #[test]
    fn engineered_localization_partial_invariance() {
        // Half of cyclic_rotation(order=8): not a group. With a narrow RBF
        // the projections of x = t vanish outside the observed half, so the
        // signature is invariant to the observed elements.
        let full = OrthogonalSet::exact(GroupKind::CyclicRotation {
            dim: 2,
            plane: (0, 1),
            order: 8,
        })
        .unwrap();
        let half = OrthogonalSet::from_elements(
            full.elements()[..4].to_vec(),
            false,
            "half-cyclic(order=8)",
        )
        .unwrap();
        let t = array![[1.0], [0.0]];
        let spec = KernelSpec::rbf(0.1).unwrap();
        let bank = TemplateBank::new(t.clone(), half.clone(), spec, None).unwrap();
        let x = array![1.0, 0.0];
        let base = partial_signature(x.view(), &bank, &mean()).unwrap();
        for i in 0..half.len() {
            let gx = half.apply(i, x.view()).unwrap();
            let moved = partial_signature(gx.view(), &bank, &mean()).unwrap();
            let diff = (&base.values().clone() - moved.values())
                .iter()
                .map(|v| v.abs())
                .fold(0.0f64, f64::max);
            assert!(diff <= 1e-6, "element {i}: diff {diff}");
        }
    }

    #[test]
    fn mean_le_max_and_cdf_monotone() {
        let set = OrthogonalSet::exact(GroupKind::Permutations { dim: 3 }).unwrap();
        let t = random_unit_templates(3, 3, 12);
        let x = random_unit(3, &mut ChaCha8Rng::seed_from_u64(13));
        let m = linear_signature(x.view(), &set, t.view(), &mean()).unwrap();
        let mx = linear_signature(x.view(), &set, t.view(), &max_pool()).unwrap();
        for (a, b) in m.values().iter().zip(mx.values().iter()) {
            assert!(a <= &(b + 1e-14));
        }
        let cdf = PoolingSpec::new(PoolingMode::Cdf { bins: 5, smoothing: 0.3 }).unwrap();
        let sig = linear_signature(x.view(), &set, t.view(), &cdf).unwrap();
        for row in sig.values().rows() {
            for w in row.as_slice().unwrap().windows(2) {
                assert!(w[1] <= w[0] + 1e-14);
            }
        }
    }

    #[test]
    fn stability_identical_pair_no_violation() {
        let set = OrthogonalSet::exact(GroupKind::Permutations { dim: 3 }).unwrap();
        let bank = TemplateBank::new(
            random_unit_templates(3, 4, 14),
            set,
            KernelSpec::rbf(1.0).unwrap(),
            None,
        )
        .unwrap();
        let pooling = PoolingSpec::compliant(PoolingMode::Mean, 0.7).unwrap();
        let x = random_unit(3, &mut ChaCha8Rng::seed_from_u64(15));
        let s = kernel_signature(x.view(), &bank, &pooling).unwrap();
        assert_eq!(s.distance_squared(&s), 0.0);
    }

    #[test]
    fn stability_sweep_zero_violations() {
        let set = OrthogonalSet::exact(GroupKind::Permutations { dim: 3 }).unwrap();
        let bank = TemplateBank::new(
            random_unit_templates(3, 6, 16),
            set,
            KernelSpec::rbf(1.0).unwrap(),
            None,
        )
        .unwrap();
        let pooling = PoolingSpec::compliant(PoolingMode::Mean, 0.7).unwrap();
        let report = check_stability(&bank, &pooling, 200, 17).unwrap();
        assert_eq!(report.violations, 0);
        assert!(report.hausdorff_bound);
        assert!(report.max_slack < 0.0);
    }

    #[test]
    fn stability_singleton_uses_plain_bound() {
        let set = OrthogonalSet::sample(3, 1, 0, true).unwrap();
        let bank = TemplateBank::new(
            random_unit_templates(3, 4, 18),
            set,
            KernelSpec::rbf(1.0).unwrap(),
            None,
        )
        .unwrap();
        let pooling = PoolingSpec::compliant(PoolingMode::Mean, 0.7).unwrap();
        let report = check_stability(&bank, &pooling, 200, 19).unwrap();
        assert!(!report.hausdorff_bound);
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn stability_refuses_noncompliant_pooling() {
        let set = OrthogonalSet::exact(GroupKind::Permutations { dim: 3 }).unwrap();
        let bank = TemplateBank::new(
            random_unit_templates(3, 4, 20),
            set,
            KernelSpec::rbf(1.0).unwrap(),
            None,
        )
        .unwrap();
        let err = check_stability(&bank, &mean(), 10, 21).unwrap_err();
        match err {
            Error::LipschitzPremise { required, .. } => {
                assert!((required - std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-12);
            }
            other => panic!("unexpected error: {other}"),
        }
        assert!(matches!(
            check_stability(&bank, &max_pool(), 10, 21),
            Err(Error::NonCertifiablePooling)
        ));
    }

    #[test]
    fn stability_refuses_unnormalized_kernel() {
        let set = OrthogonalSet::exact(GroupKind::Permutations { dim: 3 }).unwrap();
        // poly(2, 1) gives k(x,x) = 4 on unit vectors, so the normalized-
        // kernel premise probe must refuse it.
        let bank = TemplateBank::new(
            random_unit_templates(3, 4, 22),
            set,
            KernelSpec::polynomial(2, 1.0).unwrap(),
            None,
        )
        .unwrap();
        let pooling = PoolingSpec::compliant(PoolingMode::Mean, 0.7).unwrap();
        assert!(matches!(
            check_stability(&bank, &pooling, 10, 23),
            Err(Error::UnnormalizedKernel { .. })
        ));
    }

    #[test]
    fn shared_orbit_point_implies_equal_signatures() {
        let set = OrthogonalSet::exact(GroupKind::SignedPermutations { dim: 3 }).unwrap();
        let bank = TemplateBank::new(
            random_unit_templates(3, 4, 24),
            set.clone(),
            KernelSpec::rbf(1.0).unwrap(),
            Some(0.0),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let x = random_unit(3, &mut rng);
        // x' on the orbit of x: signatures must coincide.
        let xp = set.apply(5 % set.len(), x.view()).unwrap();
        let a = kernel_signature(x.view(), &bank, &mean()).unwrap();
        let b = kernel_signature(xp.view(), &bank, &mean()).unwrap();
        let diff = (&a.values().clone() - b.values())
            .iter()
            .map(|v| v.abs())
            .fold(0.0f64, f64::max);
        assert!(diff <= 1e-8);
    }

    #[test]
    fn pooling_spec_grammar() {
        for s in ["mean", "max", "moment:n=2", "cdf:bins=3,s=0.5"] {
            let p: PoolingSpec = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        let p: PoolingSpec = "mean@scale=0.5".parse().unwrap();
        assert_eq!(p.scale(), 0.5);
        assert!("cdf:bins=0,s=1".parse::<PoolingSpec>().is_err());
        assert!("moment:n=0".parse::<PoolingSpec>().is_err());
    }
}
