//! Certify signature stability: with a normalized kernel and pooling whose
//! outputs-times-Lipschitz product stays under 1/sqrt(2), the averaged
//! squared signature distance stays below 1 - k_H(x, x'), the Hausdorff
//! kernel similarity between the two orbits.

use invariant_kernels::invariant_features::check_stability;
use invariant_kernels::invariant_kernel::random_unit_templates;
use invariant_kernels::{
    GroupKind, KernelSpec, OrthogonalSet, PoolingMode, PoolingSpec, Result, TemplateBank,
};

fn main() -> Result<()> {
    let spec = KernelSpec::rbf(1.0)?;

    for (label, set) in [
        ("cyclic(8)", OrthogonalSet::exact(GroupKind::CyclicRotation { dim: 3, plane: (0, 1), order: 8 })?),
        ("perm(3)", OrthogonalSet::exact(GroupKind::Permutations { dim: 3 })?),
        ("singleton", OrthogonalSet::exact(GroupKind::CyclicRotation { dim: 3, plane: (0, 1), order: 1 })?),
    ] {
        let bank = TemplateBank::new(random_unit_templates(3, 12, 2), set, spec.clone(), None)?;
        // Mean pooling rescaled so N_out * L = 0.7 <= 1/sqrt(2).
        let pooling = PoolingSpec::compliant(PoolingMode::Mean, 0.7)?;
        let report = check_stability(&bank, &pooling, 500, 17)?;
        println!(
            "{label:<10} {} pairs, {} violations, max slack {:+.3e}, bound = {}",
            report.pairs,
            report.violations,
            report.max_slack,
            if report.hausdorff_bound { "1 - k_H(x,x')" } else { "1 - k(x,x')" }
        );
    }

    // Refusals: max pooling has no certificate, and an oversized Lipschitz
    // product violates the premise.
    let set = OrthogonalSet::exact(GroupKind::Permutations { dim: 3 })?;
    let bank = TemplateBank::new(random_unit_templates(3, 12, 2), set, spec, None)?;
    let max_pool = PoolingSpec::new(PoolingMode::Max)?;
    println!("max pooling     -> {:?}", check_stability(&bank, &max_pool, 10, 0).err().unwrap().to_string());
    let heavy = PoolingSpec::new(PoolingMode::Cdf { bins: 8, smoothing: 0.1 })?;
    println!("8-bin sharp cdf -> {:?}", check_stability(&bank, &heavy, 10, 0).err().unwrap().to_string());
    Ok(())
}
