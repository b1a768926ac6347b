//! Pooled invariant signatures: project a sample onto transformed templates
//! and pool with mean / max / moment / smoothed-CDF nonlinearities. On an
//! exact group the signature is invariant: Y(gx) = Y(x).

use invariant_kernels::invariant_features::{kernel_signature, linear_signature};
use invariant_kernels::invariant_kernel::random_unit_templates;
use invariant_kernels::{
    GroupKind, KernelSpec, OrthogonalSet, PoolingMode, PoolingSpec, Result, TemplateBank,
};
use ndarray::Array1;

fn main() -> Result<()> {
    let set = OrthogonalSet::exact(GroupKind::CyclicRotation { dim: 3, plane: (0, 1), order: 6 })?;
    let templates = random_unit_templates(3, 4, 9);
    let x = {
        let mut v = Array1::<f64>::from_vec(vec![0.6, -0.3, 0.5]);
        let n = v.dot(&v).sqrt();
        v /= n;
        v
    };

    let poolings = [
        PoolingSpec::new(PoolingMode::Mean)?,
        PoolingSpec::new(PoolingMode::Max)?,
        PoolingSpec::new(PoolingMode::Moment(3))?,
        PoolingSpec::new(PoolingMode::Cdf { bins: 4, smoothing: 0.5 })?,
    ];

    for pooling in &poolings {
        let sig = linear_signature(x.view(), &set, templates.view(), pooling)?;
        // Invariance under every group element.
        let mut worst: f64 = 0.0;
        for g in set.iter() {
            let gx = g.dot(&x);
            let sig_g = linear_signature(gx.view(), &set, templates.view(), pooling)?;
            worst = worst.max(
                sig.values()
                    .iter()
                    .zip(sig_g.values().iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max),
            );
        }
        println!(
            "{:<22} outputs/template = {:<2} max |Y(gx)-Y(x)| = {worst:.3e}",
            pooling.to_string(),
            pooling.n_outputs()
        );
    }

    // Kernel signatures run through a template bank instead of raw inner
    // products; the sample itself is never transformed.
    let bank = TemplateBank::new(templates, set, KernelSpec::rbf(1.0)?, None)?;
    let pooling = PoolingSpec::new(PoolingMode::Mean)?;
    let sig = kernel_signature(x.view(), &bank, &pooling)?;
    println!("rbf signature (mean-pooled, normalized): {:?}", sig.flatten().to_vec());
    println!("feature names: {:?}", sig.feature_names());
    Ok(())
}
