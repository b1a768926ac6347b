//! Build exact groups and random orthogonal sets, then look at the group
//! averaging operator Psi = (1/|G|) sum_g g and its projection identities.

use invariant_kernels::{GroupKind, OrthogonalSet, Result};
use ndarray::Array2;

fn max_dev(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
}

fn main() -> Result<()> {
    let groups = [
        OrthogonalSet::exact(GroupKind::CyclicRotation { dim: 2, plane: (0, 1), order: 8 })?,
        OrthogonalSet::exact(GroupKind::Permutations { dim: 3 })?,
        OrthogonalSet::exact(GroupKind::SignedPermutations { dim: 3 })?,
        OrthogonalSet::exact(GroupKind::Reflection { dim: 4, axis: 2 })?,
    ];

    for set in &groups {
        let psi = set.average();
        let m = psi.matrix();
        let idem = max_dev(&m.dot(m), m);
        let sym = max_dev(&m.t().to_owned(), m);
        let invariance = set
            .iter()
            .map(|g| max_dev(&g.dot(m), m))
            .fold(0.0f64, f64::max)
            .max(set.iter().map(|g| max_dev(&m.dot(g), m)).fold(0.0, f64::max));
        println!(
            "{:<40} |G|={:<3} PsiPsi=Psi dev {:.2e}, Psi^T=Psi dev {:.2e}, gPsi=Psi dev {:.2e}",
            set.descriptor(),
            set.len(),
            idem,
            sym,
            invariance
        );
    }

    // A sampled set is orthogonal but not a group: the same identities fail.
    let sampled = OrthogonalSet::sample(3, 6, 42, true)?;
    let m = sampled.average().matrix().clone();
    println!(
        "{:<40} |G0|={:<2} PsiPsi=Psi dev {:.2e}  (not a projection: not an exact group)",
        sampled.descriptor(),
        sampled.len(),
        max_dev(&m.dot(&m), &m)
    );
    Ok(())
}
