//! Parse kernels from their text grammar and verify they are unitary:
//! k(gx, gy) = k(x, y) for every orthogonal g.

use invariant_kernels::kernels::verify_unitarity;
use invariant_kernels::{KernelSpec, OrthogonalSet, Result};

fn main() -> Result<()> {
    let set = OrthogonalSet::sample(5, 8, 3, false)?;
    for text in ["linear", "rbf:sigma=1", "rbf:sigma=0.25", "poly:d=2,c=1", "poly:d=3,c=0.5"] {
        let spec: KernelSpec = text.parse()?;
        let worst = verify_unitarity(&spec, &set, 1000, 7);
        println!("{:<16} max |k(gx,gy) - k(x,y)| = {worst:.3e} over 1000 trials", spec.to_string());
    }

    // The grammar round-trips through Display.
    let spec: KernelSpec = "poly:d=2,c=1".parse()?;
    let again: KernelSpec = spec.to_string().parse()?;
    assert_eq!(spec, again);
    println!("grammar round-trip: {spec}");
    Ok(())
}
