//! Round-trip the three on-disk artifacts: group files, template-bank
//! files, and SVM model files.

use std::sync::Arc;

use invariant_kernels::harness::Dataset;
use invariant_kernels::invariant_kernel::random_unit_templates;
use invariant_kernels::svm::SolveOptions;
use invariant_kernels::{GroupKind, KernelSpec, OrthogonalSet, Result, SvmModel, TemplateBank};

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("invariant-kernels-example");
    std::fs::create_dir_all(&dir)?;

    let set = OrthogonalSet::exact(GroupKind::Permutations { dim: 3 })?;
    let group_path = dir.join("perm3.group");
    set.save(&group_path)?;
    let set_back = OrthogonalSet::load(&group_path)?;
    assert_eq!(set_back.len(), set.len());
    println!("group file     : {} ({} elements)", group_path.display(), set_back.len());

    let spec = KernelSpec::rbf(1.0)?;
    let bank = TemplateBank::new(random_unit_templates(3, 10, 1), set, spec.clone(), None)?;
    let bank_path = dir.join("perm3.bank");
    bank.save(&bank_path)?;
    let bank_back = TemplateBank::load(&bank_path, spec.clone(), None)?;
    assert_eq!(bank_back.template_count(), 10);
    println!("bank file      : {} ({} templates)", bank_path.display(), bank_back.template_count());

    let data = Dataset::synthetic_two_gaussians(3, 30, 2)?;
    let model = SvmModel::train(
        data.x().to_owned(),
        data.y().to_vec(),
        Arc::new(spec.clone()),
        spec.to_string(),
        1.0,
        &SolveOptions::default(),
    )?;
    let model_path = dir.join("perm3.svm");
    model.save(&model_path)?;
    let model_back = SvmModel::load(&model_path, Arc::new(spec))?;
    let x = data.x();
    let probe = x.row(0);
    assert_eq!(
        model.decision_value(probe)?,
        model_back.decision_value(probe)?
    );
    println!("model file     : {} (kernel {})", model_path.display(), model_back.kernel_desc());
    println!("decision values identical after reload");
    Ok(())
}
