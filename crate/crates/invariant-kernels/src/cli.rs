//! Subcommand surface for batch experiments and the verification suites.
//!
//! Exit codes: 0 success, 1 usage error, 2 numerical/validation failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::group_algebra::{GroupKind, OrthogonalSet};
use crate::harness::{
    augment_test_fold, load_csv, run_feature_experiment, run_kernel_experiment, Dataset,
    ExperimentConfig, LabelColumn,
};
use crate::invariant_features::{
    check_stability, kernel_signature, linear_signature, PoolingMode, PoolingSpec,
};
use crate::invariant_kernel::{random_unit_templates, InvariantKernel, TemplateBank};
use crate::kernels::{verify_unitarity, Kernel, KernelSpec};
use crate::svm::{SolveOptions, SvmModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Parser)]
#[command(name = "invariant-kernels", version, about = "Group-invariant kernels, pooled signatures, and an invariant-kernel SVM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an orthogonal set / group and save it as a text file.
    GenGroup {
        /// Group spec: cyclic:order=N | perm | signed-perm |
        /// reflection:axis=K | random:m=M,seed=S
        #[arg(long)]
        group: String,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a template bank file (group + unit template columns).
    GenTemplates {
        #[arg(long)]
        group: String,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract pooled invariant features from a labelled CSV.
    Features {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        bank: BankArgs,
        #[arg(long, default_value = "max")]
        pooling: String,
        /// Output CSV of features plus a trailing label column.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an SVM (optionally through the template-mode invariant kernel).
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        bank: BankArgs,
        /// Use the invariant kernel instead of the base kernel.
        #[arg(long)]
        invariant: bool,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long)]
        model_out: PathBuf,
        /// Where to save the template bank (required with --invariant).
        #[arg(long)]
        bank_out: Option<PathBuf>,
    },
    /// Predict with a saved model; prints one label per row.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Bank file for models trained with --invariant.
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Unlabeled CSV: every field is a feature.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
        /// Normalize rows to unit norm before predicting.
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the pooled-feature benchmark protocol.
    BenchFeatures {
        #[command(flatten)]
        bench: BenchArgs,
    },
    /// Run the invariant-kernel SVM benchmark protocol.
    BenchKernel {
        #[command(flatten)]
        bench: BenchArgs,
    },
    /// Run the invariant suites for a group and print a pass/fail table.
    Verify {
        #[arg(long)]
        group: String,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Labelled CSV path.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "last")]
    label_column: String,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Normalize rows to unit l2 norm.
    #[arg(long)]
    normalize: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let column: LabelColumn = self.label_column.parse()?;
        load_csv(&self.data, column, self.delimiter as u8, self.normalize)
    }
}

#[derive(Args)]
struct BankArgs {
    /// Load a saved bank file instead of generating one.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Group spec used when generating (see gen-group).
    #[arg(long, default_value = "random:m=10,seed=7")]
    group: String,
    #[arg(long, default_value_t = 100)]
    template_count: usize,
    #[arg(long, default_value_t = 11)]
    template_seed: u64,
    /// Base kernel: linear | rbf:sigma=<f> | poly:d=<n>,c=<f>
    #[arg(long, default_value = "rbf:sigma=1")]
    kernel: String,
}

impl BankArgs {
    fn spec(&self) -> Result<KernelSpec> {
        self.kernel.parse()
    }

    fn build(&self, dim: usize) -> Result<TemplateBank> {
        let spec = self.spec()?;
        if let Some(path) = &self.bank {
            return TemplateBank::load(path, spec, None);
        }
        let set = parse_group_spec(&self.group, dim)?;
        let templates = random_unit_templates(dim, self.template_count, self.template_seed);
        TemplateBank::new(templates, set, spec, None)
    }
}

#[derive(Args)]
struct BenchArgs {
    /// "synthetic" or a labelled CSV path.
    #[arg(long, default_value = "synthetic")]
    dataset: String,
    /// Seed for the synthetic dataset.
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
    /// key=value config file (see ExperimentConfig).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline config overrides, repeatable: --set folds=5
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

impl BenchArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        for entry in &self.overrides {
            let (key, value) = entry
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("override must be key=value: {entry}")))?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    fn dataset(&self) -> Result<Dataset> {
        if self.dataset == "synthetic" {
            Dataset::synthetic_two_gaussians(20, 400, self.data_seed)
        } else {
            load_csv(&self.dataset, LabelColumn::Last, b',', true)
        }
    }
}

/// Parses argv, dispatches, and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            EXIT_FAILURE
        }
    }
}

/// Group spec grammar: `cyclic:order=N` (plane (0,1)), `perm`,
/// `signed-perm`, `reflection:axis=K`, `random:m=M,seed=S` (includes the
/// identity).
pub fn parse_group_spec(spec: &str, dim: usize) -> Result<OrthogonalSet> {
    let spec = spec.trim();
    if spec == "perm" {
        return OrthogonalSet::exact(GroupKind::Permutations { dim });
    }
    if spec == "signed-perm" {
        return OrthogonalSet::exact(GroupKind::SignedPermutations { dim });
    }
    if let Some(rest) = spec.strip_prefix("cyclic:") {
        let order: usize = rest
            .strip_prefix("order=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad cyclic spec: {spec}")))?;
        return OrthogonalSet::exact(GroupKind::CyclicRotation {
            dim,
            plane: (0, 1),
            order,
        });
    }
    if let Some(rest) = spec.strip_prefix("reflection:") {
        let axis: usize = rest
            .strip_prefix("axis=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad reflection spec: {spec}")))?;
        return OrthogonalSet::exact(GroupKind::Reflection { dim, axis });
    }
    if let Some(rest) = spec.strip_prefix("random:") {
        let mut m = None;
        let mut seed = 0u64;
        for part in rest.split(',') {
            if let Some(v) = part.strip_prefix("m=") {
                m = v.parse().ok();
            } else if let Some(v) = part.strip_prefix("seed=") {
                seed = v
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad seed: {v}")))?;
            } else {
                return Err(Error::Parse(format!("bad random field: {part}")));
            }
        }
        let m = m.ok_or_else(|| Error::Parse("random spec needs m=".into()))?;
        return OrthogonalSet::sample(dim, m, seed, true);
    }
    Err(Error::Parse(format!("unknown group spec: {spec}")))
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::GenGroup { group, dim, out } => {
            let set = parse_group_spec(&group, dim)?;
            set.save(&out)?;
            println!(
                "wrote {} ({} elements, d={}, exact_group={})",
                out.display(),
                set.len(),
                set.dim(),
                set.is_exact_group()
            );
            Ok(EXIT_OK)
        }
        Command::GenTemplates { group, dim, count, seed, out } => {
            let set = parse_group_spec(&group, dim)?;
            let templates = random_unit_templates(dim, count, seed);
            let file = std::fs::File::create(&out)?;
            let mut w = std::io::BufWriter::new(file);
            set.write_to(&mut w)?;
            writeln!(w, "templates {dim} {count}")?;
            for row in templates.rows() {
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
            println!("wrote {} ({count} templates over {} elements)", out.display(), set.len());
            Ok(EXIT_OK)
        }
        Command::Features { data, bank, pooling, out } => {
            let dataset = data.load()?;
            let pooling: PoolingSpec = pooling.parse()?;
            let spec = bank.spec()?;
            let built = bank.build(dataset.dim())?;
            let file = std::fs::File::create(&out)?;
            let mut w = std::io::BufWriter::new(file);
            let mut header_done = false;
            for (i, row) in dataset.x().rows().into_iter().enumerate() {
                let sig = if matches!(spec, KernelSpec::Linear) {
                    linear_signature(row, built.set(), built.templates().view(), &pooling)?
                } else {
                    kernel_signature(row, &built, &pooling)?
                };
                if !header_done {
                    writeln!(w, "{},label", sig.feature_names().join(","))?;
                    header_done = true;
                }
                let values: Vec<String> =
                    sig.flatten().iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{},{}", values.join(","), dataset.y()[i])?;
            }
            println!("wrote {} ({} rows)", out.display(), dataset.len());
            Ok(EXIT_OK)
        }
        Command::Train { data, bank, invariant, c, model_out, bank_out } => {
            let dataset = data.load()?;
            let spec = bank.spec()?;
            let model = if invariant {
                let built = Arc::new(bank.build(dataset.dim())?);
                let kernel = InvariantKernel::template_shared(Arc::clone(&built));
                let mut gram = kernel.gram(dataset.x(), dataset.x())?;
                let gram_t = gram.t().to_owned();
                gram += &gram_t;
                gram /= 2.0;
                let bank_out = bank_out.ok_or_else(|| {
                    Error::Parse("--invariant requires --bank-out for later prediction".into())
                })?;
                built.save(&bank_out)?;
                SvmModel::from_gram(
                    gram,
                    dataset.x().to_owned(),
                    dataset.y().to_vec(),
                    Arc::new(kernel),
                    format!("invariant({spec})"),
                    c,
                    &SolveOptions::default(),
                )?
            } else {
                SvmModel::train(
                    dataset.x().to_owned(),
                    dataset.y().to_vec(),
                    Arc::new(spec.clone()),
                    spec.to_string(),
                    c,
                    &SolveOptions::default(),
                )?
            };
            model.save(&model_out)?;
            let train_acc = model.accuracy(dataset.x(), dataset.y())?;
            println!(
                "wrote {} (converged={}, support={}, train_accuracy={:.4})",
                model_out.display(),
                model.converged(),
                model.solution.support_indices.len(),
                train_acc
            );
            Ok(EXIT_OK)
        }
        Command::Predict { model, bank, data, delimiter, normalize, out } => {
            let desc = peek_model_kernel_desc(&model)?;
            let kernel: Arc<dyn Kernel> = if let Some(inner) = desc
                .strip_prefix("invariant(")
                .and_then(|s| s.strip_suffix(')'))
            {
                let spec: KernelSpec = inner.parse()?;
                let path = bank.ok_or_else(|| {
                    Error::Parse("model was trained with --invariant; pass --bank".into())
                })?;
                let built = TemplateBank::load(path, spec, None)?;
                Arc::new(InvariantKernel::template_shared(Arc::new(built)))
            } else {
                let spec: KernelSpec = desc.parse()?;
                Arc::new(spec)
            };
            let model = SvmModel::load(&model, kernel)?;
            let mut x = load_unlabeled(&data, delimiter as u8)?;
            if normalize {
                for mut row in x.rows_mut() {
                    let norm = row.dot(&row).sqrt();
                    if norm == 0.0 {
                        return Err(Error::ZeroNormRow { row: 0 });
                    }
                    row /= norm;
                }
            }
            let mut sink: Box<dyn Write> = match out {
                Some(path) => Box::new(std::fs::File::create(path)?),
                None => Box::new(std::io::stdout()),
            };
            for row in x.rows() {
                writeln!(sink, "{}", model.predict(row)?)?;
            }
            Ok(EXIT_OK)
        }
        Command::BenchFeatures { bench } => {
            let config = bench.config()?;
            let dataset = bench.dataset()?;
            let table = run_feature_experiment(&config, &dataset)?;
            print!("{}", table.to_text());
            if let Some(path) = bench.out_csv {
                table.write_csv(path)?;
            }
            Ok(EXIT_OK)
        }
        Command::BenchKernel { bench } => {
            let config = bench.config()?;
            let dataset = bench.dataset()?;
            let table = run_kernel_experiment(&config, &dataset)?;
            print!("{}", table.to_text());
            if let Some(path) = bench.out_csv {
                table.write_csv(path)?;
            }
            Ok(EXIT_OK)
        }
        Command::Verify { group, dim, trials, seed } => {
            let set = parse_group_spec(&group, dim)?;
            verify_suite(&set, trials, seed)
        }
    }
}

fn peek_model_kernel_desc(path: &std::path::Path) -> Result<String> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let magic = lines
        .next()
        .ok_or_else(|| Error::Parse("empty model file".into()))??;
    if magic.trim() != "svm-model v1" {
        return Err(Error::Parse(format!("bad model header: {magic}")));
    }
    let kernel_line = lines
        .next()
        .ok_or_else(|| Error::Parse("missing kernel line".into()))??;
    kernel_line
        .strip_prefix("kernel ")
        .map(str::to_string)
        .ok_or_else(|| Error::Parse("missing kernel line".into()))
}

fn load_unlabeled(path: &std::path::Path, delimiter: u8) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(values) => {
                if let Some(first) = rows.first() {
                    if values.len() != first.len() {
                        return Err(Error::RaggedRow {
                            row: idx,
                            got: values.len(),
                            expected: first.len(),
                        });
                    }
                }
                rows.push(values);
            }
            Err(_) if rows.is_empty() => continue, // header
            Err(e) => return Err(Error::Parse(format!("row {idx}: {e}"))),
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptySet);
    }
    let d = rows[0].len();
    let mut x = Array2::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            x[[i, j]] = *v;
        }
    }
    Ok(x)
}

/// The full invariant suite for one set: averaging-operator identities,
/// kernel unitarity, invariant-kernel invariance, stability, and SVM KKT
/// conditions. Prints one line per check; exit 2 when any fails.
pub fn verify_suite(set: &OrthogonalSet, trials: usize, seed: u64) -> Result<i32> {
    let mut all_pass = true;
    let mut report = |name: &str, pass: bool, detail: String| {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        all_pass &= pass;
    };

    let psi = set.average();
    let psi_m = psi.matrix();
    let max_dev = |m: &Array2<f64>, n: &Array2<f64>| -> f64 {
        m.iter()
            .zip(n.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
    };
    if set.is_exact_group() {
        let mut worst_inv: f64 = 0.0;
        for g in set.iter() {
            worst_inv = worst_inv.max(max_dev(&g.dot(psi_m), psi_m));
        }
        report("averaging invariance gPsi=Psi", worst_inv <= 1e-10, format!("max dev {worst_inv:.3e}"));
        let sym = max_dev(&psi_m.t().to_owned(), psi_m);
        report("averaging symmetry Psi^T=Psi", sym <= 1e-10, format!("max dev {sym:.3e}"));
        let idem = max_dev(&psi_m.dot(psi_m), psi_m);
        report("averaging projection PsiPsi=Psi", idem <= 1e-10, format!("max dev {idem:.3e}"));
    } else {
        println!("SKIP averaging identities: set is not an exact group");
    }

    for spec in [
        KernelSpec::Linear,
        KernelSpec::rbf(1.0)?,
        KernelSpec::polynomial(2, 1.0)?,
    ] {
        let worst = verify_unitarity(&spec, set, trials, seed);
        report(&format!("unitarity {spec}"), worst <= 1e-10, format!("max dev {worst:.3e}"));
    }

    // Invariance of the direct-mode invariant kernel under observed elements.
    {
        let kernel = InvariantKernel::direct(set.clone(), KernelSpec::rbf(1.0)?)?;
        let data = Dataset::synthetic_two_gaussians(set.dim(), 20, seed)?;
        let probe = augment_test_fold(&data, set)?;
        let base = kernel.gram(data.x(), data.x())?;
        let mut worst: f64 = 0.0;
        if set.is_exact_group() {
            for block in 0..set.len() {
                let rows: Vec<usize> = (0..data.len()).map(|i| block * data.len() + i).collect();
                let shifted = probe.subset(&rows)?;
                let gram = kernel.gram(shifted.x(), data.x())?;
                worst = worst.max(max_dev(&gram, &base));
            }
            report("invariant kernel k(gx,y)=k(x,y)", worst <= 1e-8, format!("max dev {worst:.3e}"));
        } else {
            println!("SKIP invariant-kernel exactness: set is not an exact group");
        }
    }

    // Stability bound with compliant mean pooling.
    {
        let templates = random_unit_templates(set.dim(), 20, seed.wrapping_add(1));
        let bank = TemplateBank::new(templates, set.clone(), KernelSpec::rbf(1.0)?, None)?;
        let pooling = PoolingSpec::compliant(PoolingMode::Mean, 0.7)?;
        let stability = check_stability(&bank, &pooling, trials.min(200), seed)?;
        report(
            "stability bound",
            stability.violations == 0,
            format!(
                "{} pairs, {} violations, max slack {:.3e}",
                stability.pairs, stability.violations, stability.max_slack
            ),
        );
    }

    // SVM KKT conditions on a small synthetic problem.
    {
        let data = Dataset::synthetic_two_gaussians(set.dim(), 40, seed)?;
        let model = SvmModel::train(
            data.x().to_owned(),
            data.y().to_vec(),
            Arc::new(KernelSpec::rbf(1.0)?),
            "rbf:sigma=1",
            1.0,
            &SolveOptions::default(),
        )?;
        let cap = model.c / data.len() as f64;
        let mut eq = 0.0;
        let mut in_box = true;
        for (a, y) in model.solution.alpha.iter().zip(data.y()) {
            eq += a * y;
            in_box &= *a >= -1e-12 && *a <= cap + 1e-12;
        }
        report(
            "svm kkt",
            model.converged() && in_box && eq.abs() <= 1e-8,
            format!(
                "converged={}, |y.alpha|={:.3e}, violation={:.3e}",
                model.converged(),
                eq.abs(),
                model.solution.kkt_violation
            ),
        );
    }

    Ok(if all_pass { EXIT_OK } else { EXIT_FAILURE })
}
