//! Unitary-group invariant kernels, pooled invariant signatures, and an
//! invariant-kernel SVM.
//!
//! The building blocks:
//!
//! - [`group_algebra`]: finite orthogonal sets, exact groups, and the
//!   averaging operator `Psi`.
//! - [`kernels`]: linear / RBF / polynomial kernels with a unitarity check.
//! - [`invariant_kernel`]: the group-invariant kernel in direct, one-sided,
//!   and template-bank modes.
//! - [`invariant_features`]: pooled invariant signatures and the stability
//!   bound checker.
//! - [`svm`]: an SMO dual solver over precomputed Gram matrices.
//! - [`harness`]: dataset loading, cross-validation, and the two benchmark
//!   protocols.
//! - [`cli`]: the subcommand surface behind the `invariant-kernels` binary.
//!
//! See `examples/` for one runnable program per capability.

pub mod cli;
pub mod error;
pub mod group_algebra;
pub mod harness;
pub mod invariant_features;
pub mod invariant_kernel;
pub mod kernels;
pub mod svm;

pub use error::{Error, Result};
pub use group_algebra::{GroupAverageOperator, GroupKind, OrthogonalSet};
pub use invariant_features::{PooledSignature, PoolingMode, PoolingSpec, StabilityReport};
pub use invariant_kernel::{InvariantKernel, TemplateBank};
pub use kernels::{Kernel, KernelSpec, RecordingKernel};
pub use svm::{SvmModel, TrainingProblem};
