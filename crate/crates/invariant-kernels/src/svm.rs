//! Dual SVM over precomputed Gram matrices, solved by SMO-style pairwise
//! coordinate optimization with maximal-violating-pair selection.
//!
//! The box constraint is 0 <= alpha_i <= C/N; at the default C = 1 this is
//! the 1/N box of the invariant dual formulation.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::kernels::Kernel;

/// Symmetry tolerance for the training Gram matrix.
const GRAM_SYMMETRY_TOL: f64 = 1e-10;

/// A dual training problem: Gram matrix, labels in {+1, -1}, and the box
/// parameter C (per-sample upper bound C/N).
pub struct TrainingProblem {
    gram: Array2<f64>,
    labels: Vec<f64>,
    c: f64,
}

impl TrainingProblem {
    pub fn new(gram: Array2<f64>, labels: Vec<f64>, c: f64) -> Result<Self> {
        let n = labels.len();
        if n < 2 {
            return Err(Error::TooFewSamples);
        }
        if gram.nrows() != n || gram.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: gram.nrows() });
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Parse(format!("C must be positive, got {c}")));
        }
        if labels.iter().any(|y| *y != 1.0 && *y != -1.0) {
            return Err(Error::Parse("labels must be +1 or -1".into()));
        }
        if !labels.iter().any(|y| *y == 1.0) || !labels.iter().any(|y| *y == -1.0) {
            return Err(Error::SingleClassLabels);
        }
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((gram[[i, j]] - gram[[j, i]]).abs());
            }
        }
        if worst > GRAM_SYMMETRY_TOL {
            return Err(Error::AsymmetricGram { deviation: worst });
        }
        Ok(Self { gram, labels, c })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn box_upper(&self) -> f64 {
        self.c / self.labels.len() as f64
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

/// Solver configuration.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Stop when the maximal KKT violation falls to this level.
    pub tol: f64,
    /// Cap on pair updates; hitting it flags the solution non-converged.
    pub max_passes: usize,
    /// Reserved for working-pair tie-breaking; selection is deterministic.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_passes: 200_000,
            seed: 0,
        }
    }
}

/// Output of the dual solver.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Array1<f64>,
    pub bias: f64,
    pub support_indices: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    /// Final maximal KKT violation m(alpha) - M(alpha).
    pub kkt_violation: f64,
    /// Dual objective -sum alpha + 1/2 sum y y' a a' K.
    pub objective: f64,
}

/// Pairwise coordinate optimization of the dual with maximal-violating-pair
/// selection. Deterministic: ties break toward the lowest index.
pub fn solve_dual(problem: &TrainingProblem, opts: &SolveOptions) -> Result<DualSolution> {
    let n = problem.len();
    let y = problem.labels();
    let q = problem.gram();
    let cap = problem.box_upper();
    let mut alpha = Array1::<f64>::zeros(n);
    // grad_i = d/d alpha_i of the objective = y_i sum_j y_j a_j K_ij - 1.
    let mut grad = Array1::<f64>::from_elem(n, -1.0);

    let mut iterations = 0usize;
    let mut violation = f64::INFINITY;
    while iterations < opts.max_passes {
        // Maximal violating pair over I_up / I_low.
        let mut i_best: Option<usize> = None;
        let mut m_up = f64::NEG_INFINITY;
        let mut j_best: Option<usize> = None;
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let score = -y[t] * grad[t];
            let in_up = (y[t] > 0.0 && alpha[t] < cap - 0.0) || (y[t] < 0.0 && alpha[t] > 0.0);
            let in_low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < cap);
            if in_up && score > m_up {
                m_up = score;
                i_best = Some(t);
            }
            if in_low && score < m_low {
                m_low = score;
                j_best = Some(t);
            }
        }
        let (i, j) = match (i_best, j_best) {
            (Some(i), Some(j)) => (i, j),
            _ => break,
        };
        violation = m_up - m_low;
        if violation <= opts.tol {
            break;
        }

        // Analytic update of the (i, j) pair under the equality and box
        // constraints.
        // Curvature along the feasible direction; the label factors cancel.
        let quad = q[[i, i]] + q[[j, j]] - 2.0 * q[[i, j]];
        let quad = quad.max(1e-12);
        let delta = (m_up - m_low) / quad;
        // Move along the feasible direction: alpha_i += y_i * step,
        // alpha_j -= y_j * step in the +-1 label parameterization.
        let mut step = delta;
        // Clip to the box for i.
        let max_i = if y[i] > 0.0 { cap - alpha[i] } else { alpha[i] };
        let max_j = if y[j] > 0.0 { alpha[j] } else { cap - alpha[j] };
        step = step.min(max_i).min(max_j);
        if step <= 0.0 {
            // Degenerate direction; no progress possible on this pair.
            break;
        }
        alpha[i] += if y[i] > 0.0 { step } else { -step };
        alpha[j] -= if y[j] > 0.0 { step } else { -step };
        // Gradient update: d alpha_i = s_i, d alpha_j = -s_j in signed form.
        let d_i = if y[i] > 0.0 { step } else { -step };
        let d_j = if y[j] > 0.0 { -step } else { step };
        for t in 0..n {
            grad[t] += y[t] * (y[i] * q[[i, t]] * d_i + y[j] * q[[j, t]] * d_j);
        }
        iterations += 1;
    }

    let converged = violation <= opts.tol;
    let support_indices: Vec<usize> = (0..n).filter(|&i| alpha[i] > 1e-12).collect();

    // Bias from free support vectors; midpoint of the KKT interval if none.
    let free: Vec<usize> = (0..n)
        .filter(|&i| alpha[i] > 1e-8 * cap && alpha[i] < cap * (1.0 - 1e-8))
        .collect();
    let bias = if free.is_empty() {
        // KKT sandwiches b: samples in the "up" set bound it from below,
        // samples in the "low" set from above; take the midpoint.
        let mut hi = f64::INFINITY;
        let mut lo = f64::NEG_INFINITY;
        for t in 0..n {
            let margin = y[t] - y[t] * (grad[t] + 1.0);
            let in_up = (y[t] > 0.0 && alpha[t] < cap) || (y[t] < 0.0 && alpha[t] > 0.0);
            let in_low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < cap);
            if in_up {
                lo = lo.max(margin);
            }
            if in_low {
                hi = hi.min(margin);
            }
        }
        if hi.is_finite() && lo.is_finite() {
            0.5 * (hi + lo)
        } else if hi.is_finite() {
            hi
        } else {
            lo
        }
    } else {
        let mut acc = 0.0;
        for &t in &free {
            // y_t * (grad_t + 1) = sum_j a_j y_j K_tj = f(x_t) - b.
            acc += y[t] - y[t] * (grad[t] + 1.0);
        }
        acc / free.len() as f64
    };

    let mut objective = -alpha.sum();
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        // grad_i = y_i sum_j y_j a_j K_ij - 1, so the quadratic term is
        // 1/2 sum_i a_i (grad_i + 1) ... recomputed directly for clarity.
        for jdx in 0..n {
            objective += 0.5 * y[i] * y[jdx] * alpha[i] * alpha[jdx] * q[[i, jdx]];
        }
    }

    Ok(DualSolution {
        alpha,
        bias,
        support_indices,
        converged,
        iterations,
        kkt_violation: violation,
        objective,
    })
}

/// A trained SVM: dual coefficients plus the kernel handle and retained
/// training samples for prediction-time evaluation.
pub struct SvmModel {
    pub solution: DualSolution,
    pub train_x: Array2<f64>,
    pub labels: Vec<f64>,
    pub c: f64,
    kernel: Arc<dyn Kernel>,
    kernel_desc: String,
}

impl SvmModel {
    /// Trains on raw samples, building the Gram matrix through `kernel`.
    pub fn train(
        train_x: Array2<f64>,
        labels: Vec<f64>,
        kernel: Arc<dyn Kernel>,
        kernel_desc: impl Into<String>,
        c: f64,
        opts: &SolveOptions,
    ) -> Result<Self> {
        let n = train_x.nrows();
        let mut gram = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v = kernel.eval(train_x.row(i), train_x.row(j));
                gram[[i, j]] = v;
                gram[[j, i]] = v;
            }
        }
        Self::from_gram(gram, train_x, labels, kernel, kernel_desc, c, opts)
    }

    /// Trains from a precomputed Gram matrix; `kernel` is still retained for
    /// prediction against new points.
    pub fn from_gram(
        gram: Array2<f64>,
        train_x: Array2<f64>,
        labels: Vec<f64>,
        kernel: Arc<dyn Kernel>,
        kernel_desc: impl Into<String>,
        c: f64,
        opts: &SolveOptions,
    ) -> Result<Self> {
        let problem = TrainingProblem::new(gram, labels.clone(), c)?;
        let solution = solve_dual(&problem, opts)?;
        Ok(Self {
            solution,
            train_x,
            labels,
            c,
            kernel,
            kernel_desc: kernel_desc.into(),
        })
    }

    pub fn kernel(&self) -> &Arc<dyn Kernel> {
        &self.kernel
    }

    pub fn kernel_desc(&self) -> &str {
        &self.kernel_desc
    }

    pub fn converged(&self) -> bool {
        self.solution.converged
    }

    /// f(x) = sum_i alpha_i y_i k(x_i, x) + b.
    pub fn decision_value(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.train_x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.train_x.ncols(),
                got: x.len(),
            });
        }
        let mut f = self.solution.bias;
        for &i in &self.solution.support_indices {
            f += self.solution.alpha[i]
                * self.labels[i]
                * self.kernel.eval(self.train_x.row(i), x);
        }
        Ok(f)
    }

    /// sign(f(x)) with sign(0) = +1.
    pub fn predict(&self, x: ArrayView1<f64>) -> Result<f64> {
        Ok(if self.decision_value(x)? >= 0.0 { 1.0 } else { -1.0 })
    }

    /// ||w||^2 = sum_ij alpha_i alpha_j y_i y_j k(x_i, x_j).
    pub fn weight_norm(&self) -> f64 {
        let mut acc = 0.0;
        for &i in &self.solution.support_indices {
            for &j in &self.solution.support_indices {
                acc += self.solution.alpha[i]
                    * self.solution.alpha[j]
                    * self.labels[i]
                    * self.labels[j]
                    * self.kernel.eval(self.train_x.row(i), self.train_x.row(j));
            }
        }
        acc.max(0.0).sqrt()
    }

    /// Minimum geometric margin min_i y_i f(x_i) / ||w|| over (X, y); can be
    /// <= 0 when the model does not separate the set.
    pub fn margin_of(&self, x: ArrayView2<f64>, y: &[f64]) -> Result<f64> {
        let norm = self.weight_norm();
        let mut worst = f64::INFINITY;
        for (row, &label) in x.rows().into_iter().zip(y.iter()) {
            let f = self.decision_value(row)?;
            worst = worst.min(label * f);
        }
        Ok(if norm > 0.0 { worst / norm } else { worst })
    }

    /// Fraction of correct predictions.
    pub fn accuracy(&self, x: ArrayView2<f64>, y: &[f64]) -> Result<f64> {
        let mut hits = 0usize;
        for (row, &label) in x.rows().into_iter().zip(y.iter()) {
            if self.predict(row)? == label {
                hits += 1;
            }
        }
        Ok(hits as f64 / y.len() as f64)
    }

    /// Plain-text model file: kernel description, C, bias, then one line per
    /// training sample with alpha, label, and coordinates.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "svm-model v1")?;
        writeln!(w, "kernel {}", self.kernel_desc)?;
        writeln!(w, "c {:?}", self.c)?;
        writeln!(w, "bias {:?}", self.solution.bias)?;
        writeln!(w, "converged {}", self.solution.converged)?;
        writeln!(w, "n {} d {}", self.train_x.nrows(), self.train_x.ncols())?;
        for i in 0..self.train_x.nrows() {
            let coords: Vec<String> =
                self.train_x.row(i).iter().map(|v| format!("{v:?}")).collect();
            writeln!(
                w,
                "{:?} {:?} {}",
                self.solution.alpha[i],
                self.labels[i],
                coords.join(" ")
            )?;
        }
        let support: Vec<String> = self
            .solution
            .support_indices
            .iter()
            .map(|i| i.to_string())
            .collect();
        writeln!(w, "support {}", support.join(" "))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    /// Reads a model file; the caller supplies the kernel implementation
    /// matching the recorded description (e.g. rebuilt from a group or bank
    /// file).
    pub fn read_from<R: Read>(r: R, kernel: Arc<dyn Kernel>) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing {what}")))?
                .map_err(Error::from)
        };
        let magic = next("magic")?;
        if magic.trim() != "svm-model v1" {
            return Err(Error::Parse(format!("bad model header: {magic}")));
        }
        let kernel_desc = next("kernel")?
            .strip_prefix("kernel ")
            .ok_or_else(|| Error::Parse("missing kernel line".into()))?
            .to_string();
        let c: f64 = parse_kv(&next("c")?, "c")?;
        let bias: f64 = parse_kv(&next("bias")?, "bias")?;
        let converged: bool = parse_kv(&next("converged")?, "converged")?;
        let dims = next("n/d")?;
        let mut toks = dims.split_whitespace();
        if toks.next() != Some("n") {
            return Err(Error::Parse("expected n".into()));
        }
        let n: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse("bad n".into()))?;
        if toks.next() != Some("d") {
            return Err(Error::Parse("expected d".into()));
        }
        let d: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse("bad d".into()))?;
        let mut alpha = Array1::zeros(n);
        let mut labels = Vec::with_capacity(n);
        let mut train_x = Array2::zeros((n, d));
        for i in 0..n {
            let line = next("sample line")?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<_>>()?;
            if vals.len() != d + 2 {
                return Err(Error::Parse(format!(
                    "sample line has {} fields, expected {}",
                    vals.len(),
                    d + 2
                )));
            }
            alpha[i] = vals[0];
            labels.push(vals[1]);
            for j in 0..d {
                train_x[[i, j]] = vals[2 + j];
            }
        }
        let support_line = next("support")?;
        let support_indices: Vec<usize> = support_line
            .strip_prefix("support")
            .ok_or_else(|| Error::Parse("missing support line".into()))?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<_>>()?;
        let solution = DualSolution {
            alpha,
            bias,
            support_indices,
            converged,
            iterations: 0,
            kkt_violation: f64::NAN,
            objective: f64::NAN,
        };
        Ok(Self {
            solution,
            train_x,
            labels,
            c,
            kernel,
            kernel_desc,
        })
    }

    pub fn load(path: impl AsRef<Path>, kernel: Arc<dyn Kernel>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(file, kernel)
    }
}

fn parse_kv<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| Error::Parse(format!("expected {key} line, got {line}")))?;
    rest.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad {key} value: {rest}")))
}
