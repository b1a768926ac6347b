//! Finite orthogonal transformation sets and group averaging.
//!
//! A set of d x d orthogonal matrices either forms an exact finite group
//! (closed under composition and inverse, contains the identity) or is a
//! partial observation of one. Averaging the elements yields the operator
//! `Psi`, a projection onto the invariant subspace when the set is exact.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use ndarray_linalg::QR;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Orthogonality tolerance for `||g^T g - I||_max`.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;
/// Below this pairwise max-norm distance two elements count as duplicates.
pub const DISTINCTNESS_TOL: f64 = 1e-8;
/// Cap on exact-group cardinality; bounds the O(|G|^2) closure check.
pub const GROUP_SIZE_CAP: usize = 10_000;

/// Exact finite orthogonal groups with constructive element lists.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupKind {
    /// Rotations by multiples of 2*pi/order in the given coordinate plane.
    CyclicRotation {
        dim: usize,
        plane: (usize, usize),
        order: usize,
    },
    /// All permutation matrices of size dim.
    Permutations { dim: usize },
    /// All signed permutation matrices of size dim.
    SignedPermutations { dim: usize },
    /// The order-2 group {I, diag(1,..,-1,..,1)} flipping one axis.
    Reflection { dim: usize, axis: usize },
}

/// A finite set of d x d orthogonal matrices.
#[derive(Debug, Clone)]
pub struct OrthogonalSet {
    dim: usize,
    elements: Vec<Array2<f64>>,
    is_exact_group: bool,
    descriptor: String,
}

impl OrthogonalSet {
    /// Draws `count` Haar-uniform orthogonal matrices by QR of a seeded
    /// Gaussian matrix with sign correction of the R diagonal. When
    /// `include_identity` is set, the first element is the identity and
    /// `count - 1` random elements follow. The result is not an exact group.
    pub fn sample(dim: usize, count: usize, seed: u64, include_identity: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension);
        }
        if count == 0 {
            return Err(Error::EmptySet);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut elements = Vec::with_capacity(count);
        if include_identity {
            elements.push(Array2::eye(dim));
        }
        // A fresh draw coinciding with a previous element has measure zero
        // for d >= 2, so redraw rather than fail -- but cap the attempts so
        // impossible requests (e.g. three distinct 1x1 orthogonal matrices)
        // error out instead of spinning.
        let mut attempts = 0usize;
        while elements.len() < count {
            attempts += 1;
            if attempts > 100 * count + 1000 {
                return Err(Error::Parse(format!(
                    "could not draw {count} distinct orthogonal {dim}x{dim} matrices"
                )));
            }
            let g = haar_orthogonal(dim, &mut rng);
            if elements.iter().all(|e| max_norm_diff(e, &g) > DISTINCTNESS_TOL) {
                elements.push(g);
            }
        }
        let descriptor = if include_identity {
            format!("random(seed={seed},m={count},identity)")
        } else {
            format!("random(seed={seed},m={count})")
        };
        Self::from_parts(dim, elements, false, descriptor)
    }

    /// Constructs an exact finite group. Closure, inverses, identity, and
    /// orthogonality are verified exhaustively at construction.
    pub fn exact(kind: GroupKind) -> Result<Self> {
        let (dim, elements, descriptor) = match &kind {
            GroupKind::CyclicRotation { dim, plane, order } => {
                let (i, j) = *plane;
                if *dim < 2 || i >= *dim || j >= *dim || i == j {
                    return Err(Error::InvalidDimension);
                }
                if *order == 0 {
                    return Err(Error::EmptySet);
                }
                check_cap(*order)?;
                let mut elements = Vec::with_capacity(*order);
                for k in 0..*order {
                    let theta = 2.0 * std::f64::consts::PI * k as f64 / *order as f64;
                    let mut g = Array2::eye(*dim);
                    g[[i, i]] = theta.cos();
                    g[[i, j]] = -theta.sin();
                    g[[j, i]] = theta.sin();
                    g[[j, j]] = theta.cos();
                    elements.push(g);
                }
                let descriptor = format!("cyclic-rotation(plane=({i},{j}),order={order})");
                (*dim, elements, descriptor)
            }
            GroupKind::Permutations { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidDimension);
                }
                check_cap(factorial_capped(*dim))?;
                let elements = permutations(*dim)
                    .into_iter()
                    .map(|p| permutation_matrix(&p))
                    .collect();
                (*dim, elements, format!("permutations({dim})"))
            }
            GroupKind::SignedPermutations { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidDimension);
                }
                check_cap(factorial_capped(*dim).saturating_mul(1usize << (*dim).min(60)))?;
                let mut elements = Vec::new();
                for p in permutations(*dim) {
                    for signs in 0..(1usize << dim) {
                        let mut g = permutation_matrix(&p);
                        for (col, mut c) in g.columns_mut().into_iter().enumerate() {
                            if signs >> col & 1 == 1 {
                                c.mapv_inplace(|v| -v);
                            }
                        }
                        elements.push(g);
                    }
                }
                (*dim, elements, format!("signed-permutations({dim})"))
            }
            GroupKind::Reflection { dim, axis } => {
                if *dim == 0 || *axis >= *dim {
                    return Err(Error::InvalidDimension);
                }
                let mut r = Array2::eye(*dim);
                r[[*axis, *axis]] = -1.0;
                (
                    *dim,
                    vec![Array2::eye(*dim), r],
                    format!("reflection(axis={axis})"),
                )
            }
        };
        Self::from_parts(dim, elements, true, descriptor)
    }

    /// Wraps an explicit element list, running the full invariant checks.
    pub fn from_elements(
        elements: Vec<Array2<f64>>,
        is_exact_group: bool,
        descriptor: impl Into<String>,
    ) -> Result<Self> {
        let dim = match elements.first() {
            Some(e) => e.nrows(),
            None => return Err(Error::EmptySet),
        };
        Self::from_parts(dim, elements, is_exact_group, descriptor.into())
    }

    fn from_parts(
        dim: usize,
        elements: Vec<Array2<f64>>,
        is_exact_group: bool,
        descriptor: String,
    ) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::EmptySet);
        }
        let eye = Array2::eye(dim);
        for (index, g) in elements.iter().enumerate() {
            if g.nrows() != dim || g.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: g.nrows(),
                });
            }
            let deviation = max_norm_diff(&g.t().dot(g), &eye);
            if deviation > ORTHOGONALITY_TOL {
                return Err(Error::NotOrthogonal { index, deviation });
            }
        }
        for a in 0..elements.len() {
            for b in a + 1..elements.len() {
                if max_norm_diff(&elements[a], &elements[b]) <= DISTINCTNESS_TOL {
                    return Err(Error::DuplicateElements { a, b });
                }
            }
        }
        if is_exact_group {
            check_cap(elements.len())?;
            verify_closure(&elements)?;
        }
        Ok(Self {
            dim,
            elements,
            is_exact_group,
            descriptor,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn is_exact_group(&self) -> bool {
        self.is_exact_group
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn element(&self, index: usize) -> Result<&Array2<f64>> {
        self.elements.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.elements.len(),
        })
    }

    pub fn elements(&self) -> &[Array2<f64>] {
        &self.elements
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Array2<f64>> {
        self.elements.iter()
    }

    /// Applies element `index` to `x`, i.e. the matrix-vector product g x.
    pub fn apply(&self, index: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.element(index)?.dot(&x))
    }

    /// The averaging operator Psi = (1/|G|) sum_g g.
    pub fn average(&self) -> GroupAverageOperator {
        let mut m = Array2::zeros((self.dim, self.dim));
        for g in &self.elements {
            m += g;
        }
        m /= self.elements.len() as f64;
        GroupAverageOperator {
            dim: self.dim,
            matrix: m,
            source_descriptor: self.descriptor.clone(),
            source_exact: self.is_exact_group,
        }
    }

    /// Writes the plain-text matrix format: first line `d m is_exact_group`,
    /// then m blocks of d rows of d decimals. Values round-trip exactly.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {}", self.dim, self.elements.len(), self.is_exact_group)?;
        for g in &self.elements {
            let mut block = String::new();
            for row in g.rows() {
                let mut first = true;
                for v in row {
                    if !first {
                        block.push(' ');
                    }
                    // Shortest round-trip representation.
                    let _ = write!(block, "{v:?}");
                    first = false;
                }
                block.push('\n');
            }
            w.write_all(block.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R, descriptor: impl Into<String>) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty orthogonal-set file".into()))??;
        let mut parts = header.split_whitespace();
        let dim: usize = parse_field(parts.next(), "d")?;
        let count: usize = parse_field(parts.next(), "m")?;
        let exact: bool = parse_field(parts.next(), "is_exact_group")?;
        let mut elements = Vec::with_capacity(count);
        for _ in 0..count {
            let mut g = Array2::zeros((dim, dim));
            for i in 0..dim {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::Parse("truncated matrix block".into()))??;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                    .collect::<Result<_>>()?;
                if row.len() != dim {
                    return Err(Error::Parse(format!(
                        "matrix row has {} entries, expected {dim}",
                        row.len()
                    )));
                }
                for (j, v) in row.into_iter().enumerate() {
                    g[[i, j]] = v;
                }
            }
            elements.push(g);
        }
        Self::from_parts(dim, elements, exact, descriptor.into())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::read_from(file, format!("file({})", path.display()))
    }
}

/// Psi = (1/|G|) sum_g g for an orthogonal set.
#[derive(Debug, Clone)]
pub struct GroupAverageOperator {
    dim: usize,
    matrix: Array2<f64>,
    source_descriptor: String,
    source_exact: bool,
}

impl GroupAverageOperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn source_descriptor(&self) -> &str {
        &self.source_descriptor
    }

    pub fn source_is_exact_group(&self) -> bool {
        self.source_exact
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.matrix.dot(&x))
    }
}

/// One Haar-uniform draw: QR of a standard Gaussian matrix, with the Q
/// columns sign-corrected by the diagonal of R.
fn haar_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let data: Vec<f64> = (0..dim * dim)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let a = Array2::from_shape_vec((dim, dim), data).expect("shape");
    let (q, r) = a.qr().expect("qr of a random Gaussian matrix");
    let mut q = q;
    for (j, mut col) in q.columns_mut().into_iter().enumerate() {
        if r[[j, j]] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    q
}

pub(crate) fn max_norm_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn check_cap(count: usize) -> Result<()> {
    if count > GROUP_SIZE_CAP {
        return Err(Error::GroupTooLarge {
            count,
            cap: GROUP_SIZE_CAP,
        });
    }
    Ok(())
}

fn factorial_capped(n: usize) -> usize {
    (1..=n).fold(1usize, |acc, k| acc.saturating_mul(k))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    heap_permute(&mut items, n, &mut out);
    out.sort();
    out
}

fn heap_permute(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == 1 {
        out.push(items.clone());
        return;
    }
    for i in 0..k {
        heap_permute(items, k - 1, out);
        if k % 2 == 0 {
            items.swap(i, k - 1);
        } else {
            items.swap(0, k - 1);
        }
    }
}

/// Matrix sending e_j to e_{p[j]}.
fn permutation_matrix(p: &[usize]) -> Array2<f64> {
    let n = p.len();
    let mut m = Array2::zeros((n, n));
    for (j, &i) in p.iter().enumerate() {
        m[[i, j]] = 1.0;
    }
    m
}

/// Exhaustive closure / inverse / identity check against the element list.
fn verify_closure(elements: &[Array2<f64>]) -> Result<()> {
    let dim = elements[0].nrows();
    let eye = Array2::eye(dim);
    if !elements
        .iter()
        .any(|g| max_norm_diff(g, &eye) <= ORTHOGONALITY_TOL)
    {
        return Err(Error::NotClosed { a: 0, b: 0 });
    }
    for (a, g) in elements.iter().enumerate() {
        for (b, h) in elements.iter().enumerate() {
            let gh = g.dot(h);
            if !elements
                .iter()
                .any(|e| max_norm_diff(e, &gh) <= ORTHOGONALITY_TOL)
            {
                return Err(Error::NotClosed { a, b });
            }
        }
        // g^-1 = g^T for orthogonal g.
        let inv = g.t().to_owned();
        if !elements
            .iter()
            .any(|e| max_norm_diff(e, &inv) <= ORTHOGONALITY_TOL)
        {
            return Err(Error::NotClosed { a, b: a });
        }
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, name: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    tok.ok_or_else(|| Error::Parse(format!("missing field {name}")))?
        .parse()
        .map_err(|e| Error::Parse(format!("bad field {name}: {e}")))
}
