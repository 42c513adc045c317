//! Dense small-matrix kernels: induced norms, matrix measures (logarithmic
//! norms), a cyclic Jacobi symmetric eigensolver, and the block-majorant
//! machinery that reduces composite measures and norms of partitioned
//! matrices to weighted max-row formulas on small nonnegative matrices.
//!
//! Everything here is written for the small, dense matrices that arise when
//! certifying networked systems agent-by-agent: state dimensions are a few
//! units, block counts a few tens. Clarity and numerical robustness beat
//! asymptotics at these sizes, so the kernels are direct loops over row-major
//! storage with no external linear-algebra dependency.

use std::fmt;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Errors raised by the dense kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum LinalgError {
    /// Operation requires a square matrix.
    NotSquare { rows: usize, cols: usize },
    /// Two operands (or a matrix and a partition/weight vector) disagree in shape.
    DimensionMismatch(String),
    /// An entry was NaN or infinite.
    NonFinite,
    /// Matrix is singular to working precision.
    Singular,
    /// Block partition is empty, has a zero-sized block, or does not tile the matrix.
    BadPartition(String),
    /// Weight vector is empty, non-positive, or non-finite.
    BadWeights(String),
}

impl fmt::Display for LinalgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinalgError::NotSquare { rows, cols } => {
                write!(f, "expected a square matrix, got {rows}x{cols}")
            }
            LinalgError::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            LinalgError::NonFinite => write!(f, "matrix entries must be finite"),
            LinalgError::Singular => write!(f, "matrix is singular to working precision"),
            LinalgError::BadPartition(msg) => write!(f, "bad block partition: {msg}"),
            LinalgError::BadWeights(msg) => write!(f, "bad weight vector: {msg}"),
        }
    }
}

impl std::error::Error for LinalgError {}

// ---------------------------------------------------------------------------
// PNorm
// ---------------------------------------------------------------------------

/// The local vector norm (and its induced matrix norm / measure) used inside
/// each block of a composite norm. Only p in {1, 2, inf} is supported; these
/// are the cases with closed-form induced norms and measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PNorm {
    /// Sum of absolute values; induced norm is the max column sum.
    One,
    /// Euclidean norm; induced norm is the largest singular value.
    Two,
    /// Max absolute value; induced norm is the max row sum.
    Inf,
}

impl PNorm {
    /// Vector p-norm of a slice.
    pub fn vector_norm(self, x: &[f64]) -> f64 {
        match self {
            PNorm::One => x.iter().map(|v| v.abs()).sum(),
            PNorm::Two => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            PNorm::Inf => x.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }
}

impl fmt::Display for PNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PNorm::One => write!(f, "1"),
            PNorm::Two => write!(f, "2"),
            PNorm::Inf => write!(f, "inf"),
        }
    }
}

// ---------------------------------------------------------------------------
// DenseMatrix
// ---------------------------------------------------------------------------

/// Row-major dense matrix of `f64`. Entries are validated to be finite on
/// construction; all kernels in this module assume finiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DenseMatrix {
    /// Build from row-major entries. `entries.len()` must equal `rows * cols`
    /// and every entry must be finite.
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self, LinalgError> {
        if entries.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { rows, cols, entries })
    }

    /// Zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: vec![0.0; rows * cols] }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Build from a slice of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::DimensionMismatch(
                "rows have unequal lengths".to_string(),
            ));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Entry accessor (panics on out-of-range indices).
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of range");
        self.entries[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of range");
        self.entries[r * self.cols + c] = v;
    }

    /// Raw row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "add: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a + b)
            .collect();
        Ok(DenseMatrix { rows: self.rows, cols: self.cols, entries })
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "sub: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a - b)
            .collect();
        Ok(DenseMatrix { rows: self.rows, cols: self.cols, entries })
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|v| v * s).collect(),
        }
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    let v = out.get(r, c) + a * other.get(k, c);
                    out.set(r, c, v);
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "matvec: {}x{} times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += self.get(r, c) * x[c];
            }
            y[r] = acc;
        }
        Ok(y)
    }

    /// Copy of the sub-block starting at (`r0`, `c0`) with shape `h` x `w`.
    pub fn block(&self, r0: usize, c0: usize, h: usize, w: usize) -> DenseMatrix {
        assert!(r0 + h <= self.rows && c0 + w <= self.cols, "block out of range");
        let mut b = DenseMatrix::zeros(h, w);
        for r in 0..h {
            for c in 0..w {
                b.set(r, c, self.get(r0 + r, c0 + c));
            }
        }
        b
    }

    /// Overwrite the sub-block starting at (`r0`, `c0`) with `b`.
    pub fn set_block(&mut self, r0: usize, c0: usize, b: &DenseMatrix) {
        assert!(
            r0 + b.rows <= self.rows && c0 + b.cols <= self.cols,
            "block out of range"
        );
        for r in 0..b.rows {
            for c in 0..b.cols {
                self.set(r0 + r, c0 + c, b.get(r, c));
            }
        }
    }

    /// Symmetric part (A + A^T) / 2. Requires a square matrix.
    pub fn symmetric_part(&self) -> Result<DenseMatrix, LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::NotSquare { rows: self.rows, cols: self.cols });
        }
        let mut s = DenseMatrix::zeros(self.rows, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                s.set(r, c, 0.5 * (self.get(r, c) + self.get(c, r)));
            }
        }
        Ok(s)
    }

    /// Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<DenseMatrix, LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::NotSquare { rows: self.rows, cols: self.cols });
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = DenseMatrix::identity(n);
        let scale = self.max_abs().max(1.0);
        for col in 0..n {
            // Partial pivot: largest magnitude entry on or below the diagonal.
            let mut pivot_row = col;
            let mut pivot_val = a.get(col, col).abs();
            for r in (col + 1)..n {
                let v = a.get(r, col).abs();
                if v > pivot_val {
                    pivot_row = r;
                    pivot_val = v;
                }
            }
            if pivot_val <= f64::EPSILON * scale * n as f64 {
                return Err(LinalgError::Singular);
            }
            if pivot_row != col {
                for c in 0..n {
                    let (x, y) = (a.get(col, c), a.get(pivot_row, c));
                    a.set(col, c, y);
                    a.set(pivot_row, c, x);
                    let (x, y) = (inv.get(col, c), inv.get(pivot_row, c));
                    inv.set(col, c, y);
                    inv.set(pivot_row, c, x);
                }
            }
            let p = a.get(col, col);
            for c in 0..n {
                a.set(col, c, a.get(col, c) / p);
                inv.set(col, c, inv.get(col, c) / p);
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a.get(r, col);
                if f == 0.0 {
                    continue;
                }
                for c in 0..n {
                    a.set(r, c, a.get(r, c) - f * a.get(col, c));
                    inv.set(r, c, inv.get(r, c) - f * inv.get(col, c));
                }
            }
        }
        Ok(inv)
    }
}

// ---------------------------------------------------------------------------
// Block partitions and composite norm specifications
// ---------------------------------------------------------------------------

/// Partition of a square matrix (or stacked vector) into consecutive blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockPartition {
    /// Build from per-block sizes. Every size must be positive.
    pub fn new(sizes: Vec<usize>) -> Result<Self, LinalgError> {
        if sizes.is_empty() {
            return Err(LinalgError::BadPartition("no blocks".to_string()));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(LinalgError::BadPartition("zero-sized block".to_string()));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        Ok(Self { sizes, offsets })
    }

    /// Uniform partition: `count` blocks of `size` each.
    pub fn uniform(count: usize, size: usize) -> Result<Self, LinalgError> {
        Self::new(vec![size; count])
    }

    /// Number of blocks.
    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    /// Total dimension.
    pub fn total_dim(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0) + self.sizes.last().copied().unwrap_or(0)
    }

    pub fn size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn check_conformal(&self, a: &DenseMatrix) -> Result<(), LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() });
        }
        if a.rows() != self.total_dim() {
            return Err(LinalgError::BadPartition(format!(
                "partition covers dimension {}, matrix is {}x{}",
                self.total_dim(),
                a.rows(),
                a.cols()
            )));
        }
        Ok(())
    }
}

/// A composite (block) norm specification: a local p-norm applied inside each
/// block, with positive per-block weights `eta`. The composite norm of a
/// stacked vector x = (x_1, ..., x_r) is `max_i ||x_i||_p / eta_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormSpec {
    local_p: PNorm,
    eta: Vec<f64>,
}

impl NormSpec {
    /// Build a spec; `eta` must be nonempty with positive finite entries.
    pub fn new(local_p: PNorm, eta: Vec<f64>) -> Result<Self, LinalgError> {
        if eta.is_empty() {
            return Err(LinalgError::BadWeights("empty weight vector".to_string()));
        }
        if eta.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(LinalgError::BadWeights(
                "weights must be positive and finite".to_string(),
            ));
        }
        Ok(Self { local_p, eta })
    }

    /// Uniform weights (all ones) over `count` blocks.
    pub fn uniform(local_p: PNorm, count: usize) -> Result<Self, LinalgError> {
        Self::new(local_p, vec![1.0; count])
    }

    pub fn local_p(&self) -> PNorm {
        self.local_p
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    fn check_blocks(&self, part: &BlockPartition) -> Result<(), LinalgError> {
        if self.eta.len() != part.num_blocks() {
            return Err(LinalgError::BadWeights(format!(
                "{} weights for {} blocks",
                self.eta.len(),
                part.num_blocks()
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Symmetric eigenvalues (cyclic Jacobi) and induced 2-norm
// ---------------------------------------------------------------------------

/// All eigenvalues of a symmetric matrix, ascending, via cyclic Jacobi
/// rotations. The iteration stops when the off-diagonal Frobenius mass drops
/// below 1e-12 relative to the initial Frobenius norm, with a hard cap of
/// 100 sweeps. Inputs are symmetrized defensively, so tiny asymmetries from
/// accumulated round-off are harmless.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    let n = a.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    // Work on the symmetrized copy in a flat buffer.
    let mut s = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            s[r * n + c] = 0.5 * (a.get(r, c) + a.get(c, r));
        }
    }
    let fro: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if fro == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let threshold = 1e-12 * fro;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for r in 0..n {
            for c in 0..n {
                if r != c {
                    off += s[r * n + c] * s[r * n + c];
                }
            }
        }
        if off.sqrt() <= threshold {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = s[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = s[p * n + p];
                let aqq = s[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    let sign = if theta > 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                // Rotate rows/columns p and q.
                for k in 0..n {
                    let skp = s[k * n + p];
                    let skq = s[k * n + q];
                    s[k * n + p] = c * skp - sn * skq;
                    s[k * n + q] = sn * skp + c * skq;
                }
                for k in 0..n {
                    let spk = s[p * n + k];
                    let sqk = s[q * n + k];
                    s[p * n + k] = c * spk - sn * sqk;
                    s[q * n + k] = sn * spk + c * sqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| s[i * n + i]).collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    Ok(eigs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(a: &DenseMatrix) -> Result<f64, LinalgError> {
    let eigs = symmetric_eigenvalues(a)?;
    eigs.first().copied().ok_or_else(|| {
        LinalgError::DimensionMismatch("empty matrix has no eigenvalues".to_string())
    })
}

/// Positive-semidefiniteness test for a symmetric matrix: the smallest
/// eigenvalue must be at least `-tol` (scaled slack for round-off).
pub fn is_psd(a: &DenseMatrix, tol: f64) -> Result<bool, LinalgError> {
    Ok(min_symmetric_eigenvalue(a)? >= -tol)
}

/// Induced 2-norm (largest singular value), computed as
/// sqrt(lambda_max(A^T A)) with the Jacobi eigensolver.
pub fn spectral_norm(a: &DenseMatrix) -> f64 {
    if a.rows() == 0 || a.cols() == 0 {
        return 0.0;
    }
    let ata = a
        .transpose()
        .matmul(a)
        .expect("A^T A dimensions always conform");
    let eigs = symmetric_eigenvalues(&ata).expect("A^T A is square");
    let lam = eigs.last().copied().unwrap_or(0.0).max(0.0);
    lam.sqrt()
}

// ---------------------------------------------------------------------------
// Induced norms and matrix measures
// ---------------------------------------------------------------------------

/// Induced matrix p-norm for p in {1, 2, inf}. Rectangular inputs allowed.
pub fn induced_norm(a: &DenseMatrix, p: PNorm) -> f64 {
    match p {
        PNorm::One => {
            let mut best: f64 = 0.0;
            for c in 0..a.cols() {
                let mut sum = 0.0;
                for r in 0..a.rows() {
                    sum += a.get(r, c).abs();
                }
                best = best.max(sum);
            }
            best
        }
        PNorm::Two => spectral_norm(a),
        PNorm::Inf => {
            let mut best: f64 = 0.0;
            for r in 0..a.rows() {
                let mut sum = 0.0;
                for c in 0..a.cols() {
                    sum += a.get(r, c).abs();
                }
                best = best.max(sum);
            }
            best
        }
    }
}

/// Matrix measure (logarithmic norm) mu_p(A) for p in {1, 2, inf}:
///
/// * p = 1:   max over columns j of (a_jj + sum_{i != j} |a_ij|)
/// * p = 2:   largest eigenvalue of (A + A^T) / 2
/// * p = inf: max over rows i of (a_ii + sum_{j != i} |a_ij|)
///
/// This is the one-sided derivative of the induced norm of the flow map:
/// mu(A) = lim_{h -> 0+} (||I + hA|| - 1) / h.
pub fn matrix_measure(a: &DenseMatrix, p: PNorm) -> Result<f64, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    let n = a.rows();
    match p {
        PNorm::One => {
            let mut best = f64::NEG_INFINITY;
            for j in 0..n {
                let mut v = a.get(j, j);
                for i in 0..n {
                    if i != j {
                        v += a.get(i, j).abs();
                    }
                }
                best = best.max(v);
            }
            Ok(best)
        }
        PNorm::Two => {
            let sym = a.symmetric_part()?;
            let eigs = symmetric_eigenvalues(&sym)?;
            Ok(eigs.last().copied().unwrap_or(0.0))
        }
        PNorm::Inf => {
            let mut best = f64::NEG_INFINITY;
            for i in 0..n {
                let mut v = a.get(i, i);
                for j in 0..n {
                    if j != i {
                        v += a.get(i, j).abs();
                    }
                }
                best = best.max(v);
            }
            Ok(best)
        }
    }
}

/// Weighted max-row matrix measure: with positive weights eta,
/// `max_i ( a_ii + sum_{j != i} (eta_j / eta_i) |a_ij| )`.
///
/// This is the measure induced by the weighted sup norm
/// `||x|| = max_i |x_i| / eta_i`; equivalently mu_inf(D^-1 A D) with
/// D = diag(eta).
pub fn weighted_inf_measure(a: &DenseMatrix, eta: &[f64]) -> Result<f64, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    check_weights(eta, a.rows())?;
    let n = a.rows();
    let mut best = f64::NEG_INFINITY;
    for i in 0..n {
        let mut v = a.get(i, i);
        for j in 0..n {
            if j != i {
                v += (eta[j] / eta[i]) * a.get(i, j).abs();
            }
        }
        best = best.max(v);
    }
    Ok(best)
}

/// Weighted max-row matrix norm: `max_i sum_j (eta_j / eta_i) |a_ij|`,
/// the norm induced by the weighted sup norm `max_i |x_i| / eta_i`.
pub fn weighted_inf_norm(a: &DenseMatrix, eta: &[f64]) -> Result<f64, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    check_weights(eta, a.rows())?;
    let n = a.rows();
    let mut best: f64 = 0.0;
    for i in 0..n {
        let mut v = 0.0;
        for j in 0..n {
            v += (eta[j] / eta[i]) * a.get(i, j).abs();
        }
        best = best.max(v);
    }
    Ok(best)
}

fn check_weights(eta: &[f64], n: usize) -> Result<(), LinalgError> {
    if eta.len() != n {
        return Err(LinalgError::BadWeights(format!(
            "{} weights for dimension {}",
            eta.len(),
            n
        )));
    }
    if eta.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
        return Err(LinalgError::BadWeights(
            "weights must be positive and finite".to_string(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Block majorants and composite bounds
// ---------------------------------------------------------------------------

/// Nonnegative r x r majorant whose (i, j) entry is the induced p-norm of
/// block A_ij. The composite norm of A is bounded by the weighted max-row
/// norm of this majorant.
pub fn aggregate_majorant(
    a: &DenseMatrix,
    part: &BlockPartition,
    spec: &NormSpec,
) -> Result<DenseMatrix, LinalgError> {
    part.check_conformal(a)?;
    spec.check_blocks(part)?;
    let r = part.num_blocks();
    let mut m = DenseMatrix::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            let blk = a.block(part.offset(i), part.offset(j), part.size(i), part.size(j));
            m.set(i, j, induced_norm(&blk, spec.local_p()));
        }
    }
    Ok(m)
}

/// Metzler r x r majorant: diagonal entries are the measures mu_p(A_ii) of the
/// diagonal blocks, off-diagonal entries the induced p-norms of the coupling
/// blocks. The composite measure of A is bounded by the weighted max-row
/// measure of this majorant.
pub fn metzler_majorant(
    a: &DenseMatrix,
    part: &BlockPartition,
    spec: &NormSpec,
) -> Result<DenseMatrix, LinalgError> {
    part.check_conformal(a)?;
    spec.check_blocks(part)?;
    let r = part.num_blocks();
    let mut m = DenseMatrix::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            let blk = a.block(part.offset(i), part.offset(j), part.size(i), part.size(j));
            if i == j {
                m.set(i, j, matrix_measure(&blk, spec.local_p())?);
            } else {
                m.set(i, j, induced_norm(&blk, spec.local_p()));
            }
        }
    }
    Ok(m)
}

/// Composite vector norm `max_i ||x_i||_p / eta_i` over the given partition.
pub fn composite_vector_norm(
    x: &[f64],
    part: &BlockPartition,
    spec: &NormSpec,
) -> Result<f64, LinalgError> {
    if x.len() != part.total_dim() {
        return Err(LinalgError::DimensionMismatch(format!(
            "vector of length {} for partition of dimension {}",
            x.len(),
            part.total_dim()
        )));
    }
    spec.check_blocks(part)?;
    let mut best: f64 = 0.0;
    for i in 0..part.num_blocks() {
        let seg = &x[part.offset(i)..part.offset(i) + part.size(i)];
        best = best.max(spec.local_p().vector_norm(seg) / spec.eta()[i]);
    }
    Ok(best)
}

/// Upper bound on the composite matrix measure of `a`: the weighted max-row
/// measure of the Metzler majorant. Exact when the local norm is the sup norm
/// and every block is 1 x 1; an upper bound in general.
pub fn composite_measure_bound(
    a: &DenseMatrix,
    part: &BlockPartition,
    spec: &NormSpec,
) -> Result<f64, LinalgError> {
    let m = metzler_majorant(a, part, spec)?;
    weighted_inf_measure(&m, spec.eta())
}

/// Upper bound on the composite induced norm of `a`: the weighted max-row
/// norm of the aggregate majorant.
pub fn composite_norm_bound(
    a: &DenseMatrix,
    part: &BlockPartition,
    spec: &NormSpec,
) -> Result<f64, LinalgError> {
    let m = aggregate_majorant(a, part, spec)?;
    weighted_inf_norm(&m, spec.eta())
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
