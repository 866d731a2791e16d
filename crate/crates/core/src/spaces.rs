//! Dense numeric kernels on finite-dimensional Euclidean coordinate spaces.
//!
//! Every rank, norm and pseudoinverse in the crate is derived from the SVD
//! computed here. An operator `B: R^n -> R^m` is treated as surjective when
//! `m <= n` and its `m`-th singular value exceeds
//! [`SURJECTIVITY_THRESHOLD`] times the largest one.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Points of `R^n`.
pub type Vector = DVector<f64>;

/// Relative cutoff below which a singular value is treated as zero.
pub const SURJECTIVITY_THRESHOLD: f64 = 1e-10;

/// Builds a [`Vector`] from a slice.
pub fn vector(entries: &[f64]) -> Vector {
    Vector::from_column_slice(entries)
}

/// Checks the `Vector` invariants: nonempty and finite.
pub fn check_vector(v: &Vector, what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Shape(format!("{what} has dimension 0")));
    }
    if v.iter().any(|e| !e.is_finite()) {
        return Err(Error::NumericBreakdown(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// Dense real matrix acting between coordinate spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    matrix: DMatrix<f64>,
}

impl LinearOperator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Shape(format!(
                "operator must be at least 1x1, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|e| !e.is_finite()) {
            return Err(Error::NumericBreakdown("operator has non-finite entries".into()));
        }
        Ok(Self { matrix })
    }

    /// Row-major nested construction, e.g. `from_rows(&[vec![1.0, 1.0]])`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::Shape("ragged matrix rows".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(nrows, ncols, &data))
    }

    pub fn identity(n: usize) -> Self {
        Self { matrix: DMatrix::identity(n, n) }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { matrix: DMatrix::zeros(rows, cols) }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn transpose(&self) -> Self {
        Self { matrix: self.matrix.transpose() }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { matrix: &self.matrix * c }
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.cols() {
            return Err(Error::Shape(format!(
                "operator has {} columns, vector has dimension {}",
                self.cols(),
                x.len()
            )));
        }
        Ok(&self.matrix * x)
    }

    pub fn svd(&self) -> Result<SvdFactorization> {
        SvdFactorization::new(self)
    }
}

/// Thin SVD `A = U diag(s) V^T` with singular values in nonincreasing order.
#[derive(Debug, Clone)]
pub struct SvdFactorization {
    u: DMatrix<f64>,
    singular_values: DVector<f64>,
    v_t: DMatrix<f64>,
}

impl SvdFactorization {
    pub fn new(op: &LinearOperator) -> Result<Self> {
        let svd = nalgebra::SVD::try_new(op.matrix.clone(), true, true, f64::EPSILON, 0)
            .ok_or_else(|| Error::NumericBreakdown("SVD did not converge".into()))?;
        let mut svd = svd;
        svd.sort_by_singular_values();
        let u = svd.u.ok_or_else(|| Error::NumericBreakdown("SVD lost U".into()))?;
        let v_t = svd.v_t.ok_or_else(|| Error::NumericBreakdown("SVD lost V^T".into()))?;
        Ok(Self { u, singular_values: svd.singular_values, v_t })
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v_t(&self) -> &DMatrix<f64> {
        &self.v_t
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn largest(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    /// Number of singular values above the relative threshold.
    pub fn rank(&self) -> usize {
        let cutoff = SURJECTIVITY_THRESHOLD * self.largest();
        if self.largest() == 0.0 {
            return 0;
        }
        self.singular_values.iter().filter(|&&s| s > cutoff).count()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.singular_values) * &self.v_t
    }
}

fn sigma_at(svd: &SvdFactorization, rows: usize) -> f64 {
    svd.singular_values[rows - 1]
}

/// Largest singular value.
pub fn operator_norm(op: &LinearOperator) -> Result<f64> {
    Ok(op.svd()?.largest())
}

/// The `rows`-th largest singular value; positive iff `op` is onto.
pub fn sigma_min_surjective(op: &LinearOperator) -> Result<f64> {
    if op.rows() > op.cols() {
        return Err(Error::Shape(format!("a {}x{} operator cannot be surjective", op.rows(), op.cols())));
    }
    Ok(sigma_at(&op.svd()?, op.rows()))
}

/// Surjectivity test used by every certificate in the crate.
pub fn is_surjective(op: &LinearOperator) -> Result<bool> {
    if op.rows() > op.cols() {
        return Ok(false);
    }
    let svd = op.svd()?;
    Ok(surjective_from_svd(&svd, op.rows()))
}

fn surjective_from_svd(svd: &SvdFactorization, rows: usize) -> bool {
    let top = svd.largest();
    top > 0.0 && sigma_at(svd, rows) > SURJECTIVITY_THRESHOLD * top
}

/// A factored operator for repeated least-norm solves.
#[derive(Debug, Clone)]
pub struct LeastNormSolver {
    op: LinearOperator,
    svd: SvdFactorization,
    rank: usize,
    surjective: bool,
}

impl LeastNormSolver {
    pub fn new(op: LinearOperator) -> Result<Self> {
        let svd = op.svd()?;
        let rank = svd.rank();
        let surjective = op.rows() <= op.cols() && surjective_from_svd(&svd, op.rows());
        Ok(Self { op, svd, rank, surjective })
    }

    pub fn operator(&self) -> &LinearOperator {
        &self.op
    }

    pub fn svd(&self) -> &SvdFactorization {
        &self.svd
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_surjective(&self) -> bool {
        self.surjective
    }

    /// `1 / sigma_min` when onto, `+inf` otherwise.
    pub fn reg(&self) -> f64 {
        if self.surjective {
            1.0 / sigma_at(&self.svd, self.op.rows())
        } else {
            f64::INFINITY
        }
    }

    /// Minimum-norm solution of `op x = rhs`; requires surjectivity.
    pub fn solve(&self, rhs: &Vector) -> Result<Vector> {
        self.check_rhs(rhs)?;
        if !self.surjective {
            return Err(Error::Regularity("operator is not surjective".into()));
        }
        Ok(self.truncated_pinv(rhs, self.op.rows()))
    }

    /// Pseudoinverse applied with rank truncation; yields the least-norm
    /// least-squares solution even when `op` is rank deficient.
    pub fn pinv(&self, rhs: &Vector) -> Result<Vector> {
        self.check_rhs(rhs)?;
        Ok(self.truncated_pinv(rhs, self.rank))
    }

    fn check_rhs(&self, rhs: &Vector) -> Result<()> {
        if rhs.len() != self.op.rows() {
            return Err(Error::Shape(format!(
                "operator has {} rows, right-hand side has dimension {}",
                self.op.rows(),
                rhs.len()
            )));
        }
        Ok(())
    }

    fn truncated_pinv(&self, rhs: &Vector, keep: usize) -> Vector {
        let mut coeffs = self.svd.u.columns(0, keep).transpose() * rhs;
        for (c, s) in coeffs.iter_mut().zip(self.svd.singular_values.iter()) {
            *c /= *s;
        }
        self.svd.v_t.rows(0, keep).transpose() * coeffs
    }
}

/// Minimum-norm solution of `op x = rhs` through the SVD.
pub fn least_norm_solve(op: &LinearOperator, rhs: &Vector) -> Result<Vector> {
    if rhs.len() != op.rows() {
        return Err(Error::Shape(format!(
            "operator has {} rows, right-hand side has dimension {}",
            op.rows(),
            rhs.len()
        )));
    }
    LeastNormSolver::new(op.clone())?.solve(rhs)
}

/// Right inverse `B^T (B B^T)^{-1}` applied to `rhs`, computed from a QR
/// factorization of `B^T` (`B B^T = R^T R`). Independent of the SVD route.
pub fn pinv_apply(op: &LinearOperator, rhs: &Vector) -> Result<Vector> {
    if rhs.len() != op.rows() {
        return Err(Error::Shape(format!(
            "operator has {} rows, right-hand side has dimension {}",
            op.rows(),
            rhs.len()
        )));
    }
    if !is_surjective(op)? {
        return Err(Error::Regularity("operator is not surjective".into()));
    }
    let qr = op.matrix.transpose().qr();
    let r = qr.r();
    let w = r
        .transpose()
        .solve_lower_triangular(rhs)
        .ok_or_else(|| Error::NumericBreakdown("triangular factor is singular".into()))?;
    Ok(qr.q() * w)
}

/// Central-difference Jacobian of `f` at `x` with absolute step `step`.
pub fn central_difference_jacobian<F>(f: &F, x: &Vector, step: f64) -> Result<LinearOperator>
where
    F: Fn(&Vector) -> Result<Vector> + ?Sized,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[j] += step;
        minus[j] -= step;
        let fp = f(&plus)?;
        let fm = f(&minus)?;
        if fp.len() != fm.len() {
            return Err(Error::Shape("oracle output dimension changed between calls".into()));
        }
        cols.push((fp - fm) / (2.0 * step));
    }
    let m = cols[0].len();
    let jac = DMatrix::from_fn(m, n, |i, j| cols[j][i]);
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::Oracle("non-finite finite-difference Jacobian".into()));
    }
    LinearOperator::new(jac)
}

/// Step `1e-6 * (1 + |x|)` used for every finite-difference Jacobian.
pub fn jacobian_step(x: &Vector) -> f64 {
    1e-6 * (1.0 + x.norm())
}
