//! Dense matrix primitives shared by every other module.
//!
//! [`Mat`] is a thin newtype over a column-major `nalgebra` matrix that
//! guarantees non-empty shape and finite entries at construction. Samplers
//! draw from a [`SeededRng`] so sampled matrices are reproducible from a
//! single 64-bit seed.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Largest state dimension solved through the dense Kronecker system.
pub const KRONECKER_MAX_DIM: usize = 30;

/// Relative singular-value cutoff used for pseudoinverse rank decisions.
pub const PINV_RCOND: f64 = 1e-12;

/// Real matrix with at least one row and column and finite entries.
#[derive(Clone, PartialEq)]
pub struct Mat(DMatrix<f64>);

impl Mat {
    /// Wraps an nalgebra matrix after checking the shape and finiteness invariants.
    pub fn new(inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return dim_err(format!(
                "matrix must be non-empty, got {}x{}",
                inner.nrows(),
                inner.ncols()
            ));
        }
        for j in 0..inner.ncols() {
            for i in 0..inner.nrows() {
                if !inner[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Mat(inner))
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!(
                "expected {} entries for {rows}x{cols}, got {}",
                rows * cols,
                data.len()
            ));
        }
        Mat::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be non-empty");
        Mat(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        assert!(n > 0, "matrix must be non-empty");
        Mat(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.is_empty() {
            return dim_err("diagonal must be non-empty");
        }
        let n = diag.len();
        Mat::new(DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    /// Builds a matrix from a generator closure `(row, col) -> value`.
    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Mat::new(DMatrix::from_fn(rows, cols, f))
    }

    /// Wraps a matrix produced by arithmetic on valid matrices.
    pub(crate) fn wrap(inner: DMatrix<f64>) -> Self {
        debug_assert!(inner.nrows() > 0 && inner.ncols() > 0);
        Mat(inner)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    pub fn as_na(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_na(self) -> DMatrix<f64> {
        self.0
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        Mat(self.0.transpose())
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat(&self.0 * s)
    }

    /// Shape-checked product `self * rhs`.
    pub fn matmul(&self, rhs: &Mat) -> Result<Mat> {
        if self.cols() != rhs.rows() {
            return dim_err(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            ));
        }
        Ok(Mat(&self.0 * &rhs.0))
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Sub-block starting at `(row, col)` with the given shape.
    pub fn block(&self, row: usize, col: usize, rows: usize, cols: usize) -> Mat {
        Mat(self.0.view((row, col), (rows, cols)).into_owned())
    }

    /// Vertical concatenation of blocks with equal column counts.
    pub fn vstack(blocks: &[&Mat]) -> Result<Mat> {
        let Some(first) = blocks.first() else {
            return dim_err("vstack of zero blocks");
        };
        let cols = first.cols();
        if blocks.iter().any(|b| b.cols() != cols) {
            return dim_err("vstack blocks must share a column count");
        }
        let rows = blocks.iter().map(|b| b.rows()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut r = 0;
        for b in blocks {
            out.view_mut((r, 0), b.shape()).copy_from(&b.0);
            r += b.rows();
        }
        Ok(Mat(out))
    }

    /// Horizontal concatenation of blocks with equal row counts.
    pub fn hstack(blocks: &[&Mat]) -> Result<Mat> {
        let Some(first) = blocks.first() else {
            return dim_err("hstack of zero blocks");
        };
        let rows = first.rows();
        if blocks.iter().any(|b| b.rows() != rows) {
            return dim_err("hstack blocks must share a row count");
        }
        let cols = blocks.iter().map(|b| b.cols()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut c = 0;
        for b in blocks {
            out.view_mut((0, c), b.shape()).copy_from(&b.0);
            c += b.cols();
        }
        Ok(Mat(out))
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in max_abs_diff");
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows() == self.cols() && self.max_abs_diff(&self.transpose()) <= tol
    }

    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.0.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    pub fn spectral(&self) -> f64 {
        self.singular_values().first().copied().unwrap_or(0.0)
    }

    pub fn nuclear(&self) -> f64 {
        self.singular_values().iter().sum()
    }

    /// Sum of absolute entries.
    pub fn entrywise_l1(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).sum()
    }

    /// Induced 1-norm (maximum absolute column sum).
    pub fn induced_l1(&self) -> f64 {
        self.0
            .column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest eigenvalue modulus of a square matrix.
    pub fn spectral_radius(&self) -> Result<f64> {
        if self.rows() != self.cols() {
            return dim_err(format!(
                "spectral radius needs a square matrix, got {}x{}",
                self.rows(),
                self.cols()
            ));
        }
        match self.0.clone().try_schur(f64::EPSILON, SCHUR_MAX_ITER) {
            Some(schur) => Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)),
            None => Ok(gelfand_radius(&self.0)),
        }
    }
}

const SCHUR_MAX_ITER: usize = 2000;
const GELFAND_SQUARINGS: u32 = 48;

/// `lim ||A^k||^(1/k)` through repeated normalized squaring.
fn gelfand_radius(a: &DMatrix<f64>) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mut b = a / norm;
    let mut log_norm = norm.ln();
    for k in 0..GELFAND_SQUARINGS {
        let sq = &b * &b;
        let s = sq.norm();
        if s == 0.0 {
            return 0.0;
        }
        // ln ||A^(2^(k+1))|| = 2 ln ||A^(2^k)|| + ln ||B^2||
        log_norm = 2.0 * log_norm + s.ln();
        b = sq / s;
        if k == GELFAND_SQUARINGS - 1 {
            return (log_norm / 2f64.powi(k as i32 + 1)).exp();
        }
    }
    unreachable!()
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat{}x{}{:?}", self.rows(), self.cols(), self.to_row_major())
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait<&Mat> for &Mat {
            type Output = Mat;
            fn $method(self, rhs: &Mat) -> Mat {
                Mat(&self.0 $op &rhs.0)
            }
        }
        impl $trait<Mat> for Mat {
            type Output = Mat;
            fn $method(self, rhs: Mat) -> Mat {
                Mat(self.0 $op rhs.0)
            }
        }
        impl $trait<&Mat> for Mat {
            type Output = Mat;
            fn $method(self, rhs: &Mat) -> Mat {
                Mat(self.0 $op &rhs.0)
            }
        }
    };
}

binop!(Add, add, +);
binop!(Sub, sub, -);
binop!(Mul, mul, *);

impl Mul<f64> for &Mat {
    type Output = Mat;
    fn mul(self, rhs: f64) -> Mat {
        Mat(&self.0 * rhs)
    }
}

impl Neg for &Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        Mat(-&self.0)
    }
}

/// Matrix norms reported together.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub spectral: f64,
    pub frobenius: f64,
    pub nuclear: f64,
    pub entrywise_l1: f64,
}

pub fn norms(m: &Mat) -> Norms {
    let sv = m.singular_values();
    Norms {
        spectral: sv.first().copied().unwrap_or(0.0),
        frobenius: m.frobenius(),
        nuclear: sv.iter().sum(),
        entrywise_l1: m.entrywise_l1(),
    }
}

/// Mixes a sequence of 64-bit words into one seed (splitmix64 finalizer chain).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic random stream keyed by a 64-bit seed (ChaCha8).
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        let mut state = seed;
        for chunk in key.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        SeededRng {
            seed,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this rng's seed and a stream index.
    pub fn child(&self, stream: u64) -> SeededRng {
        SeededRng::new(mix_seed(&[self.seed, stream]))
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

/// Matrix with i.i.d. `N(0, std^2)` entries, filled in row-major order.
pub fn sample_gaussian(rng: &mut SeededRng, rows: usize, cols: usize, std: f64) -> Result<Mat> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "standard deviation must be finite and non-negative, got {std}"
        )));
    }
    if rows == 0 || cols == 0 {
        return dim_err(format!("empty shape {rows}x{cols}"));
    }
    if std == 0.0 {
        return Ok(Mat::zeros(rows, cols));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(std * rng.standard_normal());
    }
    Ok(Mat::wrap(DMatrix::from_row_slice(rows, cols, &data)))
}

/// Haar-distributed matrix with orthonormal columns, multiplied by `scale`.
///
/// Uses the thin QR factorization of a standard Gaussian matrix with columns
/// of `Q` flipped so that the triangular factor has a non-negative diagonal.
pub fn sample_semi_orthogonal(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Result<Mat> {
    if rows < cols {
        return dim_err(format!(
            "semi-orthogonal sample needs rows >= cols, got {rows}x{cols}"
        ));
    }
    if !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be finite, got {scale}")));
    }
    let g = sample_gaussian(rng, rows, cols, 1.0)?;
    let qr = g.into_na().qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(Mat::wrap(q * scale))
}

/// Column blocks `W_1..W_m` (each `p x n`) of a single Haar sample from `O(p)`.
pub fn sample_haar_orthogonal_partition(rng: &mut SeededRng, p: usize, n: usize, m: usize) -> Result<Vec<Mat>> {
    if n == 0 || p % n != 0 {
        return dim_err(format!("block width {n} must divide {p}"));
    }
    if m == 0 || m > p / n {
        return dim_err(format!("block count {m} must lie in 1..={}", p / n));
    }
    let w = sample_semi_orthogonal(rng, p, p, 1.0)?;
    Ok((0..m).map(|i| w.block(0, i * n, p, n)).collect())
}

/// Solves `P = rhs + acl^T P acl` for symmetric `P`.
///
/// Dimensions up to [`KRONECKER_MAX_DIM`] use the vectorized system
/// `[I - acl^T (x) acl^T] vec(P) = vec(rhs)`; larger systems iterate the
/// fixed point.
pub fn solve_discrete_lyapunov(acl: &Mat, rhs: &Mat) -> Result<Mat> {
    check_lyapunov_inputs(acl, rhs)?;
    let rho = acl.spectral_radius()?;
    if !(rho < 1.0) {
        return Err(Error::Unstable { spectral_radius: rho });
    }
    let n = acl.rows();
    let p = if n <= KRONECKER_MAX_DIM {
        kronecker_solve(acl, rhs)?
    } else {
        lyapunov_fixed_point(acl, rhs, 1e-12, 10_000_000)?
    };
    Ok(symmetrize(&p))
}

fn check_lyapunov_inputs(acl: &Mat, rhs: &Mat) -> Result<()> {
    let n = acl.rows();
    if acl.cols() != n || rhs.shape() != (n, n) {
        return dim_err(format!(
            "lyapunov needs square operands of equal size, got {:?} and {:?}",
            acl.shape(),
            rhs.shape()
        ));
    }
    let tol = 1e-9 * (1.0 + rhs.frobenius());
    if !rhs.is_symmetric(tol) {
        return Err(Error::InvalidArgument("lyapunov right-hand side must be symmetric".into()));
    }
    Ok(())
}

fn kronecker_system(acl: &Mat) -> DMatrix<f64> {
    let n = acl.rows();
    let at = acl.as_na().transpose();
    let mut system = at.kronecker(&at);
    system.neg_mut();
    for i in 0..n * n {
        system[(i, i)] += 1.0;
    }
    system
}

fn kronecker_solve(acl: &Mat, rhs: &Mat) -> Result<Mat> {
    let n = acl.rows();
    let system = kronecker_system(acl);
    // column-major storage is exactly vec()
    let b = nalgebra::DVector::from_column_slice(rhs.as_na().as_slice());
    let x = system
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("kronecker lyapunov system".into()))?;
    Mat::new(DMatrix::from_column_slice(n, n, x.as_slice()))
}

/// Solves the value equation `P = rhs_value + acl^T P acl` and the covariance
/// equation `S = rhs_cov + acl S acl^T` together.
///
/// The two vectorized systems are transposes of each other, so the dense path
/// factors `I - acl^T (x) acl^T` once.
pub fn solve_lyapunov_pair(acl: &Mat, rhs_value: &Mat, rhs_cov: &Mat) -> Result<(Mat, Mat)> {
    check_lyapunov_inputs(acl, rhs_value)?;
    check_lyapunov_inputs(acl, rhs_cov)?;
    let rho = acl.spectral_radius()?;
    if !(rho < 1.0) {
        return Err(Error::Unstable { spectral_radius: rho });
    }
    lyapunov_pair_stable(acl, rhs_value, rhs_cov)
}

/// [`solve_lyapunov_pair`] for a closed loop already known to be stable with
/// validated square symmetric right-hand sides.
pub(crate) fn lyapunov_pair_stable(acl: &Mat, rhs_value: &Mat, rhs_cov: &Mat) -> Result<(Mat, Mat)> {
    let n = acl.rows();
    if n > KRONECKER_MAX_DIM {
        let p = lyapunov_fixed_point(acl, rhs_value, 1e-12, 10_000_000)?;
        let s = lyapunov_fixed_point(&acl.transpose(), rhs_cov, 1e-12, 10_000_000)?;
        return Ok((symmetrize(&p), symmetrize(&s)));
    }
    let lu = kronecker_system(acl).lu();
    let b = nalgebra::DVector::from_column_slice(rhs_value.as_na().as_slice());
    let x = lu
        .solve(&b)
        .ok_or_else(|| Error::Singular("kronecker lyapunov system".into()))?;
    // P M = L U  =>  M^T = U^T L^T P
    let (perm, l, u) = lu.unpack();
    let c = nalgebra::DVector::from_column_slice(rhs_cov.as_na().as_slice());
    let y = u
        .tr_solve_upper_triangular(&c)
        .and_then(|y| l.tr_solve_lower_triangular(&y))
        .ok_or_else(|| Error::Singular("transposed kronecker lyapunov system".into()))?;
    let mut y = y;
    perm.inv_permute_rows(&mut y);
    let p = Mat::new(DMatrix::from_column_slice(n, n, x.as_slice()))?;
    let s = Mat::new(DMatrix::from_column_slice(n, n, y.as_slice()))?;
    Ok((symmetrize(&p), symmetrize(&s)))
}

/// Iterates `P <- rhs + acl^T P acl` until `||dP||_F < tol * (1 + ||P||_F)`.
pub fn lyapunov_fixed_point(acl: &Mat, rhs: &Mat, tol: f64, max_iter: usize) -> Result<Mat> {
    check_lyapunov_inputs(acl, rhs)?;
    let a = acl.as_na();
    let at = a.transpose();
    let mut p = rhs.as_na().clone();
    for _ in 0..max_iter {
        let next = rhs.as_na() + &at * &p * a;
        let delta = (&next - &p).norm();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Unstable { spectral_radius: f64::NAN });
        }
        if delta < tol * (1.0 + p.norm()) {
            return Mat::new(p);
        }
    }
    Err(Error::Singular(format!("fixed-point lyapunov did not converge in {max_iter} iterations")))
}

pub(crate) fn symmetrize(m: &Mat) -> Mat {
    Mat::wrap((m.as_na() + m.as_na().transpose()) * 0.5)
}

/// Moore-Penrose pseudoinverse through the SVD with cutoff `PINV_RCOND * sigma_max`.
pub fn pseudoinverse(z: &Mat) -> Mat {
    let svd = z.as_na().clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let vt = svd.v_t.as_ref().expect("svd computed with v_t");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = PINV_RCOND * smax;
    let mut out = DMatrix::zeros(z.cols(), z.rows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += vt.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    Mat::wrap(out)
}
