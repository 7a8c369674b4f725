//! Dense double-precision kernels and seeded randomness.
//!
//! Storage is row-major. The gradient engines only get matrix-vector,
//! outer-product and axpy-style kernels from here; [`dense_matmul`] exists for
//! baselines and oracles and counts its calls per thread so callers can assert
//! that a code path never touched it.

use std::cell::Cell;
use std::ops::{Deref, DerefMut};

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Pivots with magnitude below this are treated as exact zeros.
pub const PIVOT_THRESHOLD: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("vector must be non-empty".into()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("vector entry {i}")));
        }
        Ok(Vector(data))
    }

    /// Wrap a buffer without validation. Kernels use this for results whose
    /// inputs were already checked.
    pub fn from_vec_unchecked(data: Vec<f64>) -> Self {
        Vector(data)
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector(vec![value; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Vector) {
        axpy(alpha, &other.0, &mut self.0);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix shape {rows}x{cols} must be non-empty"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                i / cols,
                i % cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: cols,
                actual: bad.len(),
            });
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scaled_identity(n: usize, alpha: f64) -> Self {
        let mut m = Matrix::identity(n);
        m.scale(alpha);
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Matrix::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        axpy(alpha, &other.data, &mut self.data);
    }

    /// Rank-one update `self += alpha * u vᵀ`.
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (i, ui) in u.iter().enumerate() {
            let a = alpha * ui;
            if a != 0.0 {
                axpy(a, v, self.row_mut(i));
            }
        }
    }

    /// Scale row `i` by `d[i]`, i.e. `diag(d) · self`.
    pub fn scale_rows(&mut self, d: &[f64]) {
        debug_assert_eq!(d.len(), self.rows);
        for (i, di) in d.iter().enumerate() {
            self.row_mut(i).iter_mut().for_each(|v| *v *= di);
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `‖a − b‖_F / ‖b‖_F`, falling back to the absolute error when `b` is zero.
pub fn relative_frobenius_error(a: &Matrix, b: &Matrix) -> f64 {
    let diff: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = b.frobenius_norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// `A v`
pub fn matvec(a: &Matrix, v: &[f64]) -> Result<Vector> {
    check_dims(a.cols, v.len())?;
    let mut out = vec![0.0; a.rows];
    matvec_into(a, v, &mut out);
    Ok(Vector(out))
}

pub(crate) fn matvec_into(a: &Matrix, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(a.row(i), v);
    }
}

/// `Aᵀ v` through a transposed view; `A` is never copied.
pub fn matvec_transposed(a: &Matrix, v: &[f64]) -> Result<Vector> {
    check_dims(a.rows, v.len())?;
    let mut out = vec![0.0; a.cols];
    matvec_transposed_into(a, v, &mut out);
    Ok(Vector(out))
}

pub(crate) fn matvec_transposed_into(a: &Matrix, v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, vi) in v.iter().enumerate() {
        if *vi != 0.0 {
            axpy(*vi, a.row(i), out);
        }
    }
}

/// `u vᵀ`
pub fn outer(u: &[f64], v: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(u.len(), v.len());
    m.add_outer(1.0, u, v);
    m
}

thread_local! {
    static MATMUL_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`dense_matmul`] calls made on the current thread.
pub fn dense_matmul_calls() -> u64 {
    MATMUL_CALLS.with(|c| c.get())
}

/// Product of two dense matrices. Reserved for baselines and oracles.
pub fn dense_matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_dims(a.cols, b.rows)?;
    MATMUL_CALLS.with(|c| c.set(c.get() + 1));
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, aik) in a.row(i).iter().enumerate() {
            if *aik != 0.0 {
                axpy(*aik, b.row(k), out_row);
            }
        }
    }
    Ok(out)
}

/// Sign and log-magnitude of a determinant. A singular input has sign 0 and
/// `logabsdet = -inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlogDet {
    pub sign: f64,
    pub logabsdet: f64,
}

impl SlogDet {
    pub fn is_singular(&self) -> bool {
        self.sign == 0.0
    }

    pub fn det(&self) -> f64 {
        self.sign * self.logabsdet.exp()
    }
}

/// Partial-pivoting LU factors `P A = L U`, `L` unit lower triangular, both
/// triangles packed in one matrix.
#[derive(Clone, Debug)]
pub struct LuFactors {
    lu: Matrix,
    /// Row `i` of `P A` is row `perm[i]` of `A`.
    perm: Vec<usize>,
    sign: f64,
}

impl LuFactors {
    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    pub fn packed(&self) -> &Matrix {
        &self.lu
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn permutation_sign(&self) -> f64 {
        self.sign
    }

    pub fn slogdet(&self) -> SlogDet {
        let n = self.dim();
        let mut sign = self.sign;
        let mut logabsdet = 0.0;
        for i in 0..n {
            let p = self.lu.get(i, i);
            sign *= p.signum();
            logabsdet += p.abs().ln();
        }
        SlogDet { sign, logabsdet }
    }

    /// Solve `A x = rhs`, writing `x` into `out`.
    pub fn solve_into(&self, rhs: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for (o, &p) in out.iter_mut().zip(&self.perm) {
            *o = rhs[p];
        }
        for i in 1..n {
            let s = dot(&self.lu.row(i)[..i], &out[..i]);
            out[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s = dot(&row[i + 1..], &out[i + 1..]);
            out[i] = (out[i] - s) / row[i];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vector> {
        check_dims(self.dim(), rhs.len())?;
        let mut out = vec![0.0; rhs.len()];
        self.solve_into(rhs, &mut out);
        Ok(Vector(out))
    }

    /// `(Aᵀ)⁻¹`, assembled one unit-vector solve at a time: row `j` of
    /// `A⁻ᵀ` is column `j` of `A⁻¹`.
    pub fn inverse_transpose(&self) -> Matrix {
        let n = self.dim();
        let mut out = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let row = &mut out.data[j * n..(j + 1) * n];
            self.solve_into(&e, row);
            e[j] = 0.0;
        }
        out
    }

    pub fn inverse(&self) -> Matrix {
        self.inverse_transpose().transpose()
    }

    /// `Pᵀ L U`, the matrix that was factored.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let mut pa = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let upto = i.min(j);
                let mut s: f64 = (0..upto)
                    .map(|k| self.lu.get(i, k) * self.lu.get(k, j))
                    .sum();
                s += if i <= j {
                    self.lu.get(i, j)
                } else {
                    self.lu.get(i, j) * self.lu.get(j, j)
                };
                pa.set(i, j, s);
            }
        }
        let mut a = Matrix::zeros(n, n);
        for (i, &p) in self.perm.iter().enumerate() {
            a.row_mut(p).copy_from_slice(pa.row(i));
        }
        a
    }
}

fn factor_in_place(a: &Matrix) -> std::result::Result<LuFactors, (LuFactors, usize)> {
    let n = a.rows;
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    let mut singular_at = None;
    for k in 0..n {
        let (p, pmax) = (k..n)
            .map(|i| (i, lu.get(i, k).abs()))
            .fold(
                (k, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if pmax < PIVOT_THRESHOLD {
            singular_at.get_or_insert(k);
            continue;
        }
        if p != k {
            let (top, bottom) = lu.data.split_at_mut(p * n);
            top[k * n..(k + 1) * n].swap_with_slice(&mut bottom[..n]);
            perm.swap(k, p);
            sign = -sign;
        }
        let pivot = lu.get(k, k);
        let (upper, lower) = lu.data.split_at_mut((k + 1) * n);
        let pivot_row = &upper[k * n..(k + 1) * n];
        for row in lower.chunks_exact_mut(n) {
            let factor = row[k] / pivot;
            row[k] = factor;
            if factor != 0.0 {
                axpy(-factor, &pivot_row[k + 1..], &mut row[k + 1..]);
            }
        }
    }
    let f = LuFactors { lu, perm, sign };
    match singular_at {
        None => Ok(f),
        Some(k) => Err((f, k)),
    }
}

pub fn lu_factor(a: &Matrix) -> Result<LuFactors> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(format!(
            "lu_factor needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    factor_in_place(a).map_err(|(_, pivot)| Error::Singular { pivot })
}

pub fn slogdet(a: &Matrix) -> Result<SlogDet> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(format!(
            "slogdet needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    Ok(match factor_in_place(a) {
        Ok(f) => f.slogdet(),
        Err(_) => SlogDet {
            sign: 0.0,
            logabsdet: f64::NEG_INFINITY,
        },
    })
}

pub fn solve(a: &Matrix, rhs: &[f64]) -> Result<Vector> {
    lu_factor(a)?.solve(rhs)
}

/// Seeded generator; the stream is a pure function of the seed.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent substream `stream` of this generator's seed.
    pub fn substream(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Rng {
            seed: self.seed,
            inner,
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// I.i.d. `N(0, 1) · scale` entries.
pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Result<Matrix> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scale must be positive, got {scale}"
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(
            "matrix shape must be non-empty".into(),
        ));
    }
    let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
    Ok(Matrix { rows, cols, data })
}

pub fn random_normal_vector(rng: &mut Rng, len: usize) -> Vector {
    Vector((0..len).map(|_| rng.normal()).collect())
}
