//! Real and complex sparse linear algebra used by the finite element solvers.
//!
//! Three storage forms cover every system in the crate: tridiagonal (1D
//! elements), compressed sparse rows (2D assembly) and band storage with
//! partial pivoting (direct 2D solves). Large real time-stepping systems go
//! through ILU(0)-preconditioned BiCGSTAB instead.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Field scalar shared by the real time-domain and complex Laplace-domain solves.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_real(x: f64) -> Self;
    fn modulus(self) -> f64;
    fn conjugate(self) -> Self;
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_real(x: f64) -> Self {
        x
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn conjugate(self) -> Self {
        self
    }
}

impl Scalar for Complex64 {
    const ZERO: Self = Complex64::new(0.0, 0.0);
    const ONE: Self = Complex64::new(1.0, 0.0);
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn conjugate(self) -> Self {
        self.conj()
    }
}

/// Hermitian inner product `sum conj(a_i) b_i`.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::ZERO, |acc, (&x, &y)| acc + x.conjugate() * y)
}

pub fn norm2<T: Scalar>(a: &[T]) -> f64 {
    a.iter().map(|x| x.modulus().powi(2)).sum::<f64>().sqrt()
}

pub fn norm_inf<T: Scalar>(a: &[T]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.modulus()))
}

/// Tridiagonal matrix; `lower[i] = A[i+1][i]`, `upper[i] = A[i][i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal<T> {
    pub lower: Vec<T>,
    pub diag: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> Tridiagonal<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            lower: vec![T::ZERO; n.saturating_sub(1)],
            diag: vec![T::ZERO; n],
            upper: vec![T::ZERO; n.saturating_sub(1)],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        m.diag.iter_mut().for_each(|d| *d = T::ONE);
        m
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * x[i];
                if i > 0 {
                    acc += self.lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    acc += self.upper[i] * x[i + 1];
                }
                acc
            })
            .collect()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i].modulus();
                if i > 0 {
                    s += self.lower[i - 1].modulus();
                }
                if i + 1 < n {
                    s += self.upper[i].modulus();
                }
                s
            })
            .fold(0.0, f64::max)
    }

    /// Thomas elimination without pivoting, followed by a backward-error check
    /// `|Ax - b| <= 1e-12 |A| |x|` (infinity norms).
    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        let n = self.len();
        assert_eq!(rhs.len(), n, "right-hand side length mismatch");
        if n == 0 {
            return Ok(Vec::new());
        }
        let scale = self.norm_inf();
        let mut c = vec![T::ZERO; n];
        let mut d = vec![T::ZERO; n];
        let mut pivot = self.diag[0];
        for i in 0..n {
            if i > 0 {
                pivot = self.diag[i] - self.lower[i - 1] * c[i - 1];
            }
            if !(pivot.modulus() > f64::EPSILON * scale) {
                return Err(Error::PivotBreakdown { row: i });
            }
            if i + 1 < n {
                c[i] = self.upper[i] / pivot;
            }
            d[i] = if i == 0 {
                rhs[0] / pivot
            } else {
                (rhs[i] - self.lower[i - 1] * d[i - 1]) / pivot
            };
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] -= c[i] * next;
        }
        let residual: Vec<T> = self
            .mul_vec(&x)
            .into_iter()
            .zip(rhs)
            .map(|(ax, &b)| ax - b)
            .collect();
        let bound = 1e-12 * scale * norm_inf(&x);
        let res = norm_inf(&residual);
        if res > bound && res > 0.0 {
            return Err(Error::Residual { residual: res, bound });
        }
        Ok(x)
    }
}

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for k in order {
            let (i, j, v) = triplets[k];
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, T::ONE)).collect();
        Self::from_triplets(n, n, &t)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => T::ZERO,
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::ZERO; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = T::ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).map(|(_, v)| v.modulus()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.nrows {
            for (j, _) in self.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    /// Linear combination `sum c_k A_k` of matrices with arbitrary patterns.
    pub fn combine<S: Scalar>(terms: &[(T, &CsrMatrix<S>)]) -> Self
    where
        T: From<S>,
    {
        let (nrows, ncols) = terms
            .first()
            .map(|(_, m)| (m.nrows, m.ncols))
            .unwrap_or((0, 0));
        let mut triplets = Vec::new();
        for (c, m) in terms {
            assert_eq!((m.nrows, m.ncols), (nrows, ncols), "shape mismatch");
            for i in 0..m.nrows {
                for (j, v) in m.row(i) {
                    triplets.push((i, j, *c * T::from(v)));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &triplets)
    }

    /// Keeps the rows and columns listed in `keep` (in that order).
    pub fn submatrix(&self, keep_rows: &[usize], keep_cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in keep_cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_i, &i) in keep_rows.iter().enumerate() {
            for (j, v) in self.row(i) {
                if col_map[j] != usize::MAX {
                    triplets.push((new_i, col_map[j], v));
                }
            }
        }
        Self::from_triplets(keep_rows.len(), keep_cols.len(), &triplets)
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                triplets.push((j, i, v));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &triplets)
    }
}

/// LU factorisation in band storage with row partial pivoting.
///
/// Row `i` stores columns `i - kl ..= i + kl + ku`; the extra `kl`
/// super-diagonals hold fill created by row interchanges.
#[derive(Debug, Clone)]
pub struct BandedLu<T> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<T>,
    pivots: Vec<usize>,
}

impl<T: Scalar> BandedLu<T> {
    pub fn factor(a: &CsrMatrix<T>) -> Result<Self> {
        assert_eq!(a.nrows, a.ncols, "band LU needs a square matrix");
        let n = a.nrows;
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut data = vec![T::ZERO; n * width];
        for i in 0..n {
            for (j, v) in a.row(i) {
                data[i * width + (j + kl - i)] = v;
            }
        }
        let scale = a.norm_inf();
        let mut pivots = vec![0usize; n];
        let idx = |i: usize, j: usize| i * width + (j + kl - i);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = data[idx(k, k)].modulus();
            for i in k + 1..=last_row {
                let m = data[idx(i, k)].modulus();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            pivots[k] = p;
            if !(best > f64::EPSILON * scale * 1e-3) {
                return Err(Error::PivotBreakdown { row: k });
            }
            if p != k {
                for j in k..=last_col {
                    data.swap(idx(k, j), idx(p, j));
                }
            }
            let pivot = data[idx(k, k)];
            let row_k = idx(k, k);
            let span = last_col - k;
            for i in k + 1..=last_row {
                let lik = data[idx(i, k)] / pivot;
                data[idx(i, k)] = lik;
                if lik == T::ZERO {
                    continue;
                }
                let row_i = idx(i, k);
                let (head, tail) = data.split_at_mut(row_i);
                let src = &head[row_k + 1..row_k + 1 + span];
                let dst = &mut tail[1..1 + span];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d -= lik * s;
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku,
            width,
            data,
            pivots,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let n = self.n;
        assert_eq!(rhs.len(), n, "right-hand side length mismatch");
        let (kl, ku, width) = (self.kl, self.ku, self.width);
        let idx = |i: usize, j: usize| i * width + (j + kl - i);
        let mut x = rhs.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            for i in k + 1..=(k + kl).min(n.saturating_sub(1)) {
                x[i] -= self.data[idx(i, k)] * xk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = x[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                acc -= self.data[idx(k, j)] * x[j];
            }
            x[k] = acc / self.data[idx(k, k)];
        }
        x
    }
}

/// Incomplete LU with zero fill on the pattern of `a`.
#[derive(Debug, Clone)]
pub struct Ilu0<T> {
    lu: CsrMatrix<T>,
    diag_pos: Vec<usize>,
}

impl<T: Scalar> Ilu0<T> {
    pub fn new(a: &CsrMatrix<T>) -> Result<Self> {
        let mut lu = a.clone();
        let n = lu.nrows;
        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.col_idx[k] == i {
                    diag_pos[i] = k;
                }
            }
            if diag_pos[i] == usize::MAX {
                return Err(Error::PivotBreakdown { row: i });
            }
        }
        let mut where_in_row = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in start..end {
                where_in_row[lu.col_idx[k]] = k;
            }
            for k in start..end {
                let j = lu.col_idx[k];
                if j >= i {
                    break;
                }
                let pivot = lu.values[diag_pos[j]];
                if pivot.modulus() == 0.0 {
                    return Err(Error::PivotBreakdown { row: j });
                }
                let factor = lu.values[k] / pivot;
                lu.values[k] = factor;
                for kk in diag_pos[j] + 1..lu.row_ptr[j + 1] {
                    let pos = where_in_row[lu.col_idx[kk]];
                    if pos != usize::MAX {
                        let v = lu.values[kk];
                        lu.values[pos] -= factor * v;
                    }
                }
            }
            for k in start..end {
                where_in_row[lu.col_idx[k]] = usize::MAX;
            }
        }
        Ok(Self { lu, diag_pos })
    }

    pub fn apply(&self, r: &[T], out: &mut [T]) {
        let lu = &self.lu;
        let n = lu.nrows;
        for i in 0..n {
            let mut acc = r[i];
            for k in lu.row_ptr[i]..self.diag_pos[i] {
                acc -= lu.values[k] * out[lu.col_idx[k]];
            }
            out[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = out[i];
            for k in self.diag_pos[i] + 1..lu.row_ptr[i + 1] {
                acc -= lu.values[k] * out[lu.col_idx[k]];
            }
            out[i] = acc / lu.values[self.diag_pos[i]];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            max_iter: 2000,
        }
    }
}

/// Right-preconditioned BiCGSTAB. Returns the solution and the relative
/// residual history; fails with the history if `rel_tol` is not reached.
pub fn bicgstab<T: Scalar>(
    a: &CsrMatrix<T>,
    precond: &Ilu0<T>,
    b: &[T],
    x0: Option<&[T]>,
    opts: IterativeOptions,
) -> Result<(Vec<T>, Vec<f64>)> {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = x0.map(<[T]>::to_vec).unwrap_or_else(|| vec![T::ZERO; n]);
    if bnorm == 0.0 {
        return Ok((vec![T::ZERO; n], vec![0.0]));
    }
    let mut r = a.mul_vec(&x);
    for (ri, &bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut history = vec![norm2(&r) / bnorm];
    if history[0] <= opts.rel_tol {
        return Ok((x, history));
    }
    let r_hat = r.clone();
    let mut p = vec![T::ZERO; n];
    let mut v = vec![T::ZERO; n];
    let mut p_hat = vec![T::ZERO; n];
    let mut s_hat = vec![T::ZERO; n];
    let mut t = vec![T::ZERO; n];
    let (mut rho, mut alpha, mut omega) = (T::ONE, T::ONE, T::ONE);
    for _ in 0..opts.max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.modulus() == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond.apply(&p, &mut p_hat);
        a.mul_vec_into(&p_hat, &mut v);
        alpha = rho / dot(&r_hat, &v);
        let mut s = r.clone();
        for i in 0..n {
            s[i] -= alpha * v[i];
        }
        let snorm = norm2(&s) / bnorm;
        if snorm <= opts.rel_tol {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            history.push(snorm);
            return Ok((x, history));
        }
        precond.apply(&s, &mut s_hat);
        a.mul_vec_into(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt.modulus() == 0.0 {
            break;
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        let rnorm = norm2(&r) / bnorm;
        history.push(rnorm);
        if rnorm <= opts.rel_tol {
            return Ok((x, history));
        }
        if omega.modulus() == 0.0 {
            break;
        }
    }
    Err(Error::NotConverged { history })
}
