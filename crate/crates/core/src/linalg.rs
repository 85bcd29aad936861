//! Small dense linear algebra for desk-scale dimensions (d up to ~64).
//!
//! Vectors are plain slices. [`SymMatrix`] is a row-major symmetric matrix
//! with a Householder tridiagonalization + implicit QL eigensolver and a
//! Cholesky solver for positive definite systems.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    norm_sq(a).sqrt()
}

pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn add<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

pub fn scale<T: Scalar>(a: &[T], s: T) -> Vec<T> {
    a.iter().map(|&x| x * s).collect()
}

/// `y += a * x`
#[inline]
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

pub fn dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

pub fn unit<T: Scalar>(d: usize, i: usize) -> Vec<T> {
    let mut e = vec![T::zero(); d];
    e[i] = T::one();
    e
}

pub fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Dense symmetric matrix, stored row-major in full.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix<T> {
    n: usize,
    data: Vec<T>,
}

/// Eigen-decomposition with eigenvalues ascending; `vectors[k]` is the
/// unit eigenvector for `values[k]`.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: Vec<Vec<T>>,
}

impl<T: Scalar> SymMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    /// Builds from a closure; the upper triangle is mirrored to enforce symmetry.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Rows are symmetrized as `(A + Aᵀ)/2`.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let n = rows.len();
        let half = T::lit(0.5);
        Self::from_fn(n, |i, j| half * (rows[i][j] + rows[j][i]))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    /// `self += s * v vᵀ`
    pub fn add_outer(&mut self, s: T, v: &[T]) {
        for i in 0..self.n {
            let svi = s * v[i];
            for j in i..self.n {
                let x = self.data[i * self.n + j] + svi * v[j];
                self.data[i * self.n + j] = x;
                self.data[j * self.n + i] = x;
            }
        }
    }

    pub fn add_scaled(&mut self, s: T, other: &SymMatrix<T>) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + s * b;
        }
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| dot(&self.data[i * self.n..(i + 1) * self.n], v))
            .collect()
    }

    pub fn quad_form(&self, v: &[T]) -> T {
        dot(v, &self.mul_vec(v))
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Full symmetric eigen-decomposition (Householder tridiagonalization
    /// followed by implicit QL with Wilkinson-style shifts).
    pub fn eigen(&self) -> SymEigen<T> {
        let n = self.n;
        if n == 0 {
            return SymEigen {
                values: vec![],
                vectors: vec![],
            };
        }
        let mut v = self.rows();
        let mut d = vec![T::zero(); n];
        let mut e = vec![T::zero(); n];
        tridiagonalize(&mut v, &mut d, &mut e);
        ql_implicit(&mut v, &mut d, &mut e);

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap_or(std::cmp::Ordering::Equal));
        let values = order.iter().map(|&k| d[k]).collect();
        let vectors = order
            .iter()
            .map(|&k| (0..n).map(|i| v[i][k]).collect())
            .collect();
        SymEigen { values, vectors }
    }

    /// Smallest eigenvalue and a unit eigenvector for it.
    pub fn min_eigen(&self) -> (T, Vec<T>) {
        let eig = self.eigen();
        (eig.values[0], eig.vectors[0].clone())
    }

    /// Lower-triangular Cholesky factor, row-major. Fails unless positive definite.
    pub fn cholesky(&self) -> Result<Vec<Vec<T>>> {
        let n = self.n;
        let mut l = vec![vec![T::zero(); n]; n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s = s - l[i][k] * l[j][k];
                }
                if i == j {
                    if s <= T::zero() || !s.is_finite() {
                        return Err(Error::Numeric {
                            message: "matrix is not positive definite".into(),
                            iterate: vec![],
                        });
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        Ok(l)
    }

    /// Solves `self * x = b` for positive definite `self`.
    pub fn solve_pd(&self, b: &[T]) -> Result<Vec<T>> {
        let l = self.cholesky()?;
        Ok(cholesky_solve(&l, b))
    }
}

pub(crate) fn cholesky_solve<T: Scalar>(l: &[Vec<T>], b: &[T]) -> Vec<T> {
    let n = b.len();
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s = s - l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// Householder reduction to tridiagonal form. On return `v` holds the
/// accumulated orthogonal transform, `d` the diagonal and `e[1..]` the
/// sub-diagonal.
fn tridiagonalize<T: Scalar>(v: &mut [Vec<T>], d: &mut [T], e: &mut [T]) {
    let n = d.len();
    let zero = T::zero();
    d[..n].copy_from_slice(&v[n - 1][..n]);
    for i in (1..n).rev() {
        let mut scale = zero;
        let mut h = zero;
        for k in 0..i {
            scale = scale + d[k].abs();
        }
        if scale == zero {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = zero;
                v[j][i] = zero;
            }
        } else {
            for k in 0..i {
                d[k] = d[k] / scale;
                h = h + d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > zero {
                g = -g;
            }
            e[i] = scale * g;
            h = h - f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = zero;
            }
            for j in 0..i {
                f = d[j];
                v[j][i] = f;
                g = e[j] + v[j][j] * f;
                for k in j + 1..i {
                    g = g + v[k][j] * d[k];
                    e[k] = e[k] + v[k][j] * f;
                }
                e[j] = g;
            }
            f = zero;
            for j in 0..i {
                e[j] = e[j] / h;
                f = f + e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] = e[j] - hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[k][j] = v[k][j] - (f * e[k] + g * d[k]);
                }
                d[j] = v[i - 1][j];
                v[i][j] = zero;
            }
        }
        d[i] = h;
    }

    for i in 0..n.saturating_sub(1) {
        v[n - 1][i] = v[i][i];
        v[i][i] = T::one();
        let h = d[i + 1];
        if h != zero {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = zero;
                for k in 0..=i {
                    g = g + v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    v[k][j] = v[k][j] - g * d[k];
                }
            }
        }
        for row in v.iter_mut().take(i + 1) {
            row[i + 1] = zero;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = zero;
    }
    v[n - 1][n - 1] = T::one();
    e[0] = zero;
}

/// Implicit QL iterations on the tridiagonal `(d, e)`, accumulating into `v`.
fn ql_implicit<T: Scalar>(v: &mut [Vec<T>], d: &mut [T], e: &mut [T]) {
    let n = d.len();
    let zero = T::zero();
    let one = T::one();
    let two = T::lit(2.0);
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = zero;

    let mut f = zero;
    let mut tst1 = zero;
    let eps = T::epsilon();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(one);
                if p < zero {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di = *di - h;
                }
                f = f + h;

                p = d[m];
                let mut c = one;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = zero;
                let mut s2 = zero;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for row in v.iter_mut() {
                        h = row[i + 1];
                        row[i + 1] = s * row[i] + c * h;
                        row[i] = c * row[i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 || sweeps > 60 {
                    break;
                }
            }
        }
        d[l] = d[l] + f;
        e[l] = zero;
    }
}
