//! Small dense complex matrices with the factorizations the metric layer needs.
//!
//! Row-major storage, no panic-free pretensions: shape mismatches are bugs and
//! assert. Sizes here are tiny (representation dimensions and chart
//! dimensions), so the kernels are plain textbook loops: LU with partial
//! pivoting, lower Cholesky with positive real diagonal, and cyclic complex
//! Jacobi for Hermitian eigenvalues.

use std::ops::{Index, IndexMut};

use thiserror::Error;

use crate::scalar::{rc, CVec, Real, C};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinAlgError {
    #[error("matrix is numerically singular (pivot {pivot:e})")]
    Singular { pivot: f64 },
    #[error("matrix is not positive-definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { pivot: f64, index: usize },
}

/// Dense complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct Mat<R: Real> {
    rows: usize,
    cols: usize,
    data: Vec<C<R>>,
}

impl<R: Real> std::fmt::Debug for Mat<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl<R: Real> Index<(usize, usize)> for Mat<R> {
    type Output = C<R>;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C<R> {
        &self.data[i * self.cols + j]
    }
}

impl<R: Real> IndexMut<(usize, usize)> for Mat<R> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C<R> {
        &mut self.data[i * self.cols + j]
    }
}

impl<R: Real> Mat<R> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![C::new(R::zero(), R::zero()); rows * cols],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C::new(R::one(), R::zero());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C<R>) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds from rows of `f64` real entries (test/fixture convenience).
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        Mat::from_fn(r, c, |i, j| C::new(rc(rows[i][j]), R::zero()))
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

    pub fn data(&self) -> &[C<R>] {
        &self.data
    }

    pub fn mul(&self, other: &Mat<R>) -> Mat<R> {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik.re == R::zero() && aik.im == R::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[C<R>]) -> CVec<R> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        let mut out = vec![C::new(R::zero(), R::zero()); self.rows];
        for i in 0..self.rows {
            let mut acc = C::new(R::zero(), R::zero());
            for k in 0..self.cols {
                acc += self[(i, k)] * v[k];
            }
            out[i] = acc;
        }
        out
    }

    pub fn add(&self, other: &Mat<R>) -> Mat<R> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        out
    }

    pub fn sub(&self, other: &Mat<R>) -> Mat<R> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= *b;
        }
        out
    }

    pub fn add_assign(&mut self, other: &Mat<R>) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&self, s: C<R>) -> Mat<R> {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= s;
        }
        out
    }

    pub fn scale_re(&self, s: R) -> Mat<R> {
        self.scale(C::new(s, R::zero()))
    }

    pub fn neg(&self) -> Mat<R> {
        self.scale_re(-R::one())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Mat<R> {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    /// Plain transpose (no conjugation).
    pub fn transpose(&self) -> Mat<R> {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Outer product `u v^H`.
    pub fn outer(u: &[C<R>], v: &[C<R>]) -> Mat<R> {
        Mat::from_fn(u.len(), v.len(), |i, j| u[i] * v[j].conj())
    }

    /// Horizontal concatenation.
    pub fn hcat(blocks: &[&Mat<R>]) -> Mat<R> {
        assert!(!blocks.is_empty());
        let rows = blocks[0].rows;
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for b in blocks {
            assert_eq!(b.rows, rows, "hcat row mismatch");
            for i in 0..rows {
                for j in 0..b.cols {
                    out[(i, off + j)] = b[(i, j)];
                }
            }
            off += b.cols;
        }
        out
    }

    /// Columns `lo..hi` as a new matrix.
    pub fn col_block(&self, lo: usize, hi: usize) -> Mat<R> {
        assert!(lo <= hi && hi <= self.cols);
        Mat::from_fn(self.rows, hi - lo, |i, j| self[(i, lo + j)])
    }

    pub fn set_col_block(&mut self, lo: usize, block: &Mat<R>) {
        assert_eq!(self.rows, block.rows);
        assert!(lo + block.cols <= self.cols);
        for i in 0..self.rows {
            for j in 0..block.cols {
                self[(i, lo + j)] = block[(i, j)];
            }
        }
    }

    pub fn max_abs(&self) -> R {
        self.data.iter().map(|z| z.norm()).fold(R::zero(), R::max)
    }

    pub fn fro_norm(&self) -> R {
        self.data
            .iter()
            .map(|z| z.norm_sqr())
            .fold(R::zero(), |a, b| a + b)
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Mat<R>) -> R {
        self.sub(other).max_abs()
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest imaginary-part magnitude (real-locus checks).
    pub fn max_imag(&self) -> R {
        self.data.iter().map(|z| z.im.abs()).fold(R::zero(), R::max)
    }

    /// Hermitian part `(A + A^H)/2`.
    pub fn hermitize(&self) -> Mat<R> {
        assert!(self.is_square());
        let half = rc::<R>(0.5);
        Mat::from_fn(self.rows, self.cols, |i, j| {
            (self[(i, j)] + self[(j, i)].conj()) * C::new(half, R::zero())
        })
    }

    pub fn trace(&self) -> C<R> {
        assert!(self.is_square());
        (0..self.rows).fold(C::new(R::zero(), R::zero()), |acc, i| acc + self[(i, i)])
    }

    // ---- factorizations -------------------------------------------------

    fn lu_factor(&self) -> Result<(Mat<R>, Vec<usize>, i32), LinAlgError> {
        assert!(self.is_square());
        let n = self.rows;
        let mut lu = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1i32;
        let scale = self.max_abs().max(R::one());
        let tiny = R::epsilon() * scale * rc::<R>(n as f64);
        for k in 0..n {
            // partial pivot
            let mut p = k;
            let mut best = lu[(k, k)].norm();
            for i in (k + 1)..n {
                let v = lu[(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= tiny {
                return Err(LinAlgError::Singular {
                    pivot: best.to_f64().unwrap_or(0.0),
                });
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let piv = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / piv;
                lu[(i, k)] = f;
                for j in (k + 1)..n {
                    let sub = f * lu[(k, j)];
                    lu[(i, j)] -= sub;
                }
            }
        }
        Ok((lu, perm, sign))
    }

    /// Solves `self * X = b` by LU with partial pivoting.
    pub fn solve(&self, b: &Mat<R>) -> Result<Mat<R>, LinAlgError> {
        assert_eq!(self.rows, b.rows);
        let n = self.rows;
        let (lu, perm, _) = self.lu_factor()?;
        let mut x = Mat::zeros(n, b.cols);
        for c in 0..b.cols {
            // apply permutation, forward, back
            let mut y = vec![C::new(R::zero(), R::zero()); n];
            for i in 0..n {
                let mut acc = b[(perm[i], c)];
                for j in 0..i {
                    acc -= lu[(i, j)] * y[j];
                }
                y[i] = acc;
            }
            for i in (0..n).rev() {
                let mut acc = y[i];
                for j in (i + 1)..n {
                    acc -= lu[(i, j)] * x[(j, c)];
                }
                x[(i, c)] = acc / lu[(i, i)];
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Mat<R>, LinAlgError> {
        self.solve(&Mat::eye(self.rows))
    }

    pub fn det(&self) -> C<R> {
        match self.lu_factor() {
            Err(_) => C::new(R::zero(), R::zero()),
            Ok((lu, _, sign)) => {
                let mut d = C::new(rc(sign as f64), R::zero());
                for i in 0..self.rows {
                    d *= lu[(i, i)];
                }
                d
            }
        }
    }

    /// Lower Cholesky factor with positive real diagonal; `L L^H = self`.
    ///
    /// Failure doubles as the positive-definiteness test for Hermitian input.
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN pivots must fail
    pub fn cholesky(&self) -> Result<Mat<R>, LinAlgError> {
        assert!(self.is_square());
        let n = self.rows;
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > R::zero()) || !d.is_finite() {
                return Err(LinAlgError::NotPositiveDefinite {
                    pivot: d.to_f64().unwrap_or(f64::NAN),
                    index: j,
                });
            }
            let dj = d.sqrt();
            l[(j, j)] = C::new(dj, R::zero());
            for i in (j + 1)..n {
                let mut acc = self[(i, j)];
                for k in 0..j {
                    acc -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = acc / C::new(dj, R::zero());
            }
        }
        Ok(l)
    }

    /// `log det` of a Hermitian positive-definite matrix, via Cholesky.
    pub fn log_det_hpd(&self) -> Result<R, LinAlgError> {
        let l = self.cholesky()?;
        let two = rc::<R>(2.0);
        let mut acc = R::zero();
        for i in 0..self.rows {
            acc += two * l[(i, i)].re.ln();
        }
        Ok(acc)
    }

    /// Solves `L X = b` for lower-triangular `L`.
    pub fn solve_lower(&self, b: &Mat<R>) -> Mat<R> {
        let n = self.rows;
        assert_eq!(n, b.rows);
        let mut x = Mat::zeros(n, b.cols);
        for c in 0..b.cols {
            for i in 0..n {
                let mut acc = b[(i, c)];
                for j in 0..i {
                    acc -= self[(i, j)] * x[(j, c)];
                }
                x[(i, c)] = acc / self[(i, i)];
            }
        }
        x
    }

    /// Solves `X L = b` for lower-triangular `L` (right division).
    pub fn solve_right_lower(b: &Mat<R>, l: &Mat<R>) -> Mat<R> {
        // X L = B  <=>  L^H X^H = B^H, and L^H is upper-triangular.
        let lh = l.adjoint();
        let bh = b.adjoint();
        let n = lh.rows;
        let mut xh = Mat::zeros(n, bh.cols);
        for c in 0..bh.cols {
            for i in (0..n).rev() {
                let mut acc = bh[(i, c)];
                for j in (i + 1)..n {
                    acc -= lh[(i, j)] * xh[(j, c)];
                }
                xh[(i, c)] = acc / lh[(i, i)];
            }
        }
        xh.adjoint()
    }

    /// Eigenvalues of a Hermitian matrix (ascending), cyclic complex Jacobi.
    pub fn herm_eigenvalues(&self) -> Vec<R> {
        assert!(self.is_square());
        let n = self.rows;
        if n == 0 {
            return vec![];
        }
        let mut a = self.hermitize();
        let fro = a.fro_norm().max(R::epsilon());
        let stop = fro * rc::<R>(1e-14) * rc::<R>(n as f64);
        for _sweep in 0..60 {
            let mut off = R::zero();
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)].norm_sqr();
                }
            }
            if off.sqrt() <= stop {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    let mag = apq.norm();
                    if mag <= fro * R::epsilon() {
                        continue;
                    }
                    let app = a[(p, p)].re;
                    let aqq = a[(q, q)].re;
                    let phase = apq / C::new(mag, R::zero());
                    let tau = (aqq - app) / (rc::<R>(2.0) * mag);
                    let t = if tau >= R::zero() {
                        R::one() / (tau + (R::one() + tau * tau).sqrt())
                    } else {
                        -R::one() / (-tau + (R::one() + tau * tau).sqrt())
                    };
                    let c = R::one() / (R::one() + t * t).sqrt();
                    let s = t * c;
                    let cc = C::new(c, R::zero());
                    let sc = C::new(s, R::zero());
                    // J[:,p] = (c, -s e^{-i phi}); J[:,q] = (s, c e^{-i phi}) on rows {p,q}
                    // A <- J^H A J applied as column then row updates.
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = akp * cc - akq * sc * phase.conj();
                        a[(k, q)] = akp * sc + akq * cc * phase.conj();
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = apk * cc - aqk * sc * phase;
                        a[(q, k)] = apk * sc + aqk * cc * phase;
                    }
                }
            }
        }
        let mut eigs: Vec<R> = (0..n).map(|i| a[(i, i)].re).collect();
        eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        eigs
    }

    pub fn min_herm_eigenvalue(&self) -> R {
        self.herm_eigenvalues()[0]
    }

    /// Singular values (descending), as square roots of `A^H A` eigenvalues.
    pub fn singular_values(&self) -> Vec<R> {
        let g = if self.rows >= self.cols {
            self.adjoint().mul(self)
        } else {
            self.mul(&self.adjoint())
        };
        let mut svs: Vec<R> = g
            .herm_eigenvalues()
            .into_iter()
            .map(|l| l.max(R::zero()).sqrt())
            .collect();
        svs.reverse();
        svs
    }

    /// Numerical rank: singular values above `rel_tol` times the largest.
    pub fn rank(&self, rel_tol: R) -> usize {
        let svs = self.singular_values();
        if svs.is_empty() {
            return 0;
        }
        let cut = svs[0] * rel_tol;
        svs.iter().filter(|&&s| s > cut).count()
    }

    /// Reciprocal condition number `sigma_min / sigma_max` (0 for empty).
    pub fn rcond(&self) -> R {
        let svs = self.singular_values();
        match (svs.first(), svs.last()) {
            (Some(&hi), Some(&lo)) if hi > R::zero() => lo / hi,
            _ => R::zero(),
        }
    }
}
