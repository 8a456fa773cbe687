//! Dense complex matrices of rank 1..=4 with the spectral calculus used
//! throughout the crate: Hermitian eigendecomposition, matrix functions
//! (exp/log/sqrt/powers), inverses and positivity tests.
//!
//! Fiber ranks are capped at 4, so matrices are stored inline and are `Copy`;
//! no heap traffic occurs in the flow inner loop.

use num_complex::Complex64;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// Largest supported fiber rank.
pub const MAX_RANK: usize = 4;

/// Tolerance for eigendecomposition reconstruction residuals.
pub const EIG_RESIDUAL_TOL: f64 = 1e-12;

pub type C64 = Complex64;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular (pivot {pivot:.3e} below tolerance)")]
    Singular { pivot: f64 },
    #[error("matrix is not positive definite (min eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { min_eig: f64 },
    #[error("Jacobi eigensolver did not converge (off-diagonal {off:.3e})")]
    EigenNoConvergence { off: f64 },
    #[error("non-finite entry encountered")]
    NonFinite,
    #[error("rank mismatch: {0} vs {1}")]
    RankMismatch(usize, usize),
}

/// A square complex matrix of rank `r <= 4`, stored row-major inline.
#[derive(Clone, Copy)]
pub struct Mat {
    r: usize,
    d: [C64; MAX_RANK * MAX_RANK],
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat(r={})", self.r)?;
        for i in 0..self.r {
            let row: Vec<String> = (0..self.r)
                .map(|j| format!("{:+.6e}{:+.6e}i", self[(i, j)].re, self[(i, j)].im))
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.d[i * self.r + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.d[i * self.r + j]
    }
}

impl Mat {
    pub fn zeros(r: usize) -> Self {
        assert!(r >= 1 && r <= MAX_RANK, "rank must be in 1..=4");
        Mat { r, d: [C64::new(0.0, 0.0); MAX_RANK * MAX_RANK] }
    }

    pub fn identity(r: usize) -> Self {
        let mut m = Mat::zeros(r);
        for i in 0..r {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn scalar(r: usize, z: C64) -> Self {
        let mut m = Mat::zeros(r);
        for i in 0..r {
            m[(i, i)] = z;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let r = rows.len();
        let mut m = Mat::zeros(r);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), r, "matrix must be square");
            for (j, &z) in row.iter().enumerate() {
                m[(i, j)] = z;
            }
        }
        m
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let mut m = Mat::zeros(r);
        for (i, row) in rows.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                m[(i, j)] = C64::new(x, 0.0);
            }
        }
        m
    }

    pub fn diag_real(v: &[f64]) -> Self {
        let mut m = Mat::zeros(v.len());
        for (i, &x) in v.iter().enumerate() {
            m[(i, i)] = C64::new(x, 0.0);
        }
        m
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn is_finite(&self) -> bool {
        self.d[..self.r * self.r].iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Mat {
        let mut m = Mat::zeros(self.r);
        for i in 0..self.r {
            for j in 0..self.r {
                m[(i, j)] = self[(j, i)].conj();
            }
        }
        m
    }

    pub fn transpose(&self) -> Mat {
        let mut m = Mat::zeros(self.r);
        for i in 0..self.r {
            for j in 0..self.r {
                m[(i, j)] = self[(j, i)];
            }
        }
        m
    }

    pub fn conj(&self) -> Mat {
        let mut m = *self;
        for z in m.d[..self.r * self.r].iter_mut() {
            *z = z.conj();
        }
        m
    }

    pub fn trace(&self) -> C64 {
        (0..self.r).map(|i| self[(i, i)]).fold(C64::new(0.0, 0.0), |a, b| a + b)
    }

    pub fn scale(&self, a: f64) -> Mat {
        let mut m = *self;
        for z in m.d[..self.r * self.r].iter_mut() {
            *z *= a;
        }
        m
    }

    pub fn scale_c(&self, a: C64) -> Mat {
        let mut m = *self;
        for z in m.d[..self.r * self.r].iter_mut() {
            *z *= a;
        }
        m
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.d[..self.r * self.r].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.d[..self.r * self.r].iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `1/2 (M + M^dagger)`.
    pub fn hermitize(&self) -> Mat {
        (*self + self.adjoint()).scale(0.5)
    }

    pub fn commutator(&self, other: &Mat) -> Mat {
        *self * *other - *other * *self
    }

    /// Gauss-Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Result<Mat, LinalgError> {
        let r = self.r;
        let mut a = *self;
        let mut inv = Mat::identity(r);
        let scale = self.max_abs().max(1e-300);
        for col in 0..r {
            let mut piv = col;
            let mut best = a[(col, col)].norm();
            for row in col + 1..r {
                let v = a[(row, col)].norm();
                if v > best {
                    best = v;
                    piv = row;
                }
            }
            if best <= 1e-14 * scale {
                return Err(LinalgError::Singular { pivot: best });
            }
            if piv != col {
                for j in 0..r {
                    let (x, y) = (a[(col, j)], a[(piv, j)]);
                    a[(col, j)] = y;
                    a[(piv, j)] = x;
                    let (x, y) = (inv[(col, j)], inv[(piv, j)]);
                    inv[(col, j)] = y;
                    inv[(piv, j)] = x;
                }
            }
            let p = a[(col, col)];
            for j in 0..r {
                a[(col, j)] /= p;
                inv[(col, j)] /= p;
            }
            for row in 0..r {
                if row == col {
                    continue;
                }
                let f = a[(row, col)];
                if f.norm_sqr() == 0.0 {
                    continue;
                }
                for j in 0..r {
                    let acj = a[(col, j)];
                    let icj = inv[(col, j)];
                    a[(row, j)] -= f * acj;
                    inv[(row, j)] -= f * icj;
                }
            }
        }
        Ok(inv)
    }

    pub fn determinant(&self) -> C64 {
        // LU with partial pivoting.
        let r = self.r;
        let mut a = *self;
        let mut det = C64::new(1.0, 0.0);
        for col in 0..r {
            let mut piv = col;
            let mut best = a[(col, col)].norm();
            for row in col + 1..r {
                let v = a[(row, col)].norm();
                if v > best {
                    best = v;
                    piv = row;
                }
            }
            if best == 0.0 {
                return C64::new(0.0, 0.0);
            }
            if piv != col {
                det = -det;
                for j in 0..r {
                    let (x, y) = (a[(col, j)], a[(piv, j)]);
                    a[(col, j)] = y;
                    a[(piv, j)] = x;
                }
            }
            det *= a[(col, col)];
            for row in col + 1..r {
                let f = a[(row, col)] / a[(col, col)];
                for j in col..r {
                    let acj = a[(col, j)];
                    a[(row, j)] -= f * acj;
                }
            }
        }
        det
    }

    /// Hermitian defect `|M - M^dagger|`.
    pub fn herm_defect(&self) -> f64 {
        (*self - self.adjoint()).norm()
    }

    /// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
    ///
    /// Returns eigenvalues in ascending order and the unitary `Q` whose
    /// columns are the corresponding eigenvectors, so `M = Q diag(w) Q^dagger`.
    /// The reconstruction residual is driven below `EIG_RESIDUAL_TOL * |M|`.
    pub fn eigh(&self) -> Result<([f64; MAX_RANK], Mat), LinalgError> {
        if !self.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let r = self.r;
        let mut a = self.hermitize();
        let mut q = Mat::identity(r);
        let scale = a.max_abs().max(1e-300);

        let off = |m: &Mat| -> f64 {
            let mut s = 0.0;
            for i in 0..r {
                for j in 0..r {
                    if i != j {
                        s = f64::max(s, m[(i, j)].norm());
                    }
                }
            }
            s
        };

        let mut sweeps = 0;
        while off(&a) > 1e-15 * scale {
            sweeps += 1;
            if sweeps > 60 {
                return Err(LinalgError::EigenNoConvergence { off: off(&a) });
            }
            for p in 0..r {
                for qq in p + 1..r {
                    let apq = a[(p, qq)];
                    if apq.norm() <= 1e-300 {
                        continue;
                    }
                    // Exact 2x2 Hermitian diagonalization of the (p,q) block.
                    let app = a[(p, p)].re;
                    let aqq = a[(qq, qq)].re;
                    let m = 0.5 * (app + aqq);
                    let delta = 0.5 * (app - aqq);
                    let rad = (delta * delta + apq.norm_sqr()).sqrt();
                    let lo = m - rad;
                    // Eigenvector for the low eigenvalue: (apq, lo - app),
                    // unless that degenerates; then (lo - aqq, conj(apq)).
                    let (u0, u1) = if (lo - app).abs() > (lo - aqq).abs() {
                        (apq, C64::new(lo - app, 0.0))
                    } else {
                        (C64::new(lo - aqq, 0.0), apq.conj())
                    };
                    let nrm = (u0.norm_sqr() + u1.norm_sqr()).sqrt();
                    if nrm <= 1e-300 {
                        continue;
                    }
                    let (c0, c1) = (u0 / nrm, u1 / nrm);
                    // Second column: orthogonal complement in the plane.
                    let (d0, d1) = (-c1.conj(), c0.conj());
                    // Apply J on the right (columns p,q of A and Q), J^dag on the left.
                    for i in 0..r {
                        let (x, y) = (a[(i, p)], a[(i, qq)]);
                        a[(i, p)] = x * c0 + y * c1;
                        a[(i, qq)] = x * d0 + y * d1;
                        let (x, y) = (q[(i, p)], q[(i, qq)]);
                        q[(i, p)] = x * c0 + y * c1;
                        q[(i, qq)] = x * d0 + y * d1;
                    }
                    for j in 0..r {
                        let (x, y) = (a[(p, j)], a[(qq, j)]);
                        a[(p, j)] = x * c0.conj() + y * c1.conj();
                        a[(qq, j)] = x * d0.conj() + y * d1.conj();
                    }
                    a[(p, qq)] = C64::new(0.0, 0.0);
                    a[(qq, p)] = C64::new(0.0, 0.0);
                }
            }
        }

        let mut w = [0.0f64; MAX_RANK];
        for i in 0..r {
            w[i] = a[(i, i)].re;
        }
        // Sort ascending, permuting the columns of Q alongside.
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap());
        let mut ws = [0.0f64; MAX_RANK];
        let mut qs = Mat::zeros(r);
        for (newc, &oldc) in order.iter().enumerate() {
            ws[newc] = w[oldc];
            for i in 0..r {
                qs[(i, newc)] = q[(i, oldc)];
            }
        }
        Ok((ws, qs))
    }

    /// Apply a real function to the spectrum of a Hermitian matrix.
    pub fn map_hermitian(&self, f: impl Fn(f64) -> f64) -> Result<Mat, LinalgError> {
        let (w, q) = self.eigh()?;
        let mut d = Mat::zeros(self.r);
        for i in 0..self.r {
            let v = f(w[i]);
            if !v.is_finite() {
                return Err(LinalgError::NonFinite);
            }
            d[(i, i)] = C64::new(v, 0.0);
        }
        Ok(q * d * q.adjoint())
    }

    pub fn exp_hermitian(&self) -> Result<Mat, LinalgError> {
        self.map_hermitian(f64::exp)
    }

    /// Logarithm of a Hermitian positive definite matrix.
    pub fn log_pd(&self) -> Result<Mat, LinalgError> {
        let (w, q) = self.eigh()?;
        if w[..self.r].iter().any(|&x| x <= 0.0) {
            return Err(LinalgError::NotPositiveDefinite { min_eig: w[0] });
        }
        let mut d = Mat::zeros(self.r);
        for i in 0..self.r {
            d[(i, i)] = C64::new(w[i].ln(), 0.0);
        }
        Ok(q * d * q.adjoint())
    }

    pub fn sqrt_pd(&self) -> Result<Mat, LinalgError> {
        self.pow_pd(0.5)
    }

    /// Real power of a Hermitian positive definite matrix.
    pub fn pow_pd(&self, t: f64) -> Result<Mat, LinalgError> {
        let (w, q) = self.eigh()?;
        if w[..self.r].iter().any(|&x| x <= 0.0) {
            return Err(LinalgError::NotPositiveDefinite { min_eig: w[0] });
        }
        let mut d = Mat::zeros(self.r);
        for i in 0..self.r {
            d[(i, i)] = C64::new(w[i].powf(t), 0.0);
        }
        Ok(q * d * q.adjoint())
    }

    /// Smallest eigenvalue of a Hermitian matrix.
    pub fn min_eig_hermitian(&self) -> Result<f64, LinalgError> {
        Ok(self.eigh()?.0[0])
    }

    /// Cheap positive-definiteness test for a Hermitian matrix (Cholesky).
    pub fn is_pd_hermitian(&self) -> bool {
        let r = self.r;
        let mut l = Mat::zeros(r);
        for i in 0..r {
            for j in 0..=i {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                if i == j {
                    if s.re <= 0.0 || !s.re.is_finite() {
                        return false;
                    }
                    l[(i, i)] = C64::new(s.re.sqrt(), 0.0);
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        true
    }
}

impl Add for Mat {
    type Output = Mat;
    fn add(self, o: Mat) -> Mat {
        debug_assert_eq!(self.r, o.r);
        let mut m = self;
        for k in 0..self.r * self.r {
            m.d[k] += o.d[k];
        }
        m
    }
}

impl Sub for Mat {
    type Output = Mat;
    fn sub(self, o: Mat) -> Mat {
        debug_assert_eq!(self.r, o.r);
        let mut m = self;
        for k in 0..self.r * self.r {
            m.d[k] -= o.d[k];
        }
        m
    }
}

impl Neg for Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

impl Mul for Mat {
    type Output = Mat;
    fn mul(self, o: Mat) -> Mat {
        debug_assert_eq!(self.r, o.r);
        let r = self.r;
        let mut m = Mat::zeros(r);
        for i in 0..r {
            for k in 0..r {
                let aik = self[(i, k)];
                if aik.norm_sqr() == 0.0 {
                    continue;
                }
                for j in 0..r {
                    m[(i, j)] += aik * o[(k, j)];
                }
            }
        }
        m
    }
}

/// `tr(A B^{*H}) = tr(A H^{-1} B^dagger H)`: the fiberwise Hermitian inner
/// product on endomorphisms induced by the metric `H`.
pub fn inner_h(a: &Mat, b: &Mat, h: &Mat, h_inv: &Mat) -> C64 {
    (*a * *h_inv * b.adjoint() * *h).trace()
}

/// Squared `H`-norm of an endomorphism, guaranteed real non-negative.
pub fn norm_sqr_h(a: &Mat, h: &Mat, h_inv: &Mat) -> f64 {
    inner_h(a, a, h, h_inv).re.max(0.0)
}

/// Deterministic pairwise-tree sum; the reduction order depends only on the
/// slice length, never on threading or chunk boundaries.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n if n <= 16 => {
            let mut s = 0.0;
            for &x in v {
                s += x;
            }
            s
        }
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}
