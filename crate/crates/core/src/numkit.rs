//! Dense linear algebra used throughout the crate.
//!
//! Matrices are `nalgebra` dynamic matrices over `f64` or `Complex64`; the
//! scalar kind is carried by the type, so a real matrix never has an
//! imaginary part. This module adds the pieces `nalgebra` lacks: ordered
//! eigenpairs of general matrices, the real/complex block identification and
//! the disk Sylvester solve.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

pub type RMat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;
pub type RVec = DVector<f64>;
pub type CVec = DVector<Complex64>;

/// Relative threshold on `sigma_min / sigma_max` below which a matrix is
/// treated as singular.
pub const SINGULAR_REL_TOL: f64 = 1e-12;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Eigenvalues and unit eigenvectors of a square matrix.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Sorted by imaginary part descending, then real part ascending.
    pub eigenvalues: Vec<Complex64>,
    /// Columns match `eigenvalues`.
    pub eigenvectors: CMat,
    /// Condition number of the eigenvector matrix (infinite if singular).
    pub condition: f64,
}

pub fn to_complex(m: &RMat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn to_complex_vec(v: &RVec) -> CVec {
    v.map(|x| Complex64::new(x, 0.0))
}

fn check_square<T>(m: &DMatrix<T>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(())
}

fn ordering(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    b.im.total_cmp(&a.im).then(a.re.total_cmp(&b.re))
}

/// Eigenvalues only, in the same order as [`spectrum`].
pub fn eigenvalues(m: &CMat) -> Result<Vec<Complex64>> {
    check_square(m)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let (_, t) = schur(m)?;
    let mut ev: Vec<Complex64> = (0..t.nrows()).map(|i| t[(i, i)]).collect();
    ev.sort_by(ordering);
    Ok(ev)
}

pub fn eigenvalues_real(m: &RMat) -> Result<Vec<Complex64>> {
    eigenvalues(&to_complex(m))
}

fn schur(m: &CMat) -> Result<(CMat, CMat)> {
    let n = m.nrows();
    let decomposition = m
        .clone()
        .try_schur(f64::EPSILON, 200 * n.max(1))
        .ok_or(Error::NoConvergence)?;
    let (q, mut t) = decomposition.unpack();
    let scale = t.norm().max(f64::MIN_POSITIVE);
    for j in 0..n {
        for i in j + 1..n {
            if t[(i, j)].norm() > 1e-10 * scale {
                return Err(Error::NoConvergence);
            }
            t[(i, j)] = Complex64::new(0.0, 0.0);
        }
    }
    Ok((q, t))
}

/// Full eigendecomposition of a complex square matrix.
///
/// Eigenvectors come from back substitution on the triangular Schur factor.
/// Each is scaled to unit norm with its largest-modulus coordinate real and
/// positive.
pub fn spectrum(m: &CMat) -> Result<Spectrum> {
    check_square(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(Spectrum { eigenvalues: vec![], eigenvectors: CMat::zeros(0, 0), condition: 1.0 });
    }
    let (q, t) = schur(m)?;
    let small = f64::EPSILON * t.norm().max(f64::MIN_POSITIVE);
    let mut pairs: Vec<(Complex64, CVec)> = Vec::with_capacity(n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let mut y = CVec::zeros(n);
        y[k] = Complex64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut acc = Complex64::new(0.0, 0.0);
            for l in j + 1..=k {
                acc += t[(j, l)] * y[l];
            }
            let mut d = t[(j, j)] - lambda;
            if d.norm() < small {
                d = Complex64::new(small, 0.0);
            }
            y[j] = -acc / d;
        }
        let mut x = &q * y;
        canonical_phase(&mut x);
        pairs.push((lambda, x));
    }
    pairs.sort_by(|a, b| ordering(&a.0, &b.0));
    let eigenvalues: Vec<Complex64> = pairs.iter().map(|p| p.0).collect();
    let cols: Vec<CVec> = pairs.into_iter().map(|p| p.1).collect();
    let eigenvectors = CMat::from_columns(&cols);
    let sv = eigenvectors.clone().singular_values();
    let smin = sv.min();
    let condition = if smin > 0.0 { sv.max() / smin } else { f64::INFINITY };
    Ok(Spectrum { eigenvalues, eigenvectors, condition })
}

pub fn spectrum_real(m: &RMat) -> Result<Spectrum> {
    spectrum(&to_complex(m))
}

/// Unit norm, largest-modulus coordinate real positive.
pub fn canonical_phase(x: &mut CVec) {
    let norm = x.norm();
    if norm == 0.0 {
        return;
    }
    let mut best = 0;
    for i in 1..x.len() {
        if x[i].norm() > x[best].norm() * (1.0 + 1e-12) {
            best = i;
        }
    }
    let phase = x[best].conj() / x[best].norm();
    *x *= phase / Complex64::new(norm, 0.0);
}

pub fn singular_values<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> RVec {
    if a.nrows() == 0 || a.ncols() == 0 {
        return RVec::zeros(0);
    }
    a.clone().singular_values()
}

pub fn sigma_min<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> f64 {
    let sv = singular_values(a);
    if sv.is_empty() {
        0.0
    } else {
        sv.min()
    }
}

/// Solves `A X = B`, refusing matrices singular to the relative tolerance.
pub fn solve_linear<T: ComplexField<RealField = f64>>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_square(a)?;
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!("A is {}x{}, B has {} rows", a.nrows(), a.ncols(), b.nrows())));
    }
    if a.nrows() == 0 {
        return Ok(b.clone());
    }
    let sv = a.clone().singular_values();
    let (smin, smax) = (sv.min(), sv.max());
    if !(smin > SINGULAR_REL_TOL * smax) {
        return Err(Error::Singular { sigma_min: smin, norm: smax });
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or(Error::Singular { sigma_min: smin, norm: smax })
}

/// Inverse with the same singularity guard as [`solve_linear`].
pub fn inverse<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    solve_linear(a, &DMatrix::identity(a.nrows(), a.nrows()))
}

/// LU solve without the SVD guard, for hot loops where the caller knows the
/// system is well posed. Fails only on an exactly singular pivot.
pub fn lu_solve<T: ComplexField<RealField = f64>>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    a.clone().lu().solve(b).ok_or(Error::Singular { sigma_min: 0.0, norm: a.norm() })
}

pub fn lu_inverse<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    a.clone().try_inverse().ok_or(Error::Singular { sigma_min: 0.0, norm: a.norm() })
}

/// Block-diagonal complex structure `J₀` on `R^{2m}`: each 2×2 block is
/// `[[0,-1],[1,0]]`, so `J₀ e_{2k} = e_{2k+1}`.
pub fn j0(m: usize) -> RMat {
    let mut j = RMat::zeros(2 * m, 2 * m);
    for k in 0..m {
        j[(2 * k + 1, 2 * k)] = 1.0;
        j[(2 * k, 2 * k + 1)] = -1.0;
    }
    j
}

/// Real `2m×2m` matrix commuting with `J₀` to the complex `m×m` matrix whose
/// `(p,q)` entry is `a + b i` for the block `[[a,-b],[b,a]]`.
///
/// `tol` bounds the allowed deviation from that block form, relative to the
/// matrix norm.
pub fn complexify_block(r: &RMat, tol: f64) -> Result<CMat> {
    if r.nrows() != r.ncols() || !r.nrows().is_multiple_of(2) {
        return Err(Error::Dimension(format!("expected an even square matrix, got {}x{}", r.nrows(), r.ncols())));
    }
    let m = r.nrows() / 2;
    let scale = r.norm().max(1.0);
    let mut c = CMat::zeros(m, m);
    for p in 0..m {
        for q in 0..m {
            let (a, b) = (r[(2 * p, 2 * q)], r[(2 * p + 1, 2 * q)]);
            let (mb, d) = (r[(2 * p, 2 * q + 1)], r[(2 * p + 1, 2 * q + 1)]);
            let residual = ((a - d).powi(2) + (b + mb).powi(2)).sqrt();
            if residual > tol * scale {
                return Err(Error::NotComplexLinear { row: p, col: q, residual });
            }
            c[(p, q)] = Complex64::new(0.5 * (a + d), 0.5 * (b - mb));
        }
    }
    Ok(c)
}

/// Inverse of [`complexify_block`].
pub fn realify_block(c: &CMat) -> RMat {
    let (rows, cols) = c.shape();
    let mut r = RMat::zeros(2 * rows, 2 * cols);
    for p in 0..rows {
        for q in 0..cols {
            let z = c[(p, q)];
            r[(2 * p, 2 * q)] = z.re;
            r[(2 * p + 1, 2 * q + 1)] = z.re;
            r[(2 * p + 1, 2 * q)] = z.im;
            r[(2 * p, 2 * q + 1)] = -z.im;
        }
    }
    r
}

/// Real vector `(x_0, x_1, …)` to complex `(x_0 + i x_1, …)`.
pub fn complexify_vec(x: &RVec) -> CVec {
    CVec::from_fn(x.len() / 2, |k, _| Complex64::new(x[2 * k], x[2 * k + 1]))
}

pub fn realify_vec(z: &CVec) -> RVec {
    RVec::from_fn(2 * z.len(), |k, _| if k % 2 == 0 { z[k / 2].re } else { z[k / 2].im })
}

pub fn spectral_radius(m: &CMat) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Solves `M − s·M·s̄ = B` where `s̄` is the entrywise conjugate of `s`.
///
/// Uses one dense solve of the vectorized `n²` system
/// `(I − s̄ᵀ ⊗ s) vec(M) = vec(B)`.
pub fn solve_disk_sylvester(s: &CMat, b: &CMat, margin: f64) -> Result<CMat> {
    check_square(s)?;
    let n = s.nrows();
    if b.shape() != (n, n) {
        return Err(Error::Dimension(format!("B must be {n}x{n}")));
    }
    let radius = spectral_radius(s)?;
    if radius >= 1.0 - margin {
        return Err(Error::SpectralRadius { radius, margin });
    }
    let sbar_t = s.map(|z| z.conj()).transpose();
    let kron = sbar_t.kronecker(s);
    let op = CMat::identity(n * n, n * n) - kron;
    let rhs = CMat::from_column_slice(n * n, 1, b.as_slice());
    let x = solve_linear(&op, &rhs)?;
    Ok(CMat::from_column_slice(n, n, x.as_slice()))
}

/// Determinant scaled to 1 by a positive factor; fails on nonpositive
/// determinant.
pub fn unimodular_scale(g: &RMat) -> Result<RMat> {
    let det = g.determinant();
    if !(det > 0.0) {
        return Err(Error::Orientation(format!("determinant {det} is not positive")));
    }
    Ok(g * det.powf(-1.0 / g.nrows() as f64))
}
