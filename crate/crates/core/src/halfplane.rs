//! Endomorphisms without real eigenvalues and the matrix half-plane/disk
//! geometry built on them.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;

use crate::numkit::{self, CMat, RMat, I};
use crate::{Error, Result};

/// Default margin keeping eigenvalues off the real axis.
pub const TOL_ELL: f64 = 1e-8;

/// Real even-dimensional matrix with no real eigenvalues.
#[derive(Debug, Clone)]
pub struct NonRealEndo {
    matrix: RMat,
    eigenvalues: Vec<Complex64>,
    imag_margin: f64,
}

impl NonRealEndo {
    pub fn new(matrix: RMat) -> Result<Self> {
        Self::with_tol(matrix, TOL_ELL)
    }

    pub fn with_tol(matrix: RMat, tol: f64) -> Result<Self> {
        let eigenvalues = numkit::eigenvalues_real(&matrix)?;
        let worst = eigenvalues
            .iter()
            .copied()
            .min_by(|a, b| a.im.abs().total_cmp(&b.im.abs()));
        let imag_margin = worst.map_or(f64::INFINITY, |z| z.im.abs());
        if let Some(lambda) = worst {
            if !(imag_margin > tol) {
                return Err(Error::NearRealEigenvalue { lambda, tol });
            }
        }
        Ok(Self { matrix, eigenvalues, imag_margin })
    }

    pub fn matrix(&self) -> &RMat {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    pub fn imag_margin(&self) -> f64 {
        self.imag_margin
    }
}

/// Complex square matrix with spectrum strictly inside the unit disk.
#[derive(Debug, Clone)]
pub struct DiskMatrix {
    matrix: CMat,
    radius_margin: f64,
}

impl DiskMatrix {
    pub fn new(matrix: CMat) -> Result<Self> {
        let radius = numkit::spectral_radius(&matrix)?;
        if !(radius < 1.0) {
            return Err(Error::SpectralRadius { radius, margin: 0.0 });
        }
        Ok(Self { matrix, radius_margin: 1.0 - radius })
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn radius_margin(&self) -> f64 {
        self.radius_margin
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }
}

/// Element of the two-parameter group of disk automorphisms used for the
/// trace normalization. Conjugate under the Cayley map to the upper
/// half-plane map `z ↦ a²z + ab`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoebiusN {
    pub a: f64,
    pub b: f64,
}

impl MoebiusN {
    pub const IDENTITY: MoebiusN = MoebiusN { a: 1.0, b: 0.0 };

    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) || !b.is_finite() || !a.is_finite() {
            return Err(Error::Invalid(format!("group element needs a > 0, got a = {a}, b = {b}")));
        }
        Ok(Self { a, b })
    }

    pub fn from_log(alpha: f64, b: f64) -> Self {
        Self { a: alpha.exp(), b }
    }

    pub fn log_a(&self) -> f64 {
        self.a.ln()
    }

    pub fn matrix(&self) -> CMat {
        let (a, b) = (self.a, self.b);
        let p = a + 1.0 / a;
        let q = a - 1.0 / a;
        CMat::from_row_slice(
            2,
            2,
            &[
                Complex64::new(p, b),
                Complex64::new(b, q),
                Complex64::new(b, -q),
                Complex64::new(p, -b),
            ],
        )
    }

    /// Action on a scalar of the disk.
    pub fn apply_scalar(&self, z: Complex64) -> Complex64 {
        let g = self.matrix();
        (g[(0, 0)] * z + g[(0, 1)]) / (g[(1, 0)] * z + g[(1, 1)])
    }
}

/// Canonical complex structure of `T`: `+i` on the sum of eigenspaces with
/// positive imaginary part, `−i` on the conjugate sum.
///
/// Computed as the limit of `Y ← ½(Y − Y⁻¹)` from `Y = T`, which is the
/// matrix sign iteration for `−iT` written in real arithmetic. It is smooth
/// in `T` and indifferent to repeated eigenvalues.
pub fn complex_structure_of(t: &NonRealEndo) -> Result<RMat> {
    let n = t.matrix.nrows();
    let mut y = t.matrix.clone();
    let mut scaled = true;
    for _ in 0..100 {
        let y_inv = numkit::lu_inverse(&y)?;
        let mu = if scaled {
            let det = y.determinant().abs();
            if det > 0.0 && det.is_finite() {
                det.powf(-1.0 / n as f64)
            } else {
                1.0
            }
        } else {
            1.0
        };
        let next = (&y * mu - y_inv / mu) * 0.5;
        let change = (&next - &y).norm();
        y = next;
        if change < 1e-2 * y.norm() {
            scaled = false;
        }
        if change <= 1e-15 * y.norm() {
            break;
        }
    }
    let residual = (&y * &y + RMat::identity(n, n)).norm();
    if residual > 1e-10 * (n as f64).sqrt().max(1.0) * y.norm().max(1.0) {
        return Err(Error::NotComplexStructure { residual });
    }
    Ok(y)
}

/// Convenience wrapper checking the margin with [`TOL_ELL`].
pub fn complex_structure_of_matrix(t: &RMat) -> Result<RMat> {
    complex_structure_of(&NonRealEndo::new(t.clone())?)
}

/// Cayley map `s = (i t + I)(t + i I)⁻¹`, sending spectra in the upper
/// half-plane to the unit disk.
pub fn cayley_matrix(t: &CMat) -> Result<DiskMatrix> {
    cayley_matrix_with_tol(t, TOL_ELL)
}

pub fn cayley_matrix_with_tol(t: &CMat, tol: f64) -> Result<DiskMatrix> {
    let ev = numkit::eigenvalues(t)?;
    if let Some(bad) = ev.iter().find(|z| !(z.im > tol)) {
        return Err(Error::NearRealEigenvalue { lambda: *bad, tol });
    }
    let n = t.nrows();
    let id = CMat::identity(n, n);
    let num = t * I + &id;
    let den = t + &id * I;
    let s = num * numkit::lu_inverse(&den)?;
    DiskMatrix::new(s)
}

/// Inverse Cayley map `t = (s − i I)⁻¹(I − i s)`.
pub fn inverse_cayley(s: &CMat) -> Result<CMat> {
    let n = s.nrows();
    let id = CMat::identity(n, n);
    let den = s - &id * I;
    numkit::solve_linear(&den, &(&id - s * I))
}

/// `(a M + b I)(c M + d I)⁻¹` for `g = [[a,b],[c,d]]`.
pub fn lft_apply(g: &CMat, m: &CMat) -> Result<CMat> {
    if g.shape() != (2, 2) {
        return Err(Error::Dimension("fractional map must be 2x2".into()));
    }
    let n = m.nrows();
    let id = CMat::identity(n, n);
    let num = m * g[(0, 0)] + &id * g[(0, 1)];
    let den = m * g[(1, 0)] + &id * g[(1, 1)];
    let sv = numkit::singular_values(&den);
    let smin = sv.min();
    if !(smin > numkit::SINGULAR_REL_TOL * sv.max().max(1.0)) {
        return Err(Error::Pole { sigma_min: smin });
    }
    Ok(num * numkit::lu_inverse(&den)?)
}

fn evolve_core<T: ComplexField<RealField = f64>>(t0: &DMatrix<T>, theta: f64) -> Result<DMatrix<T>> {
    let n = t0.nrows();
    let (c, s) = (T::from_real(theta.cos()), T::from_real(theta.sin()));
    let id = DMatrix::<T>::identity(n, n);
    let num = t0 * c.clone() - &id * s.clone();
    let den = &id * c + t0 * s;
    Ok(num * numkit::lu_inverse(&den)?)
}

/// Transport of the tangent invariant around a fiber:
/// `t(θ) = (cos θ·t₀ − sin θ)(cos θ + sin θ·t₀)⁻¹`, the solution of
/// `dt/dθ = −(I + t²)` with `t(0) = t₀`.
///
/// This equals `(t₀ − tan θ)(I + tan θ·t₀)⁻¹` wherever `tan θ` is finite and
/// stays finite through `θ = π/2 + kπ`.
pub fn evolve_t(t0: &NonRealEndo, theta: f64) -> Result<RMat> {
    evolve_core(&t0.matrix, theta)
}

/// Complex-matrix variant of [`evolve_t`]; `t₀` must have no real eigenvalue.
pub fn evolve_t_complex(t0: &CMat, theta: f64) -> Result<CMat> {
    let ev = numkit::eigenvalues(t0)?;
    if let Some(bad) = ev.iter().find(|z| !(z.im.abs() > TOL_ELL)) {
        return Err(Error::NearRealEigenvalue { lambda: *bad, tol: TOL_ELL });
    }
    evolve_core(t0, theta)
}

/// Trace of `g(s)` for `g = MoebiusN(e^α, b)` and its real 2×2 Jacobian in
/// `(α, b)` (rows: real and imaginary part).
pub fn trace_and_jacobian(s: &CMat, alpha: f64, b: f64) -> Result<(Complex64, [[f64; 2]; 2])> {
    let n = s.nrows();
    let a = alpha.exp();
    let g = MoebiusN { a, b }.matrix();
    let id = CMat::identity(n, n);
    let num = s * g[(0, 0)] + &id * g[(0, 1)];
    let den = s * g[(1, 0)] + &id * g[(1, 1)];
    let den_inv = numkit::lu_inverse(&den)?;
    let x = &num * &den_inv;
    // derivatives of the entries with respect to α (= a ∂/∂a) and b
    let da = [
        Complex64::new(a - 1.0 / a, 0.0),
        Complex64::new(0.0, a + 1.0 / a),
        Complex64::new(0.0, -(a + 1.0 / a)),
        Complex64::new(a - 1.0 / a, 0.0),
    ];
    let db = [I, Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0), -I];
    let mut jac = [[0.0; 2]; 2];
    for (col, d) in [da, db].iter().enumerate() {
        let dnum = s * d[0] + &id * d[1];
        let dden = s * d[2] + &id * d[3];
        let dx = (dnum - &x * dden) * &den_inv;
        let tr = dx.trace();
        jac[0][col] = tr.re;
        jac[1][col] = tr.im;
    }
    Ok((x.trace(), jac))
}

fn newton_trace(s: &CMat, start: (f64, f64)) -> std::result::Result<(f64, f64), f64> {
    let (mut alpha, mut b) = start;
    let mut last = f64::INFINITY;
    let mut converged = false;
    for _ in 0..50 {
        let Ok((f, j)) = trace_and_jacobian(s, alpha, b) else {
            return Err(last);
        };
        last = f.norm();
        if !last.is_finite() {
            return Err(last);
        }
        if (converged || last < 1e-15 * (s.nrows() as f64).max(1.0)) && last < 1e-12 {
            return Ok((alpha, b));
        }
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-300 {
            return Err(last);
        }
        let mut da = -(j[1][1] * f.re - j[0][1] * f.im) / det;
        let mut dbv = -(-j[1][0] * f.re + j[0][0] * f.im) / det;
        let step = da.hypot(dbv);
        if step > 1.0 {
            da /= step;
            dbv /= step;
        }
        alpha += da;
        b += dbv;
        if step < 1e-15 * (1.0 + alpha.abs() + b.abs()) {
            converged = true;
        }
    }
    match trace_and_jacobian(s, alpha, b) {
        Ok((f, _)) if f.norm() < 1e-12 => Ok((alpha, b)),
        Ok((f, _)) => Err(f.norm()),
        Err(_) => Err(last),
    }
}

/// Jacobian determinant of `g ↦ trace(g(s))` with the group oriented as the
/// upper half-plane through `g ↦ ab + i a²`, which reverses the `(log a, b)`
/// orientation.
pub fn trace_jacobian_det(s: &CMat, g: MoebiusN) -> Result<f64> {
    let (_, j) = trace_and_jacobian(s, g.log_a(), g.b)?;
    Ok(j[0][1] * j[1][0] - j[0][0] * j[1][1])
}

/// The unique element `g` of the group with `trace(g(s)) = 0`.
pub fn normalize_trace_zero(s: &DiskMatrix) -> Result<(MoebiusN, DiskMatrix)> {
    normalize_trace_zero_from(s, (0.0, 0.0))
}

/// As [`normalize_trace_zero`], starting Newton at `(log a, b) = start`.
pub fn normalize_trace_zero_from(s: &DiskMatrix, start: (f64, f64)) -> Result<(MoebiusN, DiskMatrix)> {
    let m = s.matrix();
    let solution = match newton_trace(m, start) {
        Ok(x) => x,
        Err(_) => {
            let mut x = (0.0, 0.0);
            let mut residual = f64::INFINITY;
            for k in 1..=10 {
                let tau = k as f64 / 10.0;
                let scaled = m * Complex64::new(tau, 0.0);
                match newton_trace(&scaled, x) {
                    Ok(next) => x = next,
                    Err(r) => {
                        residual = r;
                        x = (f64::NAN, f64::NAN);
                        break;
                    }
                }
            }
            if x.0.is_nan() {
                return Err(Error::TraceNormalization { residual });
            }
            x
        }
    };
    let g = MoebiusN::from_log(solution.0, solution.1);
    let normalized = lft_apply(&g.matrix(), m)?;
    Ok((g, DiskMatrix::new(normalized)?))
}
