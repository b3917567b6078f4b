//! Tangent data of the base inside the Grassmannian of oriented 2-planes,
//! the t-invariant, ellipticity and Sato lines.

use num_complex::Complex64;

use crate::fibration::{plane_at, Fibration, LinearJ, NoiseClass, OrientedPlane};
use crate::numkit::{self, CVec, RMat, RVec};
use crate::{Error, Result};

/// Finite-difference step for plane-field derivatives, by noise class.
pub fn tangent_step(f: &Fibration) -> f64 {
    match f.noise_class() {
        NoiseClass::Exact | NoiseClass::Solved => 1e-4,
        NoiseClass::Nested => 2e-3,
    }
}

/// Fourth-order central difference of `g` at 0.
pub(crate) fn stencil<F>(h: f64, mut g: F) -> Result<RMat>
where
    F: FnMut(f64) -> Result<RMat>,
{
    let p2 = g(2.0 * h)?;
    let p1 = g(h)?;
    let m1 = g(-h)?;
    let m2 = g(-2.0 * h)?;
    Ok((p1 - m1) * (8.0 / (12.0 * h)) - (p2 - m2) * (1.0 / (12.0 * h)))
}

/// Unit vector `normalize(v + x·d)`.
pub(crate) fn shifted(v: &RVec, d: &RVec, x: f64) -> RVec {
    let p = v + d * x;
    let n = p.norm();
    p / n
}

/// Tangent directions of the base at `P`, as maps `P → P^⊥`.
#[derive(Debug, Clone)]
pub struct TangentBasis {
    pub plane: OrientedPlane,
    /// Orthonormal basis of `P^⊥` (columns), used for coordinates.
    pub complement: RMat,
    /// For each direction, the `d×2` matrix `[A u, A w]`.
    pub directions: Vec<RMat>,
    /// Complement coordinates of `A u` (columns, one per direction).
    pub u0: RMat,
    /// Complement coordinates of `A w`.
    pub u1: RMat,
}

impl TangentBasis {
    /// Smallest singular value of the stacked `[u0; u1]` system.
    pub fn independence(&self) -> f64 {
        let m = self.u0.nrows();
        let k = self.u0.ncols();
        if k == 0 {
            return f64::INFINITY;
        }
        let mut stacked = RMat::zeros(2 * m, k);
        stacked.view_mut((0, 0), (m, k)).copy_from(&self.u0);
        stacked.view_mut((m, 0), (m, k)).copy_from(&self.u1);
        numkit::sigma_min(&stacked)
    }
}

/// Tangent basis from moving the base point along the complement columns.
pub fn tangent_basis(f: &Fibration, plane: &OrientedPlane, h: f64) -> Result<TangentBasis> {
    let c = plane.complement_basis(None)?;
    tangent_basis_in(f, plane, &c, h)
}

/// As [`tangent_basis`] with an explicit orthonormal complement basis.
pub fn tangent_basis_in(f: &Fibration, plane: &OrientedPlane, complement: &RMat, h: f64) -> Result<TangentBasis> {
    tangent_basis_at(f, plane.u(), plane, complement, complement, h)
}

/// Tangent basis of a plane field at `P`, moving the evaluation point
/// `point` along the columns of `motions`. Coordinates are taken in the
/// orthonormal basis `complement` of `P^⊥`.
pub fn tangent_basis_at(
    f: &Fibration,
    point: &RVec,
    plane: &OrientedPlane,
    motions: &RMat,
    complement: &RMat,
    h: f64,
) -> Result<TangentBasis> {
    let d = plane.dim();
    if complement.nrows() != d || complement.ncols() + 2 != d || motions.shape() != complement.shape() {
        return Err(Error::Dimension(format!("complement and motions must be {}x{}", d, d - 2)));
    }
    let rest = RMat::identity(d, d) - plane.projector();
    let k = complement.ncols();
    let mut directions = Vec::with_capacity(k);
    let mut u0 = RMat::zeros(k, k);
    let mut u1 = RMat::zeros(k, k);
    for j in 0..k {
        let dir = motions.column(j).into_owned();
        let dp = stencil(h, |x| Ok(plane_at(f, &shifted(point, &dir, x))?.projector()))?;
        let a = &rest * dp;
        let au = &a * plane.u();
        let aw = &a * plane.w();
        u0.set_column(j, &(complement.transpose() * &au));
        u1.set_column(j, &(complement.transpose() * &aw));
        directions.push(RMat::from_columns(&[au, aw]));
    }
    let basis = TangentBasis { plane: plane.clone(), complement: complement.clone(), directions, u0, u1 };
    let sigma = basis.independence();
    if !(sigma > 1e-6) {
        return Err(Error::RankDeficient { sigma_min: sigma });
    }
    Ok(basis)
}

/// The matrix `t` with `u1 = t·u0` for every tangent direction.
pub fn t_matrix(b: &TangentBasis) -> Result<RMat> {
    if b.u0.nrows() == 0 {
        return Ok(RMat::zeros(0, 0));
    }
    let x = numkit::solve_linear(&b.u0.transpose(), &b.u1.transpose())?;
    Ok(x.transpose())
}

/// Characteristic polynomial `ξ(a⁰, a¹) = det(a⁰ I + a¹ t)`.
#[derive(Debug, Clone)]
pub struct CharPoly {
    t: RMat,
}

impl CharPoly {
    pub fn eval(&self, a0: f64, a1: f64) -> f64 {
        let m = self.t.nrows();
        (RMat::identity(m, m) * a0 + &self.t * a1).determinant()
    }

    pub fn t(&self) -> &RMat {
        &self.t
    }
}

pub fn char_poly(t: &RMat) -> CharPoly {
    CharPoly { t: t.clone() }
}

/// `min |Im λ(t)|`; positive iff the characteristic variety has no real
/// points. Infinite for the empty matrix.
pub fn ellipticity_margin(t: &RMat) -> f64 {
    if t.nrows() == 0 {
        return f64::INFINITY;
    }
    match numkit::eigenvalues_real(t) {
        Ok(ev) => ev.iter().map(|l| l.im.abs()).fold(f64::INFINITY, f64::min),
        Err(_) => 0.0,
    }
}

pub fn is_elliptic(t: &RMat, tol_ell: f64) -> bool {
    ellipticity_margin(t) > tol_ell
}

/// Ellipticity margin of the base at the fiber through `v`.
pub fn ellipticity_at(f: &Fibration, v: &RVec) -> Result<f64> {
    if f.n() == 0 {
        return Ok(f64::INFINITY);
    }
    let plane = plane_at(f, v)?;
    let basis = tangent_basis(f, &plane, tangent_step(f))?;
    Ok(ellipticity_margin(&t_matrix(&basis)?))
}

/// `σ(u) = u − i·J u`, unit and phase-canonical.
pub fn sato_vector(u: &RVec, ju: &RVec) -> CVec {
    let mut z = CVec::from_iterator(u.len(), u.iter().zip(ju.iter()).map(|(&a, &b)| Complex64::new(a, -b)));
    let n = z.norm();
    z /= Complex64::new(n, 0.0);
    numkit::canonical_phase(&mut z);
    z
}

/// Sato line of a `J`-complex plane.
pub fn sato_line(plane: &OrientedPlane, j: &LinearJ) -> Result<CVec> {
    let ju = j.apply(plane.u());
    let residual = plane.membership_residual(&ju);
    if !(residual < 1e-8) {
        return Err(Error::NotInvariant { residual });
    }
    Ok(sato_vector(plane.u(), &ju))
}

/// `‖z ∧ z̄‖ / ‖z‖²` with the bivector norm taken over coordinates `i < j`.
pub fn sv_distance(z: &CVec) -> Result<f64> {
    let n2 = z.norm_squared();
    if !(n2 > 0.0) {
        return Err(Error::ZeroVector);
    }
    let mut acc = 0.0;
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            acc += (z[i] * z[j].conj() - z[j] * z[i].conj()).norm_sqr();
        }
    }
    Ok(acc.sqrt() / n2)
}

/// Fubini–Study angle between the lines of `z` and `w`.
pub fn line_distance(z: &CVec, w: &CVec) -> f64 {
    let z = z / Complex64::new(z.norm(), 0.0);
    let w = w / Complex64::new(w.norm(), 0.0);
    let c = z.dotc(&w);
    let r = (&w - &z * c).norm();
    r.atan2(c.norm())
}
