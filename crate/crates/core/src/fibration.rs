//! Great circle fibrations as evaluable plane fields on the unit sphere.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::framebundle;
use crate::grassmann;
use crate::halfplane::TOL_ELL;
use crate::numkit::{self, CMat, CVec, RMat, RVec};
use crate::sampling;
use crate::{Error, Result};

/// Linear complex structure on `R^{2n+2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearJ {
    matrix: RMat,
}

impl LinearJ {
    pub fn new(matrix: RMat) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || !matrix.nrows().is_multiple_of(2) || matrix.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "complex structure must be even square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let d = matrix.nrows();
        let residual = (&matrix * &matrix + RMat::identity(d, d)).norm();
        if !(residual <= 1e-12 * matrix.norm_squared().max(1.0)) {
            return Err(Error::NotComplexStructure { residual });
        }
        Ok(Self { matrix })
    }

    /// Block-diagonal structure with `J e_{2k} = e_{2k+1}` on `R^{2n+2}`.
    pub fn standard(n: usize) -> Self {
        Self { matrix: numkit::j0(n + 1) }
    }

    pub fn matrix(&self) -> &RMat {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n(&self) -> usize {
        self.dim() / 2 - 1
    }

    pub fn apply(&self, v: &RVec) -> RVec {
        &self.matrix * v
    }

    pub fn conjugate_by(&self, g: &RMat) -> Result<Self> {
        let g_inv = numkit::inverse(g)?;
        Self::new(g * &self.matrix * g_inv)
    }

    pub fn negate(&self) -> Self {
        Self { matrix: -&self.matrix }
    }

    /// A basis `g` with `g J₀ g⁻¹ = J`, columns `(x₁, J x₁, x₂, J x₂, …)` with
    /// each `x_k` the standard basis vector farthest from the span so far.
    pub fn adapted_basis(&self) -> RMat {
        let d = self.dim();
        let mut cols: Vec<RVec> = Vec::with_capacity(d);
        let mut ortho: Vec<RVec> = Vec::with_capacity(d);
        while cols.len() < d {
            let mut best: Option<(f64, RVec)> = None;
            for i in 0..d {
                let mut e = RVec::zeros(d);
                e[i] = 1.0;
                let mut r = e.clone();
                for q in &ortho {
                    r -= q * q.dot(&r);
                }
                let norm = r.norm();
                if best.as_ref().is_none_or(|b| norm > b.0 * (1.0 + 1e-12)) {
                    best = Some((norm, e));
                }
            }
            let x = best.expect("nonempty").1;
            let jx = self.apply(&x);
            for y in [&x, &jx] {
                let mut r = y.clone();
                for q in &ortho {
                    r -= q * q.dot(&r);
                }
                let norm = r.norm();
                ortho.push(r / norm);
            }
            cols.push(x);
            cols.push(jx);
        }
        RMat::from_columns(&cols)
    }
}

/// Oriented 2-plane given by an ordered orthonormal pair `(u, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedPlane {
    u: RVec,
    w: RVec,
}

impl OrientedPlane {
    /// Gram–Schmidt on `(a, b)`; the orientation is the order of the pair.
    pub fn from_pair(a: &RVec, b: &RVec) -> Result<Self> {
        let na = a.norm();
        if !(na > 1e-300) {
            return Err(Error::DegeneratePlane("first generator vanishes".into()));
        }
        let u = a / na;
        let r = b - &u * u.dot(b);
        let nr = r.norm();
        if !(nr > 1e-12 * b.norm().max(1e-300)) || !(nr > 0.0) {
            return Err(Error::DegeneratePlane("generators are parallel".into()));
        }
        Ok(Self { u, w: r / nr })
    }

    pub fn u(&self) -> &RVec {
        &self.u
    }

    pub fn w(&self) -> &RVec {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// Same oriented plane, basis rotated so the first vector is the unit
    /// direction of the projection of `v`.
    pub fn through(&self, v: &RVec) -> Result<Self> {
        let (a, b) = (self.u.dot(v), self.w.dot(v));
        let r = a.hypot(b);
        if !(r > 1e-300) {
            return Err(Error::DegeneratePlane("point is orthogonal to the plane".into()));
        }
        let (a, b) = (a / r, b / r);
        Ok(Self { u: &self.u * a + &self.w * b, w: &self.w * a - &self.u * b })
    }

    /// Point `cos θ·u + sin θ·w` of the unit circle of the plane.
    pub fn circle_point(&self, theta: f64) -> RVec {
        &self.u * theta.cos() + &self.w * theta.sin()
    }

    pub fn projector(&self) -> RMat {
        &self.u * self.u.transpose() + &self.w * self.w.transpose()
    }

    /// `u wᵀ − w uᵀ`, encoding plane and orientation.
    pub fn bivector(&self) -> RMat {
        &self.u * self.w.transpose() - &self.w * self.u.transpose()
    }

    /// Frobenius distance of bivectors divided by √2: zero iff equal as
    /// oriented planes, 2 for the same plane with opposite orientation.
    pub fn distance(&self, other: &Self) -> f64 {
        (self.bivector() - other.bivector()).norm() / std::f64::consts::SQRT_2
    }

    /// Frobenius distance of the orthogonal projectors, blind to orientation.
    pub fn projector_distance(&self, other: &Self) -> f64 {
        (self.projector() - other.projector()).norm()
    }

    pub fn same_orientation(&self, other: &Self) -> bool {
        self.bivector().dot(&other.bivector()) > 0.0
    }

    /// Euclidean distance from `v` to the span of the plane.
    pub fn membership_residual(&self, v: &RVec) -> f64 {
        (v - &self.u * self.u.dot(v) - &self.w * self.w.dot(v)).norm()
    }

    /// Image under a linear map, orthonormalized with orientation kept.
    pub fn transform(&self, g: &RMat) -> Result<Self> {
        Self::from_pair(&(g * &self.u), &(g * &self.w))
    }

    /// Orthonormal basis of the orthogonal complement, as columns.
    ///
    /// Without a reference the standard basis vectors are projected and
    /// picked greedily by remaining length. With a reference, its columns are
    /// projected and orthonormalized in order, which keeps the result smooth
    /// in the plane. The sign of the last column makes `[u, w, C]` positively
    /// oriented when no reference is given.
    pub fn complement_basis(&self, reference: Option<&RMat>) -> Result<RMat> {
        let d = self.dim();
        let mut ortho: Vec<RVec> = vec![self.u.clone(), self.w.clone()];
        let mut out: Vec<RVec> = Vec::with_capacity(d - 2);
        match reference {
            Some(r) => {
                for j in 0..r.ncols() {
                    let mut x = r.column(j).into_owned();
                    for _ in 0..2 {
                        for q in &ortho {
                            x -= q * q.dot(&x);
                        }
                    }
                    let norm = x.norm();
                    if !(norm > 1e-8) {
                        return Err(Error::DegeneratePlane("reference complement collapsed".into()));
                    }
                    let x = x / norm;
                    ortho.push(x.clone());
                    out.push(x);
                }
            }
            None => {
                let basis: RMat = RMat::identity(d, d);
                while out.len() < d - 2 {
                    let mut best: Option<(f64, RVec)> = None;
                    for i in 0..d {
                        let mut x = basis.column(i).into_owned();
                        for _ in 0..2 {
                            for q in &ortho {
                                x -= q * q.dot(&x);
                            }
                        }
                        let norm = x.norm();
                        if best.as_ref().is_none_or(|b| norm > b.0 * (1.0 + 1e-12)) {
                            best = Some((norm, x));
                        }
                    }
                    let (norm, x) = best.expect("nonempty");
                    let x = x / norm;
                    ortho.push(x.clone());
                    out.push(x);
                }
                let mut full = vec![self.u.clone(), self.w.clone()];
                full.extend(out.iter().cloned());
                if RMat::from_columns(&full).determinant() < 0.0 {
                    let last = out.len() - 1;
                    out[last] = -&out[last];
                }
            }
        }
        Ok(RMat::from_columns(&out))
    }
}

/// One perturbation basis element, by index.
///
/// With `m = n + 1` complex coordinates, indices below `m²` are the
/// antilinear maps `p ↦ e_a·conj(p_b)` (`a = k / m`, `b = k % m`); the next
/// `m⁴` indices are `p ↦ e_a·conj(p_b)·p_c·conj(p_d)/|p|²`. All have unit
/// sup-norm on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerturbationTerm {
    Linear { a: usize, b: usize },
    Quadratic { a: usize, b: usize, c: usize, d: usize },
}

impl PerturbationTerm {
    pub fn count(n: usize) -> usize {
        let m = n + 1;
        m * m + m.pow(4)
    }

    pub fn from_index(n: usize, k: usize) -> Result<Self> {
        let m = n + 1;
        if k < m * m {
            return Ok(Self::Linear { a: k / m, b: k % m });
        }
        let j = k - m * m;
        if j < m.pow(4) {
            return Ok(Self::Quadratic { a: j / m.pow(3), b: (j / (m * m)) % m, c: (j / m) % m, d: j % m });
        }
        Err(Error::Invalid(format!("perturbation index {k} out of range for n = {n}")))
    }

    fn eval(&self, p: &CVec) -> CVec {
        let mut out = CVec::zeros(p.len());
        match *self {
            Self::Linear { a, b } => out[a] = p[b].conj(),
            Self::Quadratic { a, b, c, d } => {
                let n2 = p.norm_squared();
                if n2 > 0.0 {
                    out[a] = p[b].conj() * p[c] * p[d].conj() / n2;
                }
            }
        }
        out
    }
}

/// Graph of an antilinear section over the Hopf base of a complex structure.
#[derive(Debug, Clone)]
pub struct Perturbed {
    j: LinearJ,
    frame: RMat,
    frame_inv: RMat,
    terms: Vec<(usize, PerturbationTerm, Complex64)>,
    epsilon: f64,
}

/// Affine chart coordinates of a base point of the perturbed family: the
/// complex line through `e_chart + Σ_{i≠chart} w_i e_i` in the model space.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberChart {
    pub chart: usize,
    pub w: CVec,
}

impl FiberChart {
    fn point(&self) -> CVec {
        let m = self.w.len() + 1;
        let mut z = CVec::zeros(m);
        let mut k = 0;
        for i in 0..m {
            if i == self.chart {
                z[i] = Complex64::new(1.0, 0.0);
            } else {
                z[i] = self.w[k];
                k += 1;
            }
        }
        z
    }
}

impl Perturbed {
    pub fn j(&self) -> &LinearJ {
        &self.j
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn coefficients(&self) -> Vec<(usize, Complex64)> {
        self.terms.iter().map(|t| (t.0, t.2)).collect()
    }

    /// The antilinear map `L → L^⊥` at the line `L = [z]`, applied to `p ∈ L`.
    fn section(&self, z: &CVec, p: &CVec) -> CVec {
        let mut f = CVec::zeros(p.len());
        for (_, term, c) in &self.terms {
            f += term.eval(p) * *c;
        }
        let zz = z.norm_squared();
        let proj = z * (z.dotc(&f) / zz);
        (f - proj) * Complex64::new(self.epsilon, 0.0)
    }

    fn residual(&self, chart: &FiberChart, x: &CVec) -> CVec {
        let z = chart.point();
        let zz = z.norm_squared();
        let p = &z * (z.dotc(x) / zz);
        let q = x - &p;
        q - self.section(&z, &p)
    }

    fn plane_of(&self, chart: &FiberChart) -> Result<(RVec, RVec)> {
        let z = chart.point();
        let z = &z / Complex64::new(z.norm(), 0.0);
        let phi = self.section(&z, &z);
        let a = &z + &phi;
        let b = (&z - &phi) * numkit::I;
        Ok((numkit::realify_vec(&a), numkit::realify_vec(&b)))
    }

    fn solve_chart(&self, x: &CVec, start: FiberChart) -> std::result::Result<FiberChart, f64> {
        let n = start.w.len();
        let mut chart = start;
        let to_real = |r: &CVec| numkit::realify_vec(r);
        let mut r = to_real(&self.residual(&chart, x));
        let mut rn = r.norm();
        for _ in 0..50 {
            if rn < 1e-15 {
                break;
            }
            let mut jac = RMat::zeros(2 * n + 2, 2 * n);
            for k in 0..2 * n {
                let h = 1e-7 * (1.0 + chart.w[k / 2].norm());
                let delta = if k % 2 == 0 { Complex64::new(h, 0.0) } else { Complex64::new(0.0, h) };
                let mut plus = chart.clone();
                plus.w[k / 2] += delta;
                let mut minus = chart.clone();
                minus.w[k / 2] -= delta;
                let col = (to_real(&self.residual(&plus, x)) - to_real(&self.residual(&minus, x))) / (2.0 * h);
                jac.set_column(k, &col);
            }
            let svd = jac.svd(true, true);
            let Ok(step) = svd.solve(&(-&r), 1e-14) else {
                return Err(rn);
            };
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let mut trial = chart.clone();
                for k in 0..n {
                    trial.w[k] += Complex64::new(step[2 * k], step[2 * k + 1]) * lambda;
                }
                let rt = to_real(&self.residual(&trial, x));
                let rtn = rt.norm();
                if rtn < rn || rtn < 1e-15 {
                    chart = trial;
                    r = rt;
                    accepted = rn - rtn > 1e-3 * rn || rtn < 1e-15;
                    rn = rtn;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted && lambda < 1e-3 {
                break;
            }
            if step.norm() * lambda < 1e-16 * (1.0 + chart.w.norm()) {
                break;
            }
        }
        if rn < 1e-12 {
            Ok(chart)
        } else {
            Err(rn)
        }
    }

    fn start_chart(x: &CVec, chart: usize) -> FiberChart {
        let pivot = x[chart];
        let w = CVec::from_iterator(
            x.len() - 1,
            (0..x.len()).filter(|&i| i != chart).map(|i| x[i] / pivot),
        );
        FiberChart { chart, w }
    }

    /// Solves for the base point whose plane contains `x` (model coordinates).
    fn fiber_chart(&self, x: &CVec) -> Result<FiberChart> {
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| x[b].norm().total_cmp(&x[a].norm()));
        let mut starts = vec![Self::start_chart(x, order[0])];
        if order.len() > 1 && x[order[1]].norm() > 1e-3 {
            starts.push(Self::start_chart(x, order[1]));
        }
        if order.len() > 2 && x[order[2]].norm() > 1e-3 {
            starts.push(Self::start_chart(x, order[2]));
        } else {
            let mut s = Self::start_chart(x, order[0]);
            s.w *= Complex64::new(0.9, 0.0);
            starts.push(s);
        }
        let mut best = f64::INFINITY;
        for start in starts {
            match self.solve_chart(x, start) {
                Ok(chart) => return Ok(chart),
                Err(r) => best = best.min(r),
            }
        }
        Err(Error::FiberInversion { residual: best })
    }
}

type PlaneFn = dyn Fn(&RVec) -> Result<OrientedPlane> + Send + Sync;
type TwistFn = dyn Fn(&RVec) -> Result<RVec> + Send + Sync;

/// How a fibration was built.
#[derive(Clone)]
pub enum FibrationKind {
    Hopf(LinearJ),
    Conjugated { g: RMat, g_inv: RMat, inner: Arc<Fibration> },
    Sum { first: Arc<Fibration>, second: Arc<Fibration>, j_first: TwistedJ, j_second: TwistedJ },
    Perturbed(Arc<Perturbed>),
    /// Arbitrary plane field, used for experiments and negative controls.
    Custom(Arc<PlaneFn>),
}

/// Plane field `v ↦ P(v)` on `S^{2n+1} ⊂ R^{2n+2}`.
#[derive(Clone)]
pub struct Fibration {
    n: usize,
    kind: FibrationKind,
}

impl fmt::Debug for FibrationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Hopf(j) => f.debug_tuple("Hopf").field(j).finish(),
            Self::Conjugated { g, inner, .. } => {
                f.debug_struct("Conjugated").field("g", g).field("inner", inner).finish()
            }
            Self::Sum { first, second, .. } => f.debug_tuple("Sum").field(first).field(second).finish(),
            Self::Perturbed(p) => f.debug_tuple("Perturbed").field(p).finish(),
            Self::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl fmt::Debug for Fibration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fibration").field("n", &self.n).field("kind", &self.kind).finish()
    }
}

/// How noisy plane evaluations are, which fixes finite-difference steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NoiseClass {
    /// Closed-form planes, rounding-level noise.
    Exact,
    /// Planes from an iterative solve converged to rounding level.
    Solved,
    /// Planes built from finite-difference data of another fibration.
    Nested,
}

impl Fibration {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n + 2
    }

    pub fn kind(&self) -> &FibrationKind {
        &self.kind
    }

    /// Plane field given by a closure; no structure is assumed.
    pub fn custom(n: usize, f: impl Fn(&RVec) -> Result<OrientedPlane> + Send + Sync + 'static) -> Self {
        Self { n, kind: FibrationKind::Custom(Arc::new(f)) }
    }

    /// True when no component depends on an iterative solve.
    pub fn is_analytic(&self) -> bool {
        match &self.kind {
            FibrationKind::Hopf(_) | FibrationKind::Custom(_) => true,
            FibrationKind::Conjugated { inner, .. } => inner.is_analytic(),
            FibrationKind::Sum { first, second, .. } => first.is_analytic() && second.is_analytic(),
            FibrationKind::Perturbed(p) => p.epsilon == 0.0,
        }
    }

    pub fn noise_class(&self) -> NoiseClass {
        match &self.kind {
            FibrationKind::Hopf(_) | FibrationKind::Custom(_) => NoiseClass::Exact,
            FibrationKind::Perturbed(_) => NoiseClass::Solved,
            FibrationKind::Conjugated { inner, .. } => inner.noise_class(),
            FibrationKind::Sum { first, second, j_first, j_second } => {
                if j_first.is_linear() && j_second.is_linear() {
                    first.noise_class().max(second.noise_class())
                } else {
                    NoiseClass::Nested
                }
            }
        }
    }

    /// Global linear complex structure when every fiber is a complex line of
    /// one `J`.
    pub fn linear_structure(&self) -> Option<LinearJ> {
        match self.twisted_j() {
            TwistedJ::Linear(j) => Some(j),
            _ => None,
        }
    }

    /// The twisted complex structure `v ↦ J_P v` of the fibration.
    pub fn twisted_j(&self) -> TwistedJ {
        match &self.kind {
            FibrationKind::Hopf(j) => TwistedJ::Linear(j.clone()),
            FibrationKind::Conjugated { g, g_inv, inner } => match inner.twisted_j() {
                TwistedJ::Linear(j) => match LinearJ::new(g * j.matrix() * g_inv) {
                    Ok(j) => TwistedJ::Linear(j),
                    Err(_) => TwistedJ::Osculating(Arc::new(self.clone())),
                },
                _ => TwistedJ::Osculating(Arc::new(self.clone())),
            },
            FibrationKind::Sum { j_first, j_second, first, .. } => {
                let sum = TwistedJ::Sum {
                    first: Box::new(j_first.clone()),
                    second: Box::new(j_second.clone()),
                    split: first.dim(),
                };
                match sum.as_linear() {
                    Some(j) => TwistedJ::Linear(j),
                    None => sum,
                }
            }
            FibrationKind::Perturbed(p) if p.epsilon == 0.0 => TwistedJ::Linear(p.j.clone()),
            _ => TwistedJ::Osculating(Arc::new(self.clone())),
        }
    }
}

/// Hopf fibration of `J`: fibers are the `J`-complex lines.
pub fn hopf(j: LinearJ) -> Fibration {
    Fibration { n: j.n(), kind: FibrationKind::Hopf(j) }
}

/// `P'(v) = g·P(g⁻¹v)` for `g` of determinant 1.
pub fn conjugated(g: &RMat, inner: Fibration) -> Result<Fibration> {
    if g.nrows() != inner.dim() || g.ncols() != inner.dim() {
        return Err(Error::Dimension(format!("conjugating matrix must be {0}x{0}", inner.dim())));
    }
    let det = g.determinant();
    if !((det - 1.0).abs() <= 1e-9) {
        return Err(Error::NotUnimodular { det });
    }
    let g_inv = numkit::inverse(g)?;
    Ok(Fibration { n: inner.n, kind: FibrationKind::Conjugated { g: g.clone(), g_inv, inner: Arc::new(inner) } })
}

/// Fibration of the unit sphere of `V₀ ⊕ V₁` whose plane at `(v₀, v₁)` is
/// spanned by `(v₀, v₁)` and `(J₀v₀, J₁v₁)` for the twisted structures of the
/// summands.
pub fn direct_sum(first: Fibration, second: Fibration) -> Fibration {
    let n = first.n + second.n + 1;
    let j_first = first.twisted_j();
    let j_second = second.twisted_j();
    Fibration {
        n,
        kind: FibrationKind::Sum { first: Arc::new(first), second: Arc::new(second), j_first, j_second },
    }
}

/// Fibration whose base is the graph, over the Hopf base of `J`, of the
/// antilinear section `ε·Σ c_k F_k` (see [`PerturbationTerm`]).
///
/// Validity depends on `ε`; run [`validate_fibration`] before relying on it.
pub fn perturbed_hopf(j: LinearJ, coeffs: &[(usize, Complex64)], epsilon: f64) -> Result<Fibration> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::Invalid(format!("amplitude must be finite and nonnegative, got {epsilon}")));
    }
    let n = j.n();
    if n == 0 {
        return Err(Error::Invalid("perturbed fibrations need n >= 1".into()));
    }
    let mut terms = Vec::with_capacity(coeffs.len());
    for &(k, c) in coeffs {
        if !(c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::Invalid(format!("coefficient {k} is not finite")));
        }
        terms.push((k, PerturbationTerm::from_index(n, k)?, c));
    }
    let frame = j.adapted_basis();
    let frame_inv = numkit::inverse(&frame)?;
    let p = Perturbed { j, frame, frame_inv, terms, epsilon };
    Ok(Fibration { n, kind: FibrationKind::Perturbed(Arc::new(p)) })
}

fn check_unit(v: &RVec, dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Dimension(format!("expected a vector of length {dim}, got {}", v.len())));
    }
    let norm = v.norm();
    if !((norm - 1.0).abs() <= 1e-9) {
        return Err(Error::NotUnit { norm });
    }
    Ok(())
}

/// Plane of the fiber through the unit vector `v`, with basis `(≈v, w)`.
pub fn plane_at(f: &Fibration, v: &RVec) -> Result<OrientedPlane> {
    check_unit(v, f.dim())?;
    match &f.kind {
        FibrationKind::Perturbed(_) => Ok(fiber_through(f, v)?.0),
        _ => plane_unchecked(f, v),
    }
}

fn plane_unchecked(f: &Fibration, v: &RVec) -> Result<OrientedPlane> {
    match &f.kind {
        FibrationKind::Hopf(j) => OrientedPlane::from_pair(v, &j.apply(v)),
        FibrationKind::Conjugated { g, g_inv, inner } => {
            let x = g_inv * v;
            let norm = x.norm();
            let p = plane_unchecked(inner, &(x / norm))?;
            p.transform(g)?.through(v)
        }
        FibrationKind::Sum { first, j_first, j_second, .. } => {
            let d0 = first.dim();
            let v0 = v.rows(0, d0).into_owned();
            let v1 = v.rows(d0, v.len() - d0).into_owned();
            let jv0 = j_first.apply(&v0)?;
            let jv1 = j_second.apply(&v1)?;
            let mut jv = RVec::zeros(v.len());
            jv.rows_mut(0, d0).copy_from(&jv0);
            jv.rows_mut(d0, v.len() - d0).copy_from(&jv1);
            OrientedPlane::from_pair(v, &jv)
        }
        FibrationKind::Perturbed(_) => Ok(fiber_through_unchecked(f, v)?.0),
        FibrationKind::Custom(func) => func(v),
    }
}

/// Fiber plane through `v` together with the base chart it was found in
/// (chart only for the perturbed kind).
pub fn fiber_through(f: &Fibration, v: &RVec) -> Result<(OrientedPlane, Option<FiberChart>)> {
    check_unit(v, f.dim())?;
    fiber_through_unchecked(f, v)
}

fn fiber_through_unchecked(f: &Fibration, v: &RVec) -> Result<(OrientedPlane, Option<FiberChart>)> {
    match &f.kind {
        FibrationKind::Perturbed(p) => {
            let x_real = &p.frame_inv * v;
            let x = numkit::complexify_vec(&x_real);
            let chart = p.fiber_chart(&x)?;
            let (a, b) = p.plane_of(&chart)?;
            let plane = OrientedPlane::from_pair(&(&p.frame * a), &(&p.frame * b))?.through(v)?;
            Ok((plane, Some(chart)))
        }
        _ => Ok((plane_unchecked(f, v)?, None)),
    }
}

/// Plane of the perturbed family at a chart point (no inversion).
pub fn plane_of_chart(f: &Fibration, chart: &FiberChart) -> Result<OrientedPlane> {
    match &f.kind {
        FibrationKind::Perturbed(p) => {
            let (a, b) = p.plane_of(chart)?;
            OrientedPlane::from_pair(&(&p.frame * a), &(&p.frame * b))
        }
        _ => Err(Error::Invalid("chart planes exist only for the perturbed kind".into())),
    }
}

/// Twisted complex structure: `J(J v) = −v` and `J` linear on `span(v, Jv)`.
#[derive(Clone)]
pub enum TwistedJ {
    Linear(LinearJ),
    /// `v ↦ J_P v` read off the fibration's frames.
    Osculating(Arc<Fibration>),
    Sum { first: Box<TwistedJ>, second: Box<TwistedJ>, split: usize },
    Custom { dim: usize, map: Arc<TwistFn> },
}

impl fmt::Debug for TwistedJ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear(j) => f.debug_tuple("Linear").field(j).finish(),
            Self::Osculating(fib) => f.debug_tuple("Osculating").field(fib).finish(),
            Self::Sum { first, second, split } => {
                f.debug_struct("Sum").field("first", first).field("second", second).field("split", split).finish()
            }
            Self::Custom { dim, .. } => f.debug_struct("Custom").field("dim", dim).finish(),
        }
    }
}

impl TwistedJ {
    pub fn custom(dim: usize, map: impl Fn(&RVec) -> Result<RVec> + Send + Sync + 'static) -> Self {
        Self::Custom { dim, map: Arc::new(map) }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Linear(j) => j.dim(),
            Self::Osculating(f) => f.dim(),
            Self::Sum { first, second, .. } => first.dim() + second.dim(),
            Self::Custom { dim, .. } => *dim,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.as_linear().is_some()
    }

    pub fn as_linear(&self) -> Option<LinearJ> {
        match self {
            Self::Linear(j) => Some(j.clone()),
            Self::Sum { first, second, split } => {
                let (a, b) = (first.as_linear()?, second.as_linear()?);
                let d = a.dim() + b.dim();
                let mut m = RMat::zeros(d, d);
                m.view_mut((0, 0), (*split, *split)).copy_from(a.matrix());
                m.view_mut((*split, *split), (d - split, d - split)).copy_from(b.matrix());
                LinearJ::new(m).ok()
            }
            _ => None,
        }
    }

    pub fn apply(&self, v: &RVec) -> Result<RVec> {
        match self {
            Self::Linear(j) => Ok(j.apply(v)),
            Self::Osculating(f) => {
                let norm = v.norm();
                if norm == 0.0 {
                    return Ok(RVec::zeros(v.len()));
                }
                let s = framebundle::plane_structure(f, &(v / norm))?;
                Ok(s.jv * norm)
            }
            Self::Sum { first, second, split } => {
                let d = v.len();
                let a = first.apply(&v.rows(0, *split).into_owned())?;
                let b = second.apply(&v.rows(*split, d - split).into_owned())?;
                let mut out = RVec::zeros(d);
                out.rows_mut(0, *split).copy_from(&a);
                out.rows_mut(*split, d - split).copy_from(&b);
                Ok(out)
            }
            Self::Custom { map, .. } => map(v),
        }
    }
}

/// One sampled check: `value` compared against `limit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    /// `true` when the check requires `value > limit`, `false` for `value <= limit`.
    pub lower_bound: bool,
}

impl Check {
    pub fn passed(&self) -> bool {
        if self.lower_bound {
            self.value > self.limit
        } else {
            self.value <= self.limit
        }
    }
}

/// Outcome of a sampled validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub seed: u64,
    pub checks: Vec<Check>,
    /// First evaluation error encountered, with the sample index.
    pub failure: Option<(usize, String)>,
    pub verdict: bool,
}

impl ValidationReport {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.value)
    }

    fn finish(samples: usize, seed: u64, checks: Vec<Check>, failure: Option<(usize, String)>) -> Self {
        let verdict = failure.is_none() && checks.iter().all(Check::passed);
        Self { samples, seed, checks, failure, verdict }
    }
}

/// Tolerances for [`validate_fibration`]; `None` picks the kind default.
#[derive(Debug, Clone, Copy, Default)]
pub struct ValidationOptions {
    pub membership: Option<f64>,
    pub constancy: Option<f64>,
    pub tol_ell: Option<f64>,
}

const CONSTANCY_ANGLES: [f64; 4] = [0.7, 1.9, 3.3, 5.1];

/// Samples membership `v ∈ P(v)`, constancy of `P` along fiber circles and
/// ellipticity of the tangent invariant.
pub fn validate_fibration(f: &Fibration, samples: usize, seed: u64) -> ValidationReport {
    validate_fibration_with(f, samples, seed, ValidationOptions::default())
}

pub fn validate_fibration_with(f: &Fibration, samples: usize, seed: u64, opts: ValidationOptions) -> ValidationReport {
    let default_tol = if f.is_analytic() { 1e-9 } else { 1e-7 };
    let membership_tol = opts.membership.unwrap_or(default_tol);
    let constancy_tol = opts.constancy.unwrap_or(default_tol);
    let tol_ell = opts.tol_ell.unwrap_or(TOL_ELL);
    let mut r = sampling::rng(seed);
    let points: Vec<RVec> = (0..samples).map(|_| sampling::unit_vector(&mut r, f.dim())).collect();
    let results: Vec<Result<(f64, f64, f64)>> = points
        .par_iter()
        .map(|v| {
            let p = plane_at(f, v)?;
            let membership = p.membership_residual(v);
            let mut constancy: f64 = 0.0;
            for theta in CONSTANCY_ANGLES {
                let q = plane_at(f, &p.circle_point(theta))?;
                constancy = constancy.max(q.distance(&p));
            }
            let margin = grassmann::ellipticity_at(f, v)?;
            Ok((membership, constancy, margin))
        })
        .collect();
    let (mut membership, mut constancy, mut margin) = (0.0f64, 0.0f64, f64::INFINITY);
    let mut failure = None;
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok((m, c, e)) => {
                membership = membership.max(m);
                constancy = constancy.max(c);
                margin = margin.min(e);
            }
            Err(e) if failure.is_none() => failure = Some((i, e.to_string())),
            Err(_) => {}
        }
    }
    if samples == 0 {
        margin = 0.0;
    }
    let checks = vec![
        Check { name: "membership_max".into(), value: membership, limit: membership_tol, lower_bound: false },
        Check { name: "constancy_max".into(), value: constancy, limit: constancy_tol, lower_bound: false },
        Check { name: "ellipticity_min".into(), value: margin, limit: tol_ell, lower_bound: true },
    ];
    ValidationReport::finish(samples, seed, checks, failure)
}

/// Samples `J(Jv) = −v`, invariance of `span(v, Jv)` and linearity of `J`
/// on it.
pub fn validate_twisted(j: &TwistedJ, samples: usize, seed: u64) -> ValidationReport {
    let tol = 1e-9;
    let mut r = sampling::rng(seed);
    let draws: Vec<(RVec, f64, f64)> = (0..samples)
        .map(|_| (sampling::unit_vector(&mut r, j.dim()), sampling::gaussian(&mut r), sampling::gaussian(&mut r)))
        .collect();
    let results: Vec<Result<(f64, f64, f64)>> = draws
        .par_iter()
        .map(|(v, alpha, beta)| {
            let jv = j.apply(v)?;
            let jjv = j.apply(&jv)?;
            let square = (&jjv + v).norm() / v.norm();
            let plane = OrientedPlane::from_pair(v, &jv)?;
            let mixed = v + &jv;
            let invariance = plane.membership_residual(&j.apply(&mixed)?) / mixed.norm();
            let x = v * *alpha + &jv * *beta;
            let expected = &jv * *alpha - v * *beta;
            let linearity = (j.apply(&x)? - expected).norm() / x.norm();
            Ok((square, invariance, linearity))
        })
        .collect();
    let (mut square, mut invariance, mut linearity) = (0.0f64, 0.0f64, 0.0f64);
    let mut failure = None;
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok((a, b, c)) => {
                square = square.max(a);
                invariance = invariance.max(b);
                linearity = linearity.max(c);
            }
            Err(e) if failure.is_none() => failure = Some((i, e.to_string())),
            Err(_) => {}
        }
    }
    let checks = vec![
        Check { name: "square_max".into(), value: square, limit: tol, lower_bound: false },
        Check { name: "invariance_max".into(), value: invariance, limit: tol, lower_bound: false },
        Check { name: "linearity_max".into(), value: linearity, limit: tol, lower_bound: false },
    ];
    ValidationReport::finish(samples, seed, checks, failure)
}

/// Complex matrix of `J` restricted to nothing: the `(n+1)`-dimensional
/// `+i` eigenspace of `J` as orthonormal columns.
pub fn holomorphic_basis(j: &RMat) -> CMat {
    let d = j.nrows();
    let p = (numkit::to_complex(&RMat::identity(d, d)) - numkit::to_complex(j) * numkit::I) * Complex64::new(0.5, 0.0);
    let svd = p.svd(true, false);
    let u = svd.u.expect("requested");
    let mut cols: Vec<(f64, CVec)> =
        (0..d).map(|k| (svd.singular_values[k], u.column(k).into_owned())).collect();
    cols.sort_by(|a, b| b.0.total_cmp(&a.0));
    CMat::from_columns(&cols.into_iter().take(d / 2).map(|c| c.1).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{near_identity_sl, rng, unit_vector};

    #[test]
    fn hopf_plane_at_e0() {
        let f = hopf(LinearJ::standard(1));
        let mut e0 = RVec::zeros(4);
        e0[0] = 1.0;
        let p = plane_at(&f, &e0).unwrap();
        let mut e1 = RVec::zeros(4);
        e1[1] = 1.0;
        assert_eq!(p.u(), &e0);
        assert!((p.w() - e1).norm() < 1e-15);
    }

    #[test]
    fn rejects_non_complex_structure() {
        assert!(matches!(LinearJ::new(RMat::identity(4, 4)), Err(Error::NotComplexStructure { .. })));
        assert!(LinearJ::new(numkit::j0(2) * 1.1).is_err());
    }

    #[test]
    fn hopf_partitions_samples() {
        let f = hopf(LinearJ::standard(2));
        let mut r = rng(0);
        for _ in 0..10_000 {
            let v = unit_vector(&mut r, 6);
            assert!(plane_at(&f, &v).unwrap().membership_residual(&v) < 1e-12);
        }
    }

    #[test]
    fn hopf_constant_on_fiber() {
        let f = hopf(LinearJ::standard(1));
        let mut r = rng(1);
        let v = unit_vector(&mut r, 4);
        let p = plane_at(&f, &v).unwrap();
        for k in 0..16 {
            let q = plane_at(&f, &p.circle_point(k as f64 * 0.39)).unwrap();
            assert!(q.distance(&p) < 1e-14);
        }
    }

    #[test]
    fn conjugated_identity_and_transport() {
        let mut r = rng(2);
        let base = hopf(LinearJ::standard(1));
        let same = conjugated(&RMat::identity(4, 4), base.clone()).unwrap();
        let g = near_identity_sl(&mut r, 4, 0.3);
        let conj = conjugated(&g, base.clone()).unwrap();
        let transported = hopf(LinearJ::standard(1).conjugate_by(&g).unwrap());
        for _ in 0..20 {
            let v = unit_vector(&mut r, 4);
            assert!(plane_at(&same, &v).unwrap().distance(&plane_at(&base, &v).unwrap()) < 1e-14);
            let d = plane_at(&conj, &v).unwrap().distance(&plane_at(&transported, &v).unwrap());
            assert!(d < 1e-10, "{d}");
        }
    }

    #[test]
    fn conjugated_rejects_nonunimodular() {
        let g = RMat::identity(4, 4) * 2.0;
        assert!(matches!(conjugated(&g, hopf(LinearJ::standard(1))), Err(Error::NotUnimodular { .. })));
    }

    #[test]
    fn sum_of_hopf_is_hopf() {
        let mut r = rng(3);
        let sum = direct_sum(hopf(LinearJ::standard(1)), hopf(LinearJ::standard(0)));
        let big = hopf(LinearJ::standard(2));
        assert_eq!(sum.n(), 2);
        for _ in 0..50 {
            let v = unit_vector(&mut r, 6);
            assert!(plane_at(&sum, &v).unwrap().distance(&plane_at(&big, &v).unwrap()) < 1e-10);
        }
    }

    #[test]
    fn perturbed_at_zero_is_hopf() {
        let mut r = rng(4);
        let coeffs = [(1, Complex64::new(0.3, 0.1)), (7, Complex64::new(-0.2, 0.4))];
        let f = perturbed_hopf(LinearJ::standard(1), &coeffs, 0.0).unwrap();
        let h = hopf(LinearJ::standard(1));
        for _ in 0..30 {
            let v = unit_vector(&mut r, 4);
            assert!(plane_at(&f, &v).unwrap().distance(&plane_at(&h, &v).unwrap()) < 1e-10);
        }
    }

    #[test]
    fn perturbed_fiber_solve_and_consistency() {
        let mut r = rng(5);
        let f = perturbed_hopf(LinearJ::standard(1), &[(1, Complex64::new(1.0, 0.0))], 0.05).unwrap();
        for _ in 0..30 {
            let v = unit_vector(&mut r, 4);
            let (p, chart) = fiber_through(&f, &v).unwrap();
            assert!(p.membership_residual(&v) < 1e-10);
            let again = plane_of_chart(&f, &chart.unwrap()).unwrap();
            assert!(again.projector_distance(&p) < 1e-10);
            let antipode = plane_at(&f, &-&v).unwrap();
            assert!(antipode.distance(&p) < 1e-9);
        }
    }

    #[test]
    fn perturbation_index_range() {
        assert_eq!(PerturbationTerm::count(1), 4 + 16);
        assert!(PerturbationTerm::from_index(1, 19).is_ok());
        assert!(PerturbationTerm::from_index(1, 20).is_err());
        assert_eq!(PerturbationTerm::from_index(1, 3).unwrap(), PerturbationTerm::Linear { a: 1, b: 1 });
    }

    #[test]
    fn adapted_basis_conjugates_standard() {
        let mut r = rng(6);
        let g = near_identity_sl(&mut r, 6, 0.5);
        let j = LinearJ::standard(2).conjugate_by(&g).unwrap();
        let b = j.adapted_basis();
        let lhs = &b * numkit::j0(3);
        let rhs = j.matrix() * &b;
        assert!((lhs - rhs).norm() < 1e-12);
        assert_eq!(LinearJ::standard(1).adapted_basis(), RMat::identity(4, 4));
    }

    #[test]
    fn validation_examples() {
        let report = validate_fibration(&hopf(LinearJ::standard(1)), 50, 7);
        assert!(report.verdict, "{report:?}");
        assert!((report.value("ellipticity_min").unwrap() - 1.0).abs() < 1e-8);
        let corrupted = Fibration::custom(1, |v: &RVec| {
            let mut a = v.clone();
            a[0] += 0.1;
            let j = numkit::j0(2);
            OrientedPlane::from_pair(&a, &(j * v))
        });
        let report = validate_fibration(&corrupted, 20, 7);
        assert!(!report.verdict);
        assert!(report.value("membership_max").unwrap() > 1e-3);
    }

    #[test]
    fn twisted_examples() {
        let lin = TwistedJ::Linear(LinearJ::standard(1));
        let report = validate_twisted(&lin, 50, 1);
        assert!(report.verdict);
        assert!(report.checks.iter().all(|c| c.value < 1e-14));
        let scaled = TwistedJ::custom(4, |v: &RVec| Ok(numkit::j0(2) * v * 1.1));
        assert!(!validate_twisted(&scaled, 20, 1).verdict);
    }

    #[test]
    fn orientation_reversal_distance() {
        let mut r = rng(8);
        let v = unit_vector(&mut r, 4);
        let p = plane_at(&hopf(LinearJ::standard(1)), &v).unwrap();
        let q = OrientedPlane::from_pair(p.u(), &-p.w()).unwrap();
        assert!((p.distance(&q) - 2.0).abs() < 1e-12);
        assert!(p.projector_distance(&q) < 1e-14);
        assert!(!p.same_orientation(&q));
    }

    #[test]
    fn complement_is_positively_oriented() {
        let mut r = rng(9);
        let v = unit_vector(&mut r, 6);
        let p = plane_at(&hopf(LinearJ::standard(2)), &v).unwrap();
        let c = p.complement_basis(None).unwrap();
        let mut cols = vec![p.u().clone(), p.w().clone()];
        cols.extend(c.column_iter().map(|x| x.into_owned()));
        let g = RMat::from_columns(&cols);
        assert!((g.determinant() - 1.0).abs() < 1e-12);
        assert!((g.transpose() * &g - RMat::identity(6, 6)).norm() < 1e-12);
    }
}
