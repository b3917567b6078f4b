//! Straightening a great circle fibration onto a Hopf fibration through a
//! hinge, with sampled certification, base homotopies and hyperplane loci.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fibration::{plane_at, holomorphic_basis, Fibration, LinearJ, OrientedPlane};
use crate::framebundle::{osculating_j, plane_structure};
use crate::grassmann::{self, sato_vector, shifted, stencil, sv_distance, tangent_basis_at};
use crate::numkit::{self, CMat, CVec, RMat, RVec};
use crate::sampling;
use crate::{Error, Result};

/// Default lower bound for all hinge margins.
pub const DEFAULT_DELTA: f64 = 1e-2;

/// Linear complex structure `J₀` certified as a hinge on sampled fibers.
#[derive(Debug, Clone)]
pub struct Hinge {
    pub j0: LinearJ,
    /// `min σ_min(J_P − J₀)` over the samples.
    pub parallel_margin: f64,
    /// `σ_min(J₂ − J₀)`.
    pub target_margin: f64,
    /// `min |Π⁻ σ(P)| / |σ(P)|`, the part of the Sato line outside `V^{1,0}(J₀)`.
    pub disjoint_margin: f64,
    /// Candidates tried, including the accepted one.
    pub draws: usize,
}

impl Hinge {
    pub fn margins(&self) -> [f64; 3] {
        [self.parallel_margin, self.target_margin, self.disjoint_margin]
    }
}

/// Search settings for [`find_hinge`].
#[derive(Debug, Clone, Copy)]
pub struct HingeSearch {
    pub samples: usize,
    pub budget: usize,
    pub delta: f64,
    pub seed: u64,
}

impl Default for HingeSearch {
    fn default() -> Self {
        Self { samples: 50, budget: 100, delta: DEFAULT_DELTA, seed: 0 }
    }
}

/// Osculating structure and Sato line at sampled fibers.
#[derive(Debug, Clone)]
pub struct FiberData {
    pub v: RVec,
    pub j_p: RMat,
    pub sato: CVec,
}

/// Collects `J_P` (exact for globally linear fibrations, full reduction
/// otherwise) and `σ(P)` at `samples` seeded points.
pub fn sample_fiber_data(f: &Fibration, samples: usize, seed: u64) -> Result<Vec<FiberData>> {
    let mut r = sampling::rng(seed);
    let points: Vec<RVec> = (0..samples).map(|_| sampling::unit_vector(&mut r, f.dim())).collect();
    let linear = f.linear_structure();
    points
        .into_par_iter()
        .map(|v| {
            let j_p = match &linear {
                Some(j) => j.matrix().clone(),
                None => osculating_j(f, &v)?.matrix().clone(),
            };
            let sato = sato_vector(&v, &(&j_p * &v));
            Ok(FiberData { v, j_p, sato })
        })
        .collect()
}

/// `½(I + i J)`, which annihilates `V^{1,0}(J)`.
fn lower_projector(j: &RMat) -> CMat {
    let d = j.nrows();
    (numkit::to_complex(&RMat::identity(d, d)) + numkit::to_complex(j) * numkit::I) * Complex64::new(0.5, 0.0)
}

/// The three hinge margins of `J₀` against sampled fiber data and `J₂`.
pub fn hinge_margins(j0: &RMat, j2: &RMat, data: &[FiberData]) -> [f64; 3] {
    let target = numkit::sigma_min(&(j2 - j0));
    let proj = lower_projector(j0);
    let mut parallel = f64::INFINITY;
    let mut disjoint = f64::INFINITY;
    for fd in data {
        parallel = parallel.min(numkit::sigma_min(&(&fd.j_p - j0)));
        disjoint = disjoint.min((&proj * &fd.sato).norm() / fd.sato.norm());
    }
    [parallel, target, disjoint]
}

/// Seeded search over `J₀ = h(−J₂)h⁻¹`, `h = exp(A)` with Gaussian `A`
/// whose scale grows by 0.1 every ten draws; the first draw is `h = I`.
pub fn find_hinge(f: &Fibration, j2: &LinearJ, search: HingeSearch) -> Result<Hinge> {
    let data = sample_fiber_data(f, search.samples, search.seed)?;
    find_hinge_with_data(&data, j2, search)
}

pub fn find_hinge_with_data(data: &[FiberData], j2: &LinearJ, search: HingeSearch) -> Result<Hinge> {
    let d = j2.dim();
    let mut r = sampling::rng(search.seed ^ 0x6a09_e667_f3bc_c908);
    let mut best = [0.0f64; 3];
    let base = j2.negate();
    for draw in 0..search.budget {
        let h = if draw == 0 {
            RMat::identity(d, d)
        } else {
            let scale = 0.1 * (1 + (draw - 1) / 10) as f64;
            (sampling::gaussian_rmat(&mut r, d, d) * scale).exp()
        };
        let Ok(j0) = base.conjugate_by(&h) else { continue };
        let m = hinge_margins(j0.matrix(), j2.matrix(), data);
        let worst = m.iter().copied().fold(f64::INFINITY, f64::min);
        if worst > best.iter().copied().fold(f64::INFINITY, f64::min) || draw == 0 {
            best = m;
        }
        if worst > search.delta {
            return Ok(Hinge {
                j0,
                parallel_margin: m[0],
                target_margin: m[1],
                disjoint_margin: m[2],
                draws: draw + 1,
            });
        }
    }
    Err(Error::HingeExhausted { draws: search.budget, best })
}

/// `v + (J₂ − J₀)⁻¹(J₁ − J₂)v`: the complex-linear map taking `J₁` to `J₂`
/// whose kernel complement is fixed by the hinge.
pub fn pointwise_map(j1: &RMat, j0: &RMat, j2: &RMat, v: &RVec) -> Result<RVec> {
    let k = numkit::inverse(&(j2 - j0))?;
    Ok(v + k * ((j1 - j2) * v))
}

/// The map on one fiber: linear on the plane, then normalized.
#[derive(Debug, Clone)]
pub struct FiberPiece {
    pub plane: OrientedPlane,
    pub image_u: RVec,
    pub image_w: RVec,
}

impl FiberPiece {
    pub fn eval(&self, theta: f64) -> RVec {
        let y = &self.image_u * theta.cos() + &self.image_w * theta.sin();
        let n = y.norm();
        y / n
    }
}

/// Straightening map of the sphere for a fibration, hinge and target.
#[derive(Debug, Clone)]
pub struct SphereMap {
    f: Fibration,
    j0: LinearJ,
    j2: LinearJ,
    k: RMat,
    exact: Option<LinearJ>,
}

impl SphereMap {
    pub fn target(&self) -> &LinearJ {
        &self.j2
    }

    pub fn hinge(&self) -> &LinearJ {
        &self.j0
    }

    /// `J_P v` for unit `v`.
    pub fn j_on_fiber(&self, v: &RVec) -> Result<RVec> {
        match &self.exact {
            Some(j) => Ok(j.apply(v)),
            None => Ok(plane_structure(&self.f, v)?.jv),
        }
    }

    fn lift(&self, v: &RVec, jv: &RVec) -> RVec {
        v + &self.k * (jv - self.j2.apply(v))
    }

    /// Image before normalization.
    pub fn raw(&self, v: &RVec) -> Result<RVec> {
        let jv = self.j_on_fiber(v)?;
        Ok(self.lift(v, &jv))
    }

    pub fn eval(&self, v: &RVec) -> Result<RVec> {
        let y = self.raw(v)?;
        let n = y.norm();
        if !(n > 1e-12) {
            return Err(Error::ZeroVector);
        }
        Ok(y / n)
    }

    /// Linear piece on the fiber through `v`.
    pub fn piece(&self, v: &RVec) -> Result<FiberPiece> {
        let (plane, jv, jw) = match &self.exact {
            Some(j) => {
                let p = OrientedPlane::from_pair(v, &j.apply(v))?;
                let (jv, jw) = (j.apply(p.u()), j.apply(p.w()));
                (p, jv, jw)
            }
            None => {
                let ps = plane_structure(&self.f, v)?;
                (ps.plane, ps.jv, ps.jw)
            }
        };
        let image_u = self.lift(plane.u(), &jv);
        let image_w = self.lift(plane.w(), &jw);
        Ok(FiberPiece { plane, image_u, image_w })
    }
}

/// Assembles the straightening map. Fails when `J₂ − J₀` is singular.
pub fn build_map(f: &Fibration, hinge: &Hinge, j2: &LinearJ) -> Result<SphereMap> {
    if j2.dim() != f.dim() || hinge.j0.dim() != f.dim() {
        return Err(Error::Dimension("hinge, target and fibration dimensions differ".into()));
    }
    let diff = j2.matrix() - hinge.j0.matrix();
    let sigma = numkit::sigma_min(&diff);
    if !(sigma > 1e-9) {
        return Err(Error::Singular { sigma_min: sigma, norm: diff.norm() });
    }
    Ok(SphereMap {
        f: f.clone(),
        j0: hinge.j0.clone(),
        j2: j2.clone(),
        k: numkit::inverse(&diff)?,
        exact: f.linear_structure(),
    })
}

/// Certification outcome with fixed field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub fiber_dev_max: f64,
    pub jac_det_min: f64,
    pub inv_consistency_max: f64,
    pub samples: usize,
    pub seed: u64,
    pub verdict: bool,
}

/// Pass thresholds for [`verify_map`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertTolerances {
    pub fiber: f64,
    pub jac_det: f64,
    pub inverse: f64,
}

impl CertTolerances {
    pub fn for_fibration(f: &Fibration) -> Self {
        if f.linear_structure().is_some() || f.is_analytic() {
            Self { fiber: 1e-6, jac_det: 0.1, inverse: 1e-6 }
        } else {
            Self { fiber: 1e-3, jac_det: 0.05, inverse: 1e-3 }
        }
    }
}

/// Sampling plan for [`verify_map`].
#[derive(Debug, Clone, Copy)]
pub struct VerifyPlan {
    pub circles: usize,
    pub points: usize,
    /// Points per circle that get a Newton inversion.
    pub inverse_points: usize,
    pub seed: u64,
    pub tolerances: CertTolerances,
}

/// Orthonormal basis of `p^⊥` (columns) with `[p, T]` positively oriented.
pub fn oriented_tangent_frame(p: &RVec) -> RMat {
    let d = p.len();
    let mut ortho = vec![p / p.norm()];
    let mut out: Vec<RVec> = Vec::with_capacity(d - 1);
    while out.len() < d - 1 {
        let mut best: Option<(f64, RVec)> = None;
        for i in 0..d {
            let mut x = RVec::zeros(d);
            x[i] = 1.0;
            for _ in 0..2 {
                for q in &ortho {
                    x -= q * q.dot(&x);
                }
            }
            let n = x.norm();
            if best.as_ref().is_none_or(|b| n > b.0 * (1.0 + 1e-12)) {
                best = Some((n, x));
            }
        }
        let (n, x) = best.expect("nonempty");
        let x = x / n;
        ortho.push(x.clone());
        out.push(x);
    }
    let mut full = vec![ortho[0].clone()];
    full.extend(out.iter().cloned());
    if RMat::from_columns(&full).determinant() < 0.0 {
        let last = out.len() - 1;
        out[last] = -&out[last];
    }
    RMat::from_columns(&out)
}

/// Differential of `Φ` at `p` in oriented tangent frames of `p` and `Φ(p)`.
pub fn tangent_jacobian(map: &SphereMap, p: &RVec, y: &RVec, h: f64) -> Result<RMat> {
    let tp = oriented_tangent_frame(p);
    let ty = oriented_tangent_frame(y);
    let k = tp.ncols();
    let mut jac = RMat::zeros(k, k);
    for j in 0..k {
        let t = tp.column(j).into_owned();
        let d = stencil(h, |x| Ok(RMat::from_column_slice(p.len(), 1, map.eval(&shifted(p, &t, x))?.as_slice())))?;
        jac.set_column(j, &(ty.transpose() * d.column(0)));
    }
    Ok(jac)
}

/// Newton inversion of `Φ(x) = y` on the sphere, started at `start`.
pub fn invert_map(map: &SphereMap, y: &RVec, start: &RVec) -> Result<RVec> {
    let ty = oriented_tangent_frame(y);
    let mut x = start / start.norm();
    let mut fx = map.eval(&x)? - y;
    let mut res = fx.norm();
    for _ in 0..40 {
        if res < 1e-13 {
            return Ok(x);
        }
        let tx = oriented_tangent_frame(&x);
        let k = tx.ncols();
        let h = 1e-6;
        let mut jac = RMat::zeros(k, k);
        for j in 0..k {
            let t = tx.column(j).into_owned();
            let plus = map.eval(&shifted(&x, &t, h))?;
            let minus = map.eval(&shifted(&x, &t, -h))?;
            jac.set_column(j, &(ty.transpose() * (plus - minus) / (2.0 * h)));
        }
        let rhs = -(ty.transpose() * &fx);
        let Ok(step) = numkit::solve_linear(&jac, &RMat::from_column_slice(k, 1, rhs.as_slice())) else {
            break;
        };
        let mut dir = &tx * step.column(0);
        if dir.norm() > 0.5 {
            dir *= 0.5 / dir.norm();
        }
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let trial = shifted(&x, &dir, lambda);
            let ft = map.eval(&trial)? - y;
            if ft.norm() < res {
                x = trial;
                fx = ft;
                res = fx.norm();
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if res < 1e-10 {
        Ok(x)
    } else {
        Err(Error::Inversion { residual: res })
    }
}

struct CircleOutcome {
    fiber_dev: f64,
    jac_det: f64,
    inverse: f64,
}

fn certify_circle(map: &SphereMap, f: &Fibration, j2: &LinearJ, v: &RVec, plan: &VerifyPlan) -> Result<CircleOutcome> {
    let plane = plane_at(f, v)?;
    let m = plan.points.max(1);
    let pts: Vec<RVec> = (0..m).map(|j| plane.circle_point(2.0 * std::f64::consts::PI * j as f64 / m as f64)).collect();
    let images: Vec<RVec> = pts.iter().map(|p| map.eval(p)).collect::<Result<_>>()?;
    let line = OrientedPlane::from_pair(&images[0], &j2.apply(&images[0]))?;
    let fiber_dev = images.iter().map(|y| line.membership_residual(y)).fold(0.0, f64::max);
    let mut jac_det = f64::INFINITY;
    for (p, y) in pts.iter().zip(&images) {
        jac_det = jac_det.min(tangent_jacobian(map, p, y, 1e-3)?.determinant().abs());
    }
    let stride = (m / plan.inverse_points.clamp(1, m)).max(1);
    let mut inverse: f64 = 0.0;
    for j in (0..m).step_by(stride).take(plan.inverse_points) {
        let err = match invert_map(map, &images[j], &images[j]) {
            Ok(x) => (x - &pts[j]).norm(),
            Err(_) => f64::MAX,
        };
        inverse = inverse.max(err);
    }
    Ok(CircleOutcome { fiber_dev, jac_det, inverse })
}

/// Samples `circles` fibers with `points` points each and checks that
/// images lie on `J₂`-complex circles, that the differential is invertible
/// and that Newton inversion returns to the start.
pub fn verify_map(map: &SphereMap, f: &Fibration, j2: &LinearJ, plan: VerifyPlan) -> CertificationReport {
    let mut r = sampling::rng(plan.seed);
    let starts: Vec<RVec> = (0..plan.circles).map(|_| sampling::unit_vector(&mut r, f.dim())).collect();
    let outcomes: Vec<Result<CircleOutcome>> =
        starts.par_iter().map(|v| certify_circle(map, f, j2, v, &plan)).collect();
    let mut fiber_dev_max: f64 = 0.0;
    let mut jac_det_min = f64::INFINITY;
    let mut inv_consistency_max: f64 = 0.0;
    let mut failed = false;
    for o in outcomes {
        match o {
            Ok(c) => {
                fiber_dev_max = fiber_dev_max.max(c.fiber_dev);
                jac_det_min = jac_det_min.min(c.jac_det);
                inv_consistency_max = inv_consistency_max.max(c.inverse);
            }
            Err(_) => failed = true,
        }
    }
    if failed {
        fiber_dev_max = f64::MAX;
        jac_det_min = 0.0;
        inv_consistency_max = f64::MAX;
    }
    if !jac_det_min.is_finite() {
        jac_det_min = 0.0;
    }
    let t = plan.tolerances;
    let verdict = plan.circles > 0
        && fiber_dev_max <= t.fiber
        && jac_det_min > t.jac_det
        && inv_consistency_max <= t.inverse;
    CertificationReport {
        fiber_dev_max,
        jac_det_min,
        inv_consistency_max,
        samples: plan.circles * plan.points,
        seed: plan.seed,
        verdict,
    }
}

/// `J_P v` for either a globally linear or a general fibration.
fn fiber_j(f: &Fibration, linear: &Option<LinearJ>, v: &RVec) -> Result<RVec> {
    match linear {
        Some(j) => Ok(j.apply(v)),
        None => Ok(plane_structure(f, v)?.jv),
    }
}

/// Unnormalized Sato vector `v − i J_P v`.
fn sato_raw(v: &RVec, jv: &RVec) -> CVec {
    CVec::from_iterator(v.len(), v.iter().zip(jv.iter()).map(|(&a, &b)| Complex64::new(a, -b)))
}

/// Oriented plane `(Re z, −Im z)` of a point of `𝒮(V)`.
pub fn plane_of_line(z: &CVec) -> Result<OrientedPlane> {
    let re = z.map(|c| c.re);
    let im = z.map(|c| -c.im);
    OrientedPlane::from_pair(&re, &im)
}

/// Point of `X₁` in the slice through the hinge and `[ℓ]`, as a Sato vector.
fn partner(f1: &Fibration, linear: &Option<LinearJ>, j0: &RMat, ell: &CVec, start: &RVec) -> Result<CVec> {
    if let Some(j1) = linear {
        let b1 = holomorphic_basis(j1.matrix());
        let b0 = holomorphic_basis(j0);
        let m = b1.ncols();
        let mut sys = CMat::zeros(ell.len(), m + b0.ncols());
        sys.view_mut((0, 0), (ell.len(), m)).copy_from(&b1);
        sys.view_mut((0, m), (ell.len(), b0.ncols())).copy_from(&b0);
        let c = numkit::solve_linear(&sys, &CMat::from_column_slice(ell.len(), 1, ell.as_slice()))?;
        return Ok((&b1 * c.rows(0, m)).column(0).into_owned());
    }
    let proj = lower_projector(j0);
    let ell_hat = ell / Complex64::new(ell.norm(), 0.0);
    let residual = |v: &RVec| -> Result<RVec> {
        let z = &proj * sato_raw(v, &fiber_j(f1, linear, v)?);
        let off = &z - &ell_hat * ell_hat.dotc(&z);
        Ok(numkit::realify_vec(&(off / Complex64::new(z.norm(), 0.0))))
    };
    let mut v = start / start.norm();
    let mut r = residual(&v)?;
    for _ in 0..50 {
        if r.norm() < 1e-13 {
            break;
        }
        let t = oriented_tangent_frame(&v);
        let h = 1e-6;
        let mut jac = RMat::zeros(r.len(), t.ncols());
        for j in 0..t.ncols() {
            let d = t.column(j).into_owned();
            jac.set_column(j, &((residual(&shifted(&v, &d, h))? - residual(&shifted(&v, &d, -h))?) / (2.0 * h)));
        }
        let Ok(step) = jac.svd(true, true).solve(&(-&r), 1e-10) else { break };
        let mut dir = &t * step;
        if dir.norm() > 0.3 {
            dir *= 0.3 / dir.norm();
        }
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let trial = shifted(&v, &dir, lambda);
            let rt = residual(&trial)?;
            if rt.norm() < r.norm() {
                v = trial;
                r = rt;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if !(r.norm() < 1e-10) {
        return Err(Error::FiberInversion { residual: r.norm() });
    }
    Ok(sato_raw(&v, &fiber_j(f1, linear, &v)?))
}

/// Interpolated base point at parameter `τ` for the sample through `v`.
#[derive(Debug, Clone)]
pub struct HomotopySample {
    pub tau: f64,
    pub v: RVec,
    pub line: CVec,
    pub plane: OrientedPlane,
    pub sv_distance: f64,
    pub margin: f64,
}

struct Interpolator {
    f0: Fibration,
    f1: Fibration,
    lin0: Option<LinearJ>,
    lin1: Option<LinearJ>,
    j0: RMat,
    proj: CMat,
}

impl Interpolator {
    /// Endpoint Sato vectors with equal `Π⁻` components.
    fn endpoints(&self, v: &RVec) -> Result<(CVec, CVec)> {
        let z0 = sato_raw(v, &fiber_j(&self.f0, &self.lin0, v)?);
        let ell = &self.proj * &z0;
        let m = (0..ell.len()).max_by(|&a, &b| ell[a].norm().total_cmp(&ell[b].norm())).unwrap_or(0);
        if !(ell[m].norm() > 1e-12) {
            return Err(Error::RealLocus { distance: 0.0 });
        }
        let z1 = partner(&self.f1, &self.lin1, &self.j0, &ell, v)?;
        let ell1 = &self.proj * &z1;
        Ok((&z0 / ell[m], &z1 / ell1[m]))
    }

    fn line(&self, v: &RVec, tau: f64) -> Result<CVec> {
        let (a, b) = self.endpoints(v)?;
        Ok(a * Complex64::new(1.0 - tau, 0.0) + b * Complex64::new(tau, 0.0))
    }
}

/// Samples the straight-line deformation from the base of `f0` to that of
/// `f1` inside the slices through the hinge `j0`, at each `τ` in `taus`.
///
/// Each sample also carries the ellipticity margin of the interpolated base,
/// computed from derivatives of `v ↦ P_τ(v)` transverse to the fibers of `f0`.
pub fn base_homotopy(
    f0: &Fibration,
    f1: &Fibration,
    j0: &LinearJ,
    taus: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<HomotopySample>> {
    if f0.dim() != f1.dim() || j0.dim() != f0.dim() {
        return Err(Error::Dimension("homotopy endpoints and hinge must share a dimension".into()));
    }
    let interp = std::sync::Arc::new(Interpolator {
        f0: f0.clone(),
        f1: f1.clone(),
        lin0: f0.linear_structure(),
        lin1: f1.linear_structure(),
        j0: j0.matrix().clone(),
        proj: lower_projector(j0.matrix()),
    });
    let mut r = sampling::rng(seed);
    let points: Vec<RVec> = (0..samples).map(|_| sampling::unit_vector(&mut r, f0.dim())).collect();
    let jobs: Vec<(f64, RVec)> = taus.iter().flat_map(|&t| points.iter().map(move |v| (t, v.clone()))).collect();
    jobs.into_par_iter()
        .map(|(tau, v)| {
            let z = interp.line(&v, tau)?;
            let distance = sv_distance(&z)?;
            if !(distance > 1e-9) {
                return Err(Error::RealLocus { distance });
            }
            let plane = plane_of_line(&z)?;
            let margin = homotopy_margin(&interp, &v, tau, &plane)?;
            let mut line = &z / Complex64::new(z.norm(), 0.0);
            numkit::canonical_phase(&mut line);
            Ok(HomotopySample { tau, v, line, plane, sv_distance: distance, margin })
        })
        .collect()
}

fn homotopy_margin(interp: &std::sync::Arc<Interpolator>, v: &RVec, tau: f64, plane: &OrientedPlane) -> Result<f64> {
    if interp.f0.n() == 0 {
        return Ok(f64::INFINITY);
    }
    let field = {
        let interp = interp.clone();
        Fibration::custom(interp.f0.n(), move |p: &RVec| plane_of_line(&interp.line(p, tau)?))
    };
    let motions = plane_at(&interp.f0, v)?.complement_basis(None)?;
    let complement = plane.complement_basis(None)?;
    let h = grassmann::tangent_step(&interp.f0).max(grassmann::tangent_step(&interp.f1));
    let basis = tangent_basis_at(&field, v, plane, &motions, &complement, h)?;
    Ok(grassmann::ellipticity_margin(&grassmann::t_matrix(&basis)?))
}

/// Fiber plane contained in `ker ξ`, with certification data.
#[derive(Debug, Clone)]
pub struct LocusPoint {
    pub v: RVec,
    pub plane: OrientedPlane,
    /// `max(|ξ·u|, |ξ·w|) / |ξ|`.
    pub residual: f64,
    /// Smallest singular value of the 2×(2n+1) Jacobian of `(ξ·u, ξ·w)`.
    pub sigma_min: f64,
}

fn locus_values(f: &Fibration, xi: &RVec, v: &RVec) -> Result<(RVec, OrientedPlane)> {
    let p = plane_at(f, v)?.through(v)?;
    Ok((RVec::from_vec(vec![xi.dot(p.u()), xi.dot(p.w())]), p))
}

fn locus_jacobian(f: &Fibration, xi: &RVec, v: &RVec, t: &RMat) -> Result<RMat> {
    let h = 1e-6;
    let mut jac = RMat::zeros(2, t.ncols());
    for j in 0..t.ncols() {
        let d = t.column(j).into_owned();
        let plus = locus_values(f, xi, &shifted(v, &d, h))?.0;
        let minus = locus_values(f, xi, &shifted(v, &d, -h))?.0;
        jac.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    Ok(jac)
}

/// Fibers lying in the hyperplane `ker ξ`, found by minimum-norm Newton
/// from `seeds` seeded starting points. Non-converging seeds are dropped.
pub fn hyperplane_locus(f: &Fibration, xi: &RVec, seeds: usize, seed: u64) -> Result<Vec<LocusPoint>> {
    let norm = xi.norm();
    if !(norm > 0.0) {
        return Err(Error::ZeroVector);
    }
    if xi.len() != f.dim() {
        return Err(Error::Dimension(format!("covector must have length {}", f.dim())));
    }
    let xi = xi / norm;
    let mut r = sampling::rng(seed);
    let starts: Vec<RVec> = (0..seeds).map(|_| sampling::unit_vector(&mut r, f.dim())).collect();
    let found: Vec<Option<LocusPoint>> = starts
        .par_iter()
        .map(|v0| {
            let mut v = v0.clone();
            for _ in 0..60 {
                let (val, _) = locus_values(f, &xi, &v).ok()?;
                if val.norm() < 1e-15 {
                    break;
                }
                let t = oriented_tangent_frame(&v);
                let jac = locus_jacobian(f, &xi, &v, &t).ok()?;
                let step = jac.svd(true, true).solve(&(-&val), 1e-12).ok()?;
                let mut dir = &t * step;
                if dir.norm() > 0.5 {
                    dir *= 0.5 / dir.norm();
                }
                v = shifted(&v, &dir, 1.0);
            }
            let (val, plane) = locus_values(f, &xi, &v).ok()?;
            let residual = val.amax();
            if !(residual < 1e-10) {
                return None;
            }
            let t = oriented_tangent_frame(&v);
            let sigma_min = numkit::sigma_min(&locus_jacobian(f, &xi, &v, &t).ok()?);
            Some(LocusPoint { v, plane, residual, sigma_min })
        })
        .collect();
    Ok(found.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fibration::{conjugated, hopf, perturbed_hopf};
    use crate::sampling::{near_identity_sl, rng, rotation, unit_vector};

    #[test]
    fn hopf_target_hinge_is_negation() {
        let j2 = LinearJ::standard(1);
        let h = find_hinge(&hopf(j2.clone()), &j2, HingeSearch::default()).unwrap();
        assert_eq!(h.draws, 1);
        assert!((h.j0.matrix() + j2.matrix()).norm() < 1e-15);
        assert!((h.target_margin - 2.0).abs() < 1e-12);
        assert!((h.disjoint_margin - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_structures_rejected() {
        let j2 = LinearJ::standard(1);
        let data = sample_fiber_data(&hopf(j2.clone()), 5, 0).unwrap();
        let m = hinge_margins(j2.matrix(), j2.matrix(), &data);
        assert!(m[1] < 1e-15);
    }

    #[test]
    fn zero_budget_exhausts() {
        let j2 = LinearJ::standard(1);
        let res = find_hinge(&hopf(j2.clone()), &j2, HingeSearch { budget: 0, ..Default::default() });
        assert!(matches!(res, Err(Error::HingeExhausted { draws: 0, .. })));
    }

    #[test]
    fn pointwise_identity_and_intertwining() {
        let mut r = rng(1);
        let j2 = LinearJ::standard(2);
        let j0 = j2.negate();
        let v = unit_vector(&mut r, 6);
        assert_eq!(pointwise_map(j2.matrix(), j0.matrix(), j2.matrix(), &v).unwrap(), v);
        let g = near_identity_sl(&mut r, 6, 0.4);
        let j1 = j2.conjugate_by(&g).unwrap();
        let image = pointwise_map(j1.matrix(), j0.matrix(), j2.matrix(), &v).unwrap();
        let image_j = pointwise_map(j1.matrix(), j0.matrix(), j2.matrix(), &j1.apply(&v)).unwrap();
        assert!((image_j - j2.apply(&image)).norm() < 1e-10);
    }

    #[test]
    fn identity_map_for_hopf_target() {
        let j2 = LinearJ::standard(1);
        let f = hopf(j2.clone());
        let h = find_hinge(&f, &j2, HingeSearch::default()).unwrap();
        let map = build_map(&f, &h, &j2).unwrap();
        let mut r = rng(2);
        for _ in 0..10 {
            let v = unit_vector(&mut r, 4);
            assert!((map.eval(&v).unwrap() - &v).norm() < 1e-12);
        }
    }

    #[test]
    fn conjugated_map_is_global_linear_map() {
        let mut r = rng(3);
        let j2 = LinearJ::standard(1);
        let g = near_identity_sl(&mut r, 4, 0.3);
        let f = conjugated(&g, hopf(j2.clone())).unwrap();
        let h = find_hinge(&f, &j2, HingeSearch::default()).unwrap();
        let map = build_map(&f, &h, &j2).unwrap();
        let j1 = j2.conjugate_by(&g).unwrap();
        for _ in 0..10 {
            let v = unit_vector(&mut r, 4);
            let direct = pointwise_map(j1.matrix(), h.j0.matrix(), j2.matrix(), &v).unwrap();
            let direct = &direct / direct.norm();
            assert!((map.eval(&v).unwrap() - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn fiber_images_are_planar() {
        let mut r = rng(4);
        let j2 = LinearJ::standard(1);
        let f = perturbed_hopf(j2.clone(), &[(1, Complex64::new(1.0, 0.0))], 0.05).unwrap();
        let h = find_hinge(&f, &j2, HingeSearch { samples: 10, ..Default::default() }).unwrap();
        let map = build_map(&f, &h, &j2).unwrap();
        let v = unit_vector(&mut r, 4);
        let piece = map.piece(&v).unwrap();
        let img = OrientedPlane::from_pair(&piece.image_u, &piece.image_w).unwrap();
        for k in 0..8 {
            let p = piece.plane.circle_point(k as f64 * 0.7);
            assert!(img.membership_residual(&map.eval(&p).unwrap()) < 1e-9);
        }
    }

    #[test]
    fn wrong_target_fails_certification() {
        let mut r = rng(5);
        let j2 = LinearJ::standard(1);
        let g = near_identity_sl(&mut r, 4, 0.3);
        let f = conjugated(&g, hopf(j2.clone())).unwrap();
        let h = find_hinge(&f, &j2, HingeSearch::default()).unwrap();
        let map = build_map(&f, &h, &j2).unwrap();
        let plan = VerifyPlan {
            circles: 10,
            points: 16,
            inverse_points: 2,
            seed: 1,
            tolerances: CertTolerances::for_fibration(&f),
        };
        let good = verify_map(&map, &f, &j2, plan);
        assert!(good.verdict, "{good:?}");
        let wrong = j2.conjugate_by(&near_identity_sl(&mut r, 4, 0.3)).unwrap();
        assert!(!verify_map(&map, &f, &wrong, plan).verdict);
    }

    #[test]
    fn margins_are_rotation_covariant() {
        let mut r = rng(6);
        let j2 = LinearJ::standard(1);
        let g = near_identity_sl(&mut r, 4, 0.3);
        let f = conjugated(&g, hopf(j2.clone())).unwrap();
        let data = sample_fiber_data(&f, 10, 0).unwrap();
        let j0 = j2.negate().conjugate_by(&near_identity_sl(&mut r, 4, 0.2)).unwrap();
        let m = hinge_margins(j0.matrix(), j2.matrix(), &data);
        let q = rotation(&mut r, 4);
        let qt = q.transpose();
        let moved: Vec<FiberData> = data
            .iter()
            .map(|d| FiberData { v: &q * &d.v, j_p: &q * &d.j_p * &qt, sato: numkit::to_complex(&q) * &d.sato })
            .collect();
        let m2 = hinge_margins(&(&q * j0.matrix() * &qt), &(&q * j2.matrix() * &qt), &moved);
        for k in 0..3 {
            assert!((m[k] - m2[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn homotopy_endpoints() {
        let mut r = rng(7);
        let j = LinearJ::standard(1);
        let g = near_identity_sl(&mut r, 4, 0.2);
        let f0 = hopf(j.clone());
        let f1 = conjugated(&g, hopf(j.clone())).unwrap();
        let j0 = j.negate();
        let s = base_homotopy(&f0, &f1, &j0, &[0.0, 1.0], 5, 3).unwrap();
        let j1 = j.conjugate_by(&g).unwrap();
        for x in &s {
            let jm = if x.tau == 0.0 { &j } else { &j1 };
            // the plane at τ is a complex line of the endpoint structure
            assert!(x.plane.membership_residual(&jm.apply(x.plane.u())) < 1e-9);
            assert!(x.sv_distance > 0.1);
            assert!(x.margin > 1e-3);
        }
        let at0: Vec<_> = s.iter().filter(|x| x.tau == 0.0).collect();
        for x in at0 {
            assert!(x.plane.membership_residual(&x.v) < 1e-9);
        }
    }

    #[test]
    fn locus_for_s3_is_one_fiber() {
        let f = hopf(LinearJ::standard(1));
        let mut xi = RVec::zeros(4);
        xi[0] = 1.0;
        let pts = hyperplane_locus(&f, &xi, 10, 1).unwrap();
        assert!(!pts.is_empty());
        let mut target = RVec::zeros(4);
        target[2] = 1.0;
        let fiber = plane_at(&f, &target).unwrap();
        for p in pts {
            assert!(p.plane.projector_distance(&fiber) < 1e-8);
            assert!(p.sigma_min > 1e-3);
        }
    }
}
