//! Moving-frame reduction along a fibration and the osculating complex
//! structure of each fiber.
//!
//! Frames are real `(2n+2)×(2n+2)` matrices `g` whose first two columns span
//! the fiber plane. Complement columns are paired `(g_{2+2p}, g_{3+2p})` and
//! read as one complex direction each.

use num_complex::Complex64;
use serde::Serialize;

use crate::fibration::{plane_at, Fibration, LinearJ, NoiseClass, OrientedPlane};
use crate::grassmann::{self, shifted, stencil, tangent_basis_in, tangent_step};
use crate::halfplane::{self, MoebiusN, NonRealEndo, TOL_ELL};
use crate::numkit::{self, CMat, CVec, RMat, RVec};
use crate::sampling;
use crate::{Error, Result};

/// Residual allowed for the first torsion after correction.
pub const TOL_TORSION: f64 = 1e-5;

/// Reduction level of an adapted frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Level {
    B1,
    B2,
    B3,
    B,
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::B1 => "B1",
            Self::B2 => "B2",
            Self::B3 => "B3",
            Self::B => "B",
        };
        f.write_str(s)
    }
}

/// Choices fixed at a base point so that nearby frames vary smoothly.
#[derive(Debug, Clone)]
pub struct Gauge {
    complement: RMat,
    intertwiner: Option<RMat>,
    moebius: Option<(f64, f64)>,
}

/// Knobs for the reduction.
#[derive(Debug, Clone, Default)]
pub struct FrameOptions {
    /// Rotation whose columns replace the standard basis when completing the
    /// fiber plane to a frame.
    pub reference: Option<RMat>,
    /// Step for plane-field derivatives.
    pub tangent_step: Option<f64>,
    /// Step for frame-field derivatives.
    pub frame_step: Option<f64>,
}

impl FrameOptions {
    fn h1(&self, f: &Fibration) -> f64 {
        self.tangent_step.unwrap_or_else(|| tangent_step(f))
    }

    fn h2(&self, f: &Fibration) -> f64 {
        self.frame_step.unwrap_or(match f.noise_class() {
            NoiseClass::Exact | NoiseClass::Solved => 5e-3,
            NoiseClass::Nested => 2e-2,
        })
    }
}

/// Frame `g` at a point together with the invariants read off at its level.
#[derive(Debug, Clone)]
pub struct AdaptedFrame {
    pub g: RMat,
    pub level: Level,
    pub plane: OrientedPlane,
    /// `t` in the complement coordinates of this frame.
    pub t_real: RMat,
    pub t_complex: Option<CMat>,
    pub s: Option<CMat>,
    pub normalizer: Option<MoebiusN>,
    /// First torsion measured on the trace-normalized frame field.
    pub torsion_measured: Option<CVec>,
    /// First torsion after the correcting shift.
    pub s0qbar: Option<CVec>,
    gauge: Gauge,
}

impl AdaptedFrame {
    pub fn gauge(&self) -> &Gauge {
        &self.gauge
    }

    pub fn n(&self) -> usize {
        self.g.nrows() / 2 - 1
    }

    /// `g J₀ g⁻¹`.
    pub fn complex_structure(&self) -> Result<RMat> {
        let d = self.g.nrows();
        Ok(&self.g * numkit::j0(d / 2) * numkit::inverse(&self.g)?)
    }
}

/// Rotated-reference completion: greedy against the columns of `r`.
fn reference_complement(plane: &OrientedPlane, r: &RMat) -> Result<RMat> {
    let rt = r.transpose();
    let local = OrientedPlane::from_pair(&(&rt * plane.u()), &(&rt * plane.w()))?;
    Ok(r * local.complement_basis(None)?)
}

fn b1_with(f: &Fibration, v: &RVec, gauge: Option<&Gauge>, opts: &FrameOptions) -> Result<AdaptedFrame> {
    let plane = plane_at(f, v)?;
    let complement = match (gauge, &opts.reference) {
        (Some(g), _) => plane.complement_basis(Some(&g.complement))?,
        (None, Some(r)) => reference_complement(&plane, r)?,
        (None, None) => plane.complement_basis(None)?,
    };
    let mut cols = vec![plane.u().clone(), plane.w().clone()];
    cols.extend(complement.column_iter().map(|c| c.into_owned()));
    let g = RMat::from_columns(&cols);
    let det = g.determinant();
    if !(det > 0.5) {
        return Err(Error::Orientation(format!("completed frame has determinant {det}")));
    }
    let t_real = if f.n() == 0 {
        RMat::zeros(0, 0)
    } else {
        grassmann::t_matrix(&tangent_basis_in(f, &plane, &complement, opts.h1(f))?)?
    };
    let gauge = Gauge {
        complement,
        intertwiner: gauge.and_then(|g| g.intertwiner.clone()),
        moebius: gauge.and_then(|g| g.moebius),
    };
    Ok(AdaptedFrame {
        g,
        level: Level::B1,
        plane,
        t_real,
        t_complex: None,
        s: None,
        normalizer: None,
        torsion_measured: None,
        s0qbar: None,
        gauge,
    })
}

/// Frame with `g e₀ ∝ v`, `g·span(e₀, e₁)` the oriented fiber plane and an
/// orthonormal completion; determinant 1.
pub fn adapt_b1(f: &Fibration, v: &RVec) -> Result<AdaptedFrame> {
    adapt_b1_with(f, v, &FrameOptions::default())
}

pub fn adapt_b1_with(f: &Fibration, v: &RVec, opts: &FrameOptions) -> Result<AdaptedFrame> {
    b1_with(f, v, None, opts)
}

/// `½(M − J_t M J₀)`, which intertwines `J₀` with `J_t`.
fn intertwiner(jt: &RMat, m: &RMat) -> RMat {
    let j0 = numkit::j0(jt.nrows() / 2);
    (m - jt * m * j0) * 0.5
}

fn pick_intertwiner(jt: &RMat, anchor: Option<&RMat>) -> Result<RMat> {
    let k = jt.nrows();
    let conditioned = |h: &RMat| {
        let sv = numkit::singular_values(h);
        sv.min() > 1e-6 * sv.max()
    };
    let h = match anchor {
        Some(m) => intertwiner(jt, m),
        None => {
            let mut r = sampling::rng(0x5eed);
            let mut candidates = vec![RMat::identity(k, k)];
            candidates.extend((0..8).map(|_| sampling::gaussian_rmat(&mut r, k, k)));
            candidates
                .iter()
                .map(|m| intertwiner(jt, m))
                .find(conditioned)
                .ok_or_else(|| Error::Orientation("no invertible intertwiner found".into()))?
        }
    };
    if !conditioned(&h) {
        return Err(Error::Singular { sigma_min: numkit::sigma_min(&h), norm: h.norm() });
    }
    let det = h.determinant();
    if !(det > 0.0) {
        return Err(Error::Orientation(
            "the complex orientation of the tangent invariant disagrees with the frame orientation".into(),
        ));
    }
    Ok(h)
}

fn b2_from(frame: AdaptedFrame) -> Result<AdaptedFrame> {
    if frame.level != Level::B1 {
        return Err(Error::Invalid(format!("expected a B1 frame, got {}", frame.level)));
    }
    let d = frame.g.nrows();
    let k = d - 2;
    if k == 0 {
        return Ok(AdaptedFrame {
            level: Level::B2,
            t_complex: Some(CMat::zeros(0, 0)),
            s: Some(CMat::zeros(0, 0)),
            ..frame
        });
    }
    let t = NonRealEndo::new(frame.t_real.clone())?;
    let jt = halfplane::complex_structure_of(&t)?;
    let h = pick_intertwiner(&jt, frame.gauge.intertwiner.as_ref())?;
    let t2 = numkit::solve_linear(&h, &(&frame.t_real * &h))?;
    let t_complex = numkit::complexify_block(&t2, 1e-7)?;
    let s = halfplane::cayley_matrix(&t_complex)?.matrix().clone();
    let c2 = frame.g.columns(2, k) * &h;
    let mut g = frame.g.clone();
    g.columns_mut(2, k).copy_from(&c2);
    let g = numkit::unimodular_scale(&g)?;
    let gauge = Gauge { intertwiner: Some(h), ..frame.gauge };
    Ok(AdaptedFrame { g, level: Level::B2, t_real: t2, t_complex: Some(t_complex), s: Some(s), gauge, ..frame })
}

/// Complement columns changed so that `t` commutes with `J₀`; records
/// `t` as a complex matrix with spectrum in the upper half-plane and its
/// Cayley image `s`.
pub fn adapt_b2(frame: &AdaptedFrame) -> Result<AdaptedFrame> {
    b2_from(frame.clone())
}

/// Applies the group element `(a, b)` to the first two frame columns:
/// `g₀ ↦ g₀/a`, `g₁ ↦ b g₀ + a g₁`. The tangent invariant becomes
/// `a² t + ab`.
pub fn apply_moebius(g: &RMat, m: MoebiusN) -> RMat {
    let mut out = g.clone();
    let g0 = g.column(0).into_owned();
    let g1 = g.column(1).into_owned();
    out.set_column(0, &(&g0 / m.a));
    out.set_column(1, &(&g0 * m.b + g1 * m.a));
    out
}

fn b3_from(frame: AdaptedFrame) -> Result<AdaptedFrame> {
    if frame.level != Level::B2 {
        return Err(Error::Invalid(format!("expected a B2 frame, got {}", frame.level)));
    }
    let s = frame.s.clone().expect("B2 frame has s");
    let tc = frame.t_complex.clone().expect("B2 frame has t");
    if s.nrows() == 0 {
        return Ok(AdaptedFrame { level: Level::B3, normalizer: Some(MoebiusN::IDENTITY), ..frame });
    }
    let start = frame.gauge.moebius.unwrap_or((0.0, 0.0));
    let (m, s3) = halfplane::normalize_trace_zero_from(&halfplane::DiskMatrix::new(s)?, start)?;
    let k = tc.nrows();
    let shift = CMat::identity(k, k) * Complex64::new(m.a * m.b, 0.0);
    let tc3 = tc * Complex64::new(m.a * m.a, 0.0) + shift;
    let t3 = &frame.t_real * (m.a * m.a) + RMat::identity(2 * k, 2 * k) * (m.a * m.b);
    let g = apply_moebius(&frame.g, m);
    let gauge = Gauge { moebius: Some((m.log_a(), m.b)), ..frame.gauge };
    Ok(AdaptedFrame {
        g,
        level: Level::B3,
        t_real: t3,
        t_complex: Some(tc3),
        s: Some(s3.matrix().clone()),
        normalizer: Some(m),
        gauge,
        ..frame
    })
}

/// Right translation by the unique group element making `trace(s) = 0`.
pub fn adapt_b3(frame: &AdaptedFrame) -> Result<AdaptedFrame> {
    b3_from(frame.clone())
}

fn b3_chain(f: &Fibration, v: &RVec, gauge: Option<&Gauge>, opts: &FrameOptions) -> Result<AdaptedFrame> {
    b3_from(b2_from(b1_with(f, v, gauge, opts)?)?)
}

/// Trace-normalized frame at `v`, with fresh gauge choices.
pub fn adapt_to_b3(f: &Fibration, v: &RVec) -> Result<AdaptedFrame> {
    b3_chain(f, v, None, &FrameOptions::default())
}

/// Trace-normalized frame at `v` sharing the gauge of `base`.
pub fn b3_in_gauge(f: &Fibration, v: &RVec, base: &AdaptedFrame, opts: &FrameOptions) -> Result<AdaptedFrame> {
    b3_chain(f, v, Some(&base.gauge), opts)
}

/// `g⁻¹·(dg)` along `d` at `v` for a frame field, fourth-order differences.
///
/// Fails when consecutive stencil frames differ by more than a tenth of the
/// frame norm, which a smooth field cannot do at these steps.
pub fn maurer_cartan<F>(field: F, v: &RVec, direction: &RVec, h: f64) -> Result<RMat>
where
    F: Fn(&RVec) -> Result<RMat>,
{
    let g = field(v)?;
    let xs = [-2.0 * h, -h, 0.0, h, 2.0 * h];
    let mut frames = Vec::with_capacity(5);
    for &x in &xs {
        frames.push(if x == 0.0 { g.clone() } else { field(&shifted(v, direction, x))? });
    }
    let scale = g.norm();
    let jump = frames.windows(2).map(|w| (&w[1] - &w[0]).norm()).fold(0.0, f64::max);
    if !(jump <= 0.1 * scale) {
        return Err(Error::Discontinuity { jump });
    }
    let dg = (&frames[3] - &frames[1]) * (8.0 / (12.0 * h)) - (&frames[4] - &frames[0]) * (1.0 / (12.0 * h));
    numkit::solve_linear(&g, &dg)
}

/// Residual of `∂₁ω₂ − ∂₂ω₁ + [ω₁, ω₂] = 0` on the square stencil spanned by
/// `d1`, `d2` at `v`, with central differences of step `h`.
pub fn structure_residual<F>(field: F, v: &RVec, d1: &RVec, d2: &RVec, h: f64) -> Result<f64>
where
    F: Fn(&RVec) -> Result<RMat>,
{
    let at = |x: f64, y: f64| -> RVec {
        let p = v + d1 * x + d2 * y;
        let n = p.norm();
        p / n
    };
    let omega = |p: &RVec, d: &RVec| maurer_cartan(&field, p, d, h);
    let w1 = omega(v, d1)?;
    let w2 = omega(v, d2)?;
    let d1w2 = (omega(&at(h, 0.0), d2)? - omega(&at(-h, 0.0), d2)?) / (2.0 * h);
    let d2w1 = (omega(&at(0.0, h), d1)? - omega(&at(0.0, -h), d1)?) / (2.0 * h);
    Ok((d1w2 - d2w1 + &w1 * &w2 - &w2 * &w1).norm())
}

/// Complex components `Ω^p_q` of a real matrix in the paired basis.
pub fn omega_linear(w: &RMat, p: usize, q: usize) -> Complex64 {
    let (a, b, c, d) = (w[(2 * p, 2 * q)], w[(2 * p + 1, 2 * q + 1)], w[(2 * p + 1, 2 * q)], w[(2 * p, 2 * q + 1)]);
    Complex64::new(0.5 * (a + b), 0.5 * (c - d))
}

/// Complex components `Ω^p_{q̄}` of a real matrix in the paired basis.
pub fn omega_antilinear(w: &RMat, p: usize, q: usize) -> Complex64 {
    let (a, b, c, d) = (w[(2 * p, 2 * q)], w[(2 * p + 1, 2 * q + 1)], w[(2 * p + 1, 2 * q)], w[(2 * p, 2 * q + 1)]);
    Complex64::new(0.5 * (c + d), 0.5 * (b - a))
}

/// Maurer–Cartan samples of the trace-normalized frame field along the
/// orthonormal complement directions at `v`.
pub fn b3_omegas(f: &Fibration, base: &AdaptedFrame, opts: &FrameOptions) -> Result<(Vec<RMat>, RVec)> {
    let v = base.plane.u().clone();
    let h = opts.h2(f);
    let dirs = base.gauge.complement.clone();
    let field = |p: &RVec| Ok(b3_in_gauge(f, p, base, opts)?.g);
    let mut out = Vec::with_capacity(dirs.ncols());
    for k in 0..dirs.ncols() {
        out.push(maurer_cartan(field, &v, &dirs.column(k).into_owned(), h)?);
    }
    Ok((out, v))
}

/// Coefficients of `Ω^0_{0̄} = Σ σ_r Ω^r_0 + Σ τ_r conj(Ω^r_0)` fitted over
/// the sampled directions; returns `τ`.
fn fit_torsion(omegas: &[RMat], n: usize) -> Result<CVec> {
    let k = omegas.len();
    let mut m = CMat::zeros(k, 2 * n);
    let mut rhs = CMat::zeros(k, 1);
    for (row, w) in omegas.iter().enumerate() {
        for r in 1..=n {
            let z = omega_linear(w, r, 0);
            m[(row, r - 1)] = z;
            m[(row, n + r - 1)] = z.conj();
        }
        rhs[(row, 0)] = omega_antilinear(w, 0, 0);
    }
    let x = numkit::solve_linear(&m, &rhs)?;
    Ok(CVec::from_iterator(n, (0..n).map(|r| x[(n + r, 0)])))
}

/// Shift `[[I₂, H], [0, I]]` with antilinear `2×2` blocks in `H`.
fn shift_matrix(params: &RVec, d: usize) -> RMat {
    let mut h = RMat::identity(d, d);
    for q in 0..params.len() / 2 {
        let (x, y) = (params[2 * q], params[2 * q + 1]);
        h[(0, 2 + 2 * q)] = x;
        h[(0, 3 + 2 * q)] = y;
        h[(1, 2 + 2 * q)] = y;
        h[(1, 3 + 2 * q)] = -x;
    }
    h
}

fn conjugate_all(omegas: &[RMat], h: &RMat) -> Result<Vec<RMat>> {
    let h_inv = numkit::inverse(h)?;
    Ok(omegas.iter().map(|w| &h_inv * w * h).collect())
}

/// Right translation fixing the first torsion: solves the affine system for
/// the antilinear shift and re-measures on the shifted field.
pub fn adapt_full(f: &Fibration, frame: &AdaptedFrame) -> Result<AdaptedFrame> {
    adapt_full_with(f, frame, &FrameOptions::default())
}

pub fn adapt_full_with(f: &Fibration, frame: &AdaptedFrame, opts: &FrameOptions) -> Result<AdaptedFrame> {
    if frame.level != Level::B3 {
        return Err(Error::Invalid(format!("expected a B3 frame, got {}", frame.level)));
    }
    let n = frame.n();
    let d = frame.g.nrows();
    if n == 0 {
        return Ok(AdaptedFrame {
            level: Level::B,
            torsion_measured: Some(CVec::zeros(0)),
            s0qbar: Some(CVec::zeros(0)),
            ..frame.clone()
        });
    }
    let (omegas, _) = b3_omegas(f, frame, opts)?;
    let measured = fit_torsion(&omegas, n)?;
    let mut params = RVec::zeros(2 * n);
    let mut residual = measured.clone();
    for _ in 0..2 {
        let base = fit_torsion(&conjugate_all(&omegas, &shift_matrix(&params, d))?, n)?;
        let mut lin = RMat::zeros(2 * n, 2 * n);
        for j in 0..2 * n {
            let mut e = params.clone();
            e[j] += 1.0;
            let col = fit_torsion(&conjugate_all(&omegas, &shift_matrix(&e, d))?, n)? - &base;
            lin.set_column(j, &numkit::realify_vec(&col));
        }
        let step = numkit::solve_linear(&lin, &RMat::from_column_slice(2 * n, 1, (-numkit::realify_vec(&base)).as_slice()))?;
        params += step.column(0);
        residual = fit_torsion(&conjugate_all(&omegas, &shift_matrix(&params, d))?, n)?;
        if residual.norm() < TOL_TORSION * 1e-3 {
            break;
        }
    }
    if !(residual.norm() < TOL_TORSION) {
        return Err(Error::Torsion { residual: residual.norm() });
    }
    let g = &frame.g * shift_matrix(&params, d);
    Ok(AdaptedFrame {
        g,
        level: Level::B,
        torsion_measured: Some(measured),
        s0qbar: Some(residual),
        ..frame.clone()
    })
}

/// Fully adapted frame at `v`.
pub fn adapt_chain(f: &Fibration, v: &RVec, opts: &FrameOptions) -> Result<AdaptedFrame> {
    let b3 = b3_chain(f, v, None, opts)?;
    adapt_full_with(f, &b3, opts)
}

/// Osculating complex structure `J_P = g J₀ g⁻¹` of the fiber through `v`.
pub fn osculating_j(f: &Fibration, v: &RVec) -> Result<LinearJ> {
    osculating_j_with(f, v, &FrameOptions::default())
}

pub fn osculating_j_with(f: &Fibration, v: &RVec, opts: &FrameOptions) -> Result<LinearJ> {
    let frame = adapt_chain(f, v, opts)?;
    LinearJ::new(frame.complex_structure()?)
}

/// Action of the osculating structure on the fiber plane, which is already
/// fixed at the trace-normalized level.
#[derive(Debug, Clone)]
pub struct PlaneStructure {
    pub plane: OrientedPlane,
    pub jv: RVec,
    pub jw: RVec,
    pub normalizer: MoebiusN,
}

/// `J_P` on the fiber plane through `v`: with the plane basis `(v, w)` and
/// normalizer `(a, b)`, `J_P v = ab·v + a²·w` and
/// `J_P w = −(1 + a²b²)/a²·v − ab·w`.
pub fn plane_structure(f: &Fibration, v: &RVec) -> Result<PlaneStructure> {
    let frame = b3_chain(f, v, None, &FrameOptions::default())?;
    let m = frame.normalizer.expect("B3 frame has a normalizer");
    let (u, w) = (frame.plane.u(), frame.plane.w());
    let (a, b) = (m.a, m.b);
    let jv = u * (a * b) + w * (a * a);
    let jw = -u * ((1.0 + a * a * b * b) / (a * a)) - w * (a * b);
    Ok(PlaneStructure { plane: frame.plane.clone(), jv, jw, normalizer: m })
}

/// Largest violation of `dt/dθ = −(I + t²)` at `m` points of the fiber
/// circle through `v`, with frames rotating inside the fixed plane.
pub fn fiber_ode_residual(f: &Fibration, v: &RVec, m: usize) -> Result<f64> {
    let profile = fiber_t_profile(f, v, m)?;
    Ok(profile.iter().map(|p| p.2).fold(0.0, f64::max))
}

/// `(θ, t(θ), ODE residual)` at `m` equally spaced points of the fiber.
pub fn fiber_t_profile(f: &Fibration, v: &RVec, m: usize) -> Result<Vec<(f64, RMat, f64)>> {
    let plane = plane_at(f, v)?;
    let complement = plane.complement_basis(None)?;
    let h1 = tangent_step(f);
    let t_at = |theta: f64| -> Result<RMat> {
        let p = plane.through(&plane.circle_point(theta))?;
        grassmann::t_matrix(&tangent_basis_in(f, &p, &complement, h1)?)
    };
    let delta = 1e-2;
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / m.max(1) as f64;
        let t = t_at(theta)?;
        let dt = stencil(delta, |x| t_at(theta + x))?;
        let k = t.nrows();
        let residual = (dt + RMat::identity(k, k) + &t * &t).norm();
        out.push((theta, t, residual));
    }
    Ok(out)
}

/// Invariants at one point, as far as the reduction got.
#[derive(Debug, Clone, Serialize)]
pub struct Invariants {
    pub v: Vec<f64>,
    pub level: Option<Level>,
    pub margin: f64,
    pub t_complex: Option<Vec<(f64, f64)>>,
    pub s_norm: Option<f64>,
    pub trace_s: Option<f64>,
    pub torsion_measured: Option<f64>,
    pub s0qbar_norm: Option<f64>,
    pub error: Option<String>,
}

fn flatten(c: &CMat) -> Vec<(f64, f64)> {
    c.iter().map(|z| (z.re, z.im)).collect()
}

/// Runs the reduction at `v` and collects what it produced.
pub fn invariants(f: &Fibration, v: &RVec) -> Invariants {
    let opts = FrameOptions::default();
    let mut out = Invariants {
        v: v.iter().copied().collect(),
        level: None,
        margin: 0.0,
        t_complex: None,
        s_norm: None,
        trace_s: None,
        torsion_measured: None,
        s0qbar_norm: None,
        error: None,
    };
    let b1 = match b1_with(f, v, None, &opts) {
        Ok(x) => x,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.level = Some(Level::B1);
    out.margin = grassmann::ellipticity_margin(&b1.t_real);
    let steps = || -> Result<AdaptedFrame> {
        let b2 = b2_from(b1.clone())?;
        Ok(b2)
    };
    let b2 = match steps() {
        Ok(x) => x,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.level = Some(Level::B2);
    out.t_complex = b2.t_complex.as_ref().map(flatten);
    let b3 = match b3_from(b2) {
        Ok(x) => x,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.level = Some(Level::B3);
    let s = b3.s.clone().expect("B3 frame has s");
    out.s_norm = Some(s.norm());
    out.trace_s = Some(s.trace().norm());
    out.t_complex = b3.t_complex.as_ref().map(flatten);
    match adapt_full_with(f, &b3, &opts) {
        Ok(full) => {
            out.level = Some(Level::B);
            out.torsion_measured = full.torsion_measured.as_ref().map(|x| x.norm());
            out.s0qbar_norm = full.s0qbar.as_ref().map(|x| x.norm());
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

/// Residual of the relation `Ω^p_{0̄} = s^p_q Ω^q_0` (`p, q ≥ 1`) on the
/// trace-normalized frame field at `frame`.
pub fn torsion_relation_residual(f: &Fibration, frame: &AdaptedFrame) -> Result<f64> {
    let opts = FrameOptions::default();
    let (omegas, _) = b3_omegas(f, frame, &opts)?;
    let s = frame.s.clone().expect("B3 frame has s");
    let n = frame.n();
    let mut worst: f64 = 0.0;
    for w in &omegas {
        for p in 1..=n {
            let mut rhs = Complex64::new(0.0, 0.0);
            for q in 1..=n {
                rhs += s[(p - 1, q - 1)] * omega_linear(w, q, 0);
            }
            worst = worst.max((omega_antilinear(w, p, 0) - rhs).norm());
        }
    }
    Ok(worst)
}

/// Whether the tangent invariant at the frame is elliptic at [`TOL_ELL`].
pub fn frame_is_elliptic(frame: &AdaptedFrame) -> bool {
    grassmann::is_elliptic(&frame.t_real, TOL_ELL)
}
