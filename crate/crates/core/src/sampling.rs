//! Seeded random draws shared by validators, searches and tests.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numkit::{CMat, RMat, RVec};

pub type SampleRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian<R: Rng>(r: &mut R) -> f64 {
    r.sample(StandardNormal)
}

pub fn gaussian_rmat<R: Rng>(r: &mut R, rows: usize, cols: usize) -> RMat {
    RMat::from_fn(rows, cols, |_, _| gaussian(r))
}

pub fn gaussian_cmat<R: Rng>(r: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| Complex64::new(gaussian(r), gaussian(r)))
}

/// Uniform point of the unit sphere in `R^dim`.
pub fn unit_vector<R: Rng>(r: &mut R, dim: usize) -> RVec {
    loop {
        let v = RVec::from_fn(dim, |_, _| gaussian(r));
        let n = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

/// `exp(scale·A)` for Gaussian `A`, rescaled to determinant 1.
pub fn near_identity_sl<R: Rng>(r: &mut R, dim: usize, scale: f64) -> RMat {
    let a = gaussian_rmat(r, dim, dim) * scale;
    let trace = a.trace() / dim as f64;
    let a = a - RMat::identity(dim, dim) * trace;
    a.exp()
}

/// Random rotation (Haar-distributed via QR with sign fix), determinant +1.
pub fn rotation<R: Rng>(r: &mut R, dim: usize) -> RMat {
    let a = gaussian_rmat(r, dim, dim);
    let qr = a.qr();
    let (mut q, rr) = (qr.q(), qr.r());
    for j in 0..dim {
        if rr[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        let mut col = q.column_mut(0);
        col.neg_mut();
    }
    q
}

/// Real matrix whose spectrum is kept at least `margin` away from the real
/// axis: `S · blockdiag(a_k J + b_k) · S⁻¹` with `|a_k| ≥ margin`.
pub fn nonreal_matrix<R: Rng>(r: &mut R, m: usize, margin: f64) -> RMat {
    let mut d = RMat::zeros(2 * m, 2 * m);
    for k in 0..m {
        let a = (margin + gaussian(r).abs()) * if r.random::<bool>() { 1.0 } else { -1.0 };
        let b = gaussian(r);
        d[(2 * k, 2 * k)] = b;
        d[(2 * k + 1, 2 * k + 1)] = b;
        d[(2 * k + 1, 2 * k)] = a;
        d[(2 * k, 2 * k + 1)] = -a;
    }
    let s = well_conditioned(r, 2 * m);
    let s_inv = s.clone().try_inverse().expect("well-conditioned draw");
    s * d * s_inv
}

/// Gaussian perturbation of the identity with condition number kept modest.
pub fn well_conditioned<R: Rng>(r: &mut R, dim: usize) -> RMat {
    loop {
        let s = RMat::identity(dim, dim) + gaussian_rmat(r, dim, dim) * 0.3;
        let sv = s.clone().singular_values();
        if sv.max() / sv.min() < 20.0 {
            return s;
        }
    }
}

/// Complex matrix with spectrum inside the disk of the given radius.
pub fn disk_matrix<R: Rng>(r: &mut R, n: usize, radius: f64) -> CMat {
    loop {
        let m = gaussian_cmat(r, n, n);
        let rho = crate::numkit::spectral_radius(&m).unwrap_or_else(|_| m.norm());
        if rho > 1e-6 {
            let target = radius * r.random::<f64>().max(0.05);
            return m * Complex64::new(target / rho, 0.0);
        }
    }
}
