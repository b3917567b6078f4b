//! Acceptance criteria at desk scale (S³ and S⁵). Prints one PASS/FAIL line
//! per criterion and exits non-zero if any fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use circlefib::fibration::{conjugated, direct_sum, hopf, perturbed_hopf, Fibration, LinearJ, OrientedPlane};
use circlefib::framebundle::{adapt_chain, adapt_to_b3, osculating_j, FrameOptions};
use circlefib::halfplane::{
    cayley_matrix, complex_structure_of_matrix, evolve_t, evolve_t_complex, inverse_cayley, lft_apply,
    normalize_trace_zero, trace_jacobian_det, DiskMatrix, MoebiusN, NonRealEndo, TOL_ELL,
};
use circlefib::numkit::{self, CMat, RMat, RVec};
use circlefib::sampling::{disk_matrix, gaussian, near_identity_sl, nonreal_matrix, rng, unit_vector, well_conditioned};
use circlefib::straighten::{
    base_homotopy, build_map, find_hinge, hyperplane_locus, verify_map, CertTolerances, HingeSearch, VerifyPlan,
};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

type Criterion = (&'static str, Duration, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn max_of(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
}

fn min_of(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(f64::INFINITY, |a, b| if b.is_nan() { f64::NEG_INFINITY } else { a.min(b) })
}

fn complex_structure_suite() -> Outcome {
    let mut r = rng(101);
    let (mut square, mut commute, mut equi) = (0.0f64, 0.0f64, 0.0f64);
    for m in 1..=3 {
        for _ in 0..500 {
            let t = nonreal_matrix(&mut r, m, 0.2);
            let j = complex_structure_of_matrix(&t).expect("structure");
            let d = 2 * m;
            let id = RMat::identity(d, d);
            square = square.max((&j * &j + &id).norm());
            commute = commute.max((&j * &t - &t * &j).norm());
            let g = well_conditioned(&mut r, d);
            let gi = numkit::inverse(&g).unwrap();
            let jg = complex_structure_of_matrix(&(&g * &t * &gi)).unwrap();
            equi = equi.max((jg - &g * &j * &gi).norm());
            let c = 3.0 * gaussian(&mut r);
            let shifted = complex_structure_of_matrix(&(&t + &id * c)).unwrap();
            equi = equi.max((shifted - &j).norm());
            let scaled = complex_structure_of_matrix(&(&t * c)).unwrap();
            equi = equi.max((scaled - &j * c.signum()).norm());
        }
    }
    outcome(
        square < 1e-10 && commute < 1e-9 && equi < 1e-8,
        format!("|J²+I| {square:.1e}, |JT−TJ| {commute:.1e}, equivariance {equi:.1e}"),
    )
}

fn ode_cayley_suite() -> Outcome {
    let mut r = rng(202);
    let (mut ode, mut period, mut phase) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..200 {
        let m = 1 + case % 3;
        let t0 = NonRealEndo::new(nonreal_matrix(&mut r, m, 0.3)).unwrap();
        let theta: f64 = r.random_range(0.0..PI);
        let h = 1e-5;
        let t = evolve_t(&t0, theta).unwrap();
        let dt = (evolve_t(&t0, theta + h).unwrap() - evolve_t(&t0, theta - h).unwrap()) / (2.0 * h);
        let scale = 1.0 + t.norm() * t.norm();
        ode = ode.max((dt + RMat::identity(2 * m, 2 * m) + &t * &t).norm() / scale);
        period = period.max((evolve_t(&t0, theta + PI).unwrap() - &t).norm() / (1.0 + t.norm()));

        let s0 = disk_matrix(&mut r, m, 0.9);
        let tc = inverse_cayley(&s0).unwrap();
        let st = cayley_matrix(&evolve_t_complex(&tc, theta).unwrap()).unwrap();
        let expected = &s0 * Complex64::from_polar(1.0, -2.0 * theta);
        phase = phase.max((st.matrix() - expected).norm());
    }
    outcome(
        ode < 1e-5 && period < 1e-8 && phase < 1e-9,
        format!("ODE {ode:.1e}, period {period:.1e}, phase law {phase:.1e}"),
    )
}

/// Zooming grid search for the zero of `trace(g(s))`, using the matrix action directly.
fn grid_trace_zero(s: &CMat) -> (f64, f64) {
    let f = |alpha: f64, b: f64| -> f64 {
        match lft_apply(&MoebiusN::from_log(alpha, b).matrix(), s) {
            Ok(x) => x.trace().norm(),
            Err(_) => f64::INFINITY,
        }
    };
    let (mut ca, mut cb, mut half) = (0.0, 0.0, 4.0);
    for _ in 0..40 {
        let mut best = (f64::INFINITY, ca, cb);
        for i in 0..=40 {
            for k in 0..=40 {
                let a = ca - half + 2.0 * half * i as f64 / 40.0;
                let b = cb - half + 2.0 * half * k as f64 / 40.0;
                let v = f(a, b);
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        ca = best.1;
        cb = best.2;
        half *= 0.25;
        if half < 1e-13 {
            break;
        }
    }
    (ca, cb)
}

fn trace_zero_suite() -> Outcome {
    let mut r = rng(303);
    let (mut trace, mut margin, mut jac, mut agree) = (0.0f64, f64::INFINITY, f64::INFINITY, 0.0f64);
    let mut failures = 0;
    for case in 0..200 {
        let n = 1 + case % 4;
        let s = DiskMatrix::new(disk_matrix(&mut r, n, 0.9)).unwrap();
        let Ok((g, out)) = normalize_trace_zero(&s) else {
            failures += 1;
            continue;
        };
        trace = trace.max(out.trace().norm());
        margin = margin.min(out.radius_margin());
        jac = jac.min(trace_jacobian_det(s.matrix(), g).unwrap());
        if case < 20 {
            let (a, b) = grid_trace_zero(s.matrix());
            agree = agree.max((a - g.log_a()).abs().max((b - g.b).abs()));
        }
    }
    outcome(
        failures == 0 && trace < 1e-10 && margin > 0.0 && agree < 1e-6 && jac > 0.0,
        format!("failures {failures}, |trace| {trace:.1e}, disk margin {margin:.2e}, grid agreement {agree:.1e}, min Jacobian det {jac:.2e}"),
    )
}

fn hopf_recognition() -> Outcome {
    let mut r = rng(404);
    let mut rows = Vec::new();
    for n in [1usize, 2] {
        let g = near_identity_sl(&mut r, 2 * n + 2, 0.3);
        let j = LinearJ::standard(n).conjugate_by(&g).unwrap();
        let f = hopf(j.clone());
        let pts: Vec<RVec> = (0..50).map(|_| unit_vector(&mut r, 2 * n + 2)).collect();
        let res: Vec<[f64; 5]> = pts
            .par_iter()
            .map(|v| {
                let full = match adapt_chain(&f, v, &FrameOptions::default()) {
                    Ok(x) => x,
                    Err(_) => return [f64::INFINITY; 5],
                };
                let ev = numkit::eigenvalues_real(&full.t_real).unwrap_or_default();
                let ev_err = max_of(ev.iter().map(|z| (z.re.abs()).max((z.im.abs() - 1.0).abs())));
                let s = full.s.as_ref().map_or(f64::INFINITY, |s| s.norm());
                let q = full.s0qbar.as_ref().map_or(f64::INFINITY, |s| s.norm());
                let jj = full.complex_structure().map_or(f64::INFINITY, |m| (m - j.matrix()).norm());
                [ev_err, s, q, jj, 0.0]
            })
            .collect();
        rows.extend(res);
    }
    let col = |k: usize| max_of(rows.iter().map(|x| x[k]));
    let (ev, s, q, jj) = (col(0), col(1), col(2), col(3));
    outcome(
        ev < 1e-8 && s < 1e-9 && q < 1e-6 && jj < 1e-8,
        format!("100 samples: t spectrum {ev:.1e}, |s| {s:.1e}, |s0qbar| {q:.1e}, |J_P − J| {jj:.1e}"),
    )
}

fn s3_vanishing() -> Outcome {
    let mut r = rng(505);
    let families: Vec<Vec<(usize, Complex64)>> = vec![
        vec![(1, Complex64::new(1.0, 0.0))],
        vec![(0, Complex64::new(0.5, 0.5)), (7, Complex64::new(0.0, 1.0))],
        vec![(3, Complex64::new(-0.7, 0.2)), (12, Complex64::new(0.4, -0.3))],
    ];
    let mut worst = 0.0f64;
    let mut count = 0;
    for c in &families {
        for eps in [0.01, 0.05] {
            let f = perturbed_hopf(LinearJ::standard(1), c, eps).unwrap();
            let pts: Vec<RVec> = (0..20).map(|_| unit_vector(&mut r, 4)).collect();
            let m = max_of(pts.par_iter().map(|v| {
                adapt_to_b3(&f, v).ok().and_then(|b| b.s.map(|s| s.norm())).unwrap_or(f64::INFINITY)
            }).collect::<Vec<f64>>());
            worst = worst.max(m);
            count += pts.len();
        }
    }
    outcome(worst < 1e-8, format!("{count} samples over ε ∈ {{0.01, 0.05}}: max |s| {worst:.1e}"))
}

fn straighten_analytic() -> Outcome {
    let mut r = rng(606);
    let mut details = Vec::new();
    let mut pass = true;
    for n in [1usize, 2] {
        let d = 2 * n + 2;
        let j2 = LinearJ::standard(n);
        let f = conjugated(&near_identity_sl(&mut r, d, 0.1), hopf(j2.clone())).unwrap();
        let hinge = match find_hinge(&f, &j2, HingeSearch::default()) {
            Ok(h) => h,
            Err(e) => {
                return outcome(false, format!("n = {n}: {e}"));
            }
        };
        let map = build_map(&f, &hinge, &j2).unwrap();
        let plan = VerifyPlan {
            circles: 200,
            points: 64,
            inverse_points: 8,
            seed: 7,
            tolerances: CertTolerances { fiber: 1e-6, jac_det: 0.1, inverse: 1e-6 },
        };
        let rep = verify_map(&map, &f, &j2, plan);
        pass &= rep.verdict;
        details.push(format!(
            "S^{}: dev {:.1e}, min|det| {:.3}, inverse {:.1e}",
            2 * n + 1,
            rep.fiber_dev_max,
            rep.jac_det_min,
            rep.inv_consistency_max
        ));

        let id_f = hopf(j2.clone());
        let id_map = build_map(&id_f, &find_hinge(&id_f, &j2, HingeSearch::default()).unwrap(), &j2).unwrap();
        let id_err = max_of((0..200).map(|_| {
            let v = unit_vector(&mut r, d);
            (id_map.eval(&v).unwrap() - v).norm()
        }));
        pass &= id_err < 1e-12;
        details.push(format!("identity {id_err:.1e}"));
    }
    outcome(pass, details.join("; "))
}

fn straighten_perturbed() -> Outcome {
    let j2 = LinearJ::standard(1);
    let f = perturbed_hopf(j2.clone(), &[(1, Complex64::new(1.0, 0.0)), (6, Complex64::new(0.3, -0.4))], 0.05).unwrap();
    let hinge = match find_hinge(&f, &j2, HingeSearch { samples: 50, budget: 100, ..Default::default() }) {
        Ok(h) => h,
        Err(e) => return outcome(false, e.to_string()),
    };
    let map = build_map(&f, &hinge, &j2).unwrap();
    let plan = VerifyPlan {
        circles: 50,
        points: 32,
        inverse_points: 4,
        seed: 11,
        tolerances: CertTolerances::for_fibration(&f),
    };
    let rep = verify_map(&map, &f, &j2, plan);
    outcome(
        rep.verdict,
        format!(
            "hinge after {} draws; dev {:.1e}, min|det| {:.3}, inverse {:.1e}",
            hinge.draws, rep.fiber_dev_max, rep.jac_det_min, rep.inv_consistency_max
        ),
    )
}

fn block_diag(a: &RMat, b: &RMat) -> RMat {
    let d = a.nrows() + b.nrows();
    let mut m = RMat::zeros(d, d);
    m.view_mut((0, 0), a.shape()).copy_from(a);
    m.view_mut((a.nrows(), a.nrows()), b.shape()).copy_from(b);
    m
}

fn sum_split(first: &Fibration, second: &Fibration, samples: usize, seed: u64) -> f64 {
    let sum = direct_sum(first.clone(), second.clone());
    let mut r = rng(seed);
    let pts: Vec<RVec> = (0..samples).map(|_| unit_vector(&mut r, sum.dim())).collect();
    let split = first.dim();
    max_of(pts.par_iter().map(|v| {
        let part = |f: &Fibration, x: RVec| -> Option<RMat> {
            match f.linear_structure() {
                Some(j) => Some(j.matrix().clone()),
                None => osculating_j(f, &(&x / x.norm())).ok().map(|j| j.matrix().clone()),
            }
        };
        let a = part(first, v.rows(0, split).into_owned());
        let b = part(second, v.rows(split, v.len() - split).into_owned());
        match (osculating_j(&sum, v), a, b) {
            (Ok(j), Some(a), Some(b)) => (j.matrix() - block_diag(&a, &b)).norm(),
            _ => f64::INFINITY,
        }
    }).collect::<Vec<f64>>())
}

fn sum_splitting() -> Outcome {
    let mut r = rng(808);
    let ja = LinearJ::standard(1).conjugate_by(&near_identity_sl(&mut r, 4, 0.2)).unwrap();
    let jb = LinearJ::standard(0).conjugate_by(&near_identity_sl(&mut r, 2, 0.2)).unwrap();
    let exact = sum_split(&hopf(ja.clone()), &hopf(jb.clone()), 50, 1);
    let pert = perturbed_hopf(LinearJ::standard(1), &[(1, Complex64::new(1.0, 0.0))], 0.02).unwrap();
    let mixed = sum_split(&pert, &hopf(jb), 50, 2);
    outcome(exact < 1e-6 && mixed < 1e-3, format!("hopf⊕hopf {exact:.1e}; perturbed⊕hopf {mixed:.1e}"))
}

fn hyperplane_suite() -> Outcome {
    let j = LinearJ::standard(2);
    let f = hopf(j.clone());
    let mut xi = RVec::zeros(6);
    xi[0] = 1.0;
    let pts = match hyperplane_locus(&f, &xi, 40, 9) {
        Ok(p) => p,
        Err(e) => return outcome(false, e.to_string()),
    };
    // analytic locus: the complex lines of {z₀ = 0}, i.e. unit vectors with v₀ = v₁ = 0
    let off = max_of(pts.iter().map(|p| p.v[0].abs().max(p.v[1].abs())));
    let plane = max_of(pts.iter().map(|p| {
        let exact = OrientedPlane::from_pair(&p.v, &j.apply(&p.v)).unwrap();
        p.plane.projector_distance(&exact)
    }));
    let rank = min_of(pts.iter().map(|p| p.sigma_min));
    outcome(
        pts.len() >= 30 && off < 1e-8 && plane < 1e-8 && rank > 1e-6,
        format!("{} of 40 seeds converged; off-locus {off:.1e}, plane {plane:.1e}, min σ {rank:.3}", pts.len()),
    )
}

fn homotopy_suite() -> Outcome {
    let mut r = rng(1010);
    let taus: Vec<f64> = (0..20).map(|k| k as f64 / 19.0).collect();
    let mut details = Vec::new();
    let mut pass = true;
    for n in [1usize, 2] {
        let d = 2 * n + 2;
        let j = LinearJ::standard(n);
        let f0 = hopf(j.clone());
        let f1 = conjugated(&near_identity_sl(&mut r, d, 0.3), hopf(j.clone())).unwrap();
        let hinge = match find_hinge(&f1, &j, HingeSearch::default()) {
            Ok(h) => h,
            Err(e) => return outcome(false, e.to_string()),
        };
        match base_homotopy(&f0, &f1, &hinge.j0, &taus, 50, 5) {
            Ok(s) => {
                let sv = min_of(s.iter().map(|x| x.sv_distance));
                let m = min_of(s.iter().map(|x| x.margin));
                pass &= s.len() == 1000 && sv > 1e-3 && m > TOL_ELL;
                details.push(format!("S^{}: min sv_distance {sv:.3}, min ellipticity {m:.3}", 2 * n + 1));
            }
            Err(e) => {
                pass = false;
                details.push(format!("S^{}: {e}", 2 * n + 1));
            }
        }
    }
    outcome(pass, details.join("; "))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("complex structure of T", Duration::from_secs(10), complex_structure_suite),
        ("fiber ODE and Cayley phase law", Duration::from_secs(5), ode_cayley_suite),
        ("trace-zero normalization", Duration::from_secs(30), trace_zero_suite),
        ("Hopf recognition", Duration::from_secs(20), hopf_recognition),
        ("S3 torsion vanishing", Duration::from_secs(30), s3_vanishing),
        ("straightening, analytic", Duration::from_secs(60), straighten_analytic),
        ("straightening, perturbed", Duration::from_secs(120), straighten_perturbed),
        ("sum splitting", Duration::from_secs(90), sum_splitting),
        ("hyperplane locus", Duration::from_secs(30), hyperplane_suite),
        ("homotopy through hinge slices", Duration::from_secs(60), homotopy_suite),
    ];
    let mut failed = 0;
    for (k, (name, budget, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let pass = out.pass && took < budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {} [{:.2}s / {}s]",
            k + 1,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
