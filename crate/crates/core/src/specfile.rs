//! Versioned JSON formats: fibration specs, target complex structures,
//! certification reports and `KEY=VAL` tolerance overrides.
//!
//! Floats are written in shortest round-trip form, so
//! `parse(to_string(x)) == x` bit for bit.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fibration::{conjugated, direct_sum, hopf, perturbed_hopf, Fibration, LinearJ, PerturbationTerm};
use crate::numkit::RMat;
use crate::straighten::CertificationReport;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Largest accepted `n` (sphere `S^{2n+1}`).
pub const MAX_N: usize = 15;

/// A fibration recipe. Nested recipes may omit `schema_version`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FibrationSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    #[serde(flatten)]
    pub kind: KindSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KindSpec {
    /// `j` is row-major; absent means the standard structure.
    Hopf {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        j: Option<Vec<f64>>,
    },
    Conjugated { g: Vec<f64>, inner: Box<FibrationSpec> },
    Sum { summands: Vec<FibrationSpec> },
    /// `coeffs` are `[index, re, im]` triples.
    Perturbed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        j: Option<Vec<f64>>,
        coeffs: Vec<(usize, f64, f64)>,
        epsilon: f64,
    },
}

/// Target complex structure for straightening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub schema_version: u32,
    pub n: usize,
    pub j: Vec<f64>,
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn check_version(v: Option<u32>, required: bool) -> Result<()> {
    match v {
        Some(SCHEMA_VERSION) => Ok(()),
        Some(other) => Err(parse_err(format!("unsupported schema_version {other}"))),
        None if required => Err(parse_err("missing schema_version")),
        None => Ok(()),
    }
}

fn check_n(n: usize) -> Result<usize> {
    if n > MAX_N {
        return Err(parse_err(format!("n = {n} exceeds {MAX_N}")));
    }
    Ok(2 * n + 2)
}

fn square(entries: &[f64], d: usize, what: &str) -> Result<RMat> {
    if entries.len() != d * d {
        return Err(parse_err(format!("{what} needs {} entries, got {}", d * d, entries.len())));
    }
    if let Some(x) = entries.iter().find(|x| !x.is_finite()) {
        return Err(parse_err(format!("{what} has non-finite entry {x}")));
    }
    Ok(RMat::from_row_slice(d, d, entries))
}

fn structure(entries: &Option<Vec<f64>>, n: usize, d: usize) -> Result<LinearJ> {
    match entries {
        None => Ok(LinearJ::standard(n)),
        Some(e) => LinearJ::new(square(e, d, "j")?),
    }
}

impl FibrationSpec {
    /// Checks shapes, versions and finiteness without building anything.
    pub fn check(&self, top_level: bool) -> Result<()> {
        check_version(self.schema_version, top_level)?;
        let d = check_n(self.n)?;
        match &self.kind {
            KindSpec::Hopf { j } => {
                if let Some(j) = j {
                    square(j, d, "j")?;
                }
            }
            KindSpec::Conjugated { g, inner } => {
                square(g, d, "g")?;
                inner.check(false)?;
                if inner.n != self.n {
                    return Err(parse_err("conjugated inner fibration has a different n"));
                }
            }
            KindSpec::Sum { summands } => {
                let [a, b] = summands.as_slice() else {
                    return Err(parse_err("sum needs exactly two summands"));
                };
                a.check(false)?;
                b.check(false)?;
                if a.n + b.n + 1 != self.n {
                    return Err(parse_err(format!("summands with n = {} and {} give n = {}", a.n, b.n, a.n + b.n + 1)));
                }
            }
            KindSpec::Perturbed { j, coeffs, epsilon } => {
                if let Some(j) = j {
                    square(j, d, "j")?;
                }
                if !(epsilon.is_finite() && *epsilon >= 0.0) {
                    return Err(parse_err(format!("epsilon must be finite and non-negative, got {epsilon}")));
                }
                let count = PerturbationTerm::count(self.n);
                for &(k, re, im) in coeffs {
                    if k >= count {
                        return Err(parse_err(format!("coefficient index {k} out of range (< {count})")));
                    }
                    if !(re.is_finite() && im.is_finite()) {
                        return Err(parse_err("non-finite coefficient"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Constructs the fibration.
    pub fn build(&self) -> Result<Fibration> {
        self.check(false)?;
        let d = 2 * self.n + 2;
        match &self.kind {
            KindSpec::Hopf { j } => Ok(hopf(structure(j, self.n, d)?)),
            KindSpec::Conjugated { g, inner } => conjugated(&square(g, d, "g")?, inner.build()?),
            KindSpec::Sum { summands } => Ok(direct_sum(summands[0].build()?, summands[1].build()?)),
            KindSpec::Perturbed { j, coeffs, epsilon } => {
                let c: Vec<(usize, Complex64)> = coeffs.iter().map(|&(k, re, im)| (k, Complex64::new(re, im))).collect();
                perturbed_hopf(structure(j, self.n, d)?, &c, *epsilon)
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

pub fn parse_fibration_spec(text: &str) -> Result<FibrationSpec> {
    let spec: FibrationSpec = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    spec.check(true)?;
    Ok(spec)
}

impl TargetSpec {
    pub fn from_structure(j: &LinearJ) -> Self {
        let m = j.matrix();
        let j = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect();
        Self { schema_version: SCHEMA_VERSION, n: (m.nrows() - 2) / 2, j }
    }

    pub fn structure(&self) -> Result<LinearJ> {
        check_version(Some(self.schema_version), true)?;
        let d = check_n(self.n)?;
        LinearJ::new(square(&self.j, d, "j")?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("target serializes")
    }
}

pub fn parse_target(text: &str) -> Result<TargetSpec> {
    let t: TargetSpec = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    check_version(Some(t.schema_version), true)?;
    let d = check_n(t.n)?;
    square(&t.j, d, "j")?;
    Ok(t)
}

pub fn certification_to_json(r: &CertificationReport) -> String {
    serde_json::to_string_pretty(r).expect("report serializes")
}

pub fn parse_certification_report(text: &str) -> Result<CertificationReport> {
    let r: CertificationReport = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    if ![r.fiber_dev_max, r.jac_det_min, r.inv_consistency_max].iter().all(|x| x.is_finite()) {
        return Err(parse_err("non-finite report value"));
    }
    Ok(r)
}

/// Parses `KEY=VAL` with a non-empty `[A-Za-z0-9_]` key and a positive finite value.
pub fn parse_tol_override(text: &str) -> Result<(String, f64)> {
    let (key, val) = text.split_once('=').ok_or_else(|| parse_err(format!("expected KEY=VAL, got {text:?}")))?;
    let key = key.trim();
    if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(parse_err(format!("bad tolerance key {key:?}")));
    }
    let v: f64 = val.trim().parse().map_err(|_| parse_err(format!("bad tolerance value {val:?}")))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(parse_err(format!("tolerance {key} must be positive, got {v}")));
    }
    Ok((key.to_string(), v))
}
