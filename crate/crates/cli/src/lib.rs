//! Command-line front end: validation, invariants, straightening and fiber
//! point clouds from fibration spec files.
//!
//! Exit codes: 0 pass, 2 unreadable or invalid input, 3 numeric failure or
//! failed verdict, 4 hinge search exhausted.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use circlefib::fibration::{plane_at, validate_fibration_with, Fibration, LinearJ, ValidationOptions};
use circlefib::framebundle::invariants;
use circlefib::sampling;
use circlefib::specfile::{self, FibrationSpec, SCHEMA_VERSION};
use circlefib::straighten::{build_map, find_hinge, verify_map, CertTolerances, HingeSearch, VerifyPlan, DEFAULT_DELTA};
use circlefib::{Error, RVec};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_HINGE: i32 = 4;

/// Environment variable holding the worker count.
pub const THREADS_ENV: &str = "TOOLKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "circlefib", version, about = "Great circle fibrations of odd spheres")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample membership, fiber constancy and ellipticity.
    Validate(Common),
    /// Frame invariants at sampled points.
    Invariants(Common),
    /// Find a hinge, build the straightening map and certify it.
    Straighten(StraightenArgs),
    /// Export sampled fiber circles.
    Pointcloud(PointcloudArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Defaults to the spec's rng_seed, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tolerance override KEY=VAL (repeatable).
    #[arg(long = "tol", value_name = "KEY=VAL")]
    pub tol: Vec<String>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct StraightenArgs {
    #[command(flatten)]
    pub common: Common,
    /// Target complex structure file; the standard structure when absent.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Hinge candidates to try.
    #[arg(long, default_value_t = 100)]
    pub budget: usize,
    #[arg(long, default_value_t = 50)]
    pub circles: usize,
    #[arg(long, default_value_t = 32)]
    pub points: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PointcloudArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 3)]
    pub circles: usize,
    #[arg(long, default_value_t = 64)]
    pub points: usize,
    #[arg(long, value_enum, default_value_t = Projection::Stereographic)]
    pub projection: Projection,
    /// Stereographic pole as comma-separated coordinates (default e₃).
    #[arg(long)]
    pub pole: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Projection {
    Stereographic,
    None,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn parse(message: impl Into<String>) -> Self {
        Self { code: EXIT_PARSE, message: message.into() }
    }

    fn numeric(e: Error) -> Self {
        let code = if matches!(e, Error::HingeExhausted { .. }) { EXIT_HINGE } else { EXIT_NUMERIC };
        Self { code, message: e.to_string() }
    }
}

/// Finished output and the exit code it carries.
pub struct Output {
    pub text: String,
    pub code: i32,
}

#[derive(Serialize)]
struct Document<'a, R: Serialize> {
    schema_version: u32,
    command: &'a str,
    spec: &'a FibrationSpec,
    report: R,
}

fn document<R: Serialize>(command: &str, spec: &FibrationSpec, report: R) -> String {
    let doc = Document { schema_version: SCHEMA_VERSION, command, spec, report };
    let mut s = serde_json::to_string_pretty(&doc).expect("document serializes");
    s.push('\n');
    s
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))
}

fn load_spec(path: &Path) -> Result<(FibrationSpec, Fibration), Failure> {
    let spec = specfile::parse_fibration_spec(&read(path)?).map_err(|e| Failure::parse(e.to_string()))?;
    let f = spec.build().map_err(|e| Failure::parse(format!("spec does not describe a fibration: {e}")))?;
    Ok((spec, f))
}

fn tolerances(items: &[String], allowed: &[&str]) -> Result<BTreeMap<String, f64>, Failure> {
    let mut out = BTreeMap::new();
    for item in items {
        let (k, v) = specfile::parse_tol_override(item).map_err(|e| Failure::parse(e.to_string()))?;
        if !allowed.contains(&k.as_str()) {
            return Err(Failure::parse(format!("unknown tolerance {k:?}; expected one of {allowed:?}")));
        }
        out.insert(k, v);
    }
    Ok(out)
}

fn seed_of(c: &Common, spec: &FibrationSpec) -> u64 {
    c.seed.or(spec.rng_seed).unwrap_or(0)
}

/// Shortest round-trip decimal form, as in the JSON output.
fn csv_float(x: f64) -> String {
    if x.is_finite() {
        serde_json::to_string(&x).expect("finite float serializes")
    } else {
        format!("{x}")
    }
}

fn validate(c: &Common) -> Result<Output, Failure> {
    let (spec, f) = load_spec(&c.spec)?;
    let tol = tolerances(&c.tol, &["membership", "constancy", "ellipticity"])?;
    let opts = ValidationOptions {
        membership: tol.get("membership").copied(),
        constancy: tol.get("constancy").copied(),
        tol_ell: tol.get("ellipticity").copied(),
    };
    let report = validate_fibration_with(&f, c.samples.unwrap_or(200), seed_of(c, &spec), opts);
    let code = if report.verdict { EXIT_PASS } else { EXIT_NUMERIC };
    let text = match c.format.unwrap_or(Format::Json) {
        Format::Json => document("validate", &spec, &report),
        Format::Csv => {
            let mut s = String::from("check,value,limit,passed\n");
            for ch in &report.checks {
                let _ = writeln!(s, "{},{},{},{}", ch.name, csv_float(ch.value), csv_float(ch.limit), ch.passed());
            }
            s
        }
    };
    Ok(Output { text, code })
}

fn invariants_cmd(c: &Common) -> Result<Output, Failure> {
    let (spec, f) = load_spec(&c.spec)?;
    tolerances(&c.tol, &[])?;
    let mut r = sampling::rng(seed_of(c, &spec));
    let points: Vec<RVec> = (0..c.samples.unwrap_or(10)).map(|_| sampling::unit_vector(&mut r, f.dim())).collect();
    let rows: Vec<_> = {
        use rayon::prelude::*;
        points.par_iter().map(|v| invariants(&f, v)).collect()
    };
    let code = if rows.iter().any(|x| x.error.is_some()) { EXIT_NUMERIC } else { EXIT_PASS };
    let text = match c.format.unwrap_or(Format::Csv) {
        Format::Json => document("invariants", &spec, &rows),
        Format::Csv => {
            let d = f.dim();
            let mut s = String::new();
            for k in 0..d {
                let _ = write!(s, "v{k},");
            }
            s.push_str("margin,s_norm,s0qbar_norm,level,error\n");
            let opt = |x: Option<f64>| x.map(csv_float).unwrap_or_default();
            for row in &rows {
                for x in &row.v {
                    let _ = write!(s, "{},", csv_float(*x));
                }
                let level = row.level.map(|l| l.to_string()).unwrap_or_default();
                let err = row.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
                let _ = writeln!(
                    s,
                    "{},{},{},{level},{err}",
                    csv_float(row.margin),
                    opt(row.s_norm),
                    opt(row.s0qbar_norm)
                );
            }
            s
        }
    };
    Ok(Output { text, code })
}

#[derive(Serialize)]
struct HingeOut {
    j0: Vec<f64>,
    parallel_margin: f64,
    target_margin: f64,
    disjoint_margin: f64,
    draws: usize,
}

#[derive(Serialize)]
struct MapSample {
    v: Vec<f64>,
    image: Vec<f64>,
}

#[derive(Serialize)]
struct StraightenOut<'a> {
    hinge: HingeOut,
    certification: &'a circlefib::straighten::CertificationReport,
    map_samples: Vec<MapSample>,
}

fn row_major(j: &LinearJ) -> Vec<f64> {
    let m = j.matrix();
    (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect()
}

fn straighten(a: &StraightenArgs) -> Result<Output, Failure> {
    let c = &a.common;
    let (spec, f) = load_spec(&c.spec)?;
    let tol = tolerances(&c.tol, &["fiber", "jac_det", "inverse", "delta"])?;
    let j2 = match &a.target {
        Some(p) => {
            let t = specfile::parse_target(&read(p)?).map_err(|e| Failure::parse(e.to_string()))?;
            if t.n != spec.n {
                return Err(Failure::parse(format!("target has n = {}, spec has n = {}", t.n, spec.n)));
            }
            t.structure().map_err(|e| Failure::parse(e.to_string()))?
        }
        None => LinearJ::standard(spec.n),
    };
    let seed = seed_of(c, &spec);
    let search = HingeSearch {
        samples: c.samples.unwrap_or(50),
        budget: a.budget,
        delta: tol.get("delta").copied().unwrap_or(DEFAULT_DELTA),
        seed,
    };
    let hinge = find_hinge(&f, &j2, search).map_err(Failure::numeric)?;
    let map = build_map(&f, &hinge, &j2).map_err(Failure::numeric)?;
    let mut t = CertTolerances::for_fibration(&f);
    t.fiber = tol.get("fiber").copied().unwrap_or(t.fiber);
    t.jac_det = tol.get("jac_det").copied().unwrap_or(t.jac_det);
    t.inverse = tol.get("inverse").copied().unwrap_or(t.inverse);
    let plan = VerifyPlan { circles: a.circles, points: a.points, inverse_points: 8.min(a.points), seed, tolerances: t };
    let report = verify_map(&map, &f, &j2, plan);
    let mut r = sampling::rng(seed ^ 0x5bd1_e995);
    let mut map_samples = Vec::new();
    for _ in 0..8 {
        let v = sampling::unit_vector(&mut r, f.dim());
        let image = map.eval(&v).map_err(Failure::numeric)?;
        map_samples.push(MapSample { v: v.iter().copied().collect(), image: image.iter().copied().collect() });
    }
    let code = if report.verdict { EXIT_PASS } else { EXIT_NUMERIC };
    let text = match c.format.unwrap_or(Format::Json) {
        Format::Json => {
            let hinge = HingeOut {
                j0: row_major(&hinge.j0),
                parallel_margin: hinge.parallel_margin,
                target_margin: hinge.target_margin,
                disjoint_margin: hinge.disjoint_margin,
                draws: hinge.draws,
            };
            document("straighten", &spec, StraightenOut { hinge, certification: &report, map_samples })
        }
        Format::Csv => format!(
            "fiber_dev_max,jac_det_min,inv_consistency_max,samples,seed,verdict\n{},{},{},{},{},{}\n",
            csv_float(report.fiber_dev_max),
            csv_float(report.jac_det_min),
            csv_float(report.inv_consistency_max),
            report.samples,
            report.seed,
            report.verdict
        ),
    };
    Ok(Output { text, code })
}

fn parse_pole(text: &str, dim: usize) -> Result<RVec, Failure> {
    let xs: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::parse(format!("bad pole {text:?}: {e}")))?;
    if xs.len() != dim || xs.iter().any(|x| !x.is_finite()) {
        return Err(Failure::parse(format!("pole needs {dim} finite coordinates")));
    }
    let v = RVec::from_vec(xs);
    let n = v.norm();
    if n == 0.0 {
        return Err(Failure::parse("pole must be nonzero"));
    }
    Ok(v / n)
}

/// Orthonormal basis of `p^⊥` as rows.
fn complement_rows(p: &RVec) -> Vec<RVec> {
    circlefib::straighten::oriented_tangent_frame(p).column_iter().map(|c| c.into_owned()).collect()
}

fn pointcloud(a: &PointcloudArgs) -> Result<Output, Failure> {
    let c = &a.common;
    let (spec, f) = load_spec(&c.spec)?;
    let tol = tolerances(&c.tol, &["pole"])?;
    let d = f.dim();
    let pole = match a.projection {
        Projection::None => None,
        Projection::Stereographic => {
            if spec.n != 1 {
                return Err(Failure::numeric(Error::Dimension(format!(
                    "stereographic export needs n = 1 (S³), got n = {}",
                    spec.n
                ))));
            }
            let mut p = RVec::zeros(d);
            p[d - 1] = 1.0;
            Some(match &a.pole {
                Some(s) => parse_pole(s, d)?,
                None => p,
            })
        }
    };
    let pole_tol = tol.get("pole").copied().unwrap_or(1e-9);
    let mut r = sampling::rng(seed_of(c, &spec));
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for id in 0..a.circles {
        let v = sampling::unit_vector(&mut r, d);
        let plane = plane_at(&f, &v).map_err(Failure::numeric)?;
        if let Some(p) = &pole {
            if plane.membership_residual(p) < pole_tol {
                return Err(Failure::numeric(Error::Invalid(format!("pole lies on sampled fiber {id}"))));
            }
        }
        let basis = pole.as_ref().map(complement_rows);
        for k in 0..a.points {
            let x = plane.circle_point(2.0 * std::f64::consts::PI * k as f64 / a.points as f64);
            let coords = match (&pole, &basis) {
                (Some(p), Some(b)) => {
                    let denom = 1.0 - x.dot(p);
                    b.iter().map(|e| e.dot(&x) / denom).collect()
                }
                _ => x.iter().copied().collect(),
            };
            rows.push((id, coords));
        }
    }
    let text = match c.format.unwrap_or(Format::Csv) {
        Format::Json => {
            #[derive(Serialize)]
            struct Row<'a> {
                circle: usize,
                coords: &'a [f64],
            }
            let rows: Vec<Row> = rows.iter().map(|(c, x)| Row { circle: *c, coords: x }).collect();
            document("pointcloud", &spec, rows)
        }
        Format::Csv => {
            let width = rows.first().map_or(0, |r| r.1.len());
            let mut s = String::from("circle");
            for k in 0..width {
                let _ = write!(s, ",x{k}");
            }
            s.push('\n');
            for (id, x) in &rows {
                let _ = write!(s, "{id}");
                for v in x {
                    let _ = write!(s, ",{}", csv_float(*v));
                }
                s.push('\n');
            }
            s
        }
    };
    Ok(Output { text, code: EXIT_PASS })
}

/// Writes `text` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(text.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Runs a parsed command and produces its output without writing it.
pub fn execute(cli: &Cli) -> Result<Output, Failure> {
    match &cli.command {
        Command::Validate(c) => validate(c),
        Command::Invariants(c) => invariants_cmd(c),
        Command::Straighten(a) => straighten(a),
        Command::Pointcloud(a) => pointcloud(a),
    }
}

fn out_path(cli: &Cli) -> Option<&Path> {
    let c = match &cli.command {
        Command::Validate(c) | Command::Invariants(c) => c,
        Command::Straighten(a) => &a.common,
        Command::Pointcloud(a) => &a.common,
    };
    c.out.as_deref()
}

/// Sizes the global worker pool from [`THREADS_ENV`].
pub fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::parse(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // a pool that is already built keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Full command: run, write output atomically, return the exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = configure_threads().and_then(|_| execute(cli));
    match result {
        Ok(out) => {
            match out_path(cli) {
                Some(p) => {
                    if let Err(e) = write_atomic(p, &out.text) {
                        eprintln!("error: cannot write {}: {e}", p.display());
                        return EXIT_NUMERIC;
                    }
                }
                None => {
                    let mut stdout = std::io::stdout().lock();
                    let _ = stdout.write_all(out.text.as_bytes());
                }
            }
            out.code
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
