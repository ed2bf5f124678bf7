//! Residual engine: sample grids, named checks, suites and reports.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::bundle::{compute_az, harmonic_residual, projector_distance_at, sample_points, Subbundle, UnitaryMap, SAMPLE_SEED};
use crate::error::{Error, Result};
use crate::filtration::{uniton_residuals, AzFiltration};
use crate::grassmodel::{symmetry_predicates, ExtendedSolution, GrassModel, SYMMETRY_TOL};
use crate::twistor::LiftReport;

pub const REPORT_SCHEMA: &str = "report/v1";
/// Threshold for exact (structural, span) checks.
pub const SPAN_TOL: f64 = 1e-8;
/// Threshold for checks limited by finite-difference truncation.
pub const FD_TOL: f64 = 1e-6;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

/// Exit code for an error: malformed or unsupported input is 3, a failed
/// contract or precondition is 2.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Input(_) | Error::Capacity(_) | Error::Domain(_) => EXIT_INPUT,
        Error::Contract { .. } | Error::NotNormalized(_) | Error::GenericPoint(_) | Error::Pole { .. } => EXIT_FAIL,
    }
}

/// One named residual against its threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub max_residual: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(max_residual: f64, threshold: f64) -> Self {
        Check {
            max_residual,
            threshold,
            pass: max_residual < threshold,
        }
    }
}

/// Seeded z-points in the sample disc and m-th roots of unity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub z_points: Vec<C64>,
    pub lambda_points: Vec<C64>,
    pub seed: u64,
}

impl SampleGrid {
    pub fn new(seed: u64, nz: usize, nl: usize) -> Self {
        SampleGrid {
            z_points: sample_points(seed, nz),
            lambda_points: (0..nl).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / nl as f64)).collect(),
            seed,
        }
    }
}

impl Default for SampleGrid {
    fn default() -> Self {
        SampleGrid::new(SAMPLE_SEED, 25, 10)
    }
}

/// Worker count: `TWISTORLIFT_THREADS` if set, else the available cores.
pub fn worker_count() -> usize {
    std::env::var("TWISTORLIFT_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&k| k > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|k| k.get()).unwrap_or(1))
}

/// max f(z) over the points, evaluated in parallel.
pub fn grid_max<F>(points: &[C64], f: F) -> Result<f64>
where
    F: Fn(C64) -> Result<f64> + Sync,
{
    if points.is_empty() {
        return Ok(0.0);
    }
    let workers = worker_count().min(points.len());
    let chunk = points.len().div_ceil(workers);
    let f = &f;
    let parts: Vec<Result<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = points
            .chunks(chunk)
            .map(|c| {
                s.spawn(move || {
                    let mut m = 0.0f64;
                    for &z in c {
                        let v = f(z)?;
                        m = if v.is_nan() { f64::NAN } else { m.max(v) };
                    }
                    Ok(m)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut m = 0.0f64;
    for p in parts {
        let v = p?;
        m = if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v) };
    }
    Ok(m)
}

/// max over the grid of ‖P_A − P_B‖₂.
pub fn compare_subbundles(a: &Subbundle, b: &Subbundle, grid: &SampleGrid) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::domain("subbundles live in different dimensions"));
    }
    grid_max(&grid.z_points, |z| projector_distance_at(a, b, z))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub fixture: Option<String>,
    pub seed: u64,
    pub version: String,
    pub suite: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub checks: BTreeMap<String, Check>,
    pub provenance: ReportProvenance,
    pub pass: bool,
}

impl Report {
    pub fn new(suite: &str, seed: u64, checks: BTreeMap<String, Check>) -> Self {
        let pass = checks.values().all(|c| c.pass);
        Report {
            schema: REPORT_SCHEMA.into(),
            checks,
            provenance: ReportProvenance {
                fixture: None,
                seed,
                version: env!("CARGO_PKG_VERSION").into(),
                suite: suite.into(),
            },
            pass,
        }
    }

    pub fn with_fixture(mut self, name: &str) -> Self {
        self.provenance.fixture = Some(name.into());
        self
    }

    /// Folds another report's checks in, prefixed by its suite name.
    pub fn merge(mut self, other: Report) -> Self {
        for (k, v) in other.checks {
            self.checks.insert(format!("{}/{k}", other.provenance.suite), v);
        }
        self.pass = self.checks.values().all(|c| c.pass);
        self
    }

    /// Failing check names.
    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|(_, c)| !c.pass).map(|(k, _)| k.as_str()).collect()
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass {
            EXIT_PASS
        } else {
            EXIT_FAIL
        }
    }
}

/// What a suite runs on.
#[derive(Clone, Copy)]
pub enum SuiteObject<'a> {
    /// An extended solution with its degree r.
    Solution(&'a ExtendedSolution, usize),
    Model(&'a GrassModel),
    Map(&'a UnitaryMap),
    Filtration(&'a AzFiltration),
    Lift(&'a LiftReport),
}

pub const SUITES: [&str; 9] = [
    "extended-solution",
    "model",
    "nu-invariance",
    "real",
    "symplectic",
    "s1-invariance",
    "harmonic-map",
    "az-filtration",
    "lift",
];

fn mismatch(suite: &str) -> Error {
    Error::domain(format!("suite {suite:?} does not apply to this object"))
}

pub fn run_suite(object: SuiteObject<'_>, suite: &str, grid: &SampleGrid) -> Result<Report> {
    if !SUITES.contains(&suite) {
        return Err(Error::domain(format!("unknown suite {suite:?}")));
    }
    let mut checks = BTreeMap::new();
    match (suite, object) {
        ("extended-solution", SuiteObject::Solution(sol, _)) => {
            let lams = grid.lambda_points.clone();
            let ext = grid_max(&grid.z_points, |z| {
                let mut m = 0.0f64;
                for &l in &lams {
                    m = m.max(sol.extended_residual(z, l)?);
                }
                Ok(m)
            })?;
            checks.insert("extended-identity".into(), Check::new(ext, FD_TOL));
            let az = sol.az();
            let h = grid_max(&grid.z_points, |z| harmonic_residual(&az, z))?;
            checks.insert("harmonic".into(), Check::new(h, FD_TOL));
            for (i, alpha) in sol.unitons().iter().enumerate() {
                let (holo, closed) = uniton_residuals(&sol.prefix(i).az(), alpha)?;
                checks.insert(format!("uniton-{}-holomorphic", i + 1), Check::new(holo, FD_TOL));
                checks.insert(format!("uniton-{}-closed", i + 1), Check::new(closed, SPAN_TOL));
            }
        }
        ("model", SuiteObject::Model(m)) => {
            checks.insert("lambda-closure".into(), Check::new(m.lambda_closure_residual()?, SPAN_TOL));
            checks.insert("f-closure".into(), Check::new(m.f_closure_residual()?, SPAN_TOL));
            let sol = m.uhlenbeck_filtration()?.solution;
            checks.insert("phi-h-plus".into(), Check::new(sol.model_residual(m.w())?, SPAN_TOL));
        }
        ("nu-invariance" | "real" | "symplectic" | "s1-invariance", SuiteObject::Solution(sol, r)) => {
            let rep = symmetry_predicates(sol, r as i32)?;
            let (name, res) = match suite {
                "nu-invariance" => ("nu", rep.nu_residual),
                "real" => ("real", rep.real_residual),
                "s1-invariance" => ("s1", rep.s1_residual),
                _ => (
                    "symplectic",
                    rep.symplectic_residual
                        .ok_or_else(|| Error::domain("the symplectic suite needs even n"))?,
                ),
            };
            checks.insert(name.into(), Check::new(res, SYMMETRY_TOL));
        }
        ("harmonic-map", SuiteObject::Map(phi)) => {
            let az = compute_az(phi);
            let h = grid_max(&grid.z_points, |z| harmonic_residual(&az, z))?;
            checks.insert("harmonic".into(), Check::new(h, FD_TOL));
            let u = grid_max(&grid.z_points, |z| phi.unitarity_residual(z))?;
            checks.insert("unitary".into(), Check::new(u, SPAN_TOL));
        }
        ("az-filtration", SuiteObject::Filtration(z)) => {
            let r = z.residuals()?;
            checks.insert("inclusion".into(), Check::new(r.inclusion, SPAN_TOL));
            checks.insert("step".into(), Check::new(r.step, SPAN_TOL));
            checks.insert("holomorphic".into(), Check::new(r.holomorphic, FD_TOL));
        }
        ("lift", SuiteObject::Lift(l)) => {
            checks.extend(l.checks.iter().map(|(k, v)| (k.clone(), *v)));
        }
        _ => return Err(mismatch(suite)),
    }
    Ok(Report::new(suite, grid.seed, checks))
}
