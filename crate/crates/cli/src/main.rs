use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use twistorlift::bundle::{AnalyticMap, Subbundle, SAMPLE_SEED};
use twistorlift::filtration::{canonical_f, f_to_az, CombineVariant};
use twistorlift::fixtures::{self, ModelSpec, Symmetry, ANALYTIC_SCHEMA, MODEL_SCHEMA};
use twistorlift::grassmodel::{ExtendedSolution, GrassModel, UnitonFactorization};
use twistorlift::twistor::{
    burstall_lift, canonical_lift_for, real_ocs_lift, strongly_conformal_lifts, uniton_anchored_lift, LiftReport,
};
use twistorlift::verify::{exit_code, run_suite, Report, SampleGrid, SuiteObject, EXIT_FAIL, EXIT_INPUT, FD_TOL, SPAN_TOL};
use twistorlift::{Error, Result};

const GENERATE_SCHEMA: &str = "generate/v1";
const FACTORIZE_SCHEMA: &str = "factorization/v1";

#[derive(Parser)]
#[command(name = "twistorlift", version, about = "Finite uniton number harmonic maps and their twistor lifts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Seed of the verification grid.
    #[arg(long, global = true, default_value_t = SAMPLE_SEED)]
    seed: u64,
    /// Threshold for structural and span checks.
    #[arg(long, global = true, default_value_t = SPAN_TOL)]
    tol_span: f64,
    /// Threshold for finite-difference-backed checks.
    #[arg(long, global = true, default_value_t = FD_TOL)]
    tol_fd: f64,
    /// Write the result here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the model W from a grassmodel/v1 file and check it.
    Generate { input: String },
    /// Uniton factorization of a model.
    Factorize {
        input: String,
        #[arg(long, value_enum, default_value_t = Factorization::Uhlenbeck)]
        pipeline: Factorization,
    },
    /// Twistor lift of a model or analytic map.
    Lift {
        input: String,
        #[arg(long, value_enum, default_value_t = Pipeline::Canonical)]
        pipeline: Pipeline,
        /// Combine variant for the burstall and uniton-anchored pipelines.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<CombineVariant>,
    },
    /// Run verification suites on a model, generate output or analytic map.
    Verify {
        input: String,
        /// Suites to run; defaults to every suite that applies.
        #[arg(long = "suite")]
        suites: Vec<String>,
    },
    /// Built-in fixtures.
    Fixtures {
        #[command(subcommand)]
        action: FixtureAction,
    },
}

#[derive(Subcommand)]
enum FixtureAction {
    List,
    Emit { name: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum Factorization {
    Uhlenbeck,
    Segal,
    Osculating,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pipeline {
    Canonical,
    Burstall,
    StronglyConformal,
    UnitonAnchored,
    RealOcs,
}

fn parse_variant(s: &str) -> std::result::Result<CombineVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Input {
    Model(ModelSpec, GrassModel),
    Analytic(AnalyticMap),
}

impl Input {
    fn name(&self) -> Option<String> {
        match self {
            Input::Model(spec, _) => spec.name.clone(),
            Input::Analytic(a) => Some(a.name.clone()),
        }
    }
}

/// Reads a path, or `fixture:<name>` for a built-in.
fn read_input(arg: &str) -> Result<Input> {
    let value: Value = match arg.strip_prefix("fixture:") {
        Some(name) => fixtures::fixture(name)?.to_json(),
        None => {
            let text = std::fs::read_to_string(arg).map_err(|e| Error::Input(format!("{arg}: {e}")))?;
            serde_json::from_str(&text).map_err(|e| Error::Input(format!("{arg}: {e}")))?
        }
    };
    parse_input(value)
}

fn parse_input(value: Value) -> Result<Input> {
    let schema = value.get("schema").and_then(Value::as_str).unwrap_or_default().to_string();
    match schema.as_str() {
        MODEL_SCHEMA => {
            let spec: ModelSpec = serde_json::from_value(value).map_err(|e| Error::Input(e.to_string()))?;
            let model = spec.build()?;
            Ok(Input::Model(spec, model))
        }
        GENERATE_SCHEMA => {
            let model = value
                .get("model")
                .cloned()
                .ok_or_else(|| Error::Input("generate output without a model".into()))?;
            parse_input(model)
        }
        ANALYTIC_SCHEMA => {
            let name = value.get("name").and_then(Value::as_str).unwrap_or_default();
            if value.as_object().is_some_and(|o| o.keys().any(|k| k != "schema" && k != "name")) {
                return Err(Error::Input("unknown key in analytic/v1 input".into()));
            }
            AnalyticMap::by_name(name)
                .map(Input::Analytic)
                .ok_or_else(|| Error::Input(format!("unknown analytic map {name:?}")))
        }
        other => Err(Error::Input(format!("unsupported schema {other:?}"))),
    }
}

struct Options {
    seed: u64,
    tol_span: f64,
    tol_fd: f64,
}

impl Options {
    fn grid(&self) -> SampleGrid {
        SampleGrid::new(self.seed, 25, 10)
    }

    /// Re-thresholds a report: span checks use `tol_span`, everything
    /// looser uses `tol_fd`.
    fn apply(&self, mut report: Report) -> Report {
        for c in report.checks.values_mut() {
            let thr = if c.threshold <= SPAN_TOL { self.tol_span } else { self.tol_fd };
            *c = twistorlift::verify::Check::new(c.max_residual, thr);
        }
        report.pass = report.checks.values().all(|c| c.pass);
        report
    }

    fn json(&self) -> Value {
        json!({ "seed": self.seed, "tol_span": self.tol_span, "tol_fd": self.tol_fd })
    }
}

fn uhlenbeck(model: &GrassModel) -> Result<ExtendedSolution> {
    Ok(model.uhlenbeck_filtration()?.solution)
}

fn model_report(spec: &ModelSpec, model: &GrassModel, sol: &ExtendedSolution, opts: &Options) -> Result<Report> {
    let grid = opts.grid();
    let r = model.r();
    let mut report = run_suite(SuiteObject::Model(model), "model", &grid)?
        .merge(run_suite(SuiteObject::Solution(sol, r), "extended-solution", &grid)?)
        .merge(run_suite(SuiteObject::Solution(sol, r), "nu-invariance", &grid)?);
    match spec.symmetry {
        Symmetry::None => {}
        Symmetry::Real => report = report.merge(run_suite(SuiteObject::Solution(sol, r), "real", &grid)?),
        Symmetry::Symplectic => report = report.merge(run_suite(SuiteObject::Solution(sol, r), "symplectic", &grid)?),
    }
    Ok(opts.apply(report))
}

fn generate(input: &str, opts: &Options) -> Result<(Value, bool)> {
    let Input::Model(spec, model) = read_input(input)? else {
        return Err(Error::Input("generate needs a grassmodel/v1 input".into()));
    };
    let sol = uhlenbeck(&model)?;
    let mut report = model_report(&spec, &model, &sol, opts)?;
    report.provenance.fixture = spec.name.clone();
    let nu = report.checks.get("nu-invariance/nu").is_some_and(|c| c.pass);
    let pass = report.pass;
    let out = json!({
        "schema": GENERATE_SCHEMA,
        "model": spec,
        "dim": model.dim(),
        "rank_w": model.w().rank(),
        "nu_invariant": nu,
        "report": report,
    });
    Ok((out, pass))
}

fn factorization_json(f: &UnitonFactorization) -> Value {
    let unitons: Vec<Value> = f
        .unitons
        .iter()
        .map(|u| json!({ "rank": u.rank(), "generators": u.generators() }))
        .collect();
    json!({
        "flavor": format!("{:?}", f.flavor).to_lowercase(),
        "filtration_ranks": f.filtration.iter().map(Subbundle::rank).collect::<Vec<_>>(),
        "unitons": unitons,
    })
}

fn factorize(input: &str, kind: Factorization, opts: &Options) -> Result<(Value, bool)> {
    let Input::Model(spec, model) = read_input(input)? else {
        return Err(Error::Input("factorize needs a model input".into()));
    };
    let f = match kind {
        Factorization::Uhlenbeck => model.uhlenbeck_filtration()?,
        Factorization::Segal => model.segal_filtration()?,
        Factorization::Osculating => model.osculating_filtration()?,
    };
    let mut report = opts.apply(run_suite(
        SuiteObject::Solution(&f.solution, model.r()),
        "extended-solution",
        &opts.grid(),
    )?);
    report.provenance.fixture = spec.name.clone();
    let pass = report.pass;
    let mut out = factorization_json(&f);
    out["schema"] = json!(FACTORIZE_SCHEMA);
    out["report"] = serde_json::to_value(&report).expect("report serializes");
    Ok((out, pass))
}

/// Last nonzero stage of the canonical filtration, a uniton of φ.
fn default_alpha(model: &GrassModel, sol: &ExtendedSolution) -> Result<Subbundle> {
    let z = f_to_az(&canonical_f(model)?, sol)?;
    z.stages()
        .iter()
        .rev()
        .find(|s| s.rank() > 0)
        .cloned()
        .ok_or_else(|| Error::domain("canonical filtration is trivial"))
}

fn lift(input: &str, pipeline: Pipeline, variant: Option<CombineVariant>, opts: &Options) -> Result<(Value, bool)> {
    let loaded = read_input(input)?;
    let name = loaded.name();
    let (phi, model) = match &loaded {
        Input::Model(_, m) => {
            let sol = uhlenbeck(m)?;
            (sol.grassmannian()?, Some((m, sol)))
        }
        Input::Analytic(a) => (a.subbundle.clone(), None),
    };
    let lifts: Vec<LiftReport> = match pipeline {
        Pipeline::Canonical => {
            let (m, sol) = model.as_ref().ok_or_else(|| Error::Input("the canonical pipeline needs a model".into()))?;
            vec![canonical_lift_for(m, sol)?]
        }
        Pipeline::Burstall => burstall_lift(&phi, variant)?,
        Pipeline::StronglyConformal => vec![strongly_conformal_lifts(&phi, None)?],
        Pipeline::UnitonAnchored => {
            let alpha = match &model {
                Some((m, sol)) => default_alpha(m, sol)?,
                None => Subbundle::full(phi.n()),
            };
            vec![uniton_anchored_lift(&phi, &alpha, variant)?]
        }
        Pipeline::RealOcs => vec![real_ocs_lift(&phi, None)?],
    };
    let mut pass = !lifts.is_empty();
    let items: Vec<Value> = lifts
        .iter()
        .map(|l| {
            let mut report = opts.apply(run_suite(SuiteObject::Lift(l), "lift", &opts.grid())?);
            report.provenance.fixture = name.clone();
            pass &= report.pass;
            let mut v = l.summary();
            v["pass"] = json!(report.pass);
            v["report"] = serde_json::to_value(&report).expect("report serializes");
            Ok(v)
        })
        .collect::<Result<_>>()?;
    Ok((json!({ "lifts": items, "pass": pass }), pass))
}

fn verify(input: &str, suites: &[String], opts: &Options) -> Result<(Value, bool)> {
    let grid = opts.grid();
    let report = match read_input(input)? {
        Input::Model(spec, model) => {
            let sol = uhlenbeck(&model)?;
            if suites.is_empty() {
                model_report(&spec, &model, &sol, opts)?
            } else {
                let mut acc: Option<Report> = None;
                for s in suites {
                    let obj = if s == "model" {
                        SuiteObject::Model(&model)
                    } else {
                        SuiteObject::Solution(&sol, model.r())
                    };
                    let r = run_suite(obj, s, &grid)?;
                    acc = Some(match acc {
                        None => Report::new("verify", grid.seed, Default::default()).merge(r),
                        Some(a) => a.merge(r),
                    });
                }
                opts.apply(acc.expect("at least one suite"))
            }
        }
        Input::Analytic(a) => {
            let u = a.unitary();
            if suites.iter().any(|s| s != "harmonic-map") {
                return Err(Error::domain("analytic maps support the harmonic-map suite only"));
            }
            opts.apply(run_suite(SuiteObject::Map(&u), "harmonic-map", &grid)?).with_fixture(&a.name)
        }
    };
    let pass = report.pass;
    Ok((serde_json::to_value(&report).expect("report serializes"), pass))
}

fn emit(value: &Value, output: Option<&PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON value serializes");
    match output {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| Error::Input(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Input(format!("stdout: {e}"))),
                _ => Ok(()),
            }
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let opts = Options {
        seed: cli.seed,
        tol_span: cli.tol_span,
        tol_fd: cli.tol_fd,
    };
    let (mut out, pass, job) = match &cli.command {
        Command::Generate { input } => {
            let (o, p) = generate(input, &opts)?;
            (o, p, json!({ "command": "generate", "input": input }))
        }
        Command::Factorize { input, pipeline } => {
            let (o, p) = factorize(input, *pipeline, &opts)?;
            let name = pipeline.to_possible_value().expect("named").get_name().to_string();
            (o, p, json!({ "command": "factorize", "input": input, "pipeline": name }))
        }
        Command::Lift { input, pipeline, variant } => {
            let (o, p) = lift(input, *pipeline, *variant, &opts)?;
            let name = pipeline.to_possible_value().expect("named").get_name().to_string();
            (o, p, json!({ "command": "lift", "input": input, "pipeline": name, "variant": variant }))
        }
        Command::Verify { input, suites } => {
            let (o, p) = verify(input, suites, &opts)?;
            (o, p, json!({ "command": "verify", "input": input, "suites": suites }))
        }
        Command::Fixtures { action: FixtureAction::List } => {
            let list: Vec<Value> = fixtures::catalogue()
                .iter()
                .map(|(n, s)| json!({ "name": n, "summary": s }))
                .collect();
            (json!({ "fixtures": list }), true, Value::Null)
        }
        Command::Fixtures { action: FixtureAction::Emit { name } } => (fixtures::fixture(name)?.to_json(), true, Value::Null),
    };
    if !job.is_null() {
        let mut job = job;
        job["options"] = opts.json();
        out["job"] = job;
    }
    emit(&out, cli.output.as_ref())?;
    Ok(if pass { 0 } else { EXIT_FAIL })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
