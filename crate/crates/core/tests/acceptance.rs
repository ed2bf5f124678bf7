//! Acceptance run: one line per criterion, non-zero exit if any fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64 as C64;

use twistorlift::bundle::{gauss_transform, AnalyticMap, FormKind, Jet, JetFn, Subbundle};
use twistorlift::filtration::{
    burstall_filtration, canonical_f, combine, f_to_az, image_f, involution_y, involution_z, kernel_filtration,
    structure_predicates, CombineVariant,
};
use twistorlift::fixtures::{self, random_model, random_nu_model};
use twistorlift::grassmodel::{symmetry_predicates, ExtendedSolution, GrassModel};
use twistorlift::meromorphic::{differentiate, MeroVec};
use twistorlift::pointlin::{op_norm, CMat};
use twistorlift::twistor::{
    burstall_lift, canonical_lift_for, check_j2, normalize_flag, pi_e, symmetry_check, LiftFlavor, MovingFlag,
};
use twistorlift::verify::{compare_subbundles, grid_max, run_suite, SampleGrid, SuiteObject};
use twistorlift::{Error, Result};

const EXT_TOL: f64 = 1e-6;
const HARM_TOL: f64 = 1e-6;
const NIL_TOL: f64 = 1e-8;
const J2_TOL: f64 = 1e-6;
const SPAN_TOL: f64 = 1e-8;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

struct Case {
    name: String,
    model: GrassModel,
    sol: ExtendedSolution,
}

fn fixture_model(name: &str) -> Result<GrassModel> {
    fixtures::fixture(name)?
        .model()
        .ok_or_else(|| Error::Input(format!("{name} is not a model")))?
        .build()
}

fn case(name: &str, model: GrassModel) -> Result<Case> {
    let sol = model.uhlenbeck_filtration()?.solution;
    Ok(Case {
        name: name.to_string(),
        model,
        sol,
    })
}

/// Model fixtures and 20 seeded random degree ≤ 3 models in ℂ⁴–ℂ⁶.
fn corpus() -> Result<Vec<Case>> {
    let mut out = Vec::new();
    for fx in fixtures::all() {
        if let Some(spec) = fx.model() {
            out.push(case(fx.name, spec.build()?)?);
        }
    }
    for seed in 0..20u64 {
        let n = 4 + (seed % 3) as usize;
        let r = 1 + ((seed / 3) % 3) as usize;
        let spec = random_model(seed, n, r);
        out.push(case(spec.name.as_deref().unwrap_or("random"), spec.build()?)?);
    }
    Ok(out)
}

fn gap(a: &Subbundle, b: &Subbundle, grid: &SampleGrid) -> Result<f64> {
    if a.rank() != b.rank() {
        return Ok(f64::INFINITY);
    }
    compare_subbundles(a, b, grid)
}

fn stage_gap(a: &[Subbundle], b: &[Subbundle], grid: &SampleGrid) -> Result<f64> {
    if a.len() != b.len() {
        return Ok(f64::INFINITY);
    }
    let mut m = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        m = m.max(gap(x, y, grid)?);
    }
    Ok(m)
}

fn worst_of(items: &[(String, f64)]) -> (f64, String) {
    items
        .iter()
        .fold((0.0, String::new()), |acc, (n, v)| if *v > acc.0 || v.is_nan() { (*v, n.clone()) } else { acc })
}

fn c1_extended(cases: &[Case], grid: &SampleGrid) -> Result<Outcome> {
    let mut res = Vec::new();
    for c in cases {
        let rep = run_suite(SuiteObject::Solution(&c.sol, c.model.r()), "extended-solution", grid)?;
        res.push((c.name.clone(), rep.checks["extended-identity"].max_residual));
    }
    let (w, at) = worst_of(&res);
    outcome(w < EXT_TOL, format!("{} models, worst {w:.2e} ({at}); torus has no polynomial Φ", res.len()))
}

fn c2_harmonic(cases: &[Case], grid: &SampleGrid) -> Result<Outcome> {
    let mut res = Vec::new();
    for c in cases {
        let rep = run_suite(SuiteObject::Map(&c.sol.harmonic_map()), "harmonic-map", grid)?;
        res.push((c.name.clone(), rep.checks["harmonic"].max_residual));
    }
    let torus = AnalyticMap::superconformal_torus().unitary();
    let rep = run_suite(SuiteObject::Map(&torus), "harmonic-map", grid)?;
    res.push(("superconformal-torus-cp2".into(), rep.checks["harmonic"].max_residual));
    let (w, at) = worst_of(&res);
    outcome(w < HARM_TOL, format!("{} maps, worst {w:.2e} ({at})", res.len()))
}

fn c3_nilpotent(cases: &[Case], grid: &SampleGrid) -> Result<Outcome> {
    let mut res = Vec::new();
    for c in cases.iter().filter(|c| !c.name.starts_with("random")) {
        let az = c.sol.az();
        let r = c.model.r() as i32;
        let w = grid_max(&grid.z_points, |z| {
            let a = az.eval(z)?;
            let mut p = a.clone();
            for _ in 0..r {
                p = &p * &a;
            }
            Ok(op_norm(&p) / op_norm(&a).max(1.0).powi(r + 1))
        })?;
        res.push((c.name.clone(), w));
    }
    let (w, at) = worst_of(&res);
    outcome(w < NIL_TOL, format!("{} fixtures, worst ‖A^(r+1)‖ {w:.2e} ({at})", res.len()))
}

fn c4_canonical(cases: &[Case]) -> Result<Outcome> {
    let mut lifted = Vec::new();
    let mut skipped = Vec::new();
    let mut failed = Vec::new();
    for c in cases.iter().filter(|c| !c.name.starts_with("random")) {
        if !symmetry_predicates(&c.sol, c.model.r() as i32)?.nu_invariant {
            skipped.push(format!("{} (not ν-invariant)", c.name));
            continue;
        }
        match canonical_lift_for(&c.model, &c.sol) {
            Ok(l) => {
                if !l.pass() {
                    failed.push(c.name.clone());
                }
                lifted.push(c.name.clone());
            }
            Err(Error::NotNormalized(_)) => skipped.push(format!("{} (not normalized)", c.name)),
            Err(e) => return Err(e),
        }
    }
    let mut d = format!("{} lifts pass j2/decomposition/projection", lifted.len() - failed.len());
    if !failed.is_empty() {
        d += &format!("; failing: {}", failed.join(", "));
    }
    if !skipped.is_empty() {
        d += &format!("; skipped: {}", skipped.join(", "));
    }
    outcome(failed.is_empty() && !lifted.is_empty(), d)
}

fn span(n: usize, gens: Vec<MeroVec>) -> Result<Subbundle> {
    Subbundle::from_generators(n, gens)
}

/// span{H₀ + π_E^⊥ H₂} for a constant H₂, with its exact jet.
fn corrected_line(h0: &MeroVec, e: &Subbundle, h2: &[f64]) -> Result<Subbundle> {
    let n = h0.n();
    let d0 = differentiate(h0, 1)?;
    let (h0, e) = (h0.clone(), e.clone());
    let h2 = CMat::from_iterator(n, 1, h2.iter().map(|&x| C64::new(x, 0.0)));
    let jet: JetFn = Arc::new(move |z| {
        let p = e.projector_jet(z)?;
        let v = CMat::from_column_slice(n, 1, &h0.eval(z)?);
        let dv = CMat::from_column_slice(n, 1, &d0.eval(z)?);
        let q = CMat::identity(n, n) - &p.value;
        Ok(Jet {
            value: v + &q * &h2,
            dz: dv - &p.dz * &h2,
            dzbar: -(&p.dzbar * &h2),
        })
    });
    Subbundle::from_jet(n, jet, 1e-9)
}

fn c5_example(grid: &SampleGrid) -> Result<Outcome> {
    let m = fixture_model("example-8.2")?;
    let h0 = fixtures::rational_normal_curve(4);
    let h2 = [0.0, 0.0, 0.0, 1.0];
    let osc = |k: usize| -> Result<Subbundle> { span(4, (0..=k).map(|j| differentiate(&h0, j)).collect::<Result<_>>()?) };
    let (h, h1, h2s) = (osc(0)?, osc(1)?, osc(2)?);
    let g1 = gauss_transform(&h, FormKind::Prime, 1)?;
    let g2 = gauss_transform(&h, FormKind::Prime, 2)?;
    let gauss_vs_osc = gap(&g1, &h1.ominus(&h)?, grid)?.max(gap(&g2, &h2s.ominus(&h1)?, grid)?);
    let line1 = corrected_line(&h0, &h1, &h2)?;
    let line2 = corrected_line(&h0, &h2s, &h2)?;
    let beta3_a = Subbundle::orthogonal_sum(4, &[line1, g1.clone(), g2.clone()])?;
    let beta3_b = Subbundle::orthogonal_sum(4, &[line2.clone(), g1.clone(), g2.clone()])?;
    let beta3_agree = gap(&beta3_a, &beta3_b, grid)?;
    let gamma3 = line2;

    let seg = m.segal_filtration()?.unitons;
    let uhl = m.uhlenbeck_filtration()?;
    let seg_gap = stage_gap(&seg, &[h.clone(), h1.clone(), beta3_a.clone()], grid)?;
    let uhl_gap = stage_gap(&uhl.unitons, &[h2s.clone(), h1.clone(), gamma3.clone()], grid)?;

    let lift = canonical_lift_for(&m, &uhl.solution)?;
    let expected = [gamma3, g1, g2, beta3_a.perp()];
    let lift_gap = stage_gap(lift.flag.legs(), &expected, grid)?;
    let w = seg_gap.max(uhl_gap).max(beta3_agree).max(lift_gap).max(gauss_vs_osc);
    outcome(
        w < SPAN_TOL && lift.pass(),
        format!(
            "segal {seg_gap:.1e}, uhlenbeck {uhl_gap:.1e}, β₃ forms {beta3_agree:.1e}, lift legs {lift_gap:.1e}, G vs osculating {gauss_vs_osc:.1e}"
        ),
    )
}

fn c6_torus(grid: &SampleGrid) -> Result<Outcome> {
    let phi = AnalyticMap::superconformal_torus().subbundle;
    let g3 = gauss_transform(&phi, FormKind::Prime, 3)?;
    let period = gap(&g3, &phi, grid)?;
    let ranks = burstall_filtration(&phi.cartan())?.ranks();
    let lifts = burstall_lift(&phi, None)?;
    let g1 = gauss_transform(&phi, FormKind::Prime, 1)?;
    let g2 = gauss_transform(&phi, FormKind::Prime, 2)?;
    let expected = [g2, phi.clone(), g1];
    let l = lifts.first().ok_or_else(|| Error::contract("no Burstall lift", 1.0))?;
    let legs = stage_gap(l.flag.legs(), &expected, grid)?;
    let j2 = check_j2(&l.flag)?;
    outcome(
        period < 1e-6 && ranks == [3, 2, 1, 0] && legs < SPAN_TOL && j2.pass,
        format!("G‴ vs φ {period:.1e}, ranks {ranks:?}, legs (G″, φ, G′) {legs:.1e}, j2 {:.1e}", j2.residual),
    )
}

fn c7_real(grid: &SampleGrid) -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["real-example-8.2", "real-mixed-pair"] {
        let m = fixture_model(name)?;
        let sol = m.uhlenbeck_filtration()?.solution;
        let lift = canonical_lift_for(&m, &sol)?;
        let sym = if matches!(lift.flavor, LiftFlavor::RealGrassmann | LiftFlavor::Ocs) {
            symmetry_check(&lift.flag, lift.flavor)?.max_residual
        } else {
            f64::INFINITY
        };
        let y = canonical_f(&m)?;
        let fixed = stage_gap(involution_y(&y)?.stages(), y.stages(), grid)?;
        ok &= sym < SPAN_TOL && fixed < SPAN_TOL && lift.pass();
        parts.push(format!("{name}: {:?} symmetry {sym:.1e}, Y fixed {fixed:.1e}", lift.flavor));
    }
    outcome(ok, parts.join("; "))
}

fn c8_symplectic(grid: &SampleGrid) -> Result<Outcome> {
    let m = fixture_model("symplectic-example-8.2")?;
    let sol = m.uhlenbeck_filtration()?.solution;
    let rep = symmetry_predicates(&sol, 3)?;
    let sp = rep.symplectic_residual.unwrap_or(f64::INFINITY);
    let lift = canonical_lift_for(&m, &sol)?;
    let sym = symmetry_check(&lift.flag, LiftFlavor::SpUm)?;
    let pairs: Vec<String> = sym.pairs.iter().map(|(i, j, d)| format!("Jψ{j}=ψ{i} {d:.1e}")).collect();
    // γ₃ read against both candidate sections of the third uniton.
    let h0 = fixtures::symplectic_isotropic_curve();
    let osc = |k: usize| -> Result<Subbundle> { span(6, (0..=k).map(|j| differentiate(&h0, j)).collect::<Result<_>>()?) };
    let h3 = differentiate(&h0, 3)?;
    let delta3 = osc(2)?.sum(&span(6, vec![h3.clone(), differentiate(&h3, 1)?])?)?;
    let gamma3 = &sol.unitons()[2];
    let with_h2 = gap(gamma3, &corrected_line(&h0, &delta3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])?, grid)?;
    outcome(
        lift.flavor == LiftFlavor::SpUm && sym.pass && sp < SPAN_TOL && lift.pass(),
        format!(
            "flavor {:?}, {}, JΦJ⁻¹ = λ⁻³Φ residual {sp:.1e}; γ₃ vs span{{H₀+π⊥H₂}} {with_h2:.1e}",
            lift.flavor,
            pairs.join(", ")
        ),
    )
}

fn c9_duality(cases: &[Case], grid: &SampleGrid) -> Result<Outcome> {
    let mut inv = 0.0f64;
    for c in cases.iter().filter(|c| !c.name.starts_with("random")).take(5) {
        let y = canonical_f(&c.model)?;
        inv = inv.max(stage_gap(involution_y(&involution_y(&y)?)?.stages(), y.stages(), grid)?);
    }
    let mut dual = 0.0f64;
    let mut maps: Vec<(String, Subbundle)> = vec![(
        "superconformal-torus-cp2".into(),
        AnalyticMap::superconformal_torus().subbundle,
    )];
    for name in ["mixed-pair", "frenet-pair", "example-8.2"] {
        let m = fixture_model(name)?;
        maps.push((name.into(), m.uhlenbeck_filtration()?.solution.grassmannian()?));
    }
    for (_, phi) in &maps {
        let img = burstall_filtration(&phi.cartan())?;
        let tilde = involution_z(&img)?;
        let ker = kernel_filtration(&phi.conj().cartan(), img.t())?;
        dual = dual.max(stage_gap(tilde.stages(), ker.stages(), grid)?);
    }
    let mut rev = 0.0f64;
    let mut s1 = Vec::new();
    for c in cases.iter().filter(|c| !c.name.starts_with("random")) {
        let r = c.model.r();
        if !symmetry_predicates(&c.sol, r as i32)?.s1_invariant {
            continue;
        }
        let seg = c.model.segal_filtration()?.unitons;
        let reversed: Vec<Subbundle> = c.sol.unitons().iter().rev().cloned().collect();
        rev = rev.max(stage_gap(&seg, &reversed, grid)?);
        s1.push(c.name.clone());
    }
    outcome(
        inv < SPAN_TOL && dual < SPAN_TOL && rev < SPAN_TOL && !s1.is_empty(),
        format!(
            "Ỹ̃ = Y {inv:.1e}; involution of image = kernel filtration of conj φ {dual:.1e} ({} maps); β_i = γ_(r+1−i) {rev:.1e} on {}",
            maps.len(),
            s1.join(", ")
        ),
    )
}

fn c10_surgery(grid: &SampleGrid) -> Result<Outcome> {
    let variants = [CombineVariant::I, CombineVariant::Ii, CombineVariant::Iii, CombineVariant::Iv];
    let mut runs = 0;
    let mut bad = Vec::new();
    let mut worst = 0.0f64;
    let mut seed = 0u64;
    while runs < 100 {
        let n = 4 + (seed % 3) as usize;
        let r = [1, 3][(seed / 3 % 2) as usize];
        let spec = random_nu_model(seed, n, r);
        seed += 1;
        let m = spec.build()?;
        let sol = m.uhlenbeck_filtration()?.solution;
        let Ok(phi) = sol.grassmannian() else { continue };
        let y = if seed % 2 == 0 { canonical_f(&m)? } else { image_f(&m)? };
        let z = f_to_az(&y, &sol)?.with_grassmannian(phi.clone());
        if structure_predicates(&z)?.splits != Some(true) {
            bad.push(format!("{seed}: no split"));
            continue;
        }
        for (k, v) in variants.iter().enumerate() {
            if (seed as usize + k) % 2 == 1 {
                continue;
            }
            let flag = MovingFlag::from_filtration(&combine(&z, *v)?)?;
            let norm = normalize_flag(&flag)?;
            let base = if matches!(v, CombineVariant::I | CombineVariant::Iii) { 1 } else { -1 };
            let target = if base * norm.sign > 0 { phi.clone() } else { phi.perp() };
            let proj = gap(&pi_e(&norm.flag)?, &target, grid)?;
            let j2 = check_j2(&norm.flag)?.residual;
            worst = worst.max(j2 / J2_TOL).max(proj / SPAN_TOL);
            if j2 >= J2_TOL || proj >= SPAN_TOL || !norm.flag.zero_legs().is_empty() {
                bad.push(format!("{}:{v:?} j2 {j2:.1e} π_e {proj:.1e}", spec.name.clone().unwrap_or_default()));
            }
            runs += 1;
        }
    }
    // Negative controls.
    let line = span(4, vec![MeroVec::from_real_polys(&[&[1.0], &[0.0, 1.0], &[], &[]])])?.conj();
    let corrupted = ExtendedSolution::from_unitons(4, vec![line])?;
    let rep = run_suite(SuiteObject::Solution(&corrupted, 1), "extended-solution", grid)?;
    let corrupted_caught = rep.failures().contains(&"uniton-1-holomorphic");
    let m = fixture_model("example-8.2")?;
    let lift = canonical_lift_for(&m, &m.uhlenbeck_filtration()?.solution)?;
    let mut legs = lift.flag.legs().to_vec();
    legs.swap(1, 2);
    let shuffled = MovingFlag::new(4, legs)?;
    let shuffled_caught = !check_j2(&shuffled)?.pass;
    outcome(
        bad.is_empty() && corrupted_caught && shuffled_caught,
        format!(
            "{runs} combine→normalize runs from {seed} random ν-invariant models, worst residual/threshold {worst:.1e}{}; corrupted uniton caught: {corrupted_caught}; shuffled legs caught: {shuffled_caught}",
            if bad.is_empty() { String::new() } else { format!("; failures: {}", bad.join(", ")) }
        ),
    )
}

fn main() -> ExitCode {
    let grid = SampleGrid::default();
    let t = Instant::now();
    let cases = match corpus() {
        Ok(c) => c,
        Err(e) => {
            println!("corpus construction failed: {e}");
            return ExitCode::FAILURE;
        }
    };
    println!("corpus: {} models built in {:.1}s", cases.len(), t.elapsed().as_secs_f64());
    type Crit<'a> = (&'a str, Box<dyn Fn() -> Result<Outcome> + 'a>);
    let criteria: Vec<Crit> = vec![
        ("extended-solution identity", Box::new(|| c1_extended(&cases, &grid))),
        ("harmonicity", Box::new(|| c2_harmonic(&cases, &grid))),
        ("nilpotency", Box::new(|| c3_nilpotent(&cases, &grid))),
        ("canonical lift", Box::new(|| c4_canonical(&cases))),
        ("example 8.2 reproduction", Box::new(|| c5_example(&grid))),
        ("torus fixture", Box::new(|| c6_torus(&grid))),
        ("real flavor", Box::new(|| c7_real(&grid))),
        ("symplectic flavor", Box::new(|| c8_symplectic(&grid))),
        ("duality and involutions", Box::new(|| c9_duality(&cases, &grid))),
        ("surgery soundness", Box::new(|| c10_surgery(&grid))),
    ];
    let mut all = true;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        all &= pass;
        println!(
            "criterion {:>2} {:<28} {}  [{:.1}s] {detail}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
