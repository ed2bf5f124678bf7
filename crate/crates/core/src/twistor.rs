//! Moving flags ψ = (ψ₀, …, ψ_t), the J₁/J₂ and superhorizontality checks,
//! the twistor projection π_e, leg surgery and the lift pipelines.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::bundle::{at_generic_points, subbundle_distance, MatFn, Subbundle, FD_RANK_TOL, PREDICATE_TOL, SAMPLE_SEED};
use crate::error::{Error, Result};
use crate::filtration::{
    burstall_filtration, canonical_f, combine, f_to_az, hat_legs, real_isotropic_filtration, structure_predicates,
    uniton_anchored, AzFiltration, CombineVariant,
};
use crate::grassmodel::{symmetry_predicates, ExtendedSolution, GrassModel};
use crate::pointlin::{op_norm, CMat, QuatStructure};
use crate::verify::Check;

/// Threshold for forbidden second fundamental forms.
pub const J2_TOL: f64 = 1e-6;
/// Threshold for orthogonality, projection and symmetry distances.
pub const FLAG_TOL: f64 = 1e-8;
/// A′_{ψ_i,ψ_{i+1}} counts as zero below this (relative) norm.
pub const VANISH_TOL: f64 = 1e-8;
const GRID: usize = 9;

fn ident(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Mutually orthogonal legs summing to ℂⁿ; zero legs are allowed.
#[derive(Clone, Debug)]
pub struct MovingFlag {
    n: usize,
    legs: Vec<Subbundle>,
}

impl MovingFlag {
    pub fn new(n: usize, legs: Vec<Subbundle>) -> Result<Self> {
        if legs.is_empty() {
            return Err(Error::domain("a moving flag needs at least one leg"));
        }
        if legs.iter().any(|l| l.n() != n) {
            return Err(Error::domain("leg lives in a different ambient dimension"));
        }
        let total: usize = legs.iter().map(Subbundle::rank).sum();
        if total != n {
            return Err(Error::contract(format!("leg ranks sum to {total}, not {n}"), (total as f64 - n as f64).abs()));
        }
        let flag = MovingFlag { n, legs };
        let res = flag.decomposition_residual()?;
        if res > FLAG_TOL {
            return Err(Error::contract("legs are not an orthogonal decomposition", res));
        }
        Ok(flag)
    }

    /// ψ_i = Z_i ⊖ Z_{i+1}.
    pub fn from_filtration(z: &AzFiltration) -> Result<Self> {
        Self::new(z.n(), z.legs()?)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn legs(&self) -> &[Subbundle] {
        &self.legs
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.legs.iter().map(Subbundle::rank).collect()
    }

    pub fn t(&self) -> usize {
        self.legs.len() - 1
    }

    pub fn zero_legs(&self) -> Vec<usize> {
        (0..self.legs.len()).filter(|&i| self.legs[i].rank() == 0).collect()
    }

    /// max(‖Σπ_i − I‖, max_{i<j}‖π_iπ_j‖) over the grid.
    pub fn decomposition_residual(&self) -> Result<f64> {
        worst(SAMPLE_SEED ^ 0x60, |z| {
            let ps = self.legs.iter().map(|l| l.projector(z)).collect::<Result<Vec<_>>>()?;
            let mut sum = -ident(self.n);
            let mut w = 0.0f64;
            for (i, p) in ps.iter().enumerate() {
                sum += p;
                for q in &ps[i + 1..] {
                    w = w.max(op_norm(&(p * q)));
                }
            }
            Ok(w.max(op_norm(&sum)))
        })
    }

    /// M[i][j] = max over the grid of ‖A′_{ψ_i,ψ_j}‖ = ‖π_j ∂_zπ_i π_i‖,
    /// relative to max(1, max_i ‖∂_zπ_i‖).
    pub fn form_norms(&self) -> Result<Vec<Vec<f64>>> {
        let k = self.legs.len();
        let rows = at_generic_points(SAMPLE_SEED ^ 0x61, GRID, |z| {
            let jets = self.legs.iter().map(|l| l.projector_jet(z)).collect::<Result<Vec<_>>>()?;
            let scale = jets.iter().map(|j| op_norm(&j.dz)).fold(1.0, f64::max);
            let mut m = vec![vec![0.0; k]; k];
            for i in 0..k {
                if self.legs[i].rank() == 0 {
                    continue;
                }
                let d = &jets[i].dz * &jets[i].value;
                for j in 0..k {
                    if i != j && self.legs[j].rank() > 0 {
                        m[i][j] = op_norm(&(&jets[j].value * &d)) / scale;
                    }
                }
            }
            Ok(m)
        })?;
        let mut out = vec![vec![0.0f64; k]; k];
        for (_, m) in rows {
            for i in 0..k {
                for j in 0..k {
                    out[i][j] = out[i][j].max(m[i][j]);
                }
            }
        }
        Ok(out)
    }
}

fn worst(seed: u64, mut f: impl FnMut(C64) -> Result<f64>) -> Result<f64> {
    Ok(at_generic_points(seed, GRID, |z| f(z))?
        .into_iter()
        .map(|(_, x)| x)
        .fold(0.0, f64::max))
}

/// Largest forbidden form, with the offending pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FormReport {
    pub residual: f64,
    pub threshold: f64,
    pub pass: bool,
    pub worst_pair: Option<(usize, usize)>,
}

fn form_report(flag: &MovingFlag, forbidden: impl Fn(usize, usize) -> bool) -> Result<FormReport> {
    let m = flag.form_norms()?;
    let mut res = 0.0f64;
    let mut pair = None;
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i != j && forbidden(i, j) && v > res {
                res = v;
                pair = Some((i, j));
            }
        }
    }
    Ok(FormReport {
        residual: res,
        threshold: J2_TOL,
        pass: res < J2_TOL,
        worst_pair: pair,
    })
}

/// A′_{ψ_i,ψ_j} = 0 whenever i > j.
pub fn check_j1(flag: &MovingFlag) -> Result<FormReport> {
    form_report(flag, |i, j| i > j)
}

/// A′_{ψ_i,ψ_j} = 0 whenever i − j is positive and odd or j − i is
/// positive and even.
pub fn check_j2(flag: &MovingFlag) -> Result<FormReport> {
    form_report(flag, |i, j| (i > j && (i - j) % 2 == 1) || (j > i && (j - i) % 2 == 0))
}

/// β_i = ψ₀ ⊕ … ⊕ ψ_{i−1} holomorphic with ∂_zΓ(β_i) ⊆ β_{i+1}: every form
/// other than A′_{ψ_i,ψ_{i+1}} vanishes.
pub fn check_superhorizontal(flag: &MovingFlag) -> Result<FormReport> {
    form_report(flag, |i, j| j < i || j >= i + 2)
}

/// π_e(ψ) = ψ₀ ⊕ ψ₂ ⊕ ….
pub fn pi_e(flag: &MovingFlag) -> Result<Subbundle> {
    let even: Vec<Subbundle> = flag.legs.iter().step_by(2).cloned().collect();
    Subbundle::orthogonal_sum(flag.n, &even)
}

/// The four leg operations; indices refer to the flag they act on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "index", rename_all = "snake_case")]
pub enum SurgeryOp {
    RemoveFirstZero,
    RemoveLastZero,
    RemoveInnerZero(usize),
    MergeOnVanishing(usize),
}

fn osum(n: usize, a: &Subbundle, b: &Subbundle) -> Result<Subbundle> {
    Subbundle::orthogonal_sum(n, &[a.clone(), b.clone()])
}

/// Applies one operation without re-checking J₂; returns the new legs and
/// the sign ε with π_e(new) = ε·π_e(old).
fn apply_op(flag: &MovingFlag, op: SurgeryOp) -> Result<(Vec<Subbundle>, i8)> {
    let legs = &flag.legs;
    let t = flag.t();
    let n = flag.n;
    let zero = |i: usize| -> Result<()> {
        if legs[i].rank() == 0 {
            Ok(())
        } else {
            Err(Error::contract(format!("leg ψ_{i} is not zero"), legs[i].rank() as f64))
        }
    };
    let get = |i: i64| -> Subbundle {
        if i < 0 || i as usize > t {
            Subbundle::zero(n)
        } else {
            legs[i as usize].clone()
        }
    };
    match op {
        SurgeryOp::RemoveFirstZero => {
            if t == 0 {
                return Err(Error::domain("cannot remove the only leg"));
            }
            zero(0)?;
            Ok((legs[1..].to_vec(), -1))
        }
        SurgeryOp::RemoveLastZero => {
            if t == 0 {
                return Err(Error::domain("cannot remove the only leg"));
            }
            zero(t)?;
            Ok((legs[..t].to_vec(), 1))
        }
        SurgeryOp::RemoveInnerZero(i) => {
            if i == 0 || i >= t {
                return Err(Error::domain(format!("ψ_{i} is not an inner leg")));
            }
            zero(i)?;
            let mut out = legs[..i - 1].to_vec();
            out.push(osum(n, &legs[i - 1], &legs[i + 1])?);
            out.extend_from_slice(&legs[i + 2..]);
            Ok((out, 1))
        }
        SurgeryOp::MergeOnVanishing(i) => {
            if i >= t {
                return Err(Error::domain(format!("no pair (ψ_{i}, ψ_{})", i + 1)));
            }
            if t < 2 {
                return Err(Error::domain("merging would not shorten a two-leg flag"));
            }
            let v = flag.form_norms()?[i][i + 1];
            if v > VANISH_TOL {
                return Err(Error::contract(format!("A′(ψ_{i}, ψ_{}) does not vanish", i + 1), v));
            }
            let ii = i as i64;
            let a = osum(n, &get(ii - 1), &get(ii + 1))?;
            let b = osum(n, &get(ii), &get(ii + 2))?;
            let mut out = if i == 0 { Vec::new() } else { legs[..i - 1].to_vec() };
            out.push(a);
            out.push(b);
            if i + 3 <= t {
                out.extend_from_slice(&legs[i + 3..]);
            }
            // The merged pair starts at position i − 1; for i = 0 that shifts
            // every leg by one and swaps the parity of π_e.
            Ok((out, if i == 0 { -1 } else { 1 }))
        }
    }
}

/// One surgery step; a J₂ input must give a J₂ output.
pub fn surgery(flag: &MovingFlag, op: SurgeryOp) -> Result<(MovingFlag, i8)> {
    let before = check_j2(flag)?.pass;
    let (legs, sign) = apply_op(flag, op)?;
    let out = MovingFlag::new(flag.n, legs)?;
    if before {
        let after = check_j2(&out)?;
        if !after.pass {
            return Err(Error::contract("surgery broke the J₂ condition", after.residual));
        }
    }
    Ok((out, sign))
}

#[derive(Clone, Debug)]
pub struct Normalized {
    pub flag: MovingFlag,
    pub sign: i8,
    pub ops: Vec<SurgeryOp>,
}

fn next_zero_op(flag: &MovingFlag) -> Option<SurgeryOp> {
    let zeros = flag.zero_legs();
    let t = flag.t();
    if t == 0 {
        return None;
    }
    if zeros.first() == Some(&0) {
        Some(SurgeryOp::RemoveFirstZero)
    } else if zeros.last() == Some(&t) {
        Some(SurgeryOp::RemoveLastZero)
    } else {
        zeros.first().map(|&i| SurgeryOp::RemoveInnerZero(i))
    }
}

/// Operations 1–4 until no leg is zero and no A′_{ψ_i,ψ_{i+1}} vanishes.
pub fn normalize_flag(flag: &MovingFlag) -> Result<Normalized> {
    let mut cur = flag.clone();
    let mut sign = 1i8;
    let mut ops = Vec::new();
    loop {
        let op = match next_zero_op(&cur) {
            Some(op) => Some(op),
            None if cur.t() >= 2 => {
                let m = cur.form_norms()?;
                (0..cur.t()).find(|&i| m[i][i + 1] <= VANISH_TOL).map(SurgeryOp::MergeOnVanishing)
            }
            None => None,
        };
        let Some(op) = op else { break };
        let (legs, s) = apply_op(&cur, op)?;
        cur = MovingFlag::new(cur.n, legs)?;
        sign *= s;
        ops.push(op);
    }
    Ok(Normalized { flag: cur, sign, ops })
}

/// Zero-leg removal in conjugate pairs ψ_i, ψ_{t−i}, so that a symmetric
/// flag stays symmetric.
pub fn normalize_symmetric(flag: &MovingFlag) -> Result<Normalized> {
    let mut cur = flag.clone();
    let mut sign = 1i8;
    let mut ops = Vec::new();
    loop {
        let t = cur.t();
        let Some(&i) = cur.zero_legs().first() else { break };
        if t == 0 {
            break;
        }
        let j = t - i;
        let plan: Vec<SurgeryOp> = if i == 0 {
            vec![SurgeryOp::RemoveFirstZero, SurgeryOp::RemoveLastZero]
        } else if j <= i + 1 {
            vec![SurgeryOp::RemoveInnerZero(i)]
        } else {
            vec![SurgeryOp::RemoveInnerZero(j), SurgeryOp::RemoveInnerZero(i)]
        };
        for op in plan {
            if op == SurgeryOp::RemoveLastZero && cur.legs.last().map(Subbundle::rank) != Some(0) {
                return Err(Error::contract("flag is not symmetric: zero leg without a zero partner", 1.0));
            }
            let (legs, s) = apply_op(&cur, op)?;
            cur = MovingFlag::new(cur.n, legs)?;
            sign *= s;
            ops.push(op);
        }
    }
    Ok(Normalized { flag: cur, sign, ops })
}

/// Target space of a lift.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LiftFlavor {
    Complex,
    RealGrassmann,
    Ocs,
    QuaternionicGrassmann,
    SpUm,
}

impl LiftFlavor {
    fn for_legs(real: bool, legs: usize) -> Self {
        match (real, legs % 2 == 1) {
            (true, true) => LiftFlavor::RealGrassmann,
            (true, false) => LiftFlavor::Ocs,
            (false, true) => LiftFlavor::QuaternionicGrassmann,
            (false, false) => LiftFlavor::SpUm,
        }
    }
}

/// J·V = Ω·conj(V) on ℂ^{2m}.
pub fn quat_subbundle(v: &Subbundle) -> Result<Subbundle> {
    let q = QuatStructure::for_dim(v.n())?;
    v.conj().map_unitary(&q.omega())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SymmetryCheck {
    pub flavor: LiftFlavor,
    /// (i, t − i, distance between ψ_i and σψ_{t−i}).
    pub pairs: Vec<(usize, usize, f64)>,
    pub max_residual: f64,
    pub pass: bool,
}

/// ψ_i = conj ψ_{t−i} (real flavors) or ψ_i = Jψ_{t−i} (quaternionic ones).
pub fn symmetry_check(flag: &MovingFlag, flavor: LiftFlavor) -> Result<SymmetryCheck> {
    let legs = flag.legs.len();
    let odd = match flavor {
        LiftFlavor::Complex => return Err(Error::domain("the complex flavor has no flag symmetry")),
        LiftFlavor::RealGrassmann | LiftFlavor::QuaternionicGrassmann => true,
        LiftFlavor::Ocs | LiftFlavor::SpUm => false,
    };
    if (legs % 2 == 1) != odd {
        return Err(Error::domain(format!("{legs} legs do not fit the {flavor:?} flag type")));
    }
    let quat = matches!(flavor, LiftFlavor::QuaternionicGrassmann | LiftFlavor::SpUm);
    let t = flag.t();
    let mut pairs = Vec::new();
    for i in 0..=t / 2 {
        let other = &flag.legs[t - i];
        let image = if quat { quat_subbundle(other)? } else { other.conj() };
        let d = if image.rank() != flag.legs[i].rank() {
            1.0
        } else if image.rank() == 0 {
            0.0
        } else {
            subbundle_distance(&flag.legs[i], &image, GRID)?
        };
        pairs.push((i, t - i, d));
    }
    let max_residual = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    Ok(SymmetryCheck {
        flavor,
        pairs,
        max_residual,
        pass: max_residual < FLAG_TOL,
    })
}

/// Output of a lift pipeline.
#[derive(Clone, Debug)]
pub struct LiftReport {
    pub pipeline: String,
    pub flag: MovingFlag,
    /// The map the pipeline started from.
    pub phi: Subbundle,
    /// π_e(flag) = φ for +1, φ^⊥ for −1.
    pub sign: i8,
    pub flavor: LiftFlavor,
    pub checks: BTreeMap<String, Check>,
    /// Residuals recorded for information only.
    pub info: BTreeMap<String, f64>,
    pub ops: Vec<SurgeryOp>,
    pub notes: Vec<String>,
}

impl LiftReport {
    fn assemble(
        pipeline: &str,
        flag: MovingFlag,
        phi: &Subbundle,
        sign: i8,
        flavor: LiftFlavor,
        ops: Vec<SurgeryOp>,
        notes: Vec<String>,
    ) -> Result<Self> {
        let mut checks = BTreeMap::new();
        let mut info = BTreeMap::new();
        let j2 = check_j2(&flag)?;
        checks.insert("j2".to_string(), Check::new(j2.residual, J2_TOL));
        checks.insert("decomposition".to_string(), Check::new(flag.decomposition_residual()?, FLAG_TOL));
        let target = if sign > 0 { phi.clone() } else { phi.perp() };
        let proj = pi_e(&flag)?;
        let d = if proj.rank() != target.rank() {
            1.0
        } else if proj.rank() == 0 {
            0.0
        } else {
            subbundle_distance(&proj, &target, GRID)?
        };
        checks.insert("projection".to_string(), Check::new(d, FLAG_TOL));
        if flavor != LiftFlavor::Complex {
            let s = symmetry_check(&flag, flavor)?;
            checks.insert("symmetry".to_string(), Check::new(s.max_residual, FLAG_TOL));
        }
        info.insert("j1".to_string(), check_j1(&flag)?.residual);
        info.insert("superhorizontal".to_string(), check_superhorizontal(&flag)?.residual);
        Ok(LiftReport {
            pipeline: pipeline.to_string(),
            flag,
            phi: phi.clone(),
            sign,
            flavor,
            checks,
            info,
            ops,
            notes,
        })
    }

    pub fn target(&self) -> Subbundle {
        if self.sign > 0 {
            self.phi.clone()
        } else {
            self.phi.perp()
        }
    }

    pub fn pass(&self) -> bool {
        self.checks.values().all(|c| c.pass)
    }

    pub fn is_superhorizontal(&self) -> bool {
        self.info.get("superhorizontal").is_some_and(|&r| r < J2_TOL)
    }

    /// JSON "lift/v1": legs as generator lists (or a sampled frame) with
    /// ranks, the residual table, flavor and the surgery trace.
    pub fn summary(&self) -> serde_json::Value {
        let z0 = crate::bundle::sample_points(SAMPLE_SEED, 1)[0];
        let legs: Vec<serde_json::Value> = self
            .flag
            .legs
            .iter()
            .map(|l| {
                let gens = l.generators().map(|g| serde_json::to_value(g).unwrap_or_default());
                let frame = if gens.is_none() && l.rank() > 0 {
                    l.frame(z0).ok().map(|f| {
                        let m = f.matrix();
                        (0..m.ncols())
                            .map(|c| (0..m.nrows()).map(|r| [m[(r, c)].re, m[(r, c)].im]).collect::<Vec<_>>())
                            .collect::<Vec<_>>()
                    })
                } else {
                    None
                };
                serde_json::json!({ "rank": l.rank(), "generators": gens, "frame_at": frame.map(|f| serde_json::json!({"z": [z0.re, z0.im], "columns": f})) })
            })
            .collect();
        serde_json::json!({
            "schema": "lift/v1",
            "pipeline": self.pipeline,
            "flavor": self.flavor,
            "target": if self.sign > 0 { "phi" } else { "phi_perp" },
            "sign": self.sign,
            "ranks": self.flag.ranks(),
            "legs": legs,
            "checks": self.checks,
            "info": self.info,
            "ops": self.ops,
            "notes": self.notes,
            "pass": self.pass(),
        })
    }
}

/// The canonical lift ψ_i = P₀Φ⁻¹Y_i ⊖ P₀Φ⁻¹Y_{i+1} of φ = Φ_{−1}, with Φ the
/// Uhlenbeck extended solution of the model.
pub fn canonical_lift(model: &GrassModel) -> Result<LiftReport> {
    let sol = model.uhlenbeck_filtration()?.solution;
    canonical_lift_for(model, &sol)
}

pub fn canonical_lift_for(model: &GrassModel, sol: &ExtendedSolution) -> Result<LiftReport> {
    let r = model.r() as i32;
    let sym = symmetry_predicates(sol, r)?;
    if !sym.nu_invariant {
        return Err(Error::domain(format!(
            "extended solution is not ν-invariant (residual {:.3e})",
            sym.nu_residual
        )));
    }
    let phi = sol.grassmannian()?;
    let z = f_to_az(&canonical_f(model)?, sol)?;
    let flag = MovingFlag::from_filtration(&z)?;
    if let Some(&i) = flag.zero_legs().first() {
        return Err(Error::NotNormalized(format!("canonical leg ψ_{i} is zero")));
    }
    let legs = flag.legs.len();
    let flavor = if sym.symplectic == Some(true) {
        LiftFlavor::for_legs(false, legs)
    } else if sym.real {
        LiftFlavor::for_legs(true, legs)
    } else {
        LiftFlavor::Complex
    };
    let notes = vec![format!("degree {r}; S¹-invariant: {}", sym.s1_invariant)];
    LiftReport::assemble("canonical", flag, &phi, 1, flavor, Vec::new(), notes)
}

fn combined_lift(
    pipeline: &str,
    z: &AzFiltration,
    phi: &Subbundle,
    variant: CombineVariant,
    mut notes: Vec<String>,
) -> Result<LiftReport> {
    let c = combine(z, variant)?;
    let flag = MovingFlag::from_filtration(&c)?;
    let norm = normalize_flag(&flag)?;
    // Variants iii and i start with ψ̂₀ ⊆ φ; ii and iv with ψ̂₁ ⊆ φ^⊥.
    let base: i8 = match variant {
        CombineVariant::I | CombineVariant::Iii => 1,
        CombineVariant::Ii | CombineVariant::Iv => -1,
    };
    notes.push(format!("combine({variant:?})").to_lowercase());
    LiftReport::assemble(pipeline, norm.flag, phi, base * norm.sign, LiftFlavor::Complex, norm.ops, notes)
}

/// Image-of-powers filtration, made alternating by combine (iii) when
/// ψ̂₀ ≠ 0 and (iv) when ψ̂₁ ≠ 0; both lifts are returned when both apply.
/// A given variant is used as is.
pub fn burstall_lift(phi: &Subbundle, variant: Option<CombineVariant>) -> Result<Vec<LiftReport>> {
    let z = burstall_filtration(&phi.cartan())?.with_grassmannian(phi.clone());
    if let Some(v) = variant {
        return Ok(vec![combined_lift("burstall", &z, phi, v, Vec::new())?]);
    }
    let hat = hat_legs(&z)?;
    let mut out = Vec::new();
    if hat[0].rank() > 0 {
        out.push(combined_lift("burstall", &z, phi, CombineVariant::Iii, vec!["case (a)".into()])?);
    }
    if hat[1].rank() > 0 {
        out.push(combined_lift("burstall", &z, phi, CombineVariant::Iv, vec!["case (b)".into()])?);
    }
    Ok(out)
}

/// ‖π^⊥ ∂_z π π‖ = ‖A′_φ‖ and friends, as pointwise matrix functions.
fn a_prime(phi: &Subbundle) -> (MatFn, MatFn) {
    let n = phi.n();
    let (p1, p2) = (phi.clone(), phi.clone());
    let fwd: MatFn = Arc::new(move |z| {
        let j = p1.projector_jet(z)?;
        Ok((ident(n) - &j.value) * &j.dz * &j.value)
    });
    let back: MatFn = Arc::new(move |z| {
        let j = p2.projector_jet(z)?;
        let q = ident(n) - &j.value;
        Ok(-(&j.value * &j.dz * q))
    });
    (fwd, back)
}

/// (V, φ, W) with V = W^⊥ ∩ φ^⊥, for φ strongly conformal and
/// Im A′_φ ⊆ W ⊆ ker A′_{φ^⊥}; W defaults to Im A′_φ.
pub fn strongly_conformal_lifts(phi: &Subbundle, w: Option<&Subbundle>) -> Result<LiftReport> {
    let n = phi.n();
    let perp = phi.perp();
    let (fwd, back) = a_prime(phi);
    let (f1, b1) = (fwd.clone(), back.clone());
    let (hol, anti, sc) = {
        let p = phi.clone();
        let mut acc = (0.0f64, 0.0f64, 0.0f64);
        for (_, (h, a, s)) in at_generic_points(SAMPLE_SEED ^ 0x62, GRID, |z| {
            let j = p.projector_jet(z)?;
            let q = ident(n) - &j.value;
            let scale = op_norm(&j.dz).max(1.0);
            let h = op_norm(&(&q * &j.dzbar * &j.value)) / scale;
            let a = op_norm(&(&q * &j.dz * &j.value)) / scale;
            let s = op_norm(&(b1(z)? * f1(z)?)) / (scale * scale);
            Ok((h, a, s))
        })? {
            acc = (acc.0.max(h), acc.1.max(a), acc.2.max(s));
        }
        acc
    };
    if hol < PREDICATE_TOL || anti < PREDICATE_TOL {
        return Err(Error::domain("φ is holomorphic or antiholomorphic"));
    }
    if sc > PREDICATE_TOL {
        return Err(Error::contract("φ is not strongly conformal: A′_{φ^⊥}∘A′_φ ≠ 0", sc));
    }
    let im = Subbundle::image_of(n, fwd.clone(), FD_RANK_TOL)?;
    let ker = Subbundle::kernel_of(n, back.clone(), FD_RANK_TOL)?;
    let w = match w {
        Some(w) => w.clone(),
        None => im.clone(),
    };
    let (wf, pf) = (w.clone(), perp.clone());
    let (f2, b2) = (fwd, back);
    let sandwich = worst(SAMPLE_SEED ^ 0x63, |z| {
        let jw = wf.projector_jet(z)?;
        let pp = pf.projector(z)?;
        let scale = op_norm(&jw.dz).max(1.0);
        let lower = op_norm(&((ident(n) - &jw.value) * f2(z)?));
        let upper = op_norm(&(b2(z)? * &jw.value));
        let inside = op_norm(&((ident(n) - &pp) * &jw.value));
        let holo = op_norm(&((&pp - &jw.value) * &jw.dzbar * &jw.value)) / scale;
        Ok(lower.max(upper).max(inside).max(holo))
    })?;
    if sandwich > PREDICATE_TOL {
        return Err(Error::contract("W violates Im A′_φ ⊆ W ⊆ ker A′_{φ^⊥} or is not holomorphic", sandwich));
    }
    let v = perp.ominus(&w)?;
    let flag = MovingFlag::new(n, vec![v, phi.clone(), w])?;
    let mut notes = Vec::new();
    if im.rank() + phi.rank() == ker.rank() {
        notes.push("W is forced: Im A′_φ = ker A′_{φ^⊥} ∩ φ^⊥, so this J₂-holomorphic lift is unique".into());
    }
    LiftReport::assemble("strongly-conformal", flag, phi, -1, LiftFlavor::Complex, Vec::new(), notes)
}

/// Filtration through the uniton α (Z_k = α), made alternating by
/// combine (iii) or (iv) unless a variant is given, then normalized.
pub fn uniton_anchored_lift(
    phi: &Subbundle,
    alpha: &Subbundle,
    variant: Option<CombineVariant>,
) -> Result<LiftReport> {
    let (z, k) = uniton_anchored(&phi.cartan(), alpha)?;
    let z = z.with_grassmannian(phi.clone());
    let variant = match variant {
        Some(v) => v,
        None if hat_legs(&z)?[0].rank() > 0 => CombineVariant::Iii,
        None => CombineVariant::Iv,
    };
    let notes = vec![format!("α = Z_{k} of a filtration with ranks {:?}", z.ranks())];
    let mut rep = combined_lift("uniton-anchored", &z, phi, variant, notes)?;
    let inside: Vec<usize> = (0..rep.flag.legs.len())
        .filter(|&i| {
            let l = &rep.flag.legs[i];
            l.rank() > 0 && l.intersect(alpha).map(|x| x.rank() == l.rank()).unwrap_or(false)
        })
        .collect();
    rep.notes.push(format!("legs contained in α: {inside:?}"));
    Ok(rep)
}

/// Real φ (conj φ = φ or conj φ = φ^⊥): a real strict filtration through the
/// isotropic uniton α (default 0), used directly when it already alternates
/// and otherwise combined by variant (i), then zero legs removed in
/// conjugate pairs.
pub fn real_ocs_lift(phi: &Subbundle, alpha: Option<&Subbundle>) -> Result<LiftReport> {
    let n = phi.n();
    let c = phi.conj();
    let d_same = subbundle_distance(&c, phi, GRID)?;
    let d_perp = if c.rank() + phi.rank() == n {
        subbundle_distance(&c, &phi.perp(), GRID)?
    } else {
        f64::INFINITY
    };
    if d_same.min(d_perp) > FLAG_TOL {
        return Err(Error::contract("φ is neither real nor an orthogonal complex structure", d_same.min(d_perp)));
    }
    let alpha = alpha.cloned().unwrap_or_else(|| Subbundle::zero(n));
    let z = real_isotropic_filtration(&phi.cartan(), &alpha)?.with_grassmannian(phi.clone());
    let rep = structure_predicates(&z)?;
    let mut notes = vec![format!("real filtration ranks {:?}", z.ranks())];
    let (flag, base) = if rep.alternating_phi == Some(true) {
        (MovingFlag::from_filtration(&z)?, 1i8)
    } else if rep.alternating_perp == Some(true) {
        (MovingFlag::from_filtration(&z)?, -1i8)
    } else {
        notes.push("combine(i)".into());
        (MovingFlag::from_filtration(&combine(&z, CombineVariant::I)?)?, 1i8)
    };
    let norm = normalize_symmetric(&flag)?;
    if norm.flag.legs.len() <= 2 {
        notes.push("degenerate lift with at most two legs".into());
    }
    let flavor = LiftFlavor::for_legs(true, norm.flag.legs.len());
    LiftReport::assemble("real-ocs", norm.flag, phi, base * norm.sign, flavor, norm.ops, notes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{gauss_transform, AnalyticMap, FormKind};
    use crate::fixtures;
    use crate::meromorphic::{differentiate, MeroVec};

    fn span(n: usize, gens: Vec<MeroVec>) -> Subbundle {
        Subbundle::from_generators(n, gens).unwrap()
    }

    fn model(name: &str) -> GrassModel {
        fixtures::fixture(name).unwrap().model().unwrap().build().unwrap()
    }

    fn gap(a: &Subbundle, b: &Subbundle) -> f64 {
        subbundle_distance(a, b, 5).unwrap()
    }

    fn line() -> Subbundle {
        span(3, vec![MeroVec::from_real_polys(&[&[1.0], &[0.0, 1.0], &[0.0, 0.0, 1.0]])])
    }

    #[test]
    fn two_leg_holomorphic_flag_passes_everything() {
        let b = line();
        let flag = MovingFlag::new(3, vec![b.clone(), b.perp()]).unwrap();
        assert!(check_j1(&flag).unwrap().pass);
        assert!(check_j2(&flag).unwrap().pass);
        assert!(check_superhorizontal(&flag).unwrap().pass);
        assert!(gap(&pi_e(&flag).unwrap(), &b) < 1e-12);
        let single = MovingFlag::new(3, vec![Subbundle::full(3)]).unwrap();
        assert_eq!(pi_e(&single).unwrap().rank(), 3);
    }

    #[test]
    fn invalid_flags_are_rejected() {
        let b = line();
        assert!(MovingFlag::new(3, vec![b.clone(), b.clone()]).is_err());
        assert!(MovingFlag::new(3, vec![b]).is_err());
    }

    fn torus_flag() -> (Subbundle, MovingFlag) {
        let phi = AnalyticMap::superconformal_torus().subbundle;
        let g1 = gauss_transform(&phi, FormKind::Prime, 1).unwrap();
        let g2 = gauss_transform(&phi, FormKind::Prime, 2).unwrap();
        let flag = MovingFlag::new(3, vec![g2, phi.clone(), g1]).unwrap();
        (phi, flag)
    }

    #[test]
    fn torus_flag_is_j2_but_not_reversed() {
        let (_, flag) = torus_flag();
        assert!(check_j2(&flag).unwrap().pass);
        assert!(!check_superhorizontal(&flag).unwrap().pass);
        let rev: Vec<Subbundle> = flag.legs().iter().rev().cloned().collect();
        let rev = MovingFlag::new(3, rev).unwrap();
        let r = check_j2(&rev).unwrap();
        assert!(!r.pass && r.residual > 1e-2, "{r:?}");
    }

    #[test]
    fn torus_burstall_lift_is_the_superconformal_flag() {
        let (phi, expected) = torus_flag();
        let lifts = burstall_lift(&phi, None).unwrap();
        assert_eq!(lifts.len(), 1);
        let l = &lifts[0];
        assert!(l.pass(), "{:?}", l.checks);
        assert_eq!(l.sign, -1);
        assert_eq!(l.flag.ranks(), vec![1, 1, 1]);
        for (a, b) in l.flag.legs().iter().zip(expected.legs()) {
            assert!(gap(a, b) < 1e-8);
        }
        assert_eq!(l.ops, vec![SurgeryOp::RemoveLastZero]);
    }

    #[test]
    fn surgery_operations_and_signs() {
        let b = line();
        let z = Subbundle::zero(3);
        let flag = MovingFlag::new(3, vec![z.clone(), b.clone(), b.perp()]).unwrap();
        let (f1, s1) = surgery(&flag, SurgeryOp::RemoveFirstZero).unwrap();
        assert_eq!(s1, -1);
        assert_eq!(f1.ranks(), vec![1, 2]);
        assert!(gap(&pi_e(&f1).unwrap(), &pi_e(&flag).unwrap().perp()) < 1e-12);
        let inner = MovingFlag::new(3, vec![b.clone(), z.clone(), b.perp()]).unwrap();
        let (f3, s3) = surgery(&inner, SurgeryOp::RemoveInnerZero(1)).unwrap();
        assert_eq!((f3.ranks(), s3), (vec![3], 1));
        assert!(matches!(
            surgery(&flag, SurgeryOp::RemoveLastZero),
            Err(Error::Contract { .. })
        ));
        let (_, torus) = torus_flag();
        assert!(matches!(
            surgery(&torus, SurgeryOp::MergeOnVanishing(1)),
            Err(Error::Contract { .. })
        ));
    }

    fn frenet(n: usize) -> Vec<Subbundle> {
        let f = fixtures::rational_normal_curve(n);
        let osc: Vec<Subbundle> = (0..=n)
            .map(|k| span(n, (0..k).map(|j| differentiate(&f, j).unwrap()).collect()))
            .collect();
        (0..n).map(|k| osc[k + 1].ominus(&osc[k]).unwrap()).collect()
    }

    #[test]
    fn merge_on_vanishing_flips_parity_at_the_start() {
        let g = frenet(6);
        let pick = |idx: &[usize]| idx.iter().map(|&k| g[k].clone()).collect::<Vec<_>>();
        let flag = MovingFlag::new(6, pick(&[0, 4, 5, 1, 2, 3])).unwrap();
        assert!(check_j2(&flag).unwrap().pass);
        let norm = normalize_flag(&flag).unwrap();
        assert_eq!(norm.ops, vec![SurgeryOp::MergeOnVanishing(0)]);
        assert_eq!(norm.sign, -1);
        assert_eq!(norm.flag.ranks(), vec![1, 2, 1, 1, 1]);
        assert!(check_j2(&norm.flag).unwrap().pass);
        let before = pi_e(&flag).unwrap();
        assert!(gap(&pi_e(&norm.flag).unwrap(), &before.perp()) < 1e-10);
        let (direct, s) = surgery(&flag, SurgeryOp::MergeOnVanishing(0)).unwrap();
        assert_eq!(s, -1);
        assert!(gap(&direct.legs()[1], &Subbundle::orthogonal_sum(6, &pick(&[0, 5])).unwrap()) < 1e-10);
    }

    #[test]
    fn normalizing_a_holomorphic_burstall_flag_leaves_two_legs() {
        let b = line();
        let lifts = burstall_lift(&b, None).unwrap();
        assert!(!lifts.is_empty());
        for l in &lifts {
            assert!(l.pass(), "{:?}", l.checks);
            assert_eq!(l.flag.legs().len(), 2);
        }
    }

    #[test]
    fn canonical_lifts_of_s1_invariant_models_are_superhorizontal() {
        for name in ["holomorphic-line", "mixed-pair", "frenet-pair"] {
            let r = canonical_lift(&model(name)).unwrap();
            assert!(r.pass(), "{name}: {:?}", r.checks);
            assert!(r.is_superhorizontal(), "{name}");
        }
        let r = canonical_lift(&model("example-8.2")).unwrap();
        assert!(r.pass());
        assert!(!r.is_superhorizontal());
    }

    #[test]
    fn real_and_quaternionic_mixed_pairs() {
        let r = canonical_lift(&model("real-mixed-pair")).unwrap();
        assert_eq!(r.flavor, LiftFlavor::RealGrassmann);
        assert!(r.pass(), "{:?}", r.checks);
        let q = canonical_lift(&model("quaternionic-mixed-pair")).unwrap();
        assert_eq!(q.flavor, LiftFlavor::QuaternionicGrassmann);
        assert!(q.pass(), "{:?}", q.checks);
        assert!(symmetry_check(&q.flag, LiftFlavor::Ocs).is_err());
        assert!(symmetry_check(&q.flag, LiftFlavor::Complex).is_err());
    }

    #[test]
    fn real_ocs_lift_of_the_real_mixed_pair() {
        let m = model("real-mixed-pair");
        let sol = m.uhlenbeck_filtration().unwrap().solution;
        let phi = sol.grassmannian().unwrap();
        let l = real_ocs_lift(&phi, None).unwrap();
        assert!(l.pass(), "{:?}", l.checks);
        assert_eq!(l.flavor, LiftFlavor::RealGrassmann);
        let canon = canonical_lift_for(&m, &sol).unwrap();
        for (a, b) in l.flag.legs().iter().zip(canon.flag.legs()) {
            assert!(gap(a, b) < 1e-8);
        }
    }

    #[test]
    fn frenet_pair_strongly_conformal_lift() {
        let m = model("frenet-pair");
        let phi = m.uhlenbeck_filtration().unwrap().solution.grassmannian().unwrap();
        let l = strongly_conformal_lifts(&phi, None).unwrap();
        assert!(l.pass(), "{:?}", l.checks);
        let f = fixtures::rational_normal_curve(5);
        let f1 = span(5, vec![f.clone(), differentiate(&f, 1).unwrap()]);
        let f2 = span(5, vec![f.clone(), differentiate(&f, 1).unwrap(), differentiate(&f, 2).unwrap()]);
        let g1 = f1.ominus(&span(5, vec![f])).unwrap();
        let g2 = f2.ominus(&f1).unwrap();
        assert!(gap(&l.flag.legs()[0], &g2) < 1e-8);
        assert!(gap(&l.flag.legs()[2], &g1) < 1e-8);
        assert!(strongly_conformal_lifts(&line(), None).is_err());
    }

    #[test]
    fn uniton_anchored_with_full_alpha_matches_burstall() {
        let (phi, _) = torus_flag();
        let a = uniton_anchored_lift(&phi, &Subbundle::full(3), None).unwrap();
        let b = &burstall_lift(&phi, None).unwrap()[0];
        assert_eq!(a.flag.ranks(), b.flag.ranks());
        for (x, y) in a.flag.legs().iter().zip(b.flag.legs()) {
            assert!(gap(x, y) < 1e-8);
        }
    }
}
