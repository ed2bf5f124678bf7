//! A_z^φ-filtrations ℂⁿ = Z₀ ⊇ Z₁ ⊇ … ⊇ Z_{t+1} = 0 and F-filtrations
//! W = Y₀ ⊇ … ⊇ Y_{t+1} = λW, their correspondence Z_i = P₀Φ⁻¹Y_i, and the
//! constructions that produce filtrations from a harmonic map.
//!
//! F-filtration stages live in the block model ℂ^{(r+1)n} of
//! H₊/λ^{r+1}H₊ used by [`GrassModel`].

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::bundle::{
    at_generic_points, compute_az, nil_index, BundleEndomorphism, Jet, JetFn, MatFn, Subbundle, UnitaryMap,
    FD_RANK_TOL, SAMPLE_SEED,
};
use crate::error::{Error, Result};
use crate::grassmodel::{shift_matrix, to_block_vec, ExtendedSolution, GrassModel};
use crate::meromorphic::{LaurentSection, MeroVec};
use crate::pointlin::{self, conj_mat, op_norm, CMat, RANK_TOL};

/// Inclusion, A_z-step, F-step and closure residual threshold.
pub const FILT_TOL: f64 = 1e-8;
/// Threshold for the holomorphic-subbundle residual.
pub const HOLO_TOL: f64 = 1e-6;
const CHECK_POINTS: usize = 3;

fn ident(n: usize) -> CMat {
    CMat::identity(n, n)
}

fn worst(seed: u64, mut f: impl FnMut(C64) -> Result<f64>) -> Result<f64> {
    Ok(at_generic_points(seed, CHECK_POINTS, |z| f(z))?
        .into_iter()
        .map(|(_, x)| x)
        .fold(0.0, f64::max))
}

fn jet_mul(a: &Jet, b: &Jet) -> Jet {
    Jet {
        value: &a.value * &b.value,
        dz: &a.dz * &b.value + &a.value * &b.dz,
        dzbar: &a.dzbar * &b.value + &a.value * &b.dzbar,
    }
}

fn power(a: &CMat, k: usize) -> CMat {
    let mut m = ident(a.nrows());
    for _ in 0..k {
        m = a * m;
    }
    m
}

/// ‖(I − π_β)·M·π_α‖ where M = A^k, normalised by max(1, ‖A‖)^k.
fn maps_into(az: &BundleEndomorphism, k: usize, alpha: &Subbundle, beta: &Subbundle, seed: u64) -> Result<f64> {
    let n = alpha.n();
    worst(seed, |z| {
        let a = az.eval(z)?;
        let s = op_norm(&a).max(1.0).powi(k as i32);
        let m = (ident(n) - beta.projector(z)?) * power(&a, k) * alpha.projector(z)?;
        Ok(op_norm(&m) / s)
    })
}

fn image_under(az: &BundleEndomorphism, k: usize, alpha: &Subbundle) -> Result<Subbundle> {
    if k == 0 || alpha.rank() == 0 {
        return Ok(alpha.clone());
    }
    let f = az.as_fn();
    let op: MatFn = Arc::new(move |z| Ok(power(&f(z)?, k)));
    alpha.image(op, FD_RANK_TOL)
}

/// Residuals (holomorphic, A_z-closed) of a candidate uniton α for A_z.
pub fn uniton_residuals(az: &BundleEndomorphism, alpha: &Subbundle) -> Result<(f64, f64)> {
    let n = alpha.n();
    let holo = worst(SAMPLE_SEED ^ 0x41, |z| {
        let a = az.eval(z)?;
        let j = alpha.projector_jet(z)?;
        let q = ident(n) - &j.value;
        let m = &q * (&j.dzbar - a.adjoint()) * &j.value;
        Ok(op_norm(&m) / op_norm(&a).max(1.0))
    })?;
    let closed = maps_into(az, 1, alpha, alpha, SAMPLE_SEED ^ 0x42)?;
    Ok((holo, closed))
}

fn check_uniton(az: &BundleEndomorphism, alpha: &Subbundle) -> Result<()> {
    let (holo, closed) = uniton_residuals(az, alpha)?;
    if holo > HOLO_TOL {
        return Err(Error::contract("α is not holomorphic for D_z̄", holo));
    }
    if closed > FILT_TOL {
        return Err(Error::contract("α is not closed under A_z", closed));
    }
    Ok(())
}

/// Worst residuals of the defining conditions of a filtration.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AzResiduals {
    pub inclusion: f64,
    pub holomorphic: f64,
    pub step: f64,
}

/// JSON form: per-stage ranks, generators where known, residuals.
#[derive(Clone, Debug, Serialize)]
pub struct FiltrationSummary {
    pub t: usize,
    pub ranks: Vec<usize>,
    pub generators: Vec<Option<Vec<MeroVec>>>,
    pub residuals: serde_json::Value,
}

/// ℂⁿ = Z₀ ⊇ … ⊇ Z_{t+1} = 0 with each Z_i holomorphic for D_z̄^φ and
/// A_z^φ(Z_i) ⊆ Z_{i+1}.
#[derive(Clone)]
pub struct AzFiltration {
    stages: Vec<Subbundle>,
    base: UnitaryMap,
    az: BundleEndomorphism,
    phi: Option<Subbundle>,
}

impl std::fmt::Debug for AzFiltration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AzFiltration").field("ranks", &self.ranks()).finish()
    }
}

impl AzFiltration {
    pub fn new(base: UnitaryMap, stages: Vec<Subbundle>) -> Result<Self> {
        let n = base.n;
        if stages.len() < 2 {
            return Err(Error::domain("a filtration needs at least the stages ℂⁿ and 0"));
        }
        if stages.iter().any(|s| s.n() != n) {
            return Err(Error::domain("stage lives in a different ambient dimension"));
        }
        if stages[0].rank() != n || stages.last().unwrap().rank() != 0 {
            return Err(Error::domain("a filtration must run from ℂⁿ down to 0"));
        }
        let phi = base.grassmannian().cloned();
        Ok(AzFiltration {
            az: compute_az(&base),
            stages,
            base,
            phi,
        })
    }

    /// Records the subbundle V with φ = π_V − π_V^⊥.
    pub fn with_grassmannian(mut self, phi: Subbundle) -> Self {
        self.phi = Some(phi);
        self
    }

    pub fn n(&self) -> usize {
        self.base.n
    }

    pub fn t(&self) -> usize {
        self.stages.len() - 2
    }

    pub fn stages(&self) -> &[Subbundle] {
        &self.stages
    }

    pub fn base(&self) -> &UnitaryMap {
        &self.base
    }

    pub fn az(&self) -> &BundleEndomorphism {
        &self.az
    }

    pub fn grassmannian(&self) -> Option<&Subbundle> {
        self.phi.as_ref()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.stages.iter().map(Subbundle::rank).collect()
    }

    /// Ranks strictly decrease.
    pub fn is_strict(&self) -> bool {
        self.ranks().windows(2).all(|w| w[0] > w[1])
    }

    /// ψ_i = Z_i ⊖ Z_{i+1}, i = 0..t.
    pub fn legs(&self) -> Result<Vec<Subbundle>> {
        self.stages.windows(2).map(|w| w[0].ominus(&w[1])).collect()
    }

    pub fn residuals(&self) -> Result<AzResiduals> {
        let n = self.n();
        let mut out = AzResiduals::default();
        for (_, r) in at_generic_points(SAMPLE_SEED ^ 0x43, CHECK_POINTS, |z| {
            let a = self.az.eval(z)?;
            let s = op_norm(&a).max(1.0);
            let mut r = AzResiduals::default();
            for i in 0..self.stages.len() {
                let j = self.stages[i].projector_jet(z)?;
                let q = ident(n) - &j.value;
                r.holomorphic = r
                    .holomorphic
                    .max(op_norm(&(&q * (&j.dzbar - a.adjoint()) * &j.value)) / s);
                if let Some(next) = self.stages.get(i + 1) {
                    let fnext = next.frame(z)?;
                    let fcur = self.stages[i].frame(z)?;
                    r.inclusion = r.inclusion.max(pointlin::containment_residual(&fnext, &fcur));
                    let qn = ident(n) - fnext.projector_matrix();
                    r.step = r.step.max(op_norm(&(qn * &a * &j.value)) / s);
                }
            }
            Ok(r)
        })? {
            out.inclusion = out.inclusion.max(r.inclusion);
            out.holomorphic = out.holomorphic.max(r.holomorphic);
            out.step = out.step.max(r.step);
        }
        Ok(out)
    }

    /// The residuals, or a ContractError naming the first failed condition.
    pub fn check(&self) -> Result<AzResiduals> {
        let r = self.residuals()?;
        if r.inclusion > FILT_TOL {
            return Err(Error::contract("Z_{i+1} ⊄ Z_i", r.inclusion));
        }
        if r.step > FILT_TOL {
            return Err(Error::contract("A_z(Z_i) ⊄ Z_{i+1}", r.step));
        }
        if r.holomorphic > HOLO_TOL {
            return Err(Error::contract("Z_i is not D_z̄-holomorphic", r.holomorphic));
        }
        Ok(r)
    }

    pub fn summary(&self) -> Result<FiltrationSummary> {
        Ok(FiltrationSummary {
            t: self.t(),
            ranks: self.ranks(),
            generators: self.stages.iter().map(|s| s.generators().map(<[_]>::to_vec)).collect(),
            residuals: serde_json::to_value(self.residuals()?).map_err(|e| Error::Input(e.to_string()))?,
        })
    }
}

/// Worst residuals of an F-filtration.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FResiduals {
    pub inclusion: f64,
    pub lambda_closed: f64,
    pub holomorphic: f64,
    pub f_step: f64,
    /// ‖π_{Y_{t+1}} − π_{λY₀}‖.
    pub ends: f64,
}

/// W = Y₀ ⊇ … ⊇ Y_{t+1} = λW in the block model ℂ^{(r+1)n}.
#[derive(Clone)]
pub struct FFiltration {
    n: usize,
    r: usize,
    stages: Vec<Subbundle>,
    sections: Vec<LaurentSection>,
}

impl std::fmt::Debug for FFiltration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FFiltration")
            .field("r", &self.r)
            .field("ranks", &self.ranks())
            .finish()
    }
}

impl FFiltration {
    /// `sections` are holomorphic spanning sections of Y₀ used for spot
    /// checks; they may be empty.
    pub fn new(n: usize, r: usize, stages: Vec<Subbundle>, sections: Vec<LaurentSection>) -> Result<Self> {
        if stages.len() < 2 {
            return Err(Error::domain("an F-filtration needs at least the stages W and λW"));
        }
        if stages.iter().any(|s| s.n() != (r + 1) * n) {
            return Err(Error::domain("stage does not live in the block model"));
        }
        Ok(FFiltration { n, r, stages, sections })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn t(&self) -> usize {
        self.stages.len() - 2
    }

    pub fn stages(&self) -> &[Subbundle] {
        &self.stages
    }

    pub fn w(&self) -> &Subbundle {
        &self.stages[0]
    }

    pub fn sections(&self) -> &[LaurentSection] {
        &self.sections
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.stages.iter().map(Subbundle::rank).collect()
    }

    pub fn residuals(&self) -> Result<FResiduals> {
        let d = (self.r + 1) * self.n;
        let s = shift_matrix(self.n, self.r + 1, 1);
        let mut out = FResiduals::default();
        for (_, r) in at_generic_points(SAMPLE_SEED ^ 0x44, CHECK_POINTS, |z| {
            let mut r = FResiduals::default();
            let jets = self
                .stages
                .iter()
                .map(|y| y.projector_jet(z))
                .collect::<Result<Vec<_>>>()?;
            for (i, j) in jets.iter().enumerate() {
                let q = ident(d) - &j.value;
                r.lambda_closed = r.lambda_closed.max(op_norm(&(&q * &s * &j.value)));
                r.holomorphic = r.holomorphic.max(op_norm(&(&q * &j.dzbar * &j.value)));
                if let Some(next) = jets.get(i + 1) {
                    let qn = ident(d) - &next.value;
                    r.inclusion = r.inclusion.max(op_norm(&(&q * &next.value)));
                    r.f_step = r.f_step.max(op_norm(&(&qn * &s * &q * &j.dz * &j.value)));
                }
            }
            let lw = pointlin::orthonormalize(&(&s * self.stages[0].frame(z)?.matrix()), RANK_TOL);
            r.ends = op_norm(&(lw.projector_matrix() - &jets.last().unwrap().value));
            Ok(r)
        })? {
            out.inclusion = out.inclusion.max(r.inclusion);
            out.lambda_closed = out.lambda_closed.max(r.lambda_closed);
            out.holomorphic = out.holomorphic.max(r.holomorphic);
            out.f_step = out.f_step.max(r.f_step);
            out.ends = out.ends.max(r.ends);
        }
        Ok(out)
    }

    pub fn check(&self) -> Result<FResiduals> {
        let r = self.residuals()?;
        for (what, v, tol) in [
            ("Y_{i+1} ⊄ Y_i", r.inclusion, FILT_TOL),
            ("Y_i is not λ-closed", r.lambda_closed, FILT_TOL),
            ("F(Y_i) ⊄ Y_{i+1}", r.f_step, FILT_TOL),
            ("Y_{t+1} ≠ λW", r.ends, FILT_TOL),
            ("Y_i is not holomorphic", r.holomorphic, HOLO_TOL),
        ] {
            if v > tol {
                return Err(Error::contract(what, v));
            }
        }
        Ok(r)
    }

    pub fn summary(&self) -> Result<FiltrationSummary> {
        Ok(FiltrationSummary {
            t: self.t(),
            ranks: self.ranks(),
            generators: self.stages.iter().map(|s| s.generators().map(<[_]>::to_vec)).collect(),
            residuals: serde_json::to_value(self.residuals()?).map_err(|e| Error::Input(e.to_string()))?,
        })
    }
}

/// λW mod λ^{r+1}H₊, spanned by the shifted sections of W.
pub fn lambda_w(model: &GrassModel) -> Result<Subbundle> {
    let blocks = model.blocks();
    let gens = model
        .sections()
        .iter()
        .map(|s| to_block_vec(&s.shift(1)?.truncate_below(blocks as i32), blocks))
        .collect::<Result<Vec<_>>>()?;
    let gens: Vec<_> = gens.into_iter().filter(|g| !g.is_zero()).collect();
    Subbundle::from_generators(model.dim(), gens)
}

/// Y_i = W ∩ λⁱH₊ + λW, i = 0..r+1.
pub fn canonical_f(model: &GrassModel) -> Result<FFiltration> {
    let r = model.r();
    let lw = lambda_w(model)?;
    let mut stages = vec![model.w().clone()];
    for i in 1..=r {
        let cap = model.w().intersect(&model.tail(i))?;
        stages.push(cap.sum(&lw)?);
    }
    stages.push(lw);
    FFiltration::new(model.n(), r, stages, model.sections().to_vec())
}

/// Y_i = Fⁱ(W) + λW, continued until Y_i = λW.
pub fn image_f(model: &GrassModel) -> Result<FFiltration> {
    let blocks = model.blocks();
    let lw = lambda_w(model)?;
    let mut stages = vec![model.w().clone()];
    for i in 1..=model.dim() {
        let mut gens = lw.generators().map(<[_]>::to_vec).unwrap_or_default();
        for s in model.sections() {
            let f = s.differentiate(i)?.shift(i as i32)?.truncate_below(blocks as i32);
            if !f.is_zero() {
                gens.push(to_block_vec(&f, blocks)?);
            }
        }
        let y = Subbundle::from_generators(model.dim(), gens)?;
        if y.rank() == lw.rank() {
            break;
        }
        stages.push(y);
    }
    stages.push(lw);
    FFiltration::new(model.n(), model.r(), stages, model.sections().to_vec())
}

/// Z_i = P₀Φ⁻¹Y_i, with the commutation P₀Φ⁻¹(Fs) = −A_z P₀Φ⁻¹s spot-checked
/// on up to three sections of W.
pub fn f_to_az(y: &FFiltration, phi: &ExtendedSolution) -> Result<AzFiltration> {
    let n = phi.n();
    if y.n() != n || phi.r() > y.r() + 1 {
        return Err(Error::domain("F-filtration and extended solution do not match"));
    }
    let res = phi.model_residual(y.w())?;
    if res > FILT_TOL {
        return Err(Error::contract("Y₀ differs from ΦH₊", res));
    }
    let mut stages = vec![Subbundle::full(n)];
    for yi in &y.stages()[1..y.stages().len() - 1] {
        stages.push(phi.p0_inverse_image(yi)?);
    }
    stages.push(Subbundle::zero(n));
    let mut z = AzFiltration::new(phi.harmonic_map(), stages)?;
    if let Ok(g) = phi.grassmannian() {
        z = z.with_grassmannian(g);
    }
    let blocks = y.r() as i32 + 1;
    let az = z.az.clone();
    let comm = worst(SAMPLE_SEED ^ 0x45, |p| {
        let a = az.eval(p)?;
        let mut w = 0.0f64;
        for s in y.sections().iter().take(3) {
            let s = s.truncate_below(blocks);
            let fs = s.differentiate(1)?.shift(1)?.truncate_below(blocks);
            let lhs = phi.p0_phi_inverse(&fs, p)?;
            let v = phi.p0_phi_inverse(&s, p)?;
            w = w.max((lhs + &a * &v).norm() / (op_norm(&a).max(1.0) * v.norm().max(1.0)));
        }
        Ok(w)
    })?;
    if comm > HOLO_TOL {
        return Err(Error::contract("P₀Φ⁻¹∘F ≠ −A_z∘P₀Φ⁻¹", comm));
    }
    z.check()?;
    Ok(z)
}

/// Least k with ‖A^k‖ ≈ 0 over the sample points.
fn global_nil_index(az: &BundleEndomorphism, n: usize) -> Result<usize> {
    let ks = at_generic_points(SAMPLE_SEED ^ 0x46, CHECK_POINTS, |z| {
        nil_index(&az.eval(z)?, n).ok_or_else(|| Error::domain("A_z is not nilpotent: φ is not nilconformal"))
    })?;
    Ok(ks.into_iter().map(|(_, k)| k).max().unwrap_or(1))
}

/// Z_i = Im (A_z^φ)ⁱ.
pub fn burstall_filtration(phi: &UnitaryMap) -> Result<AzFiltration> {
    let n = phi.n;
    let az = compute_az(phi);
    let k = global_nil_index(&az, n)?;
    let mut stages = vec![Subbundle::full(n)];
    for i in 1..k {
        stages.push(image_under(&az, i, &Subbundle::full(n))?);
    }
    stages.push(Subbundle::zero(n));
    AzFiltration::new(phi.clone(), stages)
}

/// Ẑ_i = ker (A_z^φ)^{t+1−i}, which needs (A_z)^{t+1} = 0.
pub fn kernel_filtration(phi: &UnitaryMap, t: usize) -> Result<AzFiltration> {
    let n = phi.n;
    let az = compute_az(phi);
    let k = global_nil_index(&az, n)?;
    if k > t + 1 {
        return Err(Error::domain(format!("(A_z)^{} ≠ 0", t + 1)));
    }
    let mut stages = vec![Subbundle::full(n)];
    for i in 1..=t {
        let f = az.as_fn();
        let e = t + 1 - i;
        let op: MatFn = Arc::new(move |z| Ok(power(&f(z)?, e)));
        stages.push(Subbundle::kernel_of(n, op, FD_RANK_TOL)?);
    }
    stages.push(Subbundle::zero(n));
    AzFiltration::new(phi.clone(), stages)
}

/// Z_i = (A_z)^{i−k}(α), with preimages for i < k and k least with
/// (A_z̄)ᵏ(α^⊥) = 0; returns the filtration and k.
pub fn uniton_anchored(phi: &UnitaryMap, alpha: &Subbundle) -> Result<(AzFiltration, usize)> {
    let n = phi.n;
    let az = compute_az(phi);
    check_uniton(&az, alpha)?;
    let mut k = None;
    for j in 0..=n {
        if maps_into(&az, j, &Subbundle::full(n), alpha, SAMPLE_SEED ^ 0x47)? <= FILT_TOL {
            k = Some(j);
            break;
        }
    }
    let k = k.ok_or_else(|| Error::domain("A_z is not nilpotent modulo α"))?;
    let mut stages = vec![Subbundle::full(n)];
    for i in 1..k {
        let f = az.as_fn();
        let a = alpha.clone();
        let e = k - i;
        let op: MatFn = Arc::new(move |z| Ok((ident(n) - a.projector(z)?) * power(&f(z)?, e)));
        stages.push(Subbundle::kernel_of(n, op, FD_RANK_TOL)?);
    }
    if k > 0 {
        stages.push(alpha.clone());
    }
    let mut e = 1;
    while stages.last().unwrap().rank() > 0 {
        if e > n {
            return Err(Error::domain("A_z is not nilpotent on α"));
        }
        stages.push(image_under(&az, e, alpha)?);
        e += 1;
    }
    Ok((AzFiltration::new(phi.clone(), stages)?, k))
}

/// Z_i = Im(π^⊥_{α_r}⋯π^⊥_{α_{r−i+1}}) for the unitons of Φ, each of
/// which must be basic for the partial product before it.
pub fn unitons_to_z(sol: &ExtendedSolution) -> Result<AzFiltration> {
    let n = sol.n();
    let us = sol.unitons().to_vec();
    let r = us.len();
    for i in 2..=r {
        let a = sol.prefix(i - 1).az();
        let res = maps_into(&a, 1, &us[i - 1], &Subbundle::zero(n), SAMPLE_SEED ^ 0x48)?;
        if res > FILT_TOL {
            return Err(Error::contract(format!("uniton α_{i} is not basic for Φ_{}", i - 1), res));
        }
    }
    let mut stages = vec![Subbundle::full(n)];
    for i in 1..=r {
        let parts: Vec<Subbundle> = us[r - i..].to_vec();
        let jet: JetFn = Arc::new(move |z| {
            let mut acc = Jet::constant(ident(n));
            for p in parts.iter().rev() {
                let j = p.projector_jet(z)?;
                let q = Jet {
                    value: ident(n) - j.value,
                    dz: -j.dz,
                    dzbar: -j.dzbar,
                };
                acc = jet_mul(&acc, &q);
            }
            Ok(acc)
        });
        let z = Subbundle::from_jet_floored(n, jet, RANK_TOL)?;
        let done = z.rank() == 0;
        stages.push(z);
        if done {
            break;
        }
    }
    if stages.last().unwrap().rank() > 0 {
        stages.push(Subbundle::zero(n));
    }
    let mut z = AzFiltration::new(sol.harmonic_map(), stages)?;
    if let Ok(g) = sol.grassmannian() {
        z = z.with_grassmannian(g);
    }
    Ok(z)
}

/// Structural predicates; the φ-dependent ones are `None` when the base
/// map is not Grassmannian.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StructureReport {
    pub ranks: Vec<usize>,
    pub strict: bool,
    pub splits: Option<bool>,
    pub alternating_phi: Option<bool>,
    pub alternating_perp: Option<bool>,
}

pub fn structure_predicates(z: &AzFiltration) -> Result<StructureReport> {
    let mut rep = StructureReport {
        ranks: z.ranks(),
        strict: z.is_strict(),
        splits: None,
        alternating_phi: None,
        alternating_perp: None,
    };
    let Some(phi) = z.grassmannian() else {
        return Ok(rep);
    };
    let perp = phi.perp();
    let splits = at_generic_points(SAMPLE_SEED ^ 0x49, CHECK_POINTS, |p| {
        let (fp, fq) = (phi.frame(p)?, perp.frame(p)?);
        let mut ok = true;
        for s in z.stages() {
            let f = s.frame(p)?;
            ok &= pointlin::intersect(&f, &fp).rank() + pointlin::intersect(&f, &fq).rank() == f.rank();
        }
        Ok(ok)
    })?
    .into_iter()
    .all(|(_, b)| b);
    let legs = z.legs()?;
    let alt = |even: &Subbundle, odd: &Subbundle| -> Result<bool> {
        let w = worst(SAMPLE_SEED ^ 0x4a, |p| {
            let (fe, fo) = (even.frame(p)?, odd.frame(p)?);
            let mut w = 0.0f64;
            for (i, l) in legs.iter().enumerate() {
                let target = if i % 2 == 0 { &fe } else { &fo };
                w = w.max(pointlin::containment_residual(&l.frame(p)?, target));
            }
            Ok(w)
        })?;
        Ok(w <= FILT_TOL)
    };
    rep.splits = Some(splits);
    rep.alternating_phi = Some(alt(phi, &perp)?);
    rep.alternating_perp = Some(alt(&perp, phi)?);
    Ok(rep)
}

/// The four split-to-alternating conversions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineVariant {
    I,
    Ii,
    Iii,
    Iv,
}

impl std::str::FromStr for CombineVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" => Ok(CombineVariant::I),
            "ii" => Ok(CombineVariant::Ii),
            "iii" => Ok(CombineVariant::Iii),
            "iv" => Ok(CombineVariant::Iv),
            _ => Err(Error::Input(format!("unknown variant {s:?}; expected i, ii, iii or iv"))),
        }
    }
}

/// U_i = Z_i ∩ φ and V_i = Z_i ∩ φ^⊥ for a split filtration, i = 0..t+1,
/// computed as the images of π_φπ_{Z_i} and π_φ^⊥π_{Z_i}.
fn split_parts(z: &AzFiltration) -> Result<(Subbundle, Vec<Subbundle>, Vec<Subbundle>)> {
    let phi = z
        .grassmannian()
        .cloned()
        .ok_or_else(|| Error::contract("filtration base is not Grassmannian", f64::INFINITY))?;
    let rep = structure_predicates(z)?;
    if rep.splits != Some(true) {
        return Err(Error::contract("filtration does not split", 1.0));
    }
    let n = z.n();
    let part = |p: &Subbundle, s: &Subbundle| -> Result<Subbundle> {
        if s.rank() == 0 {
            return Ok(Subbundle::zero(n));
        }
        let (p, s) = (p.clone(), s.clone());
        let jet: JetFn = Arc::new(move |x| Ok(jet_mul(&p.projector_jet(x)?, &s.projector_jet(x)?)));
        Subbundle::from_jet_floored(n, jet, RANK_TOL)
    };
    let perp = phi.perp();
    let u = z.stages().iter().map(|s| part(&phi, s)).collect::<Result<Vec<_>>>()?;
    let v = z.stages().iter().map(|s| part(&perp, s)).collect::<Result<Vec<_>>>()?;
    Ok((phi, u, v))
}

/// ψ̂_{2i} = U_i ⊖ U_{i+1}, ψ̂_{2i+1} = V_i ⊖ V_{i+1}, i = 0..t.
pub fn hat_legs(z: &AzFiltration) -> Result<Vec<Subbundle>> {
    let (_, u, v) = split_parts(z)?;
    let mut out = Vec::new();
    for i in 0..=z.t() {
        out.push(u[i].ominus(&u[i + 1])?);
        out.push(v[i].ominus(&v[i + 1])?);
    }
    Ok(out)
}

/// Converts a split filtration into an alternating one; variants i and iii
/// alternate for φ, ii and iv for φ^⊥.
pub fn combine(z: &AzFiltration, variant: CombineVariant) -> Result<AzFiltration> {
    let n = z.n();
    let (phi, u, v) = split_parts(z)?;
    let t = z.t() as i64;
    let perp = phi.perp();
    let pick = |xs: &[Subbundle], whole: &Subbundle, i: i64| -> Subbundle {
        if i < 0 {
            whole.clone()
        } else if i > t {
            Subbundle::zero(n)
        } else {
            xs[i as usize].clone()
        }
    };
    let index = |m: i64| -> (i64, i64) {
        let j = m / 2;
        let odd = m % 2 == 1;
        match (variant, odd) {
            (CombineVariant::I, false) => (j, j),
            (CombineVariant::I, true) => (j + 1, j),
            (CombineVariant::Ii, false) => (j, j),
            (CombineVariant::Ii, true) => (j, j + 1),
            (CombineVariant::Iii, false) => (2 * j - 1, 2 * j),
            (CombineVariant::Iii, true) => (2 * j + 1, 2 * j),
            (CombineVariant::Iv, false) => (2 * j, 2 * j - 1),
            (CombineVariant::Iv, true) => (2 * j, 2 * j + 1),
        }
    };
    let mut stages = Vec::new();
    for m in 0.. {
        let (a, b) = index(m);
        let s = Subbundle::orthogonal_sum(n, &[pick(&u, &phi, a), pick(&v, &perp, b)])?;
        stages.push(s);
        if a > t && b > t {
            break;
        }
    }
    Ok(AzFiltration::new(z.base.clone(), stages)?.with_grassmannian(phi))
}

fn conj_map(phi: &UnitaryMap) -> UnitaryMap {
    if let Some(g) = phi.grassmannian() {
        return g.conj().cartan();
    }
    let p = phi.clone();
    UnitaryMap::new(phi.n, Arc::new(move |z| Ok(conj_mat(&p.eval(z)?))))
}

/// Z̃_i = conj(Z_{t+1−i})^⊥, an A_z-filtration for conj φ.
pub fn involution_z(z: &AzFiltration) -> Result<AzFiltration> {
    let k = z.stages().len();
    let stages = (0..k).map(|i| z.stages()[k - 1 - i].conj().perp()).collect();
    let mut out = AzFiltration::new(conj_map(&z.base), stages)?;
    if let Some(g) = z.grassmannian() {
        out = out.with_grassmannian(g.conj());
    }
    Ok(out)
}

/// The block reversal e ↦ r − e on ℂ^{(r+1)n}.
pub fn block_reversal(n: usize, r: usize) -> CMat {
    let d = (r + 1) * n;
    let mut m = CMat::zeros(d, d);
    for e in 0..=r {
        for i in 0..n {
            m[((r - e) * n + i, e * n + i)] = C64::new(1.0, 0.0);
        }
    }
    m
}

/// Ỹ_i = λʳ conj(Y_{t+1−i})^⊥, an F-filtration of W^I = λ^{r−1}conj(W)^⊥.
pub fn involution_y(y: &FFiltration) -> Result<FFiltration> {
    let rev = block_reversal(y.n(), y.r());
    let k = y.stages().len();
    let stages = (0..k)
        .map(|i| Ok(y.stages()[k - 1 - i].conj().map_unitary(&rev)?.perp()))
        .collect::<Result<Vec<_>>>()?;
    FFiltration::new(y.n(), y.r(), stages, Vec::new())
}

fn reality_residual(phi: &UnitaryMap) -> Result<f64> {
    worst(SAMPLE_SEED ^ 0x4b, |z| {
        let u = phi.eval(z)?;
        let c = conj_mat(&u);
        Ok(op_norm(&(&c - &u)).min(op_norm(&(&c + &u))))
    })
}

fn isotropy(alpha: &Subbundle) -> Result<f64> {
    worst(SAMPLE_SEED ^ 0x4c, |z| Ok(pointlin::isotropy_residual(&alpha.frame(z)?)))
}

/// A real strict filtration through the isotropic uniton α, glued from
/// (A_z)ⁱα, its conjugate-perp mirror and the isotropic chain α ⊂ α₁ ⊂ …
/// with α_{j+1} = (A_z)^{t}(conj α_j^⊥) + α_j.
pub fn real_isotropic_filtration(phi: &UnitaryMap, alpha: &Subbundle) -> Result<AzFiltration> {
    let n = phi.n;
    let real = reality_residual(phi)?;
    if real > FILT_TOL {
        return Err(Error::contract("neither φ nor iφ is real", real));
    }
    let iso = isotropy(alpha)?;
    if iso > FILT_TOL {
        return Err(Error::contract("α is not isotropic", iso));
    }
    let az = compute_az(phi);
    if alpha.rank() > 0 {
        check_uniton(&az, alpha)?;
    }
    let mut tail = vec![alpha.clone()];
    while tail.last().unwrap().rank() > 0 {
        if tail.len() > n + 1 {
            return Err(Error::domain("A_z is not nilpotent on α"));
        }
        let next = image_under(&az, 1, tail.last().unwrap())?;
        tail.push(next);
    }
    let mut chain = vec![alpha.clone()];
    let mut middle_dup = false;
    for _ in 0..=n {
        let cur = chain.last().unwrap().clone();
        let mirror = cur.conj().perp();
        let mut tval = None;
        for k in 0..=n + 1 {
            if maps_into(&az, k, &mirror, &cur, SAMPLE_SEED ^ 0x4d)? <= FILT_TOL {
                tval = Some(k as i64 - 1);
                break;
            }
        }
        let tv = tval.ok_or_else(|| Error::domain("t(α) search exceeded n"))?;
        if tv <= 0 {
            middle_dup = tv == -1;
            break;
        }
        let next = image_under(&az, tv as usize, &mirror)?.sum(&cur)?;
        if next.rank() <= cur.rank() {
            return Err(Error::contract("isotropic chain failed to grow", 1.0));
        }
        chain.push(next);
    }
    // chain = α ⊂ α₁ ⊂ … ⊂ α_j; the filtration is
    // mirror(tail) ⊃ conj α^⊥ ⊃ … ⊃ conj α_j^⊥ ⊃ α_j ⊃ … ⊃ α ⊃ Aα ⊃ … ⊃ 0.
    let mut stages: Vec<Subbundle> = tail[1..].iter().rev().map(|s| s.conj().perp()).collect();
    stages.extend(chain.iter().map(|s| s.conj().perp()));
    if middle_dup {
        stages.pop();
    }
    stages.extend(chain.iter().rev().cloned());
    stages.extend(tail[1..].iter().cloned());
    if stages[0].rank() != n {
        stages.insert(0, Subbundle::full(n));
    }
    let mut out = AzFiltration::new(phi.clone(), stages)?;
    if let Some(g) = phi.grassmannian() {
        out = out.with_grassmannian(g.clone());
    }
    Ok(out)
}

/// Residual of (A_z)²(conj β^⊥ ∩ φ^⊥) ⊆ β.
pub fn beta_condition_residual(phi: &Subbundle, beta: &Subbundle) -> Result<f64> {
    let az = compute_az(&phi.cartan());
    let k = beta.conj().perp().intersect(&phi.perp())?;
    maps_into(&az, 2, &k, beta, SAMPLE_SEED ^ 0x4e)
}

/// An isotropic holomorphic subbundle β of φ^⊥, closed under (A_z)² and
/// satisfying (A_z)²(conj β^⊥ ∩ φ^⊥) ⊆ β, grown from `start` (default 0) by
/// β ← (A_z)^{2u}(conj β^⊥ ∩ φ^⊥) + β.
pub fn isotropic_seed(phi: &Subbundle, start: Option<&Subbundle>) -> Result<Subbundle> {
    let n = phi.n();
    let az = compute_az(&phi.cartan());
    let perp = phi.perp();
    let mut beta = start.cloned().unwrap_or_else(|| Subbundle::zero(n));
    for _ in 0..=n {
        let k = beta.conj().perp().intersect(&perp)?;
        let mut u = None;
        for j in 0..=n {
            if maps_into(&az, 2 * j, &k, &beta, SAMPLE_SEED ^ 0x4f)? <= FILT_TOL {
                u = Some(j as i64 - 1);
                break;
            }
        }
        let u = u.ok_or_else(|| Error::domain("u(β) search exceeded n"))?;
        if u < 1 {
            let iso = isotropy(&beta)?;
            let closed = maps_into(&az, 2, &beta, &beta, SAMPLE_SEED ^ 0x50)?;
            if iso > FILT_TOL || closed > FILT_TOL {
                return Err(Error::contract("seed is not isotropic and (A_z)²-closed", iso.max(closed)));
            }
            return Ok(beta);
        }
        beta = image_under(&az, 2 * u as usize, &k)?.sum(&beta)?;
    }
    Err(Error::domain("u(β) iteration exceeded n steps"))
}
