//! The algebraic Grassmannian model W = ΦH₊.
//!
//! W is kept modulo λ^{r+1}H₊: a section Σ λᵏ Lₖ is stored as the stacked
//! vector (L₀, …, L_r) in ℂ^{(r+1)n}, and W always contains the whole last
//! block because λʳH₊ ⊆ W. Extended solutions are stored factored as
//! L₁⋯L_m (π_{α₁} + λπ_{α₁}^⊥)⋯(π_{α_r} + λπ_{α_r}^⊥) with constant left
//! factors L_k = P + λ^{±1}(I − P).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::bundle::{
    at_generic_points, compute_az, BundleEndomorphism, Jet, JetFn, Subbundle, UnitaryMap, SAMPLE_SEED,
};
use crate::error::{Error, Result};
use crate::meromorphic::{LaurentSection, MeroVec, RatFun};
use crate::pointlin::{self, max_abs, op_norm, CMat, CVec, Frame, QuatStructure, RANK_TOL};

/// Residual threshold for model identities (closure, filtration, ΦH₊ = W).
pub const MODEL_TOL: f64 = 1e-8;
/// Residual threshold for loop symmetries.
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Number of unit-circle points used to expand a loop into Laurent coefficients.
pub const INTERP_POINTS: usize = 33;

/// The 8th roots of unity; these include −1 and i.
pub fn lambda_samples() -> Vec<C64> {
    (0..8).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / 8.0)).collect()
}

fn one() -> C64 {
    C64::new(1.0, 0.0)
}

fn ident(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// A constant loop P + λ^e(I − P) with e = ±1.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstFactor {
    pub projector: CMat,
    pub exponent: i32,
}

impl ConstFactor {
    pub fn eval(&self, lambda: C64) -> CMat {
        let n = self.projector.nrows();
        &self.projector + (ident(n) - &self.projector) * lambda.powi(self.exponent)
    }

    pub fn inverse(&self) -> ConstFactor {
        ConstFactor {
            projector: self.projector.clone(),
            exponent: -self.exponent,
        }
    }
}

/// Block vectors over a window of λ-exponents, with z-derivatives.
struct Blocks {
    lo: i32,
    v: Vec<CMat>,
    dz: Vec<CMat>,
    dzbar: Vec<CMat>,
}

impl Blocks {
    fn from_stacked(j: &Jet, n: usize, lo: i32) -> Blocks {
        let nb = j.value.nrows() / n;
        let cut = |m: &CMat, e: usize| m.rows(e * n, n).into_owned();
        Blocks {
            lo,
            v: (0..nb).map(|e| cut(&j.value, e)).collect(),
            dz: (0..nb).map(|e| cut(&j.dz, e)).collect(),
            dzbar: (0..nb).map(|e| cut(&j.dzbar, e)).collect(),
        }
    }

    fn hi(&self) -> i32 {
        self.lo + self.v.len() as i32 - 1
    }

    fn at<'a>(&'a self, which: &'a [CMat], e: i32) -> Option<&'a CMat> {
        if e < self.lo || e > self.hi() {
            None
        } else {
            Some(&which[(e - self.lo) as usize])
        }
    }

    /// Left multiplication by P + λˢ(I − P).
    fn apply(&self, p: &Jet, s: i32) -> Blocks {
        let n = p.value.nrows();
        let cols = self.v[0].ncols();
        let q = ident(n) - &p.value;
        let (lo, hi) = (self.lo + s.min(0), self.hi() + s.max(0));
        let zero = CMat::zeros(n, cols);
        let mut out = Blocks {
            lo,
            v: Vec::new(),
            dz: Vec::new(),
            dzbar: Vec::new(),
        };
        for e in lo..=hi {
            let v0 = self.at(&self.v, e).unwrap_or(&zero);
            let v1 = self.at(&self.v, e - s).unwrap_or(&zero);
            let d0 = self.at(&self.dz, e).unwrap_or(&zero);
            let d1 = self.at(&self.dz, e - s).unwrap_or(&zero);
            let b0 = self.at(&self.dzbar, e).unwrap_or(&zero);
            let b1 = self.at(&self.dzbar, e - s).unwrap_or(&zero);
            let diff = v0 - v1;
            out.v.push(&p.value * v0 + &q * v1);
            out.dz.push(&p.dz * &diff + &p.value * d0 + &q * d1);
            out.dzbar.push(&p.dzbar * &diff + &p.value * b0 + &q * b1);
        }
        out
    }

    fn block(&self, e: i32) -> Jet {
        let n = self.v[0].nrows();
        let cols = self.v[0].ncols();
        let z = CMat::zeros(n, cols);
        Jet {
            value: self.at(&self.v, e).cloned().unwrap_or_else(|| z.clone()),
            dz: self.at(&self.dz, e).cloned().unwrap_or_else(|| z.clone()),
            dzbar: self.at(&self.dzbar, e).cloned().unwrap_or(z),
        }
    }

    /// Largest entry over blocks with exponent < 0.
    fn negative_part(&self) -> f64 {
        (self.lo..0)
            .filter_map(|e| self.at(&self.v, e))
            .map(max_abs)
            .fold(0.0, f64::max)
    }
}

/// An extended solution in factored uniton form.
#[derive(Clone)]
pub struct ExtendedSolution {
    n: usize,
    factors: Vec<Subbundle>,
    left: Vec<ConstFactor>,
}

impl std::fmt::Debug for ExtendedSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExtendedSolution")
            .field("n", &self.n)
            .field("unitons", &self.factors.iter().map(Subbundle::rank).collect::<Vec<_>>())
            .field("left", &self.left.len())
            .finish()
    }
}

impl ExtendedSolution {
    pub fn identity(n: usize) -> Self {
        ExtendedSolution {
            n,
            factors: Vec::new(),
            left: Vec::new(),
        }
    }

    pub fn from_unitons(n: usize, factors: Vec<Subbundle>) -> Result<Self> {
        if factors.iter().any(|f| f.n() != n) {
            return Err(Error::domain("uniton lives in a different ambient dimension"));
        }
        Ok(ExtendedSolution {
            n,
            factors,
            left: Vec::new(),
        })
    }

    pub fn with_left(mut self, left: Vec<ConstFactor>) -> Self {
        self.left = left;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of uniton factors.
    pub fn r(&self) -> usize {
        self.factors.len()
    }

    pub fn unitons(&self) -> &[Subbundle] {
        &self.factors
    }

    pub fn left(&self) -> &[ConstFactor] {
        &self.left
    }

    /// Φ_i: the left constants and the first i unitons.
    pub fn prefix(&self, i: usize) -> ExtendedSolution {
        ExtendedSolution {
            n: self.n,
            factors: self.factors[..i.min(self.factors.len())].to_vec(),
            left: self.left.clone(),
        }
    }

    /// Φ(π_α + λπ_α^⊥).
    pub fn apply_uniton(&self, alpha: Subbundle) -> Result<ExtendedSolution> {
        if alpha.n() != self.n {
            return Err(Error::domain("uniton lives in a different ambient dimension"));
        }
        let mut out = self.clone();
        out.factors.push(alpha);
        Ok(out)
    }

    /// Projector jets and λ-exponents of every factor, left to right.
    fn factor_jets(&self, z: C64) -> Result<Vec<(Jet, i32)>> {
        let mut out: Vec<(Jet, i32)> = self
            .left
            .iter()
            .map(|c| (Jet::constant(c.projector.clone()), c.exponent))
            .collect();
        for f in &self.factors {
            out.push((f.projector_jet(z)?, 1));
        }
        Ok(out)
    }

    pub fn eval(&self, z: C64, lambda: C64) -> Result<CMat> {
        Ok(self.eval_jet(z, lambda)?.value)
    }

    /// (Φ, ∂_zΦ, ∂_z̄Φ) at (z, λ), by the product rule on exact factor jets.
    pub fn eval_jet(&self, z: C64, lambda: C64) -> Result<Jet> {
        if lambda == C64::new(0.0, 0.0) {
            return Err(Error::domain("λ must be nonzero"));
        }
        let n = self.n;
        let mut acc = Jet {
            value: ident(n),
            dz: CMat::zeros(n, n),
            dzbar: CMat::zeros(n, n),
        };
        for (j, e) in self.factor_jets(z)? {
            let l = lambda.powi(e);
            let f = &j.value + (ident(n) - &j.value) * l;
            let c = one() - l;
            acc = Jet {
                dz: &acc.dz * &f + &acc.value * &j.dz * c,
                dzbar: &acc.dzbar * &f + &acc.value * &j.dzbar * c,
                value: &acc.value * f,
            };
        }
        Ok(acc)
    }

    /// Φ(z, λ)⁻¹.
    pub fn inverse(&self, z: C64, lambda: C64) -> Result<CMat> {
        let n = self.n;
        let mut acc = ident(n);
        for (j, e) in self.factor_jets(z)?.into_iter().rev() {
            acc = &acc * (&j.value + (ident(n) - &j.value) * lambda.powi(-e));
        }
        Ok(acc)
    }

    /// ‖Φ⁻¹Φ_z − (1 − λ⁻¹)A_z^φ‖ / max(1, ‖A_z^φ‖), where φ = Φ_{−1}.
    pub fn extended_residual(&self, z: C64, lambda: C64) -> Result<f64> {
        let j = self.eval_jet(z, lambda)?;
        let lhs = self.inverse(z, lambda)? * &j.dz;
        let a = self.az().eval(z)?;
        let rhs = &a * (one() - one() / lambda);
        Ok(op_norm(&(lhs - rhs)) / op_norm(&a).max(1.0))
    }

    /// φ = Φ_{−1} with exact ∂_z.
    pub fn harmonic_map(&self) -> UnitaryMap {
        let (a, b) = (self.clone(), self.clone());
        let m1 = C64::new(-1.0, 0.0);
        UnitaryMap::with_dz(
            self.n,
            Arc::new(move |z| a.eval(z, m1)),
            Arc::new(move |z| Ok(b.eval_jet(z, m1)?.dz)),
        )
    }

    pub fn az(&self) -> BundleEndomorphism {
        compute_az(&self.harmonic_map())
    }

    /// The subbundle V with Φ_{−1} = π_V − π_V^⊥, when Φ_{−1} is a
    /// Hermitian involution.
    pub fn grassmannian(&self) -> Result<Subbundle> {
        let n = self.n;
        let m1 = C64::new(-1.0, 0.0);
        let worst = at_generic_points(SAMPLE_SEED ^ 0x77, 4, |z| {
            let u = self.eval(z, m1)?;
            Ok(max_abs(&(&u - u.adjoint())).max(max_abs(&(&u * &u - ident(n)))))
        })?
        .into_iter()
        .map(|(_, x)| x)
        .fold(0.0, f64::max);
        if worst > SYMMETRY_TOL {
            return Err(Error::contract("Φ_{-1} is not a Hermitian involution", worst));
        }
        let s = self.clone();
        let half = C64::new(0.5, 0.0);
        let jet: JetFn = Arc::new(move |z| {
            let j = s.eval_jet(z, m1)?;
            Ok(Jet {
                value: (j.value + ident(n)) * half,
                dz: j.dz * half,
                dzbar: j.dzbar * half,
            })
        });
        Subbundle::from_jet_floored(n, jet, RANK_TOL)
    }

    /// Laurent coefficients of λ ↦ Φ(z, λ), by a 33-point discrete Fourier
    /// transform; entries below 1e−12 are dropped.
    pub fn coefficients(&self, z: C64) -> Result<BTreeMap<i32, CMat>> {
        let m = INTERP_POINTS;
        let pts: Vec<C64> = (0..m).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64)).collect();
        let vals = pts.iter().map(|&l| self.eval(z, l)).collect::<Result<Vec<_>>>()?;
        let half = (m / 2) as i32;
        let mut out = BTreeMap::new();
        for e in -half..=half {
            let mut c = CMat::zeros(self.n, self.n);
            for (l, v) in pts.iter().zip(&vals) {
                c += v * l.powi(-e);
            }
            c /= C64::new(m as f64, 0.0);
            if max_abs(&c) > 1e-12 {
                out.insert(e, c);
            }
        }
        Ok(out)
    }

    /// (least, greatest) λ-exponent of Φ(z, ·).
    pub fn degree_support(&self, z: C64) -> Result<(i32, i32)> {
        let c = self.coefficients(z)?;
        let lo = c.keys().next().copied().unwrap_or(0);
        let hi = c.keys().next_back().copied().unwrap_or(0);
        Ok((lo, hi))
    }

    fn apply_inverse_blocks(&self, z: C64, x: Blocks) -> Result<Blocks> {
        let mut cur = x;
        for (j, e) in self.factor_jets(z)? {
            cur = cur.apply(&j, -e);
        }
        Ok(cur)
    }

    /// S^r_s: the sum of the products Π_r⋯Π₁ with exactly s factors π^⊥_{α_j}.
    pub fn s_product(&self, z: C64, s: usize) -> Result<CMat> {
        let n = self.n;
        let r = self.factors.len();
        let ps = self
            .factors
            .iter()
            .map(|f| f.projector(z))
            .collect::<Result<Vec<_>>>()?;
        let mut total = CMat::zeros(n, n);
        for mask in 0u32..(1 << r) {
            if mask.count_ones() as usize != s {
                continue;
            }
            let mut m = ident(n);
            for j in (0..r).rev() {
                let f = if mask & (1 << j) != 0 {
                    ident(n) - &ps[j]
                } else {
                    ps[j].clone()
                };
                m *= f;
            }
            total += m;
        }
        Ok(total)
    }

    /// P₀(Φ⁻¹H) at z for a section supported in exponents [0, r].
    pub fn p0_phi_inverse(&self, h: &LaurentSection, z: C64) -> Result<CVec> {
        let r = self.factors.len() as i32;
        if h.n() != self.n {
            return Err(Error::domain("section lives in a different ambient dimension"));
        }
        if h.min_exponent().is_some_and(|e| e < 0) || h.max_exponent().is_some_and(|e| e > r) {
            return Err(Error::domain(format!("section must be supported in exponents [0, {r}]")));
        }
        if self.left.is_empty() {
            let mut out = CVec::zeros(self.n);
            for (&s, v) in h.terms() {
                out += self.s_product(z, s as usize)? * CVec::from_vec(v.eval(z)?);
            }
            return Ok(out);
        }
        let blocks = (r + 1) as usize;
        let col = CMat::from_column_slice(blocks * self.n, 1, &h.eval_blocks(z, blocks)?);
        let b = Blocks::from_stacked(&Jet::constant(col), self.n, 0);
        Ok(self.apply_inverse_blocks(z, b)?.block(0).value.column(0).into_owned())
    }

    /// The subbundle P₀∘Φ⁻¹(Y) of ℂⁿ for Y in the block model with
    /// `y.n() / n` blocks; derivatives are exact whenever Y's are.
    pub fn p0_inverse_image(&self, y: &Subbundle) -> Result<Subbundle> {
        let n = self.n;
        if y.n() % n != 0 {
            return Err(Error::domain("block subbundle does not match the ambient dimension"));
        }
        let (phi, y) = (self.clone(), y.clone());
        let jet: JetFn = Arc::new(move |z| {
            let pj = y.projector_jet(z)?;
            let b = phi.apply_inverse_blocks(z, Blocks::from_stacked(&pj, n, 0))?;
            Ok(b.block(0))
        });
        Subbundle::from_jet_floored(n, jet, RANK_TOL)
    }

    /// Largest negative-exponent part of Φ⁻¹Y, zero exactly when Φ⁻¹Y ⊆ H₊.
    pub fn inverse_negative_part(&self, y: &Subbundle, z: C64) -> Result<f64> {
        let f = y.frame(z)?;
        let b = Blocks::from_stacked(&Jet::constant(f.into_matrix()), self.n, 0);
        Ok(self.apply_inverse_blocks(z, b)?.negative_part())
    }

    /// Frame of ΦH₊ mod λ^{blocks}H₊ at z, from the columns λᵐΦeⱼ.
    pub fn model_frame(&self, z: C64, blocks: usize) -> Result<Frame> {
        let n = self.n;
        let coeffs = self.coefficients(z)?;
        if coeffs.keys().next().is_some_and(|&e| e < 0) {
            return Err(Error::domain("loop has negative λ-powers; ΦH₊ ⊄ H₊"));
        }
        let mut cols = CMat::zeros(blocks * n, blocks * n);
        for m in 0..blocks {
            for (&k, t) in &coeffs {
                let e = m + k as usize;
                if e < blocks {
                    cols.view_mut((e * n, m * n), (n, n)).copy_from(t);
                }
            }
        }
        Ok(pointlin::orthonormalize(&cols, RANK_TOL))
    }

    /// max over sample points of ‖π_{ΦH₊} − π_W‖ in the block model of `w`.
    pub fn model_residual(&self, w: &Subbundle) -> Result<f64> {
        let blocks = w.n() / self.n;
        let d = at_generic_points(SAMPLE_SEED ^ 0x3a, 3, |z| {
            let f = self.model_frame(z, blocks)?;
            Ok(op_norm(&(f.projector_matrix() - w.projector(z)?)))
        })?;
        Ok(d.into_iter().map(|(_, x)| x).fold(0.0, f64::max))
    }
}

/// Residuals of the loop symmetries over 4 z-points × 8 unit-circle λ.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SymmetryReport {
    pub degree: i32,
    pub nu_residual: f64,
    pub nu_invariant: bool,
    pub real_residual: f64,
    pub real: bool,
    pub symplectic_residual: Option<f64>,
    pub symplectic: Option<bool>,
    pub s1_residual: f64,
    pub s1_invariant: bool,
}

/// ν: Φ(λ)Φ(−1) = Φ(−λ); real(r): Φ = λʳ·conj Φ; symplectic(r):
/// Ω·conj Φ·Ω⁻¹ = λ⁻ʳΦ; S¹: Φ(λ)Φ(μ) = Φ(λμ).
pub fn symmetry_predicates(phi: &ExtendedSolution, r: i32) -> Result<SymmetryReport> {
    let lams = lambda_samples();
    let m1 = C64::new(-1.0, 0.0);
    let quat = QuatStructure::for_dim(phi.n()).ok();
    let rows = at_generic_points(SAMPLE_SEED ^ 0x51, 4, |z| {
        let vals = lams.iter().map(|&l| phi.eval(z, l)).collect::<Result<Vec<_>>>()?;
        let at_m1 = phi.eval(z, m1)?;
        let (mut nu, mut re, mut sp, mut s1) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (i, &l) in lams.iter().enumerate() {
            let v = &vals[i];
            nu = nu.max(max_abs(&(v * &at_m1 - phi.eval(z, -l)?)));
            re = re.max(max_abs(&(v - pointlin::conj_mat(v) * l.powi(r))));
            if let Some(q) = &quat {
                let o = q.omega();
                let lhs = &o * pointlin::conj_mat(v) * o.transpose();
                sp = sp.max(max_abs(&(lhs - v * l.powi(-r))));
            }
            for (j, &mu) in lams.iter().enumerate() {
                s1 = s1.max(max_abs(&(v * &vals[j] - phi.eval(z, l * mu)?)));
            }
        }
        Ok((nu, re, sp, s1))
    })?;
    let mut acc = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (_, (a, b, c, d)) in rows {
        acc = (acc.0.max(a), acc.1.max(b), acc.2.max(c), acc.3.max(d));
    }
    Ok(SymmetryReport {
        degree: r,
        nu_residual: acc.0,
        nu_invariant: acc.0 < SYMMETRY_TOL,
        real_residual: acc.1,
        real: acc.1 < SYMMETRY_TOL,
        symplectic_residual: quat.map(|_| acc.2),
        symplectic: quat.map(|_| acc.2 < SYMMETRY_TOL),
        s1_residual: acc.3,
        s1_invariant: acc.3 < SYMMETRY_TOL,
    })
}

/// Ψ = γ·Φ(z₀)⁻¹·Φ with γ = π_{φ(z₀)} + λπ_{φ(z₀)}^⊥, so that Ψ_{−1}(z₀) = φ(z₀).
pub fn nu_align(phi: &ExtendedSolution, z0: C64) -> Result<ExtendedSolution> {
    let n = phi.n();
    let u = phi.eval(z0, C64::new(-1.0, 0.0))?;
    let res = max_abs(&(&u - u.adjoint())).max(max_abs(&(&u * &u - ident(n))));
    if res > SYMMETRY_TOL {
        return Err(Error::contract("Φ_{-1}(z₀) is not Grassmannian-valued", res));
    }
    let mut left = vec![ConstFactor {
        projector: (u + ident(n)) * C64::new(0.5, 0.0),
        exponent: 1,
    }];
    for f in phi.factors.iter().rev() {
        left.push(ConstFactor {
            projector: f.projector(z0)?,
            exponent: -1,
        });
    }
    Ok(ExtendedSolution {
        n,
        factors: phi.factors.clone(),
        left,
    })
}

/// Ψ = (π_A + λπ_A^⊥)Φ for a type-one Φ whose harmonic map is Q·Φ_{−1},
/// Q = π_A − π_A^⊥.
pub fn nu_align_type_one(phi: &ExtendedSolution, a: &Frame) -> Result<ExtendedSolution> {
    if a.n() != phi.n() {
        return Err(Error::domain("subspace lives in a different ambient dimension"));
    }
    let mut left = vec![ConstFactor {
        projector: a.projector_matrix(),
        exponent: 1,
    }];
    left.extend(phi.left.iter().cloned());
    Ok(ExtendedSolution {
        n: phi.n,
        factors: phi.factors.clone(),
        left,
    })
}

/// Which filtration of W a factorization comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Segal,
    Uhlenbeck,
    Osculating,
    Custom,
}

/// A filtration W = W_r ⊆ … ⊆ W₀ = H₊ with its unitons.
#[derive(Clone, Debug)]
pub struct UnitonFactorization {
    pub flavor: Flavor,
    /// W₀, …, W_r in the block model.
    pub filtration: Vec<Subbundle>,
    pub unitons: Vec<Subbundle>,
    pub solution: ExtendedSolution,
}

/// The model W mod λ^{r+1}H₊ generated by X.
#[derive(Clone, Debug)]
pub struct GrassModel {
    n: usize,
    r: usize,
    generators: Vec<LaurentSection>,
    sections: Vec<LaurentSection>,
    w: Subbundle,
}

/// Stacks exponents 0..blocks of a section into one vector of rational functions.
pub fn to_block_vec(l: &LaurentSection, blocks: usize) -> Result<MeroVec> {
    let n = l.n();
    if l.min_exponent().is_some_and(|e| e < 0) {
        return Err(Error::domain("section has negative λ-exponents"));
    }
    let mut comps = vec![RatFun::zero(); blocks * n];
    for (&k, v) in l.terms() {
        let k = k as usize;
        if k < blocks {
            for (i, c) in v.components.iter().enumerate() {
                comps[k * n + i] = c.clone();
            }
        }
    }
    Ok(MeroVec::new(comps))
}

impl GrassModel {
    /// W = X + λX₍₁₎ + … + λ^{r−1}X₍ᵣ₋₁₎ + λʳH₊.
    pub fn generate_w(n: usize, generators: Vec<LaurentSection>, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::domain("degree r must be at least 1"));
        }
        for g in &generators {
            if g.n() != n {
                return Err(Error::domain("generator lives in a different ambient dimension"));
            }
            let lo = g.min_exponent().unwrap_or(0);
            let hi = g.max_exponent().unwrap_or(0);
            if lo < 0 || hi > r as i32 - 1 {
                return Err(Error::domain(format!(
                    "generator exponents [{lo}, {hi}] outside [0, {}]",
                    r - 1
                )));
            }
        }
        let mut sections = Vec::new();
        for g in &generators {
            for k in 0..r {
                for j in 0..=k {
                    let s = g.differentiate(j)?.shift(k as i32)?.truncate_below(r as i32 + 1);
                    if !s.is_zero() {
                        sections.push(s);
                    }
                }
            }
        }
        let blocks = r + 1;
        let mut gens = sections
            .iter()
            .map(|s| to_block_vec(s, blocks))
            .collect::<Result<Vec<_>>>()?;
        gens.extend((0..n).map(|j| MeroVec::basis(blocks * n, r * n + j)));
        let w = Subbundle::from_generators(blocks * n, gens)?;
        Ok(GrassModel {
            n,
            r,
            generators,
            sections,
            w,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn blocks(&self) -> usize {
        self.r + 1
    }

    /// Dimension (r+1)n of the block model.
    pub fn dim(&self) -> usize {
        self.blocks() * self.n
    }

    pub fn generators(&self) -> &[LaurentSection] {
        &self.generators
    }

    /// The spanning sections λᵏL⁽ʲ⁾ (0 ≤ j ≤ k ≤ r−1) of W mod λʳH₊.
    pub fn sections(&self) -> &[LaurentSection] {
        &self.sections
    }

    pub fn w(&self) -> &Subbundle {
        &self.w
    }

    /// Multiplication by λᵏ on the block model, truncated.
    pub fn shift(&self, k: usize) -> CMat {
        shift_matrix(self.n, self.blocks(), k)
    }

    /// λⁱH₊ mod λ^{r+1}H₊.
    pub fn tail(&self, i: usize) -> Subbundle {
        let idx: Vec<usize> = (i.min(self.blocks()) * self.n..self.dim()).collect();
        Subbundle::constant(Frame::coordinate(self.dim(), &idx))
    }

    /// max ‖(I − π_W)λs‖ over an orthonormal frame of W at 3 points.
    pub fn lambda_closure_residual(&self) -> Result<f64> {
        let s = self.shift(1);
        let d = at_generic_points(SAMPLE_SEED ^ 0x11, 3, |z| {
            let f = self.w.frame(z)?;
            let q = ident(self.dim()) - f.projector_matrix();
            Ok(op_norm(&(q * &s * f.matrix())))
        })?;
        Ok(d.into_iter().map(|(_, x)| x).fold(0.0, f64::max))
    }

    /// max ‖(I − π_W)λ∂_z s‖/max(1, ‖s‖) over the spanning sections.
    pub fn f_closure_residual(&self) -> Result<f64> {
        let blocks = self.blocks();
        let d = at_generic_points(SAMPLE_SEED ^ 0x12, 3, |z| {
            let q = ident(self.dim()) - self.w.projector(z)?;
            let mut worst = 0.0f64;
            for s in &self.sections {
                let fs = s.differentiate(1)?.shift(1)?;
                let v = CVec::from_vec(fs.eval_blocks(z, blocks)?);
                let scale = CVec::from_vec(s.eval_blocks(z, blocks)?).norm().max(1.0);
                worst = worst.max((&q * v).norm() / scale);
            }
            Ok(worst)
        })?;
        Ok(d.into_iter().map(|(_, x)| x).fold(0.0, f64::max))
    }

    /// The k-th osculating space W₍ₖ₎, spanned by derivatives of order ≤ k
    /// of the spanning sections.
    pub fn osculating(&self, k: usize) -> Result<Subbundle> {
        let blocks = self.blocks();
        let mut gens = Vec::new();
        for s in &self.sections {
            for j in 0..=k {
                gens.push(to_block_vec(&s.differentiate(j)?, blocks)?);
            }
        }
        gens.extend((0..self.n).map(|j| MeroVec::basis(self.dim(), self.r * self.n + j)));
        Subbundle::from_generators(self.dim(), gens)
    }

    /// W_i = W + λⁱH₊.
    pub fn segal_stage(&self, i: usize) -> Result<Subbundle> {
        self.w.sum(&self.tail(i))
    }

    /// W_i = λ^{i−r}W ∩ H₊ = ker((I − π_W)λ^{r−i}).
    pub fn uhlenbeck_stage(&self, i: usize) -> Result<Subbundle> {
        if i >= self.r {
            return Ok(self.w.clone());
        }
        let s = self.shift(self.r - i);
        let w = self.w.clone();
        let d = self.dim();
        let op: JetFn = Arc::new(move |z| {
            let j = w.projector_jet(z)?;
            Ok(Jet {
                value: (ident(d) - j.value) * &s,
                dz: -(j.dz * &s),
                dzbar: -(j.dzbar * &s),
            })
        });
        Subbundle::kernel_of_jet(d, op, RANK_TOL)
    }

    pub fn segal_filtration(&self) -> Result<UnitonFactorization> {
        let f = (0..=self.r).map(|i| self.segal_stage(i)).collect::<Result<Vec<_>>>()?;
        self.factorization(Flavor::Segal, f)
    }

    pub fn uhlenbeck_filtration(&self) -> Result<UnitonFactorization> {
        let f = (0..=self.r).map(|i| self.uhlenbeck_stage(i)).collect::<Result<Vec<_>>>()?;
        self.factorization(Flavor::Uhlenbeck, f)
    }

    /// W_i = W₍ᵣ₋ᵢ₎.
    pub fn osculating_filtration(&self) -> Result<UnitonFactorization> {
        let f = (0..=self.r).map(|i| self.osculating(self.r - i)).collect::<Result<Vec<_>>>()?;
        self.factorization(Flavor::Osculating, f)
    }

    /// Unitons of an arbitrary filtration W₀ ⊇ … ⊇ W_r = W.
    pub fn factorization(&self, flavor: Flavor, filtration: Vec<Subbundle>) -> Result<UnitonFactorization> {
        let solution = extract_unitons(self.n, &filtration)?;
        let res = solution.model_residual(&self.w)?;
        if res > MODEL_TOL {
            return Err(Error::contract("ΦH₊ differs from W", res));
        }
        Ok(UnitonFactorization {
            flavor,
            unitons: solution.unitons().to_vec(),
            filtration,
            solution,
        })
    }
}

/// S^k on ℂ^{blocks·n}: block e moves to block e + k, dropping the overflow.
pub fn shift_matrix(n: usize, blocks: usize, k: usize) -> CMat {
    let d = blocks * n;
    let mut s = CMat::zeros(d, d);
    for i in 0..d.saturating_sub(k * n) {
        s[(i + k * n, i)] = one();
    }
    s
}

/// Checks λW_{i−1} ⊆ W_i ⊆ W_{i−1} at generic points; the error names i.
pub fn check_filtration(n: usize, filtration: &[Subbundle]) -> Result<()> {
    let d = filtration[0].n();
    let s = shift_matrix(n, d / n, 1);
    for i in 1..filtration.len() {
        let (prev, cur) = (&filtration[i - 1], &filtration[i]);
        let res = at_generic_points(SAMPLE_SEED ^ 0x21, 3, |z| {
            let fp = prev.frame(z)?;
            let fc = cur.frame(z)?;
            let inner = pointlin::containment_residual(&fc, &fp);
            let q = ident(d) - fc.projector_matrix();
            let lam = op_norm(&(q * &s * fp.matrix()));
            Ok(inner.max(lam))
        })?
        .into_iter()
        .map(|(_, x)| x)
        .fold(0.0, f64::max);
        if res > MODEL_TOL {
            return Err(Error::contract(format!("filtration condition fails at i = {i}"), res));
        }
    }
    Ok(())
}

/// α_i = P₀Φ_{i−1}⁻¹W_i for i = 1..r, assembled into Φ = Φ_r.
pub fn extract_unitons(n: usize, filtration: &[Subbundle]) -> Result<ExtendedSolution> {
    if filtration.is_empty() {
        return Err(Error::domain("empty filtration"));
    }
    check_filtration(n, filtration)?;
    let mut phi = ExtendedSolution::identity(n);
    for (i, wi) in filtration.iter().enumerate().skip(1) {
        let neg = at_generic_points(SAMPLE_SEED ^ 0x22, 2, |z| phi.inverse_negative_part(wi, z))?
            .into_iter()
            .map(|(_, x)| x)
            .fold(0.0, f64::max);
        if neg > MODEL_TOL {
            return Err(Error::contract(format!("Φ_{}⁻¹W_{i} leaves H₊", i - 1), neg));
        }
        let alpha = phi.p0_inverse_image(wi)?;
        phi = phi.apply_uniton(alpha)?;
    }
    Ok(phi)
}
