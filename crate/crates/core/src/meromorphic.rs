//! Rational functions of one complex variable and the vector / λ-Laurent
//! objects built from them.
//!
//! A [`RatFun`] is a quotient of complex polynomials kept in reduced form
//! (approximate gcd removed, monic denominator). A [`MeroVec`] is a ℂⁿ-valued
//! meromorphic map with rational components, and a [`LaurentSection`] is a
//! finite sum Σ λᵏ Lₖ with `MeroVec` coefficients.
//!
//! Differentiation is exact (quotient rule on coefficient lists); evaluation
//! reports poles through [`Error::Pole`].

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Maximal polynomial degree accepted anywhere.
pub const MAX_DEGREE: usize = 64;
/// Admissible λ-exponent range.
pub const MIN_EXPONENT: i32 = -16;
pub const MAX_EXPONENT: i32 = 16;
/// Relative threshold for the approximate gcd.
pub const GCD_TOL: f64 = 1e-10;
/// Pole detection factor: |den(z)| < POLE_TOL·(1+|z|)^deg.
pub const POLE_TOL: f64 = 1e-12;

mod poly {
    use super::*;

    pub fn max_abs(p: &[C64]) -> f64 {
        p.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Drops trailing coefficients that are negligible against `scale`.
    pub fn trim(mut p: Vec<C64>, scale: f64) -> Vec<C64> {
        let cut = scale * 1e-14;
        while let Some(c) = p.last() {
            if c.norm() <= cut {
                p.pop();
            } else {
                break;
            }
        }
        p
    }

    pub fn trim_self(p: Vec<C64>) -> Vec<C64> {
        let s = max_abs(&p);
        trim(p, s)
    }

    pub fn degree(p: &[C64]) -> usize {
        p.len().saturating_sub(1)
    }

    pub fn add(a: &[C64], b: &[C64]) -> Vec<C64> {
        let n = a.len().max(b.len());
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (i, c) in a.iter().enumerate() {
            out[i] += c;
        }
        for (i, c) in b.iter().enumerate() {
            out[i] += c;
        }
        let s = max_abs(a).max(max_abs(b));
        trim(out, s)
    }

    pub fn scale(a: &[C64], s: C64) -> Vec<C64> {
        trim_self(a.iter().map(|c| c * s).collect())
    }

    pub fn mul(a: &[C64], b: &[C64]) -> Vec<C64> {
        if a.is_empty() || b.is_empty() {
            return Vec::new();
        }
        let mut out = vec![C64::new(0.0, 0.0); a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        trim_self(out)
    }

    pub fn derivative(a: &[C64]) -> Vec<C64> {
        a.iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| c * k as f64)
            .collect()
    }

    /// Long division; returns (quotient, remainder).
    pub fn divmod(a: &[C64], b: &[C64]) -> (Vec<C64>, Vec<C64>) {
        let b = trim_self(b.to_vec());
        let lead = *b.last().expect("division by the zero polynomial");
        if a.len() < b.len() {
            return (Vec::new(), a.to_vec());
        }
        let mut r = a.to_vec();
        let mut q = vec![C64::new(0.0, 0.0); a.len() - b.len() + 1];
        for k in (0..q.len()).rev() {
            let c = r[k + b.len() - 1] / lead;
            q[k] = c;
            for (j, bj) in b.iter().enumerate() {
                r[k + j] -= c * bj;
            }
        }
        r.truncate(b.len() - 1);
        let s = max_abs(a);
        (trim_self(q), trim(r, s))
    }

    /// Approximate monic gcd with the relative threshold [`GCD_TOL`].
    pub fn gcd(a: &[C64], b: &[C64]) -> Vec<C64> {
        let scale = max_abs(a).max(max_abs(b));
        let mut x = trim_self(a.to_vec());
        let mut y = trim_self(b.to_vec());
        if x.len() < y.len() {
            std::mem::swap(&mut x, &mut y);
        }
        loop {
            if y.is_empty() || max_abs(&y) <= GCD_TOL * scale {
                break;
            }
            let (_, r) = divmod(&x, &y);
            x = y;
            y = r;
        }
        if x.is_empty() {
            return vec![C64::new(1.0, 0.0)];
        }
        let lead = *x.last().unwrap();
        x.iter().map(|c| c / lead).collect()
    }

    pub fn eval(p: &[C64], z: C64) -> C64 {
        p.iter().rev().fold(C64::new(0.0, 0.0), |acc, c| acc * z + c)
    }
}

/// A rational function num/den with complex coefficients in ascending degree.
#[derive(Clone, Debug, PartialEq)]
pub struct RatFun {
    num: Vec<C64>,
    den: Vec<C64>,
}

/// Arithmetic operation selector for [`rat_arith`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn check_degree(p: &[C64]) -> Result<()> {
    if poly::degree(p) > MAX_DEGREE {
        Err(Error::Capacity(format!(
            "polynomial degree {} exceeds {}",
            poly::degree(p),
            MAX_DEGREE
        )))
    } else {
        Ok(())
    }
}

impl RatFun {
    /// Builds num/den and reduces it.
    pub fn new(num: Vec<C64>, den: Vec<C64>) -> Result<Self> {
        let den = poly::trim_self(den);
        if den.is_empty() {
            return Err(Error::domain("denominator is identically zero"));
        }
        check_degree(&num)?;
        check_degree(&den)?;
        Ok(Self::reduced(num, den))
    }

    fn reduced(num: Vec<C64>, den: Vec<C64>) -> Self {
        let num = poly::trim_self(num);
        if num.is_empty() {
            return Self::zero();
        }
        let (num, den) = if den.len() > 1 {
            let g = poly::gcd(&num, &den);
            if g.len() > 1 {
                (poly::divmod(&num, &g).0, poly::divmod(&den, &g).0)
            } else {
                (num, den)
            }
        } else {
            (num, den)
        };
        let lead = *den.last().unwrap();
        RatFun {
            num: poly::trim_self(num.iter().map(|c| c / lead).collect()),
            den: den.iter().map(|c| c / lead).collect(),
        }
    }

    /// A polynomial with the given ascending coefficients.
    pub fn poly(coeffs: Vec<C64>) -> Result<Self> {
        Self::new(coeffs, vec![C64::new(1.0, 0.0)])
    }

    /// Polynomial from real coefficients.
    pub fn poly_re(coeffs: &[f64]) -> Self {
        Self::poly(coeffs.iter().map(|&c| C64::new(c, 0.0)).collect()).expect("degree within cap")
    }

    pub fn constant(c: C64) -> Self {
        Self::reduced(vec![c], vec![C64::new(1.0, 0.0)])
    }

    pub fn zero() -> Self {
        RatFun {
            num: Vec::new(),
            den: vec![C64::new(1.0, 0.0)],
        }
    }

    pub fn one() -> Self {
        Self::constant(C64::new(1.0, 0.0))
    }

    /// The coordinate function z.
    pub fn z() -> Self {
        Self::poly_re(&[0.0, 1.0])
    }

    /// c·zᵏ.
    pub fn monomial(c: C64, k: usize) -> Self {
        let mut v = vec![C64::new(0.0, 0.0); k + 1];
        v[k] = c;
        Self::poly(v).expect("degree within cap")
    }

    pub fn numerator(&self) -> &[C64] {
        &self.num
    }

    pub fn denominator(&self) -> &[C64] {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_empty()
    }

    pub fn is_polynomial(&self) -> bool {
        self.den.len() == 1
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        rat_arith(self, o, ArithOp::Add)
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        rat_arith(self, o, ArithOp::Sub)
    }

    pub fn mul(&self, o: &Self) -> Result<Self> {
        rat_arith(self, o, ArithOp::Mul)
    }

    pub fn div(&self, o: &Self) -> Result<Self> {
        rat_arith(self, o, ArithOp::Div)
    }

    pub fn scale(&self, c: C64) -> Self {
        if c == C64::new(0.0, 0.0) {
            return Self::zero();
        }
        RatFun {
            num: poly::scale(&self.num, c),
            den: self.den.clone(),
        }
    }

    /// Exact first derivative by the quotient rule.
    pub fn derivative(&self) -> Result<Self> {
        if self.is_polynomial() {
            let d = self.den[0];
            return Self::new(poly::derivative(&self.num), vec![d]);
        }
        let a = poly::mul(&poly::derivative(&self.num), &self.den);
        let b = poly::mul(&self.num, &poly::derivative(&self.den));
        let num = poly::add(&a, &poly::scale(&b, C64::new(-1.0, 0.0)));
        Self::new(num, poly::mul(&self.den, &self.den))
    }

    /// Evaluates at `z`; a pole yields `Error::Pole { component: 0 }`.
    pub fn eval(&self, z: C64) -> Result<C64> {
        let d = poly::eval(&self.den, z);
        let deg = poly::degree(&self.den) as i32;
        if d.norm() < POLE_TOL * (1.0 + z.norm()).powi(deg) {
            return Err(Error::Pole { component: 0 });
        }
        Ok(poly::eval(&self.num, z) / d)
    }

    /// Coefficientwise complex conjugate (the function z ↦ conj f(conj z)).
    pub fn conj_coeffs(&self) -> Self {
        RatFun {
            num: self.num.iter().map(|c| c.conj()).collect(),
            den: self.den.iter().map(|c| c.conj()).collect(),
        }
    }
}

/// Exact rational arithmetic in reduced canonical form.
pub fn rat_arith(a: &RatFun, b: &RatFun, op: ArithOp) -> Result<RatFun> {
    match op {
        ArithOp::Add | ArithOp::Sub => {
            let s = if op == ArithOp::Add { 1.0 } else { -1.0 };
            if a.den == b.den {
                let num = poly::add(&a.num, &poly::scale(&b.num, C64::new(s, 0.0)));
                return RatFun::new(num, a.den.clone());
            }
            let l = poly::mul(&a.num, &b.den);
            let r = poly::mul(&b.num, &a.den);
            let num = poly::add(&l, &poly::scale(&r, C64::new(s, 0.0)));
            RatFun::new(num, poly::mul(&a.den, &b.den))
        }
        ArithOp::Mul => RatFun::new(poly::mul(&a.num, &b.num), poly::mul(&a.den, &b.den)),
        ArithOp::Div => {
            if b.is_zero() {
                return Err(Error::domain("division by the zero function"));
            }
            RatFun::new(poly::mul(&a.num, &b.den), poly::mul(&a.den, &b.num))
        }
    }
}

/// A ℂⁿ-valued meromorphic map with rational components.
#[derive(Clone, Debug, PartialEq)]
pub struct MeroVec {
    pub components: Vec<RatFun>,
}

impl MeroVec {
    pub fn new(components: Vec<RatFun>) -> Self {
        MeroVec { components }
    }

    pub fn zeros(n: usize) -> Self {
        MeroVec::new(vec![RatFun::zero(); n])
    }

    /// Constant vector.
    pub fn constant(v: &[C64]) -> Self {
        MeroVec::new(v.iter().map(|&c| RatFun::constant(c)).collect())
    }

    /// The standard basis vector eₖ in ℂⁿ.
    pub fn basis(n: usize, k: usize) -> Self {
        let mut m = MeroVec::zeros(n);
        m.components[k] = RatFun::one();
        m
    }

    /// Vector of real-coefficient polynomials.
    pub fn from_real_polys(polys: &[&[f64]]) -> Self {
        MeroVec::new(polys.iter().map(|p| RatFun::poly_re(p)).collect())
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(RatFun::is_zero)
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        same_n(self.n(), o.n())?;
        let c = self
            .components
            .iter()
            .zip(&o.components)
            .map(|(a, b)| a.add(b))
            .collect::<Result<_>>()?;
        Ok(MeroVec::new(c))
    }

    pub fn scale(&self, f: &RatFun) -> Result<Self> {
        let c = self
            .components
            .iter()
            .map(|a| a.mul(f))
            .collect::<Result<_>>()?;
        Ok(MeroVec::new(c))
    }

    pub fn scale_c(&self, c: C64) -> Self {
        MeroVec::new(self.components.iter().map(|a| a.scale(c)).collect())
    }

    /// Applies a constant matrix given row by row.
    pub fn apply_const(&self, m: &[Vec<C64>]) -> Result<Self> {
        let mut out = Vec::with_capacity(m.len());
        for row in m {
            same_n(row.len(), self.n())?;
            let mut acc = RatFun::zero();
            for (c, f) in row.iter().zip(&self.components) {
                if *c != C64::new(0.0, 0.0) {
                    acc = acc.add(&f.scale(*c))?;
                }
            }
            out.push(acc);
        }
        Ok(MeroVec::new(out))
    }

    pub fn eval(&self, z: C64) -> Result<Vec<C64>> {
        self.components
            .iter()
            .enumerate()
            .map(|(i, f)| f.eval(z).map_err(|_| Error::Pole { component: i }))
            .collect()
    }
}

fn same_n(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::domain(format!("ambient dimension mismatch: {a} vs {b}")))
    }
}

/// Exact k-th z-derivative, componentwise.
pub fn differentiate(v: &MeroVec, k: usize) -> Result<MeroVec> {
    let mut out = v.clone();
    for _ in 0..k {
        out = MeroVec::new(
            out.components
                .iter()
                .map(RatFun::derivative)
                .collect::<Result<_>>()?,
        );
    }
    Ok(out)
}

/// A finite λ-Laurent polynomial Σ λᵏ Lₖ with `MeroVec` coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct LaurentSection {
    n: usize,
    terms: BTreeMap<i32, MeroVec>,
}

fn check_exponent(k: i32) -> Result<()> {
    if (MIN_EXPONENT..=MAX_EXPONENT).contains(&k) {
        Ok(())
    } else {
        Err(Error::Capacity(format!(
            "λ-exponent {k} outside [{MIN_EXPONENT}, {MAX_EXPONENT}]"
        )))
    }
}

impl LaurentSection {
    pub fn zero(n: usize) -> Self {
        LaurentSection {
            n,
            terms: BTreeMap::new(),
        }
    }

    /// λᵏ·v.
    pub fn monomial(k: i32, v: MeroVec) -> Result<Self> {
        let mut s = Self::zero(v.n());
        s.set(k, v)?;
        Ok(s)
    }

    pub fn from_terms(n: usize, terms: impl IntoIterator<Item = (i32, MeroVec)>) -> Result<Self> {
        let mut s = Self::zero(n);
        for (k, v) in terms {
            let cur = s.coeff(k);
            s.set(k, cur.add(&v)?)?;
        }
        Ok(s)
    }

    /// Replaces the coefficient of λᵏ.
    pub fn set(&mut self, k: i32, v: MeroVec) -> Result<()> {
        check_exponent(k)?;
        same_n(self.n, v.n())?;
        if v.is_zero() {
            self.terms.remove(&k);
        } else {
            self.terms.insert(k, v);
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &BTreeMap<i32, MeroVec> {
        &self.terms
    }

    /// The coefficient Pₖ(L) (zero if absent).
    pub fn coeff(&self, k: i32) -> MeroVec {
        self.terms
            .get(&k)
            .cloned()
            .unwrap_or_else(|| MeroVec::zeros(self.n))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        same_n(self.n, o.n)?;
        let mut out = self.clone();
        for (&k, v) in &o.terms {
            let cur = out.coeff(k);
            out.set(k, cur.add(v)?)?;
        }
        Ok(out)
    }

    /// Multiplication by λᵏ.
    pub fn shift(&self, k: i32) -> Result<Self> {
        let mut out = Self::zero(self.n);
        for (&e, v) in &self.terms {
            out.set(e + k, v.clone())?;
        }
        Ok(out)
    }

    /// Exact k-th z-derivative of every coefficient.
    pub fn differentiate(&self, k: usize) -> Result<Self> {
        let mut out = Self::zero(self.n);
        for (&e, v) in &self.terms {
            out.set(e, differentiate(v, k)?)?;
        }
        Ok(out)
    }

    /// Drops every term with exponent ≥ `k`.
    pub fn truncate_below(&self, k: i32) -> Self {
        LaurentSection {
            n: self.n,
            terms: self
                .terms
                .iter()
                .filter(|(&e, _)| e < k)
                .map(|(&e, v)| (e, v.clone()))
                .collect(),
        }
    }

    pub fn min_exponent(&self) -> Option<i32> {
        self.terms.keys().next().copied()
    }

    pub fn max_exponent(&self) -> Option<i32> {
        self.terms.keys().next_back().copied()
    }

    /// Evaluates Σ λᵏ Lₖ(z).
    pub fn eval(&self, z: C64, lambda: C64) -> Result<Vec<C64>> {
        if lambda == C64::new(0.0, 0.0) {
            return Err(Error::domain("λ must be nonzero"));
        }
        let mut out = vec![C64::new(0.0, 0.0); self.n];
        for (&k, v) in &self.terms {
            let w = lambda.powi(k);
            for (o, x) in out.iter_mut().zip(v.eval(z)?) {
                *o += w * x;
            }
        }
        Ok(out)
    }

    /// Coefficient vectors of exponents `0..blocks` stacked into ℂ^{blocks·n}.
    pub fn eval_blocks(&self, z: C64, blocks: usize) -> Result<Vec<C64>> {
        let mut out = vec![C64::new(0.0, 0.0); blocks * self.n];
        for (&k, v) in &self.terms {
            if k < 0 {
                return Err(Error::domain("section has negative λ-exponents"));
            }
            let k = k as usize;
            if k < blocks {
                out[k * self.n..(k + 1) * self.n].copy_from_slice(&v.eval(z)?);
            }
        }
        Ok(out)
    }
}

/// The order o(L): least exponent with a nonzero coefficient.
pub fn order(l: &LaurentSection) -> Result<i32> {
    l.min_exponent()
        .ok_or_else(|| Error::domain("order of the zero section is undefined"))
}

// JSON: scalar = [re, im], polynomial = [scalar...], RatFun = {num, den},
// MeroVec = [RatFun...], LaurentSection = {"k": MeroVec}.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RatFunRepr {
    num: Vec<[f64; 2]>,
    den: Vec<[f64; 2]>,
}

fn to_pairs(p: &[C64]) -> Vec<[f64; 2]> {
    p.iter().map(|c| [c.re, c.im]).collect()
}

fn from_pairs(p: &[[f64; 2]]) -> std::result::Result<Vec<C64>, String> {
    p.iter()
        .map(|&[re, im]| {
            if re.is_finite() && im.is_finite() {
                Ok(C64::new(re, im))
            } else {
                Err("non-finite coefficient".to_string())
            }
        })
        .collect()
}

impl Serialize for RatFun {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RatFunRepr {
            num: to_pairs(&self.num),
            den: to_pairs(&self.den),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RatFun {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = RatFunRepr::deserialize(d)?;
        let num = from_pairs(&r.num).map_err(D::Error::custom)?;
        let den = from_pairs(&r.den).map_err(D::Error::custom)?;
        if poly::trim_self(den.clone()).is_empty() {
            return Err(D::Error::custom("denominator is identically zero"));
        }
        if poly::degree(&num) > MAX_DEGREE || poly::degree(&den) > MAX_DEGREE {
            return Err(D::Error::custom("capacity exceeded: polynomial degree"));
        }
        // Stored values are already canonical; keep them verbatim.
        Ok(RatFun { num, den })
    }
}

impl Serialize for MeroVec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.components.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MeroVec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(MeroVec::new(Vec::<RatFun>::deserialize(d)?))
    }
}

impl Serialize for LaurentSection {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let m: BTreeMap<String, &MeroVec> =
            self.terms.iter().map(|(k, v)| (k.to_string(), v)).collect();
        m.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LaurentSection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = BTreeMap::<String, MeroVec>::deserialize(d)?;
        let n = m
            .values()
            .next()
            .map(MeroVec::n)
            .ok_or_else(|| D::Error::custom("empty LaurentSection carries no dimension"))?;
        let mut terms = BTreeMap::new();
        for (k, v) in m {
            let e: i32 = k
                .parse()
                .map_err(|_| D::Error::custom(format!("bad exponent key {k:?}")))?;
            if !(MIN_EXPONENT..=MAX_EXPONENT).contains(&e) {
                return Err(D::Error::custom(format!("capacity exceeded: exponent {e}")));
            }
            if v.n() != n {
                return Err(D::Error::custom("ambient dimension mismatch"));
            }
            terms.insert(e, v);
        }
        Ok(LaurentSection { n, terms })
    }
}
