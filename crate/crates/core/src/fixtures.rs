//! Built-in examples: Grassmannian models given by generators, plus the
//! analytic torus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::AnalyticMap;
use crate::grassmodel::GrassModel;
use crate::meromorphic::{differentiate, LaurentSection, MeroVec, RatFun};
use num_complex::Complex64 as C64;
use crate::{Error, Result};

pub const MODEL_SCHEMA: &str = "grassmodel/v1";
pub const ANALYTIC_SCHEMA: &str = "analytic/v1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetry {
    #[default]
    None,
    Real,
    Symplectic,
}

/// Serialized Grassmannian model: W generated by `generators` in degree `r`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n: usize,
    pub r: usize,
    pub generators: Vec<LaurentSection>,
    #[serde(default)]
    pub symmetry: Symmetry,
}

impl ModelSpec {
    pub fn new(name: &str, n: usize, r: usize, generators: Vec<LaurentSection>, symmetry: Symmetry) -> Self {
        ModelSpec {
            schema: MODEL_SCHEMA.into(),
            name: Some(name.into()),
            n,
            r,
            generators,
            symmetry,
        }
    }

    pub fn build(&self) -> Result<GrassModel> {
        if self.schema != MODEL_SCHEMA {
            return Err(Error::Input(format!("unsupported schema {:?}", self.schema)));
        }
        GrassModel::generate_w(self.n, self.generators.clone(), self.r)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(e.to_string()))
    }
}

/// Serialized reference to a closed-form map.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticSpec {
    pub schema: String,
    pub name: String,
}

#[derive(Clone)]
pub enum FixtureKind {
    Model(ModelSpec),
    Analytic(AnalyticMap),
}

#[derive(Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub summary: &'static str,
    pub kind: FixtureKind,
}

impl Fixture {
    pub fn model(&self) -> Option<&ModelSpec> {
        match &self.kind {
            FixtureKind::Model(m) => Some(m),
            FixtureKind::Analytic(_) => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match &self.kind {
            FixtureKind::Model(m) => serde_json::to_value(m).expect("model serializes"),
            FixtureKind::Analytic(a) => serde_json::to_value(AnalyticSpec {
                schema: ANALYTIC_SCHEMA.into(),
                name: a.name.clone(),
            })
            .expect("reference serializes"),
        }
    }
}

const CATALOGUE: &[(&str, &str)] = &[
    ("holomorphic-line", "rational normal curve in CP2, degree 1"),
    ("mixed-pair", "S1-invariant degree 2 model in C4 with a non-holomorphic Grassmannian map"),
    ("frenet-pair", "osculating flag of the rational normal curve in C5, degree 2"),
    ("real-mixed-pair", "real degree 2 model in C4 from an isotropic curve"),
    ("isotropic-rp4", "real degree 2 model from a totally isotropic curve in C5"),
    ("quaternionic-mixed-pair", "symplectic degree 2 model in C4"),
    ("superconformal-torus-cp2", "the equianharmonic superconformal torus in CP2"),
    ("example-8.2", "non-S1-invariant degree 3 model in C4"),
    ("real-example-8.2", "real non-S1-invariant degree 3 model in C8"),
    ("symplectic-example-8.2", "symplectic non-S1-invariant degree 3 model in C6"),
];

pub fn catalogue() -> &'static [(&'static str, &'static str)] {
    CATALOGUE
}

pub fn fixture(name: &str) -> Result<Fixture> {
    let (name, summary) = CATALOGUE
        .iter()
        .find(|(n, _)| *n == name)
        .copied()
        .ok_or_else(|| Error::Input(format!("unknown fixture {name:?}")))?;
    let kind = match name {
        "superconformal-torus-cp2" => FixtureKind::Analytic(AnalyticMap::superconformal_torus()),
        _ => FixtureKind::Model(model_fixture(name)?),
    };
    Ok(Fixture { name, summary, kind })
}

pub fn all() -> Vec<Fixture> {
    CATALOGUE
        .iter()
        .map(|(n, _)| fixture(n).expect("catalogue entries build"))
        .collect()
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn cpoly(coeffs: &[(f64, f64)]) -> RatFun {
    RatFun::poly(coeffs.iter().map(|&(a, b)| c(a, b)).collect()).expect("nonempty polynomial")
}

fn sec(terms: Vec<(i32, MeroVec)>) -> LaurentSection {
    let n = terms[0].1.n();
    LaurentSection::from_terms(n, terms).expect("valid section")
}

fn d(v: &MeroVec, k: usize) -> MeroVec {
    differentiate(v, k).expect("derivative of a polynomial vector")
}

fn model_fixture(name: &str) -> Result<ModelSpec> {
    let m = match name {
        "holomorphic-line" => {
            let f = MeroVec::from_real_polys(&[&[1.0], &[0.0, 1.0], &[0.0, 0.0, 1.0]]);
            ModelSpec::new(name, 3, 1, vec![sec(vec![(0, f)])], Symmetry::None)
        }
        "mixed-pair" => {
            let f = MeroVec::from_real_polys(&[&[1.0], &[0.0, 1.0], &[0.0, 0.0, 1.0], &[0.0]]);
            let g = MeroVec::from_real_polys(&[&[0.0], &[0.0], &[0.0, 1.0], &[1.0]]);
            ModelSpec::new(name, 4, 2, vec![sec(vec![(0, f)]), sec(vec![(1, g)])], Symmetry::None)
        }
        "frenet-pair" => {
            let f = rational_normal_curve(5);
            let f2 = d(&f, 2);
            ModelSpec::new(name, 5, 2, vec![sec(vec![(0, f)]), sec(vec![(1, f2)])], Symmetry::None)
        }
        "real-mixed-pair" => {
            let f = MeroVec::new(vec![
                cpoly(&[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (-1.0, 0.0)]),
                cpoly(&[(0.0, -1.0), (0.0, 0.0), (0.0, 0.0), (0.0, -1.0)]),
                cpoly(&[(0.0, 0.0), (1.0, 0.0), (1.0, 0.0)]),
                cpoly(&[(0.0, 0.0), (0.0, -1.0), (0.0, 1.0)]),
            ]);
            let w = MeroVec::new(vec![
                f.components[1].clone(),
                f.components[0].scale(c(-1.0, 0.0)),
                RatFun::zero(),
                RatFun::zero(),
            ]);
            ModelSpec::new(name, 4, 2, vec![sec(vec![(0, f)]), sec(vec![(1, w)])], Symmetry::Real)
        }
        "isotropic-rp4" => {
            let f = totally_isotropic_curve(5)?;
            let (f1, f2) = (d(&f, 1), d(&f, 2));
            ModelSpec::new(
                name,
                5,
                2,
                vec![sec(vec![(0, f)]), sec(vec![(0, f1)]), sec(vec![(1, f2)])],
                Symmetry::Real,
            )
        }
        "quaternionic-mixed-pair" => {
            let f = MeroVec::from_real_polys(&[&[3.0], &[0.0, 3.0], &[0.0, 0.0, 0.0, -1.0], &[0.0, 0.0, 3.0]]);
            let w = MeroVec::from_real_polys(&[&[3.0], &[0.0], &[0.0, 0.0, 0.0, -1.0], &[0.0]]);
            ModelSpec::new(name, 4, 2, vec![sec(vec![(0, f)]), sec(vec![(1, w)])], Symmetry::Symplectic)
        }
        "example-8.2" => {
            let h0 = rational_normal_curve(4);
            let e4 = MeroVec::basis(4, 3);
            ModelSpec::new(name, 4, 3, vec![sec(vec![(0, h0), (2, e4)])], Symmetry::None)
        }
        "real-example-8.2" => real_example()?,
        "symplectic-example-8.2" => symplectic_example()?,
        _ => return Err(Error::Input(format!("unknown fixture {name:?}"))),
    };
    Ok(m)
}

/// (1, z, …, z^{n−1}).
pub fn rational_normal_curve(n: usize) -> MeroVec {
    MeroVec::new((0..n).map(|k| RatFun::monomial(c(1.0, 0.0), k)).collect())
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// A full curve f in ℂⁿ (n odd) with Σ f^{(j)}f^{(k)} = 0 whenever j + k < n − 1.
pub fn totally_isotropic_curve(n: usize) -> Result<MeroVec> {
    if n % 2 == 0 || n < 3 {
        return Err(Error::domain(format!("totally isotropic model curve needs odd n ≥ 3, got {n}")));
    }
    let dg = n - 1;
    // x_k = C(d,k) zᵏ pairs with x_{d−k} through (−1)ᵏ/C(d,k); diagonalize each pair.
    let x = |k: usize| RatFun::monomial(c(binom(dg, k), 0.0), k);
    let mut comps = vec![RatFun::zero(); n];
    for k in 0..dg / 2 {
        let s = (C64::new((-1f64).powi(k as i32) / binom(dg, k) / 2.0, 0.0)).sqrt();
        let (a, b) = (x(k), x(dg - k));
        comps[2 * k] = a.add(&b)?.scale(s);
        comps[2 * k + 1] = a.sub(&b)?.scale(s * c(0.0, 1.0));
    }
    let mid = dg / 2;
    let s = C64::new((-1f64).powi(mid as i32) / binom(dg, mid), 0.0).sqrt();
    comps[n - 1] = x(mid).scale(s);
    Ok(MeroVec::new(comps))
}

fn bilinear(a: &MeroVec, b: &MeroVec) -> Result<RatFun> {
    let mut acc = RatFun::zero();
    for (x, y) in a.components.iter().zip(&b.components) {
        acc = acc.add(&x.mul(y)?)?;
    }
    Ok(acc)
}

fn concat(a: &MeroVec, b: &MeroVec) -> MeroVec {
    MeroVec::new(a.components.iter().chain(&b.components).cloned().collect())
}

fn halves(v: &MeroVec) -> (MeroVec, MeroVec) {
    let m = v.n() / 2;
    (
        MeroVec::new(v.components[..m].to_vec()),
        MeroVec::new(v.components[m..].to_vec()),
    )
}

/// x_top·y_bot + x_bot·y_top.
fn split_form(x: &MeroVec, y: &MeroVec) -> Result<RatFun> {
    let (xt, xb) = halves(x);
    let (yt, yb) = halves(y);
    bilinear(&xt, &yb)?.add(&bilinear(&xb, &yt)?)
}

/// Unitary change of coordinates taking the split form to Σ uᵢvᵢ.
fn split_to_standard(m: usize) -> Vec<Vec<C64>> {
    let s = 1.0 / 2f64.sqrt();
    let mut rows = vec![vec![c(0.0, 0.0); 2 * m]; 2 * m];
    for i in 0..m {
        rows[i][i] = c(s, 0.0);
        rows[i][i + m] = c(s, 0.0);
        rows[i + m][i] = c(0.0, s);
        rows[i + m][i + m] = c(0.0, -s);
    }
    rows
}

fn mat_vec(a: &[Vec<RatFun>], p: &MeroVec) -> Result<MeroVec> {
    let mut out = Vec::with_capacity(a.len());
    for row in a {
        out.push(bilinear(&MeroVec::new(row.clone()), p)?);
    }
    Ok(MeroVec::new(out))
}

/// Real degree 3 model in ℂ⁸: W = span{H₀+λ²H₁, H₂+λ²H₃} + λδ₂ + λ²δ₃ + λ³H₊
/// with δ₂ the graph of a skew map A(z), maximal isotropic.
fn real_example() -> Result<ModelSpec> {
    let zero = RatFun::zero;
    let mono = |a: f64, k: usize| RatFun::monomial(c(a, 0.0), k);
    let mut a = vec![vec![zero(); 4]; 4];
    let mut set = |i: usize, j: usize, f: RatFun| {
        a[j][i] = f.scale(c(-1.0, 0.0));
        a[i][j] = f;
    };
    set(0, 1, mono(1.0, 1));
    set(0, 3, mono(1.0 / 3.0, 3));
    set(1, 2, mono(-0.5, 2));
    set(2, 3, mono(0.25, 4));
    let p0 = MeroVec::new(vec![mono(-1.0, 1), zero(), mono(1.0, 0), zero()]);
    let p2 = MeroVec::new(vec![zero(), mono(-1.0, 2), zero(), mono(1.0, 0)]);
    let graph = |p: &MeroVec| -> Result<MeroVec> { Ok(concat(p, &mat_vec(&a, p)?)) };
    let h0 = graph(&p0)?;
    let h2 = graph(&p2)?;
    // K ⊥ H: top part c, bottom part fixed by the unit entry of p.
    let partner = |p: &MeroVec, top: [f64; 4], slot: usize| -> Result<MeroVec> {
        let cv = MeroVec::from_real_polys(&[&[top[0]], &[top[1]], &[top[2]], &[top[3]]]);
        let ap = mat_vec(&a, p)?;
        let mut bot = vec![zero(); 4];
        bot[slot] = bilinear(&ap, &cv)?.scale(c(-1.0, 0.0));
        Ok(concat(&cv, &MeroVec::new(bot)))
    };
    let k0 = partner(&p0, [1.0, 1.0, 0.0, 1.0], 2)?;
    let k2 = partner(&p2, [0.0, 1.0, 1.0, 1.0], 3)?;
    let p = split_form(&k0, &h2)?;
    let q = split_form(&h0, &k2)?.scale(c(-1.0, 0.0));
    let h1 = k0.scale(&q)?;
    let h3 = k2.scale(&p)?;
    let t = split_to_standard(4);
    let std = |v: &MeroVec| v.apply_const(&t);
    let gens = vec![
        sec(vec![(0, std(&h0)?), (2, std(&h1)?)]),
        sec(vec![(0, std(&h2)?), (2, std(&h3)?)]),
    ];
    Ok(ModelSpec::new("real-example-8.2", 8, 3, gens, Symmetry::Real))
}

/// Symplectic degree 3 model in ℂ⁶: W = span{H₀+λ²H₂} + λ{(H₀)₍₁₎, H₃}
/// + λ²{(H₀)₍₂₎, (H₃)₍₁₎} + λ³H₊ with H₀ totally J-isotropic and H₃ = H₀‴.
fn symplectic_example() -> Result<ModelSpec> {
    let h0 = symplectic_isotropic_curve();
    let h2 = MeroVec::from_real_polys(&[&[1.0], &[0.0], &[0.0], &[0.0], &[1.0], &[0.0]]);
    let h3 = d(&h0, 3);
    let gens = vec![sec(vec![(0, h0), (2, h2)]), sec(vec![(1, h3)])];
    Ok(ModelSpec::new("symplectic-example-8.2", 6, 3, gens, Symmetry::Symplectic))
}

/// (z⁵, −z⁴, z³, 1, 5z, 10z²): ω(H^{(j)}, H^{(k)}) = 0 for j + k ≤ 4.
pub fn symplectic_isotropic_curve() -> MeroVec {
    let mono = |a: f64, k: usize| RatFun::monomial(c(a, 0.0), k);
    MeroVec::new(vec![
        mono(1.0, 5),
        mono(-1.0, 4),
        mono(1.0, 3),
        mono(1.0, 0),
        mono(5.0, 1),
        mono(10.0, 2),
    ])
}

/// Random model: 1–3 generators with small integer polynomial coefficients
/// placed at random exponents in [0, r−1].
pub fn random_model(seed: u64, n: usize, r: usize) -> ModelSpec {
    random_spec(seed, n, r, 1, "random")
}

/// As [`random_model`] with even exponents only, so that W is ν-invariant
/// and Φ_{−1} is Grassmannian.
pub fn random_nu_model(seed: u64, n: usize, r: usize) -> ModelSpec {
    random_spec(seed, n, r, 2, "random-nu")
}

fn random_spec(seed: u64, n: usize, r: usize, step: usize, prefix: &str) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(1..=3usize);
    let mut gens = Vec::with_capacity(count);
    for _ in 0..count {
        let mut terms = Vec::new();
        for k in (0..r as i32).step_by(step) {
            if k > 0 && rng.gen_bool(0.5) {
                continue;
            }
            let comps = (0..n)
                .map(|_| {
                    let deg = rng.gen_range(0..=2usize);
                    let coeffs: Vec<C64> = (0..=deg)
                        .map(|_| c(rng.gen_range(-2..=2) as f64, rng.gen_range(-1..=1) as f64))
                        .collect();
                    RatFun::poly(coeffs).unwrap_or_else(|_| RatFun::zero())
                })
                .collect();
            let v = MeroVec::new(comps);
            if !v.is_zero() {
                terms.push((k, v));
            }
        }
        if terms.is_empty() {
            terms.push((0, MeroVec::basis(n, rng.gen_range(0..n))));
        }
        gens.push(sec(terms));
    }
    let mut spec = ModelSpec::new(prefix, n, r, gens, Symmetry::None);
    spec.name = Some(format!("{prefix}-{seed}"));
    spec
}
