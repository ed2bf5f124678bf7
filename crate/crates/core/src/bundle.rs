//! Moving subbundles of the trivial bundle ℂⁿ, the operator A_z of a
//! unitary map, second fundamental forms and Gauss transforms.
//!
//! Structural quantities are evaluated only at generic points. A subbundle
//! fixes its generic rank at construction by sampling seeded points in the
//! disc |z − 0.5 − 0.3i| < 0.9; a point where the spanning matrix drops rank
//! yields [`Error::GenericPoint`].

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::meromorphic::{differentiate, MeroVec};
use crate::pointlin::{self, jacobi_svd, max_abs, op_norm, CMat, Frame, RANK_TOL};

pub type MatFn = Arc<dyn Fn(C64) -> Result<CMat> + Send + Sync>;
pub type JetFn = Arc<dyn Fn(C64) -> Result<Jet> + Send + Sync>;

/// Finite-difference step for Wirtinger derivatives.
pub const FD_STEP: f64 = 5e-3;
/// Rank tolerance for spans built from finite-difference data.
pub const FD_RANK_TOL: f64 = 1e-7;
pub const SAMPLE_SEED: u64 = 0xC0FFEE;
pub const SAMPLE_CENTER: C64 = C64::new(0.5, 0.3);
pub const SAMPLE_RADIUS: f64 = 0.9;
pub const MAX_REDRAWS: usize = 8;
/// Residual threshold for harmonicity and related predicates.
pub const PREDICATE_TOL: f64 = 1e-6;
/// Threshold for ‖A^r‖ in the nilpotency index.
pub const NIL_TOL: f64 = 1e-8;

const MEMO_CAP: usize = 4096;

/// A matrix-valued function together with its ∂_z and ∂_z̄ derivatives.
#[derive(Clone, Debug)]
pub struct Jet {
    pub value: CMat,
    pub dz: CMat,
    pub dzbar: CMat,
}

impl Jet {
    pub fn constant(value: CMat) -> Self {
        let (r, c) = value.shape();
        Jet {
            value,
            dz: CMat::zeros(r, c),
            dzbar: CMat::zeros(r, c),
        }
    }

    fn conj(&self) -> Jet {
        Jet {
            value: pointlin::conj_mat(&self.value),
            dz: pointlin::conj_mat(&self.dzbar),
            dzbar: pointlin::conj_mat(&self.dz),
        }
    }
}

/// `count` seeded points, uniform in the sample disc.
pub fn sample_points(seed: u64, count: usize) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let r = SAMPLE_RADIUS * rng.gen::<f64>().sqrt();
            let t = 2.0 * PI * rng.gen::<f64>();
            SAMPLE_CENTER + C64::from_polar(r, t)
        })
        .collect()
}

/// Evaluates `f` at `count` seeded points, drawing replacements for points
/// where `f` fails (at most [`MAX_REDRAWS`] extra draws per point).
pub fn at_generic_points<T>(
    seed: u64,
    count: usize,
    mut f: impl FnMut(C64) -> Result<T>,
) -> Result<Vec<(C64, T)>> {
    let pool = sample_points(seed, count * (MAX_REDRAWS + 1));
    let mut out = Vec::with_capacity(count);
    let mut last = None;
    let mut it = pool.into_iter();
    for _ in 0..count {
        let mut got = false;
        for _ in 0..=MAX_REDRAWS {
            let Some(z) = it.next() else { break };
            match f(z) {
                Ok(v) => {
                    out.push((z, v));
                    got = true;
                    break;
                }
                Err(e) => last = Some(e),
            }
        }
        if !got {
            return Err(Error::GenericPoint(format!(
                "no usable sample point after {MAX_REDRAWS} redraws: {}",
                last.map(|e| e.to_string()).unwrap_or_default()
            )));
        }
    }
    Ok(out)
}

const STENCIL: [(f64, f64); 3] = [(1.0, 45.0 / 60.0), (2.0, -9.0 / 60.0), (3.0, 1.0 / 60.0)];

/// Sixth-order central differences (∂_z f, ∂_z̄ f) with the Wirtinger split.
pub fn wirtinger(f: &dyn Fn(C64) -> Result<CMat>, z: C64, h: f64) -> Result<(CMat, CMat)> {
    let mut dx: Option<CMat> = None;
    let mut dy: Option<CMat> = None;
    for (k, c) in STENCIL {
        let sx = (f(z + C64::new(k * h, 0.0))? - f(z - C64::new(k * h, 0.0))?) * C64::new(c / h, 0.0);
        let sy = (f(z + C64::new(0.0, k * h))? - f(z - C64::new(0.0, k * h))?) * C64::new(c / h, 0.0);
        dx = Some(match dx {
            Some(d) => d + sx,
            None => sx,
        });
        dy = Some(match dy {
            Some(d) => d + sy,
            None => sy,
        });
    }
    let (dx, dy) = (dx.unwrap(), dy.unwrap());
    let i = C64::new(0.0, 1.0);
    let half = C64::new(0.5, 0.0);
    Ok(((&dx - &dy * i) * half, (dx + dy * i) * half))
}

/// Per-point cache keyed on the exact bits of z.
pub struct Memo<T> {
    map: Mutex<HashMap<(u64, u64), Result<T>>>,
}

impl<T: Clone> Memo<T> {
    pub fn new() -> Self {
        Memo {
            map: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, z: C64, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let key = (z.re.to_bits(), z.im.to_bits());
        if let Some(v) = self.map.lock().unwrap().get(&key) {
            return v.clone();
        }
        let v = f();
        let mut m = self.map.lock().unwrap();
        if m.len() >= MEMO_CAP {
            m.clear();
        }
        m.insert(key, v.clone());
        v
    }
}

impl<T: Clone> Default for Memo<T> {
    fn default() -> Self {
        Self::new()
    }
}

enum Source {
    Jet(JetFn),
    Span(MatFn),
    Perp(Subbundle),
    Conj(Subbundle),
    Const(Frame),
    Unitary(CMat, Subbundle),
    Combo(Vec<(f64, Subbundle)>),
    Kernel(JetFn),
}

struct Inner {
    n: usize,
    rank: usize,
    tol: f64,
    floor: bool,
    source: Source,
    generators: Option<Vec<MeroVec>>,
    frames: Memo<Frame>,
    jets: Memo<Jet>,
}

/// A subbundle of the trivial bundle ℂⁿ, zeros filled out.
#[derive(Clone)]
pub struct Subbundle {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Subbundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Subbundle")
            .field("n", &self.inner.n)
            .field("rank", &self.inner.rank)
            .finish()
    }
}

impl Subbundle {
    fn build(n: usize, rank: usize, tol: f64, source: Source, generators: Option<Vec<MeroVec>>) -> Self {
        Subbundle {
            inner: Arc::new(Inner {
                n,
                rank,
                tol,
                floor: matches!(source, Source::Span(_)),
                source,
                generators,
                frames: Memo::new(),
                jets: Memo::new(),
            }),
        }
    }

    fn sampled_rank(n: usize, tol: f64, floor: bool, span: &dyn Fn(C64) -> Result<CMat>) -> Result<usize> {
        let ranks = at_generic_points(SAMPLE_SEED, 3, |z| {
            let m = span(z)?;
            if m.nrows() != n {
                return Err(Error::domain("spanning matrix has the wrong ambient dimension"));
            }
            if m.ncols() == 0 {
                return Ok(0);
            }
            let (_, s) = pointlin::sorted_svd(&m);
            let scale = reference_scale(&s, floor);
            Ok(s.iter().filter(|&&x| x > tol * scale).count())
        })?;
        Ok(ranks.into_iter().map(|(_, r)| r).max().unwrap_or(0))
    }

    /// The subbundle spanned by meromorphic generators.
    pub fn from_generators(n: usize, generators: Vec<MeroVec>) -> Result<Self> {
        if generators.iter().any(|g| g.n() != n) {
            return Err(Error::domain("generator does not live in the ambient dimension"));
        }
        if generators.is_empty() {
            return Ok(Self::zero(n));
        }
        let derivs = generators
            .iter()
            .map(|g| differentiate(g, 1))
            .collect::<Result<Vec<_>>>()?;
        let gens = generators.clone();
        let jet: JetFn = Arc::new(move |z| {
            let value = columns(n, &gens, z)?;
            let dz = columns(n, &derivs, z)?;
            let dzbar = CMat::zeros(n, gens.len());
            Ok(Jet { value, dz, dzbar })
        });
        let mut s = Self::from_jet(n, jet, RANK_TOL)?;
        Arc::get_mut(&mut s.inner).unwrap().generators = Some(generators);
        Ok(s)
    }

    /// The subbundle spanned by the columns of a matrix with known derivatives.
    pub fn from_jet(n: usize, jet: JetFn, tol: f64) -> Result<Self> {
        let j = jet.clone();
        let rank = Self::sampled_rank(n, tol, false, &move |z| Ok(j(z)?.value))?;
        Ok(Self::build(n, rank, tol, Source::Jet(jet), None))
    }

    /// As [`Subbundle::from_jet`] for spanning matrices whose nonzero
    /// singular values are O(1), so that roundoff never counts as rank.
    pub fn from_jet_floored(n: usize, jet: JetFn, tol: f64) -> Result<Self> {
        let j = jet.clone();
        let rank = Self::sampled_rank(n, tol, true, &move |z| Ok(j(z)?.value))?;
        let mut s = Self::build(n, rank, tol, Source::Jet(jet), None);
        Arc::get_mut(&mut s.inner).unwrap().floor = true;
        Ok(s)
    }

    /// The subbundle spanned by the columns of `span`; derivatives by
    /// finite differences.
    pub fn from_span(n: usize, span: MatFn, tol: f64) -> Result<Self> {
        let rank = Self::sampled_rank(n, tol, true, span.as_ref())?;
        Ok(Self::build(n, rank, tol, Source::Span(span), None))
    }

    /// As [`Subbundle::from_span`] with the generic rank supplied.
    pub fn from_span_with_rank(n: usize, rank: usize, span: MatFn, tol: f64) -> Self {
        Self::build(n, rank, tol, Source::Span(span), None)
    }

    pub fn constant(frame: Frame) -> Self {
        Self::build(frame.n(), frame.rank(), RANK_TOL, Source::Const(frame), None)
    }

    pub fn zero(n: usize) -> Self {
        Self::constant(Frame::empty(n))
    }

    pub fn full(n: usize) -> Self {
        Self::constant(Frame::coordinate(n, &(0..n).collect::<Vec<_>>()))
    }

    pub fn n(&self) -> usize {
        self.inner.n
    }

    pub fn rank(&self) -> usize {
        self.inner.rank
    }

    pub fn tol(&self) -> f64 {
        self.inner.tol
    }

    pub fn generators(&self) -> Option<&[MeroVec]> {
        self.inner.generators.as_deref()
    }

    /// True when projector derivatives are computed without finite differences.
    pub fn has_exact_derivatives(&self) -> bool {
        match &self.inner.source {
            Source::Jet(_) | Source::Const(_) | Source::Kernel(_) => true,
            Source::Span(_) => false,
            Source::Perp(p) | Source::Conj(p) | Source::Unitary(_, p) => p.has_exact_derivatives(),
            Source::Combo(parts) => parts.iter().all(|(_, p)| p.has_exact_derivatives()),
        }
    }

    /// A spanning matrix with exact derivatives, when one is available.
    fn spanning_jet(&self, z: C64) -> Option<Result<Jet>> {
        match &self.inner.source {
            Source::Jet(f) => Some(f(z)),
            Source::Const(fr) => Some(Ok(Jet::constant(fr.matrix().clone()))),
            Source::Conj(p) => p.spanning_jet(z).map(|j| j.map(|j| j.conj())),
            Source::Unitary(u, p) => p.spanning_jet(z).map(|j| {
                j.map(|j| Jet {
                    value: u * j.value,
                    dz: u * j.dz,
                    dzbar: u * j.dzbar,
                })
            }),
            _ => None,
        }
    }

    /// Orthonormal frame of the fibre at z.
    pub fn frame(&self, z: C64) -> Result<Frame> {
        self.inner.frames.get(z, || self.compute_frame(z))
    }

    fn compute_frame(&self, z: C64) -> Result<Frame> {
        let m = match &self.inner.source {
            Source::Const(f) => return Ok(f.clone()),
            Source::Perp(p) => return Ok(pointlin::perp(&p.frame(z)?)),
            Source::Conj(p) => return Ok(pointlin::conj_frame(&p.frame(z)?)),
            Source::Unitary(u, p) => return Ok(Frame::unchecked(u * p.frame(z)?.matrix())),
            Source::Combo(_) => self.combo_matrix(z)?,
            Source::Jet(f) => f(z)?.value,
            Source::Span(f) => f(z)?,
            Source::Kernel(f) => return Ok(Frame::unchecked(self.kernel_parts(&f(z)?.value, z)?.0)),
        };
        self.frame_of_span(&m, z)
    }

    fn frame_of_span(&self, m: &CMat, z: C64) -> Result<Frame> {
        let k = self.inner.rank;
        if k == 0 {
            return Ok(Frame::empty(self.inner.n));
        }
        if m.ncols() < k {
            return Err(Error::GenericPoint(format!("fewer than {k} spanning columns at {z}")));
        }
        let (u, s) = pointlin::sorted_svd(m);
        let floor = self.inner.floor;
        let gap = s.get(k - 1).copied().unwrap_or(0.0) / reference_scale(&s, floor);
        if gap <= self.inner.tol {
            return Err(Error::GenericPoint(format!(
                "rank drops below {k} at {z} (σ_k/σ_max = {gap:.2e})"
            )));
        }
        Ok(Frame::unchecked(u.columns(0, k).into_owned()))
    }

    fn combo_matrix(&self, z: C64) -> Result<CMat> {
        let Source::Combo(parts) = &self.inner.source else {
            unreachable!()
        };
        let mut m = CMat::zeros(self.inner.n, self.inner.n);
        for (c, p) in parts {
            m += p.projector(z)? * C64::new(*c, 0.0);
        }
        Ok(m)
    }

    /// π at z.
    pub fn projector(&self, z: C64) -> Result<CMat> {
        Ok(self.frame(z)?.projector_matrix())
    }

    /// (π, ∂_z π, ∂_z̄ π) at z.
    pub fn projector_jet(&self, z: C64) -> Result<Jet> {
        self.inner.jets.get(z, || self.compute_jet(z))
    }

    fn compute_jet(&self, z: C64) -> Result<Jet> {
        let n = self.inner.n;
        match &self.inner.source {
            Source::Const(f) => Ok(Jet::constant(f.projector_matrix())),
            Source::Perp(p) => {
                let j = p.projector_jet(z)?;
                Ok(Jet {
                    value: CMat::identity(n, n) - j.value,
                    dz: -j.dz,
                    dzbar: -j.dzbar,
                })
            }
            Source::Conj(p) => Ok(p.projector_jet(z)?.conj()),
            Source::Unitary(u, p) => {
                let j = p.projector_jet(z)?;
                let ua = u.adjoint();
                Ok(Jet {
                    value: u * j.value * &ua,
                    dz: u * j.dz * &ua,
                    dzbar: u * j.dzbar * &ua,
                })
            }
            Source::Combo(parts) => {
                let mut acc = Jet::constant(CMat::zeros(n, n));
                for (c, p) in parts {
                    let j = p.projector_jet(z)?;
                    let c = C64::new(*c, 0.0);
                    acc.dz += j.dz * c;
                    acc.dzbar += j.dzbar * c;
                }
                acc.value = self.projector(z)?;
                Ok(acc)
            }
            Source::Jet(f) => {
                let g = f(z)?;
                self.exact_projector_jet(&g, z)
            }
            Source::Kernel(f) => {
                let m = f(z)?;
                let (b, pinv) = self.kernel_parts(&m.value, z)?;
                let p = &b * b.adjoint();
                let dz = -(&pinv * &m.dz * &p) - (&pinv * &m.dzbar * &p).adjoint();
                let dzbar = dz.adjoint();
                Ok(Jet { value: p, dz, dzbar })
            }
            Source::Span(_) => {
                let p = self.projector(z)?;
                let me = self.clone();
                let (dz, dzbar) = wirtinger(&move |w| me.projector(w), z, FD_STEP)?;
                Ok(Jet { value: p, dz, dzbar })
            }
        }
    }

    /// Orthonormal basis of ker M and the pseudo-inverse M⁺, cutting
    /// singular values at tol·max(σ_max, 1).
    fn kernel_parts(&self, m: &CMat, z: C64) -> Result<(CMat, CMat)> {
        let n = self.inner.n;
        let (u, s, v) = jacobi_svd(m);
        let cut = self.inner.tol * s.first().copied().unwrap_or(0.0).max(1.0);
        let sig = |i: usize| s.get(i).copied().unwrap_or(0.0);
        let ker: Vec<usize> = (0..n).filter(|&i| sig(i) <= cut).collect();
        if ker.len() != self.inner.rank {
            return Err(Error::GenericPoint(format!(
                "kernel has dimension {} instead of {} at {z}",
                ker.len(),
                self.inner.rank
            )));
        }
        let mut pinv = CMat::zeros(n, m.nrows());
        for i in (0..n).filter(|&i| sig(i) > cut) {
            pinv += v.column(i) * u.column(i).adjoint() * C64::new(1.0 / sig(i), 0.0);
        }
        let basis = if ker.is_empty() {
            CMat::zeros(n, 0)
        } else {
            CMat::from_columns(&ker.iter().map(|&i| v.column(i).into_owned()).collect::<Vec<_>>())
        };
        Ok((basis, pinv))
    }

    /// ∂π = (I − π)·∂G·G⁺ + (G⁺)*·(∂̄G)*·(I − π) for a constant-rank spanning matrix G.
    fn exact_projector_jet(&self, g: &Jet, z: C64) -> Result<Jet> {
        let n = self.inner.n;
        let k = self.inner.rank;
        if k == 0 {
            return Ok(Jet::constant(CMat::zeros(n, n)));
        }
        let fr = self.frame(z)?;
        let (u, s, v) = jacobi_svd(&g.value);
        let mut pinv = CMat::zeros(g.value.ncols(), n);
        for i in 0..k {
            pinv += v.column(i) * u.column(i).adjoint() * C64::new(1.0 / s[i], 0.0);
        }
        let p = fr.projector_matrix();
        let q = CMat::identity(n, n) - &p;
        let dz = &q * &g.dz * &pinv + pinv.adjoint() * g.dzbar.adjoint() * &q;
        let dzbar = dz.adjoint();
        Ok(Jet { value: p, dz, dzbar })
    }

    /// Fibrewise orthogonal complement.
    pub fn perp(&self) -> Subbundle {
        Self::build(
            self.inner.n,
            self.inner.n - self.inner.rank,
            self.inner.tol,
            Source::Perp(self.clone()),
            None,
        )
    }

    /// Entrywise complex conjugate subbundle.
    pub fn conj(&self) -> Subbundle {
        Self::build(
            self.inner.n,
            self.inner.rank,
            self.inner.tol,
            Source::Conj(self.clone()),
            None,
        )
    }

    /// Fibrewise sum.
    pub fn sum(&self, other: &Subbundle) -> Result<Subbundle> {
        same_n(self, other)?;
        if other.rank() == 0 {
            return Ok(self.clone());
        }
        if self.rank() == 0 {
            return Ok(other.clone());
        }
        let tol = self.tol().max(other.tol());
        let probe = sample_points(SAMPLE_SEED, 1)[0];
        if self.spanning_jet(probe).is_some() && other.spanning_jet(probe).is_some() {
            let (a, b) = (self.clone(), other.clone());
            let jet: JetFn = Arc::new(move |z| {
                let ja = a.spanning_jet(z).unwrap()?;
                let jb = b.spanning_jet(z).unwrap()?;
                Ok(Jet {
                    value: hcat(&ja.value, &jb.value),
                    dz: hcat(&ja.dz, &jb.dz),
                    dzbar: hcat(&ja.dzbar, &jb.dzbar),
                })
            });
            return if self.inner.floor || other.inner.floor {
                Self::from_jet_floored(self.n(), jet, tol)
            } else {
                Self::from_jet(self.n(), jet, tol)
            };
        }
        let (a, b) = (self.clone(), other.clone());
        if self.has_exact_derivatives() && other.has_exact_derivatives() {
            // A + B = (ker [π_A; π_B])^⊥.
            let n = self.n();
            let jet: JetFn = Arc::new(move |z| {
                let (ja, jb) = (a.projector_jet(z)?, b.projector_jet(z)?);
                Ok(Jet {
                    value: vstack(n, &ja.value, &jb.value),
                    dz: vstack(n, &ja.dz, &jb.dz),
                    dzbar: vstack(n, &ja.dzbar, &jb.dzbar),
                })
            });
            return Ok(Self::kernel_of_jet(n, jet, tol.max(RANK_TOL))?.perp());
        }
        let span: MatFn = Arc::new(move |z| Ok(hcat(a.frame(z)?.matrix(), b.frame(z)?.matrix())));
        Self::from_span(self.n(), span, tol.max(RANK_TOL))
    }

    /// Sum of several subbundles.
    pub fn sum_all(n: usize, parts: &[Subbundle]) -> Result<Subbundle> {
        let mut acc = Subbundle::zero(n);
        for p in parts {
            acc = acc.sum(p)?;
        }
        Ok(acc)
    }

    /// Fibrewise intersection.
    pub fn intersect(&self, other: &Subbundle) -> Result<Subbundle> {
        same_n(self, other)?;
        if self.rank() == 0 || other.rank() == 0 {
            return Ok(Subbundle::zero(self.n()));
        }
        let (a, b) = (self.clone(), other.clone());
        let tol = self.tol().max(other.tol());
        if self.has_exact_derivatives() && other.has_exact_derivatives() {
            let n = self.n();
            let jet: JetFn = Arc::new(move |z| {
                let (ja, jb) = (a.projector_jet(z)?, b.projector_jet(z)?);
                let id = CMat::identity(n, n);
                Ok(Jet {
                    value: vstack(n, &(&id - ja.value), &(&id - jb.value)),
                    dz: -vstack(n, &ja.dz, &jb.dz),
                    dzbar: -vstack(n, &ja.dzbar, &jb.dzbar),
                })
            });
            // σ of the stacked matrix is sin θ, the square root of the
            // eigenvalue cut used pointwise.
            return Self::kernel_of_jet(n, jet, tol.max(pointlin::INTERSECT_TOL.sqrt()));
        }
        let span: MatFn = Arc::new(move |z| Ok(pointlin::intersect(&a.frame(z)?, &b.frame(z)?).into_matrix()));
        Self::from_span(self.n(), span, tol)
    }

    /// self ⊖ other = other^⊥ ∩ self, assuming other ⊆ self; the projector
    /// is π_self − π_other, with exact derivatives when both have them.
    pub fn ominus(&self, other: &Subbundle) -> Result<Subbundle> {
        same_n(self, other)?;
        if other.rank() > self.rank() {
            return Err(Error::contract("subtracted bundle has larger rank", (other.rank() - self.rank()) as f64));
        }
        if other.rank() == 0 {
            return Ok(self.clone());
        }
        Ok(Self::projector_combination(
            self.n(),
            self.rank() - other.rank(),
            vec![(1.0, self.clone()), (-1.0, other.clone())],
        ))
    }

    /// Direct sum of mutually orthogonal subbundles, with projector the sum
    /// of their projectors.
    pub fn orthogonal_sum(n: usize, parts: &[Subbundle]) -> Result<Subbundle> {
        if parts.iter().any(|p| p.n() != n) {
            return Err(Error::domain("summand lives in a different ambient dimension"));
        }
        let parts: Vec<_> = parts.iter().filter(|p| p.rank() > 0).cloned().collect();
        match parts.len() {
            0 => Ok(Subbundle::zero(n)),
            1 => Ok(parts[0].clone()),
            _ => Ok(Self::projector_combination(
                n,
                parts.iter().map(|p| p.rank()).sum(),
                parts.into_iter().map(|p| (1.0, p)).collect(),
            )),
        }
    }

    /// The subbundle whose projector is Σ cᵢπᵢ, which the caller asserts is
    /// an orthogonal projector of the given rank.
    pub fn projector_combination(n: usize, rank: usize, parts: Vec<(f64, Subbundle)>) -> Subbundle {
        let tol = parts.iter().map(|(_, p)| p.tol()).fold(RANK_TOL, f64::max);
        let mut s = Self::build(n, rank, tol, Source::Combo(parts), None);
        Arc::get_mut(&mut s.inner).unwrap().floor = true;
        s
    }

    /// U·V for a constant unitary U.
    pub fn map_unitary(&self, u: &CMat) -> Result<Subbundle> {
        if u.nrows() != self.n() || u.ncols() != self.n() {
            return Err(Error::domain("unitary has the wrong size"));
        }
        Ok(Self::build(
            self.n(),
            self.rank(),
            self.tol(),
            Source::Unitary(u.clone(), self.clone()),
            None,
        ))
    }

    /// Image of the subbundle under a pointwise endomorphism.
    pub fn image(&self, op: MatFn, tol: f64) -> Result<Subbundle> {
        if self.rank() == 0 {
            return Ok(self.clone());
        }
        let a = self.clone();
        let span: MatFn = Arc::new(move |z| Ok(op(z)? * a.frame(z)?.matrix()));
        Self::from_span(self.n(), span, tol)
    }

    /// Image of a pointwise endomorphism on all of ℂⁿ.
    pub fn image_of(n: usize, op: MatFn, tol: f64) -> Result<Subbundle> {
        Self::from_span(n, op, tol)
    }

    /// Kernel of a pointwise endomorphism: right singular vectors with
    /// σ ≤ tol·max(σ_max, 1).
    pub fn kernel_of(n: usize, op: MatFn, tol: f64) -> Result<Subbundle> {
        let span: MatFn = Arc::new(move |z| {
            let m = op(z)?;
            let (_, s, v) = jacobi_svd(&m);
            let cut = tol * s.first().copied().unwrap_or(0.0).max(1.0);
            let cols: Vec<_> = (0..v.ncols())
                .filter(|&i| s.get(i).copied().unwrap_or(0.0) <= cut)
                .map(|i| v.column(i).into_owned())
                .collect();
            Ok(if cols.is_empty() { CMat::zeros(n, 0) } else { CMat::from_columns(&cols) })
        });
        Self::from_span(n, span, tol)
    }

    /// Kernel of a matrix function M with known derivatives; the projector
    /// jet is ∂π = −M⁺(∂M)π − (M⁺(∂_z̄M)π)*.
    pub fn kernel_of_jet(n: usize, op: JetFn, tol: f64) -> Result<Self> {
        let f = op.clone();
        let dims = at_generic_points(SAMPLE_SEED, 3, |z| {
            let m = f(z)?.value;
            if m.ncols() != n {
                return Err(Error::domain("operator has the wrong number of columns"));
            }
            let (_, s, _) = jacobi_svd(&m);
            let cut = tol * s.first().copied().unwrap_or(0.0).max(1.0);
            Ok((0..n).filter(|&i| s.get(i).copied().unwrap_or(0.0) <= cut).count())
        })?;
        let rank = dims.into_iter().map(|(_, d)| d).min().unwrap_or(0);
        Ok(Self::build(n, rank, tol, Source::Kernel(op), None))
    }

    /// Same fibres, a different rank tolerance.
    pub fn with_tol(&self, tol: f64) -> Subbundle {
        let s = self.clone();
        Self::from_span_with_rank(self.n(), self.rank(), Arc::new(move |z| Ok(s.frame(z)?.into_matrix())), tol)
    }

    /// Cartan embedding ι = π − π^⊥ as a unitary map.
    pub fn cartan(&self) -> UnitaryMap {
        UnitaryMap::cartan(self.clone())
    }
}

/// σ_max, or max(σ_max, 1) for derived spans whose entries are O(1) when nonzero.
fn reference_scale(s: &[f64], floor: bool) -> f64 {
    let smax = s.first().copied().unwrap_or(0.0);
    if floor {
        smax.max(1.0)
    } else {
        smax.max(f64::MIN_POSITIVE)
    }
}

fn same_n(a: &Subbundle, b: &Subbundle) -> Result<()> {
    if a.n() == b.n() {
        Ok(())
    } else {
        Err(Error::domain(format!("ambient dimensions differ: {} vs {}", a.n(), b.n())))
    }
}

fn columns(n: usize, gens: &[MeroVec], z: C64) -> Result<CMat> {
    let mut m = CMat::zeros(n, gens.len());
    for (j, g) in gens.iter().enumerate() {
        for (i, c) in g.eval(z)?.into_iter().enumerate() {
            m[(i, j)] = c;
        }
    }
    Ok(m)
}

fn vstack(n: usize, a: &CMat, b: &CMat) -> CMat {
    let mut m = CMat::zeros(a.nrows() + b.nrows(), n);
    m.rows_mut(0, a.nrows()).copy_from(a);
    m.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    m
}

pub fn hcat(a: &CMat, b: &CMat) -> CMat {
    let mut m = CMat::zeros(a.nrows(), a.ncols() + b.ncols());
    m.columns_mut(0, a.ncols()).copy_from(a);
    m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    m
}

/// ‖π_A − π_B‖₂ at z.
pub fn projector_distance_at(a: &Subbundle, b: &Subbundle, z: C64) -> Result<f64> {
    Ok(op_norm(&(a.projector(z)? - b.projector(z)?)))
}

/// Largest projector distance over seeded generic points.
pub fn subbundle_distance(a: &Subbundle, b: &Subbundle, count: usize) -> Result<f64> {
    if a.n() != b.n() {
        return Ok(f64::INFINITY);
    }
    let d = at_generic_points(SAMPLE_SEED ^ 0x5151, count, |z| projector_distance_at(a, b, z))?;
    Ok(d.into_iter().map(|(_, x)| x).fold(0.0, f64::max))
}

/// A map into U(n), with an optional exact ∂_z.
#[derive(Clone)]
pub struct UnitaryMap {
    pub n: usize,
    value: MatFn,
    dz: Option<MatFn>,
    grass: Option<Subbundle>,
}

impl UnitaryMap {
    pub fn new(n: usize, value: MatFn) -> Self {
        UnitaryMap {
            n,
            value,
            dz: None,
            grass: None,
        }
    }

    pub fn with_dz(n: usize, value: MatFn, dz: MatFn) -> Self {
        UnitaryMap {
            n,
            value,
            dz: Some(dz),
            grass: None,
        }
    }

    /// ι(V) = π_V − π_V^⊥.
    pub fn cartan(v: Subbundle) -> Self {
        let n = v.n();
        let a = v.clone();
        let value: MatFn = Arc::new(move |z| Ok(a.projector(z)? * C64::new(2.0, 0.0) - CMat::identity(n, n)));
        let b = v.clone();
        let dz: MatFn = Arc::new(move |z| Ok(b.projector_jet(z)?.dz * C64::new(2.0, 0.0)));
        UnitaryMap {
            n,
            value,
            dz: Some(dz),
            grass: Some(v),
        }
    }

    pub fn grassmannian(&self) -> Option<&Subbundle> {
        self.grass.as_ref()
    }

    pub fn eval(&self, z: C64) -> Result<CMat> {
        (self.value)(z)
    }

    pub fn dz(&self, z: C64) -> Result<CMat> {
        match &self.dz {
            Some(d) => d(z),
            None => Ok(wirtinger(self.value.as_ref(), z, FD_STEP)?.0),
        }
    }

    /// ‖φ*φ − I‖ at z.
    pub fn unitarity_residual(&self, z: C64) -> Result<f64> {
        let u = self.eval(z)?;
        Ok(max_abs(&(u.adjoint() * &u - CMat::identity(self.n, self.n))))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    FromUnitaryMap,
    FromGrassmannian,
    SecondFundamentalForm,
}

/// A pointwise endomorphism of the trivial bundle.
#[derive(Clone)]
pub struct BundleEndomorphism {
    pub n: usize,
    eval: MatFn,
    pub provenance: Provenance,
}

impl BundleEndomorphism {
    pub fn new(n: usize, eval: MatFn, provenance: Provenance) -> Self {
        BundleEndomorphism { n, eval, provenance }
    }

    pub fn eval(&self, z: C64) -> Result<CMat> {
        (self.eval)(z)
    }

    pub fn as_fn(&self) -> MatFn {
        self.eval.clone()
    }

    /// −A*, which is A_z̄ when self is A_z.
    pub fn minus_adjoint(&self) -> BundleEndomorphism {
        let f = self.eval.clone();
        BundleEndomorphism {
            n: self.n,
            eval: Arc::new(move |z| Ok(-f(z)?.adjoint())),
            provenance: self.provenance,
        }
    }

    /// The k-th power.
    pub fn pow(&self, k: usize) -> BundleEndomorphism {
        let f = self.eval.clone();
        let n = self.n;
        BundleEndomorphism {
            n,
            eval: Arc::new(move |z| {
                let a = f(z)?;
                let mut m = CMat::identity(n, n);
                for _ in 0..k {
                    m = &a * m;
                }
                Ok(m)
            }),
            provenance: self.provenance,
        }
    }
}

/// A_z = ½φ⁻¹φ_z.
pub fn compute_az(phi: &UnitaryMap) -> BundleEndomorphism {
    let p = phi.clone();
    let provenance = if phi.grass.is_some() {
        Provenance::FromGrassmannian
    } else {
        Provenance::FromUnitaryMap
    };
    BundleEndomorphism {
        n: phi.n,
        eval: Arc::new(move |z| Ok(p.eval(z)?.adjoint() * p.dz(z)? * C64::new(0.5, 0.0))),
        provenance,
    }
}

/// D_z̄ A_z = ∂_z̄A_z + [A_z̄, A_z], whose vanishing is harmonicity.
pub fn harmonic_defect(az: &BundleEndomorphism, z: C64) -> Result<CMat> {
    let a = az.eval(z)?;
    let abar = -a.adjoint();
    let f = az.as_fn();
    let (_, dzbar) = wirtinger(f.as_ref(), z, FD_STEP)?;
    Ok(dzbar + &abar * &a - &a * &abar)
}

/// ‖D_z̄A_z‖ / max(1, ‖A_z‖²) at z.
pub fn harmonic_residual(az: &BundleEndomorphism, z: C64) -> Result<f64> {
    let a = az.eval(z)?;
    let scale = op_norm(&a).powi(2).max(1.0);
    Ok(op_norm(&harmonic_defect(az, z)?) / scale)
}

/// Least r ≥ 1 with ‖A^r‖ < NIL_TOL·max(1, ‖A‖)^r, searched up to `max`.
pub fn nil_index(a: &CMat, max: usize) -> Option<usize> {
    let n = a.nrows();
    let s = op_norm(a).max(1.0);
    let mut m = CMat::identity(n, n);
    for r in 1..=max {
        m = a * m;
        if op_norm(&m) < NIL_TOL * s.powi(r as i32) {
            return Some(r);
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormKind {
    /// ∂′, built from ∂_z.
    Prime,
    /// ∂″, built from ∂_z̄.
    DoublePrime,
}

/// v ↦ π_ψ(∂v) on φ, as the endomorphism π_ψ·∂π_φ·π_φ of ℂⁿ.
pub fn second_fundamental_form(phi: &Subbundle, psi: &Subbundle, kind: FormKind) -> Result<BundleEndomorphism> {
    same_n(phi, psi)?;
    let overlap = at_generic_points(SAMPLE_SEED ^ 0x2f, 3, |z| {
        Ok(max_abs(&(psi.projector(z)? * phi.projector(z)?)))
    })?
    .into_iter()
    .map(|(_, x)| x)
    .fold(0.0, f64::max);
    if overlap > 1e-8 {
        return Err(Error::contract("second fundamental form needs orthogonal bundles", overlap));
    }
    let (a, b) = (phi.clone(), psi.clone());
    Ok(BundleEndomorphism {
        n: phi.n(),
        eval: Arc::new(move |z| {
            let j = a.projector_jet(z)?;
            let d = match kind {
                FormKind::Prime => &j.dz,
                FormKind::DoublePrime => &j.dzbar,
            };
            Ok(b.projector(z)? * d * &j.value)
        }),
        provenance: Provenance::SecondFundamentalForm,
    })
}

/// A′_φ = π_φ^⊥ ∂_z π_φ (or A″_φ with ∂_z̄) as an endomorphism of ℂⁿ.
pub fn fundamental_form_perp(phi: &Subbundle, kind: FormKind) -> MatFn {
    let a = phi.clone();
    let n = phi.n();
    Arc::new(move |z| {
        let j = a.projector_jet(z)?;
        let d = match kind {
            FormKind::Prime => &j.dz,
            FormKind::DoublePrime => &j.dzbar,
        };
        Ok((CMat::identity(n, n) - &j.value) * d * &j.value)
    })
}

/// G′ (or G″) iterated `i` times.
pub fn gauss_transform(phi: &Subbundle, kind: FormKind, i: usize) -> Result<Subbundle> {
    let mut cur = phi.clone();
    for _ in 0..i {
        if cur.rank() == 0 {
            break;
        }
        let f = fundamental_form_perp(&cur, kind);
        cur = Subbundle::from_span(cur.n(), f, FD_RANK_TOL)?;
    }
    Ok(cur)
}

/// Ranks of G^{(i)}(φ) at z for i in −k..=k, with None where a step fails.
pub fn harmonic_sequence_ranks(phi: &Subbundle, k: usize, z: C64) -> Vec<(i32, Option<usize>)> {
    let mut out = Vec::new();
    for (kind, sign) in [(FormKind::DoublePrime, -1i32), (FormKind::Prime, 1)] {
        for i in 1..=k {
            let r = gauss_transform(phi, kind, i)
                .and_then(|g| g.frame(z))
                .ok()
                .map(|f| f.rank());
            out.push((sign * i as i32, r));
        }
    }
    out.push((0, phi.frame(z).ok().map(|f| f.rank())));
    out.sort_by_key(|(i, _)| *i);
    out
}

/// Structural predicates of a unitary or Grassmannian map over a sample grid.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct PredicateReport {
    pub harmonic_residual: f64,
    pub is_harmonic: bool,
    pub nil_index: Option<usize>,
    pub trace_a2: f64,
    pub strongly_conformal_residual: Option<f64>,
    pub is_strongly_conformal: Option<bool>,
    pub holomorphic_residual: Option<f64>,
    pub is_holomorphic: Option<bool>,
    pub antiholomorphic_residual: Option<f64>,
    pub is_antiholomorphic: Option<bool>,
}

/// Evaluates the predicates on `points` seeded sample points (25 by default
/// in callers: a 5×5 grid's worth).
pub fn predicates(phi: &UnitaryMap, points: usize, seed: u64) -> Result<PredicateReport> {
    let az = compute_az(phi);
    let n = phi.n;
    let rows = at_generic_points(seed, points, |z| {
        let a = az.eval(z)?;
        let h = harmonic_residual(&az, z)?;
        let nil = nil_index(&a, n + 1);
        let tr = (&a * &a).trace().norm() / op_norm(&a).powi(2).max(1.0);
        let grass = match &phi.grass {
            Some(g) => {
                let j = g.projector_jet(z)?;
                let q = CMat::identity(n, n) - &j.value;
                let sc = op_norm(&(&a * &a * &j.value)) / op_norm(&a).powi(2).max(1.0);
                let hol = op_norm(&(&q * &j.dzbar * &j.value));
                let anti = op_norm(&(&q * &j.dz * &j.value));
                Some((sc, hol, anti))
            }
            None => None,
        };
        Ok((h, nil, tr, grass))
    })?;
    let mut h = 0.0f64;
    let mut tr = 0.0f64;
    let mut nil = Some(0usize);
    let mut gr: Option<(f64, f64, f64)> = phi.grass.as_ref().map(|_| (0.0, 0.0, 0.0));
    for (_, (hi, ni, ti, g)) in rows {
        h = h.max(hi);
        tr = tr.max(ti);
        nil = match (nil, ni) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        if let (Some(acc), Some(g)) = (gr.as_mut(), g) {
            acc.0 = acc.0.max(g.0);
            acc.1 = acc.1.max(g.1);
            acc.2 = acc.2.max(g.2);
        }
    }
    Ok(PredicateReport {
        harmonic_residual: h,
        is_harmonic: h < PREDICATE_TOL,
        nil_index: nil,
        trace_a2: tr,
        strongly_conformal_residual: gr.map(|g| g.0),
        is_strongly_conformal: gr.map(|g| g.0 < PREDICATE_TOL),
        holomorphic_residual: gr.map(|g| g.1),
        is_holomorphic: gr.map(|g| g.1 < PREDICATE_TOL),
        antiholomorphic_residual: gr.map(|g| g.2),
        is_antiholomorphic: gr.map(|g| g.2 < PREDICATE_TOL),
    })
}

/// A named map given by transcendental closed forms.
#[derive(Clone)]
pub struct AnalyticMap {
    pub name: String,
    pub subbundle: Subbundle,
}

impl AnalyticMap {
    /// The minimal torus [e^{z−z̄}, e^{ζz−conj(ζz)}, e^{ζ²z−conj(ζ²z)}] in ℂP², ζ = e^{2πi/3}.
    pub fn superconformal_torus() -> Self {
        let zeta: Vec<C64> = (0..3).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / 3.0)).collect();
        let s = C64::new(1.0 / 3f64.sqrt(), 0.0);
        let jet: JetFn = Arc::new(move |z| {
            let mut value = CMat::zeros(3, 1);
            let mut dz = CMat::zeros(3, 1);
            let mut dzbar = CMat::zeros(3, 1);
            for k in 0..3 {
                let w = zeta[k] * z;
                let v = (w - w.conj()).exp() * s;
                value[(k, 0)] = v;
                dz[(k, 0)] = zeta[k] * v;
                dzbar[(k, 0)] = -zeta[k].conj() * v;
            }
            Ok(Jet { value, dz, dzbar })
        });
        AnalyticMap {
            name: "superconformal-torus-cp2".into(),
            subbundle: Subbundle::from_jet(3, jet, RANK_TOL).expect("torus span is nowhere zero"),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "superconformal-torus-cp2" => Some(Self::superconformal_torus()),
            _ => None,
        }
    }

    pub fn unitary(&self) -> UnitaryMap {
        self.subbundle.cartan()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meromorphic::RatFun;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn poly_vec(polys: &[&[f64]]) -> MeroVec {
        MeroVec::from_real_polys(polys)
    }

    fn line(polys: &[&[f64]]) -> Subbundle {
        let v = poly_vec(polys);
        Subbundle::from_generators(v.n(), vec![v]).unwrap()
    }

    #[test]
    fn sample_points_lie_in_disc_and_repeat() {
        let a = sample_points(3, 50);
        assert_eq!(a, sample_points(3, 50));
        assert!(a.iter().all(|z| (z - SAMPLE_CENTER).norm() < SAMPLE_RADIUS));
    }

    #[test]
    fn wirtinger_matches_closed_form() {
        let f = |z: C64| Ok(CMat::from_element(1, 1, z * z * z.conj()));
        let z = c(0.4, -0.7);
        let (dz, dzbar) = wirtinger(&f, z, FD_STEP).unwrap();
        assert!((dz[(0, 0)] - 2.0 * z * z.conj()).norm() < 1e-10);
        assert!((dzbar[(0, 0)] - z * z).norm() < 1e-10);
    }

    #[test]
    fn exact_projector_jet_agrees_with_finite_differences() {
        let b = Subbundle::from_generators(
            4,
            vec![poly_vec(&[&[1.0], &[0.0, 1.0], &[0.0, 0.0, 1.0], &[]]), poly_vec(&[&[], &[1.0], &[0.0, 2.0], &[1.0, 0.0, 0.0, 1.0]])],
        )
        .unwrap();
        assert_eq!(b.rank(), 2);
        let s = b.clone();
        for z in sample_points(11, 5) {
            let exact = b.projector_jet(z).unwrap();
            let (dz, dzbar) = wirtinger(&|w| s.projector(w), z, FD_STEP).unwrap();
            assert!(max_abs(&(exact.dz - dz)) < 1e-9);
            assert!(max_abs(&(exact.dzbar - dzbar)) < 1e-9);
        }
    }

    #[test]
    fn constant_map_has_zero_az() {
        let b = Subbundle::constant(Frame::coordinate(3, &[1]));
        let a = compute_az(&b.cartan()).eval(c(0.3, 0.1)).unwrap();
        assert!(max_abs(&a) < 1e-15);
    }

    #[test]
    fn az_of_line_through_one_z_at_origin() {
        let phi = line(&[&[1.0], &[0.0, 1.0]]);
        let a = compute_az(&phi.cartan()).eval(C64::new(0.0, 0.0)).unwrap();
        // P = vv*/|v|², v = (1, z): at 0, ∂_zP = e₂e₁ᵀ and A = (2P − I)∂_zP = −e₂e₁ᵀ.
        let mut expect = CMat::zeros(2, 2);
        expect[(1, 0)] = c(-1.0, 0.0);
        assert!(max_abs(&(&a - expect)) < 1e-12);
        assert!(max_abs(&(&a * &a)) < 1e-12);
    }

    #[test]
    fn second_fundamental_form_of_line() {
        let phi = line(&[&[1.0], &[0.0, 1.0]]);
        let a = second_fundamental_form(&phi, &phi.perp(), FormKind::Prime).unwrap();
        let m = a.eval(C64::new(0.0, 0.0)).unwrap();
        let mut expect = CMat::zeros(2, 2);
        expect[(1, 0)] = c(1.0, 0.0);
        assert!(max_abs(&(m - expect)) < 1e-12);
        let k = Subbundle::constant(Frame::coordinate(2, &[0]));
        let z = second_fundamental_form(&k, &k.perp(), FormKind::Prime).unwrap();
        assert!(max_abs(&z.eval(c(0.2, 0.2)).unwrap()) < 1e-15);
    }

    #[test]
    fn nonorthogonal_forms_are_rejected() {
        let phi = line(&[&[1.0], &[0.0, 1.0]]);
        assert!(matches!(
            second_fundamental_form(&phi, &phi, FormKind::Prime),
            Err(Error::Contract { .. })
        ));
    }

    #[test]
    fn block_identity_for_cartan_embedding() {
        let phi = Subbundle::from_generators(
            3,
            vec![poly_vec(&[&[1.0], &[0.0, 2.0], &[0.5, 0.0, 1.0]])],
        )
        .unwrap();
        let az = compute_az(&phi.cartan());
        let a1 = second_fundamental_form(&phi, &phi.perp(), FormKind::Prime).unwrap();
        let a2 = second_fundamental_form(&phi.perp(), &phi, FormKind::Prime).unwrap();
        for z in sample_points(5, 5) {
            let lhs = az.eval(z).unwrap();
            let rhs = -(a1.eval(z).unwrap() + a2.eval(z).unwrap());
            assert!(max_abs(&(lhs - rhs)) < 1e-8);
        }
    }

    #[test]
    fn cartan_algebra() {
        let phi = line(&[&[1.0], &[0.0, 1.0], &[0.0, 0.0, 1.0]]);
        let z = c(0.7, 0.2);
        let u = phi.cartan().eval(z).unwrap();
        let w = phi.perp().cartan().eval(z).unwrap();
        assert!(max_abs(&(&u * &u - CMat::identity(3, 3))) < 1e-12);
        assert!(max_abs(&(u + w)) < 1e-12);
    }

    #[test]
    fn gauss_transform_of_holomorphic_curve() {
        let h = line(&[&[1.0], &[0.0, 1.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0, 1.0]]);
        let g = gauss_transform(&h, FormKind::Prime, 1).unwrap();
        assert_eq!(g.rank(), 1);
        let z = c(1.0, 0.0);
        let overlap = max_abs(&(g.projector(z).unwrap() * h.projector(z).unwrap()));
        assert!(overlap < 1e-10);
        assert_eq!(g.frame(z).unwrap().rank(), 1);
    }

    #[test]
    fn gauss_transform_of_antiholomorphic_is_zero() {
        let h = line(&[&[1.0], &[0.0, 1.0], &[0.0, 0.0, 1.0]]).conj();
        assert_eq!(gauss_transform(&h, FormKind::Prime, 1).unwrap().rank(), 0);
        assert_eq!(gauss_transform(&h, FormKind::DoublePrime, 1).unwrap().rank(), 1);
    }

    #[test]
    fn holomorphic_line_predicates() {
        let phi = line(&[&[1.0], &[0.0, 1.0]]);
        let r = predicates(&phi.cartan(), 25, 1).unwrap();
        assert!(r.is_harmonic);
        assert_eq!(r.is_holomorphic, Some(true));
        assert_eq!(r.is_antiholomorphic, Some(false));
        assert_eq!(r.nil_index, Some(2));
    }

    #[test]
    fn non_harmonic_control_fails() {
        let span: MatFn = Arc::new(|z: C64| {
            let mut m = CMat::zeros(3, 1);
            m[(0, 0)] = c(1.0, 0.0);
            m[(1, 0)] = z;
            m[(2, 0)] = z * z.conj();
            Ok(m)
        });
        let phi = Subbundle::from_span(3, span, RANK_TOL).unwrap();
        let r = predicates(&phi.cartan(), 9, 2).unwrap();
        assert!(!r.is_harmonic, "residual {}", r.harmonic_residual);
    }

    #[test]
    fn harmonic_sections_identity_matches_matrix_form() {
        // D_z̄(Aσ) − A·D_z̄σ for a non-holomorphic section σ, by independent differences.
        let phi = line(&[&[1.0], &[0.0, 1.0], &[0.0, 0.0, 1.0]]);
        let az = compute_az(&phi.cartan());
        let sigma = |z: C64| {
            let mut v = CMat::zeros(3, 1);
            v[(0, 0)] = z.conj();
            v[(1, 0)] = c(1.0, 0.5) * z;
            v[(2, 0)] = z * z.conj() + 1.0;
            v
        };
        let z = c(0.3, 0.4);
        let a = az.eval(z).unwrap();
        let abar = -a.adjoint();
        let a2 = az.clone();
        let asigma = move |w: C64| Ok(a2.eval(w)? * sigma(w));
        let (_, d1) = wirtinger(&asigma, z, FD_STEP).unwrap();
        let (_, ds) = wirtinger(&|w| Ok(sigma(w)), z, FD_STEP).unwrap();
        let lhs = d1 + &abar * &a * sigma(z) - &a * (ds + &abar * sigma(z));
        assert!(max_abs(&lhs) < 1e-8);
        assert!(max_abs(&harmonic_defect(&az, z).unwrap()) < 1e-8);
    }

    #[test]
    fn torus_is_superconformal_and_nilconformal() {
        let t = AnalyticMap::superconformal_torus();
        let phi = &t.subbundle;
        let g3 = gauss_transform(phi, FormKind::Prime, 3).unwrap();
        assert!(subbundle_distance(&g3, phi, 5).unwrap() < 1e-6);
        let u = t.unitary();
        for z in sample_points(9, 5) {
            assert!(u.unitarity_residual(z).unwrap() < 1e-10);
        }
        let az = compute_az(&u);
        let z = c(0.0, 0.0);
        let a = az.eval(z).unwrap();
        let a2 = &a * &a;
        assert!(op_norm(&a2) > 1e-2);
        assert!(op_norm(&(&a2 * &a)) < 1e-8);
        assert!(a2.trace().norm() < 1e-10);
        assert!(op_norm(&(&a2 * phi.projector(z).unwrap())) < 1e-10);
        let r = predicates(&u, 25, 4).unwrap();
        assert!(r.is_harmonic);
        assert_eq!(r.is_strongly_conformal, Some(true));
        assert_eq!(r.nil_index, Some(3));
    }

    #[test]
    fn lattice_operations_have_expected_ranks() {
        let a = Subbundle::from_generators(
            4,
            vec![poly_vec(&[&[1.0], &[0.0, 1.0], &[], &[]]), poly_vec(&[&[], &[], &[1.0], &[0.0, 1.0]])],
        )
        .unwrap();
        let b = Subbundle::from_generators(4, vec![poly_vec(&[&[1.0], &[0.0, 1.0], &[1.0], &[0.0, 1.0]])]).unwrap();
        assert_eq!(a.sum(&b).unwrap().rank(), 2);
        let i = a.intersect(&b).unwrap();
        assert_eq!(i.rank(), 1);
        assert!(subbundle_distance(&i, &b, 3).unwrap() < 1e-9);
        let d = a.ominus(&b).unwrap();
        assert_eq!(d.rank(), 1);
        let z = c(0.2, 0.9);
        assert!(max_abs(&(d.projector(z).unwrap() * b.projector(z).unwrap())) < 1e-12);
        assert_eq!(a.perp().rank(), 2);
        assert_eq!(RatFun::z().eval(z).unwrap(), z);
    }

    #[test]
    fn conj_jet_matches_finite_differences() {
        let b = line(&[&[1.0], &[0.0, 1.0], &[0.0, 0.0, 1.0]]).conj();
        let s = b.clone();
        let z = c(0.5, 0.5);
        let exact = b.projector_jet(z).unwrap();
        let (dz, _) = wirtinger(&|w| s.projector(w), z, FD_STEP).unwrap();
        assert!(max_abs(&(exact.dz - dz)) < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn random_holomorphic_lines_are_nilconformal(
            coeffs in proptest::collection::vec(-2.0f64..2.0, 9)
        ) {
            let polys: Vec<&[f64]> = coeffs.chunks(3).collect();
            let v = poly_vec(&polys);
            let phi = Subbundle::from_generators(3, vec![v]).unwrap();
            prop_assume!(phi.rank() == 1);
            let u = phi.cartan();
            let az = compute_az(&u);
            for z in sample_points(21, 3) {
                let Ok(a) = az.eval(z) else { continue };
                let iota = u.eval(z).unwrap();
                let anti = &a * &iota + &iota * &a;
                prop_assert!(max_abs(&anti) < 1e-8 * op_norm(&a).max(1.0));
                let nil = nil_index(&a, 4);
                prop_assert!(nil.map_or(false, |r| r <= 3));
                prop_assert!((&a * &a).trace().norm() < 1e-8 * op_norm(&a).powi(2).max(1.0));
                prop_assert!(harmonic_residual(&az, z).unwrap() < PREDICATE_TOL);
            }
        }
    }
}
