//! Pointwise complex linear algebra on ℂⁿ.
//!
//! Subspaces are carried as orthonormal [`Frame`]s. Ranks are numerical:
//! the number of singular values above `tol·σ_max`.

use nalgebra::{DMatrix, DVector, Dim, Matrix, RawStorage};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Default relative rank tolerance.
pub const RANK_TOL: f64 = 1e-9;
/// Eigenvalue cutoff for intersections.
pub const INTERSECT_TOL: f64 = 1e-8;
/// Tolerance for orthonormality and projector identities.
pub const FRAME_TOL: f64 = 1e-9;

/// An orthonormal set of column vectors in ℂⁿ.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    vectors: CMat,
}

impl Frame {
    pub fn empty(n: usize) -> Self {
        Frame {
            vectors: CMat::zeros(n, 0),
        }
    }

    /// Wraps columns that are already orthonormal (checked).
    pub fn from_orthonormal(vectors: CMat) -> Result<Self> {
        let k = vectors.ncols();
        let g = vectors.adjoint() * &vectors;
        let err = max_abs(&(g - CMat::identity(k, k)));
        if err > FRAME_TOL {
            return Err(Error::contract("frame is not orthonormal", err));
        }
        Ok(Frame { vectors })
    }

    pub(crate) fn unchecked(vectors: CMat) -> Self {
        Frame { vectors }
    }

    /// The standard frame of span{e_i : i ∈ idx}.
    pub fn coordinate(n: usize, idx: &[usize]) -> Self {
        let mut m = CMat::zeros(n, idx.len());
        for (j, &i) in idx.iter().enumerate() {
            m[(i, j)] = C64::new(1.0, 0.0);
        }
        Frame { vectors: m }
    }

    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn rank(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn matrix(&self) -> &CMat {
        &self.vectors
    }

    pub fn into_matrix(self) -> CMat {
        self.vectors
    }

    /// π = Σ v v*.
    pub fn projector_matrix(&self) -> CMat {
        &self.vectors * self.vectors.adjoint()
    }
}

/// An orthogonal projector with its rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    pub matrix: CMat,
    pub rank: usize,
}

impl Projector {
    /// Validates P² = P, P = P*, tr P = rank.
    pub fn from_matrix(matrix: CMat) -> Result<Self> {
        let sq = max_abs(&(&matrix * &matrix - &matrix));
        let herm = max_abs(&(&matrix - matrix.adjoint()));
        let tr = matrix.trace().re;
        let rank = tr.round();
        let err = sq.max(herm).max((tr - rank).abs());
        if err > FRAME_TOL {
            return Err(Error::contract("matrix is not an orthogonal projector", err));
        }
        Ok(Projector {
            matrix,
            rank: rank as usize,
        })
    }
}

/// One-sided Jacobi SVD of an m×k matrix.
/// Returns (U, σ, V) with σ sorted descending, U of size m×min(m, k) and
/// V unitary of size k×k, so that A·V[:, i] = σ_i U[:, i] for i < min(m, k).
pub fn jacobi_svd(a: &CMat) -> (CMat, Vec<f64>, CMat) {
    let (m, k) = a.shape();
    let mut w = a.clone();
    let mut v = CMat::identity(k, k);
    let eps = f64::EPSILON;
    let negligible = (eps * a.norm()).powi(2);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let (alpha, beta, gamma) = {
                    let ws = w.as_slice();
                    let (cp, cq) = (&ws[p * m..(p + 1) * m], &ws[q * m..(q + 1) * m]);
                    let mut acc = (0.0, 0.0, C64::new(0.0, 0.0));
                    for (x, y) in cp.iter().zip(cq) {
                        acc.0 += x.norm_sqr();
                        acc.1 += y.norm_sqr();
                        acc.2 += x.conj() * y;
                    }
                    acc
                };
                let g = gamma.norm();
                if g <= eps * (alpha * beta).sqrt() || g <= f64::MIN_POSITIVE || alpha.min(beta) <= negligible {
                    continue;
                }
                rotated = true;
                let ph = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                rotate_cols(w.as_mut_slice(), m, p, q, c, sn, ph);
                rotate_cols(v.as_mut_slice(), k, p, q, c, sn, ph);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..k).map(|j| w.column(j).norm()).collect();
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));
    let r = m.min(k);
    let smax = idx.first().map(|&i| norms[i]).unwrap_or(0.0);
    let mut ucols: Vec<CVec> = Vec::with_capacity(r);
    for &j in idx.iter().take(r) {
        if norms[j] > smax * 1e-14 && norms[j] > f64::MIN_POSITIVE {
            let mut c = w.column(j).into_owned() / C64::new(norms[j], 0.0);
            for u in &ucols {
                let d = u.dotc(&c);
                c -= u * d;
            }
            let nn = c.norm();
            if nn > 0.5 {
                ucols.push(c / C64::new(nn, 0.0));
                continue;
            }
        }
        ucols.push(complete_basis(m, &ucols));
    }
    let vcols: Vec<CVec> = idx.iter().map(|&j| v.column(j).into_owned()).collect();
    let u = if r == 0 { CMat::zeros(m, 0) } else { CMat::from_columns(&ucols) };
    let v = if k == 0 { CMat::zeros(0, 0) } else { CMat::from_columns(&vcols) };
    (u, idx.iter().map(|&j| norms[j]).collect(), v)
}

fn rotate_cols(w: &mut [C64], m: usize, p: usize, q: usize, c: f64, s: f64, ph: C64) {
    let (lo, hi) = w.split_at_mut(q * m);
    let cp = &mut lo[p * m..(p + 1) * m];
    let cq = &mut hi[..m];
    let phc = ph.conj();
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y * phc;
        *x = a * c - b * s;
        *y = (a * s + b * c) * ph;
    }
}

fn complete_basis(m: usize, us: &[CVec]) -> CVec {
    let mut best = CVec::zeros(m);
    let mut best_norm = -1.0;
    for i in 0..m {
        let mut c = CVec::zeros(m);
        c[i] = C64::new(1.0, 0.0);
        for _ in 0..2 {
            for u in us {
                let d = u.dotc(&c);
                c -= u * d;
            }
        }
        let nn = c.norm();
        if nn > best_norm {
            best_norm = nn;
            best = c;
        }
    }
    best / C64::new(best_norm, 0.0)
}

/// Singular value decomposition with singular values sorted descending.
/// Returns (U, σ) where U has min(n, m) columns.
pub fn sorted_svd(a: &CMat) -> (CMat, Vec<f64>) {
    let n = a.nrows();
    if a.ncols() == 0 || n == 0 {
        return (CMat::zeros(n, 0), Vec::new());
    }
    let (u, s, _) = jacobi_svd(a);
    let r = u.ncols();
    (u, s.into_iter().take(r).collect())
}

/// Numerical rank: number of singular values > tol·σ_max.
pub fn numerical_rank(a: &CMat, tol: f64) -> usize {
    let (_, s) = sorted_svd(a);
    count_above(&s, tol)
}

fn count_above(s: &[f64], tol: f64) -> usize {
    let smax = s.first().copied().unwrap_or(0.0);
    if smax <= f64::MIN_POSITIVE {
        return 0;
    }
    s.iter().filter(|&&x| x > tol * smax).count()
}

/// Orthonormal frame of the column span of `a` with SVD-based rank.
pub fn orthonormalize(a: &CMat, tol: f64) -> Frame {
    let (u, s) = sorted_svd(a);
    let k = count_above(&s, tol);
    Frame {
        vectors: u.columns(0, k).into_owned(),
    }
}

/// Orthonormalizes a list of vectors (all of length n).
pub fn orthonormalize_vecs(n: usize, vs: &[CVec], tol: f64) -> Result<Frame> {
    if vs.is_empty() {
        return Ok(Frame::empty(n));
    }
    if vs.iter().any(|v| v.len() != n) {
        return Err(Error::domain("vectors do not share the ambient dimension"));
    }
    Ok(orthonormalize(&CMat::from_columns(vs), tol))
}

/// The `k` leading left singular vectors of `a`, together with σ_k/σ_max.
pub fn top_frame(a: &CMat, k: usize) -> (Frame, f64) {
    let (u, s) = sorted_svd(a);
    let k = k.min(s.len());
    let smax = s.first().copied().unwrap_or(0.0);
    let gap = if k == 0 {
        1.0
    } else if smax <= f64::MIN_POSITIVE {
        0.0
    } else {
        s[k - 1] / smax
    };
    (
        Frame {
            vectors: u.columns(0, k).into_owned(),
        },
        gap,
    )
}

/// Orthogonal projector onto the span of an orthonormal frame.
pub fn projector(f: &Frame) -> Result<Projector> {
    Frame::from_orthonormal(f.vectors.clone())?;
    Ok(Projector {
        matrix: f.projector_matrix(),
        rank: f.rank(),
    })
}

/// Id − P.
pub fn complement(p: &Projector) -> Projector {
    let n = p.matrix.nrows();
    Projector {
        matrix: CMat::identity(n, n) - &p.matrix,
        rank: n - p.rank,
    }
}

/// Orthonormal frame of the orthogonal complement of `f` in ℂⁿ.
pub fn perp(f: &Frame) -> Frame {
    let n = f.n();
    let q = CMat::identity(n, n) - f.projector_matrix();
    let (fr, _) = top_frame(&q, n - f.rank());
    fr
}

/// E ⊖ F = F^⊥ ∩ E, requiring span F ⊆ span E.
pub fn ominus(e: &Frame, f: &Frame) -> Result<Frame> {
    same_n(e.n(), f.n())?;
    let pe = e.projector_matrix();
    let viol = max_abs(&(&pe * f.matrix() - f.matrix()));
    if viol > 1e-8 {
        return Err(Error::contract("F is not contained in E", viol));
    }
    let n = e.n();
    let m = (CMat::identity(n, n) - f.projector_matrix()) * e.matrix();
    let (fr, _) = top_frame(&m, e.rank() - f.rank());
    Ok(fr)
}

/// Lattice operation selector for [`subspace_ops`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubspaceOp {
    Sum,
    Intersect,
}

pub fn subspace_ops(a: &Frame, b: &Frame, op: SubspaceOp) -> Result<Frame> {
    same_n(a.n(), b.n())?;
    Ok(match op {
        SubspaceOp::Sum => sum(a, b),
        SubspaceOp::Intersect => intersect(a, b),
    })
}

pub fn sum(a: &Frame, b: &Frame) -> Frame {
    let n = a.n();
    let mut cols: Vec<CVec> = a.matrix().column_iter().map(|c| c.into_owned()).collect();
    cols.extend(b.matrix().column_iter().map(|c| c.into_owned()));
    if cols.is_empty() {
        return Frame::empty(n);
    }
    orthonormalize(&CMat::from_columns(&cols), RANK_TOL)
}

/// Kernel of (Id − P_A) + (Id − P_B) with eigenvalue cutoff [`INTERSECT_TOL`].
pub fn intersect(a: &Frame, b: &Frame) -> Frame {
    intersect_many(&[a, b])
}

/// Intersection of several subspaces.
pub fn intersect_many(fs: &[&Frame]) -> Frame {
    let n = fs[0].n();
    let mut m = CMat::zeros(n, n);
    for f in fs {
        m += CMat::identity(n, n) - f.projector_matrix();
    }
    kernel_hermitian(&m, INTERSECT_TOL)
}

/// Eigenvectors of a positive semidefinite Hermitian matrix with
/// eigenvalue below `cut`.
pub fn kernel_hermitian(m: &CMat, cut: f64) -> Frame {
    let n = m.nrows();
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let (_, s, v) = jacobi_svd(&h);
    let cols: Vec<CVec> = (0..n)
        .filter(|&i| s[i] < cut)
        .map(|i| v.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        return Frame::empty(n);
    }
    Frame {
        vectors: CMat::from_columns(&cols),
    }
}

/// Orthonormal basis of ker(m): the complement of the row space.
pub fn kernel(m: &CMat, tol: f64) -> Frame {
    perp(&orthonormalize(&m.adjoint(), tol))
}

/// Complex symmetric bilinear form Σ vᵢ wᵢ (no conjugation).
pub fn bilinear(v: &CVec, w: &CVec) -> C64 {
    v.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
}

/// Largest |bilinear(vᵢ, vⱼ)| over a frame.
pub fn isotropy_residual(f: &Frame) -> f64 {
    let m = f.matrix();
    let g = m.transpose() * m;
    if g.is_empty() {
        0.0
    } else {
        max_abs(&g)
    }
}

pub fn is_isotropic(f: &Frame) -> bool {
    isotropy_residual(f) < 1e-9
}

/// The quaternionic structure J(a ⊕ b) = (−conj b) ⊕ (conj a) on ℂ^{2m}.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuatStructure {
    pub m: usize,
}

impl QuatStructure {
    pub fn for_dim(n: usize) -> Result<Self> {
        if n % 2 == 1 {
            Err(Error::domain(format!("quaternionic structure needs even dimension, got {n}")))
        } else {
            Ok(QuatStructure { m: n / 2 })
        }
    }

    /// The real matrix Ω with J v = Ω·conj(v).
    pub fn omega(&self) -> CMat {
        let m = self.m;
        let mut o = CMat::zeros(2 * m, 2 * m);
        for i in 0..m {
            o[(i, i + m)] = C64::new(-1.0, 0.0);
            o[(i + m, i)] = C64::new(1.0, 0.0);
        }
        o
    }

    pub fn apply_mat(&self, a: &CMat) -> CMat {
        self.omega() * a.map(|c| c.conj())
    }
}

pub fn quat_apply(j: &QuatStructure, v: &CVec) -> Result<CVec> {
    if v.len() != 2 * j.m {
        return Err(Error::domain(format!(
            "vector of length {} does not match ℂ^{}",
            v.len(),
            2 * j.m
        )));
    }
    let m = j.m;
    let mut out = CVec::zeros(2 * m);
    for i in 0..m {
        out[i] = -v[i + m].conj();
        out[i + m] = v[i].conj();
    }
    Ok(out)
}

/// Largest entry modulus.
pub fn max_abs<R: Dim, C: Dim, S: RawStorage<C64, R, C>>(a: &Matrix<C64, R, C, S>) -> f64 {
    a.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Hermitian inner product ⟨v, w⟩ = Σ vᵢ conj(wᵢ).
pub fn inner(v: &CVec, w: &CVec) -> C64 {
    v.iter().zip(w.iter()).map(|(a, b)| a * b.conj()).sum()
}

/// Spectral norm.
pub fn op_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let (_, s) = sorted_svd(a);
    s.first().copied().unwrap_or(0.0)
}

/// Entrywise complex conjugate.
pub fn conj_mat(a: &CMat) -> CMat {
    a.map(|c| c.conj())
}

/// Frame of the entrywise conjugate subspace.
pub fn conj_frame(f: &Frame) -> Frame {
    Frame {
        vectors: conj_mat(f.matrix()),
    }
}

/// ‖P_A − P_B‖₂.
pub fn projector_distance(a: &Frame, b: &Frame) -> f64 {
    op_norm(&(a.projector_matrix() - b.projector_matrix()))
}

/// Residual of span(a) ⊆ span(b): ‖(Id − P_B)·a‖₂ for orthonormal `a`.
pub fn containment_residual(a: &Frame, b: &Frame) -> f64 {
    if a.rank() == 0 {
        return 0.0;
    }
    let n = a.n();
    op_norm(&((CMat::identity(n, n) - b.projector_matrix()) * a.matrix()))
}

fn same_n(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::domain(format!("ambient dimension mismatch: {a} vs {b}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn jacobi_svd_recomposes_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x = CVec::from_fn(5, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let y = CVec::from_fn(3, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let a = &x * y.adjoint();
            let (u, s, v) = jacobi_svd(&a);
            let r = u.ncols();
            let sd = CMat::from_diagonal(&CVec::from_iterator(r, s.iter().take(r).map(|&t| c(t, 0.0))));
            let rec = &u * sd * v.columns(0, r).adjoint();
            assert!(max_abs(&(rec - &a)) < 1e-13);
            assert!(max_abs(&(u.adjoint() * &u - CMat::identity(r, r))) < 1e-13);
            assert!(max_abs(&(v.adjoint() * &v - CMat::identity(3, 3))) < 1e-13);
            assert!(s[1] < 1e-14 * s[0]);
        }
    }

    fn vecs(vs: &[&[C64]]) -> Vec<CVec> {
        vs.iter().map(|v| CVec::from_column_slice(v)).collect()
    }

    fn random_mat(rng: &mut ChaCha8Rng, n: usize, k: usize) -> CMat {
        CMat::from_fn(n, k, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn orthonormalize_examples() {
        let o = c(1.0, 0.0);
        let z = c(0.0, 0.0);
        let f = orthonormalize_vecs(2, &vecs(&[&[o, z], &[z, c(2.0, 0.0)]]), RANK_TOL).unwrap();
        assert_eq!(f.rank(), 2);
        assert!(max_abs(&(f.projector_matrix() - CMat::identity(2, 2))) < 1e-14);
        let g = orthonormalize_vecs(2, &vecs(&[&[o, o], &[c(2.0, 0.0), c(2.0, 0.0)]]), RANK_TOL).unwrap();
        assert_eq!(g.rank(), 1);
        assert_eq!(orthonormalize_vecs(3, &[], RANK_TOL).unwrap().rank(), 0);
    }

    #[test]
    fn random_vectors_match_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_mat(&mut rng, 3, 5);
        let f = orthonormalize(&a, RANK_TOL);
        assert_eq!(f.rank(), 3);
        // Oracle: rank-3 span in ℂ³ is everything; use three columns A₃(A₃*A₃)⁻¹A₃*.
        let a3 = a.columns(0, 3).into_owned();
        let oracle = &a3 * (a3.adjoint() * &a3).try_inverse().unwrap() * a3.adjoint();
        assert!(max_abs(&(f.projector_matrix() - oracle)) < 1e-9);
        // And a genuinely proper subspace in ℂ⁵.
        let b = random_mat(&mut rng, 5, 2);
        let fb = orthonormalize(&b, RANK_TOL);
        let ob = &b * (b.adjoint() * &b).try_inverse().unwrap() * b.adjoint();
        assert!(max_abs(&(fb.projector_matrix() - ob)) < 1e-9);
    }

    #[test]
    fn projector_examples() {
        let e1 = Frame::coordinate(2, &[0]);
        let p = projector(&e1).unwrap();
        let mut d = CMat::zeros(2, 2);
        d[(0, 0)] = c(1.0, 0.0);
        assert_eq!(p.matrix, d);
        let q = complement(&p);
        assert_eq!(q.matrix[(1, 1)], c(1.0, 0.0));
        assert_eq!(q.rank, 1);
        let full = projector(&Frame::coordinate(3, &[0, 1, 2])).unwrap();
        assert_eq!(full.matrix, CMat::identity(3, 3));
        let bad = Frame::unchecked(CMat::from_element(2, 1, c(1.0, 0.0)));
        assert!(matches!(projector(&bad), Err(Error::Contract { .. })));
    }

    #[test]
    fn random_projector_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = orthonormalize(&random_mat(&mut rng, 4, 2), RANK_TOL);
        let p = projector(&f).unwrap();
        assert!(max_abs(&(&p.matrix * &p.matrix - &p.matrix)) < 1e-10);
        assert!(Projector::from_matrix(p.matrix.clone()).is_ok());
    }

    #[test]
    fn ominus_examples() {
        let e = Frame::coordinate(2, &[0, 1]);
        let f = Frame::coordinate(2, &[0]);
        let r = ominus(&e, &f).unwrap();
        assert!(projector_distance(&r, &Frame::coordinate(2, &[1])) < 1e-14);
        assert_eq!(ominus(&e, &e).unwrap().rank(), 0);
        let g = Frame::coordinate(3, &[2]);
        let err = ominus(&Frame::coordinate(3, &[0, 1]), &g).unwrap_err();
        assert!(matches!(err, Error::Contract { residual, .. } if (residual - 1.0).abs() < 1e-12));
    }

    #[test]
    fn nested_ominus_in_c5() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = orthonormalize(&random_mat(&mut rng, 5, 3), RANK_TOL);
        let f = orthonormalize(&(e.matrix() * random_mat(&mut rng, 3, 1)), RANK_TOL);
        let r = ominus(&e, &f).unwrap();
        assert_eq!(r.rank(), 2);
        // Oracle: P_E P_R = P_R and P_F P_R = 0.
        let pr = r.projector_matrix();
        assert!(max_abs(&(e.projector_matrix() * &pr - &pr)) < 1e-9);
        assert!(max_abs(&(f.projector_matrix() * &pr)) < 1e-9);
    }

    #[test]
    fn intersection_examples() {
        let a = Frame::coordinate(3, &[0]);
        let b = Frame::coordinate(3, &[1]);
        assert_eq!(intersect(&a, &b).rank(), 0);
        let a = Frame::coordinate(3, &[0, 1]);
        let b = Frame::coordinate(3, &[1, 2]);
        let i = intersect(&a, &b);
        assert!(projector_distance(&i, &Frame::coordinate(3, &[1])) < 1e-12);
    }

    #[test]
    fn bilinear_examples() {
        let v = CVec::from_column_slice(&[c(1.0, 0.0), c(0.0, 1.0)]);
        assert!(bilinear(&v, &v).norm() < 1e-15);
        let e = CVec::from_column_slice(&[c(1.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(bilinear(&e, &e), c(1.0, 0.0));
        assert!(is_isotropic(&orthonormalize(&CMat::from_columns(&[v]), RANK_TOL)));
    }

    #[test]
    fn quaternionic_examples() {
        let j = QuatStructure::for_dim(2).unwrap();
        let e1 = CVec::from_column_slice(&[c(1.0, 0.0), c(0.0, 0.0)]);
        let e2 = CVec::from_column_slice(&[c(0.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(quat_apply(&j, &e1).unwrap(), e2);
        assert_eq!(quat_apply(&j, &e2).unwrap(), -e1);
        assert!(QuatStructure::for_dim(3).is_err());
        assert!(quat_apply(&j, &CVec::zeros(3)).is_err());
    }

    fn cvec(n: usize) -> impl Strategy<Value = CVec> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n)
            .prop_map(|v| CVec::from_iterator(v.len(), v.into_iter().map(|(a, b)| c(a, b))))
    }

    fn cmat(n: usize, k: usize) -> impl Strategy<Value = CMat> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * k)
            .prop_map(move |v| CMat::from_iterator(n, k, v.into_iter().map(|(a, b)| c(a, b))))
    }

    proptest! {
        #[test]
        fn j_squared_is_minus_identity(v in cvec(6)) {
            let j = QuatStructure::for_dim(6).unwrap();
            let jj = quat_apply(&j, &quat_apply(&j, &v).unwrap()).unwrap();
            prop_assert!(max_abs(&(jj + &v)) < 1e-15);
        }

        #[test]
        fn j_conjugates_inner_product(v in cvec(4), w in cvec(4)) {
            let j = QuatStructure::for_dim(4).unwrap();
            let lhs = inner(&quat_apply(&j, &v).unwrap(), &quat_apply(&j, &w).unwrap());
            prop_assert!((lhs - inner(&v, &w).conj()).norm() < 1e-13);
        }

        #[test]
        fn j_matrix_form_agrees(v in cvec(4)) {
            let j = QuatStructure::for_dim(4).unwrap();
            let m = j.apply_mat(&CMat::from_columns(&[v.clone()]));
            prop_assert!(max_abs(&(m.column(0).into_owned() - quat_apply(&j, &v).unwrap())) < 1e-15);
        }

        #[test]
        fn bilinear_is_inner_with_conjugate(v in cvec(5)) {
            let cv = v.map(|x| x.conj());
            prop_assert!((bilinear(&v, &v) - inner(&v, &cv)).norm() < 1e-14);
        }

        #[test]
        fn dimension_formula(a in cmat(6, 3), b in cmat(6, 4)) {
            let fa = orthonormalize(&a, RANK_TOL);
            let fb = orthonormalize(&b, RANK_TOL);
            let s = sum(&fa, &fb);
            let i = intersect(&fa, &fb);
            prop_assert_eq!(fa.rank() + fb.rank(), s.rank() + i.rank());
        }

        #[test]
        fn dimension_formula_with_shared_part(a in cmat(6, 2), b in cmat(6, 2), s in cmat(6, 1)) {
            let fa = orthonormalize(&CMat::from_columns(&[a.column(0).into_owned(), a.column(1).into_owned(), s.column(0).into_owned()]), RANK_TOL);
            let fb = orthonormalize(&CMat::from_columns(&[b.column(0).into_owned(), b.column(1).into_owned(), s.column(0).into_owned()]), RANK_TOL);
            let i = intersect(&fa, &fb);
            prop_assert_eq!(i.rank(), 1);
            prop_assert_eq!(fa.rank() + fb.rank(), sum(&fa, &fb).rank() + i.rank());
        }

        #[test]
        fn nested_projectors_compose(b in cmat(5, 3), k in cmat(3, 2)) {
            let (_, sb) = sorted_svd(&b);
            let (_, sk) = sorted_svd(&k);
            prop_assume!(sb[2] > 1e-3 * sb[0] && sk[1] > 1e-3 * sk[0]);
            let fb = orthonormalize(&b, RANK_TOL);
            let fa = orthonormalize(&(fb.matrix() * k), RANK_TOL);
            let pa = fa.projector_matrix();
            prop_assert!(max_abs(&(fb.projector_matrix() * &pa - &pa)) < 1e-9);
            let r = ominus(&fb, &fa).unwrap();
            prop_assert!(projector_distance(&sum(&fa, &r), &fb) < 1e-9);
        }

        #[test]
        fn rank_stable_under_small_perturbation(a in cmat(5, 2), e in cmat(5, 2)) {
            let fa = orthonormalize(&a, RANK_TOL);
            let (_, s) = sorted_svd(&a);
            prop_assume!(s[0] / s[s.len() - 1] < 1e6);
            let pert = &a + e * C64::new(1e-8, 0.0);
            prop_assert_eq!(orthonormalize(&pert, RANK_TOL).rank(), fa.rank());
        }
    }
}
