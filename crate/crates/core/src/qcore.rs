//! Dense Hermitian linear algebra and information-theoretic primitives.
//!
//! Everything here works on `DMatrix<Complex64>`. Entropies are in nats.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

/// Eigenvalues below this are treated as exact zeros.
pub const CLIP_FLOOR: f64 = 1e-14;
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;

#[inline]
pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn hermiticity_error(m: &CMat) -> f64 {
    let mut err: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            err = err.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    err
}

pub fn trace(m: &CMat) -> C64 {
    m.diagonal().iter().sum()
}

pub fn is_diagonal(m: &CMat) -> bool {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j && m[(i, j)] != C64::new(0.0, 0.0) {
                return false;
            }
        }
    }
    true
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
///
/// Diagonal input keeps the standard basis (stable sort on the diagonal).
pub fn eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let d = m.nrows();
    if is_diagonal(m) {
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&a, &b| m[(a, a)].re.total_cmp(&m[(b, b)].re));
        let vals = idx.iter().map(|&k| m[(k, k)].re).collect();
        let mut vecs = CMat::zeros(d, d);
        for (col, &k) in idx.iter().enumerate() {
            vecs[(k, col)] = c(1.0);
        }
        return (vals, vecs);
    }
    let eig = hermitian_part(m).symmetric_eigen();
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = CMat::zeros(d, d);
    for (col, &k) in idx.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(k));
    }
    (vals, vecs)
}

pub fn eigvalsh(m: &CMat) -> Vec<f64> {
    if is_diagonal(m) {
        let mut v: Vec<f64> = m.diagonal().iter().map(|z| z.re).collect();
        v.sort_by(f64::total_cmp);
        return v;
    }
    let mut v: Vec<f64> = hermitian_part(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

/// U diag(f(λ)) U†.
pub fn spectral_map(vals: &[f64], vecs: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let d = vals.len();
    let mut scaled = vecs.clone();
    for k in 0..d {
        let s = f(vals[k]);
        for i in 0..d {
            scaled[(i, k)] *= s;
        }
    }
    scaled * vecs.adjoint()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn default_labels(d: usize) -> Vec<String> {
    (0..d).map(|k| k.to_string()).collect()
}

/// Hermitian, unit-trace, positive semidefinite matrix with basis labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: CMat,
    labels: Vec<String>,
}

impl DensityMatrix {
    pub fn new(mat: CMat, labels: Vec<String>) -> Result<Self> {
        if !mat.is_square() || mat.nrows() == 0 {
            return Err(Error::Shape(format!(
                "density matrix must be square and non-empty, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if labels.len() != mat.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for dimension {}",
                labels.len(),
                mat.nrows()
            )));
        }
        let herr = hermiticity_error(&mat);
        if herr > HERMITIAN_TOL {
            return Err(Error::InvariantViolation(format!(
                "not Hermitian (deviation {herr:e})"
            )));
        }
        let tr = trace(&mat);
        if (tr - c(1.0)).norm() > TRACE_TOL {
            return Err(Error::InvariantViolation(format!(
                "trace {} differs from 1",
                tr.re
            )));
        }
        let lmin = eigvalsh(&mat).first().copied().unwrap_or(0.0);
        if lmin < -PSD_TOL {
            return Err(Error::InvariantViolation(format!(
                "negative eigenvalue {lmin:e}"
            )));
        }
        Ok(Self { mat, labels })
    }

    pub fn from_matrix(mat: CMat) -> Result<Self> {
        let d = mat.nrows();
        Self::new(mat, default_labels(d))
    }

    /// Symmetrizes `(m + m†)/2` before validation.
    pub fn from_hermitian_part(mat: &CMat, labels: Vec<String>) -> Result<Self> {
        Self::new(hermitian_part(mat), labels)
    }

    pub fn diagonal(probs: &[f64]) -> Result<Self> {
        let v = DVector::from_iterator(probs.len(), probs.iter().map(|&p| c(p)));
        Self::from_matrix(CMat::from_diagonal(&v))
    }

    pub fn pure(psi: &DVector<C64>) -> Result<Self> {
        let n = psi.norm();
        if n == 0.0 {
            return Err(Error::InvariantViolation("zero state vector".into()));
        }
        let v = psi / c(n);
        Self::from_hermitian_part(&(&v * v.adjoint()), default_labels(psi.len()))
    }

    pub fn maximally_mixed(d: usize) -> Self {
        Self {
            mat: CMat::identity(d, d) * c(1.0 / d as f64),
            labels: default_labels(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn into_matrix(self) -> CMat {
        self.mat
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim() {
            return Err(Error::Shape("label count mismatch".into()));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigvalsh(&self.mat)
    }

    pub fn expectation(&self, op: &CMat) -> C64 {
        trace(&(&self.mat * op))
    }

    pub fn tensor(&self, other: &DensityMatrix) -> DensityMatrix {
        let mut labels = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.labels {
            for b in &other.labels {
                labels.push(format!("{a}⊗{b}"));
            }
        }
        DensityMatrix {
            mat: kron(&self.mat, &other.mat),
            labels,
        }
    }

    /// U ρ U† for a unitary U.
    pub fn conjugate(&self, u: &CMat) -> Result<DensityMatrix> {
        DensityMatrix::from_hermitian_part(&(u * &self.mat * u.adjoint()), self.labels.clone())
    }

    pub(crate) fn from_parts_unchecked(mat: CMat, labels: Vec<String>) -> Self {
        Self { mat, labels }
    }
}

/// Hermitian operator (Hamiltonian or coupling).
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianObservable {
    mat: CMat,
}

impl HermitianObservable {
    pub fn new(mat: CMat) -> Result<Self> {
        if !mat.is_square() || mat.nrows() == 0 {
            return Err(Error::Shape("observable must be square and non-empty".into()));
        }
        let herr = hermiticity_error(&mat);
        if herr > HERMITIAN_TOL {
            return Err(Error::InvariantViolation(format!(
                "observable not Hermitian (deviation {herr:e})"
            )));
        }
        Ok(Self { mat })
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let v = DVector::from_iterator(values.len(), values.iter().map(|&x| c(x)));
        Self {
            mat: CMat::from_diagonal(&v),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mat: CMat::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            mat: &self.mat * c(s),
        }
    }

    pub fn kron(&self, other: &HermitianObservable) -> Self {
        Self {
            mat: kron(&self.mat, &other.mat),
        }
    }

    /// Operator norm (largest absolute eigenvalue).
    pub fn norm(&self) -> f64 {
        eigvalsh(&self.mat)
            .into_iter()
            .fold(0.0, |a: f64, x| a.max(x.abs()))
    }
}

/// −Σ λ ln λ with λ below the clip floor dropped.
pub fn entropy_of_spectrum(vals: &[f64]) -> f64 {
    vals.iter()
        .filter(|&&l| l > CLIP_FLOOR)
        .map(|&l| -l * l.ln())
        .sum()
}

pub fn von_neumann_entropy(rho: &DensityMatrix) -> f64 {
    if is_diagonal(rho.matrix()) {
        return entropy_of_spectrum(
            &rho.matrix().diagonal().iter().map(|z| z.re).collect::<Vec<_>>(),
        );
    }
    entropy_of_spectrum(&rho.eigenvalues())
}

fn check_same_space(a: &DensityMatrix, b: &DensityMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("dimensions {} and {}", a.dim(), b.dim())));
    }
    if a.labels() != b.labels() {
        return Err(Error::Shape("basis labels differ".into()));
    }
    Ok(())
}

/// S(σ|ρ) = Tr σ(ln σ − ln ρ), +∞ when supp σ ⊄ supp ρ.
pub fn relative_entropy(sigma: &DensityMatrix, rho: &DensityMatrix) -> Result<f64> {
    check_same_space(sigma, rho)?;
    let s = von_neumann_entropy(sigma);
    let (vals, vecs) = eigh(rho.matrix());
    let mut cross = 0.0;
    let mut kernel_weight = 0.0;
    for k in 0..vals.len() {
        let v = vecs.column(k);
        let w = (v.adjoint() * sigma.matrix() * v)[(0, 0)].re;
        if vals[k] > CLIP_FLOOR {
            cross += w * vals[k].ln();
        } else {
            kernel_weight += w;
        }
    }
    if kernel_weight > 1e-12 {
        return Ok(f64::INFINITY);
    }
    Ok(-s - cross)
}

/// Gibbs state e^{−βH}/Z, computed in the eigenbasis with a shift.
pub fn thermal_state(h: &HermitianObservable, beta: f64) -> DensityMatrix {
    let d = h.dim();
    let gibbs = |vals: &[f64]| {
        let logw: Vec<f64> = vals.iter().map(|&e| -beta * e).collect();
        let lz = log_sum_exp(&logw);
        logw.iter().map(|lw| (lw - lz).exp()).collect::<Vec<f64>>()
    };
    let mat = if is_diagonal(h.matrix()) {
        let diag: Vec<f64> = h.matrix().diagonal().iter().map(|z| z.re).collect();
        let p = gibbs(&diag);
        CMat::from_diagonal(&DVector::from_iterator(d, p.into_iter().map(c)))
    } else {
        let (vals, vecs) = eigh(h.matrix());
        let p = gibbs(&vals);
        let mut scaled = vecs.clone();
        for (k, pk) in p.iter().enumerate() {
            scaled.column_mut(k).scale_mut(*pk);
        }
        hermitian_part(&(scaled * vecs.adjoint()))
    };
    DensityMatrix::from_parts_unchecked(mat, default_labels(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    A,
    B,
}

/// Finds how labels factor as `left⊗right` for a (dA, dB) split.
fn factor_labels(labels: &[String], da: usize, db: usize) -> Option<(Vec<String>, Vec<String>)> {
    let parts: Vec<Vec<&str>> = labels.iter().map(|l| l.split('⊗').collect()).collect();
    let nparts = parts[0].len();
    if nparts < 2 || parts.iter().any(|p| p.len() != nparts) {
        return None;
    }
    'split: for cut in 1..nparts {
        let left = |i: usize| parts[i][..cut].join("⊗");
        let right = |i: usize| parts[i][cut..].join("⊗");
        let la: Vec<String> = (0..da).map(|a| left(a * db)).collect();
        let lb: Vec<String> = (0..db).map(right).collect();
        for a in 0..da {
            for b in 0..db {
                let i = a * db + b;
                if left(i) != la[a] || right(i) != lb[b] {
                    continue 'split;
                }
            }
        }
        return Some((la, lb));
    }
    None
}

pub fn partial_trace(
    rho: &DensityMatrix,
    dims: (usize, usize),
    keep: Keep,
) -> Result<DensityMatrix> {
    let (da, db) = dims;
    if da * db != rho.dim() || da == 0 || db == 0 {
        return Err(Error::Shape(format!(
            "dimension {} does not factor as {}x{}",
            rho.dim(),
            da,
            db
        )));
    }
    let (la, lb) = if rho.labels() == default_labels(rho.dim()).as_slice() {
        (default_labels(da), default_labels(db))
    } else {
        factor_labels(rho.labels(), da, db).ok_or_else(|| {
            Error::Shape("basis labels do not factor as a tensor product".into())
        })?
    };
    let m = rho.matrix();
    let out = match keep {
        Keep::A => CMat::from_fn(da, da, |a1, a2| {
            (0..db).map(|b| m[(a1 * db + b, a2 * db + b)]).sum()
        }),
        Keep::B => CMat::from_fn(db, db, |b1, b2| {
            (0..da).map(|a| m[(a * db + b1, a * db + b2)]).sum()
        }),
    };
    let labels = match keep {
        Keep::A => la,
        Keep::B => lb,
    };
    DensityMatrix::from_hermitian_part(&out, labels)
}

/// ln of a PSD matrix on its support, zero on the kernel.
pub fn matrix_log_on_support(rho: &DensityMatrix) -> Result<HermitianObservable> {
    let (vals, vecs) = eigh(rho.matrix());
    if let Some(&l) = vals.first() {
        if l < -PSD_TOL {
            return Err(Error::InvariantViolation(format!(
                "negative eigenvalue {l:e}"
            )));
        }
    }
    let m = spectral_map(&vals, &vecs, |l| if l > CLIP_FLOOR { l.ln() } else { 0.0 });
    Ok(HermitianObservable {
        mat: hermitian_part(&m),
    })
}

/// ½‖a − b‖₁.
pub fn trace_distance(a: &CMat, b: &CMat) -> f64 {
    0.5 * eigvalsh(&(a - b)).iter().map(|x| x.abs()).sum::<f64>()
}

fn ginibre<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMat {
    CMat::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im)
    })
}

/// Random full-rank state G G† / Tr(G G†) from a Ginibre matrix.
pub fn random_density_matrix<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DensityMatrix {
    let g = ginibre(d, rng);
    let m = &g * g.adjoint();
    let tr = trace(&m).re;
    DensityMatrix::from_parts_unchecked(hermitian_part(&(m / c(tr))), default_labels(d))
}

pub fn random_hermitian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> HermitianObservable {
    let g = ginibre(d, rng);
    HermitianObservable {
        mat: hermitian_part(&g),
    }
}

/// Haar unitary via QR with the phases of R's diagonal removed.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMat {
    let qr = ginibre(d, rng).qr();
    let (mut q, r) = qr.unpack();
    for k in 0..d {
        let z = r[(k, k)];
        let ph = if z.norm() > 0.0 { z / z.norm() } else { c(1.0) };
        for i in 0..d {
            q[(i, k)] *= ph;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_entropy(p: &[f64]) -> f64 {
        p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
    }

    #[test]
    fn entropy_examples() {
        let mixed = DensityMatrix::maximally_mixed(2);
        assert_abs_diff_eq!(von_neumann_entropy(&mixed), 2f64.ln(), epsilon = 1e-14);
        let psi = DVector::from_vec(vec![c(0.6), C64::new(0.0, 0.8)]);
        let pure = DensityMatrix::pure(&psi).unwrap();
        assert_abs_diff_eq!(von_neumann_entropy(&pure), 0.0, epsilon = 1e-12);
        let expected = scalar_entropy(&[0.9, 0.1]);
        assert_abs_diff_eq!(expected, 0.325083, epsilon = 1e-6);
        let d = DensityMatrix::diagonal(&[0.9, 0.1]).unwrap();
        assert_abs_diff_eq!(von_neumann_entropy(&d), expected, epsilon = 1e-15);
    }

    #[test]
    fn relative_entropy_examples() {
        let r = random_density_matrix(3, &mut ChaCha8Rng::seed_from_u64(1));
        assert_abs_diff_eq!(relative_entropy(&r, &r).unwrap(), 0.0, epsilon = 1e-12);
        let s = DensityMatrix::diagonal(&[1.0, 0.0]).unwrap();
        let m = DensityMatrix::maximally_mixed(2);
        assert_abs_diff_eq!(relative_entropy(&s, &m).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(relative_entropy(&m, &s).unwrap(), f64::INFINITY);
        let bad = DensityMatrix::maximally_mixed(3);
        assert!(matches!(relative_entropy(&bad, &m), Err(Error::Shape(_))));
    }

    #[test]
    fn invariant_checks_reject_bad_input() {
        let mut m = CMat::identity(2, 2) * c(0.5);
        m[(0, 1)] = c(0.1);
        assert!(matches!(
            DensityMatrix::from_matrix(m),
            Err(Error::InvariantViolation(_))
        ));
        let m = CMat::identity(2, 2);
        assert!(matches!(
            DensityMatrix::from_matrix(m),
            Err(Error::InvariantViolation(_))
        ));
        let m = CMat::from_diagonal(&DVector::from_vec(vec![c(1.1), c(-0.1)]));
        assert!(DensityMatrix::from_matrix(m).is_err());
    }

    #[test]
    fn thermal_examples() {
        let h = HermitianObservable::diagonal(&[0.0, 1.0]);
        let th = thermal_state(&h, 1.0);
        let e = (-1f64).exp();
        assert_abs_diff_eq!(th.matrix()[(0, 0)].re, 1.0 / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(th.matrix()[(1, 1)].re, e / (1.0 + e), epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_hermitian(4, &mut rng);
        let th0 = thermal_state(&h, 0.0);
        assert!(max_abs(&(th0.matrix() - CMat::identity(4, 4) * c(0.25))) < 1e-12);

        let h = HermitianObservable::diagonal(&[0.0, 0.0, 1.0]);
        let cold = thermal_state(&h, 800.0);
        assert_abs_diff_eq!(cold.matrix()[(0, 0)].re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cold.matrix()[(2, 2)].re, 0.0, epsilon = 1e-300);

        let neg = thermal_state(&HermitianObservable::diagonal(&[0.0, 1.0]), -1.0);
        assert!(neg.matrix()[(1, 1)].re > neg.matrix()[(0, 0)].re);
    }

    #[test]
    fn partial_trace_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_density_matrix(2, &mut rng);
        let b = random_density_matrix(3, &mut rng);
        let ab = a.tensor(&b);
        let ra = partial_trace(&ab, (2, 3), Keep::A).unwrap();
        assert!(max_abs(&(ra.matrix() - a.matrix())) < 1e-14);
        assert_eq!(ra.labels(), a.labels());
        let rb = partial_trace(&ab, (2, 3), Keep::B).unwrap();
        assert!(max_abs(&(rb.matrix() - b.matrix())) < 1e-14);

        let s = 0.5f64.sqrt();
        let bell = DensityMatrix::pure(&DVector::from_vec(vec![c(s), c(0.0), c(0.0), c(s)])).unwrap();
        let r = partial_trace(&bell, (2, 2), Keep::A).unwrap();
        assert!(max_abs(&(r.matrix() - CMat::identity(2, 2) * c(0.5))) < 1e-15);

        let joint = random_density_matrix(6, &mut rng);
        let r = partial_trace(&joint, (2, 3), Keep::A).unwrap();
        let m = joint.matrix();
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..3 {
                    acc += m[(3 * i + k, 3 * j + k)];
                }
                assert!((acc - r.matrix()[(i, j)]).norm() < 1e-15);
            }
        }
        assert!(matches!(
            partial_trace(&joint, (4, 2), Keep::A),
            Err(Error::Shape(_))
        ));
        let odd = joint.clone().with_labels((0..6).map(|k| format!("x{k}")).collect()).unwrap();
        assert!(matches!(partial_trace(&odd, (2, 3), Keep::A), Err(Error::Shape(_))));
    }

    #[test]
    fn log_examples() {
        let l = matrix_log_on_support(&DensityMatrix::maximally_mixed(3)).unwrap();
        assert!(max_abs(&(l.matrix() - CMat::identity(3, 3) * c(-(3f64).ln()))) < 1e-14);
        let e = (-1f64).exp();
        let l = matrix_log_on_support(&DensityMatrix::diagonal(&[e, 1.0 - e]).unwrap()).unwrap();
        assert_abs_diff_eq!(l.matrix()[(0, 0)].re, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l.matrix()[(1, 1)].re, (1.0 - e).ln(), epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_hermitian(5, &mut rng);
        let ex = h.matrix().clone().exp();
        let z = trace(&ex).re;
        let rho = DensityMatrix::from_hermitian_part(&(ex / c(z)), default_labels(5)).unwrap();
        let l = matrix_log_on_support(&rho).unwrap();
        let expected = h.matrix() - CMat::identity(5, 5) * c(z.ln());
        assert!(max_abs(&(l.matrix() - expected)) < 1e-10);
    }

    #[test]
    fn haar_is_unitary() {
        let u = haar_unitary(4, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(max_abs(&(&u * u.adjoint() - CMat::identity(4, 4))) < 1e-13);
    }
}
