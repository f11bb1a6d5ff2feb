//! Ensembles of n spins of size s coupled collectively or independently to a
//! bath: angular-momentum tables, coupled bases, steady states and total
//! entropy production per relaxation.
//!
//! Spin sizes and projections are stored doubled (`two_s = 2s`, `two_m =
//! 2m`) so half-integers stay exact. The local basis index k of each spin
//! corresponds to m = −s + k, and spin 1 is the most significant factor of
//! the product basis.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::lindblad::{BathSpectrum, LindbladGenerator};
use crate::qcore::{c, kron, log_sum_exp, CMat, DensityMatrix, HermitianObservable};
use crate::spectrum::{build_level_structure, EnergyLevelStructure};

/// Largest product dimension for tables.
pub const TABLE_BUDGET: usize = 1 << 20;
/// Largest product dimension enumerated state by state.
pub const ENUMERATION_BUDGET: usize = 4096;
/// Largest dimension for which dense coupled bases are built.
pub const STATE_BUDGET: usize = 1024;
/// Largest dimension for Lindblad runs.
pub const LINDBLAD_BUDGET: usize = 64;
/// Default ħω|β_0| standing in for the large-|β_0| regime.
pub const LARGE_BETA_OMEGA: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinEnsembleSpec {
    pub n: usize,
    pub two_s: usize,
    pub omega: f64,
}

impl SpinEnsembleSpec {
    pub fn new(n: usize, two_s: usize, omega: f64) -> Result<Self> {
        if n == 0 || two_s == 0 {
            return Err(Error::Precondition("need n >= 1 and s >= 1/2".into()));
        }
        if !omega.is_finite() || omega <= 0.0 {
            return Err(Error::Precondition(format!("omega = {omega} must be positive")));
        }
        Ok(SpinEnsembleSpec { n, two_s, omega })
    }

    pub fn spin_half(n: usize, omega: f64) -> Result<Self> {
        Self::new(n, 1, omega)
    }

    pub fn local_dim(&self) -> usize {
        self.two_s + 1
    }

    /// (2s+1)^n, or `None` on overflow.
    pub fn checked_dim(&self) -> Option<usize> {
        (0..self.n).try_fold(1usize, |acc, _| acc.checked_mul(self.local_dim()))
    }

    pub fn dim(&self) -> usize {
        self.checked_dim().expect("dimension overflow")
    }

    fn budget(&self, budget: usize) -> Result<usize> {
        match self.checked_dim() {
            Some(d) if d <= budget => Ok(d),
            Some(d) => Err(Error::DimensionBudget { dim: d, budget }),
            None => Err(Error::DimensionBudget { dim: usize::MAX, budget }),
        }
    }

    pub fn s(&self) -> f64 {
        self.two_s as f64 / 2.0
    }

    /// Product-basis labels |m₁,…,m_n⟩.
    pub fn labels(&self) -> Vec<String> {
        let d = self.local_dim();
        (0..self.dim())
            .map(|mut idx| {
                let mut digits = vec![0usize; self.n];
                for k in (0..self.n).rev() {
                    digits[k] = idx % d;
                    idx /= d;
                }
                let ms: Vec<String> = digits
                    .iter()
                    .map(|&k| half_label(2 * k as i64 - self.two_s as i64))
                    .collect();
                format!("|{}>", ms.join(","))
            })
            .collect()
    }
}

fn half_label(two: i64) -> String {
    if two % 2 == 0 {
        (two / 2).to_string()
    } else {
        format!("{two}/2")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AngularMomentumTable {
    /// 2J from 2J₀ to 2ns in steps of 2.
    pub two_j: Vec<i64>,
    pub l_j: Vec<usize>,
    /// 2m from −2ns to 2ns in steps of 2.
    pub two_m: Vec<i64>,
    pub i_m: Vec<usize>,
}

impl AngularMomentumTable {
    pub fn l_of(&self, two_j: i64) -> usize {
        self.two_j
            .iter()
            .position(|&j| j == two_j)
            .map_or(0, |k| self.l_j[k])
    }

    pub fn i_of(&self, two_m: i64) -> usize {
        self.two_m
            .iter()
            .position(|&m| m == two_m)
            .map_or(0, |k| self.i_m[k])
    }
}

// J_z weight counts: by enumeration when small, else by polynomial powers.
fn m_weights(spec: &SpinEnsembleSpec, dim: usize) -> Vec<usize> {
    let ld = spec.local_dim();
    let width = spec.n * spec.two_s + 1;
    let mut counts = vec![0usize; width];
    if dim <= ENUMERATION_BUDGET {
        for idx in 0..dim {
            let mut rest = idx;
            let mut total = 0;
            for _ in 0..spec.n {
                total += rest % ld;
                rest /= ld;
            }
            counts[total] += 1;
        }
    } else {
        counts[0] = 1;
        for _ in 0..spec.n {
            let mut next = vec![0usize; width];
            for (k, &v) in counts.iter().enumerate() {
                if v == 0 {
                    continue;
                }
                for j in 0..ld {
                    if k + j < width {
                        next[k + j] += v;
                    }
                }
            }
            counts = next;
        }
    }
    counts
}

pub fn degeneracy_table(spec: &SpinEnsembleSpec) -> Result<AngularMomentumTable> {
    let dim = spec.budget(TABLE_BUDGET)?;
    let ts = spec.two_s as i64;
    let top = spec.n as i64 * ts;
    // multiplicity indexed by 2J
    let mut mult = vec![0usize; top as usize + 1];
    mult[ts as usize] = 1;
    for _ in 1..spec.n {
        let mut next = vec![0usize; top as usize + 1];
        for (tj, &l) in mult.iter().enumerate() {
            if l == 0 {
                continue;
            }
            let tj = tj as i64;
            let mut tk = (tj - ts).abs();
            while tk <= tj + ts {
                next[tk as usize] += l;
                tk += 2;
            }
        }
        mult = next;
    }
    let j0 = top % 2;
    let two_j: Vec<i64> = (j0..=top).step_by(2).collect();
    let l_j: Vec<usize> = two_j.iter().map(|&j| mult[j as usize]).collect();
    let two_m: Vec<i64> = (-top..=top).step_by(2).collect();
    let i_m: Vec<usize> = two_m
        .iter()
        .map(|&m| {
            two_j
                .iter()
                .zip(&l_j)
                .filter(|(&j, _)| j >= m.abs())
                .map(|(_, &l)| l)
                .sum()
        })
        .collect();

    let total: usize = two_j.iter().zip(&l_j).map(|(&j, &l)| l * (j as usize + 1)).sum();
    if total != dim || i_m.iter().sum::<usize>() != dim {
        return Err(Error::InvariantViolation("degeneracy table does not sum to (2s+1)^n".into()));
    }
    if m_weights(spec, dim) != i_m {
        return Err(Error::InvariantViolation("I_m disagrees with product-state counts".into()));
    }
    Ok(AngularMomentumTable { two_j, l_j, two_m, i_m })
}

fn local_ladder(two_s: usize) -> (CMat, CMat) {
    let d = two_s + 1;
    let s = two_s as f64 / 2.0;
    let mut up = CMat::zeros(d, d);
    for k in 0..d - 1 {
        let m = -s + k as f64;
        up[(k + 1, k)] = c((s * (s + 1.0) - m * (m + 1.0)).sqrt());
    }
    let jz = CMat::from_diagonal(&DVector::from_iterator(
        d,
        (0..d).map(|k| c(-s + k as f64)),
    ));
    (up, jz)
}

fn embed(op: &CMat, site: usize, n: usize) -> CMat {
    let d = op.nrows();
    let mut out = CMat::identity(1, 1);
    for k in 0..n {
        out = if k == site {
            kron(&out, op)
        } else {
            kron(&out, &CMat::identity(d, d))
        };
    }
    out
}

/// Local coupling j₊ + j₋ on each site (σ_x for spin 1/2).
pub fn local_couplings(spec: &SpinEnsembleSpec) -> Result<Vec<HermitianObservable>> {
    spec.budget(STATE_BUDGET)?;
    let (up, _) = local_ladder(spec.two_s);
    let x = &up + up.adjoint();
    (0..spec.n)
        .map(|k| HermitianObservable::new(embed(&x, k, spec.n)))
        .collect()
}

/// Σ_k local couplings and H_S = ω Σ_k j_z^{(k)}.
pub fn collective_coupling(spec: &SpinEnsembleSpec) -> Result<(HermitianObservable, HermitianObservable)> {
    let d = spec.budget(STATE_BUDGET)?;
    let mut a = CMat::zeros(d, d);
    for op in local_couplings(spec)? {
        a += op.matrix();
    }
    let (_, jz) = local_ladder(spec.two_s);
    let mut h = CMat::zeros(d, d);
    for k in 0..spec.n {
        h += embed(&jz, k, spec.n);
    }
    Ok((
        HermitianObservable::new(a)?,
        HermitianObservable::new(h * c(spec.omega))?,
    ))
}

pub fn level_structure(spec: &SpinEnsembleSpec) -> Result<EnergyLevelStructure> {
    let (_, h) = collective_coupling(spec)?;
    build_level_structure(&h, 0.0)
}

pub fn collective_generator(spec: &SpinEnsembleSpec, bath: &BathSpectrum) -> Result<LindbladGenerator> {
    spec.budget(LINDBLAD_BUDGET)?;
    let (a, h) = collective_coupling(spec)?;
    let els = build_level_structure(&h, 0.0)?;
    LindbladGenerator::from_couplings(&[a], bath, &els)
}

/// n single-spin channels, each with its own bath copy.
pub fn independent_generator(spec: &SpinEnsembleSpec, bath: &BathSpectrum) -> Result<LindbladGenerator> {
    spec.budget(LINDBLAD_BUDGET)?;
    let els = level_structure(spec)?;
    LindbladGenerator::from_couplings(&local_couplings(spec)?, bath, &els)
}

fn ln_factorial(k: i64) -> f64 {
    (1..=k).map(|x| (x as f64).ln()).sum()
}

/// ⟨j1 m1; j2 m2 | J M⟩ with doubled arguments.
pub fn clebsch_gordan(tj1: i64, tm1: i64, tj2: i64, tm2: i64, tj: i64, tm: i64) -> f64 {
    if tm1 + tm2 != tm
        || tj < (tj1 - tj2).abs()
        || tj > tj1 + tj2
        || (tj1 + tj2 + tj) % 2 != 0
        || tm1.abs() > tj1
        || tm2.abs() > tj2
        || tm.abs() > tj
    {
        return 0.0;
    }
    let h = |x: i64| x / 2;
    let f = |x: i64| ln_factorial(h(x));
    let pre = 0.5
        * (((tj + 1) as f64).ln() + f(tj + tj1 - tj2) + f(tj - tj1 + tj2) + f(tj1 + tj2 - tj)
            - f(tj1 + tj2 + tj + 2)
            + f(tj + tm)
            + f(tj - tm)
            + f(tj1 - tm1)
            + f(tj1 + tm1)
            + f(tj2 - tm2)
            + f(tj2 + tm2));
    let mut sum = 0.0;
    for k in 0..=h(tj1 + tj2 - tj) {
        let args = [
            tj1 + tj2 - tj - 2 * k,
            tj1 - tm1 - 2 * k,
            tj2 + tm2 - 2 * k,
            tj - tj2 + tm1 + 2 * k,
            tj - tj1 - tm2 + 2 * k,
        ];
        if args.iter().any(|&a| a < 0) {
            continue;
        }
        let den = ln_factorial(k) + args.iter().map(|&a| f(a)).sum::<f64>();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * (pre - den).exp();
    }
    sum
}

/// One irreducible block |J, m⟩_i, m = −J…J, in the product basis.
#[derive(Debug, Clone)]
pub struct CoupledBlock {
    pub two_j: i64,
    pub vectors: Vec<DVector<f64>>,
}

/// Coupled basis built by adding one spin at a time; blocks appear in the
/// order of the coupling tree, the last spin varying fastest.
pub fn coupled_basis(spec: &SpinEnsembleSpec) -> Result<Vec<CoupledBlock>> {
    let dim = spec.budget(STATE_BUDGET)?;
    let ld = spec.local_dim();
    let ts = spec.two_s as i64;
    let unit = |d: usize, k: usize| {
        let mut v = DVector::zeros(d);
        v[k] = 1.0;
        v
    };
    let mut blocks = vec![CoupledBlock {
        two_j: ts,
        vectors: (0..ld).map(|k| unit(ld, k)).collect(),
    }];
    let mut d = ld;
    for _ in 1..spec.n {
        let nd = d * ld;
        let mut next = Vec::new();
        for b in &blocks {
            let tjp = b.two_j;
            let mut tj = (tjp - ts).abs();
            while tj <= tjp + ts {
                let mut vectors = Vec::with_capacity(tj as usize + 1);
                let mut tm = -tj;
                while tm <= tj {
                    let mut v = DVector::zeros(nd);
                    for k2 in 0..ld {
                        let tm2 = 2 * k2 as i64 - ts;
                        let tm1 = tm - tm2;
                        if tm1.abs() > tjp {
                            continue;
                        }
                        let cg = clebsch_gordan(tjp, tm1, ts, tm2, tj, tm);
                        if cg == 0.0 {
                            continue;
                        }
                        let u = &b.vectors[((tm1 + tjp) / 2) as usize];
                        for (a, &ua) in u.iter().enumerate() {
                            v[a * ld + k2] += cg * ua;
                        }
                    }
                    vectors.push(v);
                    tm += 2;
                }
                next.push(CoupledBlock { two_j: tj, vectors });
                tj += 2;
            }
        }
        blocks = next;
        d = nd;
    }
    debug_assert_eq!(d, dim);
    let all: Vec<&DVector<f64>> = blocks.iter().flat_map(|b| &b.vectors).collect();
    for (a, u) in all.iter().enumerate() {
        for v in &all[a..] {
            let target = if std::ptr::eq(*u, *v) { 1.0 } else { 0.0 };
            if (u.dot(v) - target).abs() > 1e-12 {
                return Err(Error::InvariantViolation("coupled basis not orthonormal".into()));
            }
        }
    }
    Ok(blocks)
}

// ln Σ_{m=−J}^{J} e^{−βωm}
fn ln_z_j(two_j: i64, beta_omega: f64) -> f64 {
    let lw: Vec<f64> = (-two_j..=two_j)
        .step_by(2)
        .map(|tm| -beta_omega * tm as f64 / 2.0)
        .collect();
    log_sum_exp(&lw)
}

/// Steady state reached from ρ^th(β_0) under collective dissipation, as
/// (weight, J, eigenvalue list per m) for each J.
fn steady_spectrum(table: &AngularMomentumTable, bw0: f64, bwb: f64) -> Vec<(usize, i64, Vec<f64>)> {
    let lz: Vec<f64> = table.two_j.iter().map(|&j| ln_z_j(j, bw0)).collect();
    let lz_total = log_sum_exp(
        &table
            .two_j
            .iter()
            .zip(&table.l_j)
            .zip(&lz)
            .map(|((_, &l), &z)| (l as f64).ln() + z)
            .collect::<Vec<_>>(),
    );
    table
        .two_j
        .iter()
        .zip(&table.l_j)
        .zip(&lz)
        .map(|((&tj, &l), &z)| {
            let ln_p = z - lz_total;
            let lzb = ln_z_j(tj, bwb);
            let w = (-tj..=tj)
                .step_by(2)
                .map(|tm| (ln_p - bwb * tm as f64 / 2.0 - lzb).exp())
                .collect();
            (l, tj, w)
        })
        .collect()
}

/// Σ_J p_J(β_0) Σ_i ρ^th_{J,i}(β_B).
pub fn analytic_steady_state(spec: &SpinEnsembleSpec, beta_0: f64, beta_b: f64) -> Result<DensityMatrix> {
    if !beta_0.is_finite() || !beta_b.is_finite() {
        return Err(Error::Precondition("inverse temperatures must be finite".into()));
    }
    let table = degeneracy_table(spec)?;
    let blocks = coupled_basis(spec)?;
    let spectrum = steady_spectrum(&table, beta_0 * spec.omega, beta_b * spec.omega);
    let d = spec.dim();
    let mut m = nalgebra::DMatrix::<f64>::zeros(d, d);
    for b in &blocks {
        let (_, _, w) = spectrum
            .iter()
            .find(|(_, tj, _)| *tj == b.two_j)
            .expect("block J in table");
        for (v, &wk) in b.vectors.iter().zip(w) {
            m += v * v.transpose() * wk;
        }
    }
    let cm = m.map(c);
    let cm = crate::qcore::hermitian_part(&cm);
    DensityMatrix::new(cm, spec.labels())
}

/// −Σ_m (e^{−ωmβ_B}/Z_ns) ln I_m.
pub fn delta_c_h_limit(spec: &SpinEnsembleSpec, beta_b: f64) -> Result<f64> {
    let table = degeneracy_table(spec)?;
    let top = *table.two_j.last().expect("nonempty");
    let bw = beta_b * spec.omega;
    let lz = ln_z_j(top, bw);
    Ok(-table
        .two_m
        .iter()
        .zip(&table.i_m)
        .map(|(&tm, &i)| (-bw * tm as f64 / 2.0 - lz).exp() * (i as f64).ln())
        .sum::<f64>())
}

/// (S, E) of a state with the given eigenvalues and J_z values.
fn entropy_energy(parts: impl Iterator<Item = (f64, f64, f64)>) -> (f64, f64) {
    let mut s = 0.0;
    let mut e = 0.0;
    for (mult, w, energy) in parts {
        if w > 0.0 {
            s -= mult * w * w.ln();
        }
        e += mult * w * energy;
    }
    (s, e)
}

fn thermal_spin_parts(two_s: i64, bw: f64, omega: f64) -> Vec<(f64, f64, f64)> {
    let lz = ln_z_j(two_s, bw);
    (-two_s..=two_s)
        .step_by(2)
        .map(|tm| {
            let m = tm as f64 / 2.0;
            (1.0, (-bw * m - lz).exp(), omega * m)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyProductionRatio {
    pub pi_th: f64,
    pub pi_col: f64,
    pub ratio: f64,
}

/// Total entropy production ΔS − β_BΔE_S from ρ^th(β_0) under
/// independent and under collective dissipation.
pub fn entropy_production_ratio(
    spec: &SpinEnsembleSpec,
    beta_0: f64,
    beta_b: f64,
) -> Result<EntropyProductionRatio> {
    let table = degeneracy_table(spec)?;
    let (bw0, bwb) = (beta_0 * spec.omega, beta_b * spec.omega);
    let ts = spec.two_s as i64;
    let n = spec.n as f64;
    let (s0, e0) = entropy_energy(thermal_spin_parts(ts, bw0, spec.omega).into_iter());
    let (sb, eb) = entropy_energy(thermal_spin_parts(ts, bwb, spec.omega).into_iter());
    let pi_th = n * ((sb - s0) - beta_b * (eb - e0));
    let parts = steady_spectrum(&table, bw0, bwb)
        .into_iter()
        .flat_map(|(l, tj, w)| {
            w.into_iter().enumerate().map(move |(k, wk)| {
                let m = (-tj + 2 * k as i64) as f64 / 2.0;
                (l as f64, wk, spec.omega * m)
            })
        });
    let (sc, ec) = entropy_energy(parts);
    let pi_col = (sc - n * s0) - beta_b * (ec - n * e0);
    if !(pi_col.abs() >= 1e-12) {
        return Err(Error::RatioUndefined(pi_col));
    }
    Ok(EntropyProductionRatio {
        pi_th,
        pi_col,
        ratio: pi_th / pi_col,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::steady_states;
    use crate::qcore::{max_abs, thermal_state};
    use crate::spectrum::coherence_measures;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn half(n: usize) -> SpinEnsembleSpec {
        SpinEnsembleSpec::spin_half(n, 1.0).unwrap()
    }

    #[test]
    fn tables() {
        let t = degeneracy_table(&half(2)).unwrap();
        assert_eq!((t.l_of(2), t.l_of(0)), (1, 1));
        assert_eq!((t.i_of(0), t.i_of(2), t.i_of(-2)), (2, 1, 1));
        let t = degeneracy_table(&half(3)).unwrap();
        assert_eq!((t.l_of(3), t.l_of(1)), (1, 2));
        assert_eq!(t.i_of(1), 3);
        // spins 1: 1⊗1 = 0 ⊕ 1 ⊕ 2
        let t = degeneracy_table(&SpinEnsembleSpec::new(2, 2, 1.0).unwrap()).unwrap();
        assert_eq!(t.l_j, vec![1, 1, 1]);
        assert!(matches!(
            degeneracy_table(&half(40)),
            Err(Error::DimensionBudget { .. })
        ));
    }

    #[test]
    fn large_table_uses_polynomial_weights() {
        let t = degeneracy_table(&half(16)).unwrap();
        assert_eq!(t.i_of(0), 12870);
    }

    #[test]
    fn clebsch_gordan_values() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(clebsch_gordan(1, 1, 1, -1, 0, 0), r, epsilon = 1e-15);
        assert_abs_diff_eq!(clebsch_gordan(1, -1, 1, 1, 0, 0), -r, epsilon = 1e-15);
        assert_abs_diff_eq!(clebsch_gordan(1, 1, 1, -1, 2, 0), r, epsilon = 1e-15);
        assert_abs_diff_eq!(clebsch_gordan(2, 2, 1, -1, 1, 1), (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn couplings() {
        let (a, h) = collective_coupling(&half(1)).unwrap();
        assert_eq!(a.matrix(), &CMat::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]));
        assert_eq!(h.matrix(), &CMat::from_diagonal(&DVector::from_vec(vec![c(-0.5), c(0.5)])));

        let spec = half(2);
        let (a, h) = collective_coupling(&spec).unwrap();
        let els = build_level_structure(&h, 0.0).unwrap();
        let jumps = crate::lindblad::eigenoperators(&a, &els).unwrap();
        let low = jumps.operator_at(1.0).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let singlet = DVector::from_vec(vec![c(0.0), c(r), c(-r), c(0.0)]);
        assert!((low * &singlet).iter().all(|z| z.norm() < 1e-15));
        // J² commutes with the jump
        let (up, jz) = local_ladder(1);
        let jp = embed(&up, 0, 2) + embed(&up, 1, 2);
        let jzt = embed(&jz, 0, 2) + embed(&jz, 1, 2);
        let j2 = &jp * jp.adjoint() + &jzt * &jzt - &jzt;
        assert!(max_abs(&(low * &j2 - &j2 * low)) < 1e-14);
    }

    #[test]
    fn steady_state_matches_thermal_at_plus_minus_beta() {
        let spec = half(2);
        let (_, h) = collective_coupling(&spec).unwrap();
        for b0 in [1.0, -1.0] {
            let rho = analytic_steady_state(&spec, b0, 1.0).unwrap();
            let th = thermal_state(&h, 1.0);
            assert!(max_abs(&(rho.matrix() - th.matrix())) < 1e-14);
        }
    }

    #[test]
    fn steady_state_matches_projector() {
        let spec = half(2);
        let bath = BathSpectrum::flat(1.0, 0.1);
        let gen = collective_generator(&spec, &bath).unwrap();
        let man = steady_states(&gen).unwrap();
        let els = gen.els();
        for b0 in [50.0, -50.0, 2.0] {
            let rho0 = els.thermal_state(b0);
            let lim = man.asymptotic_state(&rho0).unwrap();
            let ana = analytic_steady_state(&spec, b0, 1.0).unwrap();
            assert!(max_abs(&(lim.matrix() - ana.matrix())) < 1e-6);
            assert!(max_abs(&gen.apply(ana.matrix())) < 1e-9);
            let (cv, ch) = coherence_measures(&ana, els).unwrap();
            assert!(cv.abs() < 1e-10);
            assert!(ch > 1e-6);
        }
    }

    #[test]
    fn closed_form_limit() {
        assert_eq!(delta_c_h_limit(&half(1), 0.7).unwrap(), 0.0);
        assert_abs_diff_eq!(
            delta_c_h_limit(&half(2), 0.0).unwrap(),
            -(2f64.ln()) / 3.0,
            epsilon = 1e-15
        );
        for n in [2, 3] {
            let spec = half(n);
            let els = level_structure(&spec).unwrap();
            for b0 in [50.0, -50.0] {
                let rho = analytic_steady_state(&spec, b0, 0.8).unwrap();
                let (_, ch) = coherence_measures(&rho, &els).unwrap();
                assert_abs_diff_eq!(-ch, delta_c_h_limit(&spec, 0.8).unwrap(), epsilon = 1e-3);
                // diagonal cut weights e^{−ωmβ_B}/(Z I_m)
                let table = degeneracy_table(&spec).unwrap();
                let p = els.populations(rho.matrix());
                let top = n as i64;
                let lz = ln_z_j(top, 0.8);
                for (k, pk) in p.iter().enumerate() {
                    let tm = 2 * (k.count_ones() as i64) - top;
                    let want = (-0.8 * tm as f64 / 2.0 - lz).exp() / table.i_of(tm) as f64;
                    assert_abs_diff_eq!(*pk, want, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn ratio_closed_forms() {
        assert!(matches!(
            entropy_production_ratio(&half(2), 1.0, 1.0),
            Err(Error::RatioUndefined(_))
        ));
        for n in [2usize, 4, 10] {
            for x in [0.0, 0.5, 2.0, 6.0] {
                let r = entropy_production_ratio(&half(n), 50.0, x).unwrap();
                let th = n as f64 * (1.0 + (-x).exp()).ln();
                let col = log_sum_exp(&(0..=n).map(|k| -(k as f64) * x).collect::<Vec<_>>());
                assert_abs_diff_eq!(r.pi_th, th, epsilon = 1e-12);
                assert_abs_diff_eq!(r.pi_col, col, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn collective_population_convergence_is_smaller() {
        let spec = half(3);
        let els = level_structure(&spec).unwrap();
        let rho0 = els.thermal_state(50.0);
        let d0 = crate::spectrum::distance_to_thermal(&rho0, &els, 1.0).unwrap();
        let col = analytic_steady_state(&spec, 50.0, 1.0).unwrap();
        let dcol = crate::spectrum::distance_to_thermal(&col, &els, 1.0).unwrap();
        // independent dissipation ends at D_th = 0
        assert!(-(dcol - d0) < d0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn table_consistency(n in 1usize..7, two_s in 1usize..5) {
            let spec = SpinEnsembleSpec::new(n, two_s, 1.0).unwrap();
            if spec.dim() <= ENUMERATION_BUDGET {
                let t = degeneracy_table(&spec).unwrap();
                prop_assert_eq!(t.i_m.iter().sum::<usize>(), spec.dim());
                if spec.dim() <= 256 {
                    let blocks = coupled_basis(&spec).unwrap();
                    for (&tj, &l) in t.two_j.iter().zip(&t.l_j) {
                        prop_assert_eq!(blocks.iter().filter(|b| b.two_j == tj).count(), l);
                    }
                }
            }
        }
    }
}
