//! Energy-conserving unitaries on a system S and an ancilla B, with the
//! coherence and population balances they obey.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::qcore::{
    commutator, eigvalsh, haar_unitary, max_abs, partial_trace, von_neumann_entropy, CMat,
    DensityMatrix, HermitianObservable, Keep,
};
use crate::spectrum::{
    build_level_structure, coherence_measures, distance_to_thermal, product_structure,
    EnergyLevelStructure,
};

pub const UNITARY_TOL: f64 = 1e-12;
pub const STATIONARY_TOL: f64 = 1e-10;
pub const CONSERVATION_TOL: f64 = 1e-9;
pub const FACTORIZATION_TOL: f64 = 1e-10;
pub const DIVERGENCE_THRESHOLD: f64 = 1e-6;
pub const DEFAULT_SEEDS: u64 = 256;

#[derive(Debug, Clone)]
pub struct BipartiteSystem {
    els_s: EnergyLevelStructure,
    els_b: EnergyLevelStructure,
    joint: EnergyLevelStructure,
}

impl BipartiteSystem {
    pub fn new(h_s: &HermitianObservable, h_b: &HermitianObservable) -> Result<Self> {
        Self::from_structures(build_level_structure(h_s, 0.0)?, build_level_structure(h_b, 0.0)?)
    }

    pub fn from_structures(els_s: EnergyLevelStructure, els_b: EnergyLevelStructure) -> Result<Self> {
        let joint = product_structure(&els_s, &els_b)?;
        Ok(BipartiteSystem { els_s, els_b, joint })
    }

    pub fn els_s(&self) -> &EnergyLevelStructure {
        &self.els_s
    }

    pub fn els_b(&self) -> &EnergyLevelStructure {
        &self.els_b
    }

    pub fn joint(&self) -> &EnergyLevelStructure {
        &self.joint
    }

    /// Π_k, one per joint energy.
    pub fn global_projectors(&self) -> &[CMat] {
        self.joint.projectors()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.els_s.dim(), self.els_b.dim())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyConservingUnitary {
    matrix: CMat,
}

impl EnergyConservingUnitary {
    pub fn new(matrix: CMat, sys: &BipartiteSystem) -> Result<Self> {
        let d = sys.joint.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Shape(format!("unitary must be {d}x{d}")));
        }
        if max_abs(&(matrix.adjoint() * &matrix - CMat::identity(d, d))) > UNITARY_TOL {
            return Err(Error::InvariantViolation("matrix is not unitary".into()));
        }
        for p in sys.global_projectors() {
            if max_abs(&commutator(&matrix, p)) > UNITARY_TOL {
                return Err(Error::InvariantViolation("unitary does not conserve energy".into()));
            }
        }
        Ok(EnergyConservingUnitary { matrix })
    }

    pub fn identity(sys: &BipartiteSystem) -> Self {
        let d = sys.joint.dim();
        EnergyConservingUnitary {
            matrix: CMat::identity(d, d),
        }
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }
}

/// Independent Haar blocks on every joint eigenspace.
pub fn sample_energy_conserving_unitary(sys: &BipartiteSystem, seed: u64) -> EnergyConservingUnitary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let joint = &sys.joint;
    let d = joint.dim();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); joint.levels().len()];
    for (k, &(lvl, _)) in joint.basis_map().iter().enumerate() {
        members[lvl].push(k);
    }
    let mut u = CMat::zeros(d, d);
    for idx in &members {
        let block = haar_unitary(idx.len(), &mut rng);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                u[(i, j)] = block[(a, b)];
            }
        }
    }
    let matrix = if joint.is_natural_basis() {
        u
    } else {
        let v = joint.eigenbasis();
        &v * u * v.adjoint()
    };
    EnergyConservingUnitary { matrix }
}

#[derive(Debug, Clone)]
pub struct OperationOutcome {
    pub rho_sb: DensityMatrix,
    pub rho_s: DensityMatrix,
    pub rho_b: DensityMatrix,
}

fn check_stationary(sys: &BipartiteSystem, rho_b: &DensityMatrix) -> Result<()> {
    let h = sys.els_b.hamiltonian();
    let err = max_abs(&commutator(h.matrix(), rho_b.matrix()));
    if err > STATIONARY_TOL {
        return Err(Error::Precondition(format!(
            "ancilla state is not stationary (|[H_B, rho_B]| = {err:e})"
        )));
    }
    Ok(())
}

/// ρ_SB = U(ρ_S⊗ρ_B)U† and both marginals.
pub fn apply_operation(
    sys: &BipartiteSystem,
    u: &EnergyConservingUnitary,
    rho_s: &DensityMatrix,
    rho_b: &DensityMatrix,
) -> Result<OperationOutcome> {
    let (ds, db) = sys.dims();
    if rho_s.dim() != ds || rho_b.dim() != db {
        return Err(Error::Shape("states do not match the bipartite system".into()));
    }
    check_stationary(sys, rho_b)?;
    let joint = DensityMatrix::from_hermitian_part(
        &(u.matrix() * crate::qcore::kron(rho_s.matrix(), rho_b.matrix()) * u.matrix().adjoint()),
        crate::qcore::default_labels(ds * db),
    )?;
    let out_s = partial_trace(&joint, (ds, db), Keep::A)?.with_labels(rho_s.labels().to_vec())?;
    let out_b = partial_trace(&joint, (ds, db), Keep::B)?.with_labels(rho_b.labels().to_vec())?;
    Ok(OperationOutcome {
        rho_sb: joint,
        rho_s: out_s,
        rho_b: out_b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Measures {
    pub c_v: f64,
    pub c_h: f64,
    pub d_th: f64,
}

impl Measures {
    fn of(rho: &DensityMatrix, els: &EnergyLevelStructure, beta_b: f64) -> Result<Self> {
        let (c_v, c_h) = coherence_measures(rho, els)?;
        Ok(Measures {
            c_v,
            c_h,
            d_th: distance_to_thermal(rho, els, beta_b)?,
        })
    }

    fn minus(&self, o: &Measures) -> Measures {
        Measures {
            c_v: self.c_v - o.c_v,
            c_h: self.c_h - o.c_h,
            d_th: self.d_th - o.d_th,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartyMeasures {
    pub s: Measures,
    pub b: Measures,
    pub sb: Measures,
}

impl PartyMeasures {
    /// SB minus S minus B.
    pub fn correlated(&self) -> Measures {
        self.sb.minus(&self.s).minus(&self.b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConservationCheck {
    pub label: char,
    pub name: &'static str,
    /// Residual of an identity or margin of an inequality.
    pub value: f64,
    /// `None` when the check does not apply.
    pub passed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConservationReport {
    pub initial: PartyMeasures,
    pub fin: PartyMeasures,
    pub bd_entropy_initial: f64,
    pub bd_entropy_final: f64,
    pub delta_e_s: f64,
    /// Whether ρ_B is the thermal state at β_B.
    pub ancilla_thermal: bool,
    pub checks: Vec<ConservationCheck>,
}

impl ConservationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed != Some(false))
    }

    pub fn check(&self, label: char) -> &ConservationCheck {
        self.checks.iter().find(|c| c.label == label).expect("known label")
    }

    pub fn delta(&self) -> PartyMeasures {
        PartyMeasures {
            s: self.fin.s.minus(&self.initial.s),
            b: self.fin.b.minus(&self.initial.b),
            sb: self.fin.sb.minus(&self.initial.sb),
        }
    }
}

fn block_entropy(rho: &DensityMatrix, els: &EnergyLevelStructure) -> Result<f64> {
    Ok(von_neumann_entropy(&crate::spectrum::dephase_block_diagonal(rho, els)?))
}

pub fn conservation_report(
    sys: &BipartiteSystem,
    u: &EnergyConservingUnitary,
    rho_s: &DensityMatrix,
    rho_b: &DensityMatrix,
    beta_b: f64,
) -> Result<ConservationReport> {
    let out = apply_operation(sys, u, rho_s, rho_b)?;
    let start = DensityMatrix::from_hermitian_part(
        &crate::qcore::kron(rho_s.matrix(), rho_b.matrix()),
        crate::qcore::default_labels(sys.joint.dim()),
    )?;
    let initial = PartyMeasures {
        s: Measures::of(rho_s, &sys.els_s, beta_b)?,
        b: Measures::of(rho_b, &sys.els_b, beta_b)?,
        sb: Measures::of(&start, &sys.joint, beta_b)?,
    };
    let fin = PartyMeasures {
        s: Measures::of(&out.rho_s, &sys.els_s, beta_b)?,
        b: Measures::of(&out.rho_b, &sys.els_b, beta_b)?,
        sb: Measures::of(&out.rho_sb, &sys.joint, beta_b)?,
    };
    let bd_i = block_entropy(&start, &sys.joint)?;
    let bd_f = block_entropy(&out.rho_sb, &sys.joint)?;
    let ancilla_thermal =
        max_abs(&(rho_b.matrix() - sys.els_b.thermal_state(beta_b).matrix())) <= STATIONARY_TOL;

    let ds = fin.s.minus(&initial.s);
    let db = fin.b.minus(&initial.b);
    let dsb = fin.sb.minus(&initial.sb);
    let corr = fin.correlated();
    let eq = |label, name, value: f64| ConservationCheck {
        label,
        name,
        value,
        passed: Some(value.abs() <= CONSERVATION_TOL),
    };
    let ge = |label, name, value: f64| ConservationCheck {
        label,
        name,
        value,
        passed: Some(value >= -CONSERVATION_TOL),
    };

    let bd_cut = crate::spectrum::dephase_block_diagonal(&start, &sys.joint)?;
    let local_cut = crate::spectrum::dephase_block_diagonal(rho_s, &sys.els_s)?;
    let factor_err =
        max_abs(&(bd_cut.matrix() - crate::qcore::kron(local_cut.matrix(), rho_b.matrix())));

    let mut f = ge('f', "-dC_h^S - dD_th^S >= 0", -ds.c_h - ds.d_th);
    if !ancilla_thermal {
        f.passed = None;
    }
    let checks = vec![
        eq('a', "dC_v^SB = 0", dsb.c_v),
        eq('b', "dC_h^SB + dD_th^SB = 0", dsb.c_h + dsb.d_th),
        eq('c', "-dC_v^S - dC_v^B = C_cv^SB(t_f)", -ds.c_v - db.c_v - corr.c_v),
        eq(
            'd',
            "-dC_h^S - dD_th^S - dC_h^B - dD_th^B = C_ch^SB(t_f) + D_cth^SB(t_f)",
            -ds.c_h - ds.d_th - db.c_h - db.d_th - corr.c_h - corr.d_th,
        ),
        ge('e', "-dC_v^S >= 0", -ds.c_v),
        f,
        ConservationCheck {
            label: 'g',
            name: "global BD cut factorizes",
            value: factor_err,
            passed: Some(factor_err <= FACTORIZATION_TOL),
        },
    ];
    Ok(ConservationReport {
        initial,
        fin,
        bd_entropy_initial: bd_i,
        bd_entropy_final: bd_f,
        delta_e_s: sys.els_s.energy(out.rho_s.matrix()) - sys.els_s.energy(rho_s.matrix()),
        ancilla_thermal,
        checks,
    })
}

/// Largest c ≥ 0 with ρ + cχ positive semidefinite.
pub fn max_coherence_amplitude(rho: &DensityMatrix, chi: &CMat) -> Result<f64> {
    let min_eig = |x: f64| eigvalsh(&(rho.matrix() + chi * crate::qcore::c(x)))[0];
    if max_abs(chi) == 0.0 {
        return Err(Error::Precondition("coherence term is zero".into()));
    }
    let mut hi = 1.0 / max_abs(chi);
    let mut grow = 0;
    while min_eig(hi) >= 0.0 {
        hi *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::Precondition("coherence term keeps the state positive for all c".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if min_eig(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone)]
pub struct DivergenceWitness {
    /// Position of U in the searched family.
    pub index: usize,
    pub amplitude: f64,
    pub unitary: EnergyConservingUnitary,
    pub rho_s: DensityMatrix,
    pub rho_b: DensityMatrix,
    pub delta_d_th_s: f64,
    pub delta_c_h_s: f64,
    pub delta_e_s: f64,
    pub report: ConservationReport,
}

/// Searches `family` for an operation that pushes S away from the thermal
/// populations, starting from ρ_S^th(β_B) + cχ with horizontal χ.
pub fn divergence_witness(
    sys: &BipartiteSystem,
    family: &[EnergyConservingUnitary],
    beta_b: f64,
    chi: &CMat,
) -> Result<DivergenceWitness> {
    let th_s = sys.els_s.thermal_state(beta_b);
    let th_b = sys.els_b.thermal_state(beta_b);
    let amplitude = max_coherence_amplitude(&th_s, chi)? * (1.0 - 1e-9);
    let rho_s = DensityMatrix::from_hermitian_part(
        &(th_s.matrix() + chi * crate::qcore::c(amplitude)),
        th_s.labels().to_vec(),
    )?;
    for (index, u) in family.iter().enumerate() {
        let report = conservation_report(sys, u, &rho_s, &th_b, beta_b)?;
        let d = report.delta();
        if -d.s.d_th < -DIVERGENCE_THRESHOLD && -d.s.c_h >= d.s.d_th - CONSERVATION_TOL {
            return Ok(DivergenceWitness {
                index,
                amplitude,
                unitary: u.clone(),
                rho_s,
                rho_b: th_b,
                delta_d_th_s: d.s.d_th,
                delta_c_h_s: d.s.c_h,
                delta_e_s: report.delta_e_s,
                report,
            });
        }
    }
    Err(Error::WitnessNotFound(format!(
        "no divergence among {} operations",
        family.len()
    )))
}

pub fn seeded_family(sys: &BipartiteSystem, seeds: std::ops::Range<u64>) -> Vec<EnergyConservingUnitary> {
    seeds.map(|s| sample_energy_conserving_unitary(sys, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{c, random_density_matrix};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn qubit() -> HermitianObservable {
        HermitianObservable::diagonal(&[0.0, 1.0])
    }

    fn qubit_pair() -> BipartiteSystem {
        BipartiteSystem::new(&qubit(), &qubit()).unwrap()
    }

    #[test]
    fn sampling() {
        let sys = BipartiteSystem::new(&qubit(), &HermitianObservable::diagonal(&[0.0, 2.5])).unwrap();
        let u = sample_energy_conserving_unitary(&sys, 3);
        assert!(crate::qcore::is_diagonal(u.matrix()));
        let sys = qubit_pair();
        let a = sample_energy_conserving_unitary(&sys, 11);
        assert_eq!(a, sample_energy_conserving_unitary(&sys, 11));
        assert!(a.matrix()[(1, 2)].norm() > 0.0);
        assert!(EnergyConservingUnitary::new(a.matrix().clone(), &sys).is_ok());
    }

    #[test]
    fn identity_changes_nothing() {
        let sys = qubit_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho_s = random_density_matrix(2, &mut rng);
        let rho_b = sys.els_b().thermal_state(0.4);
        let rep = conservation_report(&sys, &EnergyConservingUnitary::identity(&sys), &rho_s, &rho_b, 0.4)
            .unwrap();
        assert!(rep.all_pass());
        let d = rep.delta();
        for m in [d.s, d.b, d.sb, rep.fin.correlated()] {
            assert!(m.c_v.abs() < 1e-12 && m.c_h.abs() < 1e-12 && m.d_th.abs() < 1e-12);
        }
    }

    #[test]
    fn thermal_fixed_point() {
        let sys = BipartiteSystem::new(&qubit(), &HermitianObservable::diagonal(&[0.0, 1.0, 2.0]))
            .unwrap();
        let th_s = sys.els_s().thermal_state(0.9);
        let th_b = sys.els_b().thermal_state(0.9);
        for seed in 0..8 {
            let u = sample_energy_conserving_unitary(&sys, seed);
            let out = apply_operation(&sys, &u, &th_s, &th_b).unwrap();
            assert!(max_abs(&(out.rho_s.matrix() - th_s.matrix())) < 1e-12);
        }
    }

    #[test]
    fn full_swap_exchanges_populations() {
        let sys = qubit_pair();
        let mut swap = CMat::zeros(4, 4);
        for (i, j) in [(0, 0), (1, 2), (2, 1), (3, 3)] {
            swap[(i, j)] = c(1.0);
        }
        let u = EnergyConservingUnitary::new(swap, &sys).unwrap();
        let (a, b) = (sys.els_s().thermal_state(2.0), sys.els_b().thermal_state(0.5));
        let out = apply_operation(&sys, &u, &a, &b).unwrap();
        assert!(max_abs(&(out.rho_s.matrix() - b.matrix())) < 1e-15);
        assert!(max_abs(&(out.rho_b.matrix() - a.matrix())) < 1e-15);
    }

    #[test]
    fn nonstationary_ancilla_rejected() {
        let sys = qubit_pair();
        let plus = DensityMatrix::from_matrix(CMat::from_element(2, 2, c(0.5))).unwrap();
        let r = apply_operation(&sys, &EnergyConservingUnitary::identity(&sys), &plus, &plus);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    fn pair_s_qubit_b() -> BipartiteSystem {
        BipartiteSystem::new(&HermitianObservable::diagonal(&[0.0, 1.0, 1.0, 2.0]), &qubit()).unwrap()
    }

    fn horizontal_chi() -> CMat {
        let mut chi = CMat::zeros(4, 4);
        chi[(1, 2)] = c(1.0);
        chi[(2, 1)] = c(1.0);
        chi
    }

    #[test]
    fn divergence_needs_coherence() {
        let sys = pair_s_qubit_b();
        let th_s = sys.els_s().thermal_state(1.0);
        let th_b = sys.els_b().thermal_state(1.0);
        for u in seeded_family(&sys, 0..16) {
            let rep = conservation_report(&sys, &u, &th_s, &th_b, 1.0).unwrap();
            assert!(-rep.delta().s.d_th >= -1e-9);
        }
    }

    #[test]
    fn divergence_witness_found() {
        let sys = pair_s_qubit_b();
        let w = divergence_witness(&sys, &seeded_family(&sys, 0..DEFAULT_SEEDS), 1.0, &horizontal_chi())
            .unwrap();
        assert!(-w.delta_d_th_s < -DIVERGENCE_THRESHOLD);
        assert!(-w.delta_c_h_s >= w.delta_d_th_s);
        assert!(w.report.all_pass());
    }

    #[test]
    fn amplitude_bisection() {
        let th = DensityMatrix::diagonal(&[0.5, 0.3, 0.2]).unwrap();
        let mut chi = CMat::zeros(3, 3);
        chi[(1, 2)] = c(1.0);
        chi[(2, 1)] = c(1.0);
        assert_abs_diff_eq!(max_coherence_amplitude(&th, &chi).unwrap(), 0.06f64.sqrt(), epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn random_operations_conserve(seed in 0u64..10_000) {
            let sys = BipartiteSystem::new(&HermitianObservable::diagonal(&[0.0, 1.0, 1.0]), &qubit()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho_s = random_density_matrix(3, &mut rng);
            let rho_b = sys.els_b().thermal_state(0.7);
            let u = sample_energy_conserving_unitary(&sys, seed);
            let rep = conservation_report(&sys, &u, &rho_s, &rho_b, 0.7).unwrap();
            prop_assert!(rep.all_pass(), "{:?}", rep.checks);
            prop_assert!((rep.bd_entropy_final - rep.bd_entropy_initial).abs() < 1e-9);
            let corr = rep.fin.correlated();
            prop_assert!(corr.c_v >= -1e-9 && corr.c_h + corr.d_th >= -1e-9);
        }
    }
}
