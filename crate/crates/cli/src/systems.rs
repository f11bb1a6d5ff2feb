//! Model systems shared by the scenarios and the verification suite.

use cohentropy::lindblad::{BathSpectrum, LindbladGenerator};
use cohentropy::qcore::{c, kron, CMat, HermitianObservable};
use cohentropy::spectrum::{build_level_structure, EnergyLevelStructure};
use cohentropy::thermalops::BipartiteSystem;
use cohentropy::Result;

pub fn sigma_x() -> CMat {
    CMat::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])
}

/// σ_x⊗1 + 1⊗σ_x.
pub fn pair_coupling() -> HermitianObservable {
    let id = CMat::identity(2, 2);
    HermitianObservable::new(kron(&sigma_x(), &id) + kron(&id, &sigma_x())).expect("Hermitian")
}

/// Two qubits with splittings ω and ω + δ, clustered at `cluster`.
pub fn qubit_pair(omega: f64, mismatch: f64, cluster: f64) -> Result<EnergyLevelStructure> {
    let h = HermitianObservable::diagonal(&[0.0, omega, omega + mismatch, 2.0 * omega + mismatch]);
    build_level_structure(&h, cluster)
}

pub fn collective_pair(omega: f64, beta_b: f64, gamma: f64) -> Result<LindbladGenerator> {
    let els = qubit_pair(omega, 0.0, 0.0)?;
    LindbladGenerator::from_couplings(&[pair_coupling()], &BathSpectrum::flat(beta_b, gamma), &els)
}

/// |01⟩⟨10| + h.c. on a 4-level space.
pub fn horizontal_pair_coherence() -> CMat {
    let mut chi = CMat::zeros(4, 4);
    chi[(1, 2)] = c(1.0);
    chi[(2, 1)] = c(1.0);
    chi
}

/// The bipartite systems exercised by the thermal-operation checks.
pub fn bipartite_family(omega: f64) -> Result<Vec<(&'static str, BipartiteSystem)>> {
    let d = HermitianObservable::diagonal;
    Ok(vec![
        ("qubit-qubit", BipartiteSystem::new(&d(&[0.0, omega]), &d(&[0.0, omega]))?),
        (
            "qubit-qutrit",
            BipartiteSystem::new(&d(&[0.0, omega]), &d(&[0.0, omega, 2.0 * omega]))?,
        ),
        (
            "degenerate-qutrit-qubit",
            BipartiteSystem::new(&d(&[0.0, omega, omega]), &d(&[0.0, omega]))?,
        ),
    ])
}

/// S = two resonant qubits, B = one qubit at the same frequency.
pub fn pair_with_qubit(omega: f64) -> Result<BipartiteSystem> {
    let d = HermitianObservable::diagonal;
    BipartiteSystem::new(&d(&[0.0, omega, omega, 2.0 * omega]), &d(&[0.0, omega]))
}
