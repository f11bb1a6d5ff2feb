use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cohentropy::lindblad::{BathSpectrum, LindbladGenerator};
use cohentropy::qcore::{random_density_matrix, random_hermitian, HermitianObservable};
use cohentropy::spectrum::build_level_structure;
use cohentropy::thermalops::{conservation_report, sample_energy_conserving_unitary, BipartiteSystem};
use cohentropy::thermo::{decompose_series, heat_flow};

/// Three levels with a degenerate pair, random coupling and initial state.
fn degenerate_system(seed: u64, beta_b: f64) -> (LindbladGenerator, cohentropy::qcore::DensityMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let els = build_level_structure(&HermitianObservable::diagonal(&[0.0, 1.0, 1.0]), 0.0).unwrap();
    let a = random_hermitian(3, &mut rng);
    let gen = LindbladGenerator::from_couplings(&[a], &BathSpectrum::flat(beta_b, 0.2), &els).unwrap();
    (gen, random_density_matrix(3, &mut rng))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decomposition_closes_and_signs_hold(seed in 0u64..10_000, beta_b in 0.2f64..3.0) {
        let (gen, rho0) = degenerate_system(seed, beta_b);
        let times = [0.0, 0.05, 0.3, 1.0, 4.0, 15.0];
        let series = decompose_series(&gen, &rho0, &times, beta_b).unwrap();
        for s in &series.snapshots {
            prop_assert!(s.closure_residual() <= 1e-8);
            prop_assert!(s.pi_rate >= -1e-8);
            prop_assert!(-s.rate_c_v >= -1e-8);
            prop_assert!(-s.rate_c_h - s.rate_d_th >= -1e-8);
        }
    }

    #[test]
    fn heat_flow_forms_agree(seed in 0u64..10_000) {
        let (gen, rho) = degenerate_system(seed, 1.0);
        let hf = heat_flow(&gen, &rho).unwrap();
        prop_assert!((hf.direct - hf.spectral).abs() <= 1e-8 * hf.direct.abs().max(1.0));
    }

    #[test]
    fn thermal_operations_satisfy_all_checks(seed in 0u64..10_000) {
        let d = HermitianObservable::diagonal;
        let sys = BipartiteSystem::new(&d(&[0.0, 1.0, 1.0]), &d(&[0.0, 1.0])).unwrap();
        let u = sample_energy_conserving_unitary(&sys, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho_s = random_density_matrix(3, &mut rng);
        let rho_b = sys.els_b().thermal_state(0.8);
        let rep = conservation_report(&sys, &u, &rho_s, &rho_b, 0.8).unwrap();
        prop_assert!(rep.all_pass());
    }
}
