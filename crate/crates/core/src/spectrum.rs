//! Energy level structure of a (possibly near-) degenerate Hamiltonian and
//! the two dephasing cuts built from it.
//!
//! `ρ_BD = Σ_n π_n ρ π_n` removes coherences between distinct levels;
//! `ρ_D` removes every off-diagonal element in the level basis.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::qcore::{
    c, eigh, is_diagonal, log_sum_exp, relative_entropy, von_neumann_entropy, CMat,
    DensityMatrix, HermitianObservable, CLIP_FLOOR,
};

/// Tolerance between entropy and relative-entropy forms of the coherences.
pub const COHERENCE_FORM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub energy: f64,
    pub degeneracy: usize,
}

#[derive(Debug, Clone)]
pub struct EnergyLevelStructure {
    levels: Vec<Level>,
    // basis index -> (level, position within level)
    basis_map: Vec<(usize, usize)>,
    projectors: Vec<CMat>,
    delta: f64,
    // eigenvector columns; None when the input basis already diagonalizes H
    basis: Option<CMat>,
    raw_energies: Vec<f64>,
}

impl EnergyLevelStructure {
    pub fn dim(&self) -> usize {
        self.basis_map.len()
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn energies(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.energy).collect()
    }

    pub fn degeneracies(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.degeneracy).collect()
    }

    pub fn projectors(&self) -> &[CMat] {
        &self.projectors
    }

    pub fn basis_map(&self) -> &[(usize, usize)] {
        &self.basis_map
    }

    pub fn level_of(&self, k: usize) -> usize {
        self.basis_map[k].0
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// True when the cuts are taken in the supplied basis.
    pub fn is_natural_basis(&self) -> bool {
        self.basis.is_none()
    }

    /// Columns are the basis vectors that define the diagonal cut.
    pub fn eigenbasis(&self) -> CMat {
        match &self.basis {
            Some(v) => v.clone(),
            None => CMat::identity(self.dim(), self.dim()),
        }
    }

    /// Unclustered eigenvalue of each basis vector.
    pub fn raw_energies(&self) -> &[f64] {
        &self.raw_energies
    }

    /// Energy of the cluster containing each basis vector.
    pub fn basis_energies(&self) -> Vec<f64> {
        self.basis_map
            .iter()
            .map(|&(n, _)| self.levels[n].energy)
            .collect()
    }

    /// Σ_n e_n π_n.
    pub fn hamiltonian(&self) -> HermitianObservable {
        let d = self.dim();
        let mut h = CMat::zeros(d, d);
        for (lvl, p) in self.levels.iter().zip(&self.projectors) {
            h += p * c(lvl.energy);
        }
        HermitianObservable::new(crate::qcore::hermitian_part(&h))
            .expect("projector sum is Hermitian")
    }

    /// ln of the Gibbs weight of each basis vector.
    pub fn log_thermal_weights(&self, beta: f64) -> Vec<f64> {
        let lw: Vec<f64> = self.basis_energies().iter().map(|&e| -beta * e).collect();
        let lz = log_sum_exp(&lw);
        lw.iter().map(|x| x - lz).collect()
    }

    pub fn log_partition(&self, beta: f64) -> f64 {
        let lw: Vec<f64> = self.basis_energies().iter().map(|&e| -beta * e).collect();
        log_sum_exp(&lw)
    }

    /// Gibbs state Σ_n e^{−β e_n} π_n / Z built from the cluster energies.
    pub fn thermal_state(&self, beta: f64) -> DensityMatrix {
        let w: Vec<f64> = self
            .log_thermal_weights(beta)
            .into_iter()
            .map(f64::exp)
            .collect();
        self.from_populations(&w)
    }

    /// Diagonal state in the level basis with the given populations.
    pub fn from_populations(&self, p: &[f64]) -> DensityMatrix {
        let d = self.dim();
        let diag = CMat::from_diagonal(&DVector::from_iterator(d, p.iter().map(|&x| c(x))));
        let m = match &self.basis {
            None => diag,
            Some(v) => crate::qcore::hermitian_part(&(v * diag * v.adjoint())),
        };
        DensityMatrix::from_parts_unchecked(m, crate::qcore::default_labels(d))
    }

    /// ⟨k|ρ|k⟩ in the level basis.
    pub fn populations(&self, rho: &CMat) -> Vec<f64> {
        match &self.basis {
            None => rho.diagonal().iter().map(|z| z.re).collect(),
            Some(v) => {
                let r = v.adjoint() * rho * v;
                r.diagonal().iter().map(|z| z.re).collect()
            }
        }
    }

    /// Tr ρ H_eff.
    pub fn energy(&self, rho: &CMat) -> f64 {
        self.populations(rho)
            .iter()
            .zip(self.basis_energies())
            .map(|(p, e)| p * e)
            .sum()
    }

    pub(crate) fn block_cut_matrix(&self, rho: &CMat) -> CMat {
        match &self.basis {
            None => CMat::from_fn(rho.nrows(), rho.ncols(), |i, j| {
                if self.basis_map[i].0 == self.basis_map[j].0 {
                    rho[(i, j)]
                } else {
                    c(0.0)
                }
            }),
            Some(_) => {
                let mut out = CMat::zeros(rho.nrows(), rho.ncols());
                for p in &self.projectors {
                    out += p * rho * p;
                }
                crate::qcore::hermitian_part(&out)
            }
        }
    }

    pub(crate) fn diagonal_cut_matrix(&self, rho: &CMat) -> CMat {
        match &self.basis {
            None => CMat::from_diagonal(&rho.diagonal()),
            Some(v) => {
                let p = self.populations(rho);
                let diag = CMat::from_diagonal(&DVector::from_iterator(
                    p.len(),
                    p.iter().map(|&x| c(x)),
                ));
                crate::qcore::hermitian_part(&(v * diag * v.adjoint()))
            }
        }
    }
}

/// Sorts and greedily clusters the spectrum of `h`.
///
/// A new cluster starts when the gap to the previous eigenvalue exceeds
/// `delta + 1e-10·‖H‖`. A cluster whose total span exceeds that width is
/// rejected.
pub fn build_level_structure(h: &HermitianObservable, delta: f64) -> Result<EnergyLevelStructure> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::Precondition(format!("cluster width {delta} must be >= 0")));
    }
    let d = h.dim();
    let m = h.matrix();
    let (raw, basis) = if is_diagonal(m) {
        (m.diagonal().iter().map(|z| z.re).collect::<Vec<f64>>(), None)
    } else {
        let (vals, vecs) = eigh(m);
        // order eigenvectors by their dominant input-basis component
        let dominant: Vec<usize> = (0..d)
            .map(|k| {
                let col = vecs.column(k);
                (0..d)
                    .max_by(|&a, &b| col[a].norm().total_cmp(&col[b].norm()))
                    .unwrap()
            })
            .collect();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| dominant[a].cmp(&dominant[b]).then(vals[a].total_cmp(&vals[b])));
        let mut v = CMat::zeros(d, d);
        let mut e = Vec::with_capacity(d);
        for (col, &k) in order.iter().enumerate() {
            let z = vecs[(dominant[k], k)];
            let phase = if z.norm() > 0.0 { z.conj() / z.norm() } else { c(1.0) };
            v.set_column(col, &(vecs.column(k) * phase));
            e.push(vals[k]);
        }
        (e, Some(v))
    };
    cluster_levels(raw, basis, delta)
}

/// Joint structure of H_A ⊗ 1 + 1 ⊗ H_B in the product of the local bases.
pub fn product_structure(
    a: &EnergyLevelStructure,
    b: &EnergyLevelStructure,
) -> Result<EnergyLevelStructure> {
    let ea = a.basis_energies();
    let eb = b.basis_energies();
    let raw: Vec<f64> = ea.iter().flat_map(|x| eb.iter().map(move |y| x + y)).collect();
    let basis = match (&a.basis, &b.basis) {
        (None, None) => None,
        _ => Some(crate::qcore::kron(&a.eigenbasis(), &b.eigenbasis())),
    };
    cluster_levels(raw, basis, 0.0)
}

fn cluster_levels(
    raw: Vec<f64>,
    basis: Option<CMat>,
    delta: f64,
) -> Result<EnergyLevelStructure> {
    let d = raw.len();
    let scale = raw.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let tol = delta + 1e-10 * scale;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (pos, &k) in order.iter().enumerate() {
        if pos == 0 || raw[k] - raw[order[pos - 1]] > tol {
            clusters.push(vec![k]);
        } else {
            clusters.last_mut().unwrap().push(k);
        }
    }

    let mut levels = Vec::with_capacity(clusters.len());
    let mut basis_map = vec![(0, 0); d];
    for (n, cl) in clusters.iter_mut().enumerate() {
        let lo = cl.iter().map(|&k| raw[k]).fold(f64::INFINITY, f64::min);
        let hi = cl.iter().map(|&k| raw[k]).fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > tol {
            return Err(Error::AmbiguousClustering { span: hi - lo, delta });
        }
        cl.sort_unstable();
        for (i, &k) in cl.iter().enumerate() {
            basis_map[k] = (n, i);
        }
        let mean = cl.iter().map(|&k| raw[k]).sum::<f64>() / cl.len() as f64;
        levels.push(Level {
            energy: mean,
            degeneracy: cl.len(),
        });
    }

    let projectors = clusters
        .iter()
        .map(|cl| {
            let mut p = CMat::zeros(d, d);
            for &k in cl {
                match &basis {
                    None => p[(k, k)] = c(1.0),
                    Some(v) => {
                        let col = v.column(k);
                        p += col * col.adjoint();
                    }
                }
            }
            p
        })
        .collect();

    Ok(EnergyLevelStructure {
        levels,
        basis_map,
        projectors,
        delta,
        basis,
        raw_energies: raw,
    })
}

fn check_dim(rho: &DensityMatrix, els: &EnergyLevelStructure) -> Result<()> {
    if rho.dim() != els.dim() {
        return Err(Error::Shape(format!(
            "state of dimension {} against level structure of dimension {}",
            rho.dim(),
            els.dim()
        )));
    }
    Ok(())
}

pub fn dephase_block_diagonal(
    rho: &DensityMatrix,
    els: &EnergyLevelStructure,
) -> Result<DensityMatrix> {
    check_dim(rho, els)?;
    Ok(DensityMatrix::from_parts_unchecked(
        els.block_cut_matrix(rho.matrix()),
        rho.labels().to_vec(),
    ))
}

pub fn dephase_diagonal(rho: &DensityMatrix, els: &EnergyLevelStructure) -> Result<DensityMatrix> {
    check_dim(rho, els)?;
    Ok(DensityMatrix::from_parts_unchecked(
        els.diagonal_cut_matrix(rho.matrix()),
        rho.labels().to_vec(),
    ))
}

/// (C_v, C_h). Both entropy-difference and relative-entropy forms are
/// evaluated and must agree.
pub fn coherence_measures(rho: &DensityMatrix, els: &EnergyLevelStructure) -> Result<(f64, f64)> {
    let bd = dephase_block_diagonal(rho, els)?;
    let dg = dephase_diagonal(rho, els)?;
    let s = von_neumann_entropy(rho);
    let s_bd = von_neumann_entropy(&bd);
    let s_d = von_neumann_entropy(&dg);
    let cv = s_bd - s;
    let ch = s_d - s_bd;
    let cv_rel = relative_entropy(rho, &bd)?;
    let ch_rel = relative_entropy(&bd, &dg)?;
    for (name, a, b) in [("C_v", cv, cv_rel), ("C_h", ch, ch_rel)] {
        if !((a - b).abs() <= COHERENCE_FORM_TOL) {
            return Err(Error::IdentityViolation {
                identity: format!("{name} entropy form vs relative-entropy form"),
                t: f64::NAN,
                analytic: a,
                numeric: b,
            });
        }
    }
    Ok((cv, ch))
}

/// Kullback-Leibler divergence of populations from the Gibbs weights.
pub(crate) fn population_distance(p: &[f64], log_q: &[f64]) -> f64 {
    p.iter()
        .zip(log_q)
        .filter(|(&pk, _)| pk > CLIP_FLOOR)
        .map(|(&pk, &lq)| pk * (pk.ln() - lq))
        .sum()
}

/// D_th = S(ρ_D | ρ^th(β_B)).
pub fn distance_to_thermal(
    rho: &DensityMatrix,
    els: &EnergyLevelStructure,
    beta_b: f64,
) -> Result<f64> {
    check_dim(rho, els)?;
    let p = els.populations(rho.matrix());
    Ok(population_distance(&p, &els.log_thermal_weights(beta_b)))
}

/// F_D = E − S(ρ_D)/β_B; NaN when β_B = 0.
pub fn diagonal_free_energy(
    rho: &DensityMatrix,
    els: &EnergyLevelStructure,
    beta_b: f64,
) -> Result<f64> {
    check_dim(rho, els)?;
    if beta_b == 0.0 {
        return Ok(f64::NAN);
    }
    let p = els.populations(rho.matrix());
    let s_d = crate::qcore::entropy_of_spectrum(&p);
    Ok(els.energy(rho.matrix()) - s_d / beta_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{max_abs, random_density_matrix, C64};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag_h(e: &[f64]) -> HermitianObservable {
        HermitianObservable::diagonal(e)
    }

    #[test]
    fn clustering_examples() {
        let els = build_level_structure(&diag_h(&[0.0, 1.0, 1.0]), 0.0).unwrap();
        assert_eq!(els.degeneracies(), vec![1, 2]);
        assert_eq!(els.energies(), vec![0.0, 1.0]);

        let els = build_level_structure(&diag_h(&[0.0, 1.0, 1.001, 2.0]), 0.01).unwrap();
        assert_eq!(els.degeneracies(), vec![1, 2, 1]);
        assert_abs_diff_eq!(els.energies()[1], 1.0005, epsilon = 1e-15);

        let els = build_level_structure(&diag_h(&[0.0, 0.5, 1.3, 2.0]), 0.1).unwrap();
        assert!(els.degeneracies().iter().all(|&l| l == 1));
    }

    #[test]
    fn chained_cluster_is_ambiguous() {
        let err = build_level_structure(&diag_h(&[0.0, 0.8, 1.6]), 1.0).unwrap_err();
        assert!(matches!(err, Error::AmbiguousClustering { .. }));
    }

    #[test]
    fn projectors_resolve_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = crate::qcore::haar_unitary(4, &mut rng);
        let h0 = CMat::from_diagonal(&DVector::from_vec(vec![c(0.0), c(1.0), c(1.0), c(2.0)]));
        let h = HermitianObservable::new(crate::qcore::hermitian_part(&(&u * h0 * u.adjoint())))
            .unwrap();
        let els = build_level_structure(&h, 0.0).unwrap();
        assert!(!els.is_natural_basis());
        assert_eq!(els.degeneracies(), vec![1, 2, 1]);
        let mut sum = CMat::zeros(4, 4);
        for p in els.projectors() {
            assert!(max_abs(&(p * p - p)) < 1e-12);
            sum += p;
        }
        assert!(max_abs(&(sum - CMat::identity(4, 4))) < 1e-12);
        assert!(max_abs(&(els.hamiltonian().matrix() - h.matrix())) < 1e-12);
    }

    #[test]
    fn cut_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rho = random_density_matrix(4, &mut rng);
        let nd = build_level_structure(&diag_h(&[0.0, 1.0, 2.0, 3.0]), 0.0).unwrap();
        let bd = dephase_block_diagonal(&rho, &nd).unwrap();
        let dg = dephase_diagonal(&rho, &nd).unwrap();
        assert!(max_abs(&(bd.matrix() - dg.matrix())) == 0.0);

        let single = build_level_structure(&diag_h(&[1.0, 1.0]), 0.0).unwrap();
        let r2 = random_density_matrix(2, &mut rng);
        assert_eq!(dephase_block_diagonal(&r2, &single).unwrap().matrix(), r2.matrix());

        let els = build_level_structure(&diag_h(&[0.0, 1.0, 2.0, 2.0]), 0.0).unwrap();
        let bd = dephase_block_diagonal(&rho, &els).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let keep = i == j || (i >= 2 && j >= 2);
                let expected = if keep { rho.matrix()[(i, j)] } else { C64::new(0.0, 0.0) };
                assert_eq!(bd.matrix()[(i, j)], expected);
            }
        }

        let s = 0.5f64.sqrt();
        let plus = DensityMatrix::pure(&DVector::from_vec(vec![c(s), c(s)])).unwrap();
        let qubit = build_level_structure(&diag_h(&[0.0, 1.0]), 0.0).unwrap();
        let d = dephase_diagonal(&plus, &qubit).unwrap();
        assert!(max_abs(&(d.matrix() - CMat::identity(2, 2) * c(0.5))) < 1e-15);
    }

    #[test]
    fn coherence_examples() {
        let qubit = build_level_structure(&diag_h(&[0.0, 1.0]), 0.0).unwrap();
        let deg = build_level_structure(&diag_h(&[1.0, 1.0]), 0.0).unwrap();
        let diag = DensityMatrix::diagonal(&[0.3, 0.7]).unwrap();
        assert_eq!(coherence_measures(&diag, &qubit).unwrap(), (0.0, 0.0));
        let s = 0.5f64.sqrt();
        let plus = DensityMatrix::pure(&DVector::from_vec(vec![c(s), c(s)])).unwrap();
        let (cv, ch) = coherence_measures(&plus, &qubit).unwrap();
        assert_abs_diff_eq!(cv, 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ch, 0.0, epsilon = 1e-15);
        let (cv, ch) = coherence_measures(&plus, &deg).unwrap();
        assert_abs_diff_eq!(cv, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ch, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn thermal_distance_examples() {
        let els = build_level_structure(&diag_h(&[0.0, 1.0, 1.0]), 0.0).unwrap();
        let th = els.thermal_state(0.7);
        assert_abs_diff_eq!(distance_to_thermal(&th, &els, 0.7).unwrap(), 0.0, epsilon = 1e-15);

        // thermal populations at β0 plus a horizontal coherence
        let th0 = els.thermal_state(2.0);
        let mut m = th0.matrix().clone();
        m[(1, 2)] = c(0.05);
        m[(2, 1)] = c(0.05);
        let rho = DensityMatrix::from_matrix(m).unwrap();
        let expected = relative_entropy(&th0, &els.thermal_state(0.7)).unwrap();
        assert_abs_diff_eq!(distance_to_thermal(&rho, &els, 0.7).unwrap(), expected, epsilon = 1e-12);

        let qubit = build_level_structure(&diag_h(&[0.0, 1.0]), 0.0).unwrap();
        let ground = DensityMatrix::diagonal(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(distance_to_thermal(&ground, &qubit, 0.0).unwrap(), 2f64.ln(), epsilon = 1e-15);
    }

    fn arb_state(d: usize) -> impl Strategy<Value = DensityMatrix> {
        any::<u64>().prop_map(move |s| random_density_matrix(d, &mut ChaCha8Rng::seed_from_u64(s)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cuts_order_entropies(rho in arb_state(5)) {
            let els = build_level_structure(&diag_h(&[0.0, 1.0, 1.0, 2.0, 2.0]), 0.0).unwrap();
            let bd = dephase_block_diagonal(&rho, &els).unwrap();
            let dg = dephase_diagonal(&rho, &els).unwrap();
            let (s, sbd, sd) = (von_neumann_entropy(&rho), von_neumann_entropy(&bd), von_neumann_entropy(&dg));
            prop_assert!(sd >= sbd - 1e-10 && sbd >= s - 1e-10);
            prop_assert_eq!(dephase_block_diagonal(&bd, &els).unwrap().into_matrix(), bd.matrix().clone());
            prop_assert_eq!(dephase_diagonal(&dg, &els).unwrap().into_matrix(), dg.matrix().clone());
            prop_assert_eq!(dephase_diagonal(&bd, &els).unwrap().into_matrix(), dg.matrix().clone());
            prop_assert!((crate::qcore::trace(bd.matrix()).re - 1.0).abs() < 1e-12);
            prop_assert!(bd.eigenvalues()[0] > -1e-12);
            let (cv, ch) = coherence_measures(&rho, &els).unwrap();
            prop_assert!(cv >= -1e-10 && ch >= -1e-10);
        }

        #[test]
        fn free_energy_tracks_thermal_distance(rho in arb_state(4), beta in 0.1f64..3.0) {
            let els = build_level_structure(&diag_h(&[0.0, 0.5, 0.5, 1.5]), 0.0).unwrap();
            let dth = distance_to_thermal(&rho, &els, beta).unwrap();
            let fd = diagonal_free_energy(&rho, &els, beta).unwrap();
            prop_assert!((dth - (beta * fd + els.log_partition(beta))).abs() < 1e-12);
        }
    }
}
