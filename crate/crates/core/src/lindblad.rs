//! Secular Lindblad dynamics for a system weakly coupled to a stationary bath.
//!
//! The generator is
//! `Lρ = Σ_ω Γ(ω)[A(ω)ρA†(ω) − A†(ω)A(ω)ρ] + h.c.` with
//! `Γ(ω) = G(ω)/2 + i·lamb(ω)` and `G(−ω) = G(ω)e^{−ωβ_B}`.
//! Superoperators use column-stacking: `vec(AXB) = (Bᵀ ⊗ A) vec(X)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::qcore::{
    c, eigh, hermiticity_error, kron, max_abs, trace, CMat, DensityMatrix, HermitianObservable,
    C64,
};
use crate::spectrum::EnergyLevelStructure;

/// Operators with every element below this are dropped.
pub const ZERO_OPERATOR_TOL: f64 = 1e-13;
/// Kernel threshold relative to the largest singular value.
pub const KERNEL_TOL: f64 = 1e-10;
/// Allowed drift of trajectory states before they count as invalid.
pub const DRIFT_TOL: f64 = 1e-8;
/// Largest `t·‖L‖` accepted by the first-order expansion.
pub const SHORT_TIME_LIMIT: f64 = 0.01;

pub type RateFn = Arc<dyn Fn(f64) -> Option<f64> + Send + Sync>;

#[derive(Clone)]
pub enum RateModel {
    /// G(ω) = γ for ω ≥ 0.
    Flat { gamma: f64 },
    /// G(ω) = γ (ω/ω_c) e^{−ω/ω_c} for ω ≥ 0.
    Ohmic { gamma: f64, cutoff: f64 },
    /// Half-rate g(ω) = G(ω)/2 for ω ≥ 0; `None` marks an undefined point.
    Custom(RateFn),
}

impl fmt::Debug for RateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateModel::Flat { gamma } => write!(f, "Flat {{ gamma: {gamma} }}"),
            RateModel::Ohmic { gamma, cutoff } => {
                write!(f, "Ohmic {{ gamma: {gamma}, cutoff: {cutoff} }}")
            }
            RateModel::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Clone)]
pub struct BathSpectrum {
    pub beta_b: f64,
    pub rate: RateModel,
    pub lamb_shift: Option<RateFn>,
}

impl fmt::Debug for BathSpectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BathSpectrum")
            .field("beta_b", &self.beta_b)
            .field("rate", &self.rate)
            .field("lamb_shift", &self.lamb_shift.as_ref().map(|_| ".."))
            .finish()
    }
}

impl BathSpectrum {
    pub fn flat(beta_b: f64, gamma: f64) -> Self {
        Self {
            beta_b,
            rate: RateModel::Flat { gamma },
            lamb_shift: None,
        }
    }

    pub fn with_rate(beta_b: f64, rate: RateModel) -> Self {
        Self {
            beta_b,
            rate,
            lamb_shift: None,
        }
    }

    pub fn with_lamb_shift(mut self, f: RateFn) -> Self {
        self.lamb_shift = Some(f);
        self
    }

    /// g(ω) = G(ω)/2 for ω ≥ 0.
    pub fn g_half(&self, omega: f64) -> Option<f64> {
        let w = omega.abs();
        let g = match &self.rate {
            RateModel::Flat { gamma } => Some(0.5 * gamma),
            RateModel::Ohmic { gamma, cutoff } => {
                Some(0.5 * gamma * (w / cutoff) * (-w / cutoff).exp())
            }
            RateModel::Custom(f) => f(w),
        }?;
        (g.is_finite() && g >= 0.0).then_some(g)
    }

    /// G(ω), with negative frequencies fixed by the KMS relation.
    pub fn rate_at(&self, omega: f64) -> Result<f64> {
        let g = 2.0 * self.g_half(omega).ok_or(Error::MissingRate { omega })?;
        if omega < 0.0 {
            Ok(g * (omega * self.beta_b).exp())
        } else {
            Ok(g)
        }
    }

    pub fn lamb_at(&self, omega: f64) -> f64 {
        self.lamb_shift
            .as_ref()
            .and_then(|f| f(omega))
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct JumpOperatorSet {
    pub frequencies: Vec<f64>,
    pub operators: Vec<CMat>,
}

impl JumpOperatorSet {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.operators.first().map(|a| a.nrows()).unwrap_or(0)
    }

    pub fn operator_at(&self, omega: f64) -> Option<&CMat> {
        self.frequencies
            .iter()
            .position(|&w| (w - omega).abs() <= 1e-12 * (1.0 + omega.abs()))
            .map(|k| &self.operators[k])
    }

    /// Iterates over the strictly positive frequencies.
    pub fn positive(&self) -> impl Iterator<Item = (f64, &CMat)> {
        self.frequencies
            .iter()
            .zip(&self.operators)
            .filter(|(&w, _)| w > 0.0)
            .map(|(&w, a)| (w, a))
    }
}

/// Decomposes `a_s` into Bohr-frequency components `π_n A_S π_n'`.
///
/// Level-energy differences closer than the cluster width are merged and
/// represented by their mean.
pub fn eigenoperators(
    a_s: &HermitianObservable,
    els: &EnergyLevelStructure,
) -> Result<JumpOperatorSet> {
    if a_s.dim() != els.dim() {
        return Err(Error::Shape(format!(
            "coupling of dimension {} for level structure of dimension {}",
            a_s.dim(),
            els.dim()
        )));
    }
    let e = els.energies();
    let nl = e.len();
    let scale = e.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let tol = els.delta() + 1e-10 * 2.0 * scale;

    // nonnegative differences e_n' − e_n, clustered
    let mut diffs: Vec<(f64, usize, usize)> = Vec::new();
    for n in 0..nl {
        for np in 0..nl {
            let w = e[np] - e[n];
            if w >= 0.0 || n == np {
                diffs.push((w.max(0.0), n, np));
            }
        }
    }
    diffs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<Vec<(f64, usize, usize)>> = Vec::new();
    for (pos, d) in diffs.iter().enumerate() {
        if pos == 0 || d.0 - diffs[pos - 1].0 > tol {
            groups.push(vec![*d]);
        } else {
            groups.last_mut().unwrap().push(*d);
        }
    }

    let p = els.projectors();
    let a = a_s.matrix();
    let mut freqs = Vec::new();
    let mut ops = Vec::new();
    for g in &groups {
        let mut distinct: Vec<f64> = g.iter().map(|x| x.0).collect();
        distinct.dedup();
        let w = distinct.iter().sum::<f64>() / distinct.len() as f64;
        let mut op = CMat::zeros(a.nrows(), a.ncols());
        for &(_, n, np) in g {
            op += &p[n] * a * &p[np];
        }
        if max_abs(&op) >= ZERO_OPERATOR_TOL {
            if w > 0.0 {
                freqs.push(-w);
                ops.push(op.adjoint());
            }
            freqs.push(w);
            ops.push(op);
        }
    }
    let mut order: Vec<usize> = (0..freqs.len()).collect();
    order.sort_by(|&i, &j| freqs[i].total_cmp(&freqs[j]));
    Ok(JumpOperatorSet {
        frequencies: order.iter().map(|&k| freqs[k]).collect(),
        operators: order.iter().map(|&k| ops[k].clone()).collect(),
    })
}

#[derive(Debug, Clone)]
pub struct Channel {
    pub jumps: JumpOperatorSet,
    pub bath: BathSpectrum,
    // (G(ω), Im Γ(ω)) per frequency
    rates: Vec<(f64, f64)>,
}

impl Channel {
    pub fn rates(&self) -> &[(f64, f64)] {
        &self.rates
    }
}

#[derive(Debug, Clone)]
pub struct LindbladGenerator {
    superop: CMat,
    els: EnergyLevelStructure,
    channels: Vec<Channel>,
    norm1: f64,
}

pub fn vec_of(m: &CMat) -> DVector<C64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DVector<C64>, d: usize) -> CMat {
    CMat::from_column_slice(d, d, v.as_slice())
}

fn induced_one_norm(m: &CMat) -> f64 {
    m.column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Assembles the superoperator of one dissipation channel.
pub fn build_generator(
    jumps: &JumpOperatorSet,
    bath: &BathSpectrum,
    els: &EnergyLevelStructure,
) -> Result<LindbladGenerator> {
    let d = els.dim();
    if !jumps.is_empty() && jumps.dim() != d {
        return Err(Error::Shape("jump operators do not match level structure".into()));
    }
    let mut rates = Vec::with_capacity(jumps.len());
    for &w in &jumps.frequencies {
        rates.push((bath.rate_at(w)?, bath.lamb_at(w)));
    }
    let id = CMat::identity(d, d);
    let mut s = CMat::zeros(d * d, d * d);
    for (a, &(g, lamb)) in jumps.operators.iter().zip(&rates) {
        let gamma = C64::new(0.5 * g, lamb);
        let ada = a.adjoint() * a;
        s += kron(&a.map(|z| z.conj()), a) * c(g);
        s -= kron(&id, &ada) * gamma;
        s -= kron(&ada.transpose(), &id) * gamma.conj();
    }
    let norm1 = induced_one_norm(&s);
    Ok(LindbladGenerator {
        superop: s,
        els: els.clone(),
        channels: vec![Channel {
            jumps: jumps.clone(),
            bath: bath.clone(),
            rates,
        }],
        norm1,
    })
}

impl LindbladGenerator {
    /// Generator of independent channels acting together, `L₁ + L₂`.
    pub fn combine(&self, other: &LindbladGenerator) -> Result<LindbladGenerator> {
        if self.dim() != other.dim() {
            return Err(Error::Shape("generators act on different spaces".into()));
        }
        if self.beta_b() != other.beta_b() {
            return Err(Error::Precondition(
                "combined channels must share the bath temperature".into(),
            ));
        }
        let superop = &self.superop + &other.superop;
        let norm1 = induced_one_norm(&superop);
        let mut channels = self.channels.clone();
        channels.extend(other.channels.iter().cloned());
        Ok(LindbladGenerator {
            superop,
            els: self.els.clone(),
            channels,
            norm1,
        })
    }

    /// Sum over a list of couplings, each with its own copy of the bath.
    pub fn from_couplings(
        couplings: &[HermitianObservable],
        bath: &BathSpectrum,
        els: &EnergyLevelStructure,
    ) -> Result<LindbladGenerator> {
        let mut it = couplings.iter();
        let first = it
            .next()
            .ok_or_else(|| Error::Precondition("at least one coupling is required".into()))?;
        let mut gen = build_generator(&eigenoperators(first, els)?, bath, els)?;
        for a in it {
            gen = gen.combine(&build_generator(&eigenoperators(a, els)?, bath, els)?)?;
        }
        Ok(gen)
    }

    pub fn dim(&self) -> usize {
        self.els.dim()
    }

    pub fn superoperator(&self) -> &CMat {
        &self.superop
    }

    pub fn els(&self) -> &EnergyLevelStructure {
        &self.els
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn bath(&self) -> &BathSpectrum {
        &self.channels[0].bath
    }

    pub fn beta_b(&self) -> f64 {
        self.channels[0].bath.beta_b
    }

    /// Induced 1-norm of the superoperator.
    pub fn norm(&self) -> f64 {
        self.norm1
    }

    /// Lρ from the operator form (no superoperator product).
    pub fn apply(&self, rho: &CMat) -> CMat {
        let d = rho.nrows();
        let mut out = CMat::zeros(d, d);
        for ch in &self.channels {
            for (a, &(g, lamb)) in ch.jumps.operators.iter().zip(&ch.rates) {
                let gamma = C64::new(0.5 * g, lamb);
                let ad = a.adjoint();
                let ada = &ad * a;
                out += a * rho * &ad * c(g);
                out -= &ada * rho * gamma;
                out -= rho * &ada * gamma.conj();
            }
        }
        out
    }

    /// exp(tL) as a superoperator.
    pub fn propagator(&self, t: f64) -> CMat {
        (&self.superop * c(t)).exp()
    }

    pub fn horizon(&self) -> Option<f64> {
        (self.els.delta() > 0.0).then(|| 0.1 / self.els.delta())
    }

    fn check_horizon(&self, t: f64) -> Result<()> {
        if let Some(h) = self.horizon() {
            if t > h {
                return Err(Error::Horizon { t, horizon: h });
            }
        }
        Ok(())
    }
}

/// Re-symmetrizes a propagated matrix and checks it is still a state.
pub(crate) fn settle_state(m: &CMat, labels: &[String]) -> Result<DensityMatrix> {
    let herr = hermiticity_error(m);
    let h = crate::qcore::hermitian_part(m);
    let tr = trace(&h).re;
    if herr > DRIFT_TOL || (tr - 1.0).abs() > DRIFT_TOL {
        return Err(Error::NumericalFailure(format!(
            "state drift: hermiticity {herr:e}, trace {tr}"
        )));
    }
    let (vals, vecs) = eigh(&h);
    if vals[0] < -DRIFT_TOL {
        return Err(Error::NumericalFailure(format!(
            "state drift: eigenvalue {:e}",
            vals[0]
        )));
    }
    let m = if vals[0] < -crate::qcore::PSD_TOL {
        let clipped = crate::qcore::spectral_map(&vals, &vecs, |l| l.max(0.0));
        let t = trace(&clipped).re;
        crate::qcore::hermitian_part(&(clipped / c(t)))
    } else {
        h / c(tr)
    };
    DensityMatrix::new(m, labels.to_vec())
}

/// ρ(t) = exp(tL) ρ0 for each requested time.
pub fn evolve(
    gen: &LindbladGenerator,
    rho0: &DensityMatrix,
    times: &[f64],
) -> Result<Vec<DensityMatrix>> {
    if rho0.dim() != gen.dim() {
        return Err(Error::Shape("initial state does not match generator".into()));
    }
    for w in times.windows(2) {
        if !(w[1] >= w[0]) {
            return Err(Error::Precondition("times must be sorted".into()));
        }
    }
    if let Some(&t) = times.first() {
        if !(t >= 0.0) {
            return Err(Error::Precondition("times must be nonnegative".into()));
        }
    }
    if let Some(&t) = times.last() {
        gen.check_horizon(t)?;
    }
    let d = gen.dim();
    let v0 = vec_of(rho0.matrix());
    times
        .iter()
        .map(|&t| {
            if t == 0.0 {
                return Ok(rho0.clone());
            }
            let v = gen.propagator(t) * &v0;
            settle_state(&unvec(&v, d), rho0.labels())
        })
        .collect()
}

/// ρ0 + tLρ0, valid for `t·‖L‖ ≤ 0.01`.
pub fn short_time_state(
    gen: &LindbladGenerator,
    rho0: &DensityMatrix,
    t: f64,
) -> Result<DensityMatrix> {
    let x = t * gen.norm();
    if !(x <= SHORT_TIME_LIMIT) || t < 0.0 {
        return Err(Error::ExpansionInvalid(x));
    }
    let m = rho0.matrix() + gen.apply(rho0.matrix()) * c(t);
    DensityMatrix::from_hermitian_part(&m, rho0.labels().to_vec())
}

/// Stationary manifold of a generator.
#[derive(Debug, Clone)]
pub struct StationaryManifold {
    /// Spectral projector onto ker L, acting on vectorized matrices.
    pub projector: CMat,
    /// Valid states spanning the manifold.
    pub states: Vec<DensityMatrix>,
    pub kernel_dim: usize,
}

impl StationaryManifold {
    /// Long-time limit of `exp(tL)ρ0`.
    pub fn asymptotic_state(&self, rho0: &DensityMatrix) -> Result<DensityMatrix> {
        let d = rho0.dim();
        if self.projector.nrows() != d * d {
            return Err(Error::Shape("state does not match generator".into()));
        }
        let v = &self.projector * vec_of(rho0.matrix());
        settle_state(&unvec(&v, d), rho0.labels())
    }
}

pub fn steady_states(gen: &LindbladGenerator) -> Result<StationaryManifold> {
    let d = gen.dim();
    let dd = d * d;
    let svd = gen.superop.clone().svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = KERNEL_TOL * smax.max(f64::MIN_POSITIVE);
    let ker: Vec<usize> = (0..dd)
        .filter(|&k| svd.singular_values[k] <= cut)
        .collect();
    let kd = ker.len();
    if kd == 0 {
        return Err(Error::DiagonalizationFailure("generator has no kernel".into()));
    }
    let mut right = CMat::zeros(dd, kd);
    let mut left = CMat::zeros(dd, kd);
    for (j, &k) in ker.iter().enumerate() {
        right.set_column(j, &vt.row(k).adjoint());
        left.set_column(j, &u.column(k));
    }
    let overlap = left.adjoint() * &right;
    let ov_svd = overlap.clone().svd(false, false);
    let smin = ov_svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if smin < 1e-8 {
        return Err(Error::DiagonalizationFailure(format!(
            "zero eigenvalue is defective (overlap singular value {smin:e})"
        )));
    }
    let inv = overlap
        .try_inverse()
        .ok_or_else(|| Error::DiagonalizationFailure("singular kernel overlap".into()))?;
    let projector = &right * inv * left.adjoint();

    // project a spanning family of states, keep an independent subset
    let mut candidates: Vec<CMat> = Vec::new();
    for i in 0..d {
        let mut m = CMat::zeros(d, d);
        m[(i, i)] = c(1.0);
        candidates.push(m);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            for phase in [c(1.0), C64::new(0.0, 1.0)] {
                let mut psi = DVector::<C64>::zeros(d);
                psi[i] = c(0.5f64.sqrt());
                psi[j] = phase * 0.5f64.sqrt();
                candidates.push(&psi * psi.adjoint());
            }
        }
    }
    let labels = crate::qcore::default_labels(d);
    let mut states = Vec::new();
    let mut ortho: Vec<DVector<C64>> = Vec::new();
    for cand in candidates {
        if states.len() == kd {
            break;
        }
        let v = &projector * vec_of(&cand);
        let mut r = v.clone();
        for q in &ortho {
            let coef = q.dotc(&r);
            r -= q * coef;
        }
        let n = r.norm();
        if n > 1e-6 * v.norm().max(1e-300) && n > 1e-9 {
            ortho.push(r / c(n));
            states.push(settle_state(&unvec(&v, d), &labels)?);
        }
    }
    Ok(StationaryManifold {
        projector,
        states,
        kernel_dim: kd,
    })
}
