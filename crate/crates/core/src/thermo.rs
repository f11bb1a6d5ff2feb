//! Entropy production, its split into coherence and population terms, heat
//! flow with apparent temperatures, complementarity checks and the Otto cycle.
//!
//! For a trajectory ρ_t with ρ̇ = Lρ:
//!
//! * `Π = −Tr ρ̇[ln ρ − ln ρ^th]`, `Φ = β_B Ė_S`, `dS/dt = Π + Φ`
//! * `Ċ_v = Tr ρ̇[ln ρ − ln ρ_BD]`, `Ċ_h = Tr ρ̇[ln ρ_BD − ln ρ_D]`,
//!   `Ḋ_th = Tr ρ̇[ln ρ_D − ln ρ^th]`, so that `Π = −Ċ_v − Ċ_h − Ḋ_th`.

use std::fmt;

use crate::error::{Error, Result};
use crate::lindblad::{
    evolve, settle_state, unvec, vec_of, BathSpectrum, JumpOperatorSet, LindbladGenerator,
};
use crate::qcore::{
    c, eigh, entropy_of_spectrum, max_abs, trace, von_neumann_entropy, CMat, DensityMatrix,
    HermitianObservable, CLIP_FLOOR,
};
use crate::spectrum::{
    build_level_structure, coherence_measures, population_distance, EnergyLevelStructure,
};

/// Slack on the sign conditions (Π ≥ 0 and friends).
pub const SIGN_TOL: f64 = 1e-8;
/// Relative tolerance of rate vs centered-difference agreement.
pub const FD_REL_TOL: f64 = 1e-4;
/// Target `h·‖L‖` for the centered differences.
pub const FD_STEP: f64 = 1e-3;
/// Residual allowed in the least-squares fit of β_0.
pub const BETA_FIT_TOL: f64 = 1e-9;
/// Threshold for an entry of the complementarity report to count as active.
pub const ACTIVE_TOL: f64 = 1e-10;
/// Expectations below this make the apparent temperature undefined.
pub const EXPECTATION_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Flags(u8);

impl Flags {
    pub const PI_DIVERGENT: Flags = Flags(1);
    pub const T_UNDEFINED: Flags = Flags(2);
    pub const NOT_APPLICABLE: Flags = Flags(4);

    pub fn empty() -> Self {
        Flags(0)
    }

    pub fn insert(&mut self, other: Flags) {
        self.0 |= other.0;
    }

    pub fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn tokens(self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.contains(Flags::PI_DIVERGENT) {
            v.push("pi_divergent");
        }
        if self.contains(Flags::T_UNDEFINED) {
            v.push("temperature_undefined");
        }
        if self.contains(Flags::NOT_APPLICABLE) {
            v.push("complementarity_na");
        }
        v
    }
}

impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens().join(";"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermoSnapshot {
    pub t: f64,
    pub s: f64,
    pub c_v: f64,
    pub c_h: f64,
    pub d_th: f64,
    pub e_s: f64,
    pub f_d: f64,
    pub pi_rate: f64,
    pub phi_rate: f64,
    pub rate_c_v: f64,
    pub rate_c_h: f64,
    pub rate_d_th: f64,
    /// Ė_S = Tr ρ̇ H_S.
    pub energy_rate: f64,
    pub flags: Flags,
}

impl ThermoSnapshot {
    /// |Π + Ċ_v + Ċ_h + Ḋ_th| relative to max(1, |Π|).
    pub fn closure_residual(&self) -> f64 {
        (self.pi_rate + self.rate_c_v + self.rate_c_h + self.rate_d_th).abs()
            / self.pi_rate.abs().max(1.0)
    }

    pub fn is_divergent(&self) -> bool {
        self.flags.contains(Flags::PI_DIVERGENT)
    }
}

/// Values of the state functionals at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Functionals {
    pub s: f64,
    pub c_v: f64,
    pub c_h: f64,
    pub d_th: f64,
    pub e_s: f64,
    pub f_d: f64,
}

pub fn state_functionals(
    rho: &DensityMatrix,
    els: &EnergyLevelStructure,
    beta_b: f64,
) -> Result<Functionals> {
    let s = von_neumann_entropy(rho);
    let (c_v, c_h) = coherence_measures(rho, els)?;
    let p = els.populations(rho.matrix());
    let d_th = population_distance(&p, &els.log_thermal_weights(beta_b));
    let e_s = els.energy(rho.matrix());
    let f_d = if beta_b == 0.0 {
        f64::NAN
    } else {
        e_s - entropy_of_spectrum(&p) / beta_b
    };
    Ok(Functionals {
        s,
        c_v,
        c_h,
        d_th,
        e_s,
        f_d,
    })
}

// Tr ρ̇ ln X over the support of X; −∞ when ρ̇ flows into ker X.
fn trace_log_spectral(vals: &[f64], weights: &[f64], scale: f64) -> f64 {
    let mut acc = 0.0;
    let mut kernel = 0.0;
    for (&l, &w) in vals.iter().zip(weights) {
        if l > CLIP_FLOOR {
            acc += w * l.ln();
        } else {
            kernel += w;
        }
    }
    if kernel > 1e-12 * scale {
        f64::NEG_INFINITY
    } else {
        acc
    }
}

fn trace_log(x: &CMat, rdot: &CMat, scale: f64) -> f64 {
    let (vals, vecs) = eigh(x);
    let w: Vec<f64> = (0..vals.len())
        .map(|k| {
            let v = vecs.column(k);
            (v.adjoint() * rdot * v)[(0, 0)].re
        })
        .collect();
    trace_log_spectral(&vals, &w, scale)
}

/// Rates and state functionals at a single state.
pub fn instantaneous_rates(
    gen: &LindbladGenerator,
    rho: &DensityMatrix,
    beta_b: f64,
) -> Result<ThermoSnapshot> {
    let els = gen.els();
    if rho.dim() != els.dim() {
        return Err(Error::Shape("state does not match generator".into()));
    }
    let f = state_functionals(rho, els, beta_b)?;
    let rdot = gen.apply(rho.matrix());
    let scale = max_abs(&rdot).max(1.0);
    let m = rho.matrix();
    let bd = els.block_cut_matrix(m);
    let dg = els.diagonal_cut_matrix(m);

    let pdot = els.populations(&rdot);
    let p = els.populations(m);
    let log_q = els.log_thermal_weights(beta_b);
    let tl_th: f64 = pdot.iter().zip(&log_q).map(|(a, b)| a * b).sum();
    let tl_d = trace_log_spectral(&p, &pdot, scale);
    let tl_rho = trace_log(m, &rdot, scale);
    let tl_bd = if bd == dg { tl_d } else { trace_log(&bd, &rdot, scale) };

    let rate_c_v = if *m == bd { 0.0 } else { tl_rho - tl_bd };
    let rate_c_h = if bd == dg { 0.0 } else { tl_bd - tl_d };
    let rate_d_th = tl_d - tl_th;
    let pi_rate = -tl_rho + tl_th;
    let energy_rate: f64 = pdot.iter().zip(els.basis_energies()).map(|(a, e)| a * e).sum();

    let mut flags = Flags::empty();
    if [tl_rho, tl_bd, tl_d].iter().any(|x| !x.is_finite()) {
        flags.insert(Flags::PI_DIVERGENT);
    }
    if apparent_temperatures(gen, rho)
        .iter()
        .any(|(_, t)| t.is_none())
    {
        flags.insert(Flags::T_UNDEFINED);
    }

    Ok(ThermoSnapshot {
        t: 0.0,
        s: f.s,
        c_v: f.c_v,
        c_h: f.c_h,
        d_th: f.d_th,
        e_s: f.e_s,
        f_d: f.f_d,
        pi_rate,
        phi_rate: beta_b * energy_rate,
        rate_c_v,
        rate_c_h,
        rate_d_th,
        energy_rate,
        flags,
    })
}

/// One rate compared against a centered difference of its functional.
#[derive(Debug, Clone, PartialEq)]
pub struct FdCheck {
    pub t: f64,
    pub identity: &'static str,
    pub analytic: f64,
    pub numeric: f64,
    pub tolerance: f64,
}

impl FdCheck {
    pub fn passed(&self) -> bool {
        (self.analytic - self.numeric).abs() <= self.tolerance
    }

    pub fn relative_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(f64::MIN_POSITIVE)
    }
}

/// Centered differences of S, C_v, C_h, D_th at ρ(t) against the rates.
pub fn finite_difference_checks(
    gen: &LindbladGenerator,
    rho_t: &DensityMatrix,
    t: f64,
    snap: &ThermoSnapshot,
    beta_b: f64,
) -> Result<Vec<FdCheck>> {
    let mut h = FD_STEP / gen.norm().max(f64::MIN_POSITIVE);
    if t > 0.0 {
        h = h.min(FD_STEP * t);
    }
    let d = gen.dim();
    let v = vec_of(rho_t.matrix());
    let plus = settle_state(&unvec(&(gen.propagator(h) * &v), d), rho_t.labels())?;
    let minus = settle_state(&unvec(&(gen.propagator(-h) * &v), d), rho_t.labels())?;
    let fp = state_functionals(&plus, gen.els(), beta_b)?;
    let fm = state_functionals(&minus, gen.els(), beta_b)?;
    let abs_tol = 1e-13 / h + 1e-10;
    let diff = |a: f64, b: f64| (a - b) / (2.0 * h);
    let ds = snap.pi_rate + snap.phi_rate;
    Ok(vec![
        ("dS/dt", ds, diff(fp.s, fm.s)),
        ("dC_v/dt", snap.rate_c_v, diff(fp.c_v, fm.c_v)),
        ("dC_h/dt", snap.rate_c_h, diff(fp.c_h, fm.c_h)),
        ("dD_th/dt", snap.rate_d_th, diff(fp.d_th, fm.d_th)),
    ]
    .into_iter()
    .map(|(identity, analytic, numeric)| FdCheck {
        t,
        identity,
        analytic,
        numeric,
        tolerance: FD_REL_TOL * analytic.abs() + abs_tol,
    })
    .collect())
}

#[derive(Debug, Clone)]
pub struct ThermoSeries {
    pub snapshots: Vec<ThermoSnapshot>,
    pub states: Vec<DensityMatrix>,
    pub els: EnergyLevelStructure,
    pub beta_b: f64,
    pub provenance: String,
    pub fd_checks: Vec<FdCheck>,
}

impl ThermoSeries {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }
}

/// Evolves ρ0, records a snapshot per time and cross-checks every interior
/// rate against centered differences.
pub fn decompose_series(
    gen: &LindbladGenerator,
    rho0: &DensityMatrix,
    times: &[f64],
    beta_b: f64,
) -> Result<ThermoSeries> {
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Precondition("times must be strictly increasing".into()));
        }
    }
    let states = evolve(gen, rho0, times)?;
    let mut snapshots = Vec::with_capacity(times.len());
    for (&t, st) in times.iter().zip(&states) {
        let mut s = instantaneous_rates(gen, st, beta_b)?;
        s.t = t;
        snapshots.push(s);
    }
    let mut fd_checks = Vec::new();
    for k in 1..times.len().saturating_sub(1) {
        if snapshots[k].is_divergent() {
            continue;
        }
        for chk in finite_difference_checks(gen, &states[k], times[k], &snapshots[k], beta_b)? {
            if !chk.passed() {
                return Err(Error::IdentityViolation {
                    identity: chk.identity.to_string(),
                    t: chk.t,
                    analytic: chk.analytic,
                    numeric: chk.numeric,
                });
            }
            fd_checks.push(chk);
        }
    }
    Ok(ThermoSeries {
        snapshots,
        states,
        els: gen.els().clone(),
        beta_b,
        provenance: String::new(),
        fd_checks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatComponent {
    pub omega: f64,
    /// Apparent temperature; `None` when undefined.
    pub temperature: Option<f64>,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatFlow {
    pub direct: f64,
    pub spectral: f64,
    pub per_omega: Vec<HeatComponent>,
}

pub const HEAT_IDENTITY_TOL: f64 = 1e-8;

fn expect(rho: &CMat, op: &CMat) -> f64 {
    trace(&(rho * op)).re
}

/// (ω, T(ω)) for every positive frequency of every channel.
pub fn apparent_temperatures(gen: &LindbladGenerator, rho: &DensityMatrix) -> Vec<(f64, Option<f64>)> {
    let mut out = Vec::new();
    for ch in gen.channels() {
        for (w, a) in ch.jumps.positive() {
            let ad = a.adjoint();
            let up = expect(rho.matrix(), &(a * &ad));
            let down = expect(rho.matrix(), &(&ad * a));
            let t = (up > EXPECTATION_FLOOR && down > EXPECTATION_FLOOR)
                .then(|| w / (up / down).ln());
            out.push((w, t));
        }
    }
    out
}

/// Ė_S both as Tr(Lρ H_S) and as a sum over Bohr frequencies.
pub fn heat_flow(gen: &LindbladGenerator, rho: &DensityMatrix) -> Result<HeatFlow> {
    let d = gen.dim();
    let lrho = unvec(&(gen.superoperator() * vec_of(rho.matrix())), d);
    let h = gen.els().hamiltonian();
    let direct = trace(&(lrho * h.matrix())).re;
    let beta = gen.beta_b();
    let mut per_omega = Vec::new();
    let mut spectral = 0.0;
    for ch in gen.channels() {
        for ((&w, a), &(g, _)) in ch.jumps.frequencies.iter().zip(&ch.jumps.operators).zip(ch.rates())
        {
            if w <= 0.0 {
                continue;
            }
            let ad = a.adjoint();
            let up = expect(rho.matrix(), &(a * &ad));
            let down = expect(rho.matrix(), &(&ad * a));
            let (temperature, contribution) = if up > EXPECTATION_FLOOR && down > EXPECTATION_FLOOR
            {
                let t = w / (up / down).ln();
                (Some(t), w * g * up * ((-w * beta).exp() - (-w / t).exp()))
            } else {
                (None, w * g * (up * (-w * beta).exp() - down))
            };
            spectral += contribution;
            per_omega.push(HeatComponent {
                omega: w,
                temperature,
                contribution,
            });
        }
    }
    if !((direct - spectral).abs() <= HEAT_IDENTITY_TOL * direct.abs().max(1.0)) {
        return Err(Error::IdentityViolation {
            identity: "heat flow direct vs spectral".into(),
            t: f64::NAN,
            analytic: direct,
            numeric: spectral,
        });
    }
    Ok(HeatFlow {
        direct,
        spectral,
        per_omega,
    })
}

/// c± per positive frequency for ρ = ρ^th(β_0) + χ.
pub fn coherence_contributions(
    jumps: &JumpOperatorSet,
    rho_th0: &DensityMatrix,
    chi: &CMat,
) -> Vec<(f64, f64, f64)> {
    jumps
        .positive()
        .map(|(w, a)| {
            let ad = a.adjoint();
            let aad = a * &ad;
            let ada = &ad * a;
            let cp = expect(chi, &aad) / expect(rho_th0.matrix(), &aad);
            let cm = expect(chi, &ada) / expect(rho_th0.matrix(), &ada);
            (w, cp, cm)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Inactive,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub status: CheckStatus,
    /// lhs − rhs of the inequality (or residual of the identity).
    pub margin: f64,
}

impl Check {
    fn ineq(lhs: f64, rhs: f64) -> Self {
        let margin = lhs - rhs;
        Check {
            status: if margin >= -SIGN_TOL { CheckStatus::Pass } else { CheckStatus::Fail },
            margin,
        }
    }

    fn identity(lhs: f64, rhs: f64) -> Self {
        let margin = lhs - rhs;
        Check {
            status: if margin.abs() <= SIGN_TOL { CheckStatus::Pass } else { CheckStatus::Fail },
            margin,
        }
    }

    fn with(status: CheckStatus) -> Self {
        Check { status, margin: 0.0 }
    }

    pub fn failed(&self) -> bool {
        self.status == CheckStatus::Fail
    }

    pub fn active(&self) -> bool {
        matches!(self.status, CheckStatus::Pass | CheckStatus::Fail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplementarityEntry {
    pub t: f64,
    pub delta_e: f64,
    pub delta_c_h: f64,
    pub delta_d_th: f64,
    /// −ΔC_h − ΔD_th ≥ 0.
    pub total: Check,
    /// −ΔD_th = (β_0−β_B)ΔE_S − S(ρ_t|D | ρ_0|D).
    pub population_identity: Check,
    /// −ΔC_h ≥ −(β_0−β_B)ΔE_S when the right side is positive.
    pub consumption_bound: Check,
    /// (β_0−β_B)ΔE_S ≥ ΔC_h when ΔC_h > 0.
    pub generation_cost: Check,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplementarityReport {
    pub beta_0: Option<f64>,
    pub entries: Vec<ComplementarityEntry>,
    /// −Ċ_h + (β_0−β_B)Ė_S ≥ 0 at the first snapshot.
    pub initial_rate: Check,
}

impl ComplementarityReport {
    pub fn all_pass(&self) -> bool {
        !self.initial_rate.failed()
            && self.entries.iter().all(|e| {
                !(e.total.failed()
                    || e.population_identity.failed()
                    || e.consumption_bound.failed()
                    || e.generation_cost.failed())
            })
    }

    pub fn applicable(&self) -> bool {
        self.beta_0.is_some()
    }
}

/// Least-squares β for ln p_k = −β e_k − ln Z; `None` if the fit is poor.
pub fn fit_beta(p: &[f64], e: &[f64]) -> Option<f64> {
    if p.iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    let n = p.len() as f64;
    let lp: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    let me = e.iter().sum::<f64>() / n;
    let ml = lp.iter().sum::<f64>() / n;
    let see: f64 = e.iter().map(|x| (x - me).powi(2)).sum();
    if see == 0.0 {
        return None;
    }
    let sel: f64 = e.iter().zip(&lp).map(|(x, y)| (x - me) * (y - ml)).sum();
    let slope = sel / see;
    let resid = e
        .iter()
        .zip(&lp)
        .map(|(x, y)| (y - ml - slope * (x - me)).abs())
        .fold(0.0, f64::max);
    (resid <= BETA_FIT_TOL).then_some(-slope)
}

pub fn complementarity_report(series: &ThermoSeries) -> ComplementarityReport {
    let els = &series.els;
    let bb = series.beta_b;
    let first = &series.snapshots[0];
    let p0 = els.populations(series.states[0].matrix());
    let beta_0 = fit_beta(&p0, &els.basis_energies());
    let log_q0 = beta_0.map(|b| els.log_thermal_weights(b));

    let mut entries = Vec::new();
    for (snap, st) in series.snapshots.iter().zip(&series.states).skip(1) {
        let de = snap.e_s - first.e_s;
        let dch = snap.c_h - first.c_h;
        let dd = snap.d_th - first.d_th;
        let total = Check::ineq(-dch - dd, 0.0);
        let (pop, cons, gen) = match (beta_0, &log_q0) {
            (Some(b0), Some(lq)) => {
                let x = (b0 - bb) * de;
                let rel = population_distance(&els.populations(st.matrix()), lq);
                let pop = Check::identity(-dd, x - rel);
                let cons = if x < -ACTIVE_TOL {
                    Check::ineq(-dch, -x)
                } else {
                    Check::with(CheckStatus::Inactive)
                };
                let gen = if dch > ACTIVE_TOL {
                    Check::ineq(x, dch)
                } else {
                    Check::with(CheckStatus::Inactive)
                };
                (pop, cons, gen)
            }
            _ => (
                Check::with(CheckStatus::NotApplicable),
                Check::with(CheckStatus::NotApplicable),
                Check::with(CheckStatus::NotApplicable),
            ),
        };
        entries.push(ComplementarityEntry {
            t: snap.t,
            delta_e: de,
            delta_c_h: dch,
            delta_d_th: dd,
            total,
            population_identity: pop,
            consumption_bound: cons,
            generation_cost: gen,
        });
    }
    let initial_rate = match beta_0 {
        Some(b0) if first.rate_c_h.is_finite() && first.energy_rate.is_finite() => {
            Check::ineq(-first.rate_c_h + (b0 - bb) * first.energy_rate, 0.0)
        }
        _ => Check::with(CheckStatus::NotApplicable),
    };
    ComplementarityReport {
        beta_0,
        entries,
        initial_rate,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OttoMachine {
    pub q_c: f64,
    pub q_h: f64,
    pub w: f64,
    /// |W|/Q_h in work-extraction mode.
    pub eta: Option<f64>,
    pub sigma: f64,
    /// S at the end of the cycle minus S at its start.
    pub delta_s: f64,
    pub cycles: usize,
    pub mode_mismatch: bool,
    /// State at the start of the cold isochore on the limit cycle.
    pub limit_state: DensityMatrix,
}

impl OttoMachine {
    /// Σ + Q_c β_c + Q_h β_h.
    pub fn second_law_residual(&self, beta_c: f64, beta_h: f64) -> f64 {
        self.sigma + self.q_c * beta_c + self.q_h * beta_h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OttoBranch {
    EqualWork,
    EqualEfficiency,
    Both,
    Neither,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OttoCycleReport {
    pub incoherent: OttoMachine,
    pub coherent: OttoMachine,
    pub beta_c: f64,
    pub beta_h: f64,
    pub branch: OttoBranch,
    /// (lhs, rhs) of every applicable relation.
    pub relations: Vec<(&'static str, f64, f64)>,
}

impl OttoCycleReport {
    pub fn relations_hold(&self, tol: f64) -> bool {
        self.relations.iter().all(|(_, l, r)| (l - r).abs() <= tol)
    }
}

const OTTO_MAX_CYCLES: usize = 200;
const OTTO_TOL: f64 = 1e-8;

fn scale_factor(h_cold: &HermitianObservable, h_hot: &HermitianObservable) -> Result<f64> {
    let a = h_cold.matrix();
    let b = h_hot.matrix();
    let num = a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum::<f64>();
    let den = a.iter().map(|x| x.norm_sqr()).sum::<f64>();
    let lambda = num / den;
    let scale = max_abs(b).max(1.0);
    if !(lambda > 0.0) || max_abs(&(b - a * c(lambda))) > 1e-12 * scale {
        return Err(Error::Precondition("hot Hamiltonian must be λ·H_cold with λ > 0".into()));
    }
    Ok(lambda)
}

fn run_machine(
    h_cold: &HermitianObservable,
    h_hot: &HermitianObservable,
    bath_c: &BathSpectrum,
    bath_h: &BathSpectrum,
    couplings: &[HermitianObservable],
    stroke_time: f64,
    rho_init: &DensityMatrix,
) -> Result<OttoMachine> {
    let els_c = build_level_structure(h_cold, 0.0)?;
    let els_h = build_level_structure(h_hot, 0.0)?;
    let gen_c = LindbladGenerator::from_couplings(couplings, bath_c, &els_c)?;
    let gen_h = LindbladGenerator::from_couplings(couplings, bath_h, &els_h)?;
    let pc = gen_c.propagator(stroke_time);
    let ph = gen_h.propagator(stroke_time);
    let d = rho_init.dim();
    let labels = rho_init.labels();
    let mut rho0 = rho_init.clone();
    for cycle in 1..=OTTO_MAX_CYCLES {
        let rho1 = settle_state(&unvec(&(&pc * vec_of(rho0.matrix())), d), labels)?;
        let rho2 = settle_state(&unvec(&(&ph * vec_of(rho1.matrix())), d), labels)?;
        if max_abs(&(rho2.matrix() - rho0.matrix())) < OTTO_TOL {
            let rc = max_abs(&gen_c.apply(rho1.matrix()));
            let rh = max_abs(&gen_h.apply(rho2.matrix()));
            if rc >= OTTO_TOL || rh >= OTTO_TOL {
                return Err(Error::NonConvergence(format!(
                    "isochores not relaxed (residuals {rc:e}, {rh:e})"
                )));
            }
            let q_c = els_c.energy(rho1.matrix()) - els_c.energy(rho0.matrix());
            let q_h = els_h.energy(rho2.matrix()) - els_h.energy(rho1.matrix());
            let (s0, s1, s2) = (
                von_neumann_entropy(&rho0),
                von_neumann_entropy(&rho1),
                von_neumann_entropy(&rho2),
            );
            let sigma = (s1 - s0 - bath_c.beta_b * q_c) + (s2 - s1 - bath_h.beta_b * q_h);
            let w = -q_c - q_h;
            let extracting = q_h > 0.0 && w < 0.0;
            return Ok(OttoMachine {
                q_c,
                q_h,
                w,
                eta: extracting.then(|| w.abs() / q_h),
                sigma,
                delta_s: s2 - s0,
                cycles: cycle,
                mode_mismatch: !extracting,
                limit_state: rho0,
            });
        }
        rho0 = rho2;
    }
    Err(Error::NonConvergence(format!(
        "no limit cycle within {OTTO_MAX_CYCLES} cycles"
    )))
}

/// Runs the incoherent and coherent machines to their limit cycles.
///
/// Each machine couples through the listed channels, one bath copy per
/// channel. Adiabatic strokes rescale H_cold ↔ H_hot and leave the state
/// unchanged.
#[allow(clippy::too_many_arguments)]
pub fn otto_cycle(
    h_cold: &HermitianObservable,
    h_hot: &HermitianObservable,
    bath_c: &BathSpectrum,
    bath_h: &BathSpectrum,
    coupling_coherent: &[HermitianObservable],
    coupling_incoherent: &[HermitianObservable],
    stroke_time: f64,
    rho_init: &DensityMatrix,
) -> Result<OttoCycleReport> {
    scale_factor(h_cold, h_hot)?;
    let inc = run_machine(h_cold, h_hot, bath_c, bath_h, coupling_incoherent, stroke_time, rho_init)?;
    let coh = run_machine(h_cold, h_hot, bath_c, bath_h, coupling_coherent, stroke_time, rho_init)?;
    let dq_h = coh.q_h - inc.q_h;
    let equal_w = (coh.w - inc.w).abs() < 1e-9;
    let equal_eta = match (inc.eta, coh.eta) {
        (Some(a), Some(b)) => (a - b).abs() < 1e-9,
        _ => false,
    };
    let mut relations = Vec::new();
    if equal_w {
        if let (Some(eta), Some(eta_s)) = (inc.eta, coh.eta) {
            relations.push((
                "eta* - eta = dQ_h W/(Q_h Q_h*)",
                eta_s - eta,
                dq_h * inc.w / (inc.q_h * coh.q_h),
            ));
        }
    }
    if equal_eta {
        relations.push((
            "|W*| - |W| = (1 + Q_c/Q_h) dQ_h",
            coh.w.abs() - inc.w.abs(),
            (1.0 + inc.q_c / inc.q_h) * dq_h,
        ));
    }
    let branch = match (equal_w, equal_eta) {
        (true, true) => OttoBranch::Both,
        (true, false) => OttoBranch::EqualWork,
        (false, true) => OttoBranch::EqualEfficiency,
        (false, false) => OttoBranch::Neither,
    };
    Ok(OttoCycleReport {
        incoherent: inc,
        coherent: coh,
        beta_c: bath_c.beta_b,
        beta_h: bath_h.beta_b,
        branch,
        relations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{build_generator, eigenoperators};
    use crate::qcore::{kron, random_density_matrix, random_hermitian};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sx() -> CMat {
        CMat::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])
    }

    fn qubit_gen(beta: f64, gamma: f64) -> LindbladGenerator {
        let els = build_level_structure(&HermitianObservable::diagonal(&[0.0, 1.0]), 0.0).unwrap();
        let a = HermitianObservable::new(sx()).unwrap();
        build_generator(&eigenoperators(&a, &els).unwrap(), &BathSpectrum::flat(beta, gamma), &els)
            .unwrap()
    }

    fn pair_gen(beta: f64, gamma: f64) -> LindbladGenerator {
        let els =
            build_level_structure(&HermitianObservable::diagonal(&[0.0, 1.0, 1.0, 2.0]), 0.0).unwrap();
        let id = CMat::identity(2, 2);
        let a = HermitianObservable::new(kron(&sx(), &id) + kron(&id, &sx())).unwrap();
        build_generator(&eigenoperators(&a, &els).unwrap(), &BathSpectrum::flat(beta, gamma), &els)
            .unwrap()
    }

    #[test]
    fn thermal_state_has_zero_rates() {
        let gen = pair_gen(1.0, 0.1);
        let th = gen.els().thermal_state(1.0);
        let s = instantaneous_rates(&gen, &th, 1.0).unwrap();
        for r in [s.pi_rate, s.phi_rate, s.rate_c_v, s.rate_c_h, s.rate_d_th] {
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn nondegenerate_contributions_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let e = [0.0, 0.6, 1.5];
        let els = build_level_structure(&HermitianObservable::diagonal(&e), 0.0).unwrap();
        let a = random_hermitian(3, &mut rng);
        let gen = build_generator(&eigenoperators(&a, &els).unwrap(), &BathSpectrum::flat(0.8, 0.2), &els)
            .unwrap();
        for _ in 0..20 {
            let rho = random_density_matrix(3, &mut rng);
            let s = instantaneous_rates(&gen, &rho, 0.8).unwrap();
            assert_eq!(s.rate_c_h, 0.0);
            assert!(-s.rate_c_v >= -1e-10);
            assert!(-s.rate_d_th >= -1e-10);
        }
    }

    #[test]
    fn collective_generation_has_negative_contribution() {
        let gen = pair_gen(1.0, 0.1);
        let rho0 = gen.els().thermal_state(3.0);
        let s0 = instantaneous_rates(&gen, &rho0, 1.0).unwrap();
        assert_eq!(s0.rate_c_h, 0.0);
        // just after t = 0 horizontal coherences grow
        let t = 0.005 / gen.norm();
        let r = crate::lindblad::short_time_state(&gen, &rho0, t).unwrap();
        let later = &evolve(&gen, &rho0, &[t]).unwrap()[0];
        let fd = (state_functionals(later, gen.els(), 1.0).unwrap().c_h
            - state_functionals(&rho0, gen.els(), 1.0).unwrap().c_h)
            / t;
        let s = instantaneous_rates(&gen, &r, 1.0).unwrap();
        assert!(-s.rate_c_h < 0.0);
        assert!(fd > 0.0);
    }

    #[test]
    fn series_cross_checks_and_quadrature() {
        let (beta, gamma) = (1.0, 0.2);
        let gen = qubit_gen(beta, gamma);
        let rho0 = gen.els().thermal_state(0.2);
        let n = 2001;
        let t_end = 30.0;
        let times: Vec<f64> = (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect();
        let series = decompose_series(&gen, &rho0, &times, beta).unwrap();
        assert!(!series.fd_checks.is_empty());
        let pis: Vec<f64> = series.snapshots.iter().map(|s| s.pi_rate).collect();
        assert!(pis.iter().all(|&p| p >= -1e-12));
        // Simpson quadrature of Π
        let h = t_end / (n - 1) as f64;
        let mut integral = pis[0] + pis[n - 1];
        for (k, p) in pis.iter().enumerate().take(n - 1).skip(1) {
            integral += if k % 2 == 1 { 4.0 * p } else { 2.0 * p };
        }
        integral *= h / 3.0;
        let (a, b) = (&series.snapshots[0], &series.snapshots[n - 1]);
        let expected = (b.s - a.s) - beta * (b.e_s - a.e_s);
        assert_abs_diff_eq!(integral, expected, epsilon = 1e-6);
    }

    #[test]
    fn constant_thermal_series() {
        let gen = pair_gen(0.5, 0.1);
        let th = gen.els().thermal_state(0.5);
        let series = decompose_series(&gen, &th, &[0.0, 1.0, 2.0, 5.0], 0.5).unwrap();
        for s in &series.snapshots {
            assert!(s.pi_rate.abs() < 1e-12 && s.rate_d_th.abs() < 1e-12);
        }
        let rep = complementarity_report(&series);
        assert!(rep.all_pass());
        assert_abs_diff_eq!(rep.beta_0.unwrap(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn heat_flow_examples() {
        let gen = pair_gen(1.0, 0.1);
        let th = gen.els().thermal_state(1.0);
        let hf = heat_flow(&gen, &th).unwrap();
        assert!(hf.direct.abs() < 1e-14 && hf.spectral.abs() < 1e-14);

        let rho = gen.els().thermal_state(1.7);
        let hf = heat_flow(&gen, &rho).unwrap();
        for comp in &hf.per_omega {
            assert_abs_diff_eq!(1.0 / comp.temperature.unwrap(), 1.7, epsilon = 1e-9);
        }

        // horizontal coherence between |01⟩ and |10⟩
        let b0 = 1.1;
        let th0 = gen.els().thermal_state(b0);
        let mut chi = CMat::zeros(4, 4);
        chi[(1, 2)] = c(0.1);
        chi[(2, 1)] = c(0.1);
        let rho = DensityMatrix::from_matrix(th0.matrix() + &chi).unwrap();
        let hf = heat_flow(&gen, &rho).unwrap();
        let cc = coherence_contributions(&gen.channels()[0].jumps, &th0, &chi);
        let (w, cp, cm) = cc[0];
        let expected = w * b0 + ((1.0 + cp) / (1.0 + cm)).ln();
        assert_abs_diff_eq!(w / hf.per_omega[0].temperature.unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn heat_flow_with_undefined_temperature() {
        let gen = qubit_gen(1.0, 0.1);
        let ground = DensityMatrix::diagonal(&[1.0, 0.0]).unwrap();
        let hf = heat_flow(&gen, &ground).unwrap();
        assert!(hf.per_omega[0].temperature.is_none());
        assert_abs_diff_eq!(hf.direct, 0.1 * (-1f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn beta_fit() {
        let els =
            build_level_structure(&HermitianObservable::diagonal(&[0.0, 1.0, 1.0, 2.0]), 0.0).unwrap();
        let p = els.populations(els.thermal_state(-0.7).matrix());
        assert_abs_diff_eq!(fit_beta(&p, &els.basis_energies()).unwrap(), -0.7, epsilon = 1e-12);
        assert!(fit_beta(&[0.4, 0.1, 0.3, 0.2], &els.basis_energies()).is_none());
    }

    fn otto_inputs() -> (HermitianObservable, HermitianObservable, Vec<HermitianObservable>, Vec<HermitianObservable>) {
        let h = HermitianObservable::diagonal(&[-1.0, 0.0, 0.0, 1.0]);
        let id = CMat::identity(2, 2);
        let a1 = HermitianObservable::new(kron(&sx(), &id)).unwrap();
        let a2 = HermitianObservable::new(kron(&id, &sx())).unwrap();
        let col = HermitianObservable::new(a1.matrix() + a2.matrix()).unwrap();
        (h.clone(), h.scaled(2.0), vec![col], vec![a1, a2])
    }

    #[test]
    fn otto_identical_machines() {
        let (hc, hh, col, _) = otto_inputs();
        let rho0 = thermal_state_of(&hc, 50.0);
        let rep = otto_cycle(
            &hc,
            &hh,
            &BathSpectrum::flat(0.5, 0.1),
            &BathSpectrum::flat(0.1, 0.1),
            &col,
            &col,
            400.0,
            &rho0,
        )
        .unwrap();
        assert_eq!(rep.branch, OttoBranch::Both);
        assert_eq!(rep.coherent, rep.incoherent);
        assert!(rep.relations_hold(1e-12));
    }

    fn thermal_state_of(h: &HermitianObservable, beta: f64) -> DensityMatrix {
        crate::qcore::thermal_state(h, beta)
    }

    #[test]
    fn otto_collective_beats_independent() {
        let (hc, hh, col, ind) = otto_inputs();
        let rho0 = thermal_state_of(&hc, 50.0);
        let (bc, bh) = (0.5, 0.1);
        let rep = otto_cycle(
            &hc,
            &hh,
            &BathSpectrum::flat(bc, 0.1),
            &BathSpectrum::flat(bh, 0.1),
            &col,
            &ind,
            400.0,
            &rho0,
        )
        .unwrap();
        for m in [&rep.incoherent, &rep.coherent] {
            assert!(m.second_law_residual(bc, bh).abs() < 1e-8);
        }
        assert_eq!(rep.branch, OttoBranch::EqualEfficiency);
        assert!(rep.relations_hold(1e-8));
        assert!(rep.coherent.w.abs() > rep.incoherent.w.abs());
        assert!(rep.coherent.sigma > rep.incoherent.sigma);
    }
}
