//! TOML scenario configuration.
//!
//! ```toml
//! scenario = "heat-flow-reversal"
//! beta_0 = 1.1
//! beta_b = 1.0
//! gamma = 0.1
//! coherence_amplitude = 0.9
//!
//! [time_grid]
//! kind = "geometric"
//! t_min = 0.01
//! t_max = 200.0
//! points = 60
//! ```
//!
//! Unknown keys are rejected. Inverse temperatures are in units of 1/energy
//! and every energy is measured in units where ω is given by `omega`.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    CollectiveSpins,
    HeatFlowReversal,
    ThermalOperation,
    NearDegenerate,
    OttoCycle,
    Custom,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::CollectiveSpins => "collective-spins",
            Scenario::HeatFlowReversal => "heat-flow-reversal",
            Scenario::ThermalOperation => "thermal-operation",
            Scenario::NearDegenerate => "near-degenerate",
            Scenario::OttoCycle => "otto-cycle",
            Scenario::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    #[default]
    Geometric,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    #[serde(default)]
    pub kind: GridKind,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_t_min() -> f64 {
    0.01
}
fn default_t_max() -> f64 {
    200.0
}
fn default_points() -> usize {
    60
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            kind: GridKind::Geometric,
            t_min: default_t_min(),
            t_max: default_t_max(),
            points: default_points(),
        }
    }
}

impl TimeGrid {
    /// t = 0 followed by `points − 1` times reaching `t_max`.
    pub fn times(&self) -> Vec<f64> {
        let k = self.points - 1;
        let mut out = vec![0.0];
        match self.kind {
            GridKind::Geometric => {
                let r = (self.t_max / self.t_min).ln();
                for i in 0..k {
                    let f = if k == 1 { 1.0 } else { i as f64 / (k - 1) as f64 };
                    out.push(self.t_min * (r * f).exp());
                }
            }
            GridKind::Linear => {
                for i in 1..=k {
                    out.push(self.t_max * i as f64 / k as f64);
                }
            }
        }
        *out.last_mut().unwrap() = self.t_max;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Sweep {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        (0..self.points)
            .map(|i| self.start + (self.stop - self.start) * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub prefix: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_tol")]
    pub closure: f64,
    #[serde(default = "default_tol")]
    pub sign: f64,
}

fn default_tol() -> f64 {
    1e-8
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            closure: default_tol(),
            sign: default_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    #[serde(default = "default_omega")]
    pub omega: f64,
    pub n: Option<usize>,
    pub s: Option<f64>,
    pub beta_0: Option<f64>,
    pub beta_b: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    /// Fraction of the largest amplitude that keeps the state positive.
    pub coherence_amplitude: Option<f64>,
    pub seeds: Option<u64>,
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub beta_c: Option<f64>,
    pub beta_h: Option<f64>,
    pub stroke_time: Option<f64>,
    /// Custom scenario: diagonal Hamiltonian.
    pub energies: Option<Vec<f64>>,
    /// Custom scenario: real symmetric coupling observable, row by row.
    pub coupling: Option<Vec<Vec<f64>>>,
    pub initial_populations: Option<Vec<f64>>,
    pub time_grid: Option<TimeGrid>,
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_omega() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

fn positive(name: &str, v: Option<f64>) -> Result<(), ConfigError> {
    match v {
        Some(x) if !(x.is_finite() && x > 0.0) => err(format!("{name} must be positive, got {x}")),
        _ => Ok(()),
    }
}

fn finite(name: &str, v: Option<f64>) -> Result<(), ConfigError> {
    match v {
        Some(x) if !x.is_finite() => err(format!("{name} must be finite")),
        _ => Ok(()),
    }
}

pub const LINDBLAD_DIM_LIMIT: usize = 64;

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn two_s(&self) -> usize {
        self.s.map_or(1, |s| (2.0 * s).round() as usize)
    }

    /// The configured grid, or the scenario default.
    pub fn grid(&self) -> TimeGrid {
        if let Some(g) = &self.time_grid {
            return g.clone();
        }
        match self.scenario {
            Scenario::NearDegenerate => TimeGrid {
                t_max: 0.1 / self.delta.unwrap_or(1e-3 * self.omega),
                ..TimeGrid::default()
            },
            Scenario::OttoCycle => TimeGrid {
                kind: GridKind::Linear,
                t_max: self.stroke_time.unwrap_or(400.0 / self.omega),
                points: 41,
                ..TimeGrid::default()
            },
            _ => TimeGrid::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("omega", Some(self.omega))?;
        positive("gamma", self.gamma)?;
        positive("lambda", self.lambda)?;
        positive("stroke_time", self.stroke_time)?;
        for (k, v) in [
            ("beta_0", self.beta_0),
            ("beta_b", self.beta_b),
            ("beta_c", self.beta_c),
            ("beta_h", self.beta_h),
        ] {
            finite(k, v)?;
        }
        if let Some(d) = self.delta {
            if !(d.is_finite() && d >= 0.0) {
                return err(format!("delta must be >= 0, got {d}"));
            }
        }
        if let Some(a) = self.coherence_amplitude {
            if !(a > 0.0 && a <= 1.0) {
                return err(format!("coherence_amplitude must lie in (0, 1], got {a}"));
            }
        }
        if let Some(s) = self.s {
            let two = 2.0 * s;
            if !(s > 0.0) || (two - two.round()).abs() > 1e-12 {
                return err(format!("s must be a positive half-integer, got {s}"));
            }
        }
        if self.n == Some(0) {
            return err("n must be >= 1");
        }
        if self.seeds == Some(0) {
            return err("seeds must be >= 1");
        }
        let g = &self.grid();
        if g.points < 2 {
            return err("time_grid.points must be >= 2");
        }
        if !(g.t_max.is_finite() && g.t_max > 0.0) {
            return err("time_grid.t_max must be positive");
        }
        if g.kind == GridKind::Geometric && !(g.t_min > 0.0 && g.t_min < g.t_max) {
            return err("geometric time_grid needs 0 < t_min < t_max");
        }
        if let Some(sw) = &self.sweep {
            if sw.points == 0 || !sw.start.is_finite() || !sw.stop.is_finite() {
                return err("sweep needs finite bounds and points >= 1");
            }
        }
        for (k, v) in [("closure", self.tolerances.closure), ("sign", self.tolerances.sign)] {
            if !(v.is_finite() && v > 0.0) {
                return err(format!("tolerances.{k} must be positive"));
            }
        }
        match self.scenario {
            Scenario::CollectiveSpins => {
                let n = self.n.unwrap_or(2);
                let d = (self.two_s() + 1).checked_pow(n as u32).unwrap_or(usize::MAX);
                if d > LINDBLAD_DIM_LIMIT {
                    return err(format!("(2s+1)^n = {d} exceeds {LINDBLAD_DIM_LIMIT}"));
                }
            }
            Scenario::NearDegenerate => {
                let delta = self.delta.unwrap_or(1e-3 * self.omega);
                if delta == 0.0 {
                    return err("near-degenerate scenario needs delta > 0");
                }
                let horizon = 0.1 / delta;
                if g.t_max > horizon {
                    return err(format!("time_grid.t_max {} exceeds the validity horizon {horizon}", g.t_max));
                }
            }
            Scenario::Custom => {
                let e = match &self.energies {
                    Some(e) if !e.is_empty() => e,
                    _ => return err("custom scenario needs energies"),
                };
                let d = e.len();
                if d > 16 {
                    return err("custom scenario supports at most 16 levels");
                }
                if e.iter().any(|x| !x.is_finite()) {
                    return err("energies must be finite");
                }
                match &self.coupling {
                    Some(rows) if rows.len() == d && rows.iter().all(|r| r.len() == d) => {
                        for i in 0..d {
                            for j in 0..d {
                                if (rows[i][j] - rows[j][i]).abs() > 1e-12 {
                                    return err("coupling must be symmetric");
                                }
                            }
                        }
                    }
                    _ => return err(format!("custom scenario needs a {d}x{d} coupling")),
                }
                if let Some(p) = &self.initial_populations {
                    if p.len() != d || p.iter().any(|x| !(*x >= 0.0)) {
                        return err("initial_populations must be nonnegative with one entry per level");
                    }
                    if (p.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
                        return err("initial_populations must sum to 1");
                    }
                } else if self.beta_0.is_none() {
                    return err("custom scenario needs beta_0 or initial_populations");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let c = ScenarioConfig::from_toml("scenario = \"otto-cycle\"\nlambda = 2.0").unwrap();
        assert_eq!(c.scenario, Scenario::OttoCycle);
        assert!(ScenarioConfig::from_toml("scenario = \"otto-cycle\"\nlamda = 2.0").is_err());
        assert!(ScenarioConfig::from_toml("scenario = \"custom\"\ngamma = -1.0").is_err());
        assert!(ScenarioConfig::from_toml("scenario = \"collective-spins\"\nn = 7").is_err());
        assert!(ScenarioConfig::from_toml("scenario = \"near-degenerate\"\ndelta = 0.01").is_ok());
        let past = "scenario = \"near-degenerate\"\ndelta = 0.01\n[time_grid]\nt_max = 50.0";
        assert!(ScenarioConfig::from_toml(past).is_err());
    }

    #[test]
    fn grids() {
        let g = TimeGrid {
            kind: GridKind::Geometric,
            t_min: 0.1,
            t_max: 10.0,
            points: 4,
        };
        let t = g.times();
        assert_eq!(t.len(), 4);
        assert_eq!((t[0], t[1], t[3]), (0.0, 0.1, 10.0));
        assert!((t[2] - 1.0).abs() < 1e-12);
    }
}
