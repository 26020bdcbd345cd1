use std::path::{Path, PathBuf};

use rigid_core::fields::FamilySpec;
use rigid_core::grid::make_domain;
use rigid_core::critical_exponent;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    VerifyHomotopy,
    RigidityWeak,
    RigidityLp,
    CzDemo,
    BvCheck,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::VerifyHomotopy,
        Experiment::RigidityWeak,
        Experiment::RigidityLp,
        Experiment::CzDemo,
        Experiment::BvCheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::VerifyHomotopy => "verify-homotopy",
            Experiment::RigidityWeak => "rigidity-weak",
            Experiment::RigidityLp => "rigidity-lp",
            Experiment::CzDemo => "cz-demo",
            Experiment::BvCheck => "bv-check",
        }
    }

    pub fn parse(name: &str) -> LabResult<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == name)
            .ok_or_else(|| LabError::config("experiment", format!("unknown experiment `{name}`")))
    }
}

/// One resolution or a refinement list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Resolutions {
    One(usize),
    Many(Vec<usize>),
}

impl Resolutions {
    pub fn values(&self) -> Vec<usize> {
        match self {
            Resolutions::One(r) => vec![*r],
            Resolutions::Many(v) => v.clone(),
        }
    }
}

/// Which rotation objective the cube fits use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CubeFit {
    Weak,
    L2,
}

fn default_n() -> usize {
    3
}
fn default_res() -> Resolutions {
    Resolutions::One(17)
}
fn default_radius() -> f64 {
    1.0
}
fn default_rho() -> Vec<f64> {
    vec![0.5, 0.25, 0.125]
}
fn default_factors() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0]
}
fn default_forms() -> usize {
    3
}
fn default_true() -> bool {
    true
}
fn default_fit() -> CubeFit {
    CubeFit::Weak
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default = "default_n")]
    pub n: usize,
    /// The last entry is the working resolution; `verify-homotopy` sweeps all.
    #[serde(default = "default_res")]
    pub res: Resolutions,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default)]
    pub family: Option<FamilySpec>,
    /// Exponents; empty means the experiment's default.
    #[serde(default)]
    pub p: Vec<f64>,
    /// CZ level; searched when absent.
    #[serde(default)]
    pub level: Option<f64>,
    #[serde(default = "default_rho")]
    pub rho: Vec<f64>,
    /// Multipliers of the family strength.
    #[serde(default = "default_factors")]
    pub factors: Vec<f64>,
    /// Random test forms for `verify-homotopy`.
    #[serde(default = "default_forms")]
    pub forms: usize,
    #[serde(default)]
    pub degree: Option<usize>,
    #[serde(default = "default_true")]
    pub log_factor: bool,
    #[serde(default = "default_fit")]
    pub fit: CubeFit,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> LabResult<Self> {
        serde_json::from_str(text).map_err(|e| LabError::config("config", e.to_string()))
    }

    pub fn experiment(&self) -> LabResult<Experiment> {
        Experiment::parse(&self.experiment)
    }

    pub fn resolutions(&self) -> Vec<usize> {
        self.res.values()
    }

    /// The working resolution.
    pub fn working_res(&self) -> usize {
        *self.resolutions().last().expect("validated nonempty")
    }

    pub fn exponents(&self) -> Vec<f64> {
        if !self.p.is_empty() {
            return self.p.clone();
        }
        match self.experiment() {
            Ok(Experiment::RigidityLp) => vec![2.0, critical_exponent(self.n)],
            _ => vec![critical_exponent(self.n)],
        }
    }

    /// Checks every parameter the chosen experiment reads, before any
    /// computation starts.
    pub fn validate(&self) -> LabResult<Experiment> {
        let exp = self.experiment()?;
        let res = self.resolutions();
        if res.is_empty() {
            return Err(LabError::config("res", "at least one resolution is required"));
        }
        for &r in &res {
            if r % 2 == 0 || r < 5 {
                return Err(LabError::config("res", format!("{r} must be odd and at least 5")));
            }
        }
        if exp == Experiment::VerifyHomotopy {
            if res.windows(2).any(|w| w[1] <= w[0]) {
                return Err(LabError::config("res", "the refinement list must increase"));
            }
        } else if res.len() != 1 {
            return Err(LabError::config("res", "only verify-homotopy takes a list"));
        }
        for &r in &res {
            make_domain(self.n, r, self.radius)?;
        }
        if !self.p.iter().all(|p| p.is_finite()) {
            return Err(LabError::config("p", "exponents must be finite"));
        }
        let critical = critical_exponent(self.n);
        match exp {
            Experiment::VerifyHomotopy => {
                if self.forms == 0 {
                    return Err(LabError::config("forms", "need at least one test form"));
                }
                if let Some(k) = self.degree {
                    if k == 0 || k >= self.n {
                        return Err(LabError::config("degree", format!("{k} outside 1..n−1")));
                    }
                }
            }
            Experiment::RigidityWeak | Experiment::RigidityLp | Experiment::CzDemo | Experiment::BvCheck => {
                let family = self
                    .family
                    .as_ref()
                    .ok_or_else(|| LabError::config("family", "this experiment needs a field family"))?;
                family.validate(self.n)?;
            }
        }
        match exp {
            Experiment::RigidityWeak | Experiment::RigidityLp => {
                if self.factors.is_empty() || self.factors.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
                    return Err(LabError::config("factors", "need positive finite multipliers"));
                }
                if exp == Experiment::RigidityLp {
                    if self.n < 3 {
                        return Err(LabError::config("n", "the L^p estimate needs n ≥ 3"));
                    }
                    for &p in &self.exponents() {
                        if !(p >= critical - 1e-12 && p <= 2.0) {
                            return Err(LabError::config("p", format!("{p} outside [{critical:.6}, 2]")));
                        }
                    }
                    let f = &self.factors;
                    let monotone = f.windows(2).all(|w| w[0] < w[1]) || f.windows(2).all(|w| w[0] > w[1]);
                    if f.len() < 4 || !monotone {
                        return Err(LabError::config("factors", "the sweep needs ≥ 4 strictly monotone values"));
                    }
                }
            }
            Experiment::CzDemo => {
                for &p in &self.exponents() {
                    if !(p >= 1.0) {
                        return Err(LabError::config("p", format!("{p} is below 1")));
                    }
                }
                if let Some(l) = self.level {
                    if !(l > 1.0 && l.is_finite()) {
                        return Err(LabError::config("level", format!("Λ = {l} must exceed 1")));
                    }
                }
            }
            Experiment::BvCheck => {
                let h = 2.0 * self.radius / (self.working_res() - 1) as f64;
                if self.rho.len() < 3 {
                    return Err(LabError::config("rho", "need at least 3 cube sides"));
                }
                if self.rho.windows(2).any(|w| !(w[1] < w[0])) {
                    return Err(LabError::config("rho", "cube sides must decrease"));
                }
                if let Some(r) = self.rho.iter().find(|&&r| !(r >= 2.0 * h * (1.0 - 1e-12))) {
                    return Err(LabError::config("rho", format!("{r} is below 2h = {}", 2.0 * h)));
                }
            }
            Experiment::VerifyHomotopy => {}
        }
        Ok(exp)
    }
}
