//! Experiment configuration files (TOML). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DecayFunction, Region, Site};
use crate::rates::{BoundaryRule, Family, GlauberIsing, IndependentFlip, OscillationMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Constants,
    GammaFlow,
    Restriction,
    RefinedRestriction,
    Correlation,
    Stationary,
    Entropy,
    Attractor,
    McMarginal,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Constants => "constants",
            ExperimentKind::GammaFlow => "gamma-flow",
            ExperimentKind::Restriction => "restriction",
            ExperimentKind::RefinedRestriction => "refined-restriction",
            ExperimentKind::Correlation => "correlation",
            ExperimentKind::Stationary => "stationary",
            ExperimentKind::Entropy => "entropy",
            ExperimentKind::Attractor => "attractor",
            ExperimentKind::McMarginal => "mc-marginal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Glauber,
    IndependentFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoKind {
    Exponential,
    PowerLaw,
}

fn default_q() -> u8 {
    2
}
fn default_one() -> f64 {
    1.0
}
fn default_l() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    pub family: FamilyKind,
    #[serde(default = "default_q")]
    pub q: u8,
    #[serde(default)]
    pub beta: f64,
    pub rho_kind: RhoKind,
    pub alpha: f64,
    #[serde(rename = "R_J", default)]
    pub r_j: u64,
    #[serde(rename = "L", default = "default_l")]
    pub l: f64,
    /// Flip rate of the independent-flip family.
    #[serde(default = "default_one")]
    pub rate: f64,
}

/// Boundary rule and initial configuration of the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case {
    pub boundary: BoundaryRule,
    pub initial: BoundaryRule,
}

fn default_lambda() -> Vec<Vec<i64>> {
    vec![vec![0]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub window_radius: u64,
    /// Sites of `Λ` as coordinate lists.
    #[serde(default = "default_lambda")]
    pub lambda: Vec<Vec<i64>>,
    #[serde(default)]
    pub h: Vec<f64>,
    #[serde(default)]
    pub k: Vec<f64>,
    /// Radius of the reporting region for Γ-flow checks.
    #[serde(default)]
    pub interior_radius: Option<u64>,
    #[serde(default)]
    pub f_site: Option<Vec<i64>>,
    #[serde(default)]
    pub g_site: Option<Vec<i64>>,
    #[serde(default = "default_cases")]
    pub cases: Vec<Case>,
    /// Slope of the growing schedule of the attractor experiment.
    #[serde(default)]
    pub c_speed: Option<f64>,
}

fn default_dim() -> usize {
    1
}

fn default_cases() -> Vec<Case> {
    vec![Case {
        boundary: BoundaryRule::AllPlus,
        initial: BoundaryRule::AllMinus,
    }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TimesSection {
    #[serde(default)]
    pub t: Vec<f64>,
    #[serde(default)]
    pub tau: Vec<f64>,
    /// Constant speed-ups for the entropy experiment.
    #[serde(default)]
    pub speeds: Vec<f64>,
}

fn default_tol() -> f64 {
    1e-10
}
fn default_replicas() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_mode")]
    pub oscillation: OscillationMode,
}

fn default_mode() -> OscillationMode {
    OscillationMode::AnalyticBound
}

impl Default for NumericsSection {
    fn default() -> Self {
        NumericsSection {
            tol: default_tol(),
            seed: 0,
            replicas: default_replicas(),
            threads: 0,
            oscillation: default_mode(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// File stem; defaults to the experiment name.
    #[serde(default)]
    pub name: Option<String>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            name: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub family: FamilySection,
    pub geometry: GeometrySection,
    #[serde(default)]
    pub times: TimesSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn site(dim: usize, coords: &[i64]) -> Result<Site> {
    match (dim, coords) {
        (1, [x]) => Ok(Site::d1(*x)),
        (2, [x, y]) => Ok(Site::d2(*x, *y)),
        _ => Err(Error::Config(format!(
            "site {coords:?} does not have {dim} coordinates"
        ))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if !(1..=2).contains(&g.dim) {
            return Err(Error::Config(format!("dim must be 1 or 2, got {}", g.dim)));
        }
        let f = &self.family;
        if f.q < 2 {
            return Err(Error::Config("q must be at least 2".into()));
        }
        if f.family == FamilyKind::Glauber && f.q != 2 {
            return Err(Error::Config("the Glauber family has q = 2".into()));
        }
        if !(f.alpha > 0.0) || !(f.l > 0.0) || !(f.rate > 0.0) || !f.beta.is_finite() {
            return Err(Error::Config("alpha, L and rate must be positive; beta finite".into()));
        }
        if !(self.numerics.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if g.cases.is_empty() {
            return Err(Error::Config("need at least one case".into()));
        }
        for t in self.times.t.iter().chain(&self.times.tau).chain(&g.h).chain(&g.k) {
            if !(*t >= 0.0) || !t.is_finite() {
                return Err(Error::Config(format!(
                    "times, h and k must be finite and nonnegative, got {t}"
                )));
            }
        }
        self.lambda()?;
        Ok(())
    }

    pub fn rho(&self) -> Result<DecayFunction<f64>> {
        match self.family.rho_kind {
            RhoKind::Exponential => DecayFunction::exponential(self.family.alpha),
            RhoKind::PowerLaw => DecayFunction::power_law(self.family.alpha),
        }
    }

    pub fn rate_family(&self) -> Result<Family<f64>> {
        let dim = self.geometry.dim;
        Ok(match self.family.family {
            FamilyKind::Glauber => Family::Glauber(GlauberIsing {
                beta: self.family.beta,
                rho_j: self.rho()?,
                r_j: self.family.r_j,
                dim,
            }),
            FamilyKind::IndependentFlip => Family::IndependentFlip(IndependentFlip {
                rate: self.family.rate,
                q: self.family.q,
                dim,
            }),
        })
    }

    pub fn window(&self) -> Result<Region> {
        Region::centered_box(self.geometry.dim, self.geometry.window_radius as i64)
    }

    pub fn lambda(&self) -> Result<Region> {
        let dim = self.geometry.dim;
        let sites = self
            .geometry
            .lambda
            .iter()
            .map(|c| site(dim, c))
            .collect::<Result<Vec<_>>>()?;
        let lam = Region::new(dim, sites)?;
        if lam.is_empty() {
            return Err(Error::Config("lambda must not be empty".into()));
        }
        Ok(lam)
    }

    pub fn named_site(&self, which: &str) -> Result<Site> {
        let coords = match which {
            "f" => &self.geometry.f_site,
            _ => &self.geometry.g_site,
        };
        let coords = coords
            .as_ref()
            .ok_or_else(|| Error::Config(format!("geometry.{which}_site is required")))?;
        site(self.geometry.dim, coords)
    }

    pub fn stem(&self) -> String {
        self.output
            .name
            .clone()
            .unwrap_or_else(|| self.experiment.name().to_string())
    }
}
