//! Random perturbation directions, their scales, and the bandwidth schedule.

use crate::distributions::{std_normal_quantile, RandomStream};
use crate::error::{Error, Result};
use crate::schemes::{CoefficientSet, NodeSet};
use ndarray::Array2;
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_GAMMA: f64 = 1.5;
pub const DEFAULT_CH: f64 = 1.0;

/// Symmetric law of each active perturbation coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PerturbationLaw {
    /// `U(-xi, xi)`
    UniformSym { xi: f64 },
    /// `N(0, sigma^2)`
    Gaussian { sigma: f64 },
}

impl PerturbationLaw {
    pub fn variance(&self) -> f64 {
        match *self {
            PerturbationLaw::UniformSym { xi } => xi * xi / 3.0,
            PerturbationLaw::Gaussian { sigma } => sigma * sigma,
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    fn validate(&self) -> Result<()> {
        let s = match *self {
            PerturbationLaw::UniformSym { xi } => xi,
            PerturbationLaw::Gaussian { sigma } => sigma,
        };
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::param(format!("perturbation scale must be positive, got {s}")));
        }
        Ok(())
    }

    fn draw(&self, u: f64) -> f64 {
        match *self {
            PerturbationLaw::UniformSym { xi } => xi * (2.0 * u - 1.0),
            PerturbationLaw::Gaussian { sigma } => sigma * std_normal_quantile(u),
        }
    }
}

impl fmt::Display for PerturbationLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PerturbationLaw::UniformSym { xi } => write!(f, "uniform_sym(xi={xi})"),
            PerturbationLaw::Gaussian { sigma } => write!(f, "gaussian(sigma={sigma})"),
        }
    }
}

/// How the default scale of the perturbation law is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleRule {
    /// `xi = 1/(d * Gamma_{|u|+1})` for a symmetric uniform law.
    DimensionFreeUniform,
    /// `sigma = 1/sqrt(d)` for a Gaussian law.
    GaussianSqrtD,
}

impl FromStr for ScaleRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" | "dimension_free_uniform" => Ok(ScaleRule::DimensionFreeUniform),
            "gaussian" | "gaussian_sqrt_d" => Ok(ScaleRule::GaussianSqrtD),
            other => Err(Error::param(format!("unknown perturbation law `{other}`"))),
        }
    }
}

/// Bandwidth schedule `h = c_h * N^(-gamma/2)` plus optional scale overrides.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleOptions {
    pub rule: ScaleRule,
    pub c_h: f64,
    pub gamma: f64,
    pub xi: Option<f64>,
    pub sigma: Option<f64>,
}

impl Default for ScaleOptions {
    fn default() -> Self {
        Self {
            rule: ScaleRule::DimensionFreeUniform,
            c_h: DEFAULT_CH,
            gamma: DEFAULT_GAMMA,
            xi: None,
            sigma: None,
        }
    }
}

impl ScaleOptions {
    pub fn bandwidth(&self, n: usize) -> Result<f64> {
        if !(self.gamma > 1.0 && self.gamma < 2.0) {
            return Err(Error::param(format!("gamma must lie in (1,2), got {}", self.gamma)));
        }
        if !(self.c_h.is_finite() && self.c_h > 0.0) {
            return Err(Error::param("bandwidth prefactor must be positive"));
        }
        if n == 0 {
            return Err(Error::param("sample size must be at least 1"));
        }
        Ok(self.c_h * (n as f64).powf(-self.gamma / 2.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationConfig {
    pub law: PerturbationLaw,
    /// Per-coordinate bandwidth; zero marks a masked coordinate.
    pub bandwidth: Vec<f64>,
    pub gamma: f64,
}

impl PerturbationConfig {
    pub fn new(law: PerturbationLaw, bandwidth: Vec<f64>, gamma: f64) -> Result<Self> {
        law.validate()?;
        if bandwidth.is_empty() {
            return Err(Error::param("bandwidth vector is empty"));
        }
        if bandwidth.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(Error::param("bandwidths must be finite and nonnegative"));
        }
        if !(gamma > 1.0 && gamma < 2.0) {
            return Err(Error::param(format!("gamma must lie in (1,2), got {gamma}")));
        }
        Ok(Self {
            law,
            bandwidth,
            gamma,
        })
    }

    pub fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.bandwidth[j] > 0.0
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.is_active(j)).collect()
    }

    /// Copy with every coordinate outside `keep` masked.
    pub fn masked_to(&self, keep: &[usize]) -> Result<Self> {
        if let Some(&j) = keep.iter().find(|&&j| j >= self.dim()) {
            return Err(Error::param(format!("coordinate {} out of range", j + 1)));
        }
        let mut out = self.clone();
        for (j, h) in out.bandwidth.iter_mut().enumerate() {
            if !keep.contains(&j) {
                *h = 0.0;
            }
        }
        Ok(out)
    }

    /// Fails with a step-bound error on the first coordinate violating A2.
    pub fn check_a2(&self, nodes: &NodeSet) -> Result<()> {
        let report = validate_a2(self, nodes);
        match report.first_violation() {
            None => Ok(()),
            Some(j) => Err(Error::StepBound {
                coordinate: j + 1,
                value: report.steps[j],
            }),
        }
    }
}

/// Builds the default configuration for order `order` with `n` samples.
pub fn default_config(
    d: usize,
    order: u32,
    coeffs: &CoefficientSet,
    n: usize,
    opts: &ScaleOptions,
) -> Result<PerturbationConfig> {
    if d == 0 {
        return Err(Error::param("dimension must be at least 1"));
    }
    if coeffs.target_order != order {
        return Err(Error::param(format!(
            "coefficients solved for order {}, requested {order}",
            coeffs.target_order
        )));
    }
    let law = match (opts.xi, opts.sigma, opts.rule) {
        (Some(xi), _, _) => PerturbationLaw::UniformSym { xi },
        (None, Some(sigma), _) => PerturbationLaw::Gaussian { sigma },
        (None, None, ScaleRule::DimensionFreeUniform) => PerturbationLaw::UniformSym {
            xi: 1.0 / (d as f64 * coeffs.gamma(order + 1)),
        },
        (None, None, ScaleRule::GaussianSqrtD) => PerturbationLaw::Gaussian {
            sigma: 1.0 / (d as f64).sqrt(),
        },
    };
    let h = opts.bandwidth(n)?;
    let cfg = PerturbationConfig::new(law, vec![h; d], opts.gamma)?;
    cfg.check_a2(&coeffs.nodes)?;
    Ok(cfg)
}

/// Per-coordinate A2 diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct A2Report {
    /// `beta_max * h_j * sigma`.
    pub steps: Vec<f64>,
    /// `1/2 - steps[j]`.
    pub margins: Vec<f64>,
    pub pass: bool,
}

impl A2Report {
    pub fn first_violation(&self) -> Option<usize> {
        self.margins.iter().position(|m| *m < 0.0)
    }
}

pub fn validate_a2(cfg: &PerturbationConfig, nodes: &NodeSet) -> A2Report {
    let bm = nodes.beta_max();
    let sd = cfg.law.sd();
    let steps: Vec<f64> = cfg.bandwidth.iter().map(|h| bm * h * sd).collect();
    let margins: Vec<f64> = steps.iter().map(|s| 0.5 - s).collect();
    let pass = margins.iter().all(|m| *m >= 0.0);
    A2Report {
        steps,
        margins,
        pass,
    }
}

/// `N x d` matrix of perturbation directions.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSample {
    pub v: Array2<f64>,
    pub config: PerturbationConfig,
}

/// Draws i.i.d. rows. All `d` columns are drawn before masked ones are zeroed,
/// so the active columns do not depend on the mask.
pub fn sample_perturbations(cfg: &PerturbationConfig, n: usize, stream: &RandomStream) -> PerturbationSample {
    let mut v = stream.uniform_matrix(n, cfg.dim());
    let law = cfg.law;
    for (j, mut col) in v.columns_mut().into_iter().enumerate() {
        if cfg.is_active(j) {
            col.mapv_inplace(|u| law.draw(u));
        } else {
            col.fill(0.0);
        }
    }
    PerturbationSample {
        v,
        config: cfg.clone(),
    }
}
