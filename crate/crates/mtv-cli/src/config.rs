//! Pipeline configuration and the parameter conventions checked at load.

use std::path::{Path, PathBuf};

use mtv_core::shadowing::{delta0, shadowing_constant};
use mtv_core::torus_model::{AffinePHSystem, SystemSpec};
use mtv_core::transversal::DEFAULT_EPSILON;
use serde::{Deserialize, Serialize};

use crate::PipelineError;

/// Inline system or a path to a system JSON file, relative to the config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSource {
    Inline(SystemSpec),
    Path(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Coding, θ, bracket and equivariance errors.
    pub coding: f64,
    pub surjectivity: f64,
    /// Interior margin of the Markov containments.
    pub margin: f64,
    /// Relative error allowed on the fitted decay rate.
    pub decay: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { coding: 1e-8, surjectivity: 1e-6, margin: 1e-8, decay: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Samples {
    /// Interior samples per Markov triple.
    pub markov: usize,
    pub shadowing: usize,
    pub shadowing_length: usize,
    pub theta: usize,
    pub bracket: usize,
    pub strings: usize,
    pub points: usize,
    /// Grid pitch of the covering check as a fraction of `δ`.
    pub covering_pitch: f64,
}

impl Default for Samples {
    fn default() -> Self {
        Self {
            markov: 1000,
            shadowing: 1000,
            shadowing_length: 100,
            theta: 1000,
            bracket: 100,
            strings: 1000,
            points: 1000,
            covering_pitch: 0.25,
        }
    }
}

impl Samples {
    /// Sets every count to `n`, the bracket checks to a tenth of it.
    pub fn scaled(mut self, n: usize) -> Self {
        self.markov = n;
        self.shadowing = n;
        self.theta = n;
        self.bracket = (n / 10).max(1);
        self.strings = n;
        self.points = n;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub system: SystemSource,
    #[serde(default)]
    pub zero_center: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub lattice: Option<u32>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub samples: Samples,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Discs drawn as SVG; every disc carries the same cells.
    #[serde(default = "default_svg_discs")]
    pub svg_discs: Vec<usize>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_horizon() -> usize {
    40
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_svg_discs() -> Vec<usize> {
    vec![0]
}

/// Parameters after the conventions are applied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub epsilon: f64,
    pub delta: f64,
    pub rho: f64,
    pub nu: Option<f64>,
    pub constant: f64,
    pub delta0: f64,
}

impl PipelineConfig {
    pub fn from_system(spec: SystemSpec) -> Self {
        Self {
            system: SystemSource::Inline(spec),
            zero_center: false,
            epsilon: DEFAULT_EPSILON,
            delta: None,
            rho: None,
            nu: None,
            lattice: None,
            tolerances: Tolerances::default(),
            horizon: default_horizon(),
            samples: Samples::default(),
            out: default_out(),
            seed: 0,
            svg_discs: default_svg_discs(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut c: Self = serde_json::from_str(text).map_err(|e| PipelineError::Input(format!("config: {e}")))?;
        c.base_dir = base_dir.to_path_buf();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn system(&self) -> Result<AffinePHSystem, PipelineError> {
        let spec = match &self.system {
            SystemSource::Inline(s) => s.clone(),
            SystemSource::Path(p) => {
                let p = self.base_dir.join(p);
                let text = std::fs::read_to_string(&p).map_err(|e| PipelineError::Input(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| PipelineError::Input(format!("{}: {e}", p.display())))?
            }
        };
        AffinePHSystem::from_spec(spec).map_err(|e| PipelineError::Input(format!("system: {e}")))
    }

    /// Applies and checks `16Cδ ≤ ε`, `(3+λ_c⁺)δ ≤ δ0`, `3 Lip(f) ν < δ`
    /// and `2Cδ < ρ`.
    pub fn resolve(&self, system: &AffinePHSystem) -> Result<Resolved, PipelineError> {
        let violation = |message: String| PipelineError::Parameter { stage: "config", message };
        let c = shadowing_constant(system);
        let d0 = delta0(system);
        let eps = self.epsilon;
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(violation(format!("epsilon must be positive, got {eps}")));
        }
        let delta = self.delta.unwrap_or(eps / (16.0 * c));
        if !(delta > 0.0) {
            return Err(violation(format!("delta must be positive, got {delta}")));
        }
        if self.zero_center {
            return Ok(Resolved { epsilon: eps, delta, rho: self.rho.unwrap_or(f64::INFINITY), nu: self.nu, constant: c, delta0: d0 });
        }
        if 16.0 * c * delta > eps * (1.0 + 1e-12) {
            return Err(violation(format!("convention 16·C·δ ≤ ε violated: 16·{c:.6}·{delta:.6e} > {eps}")));
        }
        let lc = system.rates().lambda_c_plus;
        if (3.0 + lc) * delta > d0 {
            return Err(violation(format!("convention (3+λc⁺)·δ ≤ δ0 violated: (3+{lc})·{delta:.6e} > {d0:.6e}")));
        }
        let lip = system.lipschitz();
        if let Some(nu) = self.nu {
            if !(nu > 0.0 && 3.0 * lip * nu < delta) {
                return Err(violation(format!("convention 3·Lip(f)·ν < δ violated: 3·{lip:.6}·{nu:.6e} ≥ {delta:.6e}")));
            }
        }
        let rho = self.rho.unwrap_or(eps / 4.0);
        if 2.0 * c * delta >= rho {
            return Err(violation(format!("convention 2·C·δ < ρ violated: 2·{c:.6}·{delta:.6e} ≥ {rho}")));
        }
        Ok(Resolved { epsilon: eps, delta, rho, nu: self.nu, constant: c, delta0: d0 })
    }
}
