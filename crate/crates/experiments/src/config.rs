//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::ExperimentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ExpExample,
    FigQ,
    Privacy,
    Custom,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub strict: bool,
    /// Output directory, relative to the config file.
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverSection,
    pub exp_example: Option<ExpSection>,
    pub fig_q: Option<FigQSection>,
    pub privacy: Option<PrivacySection>,
    pub custom: Option<CustomSection>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimalKind {
    #[default]
    Discrete,
    FrankWolfe,
    ConvexHull,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    Detected,
    FromStart,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiameterKind {
    #[default]
    Strict,
    MaxNorm,
}

/// Solver settings shared by all experiments. Unset values fall back to the
/// experiment's defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma1: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda_bar: Option<f64>,
    pub sigma0: Option<f64>,
    pub iterations: Option<usize>,
    pub record_every: Option<usize>,
    #[serde(default)]
    pub primal: PrimalKind,
    pub window: Option<WindowKind>,
    pub window_start: Option<usize>,
    #[serde(default = "yes")]
    pub dual_checkpoints: bool,
    pub dense_until: Option<usize>,
    pub dual_every: Option<usize>,
    pub dual_until: Option<usize>,
    pub diameter: Option<DiameterKind>,
    pub gbar: Option<f64>,
    pub f_star: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    #[default]
    None,
    /// `λ̃ = λ + αYσ₀` with `Y ~ U[-1, 1]` per component.
    Uniform,
    /// `λ̃ = λ + α·exp(k - onset)`.
    Adversarial,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpSection {
    #[serde(default = "three")]
    pub n: usize,
    /// Declared Lagrangian curvature `μ̄_L`.
    #[serde(default = "point_six")]
    pub mu_bar: f64,
    /// Box side; defaults to `1/√(n·μ̄_L)`.
    pub s: Option<f64>,
    #[serde(default)]
    pub perturbation: Perturbation,
    #[serde(default = "onset")]
    pub onset: f64,
}

fn three() -> usize {
    3
}
fn point_six() -> f64 {
    0.6
}
fn onset() -> f64 {
    1e5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigQSection {
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "point_one")]
    pub beta: f64,
    #[serde(default = "half")]
    pub b: f64,
    #[serde(default = "ten_thousand")]
    pub steps: usize,
    #[serde(default = "twenty")]
    pub seeds: u64,
    #[serde(default = "half")]
    pub z1: f64,
    /// Multiplier cap; `inf` for none.
    #[serde(default = "infinity")]
    pub lambda_bar: f64,
}

fn one() -> f64 {
    1.0
}
fn point_one() -> f64 {
    0.1
}
fn half() -> f64 {
    0.5
}
fn ten_thousand() -> usize {
    10_000
}
fn twenty() -> u64 {
    20
}
fn infinity() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySection {
    #[serde(default = "five")]
    pub t_max: usize,
    /// Entropy target `E`; defaults to `ln(T)/T`.
    pub entropy: Option<f64>,
    pub xi: Option<f64>,
    /// Inter-arrival times, cycled.
    #[serde(default = "alternating")]
    pub arrivals: Vec<f64>,
    /// CSV file with a single column `b1`; overrides `arrivals`.
    pub arrivals_csv: Option<PathBuf>,
    pub lambda1: Option<Vec<f64>>,
    /// Strictly feasible distribution over `0..=T`; a default is derived.
    pub slater: Option<Vec<f64>>,
    /// Declared curvature of the entropy constraint.
    #[serde(default = "entropy_curvature")]
    pub entropy_curvature: f64,
}

fn five() -> usize {
    5
}
fn alternating() -> Vec<f64> {
    vec![0.0, 1.0]
}
fn entropy_curvature() -> f64 {
    50.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Linear {
        coeffs: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// `½zᵀAz + cᵀz`
    Quadratic {
        matrix: Vec<Vec<f64>>,
        linear: Option<Vec<f64>>,
        curvature: Option<f64>,
    },
    /// `Σ exp(wᵢzᵢ)`
    ExpSum { weights: Vec<f64>, curvature: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConstraintsSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSection {
    pub actions: Vec<Vec<f64>>,
    pub objective: ObjectiveSpec,
    pub constraints: Option<LinearConstraintsSpec>,
    pub slater: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let config: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        config.check_sections()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(out) = &config.output {
            if out.is_relative() {
                config.output = Some(base.join(out));
            }
        }
        if let Some(p) = config.privacy.as_mut() {
            if let Some(csv) = &p.arrivals_csv {
                if csv.is_relative() {
                    p.arrivals_csv = Some(base.join(csv));
                }
            }
        }
        Ok(config)
    }

    fn check_sections(&self) -> Result<(), ExperimentError> {
        let present = [
            ("exp_example", self.exp_example.is_some(), ExperimentKind::ExpExample),
            ("fig_q", self.fig_q.is_some(), ExperimentKind::FigQ),
            ("privacy", self.privacy.is_some(), ExperimentKind::Privacy),
            ("custom", self.custom.is_some(), ExperimentKind::Custom),
        ];
        for (name, is_present, kind) in present {
            if is_present && kind != self.experiment {
                return Err(ExperimentError::Config(format!(
                    "section [{name}] does not apply to experiment {:?}",
                    self.experiment
                )));
            }
        }
        if self.experiment == ExperimentKind::Custom && self.custom.is_none() {
            return Err(ExperimentError::Config("experiment custom needs a [custom] section".into()));
        }
        if self.solver.window == Some(WindowKind::Fixed) && self.solver.window_start.is_none() {
            return Err(ExperimentError::Config("solver.window = \"fixed\" needs solver.window_start".into()));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}
