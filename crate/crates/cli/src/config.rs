//! Run configuration: parsing, validation and resolution into solver objects.

use std::path::{Path, PathBuf};

use bfd_core::collision::{CollisionModel, DistributionState, Representation};
use bfd_core::equilibria::epsilon_sat;
use bfd_core::initial::InitialDatum;
use bfd_core::integrator::{RecordOptions, StepControl};
use bfd_core::kernel::{AngularModel, CollisionKernelSpec};
use bfd_core::quadrature::{SphereQuadrature, VelocityGrid};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the randomized initial perturbations.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub grid: GridConfig,
    pub kernel: KernelConfig,
    pub physics: PhysicsConfig,
    pub initial: InitialDatum,
    pub time: TimeConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub gamma: f64,
    pub nu: f64,
    pub angular: AngularModel,
    #[serde(default = "default_sphere_order")]
    pub sphere_order: usize,
    #[serde(default)]
    pub representation: Representation,
}

fn default_sphere_order() -> usize {
    3
}

/// Exactly one of `epsilon` and `epsilon_fraction` (of `eps_sat` at the
/// datum's nominal mass and temperature) is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_fraction: Option<f64>,
    /// Compare against the Fermi-Dirac statistics with the datum's moments.
    #[serde(default = "yes")]
    pub equilibrium_reference: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    /// Interval between outputs; `t_end` is always an output.
    pub output_stride: f64,
    #[serde(default)]
    pub control: StepControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Orders `s` of the recorded moments `m_s`.
    pub moments: Vec<f64>,
    /// Extra exponents `eta` of the entropy production.
    pub etas: Vec<f64>,
    /// Levels `K` of the level-set functions `(f - K)^+`.
    pub levels: Vec<f64>,
    /// Coefficient `c0` of the level-set energy functional.
    pub level_c0: f64,
    /// Time window of the power-law fits; the whole run if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[f64; 2]>,
    /// Moment order `s` of the reported theoretical decay exponent.
    pub fit_s: f64,
    pub per_step_production: bool,
    pub classical_path: bool,
    /// Order `s` of the moment-inequality monitor; off if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monitor_s: Option<f64>,
    /// The constant `c'_1` entering `C_s`.
    pub c1_prime: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            moments: vec![2.0, 4.0],
            etas: vec![],
            levels: vec![],
            level_c0: 1.0,
            fit_window: None,
            fit_s: 30.0,
            per_step_production: true,
            classical_path: false,
            monitor_s: None,
            c1_prime: 1.0,
        }
    }
}

/// Everything a run needs, built from a validated config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: VelocityGrid,
    pub model: CollisionModel,
    pub epsilon: f64,
    /// `eps_sat` at the datum's nominal moments (absent for saturated data).
    pub epsilon_sat: Option<f64>,
    pub initial: DistributionState,
    pub t_end: f64,
    pub output_times: Vec<f64>,
    pub control: StepControl,
    pub record: RecordOptions,
    pub fit_window: (f64, f64),
}

fn invalid(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config { key: key.into(), message: message.into() }
}

fn finite_positive(key: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("{x} must be positive and finite")))
    }
}

/// Parses TOML, or JSON when `path` ends in `.json`.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let cfg = if json { from_json(&text)? } else { from_toml(&text)? };
    cfg.validate()?;
    Ok(cfg)
}

pub fn from_toml(text: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::Parse(e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| path_error(e.path().to_string(), e.into_inner().to_string()))
}

pub fn from_json(text: &str) -> Result<RunConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| path_error(e.path().to_string(), e.into_inner().to_string()))
}

fn path_error(path: String, message: String) -> CliError {
    if path == "." {
        CliError::Parse(message)
    } else {
        CliError::Config { key: path, message }
    }
}

impl RunConfig {
    /// Canonical TOML with every default written out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Parse(e.to_string()))
    }

    /// `eps` after resolving a fraction of `eps_sat`.
    pub fn epsilon(&self) -> Result<f64> {
        let p = &self.physics;
        match (p.epsilon, p.epsilon_fraction) {
            (Some(e), None) => Ok(e),
            (None, Some(frac)) => {
                let (rho, _, theta) = self.initial.nominal_moments();
                let theta = theta.ok_or_else(|| {
                    invalid(
                        "physics.epsilon_fraction",
                        "the saturated family has no eps-independent temperature; give physics.epsilon",
                    )
                })?;
                Ok(frac * epsilon_sat(rho, theta))
            }
            (Some(_), Some(_)) => Err(invalid("physics", "give only one of epsilon and epsilon_fraction")),
            (None, None) => Err(invalid("physics", "missing epsilon or epsilon_fraction")),
        }
    }

    pub fn kernel_spec(&self) -> Result<CollisionKernelSpec> {
        let k = &self.kernel;
        if k.gamma + 2.0 * k.nu <= 0.0 {
            return Err(invalid(
                "kernel.gamma",
                format!(
                    "gamma + 2 nu = {} must be positive (moderately soft potentials; gamma = {}, nu = {})",
                    k.gamma + 2.0 * k.nu,
                    k.gamma,
                    k.nu
                ),
            ));
        }
        CollisionKernelSpec::new(k.gamma, k.nu, k.angular).map_err(|e| invalid("kernel", e.to_string()))
    }

    pub fn model(&self) -> Result<CollisionModel> {
        let sphere = SphereQuadrature::new(self.kernel.sphere_order)
            .map_err(|e| invalid("kernel.sphere_order", e.to_string()))?;
        Ok(CollisionModel::new(self.kernel_spec()?, sphere).with_representation(self.kernel.representation))
    }

    pub fn grid(&self) -> Result<VelocityGrid> {
        finite_positive("grid.half_width", self.grid.half_width)?;
        VelocityGrid::new(self.grid.half_width, self.grid.points).map_err(|e| invalid("grid.points", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.model()?;
        self.initial.validate().map_err(|e| invalid("initial", e.to_string()))?;
        let eps = self.epsilon()?;
        let eps_key = if self.physics.epsilon.is_some() { "physics.epsilon" } else { "physics.epsilon_fraction" };
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(invalid(eps_key, format!("eps = {eps} must be finite and >= 0")));
        }
        let (rho, _, theta) = self.initial.nominal_moments();
        match theta {
            None if eps == 0.0 => return Err(invalid(eps_key, "the saturated family needs eps > 0")),
            None if self.physics.equilibrium_reference => {
                return Err(invalid(
                    "physics.equilibrium_reference",
                    "a saturated datum has no smooth Fermi-Dirac reference; set it to false",
                ))
            }
            Some(theta) if self.physics.equilibrium_reference => {
                let sat = epsilon_sat(rho, theta);
                if eps >= sat {
                    return Err(invalid(
                        eps_key,
                        format!(
                            "eps = {eps} must stay below the saturation threshold eps_sat(rho, Theta) = {sat} \
                             for the Fermi-Dirac reference to exist"
                        ),
                    ));
                }
            }
            _ => {}
        }
        let t = &self.time;
        finite_positive("time.t_end", t.t_end)?;
        finite_positive("time.output_stride", t.output_stride)?;
        t.control.validate().map_err(|e| invalid("time.control", e.to_string()))?;
        let d = &self.diagnostics;
        if let Some(s) = d.moments.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(invalid("diagnostics.moments", format!("order {s} must be finite and >= 0")));
        }
        if let Some(e) = d.etas.iter().find(|e| !e.is_finite()) {
            return Err(invalid("diagnostics.etas", format!("exponent {e} must be finite")));
        }
        if let Some(k) = d.levels.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
            return Err(invalid("diagnostics.levels", format!("level {k} must be finite and >= 0")));
        }
        finite_positive("diagnostics.level_c0", d.level_c0)?;
        finite_positive("diagnostics.c1_prime", d.c1_prime)?;
        if let Some([a, b]) = d.fit_window {
            if !(a >= 0.0 && a < b && b <= t.t_end) {
                return Err(invalid("diagnostics.fit_window", format!("[{a}, {b}] must satisfy 0 <= a < b <= t_end")));
            }
        }
        if d.classical_path && eps != 0.0 {
            return Err(invalid("diagnostics.classical_path", "the classical path requires eps = 0"));
        }
        if let Some(s) = d.monitor_s {
            let lower = (2.0 - self.kernel.gamma).max(4.0);
            if !(s >= lower) {
                return Err(invalid("diagnostics.monitor_s", format!("s = {s} must be at least {lower}")));
            }
        }
        Ok(())
    }

    /// Output times `k * stride` below `t_end`, then `t_end`.
    pub fn output_times(&self) -> Vec<f64> {
        let t = &self.time;
        let mut out: Vec<f64> = (1..)
            .map(|k| k as f64 * t.output_stride)
            .take_while(|&x| x < t.t_end * (1.0 - 1e-12))
            .collect();
        out.push(t.t_end);
        out
    }

    pub fn record_options(&self) -> RecordOptions {
        let d = &self.diagnostics;
        let mut moments = d.moments.clone();
        if let Some(s) = d.monitor_s {
            for extra in [s, s + self.kernel.gamma] {
                if !moments.iter().any(|m| (m - extra).abs() < 1e-12) {
                    moments.push(extra);
                }
            }
        }
        RecordOptions {
            moments,
            etas: d.etas.clone(),
            per_step_production: d.per_step_production,
            keep_states: !d.levels.is_empty(),
            classical_path: d.classical_path,
        }
    }

    pub fn setup(&self) -> Result<Setup> {
        self.validate()?;
        let grid = self.grid()?;
        let epsilon = self.epsilon()?;
        let initial = self.initial.sample(&grid, epsilon, self.seed).map_err(|e| invalid("initial", e.to_string()))?;
        let (rho, _, theta) = self.initial.nominal_moments();
        Ok(Setup {
            model: self.model()?,
            epsilon,
            epsilon_sat: theta.map(|t| epsilon_sat(rho, t)),
            initial,
            t_end: self.time.t_end,
            output_times: self.output_times(),
            control: self.time.control,
            record: self.record_options(),
            fit_window: self.diagnostics.fit_window.map_or((0.0, self.time.t_end), |[a, b]| (a, b)),
            grid,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
half_width = 4.0
points = 8

[kernel]
gamma = -0.5
nu = 0.75
angular = { model = "constant", b0 = 0.08 }

[physics]
epsilon_fraction = 0.2

[initial]
family = "maxwellian"
rho = 1.0
theta = 0.5

[time]
t_end = 1.0
output_stride = 0.25
"#;

    #[test]
    fn minimal_config_round_trips() {
        let cfg = from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.diagnostics, DiagnosticsConfig::default());
        assert_eq!(cfg.kernel.sphere_order, 3);
        let normalized = cfg.to_toml().unwrap();
        let again = from_toml(&normalized).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml().unwrap(), normalized);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(from_json(&json).unwrap(), cfg);
    }

    #[test]
    fn resolves_epsilon_and_outputs() {
        let cfg = from_toml(MINIMAL).unwrap();
        let eps = cfg.epsilon().unwrap();
        assert!((eps - 0.2 * epsilon_sat(1.0, 0.5)).abs() < 1e-15);
        assert_eq!(cfg.output_times(), vec![0.25, 0.5, 0.75, 1.0]);
        let s = cfg.setup().unwrap();
        assert_eq!(s.grid.len(), 512);
        assert_eq!(s.initial.epsilon(), eps);
    }

    fn rejected(patch: &str, from: &str, key: &str) {
        assert!(MINIMAL.contains(from), "{from}");
        let text = MINIMAL.replace(from, patch);
        let err = from_toml(&text).and_then(|c| c.validate()).expect_err(patch);
        match err {
            CliError::Config { key: k, .. } => assert_eq!(k, key, "{patch}"),
            other => panic!("{patch}: unexpected {other}"),
        }
    }

    #[test]
    fn invariant_violations_name_the_key() {
        rejected("gamma = -2.1\nnu = 0.9", "gamma = -0.5\nnu = 0.75", "kernel.gamma");
        rejected("epsilon_fraction = 1.2", "epsilon_fraction = 0.2", "physics.epsilon_fraction");
        rejected("points = 7", "points = 8", "grid.points");
        rejected("t_end = -1.0", "t_end = 1.0", "time.t_end");
        rejected("family = \"boltzmannian\"", "family = \"maxwellian\"", "initial.family");
        rejected("theta = -0.5", "theta = 0.5", "initial");
        rejected("epsilon = 1.0\nepsilon_fraction = 0.2", "epsilon_fraction = 0.2", "physics");
        rejected("[grid]\nhalf_width = 4.0\n", "[grid]\nhalf_width = 4.0\npoints = 8\n", "grid");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("points = 8", "points = 8\nspacing = 1.0");
        assert!(matches!(from_toml(&text), Err(CliError::Config { .. })));
    }

    #[test]
    fn saturated_needs_absolute_eps_without_reference() {
        let text = MINIMAL.replace("family = \"maxwellian\"\nrho = 1.0\ntheta = 0.5", "family = \"saturated\"\nrho = 1.0");
        let cfg = from_toml(&text).unwrap();
        assert!(cfg.validate().is_err());
        let text = text.replace("epsilon_fraction = 0.2", "epsilon = 4.0\nequilibrium_reference = false");
        from_toml(&text).unwrap().setup().unwrap();
    }
}
