//! Run configuration: a flat TOML document with dotted section keys.
//!
//! ```toml
//! experiment = "kernel-decay"
//! equilibrium.kind = "maxwellian"
//! equilibrium.dimension = 3
//! solver.modes = 2048
//! ```
//!
//! Every field has a default, unknown keys are rejected, and [`emit_config`]
//! writes the same flat form back so that `parse(emit(c)) == c`.

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    #[default]
    Penrose,
    KernelDecay,
    LinearEvolve,
    NonlinearEvolve,
    Characteristics,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Penrose => "penrose",
            Self::KernelDecay => "kernel-decay",
            Self::LinearEvolve => "linear-evolve",
            Self::NonlinearEvolve => "nonlinear-evolve",
            Self::Characteristics => "characteristics",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquilibriumKind {
    #[default]
    Maxwellian,
    BiMaxwellian,
    Vacuum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumConfig {
    pub kind: EquilibriumKind,
    pub dimension: usize,
    /// Maxwellian temperature.
    pub theta: f64,
    /// Bump-on-tail parameters: drift of the bump, its mass fraction and the
    /// two temperatures.
    pub separation: f64,
    pub alpha: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        Self {
            kind: EquilibriumKind::Maxwellian,
            dimension: 3,
            theta: 1.0,
            separation: 1.0,
            alpha: 0.5,
            theta1: 0.05,
            theta2: 0.05,
        }
    }
}

/// Gaussian initial perturbation f₀ = amplitude · G_{σx}(x) G_{σv}(v).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub amplitude: f64,
    pub sigma_x: f64,
    pub sigma_v: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { amplitude: 1e-3, sigma_x: 1.0, sigma_v: 1.0 }
    }
}

/// Periodic phase-space box of the nonlinear solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    pub length: f64,
    pub nx: usize,
    pub vmax: f64,
    pub nv: usize,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { length: 128.0, nx: 256, vmax: 6.0, nv: 241 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Horizon and steps of the linear time grid.
    pub t_max: f64,
    pub steps: usize,
    /// Geometric mode list |ξ| ∈ [k_min, k_max].
    pub modes: usize,
    pub k_min: f64,
    pub k_max: f64,
    /// Fit window and number of geometric sample times in it.
    pub fit_t_min: f64,
    pub fit_samples: usize,
    pub log_correction: bool,
    /// |ξ| samples of the coarse Penrose scan; the doubled scan uses twice as many.
    pub penrose_n: usize,
    /// Nonlinear horizon and step.
    pub nonlinear_t_max: f64,
    pub nonlinear_dt: f64,
    pub max_picard: usize,
    pub picard_tol: f64,
    /// Also run the semi-Lagrangian reference and report the twin difference.
    pub reference: bool,
    /// Bootstrap threshold ε for the monitor.
    pub epsilon: f64,
    /// Rows of density.csv are written every `output_stride` steps.
    pub output_stride: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            t_max: 100.0,
            steps: 4096,
            modes: 2048,
            k_min: 1e-3,
            k_max: 64.0,
            fit_t_min: 10.0,
            fit_samples: 12,
            log_correction: true,
            penrose_n: 32,
            nonlinear_t_max: 20.0,
            nonlinear_dt: 0.025,
            max_picard: 20,
            picard_tol: 1e-8,
            reference: true,
            epsilon: 1e-2,
            output_stride: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Zero,
    #[default]
    Constant,
    /// Field of the linearized density of the Gaussian perturbation.
    Linear,
}

/// Flow-map experiment: a lattice of shifted points (y, v) traced from `t`
/// back to `s` in the chosen field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CharacteristicsConfig {
    pub field: FieldKind,
    /// Strength of the constant field along e₁.
    pub e0: f64,
    pub s: f64,
    pub t: f64,
    pub y_max: f64,
    pub ny: usize,
    pub v_max: f64,
    pub nv: usize,
}

impl Default for CharacteristicsConfig {
    fn default() -> Self {
        Self { field: FieldKind::Constant, e0: 1e-2, s: 0.0, t: 10.0, y_max: 3.0, ny: 7, v_max: 2.0, nv: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    /// File names of the nonlinear density table and monitor report.
    pub density: String,
    pub monitor: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into(), density: "density.csv".into(), monitor: "monitor.json".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub equilibrium: EquilibriumConfig,
    pub initial: InitialConfig,
    pub domain: DomainConfig,
    pub solver: SolverConfig,
    pub characteristics: CharacteristicsConfig,
    pub output: OutputConfig,
}

fn check(ok: bool, msg: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg.into()))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let e = &self.equilibrium;
        check((1..=3).contains(&e.dimension), "equilibrium.dimension must be 1, 2 or 3")?;
        check(e.theta > 0.0 && e.theta1 > 0.0 && e.theta2 > 0.0, "temperatures must be positive")?;
        check(e.alpha > 0.0 && e.alpha < 1.0, "equilibrium.alpha must lie in (0, 1)")?;
        check(e.separation > 0.0, "equilibrium.separation must be positive")?;
        let i = &self.initial;
        check(i.amplitude >= 0.0 && i.sigma_x > 0.0 && i.sigma_v > 0.0, "initial data needs amplitude ≥ 0 and positive widths")?;
        let s = &self.solver;
        check(s.t_max > 0.0 && s.steps >= 8, "solver needs t_max > 0 and at least 8 steps")?;
        check(s.modes >= 2 && s.k_min > 0.0 && s.k_max > s.k_min, "solver modes need 0 < k_min < k_max")?;
        check(s.fit_samples >= 8, "decay fits need solver.fit_samples ≥ 8")?;
        check(s.fit_t_min >= 1.0 && s.fit_t_min < s.t_max, "solver.fit_t_min must lie in [1, t_max)")?;
        check(s.penrose_n >= 4, "solver.penrose_n must be at least 4")?;
        check(s.nonlinear_t_max > 0.0 && s.nonlinear_dt > 0.0, "nonlinear horizon and step must be positive")?;
        check(s.picard_tol > 0.0 && s.max_picard > 0, "Picard controls must be positive")?;
        check(s.output_stride > 0, "solver.output_stride must be positive")?;
        let c = &self.characteristics;
        check(c.t > c.s && c.s >= 0.0, "characteristics need 0 ≤ s < t")?;
        check(c.ny > 0 && c.nv > 0, "characteristics lattice must be nonempty")?;
        match self.experiment {
            Experiment::NonlinearEvolve => {
                check(e.dimension <= 2, "nonlinear grid path supports d ∈ {1,2}")?;
                let d = &self.domain;
                check(d.length > 0.0 && d.vmax > 0.0 && d.nx >= 8 && d.nv >= 8, "domain needs positive extents and ≥ 8 points per axis")?;
            }
            Experiment::Characteristics => {
                check(c.field != FieldKind::Linear || e.dimension == 3, "the linear field history is radial and needs d = 3")?;
            }
            Experiment::Penrose | Experiment::LinearEvolve | Experiment::KernelDecay => {}
        }
        Ok(())
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            // Scalars before sections, so the document reads top-down.
            let (tables, scalars): (Vec<_>, Vec<_>) = t.iter().partition(|(_, v)| v.is_table());
            for (k, v) in scalars.into_iter().chain(tables) {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}

/// Writes the configuration as flat dotted keys.
pub fn emit_config(config: &RunConfig) -> String {
    let value = toml::Value::try_from(config).expect("configurations serialize");
    let mut lines = Vec::new();
    flatten("", &value, &mut lines);
    lines.join("\n") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse_config("equilibrium.kind = \"maxwellian\"\n").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.solver.modes, 2048);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_location() {
        let err = parse_config("seed = 1\nsolver.mode = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mode") && msg.contains("line 2"), "{msg}");
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn type_mismatch_is_rejected() {
        assert!(matches!(parse_config("solver.steps = \"many\""), Err(CliError::Config(_))));
    }

    #[test]
    fn nonlinear_run_in_three_dimensions_is_rejected() {
        let err = parse_config("experiment = \"nonlinear-evolve\"\nequilibrium.dimension = 3\n").unwrap_err();
        assert!(err.to_string().contains("nonlinear grid path supports d ∈ {1,2}"));
    }

    #[test]
    fn emitted_config_is_flat() {
        let text = emit_config(&RunConfig::default());
        assert!(text.lines().all(|l| !l.starts_with('[')));
        assert!(text.contains("solver.picard_tol = "));
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        (
            prop_oneof![Just(Experiment::Penrose), Just(Experiment::KernelDecay), Just(Experiment::Characteristics)],
            any::<u32>(),
            prop_oneof![Just(EquilibriumKind::Maxwellian), Just(EquilibriumKind::BiMaxwellian)],
            1usize..=3,
            0.1f64..10.0,
            1e-6f64..1.0,
            (16usize..5000, 2usize..3000, 1e-9f64..1e-3),
            any::<bool>(),
        )
            .prop_map(|(experiment, seed, kind, dimension, theta, amplitude, (steps, modes, tol), reference)| {
                let mut c = RunConfig { experiment, seed: seed as u64, ..RunConfig::default() };
                c.equilibrium.kind = kind;
                c.equilibrium.dimension = dimension;
                c.equilibrium.theta = theta;
                c.initial.amplitude = amplitude;
                c.solver.steps = steps;
                c.solver.modes = modes;
                c.solver.picard_tol = tol;
                c.solver.reference = reference;
                c.characteristics.field = FieldKind::Zero;
                c
            })
    }

    proptest! {
        #[test]
        fn emit_then_parse_round_trips(c in arb_config()) {
            let back = parse_config(&emit_config(&c)).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
