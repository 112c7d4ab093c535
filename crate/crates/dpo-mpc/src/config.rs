//! Experiment configuration files.
//!
//! A configuration is a TOML document with the sections `[model]`,
//! `[weights]`, `[constraints]`, `[simulation]` and `[synthesis]`. Matrices
//! are nested arrays in row-major order; per-mode, per-rule matrices are
//! indexed `[mode][rule][row][col]`. Modes are numbered from 1.
//!
//! ```toml
//! [model]
//! kind = "matrices"
//! a = [[[[0.9]]]]
//! b = [[[[1.0]]]]
//! transition = [[1.0]]
//! plant_membership = { kind = "single" }
//!
//! [weights]
//! state = [[1.0]]
//! input = [[1.0]]
//!
//! [constraints]
//! u_bound = [1.0]
//! x_bound = [2.0]
//! phi = [[1.0]]
//!
//! [simulation]
//! x0 = [1.0]
//! ```
//!
//! See `data/robot_arm.toml` for the `robot-arm` model kind.

use std::path::Path;

use dpo_mpc_core::sim::{ControllerKind, PlantKind, SimConfig};
use dpo_mpc_core::synthesis::Coupling;
use dpo_mpc_core::{robot_arm_model, ArmParams, ConstraintSpec, FuzzyMjsModel, Mat, Membership, SynthesisOptions, Vector};
use serde::{Deserialize, Serialize};

/// The documented robot-arm configuration shipped with the crate.
pub const ROBOT_ARM_TOML: &str = include_str!("../data/robot_arm.toml");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Shape(String),
    #[error("invalid model: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub weights: WeightsSpec,
    pub constraints: ConstraintsSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub synthesis: SynthesisSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// The single-link arm built from physical parameters, one mass and
    /// inertia per mode.
    RobotArm {
        gravity: f64,
        length: f64,
        friction: f64,
        sampling_period: f64,
        masses: Vec<f64>,
        inertias: Vec<f64>,
        beta: f64,
        transition: Vec<Vec<f64>>,
    },
    /// Explicit local models.
    Matrices {
        a: Vec<Vec<Vec<Vec<f64>>>>,
        b: Vec<Vec<Vec<Vec<f64>>>>,
        transition: Vec<Vec<f64>>,
        plant_membership: MembershipSpec,
        /// Defaults to the plant membership.
        #[serde(default)]
        controller_membership: Option<MembershipSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MembershipSpec {
    Single,
    /// Two sinc rules on state component `component` (1-based).
    ArmSinc { beta: f64, component: usize },
    Constant { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    pub state: Vec<Vec<f64>>,
    pub input: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsSpec {
    pub u_bound: Vec<f64>,
    pub x_bound: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PlantChoice {
    FuzzyBlend,
    NonlinearArm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerChoice {
    Dpo,
    TerminalGain,
    OpenLoop,
}

impl From<PlantChoice> for PlantKind {
    fn from(p: PlantChoice) -> Self {
        match p {
            PlantChoice::FuzzyBlend => PlantKind::FuzzyBlend,
            PlantChoice::NonlinearArm => PlantKind::NonlinearArm,
        }
    }
}

impl From<ControllerChoice> for ControllerKind {
    fn from(c: ControllerChoice) -> Self {
        match c {
            ControllerChoice::Dpo => ControllerKind::Dpo,
            ControllerChoice::TerminalGain => ControllerKind::TerminalGainOnly,
            ControllerChoice::OpenLoop => ControllerKind::OpenLoop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    /// Empty means the origin.
    pub x0: Vec<f64>,
    /// 1-based.
    pub mode0: usize,
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    pub plant: PlantChoice,
    pub controller: ControllerChoice,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            x0: Vec::new(),
            mode0: 1,
            horizon: 50,
            runs: 100,
            seed: 0,
            plant: PlantChoice::FuzzyBlend,
            controller: ControllerChoice::Dpo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingChoice {
    Consistent,
    Independent,
}

/// Optional overrides of [`SynthesisOptions`]; absent keys keep the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSpec {
    pub margin: Option<f64>,
    pub prediction_margin: Option<f64>,
    pub anchors: Option<Vec<Vec<f64>>>,
    pub mode_robust: Option<bool>,
    pub coupling: Option<CouplingChoice>,
    pub grid: Option<usize>,
    pub feas_tol: Option<f64>,
    pub duality_tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub max_newton: Option<usize>,
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    Ok(toml::from_str(text)?)
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse(&text)
}

fn matrix(what: &str, rows: &[Vec<f64>]) -> Result<Mat, ConfigError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(ConfigError::Shape(format!("{what} is empty")));
    }
    if let Some(k) = rows.iter().position(|row| row.len() != c) {
        return Err(ConfigError::Shape(format!("{what}: row {} has {} entries, expected {c}", k + 1, rows[k].len())));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Mat::from_row_slice(r, c, &flat))
}

fn matrix_grid(what: &str, grid: &[Vec<Vec<Vec<f64>>>]) -> Result<Vec<Vec<Mat>>, ConfigError> {
    grid.iter()
        .enumerate()
        .map(|(i, rules)| {
            rules
                .iter()
                .enumerate()
                .map(|(h, m)| matrix(&format!("{what}[mode {}][rule {}]", i + 1, h + 1), m))
                .collect()
        })
        .collect()
}

fn membership(spec: &MembershipSpec) -> Result<Membership, ConfigError> {
    Ok(match spec {
        MembershipSpec::Single => Membership::Single,
        MembershipSpec::ArmSinc { beta, component } => {
            if *component == 0 {
                return Err(ConfigError::Shape("membership component is 1-based".into()));
            }
            Membership::ArmSinc { beta: *beta, component: component - 1 }
        }
        MembershipSpec::Constant { weights } => Membership::Constant(weights.clone()),
    })
}

impl ModelSpec {
    /// The arm parameters of a `robot-arm` model.
    pub fn arm_params(&self) -> Result<Option<ArmParams>, ConfigError> {
        match self {
            ModelSpec::RobotArm { gravity, length, friction, sampling_period, masses, inertias, beta, transition } => {
                if masses.len() != inertias.len() || masses.is_empty() {
                    return Err(ConfigError::Shape("masses and inertias must be non-empty and equally long".into()));
                }
                Ok(Some(ArmParams {
                    gravity: *gravity,
                    length: *length,
                    friction: *friction,
                    sampling_period: *sampling_period,
                    masses: masses.clone(),
                    inertias: inertias.clone(),
                    beta: *beta,
                    transition: matrix("transition", transition)?,
                }))
            }
            ModelSpec::Matrices { .. } => Ok(None),
        }
    }
}

impl ExperimentConfig {
    /// Builds and validates the model.
    pub fn build_model(&self) -> Result<FuzzyMjsModel, ConfigError> {
        let state_weight = matrix("weights.state", &self.weights.state)?;
        let input_weight = matrix("weights.input", &self.weights.input)?;
        let constraints = ConstraintSpec {
            u_bound: Vector::from_vec(self.constraints.u_bound.clone()),
            x_bound: Vector::from_vec(self.constraints.x_bound.clone()),
            phi: matrix("constraints.phi", &self.constraints.phi)?,
        };
        let mut model = match &self.model {
            ModelSpec::RobotArm { .. } => {
                let params = self.model.arm_params()?.expect("robot-arm spec has parameters");
                if params.transition.nrows() != params.masses.len() {
                    return Err(ConfigError::Shape("transition size differs from the number of modes".into()));
                }
                robot_arm_model(&params)
            }
            ModelSpec::Matrices { a, b, transition, plant_membership, controller_membership } => {
                let a = matrix_grid("a", a)?;
                let b = matrix_grid("b", b)?;
                let first = |g: &Vec<Vec<Mat>>| g.first().and_then(|r| r.first()).map(|m| (m.nrows(), m.ncols()));
                let (n_x, _) = first(&a).ok_or_else(|| ConfigError::Shape("a is empty".into()))?;
                let (_, n_u) = first(&b).ok_or_else(|| ConfigError::Shape("b is empty".into()))?;
                let plant_membership = membership(plant_membership)?;
                let controller_membership = match controller_membership {
                    Some(m) => membership(m)?,
                    None => plant_membership.clone(),
                };
                FuzzyMjsModel {
                    n_x,
                    n_u,
                    a,
                    b,
                    transition: matrix("transition", transition)?,
                    plant_membership,
                    controller_membership,
                    state_weight: state_weight.clone(),
                    input_weight: input_weight.clone(),
                    constraints: constraints.clone(),
                    arm: None,
                }
            }
        };
        model.state_weight = state_weight;
        model.input_weight = input_weight;
        model.constraints = constraints;
        let violations = model.validate();
        if !violations.is_empty() {
            return Err(ConfigError::Invalid(violations.iter().map(|v| v.to_string()).collect()));
        }
        Ok(model)
    }

    /// Simulation settings; an empty `x0` becomes the origin.
    pub fn sim_config(&self, model: &FuzzyMjsModel) -> Result<SimConfig, ConfigError> {
        let s = &self.simulation;
        let x0 = if s.x0.is_empty() { Vector::zeros(model.n_x) } else { Vector::from_vec(s.x0.clone()) };
        if s.mode0 == 0 {
            return Err(ConfigError::Shape("simulation.mode0 is 1-based".into()));
        }
        Ok(SimConfig {
            horizon: s.horizon,
            runs: s.runs,
            seed: s.seed,
            plant: s.plant.into(),
            controller: s.controller.into(),
            x0,
            mode0: s.mode0 - 1,
        })
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        let s = &self.synthesis;
        let mut o = SynthesisOptions::default();
        if let Some(v) = s.margin {
            o.margin = v;
        }
        if let Some(v) = s.prediction_margin {
            o.prediction_margin = v;
        }
        if let Some(a) = &s.anchors {
            o.anchors = Some(a.iter().map(|x| Vector::from_vec(x.clone())).collect());
        }
        if let Some(v) = s.mode_robust {
            o.mode_robust = v;
        }
        if let Some(c) = s.coupling {
            o.coupling = match c {
                CouplingChoice::Consistent => Coupling::Consistent,
                CouplingChoice::Independent => Coupling::Independent,
            };
        }
        if let Some(v) = s.grid {
            o.grid = v;
        }
        if let Some(v) = s.feas_tol {
            o.solver.feas_tol = v;
        }
        if let Some(v) = s.duality_tol {
            o.solver.duality_tol = v;
        }
        if let Some(v) = s.max_iters {
            o.solver.max_iters = v;
        }
        if let Some(v) = s.max_newton {
            o.solver.max_newton = v;
        }
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_config_is_the_default_arm() {
        let cfg = parse(ROBOT_ARM_TOML).unwrap();
        let model = cfg.build_model().unwrap();
        assert_eq!(model, robot_arm_model(&ArmParams::default()));
        let row: Vec<f64> = model.transition.row(3).iter().copied().collect();
        assert_eq!(row, [0.4, 0.2, 0.2, 0.2]);
        assert_eq!(model.input_weight[(0, 0)], 0.01);
        assert!(model.validate().is_empty());
        let sim = cfg.sim_config(&model).unwrap();
        assert_eq!(sim, SimConfig::new(Vector::from_vec(vec![1.5, -1.5])));
        assert_eq!(cfg.synthesis_options(), SynthesisOptions::default());
    }

    #[test]
    fn ragged_rows_are_reported() {
        let text = ROBOT_ARM_TOML.replace("phi = [[1.0, 0.0]]", "phi = [[1.0, 0.0], [1.0]]");
        let err = parse(&text).unwrap().build_model().unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = ROBOT_ARM_TOML.replace("[weights]", "[weights]\nextra = 1");
        assert!(matches!(parse(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn non_stochastic_transition_is_invalid() {
        let text = ROBOT_ARM_TOML.replace("[0.4, 0.2, 0.2, 0.2]", "[0.5, 0.2, 0.2, 0.2]");
        assert!(matches!(parse(&text).unwrap().build_model(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn matrices_kind_builds_a_scalar_model() {
        let text = r#"
            [model]
            kind = "matrices"
            a = [[[[0.9]]], [[[1.1]]]]
            b = [[[[1.0]]], [[[1.0]]]]
            transition = [[0.5, 0.5], [0.5, 0.5]]
            plant_membership = { kind = "single" }

            [weights]
            state = [[1.0]]
            input = [[1.0]]

            [constraints]
            u_bound = [1.0]
            x_bound = [2.0]
            phi = [[1.0]]

            [simulation]
            x0 = [1.0]
            mode0 = 2
            controller = "open-loop"

            [synthesis]
            coupling = "independent"
            grid = 3
        "#;
        let cfg = parse(text).unwrap();
        let model = cfg.build_model().unwrap();
        assert_eq!((model.n_x, model.n_u, model.modes()), (1, 1, 2));
        assert_eq!(model.controller_membership, Membership::Single);
        let sim = cfg.sim_config(&model).unwrap();
        assert_eq!((sim.mode0, sim.controller), (1, ControllerKind::OpenLoop));
        let o = cfg.synthesis_options();
        assert_eq!((o.coupling, o.grid), (Coupling::Independent, 3));
    }
}
