//! Scenario files: TOML documents describing a model, a parameter grid and
//! the tasks to run on it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qstat_core::identity::Tolerances;
use qstat_core::{Model, ModelSpec, Stepper};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    pub ensemble: EnsembleGrid,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub fixtures: Fixtures,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnsembleGrid {
    Canonical {
        beta: Vec<f64>,
        #[serde(default = "zero_grid")]
        lambda: Vec<f64>,
    },
    GrandCanonical {
        beta: Vec<f64>,
        mu: Vec<f64>,
        #[serde(default = "zero_grid")]
        lambda: Vec<f64>,
    },
    /// `exp(−Σ α_j F_j)` over named catalog observables.
    Generalized {
        observables: Vec<String>,
        alpha: Vec<Vec<f64>>,
        #[serde(default = "zero_grid")]
        lambda: Vec<f64>,
    },
}

fn zero_grid() -> Vec<f64> {
    vec![0.0]
}

impl EnsembleGrid {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Canonical { .. } => "canonical",
            Self::GrandCanonical { .. } => "grand-canonical",
            Self::Generalized { .. } => "generalized",
        }
    }

    pub fn lambda(&self) -> &[f64] {
        match self {
            Self::Canonical { lambda, .. } | Self::GrandCanonical { lambda, .. } | Self::Generalized { lambda, .. } => {
                lambda
            }
        }
    }

    /// Every grid point, in a fixed order (β outermost, λ innermost).
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        match self {
            Self::Canonical { beta, lambda } => {
                for &b in beta {
                    for &l in lambda {
                        out.push(GridPoint {
                            beta: Some(b),
                            mu: None,
                            alpha: None,
                            lambda: vec![l],
                        });
                    }
                }
            }
            Self::GrandCanonical { beta, mu, lambda } => {
                for &b in beta {
                    for &m in mu {
                        for &l in lambda {
                            out.push(GridPoint {
                                beta: Some(b),
                                mu: Some(m),
                                alpha: None,
                                lambda: vec![l],
                            });
                        }
                    }
                }
            }
            Self::Generalized { alpha, lambda, .. } => {
                for a in alpha {
                    for &l in lambda {
                        out.push(GridPoint {
                            beta: None,
                            mu: None,
                            alpha: Some(a.clone()),
                            lambda: vec![l],
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    pub lambda: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceConfig {
    pub atol: f64,
    pub rtol: f64,
    pub fd_step: Option<f64>,
    pub quad_tol: f64,
    pub ehrenfest_tol: f64,
    pub maxent_alpha_tol: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        let t = Tolerances::default();
        Self {
            atol: t.atol,
            rtol: t.rtol,
            fd_step: None,
            quad_tol: 1e-9,
            ehrenfest_tol: qstat_core::dynamics::DEFAULT_EHRENFEST_TOL,
            maxent_alpha_tol: 1e-8,
        }
    }
}

impl ToleranceConfig {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            atol: self.atol,
            rtol: self.rtol,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; relative paths resolve against the scenario file.
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fixtures {
    /// Flips the sign of the fluctuation term in every identity right-hand
    /// side. Negative control only.
    pub flip_rhs_sign: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Task {
    IdentitySuite {
        /// Tables to evaluate; defaults to the ensemble's own table plus 3.
        #[serde(default)]
        tables: Option<Vec<u8>>,
        /// Also check the generic identity for catalog observables.
        #[serde(default = "yes")]
        qfdt: bool,
        /// Catalog observables for the generic identity (default: all).
        #[serde(default)]
        observables: Option<Vec<String>>,
        #[serde(default = "yes")]
        heat_capacity: bool,
        #[serde(default)]
        hellmann_feynman: bool,
    },
    MaxentSolve {
        observables: Vec<String>,
        #[serde(default)]
        targets: Option<Vec<f64>>,
        /// Multipliers whose forward map supplies the targets.
        #[serde(default)]
        alpha_star: Option<Vec<f64>>,
        #[serde(default)]
        lambda: f64,
    },
    Dynamics {
        observables: Vec<String>,
        #[serde(default)]
        initial: InitialState,
        #[serde(default)]
        t_start: f64,
        t_end: f64,
        dt: f64,
        #[serde(default)]
        stepper: Stepper,
        #[serde(default)]
        lambda: f64,
        /// `λ(t) = λ + amplitude·cos(frequency·t)`.
        #[serde(default)]
        drive: Option<Drive>,
    },
    ThermoIntegration {
        lambda_min: f64,
        lambda_max: f64,
    },
}

fn yes() -> bool {
    true
}

impl Task {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::IdentitySuite { .. } => "identity-suite",
            Self::MaxentSolve { .. } => "maxent-solve",
            Self::Dynamics { .. } => "dynamics",
            Self::ThermoIntegration { .. } => "thermo-integration",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialState {
    /// Equal-weight superposition of all basis states.
    #[default]
    Superposition,
    Basis {
        index: usize,
    },
    /// Canonical state of the undriven Hamiltonian.
    Thermal {
        beta: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drive {
    pub amplitude: f64,
    pub frequency: f64,
}

/// Parses and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut scenario = parse_scenario(&text).map_err(|e| e.at(path))?;
    if let Some(dir) = &scenario.output.dir {
        if dir.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            scenario.output.dir = Some(base.join(dir));
        }
    }
    Ok(scenario)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, CliError> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| line_column(text, span.start))
            .unwrap_or((0, 0));
        CliError::Parse {
            path: None,
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn semantic(field: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Semantic {
        field: field.into(),
        message: message.into(),
    }
}

fn check_finite(field: &str, values: &[f64]) -> Result<(), CliError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(semantic(field, "values must be finite"));
    }
    Ok(())
}

fn check_nonempty<T>(field: &str, values: &[T]) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(semantic(field, "grid must not be empty"));
    }
    Ok(())
}

impl Scenario {
    pub fn instantiate_model(&self) -> Result<Model, CliError> {
        self.model
            .instantiate(self.seed)
            .map_err(|e| semantic("model", e.to_string()))
    }

    /// Number of ensemble builds one pass over the grid schedules.
    pub fn scheduled_builds(&self) -> usize {
        self.ensemble.points().len()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(semantic(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let model = self.instantiate_model()?;
        let has_number = model.number.is_some();
        check_nonempty("ensemble.lambda", self.ensemble.lambda())?;
        check_finite("ensemble.lambda", self.ensemble.lambda())?;
        match &self.ensemble {
            EnsembleGrid::Canonical { beta, .. } => {
                check_betas("ensemble.beta", beta)?;
            }
            EnsembleGrid::GrandCanonical { beta, mu, .. } => {
                if !has_number {
                    return Err(semantic("ensemble.kind", "grand-canonical requires number operator"));
                }
                check_betas("ensemble.beta", beta)?;
                check_nonempty("ensemble.mu", mu)?;
                check_finite("ensemble.mu", mu)?;
            }
            EnsembleGrid::Generalized { observables, alpha, .. } => {
                check_nonempty("ensemble.observables", observables)?;
                check_nonempty("ensemble.alpha", alpha)?;
                for name in observables {
                    if model.observable(name).is_none() {
                        return Err(semantic(
                            "ensemble.observables",
                            format!("unknown observable {name:?} for {}", model.kind),
                        ));
                    }
                }
                for (i, a) in alpha.iter().enumerate() {
                    let field = format!("ensemble.alpha[{i}]");
                    if a.len() != observables.len() {
                        return Err(semantic(
                            field,
                            format!("expected {} multipliers, got {}", observables.len(), a.len()),
                        ));
                    }
                    check_finite(&field, a)?;
                }
            }
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.atol", t.atol),
            ("tolerances.rtol", t.rtol),
            ("tolerances.quad_tol", t.quad_tol),
            ("tolerances.ehrenfest_tol", t.ehrenfest_tol),
            ("tolerances.maxent_alpha_tol", t.maxent_alpha_tol),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(semantic(name, "must be a non-negative finite number"));
            }
        }
        if let Some(h) = t.fd_step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(semantic("tolerances.fd_step", "must be positive"));
            }
        }
        for (i, task) in self.tasks.iter().enumerate() {
            self.validate_task(i, task, &model)?;
        }
        Ok(())
    }

    fn validate_task(&self, i: usize, task: &Task, model: &Model) -> Result<(), CliError> {
        let field = |name: &str| format!("tasks[{i}].{name}");
        match task {
            Task::IdentitySuite { tables, observables, .. } => {
                for &table in tables.as_deref().unwrap_or(&[]) {
                    match (table, &self.ensemble) {
                        (3, _) => {}
                        (1, EnsembleGrid::Canonical { .. }) => {}
                        (2, EnsembleGrid::GrandCanonical { .. }) => {}
                        (2, _) if model.number.is_none() => {
                            return Err(semantic(field("tables"), "grand-canonical requires number operator"))
                        }
                        (1 | 2, _) => {
                            return Err(semantic(
                                field("tables"),
                                format!("T{table} is not defined for a {} ensemble", self.ensemble.kind()),
                            ))
                        }
                        _ => return Err(semantic(field("tables"), format!("no identity table T{table}"))),
                    }
                }
                for name in observables.as_deref().unwrap_or(&[]) {
                    if model.observable(name).is_none() {
                        return Err(semantic(field("observables"), format!("unknown observable {name:?}")));
                    }
                }
            }
            Task::MaxentSolve {
                observables,
                targets,
                alpha_star,
                lambda,
            } => {
                check_nonempty(&field("observables"), observables)?;
                for name in observables {
                    if model.observable(name).is_none() {
                        return Err(semantic(field("observables"), format!("unknown observable {name:?}")));
                    }
                }
                let given = match (targets, alpha_star) {
                    (Some(t), None) => t,
                    (None, Some(a)) => a,
                    _ => {
                        return Err(semantic(
                            field("targets"),
                            "exactly one of targets or alpha_star is required",
                        ))
                    }
                };
                if given.len() != observables.len() {
                    return Err(semantic(
                        field("targets"),
                        format!("expected {} values, got {}", observables.len(), given.len()),
                    ));
                }
                check_finite(&field("targets"), given)?;
                check_finite(&field("lambda"), &[*lambda])?;
            }
            Task::Dynamics {
                observables,
                initial,
                t_start,
                t_end,
                dt,
                stepper,
                drive,
                ..
            } => {
                check_nonempty(&field("observables"), observables)?;
                for name in observables {
                    if name != "H" && model.dynamics_observable(name).is_none() {
                        return Err(semantic(field("observables"), format!("unknown observable {name:?}")));
                    }
                }
                if !(dt > &0.0 && t_end > t_start && t_start.is_finite() && t_end.is_finite()) {
                    return Err(semantic(field("dt"), "need dt > 0 and t_end > t_start"));
                }
                if (t_end - t_start) / dt > 1e7 {
                    return Err(semantic(field("dt"), "more than 1e7 time steps"));
                }
                if drive.is_some() && *stepper == Stepper::Exact {
                    return Err(semantic(
                        field("stepper"),
                        "a driven Hamiltonian needs the midpoint stepper",
                    ));
                }
                match initial {
                    InitialState::Basis { index } if *index >= model.dim() => {
                        return Err(semantic(field("initial.index"), "basis index out of range"))
                    }
                    InitialState::Thermal { beta } if !(*beta > 0.0) => {
                        return Err(semantic(field("initial.beta"), "must be positive"))
                    }
                    _ => {}
                }
            }
            Task::ThermoIntegration { lambda_min, lambda_max } => {
                check_finite(&field("lambda_min"), &[*lambda_min, *lambda_max])?;
                if matches!(self.ensemble, EnsembleGrid::Generalized { .. }) {
                    return Err(semantic(
                        field("type"),
                        "thermodynamic integration needs a canonical or grand-canonical ensemble",
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_betas(field: &str, beta: &[f64]) -> Result<(), CliError> {
    check_nonempty(field, beta)?;
    if beta.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(semantic(field, "inverse temperatures must be positive and finite"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
name = "two-level"

[model]
kind = "two-level"

[ensemble]
kind = "canonical"
beta = [1.0]
"#;

    #[test]
    fn minimal_scenario_gets_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.tolerances, ToleranceConfig::default());
        assert_eq!(s.tolerances.atol, 1e-8);
        assert!(s.tasks.is_empty());
        assert_eq!(s.ensemble.lambda(), &[0.0]);
    }

    #[test]
    fn grid_count_is_the_product() {
        let text = MINIMAL.replace("beta = [1.0]", "beta = [0.1, 1.0, 10.0]\nlambda = [0.0, 0.25, 0.5, 0.75, 1.0]");
        assert_eq!(parse_scenario(&text).unwrap().scheduled_builds(), 15);
    }

    #[test]
    fn parse_errors_carry_position() {
        let text = MINIMAL.replace("beta = [1.0]", "beta = [1.0,,]");
        match parse_scenario(&text) {
            Err(CliError::Parse { line, column, .. }) => {
                assert_eq!(line, 10);
                assert!(column > 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_two_needs_number_operator() {
        let text = format!("{MINIMAL}\n[[tasks]]\ntype = \"identity-suite\"\ntables = [2]\n");
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("grand-canonical requires number operator"), "{err}");
        let text = MINIMAL.replace("kind = \"canonical\"", "kind = \"grand-canonical\"\nmu = [0.0]");
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("grand-canonical requires number operator"), "{err}");
    }

    #[test]
    fn unknown_fields_and_versions_are_rejected() {
        assert!(parse_scenario(&MINIMAL.replace("schema_version = 1", "schema_version = 2")).is_err());
        assert!(parse_scenario(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
        let err = parse_scenario(&MINIMAL.replace("beta = [1.0]", "beta = [-1.0]")).unwrap_err();
        assert!(err.to_string().contains("ensemble.beta"));
    }
}
