//! Executes a scenario: fans grid points out over a thread pool, collects
//! every check into a [`RunReport`].

use std::time::Instant;

use rayon::prelude::*;

use qstat_core::dynamics::{uniform_grid, PROPAGATION_TRACE_TOL};
use qstat_core::identity::{
    generalized_identities, heat_capacity_report, hellmann_feynman_mixed, hellmann_feynman_pure,
};
use qstat_core::{
    build_canonical, build_ensemble, check_identity, check_qfdt, ehrenfest_check, evolve, expectation,
    grand_thermodynamic_integration, solve, thermodynamic_integration, CheckOptions, Constants, DensityMatrix,
    EnsembleSpec, EvolutionSetup, Hamiltonian, HermitianOperator, MaxEntProblem, Model, ModelContext,
    OperatorFamily, QuadratureOptions, TimeObservable, C64,
};

use crate::error::CliError;
use crate::report::{CheckRecord, DynamicsRecord, IntegrationRecord, MaxEntRecord, RunReport, Summary};
use crate::scenario::{Drive, EnsembleGrid, GridPoint, InitialState, Scenario, Task};

/// Absolute bound on `|S − (Σ α⟨F⟩ + ln Z)|`, scaled by `max(1, |S|)`.
pub const ENTROPY_IDENTITY_TOL: f64 = 1e-10;
/// Purity may drift by at most this much along a unitary trajectory.
pub const PURITY_DRIFT_TOL: f64 = 1e-9;

/// Command-line overrides applied on top of the scenario file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub fd_step: Option<f64>,
    pub atol: Option<f64>,
    pub rtol: Option<f64>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, scenario: &mut Scenario) -> Result<(), CliError> {
        if let Some(h) = self.fd_step {
            scenario.tolerances.fd_step = Some(h);
        }
        if let Some(a) = self.atol {
            scenario.tolerances.atol = a;
        }
        if let Some(r) = self.rtol {
            scenario.tolerances.rtol = r;
        }
        if let Some(s) = self.seed {
            scenario.seed = s;
        }
        scenario.validate()
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Stop after the first unit of work that produced a non-passing check.
    pub fail_fast: bool,
    /// Worker threads; rayon's default when unset.
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
enum Unit {
    Identities { task: usize, point: usize },
    MaxEnt { task: usize },
    Dynamics { task: usize },
    Integration { task: usize, pair: usize },
}

#[derive(Default)]
struct UnitOutput {
    checks: Vec<CheckRecord>,
    maxent: Vec<MaxEntRecord>,
    dynamics: Vec<DynamicsRecord>,
    integration: Vec<IntegrationRecord>,
}

impl UnitOutput {
    fn clean(&self) -> bool {
        self.checks.iter().all(CheckRecord::passed)
    }
}

struct Runner<'a> {
    scenario: &'a Scenario,
    model: Model,
    points: Vec<GridPoint>,
    /// Distinct `(β, μ)` pairs for thermodynamic integration.
    pairs: Vec<GridPoint>,
    opts: CheckOptions,
}

pub fn run(scenario: &Scenario, options: &RunOptions) -> Result<RunReport, CliError> {
    let started = Instant::now();
    scenario.validate()?;
    let runner = Runner::new(scenario)?;
    let units = runner.units();

    let outputs: Vec<UnitOutput> = if options.fail_fast {
        let mut out = Vec::new();
        for unit in &units {
            let o = runner.execute(*unit);
            let stop = !o.clean();
            out.push(o);
            if stop {
                break;
            }
        }
        out
    } else {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = options.threads {
            builder = builder.num_threads(n);
        }
        let pool = builder
            .build()
            .map_err(|e| CliError::Aborted(format!("thread pool: {e}")))?;
        pool.install(|| units.par_iter().map(|u| runner.execute(*u)).collect())
    };

    let mut report = RunReport {
        schema_version: crate::scenario::SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        ensemble: scenario.ensemble.kind().to_string(),
        scheduled_builds: scenario.scheduled_builds(),
        summary: Summary::default(),
        checks: Vec::new(),
        maxent: Vec::new(),
        dynamics: Vec::new(),
        integration: Vec::new(),
        wall_time_seconds: 0.0,
    };
    for o in outputs {
        report.checks.extend(o.checks);
        report.maxent.extend(o.maxent);
        report.dynamics.extend(o.dynamics);
        report.integration.extend(o.integration);
    }
    report.checks.sort_by(|a, b| {
        (a.task, a.point_index, &a.check, &a.instance).cmp(&(b.task, b.point_index, &b.check, &b.instance))
    });
    report.recount();
    report.wall_time_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

impl<'a> Runner<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self, CliError> {
        let model = scenario.instantiate_model()?;
        let points = scenario.ensemble.points();
        let mut pairs: Vec<GridPoint> = Vec::new();
        for p in &points {
            let key = GridPoint {
                lambda: Vec::new(),
                ..p.clone()
            };
            if !pairs.contains(&key) {
                pairs.push(key);
            }
        }
        let opts = CheckOptions {
            tolerances: scenario.tolerances.tolerances(),
            fd_step: scenario.tolerances.fd_step,
            flip_rhs_sign: scenario.fixtures.flip_rhs_sign,
        };
        Ok(Self {
            scenario,
            model,
            points,
            pairs,
            opts,
        })
    }

    fn units(&self) -> Vec<Unit> {
        let mut units = Vec::new();
        for (task, t) in self.scenario.tasks.iter().enumerate() {
            match t {
                Task::IdentitySuite { .. } => {
                    units.extend((0..self.points.len()).map(|point| Unit::Identities { task, point }))
                }
                Task::MaxentSolve { .. } => units.push(Unit::MaxEnt { task }),
                Task::Dynamics { .. } => units.push(Unit::Dynamics { task }),
                Task::ThermoIntegration { .. } => {
                    units.extend((0..self.pairs.len()).map(|pair| Unit::Integration { task, pair }))
                }
            }
        }
        units
    }

    fn execute(&self, unit: Unit) -> UnitOutput {
        match unit {
            Unit::Identities { task, point } => self.identities(task, point),
            Unit::MaxEnt { task } => self.maxent(task),
            Unit::Dynamics { task } => self.dynamics(task),
            Unit::Integration { task, pair } => self.integration(task, pair),
        }
    }

    fn context(&self, point: &GridPoint) -> qstat_core::Result<ModelContext> {
        let hamiltonian = self.model.hamiltonian.clone();
        let lambda = point.lambda.clone();
        Ok(match &self.scenario.ensemble {
            EnsembleGrid::Canonical { .. } => ModelContext::Canonical {
                hamiltonian,
                beta: point.beta.unwrap_or_default(),
                lambda,
            },
            EnsembleGrid::GrandCanonical { .. } => ModelContext::GrandCanonical {
                hamiltonian,
                number: self.model.number.clone().ok_or_else(|| {
                    qstat_core::Error::Configuration("grand-canonical requires number operator".into())
                })?,
                beta: point.beta.unwrap_or_default(),
                mu: point.mu.unwrap_or_default(),
                lambda,
            },
            EnsembleGrid::Generalized { observables, .. } => {
                let families = self.families(observables);
                ModelContext::Generalized(EnsembleSpec::new(
                    point.alpha.clone().unwrap_or_default(),
                    families,
                    lambda,
                )?)
            }
        })
    }

    /// Catalog families by name; names were checked during validation.
    fn families(&self, names: &[String]) -> Vec<OperatorFamily> {
        names
            .iter()
            .filter_map(|n| self.model.observable(n).cloned())
            .collect()
    }

    fn identities(&self, task: usize, index: usize) -> UnitOutput {
        let Task::IdentitySuite {
            tables,
            qfdt,
            observables,
            heat_capacity,
            hellmann_feynman,
        } = &self.scenario.tasks[task]
        else {
            unreachable!("unit/task mismatch")
        };
        let point = &self.points[index];
        let mut out = UnitOutput::default();
        let record_err = |check: &str, instance: &str, e: &dyn std::fmt::Display| {
            CheckRecord::error(task, index, point, check, instance, e.to_string())
        };

        let ctx = match self.context(point).and_then(|c| c.spec().map(|s| (c, s))) {
            Ok(pair) => pair,
            Err(e) => {
                out.checks.push(record_err("ENSEMBLE", "", &e));
                return out;
            }
        };
        let (ctx, spec) = ctx;

        // Entropy identity on the built state.
        match build_ensemble(&spec) {
            Ok(ens) => {
                let linear: f64 = spec
                    .alphas()
                    .iter()
                    .zip(&ens.observables)
                    .map(|(a, f)| expectation(f, &ens.rho).map(|m| a * m))
                    .sum::<qstat_core::Result<f64>>()
                    .unwrap_or(f64::NAN);
                let s = ens.rho.entropy();
                out.checks.push(CheckRecord::compare(
                    task,
                    index,
                    point,
                    "ENTROPY-IDENTITY",
                    "",
                    s,
                    linear + ens.thermo.log_partition,
                    ENTROPY_IDENTITY_TOL * s.abs().max(1.0),
                ));
            }
            Err(e) => {
                out.checks.push(record_err("ENSEMBLE", "", &e));
                return out;
            }
        }

        let native_table = match &ctx {
            ModelContext::Canonical { .. } => Some(1),
            ModelContext::GrandCanonical { .. } => Some(2),
            ModelContext::Generalized(_) => None,
        };
        let wanted: Vec<u8> = tables
            .clone()
            .unwrap_or_else(|| native_table.into_iter().chain([3]).collect());
        let mut list = Vec::new();
        for table in wanted {
            if table == 3 {
                list.extend(generalized_identities(spec.n_observables(), spec.n_lambda()));
            } else if Some(table) == native_table {
                list.extend(ctx.native_identities());
            }
        }
        for identity in list {
            match check_identity(identity, &ctx, &self.opts) {
                Ok(r) => out.checks.push(CheckRecord::from_report(task, index, point, r)),
                Err(e) => out.checks.push(record_err(identity.id.tag(), &identity.label(), &e)),
            }
        }

        if *qfdt {
            let catalog: Vec<&OperatorFamily> = match observables {
                Some(names) => names.iter().filter_map(|n| self.model.observable(n)).collect(),
                None => self.model.observables.iter().collect(),
            };
            for a in catalog {
                for dir in ctx.directions() {
                    match check_qfdt(a, &spec, &dir, &self.opts) {
                        Ok(r) => out.checks.push(CheckRecord::from_report(task, index, point, r)),
                        Err(e) => out.checks.push(record_err(
                            "QFDT",
                            &format!("A={},gamma={}", a.name(), dir.name),
                            &e,
                        )),
                    }
                }
            }
        }

        if *heat_capacity {
            if let ModelContext::Canonical { hamiltonian, beta, lambda } = &ctx {
                match heat_capacity_report(hamiltonian, *beta, lambda, &Constants::default(), &self.opts) {
                    Ok(r) => out.checks.push(CheckRecord::from_report(task, index, point, r)),
                    Err(e) => out.checks.push(record_err("HEAT-CAPACITY", "", &e)),
                }
            }
        }

        if *hellmann_feynman {
            let h = &self.model.hamiltonian;
            let mixed = DensityMatrix::maximally_mixed(h.dim());
            for i in 0..point.lambda.len() {
                match hellmann_feynman_mixed(h, &mixed, &point.lambda, i, &self.opts) {
                    Ok(r) => out.checks.push(CheckRecord::from_report(task, index, point, r)),
                    Err(e) => out.checks.push(record_err("HF-MIXED", &format!("lambda[{i}]"), &e)),
                }
                match hellmann_feynman_pure(h, 0, &point.lambda, i, &self.opts) {
                    Ok(r) => out.checks.push(CheckRecord::from_report(task, index, point, r)),
                    Err(e) => out.checks.push(record_err("HF-PURE", &format!("n=0,lambda[{i}]"), &e)),
                }
            }
        }
        out
    }

    fn maxent(&self, task: usize) -> UnitOutput {
        let Task::MaxentSolve {
            observables,
            targets,
            alpha_star,
            lambda,
        } = &self.scenario.tasks[task]
        else {
            unreachable!("unit/task mismatch")
        };
        let mut out = UnitOutput::default();
        let mut point = GridPoint {
            beta: None,
            mu: None,
            alpha: alpha_star.clone(),
            lambda: vec![*lambda],
        };
        let families = self.families(observables);

        let setup = || -> qstat_core::Result<(MaxEntProblem, Vec<f64>)> {
            let ops = families
                .iter()
                .map(|f| f.at(&point.lambda))
                .collect::<qstat_core::Result<Vec<HermitianOperator>>>()?;
            let targets = match (targets, alpha_star) {
                (Some(t), _) => t.clone(),
                (None, Some(a)) => {
                    let ens = build_ensemble(&EnsembleSpec::new(a.clone(), families.clone(), point.lambda.clone())?)?;
                    ens.observables
                        .iter()
                        .map(|f| expectation(f, &ens.rho))
                        .collect::<qstat_core::Result<Vec<f64>>>()?
                }
                (None, None) => unreachable!("validated"),
            };
            let problem = MaxEntProblem::new(ops, targets.clone())?.with_names(observables.clone())?;
            Ok((problem, targets))
        };
        let (problem, targets) = match setup() {
            Ok(p) => p,
            Err(e) => {
                out.checks
                    .push(CheckRecord::error(task, 0, &point, "MAXENT-RESIDUAL", "", e.to_string()));
                return out;
            }
        };
        let solution = match solve(&problem) {
            Ok(s) => s,
            Err(e) => {
                out.checks
                    .push(CheckRecord::error(task, 0, &point, "MAXENT-RESIDUAL", "", e.to_string()));
                return out;
            }
        };
        point.alpha = Some(solution.alpha.clone());

        let mut linear = 0.0;
        for (j, (name, op)) in observables.iter().zip(&problem.families).enumerate() {
            let mean = expectation(op, &solution.rho).unwrap_or(f64::NAN);
            linear += solution.alpha[j] * mean;
            let mut rec = CheckRecord::compare(
                task,
                0,
                &point,
                "MAXENT-RESIDUAL",
                format!("F={name}"),
                mean,
                targets[j],
                problem.grad_tol,
            );
            if !solution.trace.converged {
                rec.status = crate::report::Status::Fail;
            }
            out.checks.push(rec);
            if let Some(star) = alpha_star {
                out.checks.push(CheckRecord::compare(
                    task,
                    0,
                    &point,
                    "MAXENT-ROUNDTRIP",
                    format!("alpha[{j}]"),
                    solution.alpha[j],
                    star[j],
                    self.scenario.tolerances.maxent_alpha_tol,
                ));
            }
        }
        out.checks.push(
            CheckRecord::compare(
                task,
                0,
                &point,
                "ENTROPY-IDENTITY",
                "",
                solution.entropy,
                linear + solution.log_partition,
                ENTROPY_IDENTITY_TOL * solution.entropy.abs().max(1.0),
            )
            .with_detail("iterations", solution.trace.iterates.len() as f64)
            .with_detail("jacobian_condition", solution.trace.jacobian_condition),
        );
        out.maxent.push(MaxEntRecord {
            task,
            observables: observables.clone(),
            lambda: *lambda,
            targets,
            alpha: solution.alpha,
            alpha_star: alpha_star.clone(),
            entropy: solution.entropy,
            log_partition: solution.log_partition,
            trace: solution.trace,
        });
        out
    }

    fn dynamics(&self, task: usize) -> UnitOutput {
        let Task::Dynamics {
            observables,
            initial,
            t_start,
            t_end,
            dt,
            stepper,
            lambda,
            drive,
        } = &self.scenario.tasks[task]
        else {
            unreachable!("unit/task mismatch")
        };
        let mut out = UnitOutput::default();
        let point = GridPoint {
            beta: None,
            mu: None,
            alpha: None,
            lambda: vec![*lambda],
        };
        let family = self.model.hamiltonian.clone();
        let dim = family.dim();
        let path = LambdaPath {
            base: *lambda,
            drive: *drive,
        };

        let prepared = || -> qstat_core::Result<(EvolutionSetup, Vec<DensityMatrix>)> {
            let hamiltonian = if drive.is_some() {
                let fam = family.clone();
                Hamiltonian::driven(dim, move |t| fam.at(&[path.at(t)]).expect("one-parameter family"))
            } else {
                Hamiltonian::Static(family.at(&[*lambda])?)
            };
            let rho0 = match initial {
                InitialState::Superposition => {
                    let amp = C64::new(1.0 / (dim as f64).sqrt(), 0.0);
                    DensityMatrix::pure(&vec![amp; dim])?
                }
                InitialState::Basis { index } => {
                    let mut v = vec![C64::new(0.0, 0.0); dim];
                    v[*index] = C64::new(1.0, 0.0);
                    DensityMatrix::pure(&v)?
                }
                InitialState::Thermal { beta } => build_canonical(&family, *beta, &[*lambda])?.0,
            };
            let steps = ((t_end - t_start) / dt).round().max(1.0) as usize;
            let setup = EvolutionSetup::new(hamiltonian, rho0, uniform_grid(*t_start, *t_end, steps + 1), *stepper)?;
            let states = evolve(&setup)?;
            Ok((setup, states))
        };
        let (setup, states) = match prepared() {
            Ok(x) => x,
            Err(e) => {
                out.checks
                    .push(CheckRecord::error(task, 0, &point, "EHRENFEST", "", e.to_string()));
                return out;
            }
        };

        let tol = self.scenario.tolerances.ehrenfest_tol;
        for name in observables {
            let obs = if name == "H" {
                let fam = family.clone();
                let dfam = family.clone();
                TimeObservable::new("H", dim, move |t| fam.at(&[path.at(t)]).expect("one-parameter family"))
                    .with_derivative(move |t| {
                        dfam.derivative(&[path.at(t)], 0)
                            .expect("one-parameter family")
                            .scale(path.rate(t))
                    })
            } else {
                match self.model.dynamics_observable(name) {
                    Some(op) => TimeObservable::constant(name.clone(), op.clone()),
                    None => {
                        out.checks.push(CheckRecord::error(
                            task,
                            0,
                            &point,
                            "EHRENFEST",
                            format!("A={name}"),
                            "unknown observable",
                        ));
                        continue;
                    }
                }
            };
            match ehrenfest_check(&setup, &states, &obs, tol) {
                Ok(r) => {
                    let worst = r
                        .points
                        .iter()
                        .max_by(|a, b| a.residual.total_cmp(&b.residual))
                        .copied();
                    let (lhs, rhs) = worst.map_or((0.0, 0.0), |p| (p.lhs, p.rhs));
                    let mut rec = CheckRecord::compare(task, 0, &point, "EHRENFEST", format!("A={name}"), lhs, rhs, tol)
                        .with_detail("max_residual", r.max_residual)
                        .with_detail("estimated_truncation", r.estimated_truncation)
                        .with_detail("trace_drift", r.trace_drift)
                        .with_detail("purity_drift", r.purity_drift);
                    rec.abs_residual = Some(r.max_residual);
                    let ok = r.max_residual <= tol
                        && r.trace_drift <= PROPAGATION_TRACE_TOL
                        && r.purity_drift <= PURITY_DRIFT_TOL;
                    rec.status = if ok {
                        crate::report::Status::Pass
                    } else {
                        crate::report::Status::Fail
                    };
                    out.checks.push(rec);
                    out.dynamics.push(DynamicsRecord {
                        task,
                        observable: name.clone(),
                        steps: states.len() - 1,
                        max_residual: r.max_residual,
                        estimated_truncation: r.estimated_truncation,
                        purity_drift: r.purity_drift,
                        trace_drift: r.trace_drift,
                        points: r.points,
                    });
                }
                Err(e) => out.checks.push(CheckRecord::error(
                    task,
                    0,
                    &point,
                    "EHRENFEST",
                    format!("A={name}"),
                    e.to_string(),
                )),
            }
        }
        out
    }

    fn integration(&self, task: usize, pair: usize) -> UnitOutput {
        let Task::ThermoIntegration { lambda_min, lambda_max } = &self.scenario.tasks[task] else {
            unreachable!("unit/task mismatch")
        };
        let mut out = UnitOutput::default();
        let point = GridPoint {
            lambda: vec![*lambda_min, *lambda_max],
            ..self.pairs[pair].clone()
        };
        let quad = QuadratureOptions {
            tol: self.scenario.tolerances.quad_tol,
            ..QuadratureOptions::default()
        };
        let h = &self.model.hamiltonian;
        let beta = point.beta.unwrap_or_default();
        let range = (*lambda_min, *lambda_max);
        let result = match (&self.scenario.ensemble, &self.model.number) {
            (EnsembleGrid::GrandCanonical { .. }, Some(n)) => {
                grand_thermodynamic_integration(h, n, beta, point.mu.unwrap_or_default(), &[0.0], 0, range, &quad)
            }
            _ => thermodynamic_integration(h, beta, &[0.0], 0, range, &quad),
        };
        match result {
            Ok(d) => {
                out.checks.push(
                    CheckRecord::compare(
                        task,
                        pair,
                        &point,
                        "THERMO-INTEGRATION",
                        "lambda[0]",
                        d.integrated,
                        d.endpoint,
                        (10.0 * quad.tol).max(1e-8),
                    )
                    .with_detail("quadrature_error", d.quadrature_error)
                    .with_detail("evaluations", d.evaluations as f64),
                );
                out.integration.push(IntegrationRecord {
                    task,
                    point,
                    lambda_min: *lambda_min,
                    lambda_max: *lambda_max,
                    integrated: d.integrated,
                    endpoint: d.endpoint,
                    quadrature_error: d.quadrature_error,
                    evaluations: d.evaluations,
                });
            }
            Err(e) => out.checks.push(CheckRecord::error(
                task,
                pair,
                &point,
                "THERMO-INTEGRATION",
                "lambda[0]",
                e.to_string(),
            )),
        }
        out
    }
}

/// `λ(t) = λ₀ + A cos(ωt)`.
#[derive(Clone, Copy, Debug)]
struct LambdaPath {
    base: f64,
    drive: Option<Drive>,
}

impl LambdaPath {
    fn at(&self, t: f64) -> f64 {
        match self.drive {
            Some(d) => self.base + d.amplitude * (d.frequency * t).cos(),
            None => self.base,
        }
    }

    fn rate(&self, t: f64) -> f64 {
        match self.drive {
            Some(d) => -d.amplitude * d.frequency * (d.frequency * t).sin(),
            None => 0.0,
        }
    }
}
