//! Run reports and their on-disk forms.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use qstat_core::dynamics::EhrenfestPoint;
use qstat_core::maxent::SolveTrace;
use qstat_core::IdentityReport;

use crate::error::CliError;
use crate::scenario::GridPoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

/// One attempted check: an identity report, a task-level comparison, or an
/// error that prevented evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub task: usize,
    pub point_index: usize,
    pub check: String,
    pub instance: String,
    pub point: GridPoint,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub abs_residual: Option<f64>,
    pub rel_residual: Option<f64>,
    pub fd_step: Option<f64>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl CheckRecord {
    pub fn from_report(task: usize, point_index: usize, point: &GridPoint, r: IdentityReport) -> Self {
        Self {
            task,
            point_index,
            check: r.identity_id.tag().to_string(),
            instance: r.instance,
            point: point.clone(),
            lhs: Some(r.lhs),
            rhs: Some(r.rhs),
            abs_residual: Some(r.abs_residual),
            rel_residual: Some(r.rel_residual),
            fd_step: r.fd_step,
            status: if r.pass { Status::Pass } else { Status::Fail },
            error: None,
            details: r.details,
        }
    }

    /// A comparison `lhs ≈ rhs` that passes when `|lhs − rhs| ≤ bound`.
    #[allow(clippy::too_many_arguments)]
    pub fn compare(
        task: usize,
        point_index: usize,
        point: &GridPoint,
        check: &str,
        instance: impl Into<String>,
        lhs: f64,
        rhs: f64,
        bound: f64,
    ) -> Self {
        let abs = (lhs - rhs).abs();
        let scale = lhs.abs().max(rhs.abs());
        Self {
            task,
            point_index,
            check: check.to_string(),
            instance: instance.into(),
            point: point.clone(),
            lhs: Some(lhs),
            rhs: Some(rhs),
            abs_residual: Some(abs),
            rel_residual: Some(if scale > 0.0 { abs / scale } else { 0.0 }),
            fd_step: None,
            status: if abs <= bound { Status::Pass } else { Status::Fail },
            error: None,
            details: BTreeMap::new(),
        }
    }

    pub fn error(
        task: usize,
        point_index: usize,
        point: &GridPoint,
        check: &str,
        instance: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Self {
            task,
            point_index,
            check: check.to_string(),
            instance: instance.into(),
            point: point.clone(),
            lhs: None,
            rhs: None,
            abs_residual: None,
            rel_residual: None,
            fd_step: None,
            status: Status::Error,
            error: Some(message.into()),
            details: BTreeMap::new(),
        }
    }

    pub fn with_detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub attempted: usize,
    pub passed: usize,
    pub failed: usize,
    pub errors: usize,
}

impl Summary {
    pub fn count(records: &[CheckRecord]) -> Self {
        let mut s = Self::default();
        for r in records {
            s.attempted += 1;
            match r.status {
                Status::Pass => s.passed += 1,
                Status::Fail => s.failed += 1,
                Status::Error => s.errors += 1,
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxEntRecord {
    pub task: usize,
    pub observables: Vec<String>,
    pub lambda: f64,
    pub targets: Vec<f64>,
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_star: Option<Vec<f64>>,
    pub entropy: f64,
    pub log_partition: f64,
    pub trace: SolveTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRecord {
    pub task: usize,
    pub observable: String,
    pub steps: usize,
    pub max_residual: f64,
    pub estimated_truncation: f64,
    pub purity_drift: f64,
    pub trace_drift: f64,
    /// Per-interval comparison; written to `trajectory.csv` rather than the
    /// structured report.
    #[serde(skip)]
    pub points: Vec<EhrenfestPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrationRecord {
    pub task: usize,
    pub point: GridPoint,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub integrated: f64,
    pub endpoint: f64,
    pub quadrature_error: f64,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub ensemble: String,
    pub scheduled_builds: usize,
    pub summary: Summary,
    pub checks: Vec<CheckRecord>,
    pub maxent: Vec<MaxEntRecord>,
    pub dynamics: Vec<DynamicsRecord>,
    pub integration: Vec<IntegrationRecord>,
    pub wall_time_seconds: f64,
}

impl RunReport {
    pub fn recount(&mut self) {
        self.summary = Summary::count(&self.checks);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckRecord::passed)
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut copy = self.clone();
        copy.recount();
        serde_json::to_string_pretty(&copy).map_err(|e| CliError::Output {
            path: "report.json".into(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let out_err = |path: &Path, e: &dyn std::fmt::Display| CliError::Output {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(|e| out_err(dir, &e))?;

        let json_path = dir.join("report.json");
        fs::write(&json_path, self.to_json()? + "\n").map_err(|e| out_err(&json_path, &e))?;

        let csv_path = dir.join("identities.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| out_err(&csv_path, &e))?;
        w.write_record([
            "identity_id",
            "instance",
            "task",
            "beta",
            "mu",
            "lambda",
            "alpha",
            "lhs",
            "rhs",
            "abs_residual",
            "rel_residual",
            "pass",
            "status",
        ])
        .map_err(|e| out_err(&csv_path, &e))?;
        for r in &self.checks {
            w.write_record([
                r.check.clone(),
                r.instance.clone(),
                r.task.to_string(),
                opt(r.point.beta),
                opt(r.point.mu),
                join(&r.point.lambda),
                r.point.alpha.as_deref().map(join).unwrap_or_default(),
                opt(r.lhs),
                opt(r.rhs),
                opt(r.abs_residual),
                opt(r.rel_residual),
                r.passed().to_string(),
                format!("{:?}", r.status).to_lowercase(),
            ])
            .map_err(|e| out_err(&csv_path, &e))?;
        }
        w.flush().map_err(|e| out_err(&csv_path, &e))?;

        if !self.dynamics.is_empty() {
            let traj_path = dir.join("trajectory.csv");
            let mut w = csv::Writer::from_path(&traj_path).map_err(|e| out_err(&traj_path, &e))?;
            w.write_record(["task", "observable", "t", "expectation", "lhs", "rhs", "residual"])
                .map_err(|e| out_err(&traj_path, &e))?;
            for d in &self.dynamics {
                for p in &d.points {
                    w.write_record([
                        d.task.to_string(),
                        d.observable.clone(),
                        num(p.t),
                        num(p.expectation),
                        num(p.lhs),
                        num(p.rhs),
                        num(p.residual),
                    ])
                    .map_err(|e| out_err(&traj_path, &e))?;
                }
            }
            w.flush().map_err(|e| out_err(&traj_path, &e))?;
        }
        Ok(())
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";")
}
