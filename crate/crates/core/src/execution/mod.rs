//! Sandboxed test runs and the mutant/test schedule.

mod runtime;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use runtime::{
    engine_tag, ArtifactSet, CompiledModule, CounterSnapshot, RunKind, RunOutcome, Runtime,
    EXIT_FIELD, EXIT_MODULE,
};

use crate::error::{Error, Result};
use crate::instrumentation::{coverage, CoverageMap, DynamicCallTree};
use crate::module_store::LoadedModule;
use crate::mutation::MutationPoint;
use crate::test_framework::TestCase;

pub const DEFAULT_TIMEOUT_MS: u64 = 3000;
pub const DEFAULT_MAX_DISTANCE: u32 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecutionStatus {
    Passed,
    Failed,
    Timeout,
    Crashed,
    AbnormalExit(i32),
}

impl ExecutionStatus {
    pub fn is_passed(self) -> bool {
        self == ExecutionStatus::Passed
    }
}

impl fmt::Display for ExecutionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecutionStatus::Passed => f.write_str("Passed"),
            ExecutionStatus::Failed => f.write_str("Failed"),
            ExecutionStatus::Timeout => f.write_str("Timeout"),
            ExecutionStatus::Crashed => f.write_str("Crashed"),
            ExecutionStatus::AbnormalExit(code) => write!(f, "AbnormalExit({code})"),
        }
    }
}

impl FromStr for ExecutionStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "Passed" => ExecutionStatus::Passed,
            "Failed" => ExecutionStatus::Failed,
            "Timeout" => ExecutionStatus::Timeout,
            "Crashed" => ExecutionStatus::Crashed,
            _ => {
                let code = s
                    .strip_prefix("AbnormalExit(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| format!("unknown execution status `{s}`"))?;
                ExecutionStatus::AbnormalExit(code)
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub test: TestCase,
    pub status: ExecutionStatus,
    pub tree: DynamicCallTree,
    pub duration_ms: f64,
}

impl BaselineResult {
    /// Tests that do not pass unmutated cannot judge mutants.
    pub fn original_failure(&self) -> bool {
        !self.status.is_passed()
    }
}

/// Runs every test once against the instrumented originals and records
/// its call tree.
pub fn run_baseline(
    runtime: &Runtime,
    artifacts: &ArtifactSet,
    tests: &[TestCase],
    timeout_ms: u64,
) -> Result<Vec<BaselineResult>> {
    tests
        .iter()
        .map(|test| {
            let run = runtime.sandbox_run(artifacts, test, timeout_ms, true, RunKind::Baseline)?;
            if !run.status.is_passed() {
                log::warn!("test `{}` fails unmutated: {}", test.name, run.status);
            }
            Ok(BaselineResult {
                test: test.clone(),
                status: run.status,
                tree: run.tree.expect("recording run yields a tree"),
                duration_ms: run.duration_ms,
            })
        })
        .collect()
}

/// Coverage of each passing baseline test, keyed by test id.
pub fn passing_coverage(baseline: &[BaselineResult]) -> Vec<(usize, CoverageMap)> {
    baseline
        .iter()
        .filter(|b| !b.original_failure())
        .map(|b| (b.test.test_id, coverage(&b.tree)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub test_id: usize,
    pub distance: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedMutant {
    /// Index into the point list the plan was built from.
    pub point: usize,
    pub mp_id: String,
    /// Nearest first, ties by test id.
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub n_tests: usize,
    pub n_mutants: usize,
    pub mutants: Vec<PlannedMutant>,
}

impl SessionPlan {
    /// `(mp_id, test_id)` pairs in execution order.
    pub fn runs(&self) -> Vec<(String, usize)> {
        self.mutants
            .iter()
            .flat_map(|m| m.candidates.iter().map(|c| (m.mp_id.clone(), c.test_id)))
            .collect()
    }

    pub fn planned_runs(&self) -> usize {
        self.mutants.iter().map(|m| m.candidates.len()).sum()
    }
}

/// Candidate tests per point: those reaching its function at distance
/// `1..=max_distance`.
pub fn plan(
    coverage: &[(usize, CoverageMap)],
    points: &[MutationPoint],
    max_distance: u32,
) -> SessionPlan {
    let mutants = points
        .iter()
        .enumerate()
        .map(|(point, p)| {
            let mut candidates: Vec<Candidate> = coverage
                .iter()
                .filter_map(|(test_id, cov)| {
                    cov.distance(p.func)
                        .filter(|d| (1..=max_distance).contains(d))
                        .map(|distance| Candidate {
                            test_id: *test_id,
                            distance,
                        })
                })
                .collect();
            candidates.sort_by_key(|c| (c.distance, c.test_id));
            PlannedMutant {
                point,
                mp_id: p.mp_id.clone(),
                candidates,
            }
        })
        .collect();
    SessionPlan {
        n_tests: coverage.len(),
        n_mutants: points.len(),
        mutants,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MutantOutcome {
    Killed,
    Survived,
}

impl MutantOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            MutantOutcome::Killed => "Killed",
            MutantOutcome::Survived => "Survived",
        }
    }
}

impl fmt::Display for MutantOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestRun {
    pub test_id: usize,
    pub status: ExecutionStatus,
    pub duration_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutantResult {
    pub mp_id: String,
    pub outcome: MutantOutcome,
    pub per_test: Vec<TestRun>,
    pub runs_executed: usize,
}

impl MutantResult {
    /// First run that did not pass.
    pub fn killing_run(&self) -> Option<&TestRun> {
        self.per_test.iter().find(|r| !r.status.is_passed())
    }
}

/// Fixed inputs shared by every mutant of a session.
pub struct MutantRunner<'a> {
    pub runtime: &'a Runtime,
    /// Compiled originals; the mutated module is swapped in per mutant.
    pub base: &'a ArtifactSet,
    pub modules: &'a [LoadedModule],
    pub tests: &'a [TestCase],
    pub fail_fast: bool,
    pub timeout_ms: u64,
}

impl MutantRunner<'_> {
    /// Compiles the mutant for `planned` and runs its candidates in order.
    /// With `fail_fast`, stops at the first run that does not pass.
    pub fn execute_mutant(
        &self,
        point: &MutationPoint,
        planned: &PlannedMutant,
    ) -> Result<MutantResult> {
        execute_mutant(self, point, planned)
    }
}

fn execute_mutant(
    runner: &MutantRunner,
    point: &MutationPoint,
    planned: &PlannedMutant,
) -> Result<MutantResult> {
    let MutantRunner {
        runtime,
        base,
        modules,
        tests,
        fail_fast,
        timeout_ms,
    } = *runner;
    let module = modules
        .iter()
        .find(|m| m.id == point.func.module)
        .ok_or_else(|| Error::RewriteFailure {
            mp_id: point.mp_id.clone(),
            reason: "module not loaded".into(),
        })?;
    let artifacts = base.with_replacement(runtime.compile_mutant(module, point)?);
    let by_id: BTreeMap<usize, &TestCase> = tests.iter().map(|t| (t.test_id, t)).collect();

    let mut per_test = Vec::with_capacity(planned.candidates.len());
    for candidate in &planned.candidates {
        let test = by_id
            .get(&candidate.test_id)
            .ok_or_else(|| Error::UnknownTestFunction(format!("test id {}", candidate.test_id)))?;
        let run = runtime.sandbox_run(&artifacts, test, timeout_ms, false, RunKind::Mutant)?;
        per_test.push(TestRun {
            test_id: test.test_id,
            status: run.status,
            duration_ms: run.duration_ms,
        });
        if fail_fast && !run.status.is_passed() {
            break;
        }
    }
    let killed = per_test.iter().any(|r| !r.status.is_passed());
    Ok(MutantResult {
        mp_id: point.mp_id.clone(),
        outcome: if killed {
            MutantOutcome::Killed
        } else {
            MutantOutcome::Survived
        },
        runs_executed: per_test.len(),
        per_test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Estimate {
    pub n_tests: usize,
    pub n_mutants: usize,
    pub planned_runs: usize,
    /// Every planned run hitting the timeout.
    pub worst_case_ms: u64,
}

pub fn dry_run(plan: &SessionPlan, timeout_ms: u64) -> Estimate {
    let planned_runs = plan.planned_runs();
    Estimate {
        n_tests: plan.n_tests,
        n_mutants: plan.n_mutants,
        planned_runs,
        worst_case_ms: planned_runs as u64 * timeout_ms,
    }
}
