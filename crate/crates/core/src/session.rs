//! End-to-end session: load, instrument, compile, find tests, baseline,
//! enumerate, mutate, persist.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use crate::config::SessionConfig;
use crate::error::{Error, Result};
use crate::execution::{
    dry_run, passing_coverage, plan, run_baseline, ArtifactSet, BaselineResult, CounterSnapshot,
    Estimate, MutantResult, MutantRunner, Runtime, SessionPlan,
};
use crate::instrumentation::{instrument, reachable_functions};
use crate::module_store::{load_modules_from, FuncRef, LoadedModule};
use crate::mutation::{enumerate_points, ExcludeFilter, MutationPoint};
use crate::reporting::{persist, ExecutionRow, PointRow, SessionRecord, TestRow};
use crate::test_framework::{find_tests_custom, find_tests_simple, Framework, TestCase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Step {
    Load,
    Instrument,
    Compile,
    FindTests,
    Baseline,
    Enumerate,
    Mutate,
    Persist,
}

impl Step {
    pub fn as_str(self) -> &'static str {
        match self {
            Step::Load => "load",
            Step::Instrument => "instrument",
            Step::Compile => "compile",
            Step::FindTests => "find_tests",
            Step::Baseline => "baseline",
            Step::Enumerate => "enumerate",
            Step::Mutate => "mutate",
            Step::Persist => "persist",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEvent {
    pub step: Step,
    pub event: String,
    pub detail: String,
}

impl fmt::Display for LogEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.step.as_str(), self.event, self.detail)
    }
}

/// Structured session log. Every event is kept; with `echo` each one is
/// also written to stderr as `<step>:<event>:<detail>`.
#[derive(Debug, Default)]
pub struct EventLog {
    pub echo: bool,
    pub events: Vec<LogEvent>,
}

impl EventLog {
    pub fn new(echo: bool) -> Self {
        EventLog {
            echo,
            events: Vec::new(),
        }
    }

    pub fn emit(&mut self, step: Step, event: &str, detail: impl fmt::Display) {
        let e = LogEvent {
            step,
            event: event.to_string(),
            detail: detail.to_string(),
        };
        if self.echo {
            eprintln!("{e}");
        }
        self.events.push(e);
    }

    /// Steps in first-occurrence order.
    pub fn step_order(&self) -> Vec<Step> {
        let mut seen = Vec::new();
        for e in &self.events {
            if seen.last() != Some(&e.step) && !seen.contains(&e.step) {
                seen.push(e.step);
            }
        }
        seen
    }
}

pub struct SessionOutcome {
    pub record: SessionRecord,
    pub tests: Vec<TestCase>,
    pub baseline: Vec<BaselineResult>,
    pub points: Vec<MutationPoint>,
    pub plan: SessionPlan,
    pub estimate: Estimate,
    /// Empty in a dry run.
    pub results: Vec<MutantResult>,
    pub counters: CounterSnapshot,
    /// Wall time of compiling and running all mutants.
    pub mutant_phase_ms: f64,
    pub log: EventLog,
}

/// Runs a whole session and writes its results database to `db_path`.
pub fn run_session(config: &SessionConfig, db_path: &Path, echo: bool) -> Result<SessionOutcome> {
    let mut log = EventLog::new(echo);
    let runtime = Runtime::new(config.cache_directory.as_deref())?;

    log.emit(Step::Load, "start", config.bitcode_files.len());
    let modules = load_modules_from(&config.module_entries())?;
    for m in &modules {
        log.emit(
            Step::Load,
            "module",
            format!("{} {}", m.path_display(), m.checksum),
        );
    }

    let mut instrumented = Vec::with_capacity(modules.len());
    for m in &modules {
        let inst = instrument(m)?;
        log.emit(
            Step::Instrument,
            "module",
            format!("{} probes={}", m.path_display(), inst.probes.len()),
        );
        instrumented.push(inst.bytes);
    }

    let mut compiled = Vec::with_capacity(modules.len());
    for (m, bytes) in modules.iter().zip(instrumented) {
        let hits = runtime.counters().cache_hits;
        compiled.push(runtime.compile_original_with(m, || Ok(bytes))?);
        let source = if runtime.counters().cache_hits > hits {
            "cached"
        } else {
            "compiled"
        };
        log.emit(Step::Compile, source, m.path_display());
    }
    let artifacts = ArtifactSet { modules: compiled };

    let tests = match config.test_framework {
        Framework::SimpleTest => find_tests_simple(&modules)?,
        Framework::CustomTest => find_tests_custom(&modules, &config.custom_tests)?,
    };
    if tests.is_empty() {
        return Err(Error::NoTestsFound);
    }
    log.emit(Step::FindTests, "done", tests.len());

    let baseline = run_baseline(&runtime, &artifacts, &tests, config.timeout_ms)?;
    for b in &baseline {
        log.emit(
            Step::Baseline,
            "test",
            format!("{} {}", b.test.name, b.status),
        );
    }
    let coverage = passing_coverage(&baseline);
    log.emit(
        Step::Baseline,
        "done",
        format!("passing={}", coverage.len()),
    );

    let covered: BTreeSet<FuncRef> = coverage
        .iter()
        .flat_map(|(_, cov)| reachable_functions(cov, config.max_distance))
        .collect();
    let excludes = ExcludeFilter::new(&config.exclude_functions)?;
    let points = enumerate_points(&modules, &config.mutation_operators, &covered, &excludes)?;
    log.emit(Step::Enumerate, "done", points.len());

    let session_plan = plan(&coverage, &points, config.max_distance);
    let estimate = dry_run(&session_plan, config.timeout_ms);
    log.emit(
        Step::Mutate,
        "plan",
        format!(
            "mutants={} runs={}",
            session_plan.n_mutants,
            session_plan.planned_runs()
        ),
    );

    let mut results = Vec::new();
    let start = Instant::now();
    if config.dry_run {
        log.emit(
            Step::Mutate,
            "estimate",
            format!("worst_case_ms={}", estimate.worst_case_ms),
        );
    } else {
        let runner = MutantRunner {
            runtime: &runtime,
            base: &artifacts,
            modules: &modules,
            tests: &tests,
            fail_fast: config.fail_fast,
            timeout_ms: config.timeout_ms,
        };
        for planned in &session_plan.mutants {
            let point = &points[planned.point];
            let result = runner.execute_mutant(point, planned)?;
            log.emit(
                Step::Mutate,
                "mutant",
                format!("{} {}", result.mp_id, result.outcome),
            );
            results.push(result);
        }
    }
    let mutant_phase_ms = start.elapsed().as_secs_f64() * 1000.0;
    log.emit(Step::Mutate, "done", results.len());

    let record = build_record(
        config,
        &modules,
        &baseline,
        &points,
        &session_plan,
        &estimate,
        &results,
    );
    persist(&record, db_path)?;
    log.emit(Step::Persist, "done", db_path.display());

    Ok(SessionOutcome {
        record,
        tests,
        baseline,
        points,
        plan: session_plan,
        estimate,
        results,
        counters: runtime.counters(),
        mutant_phase_ms,
        log,
    })
}

fn build_record(
    config: &SessionConfig,
    modules: &[LoadedModule],
    baseline: &[BaselineResult],
    points: &[MutationPoint],
    session_plan: &SessionPlan,
    estimate: &Estimate,
    results: &[MutantResult],
) -> SessionRecord {
    let mut record = SessionRecord::default();
    record.config.extend(config.to_pairs());
    for (k, v) in [
        ("session.n_tests", estimate.n_tests),
        ("session.n_mutants", estimate.n_mutants),
        ("session.planned_runs", estimate.planned_runs),
    ] {
        record.config.insert(k.into(), v.to_string());
    }
    record.config.insert(
        "session.worst_case_ms".into(),
        estimate.worst_case_ms.to_string(),
    );

    for b in baseline {
        let module = modules
            .iter()
            .find(|m| m.id == b.test.entry.module)
            .map(LoadedModule::path_display)
            .unwrap_or_default();
        record.tests.push(TestRow {
            test_id: b.test.test_id,
            name: b.test.name.clone(),
            entry: format!("{module}:{}", b.test.export),
            arguments: b.test.arguments.clone(),
            baseline_status: b.status,
            baseline_duration_ms: b.duration_ms,
        });
        record.executions.push(ExecutionRow {
            exec_id: record.executions.len(),
            test_id: b.test.test_id,
            mp_id: None,
            status: b.status,
            duration_ms: b.duration_ms,
        });
    }

    for (planned, point) in session_plan.mutants.iter().zip(points) {
        let result = results.iter().find(|r| r.mp_id == point.mp_id);
        record.points.push(PointRow {
            mp_id: point.mp_id.clone(),
            operator: point.operator.as_str().to_string(),
            module_path: point.module_path.clone(),
            function_name: point.function_name.clone(),
            instr_index: point.instr_index,
            status: result.map(|r| r.outcome),
            min_distance: planned.candidates.first().map(|c| c.distance),
        });
    }
    for r in results {
        for run in &r.per_test {
            record.executions.push(ExecutionRow {
                exec_id: record.executions.len(),
                test_id: run.test_id,
                mp_id: Some(r.mp_id.clone()),
                status: run.status,
                duration_ms: run.duration_ms,
            });
        }
    }
    record
}
