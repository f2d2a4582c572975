//! Mutation testing for WebAssembly modules.
//!
//! A session loads the modules under test, injects entry/exit probes,
//! runs every test once to record its dynamic call tree, enumerates
//! mutation points in the functions the tests reach, and runs each mutant
//! against the tests that reach its function, nearest first. Results go to
//! a SQLite database from which an HTML report is generated.

pub mod cache;
pub mod config;
pub mod error;
pub mod execution;
pub mod instrumentation;
pub mod module_store;
pub mod mutation;
pub mod reporting;
pub mod session;
pub mod test_framework;

pub use cache::{ArtifactCache, CacheKey, Variant};
pub use config::{parse_config, parse_config_str, SessionConfig};
pub use error::{Error, Result};
pub use execution::{
    dry_run, plan, run_baseline, ArtifactSet, BaselineResult, Candidate, CounterSnapshot, Estimate,
    ExecutionStatus, MutantOutcome, MutantResult, MutantRunner, PlannedMutant, RunOutcome, Runtime,
    SessionPlan, TestRun,
};
pub use instrumentation::{
    build_call_tree, coverage, instrument, reachable_functions, CoverageMap, DynamicCallTree,
    ProbeEvent, ProbeKind,
};
pub use module_store::{checksum, load_modules, FuncRef, LoadedModule, ModuleId};
pub use mutation::{
    enumerate_points, match_and_rewrite, ExcludeFilter, MutationDetail, MutationPoint, OperatorId,
    ScalarValue,
};
pub use reporting::{
    generate_html, load as load_results, mutation_score, persist, ScoreSummary, SessionRecord,
};
pub use session::{run_session, EventLog, LogEvent, SessionOutcome, Step};
pub use test_framework::{
    find_tests_custom, find_tests_simple, CustomTestConfig, Framework, TestArgument, TestCase,
};
