use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wasmtime::{
    Caller, Config, Engine, Extern, Func, Instance, Module, OptLevel, Store, Trap, UpdateDeadline,
    Val, ValType,
};

use super::ExecutionStatus;
use crate::cache::{ArtifactCache, CacheKey};
use crate::error::{Error, Result};
use crate::instrumentation::{
    instrument_bytes, CallTreeBuilder, DynamicCallTree, ProbeEvent, ProbeKind, PROBE_ENTER,
    PROBE_EXIT, PROBE_MODULE,
};
use crate::module_store::{FuncRef, LoadedModule, ModuleId};
use crate::mutation::{match_and_rewrite, MutationPoint};
use crate::test_framework::{judge, TestCase, TestStatus};

/// Host import that ends the run early with an exit code.
pub const EXIT_MODULE: &str = "mull";
pub const EXIT_FIELD: &str = "exit";

const TICK: Duration = Duration::from_millis(2);

#[derive(Debug)]
struct ExitRequested(i32);

impl fmt::Display for ExitRequested {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exit({})", self.0)
    }
}

impl std::error::Error for ExitRequested {}

#[derive(Debug)]
struct DeadlineExceeded;

impl fmt::Display for DeadlineExceeded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("deadline exceeded")
    }
}

impl std::error::Error for DeadlineExceeded {}

#[derive(Debug, Default)]
struct Counters {
    compilations: AtomicU64,
    mutant_compilations: AtomicU64,
    cache_hits: AtomicU64,
    baseline_runs: AtomicU64,
    mutant_runs: AtomicU64,
}

/// Engine activity since the runtime was created.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    /// Native compilations of any module, original or mutant.
    pub compilations: u64,
    pub mutant_compilations: u64,
    pub cache_hits: u64,
    pub baseline_runs: u64,
    pub mutant_runs: u64,
}

/// Kind of run, for counting only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Baseline,
    Mutant,
}

struct Ticker {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Ticker {
    fn start(engine: Engine) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = std::thread::Builder::new()
            .name("mullw-epoch".into())
            .spawn(move || {
                while !flag.load(Ordering::Relaxed) {
                    std::thread::sleep(TICK);
                    engine.increment_epoch();
                }
            })
            .expect("spawn epoch ticker");
        Ticker {
            stop,
            handle: Some(handle),
        }
    }
}

impl Drop for Ticker {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

/// Compiler, optional artifact cache and run sandbox.
pub struct Runtime {
    engine: Engine,
    cache: Option<ArtifactCache>,
    counters: Counters,
    _ticker: Ticker,
}

#[derive(Clone)]
pub struct CompiledModule {
    pub id: ModuleId,
    pub link_name: String,
    pub module: Module,
}

/// One compiled module per input, in instantiation order.
#[derive(Clone)]
pub struct ArtifactSet {
    pub modules: Vec<CompiledModule>,
}

impl ArtifactSet {
    /// Same set with the module of the same id swapped for `replacement`.
    pub fn with_replacement(&self, replacement: CompiledModule) -> ArtifactSet {
        let modules = self
            .modules
            .iter()
            .map(|m| {
                if m.id == replacement.id {
                    replacement.clone()
                } else {
                    m.clone()
                }
            })
            .collect();
        ArtifactSet { modules }
    }
}

/// Outcome of one sandboxed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: ExecutionStatus,
    pub duration_ms: f64,
    /// Present when the run recorded probes.
    pub tree: Option<DynamicCallTree>,
}

struct RunState {
    recorder: Option<CallTreeBuilder>,
    sequence: u64,
    fault: Option<Error>,
}

impl RunState {
    fn record(&mut self, kind: ProbeKind, func: FuncRef) {
        let Some(recorder) = self.recorder.as_mut() else {
            return;
        };
        if self.fault.is_some() {
            return;
        }
        let event = ProbeEvent {
            kind,
            func,
            sequence: self.sequence,
        };
        self.sequence += 1;
        if let Err(e) = recorder.push(event) {
            self.fault = Some(e);
        }
    }
}

impl Runtime {
    pub fn new(cache_dir: Option<&Path>) -> Result<Self> {
        let mut config = Config::new();
        config.epoch_interruption(true);
        config.cranelift_opt_level(OptLevel::None);
        let engine =
            Engine::new(&config).map_err(|e| Error::CompilationFailure(format!("engine: {e}")))?;
        let tag = engine_tag(&engine);
        let cache = cache_dir
            .map(|dir| ArtifactCache::open(dir, tag))
            .transpose()?;
        Ok(Runtime {
            _ticker: Ticker::start(engine.clone()),
            engine,
            cache,
            counters: Counters::default(),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn cache(&self) -> Option<&ArtifactCache> {
        self.cache.as_ref()
    }

    pub fn counters(&self) -> CounterSnapshot {
        let c = &self.counters;
        CounterSnapshot {
            compilations: c.compilations.load(Ordering::Relaxed),
            mutant_compilations: c.mutant_compilations.load(Ordering::Relaxed),
            cache_hits: c.cache_hits.load(Ordering::Relaxed),
            baseline_runs: c.baseline_runs.load(Ordering::Relaxed),
            mutant_runs: c.mutant_runs.load(Ordering::Relaxed),
        }
    }

    /// Instrumented original module, from cache when possible.
    pub fn compile_original(&self, module: &LoadedModule) -> Result<CompiledModule> {
        self.compile_original_with(module, || Ok(instrument_bytes(&module.bytes)?.bytes))
    }

    /// As [`Runtime::compile_original`], with the instrumented bytes supplied
    /// by the caller. `instrumented` runs only on a cache miss.
    pub fn compile_original_with(
        &self,
        module: &LoadedModule,
        instrumented: impl FnOnce() -> Result<Vec<u8>>,
    ) -> Result<CompiledModule> {
        let key = CacheKey::original(&module.checksum);
        let compiled = self.compile_cached(&key, false, instrumented)?;
        Ok(CompiledModule {
            id: module.id,
            link_name: module.link_name.clone(),
            module: compiled,
        })
    }

    /// Instrumented mutant of `module` at `point`, from cache when possible.
    /// On a cache hit the mutant is not even rewritten.
    pub fn compile_mutant(
        &self,
        module: &LoadedModule,
        point: &MutationPoint,
    ) -> Result<CompiledModule> {
        let key = CacheKey::mutant(&module.checksum, &point.mp_id);
        let compiled = self.compile_cached(&key, true, || {
            let mutant = match_and_rewrite(point, &module.bytes)?;
            Ok(instrument_bytes(&mutant)?.bytes)
        })?;
        Ok(CompiledModule {
            id: module.id,
            link_name: module.link_name.clone(),
            module: compiled,
        })
    }

    pub fn compile_all(&self, modules: &[LoadedModule]) -> Result<ArtifactSet> {
        let modules = modules
            .iter()
            .map(|m| self.compile_original(m))
            .collect::<Result<_>>()?;
        Ok(ArtifactSet { modules })
    }

    fn compile_cached(
        &self,
        key: &CacheKey,
        mutant: bool,
        bytes: impl FnOnce() -> Result<Vec<u8>>,
    ) -> Result<Module> {
        if let Some(cache) = &self.cache {
            if let Some(artifact) = cache.get(key) {
                // SAFETY: entries are written only by `Module::serialize` of an
                // engine with the same tag, and the framing digest rules out
                // torn or corrupted files.
                match unsafe { Module::deserialize(&self.engine, &artifact) } {
                    Ok(module) => {
                        self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                        return Ok(module);
                    }
                    Err(e) => {
                        log::warn!("cache entry for {} not loadable: {e}", key.variant.as_str());
                        cache.invalidate(key);
                    }
                }
            }
        }
        let bytes = bytes()?;
        let module = Module::new(&self.engine, &bytes)
            .map_err(|e| Error::CompilationFailure(format!("{}: {e}", key.variant.as_str())))?;
        self.counters.compilations.fetch_add(1, Ordering::Relaxed);
        if mutant {
            self.counters
                .mutant_compilations
                .fetch_add(1, Ordering::Relaxed);
        }
        if let Some(cache) = &self.cache {
            match module.serialize() {
                Ok(artifact) => cache.put(key, &artifact),
                Err(e) => log::warn!("cannot serialize {}: {e}", key.variant.as_str()),
            }
        }
        Ok(module)
    }

    /// Runs `test` in a fresh store: fresh memories, globals and probe
    /// state. With `record`, probe events build the test's call tree.
    pub fn sandbox_run(
        &self,
        artifacts: &ArtifactSet,
        test: &TestCase,
        timeout_ms: u64,
        record: bool,
        kind: RunKind,
    ) -> Result<RunOutcome> {
        match kind {
            RunKind::Baseline => &self.counters.baseline_runs,
            RunKind::Mutant => &self.counters.mutant_runs,
        }
        .fetch_add(1, Ordering::Relaxed);

        let state = RunState {
            recorder: record.then(|| CallTreeBuilder::new(test.entry)),
            sequence: 0,
            fault: None,
        };
        let mut store = Store::new(&self.engine, state);
        let start = Instant::now();
        let deadline = start + Duration::from_millis(timeout_ms);
        store.set_epoch_deadline(1);
        store.epoch_deadline_callback(move |_| {
            if Instant::now() >= deadline {
                Err(wasmtime::Error::new(DeadlineExceeded))
            } else {
                Ok(UpdateDeadline::Continue(1))
            }
        });

        let result = instantiate_all(&mut store, artifacts)
            .and_then(|instances| invoke(&mut store, &instances, test));
        let duration_ms = start.elapsed().as_secs_f64() * 1000.0;

        let status = match result {
            Ok(returned) => match judge(test.framework, returned) {
                TestStatus::Passed => ExecutionStatus::Passed,
                TestStatus::Failed => ExecutionStatus::Failed,
            },
            Err(RunError::Setup(e)) => return Err(e),
            Err(RunError::Wasm(e)) => classify(&e),
        };
        let state = store.into_data();
        if let Some(fault) = state.fault {
            return Err(fault);
        }
        Ok(RunOutcome {
            status,
            duration_ms,
            tree: state.recorder.map(CallTreeBuilder::finish),
        })
    }
}

enum RunError {
    /// Harness problem; not a property of the code under test.
    Setup(Error),
    /// Trap, deadline or exit raised while running wasm.
    Wasm(wasmtime::Error),
}

fn classify(e: &wasmtime::Error) -> ExecutionStatus {
    if let Some(exit) = e.downcast_ref::<ExitRequested>() {
        ExecutionStatus::AbnormalExit(exit.0)
    } else if e.is::<DeadlineExceeded>() {
        ExecutionStatus::Timeout
    } else {
        if !e.is::<Trap>() {
            log::debug!("non-trap failure classified as crash: {e}");
        }
        ExecutionStatus::Crashed
    }
}

fn instantiate_all(
    store: &mut Store<RunState>,
    artifacts: &ArtifactSet,
) -> std::result::Result<HashMap<ModuleId, Instance>, RunError> {
    let mut instances = HashMap::new();
    let mut by_name: HashMap<&str, Instance> = HashMap::new();
    for compiled in &artifacts.modules {
        let mut imports = Vec::new();
        for import in compiled.module.imports() {
            let ext: Extern = match (import.module(), import.name()) {
                (PROBE_MODULE, field @ (PROBE_ENTER | PROBE_EXIT)) => {
                    let kind = if field == PROBE_ENTER {
                        ProbeKind::Enter
                    } else {
                        ProbeKind::Exit
                    };
                    let id = compiled.id;
                    Func::wrap(
                        &mut *store,
                        move |mut caller: Caller<'_, RunState>, idx: i32| {
                            caller.data_mut().record(kind, FuncRef::new(id, idx as u32));
                        },
                    )
                    .into()
                }
                (EXIT_MODULE, EXIT_FIELD) => {
                    Func::wrap(&mut *store, |code: i32| -> wasmtime::Result<()> {
                        Err(wasmtime::Error::new(ExitRequested(code)))
                    })
                    .into()
                }
                (module, name) => by_name
                    .get(module)
                    .and_then(|inst| inst.get_export(&mut *store, name))
                    .ok_or_else(|| {
                        RunError::Setup(Error::InstantiationFailure(format!(
                            "{}: unresolved import {module}.{name}",
                            compiled.link_name
                        )))
                    })?,
            };
            imports.push(ext);
        }
        let instance = Instance::new(&mut *store, &compiled.module, &imports).map_err(|e| {
            if e.is::<Trap>() || e.is::<ExitRequested>() || e.is::<DeadlineExceeded>() {
                RunError::Wasm(e)
            } else {
                RunError::Setup(Error::InstantiationFailure(format!(
                    "{}: {e}",
                    compiled.link_name
                )))
            }
        })?;
        by_name.insert(compiled.link_name.as_str(), instance);
        instances.insert(compiled.id, instance);
    }
    Ok(instances)
}

fn invoke(
    store: &mut Store<RunState>,
    instances: &HashMap<ModuleId, Instance>,
    test: &TestCase,
) -> std::result::Result<Option<i32>, RunError> {
    let setup = |reason: String| {
        RunError::Setup(Error::InvalidTestSignature {
            name: test.name.clone(),
            reason,
        })
    };
    let func = instances
        .get(&test.entry.module)
        .and_then(|inst| inst.get_func(&mut *store, &test.export))
        .ok_or_else(|| setup(format!("export `{}` not found", test.export)))?;
    let ty = func.ty(&*store);
    if ty.params().len() != test.arguments.len() || ty.params().any(|p| !matches!(p, ValType::I32))
    {
        return Err(setup(format!(
            "entry takes {} parameter(s), {} i32 argument(s) given",
            ty.params().len(),
            test.arguments.len()
        )));
    }
    let args: Vec<Val> = test.arguments.iter().map(|a| Val::I32(*a)).collect();
    let mut results: Vec<Val> = ty
        .results()
        .map(|t| Val::default_for_ty(&t).unwrap_or(Val::I32(0)))
        .collect();
    func.call(&mut *store, &args, &mut results)
        .map_err(RunError::Wasm)?;
    Ok(match results.first() {
        Some(Val::I32(v)) => Some(*v),
        _ => None,
    })
}

/// Filename prefix that changes whenever compiled artifacts stop being
/// interchangeable.
pub fn engine_tag(engine: &Engine) -> String {
    let mut hasher = DefaultHasher::new();
    engine.precompile_compatibility_hash().hash(&mut hasher);
    format!("w{:016x}", hasher.finish())
}
