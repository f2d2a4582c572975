//! Mutation points and mutant generation.
//!
//! Points are found by running every enabled operator's matcher over every
//! instruction of the covered functions. A mutant is the original module
//! with exactly one point rewritten. Points are addressed in the original,
//! un-instrumented index space so their ids do not depend on probes.

mod code;
mod consumers;
mod operators;
mod rewrite;

use std::collections::BTreeSet;
use std::fmt;

use globset::{Glob, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};

pub use code::ModuleCode;
pub use consumers::{stack_consumers, ConsumerMap};
pub use operators::{
    is_binary_arithmetic, is_binary_comparison, match_operator, scalar_consumer_allowed,
    MatchContext, Matched, MutationDetail, OperatorId, ScalarValue, UnknownOperator,
};
pub use rewrite::{match_and_rewrite, rewrite_bytes};

use crate::error::{Error, Result};
use crate::module_store::{FuncRef, FuncSig, LoadedModule, ValKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationPoint {
    /// `<operator>:<module_path>:<function_name>:<instr_index>`
    pub mp_id: String,
    pub operator: OperatorId,
    pub func: FuncRef,
    pub module_path: String,
    pub function_name: String,
    pub instr_index: usize,
    pub detail: MutationDetail,
}

impl MutationPoint {
    pub fn make_id(
        operator: OperatorId,
        module_path: &str,
        function_name: &str,
        instr_index: usize,
    ) -> String {
        format!("{operator}:{module_path}:{function_name}:{instr_index}")
    }
}

impl fmt::Display for MutationPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.mp_id)
    }
}

/// Glob patterns matched against the bare function name and against
/// `<module_path>:<function_name>`; either match excludes the function.
#[derive(Debug, Clone)]
pub struct ExcludeFilter {
    patterns: Vec<String>,
    set: GlobSet,
}

impl ExcludeFilter {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self> {
        let mut builder = GlobSetBuilder::new();
        for pattern in patterns {
            let glob = Glob::new(pattern.as_ref())
                .map_err(|e| Error::validation("exclude_functions", e.to_string()))?;
            builder.add(glob);
        }
        let set = builder
            .build()
            .map_err(|e| Error::validation("exclude_functions", e.to_string()))?;
        Ok(ExcludeFilter {
            patterns: patterns.iter().map(|p| p.as_ref().to_string()).collect(),
            set,
        })
    }

    pub fn none() -> Self {
        ExcludeFilter::new::<&str>(&[]).expect("empty glob set")
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn is_excluded(&self, module_path: &str, function_name: &str) -> bool {
        !self.patterns.is_empty()
            && (self.set.is_match(function_name)
                || self.set.is_match(format!("{module_path}:{function_name}")))
    }
}

fn callee_sig(code: &ModuleCode, func_index: u32) -> Option<FuncSig> {
    let ty = code.func_type(func_index)?;
    Some(FuncSig {
        params: ty.params().iter().copied().map(ValKind::from).collect(),
        results: ty.results().iter().copied().map(ValKind::from).collect(),
    })
}

/// Runs every operator in `operators` against each instruction of one
/// function. Returns `(instr_index, operator, match)` in instruction order,
/// then operator order.
pub fn scan_function(
    code: &ModuleCode,
    func_index: u32,
    operators: &BTreeSet<OperatorId>,
) -> Result<Vec<(usize, OperatorId, Matched)>> {
    let body = code
        .body(func_index)
        .ok_or_else(|| Error::AnalysisFailure {
            func_index,
            instr_index: 0,
            reason: "not a defined function".into(),
        })?;
    let consumers = if operators.contains(&OperatorId::ScalarValueReplacement) {
        stack_consumers(code, func_index)?
    } else {
        ConsumerMap::new()
    };
    let mut found = Vec::new();
    for (idx, op) in body.iter().enumerate() {
        let sig;
        let callee = match op {
            wasmparser::Operator::Call { function_index } => {
                sig = callee_sig(code, *function_index);
                sig.as_ref().map(|s| {
                    (
                        s,
                        code.import_of(*function_index)
                            .filter(|_| *function_index < code.num_imported),
                    )
                })
            }
            _ => None,
        };
        let consumer_idx = consumers.get(&idx).copied();
        let ctx = MatchContext {
            callee,
            consumer: consumer_idx.map(|c| &body[c]),
            consumer_is_function_end: consumer_idx == Some(body.len() - 1),
        };
        for &operator in operators {
            if let Some(m) = match_operator(operator, op, &ctx) {
                found.push((idx, operator, m));
            }
        }
    }
    Ok(found)
}

/// All mutation points in covered, non-excluded, defined functions.
/// Order: module, function index, instruction index, operator.
pub fn enumerate_points(
    modules: &[LoadedModule],
    operators: &BTreeSet<OperatorId>,
    covered: &BTreeSet<FuncRef>,
    excludes: &ExcludeFilter,
) -> Result<Vec<MutationPoint>> {
    let mut points = Vec::new();
    for module in modules {
        let code = ModuleCode::decode(&module.bytes)?;
        let module_path = module.path_display();
        for func in module.defined_functions() {
            let func_ref = FuncRef::new(module.id, func.func_index);
            if !covered.contains(&func_ref) || excludes.is_excluded(&module_path, &func.name) {
                continue;
            }
            for (instr_index, operator, m) in scan_function(&code, func.func_index, operators)? {
                points.push(MutationPoint {
                    mp_id: MutationPoint::make_id(operator, &module_path, &func.name, instr_index),
                    operator,
                    func: func_ref,
                    module_path: module_path.clone(),
                    function_name: func.name.clone(),
                    instr_index,
                    detail: m.detail,
                });
            }
        }
    }
    Ok(points)
}
