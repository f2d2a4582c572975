//! Test discovery and verdicts.
//!
//! A framework is a finder (which exported functions are tests) paired with
//! a judge (how a returned value maps to pass/fail). `SimpleTest` treats
//! every export named `test*` as a test returning 1 on success.
//! `CustomTest` takes its tests from the session config and uses the
//! exit-code convention, 0 meaning success.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::module_store::{FuncRef, LoadedModule, ValKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Framework {
    SimpleTest,
    CustomTest,
}

impl Framework {
    pub fn as_str(self) -> &'static str {
        match self {
            Framework::SimpleTest => "SimpleTest",
            Framework::CustomTest => "CustomTest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub test_id: usize,
    pub name: String,
    pub entry: FuncRef,
    /// Export through which the runner invokes `entry`.
    pub export: String,
    pub arguments: Vec<i32>,
    pub framework: Framework,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestStatus {
    Passed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestVerdict {
    pub status: TestStatus,
    pub duration_ms: f64,
}

/// One `custom_tests` entry of the session config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomTestConfig {
    pub name: String,
    /// Exported function to invoke.
    pub method: String,
    /// Kept for config compatibility; a module has no separate program.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    #[serde(default)]
    pub arguments: Vec<TestArgument>,
}

/// A `custom_tests` argument. Integers are passed to the entry as i32
/// parameters; text is a command-line style argument, which a module entry
/// cannot receive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TestArgument {
    Int(i32),
    Text(String),
}

impl From<i32> for TestArgument {
    fn from(v: i32) -> Self {
        TestArgument::Int(v)
    }
}

/// Finder/judge pair. New frameworks plug in by implementing this.
pub trait TestFramework {
    fn kind(&self) -> Framework;
    fn find_tests(&self, modules: &[LoadedModule]) -> Result<Vec<TestCase>>;
    fn judge(&self, returned: Option<i32>) -> TestStatus {
        judge(self.kind(), returned)
    }
}

pub struct SimpleTestFramework;

impl TestFramework for SimpleTestFramework {
    fn kind(&self) -> Framework {
        Framework::SimpleTest
    }

    fn find_tests(&self, modules: &[LoadedModule]) -> Result<Vec<TestCase>> {
        find_tests_simple(modules)
    }
}

pub struct CustomTestFramework<'a> {
    pub tests: &'a [CustomTestConfig],
}

impl TestFramework for CustomTestFramework<'_> {
    fn kind(&self) -> Framework {
        Framework::CustomTest
    }

    fn find_tests(&self, modules: &[LoadedModule]) -> Result<Vec<TestCase>> {
        find_tests_custom(modules, self.tests)
    }
}

/// Every exported, defined, argument-less function whose export name starts
/// with `test` (case-sensitive). Order: module order, then function index.
pub fn find_tests_simple(modules: &[LoadedModule]) -> Result<Vec<TestCase>> {
    let mut tests = Vec::new();
    let mut names = HashSet::new();
    for module in modules {
        let mut exports: Vec<(u32, &str)> = module
            .exports
            .iter()
            .filter(|(name, _)| name.starts_with("test"))
            .map(|(name, idx)| (*idx, name.as_str()))
            .collect();
        exports.sort();
        for (func_index, export) in exports {
            let func = &module.functions[func_index as usize];
            if func.is_imported {
                log::warn!("skipping re-exported import `{export}`");
                continue;
            }
            if func.param_count != 0 {
                log::warn!("skipping `{export}`: tests take no parameters");
                continue;
            }
            if !names.insert(export.to_string()) {
                return Err(Error::DuplicateTestName(export.to_string()));
            }
            tests.push(TestCase {
                test_id: tests.len(),
                name: export.to_string(),
                entry: FuncRef::new(module.id, func_index),
                export: export.to_string(),
                arguments: Vec::new(),
                framework: Framework::SimpleTest,
            });
        }
    }
    Ok(tests)
}

/// One test per config entry, resolved against the first module exporting
/// `method`.
pub fn find_tests_custom(
    modules: &[LoadedModule],
    config: &[CustomTestConfig],
) -> Result<Vec<TestCase>> {
    let mut tests = Vec::with_capacity(config.len());
    let mut names = HashSet::new();
    for entry in config {
        let (module, func_index) = modules
            .iter()
            .find_map(|m| m.export_of(&entry.method).map(|idx| (m, idx)))
            .ok_or_else(|| Error::UnknownTestFunction(entry.method.clone()))?;
        let func = &module.functions[func_index as usize];
        if func.is_imported {
            return Err(Error::UnknownTestFunction(entry.method.clone()));
        }
        let ints: Vec<i32> = entry
            .arguments
            .iter()
            .filter_map(|a| match a {
                TestArgument::Int(v) => Some(*v),
                TestArgument::Text(_) => None,
            })
            .collect();
        let arguments = if ints.len() == entry.arguments.len() {
            ints
        } else if func.sig.params.is_empty() {
            log::warn!(
                "test `{}`: text arguments are not passed to `{}`",
                entry.name,
                entry.method
            );
            Vec::new()
        } else {
            return Err(Error::InvalidTestSignature {
                name: entry.name.clone(),
                reason: "text arguments cannot be passed to a module function".into(),
            });
        };
        if func.sig.params.len() != arguments.len()
            || func.sig.params.iter().any(|p| *p != ValKind::I32)
        {
            return Err(Error::InvalidTestSignature {
                name: entry.name.clone(),
                reason: format!(
                    "`{}` takes {:?}, config passes {} i32 argument(s)",
                    entry.method,
                    func.sig.params,
                    arguments.len()
                ),
            });
        }
        if !names.insert(entry.name.clone()) {
            return Err(Error::DuplicateTestName(entry.name.clone()));
        }
        tests.push(TestCase {
            test_id: tests.len(),
            name: entry.name.clone(),
            entry: FuncRef::new(module.id, func_index),
            export: entry.method.clone(),
            arguments,
            framework: Framework::CustomTest,
        });
    }
    Ok(tests)
}

/// Maps a normally completed run to pass/fail.
///
/// `SimpleTest` passes only on 1; anything else, including no value, fails.
/// `CustomTest` passes on 0, and a void entry that returns normally counts
/// as exit code 0.
pub fn judge(framework: Framework, returned: Option<i32>) -> TestStatus {
    let passed = match framework {
        Framework::SimpleTest => returned == Some(1),
        Framework::CustomTest => returned.unwrap_or(0) == 0,
    };
    if passed {
        TestStatus::Passed
    } else {
        TestStatus::Failed
    }
}
