//! Session configuration file (YAML).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::execution::{DEFAULT_MAX_DISTANCE, DEFAULT_TIMEOUT_MS};
use crate::mutation::OperatorId;
use crate::test_framework::{CustomTestConfig, Framework};

pub const KNOWN_KEYS: [&str; 10] = [
    "bitcode_files",
    "mutation_operators",
    "test_framework",
    "custom_tests",
    "timeout_ms",
    "max_distance",
    "fail_fast",
    "cache_directory",
    "exclude_functions",
    "dry_run",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionConfig {
    /// Module paths as written; they name the modules in results.
    pub bitcode_files: Vec<String>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub mutation_operators: BTreeSet<OperatorId>,
    pub test_framework: Framework,
    pub custom_tests: Vec<CustomTestConfig>,
    pub timeout_ms: u64,
    pub max_distance: u32,
    pub fail_fast: bool,
    pub cache_directory: Option<PathBuf>,
    pub exclude_functions: Vec<String>,
    pub dry_run: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    bitcode_files: Option<Vec<String>>,
    mutation_operators: Option<Vec<String>>,
    test_framework: Option<String>,
    custom_tests: Option<Vec<CustomTestConfig>>,
    timeout_ms: Option<u64>,
    max_distance: Option<u32>,
    fail_fast: Option<bool>,
    cache_directory: Option<String>,
    exclude_functions: Option<Vec<String>>,
    dry_run: Option<bool>,
}

impl SessionConfig {
    /// Minimal config with every default applied.
    pub fn new(bitcode_files: Vec<String>, test_framework: Framework) -> Self {
        SessionConfig {
            bitcode_files,
            base_dir: PathBuf::from("."),
            mutation_operators: OperatorId::ALL.into_iter().collect(),
            test_framework,
            custom_tests: Vec::new(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            max_distance: DEFAULT_MAX_DISTANCE,
            fail_fast: false,
            cache_directory: None,
            exclude_functions: Vec::new(),
            dry_run: false,
        }
    }

    /// `(identity, location)` of each module, in config order.
    pub fn module_entries(&self) -> Vec<(PathBuf, PathBuf)> {
        self.bitcode_files
            .iter()
            .map(|f| (PathBuf::from(f), self.resolve(f)))
            .collect()
    }

    pub fn resolve(&self, path: impl AsRef<Path>) -> PathBuf {
        let path = path.as_ref();
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Flat key/value view stored with the results.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let list = |v: &[String]| v.join(",");
        vec![
            ("bitcode_files".into(), list(&self.bitcode_files)),
            (
                "mutation_operators".into(),
                self.mutation_operators
                    .iter()
                    .map(|o| o.as_str())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("test_framework".into(), self.test_framework.as_str().into()),
            (
                "custom_tests".into(),
                self.custom_tests
                    .iter()
                    .map(|t| t.name.clone())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("timeout_ms".into(), self.timeout_ms.to_string()),
            ("max_distance".into(), self.max_distance.to_string()),
            ("fail_fast".into(), self.fail_fast.to_string()),
            (
                "cache_directory".into(),
                self.cache_directory
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("exclude_functions".into(), list(&self.exclude_functions)),
            ("dry_run".into(), self.dry_run.to_string()),
        ]
    }
}

pub fn parse_config(path: &Path) -> Result<SessionConfig> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::FileNotFound(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}

pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<SessionConfig> {
    let value: serde_yaml::Value = serde_yaml::from_str(text).map_err(parse_error)?;
    let mapping = match &value {
        serde_yaml::Value::Mapping(m) => m,
        serde_yaml::Value::Null => {
            return Err(Error::validation("bitcode_files", "is required"));
        }
        _ => {
            return Err(Error::ParseError {
                line: 1,
                reason: "top level must be a mapping".into(),
            })
        }
    };
    for key in mapping.keys() {
        let key = key.as_str().ok_or_else(|| Error::ParseError {
            line: 1,
            reason: "keys must be strings".into(),
        })?;
        if !KNOWN_KEYS.contains(&key) {
            let reason = match suggest(key) {
                Some(s) => format!("unknown key; did you mean `{s}`?"),
                None => "unknown key".to_string(),
            };
            return Err(Error::validation(key, reason));
        }
    }
    let raw: RawConfig = serde_yaml::from_str(text).map_err(parse_error)?;

    let bitcode_files = raw
        .bitcode_files
        .ok_or_else(|| Error::validation("bitcode_files", "is required"))?;
    if bitcode_files.is_empty() {
        return Err(Error::validation("bitcode_files", "must not be empty"));
    }
    let test_framework = match raw.test_framework.as_deref() {
        None => return Err(Error::validation("test_framework", "is required")),
        Some("SimpleTest") => Framework::SimpleTest,
        Some("CustomTest") => Framework::CustomTest,
        Some(other) => {
            return Err(Error::validation(
                "test_framework",
                format!("`{other}` is not SimpleTest or CustomTest"),
            ))
        }
    };
    let custom_tests = match (test_framework, raw.custom_tests) {
        (Framework::CustomTest, Some(tests)) => tests,
        (Framework::CustomTest, None) => {
            return Err(Error::validation(
                "custom_tests",
                "is required with CustomTest",
            ))
        }
        (Framework::SimpleTest, Some(_)) => {
            return Err(Error::validation(
                "custom_tests",
                "only applies to CustomTest",
            ))
        }
        (Framework::SimpleTest, None) => Vec::new(),
    };
    let mutation_operators = match raw.mutation_operators {
        None => OperatorId::ALL.into_iter().collect(),
        Some(names) => {
            let ops = names
                .iter()
                .map(|n| {
                    n.parse::<OperatorId>()
                        .map_err(|e| Error::validation("mutation_operators", e.to_string()))
                })
                .collect::<Result<BTreeSet<_>>>()?;
            if ops.is_empty() {
                return Err(Error::validation("mutation_operators", "must not be empty"));
            }
            ops
        }
    };
    let timeout_ms = raw.timeout_ms.unwrap_or(DEFAULT_TIMEOUT_MS);
    if timeout_ms == 0 {
        return Err(Error::validation("timeout_ms", "must be at least 1"));
    }
    let max_distance = raw.max_distance.unwrap_or(DEFAULT_MAX_DISTANCE);
    if max_distance == 0 {
        return Err(Error::validation("max_distance", "must be at least 1"));
    }
    let exclude_functions = raw.exclude_functions.unwrap_or_default();
    crate::mutation::ExcludeFilter::new(&exclude_functions)?;

    let mut config = SessionConfig {
        bitcode_files,
        base_dir: base_dir.to_path_buf(),
        mutation_operators,
        test_framework,
        custom_tests,
        timeout_ms,
        max_distance,
        fail_fast: raw.fail_fast.unwrap_or(false),
        cache_directory: None,
        exclude_functions,
        dry_run: raw.dry_run.unwrap_or(false),
    };
    config.cache_directory = raw.cache_directory.map(|d| config.resolve(d));
    Ok(config)
}

fn parse_error(e: serde_yaml::Error) -> Error {
    Error::ParseError {
        line: e.location().map_or(0, |l| l.line()),
        reason: e.to_string(),
    }
}

fn suggest(key: &str) -> Option<&'static str> {
    KNOWN_KEYS
        .iter()
        .map(|k| (strsim::levenshtein(key, k), *k))
        .filter(|(d, k)| *d <= 3.max(k.len() / 3))
        .min()
        .map(|(_, k)| k)
}
