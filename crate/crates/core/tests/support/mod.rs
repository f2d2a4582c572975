#![allow(dead_code)]

pub mod oracle;
pub mod properties;

use std::path::{Path, PathBuf};

use mullw_core::{LoadedModule, ModuleId};

pub const FIXTURES: [&str; 7] = [
    "calc",
    "calc_strong_tests",
    "calc_weak_tests",
    "distance",
    "failfast",
    "taxonomy",
    "baseline",
];

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixture_dir().join(format!("{name}.wasm"))
}

pub fn load_fixture(id: u32, name: &str) -> LoadedModule {
    let path = fixture(name);
    let bytes = std::fs::read(&path).unwrap();
    LoadedModule::from_bytes(ModuleId(id), format!("{name}.wasm"), bytes).unwrap()
}

/// Copies the named fixtures into `dir` and writes a session config that
/// lists them by file name, so mutation point ids do not depend on where
/// the checkout lives. `extra` is appended verbatim; SimpleTest is the
/// default framework unless `extra` names one.
pub fn write_config(dir: &Path, modules: &[&str], extra: &str) -> PathBuf {
    let mut files = Vec::new();
    for m in modules {
        let name = format!("{m}.wasm");
        std::fs::copy(fixture(m), dir.join(&name)).unwrap();
        files.push(format!("  - {name}"));
    }
    let framework = if extra.contains("test_framework:") {
        ""
    } else {
        "test_framework: SimpleTest\n"
    };
    let text = format!("bitcode_files:\n{}\n{framework}{extra}", files.join("\n"));
    let path = dir.join("mullw.yaml");
    std::fs::write(&path, text).unwrap();
    path
}
