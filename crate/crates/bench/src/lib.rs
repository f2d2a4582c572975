//! Inputs shared by the benchmarks.

use std::path::Path;

use mullw_core::{LoadedModule, ModuleId};

/// Loads a checked-in fixture module by name.
pub fn fixture(name: &str) -> LoadedModule {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(format!("{name}.wasm"));
    let bytes = std::fs::read(&path).expect("fixture present");
    LoadedModule::from_bytes(ModuleId(0), format!("{name}.wasm"), bytes).expect("valid fixture")
}
