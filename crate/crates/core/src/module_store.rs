//! Loading, validation and fingerprinting of the program under test.
//!
//! Every `.wasm` file given to a session becomes one [`LoadedModule`]. A
//! module is the unit of caching and recompilation: mutating a function only
//! ever recompiles the module that owns it.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wasmparser::{
    CompositeInnerType, ExternalKind, KnownCustom, Name, Parser, Payload, TypeRef, Validator,
};

use crate::error::{Error, Result};

/// Index of a module in session order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModuleId(pub u32);

/// A function in the session-wide index space: owning module plus the
/// function index inside that module (imports included, pre-instrumentation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FuncRef {
    pub module: ModuleId,
    pub func_index: u32,
}

impl FuncRef {
    pub fn new(module: ModuleId, func_index: u32) -> Self {
        FuncRef { module, func_index }
    }
}

impl fmt::Display for FuncRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.module.0, self.func_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValKind {
    I32,
    I64,
    F32,
    F64,
    V128,
    Ref,
}

impl From<wasmparser::ValType> for ValKind {
    fn from(ty: wasmparser::ValType) -> Self {
        match ty {
            wasmparser::ValType::I32 => ValKind::I32,
            wasmparser::ValType::I64 => ValKind::I64,
            wasmparser::ValType::F32 => ValKind::F32,
            wasmparser::ValType::F64 => ValKind::F64,
            wasmparser::ValType::V128 => ValKind::V128,
            wasmparser::ValType::Ref(_) => ValKind::Ref,
        }
    }
}

impl ValKind {
    pub fn is_scalar(self) -> bool {
        matches!(
            self,
            ValKind::I32 | ValKind::I64 | ValKind::F32 | ValKind::F64
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FuncSig {
    pub params: Vec<ValKind>,
    pub results: Vec<ValKind>,
}

impl FuncSig {
    fn from_parser(ty: &wasmparser::FuncType) -> Self {
        FuncSig {
            params: ty.params().iter().copied().map(ValKind::from).collect(),
            results: ty.results().iter().copied().map(ValKind::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionInfo {
    pub func_index: u32,
    pub name: String,
    pub is_imported: bool,
    /// `(module, field)` for imported functions.
    pub import: Option<(String, String)>,
    pub param_count: usize,
    pub result_arity: usize,
    pub sig: FuncSig,
}

/// A validated module binary with its digest and resolved function table.
#[derive(Debug, Clone)]
pub struct LoadedModule {
    pub id: ModuleId,
    /// Path as given by the caller; this is what mutation-point ids embed.
    pub path: PathBuf,
    /// Name other modules use to import from this one (the file stem).
    pub link_name: String,
    pub bytes: Arc<[u8]>,
    pub checksum: String,
    pub functions: Vec<FunctionInfo>,
    /// Signatures of the type section; `None` for non-function types.
    pub types: Vec<Option<FuncSig>>,
    /// Exported functions as `(export name, func_index)` in export order.
    pub exports: Vec<(String, u32)>,
    pub num_imported_funcs: u32,
}

impl LoadedModule {
    pub fn function(&self, func_index: u32) -> Option<&FunctionInfo> {
        self.functions.get(func_index as usize)
    }

    pub fn defined_functions(&self) -> impl Iterator<Item = &FunctionInfo> {
        self.functions.iter().filter(|f| !f.is_imported)
    }

    pub fn export_of(&self, name: &str) -> Option<u32> {
        self.exports
            .iter()
            .find(|(export, _)| export == name)
            .map(|(_, idx)| *idx)
    }

    pub fn path_display(&self) -> String {
        self.path.to_string_lossy().into_owned()
    }

    /// Parses and validates `bytes` as the module at `path`.
    pub fn from_bytes(id: ModuleId, path: impl Into<PathBuf>, bytes: Vec<u8>) -> Result<Self> {
        let path = path.into();
        Validator::new()
            .validate_all(&bytes)
            .map_err(|e| Error::invalid_module(&path, e))?;
        let layout = parse_layout(&bytes).map_err(|e| Error::invalid_module(&path, e))?;

        let link_name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("module{}", id.0));

        let mut functions = Vec::with_capacity(layout.func_types.len());
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (idx, (ty, import)) in layout.func_types.iter().enumerate() {
            let func_index = idx as u32;
            let sig = layout
                .types
                .get(*ty as usize)
                .cloned()
                .flatten()
                .ok_or_else(|| Error::invalid_module(&path, "function with non-function type"))?;
            if sig.results.len() > 1 {
                return Err(Error::invalid_module(
                    &path,
                    format!("function {func_index} returns {} values", sig.results.len()),
                ));
            }
            let base = layout
                .names
                .get(&func_index)
                .cloned()
                .unwrap_or_else(|| format!("func_{func_index}"));
            let count = seen.entry(base.clone()).or_insert(0);
            *count += 1;
            let name = if *count > 1 {
                format!("{base}#{func_index}")
            } else {
                base
            };
            functions.push(FunctionInfo {
                func_index,
                name,
                is_imported: import.is_some(),
                import: import.clone(),
                param_count: sig.params.len(),
                result_arity: sig.results.len(),
                sig,
            });
        }

        Ok(LoadedModule {
            id,
            path,
            link_name,
            checksum: checksum(&bytes),
            bytes: bytes.into(),
            functions,
            types: layout.types,
            exports: layout.exports,
            num_imported_funcs: layout.num_imported_funcs,
        })
    }
}

struct Layout {
    types: Vec<Option<FuncSig>>,
    /// Type index and import origin per function, in index order.
    func_types: Vec<(u32, Option<(String, String)>)>,
    exports: Vec<(String, u32)>,
    names: HashMap<u32, String>,
    num_imported_funcs: u32,
}

fn parse_layout(bytes: &[u8]) -> wasmparser::Result<Layout> {
    let mut layout = Layout {
        types: Vec::new(),
        func_types: Vec::new(),
        exports: Vec::new(),
        names: HashMap::new(),
        num_imported_funcs: 0,
    };
    for payload in Parser::new(0).parse_all(bytes) {
        match payload? {
            Payload::TypeSection(reader) => {
                for group in reader {
                    for sub in group?.into_types() {
                        layout.types.push(match &sub.composite_type.inner {
                            CompositeInnerType::Func(f) => Some(FuncSig::from_parser(f)),
                            _ => None,
                        });
                    }
                }
            }
            Payload::ImportSection(reader) => {
                for import in reader.into_imports() {
                    let import = import?;
                    if let TypeRef::Func(ty) | TypeRef::FuncExact(ty) = import.ty {
                        layout.func_types.push((
                            ty,
                            Some((import.module.to_string(), import.name.to_string())),
                        ));
                        layout.num_imported_funcs += 1;
                    }
                }
            }
            Payload::FunctionSection(reader) => {
                for ty in reader {
                    layout.func_types.push((ty?, None));
                }
            }
            Payload::ExportSection(reader) => {
                for export in reader {
                    let export = export?;
                    if export.kind == ExternalKind::Func {
                        layout.exports.push((export.name.to_string(), export.index));
                    }
                }
            }
            Payload::CustomSection(section) => {
                if let KnownCustom::Name(reader) = section.as_known() {
                    // A malformed name section is not fatal; names fall back.
                    for name in reader.into_iter().flatten() {
                        if let Name::Function(map) = name {
                            for naming in map.into_iter().flatten() {
                                layout.names.insert(naming.index, naming.name.to_string());
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Ok(layout)
}

/// SHA-256 of `bytes`, lowercase hex.
pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loads every path in order, using the path itself as the module's identity.
pub fn load_modules<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<LoadedModule>> {
    let named: Vec<(PathBuf, PathBuf)> = paths
        .iter()
        .map(|p| (p.as_ref().to_path_buf(), p.as_ref().to_path_buf()))
        .collect();
    load_modules_from(&named)
}

/// Loads `(identity, location)` pairs. The identity is what ids and reports
/// show; the location is where the bytes are read from.
pub fn load_modules_from(entries: &[(PathBuf, PathBuf)]) -> Result<Vec<LoadedModule>> {
    let mut modules: Vec<LoadedModule> = Vec::with_capacity(entries.len());
    for (idx, (identity, location)) in entries.iter().enumerate() {
        let bytes = std::fs::read(location).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(location.clone()),
            _ => Error::Io(e),
        })?;
        let module = LoadedModule::from_bytes(ModuleId(idx as u32), identity.clone(), bytes)?;
        if let Some(prev) = modules
            .iter()
            .find(|m| m.link_name == module.link_name || m.path == module.path)
        {
            return Err(Error::DuplicateModule {
                path: module.path.clone(),
                name: prev.link_name.clone(),
            });
        }
        modules.push(module);
    }
    Ok(modules)
}
