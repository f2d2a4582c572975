use wasmparser::{
    BlockType, CompositeInnerType, ContType, FrameKind, FuncType, ModuleArity, Operator, Parser,
    Payload, RefType, SubType, TypeRef,
};

use crate::error::{Error, Result};

/// Decoded view of a module: type table, function signatures and the flat
/// operator sequence of every defined body.
pub struct ModuleCode<'a> {
    pub types: Vec<SubType>,
    /// Type index of each function, imports first.
    pub func_types: Vec<u32>,
    pub imports: Vec<(String, String)>,
    pub num_imported: u32,
    bodies: Vec<Vec<Operator<'a>>>,
}

impl<'a> ModuleCode<'a> {
    pub fn decode(bytes: &'a [u8]) -> Result<Self> {
        Self::decode_inner(bytes).map_err(|e| Error::AnalysisFailure {
            func_index: 0,
            instr_index: 0,
            reason: e.to_string(),
        })
    }

    fn decode_inner(bytes: &'a [u8]) -> wasmparser::Result<Self> {
        let mut code = ModuleCode {
            types: Vec::new(),
            func_types: Vec::new(),
            imports: Vec::new(),
            num_imported: 0,
            bodies: Vec::new(),
        };
        for payload in Parser::new(0).parse_all(bytes) {
            match payload? {
                Payload::TypeSection(reader) => {
                    for group in reader {
                        code.types.extend(group?.into_types());
                    }
                }
                Payload::ImportSection(reader) => {
                    for import in reader.into_imports() {
                        let import = import?;
                        if let TypeRef::Func(ty) | TypeRef::FuncExact(ty) = import.ty {
                            code.func_types.push(ty);
                            code.imports
                                .push((import.module.to_string(), import.name.to_string()));
                            code.num_imported += 1;
                        }
                    }
                }
                Payload::FunctionSection(reader) => {
                    for ty in reader {
                        code.func_types.push(ty?);
                    }
                }
                Payload::CodeSectionEntry(body) => {
                    let ops = body
                        .get_operators_reader()?
                        .into_iter()
                        .collect::<wasmparser::Result<Vec<_>>>()?;
                    code.bodies.push(ops);
                }
                _ => {}
            }
        }
        Ok(code)
    }

    pub fn body(&self, func_index: u32) -> Option<&[Operator<'a>]> {
        let defined = func_index.checked_sub(self.num_imported)?;
        self.bodies.get(defined as usize).map(Vec::as_slice)
    }

    pub fn func_type(&self, func_index: u32) -> Option<&FuncType> {
        let ty = *self.func_types.get(func_index as usize)?;
        match &self.types.get(ty as usize)?.composite_type.inner {
            CompositeInnerType::Func(f) => Some(f),
            _ => None,
        }
    }

    pub fn import_of(&self, func_index: u32) -> Option<&(String, String)> {
        self.imports.get(func_index as usize)
    }

    pub fn defined_indices(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.bodies.len() as u32).map(move |i| i + self.num_imported)
    }
}

/// Control frames of a function being walked, for operator arity queries.
pub(crate) struct ArityContext<'m, 'a> {
    pub code: &'m ModuleCode<'a>,
    pub frames: Vec<(BlockType, FrameKind)>,
}

impl ModuleArity for ArityContext<'_, '_> {
    fn sub_type_at(&self, type_idx: u32) -> Option<&SubType> {
        self.code.types.get(type_idx as usize)
    }

    fn tag_type_arity(&self, _at: u32) -> Option<(u32, u32)> {
        None
    }

    fn type_index_of_function(&self, function_idx: u32) -> Option<u32> {
        self.code.func_types.get(function_idx as usize).copied()
    }

    fn func_type_of_cont_type(&self, _c: &ContType) -> Option<&FuncType> {
        None
    }

    fn sub_type_of_ref_type(&self, _rt: &RefType) -> Option<&SubType> {
        None
    }

    fn control_stack_height(&self) -> u32 {
        self.frames.len() as u32
    }

    fn label_block(&self, depth: u32) -> Option<(BlockType, FrameKind)> {
        let idx = self.frames.len().checked_sub(depth as usize + 1)?;
        self.frames.get(idx).copied()
    }
}
