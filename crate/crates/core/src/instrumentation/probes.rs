use wasm_encoder::reencode::{self, Reencode, RoundtripReencoder};
use wasm_encoder::{
    BlockType, CodeSection, EntityType, ImportSection, Instruction, SectionId, TypeSection, ValType,
};
use wasmparser::{CompositeInnerType, FunctionBody, Operator, Parser, Payload, TypeRef, Validator};

use crate::error::{Error, Result};
use crate::module_store::LoadedModule;

/// Import module that carries the coverage probes.
pub const PROBE_MODULE: &str = "mull_probe";
pub const PROBE_ENTER: &str = "enter";
pub const PROBE_EXIT: &str = "exit";

/// Probes injected into one defined function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FunctionProbes {
    pub func_index: u32,
    pub enter: usize,
    pub exit: usize,
}

#[derive(Debug, Clone)]
pub struct InstrumentedModule {
    pub bytes: Vec<u8>,
    pub probes: Vec<FunctionProbes>,
}

/// Instruments a loaded module.
pub fn instrument(module: &LoadedModule) -> Result<InstrumentedModule> {
    instrument_bytes(&module.bytes)
}

/// Rewrites `bytes` so every defined function reports entry and exit to the
/// probe imports. Two function imports are appended, which shifts every
/// defined function index by two; all references are relocated.
///
/// Each body is wrapped in a block so branches that target the function
/// label land on the trailing exit probe instead of skipping it.
pub fn instrument_bytes(bytes: &[u8]) -> Result<InstrumentedModule> {
    let (num_types, num_imported, func_results) =
        prescan(bytes).map_err(|e| Error::InstrumentationFailure(e.to_string()))?;
    if func_results.len() as u32 == num_imported {
        // No defined functions: nothing to probe.
        return Ok(InstrumentedModule {
            bytes: bytes.to_vec(),
            probes: Vec::new(),
        });
    }

    let mut rewriter = Instrumenter {
        num_types,
        num_imported,
        func_results,
        next_defined: 0,
        types_done: false,
        imports_done: false,
        probes: Vec::new(),
    };
    let mut out = wasm_encoder::Module::new();
    rewriter
        .parse_core_module(&mut out, Parser::new(0), bytes)
        .map_err(|e| Error::InstrumentationFailure(e.to_string()))?;
    let bytes = out.finish();
    Validator::new()
        .validate_all(&bytes)
        .map_err(|e| Error::InstrumentationFailure(e.to_string()))?;
    Ok(InstrumentedModule {
        bytes,
        probes: rewriter.probes,
    })
}

type Prescan = (u32, u32, Vec<Option<ValType>>);

fn prescan(bytes: &[u8]) -> wasmparser::Result<Prescan> {
    let mut types: Vec<Option<Option<ValType>>> = Vec::new();
    let mut num_imported = 0;
    let mut results = Vec::new();
    let result_of = |types: &Vec<Option<Option<ValType>>>, ty: u32| {
        types.get(ty as usize).copied().flatten().flatten()
    };
    for payload in Parser::new(0).parse_all(bytes) {
        match payload? {
            Payload::TypeSection(reader) => {
                for group in reader {
                    for sub in group?.into_types() {
                        types.push(match &sub.composite_type.inner {
                            CompositeInnerType::Func(f) => Some(
                                f.results()
                                    .first()
                                    .map(|t| RoundtripReencoder.val_type(*t).unwrap()),
                            ),
                            _ => None,
                        });
                    }
                }
            }
            Payload::ImportSection(reader) => {
                for import in reader.into_imports() {
                    if let TypeRef::Func(ty) | TypeRef::FuncExact(ty) = import?.ty {
                        num_imported += 1;
                        results.push(result_of(&types, ty));
                    }
                }
            }
            Payload::FunctionSection(reader) => {
                for ty in reader {
                    results.push(result_of(&types, ty?));
                }
            }
            _ => {}
        }
    }
    Ok((types.len() as u32, num_imported, results))
}

struct Instrumenter {
    num_types: u32,
    num_imported: u32,
    func_results: Vec<Option<ValType>>,
    next_defined: u32,
    types_done: bool,
    imports_done: bool,
    probes: Vec<FunctionProbes>,
}

impl Instrumenter {
    fn probe_type(&self) -> u32 {
        self.num_types
    }

    fn enter_probe(&self) -> u32 {
        self.num_imported
    }

    fn exit_probe(&self) -> u32 {
        self.num_imported + 1
    }

    fn add_probe_type(&self, types: &mut TypeSection) {
        types.ty().function([ValType::I32], []);
    }

    fn add_probe_imports(&self, imports: &mut ImportSection) {
        imports.import(
            PROBE_MODULE,
            PROBE_ENTER,
            EntityType::Function(self.probe_type()),
        );
        imports.import(
            PROBE_MODULE,
            PROBE_EXIT,
            EntityType::Function(self.probe_type()),
        );
    }
}

impl Reencode for Instrumenter {
    type Error = Error;

    fn function_index(&mut self, func: u32) -> Result<u32, reencode::Error<Error>> {
        Ok(if func >= self.num_imported {
            func + 2
        } else {
            func
        })
    }

    fn parse_type_section(
        &mut self,
        types: &mut TypeSection,
        section: wasmparser::TypeSectionReader<'_>,
    ) -> Result<(), reencode::Error<Error>> {
        reencode::utils::parse_type_section(self, types, section)?;
        self.add_probe_type(types);
        self.types_done = true;
        Ok(())
    }

    fn parse_import_section(
        &mut self,
        imports: &mut ImportSection,
        section: wasmparser::ImportSectionReader<'_>,
    ) -> Result<(), reencode::Error<Error>> {
        reencode::utils::parse_import_section(self, imports, section)?;
        self.add_probe_imports(imports);
        self.imports_done = true;
        Ok(())
    }

    fn intersperse_section_hook(
        &mut self,
        module: &mut wasm_encoder::Module,
        _after: Option<SectionId>,
        before: Option<SectionId>,
    ) -> Result<(), reencode::Error<Error>> {
        if !self.types_done && before != Some(SectionId::Type) {
            let mut types = TypeSection::new();
            self.add_probe_type(&mut types);
            module.section(&types);
            self.types_done = true;
        }
        if !self.imports_done
            && before != Some(SectionId::Type)
            && before != Some(SectionId::Import)
        {
            let mut imports = ImportSection::new();
            self.add_probe_imports(&mut imports);
            module.section(&imports);
            self.imports_done = true;
        }
        Ok(())
    }

    fn parse_function_body(
        &mut self,
        code: &mut CodeSection,
        body: FunctionBody<'_>,
    ) -> Result<(), reencode::Error<Error>> {
        let func_index = self.num_imported + self.next_defined;
        self.next_defined += 1;
        let result = self
            .func_results
            .get(func_index as usize)
            .copied()
            .flatten();
        let block_ty = match result {
            Some(ty) => BlockType::Result(ty),
            None => BlockType::Empty,
        };

        let mut f = self.new_function_with_parsed_locals(&body)?;
        let id = func_index as i32;
        let (enter, exit) = (self.enter_probe(), self.exit_probe());
        let mut exits = 0;
        f.instruction(&Instruction::I32Const(id));
        f.instruction(&Instruction::Call(enter));
        f.instruction(&Instruction::Block(block_ty));

        // Open structured blocks inside the original body.
        let mut depth: u32 = 0;
        // Nesting depth at which the current straight-line region became
        // unreachable, if it did.
        let mut dead_from: Option<u32> = None;
        let mut function_label_targeted = false;

        let mut reader = body.get_operators_reader()?;
        while !reader.eof() {
            let op = reader.read()?;
            match &op {
                Operator::Block { .. } | Operator::Loop { .. } | Operator::If { .. } => {
                    depth += 1;
                }
                Operator::Else => {
                    if dead_from == Some(depth) {
                        dead_from = None;
                    }
                }
                Operator::End => {
                    if depth == 0 {
                        // Final end of the body: close the wrapper, report exit.
                        f.instruction(&Instruction::End);
                        if dead_from.is_none() || function_label_targeted {
                            f.instruction(&Instruction::I32Const(id));
                            f.instruction(&Instruction::Call(exit));
                            exits += 1;
                        }
                        f.instruction(&Instruction::End);
                        continue;
                    }
                    if dead_from == Some(depth) {
                        dead_from = None;
                    }
                    depth -= 1;
                }
                Operator::Return
                | Operator::ReturnCall { .. }
                | Operator::ReturnCallIndirect { .. }
                | Operator::ReturnCallRef { .. } => {
                    f.instruction(&Instruction::I32Const(id));
                    f.instruction(&Instruction::Call(exit));
                    exits += 1;
                }
                Operator::Br { relative_depth } | Operator::BrIf { relative_depth } => {
                    function_label_targeted |= *relative_depth == depth;
                }
                Operator::BrTable { targets } => {
                    function_label_targeted |= targets.default() == depth;
                    for target in targets.targets() {
                        function_label_targeted |= target? == depth;
                    }
                }
                _ => {}
            }
            let ends_region = matches!(
                op,
                Operator::Return
                    | Operator::ReturnCall { .. }
                    | Operator::ReturnCallIndirect { .. }
                    | Operator::ReturnCallRef { .. }
                    | Operator::Unreachable
                    | Operator::Br { .. }
                    | Operator::BrTable { .. }
            );
            f.instruction(&self.instruction(op)?);
            if ends_region && dead_from.is_none() {
                dead_from = Some(depth);
            }
        }

        self.probes.push(FunctionProbes {
            func_index,
            enter: 1,
            exit: exits,
        });
        code.function(&f);
        Ok(())
    }
}
