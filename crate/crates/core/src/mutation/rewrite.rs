use std::collections::BTreeSet;

use wasm_encoder::reencode::{self, Reencode};
use wasm_encoder::CodeSection;
use wasmparser::{FunctionBody, Parser, Validator};

use super::{scan_function, ModuleCode, MutationPoint, OperatorId};
use crate::error::{Error, Result};

/// Produces the mutant for `point` from the original module bytes.
///
/// The operator's matcher is re-run on the addressed instruction, so a
/// point that does not belong to these bytes fails instead of silently
/// rewriting something else.
pub fn match_and_rewrite(point: &MutationPoint, module_bytes: &[u8]) -> Result<Vec<u8>> {
    rewrite_bytes(
        point.operator,
        point.func.func_index,
        point.instr_index,
        module_bytes,
    )
    .map_err(|reason| Error::RewriteFailure {
        mp_id: point.mp_id.clone(),
        reason,
    })
}

/// Applies `operator` at `(func_index, instr_index)` of `module_bytes`.
pub fn rewrite_bytes(
    operator: OperatorId,
    func_index: u32,
    instr_index: usize,
    module_bytes: &[u8],
) -> std::result::Result<Vec<u8>, String> {
    let code = ModuleCode::decode(module_bytes).map_err(|e| e.to_string())?;
    let replacement = scan_function(&code, func_index, &BTreeSet::from([operator]))
        .map_err(|e| e.to_string())?
        .into_iter()
        .find(|(idx, _, _)| *idx == instr_index)
        .map(|(_, _, m)| m.replacement)
        .ok_or_else(|| format!("{operator} does not match instruction {instr_index}"))?;

    let defined = func_index
        .checked_sub(code.num_imported)
        .ok_or("target is an imported function")?;
    let mut rewriter = SiteRewriter {
        target: defined,
        instr_index,
        replacement,
        next_defined: 0,
    };
    let mut out = wasm_encoder::Module::new();
    rewriter
        .parse_core_module(&mut out, Parser::new(0), module_bytes)
        .map_err(|e| e.to_string())?;
    let bytes = out.finish();
    Validator::new()
        .validate_all(&bytes)
        .map_err(|e| format!("mutant does not validate: {e}"))?;
    Ok(bytes)
}

struct SiteRewriter {
    target: u32,
    instr_index: usize,
    replacement: Vec<wasm_encoder::Instruction<'static>>,
    next_defined: u32,
}

impl Reencode for SiteRewriter {
    type Error = Error;

    fn parse_function_body(
        &mut self,
        code: &mut CodeSection,
        body: FunctionBody<'_>,
    ) -> Result<(), reencode::Error<Error>> {
        let current = self.next_defined;
        self.next_defined += 1;
        if current != self.target {
            return reencode::utils::parse_function_body(self, code, body);
        }
        let mut f = self.new_function_with_parsed_locals(&body)?;
        let mut reader = body.get_operators_reader()?;
        let mut idx = 0;
        while !reader.eof() {
            let op = reader.read()?;
            if idx == self.instr_index {
                for instr in &self.replacement {
                    f.instruction(instr);
                }
            } else {
                f.instruction(&self.instruction(op)?);
            }
            idx += 1;
        }
        code.function(&f);
        Ok(())
    }
}
