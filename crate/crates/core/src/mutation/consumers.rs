use std::collections::BTreeMap;

use wasmparser::{BlockType, FrameKind, Operator};

use super::code::{ArityContext, ModuleCode};
use crate::error::{Error, Result};

/// For each instruction that pushes exactly one value, the index of the
/// instruction that pops it. Values never popped (dropped by a branch,
/// discarded at an unreachable end) have no entry.
pub type ConsumerMap = BTreeMap<usize, usize>;

struct Frame {
    height: usize,
    dead: bool,
}

/// Abstract stack walk over one function body.
///
/// Structured instructions take part like any other: `block`/`loop`/`if`
/// consume their parameters and push them again, `else` and `end` consume
/// the arm's results, `end` pushes the block results, and `br_if` consumes
/// and re-pushes the label values it may carry. Unreachable code is
/// skipped up to its closing `else`/`end`.
pub fn stack_consumers(code: &ModuleCode, func_index: u32) -> Result<ConsumerMap> {
    let body = code
        .body(func_index)
        .ok_or_else(|| Error::AnalysisFailure {
            func_index,
            instr_index: 0,
            reason: "not a defined function".into(),
        })?;
    let ty = *code
        .func_types
        .get(func_index as usize)
        .expect("defined function has a type");

    let fail = |instr_index: usize, reason: &str| Error::AnalysisFailure {
        func_index,
        instr_index,
        reason: reason.to_string(),
    };

    let mut map = ConsumerMap::new();
    let mut ctx = ArityContext {
        code,
        frames: vec![(BlockType::FuncType(ty), FrameKind::Block)],
    };
    let mut frames = vec![Frame {
        height: 0,
        dead: false,
    }];
    let mut stack: Vec<Option<usize>> = Vec::new();
    // Blocks opened inside dead code, not tracked as frames.
    let mut dead_nesting = 0usize;

    for (idx, op) in body.iter().enumerate() {
        let frame = frames
            .last()
            .ok_or_else(|| fail(idx, "code after final end"))?;
        if frame.dead {
            match op {
                Operator::Block { .. }
                | Operator::Loop { .. }
                | Operator::If { .. }
                | Operator::TryTable { .. } => {
                    dead_nesting += 1;
                    continue;
                }
                Operator::End if dead_nesting > 0 => {
                    dead_nesting -= 1;
                    continue;
                }
                Operator::Else | Operator::End if dead_nesting == 0 => {}
                _ => continue,
            }
        }

        let (pops, pushes) = op
            .operator_arity(&ctx)
            .ok_or_else(|| fail(idx, "unsupported instruction"))?;
        let (pops, pushes) = (pops as usize, pushes as usize);

        let frame = frames.last().unwrap();
        if frame.dead {
            // The stack is polymorphic here: whatever the arm left is dropped.
            stack.truncate(frame.height);
        } else {
            if stack.len() < frame.height + pops {
                return Err(fail(idx, "stack underflow"));
            }
            for _ in 0..pops {
                if let Some(producer) = stack.pop().unwrap() {
                    map.insert(producer, idx);
                }
            }
        }
        let tag = (pushes == 1).then_some(idx);

        match op {
            Operator::Block { blockty } | Operator::Loop { blockty } | Operator::If { blockty } => {
                let kind = match op {
                    Operator::Loop { .. } => FrameKind::Loop,
                    Operator::If { .. } => FrameKind::If,
                    _ => FrameKind::Block,
                };
                ctx.frames.push((*blockty, kind));
                frames.push(Frame {
                    height: stack.len(),
                    dead: false,
                });
                stack.extend(std::iter::repeat_n(tag, pushes));
            }
            Operator::Else => {
                let frame = frames.last_mut().unwrap();
                if stack.len() != frame.height {
                    return Err(fail(idx, "unbalanced then-arm"));
                }
                frame.dead = false;
                ctx.frames.last_mut().unwrap().1 = FrameKind::Else;
                stack.extend(std::iter::repeat_n(tag, pushes));
            }
            Operator::End => {
                let frame = frames.pop().unwrap();
                if stack.len() != frame.height {
                    return Err(fail(idx, "unbalanced block"));
                }
                ctx.frames.pop();
                if !frames.is_empty() {
                    stack.extend(std::iter::repeat_n(tag, pushes));
                }
            }
            _ => {
                stack.extend(std::iter::repeat_n(tag, pushes));
                if ends_region(op) {
                    let frame = frames.last_mut().unwrap();
                    frame.dead = true;
                    stack.truncate(frame.height);
                }
            }
        }
    }
    if !frames.is_empty() {
        return Err(fail(body.len(), "missing final end"));
    }
    Ok(map)
}

pub(crate) fn ends_region(op: &Operator) -> bool {
    matches!(
        op,
        Operator::Unreachable
            | Operator::Br { .. }
            | Operator::BrTable { .. }
            | Operator::Return
            | Operator::ReturnCall { .. }
            | Operator::ReturnCallIndirect { .. }
            | Operator::ReturnCallRef { .. }
            | Operator::Throw { .. }
            | Operator::ThrowRef
            | Operator::Rethrow { .. }
    )
}
