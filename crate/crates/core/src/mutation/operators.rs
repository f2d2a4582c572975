use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use wasm_encoder::Instruction;
use wasmparser::Operator;

use crate::module_store::{FuncSig, ValKind};

/// The closed set of mutation operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorId {
    MathAdd,
    MathSub,
    MathMul,
    MathDiv,
    NegateCondition,
    RemoveVoidFunction,
    ReplaceCall,
    ScalarValueReplacement,
}

impl OperatorId {
    pub const ALL: [OperatorId; 8] = [
        OperatorId::MathAdd,
        OperatorId::MathSub,
        OperatorId::MathMul,
        OperatorId::MathDiv,
        OperatorId::NegateCondition,
        OperatorId::RemoveVoidFunction,
        OperatorId::ReplaceCall,
        OperatorId::ScalarValueReplacement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorId::MathAdd => "MathAdd",
            OperatorId::MathSub => "MathSub",
            OperatorId::MathMul => "MathMul",
            OperatorId::MathDiv => "MathDiv",
            OperatorId::NegateCondition => "NegateCondition",
            OperatorId::RemoveVoidFunction => "RemoveVoidFunction",
            OperatorId::ReplaceCall => "ReplaceCall",
            OperatorId::ScalarValueReplacement => "ScalarValueReplacement",
        }
    }
}

impl fmt::Display for OperatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown mutation operator `{0}`")]
pub struct UnknownOperator(pub String);

impl FromStr for OperatorId {
    type Err = UnknownOperator;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OperatorId::ALL
            .into_iter()
            .find(|op| op.as_str() == s)
            .ok_or_else(|| UnknownOperator(s.to_string()))
    }
}

/// A scalar constant, floats kept as raw bits so NaN payloads survive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScalarValue {
    I32(i32),
    I64(i64),
    F32(u32),
    F64(u64),
}

impl ScalarValue {
    pub fn is_zero(self) -> bool {
        match self {
            ScalarValue::I32(v) => v == 0,
            ScalarValue::I64(v) => v == 0,
            ScalarValue::F32(bits) => f32::from_bits(bits) == 0.0,
            ScalarValue::F64(bits) => f64::from_bits(bits) == 0.0,
        }
    }

    /// Nonzero becomes 0, zero becomes 1, in the same type.
    pub fn replacement(self) -> ScalarValue {
        let zero = self.is_zero();
        match self {
            ScalarValue::I32(_) => ScalarValue::I32(zero as i32),
            ScalarValue::I64(_) => ScalarValue::I64(zero as i64),
            ScalarValue::F32(_) => ScalarValue::F32(if zero { 1.0f32 } else { 0.0 }.to_bits()),
            ScalarValue::F64(_) => ScalarValue::F64(if zero { 1.0f64 } else { 0.0 }.to_bits()),
        }
    }

    pub fn of_const(op: &Operator) -> Option<ScalarValue> {
        Some(match *op {
            Operator::I32Const { value } => ScalarValue::I32(value),
            Operator::I64Const { value } => ScalarValue::I64(value),
            Operator::F32Const { value } => ScalarValue::F32(value.bits()),
            Operator::F64Const { value } => ScalarValue::F64(value.bits()),
            _ => return None,
        })
    }

    pub fn instruction(self) -> Instruction<'static> {
        match self {
            ScalarValue::I32(v) => Instruction::I32Const(v),
            ScalarValue::I64(v) => Instruction::I64Const(v),
            ScalarValue::F32(bits) => Instruction::F32Const(f32::from_bits(bits).into()),
            ScalarValue::F64(bits) => Instruction::F64Const(f64::from_bits(bits).into()),
        }
    }

    fn forty_two(kind: ValKind) -> Option<ScalarValue> {
        Some(match kind {
            ValKind::I32 => ScalarValue::I32(42),
            ValKind::I64 => ScalarValue::I64(42),
            ValKind::F32 => ScalarValue::F32(42.0f32.to_bits()),
            ValKind::F64 => ScalarValue::F64(42.0f64.to_bits()),
            _ => return None,
        })
    }
}

impl fmt::Display for ScalarValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ScalarValue::I32(v) => write!(f, "i32 {v}"),
            ScalarValue::I64(v) => write!(f, "i64 {v}"),
            ScalarValue::F32(b) => write!(f, "f32 {:?}", f32::from_bits(b)),
            ScalarValue::F64(b) => write!(f, "f64 {:?}", f64::from_bits(b)),
        }
    }
}

/// Operator-specific payload recorded with each mutation point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MutationDetail {
    Replace {
        from: String,
        to: String,
    },
    NegateFloat {
        predicate: String,
    },
    RemoveCall {
        callee: u32,
        arity: usize,
    },
    ReplaceCall {
        callee: u32,
        arity: usize,
        value: ScalarValue,
    },
    Scalar {
        original: ScalarValue,
        replacement: ScalarValue,
    },
}

impl fmt::Display for MutationDetail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MutationDetail::Replace { from, to } => write!(f, "{from} -> {to}"),
            MutationDetail::NegateFloat { predicate } => write!(f, "{predicate} -> !{predicate}"),
            MutationDetail::RemoveCall { callee, .. } => write!(f, "remove call {callee}"),
            MutationDetail::ReplaceCall { callee, value, .. } => {
                write!(f, "call {callee} -> {value}")
            }
            MutationDetail::Scalar {
                original,
                replacement,
            } => write!(f, "{original} -> {replacement}"),
        }
    }
}

/// What an operator needs to know about the instruction's surroundings.
pub struct MatchContext<'a> {
    /// Signature and import origin of the callee, for direct calls.
    pub callee: Option<(&'a FuncSig, Option<&'a (String, String)>)>,
    /// Instruction that pops this instruction's result, if any.
    pub consumer: Option<&'a Operator<'a>>,
    /// Whether `consumer` is the function's final `end`.
    pub consumer_is_function_end: bool,
}

/// Outcome of a successful match: a payload for the point and the
/// instruction sequence that replaces the matched one.
pub struct Matched {
    pub detail: MutationDetail,
    pub replacement: Vec<Instruction<'static>>,
}

fn replace(from: &str, to: &str, instr: Instruction<'static>) -> Matched {
    Matched {
        detail: MutationDetail::Replace {
            from: from.into(),
            to: to.into(),
        },
        replacement: vec![instr],
    }
}

pub fn match_operator(id: OperatorId, op: &Operator, ctx: &MatchContext) -> Option<Matched> {
    use Instruction as I;
    use Operator as O;
    match id {
        OperatorId::MathAdd => Some(match op {
            O::I32Add => replace("i32.add", "i32.sub", I::I32Sub),
            O::I64Add => replace("i64.add", "i64.sub", I::I64Sub),
            O::F32Add => replace("f32.add", "f32.sub", I::F32Sub),
            O::F64Add => replace("f64.add", "f64.sub", I::F64Sub),
            _ => return None,
        }),
        OperatorId::MathSub => Some(match op {
            O::I32Sub => replace("i32.sub", "i32.add", I::I32Add),
            O::I64Sub => replace("i64.sub", "i64.add", I::I64Add),
            O::F32Sub => replace("f32.sub", "f32.add", I::F32Add),
            O::F64Sub => replace("f64.sub", "f64.add", I::F64Add),
            _ => return None,
        }),
        OperatorId::MathMul => Some(match op {
            O::I32Mul => replace("i32.mul", "i32.div_s", I::I32DivS),
            O::I64Mul => replace("i64.mul", "i64.div_s", I::I64DivS),
            O::F32Mul => replace("f32.mul", "f32.div", I::F32Div),
            O::F64Mul => replace("f64.mul", "f64.div", I::F64Div),
            _ => return None,
        }),
        OperatorId::MathDiv => Some(match op {
            O::I32DivS => replace("i32.div_s", "i32.mul", I::I32Mul),
            O::I32DivU => replace("i32.div_u", "i32.mul", I::I32Mul),
            O::I64DivS => replace("i64.div_s", "i64.mul", I::I64Mul),
            O::I64DivU => replace("i64.div_u", "i64.mul", I::I64Mul),
            O::F32Div => replace("f32.div", "f32.mul", I::F32Mul),
            O::F64Div => replace("f64.div", "f64.mul", I::F64Mul),
            _ => return None,
        }),
        OperatorId::NegateCondition => negate_condition(op),
        OperatorId::RemoveVoidFunction => {
            let O::Call { function_index } = *op else {
                return None;
            };
            let (sig, import) = ctx.callee?;
            if !sig.results.is_empty() || is_probe(import) {
                return None;
            }
            Some(Matched {
                detail: MutationDetail::RemoveCall {
                    callee: function_index,
                    arity: sig.params.len(),
                },
                replacement: vec![I::Drop; sig.params.len()],
            })
        }
        OperatorId::ReplaceCall => {
            let O::Call { function_index } = *op else {
                return None;
            };
            let (sig, import) = ctx.callee?;
            if sig.results.len() != 1 || is_probe(import) {
                return None;
            }
            let value = ScalarValue::forty_two(sig.results[0])?;
            let mut replacement = vec![I::Drop; sig.params.len()];
            replacement.push(value.instruction());
            Some(Matched {
                detail: MutationDetail::ReplaceCall {
                    callee: function_index,
                    arity: sig.params.len(),
                    value,
                },
                replacement,
            })
        }
        OperatorId::ScalarValueReplacement => {
            let original = ScalarValue::of_const(op)?;
            if !scalar_consumer_allowed(ctx.consumer?, ctx.consumer_is_function_end) {
                return None;
            }
            let replacement = original.replacement();
            Some(Matched {
                detail: MutationDetail::Scalar {
                    original,
                    replacement,
                },
                replacement: vec![replacement.instruction()],
            })
        }
    }
}

fn is_probe(import: Option<&(String, String)>) -> bool {
    import.is_some_and(|(module, _)| module == crate::instrumentation::PROBE_MODULE)
}

fn negate_condition(op: &Operator) -> Option<Matched> {
    use Instruction as I;
    use Operator as O;
    let swap = |from, to, instr| Some(replace(from, to, instr));
    match op {
        O::I32Eq => swap("i32.eq", "i32.ne", I::I32Ne),
        O::I32Ne => swap("i32.ne", "i32.eq", I::I32Eq),
        O::I32LtS => swap("i32.lt_s", "i32.ge_s", I::I32GeS),
        O::I32GeS => swap("i32.ge_s", "i32.lt_s", I::I32LtS),
        O::I32GtS => swap("i32.gt_s", "i32.le_s", I::I32LeS),
        O::I32LeS => swap("i32.le_s", "i32.gt_s", I::I32GtS),
        O::I32LtU => swap("i32.lt_u", "i32.ge_u", I::I32GeU),
        O::I32GeU => swap("i32.ge_u", "i32.lt_u", I::I32LtU),
        O::I32GtU => swap("i32.gt_u", "i32.le_u", I::I32LeU),
        O::I32LeU => swap("i32.le_u", "i32.gt_u", I::I32GtU),
        O::I64Eq => swap("i64.eq", "i64.ne", I::I64Ne),
        O::I64Ne => swap("i64.ne", "i64.eq", I::I64Eq),
        O::I64LtS => swap("i64.lt_s", "i64.ge_s", I::I64GeS),
        O::I64GeS => swap("i64.ge_s", "i64.lt_s", I::I64LtS),
        O::I64GtS => swap("i64.gt_s", "i64.le_s", I::I64LeS),
        O::I64LeS => swap("i64.le_s", "i64.gt_s", I::I64GtS),
        O::I64LtU => swap("i64.lt_u", "i64.ge_u", I::I64GeU),
        O::I64GeU => swap("i64.ge_u", "i64.lt_u", I::I64LtU),
        O::I64GtU => swap("i64.gt_u", "i64.le_u", I::I64LeU),
        O::I64LeU => swap("i64.le_u", "i64.gt_u", I::I64GtU),
        _ => {
            let (predicate, instr) = match op {
                O::F32Eq => ("f32.eq", I::F32Eq),
                O::F32Ne => ("f32.ne", I::F32Ne),
                O::F32Lt => ("f32.lt", I::F32Lt),
                O::F32Gt => ("f32.gt", I::F32Gt),
                O::F32Le => ("f32.le", I::F32Le),
                O::F32Ge => ("f32.ge", I::F32Ge),
                O::F64Eq => ("f64.eq", I::F64Eq),
                O::F64Ne => ("f64.ne", I::F64Ne),
                O::F64Lt => ("f64.lt", I::F64Lt),
                O::F64Gt => ("f64.gt", I::F64Gt),
                O::F64Le => ("f64.le", I::F64Le),
                O::F64Ge => ("f64.ge", I::F64Ge),
                _ => return None,
            };
            // No unordered predicates to swap to: keep the comparison and
            // invert its i32 result.
            Some(Matched {
                detail: MutationDetail::NegateFloat {
                    predicate: predicate.into(),
                },
                replacement: vec![instr, I::I32Eqz],
            })
        }
    }
}

/// Consumers that make a constant a scalar-replacement target: binary
/// arithmetic, binary comparison, the function's return value, and direct
/// call arguments.
pub fn scalar_consumer_allowed(consumer: &Operator, is_function_end: bool) -> bool {
    use Operator as O;
    match consumer {
        O::End => is_function_end,
        O::Return | O::Call { .. } => true,
        _ => is_binary_arithmetic(consumer) || is_binary_comparison(consumer),
    }
}

pub fn is_binary_arithmetic(op: &Operator) -> bool {
    use Operator as O;
    matches!(
        op,
        O::I32Add
            | O::I32Sub
            | O::I32Mul
            | O::I32DivS
            | O::I32DivU
            | O::I32RemS
            | O::I32RemU
            | O::I32And
            | O::I32Or
            | O::I32Xor
            | O::I32Shl
            | O::I32ShrS
            | O::I32ShrU
            | O::I32Rotl
            | O::I32Rotr
            | O::I64Add
            | O::I64Sub
            | O::I64Mul
            | O::I64DivS
            | O::I64DivU
            | O::I64RemS
            | O::I64RemU
            | O::I64And
            | O::I64Or
            | O::I64Xor
            | O::I64Shl
            | O::I64ShrS
            | O::I64ShrU
            | O::I64Rotl
            | O::I64Rotr
            | O::F32Add
            | O::F32Sub
            | O::F32Mul
            | O::F32Div
            | O::F32Min
            | O::F32Max
            | O::F32Copysign
            | O::F64Add
            | O::F64Sub
            | O::F64Mul
            | O::F64Div
            | O::F64Min
            | O::F64Max
            | O::F64Copysign
    )
}

pub fn is_binary_comparison(op: &Operator) -> bool {
    use Operator as O;
    matches!(
        op,
        O::I32Eq
            | O::I32Ne
            | O::I32LtS
            | O::I32LtU
            | O::I32GtS
            | O::I32GtU
            | O::I32LeS
            | O::I32LeU
            | O::I32GeS
            | O::I32GeU
            | O::I64Eq
            | O::I64Ne
            | O::I64LtS
            | O::I64LtU
            | O::I64GtS
            | O::I64GtU
            | O::I64LeS
            | O::I64LeU
            | O::I64GeS
            | O::I64GeU
            | O::F32Eq
            | O::F32Ne
            | O::F32Lt
            | O::F32Gt
            | O::F32Le
            | O::F32Ge
            | O::F64Eq
            | O::F64Ne
            | O::F64Lt
            | O::F64Gt
            | O::F64Le
            | O::F64Ge
    )
}
