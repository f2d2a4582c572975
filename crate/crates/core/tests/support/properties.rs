//! Operator exactness checks shared by the property tests and the
//! acceptance suite. Each check samples inputs with a fixed-seed runner
//! and runs the original and rewritten modules side by side.

use std::cell::RefCell;
use std::collections::BTreeSet;

use mullw_core::mutation::rewrite_bytes;
use mullw_core::{
    enumerate_points, match_and_rewrite, ExcludeFilter, FuncRef, LoadedModule, ModuleId,
    MutationDetail, OperatorId, ScalarValue,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use wasmparser::{Operator, Parser, Payload};
use wasmtime::{Engine, Instance, Module, Store, TypedFunc, WasmParams, WasmResults};

pub const INT_PREDICATES: [&str; 10] = [
    "eq", "ne", "lt_s", "lt_u", "gt_s", "gt_u", "le_s", "le_u", "ge_s", "ge_u",
];
pub const FLOAT_PREDICATES: [&str; 6] = ["eq", "ne", "lt", "gt", "le", "ge"];

/// Samples per property.
pub const CASES: u32 = 10_000;

pub fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

pub fn binary_module(ty: &str, op: &str, result: &str) -> Vec<u8> {
    wat::parse_str(format!(
        "(module (func (export \"f\") (param {ty} {ty}) (result {result}) \
         local.get 0 local.get 1 {ty}.{op}))"
    ))
    .unwrap()
}

/// Original and mutant instantiated in one store.
pub struct Pair<P, R> {
    store: Store<()>,
    original: TypedFunc<P, R>,
    mutated: TypedFunc<P, R>,
}

impl<P: WasmParams + Copy, R: WasmResults> Pair<P, R> {
    pub fn new(original: &[u8], mutated: &[u8]) -> Self {
        let engine = Engine::default();
        let mut store = Store::new(&engine, ());
        let mut load = |bytes: &[u8]| {
            let module = Module::new(&engine, bytes).unwrap();
            let instance = Instance::new(&mut store, &module, &[]).unwrap();
            instance.get_typed_func::<P, R>(&mut store, "f").unwrap()
        };
        let original = load(original);
        let mutated = load(mutated);
        Pair {
            store,
            original,
            mutated,
        }
    }

    pub fn call(&mut self, args: P) -> (R, R) {
        (
            self.original.call(&mut self.store, args).unwrap(),
            self.mutated.call(&mut self.store, args).unwrap(),
        )
    }
}

pub fn negated_pair<P: WasmParams + Copy, R: WasmResults>(ty: &str, op: &str) -> Pair<P, R> {
    let original = binary_module(ty, op, "i32");
    let mutated = rewrite_bytes(OperatorId::NegateCondition, 0, 2, &original).unwrap();
    Pair::new(&original, &mutated)
}

/// `Debug` text of every operator of the first function body.
pub fn body_ops(bytes: &[u8]) -> Vec<String> {
    for payload in Parser::new(0).parse_all(bytes) {
        if let Payload::CodeSectionEntry(body) = payload.unwrap() {
            return body
                .get_operators_reader()
                .unwrap()
                .into_iter()
                .map(|op| format!("{:?}", op.unwrap()))
                .collect();
        }
    }
    panic!("no code section")
}

/// Values of the 16-bit range, read as signed or unsigned.
pub fn int16() -> impl Strategy<Value = i64> {
    prop_oneof![
        any::<i16>().prop_map(i64::from),
        any::<u16>().prop_map(i64::from)
    ]
}

pub fn special_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        Just(0.0),
        Just(-0.0),
        Just(f64::INFINITY),
        Just(f64::NEG_INFINITY),
        Just(f64::NAN),
        Just(f64::MIN_POSITIVE),
        any::<f64>(),
        (-4i32..4).prop_map(f64::from),
    ]
}

pub fn special_f32() -> impl Strategy<Value = f32> {
    special_f64().prop_map(|v| v as f32)
}

/// Swapped integer predicates return `1 - original`.
pub fn integer_predicates_complemented(cases: u32) -> Result<(), String> {
    for op in INT_PREDICATES {
        let pair = RefCell::new(negated_pair::<(i32, i32), i32>("i32", op));
        run(cases, (int16(), int16()), |(a, b)| {
            let (o, m) = pair.borrow_mut().call((a as i32, b as i32));
            prop_assert_eq!(m, 1 - o, "i32.{}({}, {})", op, a, b);
            Ok(())
        })?;
        let pair = RefCell::new(negated_pair::<(i64, i64), i32>("i64", op));
        run(cases, (int16(), int16()), |(a, b)| {
            let (o, m) = pair.borrow_mut().call((a, b));
            prop_assert_eq!(m, 1 - o, "i64.{}({}, {})", op, a, b);
            Ok(())
        })?;
    }
    Ok(())
}

/// Float predicates followed by `eqz` return `1 - original`, NaN included.
pub fn float_predicates_complemented(cases: u32) -> Result<(), String> {
    for op in FLOAT_PREDICATES {
        let pair = RefCell::new(negated_pair::<(f32, f32), i32>("f32", op));
        run(cases, (special_f32(), special_f32()), |(a, b)| {
            let (o, m) = pair.borrow_mut().call((a, b));
            prop_assert_eq!(m, 1 - o, "f32.{}({:?}, {:?})", op, a, b);
            Ok(())
        })?;
        let pair = RefCell::new(negated_pair::<(f64, f64), i32>("f64", op));
        run(cases, (special_f64(), special_f64()), |(a, b)| {
            let (o, m) = pair.borrow_mut().call((a, b));
            prop_assert_eq!(m, 1 - o, "f64.{}({:?}, {:?})", op, a, b);
            Ok(())
        })?;
    }
    Ok(())
}

/// Negating twice gives back the original predicate (integers) or the
/// original results (floats).
pub fn double_negation_restores(cases: u32) -> Result<(), String> {
    for op in INT_PREDICATES {
        let original = binary_module("i32", op, "i32");
        let once = rewrite_bytes(OperatorId::NegateCondition, 0, 2, &original)?;
        let twice = rewrite_bytes(OperatorId::NegateCondition, 0, 2, &once)?;
        if body_ops(&once) == body_ops(&original) || body_ops(&twice) != body_ops(&original) {
            return Err(format!("i32.{op}: double negation is not the identity"));
        }
    }
    for op in FLOAT_PREDICATES {
        let original = binary_module("f64", op, "i32");
        let once = rewrite_bytes(OperatorId::NegateCondition, 0, 2, &original)?;
        let twice = rewrite_bytes(OperatorId::NegateCondition, 0, 2, &once)?;
        let pair = RefCell::new(Pair::<(f64, f64), i32>::new(&original, &twice));
        run(cases, (special_f64(), special_f64()), |(a, b)| {
            let (o, m) = pair.borrow_mut().call((a, b));
            prop_assert_eq!(o, m, "f64.{}({:?}, {:?})", op, a, b);
            Ok(())
        })?;
    }
    Ok(())
}

/// MathAdd then MathSub at the same site restores the module; the single
/// rewrite computes `a - b`.
pub fn add_sub_inverse(cases: u32) -> Result<(), String> {
    for ty in ["i32", "i64", "f32", "f64"] {
        let original = binary_module(ty, "add", ty);
        let sub = rewrite_bytes(OperatorId::MathAdd, 0, 2, &original)?;
        if body_ops(&sub)[2] != body_ops(&binary_module(ty, "sub", ty))[2] {
            return Err(format!("{ty}.add did not become {ty}.sub"));
        }
        let back = rewrite_bytes(OperatorId::MathSub, 0, 2, &sub)?;
        if body_ops(&back) != body_ops(&original) {
            return Err(format!("{ty}: MathSub after MathAdd is not the identity"));
        }
    }
    let original = binary_module("i32", "add", "i32");
    let sub = rewrite_bytes(OperatorId::MathAdd, 0, 2, &original)?;
    let back = rewrite_bytes(OperatorId::MathSub, 0, 2, &sub)?;
    let once = RefCell::new(Pair::<(i32, i32), i32>::new(&original, &sub));
    let twice = RefCell::new(Pair::<(i32, i32), i32>::new(&original, &back));
    run(cases, (any::<i32>(), any::<i32>()), |(a, b)| {
        let (o, m) = once.borrow_mut().call((a, b));
        prop_assert_eq!(o, a.wrapping_add(b));
        prop_assert_eq!(m, a.wrapping_sub(b));
        let (o, m) = twice.borrow_mut().call((a, b));
        prop_assert_eq!(o, m);
        Ok(())
    })
}

/// A random straight-line i32 function body over two params, with helper
/// calls, as WAT instructions.
pub fn straight_line() -> impl Strategy<Value = Vec<String>> {
    let step = prop_oneof![
        any::<i32>().prop_map(|v| format!("push:i32.const {v}")),
        (0u32..2).prop_map(|i| format!("push:local.get {i}")),
        prop::sample::select(vec![
            "i32.add",
            "i32.sub",
            "i32.mul",
            "i32.div_s",
            "i32.and",
            "i32.xor",
            "i32.eq",
            "i32.lt_s",
            "i32.ge_u",
        ])
        .prop_map(|op| format!("bin:{op}")),
        Just("un:i32.eqz".to_string()),
        Just("un:call $id".to_string()),
        Just("un:call $pick".to_string()),
        Just("sink:call $sink".to_string()),
        Just("sink:drop".to_string()),
        Just("sink:return".to_string()),
    ];
    prop::collection::vec(step, 1..40).prop_map(|steps| {
        let mut out = Vec::new();
        let mut depth = 0usize;
        for s in steps {
            let (kind, instr) = s.split_once(':').unwrap();
            match (kind, instr) {
                ("push", _) => depth += 1,
                ("bin", _) if depth >= 2 => depth -= 1,
                ("un", _) if depth >= 1 => {}
                ("sink", "return") if depth >= 1 => {
                    // the rest of the body would be unreachable
                    out.push("return".into());
                    return out;
                }
                ("sink", _) if depth >= 1 => depth -= 1,
                _ => continue,
            }
            out.push(instr.to_string());
        }
        if depth == 0 {
            out.push("i32.const 0".into());
            depth = 1;
        }
        while depth > 1 {
            out.push("i32.add".into());
            depth -= 1;
        }
        out
    })
}

pub fn random_module(body: &[String]) -> Vec<u8> {
    let text = format!(
        "(module \
           (func $id (param i32) (result i32) local.get 0) \
           (func $pick (param i32) (result i32) i32.const 7 local.get 0 i32.lt_s) \
           (func $sink (param i32)) \
           (func (export \"f\") (param i32 i32) (result i32) {}))",
        body.join(" ")
    );
    wat::parse_str(&text).unwrap()
}

/// Every point of `bytes` under all operators, with all functions covered.
pub fn all_points(module: &LoadedModule) -> Vec<mullw_core::MutationPoint> {
    let covered: BTreeSet<FuncRef> = module
        .functions
        .iter()
        .filter(|f| !f.is_imported)
        .map(|f| FuncRef::new(module.id, f.func_index))
        .collect();
    let ops: BTreeSet<OperatorId> = OperatorId::ALL.into_iter().collect();
    enumerate_points(
        std::slice::from_ref(module),
        &ops,
        &covered,
        &ExcludeFilter::none(),
    )
    .unwrap()
}

/// Every mutant of random modules validates and differs from its original.
/// Returns the number of mutants checked.
pub fn random_mutants_validate(cases: u32) -> Result<usize, String> {
    let checked = RefCell::new(0usize);
    run(cases, straight_line(), |body| {
        let bytes = random_module(&body);
        let module = LoadedModule::from_bytes(ModuleId(0), "r.wasm", bytes.clone()).unwrap();
        for p in all_points(&module) {
            let mutated =
                match_and_rewrite(&p, &bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!(wasmparser::validate(&mutated).is_ok(), "{}", p.mp_id);
            prop_assert_ne!(&mutated, &bytes);
            *checked.borrow_mut() += 1;
        }
        Ok(())
    })?;
    Ok(checked.into_inner())
}

/// Constant that a scalar replacement writes at `instr_index` of the
/// point's function, decoded from the mutant bytes.
pub fn decoded_replacement(
    point: &mullw_core::MutationPoint,
    bytes: &[u8],
) -> Result<ScalarValue, String> {
    let mutated = match_and_rewrite(point, bytes).map_err(|e| e.to_string())?;
    let mut defined = 0u32;
    let mut imported = 0u32;
    for payload in Parser::new(0).parse_all(&mutated) {
        match payload.map_err(|e| e.to_string())? {
            Payload::ImportSection(r) => {
                for imp in r.into_imports() {
                    if matches!(
                        imp.map_err(|e| e.to_string())?.ty,
                        wasmparser::TypeRef::Func(_)
                    ) {
                        imported += 1;
                    }
                }
            }
            Payload::CodeSectionEntry(body) => {
                if imported + defined == point.func.func_index {
                    let op = body
                        .get_operators_reader()
                        .map_err(|e| e.to_string())?
                        .into_iter()
                        .nth(point.instr_index)
                        .ok_or("instruction index out of range")?
                        .map_err(|e| e.to_string())?;
                    return Ok(match op {
                        Operator::I32Const { value } => ScalarValue::I32(value),
                        Operator::I64Const { value } => ScalarValue::I64(value),
                        Operator::F32Const { value } => ScalarValue::F32(value.bits()),
                        Operator::F64Const { value } => ScalarValue::F64(value.bits()),
                        other => return Err(format!("{}: not a constant: {other:?}", point.mp_id)),
                    });
                }
                defined += 1;
            }
            _ => {}
        }
    }
    Err(format!("{}: function not found", point.mp_id))
}

/// The replacement rule, stated independently: numeric zero becomes one,
/// anything else (NaN included) becomes zero.
pub fn expected_replacement(original: ScalarValue) -> ScalarValue {
    match original {
        ScalarValue::I32(v) => ScalarValue::I32(if v == 0 { 1 } else { 0 }),
        ScalarValue::I64(v) => ScalarValue::I64(if v == 0 { 1 } else { 0 }),
        ScalarValue::F32(b) => {
            let z = f32::from_bits(b) == 0.0;
            ScalarValue::F32(if z { 1.0f32 } else { 0.0 }.to_bits())
        }
        ScalarValue::F64(b) => {
            let z = f64::from_bits(b) == 0.0;
            ScalarValue::F64(if z { 1.0f64 } else { 0.0 }.to_bits())
        }
    }
}

/// Checks one scalar point: detail and decoded bytes both follow the rule.
pub fn check_svr_point(point: &mullw_core::MutationPoint, bytes: &[u8]) -> Result<(), String> {
    let MutationDetail::Scalar {
        original,
        replacement,
    } = point.detail
    else {
        return Err(format!("{}: not a scalar point", point.mp_id));
    };
    let expected = expected_replacement(original);
    let decoded = decoded_replacement(point, bytes)?;
    if replacement != expected || decoded != expected {
        return Err(format!(
            "{}: {original} became {decoded} (detail {replacement}), expected {expected}",
            point.mp_id
        ));
    }
    Ok(())
}

pub fn const_module(v: ScalarValue) -> Vec<u8> {
    use wasm_encoder::{CodeSection, Function, FunctionSection, TypeSection, ValType};
    let ty = match v {
        ScalarValue::I32(_) => ValType::I32,
        ScalarValue::I64(_) => ValType::I64,
        ScalarValue::F32(_) => ValType::F32,
        ScalarValue::F64(_) => ValType::F64,
    };
    let mut types = TypeSection::new();
    types.ty().function([], [ty]);
    let mut funcs = FunctionSection::new();
    funcs.function(0);
    let mut f = Function::new([]);
    f.instruction(&v.instruction());
    f.instruction(&wasm_encoder::Instruction::End);
    let mut code = CodeSection::new();
    code.function(&f);
    let mut m = wasm_encoder::Module::new();
    m.section(&types).section(&funcs).section(&code);
    m.finish()
}

pub fn scalar() -> impl Strategy<Value = ScalarValue> {
    prop_oneof![
        prop_oneof![Just(0i32), any::<i32>()].prop_map(ScalarValue::I32),
        prop_oneof![Just(0i64), any::<i64>()].prop_map(ScalarValue::I64),
        special_f32().prop_map(|v| ScalarValue::F32(v.to_bits())),
        special_f64().prop_map(|v| ScalarValue::F64(v.to_bits())),
    ]
}

/// Sampled constants returned directly: decoded replacement follows the rule.
pub fn svr_rule_sampled(cases: u32) -> Result<(), String> {
    run(cases, scalar(), |v| {
        let bytes = const_module(v);
        let module = LoadedModule::from_bytes(ModuleId(0), "k.wasm", bytes.clone()).unwrap();
        let points: Vec<_> = all_points(&module)
            .into_iter()
            .filter(|p| p.operator == OperatorId::ScalarValueReplacement)
            .collect();
        prop_assert_eq!(points.len(), 1);
        check_svr_point(&points[0], &bytes).map_err(TestCaseError::fail)?;
        Ok(())
    })
}
