//! Test-only oracles, written without the engine's analysis code.
//!
//! `Interp` is a small reference interpreter that records, for every value
//! it pops, which instruction produced it and which consumed it. `scan`
//! re-implements the operator matcher tables over `Debug` names of the
//! decoded operators, taking constant consumers from interpreter runs.

use std::collections::{BTreeMap, BTreeSet};

use wasmparser::{BlockType, FuncType, Operator, Parser, Payload, TypeRef, ValType};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum V {
    I32(i32),
    I64(i64),
    F32(f32),
    F64(f64),
}

impl V {
    fn zero(t: ValType) -> V {
        match t {
            ValType::I32 => V::I32(0),
            ValType::I64 => V::I64(0),
            ValType::F32 => V::F32(0.0),
            ValType::F64 => V::F64(0.0),
            other => panic!("oracle does not model {other:?}"),
        }
    }

    pub fn i32(self) -> i32 {
        match self {
            V::I32(v) => v,
            other => panic!("expected i32, got {other:?}"),
        }
    }

    fn i64(self) -> i64 {
        match self {
            V::I64(v) => v,
            other => panic!("expected i64, got {other:?}"),
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
pub enum Trap {
    Unreachable,
    DivByZero,
    Exit,
    Fuel,
}

pub struct Module<'a> {
    pub types: Vec<FuncType>,
    pub func_types: Vec<u32>,
    pub imports: Vec<(String, String)>,
    pub globals_init: Vec<V>,
    pub bodies: Vec<Vec<Operator<'a>>>,
    pub locals: Vec<Vec<ValType>>,
    pub exports: BTreeMap<String, u32>,
}

impl<'a> Module<'a> {
    pub fn parse(bytes: &'a [u8]) -> Self {
        let mut m = Module {
            types: Vec::new(),
            func_types: Vec::new(),
            imports: Vec::new(),
            globals_init: Vec::new(),
            bodies: Vec::new(),
            locals: Vec::new(),
            exports: BTreeMap::new(),
        };
        for payload in Parser::new(0).parse_all(bytes) {
            match payload.unwrap() {
                Payload::TypeSection(r) => {
                    for ty in r.into_iter_err_on_gc_types() {
                        m.types.push(ty.unwrap());
                    }
                }
                Payload::ImportSection(r) => {
                    for imp in r.into_imports() {
                        let imp = imp.unwrap();
                        if let TypeRef::Func(t) = imp.ty {
                            m.func_types.push(t);
                            m.imports.push((imp.module.into(), imp.name.into()));
                        }
                    }
                }
                Payload::FunctionSection(r) => {
                    for t in r {
                        m.func_types.push(t.unwrap());
                    }
                }
                Payload::GlobalSection(r) => {
                    for g in r {
                        let g = g.unwrap();
                        let op = g.init_expr.get_operators_reader().read().unwrap();
                        m.globals_init.push(match op {
                            Operator::I32Const { value } => V::I32(value),
                            Operator::I64Const { value } => V::I64(value),
                            Operator::F32Const { value } => V::F32(f32::from_bits(value.bits())),
                            Operator::F64Const { value } => V::F64(f64::from_bits(value.bits())),
                            other => panic!("unsupported global init {other:?}"),
                        });
                    }
                }
                Payload::ExportSection(r) => {
                    for e in r {
                        let e = e.unwrap();
                        if let wasmparser::ExternalKind::Func = e.kind {
                            m.exports.insert(e.name.into(), e.index);
                        }
                    }
                }
                Payload::CodeSectionEntry(body) => {
                    let mut locals = Vec::new();
                    for l in body.get_locals_reader().unwrap() {
                        let (n, t) = l.unwrap();
                        locals.extend(std::iter::repeat_n(t, n as usize));
                    }
                    m.locals.push(locals);
                    let ops = body
                        .get_operators_reader()
                        .unwrap()
                        .into_iter()
                        .collect::<Result<Vec<_>, _>>()
                        .unwrap();
                    m.bodies.push(ops);
                }
                _ => {}
            }
        }
        m
    }

    pub fn num_imported(&self) -> u32 {
        self.imports.len() as u32
    }

    pub fn ty(&self, func: u32) -> &FuncType {
        &self.types[self.func_types[func as usize] as usize]
    }

    pub fn body(&self, func: u32) -> &[Operator<'a>] {
        &self.bodies[(func - self.num_imported()) as usize]
    }

    pub fn defined(&self) -> impl Iterator<Item = u32> + '_ {
        self.num_imported()..self.func_types.len() as u32
    }

    fn block_arity(&self, bt: BlockType) -> (usize, usize) {
        match bt {
            BlockType::Empty => (0, 0),
            BlockType::Type(_) => (0, 1),
            BlockType::FuncType(i) => {
                let t = &self.types[i as usize];
                (t.params().len(), t.results().len())
            }
        }
    }
}

struct Label {
    is_loop: bool,
    start: usize,
    end: usize,
    height: usize,
    params: usize,
    results: usize,
}

/// Producer → consumer pairs observed per function.
pub type PopSites = BTreeMap<u32, BTreeMap<usize, BTreeSet<usize>>>;

pub struct Interp<'m, 'a> {
    pub module: &'m Module<'a>,
    globals: Vec<V>,
    pub pops: PopSites,
    /// Instruction indices executed per function.
    pub executed: BTreeMap<u32, BTreeSet<usize>>,
    fuel: u64,
}

type Slot = (V, Option<usize>);

impl<'m, 'a> Interp<'m, 'a> {
    pub fn new(module: &'m Module<'a>) -> Self {
        Interp {
            module,
            globals: module.globals_init.clone(),
            pops: PopSites::new(),
            executed: BTreeMap::new(),
            fuel: 100_000,
        }
    }

    /// Fresh globals, keeps recorded sites.
    pub fn reset(&mut self) {
        self.globals = self.module.globals_init.clone();
        self.fuel = 1_000_000;
    }

    pub fn call(&mut self, func: u32, args: &[V]) -> Result<Vec<V>, Trap> {
        if func < self.module.num_imported() {
            let (m, n) = &self.module.imports[func as usize];
            if m == "mull" && n == "exit" {
                return Err(Trap::Exit);
            }
            return Ok(self
                .module
                .ty(func)
                .results()
                .iter()
                .map(|t| V::zero(*t))
                .collect());
        }
        let ty = self.module.ty(func).clone();
        let body = self.module.body(func);
        let mut locals: Vec<V> = args.to_vec();
        let declared = &self.module.locals[(func - self.module.num_imported()) as usize];
        locals.extend(declared.iter().map(|t| V::zero(*t)));

        let ends = match_blocks(body);
        let mut stack: Vec<Slot> = Vec::new();
        let mut labels = vec![Label {
            is_loop: false,
            start: 0,
            end: body.len() - 1,
            height: 0,
            params: 0,
            results: ty.results().len(),
        }];
        let mut pc = 0usize;

        macro_rules! pop {
            () => {{
                let (v, producer) = stack.pop().expect("stack underflow");
                if let Some(p) = producer {
                    self.pops
                        .entry(func)
                        .or_default()
                        .entry(p)
                        .or_default()
                        .insert(pc);
                }
                v
            }};
        }
        macro_rules! push {
            ($v:expr) => {
                stack.push(($v, Some(pc)))
            };
        }

        loop {
            if self.fuel == 0 {
                return Err(Trap::Fuel);
            }
            self.fuel -= 1;
            self.executed.entry(func).or_default().insert(pc);
            let op = &body[pc];
            use Operator as O;
            match op {
                O::Nop => {}
                O::Unreachable => return Err(Trap::Unreachable),
                O::Block { blockty } | O::Loop { blockty } => {
                    let (params, results) = self.module.block_arity(*blockty);
                    let vals: Vec<V> = (0..params).map(|_| pop!()).collect();
                    labels.push(Label {
                        is_loop: matches!(op, O::Loop { .. }),
                        start: pc,
                        end: ends[&pc].1,
                        height: stack.len(),
                        params,
                        results,
                    });
                    for v in vals.into_iter().rev() {
                        push!(v);
                    }
                }
                O::If { blockty } => {
                    let cond = pop!().i32();
                    let (params, results) = self.module.block_arity(*blockty);
                    let vals: Vec<V> = (0..params).map(|_| pop!()).collect();
                    let (els, end) = ends[&pc];
                    labels.push(Label {
                        is_loop: false,
                        start: pc,
                        end,
                        height: stack.len(),
                        params,
                        results,
                    });
                    for v in vals.into_iter().rev() {
                        push!(v);
                    }
                    if cond == 0 {
                        match els {
                            Some(e) => pc = e,
                            None => {
                                // no else arm: behave as reaching `end`
                                pc = end;
                                continue;
                            }
                        }
                    }
                }
                O::Else => {
                    // end of the then-arm
                    let label = labels.last().unwrap();
                    let n = label.results;
                    let vals: Vec<V> = (0..n).map(|_| pop!()).collect();
                    let end = label.end;
                    pc = end;
                    for v in vals.into_iter().rev() {
                        push!(v);
                    }
                    labels.pop();
                    if labels.is_empty() {
                        unreachable!("else at function level");
                    }
                }
                O::End => {
                    let label = labels.pop().unwrap();
                    let vals: Vec<V> = (0..label.results).map(|_| pop!()).collect();
                    if labels.is_empty() {
                        return Ok(vals.into_iter().rev().collect());
                    }
                    for v in vals.into_iter().rev() {
                        push!(v);
                    }
                }
                O::Br { relative_depth } => {
                    if let Some(ret) = self.branch(
                        &mut labels,
                        &mut stack,
                        *relative_depth as usize,
                        &mut pc,
                        func,
                    )? {
                        return Ok(ret);
                    }
                    continue;
                }
                O::BrIf { relative_depth } => {
                    let cond = pop!().i32();
                    if cond != 0 {
                        if let Some(ret) = self.branch(
                            &mut labels,
                            &mut stack,
                            *relative_depth as usize,
                            &mut pc,
                            func,
                        )? {
                            return Ok(ret);
                        }
                        continue;
                    }
                    let label = &labels[labels.len() - 1 - *relative_depth as usize];
                    let n = if label.is_loop {
                        label.params
                    } else {
                        label.results
                    };
                    let vals: Vec<V> = (0..n).map(|_| pop!()).collect();
                    for v in vals.into_iter().rev() {
                        push!(v);
                    }
                }
                O::Return => {
                    let n = ty.results().len();
                    let vals: Vec<V> = (0..n).map(|_| pop!()).collect();
                    return Ok(vals.into_iter().rev().collect());
                }
                O::Call { function_index } => {
                    let callee = self.module.ty(*function_index).clone();
                    let mut args: Vec<V> = (0..callee.params().len()).map(|_| pop!()).collect();
                    args.reverse();
                    let results = self.call(*function_index, &args)?;
                    for v in results {
                        push!(v);
                    }
                }
                O::Drop => {
                    pop!();
                }
                O::Select => {
                    let c = pop!().i32();
                    let b = pop!();
                    let a = pop!();
                    push!(if c != 0 { a } else { b });
                }
                O::LocalGet { local_index } => {
                    push!(locals[*local_index as usize]);
                }
                O::LocalSet { local_index } => {
                    let v = pop!();
                    locals[*local_index as usize] = v;
                }
                O::LocalTee { local_index } => {
                    let v = pop!();
                    locals[*local_index as usize] = v;
                    push!(v);
                }
                O::GlobalGet { global_index } => push!(self.globals[*global_index as usize]),
                O::GlobalSet { global_index } => {
                    let v = pop!();
                    self.globals[*global_index as usize] = v;
                }
                O::I32Const { value } => push!(V::I32(*value)),
                O::I64Const { value } => push!(V::I64(*value)),
                O::F32Const { value } => push!(V::F32(f32::from_bits(value.bits()))),
                O::F64Const { value } => push!(V::F64(f64::from_bits(value.bits()))),
                O::I32Eqz => {
                    let a = pop!().i32();
                    push!(V::I32((a == 0) as i32));
                }
                O::I64Eqz => {
                    let a = pop!().i64();
                    push!(V::I32((a == 0) as i32));
                }
                _ => {
                    let name = format!("{op:?}");
                    let b = pop!();
                    let a = pop!();
                    push!(binary(&name, a, b)?);
                }
            }
            pc += 1;
        }
    }

    /// Takes branch `depth`. Returns the function results when the branch
    /// leaves the function.
    fn branch(
        &mut self,
        labels: &mut Vec<Label>,
        stack: &mut Vec<Slot>,
        depth: usize,
        pc: &mut usize,
        func: u32,
    ) -> Result<Option<Vec<V>>, Trap> {
        let target = labels.len() - 1 - depth;
        let label = &labels[target];
        let n = if label.is_loop {
            label.params
        } else {
            label.results
        };
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            let (v, producer) = stack.pop().unwrap();
            if let Some(p) = producer {
                self.pops
                    .entry(func)
                    .or_default()
                    .entry(p)
                    .or_default()
                    .insert(*pc);
            }
            vals.push(v);
        }
        vals.reverse();
        if target == 0 {
            return Ok(Some(vals));
        }
        let label = &labels[target];
        stack.truncate(label.height);
        if label.is_loop {
            *pc = label.start + 1;
            let start = label.start;
            labels.truncate(target + 1);
            for v in vals {
                stack.push((v, Some(start)));
            }
        } else {
            let end = label.end;
            labels.truncate(target);
            for v in vals {
                stack.push((v, Some(end)));
            }
            *pc = end + 1;
        }
        Ok(None)
    }
}

/// For each block/loop/if start: (else index, end index).
fn match_blocks(body: &[Operator]) -> BTreeMap<usize, (Option<usize>, usize)> {
    let mut out = BTreeMap::new();
    let mut open: Vec<(usize, Option<usize>)> = Vec::new();
    for (i, op) in body.iter().enumerate() {
        match op {
            Operator::Block { .. } | Operator::Loop { .. } | Operator::If { .. } => {
                open.push((i, None))
            }
            Operator::Else => open.last_mut().unwrap().1 = Some(i),
            Operator::End => {
                if let Some((start, els)) = open.pop() {
                    out.insert(start, (els, i));
                }
            }
            _ => {}
        }
    }
    out
}

fn binary(name: &str, a: V, b: V) -> Result<V, Trap> {
    let b32 = |x: bool| V::I32(x as i32);
    Ok(match (name, a, b) {
        ("I32Add", V::I32(a), V::I32(b)) => V::I32(a.wrapping_add(b)),
        ("I32Sub", V::I32(a), V::I32(b)) => V::I32(a.wrapping_sub(b)),
        ("I32Mul", V::I32(a), V::I32(b)) => V::I32(a.wrapping_mul(b)),
        ("I32DivS", V::I32(a), V::I32(b)) => {
            if b == 0 {
                return Err(Trap::DivByZero);
            }
            V::I32(a.wrapping_div(b))
        }
        ("I32And", V::I32(a), V::I32(b)) => V::I32(a & b),
        ("I32Or", V::I32(a), V::I32(b)) => V::I32(a | b),
        ("I64Add", V::I64(a), V::I64(b)) => V::I64(a.wrapping_add(b)),
        ("I64Sub", V::I64(a), V::I64(b)) => V::I64(a.wrapping_sub(b)),
        ("I64Mul", V::I64(a), V::I64(b)) => V::I64(a.wrapping_mul(b)),
        ("I32Eq", V::I32(a), V::I32(b)) => b32(a == b),
        ("I32Ne", V::I32(a), V::I32(b)) => b32(a != b),
        ("I32LtS", V::I32(a), V::I32(b)) => b32(a < b),
        ("I32GtS", V::I32(a), V::I32(b)) => b32(a > b),
        ("I32LeS", V::I32(a), V::I32(b)) => b32(a <= b),
        ("I32GeS", V::I32(a), V::I32(b)) => b32(a >= b),
        ("I32LtU", V::I32(a), V::I32(b)) => b32((a as u32) < (b as u32)),
        ("I32GtU", V::I32(a), V::I32(b)) => b32((a as u32) > (b as u32)),
        ("I32LeU", V::I32(a), V::I32(b)) => b32((a as u32) <= (b as u32)),
        ("I32GeU", V::I32(a), V::I32(b)) => b32((a as u32) >= (b as u32)),
        ("I64Eq", V::I64(a), V::I64(b)) => b32(a == b),
        ("I64Ne", V::I64(a), V::I64(b)) => b32(a != b),
        ("F32Add", V::F32(a), V::F32(b)) => V::F32(a + b),
        ("F64Add", V::F64(a), V::F64(b)) => V::F64(a + b),
        ("F64Sub", V::F64(a), V::F64(b)) => V::F64(a - b),
        ("F32Eq", V::F32(a), V::F32(b)) => b32(a == b),
        ("F32Ne", V::F32(a), V::F32(b)) => b32(a != b),
        ("F32Lt", V::F32(a), V::F32(b)) => b32(a < b),
        ("F32Gt", V::F32(a), V::F32(b)) => b32(a > b),
        ("F32Le", V::F32(a), V::F32(b)) => b32(a <= b),
        ("F32Ge", V::F32(a), V::F32(b)) => b32(a >= b),
        ("F64Eq", V::F64(a), V::F64(b)) => b32(a == b),
        ("F64Ne", V::F64(a), V::F64(b)) => b32(a != b),
        ("F64Lt", V::F64(a), V::F64(b)) => b32(a < b),
        ("F64Gt", V::F64(a), V::F64(b)) => b32(a > b),
        ("F64Le", V::F64(a), V::F64(b)) => b32(a <= b),
        ("F64Ge", V::F64(a), V::F64(b)) => b32(a >= b),
        (name, a, b) => panic!("oracle does not model {name}({a:?}, {b:?})"),
    })
}

/// Operator family of a decoded operator's `Debug` name.
fn op_name(op: &Operator) -> String {
    let s = format!("{op:?}");
    s.split([' ', '{']).next().unwrap().to_string()
}

const TYPES: [&str; 4] = ["I32", "I64", "F32", "F64"];

fn typed(name: &str, suffixes: &[&str]) -> bool {
    TYPES.iter().any(|t| {
        name.strip_prefix(t)
            .is_some_and(|rest| suffixes.contains(&rest))
    })
}

fn is_arith(name: &str) -> bool {
    typed(
        name,
        &[
            "Add", "Sub", "Mul", "DivS", "DivU", "Div", "RemS", "RemU", "And", "Or", "Xor", "Shl",
            "ShrS", "ShrU", "Rotl", "Rotr", "Min", "Max", "Copysign",
        ],
    )
}

fn is_cmp(name: &str) -> bool {
    typed(
        name,
        &[
            "Eq", "Ne", "LtS", "LtU", "GtS", "GtU", "LeS", "LeU", "GeS", "GeU", "Lt", "Gt", "Le",
            "Ge",
        ],
    )
}

/// Per-operator match counts for the given functions. `consumers` gives
/// the observed consumer of each constant (function, index).
pub fn scan(
    module: &Module,
    funcs: &BTreeSet<u32>,
    consumers: &PopSites,
) -> BTreeMap<&'static str, usize> {
    let mut counts: BTreeMap<&'static str, usize> = [
        "MathAdd",
        "MathSub",
        "MathMul",
        "MathDiv",
        "NegateCondition",
        "RemoveVoidFunction",
        "ReplaceCall",
        "ScalarValueReplacement",
    ]
    .into_iter()
    .map(|k| (k, 0))
    .collect();
    for &f in funcs {
        let body = module.body(f);
        for (i, op) in body.iter().enumerate() {
            let name = op_name(op);
            let mut hit = |k: &'static str| *counts.get_mut(k).unwrap() += 1;
            if typed(&name, &["Add"]) {
                hit("MathAdd");
            }
            if typed(&name, &["Sub"]) {
                hit("MathSub");
            }
            if typed(&name, &["Mul"]) {
                hit("MathMul");
            }
            if typed(&name, &["DivS", "DivU", "Div"]) {
                hit("MathDiv");
            }
            if is_cmp(&name) {
                hit("NegateCondition");
            }
            if let Operator::Call { function_index } = op {
                let callee = module.ty(*function_index);
                let probe = (*function_index as usize) < module.imports.len()
                    && module.imports[*function_index as usize].0 == "mull_probe";
                if callee.results().is_empty() && !probe {
                    hit("RemoveVoidFunction");
                }
                if callee.results().len() == 1
                    && matches!(
                        callee.results()[0],
                        ValType::I32 | ValType::I64 | ValType::F32 | ValType::F64
                    )
                {
                    hit("ReplaceCall");
                }
            }
            if name.ends_with("Const") {
                let observed = consumers.get(&f).and_then(|m| m.get(&i));
                let observed = observed.unwrap_or_else(|| {
                    panic!("constant {f}:{i} never executed; widen the oracle inputs")
                });
                assert_eq!(observed.len(), 1, "constant {f}:{i} has several consumers");
                let c = *observed.iter().next().unwrap();
                let cname = op_name(&body[c]);
                let allowed = is_arith(&cname)
                    || is_cmp(&cname)
                    || cname == "Return"
                    || cname == "Call"
                    || (cname == "End" && c == body.len() - 1);
                if allowed {
                    hit("ScalarValueReplacement");
                }
            }
        }
    }
    counts
}
