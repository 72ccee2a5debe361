//! In-process execution of generated pointwise kernels.
//!
//! The expanded statements are parsed into expression trees over numbered
//! slots and evaluated point by point in `f64`. In single precision every
//! intermediate result is rounded to `f32`, following C `float`
//! arithmetic. The argument convention matches the emitted C exactly, so
//! the same call site drives either backend.
//!
//! Supported statements: `[type] lhs = expr;` and `lhs op= expr;` where
//! `lhs` is a local, a plain parameter or `param[k]` with a literal `k`.
//! Expressions use `+ - * /`, unary `- + !`, comparisons, `&& ||`, `?:`,
//! casts to the scalar types and the functions `sin cos tan exp log sqrt
//! fabs pow tanh fmin fmax` (and their `f` forms).

use std::collections::HashMap;
use std::sync::Arc;

use super::emit::GeneratedSource;
use super::lex::{self, Kind, Literal, Token};
use super::spec::{BaseType, Intent, Param, Precision};
use super::CodegenError;
use crate::kernel::{IntrinsicFn, KernelArgs};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Round {
    None,
    F32,
    Int,
}

#[derive(Debug, Clone, Copy)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

#[derive(Debug, Clone, Copy)]
enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Fabs,
    Tanh,
    Pow,
    Fmin,
    Fmax,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        let base = name.strip_suffix('f').filter(|b| Func::lookup_exact(b).is_some()).unwrap_or(name);
        Func::lookup_exact(base)
    }

    fn lookup_exact(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tan" => (Func::Tan, 1),
            "exp" => (Func::Exp, 1),
            "log" => (Func::Log, 1),
            "sqrt" => (Func::Sqrt, 1),
            "fabs" => (Func::Fabs, 1),
            "tanh" => (Func::Tanh, 1),
            "pow" => (Func::Pow, 2),
            "fmin" => (Func::Fmin, 2),
            "fmax" => (Func::Fmax, 2),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Slot(usize),
    Neg(Box<Node>),
    Not(Box<Node>),
    Cast(Round, Box<Node>),
    Bin(Bin, Box<Node>, Box<Node>),
    Cond(Box<Node>, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Debug, Clone)]
struct Stmt {
    slot: usize,
    round: Round,
    expr: Node,
}

/// Where each slot's initial value comes from.
#[derive(Debug, Clone)]
struct Binding {
    arg: usize,
    param: Param,
    // First slot; indexed params use `per_point_extent` consecutive slots.
    slot: usize,
}

/// A compiled pointwise kernel.
#[derive(Debug, Clone)]
pub struct PointwiseProgram {
    name: String,
    precision: Precision,
    bindings: Vec<Binding>,
    stmts: Vec<Stmt>,
    nslots: usize,
}

struct Parser<'a, 'b> {
    toks: Vec<Token<'a>>,
    pos: usize,
    names: &'b mut HashMap<String, usize>,
    types: &'b HashMap<usize, Round>,
    precision: Precision,
    stmt: &'a str,
}

fn type_round(name: &str, precision: Precision) -> Option<Round> {
    Some(match name {
        "fpdtype_t" => {
            if precision == Precision::F32 {
                Round::F32
            } else {
                Round::None
            }
        }
        "float" => Round::F32,
        "double" => Round::None,
        "int64_t" | "int" | "long" => Round::Int,
        _ => return None,
    })
}

impl<'a> Parser<'a, '_> {
    fn err(&self, message: impl Into<String>) -> CodegenError {
        CodegenError::Parse { statement: self.stmt.to_string(), message: message.into() }
    }

    fn peek(&self) -> Option<&Token<'a>> {
        self.toks.get(self.pos)
    }

    fn peek_text(&self) -> &str {
        self.peek().map_or("", |t| t.text)
    }

    fn next(&mut self) -> Result<Token<'a>, CodegenError> {
        let t = self.toks.get(self.pos).copied().ok_or_else(|| self.err("unexpected end of statement"))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, s: &str) -> Result<(), CodegenError> {
        let t = self.next()?;
        if t.text != s {
            return Err(self.err(format!("expected {s:?}, found {:?}", t.text)));
        }
        Ok(())
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.peek_text() == s {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn lvalue_name(&mut self) -> Result<String, CodegenError> {
        let t = self.next()?;
        if t.kind != Kind::Ident {
            return Err(self.err(format!("expected a variable, found {:?}", t.text)));
        }
        if self.eat("[") {
            let ix = self.next()?;
            if ix.kind != Kind::Number || Literal::parse(ix.text).is_float() {
                return Err(self.err("array index must be an integer literal"));
            }
            self.expect("]")?;
            return Ok(format!("{}[{}]", t.text, Literal::parse(ix.text).body));
        }
        Ok(t.text.to_string())
    }

    fn statement(&mut self) -> Result<Stmt, CodegenError> {
        let declared = type_round(self.peek_text(), self.precision);
        if declared.is_some() {
            self.pos += 1;
        }
        let name = self.lvalue_name()?;
        let op = self.next()?.text;
        let rhs = self.expr()?;
        if self.pos != self.toks.len() {
            return Err(self.err(format!("unexpected {:?}", self.peek_text())));
        }
        let slot = match declared {
            Some(_) => {
                if self.names.contains_key(&name) {
                    return Err(self.err(format!("{name} declared twice")));
                }
                let s = self.names.len();
                self.names.insert(name.clone(), s);
                s
            }
            None => *self.names.get(&name).ok_or_else(|| self.err(format!("assignment to unknown {name}")))?,
        };
        let round = declared.or_else(|| self.types.get(&slot).copied()).unwrap_or(Round::None);
        let cur = || Box::new(Node::Slot(slot));
        let expr = match op {
            "=" => rhs,
            "+=" => Node::Bin(Bin::Add, cur(), Box::new(rhs)),
            "-=" => Node::Bin(Bin::Sub, cur(), Box::new(rhs)),
            "*=" => Node::Bin(Bin::Mul, cur(), Box::new(rhs)),
            "/=" => Node::Bin(Bin::Div, cur(), Box::new(rhs)),
            _ => return Err(self.err(format!("expected an assignment, found {op:?}"))),
        };
        Ok(Stmt { slot, round, expr })
    }

    fn expr(&mut self) -> Result<Node, CodegenError> {
        let c = self.binary(0)?;
        if self.eat("?") {
            let a = self.expr()?;
            self.expect(":")?;
            let b = self.expr()?;
            return Ok(Node::Cond(Box::new(c), Box::new(a), Box::new(b)));
        }
        Ok(c)
    }

    fn binop(text: &str) -> Option<(Bin, u8)> {
        Some(match text {
            "||" => (Bin::Or, 1),
            "&&" => (Bin::And, 2),
            "==" => (Bin::Eq, 3),
            "!=" => (Bin::Ne, 3),
            "<" => (Bin::Lt, 4),
            ">" => (Bin::Gt, 4),
            "<=" => (Bin::Le, 4),
            ">=" => (Bin::Ge, 4),
            "+" => (Bin::Add, 5),
            "-" => (Bin::Sub, 5),
            "*" => (Bin::Mul, 6),
            "/" => (Bin::Div, 6),
            _ => return None,
        })
    }

    fn binary(&mut self, min: u8) -> Result<Node, CodegenError> {
        let mut lhs = self.unary()?;
        while let Some((op, prec)) = Self::binop(self.peek_text()) {
            if prec <= min {
                break;
            }
            self.pos += 1;
            let rhs = self.binary(prec)?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, CodegenError> {
        if self.eat("-") {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat("+") {
            return self.unary();
        }
        if self.eat("!") {
            return Ok(Node::Not(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Node, CodegenError> {
        let t = self.next()?;
        match t.kind {
            Kind::Number => {
                let lit = Literal::parse(t.text);
                if lit.hex {
                    return Err(self.err("hexadecimal literals are not supported"));
                }
                let v: f64 = lit.body.parse().map_err(|_| self.err(format!("bad number {:?}", t.text)))?;
                let single = lit.suffix.contains(['f', 'F']);
                Ok(Node::Num(if single { v as f32 as f64 } else { v }))
            }
            Kind::Ident => {
                if self.peek_text() == "(" {
                    let (f, arity) = Func::lookup(t.text).ok_or_else(|| self.err(format!("unknown function {}", t.text)))?;
                    self.pos += 1;
                    let mut args = Vec::new();
                    if !self.eat(")") {
                        loop {
                            args.push(self.expr()?);
                            if self.eat(")") {
                                break;
                            }
                            self.expect(",")?;
                        }
                    }
                    if args.len() != arity {
                        return Err(self.err(format!("{} takes {arity} arguments", t.text)));
                    }
                    return Ok(Node::Call(f, args));
                }
                self.pos -= 1;
                let name = self.lvalue_name()?;
                let slot = self.names.get(&name).ok_or_else(|| self.err(format!("unknown identifier {name}")))?;
                Ok(Node::Slot(*slot))
            }
            Kind::Punct if t.text == "(" => {
                if let Some(r) = type_round(self.peek_text(), self.precision) {
                    if self.toks.get(self.pos + 1).is_some_and(|t| t.text == ")") {
                        self.pos += 2;
                        return Ok(Node::Cast(r, Box::new(self.unary()?)));
                    }
                }
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            _ => Err(self.err(format!("unexpected {:?}", t.text))),
        }
    }
}

impl PointwiseProgram {
    pub fn compile(src: &GeneratedSource) -> Result<Self, CodegenError> {
        let precision = src.precision;
        let fp = type_round("fpdtype_t", precision).expect("known type");
        let mut names = HashMap::new();
        let mut types = HashMap::new();
        let mut bindings = Vec::new();
        for (i, p) in src.pruned_params.iter().enumerate() {
            let slot = names.len();
            let round = match p.base_type {
                BaseType::Fp => fp,
                BaseType::I64 => Round::Int,
            };
            if p.indexed {
                for k in 0..p.per_point_extent {
                    names.insert(format!("{}[{k}]", p.name), slot + k);
                    types.insert(slot + k, round);
                }
            } else {
                names.insert(p.name.clone(), slot);
                types.insert(slot, round);
            }
            bindings.push(Binding { arg: i + 1, param: p.clone(), slot });
        }
        let mut stmts = Vec::new();
        for s in &src.statements {
            let clean = lex::strip_comments(s);
            for piece in clean.split(';').map(str::trim).filter(|p| !p.is_empty()) {
                let toks: Vec<_> = lex::tokens(piece).into_iter().filter(|t| t.kind != Kind::Space).collect();
                let mut parser = Parser { toks, pos: 0, names: &mut names, types: &types, precision, stmt: piece };
                let st = parser.statement()?;
                types.entry(st.slot).or_insert(st.round);
                stmts.push(st);
            }
        }
        Ok(PointwiseProgram { name: src.name.clone(), precision, bindings, stmts, nslots: names.len() })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn round(&self, x: f64) -> f64 {
        match self.precision {
            Precision::F32 => x as f32 as f64,
            Precision::F64 => x,
        }
    }

    fn eval(&self, n: &Node, s: &[f64]) -> f64 {
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        match n {
            Node::Num(v) => *v,
            Node::Slot(i) => s[*i],
            Node::Neg(a) => -self.eval(a, s),
            Node::Not(a) => b(self.eval(a, s) == 0.0),
            Node::Cast(r, a) => apply_round(*r, self.eval(a, s)),
            Node::Cond(c, x, y) => {
                if self.eval(c, s) != 0.0 {
                    self.eval(x, s)
                } else {
                    self.eval(y, s)
                }
            }
            Node::Bin(op, l, r) => {
                let x = self.eval(l, s);
                match op {
                    Bin::And => return b(x != 0.0 && self.eval(r, s) != 0.0),
                    Bin::Or => return b(x != 0.0 || self.eval(r, s) != 0.0),
                    _ => {}
                }
                let y = self.eval(r, s);
                match op {
                    Bin::Add => self.round(x + y),
                    Bin::Sub => self.round(x - y),
                    Bin::Mul => self.round(x * y),
                    Bin::Div => self.round(x / y),
                    Bin::Lt => b(x < y),
                    Bin::Gt => b(x > y),
                    Bin::Le => b(x <= y),
                    Bin::Ge => b(x >= y),
                    Bin::Eq => b(x == y),
                    Bin::Ne => b(x != y),
                    Bin::And | Bin::Or => unreachable!(),
                }
            }
            Node::Call(f, args) => {
                let x = self.eval(&args[0], s);
                let v = match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tan => x.tan(),
                    Func::Exp => x.exp(),
                    Func::Log => x.ln(),
                    Func::Sqrt => x.sqrt(),
                    Func::Fabs => x.abs(),
                    Func::Tanh => x.tanh(),
                    Func::Pow => x.powf(self.eval(&args[1], s)),
                    Func::Fmin => x.min(self.eval(&args[1], s)),
                    Func::Fmax => x.max(self.eval(&args[1], s)),
                };
                self.round(v)
            }
        }
    }

    /// Runs the kernel on `args` laid out as for the C entry point:
    /// `npts` first, then one region per surviving parameter.
    pub fn run(&self, args: &mut KernelArgs) -> Result<(), String> {
        let want = self.bindings.len() + 1;
        if args.len() != want {
            return Err(format!("{} expects {want} arguments, got {}", self.name, args.len()));
        }
        let n = args.count(0)?;
        // Gather every input column first, so outputs may alias inputs.
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(self.bindings.len());
        for b in &self.bindings {
            let p = &b.param;
            let col = match p.intent {
                Intent::Scalar => match p.base_type {
                    BaseType::Fp => vec![self.round(args.scalar::<f64>(b.arg)?)],
                    BaseType::I64 => vec![args.scalar::<i64>(b.arg)? as f64],
                },
                Intent::Out if p.indexed => vec![0.0; n * p.per_point_extent],
                _ => self.load(args, b, n)?,
            };
            columns.push(col);
        }
        let mut slots = vec![0.0; self.nslots];
        let mut results: Vec<Vec<f64>> = self
            .bindings
            .iter()
            .map(|b| if b.param.intent.writes() { vec![0.0; n * b.param.per_point_extent] } else { Vec::new() })
            .collect();
        for i in 0..n {
            for (b, col) in self.bindings.iter().zip(&columns) {
                if b.param.intent == Intent::Scalar {
                    slots[b.slot] = col[0];
                } else {
                    for k in 0..b.param.per_point_extent {
                        slots[b.slot + k] = col[k * n + i];
                    }
                }
            }
            for st in &self.stmts {
                slots[st.slot] = apply_round(st.round, self.eval(&st.expr, &slots));
            }
            for (b, out) in self.bindings.iter().zip(results.iter_mut()) {
                if b.param.intent.writes() {
                    for k in 0..b.param.per_point_extent {
                        out[k * n + i] = slots[b.slot + k];
                    }
                }
            }
        }
        for (b, out) in self.bindings.iter().zip(&results) {
            if b.param.intent.writes() {
                self.store(args, b, out)?;
            }
        }
        Ok(())
    }

    fn load(&self, args: &KernelArgs, b: &Binding, n: usize) -> Result<Vec<f64>, String> {
        let need = n * b.param.per_point_extent;
        let short = |have: usize| format!("argument {} ({}) holds {have} values, needs {need}", b.arg, b.param.name);
        let v: Vec<f64> = match (b.param.base_type, self.precision) {
            (BaseType::I64, _) => args.read::<i64>(b.arg)?.into_iter().map(|x| x as f64).collect(),
            (BaseType::Fp, Precision::F64) => args.read::<f64>(b.arg)?,
            (BaseType::Fp, Precision::F32) => args.read::<f32>(b.arg)?.into_iter().map(f64::from).collect(),
        };
        if v.len() < need {
            return Err(short(v.len()));
        }
        Ok(v)
    }

    fn store(&self, args: &mut KernelArgs, b: &Binding, vals: &[f64]) -> Result<(), String> {
        let n = vals.len();
        let short = |have: usize| format!("argument {} ({}) holds {have} values, needs {n}", b.arg, b.param.name);
        match (b.param.base_type, self.precision) {
            (BaseType::I64, _) => {
                let d = args.slice_mut::<i64>(b.arg)?;
                let l = d.len();
                for (d, v) in d.get_mut(..n).ok_or_else(|| short(l))?.iter_mut().zip(vals) {
                    *d = *v as i64;
                }
            }
            (BaseType::Fp, Precision::F64) => {
                let d = args.slice_mut::<f64>(b.arg)?;
                let l = d.len();
                d.get_mut(..n).ok_or_else(|| short(l))?.copy_from_slice(vals);
            }
            (BaseType::Fp, Precision::F32) => {
                let d = args.slice_mut::<f32>(b.arg)?;
                let l = d.len();
                for (d, v) in d.get_mut(..n).ok_or_else(|| short(l))?.iter_mut().zip(vals) {
                    *d = *v as f32;
                }
            }
        }
        Ok(())
    }

    pub fn into_intrinsic(self) -> IntrinsicFn {
        let p = Arc::new(self);
        Arc::new(move |a: &mut KernelArgs| p.run(a))
    }
}

fn apply_round(r: Round, x: f64) -> f64 {
    match r {
        Round::None => x,
        Round::F32 => x as f32 as f64,
        Round::Int => x.trunc(),
    }
}
