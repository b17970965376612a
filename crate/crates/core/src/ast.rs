//! Abstract syntax of TCML: types, values, expressions and running processes,
//! together with evaluation contexts, substitution and the primitive operators.
//!
//! Expressions are immutable trees of reference-counted nodes. Pairs of values
//! are always folded into `Value::Pair`, so an `ExprKind::Pair` node has at
//! least one non-value component.

use std::collections::BTreeSet;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A variable or transaction-binder name.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Name(Arc<str>);

impl Name {
    pub fn new(s: &str) -> Self {
        Name(Arc::from(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The binder used by `e1; e2`.
    pub fn wildcard() -> Self {
        Name::new("_")
    }

    pub fn is_wildcard(&self) -> bool {
        &*self.0 == "_"
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Name {
    fn from(s: &str) -> Self {
        Name::new(s)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct ChannelId(pub u64);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct TxnId(pub u64);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.0)
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Type {
    Unit,
    Bool,
    Int,
    Prod(Box<Type>, Box<Type>),
    Arrow(Box<Type>, Box<Type>),
    Chan(Box<Type>),
}

impl Type {
    pub fn prod(a: Type, b: Type) -> Type {
        Type::Prod(Box::new(a), Box::new(b))
    }

    pub fn arrow(a: Type, b: Type) -> Type {
        Type::Arrow(Box::new(a), Box::new(b))
    }

    pub fn chan(a: Type) -> Type {
        Type::Chan(Box::new(a))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum PrimOp {
    Fst,
    Snd,
    Add,
    Sub,
    Mul,
    Leq,
}

impl PrimOp {
    pub const ALL: [PrimOp; 6] = [
        PrimOp::Fst,
        PrimOp::Snd,
        PrimOp::Add,
        PrimOp::Sub,
        PrimOp::Mul,
        PrimOp::Leq,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            PrimOp::Fst => "fst",
            PrimOp::Snd => "snd",
            PrimOp::Add => "add",
            PrimOp::Sub => "sub",
            PrimOp::Mul => "mul",
            PrimOp::Leq => "leq",
        }
    }
}

/// A recursive function `fun name(param) -> body`. A missing parameter means
/// a thunk taking unit.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Fun {
    pub name: Name,
    pub param: Option<Name>,
    pub body: Expr,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Value {
    Var(Name),
    Unit,
    Bool(bool),
    Int(i64),
    Pair(Arc<Value>, Arc<Value>),
    Fun(Arc<Fun>),
    Chan(ChannelId),
}

impl Value {
    pub fn pair(a: Value, b: Value) -> Value {
        Value::Pair(Arc::new(a), Arc::new(b))
    }

    pub fn fun(name: Name, param: Option<Name>, body: Expr) -> Value {
        Value::Fun(Arc::new(Fun { name, param, body }))
    }

    pub fn is_closed(&self) -> bool {
        let mut fv = BTreeSet::new();
        free_vars_value(self, &mut Vec::new(), &mut fv);
        fv.is_empty()
    }
}

/// Reference to a transaction from `commit`: a source binder name before the
/// enclosing `atomic` fires, a runtime identifier afterwards.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum TxnRef {
    Name(Name),
    Id(TxnId),
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum ExprKind {
    Val(Value),
    Pair(Expr, Expr),
    App(Expr, Expr),
    Op(PrimOp, Expr),
    Let(Name, Expr, Expr),
    If(Expr, Expr, Expr),
    Send(Expr, Expr),
    Recv(Expr),
    NewChan(Type),
    Spawn(Expr),
    /// `atomic k { default } else { alternative }`; `k` is bound in the default only.
    Atomic(Name, Expr, Expr),
    Commit(TxnRef),
    /// Uniform internal boolean choice, applied to unit.
    Flip(Expr),
}

#[derive(Clone)]
pub struct Expr(Arc<ExprNode>);

// The structural hash is computed once, from the children's cached hashes.
struct ExprNode {
    kind: ExprKind,
    hash: u64,
    erased: u64,
}

impl Hash for Expr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

// Shared subtrees are common (closure bodies, renamed states), so equal
// pointers short-cut the structural comparison.
impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || (self.0.hash == other.0.hash && self.0.kind == other.0.kind)
    }
}

impl Eq for Expr {}

impl PartialOrd for Expr {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Expr {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        if Arc::ptr_eq(&self.0, &other.0) {
            return std::cmp::Ordering::Equal;
        }
        self.0.kind.cmp(&other.0.kind)
    }
}

impl Deref for Expr {
    type Target = ExprKind;
    fn deref(&self) -> &ExprKind {
        &self.0.kind
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.kind.fmt(f)
    }
}

impl From<Value> for Expr {
    fn from(v: Value) -> Self {
        Expr::val(v)
    }
}

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        match kind {
            ExprKind::Pair(a, b) => Expr::pair(a, b),
            k => Expr::mk(k),
        }
    }

    /// Node identity, used to attach source positions.
    pub fn node_id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn kind(&self) -> &ExprKind {
        &self.0.kind
    }

    fn mk(kind: ExprKind) -> Self {
        let mut h = DefaultHasher::new();
        kind.hash(&mut h);
        let erased = erased_kind(&kind);
        Expr(Arc::new(ExprNode { kind, hash: h.finish(), erased }))
    }

    /// Hash of the structure with every channel and transaction id erased.
    pub fn erased_hash(&self) -> u64 {
        self.0.erased
    }

    pub fn val(v: Value) -> Self {
        Expr::mk(ExprKind::Val(v))
    }

    pub fn unit() -> Self {
        Expr::val(Value::Unit)
    }

    pub fn int(n: i64) -> Self {
        Expr::val(Value::Int(n))
    }

    pub fn bool(b: bool) -> Self {
        Expr::val(Value::Bool(b))
    }

    pub fn var(x: &str) -> Self {
        Expr::val(Value::Var(Name::new(x)))
    }

    /// Builds a pair, folding two values into a pair value.
    pub fn pair(a: Expr, b: Expr) -> Self {
        match (a.as_value(), b.as_value()) {
            (Some(va), Some(vb)) => Expr::val(Value::pair(va.clone(), vb.clone())),
            _ => Expr::mk(ExprKind::Pair(a, b)),
        }
    }

    pub fn app(f: Expr, a: Expr) -> Self {
        Expr::new(ExprKind::App(f, a))
    }

    pub fn op(op: PrimOp, a: Expr) -> Self {
        Expr::new(ExprKind::Op(op, a))
    }

    pub fn binop(op: PrimOp, a: Expr, b: Expr) -> Self {
        Expr::op(op, Expr::pair(a, b))
    }

    pub fn let_(x: &str, e1: Expr, e2: Expr) -> Self {
        Expr::new(ExprKind::Let(Name::new(x), e1, e2))
    }

    /// `e1; e2`
    pub fn seq(e1: Expr, e2: Expr) -> Self {
        Expr::new(ExprKind::Let(Name::wildcard(), e1, e2))
    }

    pub fn if_(c: Expr, t: Expr, e: Expr) -> Self {
        Expr::new(ExprKind::If(c, t, e))
    }

    pub fn send(c: Expr, v: Expr) -> Self {
        Expr::new(ExprKind::Send(c, v))
    }

    pub fn recv(c: Expr) -> Self {
        Expr::new(ExprKind::Recv(c))
    }

    pub fn newchan(t: Type) -> Self {
        Expr::new(ExprKind::NewChan(t))
    }

    pub fn spawn(e: Expr) -> Self {
        Expr::new(ExprKind::Spawn(e))
    }

    pub fn atomic(k: &str, e1: Expr, e2: Expr) -> Self {
        Expr::new(ExprKind::Atomic(Name::new(k), e1, e2))
    }

    pub fn commit(k: &str) -> Self {
        Expr::new(ExprKind::Commit(TxnRef::Name(Name::new(k))))
    }

    pub fn flip() -> Self {
        Expr::new(ExprKind::Flip(Expr::unit()))
    }

    pub fn fun(f: &str, x: Option<&str>, body: Expr) -> Self {
        Expr::val(Value::fun(Name::new(f), x.map(Name::new), body))
    }

    pub fn chan(c: ChannelId) -> Self {
        Expr::val(Value::Chan(c))
    }

    pub fn as_value(&self) -> Option<&Value> {
        match &self.0.kind {
            ExprKind::Val(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_value(&self) -> bool {
        matches!(&self.0.kind, ExprKind::Val(_))
    }

    /// Number of nodes, values included.
    pub fn size(&self) -> usize {
        fn value_size(v: &Value) -> usize {
            match v {
                Value::Pair(a, b) => 1 + value_size(a) + value_size(b),
                Value::Fun(f) => 1 + f.body.size(),
                _ => 1,
            }
        }
        match self.kind() {
            ExprKind::Val(v) => value_size(v),
            ExprKind::NewChan(_) | ExprKind::Commit(_) => 1,
            ExprKind::Recv(a) | ExprKind::Spawn(a) | ExprKind::Flip(a) | ExprKind::Op(_, a) => {
                1 + a.size()
            }
            ExprKind::Pair(a, b)
            | ExprKind::App(a, b)
            | ExprKind::Let(_, a, b)
            | ExprKind::Send(a, b)
            | ExprKind::Atomic(_, a, b) => 1 + a.size() + b.size(),
            ExprKind::If(a, b, c) => 1 + a.size() + b.size() + c.size(),
        }
    }
}

/// A running program.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Process {
    Expr(Expr),
    Par(Box<Process>, Box<Process>),
    Nu(ChannelId, Box<Process>),
    /// `⟦default ▷k alternative⟧`
    Trans(TxnId, Box<Process>, Box<Process>),
    Co(TxnId),
}

impl Process {
    pub fn par(a: Process, b: Process) -> Process {
        Process::Par(Box::new(a), Box::new(b))
    }

    pub fn nu(c: ChannelId, p: Process) -> Process {
        Process::Nu(c, Box::new(p))
    }

    pub fn trans(k: TxnId, default: Process, alternative: Process) -> Process {
        Process::Trans(k, Box::new(default), Box::new(alternative))
    }

    /// Parallel composition of a list; the empty list is the unit expression.
    pub fn par_all(mut ps: Vec<Process>) -> Process {
        match ps.len() {
            0 => Process::Expr(Expr::unit()),
            1 => ps.pop().unwrap(),
            _ => {
                let last = ps.pop().unwrap();
                ps.into_iter()
                    .rev()
                    .fold(last, |acc, p| Process::par(p, acc))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AstError {
    #[error("stuck expression: {0}")]
    StuckExpr(String),
    #[error("primitive {op} undefined on {arg}")]
    DeltaUndefined { op: &'static str, arg: String },
}

/// One layer of an evaluation context. Frames hold the parts of the enclosing
/// expression that are not the hole.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Frame {
    PairL(Expr),
    PairR(Value),
    AppL(Expr),
    AppR(Value),
    Op(PrimOp),
    Let(Name, Expr),
    If(Expr, Expr),
    SendL(Expr),
    SendR(Value),
    Recv,
    Spawn,
    Flip,
}

impl Frame {
    /// Fills the hole of this single frame.
    pub fn plug(&self, e: Expr) -> Expr {
        match self {
            Frame::PairL(b) => Expr::pair(e, b.clone()),
            Frame::PairR(a) => Expr::pair(Expr::val(a.clone()), e),
            Frame::AppL(b) => Expr::app(e, b.clone()),
            Frame::AppR(f) => Expr::app(Expr::val(f.clone()), e),
            Frame::Op(op) => Expr::op(*op, e),
            Frame::Let(x, body) => Expr::new(ExprKind::Let(x.clone(), e, body.clone())),
            Frame::If(t, f) => Expr::if_(e, t.clone(), f.clone()),
            Frame::SendL(v) => Expr::send(e, v.clone()),
            Frame::SendR(c) => Expr::send(Expr::val(c.clone()), e),
            Frame::Recv => Expr::recv(e),
            Frame::Spawn => Expr::spawn(e),
            Frame::Flip => Expr::new(ExprKind::Flip(e)),
        }
    }
}

/// An evaluation context, outermost frame first. The empty context is the hole.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct EvalContext(pub Vec<Frame>);

impl EvalContext {
    pub fn hole() -> Self {
        EvalContext(Vec::new())
    }

    pub fn is_hole(&self) -> bool {
        self.0.is_empty()
    }

    pub fn plug(&self, e: Expr) -> Expr {
        self.0.iter().rev().fold(e, |acc, fr| fr.plug(acc))
    }
}

pub fn plug(ctx: &EvalContext, e: Expr) -> Expr {
    ctx.plug(e)
}

/// Splits off the leftmost non-value operand of `e`, if `e` is not itself a
/// value or a redex.
pub fn split_operand(e: &Expr) -> Option<(Frame, Expr)> {
    match e.kind() {
        ExprKind::Val(_) | ExprKind::NewChan(_) | ExprKind::Atomic(..) | ExprKind::Commit(_) => {
            None
        }
        ExprKind::Pair(a, b) => match a.as_value() {
            None => Some((Frame::PairL(b.clone()), a.clone())),
            Some(va) => (!b.is_value()).then(|| (Frame::PairR(va.clone()), b.clone())),
        },
        ExprKind::App(a, b) => match a.as_value() {
            None => Some((Frame::AppL(b.clone()), a.clone())),
            Some(va) => (!b.is_value()).then(|| (Frame::AppR(va.clone()), b.clone())),
        },
        ExprKind::Op(op, a) => (!a.is_value()).then(|| (Frame::Op(*op), a.clone())),
        ExprKind::Let(x, a, b) => (!a.is_value()).then(|| (Frame::Let(x.clone(), b.clone()), a.clone())),
        ExprKind::If(c, t, f) => (!c.is_value()).then(|| (Frame::If(t.clone(), f.clone()), c.clone())),
        ExprKind::Send(a, b) => match a.as_value() {
            None => Some((Frame::SendL(b.clone()), a.clone())),
            Some(va) => (!b.is_value()).then(|| (Frame::SendR(va.clone()), b.clone())),
        },
        ExprKind::Recv(a) => (!a.is_value()).then(|| (Frame::Recv, a.clone())),
        ExprKind::Spawn(a) => (!a.is_value()).then(|| (Frame::Spawn, a.clone())),
        ExprKind::Flip(a) => (!a.is_value()).then(|| (Frame::Flip, a.clone())),
    }
}

/// A classified redex: an expression whose operands are all values.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Redex {
    IfTrue(Expr),
    IfFalse(Expr),
    Let(Name, Value, Expr),
    Op(PrimOp, Value),
    App(Arc<Fun>, Value),
    Send(ChannelId, Value),
    Recv(ChannelId),
    NewChan(Type),
    Spawn(Value),
    Atomic(Name, Expr, Expr),
    Commit(TxnId),
    Flip,
}

impl Redex {
    /// True for the deterministic functional reductions (`↪`).
    pub fn is_pure(&self) -> bool {
        matches!(
            self,
            Redex::IfTrue(_) | Redex::IfFalse(_) | Redex::Let(..) | Redex::Op(..) | Redex::App(..)
        )
    }
}

fn stuck(e: &Expr) -> AstError {
    AstError::StuckExpr(crate::pretty::print_expr(e))
}

/// Classifies an expression with value operands as a redex.
pub fn classify(e: &Expr) -> Result<Redex, AstError> {
    let val = |x: &Expr| x.as_value().cloned().ok_or_else(|| stuck(e));
    let chan = |x: &Expr| match x.as_value() {
        Some(Value::Chan(c)) => Ok(*c),
        _ => Err(stuck(e)),
    };
    match e.kind() {
        ExprKind::Val(_) | ExprKind::Pair(..) => Err(stuck(e)),
        ExprKind::If(c, t, f) => match c.as_value() {
            Some(Value::Bool(true)) => Ok(Redex::IfTrue(t.clone())),
            Some(Value::Bool(false)) => Ok(Redex::IfFalse(f.clone())),
            _ => Err(stuck(e)),
        },
        ExprKind::Let(x, a, b) => Ok(Redex::Let(x.clone(), val(a)?, b.clone())),
        ExprKind::Op(op, a) => {
            let v = val(a)?;
            delta(*op, &v).map_err(|_| stuck(e))?;
            Ok(Redex::Op(*op, v))
        }
        ExprKind::App(f, a) => match f.as_value() {
            Some(Value::Fun(fun)) => Ok(Redex::App(fun.clone(), val(a)?)),
            _ => Err(stuck(e)),
        },
        ExprKind::Send(c, v) => Ok(Redex::Send(chan(c)?, val(v)?)),
        ExprKind::Recv(c) => Ok(Redex::Recv(chan(c)?)),
        ExprKind::NewChan(t) => Ok(Redex::NewChan(t.clone())),
        ExprKind::Spawn(v) => Ok(Redex::Spawn(val(v)?)),
        ExprKind::Atomic(k, e1, e2) => Ok(Redex::Atomic(k.clone(), e1.clone(), e2.clone())),
        ExprKind::Commit(TxnRef::Id(k)) => Ok(Redex::Commit(*k)),
        ExprKind::Commit(TxnRef::Name(_)) => Err(stuck(e)),
        ExprKind::Flip(a) => match a.as_value() {
            Some(Value::Unit) => Ok(Redex::Flip),
            _ => Err(stuck(e)),
        },
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Decomposed {
    Value(Value),
    Split(EvalContext, Expr),
}

/// Unique decomposition of a closed expression into a context and a redex.
pub fn decompose(e: &Expr) -> Result<Decomposed, AstError> {
    if let Some(v) = e.as_value() {
        return Ok(Decomposed::Value(v.clone()));
    }
    let mut frames = Vec::new();
    let mut cur = e.clone();
    while let Some((fr, child)) = split_operand(&cur) {
        frames.push(fr);
        cur = child;
    }
    classify(&cur)?;
    Ok(Decomposed::Split(EvalContext(frames), cur))
}

/// The primitive-operator meta-function. Integer arithmetic wraps.
pub fn delta(op: PrimOp, v: &Value) -> Result<Value, AstError> {
    let undefined = || AstError::DeltaUndefined {
        op: op.keyword(),
        arg: crate::pretty::print_value(v),
    };
    let Value::Pair(a, b) = v else {
        return Err(undefined());
    };
    match op {
        PrimOp::Fst => Ok((**a).clone()),
        PrimOp::Snd => Ok((**b).clone()),
        _ => match (&**a, &**b) {
            (Value::Int(x), Value::Int(y)) => Ok(match op {
                PrimOp::Add => Value::Int(x.wrapping_add(*y)),
                PrimOp::Sub => Value::Int(x.wrapping_sub(*y)),
                PrimOp::Mul => Value::Int(x.wrapping_mul(*y)),
                PrimOp::Leq => Value::Bool(x <= y),
                PrimOp::Fst | PrimOp::Snd => unreachable!(),
            }),
            _ => Err(undefined()),
        },
    }
}

/// Performs a pure reduction `e ↪ e'`. Returns `None` for effectful redexes.
pub fn reduce_pure(r: &Redex) -> Option<Result<Expr, AstError>> {
    Some(match r {
        Redex::IfTrue(e) | Redex::IfFalse(e) => Ok(e.clone()),
        Redex::Let(x, v, body) => Ok(substitute(body, x, v)),
        Redex::Op(op, v) => delta(*op, v).map(Expr::val),
        Redex::App(fun, arg) => {
            let body = substitute(&fun.body, &fun.name, &Value::Fun(fun.clone()));
            Ok(match &fun.param {
                Some(x) => substitute(&body, x, arg),
                None => body,
            })
        }
        _ => return None,
    })
}

/// Capture-avoiding substitution of a closed value for a variable. Since the
/// value is closed, only shadowing binders need attention.
pub fn substitute(e: &Expr, x: &Name, v: &Value) -> Expr {
    if !mentions_var(e, x) {
        return e.clone();
    }
    let s = |e: &Expr| substitute(e, x, v);
    match e.kind() {
        ExprKind::Val(w) => Expr::val(substitute_value(w, x, v)),
        ExprKind::Pair(a, b) => Expr::pair(s(a), s(b)),
        ExprKind::App(a, b) => Expr::app(s(a), s(b)),
        ExprKind::Op(op, a) => Expr::op(*op, s(a)),
        ExprKind::Let(y, a, b) => {
            let b = if y == x { b.clone() } else { s(b) };
            Expr::new(ExprKind::Let(y.clone(), s(a), b))
        }
        ExprKind::If(a, b, c) => Expr::if_(s(a), s(b), s(c)),
        ExprKind::Send(a, b) => Expr::send(s(a), s(b)),
        ExprKind::Recv(a) => Expr::recv(s(a)),
        ExprKind::Spawn(a) => Expr::spawn(s(a)),
        ExprKind::Flip(a) => Expr::new(ExprKind::Flip(s(a))),
        ExprKind::Atomic(k, a, b) => Expr::new(ExprKind::Atomic(k.clone(), s(a), s(b))),
        ExprKind::NewChan(_) | ExprKind::Commit(_) => e.clone(),
    }
}

pub fn substitute_value(w: &Value, x: &Name, v: &Value) -> Value {
    match w {
        Value::Var(y) if y == x => v.clone(),
        Value::Pair(a, b) => Value::pair(substitute_value(a, x, v), substitute_value(b, x, v)),
        Value::Fun(f) => {
            if &f.name == x || f.param.as_ref() == Some(x) {
                w.clone()
            } else {
                Value::fun(f.name.clone(), f.param.clone(), substitute(&f.body, x, v))
            }
        }
        _ => w.clone(),
    }
}

fn mentions_var(e: &Expr, x: &Name) -> bool {
    fn in_value(w: &Value, x: &Name) -> bool {
        match w {
            Value::Var(y) => y == x,
            Value::Pair(a, b) => in_value(a, x) || in_value(b, x),
            Value::Fun(f) => mentions_var(&f.body, x),
            _ => false,
        }
    }
    match e.kind() {
        ExprKind::Val(w) => in_value(w, x),
        ExprKind::NewChan(_) | ExprKind::Commit(_) => false,
        ExprKind::Recv(a) | ExprKind::Spawn(a) | ExprKind::Flip(a) | ExprKind::Op(_, a) => {
            mentions_var(a, x)
        }
        ExprKind::Pair(a, b)
        | ExprKind::App(a, b)
        | ExprKind::Let(_, a, b)
        | ExprKind::Send(a, b)
        | ExprKind::Atomic(_, a, b) => mentions_var(a, x) || mentions_var(b, x),
        ExprKind::If(a, b, c) => mentions_var(a, x) || mentions_var(b, x) || mentions_var(c, x),
    }
}

/// Replaces `commit k` for the source binder `k` by `commit id`, respecting
/// shadowing by nested `atomic k` blocks.
pub fn substitute_txn(e: &Expr, k: &Name, id: TxnId) -> Expr {
    let s = |e: &Expr| substitute_txn(e, k, id);
    match e.kind() {
        ExprKind::Commit(TxnRef::Name(n)) if n == k => {
            Expr::new(ExprKind::Commit(TxnRef::Id(id)))
        }
        ExprKind::Commit(_) | ExprKind::NewChan(_) => e.clone(),
        ExprKind::Val(w) => Expr::val(substitute_txn_value(w, k, id)),
        ExprKind::Pair(a, b) => Expr::pair(s(a), s(b)),
        ExprKind::App(a, b) => Expr::app(s(a), s(b)),
        ExprKind::Op(op, a) => Expr::op(*op, s(a)),
        ExprKind::Let(y, a, b) => Expr::new(ExprKind::Let(y.clone(), s(a), s(b))),
        ExprKind::If(a, b, c) => Expr::if_(s(a), s(b), s(c)),
        ExprKind::Send(a, b) => Expr::send(s(a), s(b)),
        ExprKind::Recv(a) => Expr::recv(s(a)),
        ExprKind::Spawn(a) => Expr::spawn(s(a)),
        ExprKind::Flip(a) => Expr::new(ExprKind::Flip(s(a))),
        ExprKind::Atomic(k2, a, b) => {
            let a = if k2 == k { a.clone() } else { s(a) };
            Expr::new(ExprKind::Atomic(k2.clone(), a, s(b)))
        }
    }
}

fn substitute_txn_value(w: &Value, k: &Name, id: TxnId) -> Value {
    match w {
        Value::Pair(a, b) => Value::pair(
            substitute_txn_value(a, k, id),
            substitute_txn_value(b, k, id),
        ),
        Value::Fun(f) => Value::fun(f.name.clone(), f.param.clone(), substitute_txn(&f.body, k, id)),
        _ => w.clone(),
    }
}

/// Applies renamings to every channel and transaction identifier.
pub fn map_ids(
    e: &Expr,
    chan: &mut impl FnMut(ChannelId) -> ChannelId,
    txn: &mut impl FnMut(TxnId) -> TxnId,
) -> Expr {
    map_changed(e, chan, txn).unwrap_or_else(|| e.clone())
}

pub fn map_ids_value(
    v: &Value,
    chan: &mut impl FnMut(ChannelId) -> ChannelId,
    txn: &mut impl FnMut(TxnId) -> TxnId,
) -> Value {
    map_value_changed(v, chan, txn).unwrap_or_else(|| v.clone())
}

// Subtrees whose identifiers all map to themselves are shared, not rebuilt.
fn map_changed(
    e: &Expr,
    chan: &mut impl FnMut(ChannelId) -> ChannelId,
    txn: &mut impl FnMut(TxnId) -> TxnId,
) -> Option<Expr> {
    fn keep(new: Option<Expr>, old: &Expr) -> Expr {
        new.unwrap_or_else(|| old.clone())
    }
    match e.kind() {
        ExprKind::Val(v) => map_value_changed(v, chan, txn).map(Expr::val),
        ExprKind::Commit(TxnRef::Id(k)) => {
            let n = txn(*k);
            (n != *k).then(|| Expr::new(ExprKind::Commit(TxnRef::Id(n))))
        }
        ExprKind::Commit(_) | ExprKind::NewChan(_) => None,
        ExprKind::Pair(a, b) | ExprKind::App(a, b) | ExprKind::Send(a, b) => {
            let (na, nb) = (map_changed(a, chan, txn), map_changed(b, chan, txn));
            if na.is_none() && nb.is_none() {
                return None;
            }
            let (a, b) = (keep(na, a), keep(nb, b));
            Some(match e.kind() {
                ExprKind::Pair(..) => Expr::pair(a, b),
                ExprKind::App(..) => Expr::app(a, b),
                _ => Expr::send(a, b),
            })
        }
        ExprKind::Let(y, a, b) => {
            let (na, nb) = (map_changed(a, chan, txn), map_changed(b, chan, txn));
            if na.is_none() && nb.is_none() {
                return None;
            }
            Some(Expr::new(ExprKind::Let(y.clone(), keep(na, a), keep(nb, b))))
        }
        ExprKind::Atomic(k, a, b) => {
            let (na, nb) = (map_changed(a, chan, txn), map_changed(b, chan, txn));
            if na.is_none() && nb.is_none() {
                return None;
            }
            Some(Expr::new(ExprKind::Atomic(k.clone(), keep(na, a), keep(nb, b))))
        }
        ExprKind::If(a, b, c) => {
            let na = map_changed(a, chan, txn);
            let nb = map_changed(b, chan, txn);
            let nc = map_changed(c, chan, txn);
            if na.is_none() && nb.is_none() && nc.is_none() {
                return None;
            }
            Some(Expr::if_(keep(na, a), keep(nb, b), keep(nc, c)))
        }
        ExprKind::Op(op, a) => map_changed(a, chan, txn).map(|a| Expr::op(*op, a)),
        ExprKind::Recv(a) => map_changed(a, chan, txn).map(Expr::recv),
        ExprKind::Spawn(a) => map_changed(a, chan, txn).map(Expr::spawn),
        ExprKind::Flip(a) => map_changed(a, chan, txn).map(|a| Expr::new(ExprKind::Flip(a))),
    }
}

fn map_value_changed(
    v: &Value,
    chan: &mut impl FnMut(ChannelId) -> ChannelId,
    txn: &mut impl FnMut(TxnId) -> TxnId,
) -> Option<Value> {
    match v {
        Value::Chan(c) => {
            let n = chan(*c);
            (n != *c).then_some(Value::Chan(n))
        }
        Value::Pair(a, b) => {
            let (na, nb) = (map_value_changed(a, chan, txn), map_value_changed(b, chan, txn));
            if na.is_none() && nb.is_none() {
                return None;
            }
            Some(Value::pair(na.unwrap_or_else(|| (**a).clone()), nb.unwrap_or_else(|| (**b).clone())))
        }
        Value::Fun(f) => map_changed(&f.body, chan, txn).map(|b| Value::fun(f.name.clone(), f.param.clone(), b)),
        _ => None,
    }
}

fn erased_kind(kind: &ExprKind) -> u64 {
    let mut h = DefaultHasher::new();
    std::mem::discriminant(kind).hash(&mut h);
    match kind {
        ExprKind::Val(v) => erased_value(v, &mut h),
        ExprKind::Commit(TxnRef::Id(_)) => {}
        ExprKind::Commit(TxnRef::Name(n)) => n.hash(&mut h),
        ExprKind::NewChan(t) => t.hash(&mut h),
        ExprKind::Pair(a, b) | ExprKind::App(a, b) | ExprKind::Send(a, b) => {
            h.write_u64(a.0.erased);
            h.write_u64(b.0.erased);
        }
        ExprKind::Let(x, a, b) | ExprKind::Atomic(x, a, b) => {
            x.hash(&mut h);
            h.write_u64(a.0.erased);
            h.write_u64(b.0.erased);
        }
        ExprKind::If(a, b, c) => {
            for e in [a, b, c] {
                h.write_u64(e.0.erased);
            }
        }
        ExprKind::Op(op, a) => {
            op.hash(&mut h);
            h.write_u64(a.0.erased);
        }
        ExprKind::Recv(a) | ExprKind::Spawn(a) | ExprKind::Flip(a) => h.write_u64(a.0.erased),
    }
    h.finish()
}

fn erased_value(v: &Value, h: &mut DefaultHasher) {
    std::mem::discriminant(v).hash(h);
    match v {
        Value::Var(x) => x.hash(h),
        Value::Bool(b) => b.hash(h),
        Value::Int(n) => n.hash(h),
        Value::Pair(a, b) => {
            erased_value(a, h);
            erased_value(b, h);
        }
        Value::Fun(f) => {
            f.name.hash(h);
            f.param.hash(h);
            h.write_u64(f.body.0.erased);
        }
        Value::Unit | Value::Chan(_) => {}
    }
}

/// Visits every channel and transaction identifier in left-to-right order.
pub fn visit_ids(e: &Expr, f: &mut impl FnMut(Id)) {
    match e.kind() {
        ExprKind::Val(v) => visit_ids_value(v, f),
        ExprKind::Commit(TxnRef::Id(k)) => f(Id::Txn(*k)),
        ExprKind::Commit(_) | ExprKind::NewChan(_) => {}
        ExprKind::Recv(a) | ExprKind::Spawn(a) | ExprKind::Flip(a) | ExprKind::Op(_, a) => {
            visit_ids(a, f)
        }
        ExprKind::Pair(a, b)
        | ExprKind::App(a, b)
        | ExprKind::Let(_, a, b)
        | ExprKind::Send(a, b)
        | ExprKind::Atomic(_, a, b) => {
            visit_ids(a, f);
            visit_ids(b, f);
        }
        ExprKind::If(a, b, c) => {
            visit_ids(a, f);
            visit_ids(b, f);
            visit_ids(c, f);
        }
    }
}

pub fn visit_ids_value(v: &Value, f: &mut impl FnMut(Id)) {
    match v {
        Value::Chan(c) => f(Id::Chan(*c)),
        Value::Pair(a, b) => {
            visit_ids_value(a, f);
            visit_ids_value(b, f);
        }
        Value::Fun(fun) => visit_ids(&fun.body, f),
        _ => {}
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Id {
    Chan(ChannelId),
    Txn(TxnId),
}

fn free_vars_value(v: &Value, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>) {
    match v {
        Value::Var(x) => {
            if !bound.contains(x) {
                out.insert(x.clone());
            }
        }
        Value::Pair(a, b) => {
            free_vars_value(a, bound, out);
            free_vars_value(b, bound, out);
        }
        Value::Fun(f) => {
            let n = bound.len();
            bound.push(f.name.clone());
            bound.extend(f.param.clone());
            free_vars_expr(&f.body, bound, out);
            bound.truncate(n);
        }
        _ => {}
    }
}

fn free_vars_expr(e: &Expr, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>) {
    match e.kind() {
        ExprKind::Val(v) => free_vars_value(v, bound, out),
        ExprKind::NewChan(_) | ExprKind::Commit(_) => {}
        ExprKind::Let(x, a, b) => {
            free_vars_expr(a, bound, out);
            bound.push(x.clone());
            free_vars_expr(b, bound, out);
            bound.pop();
        }
        ExprKind::Recv(a) | ExprKind::Spawn(a) | ExprKind::Flip(a) | ExprKind::Op(_, a) => {
            free_vars_expr(a, bound, out)
        }
        ExprKind::Pair(a, b)
        | ExprKind::App(a, b)
        | ExprKind::Send(a, b)
        | ExprKind::Atomic(_, a, b) => {
            free_vars_expr(a, bound, out);
            free_vars_expr(b, bound, out);
        }
        ExprKind::If(a, b, c) => {
            free_vars_expr(a, bound, out);
            free_vars_expr(b, bound, out);
            free_vars_expr(c, bound, out);
        }
    }
}

pub fn free_vars(e: &Expr) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    free_vars_expr(e, &mut Vec::new(), &mut out);
    out
}

pub fn is_closed(e: &Expr) -> bool {
    free_vars(e).is_empty()
}

pub fn expr_channels(e: &Expr) -> BTreeSet<ChannelId> {
    let mut out = BTreeSet::new();
    visit_ids(e, &mut |id| {
        if let Id::Chan(c) = id {
            out.insert(c);
        }
    });
    out
}

/// `fc(P)`: free channels; `ν` binds.
pub fn free_channels(p: &Process) -> BTreeSet<ChannelId> {
    match p {
        Process::Expr(e) => expr_channels(e),
        Process::Par(a, b) | Process::Trans(_, a, b) => {
            let mut s = free_channels(a);
            s.extend(free_channels(b));
            s
        }
        Process::Nu(c, q) => {
            let mut s = free_channels(q);
            s.remove(c);
            s
        }
        Process::Co(_) => BTreeSet::new(),
    }
}

/// Free transaction names of an expression: runtime identifiers under
/// `commit`, and source binders not captured by an enclosing `atomic`.
pub fn expr_txn_refs(e: &Expr) -> BTreeSet<TxnRef> {
    fn go(e: &Expr, bound: &mut Vec<Name>, out: &mut BTreeSet<TxnRef>) {
        match e.kind() {
            ExprKind::Commit(r @ TxnRef::Id(_)) => {
                out.insert(r.clone());
            }
            ExprKind::Commit(TxnRef::Name(n)) => {
                if !bound.contains(n) {
                    out.insert(TxnRef::Name(n.clone()));
                }
            }
            ExprKind::NewChan(_) => {}
            ExprKind::Val(v) => go_value(v, bound, out),
            ExprKind::Atomic(k, a, b) => {
                bound.push(k.clone());
                go(a, bound, out);
                bound.pop();
                go(b, bound, out);
            }
            ExprKind::Recv(a) | ExprKind::Spawn(a) | ExprKind::Flip(a) | ExprKind::Op(_, a) => {
                go(a, bound, out)
            }
            ExprKind::Pair(a, b)
            | ExprKind::App(a, b)
            | ExprKind::Let(_, a, b)
            | ExprKind::Send(a, b) => {
                go(a, bound, out);
                go(b, bound, out);
            }
            ExprKind::If(a, b, c) => {
                go(a, bound, out);
                go(b, bound, out);
                go(c, bound, out);
            }
        }
    }
    fn go_value(v: &Value, bound: &mut Vec<Name>, out: &mut BTreeSet<TxnRef>) {
        match v {
            Value::Pair(a, b) => {
                go_value(a, bound, out);
                go_value(b, bound, out);
            }
            Value::Fun(f) => go(&f.body, bound, out),
            _ => {}
        }
    }
    let mut out = BTreeSet::new();
    go(e, &mut Vec::new(), &mut out);
    out
}

/// `ftn(P)`: `⟦P1 ▷k P2⟧` binds `k` in `P1` only.
pub fn free_txn_names(p: &Process) -> BTreeSet<TxnId> {
    match p {
        Process::Expr(e) => expr_txn_refs(e)
            .into_iter()
            .filter_map(|r| match r {
                TxnRef::Id(k) => Some(k),
                TxnRef::Name(_) => None,
            })
            .collect(),
        Process::Par(a, b) => {
            let mut s = free_txn_names(a);
            s.extend(free_txn_names(b));
            s
        }
        Process::Nu(_, q) => free_txn_names(q),
        Process::Trans(k, d, a) => {
            let mut s = free_txn_names(d);
            s.remove(k);
            s.extend(free_txn_names(a));
            s
        }
        Process::Co(k) => BTreeSet::from([*k]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(n: u64) -> Expr {
        Expr::chan(ChannelId(n))
    }

    #[test]
    fn decompose_if_at_top() {
        let e = Expr::if_(Expr::bool(true), Expr::int(1), Expr::int(2));
        assert_eq!(decompose(&e).unwrap(), Decomposed::Split(EvalContext::hole(), e));
    }

    #[test]
    fn decompose_send_of_add() {
        let redex = Expr::binop(PrimOp::Add, Expr::int(1), Expr::int(2));
        let e = Expr::send(c(0), redex.clone());
        let expected = EvalContext(vec![Frame::SendR(Value::Chan(ChannelId(0)))]);
        assert_eq!(decompose(&e).unwrap(), Decomposed::Split(expected, redex));
    }

    #[test]
    fn decompose_value() {
        assert_eq!(decompose(&Expr::int(5)).unwrap(), Decomposed::Value(Value::Int(5)));
    }

    #[test]
    fn decompose_stuck_on_ill_typed() {
        let e = Expr::binop(PrimOp::Add, Expr::bool(true), Expr::bool(false));
        assert!(matches!(decompose(&e), Err(AstError::StuckExpr(_))));
        let e = Expr::if_(Expr::int(5), Expr::int(1), Expr::int(2));
        assert!(matches!(decompose(&e), Err(AstError::StuckExpr(_))));
    }

    #[test]
    fn plug_examples() {
        assert_eq!(plug(&EvalContext::hole(), Expr::int(1)), Expr::int(1));
        let ctx = EvalContext(vec![Frame::SendR(Value::Chan(ChannelId(3)))]);
        assert_eq!(plug(&ctx, Expr::int(3)), Expr::send(c(3), Expr::int(3)));
    }

    #[test]
    fn plug_folds_value_pairs() {
        let ctx = EvalContext(vec![Frame::PairR(Value::Int(1))]);
        assert_eq!(plug(&ctx, Expr::int(2)), Expr::val(Value::pair(Value::Int(1), Value::Int(2))));
    }

    #[test]
    fn substitution_examples() {
        let x = Name::new("x");
        assert_eq!(substitute(&Expr::var("x"), &x, &Value::Int(5)), Expr::int(5));

        let shadow = Expr::let_("x", Expr::int(1), Expr::var("x"));
        assert_eq!(substitute(&shadow, &x, &Value::Int(5)), shadow);

        let f = Expr::fun(
            "f",
            Some("y"),
            Expr::binop(PrimOp::Add, Expr::var("x"), Expr::var("y")),
        );
        let expected = Expr::fun(
            "f",
            Some("y"),
            Expr::binop(PrimOp::Add, Expr::int(2), Expr::var("y")),
        );
        assert_eq!(substitute(&f, &x, &Value::Int(2)), expected);
    }

    #[test]
    fn substitution_respects_function_binders() {
        let x = Name::new("x");
        let f = Expr::fun("f", Some("x"), Expr::var("x"));
        assert_eq!(substitute(&f, &x, &Value::Int(9)), f);
        let g = Expr::fun("x", None, Expr::var("x"));
        assert_eq!(substitute(&g, &x, &Value::Int(9)), g);
    }

    #[test]
    fn delta_examples() {
        let p = |a, b| Value::pair(a, b);
        assert_eq!(delta(PrimOp::Add, &p(Value::Int(1), Value::Int(2))).unwrap(), Value::Int(3));
        assert_eq!(delta(PrimOp::Leq, &p(Value::Int(5), Value::Int(5))).unwrap(), Value::Bool(true));
        let inner = p(Value::Int(1), Value::Int(2));
        assert_eq!(delta(PrimOp::Fst, &p(inner.clone(), Value::Int(3))).unwrap(), inner);
        assert!(matches!(
            delta(PrimOp::Add, &p(Value::Bool(true), Value::Int(1))),
            Err(AstError::DeltaUndefined { .. })
        ));
        assert_eq!(
            delta(PrimOp::Add, &p(Value::Int(i64::MAX), Value::Int(1))).unwrap(),
            Value::Int(i64::MIN)
        );
    }

    #[test]
    fn free_channel_examples() {
        let send = |n| Process::Expr(Expr::send(c(n), Expr::int(1)));
        assert_eq!(free_channels(&send(0)), BTreeSet::from([ChannelId(0)]));
        assert!(free_channels(&Process::nu(ChannelId(0), send(0))).is_empty());
        let p = Process::par(
            Process::Expr(Expr::recv(c(0))),
            Process::nu(ChannelId(1), send(1)),
        );
        assert_eq!(free_channels(&p), BTreeSet::from([ChannelId(0)]));
    }

    #[test]
    fn free_txn_name_examples() {
        let k = TxnId(1);
        let l = TxnId(2);
        assert_eq!(free_txn_names(&Process::Co(k)), BTreeSet::from([k]));
        let unit = || Box::new(Process::Expr(Expr::unit()));
        assert!(free_txn_names(&Process::Trans(k, Box::new(Process::Co(k)), unit())).is_empty());
        assert_eq!(
            free_txn_names(&Process::Trans(k, Box::new(Process::Co(l)), unit())),
            BTreeSet::from([l])
        );
    }

    #[test]
    fn txn_substitution_respects_shadowing() {
        let k = Name::new("k");
        let inner = Expr::atomic("k", Expr::commit("k"), Expr::unit());
        let e = Expr::seq(Expr::commit("k"), inner.clone());
        let out = substitute_txn(&e, &k, TxnId(7));
        let expected = Expr::seq(Expr::new(ExprKind::Commit(TxnRef::Id(TxnId(7)))), inner);
        assert_eq!(out, expected);
    }
}
