//! Simply-typed checker for TCML.
//!
//! Functions carry no annotations, so parameter types are found by
//! first-order unification. `let` is monomorphic and types left unconstrained
//! after checking are reported as `unit`.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ast::{ChannelId, Expr, ExprKind, Name, PrimOp, Process, TxnRef, Type, Value};
use crate::parser::{SourcePos, SpanMap};
use crate::pretty::print_type;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("{}type mismatch: expected {expected}, found {found}", loc(.pos))]
    TypeMismatch {
        pos: Option<SourcePos>,
        expected: String,
        found: String,
    },
    #[error("{}unbound variable `{name}`", loc(.pos))]
    UnboundVariable { pos: Option<SourcePos>, name: String },
    #[error("{}unbound transaction `{name}`", loc(.pos))]
    UnboundTransaction { pos: Option<SourcePos>, name: String },
    #[error("{}unbound channel {name}", loc(.pos))]
    UnboundChannel { pos: Option<SourcePos>, name: String },
}

fn loc(pos: &Option<SourcePos>) -> String {
    pos.map(|p| format!("{p}: ")).unwrap_or_default()
}

/// Typing context: variables, channel payload types and transactions in scope.
#[derive(Debug, Clone, Default)]
pub struct TypeEnv {
    pub vars: BTreeMap<Name, Type>,
    pub channels: BTreeMap<ChannelId, Type>,
    pub txns: BTreeSet<TxnRef>,
}

impl TypeEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_var(mut self, x: &str, t: Type) -> Self {
        self.vars.insert(Name::new(x), t);
        self
    }

    pub fn with_channel(mut self, c: ChannelId, payload: Type) -> Self {
        self.channels.insert(c, payload);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Ty {
    Var(usize),
    Unit,
    Bool,
    Int,
    Prod(Box<Ty>, Box<Ty>),
    Arrow(Box<Ty>, Box<Ty>),
    Chan(Box<Ty>),
}

impl Ty {
    fn from_type(t: &Type) -> Ty {
        match t {
            Type::Unit => Ty::Unit,
            Type::Bool => Ty::Bool,
            Type::Int => Ty::Int,
            Type::Prod(a, b) => Ty::Prod(Box::new(Ty::from_type(a)), Box::new(Ty::from_type(b))),
            Type::Arrow(a, b) => Ty::Arrow(Box::new(Ty::from_type(a)), Box::new(Ty::from_type(b))),
            Type::Chan(a) => Ty::Chan(Box::new(Ty::from_type(a))),
        }
    }
}

struct Checker<'a> {
    subst: Vec<Option<Ty>>,
    spans: Option<&'a SpanMap>,
    pos: Option<SourcePos>,
    vars: Vec<(Name, Ty)>,
    channels: BTreeMap<ChannelId, Ty>,
    txns: Vec<TxnRef>,
}

impl<'a> Checker<'a> {
    fn new(env: &TypeEnv, spans: Option<&'a SpanMap>) -> Self {
        Checker {
            subst: Vec::new(),
            spans,
            pos: None,
            vars: env.vars.iter().map(|(k, v)| (k.clone(), Ty::from_type(v))).collect(),
            channels: env.channels.iter().map(|(k, v)| (*k, Ty::from_type(v))).collect(),
            txns: env.txns.iter().cloned().collect(),
        }
    }

    fn fresh(&mut self) -> Ty {
        self.subst.push(None);
        Ty::Var(self.subst.len() - 1)
    }

    fn resolve(&self, t: &Ty) -> Ty {
        match t {
            Ty::Var(i) => match &self.subst[*i] {
                Some(t) => self.resolve(t),
                None => t.clone(),
            },
            Ty::Prod(a, b) => Ty::Prod(Box::new(self.resolve(a)), Box::new(self.resolve(b))),
            Ty::Arrow(a, b) => Ty::Arrow(Box::new(self.resolve(a)), Box::new(self.resolve(b))),
            Ty::Chan(a) => Ty::Chan(Box::new(self.resolve(a))),
            _ => t.clone(),
        }
    }

    fn finish(&self, t: &Ty) -> Type {
        match self.resolve(t) {
            Ty::Var(_) | Ty::Unit => Type::Unit,
            Ty::Bool => Type::Bool,
            Ty::Int => Type::Int,
            Ty::Prod(a, b) => Type::prod(self.finish(&a), self.finish(&b)),
            Ty::Arrow(a, b) => Type::arrow(self.finish(&a), self.finish(&b)),
            Ty::Chan(a) => Type::chan(self.finish(&a)),
        }
    }

    fn show(&self, t: &Ty) -> String {
        fn go(t: &Ty) -> String {
            match t {
                Ty::Var(i) => format!("'t{i}"),
                Ty::Unit => "unit".into(),
                Ty::Bool => "bool".into(),
                Ty::Int => "int".into(),
                Ty::Prod(a, b) => format!("({} * {})", go(a), go(b)),
                Ty::Arrow(a, b) => format!("({} -> {})", go(a), go(b)),
                Ty::Chan(a) => format!("{} chan", go(a)),
            }
        }
        go(&self.resolve(t))
    }

    fn occurs(&self, v: usize, t: &Ty) -> bool {
        match self.resolve(t) {
            Ty::Var(i) => i == v,
            Ty::Prod(a, b) | Ty::Arrow(a, b) => self.occurs(v, &a) || self.occurs(v, &b),
            Ty::Chan(a) => self.occurs(v, &a),
            _ => false,
        }
    }

    /// Unifies `found` with `expected`, reporting the original pair on failure.
    fn unify(&mut self, expected: &Ty, found: &Ty) -> Result<(), TypeError> {
        if self.unify_inner(expected, found) {
            Ok(())
        } else {
            Err(TypeError::TypeMismatch {
                pos: self.pos,
                expected: self.show(expected),
                found: self.show(found),
            })
        }
    }

    fn unify_inner(&mut self, a: &Ty, b: &Ty) -> bool {
        let (a, b) = (self.resolve(a), self.resolve(b));
        match (&a, &b) {
            (Ty::Var(i), Ty::Var(j)) if i == j => true,
            (Ty::Var(i), t) | (t, Ty::Var(i)) => {
                if self.occurs(*i, t) {
                    return false;
                }
                self.subst[*i] = Some(t.clone());
                true
            }
            (Ty::Unit, Ty::Unit) | (Ty::Bool, Ty::Bool) | (Ty::Int, Ty::Int) => true,
            (Ty::Prod(a1, a2), Ty::Prod(b1, b2)) | (Ty::Arrow(a1, a2), Ty::Arrow(b1, b2)) => {
                self.unify_inner(a1, b1) && self.unify_inner(a2, b2)
            }
            (Ty::Chan(x), Ty::Chan(y)) => self.unify_inner(x, y),
            _ => false,
        }
    }

    fn lookup(&self, x: &Name) -> Result<Ty, TypeError> {
        self.vars
            .iter()
            .rev()
            .find(|(n, _)| n == x)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| TypeError::UnboundVariable { pos: self.pos, name: x.to_string() })
    }

    fn value(&mut self, v: &Value) -> Result<Ty, TypeError> {
        Ok(match v {
            Value::Var(x) => self.lookup(x)?,
            Value::Unit => Ty::Unit,
            Value::Bool(_) => Ty::Bool,
            Value::Int(_) => Ty::Int,
            Value::Pair(a, b) => {
                let ta = self.value(a)?;
                Ty::Prod(Box::new(ta), Box::new(self.value(b)?))
            }
            Value::Fun(f) => {
                let arg = match &f.param {
                    Some(_) => self.fresh(),
                    None => Ty::Unit,
                };
                let res = self.fresh();
                let fty = Ty::Arrow(Box::new(arg.clone()), Box::new(res.clone()));
                let depth = self.vars.len();
                self.vars.push((f.name.clone(), fty.clone()));
                if let Some(p) = &f.param {
                    self.vars.push((p.clone(), arg));
                }
                let body = self.expr(&f.body);
                self.vars.truncate(depth);
                let body = body?;
                self.unify(&res, &body)?;
                fty
            }
            Value::Chan(c) => match self.channels.get(c) {
                Some(t) => Ty::Chan(Box::new(t.clone())),
                None => {
                    return Err(TypeError::UnboundChannel { pos: self.pos, name: c.to_string() })
                }
            },
        })
    }

    fn expr(&mut self, e: &Expr) -> Result<Ty, TypeError> {
        let saved = self.pos;
        if let Some(p) = self.spans.and_then(|s| s.get(e)) {
            self.pos = Some(p);
        }
        let out = self.expr_inner(e);
        self.pos = saved;
        out
    }

    fn expr_inner(&mut self, e: &Expr) -> Result<Ty, TypeError> {
        Ok(match e.kind() {
            ExprKind::Val(v) => self.value(v)?,
            ExprKind::Pair(a, b) => {
                let ta = self.expr(a)?;
                Ty::Prod(Box::new(ta), Box::new(self.expr(b)?))
            }
            ExprKind::App(f, a) => {
                let tf = self.expr(f)?;
                let ta = self.expr(a)?;
                let res = self.fresh();
                let want = Ty::Arrow(Box::new(ta), Box::new(res.clone()));
                self.unify(&want, &tf)?;
                res
            }
            ExprKind::Op(op, a) => {
                let ta = self.expr(a)?;
                match op {
                    PrimOp::Fst | PrimOp::Snd => {
                        let (l, r) = (self.fresh(), self.fresh());
                        self.unify(&Ty::Prod(Box::new(l.clone()), Box::new(r.clone())), &ta)?;
                        if *op == PrimOp::Fst {
                            l
                        } else {
                            r
                        }
                    }
                    _ => {
                        let ints = Ty::Prod(Box::new(Ty::Int), Box::new(Ty::Int));
                        self.unify(&ints, &ta)?;
                        if *op == PrimOp::Leq {
                            Ty::Bool
                        } else {
                            Ty::Int
                        }
                    }
                }
            }
            ExprKind::Let(x, a, b) => {
                let ta = self.expr(a)?;
                self.vars.push((x.clone(), ta));
                let tb = self.expr(b);
                self.vars.pop();
                tb?
            }
            ExprKind::If(c, t, f) => {
                let tc = self.expr(c)?;
                self.unify(&Ty::Bool, &tc)?;
                let tt = self.expr(t)?;
                let tf = self.expr(f)?;
                self.unify(&tt, &tf)?;
                tt
            }
            ExprKind::Send(c, v) => {
                let tc = self.expr(c)?;
                let tv = self.expr(v)?;
                self.unify(&Ty::Chan(Box::new(tv)), &tc)?;
                Ty::Unit
            }
            ExprKind::Recv(c) => {
                let tc = self.expr(c)?;
                let payload = self.fresh();
                self.unify(&Ty::Chan(Box::new(payload.clone())), &tc)?;
                payload
            }
            ExprKind::NewChan(t) => Ty::Chan(Box::new(Ty::from_type(t))),
            ExprKind::Spawn(a) => {
                let ta = self.expr(a)?;
                let res = self.fresh();
                self.unify(&Ty::Arrow(Box::new(Ty::Unit), Box::new(res)), &ta)?;
                Ty::Unit
            }
            ExprKind::Atomic(k, d, a) => {
                self.txns.push(TxnRef::Name(k.clone()));
                let td = self.expr(d);
                self.txns.pop();
                let td = td?;
                let ta = self.expr(a)?;
                self.unify(&td, &ta)?;
                td
            }
            ExprKind::Commit(r) => {
                if !self.txns.contains(r) {
                    let name = match r {
                        TxnRef::Name(n) => n.to_string(),
                        TxnRef::Id(k) => k.to_string(),
                    };
                    return Err(TypeError::UnboundTransaction { pos: self.pos, name });
                }
                Ty::Unit
            }
            ExprKind::Flip(a) => {
                let ta = self.expr(a)?;
                self.unify(&Ty::Unit, &ta)?;
                Ty::Bool
            }
        })
    }

    fn process(&mut self, p: &Process) -> Result<(), TypeError> {
        match p {
            Process::Expr(e) => self.expr(e).map(|_| ()),
            Process::Par(a, b) => {
                self.process(a)?;
                self.process(b)
            }
            Process::Nu(c, q) => {
                let had = self.channels.contains_key(c);
                if !had {
                    let t = self.fresh();
                    self.channels.insert(*c, t);
                }
                let out = self.process(q);
                if !had {
                    self.channels.remove(c);
                }
                out
            }
            Process::Trans(k, d, a) => {
                self.txns.push(TxnRef::Id(*k));
                let out = self.process(d);
                self.txns.pop();
                out?;
                self.process(a)
            }
            Process::Co(k) => {
                if self.txns.contains(&TxnRef::Id(*k)) {
                    Ok(())
                } else {
                    Err(TypeError::UnboundTransaction { pos: None, name: k.to_string() })
                }
            }
        }
    }
}

pub fn typecheck_expr(env: &TypeEnv, e: &Expr) -> Result<Type, TypeError> {
    let mut c = Checker::new(env, None);
    let t = c.expr(e)?;
    Ok(c.finish(&t))
}

/// Like [`typecheck_expr`], reporting errors at parsed source positions.
pub fn typecheck_with_spans(env: &TypeEnv, e: &Expr, spans: &SpanMap) -> Result<Type, TypeError> {
    let mut c = Checker::new(env, Some(spans));
    let t = c.expr(e)?;
    Ok(c.finish(&t))
}

pub fn typecheck_process(env: &TypeEnv, p: &Process) -> Result<(), TypeError> {
    Checker::new(env, None).process(p)
}

/// Checks a closed source program.
pub fn check_program(e: &Expr) -> Result<Type, TypeError> {
    typecheck_expr(&TypeEnv::new(), e)
}

pub fn describe(t: &Type) -> String {
    print_type(t)
}
