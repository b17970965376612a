//! Concrete-syntax rendering. Output parses back to the same tree for every
//! source-level expression; runtime-only names (channels, transaction ids)
//! render as `#c<n>` / `#k<n>`, which the parser rejects.

use std::fmt::Write;

use crate::ast::{Expr, ExprKind, PrimOp, TxnRef, Type, Value};

pub fn print_type(t: &Type) -> String {
    let mut s = String::new();
    type_at(t, 0, &mut s);
    s
}

fn type_level(t: &Type) -> u8 {
    match t {
        Type::Arrow(..) => 0,
        Type::Prod(..) => 1,
        Type::Chan(_) => 2,
        _ => 3,
    }
}

fn type_at(t: &Type, min: u8, out: &mut String) {
    let paren = type_level(t) < min;
    if paren {
        out.push('(');
    }
    match t {
        Type::Unit => out.push_str("unit"),
        Type::Bool => out.push_str("bool"),
        Type::Int => out.push_str("int"),
        Type::Arrow(a, b) => {
            type_at(a, 1, out);
            out.push_str(" -> ");
            type_at(b, 0, out);
        }
        Type::Prod(a, b) => {
            type_at(a, 1, out);
            out.push_str(" * ");
            type_at(b, 2, out);
        }
        Type::Chan(a) => {
            type_at(a, 2, out);
            out.push_str(" chan");
        }
    }
    if paren {
        out.push(')');
    }
}

pub fn print_value(v: &Value) -> String {
    let mut s = String::new();
    value(v, &mut s);
    s
}

pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    expr(e, &mut s);
    s
}

fn value(v: &Value, out: &mut String) {
    match v {
        Value::Var(x) => out.push_str(x.as_str()),
        Value::Unit => out.push_str("()"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Int(n) if *n < 0 => {
            let _ = write!(out, "(-{})", n.unsigned_abs());
        }
        Value::Int(n) => {
            let _ = write!(out, "{n}");
        }
        Value::Pair(a, b) => {
            out.push('(');
            value(a, out);
            out.push_str(", ");
            value(b, out);
            out.push(')');
        }
        Value::Fun(f) => {
            let _ = write!(
                out,
                "fun {}({}) -> ",
                f.name,
                f.param.as_ref().map(|p| p.as_str()).unwrap_or("")
            );
            expr(&f.body, out);
        }
        Value::Chan(c) => {
            let _ = write!(out, "#c{}", c.0);
        }
    }
}

fn is_atomic(e: &Expr) -> bool {
    match e.kind() {
        ExprKind::Val(Value::Fun(_)) => false,
        ExprKind::Val(_) | ExprKind::NewChan(_) | ExprKind::Pair(..) => true,
        _ => false,
    }
}

fn atom(e: &Expr, out: &mut String) {
    if is_atomic(e) {
        expr(e, out);
    } else {
        out.push('(');
        expr(e, out);
        out.push(')');
    }
}

/// First component of `e1; e2`: must not swallow the trailing sequence.
fn seq_head(e: &Expr, out: &mut String) {
    match e.kind() {
        ExprKind::Let(..) | ExprKind::If(..) | ExprKind::Val(Value::Fun(_)) => {
            out.push('(');
            expr(e, out);
            out.push(')');
        }
        _ => expr(e, out),
    }
}

fn binop_symbol(op: PrimOp) -> Option<&'static str> {
    match op {
        PrimOp::Add => Some("+"),
        PrimOp::Sub => Some("-"),
        PrimOp::Mul => Some("*"),
        PrimOp::Leq => Some("<="),
        PrimOp::Fst | PrimOp::Snd => None,
    }
}

fn expr(e: &Expr, out: &mut String) {
    match e.kind() {
        ExprKind::Val(v) => value(v, out),
        ExprKind::Pair(a, b) => {
            out.push('(');
            expr(a, out);
            out.push_str(", ");
            expr(b, out);
            out.push(')');
        }
        ExprKind::App(f, a) => {
            if matches!(f.kind(), ExprKind::App(..)) {
                expr(f, out);
            } else {
                atom(f, out);
            }
            out.push(' ');
            atom(a, out);
        }
        ExprKind::Op(op, arg) => {
            let operands = match arg.kind() {
                ExprKind::Pair(a, b) => Some((a.clone(), b.clone())),
                ExprKind::Val(Value::Pair(a, b)) => {
                    Some((Expr::val((**a).clone()), Expr::val((**b).clone())))
                }
                _ => None,
            };
            match (binop_symbol(*op), operands) {
                (Some(sym), Some((a, b))) => {
                    atom(&a, out);
                    let _ = write!(out, " {sym} ");
                    atom(&b, out);
                }
                _ => {
                    out.push_str(op.keyword());
                    out.push(' ');
                    atom(arg, out);
                }
            }
        }
        ExprKind::Let(x, a, b) if x.is_wildcard() => {
            seq_head(a, out);
            out.push_str("; ");
            expr(b, out);
        }
        ExprKind::Let(x, a, b) => {
            let _ = write!(out, "let {x} = ");
            expr(a, out);
            out.push_str(" in ");
            expr(b, out);
        }
        ExprKind::If(c, t, f) => {
            out.push_str("if ");
            expr(c, out);
            out.push_str(" then ");
            expr(t, out);
            out.push_str(" else ");
            match f.kind() {
                ExprKind::Let(x, ..) if x.is_wildcard() => {
                    out.push('(');
                    expr(f, out);
                    out.push(')');
                }
                _ => expr(f, out),
            }
        }
        ExprKind::Send(c, v) => {
            out.push_str("send ");
            atom(c, out);
            out.push(' ');
            atom(v, out);
        }
        ExprKind::Recv(c) => {
            out.push_str("recv ");
            atom(c, out);
        }
        ExprKind::NewChan(t) => {
            let _ = write!(out, "newchan[{}]", print_type(t));
        }
        ExprKind::Spawn(a) => {
            out.push_str("spawn ");
            atom(a, out);
        }
        ExprKind::Flip(a) => {
            out.push_str("flip ");
            atom(a, out);
        }
        ExprKind::Atomic(k, a, b) => {
            let _ = write!(out, "atomic {k} {{ ");
            expr(a, out);
            out.push_str(" } else { ");
            expr(b, out);
            out.push_str(" }");
        }
        ExprKind::Commit(TxnRef::Name(k)) => {
            let _ = write!(out, "commit {k}");
        }
        ExprKind::Commit(TxnRef::Id(k)) => {
            let _ = write!(out, "commit #k{}", k.0);
        }
    }
}
