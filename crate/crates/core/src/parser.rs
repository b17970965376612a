//! Parser for `.tcml` source files.
//!
//! ```text
//! expr   ::= nonseq [ ';' expr ]
//! nonseq ::= 'let' x '=' expr 'in' expr
//!          | 'if' expr 'then' expr 'else' nonseq
//!          | 'fun' f '(' [x] ')' '->' expr
//!          | 'atomic' k '{' expr '}' 'else' '{' expr '}'
//!          | arith [ '<=' arith ]
//! arith  ::= term { ('+' | '-') term }
//! term   ::= app { '*' app }
//! app    ::= 'send' atom atom | 'recv' atom | 'spawn' atom | 'flip' atom
//!          | ('fst' | 'snd' | 'add' | 'sub' | 'mul' | 'leq') atom
//!          | 'commit' k | atom { atom }
//! atom   ::= n | '(' '-' n ')' | 'true' | 'false' | '(' ')' | x
//!          | '(' expr ')' | '(' expr ',' expr ')' | 'newchan' '[' type ']'
//! type   ::= prod [ '->' type ]
//! prod   ::= post { '*' post }
//! post   ::= base { 'chan' }
//! base   ::= 'unit' | 'bool' | 'int' | '(' type ')'
//! ```
//!
//! Comments run from `--` to the end of the line.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::ast::{Expr, ExprKind, Name, PrimOp, Type, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SourcePos {
    pub line: usize,
    pub column: usize,
    pub offset: usize,
}

impl fmt::Display for SourcePos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at {pos}: {message}")]
pub struct ParseError {
    pub pos: SourcePos,
    pub message: String,
}

/// Source positions keyed by expression node identity.
#[derive(Debug, Clone, Default)]
pub struct SpanMap(HashMap<usize, SourcePos>);

impl SpanMap {
    pub fn get(&self, e: &Expr) -> Option<SourcePos> {
        self.0.get(&e.node_id()).copied()
    }

    fn insert(&mut self, e: &Expr, pos: SourcePos) {
        self.0.entry(e.node_id()).or_insert(pos);
    }
}

#[derive(Debug, Clone)]
pub struct Parsed {
    pub expr: Expr,
    pub spans: SpanMap,
}

const KEYWORDS: &[&str] = &[
    "let", "in", "if", "then", "else", "fun", "spawn", "atomic", "commit", "send", "recv",
    "newchan", "true", "false", "fst", "snd", "add", "sub", "mul", "leq", "flip", "unit", "bool",
    "int", "chan",
];

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Kw(&'static str),
    Int(u64),
    Sym(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Kw(k) => write!(f, "`{k}`"),
            Tok::Int(n) => write!(f, "integer {n}"),
            Tok::Sym(s) => write!(f, "`{s}`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, SourcePos)>, ParseError> {
    const SYMS: &[&str] = &[
        "->", "<=", "(", ")", ",", ";", "=", "+", "-", "*", "[", "]", "{", "}",
    ];
    let mut toks = Vec::new();
    let bytes = text.as_bytes();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
        for &b in &bytes[*i..*i + n] {
            if b == b'\n' {
                *line += 1;
                *col = 1;
            } else if (b & 0xC0) != 0x80 {
                *col += 1;
            }
        }
        *i += n;
    };
    while i < bytes.len() {
        let pos = SourcePos { line, column: col, offset: i };
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
        } else if text[i..].starts_with("--") {
            let n = text[i..].find('\n').unwrap_or(text.len() - i);
            advance(&mut i, &mut line, &mut col, n);
        } else if c.is_ascii_digit() {
            let n = text[i..].find(|ch: char| !ch.is_ascii_digit()).unwrap_or(text.len() - i);
            let lit = &text[i..i + n];
            let v: u64 = lit.parse().map_err(|_| ParseError {
                pos,
                message: format!("integer literal {lit} out of range"),
            })?;
            toks.push((Tok::Int(v), pos));
            advance(&mut i, &mut line, &mut col, n);
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let n = text[i..]
                .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_' || ch == '\''))
                .unwrap_or(text.len() - i);
            let word = &text[i..i + n];
            let tok = match KEYWORDS.iter().find(|k| **k == word) {
                Some(k) => Tok::Kw(k),
                None => Tok::Ident(word.to_string()),
            };
            toks.push((tok, pos));
            advance(&mut i, &mut line, &mut col, n);
        } else if let Some(s) = SYMS.iter().find(|s| text[i..].starts_with(**s)) {
            toks.push((Tok::Sym(s), pos));
            advance(&mut i, &mut line, &mut col, s.len());
        } else {
            let ch = text[i..].chars().next().unwrap();
            return Err(ParseError { pos, message: format!("unexpected character {ch:?}") });
        }
    }
    toks.push((Tok::Eof, SourcePos { line, column: col, offset: i }));
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, SourcePos)>,
    at: usize,
    spans: SpanMap,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.at + 1).min(self.toks.len() - 1)].0
    }

    fn pos(&self) -> SourcePos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(ParseError { pos: self.pos(), message: message.into() })
    }

    fn unexpected<T>(&self, wanted: &str) -> PResult<T> {
        self.error(format!("expected {wanted}, found {}", self.peek()))
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Kw(x) if *x == k)
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.is_sym(s) {
            self.bump();
            Ok(())
        } else {
            self.unexpected(&format!("`{s}`"))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.is_kw(k) {
            self.bump();
            Ok(())
        } else {
            self.unexpected(&format!("`{k}`"))
        }
    }

    fn ident(&mut self) -> PResult<Name> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(Name::new(&s))
            }
            _ => self.unexpected("an identifier"),
        }
    }

    fn mark(&mut self, e: Expr, pos: SourcePos) -> Expr {
        self.spans.insert(&e, pos);
        e
    }

    fn expr(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        let head = self.nonseq()?;
        if self.is_sym(";") {
            self.bump();
            let rest = self.expr()?;
            Ok(self.mark(Expr::seq(head, rest), pos))
        } else {
            Ok(head)
        }
    }

    fn nonseq(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        let e = match self.peek() {
            Tok::Kw("let") => {
                self.bump();
                let x = self.ident()?;
                self.expect_sym("=")?;
                let bound = self.expr()?;
                self.expect_kw("in")?;
                let body = self.expr()?;
                Expr::new(ExprKind::Let(x, bound, body))
            }
            Tok::Kw("if") => {
                self.bump();
                let c = self.expr()?;
                self.expect_kw("then")?;
                let t = self.expr()?;
                self.expect_kw("else")?;
                let f = self.nonseq()?;
                Expr::if_(c, t, f)
            }
            Tok::Kw("fun") => {
                self.bump();
                let f = self.ident()?;
                self.expect_sym("(")?;
                let param = if self.is_sym(")") { None } else { Some(self.ident()?) };
                self.expect_sym(")")?;
                self.expect_sym("->")?;
                let body = self.expr()?;
                Expr::val(Value::fun(f, param, body))
            }
            Tok::Kw("atomic") => {
                self.bump();
                let k = self.ident()?;
                self.expect_sym("{")?;
                let d = self.expr()?;
                self.expect_sym("}")?;
                self.expect_kw("else")?;
                self.expect_sym("{")?;
                let a = self.expr()?;
                self.expect_sym("}")?;
                Expr::new(ExprKind::Atomic(k, d, a))
            }
            _ => {
                let lhs = self.arith()?;
                if self.is_sym("<=") {
                    self.bump();
                    let rhs = self.arith()?;
                    Expr::binop(PrimOp::Leq, lhs, rhs)
                } else {
                    return Ok(lhs);
                }
            }
        };
        Ok(self.mark(e, pos))
    }

    fn arith(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        let mut lhs = self.term()?;
        loop {
            let op = if self.is_sym("+") {
                PrimOp::Add
            } else if self.is_sym("-") {
                PrimOp::Sub
            } else {
                return Ok(lhs);
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binop(op, lhs, rhs);
            lhs = self.mark(lhs, pos);
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        let mut lhs = self.app()?;
        while self.is_sym("*") {
            self.bump();
            let rhs = self.app()?;
            lhs = Expr::binop(PrimOp::Mul, lhs, rhs);
            lhs = self.mark(lhs, pos);
        }
        Ok(lhs)
    }

    fn starts_atom(&self) -> bool {
        match self.peek() {
            Tok::Int(_) | Tok::Ident(_) => true,
            Tok::Kw(k) => matches!(*k, "true" | "false" | "newchan"),
            Tok::Sym(s) => *s == "(",
            Tok::Eof => false,
        }
    }

    fn app(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        let e = match self.peek().clone() {
            Tok::Kw("send") => {
                self.bump();
                let c = self.atom()?;
                let v = self.atom()?;
                Expr::send(c, v)
            }
            Tok::Kw("recv") => {
                self.bump();
                Expr::recv(self.atom()?)
            }
            Tok::Kw("spawn") => {
                self.bump();
                Expr::spawn(self.atom()?)
            }
            Tok::Kw("flip") => {
                self.bump();
                Expr::new(ExprKind::Flip(self.atom()?))
            }
            Tok::Kw("commit") => {
                self.bump();
                let k = self.ident()?;
                Expr::new(ExprKind::Commit(crate::ast::TxnRef::Name(k)))
            }
            Tok::Kw(k) if PrimOp::ALL.iter().any(|op| op.keyword() == k) => {
                let op = *PrimOp::ALL.iter().find(|op| op.keyword() == k).unwrap();
                self.bump();
                Expr::op(op, self.atom()?)
            }
            _ => {
                let mut f = self.atom()?;
                while self.starts_atom() {
                    let a = self.atom()?;
                    f = Expr::app(f, a);
                    f = self.mark(f, pos);
                }
                return Ok(f);
            }
        };
        Ok(self.mark(e, pos))
    }

    fn atom(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        let e = match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                if n > i64::MAX as u64 {
                    return Err(ParseError { pos, message: format!("integer literal {n} out of range") });
                }
                Expr::int(n as i64)
            }
            Tok::Kw("true") => {
                self.bump();
                Expr::bool(true)
            }
            Tok::Kw("false") => {
                self.bump();
                Expr::bool(false)
            }
            Tok::Ident(x) => {
                self.bump();
                Expr::var(&x)
            }
            Tok::Kw("newchan") => {
                self.bump();
                self.expect_sym("[")?;
                let t = self.ty()?;
                self.expect_sym("]")?;
                Expr::newchan(t)
            }
            Tok::Sym("(") => {
                self.bump();
                if self.is_sym(")") {
                    self.bump();
                    Expr::unit()
                } else if self.is_sym("-") && matches!(self.peek2(), Tok::Int(_)) {
                    self.bump();
                    let Tok::Int(n) = self.bump() else { unreachable!() };
                    if n > i64::MAX as u64 + 1 {
                        return Err(ParseError { pos, message: format!("integer literal -{n} out of range") });
                    }
                    self.expect_sym(")")?;
                    Expr::int((n as i128).wrapping_neg() as i64)
                } else {
                    let first = self.expr()?;
                    if self.is_sym(",") {
                        self.bump();
                        let second = self.expr()?;
                        self.expect_sym(")")?;
                        Expr::pair(first, second)
                    } else {
                        self.expect_sym(")")?;
                        return Ok(first);
                    }
                }
            }
            _ => return self.unexpected("an expression"),
        };
        Ok(self.mark(e, pos))
    }

    fn ty(&mut self) -> PResult<Type> {
        let lhs = self.ty_prod()?;
        if self.is_sym("->") {
            self.bump();
            Ok(Type::arrow(lhs, self.ty()?))
        } else {
            Ok(lhs)
        }
    }

    fn ty_prod(&mut self) -> PResult<Type> {
        let mut t = self.ty_post()?;
        while self.is_sym("*") {
            self.bump();
            t = Type::prod(t, self.ty_post()?);
        }
        Ok(t)
    }

    fn ty_post(&mut self) -> PResult<Type> {
        let mut t = match self.bump() {
            Tok::Kw("unit") => Type::Unit,
            Tok::Kw("bool") => Type::Bool,
            Tok::Kw("int") => Type::Int,
            Tok::Sym("(") => {
                let t = self.ty()?;
                self.expect_sym(")")?;
                t
            }
            _ => {
                self.at -= 1;
                return self.unexpected("a type");
            }
        };
        while self.is_kw("chan") {
            self.bump();
            t = Type::chan(t);
        }
        Ok(t)
    }
}

/// Parses one top-level expression, recording source positions.
pub fn parse_program(text: &str) -> Result<Parsed, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0, spans: SpanMap::default() };
    let expr = p.expr()?;
    if !matches!(p.peek(), Tok::Eof) {
        return p.unexpected("end of input");
    }
    Ok(Parsed { expr, spans: p.spans })
}

pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    parse_program(text).map(|p| p.expr)
}

pub fn parse_type(text: &str) -> Result<Type, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0, spans: SpanMap::default() };
    let t = p.ty()?;
    if !matches!(p.peek(), Tok::Eof) {
        return p.unexpected("end of input");
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pretty::print_expr;

    #[test]
    fn parses_let_newchan_send() {
        let e = parse_expr("let x = newchan[int] in send x 1").unwrap();
        let expected = Expr::let_(
            "x",
            Expr::newchan(Type::Int),
            Expr::send(Expr::var("x"), Expr::int(1)),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn sequence_desugars_to_wildcard_let() {
        let e = parse_expr("atomic k { sync dinner; sync movie; commit k } else { () }").unwrap();
        let sync = |c: &str| Expr::app(Expr::var("sync"), Expr::var(c));
        let body = Expr::seq(sync("dinner"), Expr::seq(sync("movie"), Expr::commit("k")));
        assert_eq!(e, Expr::atomic("k", body, Expr::unit()));
    }

    #[test]
    fn truncated_input_reports_column() {
        let err = parse_expr("1 +").unwrap_err();
        assert_eq!(err.pos.line, 1);
        assert_eq!(err.pos.column, 4);
    }

    #[test]
    fn arithmetic_precedence_and_comparison() {
        let e = parse_expr("1 + 2 * 3 <= 7").unwrap();
        let expected = Expr::binop(
            PrimOp::Leq,
            Expr::binop(PrimOp::Add, Expr::int(1), Expr::binop(PrimOp::Mul, Expr::int(2), Expr::int(3))),
            Expr::int(7),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn prefix_operator_form() {
        let e = parse_expr("send c (add (1,2))").unwrap();
        let expected = Expr::send(Expr::var("c"), Expr::binop(PrimOp::Add, Expr::int(1), Expr::int(2)));
        assert_eq!(e, expected);
    }

    #[test]
    fn comments_and_negative_literals() {
        let e = parse_expr("-- leading comment\n(-5) -- trailing\n").unwrap();
        assert_eq!(e, Expr::int(-5));
        assert_eq!(parse_expr("(-9223372036854775808)").unwrap(), Expr::int(i64::MIN));
    }

    #[test]
    fn application_is_left_associative() {
        let e = parse_expr("f x y").unwrap();
        assert_eq!(e, Expr::app(Expr::app(Expr::var("f"), Expr::var("x")), Expr::var("y")));
    }

    #[test]
    fn types_parse() {
        assert_eq!(
            parse_type("int * bool -> int chan").unwrap(),
            Type::arrow(Type::prod(Type::Int, Type::Bool), Type::chan(Type::Int))
        );
    }

    #[test]
    fn if_else_branch_does_not_swallow_sequence() {
        let e = parse_expr("if true then 1 else 2; 3").unwrap();
        let expected = Expr::seq(Expr::if_(Expr::bool(true), Expr::int(1), Expr::int(2)), Expr::int(3));
        assert_eq!(e, expected);
        assert_eq!(parse_expr(&print_expr(&e)).unwrap(), e);
    }

    #[test]
    fn error_positions_are_inside_input() {
        for src in ["", "let", "let x =", "(1,", "fun f(", "atomic k { 1 } else", "1 $ 2", "newchan[q]"] {
            let err = parse_expr(src).unwrap_err();
            assert!(err.pos.offset <= src.len(), "{src:?} -> {err}");
        }
    }

    #[test]
    fn positions_are_recorded() {
        let p = parse_program("let x = 1 in\n  x + true").unwrap();
        let ExprKind::Let(_, _, body) = p.expr.kind() else { panic!() };
        let pos = p.spans.get(body).unwrap();
        assert_eq!((pos.line, pos.column), (2, 3));
    }
}
