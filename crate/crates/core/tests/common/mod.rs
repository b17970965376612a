#![allow(dead_code)]

use tcml::ast::{substitute, substitute_txn, ChannelId, Expr, Name, Process, TxnId, Value};
use tcml::parser::parse_expr;
use tcml::refsem::{canonicalize, enumerate_steps, CanonicalState, EmbeddedRef, SeqRule, StepLabel};

pub const C: ChannelId = ChannelId(0);
pub const D: ChannelId = ChannelId(1);
pub const K: TxnId = TxnId(0);
pub const L: TxnId = TxnId(1);

/// Parses `src` reading `c`, `d` as free channels and `k`, `l` as live
/// transactions.
pub fn e(src: &str) -> Expr {
    let mut x = parse_expr(src).unwrap_or_else(|err| panic!("{src}: {err}"));
    x = substitute(&x, &Name::new("c"), &Value::Chan(C));
    x = substitute(&x, &Name::new("d"), &Value::Chan(D));
    x = substitute_txn(&x, &Name::new("k"), K);
    substitute_txn(&x, &Name::new("l"), L)
}

pub fn t(src: &str) -> Process {
    Process::Expr(e(src))
}

pub fn par(ps: Vec<Process>) -> Process {
    Process::par_all(ps)
}

pub struct Witness {
    pub rule: &'static str,
    pub start: CanonicalState,
    pub label: fn(&StepLabel) -> bool,
    pub expected: CanonicalState,
}

fn w(rule: &'static str, start: Process, label: fn(&StepLabel) -> bool, expected: Process) -> Witness {
    Witness { rule, start: canonicalize(&start), label, expected: canonicalize(&expected) }
}

/// One minimal witness per reduction rule, with the successor the rule must
/// produce.
pub fn rule_witnesses() -> Vec<Witness> {
    let c2 = ChannelId(7);
    vec![
        w("EIfT", t("if true then 1 else 2"), |l| matches!(l, StepLabel::Seq(_, SeqRule::IfTrue)), t("1")),
        w("EIfF", t("if false then 1 else 2"), |l| matches!(l, StepLabel::Seq(_, SeqRule::IfFalse)), t("2")),
        w("ELet", t("let x = 5 in x + x"), |l| matches!(l, StepLabel::Seq(_, SeqRule::Let)), t("5 + 5")),
        w("EOp", t("send c (add (1, 2))"), |l| matches!(l, StepLabel::Seq(_, SeqRule::Op)), t("send c 3")),
        w(
            "EApp",
            t("(fun f(x) -> x) 4"),
            |l| matches!(l, StepLabel::Seq(_, SeqRule::App)),
            t("4"),
        ),
        w(
            "CSpawn",
            t("spawn (fun f() -> send c 1); recv c"),
            |l| matches!(l, StepLabel::Spawn(_)),
            par(vec![t("(); recv c"), t("(fun f() -> send c 1) ()")]),
        ),
        w(
            "CNewChan",
            t("newchan[int]"),
            |l| matches!(l, StepLabel::NewChan(_)),
            Process::nu(c2, Process::Expr(Expr::chan(c2))),
        ),
        w(
            "TrAtomic",
            t("(atomic k { commit k; 1 } else { 2 }) + 10"),
            |l| matches!(l, StepLabel::Atomic(..)),
            Process::trans(K, t("(commit k; 1) + 10"), t("2 + 10")),
        ),
        w(
            "TrCommit",
            Process::trans(K, t("commit k; 1"), t("2")),
            |l| matches!(l, StepLabel::CommitSpawn(_, k) if *k == K),
            Process::trans(K, par(vec![Process::Co(K), t("(); 1")]), t("2")),
        ),
        w(
            "CSync",
            par(vec![t("recv c"), t("send c 1")]),
            |l| matches!(l, StepLabel::Sync { .. }),
            par(vec![t("1"), t("()")]),
        ),
        w(
            "CSync (symmetric)",
            par(vec![t("send c 1; 2"), t("let x = recv c in x")]),
            |l| matches!(l, StepLabel::Sync { .. }),
            par(vec![t("(); 2"), t("let x = 1 in x")]),
        ),
        w(
            "CPar",
            par(vec![t("if true then 1 else 2"), t("recv c")]),
            |l| matches!(l, StepLabel::Seq(..)),
            par(vec![t("1"), t("recv c")]),
        ),
        w(
            "CChan",
            Process::nu(c2, Process::Expr(Expr::if_(Expr::bool(true), Expr::recv(Expr::chan(c2)), Expr::unit()))),
            |l| matches!(l, StepLabel::Seq(..)),
            Process::nu(c2, Process::Expr(Expr::recv(Expr::chan(c2)))),
        ),
        w(
            "TrEmb",
            par(vec![t("send c 1"), Process::trans(K, t("recv c"), t("0"))]),
            |l| matches!(l, StepLabel::Embed { process: EmbeddedRef::Thread(_), .. }),
            Process::trans(K, par(vec![t("send c 1"), t("recv c")]), par(vec![t("send c 1"), t("0")])),
        ),
        w(
            "TrEmb (transaction)",
            par(vec![Process::trans(K, t("recv c"), t("0")), Process::trans(L, t("send c 1"), t("1"))]),
            |l| matches!(l, StepLabel::Embed { process: EmbeddedRef::Txn(_), .. }),
            Process::trans(
                K,
                par(vec![t("recv c"), Process::trans(L, t("send c 1"), t("1"))]),
                par(vec![t("0"), Process::trans(L, t("send c 1"), t("1"))]),
            ),
        ),
        w(
            "TrStep",
            Process::trans(K, t("if false then 1 else 2"), t("0")),
            |l| matches!(l, StepLabel::Seq(..)),
            Process::trans(K, t("2"), t("0")),
        ),
        w(
            "TrCo",
            Process::trans(K, par(vec![Process::Co(K), t("5"), Process::trans(L, t("recv d"), t("0"))]), t("0")),
            |l| *l == StepLabel::CoCommit(K),
            par(vec![t("5"), Process::trans(L, t("recv d"), t("0"))]),
        ),
        w(
            "TrAbort",
            Process::trans(K, par(vec![t("send c 1"), t("recv d")]), t("9")),
            |l| *l == StepLabel::Abort(K),
            t("9"),
        ),
    ]
}

/// Checks a witness; returns a description of the failure, if any.
pub fn check_witness(w: &Witness) -> Result<(), String> {
    let steps = enumerate_steps(&w.start);
    if steps.iter().any(|(l, s)| (w.label)(l) && *s == w.expected) {
        Ok(())
    } else {
        Err(format!("{}: expected successor not produced; got {:?}", w.rule, steps))
    }
}

/// States of the nested example: transactions k and l next to
/// `P = send d (); send c ()`.
pub mod nested {
    use super::*;

    pub const P: &str = "send d (); send c ()";
    pub const ALT_K: &str = "(); atomic l { recv d; commit l } else { () }";

    pub fn start() -> CanonicalState {
        canonicalize(&par(vec![
            Process::trans(
                K,
                par(vec![t("recv c; commit k"), Process::trans(L, t("recv d; commit l"), t("()"))]),
                t(ALT_K),
            ),
            t(P),
        ]))
    }

    pub fn post_embed() -> CanonicalState {
        canonicalize(&Process::trans(
            K,
            par(vec![
                t("recv c; commit k"),
                Process::trans(L, par(vec![t(P), t("recv d; commit l")]), par(vec![t(P), t("()")])),
            ]),
            par(vec![t(P), t(ALT_K)]),
        ))
    }

    pub fn post_sync() -> CanonicalState {
        canonicalize(&Process::trans(
            K,
            par(vec![
                t("recv c; commit k"),
                Process::trans(L, par(vec![t("send c ()"), t("commit l")]), par(vec![t(P), t("()")])),
            ]),
            par(vec![t(P), t(ALT_K)]),
        ))
    }

    pub fn pre_commit() -> CanonicalState {
        canonicalize(&Process::trans(
            K,
            Process::trans(
                L,
                par(vec![Process::Co(K), Process::Co(L), t("()"), t("()"), t("()")]),
                par(vec![t("recv c; commit k"), t(P), t("()")]),
            ),
            par(vec![t(P), t(ALT_K)]),
        ))
    }
}
