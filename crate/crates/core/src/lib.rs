//! TCML: a simply-typed functional language with synchronous channels and
//! communicating transactions.
//!
//! The crate contains a front end ([`parser`], [`typecheck`]), an exhaustive
//! reference semantics ([`refsem`]) used as an oracle, a concurrent runtime
//! with pluggable transactional schedulers ([`runtime`], [`schedulers`]), and
//! the benchmark programs and harness ([`bench`]).

pub mod ast;
pub mod corpus;
pub mod parser;
pub mod pretty;
pub mod typecheck;
pub mod refsem;
pub mod runtime;
pub mod schedulers;
pub mod bench;
pub mod tracestats;
