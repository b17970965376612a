//! Small example programs shared by the test suites and the CLI.

pub struct Program {
    pub name: &'static str,
    pub source: &'static str,
}

macro_rules! program {
    ($name:literal) => {
        Program { name: $name, source: include_str!(concat!("../programs/", $name, ".tcml")) }
    };
}

/// Programs small enough for exhaustive exploration.
pub const SMALL: &[Program] = &[
    program!("value"),
    program!("newchan"),
    program!("flip"),
    program!("race"),
    program!("chanpass"),
    program!("restart_commit"),
    program!("restart_flip"),
    program!("rendezvous"),
    program!("mixed"),
    program!("nested_restart"),
    program!("two_choices"),
    program!("swap"),
    program!("nested"),
];

pub const SNO: Program = program!("sno");

pub fn by_name(name: &str) -> Option<&'static Program> {
    SMALL.iter().chain(std::iter::once(&SNO)).find(|p| p.name == name)
}
