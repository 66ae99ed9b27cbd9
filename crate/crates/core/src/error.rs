use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A scenario field failed validation. `field` is a dotted path such as
    /// `prosumers[2].storages[0].eta_c`.
    #[error("invalid scenario at `{field}`: {message}")]
    Scenario { field: String, message: String },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("offset {0} is outside the decision index")]
    Offset(usize),

    #[error("topology violates the radial nesting premise: lines {line_a} and {line_b} share prosumer {prosumer} but their prosumer sets are not nested")]
    Topology {
        line_a: usize,
        line_b: usize,
        prosumer: usize,
    },

    #[error("constraint set of agent {owner} is infeasible; contradicting rows: {rows:?}")]
    Infeasible { owner: usize, rows: Vec<String> },

    #[error("projection for agent {owner} hit the iteration limit ({iterations}) with residual {residual:e}")]
    IterationLimit {
        owner: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("agent {agent} failed in outer {outer}, inner {inner}: {source}")]
    Round {
        agent: usize,
        outer: usize,
        inner: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("iterates diverged at outer iteration {outer} (|x|_inf = {norm:e}); check the learning rate")]
    Diverged { outer: usize, norm: f64 },

    #[error("message from {from} to {to} carries offset {offset} outside its neighbor set")]
    Locality { from: usize, to: usize, offset: usize },

    #[error("no price satisfies the benefit constraint of prosumer {prosumer} (slack {slack:e})")]
    BenefitInfeasible { prosumer: usize, slack: f64 },

    #[error("invalid solver configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Domain(String),

    #[error("oracle failed: {0}")]
    Oracle(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn scenario(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scenario {
            field: field.into(),
            message: message.into(),
        }
    }
}
