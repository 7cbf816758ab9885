use thiserror::Error;

use crate::allocator::Node;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ratio {0} is outside [0, 100]")]
    RatioOutOfRange(f64),

    #[error("invalid device profile `{name}`: {reason}")]
    InvalidDevice { name: String, reason: String },

    #[error("invalid workload profile `{name}`: {reason}")]
    InvalidWorkload { name: String, reason: String },

    #[error("invalid system config: {0}")]
    InvalidSystem(String),

    #[error("workload list is empty")]
    NoWorkloads,

    #[error("steady-state solver did not converge after {iterations} iterations (last latency {last_latency_ns} ns)")]
    NonConvergence { iterations: usize, last_latency_ns: f64 },

    #[error("baseline throughput for `{0}` is zero")]
    ZeroBaseline(String),

    #[error("out of memory on {node} node: requested {requested} pages, {available} available")]
    OutOfMemory {
        node: Node,
        requested: u64,
        available: u64,
    },

    #[error("set_ratio requires a weighted-interleave policy, found {0}")]
    PolicyMode(String),

    #[error("sample window is empty")]
    EmptyWindow,

    #[error("feature `{0}` is not a known counter")]
    UnknownFeature(String),

    #[error("need at least {needed} observations to fit {params} parameters, got {got}")]
    Underdetermined {
        needed: usize,
        params: usize,
        got: usize,
    },

    #[error("observation {index} has {got} features, expected {expected}")]
    FeatureArity {
        index: usize,
        expected: usize,
        got: usize,
    },

    #[error("design matrix is rank deficient (rank {rank} < {params})")]
    RankDeficient { rank: usize, params: usize },

    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("need at least two points for a correlation, got {0}")]
    TooFewPoints(usize),

    #[error("correlation is undefined for a constant series")]
    ConstantSeries,

    #[error("invalid model coefficients: {0}")]
    InvalidModel(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("invalid ratio list `{input}`: {reason}")]
    RatioList { input: String, reason: String },

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
