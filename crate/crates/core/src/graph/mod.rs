//! A small dataflow runtime in the style of calculator graphs: nodes
//! connected by typed streams of timestamped packets, with declared
//! back-edges carrying the previous frame's values.
//!
//! A node fires at a timestamp once every input stream has settled for it.
//! Back-edge inputs see the latest packet strictly before the current
//! timestamp, or nothing on the first frame.

mod parse;
mod runtime;
mod validate;

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use parse::parse_graph;
pub use runtime::{run_graph, GraphRun, NodeStats, RunOptions};
pub use validate::{validate_graph, ValidatedGraph};

pub type Payload = Arc<dyn Any + Send + Sync>;

/// An immutable value on a stream.
#[derive(Clone)]
pub struct Packet {
    pub timestamp: i64,
    pub payload: Payload,
}

impl Packet {
    pub fn new<T: Any + Send + Sync>(timestamp: i64, value: T) -> Self {
        Self {
            timestamp,
            payload: Arc::new(value),
        }
    }

    pub fn get<T: Any>(&self) -> Option<&T> {
        self.payload.downcast_ref::<T>()
    }
}

impl fmt::Debug for Packet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Packet").field("timestamp", &self.timestamp).finish_non_exhaustive()
    }
}

/// Payload kind accepted by any port.
pub const ANY_KIND: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortSpec {
    pub name: String,
    pub kind: String,
    /// Optional inputs may be absent when the node fires.
    pub optional: bool,
}

impl PortSpec {
    pub fn required(name: &str, kind: &str) -> Self {
        Self {
            name: name.into(),
            kind: kind.into(),
            optional: false,
        }
    }

    pub fn optional(name: &str, kind: &str) -> Self {
        Self {
            optional: true,
            ..Self::required(name, kind)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FirePolicy {
    /// Fire when every required non-back-edge input has a packet.
    #[default]
    AllRequired,
    /// Fire when any non-back-edge input has a packet.
    AnyPresent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalculatorInfo {
    pub inputs: Vec<PortSpec>,
    pub outputs: Vec<PortSpec>,
    pub policy: FirePolicy,
}

pub type CalculatorError = Box<dyn std::error::Error + Send + Sync>;

/// One processing step. `inputs` follow the calculator's input port order;
/// the returned vector follows its output port order, `None` meaning no
/// packet at this timestamp.
pub trait Calculator: Send {
    fn process(&mut self, timestamp: i64, inputs: &[Option<Packet>]) -> Result<Vec<Option<Payload>>, CalculatorError>;
}

type Factory = Arc<dyn Fn() -> Box<dyn Calculator> + Send + Sync>;

/// Calculator types available to graph specs, by name.
#[derive(Clone, Default)]
pub struct CalculatorRegistry {
    entries: BTreeMap<String, (CalculatorInfo, Factory)>,
}

impl CalculatorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: &str, info: CalculatorInfo, factory: F)
    where
        F: Fn() -> Box<dyn Calculator> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_string(), (info, Arc::new(factory)));
    }

    pub fn info(&self, name: &str) -> Option<&CalculatorInfo> {
        self.entries.get(name).map(|(i, _)| i)
    }

    pub(crate) fn create(&self, name: &str) -> Option<Box<dyn Calculator>> {
        self.entries.get(name).map(|(_, f)| f())
    }
}

impl fmt::Debug for CalculatorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.entries.keys()).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputBinding {
    pub port: String,
    pub stream: String,
    pub back_edge: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputBinding {
    pub port: String,
    pub stream: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub name: String,
    pub calculator: String,
    pub inputs: Vec<InputBinding>,
    pub outputs: Vec<OutputBinding>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamDecl {
    pub name: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GraphSpec {
    pub inputs: Vec<StreamDecl>,
    pub outputs: Vec<String>,
    pub nodes: Vec<NodeSpec>,
}

/// One structural problem found by [`validate_graph`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    DuplicateNode { node: String },
    UnknownCalculator { node: String, calculator: String },
    UnknownPort { node: String, port: String },
    UnboundPort { node: String, port: String },
    DuplicateProducer { stream: String },
    DanglingInput { node: String, port: String, stream: String },
    TypeMismatch { node: String, port: String, stream: String, expected: String, found: String },
    UnknownOutput { stream: String },
    Cycle { nodes: Vec<String> },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::DuplicateNode { node } => write!(f, "node `{node}` defined more than once"),
            Diagnostic::UnknownCalculator { node, calculator } => {
                write!(f, "node `{node}`: unknown calculator `{calculator}`")
            }
            Diagnostic::UnknownPort { node, port } => write!(f, "node `{node}`: no port named `{port}`"),
            Diagnostic::UnboundPort { node, port } => write!(f, "node `{node}`: port `{port}` is not connected"),
            Diagnostic::DuplicateProducer { stream } => write!(f, "stream `{stream}` has more than one producer"),
            Diagnostic::DanglingInput { node, port, stream } => {
                write!(f, "node `{node}` input `{port}` reads `{stream}`, which nothing produces")
            }
            Diagnostic::TypeMismatch {
                node,
                port,
                stream,
                expected,
                found,
            } => write!(
                f,
                "node `{node}` input `{port}` expects {expected} but stream `{stream}` carries {found}"
            ),
            Diagnostic::UnknownOutput { stream } => write!(f, "graph output `{stream}` is never produced"),
            Diagnostic::Cycle { nodes } => write!(
                f,
                "cycle without a declared back-edge through {}",
                nodes.iter().map(|n| format!("`{n}`")).collect::<Vec<_>>().join(", ")
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid graph:\n{}", .0.iter().map(|d| format!("  - {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),

    #[error("graph config line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("node `{node}` failed at timestamp {timestamp}: {message}")]
    NodeFailed { node: String, timestamp: i64, message: String },

    #[error("bad graph input: {0}")]
    Input(String),
}

impl GraphError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            GraphError::Invalid(d) => d,
            _ => &[],
        }
    }
}

/// Forwards a data packet iff the boolean `allow` packet at the same
/// timestamp is true. A data packet without a matching `allow` is an error.
#[derive(Debug, Default)]
pub struct GateCalculator;

impl GateCalculator {
    pub const NAME: &'static str = "Gate";

    pub fn info() -> CalculatorInfo {
        CalculatorInfo {
            inputs: vec![PortSpec::optional("data", ANY_KIND), PortSpec::optional("allow", "bool")],
            outputs: vec![PortSpec::required("out", ANY_KIND)],
            policy: FirePolicy::AnyPresent,
        }
    }
}

impl Calculator for GateCalculator {
    fn process(&mut self, timestamp: i64, inputs: &[Option<Packet>]) -> Result<Vec<Option<Payload>>, CalculatorError> {
        let (data, allow) = (&inputs[0], &inputs[1]);
        match (data, allow) {
            (Some(_), None) => Err(format!("no allow packet at timestamp {timestamp}").into()),
            (None, _) => Ok(vec![None]),
            (Some(d), Some(a)) => {
                let pass = *a
                    .get::<bool>()
                    .ok_or("allow packet is not a boolean")?;
                Ok(vec![pass.then(|| d.payload.clone())])
            }
        }
    }
}

/// Forwards its input unchanged.
#[derive(Debug, Default)]
pub struct PassThroughCalculator;

impl PassThroughCalculator {
    pub const NAME: &'static str = "PassThrough";

    pub fn info() -> CalculatorInfo {
        CalculatorInfo {
            inputs: vec![PortSpec::required("in", ANY_KIND)],
            outputs: vec![PortSpec::required("out", ANY_KIND)],
            policy: FirePolicy::AllRequired,
        }
    }
}

impl Calculator for PassThroughCalculator {
    fn process(&mut self, _timestamp: i64, inputs: &[Option<Packet>]) -> Result<Vec<Option<Payload>>, CalculatorError> {
        Ok(vec![inputs[0].as_ref().map(|p| p.payload.clone())])
    }
}

/// Registry with the generic calculators.
pub fn base_registry() -> CalculatorRegistry {
    let mut r = CalculatorRegistry::new();
    r.register(GateCalculator::NAME, GateCalculator::info(), || Box::new(GateCalculator));
    r.register(PassThroughCalculator::NAME, PassThroughCalculator::info(), || {
        Box::new(PassThroughCalculator)
    });
    r
}
