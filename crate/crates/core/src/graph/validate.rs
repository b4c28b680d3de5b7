use std::collections::{BTreeMap, BTreeSet};

use super::{CalculatorInfo, CalculatorRegistry, Diagnostic, GraphError, GraphSpec, ANY_KIND};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Producer {
    GraphInput,
    Node { node: usize, port: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct StreamInfo {
    pub name: String,
    pub kind: String,
    pub producer: Producer,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct InputSlot {
    pub stream: usize,
    pub back_edge: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct NodeInfo {
    pub name: String,
    pub calculator: String,
    pub info: CalculatorInfo,
    /// Calculator input port order; `None` for unbound optional ports.
    pub inputs: Vec<Option<InputSlot>>,
    /// Calculator output port order; `None` for discarded outputs.
    pub outputs: Vec<Option<usize>>,
}

/// A spec checked against a registry, with streams resolved to indices.
#[derive(Debug, Clone)]
pub struct ValidatedGraph {
    pub(crate) spec: GraphSpec,
    pub(crate) nodes: Vec<NodeInfo>,
    pub(crate) streams: Vec<StreamInfo>,
    pub(crate) outputs: Vec<usize>,
}

impl ValidatedGraph {
    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn node_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.name.as_str())
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.streams
            .iter()
            .filter(|s| s.producer == Producer::GraphInput)
            .map(|s| s.name.as_str())
    }

    /// Resolved payload kind of a stream.
    pub fn stream_kind(&self, name: &str) -> Option<&str> {
        self.streams.iter().find(|s| s.name == name).map(|s| s.kind.as_str())
    }

    pub(crate) fn stream_index(&self, name: &str) -> Option<usize> {
        self.streams.iter().position(|s| s.name == name)
    }
}

fn kinds_match(a: &str, b: &str) -> bool {
    a == b || a == ANY_KIND || b == ANY_KIND
}

/// Checks structure and types; collects every problem before failing.
pub fn validate_graph(spec: &GraphSpec, registry: &CalculatorRegistry) -> Result<ValidatedGraph, GraphError> {
    let mut diags = Vec::new();

    let mut seen = BTreeSet::new();
    for n in &spec.nodes {
        if !seen.insert(n.name.as_str()) {
            diags.push(Diagnostic::DuplicateNode { node: n.name.clone() });
        }
    }

    // Streams and their producers.
    let mut streams: Vec<StreamInfo> = Vec::new();
    let mut by_name: BTreeMap<String, usize> = BTreeMap::new();
    let mut add_stream = |name: &str, kind: &str, producer: Producer, diags: &mut Vec<Diagnostic>| {
        if by_name.contains_key(name) {
            diags.push(Diagnostic::DuplicateProducer { stream: name.to_string() });
        } else {
            by_name.insert(name.to_string(), streams.len());
            streams.push(StreamInfo {
                name: name.to_string(),
                kind: kind.to_string(),
                producer,
            });
        }
    };
    for d in &spec.inputs {
        add_stream(&d.name, &d.kind, Producer::GraphInput, &mut diags);
    }

    let mut infos: Vec<Option<CalculatorInfo>> = Vec::new();
    for (ni, n) in spec.nodes.iter().enumerate() {
        let info = registry.info(&n.calculator).cloned();
        if info.is_none() {
            diags.push(Diagnostic::UnknownCalculator {
                node: n.name.clone(),
                calculator: n.calculator.clone(),
            });
        }
        for o in &n.outputs {
            let port = info
                .as_ref()
                .and_then(|i| i.outputs.iter().position(|p| p.name == o.port));
            match (info.as_ref(), port) {
                (Some(_), None) => diags.push(Diagnostic::UnknownPort {
                    node: n.name.clone(),
                    port: o.port.clone(),
                }),
                (Some(i), Some(p)) => add_stream(&o.stream, &i.outputs[p].kind, Producer::Node { node: ni, port: p }, &mut diags),
                // Unknown calculator: still register the stream so consumers
                // do not also report it as dangling.
                (None, _) => add_stream(&o.stream, ANY_KIND, Producer::Node { node: ni, port: 0 }, &mut diags),
            }
        }
        infos.push(info);
    }
    let mut streams = streams;
    let by_name: BTreeMap<String, usize> = streams.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();

    // Inputs.
    let mut nodes = Vec::new();
    for (ni, n) in spec.nodes.iter().enumerate() {
        let Some(info) = infos[ni].clone() else {
            continue;
        };
        let mut inputs: Vec<Option<InputSlot>> = vec![None; info.inputs.len()];
        for b in &n.inputs {
            let Some(p) = info.inputs.iter().position(|p| p.name == b.port) else {
                diags.push(Diagnostic::UnknownPort {
                    node: n.name.clone(),
                    port: b.port.clone(),
                });
                continue;
            };
            match by_name.get(&b.stream) {
                None => diags.push(Diagnostic::DanglingInput {
                    node: n.name.clone(),
                    port: b.port.clone(),
                    stream: b.stream.clone(),
                }),
                Some(&s) => {
                    inputs[p] = Some(InputSlot {
                        stream: s,
                        back_edge: b.back_edge,
                    })
                }
            }
        }
        for (p, port) in info.inputs.iter().enumerate() {
            if inputs[p].is_none() && !port.optional && !n.inputs.iter().any(|b| b.port == port.name) {
                diags.push(Diagnostic::UnboundPort {
                    node: n.name.clone(),
                    port: port.name.clone(),
                });
            }
        }
        let mut outputs = vec![None; info.outputs.len()];
        for o in &n.outputs {
            if let (Some(p), Some(&s)) = (info.outputs.iter().position(|p| p.name == o.port), by_name.get(&o.stream)) {
                if streams[s].producer == (Producer::Node { node: ni, port: p }) {
                    outputs[p] = Some(s);
                }
            }
        }
        nodes.push((
            ni,
            NodeInfo {
                name: n.name.clone(),
                calculator: n.calculator.clone(),
                info,
                inputs,
                outputs,
            },
        ));
    }

    for o in &spec.outputs {
        if !by_name.contains_key(o) {
            diags.push(Diagnostic::UnknownOutput { stream: o.clone() });
        }
    }

    // Cycles over forward edges.
    let n = spec.nodes.len();
    let mut adj = vec![Vec::new(); n];
    for (ni, node) in &nodes {
        for slot in node.inputs.iter().flatten() {
            if slot.back_edge {
                continue;
            }
            if let Producer::Node { node: src, .. } = streams[slot.stream].producer {
                adj[src].push(*ni);
            }
        }
    }
    let reach: Vec<Vec<bool>> = (0..n)
        .map(|s| {
            let mut seen = vec![false; n];
            let mut stack = adj[s].clone();
            while let Some(v) = stack.pop() {
                if !seen[v] {
                    seen[v] = true;
                    stack.extend(adj[v].iter().copied());
                }
            }
            seen
        })
        .collect();
    let mut in_cycle = vec![false; n];
    for i in 0..n {
        if in_cycle[i] || !reach[i][i] {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &members {
            in_cycle[j] = true;
        }
        diags.push(Diagnostic::Cycle {
            nodes: members.iter().map(|&j| spec.nodes[j].name.clone()).collect(),
        });
    }

    // Resolve wildcard output kinds from a single wildcard input, then
    // check every binding.
    if !in_cycle.iter().any(|&c| c) {
        for _ in 0..=n {
            let mut changed = false;
            for (_, node) in &nodes {
                let wild_inputs: Vec<&str> = node
                    .info
                    .inputs
                    .iter()
                    .zip(&node.inputs)
                    .filter(|(p, _)| p.kind == ANY_KIND)
                    .filter_map(|(_, s)| s.map(|s| streams[s.stream].kind.as_str()))
                    .collect();
                let [k] = wild_inputs.as_slice() else {
                    continue;
                };
                let k = k.to_string();
                if k == ANY_KIND {
                    continue;
                }
                for (p, out) in node.outputs.iter().enumerate() {
                    if let Some(s) = out {
                        if node.info.outputs[p].kind == ANY_KIND && streams[*s].kind != k {
                            streams[*s].kind = k.clone();
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }
    for (_, node) in &nodes {
        for (p, slot) in node.inputs.iter().enumerate() {
            let Some(slot) = slot else { continue };
            let expected = &node.info.inputs[p].kind;
            let found = &streams[slot.stream].kind;
            if !kinds_match(expected, found) {
                diags.push(Diagnostic::TypeMismatch {
                    node: node.name.clone(),
                    port: node.info.inputs[p].name.clone(),
                    stream: streams[slot.stream].name.clone(),
                    expected: expected.clone(),
                    found: found.clone(),
                });
            }
        }
    }

    if !diags.is_empty() {
        return Err(GraphError::Invalid(diags));
    }
    let outputs = spec.outputs.iter().map(|o| by_name[o]).collect();
    Ok(ValidatedGraph {
        spec: spec.clone(),
        nodes: nodes.into_iter().map(|(_, n)| n).collect(),
        streams,
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{base_registry, parse_graph, CalculatorInfo, FirePolicy, PortSpec};
    use super::*;

    fn registry() -> CalculatorRegistry {
        let mut r = base_registry();
        r.register(
            "IntToText",
            CalculatorInfo {
                inputs: vec![PortSpec::required("in", "int")],
                outputs: vec![PortSpec::required("out", "text")],
                policy: FirePolicy::AllRequired,
            },
            || Box::new(crate::graph::PassThroughCalculator),
        );
        r
    }

    fn check(text: &str) -> Vec<Diagnostic> {
        match validate_graph(&parse_graph(text).unwrap(), &registry()) {
            Ok(_) => Vec::new(),
            Err(e) => e.diagnostics().to_vec(),
        }
    }

    #[test]
    fn accepts_chain() {
        assert!(check("input a: int\noutput c\nnode p: PassThrough\n in in <- a\n out out -> b\nnode t: IntToText\n in in <- b\n out out -> c\n").is_empty());
    }

    #[test]
    fn flags_cycle_without_back_edge() {
        let d = check("input a: int\nnode x: Gate\n in data <- a\n in allow <- y_out\n out out -> x_out\nnode y: PassThrough\n in in <- x_out\n out out -> y_out\n");
        assert!(d.iter().any(|d| matches!(d, Diagnostic::Cycle { nodes } if nodes.len() == 2)), "{d:?}");
    }

    #[test]
    fn back_edge_breaks_cycle() {
        let d = check("input a: int\ninput ok: bool\nnode x: Gate\n in data <- a\n in allow <- ok\n out out -> x_out\nnode y: PassThrough\n in in <- x_out [back]\n out out -> y_out\n");
        assert!(d.is_empty(), "{d:?}");
    }

    #[test]
    fn flags_dangling_unknown_and_types() {
        let d = check("input a: text\nnode t: IntToText\n in in <- a\n out out -> b\nnode q: Nope\n in x <- b\nnode r: PassThrough\n in in <- missing\n out out -> z\noutput gone\n");
        assert!(d.iter().any(|d| matches!(d, Diagnostic::TypeMismatch { .. })));
        assert!(d.iter().any(|d| matches!(d, Diagnostic::UnknownCalculator { .. })));
        assert!(d.iter().any(|d| matches!(d, Diagnostic::DanglingInput { stream, .. } if stream == "missing")));
        assert!(d.iter().any(|d| matches!(d, Diagnostic::UnknownOutput { .. })));
    }

    #[test]
    fn wildcard_kind_propagates() {
        // Gate forwards an int; IntToText accepts it, a second IntToText fed
        // with text does not.
        let d = check("input a: int\ninput ok: bool\nnode g: Gate\n in data <- a\n in allow <- ok\n out out -> ga\nnode t: IntToText\n in in <- ga\n out out -> txt\nnode g2: PassThrough\n in in <- txt\n out out -> t2\nnode bad: IntToText\n in in <- t2\n out out -> t3\n");
        assert_eq!(d.len(), 1, "{d:?}");
        assert!(matches!(&d[0], Diagnostic::TypeMismatch { node, .. } if node == "bad"));
    }

    #[test]
    fn unbound_required_port() {
        let d = check("node t: IntToText\n out out -> b\n");
        assert!(matches!(&d[0], Diagnostic::UnboundPort { .. }));
    }
}
