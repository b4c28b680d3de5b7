//! Line-oriented text form of a [`GraphSpec`].
//!
//! ```text
//! # comment
//! input scene: HandScene
//! output report
//! node detector: PalmDetector
//!   in scene <- gated_scene
//!   in state <- tracker_state [back]
//!   out detections -> detections
//! ```

use super::{GraphError, GraphSpec, InputBinding, NodeSpec, OutputBinding, StreamDecl};

fn err(line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse {
        line,
        message: message.into(),
    }
}

fn ident(s: &str, line: usize, what: &str) -> Result<String, GraphError> {
    let s = s.trim();
    let ok = !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '*' || c == '.');
    if ok {
        Ok(s.to_string())
    } else {
        Err(err(line, format!("bad {what} `{s}`")))
    }
}

/// `a: b`
fn pair<'a>(rest: &'a str, line: usize, what: &str) -> Result<(&'a str, &'a str), GraphError> {
    rest.split_once(':')
        .ok_or_else(|| err(line, format!("expected `<name>: <{what}>`")))
}

pub fn parse_graph(text: &str) -> Result<GraphSpec, GraphError> {
    let mut spec = GraphSpec::default();
    let mut current: Option<NodeSpec> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (keyword, rest) = content
            .split_once(char::is_whitespace)
            .map(|(k, r)| (k, r.trim()))
            .unwrap_or((content, ""));
        match keyword {
            "input" => {
                let (name, kind) = pair(rest, line, "kind")?;
                spec.inputs.push(StreamDecl {
                    name: ident(name, line, "stream name")?,
                    kind: ident(kind, line, "kind")?,
                });
            }
            "output" => spec.outputs.push(ident(rest, line, "stream name")?),
            "node" => {
                let (name, calc) = pair(rest, line, "calculator")?;
                if let Some(done) = current.take() {
                    spec.nodes.push(done);
                }
                current = Some(NodeSpec {
                    name: ident(name, line, "node name")?,
                    calculator: ident(calc, line, "calculator")?,
                    inputs: Vec::new(),
                    outputs: Vec::new(),
                });
            }
            "in" => {
                let node = current
                    .as_mut()
                    .ok_or_else(|| err(line, "`in` outside a node"))?;
                let (port, stream) = rest
                    .split_once("<-")
                    .ok_or_else(|| err(line, "expected `in <port> <- <stream>`"))?;
                let mut stream = stream.trim();
                let mut back_edge = false;
                if let Some(s) = stream.strip_suffix("[back]") {
                    stream = s.trim();
                    back_edge = true;
                }
                node.inputs.push(InputBinding {
                    port: ident(port, line, "port")?,
                    stream: ident(stream, line, "stream name")?,
                    back_edge,
                });
            }
            "out" => {
                let node = current
                    .as_mut()
                    .ok_or_else(|| err(line, "`out` outside a node"))?;
                let (port, stream) = rest
                    .split_once("->")
                    .ok_or_else(|| err(line, "expected `out <port> -> <stream>`"))?;
                node.outputs.push(OutputBinding {
                    port: ident(port, line, "port")?,
                    stream: ident(stream, line, "stream name")?,
                });
            }
            other => return Err(err(line, format!("unknown keyword `{other}`"))),
        }
    }
    if let Some(done) = current {
        spec.nodes.push(done);
    }
    Ok(spec)
}
