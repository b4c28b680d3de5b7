use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::validate::Producer;
use super::{Calculator, CalculatorRegistry, FirePolicy, GraphError, Packet, ValidatedGraph};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub threads: usize,
    /// Timestamps that may be in progress at once.
    pub max_in_flight: usize,
    /// Picks among ready nodes at random, to exercise other interleavings.
    pub shuffle_seed: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).clamp(1, 4);
        Self {
            threads,
            max_in_flight: 4,
            shuffle_seed: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct NodeStats {
    pub name: String,
    pub calculator: String,
    /// Processing time of each firing, in timestamp order.
    pub durations: Vec<Duration>,
}

impl NodeStats {
    pub fn fired(&self) -> usize {
        self.durations.len()
    }
}

#[derive(Debug, Clone)]
pub struct GraphRun {
    pub outputs: BTreeMap<String, Vec<Packet>>,
    pub nodes: Vec<NodeStats>,
    pub timestamps: Vec<i64>,
    pub wall: Duration,
}

impl GraphRun {
    pub fn output(&self, stream: &str) -> &[Packet] {
        self.outputs.get(stream).map_or(&[], |v| v.as_slice())
    }

    pub fn node(&self, name: &str) -> Option<&NodeStats> {
        self.nodes.iter().find(|n| n.name == name)
    }
}

struct State {
    next: Vec<usize>,
    busy: Vec<bool>,
    values: Vec<Vec<Option<Packet>>>,
    settled: Vec<usize>,
    durations: Vec<Vec<Duration>>,
    error: Option<GraphError>,
    rng: Option<ChaCha8Rng>,
}

struct Task {
    node: usize,
    frame: usize,
    inputs: Vec<Option<Packet>>,
}

impl State {
    fn done(&self, frames: usize) -> bool {
        self.next.iter().all(|&f| f >= frames)
    }

    fn latest_before(&self, stream: usize, frame: usize) -> Option<Packet> {
        self.values[stream][..frame].iter().rev().find_map(|p| p.clone())
    }

    fn take_task(&mut self, g: &ValidatedGraph, frames: usize, in_flight: usize) -> Option<Task> {
        let floor = self.next.iter().copied().min().unwrap_or(frames);
        let ready: Vec<usize> = (0..g.nodes.len())
            .filter(|&i| {
                let f = self.next[i];
                !self.busy[i]
                    && f < frames
                    && f < floor + in_flight
                    && g.nodes[i].inputs.iter().flatten().all(|s| {
                        if s.back_edge {
                            self.settled[s.stream] >= f
                        } else {
                            self.settled[s.stream] > f
                        }
                    })
            })
            .collect();
        let node = match (&mut self.rng, ready.as_slice()) {
            (_, []) => return None,
            (Some(rng), r) => r[rng.random_range(0..r.len())],
            (None, r) => r[0],
        };
        let frame = self.next[node];
        self.busy[node] = true;
        let inputs = g.nodes[node]
            .inputs
            .iter()
            .map(|slot| {
                slot.and_then(|s| {
                    if s.back_edge {
                        self.latest_before(s.stream, frame)
                    } else {
                        self.values[s.stream][frame].clone()
                    }
                })
            })
            .collect();
        Some(Task { node, frame, inputs })
    }
}

fn should_fire(policy: FirePolicy, g: &ValidatedGraph, node: usize, inputs: &[Option<Packet>]) -> bool {
    let info = &g.nodes[node];
    let forward: Vec<(bool, bool)> = info
        .inputs
        .iter()
        .zip(&info.info.inputs)
        .zip(inputs)
        .filter(|((slot, _), _)| !slot.is_some_and(|s| s.back_edge))
        .map(|((_, port), v)| (port.optional, v.is_some()))
        .collect();
    if forward.is_empty() {
        return true;
    }
    match policy {
        FirePolicy::AnyPresent => forward.iter().any(|&(_, present)| present),
        FirePolicy::AllRequired => {
            forward.iter().any(|&(_, present)| present)
                && forward.iter().all(|&(optional, present)| optional || present)
        }
    }
}

/// Runs `graph` over the given input streams. Each input stream's packets
/// must have strictly increasing timestamps; the run covers the union of
/// all input timestamps.
pub fn run_graph(
    graph: &ValidatedGraph,
    registry: &CalculatorRegistry,
    inputs: BTreeMap<String, Vec<Packet>>,
    options: &RunOptions,
) -> Result<GraphRun, GraphError> {
    for (name, packets) in &inputs {
        match graph.stream_index(name).map(|s| graph.streams[s].producer) {
            Some(Producer::GraphInput) => {}
            _ => return Err(GraphError::Input(format!("`{name}` is not a graph input stream"))),
        }
        if let Some(p) = packets.iter().find(|p| p.timestamp < 0) {
            return Err(GraphError::Input(format!("negative timestamp {} on `{name}`", p.timestamp)));
        }
        if let Some(w) = packets.windows(2).find(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(GraphError::Input(format!(
                "timestamps on `{name}` must increase ({} then {})",
                w[0].timestamp, w[1].timestamp
            )));
        }
    }
    let timestamps: Vec<i64> = inputs
        .values()
        .flatten()
        .map(|p| p.timestamp)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let frames = timestamps.len();
    let frame_of: BTreeMap<i64, usize> = timestamps.iter().enumerate().map(|(i, &t)| (t, i)).collect();

    let mut values = vec![vec![None; frames]; graph.streams.len()];
    let mut settled = vec![0; graph.streams.len()];
    for (s, info) in graph.streams.iter().enumerate() {
        if info.producer == Producer::GraphInput {
            settled[s] = frames;
        }
    }
    for (name, packets) in inputs {
        let s = graph.stream_index(&name).expect("checked above");
        for p in packets {
            let f = frame_of[&p.timestamp];
            values[s][f] = Some(p);
        }
    }

    let calculators: Vec<Mutex<Box<dyn Calculator>>> = graph
        .nodes
        .iter()
        .map(|n| {
            registry
                .create(&n.calculator)
                .map(Mutex::new)
                .ok_or_else(|| GraphError::Input(format!("calculator `{}` is not registered", n.calculator)))
        })
        .collect::<Result<_, _>>()?;

    let n_nodes = graph.nodes.len();
    let state = Mutex::new(State {
        next: vec![0; n_nodes],
        busy: vec![false; n_nodes],
        values,
        settled,
        durations: vec![Vec::new(); n_nodes],
        error: None,
        rng: options.shuffle_seed.map(ChaCha8Rng::seed_from_u64),
    });
    let wake = Condvar::new();
    let in_flight = options.max_in_flight.max(1);
    let started = Instant::now();

    let worker = || loop {
        let (task, yields) = {
            let mut st = state.lock().expect("scheduler lock");
            loop {
                if st.error.is_some() || st.done(frames) {
                    wake.notify_all();
                    return;
                }
                if let Some(t) = st.take_task(graph, frames, in_flight) {
                    let yields = st.rng.as_mut().map_or(0, |r| r.random_range(0..3));
                    break (t, yields);
                }
                if !st.busy.iter().any(|&b| b) {
                    st.error = Some(GraphError::Input("graph cannot make progress".into()));
                    wake.notify_all();
                    return;
                }
                st = wake.wait(st).expect("scheduler lock");
            }
        };
        for _ in 0..yields {
            std::thread::yield_now();
        }

        let node = &graph.nodes[task.node];
        let ts = timestamps[task.frame];
        let fire = should_fire(node.info.policy, graph, task.node, &task.inputs);
        let mut elapsed = None;
        let result = if fire {
            let t0 = Instant::now();
            let mut calc = calculators[task.node].lock().expect("calculator lock");
            let r = catch_unwind(AssertUnwindSafe(|| calc.process(ts, &task.inputs)));
            elapsed = Some(t0.elapsed());
            match r {
                Ok(Ok(out)) if out.len() == node.outputs.len() => Ok(out),
                Ok(Ok(out)) => Err(format!(
                    "returned {} outputs, expected {}",
                    out.len(),
                    node.outputs.len()
                )),
                Ok(Err(e)) => Err(e.to_string()),
                Err(_) => Err("calculator panicked".to_string()),
            }
        } else {
            Ok(vec![None; node.outputs.len()])
        };

        let mut st = state.lock().expect("scheduler lock");
        match result {
            Ok(out) => {
                for (slot, payload) in node.outputs.iter().zip(out) {
                    if let Some(s) = slot {
                        st.values[*s][task.frame] = payload.map(|payload| Packet { timestamp: ts, payload });
                        st.settled[*s] = task.frame + 1;
                    }
                }
                if let Some(d) = elapsed {
                    st.durations[task.node].push(d);
                }
            }
            Err(message) => {
                if st.error.is_none() {
                    st.error = Some(GraphError::NodeFailed {
                        node: node.name.clone(),
                        timestamp: ts,
                        message,
                    });
                }
            }
        }
        st.next[task.node] += 1;
        st.busy[task.node] = false;
        wake.notify_all();
    };

    std::thread::scope(|scope| {
        for _ in 0..options.threads.max(1) {
            scope.spawn(&worker);
        }
    });

    let st = state.into_inner().expect("scheduler lock");
    if let Some(e) = st.error {
        return Err(e);
    }
    let outputs = graph
        .outputs
        .iter()
        .map(|&s| (graph.streams[s].name.clone(), st.values[s].iter().flatten().cloned().collect()))
        .collect();
    let nodes = graph
        .nodes
        .iter()
        .zip(st.durations)
        .map(|(n, durations)| NodeStats {
            name: n.name.clone(),
            calculator: n.calculator.clone(),
            durations,
        })
        .collect();
    Ok(GraphRun {
        outputs,
        nodes,
        timestamps,
        wall: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::{
        base_registry, parse_graph, validate_graph, CalculatorError, CalculatorInfo, Payload, PortSpec,
    };
    use super::*;
    use std::sync::Arc;

    /// Running sum: out = in + previous out.
    struct Accumulate;

    impl Calculator for Accumulate {
        fn process(&mut self, _ts: i64, inputs: &[Option<Packet>]) -> Result<Vec<Option<Payload>>, CalculatorError> {
            let x = *inputs[0].as_ref().and_then(|p| p.get::<i64>()).ok_or("no input")?;
            let prev = inputs[1].as_ref().and_then(|p| p.get::<i64>()).copied().unwrap_or(0);
            if x < 0 {
                return Err("negative".into());
            }
            let v: Payload = Arc::new(x + prev);
            Ok(vec![Some(v)])
        }
    }

    fn registry() -> CalculatorRegistry {
        let mut r = base_registry();
        r.register(
            "Accumulate",
            CalculatorInfo {
                inputs: vec![PortSpec::required("x", "int"), PortSpec::optional("prev", "int")],
                outputs: vec![PortSpec::required("sum", "int")],
                policy: FirePolicy::AllRequired,
            },
            || Box::new(Accumulate),
        );
        r
    }

    const LOOP: &str = "input x: int\noutput sum\nnode acc: Accumulate\n in x <- x\n in prev <- sum [back]\n out sum -> sum\n";

    fn ints(values: &[i64]) -> BTreeMap<String, Vec<Packet>> {
        let packets = values.iter().enumerate().map(|(i, &v)| Packet::new(i as i64 * 10, v)).collect();
        BTreeMap::from([("x".to_string(), packets)])
    }

    #[test]
    fn back_edge_sees_previous_value() {
        let r = registry();
        let g = validate_graph(&parse_graph(LOOP).unwrap(), &r).unwrap();
        for seed in 0..8 {
            let opts = RunOptions {
                threads: 3,
                max_in_flight: 4,
                shuffle_seed: Some(seed),
            };
            let run = run_graph(&g, &r, ints(&[1, 2, 3, 4]), &opts).unwrap();
            let sums: Vec<i64> = run.output("sum").iter().map(|p| *p.get::<i64>().unwrap()).collect();
            assert_eq!(sums, vec![1, 3, 6, 10]);
            let ts: Vec<i64> = run.output("sum").iter().map(|p| p.timestamp).collect();
            assert_eq!(ts, vec![0, 10, 20, 30]);
            assert_eq!(run.node("acc").unwrap().fired(), 4);
        }
    }

    #[test]
    fn failure_names_node_and_timestamp() {
        let r = registry();
        let g = validate_graph(&parse_graph(LOOP).unwrap(), &r).unwrap();
        let e = run_graph(&g, &r, ints(&[1, -1, 3]), &RunOptions::default()).unwrap_err();
        match e {
            GraphError::NodeFailed { node, timestamp, .. } => {
                assert_eq!(node, "acc");
                assert_eq!(timestamp, 10);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn rejects_non_increasing_input() {
        let r = registry();
        let g = validate_graph(&parse_graph(LOOP).unwrap(), &r).unwrap();
        let inputs = BTreeMap::from([("x".to_string(), vec![Packet::new(5, 1i64), Packet::new(5, 2i64)])]);
        assert!(matches!(run_graph(&g, &r, inputs, &RunOptions::default()), Err(GraphError::Input(_))));
    }

    #[test]
    fn gate_drops_and_downstream_skips() {
        let r = base_registry();
        let text = "input x: int\ninput ok: bool\noutput y\nnode g: Gate\n in data <- x\n in allow <- ok\n out out -> gx\nnode p: PassThrough\n in in <- gx\n out out -> y\n";
        let g = validate_graph(&parse_graph(text).unwrap(), &r).unwrap();
        let mut inputs = ints(&[5, 6, 7]);
        inputs.insert(
            "ok".into(),
            vec![Packet::new(0, true), Packet::new(10, false), Packet::new(20, true)],
        );
        let run = run_graph(&g, &r, inputs, &RunOptions::default()).unwrap();
        let ys: Vec<i64> = run.output("y").iter().map(|p| *p.get::<i64>().unwrap()).collect();
        assert_eq!(ys, vec![5, 7]);
        assert_eq!(run.node("p").unwrap().fired(), 2);
    }

    #[test]
    fn empty_input_runs_nothing() {
        let r = registry();
        let g = validate_graph(&parse_graph(LOOP).unwrap(), &r).unwrap();
        let run = run_graph(&g, &r, ints(&[]), &RunOptions::default()).unwrap();
        assert!(run.output("sum").is_empty());
    }
}
