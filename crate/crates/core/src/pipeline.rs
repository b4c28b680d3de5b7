//! The hand-tracking graph: calculators wrapping the tracker phases, the
//! palm detector and the gesture recognizer.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::backend::{LandmarkBackend, PalmDetector};
use crate::error::{Error, Result};
use crate::gesture::{recognize, GestureConfig, GestureLabel};
use crate::graph::{
    base_registry, parse_graph, run_graph, validate_graph, Calculator, CalculatorError, CalculatorInfo,
    CalculatorRegistry, FirePolicy, GraphRun, Packet, Payload, PortSpec, RunOptions, ValidatedGraph,
};
use crate::tracker::{track_sequence, LandmarkPhase, TrackStepReport, TrackerConfig, TrackerState};
use crate::types::{Detection, HandScene};

/// Text of the shipped hand-tracking graph.
pub const HAND_TRACKING_GRAPH: &str = include_str!("../graphs/hand_tracking.graph");

pub mod kind {
    pub const SCENE: &str = "HandScene";
    pub const PHASE: &str = "LandmarkPhase";
    pub const BOOL: &str = "bool";
    pub const DETECTIONS: &str = "Detections";
    pub const STATE: &str = "TrackerState";
    pub const REPORT: &str = "TrackStepReport";
    pub const GESTURES: &str = "Gestures";
}

fn input<'a, T: 'static>(inputs: &'a [Option<Packet>], i: usize, what: &str) -> std::result::Result<&'a T, CalculatorError> {
    inputs[i]
        .as_ref()
        .ok_or_else(|| format!("missing {what}"))?
        .get::<T>()
        .ok_or_else(|| format!("{what} has the wrong payload type").into())
}

fn some<T: std::any::Any + Send + Sync>(v: T) -> Option<Payload> {
    Some(Arc::new(v))
}

struct LandmarkCalculator {
    backend: Arc<dyn LandmarkBackend>,
    config: TrackerConfig,
}

impl Calculator for LandmarkCalculator {
    fn process(&mut self, _ts: i64, inputs: &[Option<Packet>]) -> std::result::Result<Vec<Option<Payload>>, CalculatorError> {
        let scene: &HandScene = input(inputs, 0, "scene")?;
        let fresh;
        let state = match &inputs[1] {
            Some(p) => p.get::<TrackerState>().ok_or("state has the wrong payload type")?,
            None => {
                fresh = TrackerState::new(self.config);
                &fresh
            }
        };
        let phase = state.observe(scene, self.backend.as_ref())?;
        let allow = phase.needs_detection();
        Ok(vec![some(phase), some(allow)])
    }
}

struct DetectorCalculator {
    detector: Arc<dyn PalmDetector>,
}

impl Calculator for DetectorCalculator {
    fn process(&mut self, _ts: i64, inputs: &[Option<Packet>]) -> std::result::Result<Vec<Option<Payload>>, CalculatorError> {
        let scene: &HandScene = input(inputs, 0, "scene")?;
        Ok(vec![some(self.detector.detect(scene)?)])
    }
}

struct TrackerUpdateCalculator {
    backend: Arc<dyn LandmarkBackend>,
}

impl Calculator for TrackerUpdateCalculator {
    fn process(&mut self, _ts: i64, inputs: &[Option<Packet>]) -> std::result::Result<Vec<Option<Payload>>, CalculatorError> {
        let phase: &LandmarkPhase = input(inputs, 0, "phase")?;
        let scene: &HandScene = input(inputs, 1, "scene")?;
        let dets = match &inputs[2] {
            Some(p) => Some(
                p.get::<Vec<Detection>>()
                    .ok_or("detections have the wrong payload type")?
                    .as_slice(),
            ),
            None => None,
        };
        let (state, report) = phase.clone().finish(dets, scene, self.backend.as_ref())?;
        Ok(vec![some(state), some(report)])
    }
}

struct GestureCalculator {
    config: GestureConfig,
}

impl Calculator for GestureCalculator {
    fn process(&mut self, _ts: i64, inputs: &[Option<Packet>]) -> std::result::Result<Vec<Option<Payload>>, CalculatorError> {
        let report: &TrackStepReport = input(inputs, 0, "report")?;
        Ok(vec![some(gestures_for(report, &self.config))])
    }
}

pub fn gestures_for(report: &TrackStepReport, config: &GestureConfig) -> Vec<GestureLabel> {
    report.outputs.iter().map(|(_, lm)| recognize(lm, config)).collect()
}

/// Models and settings shared by every calculator of one pipeline.
#[derive(Clone)]
pub struct PipelineComponents {
    pub backend: Arc<dyn LandmarkBackend>,
    pub detector: Arc<dyn PalmDetector>,
    pub tracker: TrackerConfig,
    pub gesture: GestureConfig,
}

/// Generic calculators plus the hand-tracking ones bound to `c`.
pub fn hand_tracking_registry(c: &PipelineComponents) -> CalculatorRegistry {
    let mut r = base_registry();
    let (backend, config) = (c.backend.clone(), c.tracker);
    r.register(
        "HandLandmark",
        CalculatorInfo {
            inputs: vec![PortSpec::required("scene", kind::SCENE), PortSpec::optional("state", kind::STATE)],
            outputs: vec![PortSpec::required("phase", kind::PHASE), PortSpec::required("allow", kind::BOOL)],
            policy: FirePolicy::AllRequired,
        },
        move || {
            Box::new(LandmarkCalculator {
                backend: backend.clone(),
                config,
            })
        },
    );
    let detector = c.detector.clone();
    r.register(
        "PalmDetection",
        CalculatorInfo {
            inputs: vec![PortSpec::required("scene", kind::SCENE)],
            outputs: vec![PortSpec::required("detections", kind::DETECTIONS)],
            policy: FirePolicy::AllRequired,
        },
        move || {
            Box::new(DetectorCalculator {
                detector: detector.clone(),
            })
        },
    );
    let backend = c.backend.clone();
    r.register(
        "TrackerUpdate",
        CalculatorInfo {
            inputs: vec![
                PortSpec::required("phase", kind::PHASE),
                PortSpec::required("scene", kind::SCENE),
                PortSpec::optional("detections", kind::DETECTIONS),
            ],
            outputs: vec![PortSpec::required("state", kind::STATE), PortSpec::required("report", kind::REPORT)],
            policy: FirePolicy::AllRequired,
        },
        move || {
            Box::new(TrackerUpdateCalculator {
                backend: backend.clone(),
            })
        },
    );
    let gesture = c.gesture.clone();
    r.register(
        "GestureRecognizer",
        CalculatorInfo {
            inputs: vec![PortSpec::required("report", kind::REPORT)],
            outputs: vec![PortSpec::required("gestures", kind::GESTURES)],
            policy: FirePolicy::AllRequired,
        },
        move || {
            Box::new(GestureCalculator {
                config: gesture.clone(),
            })
        },
    );
    r
}

/// Output of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub report: TrackStepReport,
    /// One label per tracked hand, in `report.outputs` order.
    pub gestures: Vec<GestureLabel>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub frames: Vec<FrameResult>,
    pub graph: GraphRun,
}

pub struct HandPipeline {
    components: PipelineComponents,
    registry: CalculatorRegistry,
    graph: ValidatedGraph,
}

impl HandPipeline {
    /// Uses the shipped graph unless `graph_text` is given.
    pub fn new(components: PipelineComponents, graph_text: Option<&str>) -> Result<Self> {
        components.tracker.validate()?;
        components.gesture.validate()?;
        let registry = hand_tracking_registry(&components);
        let spec = parse_graph(graph_text.unwrap_or(HAND_TRACKING_GRAPH))?;
        let graph = validate_graph(&spec, &registry)?;
        for (stream, k) in [("report", kind::REPORT), ("gestures", kind::GESTURES)] {
            if !spec.outputs.iter().any(|o| o == stream) || graph.stream_kind(stream) != Some(k) {
                return Err(Error::Config(format!("graph must output `{stream}` of kind {k}")));
            }
        }
        if !graph.input_names().eq(["scene"]) {
            return Err(Error::Config("graph must have the single input `scene`".into()));
        }
        Ok(Self {
            components,
            registry,
            graph,
        })
    }

    pub fn components(&self) -> &PipelineComponents {
        &self.components
    }

    pub fn graph(&self) -> &ValidatedGraph {
        &self.graph
    }

    pub fn run(&self, frames: &[HandScene], options: &RunOptions) -> Result<PipelineRun> {
        let packets = frames.iter().map(|f| Packet::new(f.timestamp_us, f.clone())).collect();
        let run = run_graph(
            &self.graph,
            &self.registry,
            BTreeMap::from([("scene".to_string(), packets)]),
            options,
        )?;
        let reports = run.output("report");
        let gestures = run.output("gestures");
        if reports.len() != frames.len() || gestures.len() != frames.len() {
            return Err(Error::Mismatch(format!(
                "graph produced {} reports and {} gesture sets for {} frames",
                reports.len(),
                gestures.len(),
                frames.len()
            )));
        }
        let frames = reports
            .iter()
            .zip(gestures)
            .map(|(r, g)| {
                Ok(FrameResult {
                    report: r
                        .get::<TrackStepReport>()
                        .ok_or_else(|| Error::Mismatch("report stream payload".into()))?
                        .clone(),
                    gestures: g
                        .get::<Vec<GestureLabel>>()
                        .ok_or_else(|| Error::Mismatch("gestures stream payload".into()))?
                        .clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PipelineRun { frames, graph: run })
    }

    /// Same computation without the graph, one frame after another.
    pub fn run_sequential(&self, frames: &[HandScene]) -> Result<Vec<FrameResult>> {
        let c = &self.components;
        let reports = track_sequence(c.tracker, frames, c.backend.as_ref(), c.detector.as_ref())?;
        Ok(reports
            .into_iter()
            .map(|report| FrameResult {
                gestures: gestures_for(&report, &c.gesture),
                report,
            })
            .collect())
    }
}
