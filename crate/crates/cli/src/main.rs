use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use handpipe::backend::{ReplayDetector, Tier};
use handpipe::config::PipelineConfig;
use handpipe::detector::generate_anchors;
use handpipe::graph::{GraphError, RunOptions};
use handpipe::io::{read_jsonl, read_scenes, round_scene, to_jsonl, track_records, RawDetectorRecord, TrackRecord};
use handpipe::metrics::{bench_pipeline, evaluate, DEFAULT_MATCH_IOU};
use handpipe::pipeline::HandPipeline;
use handpipe::render::{render_frame, RenderStyle};
use handpipe::simulator::{run_script, SequenceScript};
use handpipe::Error;

#[derive(Parser)]
#[command(name = "handpipe", version, about = "Simulated two-stage hand tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a sequence script into scene records.
    Simulate {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the script seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track hands through a scene file.
    Track {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Raw palm detector outputs to replay instead of the oracle detector.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Worker threads for the graph scheduler.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Score a track file against the scenes it came from.
    Eval {
        /// Track records.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MATCH_IOU)]
        iou: f64,
    },
    /// Time the pipeline stages on a scene file.
    Bench {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
    },
    /// Write one SVG per tracked frame.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 640)]
        size: u32,
    },
}

#[derive(Args)]
struct PipelineArgs {
    /// TOML pipeline config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph file replacing the one named by the config.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// light, full or heavy
    #[arg(long)]
    tier: Option<String>,
    #[arg(long)]
    max_hands: Option<usize>,
    /// Run the palm detector on every frame.
    #[arg(long)]
    no_gating: bool,
    #[arg(long)]
    seed: Option<u64>,
}

impl PipelineArgs {
    /// Config with CLI overrides applied, plus the graph text it names.
    fn resolve(&self) -> Result<(PipelineConfig, Option<String>)> {
        let (mut cfg, base) = match &self.config {
            Some(path) => {
                let text = read(path)?;
                let cfg = PipelineConfig::from_toml(&text).with_context(|| format!("config {}", path.display()))?;
                (cfg, path.parent().map(Path::to_path_buf))
            }
            None => (PipelineConfig::default(), None),
        };
        if let Some(t) = &self.tier {
            cfg.tier = Tier::parse(t).ok_or_else(|| Error::Config(format!("unknown tier `{t}`")))?;
        }
        if let Some(n) = self.max_hands {
            cfg.tracker.max_hands = n;
        }
        if self.no_gating {
            cfg.tracker.gating = false;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        let graph = match (&self.graph, &cfg.graph) {
            (Some(g), _) => Some(g.clone()),
            (None, Some(g)) => Some(match &base {
                Some(b) if g.is_relative() => b.join(g),
                _ => g.clone(),
            }),
            (None, None) => None,
        };
        let text = match graph {
            Some(g) => Some(fs::read_to_string(&g).map_err(|e| Error::Config(format!("cannot read graph {}: {e}", g.display())))?),
            None => None,
        };
        Ok((cfg, text))
    }

    fn build(&self) -> Result<HandPipeline> {
        let (cfg, graph) = self.resolve()?;
        Ok(HandPipeline::new(cfg.components()?, graph.as_deref())?)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn emit_json(value: serde_json::Value, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    match out {
        Some(p) => write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_scenes(path: &Path) -> Result<Vec<handpipe::types::HandScene>> {
    let scenes = read_scenes(&read(path)?).with_context(|| format!("scenes {}", path.display()))?;
    info!("{} scenes from {}", scenes.len(), path.display());
    Ok(scenes)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { script, out, seed } => {
            let mut s = SequenceScript::from_json(&read(&script)?).with_context(|| format!("script {}", script.display()))?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let scenes: Vec<_> = run_script(&s)?.iter().map(round_scene).collect();
            write(&out, &to_jsonl(&scenes)?)?;
            info!("wrote {} frames to {}", scenes.len(), out.display());
        }
        Command::Track {
            input,
            out,
            pipeline,
            detections,
            threads,
        } => {
            let (cfg, graph) = pipeline.resolve()?;
            let mut c = cfg.components()?;
            if let Some(path) = detections {
                let records: Vec<RawDetectorRecord> =
                    read_jsonl(&read(&path)?).with_context(|| format!("detections {}", path.display()))?;
                c.detector = Arc::new(ReplayDetector {
                    anchors: generate_anchors(&cfg.anchors)?,
                    thresholds: cfg.detector,
                    frames: records.into_iter().map(RawDetectorRecord::into_output).collect::<BTreeMap<_, _>>(),
                });
            }
            let p = HandPipeline::new(c, graph.as_deref())?;
            let scenes = load_scenes(&input)?;
            let mut opts = RunOptions::default();
            if let Some(t) = threads {
                if t == 0 {
                    bail!(Error::Config("--threads must be at least 1".into()));
                }
                opts.threads = t;
            }
            let run = p.run(&scenes, &opts)?;
            let records = track_records(&run.frames);
            write(&out, &to_jsonl(&records)?)?;
            let ran = records.iter().filter(|r| r.detector_ran).count();
            info!("tracked {} frames, detector ran on {ran}", records.len());
        }
        Command::Eval {
            input,
            scenes,
            out,
            iou,
        } => {
            if !(0.0..=1.0).contains(&iou) {
                bail!(Error::Config(format!("--iou {iou} outside [0, 1]")));
            }
            let tracks: Vec<TrackRecord> = read_jsonl(&read(&input)?).with_context(|| format!("tracks {}", input.display()))?;
            let scenes = load_scenes(&scenes)?;
            let report = evaluate(&scenes, &tracks, iou)?;
            emit_json(serde_json::to_value(&report)?, out.as_deref())?;
        }
        Command::Bench {
            input,
            out,
            pipeline,
            repetitions,
        } => {
            if repetitions == 0 {
                bail!(Error::Config("--repetitions must be at least 1".into()));
            }
            let p = pipeline.build()?;
            let scenes = load_scenes(&input)?;
            let report = bench_pipeline(&p, &scenes, repetitions)?;
            emit_json(serde_json::to_value(&report)?, out.as_deref())?;
        }
        Command::Render { input, out, size } => {
            let tracks: Vec<TrackRecord> = read_jsonl(&read(&input)?).with_context(|| format!("tracks {}", input.display()))?;
            fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
            let style = RenderStyle {
                width: size,
                height: size,
                ..RenderStyle::default()
            };
            for (i, t) in tracks.iter().enumerate() {
                write(&out.join(format!("frame_{i:05}.svg")), render_frame(t, &style).as_bytes())?;
            }
            info!("rendered {} frames into {}", tracks.len(), out.display());
        }
    }
    Ok(())
}

/// 2 bad input data, 3 bad config or graph, 4 inputs that disagree.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Format(_)) => 2,
        Some(Error::Config(_)) => 3,
        Some(Error::Graph(GraphError::Invalid(_) | GraphError::Parse { .. })) => 3,
        Some(Error::Mismatch(_) | Error::LengthMismatch { .. }) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HANDPIPE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
