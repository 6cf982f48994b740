//! `ltcgif`: prep videos, serve them, and generate event-conditioned GIFs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use ltcgif::gif::GifSpec;
use ltcgif::origin::{self, FaultPlan, ServeOptions};
use ltcgif::pipeline::{self, Mode, PipelineConfig};
use ltcgif::prep::{self, SyntheticPattern, DEFAULT_SEGMENT_DURATION};
use ltcgif::scorer::{MockBackend, MockSchedule, OnnxBackend, OutputActivation, PreprocessSpec, DEFAULT_THRESHOLD};
use ltcgif::transcode::Transcoder;
use ltcgif::{ContainerGeometry, EventQuery, LabelSet, ScorerBackend, SelectionManifest};

#[derive(Debug, Parser)]
#[command(name = "ltcgif", version, about = "Event-conditioned GIFs from thumbnail containers")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment a video and build its sprite sheets, playlist and storyboard.
    Prep(PrepArgs),
    /// Write a synthetic test video (one palette color per second).
    Synth(SynthArgs),
    /// Serve prepped videos over HTTP.
    Serve(ServeArgs),
    /// Select matching moments of a served video and render GIFs.
    Generate(GenerateArgs),
    /// Compare thumbnail-based and frame-based runs with a mock scorer.
    Bench(BenchArgs),
    /// Inspect selection manifests.
    #[command(subcommand)]
    Manifest(ManifestCommand),
}

#[derive(Debug, Args)]
struct PrepArgs {
    #[arg(long)]
    input: PathBuf,
    /// Video directory to create, e.g. <root>/<video-id>.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEGMENT_DURATION)]
    segment_duration: f64,
    /// Tile size, WIDTHxHEIGHT.
    #[arg(long, default_value = "160x90", value_parser = parse_size)]
    tile: (u32, u32),
    /// Sheet grid, COLSxROWS.
    #[arg(long, default_value = "5x5", value_parser = parse_size)]
    grid: (u32, u32),
    /// Seconds between thumbnails.
    #[arg(long, default_value_t = 1.0)]
    interval: f64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long, default_value = "320x180", value_parser = parse_size)]
    size: (u32, u32),
    /// Per-pixel noise amplitude.
    #[arg(long, default_value_t = 6)]
    noise: u8,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Directory holding one prepped directory per video id.
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// JSON object mapping path patterns to forced status sequences.
    #[arg(long)]
    fault_plan: Option<PathBuf>,
    /// Append the request log here as JSON lines.
    #[arg(long)]
    log_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// TOML file with defaults for any of the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    video: Option<String>,
    /// Comma-separated event labels.
    #[arg(long, value_delimiter = ',')]
    events: Option<Vec<String>>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    mode: Option<Mode>,
    /// ONNX classifier; labels are read from the `.labels` file beside it.
    #[arg(long, conflicts_with = "mock")]
    model: Option<PathBuf>,
    /// Mock score schedule (`index label:score ...` per line).
    #[arg(long)]
    mock: Option<PathBuf>,
    /// Label file overriding the model sidecar or the built-in labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Model input size, WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_size)]
    input_size: Option<(u32, u32)>,
    /// Model emits logits; apply softmax.
    #[arg(long)]
    softmax: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_gifs: Option<usize>,
    #[arg(long)]
    fb_stride: Option<u64>,
    #[arg(long)]
    gif_fps: Option<u32>,
    #[arg(long)]
    gif_width: Option<u32>,
    /// Report CSV path (default: <out>/<video>_<mode>_report.csv).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    base_url: Option<String>,
    video: Option<String>,
    events: Option<Vec<String>>,
    threshold: Option<f64>,
    mode: Option<Mode>,
    model: Option<PathBuf>,
    mock: Option<PathBuf>,
    labels: Option<PathBuf>,
    input_size: Option<[u32; 2]>,
    softmax: Option<bool>,
    out: Option<PathBuf>,
    max_gifs: Option<usize>,
    fb_stride: Option<u64>,
    prefetch_window: Option<usize>,
    gif: Option<GifSpec>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    base_url: String,
    #[arg(long)]
    video: String,
    #[arg(long, value_delimiter = ',', required = true)]
    events: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    mock: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Injected cost per inference, milliseconds.
    #[arg(long, default_value_t = 5.0)]
    cost_ms: f64,
    #[arg(long, default_value_t = 1)]
    fb_stride: u64,
    #[arg(long, default_value = "bench_out")]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ManifestCommand {
    /// Validate a manifest and print its entries.
    Show { file: PathBuf },
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected AxB, got {s:?}"))?;
    let n = |v: &str| v.trim().parse::<u32>().ok().filter(|n| *n > 0).ok_or_else(|| format!("bad number {v:?} in {s:?}"));
    Ok((n(a)?, n(b)?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LTCGIF_LOG", "info")).init();
    // clap exits with 2 on usage errors and 0 for --help
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Prep(a) => cmd_prep(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Manifest(ManifestCommand::Show { file }) => cmd_manifest_show(&file),
    }
}

fn cmd_prep(a: PrepArgs) -> Result<()> {
    let geometry = ContainerGeometry::new(a.grid.0, a.grid.1, a.tile.0, a.tile.1, a.interval)?;
    let meta = prep::prep(&Transcoder::locate(), &a.input, &a.out, a.segment_duration, geometry)?;
    let thumbs = geometry.thumbnail_count(meta.duration);
    println!(
        "{}: duration {:.3}s, {} segments, {} thumbnails, {} containers",
        a.out.display(),
        meta.duration,
        meta.segment_count,
        thumbs,
        geometry.container_count(thumbs)
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let pattern = SyntheticPattern {
        width: a.size.0,
        height: a.size.1,
        noise_amplitude: a.noise,
    };
    let path = prep::synthesize_test_video(&Transcoder::locate(), a.duration, a.fps, pattern, &a.out)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let fault_plan = a.fault_plan.as_deref().map(FaultPlan::from_file).transpose()?;
    let server = origin::serve(
        &a.root,
        &format!("{}:{}", a.bind, a.port),
        ServeOptions {
            fault_plan,
            log_file: a.log_file,
            workers: None,
        },
    )?;
    println!("serving {} at {}", a.root.display(), server.base_url());
    server.wait();
    Ok(())
}

fn load_labels(path: Option<&Path>) -> Result<Option<LabelSet>> {
    path.map(|p| LabelSet::from_file(p).map_err(Into::into)).transpose()
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let file: FileConfig = match &a.config {
        Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => FileConfig::default(),
    };
    let base_url = a.base_url.or(file.base_url).ok_or_else(|| anyhow!("--base-url is required"))?;
    let video = a.video.or(file.video).ok_or_else(|| anyhow!("--video is required"))?;
    let events = a.events.or(file.events).ok_or_else(|| anyhow!("--events is required"))?;
    let threshold = a.threshold.or(file.threshold).unwrap_or(DEFAULT_THRESHOLD);
    let mode = a.mode.or(file.mode).unwrap_or(Mode::Ltc);
    let out = a.out.or(file.out).unwrap_or_else(|| PathBuf::from("out"));
    let label_override = load_labels(a.labels.or(file.labels).as_deref())?;

    // a flag for one backend overrides the config file's choice of the other
    let (model, mock) = match (a.model, a.mock) {
        (Some(m), None) => (Some(m), None),
        (None, Some(s)) => (None, Some(s)),
        _ => (file.model, file.mock),
    };
    let mut backend: Box<dyn ScorerBackend> = match (model, mock) {
        (Some(model), None) => {
            let (w, h) = a.input_size.or(file.input_size.map(|[w, h]| (w, h))).unwrap_or((244, 244));
            let spec = PreprocessSpec::default().with_target(w, h);
            let activation = if a.softmax || file.softmax.unwrap_or(false) {
                OutputActivation::Softmax
            } else {
                OutputActivation::Probabilities
            };
            let labels = match label_override {
                Some(l) => l,
                None => LabelSet::from_file(&ltcgif::scorer::sidecar_labels_path(&model))?,
            };
            Box::new(OnnxBackend::load(&model, labels, spec, activation)?)
        }
        (None, Some(schedule)) => {
            let labels = label_override.unwrap_or_else(LabelSet::sports_events);
            let schedule = MockSchedule::from_file(&schedule, &labels)?;
            Box::new(MockBackend::new(labels, schedule))
        }
        (Some(_), Some(_)) => bail!("--model and --mock are mutually exclusive"),
        (None, None) => bail!("one of --model or --mock is required"),
    };

    let query = EventQuery::new(backend.labels(), &events, threshold)?;
    let mut config = PipelineConfig::new(&base_url, &video, query, mode, &out);
    if let Some(s) = a.fb_stride.or(file.fb_stride) {
        config.fb_stride = s;
    }
    config.max_gifs = a.max_gifs.or(file.max_gifs);
    if let Some(w) = file.prefetch_window {
        config.prefetch_window = w;
    }
    if let Some(g) = file.gif {
        config.gif_spec = g;
    }
    if let Some(f) = a.gif_fps {
        config.gif_spec.output_fps = f;
    }
    if let Some(w) = a.gif_width {
        config.gif_spec.scale_width = w;
    }

    let report = pipeline::run(&config, backend.as_mut())?;
    let csv = a
        .report
        .unwrap_or_else(|| out.join(format!("{video}_{mode}_report.csv")));
    pipeline::write_csv(&csv, &[&report]).with_context(|| format!("writing {}", csv.display()))?;
    print!("{}", report.summary());
    println!("manifest {}", report.manifest_path.display());
    for gif in &report.gifs {
        println!("gif {}", gif.display());
    }
    println!("report {}", csv.display());
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    if !(a.cost_ms.is_finite() && a.cost_ms >= 0.0) {
        bail!("--cost-ms must be non-negative");
    }
    let labels = load_labels(a.labels.as_deref())?.unwrap_or_else(LabelSet::sports_events);
    let schedule = MockSchedule::from_file(&a.mock, &labels)?;
    let query = EventQuery::new(&labels, &a.events, a.threshold)?;
    let ltc = PipelineConfig::new(&a.base_url, &a.video, query.clone(), Mode::Ltc, &a.out.join("ltc"));
    let mut fb = PipelineConfig::new(&a.base_url, &a.video, query, Mode::Fb, &a.out.join("fb"));
    fb.fb_stride = a.fb_stride;
    let cost = Duration::from_secs_f64(a.cost_ms / 1000.0);
    let bench = pipeline::bench_compare(&ltc, &fb, &labels, &schedule, cost)?;

    let csv = a.csv.unwrap_or_else(|| a.out.join("bench.csv"));
    fs::create_dir_all(&a.out)?;
    fs::write(&csv, bench.csv()).with_context(|| format!("writing {}", csv.display()))?;
    print!("{}", bench.ltc.summary());
    print!("{}", bench.fb.summary());
    println!(
        "inference ratio {:.3}, wall-clock ratio {:.3} at {:.3} ms/inference",
        bench.inference_ratio,
        bench.wall_clock_ratio,
        a.cost_ms
    );
    println!("report {}", csv.display());
    Ok(())
}

fn cmd_manifest_show(file: &Path) -> Result<()> {
    let bytes = fs::read(file).with_context(|| format!("reading {}", file.display()))?;
    let m = SelectionManifest::from_bytes(&bytes).with_context(|| format!("parsing {}", file.display()))?;
    println!(
        "video {}  events {}  threshold {}",
        m.video_id,
        m.query.events.join(","),
        m.query.threshold
    );
    println!("{:>6}  {:>10}  {:>7}  {:>6}  event", "index", "time_s", "score", "seg");
    for e in &m.entries {
        println!(
            "{:>6}  {:>10.3}  {:>7.4}  {:>6}  {}",
            e.global_index, e.timestamp, e.score, e.segment_index, e.event
        );
    }
    let segments = ltcgif::selection::dedupe_segments(&m);
    println!(
        "{} entries, {} segments: {}",
        m.entries.len(),
        segments.len(),
        segments.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    );
    Ok(())
}
