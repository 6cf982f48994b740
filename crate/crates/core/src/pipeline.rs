//! The instrumented end-to-end run and the frame-based baseline.
//!
//! Timing is reported in six stages:
//!
//! | stage | LTC mode | FB mode |
//! |-------|----------|---------|
//! | `download_ltc` | playlist, storyboard, waiting on containers | playlist, full segment downloads |
//! | `extract_thumbnails` | JPEG decode and tile slicing | frame decode |
//! | `events` | one inference per thumbnail | one inference per `fb_stride`-th frame |
//! | `thumbnail_selection` | thresholding, manifest write | same |
//! | `download_segments` | selected segments | none (reused from the first stage) |
//! | `generate_gifs` | clip decode, GIF encode, write | same |
//!
//! Containers are prefetched while earlier ones are scored. A single lap
//! clock charges each wall-clock interval to the stage the consumer was in,
//! so time spent blocked on a container counts as `download_ltc` and the six
//! stages add up to `total`.
//!
//! `bytes_downloaded` counts media bodies only: containers and segments.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::{debug, info};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, VideoMeta};
use crate::gif::{render_clip, GifError, GifSpec};
use crate::hls::{decode_container, FetchError, HlsClient, Playlist, DEFAULT_PREFETCH_WINDOW};
use crate::scorer::{EventQuery, LabelSet, MockBackend, MockSchedule, ScoreError, ScoreRequest, ScorerBackend};
use crate::selection::{segment_picks, select, ManifestError, ScoredItem, SelectionManifest};
use crate::sprite::SpriteError;
use crate::transcode::{DecodeOptions, TranscodeError, Transcoder};

pub const CSV_HEADER: &str = "video_id,mode,download_ltc_s,extract_thumbnails_s,events_s,thumbnail_selection_s,download_segments_s,generate_gifs_s,total_s,inference_count,bytes_downloaded,gif_count";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ltc,
    Fb,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ltc => "ltc",
            Mode::Fb => "fb",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ltc" => Ok(Mode::Ltc),
            "fb" => Ok(Mode::Fb),
            other => Err(format!("unknown mode {other:?} (expected ltc or fb)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    DownloadLtc,
    ExtractThumbnails,
    Events,
    ThumbnailSelection,
    DownloadSegments,
    GenerateGifs,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::DownloadLtc,
        Stage::ExtractThumbnails,
        Stage::Events,
        Stage::ThumbnailSelection,
        Stage::DownloadSegments,
        Stage::GenerateGifs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::DownloadLtc => "download_ltc",
            Stage::ExtractThumbnails => "extract_thumbnails",
            Stage::Events => "events",
            Stage::ThumbnailSelection => "thumbnail_selection",
            Stage::DownloadSegments => "download_segments",
            Stage::GenerateGifs => "generate_gifs",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Sprite(#[from] SpriteError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Transcode(#[from] TranscodeError),
    #[error(transparent)]
    Gif(#[from] GifError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::Config(_) => None,
        }
    }
}

// Fetch failures inside the container prefetch loop.
impl From<FetchError> for PipelineError {
    fn from(e: FetchError) -> Self {
        at(Stage::DownloadLtc)(e)
    }
}

fn at<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub base_url: String,
    pub video_id: String,
    pub query: EventQuery,
    pub mode: Mode,
    /// Frame-based mode scores every `fb_stride`-th frame.
    pub fb_stride: u64,
    pub max_gifs: Option<usize>,
    pub gif_spec: GifSpec,
    pub out_dir: PathBuf,
    /// Containers fetched ahead of scoring.
    pub prefetch_window: usize,
    pub transcoder: Transcoder,
}

impl PipelineConfig {
    pub fn new(base_url: &str, video_id: &str, query: EventQuery, mode: Mode, out_dir: &Path) -> Self {
        Self {
            base_url: base_url.to_string(),
            video_id: video_id.to_string(),
            query,
            mode,
            fb_stride: 1,
            max_gifs: None,
            gif_spec: GifSpec::default(),
            out_dir: out_dir.to_path_buf(),
            prefetch_window: DEFAULT_PREFETCH_WINDOW,
            transcoder: Transcoder::locate(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.fb_stride == 0 {
            return Err(PipelineError::Config("fb_stride must be at least 1".into()));
        }
        if self.video_id.is_empty() {
            return Err(PipelineError::Config("video id is empty".into()));
        }
        if self.prefetch_window == 0 {
            return Err(PipelineError::Config("prefetch window must be at least 1".into()));
        }
        self.query.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.gif_spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub download_ltc: f64,
    pub extract_thumbnails: f64,
    pub events: f64,
    pub thumbnail_selection: f64,
    pub download_segments: f64,
    pub generate_gifs: f64,
    pub total: f64,
    pub inference_count: u64,
    pub bytes_downloaded: u64,
}

impl StageTimings {
    pub fn get(&self, stage: Stage) -> f64 {
        match stage {
            Stage::DownloadLtc => self.download_ltc,
            Stage::ExtractThumbnails => self.extract_thumbnails,
            Stage::Events => self.events,
            Stage::ThumbnailSelection => self.thumbnail_selection,
            Stage::DownloadSegments => self.download_segments,
            Stage::GenerateGifs => self.generate_gifs,
        }
    }

    pub fn stage_sum(&self) -> f64 {
        Stage::ALL.iter().map(|s| self.get(*s)).sum()
    }
}

/// Charges elapsed wall time to stages, one lap at a time.
#[derive(Debug)]
pub struct StageClock {
    start: Instant,
    last: Instant,
    spent: [Duration; 6],
}

impl StageClock {
    pub fn start() -> Self {
        let now = Instant::now();
        Self {
            start: now,
            last: now,
            spent: [Duration::ZERO; 6],
        }
    }

    /// Charges the time since the previous lap to `stage`.
    pub fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        self.spent[stage as usize] += now - self.last;
        self.last = now;
    }

    /// Stage totals, and the run total up to the last lap.
    pub fn timings(&self) -> StageTimings {
        let s = |stage: Stage| self.spent[stage as usize].as_secs_f64();
        StageTimings {
            download_ltc: s(Stage::DownloadLtc),
            extract_thumbnails: s(Stage::ExtractThumbnails),
            events: s(Stage::Events),
            thumbnail_selection: s(Stage::ThumbnailSelection),
            download_segments: s(Stage::DownloadSegments),
            generate_gifs: s(Stage::GenerateGifs),
            total: (self.last - self.start).as_secs_f64(),
            inference_count: 0,
            bytes_downloaded: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigSummary {
    pub base_url: String,
    pub video_id: String,
    pub mode: Mode,
    pub events: Vec<String>,
    pub threshold: f64,
    pub fb_stride: u64,
    pub max_gifs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ConfigSummary,
    pub timings: StageTimings,
    pub manifest: SelectionManifest,
    pub manifest_path: PathBuf,
    pub gifs: Vec<PathBuf>,
    pub meta: VideoMeta,
}

impl RunReport {
    pub fn csv_row(&self) -> String {
        let t = &self.timings;
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            self.config.video_id,
            self.config.mode,
            t.download_ltc,
            t.extract_thumbnails,
            t.events,
            t.thumbnail_selection,
            t.download_segments,
            t.generate_gifs,
            t.total,
            t.inference_count,
            t.bytes_downloaded,
            self.gifs.len()
        )
    }

    /// Human-readable summary, including how stage time is attributed.
    pub fn summary(&self) -> String {
        let t = &self.timings;
        let mut s = format!(
            "# {} mode, video {}; stages: wall time of the consumer's critical path (blocked prefetch counts as download_ltc)\n",
            self.config.mode, self.config.video_id
        );
        for stage in Stage::ALL {
            s.push_str(&format!("{:<20} {:>10.3}s\n", stage.name(), t.get(stage)));
        }
        s.push_str(&format!("{:<20} {:>10.3}s\n", "total", t.total));
        s.push_str(&format!(
            "inferences {}, bytes {}, manifest entries {}, gifs {}\n",
            t.inference_count,
            t.bytes_downloaded,
            self.manifest.entries.len(),
            self.gifs.len()
        ));
        s
    }
}

/// Writes the CSV header and one row per report.
pub fn write_csv(path: &Path, reports: &[&RunReport]) -> std::io::Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn gif_file_name(video_id: &str, segment_index: u64, event: &str) -> String {
    format!("{video_id}_{segment_index}_{event}.gif")
}

pub fn manifest_file_name(video_id: &str, mode: Mode) -> String {
    format!("{video_id}_{mode}.manifest")
}

/// Runs the pipeline in `config.mode` with `backend` as the classifier.
pub fn run(config: &PipelineConfig, backend: &mut dyn ScorerBackend) -> Result<RunReport, PipelineError> {
    config.validate()?;
    for event in &config.query.events {
        backend.labels().resolve(event).map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    fs::create_dir_all(&config.out_dir).map_err(|source| PipelineError::Config(format!("{}: {source}", config.out_dir.display())))?;

    let mut clock = StageClock::start();
    let client = HlsClient::new(&config.base_url);
    let playlist = client.fetch_playlist(&config.video_id).map_err(at(Stage::DownloadLtc))?;
    let meta = playlist.video_meta().map_err(at(Stage::DownloadLtc))?;
    clock.lap(Stage::DownloadLtc);

    let mut run = Run {
        config,
        client: &client,
        playlist: &playlist,
        meta,
        clock,
        scored: Vec::new(),
        inference_count: 0,
        media_bytes: 0,
        segment_cache: BTreeMap::new(),
    };
    match config.mode {
        Mode::Ltc => run.score_containers(backend)?,
        Mode::Fb => run.score_frames(backend)?,
    }
    run.finish(backend.labels())
}

struct Run<'a> {
    config: &'a PipelineConfig,
    client: &'a HlsClient,
    playlist: &'a Playlist,
    meta: VideoMeta,
    clock: StageClock,
    scored: Vec<ScoredItem>,
    inference_count: u64,
    media_bytes: u64,
    segment_cache: BTreeMap<u64, Vec<u8>>,
}

impl Run<'_> {
    fn score_containers(&mut self, backend: &mut dyn ScorerBackend) -> Result<(), PipelineError> {
        let storyboard = &self.playlist.storyboard;
        let geometry = storyboard.geometry;
        let per_container = u64::from(geometry.tiles_per_container());
        let (client, playlist, window) = (self.client, self.playlist, self.config.prefetch_window);
        client.prefetch_containers(playlist, window, |index, bytes| {
            self.clock.lap(Stage::DownloadLtc);
            self.media_bytes += bytes.len() as u64;
            let sheet = decode_container(storyboard, index, &bytes).map_err(at(Stage::ExtractThumbnails))?;
            let tiles = sheet.extract_tiles().map_err(at(Stage::ExtractThumbnails))?;
            self.clock.lap(Stage::ExtractThumbnails);
            for (tile, image) in tiles {
                let global = index * per_container + u64::from(tile);
                let timestamp = geometry.timestamp(global);
                let scores = backend
                    .score(&ScoreRequest {
                        image: &image,
                        index: global,
                        timestamp,
                    })
                    .map_err(at(Stage::Events))?;
                self.inference_count += 1;
                self.scored.push(ScoredItem {
                    index: global,
                    timestamp,
                    scores,
                });
            }
            self.clock.lap(Stage::Events);
            Ok::<(), PipelineError>(())
        })
    }

    fn score_frames(&mut self, backend: &mut dyn ScorerBackend) -> Result<(), PipelineError> {
        let stride = self.config.fb_stride;
        let transcoder = &self.config.transcoder;
        let mut frame_offset = 0u64;
        for segment in 0..self.playlist.segments.len() as u64 {
            let bytes = self.client.fetch_segment(self.playlist, segment).map_err(at(Stage::DownloadLtc))?;
            self.media_bytes += bytes.len() as u64;
            self.clock.lap(Stage::DownloadLtc);

            let file = temp_media(&bytes, "ts").map_err(|source| {
                at(Stage::ExtractThumbnails)(StageError::Io {
                    path: std::env::temp_dir(),
                    source,
                })
            })?;
            if self.meta.fps.is_none() {
                let probed = transcoder.probe(file.path()).map_err(at(Stage::ExtractThumbnails))?;
                self.meta.fps = Some(probed.fps);
            }
            let fps = self.meta.fps.expect("fps known");
            // score k * stride for k < floor(frame_count / stride)
            let limit = self.meta.frame_count().map_or(u64::MAX, |f| f / stride * stride);
            let mut failure = None;
            let mut decoded = 0u64;
            transcoder
                .decode_each(file.path(), DecodeOptions::default(), |local, image| {
                    self.clock.lap(Stage::ExtractThumbnails);
                    decoded += 1;
                    let global = frame_offset + local as u64;
                    if global % stride != 0 || global >= limit {
                        return true;
                    }
                    let timestamp = global as f64 / fps;
                    match backend.score(&ScoreRequest {
                        image: &image,
                        index: global,
                        timestamp,
                    }) {
                        Ok(scores) => {
                            self.inference_count += 1;
                            self.scored.push(ScoredItem {
                                index: global,
                                timestamp,
                                scores,
                            });
                            self.clock.lap(Stage::Events);
                            true
                        }
                        Err(e) => {
                            failure = Some(e);
                            false
                        }
                    }
                })
                .map_err(at(Stage::ExtractThumbnails))?;
            if let Some(e) = failure {
                return Err(at(Stage::Events)(e));
            }
            self.clock.lap(Stage::ExtractThumbnails);
            frame_offset += decoded;
            self.segment_cache.insert(segment, bytes);
        }
        debug!("fb: {frame_offset} frames decoded, {} scored", self.inference_count);
        Ok(())
    }

    fn finish(mut self, labels: &LabelSet) -> Result<RunReport, PipelineError> {
        let config = self.config;
        let manifest = select(&config.video_id, &self.scored, labels, &config.query, &self.meta)
            .map_err(at(Stage::ThumbnailSelection))?;
        let manifest_path = config.out_dir.join(manifest_file_name(&config.video_id, config.mode));
        fs::write(&manifest_path, manifest.to_bytes()).map_err(|source| {
            at(Stage::ThumbnailSelection)(StageError::Io {
                path: manifest_path.clone(),
                source,
            })
        })?;
        let picks = segment_picks(&manifest, config.max_gifs);
        self.clock.lap(Stage::ThumbnailSelection);
        info!(
            "{}: {} of {} items matched, {} segments picked",
            config.video_id,
            manifest.entries.len(),
            self.scored.len(),
            picks.len()
        );

        let decode = DecodeOptions {
            // a little slack so rounding at the cut never truncates the clip
            max_duration: Some(config.gif_spec.duration + self.meta.fps.map_or(0.5, |fps| 2.0 / fps)),
            size: None,
        };
        let mut gifs = Vec::with_capacity(picks.len());
        for pick in &picks {
            let bytes = match self.segment_cache.remove(&pick.segment_index) {
                Some(b) => b,
                None => {
                    let b = self
                        .client
                        .fetch_segment(self.playlist, pick.segment_index)
                        .map_err(at(Stage::DownloadSegments))?;
                    self.media_bytes += b.len() as u64;
                    b
                }
            };
            self.clock.lap(Stage::DownloadSegments);

            let clip = config
                .transcoder
                .decode_bytes(&bytes, "ts", decode)
                .map_err(at(Stage::GenerateGifs))?;
            let gif = render_clip(&clip, &config.gif_spec).map_err(at(Stage::GenerateGifs))?;
            let path = config.out_dir.join(gif_file_name(&config.video_id, pick.segment_index, &pick.event));
            fs::write(&path, gif).map_err(|source| {
                at(Stage::GenerateGifs)(StageError::Io {
                    path: path.clone(),
                    source,
                })
            })?;
            gifs.push(path);
            self.clock.lap(Stage::GenerateGifs);
        }
        self.clock.lap(Stage::GenerateGifs);

        let mut timings = self.clock.timings();
        timings.inference_count = self.inference_count;
        timings.bytes_downloaded = self.media_bytes;
        Ok(RunReport {
            config: ConfigSummary {
                base_url: config.base_url.clone(),
                video_id: config.video_id.clone(),
                mode: config.mode,
                events: config.query.events.clone(),
                threshold: config.query.threshold,
                fb_stride: config.fb_stride,
                max_gifs: config.max_gifs,
            },
            timings,
            manifest,
            manifest_path,
            gifs,
            meta: self.meta,
        })
    }
}

fn temp_media(bytes: &[u8], extension: &str) -> std::io::Result<tempfile::NamedTempFile> {
    let mut file = tempfile::Builder::new().suffix(&format!(".{extension}")).tempfile()?;
    file.write_all(bytes)?;
    file.flush()?;
    Ok(file)
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub ltc: RunReport,
    pub fb: RunReport,
    pub cost_per_inference: Duration,
    /// FB inferences over LTC inferences.
    pub inference_ratio: f64,
    /// FB total over LTC total.
    pub wall_clock_ratio: f64,
}

impl BenchReport {
    pub fn csv(&self) -> String {
        format!("{CSV_HEADER}\n{}\n{}\n", self.ltc.csv_row(), self.fb.csv_row())
    }
}

/// Runs both modes against the same video with a mock scorer that spends
/// `cost_per_inference` on every call.
pub fn bench_compare(
    config_ltc: &PipelineConfig,
    config_fb: &PipelineConfig,
    labels: &LabelSet,
    schedule: &MockSchedule,
    cost_per_inference: Duration,
) -> Result<BenchReport, PipelineError> {
    if config_ltc.mode != Mode::Ltc || config_fb.mode != Mode::Fb {
        return Err(PipelineError::Config("bench needs one ltc and one fb configuration".into()));
    }
    if config_ltc.video_id != config_fb.video_id || config_ltc.base_url != config_fb.base_url {
        return Err(PipelineError::Config(format!(
            "configurations target different videos: {}/{} vs {}/{}",
            config_ltc.base_url, config_ltc.video_id, config_fb.base_url, config_fb.video_id
        )));
    }
    let backend = || MockBackend::new(labels.clone(), schedule.clone()).with_cost(cost_per_inference);
    let ltc = run(config_ltc, &mut backend())?;
    let fb = run(config_fb, &mut backend())?;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::INFINITY };
    Ok(BenchReport {
        inference_ratio: ratio(fb.timings.inference_count as f64, ltc.timings.inference_count as f64),
        wall_clock_ratio: ratio(fb.timings.total, ltc.timings.total),
        cost_per_inference,
        ltc,
        fb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_columns() {
        assert_eq!(CSV_HEADER.split(',').count(), 12);
        let stages: Vec<String> = Stage::ALL.iter().map(|s| format!("{s}_s")).collect();
        assert_eq!(CSV_HEADER.split(',').skip(2).take(6).collect::<Vec<_>>(), stages);
    }

    #[test]
    fn lap_clock_stages_sum_to_total() {
        let mut clock = StageClock::start();
        for (i, stage) in Stage::ALL.iter().cycle().take(18).enumerate() {
            std::thread::sleep(Duration::from_millis((i % 3) as u64));
            clock.lap(*stage);
        }
        let t = clock.timings();
        assert!((t.stage_sum() - t.total).abs() < 1e-6, "{t:?}");
        assert!(t.total >= 0.015);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("LTC".parse::<Mode>().unwrap(), Mode::Ltc);
        assert_eq!("fb".parse::<Mode>().unwrap(), Mode::Fb);
        assert!("frames".parse::<Mode>().is_err());
    }

    #[test]
    fn file_names() {
        assert_eq!(gif_file_name("demo", 3, "soccer_penalty"), "demo_3_soccer_penalty.gif");
        assert_eq!(manifest_file_name("demo", Mode::Fb), "demo_fb.manifest");
    }

    #[test]
    fn config_validation() {
        let labels = LabelSet::sports_events();
        let q = EventQuery::new(&labels, &["soccer_penalty"], 0.8).unwrap();
        let mut c = PipelineConfig::new("http://x", "v", q, Mode::Fb, Path::new("/tmp"));
        assert!(c.validate().is_ok());
        c.fb_stride = 0;
        assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
    }
}
