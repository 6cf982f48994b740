//! HTTP client for the origin's playlist, storyboard, containers and segments.
//!
//! URL scheme, relative to a base URL:
//!
//! ```text
//! GET {base}/video/{id}/playlist.m3u8
//! GET {base}/video/{id}/storyboard.json
//! GET {base}/video/{id}/ltc/{n}.jpg
//! GET {base}/video/{id}/seg/{n}.ts
//! ```

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ContainerGeometry, GeometryError, VideoMeta};
use crate::sprite::{SpriteError, SpriteSheet};

pub const DEFAULT_CONTAINER_TEMPLATE: &str = "ltc/{n}.jpg";
pub const DEFAULT_PREFETCH_WINDOW: usize = 4;

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("GET {url}: {message}")]
    Transport { url: String, message: String },
    #[error("GET {url}: HTTP {status}")]
    Status { url: String, status: u16 },
    #[error("GET {url}: not found")]
    NotFound { url: String },
    #[error("playlist line {line} ({tag}): {message}")]
    Playlist { line: usize, tag: String, message: String },
    #[error("storyboard: {0}")]
    Storyboard(String),
    #[error("{0}")]
    Precondition(String),
    #[error("container {index}: {source}")]
    Format {
        index: u64,
        #[source]
        source: SpriteError,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl FetchError {
    fn playlist(line: usize, tag: &str, message: impl Into<String>) -> Self {
        Self::Playlist {
            line,
            tag: tag.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub index: u64,
    pub uri: String,
    pub duration: f64,
}

/// Wire form of `storyboard.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryboardManifest {
    pub interval_s: f64,
    pub grid_cols: u32,
    pub grid_rows: u32,
    pub tile_w: u32,
    pub tile_h: u32,
    pub thumbnail_count: u64,
    pub uri_template: String,
    /// Source frame rate, written by prep; optional for other producers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoryboardRef {
    /// Container URI relative to the video directory; `{n}` is the container index.
    pub uri_template: String,
    pub geometry: ContainerGeometry,
    pub thumbnail_count: u64,
    pub fps: Option<f64>,
}

impl StoryboardRef {
    pub fn container_count(&self) -> u64 {
        self.geometry.container_count(self.thumbnail_count)
    }

    pub fn container_uri(&self, index: u64) -> String {
        self.uri_template.replace("{n}", &index.to_string())
    }

    pub fn to_manifest(&self) -> StoryboardManifest {
        let g = self.geometry;
        StoryboardManifest {
            interval_s: g.thumbnail_interval,
            grid_cols: g.grid_cols,
            grid_rows: g.grid_rows,
            tile_w: g.tile_width,
            tile_h: g.tile_height,
            thumbnail_count: self.thumbnail_count,
            uri_template: self.uri_template.clone(),
            fps: self.fps,
        }
    }

    pub fn from_manifest(m: StoryboardManifest) -> Result<Self, FetchError> {
        let geometry = ContainerGeometry::new(m.grid_cols, m.grid_rows, m.tile_w, m.tile_h, m.interval_s)
            .map_err(|e| FetchError::Storyboard(e.to_string()))?;
        if !m.uri_template.contains("{n}") {
            return Err(FetchError::Storyboard(format!(
                "uri_template {:?} has no {{n}} placeholder",
                m.uri_template
            )));
        }
        if m.fps.is_some_and(|f| !(f.is_finite() && f > 0.0)) {
            return Err(FetchError::Storyboard("fps must be positive".into()));
        }
        Ok(Self {
            uri_template: m.uri_template,
            geometry,
            thumbnail_count: m.thumbnail_count,
            fps: m.fps,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_manifest()).expect("storyboard serializes")
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, FetchError> {
        let m: StoryboardManifest = serde_json::from_slice(bytes).map_err(|e| FetchError::Storyboard(e.to_string()))?;
        Self::from_manifest(m)
    }
}

/// A parsed media playlist, before the storyboard is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct MediaPlaylist {
    pub target_duration: u64,
    pub segments: Vec<SegmentRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Playlist {
    pub video_id: String,
    /// Nominal segment length: the longest EXTINF duration.
    pub segment_duration: f64,
    pub segments: Vec<SegmentRef>,
    pub storyboard: StoryboardRef,
}

impl Playlist {
    pub fn new(video_id: &str, media: MediaPlaylist, storyboard: StoryboardRef) -> Result<Self, FetchError> {
        if media.segments.is_empty() {
            return Err(FetchError::playlist(0, "#EXTINF", "playlist has no segments"));
        }
        let segment_duration = media.segments.iter().map(|s| s.duration).fold(0.0, f64::max);
        Ok(Self {
            video_id: video_id.to_string(),
            segment_duration,
            segments: media.segments,
            storyboard,
        })
    }

    /// Media duration: the sum of segment durations.
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn video_meta(&self) -> Result<VideoMeta, GeometryError> {
        let mut meta = VideoMeta::new(self.duration(), self.storyboard.fps, self.segment_duration)?;
        meta.segment_count = self.segments.len() as u64;
        Ok(meta)
    }
}

/// Parses the strict extended-M3U subset written by prep: `#EXTM3U` first,
/// a required `#EXT-X-TARGETDURATION`, and `#EXTINF:<seconds>,` before each
/// segment URI. Other `#EXT` tags and comments are ignored.
pub fn parse_m3u8(text: &str) -> Result<MediaPlaylist, FetchError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, "#EXTM3U")) => {}
        Some((n, other)) => return Err(FetchError::playlist(n, "#EXTM3U", format!("expected header, found {other:?}"))),
        None => return Err(FetchError::playlist(0, "#EXTM3U", "empty playlist")),
    }

    let mut target: Option<u64> = None;
    let mut pending: Option<(usize, f64)> = None;
    let mut segments = Vec::new();
    for (n, line) in lines {
        if let Some(value) = line.strip_prefix("#EXT-X-TARGETDURATION:") {
            let t = value
                .trim()
                .parse::<u64>()
                .map_err(|_| FetchError::playlist(n, "#EXT-X-TARGETDURATION", format!("bad value {value:?}")))?;
            if t == 0 {
                return Err(FetchError::playlist(n, "#EXT-X-TARGETDURATION", "must be positive"));
            }
            target = Some(t);
        } else if let Some(value) = line.strip_prefix("#EXTINF:") {
            if pending.is_some() {
                return Err(FetchError::playlist(n, "#EXTINF", "two EXTINF tags without a URI"));
            }
            let secs = value.split(',').next().unwrap_or("").trim();
            let d = secs
                .parse::<f64>()
                .ok()
                .filter(|d| d.is_finite() && *d > 0.0)
                .ok_or_else(|| FetchError::playlist(n, "#EXTINF", format!("bad duration {secs:?}")))?;
            pending = Some((n, d));
        } else if line.starts_with('#') {
            continue;
        } else {
            let (tag_line, duration) =
                pending.take().ok_or_else(|| FetchError::playlist(n, "#EXTINF", format!("URI {line:?} without EXTINF")))?;
            let Some(t) = target else {
                return Err(FetchError::playlist(tag_line, "#EXT-X-TARGETDURATION", "missing before first segment"));
            };
            if duration.round() as u64 > t {
                return Err(FetchError::playlist(
                    tag_line,
                    "#EXTINF",
                    format!("duration {duration} exceeds target duration {t}"),
                ));
            }
            segments.push(SegmentRef {
                index: segments.len() as u64,
                uri: line.to_string(),
                duration,
            });
        }
    }
    if let Some((n, _)) = pending {
        return Err(FetchError::playlist(n, "#EXTINF", "no URI after tag"));
    }
    let target_duration = target.ok_or_else(|| FetchError::playlist(0, "#EXT-X-TARGETDURATION", "tag missing"))?;
    Ok(MediaPlaylist {
        target_duration,
        segments,
    })
}

/// Writes a VOD playlist in the form [`parse_m3u8`] reads.
pub fn render_playlist(segments: &[SegmentRef]) -> String {
    let target = segments.iter().map(|s| s.duration.ceil() as u64).max().unwrap_or(1).max(1);
    let mut out = format!("#EXTM3U\n#EXT-X-VERSION:3\n#EXT-X-TARGETDURATION:{target}\n#EXT-X-MEDIA-SEQUENCE:0\n#EXT-X-PLAYLIST-TYPE:VOD\n");
    for s in segments {
        out.push_str(&format!("#EXTINF:{:.6},\n{}\n", s.duration, s.uri));
    }
    out.push_str("#EXT-X-ENDLIST\n");
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total tries per request, including the first.
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(100),
            multiplier: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FetchStats {
    pub requests: u64,
    pub retries: u64,
    pub bytes: u64,
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    retries: AtomicU64,
    bytes: AtomicU64,
}

/// Blocking client; `&self` methods are safe to call from several threads.
#[derive(Debug)]
pub struct HlsClient {
    agent: ureq::Agent,
    base_url: String,
    retry: RetryPolicy,
    counters: Counters,
}

impl HlsClient {
    pub fn new(base_url: &str) -> Self {
        Self::with_retry(base_url, RetryPolicy::default())
    }

    pub fn with_retry(base_url: &str, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self {
            agent,
            base_url: base_url.trim_end_matches('/').to_string(),
            retry,
            counters: Counters::default(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn stats(&self) -> FetchStats {
        FetchStats {
            requests: self.counters.requests.load(Ordering::Relaxed),
            retries: self.counters.retries.load(Ordering::Relaxed),
            bytes: self.counters.bytes.load(Ordering::Relaxed),
        }
    }

    pub fn reset_stats(&self) {
        self.counters.requests.store(0, Ordering::Relaxed);
        self.counters.retries.store(0, Ordering::Relaxed);
        self.counters.bytes.store(0, Ordering::Relaxed);
    }

    /// Absolute URL of `uri` inside the video directory.
    pub fn video_url(&self, video_id: &str, uri: &str) -> String {
        if uri.starts_with("http://") || uri.starts_with("https://") {
            uri.to_string()
        } else {
            format!("{}/video/{}/{}", self.base_url, video_id, uri.trim_start_matches('/'))
        }
    }

    /// GET with the retry policy. Transport errors and 5xx/429 are retried;
    /// other statuses fail at once.
    pub fn get(&self, url: &str) -> Result<Vec<u8>, FetchError> {
        let mut backoff = self.retry.initial_backoff;
        let attempts = self.retry.attempts.max(1);
        for attempt in 1..=attempts {
            self.counters.requests.fetch_add(1, Ordering::Relaxed);
            let err = match self.get_once(url) {
                Ok(bytes) => {
                    self.counters.bytes.fetch_add(bytes.len() as u64, Ordering::Relaxed);
                    return Ok(bytes);
                }
                Err(e) if !retryable(&e) => return Err(e),
                Err(e) => e,
            };
            if attempt == attempts {
                return Err(err);
            }
            warn!("{err}; retrying in {backoff:?} ({attempt}/{attempts})");
            self.counters.retries.fetch_add(1, Ordering::Relaxed);
            thread::sleep(backoff);
            backoff *= self.retry.multiplier;
        }
        unreachable!("loop returns on the last attempt")
    }

    fn get_once(&self, url: &str) -> Result<Vec<u8>, FetchError> {
        let transport = |e: ureq::Error| FetchError::Transport {
            url: url.to_string(),
            message: e.to_string(),
        };
        let mut response = self.agent.get(url).call().map_err(transport)?;
        let status = response.status().as_u16();
        match status {
            200..=299 => response.body_mut().with_config().limit(u64::MAX).read_to_vec().map_err(transport),
            404 => Err(FetchError::NotFound { url: url.to_string() }),
            _ => Err(FetchError::Status {
                url: url.to_string(),
                status,
            }),
        }
    }

    pub fn fetch_storyboard(&self, video_id: &str) -> Result<StoryboardRef, FetchError> {
        StoryboardRef::parse(&self.get(&self.video_url(video_id, "storyboard.json"))?)
    }

    pub fn fetch_playlist(&self, video_id: &str) -> Result<Playlist, FetchError> {
        let body = self.get(&self.video_url(video_id, "playlist.m3u8"))?;
        let text = std::str::from_utf8(&body).map_err(|_| FetchError::playlist(0, "#EXTM3U", "playlist is not UTF-8"))?;
        let media = parse_m3u8(text)?;
        let storyboard = self.fetch_storyboard(video_id)?;
        let playlist = Playlist::new(video_id, media, storyboard)?;
        debug!(
            "{video_id}: {} segments, {} thumbnails in {} containers",
            playlist.segments.len(),
            playlist.storyboard.thumbnail_count,
            playlist.storyboard.container_count()
        );
        Ok(playlist)
    }

    fn check_container(&self, storyboard: &StoryboardRef, index: u64) -> Result<(), FetchError> {
        let count = storyboard.container_count();
        if index >= count {
            return Err(FetchError::Precondition(format!(
                "container {index} out of range ({count} containers)"
            )));
        }
        Ok(())
    }

    pub fn fetch_container_bytes(&self, playlist: &Playlist, index: u64) -> Result<Vec<u8>, FetchError> {
        self.check_container(&playlist.storyboard, index)?;
        self.get(&self.video_url(&playlist.video_id, &playlist.storyboard.container_uri(index)))
    }

    pub fn fetch_container(&self, playlist: &Playlist, index: u64) -> Result<SpriteSheet, FetchError> {
        let bytes = self.fetch_container_bytes(playlist, index)?;
        decode_container(&playlist.storyboard, index, &bytes)
    }

    pub fn fetch_segment(&self, playlist: &Playlist, index: u64) -> Result<Vec<u8>, FetchError> {
        let segment = playlist.segments.get(index as usize).ok_or_else(|| {
            FetchError::Precondition(format!(
                "segment {index} out of range ({} segments)",
                playlist.segments.len()
            ))
        })?;
        let bytes = self.get(&self.video_url(&playlist.video_id, &segment.uri))?;
        if bytes.is_empty() {
            return Err(FetchError::Transport {
                url: segment.uri.clone(),
                message: "empty segment body".into(),
            });
        }
        Ok(bytes)
    }

    /// Fetches every container with up to `window` requests in flight and
    /// hands them to `consume` strictly in container order. At most `window`
    /// containers are buffered ahead of the consumer. The first error, from
    /// either side, stops the run.
    pub fn prefetch_containers<E: From<FetchError>>(
        &self,
        playlist: &Playlist,
        window: usize,
        mut consume: impl FnMut(u64, Vec<u8>) -> Result<(), E>,
    ) -> Result<(), E> {
        let count = playlist.storyboard.container_count();
        let window = window.max(1);
        let state = Mutex::new(PrefetchState {
            next_issue: 0,
            consumed: 0,
            ready: BTreeMap::new(),
        });
        let cond = Condvar::new();
        let cancelled = AtomicBool::new(false);

        thread::scope(|scope| {
            for _ in 0..window.min(count as usize) {
                scope.spawn(|| loop {
                    let index = {
                        let mut s = state.lock().unwrap();
                        while !cancelled.load(Ordering::SeqCst) && s.next_issue < count && s.next_issue >= s.consumed + window as u64 {
                            s = cond.wait(s).unwrap();
                        }
                        if cancelled.load(Ordering::SeqCst) || s.next_issue >= count {
                            return;
                        }
                        s.next_issue += 1;
                        s.next_issue - 1
                    };
                    let result = self.fetch_container_bytes(playlist, index);
                    state.lock().unwrap().ready.insert(index, result);
                    cond.notify_all();
                });
            }

            let outcome = (|| {
                for index in 0..count {
                    let result = {
                        let mut s = state.lock().unwrap();
                        loop {
                            if let Some(r) = s.ready.remove(&index) {
                                s.consumed = index + 1;
                                break r;
                            }
                            s = cond.wait(s).unwrap();
                        }
                    };
                    cond.notify_all();
                    consume(index, result?)?;
                }
                Ok(())
            })();
            if outcome.is_err() {
                cancelled.store(true, Ordering::SeqCst);
                cond.notify_all();
            }
            outcome
        })
    }
}

struct PrefetchState {
    next_issue: u64,
    consumed: u64,
    ready: BTreeMap<u64, Result<Vec<u8>, FetchError>>,
}

fn retryable(e: &FetchError) -> bool {
    match e {
        FetchError::Transport { .. } => true,
        FetchError::Status { status, .. } => *status >= 500 || *status == 429,
        _ => false,
    }
}

/// Decodes container `index`, marking tiles past the thumbnail count invalid.
pub fn decode_container(storyboard: &StoryboardRef, index: u64, bytes: &[u8]) -> Result<SpriteSheet, FetchError> {
    let valid = storyboard.geometry.valid_tiles(index, storyboard.thumbnail_count);
    SpriteSheet::decode_jpeg(bytes, storyboard.geometry, index, valid).map_err(|source| FetchError::Format { index, source })
}
