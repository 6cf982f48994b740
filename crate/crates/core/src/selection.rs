//! The selection manifest: thumbnails that cleared the threshold, in
//! chronological order, with the segment each one falls in.
//!
//! Wire format (UTF-8, one record per line):
//!
//! ```text
//! #ltcgif-manifest v1 video=<id> threshold=<t> events=<e1,e2,...>
//! <global_index>\t<timestamp_s>\t<event>\t<score>\t<segment_index>
//! ```
//!
//! Scores are written with four decimals. Indices are 0-based.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{GeometryError, ThumbnailRef, VideoMeta};
use crate::scorer::{matches, EventQuery, LabelSet, ScoreVector};

pub const MANIFEST_MAGIC: &str = "#ltcgif-manifest";
pub const MANIFEST_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("manifest is not valid UTF-8")]
    Encoding,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A scored thumbnail or frame, keyed by its index and media time.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredItem {
    pub index: u64,
    pub timestamp: f64,
    pub scores: ScoreVector,
}

impl ScoredItem {
    pub fn thumbnail(thumb: &ThumbnailRef, scores: ScoreVector) -> Self {
        Self {
            index: thumb.global_index,
            timestamp: thumb.timestamp,
            scores,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionEntry {
    pub global_index: u64,
    pub timestamp: f64,
    pub event: String,
    pub score: f64,
    pub segment_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionManifest {
    pub video_id: String,
    pub query: EventQuery,
    pub entries: Vec<SelectionEntry>,
}

/// Keeps the items whose best queried event exceeds the threshold.
pub fn select(
    video_id: &str,
    scored: &[ScoredItem],
    labels: &LabelSet,
    query: &EventQuery,
    meta: &VideoMeta,
) -> Result<SelectionManifest, ManifestError> {
    let mut entries = Vec::new();
    for item in scored {
        if let Some((event, score)) = matches(labels, &item.scores, query) {
            entries.push(SelectionEntry {
                global_index: item.index,
                timestamp: item.timestamp,
                event,
                score: f64::from(score),
                segment_index: meta.segment_for(item.timestamp)?,
            });
        }
    }
    entries.sort_by_key(|e| e.global_index);
    entries.dedup_by_key(|e| e.global_index);
    Ok(SelectionManifest {
        video_id: video_id.to_string(),
        query: query.clone(),
        entries,
    })
}

/// Distinct segment indices referenced by the manifest, ascending.
pub fn dedupe_segments(manifest: &SelectionManifest) -> Vec<u64> {
    let mut segments: Vec<u64> = manifest.entries.iter().map(|e| e.segment_index).collect();
    segments.sort_unstable();
    segments.dedup();
    segments
}

/// A segment chosen for GIF generation and the entry that represents it.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPick {
    pub segment_index: u64,
    pub event: String,
    pub score: f64,
}

/// One pick per distinct segment, labelled with its best-scoring entry (the
/// earliest on ties). With `max`, only the `max` highest-scoring segments are
/// kept (earlier segment wins ties). Output is in ascending segment order.
pub fn segment_picks(manifest: &SelectionManifest, max: Option<usize>) -> Vec<SegmentPick> {
    let mut best: BTreeMap<u64, SegmentPick> = BTreeMap::new();
    for e in &manifest.entries {
        let replace = best.get(&e.segment_index).is_none_or(|p| e.score > p.score);
        if replace {
            best.insert(
                e.segment_index,
                SegmentPick {
                    segment_index: e.segment_index,
                    event: e.event.clone(),
                    score: e.score,
                },
            );
        }
    }
    let mut picks: Vec<SegmentPick> = best.into_values().collect();
    if let Some(max) = max {
        if picks.len() > max {
            let mut ranked = picks.clone();
            ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.segment_index.cmp(&b.segment_index)));
            ranked.truncate(max);
            ranked.sort_by_key(|p| p.segment_index);
            picks = ranked;
        }
    }
    picks
}

impl SelectionManifest {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MANIFEST_MAGIC} {MANIFEST_VERSION} video={} threshold={:?} events={}\n",
            self.video_id,
            self.query.threshold,
            self.query.events.join(",")
        );
        for e in &self.entries {
            writeln!(
                out,
                "{}\t{:?}\t{}\t{:.4}\t{}",
                e.global_index, e.timestamp, e.event, e.score, e.segment_index
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_text().into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ManifestError> {
        Self::parse(std::str::from_utf8(bytes).map_err(|_| ManifestError::Encoding)?)
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or(ManifestError::Parse {
            line: 1,
            message: "empty manifest".into(),
        })?;
        let (video_id, query) = parse_header(header)?;
        let mut entries: Vec<SelectionEntry> = Vec::new();
        for (line, raw) in lines {
            if raw.is_empty() {
                continue;
            }
            let entry = parse_entry(raw).map_err(|message| ManifestError::Parse { line, message })?;
            if let Some(prev) = entries.last() {
                if entry.global_index <= prev.global_index {
                    return Err(ManifestError::Parse {
                        line,
                        message: format!(
                            "index {} does not follow {} (entries must be strictly chronological)",
                            entry.global_index, prev.global_index
                        ),
                    });
                }
            }
            entries.push(entry);
        }
        Ok(Self {
            video_id,
            query,
            entries,
        })
    }
}

fn parse_header(header: &str) -> Result<(String, EventQuery), ManifestError> {
    let err = |message: String| ManifestError::Parse { line: 1, message };
    let mut fields = header.split(' ');
    if fields.next() != Some(MANIFEST_MAGIC) {
        return Err(err(format!("missing {MANIFEST_MAGIC} header")));
    }
    match fields.next() {
        Some(MANIFEST_VERSION) => {}
        other => return Err(err(format!("unsupported version {other:?}"))),
    }
    let (mut video, mut threshold, mut events) = (None, None, None);
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got {field:?}")))?;
        match key {
            "video" => video = Some(value.to_string()),
            "threshold" => {
                threshold = Some(value.parse::<f64>().map_err(|_| err(format!("bad threshold {value:?}")))?)
            }
            "events" => {
                events = Some(
                    value
                        .split(',')
                        .filter(|e| !e.is_empty())
                        .map(str::to_string)
                        .collect::<Vec<_>>(),
                )
            }
            _ => return Err(err(format!("unknown header key {key:?}"))),
        }
    }
    let query = EventQuery {
        events: events.ok_or_else(|| err("header lacks events=".into()))?,
        threshold: threshold.ok_or_else(|| err("header lacks threshold=".into()))?,
    };
    query.validate().map_err(|e| err(e.to_string()))?;
    Ok((video.ok_or_else(|| err("header lacks video=".into()))?, query))
}

fn parse_entry(raw: &str) -> Result<SelectionEntry, String> {
    let fields: Vec<&str> = raw.split('\t').collect();
    let [index, timestamp, event, score, segment] = fields[..] else {
        return Err(format!("expected 5 tab-separated fields, got {}", fields.len()));
    };
    let number = |name: &str, v: &str| v.parse::<f64>().map_err(|_| format!("bad {name} {v:?}"));
    let score = number("score", score)?;
    if !(0.0..=1.0).contains(&score) {
        return Err(format!("score {score} outside [0, 1]"));
    }
    let timestamp = number("timestamp", timestamp)?;
    if !(timestamp.is_finite() && timestamp >= 0.0) {
        return Err(format!("bad timestamp {timestamp}"));
    }
    if event.is_empty() {
        return Err("empty event".into());
    }
    Ok(SelectionEntry {
        global_index: index.parse().map_err(|_| format!("bad index {index:?}"))?,
        timestamp,
        event: event.to_string(),
        score,
        segment_index: segment.parse().map_err(|_| format!("bad segment {segment:?}"))?,
    })
}
