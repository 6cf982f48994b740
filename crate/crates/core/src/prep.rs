//! Ingestion: turn a source video into the origin layout.
//!
//! ```text
//! <out>/playlist.m3u8      segment playlist
//! <out>/storyboard.json    container geometry and thumbnail count
//! <out>/ltc/<n>.jpg        sprite sheets, 25 thumbnails each by default
//! <out>/seg/<n>.ts         fixed-duration MPEG-TS segments
//! ```
//!
//! Thumbnail `k` is the frame nearest to `t = k * interval`.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use thiserror::Error;

use crate::geometry::{ContainerGeometry, GeometryError, VideoMeta};
use crate::hls::{render_playlist, SegmentRef, StoryboardRef, DEFAULT_CONTAINER_TEMPLATE};
use crate::raster::RasterImage;
use crate::sprite::{compose_sheet, SpriteError, DEFAULT_JPEG_QUALITY};
use crate::transcode::{DecodeOptions, TranscodeError, Transcoder};

pub const DEFAULT_SEGMENT_DURATION: f64 = 10.0;
pub const MAX_SYNTHETIC_DURATION: f64 = 600.0;

#[derive(Debug, Error)]
pub enum PrepError {
    #[error(transparent)]
    Transcode(#[from] TranscodeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sprite(#[from] SpriteError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("source has no decodable frames")]
    NoFrames,
    #[error("transcoder produced {actual} segments, expected {expected}")]
    SegmentCount { expected: u64, actual: u64 },
    #[error("invalid synthetic video request: {0}")]
    Synthetic(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PrepError + '_ {
    move |source| PrepError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Builds the origin layout for `source` in `out_dir`. Existing `ltc/` and
/// `seg/` directories under `out_dir` are replaced.
pub fn prep(
    transcoder: &Transcoder,
    source: &Path,
    out_dir: &Path,
    segment_duration: f64,
    geometry: ContainerGeometry,
) -> Result<VideoMeta, PrepError> {
    geometry.validate()?;
    if !(segment_duration.is_finite() && segment_duration > 0.0) {
        return Err(GeometryError::Invalid(format!("segment duration must be positive, got {segment_duration}")).into());
    }
    let ltc_dir = out_dir.join("ltc");
    let seg_dir = out_dir.join("seg");
    for dir in [&ltc_dir, &seg_dir] {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }

    let fps = transcoder.probe(source)?.fps;
    let mut sheets = SheetWriter {
        dir: &ltc_dir,
        geometry,
        pending: Vec::with_capacity(geometry.tiles_per_container() as usize),
        written: 0,
        taken: 0,
    };
    let mut frames = 0usize;
    let mut last_frame: Option<RasterImage> = None;
    let mut failure: Option<PrepError> = None;
    let decoded = transcoder.decode_each(
        source,
        DecodeOptions {
            max_duration: None,
            size: Some((geometry.tile_width, geometry.tile_height)),
        },
        |index, frame| {
            frames = index + 1;
            let target = (sheets.taken as f64 * geometry.thumbnail_interval * fps).round() as usize;
            if index == target {
                if let Err(e) = sheets.push(frame.clone()) {
                    failure = Some(e);
                    return false;
                }
            }
            last_frame = Some(frame);
            true
        },
    );
    if let Some(e) = failure {
        return Err(e);
    }
    decoded?;
    let last = last_frame.ok_or(PrepError::NoFrames)?;

    let meta = VideoMeta::new(frames as f64 / fps, Some(fps), segment_duration)?;
    let thumbnail_count = geometry.thumbnail_count(meta.duration);
    // the last target can round past the final frame
    while sheets.taken < thumbnail_count {
        sheets.push(last.clone())?;
    }
    sheets.flush()?;
    debug_assert_eq!(sheets.written, geometry.container_count(thumbnail_count));

    transcoder.segment(source, &seg_dir, segment_duration)?;
    let actual = (0..)
        .take_while(|i| seg_dir.join(format!("{i}.ts")).is_file())
        .count() as u64;
    if actual != meta.segment_count {
        return Err(PrepError::SegmentCount {
            expected: meta.segment_count,
            actual,
        });
    }

    let segments: Vec<SegmentRef> = (0..meta.segment_count)
        .map(|i| SegmentRef {
            index: i,
            uri: format!("seg/{i}.ts"),
            duration: segment_duration.min(meta.duration - i as f64 * segment_duration),
        })
        .collect();
    let playlist_path = out_dir.join("playlist.m3u8");
    fs::write(&playlist_path, render_playlist(&segments)).map_err(io_err(&playlist_path))?;

    let storyboard = StoryboardRef {
        uri_template: DEFAULT_CONTAINER_TEMPLATE.to_string(),
        geometry,
        thumbnail_count,
        fps: Some(fps),
    };
    let storyboard_path = out_dir.join("storyboard.json");
    fs::write(&storyboard_path, storyboard.to_json()).map_err(io_err(&storyboard_path))?;

    info!(
        "prepped {}: {:.3}s, {} segments, {} thumbnails, {} containers",
        source.display(),
        meta.duration,
        meta.segment_count,
        thumbnail_count,
        sheets.written
    );
    Ok(meta)
}

struct SheetWriter<'a> {
    dir: &'a Path,
    geometry: ContainerGeometry,
    pending: Vec<RasterImage>,
    written: u64,
    taken: u64,
}

impl SheetWriter<'_> {
    fn push(&mut self, tile: RasterImage) -> Result<(), PrepError> {
        self.pending.push(tile);
        self.taken += 1;
        if self.pending.len() == self.geometry.tiles_per_container() as usize {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<(), PrepError> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let sheet = compose_sheet(&self.pending, self.geometry, self.written)?;
        let path = self.dir.join(format!("{}.jpg", self.written));
        fs::write(&path, sheet.encode_jpeg(DEFAULT_JPEG_QUALITY)?).map_err(io_err(&path))?;
        self.pending.clear();
        self.written += 1;
        Ok(())
    }
}

/// Color shown during second `second` of a synthetic test video.
///
/// Channels cycle with period 176 s inside `40..216`, leaving headroom for
/// the noise pattern; neighbouring seconds differ by at least 79 in red.
pub fn palette_color(second: u64) -> [u8; 3] {
    let s = second % 176;
    [
        40 + ((s * 97) % 176) as u8,
        40 + ((s * 53 + 60) % 176) as u8,
        40 + ((s * 151 + 120) % 176) as u8,
    ]
}

/// Frame content of a synthetic test video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticPattern {
    pub width: u32,
    pub height: u32,
    /// Per-frame luma noise in `-amplitude..=amplitude`, added on top of the
    /// palette color so segments do not compress to nothing.
    pub noise_amplitude: u8,
}

impl Default for SyntheticPattern {
    fn default() -> Self {
        Self {
            width: 320,
            height: 180,
            noise_amplitude: 6,
        }
    }
}

impl SyntheticPattern {
    /// Frame `index` of a video running at `fps`.
    pub fn frame(&self, index: u64, fps: f64) -> RasterImage {
        let second = (index as f64 / fps + 1e-9).floor() as u64;
        let base = palette_color(second);
        let amp = i32::from(self.noise_amplitude);
        let mut pixels = Vec::with_capacity(self.width as usize * self.height as usize * 3);
        for y in 0..self.height {
            for x in 0..self.width {
                let n = if amp == 0 {
                    0
                } else {
                    (mix(index << 32 | u64::from(y) << 16 | u64::from(x)) % (2 * amp as u64 + 1)) as i32 - amp
                };
                for c in base {
                    pixels.push((i32::from(c) + n).clamp(0, 255) as u8);
                }
            }
        }
        RasterImage::new(self.width, self.height, pixels).expect("pattern dimensions are valid")
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes an H.264 video whose second `s` shows [`palette_color`]`(s)`.
pub fn synthesize_test_video(
    transcoder: &Transcoder,
    duration: f64,
    fps: f64,
    pattern: SyntheticPattern,
    out_path: &Path,
) -> Result<PathBuf, PrepError> {
    if !(duration > 0.0 && duration <= MAX_SYNTHETIC_DURATION) {
        return Err(PrepError::Synthetic(format!(
            "duration must be in (0, {MAX_SYNTHETIC_DURATION}] seconds, got {duration}"
        )));
    }
    if !(fps > 0.0 && fps <= 120.0) {
        return Err(PrepError::Synthetic(format!("fps must be in (0, 120], got {fps}")));
    }
    if pattern.width == 0 || pattern.height == 0 || pattern.width % 2 == 1 || pattern.height % 2 == 1 {
        return Err(PrepError::Synthetic(format!(
            "frame size must be even and non-zero, got {}x{}",
            pattern.width, pattern.height
        )));
    }
    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let frames = (duration * fps).round() as u64;
    transcoder.encode_frames(
        (0..frames).map(|i| pattern.frame(i, fps)),
        pattern.width,
        pattern.height,
        fps,
        out_path,
    )?;
    Ok(out_path.to_path_buf())
}

/// Synthesizes a test video at `root/<video_id>/source.mp4` and preps it
/// in place, giving a directory [`crate::origin`] can serve.
#[allow(clippy::too_many_arguments)]
pub fn prep_synthetic(
    transcoder: &Transcoder,
    root: &Path,
    video_id: &str,
    duration: f64,
    fps: f64,
    pattern: SyntheticPattern,
    segment_duration: f64,
    geometry: ContainerGeometry,
) -> Result<VideoMeta, PrepError> {
    let dir = root.join(video_id);
    let source = synthesize_test_video(transcoder, duration, fps, pattern, &dir.join("source.mp4"))?;
    prep(transcoder, &source, &dir, segment_duration, geometry)
}
