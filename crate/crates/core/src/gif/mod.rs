//! Animated GIF89a encoder: frame sampling, a global median-cut palette,
//! LZW image data and NETSCAPE2.0 looping.

mod lzw;
mod quantize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{FrameSequence, RasterImage};

pub use lzw::lzw_encode;
pub use quantize::{quantize, Palette};

#[derive(Debug, Error, PartialEq)]
pub enum GifError {
    #[error("clip covers {available:.3}s of media, {requested:.3}s requested")]
    Truncated { available: f64, requested: f64 },
    #[error("no frames to encode")]
    NoFrames,
    #[error("frame {index} is {width}x{height}, expected {expected_width}x{expected_height}")]
    FrameSize {
        index: usize,
        width: u32,
        height: u32,
        expected_width: u32,
        expected_height: u32,
    },
    #[error("invalid GIF spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GifSpec {
    /// Seconds of media taken from the start of the segment.
    pub duration: f64,
    pub output_fps: u32,
    pub max_colors: usize,
    /// Loop forever (NETSCAPE2.0 extension) or play once.
    pub looping: bool,
    /// Frames wider than this are scaled down, keeping aspect ratio.
    pub scale_width: u32,
}

impl Default for GifSpec {
    fn default() -> Self {
        Self {
            duration: 3.0,
            output_fps: 10,
            max_colors: 256,
            looping: true,
            scale_width: 480,
        }
    }
}

impl GifSpec {
    pub fn validate(&self) -> Result<(), GifError> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(GifError::InvalidSpec(format!("duration {} must be positive", self.duration)));
        }
        if !(1..=50).contains(&self.output_fps) {
            return Err(GifError::InvalidSpec(format!("output fps {} outside 1..=50", self.output_fps)));
        }
        if !(2..=256).contains(&self.max_colors) {
            return Err(GifError::InvalidSpec(format!("max colors {} outside 2..=256", self.max_colors)));
        }
        if self.scale_width == 0 {
            return Err(GifError::InvalidSpec("scale width must be positive".into()));
        }
        if self.frame_count() == 0 {
            return Err(GifError::InvalidSpec("duration shorter than one output frame".into()));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * f64::from(self.output_fps)).round() as usize
    }

    /// Per-frame delay in hundredths of a second.
    pub fn delay_centis(&self) -> u16 {
        (100.0 / f64::from(self.output_fps)).round() as u16
    }

    /// Output size for a source of `width`x`height`; never upscales.
    pub fn scaled_size(&self, width: u32, height: u32) -> (u32, u32) {
        if width <= self.scale_width {
            return (width, height);
        }
        let h = (f64::from(height) * f64::from(self.scale_width) / f64::from(width)).round() as u32;
        (self.scale_width, h.max(1))
    }
}

/// Picks `round(duration * output_fps)` frames at `t = j / output_fps`,
/// taking the frame on screen at each instant.
pub fn sample_frames(clip: &FrameSequence, spec: &GifSpec) -> Result<Vec<RasterImage>, GifError> {
    spec.validate()?;
    let available = clip.duration();
    if available + 1e-6 < spec.duration {
        return Err(GifError::Truncated {
            available,
            requested: spec.duration,
        });
    }
    let out_fps = f64::from(spec.output_fps);
    Ok((0..spec.frame_count())
        .map(|j| {
            let t = j as f64 / out_fps;
            let index = ((t * clip.fps) + 1e-6).floor() as usize;
            clip.frames[index.min(clip.len() - 1)].clone()
        })
        .collect())
}

/// Quantizes `frames` to one palette and writes a GIF89a stream.
pub fn encode_gif(frames: &[RasterImage], spec: &GifSpec) -> Result<Vec<u8>, GifError> {
    spec.validate()?;
    let first = frames.first().ok_or(GifError::NoFrames)?;
    let (width, height) = (first.width(), first.height());
    if width > u32::from(u16::MAX) || height > u32::from(u16::MAX) {
        return Err(GifError::InvalidSpec(format!("{width}x{height} exceeds GIF limits")));
    }
    for (index, f) in frames.iter().enumerate() {
        if (f.width(), f.height()) != (width, height) {
            return Err(GifError::FrameSize {
                index,
                width: f.width(),
                height: f.height(),
                expected_width: width,
                expected_height: height,
            });
        }
    }
    let (palette, indexed) = quantize(frames, spec.max_colors);
    Ok(write_gif(width as u16, height as u16, &palette, &indexed, spec))
}

/// Samples, scales and encodes the start of a decoded clip.
pub fn render_clip(clip: &FrameSequence, spec: &GifSpec) -> Result<Vec<u8>, GifError> {
    let sampled = sample_frames(clip, spec)?;
    let (w, h) = spec.scaled_size(sampled[0].width(), sampled[0].height());
    let scaled = sampled
        .into_iter()
        .map(|f| f.resize(w, h).expect("scaled size is non-zero"))
        .collect::<Vec<_>>();
    encode_gif(&scaled, spec)
}

fn write_gif(width: u16, height: u16, palette: &Palette, frames: &[Vec<u8>], spec: &GifSpec) -> Vec<u8> {
    let bits = palette.table_bits();
    let mut out = Vec::new();
    out.extend_from_slice(b"GIF89a");

    // logical screen descriptor with a global color table
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.push(0x80 | ((bits - 1) << 4) | (bits - 1));
    out.push(0); // background color index
    out.push(0); // pixel aspect ratio

    for i in 0..(1usize << bits) {
        out.extend_from_slice(palette.colors().get(i).unwrap_or(&[0, 0, 0]));
    }

    if spec.looping {
        out.extend_from_slice(&[0x21, 0xFF, 0x0B]);
        out.extend_from_slice(b"NETSCAPE2.0");
        out.extend_from_slice(&[0x03, 0x01, 0x00, 0x00, 0x00]); // loop count 0 = forever
    }

    let min_code_size = bits.max(2);
    let delay = spec.delay_centis().to_le_bytes();
    for indices in frames {
        // graphic control extension: disposal "do not dispose", no transparency
        out.extend_from_slice(&[0x21, 0xF9, 0x04, 0x04, delay[0], delay[1], 0x00, 0x00]);

        out.push(0x2C);
        out.extend_from_slice(&[0, 0, 0, 0]);
        out.extend_from_slice(&width.to_le_bytes());
        out.extend_from_slice(&height.to_le_bytes());
        out.push(0x00); // no local color table, not interlaced

        out.push(min_code_size);
        for block in lzw_encode(indices, min_code_size).chunks(255) {
            out.push(block.len() as u8);
            out.extend_from_slice(block);
        }
        out.push(0x00);
    }
    out.push(0x3B);
    out
}
