//! Container geometry and the thumbnail / timestamp / segment mapping.
//!
//! Every index here is 0-based. A container holds `grid_cols * grid_rows`
//! thumbnails laid out row-major (left to right, top to bottom); thumbnail
//! `g` sits at time `g * thumbnail_interval`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack applied before rounding up a ratio of two floats, so that e.g.
/// `60.000000001 / 10` still counts as 6 segments.
const CEIL_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    Invalid(String),
    #[error("timestamp {timestamp}s outside video of {duration}s")]
    OutOfRange { timestamp: f64, duration: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContainerGeometry {
    pub grid_cols: u32,
    pub grid_rows: u32,
    pub tile_width: u32,
    pub tile_height: u32,
    /// Seconds between consecutive thumbnails.
    pub thumbnail_interval: f64,
}

impl Default for ContainerGeometry {
    fn default() -> Self {
        Self {
            grid_cols: 5,
            grid_rows: 5,
            tile_width: 160,
            tile_height: 90,
            thumbnail_interval: 1.0,
        }
    }
}

impl ContainerGeometry {
    pub fn new(
        grid_cols: u32,
        grid_rows: u32,
        tile_width: u32,
        tile_height: u32,
        thumbnail_interval: f64,
    ) -> Result<Self, GeometryError> {
        let geometry = Self {
            grid_cols,
            grid_rows,
            tile_width,
            tile_height,
            thumbnail_interval,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.grid_cols == 0 || self.grid_rows == 0 {
            return Err(GeometryError::Invalid(format!(
                "grid must be at least 1x1, got {}x{}",
                self.grid_cols, self.grid_rows
            )));
        }
        if self.tile_width == 0 || self.tile_height == 0 {
            return Err(GeometryError::Invalid(format!(
                "tile must be at least 1x1, got {}x{}",
                self.tile_width, self.tile_height
            )));
        }
        if !(self.thumbnail_interval.is_finite() && self.thumbnail_interval > 0.0) {
            return Err(GeometryError::Invalid(format!(
                "thumbnail interval must be positive, got {}",
                self.thumbnail_interval
            )));
        }
        Ok(())
    }

    pub fn tiles_per_container(&self) -> u32 {
        self.grid_cols * self.grid_rows
    }

    pub fn sheet_width(&self) -> u32 {
        self.grid_cols * self.tile_width
    }

    pub fn sheet_height(&self) -> u32 {
        self.grid_rows * self.tile_height
    }

    /// Number of thumbnails sampled from a video of `duration` seconds.
    pub fn thumbnail_count(&self, duration: f64) -> u64 {
        ceil_ratio(duration, self.thumbnail_interval)
    }

    /// Number of containers needed to hold `thumb_count` thumbnails.
    pub fn container_count(&self, thumb_count: u64) -> u64 {
        thumb_count.div_ceil(u64::from(self.tiles_per_container()))
    }

    pub fn locate(&self, global_index: u64) -> ThumbnailRef {
        let per = u64::from(self.tiles_per_container());
        ThumbnailRef {
            global_index,
            container_index: global_index / per,
            tile_index: (global_index % per) as u32,
            timestamp: self.timestamp(global_index),
        }
    }

    pub fn timestamp(&self, global_index: u64) -> f64 {
        global_index as f64 * self.thumbnail_interval
    }

    /// `(column, row)` of a tile inside its container.
    pub fn tile_position(&self, tile_index: u32) -> (u32, u32) {
        (tile_index % self.grid_cols, tile_index / self.grid_cols)
    }

    /// Thumbnails actually present in `container_index`; the final container
    /// of a video may be partially filled, and containers past the end hold none.
    pub fn valid_tiles(&self, container_index: u64, thumb_count: u64) -> u32 {
        let per = u64::from(self.tiles_per_container());
        let start = container_index.saturating_mul(per);
        thumb_count.saturating_sub(start).min(per) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThumbnailRef {
    pub global_index: u64,
    pub container_index: u64,
    pub tile_index: u32,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub duration: f64,
    /// Frame rate, when known. The client side of the pipeline only learns it
    /// once it decodes frames.
    pub fps: Option<f64>,
    pub segment_duration: f64,
    pub segment_count: u64,
}

impl VideoMeta {
    pub fn new(duration: f64, fps: Option<f64>, segment_duration: f64) -> Result<Self, GeometryError> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(GeometryError::Invalid(format!("duration must be positive, got {duration}")));
        }
        if let Some(fps) = fps {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(GeometryError::Invalid(format!("fps must be positive, got {fps}")));
            }
        }
        if !(segment_duration.is_finite() && segment_duration > 0.0) {
            return Err(GeometryError::Invalid(format!(
                "segment duration must be positive, got {segment_duration}"
            )));
        }
        Ok(Self {
            duration,
            fps,
            segment_duration,
            segment_count: ceil_ratio(duration, segment_duration),
        })
    }

    pub fn segment_for(&self, timestamp: f64) -> Result<u64, GeometryError> {
        if !(timestamp >= 0.0 && timestamp < self.duration) {
            return Err(GeometryError::OutOfRange {
                timestamp,
                duration: self.duration,
            });
        }
        let index = (timestamp / self.segment_duration).floor() as u64;
        Ok(index.min(self.segment_count - 1))
    }

    pub fn frame_count(&self) -> Option<u64> {
        self.fps.map(|fps| (self.duration * fps).round() as u64)
    }
}

fn ceil_ratio(numerator: f64, denominator: f64) -> u64 {
    if numerator <= 0.0 {
        return 0;
    }
    (numerator / denominator - CEIL_EPSILON).ceil().max(0.0) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thumbnail_count_matches_playtime_seconds() {
        let g = ContainerGeometry::default();
        assert_eq!(g.thumbnail_count(6734.0), 6734);
        assert_eq!(g.thumbnail_count(6626.0), 6626);
        assert_eq!(g.thumbnail_count(0.0), 0);
        assert_eq!(g.thumbnail_count(60.5), 61);
    }

    #[test]
    fn container_count_rounds_up() {
        let g = ContainerGeometry::default();
        assert_eq!(g.container_count(6734), 270);
        assert_eq!(g.container_count(11137), 446);
        assert_eq!(g.container_count(25), 1);
        assert_eq!(g.container_count(26), 2);
        assert_eq!(g.container_count(0), 0);
    }

    #[test]
    fn locate_examples() {
        let g = ContainerGeometry::default();
        let r = g.locate(0);
        assert_eq!((r.container_index, r.tile_index, r.timestamp), (0, 0, 0.0));
        let r = g.locate(27);
        assert_eq!((r.container_index, r.tile_index, r.timestamp), (1, 2, 27.0));
        assert_eq!(g.tile_position(2), (2, 0));
        let r = g.locate(6733);
        assert_eq!((r.container_index, r.tile_index), (269, 8));
    }

    #[test]
    fn valid_tiles_on_partial_container() {
        let g = ContainerGeometry::default();
        assert_eq!(g.valid_tiles(269, 6734), 9);
        assert_eq!(g.valid_tiles(0, 60), 25);
        assert_eq!(g.valid_tiles(2, 60), 10);
        assert_eq!(g.valid_tiles(3, 60), 0);
    }

    #[test]
    fn segment_for_examples() {
        let meta = VideoMeta::new(60.0, Some(30.0), 10.0).unwrap();
        assert_eq!(meta.segment_count, 6);
        assert_eq!(meta.segment_for(0.0), Ok(0));
        assert_eq!(meta.segment_for(35.0), Ok(3));
        assert_eq!(meta.segment_for(29.9), Ok(2));
        assert_eq!(meta.segment_for(59.999), Ok(5));
        assert!(matches!(meta.segment_for(60.0), Err(GeometryError::OutOfRange { .. })));
        assert!(matches!(meta.segment_for(-0.5), Err(GeometryError::OutOfRange { .. })));
    }

    #[test]
    fn segment_count_rounds_up() {
        assert_eq!(VideoMeta::new(61.0, None, 10.0).unwrap().segment_count, 7);
        assert_eq!(VideoMeta::new(6734.0, None, 10.0).unwrap().segment_count, 674);
    }

    #[test]
    fn rejects_degenerate_values() {
        assert!(ContainerGeometry::new(0, 5, 160, 90, 1.0).is_err());
        assert!(ContainerGeometry::new(5, 5, 160, 0, 1.0).is_err());
        assert!(ContainerGeometry::new(5, 5, 160, 90, 0.0).is_err());
        assert!(VideoMeta::new(0.0, None, 10.0).is_err());
        assert!(VideoMeta::new(10.0, Some(0.0), 10.0).is_err());
        assert!(VideoMeta::new(10.0, None, -1.0).is_err());
    }
}
