//! Event-conditioned artistic media from lightweight thumbnail containers.
//!
//! A streaming origin publishes, next to each video's segment playlist, a
//! storyboard: sprite sheets ("containers") packing 25 one-per-second
//! thumbnails each. Instead of decoding the whole video, a client scores
//! those thumbnails against the events a user picked, writes a chronological
//! selection manifest, fetches only the segments behind the accepted
//! thumbnails and turns the first seconds of each into an animated GIF.
//!
//! - [`geometry`]: container grid arithmetic (thumbnail, time and segment indices)
//! - [`raster`] / [`sprite`]: RGB buffers and sprite sheet slicing
//! - [`scorer`]: preprocessing, score vectors, event queries and inference backends
//! - [`selection`]: the selection manifest and its text format
//! - [`hls`] / [`origin`]: HTTP client and the static origin server
//! - [`transcode`] / [`prep`]: the external transcoder and the ingestion tool
//! - [`gif`]: the GIF89a encoder
//! - [`pipeline`]: the instrumented end-to-end run and the frame-based baseline

pub mod geometry;
pub mod gif;
pub mod hls;
pub mod origin;
pub mod pipeline;
pub mod prep;
pub mod raster;
pub mod scorer;
pub mod selection;
pub mod sprite;
pub mod transcode;

pub use geometry::{ContainerGeometry, GeometryError, ThumbnailRef, VideoMeta};
pub use raster::RasterImage;
pub use scorer::{EventQuery, LabelSet, ScoreVector, ScorerBackend};
pub use selection::{SelectionEntry, SelectionManifest};
pub use sprite::SpriteSheet;
