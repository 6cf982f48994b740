//! Sprite sheets: one image per container, tiles laid out row-major.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::ImageReader;
use thiserror::Error;

use crate::geometry::ContainerGeometry;
use crate::raster::RasterImage;

pub const DEFAULT_JPEG_QUALITY: u8 = 90;

#[derive(Debug, Error)]
pub enum SpriteError {
    #[error("sheet is {actual_width}x{actual_height}, geometry expects {expected_width}x{expected_height}")]
    SheetDimensions {
        expected_width: u32,
        expected_height: u32,
        actual_width: u32,
        actual_height: u32,
    },
    #[error("tile {index} is {actual_width}x{actual_height}, geometry expects {expected_width}x{expected_height}")]
    TileDimensions {
        index: usize,
        expected_width: u32,
        expected_height: u32,
        actual_width: u32,
        actual_height: u32,
    },
    #[error("container holds 1..={max} tiles, got {count}")]
    TileCount { count: usize, max: u32 },
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("image I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpriteSheet {
    pub image: RasterImage,
    pub geometry: ContainerGeometry,
    pub container_index: u64,
    pub valid_tiles: u32,
}

impl SpriteSheet {
    pub fn new(
        image: RasterImage,
        geometry: ContainerGeometry,
        container_index: u64,
        valid_tiles: u32,
    ) -> Result<Self, SpriteError> {
        if image.width() != geometry.sheet_width() || image.height() != geometry.sheet_height() {
            return Err(SpriteError::SheetDimensions {
                expected_width: geometry.sheet_width(),
                expected_height: geometry.sheet_height(),
                actual_width: image.width(),
                actual_height: image.height(),
            });
        }
        if valid_tiles > geometry.tiles_per_container() {
            return Err(SpriteError::TileCount {
                count: valid_tiles as usize,
                max: geometry.tiles_per_container(),
            });
        }
        Ok(Self {
            image,
            geometry,
            container_index,
            valid_tiles,
        })
    }

    /// Cuts out the `valid_tiles` thumbnails in row-major order.
    pub fn extract_tiles(&self) -> Result<Vec<(u32, RasterImage)>, SpriteError> {
        let g = &self.geometry;
        (0..self.valid_tiles)
            .map(|k| {
                let (col, row) = g.tile_position(k);
                let tile = self
                    .image
                    .crop(col * g.tile_width, row * g.tile_height, g.tile_width, g.tile_height)
                    .map_err(|_| SpriteError::SheetDimensions {
                        expected_width: g.sheet_width(),
                        expected_height: g.sheet_height(),
                        actual_width: self.image.width(),
                        actual_height: self.image.height(),
                    })?;
                Ok((k, tile))
            })
            .collect()
    }

    pub fn encode_jpeg(&self, quality: u8) -> Result<Vec<u8>, SpriteError> {
        let mut out = Vec::new();
        JpegEncoder::new_with_quality(&mut out, quality).encode(
            self.image.pixels(),
            self.image.width(),
            self.image.height(),
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(out)
    }

    pub fn decode_jpeg(
        bytes: &[u8],
        geometry: ContainerGeometry,
        container_index: u64,
        valid_tiles: u32,
    ) -> Result<Self, SpriteError> {
        let decoded = ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Jpeg)
            .decode()?
            .into_rgb8();
        Self::new(RasterImage::from(decoded), geometry, container_index, valid_tiles)
    }
}

/// Packs up to one container's worth of tiles into a sheet; unused cells stay black.
pub fn compose_sheet(
    tiles: &[RasterImage],
    geometry: ContainerGeometry,
    container_index: u64,
) -> Result<SpriteSheet, SpriteError> {
    let max = geometry.tiles_per_container();
    if tiles.is_empty() || tiles.len() > max as usize {
        return Err(SpriteError::TileCount {
            count: tiles.len(),
            max,
        });
    }
    let mut canvas = RasterImage::solid(geometry.sheet_width(), geometry.sheet_height(), [0, 0, 0])
        .expect("geometry dimensions are non-zero");
    for (index, tile) in tiles.iter().enumerate() {
        if tile.width() != geometry.tile_width || tile.height() != geometry.tile_height {
            return Err(SpriteError::TileDimensions {
                index,
                expected_width: geometry.tile_width,
                expected_height: geometry.tile_height,
                actual_width: tile.width(),
                actual_height: tile.height(),
            });
        }
        let (col, row) = geometry.tile_position(index as u32);
        canvas.blit(tile, col * geometry.tile_width, row * geometry.tile_height);
    }
    SpriteSheet::new(canvas, geometry, container_index, tiles.len() as u32)
}
