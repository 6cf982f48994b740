use image::{imageops, RgbImage};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("pixel buffer holds {actual} bytes, expected {expected} for {width}x{height} RGB")]
    BufferLength {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("crop {width}x{height} at ({x}, {y}) exceeds {image_width}x{image_height} image")]
    CropOutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
        image_width: u32,
        image_height: u32,
    },
}

/// Row-major RGB8 image.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(RasterError::BufferLength {
                width,
                height,
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn solid(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, RasterError> {
        let pixels = rgb.repeat(width as usize * height as usize);
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.offset(x, y);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn crop(&self, x: u32, y: u32, width: u32, height: u32) -> Result<Self, RasterError> {
        let fits = width > 0
            && height > 0
            && x.checked_add(width).is_some_and(|r| r <= self.width)
            && y.checked_add(height).is_some_and(|b| b <= self.height);
        if !fits {
            return Err(RasterError::CropOutOfBounds {
                x,
                y,
                width,
                height,
                image_width: self.width,
                image_height: self.height,
            });
        }
        let row_bytes = width as usize * 3;
        let mut pixels = Vec::with_capacity(row_bytes * height as usize);
        for row in y..y + height {
            let start = self.offset(x, row);
            pixels.extend_from_slice(&self.pixels[start..start + row_bytes]);
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Copies `src` into this image with its top-left corner at `(x, y)`.
    /// Panics if it does not fit.
    pub fn blit(&mut self, src: &RasterImage, x: u32, y: u32) {
        assert!(x + src.width <= self.width && y + src.height <= self.height);
        let row_bytes = src.width as usize * 3;
        for row in 0..src.height {
            let dst = self.offset(x, y + row);
            let from = src.offset(0, row);
            self.pixels[dst..dst + row_bytes].copy_from_slice(&src.pixels[from..from + row_bytes]);
        }
    }

    /// Bilinear (triangle filter) resize. Identity when dimensions already match.
    pub fn resize(&self, width: u32, height: u32) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions { width, height });
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let resized = imageops::resize(&self.to_rgb_image(), width, height, imageops::FilterType::Triangle);
        Ok(Self::from(resized))
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked on construction")
    }

    /// Mean absolute per-channel difference against a constant color, in 0..=255.
    pub fn mean_abs_error(&self, rgb: [u8; 3]) -> f64 {
        let total: u64 = self
            .pixels
            .chunks_exact(3)
            .map(|p| (0..3).map(|c| u64::from(p[c].abs_diff(rgb[c]))).sum::<u64>())
            .sum();
        total as f64 / self.pixels.len() as f64
    }

    /// Per-channel mean color.
    pub fn mean_color(&self) -> [f64; 3] {
        let mut sums = [0u64; 3];
        for p in self.pixels.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += u64::from(p[c]);
            }
        }
        let n = (self.width as u64 * self.height as u64) as f64;
        [sums[0] as f64 / n, sums[1] as f64 / n, sums[2] as f64 / n]
    }
}

/// Constant-rate frames; frame `i` is shown from `i / fps` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub fps: f64,
    pub frames: Vec<RasterImage>,
}

impl FrameSequence {
    pub fn new(fps: f64, frames: Vec<RasterImage>) -> Self {
        assert!(fps.is_finite() && fps > 0.0, "fps must be positive, got {fps}");
        Self { fps, frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Media time covered by the sequence.
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn timestamp(&self, index: usize) -> f64 {
        index as f64 / self.fps
    }
}

impl From<RgbImage> for RasterImage {
    fn from(img: RgbImage) -> Self {
        let (width, height) = img.dimensions();
        Self {
            width,
            height,
            pixels: img.into_raw(),
        }
    }
}
