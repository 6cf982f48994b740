//! Median-cut palette construction over the pooled histogram of all frames.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use crate::raster::RasterImage;

/// Global color table: unique RGB entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
}

impl Palette {
    pub fn new(colors: Vec<[u8; 3]>) -> Self {
        assert!(!colors.is_empty() && colors.len() <= 256, "palette size {}", colors.len());
        Self { colors }
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    /// Bits per index in the written color table (table size is `1 << bits`).
    pub fn table_bits(&self) -> u8 {
        let mut bits = 1;
        while (1usize << bits) < self.colors.len() {
            bits += 1;
        }
        bits
    }

    /// Index of the nearest entry by squared Euclidean RGB distance; ties go
    /// to the lower index.
    pub fn nearest(&self, rgb: [u8; 3]) -> u8 {
        let mut best = (0usize, u32::MAX);
        for (i, c) in self.colors.iter().enumerate() {
            let d = distance2(*c, rgb);
            if d < best.1 {
                best = (i, d);
                if d == 0 {
                    break;
                }
            }
        }
        best.0 as u8
    }
}

fn distance2(a: [u8; 3], b: [u8; 3]) -> u32 {
    (0..3)
        .map(|c| {
            let d = i32::from(a[c]) - i32::from(b[c]);
            (d * d) as u32
        })
        .sum()
}

/// Multiplicative hash for packed RGB keys; SipHash dominates otherwise.
#[derive(Default)]
struct ColorHasher(u64);

impl Hasher for ColorHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0.rotate_left(8) ^ u64::from(b)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        }
    }

    fn write_u32(&mut self, v: u32) {
        // fold the well-mixed high half into the bucket bits
        let x = u64::from(v).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        self.0 = x ^ (x >> 32);
    }
}

type ColorMap<V> = HashMap<u32, V, BuildHasherDefault<ColorHasher>>;

fn pack(rgb: [u8; 3]) -> u32 {
    u32::from(rgb[0]) << 16 | u32::from(rgb[1]) << 8 | u32::from(rgb[2])
}

fn unpack(v: u32) -> [u8; 3] {
    [(v >> 16) as u8, (v >> 8) as u8, v as u8]
}

/// Builds one palette for all frames and maps every pixel to it.
///
/// When the frames use at most `max_colors` distinct colors, the palette is
/// exactly those colors (sorted) and the mapping is lossless.
pub fn quantize(frames: &[RasterImage], max_colors: usize) -> (Palette, Vec<Vec<u8>>) {
    assert!(!frames.is_empty(), "quantize needs at least one frame");
    assert!((2..=256).contains(&max_colors), "max colors {max_colors}");

    let mut histogram: ColorMap<u64> = ColorMap::default();
    for frame in frames {
        for p in frame.pixels().chunks_exact(3) {
            *histogram.entry(pack([p[0], p[1], p[2]])).or_insert(0) += 1;
        }
    }
    let mut colors: Vec<(u32, u64)> = histogram.into_iter().collect();
    colors.sort_unstable_by_key(|&(c, _)| c);

    let palette = if colors.len() <= max_colors {
        Palette::new(colors.iter().map(|&(c, _)| unpack(c)).collect())
    } else {
        median_cut(colors, max_colors)
    };

    let mut cache: ColorMap<u8> = ColorMap::default();
    let indexed = frames
        .iter()
        .map(|frame| {
            frame
                .pixels()
                .chunks_exact(3)
                .map(|p| {
                    let rgb = [p[0], p[1], p[2]];
                    *cache.entry(pack(rgb)).or_insert_with(|| palette.nearest(rgb))
                })
                .collect()
        })
        .collect();
    (palette, indexed)
}

struct ColorBox {
    colors: Vec<(u32, u64)>,
}

impl ColorBox {
    fn channel(c: u32, ch: usize) -> u8 {
        unpack(c)[ch]
    }

    /// Widest channel and its extent.
    fn widest(&self) -> (usize, u8) {
        (0..3)
            .map(|ch| {
                let (lo, hi) = self.colors.iter().fold((u8::MAX, u8::MIN), |(lo, hi), &(c, _)| {
                    let v = Self::channel(c, ch);
                    (lo.min(v), hi.max(v))
                });
                (ch, hi - lo)
            })
            .fold((0, 0), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    fn pixels(&self) -> u64 {
        self.colors.iter().map(|&(_, n)| n).sum()
    }

    /// Sorts along the widest channel and splits at the pixel-weighted median.
    fn split(mut self) -> (ColorBox, ColorBox) {
        let (ch, _) = self.widest();
        self.colors
            .sort_unstable_by_key(|&(c, _)| (Self::channel(c, ch), c));
        let half = self.pixels() / 2;
        let mut acc = 0;
        let mut cut = 1;
        for (i, &(_, n)) in self.colors.iter().enumerate() {
            acc += n;
            if acc >= half {
                cut = i + 1;
                break;
            }
        }
        let cut = cut.clamp(1, self.colors.len() - 1);
        let upper = self.colors.split_off(cut);
        (self, ColorBox { colors: upper })
    }

    fn mean(&self) -> [u8; 3] {
        let total = self.pixels() as f64;
        let mut sums = [0f64; 3];
        for &(c, n) in &self.colors {
            let rgb = unpack(c);
            for ch in 0..3 {
                sums[ch] += f64::from(rgb[ch]) * n as f64;
            }
        }
        sums.map(|s| (s / total).round() as u8)
    }
}

fn median_cut(colors: Vec<(u32, u64)>, max_colors: usize) -> Palette {
    let mut boxes = vec![ColorBox { colors }];
    while boxes.len() < max_colors {
        // split the box with the largest extent; more pixels breaks ties
        let candidate = boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| b.colors.len() > 1)
            .max_by(|(ia, a), (ib, b)| {
                let (ea, eb) = (a.widest().1, b.widest().1);
                ea.cmp(&eb).then(a.pixels().cmp(&b.pixels())).then(ib.cmp(ia))
            })
            .map(|(i, _)| i);
        let Some(i) = candidate else { break };
        let (lo, hi) = boxes.swap_remove(i).split();
        boxes.push(lo);
        boxes.push(hi);
    }
    let mut entries: Vec<[u8; 3]> = boxes.iter().map(ColorBox::mean).collect();
    entries.sort_unstable();
    entries.dedup();
    Palette::new(entries)
}
