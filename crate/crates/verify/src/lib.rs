//! Helpers for the acceptance suite in `tests/acceptance.rs`.

use std::path::PathBuf;

/// One row of the selected-videos table.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRow {
    pub row: u32,
    pub playtime: String,
    pub seconds: f64,
    pub containers: u64,
    pub thumbnails: u64,
}

pub fn table_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/selected_videos.csv")
}

/// Parses `1h52m14s`-style durations into seconds.
pub fn parse_playtime(s: &str) -> Option<f64> {
    let mut total = 0u64;
    let mut digits = String::new();
    for c in s.chars() {
        if c.is_ascii_digit() {
            digits.push(c);
            continue;
        }
        let unit = match c {
            'h' => 3600,
            'm' => 60,
            's' => 1,
            _ => return None,
        };
        total += digits.parse::<u64>().ok()? * unit;
        digits.clear();
    }
    digits.is_empty().then_some(total as f64)
}

pub fn parse_table(text: &str) -> Result<Vec<VideoRow>, String> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(format!("expected 6 fields: {l}"));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|e| format!("{s:?}: {e}"));
            Ok(VideoRow {
                row: num(f[0])? as u32,
                playtime: f[1].to_string(),
                seconds: parse_playtime(f[1]).ok_or_else(|| format!("bad playtime {:?}", f[1]))?,
                containers: num(f[4])?,
                thumbnails: num(f[5])?,
            })
        })
        .collect()
}
