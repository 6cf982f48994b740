//! Thumbnail scoring: labels, score vectors, the user's event query and the
//! inference backends.

mod mock;
mod onnx;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::RasterImage;

pub use mock::{MockBackend, MockSchedule};
pub use onnx::{sidecar_labels_path, OnnxBackend, OutputActivation};

/// Tolerance on `sum(scores) == 1`.
pub const SCORE_SUM_TOLERANCE: f32 = 1e-4;

pub const DEFAULT_THRESHOLD: f64 = 0.80;

/// The ten action classes used to query the sports videos.
pub const SPORTS_EVENTS: [&str; 10] = [
    "basketball",
    "basketball_dunk",
    "boxing_punching_bag",
    "boxing_speed_bag",
    "cricket_bowling",
    "cricket_shot",
    "punch",
    "soccer_juggling",
    "soccer_penalty",
    "tennis_swing",
];

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("label set is empty")]
    EmptyLabels,
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("label {0:?} contains whitespace, ',' or '='")]
    InvalidLabel(String),
    #[error("unknown label {label:?} (not in {source_name})")]
    UnknownLabel { label: String, source_name: String },
    #[error("event query needs at least one event")]
    EmptyQuery,
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("model produces {outputs} scores but the label file {labels_path} lists {labels} labels")]
    LabelCountMismatch {
        outputs: usize,
        labels: usize,
        labels_path: String,
    },
    #[error("invalid score vector: {0}")]
    InvalidScores(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schedule line {line}: {message}")]
    Schedule { line: usize, message: String },
    #[error("inference failed: {0}")]
    Inference(String),
}

/// Ordered class names; position is the model output index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    source_name: String,
}

impl LabelSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self, ScoreError> {
        Self::with_source(labels, "built-in label set")
    }

    pub fn with_source<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
        source_name: impl Into<String>,
    ) -> Result<Self, ScoreError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(ScoreError::EmptyLabels);
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() || label.contains(|c: char| c.is_whitespace() || c == ',' || c == '=') {
                return Err(ScoreError::InvalidLabel(label.clone()));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(ScoreError::DuplicateLabel(label.clone()));
            }
        }
        Ok(Self {
            labels,
            index,
            source_name: source_name.into(),
        })
    }

    pub fn sports_events() -> Self {
        Self::new(SPORTS_EVENTS).expect("static labels are valid")
    }

    /// One label per line; blank lines are skipped.
    pub fn from_file(path: &Path) -> Result<Self, ScoreError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::with_source(
            text.lines().map(str::trim).filter(|l| !l.is_empty()),
            path.display().to_string(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Where the labels came from, for diagnostics.
    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn resolve(&self, label: &str) -> Result<usize, ScoreError> {
        self.index_of(label).ok_or_else(|| ScoreError::UnknownLabel {
            label: label.to_string(),
            source_name: self.source_name.clone(),
        })
    }
}

/// Per-label probabilities in label-set order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    scores: Vec<f32>,
}

impl ScoreVector {
    pub fn new(scores: Vec<f32>) -> Result<Self, ScoreError> {
        if scores.is_empty() {
            return Err(ScoreError::InvalidScores("no scores".into()));
        }
        if let Some((i, s)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && (0.0..=1.0).contains(*s)))
        {
            return Err(ScoreError::InvalidScores(format!("score {i} = {s} outside [0, 1]")));
        }
        let sum: f32 = scores.iter().sum();
        if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE {
            return Err(ScoreError::InvalidScores(format!("scores sum to {sum}, expected 1")));
        }
        Ok(Self { scores })
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0);
        Self {
            scores: vec![1.0 / len as f32; len],
        }
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn get(&self, index: usize) -> f32 {
        self.scores[index]
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Index of the highest score; the earliest index wins exact ties.
    pub fn argmax(&self) -> usize {
        argmax_of(self.scores.iter().copied().enumerate())
    }
}

fn argmax_of(items: impl Iterator<Item = (usize, f32)>) -> usize {
    let mut best: Option<(usize, f32)> = None;
    for (i, s) in items {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}

/// Events the user asked for and the acceptance threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventQuery {
    pub events: Vec<String>,
    pub threshold: f64,
}

impl EventQuery {
    /// Validates `events` against `labels`; duplicates are dropped, order kept.
    pub fn new(labels: &LabelSet, events: &[impl AsRef<str>], threshold: f64) -> Result<Self, ScoreError> {
        let mut query = Vec::new();
        for e in events {
            let e = e.as_ref().trim();
            labels.resolve(e)?;
            if !query.iter().any(|q| q == e) {
                query.push(e.to_string());
            }
        }
        let query = Self {
            events: query,
            threshold,
        };
        query.validate()?;
        Ok(query)
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.events.is_empty() {
            return Err(ScoreError::EmptyQuery);
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ScoreError::Threshold(self.threshold));
        }
        Ok(())
    }
}

/// Best queried event for a thumbnail, if its score strictly exceeds the
/// threshold. Exact ties go to the event that comes first in label order.
///
/// The comparison happens in `f32`, the precision scores are produced in, so
/// a score of exactly `0.8f32` does not pass a threshold of `0.80`.
pub fn matches(labels: &LabelSet, scores: &ScoreVector, query: &EventQuery) -> Option<(String, f32)> {
    let mut indices: Vec<usize> = query.events.iter().filter_map(|e| labels.index_of(e)).collect();
    indices.sort_unstable();
    if indices.is_empty() {
        return None;
    }
    let best = argmax_of(indices.iter().map(|&i| (i, scores.get(i))));
    let score = scores.get(best);
    (score > query.threshold as f32).then(|| (labels.labels[best].clone(), score))
}

/// Input geometry and per-channel normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub center_crop: bool,
    pub target_width: u32,
    pub target_height: u32,
    /// Applied as `(pixel / 255 - mean) / std` per RGB channel.
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            center_crop: true,
            target_width: 244,
            target_height: 244,
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl PreprocessSpec {
    pub fn with_target(mut self, width: u32, height: u32) -> Self {
        self.target_width = width;
        self.target_height = height;
        self
    }

    /// Normalizes a preprocessed image into a CHW float tensor.
    pub fn normalize(&self, image: &RasterImage) -> Vec<f32> {
        let plane = image.width() as usize * image.height() as usize;
        let mut out = vec![0.0f32; plane * 3];
        for (i, p) in image.pixels().chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = (f32::from(p[c]) / 255.0 - self.mean[c]) / self.std[c];
            }
        }
        out
    }
}

/// Center-crops to the largest centered square (when enabled), then resizes
/// to the target size.
pub fn preprocess(image: &RasterImage, spec: &PreprocessSpec) -> RasterImage {
    let cropped = if spec.center_crop && image.width() != image.height() {
        let side = image.width().min(image.height());
        let x = (image.width() - side) / 2;
        let y = (image.height() - side) / 2;
        image.crop(x, y, side, side).expect("centered square fits")
    } else {
        image.clone()
    };
    cropped
        .resize(spec.target_width.max(1), spec.target_height.max(1))
        .expect("target dimensions are non-zero")
}

/// What a backend sees for one inference: the image and where it sits in the video.
#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub image: &'a RasterImage,
    /// Thumbnail index in LTC mode, frame index in frame-based mode.
    pub index: u64,
    pub timestamp: f64,
}

pub trait ScorerBackend: Send {
    fn labels(&self) -> &LabelSet;

    fn score(&mut self, request: &ScoreRequest<'_>) -> Result<ScoreVector, ScoreError>;
}

impl<B: ScorerBackend + ?Sized> ScorerBackend for Box<B> {
    fn labels(&self) -> &LabelSet {
        (**self).labels()
    }

    fn score(&mut self, request: &ScoreRequest<'_>) -> Result<ScoreVector, ScoreError> {
        (**self).score(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> LabelSet {
        LabelSet::sports_events()
    }

    fn scores_with(pairs: &[(&str, f32)]) -> ScoreVector {
        let labels = labels();
        let assigned: f32 = pairs.iter().map(|(_, s)| s).sum();
        let rest = (1.0 - assigned) / (labels.len() - pairs.len()) as f32;
        let mut v = vec![rest; labels.len()];
        for (l, s) in pairs {
            v[labels.index_of(l).unwrap()] = *s;
        }
        ScoreVector::new(v).unwrap()
    }

    #[test]
    fn threshold_is_strict() {
        let l = labels();
        let q = EventQuery::new(&l, &["soccer_penalty"], 0.8).unwrap();
        assert_eq!(
            matches(&l, &scores_with(&[("soccer_penalty", 0.81)]), &q),
            Some(("soccer_penalty".to_string(), 0.81))
        );
        assert_eq!(matches(&l, &scores_with(&[("soccer_penalty", 0.80)]), &q), None);
    }

    #[test]
    fn best_queried_event_wins() {
        let l = labels();
        let q = EventQuery::new(&l, &["punch", "tennis_swing"], 0.8).unwrap();
        let sv = ScoreVector::new({
            let mut v = vec![0.0; 10];
            v[l.index_of("punch").unwrap()] = 0.85;
            v[l.index_of("tennis_swing").unwrap()] = 0.15;
            v
        })
        .unwrap();
        assert_eq!(matches(&l, &sv, &q).unwrap().0, "punch");
        // 0.85 and 0.90 both above threshold cannot coexist in a softmax, but
        // matches() only looks at the queried entries, so use a lower threshold.
        let q = EventQuery::new(&l, &["punch", "tennis_swing"], 0.1).unwrap();
        let sv = scores_with(&[("punch", 0.3), ("tennis_swing", 0.6)]);
        assert_eq!(matches(&l, &sv, &q).unwrap().0, "tennis_swing");
    }

    #[test]
    fn exact_ties_go_to_first_label() {
        let l = labels();
        let q = EventQuery::new(&l, &["tennis_swing", "basketball"], 0.3).unwrap();
        let sv = scores_with(&[("basketball", 0.45), ("tennis_swing", 0.45)]);
        assert_eq!(matches(&l, &sv, &q).unwrap().0, "basketball");
    }

    #[test]
    fn query_validation() {
        let l = labels();
        let err = EventQuery::new(&l, &["curling"], 0.8).unwrap_err();
        assert!(err.to_string().contains("unknown label \"curling\""), "{err}");
        assert!(matches!(
            EventQuery::new(&l, &[] as &[&str], 0.8),
            Err(ScoreError::EmptyQuery)
        ));
        assert!(matches!(
            EventQuery::new(&l, &["punch"], 1.5),
            Err(ScoreError::Threshold(_))
        ));
        let q = EventQuery::new(&l, &["punch", "punch"], 0.8).unwrap();
        assert_eq!(q.events, vec!["punch"]);
    }

    #[test]
    fn label_set_rejects_bad_input() {
        assert!(matches!(LabelSet::new(Vec::<String>::new()), Err(ScoreError::EmptyLabels)));
        assert!(matches!(LabelSet::new(["a", "a"]), Err(ScoreError::DuplicateLabel(_))));
        assert!(matches!(LabelSet::new(["a b"]), Err(ScoreError::InvalidLabel(_))));
    }

    #[test]
    fn score_vector_invariants() {
        assert!(ScoreVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ScoreVector::new(vec![0.5, 0.6]).is_err());
        assert!(ScoreVector::new(vec![1.5, -0.5]).is_err());
        assert!(ScoreVector::new(vec![f32::NAN, 1.0]).is_err());
    }

    #[test]
    fn preprocess_center_crops_then_resizes() {
        let mut img = RasterImage::solid(160, 90, [0, 0, 0]).unwrap();
        // mark the central 90x90 square white, leave the side bars black
        for y in 0..90 {
            for x in 35..125 {
                img.put_pixel(x, y, [255, 255, 255]);
            }
        }
        let out = preprocess(&img, &PreprocessSpec::default());
        assert_eq!((out.width(), out.height()), (244, 244));
        assert_eq!(out.mean_abs_error([255, 255, 255]), 0.0);
    }

    #[test]
    fn preprocess_is_identity_at_target_size() {
        let img = RasterImage::new(244, 244, (0..244 * 244 * 3).map(|i| (i % 253) as u8).collect()).unwrap();
        let spec = PreprocessSpec::default();
        let once = preprocess(&img, &spec);
        assert_eq!(once, img);
        assert_eq!(preprocess(&once, &spec), once);
    }

    #[test]
    fn preprocess_keeps_solid_color() {
        let img = RasterImage::solid(37, 91, [12, 34, 56]).unwrap();
        let out = preprocess(&img, &PreprocessSpec::default().with_target(50, 20));
        assert_eq!((out.width(), out.height()), (50, 20));
        assert_eq!(out.mean_abs_error([12, 34, 56]), 0.0);
    }

    #[test]
    fn normalize_is_chw() {
        let mut img = RasterImage::solid(2, 1, [0, 0, 0]).unwrap();
        img.put_pixel(1, 0, [255, 51, 0]);
        let spec = PreprocessSpec::default();
        let t = spec.normalize(&img);
        assert_eq!(t, vec![0.0, 1.0, 0.0, 0.2, 0.0, 0.0]);
    }
}
