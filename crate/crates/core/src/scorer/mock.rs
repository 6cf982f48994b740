use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use super::{LabelSet, ScoreError, ScoreRequest, ScoreVector, ScorerBackend, SCORE_SUM_TOLERANCE};

/// Scores injected per thumbnail index.
///
/// Text form, one thumbnail per line, `#` starts a comment:
///
/// ```text
/// # index  label:score ...
/// 35 soccer_penalty:0.9
/// 36 soccer_penalty:0.7 punch:0.2
/// ```
///
/// Probability mass not assigned on a line is spread evenly over the
/// remaining labels; unlisted indices score uniformly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockSchedule {
    entries: BTreeMap<u64, Vec<(usize, f32)>>,
}

impl MockSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, labels: &LabelSet, index: u64, scores: &[(&str, f32)]) -> Result<(), ScoreError> {
        let resolved = scores
            .iter()
            .map(|(l, s)| Ok((labels.resolve(l)?, *s)))
            .collect::<Result<Vec<_>, ScoreError>>()?;
        check_assignment(labels, &resolved).map_err(|message| ScoreError::Schedule { line: 0, message })?;
        self.entries.insert(index, resolved);
        Ok(())
    }

    pub fn with(mut self, labels: &LabelSet, index: u64, scores: &[(&str, f32)]) -> Result<Self, ScoreError> {
        self.insert(labels, index, scores)?;
        Ok(self)
    }

    pub fn parse(text: &str, labels: &LabelSet) -> Result<Self, ScoreError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ScoreError::Schedule {
                line: line_no,
                message,
            };
            let mut fields = line.split_whitespace();
            let index: u64 = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| err(format!("expected a thumbnail index, got {line:?}")))?;
            let mut assigned = Vec::new();
            for pair in fields {
                let (label, score) = pair
                    .split_once(':')
                    .ok_or_else(|| err(format!("expected label:score, got {pair:?}")))?;
                let label_index = labels.index_of(label).ok_or_else(|| {
                    err(format!("unknown label {label:?} (not in {})", labels.source_name()))
                })?;
                let score: f32 = score.parse().map_err(|_| err(format!("bad score {score:?}")))?;
                assigned.push((label_index, score));
            }
            if assigned.is_empty() {
                return Err(err("no label:score pairs".into()));
            }
            check_assignment(labels, &assigned).map_err(err)?;
            if entries.insert(index, assigned).is_some() {
                return Err(err(format!("index {index} listed twice")));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path, labels: &LabelSet) -> Result<Self, ScoreError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, labels)
    }

    pub fn to_text(&self, labels: &LabelSet) -> String {
        let mut out = String::new();
        for (index, pairs) in &self.entries {
            out.push_str(&index.to_string());
            for (l, s) in pairs {
                out.push_str(&format!(" {}:{}", labels.labels()[*l], s));
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores_for(&self, labels: &LabelSet, index: u64) -> ScoreVector {
        let n = labels.len();
        let Some(assigned) = self.entries.get(&index) else {
            return ScoreVector::uniform(n);
        };
        let total: f32 = assigned.iter().map(|(_, s)| s).sum();
        let free = n - assigned.len();
        let fill = if free == 0 { 0.0 } else { ((1.0 - total) / free as f32).max(0.0) };
        let mut scores = vec![fill; n];
        for &(l, s) in assigned {
            scores[l] = s;
        }
        ScoreVector::new(scores).expect("assignments validated on insert")
    }
}

fn check_assignment(labels: &LabelSet, assigned: &[(usize, f32)]) -> Result<(), String> {
    for (i, &(l, s)) in assigned.iter().enumerate() {
        if !(0.0..=1.0).contains(&s) {
            return Err(format!("score {s} outside [0, 1]"));
        }
        if assigned[..i].iter().any(|&(other, _)| other == l) {
            return Err(format!("label {:?} listed twice", labels.labels()[l]));
        }
    }
    let total: f32 = assigned.iter().map(|(_, s)| s).sum();
    if total > 1.0 + SCORE_SUM_TOLERANCE {
        return Err(format!("scores sum to {total}, above 1"));
    }
    if assigned.len() == labels.len() && (total - 1.0).abs() > SCORE_SUM_TOLERANCE {
        return Err(format!("all labels assigned but scores sum to {total}"));
    }
    Ok(())
}

/// Deterministic backend replaying a [`MockSchedule`].
///
/// Requests map to schedule indices by `floor(timestamp / interval)`, so the
/// same schedule drives both thumbnails (one per interval) and decoded video
/// frames. An optional fixed cost is spent per call to model inference time.
#[derive(Debug, Clone)]
pub struct MockBackend {
    labels: LabelSet,
    schedule: MockSchedule,
    interval: f64,
    cost: Duration,
    calls: u64,
}

impl MockBackend {
    pub fn new(labels: LabelSet, schedule: MockSchedule) -> Self {
        Self {
            labels,
            schedule,
            interval: 1.0,
            cost: Duration::ZERO,
            calls: 0,
        }
    }

    pub fn uniform(labels: LabelSet) -> Self {
        Self::new(labels, MockSchedule::new())
    }

    pub fn with_interval(mut self, interval: f64) -> Self {
        assert!(interval > 0.0);
        self.interval = interval;
        self
    }

    pub fn with_cost(mut self, cost: Duration) -> Self {
        self.cost = cost;
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    fn slot(&self, timestamp: f64) -> u64 {
        (timestamp / self.interval + 1e-9).floor().max(0.0) as u64
    }
}

impl ScorerBackend for MockBackend {
    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn score(&mut self, request: &ScoreRequest<'_>) -> Result<ScoreVector, ScoreError> {
        self.calls += 1;
        if !self.cost.is_zero() {
            spend(self.cost);
        }
        Ok(self.schedule.scores_for(&self.labels, self.slot(request.timestamp)))
    }
}

/// Sleeps for most of `cost`, then spins out the remainder.
fn spend(cost: Duration) {
    let start = Instant::now();
    if cost > Duration::from_millis(1) {
        std::thread::sleep(cost - Duration::from_millis(1));
    }
    while start.elapsed() < cost {
        std::hint::spin_loop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::RasterImage;

    fn request(image: &RasterImage, index: u64) -> ScoreRequest<'_> {
        ScoreRequest {
            image,
            index,
            timestamp: index as f64,
        }
    }

    #[test]
    fn scheduled_index_gets_injected_score() {
        let labels = LabelSet::sports_events();
        let schedule = MockSchedule::parse("5 soccer_penalty:0.95\n", &labels).unwrap();
        let mut backend = MockBackend::new(labels.clone(), schedule);
        let img = RasterImage::solid(4, 4, [0, 0, 0]).unwrap();
        let sv = backend.score(&request(&img, 5)).unwrap();
        assert_eq!(sv.get(labels.index_of("soccer_penalty").unwrap()), 0.95);
        let sum: f32 = sv.scores().iter().sum();
        assert!((sum - 1.0).abs() < 1e-4);
        let other = backend.score(&request(&img, 4)).unwrap();
        assert_eq!(other, ScoreVector::uniform(10));
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn default_is_uniform() {
        let labels = LabelSet::sports_events();
        let mut backend = MockBackend::uniform(labels);
        let img = RasterImage::solid(1, 1, [0, 0, 0]).unwrap();
        let sv = backend.score(&request(&img, 0)).unwrap();
        assert!(sv.scores().iter().all(|&s| s == 0.1));
    }

    #[test]
    fn frames_map_to_thumbnail_slots() {
        let labels = LabelSet::sports_events();
        let schedule = MockSchedule::new().with(&labels, 35, &[("punch", 0.9)]).unwrap();
        let mut backend = MockBackend::new(labels.clone(), schedule);
        let img = RasterImage::solid(1, 1, [0, 0, 0]).unwrap();
        let punch = labels.index_of("punch").unwrap();
        for frame in [1050u64, 1065, 1079] {
            let req = ScoreRequest {
                image: &img,
                index: frame,
                timestamp: frame as f64 / 30.0,
            };
            assert_eq!(backend.score(&req).unwrap().get(punch), 0.9, "frame {frame}");
        }
        let req = ScoreRequest {
            image: &img,
            index: 1080,
            timestamp: 36.0,
        };
        assert_eq!(backend.score(&req).unwrap().get(punch), 1.0 / labels.len() as f32);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let labels = LabelSet::sports_events();
        let err = MockSchedule::parse("# header\n1 punch:0.5\nx punch:0.2\n", &labels).unwrap_err();
        assert!(matches!(err, ScoreError::Schedule { line: 3, .. }), "{err}");
        let err = MockSchedule::parse("1 curling:0.5\n", &labels).unwrap_err();
        assert!(err.to_string().contains("unknown label"));
        assert!(MockSchedule::parse("1 punch:0.7 basketball:0.7\n", &labels).is_err());
        assert!(MockSchedule::parse("1 punch:0.5\n1 punch:0.5\n", &labels).is_err());
        assert!(MockSchedule::parse("1\n", &labels).is_err());
    }

    #[test]
    fn text_round_trip() {
        let labels = LabelSet::sports_events();
        let schedule = MockSchedule::parse("3 punch:0.9\n7 tennis_swing:0.85 basketball:0.1\n", &labels).unwrap();
        assert_eq!(MockSchedule::parse(&schedule.to_text(&labels), &labels).unwrap(), schedule);
    }

    #[test]
    fn injected_cost_is_spent() {
        let mut backend = MockBackend::uniform(LabelSet::sports_events()).with_cost(Duration::from_millis(3));
        let img = RasterImage::solid(1, 1, [0, 0, 0]).unwrap();
        let start = Instant::now();
        for i in 0..5 {
            backend.score(&request(&img, i)).unwrap();
        }
        assert!(start.elapsed() >= Duration::from_millis(15));
    }
}
