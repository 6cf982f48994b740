#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use ltcgif::prep::{prep_synthetic, SyntheticPattern};
use ltcgif::transcode::Transcoder;
use ltcgif::{ContainerGeometry, VideoMeta};
use tempfile::TempDir;

pub struct Prepped {
    pub root: PathBuf,
    pub video_id: String,
    pub meta: VideoMeta,
    _dir: TempDir,
}

impl Prepped {
    pub fn dir(&self) -> PathBuf {
        self.root.join(&self.video_id)
    }
}

pub fn scratch() -> TempDir {
    tempfile::Builder::new()
        .prefix("ltcgif-")
        .tempdir_in(env!("CARGO_TARGET_TMPDIR"))
        .expect("scratch dir")
}

pub fn prepare(video_id: &str, duration: f64, fps: f64) -> Prepped {
    let dir = scratch();
    let meta = prep_synthetic(
        &Transcoder::locate(),
        dir.path(),
        video_id,
        duration,
        fps,
        SyntheticPattern::default(),
        10.0,
        ContainerGeometry::default(),
    )
    .expect("synthetic prep");
    Prepped {
        root: dir.path().to_path_buf(),
        video_id: video_id.to_string(),
        meta,
        _dir: dir,
    }
}

/// 60 s, 30 fps synthetic video, prepped once per test binary.
pub fn sixty_seconds() -> &'static Prepped {
    static FIXTURE: OnceLock<Prepped> = OnceLock::new();
    FIXTURE.get_or_init(|| prepare("demo", 60.0, 30.0))
}

pub fn fixture_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}
