mod common;

use std::fs;

use common::{prepare, scratch, sixty_seconds, Prepped};
use ltcgif::hls::{decode_container, parse_m3u8, StoryboardRef};
use ltcgif::prep::{palette_color, synthesize_test_video, PrepError, SyntheticPattern};
use ltcgif::transcode::{DecodeOptions, Transcoder};
use ltcgif::ContainerGeometry;

fn layout(p: &Prepped) -> (Vec<ltcgif::hls::SegmentRef>, StoryboardRef) {
    let dir = p.dir();
    let playlist = parse_m3u8(&fs::read_to_string(dir.join("playlist.m3u8")).unwrap()).unwrap();
    let storyboard = StoryboardRef::parse(&fs::read(dir.join("storyboard.json")).unwrap()).unwrap();
    (playlist.segments, storyboard)
}

fn thumbnails(p: &Prepped, sb: &StoryboardRef) -> Vec<ltcgif::RasterImage> {
    (0..sb.container_count())
        .flat_map(|c| {
            let bytes = fs::read(p.dir().join(sb.container_uri(c))).unwrap();
            decode_container(sb, c, &bytes).unwrap().extract_tiles().unwrap()
        })
        .map(|(_, img)| img)
        .collect()
}

#[test]
fn sixty_second_layout() {
    let p = sixty_seconds();
    assert_eq!(p.meta.duration, 60.0);
    assert_eq!(p.meta.segment_count, 6);
    let (segments, sb) = layout(p);
    assert_eq!(segments.len(), 6);
    assert!(segments.iter().all(|s| s.duration == 10.0));
    assert_eq!(sb.thumbnail_count, 60);
    assert_eq!(sb.container_count(), 3);
    assert_eq!(sb.fps, Some(30.0));
    for c in 0..3 {
        assert!(p.dir().join(format!("ltc/{c}.jpg")).is_file());
    }
    assert!(!p.dir().join("ltc/3.jpg").exists());
    for s in 0..6 {
        assert!(fs::metadata(p.dir().join(format!("seg/{s}.ts"))).unwrap().len() > 0);
    }
    assert!(!p.dir().join("seg/6.ts").exists());
}

#[test]
fn thumbnail_k_shows_second_k() {
    let p = sixty_seconds();
    let (_, sb) = layout(p);
    let thumbs = thumbnails(p, &sb);
    assert_eq!(thumbs.len(), 60);
    for (k, t) in thumbs.iter().enumerate() {
        let err = t.mean_abs_error(palette_color(k as u64));
        assert!(err <= 8.0, "thumbnail {k}: mean error {err:.2}");
    }
}

#[test]
fn segments_hold_exactly_their_seconds() {
    let p = sixty_seconds();
    let t = Transcoder::locate();
    for j in 0..6u64 {
        let clip = t
            .decode(&p.dir().join(format!("seg/{j}.ts")), DecodeOptions::default())
            .unwrap();
        assert_eq!(clip.fps, 30.0);
        assert_eq!(clip.len(), 300, "segment {j}");
        for s in [0u64, 4, 9] {
            let frame = &clip.frames[(s * 30 + 15) as usize];
            let err = frame.mean_abs_error(palette_color(10 * j + s));
            assert!(err <= 8.0, "segment {j} second {s}: {err:.2}");
        }
    }
}

#[test]
fn sixty_one_seconds_has_a_partial_tail() {
    let p = prepare("tail", 61.0, 10.0);
    assert_eq!(p.meta.segment_count, 7);
    let (segments, sb) = layout(&p);
    assert_eq!(segments.len(), 7);
    assert!((segments[6].duration - 1.0).abs() < 1e-9);
    assert_eq!(sb.thumbnail_count, 61);
    assert_eq!(sb.container_count(), 3);
    assert_eq!(sb.geometry.valid_tiles(2, 61), 11);
    let thumbs = thumbnails(&p, &sb);
    assert_eq!(thumbs.len(), 61);
    assert!(thumbs[60].mean_abs_error(palette_color(60)) <= 8.0);
}

#[test]
fn one_fps_ten_seconds() {
    let p = prepare("slow", 10.0, 1.0);
    let (segments, sb) = layout(&p);
    assert_eq!(segments.len(), 1);
    assert_eq!(sb.thumbnail_count, 10);
    assert_eq!(sb.container_count(), 1);
    for (k, t) in thumbnails(&p, &sb).iter().enumerate() {
        assert!(t.mean_abs_error(palette_color(k as u64)) <= 8.0, "thumbnail {k}");
    }
}

#[test]
fn zero_duration_is_rejected() {
    let dir = scratch();
    let err = synthesize_test_video(
        &Transcoder::locate(),
        0.0,
        30.0,
        SyntheticPattern::default(),
        &dir.path().join("x.mp4"),
    )
    .unwrap_err();
    assert!(matches!(err, PrepError::Synthetic(_)), "{err}");
}

#[test]
fn undecodable_source_reports_transcoder_diagnostics() {
    let dir = scratch();
    let bogus = dir.path().join("bogus.mp4");
    fs::write(&bogus, b"not a video").unwrap();
    let err = ltcgif::prep::prep(&Transcoder::locate(), &bogus, &dir.path().join("out"), 10.0, ContainerGeometry::default())
        .unwrap_err();
    assert!(matches!(err, PrepError::Transcode(_)), "{err}");
    assert!(!err.to_string().is_empty());
}

#[test]
fn two_hour_video_arithmetic() {
    let g = ContainerGeometry::default();
    assert_eq!(g.container_count(g.thumbnail_count(6734.0)), 270);
}
