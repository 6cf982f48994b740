mod common;

use std::fs;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use common::{scratch, sixty_seconds};
use ltcgif::hls::{FetchError, HlsClient, RetryPolicy};
use ltcgif::origin::{serve, FaultPlan, OriginServer, RequestLogEntry, ServeOptions};

fn start(root: &std::path::Path, plan: Option<FaultPlan>) -> OriginServer {
    serve(
        root,
        "127.0.0.1:0",
        ServeOptions {
            fault_plan: plan,
            ..ServeOptions::default()
        },
    )
    .unwrap()
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        initial_backoff: Duration::from_millis(5),
        ..RetryPolicy::default()
    }
}

fn raw_get(server: &OriginServer, path: &str) -> u16 {
    let mut s = TcpStream::connect(server.addr()).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    s.read_to_string(&mut response).ok();
    response.split_whitespace().nth(1).unwrap().parse().unwrap()
}

fn paths(log: &[RequestLogEntry]) -> Vec<&str> {
    log.iter().map(|e| e.path.as_str()).collect()
}

#[test]
fn fresh_server_has_empty_log() {
    let server = start(&sixty_seconds().root, None);
    assert!(server.snapshot_log().is_empty());
}

#[test]
fn serves_files_byte_exact_and_logs_each_request() {
    let p = sixty_seconds();
    let server = start(&p.root, None);
    let client = HlsClient::new(&server.base_url());
    for rel in ["playlist.m3u8", "storyboard.json", "ltc/1.jpg", "seg/2.ts"] {
        let body = client.get(&client.video_url("demo", rel)).unwrap();
        assert_eq!(body, fs::read(p.dir().join(rel)).unwrap(), "{rel}");
    }
    let again = client.get(&client.video_url("demo", "seg/2.ts")).unwrap();
    assert_eq!(again, fs::read(p.dir().join("seg/2.ts")).unwrap());

    let log = server.snapshot_log();
    assert_eq!(
        paths(&log),
        [
            "/video/demo/playlist.m3u8",
            "/video/demo/storyboard.json",
            "/video/demo/ltc/1.jpg",
            "/video/demo/seg/2.ts",
            "/video/demo/seg/2.ts"
        ]
    );
    assert!(log.iter().all(|e| e.status == 200));
    assert_eq!(log[3].bytes_sent, fs::metadata(p.dir().join("seg/2.ts")).unwrap().len());
    assert!(log.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));

    let mut jsonl = Vec::new();
    server.write_log_jsonl(&mut jsonl).unwrap();
    let parsed: Vec<RequestLogEntry> = String::from_utf8(jsonl)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(parsed, log);
}

#[test]
fn missing_and_unrouted_paths_are_404() {
    let p = sixty_seconds();
    let server = start(&p.root, None);
    let client = HlsClient::with_retry(&server.base_url(), fast_retry());
    let err = client.get(&client.video_url("demo", "seg/99.ts")).unwrap_err();
    assert!(matches!(err, FetchError::NotFound { .. }), "{err}");
    // not-found is final: one request, no retries
    assert_eq!(client.stats().requests, 1);
    assert_eq!(client.stats().retries, 0);

    for path in [
        "/video/../demo/playlist.m3u8",
        "/video/demo/../demo/playlist.m3u8",
        "/video/demo/source.mp4",
        "/video/nope/playlist.m3u8",
        "/etc/passwd",
        "/",
    ] {
        assert_eq!(raw_get(&server, path), 404, "{path}");
    }
    assert_eq!(raw_get(&server, "/video/demo/playlist.m3u8"), 200);
    assert!(server.snapshot_log().iter().filter(|e| e.status == 404).count() >= 7);
}

#[test]
fn fault_plan_forces_statuses_in_order() {
    let p = sixty_seconds();
    let server = start(&p.root, Some(FaultPlan::new().with("/video/*/seg/0.ts", &[503, 200])));
    let once = HlsClient::with_retry(
        &server.base_url(),
        RetryPolicy {
            attempts: 1,
            ..fast_retry()
        },
    );
    let url = once.video_url("demo", "seg/0.ts");
    assert!(matches!(once.get(&url), Err(FetchError::Status { status: 503, .. })));
    assert_eq!(once.get(&url).unwrap(), fs::read(p.dir().join("seg/0.ts")).unwrap());
    let statuses: Vec<u16> = server.snapshot_log().iter().map(|e| e.status).collect();
    assert_eq!(statuses, [503, 200]);
}

#[test]
fn transient_failure_is_retried_once() {
    let p = sixty_seconds();
    let server = start(&p.root, Some(FaultPlan::new().with("*/seg/0.ts", &[503])));
    let client = HlsClient::with_retry(&server.base_url(), fast_retry());
    let playlist = client.fetch_playlist("demo").unwrap();
    client.reset_stats();
    let bytes = client.fetch_segment(&playlist, 0).unwrap();
    assert_eq!(bytes, fs::read(p.dir().join("seg/0.ts")).unwrap());
    let stats = client.stats();
    assert_eq!((stats.requests, stats.retries), (2, 1));
    assert_eq!(stats.bytes, bytes.len() as u64);
}

#[test]
fn exhausted_retries_are_a_transport_failure() {
    let p = sixty_seconds();
    let server = start(&p.root, Some(FaultPlan::new().with("*/seg/1.ts", &[500, 502, 503, 200])));
    let client = HlsClient::with_retry(&server.base_url(), fast_retry());
    let playlist = client.fetch_playlist("demo").unwrap();
    client.reset_stats();
    let err = client.fetch_segment(&playlist, 1).unwrap_err();
    assert!(matches!(err, FetchError::Status { status: 503, .. }), "{err}");
    assert_eq!((client.stats().requests, client.stats().retries), (3, 2));
    // the plan's final 200 is still pending
    assert!(client.fetch_segment(&playlist, 1).is_ok());
}

#[test]
fn unreachable_origin_is_a_transport_error() {
    let server = start(&scratch().path().to_path_buf(), None);
    let url = server.base_url();
    drop(server);
    let client = HlsClient::with_retry(
        &url,
        RetryPolicy {
            attempts: 2,
            ..fast_retry()
        },
    );
    let err = client.fetch_playlist("demo").unwrap_err();
    assert!(matches!(err, FetchError::Transport { .. }), "{err}");
    assert_eq!(client.stats().retries, 1);
}

#[test]
fn playlist_and_storyboard_of_prepped_video() {
    let server = start(&sixty_seconds().root, None);
    let client = HlsClient::new(&server.base_url());
    let playlist = client.fetch_playlist("demo").unwrap();
    assert_eq!(playlist.segments.len(), 6);
    assert_eq!(playlist.segment_duration, 10.0);
    assert_eq!(playlist.storyboard.thumbnail_count, 60);
    assert_eq!(playlist.storyboard.container_count(), 3);
    let meta = playlist.video_meta().unwrap();
    assert_eq!((meta.duration, meta.segment_count, meta.frame_count()), (60.0, 6, Some(1800)));
}

#[test]
fn containers_have_correct_valid_tiles() {
    let server = start(&sixty_seconds().root, None);
    let client = HlsClient::new(&server.base_url());
    let playlist = client.fetch_playlist("demo").unwrap();
    let first = client.fetch_container(&playlist, 0).unwrap();
    assert_eq!(first.valid_tiles, 25);
    assert_eq!(first.extract_tiles().unwrap().len(), 25);
    let last = client.fetch_container(&playlist, 2).unwrap();
    assert_eq!(last.valid_tiles, 10);
    let requests = client.stats().requests;
    assert!(matches!(client.fetch_container(&playlist, 3), Err(FetchError::Precondition(_))));
    assert_eq!(client.stats().requests, requests, "precondition failures make no request");
}

#[test]
fn segment_index_is_checked() {
    let p = sixty_seconds();
    let server = start(&p.root, None);
    let client = HlsClient::new(&server.base_url());
    let playlist = client.fetch_playlist("demo").unwrap();
    assert_eq!(client.fetch_segment(&playlist, 0).unwrap(), fs::read(p.dir().join("seg/0.ts")).unwrap());
    assert!(matches!(client.fetch_segment(&playlist, 6), Err(FetchError::Precondition(_))));
}

#[test]
fn prefetch_delivers_in_container_order() {
    let p = sixty_seconds();
    let server = start(&p.root, None);
    let client = HlsClient::new(&server.base_url());
    let playlist = client.fetch_playlist("demo").unwrap();
    for window in [1, 2, 4, 16] {
        let mut seen = Vec::new();
        client
            .prefetch_containers(&playlist, window, |i, bytes| {
                assert_eq!(bytes, fs::read(p.dir().join(format!("ltc/{i}.jpg"))).unwrap());
                seen.push(i);
                Ok::<(), FetchError>(())
            })
            .unwrap();
        assert_eq!(seen, [0, 1, 2], "window {window}");
    }
}

#[test]
fn prefetch_stops_on_consumer_error() {
    let server = start(&sixty_seconds().root, None);
    let client = HlsClient::new(&server.base_url());
    let playlist = client.fetch_playlist("demo").unwrap();
    let mut seen = Vec::new();
    let err = client
        .prefetch_containers(&playlist, 2, |i, _| {
            seen.push(i);
            if i == 1 {
                Err(FetchError::Precondition("stop".into()))
            } else {
                Ok(())
            }
        })
        .unwrap_err();
    assert!(matches!(err, FetchError::Precondition(_)));
    assert_eq!(seen, [0, 1]);
}

#[test]
fn prefetch_surfaces_fetch_errors() {
    let server = start(&sixty_seconds().root, Some(FaultPlan::new().with("*/ltc/1.jpg", &[404])));
    let client = HlsClient::new(&server.base_url());
    let playlist = client.fetch_playlist("demo").unwrap();
    let mut seen = Vec::new();
    let err = client
        .prefetch_containers(&playlist, 4, |i, _| {
            seen.push(i);
            Ok::<(), FetchError>(())
        })
        .unwrap_err();
    assert!(matches!(err, FetchError::NotFound { .. }), "{err}");
    assert_eq!(seen, [0]);
}

#[test]
fn malformed_playlist_is_a_parse_error() {
    let dir = scratch();
    let video = dir.path().join("bad");
    fs::create_dir_all(&video).unwrap();
    fs::write(video.join("playlist.m3u8"), "#EXTM3U\n#EXTINF:10.0,\nseg/0.ts\n").unwrap();
    fs::write(video.join("storyboard.json"), "{}").unwrap();
    let server = start(dir.path(), None);
    let client = HlsClient::new(&server.base_url());
    match client.fetch_playlist("bad") {
        Err(FetchError::Playlist { tag, .. }) => assert_eq!(tag, "#EXT-X-TARGETDURATION"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn concurrent_requests_are_all_logged() {
    let p = sixty_seconds();
    let server = start(&p.root, None);
    let client = HlsClient::new(&server.base_url());
    std::thread::scope(|s| {
        for i in 0..8 {
            let client = &client;
            s.spawn(move || {
                let rel = format!("seg/{}.ts", i % 6);
                assert_eq!(client.get(&client.video_url("demo", &rel)).unwrap(), fs::read(p.dir().join(&rel)).unwrap());
            });
        }
    });
    assert_eq!(server.snapshot_log().len(), 8);
}

#[test]
fn log_file_receives_json_lines() {
    let p = sixty_seconds();
    let dir = scratch();
    let log_path = dir.path().join("requests.jsonl");
    let server = serve(
        &p.root,
        "127.0.0.1:0",
        ServeOptions {
            log_file: Some(log_path.clone()),
            ..ServeOptions::default()
        },
    )
    .unwrap();
    let client = HlsClient::new(&server.base_url());
    client.fetch_playlist("demo").unwrap();
    server.shutdown();
    let lines: Vec<RequestLogEntry> = fs::read_to_string(&log_path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(paths(&lines), ["/video/demo/playlist.m3u8", "/video/demo/storyboard.json"]);
}

#[test]
fn bind_failure_is_reported() {
    let server = start(&sixty_seconds().root, None);
    let err = serve(&sixty_seconds().root, &server.addr().to_string(), ServeOptions::default()).unwrap_err();
    assert!(err.to_string().contains("cannot bind"), "{err}");
}
