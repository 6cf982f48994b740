//! Thin wrapper over an external `ffmpeg` executable.
//!
//! Every codec operation goes through one of four pinned command lines so the
//! executable can be swapped for any build that accepts the same flags:
//!
//! | operation | arguments |
//! |-----------|-----------|
//! | probe     | `-hide_banner -nostdin -i <input>` (stream info parsed from stderr) |
//! | decode    | `-v error -nostdin -i <input> [-t <secs>] -map 0:v:0 [-vf scale=<w>:<h>:flags=area] -f rawvideo -pix_fmt rgb24 -` |
//! | encode    | `-v error -y -f rawvideo -pix_fmt rgb24 -s <w>x<h> -r <fps> -i - -c:v libx264 -preset veryfast -crf 18 -pix_fmt yuv420p -g <fps> <out>` |
//! | segment   | `-v error -nostdin -y -i <input> -map 0:v:0 -map 0:a? -c:v libx264 -preset veryfast -crf 20 -pix_fmt yuv420p -force_key_frames expr:gte(t,n_forced*<d>) -sc_threshold 0 -c:a aac -f segment -segment_time <d> -segment_format mpegts -reset_timestamps 1 <dir>/%d.ts` |

use std::ffi::OsString;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::OnceLock;
use std::thread::JoinHandle;

use regex::Regex;
use thiserror::Error;

use crate::raster::{FrameSequence, RasterImage};

pub const FFMPEG_ENV: &str = "LTCGIF_FFMPEG";

#[derive(Debug, Error)]
pub enum TranscodeError {
    #[error("could not run {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: io::Error,
    },
    #[error("{command} exited with {status}: {stderr}")]
    Failed {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("could not read stream info of {path}: {message}")]
    Probe { path: PathBuf, message: String },
    #[error("transcoder I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediaInfo {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    /// Container-reported duration; absent for some streams.
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DecodeOptions {
    /// Stop after this many seconds of media.
    pub max_duration: Option<f64>,
    /// Scale frames to this size while decoding.
    pub size: Option<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcoder {
    program: PathBuf,
}

impl Default for Transcoder {
    fn default() -> Self {
        Self::locate()
    }
}

impl Transcoder {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
        }
    }

    /// `$LTCGIF_FFMPEG` if set, otherwise `ffmpeg` from `PATH`.
    pub fn locate() -> Self {
        match std::env::var_os(FFMPEG_ENV) {
            Some(p) if !p.is_empty() => Self::new(p),
            _ => Self::new("ffmpeg"),
        }
    }

    pub fn program(&self) -> &Path {
        &self.program
    }

    fn command(&self, args: &[OsString]) -> Command {
        let mut cmd = Command::new(&self.program);
        cmd.args(args);
        cmd
    }

    fn describe(&self, args: &[OsString]) -> String {
        let mut s = self.program.display().to_string();
        for a in args {
            s.push(' ');
            s.push_str(&a.to_string_lossy());
        }
        s
    }

    fn spawn(&self, mut cmd: Command) -> Result<Child, TranscodeError> {
        cmd.spawn().map_err(|source| TranscodeError::Spawn {
            program: self.program.display().to_string(),
            source,
        })
    }

    pub fn probe(&self, input: &Path) -> Result<MediaInfo, TranscodeError> {
        let args = os_args(["-hide_banner", "-nostdin", "-i"]).chain([input.as_os_str().to_owned()]).collect::<Vec<_>>();
        let mut cmd = self.command(&args);
        cmd.stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::piped());
        let output = self.spawn(cmd)?.wait_with_output()?;
        // ffmpeg exits non-zero when given no output; the stream info is still printed
        let stderr = String::from_utf8_lossy(&output.stderr);
        parse_probe(&stderr).map_err(|message| TranscodeError::Probe {
            path: input.to_path_buf(),
            message,
        })
    }

    /// Streams decoded RGB frames to `on_frame` in presentation order. The
    /// callback returns `false` to stop early.
    pub fn decode_each(
        &self,
        input: &Path,
        options: DecodeOptions,
        mut on_frame: impl FnMut(usize, RasterImage) -> bool,
    ) -> Result<MediaInfo, TranscodeError> {
        let info = self.probe(input)?;
        let (width, height) = options.size.unwrap_or((info.width, info.height));
        let mut args = os_args(["-v", "error", "-nostdin", "-i"]).collect::<Vec<_>>();
        args.push(input.as_os_str().to_owned());
        if let Some(t) = options.max_duration {
            args.extend(os_args(["-t".to_string(), format!("{t}")]));
        }
        args.extend(os_args(["-map", "0:v:0"]));
        if options.size.is_some() {
            args.extend(os_args(["-vf".to_string(), format!("scale={width}:{height}:flags=area")]));
        }
        args.extend(os_args(["-f", "rawvideo", "-pix_fmt", "rgb24", "-"]));

        let mut cmd = self.command(&args);
        cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
        let mut child = self.spawn(cmd)?;
        let stderr = drain(child.stderr.take().expect("stderr piped"));
        let mut stdout = child.stdout.take().expect("stdout piped");

        let frame_bytes = width as usize * height as usize * 3;
        let mut index = 0;
        let mut stopped = false;
        loop {
            let mut buf = vec![0u8; frame_bytes];
            match stdout.read_exact(&mut buf) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let frame = RasterImage::new(width, height, buf).expect("frame size matches buffer");
            if !on_frame(index, frame) {
                stopped = true;
                break;
            }
            index += 1;
        }
        if stopped {
            let _ = child.kill();
        }
        drop(stdout);
        let status = child.wait()?;
        let stderr = stderr.join().unwrap_or_default();
        if !stopped && !status.success() {
            return Err(TranscodeError::Failed {
                command: self.describe(&args),
                status: status.to_string(),
                stderr,
            });
        }
        Ok(MediaInfo {
            width,
            height,
            ..info
        })
    }

    pub fn decode(&self, input: &Path, options: DecodeOptions) -> Result<FrameSequence, TranscodeError> {
        let mut frames = Vec::new();
        let info = self.decode_each(input, options, |_, f| {
            frames.push(f);
            true
        })?;
        Ok(FrameSequence::new(info.fps, frames))
    }

    /// Decodes an in-memory media file (e.g. a downloaded segment).
    pub fn decode_bytes(&self, bytes: &[u8], extension: &str, options: DecodeOptions) -> Result<FrameSequence, TranscodeError> {
        let mut file = tempfile::Builder::new().suffix(&format!(".{extension}")).tempfile()?;
        file.write_all(bytes)?;
        file.flush()?;
        self.decode(file.path(), options)
    }

    /// Encodes RGB frames into an H.264 file.
    pub fn encode_frames(
        &self,
        frames: impl IntoIterator<Item = RasterImage>,
        width: u32,
        height: u32,
        fps: f64,
        output: &Path,
    ) -> Result<(), TranscodeError> {
        let mut args = os_args(["-v", "error", "-y", "-f", "rawvideo", "-pix_fmt", "rgb24"]).collect::<Vec<_>>();
        args.extend(os_args([
            "-s".to_string(),
            format!("{width}x{height}"),
            "-r".to_string(),
            format!("{fps}"),
            "-i".to_string(),
            "-".to_string(),
        ]));
        args.extend(os_args([
            "-c:v".to_string(),
            "libx264".to_string(),
            "-preset".to_string(),
            "veryfast".to_string(),
            "-crf".to_string(),
            "18".to_string(),
            "-pix_fmt".to_string(),
            "yuv420p".to_string(),
            "-g".to_string(),
            format!("{}", fps.round().max(1.0)),
        ]));
        args.push(output.as_os_str().to_owned());

        let mut cmd = self.command(&args);
        cmd.stdin(Stdio::piped()).stdout(Stdio::null()).stderr(Stdio::piped());
        let mut child = self.spawn(cmd)?;
        let stderr = drain(child.stderr.take().expect("stderr piped"));
        let mut stdin = child.stdin.take().expect("stdin piped");
        let mut write_result = Ok(());
        for frame in frames {
            assert_eq!((frame.width(), frame.height()), (width, height), "frame size");
            if let Err(e) = stdin.write_all(frame.pixels()) {
                write_result = Err(e);
                break;
            }
        }
        drop(stdin);
        let status = child.wait()?;
        let stderr = stderr.join().unwrap_or_default();
        if !status.success() {
            return Err(TranscodeError::Failed {
                command: self.describe(&args),
                status: status.to_string(),
                stderr,
            });
        }
        write_result?;
        Ok(())
    }

    /// Re-encodes `input` into `segment_duration`-second MPEG-TS files named
    /// `0.ts`, `1.ts`, ... in `dir`, with a keyframe on every boundary.
    pub fn segment(&self, input: &Path, dir: &Path, segment_duration: f64) -> Result<(), TranscodeError> {
        let d = format!("{segment_duration}");
        let mut args = os_args(["-v", "error", "-nostdin", "-y", "-i"]).collect::<Vec<_>>();
        args.push(input.as_os_str().to_owned());
        args.extend(os_args([
            "-map".to_string(),
            "0:v:0".to_string(),
            "-map".to_string(),
            "0:a?".to_string(),
            "-c:v".to_string(),
            "libx264".to_string(),
            "-preset".to_string(),
            "veryfast".to_string(),
            "-crf".to_string(),
            "20".to_string(),
            "-pix_fmt".to_string(),
            "yuv420p".to_string(),
            "-force_key_frames".to_string(),
            format!("expr:gte(t,n_forced*{d})"),
            "-sc_threshold".to_string(),
            "0".to_string(),
            "-c:a".to_string(),
            "aac".to_string(),
            "-f".to_string(),
            "segment".to_string(),
            "-segment_time".to_string(),
            d,
            "-segment_format".to_string(),
            "mpegts".to_string(),
            "-reset_timestamps".to_string(),
            "1".to_string(),
            // forced keyframes can land a hair before the boundary; without
            // slack the cut slips to the next natural keyframe
            "-segment_time_delta".to_string(),
            "0.001".to_string(),
        ]));
        args.push(dir.join("%d.ts").into_os_string());
        self.run(&args)
    }

    fn run(&self, args: &[OsString]) -> Result<(), TranscodeError> {
        let mut cmd = self.command(args);
        cmd.stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::piped());
        let output = self.spawn(cmd)?.wait_with_output()?;
        if !output.status.success() {
            return Err(TranscodeError::Failed {
                command: self.describe(args),
                status: output.status.to_string(),
                stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
            });
        }
        Ok(())
    }
}

fn os_args<S: Into<OsString>>(args: impl IntoIterator<Item = S>) -> impl Iterator<Item = OsString> {
    args.into_iter().map(Into::into)
}

fn drain(mut pipe: impl Read + Send + 'static) -> JoinHandle<String> {
    std::thread::spawn(move || {
        let mut s = String::new();
        let mut buf = Vec::new();
        let _ = pipe.read_to_end(&mut buf);
        s.push_str(&String::from_utf8_lossy(&buf));
        s
    })
}

fn parse_probe(stderr: &str) -> Result<MediaInfo, String> {
    static VIDEO: OnceLock<Regex> = OnceLock::new();
    static SIZE: OnceLock<Regex> = OnceLock::new();
    static FPS: OnceLock<Regex> = OnceLock::new();
    static TBR: OnceLock<Regex> = OnceLock::new();
    static DURATION: OnceLock<Regex> = OnceLock::new();
    let video = VIDEO.get_or_init(|| Regex::new(r"Stream #\d+:\d+.*?: Video: (.*)").unwrap());
    let size = SIZE.get_or_init(|| Regex::new(r"\b(\d{1,5})x(\d{1,5})\b").unwrap());
    let fps = FPS.get_or_init(|| Regex::new(r"(\d+(?:\.\d+)?) fps").unwrap());
    let tbr = TBR.get_or_init(|| Regex::new(r"(\d+(?:\.\d+)?) tbr").unwrap());
    let duration = DURATION.get_or_init(|| Regex::new(r"Duration: (\d+):(\d+):(\d+(?:\.\d+)?)").unwrap());

    let line = video
        .captures(stderr)
        .map(|c| c[1].to_string())
        .ok_or_else(|| {
            let last = stderr.lines().last().unwrap_or("").trim();
            format!("no video stream ({last})")
        })?;
    let dims = size.captures(&line).ok_or("no frame size in stream info")?;
    let rate = fps
        .captures(&line)
        .or_else(|| tbr.captures(&line))
        .ok_or("no frame rate in stream info")?;
    let fps: f64 = rate[1].parse().map_err(|_| "bad frame rate")?;
    if fps <= 0.0 {
        return Err("frame rate must be positive".into());
    }
    let duration = duration.captures(stderr).map(|c| {
        c[1].parse::<f64>().unwrap_or(0.0) * 3600.0 + c[2].parse::<f64>().unwrap_or(0.0) * 60.0 + c[3].parse::<f64>().unwrap_or(0.0)
    });
    Ok(MediaInfo {
        width: dims[1].parse().map_err(|_| "bad width")?,
        height: dims[2].parse().map_err(|_| "bad height")?,
        fps,
        duration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TS_PROBE: &str = "Input #0, mpegts, from 'seg/3.ts':
  Duration: 00:00:10.00, start: 1.400000, bitrate: 412 kb/s
  Program 1
  Stream #0:0[0x100]: Video: h264 (High) ([27][0][0][0] / 0x001B), yuv420p(progressive), 320x180 [SAR 1:1 DAR 16:9], 30 fps, 30 tbr, 90k tbn
At least one output file must be specified";

    #[test]
    fn parses_stream_info() {
        let info = parse_probe(TS_PROBE).unwrap();
        assert_eq!(
            info,
            MediaInfo {
                width: 320,
                height: 180,
                fps: 30.0,
                duration: Some(10.0)
            }
        );
    }

    #[test]
    fn parses_fractional_rates() {
        let s = "  Duration: 01:52:14.50, start: 0.000000\n  Stream #0:0(und): Video: h264 (avc1 / 0x31637661), yuv420p, 640x480, 1000 kb/s, 29.97 fps, 29.97 tbr, 30k tbn (default)";
        let info = parse_probe(s).unwrap();
        assert_eq!((info.width, info.height), (640, 480));
        assert!((info.fps - 29.97).abs() < 1e-9);
        assert_eq!(info.duration, Some(6734.5));
    }

    #[test]
    fn missing_video_stream_is_an_error() {
        assert!(parse_probe("/x.ts: No such file or directory").unwrap_err().contains("No such file"));
    }

    #[test]
    fn missing_program_is_a_spawn_error() {
        let t = Transcoder::new("/nonexistent/ffmpeg");
        assert!(matches!(t.probe(Path::new("x.mp4")), Err(TranscodeError::Spawn { .. })));
    }
}
