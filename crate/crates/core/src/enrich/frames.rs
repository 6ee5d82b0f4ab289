//! Evenly spaced frame sampling from short video clips.
//!
//! Animated GIFs, directories of still frames and single still images are
//! decoded natively. Any other container goes through `ffprobe`/`ffmpeg`
//! when they are on `PATH`.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::{AnimationDecoder, RgbaImage};

/// Nominal spacing of frames in a still-frame directory.
const FRAME_DIR_INTERVAL_MS: u64 = 1000;

#[derive(Debug, Clone)]
pub struct Frame {
    /// Position of the frame in the decoded timeline.
    pub index: usize,
    pub timestamp_ms: u64,
    pub image: RgbaImage,
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("frame count must be at least 1")]
    ZeroCount,
    #[error("{uri}: cannot read media: {source}")]
    Unreadable {
        uri: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{uri}: corrupt or undecodable media: {message}")]
    Decode { uri: String, message: String },
    #[error("{uri}: unsupported media: {message}")]
    Unsupported { uri: String, message: String },
    #[error("{uri}: no decodable frames")]
    NoFrames { uri: String },
}

impl FrameError {
    pub fn is_missing_media(&self) -> bool {
        matches!(self, FrameError::Unreadable { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

/// A parsed `path#t=start,end` reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MediaRef {
    pub path: PathBuf,
    /// Clip window in milliseconds.
    pub window: Option<(u64, u64)>,
}

pub fn parse_media_ref(video_ref: &str, media_root: Option<&Path>) -> MediaRef {
    let stripped = video_ref.strip_prefix("file://").unwrap_or(video_ref);
    let (path, fragment) = match stripped.split_once('#') {
        Some((p, f)) => (p, Some(f)),
        None => (stripped, None),
    };
    let window = fragment.and_then(|f| f.strip_prefix("t=")).and_then(|span| {
        let (a, b) = span.split_once(',')?;
        let a: f64 = a.parse().ok()?;
        let b: f64 = b.parse().ok()?;
        (b >= a && a >= 0.0).then(|| ((a * 1000.0).round() as u64, (b * 1000.0).round() as u64))
    });
    let path = Path::new(path);
    let path = match media_root {
        Some(root) if path.is_relative() => root.join(path),
        _ => path.to_path_buf(),
    };
    MediaRef { path, window }
}

/// Picks `n` timeline positions from frames starting at `starts_ms`
/// (non-decreasing).
///
/// For `n >= 2` the targets are evenly spaced from the first to the last
/// frame start, inclusive; for `n == 1` the single target is their midpoint.
/// Each target resolves to the frame on screen at that instant. When `n` is
/// at least the frame count every frame is returned once.
pub fn select_frames(starts_ms: &[u64], n: usize) -> Vec<usize> {
    let count = starts_ms.len();
    if count == 0 || n == 0 {
        return Vec::new();
    }
    if n >= count {
        return (0..count).collect();
    }
    let first = starts_ms[0] as f64;
    let last = starts_ms[count - 1] as f64;
    let targets: Vec<f64> = if n == 1 {
        vec![(first + last) / 2.0]
    } else {
        (0..n).map(|i| first + (last - first) * i as f64 / (n - 1) as f64).collect()
    };
    targets
        .into_iter()
        .map(|t| starts_ms.iter().rposition(|&s| s as f64 <= t + 1e-6).unwrap_or(0))
        .collect()
}

/// Decodes `video_ref` and returns `n` evenly spaced frames.
///
/// Relative references resolve against `media_root`. Either every requested
/// frame is returned or an error is; there is no partial output.
pub fn extract_frames(video_ref: &str, media_root: Option<&Path>, n: usize) -> Result<Vec<Frame>, FrameError> {
    if n == 0 {
        return Err(FrameError::ZeroCount);
    }
    let media = parse_media_ref(video_ref, media_root);
    let uri = video_ref.to_string();
    let meta = std::fs::metadata(&media.path).map_err(|source| FrameError::Unreadable { uri: uri.clone(), source })?;

    if meta.is_dir() {
        return frames_from_dir(&media.path, &uri, n);
    }
    let ext = media.path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase()).unwrap_or_default();
    match ext.as_str() {
        "gif" => frames_from_gif(&media, &uri, n),
        "png" | "jpg" | "jpeg" => {
            let image = image::open(&media.path)
                .map_err(|e| FrameError::Decode { uri: uri.clone(), message: e.to_string() })?
                .to_rgba8();
            warn_short(&uri, n, 1);
            Ok(vec![Frame { index: 0, timestamp_ms: 0, image }])
        }
        _ => frames_with_ffmpeg(&media, &uri, n),
    }
}

fn warn_short(uri: &str, n: usize, available: usize) {
    if n > available {
        log::warn!("{uri}: requested {n} frames but only {available} are available; returning all of them");
    }
}

fn frames_from_gif(media: &MediaRef, uri: &str, n: usize) -> Result<Vec<Frame>, FrameError> {
    let file = File::open(&media.path).map_err(|source| FrameError::Unreadable { uri: uri.to_string(), source })?;
    let decode_err = |e: image::ImageError| FrameError::Decode { uri: uri.to_string(), message: e.to_string() };
    let decoder = image::codecs::gif::GifDecoder::new(BufReader::new(file)).map_err(decode_err)?;
    let frames = decoder.into_frames().collect_frames().map_err(decode_err)?;

    let mut timeline = Vec::with_capacity(frames.len());
    let mut t = 0u64;
    for frame in frames {
        let (num, den) = frame.delay().numer_denom_ms();
        timeline.push((t, frame.into_buffer()));
        t += if den == 0 { 0 } else { u64::from(num) / u64::from(den) };
    }
    if let Some((a, b)) = media.window {
        // keep the frame on screen at `a` and every frame starting inside the window
        let first = timeline.iter().rposition(|(s, _)| *s <= a).unwrap_or(0);
        timeline = timeline.into_iter().enumerate().filter(|(i, (s, _))| *i == first || (*s > a && *s <= b)).map(|(_, f)| f).collect();
    }
    if timeline.is_empty() {
        return Err(FrameError::NoFrames { uri: uri.to_string() });
    }
    let starts: Vec<u64> = timeline.iter().map(|(s, _)| *s).collect();
    warn_short(uri, n, starts.len());
    Ok(select_frames(&starts, n)
        .into_iter()
        .map(|i| Frame { index: i, timestamp_ms: starts[i], image: timeline[i].1.clone() })
        .collect())
}

fn frames_from_dir(dir: &Path, uri: &str, n: usize) -> Result<Vec<Frame>, FrameError> {
    let read = std::fs::read_dir(dir).map_err(|source| FrameError::Unreadable { uri: uri.to_string(), source })?;
    let mut files: Vec<PathBuf> = read
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|e| matches!(e.to_string_lossy().to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(FrameError::NoFrames { uri: uri.to_string() });
    }
    let starts: Vec<u64> = (0..files.len() as u64).map(|i| i * FRAME_DIR_INTERVAL_MS).collect();
    warn_short(uri, n, files.len());
    select_frames(&starts, n)
        .into_iter()
        .map(|i| {
            let image = image::open(&files[i])
                .map_err(|e| FrameError::Decode { uri: uri.to_string(), message: format!("{}: {e}", files[i].display()) })?
                .to_rgba8();
            Ok(Frame { index: i, timestamp_ms: starts[i], image })
        })
        .collect()
}

fn frames_with_ffmpeg(media: &MediaRef, uri: &str, n: usize) -> Result<Vec<Frame>, FrameError> {
    let unsupported = |message: String| FrameError::Unsupported { uri: uri.to_string(), message };
    let probe = Command::new("ffprobe")
        .args(["-v", "error", "-show_entries", "format=duration", "-of", "csv=p=0"])
        .arg(&media.path)
        .output()
        .map_err(|e| unsupported(format!("ffprobe is required for this container: {e}")))?;
    if !probe.status.success() {
        return Err(FrameError::Decode { uri: uri.to_string(), message: String::from_utf8_lossy(&probe.stderr).trim().to_string() });
    }
    let duration_s: f64 = String::from_utf8_lossy(&probe.stdout)
        .trim()
        .parse()
        .map_err(|_| FrameError::Decode { uri: uri.to_string(), message: "unknown duration".into() })?;
    let (start_ms, end_ms) = media.window.unwrap_or((0, (duration_s * 1000.0) as u64));
    // ffmpeg cannot seek onto the very end of a stream; stay one nominal frame short
    let end_ms = end_ms.saturating_sub(40).max(start_ms);
    let targets: Vec<u64> = if n == 1 {
        vec![(start_ms + end_ms) / 2]
    } else {
        (0..n).map(|i| start_ms + (end_ms - start_ms) * i as u64 / (n - 1) as u64).collect()
    };
    targets
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let out = Command::new("ffmpeg")
                .args(["-v", "error", "-ss", &format!("{:.3}", t as f64 / 1000.0), "-i"])
                .arg(&media.path)
                .args(["-frames:v", "1", "-f", "image2pipe", "-vcodec", "png", "-"])
                .output()
                .map_err(|e| unsupported(format!("ffmpeg is required for this container: {e}")))?;
            if !out.status.success() || out.stdout.is_empty() {
                return Err(FrameError::Decode {
                    uri: uri.to_string(),
                    message: String::from_utf8_lossy(&out.stderr).trim().to_string(),
                });
            }
            let image = image::load_from_memory(&out.stdout)
                .map_err(|e| FrameError::Decode { uri: uri.to_string(), message: e.to_string() })?
                .to_rgba8();
            Ok(Frame { index: i, timestamp_ms: t, image })
        })
        .collect()
}
