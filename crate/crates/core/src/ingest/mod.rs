//! Real footage to observations: triplet extraction from videos (through an
//! external decoder) or image sequences, letterbox resizing, manifest
//! construction and balanced split assignment.

mod resize;
mod split;

use std::path::{Path, PathBuf};
use std::process::Command;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::model::{
    ConflictLabel, Frame, ImageRef, ModelError, Observation, Provenance, Split, FRAMES_PER_OBSERVATION,
    FRAME_INTERVAL_S,
};
use crate::sim::render::encode_png;

pub use resize::{letterbox, Letterbox, ResizeTarget};
pub use split::{assign_splits, build_manifest, SplitCounts};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("invalid source: {0}")]
    InvalidSource(String),
    #[error("invalid extraction request: {0}")]
    InvalidRequest(String),
    #[error("timestamp {t} s (frame {index}) is beyond the source ({available})")]
    OutOfRange { t: f64, index: u64, available: String },
    #[error("decoder failed ({status}): {stderr}")]
    DecoderFailure { status: String, stderr: String },
    #[error("image sequence has duplicate sort key {0:?}")]
    AmbiguousSequence(String),
    #[error("image decoding failed for {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("duplicate observation id {0:?}")]
    DuplicateId(String),
    #[error("split {split} count {count} is odd; splits are class-balanced")]
    OddSplitCount { split: Split, count: usize },
    #[error("class {label} has {available} observations, {needed} needed")]
    InsufficientClass { label: ConflictLabel, needed: usize, available: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    VideoFile,
    ImageSequenceDir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub path: PathBuf,
    /// Capture rate, frames per second.
    pub fps: f64,
    /// Known duration of a video, seconds. Image sequences derive it from
    /// their length. Without it, range checks on videos are left to the decoder.
    #[serde(default)]
    pub duration_s: Option<f64>,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(IngestError::InvalidSource(format!("fps must be positive, got {}", self.fps)));
        }
        if !self.path.exists() {
            return Err(IngestError::InvalidSource(format!("{} does not exist", self.path.display())));
        }
        match self.kind {
            SourceKind::VideoFile if !self.path.is_file() => {
                Err(IngestError::InvalidSource(format!("{} is not a file", self.path.display())))
            }
            SourceKind::ImageSequenceDir if !self.path.is_dir() => {
                Err(IngestError::InvalidSource(format!("{} is not a directory", self.path.display())))
            }
            _ => Ok(()),
        }
    }

    /// Stable identifier derived from the file or directory name.
    pub fn source_id(&self) -> String {
        let stem = self.path.file_stem().map(|s| s.to_string_lossy().into_owned());
        stem.unwrap_or_else(|| "source".into())
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect()
    }
}

/// Source frame index shown at time `t`: `fps * t` rounded half up.
pub fn frame_index(fps: f64, t: f64) -> u64 {
    // the epsilon keeps exact halves like 62.5 from landing on 62.4999...
    (fps * t + 0.5 + 1e-9).floor() as u64
}

pub fn triplet_indices(fps: f64, start: f64, interval: f64) -> [u64; 3] {
    [0, 1, 2].map(|k| frame_index(fps, start + k as f64 * interval))
}

/// External video decoder: a command template whose whitespace-separated
/// tokens may contain `{input}`, `{timestamp}` (seconds) and `{output}`
/// (a PNG path). The command must write one still image and exit 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub command: String,
}

impl DecoderConfig {
    pub fn argv(&self, input: &Path, timestamp: f64, output: &Path) -> Result<Vec<String>, IngestError> {
        let argv: Vec<String> = self
            .command
            .split_whitespace()
            .map(|tok| {
                tok.replace("{input}", &input.to_string_lossy())
                    .replace("{timestamp}", &format!("{timestamp:.6}"))
                    .replace("{output}", &output.to_string_lossy())
            })
            .collect();
        if argv.is_empty() {
            return Err(IngestError::InvalidRequest("empty decoder command".into()));
        }
        Ok(argv)
    }

    fn decode(&self, input: &Path, timestamp: f64, output: &Path) -> Result<(), IngestError> {
        let argv = self.argv(input, timestamp, output)?;
        let out = Command::new(&argv[0]).args(&argv[1..]).output().map_err(|e| IngestError::DecoderFailure {
            status: "spawn failed".into(),
            stderr: format!("{}: {e}", argv[0]),
        })?;
        if !out.status.success() {
            return Err(IngestError::DecoderFailure {
                status: out.status.to_string(),
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        if !output.is_file() {
            return Err(IngestError::DecoderFailure {
                status: out.status.to_string(),
                stderr: format!("decoder wrote nothing to {}", output.display()),
            });
        }
        Ok(())
    }
}

/// How capture start times are chosen within a source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum StartSelection {
    /// Every `stride_s` seconds from 0 while a full triplet fits.
    Stride { stride_s: f64 },
    Explicit { starts: Vec<f64> },
}

impl StartSelection {
    /// Start times for a source lasting `duration` seconds (if known).
    pub fn starts(&self, duration: Option<f64>) -> Result<Vec<f64>, IngestError> {
        match self {
            StartSelection::Explicit { starts } => Ok(starts.clone()),
            StartSelection::Stride { stride_s } => {
                if !(*stride_s > 0.0) {
                    return Err(IngestError::InvalidRequest("stride must be positive".into()));
                }
                let d = duration.ok_or_else(|| {
                    IngestError::InvalidRequest("a stride sweep needs a known source duration".into())
                })?;
                let span = 2.0 * FRAME_INTERVAL_S;
                let mut out = Vec::new();
                let mut k = 0u64;
                loop {
                    let s = k as f64 * stride_s;
                    if s + span > d + 1e-9 {
                        break;
                    }
                    out.push(s);
                    k += 1;
                }
                Ok(out)
            }
        }
    }
}

/// Where extracted frames go and how they are produced.
#[derive(Debug, Clone)]
pub struct Extractor {
    pub workspace: PathBuf,
    /// Relative to `workspace`.
    pub frames_dir: String,
    pub resize: Option<ResizeTarget>,
    pub decoder: Option<DecoderConfig>,
}

impl Extractor {
    pub fn new(workspace: impl Into<PathBuf>) -> Self {
        Extractor {
            workspace: workspace.into(),
            frames_dir: "frames".into(),
            resize: Some(ResizeTarget::default()),
            decoder: None,
        }
    }
}

/// Sorted image files of a sequence directory, keyed by file stem.
pub fn sequence_files(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) || !path.is_file() {
            continue;
        }
        let key = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        files.push((key, path));
    }
    files.sort();
    if let Some(w) = files.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(IngestError::AmbiguousSequence(w[0].0.clone()));
    }
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

fn load_rgb(path: &Path) -> Result<RgbImage, IngestError> {
    let err = |e: &dyn std::fmt::Display| IngestError::Image { path: path.to_owned(), reason: e.to_string() };
    let reader = image::ImageReader::open(path)?.with_guessed_format().map_err(|e| err(&e))?;
    Ok(reader.decode().map_err(|e| err(&e))?.to_rgb8())
}

/// Extract one observation's frames starting at `start` seconds.
///
/// Frame `k` is source frame `round(fps * (start + k * interval))`. The
/// observation schema fixes the spacing at 0.5 s, so any other `interval` is
/// rejected.
pub fn extract_triplet(
    src: &SourceSpec,
    start: f64,
    interval: f64,
    observation_id: &str,
    ex: &Extractor,
) -> Result<Vec<Frame>, IngestError> {
    src.validate()?;
    if !(start >= 0.0 && start.is_finite()) {
        return Err(IngestError::InvalidRequest(format!("start must be >= 0, got {start}")));
    }
    if !(interval > 0.0) {
        return Err(IngestError::InvalidRequest("interval must be positive".into()));
    }
    if (interval - FRAME_INTERVAL_S).abs() > 1e-9 {
        return Err(IngestError::InvalidRequest(format!(
            "observations are spaced {FRAME_INTERVAL_S} s apart, got interval {interval}"
        )));
    }
    let indices = triplet_indices(src.fps, start, interval);
    let times: Vec<f64> = (0..FRAMES_PER_OBSERVATION).map(|k| start + k as f64 * interval).collect();

    let out_dir = ex.workspace.join(&ex.frames_dir);
    std::fs::create_dir_all(&out_dir)?;

    let images: Vec<RgbImage> = match src.kind {
        SourceKind::ImageSequenceDir => {
            let files = sequence_files(&src.path)?;
            let mut imgs = Vec::new();
            for (k, &idx) in indices.iter().enumerate() {
                let file = files.get(idx as usize).ok_or_else(|| IngestError::OutOfRange {
                    t: times[k],
                    index: idx,
                    available: format!("{} frames", files.len()),
                })?;
                imgs.push(load_rgb(file)?);
            }
            imgs
        }
        SourceKind::VideoFile => {
            if let Some(d) = src.duration_s {
                let last = frame_index(src.fps, d);
                for (k, &idx) in indices.iter().enumerate() {
                    if times[k] > d + 1e-9 || idx > last {
                        return Err(IngestError::OutOfRange {
                            t: times[k],
                            index: idx,
                            available: format!("{d} s"),
                        });
                    }
                }
            }
            let decoder = ex
                .decoder
                .as_ref()
                .ok_or_else(|| IngestError::InvalidRequest("video sources need a decoder command".into()))?;
            let mut imgs = Vec::new();
            for &idx in &indices {
                let tmp = out_dir.join(format!(".{observation_id}_decode_{idx}.png"));
                // decode at the sampled frame's own timestamp
                let result = decoder.decode(&src.path, idx as f64 / src.fps, &tmp).and_then(|_| load_rgb(&tmp));
                let _ = std::fs::remove_file(&tmp);
                imgs.push(result?);
            }
            imgs
        }
    };

    let mut frames = Vec::with_capacity(FRAMES_PER_OBSERVATION);
    for (k, img) in images.into_iter().enumerate() {
        let img = match ex.resize {
            Some(target) => letterbox(&img, target).0,
            None => img,
        };
        let png = encode_png(&img).map_err(|e| IngestError::Image {
            path: out_dir.clone(),
            reason: e.to_string(),
        })?;
        let name = crate::sim::render::frame_file_name(observation_id, k);
        std::fs::write(out_dir.join(&name), &png)?;
        frames.push(Frame {
            index: k as u8,
            time_offset: FRAME_INTERVAL_S * k as f64,
            width_px: img.width(),
            height_px: img.height(),
            image_ref: ImageRef::for_file(format!("{}/{name}", ex.frames_dir), &png),
            source_id: src.source_id(),
        });
    }
    Ok(frames)
}

/// Observation id for the triplet starting at `start` seconds.
pub fn observation_id(src: &SourceSpec, start: f64) -> String {
    format!("{}-t{:07}", src.source_id(), (start * 1000.0).round() as u64)
}

/// Duration of a source when it can be known without decoding.
pub fn source_duration(src: &SourceSpec) -> Result<Option<f64>, IngestError> {
    match src.kind {
        SourceKind::VideoFile => Ok(src.duration_s),
        SourceKind::ImageSequenceDir => {
            let n = sequence_files(&src.path)?.len();
            // the last frame is shown at (n - 1) / fps
            Ok(Some(n.saturating_sub(1) as f64 / src.fps))
        }
    }
}

/// Extract unlabeled observations from several sources, one worker per source.
pub fn ingest_sources(
    sources: &[SourceSpec],
    starts: &StartSelection,
    ex: &Extractor,
) -> Result<Vec<Observation>, IngestError> {
    let results: Vec<Result<Vec<Observation>, IngestError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sources
            .iter()
            .map(|src| {
                scope.spawn(move || {
                    let mut out = Vec::new();
                    for start in starts.starts(source_duration(src)?)? {
                        let id = observation_id(src, start);
                        let frames = extract_triplet(src, start, FRAME_INTERVAL_S, &id, ex)?;
                        out.push(Observation {
                            id,
                            frames,
                            ground_truth: None,
                            split: None,
                            provenance: Provenance::Ingested,
                            scenario_ref: None,
                        });
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ingest worker panicked")).collect()
    });
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    all.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn index_rounding() {
        assert_eq!(triplet_indices(30.0, 0.0, 0.5), [0, 15, 30]);
        assert_eq!(triplet_indices(25.0, 2.0, 0.5), [50, 63, 75]);
        assert_eq!(triplet_indices(29.97, 1.0, 0.5), [30, 45, 60]);
        assert_eq!(frame_index(10.0, 0.049), 0);
        assert_eq!(frame_index(10.0, 0.05), 1);
    }

    fn sequence(dir: &Path, n: usize, w: u32, h: u32) {
        std::fs::create_dir_all(dir).unwrap();
        for i in 0..n {
            let img = RgbImage::from_pixel(w, h, Rgb([i as u8, 0, 0]));
            img.save(dir.join(format!("img_{i:04}.png"))).unwrap();
        }
    }

    fn seq_src(dir: &Path, fps: f64) -> SourceSpec {
        SourceSpec { kind: SourceKind::ImageSequenceDir, path: dir.to_owned(), fps, duration_s: None }
    }

    #[test]
    fn sequence_picks_frames_by_index() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("drone");
        sequence(&dir, 31, 40, 20);
        let mut ex = Extractor::new(tmp.path().join("ws"));
        ex.resize = Some(ResizeTarget { width_px: 64, height_px: 64 });
        let frames = extract_triplet(&seq_src(&dir, 30.0), 0.0, 0.5, "obs", &ex).unwrap();
        for (k, f) in frames.iter().enumerate() {
            f.validate().unwrap();
            assert_eq!((f.width_px, f.height_px), (64, 64));
            let bytes = f.image_ref.load(&ex.workspace).unwrap();
            let img = image::load_from_memory(&bytes).unwrap().to_rgb8();
            // 40x20 scales to 64x32, centered vertically
            assert_eq!(img.get_pixel(32, 32)[0], (15 * k) as u8);
            assert_eq!(*img.get_pixel(32, 4), Rgb([0, 0, 0]));
        }
        assert_eq!(frames[0].source_id, "drone");
    }

    #[test]
    fn sequence_out_of_range() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s");
        sequence(&dir, 30, 8, 8);
        let ex = Extractor::new(tmp.path());
        let err = extract_triplet(&seq_src(&dir, 30.0), 0.0, 0.5, "o", &ex).unwrap_err();
        assert!(matches!(err, IngestError::OutOfRange { index: 30, .. }));
    }

    #[test]
    fn duplicate_stems_are_ambiguous() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s");
        sequence(&dir, 3, 8, 8);
        std::fs::copy(dir.join("img_0001.png"), dir.join("img_0001.jpg")).unwrap();
        assert!(matches!(sequence_files(&dir), Err(IngestError::AmbiguousSequence(k)) if k == "img_0001"));
    }

    #[test]
    fn non_half_second_interval_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("s");
        sequence(&dir, 40, 8, 8);
        let ex = Extractor::new(tmp.path());
        assert!(matches!(
            extract_triplet(&seq_src(&dir, 30.0), 0.0, 0.4, "o", &ex),
            Err(IngestError::InvalidRequest(_))
        ));
        assert!(extract_triplet(&seq_src(&dir, 30.0), -1.0, 0.5, "o", &ex).is_err());
    }

    #[test]
    fn invalid_sources() {
        let tmp = tempfile::tempdir().unwrap();
        let bad_fps = seq_src(tmp.path(), 0.0);
        assert!(matches!(bad_fps.validate(), Err(IngestError::InvalidSource(_))));
        let missing = seq_src(&tmp.path().join("nope"), 30.0);
        assert!(missing.validate().is_err());
    }

    #[cfg(unix)]
    fn video_fixture(tmp: &Path) -> (SourceSpec, DecoderConfig) {
        let video = tmp.join("clip.mp4");
        std::fs::write(&video, b"not really a video").unwrap();
        let still = tmp.join("still.png");
        RgbImage::from_pixel(16, 9, Rgb([1, 2, 3])).save(&still).unwrap();
        let script = tmp.join("decode.sh");
        // records every requested timestamp, then copies the still
        std::fs::write(
            &script,
            format!("#!/bin/sh\necho \"$2\" >> {}\ncp {} \"$3\"\n", tmp.join("calls.txt").display(), still.display()),
        )
        .unwrap();
        let src = SourceSpec { kind: SourceKind::VideoFile, path: video, fps: 25.0, duration_s: Some(10.0) };
        let dec = DecoderConfig { command: format!("sh {} {{input}} {{timestamp}} {{output}}", script.display()) };
        (src, dec)
    }

    #[cfg(unix)]
    #[test]
    fn video_goes_through_the_decoder() {
        let tmp = tempfile::tempdir().unwrap();
        let (src, dec) = video_fixture(tmp.path());
        let mut ex = Extractor::new(tmp.path().join("ws"));
        ex.decoder = Some(dec);
        ex.resize = None;
        let frames = extract_triplet(&src, 2.0, 0.5, "clip-a", &ex).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!((frames[2].width_px, frames[2].height_px), (16, 9));
        let calls = std::fs::read_to_string(tmp.path().join("calls.txt")).unwrap();
        assert_eq!(calls.lines().collect::<Vec<_>>(), ["2.000000", "2.520000", "3.000000"]);
        let leftovers = std::fs::read_dir(ex.workspace.join("frames"))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with('.'))
            .count();
        assert_eq!(leftovers, 0);

        assert!(matches!(extract_triplet(&src, 9.5, 0.5, "late", &ex), Err(IngestError::OutOfRange { .. })));
    }

    #[cfg(unix)]
    #[test]
    fn failing_decoder_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let (src, _) = video_fixture(tmp.path());
        let mut ex = Extractor::new(tmp.path());
        ex.decoder = Some(DecoderConfig { command: "false {input} {timestamp} {output}".into() });
        assert!(matches!(extract_triplet(&src, 0.0, 0.5, "x", &ex), Err(IngestError::DecoderFailure { .. })));
        ex.decoder = None;
        assert!(matches!(extract_triplet(&src, 0.0, 0.5, "x", &ex), Err(IngestError::InvalidRequest(_))));
    }

    #[test]
    fn stride_and_explicit_starts() {
        let s = StartSelection::Stride { stride_s: 0.5 };
        assert_eq!(s.starts(Some(2.0)).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(s.starts(None).is_err());
        let e = StartSelection::Explicit { starts: vec![3.0, 1.0] };
        assert_eq!(e.starts(None).unwrap(), vec![3.0, 1.0]);
    }

    #[test]
    fn ingest_several_sequences() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        sequence(&a, 21, 8, 8);
        sequence(&b, 11, 8, 8);
        let mut ex = Extractor::new(tmp.path().join("ws"));
        ex.resize = None;
        let obs = ingest_sources(
            &[seq_src(&a, 10.0), seq_src(&b, 10.0)],
            &StartSelection::Stride { stride_s: 0.5 },
            &ex,
        )
        .unwrap();
        // a lasts 2.0 s (3 starts), b lasts 1.0 s (1 start)
        let ids: Vec<_> = obs.iter().map(|o| o.id.as_str()).collect();
        assert_eq!(ids, ["a-t0000000", "a-t0000500", "a-t0001000", "b-t0000000"]);
        let m = build_manifest(obs, 0).unwrap();
        assert!(m.observations.iter().all(|o| o.provenance == Provenance::Ingested && o.ground_truth.is_none()));
    }
}
