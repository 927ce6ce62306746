//! Frame-directory datasets: labels, face sidecars, frame sampling, cropping
//! and a synthetic forgery generator.

mod image;
mod synthetic;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use image::{crop_face, decode_ppm, encode_ppm, resize_bilinear, CropError, PpmError, RgbImage, FACE_MARGIN};
pub use synthetic::{generate_synthetic, render_video, BlendRect, RenderedVideo, SyntheticConfig, SyntheticOutput};

pub const LABELS_FILE: &str = "labels.csv";
pub const FACES_FILE: &str = "faces.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("labels file {0} not found")]
    MissingLabels(PathBuf),
    #[error("dataset lists no videos")]
    EmptyDataset,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("labels file line {line}: {reason}")]
    BadLabel { line: usize, reason: String },
    #[error("video '{0}' is listed more than once")]
    DuplicateId(String),
    #[error("video '{0}' has no directory under the dataset root")]
    MissingVideo(String),
    #[error("video '{0}' has no frames (expected frame_00000.ppm onward)")]
    NoFrames(String),
    #[error("malformed image {path}: {source}")]
    BadImage {
        path: PathBuf,
        #[source]
        source: PpmError,
    },
    #[error("video '{video_id}': frame {frame} is {got:?}, earlier frames are {expected:?}")]
    FrameSize {
        video_id: String,
        frame: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("face sidecar {path}: {reason}")]
    BadSidecar { path: PathBuf, reason: String },
    #[error(transparent)]
    Crop(#[from] CropError),
    #[error("frame sampling needs at least one frame and n >= 1 (got T={frames}, n={n})")]
    Sampling { frames: usize, n: usize },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Normalized face box, `(x, y)` top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl FaceBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Option<Self> {
        let b = Self { x, y, w, h };
        b.is_valid().then_some(b)
    }

    pub fn full_frame() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            w: 1.0,
            h: 1.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        // small slack so boxes written as decimals still satisfy x + w <= 1
        const SLACK: f64 = 1e-9;
        self.x >= 0.0
            && self.y >= 0.0
            && self.w > 0.0
            && self.h > 0.0
            && self.x + self.w <= 1.0 + SLACK
            && self.y + self.h <= 1.0 + SLACK
    }
}

/// One labeled video: its frames in order, plus optional detector output.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub video_id: String,
    pub frames: Vec<RgbImage>,
    pub label: f64,
    pub face_boxes: Option<Vec<Option<FaceBox>>>,
}

impl FrameSequence {
    /// Samples `n` frames and crops each to `out_size = (height, width)`.
    pub fn face_clip(&self, n: usize, out_size: (usize, usize)) -> Result<Vec<RgbImage>> {
        sample_frames(self.frames.len(), n)?
            .into_iter()
            .map(|i| {
                let face = self.face_boxes.as_ref().and_then(|b| b[i].as_ref());
                Ok(crop_face(&self.frames[i], face, out_size)?)
            })
            .collect()
    }
}

/// Evenly spaced frame indices. Sequences shorter than `n` are padded by
/// repeating their last index.
pub fn sample_frames(frame_count: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || frame_count == 0 {
        return Err(DatasetError::Sampling { frames: frame_count, n });
    }
    if frame_count < n {
        return Ok((0..n).map(|i| i.min(frame_count - 1)).collect());
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    Ok((0..n).map(|i| i * (frame_count - 1) / (n - 1)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub frame_count: usize,
    pub label: f64,
    pub has_face_sidecar: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.ppm")
}

fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_ppm(&bytes).map_err(|source| DatasetError::BadImage {
        path: path.to_path_buf(),
        source,
    })
}

fn read_sidecar(path: &Path, frame_count: usize) -> Result<Vec<Option<FaceBox>>> {
    let bad = |reason: String| DatasetError::BadSidecar {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let boxes: Vec<Option<FaceBox>> = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if boxes.len() != frame_count {
        return Err(bad(format!("{} boxes for {frame_count} frames", boxes.len())));
    }
    if let Some((i, b)) = boxes.iter().enumerate().find(|(_, b)| b.is_some_and(|b| !b.is_valid())) {
        return Err(bad(format!("box {i} {b:?} lies outside the unit square")));
    }
    Ok(boxes)
}

fn parse_label(raw: &str, line: usize) -> Result<f64> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
        _ => Err(DatasetError::BadLabel {
            line,
            reason: format!("label '{raw}' is not 0 or 1"),
        }),
    }
}

fn read_labels(path: &Path) -> Result<Vec<(String, f64)>> {
    if !path.is_file() {
        return Err(DatasetError::MissingLabels(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DatasetError::BadLabel {
            line: 1,
            reason: e.to_string(),
        })?;
    let headers = reader.headers().map_err(|e| DatasetError::BadLabel {
        line: 1,
        reason: e.to_string(),
    })?;
    if !headers.is_empty() && (headers.len() != 2 || &headers[0] != "video_id" || &headers[1] != "label") {
        return Err(DatasetError::BadLabel {
            line: 1,
            reason: format!(
                "expected header 'video_id,label', found '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| DatasetError::BadLabel {
            line,
            reason: e.to_string(),
        })?;
        if record.len() != 2 || record[0].is_empty() {
            return Err(DatasetError::BadLabel {
                line,
                reason: "expected two fields".into(),
            });
        }
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId(id));
        }
        rows.push((id, parse_label(&record[1], line)?));
    }
    Ok(rows)
}

fn count_frames(dir: &Path) -> usize {
    (0..).take_while(|&i| dir.join(frame_file_name(i)).is_file()).count()
}

/// Reads `labels.csv` under `root` and checks every listed video: directory
/// present, at least one frame, every frame decodes at one size, and the face
/// sidecar (when present) matches the frame count.
pub fn load_dataset(root: &Path) -> Result<DatasetManifest> {
    let labels = read_labels(&root.join(LABELS_FILE))?;
    if labels.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut entries = Vec::with_capacity(labels.len());
    for (video_id, label) in labels {
        let dir = root.join(&video_id);
        if !dir.is_dir() {
            return Err(DatasetError::MissingVideo(video_id));
        }
        let frame_count = count_frames(&dir);
        if frame_count == 0 {
            return Err(DatasetError::NoFrames(video_id));
        }
        let mut size = None;
        for i in 0..frame_count {
            let img = read_ppm(&dir.join(frame_file_name(i)))?;
            let got = (img.height(), img.width());
            match size {
                None => size = Some(got),
                Some(expected) if expected != got => {
                    return Err(DatasetError::FrameSize {
                        video_id,
                        frame: i,
                        expected,
                        got,
                    })
                }
                _ => {}
            }
        }
        let sidecar = dir.join(FACES_FILE);
        let has_face_sidecar = sidecar.is_file();
        if has_face_sidecar {
            read_sidecar(&sidecar, frame_count)?;
        }
        entries.push(ManifestEntry {
            video_id,
            frame_count,
            label,
            has_face_sidecar,
        });
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        entries,
    })
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<(String, f64)> {
        self.entries.iter().map(|e| (e.video_id.clone(), e.label)).collect()
    }

    pub fn load_sequence(&self, index: usize) -> Result<FrameSequence> {
        let entry = &self.entries[index];
        let dir = self.root.join(&entry.video_id);
        let frames = (0..entry.frame_count)
            .map(|i| read_ppm(&dir.join(frame_file_name(i))))
            .collect::<Result<Vec<_>>>()?;
        let face_boxes = entry
            .has_face_sidecar
            .then(|| read_sidecar(&dir.join(FACES_FILE), entry.frame_count))
            .transpose()?;
        Ok(FrameSequence {
            video_id: entry.video_id.clone(),
            frames,
            label: entry.label,
            face_boxes,
        })
    }
}

/// Loads a single unlabeled video directory (frames plus optional sidecar).
/// The label is set to 0 and carries no meaning.
pub fn load_video_dir(dir: &Path) -> Result<FrameSequence> {
    let video_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    if !dir.is_dir() {
        return Err(DatasetError::MissingVideo(video_id));
    }
    let frame_count = count_frames(dir);
    if frame_count == 0 {
        return Err(DatasetError::NoFrames(video_id));
    }
    let manifest = DatasetManifest {
        root: dir.parent().map(Path::to_path_buf).unwrap_or_default(),
        entries: vec![ManifestEntry {
            video_id,
            frame_count,
            label: 0.0,
            has_face_sidecar: dir.join(FACES_FILE).is_file(),
        }],
    };
    manifest.load_sequence(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sampling_examples() {
        assert_eq!(sample_frames(5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(sample_frames(100, 5).unwrap(), vec![0, 24, 49, 74, 99]);
        assert_eq!(sample_frames(3, 5).unwrap(), vec![0, 1, 2, 2, 2]);
        assert_eq!(sample_frames(7, 1).unwrap(), vec![0]);
        assert!(sample_frames(4, 0).is_err());
        assert!(sample_frames(0, 3).is_err());
    }

    proptest! {
        #[test]
        fn sampling_invariants(t in 1usize..300, n in 1usize..40) {
            let idx = sample_frames(t, n).unwrap();
            prop_assert_eq!(idx.len(), n);
            prop_assert_eq!(idx[0], 0);
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(idx.iter().all(|&i| i < t));
            if t >= n && n >= 2 {
                prop_assert_eq!(*idx.last().unwrap(), t - 1);
            }
        }
    }

    #[test]
    fn face_box_validation() {
        assert!(FaceBox::new(0.5, 0.5, 0.5, 0.5).is_some());
        assert!(FaceBox::new(0.6, 0.0, 0.5, 0.5).is_none());
        assert!(FaceBox::new(0.0, 0.0, 0.0, 0.5).is_none());
        assert!(FaceBox::new(-0.1, 0.0, 0.5, 0.5).is_none());
    }

    #[test]
    fn labels_reject_non_binary_values() {
        assert!(parse_label("0.5", 2).is_err());
        assert_eq!(parse_label("1.0", 2).unwrap(), 1.0);
        assert_eq!(parse_label(" 0 ", 2).unwrap(), 0.0);
    }
}
