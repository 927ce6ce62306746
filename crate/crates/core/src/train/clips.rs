use crate::dataset::{DatasetManifest, RgbImage};

use super::Result;

/// Why the trainer is reading a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Access {
    /// Frames feed a gradient update.
    Gradient,
    /// Frames are only scored.
    Evaluation,
}

/// A labeled set of videos, each already reduced to its sampled face crops.
pub trait ClipSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn video_id(&self, index: usize) -> &str;

    fn label(&self, index: usize) -> f64;

    fn clip(&self, index: usize, access: Access) -> &[RgbImage];
}

/// Clips held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct InMemoryClips {
    ids: Vec<String>,
    labels: Vec<f64>,
    clips: Vec<Vec<RgbImage>>,
}

impl InMemoryClips {
    pub fn new(items: Vec<(String, f64, Vec<RgbImage>)>) -> Self {
        let mut out = Self {
            ids: Vec::with_capacity(items.len()),
            labels: Vec::with_capacity(items.len()),
            clips: Vec::with_capacity(items.len()),
        };
        for (id, label, clip) in items {
            out.ids.push(id);
            out.labels.push(label);
            out.clips.push(clip);
        }
        out
    }

    /// Loads every video of `manifest`, samples `n_frames` and crops them to
    /// `size = (height, width)`.
    pub fn load(manifest: &DatasetManifest, n_frames: usize, size: (usize, usize)) -> Result<Self> {
        let items = (0..manifest.len())
            .map(|i| {
                let seq = manifest.load_sequence(i)?;
                let clip = seq.face_clip(n_frames, size)?;
                Ok((seq.video_id, seq.label, clip))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(items))
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            clips: indices.iter().map(|&i| self.clips[i].clone()).collect(),
        }
    }

    pub fn labels(&self) -> Vec<(String, f64)> {
        self.ids.iter().cloned().zip(self.labels.iter().copied()).collect()
    }
}

impl ClipSource for InMemoryClips {
    fn len(&self) -> usize {
        self.ids.len()
    }

    fn video_id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    fn label(&self, index: usize) -> f64 {
        self.labels[index]
    }

    fn clip(&self, index: usize, _access: Access) -> &[RgbImage] {
        &self.clips[index]
    }
}
