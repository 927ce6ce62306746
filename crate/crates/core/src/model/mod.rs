//! ResNet and Xception backbones with a two-layer dense head, weight files,
//! and video-level prediction.

mod io;
mod network;
mod predict;
mod spec;

use std::path::PathBuf;

use crate::tensor::TensorError;

pub use io::{decode_weights, encode_weights, load_weights, save_weights, FORMAT_VERSION, MAGIC};
pub use network::{is_trainable, BlockSummary, BnSlot, ConvKind, ForwardPass, ModelWeights, Network, Shortcut};
pub use predict::{ensemble_predict, frames_to_batch, fuse_logits, predict_video, EnsembleConfig};
pub use spec::{count_layers, Family, ModelSpec, Preset, BOTTLENECK_DIVISOR};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("input shape {found:?} does not match the model (expected N×{}×{}×{})", expected[1], expected[2], expected[3])]
    InputShape { expected: Vec<usize>, found: Vec<usize> },
    #[error("{0}")]
    Input(String),
    #[error("no frames to predict from")]
    EmptyFrames,
    #[error("layer {layer} is out of range; valid range 1..{max}")]
    LayerOutOfRange { layer: usize, max: usize },
    #[error(
        "weights were saved for a different model spec (fingerprint {}, expected {})",
        hex(found),
        hex(expected)
    )]
    FingerprintMismatch { expected: [u8; 8], found: [u8; 8] },
    #[error("weights do not fit this model: {0}")]
    WeightsMismatch(String),
    #[error("corrupt weight file: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ensemble: {0}")]
    Ensemble(String),
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub type Result<T> = std::result::Result<T, ModelError>;
