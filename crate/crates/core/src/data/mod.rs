//! Synthetic scenes, split manifests, batching and image I/O.

pub mod pnm;
mod scene;
mod split;
mod stream;

pub use scene::{generate_scene, SceneSpec, SegSample};
pub use split::{make_split, ratio_denominator, SplitManifest};
pub use stream::{Augment, BatchStream, Cursor, SceneDataset, SegBatch, StreamState};
