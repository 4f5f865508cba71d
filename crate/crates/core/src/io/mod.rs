//! File formats: tensor container, camera text, scene manifest, PLY.

pub mod camera;
pub mod manifest;
pub mod ply;
pub mod tensor;

pub use manifest::{load_ground_truth, load_scene, SceneManifest};
pub use tensor::{DType, Tensor, TensorData};
