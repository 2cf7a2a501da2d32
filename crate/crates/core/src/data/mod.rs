//! Synthetic audio→video scenes and the on-disk formats used by the CLI.

pub mod pnm;
pub mod scene;
pub mod tnsr;

pub use pnm::write_frame_image;
pub use scene::{generate_scene, load_scene, region_means, save_scene, RawAudioFeatures, SceneConfig, SyntheticScene};
pub use tnsr::{read_tensor, write_tensor, Dtype};
