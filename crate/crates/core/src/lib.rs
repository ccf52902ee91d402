//! Core of the grading toolkit: frames and clips, 3D LUTs and their
//! algebra, `.cube` I/O, style features, key-frame selection, metrics,
//! training-set synthesis and prompt retouching.

pub mod cube;
pub mod dataset;
pub mod error;
pub mod features;
pub mod frame;
pub mod keyframe;
pub mod looks;
pub mod lut;
pub mod metrics;
pub mod retouch;

pub use cube::{parse_cube, write_cube, write_cube_titled};
pub use error::{CubeErrorKind, Error, Result};
pub use features::{
    condition_vector, extract_style_feature, ConditionVector, StatisticalExtractor, StyleExtractor, StyleFeature,
    FEATURE_DIM,
};
pub use frame::{load_clip, save_clip, Frame, Rgb, VideoClip};
pub use keyframe::{select_key_frames, KeyFramePair};
pub use lut::{
    apply_lut, apply_lut_clip, apply_lut_clip_with_workers, compose_luts, delta_from, identity_lut, lut_from_delta,
    mix_luts, reshape_delta, unreshape, DeltaImage, DeltaLut, Lut3D, MODEL_SIZE,
};
