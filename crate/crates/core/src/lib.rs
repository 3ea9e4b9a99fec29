//! Jigsaw puzzle reassembly with eroded gaps, guided by captions.
//!
//! Pieces are encoded by a sequential patch backbone with a residual
//! adapter plus a second, independently parameterized patch encoder.
//! Captions are encoded at token and global level. The two modalities are
//! aligned at three levels (patch↔token cross-attention, spatial region ↔
//! caption phrase, and gated global fusion), the aligned features are fused
//! with softmax weights, a prediction head scores every piece/position
//! pair, and the Hungarian method decodes a bijective assignment.
//!
//! Module map:
//!
//! - [`puzzle`]: geometry, permutations, and the evaluation metrics
//! - [`datagen`]: synthetic scenes, fragments, manifests, external loading
//! - [`encoders`]: visual backbone, adapter, secondary projection, text
//! - [`align`]: token, region, and global alignment, and fusion
//! - [`assignment`]: prediction head, Hungarian decoding, losses
//! - [`training`]: optimizer, schedules, checkpoints, the training loop
//! - [`viz`]: reconstruction overlays and training reports
//! - [`cli`]: the `vlhsa` command-line front end

pub mod align;
pub mod assignment;
pub mod autodiff;
pub mod cli;
pub mod datagen;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod puzzle;
pub mod training;
pub mod viz;

pub use error::{Error, Result};
