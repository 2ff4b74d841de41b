//! Algorithmic core for motion-aware, token-level video-text alignment in
//! dynamic facial expression recognition.
//!
//! The pipeline per clip: score inter-frame motion on the visual feature grid
//! ([`motion`]), reweight the features, flatten them into patch tokens
//! ([`tensor`]), align them with caption tokens by entropic optimal transport
//! ([`ot`]), then aggregate the plan into phrase spans and key frames
//! ([`span`]). [`losses`] and [`metrics`] cover training objectives and
//! evaluation; [`text`] builds emotion-descriptor prompts; [`io`] holds the
//! file formats.

pub mod io;
pub mod losses;
pub mod metrics;
pub mod motion;
pub mod ot;
pub mod span;
pub mod tensor;
pub mod text;

pub use tensor::{flatten_visual, validate_tensor, FeatureTensor, FlatVisual, GridDims, LabelSet, PatchGrid, TokenSequence};
