//! Sound event localization and detection (SELD) built around activity-coupled
//! Cartesian direction-of-arrival vectors.
//!
//! The toolkit covers the full loop on synthetic first-order Ambisonics data:
//!
//! * [`geometry`]: directions, rotations, FOA encoding and channel rotation.
//! * [`features`]: STFT amplitude + inter-channel phase feature tensors.
//! * [`accdoa`]: the vector label codec and the training losses it replaces.
//! * [`scene`]: a seeded synthetic scene generator with oracle labels.
//! * [`augment`]: waveform and spectrogram augmentations that keep labels valid.
//! * [`model`]: a small CRNN with hand-written reverse-mode gradients.
//! * [`pipeline`]: training, windowed inference, rotation TTA, run artifacts.
//! * [`metrics`]: the four joint localization/detection scores.
//!
//! Everything downstream of a seed is bit-reproducible: RNG is ChaCha-based,
//! reductions run in a fixed order, and all file formats are little-endian
//! with deterministic text formatting.

pub mod accdoa;
pub mod assignment;
pub mod augment;
pub mod error;
pub mod event_csv;
pub mod features;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scene;
pub mod wav;

pub use error::{Error, Result};
