//! Auditory spatial attention decoding from EEG.
//!
//! The library decodes the attended spatial direction (left or right) from
//! multi-channel EEG. A short-window CNN extracts features from 1 s decision
//! windows; a selective state-space sequence model consumes the feature
//! sequence at 0.125 s steps to exploit long-range temporal context. Both the
//! CNN alone and the composite model are trainable, evaluable against several
//! split protocols, and deployable as a constant-memory streaming decoder.
//!
//! Modules:
//! - [`tensor`]: minimal reverse-mode autodiff over dense arrays
//! - [`dataio`]: dataset container, normalization, windowing, augmentation,
//!   split protocols and a synthetic EEG generator
//! - [`swcnn`]: the short-window CNN with its dual-head multitask loss
//! - [`ssm`]: selective scan, Mamba-style block and streaming step
//! - [`swim`]: the CNN+SSM composite and the streaming decoder
//! - [`trainer`]: Adam, cosine annealing, early stopping, checkpoints
//! - [`evalkit`]: accuracy evaluation, model combination, ablations, sweeps

pub mod dataio;
pub mod error;
pub mod evalkit;
pub mod ssm;
pub mod swcnn;
pub mod swim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
