//! Time-frequency representations, discriminator ensembles and vocoder
//! metrics.

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the maths.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audio;
pub mod config;
pub mod cqt;
pub mod cwt;
pub mod disc;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod interop;
pub mod mel;
pub mod metrics;
pub mod nn;
pub mod stft;
pub mod tfr;
pub mod train;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
pub use tfr::{ComplexSpectrogram, TransformKind};
