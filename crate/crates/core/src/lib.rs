//! Sensing-secure OFDM ISAC toolkit.
//!
//! Shapes the range autocorrelation of an OFDM waveform through subcarrier
//! power allocation so that a passive eavesdropper using matched filtering
//! sees periodic ghost targets, while the legitimate receiver removes them
//! with reciprocal filtering at a predictable SNR cost. The crate covers
//! waveform construction, closed-form and Monte-Carlo sidelobe metrics,
//! receiver chains for both parties, CFAR detection, root-MUSIC ranging,
//! the constrained power-allocation design problem and an experiment
//! harness that regenerates every evaluation table.

pub mod acf;
pub mod constellation;
pub mod designer;
pub mod detection;
pub mod dsp;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod montecarlo;
pub mod receivers;
pub mod scene;
pub mod seed;
pub mod stats;
pub mod units;
pub mod waveform;

pub use error::{Error, Result};
