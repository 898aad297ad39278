//! Filtering, spectral extraction, phase fits and beat analysis.

mod butterworth;
mod envelope;
mod fit;
mod spectral;

pub use butterworth::{bandpass_prototype, bandpass_response_db, butterworth_bandpass, design_lowpass, BandpassSpec, LowpassDesign, Section};
pub use envelope::{analytic_signal, beat_envelope, BeatEnvelope};
pub use fit::{unwrap_and_fit, unwrap_phases, FitMode, LinearFit};
pub use spectral::{spectral_extract, spectrum, Extraction, SpectralPoint, Window};
