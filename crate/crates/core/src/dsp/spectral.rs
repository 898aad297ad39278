//! Amplitude and phase at chosen frequencies by direct projection.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::signal::{FidRecord, Samples};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rect,
    #[default]
    Hann,
}

impl Window {
    pub fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            Window::Hann if n < 2 => vec![1.0; n],
            Window::Hann => (0..n).map(|k| 0.5 - 0.5 * (TAU * k as f64 / (n - 1) as f64).cos()).collect(),
        }
    }
}

impl std::str::FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rect" => Ok(Window::Rect),
            "hann" => Ok(Window::Hann),
            other => Err(format!("unknown window `{other}` (expected rect or hann)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    /// MHz, absolute.
    pub frequency: f64,
    pub amplitude: f64,
    /// Phase of `cos(2 pi f t + phase)` at the record start, in (-pi, pi].
    /// `None` when the amplitude is zero.
    pub phase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub points: Vec<SpectralPoint>,
    pub warnings: Vec<String>,
}

fn wrap_pi(x: f64) -> f64 {
    let w = (x + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Windowed single-frequency projection at each of `frequencies`. Real
/// records are scaled by `2 / sum(w)`, complex ones by `1 / sum(w)`, so a
/// unit cosine (or unit complex tone) reads amplitude 1.
pub fn spectral_extract(record: &FidRecord, frequencies: &[f64], window: Window) -> Result<Extraction> {
    let mut warnings = Vec::new();
    let mut sorted = frequencies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min_sep = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if min_sep.is_finite() && record.duration < 10.0 / min_sep {
        warnings.push(format!(
            "record of {} us cannot resolve tones {min_sep} MHz apart (needs {} us)",
            record.duration,
            10.0 / min_sep
        ));
    }
    let w = window.weights(record.len());
    let wsum: f64 = w.iter().sum();
    let lo = record.lo_mhz.unwrap_or(0.0);
    let dt = record.dt();
    let scale = if record.is_complex() { 1.0 } else { 2.0 } / wsum.max(f64::MIN_POSITIVE);
    let points = frequencies
        .iter()
        .map(|&f| {
            let x: Complex64 = match &record.samples {
                Samples::Real(v) => v
                    .iter()
                    .zip(&w)
                    .enumerate()
                    .map(|(k, (&s, &wk))| Complex64::cis(-TAU * (f - lo) * k as f64 * dt) * (s * wk))
                    .sum(),
                Samples::Complex(v) => v
                    .iter()
                    .zip(&w)
                    .enumerate()
                    .map(|(k, (&s, &wk))| s * Complex64::cis(-TAU * (f - lo) * k as f64 * dt) * wk)
                    .sum(),
            };
            let amplitude = x.norm() * scale;
            SpectralPoint { frequency: f, amplitude, phase: (amplitude > 0.0).then(|| wrap_pi(x.arg())) }
        })
        .collect();
    Ok(Extraction { points, warnings })
}

/// Windowed FFT magnitude spectrum as `(frequency MHz, amplitude)` pairs,
/// scaled like [`spectral_extract`]. Real records give the non-negative
/// half; complex ones the full band around the LO, in ascending order.
pub fn spectrum(record: &FidRecord, window: Window) -> Vec<(f64, f64)> {
    let n = record.len();
    if n == 0 {
        return Vec::new();
    }
    let w = window.weights(n);
    let wsum: f64 = w.iter().sum();
    let mut data: Vec<Complex64> = record.samples.to_complex().iter().zip(&w).map(|(s, &wk)| s * wk).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut data);
    let df = record.rate_mhz() / n as f64;
    if record.is_complex() {
        let lo = record.lo_mhz.unwrap_or(0.0);
        let half = n / 2;
        (0..n)
            .map(|i| {
                let k = (i + n - half) % n;
                let signed = if k >= n - half && k != 0 { k as f64 - n as f64 } else { k as f64 };
                (lo + signed * df, data[k].norm() / wsum)
            })
            .collect()
    } else {
        (0..=n / 2).map(|k| (k as f64 * df, 2.0 * data[k].norm() / wsum)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn record(samples: Samples, rate_gsps: f64, start: f64) -> FidRecord {
        let n = samples.len();
        FidRecord {
            samples,
            sample_rate: rate_gsps,
            start_time: start,
            duration: n as f64 / (rate_gsps * 1e3),
            decay_time_constant: 20.0,
            lo_mhz: None,
            metadata: BTreeMap::new(),
        }
    }

    fn cosines(tones: &[(f64, f64, f64)], rate_gsps: f64, n: usize, t0: f64) -> FidRecord {
        let dt = 1e-3 / rate_gsps;
        let v = (0..n)
            .map(|k| {
                let t = t0 + k as f64 * dt;
                tones.iter().map(|&(f, a, p)| a * (TAU * f * t + p).cos()).sum()
            })
            .collect();
        record(Samples::Real(v), rate_gsps, t0)
    }

    #[test]
    fn pure_cosine_phase() {
        let r = cosines(&[(13.37, 1.0, 0.7)], 0.2, 20_000, 0.0);
        let e = spectral_extract(&r, &[13.37], Window::Hann).unwrap();
        assert_abs_diff_eq!(e.points[0].phase.unwrap(), 0.7, epsilon = 1e-3);
        assert_abs_diff_eq!(e.points[0].amplitude, 1.0, epsilon = 1e-3);
        assert!(e.warnings.is_empty());
    }

    #[test]
    fn listen_pair_amplitudes_balanced() {
        let r = cosines(&[(6385.55, 1.0, 0.3), (6387.18, 1.0, -1.1)], 25.0, 100_000, 0.0);
        let e = spectral_extract(&r, &[6385.55, 6387.18], Window::Hann).unwrap();
        assert_abs_diff_eq!(e.points[0].amplitude / e.points[1].amplitude, 1.0, epsilon = 0.02);
        assert_abs_diff_eq!(e.points[0].phase.unwrap(), 0.3, epsilon = 1e-3);
        assert_abs_diff_eq!(e.points[1].phase.unwrap(), -1.1, epsilon = 1e-3);
    }

    #[test]
    fn zero_record_has_no_phase() {
        let r = record(Samples::Real(vec![0.0; 1000]), 1.0, 0.0);
        let e = spectral_extract(&r, &[10.0], Window::Hann).unwrap();
        assert_eq!(e.points[0].amplitude, 0.0);
        assert_eq!(e.points[0].phase, None);
    }

    #[test]
    fn unresolved_pair_warns() {
        let r = cosines(&[(10.0, 1.0, 0.0)], 0.1, 1000, 0.0);
        let e = spectral_extract(&r, &[10.0, 10.5], Window::Hann).unwrap();
        assert_eq!(e.warnings.len(), 1);
    }

    #[test]
    fn complex_record_uses_lo() {
        let n = 4000;
        let dt = 1e-3 / 0.1;
        let v = (0..n).map(|k| Complex64::cis(TAU * 0.815 * k as f64 * dt + 0.4) * 0.5).collect();
        let mut r = record(Samples::Complex(v), 0.1, 0.0);
        r.lo_mhz = Some(6386.365);
        let e = spectral_extract(&r, &[6387.18], Window::Hann).unwrap();
        assert_abs_diff_eq!(e.points[0].amplitude, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(e.points[0].phase.unwrap(), 0.4, epsilon = 1e-6);
    }

    #[test]
    fn fft_spectrum_peaks_at_tone() {
        let r = cosines(&[(12.5, 1.0, 0.0)], 0.1, 4000, 0.0);
        let s = spectrum(&r, Window::Hann);
        let peak = s.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_abs_diff_eq!(peak.0, 12.5, epsilon = 0.025);
        assert_abs_diff_eq!(peak.1, 1.0, epsilon = 1e-3);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn phase_covariant_with_time_origin(delta in -0.5f64..0.5, phase in -3.0f64..3.0) {
            let f = 7.3;
            // the same physical signal, sampled from a start shifted by delta
            let a = cosines(&[(f, 1.0, phase)], 0.2, 8000, 0.0);
            let b = cosines(&[(f, 1.0, phase)], 0.2, 8000, delta);
            let pa = spectral_extract(&a, &[f], Window::Hann).unwrap().points[0].phase.unwrap();
            let pb = spectral_extract(&b, &[f], Window::Hann).unwrap().points[0].phase.unwrap();
            let expected = wrap_pi(pa + TAU * f * delta);
            proptest::prop_assert!(wrap_pi(pb - expected).abs() < 1e-6);
        }
    }
}
