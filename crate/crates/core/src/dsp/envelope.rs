//! Beat envelope of a one- or two-tone record.

use std::collections::VecDeque;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::spectral::{spectrum, Window};
use crate::error::{Error, Result};
use crate::signal::{FidRecord, Samples};

/// Peaks below this fraction of the strongest one are not counted as tones.
const TONE_THRESHOLD: f64 = 0.1;
/// A node must dip below this fraction of the local maximum.
const NODE_DEPTH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatEnvelope {
    /// Relative to the record start, us.
    pub times: Vec<f64>,
    pub envelope: Vec<f64>,
    /// Envelope minima relative to the record start, us.
    pub nodes: Vec<f64>,
    /// Refined tone frequencies, MHz, ascending.
    pub tones: Vec<f64>,
    /// Power-weighted mean tone frequency, MHz.
    pub carrier_mhz: f64,
    /// Spacing of the two tones, MHz (`None` for a single tone).
    pub tone_spacing_mhz: Option<f64>,
}

/// Analytic signal `x + i H[x]` by FFT; complex samples are returned as is.
pub fn analytic_signal(samples: &Samples) -> Vec<Complex64> {
    match samples {
        Samples::Complex(v) => v.clone(),
        Samples::Real(v) => {
            let n = v.len();
            if n == 0 {
                return Vec::new();
            }
            let mut planner = FftPlanner::new();
            let mut data: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            planner.plan_fft_forward(n).process(&mut data);
            for (k, x) in data.iter_mut().enumerate() {
                if k == 0 || 2 * k == n {
                    continue;
                }
                *x = if 2 * k < n { *x * 2.0 } else { Complex64::new(0.0, 0.0) };
            }
            planner.plan_fft_inverse(n).process(&mut data);
            let scale = 1.0 / n as f64;
            data.iter().map(|x| x * scale).collect()
        }
    }
}

/// Local spectral peaks above the threshold; frequency and magnitude are
/// refined by a parabola through the log magnitudes around the peak bin.
fn tones(record: &FidRecord) -> Vec<(f64, f64)> {
    let spec = spectrum(record, Window::Hann);
    let top = spec.iter().fold(0.0f64, |m, p| m.max(p.1));
    if top == 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 1..spec.len().saturating_sub(1) {
        let (l, c, r) = (spec[i - 1].1, spec[i].1, spec[i + 1].1);
        if c > l && c >= r && c >= TONE_THRESHOLD * top {
            let (a, b, g) = (l.max(1e-300).ln(), c.ln(), r.max(1e-300).ln());
            let denom = a - 2.0 * b + g;
            let shift = if denom != 0.0 { (0.5 * (a - g) / denom).clamp(-0.5, 0.5) } else { 0.0 };
            let df = spec[i + 1].0 - spec[i].0;
            out.push((spec[i].0 + shift * df, (b - 0.25 * (a - g) * shift).exp()));
        }
    }
    out
}

/// Sliding extremum over `[i - w, i + w]` via a monotone deque.
fn sliding(v: &[f64], w: usize, better: impl Fn(f64, f64) -> bool) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        let hi = (i + w).min(n - 1);
        while next <= hi {
            while dq.back().is_some_and(|&j| !better(v[j], v[next])) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        while dq.front().is_some_and(|&j| j + w < i) {
            dq.pop_front();
        }
        *slot = v[*dq.front().expect("window is never empty")];
    }
    out
}

/// Envelope (analytic-signal magnitude) and its nodes. The record must hold
/// one or two dominant tones.
pub fn beat_envelope(record: &FidRecord) -> Result<BeatEnvelope> {
    let found = tones(record);
    if found.is_empty() || found.len() > 2 {
        return Err(Error::Analysis(format!("expected one or two dominant tones, found {}", found.len())));
    }
    let power: f64 = found.iter().map(|t| t.1 * t.1).sum();
    let carrier_mhz = found.iter().map(|t| t.0 * t.1 * t.1).sum::<f64>() / power;
    let mut tone_freqs: Vec<f64> = found.iter().map(|t| t.0).collect();
    tone_freqs.sort_by(f64::total_cmp);

    let envelope: Vec<f64> = analytic_signal(&record.samples).iter().map(|z| z.norm()).collect();
    let times = record.times();
    let spacing = (tone_freqs.len() == 2).then(|| tone_freqs[1] - tone_freqs[0]);
    let mut nodes = Vec::new();
    if let Some(df) = spacing {
        let half = ((0.5 / df) * record.rate_mhz()).round() as usize;
        if half > 0 && envelope.len() > 2 * half {
            let lows = sliding(&envelope, half, |a, b| a < b);
            let highs = sliding(&envelope, half, |a, b| a > b);
            let mut k = half;
            while k < envelope.len() - half {
                if envelope[k] == lows[k] && envelope[k] < NODE_DEPTH * highs[k] {
                    nodes.push(times[k]);
                    k += half;
                } else {
                    k += 1;
                }
            }
        }
    }
    Ok(BeatEnvelope { times, envelope, nodes, tones: tone_freqs, carrier_mhz, tone_spacing_mhz: spacing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;
    use std::f64::consts::TAU;

    fn two_tone(f1: f64, f2: f64, a2: f64, n: usize, rate_gsps: f64, decay: f64) -> FidRecord {
        let dt = 1e-3 / rate_gsps;
        let v = (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                (-t / decay).exp() * ((TAU * f1 * t).cos() + a2 * (TAU * f2 * t).cos())
            })
            .collect();
        FidRecord {
            samples: Samples::Real(v),
            sample_rate: rate_gsps,
            start_time: 0.0,
            duration: n as f64 * dt,
            decay_time_constant: decay,
            lo_mhz: None,
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn single_tone_has_no_nodes() {
        let r = two_tone(3.0, 0.0, 0.0, 5000, 0.05, 1e9);
        let b = beat_envelope(&r).unwrap();
        assert!(b.nodes.is_empty());
        assert_eq!(b.tones.len(), 1);
        let mid = &b.envelope[500..4500];
        let (lo, hi) = mid.iter().fold((f64::INFINITY, 0.0f64), |(a, c), &v| (a.min(v), c.max(v)));
        assert!(hi - lo < 1e-2, "{lo} {hi}");
    }

    #[test]
    fn two_tones_beat_at_their_spacing() {
        let r = two_tone(10.0, 11.0, 1.0, 20_000, 0.2, 20.0);
        let b = beat_envelope(&r).unwrap();
        assert_abs_diff_eq!(b.carrier_mhz, 10.5, epsilon = 0.01);
        let dt = r.dt();
        // the FFT Hilbert transform wraps around, so skip the last beat period
        let interior: Vec<f64> = b.nodes.iter().copied().filter(|&t| t < r.duration - 1.0).collect();
        for w in interior.windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], 1.0, epsilon = dt);
        }
        assert!(b.nodes.len() >= 90);
    }

    #[test]
    fn three_tones_rejected() {
        let dt = 1e-3 / 0.2;
        let v = (0..20_000)
            .map(|k| {
                let t = k as f64 * dt;
                (TAU * 10.0 * t).cos() + (TAU * 12.0 * t).cos() + (TAU * 14.0 * t).cos()
            })
            .collect();
        let mut r = two_tone(1.0, 2.0, 1.0, 10, 0.2, 1.0);
        r.samples = Samples::Real(v);
        assert!(matches!(beat_envelope(&r), Err(Error::Analysis(_))));
    }
}
