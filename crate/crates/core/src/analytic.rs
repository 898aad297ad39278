//! Closed-form ee dynamics of the pumped doublet and the ee operator.
//!
//! Handedness convention: `|R> = (|+> + |->)/sqrt 2`, so
//! `ee = <R|rho|R> - <S|rho|S> = 2 Re rho(+, -)`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::level_system::{LevelGraph, Rotational};
use crate::propagator::QuantumState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EeObservable {
    pub plus: usize,
    pub minus: usize,
}

impl EeObservable {
    pub fn new(graph: &LevelGraph, doublet: Rotational) -> Result<Self> {
        let (plus, minus) = graph.doublet(doublet)?;
        Ok(EeObservable { plus, minus })
    }
}

pub fn ee_expectation(state: &QuantumState, obs: &EeObservable) -> Result<f64> {
    if obs.plus.max(obs.minus) >= state.dim() {
        return Err(Error::Domain("observable doublet outside the state space".into()));
    }
    Ok(2.0 * state.rho[(obs.plus, obs.minus)].re)
}

/// Field-free ee at each absolute time in `times` (each >= `state.time`).
/// Only the doublet coherence matters, and it just precesses at the
/// doublet splitting, so no full propagation is needed.
pub fn ee_trace(state: &QuantumState, graph: &LevelGraph, obs: &EeObservable, times: &[f64]) -> Result<Vec<f64>> {
    let e = graph.energies();
    let split = e[obs.minus] - e[obs.plus];
    let c = state.rho[(obs.plus, obs.minus)];
    times
        .iter()
        .map(|&t| {
            if t < state.time - 1e-12 {
                return Err(Error::Domain(format!("trace time {t} us precedes the state time {} us", state.time)));
            }
            // rho_pm(t) = rho_pm(t0) exp(-i 2 pi (E+ - E-) (t - t0))
            Ok(2.0 * (c * num_complex::Complex64::cis(TAU * split * (t - state.time))).re)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticEeParams {
    /// Rabi areas of the three pump pulses, rad.
    pub areas: [f64; 3],
    /// Starting phases of the three pump pulses, rad.
    pub phases: [f64; 3],
    pub accumulated_phase: f64,
    /// Doublet splitting, MHz.
    pub tunneling_frequency: f64,
}

impl AnalyticEeParams {
    /// `sin(A1) sin(A2/2) sin(A3/2)`.
    pub fn amplitude_factor(&self) -> f64 {
        amplitude_factor(self.areas)
    }

    fn phase_offset(&self) -> f64 {
        self.phases[0] - self.phases[1] - self.phases[2]
    }
}

pub fn amplitude_factor(areas: [f64; 3]) -> f64 {
    areas[0].sin() * (0.5 * areas[1]).sin() * (0.5 * areas[2]).sin()
}

/// `-sin(A1) sin(A2/2) sin(A3/2) sin(2 pi nu t + phi1 - phi2 - phi3 + Phi)`.
pub fn analytic_ee(params: &AnalyticEeParams, t: f64) -> f64 {
    -params.amplitude_factor()
        * (TAU * params.tunneling_frequency * t + params.phase_offset() + params.accumulated_phase).sin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseFit {
    /// Phi in [0, 2pi).
    pub accumulated_phase: f64,
    /// Fitted |amplitude|, >= 0.
    pub amplitude: f64,
    pub residual_rms: f64,
}

/// Least-squares fit of `-s A sin(2 pi nu t + phi1 - phi2 - phi3 + Phi)`
/// with `A >= 0` and `Phi` free, `s` the sign of the areas' amplitude
/// factor (taken as +1 when it vanishes). The `accumulated_phase` of
/// `params` is ignored.
pub fn fit_accumulated_phase(times: &[f64], ee: &[f64], params: &AnalyticEeParams) -> Result<PhaseFit> {
    if times.len() != ee.len() {
        return Err(Error::Domain("times and samples differ in length".into()));
    }
    if times.len() < 8 {
        return Err(Error::DegenerateFit(format!("{} samples, need at least 8", times.len())));
    }
    if !(params.tunneling_frequency > 0.0) {
        return Err(Error::Domain("tunneling frequency must be positive".into()));
    }
    let (lo, hi) = times.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    if (hi - lo) * params.tunneling_frequency < 1.0 - 1e-9 {
        return Err(Error::DegenerateFit("samples span less than one tunneling period".into()));
    }
    // ee = a sin x + b cos x
    let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let xs: Vec<f64> = times.iter().map(|&t| TAU * params.tunneling_frequency * t + params.phase_offset()).collect();
    for (&x, &y) in xs.iter().zip(ee) {
        let (s, c) = x.sin_cos();
        ss += s * s;
        sc += s * c;
        cc += c * c;
        ys += y * s;
        yc += y * c;
    }
    let det = ss * cc - sc * sc;
    if det.abs() < 1e-12 * (ss * cc).max(1e-300) {
        return Err(Error::DegenerateFit("sample times do not resolve the sinusoid".into()));
    }
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    let amplitude = a.hypot(b);
    let scale = ee.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if amplitude <= 1e-12 * scale.max(1e-300) || scale == 0.0 {
        return Err(Error::DegenerateFit("flat trace".into()));
    }
    let s = if params.amplitude_factor() < 0.0 { -1.0 } else { 1.0 };
    // -s A (sin x cos Phi + cos x sin Phi) = a sin x + b cos x
    let phi = (-s * b).atan2(-s * a).rem_euclid(TAU);
    let ssr: f64 = xs.iter().zip(ee).map(|(&x, &y)| (y - a * x.sin() - b * x.cos()).powi(2)).sum();
    Ok(PhaseFit {
        accumulated_phase: if phi >= TAU { 0.0 } else { phi },
        amplitude,
        residual_rms: (ssr / ee.len() as f64).sqrt(),
    })
}
