//! Phase unwrapping and straight-line fits.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Ordinary least squares in slope and intercept.
    #[default]
    Free,
    /// Slope fixed to +1 or -1, whichever fits better; intercept free.
    UnitSlope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    /// Standard error of the slope (0 when the slope is fixed).
    pub slope_stderr: f64,
    /// The unwrapped phases that were fitted.
    pub unwrapped: Vec<f64>,
}

/// Wraps each phase into (-pi, pi] and removes 2 pi jumps between
/// neighbours, so the result does not depend on the 2 pi k offsets of the
/// input.
pub fn unwrap_phases(phases: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(phases.len());
    for &p in phases {
        let w = p - TAU * ((p + PI) / TAU).floor();
        match out.last() {
            None => out.push(w),
            Some(&prev) => {
                let d = w - prev;
                out.push(prev + d - TAU * ((d + PI) / TAU).floor());
            }
        }
    }
    out
}

pub fn unwrap_and_fit(x: &[f64], phases: &[f64], mode: FitMode) -> Result<LinearFit> {
    if x.len() != phases.len() {
        return Err(Error::Domain("x and phases differ in length".into()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::DegenerateFit(format!("{n} points, need at least 3")));
    }
    let y = unwrap_phases(phases);
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();

    let (slope, intercept, slope_stderr) = match mode {
        FitMode::Free => {
            if sxx == 0.0 {
                return Err(Error::DegenerateFit("all x values coincide".into()));
            }
            let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let slope = sxy / sxx;
            let intercept = my - slope * mx;
            let ssr: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
            let se = if n > 2 { (ssr / (nf - 2.0) / sxx).sqrt() } else { 0.0 };
            (slope, intercept, se)
        }
        FitMode::UnitSlope => {
            let fit_with = |s: f64| {
                let c = my - s * mx;
                let ssr: f64 = x.iter().zip(&y).map(|(a, b)| (b - c - s * a).powi(2)).sum();
                (s, c, ssr)
            };
            let (p, m) = (fit_with(1.0), fit_with(-1.0));
            let best = if m.2 < p.2 { m } else { p };
            (best.0, best.1, 0.0)
        }
    };
    let residuals: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - intercept - slope * a).collect();
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    let r_squared = if syy > 0.0 {
        1.0 - ssr / syy
    } else if ssr == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(LinearFit { slope, intercept, r_squared, residuals, slope_stderr, unwrapped: y })
}
