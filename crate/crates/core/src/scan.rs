//! Delay and phase scans through the whole pipeline, with fits, run checks
//! and report files.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use log::{info, warn};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Experiment;
use crate::dsp::{butterworth_bandpass, spectral_extract, unwrap_and_fit, FitMode, LinearFit, SpectralPoint};
use crate::error::{Error, Result};
use crate::level_system::LevelGraph;
use crate::propagator::{csv_err, run_sequence, thermal_state};
use crate::pulse::{apply_scan, build_pump_probe_sequence, PulseSequence, ScanKind, ScanSpec};
use crate::signal::{down_mix, sequence_hash, synthesize, FidRecord};

/// Largest tolerated fraction of failed scan points.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScanOptions {
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
    /// Keep each point's FID in the result.
    pub keep_records: bool,
    /// Compute the filtered baseband trace shown in the waterfall file.
    pub waterfall: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub value: f64,
    /// At the `listen_plus` transition.
    pub plus: Option<SpectralPoint>,
    pub minus: Option<SpectralPoint>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
    pub record: Option<FidRecord>,
    /// Filtered baseband sum of both listen tones over the waterfall window.
    pub trace: Option<Vec<Complex64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub kind: ScanKind,
    pub listen_plus_mhz: f64,
    pub listen_minus_mhz: f64,
    /// Splitting of the observable doublet, MHz.
    pub configured_nu_mhz: f64,
    pub points: Vec<ScanPoint>,
    pub fit_plus: Option<LinearFit>,
    pub fit_minus: Option<LinearFit>,
    /// Unit-slope fits (phase scans only).
    pub constrained_plus: Option<LinearFit>,
    pub constrained_minus: Option<LinearFit>,
    /// `(|k+| + |k-|) / 4 pi` (delay scans only).
    pub nu_fit_mhz: Option<f64>,
    pub nu_uncertainty_mhz: Option<f64>,
    pub checks: Vec<Check>,
    /// Sample spacing of the waterfall traces, us.
    pub trace_dt: Option<f64>,
}

impl ScanResult {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_points(&self) -> usize {
        self.points.iter().filter(|p| p.error.is_some()).count()
    }
}

/// Graph actually propagated: rotational energies divided by the configured
/// frequency scale.
pub fn effective_graph(exp: &Experiment) -> Result<LevelGraph> {
    if exp.propagation.frequency_scale == 1.0 {
        Ok(exp.graph.clone())
    } else {
        exp.graph.scaled_rotational(exp.propagation.frequency_scale)
    }
}

/// Propagates one sequence and synthesizes its FID.
pub fn simulate_sequence(exp: &Experiment, graph: &LevelGraph, sequence: &PulseSequence, rng: &mut ChaCha8Rng) -> Result<FidRecord> {
    let s0 = thermal_state(graph, &exp.thermal)?;
    let traj = run_sequence(&s0, graph, sequence, &exp.propagation)?;
    let lo = listen_lo(exp, graph)?;
    let mut record = synthesize(traj.final_state(), graph, &exp.receiver, &exp.record, lo, rng)?;
    record.metadata.insert("sequence_sha256".into(), sequence_hash(sequence));
    Ok(record)
}

fn listen_frequencies(exp: &Experiment, graph: &LevelGraph) -> Result<(f64, f64)> {
    Ok((
        graph.labeled_frequency(&exp.analysis.listen_plus)?,
        graph.labeled_frequency(&exp.analysis.listen_minus)?,
    ))
}

fn listen_lo(exp: &Experiment, graph: &LevelGraph) -> Result<f64> {
    match exp.record.lo_mhz {
        Some(lo) => Ok(lo / exp.propagation.frequency_scale.max(f64::MIN_POSITIVE)),
        None => {
            let (p, m) = listen_frequencies(exp, graph)?;
            Ok(0.5 * (p + m))
        }
    }
}

/// Per-point RNG: one ChaCha stream per scan index under the run seed.
pub fn point_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn run_delay_scan(exp: &Experiment, options: &ScanOptions) -> Result<ScanResult> {
    let spec = exp
        .delay_scan
        .clone()
        .ok_or_else(|| Error::Domain("config has no [scan.delay] section".into()))?;
    run_scan(exp, &spec, options)
}

pub fn run_phase_scan(exp: &Experiment, options: &ScanOptions) -> Result<ScanResult> {
    let spec = exp
        .phase_scan
        .clone()
        .ok_or_else(|| Error::Domain("config has no [scan.phase] section".into()))?;
    run_scan(exp, &spec, options)
}

/// Runs every point of `spec` (in parallel, results in scan order), then
/// fits and checks.
pub fn run_scan(exp: &Experiment, spec: &ScanSpec, options: &ScanOptions) -> Result<ScanResult> {
    let graph = effective_graph(exp)?;
    let base = build_pump_probe_sequence(&graph, &exp.sequence, 0.0)?;
    let sequences = apply_scan(&base, spec)?;
    let (f_plus, f_minus) = listen_frequencies(exp, &graph)?;
    let configured_nu_mhz = graph.tunneling_splitting(exp.analysis.observable)?;

    let run_point = |index: usize| -> ScanPoint {
        let value = spec.values[index];
        let outcome = analyze_point(exp, &spec.kind, &graph, &sequences[index], value, index, (f_plus, f_minus), options);
        match outcome {
            Ok(p) => p,
            Err(e) => {
                warn!("scan point {index} ({value}) failed: {e}");
                ScanPoint {
                    value,
                    plus: None,
                    minus: None,
                    error: Some(e.to_string()),
                    warnings: Vec::new(),
                    record: None,
                    trace: None,
                }
            }
        }
    };
    let indices: Vec<usize> = (0..sequences.len()).collect();
    let points: Vec<ScanPoint> = if options.workers == 1 {
        indices.into_iter().map(run_point).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| Error::Domain(format!("cannot start worker pool: {e}")))?;
        pool.install(|| indices.into_par_iter().map(run_point).collect())
    };

    let failed: Vec<&ScanPoint> = points.iter().filter(|p| p.error.is_some()).collect();
    if failed.len() as f64 > MAX_FAILED_FRACTION * points.len() as f64 {
        return Err(Error::ScanFailed {
            failed: failed.len(),
            total: points.len(),
            first: failed[0].error.clone().unwrap_or_default(),
        });
    }
    info!("{} of {} scan points succeeded", points.len() - failed.len(), points.len());

    let trace_dt = options.waterfall.then(|| waterfall_dt(exp, &graph));
    let mut result = ScanResult {
        kind: spec.kind.clone(),
        listen_plus_mhz: f_plus,
        listen_minus_mhz: f_minus,
        configured_nu_mhz,
        points,
        fit_plus: None,
        fit_minus: None,
        constrained_plus: None,
        constrained_minus: None,
        nu_fit_mhz: None,
        nu_uncertainty_mhz: None,
        checks: Vec::new(),
        trace_dt,
    };
    fit_and_check(&mut result);
    Ok(result)
}

#[allow(clippy::too_many_arguments)]
fn analyze_point(
    exp: &Experiment,
    kind: &ScanKind,
    graph: &LevelGraph,
    sequence: &PulseSequence,
    value: f64,
    index: usize,
    listen: (f64, f64),
    options: &ScanOptions,
) -> Result<ScanPoint> {
    let mut rng = point_rng(exp.seed, index);
    let mut record = simulate_sequence(exp, graph, sequence, &mut rng)?;
    record.metadata.insert("scan_value".into(), format!("{value}"));
    record.metadata.insert("scan_index".into(), format!("{index}"));
    record.metadata.insert("scan_kind".into(), kind_tag(kind));
    let extraction = spectral_extract(&record, &[listen.0, listen.1], exp.analysis.window)?;
    let trace = if options.waterfall { Some(waterfall_trace(exp, graph, &record, listen)?) } else { None };
    Ok(ScanPoint {
        value,
        plus: Some(extraction.points[0]),
        minus: Some(extraction.points[1]),
        error: None,
        warnings: extraction.warnings,
        record: options.keep_records.then_some(record),
        trace,
    })
}

/// `delay` or `phase:<target>`, as stored in FID metadata.
pub fn kind_tag(kind: &ScanKind) -> String {
    match kind {
        ScanKind::Delay => "delay".into(),
        ScanKind::PulsePhase { target } => format!("phase:{target}"),
    }
}

pub fn parse_kind_tag(tag: &str) -> Result<ScanKind> {
    match tag.split_once(':') {
        None if tag == "delay" => Ok(ScanKind::Delay),
        Some(("phase", target)) if !target.is_empty() => Ok(ScanKind::PulsePhase { target: target.into() }),
        _ => Err(Error::Domain(format!("unknown scan kind `{tag}`"))),
    }
}

/// Re-analyzes stored FIDs (as written by a scan) with the analysis settings
/// of `exp`. Records are ordered by their `scan_index` metadata.
pub fn analyze_records(exp: &Experiment, records: Vec<FidRecord>) -> Result<ScanResult> {
    let graph = effective_graph(exp)?;
    let (f_plus, f_minus) = listen_frequencies(exp, &graph)?;
    let meta = |r: &FidRecord, key: &str| -> Result<String> {
        r.metadata.get(key).cloned().ok_or_else(|| Error::Domain(format!("stored FID lacks `{key}` metadata")))
    };
    let mut tagged = Vec::with_capacity(records.len());
    let mut kind: Option<ScanKind> = None;
    for r in records {
        let k = parse_kind_tag(&meta(&r, "scan_kind")?)?;
        if kind.as_ref().is_some_and(|prev| *prev != k) {
            return Err(Error::Domain("stored FIDs come from different scans".into()));
        }
        kind = Some(k);
        let index: usize = meta(&r, "scan_index")?.parse().map_err(|_| Error::Domain("bad scan_index".into()))?;
        let value: f64 = meta(&r, "scan_value")?.parse().map_err(|_| Error::Domain("bad scan_value".into()))?;
        tagged.push((index, value, r));
    }
    let kind = kind.ok_or_else(|| Error::Domain("no stored FIDs to analyze".into()))?;
    tagged.sort_by_key(|t| t.0);
    let points = tagged
        .into_iter()
        .map(|(_, value, record)| match spectral_extract(&record, &[f_plus, f_minus], exp.analysis.window) {
            Ok(e) => ScanPoint {
                value,
                plus: Some(e.points[0]),
                minus: Some(e.points[1]),
                error: None,
                warnings: e.warnings,
                record: None,
                trace: None,
            },
            Err(e) => ScanPoint {
                value,
                plus: None,
                minus: None,
                error: Some(e.to_string()),
                warnings: Vec::new(),
                record: None,
                trace: None,
            },
        })
        .collect();
    let mut result = ScanResult {
        kind,
        listen_plus_mhz: f_plus,
        listen_minus_mhz: f_minus,
        configured_nu_mhz: graph.tunneling_splitting(exp.analysis.observable)?,
        points,
        fit_plus: None,
        fit_minus: None,
        constrained_plus: None,
        constrained_minus: None,
        nu_fit_mhz: None,
        nu_uncertainty_mhz: None,
        checks: Vec::new(),
        trace_dt: None,
    };
    fit_and_check(&mut result);
    Ok(result)
}

fn waterfall_dt(exp: &Experiment, _graph: &LevelGraph) -> f64 {
    let rate_mhz = exp.record.sample_rate_gsps * 1e3 / exp.record.decimation as f64;
    1.0 / rate_mhz
}

/// Baseband (LO at the listen mean) sum of the two bandpassed listen tones,
/// first `waterfall_window_us` of the record.
fn waterfall_trace(exp: &Experiment, graph: &LevelGraph, record: &FidRecord, listen: (f64, f64)) -> Result<Vec<Complex64>> {
    let lo = listen_lo(exp, graph)?;
    let baseband = if record.is_complex() {
        record.clone()
    } else {
        down_mix(record, lo, exp.record.decimation, exp.record.passband_mhz)?
    };
    let a = butterworth_bandpass(&baseband, &exp.analysis.bandpass(listen.0))?.samples.to_complex();
    let b = butterworth_bandpass(&baseband, &exp.analysis.bandpass(listen.1))?.samples.to_complex();
    let n = ((exp.output.waterfall_window_us / baseband.dt()).round() as usize).min(a.len());
    Ok(a.iter().zip(&b).take(n).map(|(x, y)| x + y).collect())
}

/// Fits the phases of the successful points and evaluates the run checks.
pub fn fit_and_check(result: &mut ScanResult) {
    let ok: Vec<&ScanPoint> = result
        .points
        .iter()
        .filter(|p| p.plus.is_some_and(|s| s.phase.is_some()) && p.minus.is_some_and(|s| s.phase.is_some()))
        .collect();
    let x: Vec<f64> = ok.iter().map(|p| p.value).collect();
    let ph_plus: Vec<f64> = ok.iter().filter_map(|p| p.plus.and_then(|s| s.phase)).collect();
    let ph_minus: Vec<f64> = ok.iter().filter_map(|p| p.minus.and_then(|s| s.phase)).collect();
    let amps_plus: Vec<f64> = ok.iter().filter_map(|p| p.plus.map(|s| s.amplitude)).collect();
    let amps_minus: Vec<f64> = ok.iter().filter_map(|p| p.minus.map(|s| s.amplitude)).collect();
    result.fit_plus = unwrap_and_fit(&x, &ph_plus, FitMode::Free).ok();
    result.fit_minus = unwrap_and_fit(&x, &ph_minus, FitMode::Free).ok();
    let mut checks = Vec::new();
    let failed = result.failed_points();
    checks.push(Check {
        name: "failed_points".into(),
        passed: failed as f64 <= MAX_FAILED_FRACTION * result.points.len() as f64,
        detail: format!("{failed} of {} points failed", result.points.len()),
    });

    match &result.kind {
        ScanKind::Delay => {
            if let (Some(p), Some(m)) = (&result.fit_plus, &result.fit_minus) {
                let nu = (p.slope.abs() + m.slope.abs()) / (4.0 * PI);
                let sigma = p.slope_stderr.hypot(m.slope_stderr) / (4.0 * PI);
                result.nu_fit_mhz = Some(nu);
                result.nu_uncertainty_mhz = Some(sigma);
                checks.push(Check {
                    name: "slope_signs".into(),
                    passed: p.slope < 0.0 && m.slope > 0.0,
                    detail: format!("k+ = {:.6} rad/us, k- = {:.6} rad/us", p.slope, m.slope),
                });
                checks.push(Check {
                    name: "r_squared".into(),
                    passed: p.r_squared > 0.99 && m.r_squared > 0.99,
                    detail: format!("R2+ = {:.6}, R2- = {:.6}", p.r_squared, m.r_squared),
                });
                let rel = (nu / result.configured_nu_mhz - 1.0).abs();
                checks.push(Check {
                    name: "nu_fit".into(),
                    passed: rel <= 0.02,
                    detail: format!(
                        "nu_fit = {nu:.6} +- {sigma:.6} MHz vs configured {:.6} MHz ({:.2}%)",
                        result.configured_nu_mhz,
                        100.0 * rel
                    ),
                });
            }
            checks.push(amplitude_check(&amps_plus, &amps_minus, 0.10));
        }
        ScanKind::PulsePhase { .. } => {
            result.constrained_plus = unwrap_and_fit(&x, &ph_plus, FitMode::UnitSlope).ok();
            result.constrained_minus = unwrap_and_fit(&x, &ph_minus, FitMode::UnitSlope).ok();
            if let (Some(p), Some(m), Some(fp), Some(fm)) =
                (&result.constrained_plus, &result.constrained_minus, &result.fit_plus, &result.fit_minus)
            {
                checks.push(Check {
                    name: "unit_slopes_opposite".into(),
                    passed: p.slope == -m.slope,
                    detail: format!("constrained slopes {:+} / {:+}", p.slope, m.slope),
                });
                checks.push(Check {
                    name: "r_squared".into(),
                    passed: fp.r_squared > 0.99 && fm.r_squared > 0.99,
                    detail: format!("R2+ = {:.6}, R2- = {:.6} (free fits)", fp.r_squared, fm.r_squared),
                });
            }
            checks.push(amplitude_check(&amps_plus, &amps_minus, 0.01));
        }
    }
    result.checks = checks;
}

fn amplitude_check(plus: &[f64], minus: &[f64], tol: f64) -> Check {
    let spread = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let worst = v.iter().map(|a| (a - mean).abs()).fold(0.0, f64::max);
        if mean > 0.0 {
            worst / mean
        } else {
            f64::INFINITY
        }
    };
    let (sp, sm) = (spread(plus), spread(minus));
    Check {
        name: "amplitude_stability".into(),
        passed: sp <= tol && sm <= tol,
        detail: format!("max deviation from mean: {:.3}% / {:.3}% (limit {}%)", 100.0 * sp, 100.0 * sm, 100.0 * tol),
    }
}

#[derive(Serialize)]
struct FitSummary<'a> {
    slope: f64,
    intercept: f64,
    r_squared: f64,
    slope_stderr: f64,
    residuals: &'a [f64],
}

impl<'a> From<&'a LinearFit> for FitSummary<'a> {
    fn from(f: &'a LinearFit) -> Self {
        FitSummary {
            slope: f.slope,
            intercept: f.intercept,
            r_squared: f.r_squared,
            slope_stderr: f.slope_stderr,
            residuals: &f.residuals,
        }
    }
}

#[derive(Serialize)]
struct FailureSummary<'a> {
    index: usize,
    value: f64,
    error: &'a str,
}

#[derive(Serialize)]
struct Summary<'a> {
    kind: &'a ScanKind,
    n_points: usize,
    n_failed: usize,
    listen_plus_mhz: f64,
    listen_minus_mhz: f64,
    configured_nu_mhz: f64,
    fit_plus: Option<FitSummary<'a>>,
    fit_minus: Option<FitSummary<'a>>,
    constrained_plus: Option<FitSummary<'a>>,
    constrained_minus: Option<FitSummary<'a>>,
    nu_fit_mhz: Option<f64>,
    nu_uncertainty_mhz: Option<f64>,
    checks: &'a [Check],
    failures: Vec<FailureSummary<'a>>,
}

fn stem(kind: &ScanKind) -> &'static str {
    match kind {
        ScanKind::Delay => "delay",
        ScanKind::PulsePhase { .. } => "phase",
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v}"))
}

/// Writes `<kind>_scan.csv`, `<kind>_fit.json` and, when traces exist,
/// `<kind>_waterfall.csv` into `dir`. Returns the paths written.
pub fn emit_report(result: &ScanResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = stem(&result.kind);
    let mut written = Vec::new();

    let csv_path = dir.join(format!("{name}_scan.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_err(&csv_path, e))?;
    let first = match result.kind {
        ScanKind::Delay => "t_pp_us",
        ScanKind::PulsePhase { .. } => "phase_rad",
    };
    w.write_record([first, "I_plus", "phi_plus", "I_minus", "phi_minus"]).map_err(|e| csv_err(&csv_path, e))?;
    for p in &result.points {
        w.write_record([
            format!("{}", p.value),
            opt(p.plus.map(|s| s.amplitude)),
            opt(p.plus.and_then(|s| s.phase)),
            opt(p.minus.map(|s| s.amplitude)),
            opt(p.minus.and_then(|s| s.phase)),
        ])
        .map_err(|e| csv_err(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    written.push(csv_path);

    let summary = Summary {
        kind: &result.kind,
        n_points: result.points.len(),
        n_failed: result.failed_points(),
        listen_plus_mhz: result.listen_plus_mhz,
        listen_minus_mhz: result.listen_minus_mhz,
        configured_nu_mhz: result.configured_nu_mhz,
        fit_plus: result.fit_plus.as_ref().map(Into::into),
        fit_minus: result.fit_minus.as_ref().map(Into::into),
        constrained_plus: result.constrained_plus.as_ref().map(Into::into),
        constrained_minus: result.constrained_minus.as_ref().map(Into::into),
        nu_fit_mhz: result.nu_fit_mhz,
        nu_uncertainty_mhz: result.nu_uncertainty_mhz,
        checks: &result.checks,
        failures: result
            .points
            .iter()
            .enumerate()
            .filter_map(|(index, p)| p.error.as_deref().map(|error| FailureSummary { index, value: p.value, error }))
            .collect(),
    };
    let json_path = dir.join(format!("{name}_fit.json"));
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;
    written.push(json_path);

    if let Some(dt) = result.trace_dt {
        let path = dir.join(format!("{name}_waterfall.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record([first, "t_us", "re", "im", "envelope"]).map_err(|e| csv_err(&path, e))?;
        for p in &result.points {
            for (k, y) in p.trace.iter().flatten().enumerate() {
                w.write_record([
                    format!("{}", p.value),
                    format!("{}", k as f64 * dt),
                    format!("{}", y.re),
                    format!("{}", y.im),
                    format!("{}", y.norm()),
                ])
                .map_err(|e| csv_err(&path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
