//! Declarative experiment configuration (TOML).
//!
//! A config holds the level graph (`[[level]]`, `[[transition]]`), the pulse
//! table (`[sequence]`), ensemble, receiver, record, analysis, propagation,
//! scan and output sections. `extends = "3fba_default"` (or a path) takes
//! every section the file does not define from the named base. Errors carry
//! the line of the offending entry.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use crate::dsp::{BandpassSpec, Window};
use crate::error::{Error, Result};
use crate::level_system::{
    validate_graph, DipoleAxis, Level, LevelGraph, LevelId, Polarization, Rotational, Transition,
};
use crate::propagator::{Engine, PropagationSpec, ThermalSpec};
use crate::pulse::{inclusive_range, Block, PulseParams, ScanSpec, SequenceSpec};
use crate::signal::{ReceiverSpec, RecordSpec, SynthesisMode};

pub const DEFAULT_NAME: &str = "3fba_default";
const DEFAULT_TEXT: &str = include_str!("../configs/3fba_default.toml");

/// Analysis settings: which transitions are listened to and how.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSpec {
    /// Listen transition whose delay slope is negative (`fL±` by default).
    pub listen_plus: String,
    /// Listen transition whose delay slope is positive (`fL∓` by default).
    pub listen_minus: String,
    /// Doublet whose ee is monitored.
    pub observable: Rotational,
    pub bandwidth_khz: f64,
    pub filter_order: usize,
    pub window: Window,
}

impl AnalysisSpec {
    pub fn bandpass(&self, center_mhz: f64) -> BandpassSpec {
        BandpassSpec { center_mhz, bandwidth_khz: self.bandwidth_khz, order: self.filter_order }
    }
}

/// Single-parity pump-cycle fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct IsolationSpec {
    pub remove_transitions: Vec<String>,
    pub populated: Vec<LevelId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub waterfall: bool,
    pub waterfall_window_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub name: String,
    pub seed: u64,
    pub graph: LevelGraph,
    pub sequence: SequenceSpec,
    pub thermal: ThermalSpec,
    pub isolation: IsolationSpec,
    pub receiver: ReceiverSpec,
    pub record: RecordSpec,
    pub analysis: AnalysisSpec,
    pub propagation: PropagationSpec,
    pub delay_scan: Option<ScanSpec>,
    pub phase_scan: Option<ScanSpec>,
    pub output: OutputSpec,
}

impl Experiment {
    /// The single-parity fixture: counterpart transitions removed and only
    /// the isolation populations kept.
    pub fn isolated(&self) -> Result<Experiment> {
        let labels: Vec<&str> = self.isolation.remove_transitions.iter().map(String::as_str).collect();
        let graph = self.graph.without_transitions(&labels)?;
        let thermal = ThermalSpec { populated: self.isolation.populated.clone(), ..self.thermal.clone() };
        Ok(Experiment { graph, thermal, ..self.clone() })
    }

    /// Copy with one level moved to a new energy (revalidated).
    pub fn with_level_energy(&self, id: LevelId, energy: f64) -> Result<Experiment> {
        let mut levels = self.graph.levels().to_vec();
        let level = levels.iter_mut().find(|l| l.id == id).ok_or(Error::UnknownLevel(id))?;
        level.energy = energy;
        let graph = LevelGraph::new(levels, self.graph.transitions().to_vec())?;
        Ok(Experiment { graph, ..self.clone() })
    }

    /// Frequencies of the `(plus, minus)` listen transitions, MHz.
    pub fn listen_frequencies(&self) -> Result<(f64, f64)> {
        Ok((
            self.graph.labeled_frequency(&self.analysis.listen_plus)?,
            self.graph.labeled_frequency(&self.analysis.listen_minus)?,
        ))
    }

    /// Local oscillator for baseband work: configured, or the listen mean.
    pub fn lo_mhz(&self) -> Result<f64> {
        match self.record.lo_mhz {
            Some(lo) => Ok(lo),
            None => {
                let (p, m) = self.listen_frequencies()?;
                Ok(0.5 * (p + m))
            }
        }
    }
}

/// The bundled default system.
pub fn default_experiment() -> Result<Experiment> {
    parse_experiment(DEFAULT_TEXT, DEFAULT_NAME, None)
}

pub fn load_experiment(path: &Path) -> Result<Experiment> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_experiment(&text, &path.display().to_string(), path.parent())
}

/// Parses config text. `base_dir` resolves relative `extends` paths.
pub fn parse_experiment(text: &str, source: &str, base_dir: Option<&Path>) -> Result<Experiment> {
    parse_with_depth(text, source, base_dir, 0)
}

fn parse_with_depth(text: &str, source: &str, base_dir: Option<&Path>, depth: usize) -> Result<Experiment> {
    let ctx = Ctx { text, source };
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(1, |s| ctx.line(s.start));
        Error::Config { line, message: format!("{source}: {}", e.message()) }
    })?;

    let base = match &raw.extends {
        Some(name) => {
            if depth > 8 {
                return Err(ctx.err(name.span().start, "extends chain too deep"));
            }
            let (base_text, base_source, dir) = if name.get_ref() == DEFAULT_NAME {
                (DEFAULT_TEXT.to_owned(), DEFAULT_NAME.to_owned(), None)
            } else {
                let path = base_dir.map_or_else(|| PathBuf::from(name.get_ref()), |d| d.join(name.get_ref()));
                let t = std::fs::read_to_string(&path)
                    .map_err(|e| ctx.err(name.span().start, &format!("cannot read {}: {e}", path.display())))?;
                (t, path.display().to_string(), path.parent().map(Path::to_path_buf))
            };
            Some(parse_with_depth(&base_text, &base_source, dir.as_deref(), depth + 1)?)
        }
        None => None,
    };
    let missing = |section: &str| ctx.err(0, &format!("missing section `{section}` and no `extends` base"));

    let graph = if raw.level.is_empty() && raw.transition.is_empty() {
        match &base {
            Some(b) => b.graph.clone(),
            None => return Err(missing("level")),
        }
    } else {
        build_graph(&ctx, &raw.level, &raw.transition)?
    };

    let sequence = match &raw.sequence {
        Some(s) => build_sequence(&ctx, s, &graph)?,
        None => base.as_ref().map(|b| b.sequence.clone()).ok_or_else(|| missing("sequence"))?,
    };
    for p in &sequence.pulses {
        if graph.transitions_labeled(&p.label).next().is_none() {
            return Err(ctx.err(0, &format!("pulse label `{}` has no transition in the level graph", p.label)));
        }
    }

    let thermal = match &raw.thermal {
        Some(t) => ThermalSpec {
            temperature_k: t.temperature_k,
            populated: level_refs(&ctx, &t.populated, &graph)?,
        },
        None => base.as_ref().map(|b| b.thermal.clone()).ok_or_else(|| missing("thermal"))?,
    };
    if !(thermal.temperature_k > 0.0) {
        return Err(ctx.err(0, "thermal.temperature_k must be positive"));
    }

    let isolation = match &raw.isolation {
        Some(i) => IsolationSpec {
            remove_transitions: i.remove_transitions.iter().map(|s| s.get_ref().clone()).collect(),
            populated: level_refs(&ctx, &i.populated, &graph)?,
        },
        None => base.as_ref().map(|b| b.isolation.clone()).unwrap_or(IsolationSpec {
            remove_transitions: vec![],
            populated: thermal.populated.iter().take(1).copied().collect(),
        }),
    };

    let receiver = match &raw.receiver {
        Some(r) => {
            if !(r.noise_rms >= 0.0) {
                return Err(ctx.err(0, "receiver.noise_rms must be non-negative"));
            }
            ReceiverSpec { polarization: r.polarization, noise_rms: r.noise_rms, gain: r.gain }
        }
        None => base.as_ref().map(|b| b.receiver.clone()).ok_or_else(|| missing("receiver"))?,
    };

    let record_duration = sequence.record_duration;
    let record = match &raw.record {
        Some(r) => RecordSpec {
            sample_rate_gsps: r.sample_rate_gsps,
            duration_us: record_duration,
            decay_us: r.decay_us,
            mode: r.mode,
            decimation: r.decimation,
            passband_mhz: r.passband_mhz,
            lo_mhz: r.lo_mhz,
        },
        None => {
            let mut r = base.as_ref().map(|b| b.record.clone()).ok_or_else(|| missing("record"))?;
            r.duration_us = record_duration;
            r
        }
    };
    if !(record.sample_rate_gsps > 0.0) || !(record.decay_us > 0.0) || record.decimation == 0 {
        return Err(ctx.err(0, "record: sample rate, decay and decimation must be positive"));
    }

    let analysis = match &raw.analysis {
        Some(a) => {
            for label in [&a.listen_plus, &a.listen_minus] {
                if graph.transitions_labeled(label.get_ref()).next().is_none() {
                    return Err(ctx.err(label.span().start, &format!("unknown listen transition `{}`", label.get_ref())));
                }
            }
            let observable = a
                .observable
                .get_ref()
                .parse::<Rotational>()
                .map_err(|m| ctx.err(a.observable.span().start, &m))?;
            graph
                .doublet(observable)
                .map_err(|e| ctx.err(a.observable.span().start, &e.to_string()))?;
            if a.filter_order < 2 || a.filter_order % 2 != 0 {
                return Err(ctx.err(0, "analysis.filter_order must be an even integer >= 2"));
            }
            AnalysisSpec {
                listen_plus: a.listen_plus.get_ref().clone(),
                listen_minus: a.listen_minus.get_ref().clone(),
                observable,
                bandwidth_khz: a.bandwidth_khz,
                filter_order: a.filter_order,
                window: a.window,
            }
        }
        None => base.as_ref().map(|b| b.analysis.clone()).ok_or_else(|| missing("analysis"))?,
    };

    let propagation = match &raw.propagation {
        Some(p) => PropagationSpec {
            engine: p.engine,
            rwa_cutoff_mhz: p.rwa_cutoff_mhz,
            direct_step_cycles: p.direct_step_cycles,
            frequency_scale: p.frequency_scale,
            strict_addressing: p.strict_addressing,
        },
        None => base.as_ref().map(|b| b.propagation.clone()).ok_or_else(|| missing("propagation"))?,
    };

    let (delay_scan, phase_scan) = match &raw.scan {
        Some(s) => (
            match &s.delay {
                Some(d) => Some(build_delay_scan(&ctx, d)?),
                None => None,
            },
            match &s.phase {
                Some(p) => Some(build_phase_scan(&ctx, p, &sequence)?),
                None => None,
            },
        ),
        None => match &base {
            Some(b) => (b.delay_scan.clone(), b.phase_scan.clone()),
            None => (None, None),
        },
    };

    let output = match &raw.output {
        Some(o) => OutputSpec {
            dir: PathBuf::from(&o.dir),
            waterfall: o.waterfall,
            waterfall_window_us: o.waterfall_window_us,
        },
        None => base.as_ref().map(|b| b.output.clone()).unwrap_or(OutputSpec {
            dir: PathBuf::from("out"),
            waterfall: false,
            waterfall_window_us: 1.6,
        }),
    };

    Ok(Experiment {
        name: raw.name.or_else(|| base.as_ref().map(|b| b.name.clone())).unwrap_or_else(|| source.to_owned()),
        seed: raw.seed.or_else(|| base.as_ref().map(|b| b.seed)).unwrap_or(0),
        graph,
        sequence,
        thermal,
        isolation,
        receiver,
        record,
        analysis,
        propagation,
        delay_scan,
        phase_scan,
        output,
    })
}

struct Ctx<'a> {
    text: &'a str,
    source: &'a str,
}

impl Ctx<'_> {
    fn line(&self, offset: usize) -> usize {
        self.text[..offset.min(self.text.len())].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn err(&self, offset: usize, message: &str) -> Error {
        Error::Config { line: self.line(offset), message: format!("{}: {message}", self.source) }
    }
}

fn parse_level(ctx: &Ctx, s: &Spanned<String>) -> Result<LevelId> {
    s.get_ref().parse().map_err(|m: String| ctx.err(s.span().start, &m))
}

fn level_refs(ctx: &Ctx, refs: &[Spanned<String>], graph: &LevelGraph) -> Result<Vec<LevelId>> {
    refs.iter()
        .map(|r| {
            let id = parse_level(ctx, r)?;
            graph.index_of(id).map_err(|e| ctx.err(r.span().start, &e.to_string()))?;
            Ok(id)
        })
        .collect()
}

fn build_graph(ctx: &Ctx, raw_levels: &[Spanned<RawLevel>], raw_transitions: &[Spanned<RawTransition>]) -> Result<LevelGraph> {
    let mut levels = Vec::with_capacity(raw_levels.len());
    for rl in raw_levels {
        let id = parse_level(ctx, &rl.get_ref().id)?;
        let level = Level {
            id,
            energy: rl.get_ref().energy_mhz,
            degeneracy_weight: rl.get_ref().degeneracy_weight,
        };
        let mut so_far = levels.clone();
        so_far.push(level.clone());
        let report = validate_graph(&so_far, &[]);
        if let Some(v) = report.violations.first() {
            return Err(ctx.err(rl.span().start, &v.to_string()));
        }
        levels.push(level);
    }
    let mut transitions = Vec::with_capacity(raw_transitions.len());
    for rt in raw_transitions {
        let r = rt.get_ref();
        let t = Transition {
            label: r.label.clone(),
            lower: parse_level(ctx, &r.lower)?,
            upper: parse_level(ctx, &r.upper)?,
            dipole_axis: r.dipole_axis,
            polarization: r.polarization,
            coupling: r.coupling,
        };
        let report = validate_graph(&levels, std::slice::from_ref(&t));
        if let Some(v) = report.violations.first() {
            return Err(ctx.err(rt.span().start, &v.to_string()));
        }
        if !(t.coupling > 0.0) {
            return Err(ctx.err(rt.span().start, "coupling must be positive"));
        }
        transitions.push(t);
    }
    LevelGraph::new(levels, transitions)
}

fn build_sequence(ctx: &Ctx, raw: &RawSequence, graph: &LevelGraph) -> Result<SequenceSpec> {
    let mut pulses = Vec::with_capacity(raw.pulse.len());
    for rp in &raw.pulse {
        let p = rp.get_ref();
        let at = rp.span().start;
        if graph.transitions_labeled(&p.label).next().is_none() {
            return Err(ctx.err(at, &format!("pulse label `{}` has no transition in the level graph", p.label)));
        }
        let area = match (p.area_pi, p.area_rad) {
            (Some(a), None) => a * PI,
            (None, Some(a)) => a,
            _ => return Err(ctx.err(at, "give exactly one of area_pi / area_rad")),
        };
        let phase = match (p.phase_pi, p.phase_rad) {
            (Some(a), None) => a * PI,
            (None, Some(a)) => a,
            (None, None) => 0.0,
            _ => return Err(ctx.err(at, "give at most one of phase_pi / phase_rad")),
        };
        if !(p.duration_us >= 0.0) || !(area >= 0.0) {
            return Err(ctx.err(at, "duration and area must be non-negative"));
        }
        pulses.push(PulseParams { label: p.label.clone(), block: p.block, area, phase, duration: p.duration_us });
    }
    if !(raw.guard_us >= 0.0) || !(raw.record_duration_us > 0.0) {
        return Err(ctx.err(0, "sequence: guard must be >= 0 and record duration > 0"));
    }
    Ok(SequenceSpec { pulses, guard: raw.guard_us, record_duration: raw.record_duration_us })
}

fn build_delay_scan(ctx: &Ctx, raw: &Spanned<RawDelayScan>) -> Result<ScanSpec> {
    let d = raw.get_ref();
    let values = match (&d.values_us, d.start_us, d.stop_us, d.step_us) {
        (Some(v), None, None, None) => v.clone(),
        (None, Some(a), Some(b), Some(s)) => {
            inclusive_range(a, b, s).map_err(|e| ctx.err(raw.span().start, &e.to_string()))?
        }
        _ => return Err(ctx.err(raw.span().start, "delay scan needs values_us or start_us/stop_us/step_us")),
    };
    ScanSpec::delay(values).map_err(|e| ctx.err(raw.span().start, &e.to_string()))
}

fn build_phase_scan(ctx: &Ctx, raw: &Spanned<RawPhaseScan>, sequence: &SequenceSpec) -> Result<ScanSpec> {
    let p = raw.get_ref();
    let at = raw.span().start;
    if !sequence.pulses.iter().any(|q| q.label == p.target) {
        return Err(ctx.err(at, &format!("phase scan target `{}` is not a pulse", p.target)));
    }
    let values = match (&p.values_rad, p.start_pi, p.stop_pi, p.step_pi) {
        (Some(v), None, None, None) => v.clone(),
        (None, Some(a), Some(b), Some(s)) => inclusive_range(a, b, s)
            .map_err(|e| ctx.err(at, &e.to_string()))?
            .into_iter()
            .map(|v| v * PI)
            .collect(),
        _ => return Err(ctx.err(at, "phase scan needs values_rad or start_pi/stop_pi/step_pi")),
    };
    ScanSpec::pulse_phase(&p.target, values).map_err(|e| ctx.err(at, &e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    seed: Option<u64>,
    extends: Option<Spanned<String>>,
    #[serde(default)]
    level: Vec<Spanned<RawLevel>>,
    #[serde(default)]
    transition: Vec<Spanned<RawTransition>>,
    sequence: Option<RawSequence>,
    thermal: Option<RawThermal>,
    isolation: Option<RawIsolation>,
    receiver: Option<RawReceiver>,
    record: Option<RawRecord>,
    analysis: Option<RawAnalysis>,
    propagation: Option<RawPropagation>,
    scan: Option<RawScan>,
    output: Option<RawOutput>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLevel {
    id: Spanned<String>,
    energy_mhz: f64,
    #[serde(default = "one")]
    degeneracy_weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransition {
    label: Option<String>,
    lower: Spanned<String>,
    upper: Spanned<String>,
    dipole_axis: DipoleAxis,
    polarization: Polarization,
    #[serde(default = "one")]
    coupling: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSequence {
    #[serde(default = "default_guard")]
    guard_us: f64,
    #[serde(default = "default_record")]
    record_duration_us: f64,
    #[serde(default)]
    pulse: Vec<Spanned<RawPulse>>,
}

fn default_guard() -> f64 {
    0.02
}

fn default_record() -> f64 {
    40.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPulse {
    label: String,
    block: Block,
    area_pi: Option<f64>,
    area_rad: Option<f64>,
    phase_pi: Option<f64>,
    phase_rad: Option<f64>,
    duration_us: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawThermal {
    temperature_k: f64,
    populated: Vec<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIsolation {
    #[serde(default)]
    remove_transitions: Vec<Spanned<String>>,
    populated: Vec<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReceiver {
    polarization: Polarization,
    #[serde(default = "one")]
    gain: f64,
    #[serde(default)]
    noise_rms: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    #[serde(default = "default_rate")]
    sample_rate_gsps: f64,
    #[serde(default = "default_decay")]
    decay_us: f64,
    #[serde(default)]
    mode: SynthesisMode,
    #[serde(default = "default_decimation")]
    decimation: usize,
    #[serde(default = "default_passband")]
    passband_mhz: f64,
    lo_mhz: Option<f64>,
}

fn default_rate() -> f64 {
    25.0
}
fn default_decay() -> f64 {
    20.0
}
fn default_decimation() -> usize {
    250
}
fn default_passband() -> f64 {
    5.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    listen_plus: Spanned<String>,
    listen_minus: Spanned<String>,
    observable: Spanned<String>,
    #[serde(default = "default_bandwidth")]
    bandwidth_khz: f64,
    #[serde(default = "default_order")]
    filter_order: usize,
    #[serde(default)]
    window: Window,
}

fn default_bandwidth() -> f64 {
    60.0
}
fn default_order() -> usize {
    6
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPropagation {
    #[serde(default)]
    engine: Engine,
    #[serde(default = "default_cutoff")]
    rwa_cutoff_mhz: f64,
    #[serde(default = "default_step_cycles")]
    direct_step_cycles: f64,
    #[serde(default = "one")]
    frequency_scale: f64,
    #[serde(default = "yes")]
    strict_addressing: bool,
}

fn default_cutoff() -> f64 {
    20.0
}
fn default_step_cycles() -> f64 {
    0.01
}
fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScan {
    delay: Option<Spanned<RawDelayScan>>,
    phase: Option<Spanned<RawPhaseScan>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDelayScan {
    values_us: Option<Vec<f64>>,
    start_us: Option<f64>,
    stop_us: Option<f64>,
    step_us: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhaseScan {
    target: String,
    values_rad: Option<Vec<f64>>,
    start_pi: Option<f64>,
    stop_pi: Option<f64>,
    step_pi: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(default = "default_out")]
    dir: String,
    #[serde(default)]
    waterfall: bool,
    #[serde(default = "default_window")]
    waterfall_window_us: f64,
}

fn default_out() -> String {
    "out".into()
}
fn default_window() -> f64 {
    1.6
}
