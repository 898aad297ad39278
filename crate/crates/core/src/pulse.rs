//! Rectangular, phased, polarized microwave pulses and the pump-probe
//! sequence built from them.
//!
//! A pulse's phase is its starting phase: the field of a pulse that starts at
//! `t_s` is `cos(2 pi f (t - t_s) + phase)`. Shifting a pulse in time
//! therefore keeps its phase relative to its own envelope, which is what a
//! waveform generator does when the probe block is delayed.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::level_system::{LevelGraph, Polarization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Pump,
    Probe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub label: String,
    pub block: Block,
    /// MHz.
    pub carrier: f64,
    /// us.
    pub start: f64,
    /// us. Zero-length pulses are legal no-ops.
    pub duration: f64,
    /// Starting phase in [0, 2pi).
    pub phase: f64,
    /// Rabi rate for unit coupling strength, rad/us. A transition with
    /// coupling `c` is driven at `c * rabi_rate`.
    pub rabi_rate: f64,
    pub polarization: Polarization,
}

impl Pulse {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = wrap_phase(phase);
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(Error::InvalidSequence(format!("pulse {}: negative duration", self.label)));
        }
        if !(self.rabi_rate >= 0.0) || !self.rabi_rate.is_finite() {
            return Err(Error::InvalidSequence(format!("pulse {}: negative Rabi rate", self.label)));
        }
        if !(0.0..TAU).contains(&self.phase) {
            return Err(Error::InvalidSequence(format!("pulse {}: phase outside [0, 2pi)", self.label)));
        }
        Ok(())
    }
}

pub fn wrap_phase(phase: f64) -> f64 {
    let w = phase.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pulses: Vec<Pulse>,
    /// Shift applied to the probe block relative to its earliest position, us.
    pub probe_delay: f64,
    /// us.
    pub record_start: f64,
    /// us.
    pub record_duration: f64,
}

impl PulseSequence {
    pub fn new(pulses: Vec<Pulse>, probe_delay: f64, record_start: f64, record_duration: f64) -> Result<Self> {
        let seq = PulseSequence { pulses, probe_delay, record_start, record_duration };
        seq.check()?;
        Ok(seq)
    }

    fn check(&self) -> Result<()> {
        for p in &self.pulses {
            p.check()?;
        }
        for (i, a) in self.pulses.iter().enumerate() {
            for b in &self.pulses[i + 1..] {
                let overlap = a.start < b.end() && b.start < a.end();
                if a.polarization == b.polarization && overlap && a.duration > 0.0 && b.duration > 0.0 {
                    return Err(Error::InvalidSequence(format!(
                        "pulses {} and {} overlap on polarization {}",
                        a.label, b.label, a.polarization
                    )));
                }
            }
        }
        let last_end = self.pulses.iter().map(Pulse::end).fold(f64::NEG_INFINITY, f64::max);
        if self.record_start < last_end {
            return Err(Error::InvalidSequence(format!(
                "record starts at {} us before the last pulse ends at {last_end} us",
                self.record_start
            )));
        }
        if !(self.record_duration >= 0.0) {
            return Err(Error::InvalidSequence("negative record duration".into()));
        }
        Ok(())
    }

    pub fn pulses(&self) -> &[Pulse] {
        &self.pulses
    }

    pub fn pulse(&self, label: &str) -> Option<&Pulse> {
        self.pulses.iter().find(|p| p.label == label)
    }

    /// Sequence with only the pulses of `block`, keeping timing and record window.
    pub fn only(&self, block: Block) -> PulseSequence {
        let pulses: Vec<Pulse> = self.pulses.iter().filter(|p| p.block == block).cloned().collect();
        let end = pulses.iter().map(Pulse::end).fold(0.0, f64::max);
        PulseSequence {
            pulses,
            probe_delay: self.probe_delay,
            record_start: self.record_start.max(end),
            record_duration: self.record_duration,
        }
    }
}

/// Rabi area, phase and duration for one labeled pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    pub label: String,
    pub block: Block,
    /// Omega * tau for the labeled transition, rad.
    pub area: f64,
    pub phase: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    /// In firing order; pump pulses must precede probe pulses.
    pub pulses: Vec<PulseParams>,
    /// Gap between consecutive pulses and before the record, us.
    pub guard: f64,
    pub record_duration: f64,
}

/// Lays out the pump block from t = 0, then the probe block rigidly shifted
/// by `t_pp`, then the record window. Carriers are the mean frequency of the
/// graph transitions carrying each label.
pub fn build_pump_probe_sequence(graph: &LevelGraph, spec: &SequenceSpec, t_pp: f64) -> Result<PulseSequence> {
    if !(t_pp >= 0.0) || !t_pp.is_finite() {
        return Err(Error::Domain(format!("pump-probe delay must be non-negative, got {t_pp} us")));
    }
    if !(spec.guard >= 0.0) {
        return Err(Error::Domain("guard time must be non-negative".into()));
    }
    if let Some(w) = spec.pulses.windows(2).find(|w| w[0].block == Block::Probe && w[1].block == Block::Pump) {
        return Err(Error::InvalidSequence(format!("pump pulse {} listed after probe pulse {}", w[1].label, w[0].label)));
    }
    let mut pulses = Vec::with_capacity(spec.pulses.len());
    let mut cursor = 0.0;
    let mut probe_started = false;
    for params in &spec.pulses {
        let carrier = graph.labeled_frequency(&params.label)?;
        let (polarization, coupling) = graph.labeled_channel(&params.label)?;
        if !(params.duration >= 0.0) || !(params.area >= 0.0) {
            return Err(Error::Domain(format!("pulse {}: duration and area must be non-negative", params.label)));
        }
        if params.block == Block::Probe && !probe_started {
            probe_started = true;
            cursor += t_pp;
        }
        let rabi_rate = if params.duration > 0.0 { params.area / (params.duration * coupling) } else { 0.0 };
        pulses.push(Pulse {
            label: params.label.clone(),
            block: params.block,
            carrier,
            start: cursor,
            duration: params.duration,
            phase: wrap_phase(params.phase),
            rabi_rate,
            polarization,
        });
        cursor += params.duration + spec.guard;
    }
    PulseSequence::new(pulses, t_pp, cursor, spec.record_duration)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScanKind {
    Delay,
    PulsePhase { target: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub kind: ScanKind,
    pub values: Vec<f64>,
}

impl ScanSpec {
    pub fn delay(values: Vec<f64>) -> Result<Self> {
        let spec = ScanSpec { kind: ScanKind::Delay, values };
        spec.check()?;
        Ok(spec)
    }

    pub fn pulse_phase(target: &str, values: Vec<f64>) -> Result<Self> {
        let spec = ScanSpec { kind: ScanKind::PulsePhase { target: target.to_owned() }, values };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Domain("scan has no values".into()));
        }
        if self.kind == ScanKind::Delay {
            if self.values.windows(2).any(|w| !(w[1] > w[0])) && self.values.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(Error::Domain("delay scan values must be strictly monotonic".into()));
            }
            if self.values.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::Domain("delay scan values must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// `start, start + step, ...` up to and including `stop` (to within 1e-9 steps).
pub fn inclusive_range(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) {
        return Err(Error::Domain(format!("bad range {start}..={stop} step {step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// One sequence per scan value. Delay scans move only the probe block and
/// the record window; phase scans change only the target pulse's phase.
pub fn apply_scan(base: &PulseSequence, spec: &ScanSpec) -> Result<Vec<PulseSequence>> {
    spec.check()?;
    match &spec.kind {
        ScanKind::Delay => spec
            .values
            .iter()
            .map(|&delay| {
                let shift = delay - base.probe_delay;
                let pulses = base
                    .pulses
                    .iter()
                    .map(|p| match p.block {
                        Block::Pump => p.clone(),
                        Block::Probe => Pulse { start: p.start + shift, ..p.clone() },
                    })
                    .collect();
                let has_probe = base.pulses.iter().any(|p| p.block == Block::Probe);
                let record_start = if has_probe { base.record_start + shift } else { base.record_start };
                PulseSequence::new(pulses, delay, record_start, base.record_duration)
            })
            .collect(),
        ScanKind::PulsePhase { target } => {
            if base.pulse(target).is_none() {
                return Err(Error::UnknownTransition(target.clone()));
            }
            Ok(spec
                .values
                .iter()
                .map(|&phase| {
                    let pulses = base
                        .pulses
                        .iter()
                        .map(|p| if &p.label == target { p.clone().with_phase(phase) } else { p.clone() })
                        .collect();
                    PulseSequence { pulses, ..base.clone() }
                })
                .collect())
        }
    }
}
