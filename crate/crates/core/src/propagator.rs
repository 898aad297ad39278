//! Density-matrix propagation through a pulse sequence.
//!
//! Two engines share one timeline: the rotating-frame engine exponentiates a
//! piecewise-constant Hamiltonian per segment, the direct engine integrates
//! the full lab-frame Hamiltonian with RK4. Energies are E/h in MHz and
//! times in us, so `H = 2 pi E` in rad/us.

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::level_system::{LevelGraph, LevelId};
use crate::pulse::{Pulse, PulseSequence};

pub type CMatrix = DMatrix<Complex64>;

/// Boltzmann constant over Planck constant, in MHz per K.
const H_OVER_K_K_PER_MHZ: f64 = 6.626_070_15e-34 * 1e6 / 1.380_649e-23;
/// Largest admissible phase advance per direct step, in cycles.
pub const DIRECT_STEP_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    pub rho: CMatrix,
    /// us.
    pub time: f64,
}

impl QuantumState {
    /// `|psi><psi|` for a normalized amplitude vector.
    pub fn pure(amplitudes: &[Complex64], time: f64) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("state vector norm^2 is {norm}, expected 1")));
        }
        let n = amplitudes.len();
        let rho = CMatrix::from_fn(n, n, |i, j| amplitudes[i] * amplitudes[j].conj());
        Ok(QuantumState { rho, time })
    }

    pub fn from_rho(rho: CMatrix, time: f64) -> Result<Self> {
        let s = QuantumState { rho, time };
        s.check(1e-12)?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    /// Largest `|rho - rho^dagger|` entry.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.rho[(i, j)] - self.rho[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.rho[(i, i)].re).collect()
    }

    pub fn purity(&self) -> f64 {
        (&self.rho * &self.rho).trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Trace, Hermiticity and positivity within `tol` (positivity at 1e-10).
    pub fn check(&self, tol: f64) -> Result<()> {
        if self.rho.nrows() != self.rho.ncols() {
            return Err(Error::Domain("density matrix is not square".into()));
        }
        let tr = self.trace();
        if (tr - 1.0).norm() > tol {
            return Err(Error::Domain(format!("trace {tr} differs from 1")));
        }
        let herm = self.hermiticity_error();
        if herm > tol {
            return Err(Error::Domain(format!("density matrix not Hermitian ({herm:e})")));
        }
        let min = self.min_eigenvalue();
        if min < -1e-10 {
            return Err(Error::Domain(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalSpec {
    /// K. `f64::INFINITY` gives uniform populations.
    pub temperature_k: f64,
    pub populated: Vec<LevelId>,
}

/// Diagonal Boltzmann state over the populated levels at t = 0.
pub fn thermal_state(graph: &LevelGraph, spec: &ThermalSpec) -> Result<QuantumState> {
    if !(spec.temperature_k > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {} K", spec.temperature_k)));
    }
    if spec.populated.is_empty() {
        return Err(Error::Domain("no populated levels".into()));
    }
    let mut weights = vec![0.0; graph.dim()];
    let e0 = spec
        .populated
        .iter()
        .map(|&id| graph.energy(id))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    for &id in &spec.populated {
        let level = graph.level(id)?;
        let beta = H_OVER_K_K_PER_MHZ / spec.temperature_k;
        weights[graph.index_of(id)?] = level.degeneracy_weight * (-(level.energy - e0) * beta).exp();
    }
    let total: f64 = weights.iter().sum();
    let rho = CMatrix::from_fn(graph.dim(), graph.dim(), |i, j| {
        if i == j {
            Complex64::new(weights[i] / total, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    Ok(QuantumState { rho, time: 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Rwa,
    Direct,
}

impl std::str::FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rwa" => Ok(Engine::Rwa),
            "direct" => Ok(Engine::Direct),
            other => Err(format!("unknown engine `{other}` (expected rwa or direct)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationSpec {
    pub engine: Engine,
    /// Largest |transition - carrier| still driven by the rotating-frame engine, MHz.
    pub rwa_cutoff_mhz: f64,
    /// Direct-engine step as a fraction of the fastest period involved.
    pub direct_step_cycles: f64,
    /// Rotational energies are divided by this before propagation.
    pub frequency_scale: f64,
    /// Pulses that address nothing are errors rather than warnings.
    pub strict_addressing: bool,
}

impl Default for PropagationSpec {
    fn default() -> Self {
        PropagationSpec {
            engine: Engine::Rwa,
            rwa_cutoff_mhz: 20.0,
            direct_step_cycles: 0.01,
            frequency_scale: 1.0,
            strict_addressing: true,
        }
    }
}

/// Field-free evolution: `rho_mn -> rho_mn exp(-i 2 pi (E_m - E_n) d)`.
pub fn propagate_free(state: &QuantumState, graph: &LevelGraph, duration: f64) -> Result<QuantumState> {
    if !(duration >= 0.0) {
        return Err(Error::Domain(format!("negative free-evolution time {duration} us")));
    }
    check_dim(state, graph)?;
    let e = graph.energies();
    let phases: Vec<Complex64> = e.iter().map(|&em| Complex64::cis(-TAU * em * duration)).collect();
    let rho = CMatrix::from_fn(state.dim(), state.dim(), |m, n| state.rho[(m, n)] * phases[m] * phases[n].conj());
    Ok(QuantumState { rho, time: state.time + duration })
}

/// Rotating-wave propagation through one pulse. A state earlier than the
/// pulse start is first evolved freely up to it.
pub fn propagate_pulse_rwa(state: &QuantumState, graph: &LevelGraph, pulse: &Pulse, spec: &PropagationSpec) -> Result<QuantumState> {
    let s = advance_to(state, graph, pulse.start)?;
    check_addressed(graph, pulse, spec)?;
    rwa_segment(&s, graph, &[pulse], pulse.end(), spec.rwa_cutoff_mhz)
}

/// Direct RK4 propagation through one pulse with step `step` us.
pub fn propagate_pulse_direct(state: &QuantumState, graph: &LevelGraph, pulse: &Pulse, step: f64) -> Result<QuantumState> {
    let s = advance_to(state, graph, pulse.start)?;
    direct_segment(&s, graph, &[pulse], pulse.end(), step)
}

/// Step the direct engine would use for these pulses: `cycles` periods of
/// the fastest driven transition or carrier.
pub fn direct_step(graph: &LevelGraph, pulses: &[&Pulse], cycles: f64) -> f64 {
    let f_max = driven_terms(graph, pulses)
        .iter()
        .flat_map(|d| std::iter::once(d.f_tr).chain(d.drives.iter().map(|p| p.carrier)))
        .fold(0.0f64, f64::max);
    if f_max > 0.0 {
        cycles / f_max
    } else {
        f64::INFINITY
    }
}

fn check_dim(state: &QuantumState, graph: &LevelGraph) -> Result<()> {
    if state.dim() != graph.dim() {
        return Err(Error::Domain(format!("state dimension {} does not match graph dimension {}", state.dim(), graph.dim())));
    }
    Ok(())
}

fn advance_to(state: &QuantumState, graph: &LevelGraph, t: f64) -> Result<QuantumState> {
    let dt = t - state.time;
    if dt < -1e-12 {
        return Err(Error::InvalidSequence(format!("state at {} us is already past {t} us", state.time)));
    }
    propagate_free(state, graph, dt.max(0.0))
}

fn addressed<'a>(graph: &'a LevelGraph, pulse: &'a Pulse, cutoff: f64) -> impl Iterator<Item = &'a crate::level_system::Transition> + 'a {
    graph
        .transitions()
        .iter()
        .filter(move |t| t.polarization == pulse.polarization && (graph.frequency(t) - pulse.carrier).abs() <= cutoff)
}

fn check_addressed(graph: &LevelGraph, pulse: &Pulse, spec: &PropagationSpec) -> Result<()> {
    if pulse.duration > 0.0 && addressed(graph, pulse, spec.rwa_cutoff_mhz).next().is_none() {
        if spec.strict_addressing {
            return Err(Error::AddressesNothing(pulse.label.clone()));
        }
        warn!("pulse {} at {} MHz addresses no transition", pulse.label, pulse.carrier);
    }
    Ok(())
}

struct Edge {
    lower: usize,
    upper: usize,
    carrier: f64,
    /// Off-diagonal element `H_rot[upper, lower]`, rad/us.
    element: Complex64,
}

/// Exact propagation from `state.time` to `t1` with `pulses` on throughout.
fn rwa_segment(state: &QuantumState, graph: &LevelGraph, pulses: &[&Pulse], t1: f64, cutoff: f64) -> Result<QuantumState> {
    check_dim(state, graph)?;
    let t0 = state.time;
    if t1 <= t0 {
        return Ok(state.clone());
    }
    let mut edges = Vec::new();
    for p in pulses {
        let phi_abs = p.phase - TAU * p.carrier * p.start;
        for t in addressed(graph, p, cutoff) {
            edges.push(Edge {
                lower: graph.index_of(t.lower)?,
                upper: graph.index_of(t.upper)?,
                carrier: p.carrier,
                element: Complex64::from_polar(0.5 * p.rabi_rate * t.coupling, -phi_abs),
            });
        }
    }
    if edges.is_empty() {
        return propagate_free(state, graph, t1 - t0);
    }
    let n = graph.dim();
    let energies = graph.energies();
    let omega = frame_frequencies(&energies, &edges)?;

    let mut h = CMatrix::zeros(n, n);
    for j in 0..n {
        h[(j, j)] = Complex64::new(TAU * (energies[j] - omega[j]), 0.0);
    }
    for e in &edges {
        h[(e.upper, e.lower)] += e.element;
        h[(e.lower, e.upper)] += e.element.conj();
    }
    let eig = h.symmetric_eigen();
    let dt = t1 - t0;
    let phases = CMatrix::from_diagonal(&eig.eigenvalues.map(|w| Complex64::cis(-w * dt)));
    let u_rot = &eig.eigenvectors * phases * eig.eigenvectors.adjoint();
    let u = CMatrix::from_fn(n, n, |j, k| {
        Complex64::cis(-TAU * omega[j] * t1) * u_rot[(j, k)] * Complex64::cis(TAU * omega[k] * t0)
    });
    let rho = &u * &state.rho * u.adjoint();
    Ok(QuantumState { rho, time: t1 })
}

/// Rotating-frame frequency per level: each connected cluster of driven
/// transitions is anchored at its first level's energy and every edge adds
/// its carrier going up. Undriven levels keep their own energy.
fn frame_frequencies(energies: &[f64], edges: &[Edge]) -> Result<Vec<f64>> {
    let n = energies.len();
    let mut omega: Vec<Option<f64>> = vec![None; n];
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for e in edges {
        adj[e.lower].push((e.upper, e.carrier));
        adj[e.upper].push((e.lower, -e.carrier));
    }
    for root in 0..n {
        if omega[root].is_some() {
            continue;
        }
        omega[root] = Some(energies[root]);
        let mut queue = VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            let wi = omega[i].unwrap_or_default();
            for &(j, df) in &adj[i] {
                let wj = wi + df;
                match omega[j] {
                    None => {
                        omega[j] = Some(wj);
                        queue.push_back(j);
                    }
                    Some(existing) if (existing - wj).abs() > 1e-9 * (1.0 + wj.abs()) => {
                        return Err(Error::InconsistentFrame(format!(
                            "driven loop through levels {i} and {j} does not close ({existing} vs {wj} MHz)"
                        )));
                    }
                    Some(_) => {}
                }
            }
        }
    }
    Ok(omega.into_iter().map(Option::unwrap_or_default).collect())
}

struct Driven<'a> {
    lower: usize,
    upper: usize,
    f_tr: f64,
    coupling: f64,
    drives: Vec<&'a Pulse>,
}

/// Every transition sharing a polarization with an active pulse, no cutoff.
fn driven_terms<'a>(graph: &LevelGraph, pulses: &[&'a Pulse]) -> Vec<Driven<'a>> {
    graph
        .transitions()
        .iter()
        .filter_map(|t| {
            let drives: Vec<&Pulse> =
                pulses.iter().copied().filter(|p| p.polarization == t.polarization && p.rabi_rate > 0.0).collect();
            if drives.is_empty() {
                return None;
            }
            Some(Driven {
                lower: graph.index_of(t.lower).ok()?,
                upper: graph.index_of(t.upper).ok()?,
                f_tr: graph.frequency(t),
                coupling: t.coupling,
                drives,
            })
        })
        .collect()
}

/// RK4 in the interaction picture of H0 referenced to the segment start.
fn direct_segment(state: &QuantumState, graph: &LevelGraph, pulses: &[&Pulse], t1: f64, step: f64) -> Result<QuantumState> {
    check_dim(state, graph)?;
    let t0 = state.time;
    if t1 <= t0 {
        return Ok(state.clone());
    }
    let terms = driven_terms(graph, pulses);
    if terms.is_empty() {
        return propagate_free(state, graph, t1 - t0);
    }
    let f_max = terms
        .iter()
        .flat_map(|d| std::iter::once(d.f_tr).chain(d.drives.iter().map(|p| p.carrier)))
        .fold(0.0f64, f64::max);
    if !(step > 0.0) || f_max * step > DIRECT_STEP_LIMIT {
        return Err(Error::StepTooLarge { step, cycles: f_max * step, limit: DIRECT_STEP_LIMIT });
    }
    let n = graph.dim();
    let steps = ((t1 - t0) / step).ceil().max(1.0) as usize;
    let h = (t1 - t0) / steps as f64;

    let coupling_at = |t: f64, out: &mut Vec<Complex64>| {
        out.clear();
        for d in &terms {
            let field: f64 = d
                .drives
                .iter()
                .map(|p| p.rabi_rate * (TAU * p.carrier * (t - p.start) + p.phase).cos())
                .sum();
            out.push(Complex64::from_polar(field * d.coupling, TAU * d.f_tr * (t - t0)));
        }
    };
    // d rho / dt = -i [V, rho] = -i (A - A^dagger) with A = V rho.
    let derivative = |v: &[Complex64], rho: &[Complex64], a: &mut [Complex64], out: &mut [Complex64]| {
        a.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
        for (d, &vk) in terms.iter().zip(v) {
            let (u, l) = (d.upper, d.lower);
            for c in 0..n {
                a[u * n + c] += vk * rho[l * n + c];
                a[l * n + c] += vk.conj() * rho[u * n + c];
            }
        }
        for r in 0..n {
            for c in 0..n {
                let diff = a[r * n + c] - a[c * n + r].conj();
                out[r * n + c] = Complex64::new(diff.im, -diff.re);
            }
        }
    };

    let mut rho: Vec<Complex64> = (0..n * n).map(|k| state.rho[(k / n, k % n)]).collect();
    let zero = Complex64::new(0.0, 0.0);
    let (mut a, mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![zero; n * n], vec![zero; n * n], vec![zero; n * n], vec![zero; n * n], vec![zero; n * n], vec![zero; n * n]);
    let (mut v0, mut vm, mut v1) = (Vec::new(), Vec::new(), Vec::new());
    coupling_at(t0, &mut v0);
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        coupling_at(t + 0.5 * h, &mut vm);
        coupling_at(t + h, &mut v1);
        derivative(&v0, &rho, &mut a, &mut k1);
        for i in 0..n * n {
            tmp[i] = rho[i] + k1[i] * (0.5 * h);
        }
        derivative(&vm, &tmp, &mut a, &mut k2);
        for i in 0..n * n {
            tmp[i] = rho[i] + k2[i] * (0.5 * h);
        }
        derivative(&vm, &tmp, &mut a, &mut k3);
        for i in 0..n * n {
            tmp[i] = rho[i] + k3[i] * h;
        }
        derivative(&v1, &tmp, &mut a, &mut k4);
        for i in 0..n * n {
            rho[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }
        std::mem::swap(&mut v0, &mut v1);
    }
    let interaction = QuantumState { rho: CMatrix::from_fn(n, n, |r, c| rho[r * n + c]), time: t0 };
    propagate_free(&interaction, graph, t1 - t0)
}

/// State at a segment boundary of a sequence run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub time: f64,
    /// Pulses active during the segment that ended here (`free` for gaps,
    /// `record` for the final point).
    pub label: String,
    pub state: QuantumState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    /// State at the record start.
    pub fn final_state(&self) -> &QuantumState {
        &self.points.last().expect("trajectory has at least the initial point").state
    }

    /// CSV: `time_us,label,pop_<level>...,re,im` where `re`, `im` are the
    /// `(row, col)` coherence.
    pub fn write_csv(&self, path: &Path, graph: &LevelGraph, coherence: (usize, usize)) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec!["time_us".to_owned(), "label".to_owned()];
        header.extend(graph.levels().iter().map(|l| format!("pop_{}", l.id)));
        header.extend(["re".to_owned(), "im".to_owned()]);
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for p in &self.points {
            let mut row = vec![format!("{}", p.time), p.label.clone()];
            row.extend(p.state.populations().iter().map(|x| format!("{x}")));
            let c = p.state.rho[coherence];
            row.extend([format!("{}", c.re), format!("{}", c.im)]);
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format { path: path.to_path_buf(), message: e.to_string() }
}

/// Propagates through the whole sequence and on to `record_start`. The
/// timeline is cut wherever the set of active pulses changes; pulses on
/// different polarizations may overlap.
pub fn run_sequence(state: &QuantumState, graph: &LevelGraph, sequence: &PulseSequence, spec: &PropagationSpec) -> Result<Trajectory> {
    check_dim(state, graph)?;
    let pulses: Vec<&Pulse> = sequence.pulses().iter().filter(|p| p.duration > 0.0).collect();
    if spec.engine == Engine::Rwa {
        for p in &pulses {
            check_addressed(graph, p, spec)?;
        }
    }
    let mut cuts: Vec<f64> = pulses.iter().flat_map(|p| [p.start, p.end()]).collect();
    cuts.push(sequence.record_start);
    cuts.retain(|&t| t > state.time);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut points = vec![TrajectoryPoint { time: state.time, label: "initial".into(), state: state.clone() }];
    let mut current = state.clone();
    for &t1 in &cuts {
        let t0 = current.time;
        let mid = 0.5 * (t0 + t1);
        let active: Vec<&Pulse> = pulses.iter().copied().filter(|p| p.start <= mid && mid < p.end()).collect();
        current = if active.is_empty() {
            propagate_free(&current, graph, t1 - t0)?
        } else {
            match spec.engine {
                Engine::Rwa => rwa_segment(&current, graph, &active, t1, spec.rwa_cutoff_mhz)?,
                Engine::Direct => {
                    let step = direct_step(graph, &active, spec.direct_step_cycles);
                    direct_segment(&current, graph, &active, t1, step)?
                }
            }
        };
        current.time = t1;
        let label = if (t1 - sequence.record_start).abs() < 1e-12 {
            "record".to_owned()
        } else if active.is_empty() {
            "free".to_owned()
        } else {
            active.iter().map(|p| p.label.as_str()).collect::<Vec<_>>().join("+")
        };
        points.push(TrajectoryPoint { time: t1, label, state: current.clone() });
    }
    Ok(Trajectory { points })
}
