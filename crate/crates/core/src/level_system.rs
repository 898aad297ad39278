//! Rotational-tunneling level graph.
//!
//! Every rotational level `J_{KaKc}` of a tunneling molecule is split into a
//! doublet of parity eigenstates `|+>` and `|->`. Dipole-allowed transitions
//! are tagged by the molecular dipole axis that carries them and the lab
//! polarization of the field that drives them. c-type transitions connect
//! opposite parities (interstate), a- and b-type transitions keep the parity
//! (intrastate).
//!
//! Energies are stored as frequencies (E/h) in MHz, times in microseconds.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parity {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Parity {
    pub fn flipped(self) -> Parity {
        match self {
            Parity::Plus => Parity::Minus,
            Parity::Minus => Parity::Plus,
        }
    }

    fn symbol(self) -> char {
        match self {
            Parity::Plus => '+',
            Parity::Minus => '-',
        }
    }
}

/// Rotational quantum numbers `J_{KaKc}` without the tunneling parity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rotational {
    pub j: u32,
    pub ka: i32,
    pub kc: i32,
}

impl Rotational {
    pub const fn new(j: u32, ka: i32, kc: i32) -> Self {
        Rotational { j, ka, kc }
    }

    pub fn with_parity(self, parity: Parity) -> LevelId {
        LevelId { j: self.j, ka: self.ka, kc: self.kc, parity }
    }
}

impl fmt::Display for Rotational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if (0..10).contains(&self.ka) && (0..10).contains(&self.kc) {
            write!(f, "{}_{}{}", self.j, self.ka, self.kc)
        } else {
            write!(f, "{}_{},{}", self.j, self.ka, self.kc)
        }
    }
}

/// A single level: rotational state plus tunneling parity.
///
/// Text form is `J_KaKc±` (for example `1_01+`), or `J_Ka,Kc±` when either
/// projection has more than one digit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LevelId {
    pub j: u32,
    pub ka: i32,
    pub kc: i32,
    pub parity: Parity,
}

impl LevelId {
    pub const fn new(j: u32, ka: i32, kc: i32, parity: Parity) -> Self {
        LevelId { j, ka, kc, parity }
    }

    pub fn rotational(&self) -> Rotational {
        Rotational::new(self.j, self.ka, self.kc)
    }

    pub fn partner(&self) -> LevelId {
        LevelId { parity: self.parity.flipped(), ..*self }
    }
}

impl fmt::Display for LevelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.rotational(), self.parity.symbol())
    }
}

impl FromStr for Rotational {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("`{s}` is not a rotational label of the form J_KaKc or J_Ka,Kc");
        let (j, k) = s.trim().split_once('_').ok_or_else(bad)?;
        let j: u32 = j.parse().map_err(|_| bad())?;
        let (ka, kc) = if let Some((a, c)) = k.split_once(',') {
            (a.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?)
        } else {
            let digits: Vec<i32> = k
                .chars()
                .map(|c| c.to_digit(10).map(|d| d as i32))
                .collect::<Option<_>>()
                .ok_or_else(bad)?;
            match digits[..] {
                [a, c] => (a, c),
                _ => return Err(bad()),
            }
        };
        Ok(Rotational::new(j, ka, kc))
    }
}

impl FromStr for LevelId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let parity = match s.chars().last() {
            Some('+') => Parity::Plus,
            Some('-') | Some('−') => Parity::Minus,
            _ => return Err(format!("`{s}` must end with a parity sign + or -")),
        };
        let body = &s[..s.len() - s.chars().last().map_or(0, char::len_utf8)];
        Ok(body.parse::<Rotational>()?.with_parity(parity))
    }
}

impl Serialize for LevelId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LevelId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub id: LevelId,
    /// E/h in MHz.
    pub energy: f64,
    /// Multiplies the Boltzmann population; absorbs the M-degeneracy.
    pub degeneracy_weight: f64,
}

impl Level {
    pub fn new(id: LevelId, energy: f64) -> Self {
        Level { id, energy, degeneracy_weight: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DipoleAxis {
    A,
    B,
    C,
}

impl DipoleAxis {
    /// c-type transitions invert the tunneling coordinate and therefore flip parity.
    pub fn is_interstate(self) -> bool {
        matches!(self, DipoleAxis::C)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    X,
    Y,
    Z,
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarization::X => "x",
            Polarization::Y => "y",
            Polarization::Z => "z",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Optional name such as `f1∓` or `f2`. Intrastate doublet components
    /// excited by one carrier share a label.
    pub label: Option<String>,
    pub lower: LevelId,
    pub upper: LevelId,
    pub dipole_axis: DipoleAxis,
    pub polarization: Polarization,
    /// Relative dipole matrix element.
    pub coupling: f64,
}

impl Transition {
    pub fn new(
        label: Option<&str>,
        lower: LevelId,
        upper: LevelId,
        dipole_axis: DipoleAxis,
        polarization: Polarization,
    ) -> Self {
        Transition {
            label: label.map(str::to_owned),
            lower,
            upper,
            dipole_axis,
            polarization,
            coupling: 1.0,
        }
    }

    fn describe(&self) -> String {
        match &self.label {
            Some(l) => format!("{l} ({} -> {})", self.lower, self.upper),
            None => format!("{} -> {}", self.lower, self.upper),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateLevel(LevelId),
    ProjectionOutOfRange(LevelId),
    NonPositiveWeight(LevelId),
    NonFiniteEnergy(LevelId),
    DanglingEndpoint { transition: String, missing: LevelId },
    InterstateMustFlipParity(String),
    IntrastateMustKeepParity(String),
    NonPositiveFrequency { transition: String, frequency: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateLevel(id) => write!(f, "duplicate level {id}"),
            Violation::ProjectionOutOfRange(id) => write!(f, "level {id}: |Ka| and |Kc| must not exceed J"),
            Violation::NonPositiveWeight(id) => write!(f, "level {id}: degeneracy weight must be positive"),
            Violation::NonFiniteEnergy(id) => write!(f, "level {id}: energy must be finite"),
            Violation::DanglingEndpoint { transition, missing } => {
                write!(f, "dangling endpoint: transition {transition} references missing level {missing}")
            }
            Violation::InterstateMustFlipParity(t) => {
                write!(f, "interstate transition must flip parity: {t}")
            }
            Violation::IntrastateMustKeepParity(t) => {
                write!(f, "intrastate transition must keep parity: {t}")
            }
            Violation::NonPositiveFrequency { transition, frequency } => {
                write!(f, "transition {transition} has non-positive frequency {frequency} MHz")
            }
        }
    }
}

/// Result of [`validate_graph`]; empty iff every invariant holds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Checks level uniqueness, projection bounds, endpoints, the parity
/// selection rules and positive transition frequencies.
pub fn validate_graph(levels: &[Level], transitions: &[Transition]) -> ValidationReport {
    let mut violations = Vec::new();
    let mut energies: HashMap<LevelId, f64> = HashMap::new();
    for level in levels {
        let id = level.id;
        if energies.insert(id, level.energy).is_some() {
            violations.push(Violation::DuplicateLevel(id));
        }
        if id.ka.unsigned_abs() > id.j || id.kc.unsigned_abs() > id.j {
            violations.push(Violation::ProjectionOutOfRange(id));
        }
        if !(level.degeneracy_weight > 0.0) {
            violations.push(Violation::NonPositiveWeight(id));
        }
        if !level.energy.is_finite() {
            violations.push(Violation::NonFiniteEnergy(id));
        }
    }
    for t in transitions {
        let mut complete = true;
        for end in [t.lower, t.upper] {
            if !energies.contains_key(&end) {
                violations.push(Violation::DanglingEndpoint { transition: t.describe(), missing: end });
                complete = false;
            }
        }
        let flips = t.lower.parity != t.upper.parity;
        if t.dipole_axis.is_interstate() && !flips {
            violations.push(Violation::InterstateMustFlipParity(t.describe()));
        }
        if !t.dipole_axis.is_interstate() && flips {
            violations.push(Violation::IntrastateMustKeepParity(t.describe()));
        }
        if complete {
            let frequency = energies[&t.upper] - energies[&t.lower];
            if !(frequency > 0.0) {
                violations.push(Violation::NonPositiveFrequency { transition: t.describe(), frequency });
            }
        }
    }
    ValidationReport { violations }
}

/// `1 / (2 * splitting)`: time for a localized wavepacket to tunnel to the
/// opposite well. MHz in, microseconds out.
pub fn transfer_time(splitting: f64) -> Result<f64> {
    if !(splitting > 0.0) || !splitting.is_finite() {
        return Err(Error::Domain(format!("transfer time needs a positive splitting, got {splitting} MHz")));
    }
    Ok(1.0 / (2.0 * splitting))
}

/// Validated, immutable level graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelGraph {
    levels: Vec<Level>,
    transitions: Vec<Transition>,
    index: HashMap<LevelId, usize>,
}

impl LevelGraph {
    pub fn new(levels: Vec<Level>, transitions: Vec<Transition>) -> Result<Self> {
        let report = validate_graph(&levels, &transitions);
        if !report.is_empty() {
            return Err(Error::InvalidGraph(report.to_string()));
        }
        let index = levels.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
        Ok(LevelGraph { levels, transitions, index })
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    pub fn index_of(&self, id: LevelId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownLevel(id))
    }

    pub fn level(&self, id: LevelId) -> Result<&Level> {
        Ok(&self.levels[self.index_of(id)?])
    }

    pub fn energy(&self, id: LevelId) -> Result<f64> {
        Ok(self.level(id)?.energy)
    }

    pub fn energies(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.energy).collect()
    }

    /// Transition frequency in MHz (always positive for a validated graph).
    pub fn frequency(&self, t: &Transition) -> f64 {
        self.levels[self.index[&t.upper]].energy - self.levels[self.index[&t.lower]].energy
    }

    pub fn transitions_labeled<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Transition> + 'a {
        self.transitions.iter().filter(move |t| t.label.as_deref() == Some(label))
    }

    /// Mean frequency of all transitions carrying `label`.
    pub fn labeled_frequency(&self, label: &str) -> Result<f64> {
        let freqs: Vec<f64> = self.transitions_labeled(label).map(|t| self.frequency(t)).collect();
        if freqs.is_empty() {
            return Err(Error::UnknownTransition(label.to_owned()));
        }
        Ok(freqs.iter().sum::<f64>() / freqs.len() as f64)
    }

    /// Lab polarization and coupling of the first transition carrying `label`.
    pub fn labeled_channel(&self, label: &str) -> Result<(Polarization, f64)> {
        self.transitions_labeled(label)
            .next()
            .map(|t| (t.polarization, t.coupling))
            .ok_or_else(|| Error::UnknownTransition(label.to_owned()))
    }

    /// Indices of the `(+, -)` members of a doublet.
    pub fn doublet(&self, rot: Rotational) -> Result<(usize, usize)> {
        let plus = self.index.get(&rot.with_parity(Parity::Plus));
        let minus = self.index.get(&rot.with_parity(Parity::Minus));
        match (plus, minus) {
            (Some(&p), Some(&m)) => Ok((p, m)),
            _ => Err(Error::IncompleteDoublet(rot.to_string())),
        }
    }

    /// `energy(-) - energy(+)` of the doublet `rot`, in MHz.
    pub fn tunneling_splitting(&self, rot: Rotational) -> Result<f64> {
        let (p, m) = self.doublet(rot)?;
        Ok(self.levels[m].energy - self.levels[p].energy)
    }

    /// Frequency separation of the two interstate components `f∓` and `f±`
    /// joining two doublets. For identically ordered doublets this is the sum
    /// of the two splittings.
    pub fn interstate_doublet_spacing(&self, lower: Rotational, upper: Rotational) -> Result<f64> {
        let (lp, lm) = self.doublet(lower)?;
        let (up, um) = self.doublet(upper)?;
        let connected = self.transitions.iter().any(|t| {
            t.dipole_axis.is_interstate()
                && ((t.lower.rotational() == lower && t.upper.rotational() == upper)
                    || (t.lower.rotational() == upper && t.upper.rotational() == lower))
        });
        if !connected {
            return Err(Error::NotConnected { lower: lower.to_string(), upper: upper.to_string() });
        }
        let e = |i: usize| self.levels[i].energy;
        let f_mp = e(um) - e(lp);
        let f_pm = e(up) - e(lm);
        Ok((f_mp - f_pm).abs())
    }

    /// Copy with every level energy shifted by `offset` MHz.
    pub fn shifted(&self, offset: f64) -> LevelGraph {
        let mut g = self.clone();
        for l in &mut g.levels {
            l.energy += offset;
        }
        g
    }

    /// Copy with the rotational part of every doublet divided by `factor`
    /// while keeping each level's offset from its doublet's `+` member (or
    /// from itself for singlets). Tunneling splittings, and hence every
    /// `nu * t` product, are unchanged; carriers shrink by `factor`.
    pub fn scaled_rotational(&self, factor: f64) -> Result<LevelGraph> {
        if !(factor > 0.0) {
            return Err(Error::Domain(format!("frequency scale factor must be positive, got {factor}")));
        }
        let base: HashMap<Rotational, f64> = self
            .levels
            .iter()
            .map(|l| {
                let anchor = self
                    .index
                    .get(&l.id.rotational().with_parity(Parity::Plus))
                    .map_or(l.energy, |&i| self.levels[i].energy);
                (l.id.rotational(), anchor)
            })
            .collect();
        let levels = self
            .levels
            .iter()
            .map(|l| {
                let anchor = base[&l.id.rotational()];
                Level { energy: anchor / factor + (l.energy - anchor), ..l.clone() }
            })
            .collect();
        LevelGraph::new(levels, self.transitions.clone())
    }

    /// Copy without the referenced transitions. A reference is a label
    /// (removing every component carrying it) or `"lower -> upper"`.
    pub fn without_transitions(&self, refs: &[&str]) -> Result<LevelGraph> {
        let mut labels = Vec::new();
        let mut pairs = Vec::new();
        for r in refs {
            match r.split_once("->") {
                Some((a, b)) => {
                    let lower: LevelId = a.trim().parse().map_err(Error::UnknownTransition)?;
                    let upper: LevelId = b.trim().parse().map_err(Error::UnknownTransition)?;
                    if !self.transitions.iter().any(|t| t.lower == lower && t.upper == upper) {
                        return Err(Error::UnknownTransition(r.to_string()));
                    }
                    pairs.push((lower, upper));
                }
                None => labels.push(*r),
            }
        }
        let transitions = self
            .transitions
            .iter()
            .filter(|t| !t.label.as_deref().is_some_and(|l| labels.contains(&l)))
            .filter(|t| !pairs.contains(&(t.lower, t.upper)))
            .cloned()
            .collect();
        LevelGraph::new(self.levels.clone(), transitions)
    }
}
