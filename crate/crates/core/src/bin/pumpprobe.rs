use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use serde::Serialize;

use chiral_pumpprobe::config::{default_experiment, load_experiment, Experiment};
use chiral_pumpprobe::dsp::{bandpass_prototype, bandpass_response_db, spectral_extract, BandpassSpec, SpectralPoint};
use chiral_pumpprobe::propagator::{run_sequence, thermal_state, Engine};
use chiral_pumpprobe::pulse::{build_pump_probe_sequence, inclusive_range, ScanSpec};
use chiral_pumpprobe::scan::{
    analyze_records, effective_graph, emit_report, point_rng, run_scan, Check, ScanOptions, ScanResult,
};
use chiral_pumpprobe::signal::{read_binary, synthesize, write_binary, write_csv};
use chiral_pumpprobe::{Error, Result};

#[derive(Parser)]
#[command(name = "pumpprobe", version, about = "Pump-probe simulation and analysis of tunneling doublets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and check a config, print the derived frequencies.
    Validate(Common),
    /// Run one pump-probe sequence and write trajectory, FID and extraction.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Pump-probe delay, us.
        #[arg(long, default_value_t = 0.0)]
        t_pp: f64,
        /// Override a pulse phase, `LABEL=RAD` (RAD may be e.g. `pi/2`).
        #[arg(long = "phase", value_name = "LABEL=RAD")]
        phases: Vec<String>,
    },
    /// Scan the pump-probe delay.
    ScanDelay {
        #[command(flatten)]
        common: Common,
        /// `START:STOP:STEP` in us, inclusive.
        #[arg(long)]
        delay_range: Option<String>,
        #[command(flatten)]
        scan: ScanFlags,
    },
    /// Scan the phase of one pump pulse.
    ScanPhase {
        #[command(flatten)]
        common: Common,
        /// Phase step in rad (e.g. `pi/6`); the scan covers [0, 2 pi].
        #[arg(long)]
        phase_step: Option<String>,
        /// Pulse whose phase is scanned.
        #[arg(long)]
        target: Option<String>,
        #[command(flatten)]
        scan: ScanFlags,
    },
    /// Re-analyze FIDs stored by a scan run with `--save-fids`.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Directory holding `point_*.bin` records and their sidecars.
        #[arg(long)]
        fids: PathBuf,
    },
    /// Print the listen bandpass coefficients and magnitude response.
    FilterDesign {
        #[command(flatten)]
        common: Common,
        /// Centre frequency in MHz; defaults to the `listen_plus` transition.
        #[arg(long)]
        center: Option<f64>,
        /// Sample rate in MSa/s; defaults to the baseband rate.
        #[arg(long)]
        rate_msps: Option<f64>,
        /// Frequency-offset points in the response table.
        #[arg(long, default_value_t = 41)]
        points: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); the bundled default when omitted.
    config: Option<PathBuf>,
    /// Propagation engine: `rwa` or `direct`.
    #[arg(long)]
    engine: Option<Engine>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Use the single-parity fixture (counterpart cycle removed).
    #[arg(long)]
    isolated: bool,
    /// Divide rotational frequencies by this factor before propagating.
    #[arg(long)]
    frequency_scale: Option<f64>,
}

#[derive(Args)]
struct ScanFlags {
    /// Also write the filtered baseband waterfall.
    #[arg(long)]
    waterfall: bool,
    /// Store each point's FID (binary + JSON sidecar) under `<out-dir>/fids`.
    #[arg(long)]
    save_fids: bool,
}

/// Parses `1.2`, `pi`, `pi/6`, `2pi/3`, `-pi/2` or `0.5*pi`.
fn parse_angle(text: &str) -> std::result::Result<f64, String> {
    let s = text.trim().replace(' ', "");
    let bad = || format!("cannot read `{text}` as an angle");
    let Some(at) = s.find("pi") else {
        return s.parse().map_err(|_| bad());
    };
    let coef = match s[..at].trim_end_matches('*') {
        "" | "+" => 1.0,
        "-" => -1.0,
        c => c.parse::<f64>().map_err(|_| bad())?,
    };
    let rest = &s[at + 2..];
    let div = match rest.strip_prefix('/') {
        None if rest.is_empty() => 1.0,
        Some(d) => d.parse::<f64>().map_err(|_| bad())?,
        None => return Err(bad()),
    };
    Ok(coef * PI / div)
}

fn parse_range(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let nums: Option<Vec<f64>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
    match nums.as_deref() {
        Some([start, stop, step]) => inclusive_range(*start, *stop, *step),
        _ => Err(Error::Domain(format!("delay range `{text}` is not START:STOP:STEP"))),
    }
}

impl Common {
    fn experiment(&self) -> Result<Experiment> {
        let mut exp = match &self.config {
            Some(path) => load_experiment(path)?,
            None => default_experiment()?,
        };
        if self.isolated {
            exp = exp.isolated()?;
        }
        if let Some(engine) = self.engine {
            exp.propagation.engine = engine;
        }
        if let Some(seed) = self.seed {
            exp.seed = seed;
        }
        if let Some(scale) = self.frequency_scale {
            exp.propagation.frequency_scale = scale;
        }
        if let Some(dir) = &self.out_dir {
            exp.output.dir = dir.clone();
        }
        Ok(exp)
    }
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}

fn finish_scan(exp: &Experiment, result: &ScanResult, save_fids: bool) -> Result<bool> {
    let dir = &exp.output.dir;
    for path in emit_report(result, dir)? {
        info!("wrote {}", path.display());
    }
    if save_fids {
        let fid_dir = dir.join("fids");
        std::fs::create_dir_all(&fid_dir).map_err(|e| Error::Io { path: fid_dir.clone(), source: e })?;
        for (k, p) in result.points.iter().enumerate() {
            if let Some(r) = &p.record {
                write_binary(r, &fid_dir.join(format!("point_{k:03}.bin")))?;
            }
        }
    }
    for (k, p) in result.points.iter().enumerate() {
        for w in &p.warnings {
            warn!("point {k}: {w}");
        }
    }
    if let (Some(nu), Some(sigma)) = (result.nu_fit_mhz, result.nu_uncertainty_mhz) {
        println!("nu_fit = {nu:.6} +- {sigma:.6} MHz (configured {:.6} MHz)", result.configured_nu_mhz);
    }
    print_checks(&result.checks);
    Ok(result.all_checks_pass())
}

fn validate(exp: &Experiment) -> Result<bool> {
    let g = &exp.graph;
    println!("{}: {} levels, {} transitions", exp.name, g.dim(), g.transitions().len());
    for l in g.levels() {
        println!("  level {:<6} {:>14.6} MHz", l.id.to_string(), l.energy);
    }
    for t in g.transitions() {
        println!(
            "  {:<5} {} -> {}  {:>12.6} MHz  {:?}",
            t.label.as_deref().unwrap_or("-"),
            t.lower,
            t.upper,
            g.frequency(t),
            t.polarization
        );
    }
    let (plus, minus) = exp.listen_frequencies()?;
    println!("listen: {plus:.6} / {minus:.6} MHz (spacing {:.6})", minus - plus);
    println!("observable splitting: {:.6} MHz", g.tunneling_splitting(exp.analysis.observable)?);
    let seq = build_pump_probe_sequence(g, &exp.sequence, 0.0)?;
    for p in seq.pulses() {
        println!(
            "  pulse {:<5} {:?} {:>12.6} MHz  {:.3}..{:.3} us  {:.4} rad/us",
            p.label,
            p.block,
            p.carrier,
            p.start,
            p.end(),
            p.rabi_rate
        );
    }
    Ok(true)
}

#[derive(Serialize)]
struct SimulationSummary {
    t_pp_us: f64,
    record_start_us: f64,
    listen_plus: SpectralPoint,
    listen_minus: SpectralPoint,
    warnings: Vec<String>,
    state_check: Option<String>,
}

fn simulate(exp: &Experiment, t_pp: f64, phases: &[String]) -> Result<bool> {
    let graph = effective_graph(exp)?;
    let mut seq = build_pump_probe_sequence(&graph, &exp.sequence, t_pp)?;
    for spec in phases {
        let (label, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Domain(format!("phase override `{spec}` is not LABEL=RAD")))?;
        let phase = parse_angle(value).map_err(Error::Domain)?;
        let mut pulses = seq.pulses().to_vec();
        let p = pulses
            .iter_mut()
            .find(|p| p.label == label)
            .ok_or_else(|| Error::UnknownTransition(label.to_owned()))?;
        *p = p.clone().with_phase(phase);
        seq = chiral_pumpprobe::pulse::PulseSequence::new(pulses, seq.probe_delay, seq.record_start, seq.record_duration)?;
    }
    let s0 = thermal_state(&graph, &exp.thermal)?;
    let traj = run_sequence(&s0, &graph, &seq, &exp.propagation)?;
    let state = traj.final_state();
    let state_check = state.check(1e-8).err().map(|e| e.to_string());

    let dir = &exp.output.dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    let (p, m) = graph.doublet(exp.analysis.observable)?;
    traj.write_csv(&dir.join("trajectory.csv"), &graph, (p, m))?;
    let lo = {
        let (a, b) = (graph.labeled_frequency(&exp.analysis.listen_plus)?, graph.labeled_frequency(&exp.analysis.listen_minus)?);
        exp.record.lo_mhz.map_or(0.5 * (a + b), |lo| lo / exp.propagation.frequency_scale)
    };
    let record = synthesize(state, &graph, &exp.receiver, &exp.record, lo, &mut point_rng(exp.seed, 0))?;
    write_binary(&record, &dir.join("fid.bin"))?;
    if record.len() <= 2_000_000 {
        write_csv(&record, &dir.join("fid.csv"))?;
    }
    let listen = [graph.labeled_frequency(&exp.analysis.listen_plus)?, graph.labeled_frequency(&exp.analysis.listen_minus)?];
    let extraction = spectral_extract(&record, &listen, exp.analysis.window)?;
    let summary = SimulationSummary {
        t_pp_us: t_pp,
        record_start_us: seq.record_start,
        listen_plus: extraction.points[0],
        listen_minus: extraction.points[1],
        warnings: extraction.warnings,
        state_check: state_check.clone(),
    };
    let path = dir.join("simulation.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    for (name, pt) in ["listen_plus", "listen_minus"].iter().zip(&extraction.points) {
        println!("{name}: {:.6} MHz  amplitude {:.6e}  phase {:?}", pt.frequency, pt.amplitude, pt.phase);
    }
    print_checks(&[Check {
        name: "physical_state".into(),
        passed: state_check.is_none(),
        detail: state_check.unwrap_or_else(|| "trace 1, Hermitian, positive".into()),
    }]);
    Ok(summary.state_check.is_none())
}

fn analyze(exp: &Experiment, dir: &Path) -> Result<bool> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    paths.sort();
    let records = paths.iter().map(|p| read_binary(p)).collect::<Result<Vec<_>>>()?;
    let result = analyze_records(exp, records)?;
    finish_scan(exp, &result, false)
}

fn filter_design(exp: &Experiment, center: Option<f64>, rate: Option<f64>, points: usize) -> Result<bool> {
    let center = match center {
        Some(c) => c,
        None => exp.listen_frequencies()?.0,
    };
    let rate = rate.unwrap_or(exp.record.sample_rate_gsps * 1e3 / exp.record.decimation as f64);
    let spec: BandpassSpec = exp.analysis.bandpass(center);
    let lp = bandpass_prototype(&spec, rate)?;
    println!(
        "# Butterworth bandpass order {} at {center} MHz, {} kHz wide, {rate} MSa/s (zero-phase, applied twice)",
        spec.order, spec.bandwidth_khz
    );
    println!("# lowpass prototype order {}, cutoff {} MHz", lp.order, lp.cutoff_mhz);
    println!("section,b0,b1,b2,a0,a1,a2");
    for (k, s) in lp.sections.iter().enumerate() {
        println!("{k},{:e},{:e},{:e},{:e},{:e},{:e}", s.b[0], s.b[1], s.b[2], s.a[0], s.a[1], s.a[2]);
    }
    println!("offset_khz,gain_db");
    let span = 5.0 * spec.bandwidth_khz;
    let n = points.max(2);
    for i in 0..n {
        let off = -span + 2.0 * span * i as f64 / (n - 1) as f64;
        println!("{off},{:.4}", bandpass_response_db(&spec, rate, center + off * 1e-3)?);
    }
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Validate(common) => validate(&common.experiment()?),
        Command::Simulate { common, t_pp, phases } => simulate(&common.experiment()?, t_pp, &phases),
        Command::ScanDelay { common, delay_range, scan } => {
            let exp = common.experiment()?;
            let spec = match delay_range {
                Some(r) => ScanSpec::delay(parse_range(&r)?)?,
                None => exp.delay_scan.clone().ok_or_else(|| Error::Domain("config has no delay scan".into()))?,
            };
            let options = ScanOptions { workers: common.workers, keep_records: scan.save_fids, waterfall: scan.waterfall || exp.output.waterfall };
            let result = run_scan(&exp, &spec, &options)?;
            finish_scan(&exp, &result, scan.save_fids)
        }
        Command::ScanPhase { common, phase_step, target, scan } => {
            let exp = common.experiment()?;
            let configured = exp.phase_scan.clone();
            let target = match (target, &configured) {
                (Some(t), _) => t,
                (None, Some(ScanSpec { kind: chiral_pumpprobe::pulse::ScanKind::PulsePhase { target }, .. })) => target.clone(),
                _ => return Err(Error::Domain("no phase-scan target; pass --target".into())),
            };
            let values = match phase_step {
                Some(step) => inclusive_range(0.0, 2.0 * PI, parse_angle(&step).map_err(Error::Domain)?)?,
                None => configured.map(|s| s.values).ok_or_else(|| Error::Domain("config has no phase scan".into()))?,
            };
            let spec = ScanSpec::pulse_phase(&target, values)?;
            let options = ScanOptions { workers: common.workers, keep_records: scan.save_fids, waterfall: scan.waterfall || exp.output.waterfall };
            let result = run_scan(&exp, &spec, &options)?;
            finish_scan(&exp, &result, scan.save_fids)
        }
        Command::Analyze { common, fids } => analyze(&common.experiment()?, &fids),
        Command::FilterDesign { common, center, rate_msps, points } => {
            filter_design(&common.experiment()?, center, rate_msps, points)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles() {
        assert_eq!(parse_angle("pi/6").unwrap(), PI / 6.0);
        assert_eq!(parse_angle("-pi/2").unwrap(), -PI / 2.0);
        assert_eq!(parse_angle("2pi/3").unwrap(), 2.0 * PI / 3.0);
        assert_eq!(parse_angle("0.5*pi").unwrap(), 0.5 * PI);
        assert_eq!(parse_angle("0.25").unwrap(), 0.25);
        assert!(parse_angle("pie").is_err());
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("0:1.3:0.1").unwrap().len(), 14);
        assert!(parse_range("0:1").is_err());
    }
}
