use chiral_pumpprobe::config::{default_experiment, Experiment};
use chiral_pumpprobe::pulse::ScanSpec;
use chiral_pumpprobe::scan::{run_delay_scan, run_scan, ScanOptions};
use chiral_pumpprobe::signal::SynthesisMode;

fn isolated() -> Experiment {
    default_experiment().unwrap().isolated().unwrap()
}

fn wrap(x: f64) -> f64 {
    (x + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI
}

#[test]
fn baseband_and_full_records_give_the_same_phases() {
    let mut exp = isolated();
    let spec = ScanSpec::delay(vec![0.0, 0.35, 0.9]).unwrap();
    let full = run_scan(&exp, &spec, &ScanOptions::default()).unwrap();
    exp.record.mode = SynthesisMode::Baseband;
    let base = run_scan(&exp, &spec, &ScanOptions::default()).unwrap();
    for (a, b) in full.points.iter().zip(&base.points) {
        for (x, y) in [(a.plus.unwrap(), b.plus.unwrap()), (a.minus.unwrap(), b.minus.unwrap())] {
            assert!(wrap(x.phase.unwrap() - y.phase.unwrap()).abs() < 1e-3);
            assert!((x.amplitude / y.amplitude - 1.0).abs() < 1e-3);
        }
    }
}

#[test]
fn noisy_scans_still_recover_the_splitting() {
    let mut exp = isolated();
    exp.record.mode = SynthesisMode::Baseband;
    exp.receiver.noise_rms = 0.02;
    for seed in [1, 2, 3] {
        exp.seed = seed;
        let r = run_delay_scan(&exp, &ScanOptions::default()).unwrap();
        let nu = r.nu_fit_mhz.unwrap();
        assert!((nu - 0.82).abs() < 5e-3, "seed {seed}: {nu}");
        assert!(r.nu_uncertainty_mhz.unwrap() > 0.0);
    }
}

#[test]
fn frequency_scale_keeps_the_delay_slope() {
    let mut exp = isolated();
    exp.propagation.frequency_scale = 50.0;
    exp.record.mode = SynthesisMode::Baseband;
    let r = run_delay_scan(&exp, &ScanOptions::default()).unwrap();
    assert!((r.nu_fit_mhz.unwrap() - 0.82).abs() < 1e-3);
    assert!((r.listen_minus_mhz - r.listen_plus_mhz - 1.63).abs() < 0.1);
}

#[test]
fn counterpart_changes_amplitude_not_slope() {
    let options = ScanOptions::default();
    let mut full = default_experiment().unwrap();
    full.record.mode = SynthesisMode::Baseband;
    let mut iso = full.isolated().unwrap();
    iso.record.mode = SynthesisMode::Baseband;
    let a = run_delay_scan(&full, &options).unwrap();
    let b = run_delay_scan(&iso, &options).unwrap();
    let ratio = a.points[0].plus.unwrap().amplitude / b.points[0].plus.unwrap().amplitude;
    assert!(ratio < 0.9, "{ratio}");
    assert!((a.fit_plus.unwrap().slope - b.fit_plus.unwrap().slope).abs() < 1e-6);
}
