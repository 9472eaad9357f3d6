use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_penning");
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const HBAR: f64 = 1.054_571_817e-34;
const BE_MASS: f64 = 9.012 * 1.660_539_066_60e-27;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect::<Vec<_>>();
    let rows = lines.map(|l| l.split(',').map(String::from).collect::<Vec<_>>()).collect::<Vec<_>>();
    for r in &rows {
        assert_eq!(r.len(), header.len());
    }
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let (h, rows) = read_csv(path);
    let i = h.iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.into_iter().map(|r| r[i].clone()).collect()
}

fn numbers(path: &Path, name: &str) -> Vec<f64> {
    column(path, name).iter().map(|s| s.parse().unwrap()).collect()
}

const SMALL: &str = r#"
[lattice]
kind = "square"
d = "30 um"
n_sites = 4
theta = "90 deg"

[field]
b0 = "2.2 T"

[trap]
omega_z = "2.55 MHz"
"#;

const COOL: &str = r#"
[lattice]
kind = "honeycomb"
d = "15 um"
n_sites = 2
theta = "20 deg"

[field]
b0 = "2.5 T"

[trap]
omega_z = "2.1 MHz"

[cooling]
t_end = "20 us"
n_traj = 1
sample_interval = "1 us"
detuning = "-2 gamma"
saturation = 8.0
beam = [1.0, 0.0, 0.0]
axialization = 0.03
"#;

#[test]
fn shipped_configs_validate() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        let o = Command::new(BIN).arg("validate").arg("--config").arg(&p).output().unwrap();
        assert_eq!(code(&o), 0, "{}: {}", p.display(), String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn single_site_modes() {
    let out = TempDir::new().unwrap();
    let o = run(&["modes"], &configs().join("single_site.toml"), out.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let kinds = column(&out.path().join("modes.csv"), "kind");
    assert_eq!(kinds, ["axial", "cyclotron", "magnetron"]);
    for r in numbers(&out.path().join("invariance.csv"), "residual") {
        assert!(r < 1e-10);
    }
    let freq = numbers(&out.path().join("modes.csv"), "freq_Hz");
    assert!((freq[1] / 2.39e6 - 1.0).abs() < 5e-3 && (freq[2] / 1.36e6 - 1.0).abs() < 5e-3);
    let manifest = std::fs::read_to_string(out.path().join("manifest.toml")).unwrap();
    for f in ["equilibrium.csv", "modes.csv", "spectrum.csv", "invariance.csv"] {
        assert!(manifest.contains(&format!("file = \"{f}\"")));
    }
}

#[test]
fn honeycomb62_is_stable() {
    let out = TempDir::new().unwrap();
    let o = run(&["modes"], &configs().join("honeycomb62.toml"), out.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(column(&out.path().join("modes.csv"), "kind").len(), 186);
}

#[test]
fn corrupted_key_fails_before_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.toml", &SMALL.replace("n_sites", "n_site"));
    let out = dir.path().join("out");
    let o = run(&["modes"], &cfg, &out);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn bare_number_for_dimensional_value_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.toml", &SMALL.replace("\"2.2 T\"", "\"2.2\""));
    let out = dir.path().join("out");
    assert_eq!(code(&run(&["modes"], &cfg, &out)), 2);
    assert!(!out.exists());
}

#[test]
fn missing_command_block_is_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.toml", SMALL);
    assert_eq!(code(&run(&["gate"], &cfg, &dir.path().join("out"))), 2);
}

#[test]
fn cooling_is_reproducible_and_verifiable() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "cool.toml", COOL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&run(&["cool", "--seed", "7"], &cfg, &a)), 0);
    assert_eq!(code(&run(&["cool", "--seed", "7", "--threads", "1"], &cfg, &b)), 0);
    for f in ["cooling_timeseries.csv", "cooling_summary.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest = std::fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 7"));

    let v = run(&["cool", "--seed", "7", "--verify"], &cfg, &a);
    assert_eq!(code(&v), 0, "{}", String::from_utf8_lossy(&v.stderr));
    let v = run(&["cool", "--seed", "8", "--verify"], &cfg, &a);
    assert_eq!(code(&v), 7);
    // Verification leaves the stored outputs alone.
    assert_eq!(std::fs::read(a.join("cooling_summary.csv")).unwrap(), std::fs::read(b.join("cooling_summary.csv")).unwrap());
}

#[test]
fn laser_off_flags_no_cooling() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "off.toml", &COOL.replace("saturation = 8.0", "saturation = 0.0"));
    let o = run(&["cool"], &cfg, &dir.path().join("out"));
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("no cooling detected"));
    let manifest = std::fs::read_to_string(dir.path().join("out/manifest.toml")).unwrap();
    assert!(manifest.contains("no cooling detected"));
}

#[test]
fn two_ion_couplings_match_closed_form() {
    let cfg = configs().join("spinspin_two_ion.toml");
    let out = TempDir::new().unwrap();
    assert_eq!(code(&run(&["modes"], &cfg, &out.path().join("m"))), 0);
    assert_eq!(code(&run(&["spinspin"], &cfg, &out.path().join("s"))), 0);
    let modes = out.path().join("m/modes.csv");
    let kinds = column(&modes, "kind");
    let freq = numbers(&modes, "freq_Hz");
    let axial: Vec<f64> = kinds.iter().zip(&freq).filter(|(k, _)| *k == "axial").map(|(_, f)| TWO_PI * f).collect();
    let (w_com, w_str) = (axial[0].max(axial[1]), axial[0].min(axial[1]));
    let mu = w_com + TWO_PI * 20e3;
    let e = HBAR * TWO_PI * 300e3;
    let k = 1.7515e6;
    let closed = e * e * k * k / (8.0 * BE_MASS * HBAR) * (1.0 / (mu * mu - w_com * w_com) - 1.0 / (mu * mu - w_str * w_str));
    let j = numbers(&out.path().join("s/J.csv"), "J_rad_per_s");
    assert_eq!(j.len(), 1);
    assert!((j[0] / closed - 1.0).abs() < 1e-6, "{} vs {}", j[0], closed);
    assert!(j[0] > 0.0);
}

#[test]
fn resonance_guard_exit() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(configs().join("spinspin_two_ion.toml"))
        .unwrap()
        .replace("detunings = [\"20 kHz\"]", "detunings = [\"1 Hz\"]");
    let cfg = write_config(&dir, "res.toml", &text);
    let o = run(&["spinspin"], &cfg, &dir.path().join("out"));
    assert_eq!(code(&o), 6);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains('['), "offending modes listed: {err}");
}

fn gate_config(extra: &str) -> String {
    format!(
        r#"{SMALL}
[gate]
{extra}
[gate.wave]
wavelength = "313 nm"
crossing_angle = "5 deg"
direction = [0.0, 1.0, 0.0]

[gate.scan]
variable = "time"
start = "0 us"
stop = "20 us"
points = 21
"#
    )
}

#[test]
fn zero_force_gate_has_constant_fidelity() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "g.toml", &gate_config("pair = [0, 1]\ne_o = \"0 kHz\"\n"));
    let o = run(&["gate"], &cfg, &dir.path().join("out"));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let f = numbers(&dir.path().join("out/gate_scan.csv"), "fidelity");
    assert_eq!(f.len(), 21);
    for x in &f {
        assert!((x - 0.5).abs() < 1e-12, "{x}");
    }
    assert!(dir.path().join("out/gate_summary.csv").exists());
}

#[test]
fn gate_pair_must_exist() {
    let dir = TempDir::new().unwrap();
    for pair in ["pair = [0, 9]", "pair = [0]", "pair = [1, 1]"] {
        let cfg = write_config(&dir, "g.toml", &gate_config(&format!("{pair}\ne_o = \"300 kHz\"\n")));
        let out = dir.path().join("out");
        assert_eq!(code(&run(&["gate"], &cfg, &out)), 2, "{pair}");
        assert!(!out.exists());
    }
}

#[test]
fn rerun_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "g.toml", &gate_config("pair = [0, 1]\ne_o = \"300 kHz\"\n"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&run(&["gate"], &cfg, &a)), 0);
    assert_eq!(code(&run(&["gate"], &cfg, &b)), 0);
    for f in ["gate_scan.csv", "gate_summary.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    assert_eq!(code(&run(&["gate", "--verify"], &cfg, &a)), 0);
}
