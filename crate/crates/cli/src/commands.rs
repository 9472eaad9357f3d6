//! Command pipelines. Each returns its artifacts in memory; writing and verification live in
//! `run`, so `--verify` can recompute without touching the output directory.

use std::path::{Path, PathBuf};

use thiserror::Error;

use penning_core::cooling::{
    axialization_frequency, simulate_cooling, AxializationParams, CoolingError, CoolingOptions, InitialQuanta, Integrator,
    LaserParams,
};
use penning_core::equilibrium::{solve_equilibrium, EquilibriumError, SolverOptions};
use penning_core::gates::{
    pair_modes, pair_shifted_modes, scan_gate, tune_pair_ratio, GateDrive, GateError, PairModes, ScanGrid,
};
use penning_core::model::ArrayConfig;
use penning_core::modes::{
    assemble_matrices, invariance_product, invariance_sum, solve_modes, ModeOptions, ModeSet, ModesError, SystemMatrices,
};
use penning_core::spinspin::{
    com_band_edge_check, coupling_histogram, coupling_matrix, fit_power_law, ForcePhases, OdfParams, SpinSpinError,
};

use crate::config::{self, Anchor, ConfigError, LoadedConfig, PairTuning};
use crate::output::{self, fmt_f, Artifact, Csv, OutputEntry, RunManifest};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Largest accepted invariance residual before `modes` reports failure.
pub const INVARIANCE_LIMIT: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error("{0}")]
    Unstable(String),
    #[error("{0}")]
    Integration(String),
    #[error("{0}")]
    Resonance(String),
    #[error("verification failed:\n  {}", .0.join("\n  "))]
    Verify(Vec<String>),
    #[error("{0}")]
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::NonConvergence(_) => 3,
            Failure::Unstable(_) => 4,
            Failure::Integration(_) => 5,
            Failure::Resonance(_) => 6,
            Failure::Verify(_) => 7,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Io(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<EquilibriumError> for Failure {
    fn from(e: EquilibriumError) -> Self {
        match e {
            EquilibriumError::NonConvergence { .. } => Failure::NonConvergence(e.to_string()),
            other => Failure::Unstable(other.to_string()),
        }
    }
}

impl From<ModesError> for Failure {
    fn from(e: ModesError) -> Self {
        match e {
            ModesError::Equilibrium(inner) => inner.into(),
            other => Failure::Unstable(other.to_string()),
        }
    }
}

impl From<CoolingError> for Failure {
    fn from(e: CoolingError) -> Self {
        match e {
            CoolingError::InvalidParameter { .. } => Failure::Config(e.to_string()),
            CoolingError::Modes(inner) => inner.into(),
            other => Failure::Integration(other.to_string()),
        }
    }
}

impl From<SpinSpinError> for Failure {
    fn from(e: SpinSpinError) -> Self {
        match e {
            SpinSpinError::ResonantDrive { .. } => Failure::Resonance(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<GateError> for Failure {
    fn from(e: GateError) -> Self {
        match e {
            GateError::ResonantDrive { .. } => Failure::Resonance(e.to_string()),
            GateError::InvalidParameter { .. } => Failure::Config(e.to_string()),
            GateError::TuningFailed { .. } => Failure::NonConvergence(e.to_string()),
            GateError::MissingLocalModes(_) => Failure::Unstable(e.to_string()),
            GateError::Modes(inner) => inner.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Modes,
    Cool,
    SpinSpin,
    Gate,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Modes => "modes",
            Command::Cool => "cool",
            Command::SpinSpin => "spinspin",
            Command::Gate => "gate",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub verify: bool,
}

/// Outcome of a pipeline: artifacts to write, free-form notes, and a failure detected after
/// the outputs were complete (written anyway so the run can be inspected).
#[derive(Debug, Default)]
pub struct Produced {
    pub artifacts: Vec<Artifact>,
    pub notes: Vec<String>,
    pub seed: Option<u64>,
    pub late_failure: Option<Failure>,
}

struct Solved {
    array: ArrayConfig,
    positions: Vec<nalgebra::Vector3<f64>>,
    mats: SystemMatrices,
    set: ModeSet,
}

fn solve(array: ArrayConfig) -> Result<Solved, Failure> {
    let eq = solve_equilibrium(&array, None, &SolverOptions::default())?;
    let mats = assemble_matrices(&array, &eq.positions)?;
    let set = solve_modes(&mats, &ModeOptions::default())?;
    Ok(Solved { array, positions: eq.positions, mats, set })
}

pub fn modes(cfg: &LoadedConfig) -> Result<Produced, Failure> {
    let s = solve(cfg.physical()?.array)?;
    let mut eq = Csv::new(&["site_index", "x_m", "y_m", "z_m"]);
    for (i, p) in s.positions.iter().enumerate() {
        eq.numbers(&[i.to_string()], &[p.x, p.y, p.z]);
    }
    let mut modes = Csv::new(&["mode_index", "kind", "freq_Hz", "energy_sign", "axial_weight", "qep_residual"]);
    let mut spectrum = Csv::new(&["index", "freq_Hz"]);
    for (i, m) in s.set.modes.iter().enumerate() {
        modes.row(&[
            i.to_string(),
            m.kind.label().to_string(),
            fmt_f(m.omega / TWO_PI),
            m.energy_sign.to_string(),
            fmt_f(m.axial_weight),
            fmt_f(m.residual),
        ]);
        spectrum.numbers(&[i.to_string()], &[m.omega / TWO_PI]);
    }
    let sum = invariance_sum(&s.set, &s.mats);
    let product = invariance_product(&s.set, &s.mats);
    let mut inv = Csv::new(&["theorem", "lhs", "rhs", "residual"]);
    inv.numbers(&["sum_omega_squared".into()], &[sum.lhs, sum.rhs, sum.residual]);
    inv.numbers(&["log_product".into()], &[product.lhs, product.rhs, product.residual]);

    let mut produced = Produced {
        artifacts: vec![
            Artifact::csv("equilibrium.csv", eq),
            Artifact::csv("modes.csv", modes),
            Artifact::csv("spectrum.csv", spectrum),
            Artifact::csv("invariance.csv", inv),
        ],
        ..Default::default()
    };
    produced.notes.push(format!("{} modes, invariance residuals {:e} (sum) {:e} (product)", s.set.modes.len(), sum.residual, product.residual));
    if let Some(w) = &s.set.classification_warning {
        produced.notes.push(format!("classification: {w}"));
    }
    let worst = sum.residual.max(product.residual);
    if !(worst <= INVARIANCE_LIMIT) {
        produced.late_failure = Some(Failure::Unstable(format!("invariance residual {worst:e} exceeds {INVARIANCE_LIMIT:e}")));
    }
    Ok(produced)
}

pub fn cool(cfg: &LoadedConfig, seed: u64) -> Result<Produced, Failure> {
    let block = cfg.run.cooling.as_ref().ok_or(ConfigError::MissingBlock("cooling"))?;
    let phys = cfg.physical()?;
    let inputs = block.resolve(&phys.array)?;
    let s = solve(phys.array)?;
    let laser = LaserParams::along(&s.array.species, inputs.beam, inputs.detuning, inputs.saturation)?;
    let axial = if inputs.axialization > 0.0 {
        let f = match inputs.axialization_frequency {
            Some(f) => f,
            None => axialization_frequency(&s.array, 0)?,
        };
        AxializationParams { fraction: inputs.axialization, drive_frequency: f }
    } else {
        AxializationParams::off()
    };
    let opts = CoolingOptions {
        t_end: inputs.t_end,
        n_traj: inputs.n_traj,
        seed,
        dt: inputs.dt,
        sample_interval: inputs.sample_interval,
        integrator: if inputs.rk4 { Integrator::Rk4 } else { Integrator::SplitExact },
        initial: InitialQuanta::Uniform { mean: inputs.initial_quanta, spread: inputs.initial_spread },
    };
    let rec = simulate_cooling(&s.array, &s.positions, &s.mats, &s.set, &laser, &axial, &opts)?;

    let n_modes = rec.occupation.len();
    let mut header = vec!["time_s".to_string()];
    header.extend((0..n_modes).map(|m| format!("n_mode_{m}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut series = Csv::new(&header);
    for (i, &t) in rec.times.iter().enumerate() {
        let mut cells = vec![fmt_f(t)];
        cells.extend((0..n_modes).map(|m| fmt_f(rec.occupation[m][i])));
        series.row(&cells);
    }
    let mut summary = Csv::new(&["mode_index", "kind", "tau_s", "n_final", "n_initial", "n_inf", "cooled"]);
    for m in &rec.summary {
        summary.row(&[
            m.mode_index.to_string(),
            m.kind.label().to_string(),
            fmt_f(m.fit.tau),
            fmt_f(m.n_final),
            fmt_f(m.n_initial),
            fmt_f(m.fit.n_inf),
            u8::from(m.cooled()).to_string(),
        ]);
    }
    let mut notes = vec![format!(
        "trajectories {}, dt {:e} s, detuning {:e} Hz, saturation {}, axialization {}",
        rec.n_traj,
        rec.dt,
        laser.detuning / TWO_PI,
        laser.saturation,
        axial.fraction
    )];
    if !rec.cooling_detected() {
        notes.push("no cooling detected".to_string());
    }
    Ok(Produced {
        artifacts: vec![Artifact::csv("cooling_timeseries.csv", series), Artifact::csv("cooling_summary.csv", summary)],
        notes,
        seed: Some(seed),
        late_failure: None,
    })
}

pub fn spinspin(cfg: &LoadedConfig) -> Result<Produced, Failure> {
    let block = cfg.run.spinspin.as_ref().ok_or(ConfigError::MissingBlock("spinspin"))?;
    let inputs = block.resolve()?;
    let s = solve(cfg.physical()?.array)?;
    let members: Vec<f64> = s.set.of_kind(inputs.branch).map(|(_, m)| m.omega).collect();
    if members.is_empty() {
        return Err(Failure::Unstable(format!("no {} modes found", inputs.branch.label())));
    }
    let edge = com_band_edge_check(&s.set, inputs.branch);
    let anchor = match inputs.anchor {
        Anchor::Top => members.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Anchor::Bottom => members.iter().copied().fold(f64::INFINITY, f64::min),
        Anchor::Com => {
            let e = edge.as_ref().expect("branch is non-empty");
            s.set.modes[e.com_index].omega
        }
    };
    let mut notes = Vec::new();
    if let Some(e) = &edge {
        notes.push(format!(
            "{} COM mode {} at {:e} Hz, band position {:?}, edge {}",
            inputs.branch.label(),
            e.com_index,
            s.set.modes[e.com_index].omega / TWO_PI,
            e.position,
            e.is_edge()
        ));
    }
    let mut rangefit = Csv::new(&["detuning_Hz", "a", "residual", "fit_min_m", "fit_max_m"]);
    let mut first = None;
    for &delta in &inputs.detunings {
        let mut odf = OdfParams::new(inputs.e_o, anchor + delta, inputs.k_r);
        if inputs.from_positions {
            odf.phases = ForcePhases::FromPositions(s.positions.clone());
        }
        if let Some(g) = inputs.resonance_guard {
            odf.resonance_guard = g;
        }
        let j = coupling_matrix(&s.set, &odf)?;
        // Too few separations for a range fit is not an error for small arrays: report NaN.
        let (a, residual, lo, hi) = match fit_power_law(&j, &s.positions, inputs.fit_range) {
            Ok(f) => (f.exponent, f.residual, f.fit_range.0, f.fit_range.1),
            Err(SpinSpinError::InsufficientPairs(_)) => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
            Err(e) => return Err(e.into()),
        };
        rangefit.numbers(&[fmt_f(delta / TWO_PI)], &[a, residual, lo, hi]);
        let negative = j.pairs().iter().filter(|p| p.2 < 0.0).count();
        notes.push(format!("detuning {:e} Hz: a = {a}, {negative} of {} couplings negative", delta / TWO_PI, j.pairs().len()));
        if first.is_none() {
            first = Some(j);
        }
    }
    let j = first.expect("at least one detuning");
    let mut jcsv = Csv::new(&["j", "j_prime", "R_m", "J_rad_per_s"]);
    for (a, b, v) in j.pairs() {
        let r = (s.positions[a] - s.positions[b]).norm();
        jcsv.numbers(&[a.to_string(), b.to_string()], &[r, v]);
    }
    let mut hist = Csv::new(&["bin_left", "bin_right", "count"]);
    for bin in coupling_histogram(&j, inputs.histogram_bins) {
        hist.row(&[fmt_f(bin.left), fmt_f(bin.right), bin.count.to_string()]);
    }
    Ok(Produced {
        artifacts: vec![
            Artifact::csv("J.csv", jcsv),
            Artifact::csv("rangefit.csv", rangefit),
            Artifact::csv("histogram.csv", hist),
        ],
        notes,
        seed: None,
        late_failure: None,
    })
}

pub fn gate(cfg: &LoadedConfig) -> Result<Produced, Failure> {
    let block = cfg.run.gate.as_ref().ok_or(ConfigError::MissingBlock("gate"))?;
    let phys = cfg.physical()?;
    let inputs = block.resolve(phys.array.n_ions())?;
    let reference = 0.5 * phys.array.omega_c();
    let (shift, set) = match inputs.tuning {
        PairTuning::None => (0.0, solve(phys.array.clone())?.set),
        PairTuning::Shift(d) => (d, pair_shifted_modes(&phys.array, inputs.pair, phys.omega_z, d)?),
        PairTuning::Ratio { target, bracket } => {
            let (d, _) = tune_pair_ratio(&phys.array, inputs.pair, phys.omega_z, target, bracket, TWO_PI * 1.0)?;
            (d, pair_shifted_modes(&phys.array, inputs.pair, phys.omega_z, d)?)
        }
    };
    let mu = inputs.mu.unwrap_or(reference);
    let mut drive = GateDrive::new(inputs.pair, inputs.e_o, mu, inputs.k_r, inputs.duration.unwrap_or(0.0));
    drive.phases = inputs.phases;
    if let Some(g) = inputs.resonance_guard {
        drive.resonance_guard = g;
    }
    let grid = if inputs.time_scan { ScanGrid::Time(inputs.grid.clone()) } else { ScanGrid::Beatnote(inputs.grid.clone()) };
    let scan = scan_gate(&set, &drive, &grid, reference)?;

    let x_name = if inputs.time_scan { "t_s" } else { "mu_Hz" };
    let x_scale = if inputs.time_scan { 1.0 } else { 1.0 / TWO_PI };
    let mut table = Csv::new(&[x_name, "fidelity", "max_residual_chi", "phase_00_11_rad", "entangling_phase_rad"]);
    for r in &scan.rows {
        table.numbers(&[], &[r.x * x_scale, r.fidelity, r.max_residual_chi, r.phase_00_11, r.entangling_phase]);
    }
    let pm: Option<PairModes> = scan.pair_modes.or_else(|| pair_modes(&set, inputs.pair, reference).ok());
    let nan = f64::NAN;
    let (ds, dsm, dc, dcm, ratio, zs, zc) = match &pm {
        Some(p) => (
            p.stretch_plus.detuning / TWO_PI,
            p.stretch_minus.detuning / TWO_PI,
            p.com_plus.detuning / TWO_PI,
            p.com_minus.detuning / TWO_PI,
            p.ratio(),
            p.stretch_plus.zero_point,
            p.com_plus.zero_point,
        ),
        None => (nan, nan, nan, nan, nan, nan, nan),
    };
    let best = scan.best().expect("grid is non-empty");
    let mut summary = Csv::new(&[
        "pair_shift_Hz",
        "delta_s_plus_Hz",
        "delta_s_minus_Hz",
        "delta_c_plus_Hz",
        "delta_c_minus_Hz",
        "ratio_c_s",
        "zero_point_stretch_m",
        "zero_point_com_m",
        &format!("best_{x_name}"),
        "best_fidelity",
        "best_entangling_phase_rad",
    ]);
    summary.numbers(&[], &[shift / TWO_PI, ds, dsm, dc, dcm, ratio, zs, zc, best.x * x_scale, best.fidelity, best.entangling_phase]);
    let notes = vec![format!("best fidelity {} at {} = {:e}", best.fidelity, x_name, best.x * x_scale)];
    Ok(Produced {
        artifacts: vec![Artifact::csv("gate_scan.csv", table), Artifact::csv("gate_summary.csv", summary)],
        notes,
        seed: None,
        late_failure: None,
    })
}

fn output_dir(opts: &RunOptions, cfg: &LoadedConfig) -> PathBuf {
    if let Some(o) = &opts.out {
        return o.clone();
    }
    match &cfg.run.output {
        Some(o) => {
            let p = Path::new(o);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                opts.config.parent().unwrap_or(Path::new(".")).join(p)
            }
        }
        None => PathBuf::from("out"),
    }
}

/// Load, validate, run, then write or verify. Returns the notes to print.
pub fn run(command: Command, opts: &RunOptions) -> Result<Vec<String>, Failure> {
    let cfg = config::load(&opts.config)?;
    if command == Command::Validate {
        return Ok(vec![format!("{} is valid", opts.config.display())]);
    }
    let config_sha = output::sha256_hex(cfg.raw.as_bytes());
    let seed = opts.seed.or(cfg.run.seed).unwrap_or(1);
    let started = output::unix_now();
    let produced = match command {
        Command::Modes => modes(&cfg)?,
        Command::Cool => cool(&cfg, seed)?,
        Command::SpinSpin => spinspin(&cfg)?,
        Command::Gate => gate(&cfg)?,
        Command::Validate => unreachable!(),
    };
    let dir = output_dir(opts, &cfg);
    let mut notes = produced.notes;
    if opts.verify {
        let stored = output::read_manifest(&dir).map_err(|e| Failure::Verify(vec![format!("cannot read manifest in {}: {e}", dir.display())]))?;
        let diffs = output::compare(&stored, &config_sha, &produced.artifacts);
        if !diffs.is_empty() {
            return Err(Failure::Verify(diffs));
        }
        notes.push(format!("verified {} outputs against {}", produced.artifacts.len(), dir.join(output::MANIFEST).display()));
    } else {
        let manifest = RunManifest {
            command: command.name().to_string(),
            config_sha256: config_sha,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: produced.seed,
            started_unix_s: started,
            finished_unix_s: output::unix_now(),
            notes: notes.clone(),
            outputs: produced
                .artifacts
                .iter()
                .map(|a| OutputEntry { file: a.name.clone(), sha256: output::sha256_hex(&a.bytes) })
                .collect(),
        };
        output::write_all(&dir, &produced.artifacts, &manifest).map_err(|e| Failure::Io(format!("writing {}: {e}", dir.display())))?;
        notes.push(format!("wrote {} outputs to {}", produced.artifacts.len(), dir.display()));
    }
    match produced.late_failure {
        Some(f) => Err(f),
        None => Ok(notes),
    }
}
