//! Normal modes of magnetized coupled oscillators: matrix assembly, the quadratic eigenvalue
//! problem, classification, quantization and invariance checks.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use thiserror::Error;

use crate::equilibrium::{potential_hessian, EquilibriumError};
use crate::linalg::{eigen_real, log_abs_det};
use crate::model::constants::HBAR;
use crate::model::ArrayConfig;

type C64 = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModesError {
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error("unstable system: {} eigenvalues with |Im ω| above tolerance, worst {worst}", .eigenvalues.len())]
    UnstableSystem { eigenvalues: Vec<C64>, worst: C64 },
    #[error("no ± partner for eigenvalue {0}")]
    PairingFailure(C64),
    #[error("dense eigensolver failed")]
    EigenFailure,
    #[error("mode {0} sits at the stability boundary (vanishing normalization)")]
    DegenerateNormalization(usize),
    #[error("mode basis cannot represent the state (reconstruction error {0:.3e})")]
    SingularBasis(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// M (diagonal, stored as a vector), W and Φ for N ions in order [x₁..x_N, y₁..y_N, z₁..z_N].
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub n_ions: usize,
    /// Diagonal of M, kg.
    pub masses: DVector<f64>,
    /// Ion charge, C.
    pub charge: f64,
    pub b_field: Vector3<f64>,
    /// kg/s
    pub w: DMatrix<f64>,
    /// kg/s²
    pub phi: DMatrix<f64>,
}

impl SystemMatrices {
    /// Build from per-ion masses, a shared charge, the field and a stiffness matrix.
    pub fn from_parts(
        ion_masses: &[f64],
        charge: f64,
        b_field: Vector3<f64>,
        phi: DMatrix<f64>,
    ) -> Result<Self, ModesError> {
        let n = ion_masses.len();
        if phi.nrows() != 3 * n || phi.ncols() != 3 * n {
            return Err(ModesError::DimensionMismatch { expected: 3 * n, got: phi.nrows() });
        }
        let masses = DVector::from_fn(3 * n, |i, _| ion_masses[i % n]);
        Ok(Self {
            n_ions: n,
            masses,
            charge,
            b_field,
            w: magnetic_matrix(n, charge, b_field),
            phi,
        })
    }

    pub fn dim(&self) -> usize {
        3 * self.n_ions
    }

    pub fn mass_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.masses)
    }

    /// Φ/e, V/m².
    pub fn phi_over_charge(&self) -> DMatrix<f64> {
        &self.phi / self.charge
    }

    fn m_apply(&self, v: &DVector<C64>) -> DVector<C64> {
        DVector::from_fn(v.len(), |i, _| v[i] * self.masses[i])
    }

    fn w_c(&self) -> DMatrix<C64> {
        self.w.map(|x| C64::new(x, 0.0))
    }

    fn phi_c(&self) -> DMatrix<C64> {
        self.phi.map(|x| C64::new(x, 0.0))
    }
}

/// W with W q̇ = e q̇ × B per ion: W_xy = eB_z, W_xz = −eB_y, W_yz = eB_x.
pub fn magnetic_matrix(n: usize, charge: f64, b: Vector3<f64>) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(3 * n, 3 * n);
    let entries = [(0, 1, b.z), (0, 2, -b.y), (1, 2, b.x)];
    for j in 0..n {
        for &(mu, nu, bc) in &entries {
            w[(mu * n + j, nu * n + j)] = charge * bc;
            w[(nu * n + j, mu * n + j)] = -charge * bc;
        }
    }
    w
}

pub fn assemble_matrices(config: &ArrayConfig, eq: &[Vector3<f64>]) -> Result<SystemMatrices, ModesError> {
    let phi = potential_hessian(config, eq)?;
    let masses = vec![config.species.mass; config.n_ions()];
    SystemMatrices::from_parts(&masses, config.species.charge, config.b_field, phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModeKind {
    Axial,
    Cyclotron,
    Magnetron,
}

impl ModeKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Axial => "axial",
            Self::Cyclotron => "cyclotron",
            Self::Magnetron => "magnetron",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    /// Positive mode frequency ν, rad/s.
    pub omega: f64,
    /// Frequency entering the creation operator: +ν, or −ν for negative-energy modes.
    pub signed_omega: f64,
    /// Unit eigenvector γ of the QEP at +ν.
    pub eigvec: DVector<C64>,
    /// sign(ν²γᴴMγ + γᴴΦγ)
    pub energy_sign: i8,
    pub kind: ModeKind,
    /// Σ_j |b̂·γ_j|², the share of motion along the field.
    pub axial_weight: f64,
    /// Quantum normalization c_λ.
    pub c_norm: f64,
    /// α = cγ (or cγ* for negative-energy modes).
    pub alpha: DVector<C64>,
    /// β = iωMα + ½Wα with the signed frequency.
    pub beta: DVector<C64>,
    /// Zero-point spread of the mode ρ₀ = ħc, m.
    pub spread: f64,
    /// Per-ion, per-axis zero-point amplitude ħc|γ_jν|, m.
    pub zero_point: Vec<Vector3<f64>>,
    /// ‖(ν²M − iνW − Φ)γ‖ / (ν²‖M‖ + ν‖W‖ + ‖Φ‖)
    pub residual: f64,
}

impl Mode {
    /// Component of the selected α on ion `j`, axis `axis`.
    pub fn alpha_at(&self, n_ions: usize, j: usize, axis: usize) -> C64 {
        self.alpha[axis * n_ions + j]
    }

    /// k·α_j for ion `j`.
    pub fn k_dot_alpha(&self, n_ions: usize, j: usize, k: &Vector3<f64>) -> C64 {
        (0..3).map(|a| self.alpha_at(n_ions, j, a) * k[a]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    pub n_ions: usize,
    pub modes: Vec<Mode>,
    pub stable: bool,
    pub max_imag_ratio: f64,
    pub max_residual: f64,
    /// Set when the kind counts differ from (N, N, N).
    pub classification_warning: Option<String>,
}

impl ModeSet {
    pub fn frequencies(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.omega).collect()
    }

    pub fn count(&self, kind: ModeKind) -> usize {
        self.modes.iter().filter(|m| m.kind == kind).count()
    }

    pub fn of_kind(&self, kind: ModeKind) -> impl Iterator<Item = (usize, &Mode)> {
        self.modes.iter().enumerate().filter(move |(_, m)| m.kind == kind)
    }

    /// Matrix of commutators [a_λ, a†_λ′] = iħ(β_λᴴα_λ′ − α_λᴴβ_λ′).
    pub fn commutator_matrix(&self) -> DMatrix<C64> {
        let n = self.modes.len();
        DMatrix::from_fn(n, n, |a, b| commutator(&self.modes[a].alpha, &self.modes[a].beta, &self.modes[b].alpha, &self.modes[b].beta))
    }
}

fn commutator(alpha_a: &DVector<C64>, beta_a: &DVector<C64>, alpha_b: &DVector<C64>, beta_b: &DVector<C64>) -> C64 {
    let i_hbar = C64::new(0.0, HBAR);
    i_hbar * (beta_a.dotc(alpha_b) - alpha_a.dotc(beta_b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeOptions {
    /// Largest accepted |Im ω|/|Re ω|.
    pub stability_tolerance: f64,
    /// Relative frequency window treated as degenerate.
    pub degeneracy_tolerance: f64,
    /// Relative tolerance for the ± partner search.
    pub pairing_tolerance: f64,
}

impl Default for ModeOptions {
    fn default() -> Self {
        Self {
            stability_tolerance: 1e-6,
            degeneracy_tolerance: 1e-9,
            pairing_tolerance: 1e-9,
        }
    }
}

fn qep_residual(mats: &SystemMatrices, nu: f64, g: &DVector<C64>) -> f64 {
    let mg = mats.m_apply(g);
    let wg = mats.w_c() * g;
    let pg = mats.phi_c() * g;
    let r = mg * C64::new(nu * nu, 0.0) - wg * C64::new(0.0, nu) - pg;
    let scale = nu * nu * mats.masses.max() + nu * mats.w.norm() + mats.phi.norm();
    r.norm() / (scale * g.norm())
}

fn energy_form(mats: &SystemMatrices, nu: f64, g: &DVector<C64>) -> f64 {
    let mg = mats.m_apply(g);
    let pg = mats.phi_c() * g;
    (g.dotc(&mg) * (nu * nu) + g.dotc(&pg)).re
}

/// Reference frequency used to non-dimensionalize the companion matrix.
fn reference_frequency(mats: &SystemMatrices) -> f64 {
    let m_min = mats.masses.min();
    let stiff = (0..mats.dim()).map(|i| mats.phi[(i, i)].abs() / mats.masses[i]).fold(0.0, f64::max);
    let cyc = mats.charge * mats.b_field.norm() / m_min;
    stiff.sqrt().max(cyc).max(1.0)
}

/// Solve (ω²M − iωW − Φ)q = 0 via the real first-order form on (q, q̇/ω_ref), select the
/// creation-operator eigenpairs, normalize, and classify.
pub fn solve_modes(mats: &SystemMatrices, opts: &ModeOptions) -> Result<ModeSet, ModesError> {
    let d = mats.dim();
    let wr = reference_frequency(mats);
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        a[(i, d + i)] = 1.0;
        let inv = 1.0 / mats.masses[i];
        for j in 0..d {
            a[(d + i, j)] = -mats.phi[(i, j)] * inv / (wr * wr);
            a[(d + i, d + j)] = mats.w[(i, j)] * inv / wr;
        }
    }
    let (values, vectors) = eigen_real(&a).ok_or(ModesError::EigenFailure)?;
    // q ∝ e^{λt} = e^{−iωt}  ⇒  ω = iλ.
    let omegas: Vec<C64> = values.iter().map(|l| C64::new(0.0, 1.0) * l * wr).collect();

    let mut max_imag_ratio: f64 = 0.0;
    let mut offending = Vec::new();
    for w in &omegas {
        let ratio = if w.re.abs() > 0.0 { w.im.abs() / w.re.abs() } else { f64::INFINITY };
        max_imag_ratio = max_imag_ratio.max(ratio);
        if ratio > opts.stability_tolerance {
            offending.push(*w);
        }
    }
    if !offending.is_empty() {
        let worst = *offending
            .iter()
            .max_by(|x, y| (x.im.abs() / x.re.abs().max(1e-300)).total_cmp(&(y.im.abs() / y.re.abs().max(1e-300))))
            .unwrap();
        return Err(ModesError::UnstableSystem { eigenvalues: offending, worst });
    }

    let kept: Vec<usize> = (0..omegas.len()).filter(|&i| omegas[i].re > 0.0).collect();
    if kept.len() != d {
        return Err(ModesError::UnstableSystem {
            eigenvalues: omegas.clone(),
            worst: omegas[0],
        });
    }
    for &i in &kept {
        let target = -omegas[i].conj();
        let ok = omegas
            .iter()
            .any(|w| (w - target).norm() <= opts.pairing_tolerance * omegas[i].norm());
        if !ok {
            return Err(ModesError::PairingFailure(omegas[i]));
        }
    }

    let b_hat = mats.b_field.try_normalize(0.0).unwrap_or(Vector3::z());
    let n = mats.n_ions;
    let mut raw: Vec<(f64, DVector<C64>, f64)> = kept
        .iter()
        .map(|&i| {
            let nu = omegas[i].re;
            let mut g = DVector::from_fn(d, |r, _| vectors[(r, i)]);
            let norm = g.norm();
            g /= C64::new(norm, 0.0);
            let dform = energy_form(mats, nu, &g);
            (nu, g, dform)
        })
        .collect();
    raw.sort_by(|x, y| (x.2 > 0.0).cmp(&(y.2 > 0.0)).then(x.0.total_cmp(&y.0)));

    let mut modes: Vec<Mode> = Vec::with_capacity(d);
    let mut start = 0;
    while start < raw.len() {
        let positive = raw[start].2 > 0.0;
        let mut end = start + 1;
        while end < raw.len()
            && (raw[end].2 > 0.0) == positive
            && (raw[end].0 - raw[start].0).abs() <= opts.degeneracy_tolerance * raw[start].0
        {
            end += 1;
        }
        let cluster = normalize_cluster(mats, &raw[start..end], start)?;
        modes.extend(cluster);
        start = end;
    }

    for m in modes.iter_mut() {
        m.residual = qep_residual(mats, m.omega, &m.eigvec);
        m.axial_weight = (0..n)
            .map(|j| {
                let c: C64 = (0..3).map(|a| m.eigvec[a * n + j] * b_hat[a]).sum();
                c.norm_sqr()
            })
            .sum();
    }
    let mut set = ModeSet {
        n_ions: n,
        max_residual: modes.iter().map(|m| m.residual).fold(0.0, f64::max),
        modes,
        stable: true,
        max_imag_ratio,
        classification_warning: None,
    };
    set = classify_modes(set, b_hat);
    Ok(set)
}

/// Select and normalize a cluster of modes sharing (within tolerance) one frequency and
/// energy sign, orthonormalizing with respect to the commutator form.
fn normalize_cluster(mats: &SystemMatrices, cluster: &[(f64, DVector<C64>, f64)], offset: usize) -> Result<Vec<Mode>, ModesError> {
    let nu: f64 = cluster.iter().map(|c| c.0).sum::<f64>() / cluster.len() as f64;
    let positive = cluster[0].2 > 0.0;
    let scale = nu * nu * mats.masses.max();
    for (k, c) in cluster.iter().enumerate() {
        if c.2.abs() < 1e-12 * scale {
            return Err(ModesError::DegenerateNormalization(offset + k));
        }
    }
    let signed = if positive { nu } else { -nu };
    let selected: Vec<DVector<C64>> = cluster
        .iter()
        .map(|c| if positive { c.1.clone() } else { c.1.conjugate() })
        .collect();
    let betas: Vec<DVector<C64>> = selected.iter().map(|a| beta_of(mats, signed, a)).collect();
    let k = cluster.len();
    let gram = DMatrix::from_fn(k, k, |a, b| commutator(&selected[a], &betas[a], &selected[b], &betas[b]));
    let gram = (&gram + gram.adjoint()) * C64::new(0.5, 0.0);
    let chol = gram.cholesky().ok_or(ModesError::DegenerateNormalization(offset))?;
    // α′ = α L⁻ᴴ makes the commutator matrix the identity.
    let l_inv_h = chol.l().adjoint().try_inverse().ok_or(ModesError::DegenerateNormalization(offset))?;
    let alphas = DMatrix::from_fn(mats.dim(), k, |r, c| selected[c][r]);
    let alphas = alphas * l_inv_h;
    let n = mats.n_ions;
    Ok((0..k)
        .map(|c| {
            let alpha = alphas.column(c).into_owned();
            let c_norm = alpha.norm();
            let mut gamma_sel = &alpha / C64::new(c_norm, 0.0);
            let phase = dominant_phase(&gamma_sel);
            gamma_sel *= phase.conj();
            let alpha = &gamma_sel * C64::new(c_norm, 0.0);
            let eigvec = if positive { gamma_sel.clone() } else { gamma_sel.conjugate() };
            let beta = beta_of(mats, signed, &alpha);
            let spread = HBAR * c_norm;
            let zero_point = (0..n)
                .map(|j| Vector3::new(gamma_sel[j].norm(), gamma_sel[n + j].norm(), gamma_sel[2 * n + j].norm()) * spread)
                .collect();
            Mode {
                omega: nu,
                signed_omega: signed,
                eigvec,
                energy_sign: if positive { 1 } else { -1 },
                kind: ModeKind::Axial,
                axial_weight: 0.0,
                c_norm,
                alpha,
                beta,
                spread,
                zero_point,
                residual: 0.0,
            }
        })
        .collect())
}

/// Unit phase of the largest-magnitude component, used to fix the arbitrary global phase.
fn dominant_phase(v: &DVector<C64>) -> C64 {
    let mut best = C64::new(1.0, 0.0);
    let mut mag = -1.0;
    for x in v.iter() {
        // Ties are resolved towards the first component for determinism.
        if x.norm() > mag * (1.0 + 1e-9) {
            mag = x.norm();
            best = *x;
        }
    }
    if mag > 0.0 {
        best / mag
    } else {
        C64::new(1.0, 0.0)
    }
}

fn beta_of(mats: &SystemMatrices, signed_omega: f64, alpha: &DVector<C64>) -> DVector<C64> {
    mats.m_apply(alpha) * C64::new(0.0, signed_omega) + mats.w_c() * alpha * C64::new(0.5, 0.0)
}

/// Assign kinds: axial when over half the motion lies along `b_direction`, otherwise by the
/// energy sign (positive cyclotron, negative magnetron). Modes are then sorted by kind and
/// frequency.
pub fn classify_modes(mut set: ModeSet, b_direction: Vector3<f64>) -> ModeSet {
    let n = set.n_ions;
    let b = b_direction.try_normalize(0.0).unwrap_or(Vector3::z());
    for m in set.modes.iter_mut() {
        m.axial_weight = (0..n)
            .map(|j| {
                let c: C64 = (0..3).map(|a| m.eigvec[a * n + j] * b[a]).sum();
                c.norm_sqr()
            })
            .sum();
        m.kind = if m.axial_weight > 0.5 {
            ModeKind::Axial
        } else if m.energy_sign > 0 {
            ModeKind::Cyclotron
        } else {
            ModeKind::Magnetron
        };
    }
    set.modes.sort_by(|x, y| x.kind.cmp(&y.kind).then(x.omega.total_cmp(&y.omega)));
    let counts = (set.count(ModeKind::Axial), set.count(ModeKind::Cyclotron), set.count(ModeKind::Magnetron));
    set.classification_warning = if counts == (n, n, n) {
        None
    } else {
        Some(format!(
            "ambiguous classification: {} axial, {} cyclotron, {} magnetron for {} ions",
            counts.0, counts.1, counts.2, n
        ))
    };
    set
}

/// Recompute c, α, β and zero-point data of every mode from its eigenvector.
pub fn quantum_normalize(set: &ModeSet, mats: &SystemMatrices, opts: &ModeOptions) -> Result<ModeSet, ModesError> {
    let mut raw: Vec<(f64, DVector<C64>, f64, ModeKind, f64, f64)> = set
        .modes
        .iter()
        .map(|m| (m.omega, m.eigvec.clone(), energy_form(mats, m.omega, &m.eigvec), m.kind, m.axial_weight, m.residual))
        .collect();
    raw.sort_by(|x, y| (x.2 > 0.0).cmp(&(y.2 > 0.0)).then(x.0.total_cmp(&y.0)));
    let mut out = Vec::with_capacity(raw.len());
    let mut start = 0;
    while start < raw.len() {
        let positive = raw[start].2 > 0.0;
        let mut end = start + 1;
        while end < raw.len()
            && (raw[end].2 > 0.0) == positive
            && (raw[end].0 - raw[start].0).abs() <= opts.degeneracy_tolerance * raw[start].0
        {
            end += 1;
        }
        let cl: Vec<(f64, DVector<C64>, f64)> = raw[start..end].iter().map(|r| (r.0, r.1.clone(), r.2)).collect();
        let mut normed = normalize_cluster(mats, &cl, start)?;
        for (m, r) in normed.iter_mut().zip(&raw[start..end]) {
            m.kind = r.3;
            m.axial_weight = r.4;
            m.residual = qep_residual(mats, m.omega, &m.eigvec);
        }
        out.extend(normed);
        start = end;
    }
    out.sort_by(|x, y| x.kind.cmp(&y.kind).then(x.omega.total_cmp(&y.omega)));
    Ok(ModeSet { modes: out, ..set.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvarianceCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Σν² against Σ_j (eB₀/m_j)²; the residual is relative.
pub fn invariance_sum(set: &ModeSet, mats: &SystemMatrices) -> InvarianceCheck {
    let lhs: f64 = set.modes.iter().map(|m| m.omega * m.omega).sum();
    let b = mats.b_field.norm();
    let rhs: f64 = (0..mats.n_ions).map(|j| (mats.charge * b / mats.masses[j]).powi(2)).sum();
    InvarianceCheck {
        lhs,
        rhs,
        residual: (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE),
    }
}

/// ln Π(m ω²) against ln|det Φ|; the residual is the absolute difference of the logs.
/// A negative det Φ cannot match a stable spectrum and yields an infinite residual.
pub fn invariance_product(set: &ModeSet, mats: &SystemMatrices) -> InvarianceCheck {
    let lhs: f64 = set.modes.iter().map(|m| (m.omega * m.omega).ln()).sum::<f64>()
        + mats.masses.iter().map(|m| m.ln()).sum::<f64>();
    let (rhs, sign) = log_abs_det(&mats.phi);
    let residual = if sign > 0.0 { (lhs - rhs).abs() } else { f64::INFINITY };
    InvarianceCheck { lhs, rhs, residual }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDecomposition {
    /// Classical annihilation amplitudes a_λ, √quanta.
    pub amplitudes: Vec<C64>,
    /// Modal amplitude r_λ = 2ħc|a_λ| of q(t) = Re Σ r e^{iδ} γ e^{−iνt}, m.
    pub r: Vec<f64>,
    pub delta: Vec<f64>,
    /// Signed mode energies ħω_λ|a_λ|² (negative for magnetron motion), J.
    pub energy: Vec<f64>,
    /// |E_λ|/(ħν_λ)
    pub occupation: Vec<f64>,
}

/// Canonical momentum p = Mq̇ − ½Wq.
pub fn canonical_momentum(mats: &SystemMatrices, q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64> {
    qdot.component_mul(&mats.masses) - &mats.w * q * 0.5
}

/// Express a phase-space state in the mode basis.
pub fn project_trajectory(
    set: &ModeSet,
    mats: &SystemMatrices,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> Result<TrajectoryDecomposition, ModesError> {
    let d = mats.dim();
    if q.len() != d || qdot.len() != d {
        return Err(ModesError::DimensionMismatch { expected: d, got: q.len().min(qdot.len()) });
    }
    let p = canonical_momentum(mats, q, qdot);
    let pc = p.map(|x| C64::new(x, 0.0));
    let qc = q.map(|x| C64::new(x, 0.0));
    let amplitudes: Vec<C64> = set.modes.iter().map(|m| m.alpha.dotc(&pc) + m.beta.dotc(&qc)).collect();
    let (q_back, qdot_back) = reconstruct_state(set, mats, &amplitudes);
    let scale_q = q.norm().max(1e-300);
    let scale_v = qdot.norm().max(1e-300);
    let err = ((q_back - q).norm() / scale_q).max((qdot_back - qdot).norm() / scale_v);
    if (q.norm() > 0.0 || qdot.norm() > 0.0) && err > 1e-6 {
        return Err(ModesError::SingularBasis(err));
    }
    let mut r = Vec::with_capacity(d);
    let mut delta = Vec::with_capacity(d);
    let mut energy = Vec::with_capacity(d);
    let mut occupation = Vec::with_capacity(d);
    for (m, a) in set.modes.iter().zip(&amplitudes) {
        let rho = if m.energy_sign > 0 {
            C64::new(0.0, 2.0 * HBAR * m.c_norm) * a
        } else {
            C64::new(0.0, -2.0 * HBAR * m.c_norm) * a.conj()
        };
        r.push(rho.norm());
        delta.push(rho.arg());
        energy.push(HBAR * m.signed_omega * a.norm_sqr());
        occupation.push(a.norm_sqr());
    }
    Ok(TrajectoryDecomposition { amplitudes, r, delta, energy, occupation })
}

/// Phase-space state (q, q̇) for given classical amplitudes a_λ:
/// q = −2ħ Σ Im(α a), p = 2ħ Σ Im(β a).
pub fn reconstruct_state(set: &ModeSet, mats: &SystemMatrices, amplitudes: &[C64]) -> (DVector<f64>, DVector<f64>) {
    let d = mats.dim();
    let mut q = DVector::zeros(d);
    let mut p = DVector::zeros(d);
    for (m, a) in set.modes.iter().zip(amplitudes) {
        for i in 0..d {
            q[i] -= 2.0 * HBAR * (m.alpha[i] * a).im;
            p[i] += 2.0 * HBAR * (m.beta[i] * a).im;
        }
    }
    let qdot = (p + &mats.w * &q * 0.5).component_div(&mats.masses);
    (q, qdot)
}

/// Energy ½q̇ᵀMq̇ + ½qᵀΦq of the linearized motion, J.
pub fn quadratic_energy(mats: &SystemMatrices, q: &DVector<f64>, qdot: &DVector<f64>) -> f64 {
    0.5 * qdot.component_mul(&mats.masses).dot(qdot) + 0.5 * q.dot(&(&mats.phi * q))
}

/// Right-hand side of M q̈ = W q̇ − Φ q + f for the state [q, q̇].
pub fn linear_rhs(mats: &SystemMatrices, q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64> {
    (&mats.w * qdot - &mats.phi * q).component_div(&mats.masses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_equilibrium, SolverOptions};
    use crate::model::{
        build_lattice, exchange_frequency, single_site_frequencies, ExchangeKind, IonSpecies, LatticeKind,
        LatticeSpec, TrapSite,
    };
    use std::collections::BTreeMap;
    use std::f64::consts::PI;

    const TWO_PI: f64 = 2.0 * PI;

    pub(crate) fn single_site(b0: f64, b_dir: Vector3<f64>, axis: Vector3<f64>, wz: f64) -> (ArrayConfig, SystemMatrices) {
        let be = IonSpecies::beryllium9();
        let site = TrapSite::symmetric(Vector3::zeros(), axis, wz, &be).unwrap();
        let cfg = ArrayConfig::new(be, b_dir.normalize() * b0, 0.0, vec![site], BTreeMap::new()).unwrap();
        let mats = assemble_matrices(&cfg, &[Vector3::zeros()]).unwrap();
        (cfg, mats)
    }

    #[test]
    fn magnetic_matrix_structure() {
        let w = magnetic_matrix(3, 1.0, Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(w[(0, 3)], 2.0);
        assert_eq!(w[(3, 0)], -2.0);
        assert_eq!(w[(0, 6)], 0.0);
        assert_eq!(magnetic_matrix(2, 1.0, Vector3::zeros()).norm(), 0.0);
        let w = magnetic_matrix(4, 1.6e-19, Vector3::new(0.3, -1.1, 2.0));
        assert!((&w + w.transpose()).norm() == 0.0);
        let m: f64 = 1.5e-26;
        let tr: f64 = (&w * &w).trace() / (m * m);
        let wc: f64 = 1.6e-19 * Vector3::new(0.3, -1.1, 2.0).norm() / m;
        assert!((tr / (-2.0 * 4.0 * wc * wc) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_site_matches_closed_form() {
        let wz = TWO_PI * 2.55e6;
        let (cfg, mats) = single_site(2.2, Vector3::z(), Vector3::z(), wz);
        let set = solve_modes(&mats, &ModeOptions::default()).unwrap();
        let f = single_site_frequencies(&cfg.species, 2.2, wz).unwrap();
        assert_eq!(set.modes.len(), 3);
        let kinds: Vec<_> = set.modes.iter().map(|m| (m.kind, m.energy_sign)).collect();
        assert_eq!(kinds, vec![(ModeKind::Axial, 1), (ModeKind::Cyclotron, 1), (ModeKind::Magnetron, -1)]);
        assert!((set.modes[0].omega / wz - 1.0).abs() < 1e-12);
        assert!((set.modes[1].omega / f.omega_plus - 1.0).abs() < 1e-12);
        assert!((set.modes[2].omega / f.omega_minus - 1.0).abs() < 1e-12);
        let zp = (HBAR / (2.0 * cfg.species.mass * wz)).sqrt();
        assert!((set.modes[0].spread / zp - 1.0).abs() < 1e-10);
        assert!((set.modes[0].zero_point[0].z / zp - 1.0).abs() < 1e-10);
        let s = invariance_sum(&set, &mats);
        assert!(s.residual < 1e-12);
        let p = invariance_product(&set, &mats);
        assert!(p.residual < 1e-10);
        // Analytic determinant: diag(−mω²/2, −mω²/2, mω²) has det m³ω⁶/4.
        let m = cfg.species.mass;
        assert!((p.rhs - (m.powi(3) * wz.powi(6) / 4.0).ln()).abs() < 1e-10);
    }

    #[test]
    fn normalization_identities() {
        let (_, mats) = single_site(2.5, Vector3::new(0.3, 0.1, 1.0), Vector3::z(), TWO_PI * 2.1e6);
        let set = solve_modes(&mats, &ModeOptions::default()).unwrap();
        for m in &set.modes {
            let alpha = &m.alpha;
            let ma = mats.m_apply(alpha);
            let pa = mats.phi_c() * alpha;
            let w = m.signed_omega;
            let val = (alpha.dotc(&ma) * (w * w) + alpha.dotc(&pa)) * (HBAR / w);
            assert!((val - C64::new(1.0, 0.0)).norm() < 1e-10);
            let dform = energy_form(&mats, m.omega, &m.eigvec);
            let c = (m.omega / (HBAR * dform.abs())).sqrt();
            assert!((c / m.c_norm - 1.0).abs() < 1e-10);
            assert!(m.residual < 1e-10);
        }
        let c = set.commutator_matrix();
        assert!((c - DMatrix::identity(3, 3)).norm() < 1e-9);
    }

    #[test]
    fn two_ion_axial_pair() {
        let be = IonSpecies::beryllium9();
        let wz = TWO_PI * 2.1e6;
        let sites = vec![
            TrapSite::symmetric(Vector3::new(-15e-6, 0.0, 0.0), Vector3::z(), wz, &be).unwrap(),
            TrapSite::symmetric(Vector3::new(15e-6, 0.0, 0.0), Vector3::z(), wz, &be).unwrap(),
        ];
        let cfg = ArrayConfig::new(be.clone(), Vector3::z() * 2.5, 0.0, sites, BTreeMap::new()).unwrap();
        let eq = solve_equilibrium(&cfg, None, &SolverOptions::default()).unwrap();
        let mats = assemble_matrices(&cfg, &eq.positions).unwrap();
        let set = solve_modes(&mats, &ModeOptions::default()).unwrap();
        let mut axial: Vec<f64> = set.of_kind(ModeKind::Axial).map(|(_, m)| m.omega).collect();
        axial.sort_by(f64::total_cmp);
        let r = (eq.positions[1] - eq.positions[0]).norm();
        let ex = exchange_frequency(&be, ExchangeKind::Axial, wz, 0.0, r).unwrap();
        assert!((axial[1] / wz - 1.0).abs() < 1e-10);
        assert!((axial[0] / (wz * wz - 2.0 * ex * wz).sqrt() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn honeycomb_counts_and_invariants() {
        let be = IonSpecies::beryllium9();
        let spec = LatticeSpec { kind: LatticeKind::Honeycomb, spacing: 15e-6, n_sites: 6, tilt: 20f64.to_radians(), centering: None };
        let cfg = build_lattice(&spec, &be, 2.5, None, TWO_PI * 2.1e6, BTreeMap::new()).unwrap();
        let eq = solve_equilibrium(&cfg, None, &SolverOptions::default()).unwrap();
        let mats = assemble_matrices(&cfg, &eq.positions).unwrap();
        let set = solve_modes(&mats, &ModeOptions::default()).unwrap();
        assert_eq!((set.count(ModeKind::Axial), set.count(ModeKind::Cyclotron), set.count(ModeKind::Magnetron)), (6, 6, 6));
        assert!(set.classification_warning.is_none());
        assert!(invariance_sum(&set, &mats).residual < 1e-10);
        assert!(invariance_product(&set, &mats).residual < 1e-9);
        let c = set.commutator_matrix();
        assert!((c - DMatrix::identity(18, 18)).norm() < 1e-8);
        let max_mag = set.of_kind(ModeKind::Magnetron).map(|(_, m)| m.omega).fold(0.0, f64::max);
        let min_cyc = set.of_kind(ModeKind::Cyclotron).map(|(_, m)| m.omega).fold(f64::INFINITY, f64::min);
        assert!(max_mag < min_cyc);
    }

    #[test]
    fn product_rule_independent_of_field() {
        let be = IonSpecies::beryllium9();
        let spec = LatticeSpec { kind: LatticeKind::Triangular, spacing: 20e-6, n_sites: 4, tilt: 0.2, centering: None };
        let mut logs = Vec::new();
        for b0 in [2.0, 3.0] {
            let cfg = build_lattice(&spec, &be, b0, None, TWO_PI * 1.5e6, BTreeMap::new()).unwrap();
            let eq = solve_equilibrium(&cfg, None, &SolverOptions::default()).unwrap();
            let mats = assemble_matrices(&cfg, &eq.positions).unwrap();
            let set = solve_modes(&mats, &ModeOptions::default()).unwrap();
            let p = invariance_product(&set, &mats);
            assert!(p.residual < 1e-9);
            logs.push(p.rhs);
        }
        assert_eq!(logs[0], logs[1]);
    }

    #[test]
    fn projection_round_trip() {
        let (_, mats) = single_site(2.5, Vector3::new(0.2, 0.0, 1.0), Vector3::z(), TWO_PI * 2.1e6);
        let set = solve_modes(&mats, &ModeOptions::default()).unwrap();
        let amps = vec![C64::new(3.0, -1.0), C64::new(0.0, 0.0), C64::new(-0.5, 2.0)];
        let (q, v) = reconstruct_state(&set, &mats, &amps);
        let dec = project_trajectory(&set, &mats, &q, &v).unwrap();
        for (a, b) in dec.amplitudes.iter().zip(&amps) {
            assert!((a - b).norm() < 1e-9 * 3.2);
        }
        let total: f64 = dec.energy.iter().sum();
        assert!((total / quadratic_energy(&mats, &q, &v) - 1.0).abs() < 1e-9);
        let zero = project_trajectory(&set, &mats, &DVector::zeros(3), &DVector::zeros(3)).unwrap();
        assert!(zero.r.iter().all(|&r| r == 0.0));
    }
}
