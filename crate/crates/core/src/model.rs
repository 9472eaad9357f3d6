//! Physical constants, ion species, trap sites and closed-form single-site analytics.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub mod constants {
    /// Elementary charge, C.
    pub const E_CHARGE: f64 = 1.602_176_634e-19;
    /// Reduced Planck constant, J s.
    pub const HBAR: f64 = 1.054_571_817e-34;
    /// Vacuum permittivity, F/m.
    pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
    /// Coulomb constant 1/(4π ε₀), N m²/C².
    pub const K_E: f64 = 1.0 / (4.0 * std::f64::consts::PI * EPSILON_0);
    /// Unified atomic mass unit, kg.
    pub const AMU: f64 = 1.660_539_066_60e-27;
}

use constants::{AMU, E_CHARGE, K_E};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unstable single-site trap: omega_z = {omega_z:.6e} rad/s exceeds omega_c/sqrt(2) = {limit:.6e} rad/s")]
    Instability { omega_z: f64, limit: f64 },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("unsupported lattice kind '{0}'")]
    UnsupportedLattice(String),
    #[error("override index {index} out of range for {n_sites} sites")]
    BadOverrideIndex { index: usize, n_sites: usize },
    #[error("sites {0} and {1} share the same center")]
    DuplicateSite(usize, usize),
    #[error("unknown species '{0}'")]
    UnknownSpecies(String),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidParameter { name, reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IonSpecies {
    pub label: String,
    /// kg
    pub mass: f64,
    /// C
    pub charge: f64,
    /// m
    pub cooling_wavelength: f64,
    /// rad/s
    pub natural_linewidth: f64,
}

impl IonSpecies {
    pub fn new(
        label: impl Into<String>,
        mass: f64,
        charge: f64,
        cooling_wavelength: f64,
        natural_linewidth: f64,
    ) -> Result<Self, ModelError> {
        if !(mass > 0.0) {
            return Err(invalid("mass", "must be positive"));
        }
        if !(charge > 0.0) {
            return Err(invalid("charge", "must be positive"));
        }
        if !(natural_linewidth > 0.0) {
            return Err(invalid("natural_linewidth", "must be positive"));
        }
        if !(cooling_wavelength > 0.0) {
            return Err(invalid("cooling_wavelength", "must be positive"));
        }
        Ok(Self {
            label: label.into(),
            mass,
            charge,
            cooling_wavelength,
            natural_linewidth,
        })
    }

    /// ⁹Be⁺ with the 313 nm cooling line. Atomic data are external inputs, not derived here.
    pub fn beryllium9() -> Self {
        Self {
            label: "Be9+".into(),
            mass: 9.012 * AMU,
            charge: E_CHARGE,
            cooling_wavelength: 313e-9,
            natural_linewidth: 2.0 * PI * 19.4e6,
        }
    }

    /// Look up a built-in species by label (case-insensitive).
    pub fn lookup(label: &str) -> Result<Self, ModelError> {
        let key = label.to_ascii_lowercase().replace(['-', '_', ' '], "");
        match key.as_str() {
            "be9+" | "9be+" | "be9" | "beryllium9" => Ok(Self::beryllium9()),
            _ => Err(ModelError::UnknownSpecies(label.to_string())),
        }
    }
}

/// One quadrupole site. The potential in local coordinates is `r̄ᵀ Q r̄` with `Q = tensor`, V/m².
#[derive(Debug, Clone, PartialEq)]
pub struct TrapSite {
    pub center: Vector3<f64>,
    pub tensor: Matrix3<f64>,
    pub axial_frequency_target: Option<f64>,
}

impl TrapSite {
    /// Rotationally symmetric site confining along `axis` with axial frequency `omega_z`.
    pub fn symmetric(
        center: Vector3<f64>,
        axis: Vector3<f64>,
        omega_z: f64,
        species: &IonSpecies,
    ) -> Result<Self, ModelError> {
        if !(omega_z > 0.0) {
            return Err(invalid("omega_z", "must be positive"));
        }
        let n = axis.try_normalize(0.0).ok_or_else(|| invalid("axis", "zero vector"))?;
        let scale = species.mass * omega_z * omega_z / (2.0 * species.charge);
        let tensor = (n * n.transpose() * 1.5 - Matrix3::identity() * 0.5) * scale;
        Ok(Self {
            center,
            tensor,
            axial_frequency_target: Some(omega_z),
        })
    }

    pub fn from_tensor(center: Vector3<f64>, tensor: Matrix3<f64>) -> Result<Self, ModelError> {
        let norm = tensor.norm();
        if (tensor - tensor.transpose()).norm() > 1e-12 * norm {
            return Err(invalid("tensor", "not symmetric"));
        }
        if tensor.trace().abs() > 1e-12 * norm {
            return Err(invalid("tensor", "not traceless"));
        }
        Ok(Self {
            center,
            tensor,
            axial_frequency_target: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayConfig {
    pub species: IonSpecies,
    /// T
    pub b_field: Vector3<f64>,
    /// Angle between B and the lattice-plane normal, rad.
    pub tilt: f64,
    pub sites: Vec<TrapSite>,
    /// Site index → multiplicative curvature scale.
    pub site_overrides: BTreeMap<usize, f64>,
}

impl ArrayConfig {
    pub fn new(
        species: IonSpecies,
        b_field: Vector3<f64>,
        tilt: f64,
        sites: Vec<TrapSite>,
        site_overrides: BTreeMap<usize, f64>,
    ) -> Result<Self, ModelError> {
        if sites.is_empty() {
            return Err(invalid("sites", "at least one site required"));
        }
        if !(b_field.norm() > 0.0) {
            return Err(invalid("b_field", "magnitude must be positive"));
        }
        for (&index, &scale) in &site_overrides {
            if index >= sites.len() {
                return Err(ModelError::BadOverrideIndex { index, n_sites: sites.len() });
            }
            if !(scale > 0.0) || !scale.is_finite() {
                return Err(invalid("site_overrides", "curvature scale must be positive"));
            }
        }
        let span = sites
            .iter()
            .map(|s| s.center.norm())
            .fold(0.0_f64, f64::max)
            .max(1e-12);
        for i in 0..sites.len() {
            for j in (i + 1)..sites.len() {
                if (sites[i].center - sites[j].center).norm() <= 1e-12 * span {
                    return Err(ModelError::DuplicateSite(i, j));
                }
            }
        }
        Ok(Self {
            species,
            b_field,
            tilt,
            sites,
            site_overrides,
        })
    }

    pub fn n_ions(&self) -> usize {
        self.sites.len()
    }

    pub fn b_magnitude(&self) -> f64 {
        self.b_field.norm()
    }

    pub fn b_direction(&self) -> Vector3<f64> {
        self.b_field / self.b_field.norm()
    }

    pub fn curvature_scale(&self, site: usize) -> f64 {
        self.site_overrides.get(&site).copied().unwrap_or(1.0)
    }

    /// Quadrupole tensor of `site` including any override, V/m².
    pub fn site_tensor(&self, site: usize) -> Matrix3<f64> {
        self.sites[site].tensor * self.curvature_scale(site)
    }

    /// Smallest distance between two site centers; `None` for a single site.
    pub fn min_site_spacing(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..self.sites.len() {
            for j in (i + 1)..self.sites.len() {
                let r = (self.sites[i].center - self.sites[j].center).norm();
                best = Some(best.map_or(r, |b| b.min(r)));
            }
        }
        best
    }

    pub fn omega_c(&self) -> f64 {
        bare_cyclotron(&self.species, self.b_magnitude())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGeometry {
    /// m
    pub separation: f64,
    /// Polar angle to the B axis, rad.
    pub polar: f64,
    /// Azimuth around the B axis, rad.
    pub azimuth: f64,
}

impl PairGeometry {
    /// Geometry of the vector `r` relative to the field direction `b`.
    pub fn from_vector(r: Vector3<f64>, b: Vector3<f64>) -> Result<Self, ModelError> {
        let separation = r.norm();
        if !(separation > 0.0) {
            return Err(invalid("separation", "must be positive"));
        }
        let bz = b.try_normalize(0.0).ok_or_else(|| invalid("b", "zero vector"))?;
        let helper = if bz.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let bx = (helper - bz * bz.dot(&helper)).normalize();
        let by = bz.cross(&bx);
        let cos_t = (r.dot(&bz) / separation).clamp(-1.0, 1.0);
        Ok(Self {
            separation,
            polar: cos_t.acos(),
            azimuth: r.dot(&by).atan2(r.dot(&bx)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleSiteFrequencies {
    pub omega_c: f64,
    pub omega_1: f64,
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub omega_z: f64,
}

pub fn bare_cyclotron(species: &IonSpecies, b0: f64) -> f64 {
    species.charge * b0 / species.mass
}

pub fn single_site_frequencies(
    species: &IonSpecies,
    b0: f64,
    omega_z: f64,
) -> Result<SingleSiteFrequencies, ModelError> {
    if !(omega_z > 0.0) {
        return Err(invalid("omega_z", "must be positive"));
    }
    let omega_c = bare_cyclotron(species, b0);
    let disc = omega_c * omega_c - 2.0 * omega_z * omega_z;
    if !(disc > 0.0) {
        return Err(ModelError::Instability {
            omega_z,
            limit: omega_c / 2f64.sqrt(),
        });
    }
    let omega_1 = disc.sqrt();
    let omega_plus = 0.5 * (omega_c + omega_1);
    Ok(SingleSiteFrequencies {
        omega_c,
        omega_1,
        omega_plus,
        omega_minus: omega_c - omega_plus,
        omega_z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeKind {
    Axial,
    Radial,
}

/// Ω_ex = e²/(4πε₀ m ω′ R³) with ω′ = ω_z (axial) or ω₁ (radial).
pub fn exchange_frequency(
    species: &IonSpecies,
    kind: ExchangeKind,
    omega_z: f64,
    omega_1: f64,
    r: f64,
) -> Result<f64, ModelError> {
    if !(r > 0.0) {
        return Err(invalid("R", "must be positive"));
    }
    let denom = match kind {
        ExchangeKind::Axial => omega_z,
        ExchangeKind::Radial => omega_1,
    };
    if !denom.is_finite() || !(denom > 0.0) {
        return Err(ModelError::Instability {
            omega_z,
            limit: f64::NAN,
        });
    }
    Ok(K_E * species.charge * species.charge / (species.mass * denom * r.powi(3)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipolarCoupling {
    pub k_z: f64,
    pub k_plus: f64,
    pub k_minus: f64,
    /// Hopping rates ½·Ω_ex,ν·K_ν, rad/s.
    pub hop_z: f64,
    pub hop_plus: f64,
    pub hop_minus: f64,
}

/// Dipolar exchange coefficients between two equal sites.
///
/// The hopping rate carries a factor ½ so that the symmetric/antisymmetric splitting of a
/// resonant pair equals `Ω_ex·|K|`, which is what exact diagonalization of the Hessian gives.
pub fn dipolar_coupling(
    pair: &PairGeometry,
    freqs: &SingleSiteFrequencies,
    species: &IonSpecies,
) -> Result<DipolarCoupling, ModelError> {
    let c = pair.polar.cos();
    let k_z = 1.0 - 3.0 * c * c;
    let ex_z = exchange_frequency(species, ExchangeKind::Axial, freqs.omega_z, freqs.omega_1, pair.separation)?;
    let ex_r = exchange_frequency(species, ExchangeKind::Radial, freqs.omega_z, freqs.omega_1, pair.separation)?;
    Ok(DipolarCoupling {
        k_z,
        k_plus: -k_z,
        k_minus: -k_z,
        hop_z: 0.5 * ex_z * k_z,
        hop_plus: -0.5 * ex_r * k_z,
        hop_minus: -0.5 * ex_r * k_z,
    })
}

/// Pseudopotential-to-static curvature ratio √3·|q_z|/8 of an r.f. trap.
pub fn pseudopotential_ratio(q_z: f64) -> f64 {
    3f64.sqrt() * q_z.abs() / 8.0
}

/// Mathieu parameter q_z = −4eφ₀/(m Ω² h²).
pub fn mathieu_q(species: &IonSpecies, phi0: f64, h: f64, omega_rf: f64) -> Result<f64, ModelError> {
    if !(h > 0.0) {
        return Err(invalid("h", "must be positive"));
    }
    if !(omega_rf > 0.0) {
        return Err(invalid("Omega_RF", "must be positive"));
    }
    Ok(-4.0 * species.charge * phi0 / (species.mass * omega_rf * omega_rf * h * h))
}

/// Frobenius norm of the curvature tensor of a symmetric quadrupole: √(3/2)·mω_z²/e.
fn symmetric_curvature_norm(species: &IonSpecies, omega_z: f64) -> f64 {
    1.5f64.sqrt() * species.mass * omega_z * omega_z / species.charge
}

/// Axial frequency of a symmetric site with dimensionless curvature κ = ‖Φ⁽²⁾‖h²/V.
pub fn curvature_to_axial_frequency(
    kappa: f64,
    voltage: f64,
    h: f64,
    species: &IonSpecies,
) -> Result<f64, ModelError> {
    if !(kappa > 0.0 && voltage > 0.0 && h > 0.0) {
        return Err(invalid("kappa/V/h", "all must be positive"));
    }
    Ok((species.charge * kappa * voltage / (1.5f64.sqrt() * species.mass * h * h)).sqrt())
}

pub fn axial_frequency_to_curvature(omega_z: f64, voltage: f64, h: f64, species: &IonSpecies) -> f64 {
    symmetric_curvature_norm(species, omega_z) * h * h / voltage
}

/// Ohmic power ½·R·C²·V²·Ω² dissipated by charging a site capacitance.
pub fn rf_power(resistance: f64, capacitance: f64, voltage: f64, omega_rf: f64) -> Result<f64, ModelError> {
    if resistance < 0.0 || capacitance < 0.0 || voltage < 0.0 || omega_rf < 0.0 {
        return Err(invalid("rf_power", "inputs must be non-negative"));
    }
    Ok(0.5 * resistance * capacitance.powi(2) * voltage.powi(2) * omega_rf.powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LatticeKind {
    Square,
    Triangular,
    Honeycomb,
    Kagome,
}

impl std::str::FromStr for LatticeKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "square" => Ok(Self::Square),
            "triangular" => Ok(Self::Triangular),
            "honeycomb" => Ok(Self::Honeycomb),
            "kagome" => Ok(Self::Kagome),
            other => Err(ModelError::UnsupportedLattice(other.to_string())),
        }
    }
}

/// Which lattice feature sits at the origin of a finite patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Centering {
    Site,
    Bond,
    Cell,
}

impl std::str::FromStr for Centering {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "site" => Ok(Self::Site),
            "bond" => Ok(Self::Bond),
            "cell" => Ok(Self::Cell),
            other => Err(invalid("centering", format!("unknown centering '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    pub kind: LatticeKind,
    /// Nearest-neighbor distance, m.
    pub spacing: f64,
    pub n_sites: usize,
    /// Tilt of the confining axis from the plane normal, rad. The tilt is about the y axis.
    pub tilt: f64,
    pub centering: Option<Centering>,
}

impl LatticeKind {
    pub fn default_centering(self) -> Centering {
        match self {
            Self::Square | Self::Triangular => Centering::Site,
            Self::Honeycomb | Self::Kagome => Centering::Cell,
        }
    }

    /// Bravais vectors and basis for unit nearest-neighbor distance.
    fn unit_cell(self) -> ([[f64; 2]; 2], Vec<[f64; 2]>) {
        let s3 = 3f64.sqrt();
        match self {
            Self::Square => ([[1.0, 0.0], [0.0, 1.0]], vec![[0.0, 0.0]]),
            Self::Triangular => ([[1.0, 0.0], [0.5, 0.5 * s3]], vec![[0.0, 0.0]]),
            Self::Honeycomb => ([[s3, 0.0], [0.5 * s3, 1.5]], vec![[0.0, 1.0], [0.0, -1.0]]),
            Self::Kagome => (
                [[2.0, 0.0], [1.0, s3]],
                vec![[0.0, 0.0], [1.0, 0.0], [0.5, 0.5 * s3]],
            ),
        }
    }

    /// Offset of the patch center relative to the generating lattice, unit spacing.
    fn center_offset(self, centering: Centering) -> [f64; 2] {
        let s3 = 3f64.sqrt();
        match (self, centering) {
            (Self::Square, Centering::Site) => [0.0, 0.0],
            (Self::Square, Centering::Bond) => [0.5, 0.0],
            (Self::Square, Centering::Cell) => [0.5, 0.5],
            (Self::Triangular, Centering::Site) => [0.0, 0.0],
            (Self::Triangular, Centering::Bond) => [0.5, 0.0],
            (Self::Triangular, Centering::Cell) => [0.5, 0.5 / s3],
            (Self::Honeycomb, Centering::Site) => [0.0, 1.0],
            (Self::Honeycomb, Centering::Bond) => [0.25 * s3, 0.75],
            (Self::Honeycomb, Centering::Cell) => [0.0, 0.0],
            (Self::Kagome, Centering::Site) => [0.0, 0.0],
            (Self::Kagome, Centering::Bond) => [0.5, 0.0],
            (Self::Kagome, Centering::Cell) => [1.5, 0.5 * s3],
        }
    }
}

/// In-plane site centers of a finite patch, filled in shells around the patch center.
pub fn lattice_positions(kind: LatticeKind, spacing: f64, n_sites: usize, centering: Centering) -> Vec<Vector3<f64>> {
    let (bravais, basis) = kind.unit_cell();
    let offset = kind.center_offset(centering);
    let per_cell = basis.len();
    let mut reach = 2_i64;
    loop {
        let mut points: Vec<[f64; 2]> = Vec::new();
        for i in -reach..=reach {
            for j in -reach..=reach {
                for b in &basis {
                    let x = i as f64 * bravais[0][0] + j as f64 * bravais[1][0] + b[0] - offset[0];
                    let y = i as f64 * bravais[0][1] + j as f64 * bravais[1][1] + b[1] - offset[1];
                    points.push([x, y]);
                }
            }
        }
        // The smallest cell-index reach guarantees a complete disc of this radius.
        let min_height = {
            let a = bravais[0];
            let b = bravais[1];
            let area = (a[0] * b[1] - a[1] * b[0]).abs();
            let la = (a[0] * a[0] + a[1] * a[1]).sqrt();
            let lb = (b[0] * b[0] + b[1] * b[1]).sqrt();
            area / la.max(lb)
        };
        let safe_radius = (reach as f64 - 2.0) * min_height;
        let tol = 1e-9;
        points.sort_by(|p, q| {
            let rp = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let rq = (q[0] * q[0] + q[1] * q[1]).sqrt();
            if (rp - rq).abs() > tol {
                rp.partial_cmp(&rq).unwrap()
            } else if (p[0] - q[0]).abs() > tol {
                p[0].partial_cmp(&q[0]).unwrap()
            } else {
                p[1].partial_cmp(&q[1]).unwrap()
            }
        });
        let enough = points.len() >= n_sites * per_cell.max(1)
            && n_sites > 0
            && {
                let last = points[n_sites - 1];
                (last[0] * last[0] + last[1] * last[1]).sqrt() + tol < safe_radius
            };
        if enough || n_sites == 0 {
            return points
                .into_iter()
                .take(n_sites)
                .map(|p| Vector3::new(p[0] * spacing, p[1] * spacing, 0.0))
                .collect();
        }
        reach *= 2;
    }
}

/// Confining axis tilted by `tilt` from the plane normal towards +x.
pub fn tilted_axis(tilt: f64) -> Vector3<f64> {
    Vector3::new(tilt.sin(), 0.0, tilt.cos())
}

/// Build a lattice patch of identical symmetric sites. `b_field` of `None` aligns a field of
/// magnitude `b0` with the confining axis.
pub fn build_lattice(
    spec: &LatticeSpec,
    species: &IonSpecies,
    b0: f64,
    b_direction: Option<Vector3<f64>>,
    omega_z: f64,
    overrides: BTreeMap<usize, f64>,
) -> Result<ArrayConfig, ModelError> {
    if !(spec.spacing > 0.0) {
        return Err(invalid("d", "must be positive"));
    }
    if spec.n_sites == 0 {
        return Err(invalid("n_sites", "must be at least 1"));
    }
    let axis = tilted_axis(spec.tilt);
    let centering = spec.centering.unwrap_or(spec.kind.default_centering());
    let centers = if spec.n_sites == 1 {
        vec![Vector3::zeros()]
    } else {
        lattice_positions(spec.kind, spec.spacing, spec.n_sites, centering)
    };
    let sites = centers
        .into_iter()
        .map(|c| TrapSite::symmetric(c, axis, omega_z, species))
        .collect::<Result<Vec<_>, _>>()?;
    let dir = match b_direction {
        Some(d) => d.try_normalize(0.0).ok_or_else(|| invalid("b_direction", "zero vector"))?,
        None => axis,
    };
    ArrayConfig::new(species.clone(), dir * b0, spec.tilt, sites, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_PI: f64 = 2.0 * PI;

    #[test]
    fn cyclotron_examples() {
        let be = IonSpecies::beryllium9();
        assert!((bare_cyclotron(&be, 2.2) / TWO_PI / 3.75e6 - 1.0).abs() < 5e-3);
        assert!((bare_cyclotron(&be, 2.5) / TWO_PI / 4.27e6 - 1.0).abs() < 5e-3);
        assert_eq!(bare_cyclotron(&be, 0.0), 0.0);
    }

    #[test]
    fn single_site_limits() {
        let be = IonSpecies::beryllium9();
        let wc = bare_cyclotron(&be, 2.2);
        let f = single_site_frequencies(&be, 2.2, wc / 2.0).unwrap();
        let expect = f.omega_z * (2f64.sqrt() - 1.0) / 2f64.sqrt();
        assert!((f.omega_minus / expect - 1.0).abs() < 1e-12);
        let f = single_site_frequencies(&be, 2.2, 1e-6 * wc).unwrap();
        assert!((f.omega_plus / wc - 1.0).abs() < 1e-11);
        assert!(f.omega_minus / wc < 1e-11);
        assert!(single_site_frequencies(&be, 2.2, wc / 2f64.sqrt() * 1.0001).is_err());
    }

    #[test]
    fn dipolar_factors() {
        let be = IonSpecies::beryllium9();
        let f = single_site_frequencies(&be, 2.5, TWO_PI * 2.1e6).unwrap();
        let side = PairGeometry::from_vector(Vector3::new(15e-6, 0.0, 0.0), Vector3::z()).unwrap();
        let c = dipolar_coupling(&side, &f, &be).unwrap();
        assert!((c.k_z - 1.0).abs() < 1e-15 && (c.k_plus + 1.0).abs() < 1e-15);
        let along = PairGeometry::from_vector(Vector3::new(0.0, 0.0, 15e-6), Vector3::z()).unwrap();
        assert!((dipolar_coupling(&along, &f, &be).unwrap().k_z + 2.0).abs() < 1e-12);
        let magic = (1.0f64 / 3.0).sqrt().acos();
        let m = PairGeometry { separation: 15e-6, polar: magic, azimuth: 0.0 };
        let c = dipolar_coupling(&m, &f, &be).unwrap();
        assert!(c.k_z.abs() < 1e-12 && c.k_minus.abs() < 1e-12);
    }

    #[test]
    fn exchange_scaling() {
        let be = IonSpecies::beryllium9();
        let wz = TWO_PI * 2.1e6;
        let a = exchange_frequency(&be, ExchangeKind::Axial, wz, 0.0, 15e-6).unwrap();
        let b = exchange_frequency(&be, ExchangeKind::Axial, wz, 0.0, 30e-6).unwrap();
        assert!((a / b - 8.0).abs() < 1e-12);
        assert!(exchange_frequency(&be, ExchangeKind::Radial, wz, f64::NAN, 15e-6).is_err());
    }

    #[test]
    fn pseudopotential_examples() {
        assert!((pseudopotential_ratio(0.3) - 0.064_951_905).abs() < 1e-8);
        assert!((1.0 / pseudopotential_ratio(0.3) - 15.4).abs() < 0.05);
        assert_eq!(pseudopotential_ratio(0.0), 0.0);
    }

    #[test]
    fn curvature_round_trip() {
        let be = IonSpecies::beryllium9();
        let wz = curvature_to_axial_frequency(1e-4, 300.0, 30e-6, &be).unwrap();
        assert!((axial_frequency_to_curvature(wz, 300.0, 30e-6, &be) / 1e-4 - 1.0).abs() < 1e-12);
        let w4 = curvature_to_axial_frequency(4e-4, 300.0, 30e-6, &be).unwrap();
        assert!((w4 / wz - 2.0).abs() < 1e-12);
        let ratio = wz / (TWO_PI * 2.1e6);
        assert!(ratio > 0.5 && ratio < 2.0);
        // Direct evaluation of the Frobenius norm for this site.
        let site = TrapSite::symmetric(Vector3::zeros(), Vector3::z(), wz, &be).unwrap();
        let kappa = (site.tensor * 2.0).norm() * 30e-6 * 30e-6 / 300.0;
        assert!((kappa / 1e-4 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rf_power_examples() {
        let p = rf_power(4.0, 0.01e-12, 4.0, TWO_PI * 4.27e6).unwrap();
        assert!((p / 2.3e-12 - 1.0).abs() < 0.01);
        let p = rf_power(4.0, 0.01e-12, 100.0, TWO_PI * 163e6).unwrap();
        assert!((p / 2.1e-6 - 1.0).abs() < 0.03);
        assert_eq!(rf_power(4.0, 1e-14, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn site_tensor_traceless() {
        let be = IonSpecies::beryllium9();
        let s = TrapSite::symmetric(Vector3::zeros(), tilted_axis(0.35), TWO_PI * 2.1e6, &be).unwrap();
        assert!(s.tensor.trace().abs() <= 1e-12 * s.tensor.norm());
        assert!((s.tensor - s.tensor.transpose()).norm() == 0.0);
        // Curvature along the axis gives the requested frequency.
        let n = tilted_axis(0.35);
        let k = 2.0 * be.charge * (n.transpose() * s.tensor * n)[0];
        assert!((k / (be.mass * (TWO_PI * 2.1e6).powi(2)) - 1.0).abs() < 1e-12);
    }

    fn nearest_neighbor(points: &[Vector3<f64>]) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                best = best.min((points[i] - points[j]).norm());
            }
        }
        best
    }

    #[test]
    fn lattice_patches() {
        for kind in [LatticeKind::Square, LatticeKind::Triangular, LatticeKind::Honeycomb, LatticeKind::Kagome] {
            for c in [Centering::Site, Centering::Bond, Centering::Cell] {
                let pts = lattice_positions(kind, 15e-6, 40, c);
                assert_eq!(pts.len(), 40);
                assert!((nearest_neighbor(&pts) / 15e-6 - 1.0).abs() < 1e-12, "{kind:?} {c:?}");
            }
        }
        let hex = lattice_positions(LatticeKind::Honeycomb, 1.0, 6, Centering::Cell);
        for p in &hex {
            assert!((p.norm() - 1.0).abs() < 1e-12);
        }
        let sq = lattice_positions(LatticeKind::Square, 1.0, 2, Centering::Bond);
        assert!((sq[0] - Vector3::new(-0.5, 0.0, 0.0)).norm() < 1e-12);
        assert!((sq[1] - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn single_site_lattice_at_origin() {
        let be = IonSpecies::beryllium9();
        let spec = LatticeSpec { kind: LatticeKind::Square, spacing: 30e-6, n_sites: 1, tilt: 0.0, centering: None };
        let cfg = build_lattice(&spec, &be, 2.2, None, TWO_PI * 2.55e6, BTreeMap::new()).unwrap();
        assert_eq!(cfg.sites.len(), 1);
        assert_eq!(cfg.sites[0].center, Vector3::zeros());
    }

    #[test]
    fn override_index_checked() {
        let be = IonSpecies::beryllium9();
        let spec = LatticeSpec { kind: LatticeKind::Square, spacing: 30e-6, n_sites: 4, tilt: 0.0, centering: None };
        let mut ov = BTreeMap::new();
        ov.insert(7, 1.1);
        let err = build_lattice(&spec, &be, 2.2, None, TWO_PI * 2.55e6, ov).unwrap_err();
        assert_eq!(err, ModelError::BadOverrideIndex { index: 7, n_sites: 4 });
        assert!("hexagonal".parse::<LatticeKind>().is_err());
    }
}
