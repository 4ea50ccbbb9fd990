//! Physical parameter sets and closed-form derived quantities.
//!
//! Every rate inside [`PhysicalParams`] is an angular frequency in rad/s.
//! Use [`hz`] / [`to_hz`] to cross the boundary to ordinary frequency.

use core::f64::consts::PI;

use num_traits::Float;

use crate::{Error, Result};

/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Ordinary frequency (Hz) to angular rate (rad/s).
#[inline]
pub fn hz(f: f64) -> f64 {
    2.0 * PI * f
}

/// Angular rate (rad/s) to ordinary frequency (Hz).
#[inline]
pub fn to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}

fn check_rate(name: &'static str, v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::invalid(name, "must be finite"));
    }
    if v < 0.0 {
        return Err(Error::invalid(name, "must be non-negative"));
    }
    Ok(v)
}

/// The rate set defining one mean-field simulation instance.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PhysicalParams {
    gamma: f64,
    kappa: f64,
    g: f64,
    chi: f64,
    eta: f64,
    delta: f64,
    n_atoms: f64,
}

impl PhysicalParams {
    /// Builds a parameter set from angular rates (rad/s).
    ///
    /// `delta` is the cavity-atom detuning `omega_c - omega_a` and may have
    /// either sign; all other rates and `n_atoms` must be non-negative.
    pub fn new(
        gamma: f64,
        kappa: f64,
        g: f64,
        chi: f64,
        eta: f64,
        delta: f64,
        n_atoms: f64,
    ) -> Result<Self> {
        if !delta.is_finite() {
            return Err(Error::invalid("delta", "must be finite"));
        }
        Ok(Self {
            gamma: check_rate("gamma", gamma)?,
            kappa: check_rate("kappa", kappa)?,
            g: check_rate("g", g)?,
            chi: check_rate("chi", chi)?,
            eta: check_rate("eta", eta)?,
            delta,
            n_atoms: check_rate("n_atoms", n_atoms)?,
        })
    }

    /// Same as [`PhysicalParams::new`] with every rate given in Hz.
    pub fn from_hz(
        gamma: f64,
        kappa: f64,
        g: f64,
        chi: f64,
        eta: f64,
        delta: f64,
        n_atoms: f64,
    ) -> Result<Self> {
        Self::new(
            hz(gamma),
            hz(kappa),
            hz(g),
            hz(chi),
            hz(eta),
            hz(delta),
            n_atoms,
        )
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn g(&self) -> f64 {
        self.g
    }
    pub fn chi(&self) -> f64 {
        self.chi
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn n_atoms(&self) -> f64 {
        self.n_atoms
    }

    pub fn with_eta(self, eta: f64) -> Result<Self> {
        Ok(Self {
            eta: check_rate("eta", eta)?,
            ..self
        })
    }

    pub fn with_n_atoms(self, n_atoms: f64) -> Result<Self> {
        Ok(Self {
            n_atoms: check_rate("n_atoms", n_atoms)?,
            ..self
        })
    }

    pub fn with_g(self, g: f64) -> Result<Self> {
        Ok(Self {
            g: check_rate("g", g)?,
            ..self
        })
    }

    pub fn with_delta(self, delta: f64) -> Result<Self> {
        Self::new(
            self.gamma,
            self.kappa,
            self.g,
            self.chi,
            self.eta,
            delta,
            self.n_atoms,
        )
    }

    /// All rates multiplied by `factor`; the atom number is unchanged.
    pub fn scaled(self, factor: f64) -> Result<Self> {
        Self::new(
            self.gamma * factor,
            self.kappa * factor,
            self.g * factor,
            self.chi * factor,
            self.eta * factor,
            self.delta * factor,
            self.n_atoms,
        )
    }

    /// Largest rate in the set, including the collective coupling `g sqrt(N)`.
    pub fn rate_scale(&self) -> f64 {
        let collective = self.g * Float::sqrt(self.n_atoms.max(1.0));
        self.gamma
            .max(self.kappa)
            .max(self.chi)
            .max(self.eta)
            .max(self.delta.abs())
            .max(collective)
    }
}

/// Fabry-Perot cavity geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CavityGeometry {
    length_m: f64,
    r1: f64,
    r2: f64,
}

impl CavityGeometry {
    pub fn new(length_m: f64, r1: f64, r2: f64) -> Result<Self> {
        if !(length_m.is_finite() && length_m > 0.0) {
            return Err(Error::invalid("length_m", "must be positive and finite"));
        }
        for (name, r) in [("r1", r1), ("r2", r2)] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::invalid(name, "reflectivity must lie in (0, 1]"));
            }
        }
        Ok(Self { length_m, r1, r2 })
    }

    pub fn length_m(&self) -> f64 {
        self.length_m
    }
    pub fn r1(&self) -> f64 {
        self.r1
    }
    pub fn r2(&self) -> f64 {
        self.r2
    }

    /// Cavity finesse `pi (R1 R2)^{1/4} / (1 - sqrt(R1 R2))`.
    pub fn finesse(&self) -> f64 {
        let r = Float::sqrt(self.r1 * self.r2);
        PI * Float::sqrt(r) / (1.0 - r)
    }
}

/// Cold-cavity energy loss rate `-(c / 2L) ln(R1 R2)` in s^-1.
pub fn cold_cavity_loss(geom: &CavityGeometry) -> f64 {
    let loss = -(SPEED_OF_LIGHT / (2.0 * geom.length_m)) * Float::ln(geom.r1 * geom.r2);
    // ln(1) is exactly zero, but keep -0.0 out of reports
    loss.max(0.0)
}

/// Host material and excitation geometry used for the ion-count estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct MaterialParams {
    /// Host ion density, ions per cubic micrometre.
    pub host_density_um3: f64,
    /// Dopant fraction (dimensionless).
    pub doping_fraction: f64,
    /// Homogeneous linewidth, Hz.
    pub gamma_h_hz: f64,
    /// Inhomogeneous linewidth, Hz.
    pub gamma_inh_hz: f64,
    /// Excitation volume, cubic micrometres.
    pub excitation_volume_um3: f64,
    pub t1_s: Option<f64>,
    pub t2_s: Option<f64>,
    /// Transition dipole moment, C m.
    pub dipole_moment_cm: Option<f64>,
    pub finesse: Option<f64>,
    /// Resonant absorption cross section, m^2.
    pub cross_section_m2: Option<f64>,
    /// Effective beam area, m^2.
    pub beam_area_m2: Option<f64>,
}

impl MaterialParams {
    pub fn new(
        host_density_um3: f64,
        doping_fraction: f64,
        gamma_h_hz: f64,
        gamma_inh_hz: f64,
        excitation_volume_um3: f64,
    ) -> Result<Self> {
        let m = Self {
            host_density_um3,
            doping_fraction,
            gamma_h_hz,
            gamma_inh_hz,
            excitation_volume_um3,
            t1_s: None,
            t2_s: None,
            dipole_moment_cm: None,
            finesse: None,
            cross_section_m2: None,
            beam_area_m2: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let required = [
            ("host_density_um3", self.host_density_um3),
            ("doping_fraction", self.doping_fraction),
            ("gamma_h_hz", self.gamma_h_hz),
            ("gamma_inh_hz", self.gamma_inh_hz),
            ("excitation_volume_um3", self.excitation_volume_um3),
        ];
        for (name, v) in required {
            check_rate(name, v)?;
        }
        let optional = [
            ("t1_s", self.t1_s),
            ("t2_s", self.t2_s),
            ("dipole_moment_cm", self.dipole_moment_cm),
            ("finesse", self.finesse),
            ("cross_section_m2", self.cross_section_m2),
            ("beam_area_m2", self.beam_area_m2),
        ];
        for (name, v) in optional {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::invalid(name, "must be positive when present"));
                }
            }
        }
        if self.gamma_inh_hz > 0.0 && self.gamma_h_hz > self.gamma_inh_hz {
            return Err(Error::invalid(
                "gamma_h_hz",
                "homogeneous linewidth exceeds the inhomogeneous linewidth",
            ));
        }
        Ok(())
    }

    /// Single-atom cooperativity `F sigma_0 / A`, when all three are known.
    pub fn cooperativity(&self) -> Option<f64> {
        Some(self.finesse? * self.cross_section_m2? / self.beam_area_m2?)
    }
}

/// Volume of a cylindrical excitation region in cubic micrometres.
pub fn cylinder_volume_um3(radius_um: f64, length_um: f64) -> f64 {
    PI * radius_um * radius_um * length_um
}

/// Number of ions inside one homogeneous frequency channel of the excitation
/// volume: `D_h C_d (Gamma_h / Gamma_inh) V_ex`.
pub fn ion_number_estimate(mat: &MaterialParams) -> f64 {
    if mat.gamma_h_hz == 0.0 {
        return 0.0;
    }
    mat.host_density_um3
        * mat.doping_fraction
        * (mat.gamma_h_hz / mat.gamma_inh_hz)
        * mat.excitation_volume_um3
}

/// Cavity-QED figures of merit derived from a [`PhysicalParams`].
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct DerivedQuantities {
    /// Single-atom cooperativity `g^2 / (gamma kappa)`.
    pub c1: f64,
    /// Cavity-QED critical atom number `gamma kappa / g^2`.
    pub n_c: f64,
    /// Saturation photon number `gamma^2 / g^2`.
    pub m_c: f64,
    /// Superradiance threshold atom number `2 chi / (C1 gamma)`.
    pub n_crit: f64,
    /// Group refractive index `(2 gamma + kappa) / (2 gamma)`.
    pub group_index: f64,
    /// Frequency pulling coefficient `1 / n_g`.
    pub pulling: f64,
    /// Collective decay rate `N C1 gamma`, rad/s.
    pub collective_rate: f64,
}

/// Computes the [`DerivedQuantities`] of a parameter set.
///
/// `gamma` and `kappa` must be positive. With `g = 0` the cooperativity is
/// zero and `n_c`, `m_c` and `n_crit` are `+inf`; with `chi = 0` and a
/// non-zero cooperativity `n_crit` is zero.
pub fn derive(p: &PhysicalParams) -> Result<DerivedQuantities> {
    if p.gamma <= 0.0 {
        return Err(Error::DegenerateRate("gamma"));
    }
    if p.kappa <= 0.0 {
        return Err(Error::DegenerateRate("kappa"));
    }
    let g2 = p.g * p.g;
    let c1 = g2 / (p.gamma * p.kappa);
    let (n_c, m_c) = if g2 > 0.0 {
        (p.gamma * p.kappa / g2, p.gamma * p.gamma / g2)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let group_index = group_index(p.gamma, p.kappa)?;
    Ok(DerivedQuantities {
        c1,
        n_c,
        m_c,
        n_crit: critical_atom_number(c1, p.gamma, p.chi),
        group_index,
        pulling: 1.0 / group_index,
        collective_rate: p.n_atoms * c1 * p.gamma,
    })
}

/// `2 chi / (C1 gamma)`; `+inf` when `C1 gamma = 0`, otherwise `0` for `chi = 0`.
pub fn critical_atom_number(c1: f64, gamma: f64, chi: f64) -> f64 {
    let denom = c1 * gamma;
    if denom == 0.0 {
        f64::INFINITY
    } else if chi == 0.0 {
        0.0
    } else {
        2.0 * chi / denom
    }
}

/// Group refractive index `(2 gamma + kappa) / (2 gamma)`.
pub fn group_index(gamma: f64, kappa: f64) -> Result<f64> {
    if gamma <= 0.0 {
        return Err(Error::DegenerateRate("gamma"));
    }
    Ok((2.0 * gamma + kappa) / (2.0 * gamma))
}

/// Quantum-limited good-cavity linewidth `h nu kappa^2 / (4 pi P_out)` in Hz.
///
/// `kappa` is an angular rate; `p_out_w` is the power leaving the cavity.
pub fn linewidth_schawlow_townes(nu_hz: f64, kappa: f64, p_out_w: f64) -> Result<f64> {
    if !(p_out_w > 0.0) {
        return Err(Error::NonPositivePower(p_out_w));
    }
    Ok(PLANCK * nu_hz * kappa * kappa / (4.0 * PI * p_out_w))
}

/// Bad-cavity linewidth of a homogeneously broadened laser, Hz.
///
/// The cold-cavity loss is dressed by the group index, `kappa / n_g`, the
/// result is multiplied by the spontaneous emission factor
/// `N_e / (N_e - N_g)` and by the detuning bracket
/// `1 + [2 pi (nu - nu0) / (gamma + kappa / 2)]^2`. Rates are angular and
/// `p_out_w` is the output power, as in [`linewidth_schawlow_townes`].
#[allow(clippy::too_many_arguments)]
pub fn linewidth_bad_cavity_haken(
    nu_hz: f64,
    nu0_hz: f64,
    kappa: f64,
    gamma: f64,
    p_out_w: f64,
    n_excited: f64,
    n_ground: f64,
) -> Result<f64> {
    if !(p_out_w > 0.0) {
        return Err(Error::NonPositivePower(p_out_w));
    }
    if !(n_excited > n_ground) {
        return Err(Error::NoInversion {
            excited: n_excited,
            ground: n_ground,
        });
    }
    let dressed = kappa / group_index(gamma, kappa)?;
    let n_sp = n_excited / (n_excited - n_ground);
    let detuning = 2.0 * PI * (nu_hz - nu0_hz) / (gamma + 0.5 * kappa);
    Ok(PLANCK * nu_hz * dressed * dressed / (4.0 * PI * p_out_w)
        * n_sp
        * (1.0 + detuning * detuning))
}

/// Bad-cavity linewidth in terms of the photon number, `gamma^2 / (pi kappa M)`.
///
/// Homogeneous of degree one in the rates: the result carries the unit the
/// rates are given in.
pub fn linewidth_bad_cavity_photon(gamma: f64, kappa: f64, photons: f64) -> f64 {
    gamma * gamma / (kappa * PI * photons)
}

/// Bad-cavity linewidth in terms of the single-atom cooperativity,
/// `C1 gamma / pi`, in the unit of `gamma`.
pub fn linewidth_cooperativity(c1: f64, gamma: f64) -> f64 {
    c1 * gamma / PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fig2() -> PhysicalParams {
        PhysicalParams::from_hz(1e5, 1e8, 1.4e3, 1e7, 1e6, 0.0, 1e10).unwrap()
    }

    #[test]
    fn construction_rejects_bad_values() {
        assert!(PhysicalParams::new(f64::NAN, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(PhysicalParams::new(1.0, f64::INFINITY, 1.0, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, -1.0, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, 1.0, 0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, 1.0, 0.0, 0.0, -3.0, -1.0).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, 1.0, 0.0, 0.0, -3.0, 0.0).is_ok());
    }

    #[test]
    fn lossless_mirrors() {
        let geom = CavityGeometry::new(1e-3, 1.0, 1.0).unwrap();
        assert_eq!(cold_cavity_loss(&geom), 0.0);
    }

    #[test]
    fn cold_cavity_loss_value_and_scaling() {
        let geom = CavityGeometry::new(1e-3, 0.99, 0.99).unwrap();
        // 40-digit reference: -(c / 2L) ln(0.99^2)
        assert_relative_eq!(cold_cavity_loss(&geom), 3.013_014_889_246_725e9, max_relative = 1e-12);
        let doubled = CavityGeometry::new(2e-3, 0.99, 0.99).unwrap();
        assert_eq!(cold_cavity_loss(&doubled), 0.5 * cold_cavity_loss(&geom));
        assert!(CavityGeometry::new(0.0, 0.9, 0.9).is_err());
        assert!(CavityGeometry::new(1.0, 0.0, 0.9).is_err());
        assert!(CavityGeometry::new(1.0, 0.9, 1.01).is_err());
    }

    #[test]
    fn fig2_cooperativity_and_threshold() {
        let d = derive(&fig2()).unwrap();
        assert_relative_eq!(d.c1, 1.96e-7, max_relative = 1e-12);
        assert_relative_eq!(d.n_crit, 2.0e7 / 1.96e-2, max_relative = 1e-12);
        assert!((d.n_crit / 1.02e9 - 1.0).abs() < 0.01);
    }

    #[test]
    fn equal_rates() {
        let p = PhysicalParams::new(3.0, 3.0, 3.0, 0.0, 0.0, 0.0, 1.0).unwrap();
        let d = derive(&p).unwrap();
        assert_eq!((d.c1, d.n_c, d.m_c), (1.0, 1.0, 1.0));
    }

    #[test]
    fn degenerate_rates() {
        let p = PhysicalParams::new(0.0, 3.0, 3.0, 0.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(derive(&p), Err(Error::DegenerateRate("gamma")));
        let p = PhysicalParams::new(1.0, 0.0, 3.0, 0.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(derive(&p), Err(Error::DegenerateRate("kappa")));
        let p = PhysicalParams::new(1.0, 2.0, 0.0, 5.0, 0.0, 0.0, 1.0).unwrap();
        let d = derive(&p).unwrap();
        assert_eq!(d.c1, 0.0);
        assert!(d.n_crit.is_infinite());
        let p = PhysicalParams::new(1.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(derive(&p).unwrap().n_crit, 0.0);
    }

    #[test]
    fn group_index_limits() {
        assert_eq!(group_index(2.0, 0.0).unwrap(), 1.0);
        assert_eq!(group_index(2.0, 4.0).unwrap(), 2.0);
        assert!(group_index(0.0, 1.0).is_err());
        for ratio in [200.0, 1e3, 1e5] {
            let ng = group_index(1.0, ratio).unwrap();
            assert!((ratio / 2.0 - ng).abs() / ng < 0.01);
        }
    }

    #[test]
    fn schawlow_townes_scaling_and_photon_form() {
        let nu = 2e14;
        let kappa = 1e6;
        let m_c = 37.0;
        let p_out = m_c * PLANCK * nu * kappa;
        let dv = linewidth_schawlow_townes(nu, kappa, p_out).unwrap();
        assert_relative_eq!(dv, kappa / (4.0 * PI * m_c), max_relative = 1e-14);
        let half = linewidth_schawlow_townes(nu, kappa, 2.0 * p_out).unwrap();
        assert_relative_eq!(half, 0.5 * dv, max_relative = 1e-15);
        assert_eq!(
            linewidth_schawlow_townes(nu, kappa, 0.0),
            Err(Error::NonPositivePower(0.0))
        );
    }

    #[test]
    fn schawlow_townes_reference_value() {
        // h * 2e14 * 1e12 / (4 pi 1e-6), evaluated with 30-digit arithmetic:
        // 6.62607015e-34 * 2e26 / 1.25663706143591729538505735331e-5
        let dv = linewidth_schawlow_townes(2e14, 1e6, 1e-6).unwrap();
        assert_relative_eq!(dv, 1.054_571_817_646_156e-2, max_relative = 1e-12);
    }

    #[test]
    fn haken_detuning_bracket_and_inversion() {
        let (gamma, kappa) = (1e5, 3e5);
        let on = linewidth_bad_cavity_haken(1e14, 1e14, kappa, gamma, 1e-3, 1.0, 0.0).unwrap();
        let offset = (gamma + 0.5 * kappa) / (2.0 * PI);
        let nu = 1e14 + offset;
        let off = linewidth_bad_cavity_haken(nu, 1e14, kappa, gamma, 1e-3, 1.0, 0.0).unwrap();
        // the offset is rounded to the ulp of 1e14; compare with the represented one
        let x = 2.0 * PI * (nu - 1e14) / (gamma + 0.5 * kappa);
        assert_relative_eq!(off / on, (1.0 + x * x) * nu / 1e14, max_relative = 1e-12);
        assert_relative_eq!(off / on, 2.0, max_relative = 1e-6);
        assert!(matches!(
            linewidth_bad_cavity_haken(1e14, 1e14, kappa, gamma, 1e-3, 0.5, 0.5),
            Err(Error::NoInversion { .. })
        ));
        let half_inverted =
            linewidth_bad_cavity_haken(1e14, 1e14, kappa, gamma, 1e-3, 0.75, 0.25).unwrap();
        assert_relative_eq!(half_inverted, 1.5 * on, max_relative = 1e-14);
    }

    #[test]
    fn cooperativity_linewidth_values() {
        assert_relative_eq!(
            linewidth_cooperativity(1.96e-7, 1e5),
            6.238_873_769_202_297e-3,
            max_relative = 1e-12
        );
        assert_eq!(linewidth_cooperativity(0.0, 1e5), 0.0);
        let gamma = 2.0 * PI / (2.0 * 9.5e-3);
        let dv = linewidth_cooperativity(1e-8, gamma);
        assert!(dv > 0.0 && dv < 1e-3 && dv.is_finite());
    }

    #[test]
    fn photon_linewidth_scaling() {
        assert_relative_eq!(linewidth_bad_cavity_photon(7.0, 7.0, 1.0), 7.0 / PI);
        assert_relative_eq!(
            linewidth_bad_cavity_photon(7.0, 3.0, 10.0),
            2.0 * linewidth_bad_cavity_photon(7.0, 3.0, 20.0)
        );
    }

    #[test]
    fn ion_number() {
        let mut m = MaterialParams::new(3e10, 1.0, 16e6, 16e6, 2.0).unwrap();
        assert_eq!(ion_number_estimate(&m), 6e10);
        m.gamma_h_hz = 0.0;
        assert_eq!(ion_number_estimate(&m), 0.0);
        let m = MaterialParams::new(0.0, 1.0, 1e3, 16e6, 2.0).unwrap();
        assert_eq!(ion_number_estimate(&m), 0.0);
        assert!(MaterialParams::new(1.0, 1.0, 2e6, 1e6, 1.0).is_err());
    }

    #[test]
    fn er_liyf_ion_count() {
        // 100 um beam radius over a 1 mm crystal
        let v = cylinder_volume_um3(100.0, 1000.0);
        let m = MaterialParams::new(3e10, 5e-5, 1e3, 16e6, v).unwrap();
        let n = ion_number_estimate(&m);
        assert_relative_eq!(n, 3e10 * 5e-5 * (1e3 / 16e6) * v, max_relative = 1e-15);
        assert!(n > 1e8 && n < 1e11);
    }

    #[test]
    fn material_cooperativity() {
        let mut m = MaterialParams::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(m.cooperativity(), None);
        m.finesse = Some(1e4);
        m.cross_section_m2 = Some(2e-20);
        m.beam_area_m2 = Some(PI * 1e-8);
        assert_relative_eq!(m.cooperativity().unwrap(), 2e-16 / (PI * 1e-8));
    }
}
