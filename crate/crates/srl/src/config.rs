//! Run configuration: TOML files, shipped presets and `--set` overrides.
//!
//! Frequencies are ordinary Hz unless the key carries the `_angular` suffix,
//! in which case the value is taken in rad/s. A preset is loaded first, the
//! user file is merged over it and `--set key=value` overrides win last.

use std::path::Path;

use serde::{Deserialize, Serialize};
use srl_core::dicke::{MeSteadyMethod, DEFAULT_MEMORY_CAP};
use srl_core::meanfield::{Integrator, SteadyMethod, SteadyOptions};
use srl_core::model::{self, hz, MaterialParams};
use srl_core::spectrum::{SpectrumOptions, Window};
use srl_core::sweep::{Axis, CellOptions, GridSpec, Quantity, DEFAULT_CELL_BUDGET};
use srl_core::{MeanFieldState, PhysicalParams, C64};
use toml::Table;

use crate::CliError;

/// Presets shipped with the crate, loadable by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig2", include_str!("../presets/fig2.toml")),
    ("fig_s1", include_str!("../presets/fig_s1.toml")),
    ("pr_yso_fig_s3", include_str!("../presets/pr_yso_fig_s3.toml")),
    ("er_liyf", include_str!("../presets/er_liyf.toml")),
    ("lossless", include_str!("../presets/lossless.toml")),
];

pub fn preset_source(name: &str) -> Result<&'static str, CliError> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| {
            let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            CliError::Config(format!("unknown preset `{name}` (known: {})", known.join(", ")))
        })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub params: ParamsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<MaterialConfig>,
    #[serde(default)]
    pub derive: DeriveConfig,
    #[serde(default)]
    pub steady: SteadyConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

/// Rates in Hz, or in rad/s under the `_angular` keys. Each rate may be
/// given in only one of the two forms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_angular: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_angular: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_angular: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi_angular: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_angular: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_angular: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_atoms: Option<f64>,
}

const RATE_KEYS: [&str; 6] = ["gamma", "kappa", "g", "chi", "eta", "delta"];

fn rate(name: &str, ordinary: Option<f64>, angular: Option<f64>, default: Option<f64>) -> Result<f64, CliError> {
    match (ordinary, angular) {
        (Some(_), Some(_)) => Err(CliError::Config(format!(
            "params.{name} and params.{name}_angular are both set"
        ))),
        (Some(f), None) => Ok(hz(f)),
        (None, Some(w)) => Ok(w),
        (None, None) => default.ok_or_else(|| CliError::Config(format!("params.{name} is required"))),
    }
}

impl ParamsConfig {
    /// Angular-rate parameter set.
    pub fn resolve(&self) -> Result<PhysicalParams, CliError> {
        let p = PhysicalParams::new(
            rate("gamma", self.gamma, self.gamma_angular, None)?,
            rate("kappa", self.kappa, self.kappa_angular, None)?,
            rate("g", self.g, self.g_angular, None)?,
            rate("chi", self.chi, self.chi_angular, Some(0.0))?,
            rate("eta", self.eta, self.eta_angular, Some(0.0))?,
            rate("delta", self.delta, self.delta_angular, Some(0.0))?,
            self.n_atoms.ok_or_else(|| CliError::Config("params.n_atoms is required".into()))?,
        )?;
        Ok(p)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    /// Host ion density, ions per cubic micrometre.
    pub host_density_um3: f64,
    pub doping_fraction: f64,
    pub gamma_h_hz: f64,
    pub gamma_inh_hz: f64,
    /// Excitation volume; alternatively `beam_radius_um` and `length_um`
    /// describe a cylinder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitation_volume_um3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_radius_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_nm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dipole_moment_cm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finesse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_section_m2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_area_m2: Option<f64>,
}

impl MaterialConfig {
    pub fn excitation_volume(&self) -> Result<f64, CliError> {
        match (self.excitation_volume_um3, self.beam_radius_um, self.length_um) {
            (Some(v), None, None) => Ok(v),
            (None, Some(r), Some(l)) => Ok(model::cylinder_volume_um3(r, l)),
            _ => Err(CliError::Config(
                "material needs either excitation_volume_um3 or beam_radius_um with length_um".into(),
            )),
        }
    }

    pub fn resolve(&self) -> Result<MaterialParams, CliError> {
        let mut m = MaterialParams::new(
            self.host_density_um3,
            self.doping_fraction,
            self.gamma_h_hz,
            self.gamma_inh_hz,
            self.excitation_volume()?,
        )?;
        m.t1_s = self.t1_s;
        m.t2_s = self.t2_s;
        m.dipole_moment_cm = self.dipole_moment_cm;
        m.finesse = self.finesse;
        m.cross_section_m2 = self.cross_section_m2;
        m.beam_area_m2 = self.beam_area_m2;
        m.validate()?;
        Ok(m)
    }
}

/// Inputs of the closed-form linewidths that the rate set does not fix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeriveConfig {
    /// Laser frequency, Hz. Taken from the material wavelength when absent.
    pub nu_hz: Option<f64>,
    /// Output power; `M_c h nu kappa` when absent.
    pub p_out_w: Option<f64>,
    /// Gain-line centre, Hz; equal to `nu_hz` when absent.
    pub nu0_hz: Option<f64>,
    pub n_excited: f64,
    pub n_ground: f64,
}

impl Default for DeriveConfig {
    fn default() -> Self {
        Self {
            nu_hz: None,
            p_out_w: None,
            nu0_hz: None,
            n_excited: 1.0,
            n_ground: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialState {
    pub n_photon: f64,
    pub coherence_re: f64,
    pub coherence_im: f64,
    pub inversion: f64,
    pub spin_corr_re: f64,
    pub spin_corr_im: f64,
}

impl InitialState {
    pub fn state(&self) -> MeanFieldState {
        MeanFieldState {
            n_photon: self.n_photon,
            coherence: C64::new(self.coherence_re, self.coherence_im),
            inversion: self.inversion,
            spin_corr: C64::new(self.spin_corr_re, self.spin_corr_im),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteadyConfig {
    pub method: SteadyMethod,
    pub tol: f64,
    pub residual_tol: f64,
    pub max_steps: usize,
    pub initial: InitialState,
}

impl Default for SteadyConfig {
    fn default() -> Self {
        let d = SteadyOptions::default();
        Self {
            method: d.method,
            tol: d.tol,
            residual_tol: d.residual_tol,
            max_steps: d.max_steps,
            initial: InitialState::default(),
        }
    }
}

impl SteadyConfig {
    pub fn options(&self) -> SteadyOptions {
        SteadyOptions {
            method: self.method,
            initial: self.initial.state(),
            tol: self.tol,
            residual_tol: self.residual_tol,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    /// Integration horizon, seconds.
    pub t_end: f64,
    /// Number of evenly spaced output samples including `t = 0`.
    pub samples: usize,
    pub tol: f64,
    pub max_steps: usize,
    pub integrator: Integrator,
    /// Write interval means instead of point samples.
    pub average: bool,
    /// Sub-samples per output interval when averaging.
    pub substeps: usize,
    /// Pump rates to scan, Hz. Empty means the single `params` rate.
    pub eta_scan_hz: Vec<f64>,
    /// `sigma_z` counts as settled once it stays within this distance of
    /// its steady value.
    pub plateau_tol: f64,
    pub initial: InitialState,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            t_end: 1e-3,
            samples: 1001,
            tol: 1e-8,
            max_steps: 2_000_000,
            integrator: Integrator::Stiff,
            average: false,
            substeps: 64,
            eta_scan_hz: Vec::new(),
            plateau_tol: 1e-3,
            initial: InitialState::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub t_max: Option<f64>,
    pub dt: Option<f64>,
    pub pad_factor: usize,
    pub window: Window,
    pub resolution: f64,
    pub decay: f64,
    pub max_samples: usize,
    /// The literal grid of the published spectrum: 100 MHz sampling for 1 s.
    pub faithful_fig3: bool,
}

/// Sampling step and horizon of the faithful Fig. 3 grid.
pub const FIG3_DT: f64 = 1e-8;
pub const FIG3_T_MAX: f64 = 1.0;

impl Default for SpectrumConfig {
    fn default() -> Self {
        let d = SpectrumOptions::default();
        Self {
            t_max: d.t_max,
            dt: d.dt,
            pad_factor: d.pad_factor,
            window: d.window,
            resolution: d.resolution,
            decay: d.decay,
            max_samples: d.max_samples,
            faithful_fig3: false,
        }
    }
}

impl SpectrumConfig {
    pub fn options(&self) -> SpectrumOptions {
        if self.faithful_fig3 {
            return SpectrumOptions {
                t_max: Some(FIG3_T_MAX),
                dt: Some(FIG3_DT),
                pad_factor: 1,
                window: Window::ExponentialTail,
                resolution: self.resolution,
                decay: self.decay,
                max_samples: (FIG3_T_MAX / FIG3_DT) as usize + 2,
            };
        }
        SpectrumOptions {
            t_max: self.t_max,
            dt: self.dt,
            pad_factor: self.pad_factor,
            window: self.window,
            resolution: self.resolution,
            decay: self.decay,
            max_samples: self.max_samples,
        }
    }

    /// Samples of the correlation trace when the grid is fixed.
    pub fn fixed_samples(&self) -> Option<usize> {
        let o = self.options();
        Some((o.t_max? / o.dt?).ceil() as usize + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub n_axis: Axis,
    pub eta_axis_hz: Axis,
    pub quantity: Quantity,
    pub cell_budget: usize,
    /// Per-cell wall-clock limit, seconds.
    pub timeout_s: f64,
    pub svg: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_axis: Axis::log(60, 1e6, 1e12),
            eta_axis_hz: Axis::log(60, 1e3, 1e9),
            quantity: Quantity::Photon,
            cell_budget: DEFAULT_CELL_BUDGET,
            timeout_s: 30.0,
            svg: true,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            n_axis: self.n_axis,
            eta_axis_hz: self.eta_axis_hz,
            quantity: self.quantity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub n_list: Vec<usize>,
    /// Pump rates, Hz. Empty means 8 log-spaced points over `[gamma, 10 kappa]`.
    pub eta_list_hz: Vec<f64>,
    /// Fixed Fock truncation; chosen from the mean-field photon number when
    /// absent.
    pub n_fock: Option<usize>,
    pub n_fock_cap: usize,
    pub memory_cap: usize,
    pub method: MeSteadyMethod,
    /// Horizon of the optional evolution from the fully excited state, seconds.
    pub evolve_t_end: Option<f64>,
    pub evolve_samples: usize,
    pub tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_list: vec![4, 6, 8, 10],
            eta_list_hz: Vec::new(),
            n_fock: None,
            n_fock_cap: 16,
            memory_cap: DEFAULT_MEMORY_CAP,
            method: MeSteadyMethod::Direct,
            evolve_t_end: None,
            evolve_samples: 201,
            tol: 1e-8,
        }
    }
}

impl OracleConfig {
    /// Pump rates in Hz.
    pub fn eta_values_hz(&self, p: &PhysicalParams) -> Vec<f64> {
        if !self.eta_list_hz.is_empty() {
            return self.eta_list_hz.clone();
        }
        Axis::log(8, model::to_hz(p.gamma()), 10.0 * model::to_hz(p.kappa())).values()
    }
}

impl RunConfig {
    pub fn physical(&self) -> Result<PhysicalParams, CliError> {
        self.params.resolve()
    }

    pub fn cell_options(&self) -> CellOptions {
        CellOptions {
            steady: self.steady.options(),
            spectrum: self.spectrum.options(),
        }
    }

    /// Checks every section so that bad input fails before computation.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = self.physical()?;
        if let Some(m) = &self.material {
            m.resolve()?;
        }
        let st = &self.steady;
        if !(st.tol > 1e-14 && st.tol < 1e-2) {
            return Err(CliError::Config("steady.tol must lie in (1e-14, 1e-2)".into()));
        }
        if !(st.residual_tol > 0.0) || st.max_steps == 0 {
            return Err(CliError::Config("steady.residual_tol and steady.max_steps must be positive".into()));
        }
        let dy = &self.dynamics;
        if !(dy.t_end > 0.0 && dy.t_end.is_finite()) || dy.samples < 2 {
            return Err(CliError::Config("dynamics.t_end must be positive and dynamics.samples at least 2".into()));
        }
        if !(dy.tol > 1e-14 && dy.tol < 1e-2) {
            return Err(CliError::Config("dynamics.tol must lie in (1e-14, 1e-2)".into()));
        }
        if dy.eta_scan_hz.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(CliError::Config("dynamics.eta_scan_hz entries must be non-negative".into()));
        }
        let sp = &self.spectrum;
        if sp.pad_factor == 0 || !(sp.resolution > 0.0) || !(sp.decay > 0.0 && sp.decay < 1.0) {
            return Err(CliError::Config(
                "spectrum.pad_factor, spectrum.resolution must be positive and spectrum.decay in (0, 1)".into(),
            ));
        }
        for (name, v) in [("spectrum.t_max", sp.t_max), ("spectrum.dt", sp.dt)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(CliError::Config(format!("{name} must be positive")));
                }
            }
        }
        let sw = &self.sweep;
        sw.n_axis.validate("sweep.n_axis")?;
        sw.eta_axis_hz.validate("sweep.eta_axis_hz")?;
        if !(sw.timeout_s > 0.0) {
            return Err(CliError::Config("sweep.timeout_s must be positive".into()));
        }
        let or = &self.oracle;
        if or.n_list.is_empty() || or.n_list.contains(&0) {
            return Err(CliError::Config("oracle.n_list needs at least one positive atom number".into()));
        }
        if or.n_fock.is_some_and(|n| n < 2) || or.n_fock_cap < 2 {
            return Err(CliError::Config("oracle Fock truncation must be at least 2".into()));
        }
        if or.eta_values_hz(&p).iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(CliError::Config("oracle pump rates must be non-negative".into()));
        }
        Ok(())
    }
}

/// Merges `over` into `base`; nested tables merge, other values replace.
/// Setting a rate in one unit removes its twin from `base` so that a file
/// can switch a preset value between Hz and rad/s.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        if let Some(stem) = k.strip_suffix("_angular") {
            if RATE_KEYS.contains(&stem) {
                base.remove(stem);
            }
        } else if RATE_KEYS.contains(&k.as_str()) {
            base.remove(&format!("{k}_angular"));
        }
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_table(src: &str, origin: &str) -> Result<Table, CliError> {
    src.parse::<Table>()
        .map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

/// Applies one `dotted.key=value` override. The value is read as TOML and
/// falls back to a plain string.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let value: toml::Value = match format!("v = {}", raw.trim()).parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().filter(|s| !s.is_empty());
    let Some(leaf) = leaf else {
        return Err(CliError::Config(format!("override `{assignment}` has an empty key")));
    };
    let mut nested = Table::new();
    nested.insert(leaf.to_string(), value);
    for part in parts.into_iter().rev() {
        let mut outer = Table::new();
        outer.insert(part.to_string(), toml::Value::Table(nested));
        nested = outer;
    }
    merge(table, nested);
    Ok(())
}

/// Where a configuration comes from.
#[derive(Clone, Debug, Default)]
pub struct ConfigSource<'a> {
    pub preset: Option<&'a str>,
    pub file: Option<&'a Path>,
    pub overrides: &'a [String],
}

/// Builds and validates the run configuration.
pub fn load(src: &ConfigSource) -> Result<RunConfig, CliError> {
    let file_table = match src.file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Some(parse_table(&text, &path.display().to_string())?)
        }
        None => None,
    };
    let preset = src.preset.map(str::to_string).or_else(|| {
        file_table
            .as_ref()
            .and_then(|t| t.get("preset"))
            .and_then(|v| v.as_str())
            .map(str::to_string)
    });
    let mut table = match &preset {
        Some(name) => parse_table(preset_source(name)?, &format!("preset {name}"))?,
        None => Table::new(),
    };
    if let Some(t) = file_table {
        merge(&mut table, t);
    }
    for o in src.overrides {
        apply_override(&mut table, o)?;
    }
    if let Some(name) = preset {
        table.insert("preset".into(), toml::Value::String(name));
    }
    if !table.contains_key("params") {
        return Err(CliError::Config("no [params] given; pass --config or --preset".into()));
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
