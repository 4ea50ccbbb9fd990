//! Per-cell evaluation of `(N, eta)` maps, overlay curves and grid analysis.
//!
//! Scheduling, timeouts and file output live in the `srl` crate; everything
//! here is a pure function of its inputs, so a cell computed alone matches the
//! same cell computed inside any sweep.

use alloc::collections::VecDeque;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::meanfield::{self, SteadyOptions};
use crate::model::{self, hz, to_hz};
use crate::spectrum::{self, SpectrumOptions};
use crate::{Error, PhysicalParams, Result, Watchdog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Spacing {
    #[default]
    Log,
    Linear,
}

/// A sampled axis, ascending.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Axis {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub spacing: Spacing,
}

impl Axis {
    pub fn log(count: usize, min: f64, max: f64) -> Self {
        Self {
            count,
            min,
            max,
            spacing: Spacing::Log,
        }
    }

    pub fn linear(count: usize, min: f64, max: f64) -> Self {
        Self {
            count,
            min,
            max,
            spacing: Spacing::Linear,
        }
    }

    pub fn validate(&self, name: &'static str) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid(name, "axis needs at least one point"));
        }
        if !(self.min.is_finite() && self.max.is_finite()) || self.min < 0.0 {
            return Err(Error::invalid(name, "bounds must be finite and non-negative"));
        }
        if self.spacing == Spacing::Log && self.min <= 0.0 {
            return Err(Error::invalid(name, "log axis needs a positive minimum"));
        }
        if self.count > 1 && self.max <= self.min {
            return Err(Error::invalid(name, "max must exceed min"));
        }
        if self.count == 1 && self.max != self.min {
            return Err(Error::invalid(name, "a single-point axis needs min == max"));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|k| {
                if k == 0 {
                    return self.min;
                }
                if k + 1 == self.count {
                    return self.max;
                }
                let u = k as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.min + u * (self.max - self.min),
                    Spacing::Log => {
                        let (a, b) = (Float::ln(self.min), Float::ln(self.max));
                        Float::exp(a + u * (b - a))
                    }
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Quantity {
    /// Steady photon number only.
    #[default]
    Photon,
    /// Photon number and the fitted linewidth.
    Linewidth,
}

/// The grid of a sweep: atom numbers by pump rates (Hz).
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub n_axis: Axis,
    pub eta_axis_hz: Axis,
    pub quantity: Quantity,
}

/// Default upper bound on the number of cells in one sweep.
pub const DEFAULT_CELL_BUDGET: usize = 250_000;

impl GridSpec {
    pub fn cells(&self) -> usize {
        self.n_axis.count.saturating_mul(self.eta_axis_hz.count)
    }

    pub fn validate(&self, budget: usize) -> Result<()> {
        self.n_axis.validate("n_axis")?;
        self.eta_axis_hz.validate("eta_axis")?;
        if self.cells() > budget {
            return Err(Error::Budget {
                cells: self.cells(),
                budget,
            });
        }
        Ok(())
    }

    /// `(i, j)` of the flat cell index; `i` runs over atom numbers.
    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.eta_axis_hz.count, index % self.eta_axis_hz.count)
    }
}

/// Photon numbers below this are treated as dark: no spectrum is fitted.
pub const DARK_PHOTONS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum CellStatus {
    Ok,
    /// The steady state is a root of the equations with a growing mode; the
    /// dynamics spike or settle on a limit cycle.
    Unstable,
    NoConvergence,
    FitFailed,
    /// Dark cell, no linewidth.
    FitSkipped,
    Timeout,
    Failed,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Unstable => "unstable",
            CellStatus::NoConvergence => "no-convergence",
            CellStatus::FitFailed => "fit-failed",
            CellStatus::FitSkipped => "fit-skipped",
            CellStatus::Timeout => "timeout",
            CellStatus::Failed => "failed",
        }
    }

    pub fn is_skipped(self) -> bool {
        self == CellStatus::FitSkipped
    }

    pub fn is_failed(self) -> bool {
        !matches!(self, CellStatus::Ok | CellStatus::FitSkipped)
    }
}

/// Result of one grid cell.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellRecord {
    pub i: usize,
    pub j: usize,
    pub n_atoms: f64,
    pub eta_hz: f64,
    pub status: CellStatus,
    pub n_photon: Option<f64>,
    pub inversion: Option<f64>,
    /// Largest real part of the mean-field Jacobian at the root, rad/s.
    pub growth_rate: Option<f64>,
    pub fwhm_hz: Option<f64>,
    /// The regression used the probe seed of a dark steady state.
    pub probe_seed: bool,
    pub message: Option<String>,
}

impl CellRecord {
    fn new(i: usize, j: usize, n_atoms: f64, eta_hz: f64) -> Self {
        Self {
            i,
            j,
            n_atoms,
            eta_hz,
            status: CellStatus::Ok,
            n_photon: None,
            inversion: None,
            growth_rate: None,
            fwhm_hz: None,
            probe_seed: false,
            message: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct CellOptions {
    pub steady: SteadyOptions,
    pub spectrum: SpectrumOptions,
}

fn status_of(e: &Error) -> CellStatus {
    match e {
        Error::Interrupted { .. } => CellStatus::Timeout,
        Error::NoConvergence { .. } | Error::StepBudget { .. } | Error::StepSizeUnderflow { .. } => {
            CellStatus::NoConvergence
        }
        _ => CellStatus::Failed,
    }
}

/// Evaluates cell `(i, j)` of `spec` on top of `base`.
pub fn evaluate_cell(
    base: &PhysicalParams,
    spec: &GridSpec,
    i: usize,
    j: usize,
    opts: &CellOptions,
    watchdog: &dyn Watchdog,
) -> CellRecord {
    let n_atoms = spec.n_axis.values()[i];
    let eta_hz = spec.eta_axis_hz.values()[j];
    evaluate_point(base, n_atoms, eta_hz, spec.quantity, opts, watchdog, i, j)
}

/// Evaluates a single `(N, eta)` point; `eta_hz` is an ordinary frequency.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_point(
    base: &PhysicalParams,
    n_atoms: f64,
    eta_hz: f64,
    quantity: Quantity,
    opts: &CellOptions,
    watchdog: &dyn Watchdog,
    i: usize,
    j: usize,
) -> CellRecord {
    let mut rec = CellRecord::new(i, j, n_atoms, eta_hz);
    let p = match base.with_n_atoms(n_atoms).and_then(|p| p.with_eta(hz(eta_hz))) {
        Ok(p) => p,
        Err(e) => {
            rec.status = CellStatus::Failed;
            rec.message = Some(e.to_string());
            return rec;
        }
    };
    let steady = match meanfield::steady_state_with(&p, &opts.steady, watchdog) {
        Ok(s) => s,
        Err(e) => {
            rec.status = status_of(&e);
            rec.message = Some(e.to_string());
            return rec;
        }
    };
    rec.n_photon = Some(steady.state.n_photon);
    rec.inversion = Some(steady.state.inversion);
    rec.growth_rate = Some(steady.growth_rate);
    if !steady.is_stable() {
        rec.status = CellStatus::Unstable;
    }
    if quantity == Quantity::Photon {
        return rec;
    }
    if steady.state.n_photon < DARK_PHOTONS {
        if rec.status == CellStatus::Ok {
            rec.status = CellStatus::FitSkipped;
        }
        return rec;
    }
    match spectrum::linewidth_from_steady(steady, &p, &opts.spectrum) {
        Ok(lw) => {
            rec.fwhm_hz = Some(lw.fwhm_hz);
            rec.probe_seed = lw.trace.probe_seed;
        }
        Err(e) => {
            if rec.status == CellStatus::Ok {
                rec.status = match e {
                    Error::Interrupted { .. } => CellStatus::Timeout,
                    _ => CellStatus::FitFailed,
                };
            }
            rec.message = Some(e.to_string());
        }
    }
    rec
}

/// Lines drawn over the maps.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OverlayCurves {
    /// `(N, eta_Hz)` on the maximum pump line `eta = N C1 gamma`.
    pub max_pump_line: Vec<(f64, f64)>,
    /// `N_crit`; `None` when it is zero or infinite.
    pub crit_atom_line: Option<f64>,
    /// Slope of the maximum pump line, Hz per atom.
    pub max_pump_slope_hz: f64,
}

/// Overlay curves for `spec` from the derived quantities of `base`.
pub fn overlays(base: &PhysicalParams, spec: &GridSpec) -> Result<OverlayCurves> {
    let d = model::derive(base)?;
    let slope = to_hz(d.c1 * base.gamma());
    let max_pump_line = spec.n_axis.values().into_iter().map(|n| (n, slope * n)).collect();
    let crit = (d.n_crit.is_finite() && d.n_crit > 0.0).then_some(d.n_crit);
    Ok(OverlayCurves {
        max_pump_line,
        crit_atom_line: crit,
        max_pump_slope_hz: slope,
    })
}

/// A completed sweep.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SweepGrid {
    pub spec: GridSpec,
    pub base: PhysicalParams,
    pub n_values: Vec<f64>,
    pub eta_values_hz: Vec<f64>,
    /// Row-major: index `i * eta_count + j`.
    pub cells: Vec<CellRecord>,
    pub overlays: OverlayCurves,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StatusCounts {
    pub ok: usize,
    pub failed: usize,
    pub skipped: usize,
}

impl SweepGrid {
    /// Assembles a grid from records in any order.
    pub fn assemble(base: &PhysicalParams, spec: &GridSpec, mut cells: Vec<CellRecord>) -> Result<Self> {
        if cells.len() != spec.cells() {
            return Err(Error::invalid("cells", "count differs from the grid size"));
        }
        let cols = spec.eta_axis_hz.count;
        cells.sort_by_key(|c| c.i * cols + c.j);
        if cells.iter().enumerate().any(|(k, c)| c.i * cols + c.j != k) {
            return Err(Error::invalid("cells", "missing or duplicate cell"));
        }
        Ok(Self {
            spec: *spec,
            base: *base,
            n_values: spec.n_axis.values(),
            eta_values_hz: spec.eta_axis_hz.values(),
            cells,
            overlays: overlays(base, spec)?,
        })
    }

    pub fn cell(&self, i: usize, j: usize) -> &CellRecord {
        &self.cells[i * self.spec.eta_axis_hz.count + j]
    }

    pub fn counts(&self) -> StatusCounts {
        let mut c = StatusCounts::default();
        for cell in &self.cells {
            if cell.status.is_skipped() {
                c.skipped += 1;
            } else if cell.status.is_failed() {
                c.failed += 1;
            } else {
                c.ok += 1;
            }
        }
        c
    }

    /// Smallest FWHM among `Ok` cells, with its position.
    pub fn min_fwhm(&self) -> Option<(usize, usize, f64)> {
        self.cells
            .iter()
            .filter(|c| c.status == CellStatus::Ok)
            .filter_map(|c| c.fwhm_hz.map(|f| (c.i, c.j, f)))
            .filter(|&(_, _, f)| f.is_finite() && f > 0.0)
            .min_by(|a, b| a.2.total_cmp(&b.2))
    }

    /// 4-connected components of the cells satisfying `keep`, largest first.
    pub fn regions(&self, keep: impl Fn(&CellRecord) -> bool) -> Vec<Vec<(usize, usize)>> {
        let (rows, cols) = (self.spec.n_axis.count, self.spec.eta_axis_hz.count);
        let mask: Vec<bool> = self.cells.iter().map(&keep).collect();
        let mut seen = vec![false; rows * cols];
        let mut out = Vec::new();
        for start in 0..rows * cols {
            if !mask[start] || seen[start] {
                continue;
            }
            let mut region = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(k) = queue.pop_front() {
                let (i, j) = (k / cols, k % cols);
                region.push((i, j));
                let mut visit = |ni: usize, nj: usize| {
                    let nk = ni * cols + nj;
                    if mask[nk] && !seen[nk] {
                        seen[nk] = true;
                        queue.push_back(nk);
                    }
                };
                if i > 0 {
                    visit(i - 1, j);
                }
                if i + 1 < rows {
                    visit(i + 1, j);
                }
                if j > 0 {
                    visit(i, j - 1);
                }
                if j + 1 < cols {
                    visit(i, j + 1);
                }
            }
            out.push(region);
        }
        out.sort_by(|a, b| b.len().cmp(&a.len()));
        out
    }
}
