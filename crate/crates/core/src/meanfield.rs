//! Mean-field dynamics of the photon number, atom-field coherence, inversion
//! and spin-spin correlation of a pumped ensemble in a single-mode cavity.
//!
//! The four moments obey (rates angular, `N` atoms, `delta = omega_c - omega_a`):
//!
//! ```text
//! d<a+a>/dt      = -kappa <a+a> - i g N / 2 (<a+ s1-> - <s1+ a>)
//! d<a+ s1->/dt   = -((eta + gamma + kappa) / 2 + chi - i delta) <a+ s1->
//!                  + i g / 2 (<sz><a+a> + (<sz> + 1) / 2 + (N - 1) <s1+ s2->)
//! d<sz>/dt       = i g (<a+ s1-> - <s1+ a>) - gamma (1 + <sz>) + eta (1 - <sz>)
//! d<s1+ s2->/dt  = -(gamma + eta + 2 chi) <s1+ s2-> - i g / 2 <sz> (<a+ s1-> - <s1+ a>)
//! ```
//!
//! with `<s1+ a>` the complex conjugate of `<a+ s1->` and all third-order
//! cumulants dropped.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::linalg::{eigenvalues, solve_real};
use crate::ode::{DormandPrince, Extrapolated, StepControl, StiffSystem};
use crate::{Error, NoWatchdog, PhysicalParams, Result, Watchdog, C64};

/// Slack allowed on the inversion bound before evolution is aborted.
pub const INVERSION_SLACK: f64 = 1e-6;

/// The four mean-field moments.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct MeanFieldState {
    /// `<a+ a>`, photons.
    pub n_photon: f64,
    /// `<a+ s1->`.
    pub coherence: C64,
    /// `<sz>`.
    pub inversion: f64,
    /// `<s1+ s2->`.
    pub spin_corr: C64,
}

impl MeanFieldState {
    /// The all-zero state: empty cavity, half-inverted ensemble.
    pub fn zero() -> Self {
        Self::default()
    }

    /// Empty cavity with every atom in the ground state.
    pub fn dark() -> Self {
        Self {
            inversion: -1.0,
            ..Self::default()
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.n_photon,
            self.coherence.re,
            self.coherence.im,
            self.inversion,
            self.spin_corr.re,
            self.spin_corr.im,
        ]
    }

    pub fn from_slice(y: &[f64]) -> Self {
        Self {
            n_photon: y[0],
            coherence: C64::new(y[1], y[2]),
            inversion: y[3],
            spin_corr: C64::new(y[4], y[5]),
        }
    }

    /// Checks the physical bounds with slack `eps`.
    pub fn is_physical(&self, eps: f64) -> bool {
        self.n_photon >= -eps && self.inversion >= -1.0 - eps && self.inversion <= 1.0 + eps
    }
}

/// Time derivative of the four moments.
pub fn rhs(s: &MeanFieldState, p: &PhysicalParams) -> MeanFieldState {
    let mut dy = [0.0; 6];
    MeanField(p).rhs(&s.to_array(), &mut dy);
    MeanFieldState::from_slice(&dy)
}

/// Jacobian of [`rhs`] with respect to
/// `(n, Re c, Im c, sz, Re s, Im s)`.
pub fn jacobian(s: &MeanFieldState, p: &PhysicalParams) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(6, 6);
    MeanField(p).jacobian(&s.to_array(), &mut j);
    j
}

struct MeanField<'a>(&'a PhysicalParams);

impl MeanField<'_> {
    fn coherence_decay(&self) -> f64 {
        let p = self.0;
        0.5 * (p.eta() + p.gamma() + p.kappa()) + p.chi()
    }

    fn spin_decay(&self) -> f64 {
        let p = self.0;
        p.gamma() + p.eta() + 2.0 * p.chi()
    }
}

impl StiffSystem for MeanField<'_> {
    fn dim(&self) -> usize {
        6
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let p = self.0;
        let (g, n_at) = (p.g(), p.n_atoms());
        let [n, cr, ci, sz, sr, si] = [y[0], y[1], y[2], y[3], y[4], y[5]];
        let gc = self.coherence_decay();
        let gs = self.spin_decay();
        let delta = p.delta();
        // source term of the coherence equation, split into real and imaginary parts
        let xr = sz * n + 0.5 * (sz + 1.0) + (n_at - 1.0) * sr;
        let xi = (n_at - 1.0) * si;
        dy[0] = -p.kappa() * n + g * n_at * ci;
        dy[1] = -gc * cr - delta * ci - 0.5 * g * xi;
        dy[2] = -gc * ci + delta * cr + 0.5 * g * xr;
        dy[3] = -2.0 * g * ci - p.gamma() * (1.0 + sz) + p.eta() * (1.0 - sz);
        dy[4] = -gs * sr + g * sz * ci;
        dy[5] = -gs * si;
    }

    fn jacobian(&self, y: &[f64], j: &mut DMatrix<f64>) {
        let p = self.0;
        let (g, n_at) = (p.g(), p.n_atoms());
        let [n, _cr, ci, sz, _sr, _si] = [y[0], y[1], y[2], y[3], y[4], y[5]];
        let gc = self.coherence_decay();
        let gs = self.spin_decay();
        let delta = p.delta();
        j.fill(0.0);
        j[(0, 0)] = -p.kappa();
        j[(0, 2)] = g * n_at;

        j[(1, 1)] = -gc;
        j[(1, 2)] = -delta;
        j[(1, 5)] = -0.5 * g * (n_at - 1.0);

        j[(2, 0)] = 0.5 * g * sz;
        j[(2, 1)] = delta;
        j[(2, 2)] = -gc;
        j[(2, 3)] = 0.5 * g * (n + 0.5);
        j[(2, 4)] = 0.5 * g * (n_at - 1.0);

        j[(3, 2)] = -2.0 * g;
        j[(3, 3)] = -p.gamma() - p.eta();

        j[(4, 2)] = g * sz;
        j[(4, 3)] = g * ci;
        j[(4, 4)] = -gs;

        j[(5, 5)] = -gs;
    }
}

/// Natural magnitude floors of `(n, Re c, Im c, sz, Re s, Im s)`.
fn floors(p: &PhysicalParams) -> [f64; 6] {
    let inv_n = 1.0 / p.n_atoms().max(1.0);
    [1.0, 1e-3, 1e-3, 1.0, inv_n, inv_n]
}

/// Scaled steady-state residual: the largest component of [`rhs`], each
/// divided by the rate scale of `p` and by the component's magnitude (with
/// a floor at its natural scale).
pub fn residual(s: &MeanFieldState, p: &PhysicalParams) -> f64 {
    let mut dy = [0.0; 6];
    let y = s.to_array();
    MeanField(p).rhs(&y, &mut dy);
    scaled_residual(&y, &dy, p)
}

fn scaled_residual(y: &[f64], dy: &[f64], p: &PhysicalParams) -> f64 {
    let rate = p.rate_scale().max(f64::MIN_POSITIVE);
    let fl = floors(p);
    (0..6)
        .map(|i| dy[i].abs() / (rate * (y[i].abs() + fl[i])))
        .fold(0.0, f64::max)
}

/// Time series of mean-field states.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Trajectory {
    /// Sample times in seconds, strictly increasing.
    pub times: Vec<f64>,
    pub states: Vec<MeanFieldState>,
    pub params: PhysicalParams,
}

impl Trajectory {
    pub fn last(&self) -> &MeanFieldState {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Time stepper for [`evolve_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Integrator {
    /// Linearly implicit extrapolation. Safe when the decay rates dominate.
    #[default]
    Stiff,
    /// Dormand-Prince 5(4). Far cheaper per step once the step is limited by
    /// collective oscillations rather than by decay.
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolveOptions {
    /// Relative tolerance of the integrator.
    pub tol: f64,
    pub max_steps: usize,
    pub integrator: Integrator,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_steps: 2_000_000,
            integrator: Integrator::Stiff,
        }
    }
}

impl EvolveOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 1e-14 && self.tol < 1e-2) {
            return Err(Error::invalid("tol", "must lie in (1e-14, 1e-2)"));
        }
        Ok(())
    }
}

/// Local tolerance per unit of requested global tolerance.
const LOCAL_TOL_FACTOR: f64 = 0.1;

fn step_control(p: &PhysicalParams, tol: f64, max_steps: usize) -> StepControl {
    let fl = floors(p);
    let rate = p.rate_scale().max(f64::MIN_POSITIVE);
    let tol = tol * LOCAL_TOL_FACTOR;
    StepControl {
        rtol: tol,
        atol: fl.iter().map(|f| f * tol * 1e-3).collect(),
        h_init: 1e-3 * Float::cbrt(tol) / rate,
        h_max: f64::INFINITY,
        max_steps,
    }
}

fn check_inversion(t: f64, y: &[f64]) -> Result<()> {
    let sz = y[3];
    if !sz.is_finite() || sz < -1.0 - INVERSION_SLACK || sz > 1.0 + INVERSION_SLACK {
        return Err(Error::InvariantViolation { t, sigma_z: sz });
    }
    Ok(())
}

/// Integrates from `t = 0` to `t_end`, recording every accepted step.
pub fn evolve(
    initial: &MeanFieldState,
    p: &PhysicalParams,
    t_end: f64,
    tol: f64,
) -> Result<Trajectory> {
    evolve_with(
        initial,
        p,
        t_end,
        None,
        &EvolveOptions {
            tol,
            ..EvolveOptions::default()
        },
        &NoWatchdog,
    )
}

/// Integrates through the given ascending sample times (seconds, `>= 0`) and
/// records the state exactly at each of them.
pub fn evolve_at(
    initial: &MeanFieldState,
    p: &PhysicalParams,
    times: &[f64],
    tol: f64,
) -> Result<Trajectory> {
    let t_end = times.last().copied().unwrap_or(0.0);
    evolve_with(
        initial,
        p,
        t_end,
        Some(times),
        &EvolveOptions {
            tol,
            ..EvolveOptions::default()
        },
        &NoWatchdog,
    )
}

/// General form of [`evolve`] / [`evolve_at`].
pub fn evolve_with(
    initial: &MeanFieldState,
    p: &PhysicalParams,
    t_end: f64,
    samples: Option<&[f64]>,
    opts: &EvolveOptions,
    watchdog: &dyn Watchdog,
) -> Result<Trajectory> {
    opts.validate()?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::invalid("t_end", "must be positive and finite"));
    }
    if let Some(ts) = samples {
        if ts.is_empty() || ts[0] < 0.0 || ts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "sample_times",
                "must be non-empty, non-negative and strictly increasing",
            ));
        }
    }
    let sys = MeanField(p);
    let y0 = initial.to_array();
    let ctl = step_control(p, opts.tol, opts.max_steps);
    match opts.integrator {
        Integrator::Stiff => {
            let mut ig = Extrapolated::new(&sys, &y0, ctl);
            record(initial, t_end, samples, |t_lim| {
                ig.step(t_lim, watchdog)?;
                Ok((ig.t(), MeanFieldState::from_slice(ig.y())))
            })
            .map(|(times, states)| Trajectory {
                times,
                states,
                params: *p,
            })
        }
        Integrator::Explicit => {
            // integrate in units of the component floors so that one absolute
            // tolerance suits photon numbers and correlations alike
            let fl = floors(p);
            let z0: Vec<C64> = (0..6).map(|i| C64::new(y0[i] / fl[i], 0.0)).collect();
            let f = |z: &[C64], dz: &mut [C64]| {
                let mut y = [0.0; 6];
                let mut dy = [0.0; 6];
                for i in 0..6 {
                    y[i] = z[i].re * fl[i];
                }
                sys.rhs(&y, &mut dy);
                for i in 0..6 {
                    dz[i] = C64::new(dy[i] / fl[i], 0.0);
                }
            };
            let mut ig = DormandPrince::new(f, z0, ctl.rtol, ctl.rtol * 1e-3, ctl.h_init, ctl.max_steps);
            let unscale = |z: &[C64]| {
                let mut y = [0.0; 6];
                for i in 0..6 {
                    y[i] = z[i].re * fl[i];
                }
                MeanFieldState::from_slice(&y)
            };
            record(initial, t_end, samples, |t_lim| {
                ig.step(t_lim, watchdog)?;
                Ok((ig.t(), unscale(ig.y())))
            })
            .map(|(times, states)| Trajectory {
                times,
                states,
                params: *p,
            })
        }
    }
}

/// Drives `step` (one accepted step not passing its argument) through every
/// step or through the requested sample times.
fn record(
    initial: &MeanFieldState,
    t_end: f64,
    samples: Option<&[f64]>,
    mut step: impl FnMut(f64) -> Result<(f64, MeanFieldState)>,
) -> Result<(Vec<f64>, Vec<MeanFieldState>)> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut t = 0.0;
    let mut state = *initial;
    let mut advance = |target: f64, t: &mut f64, state: &mut MeanFieldState| -> Result<()> {
        let (t_new, s_new) = step(target)?;
        check_inversion(t_new, &[0.0, 0.0, 0.0, s_new.inversion])?;
        *t = t_new;
        *state = s_new;
        Ok(())
    };
    match samples {
        None => {
            times.push(0.0);
            states.push(state);
            while t < t_end {
                advance(t_end, &mut t, &mut state)?;
                times.push(t);
                states.push(state);
            }
        }
        Some(ts) => {
            for &ts_k in ts {
                while t < ts_k {
                    advance(ts_k, &mut t, &mut state)?;
                }
                times.push(ts_k);
                states.push(state);
            }
        }
    }
    Ok((times, states))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SteadyMethod {
    /// Integrate until the residual criterion holds.
    Relaxation,
    /// Relax to a coarse residual, then polish with damped Newton iteration.
    /// When the relaxation does not settle within [`ROOTFIND_RELAX_STEPS`]
    /// (spiking or a limit cycle), Newton starts instead from the final
    /// state, the late-time average and the resonant closed-form estimate.
    #[default]
    Rootfind,
}

/// Relaxation step budget of [`SteadyMethod::Rootfind`] before it falls back
/// to Newton iteration from several seeds.
pub const ROOTFIND_RELAX_STEPS: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyOptions {
    pub method: SteadyMethod,
    /// Starting point of the relaxation.
    pub initial: MeanFieldState,
    /// Relative tolerance of the relaxation integrator.
    pub tol: f64,
    /// Target scaled residual, see [`residual`].
    pub residual_tol: f64,
    pub max_steps: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            method: SteadyMethod::Rootfind,
            initial: MeanFieldState::zero(),
            tol: 1e-6,
            residual_tol: 1e-10,
            max_steps: 500_000,
        }
    }
}

/// Converged steady state with diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SteadyReport {
    pub state: MeanFieldState,
    pub residual: f64,
    /// Simulated time spent relaxing, seconds.
    pub relaxation_time: f64,
    pub steps: usize,
    pub newton_iterations: usize,
    /// The relaxation reached the coarse residual by itself.
    pub relaxed: bool,
    /// Largest real part of the Jacobian spectrum at the fixed point, rad/s.
    pub growth_rate: f64,
}

impl SteadyReport {
    /// Small perturbations decay. An unstable fixed point is still a root of
    /// the equations but the dynamics spike or settle on a limit cycle.
    pub fn is_stable(&self) -> bool {
        self.growth_rate <= 0.0
    }
}

/// Steady state reached from the all-zero initial condition.
pub fn steady_state(p: &PhysicalParams, method: SteadyMethod) -> Result<MeanFieldState> {
    let opts = SteadyOptions {
        method,
        ..SteadyOptions::default()
    };
    steady_state_with(p, &opts, &NoWatchdog).map(|r| r.state)
}

pub fn steady_state_with(
    p: &PhysicalParams,
    opts: &SteadyOptions,
    watchdog: &dyn Watchdog,
) -> Result<SteadyReport> {
    if !(opts.residual_tol > 0.0) {
        return Err(Error::invalid("residual_tol", "must be positive"));
    }
    // Rootfind tightens the relaxation in stages, trying Newton after each
    let stages: Vec<f64> = match opts.method {
        SteadyMethod::Relaxation => vec![opts.residual_tol],
        SteadyMethod::Rootfind => [1e-6, 1e-8, opts.residual_tol]
            .into_iter()
            .filter(|&t| t >= opts.residual_tol)
            .collect(),
    };
    let budget = match opts.method {
        SteadyMethod::Relaxation => opts.max_steps,
        SteadyMethod::Rootfind => opts.max_steps.min(ROOTFIND_RELAX_STEPS),
    };
    let sys = MeanField(p);
    let y0 = opts.initial.to_array();
    let mut ig = Extrapolated::new(&sys, &y0, step_control(p, opts.tol, usize::MAX));
    let mut res = scaled_residual(ig.y(), ig.dydt(), p);
    // (t, y) history for the late-time average, thinned to bounded size
    let mut history: Vec<(f64, [f64; 6])> = Vec::new();
    let mut stride = 1;
    let mut best_residual = res;
    let mut newton_total = 0;
    for (stage, &target) in stages.iter().enumerate() {
        let last_stage = stage + 1 == stages.len();
        // the final relaxation stage also asks for a short Newton distance,
        // so that slow components have settled and not just slowed down
        let settled = |y: &[f64], dy: &[f64], res: f64| {
            res < target && (!last_stage || newton_distance(y, dy, p) < target)
        };
        while !settled(ig.y(), ig.dydt(), res) && ig.steps() < budget {
            match ig.step(f64::INFINITY, watchdog) {
                Ok(()) => {}
                Err(Error::StepSizeUnderflow { .. }) => break,
                Err(e) => return Err(e),
            }
            check_inversion(ig.t(), ig.y())?;
            res = scaled_residual(ig.y(), ig.dydt(), p);
            if ig.steps() % stride == 0 {
                let mut y = [0.0; 6];
                y.copy_from_slice(ig.y());
                history.push((ig.t(), y));
                if history.len() >= 4096 {
                    history = history.into_iter().step_by(2).collect();
                    stride *= 2;
                }
            }
        }
        best_residual = best_residual.min(res);
        let reached = settled(ig.y(), ig.dydt(), res);
        let end = MeanFieldState::from_slice(ig.y());
        let mut report = SteadyReport {
            state: end,
            residual: res,
            relaxation_time: ig.t(),
            steps: ig.steps(),
            newton_iterations: 0,
            relaxed: reached,
            growth_rate: 0.0,
        };
        if opts.method == SteadyMethod::Relaxation {
            if !reached {
                break;
            }
            report.growth_rate = growth_rate(&end, p);
            return Ok(report);
        }
        if !reached {
            // the relaxation is stuck: spiking or a limit cycle
            let mut seeds = vec![end];
            if let Some(avg) = late_average(&history) {
                seeds.push(avg);
            }
            if let Some(guess) = resonant_estimate(p) {
                seeds.push(guess);
            }
            return match polish_seeds(&seeds, p, opts.residual_tol, &mut best_residual) {
                Some((state, residual, iterations, growth)) => {
                    report.state = state;
                    report.residual = residual;
                    report.newton_iterations = newton_total + iterations;
                    report.growth_rate = growth;
                    Ok(report)
                }
                None => Err(Error::NoConvergence {
                    residual: best_residual,
                    time: ig.t(),
                }),
            };
        }
        let (state, residual, iterations) = newton_polish(&end, p, opts.residual_tol);
        newton_total += iterations;
        best_residual = best_residual.min(residual);
        if residual < opts.residual_tol && state.is_physical(1e-10) {
            report.state = state;
            report.residual = residual;
            report.newton_iterations = newton_total;
            report.growth_rate = growth_rate(&state, p);
            return Ok(report);
        }
        if last_stage {
            // relaxation alone met the target
            report.newton_iterations = newton_total;
            report.growth_rate = growth_rate(&end, p);
            return Ok(report);
        }
    }
    Err(Error::NoConvergence {
        residual: best_residual,
        time: ig.t(),
    })
}

/// Newton from each seed; prefers the first stable physical root, else the
/// first physical root.
fn polish_seeds(
    seeds: &[MeanFieldState],
    p: &PhysicalParams,
    tol: f64,
    best_residual: &mut f64,
) -> Option<(MeanFieldState, f64, usize, f64)> {
    let mut best: Option<(MeanFieldState, f64, usize, f64)> = None;
    for seed in seeds {
        let (state, residual, iterations) = newton_polish(seed, p, tol);
        *best_residual = best_residual.min(residual);
        if residual >= tol || !state.is_physical(1e-10) {
            continue;
        }
        let growth = growth_rate(&state, p);
        if growth <= 0.0 {
            return Some((state, residual, iterations, growth));
        }
        if best.is_none() {
            best = Some((state, residual, iterations, growth));
        }
    }
    best
}

/// Size of the Newton step from `y`, scaled like the residual.
fn newton_distance(y: &[f64], dy: &[f64], p: &PhysicalParams) -> f64 {
    let mut jac = DMatrix::zeros(6, 6);
    MeanField(p).jacobian(y, &mut jac);
    let rhs = DVector::from_column_slice(dy);
    let Ok(dx) = solve_real(jac, &rhs) else {
        return f64::INFINITY;
    };
    let fl = floors(p);
    (0..6)
        .map(|i| dx[i].abs() / (y[i].abs() + fl[i]))
        .fold(0.0, f64::max)
}

/// Time average over the second half of a recorded relaxation.
fn late_average(history: &[(f64, [f64; 6])]) -> Option<MeanFieldState> {
    let (t_end, _) = *history.last()?;
    let t_start = 0.5 * t_end;
    let mut acc = [0.0; 6];
    let mut span = 0.0;
    for w in history.windows(2) {
        if w[0].0 < t_start {
            continue;
        }
        let dt = w[1].0 - w[0].0;
        for i in 0..6 {
            acc[i] += 0.5 * dt * (w[0].1[i] + w[1].1[i]);
        }
        span += dt;
    }
    if !(span > 0.0) {
        return None;
    }
    for v in &mut acc {
        *v /= span;
    }
    Some(MeanFieldState::from_slice(&acc))
}

/// Lasing fixed point of the resonant (`delta = 0`) equations, used as a
/// Newton seed. `None` below threshold.
pub fn resonant_estimate(p: &PhysicalParams) -> Option<MeanFieldState> {
    let (g, n, kappa, gamma, eta, chi) = (p.g(), p.n_atoms(), p.kappa(), p.gamma(), p.eta(), p.chi());
    if g == 0.0 || kappa == 0.0 || gamma + eta == 0.0 {
        return None;
    }
    let gc = 0.5 * (eta + gamma + kappa) + chi;
    let gs = gamma + eta + 2.0 * chi;
    let big_k = g * g * n / kappa + if gs > 0.0 { g * g * (n - 1.0) / gs } else { 0.0 };
    let a = (eta - gamma) / (eta + gamma);
    let b = 2.0 * g / (eta + gamma);
    let qa = 0.5 * big_k * b;
    let qb = gc - 0.5 * big_k * a + 0.25 * g * b;
    let qc = 0.25 * g * (1.0 + a);
    let disc = qb * qb + 4.0 * qa * qc;
    // positive root without cancellation for either sign of qb
    let y = if qb >= 0.0 {
        2.0 * qc / (qb + Float::sqrt(disc))
    } else {
        (Float::sqrt(disc) - qb) / (2.0 * qa)
    };
    if !(y > 0.0 && y.is_finite()) {
        return None;
    }
    let sz = a - b * y;
    let s = if gs > 0.0 { g * sz * y / gs } else { 0.0 };
    let state = MeanFieldState {
        n_photon: g * n * y / kappa,
        coherence: C64::new(0.0, y),
        inversion: sz,
        spin_corr: C64::new(s, 0.0),
    };
    state.is_physical(1e-12).then_some(state)
}

/// Largest real part of the Jacobian eigenvalues at `s`.
pub fn growth_rate(s: &MeanFieldState, p: &PhysicalParams) -> f64 {
    let cj = jacobian(s, p).map(|v| C64::new(v, 0.0));
    let top = eigenvalues(&cj).iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    // eigenvalues are accurate to roughly eps times the largest rate
    let noise = 1e-9 * p.rate_scale();
    if top.abs() <= noise {
        0.0
    } else {
        top
    }
}

/// Damped Newton iteration on the six real components.
///
/// Returns the best state found, its scaled residual and the iteration count.
fn newton_polish(start: &MeanFieldState, p: &PhysicalParams, target: f64) -> (MeanFieldState, f64, usize) {
    let sys = MeanField(p);
    let mut y = start.to_array().to_vec();
    let mut f = vec![0.0; 6];
    let mut jac = DMatrix::zeros(6, 6);
    sys.rhs(&y, &mut f);
    let mut res = scaled_residual(&y, &f, p);
    let mut iterations = 0;
    // iterate past the target: each extra step is cheap and buys digits
    let mut extra = 2;
    while iterations < 60 {
        if res < target {
            if extra == 0 {
                break;
            }
            extra -= 1;
        }
        iterations += 1;
        sys.jacobian(&y, &mut jac);
        let neg_f = DVector::from_iterator(6, f.iter().map(|v| -v));
        let Ok(dx) = solve_real(jac.clone(), &neg_f) else {
            break;
        };
        let mut lambda = 1.0;
        let mut improved = false;
        let mut trial = vec![0.0; 6];
        let mut f_trial = vec![0.0; 6];
        for _ in 0..12 {
            for i in 0..6 {
                trial[i] = y[i] + lambda * dx[i];
            }
            sys.rhs(&trial, &mut f_trial);
            let r = scaled_residual(&trial, &f_trial, p);
            if r < res || (r == res && r == 0.0) {
                improved = r < res;
                y.copy_from_slice(&trial);
                f.copy_from_slice(&f_trial);
                res = r;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (MeanFieldState::from_slice(&y), res, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::hz;

    fn fig2(n: f64, eta_hz: f64) -> PhysicalParams {
        PhysicalParams::from_hz(1e5, 1e8, 1.4e3, 1e7, eta_hz, 0.0, n).unwrap()
    }

    #[test]
    fn integrators_agree_on_collective_oscillations() {
        let p = PhysicalParams::from_hz(1e3, 5e6, 1.4e3, 1e5, 2.51e5, 0.0, 1e11).unwrap();
        let start = MeanFieldState {
            inversion: -1.0,
            ..MeanFieldState::zero()
        };
        let ts: Vec<f64> = (0..21).map(|k| 2e-7 * k as f64).collect();
        let run = |integrator| {
            let o = EvolveOptions {
                integrator,
                ..EvolveOptions::default()
            };
            evolve_with(&start, &p, 4e-6, Some(&ts), &o, &NoWatchdog).unwrap()
        };
        let (a, b) = (run(Integrator::Stiff), run(Integrator::Explicit));
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!((x.inversion - y.inversion).abs() < 1e-6);
            assert!((x.n_photon - y.n_photon).abs() <= 1e-4 * x.n_photon.max(1.0));
        }
    }

    #[test]
    fn decoupled_rhs() {
        let p = PhysicalParams::new(2.0, 5.0, 0.0, 1.0, 3.0, 0.0, 100.0).unwrap();
        let s = MeanFieldState {
            n_photon: 4.0,
            coherence: C64::new(0.3, -0.2),
            inversion: 0.25,
            spin_corr: C64::new(0.01, 0.02),
        };
        let d = rhs(&s, &p);
        assert_eq!(d.n_photon, -5.0 * 4.0);
        assert_eq!(d.inversion, -2.0 * 1.25 + 3.0 * 0.75);
    }

    #[test]
    fn dark_state_is_fixed() {
        let p = fig2(1e10, 0.0);
        let d = rhs(&MeanFieldState::dark(), &p);
        assert_eq!(d, MeanFieldState::default());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = PhysicalParams::new(1.3, 40.0, 0.7, 2.1, 3.3, 0.9, 57.0).unwrap();
        let s = MeanFieldState {
            n_photon: 3.0,
            coherence: C64::new(0.2, 0.5),
            inversion: 0.3,
            spin_corr: C64::new(0.04, -0.01),
        };
        let j = jacobian(&s, &p);
        let y = s.to_array();
        for k in 0..6 {
            let h = 1e-6;
            let mut yp = y;
            let mut ym = y;
            yp[k] += h;
            ym[k] -= h;
            let fp = rhs(&MeanFieldState::from_slice(&yp), &p).to_array();
            let fm = rhs(&MeanFieldState::from_slice(&ym), &p).to_array();
            for i in 0..6 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - j[(i, k)]).abs() < 1e-6, "d{i}/d{k}: {fd} vs {}", j[(i, k)]);
            }
        }
    }

    #[test]
    fn decoupled_steady_state() {
        let p = PhysicalParams::new(hz(1e3), hz(1e6), 0.0, hz(1e4), hz(3e3), 0.0, 1e6).unwrap();
        for method in [SteadyMethod::Relaxation, SteadyMethod::Rootfind] {
            let s = steady_state(&p, method).unwrap();
            assert_eq!(s.n_photon, 0.0);
            assert_eq!(s.coherence, C64::new(0.0, 0.0));
            assert_eq!(s.spin_corr, C64::new(0.0, 0.0));
            // relaxation stops once the residual, scaled by kappa, is small;
            // the inversion error is then bounded through gamma + eta
            let bound = match method {
                SteadyMethod::Relaxation => 2e-10 * p.kappa() / (p.gamma() + p.eta()),
                SteadyMethod::Rootfind => 1e-14,
            };
            assert!((s.inversion - 0.5).abs() < bound, "{method:?}: {}", s.inversion);
        }
    }

    #[test]
    fn unpumped_steady_state_is_dark() {
        let p = fig2(1e10, 0.0);
        let s = steady_state(&p, SteadyMethod::Rootfind).unwrap();
        assert!(s.n_photon.abs() < 1e-9);
        assert!((s.inversion + 1.0).abs() < 1e-9);
    }

    #[test]
    fn tolerance_validation() {
        let p = fig2(1e3, 1e5);
        let s = MeanFieldState::zero();
        assert!(evolve(&s, &p, 1e-6, 0.1).is_err());
        assert!(evolve(&s, &p, 1e-6, 1e-15).is_err());
        assert!(evolve(&s, &p, 0.0, 1e-6).is_err());
        assert!(evolve_at(&s, &p, &[0.0, 2e-6, 1e-6], 1e-6).is_err());
    }

    #[test]
    fn photon_decay() {
        let p = PhysicalParams::new(1.0, 3.0, 0.0, 0.0, 0.0, 0.0, 10.0).unwrap();
        let s = MeanFieldState {
            n_photon: 1.0,
            inversion: -1.0,
            ..MeanFieldState::default()
        };
        let tol = 1e-9;
        let tr = evolve(&s, &p, 4.0, tol).unwrap();
        for (t, st) in tr.times.iter().zip(&tr.states) {
            let exact = (-3.0 * t).exp();
            let err = (st.n_photon - exact).abs();
            assert!(err <= tol * (exact + 1e-3), "t = {t}: {err:e} vs {exact:e}");
        }
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }
}
