//! Emission spectrum of the mean-field laser.
//!
//! The field correlation `g1(t) = <a+(t) a(0)>` follows from the quantum
//! regression theorem applied to the field and coherence equations with the
//! inversion frozen at its steady-state value:
//!
//! ```text
//! d/dt [C_a]   [ -(kappa/2 - i delta)        i g N / 2        ] [C_a]
//!      [C_s] = [ -i g <sz> / 2        -((eta + gamma)/2 + chi) ] [C_s]
//! ```
//!
//! with `C_a(0) = <a+ a>` and `C_s(0) = <s1+ a>`. The spectrum is the Fourier
//! transform of the Hermitian extension `g1(-t) = conj(g1(t))` and the
//! linewidth comes from a Lorentzian fit to it.

pub mod fft;
mod fit;

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use num_traits::Float;

pub use fit::{lorentzian, LorentzianFit, MIN_HALF_MAX_POINTS, WINDOW_FWHMS};

use crate::linalg::expm;
use crate::meanfield::{self, SteadyOptions, SteadyReport};
use crate::{Error, MeanFieldState, PhysicalParams, Result, Watchdog, C64};

/// Largest scaled steady-state residual accepted as a regression seed.
pub const STEADY_RESIDUAL_LIMIT: f64 = 1e-6;
/// Tail fraction above which a trace counts as truncated.
pub const TAIL_WARN: f64 = 1e-4;
/// Tail fraction above which an unwindowed transform is refused.
pub const TAIL_LIMIT: f64 = 1e-2;
/// Largest accepted value of `dt |lambda|` for the dominant regression mode.
pub const RESOLUTION_LIMIT: f64 = 0.1;

const I: C64 = C64::new(0.0, 1.0);

/// The 2x2 regression matrix acting on `(C_a, C_s)`.
pub fn regression_matrix(p: &PhysicalParams, sigma_z: f64) -> [[C64; 2]; 2] {
    let n = p.n_atoms();
    [
        [
            C64::new(-0.5 * p.kappa(), p.delta()),
            I * (0.5 * p.g() * n),
        ],
        [
            -I * (0.5 * p.g() * sigma_z),
            C64::new(-(0.5 * (p.eta() + p.gamma()) + p.chi()), 0.0),
        ],
    ]
}

/// Eigenvalues of a 2x2 matrix, the one with the larger real part first.
pub fn eigenvalues_2x2(m: &[[C64; 2]; 2]) -> [C64; 2] {
    let half_tr = 0.5 * (m[0][0] + m[1][1]);
    let half_diff = 0.5 * (m[0][0] - m[1][1]);
    let root = (half_diff * half_diff + m[0][1] * m[1][0]).sqrt();
    let (a, b) = (half_tr + root, half_tr - root);
    if a.re >= b.re {
        [a, b]
    } else {
        [b, a]
    }
}

/// One exponential component `weight * exp(eigenvalue * t)` of `C_a(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Mode {
    pub eigenvalue: C64,
    pub weight: C64,
}

impl Mode {
    /// Height of this mode's Lorentzian relative to the others.
    fn spectral_peak(&self) -> f64 {
        self.weight.norm() / self.eigenvalue.re.abs().max(f64::MIN_POSITIVE)
    }

    /// Full width at half maximum of this mode's line, Hz.
    pub fn fwhm_hz(&self) -> f64 {
        -self.eigenvalue.re / PI
    }
}

/// Modal decomposition of `C_a(t)` for the seed `(c_a, c_s)`.
pub fn regression_modes(m: &[[C64; 2]; 2], seed: [C64; 2]) -> Vec<Mode> {
    let [l1, l2] = eigenvalues_2x2(m);
    let gap = (l1 - l2).norm();
    let scale = l1.norm().max(l2.norm()).max(f64::MIN_POSITIVE);
    if gap <= 1e-9 * scale {
        return vec![Mode {
            eigenvalue: l1,
            weight: seed[0],
        }];
    }
    // C_a = w1 e^{l1 t} + w2 e^{l2 t}; matching C_a(0) and C_a'(0)
    let deriv = m[0][0] * seed[0] + m[0][1] * seed[1];
    let w1 = (deriv - l2 * seed[0]) / (l1 - l2);
    vec![
        Mode {
            eigenvalue: l1,
            weight: w1,
        },
        Mode {
            eigenvalue: l2,
            weight: seed[0] - w1,
        },
    ]
}

/// Sampled field correlation `g1(k dt)`, `k = 0 .. len`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CorrelationTrace {
    pub dt: f64,
    pub g1: Vec<C64>,
    /// The dark steady state was replaced by the unit seed `C_a(0) = 1`.
    pub probe_seed: bool,
    pub steady: MeanFieldState,
    pub params: PhysicalParams,
}

impl CorrelationTrace {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.g1.len()).map(|k| k as f64 * self.dt)
    }

    pub fn t_max(&self) -> f64 {
        (self.g1.len().saturating_sub(1)) as f64 * self.dt
    }
}

fn regression_seed(steady: &MeanFieldState) -> ([C64; 2], bool) {
    if steady.n_photon == 0.0 && steady.coherence == C64::new(0.0, 0.0) {
        ([C64::new(1.0, 0.0), C64::new(0.0, 0.0)], true)
    } else {
        (
            [C64::new(steady.n_photon, 0.0), steady.coherence.conj()],
            false,
        )
    }
}

/// Modes of the regression problem seeded by `steady`.
pub fn steady_modes(steady: &MeanFieldState, p: &PhysicalParams) -> Vec<Mode> {
    let m = regression_matrix(p, steady.inversion);
    regression_modes(&m, regression_seed(steady).0)
}

/// The mode with the tallest spectral peak.
pub fn dominant_mode(modes: &[Mode]) -> Mode {
    *modes
        .iter()
        .max_by(|a, b| a.spectral_peak().total_cmp(&b.spectral_peak()))
        .expect("at least one mode")
}

/// Samples `C_a` on `0, dt, .., >= t_max` by exact propagation of the
/// regression system.
///
/// A steady state with no light and no coherence has `g1 = 0`; it is
/// replaced by the unit probe `C_a(0) = 1` so that the spectrum still shows
/// the linear response of the resonator, and the trace is flagged.
pub fn regression_correlation(
    steady: &MeanFieldState,
    p: &PhysicalParams,
    t_max: f64,
    dt: f64,
) -> Result<CorrelationTrace> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", "must be positive and finite"));
    }
    if !(t_max > dt && t_max.is_finite()) {
        return Err(Error::invalid("t_max", "must be finite and exceed dt"));
    }
    let residual = meanfield::residual(steady, p);
    if !(residual <= STEADY_RESIDUAL_LIMIT) {
        return Err(Error::NotSteady { residual });
    }
    let m = regression_matrix(p, steady.inversion);
    let (seed, probe_seed) = regression_seed(steady);
    let modes = regression_modes(&m, seed);
    if let Some(bad) = modes.iter().find(|md| md.eigenvalue.re >= 0.0) {
        return Err(Error::UnstableRegression {
            re: bad.eigenvalue.re,
        });
    }
    let dom = dominant_mode(&modes);
    if dt * dom.eigenvalue.norm() > RESOLUTION_LIMIT {
        return Err(Error::Resolution {
            dt,
            rate: dom.eigenvalue.norm(),
        });
    }
    let steps = Float::ceil(t_max / dt) as usize;
    if steps > MAX_SAMPLES {
        return Err(Error::MemoryCap {
            required: steps + 1,
            cap: MAX_SAMPLES,
        });
    }
    let mut g1 = Vec::with_capacity(steps + 1);
    if modes.len() == 2 {
        // separated eigenvalues: the modal sum is exact, while expm of a
        // stiff step loses the slow mode to rounding
        for k in 0..=steps {
            let t = k as f64 * dt;
            g1.push(modes.iter().map(|md| md.weight * (md.eigenvalue * t).exp()).sum());
        }
    } else {
        let step = expm(&DMatrix::from_fn(2, 2, |i, j| m[i][j] * dt));
        let (e00, e01, e10, e11) = (step[(0, 0)], step[(0, 1)], step[(1, 0)], step[(1, 1)]);
        let [mut ca, mut cs] = seed;
        g1.push(ca);
        for _ in 0..steps {
            let next_a = e00 * ca + e01 * cs;
            cs = e10 * ca + e11 * cs;
            ca = next_a;
            g1.push(ca);
        }
    }
    Ok(CorrelationTrace {
        dt,
        g1,
        probe_seed,
        steady: *steady,
        params: *p,
    })
}

/// Upper bound on the number of correlation samples.
pub const MAX_SAMPLES: usize = 1 << 27;

/// Treatment of a correlation that has not fully decayed at `t_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Window {
    #[default]
    None,
    /// Multiply by `exp(-alpha t)` with `alpha` just large enough to bring the
    /// tail down to [`TAIL_WARN`]. Broadens the line by `alpha / pi` Hz.
    ExponentialTail,
}

/// Power spectral density on a frequency grid ascending through zero.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Spectrum {
    /// Offsets from the atomic frequency, Hz.
    pub freqs_hz: Vec<f64>,
    pub psd: Vec<f64>,
    pub df_hz: f64,
    /// `|g1(t_max)| / |g1(0)|` before windowing.
    pub tail: f64,
    /// The tail exceeded [`TAIL_WARN`] and no window was applied.
    pub truncated: bool,
    /// Extra FWHM introduced by the window, Hz.
    pub window_broadening_hz: f64,
}

impl Spectrum {
    /// `sum psd * df`, which equals `g1(0)` up to rounding.
    pub fn integrated_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.df_hz
    }

    pub fn peak(&self) -> (f64, f64) {
        self.freqs_hz
            .iter()
            .zip(&self.psd)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(f, p)| (*f, *p))
            .unwrap_or((0.0, 0.0))
    }
}

/// Spectrum of a sampled correlation `g1(k dt)`.
///
/// The Hermitian extension is zero-padded to the next power of two at or
/// above `2 len pad_factor` samples, so the frequency step is at most
/// `1 / (2 t_max pad_factor)`.
pub fn power_spectrum_samples(g1: &[C64], dt: f64, window: Window, pad_factor: usize) -> Result<Spectrum> {
    if g1.len() < 2 {
        return Err(Error::invalid("g1", "need at least two samples"));
    }
    if pad_factor == 0 {
        return Err(Error::invalid("pad_factor", "must be at least 1"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", "must be positive and finite"));
    }
    let head = g1[0].norm();
    if !(head > 0.0) {
        return Err(Error::EmptyCorrelation);
    }
    let m = g1.len();
    let tail = g1[m - 1].norm() / head;
    let t_last = (m - 1) as f64 * dt;
    let mut alpha = 0.0;
    match window {
        Window::None if tail > TAIL_LIMIT => return Err(Error::InsufficientDecay { tail }),
        Window::ExponentialTail if tail > TAIL_WARN => {
            alpha = Float::ln(tail / TAIL_WARN) / t_last;
        }
        _ => {}
    }
    let len = (2 * m * pad_factor).next_power_of_two();
    let mut buf = vec![C64::new(0.0, 0.0); len];
    for (k, v) in g1.iter().enumerate() {
        let w = if alpha > 0.0 {
            *v * Float::exp(-alpha * k as f64 * dt)
        } else {
            *v
        };
        buf[k] = w;
        if k > 0 {
            buf[len - k] = w.conj();
        }
    }
    // the origin counts once: make g1(0) exactly real
    buf[0] = C64::new(buf[0].re, 0.0);
    fft::fft(&mut buf);
    let df = 1.0 / (len as f64 * dt);
    let half = len / 2;
    let mut freqs = Vec::with_capacity(len);
    let mut psd = Vec::with_capacity(len);
    for j in (half..len).chain(0..half) {
        let idx = if j >= half { j as f64 - len as f64 } else { j as f64 };
        freqs.push(idx * df);
        psd.push(dt * buf[j].re);
    }
    Ok(Spectrum {
        freqs_hz: freqs,
        psd,
        df_hz: df,
        tail,
        truncated: alpha == 0.0 && tail > TAIL_WARN,
        window_broadening_hz: alpha / PI,
    })
}

pub fn power_spectrum(trace: &CorrelationTrace, window: Window, pad_factor: usize) -> Result<Spectrum> {
    power_spectrum_samples(&trace.g1, trace.dt, window, pad_factor)
}

/// Lorentzian fit of a spectrum, see [`LorentzianFit`].
pub fn fit_lorentzian(spec: &Spectrum, init: Option<&LorentzianFit>) -> Result<LorentzianFit> {
    fit::fit_lorentzian(&spec.freqs_hz, &spec.psd, init)
}

/// Lorentzian fit of raw `(freqs, psd)` samples with increasing `freqs`.
pub fn fit_lorentzian_data(freqs: &[f64], psd: &[f64], init: Option<&LorentzianFit>) -> Result<LorentzianFit> {
    fit::fit_lorentzian(freqs, psd, init)
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpectrumOptions {
    /// Correlation horizon, seconds; chosen from the slowest significant
    /// regression mode when absent.
    pub t_max: Option<f64>,
    /// Sampling step, seconds; chosen from the dominant mode when absent.
    pub dt: Option<f64>,
    pub pad_factor: usize,
    pub window: Window,
    /// Target value of `dt |lambda|` for the dominant mode in automatic mode.
    pub resolution: f64,
    /// Decay of `|g1|` at `t_max` targeted in automatic mode.
    pub decay: f64,
    pub max_samples: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            t_max: None,
            dt: None,
            pad_factor: 8,
            window: Window::None,
            resolution: 2e-3,
            decay: 1e-5,
            max_samples: 1 << 20,
        }
    }
}

/// Sampling grid `(dt, t_max)` for a regression run seeded by `steady`.
///
/// `t_max` lets every mode carrying more than `1e-5` of the largest modal
/// weight decay by `opts.decay`; the sample count is rounded up to a power
/// of two.
pub fn auto_grid(steady: &MeanFieldState, p: &PhysicalParams, opts: &SpectrumOptions) -> Result<(f64, f64)> {
    let modes = steady_modes(steady, p);
    if let Some(bad) = modes.iter().find(|md| md.eigenvalue.re >= 0.0) {
        return Err(Error::UnstableRegression {
            re: bad.eigenvalue.re,
        });
    }
    let dom = dominant_mode(&modes);
    let wmax = modes.iter().map(|md| md.weight.norm()).fold(0.0, f64::max);
    let slowest = modes
        .iter()
        .filter(|md| md.weight.norm() >= 1e-5 * wmax)
        .map(|md| -md.eigenvalue.re)
        .fold(f64::INFINITY, f64::min);
    let dt = opts.dt.unwrap_or(opts.resolution / dom.eigenvalue.norm());
    let t_max = match opts.t_max {
        Some(t) => t,
        None => {
            let want = Float::ln(1.0 / opts.decay) / slowest;
            let samples = (Float::ceil(want / dt) as usize + 1).next_power_of_two();
            (samples - 1) as f64 * dt
        }
    };
    let samples = Float::ceil(t_max / dt) as usize + 1;
    if samples > opts.max_samples {
        return Err(Error::MemoryCap {
            required: samples,
            cap: opts.max_samples,
        });
    }
    Ok((dt, t_max))
}

/// Artifacts of one end-to-end linewidth evaluation.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct LinewidthReport {
    pub steady: SteadyReport,
    pub modes: Vec<Mode>,
    pub trace: CorrelationTrace,
    pub spectrum: Spectrum,
    pub fit: LorentzianFit,
    /// Fitted FWHM minus the window broadening, Hz.
    pub fwhm_hz: f64,
}

/// Steady state, regression, spectrum and fit in sequence.
pub fn linewidth(
    p: &PhysicalParams,
    ss_opts: &SteadyOptions,
    spec_opts: &SpectrumOptions,
    watchdog: &dyn Watchdog,
) -> Result<LinewidthReport> {
    let steady = meanfield::steady_state_with(p, ss_opts, watchdog)?;
    linewidth_from_steady(steady, p, spec_opts)
}

/// The spectral part of [`linewidth`] for an already converged steady state.
pub fn linewidth_from_steady(
    steady: SteadyReport,
    p: &PhysicalParams,
    spec_opts: &SpectrumOptions,
) -> Result<LinewidthReport> {
    let (dt, t_max) = auto_grid(&steady.state, p, spec_opts)?;
    let trace = regression_correlation(&steady.state, p, t_max, dt)?;
    let spectrum = power_spectrum(&trace, spec_opts.window, spec_opts.pad_factor)?;
    let fit = fit_lorentzian(&spectrum, None)?;
    Ok(LinewidthReport {
        modes: steady_modes(&steady.state, p),
        fwhm_hz: fit.fwhm_hz() - spectrum.window_broadening_hz,
        steady,
        trace,
        spectrum,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::hz;

    fn exp_trace(gamma: f64, omega: f64, dt: f64, n: usize) -> Vec<C64> {
        (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                C64::new(-gamma * t, omega * t).exp()
            })
            .collect()
    }

    #[test]
    fn sum_rule_and_real_symmetric() {
        let g1 = exp_trace(3.0, 0.0, 0.01, 1024);
        let s = power_spectrum_samples(&g1, 0.01, Window::None, 4).unwrap();
        assert!((s.integrated_power() - 1.0).abs() < 1e-12);
        let n = s.psd.len();
        // psd is even in frequency for a real correlation
        for k in 1..n / 2 {
            assert!((s.psd[n / 2 + k] - s.psd[n / 2 - k]).abs() < 1e-12);
        }
        let (f0, p0) = s.peak();
        assert_eq!(f0, 0.0);
        // trapezoid of 2 int e^{-3t}: 2/3 up to O((gamma dt)^2)
        assert!((p0 - 2.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn shifted_line() {
        let dt = 1e-3;
        let g1 = exp_trace(2.0, 2.0 * PI * 40.0, dt, 8192);
        let s = power_spectrum_samples(&g1, dt, Window::None, 8).unwrap();
        let fit = fit_lorentzian(&s, None).unwrap();
        assert!((fit.center_hz - 40.0).abs() < 1e-3);
        assert!((fit.fwhm_hz() / (2.0 / PI) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn undecayed_trace_is_refused_or_windowed() {
        let g1 = exp_trace(1.0, 0.0, 0.01, 200);
        assert!(matches!(
            power_spectrum_samples(&g1, 0.01, Window::None, 2),
            Err(Error::InsufficientDecay { .. })
        ));
        let s = power_spectrum_samples(&g1, 0.01, Window::ExponentialTail, 2).unwrap();
        assert!(s.window_broadening_hz > 0.0);
        assert!(!s.truncated);
    }

    #[test]
    fn closed_form_eigenvalues() {
        let m = [
            [C64::new(-3.0, 0.5), C64::new(0.0, 2.0)],
            [C64::new(0.0, -0.7), C64::new(-1.0, 0.0)],
        ];
        let [a, b] = eigenvalues_2x2(&m);
        assert!(a.re >= b.re);
        for l in [a, b] {
            let det = (m[0][0] - l) * (m[1][1] - l) - m[0][1] * m[1][0];
            assert!(det.norm() < 1e-12);
        }
    }

    #[test]
    fn decoupled_field_decay() {
        let p = PhysicalParams::new(hz(1e3), hz(1e6), 0.0, 0.0, hz(4e3), 0.0, 10.0).unwrap();
        let steady = MeanFieldState {
            n_photon: 2.0,
            coherence: C64::new(0.0, 0.0),
            inversion: 0.6,
            spin_corr: C64::new(0.0, 0.0),
        };
        // not a fixed point: n decays
        assert!(matches!(
            regression_correlation(&steady, &p, 1e-5, 1e-8),
            Err(Error::NotSteady { .. })
        ));
        let steady = MeanFieldState {
            n_photon: 0.0,
            ..steady
        };
        let tr = regression_correlation(&steady, &p, 2e-5, 1e-8).unwrap();
        assert!(tr.probe_seed);
        for (t, v) in tr.times().zip(&tr.g1).step_by(97) {
            let exact = (-0.5 * p.kappa() * t).exp();
            assert!((v.re - exact).abs() < 1e-12 && v.im.abs() < 1e-15);
        }
        assert!(matches!(
            regression_correlation(&steady, &p, 2e-5, 1e-6),
            Err(Error::Resolution { .. })
        ));
    }
}
