//! Levenberg-Marquardt fit of a single Lorentzian line.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_traits::Float;

use crate::{Error, Result};

/// Minimum number of samples at or above half maximum.
pub const MIN_HALF_MAX_POINTS: usize = 16;
/// Half-width of the fit window in units of the estimated FWHM.
pub const WINDOW_FWHMS: f64 = 5.0;
/// Largest accepted RMS residual relative to the peak; above it the line is
/// not a single Lorentzian (a vacuum Rabi doublet, for instance).
pub const MAX_RMS_RESIDUAL: f64 = 0.05;
const MAX_ITERATIONS: usize = 200;
const STEP_TOL: f64 = 1e-10;

/// `F(nu) = (A / pi) sigma / ((nu - nu0)^2 + sigma^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct LorentzianFit {
    pub amplitude: f64,
    /// Line center, Hz.
    pub center_hz: f64,
    /// Half width at half maximum, Hz.
    pub hwhm_hz: f64,
    /// RMS residual over the fit window divided by the peak value.
    pub rms_residual: f64,
    pub iterations: usize,
}

impl LorentzianFit {
    pub fn fwhm_hz(&self) -> f64 {
        2.0 * self.hwhm_hz
    }

    pub fn eval(&self, nu: f64) -> f64 {
        lorentzian(self.amplitude, self.center_hz, self.hwhm_hz, nu)
    }
}

pub fn lorentzian(amplitude: f64, center: f64, hwhm: f64, nu: f64) -> f64 {
    let d = nu - center;
    amplitude / PI * hwhm / (d * d + hwhm * hwhm)
}

/// Crossing of `level` between samples `i` and `j` by linear interpolation.
fn crossing(freqs: &[f64], psd: &[f64], i: usize, j: usize, level: f64) -> f64 {
    let t = (psd[i] - level) / (psd[i] - psd[j]);
    freqs[i] + t * (freqs[j] - freqs[i])
}

/// Fits a Lorentzian to `(freqs, psd)`; `freqs` must be increasing.
///
/// Without `init` the center starts at the maximum and the width at the
/// discrete half-maximum crossings. Only samples within
/// [`WINDOW_FWHMS`] estimated FWHMs of the center enter the unweighted
/// least-squares problem.
pub fn fit_lorentzian(freqs: &[f64], psd: &[f64], init: Option<&LorentzianFit>) -> Result<LorentzianFit> {
    if freqs.len() != psd.len() || freqs.is_empty() {
        return Err(Error::invalid("spectrum", "frequency and psd lengths differ or are zero"));
    }
    let peak_idx = match init {
        Some(f) => freqs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - f.center_hz).abs().total_cmp(&(b.1 - f.center_hz).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0),
        None => psd
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0),
    };
    let peak = psd[peak_idx];
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::EmptyCorrelation);
    }
    let half = 0.5 * peak;
    let mut lo = peak_idx;
    while lo > 0 && psd[lo - 1] >= half {
        lo -= 1;
    }
    let mut hi = peak_idx;
    while hi + 1 < psd.len() && psd[hi + 1] >= half {
        hi += 1;
    }
    let points = hi - lo + 1;
    if points < MIN_HALF_MAX_POINTS {
        return Err(Error::SpectralResolution {
            points,
            required: MIN_HALF_MAX_POINTS,
        });
    }
    let center0 = init.map_or(freqs[peak_idx], |f| f.center_hz);
    let hwhm0 = match init {
        Some(f) if f.hwhm_hz > 0.0 => f.hwhm_hz,
        _ => {
            let left = (lo > 0).then(|| crossing(freqs, psd, lo, lo - 1, half));
            let right = (hi + 1 < psd.len()).then(|| crossing(freqs, psd, hi, hi + 1, half));
            match (left, right) {
                (Some(l), Some(r)) => 0.5 * (r - l),
                (Some(l), None) => center0 - l,
                (None, Some(r)) => r - center0,
                (None, None) => 0.5 * (freqs[hi] - freqs[lo]),
            }
        }
    };
    if !(hwhm0 > 0.0) {
        return Err(Error::SpectralResolution {
            points,
            required: MIN_HALF_MAX_POINTS,
        });
    }

    // normalized coordinates: x in units of the width estimate, y in units of the peak
    let reach = WINDOW_FWHMS * 2.0 * hwhm0;
    let (xs, ys): (Vec<f64>, Vec<f64>) = freqs
        .iter()
        .zip(psd)
        .filter(|(f, _)| (*f - center0).abs() <= reach)
        .map(|(f, p)| ((f - center0) / hwhm0, p / peak))
        .unzip();

    let sse = |q: &Vector3<f64>| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(x, y)| {
                let r = y - lorentzian(q[0], q[1], q[2], *x);
                r * r
            })
            .sum()
    };
    let mut q = Vector3::new(PI, 0.0, 1.0);
    let mut cost = sse(&q);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (x, y) in xs.iter().zip(&ys) {
            let (a, x0, s) = (q[0], q[1], q[2]);
            let d = x - x0;
            let den = d * d + s * s;
            let f = a / PI * s / den;
            let jac = Vector3::new(
                s / (PI * den),
                a * s * 2.0 * d / (PI * den * den),
                a / PI * (d * d - s * s) / (den * den),
            );
            jtj += jac * jac.transpose();
            jtr += jac * (y - f);
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] *= 1.0 + lambda;
            }
            let Some(step) = damped.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = q + step;
            if trial[2] <= 0.0 {
                lambda *= 10.0;
                continue;
            }
            let trial_cost = sse(&trial);
            if trial_cost <= cost {
                let rel = (step[0] / trial[0])
                    .abs()
                    .max((step[1] / trial[2]).abs())
                    .max((step[2] / trial[2]).abs());
                q = trial;
                cost = trial_cost;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                converged = rel < STEP_TOL;
                break;
            }
            lambda *= 10.0;
        }
        // no downhill step exists at working precision
        if !accepted || converged {
            converged = true;
            break;
        }
    }
    let fit = LorentzianFit {
        amplitude: q[0] * peak * hwhm0,
        center_hz: center0 + q[1] * hwhm0,
        hwhm_hz: q[2] * hwhm0,
        rms_residual: Float::sqrt(cost / xs.len() as f64),
        iterations,
    };
    if converged && fit.rms_residual <= MAX_RMS_RESIDUAL {
        Ok(fit)
    } else if converged {
        Err(Error::NotLorentzian {
            residual: fit.rms_residual,
            best: fit,
        })
    } else {
        Err(Error::FitNonConvergence {
            residual: fit.rms_residual,
            best: fit,
        })
    }
}
