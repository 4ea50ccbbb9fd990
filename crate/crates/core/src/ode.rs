//! Adaptive integrators.
//!
//! [`Extrapolated`] is the extrapolated linearly implicit Euler method, used
//! for the stiff mean-field system whose rates span five or more decades. [`DormandPrince`] is the explicit 5(4) pair, used for the
//! master-equation propagation where the generator is large and sparse.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::{Error, Result, Watchdog, C64};

/// An autonomous system `dy/dt = f(y)` with an analytic Jacobian.
pub trait StiffSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, y: &[f64], dy: &mut [f64]);
    fn jacobian(&self, y: &[f64], jac: &mut DMatrix<f64>);
}

#[derive(Clone, Debug)]
pub struct StepControl {
    pub rtol: f64,
    /// Absolute tolerance per component.
    pub atol: Vec<f64>,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

/// Extrapolated linearly implicit Euler method for stiff systems.
///
/// A step of size `H` is taken with `n = 1, 2, .., K` linearly implicit
/// Euler substeps, `(I - h J) dy = h f(y)` with the Jacobian `J` frozen at the
/// start, and the results are extrapolated to `h -> 0`. The advanced solution
/// has order `K`, the error estimate order `K - 1`.
pub struct Extrapolated<'a, S: StiffSystem> {
    sys: &'a S,
    ctl: StepControl,
    order: usize,
    t: f64,
    y: Vec<f64>,
    f0: Vec<f64>,
    h: f64,
    steps: usize,
    jac: DMatrix<f64>,
}

/// Default extrapolation depth.
pub const DEFAULT_ORDER: usize = 5;

impl<'a, S: StiffSystem> Extrapolated<'a, S> {
    pub fn new(sys: &'a S, y0: &[f64], ctl: StepControl) -> Self {
        Self::with_order(sys, y0, ctl, DEFAULT_ORDER)
    }

    /// # Panics
    ///
    /// If `order` is outside `2..=8` or the tolerance vector has the wrong length.
    pub fn with_order(sys: &'a S, y0: &[f64], ctl: StepControl, order: usize) -> Self {
        let n = sys.dim();
        assert!((2..=8).contains(&order), "order {order} outside 2..=8");
        assert_eq!(y0.len(), n);
        assert_eq!(ctl.atol.len(), n);
        let mut f0 = vec![0.0; n];
        sys.rhs(y0, &mut f0);
        Self {
            sys,
            h: ctl.h_init,
            ctl,
            order,
            t: 0.0,
            y: y0.to_vec(),
            f0,
            steps: 0,
            jac: DMatrix::zeros(n, n),
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Derivative at the current point.
    pub fn dydt(&self) -> &[f64] {
        &self.f0
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Linearly implicit Euler over `h_total` in `substeps` pieces.
    fn euler_sweep(&self, h_total: f64, substeps: usize, out: &mut [f64]) -> Result<()> {
        let n = self.y.len();
        let h = h_total / substeps as f64;
        let lu = (DMatrix::<f64>::identity(n, n) - &self.jac * h).lu();
        out.copy_from_slice(&self.y);
        let mut f = DVector::from_column_slice(&self.f0);
        let mut buf = vec![0.0; n];
        for s in 0..substeps {
            if s > 0 {
                self.sys.rhs(out, &mut buf);
                f.copy_from_slice(&buf);
            }
            let dy = lu.solve(&(&f * h)).ok_or(Error::Singular)?;
            for i in 0..n {
                out[i] += dy[i];
            }
        }
        Ok(())
    }

    /// Advances by one accepted step that does not pass `t_limit`.
    pub fn step(&mut self, t_limit: f64, watchdog: &dyn Watchdog) -> Result<()> {
        let n = self.y.len();
        let k = self.order;
        let mut table: Vec<Vec<f64>> = vec![vec![0.0; n]; k];
        self.sys.jacobian(&self.y, &mut self.jac);
        loop {
            if watchdog.expired() {
                return Err(Error::Interrupted { t: self.t });
            }
            if self.steps >= self.ctl.max_steps {
                return Err(Error::StepBudget {
                    steps: self.steps,
                    t: self.t,
                });
            }
            let remaining = t_limit - self.t;
            let mut h = self.h.min(self.ctl.h_max);
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            let h_floor = 16.0 * f64::EPSILON * self.t.abs().max(f64::MIN_POSITIVE);
            if h <= h_floor {
                return Err(Error::StepSizeUnderflow { t: self.t });
            }

            // Aitken-Neville on the substep counts 1..=k; table[j] ends as T_{k,k-j}
            let mut prev_diag = vec![0.0; n];
            for j in 0..k {
                self.euler_sweep(h, j + 1, &mut table[j])?;
                for m in (0..j).rev() {
                    let ratio = (j + 1) as f64 / (m + 1) as f64 - 1.0;
                    for i in 0..n {
                        table[m][i] = table[m + 1][i] + (table[m + 1][i] - table[m][i]) / ratio;
                    }
                }
                if j + 2 == k {
                    prev_diag.copy_from_slice(&table[0]);
                }
            }
            let y_new = &table[0];

            let mut err = 0.0f64;
            let mut finite = true;
            for i in 0..n {
                let e = y_new[i] - prev_diag[i];
                let scale = self.ctl.atol[i] + self.ctl.rtol * self.y[i].abs().max(y_new[i].abs());
                err = err.max(e.abs() / scale);
                finite &= y_new[i].is_finite();
            }
            if !finite || err.is_nan() {
                err = f64::INFINITY;
            }
            let expo = -1.0 / k as f64;
            if err <= 1.0 {
                self.t = if last { t_limit } else { self.t + h };
                self.y.copy_from_slice(y_new);
                self.sys.rhs(&self.y, &mut self.f0);
                self.steps += 1;
                let grow = if err == 0.0 {
                    5.0
                } else {
                    (0.8 * Float::powf(err, expo)).min(5.0)
                };
                // a step clipped to hit t_limit says nothing about the natural size
                if !last || grow < 1.0 {
                    self.h = h * grow;
                }
                return Ok(());
            }
            let shrink = if err.is_finite() {
                (0.8 * Float::powf(err, expo)).max(0.1)
            } else {
                0.1
            };
            self.h = h * shrink;
        }
    }
}

/// Explicit Dormand-Prince 5(4) integrator for complex vector fields.
pub struct DormandPrince<F> {
    f: F,
    rtol: f64,
    atol: f64,
    t: f64,
    y: Vec<C64>,
    k: [Vec<C64>; 7],
    h: f64,
    steps: usize,
    max_steps: usize,
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

impl<F: FnMut(&[C64], &mut [C64])> DormandPrince<F> {
    pub fn new(mut f: F, y0: Vec<C64>, rtol: f64, atol: f64, h_init: f64, max_steps: usize) -> Self {
        let n = y0.len();
        let mut k0 = vec![C64::new(0.0, 0.0); n];
        f(&y0, &mut k0);
        let zeros = || vec![C64::new(0.0, 0.0); n];
        Self {
            f,
            rtol,
            atol,
            t: 0.0,
            y: y0,
            k: [k0, zeros(), zeros(), zeros(), zeros(), zeros(), zeros()],
            h: h_init,
            steps: 0,
            max_steps,
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[C64] {
        &self.y
    }

    pub fn dydt(&self) -> &[C64] {
        &self.k[0]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Advances by one accepted step that does not pass `t_limit`.
    pub fn step(&mut self, t_limit: f64, watchdog: &dyn Watchdog) -> Result<()> {
        let n = self.y.len();
        let mut tmp = vec![C64::new(0.0, 0.0); n];
        let mut y_new = vec![C64::new(0.0, 0.0); n];
        loop {
            if watchdog.expired() {
                return Err(Error::Interrupted { t: self.t });
            }
            if self.steps >= self.max_steps {
                return Err(Error::StepBudget {
                    steps: self.steps,
                    t: self.t,
                });
            }
            let remaining = t_limit - self.t;
            let mut h = self.h;
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            if h <= 16.0 * f64::EPSILON * self.t.abs().max(f64::MIN_POSITIVE) {
                return Err(Error::StepSizeUnderflow { t: self.t });
            }
            let y = &self.y;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            for i in 0..n {
                tmp[i] = y[i] + k1[i] * (h * A21);
            }
            (self.f)(&tmp, k2);
            for i in 0..n {
                tmp[i] = y[i] + (k1[i] * A31 + k2[i] * A32) * h;
            }
            (self.f)(&tmp, k3);
            for i in 0..n {
                tmp[i] = y[i] + (k1[i] * A41 + k2[i] * A42 + k3[i] * A43) * h;
            }
            (self.f)(&tmp, k4);
            for i in 0..n {
                tmp[i] = y[i] + (k1[i] * A51 + k2[i] * A52 + k3[i] * A53 + k4[i] * A54) * h;
            }
            (self.f)(&tmp, k5);
            for i in 0..n {
                tmp[i] = y[i]
                    + (k1[i] * A61 + k2[i] * A62 + k3[i] * A63 + k4[i] * A64 + k5[i] * A65) * h;
            }
            (self.f)(&tmp, k6);
            for i in 0..n {
                y_new[i] =
                    y[i] + (k1[i] * B1 + k3[i] * B3 + k4[i] * B4 + k5[i] * B5 + k6[i] * B6) * h;
            }
            (self.f)(&y_new, k7);
            let mut err = 0.0f64;
            for i in 0..n {
                let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7)
                    * h;
                let scale = self.atol + self.rtol * y[i].norm().max(y_new[i].norm());
                err = err.max(e.norm() / scale);
            }
            if err.is_nan() {
                err = f64::INFINITY;
            }
            if err <= 1.0 {
                self.t = if last { t_limit } else { self.t + h };
                core::mem::swap(&mut self.y, &mut y_new);
                self.k.swap(0, 6);
                self.steps += 1;
                let grow = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * Float::powf(err, -0.2)).min(5.0)
                };
                if !last || grow < 1.0 {
                    self.h = h * grow;
                }
                return Ok(());
            }
            let shrink = if err.is_finite() {
                (0.9 * Float::powf(err, -0.2)).max(0.1)
            } else {
                0.1
            };
            self.h = h * shrink;
        }
    }
}
