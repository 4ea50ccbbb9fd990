//! Numerical core for simulating a steady-state superradiant laser built from
//! an inhomogeneously broadened ensemble of rare-earth ions in a bad cavity.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. It contains:
//!
//! * [`model`]: parameter sets and the closed-form linewidth and cooperativity
//!   relations,
//! * [`meanfield`]: the four coupled mean-field moments, their stiff time
//!   evolution and steady states,
//! * [`spectrum`]: two-time field correlations by quantum regression, the
//!   emission spectrum and Lorentzian linewidth extraction,
//! * [`dicke`]: an exact small-ensemble master-equation solver in the
//!   permutation-invariant Dicke basis, used to cross-check the mean field,
//! * [`sweep`]: per-cell evaluation for `(N, eta)` maps and their overlay
//!   curves.
//!
//! All rates are stored as angular frequencies (rad/s). Conversion from the
//! ordinary frequencies (Hz) used in configuration files happens at the
//! boundary, see [`model::hz`].

#![no_std]
#![deny(unused_must_use)]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod dicke;
mod error;
pub mod linalg;
pub mod meanfield;
pub mod model;
pub mod ode;
pub mod spectrum;
pub mod sweep;

pub use error::{Error, Result};
pub use meanfield::{MeanFieldState, Trajectory};
pub use model::{CavityGeometry, DerivedQuantities, MaterialParams, PhysicalParams};

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex64;

/// Cooperative cancellation hook for long computations.
///
/// Integrators poll [`Watchdog::expired`] once per step and abort with
/// [`Error::Interrupted`] when it returns `true`.
pub trait Watchdog {
    fn expired(&self) -> bool;
}

/// A watchdog that never fires.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoWatchdog;

impl Watchdog for NoWatchdog {
    #[inline]
    fn expired(&self) -> bool {
        false
    }
}

impl<F: Fn() -> bool> Watchdog for F {
    fn expired(&self) -> bool {
        self()
    }
}
