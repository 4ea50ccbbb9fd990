//! Pump-rate dependence of the inversion dynamics for the Pr:YSO rates.
//!
//! The fixed point is unstable for these rates and the state ends on a fast
//! limit cycle, so the plateau is read from 1 us block means of `sigma_z`.

use srl_core::meanfield::*;
use srl_core::*;

const BLOCK: usize = 1000;

fn block_means(eta_hz: f64) -> Vec<f64> {
    let p = PhysicalParams::from_hz(1e3, 5e6, 1.4e3, 1e5, eta_hz, 0.0, 1e11).unwrap();
    let start = MeanFieldState {
        inversion: -1.0,
        ..MeanFieldState::zero()
    };
    let ts: Vec<f64> = (0..20 * BLOCK).map(|k| 1e-9 * k as f64).collect();
    let opts = EvolveOptions {
        integrator: Integrator::Explicit,
        max_steps: 10_000_000,
        ..EvolveOptions::default()
    };
    let tr = evolve_with(&start, &p, ts[ts.len() - 1], Some(&ts), &opts, &NoWatchdog).unwrap();
    tr.states
        .chunks(BLOCK)
        .map(|c| c.iter().map(|s| s.inversion).sum::<f64>() / c.len() as f64)
        .collect()
}

/// Index of the first block after which all blocks stay near the final one.
fn settled_block(m: &[f64], tol: f64) -> usize {
    let last = *m.last().unwrap();
    m.iter().rposition(|v| (v - last).abs() > tol).map_or(0, |k| k + 1)
}

#[test]
fn weak_pump_settles_later() {
    let weak = block_means(3.9e4);
    let strong = block_means(2.51e5);
    let (tw, ts) = (settled_block(&weak, 1e-3), settled_block(&strong, 1e-3));
    assert!(ts < weak.len() - 5, "strong pump never settles: {strong:?}");
    assert!(tw > ts, "weak {tw} vs strong {ts}");
    // the plateau is a lasing state just above transparency
    assert!(strong.last().unwrap().abs() < 0.02);
}

#[test]
fn fixed_point_is_unstable() {
    let p = PhysicalParams::from_hz(1e3, 5e6, 1.4e3, 1e5, 2.51e5, 0.0, 1e11).unwrap();
    let r = steady_state_with(&p, &SteadyOptions::default(), &NoWatchdog).unwrap();
    assert!(!r.is_stable());
    assert!(r.growth_rate > 1e6);
}
