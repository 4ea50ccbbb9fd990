mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srl_core::dicke::*;
use srl_core::{NoWatchdog, PhysicalParams, C64};
use support::brute::{BruteRates, BruteSystem};

fn rates() -> OracleParams {
    OracleParams {
        gamma_collective: 0.2,
        gamma_down: 0.9,
        gamma_up: 0.6,
        gamma_dephase: 0.5,
        g: 2.2,
        kappa: 3.0,
        delta: 0.4,
        n_fock: 4,
    }
}

fn brute_of(op: &OracleParams) -> BruteRates {
    BruteRates {
        gamma_collective: op.gamma_collective,
        gamma_down: op.gamma_down,
        gamma_up: op.gamma_up,
        gamma_dephase: op.gamma_dephase,
        g: op.g,
        kappa: op.kappa,
        delta: op.delta,
    }
}

fn compare_dynamics(op: &OracleParams, n_tls: usize) {
    let brute = BruteSystem::new(&brute_of(op), n_tls, op.n_fock);
    let h = 2.5e-4;
    let reference = brute.evolve(&brute.excited(), h, 8000, 400);

    let space = DickeSpace::new(n_tls, op.n_fock).unwrap();
    let l = build_liouvillian(op, &space, DEFAULT_MEMORY_CAP).unwrap();
    let times: Vec<f64> = reference.iter().map(|r| r.0).collect();
    let tr = me_evolve(&l, &DensityState::excited(&space), &times, 1e-12, &NoWatchdog).unwrap();
    for (k, (t, n, jz)) in reference.iter().enumerate() {
        assert!((tr.n_photon[k] - n).abs() < 1e-8, "N={n_tls} t={t}: {} vs {n}", tr.n_photon[k]);
        assert!((tr.jz_per_atom[k] - jz).abs() < 1e-8, "N={n_tls} t={t}: {} vs {jz}", tr.jz_per_atom[k]);
    }
    assert!(tr.trace_error < 1e-9);
    assert!(tr.hermiticity_error < 1e-10);
    assert!(tr.min_eigenvalue > -1e-8);
}

#[test]
fn matches_brute_force_two_atoms() {
    compare_dynamics(&rates(), 2);
}

#[test]
fn matches_brute_force_three_atoms() {
    compare_dynamics(&rates(), 3);
}

#[test]
fn matches_brute_force_four_atoms_without_cavity_coupling() {
    let mut op = rates();
    op.g = 0.0;
    op.n_fock = 2;
    compare_dynamics(&op, 4);
}

#[test]
fn trace_of_generator_vanishes_on_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let space = DickeSpace::new(5, 5).unwrap();
    for _ in 0..100 {
        let op = OracleParams {
            gamma_collective: rng.gen_range(0.0..2.0),
            gamma_down: rng.gen_range(0.0..2.0),
            gamma_up: rng.gen_range(0.0..2.0),
            gamma_dephase: rng.gen_range(0.0..2.0),
            g: rng.gen_range(0.0..3.0),
            kappa: rng.gen_range(0.0..5.0),
            delta: rng.gen_range(-1.0..1.0),
            n_fock: 5,
        };
        let l = build_liouvillian(&op, &space, DEFAULT_MEMORY_CAP).unwrap();
        // populations positive, coherences small: the generator's trace
        // functional only sees the populations of L rho
        let data: Vec<C64> = (0..space.dim())
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let rho = DensityState::from_vec(&space, data).unwrap();
        let mut out = vec![C64::new(0.0, 0.0); space.dim()];
        l.apply(rho.as_slice(), &mut out);
        let lrho = DensityState::from_vec(&space, out).unwrap();
        assert!(lrho.trace().abs() < 1e-10, "{}", lrho.trace());
    }
}

#[test]
fn direct_and_propagated_steady_states_agree() {
    let mut op = rates();
    op.gamma_up = 4.0;
    let space = DickeSpace::new(4, 6).unwrap();
    op.n_fock = 6;
    let l = build_liouvillian(&op, &space, DEFAULT_MEMORY_CAP).unwrap();
    let a = me_steady_state(&l, MeSteadyMethod::Direct, &NoWatchdog).unwrap();
    let b = me_steady_state(&l, MeSteadyMethod::Propagation, &NoWatchdog).unwrap();
    assert!(!a.fell_back);
    assert!(a.state.photon_number() > 1e-3);
    assert!((a.state.photon_number() - b.state.photon_number()).abs() < 1e-6);
    assert!((a.state.trace() - 1.0).abs() < 1e-9);
    assert!(a.state.hermiticity_error() < 1e-10);
    assert!(a.state.min_eigenvalue() > -1e-8);
}

#[test]
fn truncation_convergence() {
    // a weakly driven laser: raising the cut by half changes little
    let p = PhysicalParams::new(1.0, 20.0, 3.0, 0.0, 6.0, 0.0, 4.0).unwrap();
    let photons = |n_fock: usize| {
        let op = OracleParams::from_physical(&p, n_fock);
        let space = DickeSpace::new(4, n_fock).unwrap();
        let l = build_liouvillian(&op, &space, DEFAULT_MEMORY_CAP).unwrap();
        me_steady_state(&l, MeSteadyMethod::Direct, &NoWatchdog)
            .unwrap()
            .state
            .photon_number()
    };
    let a = photons(8);
    let b = photons(12);
    assert!(((a - b) / b).abs() < 1e-2, "{a} {b}");
}

#[test]
fn uncoupled_comparison_rows_are_zero() {
    let p = PhysicalParams::new(1.0, 20.0, 0.0, 0.0, 2.0, 0.0, 2.0).unwrap();
    let rows = compare_mft_me(&p, &[2, 3], &[0.5, 2.0], 8, &NoWatchdog).unwrap();
    for r in rows {
        assert_eq!(r.mft, Some(0.0));
        assert!(r.me.abs() < 1e-14);
        assert_eq!(r.ratio, Some(1.0));
    }
}
