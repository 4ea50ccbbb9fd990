//! Brute-force master equation on the full `2^N x n_fock` Hilbert space, with
//! no permutation reduction. Used only as a test oracle.

#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

pub struct BruteRates {
    pub gamma_collective: f64,
    pub gamma_down: f64,
    pub gamma_up: f64,
    pub gamma_dephase: f64,
    pub g: f64,
    pub kappa: f64,
    pub delta: f64,
}

pub struct BruteSystem {
    pub n_tls: usize,
    pub n_fock: usize,
    pub dim: usize,
    /// Superoperator on row-major `rho`, as (row, col, value).
    sparse: Vec<(usize, usize, C64)>,
    pub number: DMatrix<C64>,
    pub jz: DMatrix<C64>,
}

fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

fn eye(n: usize) -> DMatrix<C64> {
    DMatrix::identity(n, n)
}

impl BruteSystem {
    pub fn new(r: &BruteRates, n_tls: usize, n_fock: usize) -> Self {
        let c = |x: f64| C64::new(x, 0.0);
        // qubit basis: index 0 = ground, 1 = excited
        let sm = DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]);
        let sz_half = DMatrix::from_row_slice(2, 2, &[c(-0.5), c(0.0), c(0.0), c(0.5)]);
        let mut a = DMatrix::zeros(n_fock, n_fock);
        for n in 1..n_fock {
            a[(n - 1, n)] = c((n as f64).sqrt());
        }
        // site operator: qubit k in the spin register, then the cavity
        let id2 = eye(2);
        let site = |op: &DMatrix<C64>, k: usize| {
            let mut m = DMatrix::from_element(1, 1, c(1.0));
            for q in 0..n_tls {
                m = kron(&m, if q == k { op } else { &id2 });
            }
            kron(&m, &eye(n_fock))
        };
        let cav = kron(&eye(1 << n_tls), &a);
        let dim = (1 << n_tls) * n_fock;
        let mut jm = DMatrix::zeros(dim, dim);
        let mut jz = DMatrix::zeros(dim, dim);
        let mut locals = Vec::new();
        for k in 0..n_tls {
            let s = site(&sm, k);
            let z = site(&sz_half, k);
            jm += &s;
            jz += &z;
            locals.push((s, z));
        }
        let number = cav.adjoint() * &cav;
        let h = &number * c(r.delta) + (cav.adjoint() * &jm + &cav * jm.adjoint()) * c(0.5 * r.g);

        let mut jumps: Vec<(f64, DMatrix<C64>)> = vec![(r.kappa, cav.clone()), (r.gamma_collective, jm.clone())];
        for (s, z) in &locals {
            jumps.push((r.gamma_down, s.clone()));
            jumps.push((r.gamma_up, s.adjoint()));
            jumps.push((r.gamma_dephase, z.clone()));
        }
        jumps.retain(|(rate, _)| *rate > 0.0);

        let apply = |rho: &DMatrix<C64>| {
            let mut out = (&h * rho - rho * &h) * C64::new(0.0, -1.0);
            for (rate, op) in &jumps {
                let ad = op.adjoint();
                let ada = &ad * op;
                out += (op * rho * &ad * c(2.0) - &ada * rho - rho * &ada) * c(0.5 * rate);
            }
            out
        };
        let mut sparse = Vec::new();
        for col in 0..dim * dim {
            let mut e = DMatrix::zeros(dim, dim);
            e[(col / dim, col % dim)] = c(1.0);
            let l = apply(&e);
            for i in 0..dim {
                for j in 0..dim {
                    let v = l[(i, j)];
                    if v.norm() > 0.0 {
                        sparse.push((i * dim + j, col, v));
                    }
                }
            }
        }
        Self {
            n_tls,
            n_fock,
            dim,
            sparse,
            number,
            jz,
        }
    }

    fn rhs(&self, x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for &(r, c, v) in &self.sparse {
            y[r] += v * x[c];
        }
    }

    /// All atoms excited, cavity empty.
    pub fn excited(&self) -> Vec<C64> {
        let mut rho = vec![C64::new(0.0, 0.0); self.dim * self.dim];
        let k = ((1 << self.n_tls) - 1) * self.n_fock;
        rho[k * self.dim + k] = C64::new(1.0, 0.0);
        rho
    }

    pub fn expect(&self, rho: &[C64], op: &DMatrix<C64>) -> f64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += op[(j, i)] * rho[i * self.dim + j];
            }
        }
        acc.re
    }

    /// Classical fourth-order Runge-Kutta with fixed step `h`, reporting
    /// `(<a+a>, <J_z>/N)` at every multiple of `every` steps.
    pub fn evolve(&self, rho0: &[C64], h: f64, steps: usize, every: usize) -> Vec<(f64, f64, f64)> {
        let n = rho0.len();
        let mut x = rho0.to_vec();
        let (mut k1, mut k2, mut k3, mut k4) = (vec![C64::default(); n], vec![C64::default(); n], vec![C64::default(); n], vec![C64::default(); n]);
        let mut tmp = vec![C64::default(); n];
        let mut out = Vec::new();
        for s in 1..=steps {
            self.rhs(&x, &mut k1);
            for i in 0..n {
                tmp[i] = x[i] + k1[i] * (0.5 * h);
            }
            self.rhs(&tmp, &mut k2);
            for i in 0..n {
                tmp[i] = x[i] + k2[i] * (0.5 * h);
            }
            self.rhs(&tmp, &mut k3);
            for i in 0..n {
                tmp[i] = x[i] + k3[i] * h;
            }
            self.rhs(&tmp, &mut k4);
            for i in 0..n {
                x[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0);
            }
            if s % every == 0 {
                let t = s as f64 * h;
                out.push((t, self.expect(&x, &self.number), self.expect(&x, &self.jz) / self.n_tls as f64));
            }
        }
        out
    }
}
