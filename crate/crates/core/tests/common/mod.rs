//! Dense-matrix oracles shared by the integration tests.
#![allow(dead_code)]

use edgepump::model::{Chain, TridiagonalOperator};
use edgepump::propagate::ThetaSchedule;
use edgepump::spectra::spectrum_at;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub fn dense(h: &TridiagonalOperator) -> DMatrix<f64> {
    let n = h.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = h.diag[i];
    }
    for i in 0..n - 1 {
        m[(i, i + 1)] = h.offdiag[i];
        m[(i + 1, i)] = h.offdiag[i];
    }
    m
}

/// `exp(-i H dt)` for real symmetric `H`, via its dense eigenbasis.
pub fn dense_propagator(h: &TridiagonalOperator, dt: f64) -> DMatrix<Complex64> {
    let eig = SymmetricEigen::new(dense(h));
    let n = h.len();
    let v = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
    let phases = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        eig.eigenvalues.iter().map(|&e| Complex64::from_polar(1.0, -e * dt)),
    ));
    &v * phases * v.transpose()
}

/// `⟨ψ_n|∂_θ ψ_m⟩` by central differences of sign-aligned eigenvectors.
pub fn fd_coupling(chain: &Chain, theta: f64, n: usize, m: usize) -> f64 {
    let h = 1e-5;
    let s0 = spectrum_at(chain, theta).unwrap();
    let align = |t: f64| {
        let s = spectrum_at(chain, t).unwrap();
        let v = s.state(m).to_vec();
        let d: f64 = v.iter().zip(s0.state(m)).map(|(a, b)| a * b).sum();
        v.into_iter().map(|x| x * d.signum()).collect::<Vec<_>>()
    };
    let (plus, minus) = (align(theta + h), align(theta - h));
    s0.state(n)
        .iter()
        .zip(plus.iter().zip(&minus))
        .map(|(a, (p, q))| a * (p - q) / (2.0 * h))
        .sum()
}

/// Final state of the exact midpoint-exponential product on `steps` steps.
pub fn dense_evolve(
    chain: &Chain,
    sched: &ThetaSchedule,
    psi0: &[Complex64],
    steps: usize,
) -> Vec<Complex64> {
    let h = sched.duration / steps as f64;
    let mut psi = DVector::from_vec(psi0.to_vec());
    for k in 0..steps {
        let theta = sched.theta_at((k as f64 + 0.5) * h);
        psi = dense_propagator(&chain.hamiltonian(theta), h) * psi;
    }
    psi.iter().copied().collect()
}

/// Sorted eigenvalues from the dense symmetric solver.
pub fn dense_eigenvalues(h: &TridiagonalOperator) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(dense(h)).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}
