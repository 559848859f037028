//! Two-level Landau-Zener-Stückelberg model
//! `H(t) = g σx + A cos(2πt/T) σz`, integrated over one period.
//!
//! The avoided crossings sit at `t = T/4` and `3T/4`, where the bias
//! vanishes and the gap is `2g`.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TridiagonalOperator;
use crate::propagate::{norm, CnStepper, DtPolicy, NORM_ABORT};
use crate::spectra::Branch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LzsParams {
    pub g: f64,
    pub a: f64,
    pub period: f64,
}

impl LzsParams {
    pub fn new(g: f64, a: f64, period: f64) -> Result<Self> {
        let p = Self { g, a, period };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g >= 0.0 && self.a >= 0.0 && self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need g >= 0, A >= 0, T > 0 (got g = {}, A = {}, T = {})",
                self.g, self.a, self.period
            )));
        }
        Ok(())
    }

    fn bias(&self, t: f64) -> f64 {
        self.a * (2.0 * std::f64::consts::PI * t / self.period).cos()
    }
}

/// `H(t)` as a 2-site tridiagonal operator. A negative `g` is accepted here
/// so that the `g -> -g` relabeling can be exercised.
pub fn lzs_hamiltonian(p: &LzsParams, t: f64) -> TridiagonalOperator {
    let b = p.bias(t);
    TridiagonalOperator {
        diag: vec![b, -b],
        offdiag: vec![p.g],
    }
}

/// Eigenpairs of `[[b, g], [g, -b]]`: `(E, v)` for the requested branch.
fn eigenpair(b: f64, g: f64, branch: Branch) -> (f64, [f64; 2]) {
    let r = b.hypot(g);
    let half = 0.5 * g.atan2(b);
    match branch {
        Branch::Positive => (r, [half.cos(), half.sin()]),
        Branch::Negative => (-r, [-half.sin(), half.cos()]),
    }
}

/// Occupation of the tracked instantaneous eigenstate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LzsSeries {
    pub params: LzsParams,
    pub branch: Branch,
    pub t: Vec<f64>,
    pub rho: Vec<f64>,
    pub energy_gap: Vec<f64>,
    pub norms: Vec<f64>,
    pub dt: f64,
}

impl LzsSeries {
    pub fn final_rho(&self) -> f64 {
        *self.rho.last().expect("series has samples")
    }

    pub fn max_norm_drift(&self) -> f64 {
        self.norms.iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,rho,energy_gap")?;
        for i in 0..self.t.len() {
            writeln!(
                out,
                "{:.10},{:.12e},{:.12e}",
                self.t[i], self.rho[i], self.energy_gap[i]
            )?;
        }
        Ok(())
    }

    /// Ratio of the largest `|dρ/dt|` outside the crossing windows
    /// `T/4 ± T/20`, `3T/4 ± T/20` to the largest inside them.
    pub fn off_window_derivative_ratio(&self) -> f64 {
        let period = self.params.period;
        let half = period / 20.0;
        let in_window = |t: f64| {
            (t - 0.25 * period).abs() <= half || (t - 0.75 * period).abs() <= half
        };
        let (mut inside, mut outside) = (0.0_f64, 0.0_f64);
        for i in 0..self.t.len().saturating_sub(1) {
            let rate = ((self.rho[i + 1] - self.rho[i]) / (self.t[i + 1] - self.t[i])).abs();
            let tm = 0.5 * (self.t[i] + self.t[i + 1]);
            if in_window(tm) {
                inside = inside.max(rate);
            } else {
                outside = outside.max(rate);
            }
        }
        if inside == 0.0 {
            if outside == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            outside / inside
        }
    }
}

/// Instantaneous eigenstate of the chosen branch at `t = 0`.
pub fn lzs_initial_state(p: &LzsParams, branch: Branch) -> [Complex64; 2] {
    let (_, v) = eigenpair(p.bias(0.0), p.g, branch);
    [v[0].into(), v[1].into()]
}

/// Crank-Nicolson integration over `[0, T]` with a step close to `dt`.
///
/// The reference state is the instantaneous eigenstate continuously
/// connected to the chosen branch at `t = 0`: at each step the eigenvector
/// with the larger overlap with the previous one is kept, so exact
/// crossings at `g = 0` are followed diabatically.
pub fn lzs_evolve_fixed(
    p: &LzsParams,
    psi0: Option<[Complex64; 2]>,
    branch: Branch,
    dt: f64,
    samples: usize,
) -> Result<LzsSeries> {
    if !(p.period > 0.0 && p.period.is_finite()) {
        return Err(Error::InvalidParameter(format!("T must be positive, got {}", p.period)));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let mut psi = psi0.unwrap_or_else(|| lzs_initial_state(p, branch));
    let n0 = norm(&psi);
    if (n0 - 1.0).abs() > 1e-12 {
        return Err(Error::NotNormalized { norm: n0 });
    }
    let samples = samples.max(2);
    let intervals = samples - 1;
    let per_sample = ((p.period / dt) / intervals as f64).ceil().max(1.0) as usize;
    let steps = per_sample * intervals;
    let dt = p.period / steps as f64;

    let mut series = LzsSeries {
        params: *p,
        branch,
        t: Vec::with_capacity(samples),
        rho: Vec::with_capacity(samples),
        energy_gap: Vec::with_capacity(samples),
        norms: Vec::with_capacity(samples),
        dt,
    };
    let mut reference = eigenpair(p.bias(0.0), p.g, branch).1;
    let record = |s: &mut LzsSeries, t: f64, psi: &[Complex64; 2], v: [f64; 2]| {
        let amp = psi[0] * v[0] + psi[1] * v[1];
        s.t.push(t);
        s.rho.push(amp.norm_sqr().min(1.0));
        s.energy_gap.push(2.0 * p.bias(t).hypot(p.g));
        s.norms.push(norm(psi));
    };
    record(&mut series, 0.0, &psi, reference);

    let mut stepper = CnStepper::new(2);
    for k in 0..steps {
        let h = lzs_hamiltonian(p, (k as f64 + 0.5) * dt);
        stepper.step_operator(&h, dt, &mut psi, k)?;
        let t = if k + 1 == steps { p.period } else { (k + 1) as f64 * dt };
        reference = follow(p.bias(t), p.g, reference);
        if (k + 1) % per_sample == 0 {
            record(&mut series, t, &psi, reference);
            let drift = (series.norms.last().unwrap() - 1.0).abs();
            if drift > NORM_ABORT {
                return Err(Error::NormDrift { drift, time: t });
            }
        }
    }
    Ok(series)
}

fn follow(b: f64, g: f64, prev: [f64; 2]) -> [f64; 2] {
    let (_, up) = eigenpair(b, g, Branch::Positive);
    let (_, down) = eigenpair(b, g, Branch::Negative);
    let dot = |v: [f64; 2]| v[0] * prev[0] + v[1] * prev[1];
    let (v, d) = if dot(up).abs() >= dot(down).abs() {
        (up, dot(up))
    } else {
        (down, dot(down))
    };
    if d < 0.0 { [-v[0], -v[1]] } else { v }
}

/// [`lzs_evolve_fixed`] under a dt policy; the convergence check is on the
/// final `ρ`.
pub fn lzs_evolve(
    p: &LzsParams,
    psi0: Option<[Complex64; 2]>,
    branch: Branch,
    policy: DtPolicy,
    samples: usize,
) -> Result<LzsSeries> {
    p.validate()?;
    match policy {
        DtPolicy::Fixed { dt } => lzs_evolve_fixed(p, psi0, branch, dt, samples),
        DtPolicy::Converged { tol, max_halvings } => {
            let mut dt = f64::min(0.01, p.period / 2000.0);
            let mut series = lzs_evolve_fixed(p, psi0, branch, dt, samples)?;
            let mut change = f64::NAN;
            for _ in 0..max_halvings {
                dt *= 0.5;
                let finer = lzs_evolve_fixed(p, psi0, branch, dt, samples)?;
                change = (finer.final_rho() - series.final_rho()).abs();
                series = finer;
                if change < tol {
                    return Ok(series);
                }
            }
            Err(Error::DtNotConverged {
                halvings: max_halvings,
                change,
            })
        }
    }
}

/// `N(t) = |⟨+|∂_t H|-⟩| / Δ²`, the two-level non-adiabaticity.
pub fn lzs_nonadiabaticity(p: &LzsParams, times: &[f64]) -> Vec<f64> {
    let omega = 2.0 * std::f64::consts::PI / p.period;
    times
        .iter()
        .map(|&t| {
            let b = p.bias(t);
            let (e, up) = eigenpair(b, p.g, Branch::Positive);
            let (_, down) = eigenpair(b, p.g, Branch::Negative);
            // ∂_t H = -A ω sin(ωt) σz
            let db = -p.a * omega * (omega * t).sin();
            let elem = db * (up[0] * down[0] - up[1] * down[1]);
            let gap = 2.0 * e;
            if gap == 0.0 { f64::INFINITY } else { elem.abs() / (gap * gap) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig_params(period: f64) -> LzsParams {
        LzsParams::new(0.4, 4.0, period).unwrap()
    }

    #[test]
    fn hamiltonian_special_times() {
        let p = fig_params(20.0);
        let h = lzs_hamiltonian(&p, 5.0);
        assert!(h.diag[0].abs() < 1e-15 && h.diag[1].abs() < 1e-15);
        assert_eq!(h.offdiag, vec![0.4]);
        let h0 = lzs_hamiltonian(&p, 0.0);
        assert_eq!(h0.diag, vec![4.0, -4.0]);
    }

    #[test]
    fn eigenpairs_are_eigenvectors() {
        for &(b, g) in &[(4.0, 0.4), (-1.0, 0.3), (0.0, 0.4), (2.0, 0.0), (-2.0, 0.0)] {
            for br in [Branch::Positive, Branch::Negative] {
                let (e, v) = eigenpair(b, g, br);
                let hv = [b * v[0] + g * v[1], g * v[0] - b * v[1]];
                assert!((hv[0] - e * v[0]).abs() < 1e-14 && (hv[1] - e * v[1]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn uncoupled_levels_stay_put() {
        let p = LzsParams::new(0.0, 4.0, 20.0).unwrap();
        let s = lzs_evolve_fixed(&p, None, Branch::Positive, 1e-3, 401).unwrap();
        assert!(s.rho.iter().all(|&r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn crossing_times_dominate_nonadiabaticity() {
        let p = fig_params(20.0);
        let times: Vec<f64> = (0..=2000).map(|i| i as f64 * 0.01).collect();
        let n = lzs_nonadiabaticity(&p, &times);
        let peaks = crate::diagnostics::find_peaks(&times, &n);
        assert_eq!(peaks.len(), 2);
        assert!((peaks[0].theta - 5.0).abs() < 0.02);
        assert!((peaks[1].theta - 15.0).abs() < 0.02);
    }

    #[test]
    fn unnormalized_start_rejected() {
        let p = fig_params(20.0);
        let psi = [Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)];
        assert!(matches!(
            lzs_evolve_fixed(&p, Some(psi), Branch::Positive, 0.01, 10),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn fig_contrast_and_locality() {
        let a = lzs_evolve_fixed(&fig_params(20.0), None, Branch::Positive, 1e-3, 2001).unwrap();
        let b = lzs_evolve_fixed(&fig_params(21.0), None, Branch::Positive, 1e-3, 2101).unwrap();
        assert!((a.final_rho() - b.final_rho()).abs() > 0.3);
        assert!(a.max_norm_drift() < 1e-12 && b.max_norm_drift() < 1e-12);
        assert!(a.off_window_derivative_ratio() < 0.1);
        eprintln!("T=20 {} {}; T=21 {} {}", a.final_rho(), a.off_window_derivative_ratio(), b.final_rho(), b.off_window_derivative_ratio());
    }

    #[test]
    fn sign_of_tunneling_is_irrelevant() {
        let p = fig_params(20.0);
        let q = LzsParams { g: -p.g, ..p };
        let a = lzs_evolve_fixed(&p, None, Branch::Positive, 1e-3, 201).unwrap();
        let b = lzs_evolve_fixed(&q, None, Branch::Positive, 1e-3, 201).unwrap();
        for (x, y) in a.rho.iter().zip(&b.rho) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
