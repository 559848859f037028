//! Crank-Nicolson propagation along a linear θ schedule.
//!
//! Each step solves `(1 + i dt/2 H(θ_mid)) ψ' = (1 - i dt/2 H(θ_mid)) ψ`
//! with a tridiagonal complex solve, θ taken at the half step.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Chain, TridiagonalOperator};
use crate::spectra::{estimate_bulk_gap, spectrum_at, Branch, BulkGap, Side, Spectrum};

/// Norm drift at which a run is aborted.
pub const NORM_ABORT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaSchedule {
    pub theta_start: f64,
    pub theta_end: f64,
    /// Total pump time `T`.
    pub duration: f64,
}

impl ThetaSchedule {
    pub fn new(theta_start: f64, theta_end: f64, duration: f64) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pump time must be positive, got {duration}"
            )));
        }
        Ok(Self {
            theta_start,
            theta_end,
            duration,
        })
    }

    pub fn theta_at(&self, t: f64) -> f64 {
        self.theta_start + (self.theta_end - self.theta_start) * t / self.duration
    }

    pub fn with_duration(&self, duration: f64) -> Self {
        Self { duration, ..*self }
    }

    /// Same path traversed backwards.
    pub fn reversed(&self) -> Self {
        Self {
            theta_start: self.theta_end,
            theta_end: self.theta_start,
            duration: self.duration,
        }
    }
}

/// Time-step policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DtPolicy {
    Fixed { dt: f64 },
    /// Start at `min(0.05, T / 200000)` and halve until no tracked final
    /// occupation moves by more than `tol`.
    Converged { tol: f64, max_halvings: usize },
}

impl Default for DtPolicy {
    fn default() -> Self {
        DtPolicy::Converged {
            tol: 1e-6,
            max_halvings: 12,
        }
    }
}

impl DtPolicy {
    pub fn initial_dt(&self, duration: f64) -> f64 {
        match *self {
            DtPolicy::Fixed { dt } => dt,
            DtPolicy::Converged { .. } => f64::min(0.05, duration / 200_000.0),
        }
    }
}

/// Sampled time evolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub thetas: Vec<f64>,
    pub states: Vec<Vec<Complex64>>,
    pub norms: Vec<f64>,
    pub mean_positions: Vec<f64>,
    /// Step actually used (`T / steps`).
    pub dt: f64,
    pub steps: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &[Complex64] {
        self.states.last().expect("trajectory has samples")
    }

    pub fn max_norm_drift(&self) -> f64 {
        self.norms.iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// `Σ_i x_i |ψ_i|²` with sites numbered from 1.
pub fn mean_position(psi: &[Complex64]) -> f64 {
    psi.iter()
        .enumerate()
        .map(|(i, c)| (i + 1) as f64 * c.norm_sqr())
        .sum()
}

pub fn norm(psi: &[Complex64]) -> f64 {
    psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Reusable buffers for Crank-Nicolson steps on an `n`-site chain.
pub struct CnStepper {
    hop: Vec<f64>,
    rhs: Vec<Complex64>,
    upper: Vec<Complex64>,
}

impl CnStepper {
    pub fn new(n: usize) -> Self {
        Self {
            hop: vec![0.0; n.saturating_sub(1)],
            rhs: vec![Complex64::new(0.0, 0.0); n],
            upper: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn hoppings_mut(&mut self) -> &mut [f64] {
        &mut self.hop
    }

    /// One step with on-site energies `diag` and the hoppings currently held
    /// in the stepper (see [`CnStepper::hoppings_mut`]).
    pub fn step(&mut self, diag: &[f64], dt: f64, psi: &mut [Complex64], step: usize) -> Result<()> {
        let n = psi.len();
        let half = Complex64::new(0.0, 0.5 * dt);
        let hop = &self.hop;

        // rhs = (1 - i dt/2 H) ψ
        for j in 0..n {
            let mut h_psi = diag[j] * psi[j];
            if j > 0 {
                h_psi += hop[j - 1] * psi[j - 1];
            }
            if j + 1 < n {
                h_psi += hop[j] * psi[j + 1];
            }
            self.rhs[j] = psi[j] - half * h_psi;
        }

        // Thomas sweep on (1 + i dt/2 H)
        let mut denom = Complex64::new(1.0, 0.0) + half * diag[0];
        if denom.norm_sqr() < 1e-300 {
            return Err(Error::SingularSolve { step });
        }
        if n > 1 {
            self.upper[0] = half * hop[0] / denom;
        }
        psi[0] = self.rhs[0] / denom;
        for j in 1..n {
            let lower = half * hop[j - 1];
            denom = Complex64::new(1.0, 0.0) + half * diag[j] - lower * self.upper[j - 1];
            if denom.norm_sqr() < 1e-300 {
                return Err(Error::SingularSolve { step });
            }
            if j + 1 < n {
                self.upper[j] = half * hop[j] / denom;
            }
            psi[j] = (self.rhs[j] - lower * psi[j - 1]) / denom;
        }
        for j in (0..n - 1).rev() {
            let next = psi[j + 1];
            psi[j] -= self.upper[j] * next;
        }
        Ok(())
    }

    /// Step under a fixed operator.
    pub fn step_operator(
        &mut self,
        h: &TridiagonalOperator,
        dt: f64,
        psi: &mut [Complex64],
        step: usize,
    ) -> Result<()> {
        self.hop.copy_from_slice(&h.offdiag);
        self.step(&h.diag, dt, psi, step)
    }
}

/// Integrates from `psi0` over `schedule` with a fixed step close to `dt`.
///
/// The step count is rounded up to a multiple of `samples - 1` so that the
/// samples fall exactly on step boundaries, including `t = 0` and `t = T`.
pub fn evolve(
    chain: &Chain,
    schedule: &ThetaSchedule,
    psi0: &[Complex64],
    dt: f64,
    samples: usize,
) -> Result<Trajectory> {
    let l = chain.sites();
    if psi0.len() != l {
        return Err(Error::LengthMismatch {
            expected: l,
            found: psi0.len(),
        });
    }
    let n0 = norm(psi0);
    if (n0 - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized { norm: n0 });
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let samples = samples.max(2);
    let t_total = schedule.duration;
    let intervals = samples - 1;
    let per_sample = ((t_total / dt) / intervals as f64).ceil().max(1.0) as usize;
    let steps = per_sample * intervals;
    let dt = t_total / steps as f64;

    let mut psi = psi0.to_vec();
    let mut stepper = CnStepper::new(l);
    let onsite = chain.onsite().to_vec();

    let mut traj = Trajectory {
        times: Vec::with_capacity(samples),
        thetas: Vec::with_capacity(samples),
        states: Vec::with_capacity(samples),
        norms: Vec::with_capacity(samples),
        mean_positions: Vec::with_capacity(samples),
        dt,
        steps,
    };
    let record = |traj: &mut Trajectory, k: usize, psi: &[Complex64]| -> Result<()> {
        let t = if k == steps { t_total } else { k as f64 * dt };
        let nrm = norm(psi);
        if (nrm - 1.0).abs() > NORM_ABORT {
            return Err(Error::NormDrift {
                drift: (nrm - 1.0).abs(),
                time: t,
            });
        }
        traj.times.push(t);
        traj.thetas.push(schedule.theta_at(t));
        traj.norms.push(nrm);
        traj.mean_positions.push(mean_position(psi));
        traj.states.push(psi.to_vec());
        Ok(())
    };

    record(&mut traj, 0, &psi)?;
    for k in 0..steps {
        let theta_mid = schedule.theta_at((k as f64 + 0.5) * dt);
        chain.fill_hoppings(theta_mid, stepper.hoppings_mut());
        stepper.step(&onsite, dt, &mut psi, k)?;
        if (k + 1) % per_sample == 0 {
            record(&mut traj, k + 1, &psi)?;
        }
    }
    Ok(traj)
}

/// Outcome of the dt-halving loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub dts: Vec<f64>,
    /// Largest change of a tracked final occupation between successive dts.
    pub changes: Vec<f64>,
    pub converged: bool,
    pub final_occupations: Vec<f64>,
    /// Worst norm drift seen over all attempted step sizes.
    pub max_norm_drift: f64,
}

/// Final occupations `|⟨ψ|ψ_n(θ_end)⟩|²` for the tracked levels.
pub fn final_occupations(s: &Spectrum, psi: &[Complex64], levels: &[usize]) -> Vec<f64> {
    levels
        .iter()
        .map(|&m| overlap(s.state(m), psi).norm_sqr())
        .collect()
}

/// `⟨φ|ψ⟩` for a real `φ`.
pub fn overlap(phi: &[f64], psi: &[Complex64]) -> Complex64 {
    phi.iter().zip(psi).map(|(a, b)| *a * b).sum()
}

/// Runs [`evolve`] under `policy`; for [`DtPolicy::Converged`] dt is
/// halved until the final occupations of `levels` settle.
pub fn evolve_with_policy(
    chain: &Chain,
    schedule: &ThetaSchedule,
    psi0: &[Complex64],
    policy: DtPolicy,
    samples: usize,
    levels: &[usize],
) -> Result<(Trajectory, ConvergenceReport)> {
    let end = spectrum_at(chain, schedule.theta_end)?;
    let mut dt = policy.initial_dt(schedule.duration);
    let mut traj = evolve(chain, schedule, psi0, dt, samples)?;
    let mut occ = final_occupations(&end, traj.final_state(), levels);
    let mut report = ConvergenceReport {
        dts: vec![traj.dt],
        changes: vec![],
        converged: matches!(policy, DtPolicy::Fixed { .. }),
        final_occupations: occ.clone(),
        max_norm_drift: traj.max_norm_drift(),
    };
    if let DtPolicy::Converged { tol, max_halvings } = policy {
        for _ in 0..max_halvings {
            dt *= 0.5;
            let finer = evolve(chain, schedule, psi0, dt, samples)?;
            let finer_occ = final_occupations(&end, finer.final_state(), levels);
            let change = occ
                .iter()
                .zip(&finer_occ)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            report.dts.push(finer.dt);
            report.changes.push(change);
            report.max_norm_drift = report.max_norm_drift.max(finer.max_norm_drift());
            traj = finer;
            occ = finer_occ;
            if change < tol {
                report.converged = true;
                break;
            }
        }
        if !report.converged {
            return Err(Error::DtNotConverged {
                halvings: max_halvings,
                change: report.changes.last().copied().unwrap_or(f64::NAN),
            });
        }
    }
    report.final_occupations = occ;
    Ok((traj, report))
}

/// Pump path running from the phase where the positive-branch edge state
/// is most left-localized to the next phase where the same level is most
/// right-localized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpWindow {
    pub theta_start: f64,
    pub theta_end: f64,
    /// Edge level followed along the path.
    pub level: usize,
    pub gap: BulkGap,
}

impl PumpWindow {
    pub fn schedule(&self, duration: f64) -> Result<ThetaSchedule> {
        ThetaSchedule::new(self.theta_start, self.theta_end, duration)
    }
}

const WINDOW_SCAN_POINTS: usize = 360;

/// Locates the pump window for `chain` (see [`PumpWindow`]).
pub fn pump_window(chain: &Chain, branch: Branch) -> Result<PumpWindow> {
    let params = chain.params();
    let gap = estimate_bulk_gap(params)?.ok_or(Error::NoEdgeState { theta: 0.0 })?;
    let tau = std::f64::consts::TAU;
    let step = tau / WINDOW_SCAN_POINTS as f64;

    // most localized left edge state over one period
    let mut best: Option<(f64, f64, usize)> = None;
    for i in 0..WINDOW_SCAN_POINTS {
        let theta = i as f64 * step;
        let s = spectrum_at(chain, theta)?;
        if let Some(m) = crate::spectra::edge_state_on_side(&s, Some(&gap), branch, Side::Left) {
            let ipr = s.ipr_of(m);
            if best.is_none_or(|b| ipr > b.0) {
                best = Some((ipr, theta, m));
            }
        }
    }
    let (_, coarse_start, level) = best.ok_or(Error::NoEdgeState { theta: 0.0 })?;
    let theta_start = refine_localization(chain, level, Side::Left, coarse_start, step)?;

    // same level, most right-localized, strictly after the start
    let mut best: Option<(f64, f64)> = None;
    for i in 1..WINDOW_SCAN_POINTS {
        let theta = theta_start + i as f64 * step;
        let s = spectrum_at(chain, theta)?;
        if on_side(&s, level, Side::Right) && gap.contains(s.energies[level], branch) {
            let ipr = s.ipr_of(level);
            if best.is_none_or(|b| ipr > b.0) {
                best = Some((ipr, theta));
            }
        }
    }
    let (_, coarse_end) = best.ok_or(Error::NoEdgeState {
        theta: theta_start,
    })?;
    let theta_end = refine_localization(chain, level, Side::Right, coarse_end, step)?;
    Ok(PumpWindow {
        theta_start,
        theta_end,
        level,
        gap,
    })
}

fn on_side(s: &Spectrum, m: usize, side: Side) -> bool {
    let mid = (s.len() as f64 + 1.0) / 2.0;
    match side {
        Side::Left => s.mean_position_of(m) < mid,
        Side::Right => s.mean_position_of(m) > mid,
    }
}

/// Golden-section maximization of the IPR of `level` on
/// `[center - width, center + width]`, keeping to the requested side.
fn refine_localization(
    chain: &Chain,
    level: usize,
    side: Side,
    center: f64,
    width: f64,
) -> Result<f64> {
    let score = |theta: f64| -> Result<f64> {
        let s = spectrum_at(chain, theta)?;
        Ok(if on_side(&s, level, side) {
            s.ipr_of(level)
        } else {
            0.0
        })
    };
    let invphi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (center - width, center + width);
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let (mut fc, mut fd) = (score(c)?, score(d)?);
    for _ in 0..40 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = score(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = score(d)?;
        }
    }
    let refined = 0.5 * (a + b);
    // never return something worse than the grid point
    Ok(if score(refined)? >= score(center)? {
        refined
    } else {
        center
    })
}

/// Eigenstate `|ψ_level(θ_start)⟩` as a complex vector.
pub fn initial_edge_state(chain: &Chain, window: &PumpWindow) -> Result<Vec<Complex64>> {
    let s = spectrum_at(chain, window.theta_start)?;
    Ok(s.state(window.level)
        .iter()
        .map(|&c| Complex64::new(c, 0.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn basis(n: usize, k: usize) -> Vec<Complex64> {
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        v[k] = Complex64::new(1.0, 0.0);
        v
    }

    #[test]
    fn mean_position_limits() {
        assert_eq!(mean_position(&basis(7, 0)), 1.0);
        let l = 9;
        let a = Complex64::new((1.0 / l as f64).sqrt(), 0.0);
        assert!((mean_position(&vec![a; l]) - (l as f64 + 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_diagonal_state_picks_up_phase() {
        let h = TridiagonalOperator::new(vec![0.3, -0.7, 1.1], vec![0.0, 0.0]).unwrap();
        let mut psi = basis(3, 1);
        let mut stepper = CnStepper::new(3);
        let dt = 2e-5;
        let steps = 5_000_000;
        for k in 0..steps {
            stepper.step_operator(&h, dt, &mut psi, k).unwrap();
        }
        let t = dt * steps as f64;
        // CN phase is 2·atan(E dt / 2) per step
        let phase = -2.0 * steps as f64 * (-0.7 * dt / 2.0_f64).atan();
        let exact = Complex64::from_polar(1.0, phase);
        assert!((psi[1] - exact).norm() < 1e-9, "{}", (psi[1] - exact).norm());
        let analytic = Complex64::from_polar(1.0, 0.7 * t);
        assert!((psi[1] - analytic).norm() < 1e-8, "{}", (psi[1] - analytic).norm());
        assert!(psi[0].norm() == 0.0 && psi[2].norm() == 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let chain = Chain::new(&ModelParams::with_size(4, 0.0), None).unwrap();
        let sched = ThetaSchedule::new(0.0, 1.0, 10.0).unwrap();
        let unnormalized = vec![Complex64::new(1.0, 0.0); 4];
        assert!(matches!(
            evolve(&chain, &sched, &unnormalized, 0.01, 3),
            Err(Error::NotNormalized { .. })
        ));
        assert!(evolve(&chain, &sched, &basis(3, 0), 0.01, 3).is_err());
        assert!(ThetaSchedule::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn samples_land_on_endpoints() {
        let chain = Chain::new(&ModelParams::with_size(6, 0.0), None).unwrap();
        let sched = ThetaSchedule::new(0.2, 1.2, 7.3).unwrap();
        let traj = evolve(&chain, &sched, &basis(6, 2), 0.013, 11).unwrap();
        assert_eq!(traj.times.len(), 11);
        assert_eq!(traj.times[0], 0.0);
        assert_eq!(*traj.times.last().unwrap(), 7.3);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert!((traj.thetas[10] - 1.2).abs() < 1e-14);
        assert!(traj.max_norm_drift() < 1e-12);
    }

    #[test]
    fn pump_window_l42() {
        let chain = Chain::new(&ModelParams::default(), None).unwrap();
        let w = pump_window(&chain, Branch::Positive).unwrap();
        assert_eq!(w.level, 26);
        assert!(w.theta_end > w.theta_start);
        let psi = initial_edge_state(&chain, &w).unwrap();
        assert!((norm(&psi) - 1.0).abs() < 1e-12);
        assert!(mean_position(&psi) < 42.0 / 4.0);
        let s = spectrum_at(&chain, w.theta_end).unwrap();
        assert!(s.mean_position_of(26) > 42.0 * 0.75);
    }
}
