//! Occupations, derivative couplings, non-adiabaticity and localization
//! lengths.
//!
//! For a level `n` and partner `m` at phase θ:
//!
//! ```text
//! O_nm = |⟨ψ_n|∂_θ ψ_m⟩| = |⟨ψ_n|∂_θ H|ψ_m⟩| / |E_m - E_n|
//! Δ_nm = |E_n - E_m|
//! N_nm = O_nm / Δ_nm,        𝒩_n = Σ_m N_nm
//! ```
//!
//! The coupling uses the Hellmann-Feynman form, which is independent of the
//! eigenvector gauge.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Chain, TridiagonalOperator};
use crate::propagate::{overlap, Trajectory};
use crate::spectra::{spectrum_at, Spectrum};

/// Gaps below this are treated as degenerate.
pub const DEGENERACY_FLOOR: f64 = 1e-12;

/// `ρ_n(t) = |⟨ψ(t)|ψ_n(θ(t))⟩|²` for a set of tracked levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OccupationSeries {
    pub times: Vec<f64>,
    pub thetas: Vec<f64>,
    pub levels: Vec<usize>,
    /// `rho[i][k]`: level `levels[k]` at sample `i`.
    pub rho: Vec<Vec<f64>>,
}

impl OccupationSeries {
    pub fn series(&self, level: usize) -> Option<Vec<f64>> {
        let k = self.levels.iter().position(|&l| l == level)?;
        Some(self.rho.iter().map(|row| row[k]).collect())
    }

    /// Smallest value over the run of the summed occupation of `levels`.
    pub fn min_combined(&self, levels: &[usize]) -> Option<f64> {
        let idx: Vec<usize> = levels
            .iter()
            .map(|l| self.levels.iter().position(|x| x == l))
            .collect::<Option<_>>()?;
        Some(
            self.rho
                .iter()
                .map(|row| idx.iter().map(|&k| row[k]).sum::<f64>())
                .fold(f64::INFINITY, f64::min),
        )
    }

    pub fn final_values(&self) -> &[f64] {
        self.rho.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn occupations(
    traj: &Trajectory,
    chain: &Chain,
    levels: &[usize],
) -> Result<OccupationSeries> {
    let l = chain.sites();
    if let Some(&bad) = levels.iter().find(|&&m| m >= l) {
        return Err(Error::InvalidParameter(format!(
            "level {bad} out of range for {l} sites"
        )));
    }
    let rho = traj
        .thetas
        .par_iter()
        .zip(&traj.states)
        .map(|(&theta, psi)| {
            let s = spectrum_at(chain, theta)?;
            Ok(levels
                .iter()
                .map(|&m| overlap(s.state(m), psi).norm_sqr())
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(OccupationSeries {
        times: traj.times.clone(),
        thetas: traj.thetas.clone(),
        levels: levels.to_vec(),
        rho,
    })
}

/// `O_nm` from the Hellmann-Feynman matrix element.
pub fn coupling_overlap(s: &Spectrum, dh: &TridiagonalOperator, n: usize, m: usize) -> Result<f64> {
    let gap = (s.energies[m] - s.energies[n]).abs();
    if n == m || gap <= DEGENERACY_FLOOR {
        return Err(Error::DegeneratePair { n, m, gap });
    }
    Ok(dh.matrix_element(s.state(n), s.state(m)).abs() / gap)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairSet {
    #[default]
    All,
    Levels(Vec<usize>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairProfile {
    pub partner: usize,
    pub energies: Vec<f64>,
    pub overlap: Vec<f64>,
    pub gap: Vec<f64>,
    pub nonadiabaticity: Vec<f64>,
}

impl PairProfile {
    pub fn peak(&self) -> f64 {
        self.nonadiabaticity.iter().copied().fold(0.0, f64::max)
    }
}

/// Degenerate pair skipped at one grid point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExcludedPair {
    pub theta: f64,
    pub partner: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonAdiabaticityProfile {
    pub thetas: Vec<f64>,
    pub level: usize,
    pub energies: Vec<f64>,
    pub pairs: Vec<PairProfile>,
    /// `𝒩_n` summed over `pairs` in partner order.
    pub total: Vec<f64>,
    pub excluded: Vec<ExcludedPair>,
}

impl NonAdiabaticityProfile {
    pub fn pair(&self, partner: usize) -> Option<&PairProfile> {
        self.pairs.iter().find(|p| p.partner == partner)
    }

    /// Partners ordered by the height of their largest `N_nm` peak.
    pub fn top_pairs(&self, k: usize) -> Vec<usize> {
        let mut order: Vec<&PairProfile> = self.pairs.iter().collect();
        order.sort_by(|a, b| b.peak().total_cmp(&a.peak()));
        order.into_iter().take(k).map(|p| p.partner).collect()
    }

    /// Rows `(theta, E_n, E_m, O_nm, Delta_nm, N_nm, N_total)`, one per grid
    /// point and partner.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "theta,E_n,E_m,O_nm,Delta_nm,N_nm,N_total")?;
        for (i, theta) in self.thetas.iter().enumerate() {
            for p in &self.pairs {
                writeln!(
                    out,
                    "{theta:.10},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                    self.energies[i],
                    p.energies[i],
                    p.overlap[i],
                    p.gap[i],
                    p.nonadiabaticity[i],
                    self.total[i]
                )?;
            }
        }
        Ok(())
    }
}

pub fn non_adiabaticity_profile(
    chain: &Chain,
    thetas: &[f64],
    level: usize,
    pairs: &PairSet,
) -> Result<NonAdiabaticityProfile> {
    let l = chain.sites();
    let partners: Vec<usize> = match pairs {
        PairSet::All => (0..l).filter(|&m| m != level).collect(),
        PairSet::Levels(v) => v.iter().copied().filter(|&m| m != level).collect(),
    };
    if level >= l || partners.iter().any(|&m| m >= l) {
        return Err(Error::InvalidParameter(format!(
            "levels out of range for {l} sites"
        )));
    }
    if thetas.is_empty() {
        return Err(Error::InvalidParameter("empty theta grid".into()));
    }

    type Row = (f64, Vec<(f64, f64, f64, f64)>, Vec<ExcludedPair>);
    let rows = thetas
        .par_iter()
        .map(|&theta| -> Result<Row> {
            let s = spectrum_at(chain, theta)?;
            let dh = chain.d_theta(theta);
            let mut excluded = Vec::new();
            let vals = partners
                .iter()
                .map(|&m| {
                    let gap = (s.energies[m] - s.energies[level]).abs();
                    match coupling_overlap(&s, &dh, level, m) {
                        Ok(o) => (s.energies[m], o, gap, o / gap),
                        Err(_) => {
                            excluded.push(ExcludedPair {
                                theta,
                                partner: m,
                                gap,
                            });
                            (s.energies[m], 0.0, gap, 0.0)
                        }
                    }
                })
                .collect();
            Ok((s.energies[level], vals, excluded))
        })
        .collect::<Result<Vec<Row>>>()?;

    let mut profile = NonAdiabaticityProfile {
        thetas: thetas.to_vec(),
        level,
        energies: Vec::with_capacity(thetas.len()),
        pairs: partners
            .iter()
            .map(|&m| PairProfile {
                partner: m,
                energies: Vec::with_capacity(thetas.len()),
                overlap: Vec::with_capacity(thetas.len()),
                gap: Vec::with_capacity(thetas.len()),
                nonadiabaticity: Vec::with_capacity(thetas.len()),
            })
            .collect(),
        total: Vec::with_capacity(thetas.len()),
        excluded: Vec::new(),
    };
    for (e_n, vals, excluded) in rows {
        profile.energies.push(e_n);
        let mut total = 0.0;
        for (p, (e_m, o, gap, n)) in profile.pairs.iter_mut().zip(vals) {
            p.energies.push(e_m);
            p.overlap.push(o);
            p.gap.push(gap);
            p.nonadiabaticity.push(n);
            total += n;
        }
        profile.total.push(total);
        profile.excluded.extend(excluded);
    }
    Ok(profile)
}

/// A peak location refined by parabolic interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub theta: f64,
    pub value: f64,
    /// Grid index of the discrete maximum.
    pub index: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Interior local maxima of `ys` above `median + 5 IQR`, sorted by `xs`.
pub fn find_peaks(xs: &[f64], ys: &[f64]) -> Vec<Peak> {
    if ys.len() < 3 || xs.len() != ys.len() {
        return vec![];
    }
    let mut sorted = ys.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = quantile(&sorted, 0.5);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let threshold = median + 5.0 * iqr;
    let mut peaks: Vec<Peak> = (1..ys.len() - 1)
        .filter(|&i| ys[i] > ys[i - 1] && ys[i] >= ys[i + 1] && ys[i] > threshold)
        .map(|i| refine_peak(xs, ys, i))
        .collect();
    peaks.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    peaks
}

fn refine_peak(xs: &[f64], ys: &[f64], i: usize) -> Peak {
    let (x0, x1, x2) = (xs[i - 1], xs[i], xs[i + 1]);
    let (y0, y1, y2) = (ys[i - 1], ys[i], ys[i + 1]);
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let curv = (d12 - d01) / (x2 - x0);
    if curv >= 0.0 || !curv.is_finite() {
        return Peak {
            theta: x1,
            value: y1,
            index: i,
        };
    }
    // vertex of the interpolating parabola
    let x = (0.5 * (x0 + x1) - d01 / (2.0 * curv)).clamp(x0, x2);
    let y = y0 + d01 * (x - x0) + curv * (x - x0) * (x - x1);
    Peak {
        theta: x,
        value: y,
        index: i,
    }
}

/// Non-adiabatic points: peaks of the summed non-adiabaticity profile.
pub fn find_naps(profile: &NonAdiabaticityProfile) -> Vec<Peak> {
    find_peaks(&profile.thetas, &profile.total)
}

/// Weak-disorder localization length `ξ = 24 (4V² - E²) / W²`.
pub fn localization_length(w: f64, v: f64, e: f64) -> Result<f64> {
    if e.abs() >= 2.0 * v {
        return Err(Error::BandEdge {
            energy: e,
            limit: 2.0 * v,
        });
    }
    if w == 0.0 {
        return Err(Error::InfiniteLocalization);
    }
    if w < 0.0 || !w.is_finite() {
        return Err(Error::InvalidParameter(format!("W must be positive, got {w}")));
    }
    Ok(24.0 * (4.0 * v * v - e * e) / (w * w))
}

/// Lyapunov exponent of the uniform-hopping Anderson chain at energy `e`,
/// from `n_sites` transfer matrices renormalized at every step.
pub fn lyapunov_exponent(v: f64, w: f64, e: f64, n_sites: usize, seed: u64) -> Result<f64> {
    if n_sites < 100_000 {
        return Err(Error::InvalidParameter(format!(
            "transfer-matrix estimate needs at least 1e5 sites, got {n_sites}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut cur, mut prev) = (1.0_f64, 0.0_f64);
    let mut log_sum = 0.0;
    for site in 0..n_sites {
        let onsite = w * (rng.random::<f64>() - 0.5);
        let next = ((e - onsite) * cur - v * prev) / v;
        prev = cur;
        cur = next;
        let scale = cur.hypot(prev);
        if !scale.is_finite() || scale == 0.0 {
            return Err(Error::Overflow { site });
        }
        log_sum += scale.ln();
        cur /= scale;
        prev /= scale;
    }
    Ok(log_sum / n_sites as f64)
}

/// Inverse Lyapunov exponent; infinite for a clean chain inside the band.
pub fn transfer_matrix_xi(v: f64, w: f64, e: f64, n_sites: usize, seed: u64) -> Result<f64> {
    let gamma = lyapunov_exponent(v, w, e, n_sites, seed)?;
    Ok(if gamma > 0.0 { 1.0 / gamma } else { f64::INFINITY })
}
