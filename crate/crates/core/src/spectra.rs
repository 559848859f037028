//! Instantaneous spectra, edge-state identification and band diagrams.
//!
//! Level labels are 0-based throughout the crate: level 0 is the ground
//! state. With the default parameters the positive-energy edge level of
//! an `L = 42` chain is level 26 and that of an `L = 105` chain is level 65.
//!
//! Edge states are identified by a localization proxy: a level counts as an
//! edge state when its inverse participation ratio exceeds `5 / L` and its
//! energy lies inside the bulk gap estimated from the clean spectrum.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Chain, DisorderRealization, ModelParams, TridiagonalOperator};
use crate::tridiag::symmetric_tridiagonal_eigen;

/// Factor in the edge-flag threshold `IPR > EDGE_IPR_FACTOR / L`.
pub const EDGE_IPR_FACTOR: f64 = 5.0;

/// Relative tolerance for treating two components as equally large when
/// fixing the gauge.
const GAUGE_TIE: f64 = 1e-10;

/// Full eigendecomposition at one phase.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub theta: f64,
    pub energies: Vec<f64>,
    /// Column-major: `states[m * L + k]` is `⟨k|ψ_m⟩`.
    states: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn state(&self, m: usize) -> &[f64] {
        let n = self.len();
        &self.states[m * n..(m + 1) * n]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.len())
    }

    pub fn ipr_of(&self, m: usize) -> f64 {
        self.state(m).iter().map(|c| c.powi(4)).sum()
    }

    pub fn mean_position_of(&self, m: usize) -> f64 {
        self.state(m)
            .iter()
            .enumerate()
            .map(|(i, c)| (i + 1) as f64 * c * c)
            .sum()
    }
}

/// Decomposes `h`; each eigenvector is gauge-fixed so that its largest
/// component is positive (lowest site wins ties).
pub fn eigendecompose(h: &TridiagonalOperator, theta: f64) -> Result<Spectrum> {
    let eig = symmetric_tridiagonal_eigen(&h.diag, &h.offdiag, true)?;
    let mut states = eig.vectors.expect("vectors requested");
    let n = h.len();
    for v in states.chunks_exact_mut(n) {
        fix_gauge(v);
    }
    Ok(Spectrum {
        theta,
        energies: eig.values,
        states,
    })
}

/// Spectrum of `chain` at phase `theta`.
pub fn spectrum_at(chain: &Chain, theta: f64) -> Result<Spectrum> {
    eigendecompose(&chain.hamiltonian(theta), theta)
}

fn fix_gauge(v: &mut [f64]) {
    let max = v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let lead = v
        .iter()
        .position(|x| x.abs() >= max * (1.0 - GAUGE_TIE))
        .unwrap_or(0);
    if v[lead] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Inverse participation ratio `Σ |c_n|⁴` of a normalized real state.
pub fn ipr(state: &[f64]) -> Result<f64> {
    let norm = state.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized { norm });
    }
    Ok(state.iter().map(|c| c.powi(4)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    #[default]
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// The positive-energy bulk gap `(lo, hi)`; the negative one is its
/// mirror image under `E → -E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BulkGap {
    pub lo: f64,
    pub hi: f64,
}

impl BulkGap {
    pub fn contains(&self, energy: f64, branch: Branch) -> bool {
        match branch {
            Branch::Positive => energy > self.lo && energy < self.hi,
            Branch::Negative => energy > -self.hi && energy < -self.lo,
        }
    }

    pub fn contains_either(&self, energy: f64) -> bool {
        self.contains(energy, Branch::Positive) || self.contains(energy, Branch::Negative)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Number of phases sampled when estimating the bulk gap.
const GAP_SCAN_POINTS: usize = 96;

/// Estimates the main positive-energy bulk gap of the clean chain: the
/// widest empty interval between positive energies of extended levels
/// (IPR ≤ 5/L) collected over one period of θ. Returns `None` when the
/// chain has no such gap (e.g. a dimer).
pub fn estimate_bulk_gap(params: &ModelParams) -> Result<Option<BulkGap>> {
    let chain = Chain::new(&params.clean(), None)?;
    let l = params.sites;
    let threshold = EDGE_IPR_FACTOR / l as f64;
    let mut bulk: Vec<f64> = (0..GAP_SCAN_POINTS)
        .into_par_iter()
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / GAP_SCAN_POINTS as f64;
            let s = spectrum_at(&chain, theta)?;
            Ok((0..l)
                .filter(|&m| s.energies[m] > 0.0 && s.ipr_of(m) <= threshold)
                .map(|m| s.energies[m])
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    bulk.sort_by(f64::total_cmp);
    let widest = bulk
        .windows(2)
        .map(|w| (w[0], w[1]))
        .max_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)));
    Ok(widest.and_then(|(lo, hi)| {
        // a real gap dwarfs the finite-size level spacing
        let typical = bulk.last()? / l as f64;
        (hi - lo > 4.0 * typical).then_some(BulkGap { lo, hi })
    }))
}

fn is_edge(s: &Spectrum, m: usize, gap: &BulkGap, branch: Branch) -> bool {
    let l = s.len() as f64;
    gap.contains(s.energies[m], branch) && s.ipr_of(m) > EDGE_IPR_FACTOR / l
}

/// Label of the most localized in-gap state of `branch`, or `None`.
pub fn edge_state_index(s: &Spectrum, gap: Option<&BulkGap>, branch: Branch) -> Option<usize> {
    let gap = gap?;
    (0..s.len())
        .filter(|&m| is_edge(s, m, gap, branch))
        .max_by(|&a, &b| s.ipr_of(a).total_cmp(&s.ipr_of(b)))
}

/// Like [`edge_state_index`] but restricted to states whose mean position
/// lies on the given half of the chain.
pub fn edge_state_on_side(
    s: &Spectrum,
    gap: Option<&BulkGap>,
    branch: Branch,
    side: Side,
) -> Option<usize> {
    let gap = gap?;
    let mid = (s.len() as f64 + 1.0) / 2.0;
    (0..s.len())
        .filter(|&m| is_edge(s, m, gap, branch))
        .filter(|&m| match side {
            Side::Left => s.mean_position_of(m) < mid,
            Side::Right => s.mean_position_of(m) > mid,
        })
        .max_by(|&a, &b| s.ipr_of(a).total_cmp(&s.ipr_of(b)))
}

/// Energies, IPRs and edge flags of all levels over a θ grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandDiagram {
    pub thetas: Vec<f64>,
    /// `energies[i][m]`: level `m` at `thetas[i]`.
    pub energies: Vec<Vec<f64>>,
    pub iprs: Vec<Vec<f64>>,
    pub edge_flags: Vec<Vec<bool>>,
    pub gap: Option<BulkGap>,
}

impl BandDiagram {
    /// Energy track of level `m` over the grid.
    pub fn track(&self, m: usize) -> Vec<f64> {
        self.energies.iter().map(|row| row[m]).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "theta,index,energy,ipr,edge_flag")?;
        for (i, theta) in self.thetas.iter().enumerate() {
            for m in 0..self.energies[i].len() {
                writeln!(
                    out,
                    "{theta:.10},{m},{:.12e},{:.12e},{}",
                    self.energies[i][m],
                    self.iprs[i][m],
                    u8::from(self.edge_flags[i][m])
                )?;
            }
        }
        Ok(())
    }
}

pub fn band_diagram(
    params: &ModelParams,
    disorder: Option<&DisorderRealization>,
    thetas: &[f64],
) -> Result<BandDiagram> {
    if thetas.len() < 2 {
        return Err(Error::InvalidParameter(
            "band diagram needs at least 2 grid points".into(),
        ));
    }
    let chain = Chain::new(params, disorder)?;
    let gap = estimate_bulk_gap(params)?;
    let l = params.sites;
    let rows = thetas
        .par_iter()
        .map(|&theta| {
            let s = spectrum_at(&chain, theta)?;
            let iprs: Vec<f64> = (0..l).map(|m| s.ipr_of(m)).collect();
            let flags = (0..l)
                .map(|m| {
                    gap.is_some_and(|g| g.contains_either(s.energies[m]))
                        && iprs[m] > EDGE_IPR_FACTOR / l as f64
                })
                .collect();
            Ok((s.energies, iprs, flags))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut diagram = BandDiagram {
        thetas: thetas.to_vec(),
        energies: Vec::with_capacity(rows.len()),
        iprs: Vec::with_capacity(rows.len()),
        edge_flags: Vec::with_capacity(rows.len()),
        gap,
    };
    for (e, i, f) in rows {
        diagram.energies.push(e);
        diagram.iprs.push(i);
        diagram.edge_flags.push(f);
    }
    Ok(diagram)
}

/// `n` evenly spaced phases covering `[start, end]`.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![start],
        _ => (0..n)
            .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
