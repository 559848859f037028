//! Run configuration, parameter sweeps, disorder ensembles and the named
//! figure recipes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    find_peaks, localization_length, non_adiabaticity_profile, occupations,
    NonAdiabaticityProfile, OccupationSeries, PairSet, Peak,
};
use crate::error::{Error, Result};
use crate::lzs::{lzs_evolve, LzsParams};
use crate::model::{sample_disorder, Chain, DisorderRealization, ModelParams, PhaseConvention};
use crate::propagate::{
    evolve_with_policy, initial_edge_state, pump_window, ConvergenceReport, DtPolicy, PumpWindow,
    ThetaSchedule, Trajectory,
};
use crate::spectra::{band_diagram, linspace, spectrum_at, Branch};

/// A maximum of `ρ_edge(T)` must reach this height to count as `T*`, the
/// first efficient pump; lower humps at short pump times are skipped.
pub const T_STAR_MIN_RHO: f64 = 0.9;

/// Seed whose L = 105, W = 0.08 realization shows the anticrossing failure.
pub const FIG5_SEED: u64 = 1;

/// Seeds of the L = 42, W = 0.08 ensemble.
pub const ENSEMBLE_SEEDS: std::ops::Range<u64> = 0..20;

fn default_seed() -> u64 {
    0
}
fn default_duration() -> f64 {
    1300.0
}
fn default_samples() -> usize {
    501
}
fn default_tol() -> f64 {
    1e-6
}
fn default_halvings() -> usize {
    12
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Flat TOML run description. Every key is optional except `sites`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sites: usize,
    #[serde(default = "defaults::v")]
    pub v: f64,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub disorder: f64,
    #[serde(default)]
    pub convention: PhaseConvention,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Overrides of the detected pump window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_end: Option<f64>,
    #[serde(default)]
    pub branch: Branch,
    /// Fixed step; when absent dt is halved until converged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_tol")]
    pub dt_tol: f64,
    #[serde(default = "default_halvings")]
    pub max_halvings: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Tracked levels; defaults to the edge level and the three above it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<usize>>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

mod defaults {
    pub fn v() -> f64 {
        8.0 / 15.0
    }
    pub fn lambda() -> f64 {
        0.6
    }
    pub fn alpha() -> f64 {
        crate::model::GOLDEN_RATIO
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::new(42)
    }
}

impl RunConfig {
    pub fn new(sites: usize) -> Self {
        let p = ModelParams::with_size(sites, 0.0);
        Self {
            sites,
            v: p.v,
            lambda: p.lambda,
            alpha: p.alpha,
            disorder: 0.0,
            convention: p.convention,
            seed: default_seed(),
            duration: default_duration(),
            theta_start: None,
            theta_end: None,
            branch: Branch::Positive,
            dt: None,
            dt_tol: default_tol(),
            max_halvings: default_halvings(),
            samples: default_samples(),
            levels: None,
            out_dir: default_out_dir(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_params().validate()?;
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
            }
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must fit in a signed 64-bit integer".into()));
        }
        if let Some(levels) = &self.levels {
            if levels.iter().any(|&m| m >= self.sites) {
                return Err(Error::InvalidParameter("tracked level out of range".into()));
            }
        }
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            v: self.v,
            lambda: self.lambda,
            alpha: self.alpha,
            sites: self.sites,
            disorder: self.disorder,
            convention: self.convention,
        }
    }

    pub fn dt_policy(&self) -> DtPolicy {
        match self.dt {
            Some(dt) => DtPolicy::Fixed { dt },
            None => DtPolicy::Converged {
                tol: self.dt_tol,
                max_halvings: self.max_halvings,
            },
        }
    }

    /// The quenched disorder for `seed`, or `None` for a clean chain.
    pub fn disorder_realization(&self) -> Option<DisorderRealization> {
        (self.disorder > 0.0).then(|| sample_disorder(&self.model_params(), self.seed))
    }

    pub fn chain(&self) -> Result<Chain> {
        Chain::new(&self.model_params(), self.disorder_realization().as_ref())
    }

    pub fn with_sites(&self, sites: usize) -> Self {
        Self {
            sites,
            levels: None,
            theta_start: None,
            theta_end: None,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Chain, pump window and initial state shared by all runs of a config.
pub struct PumpSetup {
    pub chain: Chain,
    pub window: PumpWindow,
    pub psi0: Vec<Complex64>,
    pub levels: Vec<usize>,
    pub policy: DtPolicy,
    pub samples: usize,
}

impl PumpSetup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let chain = cfg.chain()?;
        let mut window = pump_window(&chain, cfg.branch)?;
        if let Some(t) = cfg.theta_start {
            window.theta_start = t;
        }
        if let Some(t) = cfg.theta_end {
            window.theta_end = t;
        }
        let psi0 = initial_edge_state(&chain, &window)?;
        let levels = cfg.levels.clone().unwrap_or_else(|| {
            (window.level..(window.level + 4).min(chain.sites())).collect()
        });
        Ok(Self {
            chain,
            window,
            psi0,
            levels,
            policy: cfg.dt_policy(),
            samples: cfg.samples,
        })
    }

    pub fn schedule(&self, duration: f64) -> Result<ThetaSchedule> {
        self.window.schedule(duration)
    }

    /// Final occupations of the tracked levels after a pump of length `t`.
    pub fn final_occupations(&self, t: f64) -> Result<(Vec<f64>, ConvergenceReport)> {
        let sched = self.schedule(t)?;
        let (_, report) =
            evolve_with_policy(&self.chain, &sched, &self.psi0, self.policy, 2, &self.levels)?;
        Ok((report.final_occupations.clone(), report))
    }

    /// Full sampled run with occupations of the tracked levels.
    pub fn run(&self, t: f64) -> Result<PumpRun> {
        let sched = self.schedule(t)?;
        let (trajectory, report) = evolve_with_policy(
            &self.chain,
            &sched,
            &self.psi0,
            self.policy,
            self.samples,
            &self.levels,
        )?;
        let occupations = occupations(&trajectory, &self.chain, &self.levels)?;
        Ok(PumpRun {
            window: self.window,
            schedule: sched,
            trajectory,
            occupations,
            report,
        })
    }
}

pub struct PumpRun {
    pub window: PumpWindow,
    pub schedule: ThetaSchedule,
    pub trajectory: Trajectory,
    pub occupations: OccupationSeries,
    pub report: ConvergenceReport,
}

impl PumpRun {
    /// Rows `t,theta,norm,X_mean,rho_<n>...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "t,theta,norm,X_mean")?;
        for l in &self.occupations.levels {
            write!(out, ",rho_{l}")?;
        }
        writeln!(out)?;
        let tr = &self.trajectory;
        for i in 0..tr.times.len() {
            write!(
                out,
                "{:.10},{:.10},{:.15},{:.10}",
                tr.times[i], tr.thetas[i], tr.norms[i], tr.mean_positions[i]
            )?;
            for r in &self.occupations.rho[i] {
                write!(out, ",{r:.12e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub fn run_pump(cfg: &RunConfig) -> Result<PumpRun> {
    PumpSetup::new(cfg)?.run(cfg.duration)
}

/// Outcome of a one-parameter sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub values: Vec<f64>,
    pub levels: Vec<usize>,
    /// Final occupations per point, `None` where the point failed.
    pub final_occupations: Vec<Option<Vec<f64>>>,
    pub failures: Vec<(usize, String)>,
    /// Indices into `values` of discrete local maxima / minima of the edge
    /// occupation.
    pub maxima: Vec<usize>,
    pub minima: Vec<usize>,
    pub t_star: Option<f64>,
    pub t_star_rho: Option<f64>,
    pub max_norm_drift: f64,
}

impl SweepResult {
    /// Final occupation of the edge level (first tracked level).
    pub fn edge_series(&self) -> Vec<Option<f64>> {
        self.final_occupations
            .iter()
            .map(|o| o.as_ref().map(|v| v[0]))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "{}", self.axis)?;
        for l in &self.levels {
            write!(out, ",rho_{l}")?;
        }
        writeln!(out)?;
        for (x, occ) in self.values.iter().zip(&self.final_occupations) {
            write!(out, "{x}")?;
            match occ {
                Some(v) => v.iter().try_for_each(|r| write!(out, ",{r:.12e}"))?,
                None => self.levels.iter().try_for_each(|_| write!(out, ",nan"))?,
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Discrete 3-point extrema of a series with gaps.
pub fn local_extrema(ys: &[Option<f64>]) -> (Vec<usize>, Vec<usize>) {
    let (mut maxima, mut minima) = (vec![], vec![]);
    for i in 1..ys.len().saturating_sub(1) {
        if let (Some(a), Some(b), Some(c)) = (ys[i - 1], ys[i], ys[i + 1]) {
            if b > a && b >= c {
                maxima.push(i);
            } else if b < a && b <= c {
                minima.push(i);
            }
        }
    }
    (maxima, minima)
}

/// Golden-section maximization of `f` on `[a, b]` until the bracket is
/// narrower than `rel_tol` times its midpoint.
pub fn golden_max<F>(mut f: F, mut a: f64, mut b: f64, rel_tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let invphi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a) > rel_tol * 0.5 * (a + b).abs() {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc > fd { (c, fc) } else { (d, fd) })
}

/// One evolve per pump time, in parallel. `T*` is the first discrete
/// maximum of the edge occupation reaching [`T_STAR_MIN_RHO`], refined by
/// golden section to 1%.
pub fn sweep_pump_time(cfg: &RunConfig, t_values: &[f64]) -> Result<SweepResult> {
    if t_values.is_empty() {
        return Err(Error::InvalidParameter("empty pump-time grid".into()));
    }
    let setup = PumpSetup::new(cfg)?;
    sweep_with_setup(&setup, t_values)
}

pub fn sweep_with_setup(setup: &PumpSetup, t_values: &[f64]) -> Result<SweepResult> {
    let results: Vec<Result<(Vec<f64>, ConvergenceReport)>> = t_values
        .par_iter()
        .map(|&t| setup.final_occupations(t))
        .collect();
    let mut final_occupations = Vec::with_capacity(results.len());
    let mut failures = vec![];
    let mut max_norm_drift = 0.0_f64;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((o, rep)) => {
                max_norm_drift = max_norm_drift.max(rep.max_norm_drift);
                final_occupations.push(Some(o));
            }
            Err(e) => {
                failures.push((i, e.to_string()));
                final_occupations.push(None);
            }
        }
    }
    let mut sweep = SweepResult {
        axis: "T".into(),
        values: t_values.to_vec(),
        levels: setup.levels.clone(),
        final_occupations,
        failures,
        maxima: vec![],
        minima: vec![],
        t_star: None,
        t_star_rho: None,
        max_norm_drift,
    };
    let edge = sweep.edge_series();
    (sweep.maxima, sweep.minima) = local_extrema(&edge);
    if let Some(&i) = sweep
        .maxima
        .iter()
        .find(|&&i| edge[i].is_some_and(|r| r >= T_STAR_MIN_RHO))
    {
        let mut drift = sweep.max_norm_drift;
        let (t, rho) = golden_max(
            |t| {
                let (o, rep) = setup.final_occupations(t)?;
                drift = drift.max(rep.max_norm_drift);
                Ok(o[0])
            },
            t_values[i - 1],
            t_values[i + 1],
            0.01,
        )?;
        // the refined point must not fall below the grid maximum
        let grid_rho = edge[i].unwrap_or(0.0);
        let (t, rho) = if rho >= grid_rho { (t, rho) } else { (t_values[i], grid_rho) };
        sweep.t_star = Some(t);
        sweep.t_star_rho = Some(rho);
        sweep.max_norm_drift = drift;
    }
    Ok(sweep)
}

/// Pump times `T = c L` for `c` on a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerSiteGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for PerSiteGrid {
    fn default() -> Self {
        Self {
            min: 10.0,
            max: 80.0,
            points: 71,
        }
    }
}

impl PerSiteGrid {
    pub fn times(&self, sites: usize) -> Vec<f64> {
        linspace(self.min * sites as f64, self.max * sites as f64, self.points)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub sites: usize,
    pub level: Option<usize>,
    pub t_star: Option<f64>,
    pub t_star_rho: Option<f64>,
    pub max_norm_drift: f64,
    /// Why the point was excluded from the fit.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub points: Vec<ScalingPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line `y = slope x + intercept` and its `R²`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, intercept, r2))
}

pub fn t_star_vs_l(cfg: &RunConfig, l_values: &[usize], grid: &PerSiteGrid) -> Result<ScalingRecord> {
    if l_values.len() < 3 {
        return Err(Error::InvalidParameter("need at least 3 chain lengths".into()));
    }
    if cfg.disorder != 0.0 {
        return Err(Error::InvalidParameter("T* scaling is defined for the clean chain".into()));
    }
    let points: Vec<ScalingPoint> = l_values
        .iter()
        .map(|&l| {
            let mut point = ScalingPoint {
                sites: l,
                level: None,
                t_star: None,
                t_star_rho: None,
                max_norm_drift: 0.0,
                flag: None,
            };
            let setup = match PumpSetup::new(&cfg.with_sites(l)) {
                Ok(s) => s,
                Err(e) => {
                    point.flag = Some(e.to_string());
                    return point;
                }
            };
            point.level = Some(setup.window.level);
            match sweep_with_setup(&setup, &grid.times(l)) {
                Ok(s) => {
                    point.t_star = s.t_star;
                    point.t_star_rho = s.t_star_rho;
                    point.max_norm_drift = s.max_norm_drift;
                    if s.t_star.is_none() {
                        point.flag = Some("no maximum within the pump-time budget".into());
                    }
                }
                Err(e) => point.flag = Some(e.to_string()),
            }
            point
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter_map(|p| p.t_star.map(|t| (p.sites as f64, t)))
        .unzip();
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    Ok(ScalingRecord {
        points,
        slope,
        intercept,
        r_squared,
    })
}

/// Smallest spacing between the tracked level and its neighbours over a θ
/// grid, with the phase where it occurs.
pub fn min_level_spacing(chain: &Chain, level: usize, thetas: &[f64]) -> Result<(f64, f64)> {
    let l = chain.sites();
    let gaps = thetas
        .par_iter()
        .map(|&theta| {
            let s = spectrum_at(chain, theta)?;
            let e = &s.energies;
            let mut g = f64::INFINITY;
            if level > 0 {
                g = g.min(e[level] - e[level - 1]);
            }
            if level + 1 < l {
                g = g.min(e[level + 1] - e[level]);
            }
            Ok((g, theta))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(gaps
        .into_iter()
        .fold((f64::INFINITY, f64::NAN), |a, b| if b.0 < a.0 { b } else { a }))
}

/// Largest `𝒩_n` over the part of the pump window where the edge level is
/// still an in-gap localized state.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RegimePeak {
    pub sites: usize,
    pub level: usize,
    pub theta: f64,
    pub value: f64,
    /// Grid points that qualified as end-localized.
    pub points: usize,
}

pub fn regime_a_peak(cfg: &RunConfig, grid_points: usize) -> Result<RegimePeak> {
    let setup = PumpSetup::new(cfg)?;
    let w = setup.window;
    let l = setup.chain.sites();
    let thetas = linspace(w.theta_start, w.theta_end, grid_points);
    let flags = thetas
        .par_iter()
        .map(|&theta| {
            let s = spectrum_at(&setup.chain, theta)?;
            Ok(w.gap.contains(s.energies[w.level], cfg.branch)
                && s.ipr_of(w.level) > crate::spectra::EDGE_IPR_FACTOR / l as f64)
        })
        .collect::<Result<Vec<bool>>>()?;
    let prof = non_adiabaticity_profile(&setup.chain, &thetas, w.level, &PairSet::All)?;
    let mut best = RegimePeak {
        sites: l,
        level: w.level,
        theta: f64::NAN,
        value: f64::NAN,
        points: 0,
    };
    for (i, &edge) in flags.iter().enumerate() {
        if edge {
            best.points += 1;
            if !(best.value >= prof.total[i]) {
                best.value = prof.total[i];
                best.theta = thetas[i];
            }
        }
    }
    if best.points == 0 {
        return Err(Error::NoEdgeState { theta: w.theta_start });
    }
    Ok(best)
}

/// Resolution of θ grids used for spacing and non-adiabaticity scans.
pub const THETA_GRID_POINTS: usize = 2001;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub seed: u64,
    pub level: Option<usize>,
    pub window: Option<(f64, f64)>,
    pub final_rho: Option<f64>,
    pub min_gap: Option<f64>,
    pub min_gap_theta: Option<f64>,
    /// Peaks of `N_{n,n+1}` for the tracked edge level.
    pub pair_peaks: Vec<Peak>,
    pub max_norm_drift: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub sites: usize,
    pub disorder: f64,
    pub duration: f64,
    /// Band-centre localization length from the weak-disorder formula.
    pub xi: f64,
    pub clean_min_gap: f64,
    pub members: Vec<EnsembleMember>,
    pub median: f64,
    pub lower_quartile: f64,
    pub upper_quartile: f64,
}

fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    (q(0.25), q(0.5), q(0.75))
}

/// Everything recorded about one disordered realization.
pub fn ensemble_member(cfg: &RunConfig, seed: u64, duration: f64) -> EnsembleMember {
    let c = cfg.with_seed(seed);
    let mut m = EnsembleMember {
        seed,
        level: None,
        window: None,
        final_rho: None,
        min_gap: None,
        min_gap_theta: None,
        pair_peaks: vec![],
        max_norm_drift: None,
        error: None,
    };
    let res = (|| -> Result<()> {
        let setup = PumpSetup::new(&c)?;
        let w = setup.window;
        m.level = Some(w.level);
        m.window = Some((w.theta_start, w.theta_end));
        let thetas = linspace(w.theta_start, w.theta_end, THETA_GRID_POINTS);
        let (g, at) = min_level_spacing(&setup.chain, w.level, &thetas)?;
        m.min_gap = Some(g);
        m.min_gap_theta = Some(at);
        if w.level + 1 < setup.chain.sites() {
            let prof = non_adiabaticity_profile(
                &setup.chain,
                &thetas,
                w.level,
                &PairSet::Levels(vec![w.level + 1]),
            )?;
            m.pair_peaks = find_peaks(&prof.thetas, &prof.pairs[0].nonadiabaticity);
        }
        let (occ, rep) = setup.final_occupations(duration)?;
        m.final_rho = Some(occ[0]);
        m.max_norm_drift = Some(rep.max_norm_drift);
        Ok(())
    })();
    if let Err(e) = res {
        m.error = Some(e.to_string());
    }
    m
}

pub fn disorder_ensemble(cfg: &RunConfig, seeds: &[u64], duration: f64) -> Result<EnsembleRecord> {
    if cfg.disorder <= 0.0 {
        return Err(Error::InvalidParameter("ensemble needs W > 0".into()));
    }
    let xi = localization_length(cfg.disorder, cfg.v, 0.0)?;
    let clean = PumpSetup::new(&RunConfig {
        disorder: 0.0,
        ..cfg.clone()
    })?;
    let w = clean.window;
    let (clean_min_gap, _) = min_level_spacing(
        &clean.chain,
        w.level,
        &linspace(w.theta_start, w.theta_end, THETA_GRID_POINTS),
    )?;
    let members: Vec<EnsembleMember> = seeds
        .par_iter()
        .map(|&s| ensemble_member(cfg, s, duration))
        .collect();
    let finals: Vec<f64> = members.iter().filter_map(|m| m.final_rho).collect();
    let (lower_quartile, median, upper_quartile) = quartiles(&finals);
    Ok(EnsembleRecord {
        sites: cfg.sites,
        disorder: cfg.disorder,
        duration,
        xi,
        clean_min_gap,
        members,
        median,
        lower_quartile,
        upper_quartile,
    })
}

/// Failure phenotype: spacing minimum below 10% of the clean one and
/// final edge occupation below 0.5.
pub fn is_failure_phenotype(member: &EnsembleMember, clean_min_gap: f64) -> bool {
    member.min_gap.is_some_and(|g| g < 0.1 * clean_min_gap)
        && member.final_rho.is_some_and(|r| r < 0.5)
}

/// First seed in `seeds` showing the failure phenotype at `duration`.
pub fn scan_failure_seed(
    cfg: &RunConfig,
    seeds: impl IntoIterator<Item = u64>,
    duration: f64,
) -> Result<Option<EnsembleMember>> {
    let clean = PumpSetup::new(&RunConfig {
        disorder: 0.0,
        ..cfg.clone()
    })?;
    let w = clean.window;
    let (clean_gap, _) = min_level_spacing(
        &clean.chain,
        w.level,
        &linspace(w.theta_start, w.theta_end, THETA_GRID_POINTS),
    )?;
    for seed in seeds {
        let m = ensemble_member(cfg, seed, duration);
        if is_failure_phenotype(&m, clean_gap) {
            return Ok(Some(m));
        }
    }
    Ok(None)
}

/// Named figure-data bundles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recipe {
    Fig1b,
    Fig1d,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

impl std::str::FromStr for Recipe {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fig1b" => Recipe::Fig1b,
            "fig1d" => Recipe::Fig1d,
            "fig2" => Recipe::Fig2,
            "fig3" => Recipe::Fig3,
            "fig4" => Recipe::Fig4,
            "fig5" => Recipe::Fig5,
            other => return Err(Error::UnknownRecipe(other.into())),
        })
    }
}

impl Recipe {
    pub fn name(self) -> &'static str {
        match self {
            Recipe::Fig1b => "fig1b",
            Recipe::Fig1d => "fig1d",
            Recipe::Fig2 => "fig2",
            Recipe::Fig3 => "fig3",
            Recipe::Fig4 => "fig4",
            Recipe::Fig5 => "fig5",
        }
    }
}

/// Knobs shared by all recipes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecipeOptions {
    pub out_dir: PathBuf,
    /// Fixed dt; `None` uses the converged policy for single runs and
    /// [`SWEEP_DT`] for sweeps.
    pub dt: Option<f64>,
    pub samples: usize,
    pub seed: Option<u64>,
}

impl Default for RecipeOptions {
    fn default() -> Self {
        Self {
            out_dir: default_out_dir(),
            dt: None,
            samples: default_samples(),
            seed: None,
        }
    }
}

/// Step used for sweeps when no dt is given.
pub const SWEEP_DT: f64 = 0.01;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub recipe: String,
    pub version: String,
    pub params: Vec<ModelParams>,
    pub seed: Option<u64>,
    pub dt: serde_json::Value,
    pub samples: usize,
    pub convergence: Vec<(String, ConvergenceReport)>,
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

struct Bundle {
    dir: PathBuf,
    manifest: Manifest,
}

impl Bundle {
    fn new(recipe: Recipe, opts: &RecipeOptions) -> Result<Self> {
        let dir = opts.out_dir.join(recipe.name());
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            manifest: Manifest {
                recipe: recipe.name().into(),
                version: env!("CARGO_PKG_VERSION").into(),
                params: vec![],
                seed: opts.seed,
                dt: match opts.dt {
                    Some(dt) => serde_json::json!({ "fixed": dt, "sweep": dt }),
                    None => serde_json::json!({ "single_runs": DtPolicy::default(), "sweep": SWEEP_DT }),
                },
                samples: opts.samples,
                convergence: vec![],
                files: vec![],
                notes: vec![],
            },
        })
    }

    fn file<F>(&mut self, name: &str, write: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let mut out = BufWriter::new(File::create(self.dir.join(name))?);
        write(&mut out)?;
        out.flush()?;
        self.manifest.files.push(name.into());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.file(name, |out| {
            serde_json::to_writer_pretty(&mut *out, value)?;
            writeln!(out)?;
            Ok(())
        })
    }

    fn finish(mut self) -> Result<PathBuf> {
        let manifest = std::mem::replace(
            &mut self.manifest,
            Manifest {
                recipe: String::new(),
                version: String::new(),
                params: vec![],
                seed: None,
                dt: serde_json::Value::Null,
                samples: 0,
                convergence: vec![],
                files: vec![],
                notes: vec![],
            },
        );
        let path = self.dir.join("manifest.json");
        let mut out = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut out, &manifest)?;
        writeln!(out)?;
        out.flush()?;
        Ok(self.dir)
    }
}

fn recipe_config(sites: usize, w: f64, opts: &RecipeOptions, sweep: bool) -> RunConfig {
    RunConfig {
        disorder: w,
        seed: opts.seed.unwrap_or(0),
        dt: opts.dt.or(sweep.then_some(SWEEP_DT)),
        samples: opts.samples,
        out_dir: opts.out_dir.clone(),
        ..RunConfig::new(sites)
    }
}

fn write_profile(bundle: &mut Bundle, name: &str, prof: &NonAdiabaticityProfile) -> Result<()> {
    bundle.file(name, |out| prof.write_csv(out))
}

/// Writes the bundle for `recipe` under `opts.out_dir/<name>/` and returns
/// that directory.
pub fn run_figure_recipe(recipe: Recipe, opts: &RecipeOptions) -> Result<PathBuf> {
    let mut b = Bundle::new(recipe, opts)?;
    let tau = std::f64::consts::TAU;
    match recipe {
        Recipe::Fig1b => {
            let cfg = recipe_config(42, 0.0, opts, false);
            let p = cfg.model_params();
            let d = band_diagram(&p, None, &linspace(0.0, tau, 361))?;
            b.manifest.params.push(p);
            b.file("bands.csv", |o| d.write_csv(o))?;
        }
        Recipe::Fig1d => {
            for period in [20.0, 21.0] {
                let p = LzsParams::new(0.4, 4.0, period)?;
                let policy = match opts.dt {
                    Some(dt) => DtPolicy::Fixed { dt },
                    None => DtPolicy::default(),
                };
                let s = lzs_evolve(&p, None, Branch::Positive, policy, 2001)?;
                b.manifest.notes.push(format!(
                    "T = {period}: final rho = {:.6}, dt = {:e}",
                    s.final_rho(),
                    s.dt
                ));
                b.file(&format!("lzs_T{period}.csv"), |o| s.write_csv(o))?;
            }
        }
        Recipe::Fig2 => {
            let cfg = recipe_config(42, 0.0, opts, true);
            b.manifest.params.push(cfg.model_params());
            let ts: Vec<f64> = (0..=190).map(|i| 500.0 + 50.0 * i as f64).collect();
            let sweep = sweep_pump_time(&cfg, &ts)?;
            b.file("sweep_L42.csv", |o| sweep.write_csv(o))?;
            b.json("sweep_L42.json", &sweep)?;
            let scaling = t_star_vs_l(&cfg, &[21, 34, 42, 55, 89], &PerSiteGrid::default())?;
            b.file("t_star.csv", |o| {
                writeln!(o, "L,T_star,rho")?;
                for p in &scaling.points {
                    writeln!(
                        o,
                        "{},{},{}",
                        p.sites,
                        p.t_star.map_or("nan".into(), |t| t.to_string()),
                        p.t_star_rho.map_or("nan".into(), |t| t.to_string())
                    )?;
                }
                Ok(())
            })?;
            b.json("t_star_fit.json", &scaling)?;
        }
        Recipe::Fig3 => {
            let cfg = recipe_config(42, 0.0, opts, false);
            b.manifest.params.push(cfg.model_params());
            let setup = PumpSetup::new(&RunConfig {
                levels: Some(vec![26, 27, 28, 29]),
                ..cfg
            })?;
            for t in [1300.0, 1750.0, 9500.0] {
                let run = setup.run(t)?;
                b.manifest.convergence.push((format!("T={t}"), run.report.clone()));
                b.file(&format!("occupations_T{t}.csv"), |o| run.write_csv(o))?;
            }
            let w = setup.window;
            let thetas = linspace(w.theta_start, w.theta_end, THETA_GRID_POINTS);
            let prof = non_adiabaticity_profile(&setup.chain, &thetas, 26, &PairSet::Levels(vec![27]))?;
            let naps = find_peaks(&prof.thetas, &prof.pairs[0].nonadiabaticity);
            write_profile(&mut b, "nonadiabaticity_26_27.csv", &prof)?;
            b.json("naps.json", &naps)?;
        }
        Recipe::Fig4 => {
            let cfg = recipe_config(42, 0.08, opts, true);
            b.manifest.params.push(cfg.model_params());
            let seeds: Vec<u64> = match opts.seed {
                Some(s) => vec![s],
                None => ENSEMBLE_SEEDS.collect(),
            };
            let first = cfg.with_seed(seeds[0]);
            let d = band_diagram(
                &first.model_params(),
                first.disorder_realization().as_ref(),
                &linspace(0.0, tau, 361),
            )?;
            b.file(&format!("bands_seed{}.csv", seeds[0]), |o| d.write_csv(o))?;
            let ens = disorder_ensemble(&cfg, &seeds, ENSEMBLE_DURATION)?;
            b.file("ensemble.csv", |o| write_ensemble_csv(o, &ens))?;
            b.json("ensemble.json", &ens)?;
        }
        Recipe::Fig5 => {
            let seed = opts.seed.unwrap_or(FIG5_SEED);
            let cfg = RunConfig {
                seed,
                ..recipe_config(105, 0.08, opts, false)
            };
            b.manifest.seed = Some(seed);
            b.manifest.params.push(cfg.model_params());
            let dis = cfg.disorder_realization();
            let d = band_diagram(&cfg.model_params(), dis.as_ref(), &linspace(0.0, tau, 361))?;
            b.file("bands.csv", |o| d.write_csv(o))?;
            let setup = PumpSetup::new(&RunConfig {
                levels: Some(vec![65, 66, 67, 68]),
                ..cfg
            })?;
            for t in [5000.0, 10000.0] {
                let run = setup.run(t)?;
                b.manifest.convergence.push((format!("T={t}"), run.report.clone()));
                b.file(&format!("occupations_T{t}.csv"), |o| run.write_csv(o))?;
            }
            let w = setup.window;
            let thetas = linspace(w.theta_start, w.theta_end, THETA_GRID_POINTS);
            for m in [66, 67] {
                let prof =
                    non_adiabaticity_profile(&setup.chain, &thetas, 65, &PairSet::Levels(vec![m]))?;
                write_profile(&mut b, &format!("nonadiabaticity_65_{m}.csv"), &prof)?;
            }
        }
    }
    b.finish()
}

/// Pump time of the short-chain ensemble.
pub const ENSEMBLE_DURATION: f64 = 9800.0;

fn write_ensemble_csv<W: Write>(mut o: W, ens: &EnsembleRecord) -> Result<()> {
    writeln!(o, "seed,level,rho_final,min_gap,min_gap_theta")?;
    let f = |x: Option<f64>| x.map_or("nan".to_string(), |v| format!("{v:.12e}"));
    for m in &ens.members {
        writeln!(
            o,
            "{},{},{},{},{}",
            m.seed,
            m.level.map_or("nan".into(), |l| l.to_string()),
            f(m.final_rho),
            f(m.min_gap),
            f(m.min_gap_theta)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let mut cfg = RunConfig::new(55);
        cfg.disorder = 0.08;
        cfg.seed = 17;
        cfg.dt = Some(0.0125);
        cfg.levels = Some(vec![34, 35]);
        cfg.theta_start = Some(0.123_456_789_012_345_6);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        let plain = RunConfig::new(42);
        assert_eq!(RunConfig::from_toml(&plain.to_toml().unwrap()).unwrap(), plain);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(matches!(
            RunConfig::from_toml("sites = 42\nbogus = 1\n"),
            Err(Error::Config(_))
        ));
        let cfg = RunConfig::from_toml("sites = 21\n").unwrap();
        assert_eq!(cfg, RunConfig::new(21));
    }

    #[test]
    fn extrema_scan() {
        let ys: Vec<Option<f64>> = [0.1, 0.5, 0.2, 0.3, 0.9, 0.8]
            .iter()
            .map(|&x| Some(x))
            .collect();
        assert_eq!(local_extrema(&ys), (vec![1, 4], vec![2]));
        assert_eq!(local_extrema(&ys[..1]), (vec![], vec![]));
        let gappy = vec![Some(0.1), None, Some(0.1), Some(0.5), Some(0.2)];
        assert_eq!(local_extrema(&gappy), (vec![3], vec![]));
    }

    #[test]
    fn golden_section_finds_vertex() {
        let (x, _) = golden_max(|x| Ok(-(x - 1234.0_f64).powi(2)), 1000.0, 1500.0, 1e-4).unwrap();
        assert!((x - 1234.0).abs() < 0.2);
    }

    #[test]
    fn exact_line_fit() {
        let (s, i, r2) = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((s - 2.0).abs() < 1e-12 && (i - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_recipe() {
        assert!(matches!("fig9".parse::<Recipe>(), Err(Error::UnknownRecipe(_))));
    }

    #[test]
    fn single_point_sweep_has_no_extrema() {
        let cfg = RunConfig {
            dt: Some(0.05),
            ..RunConfig::new(21)
        };
        let s = sweep_pump_time(&cfg, &[200.0]).unwrap();
        assert!(s.maxima.is_empty() && s.minima.is_empty() && s.t_star.is_none());
    }
}
