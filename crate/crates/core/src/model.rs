//! Off-diagonal Aubry-André-Harper chain.
//!
//! The chain has `L` sites with open ends. Bond `n` (1-based, joining sites
//! `n` and `n + 1`) carries the hopping
//!
//! ```text
//! V_n(θ) = V [1 + λ cos(k n + θ)],   k = 2π α  (or π α, see PhaseConvention)
//! ```
//!
//! and site `n` carries the quenched on-site energy `W ξ_n`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Golden ratio (√5 + 1)/2.
pub const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

/// How the incommensuration constant enters the hopping phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhaseConvention {
    /// `cos(2π α n + θ)`; edge levels sit at 0-based labels 26 (L = 42)
    /// and 65 (L = 105).
    #[default]
    TwoPiAlpha,
    /// `cos(π α n + θ)`, kept for comparison.
    PiAlpha,
}

impl PhaseConvention {
    pub fn wavenumber(self, alpha: f64) -> f64 {
        match self {
            PhaseConvention::TwoPiAlpha => std::f64::consts::TAU * alpha,
            PhaseConvention::PiAlpha => std::f64::consts::PI * alpha,
        }
    }
}

/// Static chain parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Hopping strength `V`.
    pub v: f64,
    /// Modulation amplitude `λ`.
    pub lambda: f64,
    /// Incommensuration constant `α`.
    pub alpha: f64,
    /// Number of sites `L`.
    pub sites: usize,
    /// Disorder strength `W`.
    pub disorder: f64,
    #[serde(default)]
    pub convention: PhaseConvention,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            v: 8.0 / 15.0,
            lambda: 0.6,
            alpha: GOLDEN_RATIO,
            sites: 42,
            disorder: 0.0,
            convention: PhaseConvention::TwoPiAlpha,
        }
    }
}

impl ModelParams {
    /// Default parameters with `sites` sites and disorder strength `w`.
    pub fn with_size(sites: usize, w: f64) -> Self {
        Self {
            sites,
            disorder: w,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.v.is_finite() && self.v > 0.0) {
            return bad(format!("V must be positive, got {}", self.v));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !self.alpha.is_finite() {
            return bad(format!("alpha must be finite, got {}", self.alpha));
        }
        if self.sites < 2 {
            return bad(format!("need at least 2 sites, got {}", self.sites));
        }
        if !(self.disorder.is_finite() && self.disorder >= 0.0) {
            return bad(format!("W must be >= 0, got {}", self.disorder));
        }
        Ok(())
    }

    /// Same chain without disorder.
    pub fn clean(&self) -> Self {
        Self {
            disorder: 0.0,
            ..*self
        }
    }
}

/// One quenched draw of `ξ_n ∈ [-1/2, 1/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub xi: Vec<f64>,
    pub seed: u64,
}

/// Draws `L` values of `ξ_n` uniform on `[-1/2, 1/2)`.
///
/// The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
/// `seed_from_u64`, which is specified to be portable across platforms, so
/// a seed pins the sequence bit for bit.
pub fn sample_disorder(params: &ModelParams, seed: u64) -> DisorderRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi = (0..params.sites)
        .map(|_| rng.random::<f64>() - 0.5)
        .collect();
    DisorderRealization { xi, seed }
}

/// Real symmetric tridiagonal matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TridiagonalOperator {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
}

impl TridiagonalOperator {
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() || offdiag.len() + 1 != diag.len() {
            return Err(Error::LengthMismatch {
                expected: diag.len().saturating_sub(1),
                found: offdiag.len(),
            });
        }
        Ok(Self { diag, offdiag })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `y = H x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y: Vec<f64> = self.diag.iter().zip(x).map(|(d, xi)| d * xi).collect();
        for i in 0..n - 1 {
            let h = self.offdiag[i];
            y[i] += h * x[i + 1];
            y[i + 1] += h * x[i];
        }
        y
    }

    /// `⟨a|H|b⟩` for real vectors.
    pub fn matrix_element(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.len();
        let mut acc = 0.0;
        for i in 0..n {
            acc += a[i] * self.diag[i] * b[i];
        }
        for i in 0..n - 1 {
            acc += self.offdiag[i] * (a[i] * b[i + 1] + a[i + 1] * b[i]);
        }
        acc
    }

    /// Largest row sum of absolute values, an upper bound on `max |E|`.
    pub fn norm_bound(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 { self.offdiag[i - 1].abs() } else { 0.0 };
                let right = if i + 1 < n { self.offdiag[i].abs() } else { 0.0 };
                self.diag[i].abs() + left + right
            })
            .fold(0.0, f64::max)
    }
}

/// Precomputed bond phases for a fixed chain, so the Hamiltonian at any θ
/// costs two multiply-adds per bond.
#[derive(Debug, Clone)]
pub struct Chain {
    params: ModelParams,
    cos_kn: Vec<f64>,
    sin_kn: Vec<f64>,
    onsite: Vec<f64>,
}

impl Chain {
    pub fn new(params: &ModelParams, disorder: Option<&DisorderRealization>) -> Result<Self> {
        params.validate()?;
        let l = params.sites;
        let onsite = match disorder {
            Some(d) => {
                if d.xi.len() != l {
                    return Err(Error::LengthMismatch {
                        expected: l,
                        found: d.xi.len(),
                    });
                }
                d.xi.iter().map(|x| params.disorder * x).collect()
            }
            None => vec![0.0; l],
        };
        let k = params.convention.wavenumber(params.alpha);
        let (cos_kn, sin_kn) = (1..l)
            .map(|n| {
                let (s, c) = (k * n as f64).sin_cos();
                (c, s)
            })
            .unzip();
        Ok(Self {
            params: *params,
            cos_kn,
            sin_kn,
            onsite,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn sites(&self) -> usize {
        self.params.sites
    }

    pub fn onsite(&self) -> &[f64] {
        &self.onsite
    }

    /// Writes the `L - 1` hoppings at phase `theta` into `out`.
    pub fn fill_hoppings(&self, theta: f64, out: &mut [f64]) {
        let (s, c) = theta.sin_cos();
        let ModelParams { v, lambda, .. } = self.params;
        for ((o, ck), sk) in out.iter_mut().zip(&self.cos_kn).zip(&self.sin_kn) {
            *o = v * (1.0 + lambda * (ck * c - sk * s));
        }
    }

    pub fn hamiltonian(&self, theta: f64) -> TridiagonalOperator {
        let mut off = vec![0.0; self.sites() - 1];
        self.fill_hoppings(theta, &mut off);
        TridiagonalOperator {
            diag: self.onsite.clone(),
            offdiag: off,
        }
    }

    pub fn d_theta(&self, theta: f64) -> TridiagonalOperator {
        let (s, c) = theta.sin_cos();
        let ModelParams { v, lambda, .. } = self.params;
        let off = self
            .cos_kn
            .iter()
            .zip(&self.sin_kn)
            .map(|(ck, sk)| -v * lambda * (sk * c + ck * s))
            .collect();
        TridiagonalOperator {
            diag: vec![0.0; self.sites()],
            offdiag: off,
        }
    }
}

/// Hamiltonian of the chain at phase `theta`.
pub fn build_hamiltonian(
    params: &ModelParams,
    theta: f64,
    disorder: Option<&DisorderRealization>,
) -> Result<TridiagonalOperator> {
    Ok(Chain::new(params, disorder)?.hamiltonian(theta))
}

/// `∂H/∂θ`; only the hoppings depend on θ.
pub fn d_hamiltonian_d_theta(params: &ModelParams, theta: f64) -> Result<TridiagonalOperator> {
    Ok(Chain::new(params, None)?.d_theta(theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn literal() -> ModelParams {
        ModelParams {
            convention: PhaseConvention::PiAlpha,
            ..ModelParams::default()
        }
    }

    #[test]
    fn uniform_chain_when_unmodulated() {
        let p = ModelParams {
            v: 1.0,
            lambda: 0.0,
            sites: 3,
            ..ModelParams::default()
        };
        let h = build_hamiltonian(&p, 1.234, None).unwrap();
        assert_eq!(h.offdiag, vec![1.0, 1.0]);
        assert_eq!(h.diag, vec![0.0; 3]);
    }

    #[test]
    fn disorder_enters_diagonal_scaled_by_w() {
        let p = ModelParams {
            sites: 2,
            disorder: 0.1,
            ..ModelParams::default()
        };
        let d = DisorderRealization {
            xi: vec![0.5, -0.5],
            seed: 0,
        };
        let h = build_hamiltonian(&p, 0.3, Some(&d)).unwrap();
        assert!((h.diag[0] - 0.05).abs() < 1e-15);
        assert!((h.diag[1] + 0.05).abs() < 1e-15);
    }

    #[test]
    fn single_bond_regression_values() {
        // 40-digit reference evaluations of (8/15)(1 + 0.6 cos(c·π·α)).
        let lit = ModelParams { sites: 2, ..literal() };
        let h = build_hamiltonian(&lit, 0.0, None).unwrap();
        assert!((h.offdiag[0] - 0.649_293_298_159_086_97).abs() < 1e-14);

        let p = ModelParams::with_size(2, 0.0);
        let h = build_hamiltonian(&p, 0.0, None).unwrap();
        assert!((h.offdiag[0] - 0.297_375_292_348_270_96).abs() < 1e-14);
    }

    #[test]
    fn length_mismatch_rejected() {
        let p = ModelParams::with_size(4, 0.1);
        let d = DisorderRealization {
            xi: vec![0.0; 3],
            seed: 1,
        };
        assert!(matches!(
            build_hamiltonian(&p, 0.0, Some(&d)),
            Err(Error::LengthMismatch { expected: 4, found: 3 })
        ));
        assert!(TridiagonalOperator::new(vec![0.0; 3], vec![0.0; 3]).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        for p in [
            ModelParams { v: 0.0, ..ModelParams::default() },
            ModelParams { sites: 1, ..ModelParams::default() },
            ModelParams { lambda: -0.1, ..ModelParams::default() },
            ModelParams { disorder: -1.0, ..ModelParams::default() },
        ] {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn derivative_vanishes_without_modulation() {
        let p = ModelParams {
            lambda: 0.0,
            ..ModelParams::default()
        };
        let d = d_hamiltonian_d_theta(&p, 0.7).unwrap();
        assert!(d.offdiag.iter().all(|&x| x == 0.0));
        assert!(d.diag.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn derivative_exact_zero_of_sine() {
        // π α n = 2π for α = 2, n = 1.
        let p = ModelParams {
            alpha: 2.0,
            sites: 2,
            ..literal()
        };
        let d = d_hamiltonian_d_theta(&p, 0.0).unwrap();
        assert!(d.offdiag[0].abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_sequence() {
        let p = ModelParams::with_size(105, 0.08);
        assert_eq!(sample_disorder(&p, 7), sample_disorder(&p, 7));
        assert_ne!(sample_disorder(&p, 7).xi, sample_disorder(&p, 8).xi);
    }

    #[test]
    fn disorder_moments_match_uniform() {
        let p = ModelParams::with_size(100_000, 1.0);
        let d = sample_disorder(&p, 2024);
        assert!(d.xi.iter().all(|x| (-0.5..=0.5).contains(x)));
        let n = d.xi.len() as f64;
        let mean = d.xi.iter().sum::<f64>() / n;
        let var = d.xi.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0 / 12.0).abs() < 0.005, "var {var}");
    }

    #[test]
    fn zero_strength_disorder_is_inert() {
        let p = ModelParams::with_size(20, 0.0);
        let d = sample_disorder(&p, 3);
        let a = build_hamiltonian(&p, 0.4, Some(&d)).unwrap();
        let b = build_hamiltonian(&p, 0.4, None).unwrap();
        assert_eq!(a, b);
    }
}
