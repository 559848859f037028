//! Implicit-shift QL iteration for real symmetric tridiagonal matrices.
//!
//! Follows the Bowdler-Martin-Reinsch-Wilkinson `tql2` scheme with the
//! Wilkinson-style shift. Eigenvectors are accumulated in column-major
//! storage so that each Givens rotation touches two contiguous columns.

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 60;

/// Eigenvalues (ascending) and, optionally, the column-major eigenvector
/// matrix (`vectors[m * n + k]` is component `k` of eigenvector `m`).
pub struct TridiagEigen {
    pub values: Vec<f64>,
    pub vectors: Option<Vec<f64>>,
}

pub fn symmetric_tridiagonal_eigen(
    diag: &[f64],
    offdiag: &[f64],
    want_vectors: bool,
) -> Result<TridiagEigen> {
    let n = diag.len();
    if n == 0 || offdiag.len() + 1 != n {
        return Err(Error::LengthMismatch {
            expected: n.saturating_sub(1),
            found: offdiag.len(),
        });
    }
    if diag.iter().chain(offdiag).any(|x| !x.is_finite()) {
        return Err(Error::NoConvergence {
            level: 0,
            iterations: 0,
            summary: summarize(diag, offdiag),
        });
    }
    let mut d = diag.to_vec();
    let mut e = offdiag.to_vec();
    e.push(0.0);
    let mut z = if want_vectors {
        let mut z = vec![0.0; n * n];
        for i in 0..n {
            z[i * n + i] = 1.0;
        }
        Some(z)
    } else {
        None
    };

    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > MAX_SWEEPS {
                return Err(Error::NoConvergence {
                    level: l,
                    iterations: sweeps,
                    summary: summarize(diag, offdiag),
                });
            }

            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // underflow: split and restart on the smaller block
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if let Some(z) = z.as_mut() {
                    let (lo, hi) = z.split_at_mut((i + 1) * n);
                    let col_i = &mut lo[i * n..];
                    let col_next = &mut hi[..n];
                    for (zi, zn) in col_i.iter_mut().zip(col_next.iter_mut()) {
                        let f = *zn;
                        *zn = s * *zi + c * f;
                        *zi = c * *zi - s * f;
                    }
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = z.map(|z| {
        let mut out = Vec::with_capacity(n * n);
        for &i in &order {
            out.extend_from_slice(&z[i * n..(i + 1) * n]);
        }
        out
    });
    Ok(TridiagEigen { values, vectors })
}

fn summarize(diag: &[f64], offdiag: &[f64]) -> String {
    let max_d = diag.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let max_e = offdiag.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let bad = diag.iter().chain(offdiag).any(|x| !x.is_finite());
    format!(
        "n = {}, max|diag| = {max_d:e}, max|offdiag| = {max_e:e}, non-finite entries: {bad}",
        diag.len()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one() {
        let r = symmetric_tridiagonal_eigen(&[2.5], &[], true).unwrap();
        assert_eq!(r.values, vec![2.5]);
        assert_eq!(r.vectors.unwrap(), vec![1.0]);
    }

    #[test]
    fn uniform_chain_matches_cosine_band() {
        let n = 17;
        let r = symmetric_tridiagonal_eigen(&vec![0.0; n], &vec![1.0; n - 1], false).unwrap();
        for (k, e) in r.values.iter().enumerate() {
            let exact = -2.0 * (std::f64::consts::PI * (k + 1) as f64 / (n + 1) as f64).cos();
            assert!((e - exact).abs() < 1e-13, "{k}: {e} vs {exact}");
        }
    }

    #[test]
    fn already_diagonal() {
        let r = symmetric_tridiagonal_eigen(&[3.0, -1.0, 2.0], &[0.0, 0.0], true).unwrap();
        assert_eq!(r.values, vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn non_finite_input_reports_summary() {
        let err = symmetric_tridiagonal_eigen(&[0.0, f64::NAN, 0.0], &[1.0, 1.0], false);
        match err {
            Err(Error::NoConvergence { summary, .. }) => assert!(summary.contains("true")),
            other => panic!("unexpected {:?}", other.map(|r| r.values)),
        }
    }
}
