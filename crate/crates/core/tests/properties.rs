use edgepump::diagnostics::occupations;
use edgepump::lzs::{lzs_evolve_fixed, LzsParams};
use edgepump::model::{sample_disorder, Chain, ModelParams};
use edgepump::propagate::{evolve, norm, ThetaSchedule};
use edgepump::spectra::{ipr, spectrum_at, Branch};
use num_complex::Complex64;
use proptest::prelude::*;

fn params(sites: usize, w: f64) -> ModelParams {
    ModelParams::with_size(sites, w)
}

fn random_state(sites: usize, re: &[f64], im: &[f64]) -> Vec<Complex64> {
    let mut v: Vec<Complex64> = (0..sites).map(|i| Complex64::new(re[i], im[i])).collect();
    let n = norm(&v);
    v.iter_mut().for_each(|c| *c /= n);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hoppings_stay_in_band(sites in 2usize..120, theta in -20.0f64..20.0) {
        let p = params(sites, 0.0);
        let h = Chain::new(&p, None).unwrap().hamiltonian(theta);
        let (lo, hi) = (p.v * (1.0 - p.lambda), p.v * (1.0 + p.lambda));
        for &t in &h.offdiag {
            prop_assert!(t >= lo - 1e-15 && t <= hi + 1e-15);
        }
    }

    #[test]
    fn derivative_matches_central_difference(sites in 2usize..80, theta in 0.0f64..6.3) {
        let chain = Chain::new(&params(sites, 0.0), None).unwrap();
        let d = chain.d_theta(theta);
        let eps = 1e-5;
        let (a, b) = (chain.hamiltonian(theta + eps), chain.hamiltonian(theta - eps));
        let scale = d.offdiag.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        for i in 0..sites - 1 {
            let fd = (a.offdiag[i] - b.offdiag[i]) / (2.0 * eps);
            prop_assert!((fd - d.offdiag[i]).abs() / scale < 1e-8);
        }
        prop_assert!(d.diag.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn spectra_are_orthonormal_eigenpairs(sites in 2usize..70, theta in 0.0f64..6.3, w in 0.0f64..0.5, seed in 0u64..1000) {
        let p = params(sites, w);
        let dis = sample_disorder(&p, seed);
        let chain = Chain::new(&p, Some(&dis)).unwrap();
        let h = chain.hamiltonian(theta);
        let s = spectrum_at(&chain, theta).unwrap();
        for w in s.energies.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        for m in 0..sites {
            let v = s.state(m);
            let hv = h.apply(v);
            let res = hv.iter().zip(v).map(|(a, b)| (a - s.energies[m] * b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(res < 1e-10);
            let r = ipr(v).unwrap();
            prop_assert!(r >= 1.0 / sites as f64 - 1e-12 && r <= 1.0 + 1e-12);
            // gauge: largest component positive
            let big = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            prop_assert!(big > 0.0);
            for k in 0..=m {
                let d: f64 = v.iter().zip(s.state(k)).map(|(a, b)| a * b).sum();
                let e = if k == m { 1.0 } else { 0.0 };
                prop_assert!((d - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn clean_spectrum_is_chiral(sites in 2usize..90, theta in 0.0f64..6.3) {
        let chain = Chain::new(&params(sites, 0.0), None).unwrap();
        let e = spectrum_at(&chain, theta).unwrap().energies;
        for i in 0..sites {
            prop_assert!((e[i] + e[sites - 1 - i]).abs() < 1e-10);
        }
    }

    /// Gauge fixing is continuous unless the defining component is about to
    /// be overtaken by one of opposite sign.
    #[test]
    fn gauge_is_continuous_on_fine_grids(theta in 0.0f64..6.3, m in 0usize..42) {
        let chain = Chain::new(&params(42, 0.0), None).unwrap();
        let a = spectrum_at(&chain, theta).unwrap();
        let b = spectrum_at(&chain, theta + 1e-7).unwrap();
        let gap = [m.checked_sub(1), (m + 1 < 42).then_some(m + 1)]
            .iter()
            .flatten()
            .map(|&k| (a.energies[k] - a.energies[m]).abs())
            .fold(f64::INFINITY, f64::min);
        prop_assume!(gap > 1e-6);
        let mut mags: Vec<f64> = a.state(m).iter().map(|x| x.abs()).collect();
        mags.sort_by(|x, y| y.total_cmp(x));
        prop_assume!(mags[0] - mags[1] > 1e-4);
        let d: f64 = a.state(m).iter().zip(b.state(m)).map(|(x, y)| x * y).sum();
        prop_assert!(d > 1.0 - 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn evolution_conserves_norm_and_population(
        sites in 3usize..12,
        t in 1.0f64..40.0,
        start in 0.0f64..6.3,
        re in prop::collection::vec(-1.0f64..1.0, 12),
        im in prop::collection::vec(-1.0f64..1.0, 12),
    ) {
        let chain = Chain::new(&params(sites, 0.0), None).unwrap();
        let psi0 = random_state(sites, &re, &im);
        prop_assume!(norm(&psi0).is_finite());
        let sched = ThetaSchedule::new(start, start + 2.0, t).unwrap();
        let traj = evolve(&chain, &sched, &psi0, 0.01, 5).unwrap();
        prop_assert!(traj.max_norm_drift() < 1e-10);
        let all: Vec<usize> = (0..sites).collect();
        let occ = occupations(&traj, &chain, &all).unwrap();
        for row in &occ.rho {
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn reversed_schedule_undoes_evolution(
        sites in 3usize..30,
        t in 5.0f64..60.0,
        re in prop::collection::vec(-1.0f64..1.0, 30),
        im in prop::collection::vec(-1.0f64..1.0, 30),
    ) {
        let chain = Chain::new(&params(sites, 0.0), None).unwrap();
        let psi0 = random_state(sites, &re, &im);
        let sched = ThetaSchedule::new(0.4, 5.0, t).unwrap();
        let fwd = evolve(&chain, &sched, &psi0, 0.01, 2).unwrap();
        // H is real, so conjugation turns the reversed path into the inverse
        let back_in: Vec<Complex64> = fwd.final_state().iter().map(|c| c.conj()).collect();
        let back = evolve(&chain, &sched.reversed(), &back_in, 0.01, 2).unwrap();
        let amp: Complex64 = psi0.iter().zip(back.final_state()).map(|(a, b)| a.conj() * b.conj()).sum();
        prop_assert!(amp.norm_sqr() > 1.0 - 1e-10);
    }

    #[test]
    fn lzs_occupation_is_a_probability(g in 0.0f64..2.0, a in 0.0f64..6.0, period in 1.0f64..40.0, excited in any::<bool>()) {
        let p = LzsParams::new(g, a, period).unwrap();
        let branch = if excited { Branch::Positive } else { Branch::Negative };
        let s = lzs_evolve_fixed(&p, None, branch, 5e-3, 101).unwrap();
        prop_assert!(s.max_norm_drift() < 1e-12);
        prop_assert!(s.rho.iter().all(|&r| (0.0..=1.0).contains(&r)));
        let q = LzsParams { g: -g, ..p };
        let r = lzs_evolve_fixed(&q, None, branch, 5e-3, 101).unwrap();
        for (x, y) in s.rho.iter().zip(&r.rho) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_disorder_ignores_the_seed(seed in 0u64..10_000, theta in 0.0f64..6.3) {
        let p = params(30, 0.0);
        let dis = sample_disorder(&p, seed);
        let a = Chain::new(&p, Some(&dis)).unwrap().hamiltonian(theta);
        let b = Chain::new(&p, None).unwrap().hamiltonian(theta);
        prop_assert_eq!(a, b);
    }
}
