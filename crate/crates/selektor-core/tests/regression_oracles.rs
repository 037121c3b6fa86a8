//! Selected-model test oracles: pseudoinverse identities, classical
//! reductions, conditional level, pivot uniformity for the t-test, and
//! translation equivariance.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use selektor_core::geometry::{Polytope, SelectionRegion};
use selektor_core::harness::{ks_critical, ks_distance_uniform};
use selektor_core::linalg::{dot, solve_spd, Mat};
use selektor_core::normal;
use selektor_core::regression::{
    eta_vector, hat_sigma_sq, selected_t_test, selected_z_test, RegressionProblem,
    SelectedTestConfig, SigmaSpec,
};
use selektor_core::samplers::ChainConfig;

fn random_design(n: usize, p: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    Mat::from_cols(&cols)
}

#[test]
fn eta_matches_pseudoinverse_row() {
    let x = random_design(12, 4, 1);
    let model = vec![0, 1, 3];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y: Vec<f64> = (0..12).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    for &j in &model {
        let eta = eta_vector(&x, &model, j).unwrap();
        // oracle: OLS coefficient from the normal equations
        let xm = x.select_cols(&model);
        let coef = solve_spd(&xm.gram(), &xm.t_mul_vec(&y)).unwrap();
        let pos = model.iter().position(|&k| k == j).unwrap();
        assert!(
            (dot(&eta, &y) - coef[pos]).abs() < 1e-10,
            "eta'y vs pseudoinverse row for j={j}"
        );
        // defining properties
        assert!((dot(&eta, &x.col(j)) - 1.0).abs() < 1e-10);
        for &k in model.iter().filter(|&&k| k != j) {
            assert!(dot(&eta, &x.col(k)).abs() < 1e-10);
        }
    }
}

#[test]
fn eta_two_column_explicit_solve() {
    // X2 = rho X1 + sqrt(1-rho^2) e, explicit 2x2 normal equations
    let n = 30;
    let rho = 0.6f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x1: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let e: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let x2: Vec<f64> = x1
        .iter()
        .zip(&e)
        .map(|(a, b)| rho * a + (1.0 - rho * rho).sqrt() * b)
        .collect();
    let x = Mat::from_cols(&[x1.clone(), x2.clone()]);
    let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let eta = eta_vector(&x, &[0, 1], 0).unwrap();
    // direct 2x2 solve
    let g = [
        dot(&x1, &x1),
        dot(&x1, &x2),
        dot(&x1, &x2),
        dot(&x2, &x2),
    ];
    let det = g[0] * g[3] - g[1] * g[2];
    let b = [dot(&x1, &y), dot(&x2, &y)];
    let beta0 = (g[3] * b[0] - g[1] * b[1]) / det;
    assert!((dot(&eta, &y) - beta0).abs() < 1e-10);
}

#[test]
fn rank_deficiency_is_reported() {
    let n = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c1: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let c2: Vec<f64> = c1.iter().map(|v| 2.0 * v).collect();
    let x = Mat::from_cols(&[c1, c2]);
    assert!(eta_vector(&x, &[0, 1], 0).is_err());
}

#[test]
fn hat_sigma_sq_matches_direct_residuals() {
    let x = random_design(15, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y: Vec<f64> = (0..15).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let problem = RegressionProblem {
        x: x.clone(),
        y: y.clone(),
        model: vec![0, 1, 2],
        target: 1,
        sigma: SigmaSpec::Unknown,
    };
    let got = hat_sigma_sq(&problem).unwrap();
    // direct residual oracle
    let xm = x.select_cols(&[0, 1, 2]);
    let coef = solve_spd(&xm.gram(), &xm.t_mul_vec(&y)).unwrap();
    let fitted = xm.mul_vec(&coef);
    let rss: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    assert!((got - rss / 12.0).abs() < 1e-10);

    // fitted response gives zero
    let y_fit = xm.mul_vec(&[1.0, -2.0, 0.5]);
    let p2 = RegressionProblem {
        x: x.clone(),
        y: y_fit,
        model: vec![0, 1, 2],
        target: 0,
        sigma: SigmaSpec::Unknown,
    };
    assert!(hat_sigma_sq(&p2).unwrap() < 1e-18);
}

fn quick_chain(seed: u64) -> ChainConfig {
    ChainConfig {
        burn_in: 400,
        thin: 2,
        n_samples: 4000,
        seed,
    }
}

#[test]
fn z_test_without_selection_matches_classical() {
    let x = random_design(10, 2, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y: Vec<f64> = (0..10).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let problem = RegressionProblem {
        x: x.clone(),
        y: y.clone(),
        model: vec![0, 1],
        target: 0,
        sigma: SigmaSpec::Known(1.0),
    };
    let region = SelectionRegion::full(10);
    let cfg = SelectedTestConfig {
        chain: ChainConfig {
            burn_in: 500,
            thin: 2,
            n_samples: 40_000,
            seed: 9,
        },
        ..Default::default()
    };
    let out = selected_z_test(&problem, &region, 0.05, &cfg).unwrap();
    let eta = eta_vector(&x, &[0, 1], 0).unwrap();
    let z = dot(&eta, &y) / dot(&eta, &eta).sqrt();
    let classical = 2.0 * normal::sf(z.abs());
    assert!(
        (out.p_equal_tailed - classical).abs() < 0.01,
        "mc {} classical {classical}",
        out.p_equal_tailed
    );
}

#[test]
fn z_test_interval_without_selection_matches_classical() {
    let x = random_design(10, 2, 70);
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let y: Vec<f64> = (0..10).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let problem = RegressionProblem {
        x: x.clone(),
        y: y.clone(),
        model: vec![0, 1],
        target: 0,
        sigma: SigmaSpec::Known(1.0),
    };
    let region = SelectionRegion::full(10);
    let cfg = SelectedTestConfig {
        chain: ChainConfig {
            burn_in: 500,
            thin: 2,
            n_samples: 30_000,
            seed: 72,
        },
        compute_ci: true,
        ..Default::default()
    };
    let out = selected_z_test(&problem, &region, 0.05, &cfg).unwrap();
    let eta = eta_vector(&x, &[0, 1], 0).unwrap();
    let center = dot(&eta, &y);
    let half = 1.959_963_984_540_054 * dot(&eta, &eta).sqrt();
    let (lo, hi) = out.ci.unwrap();
    assert!(
        (lo - (center - half)).abs() < 0.12 * half,
        "lo {lo} vs {}",
        center - half
    );
    assert!(
        (hi - (center + half)).abs() < 0.12 * half,
        "hi {hi} vs {}",
        center + half
    );
    // duality spot-check: points inside accepted, far points rejected
    let mid_cfg = SelectedTestConfig {
        chain: cfg.chain,
        null_value: 0.5 * (lo + hi),
        ..Default::default()
    };
    let p_mid = selected_z_test(&problem, &region, 0.05, &mid_cfg)
        .unwrap()
        .p_equal_tailed;
    assert!(p_mid > 0.05);
}

#[test]
fn z_test_conditional_level_under_selection() {
    // Under H0: beta_0 = 0 with a halfspace selection event, the rejection
    // frequency given selection is alpha.
    let n = 8;
    let alpha = 0.1;
    let x = random_design(n, 2, 10);
    // selection: first coordinate of y above 0.4
    let region = SelectionRegion::from_polytope(
        Polytope::new(vec![vec![-1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]], vec![-0.4], n).unwrap(),
    );
    let replicates = 2500u64;
    let rejections: usize = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(3000 + rep);
            // nuisance: beta_1 free, beta_0 = 0 under the null
            let beta1 = 0.7;
            loop {
                let eps: Vec<f64> =
                    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let y: Vec<f64> = (0..n).map(|i| beta1 * x[(i, 1)] + eps[i]).collect();
                if !region.contains(&y, 0.0) {
                    continue;
                }
                let problem = RegressionProblem {
                    x: x.clone(),
                    y,
                    model: vec![0, 1],
                    target: 0,
                    sigma: SigmaSpec::Known(1.0),
                };
                let cfg = SelectedTestConfig {
                    chain: quick_chain(rep),
                    ..Default::default()
                };
                let out = selected_z_test(&problem, &region, alpha, &cfg).unwrap();
                return (out.p_equal_tailed <= alpha) as usize;
            }
        })
        .sum();
    let rate = rejections as f64 / replicates as f64;
    let se = (alpha * (1.0 - alpha) / replicates as f64).sqrt();
    assert!(
        (rate - alpha).abs() <= 3.0 * se + 0.01,
        "conditional level {rate} (se {se})"
    );
}

/// Regularized incomplete beta via continued fraction (oracle-only code).
fn betai(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * x.ln()
        + b * (1.0 - x).ln();
    let front = ln_front.exp();
    let cf = {
        // Lentz's algorithm
        let mut c = 1.0f64;
        let mut d = 1.0 - (a + b) * x / (a + 1.0);
        if d.abs() < 1e-300 {
            d = 1e-300;
        }
        d = 1.0 / d;
        let mut h = d;
        for m in 1..300 {
            let m = m as f64;
            let num1 = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
            d = 1.0 + num1 * d;
            if d.abs() < 1e-300 {
                d = 1e-300;
            }
            c = 1.0 + num1 / c;
            if c.abs() < 1e-300 {
                c = 1e-300;
            }
            d = 1.0 / d;
            h *= d * c;
            let num2 = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
            d = 1.0 + num2 * d;
            if d.abs() < 1e-300 {
                d = 1e-300;
            }
            c = 1.0 + num2 / c;
            if c.abs() < 1e-300 {
                c = 1e-300;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-14 {
                break;
            }
        }
        h
    };
    if x < (a + 1.0) / (a + b + 2.0) {
        front * cf / a
    } else {
        1.0 - betai(b, a, 1.0 - x)
    }
}

/// Two-sided classical t-test p-value (oracle).
fn t_two_sided_p(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    betai(df / 2.0, 0.5, x)
}

#[test]
fn t_test_without_selection_matches_classical() {
    let n = 12;
    let x = random_design(n, 2, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let problem = RegressionProblem {
        x: x.clone(),
        y: y.clone(),
        model: vec![0, 1],
        target: 0,
        sigma: SigmaSpec::Unknown,
    };
    let region = SelectionRegion::full(n);
    let cfg = SelectedTestConfig {
        chain: ChainConfig {
            burn_in: 500,
            thin: 2,
            n_samples: 60_000,
            seed: 13,
        },
        ..Default::default()
    };
    let out = selected_t_test(&problem, &region, 0.05, &cfg).unwrap();
    // classical t statistic
    let eta = eta_vector(&x, &[0, 1], 0).unwrap();
    let sig = hat_sigma_sq(&problem).unwrap().sqrt();
    let t = dot(&eta, &y) / (sig * dot(&eta, &eta).sqrt());
    let classical = t_two_sided_p(t, (n - 2) as f64);
    assert!(
        (out.p_equal_tailed - classical).abs() < 0.01,
        "mc {} classical {classical}",
        out.p_equal_tailed
    );
}

#[test]
fn t_test_p_values_uniform_under_selection() {
    let n = 10;
    let x = random_design(n, 2, 14);
    let mut sel_row = vec![0.0; n];
    sel_row[0] = -1.0;
    let region = SelectionRegion::from_polytope(
        Polytope::new(vec![sel_row], vec![-0.2], n).unwrap(),
    );
    let replicates = 3000u64;
    let pvals: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(40_000 + rep);
            let beta1 = 0.5;
            let sigma_true = 1.3;
            loop {
                let y: Vec<f64> = (0..n)
                    .map(|i| beta1 * x[(i, 1)] + sigma_true * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                if !region.contains(&y, 0.0) {
                    continue;
                }
                let problem = RegressionProblem {
                    x: x.clone(),
                    y,
                    model: vec![0, 1],
                    target: 0,
                    sigma: SigmaSpec::Unknown,
                };
                let cfg = SelectedTestConfig {
                    chain: ChainConfig {
                        burn_in: 300,
                        thin: 2,
                        n_samples: 1500,
                        seed: rep,
                    },
                    ..Default::default()
                };
                return selected_t_test(&problem, &region, 0.05, &cfg)
                    .unwrap()
                    .p_equal_tailed;
            }
        })
        .collect();
    let d = ks_distance_uniform(&pvals);
    // Monte Carlo p-values are discrete-ish and conservative near 1; allow
    // slack over the exact KS critical value
    let crit = ks_critical(0.01, replicates as usize) + 0.015;
    assert!(d < crit, "KS distance {d} crit {crit}");
}

#[test]
fn translation_equivariance_is_exact() {
    let n = 9;
    let x = random_design(n, 2, 15);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut sel_row = vec![0.0; n];
    sel_row[1] = -1.0;
    let region = SelectionRegion::from_polytope(
        Polytope::new(vec![sel_row], vec![2.0], n).unwrap(),
    );
    assert!(region.contains(&y, 0.0));
    let b = 0.8;
    let problem_b = RegressionProblem {
        x: x.clone(),
        y: y.clone(),
        model: vec![0, 1],
        target: 0,
        sigma: SigmaSpec::Unknown,
    };
    let cfg = SelectedTestConfig {
        chain: quick_chain(77),
        null_value: b,
        ..Default::default()
    };
    let out_b = selected_t_test(&problem_b, &region, 0.05, &cfg).unwrap();

    // shifted data, zero null, region translated accordingly
    let xj = x.col(0);
    let y_shift: Vec<f64> = y.iter().zip(&xj).map(|(yi, xi)| yi - b * xi).collect();
    let shift: Vec<f64> = xj.iter().map(|v| b * v).collect();
    let problem_0 = RegressionProblem {
        x: x.clone(),
        y: y_shift,
        model: vec![0, 1],
        target: 0,
        sigma: SigmaSpec::Unknown,
    };
    let cfg0 = SelectedTestConfig {
        chain: quick_chain(77),
        null_value: 0.0,
        ..Default::default()
    };
    let out_0 = selected_t_test(&problem_0, &region.translated(&shift), 0.05, &cfg0).unwrap();
    assert_eq!(out_b.p_equal_tailed, out_0.p_equal_tailed);
    assert_eq!(out_b.reject, out_0.reject);
}

#[test]
fn t_interval_duality_and_coverage() {
    // coverage through duality: the interval inverts the test, so accepting
    // the truth is covering the truth; spot-check the inversion agreement
    // on a few instances, then measure accept-at-truth frequency.
    let n = 10;
    let x = random_design(n, 2, 17);
    let beta_true = 1.1;
    let sigma_true = 0.9;
    let mut sel_row = vec![0.0; n];
    sel_row[0] = -1.0;
    let region = SelectionRegion::from_polytope(
        Polytope::new(vec![sel_row], vec![0.3], n).unwrap(),
    );

    // inversion consistency on a few seeds
    for rep in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(60_000 + rep);
        let y: Vec<f64> = loop {
            let cand: Vec<f64> = (0..n)
                .map(|i| {
                    beta_true * x[(i, 0)]
                        + sigma_true * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            if region.contains(&cand, 0.0) {
                break cand;
            }
        };
        let problem = RegressionProblem {
            x: x.clone(),
            y,
            model: vec![0, 1],
            target: 0,
            sigma: SigmaSpec::Unknown,
        };
        let cfg = SelectedTestConfig {
            chain: quick_chain(rep),
            compute_ci: true,
            ..Default::default()
        };
        let out = selected_t_test(&problem, &region, 0.1, &cfg).unwrap();
        let (lo, hi) = out.ci.unwrap();
        assert!(lo < hi, "degenerate interval ({lo},{hi})");
        // testing at an interior point should accept; far outside should not
        let mid = 0.5 * (lo + hi);
        let cfg_mid = SelectedTestConfig {
            chain: quick_chain(rep),
            null_value: mid,
            ..Default::default()
        };
        let p_mid = selected_t_test(&problem, &region, 0.1, &cfg_mid)
            .unwrap()
            .p_equal_tailed;
        assert!(p_mid > 0.1, "interval midpoint rejected: p={p_mid}");
        let far = hi + 4.0 * (hi - lo).max(0.5);
        let cfg_far = SelectedTestConfig {
            chain: quick_chain(rep),
            null_value: far,
            ..Default::default()
        };
        let p_far = selected_t_test(&problem, &region, 0.1, &cfg_far)
            .unwrap()
            .p_equal_tailed;
        assert!(p_far <= 0.1, "far point accepted: p={p_far}");
    }

    // accept-at-truth frequency = coverage of the inverted interval
    let replicates = 1500u64;
    let alpha = 0.05;
    let hits: usize = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(70_000 + rep);
            loop {
                let y: Vec<f64> = (0..n)
                    .map(|i| {
                        beta_true * x[(i, 0)]
                            + sigma_true * rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect();
                if !region.contains(&y, 0.0) {
                    continue;
                }
                let problem = RegressionProblem {
                    x: x.clone(),
                    y,
                    model: vec![0, 1],
                    target: 0,
                    sigma: SigmaSpec::Unknown,
                };
                let cfg = SelectedTestConfig {
                    chain: ChainConfig {
                        burn_in: 300,
                        thin: 2,
                        n_samples: 1500,
                        seed: rep,
                    },
                    null_value: beta_true,
                    ..Default::default()
                };
                let out = selected_t_test(&problem, &region, alpha, &cfg).unwrap();
                return (out.p_equal_tailed > alpha) as usize;
            }
        })
        .sum();
    let cov = hits as f64 / replicates as f64;
    assert!((cov - 0.95).abs() <= 0.015 + 0.01, "coverage {cov}");
}
