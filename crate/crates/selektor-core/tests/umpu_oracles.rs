//! Oracle checks for the Monte Carlo UMPU machinery against independent
//! quadrature of the truncated-normal density, plus level, duality, and
//! interval behavior.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use selektor_core::expfam::{GridCarrier, NaturalFamily1D};
use selektor_core::interval::IntervalUnion;
use selektor_core::truncgauss::TruncatedGaussian;
use selektor_core::umpu::{
    equal_tailed_test, solve_umpu_cutoffs, umpu_decision, FamilySolver, InversionConfig,
};
use selektor_core::TiltedSampleSet;

/// Adaptive Simpson quadrature, the independent oracle used against the
/// empirical-family solver.
fn adaptive_simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth > 40 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, m, left, tol / 2.0, depth + 1)
                + recurse(f, m, b, right, tol / 2.0, depth + 1)
        }
    }
    let whole = simpson(&f, a, b);
    recurse(&f, a, b, whole, tol, 0)
}

/// Standard normal density truncated to [1, inf), unnormalized.
fn trunc_density(z: f64) -> f64 {
    if z < 1.0 {
        0.0
    } else {
        (-0.5 * z * z).exp()
    }
}

/// A fine deterministic quadrature sample of N(0,1) | [1, inf).
fn trunc_grid_set(theta: f64) -> TiltedSampleSet {
    let grid = GridCarrier {
        lo: 1.0,
        hi: 14.0,
        n: 60_000,
        ln_carrier: |z: f64| -0.5 * z * z,
    };
    grid.sample_set(theta).unwrap()
}

#[test]
fn cutoffs_satisfy_moment_equations_under_quadrature() {
    // solve on the empirical family (quadrature-weighted carrier), then
    // check Cor.-1 equations with an independent adaptive-quadrature oracle
    let alpha = 0.05;
    let set = trunc_grid_set(0.0);
    let sol = solve_umpu_cutoffs(&set, 0.0, alpha).unwrap();
    assert!(!sol.boundary);
    // each grid atom stands for a cell of one step; the boundary rejection
    // probabilities locate the continuous cutoffs inside their cells
    let step = 13.0 / 59_999.0;
    let c1 = sol.lower.c + (sol.lower.gamma - 0.5) * step;
    let c2 = sol.upper.c + (0.5 - sol.upper.gamma) * step;
    assert!(1.0 <= c1 && c1 < c2, "cutoffs ({c1}, {c2})");

    let upper = 14.0;
    let mass = adaptive_simpson(trunc_density, 1.0, upper, 1e-13);
    let reject_mass = adaptive_simpson(trunc_density, 1.0, c1, 1e-13)
        + adaptive_simpson(trunc_density, c2, upper, 1e-13);
    let k1 = reject_mass / mass - alpha;
    assert!(k1.abs() < 1e-6, "K1 residual {k1}");

    let zw = |z: f64| z * trunc_density(z);
    let mean = adaptive_simpson(zw, 1.0, upper, 1e-13) / mass;
    let reject_mean = (adaptive_simpson(zw, 1.0, c1, 1e-13)
        + adaptive_simpson(zw, c2, upper, 1e-13))
        / mass;
    let k2 = reject_mean - alpha * mean;
    assert!(k2.abs() < 1e-6, "K2 residual {k2}");

    // the solver's own residual report must be at tolerance too
    assert!(sol.k1_residual.abs() <= 1e-10);
    assert!(sol.k2_residual.abs() <= 1e-8 * 3.0);
}

#[test]
fn randomized_level_on_truncated_normal() {
    let alpha = 0.05;
    let set = trunc_grid_set(0.0);
    let sol = solve_umpu_cutoffs(&set, 0.0, alpha).unwrap();
    let support = IntervalUnion::single(1.0, f64::INFINITY);
    let law = TruncatedGaussian::new(0.0, 1.0, &support).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 10_000;
    let mut rejections = 0usize;
    for _ in 0..n {
        let z = law.sample(&mut rng);
        let u: f64 = rng.random();
        rejections += umpu_decision(z, u, &sol) as usize;
    }
    let rate = rejections as f64 / n as f64;
    let band = 3.0 * (alpha * (1.0 - alpha) / n as f64).sqrt();
    assert!(
        (rate - alpha).abs() <= band.max(0.007),
        "rejection rate {rate}"
    );
}

#[test]
fn untruncated_interval_matches_nominal() {
    let grid = GridCarrier {
        lo: -14.0,
        hi: 14.0,
        n: 40_000,
        ln_carrier: |z: f64| -0.5 * z * z,
    };
    let family = NaturalFamily1D::new(grid, (-10.0, 10.0));
    for &z in &[-0.7, 0.0, 1.3] {
        let mut solver = FamilySolver::new(&family, InversionConfig::new(0.05, 5));
        let (lo, hi) = solver.umpu_interval(z, 0.42).unwrap();
        assert!((lo - (z - 1.96)).abs() < 0.02, "z={z} lo={lo}");
        assert!((hi - (z + 1.96)).abs() < 0.02, "z={z} hi={hi}");
    }
}

#[test]
fn far_above_threshold_interval_is_nominal() {
    // selection {Y > 3} observed at 8: selection is immaterial there
    let grid = GridCarrier {
        lo: 3.0,
        hi: 20.0,
        n: 50_000,
        ln_carrier: |z: f64| -0.5 * z * z,
    };
    let family = NaturalFamily1D::new(grid, (-10.0, 14.0));
    let mut solver = FamilySolver::new(&family, InversionConfig::new(0.05, 6));
    let (lo, hi) = solver.umpu_interval(8.0, 0.3).unwrap();
    assert!((lo - (8.0 - 1.96)).abs() < 0.05, "lo {lo}");
    assert!((hi - (8.0 + 1.96)).abs() < 0.05, "hi {hi}");
}

#[test]
fn interval_coverage_on_truncated_family() {
    // truncated N(theta, 1) on [3, inf) at theta = 3.5
    let theta_true = 3.5;
    let support = IntervalUnion::single(3.0, f64::INFINITY);
    let law = TruncatedGaussian::new(theta_true, 1.0, &support).unwrap();
    let grid = GridCarrier {
        lo: 3.0,
        hi: 24.0,
        n: 6_000,
        ln_carrier: |z: f64| -0.5 * z * z,
    };
    let family = NaturalFamily1D::new(grid, (-20.0, 20.0));
    let n = 2000u64;
    let covered: usize = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(41 + s);
            let z = law.sample(&mut rng);
            let u: f64 = rng.random();
            let mut solver = FamilySolver::new(&family, InversionConfig::new(0.05, 7));
            let (lo, hi) = solver.umpu_interval(z, u).unwrap();
            (lo <= theta_true && theta_true <= hi) as usize
        })
        .sum();
    let cov = covered as f64 / n as f64;
    assert!((0.93..=0.97).contains(&cov), "coverage {cov}");
}

#[test]
fn duality_of_test_and_interval() {
    // reject at theta0 iff theta0 outside the interval, same samples and u
    fn ln_carrier(z: f64) -> f64 {
        -0.5 * z * z
    }
    let grid = GridCarrier {
        lo: 1.0,
        hi: 15.0,
        n: 8_000,
        ln_carrier,
    };
    let family = NaturalFamily1D::new(
        GridCarrier {
            lo: 1.0,
            hi: 15.0,
            n: 8_000,
            ln_carrier,
        },
        (-12.0, 12.0),
    );
    let alpha = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let mut checked = 0usize;
    for _ in 0..1000 {
        let z: f64 = rng.random_range(1.05..7.0);
        let u: f64 = rng.random();
        let theta0: f64 = rng.random_range(-2.0..6.0);
        let set = grid.sample_set(theta0).unwrap();
        let sol = solve_umpu_cutoffs(&set, theta0, alpha).unwrap();
        let reject = umpu_decision(z, u, &sol);
        let mut solver = FamilySolver::new(&family, InversionConfig::new(alpha, 9));
        let (lo, hi) = solver.umpu_interval(z, u).unwrap();
        // skip knife-edge cases within bisection tolerance of an endpoint
        if (theta0 - lo).abs() < 1e-4 || (theta0 - hi).abs() < 1e-4 {
            continue;
        }
        checked += 1;
        let outside = theta0 < lo || theta0 > hi;
        assert_eq!(
            reject, outside,
            "duality broken at z={z} u={u} theta0={theta0} ci=({lo},{hi})"
        );
    }
    assert!(checked > 900, "too many knife-edge skips: {checked}");
}

#[test]
fn equal_tailed_p_matches_normal_tail() {
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts: Vec<f64> = (0..1_000_000)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let s = TiltedSampleSet::unit_weights(pts, 0.0).unwrap();
    let out = equal_tailed_test(1.96, &s, 0.0, 0.05, 3).unwrap();
    assert!(
        (out.p_equal_tailed - 0.05).abs() < 0.002,
        "p {}",
        out.p_equal_tailed
    );
}

#[test]
fn equal_tailed_agrees_with_umpu_on_symmetric_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut pts = Vec::new();
    for _ in 0..20_000 {
        let v: f64 = rng.random_range(0.0..4.0);
        pts.push(v);
        pts.push(-v);
    }
    let s = TiltedSampleSet::unit_weights(pts, 0.0).unwrap();
    let alpha = 0.05;
    let sol = solve_umpu_cutoffs(&s, 0.0, alpha).unwrap();
    for &z in &[-3.5, -1.0, 0.3, 2.2, 3.9] {
        let out = equal_tailed_test(z, &s, 0.0, alpha, 4).unwrap();
        // symmetric families: UMPU = equal-tailed; compare the decisions
        // away from the randomized boundary
        if (z - sol.lower.c).abs() > 1e-9 && (z - sol.upper.c).abs() > 1e-9 {
            let et_reject = out.p_equal_tailed <= alpha;
            assert_eq!(et_reject, out.reject, "z={z}");
        }
    }
}

#[test]
fn decision_is_monotone_in_each_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pts: Vec<f64> = (0..5000).map(|_| rng.random_range(-4.0..4.0)).collect();
    let s = TiltedSampleSet::unit_weights(pts, 0.0).unwrap();
    let sol = solve_umpu_cutoffs(&s, 0.2, 0.08).unwrap();
    // walking down in dictionary order below the lower cutoff keeps rejecting
    let mut z = sol.lower.c;
    let mut u = sol.lower.gamma / 2.0;
    assert!(umpu_decision(z, u, &sol));
    for _ in 0..50 {
        z -= rng.random_range(0.0..0.3);
        u = rng.random();
        assert!(umpu_decision(z, u, &sol), "lower tail broke at z={z}");
    }
    // and walking up above the upper cutoff
    let mut z = sol.upper.c;
    let mut u = 1.0 - sol.upper.gamma / 2.0;
    assert!(umpu_decision(z, u, &sol));
    for _ in 0..50 {
        z += rng.random_range(0.0..0.3);
        u = rng.random();
        assert!(umpu_decision(z, u, &sol), "upper tail broke at z={z}");
    }
}
