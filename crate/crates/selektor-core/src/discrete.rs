//! Non-Gaussian worked examples: the selective clinical trial with its
//! truncated (noncentral) hypergeometric test, and the Poisson scan
//! statistic with its conditional Monte Carlo test.

use crate::expfam::TiltedSampleSet;
use crate::umpu::{solve_umpu_cutoffs, umpu_decision, Diagnostics, Flag, TestOutcome, TiltedAtoms};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiscreteError {
    #[error("counts must satisfy 0 <= Y_j <= n_j for every arm")]
    BadCounts,
    #[error("need k < number of treatment arms, got k={k}, m={m}")]
    BadK { k: usize, m: usize },
    #[error("arm {arm} was not selected; selective inference conditions on selection")]
    ArmNotSelected { arm: usize },
    #[error("scan needs at least 2 points")]
    TooFewPoints,
    #[error("window endpoints must be elements of the point set")]
    WindowNotFromPoints,
    #[error("conditional sampler acceptance rate {rate:.2e} below {threshold:.2e}; increase n_mc or coarsen the conditioning")]
    LowAcceptance { rate: f64, threshold: f64 },
    #[error(transparent)]
    Umpu(#[from] crate::umpu::UmpuError),
    #[error(transparent)]
    ExpFam(#[from] crate::expfam::ExpFamError),
}

/// Trial counts: arm 0 is placebo, arms `1..=m` are treatments; `k` of the
/// treatments are selected in-sample.
#[derive(Clone, Debug)]
pub struct TrialData {
    /// Heart-attack counts per arm, placebo first.
    pub events: Vec<u64>,
    /// Patients per arm, aligned with `events`.
    pub sizes: Vec<u64>,
    /// Number of treatments to select.
    pub k: usize,
}

impl TrialData {
    pub fn validate(&self) -> Result<(), DiscreteError> {
        if self.events.len() != self.sizes.len()
            || self.events.len() < 2
            || self
                .events
                .iter()
                .zip(&self.sizes)
                .any(|(&y, &n)| n == 0 || y > n)
        {
            return Err(DiscreteError::BadCounts);
        }
        let m = self.events.len() - 1;
        if self.k == 0 || self.k >= m {
            return Err(DiscreteError::BadK { k: self.k, m });
        }
        Ok(())
    }

    fn rate(&self, arm: usize) -> f64 {
        self.events[arm] as f64 / self.sizes[arm] as f64
    }
}

/// Selects every treatment arm whose event rate is at or below the k-th
/// smallest treatment rate. Ties at the boundary are included, so more than
/// `k` arms can come back.
pub fn clinical_select(data: &TrialData) -> Result<Vec<usize>, DiscreteError> {
    data.validate()?;
    let m = data.events.len() - 1;
    let mut rates: Vec<f64> = (1..=m).map(|j| data.rate(j)).collect();
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cutoff = rates[data.k - 1];
    Ok((1..=m).filter(|&j| data.rate(j) <= cutoff).collect())
}

/// Would arm `arm` be selected if its event count were `v`, all other arms
/// unchanged?
fn selected_with_count(data: &TrialData, arm: usize, v: u64) -> bool {
    let m = data.events.len() - 1;
    let cand = v as f64 / data.sizes[arm] as f64;
    let mut rates: Vec<f64> = (1..=m)
        .map(|j| if j == arm { cand } else { data.rate(j) })
        .collect();
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cand <= rates[data.k - 1]
}

/// Exact log binomial coefficient; integer-exact up to 62 trials, then
/// through lgamma.
fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    if n <= 62 {
        let mut c: u128 = 1;
        let k = k.min(n - k);
        for i in 0..k {
            c = c * (n - i) as u128 / (i + 1) as u128;
        }
        (c as f64).ln()
    } else {
        libm::lgamma((n + 1) as f64) - libm::lgamma((k + 1) as f64)
            - libm::lgamma((n - k + 1) as f64)
    }
}

/// The conditional support and carrier of the selective Fisher test:
/// admissible event counts for the tested arm given the fixed margins and
/// the selection constraint, with log hypergeometric carrier weights.
pub struct FisherSupport {
    pub values: Vec<u64>,
    pub set: TiltedSampleSet,
}

/// Builds the truncated support for testing `arm`. Conditioning fixes the
/// other arms, the total `Y_0 + Y_arm`, and the event that `arm` was
/// selected; the pmf on that support is
/// `C(n_0, m - v) C(n_arm, v) exp(-beta v)`, i.e. noncentral hypergeometric
/// with natural parameter `theta = -beta` truncated by the selection cap.
pub fn fisher_support(data: &TrialData, arm: usize) -> Result<FisherSupport, DiscreteError> {
    data.validate()?;
    if !clinical_select(data)?.contains(&arm) {
        return Err(DiscreteError::ArmNotSelected { arm });
    }
    let n0 = data.sizes[0];
    let nj = data.sizes[arm];
    let total = data.events[0] + data.events[arm];
    let lo = total.saturating_sub(n0);
    let hi = nj.min(total);
    let mut values = Vec::new();
    let mut points = Vec::new();
    let mut logw = Vec::new();
    for v in lo..=hi {
        if !selected_with_count(data, arm, v) {
            continue;
        }
        values.push(v);
        points.push(v as f64);
        logw.push(ln_choose(n0, total - v) + ln_choose(nj, v));
    }
    debug_assert!(!values.is_empty(), "observed count must be admissible");
    let set = TiltedSampleSet::from_log_weights(points, logw, 0.0)?;
    Ok(FisherSupport { values, set })
}

/// Selective Fisher's exact test for `H0: beta_arm = beta0` on the
/// truncated noncentral hypergeometric family, by full enumeration of the
/// constrained support. Larger `beta` means a better treatment (log-odds
/// reduction), so the natural parameter of the count is `-beta`. Returns
/// the exact equal-tailed p-value, the randomized UMPU decision, and the
/// equal-tailed interval for `beta`.
pub fn selective_fisher_test(
    data: &TrialData,
    arm: usize,
    beta0: f64,
    alpha: f64,
    seed: u64,
) -> Result<TestOutcome, DiscreteError> {
    let support = fisher_support(data, arm)?;
    let v_obs = data.events[arm] as f64;
    let theta0 = -beta0;
    let mut diagnostics = Diagnostics::new(seed);

    if support.values.len() == 1 {
        diagnostics.flags.push(Flag::DegenerateSupport);
        diagnostics.ess = 1.0;
        diagnostics.k1_residual = 0.0;
        diagnostics.k2_residual = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        return Ok(TestOutcome {
            p_equal_tailed: 1.0,
            reject: false,
            aux_uniform: rng.random(),
            ci: Some((f64::NEG_INFINITY, f64::INFINITY)),
            diagnostics,
        });
    }

    // exact tails, no Monte Carlo continuity guard
    let atoms = TiltedAtoms::build(&support.set, theta0)?;
    let p_hi = atoms.right_mass(v_obs, 0.0);
    let p_lo = atoms.left_mass(v_obs, 1.0);
    let p = (2.0 * p_hi.min(p_lo)).min(1.0);

    let solution = solve_umpu_cutoffs(&support.set, theta0, alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aux_uniform: f64 = rng.random();
    let reject = umpu_decision(v_obs, aux_uniform, &solution);
    diagnostics.ess = solution.ess;
    diagnostics.k1_residual = solution.k1_residual;
    diagnostics.k2_residual = solution.k2_residual;
    if solution.boundary {
        diagnostics.flags.push(Flag::OneSidedBoundary);
    }

    let ci = fisher_interval(&support.set, v_obs, alpha)?;
    Ok(TestOutcome {
        p_equal_tailed: p,
        reject,
        aux_uniform,
        ci: Some(ci),
        diagnostics,
    })
}

/// Equal-tailed exact interval for `beta` by monotone root-finding in the
/// natural parameter: the truncated family's tail probabilities are
/// monotone in `theta = -beta`.
fn fisher_interval(
    set: &TiltedSampleSet,
    v_obs: f64,
    alpha: f64,
) -> Result<(f64, f64), DiscreteError> {
    let half = alpha / 2.0;
    let lower_tail = |theta: f64| -> Result<f64, DiscreteError> {
        Ok(TiltedAtoms::build(set, theta)?.left_mass(v_obs, 1.0))
    };
    let upper_tail = |theta: f64| -> Result<f64, DiscreteError> {
        Ok(TiltedAtoms::build(set, theta)?.right_mass(v_obs, 0.0))
    };
    let z_min = set.points().first().copied().unwrap();
    let z_max = set.points().last().copied().unwrap();
    // theta_hi: P_theta(Z <= v_obs) = alpha/2, finite only if v_obs < z_max
    let theta_hi = if v_obs >= z_max {
        f64::INFINITY
    } else {
        bisect(|t| Ok(lower_tail(t)? <= half), 1.0)?
    };
    let theta_lo = if v_obs <= z_min {
        f64::NEG_INFINITY
    } else {
        bisect(|t| Ok(upper_tail(t)? <= half), -1.0)?
    };
    // beta = -theta flips the interval
    Ok((-theta_hi, -theta_lo))
}

fn bisect<F>(mut hit: F, direction: f64) -> Result<f64, DiscreteError>
where
    F: FnMut(f64) -> Result<bool, DiscreteError>,
{
    let mut inside: f64 = 0.0;
    let mut step = 1.0;
    for _ in 0..80 {
        if !hit(inside)? {
            break;
        }
        inside -= direction * step;
        step *= 2.0;
    }
    let mut outside = inside;
    step = 1.0;
    for _ in 0..80 {
        outside += direction * step;
        if hit(outside)? {
            break;
        }
        step *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (inside + outside);
        if hit(mid)? {
            outside = mid;
        } else {
            inside = mid;
        }
    }
    Ok(0.5 * (inside + outside))
}

/// A window statistic for the scan: higher is more anomalous.
pub trait WindowStatistic {
    fn score(&self, n_total: usize, count_in: usize, width: f64) -> f64;
}

/// Plug-in Poisson likelihood ratio for an elevated-rate window.
pub struct PoissonLr;

impl WindowStatistic for PoissonLr {
    fn score(&self, n_total: usize, count_in: usize, width: f64) -> f64 {
        let n = n_total as f64;
        let t = count_in as f64;
        if !(width > 0.0) || width >= 1.0 {
            return 0.0;
        }
        let lam_in = t / width;
        let lam_out = (n - t) / (1.0 - width);
        if lam_in <= lam_out {
            return 0.0;
        }
        let mut ll = t * (t / (n * width)).ln();
        if n - t > 0.0 {
            ll += (n - t) * ((n - t) / (n * (1.0 - width))).ln();
        }
        ll
    }
}

/// Maximizes the window statistic over all point pairs `[Y_i, Y_j]`.
/// Deterministic tie-break toward smaller left index, then larger right
/// index. Returns the window and its score.
pub fn scan_select<S: WindowStatistic>(
    points: &[f64],
    stat: &S,
) -> Result<((f64, f64), f64), DiscreteError> {
    if points.len() < 2 {
        return Err(DiscreteError::TooFewPoints);
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        for j in (i + 1)..n {
            let width = sorted[j] - sorted[i];
            let score = stat.score(n, j - i + 1, width);
            let better = match best {
                None => true,
                Some((bi, bj, bs)) => {
                    score > bs || (score == bs && (i < bi || (i == bi && j > bj)))
                }
            };
            if better {
                best = Some((i, j, score));
            }
        }
    }
    let (i, j, score) = best.unwrap();
    Ok(((sorted[i], sorted[j]), score))
}

/// Conditional Monte Carlo scan test of `H0: beta = 0` given the total
/// count and the selected window.
///
/// Under the null and conditional on `N`, the points are i.i.d. uniform;
/// conditioning further on `{a, b in Y}` leaves `N - 2` uniforms. The
/// sampler simulates such point sets and keeps those whose scan selects the
/// same window; the one-sided rank p-value with the `(n+1)` correction
/// compares the observed in-window count against the accepted replicates.
/// The in-window count is coarsely discrete, so the reported rank p is
/// conservative; the `reject` field instead carries the randomized rank
/// decision, whose level is exactly alpha.
pub fn scan_test<S: WindowStatistic>(
    points: &[f64],
    window: (f64, f64),
    alpha: f64,
    n_mc: usize,
    seed: u64,
    stat: &S,
) -> Result<TestOutcome, DiscreteError> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n < 2 {
        return Err(DiscreteError::TooFewPoints);
    }
    let (a, b) = window;
    if !sorted.contains(&a) || !sorted.contains(&b) {
        return Err(DiscreteError::WindowNotFromPoints);
    }
    let mut diagnostics = Diagnostics::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aux_uniform: f64 = rng.random();

    // degenerate conditioning: the window spans the whole point range, the
    // statistic is the total count with probability one
    if a == sorted[0] && b == sorted[n - 1] {
        diagnostics.flags.push(Flag::DegenerateSupport);
        return Ok(TestOutcome {
            p_equal_tailed: 1.0,
            reject: false,
            aux_uniform,
            ci: None,
            diagnostics,
        });
    }

    let t_obs = count_in(&sorted, a, b);
    let mut accepted = 0usize;
    let mut strictly_above = 0usize; // simulated T > observed T
    let mut ties = 0usize; // simulated T == observed T
    let mut tried = 0usize;
    let target_accepted = 200usize;
    let mut sim = Vec::with_capacity(n);
    while tried < n_mc && accepted < target_accepted {
        tried += 1;
        sim.clear();
        sim.push(a);
        sim.push(b);
        for _ in 0..(n - 2) {
            sim.push(rng.random::<f64>());
        }
        let (w, _) = scan_select(&sim, stat)?;
        if w != (a, b) {
            continue;
        }
        accepted += 1;
        let mut s = sim.clone();
        s.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let t_sim = count_in(&s, a, b);
        if t_sim > t_obs {
            strictly_above += 1;
        } else if t_sim == t_obs {
            ties += 1;
        }
    }
    let rate = accepted as f64 / tried.max(1) as f64;
    if accepted == 0 || (rate < 1e-4 && accepted < 20) {
        return Err(DiscreteError::LowAcceptance {
            rate,
            threshold: 1e-4,
        });
    }
    // conservative rank p (ties counted against rejection), and the
    // randomized rank decision, which is exact level alpha for
    // exchangeable draws regardless of how coarse T is
    let p = (strictly_above + ties + 1) as f64 / (accepted + 1) as f64;
    let p_randomized =
        (strictly_above as f64 + aux_uniform * (1.0 + ties as f64)) / (accepted + 1) as f64;
    diagnostics.ess = accepted as f64;
    diagnostics.k1_residual = 0.0;
    diagnostics.k2_residual = 0.0;
    if ((accepted + 1) as f64 * alpha) < 1.0 {
        diagnostics.flags.push(Flag::CannotReject {
            min_p: 1.0 / (accepted + 1) as f64,
        });
    }
    Ok(TestOutcome {
        p_equal_tailed: p,
        reject: p_randomized <= alpha,
        aux_uniform,
        ci: None,
        diagnostics,
    })
}

fn count_in(sorted: &[f64], a: f64, b: f64) -> usize {
    let lo = sorted.partition_point(|&x| x < a);
    let hi = sorted.partition_point(|&x| x <= b);
    hi - lo
}
