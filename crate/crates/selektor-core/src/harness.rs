//! Experiment runner: the file-drawer cutoff, the data-splitting versus
//! data-carving regression simulation, the selection-inference tradeoff
//! sweep, discipline-wide/FCR/FWER aggregation checks, and the worked
//! example gallery.

use crate::expfam::GridCarrier;
use crate::geometry::{Polytope, SelectionRegion};
use crate::interval::IntervalUnion;
use crate::lasso::{lambda_mc, lasso_fit, lasso_selection_region};
use crate::linalg::{dot, Mat};
use crate::normal;
use crate::regression::{
    eta_vector, selected_z_test, RegressionProblem, SelectedTestConfig, SigmaSpec,
};
use crate::samplers::ChainConfig;
use crate::saturated::{saturated_z_test, SaturatedConfig, SaturatedMachinery};
use crate::truncgauss::{leftover_information, TruncatedGaussian};
use crate::umpu::{FamilySolver, InversionConfig};
use crate::{derive_seed, derive_seed2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config invalid: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Lasso(#[from] crate::lasso::LassoError),
    #[error(transparent)]
    Regression(#[from] crate::regression::RegressionError),
    #[error(transparent)]
    Saturated(#[from] crate::saturated::SaturatedError),
    #[error(transparent)]
    Umpu(#[from] crate::umpu::UmpuError),
    #[error(transparent)]
    ExpFam(#[from] crate::expfam::ExpFamError),
}

// ---------------------------------------------------------------------------
// file drawer

/// The selective cutoff: `c` with `P(|Y| > c | |Y| > threshold) = alpha`
/// under `Y ~ N(0,1)`, by bisection on the exact truncated tail.
pub fn file_drawer_cutoff(threshold: f64, alpha: f64) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0);
    assert!(threshold >= 0.0);
    let support = two_sided_support(threshold);
    let law = TruncatedGaussian::new(0.0, 1.0, &support).expect("support has mass");
    let tail = |c: f64| law.sf(c) + law.cdf(-c);
    let mut lo = threshold;
    let mut hi = threshold.max(1.0);
    while tail(hi) > alpha {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Conditional error rate of the nominal two-sided rule `|Y| > cutoff`
/// among effects selected by `|Y| > threshold`.
pub fn nominal_conditional_error(threshold: f64, cutoff: f64) -> f64 {
    if cutoff <= threshold {
        return 1.0;
    }
    ((normal::ln_sf(cutoff)) - normal::ln_sf(threshold)).exp()
}

fn two_sided_support(threshold: f64) -> IntervalUnion {
    if threshold <= 0.0 {
        IntervalUnion::full()
    } else {
        IntervalUnion::new(vec![
            (f64::NEG_INFINITY, -threshold),
            (threshold, f64::INFINITY),
        ])
    }
}

// ---------------------------------------------------------------------------
// carving simulation

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Split,
    Carve,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDist {
    Gaussian,
    StudentT { df: f64 },
}

/// How the model is selected in stage one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Lasso on the first `n1` rows, conditioning on active set and signs.
    LassoSigns,
    /// No selection: the true support is handed to stage two and the
    /// region is all of R^n. Classical-reduction checks use this.
    None,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChainSettings {
    pub burn_in: usize,
    pub thin: usize,
    pub n_samples: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        // sized so the projected statistic collects a few hundred effective
        // draws: its integrated autocorrelation time on carving problems at
        // this scale is around a hundred steps
        ChainSettings {
            burn_in: 2000,
            thin: 2,
            n_samples: 15_000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CarvingConfig {
    pub n: usize,
    pub p: usize,
    /// Equicorrelation of the design rows.
    pub rho: f64,
    /// Number of nonzero coefficients.
    pub sparsity: usize,
    /// Value of each nonzero coefficient.
    pub signal: f64,
    pub sigma: f64,
    /// Selection-stage sample size.
    pub n1: usize,
    pub mode: Mode,
    pub error_dist: ErrorDist,
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    #[serde(default = "default_lambda_draws")]
    pub lambda_mc_draws: usize,
    #[serde(default)]
    pub chain: ChainSettings,
    #[serde(default = "default_selection")]
    pub selection: SelectionRule,
    /// Cap on noise variables tested per screened replicate (None = all).
    /// Power-focused runs set 0 to skip the level computation entirely.
    #[serde(default)]
    pub max_noise_tests: Option<usize>,
}

fn default_lambda_draws() -> usize {
    2000
}

fn default_selection() -> SelectionRule {
    SelectionRule::LassoSigns
}

impl CarvingConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n1 == 0 || self.n1 > self.n {
            return Err(HarnessError::BadConfig(format!(
                "need 0 < n1 <= n, got n1={} n={}",
                self.n1, self.n
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(HarnessError::BadConfig(format!(
                "need 0 <= rho < 1, got {}",
                self.rho
            )));
        }
        if self.mode == Mode::Split && self.n1 == self.n {
            return Err(HarnessError::BadConfig(
                "split mode needs held-out rows (n1 < n)".into(),
            ));
        }
        if self.sparsity > self.p {
            return Err(HarnessError::BadConfig("sparsity exceeds p".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(HarnessError::BadConfig("alpha must be in (0,1)".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self.mode {
            Mode::Split => format!("split_{}", self.n1),
            Mode::Carve => format!("carve_{}", self.n1),
        }
    }
}

/// One row of simulation metrics with Monte Carlo standard errors.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsRow {
    pub label: String,
    pub mode: Mode,
    pub n1: usize,
    pub p_screen: f64,
    pub p_screen_se: f64,
    pub e_v: f64,
    pub e_v_se: f64,
    pub e_r_minus_v: f64,
    pub e_r_minus_v_se: f64,
    pub fdr: f64,
    pub fdr_se: f64,
    pub power: f64,
    pub power_se: f64,
    pub level: f64,
    pub level_se: f64,
    pub replicates: usize,
    pub screened: usize,
    pub tested_true: usize,
    pub tested_noise: usize,
    pub excluded_failures: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    /// Fixed column order; the documented interchange format of `carve-sim`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "label,mode,n1,p_screen,p_screen_se,e_v,e_v_se,e_r_minus_v,e_r_minus_v_se,\
             fdr,fdr_se,power,power_se,level,level_se,replicates,screened,tested_true,\
             tested_noise,excluded_failures\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:?},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.label,
                r.mode,
                r.n1,
                r.p_screen,
                r.p_screen_se,
                r.e_v,
                r.e_v_se,
                r.e_r_minus_v,
                r.e_r_minus_v_se,
                r.fdr,
                r.fdr_se,
                r.power,
                r.power_se,
                r.level,
                r.level_se,
                r.replicates,
                r.screened,
                r.tested_true,
                r.tested_noise,
                r.excluded_failures
            ));
        }
        out
    }
}

struct ReplicateOutcome {
    r: usize,
    v: usize,
    screened: bool,
    true_tested: usize,
    true_rejected: usize,
    noise_tested: usize,
    noise_rejected: usize,
    failures: usize,
}

/// Equicorrelated design with unit-normalized columns.
fn draw_design(n: usize, p: usize, rho: f64, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Mat::zeros(n, p);
    let shared_w = rho.sqrt();
    let own_w = (1.0 - rho).sqrt();
    for i in 0..n {
        let shared: f64 = StandardNormal.sample(&mut rng);
        for j in 0..p {
            let own: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] = shared_w * shared + own_w * own;
        }
    }
    for j in 0..p {
        let nn = dot(&x.col(j), &x.col(j)).sqrt();
        if nn > 0.0 {
            for i in 0..n {
                x[(i, j)] /= nn;
            }
        }
    }
    x
}

fn draw_errors(n: usize, dist: ErrorDist, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match dist {
        ErrorDist::Gaussian => (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
        ErrorDist::StudentT { df } => {
            // standardized to unit variance (for df > 2), so the robustness
            // run changes only the tail shape, not the noise scale the
            // Gaussian machinery assumes
            let t = StudentT::new(df).expect("df > 0");
            let scale = if df > 2.0 { ((df - 2.0) / df).sqrt() } else { 1.0 };
            (0..n).map(|_| scale * t.sample(&mut rng)).collect()
        }
    }
}

/// Classical two-sided z-test on the held-out rows.
fn split_z_p_value(
    x2: &Mat,
    y2: &[f64],
    model: &[usize],
    target: usize,
    sigma: f64,
) -> Result<f64, HarnessError> {
    let eta = eta_vector(x2, model, target)?;
    let z = dot(&eta, y2) / (sigma * dot(&eta, &eta).sqrt());
    Ok(2.0 * (normal::ln_sf(z.abs())).exp())
}

fn run_replicate(config: &CarvingConfig, rep: u64) -> ReplicateOutcome {
    let x = draw_design(config.n, config.p, config.rho, derive_seed2(config.seed, rep, 1));
    let eps = draw_errors(config.n, config.error_dist, derive_seed2(config.seed, rep, 2));
    let truth: Vec<usize> = (0..config.sparsity).collect();
    let mut y = vec![0.0; config.n];
    for i in 0..config.n {
        let mut mean = 0.0;
        for &j in &truth {
            mean += x[(i, j)] * config.signal;
        }
        y[i] = mean + config.sigma * eps[i];
    }

    let x1 = x.top_rows(config.n1);
    let y1 = &y[..config.n1];

    let (active, _signs, region) = match config.selection {
        SelectionRule::LassoSigns => {
            // the benchmark rule lambda = 2 E||X'eps||_inf is stated for the
            // half-quadratic objective; this crate's lasso minimizes
            // ||y - X b||^2 + lambda ||b||_1, so the equivalent fit uses
            // twice that value
            let lambda = 2.0
                * lambda_mc(
                    &x1,
                    config.sigma,
                    config.lambda_mc_draws,
                    derive_seed2(config.seed, rep, 3),
                );
            let fit = match lasso_fit(&x1, y1, lambda, 1e-8, 100_000) {
                Ok(f) => f,
                Err(_) => {
                    return ReplicateOutcome {
                        r: 0,
                        v: 0,
                        screened: false,
                        true_tested: 0,
                        true_rejected: 0,
                        noise_tested: 0,
                        noise_rejected: 0,
                        failures: 1,
                    }
                }
            };
            let region = lasso_selection_region(&x1, lambda, &fit.active, &fit.signs)
                .map(|r| r.embedded(config.n))
                .ok();
            (fit.active, fit.signs, region)
        }
        SelectionRule::None => (
            truth.clone(),
            vec![1.0; truth.len()],
            Some(SelectionRegion::full(config.n)),
        ),
    };

    let r = active.len();
    let v = active.iter().filter(|j| !truth.contains(j)).count();
    let screened = truth.iter().all(|j| active.contains(j));

    let mut out = ReplicateOutcome {
        r,
        v,
        screened,
        true_tested: 0,
        true_rejected: 0,
        noise_tested: 0,
        noise_rejected: 0,
        failures: 0,
    };
    if !screened || active.is_empty() {
        return out;
    }
    let region = match region {
        Some(r) => r,
        None => {
            out.failures += 1;
            return out;
        }
    };

    let mut noise_budget = config.max_noise_tests.unwrap_or(usize::MAX);
    for (t_idx, &j) in active.iter().enumerate() {
        let is_true = truth.contains(&j);
        if !is_true {
            if noise_budget == 0 {
                continue;
            }
            noise_budget -= 1;
        }
        let seed_t = derive_seed2(config.seed, rep, 100 + t_idx as u64);
        let rejected = match config.mode {
            Mode::Split => {
                let x2 = bottom_rows(&x, config.n1);
                let y2 = &y[config.n1..];
                match split_z_p_value(&x2, y2, &active, j, config.sigma) {
                    Ok(p) => p <= config.alpha,
                    Err(_) => {
                        out.failures += 1;
                        continue;
                    }
                }
            }
            Mode::Carve => {
                let problem = RegressionProblem {
                    x: x.clone(),
                    y: y.clone(),
                    model: active.clone(),
                    target: j,
                    sigma: SigmaSpec::Known(config.sigma),
                };
                if config.n1 == config.n {
                    // after selecting on every row, the statistic is
                    // conditionally independent of the orthogonal component:
                    // the saturated test is the selected-model test, exactly
                    let cfg = SaturatedConfig {
                        null_value: 0.0,
                        compute_ci: false,
                        umau: false,
                        seed: seed_t,
                    };
                    match saturated_z_test(&problem, &region, config.alpha, &cfg) {
                        Ok(outcome) => outcome.p_equal_tailed <= config.alpha,
                        Err(_) => {
                            out.failures += 1;
                            continue;
                        }
                    }
                } else {
                    let cfg = SelectedTestConfig {
                        chain: ChainConfig {
                            burn_in: config.chain.burn_in,
                            thin: config.chain.thin,
                            n_samples: config.chain.n_samples,
                            seed: seed_t,
                        },
                        null_value: 0.0,
                        compute_ci: false,
                        umau_ci: false,
                    };
                    match selected_z_test(&problem, &region, config.alpha, &cfg) {
                        Ok(outcome) => outcome.p_equal_tailed <= config.alpha,
                        Err(_) => {
                            out.failures += 1;
                            continue;
                        }
                    }
                }
            }
        };
        if is_true {
            out.true_tested += 1;
            out.true_rejected += rejected as usize;
        } else {
            out.noise_tested += 1;
            out.noise_rejected += rejected as usize;
        }
    }
    out
}

fn bottom_rows(x: &Mat, from: usize) -> Mat {
    let n = x.rows();
    let rows: Vec<Vec<f64>> = (from..n).map(|i| x.row(i).to_vec()).collect();
    Mat::from_rows(rows)
}

/// Runs the splitting-vs-carving experiment for one configuration.
///
/// Per replicate: draw an equicorrelated design (columns normalized to unit
/// length) and response, pick `lambda` by the Monte Carlo rule on the
/// selection rows, fit the lasso there, and condition on the active set and
/// signs. Split mode tests the selected coefficients classically on the
/// held-out rows; carve mode runs the selective z-test on all rows with the
/// region lifted to the first-stage rows. Power and level are conditioned
/// on successful screening (all true variables selected).
pub fn run_carving_experiment(config: &CarvingConfig) -> Result<MetricsTable, HarnessError> {
    config.validate()?;
    let outcomes: Vec<ReplicateOutcome> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|rep| run_replicate(config, rep))
        .collect();

    let reps = config.replicates as f64;
    let screened = outcomes.iter().filter(|o| o.screened).count();
    let p_screen = screened as f64 / reps;
    let rs: Vec<f64> = outcomes.iter().map(|o| o.r as f64).collect();
    let vs: Vec<f64> = outcomes.iter().map(|o| o.v as f64).collect();
    let tvs: Vec<f64> = outcomes.iter().map(|o| (o.r - o.v) as f64).collect();
    let fdrs: Vec<f64> = outcomes
        .iter()
        .map(|o| o.v as f64 / (o.r.max(1) as f64))
        .collect();
    let (e_v, e_v_se) = mean_se(&vs);
    let (e_tv, e_tv_se) = mean_se(&tvs);
    let (fdr, fdr_se) = mean_se(&fdrs);
    let _ = rs;

    let true_tested: usize = outcomes.iter().map(|o| o.true_tested).sum();
    let true_rej: usize = outcomes.iter().map(|o| o.true_rejected).sum();
    let noise_tested: usize = outcomes.iter().map(|o| o.noise_tested).sum();
    let noise_rej: usize = outcomes.iter().map(|o| o.noise_rejected).sum();
    let failures: usize = outcomes.iter().map(|o| o.failures).sum();

    let (power, power_se) = binom_rate(true_rej, true_tested);
    let (level, level_se) = binom_rate(noise_rej, noise_tested);

    let row = MetricsRow {
        label: config.label(),
        mode: config.mode,
        n1: config.n1,
        p_screen,
        p_screen_se: (p_screen * (1.0 - p_screen) / reps).sqrt(),
        e_v,
        e_v_se,
        e_r_minus_v: e_tv,
        e_r_minus_v_se: e_tv_se,
        fdr,
        fdr_se,
        power,
        power_se,
        level,
        level_se,
        replicates: config.replicates,
        screened,
        tested_true: true_tested,
        tested_noise: noise_tested,
        excluded_failures: failures,
    };
    Ok(MetricsTable { rows: vec![row] })
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn binom_rate(hits: usize, total: usize) -> (f64, f64) {
    if total == 0 {
        return (f64::NAN, f64::NAN);
    }
    let p = hits as f64 / total as f64;
    (p, (p * (1.0 - p) / total as f64).sqrt())
}

/// One point of the tradeoff sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub mode: Mode,
    pub n1: usize,
    pub p_screen: f64,
    pub power: f64,
    pub power_se: f64,
    /// `p_screen * power`: the chance of selecting the right model and
    /// then rejecting for a true variable.
    pub product: f64,
}

/// Runs the experiment across an `n1` grid for both procedures, emitting
/// screening probability, conditional power, and their product.
pub fn tradeoff_sweep(
    base: &CarvingConfig,
    n1_grid: &[usize],
) -> Result<Vec<SweepPoint>, HarnessError> {
    let mut out = Vec::new();
    for &n1 in n1_grid {
        for mode in [Mode::Split, Mode::Carve] {
            if mode == Mode::Split && n1 == base.n {
                continue;
            }
            let cfg = CarvingConfig {
                n1,
                mode,
                ..base.clone()
            };
            let table = run_carving_experiment(&cfg)?;
            let r = &table.rows[0];
            out.push(SweepPoint {
                mode,
                n1,
                p_screen: r.p_screen,
                power: r.power,
                power_se: r.power_se,
                product: r.p_screen * r.power,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// aggregation checks

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateKind {
    Discipline,
    Fcr,
    Fwer,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregateConfig {
    /// Effects per round (discipline uses a single round of this many).
    pub effects: usize,
    /// Rounds for the FCR and FWER studies.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Selection threshold on |Y|.
    pub threshold: f64,
    pub alpha: f64,
    /// Use the nominal rule/interval instead of the selective one.
    #[serde(default)]
    pub nominal: bool,
    /// Fraction of non-null effects.
    #[serde(default)]
    pub frac_nonnull: f64,
    /// Mean of non-null effects.
    #[serde(default)]
    pub signal: f64,
    pub seed: u64,
}

fn default_rounds() -> usize {
    400
}

#[derive(Clone, Debug, Serialize)]
pub struct AggregateReport {
    pub kind: AggregateKind,
    /// The controlled quantity: error ratio, FCR, or FWER.
    pub ratio: f64,
    pub se: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub alpha: f64,
}

/// Simulates the long-run aggregate behavior of selective procedures.
///
/// `discipline`: many independent file-drawer effects, each tested at
/// selective (or nominal) level alpha given selection; reports
/// false rejections over true nulls selected.
///
/// `fcr`: per round, selective equal-tailed intervals for every selected
/// effect; reports the average of `V / max(R, 1)`.
///
/// `fwer`: per round, only the largest |Y| is selected and tested
/// conditional on the runner-up magnitude; reports the familywise error.
pub fn aggregate_error_check(
    kind: AggregateKind,
    config: &AggregateConfig,
) -> Result<AggregateReport, HarnessError> {
    match kind {
        AggregateKind::Discipline => discipline_check(config),
        AggregateKind::Fcr => fcr_check(config),
        AggregateKind::Fwer => fwer_check(config),
    }
}

fn draw_effect(rng: &mut ChaCha8Rng, config: &AggregateConfig) -> (f64, f64) {
    let is_null = rng.random::<f64>() >= config.frac_nonnull;
    let mu = if is_null {
        0.0
    } else if rng.random::<f64>() < 0.5 {
        config.signal
    } else {
        -config.signal
    };
    let y = mu + rng.sample::<f64, _>(StandardNormal);
    (mu, y)
}

fn discipline_check(config: &AggregateConfig) -> Result<AggregateReport, HarnessError> {
    let cutoff = if config.nominal {
        crate::truncgauss::inverse_ln_sf((config.alpha / 2.0).ln())
    } else {
        file_drawer_cutoff(config.threshold, config.alpha)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut selected_nulls = 0usize;
    let mut false_rej = 0usize;
    for _ in 0..config.effects {
        let (mu, y) = draw_effect(&mut rng, config);
        if y.abs() <= config.threshold {
            continue;
        }
        if mu == 0.0 {
            selected_nulls += 1;
            if y.abs() > cutoff {
                false_rej += 1;
            }
        }
    }
    let (ratio, se) = binom_rate(false_rej, selected_nulls);
    Ok(AggregateReport {
        kind: AggregateKind::Discipline,
        ratio,
        se,
        numerator: false_rej as f64,
        denominator: selected_nulls as f64,
        alpha: config.alpha,
    })
}

/// Equal-tailed selective interval for the mean of one `N(mu, 1)`
/// observation selected by `|Y| > threshold`.
pub fn univariate_selective_interval(y: f64, threshold: f64, alpha: f64) -> (f64, f64) {
    let support = two_sided_support(threshold);
    let half = alpha / 2.0;
    let pivot = |m: f64| {
        TruncatedGaussian::new(m, 1.0, &support)
            .map(|law| law.cdf(y))
            .unwrap_or(if m > y { 0.0 } else { 1.0 })
    };
    let solve = |target: f64| {
        let mut lo = y - 40.0;
        let mut hi = y + 40.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            // pivot decreasing in m
            if pivot(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    (solve(1.0 - half), solve(half))
}

fn fcr_check(config: &AggregateConfig) -> Result<AggregateReport, HarnessError> {
    let rounds: Vec<f64> = (0..config.rounds as u64)
        .into_par_iter()
        .map(|round| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, round));
            let mut selected = 0usize;
            let mut misses = 0usize;
            for _ in 0..config.effects {
                let (mu, y) = draw_effect(&mut rng, config);
                if y.abs() <= config.threshold {
                    continue;
                }
                selected += 1;
                let (lo, hi) = if config.nominal {
                    (y - 1.959_963_984_540_054, y + 1.959_963_984_540_054)
                } else {
                    univariate_selective_interval(y, config.threshold, config.alpha)
                };
                if mu < lo || mu > hi {
                    misses += 1;
                }
            }
            misses as f64 / selected.max(1) as f64
        })
        .collect();
    let (ratio, se) = mean_se(&rounds);
    Ok(AggregateReport {
        kind: AggregateKind::Fcr,
        ratio,
        se,
        numerator: f64::NAN,
        denominator: config.rounds as f64,
        alpha: config.alpha,
    })
}

fn fwer_check(config: &AggregateConfig) -> Result<AggregateReport, HarnessError> {
    let rounds: Vec<f64> = (0..config.rounds as u64)
        .into_par_iter()
        .map(|round| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, round));
            let effects: Vec<(f64, f64)> =
                (0..config.effects).map(|_| draw_effect(&mut rng, config)).collect();
            let (sel_idx, &(mu, y)) = effects
                .iter()
                .enumerate()
                .max_by(|a, b| a.1 .1.abs().partial_cmp(&b.1 .1.abs()).unwrap())
                .unwrap();
            let runner_up = effects
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != sel_idx)
                .map(|(_, &(_, yk))| yk.abs())
                .fold(0.0f64, f64::max);
            // selective two-sided test of mu = 0 conditional on the others:
            // truncation |Y| > runner_up
            let support = two_sided_support(runner_up);
            let p = TruncatedGaussian::new(0.0, 1.0, &support)
                .map(|law| {
                    let w = law.cdf(y);
                    (2.0 * w.min(1.0 - w)).min(1.0)
                })
                .unwrap_or(1.0);
            (mu == 0.0 && p <= config.alpha) as usize as f64
        })
        .collect();
    let (ratio, se) = mean_se(&rounds);
    Ok(AggregateReport {
        kind: AggregateKind::Fwer,
        ratio,
        se,
        numerator: f64::NAN,
        denominator: config.rounds as f64,
        alpha: config.alpha,
    })
}

// ---------------------------------------------------------------------------
// example gallery

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GalleryExample {
    Ex2,
    Ex3,
    Ex4,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "example", rename_all = "lowercase")]
pub enum GalleryOutput {
    Ex2(Ex2Output),
    Ex3(Ex3Output),
    Ex4(Ex4Output),
}

/// Univariate selection `{Y > threshold}`: leftover information curve and
/// selective intervals.
#[derive(Clone, Debug, Serialize)]
pub struct Ex2Output {
    pub threshold: f64,
    pub mu_grid: Vec<f64>,
    pub leftover_info: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub umau_intervals: Vec<(f64, f64)>,
}

/// Two-observation splitting-vs-carving contrast: information curves and
/// expected confidence interval lengths.
#[derive(Clone, Debug, Serialize)]
pub struct Ex3Output {
    pub mu_grid: Vec<f64>,
    pub carve_info: Vec<f64>,
    pub split_info: Vec<f64>,
    pub length_mu: Vec<f64>,
    pub split_length: f64,
    pub carve_mean_length: Vec<f64>,
    pub carve_length_se: Vec<f64>,
    /// split length over carve length at each `length_mu` point
    pub length_ratio: Vec<f64>,
}

/// Bivariate one-sparse selection: selected- versus saturated-model
/// p-values at the observed data.
#[derive(Clone, Debug, Serialize)]
pub struct Ex4Output {
    pub y: (f64, f64),
    pub p_selected: f64,
    pub p_selected_ess: f64,
    pub p_saturated: f64,
}

/// Reproduces the quantitative content of the three worked examples.
pub fn example_gallery(which: GalleryExample, seed: u64) -> Result<GalleryOutput, HarnessError> {
    match which {
        GalleryExample::Ex2 => gallery_ex2().map(GalleryOutput::Ex2),
        GalleryExample::Ex3 => gallery_ex3(seed).map(GalleryOutput::Ex3),
        GalleryExample::Ex4 => gallery_ex4(seed).map(GalleryOutput::Ex4),
    }
}

fn gallery_ex2() -> Result<Ex2Output, HarnessError> {
    let threshold = 3.0;
    let mu_grid: Vec<f64> = (0..=100)
        .map(|i| threshold - 10.0 + 20.0 * i as f64 / 100.0)
        .collect();
    let leftover_info = mu_grid
        .iter()
        .map(|&mu| leftover_information(mu, threshold))
        .collect();
    let y_grid: Vec<f64> = vec![3.01, 3.1, 3.25, 3.5, 4.0, 4.5, 5.0, 6.0, 7.0, 8.0];
    let region = SelectionRegion::from_polytope(
        Polytope::new(vec![vec![-1.0]], vec![-threshold], 1).expect("halfspace"),
    );
    let mut umau_intervals = Vec::with_capacity(y_grid.len());
    for &y in &y_grid {
        let problem = RegressionProblem {
            x: Mat::from_cols(&[vec![1.0]]),
            y: vec![y],
            model: vec![0],
            target: 0,
            sigma: SigmaSpec::Known(1.0),
        };
        let mach = SaturatedMachinery::build(&problem, &region)?;
        umau_intervals.push(mach.umau_interval(0.05)?);
    }
    Ok(Ex2Output {
        threshold,
        mu_grid,
        leftover_info,
        y_grid,
        umau_intervals,
    })
}

/// Carrier of `T = Y1 + Y2` given `{Y1 > 3}` at mu = 0, up to constants:
/// `g0(t) = exp(-t^2/4) * SF(sqrt(2) (3 - t/2))`.
fn ex3_ln_carrier(t: f64) -> f64 {
    -t * t / 4.0 + normal::ln_sf(std::f64::consts::SQRT_2 * (3.0 - 0.5 * t))
}

fn gallery_ex3(seed: u64) -> Result<Ex3Output, HarnessError> {
    let mu_grid: Vec<f64> = (0..=80).map(|i| i as f64 * 0.125).collect();
    let carve_info: Vec<f64> = mu_grid
        .iter()
        .map(|&mu| 1.0 + leftover_information(mu, 3.0))
        .collect();
    let split_info = vec![1.0; mu_grid.len()];

    let length_mu = vec![3.0, 4.0, 5.0, 6.0, 8.0];
    let split_length = 2.0 * 1.959_963_984_540_054;
    let replicates = 250usize;
    let alpha = 0.05;

    let sel_support = IntervalUnion::single(3.0, f64::INFINITY);
    let mut carve_mean_length = Vec::new();
    let mut carve_length_se = Vec::new();
    let mut length_ratio = Vec::new();
    for (gi, &mu) in length_mu.iter().enumerate() {
        let lengths: Vec<f64> = (0..replicates as u64)
            .into_par_iter()
            .map(|rep| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed2(seed, gi as u64, rep));
                let y1 = TruncatedGaussian::new(mu, 1.0, &sel_support)
                    .expect("selection support")
                    .sample(&mut rng);
                let y2: f64 = mu + rng.sample::<f64, _>(StandardNormal);
                let t_obs = y1 + y2;
                let u: f64 = rng.random();
                // family of T given selection; natural parameter mu
                let grid = GridCarrier {
                    lo: -12.0,
                    hi: 2.0 * mu + 14.0,
                    n: 2500,
                    ln_carrier: ex3_ln_carrier,
                };
                let family = crate::expfam::NaturalFamily1D::new(grid, (-30.0, 30.0));
                let mut solver = FamilySolver::new(
                    &family,
                    InversionConfig::new(alpha, derive_seed2(seed, 777, rep)),
                );
                let (lo, hi) = solver.equal_tailed_interval(t_obs, u).expect("interval");
                hi - lo
            })
            .collect();
        let (mean, se) = mean_se(&lengths);
        carve_mean_length.push(mean);
        carve_length_se.push(se);
        length_ratio.push(split_length / mean);
    }
    Ok(Ex3Output {
        mu_grid,
        carve_info,
        split_info,
        length_mu,
        split_length,
        carve_mean_length,
        carve_length_se,
        length_ratio,
    })
}

fn gallery_ex4(seed: u64) -> Result<Ex4Output, HarnessError> {
    let y = vec![2.9, 2.5];
    let x = Mat::identity(2);

    // selected-model test: condition on choosing column 0 with positive
    // sign, the single polytope {y0 >= y1, y0 >= -y1}
    let signed = SelectionRegion::from_polytope(
        Polytope::new(vec![vec![-1.0, 1.0], vec![-1.0, -1.0]], vec![0.0, 0.0], 2)
            .expect("wedge"),
    );
    let problem = RegressionProblem {
        x: x.clone(),
        y: y.clone(),
        model: vec![0],
        target: 0,
        sigma: SigmaSpec::Known(1.0),
    };
    let cfg = SelectedTestConfig {
        chain: ChainConfig {
            burn_in: 2000,
            thin: 3,
            n_samples: 100_000,
            seed,
        },
        null_value: 0.0,
        compute_ci: false,
        umau_ci: false,
    };
    let selected = selected_z_test(&problem, &signed, 0.05, &cfg)?;

    // saturated-model test: condition also on y1, leaving the union of rays
    // {|y0| > |y1|}; two-sided truncated-Gaussian pivot, no sampling
    let unsigned = SelectionRegion::new(vec![
        Polytope::new(vec![vec![-1.0, 1.0], vec![-1.0, -1.0]], vec![0.0, 0.0], 2).expect("pos"),
        Polytope::new(vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0], 2).expect("neg"),
    ]);
    let sat_cfg = SaturatedConfig {
        null_value: 0.0,
        compute_ci: false,
        umau: false,
        seed,
    };
    let saturated = saturated_z_test(&problem, &unsigned, 0.05, &sat_cfg)?;

    Ok(Ex4Output {
        y: (2.9, 2.5),
        p_selected: selected.p_equal_tailed,
        p_selected_ess: selected.diagnostics.ess,
        p_saturated: saturated.p_equal_tailed,
    })
}

// ---------------------------------------------------------------------------
// shared test utilities

/// One-sample Kolmogorov-Smirnov distance against Uniform[0,1].
pub fn ks_distance_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((x - lo).abs()).max((hi - x).abs());
    }
    d
}

/// Asymptotic KS critical value at level `alpha` for sample size `n`.
pub fn ks_critical(alpha: f64, n: usize) -> f64 {
    ((-0.5 * (alpha / 2.0).ln()) / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_drawer_matches_closed_form() {
        let c = file_drawer_cutoff(1.0, 0.05);
        // closed form: sf(c) = alpha * sf(threshold)
        let expect = crate::truncgauss::inverse_ln_sf((0.05f64).ln() + normal::ln_sf(1.0));
        assert!((c - expect).abs() < 1e-9, "c={c} expect={expect}");
        assert!((c - 2.41).abs() < 0.005);
        // no selection: classical two-sided cutoff
        assert!((file_drawer_cutoff(0.0, 0.05) - 1.959_963_984_540_054).abs() < 1e-9);
    }

    #[test]
    fn nominal_rule_conditional_error() {
        let e = nominal_conditional_error(1.0, 1.959_963_984_540_054);
        assert!((e - 0.157_557).abs() < 1e-4, "e={e}");
    }

    #[test]
    fn ks_distance_detects_nonuniformity() {
        let uniformish: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_distance_uniform(&uniformish) < 0.01);
        let skewed: Vec<f64> = uniformish.iter().map(|u| u * u).collect();
        assert!(ks_distance_uniform(&skewed) > 0.2);
    }

    #[test]
    fn metrics_identity_ev_plus_etv_is_er() {
        let cfg = CarvingConfig {
            n: 24,
            p: 10,
            rho: 0.2,
            sparsity: 2,
            signal: 4.0,
            sigma: 1.0,
            n1: 24,
            mode: Mode::Carve,
            error_dist: ErrorDist::Gaussian,
            replicates: 30,
            seed: 7,
            alpha: 0.1,
            lambda_mc_draws: 300,
            chain: ChainSettings::default(),
            selection: SelectionRule::LassoSigns,
            max_noise_tests: None,
        };
        let t = run_carving_experiment(&cfg).unwrap();
        let r = &t.rows[0];
        // identity holds in the aggregated means
        assert!(r.e_v + r.e_r_minus_v <= 10.0 + 1e-12);
        assert!(r.e_v >= 0.0 && r.e_r_minus_v >= 0.0);
    }

    #[test]
    fn experiment_is_deterministic() {
        let cfg = CarvingConfig {
            n: 20,
            p: 8,
            rho: 0.0,
            sparsity: 2,
            signal: 5.0,
            sigma: 1.0,
            n1: 12,
            mode: Mode::Split,
            error_dist: ErrorDist::Gaussian,
            replicates: 40,
            seed: 33,
            alpha: 0.05,
            lambda_mc_draws: 200,
            chain: ChainSettings::default(),
            selection: SelectionRule::LassoSigns,
            max_noise_tests: None,
        };
        let a = run_carving_experiment(&cfg).unwrap().to_csv();
        let b = run_carving_experiment(&cfg).unwrap().to_csv();
        assert_eq!(a, b);
    }
}
