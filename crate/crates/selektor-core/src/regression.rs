//! Selected-model regression inference: the sampling-based selective z-test
//! (known error variance) and selective t-test (unknown error variance).
//!
//! Both tests condition on `X_{M\j}' Y` — and for the t-test additionally on
//! `||Y||` — which removes every nuisance parameter of the selected model and
//! leaves a one-parameter exponential family for `eta' Y` restricted to the
//! selection event. The z-test samples that law with a hit-and-run chain on
//! the affine slice; the t-test samples a region-intersected ball and
//! projects onto the sphere with exact radial importance weights.

use crate::expfam::{NaturalFamily1D, TiltedSampleSet};
use crate::geometry::{GeometryError, SelectionRegion};
use crate::linalg::{self, dot, norm2, Mat};
use crate::samplers::{
    self, hit_and_run, hit_and_run_uniform_ball, sphere_project_weights, ChainConfig,
    SamplerError,
};
use crate::truncgauss::TruncGaussError;
use crate::umpu::{
    equal_tailed_test, FamilySolver, Flag, InversionConfig, TestOutcome, TiltedAtoms, UmpuError,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("design columns {0:?} are collinear within the selected model")]
    RankDeficient(Vec<usize>),
    #[error("target index {target} is not in the selected model")]
    TargetNotInModel { target: usize },
    #[error("this test requires a known sigma")]
    SigmaRequired,
    #[error("this test is for unknown sigma; use the z-test when sigma is known")]
    SigmaKnown,
    #[error("insufficient residual dimension: n - |M| - 1 = {0} < 1")]
    InsufficientResidualDf(i64),
    #[error("response vector does not lie in the selection region")]
    OutsideRegion,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Umpu(#[from] UmpuError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    TruncGauss(#[from] TruncGaussError),
    #[error(transparent)]
    ExpFam(#[from] crate::expfam::ExpFamError),
}

/// Error variance: known, or an unknown nuisance parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SigmaSpec {
    Known(f64),
    Unknown,
}

/// A regression inference question: design, response, selected model `M`,
/// target coefficient `j in M`, and the sigma regime.
#[derive(Clone, Debug)]
pub struct RegressionProblem {
    pub x: Mat,
    pub y: Vec<f64>,
    pub model: Vec<usize>,
    pub target: usize,
    pub sigma: SigmaSpec,
}

impl RegressionProblem {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn model_size(&self) -> usize {
        self.model.len()
    }

    pub(crate) fn validate(&self) -> Result<(), RegressionError> {
        if !self.model.contains(&self.target) {
            return Err(RegressionError::TargetNotInModel {
                target: self.target,
            });
        }
        if let SigmaSpec::Unknown = self.sigma {
            let df = self.n() as i64 - self.model_size() as i64;
            if df < 1 {
                return Err(RegressionError::InsufficientResidualDf(df - 1));
            }
        }
        Ok(())
    }

    pub(crate) fn others(&self) -> Vec<usize> {
        self.model
            .iter()
            .copied()
            .filter(|&k| k != self.target)
            .collect()
    }
}

/// The statistics held fixed by conditioning: rows spanning `X_{M\j}' Y`
/// (plus a marker for the norm constraint in the t-test) and their observed
/// values.
#[derive(Clone, Debug)]
pub struct ConditioningSlice {
    pub c: Mat,
    pub d: Vec<f64>,
    pub fix_norm: bool,
}

impl ConditioningSlice {
    pub fn for_problem(problem: &RegressionProblem) -> Self {
        let others = problem.others();
        let rows: Vec<Vec<f64>> = others.iter().map(|&k| problem.x.col(k)).collect();
        let c = Mat::from_rows(rows);
        let d = if c.rows() > 0 {
            c.mul_vec(&problem.y)
        } else {
            vec![]
        };
        ConditioningSlice {
            c,
            d,
            fix_norm: matches!(problem.sigma, SigmaSpec::Unknown),
        }
    }
}

/// The direction `eta_j^M = X_{j.M} / ||X_{j.M}||^2` with
/// `X_{j.M} = P^perp_{X_{M\j}} X_j`: the vector with `eta' X_j = 1` and
/// `eta' X_k = 0` for the other selected columns, so that `eta' Y` is the
/// OLS coordinate for the target.
pub fn eta_vector(x: &Mat, model: &[usize], target: usize) -> Result<Vec<f64>, RegressionError> {
    if !model.contains(&target) {
        return Err(RegressionError::TargetNotInModel { target });
    }
    let others: Vec<usize> = model.iter().copied().filter(|&k| k != target).collect();
    let xj = x.col(target);
    let adjusted = if others.is_empty() {
        xj
    } else {
        let xb = x.select_cols(&others);
        let gram = xb.gram();
        let rhs = xb.t_mul_vec(&xj);
        let coef = linalg::solve_spd(&gram, &rhs)
            .map_err(|_| RegressionError::RankDeficient(model.to_vec()))?;
        let mut adj = xj;
        let fitted = xb.mul_vec(&coef);
        for (a, f) in adj.iter_mut().zip(fitted) {
            *a -= f;
        }
        adj
    };
    let nn = dot(&adjusted, &adjusted);
    if nn <= 1e-12 * dot(&x.col(target), &x.col(target)).max(1e-300) {
        return Err(RegressionError::RankDeficient(model.to_vec()));
    }
    Ok(adjusted.into_iter().map(|v| v / nn).collect())
}

/// `||P^perp_{X_M} y||^2 / (n - |M|)`.
///
/// Exposed for diagnostics only: conditional on a selection event this is
/// neither unbiased for sigma^2 nor chi-square distributed, and it should
/// not be treated as a serious variance estimate in the selective setting.
pub fn hat_sigma_sq(problem: &RegressionProblem) -> Result<f64, RegressionError> {
    let n = problem.n();
    let m = problem.model_size();
    assert!(n > m, "hat_sigma_sq needs n > |M|");
    let xm = problem.x.select_cols(&problem.model);
    let gram = xm.gram();
    let rhs = xm.t_mul_vec(&problem.y);
    let coef = linalg::solve_spd(&gram, &rhs)
        .map_err(|_| RegressionError::RankDeficient(problem.model.clone()))?;
    let fitted = xm.mul_vec(&coef);
    let rss: f64 = problem
        .y
        .iter()
        .zip(&fitted)
        .map(|(yi, fi)| (yi - fi) * (yi - fi))
        .sum();
    let out = rss / (n - m) as f64;

    // decomposition identity: ||y||^2 - ||P_{M\j} y||^2 - (eta'y)^2/||eta||^2
    // must reproduce (n - |M|) * sigma_hat^2
    let eta = eta_vector(&problem.x, &problem.model, problem.target)?;
    let others = problem.others();
    let proj_sq = if others.is_empty() {
        0.0
    } else {
        let xb = problem.x.select_cols(&others);
        let g = xb.gram();
        let r = xb.t_mul_vec(&problem.y);
        let c = linalg::solve_spd(&g, &r)
            .map_err(|_| RegressionError::RankDeficient(problem.model.clone()))?;
        let p = xb.mul_vec(&c);
        dot(&p, &p)
    };
    let zz = dot(&eta, &problem.y);
    let alt = dot(&problem.y, &problem.y) - proj_sq - zz * zz / dot(&eta, &eta);
    debug_assert!(
        (alt - rss).abs() <= 1e-8 * rss.abs().max(1.0),
        "residual decomposition identity violated: {alt} vs {rss}"
    );
    Ok(out)
}

/// Knobs for the sampling-based selective tests.
#[derive(Clone, Debug)]
pub struct SelectedTestConfig {
    pub chain: ChainConfig,
    /// Hypothesized value of the target coefficient.
    pub null_value: f64,
    pub compute_ci: bool,
    /// Invert the randomized UMPU test for the interval instead of the
    /// equal-tailed one.
    pub umau_ci: bool,
}

impl Default for SelectedTestConfig {
    fn default() -> Self {
        SelectedTestConfig {
            chain: ChainConfig::default(),
            null_value: 0.0,
            compute_ci: false,
            umau_ci: false,
        }
    }
}

struct ZTestMachinery<'a> {
    problem: &'a RegressionProblem,
    region: &'a SelectionRegion,
    eta: Vec<f64>,
    sigma: f64,
    /// theta = beta_j * theta_per_beta = beta_j / (sigma^2 ||eta||^2)
    theta_per_beta: f64,
    slice: ConditioningSlice,
    chain: ChainConfig,
}

impl<'a> ZTestMachinery<'a> {
    fn new(
        problem: &'a RegressionProblem,
        region: &'a SelectionRegion,
        chain: ChainConfig,
    ) -> Result<Self, RegressionError> {
        problem.validate()?;
        let sigma = match problem.sigma {
            SigmaSpec::Known(s) => s,
            SigmaSpec::Unknown => return Err(RegressionError::SigmaRequired),
        };
        if !region.contains(&problem.y, 1e-7) {
            return Err(RegressionError::OutsideRegion);
        }
        let eta = eta_vector(&problem.x, &problem.model, problem.target)?;
        let eta_sq = dot(&eta, &eta);
        Ok(ZTestMachinery {
            problem,
            region,
            theta_per_beta: 1.0 / (sigma * sigma * eta_sq),
            sigma,
            eta,
            slice: ConditioningSlice::for_problem(problem),
            chain,
        })
    }

    /// Samples the conditional law of `eta' Y` at coefficient `beta`,
    /// returning the empirical family member at the matching natural
    /// parameter together with the chain's lag-1 autocorrelation of the
    /// projected statistic (computed on the raw draw order).
    fn sample_at_beta(
        &self,
        beta: f64,
        seed: u64,
    ) -> Result<(TiltedSampleSet, f64), RegressionError> {
        let n = self.problem.n();
        let mut mean = vec![0.0; n];
        linalg::axpy(beta, &self.problem.x.col(self.problem.target), &mut mean);
        let affine = if self.slice.c.rows() > 0 {
            Some((&self.slice.c, self.slice.d.as_slice()))
        } else {
            None
        };
        let cfg = ChainConfig { seed, ..self.chain };
        let draws = hit_and_run(
            &mean,
            self.sigma,
            self.region,
            affine,
            Some(&self.eta),
            Some(&self.problem.y),
            &cfg,
        )?;
        let zs = draws.project(&self.eta);
        let lag1 = samplers::lag1_autocorr(&zs);
        Ok((
            TiltedSampleSet::unit_weights(zs, beta * self.theta_per_beta)?,
            lag1,
        ))
    }
}

/// Selective z-test of `H0: beta_j = b` in the selected model with known
/// sigma. Builds the affine slice fixing `X_{M\j}' Y`, runs hit-and-run on
/// it restricted to the selection region under the null, and feeds the
/// `eta' Y` draws into the Monte Carlo exponential-family tests. The
/// reported interval is for `beta_j`.
pub fn selected_z_test(
    problem: &RegressionProblem,
    region: &SelectionRegion,
    alpha: f64,
    config: &SelectedTestConfig,
) -> Result<TestOutcome, RegressionError> {
    let mach = ZTestMachinery::new(problem, region, config.chain)?;
    let z_obs = dot(&mach.eta, &problem.y);
    let theta0 = config.null_value * mach.theta_per_beta;
    let (samples, lag1) = mach.sample_at_beta(config.null_value, config.chain.seed)?;
    let mut outcome = equal_tailed_test(z_obs, &samples, theta0, alpha, config.chain.seed)?;
    outcome.diagnostics.lag1_autocorr = Some(lag1);

    if config.compute_ci {
        let theta_per_beta = mach.theta_per_beta;
        let mach_ref = &mach;
        let sampler = move |theta: f64, seed: u64| {
            mach_ref
                .sample_at_beta(theta / theta_per_beta, seed)
                .map(|(set, _)| set)
                .map_err(|e| crate::expfam::ExpFamError::Sampler(e.to_string()))
        };
        let family = NaturalFamily1D::new(sampler, (f64::NEG_INFINITY, f64::INFINITY));
        let inv = InversionConfig::new(alpha, crate::derive_seed(config.chain.seed, 0x5eed));
        let mut solver = FamilySolver::new(&family, inv);
        let (lo, hi) = if config.umau_ci {
            solver.umpu_interval(z_obs, outcome.aux_uniform)?
        } else {
            solver.equal_tailed_interval(z_obs, outcome.aux_uniform)?
        };
        outcome.ci = Some((lo / theta_per_beta, hi / theta_per_beta));
    }
    Ok(outcome)
}

struct TTestMachinery<'a> {
    problem: &'a RegressionProblem,
    region: &'a SelectionRegion,
    eta: Vec<f64>,
    q_cols: Vec<Vec<f64>>,
    chain: ChainConfig,
}

impl<'a> TTestMachinery<'a> {
    fn new(
        problem: &'a RegressionProblem,
        region: &'a SelectionRegion,
        chain: ChainConfig,
    ) -> Result<Self, RegressionError> {
        problem.validate()?;
        if let SigmaSpec::Known(_) = problem.sigma {
            return Err(RegressionError::SigmaKnown);
        }
        let df = problem.n() as i64 - problem.model_size() as i64 - 1;
        if df < 1 {
            return Err(RegressionError::InsufficientResidualDf(df));
        }
        if !region.contains(&problem.y, 1e-7) {
            return Err(RegressionError::OutsideRegion);
        }
        let eta = eta_vector(&problem.x, &problem.model, problem.target)?;
        let others = problem.others();
        let other_cols: Vec<Vec<f64>> = others.iter().map(|&k| problem.x.col(k)).collect();
        let q_cols = linalg::complement_basis(&other_cols, problem.n());
        Ok(TTestMachinery {
            problem,
            region,
            eta,
            q_cols,
            chain,
        })
    }

    /// Weighted draws of `eta' Y~` under `H0: beta_j = b`, where
    /// `Y~ = Y - b X_j`. Sampling happens in the coordinates of the
    /// orthogonal complement of `X_{M\j}`: uniform over the region-
    /// intersected ball of radius `L = ||Q' Y~||`, projected onto the sphere
    /// with exact radial weights.
    fn sample_null(
        &self,
        b: f64,
        seed: u64,
    ) -> Result<(f64, TiltedSampleSet, usize), RegressionError> {
        let n = self.problem.n();
        let xj = self.problem.x.col(self.problem.target);
        let y_shift: Vec<f64> = self
            .problem
            .y
            .iter()
            .zip(&xj)
            .map(|(yi, xi)| yi - b * xi)
            .collect();
        let mut shift = vec![0.0; n];
        linalg::axpy(b, &xj, &mut shift);
        let region_b = self.region.translated(&shift);

        let v_obs: Vec<f64> = self.q_cols.iter().map(|q| dot(q, &y_shift)).collect();
        let radius = norm2(&v_obs);
        let mut u_proj = y_shift.clone();
        for (q, &v) in self.q_cols.iter().zip(&v_obs) {
            linalg::axpy(-v, q, &mut u_proj);
        }
        // region in unit-ball coordinates: {u : U + Q (radius u) in region_b}
        let region_u = region_b.pullback(&u_proj, &self.q_cols).scaled(radius);
        let start: Vec<f64> = v_obs.iter().map(|v| v / radius).collect();
        let cfg = ChainConfig { seed, ..self.chain };
        // statistic direction in u coordinates, for mixing
        let qte: Vec<f64> = self.q_cols.iter().map(|q| dot(q, &self.eta)).collect();
        let ball = hit_and_run_uniform_ball(&region_u, 1.0, Some(&qte), &start, &cfg)?;
        let k = self.q_cols.len();
        let proj = sphere_project_weights(&ball, k, &region_u);

        // statistic: eta' y~ = eta'U + radius * (Q' eta)' u
        let eta_u = dot(&self.eta, &u_proj);
        let zs: Vec<f64> = proj
            .draws
            .points
            .iter()
            .map(|u| eta_u + radius * dot(&qte, u))
            .collect();
        let z_obs = dot(&self.eta, &y_shift);
        let set = TiltedSampleSet::new(zs, proj.draws.weights.clone(), 0.0)?;
        Ok((z_obs, set, proj.discarded))
    }
}

/// Selective t-test of `H0: beta_j = b` in the selected model with unknown
/// sigma. Conditioning additionally fixes `||Y||`; the law on that slice is
/// uniform, sampled through the ball-to-sphere scheme. Nonzero nulls go
/// through the shift `Y~ = Y - b X_j`, whose natural parameter
/// `(beta_j - b)/sigma^2` vanishes under the null. The interval is over
/// `b`, by bisection on the monotone one-sided tail probabilities computed
/// from a common random-number stream.
pub fn selected_t_test(
    problem: &RegressionProblem,
    region: &SelectionRegion,
    alpha: f64,
    config: &SelectedTestConfig,
) -> Result<TestOutcome, RegressionError> {
    let mach = TTestMachinery::new(problem, region, config.chain)?;
    let seed = config.chain.seed;
    let (z_obs, set, discarded) = mach.sample_null(config.null_value, seed)?;
    let mut outcome = equal_tailed_test(z_obs, &set, 0.0, alpha, seed)?;
    if discarded > 0 {
        outcome
            .diagnostics
            .flags
            .push(Flag::SamplerExclusions { count: discarded });
    }

    if config.compute_ci {
        let beta_hat = dot(&mach.eta, &problem.y);
        let sig_guess = hat_sigma_sq(problem)?.sqrt().max(1e-8);
        let scale = sig_guess * norm2(&mach.eta) * 2.0;
        let half = alpha / 2.0;
        // common random numbers: every b reuses the same chain seed
        let lower_tail = |b: f64| -> Result<bool, RegressionError> {
            let (z, s, _) = mach.sample_null(b, seed)?;
            let atoms = TiltedAtoms::build(&s, 0.0)?;
            Ok(atoms.left_mass(z, 1.0) <= half)
        };
        let upper_tail = |b: f64| -> Result<bool, RegressionError> {
            let (z, s, _) = mach.sample_null(b, seed)?;
            let atoms = TiltedAtoms::build(&s, 0.0)?;
            Ok(atoms.right_mass(z, 0.0) <= half)
        };
        let hi = bisect_monotone(beta_hat, scale, 1.0, lower_tail)?;
        let lo = bisect_monotone(beta_hat, scale, -1.0, upper_tail)?;
        outcome.ci = Some((lo.min(hi), hi.max(lo)));
    }
    Ok(outcome)
}

/// Expanding bracket plus bisection on a monotone boolean indicator along
/// the `b` axis.
fn bisect_monotone<F>(
    start: f64,
    scale: f64,
    direction: f64,
    mut hit: F,
) -> Result<f64, RegressionError>
where
    F: FnMut(f64) -> Result<bool, RegressionError>,
{
    let mut inside = start;
    let mut step = scale.max(1e-8);
    for _ in 0..60 {
        if !hit(inside)? {
            break;
        }
        inside -= direction * step;
        step *= 2.0;
    }
    let mut outside = inside;
    step = scale.max(1e-8);
    let mut found = false;
    for _ in 0..60 {
        outside += direction * step;
        if hit(outside)? {
            found = true;
            break;
        }
        step *= 2.0;
    }
    if !found {
        return Ok(direction * f64::INFINITY);
    }
    for _ in 0..50 {
        let mid = 0.5 * (inside + outside);
        if hit(mid)? {
            outside = mid;
        } else {
            inside = mid;
        }
        if (outside - inside).abs() <= 1e-4 * scale {
            break;
        }
    }
    Ok(0.5 * (inside + outside))
}
