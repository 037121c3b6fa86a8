//! Exact, sampling-free saturated-model selective z-inference.
//!
//! The saturated model conditions on the component of `Y` orthogonal to the
//! test direction, so the conditional law of `eta' Y` is a univariate
//! Gaussian truncated to the section of the selection region along `eta`:
//! everything reduces to truncated-normal CDF evaluations, with no Monte
//! Carlo anywhere.

use crate::geometry::{truncation_set, SelectionRegion};
use crate::interval::IntervalUnion;
use crate::linalg::dot;
use crate::regression::{eta_vector, RegressionError, RegressionProblem, SigmaSpec};
use crate::truncgauss::{umpu_cutoffs_quadrature, TruncatedGaussian};
use crate::umpu::{Diagnostics, TestOutcome};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SaturatedError {
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    TruncGauss(#[from] crate::truncgauss::TruncGaussError),
    #[error("no root bracket for the interval endpoint within +/-{half_width} of the observed statistic")]
    BracketNotFound { half_width: f64 },
    #[error(
        "the saturated-model t-test is vacuous: conditioning on ||Y|| leaves a two-point \
         support with no information about eta'mu; use the selected-model t-test instead"
    )]
    TTestVacuous,
}

/// Options for the saturated z-test.
#[derive(Clone, Copy, Debug)]
pub struct SaturatedConfig {
    /// Hypothesized value of `eta' mu`.
    pub null_value: f64,
    pub compute_ci: bool,
    /// Invert the quadrature-UMPU test (UMAU interval) instead of the
    /// equal-tailed pivot.
    pub umau: bool,
    pub seed: u64,
}

impl Default for SaturatedConfig {
    fn default() -> Self {
        SaturatedConfig {
            null_value: 0.0,
            compute_ci: true,
            umau: false,
            seed: 0,
        }
    }
}

pub struct SaturatedMachinery {
    pub eta: Vec<f64>,
    pub z_obs: f64,
    pub sigma_z: f64,
    pub support: IntervalUnion,
}

impl SaturatedMachinery {
    pub fn build(
        problem: &RegressionProblem,
        region: &SelectionRegion,
    ) -> Result<Self, SaturatedError> {
        problem.validate()?;
        let sigma = match problem.sigma {
            SigmaSpec::Known(s) => s,
            SigmaSpec::Unknown => return Err(SaturatedError::TTestVacuous),
        };
        let eta = eta_vector(&problem.x, &problem.model, problem.target)?;
        let support = truncation_set(&problem.y, &eta, region)?;
        let z_obs = dot(&eta, &problem.y);
        let sigma_z = sigma * dot(&eta, &eta).sqrt();
        Ok(SaturatedMachinery {
            eta,
            z_obs,
            sigma_z,
            support,
        })
    }

    /// The truncated-Gaussian pivot `W` at hypothesized mean `m`:
    /// `P_m(Z <= z_obs | Z in support)`. Uniform on [0,1] under the null,
    /// monotone decreasing in `m`.
    pub fn pivot(&self, m: f64) -> Result<f64, SaturatedError> {
        let law = TruncatedGaussian::new(m, self.sigma_z, &self.support)?;
        Ok(law.cdf(self.z_obs))
    }

    pub fn two_sided_p(&self, m: f64) -> Result<f64, SaturatedError> {
        let w = self.pivot(m)?;
        Ok((2.0 * w.min(1.0 - w)).min(1.0))
    }

    /// Equal-tailed interval for `eta' mu` by monotone root-finding of the
    /// pivot in the mean.
    pub fn equal_tailed_interval(&self, alpha: f64) -> Result<(f64, f64), SaturatedError> {
        let half = alpha / 2.0;
        let center = self.median_center()?;
        // upper endpoint: pivot(m) = alpha/2 (pivot decreasing in m)
        let hi = self.solve_pivot(center, half)?;
        let lo = self.solve_pivot(center, 1.0 - half)?;
        Ok((lo.min(hi), hi.max(lo)))
    }

    /// UMAU interval: means whose quadrature-UMPU test accepts the observed
    /// statistic.
    pub fn umau_interval(&self, alpha: f64) -> Result<(f64, f64), SaturatedError> {
        let rejects = |m: f64| -> Result<bool, SaturatedError> {
            let law = TruncatedGaussian::new(m, self.sigma_z, &self.support)?;
            let (c1, c2, _) = umpu_cutoffs_quadrature(&law, alpha);
            Ok(self.z_obs < c1.c || self.z_obs > c2.c)
        };
        // the mean matching the observed value to the law's median accepts
        // under any two-sided rule; both searches start there
        let center = self.median_center()?;
        let hi = self.bisect_mean(center, 1.0, &rejects)?;
        let lo = self.bisect_mean(center, -1.0, &rejects)?;
        Ok((lo.min(hi), hi.max(lo)))
    }

    /// The mean whose truncated law has the observed statistic as median.
    /// Near the support's edge this sits far from `z_obs`; it is the right
    /// anchor for endpoint searches.
    fn median_center(&self) -> Result<f64, SaturatedError> {
        let scale = self.sigma_z;
        let mut lo = self.z_obs;
        let mut step = scale;
        for _ in 0..200 {
            if self.pivot(lo)? >= 0.5 {
                break;
            }
            lo -= step;
            step *= 2.0;
        }
        let mut hi = self.z_obs;
        step = scale;
        for _ in 0..200 {
            if self.pivot(hi)? <= 0.5 {
                break;
            }
            hi += step;
            step *= 2.0;
        }
        for _ in 0..200 {
            if (hi - lo).abs() <= 1e-9 * scale.max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.pivot(mid)? > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn solve_pivot(&self, center: f64, target: f64) -> Result<f64, SaturatedError> {
        if target < 0.5 {
            // upper endpoint: the pivot falls to the target as the mean rises
            self.bisect_mean(center, 1.0, &|m: f64| Ok(self.pivot(m)? <= target))
        } else {
            // lower endpoint: the pivot climbs to the target as the mean falls
            self.bisect_mean(center, -1.0, &|m: f64| Ok(self.pivot(m)? >= target))
        }
    }

    /// Expanding bracket (with widened retries) plus bisection on a
    /// monotone indicator of the hypothesized mean. The first bracket spans
    /// 20 sigma around the anchor; near-threshold truncations push
    /// endpoints hundreds of sigma out, so retries grow geometrically.
    fn bisect_mean<F>(&self, anchor: f64, direction: f64, hit: &F) -> Result<f64, SaturatedError>
    where
        F: Fn(f64) -> Result<bool, SaturatedError>,
    {
        let scale = self.sigma_z;
        for attempt in 0..6 {
            let half_width = 20.0 * scale * 8.0f64.powi(attempt);
            let mut inside = anchor;
            // walk back until on the accepted side
            let mut back = scale;
            let mut ok = !hit(inside)?;
            for _ in 0..60 {
                if ok {
                    break;
                }
                inside -= direction * back;
                back *= 2.0;
                if (inside - anchor).abs() > half_width {
                    break;
                }
                ok = !hit(inside)?;
            }
            if !ok {
                continue;
            }
            let mut outside = inside;
            let mut step = scale;
            let mut found = false;
            for _ in 0..200 {
                outside += direction * step;
                if (outside - anchor).abs() > half_width {
                    break;
                }
                if hit(outside)? {
                    found = true;
                    break;
                }
                step *= 2.0;
            }
            if !found {
                continue;
            }
            for _ in 0..200 {
                if (outside - inside).abs() <= 1e-10 * scale.max(1.0) {
                    break;
                }
                let mid = 0.5 * (inside + outside);
                if hit(mid)? {
                    outside = mid;
                } else {
                    inside = mid;
                }
            }
            return Ok(0.5 * (inside + outside));
        }
        Err(SaturatedError::BracketNotFound {
            half_width: 20.0 * scale * 8.0f64.powi(5),
        })
    }
}

/// Saturated-model selective z-test for `H0: eta' mu = null_value` with
/// known sigma: two-sided p-value `2 min(W, 1 - W)` from the truncated
/// Gaussian pivot, with the quadrature-UMPU decision and (optionally) the
/// equal-tailed or UMAU interval for `eta' mu`.
pub fn saturated_z_test(
    problem: &RegressionProblem,
    region: &SelectionRegion,
    alpha: f64,
    config: &SaturatedConfig,
) -> Result<TestOutcome, SaturatedError> {
    let mach = SaturatedMachinery::build(problem, region)?;
    let p = mach.two_sided_p(config.null_value)?;
    let law = TruncatedGaussian::new(config.null_value, mach.sigma_z, &mach.support)?;
    let (c1, c2, boundary) = umpu_cutoffs_quadrature(&law, alpha);
    let reject = mach.z_obs < c1.c || mach.z_obs > c2.c;

    let mut diagnostics = Diagnostics::new(config.seed);
    diagnostics.ess = f64::INFINITY; // exact computation, no Monte Carlo
    diagnostics.k1_residual = 0.0;
    diagnostics.k2_residual = 0.0;
    if boundary {
        diagnostics.flags.push(crate::umpu::Flag::OneSidedBoundary);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let aux_uniform: f64 = rng.random();

    let ci = if config.compute_ci {
        Some(if config.umau {
            mach.umau_interval(alpha)?
        } else {
            mach.equal_tailed_interval(alpha)?
        })
    } else {
        None
    };

    Ok(TestOutcome {
        p_equal_tailed: p,
        reject,
        aux_uniform,
        ci,
        diagnostics,
    })
}

/// Equal-tailed (or UMAU) saturated-model interval for `eta' mu`.
pub fn saturated_z_interval(
    problem: &RegressionProblem,
    region: &SelectionRegion,
    alpha: f64,
    umau: bool,
) -> Result<(f64, f64), SaturatedError> {
    let mach = SaturatedMachinery::build(problem, region)?;
    if umau {
        mach.umau_interval(alpha)
    } else {
        mach.equal_tailed_interval(alpha)
    }
}

/// The saturated-model t-test does not exist: after conditioning on the
/// orthogonal complement and on `||Y||`, the support is a two-point set
/// carrying no usable information. This stub documents the fact as an error.
pub fn saturated_t_test(
    _problem: &RegressionProblem,
    _region: &SelectionRegion,
) -> Result<TestOutcome, SaturatedError> {
    Err(SaturatedError::TTestVacuous)
}
