//! Gaussians truncated to a union of intervals: tail-stable CDF and
//! quantiles, exact draws, the quadrature route to UMPU cutoffs, and the
//! closed-form leftover Fisher information of one-sided selection.

use crate::interval::IntervalUnion;
use crate::normal;
use crate::umpu::RandomizedCutoff;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TruncGaussError {
    #[error("truncation support is empty")]
    EmptySupport,
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("support mass vanished numerically (all intervals carry zero relative mass)")]
    VanishingMass,
}

/// `N(mu, sigma^2)` restricted to `support`. Interval masses are held in log
/// space, so supports arbitrarily far in the tails keep exact relative
/// structure.
#[derive(Clone, Debug)]
pub struct TruncatedGaussian {
    mu: f64,
    sigma: f64,
    support: IntervalUnion,
    /// standardized endpoints per interval
    std_ivs: Vec<(f64, f64)>,
    ln_masses: Vec<f64>,
    ln_total: f64,
}

impl TruncatedGaussian {
    pub fn new(mu: f64, sigma: f64, support: &IntervalUnion) -> Result<Self, TruncGaussError> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(TruncGaussError::BadSigma(sigma));
        }
        if support.is_empty() {
            return Err(TruncGaussError::EmptySupport);
        }
        let std_ivs: Vec<(f64, f64)> = support
            .intervals()
            .iter()
            .map(|&(lo, hi)| ((lo - mu) / sigma, (hi - mu) / sigma))
            .collect();
        let ln_masses: Vec<f64> = std_ivs
            .iter()
            .map(|&(a, b)| normal::ln_interval_mass(a, b))
            .collect();
        let ln_total = crate::expfam::log_sum_exp(&ln_masses);
        if !ln_total.is_finite() {
            return Err(TruncGaussError::VanishingMass);
        }
        Ok(TruncatedGaussian {
            mu,
            sigma,
            support: support.clone(),
            std_ivs,
            ln_masses,
            ln_total,
        })
    }

    pub fn support(&self) -> &IntervalUnion {
        &self.support
    }

    /// `ln P(Z <= z)` under the truncated law.
    pub fn ln_cdf(&self, z: f64) -> f64 {
        let zs = (z - self.mu) / self.sigma;
        let mut parts = Vec::with_capacity(self.std_ivs.len());
        for (&(a, b), &lm) in self.std_ivs.iter().zip(&self.ln_masses) {
            if zs >= b {
                parts.push(lm);
            } else if zs > a {
                parts.push(normal::ln_interval_mass(a, zs));
            }
        }
        crate::expfam::log_sum_exp(&parts) - self.ln_total
    }

    pub fn ln_sf(&self, z: f64) -> f64 {
        let zs = (z - self.mu) / self.sigma;
        let mut parts = Vec::with_capacity(self.std_ivs.len());
        for (&(a, b), &lm) in self.std_ivs.iter().zip(&self.ln_masses) {
            if zs <= a {
                parts.push(lm);
            } else if zs < b {
                parts.push(normal::ln_interval_mass(zs, b));
            }
        }
        crate::expfam::log_sum_exp(&parts) - self.ln_total
    }

    /// `P(Z <= z | Z in support)`.
    pub fn cdf(&self, z: f64) -> f64 {
        let lc = self.ln_cdf(z);
        let ls = self.ln_sf(z);
        // report the side computed with better relative accuracy
        if lc <= ls {
            lc.exp()
        } else {
            1.0 - ls.exp()
        }
    }

    pub fn sf(&self, z: f64) -> f64 {
        let lc = self.ln_cdf(z);
        let ls = self.ln_sf(z);
        if ls <= lc {
            ls.exp()
        } else {
            1.0 - lc.exp()
        }
    }

    /// Mean of the truncated law.
    pub fn mean(&self) -> f64 {
        let mut acc = 0.0;
        for (&(a, b), &lm) in self.std_ivs.iter().zip(&self.ln_masses) {
            let w = (lm - self.ln_total).exp();
            if w > 0.0 {
                acc += w * cond_std_mean(a, b, lm);
            }
        }
        self.mu + self.sigma * acc
    }

    /// Mean restricted to the part of the support inside `(lo, hi)`, times
    /// the probability of that part (an unnormalized partial moment in the
    /// truncated law).
    pub fn partial_moment(&self, lo: f64, hi: f64) -> (f64, f64) {
        let window = IntervalUnion::single(lo, hi);
        let cut = self.support.intersect(&window);
        let mut mass = 0.0;
        let mut mean_acc = 0.0;
        for &(l, h) in cut.intervals() {
            let a = (l - self.mu) / self.sigma;
            let b = (h - self.mu) / self.sigma;
            let lm = normal::ln_interval_mass(a, b);
            let w = (lm - self.ln_total).exp();
            if w > 0.0 {
                mass += w;
                mean_acc += w * (self.mu + self.sigma * cond_std_mean(a, b, lm));
            }
        }
        (mass, mean_acc)
    }

    /// Quantile. Exact to normal-quantile precision; works arbitrarily far
    /// out in the tails through the log survival parameterization.
    pub fn quantile(&self, p: f64) -> f64 {
        assert!((0.0..=1.0).contains(&p));
        if p <= 0.0 {
            return self.support.lower_bound().unwrap();
        }
        if p >= 1.0 {
            return self.support.upper_bound().unwrap();
        }
        let ln_p = p.ln();
        let target = ln_p + self.ln_total;
        // locate the interval holding the target cumulative mass
        let mut ln_before = f64::NEG_INFINITY;
        for (k, &lm) in self.ln_masses.iter().enumerate() {
            let ln_upto = crate::expfam::log_sum_exp(&[ln_before, lm]);
            if ln_upto >= target || k == self.ln_masses.len() - 1 {
                // fraction of this interval's mass that is needed
                let f = ((target_sub(target, ln_before)) - lm).exp().clamp(0.0, 1.0);
                let (a, b) = self.std_ivs[k];
                return self.mu + self.sigma * std_interval_quantile(a, b, f);
            }
            ln_before = ln_upto;
        }
        unreachable!()
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        // avoid the exact endpoints
        self.quantile(u.clamp(1e-16, 1.0 - 1e-16))
    }
}

/// `ln(e^x - e^y)` for `x > y`.
fn target_sub(x: f64, y: f64) -> f64 {
    if y == f64::NEG_INFINITY {
        return x;
    }
    x + (-f64::exp_m1(y - x)).ln()
}

/// Conditional mean of a standard normal on `(a, b)` given its log mass.
fn cond_std_mean(a: f64, b: f64, ln_mass: f64) -> f64 {
    let la = if a.is_finite() {
        normal::ln_pdf(a)
    } else {
        f64::NEG_INFINITY
    };
    let lb = if b.is_finite() {
        normal::ln_pdf(b)
    } else {
        f64::NEG_INFINITY
    };
    if la == f64::NEG_INFINITY && lb == f64::NEG_INFINITY {
        return 0.0;
    }
    // (phi(a) - phi(b)) / mass, computed from the dominant side
    if la >= lb {
        (la - ln_mass).exp() * (1.0 - (lb - la).exp())
    } else {
        -(lb - ln_mass).exp() * (1.0 - (la - lb).exp())
    }
}

/// Quantile within a standardized interval `(a, b)` at mass fraction `f`,
/// interpolating in log-survival space so far-tail intervals stay exact.
fn std_interval_quantile(a: f64, b: f64, f: f64) -> f64 {
    if f <= 0.0 {
        return a;
    }
    if f >= 1.0 {
        return b;
    }
    let lsa = normal::ln_sf(a);
    let lsb = normal::ln_sf(b);
    // sf(x) = sf(a) * [(1-f) + f e^{lsb - lsa}]
    let ln_sx = lsa + ((1.0 - f) + f * (lsb - lsa).exp()).ln();
    inverse_ln_sf(ln_sx)
}

/// Inverse of `ln_sf`: the `x` with `ln P(Z > x) = l`.
pub fn inverse_ln_sf(l: f64) -> f64 {
    if l > -690.0 {
        return normal::inverse_sf(l.exp().clamp(f64::MIN_POSITIVE, 1.0 - 1e-16));
    }
    // Newton on ln_sf(x) - l; derivative -hazard(x)
    let mut x = (-2.0 * l - (2.0 * std::f64::consts::PI * -2.0 * l).ln()).max(1.0).sqrt();
    for _ in 0..40 {
        let g = normal::ln_sf(x) - l;
        let hazard = (normal::ln_pdf(x) - normal::ln_sf(x)).exp();
        let step = g / hazard;
        x += step;
        if step.abs() < 1e-12 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// `P(Z <= z | Z in support)` for `Z ~ N(mu, sigma^2)`.
pub fn trunc_gauss_cdf(
    z: f64,
    mu: f64,
    sigma: f64,
    support: &IntervalUnion,
) -> Result<f64, TruncGaussError> {
    Ok(TruncatedGaussian::new(mu, sigma, support)?.cdf(z))
}

/// UMPU cutoffs for `H0: mean = mu` on a truncated Gaussian, solved by
/// quadrature on the exact law rather than through a sample set. The law is
/// continuous, so the boundary randomization probabilities are irrelevant
/// and reported as zero.
pub fn umpu_cutoffs_quadrature(
    law: &TruncatedGaussian,
    alpha: f64,
) -> (RandomizedCutoff, RandomizedCutoff, bool) {
    assert!(alpha > 0.0 && alpha < 1.0);
    let mean = law.mean();
    let keep = 1.0 - alpha;
    // c1 = Q(q), c2 = Q(q + 1 - alpha); unbiasedness residual in q
    let resid = |q: f64| {
        let c1 = law.quantile(q);
        let c2 = law.quantile(q + keep);
        let (_, pm) = law.partial_moment(c1, c2);
        pm - keep * mean
    };
    let (q, boundary) = if resid(0.0) >= 0.0 {
        (0.0, true)
    } else if resid(alpha) <= 0.0 {
        (alpha, true)
    } else {
        let mut lo = 0.0;
        let mut hi = alpha;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if resid(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi), false)
    };
    (
        RandomizedCutoff {
            c: law.quantile(q),
            gamma: 0.0,
        },
        RandomizedCutoff {
            c: law.quantile(q + keep),
            gamma: 0.0,
        },
        boundary,
    )
}

/// Leftover Fisher information for a univariate `N(mu, 1)` observation after
/// conditioning on `{Y > threshold}`. In closed form through the normal
/// hazard `h(z) = phi(z)/(1 - Phi(z))`: the information equals
/// `1 - h'(threshold - mu)` with `h'(z) = h(z)(h(z) - z)`.
pub fn leftover_information(mu: f64, threshold: f64) -> f64 {
    let z = threshold - mu;
    let hazard = (normal::ln_pdf(z) - normal::ln_sf(z)).exp();
    1.0 - hazard * (hazard - z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_untruncated_midpoint() {
        let full = IntervalUnion::full();
        assert!((trunc_gauss_cdf(0.0, 0.0, 1.0, &full).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cdf_at_lower_endpoint_is_zero() {
        let s = IntervalUnion::single(1.0, f64::INFINITY);
        assert_eq!(trunc_gauss_cdf(1.0, 0.0, 1.0, &s).unwrap(), 0.0);
    }

    #[test]
    fn cdf_example_right_truncation() {
        // support [1, inf): (Phi(2.41) - Phi(1)) / (1 - Phi(1))
        let s = IntervalUnion::single(1.0, f64::INFINITY);
        let got = trunc_gauss_cdf(2.41, 0.0, 1.0, &s).unwrap();
        let expect = (normal::cdf(2.41) - normal::cdf(1.0)) / (1.0 - normal::cdf(1.0));
        assert!((got - expect).abs() < 1e-13);
        assert!((got - 0.9499).abs() < 5e-4);
    }

    #[test]
    fn far_tail_support_keeps_relative_structure() {
        let s = IntervalUnion::single(40.0, f64::INFINITY);
        let law = TruncatedGaussian::new(0.0, 1.0, &s).unwrap();
        // median sits a hair above 40
        let med = law.quantile(0.5);
        assert!(med > 40.0 && med < 40.1, "median {med}");
        assert!((law.cdf(med) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn quantile_round_trip_union() {
        let s = IntervalUnion::new(vec![(f64::NEG_INFINITY, -2.5), (2.5, f64::INFINITY)]);
        let law = TruncatedGaussian::new(0.5, 1.3, &s).unwrap();
        for &p in &[0.01, 0.2, 0.5, 0.8, 0.99] {
            let x = law.quantile(p);
            assert!((law.cdf(x) - p).abs() < 1e-10, "p={p}");
        }
    }

    #[test]
    fn sampling_matches_closed_form_mean() {
        // N(0,1) | Y > 3: mean = phi(3)/(1-Phi(3))
        let s = IntervalUnion::single(3.0, f64::INFINITY);
        let law = TruncatedGaussian::new(0.0, 1.0, &s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| law.sample(&mut rng)).sum::<f64>() / n as f64;
        let expect = normal::pdf(3.0) / normal::sf(3.0);
        assert!((mean - expect).abs() < 0.005, "mean {mean} expect {expect}");
    }

    #[test]
    fn leftover_information_limits() {
        let hi = leftover_information(13.0, 3.0);
        assert!((0.999..=1.0 + 1e-12).contains(&hi), "hi={hi}");
        let lo = leftover_information(-7.0, 3.0);
        assert!(lo > 0.0 && lo < 0.01, "lo={lo}");
    }

    #[test]
    fn quadrature_umpu_is_symmetric_without_truncation() {
        let law = TruncatedGaussian::new(0.0, 1.0, &IntervalUnion::full()).unwrap();
        let (c1, c2, boundary) = umpu_cutoffs_quadrature(&law, 0.05);
        assert!(!boundary);
        assert!((c1.c + 1.96).abs() < 1e-3);
        assert!((c2.c - 1.96).abs() < 1e-3);
    }

    #[test]
    fn empty_support_is_an_error() {
        assert!(matches!(
            TruncatedGaussian::new(0.0, 1.0, &IntervalUnion::empty()),
            Err(TruncGaussError::EmptySupport)
        ));
    }
}
