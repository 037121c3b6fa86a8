//! One-parameter exponential families carried by weighted sample sets.
//!
//! A `TiltedSampleSet` holds draws `Z_i` with weights `W_i` generated at a
//! reference natural parameter. Re-weighting by `exp{(theta - ref) Z_i}`
//! turns expectations under the reference into expectations under any other
//! parameter of the family running through the same carrier: the empirical
//! family every Monte Carlo test in this crate is built on. Weights live in
//! log space; all ratios go through log-sum-exp so that tilting far from the
//! reference degrades the effective sample size instead of overflowing.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpFamError {
    #[error("sample set must contain at least one point")]
    Empty,
    #[error("points ({points}) and weights ({weights}) differ in length")]
    MismatchedLengths { points: usize, weights: usize },
    #[error("weights must be nonnegative with at least one positive entry")]
    InvalidWeights,
    #[error("points and parameters must be finite")]
    NotFinite,
    #[error("all effective weights vanished after tilting to theta={theta}")]
    DegenerateTilt { theta: f64 },
    #[error("cannot pool an empty list of sample sets")]
    EmptyPool,
    #[error("carrier sampler failed: {0}")]
    Sampler(String),
}

/// Weighted sample set representing one member of an empirical exponential
/// family. Points are kept sorted ascending; the set is immutable after
/// construction.
#[derive(Clone, Debug)]
pub struct TiltedSampleSet {
    points: Vec<f64>,
    log_weights: Vec<f64>,
    reference_theta: f64,
}

impl TiltedSampleSet {
    pub fn new(
        points: Vec<f64>,
        weights: Vec<f64>,
        reference_theta: f64,
    ) -> Result<Self, ExpFamError> {
        if weights.iter().any(|&w| w < 0.0 || w.is_nan()) {
            return Err(ExpFamError::InvalidWeights);
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(ExpFamError::InvalidWeights);
        }
        let log_weights = weights
            .into_iter()
            .map(|w| if w == 0.0 { f64::NEG_INFINITY } else { w.ln() })
            .collect();
        Self::from_log_weights(points, log_weights, reference_theta)
    }

    /// Construction directly from log weights (`-inf` allowed for zero).
    pub fn from_log_weights(
        points: Vec<f64>,
        log_weights: Vec<f64>,
        reference_theta: f64,
    ) -> Result<Self, ExpFamError> {
        if points.is_empty() {
            return Err(ExpFamError::Empty);
        }
        if points.len() != log_weights.len() {
            return Err(ExpFamError::MismatchedLengths {
                points: points.len(),
                weights: log_weights.len(),
            });
        }
        if points.iter().any(|z| !z.is_finite()) || !reference_theta.is_finite() {
            return Err(ExpFamError::NotFinite);
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(ExpFamError::InvalidWeights);
        }
        if !log_weights.iter().any(|w| w.is_finite()) {
            return Err(ExpFamError::InvalidWeights);
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&i, &j| points[i].partial_cmp(&points[j]).unwrap());
        let points_sorted = order.iter().map(|&i| points[i]).collect();
        let lw_sorted = order.iter().map(|&i| log_weights[i]).collect();
        Ok(TiltedSampleSet {
            points: points_sorted,
            log_weights: lw_sorted,
            reference_theta,
        })
    }

    pub fn unit_weights(points: Vec<f64>, reference_theta: f64) -> Result<Self, ExpFamError> {
        let n = points.len();
        Self::from_log_weights(points, vec![0.0; n], reference_theta)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points in ascending order.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn reference_theta(&self) -> f64 {
        self.reference_theta
    }

    /// Log weights after tilting to `theta` (unnormalized).
    pub(crate) fn tilted_log_weights(&self, theta: f64) -> Result<Vec<f64>, ExpFamError> {
        if !theta.is_finite() {
            return Err(ExpFamError::DegenerateTilt { theta });
        }
        let shift = theta - self.reference_theta;
        Ok(self
            .points
            .iter()
            .zip(&self.log_weights)
            .map(|(&z, &lw)| lw + shift * z)
            .collect())
    }

    /// Importance-weighted empirical expectation of `h` under the family
    /// member with natural parameter `theta`:
    /// `sum W_i h(Z_i) e^{theta Z_i} / sum W_i e^{theta Z_i}`, stabilized by
    /// shifting out the maximum exponent.
    pub fn tilted_expectation<F: Fn(f64) -> f64>(
        &self,
        h: F,
        theta: f64,
    ) -> Result<f64, ExpFamError> {
        let lw = self.tilted_log_weights(theta)?;
        let max = max_finite(&lw).ok_or(ExpFamError::DegenerateTilt { theta })?;
        let mut num = 0.0;
        let mut den = 0.0;
        for (&z, &l) in self.points.iter().zip(&lw) {
            let w = (l - max).exp();
            den += w;
            num += w * h(z);
        }
        if den <= 0.0 || !den.is_finite() {
            return Err(ExpFamError::DegenerateTilt { theta });
        }
        Ok(num / den)
    }

    /// Tilted mean of the sufficient statistic.
    pub fn tilted_mean(&self, theta: f64) -> Result<f64, ExpFamError> {
        self.tilted_expectation(|z| z, theta)
    }

    /// Tilted variance of the sufficient statistic.
    pub fn tilted_variance(&self, theta: f64) -> Result<f64, ExpFamError> {
        let m = self.tilted_mean(theta)?;
        let v = self.tilted_expectation(|z| (z - m) * (z - m), theta)?;
        Ok(v.max(0.0))
    }

    /// Effective sample size `(sum w)^2 / sum w^2` of the tilted weights.
    pub fn effective_sample_size(&self, theta: f64) -> Result<f64, ExpFamError> {
        let lw = self.tilted_log_weights(theta)?;
        let max = max_finite(&lw).ok_or(ExpFamError::DegenerateTilt { theta })?;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for &l in &lw {
            let w = (l - max).exp();
            s1 += w;
            s2 += w * w;
        }
        if s2 <= 0.0 || !s1.is_finite() {
            return Err(ExpFamError::DegenerateTilt { theta });
        }
        Ok(s1 * s1 / s2)
    }
}

/// ESS below which downstream cutoff solving becomes unreliable; operations
/// proceed but flag their diagnostics.
pub const ESS_WARN_THRESHOLD: f64 = 50.0;

/// Pools sample sets drawn at several reference parameters into one set
/// whose tilted expectations stay consistent for the shared family.
///
/// Weights follow the multiple-importance-sampling balance heuristic
/// `W_i / sum_k n_k g_k(Z_i)` with `g_k` the tilted reference densities up to
/// the common carrier. The per-reference log normalizers entering `g_k` are
/// estimated by bridging between adjacent references (average of forward and
/// backward log-mean-exp estimates), which is exact in the single-set case.
pub fn pool_tilted(sets: &[TiltedSampleSet]) -> Result<TiltedSampleSet, ExpFamError> {
    if sets.is_empty() {
        return Err(ExpFamError::EmptyPool);
    }
    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.sort_by(|&i, &j| {
        sets[i]
            .reference_theta
            .partial_cmp(&sets[j].reference_theta)
            .unwrap()
    });

    // Per-set normalized log probabilities.
    let log_probs: Vec<Vec<f64>> = sets
        .iter()
        .map(|s| {
            let lse = log_sum_exp(&s.log_weights);
            s.log_weights.iter().map(|&l| l - lse).collect()
        })
        .collect();

    // Cumulative log-normalizer estimates psi_hat(theta_k) - psi_hat(theta_first),
    // bridged between adjacent references in theta order.
    let mut psi = vec![0.0; sets.len()];
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ta, tb) = (sets[a].reference_theta, sets[b].reference_theta);
        let fwd = log_sum_exp_iter(
            sets[a]
                .points
                .iter()
                .zip(&log_probs[a])
                .map(|(&z, &lp)| lp + (tb - ta) * z),
        );
        let bwd = -log_sum_exp_iter(
            sets[b]
                .points
                .iter()
                .zip(&log_probs[b])
                .map(|(&z, &lp)| lp + (ta - tb) * z),
        );
        let delta = match (fwd.is_finite(), bwd.is_finite()) {
            (true, true) => 0.5 * (fwd + bwd),
            (true, false) => fwd,
            (false, true) => bwd,
            (false, false) => 0.0,
        };
        psi[b] = psi[a] + delta;
    }

    let ln_counts: Vec<f64> = sets.iter().map(|s| (s.len() as f64).ln()).collect();
    let thetas: Vec<f64> = sets.iter().map(|s| s.reference_theta).collect();

    let total: usize = sets.iter().map(TiltedSampleSet::len).sum();
    let mut points = Vec::with_capacity(total);
    let mut log_weights = Vec::with_capacity(total);
    for (k, set) in sets.iter().enumerate() {
        let ln_nk = ln_counts[k];
        for (&z, &lp) in set.points.iter().zip(&log_probs[k]) {
            // mixture density at z, up to the common carrier
            let ln_mix = log_sum_exp_iter(
                thetas
                    .iter()
                    .zip(&ln_counts)
                    .zip(&psi)
                    .map(|((&t, &ln_n), &ps)| ln_n + t * z - ps),
            );
            points.push(z);
            log_weights.push(ln_nk + lp - ln_mix);
        }
    }
    // Pooled weights are expressed relative to the carrier, i.e. theta = 0.
    TiltedSampleSet::from_log_weights(points, log_weights, 0.0)
}

/// A one-parameter natural exponential family accessed through a sampler
/// that can produce weighted carrier draws at any reference parameter.
pub trait CarrierSampler: Sync {
    fn sample_at(&self, theta: f64, seed: u64) -> Result<TiltedSampleSet, ExpFamError>;
}

impl<F> CarrierSampler for F
where
    F: Fn(f64, u64) -> Result<TiltedSampleSet, ExpFamError> + Sync,
{
    fn sample_at(&self, theta: f64, seed: u64) -> Result<TiltedSampleSet, ExpFamError> {
        self(theta, seed)
    }
}

/// Density kernel `exp{theta z - psi(theta)}` against the carrier produced by
/// `sampler`; `parameter_range` is the open interval of valid `theta`.
pub struct NaturalFamily1D<S: CarrierSampler> {
    pub sampler: S,
    pub parameter_range: (f64, f64),
}

impl<S: CarrierSampler> NaturalFamily1D<S> {
    pub fn new(sampler: S, parameter_range: (f64, f64)) -> Self {
        assert!(parameter_range.0 < parameter_range.1);
        NaturalFamily1D {
            sampler,
            parameter_range,
        }
    }
}

/// Deterministic quadrature carrier: a fine grid with log-density weights.
/// Useful wherever the carrier density is known in closed form; the empirical
/// machinery then becomes a quadrature rule with no Monte Carlo error.
pub struct GridCarrier<F: Fn(f64) -> f64 + Sync> {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// Log carrier density, up to an additive constant.
    pub ln_carrier: F,
}

impl<F: Fn(f64) -> f64 + Sync> GridCarrier<F> {
    pub fn sample_set(&self, theta: f64) -> Result<TiltedSampleSet, ExpFamError> {
        assert!(self.n >= 2 && self.lo < self.hi);
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        let mut points = Vec::with_capacity(self.n);
        let mut lw = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let z = self.lo + step * i as f64;
            let trapezoid = if i == 0 || i == self.n - 1 { 0.5f64 } else { 1.0 };
            points.push(z);
            lw.push((self.ln_carrier)(z) + theta * z + trapezoid.ln());
        }
        TiltedSampleSet::from_log_weights(points, lw, theta)
    }
}

impl<F: Fn(f64) -> f64 + Sync> CarrierSampler for GridCarrier<F> {
    fn sample_at(&self, theta: f64, _seed: u64) -> Result<TiltedSampleSet, ExpFamError> {
        self.sample_set(theta)
    }
}

pub(crate) fn log_sum_exp(vals: &[f64]) -> f64 {
    log_sum_exp_iter(vals.iter().copied())
}

pub(crate) fn log_sum_exp_iter<I: IntoIterator<Item = f64> + Clone>(vals: I) -> f64 {
    let max = vals
        .clone()
        .into_iter()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = vals.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

fn max_finite(vals: &[f64]) -> Option<f64> {
    let m = vals
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        None
    } else {
        Some(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_normalization_is_exact() {
        let s = TiltedSampleSet::new(vec![-0.3, 1.2, 4.0], vec![0.5, 1.0, 0.25], 0.0).unwrap();
        for &theta in &[-2.0, 0.0, 0.7, 3.0] {
            let e = s.tilted_expectation(|_| 1.0, theta).unwrap();
            assert!((e - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn symmetric_points_have_zero_mean_at_reference() {
        let s = TiltedSampleSet::new(vec![-1.0, 1.0], vec![1.0, 1.0], 0.0).unwrap();
        assert_eq!(s.tilted_mean(0.0).unwrap(), 0.0);
    }

    #[test]
    fn ess_trivial_cases() {
        let s = TiltedSampleSet::new(vec![0.0; 7], vec![1.0; 7], 0.0).unwrap();
        assert!((s.effective_sample_size(0.0).unwrap() - 7.0).abs() < 1e-12);
        let one = TiltedSampleSet::new(vec![1.0, 2.0], vec![0.0, 3.0], 0.0).unwrap();
        assert!((one.effective_sample_size(0.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extreme_tilt_does_not_overflow() {
        let s = TiltedSampleSet::new(vec![-1.0, 0.0, 1.0], vec![1.0, 1.0, 1.0], 0.0).unwrap();
        let m = s.tilted_mean(700.0).unwrap();
        assert!((m - 1.0).abs() < 1e-9);
        let ess = s.effective_sample_size(700.0).unwrap();
        assert!(ess >= 1.0 && ess < 1.0 + 1e-9);
    }

    #[test]
    fn pool_of_one_reproduces_expectations() {
        let s = TiltedSampleSet::new(vec![0.1, -0.7, 2.0, 0.4], vec![1.0, 0.5, 2.0, 1.0], 1.3)
            .unwrap();
        let pooled = pool_tilted(std::slice::from_ref(&s)).unwrap();
        for &theta in &[-1.0, 0.0, 1.3, 2.5] {
            let a = s.tilted_mean(theta).unwrap();
            let b = pooled.tilted_mean(theta).unwrap();
            assert!((a - b).abs() < 1e-10, "theta={theta}: {a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(TiltedSampleSet::new(vec![], vec![], 0.0).is_err());
        assert!(TiltedSampleSet::new(vec![1.0], vec![-1.0], 0.0).is_err());
        assert!(TiltedSampleSet::new(vec![1.0, 2.0], vec![0.0, 0.0], 0.0).is_err());
        assert!(TiltedSampleSet::new(vec![f64::NAN], vec![1.0], 0.0).is_err());
    }
}
