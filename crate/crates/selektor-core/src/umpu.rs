//! Randomized UMPU and equal-tailed selective tests on empirical
//! exponential families, plus their confidence-interval inversions.
//!
//! The two-sided test has the classical two-cutoff form: reject outside
//! `(c_1, c_2)`, reject with probability `gamma_i` at the boundary. With an
//! auxiliary uniform `U`, the rejection region is a pair of dictionary-order
//! tails on `(z, u)` pairs. Cutoffs solve the level and unbiasedness moment
//! equations `K_1 = K_2 = 0`; on a weighted sample set both equations are
//! piecewise linear in the rejected left mass, so the solve is an inner
//! exact-quantile step plus an outer monotone bisection.

use crate::expfam::{
    pool_tilted, CarrierSampler, ExpFamError, NaturalFamily1D, TiltedSampleSet,
    ESS_WARN_THRESHOLD,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UmpuError {
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    BadAlpha(f64),
    #[error(transparent)]
    ExpFam(#[from] ExpFamError),
    #[error("tail indicator is not monotone across theta (effective sample size collapse); add reference samples or enlarge them")]
    NonMonotoneTail,
    #[error("auxiliary uniform must lie in [0,1], got {0}")]
    BadUniform(f64),
}

/// A statistic cutoff with boundary rejection probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RandomizedCutoff {
    pub c: f64,
    pub gamma: f64,
}

/// Dictionary order on `(z, u)`: `(z1,u1) < (z2,u2)` iff `z1 < z2`, or
/// `z1 == z2` and `u1 < u2`.
#[inline]
pub fn dict_lt(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Diagnostic flags carried out of a test run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Flag {
    /// Effective sample size at the solved parameter fell below the
    /// reliability threshold.
    LowEss { ess: f64, threshold: f64 },
    /// The unbiasedness equation had no interior root; a one-sided boundary
    /// solution was returned.
    OneSidedBoundary,
    /// `(n+1) alpha < 1`: the rank test can never reject at this level.
    CannotReject { min_p: f64 },
    /// Support collapsed to a single atom.
    DegenerateSupport,
    /// Replicate-level sampler failures were excluded.
    SamplerExclusions { count: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct Diagnostics {
    pub ess: f64,
    pub k1_residual: f64,
    pub k2_residual: f64,
    pub seed: u64,
    /// Lag-1 autocorrelation of the projected chain, when one was run.
    pub lag1_autocorr: Option<f64>,
    pub flags: Vec<Flag>,
}

impl Diagnostics {
    pub fn new(seed: u64) -> Self {
        Diagnostics {
            ess: f64::NAN,
            k1_residual: f64::NAN,
            k2_residual: f64::NAN,
            seed,
            lag1_autocorr: None,
            flags: Vec::new(),
        }
    }
}

/// Outcome of a selective test: equal-tailed p-value, randomized UMPU
/// decision, the realized randomization variable, and (when computed) a
/// confidence interval for the natural parameter or its caller-facing
/// reparameterization.
#[derive(Clone, Debug, Serialize)]
pub struct TestOutcome {
    pub p_equal_tailed: f64,
    pub reject: bool,
    pub aux_uniform: f64,
    pub ci: Option<(f64, f64)>,
    pub diagnostics: Diagnostics,
}

/// Solved cutoff pair with residuals of the defining moment equations.
#[derive(Clone, Debug, Serialize)]
pub struct UmpuSolution {
    pub lower: RandomizedCutoff,
    pub upper: RandomizedCutoff,
    pub k1_residual: f64,
    pub k2_residual: f64,
    pub boundary: bool,
    pub ess: f64,
}

impl UmpuSolution {
    pub fn cutoffs(&self) -> (RandomizedCutoff, RandomizedCutoff) {
        (self.lower, self.upper)
    }
}

/// The tilted empirical family at a fixed parameter, reduced to sorted atoms
/// with normalized probabilities and directional prefix moments. Masses
/// below a cut come from forward accumulation and masses above from backward
/// accumulation, so an extreme observation has a tail of exactly zero rather
/// than rounding noise.
pub struct TiltedAtoms {
    z: Vec<f64>,
    p: Vec<f64>,
    /// `below[i] = P(Z < z[i])`, forward accumulated.
    below: Vec<f64>,
    /// `below_pz[i] = E[Z 1{Z < z[i]}]`.
    below_pz: Vec<f64>,
    /// `above[i] = P(Z > z[i])`, backward accumulated.
    above: Vec<f64>,
    /// `above_pz[i] = E[Z 1{Z > z[i]}]`.
    above_pz: Vec<f64>,
    pub(crate) mean: f64,
    pub(crate) ess: f64,
    n_input: usize,
}

impl TiltedAtoms {
    pub fn build(set: &TiltedSampleSet, theta: f64) -> Result<Self, ExpFamError> {
        let lw = set.tilted_log_weights(theta)?;
        let max = lw
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(ExpFamError::DegenerateTilt { theta });
        }
        let pts = set.points();
        let mut z: Vec<f64> = Vec::with_capacity(pts.len());
        let mut w: Vec<f64> = Vec::with_capacity(pts.len());
        for (&zi, &li) in pts.iter().zip(&lw) {
            let wi = (li - max).exp();
            match z.last() {
                Some(&last) if last == zi => *w.last_mut().unwrap() += wi,
                _ => {
                    z.push(zi);
                    w.push(wi);
                }
            }
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(ExpFamError::DegenerateTilt { theta });
        }
        let sum_sq: f64 = w.iter().map(|x| x * x).sum();
        let ess = total * total / sum_sq;
        let m = z.len();
        let p: Vec<f64> = w.iter().map(|x| x / total).collect();
        let mut below = vec![0.0; m];
        let mut below_pz = vec![0.0; m];
        let mut acc = 0.0;
        let mut accz = 0.0;
        for i in 0..m {
            below[i] = acc;
            below_pz[i] = accz;
            acc += p[i];
            accz += p[i] * z[i];
        }
        let mean = accz;
        let mut above = vec![0.0; m];
        let mut above_pz = vec![0.0; m];
        let mut tacc = 0.0;
        let mut taccz = 0.0;
        for i in (0..m).rev() {
            above[i] = tacc;
            above_pz[i] = taccz;
            tacc += p[i];
            taccz += p[i] * z[i];
        }
        Ok(TiltedAtoms {
            z,
            p,
            below,
            below_pz,
            above,
            above_pz,
            mean,
            ess,
            n_input: set.len(),
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn ess(&self) -> f64 {
        self.ess
    }

    fn n_atoms(&self) -> usize {
        self.z.len()
    }

    /// Index of the first atom `>= x`.
    fn lower_idx(&self, x: f64) -> usize {
        self.z.partition_point(|&zi| zi < x)
    }


    fn left_mass_direct(&self, z: f64, u: f64) -> f64 {
        let i = self.lower_idx(z);
        if i == self.n_atoms() {
            return 1.0;
        }
        if self.z[i] == z {
            self.below[i] + u * self.p[i]
        } else {
            self.below[i]
        }
    }

    fn right_mass_direct(&self, z: f64, u: f64) -> f64 {
        let i = self.lower_idx(z);
        if i == self.n_atoms() {
            return 0.0;
        }
        if self.z[i] == z {
            self.above[i] + (1.0 - u) * self.p[i]
        } else {
            self.above[i] + self.p[i]
        }
    }

    /// `P{(Z,U) < (z,u)}` in dictionary order. The two dictionary tails are
    /// complementary; each is reported from whichever accumulation side is
    /// smaller, so extreme cuts give exact masses.
    pub fn left_mass(&self, z: f64, u: f64) -> f64 {
        let l = self.left_mass_direct(z, u);
        if l <= 0.5 {
            l
        } else {
            1.0 - self.right_mass_direct(z, u)
        }
    }

    /// `E[Z 1{(Z,U) < (z,u)}]`.
    fn left_pz(&self, z: f64, u: f64) -> f64 {
        let i = self.lower_idx(z);
        if i == self.n_atoms() {
            return self.mean;
        }
        if self.z[i] == z {
            self.below_pz[i] + u * z * self.p[i]
        } else {
            self.below_pz[i]
        }
    }

    /// `P{(Z,U) > (z,u)}`.
    pub fn right_mass(&self, z: f64, u: f64) -> f64 {
        let r = self.right_mass_direct(z, u);
        if r <= 0.5 {
            r
        } else {
            1.0 - self.left_mass_direct(z, u)
        }
    }

    fn right_pz(&self, z: f64, u: f64) -> f64 {
        let i = self.lower_idx(z);
        if i == self.n_atoms() {
            return 0.0;
        }
        if self.z[i] == z {
            self.above_pz[i] + (1.0 - u) * z * self.p[i]
        } else {
            self.above_pz[i] + self.p[i] * self.z[i]
        }
    }

    /// Dictionary point with left mass exactly `ell`.
    fn left_point(&self, ell: f64) -> (f64, f64) {
        debug_assert!((0.0..=1.0).contains(&ell));
        // first atom whose inclusive cumulative reaches ell
        let m = self.n_atoms();
        let mut lo = 0;
        let mut hi = m - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.below[mid] + self.p[mid] >= ell {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let gamma = if self.p[lo] > 0.0 {
            ((ell - self.below[lo]) / self.p[lo]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (self.z[lo], gamma)
    }

    /// Dictionary point with right mass exactly `r`.
    fn right_point(&self, r: f64) -> (f64, f64) {
        debug_assert!((0.0..=1.0).contains(&r));
        let m = self.n_atoms();
        // find first i with above[i] <= r
        let mut lo = 0;
        let mut hi = m - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.above[mid] <= r {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let gamma = if self.p[lo] > 0.0 {
            ((r - self.above[lo]) / self.p[lo]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (self.z[lo], 1.0 - gamma)
    }

    /// `K_2 = E[Z | accept] - E[Z]` for the region rejecting below the left
    /// cut and above the right cut.
    fn k2(&self, left: (f64, f64), right: (f64, f64)) -> f64 {
        let mass = self.left_mass(left.0, left.1) + self.right_mass(right.0, right.1);
        let acc = 1.0 - mass;
        if acc <= 0.0 {
            return f64::NAN;
        }
        let pz_rej = self.left_pz(left.0, left.1) + self.right_pz(right.0, right.1);
        (self.mean - pz_rej) / acc - self.mean
    }

    fn k1(&self, left: (f64, f64), right: (f64, f64), alpha: f64) -> f64 {
        self.left_mass(left.0, left.1) + self.right_mass(right.0, right.1) - alpha
    }
}

fn check_alpha(alpha: f64) -> Result<(), UmpuError> {
    if alpha > 0.0 && alpha < 1.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(UmpuError::BadAlpha(alpha))
    }
}

/// Solves the UMPU cutoff equations for `H0: theta = theta0` at level
/// `alpha` on the empirical family defined by `samples`.
///
/// Returns cutoffs `Gamma_1 = (c_1, gamma_1)` and `Gamma_2 = (c_2, gamma_2)`,
/// where the test rejects with probability one for `z` outside `[c_1, c_2]`
/// and with probability `gamma_i` at `z = c_i`. `boundary` is set when the
/// unbiasedness equation has no sign change over the sample range and a
/// one-sided solution was returned instead.
pub fn solve_umpu_cutoffs(
    samples: &TiltedSampleSet,
    theta0: f64,
    alpha: f64,
) -> Result<UmpuSolution, UmpuError> {
    check_alpha(alpha)?;
    let atoms = TiltedAtoms::build(samples, theta0)?;
    Ok(solve_on_atoms(&atoms, alpha))
}

pub(crate) fn solve_on_atoms(atoms: &TiltedAtoms, alpha: f64) -> UmpuSolution {
    if atoms.n_atoms() == 1 {
        let z0 = atoms.z[0];
        return UmpuSolution {
            lower: RandomizedCutoff {
                c: z0,
                gamma: alpha / 2.0,
            },
            upper: RandomizedCutoff {
                c: z0,
                gamma: alpha / 2.0,
            },
            k1_residual: 0.0,
            k2_residual: 0.0,
            boundary: true,
            ess: atoms.ess,
        };
    }
    let g = |ell: f64| {
        let left = atoms.left_point(ell);
        let right = atoms.right_point(alpha - ell);
        atoms.k2(left, right)
    };
    let g0 = g(0.0);
    let g1 = g(alpha);
    let (ell, boundary) = if g0 >= 0.0 {
        (0.0, true)
    } else if g1 <= 0.0 {
        (alpha, true)
    } else {
        let mut lo = 0.0;
        let mut hi = alpha;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi), false)
    };
    let left = atoms.left_point(ell);
    let right = atoms.right_point(alpha - ell);
    let k2 = atoms.k2(left, right);
    let k1 = atoms.k1(left, right, alpha);
    UmpuSolution {
        lower: RandomizedCutoff {
            c: left.0,
            gamma: left.1,
        },
        upper: RandomizedCutoff {
            c: right.0,
            gamma: 1.0 - right.1,
        },
        k1_residual: k1,
        k2_residual: k2,
        boundary,
        ess: atoms.ess,
    }
}

/// Membership of `(z, u)` in the randomized rejection region given solved
/// cutoffs: dictionary order below `Gamma_1` or above `Gamma_2`.
pub fn umpu_decision(z: f64, u: f64, cutoffs: &UmpuSolution) -> bool {
    dict_lt((z, u), (cutoffs.lower.c, cutoffs.lower.gamma))
        || dict_lt((cutoffs.upper.c, 1.0 - cutoffs.upper.gamma), (z, u))
}

/// Left-tail membership test used for interval inversion: `(z,u)` lies in
/// the left tail of the solved region iff the companion right cutoff that
/// restores level alpha leaves the acceptance mean below the family mean.
pub(crate) fn in_left_tail(atoms: &TiltedAtoms, z: f64, u: f64, alpha: f64) -> bool {
    let ell = atoms.left_mass(z, u);
    if ell > alpha {
        return false;
    }
    let right = atoms.right_point(alpha - ell);
    atoms.k2((z, u), right) < 0.0
}

pub(crate) fn in_right_tail(atoms: &TiltedAtoms, z: f64, u: f64, alpha: f64) -> bool {
    let r = atoms.right_mass(z, u);
    if r > alpha {
        return false;
    }
    let left = atoms.left_point(alpha - r);
    atoms.k2(left, (z, u)) > 0.0
}

/// Continuity-guarded upper-tail Monte Carlo p-value:
/// `(n P_hat{Z >= z} + 1) / (n + 1)`, which reduces to the exact rank-test
/// p-value `(1 + #{Z_i >= z}) / (n+1)` for unit weights.
fn guarded_tail_p(atoms: &TiltedAtoms, z_obs: f64, upper: bool) -> f64 {
    let n = atoms.n_input as f64;
    let tail = if upper {
        atoms.right_mass(z_obs, 0.0) // includes the atom at z_obs
    } else {
        atoms.left_mass(z_obs, 1.0)
    };
    ((n * tail + 1.0) / (n + 1.0)).min(1.0)
}

/// One-sided Monte Carlo test of `H0: theta <= theta0` against larger
/// theta: rejects iff the observed value ranks among the `(n+1) alpha`
/// largest of the pooled observed-plus-reference values (weighted
/// generalization through the tilted tail probability).
pub fn one_sided_mc_test(
    z_obs: f64,
    samples: &TiltedSampleSet,
    theta0: f64,
    alpha: f64,
    seed: u64,
) -> Result<TestOutcome, UmpuError> {
    check_alpha(alpha)?;
    let atoms = TiltedAtoms::build(samples, theta0)?;
    let p = guarded_tail_p(&atoms, z_obs, true);
    let mut diagnostics = Diagnostics::new(seed);
    diagnostics.ess = atoms.ess;
    diagnostics.k1_residual = 0.0;
    diagnostics.k2_residual = 0.0;
    let min_p = 1.0 / (samples.len() as f64 + 1.0);
    if min_p > alpha {
        diagnostics.flags.push(Flag::CannotReject { min_p });
    }
    if atoms.ess < ESS_WARN_THRESHOLD {
        diagnostics.flags.push(Flag::LowEss {
            ess: atoms.ess,
            threshold: ESS_WARN_THRESHOLD,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aux_uniform: f64 = rng.random();
    Ok(TestOutcome {
        p_equal_tailed: p,
        reject: p <= alpha,
        aux_uniform,
        ci: None,
        diagnostics,
    })
}

/// Equal-tailed two-sided Monte Carlo test of `H0: theta = theta0`: the
/// union of the two one-sided level-`alpha/2` tests, reported through
/// `p = 2 min(lower tail, upper tail)` capped at one. The `reject` field
/// carries the randomized UMPU decision at the same level.
pub fn equal_tailed_test(
    z_obs: f64,
    samples: &TiltedSampleSet,
    theta0: f64,
    alpha: f64,
    seed: u64,
) -> Result<TestOutcome, UmpuError> {
    check_alpha(alpha)?;
    let atoms = TiltedAtoms::build(samples, theta0)?;
    let p_up = guarded_tail_p(&atoms, z_obs, true);
    let p_lo = guarded_tail_p(&atoms, z_obs, false);
    let p = (2.0 * p_up.min(p_lo)).min(1.0);

    let solution = solve_on_atoms(&atoms, alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aux_uniform: f64 = rng.random();
    let reject = umpu_decision(z_obs, aux_uniform, &solution);

    let mut diagnostics = Diagnostics::new(seed);
    diagnostics.ess = atoms.ess;
    diagnostics.k1_residual = solution.k1_residual;
    diagnostics.k2_residual = solution.k2_residual;
    if atoms.ess < ESS_WARN_THRESHOLD {
        diagnostics.flags.push(Flag::LowEss {
            ess: atoms.ess,
            threshold: ESS_WARN_THRESHOLD,
        });
    }
    if solution.boundary {
        diagnostics.flags.push(Flag::OneSidedBoundary);
    }
    Ok(TestOutcome {
        p_equal_tailed: p,
        reject,
        aux_uniform,
        ci: None,
        diagnostics,
    })
}

/// Configuration for interval inversion over a sampled family.
#[derive(Clone, Debug)]
pub struct InversionConfig {
    pub alpha: f64,
    /// Bisection tolerance in theta.
    pub theta_tol: f64,
    /// Pooled ESS below which a fresh reference sample is drawn.
    pub ess_threshold: f64,
    pub max_references: usize,
    pub seed: u64,
}

impl InversionConfig {
    pub fn new(alpha: f64, seed: u64) -> Self {
        InversionConfig {
            alpha,
            theta_tol: 1e-6,
            ess_threshold: ESS_WARN_THRESHOLD,
            max_references: 24,
            seed,
        }
    }
}

/// Inverts randomized selective tests over `family` into a confidence
/// interval for the natural parameter. Reference samples are drawn lazily
/// at the thetas the binary search visits and pooled with the balance
/// heuristic, so the effective sample size stays controlled across the whole
/// bracket.
pub struct FamilySolver<'a, S: CarrierSampler> {
    family: &'a NaturalFamily1D<S>,
    cfg: InversionConfig,
    references: Vec<TiltedSampleSet>,
    pooled: Option<TiltedSampleSet>,
}

impl<'a, S: CarrierSampler> FamilySolver<'a, S> {
    pub fn new(family: &'a NaturalFamily1D<S>, cfg: InversionConfig) -> Self {
        FamilySolver {
            family,
            cfg,
            references: Vec::new(),
            pooled: None,
        }
    }

    pub fn n_references(&self) -> usize {
        self.references.len()
    }

    fn clamp_theta(&self, theta: f64) -> f64 {
        theta.clamp(self.family.parameter_range.0, self.family.parameter_range.1)
    }

    fn add_reference(&mut self, theta: f64) -> Result<(), UmpuError> {
        let theta = self.clamp_theta(theta);
        let seed = self
            .cfg
            .seed
            .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(self.references.len() as u64 + 1));
        let set = self.family.sampler.sample_at(theta, seed)?;
        self.references.push(set);
        self.pooled = Some(if self.references.len() == 1 {
            self.references[0].clone()
        } else {
            pool_tilted(&self.references)?
        });
        Ok(())
    }

    /// Atoms of the pooled family at `theta`, sampling a new reference first
    /// if the pooled ESS there is too small.
    fn atoms_at(&mut self, theta: f64) -> Result<TiltedAtoms, UmpuError> {
        if self.pooled.is_none() {
            self.add_reference(theta)?;
        }
        let ess = self
            .pooled
            .as_ref()
            .unwrap()
            .effective_sample_size(theta)
            .unwrap_or(0.0);
        if ess < self.cfg.ess_threshold && self.references.len() < self.cfg.max_references {
            self.add_reference(theta)?;
        }
        Ok(TiltedAtoms::build(self.pooled.as_ref().unwrap(), theta)?)
    }

    fn tilted_mean(&mut self, theta: f64) -> Result<f64, UmpuError> {
        Ok(self.atoms_at(theta)?.mean)
    }

    /// Matches the tilted mean to `z_obs`; the centering point for both
    /// endpoint searches.
    fn center(&mut self, z_obs: f64) -> Result<f64, UmpuError> {
        let mut lo = self.clamp_theta(-1.0);
        let mut hi = self.clamp_theta(1.0);
        let mut step = 1.0;
        for _ in 0..200 {
            if self.tilted_mean(lo)? <= z_obs {
                break;
            }
            lo = self.clamp_theta(lo - step);
            step *= 2.0;
        }
        step = 1.0;
        for _ in 0..200 {
            if self.tilted_mean(hi)? >= z_obs {
                break;
            }
            hi = self.clamp_theta(hi + step);
            step *= 2.0;
        }
        for _ in 0..80 {
            if (hi - lo) <= self.cfg.theta_tol.max(1e-9) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.tilted_mean(mid)? < z_obs {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn theta_scale(&mut self, theta: f64) -> Result<f64, UmpuError> {
        let atoms = self.atoms_at(theta)?;
        let var: f64 = atoms
            .z
            .iter()
            .zip(&atoms.p)
            .map(|(&z, &p)| p * (z - atoms.mean) * (z - atoms.mean))
            .sum();
        Ok((1.0 / var.sqrt().max(1e-12)).min(1e6))
    }

    /// Endpoint search: smallest/largest theta at which the observed pair
    /// drops into the rejection tail. `indicator` must be monotone in theta.
    fn endpoint<F>(
        &mut self,
        start: f64,
        direction: f64,
        step0: f64,
        mut indicator: F,
    ) -> Result<f64, UmpuError>
    where
        F: FnMut(&mut Self, f64) -> Result<bool, UmpuError>,
    {
        let range = self.family.parameter_range;
        let mut inside = start;
        if indicator(self, inside)? {
            // Observed point already in the tail at the center: back off
            // toward the other side before expanding.
            let mut back = step0;
            for _ in 0..80 {
                inside -= direction * back;
                inside = inside.clamp(range.0, range.1);
                if !indicator(self, inside)? {
                    break;
                }
                back *= 2.0;
                if inside <= range.0 || inside >= range.1 {
                    return Ok(inside);
                }
            }
            if indicator(self, inside)? {
                return Err(UmpuError::NonMonotoneTail);
            }
        }
        let mut outside = inside;
        let mut step = step0;
        let mut flipped = false;
        for _ in 0..200 {
            outside += direction * step;
            outside = outside.clamp(range.0, range.1);
            if indicator(self, outside)? {
                flipped = true;
                break;
            }
            if outside <= range.0 {
                return Ok(range.0);
            }
            if outside >= range.1 {
                return Ok(range.1);
            }
            step *= 2.0;
        }
        if !flipped {
            return Ok(if direction > 0.0 { range.1 } else { range.0 });
        }
        for _ in 0..200 {
            if (outside - inside).abs() <= self.cfg.theta_tol {
                break;
            }
            let mid = 0.5 * (inside + outside);
            if indicator(self, mid)? {
                outside = mid;
            } else {
                inside = mid;
            }
        }
        Ok(0.5 * (inside + outside))
    }

    /// Interval of theta whose randomized UMPU test accepts `(z_obs, u)`.
    pub fn umpu_interval(&mut self, z_obs: f64, u: f64) -> Result<(f64, f64), UmpuError> {
        if !(0.0..=1.0).contains(&u) {
            return Err(UmpuError::BadUniform(u));
        }
        check_alpha(self.cfg.alpha)?;
        let alpha = self.cfg.alpha;
        let center = self.center(z_obs)?;
        let step0 = self.theta_scale(center)?;
        let hi = self.endpoint(center, 1.0, step0, |s, th| {
            let atoms = s.atoms_at(th)?;
            Ok(in_left_tail(&atoms, z_obs, u, alpha))
        })?;
        let lo = self.endpoint(center, -1.0, step0, |s, th| {
            let atoms = s.atoms_at(th)?;
            Ok(in_right_tail(&atoms, z_obs, u, alpha))
        })?;
        Ok((lo.min(hi), hi.max(lo)))
    }

    /// Equal-tailed interval: thetas where both randomized one-sided
    /// level-`alpha/2` tests accept.
    pub fn equal_tailed_interval(&mut self, z_obs: f64, u: f64) -> Result<(f64, f64), UmpuError> {
        if !(0.0..=1.0).contains(&u) {
            return Err(UmpuError::BadUniform(u));
        }
        check_alpha(self.cfg.alpha)?;
        let half = self.cfg.alpha / 2.0;
        let center = self.center(z_obs)?;
        let step0 = self.theta_scale(center)?;
        // Large theta: observed value looks small; randomized lower tail
        // P(Z < z) + u P(Z = z) drops below alpha/2.
        let hi = self.endpoint(center, 1.0, step0, |s, th| {
            let atoms = s.atoms_at(th)?;
            Ok(atoms.left_mass(z_obs, u) <= half)
        })?;
        let lo = self.endpoint(center, -1.0, step0, |s, th| {
            let atoms = s.atoms_at(th)?;
            Ok(atoms.right_mass(z_obs, u) <= half)
        })?;
        Ok((lo.min(hi), hi.max(lo)))
    }

    /// Pooled effective sample size at `theta` (diagnostic).
    pub fn pooled_ess(&mut self, theta: f64) -> Result<f64, UmpuError> {
        Ok(self.atoms_at(theta)?.ess)
    }
}

/// Interval of theta whose UMPU test does not reject, located by binary
/// search on the monotone left/right tail indicators. Tolerance is
/// `cfg.theta_tol` in theta.
pub fn umpu_confidence_interval<S: CarrierSampler>(
    z_obs: f64,
    u: f64,
    family: &NaturalFamily1D<S>,
    cfg: InversionConfig,
) -> Result<(f64, f64), UmpuError> {
    FamilySolver::new(family, cfg).umpu_interval(z_obs, u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym_set() -> TiltedSampleSet {
        // symmetric around zero, unit weights
        let mut pts = Vec::new();
        for i in 1..=500 {
            let v = i as f64 / 100.0;
            pts.push(v);
            pts.push(-v);
        }
        TiltedSampleSet::unit_weights(pts, 0.0).unwrap()
    }

    #[test]
    fn symmetric_family_gives_symmetric_cutoffs() {
        let s = sym_set();
        let sol = solve_umpu_cutoffs(&s, 0.0, 0.1).unwrap();
        assert!((sol.lower.c + sol.upper.c).abs() < 1e-10);
        assert!((sol.lower.gamma - sol.upper.gamma).abs() < 1e-8);
        assert!(sol.k1_residual.abs() < 1e-12);
        assert!(sol.k2_residual.abs() < 1e-10);
        assert!(!sol.boundary);
    }

    #[test]
    fn alpha_near_one_collapses_acceptance() {
        let s = sym_set();
        let sol = solve_umpu_cutoffs(&s, 0.0, 0.999).unwrap();
        assert!(
            !dict_lt(
                (sol.upper.c, 1.0 - sol.upper.gamma),
                (sol.lower.c, sol.lower.gamma)
            ),
            "cutoffs out of order"
        );
        // acceptance mass is 1 - alpha
        let atoms = TiltedAtoms::build(&s, 0.0).unwrap();
        let acc = 1.0
            - atoms.left_mass(sol.lower.c, sol.lower.gamma)
            - atoms.right_mass(sol.upper.c, 1.0 - sol.upper.gamma);
        assert!((acc - 0.001).abs() < 1e-9);
    }

    #[test]
    fn decision_agrees_with_brute_force_region() {
        let s = sym_set();
        let sol = solve_umpu_cutoffs(&s, 0.3, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let z: f64 = rng.random_range(-6.0..6.0);
            let u: f64 = rng.random();
            let direct = dict_lt((z, u), (sol.lower.c, sol.lower.gamma))
                || dict_lt((sol.upper.c, 1.0 - sol.upper.gamma), (z, u));
            assert_eq!(direct, umpu_decision(z, u, &sol));
        }
    }

    #[test]
    fn tail_indicators_match_solved_region() {
        let s = sym_set();
        let alpha = 0.07;
        let atoms = TiltedAtoms::build(&s, 0.45).unwrap();
        let sol = solve_on_atoms(&atoms, alpha);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let z: f64 = rng.random_range(-5.5..5.5);
            let u: f64 = rng.random();
            let left = dict_lt((z, u), (sol.lower.c, sol.lower.gamma));
            let right = dict_lt((sol.upper.c, 1.0 - sol.upper.gamma), (z, u));
            assert_eq!(left, in_left_tail(&atoms, z, u, alpha), "left tail at z={z} u={u}");
            assert_eq!(right, in_right_tail(&atoms, z, u, alpha), "right tail at z={z} u={u}");
        }
    }

    #[test]
    fn rank_test_boundary_cases() {
        // n = 19 distinct unit-weight samples, z strictly largest: p = 1/20
        let pts: Vec<f64> = (0..19).map(|i| i as f64).collect();
        let s = TiltedSampleSet::unit_weights(pts, 0.0).unwrap();
        let out = one_sided_mc_test(100.0, &s, 0.0, 0.05, 1).unwrap();
        assert!((out.p_equal_tailed - 0.05).abs() < 1e-12);
        assert!(out.reject);
        // observed at the sample minimum: p = 1
        let out = one_sided_mc_test(0.0, &s, 0.0, 0.05, 1).unwrap();
        assert_eq!(out.p_equal_tailed, 1.0);
        assert!(!out.reject);
    }

    #[test]
    fn cannot_reject_flagged_for_small_n() {
        let s = TiltedSampleSet::unit_weights(vec![0.0, 1.0, 2.0], 0.0).unwrap();
        let out = one_sided_mc_test(5.0, &s, 0.0, 0.05, 1).unwrap();
        assert!(!out.reject);
        assert!(out
            .diagnostics
            .flags
            .iter()
            .any(|f| matches!(f, Flag::CannotReject { .. })));
    }

    #[test]
    fn equal_tailed_median_is_one() {
        let s = sym_set();
        let out = equal_tailed_test(0.0, &s, 0.0, 0.05, 3).unwrap();
        assert_eq!(out.p_equal_tailed, 1.0);
    }
}
