//! Constrained-Gaussian sampling over selection regions: hit-and-run Gibbs
//! chains (optionally restricted to an affine slice), plain rejection
//! sampling, uniform sampling over region-intersected balls, and the
//! ball-to-sphere importance projection used by the selective t-test.

use crate::geometry::{Polytope, SelectionRegion};
use crate::interval::IntervalUnion;
use crate::linalg::{self, dot, norm2, Mat};
use crate::truncgauss::TruncatedGaussian;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("no feasible starting point found after {attempts} projection attempts")]
    Infeasible { attempts: usize },
    #[error("pilot acceptance rate {rate:.2e} below threshold {threshold:.2e}; use hit_and_run instead")]
    LowAcceptance { rate: f64, threshold: f64 },
    #[error("chain config invalid: {0}")]
    BadConfig(String),
    #[error("uniform target requires a bounded chord; got an unbounded section")]
    UnboundedChord,
    #[error("affine slice is inconsistent with the region")]
    EmptySlice,
}

/// Markov chain length and reproducibility parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub thin: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            burn_in: 1000,
            thin: 5,
            n_samples: 2000,
            seed: 0,
        }
    }
}

impl ChainConfig {
    fn validate(&self) -> Result<(), SamplerError> {
        if self.thin == 0 {
            return Err(SamplerError::BadConfig("thin must be >= 1".into()));
        }
        if self.n_samples == 0 {
            return Err(SamplerError::BadConfig("n_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Weighted sample container; immutable once returned.
#[derive(Clone, Debug)]
pub struct WeightedDraws {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Chord intersections that came back empty and were rejected.
    pub rejected_steps: usize,
}

impl WeightedDraws {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Projects every draw onto a linear functional.
    pub fn project(&self, eta: &[f64]) -> Vec<f64> {
        self.points.iter().map(|p| dot(p, eta)).collect()
    }
}

/// Lag-1 autocorrelation of a scalar series (mixing diagnostic).
pub fn lag1_autocorr(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 3 {
        return f64::NAN;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|x| (x - mean) * (x - mean)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = series
        .windows(2)
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum();
    cov / var
}

struct AffineSlice {
    /// Orthonormal basis of the row space of the constraint matrix.
    q_rows: Vec<Vec<f64>>,
    /// Coordinates of the slice in that basis.
    w0: Vec<f64>,
}

impl AffineSlice {
    fn build(c: &Mat, d: &[f64]) -> Result<Self, SamplerError> {
        let rows: Vec<Vec<f64>> = (0..c.rows()).map(|i| c.row(i).to_vec()).collect();
        let q_rows = linalg::orthonormalize(&rows);
        // particular solution: least-norm y with C y = d
        let gram = Mat::from_rows(
            (0..c.rows())
                .map(|i| (0..c.rows()).map(|j| dot(c.row(i), c.row(j))).collect())
                .collect(),
        );
        let coef = linalg::solve_spd(&gram, d).map_err(|_| SamplerError::EmptySlice)?;
        let mut y0 = vec![0.0; c.cols()];
        for (i, &ci) in coef.iter().enumerate() {
            linalg::axpy(ci, c.row(i), &mut y0);
        }
        let w0 = q_rows.iter().map(|q| dot(q, &y0)).collect();
        Ok(AffineSlice { q_rows, w0 })
    }

    fn project_direction(&self, g: &mut [f64]) {
        for q in &self.q_rows {
            let c = dot(g, q);
            linalg::axpy(-c, q, g);
        }
    }

    fn project_point(&self, y: &mut [f64]) {
        for (q, &w) in self.q_rows.iter().zip(&self.w0) {
            let c = dot(y, q) - w;
            linalg::axpy(-c, q, y);
        }
    }
}

fn find_feasible_start(
    region: &SelectionRegion,
    slice: Option<&AffineSlice>,
    hint: &[f64],
) -> Result<Vec<f64>, SamplerError> {
    const MAX_SWEEPS: usize = 500;
    let mut y = hint.to_vec();
    if let Some(s) = slice {
        s.project_point(&mut y);
    }
    for _ in 0..MAX_SWEEPS {
        if region.contains(&y, 1e-9) {
            return Ok(y);
        }
        // project onto the most violated part's constraints, then back onto
        // the slice
        let part = region
            .parts()
            .iter()
            .min_by(|a, b| {
                let va = violation(a, &y);
                let vb = violation(b, &y);
                va.partial_cmp(&vb).unwrap()
            })
            .unwrap();
        let (rows, b) = part.rows();
        for (row, &bi) in rows.iter().zip(b) {
            let slack = dot(row, &y) - bi;
            if slack > 0.0 {
                let nn = dot(row, row);
                if nn > 0.0 {
                    linalg::axpy(-(slack / nn) * 1.0001, row, &mut y);
                }
            }
        }
        if let Some(s) = slice {
            s.project_point(&mut y);
        }
    }
    Err(SamplerError::Infeasible {
        attempts: MAX_SWEEPS,
    })
}

fn violation(p: &crate::geometry::Polytope, y: &[f64]) -> f64 {
    let (rows, b) = p.rows();
    rows.iter()
        .zip(b)
        .map(|(row, &bi)| (dot(row, y) - bi).max(0.0))
        .sum()
}

/// Proposal machinery for one chain: isotropic slice directions, plus two
/// specialized move families that keep high-dimensional problems mixing.
struct Proposals {
    n: usize,
    /// Statistic direction (slice-projected, unit), tried often so a linear
    /// functional of interest resamples at the chain's own pace rather
    /// than the ambient dimension's.
    preferred: Option<Vec<f64>>,
    /// Orthonormal directions supported on coordinates no region row
    /// touches (intersected with the slice): their chords are unbounded,
    /// so these moves are full Gibbs updates of the unconstrained block.
    free_basis: Vec<Vec<f64>>,
}

impl Proposals {
    fn build(
        region: &SelectionRegion,
        slice: Option<&AffineSlice>,
        preferred: Option<&[f64]>,
    ) -> Self {
        let n = region.dim();
        let constrained = region
            .parts()
            .iter()
            .map(Polytope::active_cols)
            .max()
            .unwrap_or(0);
        let free_basis = if constrained < n {
            match slice {
                Some(s) => {
                    // null space of the slice constraints restricted to the
                    // free coordinate block
                    let restricted: Vec<Vec<f64>> = s
                        .q_rows
                        .iter()
                        .map(|row| row[constrained..].to_vec())
                        .collect();
                    linalg::complement_basis(&restricted, n - constrained)
                        .into_iter()
                        .map(|tail| {
                            let mut d = vec![0.0; n];
                            d[constrained..].copy_from_slice(&tail);
                            d
                        })
                        .collect()
                }
                None => Vec::new(), // isotropic already covers this case
            }
        } else {
            Vec::new()
        };
        Proposals {
            n,
            preferred: preferred.map(<[f64]>::to_vec),
            free_basis,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, slice: Option<&AffineSlice>, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        if let Some(d) = &self.preferred {
            if u < 0.25 {
                return d.clone();
            }
        }
        if !self.free_basis.is_empty() && u < 0.5 {
            let mut d = vec![0.0; self.n];
            for b in &self.free_basis {
                let g: f64 = rng.sample::<f64, _>(StandardNormal);
                linalg::axpy(g, b, &mut d);
            }
            let nn = norm2(&d);
            if nn > 1e-12 {
                d.iter_mut().for_each(|x| *x /= nn);
                return d;
            }
        }
        loop {
            let mut g: Vec<f64> =
                (0..self.n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            if let Some(s) = slice {
                s.project_direction(&mut g);
            }
            let nn = norm2(&g);
            if nn > 1e-12 {
                g.iter_mut().for_each(|x| *x /= nn);
                return g;
            }
        }
    }
}

/// Draws a uniform point from a union of finite intervals, by length.
fn sample_uniform_union<R: Rng + ?Sized>(u: &IntervalUnion, rng: &mut R) -> Option<f64> {
    let total = u.total_length();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let mut target: f64 = rng.random::<f64>() * total;
    for &(lo, hi) in u.intervals() {
        let len = hi - lo;
        if target <= len {
            return Some(lo + target);
        }
        target -= len;
    }
    u.intervals().last().map(|&(_, hi)| hi)
}

enum Target {
    /// N(mean, sigma^2 I), restricted to the region (and slice).
    Gaussian { mean: Vec<f64>, sigma: f64 },
    /// Uniform over the region intersected with a centered ball.
    UniformBall { radius: f64 },
}

fn run_chain(
    target: &Target,
    region: &SelectionRegion,
    slice: Option<&AffineSlice>,
    preferred: Option<&[f64]>,
    start: Vec<f64>,
    config: &ChainConfig,
) -> Result<WeightedDraws, SamplerError> {
    config.validate()?;
    let proposals = Proposals::build(region, slice, preferred);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut y = start;
    let mut rejected = 0usize;
    let total_steps = config.burn_in + config.thin * config.n_samples;
    let mut points = Vec::with_capacity(config.n_samples);
    for step in 0..total_steps {
        let d = proposals.draw(slice, &mut rng);
        let mut chord = region.chord(&y, &d);
        if let Target::UniformBall { radius } = target {
            chord = chord.intersect(&ball_chord(&y, &d, *radius));
        }
        let t_opt = match target {
            Target::Gaussian { mean, sigma } => {
                let t_star: f64 = mean.iter().zip(&d).map(|(m, di)| m * di).sum::<f64>() - dot(&y, &d);
                match TruncatedGaussian::new(t_star, *sigma, &chord) {
                    Ok(law) => Some(law.sample(&mut rng)),
                    Err(_) => None,
                }
            }
            Target::UniformBall { .. } => {
                if chord
                    .intervals()
                    .iter()
                    .any(|&(lo, hi)| !lo.is_finite() || !hi.is_finite())
                {
                    return Err(SamplerError::UnboundedChord);
                }
                sample_uniform_union(&chord, &mut rng)
            }
        };
        match t_opt {
            Some(t) => linalg::axpy(t, &d, &mut y),
            None => rejected += 1, // numerically empty chord; stay put
        }
        if step >= config.burn_in && (step - config.burn_in) % config.thin == config.thin - 1 {
            points.push(y.clone());
        }
    }
    let m = points.len();
    Ok(WeightedDraws {
        points,
        weights: vec![1.0; m],
        rejected_steps: rejected,
    })
}

fn ball_chord(y: &[f64], d: &[f64], radius: f64) -> IntervalUnion {
    // ||y + t d||^2 <= r^2 with unit d
    let yd = dot(y, d);
    let disc = yd * yd - dot(y, y) + radius * radius;
    if disc <= 0.0 {
        return IntervalUnion::empty();
    }
    let s = disc.sqrt();
    IntervalUnion::single(-yd - s, -yd + s)
}

/// Hit-and-run Gibbs chain targeting `N(mean, sigma^2 I)` restricted to
/// `region`, and to the affine slice `{y : C y = d}` when given (directions
/// are drawn in the null space of `C`). Per step: a proposal direction,
/// exact chord intersection with every polytope of the union, then one
/// inverse-CDF truncated-normal draw along the chord. Draws carry unit
/// weights.
///
/// Directions are isotropic in the slice, alternated with moves along
/// `preferred` when one is given; callers tracking a linear statistic pass
/// its direction so the statistic mixes at the chain's pace instead of the
/// ambient dimension's.
///
/// The chain starts from `start` when supplied (it must be feasible);
/// otherwise a feasible point is searched for by alternating projections
/// from `mean`.
pub fn hit_and_run(
    mean: &[f64],
    sigma: f64,
    region: &SelectionRegion,
    affine_fix: Option<(&Mat, &[f64])>,
    preferred: Option<&[f64]>,
    start: Option<&[f64]>,
    config: &ChainConfig,
) -> Result<WeightedDraws, SamplerError> {
    let slice = match affine_fix {
        Some((c, d)) => Some(AffineSlice::build(c, d)?),
        None => None,
    };
    let preferred = match preferred {
        Some(p) => {
            let mut d = p.to_vec();
            if let Some(sl) = &slice {
                sl.project_direction(&mut d);
            }
            let nn = norm2(&d);
            if nn > 1e-12 {
                d.iter_mut().for_each(|x| *x /= nn);
                Some(d)
            } else {
                None
            }
        }
        None => None,
    };
    let start = match start {
        Some(s) => {
            let mut y = s.to_vec();
            if let Some(sl) = &slice {
                sl.project_point(&mut y);
            }
            if !region.contains(&y, 1e-7) {
                find_feasible_start(region, slice.as_ref(), &y)?
            } else {
                y
            }
        }
        None => find_feasible_start(region, slice.as_ref(), mean)?,
    };
    run_chain(
        &Target::Gaussian {
            mean: mean.to_vec(),
            sigma,
        },
        region,
        slice.as_ref(),
        preferred.as_deref(),
        start,
        config,
    )
}

/// Uniform hit-and-run over `region` intersected with the centered ball of
/// the given radius. Used for the selective t-test, where the conditional
/// law is uniform on a sphere slice reached by radial projection.
pub fn hit_and_run_uniform_ball(
    region: &SelectionRegion,
    radius: f64,
    preferred: Option<&[f64]>,
    start: &[f64],
    config: &ChainConfig,
) -> Result<WeightedDraws, SamplerError> {
    let mut y = start.to_vec();
    let nn = norm2(&y);
    if nn > radius {
        // pull strictly inside the ball
        y.iter_mut().for_each(|x| *x *= 0.999_999 * radius / nn);
    }
    if !region.contains(&y, 1e-7) {
        y = find_feasible_start(region, None, &y)?;
    }
    let preferred = preferred.map(|p| {
        let nn = norm2(p);
        p.iter().map(|v| v / nn).collect::<Vec<f64>>()
    });
    run_chain(
        &Target::UniformBall { radius },
        region,
        None,
        preferred.as_deref(),
        y,
        config,
    )
}

/// Acceptance threshold below which rejection sampling refuses to run.
pub const REJECTION_MIN_ACCEPTANCE: f64 = 1e-4;

/// I.i.d. draws from `N(mean, sigma^2 I)` restricted to `region` by plain
/// rejection. A pilot run estimates the acceptance probability first and the
/// call refuses (pointing at `hit_and_run`) when it is too small.
pub fn rejection_sample(
    mean: &[f64],
    sigma: f64,
    region: &SelectionRegion,
    n: usize,
    seed: u64,
) -> Result<WeightedDraws, SamplerError> {
    let dim = region.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim)
            .map(|i| mean[i] + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    const PILOT: usize = 2000;
    let mut pilot_hits = 0usize;
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..PILOT {
        let y = draw(&mut rng);
        if region.contains(&y, 0.0) {
            pilot_hits += 1;
            if accepted.len() < n {
                accepted.push(y);
            }
        }
    }
    let rate = pilot_hits as f64 / PILOT as f64;
    if rate < REJECTION_MIN_ACCEPTANCE {
        return Err(SamplerError::LowAcceptance {
            rate,
            threshold: REJECTION_MIN_ACCEPTANCE,
        });
    }
    let budget = ((n as f64 / rate) * 20.0) as usize + PILOT;
    let mut tried = PILOT;
    while accepted.len() < n && tried < budget {
        let y = draw(&mut rng);
        tried += 1;
        if region.contains(&y, 0.0) {
            accepted.push(y);
        }
    }
    if accepted.len() < n {
        return Err(SamplerError::LowAcceptance {
            rate,
            threshold: REJECTION_MIN_ACCEPTANCE,
        });
    }
    Ok(WeightedDraws {
        points: accepted,
        weights: vec![1.0; n],
        rejected_steps: 0,
    })
}

/// Result of projecting ball draws onto the sphere.
#[derive(Clone, Debug)]
pub struct SphereProjection {
    pub draws: WeightedDraws,
    /// Draws whose radial projection left the region.
    pub discarded: usize,
}

/// Turns uniform draws from `unit ball ∩ C` into importance-weighted draws
/// on `unit sphere ∩ C`.
///
/// Each draw is replaced by its radial projection `Z = Y/||Y||`; the weight
/// picks up the factor `W(Z) = (∫_0^1 1{rZ ∈ C} r^{k-1}/k dr)^{-1}`, with
/// the integral in closed form `Σ (b_j^k - a_j^k)/k` over the exact
/// ray-region intersection. The radial kernel is the unnormalized
/// `r^{k-1}/k`; the missing constant is shared by every draw and cancels in
/// self-normalized estimates.
pub fn sphere_project_weights(
    draws: &WeightedDraws,
    k: usize,
    region: &SelectionRegion,
) -> SphereProjection {
    assert!(k >= 1);
    let origin = vec![0.0; region.dim()];
    let mut points = Vec::with_capacity(draws.len());
    let mut weights = Vec::with_capacity(draws.len());
    let mut discarded = 0usize;
    for (y, &w) in draws.points.iter().zip(&draws.weights) {
        let r = norm2(y);
        if r == 0.0 {
            discarded += 1;
            continue;
        }
        let z: Vec<f64> = y.iter().map(|v| v / r).collect();
        if !region.contains(&z, 1e-12) {
            discarded += 1;
            continue;
        }
        let ray = region
            .chord(&origin, &z)
            .intersect(&IntervalUnion::single(0.0, 1.0));
        // integral of the radial kernel r^{k-1}/k over the ray sections:
        // sum (b^k - a^k)/k^2; the 1/k normalization is shared by every draw
        // and cancels under self-normalization, but keeping it makes each
        // weight the literal kernel integral
        let integral: f64 = ray
            .intervals()
            .iter()
            .map(|&(a, b)| b.powi(k as i32) - a.powi(k as i32))
            .sum::<f64>()
            / (k * k) as f64;
        if !(integral > 0.0) {
            discarded += 1;
            continue;
        }
        points.push(z);
        weights.push(w / integral);
    }
    SphereProjection {
        draws: WeightedDraws {
            points,
            weights,
            rejected_steps: draws.rejected_steps,
        },
        discarded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polytope;

    #[test]
    fn unconstrained_chain_recovers_mean() {
        let region = SelectionRegion::full(3);
        let mean = vec![1.0, -2.0, 0.5];
        let cfg = ChainConfig {
            burn_in: 200,
            thin: 2,
            n_samples: 20_000,
            seed: 9,
        };
        let draws = hit_and_run(&mean, 1.0, &region, None, None, None, &cfg).unwrap();
        for j in 0..3 {
            let m: f64 =
                draws.points.iter().map(|p| p[j]).sum::<f64>() / draws.len() as f64;
            // generous 4-std-err band with autocorrelation slack
            assert!((m - mean[j]).abs() < 0.05, "coord {j}: {m}");
        }
    }

    #[test]
    fn chain_is_bit_reproducible() {
        let p = Polytope::new(vec![vec![-1.0, 0.0]], vec![-0.5], 2).unwrap();
        let region = SelectionRegion::from_polytope(p);
        let cfg = ChainConfig {
            burn_in: 50,
            thin: 3,
            n_samples: 100,
            seed: 1234,
        };
        let a = hit_and_run(&[0.0, 0.0], 1.0, &region, None, None, Some(&[1.0, 0.0]), &cfg).unwrap();
        let b = hit_and_run(&[0.0, 0.0], 1.0, &region, None, None, Some(&[1.0, 0.0]), &cfg).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn rejection_acceptance_rate_halfspace() {
        let p = Polytope::new(vec![vec![-1.0, 0.0, 0.0]], vec![0.0], 3).unwrap();
        let region = SelectionRegion::from_polytope(p);
        let draws = rejection_sample(&[0.0; 3], 1.0, &region, 5000, 77).unwrap();
        assert_eq!(draws.len(), 5000);
        assert!(draws.points.iter().all(|y| y[0] >= 0.0));
    }

    #[test]
    fn rejection_refuses_tiny_acceptance() {
        // {y > 6}: acceptance ~1e-9
        let p = Polytope::new(vec![vec![-1.0]], vec![-6.0], 1).unwrap();
        let region = SelectionRegion::from_polytope(p);
        match rejection_sample(&[0.0], 1.0, &region, 100, 5) {
            Err(SamplerError::LowAcceptance { .. }) => {}
            other => panic!("expected LowAcceptance, got {other:?}"),
        }
    }

    #[test]
    fn affine_slice_is_respected() {
        let region = SelectionRegion::full(3);
        let c = Mat::from_rows(vec![vec![1.0, 1.0, 0.0]]);
        let d = vec![2.0];
        let cfg = ChainConfig {
            burn_in: 20,
            thin: 1,
            n_samples: 500,
            seed: 3,
        };
        let draws = hit_and_run(&[0.0; 3], 1.0, &region, Some((&c, &d)), None, None, &cfg).unwrap();
        for p in &draws.points {
            assert!((p[0] + p[1] - 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn sphere_weights_constant_on_full_ball() {
        let region = SelectionRegion::full(3);
        let cfg = ChainConfig {
            burn_in: 100,
            thin: 1,
            n_samples: 400,
            seed: 8,
        };
        let ball = hit_and_run_uniform_ball(&region, 1.0, None, &[0.1, 0.0, 0.0], &cfg).unwrap();
        let proj = sphere_project_weights(&ball, 3, &region);
        assert_eq!(proj.discarded, 0);
        let w0 = proj.draws.weights[0];
        for &w in &proj.draws.weights {
            assert!((w - w0).abs() < 1e-12);
        }
        // full ray integral is 1/k^2, so the constant weight is k^2
        assert!((w0 - 9.0).abs() < 1e-12);
    }
}
