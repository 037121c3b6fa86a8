//! Lasso fitting by coordinate descent, the sign-conditioned selection
//! polytope, and the Monte Carlo rule for the regularization weight.
//!
//! Objective convention: `||y - X b||^2 + lambda ||b||_1` (no 1/2 on the
//! quadratic), so every KKT constant carries an explicit factor of two:
//! stationarity reads `2 X_j'(y - X b) = lambda sign(b_j)` on the active set
//! and `|2 X_j'(y - X b)| <= lambda` off it.

use crate::geometry::{Polytope, SelectionRegion};
use crate::linalg::{self, dot, Mat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LassoError {
    #[error("lambda must be positive, got {0}")]
    BadLambda(f64),
    #[error("coordinate descent did not reach tol={tol:.1e} in {max_iter} sweeps (last KKT residual {residual:.3e})")]
    MaxIterExceeded {
        tol: f64,
        max_iter: usize,
        residual: f64,
    },
    #[error("active block is rank deficient")]
    RankDeficient,
}

/// A fitted lasso solution together with its selection event data.
#[derive(Clone, Debug)]
pub struct LassoFit {
    pub beta_hat: Vec<f64>,
    /// `{j : beta_hat_j != 0}`, ascending.
    pub active: Vec<usize>,
    /// Signs on the active set, aligned with `active`.
    pub signs: Vec<f64>,
    pub lambda: f64,
    /// Max KKT violation at the returned solution.
    pub kkt_residual: f64,
    pub sweeps: usize,
}

/// KKT residual of a candidate solution: the largest violation of
/// stationarity (active) or of the subgradient box (inactive).
pub fn kkt_residual(x: &Mat, residual: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let grad = x.t_mul_vec(residual); // X'(y - X beta)
    beta.iter()
        .zip(&grad)
        .map(|(&bj, &gj)| {
            if bj != 0.0 {
                (2.0 * gj - lambda * bj.signum()).abs()
            } else {
                (2.0 * gj).abs() - lambda
            }
        })
        .fold(0.0f64, |acc, v| acc.max(v.max(0.0)))
}

/// Cyclic coordinate descent for
/// `argmin ||y - X b||^2 + lambda ||b||_1`, deterministic ascending column
/// order, run until the KKT residual drops to `tol`.
///
/// Exactly-zero inner products at the KKT boundary break toward "inactive":
/// the soft threshold maps `|rho| <= lambda/2` to zero.
pub fn lasso_fit(
    x: &Mat,
    y: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LassoFit, LassoError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(LassoError::BadLambda(lambda));
    }
    let (n, p) = (x.rows(), x.cols());
    assert_eq!(y.len(), n);
    let col_sq: Vec<f64> = (0..p).map(|j| dot(&x.col(j), &x.col(j))).collect();
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.col(j)).collect();
    let mut beta = vec![0.0; p];
    let mut resid = y.to_vec();
    let thresh = lambda / 2.0;
    let mut last_residual = f64::INFINITY;
    for sweep in 1..=max_iter {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if col_sq[j] <= 0.0 {
                continue;
            }
            let old = beta[j];
            let rho = dot(&cols[j], &resid) + col_sq[j] * old;
            let new = soft_threshold(rho, thresh) / col_sq[j];
            if new != old {
                linalg::axpy(old - new, &cols[j], &mut resid);
                beta[j] = new;
                max_delta = max_delta.max((new - old).abs());
            }
        }
        // cheap sweeps between full KKT checks
        if max_delta < tol || sweep % 8 == 0 || sweep == max_iter {
            last_residual = kkt_residual(x, &resid, &beta, lambda);
            if last_residual <= tol {
                let (active, signs) = active_set(&beta);
                return Ok(LassoFit {
                    beta_hat: beta,
                    active,
                    signs,
                    lambda,
                    kkt_residual: last_residual,
                    sweeps: sweep,
                });
            }
        }
    }
    Err(LassoError::MaxIterExceeded {
        tol,
        max_iter,
        residual: last_residual,
    })
}

#[inline]
fn soft_threshold(rho: f64, t: f64) -> f64 {
    if rho > t {
        rho - t
    } else if rho < -t {
        rho + t
    } else {
        0.0
    }
}

fn active_set(beta: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut active = Vec::new();
    let mut signs = Vec::new();
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            active.push(j);
            signs.push(b.signum());
        }
    }
    (active, signs)
}

/// The sign-conditioned selection polytope: all responses `y` for which the
/// lasso at this `lambda` reproduces exactly this active set with these
/// signs. A single polytope assembled from the sign-consistency
/// inequalities on the active block and the subgradient box on the inactive
/// block. With an empty active set the event is the pure box constraint.
pub fn lasso_selection_region(
    x: &Mat,
    lambda: f64,
    active: &[usize],
    signs: &[f64],
) -> Result<SelectionRegion, LassoError> {
    let poly = sign_polytope(x, lambda, active, signs)?;
    Ok(SelectionRegion::from_polytope(poly))
}

/// Sign-free variant: the union of sign-conditioned polytopes over all
/// `2^|active|` sign patterns (patterns whose polytope is plainly empty are
/// kept; membership handles them). Conditioning only on the active set
/// costs this exponential blowup, which is why sign conditioning is the
/// default everywhere else.
pub fn lasso_selection_region_signfree(
    x: &Mat,
    lambda: f64,
    active: &[usize],
) -> Result<SelectionRegion, LassoError> {
    assert!(
        active.len() <= 20,
        "sign-free union has 2^{} parts; condition on signs instead",
        active.len()
    );
    if active.is_empty() {
        return lasso_selection_region(x, lambda, &[], &[]);
    }
    let mut parts = Vec::with_capacity(1 << active.len());
    for mask in 0u32..(1 << active.len()) {
        let signs: Vec<f64> = (0..active.len())
            .map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
            .collect();
        parts.push(sign_polytope(x, lambda, active, &signs)?);
    }
    Ok(SelectionRegion::new(parts))
}

fn sign_polytope(
    x: &Mat,
    lambda: f64,
    active: &[usize],
    signs: &[f64],
) -> Result<Polytope, LassoError> {
    assert_eq!(active.len(), signs.len());
    let n = x.rows();
    let p = x.cols();
    let s = active.len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(s + 2 * (p - s));
    let mut rhs: Vec<f64> = Vec::with_capacity(s + 2 * (p - s));

    let inactive: Vec<usize> = (0..p).filter(|j| !active.contains(j)).collect();

    if s == 0 {
        // pure subgradient box: |2 X_k' y| <= lambda
        for &k in &inactive {
            let col = x.col(k);
            rows.push(col.iter().map(|v| 2.0 * v).collect());
            rhs.push(lambda);
            rows.push(col.iter().map(|v| -2.0 * v).collect());
            rhs.push(lambda);
        }
        return Polytope::new(rows, rhs, n).map_err(|_| LassoError::RankDeficient);
    }

    let xa = x.select_cols(active);
    let gram = xa.gram();
    let chol = linalg::cholesky(&gram).map_err(|_| LassoError::RankDeficient)?;
    // G^{-1} s and G^{-1} X_A' (row by row)
    let ginv_s = linalg::solve_with_cholesky(&chol, signs);

    // sign consistency: s_i * beta_hat_i(y) > 0, with
    // beta_hat(y) = G^{-1} (X_A' y - (lambda/2) s)
    for i in 0..s {
        let mut unit = vec![0.0; s];
        unit[i] = 1.0;
        let gi = linalg::solve_with_cholesky(&chol, &unit); // row i of G^{-1}
        let coef = xa.mul_vec(&gi); // X_A G^{-1} e_i, length n
        let row: Vec<f64> = coef.iter().map(|v| -signs[i] * v).collect();
        rows.push(row);
        rhs.push(-signs[i] * (lambda / 2.0) * ginv_s[i]);
    }

    // inactive subgradient box: |2 X_k'(I - P_A) y + lambda X_k' X_A G^{-1} s| <= lambda
    let xa_ginv_s = xa.mul_vec(&ginv_s); // X_A G^{-1} s, length n
    for &k in &inactive {
        let col = x.col(k);
        // (I - P_A)' X_k = X_k - X_A G^{-1} X_A' X_k
        let xak = xa.t_mul_vec(&col);
        let coef = linalg::solve_with_cholesky(&chol, &xak);
        let pk = xa.mul_vec(&coef);
        let resid_dir: Vec<f64> = col.iter().zip(&pk).map(|(c, pv)| c - pv).collect();
        let u_k = dot(&col, &xa_ginv_s);
        let row_plus: Vec<f64> = resid_dir.iter().map(|v| 2.0 * v).collect();
        rows.push(row_plus);
        rhs.push(lambda * (1.0 - u_k));
        let row_minus: Vec<f64> = resid_dir.iter().map(|v| -2.0 * v).collect();
        rows.push(row_minus);
        rhs.push(lambda * (1.0 + u_k));
    }
    Polytope::new(rows, rhs, n).map_err(|_| LassoError::RankDeficient)
}

/// The Lagrange weight rule `lambda = 2 E ||X' eps||_inf` with
/// `eps ~ N(0, sigma^2 I)`, by Monte Carlo with `n_mc` noise draws.
/// Deterministic under the seed; exactly homogeneous of degree one in
/// `sigma` for a shared seed.
pub fn lambda_mc(x: &Mat, sigma: f64, n_mc: usize, seed: u64) -> f64 {
    assert!(sigma > 0.0 && n_mc > 0);
    let n = x.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    let mut eps = vec![0.0; n];
    for _ in 0..n_mc {
        for e in eps.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *e = g;
        }
        let corr = x.t_mul_vec(&eps);
        let max_abs = corr.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        acc += max_abs;
    }
    2.0 * sigma * acc / n_mc as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Mat, Vec<f64>) {
        // orthonormal 4x2 design
        let h = 0.5f64;
        let x = Mat::from_rows(vec![
            vec![h, h],
            vec![h, -h],
            vec![h, h],
            vec![h, -h],
        ]);
        let y = vec![2.0, 1.0, 2.2, 0.8];
        (x, y)
    }

    #[test]
    fn orthonormal_design_soft_thresholds() {
        let (x, y) = toy();
        let lambda = 1.0;
        let fit = lasso_fit(&x, &y, lambda, 1e-12, 10_000).unwrap();
        for j in 0..2 {
            let rho = dot(&x.col(j), &y);
            let expect = soft_threshold(rho, lambda / 2.0);
            assert!((fit.beta_hat[j] - expect).abs() < 1e-10, "col {j}");
        }
        assert!(fit.kkt_residual <= 1e-12);
    }

    #[test]
    fn huge_lambda_gives_zero_solution() {
        let (x, y) = toy();
        let corr = x.t_mul_vec(&y);
        let max_abs = corr.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let fit = lasso_fit(&x, &y, 2.0 * max_abs + 0.1, 1e-12, 1000).unwrap();
        assert!(fit.active.is_empty());
        assert!(fit.beta_hat.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn observed_y_lies_in_its_own_region() {
        let (x, y) = toy();
        let fit = lasso_fit(&x, &y, 0.7, 1e-12, 10_000).unwrap();
        let region = lasso_selection_region(&x, 0.7, &fit.active, &fit.signs).unwrap();
        assert!(region.contains(&y, 1e-9));
    }

    #[test]
    fn lambda_mc_single_unit_column() {
        // E|N(0,1)| = sqrt(2/pi); rule gives 2 sqrt(2/pi) ~ 1.5958
        let x = Mat::from_cols(&[vec![1.0, 0.0, 0.0]]);
        let lam = lambda_mc(&x, 1.0, 200_000, 11);
        assert!((lam - 1.5958).abs() < 0.01, "lambda {lam}");
    }

    #[test]
    fn lambda_mc_sigma_homogeneity_is_exact() {
        let x = Mat::from_cols(&[vec![1.0, 0.5], vec![0.3, -0.2]]);
        let a = lambda_mc(&x, 1.0, 500, 42);
        let b = lambda_mc(&x, 2.0, 500, 42);
        assert_eq!(2.0 * a, b);
    }
}
