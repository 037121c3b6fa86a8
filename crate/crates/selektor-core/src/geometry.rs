//! Selection regions: unions of polytopes `{y : A y <= b}` and the exact
//! one-dimensional sections used by both the truncated-Gaussian tests and the
//! chord steps of the constrained samplers.

use crate::interval::IntervalUnion;
use crate::linalg::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("constraint matrix is {rows}x{cols} but b has length {blen}")]
    ShapeMismatch { rows: usize, cols: usize, blen: usize },
    #[error("constraint data contains NaN")]
    NotFinite,
    #[error("point lies outside the selection region")]
    PointOutsideRegion,
    #[error("direction vector is zero")]
    ZeroDirection,
}

/// A single polytope `{y : A y <= b}`. An empty constraint set (zero rows)
/// is all of R^n.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Polytope {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    dim: usize,
    /// Columns past this index are zero in every row; chord and membership
    /// products can stop early. Matters when a region constrains only the
    /// first-stage observations of a larger response vector.
    active_cols: usize,
}

impl Polytope {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>, dim: usize) -> Result<Self, GeometryError> {
        if a.len() != b.len() {
            return Err(GeometryError::ShapeMismatch {
                rows: a.len(),
                cols: dim,
                blen: b.len(),
            });
        }
        for row in &a {
            if row.len() != dim {
                return Err(GeometryError::ShapeMismatch {
                    rows: a.len(),
                    cols: row.len(),
                    blen: b.len(),
                });
            }
            if row.iter().any(|v| v.is_nan()) {
                return Err(GeometryError::NotFinite);
            }
        }
        if b.iter().any(|v| v.is_nan()) {
            return Err(GeometryError::NotFinite);
        }
        let active_cols = a
            .iter()
            .map(|row| row.iter().rposition(|&v| v != 0.0).map_or(0, |p| p + 1))
            .max()
            .unwrap_or(0);
        Ok(Polytope {
            a,
            b,
            dim,
            active_cols,
        })
    }

    pub fn from_mat(a: &Mat, b: Vec<f64>) -> Result<Self, GeometryError> {
        let rows = (0..a.rows()).map(|i| a.row(i).to_vec()).collect();
        Polytope::new(rows, b, a.cols())
    }

    /// All of R^n.
    pub fn full(dim: usize) -> Self {
        Polytope {
            a: vec![],
            b: vec![],
            dim,
            active_cols: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_constraints(&self) -> usize {
        self.a.len()
    }

    /// One past the last coordinate any constraint row touches.
    pub fn active_cols(&self) -> usize {
        self.active_cols
    }

    pub fn rows(&self) -> (&[Vec<f64>], &[f64]) {
        (&self.a, &self.b)
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        assert_eq!(y.len(), self.dim);
        self.a
            .iter()
            .zip(&self.b)
            .all(|(row, &bi)| partial_dot(row, y, self.active_cols) <= bi + tol)
    }

    /// The chord `{t : y + t d in polytope}` as a single interval (possibly
    /// empty or unbounded). Exact row-wise ratio computation.
    pub fn chord(&self, y: &[f64], d: &[f64]) -> Option<(f64, f64)> {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (row, &bi) in self.a.iter().zip(&self.b) {
            let ad = partial_dot(row, d, self.active_cols);
            let slack = bi - partial_dot(row, y, self.active_cols);
            if ad.abs() < 1e-14 {
                if slack < 0.0 {
                    return None;
                }
                continue;
            }
            let t = slack / ad;
            if ad > 0.0 {
                hi = hi.min(t);
            } else {
                lo = lo.max(t);
            }
            if lo > hi {
                return None;
            }
        }
        Some((lo, hi))
    }

    /// Shifts the polytope: returns `{y : y + shift in self}`.
    pub fn translated(&self, shift: &[f64]) -> Polytope {
        assert_eq!(shift.len(), self.dim);
        let b = self
            .a
            .iter()
            .zip(&self.b)
            .map(|(row, &bi)| bi - partial_dot(row, shift, self.active_cols))
            .collect();
        Polytope {
            a: self.a.clone(),
            b,
            dim: self.dim,
            active_cols: self.active_cols,
        }
    }

    /// Embeds into a larger ambient space by zero-padding the rows; the
    /// constraints keep acting on the leading coordinates only.
    pub fn embedded(&self, ambient: usize) -> Polytope {
        assert!(ambient >= self.dim);
        let a = self
            .a
            .iter()
            .map(|row| {
                let mut r = row.clone();
                r.resize(ambient, 0.0);
                r
            })
            .collect();
        Polytope {
            a,
            b: self.b.clone(),
            dim: ambient,
            active_cols: self.active_cols,
        }
    }

    /// Coordinate rescaling: returns `{u : s u in self}` for `s > 0`.
    pub fn scaled(&self, s: f64) -> Polytope {
        assert!(s > 0.0 && s.is_finite());
        let a = self
            .a
            .iter()
            .map(|row| row.iter().map(|v| v * s).collect())
            .collect();
        Polytope {
            a,
            b: self.b.clone(),
            dim: self.dim,
            active_cols: self.active_cols,
        }
    }

    /// Image under an affine substitution `y = base + Q v`: returns the
    /// polytope in `v` coordinates.
    pub fn pullback(&self, base: &[f64], q_cols: &[Vec<f64>]) -> Polytope {
        let k = q_cols.len();
        let mut rows = Vec::with_capacity(self.a.len());
        let mut b = Vec::with_capacity(self.b.len());
        for (row, &bi) in self.a.iter().zip(&self.b) {
            let new_row: Vec<f64> = q_cols
                .iter()
                .map(|q| partial_dot(row, q, self.active_cols))
                .collect();
            rows.push(new_row);
            b.push(bi - partial_dot(row, base, self.active_cols));
        }
        Polytope::new(rows, b, k).expect("pullback preserves shape")
    }
}

/// A union of polytopes; membership is the OR over parts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionRegion {
    parts: Vec<Polytope>,
}

impl SelectionRegion {
    pub fn new(parts: Vec<Polytope>) -> Self {
        assert!(!parts.is_empty(), "selection region needs at least one polytope");
        let dim = parts[0].dim();
        assert!(parts.iter().all(|p| p.dim() == dim), "mixed dimensions");
        SelectionRegion { parts }
    }

    pub fn full(dim: usize) -> Self {
        SelectionRegion {
            parts: vec![Polytope::full(dim)],
        }
    }

    pub fn from_polytope(p: Polytope) -> Self {
        SelectionRegion { parts: vec![p] }
    }

    pub fn dim(&self) -> usize {
        self.parts[0].dim()
    }

    pub fn parts(&self) -> &[Polytope] {
        &self.parts
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        self.parts.iter().any(|p| p.contains(y, tol))
    }

    /// `{t : y + t d in region}` as a union of chords, merged across parts.
    pub fn chord(&self, y: &[f64], d: &[f64]) -> IntervalUnion {
        let segs: Vec<(f64, f64)> = self
            .parts
            .iter()
            .filter_map(|p| p.chord(y, d))
            .collect();
        IntervalUnion::new(segs)
    }

    /// Translates every part: `{y : y + shift in self}`.
    pub fn translated(&self, shift: &[f64]) -> SelectionRegion {
        SelectionRegion {
            parts: self.parts.iter().map(|p| p.translated(shift)).collect(),
        }
    }

    /// Embeds every part into a larger ambient space by zero-padding.
    pub fn embedded(&self, ambient: usize) -> SelectionRegion {
        SelectionRegion {
            parts: self.parts.iter().map(|p| p.embedded(ambient)).collect(),
        }
    }

    /// Coordinate rescaling: `{u : s u in self}`.
    pub fn scaled(&self, s: f64) -> SelectionRegion {
        SelectionRegion {
            parts: self.parts.iter().map(|p| p.scaled(s)).collect(),
        }
    }

    /// Region in `v` coordinates after the substitution `y = base + Q v`.
    pub fn pullback(&self, base: &[f64], q_cols: &[Vec<f64>]) -> SelectionRegion {
        SelectionRegion {
            parts: self
                .parts
                .iter()
                .map(|p| p.pullback(base, q_cols))
                .collect(),
        }
    }
}

#[inline]
fn partial_dot(row: &[f64], y: &[f64], upto: usize) -> f64 {
    let m = upto.min(row.len()).min(y.len());
    crate::linalg::dot(&row[..m], &y[..m])
}

/// Truncation support of the statistic `eta' y` along the direction `eta`
/// inside `region`: the set `{eta'(y + t eta) : y + t eta in region}`,
/// expressed in the `eta' y` coordinate. For a single polytope this gives the
/// closed-form one-interval endpoints; for unions the per-polytope chords are
/// merged.
pub fn truncation_set(
    y: &[f64],
    eta: &[f64],
    region: &SelectionRegion,
) -> Result<IntervalUnion, GeometryError> {
    let eta_sq = crate::linalg::dot(eta, eta);
    if eta_sq <= 0.0 {
        return Err(GeometryError::ZeroDirection);
    }
    if !region.contains(y, 1e-9) {
        return Err(GeometryError::PointOutsideRegion);
    }
    let t_set = region.chord(y, eta);
    let z_obs = crate::linalg::dot(eta, y);
    // eta'(y + t eta) = z_obs + t * ||eta||^2
    Ok(t_set.affine(eta_sq, z_obs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_region_gives_whole_line() {
        let region = SelectionRegion::full(3);
        let got = truncation_set(&[0.0, 1.0, 2.0], &[1.0, 0.0, 0.0], &region).unwrap();
        assert_eq!(got, IntervalUnion::full());
    }

    #[test]
    fn single_halfspace_closed_form() {
        // a'y <= b with a'eta > 0: upper endpoint eta'y + ||eta||^2 (b - a'y)/(a'eta)
        let a = vec![vec![1.0, 2.0]];
        let b = vec![4.0];
        let region = SelectionRegion::from_polytope(Polytope::new(a, b, 2).unwrap());
        let y = [0.5, 1.0]; // a'y = 2.5 <= 4
        let eta = [2.0, 1.0]; // a'eta = 4 > 0
        let got = truncation_set(&y, &eta, &region).unwrap();
        let eta_sq = 5.0;
        let expect_hi = 2.0 + eta_sq * (4.0 - 2.5) / 4.0;
        let iv = got.intervals();
        assert_eq!(iv.len(), 1);
        assert_eq!(iv[0].0, f64::NEG_INFINITY);
        assert!((iv[0].1 - expect_hi).abs() < 1e-12);
    }

    #[test]
    fn abs_comparison_region_gives_two_rays() {
        // region {|y1| > |y2|} = {y1 >= y2, y1 >= -y2} U {-y1 >= y2, -y1 >= -y2}
        let pos = Polytope::new(vec![vec![-1.0, 1.0], vec![-1.0, -1.0]], vec![0.0, 0.0], 2).unwrap();
        let neg = Polytope::new(vec![vec![1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 0.0], 2).unwrap();
        let region = SelectionRegion::new(vec![pos, neg]);
        let y = [2.9, 2.5];
        let eta = [1.0, 0.0];
        let got = truncation_set(&y, &eta, &region).unwrap();
        let iv = got.intervals();
        assert_eq!(iv.len(), 2);
        assert_eq!(iv[0].0, f64::NEG_INFINITY);
        assert!((iv[0].1 - -2.5).abs() < 1e-12);
        assert!((iv[1].0 - 2.5).abs() < 1e-12);
        assert_eq!(iv[1].1, f64::INFINITY);
    }

    #[test]
    fn outside_point_is_an_error() {
        let p = Polytope::new(vec![vec![1.0]], vec![0.0], 1).unwrap();
        let region = SelectionRegion::from_polytope(p);
        assert!(matches!(
            truncation_set(&[1.0], &[1.0], &region),
            Err(GeometryError::PointOutsideRegion)
        ));
    }

    #[test]
    fn active_cols_ignores_padding() {
        // constraint only on first coordinate, embedded in R^4
        let p = Polytope::new(vec![vec![-1.0, 0.0, 0.0, 0.0]], vec![-3.0], 4).unwrap();
        assert!(p.contains(&[4.0, -99.0, 7.0, 0.1], 0.0));
        assert!(!p.contains(&[2.0, 0.0, 0.0, 0.0], 0.0));
    }
}
