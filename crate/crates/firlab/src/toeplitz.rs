//! The X = L + S decomposition of a time-shifted design and the
//! multiplication-polynomial machinery for certifying operator norms.
//!
//! `L` stacks T shifted copies of the interior inputs `x_1 .. x_{N+1-T}`;
//! `S = X - L` is supported on two triangular corner blocks. The Gram
//! deviation `L^T L - (N+1-T) I` embeds into an infinite banded Toeplitz
//! operator whose norm equals the sup of a cosine polynomial, which a
//! finite grid plus a Lipschitz slack bounds rigorously from above.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::fir::DesignMatrix;

#[derive(Debug, Error)]
pub enum ToeplitzError {
    #[error("the corner decomposition needs N >= 2T-2, got N = {n}, T = {t}")]
    UnsupportedShape { n: usize, t: usize },

    #[error("grid must have at least 4T = {min} points, got {got}")]
    GridTooCoarse { min: usize, got: usize },
}

/// The exact additive split of a design matrix.
#[derive(Debug, Clone)]
pub struct ToeplitzSplit {
    /// Full-length shifted columns, `N x T`.
    pub l: DMatrix<f64>,
    /// `X - L`, supported on the two corner blocks.
    pub s: DMatrix<f64>,
    /// Lower-right `(T-1) x (T-1)` triangular corner of `S`.
    pub s_lower: DMatrix<f64>,
    /// Upper-left `(T-1) x (T-1)` triangular corner of `S`.
    pub s_upper: DMatrix<f64>,
    /// Interior inputs `x_1 .. x_{N+1-T}` shared by the columns of `L`.
    core: Vec<f64>,
    /// Corner inputs `x_{N+2-T} .. x_N`.
    lower_corner: Vec<f64>,
    /// Corner inputs `x_{2-T} .. x_0`.
    upper_corner: Vec<f64>,
    n: usize,
    t: usize,
}

impl ToeplitzSplit {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Number of interior rows, `N + 1 - T`.
    pub fn core_len(&self) -> usize {
        self.core.len()
    }

    pub fn lower_corner(&self) -> &[f64] {
        &self.lower_corner
    }

    pub fn upper_corner(&self) -> &[f64] {
        &self.upper_corner
    }
}

/// Splits `X = L + S`. Requires `N >= 2T - 2` so the two corners of `S`
/// occupy disjoint rows.
pub fn toeplitz_split(x: &DesignMatrix) -> Result<ToeplitzSplit, ToeplitzError> {
    let (n, t) = (x.rows(), x.cols());
    if t >= 2 && n < 2 * t - 2 {
        return Err(ToeplitzError::UnsupportedShape { n, t });
    }
    let inputs = x.input_sequence();
    // inputs[i] holds x_{i-T+2}; the interior block is x_1 .. x_{N+1-T}.
    let core: Vec<f64> = inputs[t - 1..n].to_vec();
    let lower_corner: Vec<f64> = inputs[n..n + t - 1].to_vec();
    let upper_corner: Vec<f64> = inputs[0..t - 1].to_vec();

    let mut l = DMatrix::zeros(n, t);
    for k in 0..t {
        for (i, &v) in core.iter().enumerate() {
            l[(k + i, k)] = v;
        }
    }
    let s = x.matrix() - &l;
    let corner = t.saturating_sub(1);
    let s_upper = s.view((0, 1), (corner, corner)).into_owned();
    let s_lower = s
        .view((n - corner, 0), (corner, corner))
        .into_owned();
    Ok(ToeplitzSplit {
        l,
        s,
        s_lower,
        s_upper,
        core,
        lower_corner,
        upper_corner,
        n,
        t,
    })
}

/// A certified upper bound on `|S|_inf` from the corner inputs alone.
///
/// Each triangular corner is a section of a banded Toeplitz operator, so
/// its norm is at most the sup of its symbol, itself at most the l1 norm
/// of the corner values. Note the l2 corner norm is NOT an upper bound:
/// the corner blocks repeat entries along diagonals, and e.g. [[1,0],[1,1]]
/// has operator norm (1+sqrt(5))/2 > sqrt(2).
pub fn corner_norm_bound(split: &ToeplitzSplit) -> f64 {
    let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    l1(&split.lower_corner) + l1(&split.upper_corner)
}

/// Coefficients of the multiplication polynomial of `L^T L - (N+1-T) I`:
/// `p(x) = c_0 + 2 sum_{l=1}^{T-1} c_l cos(2 pi l x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicationPolynomial {
    pub coefficients: Vec<f64>,
}

impl MultiplicationPolynomial {
    pub fn eval(&self, x: f64) -> f64 {
        let mut p = self.coefficients[0];
        for (l, &c) in self.coefficients.iter().enumerate().skip(1) {
            p += 2.0 * c * (2.0 * std::f64::consts::PI * l as f64 * x).cos();
        }
        p
    }

    /// Degree bound `T` (number of stored coefficients).
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

/// Builds the multiplication polynomial from the split:
/// `c_l = <L_1, L_{1+l}> - (N+1-T) 1{l=0}`.
pub fn mult_poly(split: &ToeplitzSplit) -> MultiplicationPolynomial {
    let core = &split.core;
    let m = core.len();
    let coefficients = (0..split.t)
        .map(|l| {
            let dot: f64 = core[..m - l].iter().zip(&core[l..]).map(|(a, b)| a * b).sum();
            if l == 0 {
                dot - m as f64
            } else {
                dot
            }
        })
        .collect();
    MultiplicationPolynomial { coefficients }
}

/// Grid size giving a comfortably small Lipschitz slack.
pub fn default_grid_points(t: usize) -> usize {
    (4 * t).max(1024)
}

/// Certified upper bound on `sup_{x in [0,1]} |p(x)|`: the max over a
/// uniform grid plus the slack `2 pi T^2 max_l |c_l| / grid_points`
/// derived from the 1-Lipschitz cosine.
pub fn sup_mult_poly(
    p: &MultiplicationPolynomial,
    grid_points: usize,
) -> Result<f64, ToeplitzError> {
    let t = p.len();
    if grid_points < 4 * t {
        return Err(ToeplitzError::GridTooCoarse {
            min: 4 * t,
            got: grid_points,
        });
    }
    let mut sup = 0.0f64;
    for g in 0..=grid_points {
        sup = sup.max(p.eval(g as f64 / grid_points as f64).abs());
    }
    let max_coef = p
        .coefficients
        .iter()
        .skip(1)
        .fold(0.0f64, |m, c| m.max(c.abs()));
    let slack = 2.0 * std::f64::consts::PI * (t * t) as f64 * max_coef / grid_points as f64;
    Ok(sup + slack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fir::build_design;
    use approx::assert_relative_eq;

    #[test]
    fn lag_one_split_has_zero_s() {
        let inputs: Vec<f64> = (1..=6).map(|i| i as f64).collect();
        let x = build_design(&inputs, 1, 6).unwrap();
        let split = toeplitz_split(&x).unwrap();
        assert_eq!(split.s, DMatrix::zeros(6, 1));
        assert_eq!(&split.l, x.matrix());
        assert_eq!(corner_norm_bound(&split), 0.0);
    }

    #[test]
    fn lag_two_corners_have_two_entries() {
        // Inputs x_0 .. x_4 at T = 2, N = 4.
        let inputs = [10.0, 1.0, 2.0, 3.0, 4.0];
        let x = build_design(&inputs, 2, 4).unwrap();
        let split = toeplitz_split(&x).unwrap();
        let nonzero: Vec<(usize, usize, f64)> = (0..4)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .filter(|&(i, j)| split.s[(i, j)] != 0.0)
            .map(|(i, j)| (i, j, split.s[(i, j)]))
            .collect();
        // x_0 in the top row, x_N in the bottom row.
        assert_eq!(nonzero, vec![(0, 1, 10.0), (3, 0, 4.0)]);
        assert_eq!(split.upper_corner(), &[10.0]);
        assert_eq!(split.lower_corner(), &[4.0]);
    }

    #[test]
    fn split_is_exact() {
        let inputs: Vec<f64> = (0..15).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let x = build_design(&inputs, 4, 12).unwrap();
        let split = toeplitz_split(&x).unwrap();
        let diff = x.matrix() - (&split.l + &split.s);
        assert_eq!(diff, DMatrix::zeros(12, 4));
    }

    #[test]
    fn shape_condition_is_enforced() {
        let x = build_design(&[1.0; 8], 4, 5).unwrap();
        assert!(matches!(
            toeplitz_split(&x),
            Err(ToeplitzError::UnsupportedShape { n: 5, t: 4 })
        ));
    }

    #[test]
    fn corner_bound_is_sum_of_absolute_values_at_lag_two() {
        let inputs = [-3.0, 1.0, 2.0, 3.0, 5.0];
        let x = build_design(&inputs, 2, 4).unwrap();
        let split = toeplitz_split(&x).unwrap();
        assert_relative_eq!(corner_norm_bound(&split), 8.0);
        // With 1x1 corners the operator norm is the larger entry.
        let op = crate::linalg::operator_norm(&split.s);
        assert_relative_eq!(op, 5.0, max_relative = 1e-12);
        assert!(op <= corner_norm_bound(&split));
    }

    #[test]
    fn constant_polynomial_at_lag_one() {
        let inputs = [1.0, 2.0, 2.0];
        let x = build_design(&inputs, 1, 3).unwrap();
        let split = toeplitz_split(&x).unwrap();
        let p = mult_poly(&split);
        // c_0 = sum x_i^2 - N = 9 - 3.
        assert_eq!(p.coefficients, vec![6.0]);
        assert_relative_eq!(sup_mult_poly(&p, 1024).unwrap(), 6.0);
    }

    #[test]
    fn pure_cosine_supremum() {
        let p = MultiplicationPolynomial {
            coefficients: vec![0.0, 1.0],
        };
        // sup |2 cos(2 pi x)| = 2, attained on the grid at x = 0.
        let sup = sup_mult_poly(&p, 1024).unwrap();
        assert!(sup >= 2.0);
        let slack = 2.0 * std::f64::consts::PI * 4.0 / 1024.0;
        assert!(sup <= 2.0 + slack + 1e-12);
    }

    #[test]
    fn coarse_grids_are_rejected() {
        let p = MultiplicationPolynomial {
            coefficients: vec![0.0; 300],
        };
        assert!(matches!(
            sup_mult_poly(&p, 1024),
            Err(ToeplitzError::GridTooCoarse { min: 1200, .. })
        ));
    }
}
