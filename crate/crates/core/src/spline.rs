//! B-spline grids, basis evaluation and least-squares coefficient fitting.
//!
//! A [`SplineGrid`] with `G` intervals over `[lo, hi]` and degree `k` carries
//! `G + 2k + 1` uniformly spaced knots: the `G + 1` grid points plus `k`
//! extra knots on each side. It spans `G + k` basis functions whose sum is
//! exactly one on `[lo, hi]`. Points outside `[lo, hi]` are evaluated on the
//! extended knots (no clamping); beyond the outermost knots every basis
//! function is zero.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest supported B-spline degree. Basis evaluation uses fixed-size
/// scratch buffers of this length.
pub const MAX_SPLINE_ORDER: usize = 15;

/// Ridge term added to the normal equations when the design matrix is rank deficient.
pub const FIT_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineGrid {
    grid_size: usize,
    spline_order: usize,
    range_lo: f64,
    range_hi: f64,
    grid_eps: f64,
    knots: Vec<f64>,
}

impl SplineGrid {
    /// Uniform grid of `grid_size` intervals on `[lo, hi]`, degree `spline_order`.
    pub fn uniform(grid_size: usize, spline_order: usize, lo: f64, hi: f64) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::invalid("grid_size must be at least 1"));
        }
        if spline_order > MAX_SPLINE_ORDER {
            return Err(Error::invalid(format!(
                "spline_order {spline_order} exceeds the supported maximum {MAX_SPLINE_ORDER}"
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!(
                "grid range must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        let h = (hi - lo) / grid_size as f64;
        let k = spline_order as f64;
        let knots = (0..grid_size + 2 * spline_order + 1)
            .map(|i| lo + (i as f64 - k) * h)
            .collect();
        Ok(Self {
            grid_size,
            spline_order,
            range_lo: lo,
            range_hi: hi,
            grid_eps: 0.02,
            knots,
        })
    }

    /// Stores the adaptive/uniform blend factor. Grids are never refit, so the
    /// value is carried for configuration round-trips only.
    pub fn with_grid_eps(mut self, grid_eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&grid_eps) {
            return Err(Error::invalid(format!("grid_eps must lie in [0, 1], got {grid_eps}")));
        }
        self.grid_eps = grid_eps;
        Ok(self)
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn spline_order(&self) -> usize {
        self.spline_order
    }

    pub fn range(&self) -> (f64, f64) {
        (self.range_lo, self.range_hi)
    }

    pub fn grid_eps(&self) -> f64 {
        self.grid_eps
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Interior knot spacing `(hi - lo) / G`.
    pub fn spacing(&self) -> f64 {
        (self.range_hi - self.range_lo) / self.grid_size as f64
    }

    pub fn num_basis(&self) -> usize {
        self.grid_size + self.spline_order
    }

    /// The `G + 1` grid points `lo, lo + h, ..., hi`.
    pub fn grid_points(&self) -> Vec<f64> {
        self.knots[self.spline_order..=self.spline_order + self.grid_size].to_vec()
    }

    // Uniform knots continue past both ends of the stored vector; the local
    // recursion below reads those virtual knots only for basis functions that
    // do not exist, so their values never reach the output.
    fn knot(&self, i: isize) -> f64 {
        self.range_lo + (i - self.spline_order as isize) as f64 * self.spacing()
    }

    /// Knot span `j` with `knots[j] <= x < knots[j + 1]`, or `None` outside the knot vector.
    /// The last knot belongs to the last span, so a degree-0 basis covers `hi`.
    fn span(&self, x: f64) -> Option<usize> {
        let m = self.knots.len() - 1;
        let (first, last) = (self.knots[0], self.knots[m]);
        if x == last {
            return Some(m - 1);
        }
        if !(x >= first && x < last) {
            return None;
        }
        let mut j = (((x - first) / self.spacing()).floor() as usize).min(m - 1);
        while j > 0 && x < self.knots[j] {
            j -= 1;
        }
        while j + 1 < m && x >= self.knots[j + 1] {
            j += 1;
        }
        Some(j)
    }

    /// Non-zero basis values of the given degree at span `j`; entry `r`
    /// belongs to basis function `j - degree + r`.
    fn local_basis(&self, x: f64, j: usize, degree: usize, out: &mut [f64; MAX_SPLINE_ORDER + 1]) {
        let mut left = [0.0; MAX_SPLINE_ORDER + 1];
        let mut right = [0.0; MAX_SPLINE_ORDER + 1];
        out[0] = 1.0;
        let j = j as isize;
        for d in 1..=degree {
            left[d] = x - self.knot(j + 1 - d as isize);
            right[d] = self.knot(j + d as isize) - x;
            let mut saved = 0.0;
            for r in 0..d {
                let temp = out[r] / (right[r + 1] + left[d - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[d - r] * temp;
            }
            out[d] = saved;
        }
    }

    /// Writes all `G + k` basis values at `x` into `out`.
    pub fn basis_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.num_basis());
        out.iter_mut().for_each(|v| *v = 0.0);
        let Some(j) = self.span(x) else { return };
        let k = self.spline_order;
        let mut local = [0.0; MAX_SPLINE_ORDER + 1];
        self.local_basis(x, j, k, &mut local);
        for (r, &value) in local.iter().enumerate().take(k + 1) {
            let i = j as isize - k as isize + r as isize;
            if i >= 0 && (i as usize) < out.len() {
                out[i as usize] = value;
            }
        }
    }

    /// Basis values and their derivatives with respect to `x`.
    pub fn basis_and_derivative_into(&self, x: f64, out: &mut [f64], dout: &mut [f64]) {
        self.basis_into(x, out);
        debug_assert_eq!(dout.len(), self.num_basis());
        dout.iter_mut().for_each(|v| *v = 0.0);
        let k = self.spline_order;
        if k == 0 {
            return;
        }
        let Some(j) = self.span(x) else { return };
        let mut lower = [0.0; MAX_SPLINE_ORDER + 1];
        self.local_basis(x, j, k - 1, &mut lower);
        let kf = k as f64;
        for r in 0..=k {
            let i = j as isize - k as isize + r as isize;
            if i < 0 || i as usize >= dout.len() {
                continue;
            }
            let mut d = 0.0;
            if r >= 1 {
                d += kf * lower[r - 1] / (self.knot(i + k as isize) - self.knot(i));
            }
            if r < k {
                d -= kf * lower[r] / (self.knot(i + k as isize + 1) - self.knot(i + 1));
            }
            dout[i as usize] = d;
        }
    }

    pub fn basis(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.num_basis()];
        self.basis_into(x, &mut out);
        out
    }

    pub fn basis_derivative(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.num_basis()];
        let mut dout = vec![0.0; self.num_basis()];
        self.basis_and_derivative_into(x, &mut out, &mut dout);
        dout
    }

    /// Row-major `[xs.len() x (G + k)]` basis matrix.
    pub fn basis_matrix(&self, xs: &[f64]) -> Vec<f64> {
        let nb = self.num_basis();
        let mut out = vec![0.0; xs.len() * nb];
        for (row, &x) in out.chunks_exact_mut(nb).zip(xs) {
            self.basis_into(x, row);
        }
        out
    }

    /// `sum_i coeffs[i] * B_i(x)`.
    pub fn evaluate(&self, coeffs: &[f64], x: f64) -> f64 {
        debug_assert_eq!(coeffs.len(), self.num_basis());
        self.basis(x).iter().zip(coeffs).map(|(b, c)| b * c).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SplineFit {
    /// One coefficient vector of length `G + k` per target function.
    pub coeffs: Vec<Vec<f64>>,
    /// Sum of squared residuals over all targets and sample points.
    pub residual: f64,
    /// True when the design matrix was rank deficient and the ridge term was applied.
    pub regularized: bool,
}

/// Least-squares solver for a fixed set of sample points. The solve operator
/// is factored once and reused for any number of targets.
#[derive(Debug, Clone)]
pub struct SplineFitter {
    design: DMatrix<f64>,
    solve: DMatrix<f64>,
    regularized: bool,
}

impl SplineFitter {
    pub fn new(xs: &[f64], grid: &SplineGrid) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::invalid("spline fit needs at least one sample point"));
        }
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("spline fit sample points must be finite"));
        }
        let nb = grid.num_basis();
        let design = DMatrix::from_row_slice(xs.len(), nb, &grid.basis_matrix(xs));
        let svd = design.clone().svd(false, false);
        let max_sv = svd.singular_values.max();
        let tol = max_sv * xs.len().max(nb) as f64 * f64::EPSILON;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();

        let (solve, regularized) = if rank == nb {
            let solve = design
                .clone()
                .pseudo_inverse(tol)
                .map_err(|e| Error::Numeric(format!("spline fit pseudo-inverse failed: {e}")))?;
            (solve, false)
        } else {
            log::debug!("spline fit design matrix has rank {rank} < {nb}; applying ridge {FIT_RIDGE}");
            let gram = design.transpose() * &design + DMatrix::identity(nb, nb) * FIT_RIDGE;
            let chol = gram
                .cholesky()
                .ok_or_else(|| Error::Numeric("ridge-regularized normal equations are not positive definite".into()))?;
            (chol.solve(&design.transpose()), true)
        };
        Ok(Self {
            design,
            solve,
            regularized,
        })
    }

    pub fn regularized(&self) -> bool {
        self.regularized
    }

    /// Coefficients for a single target sampled at the fitter's points.
    pub fn fit_one(&self, ys: &[f64]) -> Result<Vec<f64>> {
        if ys.len() != self.design.nrows() {
            return Err(Error::invalid(format!(
                "expected {} target values, got {}",
                self.design.nrows(),
                ys.len()
            )));
        }
        let y = DVector::from_column_slice(ys);
        Ok((&self.solve * y).iter().copied().collect())
    }

    /// Writes the coefficients for `ys` into `out` without allocating.
    pub(crate) fn fit_into(&self, ys: &[f64], out: &mut [f64]) {
        debug_assert_eq!(ys.len(), self.solve.ncols());
        debug_assert_eq!(out.len(), self.solve.nrows());
        for (r, o) in out.iter_mut().enumerate() {
            *o = ys.iter().enumerate().map(|(c, y)| self.solve[(r, c)] * y).sum();
        }
    }

    pub fn fit(&self, ys: &[Vec<f64>]) -> Result<SplineFit> {
        let mut coeffs = Vec::with_capacity(ys.len());
        let mut residual = 0.0;
        for target in ys {
            let c = self.fit_one(target)?;
            let fitted = &self.design * DVector::from_column_slice(&c);
            residual += fitted
                .iter()
                .zip(target)
                .map(|(f, y)| (f - y).powi(2))
                .sum::<f64>();
            coeffs.push(c);
        }
        Ok(SplineFit {
            coeffs,
            residual,
            regularized: self.regularized,
        })
    }
}

/// Least-squares spline coefficients for each target in `ys`, where every
/// target holds one value per sample point in `xs`.
pub fn fit_spline_coeffs(xs: &[f64], ys: &[Vec<f64>], grid: &SplineGrid) -> Result<SplineFit> {
    SplineFitter::new(xs, grid)?.fit(ys)
}
