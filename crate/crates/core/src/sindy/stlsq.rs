use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StlsqConfig {
    /// Applied to coefficients of the unit-RMS normalised columns.
    pub threshold: f64,
    pub iterations: usize,
    /// Ridge weight relative to the normalised Gram matrix `ΘᵀΘ / s`.
    pub ridge: f64,
}

impl Default for StlsqConfig {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            iterations: 10,
            ridge: 1e-6,
        }
    }
}

/// Fit diagnostics for one output dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationFit {
    pub active: usize,
    /// `‖Θξ − ẋ‖ / ‖ẋ‖` on the fitted data.
    pub relative_residual: f64,
    /// Set when the final active set was solved by minimum norm.
    pub rank_deficient: bool,
    pub iterations: usize,
    /// Active-set size after each thresholding round.
    pub active_history: Vec<usize>,
}

/// Sparse coefficients `Ξ`, `p × m`, with an explicit support mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Xi {
    pub values: Tensor,
    /// Row-major `p × m`; inactive entries of `values` are exactly zero.
    pub mask: Vec<bool>,
}

impl Xi {
    pub fn zeros(p: usize, m: usize) -> Self {
        Self {
            values: Tensor::zeros(p, m),
            mask: vec![false; p * m],
        }
    }

    pub fn is_active(&self, j: usize, k: usize) -> bool {
        self.mask[j * self.values.cols() + k]
    }

    pub fn coef(&self, j: usize, k: usize) -> f64 {
        self.values.get(j, k)
    }

    pub fn support(&self, k: usize) -> Vec<usize> {
        (0..self.values.rows())
            .filter(|&j| self.is_active(j, k))
            .collect()
    }

    /// Zeroes every coefficient outside the mask.
    pub fn enforce_mask(&mut self) {
        let m = self.values.cols();
        for (i, v) in self.values.data_mut().iter_mut().enumerate() {
            if !self.mask[i] {
                *v = 0.0;
            }
        }
        debug_assert_eq!(self.mask.len() % m.max(1), 0);
    }
}

/// Ridge-regularised least squares of `y` on the columns `cols` of `a`.
/// Returns coefficients and whether a singular direction had to be dropped.
fn solve_subset(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    cols: &[usize],
    ridge: f64,
) -> (Vec<f64>, bool) {
    let k = cols.len();
    if k == 0 {
        return (Vec::new(), false);
    }
    let s = a.nrows();
    let sub = a.select_columns(cols);
    // Reduce to the k × k triangular factor first; the SVD then runs on a tiny matrix.
    let qr = sub.qr();
    let r = qr.r();
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, k).into_owned();
    let svd = r.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let sig = &svd.singular_values;
    let smax = sig.max();
    let tol = smax * 1e-12 * (s.max(k) as f64);
    let lambda = ridge * s as f64;
    let utb = u.transpose() * rhs;
    let mut z = DVector::zeros(k);
    let mut deficient = false;
    for i in 0..k {
        if sig[i] > tol && sig[i] > 0.0 {
            z[i] = sig[i] * utb[i] / (sig[i] * sig[i] + lambda);
        } else {
            deficient = true;
        }
    }
    let coef = vt.transpose() * z;
    (coef.iter().copied().collect(), deficient)
}

fn relative_residual(a: &DMatrix<f64>, y: &DVector<f64>, cols: &[usize], coef: &[f64]) -> f64 {
    let mut r = -y.clone();
    for (&c, &w) in cols.iter().zip(coef) {
        r.axpy(w, &a.column(c), 1.0);
    }
    let ny = y.norm();
    if ny > 0.0 {
        r.norm() / ny
    } else {
        r.norm()
    }
}

/// Sequentially thresholded least squares.
///
/// Columns of `theta` are scaled to unit RMS, the threshold is applied to the
/// scaled coefficients and results are mapped back to the original scale.
/// Each output dimension is fitted independently.
pub fn stlsq(
    theta: &Tensor,
    xdot: &Tensor,
    config: &StlsqConfig,
) -> Result<(Xi, Vec<EquationFit>)> {
    if theta.rows() != xdot.rows() {
        return Err(Error::shape("stlsq rows", &[theta.rows()], &[xdot.rows()]));
    }
    if !(config.threshold >= 0.0) || !(config.ridge >= 0.0) {
        return Err(Error::Config(
            "threshold and ridge must be non-negative".into(),
        ));
    }
    if theta.rows() == 0 {
        return Err(Error::Domain("stlsq needs at least one sample".into()));
    }
    if !theta.all_finite() || !xdot.all_finite() {
        return Err(Error::Domain(
            "stlsq input contains non-finite values".into(),
        ));
    }
    let (s, p, m) = (theta.rows(), theta.cols(), xdot.cols());
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let rms = (theta.column(j).iter().map(|v| v * v).sum::<f64>() / s as f64).sqrt();
            if rms > 0.0 {
                rms
            } else {
                1.0
            }
        })
        .collect();
    let a = DMatrix::from_fn(s, p, |r, c| theta.get(r, c) / scale[c]);
    let mut xi = Xi::zeros(p, m);
    let mut fits = Vec::with_capacity(m);
    for k in 0..m {
        let y = DVector::from_iterator(s, xdot.column(k));
        let mut active: Vec<usize> = (0..p).collect();
        let (mut coef, mut deficient) = solve_subset(&a, &y, &active, config.ridge);
        let mut history = vec![active.len()];
        let mut iterations = 0;
        for _ in 0..config.iterations {
            iterations += 1;
            let keep: Vec<usize> = active
                .iter()
                .zip(&coef)
                .filter(|(_, c)| c.abs() >= config.threshold)
                .map(|(&j, _)| j)
                .collect();
            if keep.len() == active.len() {
                break;
            }
            active = keep;
            (coef, deficient) = solve_subset(&a, &y, &active, config.ridge);
            history.push(active.len());
        }
        let rel = relative_residual(&a, &y, &active, &coef);
        for (&j, &c) in active.iter().zip(&coef) {
            xi.values.set(j, k, c / scale[j]);
            xi.mask[j * m + k] = true;
        }
        fits.push(EquationFit {
            active: active.len(),
            relative_residual: rel,
            rank_deficient: deficient,
            iterations,
            active_history: history,
        });
    }
    xi.enforce_mask();
    Ok((xi, fits))
}

/// Plain least squares restricted to a fixed support, in original units.
pub fn least_squares_on_support(theta: &Tensor, y: &[f64], support: &[usize]) -> Vec<f64> {
    let a = DMatrix::from_fn(theta.rows(), theta.cols(), |r, c| theta.get(r, c));
    let y = DVector::from_column_slice(y);
    solve_subset(&a, &y, support, 0.0).0
}
