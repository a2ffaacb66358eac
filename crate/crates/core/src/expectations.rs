//! Variational moments and the closed-form expectations every coordinate
//! update relies on: the expected residual `⟨‖y − A·x‖²⟩` for column-wise
//! independent `A` and independent `x`, and the weighted form
//! `⟨(y − a·x)ᴴ W (y − a·x)⟩` used by the innovation-precision update.

use num_complex::Complex64;

use crate::channel::Constellation;
use crate::error::{Error, Result};
use crate::numerics::{CVector, HermitianCov};

/// Mean and covariance of a complex Gaussian factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStat {
    pub mean: CVector,
    pub cov: HermitianCov,
}

impl GaussianStat {
    pub fn new(mean: CVector, cov: HermitianCov) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimMismatch(format!(
                "mean length {} vs covariance dim {}",
                mean.len(),
                cov.dim()
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn moments(&self) -> ColumnMoments<'_> {
        ColumnMoments {
            mean: &self.mean,
            cov_trace: self.cov.trace(),
        }
    }

    /// `⟨‖h‖²⟩ = ‖⟨h⟩‖² + Tr Σ`.
    pub fn second_moment(&self) -> f64 {
        self.mean.norm_squared() + self.cov.trace()
    }
}

/// Mean and covariance trace of one column; all the residual lemma needs.
#[derive(Debug, Clone, Copy)]
pub struct ColumnMoments<'a> {
    pub mean: &'a CVector,
    pub cov_trace: f64,
}

impl ColumnMoments<'_> {
    pub fn second_moment(&self) -> f64 {
        self.mean.norm_squared() + self.cov_trace
    }
}

/// Mean and variance of a real Gaussian factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarGaussianStat {
    pub mean: f64,
    pub var: f64,
}

impl ScalarGaussianStat {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !(var >= 0.0) || !mean.is_finite() {
            return Err(Error::Config(format!("invalid scalar Gaussian ({mean}, {var})")));
        }
        Ok(Self { mean, var })
    }

    pub fn point(mean: f64) -> Self {
        Self { mean, var: 0.0 }
    }

    pub fn second_moment(&self) -> f64 {
        self.mean * self.mean + self.var
    }
}

/// Gamma factor with shape and rate; its mean is `shape / rate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaStat {
    pub shape: f64,
    pub rate: f64,
}

impl GammaStat {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
            return Err(Error::Config(format!("invalid Gamma({shape}, {rate})")));
        }
        Ok(Self { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

/// Discrete posterior over the points of a constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolPmf {
    probs: Vec<f64>,
}

const PMF_TOL: f64 = 1e-12;

impl SymbolPmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > PMF_TOL {
            return Err(Error::Config(format!("not a pmf (sum {total})")));
        }
        Ok(Self { probs })
    }

    /// Normalizes unnormalized log-weights, subtracting the maximum first.
    pub fn from_log_weights(log_w: &[f64]) -> Result<Self> {
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Config("symbol log-weights are not finite".into()));
        }
        let mut probs: Vec<f64> = log_w.iter().map(|&w| (w - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        Ok(Self { probs })
    }

    pub fn prior(constellation: &Constellation) -> Self {
        Self {
            probs: constellation.priors().to_vec(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self, constellation: &Constellation) -> Complex64 {
        self.probs
            .iter()
            .zip(constellation.points())
            .map(|(&p, &a)| a * p)
            .sum()
    }

    /// `Σ_a q(a)·|a|²`.
    pub fn second_moment(&self, constellation: &Constellation) -> f64 {
        self.probs
            .iter()
            .zip(constellation.points())
            .map(|(&p, a)| p * a.norm_sqr())
            .sum()
    }

    /// `Σ_a q(a)·|a|² − |⟨x⟩|²`, floored at zero against round-off.
    pub fn variance(&self, constellation: &Constellation) -> f64 {
        (self.second_moment(constellation) - self.mean(constellation).norm_sqr()).max(0.0)
    }

    /// Index of the most probable point (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (idx, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = idx;
            }
        }
        best
    }
}

/// `⟨‖y − A·x‖²⟩` for independent columns of `A` (given by their means and
/// covariance traces) and independent entries of `x` with means `x_mean`
/// and variances `x_var`.
pub fn expected_residual_sq(
    y: &CVector,
    cols: &[ColumnMoments<'_>],
    x_mean: &[Complex64],
    x_var: &[f64],
) -> Result<f64> {
    if cols.len() != x_mean.len() || cols.len() != x_var.len() {
        return Err(Error::DimMismatch(format!(
            "{} columns, {} symbol means, {} symbol variances",
            cols.len(),
            x_mean.len(),
            x_var.len()
        )));
    }
    let mut residual = y.clone();
    let mut spread = 0.0;
    for ((col, &xm), &xv) in cols.iter().zip(x_mean).zip(x_var) {
        if col.mean.len() != y.len() {
            return Err(Error::DimMismatch(format!(
                "column length {} vs observation length {}",
                col.mean.len(),
                y.len()
            )));
        }
        residual.axpy(-xm, col.mean, Complex64::new(1.0, 0.0));
        // |x̄|²·Tr Σ_a + τ·Tr Σ_a + τ·‖ā‖²
        spread += xm.norm_sqr() * col.cov_trace + xv * col.cov_trace + xv * col.mean.norm_squared();
    }
    Ok(residual.norm_squared() + spread)
}

/// `⟨‖y − A·x‖²⟩` for a known `x`.
pub fn expected_residual_sq_det_x(
    y: &CVector,
    cols: &[ColumnMoments<'_>],
    x: &[Complex64],
) -> Result<f64> {
    let zeros = vec![0.0; x.len()];
    expected_residual_sq(y, cols, x, &zeros)
}

/// `⟨(y − a·x)ᴴ W (y − a·x)⟩` for independent Gaussian `y`, `a` and real
/// scalar `x`, with Hermitian weight `W`.
pub fn expected_weighted_quadratic(
    y: &GaussianStat,
    a: &GaussianStat,
    x: ScalarGaussianStat,
    weight: &HermitianCov,
) -> Result<f64> {
    let m = weight.dim();
    if y.dim() != m || a.dim() != m {
        return Err(Error::DimMismatch(format!(
            "weight dim {m}, y dim {}, a dim {}",
            y.dim(),
            a.dim()
        )));
    }
    let w = weight.matrix();
    let d = (w * a.cov.matrix()).trace().re;
    let diff = &y.mean - &a.mean * Complex64::from(x.mean);
    let quad = (diff.adjoint() * w * &diff)[(0, 0)].re;
    let y_spread = (w * y.cov.matrix()).trace().re;
    let a_quad = weight.quadratic_form(&a.mean);
    Ok(x.mean * x.mean * d + x.var * d + quad + y_spread + x.var * a_quad)
}

/// [`expected_weighted_quadratic`] with everything expressed in the
/// eigenbasis of the weight: `weight_diag` holds its eigenvalues, the means
/// are eigen-coordinates and `*_var_diag` are the diagonals of the
/// covariances rotated into that basis (off-diagonal entries do not enter).
pub fn expected_weighted_quadratic_diag(
    y_mean: &CVector,
    y_var_diag: &[f64],
    a_mean: &CVector,
    a_var_diag: &[f64],
    x: ScalarGaussianStat,
    weight_diag: &[f64],
) -> f64 {
    let mut total = 0.0;
    let xm = Complex64::from(x.mean);
    let x2 = x.second_moment();
    for k in 0..weight_diag.len() {
        let w = weight_diag[k];
        let diff = y_mean[k] - a_mean[k] * xm;
        total += w * (x2 * a_var_diag[k] + diff.norm_sqr() + y_var_diag[k] + x.var * a_mean[k].norm_sqr());
    }
    total
}

/// The rate increment as literally printed for the innovation precision,
/// where the two `τ`-weighted terms carry a scalar `Tr W` factor instead of
/// the weight matrix. Only for A/B comparison against the lemma.
pub fn expected_weighted_quadratic_diag_literal(
    y_mean: &CVector,
    y_var_diag: &[f64],
    a_mean: &CVector,
    a_var_diag: &[f64],
    x: ScalarGaussianStat,
    weight_diag: &[f64],
) -> f64 {
    let tr_w: f64 = weight_diag.iter().sum();
    let xm = Complex64::from(x.mean);
    let mut total = 0.0;
    let mut a_energy = 0.0;
    let mut a_trace = 0.0;
    for k in 0..weight_diag.len() {
        let w = weight_diag[k];
        let diff = y_mean[k] - a_mean[k] * xm;
        total += w * (diff.norm_sqr() + y_var_diag[k] + x.mean * x.mean * a_var_diag[k]);
        a_energy += a_mean[k].norm_sqr();
        a_trace += a_var_diag[k];
    }
    total + x.var * tr_w * (a_energy + a_trace)
}
