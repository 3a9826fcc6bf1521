use nalgebra::{DMatrix, DVector};
use statrs::function::beta::beta_reg;

use crate::error::{Result, ShapeError};

/// Covariance matrices with a larger condition number are refused.
pub const MAX_CONDITION: f64 = 1e12;

/// `(1/n) sum_j (x_j - c)(x_j - c)^T` over the rows of `x`.
pub fn covariance_about(x: &DMatrix<f64>, center: &DVector<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= center.transpose();
    }
    centered.transpose() * centered / n as f64
}

pub fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    x.row_mean().transpose()
}

/// `delta^T cov^{-1} delta`, refusing near-singular `cov`.
pub fn mahalanobis(delta: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let eig = cov.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(ShapeError::SingularCovariance { condition });
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or(ShapeError::SingularCovariance { condition })?;
    Ok(delta.dot(&chol.solve(delta)))
}

/// Two-sample Hotelling statistic
/// `nm/(n+m) (xbar - ybar)^T S^{-1} (xbar - ybar)` with the pooled
/// covariance `S = (n cov_x + m cov_y) / (n + m - 2)`.
///
/// Without `means` the covariances are centered at the column averages
/// (tangent means); otherwise at the supplied mean vectors, which also form
/// the difference.
pub fn hotelling_t2(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    means: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<f64> {
    let (n, m, d) = (x.nrows(), y.nrows(), x.ncols());
    if y.ncols() != d {
        return Err(ShapeError::DimensionMismatch {
            expected: d,
            found: y.ncols(),
        });
    }
    if n == 0 || m == 0 {
        return Err(ShapeError::EmptySample);
    }
    if n + m < d + 2 {
        return Err(ShapeError::InvalidArgument(format!(
            "n + m - 2 = {} is smaller than the dimension {d}",
            (n + m).saturating_sub(2)
        )));
    }
    let (xbar, ybar) = match means {
        Some((a, b)) => (a.clone(), b.clone()),
        None => (column_mean(x), column_mean(y)),
    };
    let (nf, mf) = (n as f64, m as f64);
    let pooled = (covariance_about(x, &xbar) * nf + covariance_about(y, &ybar) * mf) / (nf + mf - 2.0);
    let delta = xbar - ybar;
    if delta.norm() == 0.0 {
        return Ok(0.0);
    }
    Ok(nf * mf / (nf + mf) * mahalanobis(&delta, &pooled)?)
}

fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    beta_reg(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))
}

fn check_dof(d: usize, k: usize) -> Result<()> {
    if d == 0 || k < d {
        return Err(ShapeError::InvalidArgument(format!(
            "Hotelling T^2 needs k >= d >= 1, got d = {d}, k = {k}"
        )));
    }
    Ok(())
}

/// Distribution function of Hotelling's `T^2_{d,k}`.
pub fn t2_cdf(x: f64, d: usize, k: usize) -> Result<f64> {
    check_dof(d, k)?;
    let (df, kf) = (d as f64, k as f64);
    let scale = df * kf / (kf - df + 1.0);
    Ok(f_cdf(x / scale, df, kf - df + 1.0))
}

/// Quantile of `T^2_{d,k} = d k / (k - d + 1) F_{d, k-d+1}` at probability
/// `prob`, the F quantile found by bisection to absolute tolerance `1e-10`.
pub fn t2_quantile(d: usize, k: usize, prob: f64) -> Result<f64> {
    check_dof(d, k)?;
    if !(prob > 0.0 && prob < 1.0) {
        return Err(ShapeError::InvalidArgument(format!(
            "probability must lie in (0, 1), got {prob}"
        )));
    }
    let (df, kf) = (d as f64, k as f64);
    let d2 = kf - df + 1.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    while f_cdf(hi, df, d2) < prob {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(ShapeError::InvalidArgument("quantile out of range".into()));
        }
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if f_cdf(mid, df, d2) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(df * kf / d2 * 0.5 * (lo + hi))
}
