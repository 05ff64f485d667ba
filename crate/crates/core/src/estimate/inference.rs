use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::domain::cholesky_from_packed;
use crate::{Error, Result};

/// Negative Hessian of `f` from central differences of its gradient `grad`,
/// step `max(1e-4, 1e-4·|θ_j|)` per coordinate, symmetrized.
pub fn observed_information<G>(grad: G, theta: &[f64]) -> Result<DMatrix<f64>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let n = theta.len();
    let cols: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let h = (1e-4 * theta[j].abs()).max(1e-4);
            let mut x = theta.to_vec();
            x[j] = theta[j] + h;
            let gp = grad(&x)?;
            x[j] = theta[j] - h;
            let gm = grad(&x)?;
            Ok(gp.iter().zip(&gm).map(|(a, b)| -(a - b) / (2.0 * h)).collect())
        })
        .collect();
    let mut info = DMatrix::zeros(n, n);
    for (j, c) in cols.into_iter().enumerate() {
        let c = c?;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("information column {}", j + 1)));
        }
        info.set_column(j, &DVector::from_vec(c));
    }
    Ok((&info + info.transpose()) * 0.5)
}

/// Inverse of a symmetric information matrix. When it is not positive
/// definite, eigenvalues are floored at `1e-8·λ_max` first and the second
/// return value is `true`.
pub fn invert_information(info: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if let Some(ch) = info.clone().cholesky() {
        let inv = ch.inverse();
        return ((&inv + inv.transpose()) * 0.5, false);
    }
    log::warn!("observed information is not positive definite; projecting");
    let eig = info.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax().max(1e-300);
    let vals = eig.eigenvalues.map(|l| 1.0 / l.max(1e-8 * top));
    let v = &eig.eigenvectors;
    let inv = v * DMatrix::from_diagonal(&vals) * v.transpose();
    ((&inv + inv.transpose()) * 0.5, true)
}

/// Two-sided normal p-value of `estimate / se`.
pub fn wald_p_value(estimate: f64, se: f64) -> f64 {
    if !(se > 0.0) || !se.is_finite() {
        return f64::NAN;
    }
    let z = estimate / se;
    ChiSquared::new(1.0).map_or(f64::NAN, |c| c.sf(z * z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// `(Lθ − c)ᵀ (L V Lᵀ)⁻¹ (Lθ − c)` against χ² with `rows(L)` degrees of freedom.
pub fn wald_test(
    theta: &[f64],
    vcov: &DMatrix<f64>,
    contrast: &DMatrix<f64>,
    null: &[f64],
) -> Result<WaldTest> {
    let n = theta.len();
    if contrast.ncols() != n || vcov.nrows() != n || vcov.ncols() != n {
        return Err(Error::Dimension(format!(
            "contrast has {} columns, vcov is {}x{}, {} parameters",
            contrast.ncols(),
            vcov.nrows(),
            vcov.ncols(),
            n
        )));
    }
    if null.len() != contrast.nrows() || contrast.nrows() == 0 {
        return Err(Error::Dimension("null vector must match the contrast rows".into()));
    }
    let diff = contrast * DVector::from_column_slice(theta) - DVector::from_column_slice(null);
    let m = contrast * vcov * contrast.transpose();
    let ch = m.cholesky().ok_or_else(|| Error::Singular("L vcov Lᵀ".into()))?;
    let statistic = diff.dot(&ch.solve(&diff));
    let dof = contrast.nrows();
    let chi = ChiSquared::new(dof as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(WaldTest { statistic, dof, p_value: chi.sf(statistic) })
}

/// Lower-triangle entries of D = LLᵀ (row-wise) and their Jacobian with respect
/// to the packed Cholesky parameters.
pub fn d_entries_jacobian(packed: &[f64], q: usize) -> (Vec<f64>, DMatrix<f64>) {
    let entries = |p: &[f64]| {
        let l = cholesky_from_packed(p, q);
        let d = &l * l.transpose();
        let mut out = Vec::with_capacity(p.len());
        for r in 0..q {
            for c in 0..=r {
                out.push(d[(r, c)]);
            }
        }
        out
    };
    let base = entries(packed);
    let m = packed.len();
    let mut jac = DMatrix::zeros(m, m);
    let mut x = packed.to_vec();
    for j in 0..m {
        let h = 1e-6 * packed[j].abs().max(1.0);
        x[j] = packed[j] + h;
        let fp = entries(&x);
        x[j] = packed[j] - h;
        let fm = entries(&x);
        x[j] = packed[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    (base, jac)
}
