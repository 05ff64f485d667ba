use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{QuadratureRule, RuleKind};
use crate::{Error, Real, Result};

/// Gauss–Hermite rule for `∫ f(x) e^{-x²} dx`.
///
/// Nodes come from the Golub–Welsch eigenproblem, are polished by Newton steps on
/// the orthonormal Hermite recurrence and weights use the Christoffel sum
/// `1 / Σ_k p_k(x)²`, which stays stable for large orders.
pub fn gauss_hermite<T: Real>(n: usize) -> Result<QuadratureRule<T>> {
    if n == 0 {
        return Err(Error::Validation("Gauss–Hermite order must be >= 1".into()));
    }
    let jacobi = DMatrix::<f64>::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut weights = vec![0.0; n];
    for (x, w) in nodes.iter_mut().zip(weights.iter_mut()) {
        for _ in 0..3 {
            let (pn, pn1, _) = orthonormal_hermite(n, *x);
            let dp = (2.0 * n as f64).sqrt() * pn1;
            if dp != 0.0 {
                *x -= pn / dp;
            }
        }
        *w = 1.0 / orthonormal_hermite(n, *x).2;
    }
    // exact symmetry
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadratureRule {
        nodes: nodes.into_iter().map(T::lit).collect(),
        weights: weights.into_iter().map(T::lit).collect(),
        kind: RuleKind::Hermite,
    })
}

/// Returns `(p_n(x), p_{n-1}(x), Σ_{k<n} p_k(x)²)` for the Hermite polynomials
/// orthonormal with respect to `e^{-x²}`.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64, f64) {
    let p0 = std::f64::consts::PI.powf(-0.25);
    let mut prev = 0.0;
    let mut cur = p0;
    let mut sumsq = 0.0;
    for k in 0..n {
        sumsq += cur * cur;
        let next = (2.0 / (k as f64 + 1.0)).sqrt() * x * cur
            - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev, sumsq)
}

/// Multivariate tensor-product Gauss–Hermite grid recentred at a mode.
///
/// Nodes are stored row-major (`n_nodes × dim`). Log-weights already include the
/// `exp(‖x‖²) 2^{q/2} det(scale)` factor, so `Σ exp(lw_j) g(b_j) ≈ ∫ g(b) db`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedGrid<T> {
    pub dim: usize,
    pub nodes: Vec<T>,
    pub log_weights: Vec<T>,
}

impl<T: Real> AdaptedGrid<T> {
    pub fn n_nodes(&self) -> usize {
        self.log_weights.len()
    }

    pub fn node(&self, j: usize) -> &[T] {
        &self.nodes[j * self.dim..(j + 1) * self.dim]
    }

    /// `log ∫ exp(log_g(b)) db` by log-sum-exp over the grid.
    pub fn log_integrate<F: FnMut(&[T]) -> T>(&self, mut log_g: F) -> T {
        let vals: Vec<T> = (0..self.n_nodes())
            .map(|j| self.log_weights[j] + log_g(self.node(j)))
            .collect();
        log_sum_exp(&vals)
    }
}

pub fn log_sum_exp<T: Real>(vals: &[T]) -> T {
    let m = vals.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    m + vals.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

/// Transforms a Gauss–Hermite rule into a `q`-dimensional grid centred at `mode`
/// with lower-triangular `scale`: `b = mode + √2 · scale · x`.
pub fn pseudo_adaptive_nodes<T: Real>(
    rule: &QuadratureRule<T>,
    mode: &DVector<T>,
    scale: &DMatrix<T>,
) -> Result<AdaptedGrid<T>> {
    let q = mode.len();
    if scale.nrows() != q || scale.ncols() != q {
        return Err(Error::Dimension(format!(
            "scale is {}x{}, mode has length {q}",
            scale.nrows(),
            scale.ncols()
        )));
    }
    for i in 0..q {
        for j in i + 1..q {
            if scale[(i, j)] != T::zero() {
                return Err(Error::Dimension("scale must be lower triangular".into()));
            }
        }
    }
    let mut log_det = T::zero();
    for i in 0..q {
        let d = scale[(i, i)];
        if d == T::zero() || !d.is_finite() {
            return Err(Error::Singular("pseudo-adaptive scale".into()));
        }
        log_det += d.abs().ln();
    }
    let n = rule.len();
    let total = n.pow(q as u32);
    let sqrt2 = T::SQRT_2();
    let base = T::lit(0.5 * q as f64) * T::LN_2() + log_det;
    let log_w1: Vec<T> = rule.weights.iter().map(|w| w.ln()).collect();

    let mut nodes = Vec::with_capacity(total * q);
    let mut log_weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; q];
    let mut x = vec![T::zero(); q];
    for _ in 0..total {
        let mut lw = base;
        for d in 0..q {
            x[d] = rule.nodes[idx[d]];
            lw += log_w1[idx[d]] + x[d] * x[d];
        }
        for r in 0..q {
            let mut v = mode[r];
            for c in 0..=r {
                v += sqrt2 * scale[(r, c)] * x[c];
            }
            nodes.push(v);
        }
        log_weights.push(lw);
        // odometer, last index fastest
        for d in (0..q).rev() {
            idx[d] += 1;
            if idx[d] < n {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(AdaptedGrid { dim: q, nodes, log_weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn moment(rule: &QuadratureRule<f64>, k: i32) -> f64 {
        rule.apply(|x| x.powi(k))
    }

    // ∫ x^k e^{-x²} dx = Γ((k+1)/2) for even k, 0 for odd k.
    fn exact_moment(k: i32) -> f64 {
        if k % 2 == 1 {
            return 0.0;
        }
        // Γ(m + 1/2) = (2m-1)!! / 2^m √π
        let m = k / 2;
        let mut v = PI.sqrt();
        for j in 0..m {
            v *= (2 * j + 1) as f64 / 2.0;
        }
        v
    }

    #[test]
    fn order_one_and_two() {
        let r1 = gauss_hermite::<f64>(1).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert!((r1.weights[0] - PI.sqrt()).abs() < 1e-14);
        let r2 = gauss_hermite::<f64>(2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((r2.nodes[0] + s).abs() < 1e-15 && (r2.nodes[1] - s).abs() < 1e-15);
        for w in &r2.weights {
            assert!((w - PI.sqrt() / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn fourth_moment_order_nine() {
        let r = gauss_hermite::<f64>(9).unwrap();
        assert!((moment(&r, 4) - 0.75 * PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for n in [1, 3, 9, 15, 30, 50] {
            let r = gauss_hermite::<f64>(n).unwrap();
            let s: f64 = r.weights.iter().sum();
            assert!((s - PI.sqrt()).abs() < 1e-12, "n={n}: {s}");
            assert!(r.weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn polynomial_exactness() {
        for n in [2, 3, 5, 9, 15] {
            let r = gauss_hermite::<f64>(n).unwrap();
            for k in 0..(2 * n as i32) {
                let e = exact_moment(k);
                let got = moment(&r, k);
                let mag: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| (w * x.powi(k)).abs()).sum();
                assert!(
                    (got - e).abs() <= 1e-10 * e.abs().max(1.0) + 1e-14 * mag,
                    "n={n} k={k}: {got} vs {e}"
                );
            }
        }
    }

    #[test]
    fn rejects_order_zero() {
        assert!(gauss_hermite::<f64>(0).is_err());
    }

    fn normal_log_density(b: &[f64], cov: &DMatrix<f64>) -> f64 {
        let q = b.len();
        let chol = cov.clone().cholesky().unwrap();
        let v = DVector::from_column_slice(b);
        let sol = chol.solve(&v);
        let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        -0.5 * (q as f64) * (2.0 * PI).ln() - 0.5 * logdet - 0.5 * v.dot(&sol)
    }

    #[test]
    fn adapted_rule_integrates_densities() {
        let rule = gauss_hermite::<f64>(9).unwrap();
        let id = DMatrix::identity(1, 1);
        let g = pseudo_adaptive_nodes(&rule, &DVector::zeros(1), &id).unwrap();
        let v = g.log_integrate(|b| normal_log_density(b, &id)).exp();
        assert!((v - 1.0).abs() < 1e-8);

        let g = pseudo_adaptive_nodes(&rule, &DVector::from_element(1, 3.0), &(id.clone() * 2.0))
            .unwrap();
        let v = g.log_integrate(|b| normal_log_density(&[b[0] - 3.0], &(&id * 4.0))).exp();
        assert!((v - 1.0).abs() < 1e-6, "{v}");

        let cov = DMatrix::from_row_slice(2, 2, &[0.35, -0.04, -0.04, 0.06]);
        let l = cov.clone().cholesky().unwrap().l();
        let g = pseudo_adaptive_nodes(&rule, &DVector::zeros(2), &l).unwrap();
        assert_eq!(g.n_nodes(), 81);
        let v = g.log_integrate(|b| normal_log_density(b, &cov)).exp();
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn singular_scale_rejected() {
        let rule = gauss_hermite::<f64>(3).unwrap();
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.0]);
        assert!(matches!(
            pseudo_adaptive_nodes(&rule, &DVector::zeros(2), &s),
            Err(Error::Singular(_))
        ));
    }
}
