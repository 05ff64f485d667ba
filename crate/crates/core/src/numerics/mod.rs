//! Numerical kernels shared by the estimation, simulation and prediction code.

mod brent;
mod bspline;
mod hermite;
mod kronrod;
mod stepfn;

pub use brent::{brent_root, DEFAULT_BRENT_TOL};
pub use bspline::BSplineBasis;
pub use hermite::{gauss_hermite, log_sum_exp, pseudo_adaptive_nodes, AdaptedGrid};
pub use kronrod::{gauss7_panel, gauss_kronrod_15, kronrod15_panel};
pub use stepfn::{product_integral, StepFunctionMatrix};

use crate::Real;

/// Kind of a one-dimensional quadrature rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Hermite,
    Kronrod15,
}

/// Nodes and positive weights of a one-dimensional rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
    pub kind: RuleKind,
}

impl<T: Real> QuadratureRule<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_i f(x_i)`.
    pub fn apply<F: FnMut(T) -> T>(&self, mut f: F) -> T {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}
