//! Evaluation of design terms against a dataset's covariate columns.

use crate::domain::{Factor, ModelSpec, Term, TimeBasis};
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct ResolvedTerm {
    covariates: Vec<usize>,
    /// Basis index and whether its derivative is taken.
    basis: Option<(usize, bool)>,
}

impl ResolvedTerm {
    fn new(term: &Term, bases: &[TimeBasis], covariate_names: &[String]) -> Result<Self> {
        let mut covariates = Vec::new();
        let mut basis = None;
        for f in &term.factors {
            match f {
                Factor::Covariate(c) => covariates.push(
                    covariate_names
                        .iter()
                        .position(|n| n == c)
                        .ok_or_else(|| Error::UnknownCovariate(c.clone()))?,
                ),
                Factor::Basis(b) | Factor::BasisDeriv(b) => {
                    let i = bases
                        .iter()
                        .position(|x| &x.name == b)
                        .ok_or_else(|| Error::Spec(format!("unknown time basis `{b}`")))?;
                    basis = Some((i, matches!(f, Factor::BasisDeriv(_))));
                }
            }
        }
        Ok(Self { covariates, basis })
    }

    fn eval(&self, t: f64, covs: &[f64], bases: &[TimeBasis]) -> f64 {
        let mut v: f64 = self.covariates.iter().map(|&i| covs[i]).product();
        if let Some((b, deriv)) = self.basis {
            v *= if deriv { bases[b].derivative(t) } else { bases[b].value(t) };
        }
        v
    }
}

/// Row builder for the fixed, random and derivative designs of a model.
#[derive(Debug, Clone)]
pub struct Designs {
    bases: Vec<TimeBasis>,
    fixed: Vec<ResolvedTerm>,
    random: Vec<ResolvedTerm>,
    deriv_fixed: Vec<(ResolvedTerm, usize)>,
    deriv_random: Vec<(ResolvedTerm, usize)>,
    pub p: usize,
    pub q: usize,
}

impl Designs {
    pub fn new(spec: &ModelSpec, covariate_names: &[String]) -> Result<Self> {
        let bases = spec.time_bases.clone();
        let resolve = |terms: &[Term]| -> Result<Vec<ResolvedTerm>> {
            terms.iter().map(|t| ResolvedTerm::new(t, &bases, covariate_names)).collect()
        };
        let fixed = resolve(&spec.fixed)?;
        let random = resolve(&spec.random)?;
        let (deriv_fixed, deriv_random) = match &spec.deriv {
            Some(d) => (
                resolve(&d.fixed)?.into_iter().zip(d.ind_fixed.iter().copied()).collect(),
                resolve(&d.random)?.into_iter().zip(d.ind_random.iter().copied()).collect(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        Ok(Self { bases, fixed, random, deriv_fixed, deriv_random, p: spec.p(), q: spec.q() })
    }

    /// `X^L(t)`.
    pub fn fixed_row(&self, t: f64, covs: &[f64], out: &mut [f64]) {
        for (o, term) in out.iter_mut().zip(&self.fixed) {
            *o = term.eval(t, covs, &self.bases);
        }
    }

    /// `Z(t)`.
    pub fn random_row(&self, t: f64, covs: &[f64], out: &mut [f64]) {
        for (o, term) in out.iter_mut().zip(&self.random) {
            *o = term.eval(t, covs, &self.bases);
        }
    }

    /// `∂X^L(t)/∂t`, scattered into a `p`-vector.
    pub fn deriv_fixed_row(&self, t: f64, covs: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (term, i) in &self.deriv_fixed {
            out[*i] = term.eval(t, covs, &self.bases);
        }
    }

    /// `∂Z(t)/∂t`, scattered into a `q`-vector.
    pub fn deriv_random_row(&self, t: f64, covs: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (term, i) in &self.deriv_random {
            out[*i] = term.eval(t, covs, &self.bases);
        }
    }
}
