use std::fmt;

use serde::{Deserialize, Serialize};

use super::TransitionTopology;
use crate::{Error, Result};

/// How the shared random effects enter a transition intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DependenceForm {
    Level,
    Slope,
    Both,
    None,
}

impl DependenceForm {
    pub fn has_level(self) -> bool {
        matches!(self, Self::Level | Self::Both)
    }

    pub fn has_slope(self) -> bool {
        matches!(self, Self::Slope | Self::Both)
    }
}

/// Named function of time usable in design terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TimeBasisKind {
    /// `t`
    Identity,
    /// `(1 + t)^α − 1`
    F1 { alpha: f64 },
    /// `t^{1+ν} / (1 + t)^ν`
    F2 { nu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBasis {
    pub name: String,
    #[serde(flatten)]
    pub kind: TimeBasisKind,
}

impl TimeBasis {
    pub fn value(&self, t: f64) -> f64 {
        match self.kind {
            TimeBasisKind::Identity => t,
            TimeBasisKind::F1 { alpha } => (1.0 + t).powf(alpha) - 1.0,
            TimeBasisKind::F2 { nu } => t.powf(1.0 + nu) / (1.0 + t).powf(nu),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self.kind {
            TimeBasisKind::Identity => 1.0,
            TimeBasisKind::F1 { alpha } => alpha * (1.0 + t).powf(alpha - 1.0),
            TimeBasisKind::F2 { nu } => t.powf(nu) * (1.0 + nu + t) / (1.0 + t).powf(nu + 1.0),
        }
    }
}

/// One factor of a design term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Factor {
    Covariate(String),
    Basis(String),
    /// First derivative of a time basis, written `d(name)`.
    BasisDeriv(String),
}

/// Product of factors; the empty product is the intercept `1`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Term {
    pub factors: Vec<Factor>,
}

impl Term {
    /// Parses `1`, `X`, `time`, `time:X`, `d(f1):X`, resolving names against the
    /// available time bases.
    pub fn parse(expr: &str, bases: &[TimeBasis]) -> Result<Self> {
        let expr = expr.trim();
        if expr.is_empty() {
            return Err(Error::Spec("empty design term".into()));
        }
        let mut factors = Vec::new();
        for raw in expr.split(':') {
            let f = raw.trim();
            if f == "1" {
                continue;
            }
            if f.is_empty() {
                return Err(Error::Spec(format!("empty factor in `{expr}`")));
            }
            if let Some(inner) = f.strip_prefix("d(").and_then(|r| r.strip_suffix(')')) {
                if !bases.iter().any(|b| b.name == inner) {
                    return Err(Error::Spec(format!("`{inner}` in `{expr}` is not a time basis")));
                }
                factors.push(Factor::BasisDeriv(inner.to_string()));
            } else if bases.iter().any(|b| b.name == f) {
                factors.push(Factor::Basis(f.to_string()));
            } else {
                factors.push(Factor::Covariate(f.to_string()));
            }
        }
        let n_time = factors
            .iter()
            .filter(|f| !matches!(f, Factor::Covariate(_)))
            .count();
        if n_time > 1 {
            return Err(Error::Spec(format!("term `{expr}` has more than one time factor")));
        }
        Ok(Self { factors })
    }

    pub fn intercept() -> Self {
        Self::default()
    }

    pub fn is_time_varying(&self) -> bool {
        self.factors.iter().any(|f| !matches!(f, Factor::Covariate(_)))
    }

    pub fn covariates(&self) -> impl Iterator<Item = &str> {
        self.factors.iter().filter_map(|f| match f {
            Factor::Covariate(c) => Some(c.as_str()),
            _ => None,
        })
    }

    /// `∂/∂t` of this term, or `None` when it does not depend on time.
    pub fn derivative(&self) -> Option<Term> {
        let pos = self.factors.iter().position(|f| matches!(f, Factor::Basis(_)))?;
        let mut factors = self.factors.clone();
        if let Factor::Basis(name) = &self.factors[pos] {
            factors[pos] = Factor::BasisDeriv(name.clone());
        }
        Some(Term { factors })
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self
            .factors
            .iter()
            .map(|x| match x {
                Factor::Covariate(c) | Factor::Basis(c) => c.clone(),
                Factor::BasisDeriv(c) => format!("d({c})"),
            })
            .collect();
        write!(f, "{}", parts.join(":"))
    }
}

/// Time derivative of the fixed and random designs with the index maps of the
/// entries of β and b they multiply.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivDesign {
    pub fixed: Vec<Term>,
    pub ind_fixed: Vec<usize>,
    pub random: Vec<Term>,
    pub ind_random: Vec<usize>,
}

impl DerivDesign {
    /// Differentiates every time-varying term of the designs.
    pub fn automatic(fixed: &[Term], random: &[Term]) -> Self {
        let split = |terms: &[Term]| -> (Vec<Term>, Vec<usize>) {
            terms
                .iter()
                .enumerate()
                .filter_map(|(i, t)| t.derivative().map(|d| (d, i)))
                .unzip()
        };
        let (fixed_d, ind_fixed) = split(fixed);
        let (random_d, ind_random) = split(random);
        Self { fixed: fixed_d, ind_fixed, random: random_d, ind_random }
    }
}

/// One `γ` coefficient applied to a covariate on a set of transitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovariateEffect {
    pub covariate: String,
    /// 0-based transition indices sharing the coefficient.
    pub transitions: Vec<usize>,
}

/// Transitions sharing one spline baseline up to log-proportional offsets `ζ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaselineGroup {
    pub transitions: Vec<usize>,
    pub reference: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub degree: usize,
    pub internal_knots: usize,
}

impl Default for SplineSpec {
    fn default() -> Self {
        Self { degree: 3, internal_knots: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub gh_order: usize,
    /// 15 (Kronrod) or 7 (embedded Gauss).
    pub gk_order: usize,
    /// Equal-width panels per sojourn.
    pub gk_panels: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { gh_order: 9, gk_order: 15, gk_panels: 1 }
    }
}

/// Complete description of a joint model's structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub time_bases: Vec<TimeBasis>,
    pub fixed: Vec<Term>,
    pub random: Vec<Term>,
    pub deriv: Option<DerivDesign>,
    pub transition_covariates: Vec<CovariateEffect>,
    pub dependence: Vec<DependenceForm>,
    pub baseline_groups: Vec<BaselineGroup>,
    pub spline: SplineSpec,
    pub quadrature: QuadratureSpec,
}

impl ModelSpec {
    pub fn identity_basis() -> TimeBasis {
        TimeBasis { name: "time".into(), kind: TimeBasisKind::Identity }
    }

    /// The intercept–slope model with a covariate `X` on everything and `both`
    /// dependence on every transition of `topology`, one baseline per transition.
    pub fn intercept_slope(topology: &TransitionTopology, covariate: &str) -> Self {
        let bases = vec![Self::identity_basis()];
        let t = |e: &str| Term::parse(e, &bases).unwrap();
        let k = topology.n_transitions();
        let fixed = vec![
            t("1"),
            t(covariate),
            t("time"),
            t(&format!("time:{covariate}")),
        ];
        let random = vec![t("1"), t("time")];
        Self {
            deriv: Some(DerivDesign::automatic(&fixed, &random)),
            time_bases: bases.clone(),
            fixed,
            random,
            transition_covariates: (0..k)
                .map(|i| CovariateEffect { covariate: covariate.into(), transitions: vec![i] })
                .collect(),
            dependence: vec![DependenceForm::Both; k],
            baseline_groups: (0..k)
                .map(|i| BaselineGroup { transitions: vec![i], reference: i })
                .collect(),
            spline: SplineSpec::default(),
            quadrature: QuadratureSpec::default(),
        }
    }

    pub fn p(&self) -> usize {
        self.fixed.len()
    }

    pub fn q(&self) -> usize {
        self.random.len()
    }

    pub fn needs_slope(&self) -> bool {
        self.dependence.iter().any(|d| d.has_slope())
    }

    /// Baseline group of each transition.
    pub fn group_of(&self, n_transitions: usize) -> Vec<usize> {
        let mut g = vec![usize::MAX; n_transitions];
        for (gi, grp) in self.baseline_groups.iter().enumerate() {
            for &t in &grp.transitions {
                if t < n_transitions {
                    g[t] = gi;
                }
            }
        }
        g
    }

    /// Every covariate name referenced by any design.
    pub fn required_covariates(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |c: &str| {
            if !out.iter().any(|x| x == c) {
                out.push(c.to_string());
            }
        };
        for t in self.fixed.iter().chain(&self.random) {
            t.covariates().for_each(&mut push);
        }
        if let Some(d) = &self.deriv {
            for t in d.fixed.iter().chain(&d.random) {
                t.covariates().for_each(&mut push);
            }
        }
        for c in &self.transition_covariates {
            push(&c.covariate);
        }
        out
    }

    pub fn validate(&self, topology: &TransitionTopology) -> Result<()> {
        let k = topology.n_transitions();
        if self.fixed.is_empty() {
            return Err(Error::Spec("fixed design is empty".into()));
        }
        if self.dependence.len() != k {
            return Err(Error::Spec(format!(
                "{} dependence forms for {k} transitions",
                self.dependence.len()
            )));
        }
        if self.q() == 0 && self.dependence.iter().any(|d| *d != DependenceForm::None) {
            return Err(Error::Spec("dependence on the marker requires random effects".into()));
        }
        if self.needs_slope() {
            let Some(d) = &self.deriv else {
                return Err(Error::Spec("slope dependence requires a derivative design".into()));
            };
            if d.fixed.len() != d.ind_fixed.len() || d.random.len() != d.ind_random.len() {
                return Err(Error::Spec("derivative design and index maps differ in length".into()));
            }
            if d.ind_fixed.iter().any(|&i| i >= self.p()) || d.ind_random.iter().any(|&i| i >= self.q())
            {
                return Err(Error::Spec("derivative index map out of range".into()));
            }
        }
        for c in &self.transition_covariates {
            if c.transitions.is_empty() || c.transitions.iter().any(|&t| t >= k) {
                return Err(Error::Spec(format!(
                    "covariate effect `{}` names an invalid transition",
                    c.covariate
                )));
            }
        }
        let mut seen = vec![false; k];
        for g in &self.baseline_groups {
            if g.transitions.is_empty() {
                return Err(Error::Spec("empty baseline group".into()));
            }
            if !g.transitions.contains(&g.reference) {
                return Err(Error::Spec("baseline reference outside its group".into()));
            }
            for &t in &g.transitions {
                if t >= k || seen[t] {
                    return Err(Error::Spec(format!("transition {} in several baseline groups", t + 1)));
                }
                seen[t] = true;
            }
        }
        if let Some(t) = seen.iter().position(|s| !s) {
            return Err(Error::Spec(format!("transition {} has no baseline group", t + 1)));
        }
        if self.quadrature.gh_order == 0 {
            return Err(Error::Spec("gh_order must be >= 1".into()));
        }
        if !matches!(self.quadrature.gk_order, 7 | 15) || self.quadrature.gk_panels == 0 {
            return Err(Error::Spec("gk_order must be 7 or 15 with >= 1 panel".into()));
        }
        Ok(())
    }
}
