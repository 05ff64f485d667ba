//! Declarative run configuration (JSON) and its mapping onto the library types.
//!
//! Transitions are numbered from 1 in the order listed under `topology`;
//! states are numbered from 0.

use serde::{Deserialize, Serialize};

use crate::domain::{
    BaselineGroup, CovariateEffect, DependenceForm, DerivDesign, ModelSpec, Parameters, QuadratureSpec,
    SplineSpec, Term, TimeBasis, TimeBasisKind, TransitionTopology,
};
use crate::estimate::FitControl;
use crate::simulate::{CensoringLaw, CovariateLaw, KnotSpec, SimulationDesign};
use crate::transprob::BSource;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub n_states: usize,
    /// `[from, to]` pairs.
    pub transitions: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivConfig {
    pub fixed: Vec<String>,
    /// 1-based positions in the fixed design.
    pub ind_fixed: Vec<usize>,
    pub random: Vec<String>,
    pub ind_random: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DerivSetting {
    /// `"auto"`: differentiate the time-varying terms.
    Auto(String),
    Explicit(DerivConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateEffectConfig {
    pub covariate: String,
    pub transitions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineGroupConfig {
    pub transitions: Vec<usize>,
    pub reference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_bases")]
    pub time_bases: Vec<TimeBasis>,
    pub fixed: Vec<String>,
    pub random: Vec<String>,
    #[serde(default)]
    pub deriv: Option<DerivSetting>,
    #[serde(default)]
    pub transition_covariates: Vec<CovariateEffectConfig>,
    pub dependence: Vec<DependenceForm>,
    /// One group per transition when absent.
    #[serde(default)]
    pub baseline_groups: Option<Vec<BaselineGroupConfig>>,
    #[serde(default)]
    pub spline: SplineSpec,
    #[serde(default = "default_gk_order")]
    pub gk_order: usize,
    #[serde(default = "default_gk_panels")]
    pub gk_panels: usize,
}

fn default_bases() -> Vec<TimeBasis> {
    vec![ModelSpec::identity_basis()]
}

fn default_gk_order() -> usize {
    15
}

fn default_gk_panels() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateConfig {
    pub name: String,
    #[serde(flatten)]
    pub law: CovariateLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_subjects: usize,
    pub truth: Parameters,
    pub knots: Vec<KnotSpec>,
    pub covariates: Vec<CovariateConfig>,
    pub schedule: Vec<f64>,
    pub censoring: CensoringLaw,
    #[serde(default)]
    pub entry_state: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionConfig {
    #[serde(default)]
    pub s: f64,
    /// Evaluation times; an even grid up to the last follow-up time when empty.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default = "default_points")]
    pub n_points: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default)]
    pub b_source: BSource,
    #[serde(default)]
    pub individual: bool,
}

fn default_points() -> usize {
    50
}

fn default_grid_size() -> usize {
    1000
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            s: 0.0,
            times: Vec::new(),
            n_points: default_points(),
            grid_size: default_grid_size(),
            b_source: BSource::default(),
            individual: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub topology: TopologyConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub control: FitControl,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub prediction: PredictionConfig,
    /// Number of bins for observed-vs-predicted marker means.
    #[serde(default = "default_bins")]
    pub n_bins: usize,
}

fn default_bins() -> usize {
    10
}

fn one_based(i: usize, k: usize, what: &str) -> Result<usize> {
    if i == 0 || i > k {
        return Err(Error::Spec(format!("{what}: transition {i} outside 1..={k}")));
    }
    Ok(i - 1)
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Config = serde_json::from_str(text)?;
        c.model_spec()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn topology(&self) -> Result<TransitionTopology> {
        TransitionTopology::new(self.topology.n_states, self.topology.transitions.clone())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let topo = self.topology()?;
        let k = topo.n_transitions();
        let m = &self.model;
        let bases = &m.time_bases;
        let parse = |v: &[String]| v.iter().map(|e| Term::parse(e, bases)).collect::<Result<Vec<_>>>();
        let fixed = parse(&m.fixed)?;
        let random = parse(&m.random)?;
        let deriv = match &m.deriv {
            None => {
                let needs = m.dependence.iter().any(|d| d.has_slope());
                needs.then(|| DerivDesign::automatic(&fixed, &random))
            }
            Some(DerivSetting::Auto(s)) if s == "auto" => Some(DerivDesign::automatic(&fixed, &random)),
            Some(DerivSetting::Auto(s)) => {
                return Err(Error::Spec(format!("unknown derivative setting `{s}`")));
            }
            Some(DerivSetting::Explicit(d)) => {
                let idx = |v: &[usize], n: usize| {
                    v.iter()
                        .map(|&i| {
                            if i == 0 || i > n {
                                Err(Error::Spec(format!("derivative index {i} outside 1..={n}")))
                            } else {
                                Ok(i - 1)
                            }
                        })
                        .collect::<Result<Vec<_>>>()
                };
                Some(DerivDesign {
                    fixed: parse(&d.fixed)?,
                    ind_fixed: idx(&d.ind_fixed, fixed.len())?,
                    random: parse(&d.random)?,
                    ind_random: idx(&d.ind_random, random.len())?,
                })
            }
        };
        let transition_covariates = m
            .transition_covariates
            .iter()
            .map(|c| {
                Ok(CovariateEffect {
                    covariate: c.covariate.clone(),
                    transitions: c
                        .transitions
                        .iter()
                        .map(|&t| one_based(t, k, &c.covariate))
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let baseline_groups = match &m.baseline_groups {
            None => (0..k).map(|t| BaselineGroup { transitions: vec![t], reference: t }).collect(),
            Some(gs) => gs
                .iter()
                .map(|g| {
                    Ok(BaselineGroup {
                        transitions: g
                            .transitions
                            .iter()
                            .map(|&t| one_based(t, k, "baseline group"))
                            .collect::<Result<_>>()?,
                        reference: one_based(g.reference, k, "baseline reference")?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let spec = ModelSpec {
            time_bases: bases.clone(),
            fixed,
            random,
            deriv,
            transition_covariates,
            dependence: m.dependence.clone(),
            baseline_groups,
            spline: m.spline,
            quadrature: QuadratureSpec {
                gh_order: self.control.gh_order,
                gk_order: m.gk_order,
                gk_panels: m.gk_panels,
            },
        };
        spec.validate(&topo)?;
        Ok(spec)
    }

    pub fn simulation_design(&self) -> Result<SimulationDesign> {
        let sim = self
            .simulation
            .as_ref()
            .ok_or_else(|| Error::Validation("config has no `simulation` section".into()))?;
        Ok(SimulationDesign {
            topology: self.topology()?,
            spec: self.model_spec()?,
            knots: sim.knots.clone(),
            truth: sim.truth.clone(),
            covariates: sim.covariates.iter().map(|c| (c.name.clone(), c.law)).collect(),
            schedule: sim.schedule.clone(),
            censoring: sim.censoring,
            entry_state: sim.entry_state,
            n_subjects: sim.n_subjects,
            seed: self.seed,
        })
    }

    /// Configuration reproducing a simulation design and fitting the same model.
    pub fn from_design(design: &SimulationDesign) -> Self {
        let spec = &design.spec;
        let terms = |v: &[Term]| v.iter().map(|t| t.to_string()).collect::<Vec<_>>();
        let deriv = spec.deriv.as_ref().map(|d| {
            DerivSetting::Explicit(DerivConfig {
                fixed: terms(&d.fixed),
                ind_fixed: d.ind_fixed.iter().map(|i| i + 1).collect(),
                random: terms(&d.random),
                ind_random: d.ind_random.iter().map(|i| i + 1).collect(),
            })
        });
        Self {
            seed: design.seed,
            topology: TopologyConfig {
                n_states: design.topology.n_states(),
                transitions: design.topology.transitions().to_vec(),
            },
            model: ModelConfig {
                time_bases: spec.time_bases.clone(),
                fixed: terms(&spec.fixed),
                random: terms(&spec.random),
                deriv,
                transition_covariates: spec
                    .transition_covariates
                    .iter()
                    .map(|c| CovariateEffectConfig {
                        covariate: c.covariate.clone(),
                        transitions: c.transitions.iter().map(|t| t + 1).collect(),
                    })
                    .collect(),
                dependence: spec.dependence.clone(),
                baseline_groups: Some(
                    spec.baseline_groups
                        .iter()
                        .map(|g| BaselineGroupConfig {
                            transitions: g.transitions.iter().map(|t| t + 1).collect(),
                            reference: g.reference + 1,
                        })
                        .collect(),
                ),
                spline: spec.spline,
                gk_order: spec.quadrature.gk_order,
                gk_panels: spec.quadrature.gk_panels,
            },
            control: FitControl { gh_order: spec.quadrature.gh_order, ..FitControl::default() },
            simulation: Some(SimulationConfig {
                n_subjects: design.n_subjects,
                truth: design.truth.clone(),
                knots: design.knots.clone(),
                covariates: design
                    .covariates
                    .iter()
                    .map(|(n, l)| CovariateConfig { name: n.clone(), law: *l })
                    .collect(),
                schedule: design.schedule.clone(),
                censoring: design.censoring,
                entry_state: design.entry_state,
            }),
            prediction: PredictionConfig::default(),
            n_bins: default_bins(),
        }
    }
}

/// Time bases by name, for building specs by hand.
pub fn time_basis(name: &str, kind: TimeBasisKind) -> TimeBasis {
    TimeBasis { name: name.to_string(), kind }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "topology": {"n_states": 3, "transitions": [[0,1],[0,2],[1,2]]},
        "model": {
            "fixed": ["1", "X", "time", "time:X"],
            "random": ["1", "time"],
            "transition_covariates": [{"covariate": "X", "transitions": [1]},
                                      {"covariate": "X", "transitions": [2, 3]}],
            "dependence": ["both", "level", "none"],
            "baseline_groups": [{"transitions": [1], "reference": 1},
                                {"transitions": [2, 3], "reference": 2}]
        }
    }"#;

    #[test]
    fn minimal_config_maps_to_spec() {
        let c = Config::from_json(MINIMAL).unwrap();
        let spec = c.model_spec().unwrap();
        assert_eq!(spec.p(), 4);
        assert_eq!(spec.transition_covariates[1].transitions, vec![1, 2]);
        assert_eq!(spec.baseline_groups[1].reference, 1);
        let d = spec.deriv.unwrap();
        assert_eq!(d.ind_fixed, vec![2, 3]);
        assert_eq!(d.ind_random, vec![1]);
        assert_eq!(c.control.gh_order, 9);
    }

    #[test]
    fn transition_zero_is_rejected() {
        let bad = MINIMAL.replace(r#""transitions": [1]}"#, r#""transitions": [0]}"#);
        assert!(matches!(Config::from_json(&bad), Err(Error::Spec(_))));
    }

    #[test]
    fn reference_design_round_trips() {
        let design = SimulationDesign::illness_death_reference(100, 7);
        let c = Config::from_design(&design);
        let back = Config::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        let d2 = back.simulation_design().unwrap();
        assert_eq!(d2.spec, design.spec);
        assert_eq!(d2.truth, design.truth);
        assert_eq!(d2.seed, 7);
    }
}
