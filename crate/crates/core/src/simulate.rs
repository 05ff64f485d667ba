//! Joint longitudinal and multi-state data generated by intensity inversion.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    packed_from_d, validate_dataset, JointDataset, LongitudinalRecord, ModelSpec, Parameters,
    SubjectHistory, TransitionTopology,
};
use crate::likelihood::JointModel;
use crate::numerics::{brent_root, gauss_kronrod_15, BSplineBasis};
use crate::{Error, Result};

/// Root-finding tolerance for event-time inversion.
pub const INVERSION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum CovariateLaw {
    Normal { mean: f64, variance: f64 },
    Bernoulli { p: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum CensoringLaw {
    Uniform { lo: f64, hi: f64 },
    Fixed { time: f64 },
}

impl CensoringLaw {
    fn upper(&self) -> f64 {
        match *self {
            CensoringLaw::Uniform { hi, .. } => hi,
            CensoringLaw::Fixed { time } => time,
        }
    }
}

/// Boundary and internal knots of one baseline group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSpec {
    pub lower: f64,
    pub upper: f64,
    pub internal: Vec<f64>,
}

impl KnotSpec {
    pub fn basis(&self, degree: usize) -> Result<BSplineBasis<f64>> {
        BSplineBasis::new(degree, self.lower, self.upper, &self.internal)
    }
}

#[derive(Debug, Clone)]
pub struct SimulationDesign {
    pub topology: TransitionTopology,
    pub spec: ModelSpec,
    pub knots: Vec<KnotSpec>,
    pub truth: Parameters,
    pub covariates: Vec<(String, CovariateLaw)>,
    pub schedule: Vec<f64>,
    pub censoring: CensoringLaw,
    pub entry_state: usize,
    pub n_subjects: usize,
    pub seed: u64,
}

impl SimulationDesign {
    /// Three-state illness–death design with the published simulation truths.
    pub fn illness_death_reference(n_subjects: usize, seed: u64) -> Self {
        let topology = TransitionTopology::illness_death();
        let spec = ModelSpec::intercept_slope(&topology, "X");
        let d = nalgebra::DMatrix::from_row_slice(2, 2, &[0.349, -0.041, -0.041, 0.062]);
        let truth = Parameters {
            beta: vec![-0.793, 0.543, -0.096, 0.027],
            log_sigma: -0.737,
            d_cholesky: packed_from_d(&d).expect("positive definite"),
            gamma: vec![0.281, 0.023, -0.169],
            zeta: vec![],
            eta: vec![0.925, 1.344, 0.297, -1.096, 0.071, 0.009],
            spline_coefs: vec![
                vec![-9.200, -3.500, -5.000, -3.900, -3.500, -2.500, -2.000],
                vec![-9.860, -4.472, -5.128, -3.486, -2.457, -0.989, -0.715],
                vec![-2.527, -2.170, -2.492, -2.156, -1.228, -0.955, -0.161],
            ],
        };
        let knots = KnotSpec { lower: 0.004, upper: 18.201, internal: vec![4.120, 7.455, 10.908] };
        Self {
            topology,
            spec,
            knots: vec![knots; 3],
            truth,
            covariates: vec![("X".into(), CovariateLaw::Normal { mean: 2.04, variance: 0.5 })],
            schedule: (0..50).map(|j| j as f64 / 3.0).collect(),
            censoring: CensoringLaw::Uniform { lo: 1.0, hi: 25.0 },
            entry_state: 0,
            n_subjects,
            seed,
        }
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn model(&self) -> Result<JointModel> {
        let bases = self
            .knots
            .iter()
            .map(|k| k.basis(self.spec.spline.degree))
            .collect::<Result<Vec<_>>>()?;
        JointModel::new(self.spec.clone(), self.topology.clone(), self.covariate_names(), bases)
    }

    fn validate(&self) -> Result<()> {
        if self.schedule.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Validation("measurement schedule must be non-decreasing".into()));
        }
        match self.censoring {
            CensoringLaw::Uniform { lo, hi } if !(lo > 0.0 && hi >= lo) => {
                Err(Error::Validation("censoring support must be positive".into()))
            }
            CensoringLaw::Fixed { time } if time <= 0.0 => {
                Err(Error::Validation("censoring time must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One generated subject with its latent quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSubject {
    pub longitudinal: Vec<LongitudinalRecord>,
    pub history: SubjectHistory,
    pub b: Vec<f64>,
    pub covariates: Vec<f64>,
    pub censor_time: f64,
    /// `|Λ(T*) + log u|` for each generated transition time.
    pub inversion_residuals: Vec<f64>,
}

/// RNG for subject `index`: one ChaCha stream per subject.
pub fn subject_rng(seed: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `∫_a^b λ(u) du`, with Kronrod panels split at the spline knots.
fn cumulative<F: FnMut(f64) -> f64>(mut lam: F, a: f64, b: f64, breaks: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    let mut lo = a;
    for &k in breaks.iter().filter(|&&k| k > a && k < b) {
        total += gauss_kronrod_15(&mut lam, lo, k)?.0;
        lo = k;
    }
    total += gauss_kronrod_15(&mut lam, lo, b)?.0;
    Ok(total)
}

pub fn simulate_subject(
    design: &SimulationDesign,
    model: &JointModel,
    index: usize,
) -> Result<SimulatedSubject> {
    let mut rng = subject_rng(design.seed, index);
    let covs: Vec<f64> = design
        .covariates
        .iter()
        .map(|(_, law)| -> Result<f64> {
            Ok(match *law {
                CovariateLaw::Normal { mean, variance } => Normal::new(mean, variance.sqrt())
                    .map_err(|e| Error::Validation(e.to_string()))?
                    .sample(&mut rng),
                CovariateLaw::Bernoulli { p } => f64::from(u8::from(rng.random_bool(p))),
                CovariateLaw::Constant { value } => value,
            })
        })
        .collect::<Result<_>>()?;
    let q = model.q();
    let xi: Vec<f64> = (0..q).map(|_| StandardNormal.sample(&mut rng)).collect();
    let b = (design.truth.cholesky_factor(q) * DVector::from_column_slice(&xi)).as_slice().to_vec();
    let censor = match design.censoring {
        CensoringLaw::Uniform { lo, hi } => {
            Uniform::new_inclusive(lo, hi).map_err(|e| Error::Validation(e.to_string()))?.sample(&mut rng)
        }
        CensoringLaw::Fixed { time } => time,
    };
    let horizon = 2.0 * design.censoring.upper();
    let id = (index + 1).to_string();

    let mut entries = vec![(0.0, design.entry_state)];
    let mut residuals = Vec::new();
    let (mut t, mut h) = (0.0, design.entry_state);
    let mut censored = true;
    while !design.topology.is_absorbing(h) {
        let mut best: Option<(f64, usize)> = None;
        for &tr in design.topology.outgoing(h) {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let breaks = model.bases[model.layout.group_of[tr]].internal_knots().to_vec();
            let lam = |s: f64| model.log_intensity(&design.truth, tr, s, &b, &covs).exp();
            let f = |s: f64| cumulative(lam, t, s, &breaks).map_or(f64::NAN, |v| v + u.ln());
            let lo = t + 1e-10;
            if f(horizon) < 0.0 {
                continue;
            }
            let root = brent_root(f, lo, horizon, INVERSION_TOL)?;
            residuals.push(f(root).abs());
            if best.is_none_or(|(bt, _)| root < bt) {
                best = Some((root, design.topology.transition(tr).1));
            }
        }
        match best {
            Some((tn, k)) if tn <= censor => {
                entries.push((tn, k));
                t = tn;
                h = k;
            }
            _ => break,
        }
        if design.topology.is_absorbing(h) {
            censored = false;
        }
    }
    if censored {
        entries.push((censor, h));
    }
    let history = SubjectHistory::from_entries(&id, &entries, &design.topology)?;
    let first_time = history.times[0];
    let sigma = design.truth.sigma();
    let longitudinal = design
        .schedule
        .iter()
        .filter(|&&s| s <= first_time)
        .map(|&s| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            LongitudinalRecord {
                id: id.clone(),
                t: s,
                y: model.true_level(&design.truth, &b, s, &covs) + sigma * eps,
                covariates: covs.clone(),
            }
        })
        .collect();
    Ok(SimulatedSubject {
        longitudinal,
        history,
        b,
        covariates: covs,
        censor_time: censor,
        inversion_residuals: residuals,
    })
}

/// Design echo written next to simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub n_subjects: usize,
    pub seed: u64,
    pub parameter_names: Vec<String>,
    pub parameter_values: Vec<f64>,
    pub d_matrix: Vec<Vec<f64>>,
    pub knots: Vec<KnotSpec>,
    pub covariates: Vec<(String, CovariateLaw)>,
    pub schedule: Vec<f64>,
    pub censoring: CensoringLaw,
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: JointDataset,
    pub subjects: Vec<SimulatedSubject>,
    pub truth: TruthRecord,
}

impl SimulatedData {
    pub fn max_inversion_residual(&self) -> f64 {
        self.subjects
            .iter()
            .flat_map(|s| s.inversion_residuals.iter().copied())
            .fold(0.0, f64::max)
    }
}

pub fn simulate_dataset(design: &SimulationDesign) -> Result<SimulatedData> {
    design.validate()?;
    let model = design.model()?;
    let subjects: Vec<SimulatedSubject> = (0..design.n_subjects)
        .into_par_iter()
        .map(|i| simulate_subject(design, &model, i))
        .collect::<Result<_>>()?;
    let long = subjects.iter().flat_map(|s| s.longitudinal.iter().cloned()).collect();
    let hist = subjects.iter().map(|s| s.history.clone()).collect();
    let dataset = validate_dataset(long, design.covariate_names(), hist, &design.topology)?;
    let q = model.q();
    let d = design.truth.d_matrix(q);
    let pv = crate::domain::pack(&design.truth, &model.layout)?;
    Ok(SimulatedData {
        dataset,
        subjects,
        truth: TruthRecord {
            n_subjects: design.n_subjects,
            seed: design.seed,
            parameter_names: pv.names,
            parameter_values: pv.values,
            d_matrix: (0..q).map(|r| (0..q).map(|c| d[(r, c)]).collect()).collect(),
            knots: design.knots.clone(),
            covariates: design.covariates.clone(),
            schedule: design.schedule.clone(),
            censoring: design.censoring,
        },
    })
}
