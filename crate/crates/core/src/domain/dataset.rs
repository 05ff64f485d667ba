use std::collections::HashMap;

use super::TransitionTopology;
use crate::{Error, Result};

/// Observed event history of one subject.
///
/// `times[r]` is the r-th observed time after entry and `states[r]` the state
/// occupied from then on; `delta[r]` flags a state change at `times[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectHistory {
    pub id: String,
    pub t_entry: f64,
    pub entry_state: usize,
    pub times: Vec<f64>,
    pub states: Vec<usize>,
    pub delta: Vec<bool>,
    /// Right-censoring time; `None` when follow-up ends in an absorbing state.
    pub censor_time: Option<f64>,
}

impl SubjectHistory {
    /// Builds a history from state-entry rows `(time, state)`: the first row is the
    /// entry, each state change is a transition and a trailing row repeating the
    /// current state marks censoring.
    pub fn from_entries(
        id: impl Into<String>,
        entries: &[(f64, usize)],
        topology: &TransitionTopology,
    ) -> Result<Self> {
        let id = id.into();
        let Some((&(t_entry, entry_state), rest)) = entries.split_first() else {
            return Err(Error::Validation(format!("subject {id}: empty history")));
        };
        let times = rest.iter().map(|e| e.0).collect();
        let states = rest.iter().map(|e| e.1).collect();
        Self::new(id, t_entry, entry_state, times, states, topology)
    }

    pub fn new(
        id: String,
        t_entry: f64,
        entry_state: usize,
        times: Vec<f64>,
        states: Vec<usize>,
        topology: &TransitionTopology,
    ) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::Dimension(format!("subject {id}: times/states length")));
        }
        if times.is_empty() {
            return Err(Error::Validation(format!(
                "subject {id}: history needs at least one time after entry"
            )));
        }
        if entry_state >= topology.n_states() {
            return Err(Error::Validation(format!("subject {id}: unknown state {entry_state}")));
        }
        if !t_entry.is_finite() || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Validation(format!("subject {id}: non-finite time")));
        }
        let mut prev_t = t_entry;
        let mut prev_s = entry_state;
        let mut delta = Vec::with_capacity(times.len());
        for (r, (&t, &s)) in times.iter().zip(&states).enumerate() {
            if !(t > prev_t) {
                return Err(Error::NonIncreasingTimes { id, t });
            }
            if s >= topology.n_states() {
                return Err(Error::Validation(format!("subject {id}: unknown state {s}")));
            }
            if topology.is_absorbing(prev_s) {
                return Err(Error::Validation(format!(
                    "subject {id}: record at {t} after absorption in state {prev_s}"
                )));
            }
            let moved = s != prev_s;
            if moved && topology.index_of(prev_s, s).is_none() {
                return Err(Error::TransitionNotAllowed { id, from: prev_s, to: s });
            }
            if !moved && r + 1 != times.len() {
                return Err(Error::Validation(format!(
                    "subject {id}: repeated state {s} at {t} before the last record"
                )));
            }
            delta.push(moved);
            prev_t = t;
            prev_s = s;
        }
        let last_state = *states.last().unwrap();
        let last_moved = *delta.last().unwrap();
        let censor_time = if topology.is_absorbing(last_state) {
            None
        } else if last_moved {
            return Err(Error::Validation(format!(
                "subject {id}: missing censoring record after entering state {last_state}"
            )));
        } else {
            Some(*times.last().unwrap())
        };
        Ok(Self { id, t_entry, entry_state, times, states, delta, censor_time })
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_state(&self) -> usize {
        *self.states.last().unwrap()
    }

    /// Sojourns `(state, t_start, t_stop, next_state_if_transition)`.
    pub fn sojourns(&self) -> Vec<(usize, f64, f64, Option<usize>)> {
        let mut out = Vec::with_capacity(self.times.len());
        let mut t0 = self.t_entry;
        let mut h = self.entry_state;
        for ((&t, &s), &d) in self.times.iter().zip(&self.states).zip(&self.delta) {
            out.push((h, t0, t, d.then_some(s)));
            t0 = t;
            h = s;
        }
        out
    }

    /// Recomputes transition indicators from the state sequence.
    pub fn recompute_delta(&self) -> Vec<bool> {
        let mut prev = self.entry_state;
        self.states
            .iter()
            .map(|&s| {
                let d = s != prev;
                prev = s;
                d
            })
            .collect()
    }
}

/// One marker measurement on the model scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalRecord {
    pub id: String,
    pub t: f64,
    pub y: f64,
    /// Values aligned with [`JointDataset::covariate_names`].
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub history: SubjectHistory,
    pub longitudinal: Vec<LongitudinalRecord>,
}

impl Subject {
    /// Time-fixed covariates used by the multi-state part (first record's values).
    pub fn baseline_covariates(&self) -> &[f64] {
        &self.longitudinal[0].covariates
    }
}

/// Validated joint data: subjects in order of first appearance in the histories.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDataset {
    pub topology: TransitionTopology,
    pub covariate_names: Vec<String>,
    pub subjects: Vec<Subject>,
}

impl JointDataset {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_observations(&self) -> usize {
        self.subjects.iter().map(|s| s.longitudinal.len()).sum()
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    pub fn require_covariates<'a, I: IntoIterator<Item = &'a str>>(&self, names: I) -> Result<()> {
        for n in names {
            self.covariate_index(n)?;
        }
        Ok(())
    }

    /// Observed-transition matrix: off-diagonal `(h,k)` counts direct transitions,
    /// the diagonal counts subjects censored in `h`.
    pub fn transition_counts(&self) -> Vec<Vec<usize>> {
        let m = self.topology.n_states();
        let mut u = vec![vec![0usize; m]; m];
        for s in &self.subjects {
            for (h, _, _, next) in s.history.sojourns() {
                match next {
                    Some(k) => u[h][k] += 1,
                    None => u[h][h] += 1,
                }
            }
        }
        u
    }

    /// A dataset restricted to (and ordered like) the given subject indices.
    pub fn subset(&self, indices: &[usize]) -> JointDataset {
        JointDataset {
            topology: self.topology.clone(),
            covariate_names: self.covariate_names.clone(),
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }
}

/// Checks every invariant linking marker records and event histories.
pub fn validate_dataset(
    longitudinal: Vec<LongitudinalRecord>,
    covariate_names: Vec<String>,
    histories: Vec<SubjectHistory>,
    topology: &TransitionTopology,
) -> Result<JointDataset> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut subjects = Vec::with_capacity(histories.len());
    for h in histories {
        if index.contains_key(&h.id) {
            return Err(Error::Validation(format!("duplicate history for subject {}", h.id)));
        }
        // re-run the history checks against this topology
        let h = SubjectHistory::new(
            h.id.clone(),
            h.t_entry,
            h.entry_state,
            h.times.clone(),
            h.states.clone(),
            topology,
        )?;
        index.insert(h.id.clone(), subjects.len());
        subjects.push(Subject { id: h.id.clone(), history: h, longitudinal: Vec::new() });
    }
    for rec in longitudinal {
        if rec.covariates.len() != covariate_names.len() {
            return Err(Error::Dimension(format!(
                "subject {}: {} covariate values for {} columns",
                rec.id,
                rec.covariates.len(),
                covariate_names.len()
            )));
        }
        if !rec.t.is_finite() || !rec.y.is_finite() || rec.covariates.iter().any(|c| !c.is_finite())
        {
            return Err(Error::Validation(format!("subject {}: non-finite marker record", rec.id)));
        }
        let Some(&i) = index.get(&rec.id) else {
            return Err(Error::Validation(format!(
                "longitudinal record for subject {} without event history",
                rec.id
            )));
        };
        let subj = &mut subjects[i];
        if let Some(prev) = subj.longitudinal.last() {
            if rec.t < prev.t {
                return Err(Error::NonIncreasingTimes { id: rec.id, t: rec.t });
            }
        }
        let last = subj.history.last_time();
        if rec.t > last {
            return Err(Error::LongitudinalAfterLastEvent { id: rec.id, t: rec.t, last });
        }
        subj.longitudinal.push(rec);
    }
    if let Some(s) = subjects.iter().find(|s| s.longitudinal.is_empty()) {
        return Err(Error::Validation(format!(
            "subject {} has no longitudinal records",
            s.id
        )));
    }
    Ok(JointDataset { topology: topology.clone(), covariate_names, subjects })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, t: f64) -> LongitudinalRecord {
        LongitudinalRecord { id: id.into(), t, y: 1.0, covariates: vec![0.5] }
    }

    #[test]
    fn simple_valid_subject() {
        let topo = TransitionTopology::illness_death();
        let h = SubjectHistory::from_entries("a", &[(0.0, 0), (2.0, 1), (5.0, 1)], &topo).unwrap();
        assert_eq!(h.times.len(), 2);
        assert_eq!(h.delta, vec![true, false]);
        assert_eq!(h.censor_time, Some(5.0));
        let ds =
            validate_dataset(vec![rec("a", 0.0), rec("a", 1.0)], vec!["X".into()], vec![h], &topo)
                .unwrap();
        assert_eq!(ds.n_subjects(), 1);
        assert_eq!(ds.transition_counts()[0][1], 1);
        assert_eq!(ds.transition_counts()[1][1], 1);
    }

    #[test]
    fn marker_after_censoring() {
        let topo = TransitionTopology::illness_death();
        let h = SubjectHistory::from_entries("a", &[(0.0, 0), (5.0, 0)], &topo).unwrap();
        let err = validate_dataset(vec![rec("a", 6.0)], vec!["X".into()], vec![h], &topo);
        let err = err.unwrap_err();
        assert!(matches!(err, Error::LongitudinalAfterLastEvent { .. }));
        assert!(err.to_string().contains("longitudinal time after last event time"));
    }

    #[test]
    fn disallowed_transition() {
        let topo = TransitionTopology::illness_death();
        let e = SubjectHistory::from_entries("a", &[(0.0, 0), (1.0, 2), (2.0, 1)], &topo);
        // 2 is absorbing, so anything after it is rejected
        assert!(e.is_err());
        let e = SubjectHistory::new("a".into(), 0.0, 2, vec![1.0], vec![1], &topo).unwrap_err();
        assert!(e.to_string().contains("after absorption"));
        let topo2 = TransitionTopology::new(3, vec![(0, 1), (0, 2), (1, 2), (2, 0)]).unwrap();
        let e = SubjectHistory::new("a".into(), 0.0, 2, vec![1.0, 2.0], vec![1, 1], &topo2);
        let e = e.unwrap_err();
        assert!(e.to_string().contains("transition not allowed"));
    }

    #[test]
    fn non_increasing_and_missing_censor() {
        let topo = TransitionTopology::illness_death();
        assert!(matches!(
            SubjectHistory::from_entries("a", &[(0.0, 0), (2.0, 1), (2.0, 2)], &topo),
            Err(Error::NonIncreasingTimes { .. })
        ));
        assert!(SubjectHistory::from_entries("a", &[(0.0, 0), (2.0, 1)], &topo).is_err());
        let absorbed = SubjectHistory::from_entries("a", &[(0.0, 0), (2.0, 2)], &topo).unwrap();
        assert_eq!(absorbed.censor_time, None);
    }

    #[test]
    fn subject_without_marker_rejected() {
        let topo = TransitionTopology::illness_death();
        let h = SubjectHistory::from_entries("a", &[(0.0, 0), (5.0, 0)], &topo).unwrap();
        assert!(validate_dataset(vec![], vec![], vec![h], &topo).is_err());
    }

    #[test]
    fn validation_is_idempotent_and_delta_recomputes() {
        let topo = TransitionTopology::illness_death();
        let h =
            SubjectHistory::from_entries("a", &[(0.0, 0), (2.0, 1), (4.0, 2)], &topo).unwrap();
        assert_eq!(h.recompute_delta(), h.delta);
        let ds = validate_dataset(vec![rec("a", 0.0)], vec!["X".into()], vec![h], &topo).unwrap();
        let again = validate_dataset(
            ds.subjects.iter().flat_map(|s| s.longitudinal.clone()).collect(),
            ds.covariate_names.clone(),
            ds.subjects.iter().map(|s| s.history.clone()).collect(),
            &topo,
        )
        .unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn unknown_covariate() {
        let topo = TransitionTopology::illness_death();
        let h = SubjectHistory::from_entries("a", &[(0.0, 0), (5.0, 0)], &topo).unwrap();
        let ds = validate_dataset(vec![rec("a", 0.0)], vec!["X".into()], vec![h], &topo).unwrap();
        assert!(matches!(ds.require_covariates(["Z"]), Err(Error::UnknownCovariate(_))));
    }
}
