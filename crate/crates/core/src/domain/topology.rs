use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Finite state space and the allowed directed transitions between states.
///
/// Transitions are indexed `0..K` in the order given at construction; user-facing
/// numbering (CSV, config, reports) is `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TopologyRepr", into = "TopologyRepr")]
pub struct TransitionTopology {
    n_states: usize,
    transitions: Vec<(usize, usize)>,
    outgoing: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct TopologyRepr {
    n_states: usize,
    transitions: Vec<(usize, usize)>,
}

impl TryFrom<TopologyRepr> for TransitionTopology {
    type Error = Error;
    fn try_from(r: TopologyRepr) -> Result<Self> {
        TransitionTopology::new(r.n_states, r.transitions)
    }
}

impl From<TransitionTopology> for TopologyRepr {
    fn from(t: TransitionTopology) -> Self {
        TopologyRepr { n_states: t.n_states, transitions: t.transitions }
    }
}

impl TransitionTopology {
    pub fn new(n_states: usize, transitions: Vec<(usize, usize)>) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::Validation("topology needs at least one state".into()));
        }
        let mut outgoing = vec![Vec::new(); n_states];
        for (i, &(h, k)) in transitions.iter().enumerate() {
            if h >= n_states || k >= n_states {
                return Err(Error::Validation(format!(
                    "transition {h} -> {k} refers to a state outside 0..{n_states}"
                )));
            }
            if h == k {
                return Err(Error::Validation(format!("self-transition {h} -> {h}")));
            }
            if transitions[..i].contains(&(h, k)) {
                return Err(Error::Validation(format!("duplicate transition {h} -> {k}")));
            }
            outgoing[h].push(i);
        }
        Ok(Self { n_states, transitions, outgoing })
    }

    /// The three-state illness–death layout: 0→1, 0→2, 1→2.
    pub fn illness_death() -> Self {
        Self::new(3, vec![(0, 1), (0, 2), (1, 2)]).expect("valid topology")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_transitions(&self) -> usize {
        self.transitions.len()
    }

    pub fn transitions(&self) -> &[(usize, usize)] {
        &self.transitions
    }

    pub fn transition(&self, idx: usize) -> (usize, usize) {
        self.transitions[idx]
    }

    /// Transition indices leaving state `h`, in index order.
    pub fn outgoing(&self, h: usize) -> &[usize] {
        &self.outgoing[h]
    }

    pub fn index_of(&self, from: usize, to: usize) -> Option<usize> {
        self.transitions.iter().position(|&t| t == (from, to))
    }

    pub fn is_absorbing(&self, h: usize) -> bool {
        self.outgoing[h].is_empty()
    }

    pub fn absorbing_states(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&h| self.is_absorbing(h)).collect()
    }

    /// Label such as `0->1`.
    pub fn label(&self, idx: usize) -> String {
        let (h, k) = self.transitions[idx];
        format!("{h}->{k}")
    }

    /// States reachable from `h` in one or more steps, including `h`.
    pub fn reachable_from(&self, h: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n_states];
        let mut stack = vec![h];
        seen[h] = true;
        while let Some(s) = stack.pop() {
            for &i in &self.outgoing[s] {
                let k = self.transitions[i].1;
                if !seen[k] {
                    seen[k] = true;
                    stack.push(k);
                }
            }
        }
        (0..self.n_states).filter(|&s| seen[s]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn illness_death_layout() {
        let t = TransitionTopology::illness_death();
        assert_eq!(t.n_transitions(), 3);
        assert_eq!(t.outgoing(0), &[0, 1]);
        assert_eq!(t.outgoing(1), &[2]);
        assert_eq!(t.absorbing_states(), vec![2]);
        assert_eq!(t.index_of(1, 2), Some(2));
        assert_eq!(t.index_of(2, 1), None);
        assert_eq!(t.reachable_from(1), vec![1, 2]);
    }

    #[test]
    fn rejects_invalid() {
        assert!(TransitionTopology::new(2, vec![(0, 0)]).is_err());
        assert!(TransitionTopology::new(2, vec![(0, 2)]).is_err());
        assert!(TransitionTopology::new(2, vec![(0, 1), (0, 1)]).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let t = TransitionTopology::illness_death();
        let s = serde_json::to_string(&t).unwrap();
        let back: TransitionTopology = serde_json::from_str(&s).unwrap();
        assert_eq!(t, back);
        assert!(serde_json::from_str::<TransitionTopology>(
            r#"{"n_states":2,"transitions":[[0,0]]}"#
        )
        .is_err());
    }
}
