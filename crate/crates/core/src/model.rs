//! Discrete decision models: an actions × states utility table with a state
//! distribution, plus the edits that realize refinements.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on probability sums. Within it inputs are renormalized, beyond it
/// they are rejected.
pub const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model needs at least one action and one state (got {actions} actions, {states} states)")]
    Empty { actions: usize, states: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what}: entry {index} = {value} is not a probability")]
    ProbabilityRange {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{what} sum to {sum}, expected 1 (tolerance {PROB_TOL:e})")]
    ProbabilitySum { what: &'static str, sum: f64 },
    #[error("utilities: entry ({action}, {state}) is not finite")]
    NonFiniteUtility { action: usize, state: usize },
    #[error("{kind} index {index} out of range (size {len})")]
    Index {
        kind: &'static str,
        index: usize,
        len: usize,
    },
    #[error("duplicate {kind} label `{label}`")]
    DuplicateLabel { kind: &'static str, label: String },
    #[error("state split needs at least 2 sub-states, got {0}")]
    SplitTooSmall(usize),
    #[error("policy regions need a two-state model, this one has {0} states")]
    NotTwoState(usize),
}

/// Checks a probability vector and returns it renormalized to sum to one.
pub fn normalize_probabilities(what: &'static str, probs: &[f64]) -> Result<Vec<f64>, ModelError> {
    for (index, &value) in probs.iter().enumerate() {
        if !(value.is_finite() && (-PROB_TOL..=1.0 + PROB_TOL).contains(&value)) {
            return Err(ModelError::ProbabilityRange { what, index, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(ModelError::ProbabilitySum { what, sum });
    }
    let out = probs.iter().map(|p| p.max(0.0));
    if sum == 1.0 {
        Ok(out.collect())
    } else {
        Ok(out.map(|p| p / sum).collect())
    }
}

fn check_unique(kind: &'static str, labels: &[String]) -> Result<(), ModelError> {
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(ModelError::DuplicateLabel {
                kind,
                label: l.clone(),
            });
        }
    }
    Ok(())
}

/// Provenance of a model produced by conditioning its state variable on a new
/// parent variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub y_labels: Vec<String>,
    pub p_y: Vec<f64>,
    pub cpt: Vec<Vec<f64>>,
}

/// Actions × states utility matrix with a probability vector over states.
///
/// Immutable after construction; every edit returns a new model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionModel {
    actions: Vec<String>,
    states: Vec<String>,
    probabilities: Vec<f64>,
    utilities: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    conditioning: Option<Conditioning>,
}

/// Result of solving a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_action_eu: Vec<f64>,
    pub best_action: usize,
    pub value: f64,
}

/// Maximal interval of the swept probability over which one action is optimal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyRegion {
    pub lo: f64,
    pub hi: f64,
    pub action: usize,
}

/// Index of the maximum, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

impl DecisionModel {
    pub fn new(
        actions: Vec<String>,
        states: Vec<String>,
        probabilities: Vec<f64>,
        utilities: Vec<Vec<f64>>,
    ) -> Result<Self, ModelError> {
        let (m, n) = (actions.len(), states.len());
        if m == 0 || n == 0 {
            return Err(ModelError::Empty {
                actions: m,
                states: n,
            });
        }
        check_unique("action", &actions)?;
        check_unique("state", &states)?;
        if probabilities.len() != n {
            return Err(ModelError::Dimension {
                what: "probabilities",
                expected: n,
                got: probabilities.len(),
            });
        }
        if utilities.len() != m {
            return Err(ModelError::Dimension {
                what: "utilities rows",
                expected: m,
                got: utilities.len(),
            });
        }
        for (k, row) in utilities.iter().enumerate() {
            if row.len() != n {
                return Err(ModelError::Dimension {
                    what: "utilities columns",
                    expected: n,
                    got: row.len(),
                });
            }
            if let Some(i) = row.iter().position(|u| !u.is_finite()) {
                return Err(ModelError::NonFiniteUtility {
                    action: k,
                    state: i,
                });
            }
        }
        let probabilities = normalize_probabilities("probabilities", &probabilities)?;
        Ok(Self {
            actions,
            states,
            probabilities,
            utilities,
            conditioning: None,
        })
    }

    /// Builds a model from string slices, handy for fixtures and tests.
    pub fn from_parts(
        actions: &[&str],
        states: &[&str],
        probabilities: &[f64],
        utilities: &[&[f64]],
    ) -> Result<Self, ModelError> {
        Self::new(
            actions.iter().map(|s| s.to_string()).collect(),
            states.iter().map(|s| s.to_string()).collect(),
            probabilities.to_vec(),
            utilities.iter().map(|r| r.to_vec()).collect(),
        )
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn utilities(&self) -> &[Vec<f64>] {
        &self.utilities
    }

    pub fn utility(&self, action: usize, state: usize) -> f64 {
        self.utilities[action][state]
    }

    pub fn conditioning(&self) -> Option<&Conditioning> {
        self.conditioning.as_ref()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn action_index(&self, label: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == label)
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    fn check_action(&self, action: usize) -> Result<(), ModelError> {
        if action >= self.num_actions() {
            return Err(ModelError::Index {
                kind: "action",
                index: action,
                len: self.num_actions(),
            });
        }
        Ok(())
    }

    fn check_state(&self, state: usize) -> Result<(), ModelError> {
        if state >= self.num_states() {
            return Err(ModelError::Index {
                kind: "state",
                index: state,
                len: self.num_states(),
            });
        }
        Ok(())
    }

    /// Same actions, states and utilities under a different state distribution.
    pub fn with_probabilities(&self, probabilities: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(
            self.actions.clone(),
            self.states.clone(),
            probabilities,
            self.utilities.clone(),
        )
    }

    /// Same shape with a replaced utility table.
    pub fn with_utilities(&self, utilities: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        Self::new(
            self.actions.clone(),
            self.states.clone(),
            self.probabilities.clone(),
            utilities,
        )
    }

    /// Σ_i p(x_i) v(a, x_i)
    pub fn expected_utility(&self, action: usize) -> Result<f64, ModelError> {
        self.check_action(action)?;
        Ok(dot(&self.probabilities, &self.utilities[action]))
    }

    pub fn evaluate(&self) -> Evaluation {
        let per_action_eu: Vec<f64> = self
            .utilities
            .iter()
            .map(|row| dot(&self.probabilities, row))
            .collect();
        let best_action = argmax(&per_action_eu);
        let value = per_action_eu[best_action];
        Evaluation {
            per_action_eu,
            best_action,
            value,
        }
    }

    /// Expected value of perfect information about the state.
    pub fn evpi(&self) -> f64 {
        let clairvoyant: f64 = (0..self.num_states())
            .map(|i| {
                let best = self
                    .utilities
                    .iter()
                    .map(|row| row[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                self.probabilities[i] * best
            })
            .sum();
        (clairvoyant - self.evaluate().value).max(0.0)
    }

    /// Partition of [0, 1] by optimal action as the probability of `state`
    /// sweeps over it (the other state gets the complement). A crossing point
    /// belongs to the lower-indexed of the two adjacent actions.
    pub fn policy_regions(&self, state: usize) -> Result<Vec<PolicyRegion>, ModelError> {
        if self.num_states() != 2 {
            return Err(ModelError::NotTwoState(self.num_states()));
        }
        self.check_state(state)?;
        let other = 1 - state;
        // μ_k(π) = v_other + (v_state − v_other)·π
        let lines: Vec<(f64, f64)> = self
            .utilities
            .iter()
            .map(|row| (row[other], row[state] - row[other]))
            .collect();
        let mut cuts = vec![0.0, 1.0];
        for (j, &(cj, wj)) in lines.iter().enumerate() {
            for &(ck, wk) in &lines[j + 1..] {
                if wj != wk {
                    let x = (ck - cj) / (wj - wk);
                    if x > 0.0 && x < 1.0 {
                        cuts.push(x);
                    }
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

        let mut regions: Vec<PolicyRegion> = Vec::new();
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let values: Vec<f64> = lines.iter().map(|&(c, s)| c + s * mid).collect();
            let action = argmax(&values);
            match regions.last_mut() {
                Some(last) if last.action == action => last.hi = w[1],
                _ => regions.push(PolicyRegion {
                    lo: w[0],
                    hi: w[1],
                    action,
                }),
            }
        }
        Ok(regions)
    }

    /// Replaces `state` by finer sub-states. `new_utilities` has one row per
    /// action and one column per sub-state.
    pub fn split_state(
        &self,
        state: usize,
        sublabels: &[String],
        conditional_probs: &[f64],
        new_utilities: &[Vec<f64>],
    ) -> Result<Self, ModelError> {
        self.check_state(state)?;
        let s = sublabels.len();
        if s < 2 {
            return Err(ModelError::SplitTooSmall(s));
        }
        if conditional_probs.len() != s {
            return Err(ModelError::Dimension {
                what: "conditional_probs",
                expected: s,
                got: conditional_probs.len(),
            });
        }
        let cond = normalize_probabilities("conditional_probs", conditional_probs)?;
        if new_utilities.len() != self.num_actions() {
            return Err(ModelError::Dimension {
                what: "sub-state utility rows",
                expected: self.num_actions(),
                got: new_utilities.len(),
            });
        }
        if let Some(row) = new_utilities.iter().find(|r| r.len() != s) {
            return Err(ModelError::Dimension {
                what: "sub-state utility columns",
                expected: s,
                got: row.len(),
            });
        }

        let parent = self.probabilities[state];
        let splice = |v: &[f64], mid: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity(v.len() - 1 + mid.len());
            out.extend_from_slice(&v[..state]);
            out.extend_from_slice(mid);
            out.extend_from_slice(&v[state + 1..]);
            out
        };
        let mut states = self.states[..state].to_vec();
        states.extend(sublabels.iter().cloned());
        states.extend_from_slice(&self.states[state + 1..]);
        let sub_probs: Vec<f64> = cond.iter().map(|q| parent * q).collect();
        let probabilities = splice(&self.probabilities, &sub_probs);
        let utilities = self
            .utilities
            .iter()
            .zip(new_utilities)
            .map(|(row, sub)| splice(row, sub))
            .collect();
        Self::new(self.actions.clone(), states, probabilities, utilities)
    }

    /// Appends a new action with the given utility row.
    pub fn add_action(&self, label: &str, utilities: &[f64]) -> Result<Self, ModelError> {
        if utilities.len() != self.num_states() {
            return Err(ModelError::Dimension {
                what: "new action utilities",
                expected: self.num_states(),
                got: utilities.len(),
            });
        }
        let mut actions = self.actions.clone();
        actions.push(label.to_string());
        let mut table = self.utilities.clone();
        table.push(utilities.to_vec());
        Self::new(actions, self.states.clone(), self.probabilities.clone(), table)
    }

    /// Conditions the state variable on a new parent `Y`; the state
    /// distribution becomes the marginal Σ_y p(y) p(x | y).
    pub fn condition_on(
        &self,
        y_labels: &[String],
        p_y: &[f64],
        cpt: &[Vec<f64>],
    ) -> Result<Self, ModelError> {
        let marginal = marginalize(self.num_states(), y_labels.len(), p_y, cpt)?;
        let mut out = self.with_probabilities(marginal)?;
        out.conditioning = Some(Conditioning {
            y_labels: y_labels.to_vec(),
            p_y: p_y.to_vec(),
            cpt: cpt.to_vec(),
        });
        Ok(out)
    }
}

/// Σ_y p(y)·cpt[y] after validating both distributions.
pub(crate) fn marginalize(
    n: usize,
    ny: usize,
    p_y: &[f64],
    cpt: &[Vec<f64>],
) -> Result<Vec<f64>, ModelError> {
    if p_y.len() != ny {
        return Err(ModelError::Dimension {
            what: "p_y",
            expected: ny,
            got: p_y.len(),
        });
    }
    if cpt.len() != ny {
        return Err(ModelError::Dimension {
            what: "cpt rows",
            expected: ny,
            got: cpt.len(),
        });
    }
    let p_y = normalize_probabilities("p_y", p_y)?;
    let mut marginal = vec![0.0; n];
    for (py, row) in p_y.iter().zip(cpt) {
        if row.len() != n {
            return Err(ModelError::Dimension {
                what: "cpt columns",
                expected: n,
                got: row.len(),
            });
        }
        let row = normalize_probabilities("cpt row", row)?;
        for (m, r) in marginal.iter_mut().zip(&row) {
            *m += py * r;
        }
    }
    Ok(marginal)
}

pub(crate) fn dot(p: &[f64], u: &[f64]) -> f64 {
    p.iter().zip(u).map(|(a, b)| a * b).sum()
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn party_expected_utilities() {
        let m = party2();
        assert!((m.expected_utility(0).unwrap() - 0.60).abs() < 1e-12);
        assert!((m.expected_utility(1).unwrap() - 0.61).abs() < 1e-12);
        assert!(matches!(
            m.expected_utility(2),
            Err(ModelError::Index { .. })
        ));
        let zero = m.with_utilities(vec![vec![0.0; 2]; 2]).unwrap();
        assert_eq!(zero.expected_utility(1).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_examples() {
        let e = party2().evaluate();
        assert_eq!(e.best_action, 1);
        assert!((e.value - 0.61).abs() < 1e-12);

        let e = party3().evaluate();
        assert_eq!(e.best_action, 0);
        assert!((e.value - 0.62).abs() < 1e-12);

        let single = DecisionModel::from_parts(&["Only"], &["a", "b"], &[0.3, 0.7], &[&[2.0, 1.0]])
            .unwrap();
        let e = single.evaluate();
        assert_eq!(e.best_action, 0);
        assert!((e.value - 1.3).abs() < 1e-12);
    }

    #[test]
    fn evpi_by_enumeration() {
        assert!((party2().evpi() - 0.258).abs() < 1e-12);
        assert!((party3().evpi() - 0.248).abs() < 1e-12);
        let dominated = DecisionModel::from_parts(
            &["a", "b"],
            &["x", "y"],
            &[0.5, 0.5],
            &[&[1.0, 2.0], &[0.5, 1.0]],
        )
        .unwrap();
        assert_eq!(dominated.evpi(), 0.0);
    }

    #[test]
    fn policy_regions_party() {
        let r = party2().policy_regions(0).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].action, 0);
        assert_eq!(r[1].action, 1);
        assert!((r[0].hi - 43.0 / 110.0).abs() < 1e-12);
        assert_eq!(r[0].lo, 0.0);
        assert_eq!(r[1].hi, 1.0);

        let same = DecisionModel::from_parts(
            &["a", "b"],
            &["x", "y"],
            &[0.5, 0.5],
            &[&[0.3, 0.6], &[0.3, 0.6]],
        )
        .unwrap();
        let r = same.policy_regions(0).unwrap();
        assert_eq!(r, vec![PolicyRegion { lo: 0.0, hi: 1.0, action: 0 }]);

        let sym = DecisionModel::from_parts(
            &["a", "b"],
            &["x", "y"],
            &[0.5, 0.5],
            &[&[0.0, 1.0], &[1.0, 0.0]],
        )
        .unwrap();
        let r = sym.policy_regions(0).unwrap();
        assert!((r[0].hi - 0.5).abs() < 1e-15);

        assert!(matches!(
            party3().policy_regions(0),
            Err(ModelError::NotTwoState(3))
        ));
    }

    #[test]
    fn split_rain_gives_three_state_model() {
        let m = party2()
            .split_state(
                0,
                &labels(&["Downpour", "Drizzle"]),
                &[0.5, 0.5],
                &[vec![0.0, 0.10], vec![0.72, 0.62]],
            )
            .unwrap();
        let p3 = party3();
        for (a, b) in m.probabilities().iter().zip(p3.probabilities()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(m.states(), p3.states());
        assert!((m.evaluate().value - 0.62).abs() < 1e-12);
    }

    #[test]
    fn split_without_new_information() {
        let m = party2();
        let s = m
            .split_state(0, &labels(&["a", "b"]), &[0.5, 0.5], &[vec![0.0, 0.0], vec![0.67, 0.67]])
            .unwrap();
        assert!((s.evaluate().value - m.evaluate().value).abs() < 1e-15);

        let s = m
            .split_state(1, &labels(&["s1", "s2"]), &[0.25, 0.75], &[vec![1.0, 1.0], vec![0.57, 0.57]])
            .unwrap();
        let want = [0.4, 0.15, 0.45];
        for (a, b) in s.probabilities().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((s.evaluate().value - 0.61).abs() < 1e-12);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let m = party2();
        let err = m
            .split_state(0, &labels(&["a", "b"]), &[0.5, 0.4], &[vec![0.0, 0.0], vec![0.0, 0.0]])
            .unwrap_err();
        assert!(matches!(err, ModelError::ProbabilitySum { .. }));
        let err = m
            .split_state(0, &labels(&["a", "b"]), &[0.5, 0.5], &[vec![0.0], vec![0.0, 0.0]])
            .unwrap_err();
        assert!(matches!(err, ModelError::Dimension { .. }));
        let err = m
            .split_state(0, &labels(&["a"]), &[1.0], &[vec![0.0], vec![0.0]])
            .unwrap_err();
        assert_eq!(err, ModelError::SplitTooSmall(1));
    }

    #[test]
    fn porch_action() {
        let m = party3().add_action("Porch", &[0.22, 0.42, 0.81]).unwrap();
        assert!((m.expected_utility(2).unwrap() - 0.614).abs() < 1e-12);
        assert_eq!(m.evaluate().best_action, 0);

        let base = party2();
        let z = base.add_action("Nothing", &[0.0, 0.0]).unwrap();
        assert_eq!(z.evaluate().value, base.evaluate().value);
        let dup = base.add_action("Indoor2", &[0.67, 0.57]).unwrap();
        assert_eq!(dup.evaluate().best_action, 1);
        assert_eq!(dup.evaluate().value, base.evaluate().value);
        assert!(base.add_action("x", &[1.0]).is_err());
    }

    #[test]
    fn conditioning_marginalizes() {
        let m = party2();
        let c = m
            .condition_on(&labels(&["y"]), &[1.0], &[vec![0.4, 0.6]])
            .unwrap();
        assert_eq!(c.probabilities(), m.probabilities());
        assert_eq!(c.evaluate(), m.evaluate());
        assert!(c.conditioning().is_some());

        let c = m
            .condition_on(&labels(&["calm", "windy"]), &[0.5, 0.5], &[vec![0.8, 0.2], vec![0.0, 1.0]])
            .unwrap();
        assert!((c.probabilities()[0] - 0.4).abs() < 1e-15);
        assert!((c.evaluate().value - 0.61).abs() < 1e-12);

        let c = m
            .condition_on(
                &labels(&["a", "b"]),
                &[0.3, 0.7],
                &[vec![1.0, 0.0], vec![1.0 / 7.0, 6.0 / 7.0]],
            )
            .unwrap();
        assert!((c.probabilities()[0] - 0.4).abs() < 1e-15);

        assert!(m
            .condition_on(&labels(&["a", "b"]), &[0.3, 0.6], &[vec![1.0, 0.0], vec![0.0, 1.0]])
            .is_err());
    }

    #[test]
    fn probability_validation() {
        let err = DecisionModel::from_parts(&["a"], &["x", "y"], &[0.5, 0.4], &[&[0.0, 0.0]])
            .unwrap_err();
        assert!(err.to_string().contains("probabilities"));
        let m = DecisionModel::from_parts(&["a"], &["x", "y"], &[0.5, 0.5 + 5e-10], &[&[0.0, 0.0]])
            .unwrap();
        assert!((m.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(DecisionModel::from_parts(&["a", "a"], &["x"], &[1.0], &[&[0.0], &[1.0]]).is_err());
    }
}
