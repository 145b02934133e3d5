//! Finite discounted MDP data model.
//!
//! States are stored 0-based internally. Every external format (problem
//! files, policy files, CSV reports, violation messages) uses 1-based state
//! numbers.

use std::fmt;
use std::io::{Read, Write};
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Tolerance on transition row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// One sparse entry of a transition row: target state, probability, stage cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub to: usize,
    pub p: f64,
    pub g: f64,
}

/// A control available at a state, with its transition row.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub id: String,
    pub transitions: Vec<Transition>,
}

impl Action {
    pub fn new(id: impl Into<String>, transitions: Vec<Transition>) -> Self {
        Self {
            id: id.into(),
            transitions,
        }
    }

    /// Shorthand for a deterministic move.
    pub fn deterministic(id: impl Into<String>, to: usize, g: f64) -> Self {
        Self::new(id, vec![Transition { to, p: 1.0, g }])
    }
}

/// Finite discounted Markov decision problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    alpha: f64,
    states: Vec<Vec<Action>>,
}

/// One failed well-formedness rule. State numbers are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Discount {
        alpha: f64,
    },
    NoStates,
    NoActions {
        state: usize,
    },
    DuplicateAction {
        state: usize,
        action: String,
    },
    RowSum {
        state: usize,
        action: String,
        sum: f64,
    },
    NegativeProbability {
        state: usize,
        action: String,
        to: usize,
        p: f64,
    },
    TargetOutOfRange {
        state: usize,
        action: String,
        to: usize,
    },
    NonFinite {
        state: usize,
        action: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Discount { alpha } => write!(f, "discount {alpha} outside (0, 1)"),
            Violation::NoStates => write!(f, "problem has no states"),
            Violation::NoActions { state } => write!(f, "state {state}: no actions"),
            Violation::DuplicateAction { state, action } => {
                write!(f, "state {state}: duplicate action {action}")
            }
            Violation::RowSum { state, action, sum } => {
                write!(f, "state {state}, action {action}: row sum {sum} ≠ 1")
            }
            Violation::NegativeProbability {
                state,
                action,
                to,
                p,
            } => write!(
                f,
                "state {state}, action {action}: negative probability {p} to state {to}"
            ),
            Violation::TargetOutOfRange { state, action, to } => {
                write!(
                    f,
                    "state {state}, action {action}: target {to} out of range"
                )
            }
            Violation::NonFinite { state, action } => {
                write!(
                    f,
                    "state {state}, action {action}: non-finite probability or cost"
                )
            }
        }
    }
}

/// Outcome of [`validate_mdp`]; empty means well formed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every structural rule of an MDP and reports all failures.
pub fn validate_mdp(m: &Mdp) -> ValidationReport {
    let mut violations = Vec::new();
    if !(m.alpha > 0.0 && m.alpha < 1.0) {
        violations.push(Violation::Discount { alpha: m.alpha });
    }
    if m.states.is_empty() {
        violations.push(Violation::NoStates);
    }
    let n = m.states.len();
    for (i, actions) in m.states.iter().enumerate() {
        let state = i + 1;
        if actions.is_empty() {
            violations.push(Violation::NoActions { state });
        }
        for (k, a) in actions.iter().enumerate() {
            if actions[..k].iter().any(|b| b.id == a.id) {
                violations.push(Violation::DuplicateAction {
                    state,
                    action: a.id.clone(),
                });
            }
            let mut sum = 0.0;
            for t in &a.transitions {
                if !t.p.is_finite() || !t.g.is_finite() {
                    violations.push(Violation::NonFinite {
                        state,
                        action: a.id.clone(),
                    });
                    continue;
                }
                if t.p < 0.0 {
                    violations.push(Violation::NegativeProbability {
                        state,
                        action: a.id.clone(),
                        to: t.to.wrapping_add(1),
                        p: t.p,
                    });
                }
                if t.to >= n {
                    violations.push(Violation::TargetOutOfRange {
                        state,
                        action: a.id.clone(),
                        to: t.to.wrapping_add(1),
                    });
                }
                sum += t.p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                violations.push(Violation::RowSum {
                    state,
                    action: a.id.clone(),
                    sum,
                });
            }
        }
    }
    ValidationReport { violations }
}

impl Mdp {
    /// Builds a validated MDP.
    pub fn new(alpha: f64, states: Vec<Vec<Action>>) -> Result<Self> {
        let m = Self { alpha, states };
        let report = validate_mdp(&m);
        if report.is_ok() {
            Ok(m)
        } else {
            Err(Error::InvalidMdp(report.violations))
        }
    }

    /// Builds an MDP without checking it. Callers must run [`validate_mdp`]
    /// themselves; solvers assume a well-formed problem.
    pub fn new_unchecked(alpha: f64, states: Vec<Vec<Action>>) -> Self {
        Self { alpha, states }
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn actions(&self, i: usize) -> &[Action] {
        &self.states[i]
    }

    pub fn num_actions(&self, i: usize) -> usize {
        self.states[i].len()
    }

    pub fn transitions(&self, i: usize, u: usize) -> &[Transition] {
        &self.states[i][u].transitions
    }

    pub fn action_index(&self, i: usize, id: &str) -> Option<usize> {
        self.states[i].iter().position(|a| a.id == id)
    }

    /// Same transition structure with a different discount, unchecked.
    pub fn with_alpha_unchecked(&self, alpha: f64) -> Self {
        Self {
            alpha,
            states: self.states.clone(),
        }
    }

    /// Replaces every stage cost `g(i,u,j)` by `f(i, j, g)`.
    pub fn map_costs(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let states = self
            .states
            .iter()
            .enumerate()
            .map(|(i, actions)| {
                actions
                    .iter()
                    .map(|a| Action {
                        id: a.id.clone(),
                        transitions: a
                            .transitions
                            .iter()
                            .map(|t| Transition {
                                to: t.to,
                                p: t.p,
                                g: f(i, t.to, t.g),
                            })
                            .collect(),
                    })
                    .collect()
            })
            .collect();
        Self {
            alpha: self.alpha,
            states,
        }
    }

    pub fn to_file(&self) -> MdpFile {
        let actions = self
            .states
            .iter()
            .map(|acts| acts.iter().map(|a| a.id.clone()).collect())
            .collect();
        let mut transitions = Vec::new();
        for (i, acts) in self.states.iter().enumerate() {
            for a in acts {
                for t in &a.transitions {
                    transitions.push(TransitionRecord {
                        from: i + 1,
                        action: a.id.clone(),
                        to: t.to + 1,
                        p: t.p,
                        g: t.g,
                    });
                }
            }
        }
        MdpFile {
            alpha: self.alpha,
            n: self.n(),
            actions,
            transitions,
        }
    }

    pub fn from_file(file: MdpFile) -> Result<Self> {
        check_len("actions per state", file.n, file.actions.len())?;
        let mut states: Vec<Vec<Action>> = file
            .actions
            .into_iter()
            .map(|ids| {
                ids.into_iter()
                    .map(|id| Action::new(id, Vec::new()))
                    .collect()
            })
            .collect();
        for rec in file.transitions {
            if rec.from == 0 || rec.from > file.n {
                return Err(Error::InvalidMdp(vec![Violation::TargetOutOfRange {
                    state: rec.from,
                    action: rec.action,
                    to: rec.to,
                }]));
            }
            let acts = &mut states[rec.from - 1];
            let Some(a) = acts.iter_mut().find(|a| a.id == rec.action) else {
                return Err(Error::InvalidAction {
                    state: rec.from,
                    action: rec.action,
                });
            };
            // 0 maps to usize::MAX so that validation reports it as out of range.
            a.transitions.push(Transition {
                to: rec.to.wrapping_sub(1),
                p: rec.p,
                g: rec.g,
            });
        }
        Mdp::new(file.alpha, states)
    }

    pub fn read_json(reader: impl Read) -> Result<Self> {
        let file: MdpFile = serde_json::from_reader(reader)?;
        Self::from_file(file)
    }

    pub fn write_json(&self, writer: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(writer, &self.to_file())?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical problem file.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(&self.to_file()).expect("problem serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// On-disk problem layout.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MdpFile {
    pub alpha: f64,
    pub n: usize,
    pub actions: Vec<Vec<String>>,
    pub transitions: Vec<TransitionRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransitionRecord {
    pub from: usize,
    pub action: String,
    pub to: usize,
    pub p: f64,
    pub g: f64,
}

/// Deterministic stationary policy, stored as an action index per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy(pub Vec<usize>);

impl Policy {
    /// The policy choosing the first listed action everywhere.
    pub fn first_actions(m: &Mdp) -> Self {
        Policy(vec![0; m.n()])
    }

    pub fn validate(&self, m: &Mdp) -> Result<()> {
        check_len("policy", m.n(), self.0.len())?;
        for (i, &u) in self.0.iter().enumerate() {
            if u >= m.num_actions(i) {
                return Err(Error::InvalidPolicy {
                    state: i + 1,
                    reason: format!("action index {u} but only {} actions", m.num_actions(i)),
                });
            }
        }
        Ok(())
    }

    pub fn to_ids(&self, m: &Mdp) -> Vec<String> {
        self.0
            .iter()
            .enumerate()
            .map(|(i, &u)| m.actions(i)[u].id.clone())
            .collect()
    }

    pub fn from_ids<S: AsRef<str>>(m: &Mdp, ids: &[S]) -> Result<Self> {
        check_len("policy", m.n(), ids.len())?;
        ids.iter()
            .enumerate()
            .map(|(i, id)| {
                m.action_index(i, id.as_ref())
                    .ok_or_else(|| Error::InvalidAction {
                        state: i + 1,
                        action: id.as_ref().to_string(),
                    })
            })
            .collect::<Result<Vec<_>>>()
            .map(Policy)
    }

    pub fn read_json(m: &Mdp, reader: impl Read) -> Result<Self> {
        let ids: Vec<String> = serde_json::from_reader(reader)?;
        Self::from_ids(m, &ids)
    }

    pub fn write_json(&self, m: &Mdp, writer: impl Write) -> Result<()> {
        serde_json::to_writer(writer, &self.to_ids(m))?;
        Ok(())
    }
}

/// A real function over states (costs, bias functions, iterates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostFunction(pub Vec<f64>);

impl CostFunction {
    pub fn zeros(n: usize) -> Self {
        CostFunction(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.0)
    }

    /// `‖self − other‖∞`.
    pub fn distance(&self, other: &CostFunction) -> f64 {
        sup_distance(&self.0, &other.0)
    }

    pub(crate) fn check_dim(&self, n: usize) -> Result<()> {
        check_len("cost function", n, self.0.len())
    }
}

impl Index<usize> for CostFunction {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for CostFunction {
    fn from(v: Vec<f64>) -> Self {
        CostFunction(v)
    }
}

pub fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn sup_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
}

/// Small hand-checkable problems shared by tests and the verification suite.
pub mod fixtures {
    use super::{Action, Mdp};

    /// One state, one action, self-loop with cost 1, discount 0.5.
    pub fn mdp0() -> Mdp {
        Mdp::new(0.5, vec![vec![Action::deterministic("a", 0, 1.0)]]).expect("valid fixture")
    }

    /// Two states, discount 0.5. State 1 offers `a` (stay, cost 2) and `b`
    /// (move to state 2, cost 0); state 2 offers `a` (stay, cost 1).
    pub fn mdp_a() -> Mdp {
        Mdp::new(
            0.5,
            vec![
                vec![
                    Action::deterministic("a", 0, 2.0),
                    Action::deterministic("b", 1, 0.0),
                ],
                vec![Action::deterministic("a", 1, 1.0)],
            ],
        )
        .expect("valid fixture")
    }

    /// Two copies of [`mdp0`]'s state, each looping on itself.
    pub fn two_copies() -> Mdp {
        Mdp::new(
            0.5,
            vec![
                vec![Action::deterministic("a", 0, 1.0)],
                vec![Action::deterministic("a", 1, 1.0)],
            ],
        )
        .expect("valid fixture")
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn minimal_problem_is_valid() {
        assert!(validate_mdp(&mdp0()).is_ok());
        assert!(validate_mdp(&mdp_a()).is_ok());
    }

    #[test]
    fn short_row_is_reported() {
        let m = Mdp::new_unchecked(
            0.5,
            vec![vec![Action::new(
                "a",
                vec![Transition {
                    to: 0,
                    p: 0.9,
                    g: 1.0,
                }],
            )]],
        );
        let report = validate_mdp(&m);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(
            report.violations[0].to_string(),
            "state 1, action a: row sum 0.9 ≠ 1"
        );
    }

    #[test]
    fn every_rule_is_checked() {
        let m = Mdp::new_unchecked(
            1.0,
            vec![
                vec![],
                vec![
                    Action::new(
                        "x",
                        vec![
                            Transition {
                                to: 5,
                                p: 1.5,
                                g: 0.0,
                            },
                            Transition {
                                to: 0,
                                p: -0.5,
                                g: 0.0,
                            },
                        ],
                    ),
                    Action::deterministic("x", 0, f64::NAN),
                ],
            ],
        );
        let report = validate_mdp(&m);
        let kinds: Vec<_> = report
            .violations
            .iter()
            .map(std::mem::discriminant)
            .collect();
        for expected in [
            Violation::Discount { alpha: 1.0 },
            Violation::NoActions { state: 1 },
            Violation::TargetOutOfRange {
                state: 2,
                action: "x".into(),
                to: 6,
            },
            Violation::NegativeProbability {
                state: 2,
                action: "x".into(),
                to: 1,
                p: -0.5,
            },
            Violation::DuplicateAction {
                state: 2,
                action: "x".into(),
            },
            Violation::NonFinite {
                state: 2,
                action: "x".into(),
            },
        ] {
            assert!(
                kinds.contains(&std::mem::discriminant(&expected)),
                "{expected}"
            );
        }
    }

    #[test]
    fn file_round_trip() {
        let m = mdp_a();
        let mut buf = Vec::new();
        m.write_json(&mut buf).unwrap();
        let back = Mdp::read_json(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.content_hash(), m.content_hash());
    }

    #[test]
    fn load_rejects_bad_rows() {
        let json = r#"{"alpha":0.5,"n":1,"actions":[["a"]],
            "transitions":[{"from":1,"action":"a","to":1,"p":0.9,"g":1}]}"#;
        match Mdp::read_json(json.as_bytes()) {
            Err(Error::InvalidMdp(v)) => assert!(matches!(v[0], Violation::RowSum { .. })),
            other => panic!("expected row-sum failure, got {other:?}"),
        }
        let json = r#"{"alpha":0.5,"n":1,"actions":[["a"]],
            "transitions":[{"from":1,"action":"a","to":0,"p":1,"g":1}]}"#;
        assert!(matches!(
            Mdp::read_json(json.as_bytes()),
            Err(Error::InvalidMdp(_))
        ));
        let json = r#"{"alpha":0.5,"n":1,"actions":[["a"]],
            "transitions":[{"from":1,"action":"z","to":1,"p":1,"g":1}]}"#;
        assert!(matches!(
            Mdp::read_json(json.as_bytes()),
            Err(Error::InvalidAction { .. })
        ));
    }

    #[test]
    fn policy_ids() {
        let m = mdp_a();
        let mu = Policy::from_ids(&m, &["b", "a"]).unwrap();
        assert_eq!(mu, Policy(vec![1, 0]));
        assert_eq!(mu.to_ids(&m), vec!["b", "a"]);
        assert!(Policy::from_ids(&m, &["b", "b"]).is_err());
        assert!(Policy(vec![0, 1]).validate(&m).is_err());
    }
}
