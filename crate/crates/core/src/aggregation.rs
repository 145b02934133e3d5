//! Biased aggregation architecture and the aggregate Bellman machinery.
//!
//! An [`AggregationScheme`] couples `q` aggregate states to the original
//! states through disaggregation rows `d[x][i]` and aggregation rows
//! `phi[j][y]`, and carries the bias function `V`. Transitions from an
//! aggregate state into `i` cost `−V(i)`; transitions from `j` back to the
//! aggregate layer cost `V(j)`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::bellman::{argmin_action, optimal_apply_raw, q_value};
use crate::error::{check_len, Error, Result};
use crate::mdp::{CostFunction, Mdp, Policy};

/// Row-sum tolerance for `d` and `phi`.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationScheme {
    q: usize,
    d: Vec<Vec<f64>>,
    phi: Vec<Vec<f64>>,
    bias: CostFunction,
    membership: Option<Vec<usize>>,
    d_support: Vec<Vec<(usize, f64)>>,
    phi_support: Vec<Vec<(usize, f64)>>,
    weighted: Vec<bool>,
}

impl AggregationScheme {
    /// Builds and validates a scheme. `d` is `q × n`, `phi` is `n × q`,
    /// `membership` (0-based aggregate per state) marks a hard scheme.
    pub fn new(
        d: Vec<Vec<f64>>,
        phi: Vec<Vec<f64>>,
        bias: CostFunction,
        membership: Option<Vec<usize>>,
    ) -> Result<Self> {
        let s = Self::new_unchecked(d, phi, bias, membership);
        let problems = s.violations();
        if problems.is_empty() {
            Ok(s)
        } else {
            Err(Error::InvalidScheme(problems))
        }
    }

    pub fn new_unchecked(
        d: Vec<Vec<f64>>,
        phi: Vec<Vec<f64>>,
        bias: CostFunction,
        membership: Option<Vec<usize>>,
    ) -> Self {
        let q = d.len();
        let n = bias.len();
        let d_support = d.iter().map(|row| sparse(row)).collect::<Vec<_>>();
        let phi_support = phi.iter().map(|row| sparse(row)).collect();
        let mut weighted = vec![false; n];
        for row in &d_support {
            for &(i, _) in row {
                if i < n {
                    weighted[i] = true;
                }
            }
        }
        Self {
            q,
            d,
            phi,
            bias,
            membership,
            d_support,
            phi_support,
            weighted,
        }
    }

    /// One aggregate state with uniform disaggregation over all states.
    pub fn single(bias: CostFunction) -> Self {
        let n = bias.len();
        Self::new(
            vec![vec![1.0 / n as f64; n]],
            vec![vec![1.0]; n],
            bias,
            Some(vec![0; n]),
        )
        .expect("single aggregate is valid")
    }

    /// Every state its own aggregate.
    pub fn singletons(bias: CostFunction) -> Self {
        let n = bias.len();
        Self::hard_uniform((0..n).collect(), n, bias).expect("singletons are valid")
    }

    /// Hard aggregation over a partition with `d` uniform on each member set.
    pub fn hard_uniform(membership: Vec<usize>, q: usize, bias: CostFunction) -> Result<Self> {
        let n = bias.len();
        check_len("membership", n, membership.len())?;
        let mut counts = vec![0usize; q];
        for &l in &membership {
            if l >= q {
                return Err(Error::InvalidScheme(vec![format!(
                    "aggregate {} out of range",
                    l + 1
                )]));
            }
            counts[l] += 1;
        }
        if let Some(l) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidScheme(vec![format!(
                "aggregate {} is empty",
                l + 1
            )]));
        }
        let mut d = vec![vec![0.0; n]; q];
        let mut phi = vec![vec![0.0; q]; n];
        for (j, &l) in membership.iter().enumerate() {
            d[l][j] = 1.0 / counts[l] as f64;
            phi[j][l] = 1.0;
        }
        Self::new(d, phi, bias, Some(membership))
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.bias.len()
    }

    pub fn d(&self) -> &[Vec<f64>] {
        &self.d
    }

    pub fn phi(&self) -> &[Vec<f64>] {
        &self.phi
    }

    pub fn bias(&self) -> &CostFunction {
        &self.bias
    }

    pub fn membership(&self) -> Option<&[usize]> {
        self.membership.as_deref()
    }

    /// Nonzero entries of disaggregation row `x`.
    pub fn d_support(&self, x: usize) -> &[(usize, f64)] {
        &self.d_support[x]
    }

    /// Nonzero entries of aggregation row `j`.
    pub fn phi_support(&self, j: usize) -> &[(usize, f64)] {
        &self.phi_support[j]
    }

    /// Same tables with a different bias function.
    pub fn with_bias(&self, bias: CostFunction) -> Result<Self> {
        check_len("bias function", self.n(), bias.len())?;
        Ok(Self {
            bias,
            ..self.clone()
        })
    }

    /// All broken invariants, as human-readable messages.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.bias.len();
        if self.q == 0 {
            out.push("no aggregate states".to_string());
        }
        if !self.bias.is_finite() {
            out.push("bias function has non-finite entries".to_string());
        }
        for (x, row) in self.d.iter().enumerate() {
            if row.len() != n {
                out.push(format!(
                    "d row {} has length {}, expected {n}",
                    x + 1,
                    row.len()
                ));
                continue;
            }
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                out.push(format!(
                    "d row {} has a negative or non-finite entry",
                    x + 1
                ));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                out.push(format!("d row {} sums to {s}", x + 1));
            }
        }
        if self.phi.len() != n {
            out.push(format!("phi has {} rows, expected {n}", self.phi.len()));
        }
        for (j, row) in self.phi.iter().enumerate() {
            if row.len() != self.q {
                out.push(format!(
                    "phi row {} has length {}, expected {}",
                    j + 1,
                    row.len(),
                    self.q
                ));
                continue;
            }
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                out.push(format!(
                    "phi row {} has a negative or non-finite entry",
                    j + 1
                ));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                out.push(format!("phi row {} sums to {s}", j + 1));
            }
        }
        if let Some(mem) = &self.membership {
            if mem.len() != n {
                out.push(format!("membership has length {}, expected {n}", mem.len()));
            } else if out.is_empty() {
                for (j, &l) in mem.iter().enumerate() {
                    if l >= self.q {
                        out.push(format!(
                            "state {} assigned to missing aggregate {}",
                            j + 1,
                            l + 1
                        ));
                        continue;
                    }
                    for (y, &v) in self.phi[j].iter().enumerate() {
                        let want = if y == l { 1.0 } else { 0.0 };
                        if v != want {
                            out.push(format!(
                                "phi[{}][{}] = {v} contradicts membership in aggregate {}",
                                j + 1,
                                y + 1,
                                l + 1
                            ));
                        }
                    }
                }
                for (x, row) in self.d.iter().enumerate() {
                    for (i, &v) in row.iter().enumerate() {
                        if v > 0.0 && mem[i] != x {
                            out.push(format!(
                                "d[{}][{}] > 0 but state {} belongs to aggregate {}",
                                x + 1,
                                i + 1,
                                i + 1,
                                mem[i] + 1
                            ));
                        }
                    }
                }
            }
        }
        out
    }

    pub(crate) fn check_for(&self, m: &Mdp) -> Result<()> {
        check_len("aggregation scheme states", m.n(), self.n())
    }

    pub(crate) fn check_r(&self, r: &[f64]) -> Result<()> {
        check_len("aggregate vector", self.q, r.len())
    }

    /// `(Φ r)(j) = Σ_y phi[j][y] r(y)`.
    pub fn correction(&self, r: &[f64]) -> Vec<f64> {
        self.phi_support
            .iter()
            .map(|row| row.iter().map(|&(y, w)| w * r[y]).sum())
            .collect()
    }

    pub fn to_file(&self) -> SchemeFile {
        SchemeFile {
            q: self.q,
            d: self.d.clone(),
            phi: self.phi.clone(),
            bias: self.bias.0.clone(),
            membership: self
                .membership
                .as_ref()
                .map(|m| m.iter().map(|l| l + 1).collect()),
        }
    }

    pub fn from_file(file: SchemeFile) -> Result<Self> {
        check_len("d rows", file.q, file.d.len())?;
        let membership = match file.membership {
            Some(mem) => Some(
                mem.into_iter()
                    .map(|l| {
                        l.checked_sub(1).ok_or_else(|| {
                            Error::InvalidScheme(vec![
                                "membership index 0 (aggregates are 1-based)".into(),
                            ])
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Self::new(file.d, file.phi, CostFunction(file.bias), membership)
    }

    pub fn read_json(reader: impl Read) -> Result<Self> {
        Self::from_file(serde_json::from_reader(reader)?)
    }

    pub fn write_json(&self, writer: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(writer, &self.to_file())?;
        Ok(())
    }
}

fn sparse(row: &[f64]) -> Vec<(usize, f64)> {
    row.iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(k, &v)| (k, v))
        .collect()
}

/// On-disk scheme layout. Aggregate indices in `membership` are 1-based.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SchemeFile {
    pub q: usize,
    pub d: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub membership: Option<Vec<usize>>,
}

/// The problem with stage costs `g(i,u,j) − V(i) + α V(j)`.
pub fn modified_costs(m: &Mdp, v: &CostFunction) -> Result<Mdp> {
    v.check_dim(m.n())?;
    let alpha = m.alpha();
    Ok(m.map_costs(|i, j, g| g - v[i] + alpha * v[j]))
}

/// `J̃1 = V + Φ r`.
pub fn lift_to_j1(sch: &AggregationScheme, r: &[f64]) -> Result<CostFunction> {
    sch.check_r(r)?;
    Ok(lift_raw(sch, r).into())
}

fn lift_raw(sch: &AggregationScheme, r: &[f64]) -> Vec<f64> {
    sch.correction(r)
        .into_iter()
        .zip(sch.bias.as_slice())
        .map(|(c, v)| v + c)
        .collect()
}

/// Applies the aggregate mapping `H`, or `H_μ` when a policy is given.
fn map_apply(m: &Mdp, sch: &AggregationScheme, mu: Option<&Policy>, r: &[f64]) -> Vec<f64> {
    let j1 = lift_raw(sch, r);
    let inner: Vec<f64> = (0..m.n())
        .map(|i| {
            if !sch.weighted[i] {
                return 0.0;
            }
            let q = match mu {
                Some(mu) => q_value(m, i, mu.0[i], &j1),
                None => argmin_action(m, i, |u| q_value(m, i, u, &j1)).1,
            };
            q - sch.bias[i]
        })
        .collect();
    sch.d_support
        .iter()
        .map(|row| row.iter().map(|&(i, w)| w * inner[i]).sum())
        .collect()
}

/// `(Hr)(x) = Σ_i d[x][i] (min_u Σ_j p_ij(u)(g + α(V(j) + (Φr)(j))) − V(i))`.
pub fn aggregate_map_apply(m: &Mdp, sch: &AggregationScheme, r: &[f64]) -> Result<Vec<f64>> {
    sch.check_for(m)?;
    sch.check_r(r)?;
    Ok(map_apply(m, sch, None, r))
}

/// `H_μ`: the aggregate mapping with the minimization replaced by `μ`.
pub fn aggregate_policy_map_apply(
    m: &Mdp,
    sch: &AggregationScheme,
    mu: &Policy,
    r: &[f64],
) -> Result<Vec<f64>> {
    sch.check_for(m)?;
    sch.check_r(r)?;
    mu.validate(m)?;
    Ok(map_apply(m, sch, Some(mu), r))
}

/// Greedy policy with respect to `J̃1 = V + Φ r`.
pub fn extract_policy(m: &Mdp, sch: &AggregationScheme, r: &[f64]) -> Result<Policy> {
    sch.check_for(m)?;
    let j1 = lift_raw_checked(sch, r)?;
    Ok(optimal_apply_raw(m, &j1).1)
}

fn lift_raw_checked(sch: &AggregationScheme, r: &[f64]) -> Result<Vec<f64>> {
    sch.check_r(r)?;
    Ok(lift_raw(sch, r))
}

/// `Σ_j p_ij(u) (g + α (V(j) + (Φr)(j)))`, computed exactly.
pub fn exact_q_factor(
    m: &Mdp,
    sch: &AggregationScheme,
    r: &[f64],
    i: usize,
    u: usize,
) -> Result<f64> {
    sch.check_for(m)?;
    if i >= m.n() {
        return Err(Error::InvalidConfig(format!(
            "state {} out of range",
            i + 1
        )));
    }
    if u >= m.num_actions(i) {
        return Err(Error::InvalidAction {
            state: i + 1,
            action: format!("#{}", u + 1),
        });
    }
    let j1 = lift_raw_checked(sch, r)?;
    Ok(q_value(m, i, u, &j1))
}

/// Aggregate fixed point together with the lifted functions and policy.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSolution {
    pub r: Vec<f64>,
    pub j1: CostFunction,
    pub j0: CostFunction,
    pub policy: Policy,
    /// `‖r − Hr‖∞`.
    pub residual: f64,
}

impl AggregateSolution {
    /// Lifts `r` to `J̃1`, minimizes once for `J̃0` and `μ̃`, and records the residual.
    pub fn assemble(m: &Mdp, sch: &AggregationScheme, r: Vec<f64>) -> Result<Self> {
        sch.check_for(m)?;
        let j1 = lift_raw_checked(sch, &r)?;
        let (j0, policy) = optimal_apply_raw(m, &j1);
        let hr = map_apply(m, sch, None, &r);
        let residual = crate::mdp::sup_distance(&r, &hr);
        Ok(Self {
            r,
            j1: j1.into(),
            j0: j0.into(),
            policy,
            residual,
        })
    }

    pub fn to_file(&self, m: &Mdp) -> SolutionFile {
        SolutionFile {
            r: self.r.clone(),
            j1: self.j1.0.clone(),
            policy: self.policy.to_ids(m),
            residual: self.residual,
        }
    }
}

/// JSON export of an [`AggregateSolution`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolutionFile {
    pub r: Vec<f64>,
    #[serde(rename = "J1")]
    pub j1: Vec<f64>,
    pub policy: Vec<String>,
    pub residual: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bellman::{policy_evaluate_exact, rollout_policy, value_iterate_exact};
    use crate::mdp::fixtures::{mdp0, mdp_a};

    fn zero(n: usize) -> CostFunction {
        CostFunction::zeros(n)
    }

    #[test]
    fn modified_cost_examples() {
        let m0 = mdp0();
        let mm = modified_costs(&m0, &CostFunction(vec![2.0])).unwrap();
        assert_eq!(mm.transitions(0, 0)[0].g, 0.0);
        let jt = value_iterate_exact(&mm, 1e-12).unwrap().values;
        assert!(jt[0].abs() < 1e-12);
        let m = mdp_a();
        assert_eq!(modified_costs(&m, &zero(2)).unwrap(), m);
        let mm = modified_costs(&m, &CostFunction(vec![1.0, 2.0])).unwrap();
        let jt = value_iterate_exact(&mm, 1e-12).unwrap().values;
        assert!(jt.sup_norm() < 1e-12);
        assert!(modified_costs(&m, &zero(3)).is_err());
    }

    #[test]
    fn map_examples() {
        let m = mdp_a();
        let single = AggregationScheme::single(zero(2));
        assert_eq!(aggregate_map_apply(&m, &single, &[0.0]).unwrap(), vec![0.5]);
        assert_eq!(aggregate_map_apply(&m, &single, &[1.0]).unwrap(), vec![1.0]);
        let exact = AggregationScheme::singletons(CostFunction(vec![1.0, 2.0]));
        assert_eq!(
            aggregate_map_apply(&m, &exact, &[0.0, 0.0]).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(aggregate_map_apply(&m, &single, &[0.0, 0.0]).is_err());
        assert!(aggregate_map_apply(&mdp0(), &single, &[0.0]).is_err());
    }

    #[test]
    fn policy_map_examples() {
        let m = mdp_a();
        let single = AggregationScheme::single(zero(2));
        let ba = Policy(vec![1, 0]);
        let aa = Policy(vec![0, 0]);
        assert_eq!(
            aggregate_policy_map_apply(&m, &single, &ba, &[1.0]).unwrap(),
            vec![1.0]
        );
        assert_eq!(
            aggregate_policy_map_apply(&m, &single, &aa, &[0.0]).unwrap(),
            vec![1.5]
        );
        let jmu = policy_evaluate_exact(&m, &aa).unwrap();
        let biased = AggregationScheme::single(jmu);
        let out = aggregate_policy_map_apply(&m, &biased, &aa, &[0.0]).unwrap();
        assert!(out[0].abs() < 1e-12);
    }

    #[test]
    fn lift_examples() {
        let single = AggregationScheme::single(zero(2));
        assert_eq!(
            lift_to_j1(&single, &[1.0]).unwrap(),
            CostFunction(vec![1.0, 1.0])
        );
        let v = CostFunction(vec![3.0, -1.0]);
        let hard = AggregationScheme::singletons(v.clone());
        assert_eq!(lift_to_j1(&hard, &[0.0, 0.0]).unwrap(), v);
        let hard = AggregationScheme::singletons(zero(2));
        let jstar = value_iterate_exact(&mdp_a(), 1e-12).unwrap().values;
        assert!(lift_to_j1(&hard, &[1.0, 2.0]).unwrap().distance(&jstar) < 1e-11);
    }

    #[test]
    fn extraction_examples() {
        let m = mdp_a();
        let ba = Policy(vec![1, 0]);
        assert_eq!(
            extract_policy(&m, &AggregationScheme::single(zero(2)), &[1.0]).unwrap(),
            ba
        );
        let aa = Policy(vec![0, 0]);
        let biased = AggregationScheme::single(policy_evaluate_exact(&m, &aa).unwrap());
        // With V = J_(a,a) = (4, 2) the single-aggregate fixed point is r = -3.
        assert_eq!(
            extract_policy(&m, &biased, &[-3.0]).unwrap(),
            rollout_policy(&m, &aa).unwrap()
        );
        let exact = AggregationScheme::singletons(CostFunction(vec![1.0, 2.0]));
        assert_eq!(extract_policy(&m, &exact, &[0.0, 0.0]).unwrap(), ba);
    }

    #[test]
    fn q_factor_examples() {
        let m = mdp_a();
        let single = AggregationScheme::single(zero(2));
        assert_eq!(exact_q_factor(&m, &single, &[1.0], 0, 0).unwrap(), 2.5);
        assert_eq!(exact_q_factor(&m, &single, &[1.0], 0, 1).unwrap(), 0.5);
        assert!(exact_q_factor(&m, &single, &[1.0], 1, 1).is_err());
        let mu = extract_policy(&m, &single, &[1.0]).unwrap();
        for i in 0..m.n() {
            let best = (0..m.num_actions(i))
                .min_by(|&a, &b| {
                    let qa = exact_q_factor(&m, &single, &[1.0], i, a).unwrap();
                    let qb = exact_q_factor(&m, &single, &[1.0], i, b).unwrap();
                    qa.partial_cmp(&qb).unwrap()
                })
                .unwrap();
            assert_eq!(best, mu.0[i]);
        }
    }

    #[test]
    fn scheme_validation() {
        let bad = AggregationScheme::new(
            vec![vec![0.5, 0.4]],
            vec![vec![1.0], vec![1.0]],
            zero(2),
            None,
        );
        assert!(matches!(bad, Err(Error::InvalidScheme(_))));
        // phi contradicting membership
        let bad = AggregationScheme::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.5, 0.5], vec![0.0, 1.0]],
            zero(2),
            Some(vec![0, 1]),
        );
        assert!(bad.is_err());
        // d mass outside the member set
        let bad = AggregationScheme::new(
            vec![vec![0.5, 0.5], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            zero(2),
            Some(vec![0, 1]),
        );
        assert!(bad.is_err());
        assert!(AggregationScheme::hard_uniform(vec![0, 0], 2, zero(2)).is_err());
    }

    #[test]
    fn scheme_file_round_trip() {
        let s =
            AggregationScheme::hard_uniform(vec![1, 0, 1], 2, CostFunction(vec![0.1, 0.2, 0.3]))
                .unwrap();
        let mut buf = Vec::new();
        s.write_json(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"V\""));
        assert!(text.contains("\"membership\""));
        assert_eq!(AggregationScheme::read_json(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn assembled_solution_is_consistent() {
        let m = mdp_a();
        let single = AggregationScheme::single(zero(2));
        let sol = AggregateSolution::assemble(&m, &single, vec![1.0]).unwrap();
        assert_eq!(sol.j1, CostFunction(vec![1.0, 1.0]));
        assert_eq!(sol.j0, CostFunction(vec![0.5, 1.5]));
        assert_eq!(sol.policy, Policy(vec![1, 0]));
        assert_eq!(sol.residual, 0.0);
    }
}
