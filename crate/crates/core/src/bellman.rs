//! Bellman operators and exact small-scale solvers.
//!
//! Every argmin in this module breaks ties toward the lowest action index.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{sup_distance, CostFunction, Mdp, Policy};

/// `Σ_j p_ij(u) (g(i,u,j) + α J(j))`.
#[inline]
pub fn q_value(m: &Mdp, i: usize, u: usize, j: &[f64]) -> f64 {
    let alpha = m.alpha();
    m.transitions(i, u)
        .iter()
        .map(|t| t.p * (t.g + alpha * j[t.to]))
        .sum()
}

/// Lowest-index minimizer of `score(u)` over the actions of state `i`.
#[inline]
pub(crate) fn argmin_action(
    m: &Mdp,
    i: usize,
    mut score: impl FnMut(usize) -> f64,
) -> (usize, f64) {
    let mut best = (0, score(0));
    for u in 1..m.num_actions(i) {
        let q = score(u);
        if q < best.1 {
            best = (u, q);
        }
    }
    best
}

/// `T_μ J`.
pub fn bellman_policy_apply(m: &Mdp, mu: &Policy, j: &CostFunction) -> Result<CostFunction> {
    j.check_dim(m.n())?;
    mu.validate(m)?;
    Ok(policy_apply_raw(m, mu, &j.0).into())
}

pub(crate) fn policy_apply_raw(m: &Mdp, mu: &Policy, j: &[f64]) -> Vec<f64> {
    (0..m.n()).map(|i| q_value(m, i, mu.0[i], j)).collect()
}

/// `T J` together with the attaining policy.
pub fn bellman_optimal_apply(m: &Mdp, j: &CostFunction) -> Result<(CostFunction, Policy)> {
    j.check_dim(m.n())?;
    let (tj, mu) = optimal_apply_raw(m, &j.0);
    Ok((tj.into(), mu))
}

pub(crate) fn optimal_apply_raw(m: &Mdp, j: &[f64]) -> (Vec<f64>, Policy) {
    let mut tj = Vec::with_capacity(m.n());
    let mut mu = Vec::with_capacity(m.n());
    for i in 0..m.n() {
        let (u, q) = argmin_action(m, i, |u| q_value(m, i, u, j));
        tj.push(q);
        mu.push(u);
    }
    (tj, Policy(mu))
}

/// One-step lookahead policy with lookahead function `l`.
pub fn greedy_policy(m: &Mdp, l: &CostFunction) -> Result<Policy> {
    Ok(bellman_optimal_apply(m, l)?.1)
}

/// Result of [`value_iterate_exact`].
#[derive(Debug, Clone)]
pub struct ValueIteration {
    pub values: CostFunction,
    pub policy: Policy,
    pub iterations: usize,
    /// `‖J − TJ‖∞` at the returned iterate.
    pub residual: f64,
}

/// Value iteration from 0 until the iterate is within `tol` of `J*` in sup norm.
///
/// Stops once `‖J_k − TJ_k‖∞ ≤ tol (1−α)/α` and returns `J_{k+1} = TJ_k`,
/// which then satisfies `‖J_{k+1} − J*‖∞ ≤ tol`.
pub fn value_iterate_exact(m: &Mdp, tol: f64) -> Result<ValueIteration> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let alpha = m.alpha();
    let threshold = tol * (1.0 - alpha) / alpha;
    let mut j = vec![0.0; m.n()];
    let mut iterations = 0;
    loop {
        let (tj, _) = optimal_apply_raw(m, &j);
        iterations += 1;
        let delta = sup_distance(&j, &tj);
        j = tj;
        if delta <= threshold {
            break;
        }
    }
    let (tj, policy) = optimal_apply_raw(m, &j);
    Ok(ValueIteration {
        residual: sup_distance(&j, &tj),
        values: j.into(),
        policy,
        iterations,
    })
}

/// Exact `J_μ` from the linear system `(I − α P_μ) J = g_μ`.
pub fn policy_evaluate_exact(m: &Mdp, mu: &Policy) -> Result<CostFunction> {
    mu.validate(m)?;
    let n = m.n();
    let alpha = m.alpha();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..n {
        for t in m.transitions(i, mu.0[i]) {
            a[(i, t.to)] -= alpha * t.p;
            b[i] += t.p * t.g;
        }
    }
    let lu = a.clone().lu();
    let mut x = lu
        .solve(&b)
        .ok_or(Error::SingularSystem("policy evaluation"))?;
    // Two rounds of iterative refinement bring the residual to rounding level.
    for _ in 0..2 {
        let r = &b - &a * &x;
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
    }
    Ok(CostFunction(x.iter().copied().collect()))
}

/// Greedy policy with respect to the exact cost of `base`.
pub fn rollout_policy(m: &Mdp, base: &Policy) -> Result<Policy> {
    let j = policy_evaluate_exact(m, base)?;
    greedy_policy(m, &j)
}

/// `T^s V` (or `T_μ^s V`) by `s` dense applications.
pub fn apply_power(
    m: &Mdp,
    v: &CostFunction,
    s: usize,
    mu: Option<&Policy>,
) -> Result<CostFunction> {
    v.check_dim(m.n())?;
    if let Some(mu) = mu {
        mu.validate(m)?;
    }
    let mut j = v.0.clone();
    for _ in 0..s {
        j = match mu {
            Some(mu) => policy_apply_raw(m, mu, &j),
            None => optimal_apply_raw(m, &j).0,
        };
    }
    Ok(j.into())
}

/// `V(i) − (T^s V)(i)` for each requested state; `T_μ` replaces `T` when a
/// policy is given.
pub fn multistep_residual(
    m: &Mdp,
    v: &CostFunction,
    s: usize,
    states: &[usize],
    mu: Option<&Policy>,
) -> Result<BTreeMap<usize, f64>> {
    if s < 1 {
        return Err(Error::InvalidConfig(
            "residual depth s must be at least 1".into(),
        ));
    }
    if states.is_empty() {
        return Err(Error::InvalidConfig("residual state set is empty".into()));
    }
    let tsv = apply_power(m, v, s, mu)?;
    states
        .iter()
        .map(|&i| {
            if i >= m.n() {
                return Err(Error::InvalidConfig(format!(
                    "state {} out of range",
                    i + 1
                )));
            }
            Ok((i, v[i] - tsv[i]))
        })
        .collect()
}

/// `‖V − TV‖∞`.
pub fn bellman_residual_norm(m: &Mdp, v: &CostFunction) -> Result<f64> {
    let (tv, _) = bellman_optimal_apply(m, v)?;
    Ok(tv.distance(v))
}
