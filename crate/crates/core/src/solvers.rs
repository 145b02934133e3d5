//! Solvers for the aggregate fixed point `r̃ = H r̃`.

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_map_apply, AggregateSolution, AggregationScheme};
use crate::bellman::{argmin_action, q_value};
use crate::error::{check_len, Error, Result};
use crate::mdp::{sup_distance, sup_norm, Mdp, Policy};

/// Stepsize schedule for the stochastic solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum StepRule {
    /// `γ = c / (c + visits(ℓ))`, counting prior visits of the updated aggregate.
    Harmonic {
        c: f64,
    },
    Constant {
        gamma: f64,
    },
}

/// How the stochastic solver picks the aggregate state to update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisitPolicy {
    UniformRandom,
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Target sup-norm distance to the fixed point.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub step_rule: StepRule,
    pub visit_policy: VisitPolicy,
    /// Stochastic solver: iterations between exact residual checks.
    pub check_every: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 100_000,
            seed: 0,
            step_rule: StepRule::Harmonic { c: 1.0 },
            visit_policy: VisitPolicy::UniformRandom,
            check_every: 1000,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.check_every < 1 {
            return Err(Error::InvalidConfig(
                "check_every must be at least 1".into(),
            ));
        }
        match self.step_rule {
            StepRule::Harmonic { c } if !(c > 0.0) => Err(Error::InvalidConfig(format!(
                "harmonic step constant must be positive, got {c}"
            ))),
            StepRule::Constant { gamma } if !(0.0..=1.0).contains(&gamma) => Err(
                Error::InvalidConfig(format!("constant step must lie in [0, 1], got {gamma}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub residual: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    pub status: SolveStatus,
}

impl SolveTrace {
    fn new() -> Self {
        Self {
            records: Vec::new(),
            status: SolveStatus::MaxIters,
        }
    }

    fn push(&mut self, iteration: usize, residual: f64, start: Instant) {
        self.records.push(TraceRecord {
            iteration,
            residual,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }

    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// CSV with header `iteration,residual,elapsed_ms`.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for rec in &self.records {
            w.serialize(rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Contraction iteration `r ← Hr` from 0.
pub fn solve_fixed_point_exact(
    m: &Mdp,
    sch: &AggregationScheme,
    cfg: &SolveConfig,
) -> Result<(AggregateSolution, SolveTrace)> {
    solve_fixed_point_exact_from(m, sch, cfg, &vec![0.0; sch.q()])
}

/// Contraction iteration `r ← Hr` from `r0`.
///
/// Stops at the first `k` with `‖r_k − Hr_k‖∞ ≤ tol (1−α)/α` and returns
/// `Hr_k`, which is then within `tol` of `r̃`.
pub fn solve_fixed_point_exact_from(
    m: &Mdp,
    sch: &AggregationScheme,
    cfg: &SolveConfig,
    r0: &[f64],
) -> Result<(AggregateSolution, SolveTrace)> {
    cfg.validate()?;
    check_len("initial aggregate vector", sch.q(), r0.len())?;
    let start = Instant::now();
    let alpha = m.alpha();
    let threshold = cfg.tol * (1.0 - alpha) / alpha;
    let mut trace = SolveTrace::new();
    let mut r = r0.to_vec();
    for k in 1..=cfg.max_iters {
        let hr = aggregate_map_apply(m, sch, &r)?;
        let residual = sup_distance(&r, &hr);
        trace.push(k, residual, start);
        r = hr;
        if residual <= threshold {
            trace.status = SolveStatus::Converged;
            break;
        }
    }
    Ok((AggregateSolution::assemble(m, sch, r)?, trace))
}

/// Affine pieces of `H_μ r = b + A r`.
fn policy_affine_map(
    m: &Mdp,
    sch: &AggregationScheme,
    mu: &Policy,
) -> (DMatrix<f64>, DVector<f64>) {
    let q = sch.q();
    let alpha = m.alpha();
    let v = sch.bias();
    let mut a = DMatrix::<f64>::zeros(q, q);
    let mut b = DVector::<f64>::zeros(q);
    for x in 0..q {
        for &(i, w) in sch.d_support(x) {
            let mut bi = -v[i];
            for t in m.transitions(i, mu.0[i]) {
                bi += t.p * (t.g + alpha * v[t.to]);
                for &(y, f) in sch.phi_support(t.to) {
                    a[(x, y)] += w * alpha * t.p * f;
                }
            }
            b[x] += w * bi;
        }
    }
    (a, b)
}

/// Solves `r = H_μ r` exactly as a `q × q` linear system.
pub fn solve_policy_fixed_point(m: &Mdp, sch: &AggregationScheme, mu: &Policy) -> Result<Vec<f64>> {
    check_len("aggregation scheme states", m.n(), sch.n())?;
    mu.validate(m)?;
    let (a, b) = policy_affine_map(m, sch, mu);
    let q = sch.q();
    let system = DMatrix::<f64>::identity(q, q) - &a;
    let lu = system.clone().lu();
    let mut r = lu
        .solve(&b)
        .ok_or(Error::SingularSystem("aggregate policy evaluation"))?;
    for _ in 0..2 {
        let res = &b - &system * &r;
        if let Some(dr) = lu.solve(&res) {
            r += dr;
        }
    }
    let r: Vec<f64> = r.iter().copied().collect();
    let hr = crate::aggregation::aggregate_policy_map_apply(m, sch, mu, &r)?;
    if sup_distance(&r, &hr) > 1e-9 * (1.0 + sup_norm(&r)) {
        return Err(Error::SingularSystem(
            "aggregate policy evaluation lost accuracy",
        ));
    }
    Ok(r)
}

/// Asynchronous stochastic iteration on single aggregate components.
///
/// At step `t` an aggregate `ℓ_t` is chosen per `cfg.visit_policy`, a state
/// `i_t ∼ d[ℓ_t][·]` is sampled, and only `r(ℓ_t)` moves toward the sampled
/// target `min_u Σ_j p(g + α(V(j) + (Φr)(j))) − V(i_t)`. Every
/// `cfg.check_every` steps the exact residual `‖r − Hr‖∞` is recorded; the
/// run stops once it is at most `tol (1−α)`, which bounds `‖r − r̃‖∞` by `tol`.
pub fn solve_stochastic(
    m: &Mdp,
    sch: &AggregationScheme,
    cfg: &SolveConfig,
) -> Result<(AggregateSolution, SolveTrace)> {
    solve_stochastic_from(m, sch, cfg, &vec![0.0; sch.q()])
}

pub fn solve_stochastic_from(
    m: &Mdp,
    sch: &AggregationScheme,
    cfg: &SolveConfig,
    r0: &[f64],
) -> Result<(AggregateSolution, SolveTrace)> {
    cfg.validate()?;
    check_len("aggregation scheme states", m.n(), sch.n())?;
    check_len("initial aggregate vector", sch.q(), r0.len())?;
    let start = Instant::now();
    let q = sch.q();
    let alpha = m.alpha();
    let v = sch.bias();
    let samplers = (0..q)
        .map(|x| {
            let support = sch.d_support(x);
            WeightedIndex::new(support.iter().map(|&(_, w)| w))
                .map_err(|e| Error::InvalidScheme(vec![format!("d row {}: {e}", x + 1)]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut r = r0.to_vec();
    let mut visits = vec![0u64; q];
    let mut trace = SolveTrace::new();
    let stop = cfg.tol * (1.0 - alpha);

    for t in 0..cfg.max_iters {
        let l = match cfg.visit_policy {
            VisitPolicy::UniformRandom => rng.gen_range(0..q),
            VisitPolicy::RoundRobin => t % q,
        };
        let i = sch.d_support(l)[samplers[l].sample(&mut rng)].0;
        let (_, best) = argmin_action(m, i, |u| {
            m.transitions(i, u)
                .iter()
                .map(|tr| {
                    let corr: f64 = sch.phi_support(tr.to).iter().map(|&(y, f)| f * r[y]).sum();
                    tr.p * (tr.g + alpha * (v[tr.to] + corr))
                })
                .sum()
        });
        let target = best - v[i];
        let gamma = match cfg.step_rule {
            StepRule::Harmonic { c } => c / (c + visits[l] as f64),
            StepRule::Constant { gamma } => gamma,
        };
        r[l] = (1.0 - gamma) * r[l] + gamma * target;
        visits[l] += 1;

        let done = t + 1;
        if done % cfg.check_every == 0 || done == cfg.max_iters {
            let hr = aggregate_map_apply(m, sch, &r)?;
            let residual = sup_distance(&r, &hr);
            trace.push(done, residual, start);
            if residual <= stop {
                trace.status = SolveStatus::Converged;
                break;
            }
        }
    }
    Ok((AggregateSolution::assemble(m, sch, r)?, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyIterationStatus {
    /// The improvement step reproduced the evaluated policy.
    Converged,
    /// A policy seen earlier (but not the immediately preceding one) recurred.
    Cycle,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct PolicyIterationResult {
    pub solution: AggregateSolution,
    /// Evaluated policy and its aggregate cost `r_μ`, one entry per iteration.
    pub history: Vec<(Policy, Vec<f64>)>,
    pub status: PolicyIterationStatus,
}

/// Policy iteration on the aggregate problem: exact `H_μ` evaluation followed
/// by greedy improvement at `V + Φ r_μ`, until the policy repeats.
pub fn aggregate_policy_iteration(
    m: &Mdp,
    sch: &AggregationScheme,
    initial: &Policy,
    cfg: &SolveConfig,
) -> Result<PolicyIterationResult> {
    cfg.validate()?;
    initial.validate(m)?;
    let mut seen = HashSet::new();
    let mut history = Vec::new();
    let mut mu = initial.clone();
    let mut status = PolicyIterationStatus::MaxIters;
    for _ in 0..cfg.max_iters {
        let r = solve_policy_fixed_point(m, sch, &mu)?;
        let next = crate::aggregation::extract_policy(m, sch, &r)?;
        seen.insert(mu.clone());
        history.push((mu.clone(), r));
        if next == mu {
            status = PolicyIterationStatus::Converged;
            break;
        }
        if seen.contains(&next) {
            status = PolicyIterationStatus::Cycle;
            break;
        }
        mu = next;
    }
    let r = history.last().expect("at least one evaluation").1.clone();
    let solution = AggregateSolution::assemble(m, sch, r)?;
    Ok(PolicyIterationResult {
        solution,
        history,
        status,
    })
}

/// Per-aggregate control correspondence for the restricted problem:
/// `controls[ℓ][k]` lists, for each state in the support of `d[ℓ]`, the
/// index of the `k`-th shared control at that state.
struct RestrictedControls {
    controls: Vec<Vec<Vec<(usize, usize)>>>,
}

fn restricted_controls(m: &Mdp, sch: &AggregationScheme) -> Result<RestrictedControls> {
    if sch.membership().is_none() {
        return Err(Error::InvalidConfig(
            "restricted warm start needs a hard aggregation scheme".into(),
        ));
    }
    let mut controls = Vec::with_capacity(sch.q());
    for l in 0..sch.q() {
        let support = sch.d_support(l);
        let lead = support[0].0;
        let mut per_control = Vec::new();
        for a in m.actions(lead) {
            let mut row = Vec::with_capacity(support.len());
            for &(i, _) in support {
                let u = m
                    .action_index(i, &a.id)
                    .ok_or(Error::HeterogeneousActions { aggregate: l + 1 })?;
                row.push((i, u));
            }
            per_control.push(row);
        }
        for &(i, _) in support {
            if m.num_actions(i) != m.num_actions(lead) {
                return Err(Error::HeterogeneousActions { aggregate: l + 1 });
            }
        }
        controls.push(per_control);
    }
    Ok(RestrictedControls { controls })
}

fn restricted_apply(
    m: &Mdp,
    sch: &AggregationScheme,
    rc: &RestrictedControls,
    r: &[f64],
) -> Vec<f64> {
    let j1: Vec<f64> = sch
        .correction(r)
        .into_iter()
        .zip(sch.bias().as_slice())
        .map(|(c, v)| v + c)
        .collect();
    rc.controls
        .iter()
        .enumerate()
        .map(|(l, per_control)| {
            let support = sch.d_support(l);
            per_control
                .iter()
                .map(|row| {
                    row.iter()
                        .zip(support)
                        .map(|(&(i, u), &(_, w))| w * (q_value(m, i, u, &j1) - sch.bias()[i]))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// The restricted aggregate mapping: one shared control per aggregate,
/// `(Ĥr)(ℓ) = min_{u∈U_ℓ} Σ_i d[ℓ][i] (Σ_j p_ij(u)(g + α(V(j) + (Φr)(j))) − V(i))`.
///
/// Its fixed point is the optimum of the warm-start linear program, whose
/// constraints read `r(ℓ) ≤ Σ_i d[ℓ][i](…)` for every `u ∈ U_ℓ`.
pub fn restricted_map_apply(m: &Mdp, sch: &AggregationScheme, r: &[f64]) -> Result<Vec<f64>> {
    check_len("aggregation scheme states", m.n(), sch.n())?;
    check_len("aggregate vector", sch.q(), r.len())?;
    let rc = restricted_controls(m, sch)?;
    Ok(restricted_apply(m, sch, &rc, r))
}

const WARM_START_MAX_ITERS: usize = 1_000_000;

/// Optimal cost of the restricted aggregate problem in which every state of
/// an aggregate uses the same control, found by value iteration on the
/// `q`-state problem. Requires a hard scheme whose member states share one
/// action set.
pub fn warm_start_restricted(m: &Mdp, sch: &AggregationScheme) -> Result<Vec<f64>> {
    check_len("aggregation scheme states", m.n(), sch.n())?;
    let rc = restricted_controls(m, sch)?;
    let alpha = m.alpha();
    let mut r = vec![0.0; sch.q()];
    for _ in 0..WARM_START_MAX_ITERS {
        let next = restricted_apply(m, sch, &rc, &r);
        let delta = sup_distance(&r, &next);
        r = next;
        if delta <= 1e-14 * (1.0 + sup_norm(&r)) * (1.0 - alpha) {
            break;
        }
    }
    let check = restricted_apply(m, sch, &rc, &r);
    if r.iter().zip(&check).any(|(a, b)| *a > b + 1e-9) {
        return Err(Error::InvalidConfig(
            "restricted fixed point violates its constraints".into(),
        ));
    }
    Ok(r)
}
