//! Policy improvement runs and their persisted records.

use std::io::{Read, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationScheme;
use crate::bellman::{policy_evaluate_exact, rollout_policy, value_iterate_exact};
use crate::error::Result;
use crate::mdp::{CostFunction, Mdp, Policy};
use crate::scheme_builder::{build_scheme, BuilderConfig};
use crate::solvers::{solve_fixed_point_exact, SolveConfig, SolveTrace};

/// `γ(i) = α Σ_j p_ij(μ̃(i)) (Φ r̃)(j)`.
pub fn improvement_gammas(
    m: &Mdp,
    sch: &AggregationScheme,
    policy: &Policy,
    r: &[f64],
) -> Vec<f64> {
    let corr = sch.correction(r);
    (0..m.n())
        .map(|i| {
            m.alpha()
                * m.transitions(i, policy.0[i])
                    .iter()
                    .map(|t| t.p * corr[t.to])
                    .sum::<f64>()
        })
        .collect()
}

/// Smallest `J_μ(i) − γ/(1−α) − J_μ̃(i)` over states, with `γ = min_i γ(i)`.
/// Nonnegative exactly when the improvement bound holds.
pub fn improvement_bound_slack(
    alpha: f64,
    gamma: f64,
    j_mu: &CostFunction,
    j_tilde: &CostFunction,
) -> f64 {
    j_mu.0
        .iter()
        .zip(&j_tilde.0)
        .map(|(a, b)| a - gamma / (1.0 - alpha) - b)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub base_policy: Vec<String>,
    pub builder: BuilderConfig,
    pub solve: SolveConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementOutputs {
    pub policy: Vec<String>,
    pub r: Vec<f64>,
    pub q_effective: usize,
    #[serde(rename = "J_mu")]
    pub j_mu: Vec<f64>,
    #[serde(rename = "J_improved")]
    pub j_improved: Vec<f64>,
    #[serde(rename = "J_star")]
    pub j_star: Vec<f64>,
    pub rollout_policy: Vec<String>,
    #[serde(rename = "J_rollout")]
    pub j_rollout: Vec<f64>,
    pub gamma: f64,
    pub bound_slack: f64,
    pub max_r: f64,
    pub matches_rollout: bool,
    /// `‖J_μ̃ − J*‖∞`.
    pub optimality_gap: f64,
    /// `‖J_rollout − J*‖∞`.
    pub rollout_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "message", rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub problem_hash: String,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs: Option<ImprovementOutputs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<SolveTrace>,
    /// Milliseconds since the Unix epoch.
    pub started_ms: u64,
    pub finished_ms: u64,
}

impl RunRecord {
    pub fn read_json(reader: impl Read) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn write_json(&self, writer: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    /// Reruns the recorded configuration on `m`.
    pub fn replay(&self, m: &Mdp) -> Result<RunRecord> {
        let base = Policy::from_ids(m, &self.config.base_policy)?;
        Ok(run_improvement(
            m,
            &base,
            &self.config.builder,
            &self.config.solve,
        ))
    }

    /// Same configuration, problem and outputs; timestamps and timings are ignored.
    pub fn same_outputs(&self, other: &RunRecord) -> bool {
        let strip = |t: &Option<SolveTrace>| {
            t.as_ref().map(|t| {
                (
                    t.status,
                    t.records
                        .iter()
                        .map(|r| (r.iteration, r.residual))
                        .collect::<Vec<_>>(),
                )
            })
        };
        self.config == other.config
            && self.problem_hash == other.problem_hash
            && self.status == other.status
            && self.outputs == other.outputs
            && strip(&self.trace) == strip(&other.trace)
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Uses `V = J_μ` for the base policy, builds a residual scheme, solves it and
/// compares the improved policy with rollout and with an optimal policy.
/// Failures are recorded in the status rather than returned.
pub fn run_improvement(
    m: &Mdp,
    base: &Policy,
    builder: &BuilderConfig,
    solve: &SolveConfig,
) -> RunRecord {
    let started_ms = now_ms();
    let config = RunConfig {
        base_policy: if base.validate(m).is_ok() {
            base.to_ids(m)
        } else {
            Vec::new()
        },
        builder: builder.clone(),
        solve: solve.clone(),
    };
    let result = improvement(m, base, builder, solve);
    let (status, outputs, trace) = match result {
        Ok((o, t)) => (RunStatus::Ok, Some(o), Some(t)),
        Err(e) => (RunStatus::Failed(e.to_string()), None, None),
    };
    RunRecord {
        config,
        problem_hash: m.content_hash(),
        status,
        outputs,
        trace,
        started_ms,
        finished_ms: now_ms(),
    }
}

fn improvement(
    m: &Mdp,
    base: &Policy,
    builder: &BuilderConfig,
    solve: &SolveConfig,
) -> Result<(ImprovementOutputs, SolveTrace)> {
    base.validate(m)?;
    let j_mu = policy_evaluate_exact(m, base)?;
    let (sch, partition) = build_scheme(m, &j_mu, builder)?;
    let (sol, trace) = solve_fixed_point_exact(m, &sch, solve)?;
    let j_improved = policy_evaluate_exact(m, &sol.policy)?;
    let j_star = value_iterate_exact(m, solve.tol.min(1e-10))?.values;
    let rollout = rollout_policy(m, base)?;
    let j_rollout = policy_evaluate_exact(m, &rollout)?;
    let gamma = improvement_gammas(m, &sch, &sol.policy, &sol.r)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let outputs = ImprovementOutputs {
        policy: sol.policy.to_ids(m),
        max_r: sol.r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        r: sol.r.clone(),
        q_effective: partition.q(),
        bound_slack: improvement_bound_slack(m.alpha(), gamma, &j_mu, &j_improved),
        gamma,
        matches_rollout: sol.policy == rollout,
        optimality_gap: j_improved.distance(&j_star),
        rollout_gap: j_rollout.distance(&j_star),
        rollout_policy: rollout.to_ids(m),
        j_mu: j_mu.0,
        j_improved: j_improved.0,
        j_star: j_star.0,
        j_rollout: j_rollout.0,
    };
    Ok((outputs, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::generate::{gen_random_mdp, RandomMdpSpec};
    use crate::mdp::fixtures::mdp_a;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_aggregate_run_is_rollout() {
        let m = mdp_a();
        let rec = run_improvement(
            &m,
            &Policy(vec![0, 0]),
            &BuilderConfig::all_states(1, 1),
            &SolveConfig::default(),
        );
        let out = rec.outputs.as_ref().unwrap();
        assert_eq!(out.policy, ids(&["b", "a"]));
        assert!(out.matches_rollout);
        assert!(out.bound_slack >= -1e-9);
        assert!(out.gamma <= 1e-12);
    }

    #[test]
    fn singleton_run_is_optimal() {
        let m = mdp_a();
        let rec = run_improvement(
            &m,
            &Policy(vec![0, 0]),
            &BuilderConfig::all_states(2, 1),
            &SolveConfig::default(),
        );
        let out = rec.outputs.unwrap();
        assert_eq!(out.q_effective, 2);
        assert_eq!(out.policy, ids(&["b", "a"]));
        assert!(out.optimality_gap < 1e-9);
    }

    #[test]
    fn full_partition_on_random_mdp_is_optimal() {
        let m = gen_random_mdp(&RandomMdpSpec::new(15, 3, 4, 0.9, 21)).unwrap();
        let cfg = SolveConfig {
            tol: 1e-12,
            max_iters: 1_000_000,
            ..SolveConfig::default()
        };
        let rec = run_improvement(
            &m,
            &Policy::first_actions(&m),
            &BuilderConfig::all_states(15, 1),
            &cfg,
        );
        let out = rec.outputs.unwrap();
        assert!(
            out.optimality_gap <= 1e-6,
            "q {} gap {}",
            out.q_effective,
            out.optimality_gap
        );
    }

    #[test]
    fn record_round_trips_and_replays() {
        let m = gen_random_mdp(&RandomMdpSpec::new(8, 2, 3, 0.95, 2)).unwrap();
        let rec = run_improvement(
            &m,
            &Policy::first_actions(&m),
            &BuilderConfig::all_states(3, 2),
            &SolveConfig::default(),
        );
        let mut buf = Vec::new();
        rec.write_json(&mut buf).unwrap();
        let back = RunRecord::read_json(&buf[..]).unwrap();
        assert_eq!(back, rec);
        assert!(rec.replay(&m).unwrap().same_outputs(&rec));
    }

    #[test]
    fn failures_land_in_the_status() {
        let m = mdp_a();
        let rec = run_improvement(
            &m,
            &Policy(vec![0, 0]),
            &BuilderConfig::all_states(3, 1),
            &SolveConfig::default(),
        );
        assert!(matches!(rec.status, RunStatus::Failed(_)));
        assert!(rec.outputs.is_none());
    }
}
