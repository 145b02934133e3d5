//! Property checks over seeded instances, collected into one report.
//!
//! Each check walks a list of instances in parallel, derives a private RNG
//! stream per instance, and tallies a slack per case (`bound − measured`, so
//! negative means violated). Results are merged in instance order, so the
//! report does not depend on the thread count.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{adaptive_eval_run, adaptive_eval_step, AdaptiveEvalConfig, SSchedule};
use crate::aggregation::{
    aggregate_map_apply, aggregate_policy_map_apply, modified_costs, AggregationScheme,
};
use crate::bellman::{
    apply_power, bellman_optimal_apply, bellman_policy_apply, greedy_policy, policy_evaluate_exact,
    value_iterate_exact,
};
use crate::error::{Error, Result};
use crate::harness::experiment::{
    improvement_bound_slack, improvement_gammas, run_improvement, RunRecord,
};
use crate::harness::generate::{
    gen_gridworld, gen_random_mdp, random_bias, random_hard_scheme, random_policy, random_scheme,
    random_soft_scheme, GridworldSpec, RandomMdpSpec,
};
use crate::mdp::{fixtures, sup_distance, sup_norm, validate_mdp, CostFunction, Mdp, Policy};
use crate::scheme_builder::{
    build_scheme, within_aggregate_variation, BuilderConfig, IntervalRule, Sampling, SimilarityRule,
};
use crate::solvers::{
    aggregate_policy_iteration, restricted_map_apply, solve_fixed_point_exact,
    solve_fixed_point_exact_from, solve_policy_fixed_point, solve_stochastic,
    PolicyIterationStatus, SolveConfig, StepRule,
};

/// Discount factors cycled through by the random instance family.
pub const ALPHAS: [f64; 3] = [0.5, 0.9, 0.95];

/// Environment variable capping the verification thread pool.
pub const THREADS_ENV: &str = "BIASEDAGG_THREADS";

#[derive(Debug, Clone)]
pub struct Instance {
    pub label: String,
    pub mdp: Mdp,
}

/// MDP-0, MDP-A and the two-copies problem.
pub fn fixture_instances() -> Vec<Instance> {
    [
        ("mdp-0", fixtures::mdp0()),
        ("mdp-a", fixtures::mdp_a()),
        ("two-copies", fixtures::two_copies()),
    ]
    .into_iter()
    .map(|(label, mdp)| Instance {
        label: label.to_string(),
        mdp,
    })
    .collect()
}

/// Random MDPs with `2 ≤ n ≤ n_max`, 1–4 actions, branching up to 4 and
/// discount factors cycling through [`ALPHAS`].
pub fn random_instances(count: usize, n_max: usize, seed: u64) -> Vec<Instance> {
    (0..count)
        .map(|k| {
            let mut rng = stream(seed, k, 0);
            let n = rng.gen_range(2..=n_max.max(2));
            let actions = rng.gen_range(1..=4);
            let branching = rng.gen_range(1..=n.min(4));
            let spec =
                RandomMdpSpec::new(n, actions, branching, ALPHAS[k % ALPHAS.len()], rng.gen());
            Instance {
                label: format!("random-{k} (n={n}, α={})", spec.alpha),
                mdp: gen_random_mdp(&spec).expect("random spec is valid"),
            }
        })
        .collect()
}

fn stream(seed: u64, index: usize, salt: u64) -> ChaCha8Rng {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(salt);
    rng
}

#[derive(Debug, Clone)]
pub struct CheckContext {
    pub seed: u64,
    /// Multiplies α inside the aggregate mapping of the contraction check.
    pub fault_alpha_factor: Option<f64>,
    pub pairs_per_instance: usize,
    pub schemes_per_instance: usize,
}

impl CheckContext {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            fault_alpha_factor: None,
            pairs_per_instance: 20,
            schemes_per_instance: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Logged only; never fails the suite.
    pub informational: bool,
    pub cases: usize,
    pub failures: usize,
    /// Smallest `bound − measured` seen (negative when violated).
    pub worst_slack: f64,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match (self.informational, self.passed) {
            (true, _) => "INFO",
            (false, true) => "PASS",
            (false, false) => "FAIL",
        };
        write!(
            f,
            "{tag} {} cases={} failures={} worst_slack={:.3e}",
            self.name, self.cases, self.failures, self.worst_slack
        )?;
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct Tally {
    cases: usize,
    failures: usize,
    worst: f64,
    first_failure: Option<String>,
    notes: Vec<String>,
}

impl Tally {
    fn new() -> Self {
        Self {
            worst: f64::INFINITY,
            ..Self::default()
        }
    }

    fn slack(&mut self, slack: f64, what: impl FnOnce() -> String) {
        self.cases += 1;
        self.worst = self.worst.min(slack);
        if !(slack >= 0.0) {
            self.failures += 1;
            self.first_failure.get_or_insert_with(what);
        }
    }

    fn truth(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.slack(if ok { 0.0 } else { -1.0 }, what);
    }

    fn error(&mut self, label: &str, e: Error) {
        self.cases += 1;
        self.failures += 1;
        self.worst = self.worst.min(f64::NEG_INFINITY);
        self.first_failure
            .get_or_insert_with(|| format!("{label}: {e}"));
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.cases += other.cases;
        self.failures += other.failures;
        self.worst = self.worst.min(other.worst);
        if self.first_failure.is_none() {
            self.first_failure = other.first_failure;
        }
        self.notes.extend(other.notes);
        self
    }

    fn finish(self, name: &str, informational: bool) -> CheckResult {
        let mut detail = self.notes.join("; ");
        if let Some(f) = self.first_failure {
            if !detail.is_empty() {
                detail.push_str("; ");
            }
            detail.push_str(&format!("first failure: {f}"));
        }
        CheckResult {
            name: name.to_string(),
            passed: self.failures == 0 && self.cases > 0,
            informational,
            cases: self.cases,
            failures: self.failures,
            worst_slack: if self.cases == 0 {
                f64::NAN
            } else {
                self.worst
            },
            detail,
        }
    }
}

/// Runs `f` on every instance with its own RNG stream and merges the tallies in order.
fn per_instance<F>(instances: &[Instance], ctx: &CheckContext, salt: u64, f: F) -> Tally
where
    F: Fn(&Instance, &mut ChaCha8Rng, &mut Tally) -> Result<()> + Sync,
{
    instances
        .par_iter()
        .enumerate()
        .map(|(k, inst)| {
            let mut rng = stream(ctx.seed, k, salt);
            let mut t = Tally::new();
            if let Err(e) = f(inst, &mut rng, &mut t) {
                t.error(&inst.label, e);
            }
            t
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Tally::new(), Tally::merge)
}

fn tight(tol: f64) -> SolveConfig {
    SolveConfig {
        tol,
        max_iters: 2_000_000,
        ..SolveConfig::default()
    }
}

fn random_vector(n: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..=scale)).collect()
}

fn optimal(m: &Mdp) -> Result<CostFunction> {
    Ok(value_iterate_exact(m, 1e-12)?.values)
}

pub fn check_generated_valid(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 1, |inst, _, t| {
        let report = validate_mdp(&inst.mdp);
        t.truth(report.is_ok(), || {
            format!("{}: {:?}", inst.label, report.violations)
        });
        Ok(())
    })
    .finish("generated-mdps-valid", false)
}

/// `‖TJ − TJ′‖ ≤ α‖J − J′‖` and the same for `T_μ`, on random and shifted pairs.
pub fn check_bellman_contraction(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 2, |inst, rng, t| {
        let m = &inst.mdp;
        for p in 0..ctx.pairs_per_instance {
            let j = CostFunction(random_vector(m.n(), 10.0, rng));
            let j2 = if p % 4 == 0 {
                let c = rng.gen_range(-5.0..5.0);
                CostFunction(j.0.iter().map(|x| x + c).collect())
            } else {
                CostFunction(random_vector(m.n(), 10.0, rng))
            };
            let bound = m.alpha() * j.distance(&j2) + 1e-12;
            let gap = bellman_optimal_apply(m, &j)?
                .0
                .distance(&bellman_optimal_apply(m, &j2)?.0);
            t.slack(bound - gap, || {
                format!("{}: T expands by {gap}", inst.label)
            });
            let mu = random_policy(m, rng);
            let gap =
                bellman_policy_apply(m, &mu, &j)?.distance(&bellman_policy_apply(m, &mu, &j2)?);
            t.slack(bound - gap, || {
                format!("{}: T_mu expands by {gap}", inst.label)
            });
        }
        Ok(())
    })
    .finish("bellman-contraction", false)
}

pub fn check_bellman_monotone(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 3, |inst, rng, t| {
        let m = &inst.mdp;
        for _ in 0..ctx.pairs_per_instance {
            let j = random_vector(m.n(), 10.0, rng);
            let hi: Vec<f64> = j.iter().map(|x| x + rng.gen_range(0.0..3.0)).collect();
            let (a, _) = bellman_optimal_apply(m, &CostFunction(j))?;
            let (b, _) = bellman_optimal_apply(m, &CostFunction(hi))?;
            let slack =
                b.0.iter()
                    .zip(&a.0)
                    .map(|(b, a)| b - a)
                    .fold(f64::INFINITY, f64::min);
            t.slack(slack, || {
                format!("{}: monotonicity broken by {slack}", inst.label)
            });
        }
        Ok(())
    })
    .finish("bellman-monotone", false)
}

/// Linear-solve policy evaluation against 2000 applications of `T_μ` from 0.
pub fn check_policy_evaluation_oracle(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 4, |inst, rng, t| {
        let m = &inst.mdp;
        let mu = random_policy(m, rng);
        let exact = policy_evaluate_exact(m, &mu)?;
        let iterated = apply_power(m, &CostFunction::zeros(m.n()), 2000, Some(&mu))?;
        let gap = exact.distance(&iterated);
        t.slack(1e-6 - gap, || {
            format!("{}: evaluations differ by {gap}", inst.label)
        });
        Ok(())
    })
    .finish("policy-evaluation-oracle", false)
}

pub fn check_greedy_at_optimum(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 5, |inst, _, t| {
        let m = &inst.mdp;
        let jstar = value_iterate_exact(m, 1e-10)?.values;
        let mu = greedy_policy(m, &jstar)?;
        let gap = policy_evaluate_exact(m, &mu)?.distance(&jstar);
        t.slack(1e-8 - gap, || {
            format!("{}: greedy policy is off by {gap}", inst.label)
        });
        Ok(())
    })
    .finish("greedy-at-optimum", false)
}

pub fn check_determinism(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 6, |inst, rng, t| {
        let m = &inst.mdp;
        let a = value_iterate_exact(m, 1e-10)?;
        let b = value_iterate_exact(m, 1e-10)?;
        t.truth(a.values == b.values && a.policy == b.policy, || {
            format!("{}: value iteration", inst.label)
        });
        let sch = random_scheme(m.n(), 5, CostFunction::zeros(m.n()), rng)?;
        let cfg = SolveConfig {
            tol: 1e-9,
            max_iters: 5_000,
            seed: rng.gen(),
            ..SolveConfig::default()
        };
        let (x, _) = solve_stochastic(m, &sch, &cfg)?;
        let (y, _) = solve_stochastic(m, &sch, &cfg)?;
        t.truth(x.r == y.r, || format!("{}: stochastic solver", inst.label));
        let bcfg = BuilderConfig {
            q: m.n().min(3),
            ..BuilderConfig::default()
        };
        let v = CostFunction(random_vector(m.n(), 10.0, rng));
        let (s1, _) = build_scheme(m, &v, &bcfg)?;
        let (s2, _) = build_scheme(m, &v, &bcfg)?;
        t.truth(s1 == s2, || format!("{}: scheme builder", inst.label));
        Ok(())
    })
    .finish("determinism", false)
}

/// Contraction of `H` and `H_μ` over random schemes. With a fault factor the
/// mappings are evaluated with a tampered discount while the bound keeps `α`.
pub fn check_aggregate_contraction(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    let name = if ctx.fault_alpha_factor.is_some() {
        "aggregate-contraction (fault injected)"
    } else {
        "aggregate-contraction"
    };
    per_instance(instances, ctx, 7, |inst, rng, t| {
        let m = &inst.mdp;
        let mapped = match ctx.fault_alpha_factor {
            Some(f) => m.with_alpha_unchecked(m.alpha() * f),
            None => m.clone(),
        };
        let v = random_bias(m.n(), 10.0, rng);
        let sch = random_scheme(m.n(), 5, v, rng)?;
        let mu = random_policy(m, rng);
        for p in 0..ctx.pairs_per_instance {
            let r = random_vector(sch.q(), 10.0, rng);
            let r2: Vec<f64> = if p % 4 == 0 {
                let c = rng.gen_range(-5.0..5.0);
                r.iter().map(|x| x + c).collect()
            } else {
                random_vector(sch.q(), 10.0, rng)
            };
            let bound = m.alpha() * sup_distance(&r, &r2) + 1e-12;
            let gap = sup_distance(
                &aggregate_map_apply(&mapped, &sch, &r)?,
                &aggregate_map_apply(&mapped, &sch, &r2)?,
            );
            t.slack(bound - gap, || {
                format!("{}: H expands by {gap}", inst.label)
            });
            let gap = sup_distance(
                &aggregate_policy_map_apply(&mapped, &sch, &mu, &r)?,
                &aggregate_policy_map_apply(&mapped, &sch, &mu, &r2)?,
            );
            t.slack(bound - gap, || {
                format!("{}: H_mu expands by {gap}", inst.label)
            });
        }
        Ok(())
    })
    .finish(name, false)
}

/// The biased mapping equals the classical one on modified costs, their fixed
/// points agree, and the modified problem's optimum plus `V` is `J*`.
pub fn check_modified_cost_equivalence(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 8, |inst, rng, t| {
        let m = &inst.mdp;
        let jstar = optimal(m)?;
        for _ in 0..ctx.schemes_per_instance {
            let v = random_bias(m.n(), 10.0, rng);
            let modified = modified_costs(m, &v)?;
            let sch = random_scheme(m.n(), 5, v.clone(), rng)?;
            let classical = sch.with_bias(CostFunction::zeros(m.n()))?;
            for _ in 0..ctx.pairs_per_instance.min(5) {
                let r = random_vector(sch.q(), 10.0, rng);
                let gap = sup_distance(
                    &aggregate_map_apply(m, &sch, &r)?,
                    &aggregate_map_apply(&modified, &classical, &r)?,
                );
                t.slack(1e-12 - gap, || {
                    format!("{}: mappings differ by {gap}", inst.label)
                });
            }
            let (a, _) = solve_fixed_point_exact(m, &sch, &tight(1e-12))?;
            let (b, _) = solve_fixed_point_exact(&modified, &classical, &tight(1e-12))?;
            let gap = sup_distance(&a.r, &b.r);
            t.slack(1e-9 - gap, || {
                format!("{}: fixed points differ by {gap}", inst.label)
            });
            let shifted = value_iterate_exact(&modified, 1e-12)?.values;
            let recovered = CostFunction(shifted.0.iter().zip(&v.0).map(|(a, b)| a + b).collect());
            let gap = recovered.distance(&jstar);
            t.slack(1e-8 - gap, || {
                format!("{}: modified optimum misses J* by {gap}", inst.label)
            });
        }
        Ok(())
    })
    .finish("modified-cost-equivalence", false)
}

/// With `V = J*`: `r̃ ≈ 0`, `J̃1 ≈ J*`, and the extracted policy is optimal.
pub fn check_optimal_bias_exact(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 9, |inst, rng, t| {
        let m = &inst.mdp;
        let jstar = value_iterate_exact(m, 1e-10)?.values;
        for _ in 0..ctx.schemes_per_instance {
            let sch = random_scheme(m.n(), 5, jstar.clone(), rng)?;
            let (sol, _) = solve_fixed_point_exact(m, &sch, &tight(1e-12))?;
            let rn = sup_norm(&sol.r);
            t.slack(1e-8 - rn, || format!("{}: ‖r‖ = {rn}", inst.label));
            let gap = sol.j1.distance(&jstar);
            t.slack(1e-8 - gap, || format!("{}: ‖J1 − J*‖ = {gap}", inst.label));
            let gap = policy_evaluate_exact(m, &sol.policy)?.distance(&jstar);
            t.slack(1e-7 - gap, || {
                format!("{}: extracted policy off by {gap}", inst.label)
            });
        }
        Ok(())
    })
    .finish("optimal-bias-exact", false)
}

/// `‖r̃‖ ≤ ‖V − TV‖/(1−α)` for random bias functions.
pub fn check_bias_residual_bound(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 10, |inst, rng, t| {
        let m = &inst.mdp;
        for _ in 0..ctx.schemes_per_instance {
            let v = random_bias(m.n(), 10.0, rng);
            let residual = v.distance(&bellman_optimal_apply(m, &v)?.0);
            let sch = random_scheme(m.n(), 5, v, rng)?;
            let (sol, _) = solve_fixed_point_exact(m, &sch, &tight(1e-11))?;
            let rn = sup_norm(&sol.r);
            let bound = residual / (1.0 - m.alpha()) + 1e-9;
            t.slack(bound - rn, || {
                format!("{}: ‖r‖ = {rn} > {bound}", inst.label)
            });
        }
        Ok(())
    })
    .finish("bias-residual-bound", false)
}

/// One aggregate with `V = J_μ` reproduces the rollout policy exactly.
pub fn check_single_aggregate_rollout(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 11, |inst, rng, t| {
        let m = &inst.mdp;
        for _ in 0..ctx.schemes_per_instance {
            let mu = random_policy(m, rng);
            let jmu = policy_evaluate_exact(m, &mu)?;
            let sch = random_soft_scheme(m.n(), 1, jmu, rng)?;
            let (sol, _) = solve_fixed_point_exact(m, &sch, &tight(1e-12))?;
            let rollout = crate::bellman::rollout_policy(m, &mu)?;
            t.truth(sol.policy == rollout, || {
                format!(
                    "{}: {:?} vs rollout {:?}",
                    inst.label, sol.policy.0, rollout.0
                )
            });
        }
        Ok(())
    })
    .finish("single-aggregate-rollout", false)
}

/// Hard aggregation: `|J*(i) − V(i) − r̃(ℓ(i))| ≤ ε/(1−α)`, and singletons are exact.
pub fn check_hard_aggregation_bound(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 12, |inst, rng, t| {
        let m = &inst.mdp;
        let n = m.n();
        let jstar = optimal(m)?;
        for k in 0..ctx.schemes_per_instance {
            let v = if k % 2 == 0 {
                CostFunction::zeros(n)
            } else {
                random_bias(n, 10.0, rng)
            };
            let q = rng.gen_range(1..=n);
            let sch = random_hard_scheme(n, q, v.clone(), rng)?;
            let eps = within_aggregate_variation(&sch, &jstar)?;
            let (sol, _) = solve_fixed_point_exact(m, &sch, &tight(1e-12))?;
            let mem = sch.membership().expect("hard scheme");
            let bound = eps / (1.0 - m.alpha()) + 1e-9;
            for i in 0..n {
                let dev = (jstar[i] - v[i] - sol.r[mem[i]]).abs();
                t.slack(bound - dev, || {
                    format!("{}: state {} off by {dev} > {bound}", inst.label, i + 1)
                });
            }
        }
        let sch = AggregationScheme::singletons(random_bias(n, 10.0, rng));
        let (sol, _) = solve_fixed_point_exact(m, &sch, &tight(1e-12))?;
        let gap = policy_evaluate_exact(m, &sol.policy)?.distance(&jstar);
        t.slack(1e-6 - gap, || {
            format!("{}: singleton policy off by {gap}", inst.label)
        });
        Ok(())
    })
    .finish("hard-aggregation-bound", false)
}

/// With `V = J_μ` the policy-`μ` aggregate fixed point is zero and both lifts equal `J_μ`.
pub fn check_policy_bias_fixed_point(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 13, |inst, rng, t| {
        let m = &inst.mdp;
        let mu = random_policy(m, rng);
        let jmu = policy_evaluate_exact(m, &mu)?;
        let sch = random_scheme(m.n(), 5, jmu.clone(), rng)?;
        let r = solve_policy_fixed_point(m, &sch, &mu)?;
        let rn = sup_norm(&r);
        t.slack(1e-9 - rn, || format!("{}: ‖r_mu‖ = {rn}", inst.label));
        let j1 = crate::aggregation::lift_to_j1(&sch, &r)?;
        let j0 = bellman_policy_apply(m, &mu, &j1)?;
        let gap = j1.distance(&jmu).max(j0.distance(&jmu));
        t.slack(1e-9 - gap, || {
            format!("{}: lifts differ from J_mu by {gap}", inst.label)
        });
        Ok(())
    })
    .finish("policy-bias-fixed-point", false)
}

/// Policy iteration must stop on a repeated policy; a cycle or an
/// exhausted budget counts as a failure.
fn terminated(t: &mut Tally, label: &str, status: PolicyIterationStatus) {
    if status != PolicyIterationStatus::Converged {
        t.truth(false, || {
            format!("{label}: policy iteration ended with {status:?}")
        });
    }
}

/// `r̃ ≤ 0`, `γ ≤ 0` and `J_μ̃ ≤ J_μ − γ/(1−α)` when `V = J_μ`.
pub fn check_improvement_bound(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 14, |inst, rng, t| {
        let m = &inst.mdp;
        for _ in 0..ctx.schemes_per_instance {
            let mu = random_policy(m, rng);
            let jmu = policy_evaluate_exact(m, &mu)?;
            let sch = random_scheme(m.n(), 5, jmu.clone(), rng)?;
            let pi = aggregate_policy_iteration(m, &sch, &mu, &tight(1e-12))?;
            terminated(t, &inst.label, pi.status);
            let r = &pi.solution.r;
            let r_max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            t.slack(1e-12 - r_max, || format!("{}: max r = {r_max}", inst.label));
            let policy = &pi.solution.policy;
            let gamma = improvement_gammas(m, &sch, policy, r)
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            t.slack(1e-12 - gamma, || format!("{}: gamma = {gamma}", inst.label));
            let j_tilde = policy_evaluate_exact(m, policy)?;
            let slack = improvement_bound_slack(m.alpha(), gamma, &jmu, &j_tilde) + 1e-9;
            t.slack(slack, || {
                format!("{}: improvement bound violated by {}", inst.label, -slack)
            });
        }
        Ok(())
    })
    .finish("improvement-bound", false)
}

/// Exact iteration meets its tolerance and matches the linear solve at `μ̃`.
pub fn check_fixed_point_consistency(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    let tol = 1e-10;
    per_instance(instances, ctx, 15, |inst, rng, t| {
        let m = &inst.mdp;
        let v = random_bias(m.n(), 10.0, rng);
        let sch = random_scheme(m.n(), 5, v, rng)?;
        let (sol, _) = solve_fixed_point_exact(m, &sch, &tight(tol))?;
        t.slack(tol - sol.residual, || {
            format!("{}: residual {}", inst.label, sol.residual)
        });
        let r_mu = solve_policy_fixed_point(m, &sch, &sol.policy)?;
        let gap = sup_distance(&r_mu, &sol.r);
        t.slack(2.0 * tol - gap, || {
            format!("{}: linear solve differs by {gap}", inst.label)
        });
        let pi = aggregate_policy_iteration(m, &sch, &Policy::first_actions(m), &tight(tol))?;
        terminated(t, &inst.label, pi.status);
        let gap = sup_distance(&pi.solution.r, &sol.r);
        t.slack(1e-8 - gap, || {
            format!(
                "{}: policy iteration differs by {gap} ({:?})",
                inst.label, pi.status
            )
        });
        Ok(())
    })
    .finish("fixed-point-consistency", false)
}

/// Outcome of stochastic runs against exact fixed points.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticSummary {
    pub runs: usize,
    pub within: usize,
    pub worst: f64,
    pub replay_ok: bool,
    /// `(label, runs, within)` per case.
    pub per_case: Vec<(String, usize, usize)>,
}

impl StochasticSummary {
    pub fn pass_rate(&self) -> f64 {
        self.within as f64 / self.runs.max(1) as f64
    }
}

/// Harmonic gain `c = 1/(1−α)`.
pub fn harmonic_for(alpha: f64) -> StepRule {
    StepRule::Harmonic {
        c: 1.0 / (1.0 - alpha),
    }
}

/// Runs the stochastic solver per case and seed and compares with the exact
/// fixed point; the first seed of each case is also replayed.
pub fn stochastic_accuracy(
    cases: &[(String, Mdp, AggregationScheme)],
    seeds: &[u64],
    iterations: usize,
    tol: f64,
) -> Result<StochasticSummary> {
    let results = cases
        .par_iter()
        .map(|(label, m, sch)| -> Result<(String, Vec<f64>, bool)> {
            let (exact, _) = solve_fixed_point_exact(m, sch, &tight(1e-12))?;
            let mut errors = Vec::new();
            let mut replay_ok = true;
            for (k, &seed) in seeds.iter().enumerate() {
                let cfg = SolveConfig {
                    tol: 1e-12,
                    max_iters: iterations,
                    seed,
                    step_rule: harmonic_for(m.alpha()),
                    ..SolveConfig::default()
                };
                let (sol, _) = solve_stochastic(m, sch, &cfg)?;
                if k == 0 {
                    replay_ok &= solve_stochastic(m, sch, &cfg)?.0.r == sol.r;
                }
                errors.push(sup_distance(&sol.r, &exact.r));
            }
            Ok((label.clone(), errors, replay_ok))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = StochasticSummary {
        runs: 0,
        within: 0,
        worst: 0.0,
        replay_ok: true,
        per_case: Vec::new(),
    };
    for (label, errors, replay_ok) in results {
        let within = errors.iter().filter(|&&e| e <= tol).count();
        summary.runs += errors.len();
        summary.within += within;
        summary.worst = errors.iter().copied().fold(summary.worst, f64::max);
        summary.replay_ok &= replay_ok;
        summary.per_case.push((label, errors.len(), within));
    }
    Ok(summary)
}

/// Fixture schemes used by the stochastic and warm-start checks.
pub fn fixture_schemes() -> Vec<(String, Mdp, AggregationScheme)> {
    let a = fixtures::mdp_a();
    let jstar = value_iterate_exact(&a, 1e-12)
        .expect("fixture solves")
        .values;
    vec![
        (
            "mdp-0 single".into(),
            fixtures::mdp0(),
            AggregationScheme::single(CostFunction::zeros(1)),
        ),
        (
            "mdp-a single".into(),
            a.clone(),
            AggregationScheme::single(CostFunction::zeros(2)),
        ),
        (
            "mdp-a singletons".into(),
            a.clone(),
            AggregationScheme::singletons(CostFunction::zeros(2)),
        ),
        (
            "mdp-a singletons, V = J*".into(),
            a,
            AggregationScheme::singletons(jstar),
        ),
        (
            "two-copies single".into(),
            fixtures::two_copies(),
            AggregationScheme::single(CostFunction::zeros(2)),
        ),
    ]
}

pub fn check_stochastic_fixtures(seeds: &[u64]) -> CheckResult {
    let mut t = Tally::new();
    match stochastic_accuracy(&fixture_schemes(), seeds, 100_000, 1e-2) {
        Ok(s) => {
            for (label, runs, within) in &s.per_case {
                for k in 0..*runs {
                    t.truth(k < *within, || {
                        format!("{label}: {} of {runs} seeds outside 1e-2", runs - within)
                    });
                }
            }
            t.truth(s.replay_ok, || "replay differs".into());
            t.notes.push(format!("worst error {:.3e}", s.worst));
        }
        Err(e) => t.error("fixtures", e),
    }
    t.finish("stochastic-fixtures", false)
}

/// Outcome of the warm-start checks.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartSummary {
    pub applicable: usize,
    pub skipped: usize,
    /// Worst `Ĥ(r̂) − r̂` over all applicable schemes (the linear program's constraint).
    pub restricted_slack: f64,
    /// Worst `H(r̂) − r̂` over fixtures, where restriction changes nothing.
    pub fixture_slack: f64,
    /// Random schemes on which `r̂ ≤ H(r̂)` fails for the unrestricted `H`.
    pub unrestricted_violations: usize,
    pub fixtures_converged: bool,
    /// `(label, iterations from 0, iterations from r̂)` on fixtures.
    pub iterations: Vec<(String, usize, usize)>,
}

fn min_gap(hi: &[f64], lo: &[f64]) -> f64 {
    hi.iter()
        .zip(lo)
        .map(|(a, b)| a - b)
        .fold(f64::INFINITY, f64::min)
}

pub fn warm_start_summary(instances: &[Instance], ctx: &CheckContext) -> Result<WarmStartSummary> {
    let mut s = WarmStartSummary {
        applicable: 0,
        skipped: 0,
        restricted_slack: f64::INFINITY,
        fixture_slack: f64::INFINITY,
        unrestricted_violations: 0,
        fixtures_converged: true,
        iterations: Vec::new(),
    };
    let cfg = tight(1e-12);
    for (label, m, sch) in fixture_schemes() {
        if sch.membership().is_none() {
            continue;
        }
        let r_hat = match crate::solvers::warm_start_restricted(&m, &sch) {
            Ok(r) => r,
            Err(Error::HeterogeneousActions { .. }) => {
                s.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        s.applicable += 1;
        s.restricted_slack = s
            .restricted_slack
            .min(min_gap(&restricted_map_apply(&m, &sch, &r_hat)?, &r_hat));
        s.fixture_slack = s
            .fixture_slack
            .min(min_gap(&aggregate_map_apply(&m, &sch, &r_hat)?, &r_hat));
        let (_, cold) = solve_fixed_point_exact(&m, &sch, &cfg)?;
        let (_, warm) = solve_fixed_point_exact_from(&m, &sch, &cfg, &r_hat)?;
        s.fixtures_converged &= warm.converged();
        s.iterations
            .push((label, cold.iterations(), warm.iterations()));
    }
    let per = instances
        .par_iter()
        .enumerate()
        .map(|(k, inst)| -> Result<Vec<Option<(f64, f64)>>> {
            let mut rng = stream(ctx.seed, k, 16);
            let m = &inst.mdp;
            (0..ctx.schemes_per_instance)
                .map(|_| {
                    let q = rng.gen_range(1..=m.n());
                    let sch =
                        random_hard_scheme(m.n(), q, random_bias(m.n(), 10.0, &mut rng), &mut rng)?;
                    match crate::solvers::warm_start_restricted(m, &sch) {
                        Ok(r_hat) => Ok(Some((
                            min_gap(&restricted_map_apply(m, &sch, &r_hat)?, &r_hat),
                            min_gap(&aggregate_map_apply(m, &sch, &r_hat)?, &r_hat),
                        ))),
                        Err(Error::HeterogeneousActions { .. }) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    for outcome in per.into_iter().flatten() {
        match outcome {
            Some((restricted, unrestricted)) => {
                s.applicable += 1;
                s.restricted_slack = s.restricted_slack.min(restricted);
                if unrestricted < -1e-9 {
                    s.unrestricted_violations += 1;
                }
            }
            None => s.skipped += 1,
        }
    }
    Ok(s)
}

pub fn check_warm_start(instances: &[Instance], ctx: &CheckContext) -> Vec<CheckResult> {
    let mut t = Tally::new();
    let mut info = Tally::new();
    match warm_start_summary(instances, ctx) {
        Ok(s) => {
            t.slack(s.restricted_slack + 1e-9, || {
                format!("restricted constraint violated by {}", -s.restricted_slack)
            });
            t.slack(s.fixture_slack + 1e-9, || {
                format!("fixture r̂ ≤ H(r̂) violated by {}", -s.fixture_slack)
            });
            t.truth(s.fixtures_converged, || {
                "iteration from r̂ did not converge on a fixture".into()
            });
            t.notes.push(format!(
                "{} applicable, {} skipped",
                s.applicable, s.skipped
            ));
            for (label, cold, warm) in &s.iterations {
                info.truth(true, String::new);
                info.notes
                    .push(format!("{label}: {cold} iterations from 0, {warm} from r̂"));
            }
            info.notes.push(format!(
                "unrestricted r̂ ≤ H(r̂) fails on {} random schemes",
                s.unrestricted_violations
            ));
        }
        Err(e) => t.error("warm start", e),
    }
    vec![
        t.finish("warm-start", false),
        info.finish("warm-start-iterations", true),
    ]
}

/// Builder output is always a valid scheme, for random builder settings.
pub fn check_builder_valid(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 17, |inst, rng, t| {
        let m = &inst.mdp;
        let n = m.n();
        let sample_count = rng.gen_range(1..=n);
        let cfg = BuilderConfig {
            sample_count,
            s: rng.gen_range(1..=3),
            q: rng.gen_range(1..=sample_count),
            interval_rule: if rng.gen_bool(0.5) {
                IntervalRule::EqualCount
            } else {
                IntervalRule::EqualWidth
            },
            similarity_rule: if rng.gen_bool(0.5) {
                SimilarityRule::NearestResidual
            } else {
                SimilarityRule::Uniform
            },
            sampling: if rng.gen_bool(0.5) {
                Sampling::AllStates
            } else {
                Sampling::UniformWithoutReplacement
            },
            seed: rng.gen(),
            ..BuilderConfig::default()
        };
        let v = random_bias(n, 10.0, rng);
        let (sch, p) = build_scheme(m, &v, &cfg)?;
        let violations = sch.violations();
        t.truth(violations.is_empty(), || {
            format!("{}: {violations:?}", inst.label)
        });
        t.truth(p.q() >= 1 && p.q() <= cfg.q, || {
            format!("{}: {} buckets", inst.label, p.q())
        });
        Ok(())
    })
    .finish("scheme-builder-valid", false)
}

/// Whether the variation measure shrinks as equal-count buckets are added (logged).
pub fn check_refinement_monotone(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    let small: Vec<Instance> = instances
        .iter()
        .filter(|i| i.mdp.n() <= 12)
        .cloned()
        .collect();
    let mut t = per_instance(&small, ctx, 18, |inst, rng, t| {
        let m = &inst.mdp;
        let jstar = optimal(m)?;
        let v = random_bias(m.n(), 10.0, rng);
        let mut prev = f64::INFINITY;
        let mut monotone = true;
        for q in 1..=m.n() {
            let (sch, _) = build_scheme(m, &v, &BuilderConfig::all_states(q, 1))?;
            let eps = within_aggregate_variation(&sch, &jstar)?;
            monotone &= eps <= prev + 1e-12;
            prev = eps;
        }
        t.truth(monotone, || {
            format!("{}: variation grew with q", inst.label)
        });
        Ok(())
    });
    t.notes.push(format!(
        "{} of {} instances non-monotone",
        t.failures, t.cases
    ));
    t.first_failure = None;
    t.finish("refinement-monotone", true)
}

pub fn check_adaptive_stationary(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 19, |inst, rng, t| {
        let m = &inst.mdp;
        let mu = random_policy(m, rng);
        let jmu = policy_evaluate_exact(m, &mu)?;
        for s in 1..=3 {
            let cfg = AdaptiveEvalConfig {
                s_schedule: SSchedule::Constant(s),
                q: rng.gen_range(1..=3),
                ..AdaptiveEvalConfig::default()
            };
            let (next, _) = adaptive_eval_step(m, &mu, &jmu, &cfg, 0)?;
            let gap = next.distance(&jmu);
            t.slack(1e-9 - gap, || {
                format!("{}: J_mu moved by {gap}", inst.label)
            });
        }
        Ok(())
    })
    .finish("adaptive-stationary", false)
}

/// The plain `s`-fold `T_μ` part contracts the error by `α^s`; the corrected
/// step's error ratio is logged alongside.
pub fn check_adaptive_plain_contraction(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    let mut t = per_instance(instances, ctx, 20, |inst, rng, t| {
        let m = &inst.mdp;
        let mu = random_policy(m, rng);
        let jmu = policy_evaluate_exact(m, &mu)?;
        let s = rng.gen_range(1..=3);
        let j = CostFunction(random_vector(m.n(), 10.0, rng));
        let before = j.distance(&jmu);
        let plain = apply_power(m, &j, s, Some(&mu))?.distance(&jmu);
        let bound = m.alpha().powi(s as i32) * before + 1e-9;
        t.slack(bound - plain, || {
            format!("{}: plain step error {plain} > {bound}", inst.label)
        });
        let cfg = AdaptiveEvalConfig {
            s_schedule: SSchedule::Constant(s),
            ..AdaptiveEvalConfig::default()
        };
        let (next, _) = adaptive_eval_step(m, &mu, &j, &cfg, 0)?;
        if plain > 0.0 {
            t.notes.push(format!("{:.2}", next.distance(&jmu) / plain));
        }
        Ok(())
    });
    let mut ratios: Vec<f64> = t.notes.iter().filter_map(|s| s.parse().ok()).collect();
    ratios.sort_by(f64::total_cmp);
    t.notes = if ratios.is_empty() {
        Vec::new()
    } else {
        vec![format!(
            "corrected/plain error ratio median {:.2}, max {:.2}",
            ratios[ratios.len() / 2],
            ratios[ratios.len() - 1]
        )]
    };
    t.finish("adaptive-plain-contraction", false)
}

/// Full-sample adaptive evaluation with `s ≡ 2`, `q = 3` reaches `J_μ` within 200 steps.
pub fn check_adaptive_convergence(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    let mut t = per_instance(instances, ctx, 21, |inst, rng, t| {
        let m = &inst.mdp;
        let mu = random_policy(m, rng);
        let cfg = AdaptiveEvalConfig {
            s_schedule: SSchedule::Constant(2),
            q: 3,
            outer_iters: 200,
            tol: 1e-10,
            ..AdaptiveEvalConfig::default()
        };
        let run = adaptive_eval_run(m, &mu, &cfg)?;
        let err = run.final_error.unwrap_or(f64::INFINITY);
        t.slack(1e-6 - err, || {
            format!(
                "{}: error {err} after {} steps",
                inst.label,
                run.trace.len()
            )
        });
        let unguarded = AdaptiveEvalConfig {
            safeguard: false,
            ..cfg
        };
        let run = adaptive_eval_run(m, &mu, &unguarded)?;
        if !(run.final_error.unwrap_or(f64::INFINITY) <= 1e-6) {
            t.notes.push(inst.label.clone());
        }
        Ok(())
    });
    t.notes = vec![if t.notes.is_empty() {
        "unsafeguarded variant also converges everywhere".to_string()
    } else {
        format!(
            "unsafeguarded variant misses 1e-6 on {}",
            t.notes.join(", ")
        )
    }];
    t.finish("adaptive-convergence", false)
}

/// JSON round trips of problems, schemes and run records, plus run replay.
pub fn check_persistence(instances: &[Instance], ctx: &CheckContext) -> CheckResult {
    per_instance(instances, ctx, 22, |inst, rng, t| {
        let m = &inst.mdp;
        let mut buf = Vec::new();
        m.write_json(&mut buf)?;
        t.truth(Mdp::read_json(&buf[..])? == *m, || {
            format!("{}: MDP round trip", inst.label)
        });
        let sch = random_scheme(m.n(), 5, random_bias(m.n(), 10.0, rng), rng)?;
        let mut buf = Vec::new();
        sch.write_json(&mut buf)?;
        t.truth(AggregationScheme::read_json(&buf[..])? == sch, || {
            format!("{}: scheme round trip", inst.label)
        });
        let base = random_policy(m, rng);
        let rec = run_improvement(
            m,
            &base,
            &BuilderConfig::all_states(m.n().min(3), 1),
            &tight(1e-10),
        );
        let mut buf = Vec::new();
        rec.write_json(&mut buf)?;
        let back = RunRecord::read_json(&buf[..])?;
        t.truth(back == rec, || {
            format!("{}: run record round trip", inst.label)
        });
        t.truth(rec.replay(m)?.same_outputs(&rec), || {
            format!("{}: replay differs", inst.label)
        });
        Ok(())
    })
    .finish("persistence-replay", false)
}

fn grid_distances(w: usize, h: usize, goal: usize) -> Vec<usize> {
    let n = w * h;
    let mut dist = vec![usize::MAX; n];
    dist[goal] = 0;
    let mut frontier = vec![goal];
    let mut d = 0;
    while !frontier.is_empty() {
        d += 1;
        let mut next = Vec::new();
        for c in frontier {
            let (x, y) = (c % w, c / w);
            let nbrs = [
                (x > 0).then(|| c - 1),
                (x + 1 < w).then(|| c + 1),
                (y > 0).then(|| c - w),
                (y + 1 < h).then(|| c + w),
            ];
            for nb in nbrs.into_iter().flatten() {
                if dist[nb] == usize::MAX {
                    dist[nb] = d;
                    next.push(nb);
                }
            }
        }
        frontier = next;
    }
    dist
}

/// Noise-free gridworlds: `J*` is the discounted length of a shortest path.
pub fn check_gridworld_paths(count: usize, ctx: &CheckContext) -> CheckResult {
    let specs: Vec<GridworldSpec> = (0..count)
        .map(|k| {
            let mut rng = stream(ctx.seed, k, 23);
            let (width, height) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            GridworldSpec {
                width,
                height,
                noise: 0.0,
                alpha: ALPHAS[k % ALPHAS.len()],
                goal: Some(rng.gen_range(0..width * height)),
            }
        })
        .collect();
    let mut t = Tally::new();
    for spec in specs {
        let label = format!("{}×{} grid", spec.width, spec.height);
        let outcome = (|| -> Result<f64> {
            let m = gen_gridworld(&spec)?;
            let jstar = optimal(&m)?;
            let goal = spec.goal.unwrap_or(spec.width * spec.height - 1);
            Ok(grid_distances(spec.width, spec.height, goal)
                .into_iter()
                .enumerate()
                .map(|(c, d)| {
                    let path: f64 = (0..d).map(|k| spec.alpha.powi(k as i32)).sum();
                    (jstar[c] - path).abs()
                })
                .fold(0.0, f64::max))
        })();
        match outcome {
            Ok(gap) => t.slack(1e-9 - gap, || format!("{label}: off by {gap}")),
            Err(e) => t.error(&label, e),
        }
    }
    t.finish("gridworld-shortest-path", false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Small,
    Full,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub scale: Scale,
    pub seed: u64,
    pub fault_alpha_factor: Option<f64>,
    /// Overrides [`THREADS_ENV`].
    pub threads: Option<usize>,
}

impl VerifyOptions {
    pub fn new(scale: Scale, seed: u64) -> Self {
        Self {
            scale,
            seed,
            fault_alpha_factor: None,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub scale: Scale,
    pub seed: u64,
    pub instances: usize,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.informational || c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.informational && !c.passed)
    }

    pub fn write_text(&self, mut w: impl Write) -> std::io::Result<()> {
        for c in &self.checks {
            writeln!(w, "{c}")?;
        }
        let failed = self.failed().count();
        writeln!(
            w,
            "{} checks, {failed} failed ({} instances, scale {:?}, seed {})",
            self.checks.len(),
            self.instances,
            self.scale,
            self.seed
        )
    }
}

fn thread_count(opts: &VerifyOptions) -> Option<usize> {
    opts.threads
        .or_else(|| {
            std::env::var(THREADS_ENV)
                .ok()
                .and_then(|v| v.trim().parse().ok())
        })
        .filter(|&n| n > 0)
}

/// Runs every property check; fixtures plus 10 (small) or 100 (full) random instances.
pub fn verify_suite(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(opts) {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(|| run_checks(opts)))
}

fn run_checks(opts: &VerifyOptions) -> VerifyReport {
    let random = match opts.scale {
        Scale::Small => 10,
        Scale::Full => 100,
    };
    let mut instances = fixture_instances();
    instances.extend(random_instances(random, 20, opts.seed));
    let mut ctx = CheckContext::new(opts.seed);
    let mut checks = vec![
        check_generated_valid(&instances, &ctx),
        check_bellman_contraction(&instances, &ctx),
        check_bellman_monotone(&instances, &ctx),
        check_policy_evaluation_oracle(&instances, &ctx),
        check_greedy_at_optimum(&instances, &ctx),
        check_determinism(&instances, &ctx),
    ];
    ctx.fault_alpha_factor = opts.fault_alpha_factor;
    checks.push(check_aggregate_contraction(&instances, &ctx));
    ctx.fault_alpha_factor = None;
    checks.extend([
        check_modified_cost_equivalence(&instances, &ctx),
        check_optimal_bias_exact(&instances, &ctx),
        check_bias_residual_bound(&instances, &ctx),
        check_single_aggregate_rollout(&instances, &ctx),
        check_hard_aggregation_bound(&instances, &ctx),
        check_policy_bias_fixed_point(&instances, &ctx),
        check_improvement_bound(&instances, &ctx),
        check_fixed_point_consistency(&instances, &ctx),
        check_stochastic_fixtures(&(1..=10).collect::<Vec<_>>()),
    ]);
    checks.extend(check_warm_start(&instances, &ctx));
    checks.extend([
        check_builder_valid(&instances, &ctx),
        check_refinement_monotone(&instances, &ctx),
        check_adaptive_stationary(&instances, &ctx),
        check_adaptive_plain_contraction(&instances, &ctx),
        check_adaptive_convergence(&instances, &ctx),
        check_persistence(&instances, &ctx),
        check_gridworld_paths(random.min(20), &ctx),
    ]);
    VerifyReport {
        scale: opts.scale,
        seed: opts.seed,
        instances: instances.len(),
        checks,
    }
}
