//! Policy evaluation by adaptive aggregation.
//!
//! Each outer step runs `s_k` applications of `T_μ`, groups states by their
//! residuals, solves the single-policy aggregate problem with bias
//! `V_k = T_μ^{s_k−1} Ĵ_k`, and folds the aggregate correction back in.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bellman::{apply_power, bellman_policy_apply, policy_evaluate_exact};
use crate::error::{check_len, Error, Result};
use crate::mdp::{sup_distance, CostFunction, Mdp, Policy};
use crate::scheme_builder::{
    partition_residuals, scheme_from_partition, BuilderConfig, IntervalRule, Sampling,
    SimilarityRule,
};
use crate::solvers::solve_policy_fixed_point;
use crate::AggregationScheme;

/// Largest `n` for which the run computes the exact `J_μ` as an error oracle.
pub const ORACLE_MAX_STATES: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SSchedule {
    Constant(usize),
    /// `s_k` for the first steps; the last entry repeats afterwards.
    Sequence(Vec<usize>),
}

impl SSchedule {
    fn at(&self, k: usize) -> usize {
        match self {
            SSchedule::Constant(s) => *s,
            SSchedule::Sequence(seq) => seq[k.min(seq.len() - 1)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    /// `Ĵ_k − T_μ^{s_k} Ĵ_k`.
    Multistep,
    /// `T_μ^{s_k−1} Ĵ_k − T_μ^{s_k} Ĵ_k`.
    SingleStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveEvalConfig {
    pub s_schedule: SSchedule,
    pub q: usize,
    pub outer_iters: usize,
    pub tol: f64,
    pub sampling: Sampling,
    /// Sample size when subsampling.
    pub sample_count: usize,
    pub seed: u64,
    pub residual_mode: ResidualMode,
    pub interval_rule: IntervalRule,
    /// Raise `s` by one whenever the residual shrinks by less than `α + 0.05`.
    pub adaptive_s: bool,
    /// Keep the corrected iterate only if its Bellman residual is no worse
    /// than that of the plain `T_μ^{s_k} Ĵ_k`. Without it the iteration can
    /// diverge for discount factors near 1.
    pub safeguard: bool,
}

impl Default for AdaptiveEvalConfig {
    fn default() -> Self {
        Self {
            s_schedule: SSchedule::Constant(2),
            q: 3,
            outer_iters: 200,
            tol: 1e-10,
            sampling: Sampling::AllStates,
            sample_count: 0,
            seed: 0,
            residual_mode: ResidualMode::Multistep,
            interval_rule: IntervalRule::EqualCount,
            adaptive_s: false,
            safeguard: true,
        }
    }
}

impl AdaptiveEvalConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad_s = match &self.s_schedule {
            SSchedule::Constant(s) => *s < 1,
            SSchedule::Sequence(seq) => seq.is_empty() || seq.iter().any(|&s| s < 1),
        };
        if bad_s {
            return Err(Error::InvalidConfig("every s_k must be at least 1".into()));
        }
        if self.outer_iters < 1 {
            return Err(Error::InvalidConfig(
                "need at least one outer iteration".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.q < 1 {
            return Err(Error::InvalidConfig("q must be at least 1".into()));
        }
        self.builder(1, n).validate(n)
    }

    /// Bucket count is capped at the sample size, so small problems still run.
    fn builder(&self, s: usize, n: usize) -> BuilderConfig {
        let m = match self.sampling {
            Sampling::AllStates => n,
            Sampling::UniformWithoutReplacement => self.sample_count,
        };
        BuilderConfig {
            sample_count: self.sample_count,
            s,
            q: self.q.min(m).max(1),
            interval_rule: self.interval_rule,
            similarity_rule: SimilarityRule::NearestResidual,
            sampling: self.sampling,
            seed: self.seed,
            tie_tol: 1e-9,
            labels: None,
        }
    }
}

/// `ξ[j][k]`: weight of the `k`-th sampled state in the interpolation of state `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationWeights {
    pub sample: Vec<usize>,
    pub xi: Vec<Vec<f64>>,
}

impl InterpolationWeights {
    /// `Σ_k ξ[j][k] f(sample[k])` for every `j`.
    pub fn interpolate(&self, f: &[f64]) -> Vec<f64> {
        self.xi
            .iter()
            .map(|row| row.iter().zip(&self.sample).map(|(w, &i)| w * f[i]).sum())
            .collect()
    }
}

/// `ξ_ji = Σ_ℓ φ_jℓ d_ℓi` over the sampled states.
pub fn interpolation_weights(
    sch: &AggregationScheme,
    sample: &[usize],
) -> Result<InterpolationWeights> {
    let mut pos = vec![None; sch.n()];
    for (k, &i) in sample.iter().enumerate() {
        if i >= sch.n() {
            return Err(Error::InvalidConfig(format!(
                "sample state {} outside 1..={}",
                i + 1,
                sch.n()
            )));
        }
        pos[i] = Some(k);
    }
    for x in 0..sch.q() {
        if let Some(&(i, _)) = sch.d_support(x).iter().find(|(i, _)| pos[*i].is_none()) {
            return Err(Error::MassOutsideSample {
                aggregate: x + 1,
                state: i + 1,
            });
        }
    }
    let xi = (0..sch.n())
        .map(|j| {
            let mut row = vec![0.0; sample.len()];
            for &(l, f) in sch.phi_support(j) {
                for &(i, w) in sch.d_support(l) {
                    row[pos[i].unwrap()] += f * w;
                }
            }
            row
        })
        .collect();
    Ok(InterpolationWeights {
        sample: sample.to_vec(),
        xi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub k: usize,
    pub s: usize,
    pub q_effective: usize,
    /// `‖Ĵ_k − T_μ Ĵ_k‖∞`.
    pub residual: f64,
    /// `‖Ĵ_k − J_μ‖∞` when the oracle is available.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
    pub r_hat: Vec<f64>,
    /// False when the safeguard rejected the aggregate correction.
    pub corrected: bool,
}

/// One outer step from `Ĵ_k`, returning `Ĵ_{k+1}`.
pub fn adaptive_eval_step(
    m: &Mdp,
    mu: &Policy,
    j_hat: &CostFunction,
    cfg: &AdaptiveEvalConfig,
    k: usize,
) -> Result<(CostFunction, StepDiagnostics)> {
    step_with_s(m, mu, j_hat, cfg, k, cfg.s_schedule.at(k))
}

fn step_with_s(
    m: &Mdp,
    mu: &Policy,
    j_hat: &CostFunction,
    cfg: &AdaptiveEvalConfig,
    k: usize,
    s: usize,
) -> Result<(CostFunction, StepDiagnostics)> {
    cfg.validate(m.n())?;
    mu.validate(m)?;
    check_len("cost function", m.n(), j_hat.len())?;
    let v = apply_power(m, j_hat, s - 1, Some(mu))?;
    let tv = bellman_policy_apply(m, mu, &v)?;
    let base = match cfg.residual_mode {
        ResidualMode::Multistep => j_hat,
        ResidualMode::SingleStep => &v,
    };
    let residuals: Vec<f64> = base.0.iter().zip(&tv.0).map(|(a, b)| a - b).collect();
    let bcfg = cfg.builder(s, m.n());
    let sample = crate::scheme_builder::sample_states(m, &bcfg)?;
    let full = sample.len() == m.n();
    let partition = partition_residuals(residuals, sample, &bcfg);
    let sch = scheme_from_partition(&partition, v, &bcfg)?;
    let r_hat = solve_policy_fixed_point(m, &sch, mu)?;

    let alpha = m.alpha();
    let corr = sch.correction(&r_hat);
    let mut next: Vec<f64> = (0..m.n())
        .map(|i| {
            let lookahead: f64 = m
                .transitions(i, mu.0[i])
                .iter()
                .map(|t| t.p * corr[t.to])
                .sum();
            tv[i] + alpha * lookahead
        })
        .collect();
    if !full {
        let weights = interpolation_weights(&sch, &partition.sample)?;
        let filled = weights.interpolate(&next);
        let mut sampled = vec![false; m.n()];
        partition.sample.iter().for_each(|&i| sampled[i] = true);
        for j in 0..m.n() {
            if !sampled[j] {
                next[j] = filled[j];
            }
        }
    }
    let mut next = CostFunction(next);
    let mut corrected = true;
    if cfg.safeguard {
        let plain = tv;
        if policy_residual(m, mu, &next)? > policy_residual(m, mu, &plain)? {
            next = plain;
            corrected = false;
        }
    }
    let diag = StepDiagnostics {
        k,
        s,
        q_effective: partition.q(),
        residual: policy_residual(m, mu, j_hat)?,
        error: None,
        r_hat,
        corrected,
    };
    Ok((next, diag))
}

fn policy_residual(m: &Mdp, mu: &Policy, j: &CostFunction) -> Result<f64> {
    Ok(j.distance(&bellman_policy_apply(m, mu, j)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptiveStatus {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveEvalResult {
    pub values: CostFunction,
    pub trace: Vec<StepDiagnostics>,
    pub status: AdaptiveStatus,
    /// Error of the returned values against `J_μ`, when the oracle ran.
    pub final_error: Option<f64>,
}

impl AdaptiveEvalResult {
    /// CSV `k,s,q_effective,residual,error`.
    pub fn write_trace_csv(&self, writer: impl Write) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            k: usize,
            s: usize,
            q_effective: usize,
            residual: f64,
            error: Option<f64>,
        }
        let mut w = csv::Writer::from_writer(writer);
        for d in &self.trace {
            w.serialize(Row {
                k: d.k,
                s: d.s,
                q_effective: d.q_effective,
                residual: d.residual,
                error: d.error,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs outer steps from `Ĵ_0 = 0`.
pub fn adaptive_eval_run(
    m: &Mdp,
    mu: &Policy,
    cfg: &AdaptiveEvalConfig,
) -> Result<AdaptiveEvalResult> {
    adaptive_eval_run_from(m, mu, cfg, CostFunction::zeros(m.n()))
}

pub fn adaptive_eval_run_from(
    m: &Mdp,
    mu: &Policy,
    cfg: &AdaptiveEvalConfig,
    j0: CostFunction,
) -> Result<AdaptiveEvalResult> {
    cfg.validate(m.n())?;
    mu.validate(m)?;
    check_len("initial cost function", m.n(), j0.len())?;
    let oracle = if m.n() <= ORACLE_MAX_STATES {
        Some(policy_evaluate_exact(m, mu)?)
    } else {
        None
    };
    let mut j = j0;
    let mut trace = Vec::new();
    let mut status = AdaptiveStatus::MaxIters;
    let mut s = cfg.s_schedule.at(0);
    for k in 0..cfg.outer_iters {
        if !cfg.adaptive_s {
            s = cfg.s_schedule.at(k);
        }
        let (next, mut diag) = step_with_s(m, mu, &j, cfg, k, s)?;
        diag.error = oracle.as_ref().map(|o| j.distance(o));
        if cfg.adaptive_s {
            if let Some(prev) = trace.last().map(|d: &StepDiagnostics| d.residual) {
                if prev > 0.0 && diag.residual / prev > m.alpha() + 0.05 {
                    s += 1;
                }
            }
        }
        trace.push(diag);
        let step = sup_distance(&next.0, &j.0);
        j = next;
        if step <= cfg.tol {
            status = AdaptiveStatus::Converged;
            break;
        }
    }
    let final_error = oracle.as_ref().map(|o| j.distance(o));
    Ok(AdaptiveEvalResult {
        values: j,
        trace,
        status,
        final_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::{mdp0, mdp_a};

    #[test]
    fn interpolation_examples() {
        let w = interpolation_weights(
            &AggregationScheme::singletons(CostFunction::zeros(2)),
            &[0, 1],
        )
        .unwrap();
        assert_eq!(w.xi, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let w = interpolation_weights(&AggregationScheme::single(CostFunction::zeros(2)), &[0, 1])
            .unwrap();
        assert_eq!(w.xi, vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert!(matches!(
            interpolation_weights(&AggregationScheme::single(CostFunction::zeros(2)), &[1]),
            Err(Error::MassOutsideSample {
                aggregate: 1,
                state: 1
            })
        ));
    }

    #[test]
    fn one_step_examples() {
        let cfg = AdaptiveEvalConfig {
            s_schedule: SSchedule::Constant(1),
            q: 1,
            ..AdaptiveEvalConfig::default()
        };
        let (j1, diag) =
            adaptive_eval_step(&mdp0(), &Policy(vec![0]), &CostFunction(vec![0.0]), &cfg, 0)
                .unwrap();
        assert!((diag.r_hat[0] - 2.0).abs() < 1e-12);
        assert!((j1[0] - 2.0).abs() < 1e-12);

        let m = mdp_a();
        let aa = Policy(vec![0, 0]);
        let cfg = AdaptiveEvalConfig { q: 2, ..cfg };
        let (j1, diag) = adaptive_eval_step(&m, &aa, &CostFunction::zeros(2), &cfg, 0).unwrap();
        assert_eq!(diag.q_effective, 2);
        assert!(j1.distance(&CostFunction(vec![4.0, 2.0])) < 1e-12);
    }

    #[test]
    fn policy_cost_is_stationary() {
        let m = mdp_a();
        let aa = Policy(vec![0, 0]);
        let jmu = policy_evaluate_exact(&m, &aa).unwrap();
        for s in 1..4 {
            for q in 1..3 {
                let cfg = AdaptiveEvalConfig {
                    s_schedule: SSchedule::Constant(s),
                    q,
                    ..AdaptiveEvalConfig::default()
                };
                let (next, diag) = adaptive_eval_step(&m, &aa, &jmu, &cfg, 0).unwrap();
                assert!(next.distance(&jmu) <= 1e-9);
                assert!(diag.r_hat.iter().all(|r| r.abs() <= 1e-9));
            }
        }
        let cfg = AdaptiveEvalConfig::default();
        let run = adaptive_eval_run_from(&m, &aa, &cfg, jmu).unwrap();
        assert_eq!(run.status, AdaptiveStatus::Converged);
        assert_eq!(run.trace.len(), 1);
    }

    #[test]
    fn run_converges_on_fixture() {
        let cfg = AdaptiveEvalConfig {
            s_schedule: SSchedule::Constant(2),
            q: 2,
            outer_iters: 50,
            tol: 1e-8,
            ..AdaptiveEvalConfig::default()
        };
        let run = adaptive_eval_run(&mdp_a(), &Policy(vec![0, 0]), &cfg).unwrap();
        assert_eq!(run.status, AdaptiveStatus::Converged);
        assert!(run.values.distance(&CostFunction(vec![4.0, 2.0])) < 1e-7);
    }

    #[test]
    fn schedule_and_config() {
        assert_eq!(SSchedule::Sequence(vec![1, 3]).at(5), 3);
        let bad = AdaptiveEvalConfig {
            s_schedule: SSchedule::Sequence(vec![2, 0]),
            ..AdaptiveEvalConfig::default()
        };
        assert!(bad.validate(4).is_err());
        let bad = AdaptiveEvalConfig {
            sampling: Sampling::UniformWithoutReplacement,
            sample_count: 5,
            ..AdaptiveEvalConfig::default()
        };
        assert!(bad.validate(4).is_err());
        assert!(AdaptiveEvalConfig {
            q: 5,
            ..AdaptiveEvalConfig::default()
        }
        .validate(4)
        .is_ok());
    }

    #[test]
    fn trace_csv_header() {
        let run = adaptive_eval_run(
            &mdp0(),
            &Policy(vec![0]),
            &AdaptiveEvalConfig {
                q: 1,
                ..AdaptiveEvalConfig::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        run.write_trace_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("k,s,q_effective,residual,error\n"));
    }
}
