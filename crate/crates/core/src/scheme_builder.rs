//! Residual-based construction of hard aggregation schemes.
//!
//! Sampled states are grouped by their `s`-step residual `V − T^s V`: the
//! residual range is cut into intervals and each nonempty interval becomes an
//! aggregate state with uniform disaggregation over its members.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationScheme;
use crate::bellman::apply_power;
use crate::error::{Error, Result};
use crate::mdp::{CostFunction, Mdp, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalRule {
    EqualWidth,
    /// Quantile buckets of (nearly) equal size.
    EqualCount,
}

/// How aggregation rows are formed for states outside the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityRule {
    /// One-hot on the bucket whose interval contains (or is nearest to) the state's residual.
    NearestResidual,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    AllStates,
    UniformWithoutReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuilderConfig {
    /// Sample size `M`; ignored under [`Sampling::AllStates`].
    pub sample_count: usize,
    /// Residual depth.
    pub s: usize,
    /// Requested number of intervals.
    pub q: usize,
    pub interval_rule: IntervalRule,
    pub similarity_rule: SimilarityRule,
    pub sampling: Sampling,
    pub seed: u64,
    /// Residuals closer than this are treated as equal when cutting buckets.
    pub tie_tol: f64,
    /// Optional per-state labels that further split each residual bucket.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u32>>,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self {
            sample_count: 0,
            s: 1,
            q: 1,
            interval_rule: IntervalRule::EqualCount,
            similarity_rule: SimilarityRule::NearestResidual,
            sampling: Sampling::AllStates,
            seed: 0,
            tie_tol: 1e-9,
            labels: None,
        }
    }
}

impl BuilderConfig {
    pub fn all_states(q: usize, s: usize) -> Self {
        Self {
            q,
            s,
            ..Self::default()
        }
    }

    fn effective_m(&self, n: usize) -> usize {
        match self.sampling {
            Sampling::AllStates => n,
            Sampling::UniformWithoutReplacement => self.sample_count,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let m = self.effective_m(n);
        if m > n {
            return Err(Error::TooManySamples { requested: m, n });
        }
        if self.q < 1 || self.q > m {
            return Err(Error::InvalidConfig(format!(
                "need 1 ≤ q ≤ M, got q = {} and M = {m}",
                self.q
            )));
        }
        if self.s < 1 {
            return Err(Error::InvalidConfig(
                "residual depth s must be at least 1".into(),
            ));
        }
        if !(self.tie_tol >= 0.0) {
            return Err(Error::InvalidConfig(
                "tie tolerance must be nonnegative".into(),
            ));
        }
        if let Some(labels) = &self.labels {
            crate::error::check_len("state labels", n, labels.len())?;
        }
        Ok(())
    }
}

/// The sample set `Ŝ`, sorted ascending, seed-deterministic.
pub fn sample_states(m: &Mdp, cfg: &BuilderConfig) -> Result<Vec<usize>> {
    cfg.validate(m.n())?;
    Ok(sample_indices(m.n(), cfg))
}

fn sample_indices(n: usize, cfg: &BuilderConfig) -> Vec<usize> {
    match cfg.sampling {
        Sampling::AllStates => (0..n).collect(),
        Sampling::UniformWithoutReplacement => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut idx = rand::seq::index::sample(&mut rng, n, cfg.sample_count).into_vec();
            idx.sort_unstable();
            idx
        }
    }
}

/// A residual interval; closed on the right only for the last bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub closed: bool,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && (x < self.hi || (self.closed && x <= self.hi))
    }

    fn distance(&self, x: f64) -> f64 {
        if self.contains(x) {
            0.0
        } else if x < self.lo {
            self.lo - x
        } else {
            x - self.hi
        }
    }
}

/// Sampled states grouped into nonempty residual buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// `I_1 … I_q`, each sorted ascending.
    pub sets: Vec<Vec<usize>>,
    pub intervals: Vec<Interval>,
    pub sample: Vec<usize>,
    /// Residual of every state (sampled or not).
    pub residuals: Vec<f64>,
    pub requested_q: usize,
}

impl Partition {
    pub fn q(&self) -> usize {
        self.sets.len()
    }

    /// Buckets dropped because they were empty.
    pub fn dropped(&self) -> usize {
        self.requested_q.saturating_sub(self.sets.len())
    }

    /// Bucket of each sampled state (`None` outside the sample).
    pub fn bucket_of(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.residuals.len()];
        for (l, set) in self.sets.iter().enumerate() {
            for &i in set {
                out[i] = Some(l);
            }
        }
        out
    }

    /// CSV `state,residual,bucket` over the sampled states, 1-based.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            state: usize,
            residual: f64,
            bucket: usize,
        }
        let buckets = self.bucket_of();
        let mut w = csv::Writer::from_writer(writer);
        for &i in &self.sample {
            w.serialize(Row {
                state: i + 1,
                residual: self.residuals[i],
                bucket: buckets[i].expect("sampled state has a bucket") + 1,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cuts `values` (paired with their states) into at most `q` nonempty buckets.
fn bucket_values(
    values: &[(usize, f64)],
    q: usize,
    rule: IntervalRule,
    tie_tol: f64,
) -> (Vec<Vec<usize>>, Vec<Interval>) {
    let lo = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let hi = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    if q == 1 || hi - lo <= tie_tol {
        let mut set: Vec<usize> = values.iter().map(|v| v.0).collect();
        set.sort_unstable();
        return (
            vec![set],
            vec![Interval {
                lo,
                hi,
                closed: true,
            }],
        );
    }
    let (mut sets, mut intervals) = match rule {
        IntervalRule::EqualWidth => {
            let width = (hi - lo) / q as f64;
            let mut bounds: Vec<f64> = (0..q).map(|k| lo + k as f64 * width).collect();
            bounds.push(hi);
            let intervals: Vec<Interval> = (0..q)
                .map(|k| Interval {
                    lo: bounds[k],
                    hi: bounds[k + 1],
                    closed: k + 1 == q,
                })
                .collect();
            let mut sets = vec![Vec::new(); q];
            for &(i, r) in values {
                let k = (0..q).rev().find(|&k| r >= bounds[k]).unwrap_or(0);
                sets[k].push(i);
            }
            (sets, intervals)
        }
        IntervalRule::EqualCount => {
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let m = sorted.len();
            let mut cuts = vec![0usize];
            for k in 1..q {
                let mut p = (k * m / q).max(*cuts.last().unwrap());
                while p < m && p > 0 && sorted[p].1 - sorted[p - 1].1 <= tie_tol {
                    p += 1;
                }
                if p > *cuts.last().unwrap() && p < m {
                    cuts.push(p);
                }
            }
            cuts.push(m);
            let mut sets = Vec::new();
            let mut intervals = Vec::new();
            for w in cuts.windows(2) {
                let chunk = &sorted[w[0]..w[1]];
                sets.push(chunk.iter().map(|v| v.0).collect::<Vec<_>>());
                let last = w[1] == m;
                intervals.push(Interval {
                    lo: chunk[0].1,
                    hi: if last { hi } else { sorted[w[1]].1 },
                    closed: last,
                });
            }
            (sets, intervals)
        }
    };
    let keep: Vec<bool> = sets.iter().map(|s| !s.is_empty()).collect();
    let mut k = 0;
    sets.retain(|_| {
        k += 1;
        keep[k - 1]
    });
    let mut k = 0;
    intervals.retain(|_| {
        k += 1;
        keep[k - 1]
    });
    for s in &mut sets {
        s.sort_unstable();
    }
    (sets, intervals)
}

/// Buckets a precomputed residual vector over the sample `sample`.
pub fn partition_residuals(
    residuals: Vec<f64>,
    sample: Vec<usize>,
    cfg: &BuilderConfig,
) -> Partition {
    let values: Vec<(usize, f64)> = sample.iter().map(|&i| (i, residuals[i])).collect();
    let (mut sets, mut intervals) = bucket_values(&values, cfg.q, cfg.interval_rule, cfg.tie_tol);
    if let Some(labels) = &cfg.labels {
        let mut refined_sets = Vec::new();
        let mut refined_intervals = Vec::new();
        for (set, interval) in sets.into_iter().zip(intervals) {
            let mut distinct: Vec<u32> = set.iter().map(|&i| labels[i]).collect();
            distinct.sort_unstable();
            distinct.dedup();
            for label in distinct {
                refined_sets.push(
                    set.iter()
                        .copied()
                        .filter(|&i| labels[i] == label)
                        .collect(),
                );
                refined_intervals.push(interval);
            }
        }
        sets = refined_sets;
        intervals = refined_intervals;
    }
    Partition {
        sets,
        intervals,
        sample,
        residuals,
        requested_q: cfg.q,
    }
}

/// Samples states, computes `V − T^s V` (or `V − T_μ^s V`), and buckets the sample.
pub fn partition_by_residual(m: &Mdp, v: &CostFunction, cfg: &BuilderConfig) -> Result<Partition> {
    partition_by_residual_for(m, v, cfg, None)
}

pub fn partition_by_residual_for(
    m: &Mdp,
    v: &CostFunction,
    cfg: &BuilderConfig,
    mu: Option<&Policy>,
) -> Result<Partition> {
    cfg.validate(m.n())?;
    let tsv = apply_power(m, v, cfg.s, mu)?;
    let residuals: Vec<f64> = v.0.iter().zip(&tsv.0).map(|(a, b)| a - b).collect();
    Ok(partition_residuals(
        residuals,
        sample_indices(m.n(), cfg),
        cfg,
    ))
}

/// Turns a partition of the sample into a scheme carrying bias `v`.
pub fn scheme_from_partition(
    p: &Partition,
    v: CostFunction,
    cfg: &BuilderConfig,
) -> Result<AggregationScheme> {
    let n = p.residuals.len();
    let q = p.q();
    let sampled = p.bucket_of();
    let mut d = vec![vec![0.0; n]; q];
    for (l, set) in p.sets.iter().enumerate() {
        let w = 1.0 / set.len() as f64;
        for &i in set {
            d[l][i] = w;
        }
    }
    let mut phi = vec![vec![0.0; q]; n];
    let mut membership = Some(vec![0usize; n]);
    for j in 0..n {
        let l = match (sampled[j], cfg.similarity_rule) {
            (Some(l), _) => Some(l),
            (None, SimilarityRule::NearestResidual) => {
                Some(nearest_bucket(p, j, cfg.labels.as_deref()))
            }
            (None, SimilarityRule::Uniform) => None,
        };
        match l {
            Some(l) => {
                phi[j][l] = 1.0;
                if let Some(mem) = membership.as_mut() {
                    mem[j] = l;
                }
            }
            None => {
                phi[j].iter_mut().for_each(|x| *x = 1.0 / q as f64);
                membership = None;
            }
        }
    }
    AggregationScheme::new(d, phi, v, membership)
}

fn nearest_bucket(p: &Partition, j: usize, labels: Option<&[u32]>) -> usize {
    let r = p.residuals[j];
    let score = |l: usize| {
        let label_miss = match labels {
            Some(labels) => labels[p.sets[l][0]] != labels[j],
            None => false,
        };
        (p.intervals[l].distance(r), label_miss)
    };
    (0..p.q())
        .min_by(|&a, &b| {
            let (da, ma) = score(a);
            let (db, mb) = score(b);
            da.total_cmp(&db).then(ma.cmp(&mb))
        })
        .expect("partition has a bucket")
}

/// Residual-partitioned hard scheme with bias `v`, plus the partition behind it.
pub fn build_scheme(
    m: &Mdp,
    v: &CostFunction,
    cfg: &BuilderConfig,
) -> Result<(AggregationScheme, Partition)> {
    let p = partition_by_residual(m, v, cfg)?;
    let scheme = scheme_from_partition(&p, v.clone(), cfg)?;
    Ok((scheme, p))
}

/// `ε = max_ℓ max_{i,j∈I_ℓ} |J(i) − V(i) − J(j) + V(j)|` for a hard scheme.
pub fn within_aggregate_variation(sch: &AggregationScheme, j: &CostFunction) -> Result<f64> {
    let mem = sch.membership().ok_or_else(|| {
        Error::InvalidConfig("variation bound needs a hard aggregation scheme".into())
    })?;
    j.check_dim(sch.n())?;
    let mut lo = vec![f64::INFINITY; sch.q()];
    let mut hi = vec![f64::NEG_INFINITY; sch.q()];
    for (i, &l) in mem.iter().enumerate() {
        let diff = j[i] - sch.bias()[i];
        lo[l] = lo[l].min(diff);
        hi[l] = hi[l].max(diff);
    }
    Ok(lo
        .iter()
        .zip(&hi)
        .filter(|(a, _)| a.is_finite())
        .map(|(a, b)| b - a)
        .fold(0.0, f64::max))
}
