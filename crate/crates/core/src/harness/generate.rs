//! Seeded problem and scheme generators.

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationScheme;
use crate::error::{Error, Result};
use crate::mdp::{Action, CostFunction, Mdp, Policy, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpSpec {
    pub n: usize,
    pub actions: usize,
    /// Nonzero transitions per state-action pair.
    pub branching: usize,
    pub cost_range: (f64, f64),
    pub alpha: f64,
    pub seed: u64,
}

impl RandomMdpSpec {
    pub fn new(n: usize, actions: usize, branching: usize, alpha: f64, seed: u64) -> Self {
        Self {
            n,
            actions,
            branching,
            cost_range: (0.0, 1.0),
            alpha,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    /// Probability that a move is replaced by a uniformly random direction.
    pub noise: f64,
    pub alpha: f64,
    /// 0-based goal cell in row-major order; the last cell when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    RandomMdp(RandomMdpSpec),
    Gridworld(GridworldSpec),
}

pub fn generate(spec: &GeneratorSpec) -> Result<Mdp> {
    match spec {
        GeneratorSpec::RandomMdp(s) => gen_random_mdp(s),
        GeneratorSpec::Gridworld(s) => gen_gridworld(s),
    }
}

pub fn gen_random_mdp(spec: &RandomMdpSpec) -> Result<Mdp> {
    let &RandomMdpSpec {
        n,
        actions,
        branching,
        cost_range: (lo, hi),
        alpha,
        seed,
    } = spec;
    if n == 0 || actions == 0 || branching == 0 {
        return Err(Error::InvalidConfig(
            "n, actions and branching must be positive".into(),
        ));
    }
    if branching > n {
        return Err(Error::InvalidConfig(format!(
            "branching {branching} exceeds n = {n}"
        )));
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidConfig(format!("bad cost range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cost = Uniform::new_inclusive(lo, hi);
    let states = (0..n)
        .map(|_| {
            (0..actions)
                .map(|u| {
                    let mut targets = rand::seq::index::sample(&mut rng, n, branching).into_vec();
                    targets.sort_unstable();
                    let weights: Vec<f64> =
                        targets.iter().map(|_| 1.0 - rng.gen::<f64>()).collect();
                    let total: f64 = weights.iter().sum();
                    let transitions = targets
                        .into_iter()
                        .zip(weights)
                        .map(|(to, w)| Transition {
                            to,
                            p: w / total,
                            g: cost.sample(&mut rng),
                        })
                        .collect();
                    Action::new(format!("u{u}"), transitions)
                })
                .collect()
        })
        .collect();
    Mdp::new(alpha, states)
}

const MOVES: [(&str, isize, isize); 4] = [
    ("up", 0, -1),
    ("down", 0, 1),
    ("left", -1, 0),
    ("right", 1, 0),
];

pub fn gen_gridworld(spec: &GridworldSpec) -> Result<Mdp> {
    let &GridworldSpec {
        width,
        height,
        noise,
        alpha,
        goal,
    } = spec;
    if width == 0 || height == 0 {
        return Err(Error::InvalidConfig(format!(
            "invalid grid {width}×{height}"
        )));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::InvalidConfig(format!(
            "noise {noise} outside [0, 1]"
        )));
    }
    let n = width * height;
    let goal = goal.unwrap_or(n - 1);
    if goal >= n {
        return Err(Error::InvalidConfig(format!(
            "goal cell {} outside the grid",
            goal + 1
        )));
    }
    let step = |cell: usize, (dx, dy): (isize, isize)| {
        let x = (cell % width) as isize + dx;
        let y = (cell / width) as isize + dy;
        if x < 0 || y < 0 || x >= width as isize || y >= height as isize {
            cell
        } else {
            y as usize * width + x as usize
        }
    };
    let states = (0..n)
        .map(|cell| {
            if cell == goal {
                return vec![Action::deterministic("stay", cell, 0.0)];
            }
            MOVES
                .iter()
                .map(|&(id, dx, dy)| {
                    let mut probs = vec![0.0; n];
                    probs[step(cell, (dx, dy))] += 1.0 - noise;
                    for &(_, sx, sy) in &MOVES {
                        probs[step(cell, (sx, sy))] += noise / 4.0;
                    }
                    let transitions = probs
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(to, &p)| Transition { to, p, g: 1.0 })
                        .collect();
                    Action::new(id, transitions)
                })
                .collect()
        })
        .collect();
    Mdp::new(alpha, states)
}

/// A uniformly random policy.
pub fn random_policy(m: &Mdp, rng: &mut impl Rng) -> Policy {
    Policy(
        (0..m.n())
            .map(|i| rng.gen_range(0..m.num_actions(i)))
            .collect(),
    )
}

/// A bias function with entries uniform in `[-scale, scale]`.
pub fn random_bias(n: usize, scale: f64, rng: &mut impl Rng) -> CostFunction {
    CostFunction((0..n).map(|_| rng.gen_range(-scale..=scale)).collect())
}

/// Random partition into exactly `q` nonempty sets, 0-based membership.
pub fn random_partition(n: usize, q: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(1 <= q && q <= n, "need 1 ≤ q ≤ n");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut membership = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        membership[i] = if k < q { k } else { rng.gen_range(0..q) };
    }
    membership
}

/// Hard scheme on a random partition with random positive weights inside each set.
pub fn random_hard_scheme(
    n: usize,
    q: usize,
    bias: CostFunction,
    rng: &mut impl Rng,
) -> Result<AggregationScheme> {
    let membership = random_partition(n, q, rng);
    let mut d = vec![vec![0.0; n]; q];
    for (i, &l) in membership.iter().enumerate() {
        d[l][i] = 1.0 - rng.gen::<f64>();
    }
    normalize_rows(&mut d);
    let phi = membership
        .iter()
        .map(|&l| (0..q).map(|y| if y == l { 1.0 } else { 0.0 }).collect())
        .collect();
    AggregationScheme::new(d, phi, bias, Some(membership))
}

/// Soft scheme: each `d` row is spread over a random subset of states and
/// each `φ` row over a random subset of aggregates.
pub fn random_soft_scheme(
    n: usize,
    q: usize,
    bias: CostFunction,
    rng: &mut impl Rng,
) -> Result<AggregationScheme> {
    let mut d = vec![vec![0.0; n]; q];
    for row in &mut d {
        let k = rng.gen_range(1..=n);
        for i in rand::seq::index::sample(rng, n, k) {
            row[i] = 1.0 - rng.gen::<f64>();
        }
    }
    let mut phi = vec![vec![0.0; q]; n];
    for row in &mut phi {
        let k = rng.gen_range(1..=q);
        for y in rand::seq::index::sample(rng, q, k) {
            row[y] = 1.0 - rng.gen::<f64>();
        }
    }
    normalize_rows(&mut d);
    normalize_rows(&mut phi);
    AggregationScheme::new(d, phi, bias, None)
}

/// Either a hard or a soft scheme with `1 ≤ q ≤ min(n, q_max)`.
pub fn random_scheme(
    n: usize,
    q_max: usize,
    bias: CostFunction,
    rng: &mut impl Rng,
) -> Result<AggregationScheme> {
    let q = rng.gen_range(1..=n.min(q_max).max(1));
    if rng.gen_bool(0.5) {
        random_hard_scheme(n, q, bias, rng)
    } else {
        random_soft_scheme(n, q, bias, rng)
    }
}

fn normalize_rows(rows: &mut [Vec<f64>]) {
    for row in rows {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
}
