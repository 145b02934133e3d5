//! Library results against brute-force references that share no code with
//! the library's solvers: every policy is enumerated and each linear system
//! is solved by plain Gaussian elimination.

use biasedagg::bellman::{policy_evaluate_exact, value_iterate_exact};
use biasedagg::harness::generate::{gen_random_mdp, random_bias, random_scheme, RandomMdpSpec};
use biasedagg::mdp::fixtures::{mdp0, mdp_a};
use biasedagg::mdp::sup_distance;
use biasedagg::solvers::{solve_fixed_point_exact, SolveConfig};
use biasedagg::{AggregationScheme, CostFunction, Mdp, Policy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs()))
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn all_policies(m: &Mdp) -> Vec<Policy> {
    let mut out = vec![Vec::new()];
    for i in 0..m.n() {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..m.num_actions(i)).map(move |u| {
                    let mut p = p.clone();
                    p.push(u);
                    p
                })
            })
            .collect();
    }
    out.into_iter().map(Policy).collect()
}

/// `P_μ` as a dense matrix and the expected one-stage cost `ḡ_μ`.
fn dense(m: &Mdp, mu: &Policy) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = m.n();
    let mut p = vec![vec![0.0; n]; n];
    let mut g = vec![0.0; n];
    for i in 0..n {
        for t in m.transitions(i, mu.0[i]) {
            p[i][t.to] += t.p;
            g[i] += t.p * t.g;
        }
    }
    (p, g)
}

fn evaluate(m: &Mdp, mu: &Policy) -> Vec<f64> {
    let n = m.n();
    let (p, g) = dense(m, mu);
    let a = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| f64::from(u8::from(i == j)) - m.alpha() * p[i][j])
                .collect()
        })
        .collect();
    gauss(a, g)
}

fn componentwise_min(rows: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    rows.reduce(|a, b| a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect())
        .unwrap()
}

/// Fixed point of `H_μ`: `(I − α D P_μ Φ) r = D (ḡ_μ + α P_μ V − V)`.
fn aggregate_policy_fixed_point(m: &Mdp, sch: &AggregationScheme, mu: &Policy) -> Vec<f64> {
    let (n, q, alpha) = (m.n(), sch.q(), m.alpha());
    let (p, g) = dense(m, mu);
    let (d, phi, v) = (sch.d(), sch.phi(), sch.bias().as_slice());
    let rhs_state: Vec<f64> = (0..n)
        .map(|i| g[i] + alpha * (0..n).map(|j| p[i][j] * v[j]).sum::<f64>() - v[i])
        .collect();
    let p_phi: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..q)
                .map(|y| (0..n).map(|j| p[i][j] * phi[j][y]).sum())
                .collect()
        })
        .collect();
    let a = (0..q)
        .map(|x| {
            (0..q)
                .map(|y| {
                    f64::from(u8::from(x == y))
                        - alpha * (0..n).map(|i| d[x][i] * p_phi[i][y]).sum::<f64>()
                })
                .collect()
        })
        .collect();
    let b = (0..q)
        .map(|x| (0..n).map(|i| d[x][i] * rhs_state[i]).sum())
        .collect();
    gauss(a, b)
}

fn small_problems() -> Vec<Mdp> {
    let mut out = vec![mdp0(), mdp_a()];
    for (k, alpha) in [0.5, 0.9, 0.95].into_iter().cycle().take(24).enumerate() {
        let n = 2 + k % 5;
        let spec = RandomMdpSpec::new(n, 1 + k % 3, 1 + k % n, alpha, 500 + k as u64);
        out.push(gen_random_mdp(&spec).unwrap());
    }
    out
}

#[test]
fn worked_examples_by_hand() {
    assert!(
        sup_distance(
            &value_iterate_exact(&mdp0(), 1e-12).unwrap().values.0,
            &[2.0]
        ) < 1e-10
    );
    // State 1 moves (cost 0) to the absorbing state 2 worth 1/(1 − 0.5) = 2.
    let a = value_iterate_exact(&mdp_a(), 1e-12).unwrap();
    assert!(sup_distance(&a.values.0, &[1.0, 2.0]) < 1e-10);
    assert_eq!(a.policy, Policy(vec![1, 0]));
}

#[test]
fn value_iteration_matches_policy_enumeration() {
    for m in small_problems() {
        let best = componentwise_min(all_policies(&m).iter().map(|mu| evaluate(&m, mu)));
        let vi = value_iterate_exact(&m, 1e-11).unwrap();
        assert!(sup_distance(&vi.values.0, &best) < 1e-9, "n = {}", m.n());
        let greedy = evaluate(&m, &vi.policy);
        assert!(sup_distance(&greedy, &best) < 1e-8);
    }
}

#[test]
fn policy_evaluation_matches_elimination() {
    for m in small_problems() {
        for mu in all_policies(&m).iter().take(50) {
            let lib = policy_evaluate_exact(&m, mu).unwrap();
            assert!(sup_distance(&lib.0, &evaluate(&m, mu)) < 1e-9);
        }
    }
}

#[test]
fn aggregate_fixed_point_is_the_best_policy_fixed_point() {
    // H is monotone and each state minimizes independently, so the fixed
    // point of H is the componentwise minimum of the H_μ fixed points.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cfg = SolveConfig {
        tol: 1e-11,
        max_iters: 1_000_000,
        ..SolveConfig::default()
    };
    for m in small_problems() {
        for scale in [0.0, 5.0] {
            let v: CostFunction = random_bias(m.n(), scale, &mut rng);
            let sch = random_scheme(m.n(), m.n(), v, &mut rng).unwrap();
            let oracle = componentwise_min(
                all_policies(&m)
                    .iter()
                    .map(|mu| aggregate_policy_fixed_point(&m, &sch, mu)),
            );
            let (sol, _) = solve_fixed_point_exact(&m, &sch, &cfg).unwrap();
            assert!(
                sup_distance(&sol.r, &oracle) < 1e-8,
                "n = {} q = {}",
                m.n(),
                sch.q()
            );
        }
    }
}

#[test]
fn singletons_recover_the_optimal_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for m in small_problems() {
        let v = random_bias(m.n(), 3.0, &mut rng);
        let best = componentwise_min(all_policies(&m).iter().map(|mu| evaluate(&m, mu)));
        let sch = AggregationScheme::singletons(v.clone());
        let (sol, _) = solve_fixed_point_exact(&m, &sch, &SolveConfig::default()).unwrap();
        let j1: Vec<f64> = v.0.iter().zip(&sol.r).map(|(a, b)| a + b).collect();
        assert!(sup_distance(&j1, &best) < 1e-8);
    }
}
