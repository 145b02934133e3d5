//! Randomized invariants over seeded problems and schemes.

use biasedagg::adaptive::interpolation_weights;
use biasedagg::aggregation::{
    aggregate_map_apply, aggregate_policy_map_apply, lift_to_j1, modified_costs,
};
use biasedagg::bellman::{bellman_optimal_apply, bellman_policy_apply, policy_evaluate_exact};
use biasedagg::harness::generate::{
    gen_random_mdp, random_bias, random_policy, random_scheme, RandomMdpSpec,
};
use biasedagg::mdp::sup_distance;
use biasedagg::scheme_builder::{build_scheme, BuilderConfig, IntervalRule, Sampling};
use biasedagg::{AggregationScheme, CostFunction, Mdp};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-9;

fn problem(n: usize, a: usize, b: usize, alpha: f64, seed: u64) -> Mdp {
    gen_random_mdp(&RandomMdpSpec::new(n, a, b.min(n), alpha, seed)).unwrap()
}

fn problems() -> impl Strategy<Value = (Mdp, u64)> {
    (
        1usize..=12,
        1usize..=3,
        1usize..=4,
        prop_oneof![Just(0.5), Just(0.9), Just(0.95)],
        any::<u64>(),
    )
        .prop_map(|(n, a, b, alpha, seed)| (problem(n, a, b, alpha, seed), seed))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9)
}

fn vector(n: usize, rng: &mut ChaCha8Rng) -> CostFunction {
    random_bias(n, 10.0, rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bellman_operators_contract((m, seed) in problems()) {
        let mut r = rng(seed);
        let (x, y) = (vector(m.n(), &mut r), vector(m.n(), &mut r));
        let mu = random_policy(&m, &mut r);
        let bound = m.alpha() * x.distance(&y) + EPS;
        let (tx, _) = bellman_optimal_apply(&m, &x).unwrap();
        let (ty, _) = bellman_optimal_apply(&m, &y).unwrap();
        prop_assert!(tx.distance(&ty) <= bound);
        let (px, py) = (bellman_policy_apply(&m, &mu, &x).unwrap(), bellman_policy_apply(&m, &mu, &y).unwrap());
        prop_assert!(px.distance(&py) <= bound);
    }

    #[test]
    fn bellman_operator_is_monotone((m, seed) in problems()) {
        let mut r = rng(seed);
        let x = vector(m.n(), &mut r);
        let bump = random_bias(m.n(), 1.0, &mut r);
        let y: CostFunction = x.0.iter().zip(&bump.0).map(|(a, b)| a + b.abs()).collect::<Vec<_>>().into();
        let (tx, _) = bellman_optimal_apply(&m, &x).unwrap();
        let (ty, _) = bellman_optimal_apply(&m, &y).unwrap();
        prop_assert!(tx.0.iter().zip(&ty.0).all(|(a, b)| *a <= b + EPS));
    }

    #[test]
    fn aggregate_mappings_contract((m, seed) in problems()) {
        let mut r = rng(seed);
        let n = m.n();
        let sch = random_scheme(n, n, vector(n, &mut r), &mut r).unwrap();
        let (x, y) = (vector(sch.q(), &mut r).0, vector(sch.q(), &mut r).0);
        let bound = m.alpha() * sup_distance(&x, &y) + EPS;
        let hx = aggregate_map_apply(&m, &sch, &x).unwrap();
        let hy = aggregate_map_apply(&m, &sch, &y).unwrap();
        prop_assert!(sup_distance(&hx, &hy) <= bound);
        let mu = random_policy(&m, &mut r);
        let hx = aggregate_policy_map_apply(&m, &sch, &mu, &x).unwrap();
        let hy = aggregate_policy_map_apply(&m, &sch, &mu, &y).unwrap();
        prop_assert!(sup_distance(&hx, &hy) <= bound);
    }

    #[test]
    fn bias_moves_into_the_costs((m, seed) in problems()) {
        let mut r = rng(seed);
        let n = m.n();
        let v = vector(n, &mut r);
        let biased = random_scheme(n, n, v.clone(), &mut r).unwrap();
        let plain = biased.with_bias(CostFunction::zeros(n)).unwrap();
        let shifted = modified_costs(&m, &v).unwrap();
        let x = vector(biased.q(), &mut r).0;
        let a = aggregate_map_apply(&m, &biased, &x).unwrap();
        let b = aggregate_map_apply(&shifted, &plain, &x).unwrap();
        prop_assert!(sup_distance(&a, &b) <= 1e-8);
    }

    #[test]
    fn zero_correction_lifts_to_the_bias((m, seed) in problems()) {
        let mut r = rng(seed);
        let v = vector(m.n(), &mut r);
        let sch = random_scheme(m.n(), m.n(), v.clone(), &mut r).unwrap();
        let j1 = lift_to_j1(&sch, &vec![0.0; sch.q()]).unwrap();
        prop_assert_eq!(j1, v);
    }

    #[test]
    fn policy_cost_is_a_fixed_point((m, seed) in problems()) {
        let mu = random_policy(&m, &mut rng(seed));
        let j = policy_evaluate_exact(&m, &mu).unwrap();
        let tj = bellman_policy_apply(&m, &mu, &j).unwrap();
        prop_assert!(tj.distance(&j) <= 1e-9 * (1.0 + j.sup_norm()));
    }

    #[test]
    fn built_schemes_are_valid(
        (m, seed) in problems(),
        q in 1usize..=6,
        s in 1usize..=3,
        equal_width in any::<bool>(),
        frac in 0.2f64..=1.0,
    ) {
        let mut r = rng(seed);
        let n = m.n();
        let sample_count = ((n as f64 * frac).ceil() as usize).clamp(1, n);
        let cfg = BuilderConfig {
            q: q.min(sample_count),
            s,
            sample_count,
            sampling: Sampling::UniformWithoutReplacement,
            interval_rule: if equal_width { IntervalRule::EqualWidth } else { IntervalRule::EqualCount },
            seed,
            ..BuilderConfig::default()
        };
        let v = vector(n, &mut r);
        let (sch, part) = build_scheme(&m, &v, &cfg).unwrap();
        prop_assert!(sch.violations().is_empty());
        prop_assert!(part.q() <= cfg.q);
        prop_assert_eq!(sch.q(), part.q());
        // The sampled states are split exactly once among the aggregates.
        let mut covered: Vec<usize> = part.sets.iter().flatten().copied().collect();
        covered.sort_unstable();
        prop_assert_eq!(&covered, &part.sample);
        let row_sums_ok = sch.d().iter().all(|row| (row.iter().sum::<f64>() - 1.0).abs() < EPS)
            && sch.phi().iter().all(|row| (row.iter().sum::<f64>() - 1.0).abs() < EPS);
        prop_assert!(row_sums_ok);
        let xi = interpolation_weights(&sch, &part.sample).unwrap();
        prop_assert!(xi.xi.iter().all(|row| (row.iter().sum::<f64>() - 1.0).abs() < EPS && row.iter().all(|w| *w >= 0.0)));
    }

    #[test]
    fn persisted_problems_and_schemes_round_trip((m, seed) in problems()) {
        let mut buf = Vec::new();
        m.write_json(&mut buf).unwrap();
        let back = Mdp::read_json(&buf[..]).unwrap();
        prop_assert_eq!(back.content_hash(), m.content_hash());
        prop_assert_eq!(&back, &m);
        let mut r = rng(seed);
        let sch = random_scheme(m.n(), m.n(), vector(m.n(), &mut r), &mut r).unwrap();
        let mut buf = Vec::new();
        sch.write_json(&mut buf).unwrap();
        prop_assert_eq!(AggregationScheme::read_json(&buf[..]).unwrap(), sch);
    }
}
