//! Likelihood fit, l1 projection, the match store and the displacement regression.

use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stratprice::harness::lower_bound_world;
use stratprice::{
    best_response, fit_gamma_ols, fit_theta_mle, neg_loglik_and_grad, project_l1_ball, purchase,
    BuyerId, BuyerProfile, Error, MarginalCost, MatchStore, NoiseModel, Observation, Phase,
    PreferenceParams,
};

fn synthetic(n: usize, theta: &[f64], noise: &NoiseModel, seed: u64) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = [rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)];
            let v = theta[0] * x[0] + theta[1] * x[1] + theta[2] + noise.sample(&mut rng);
            let p = rng.random_range(0.0..6.0);
            Observation::new(&x, p, purchase(v, p).is_sale())
        })
        .collect()
}

/// Euclidean projection onto the l1 ball by bisection on the soft threshold.
fn projection_oracle(v: &[f64], r: f64) -> Vec<f64> {
    if v.iter().map(|x| x.abs()).sum::<f64>() <= r {
        return v.to_vec();
    }
    let mass = |lam: f64| v.iter().map(|x| (x.abs() - lam).max(0.0)).sum::<f64>();
    let (mut lo, mut hi) = (0.0, v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = 0.5 * (lo + hi);
    v.iter()
        .map(|x| x.signum() * (x.abs() - lam).max(0.0))
        .collect()
}

#[test]
fn mle_recovers_theta() {
    let theta = [1.0 / 3.0, 2.0 / 3.0, 0.5];
    for noise in [NoiseModel::standard_normal(), NoiseModel::logistic(1.0)] {
        let obs = synthetic(10_000, &theta, &noise, 1);
        let est = fit_theta_mle(&obs, 3.0, &noise).unwrap();
        let err: f64 = est
            .theta()
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(est.converged);
        assert!(!est.degenerate);
        assert_eq!(est.n_samples, 10_000);
        assert!(err < 0.1, "{:?}: error {err}", noise.kind());
    }
}

#[test]
fn mle_beats_truth_in_sample() {
    let theta = [1.0 / 3.0, 2.0 / 3.0, 0.5];
    let noise = NoiseModel::standard_normal();
    for seed in 0..5 {
        let obs = synthetic(500, &theta, &noise, seed);
        let est = fit_theta_mle(&obs, 3.0, &noise).unwrap();
        let at_truth = neg_loglik_and_grad(&theta, &obs, &noise).0;
        let at_fit = neg_loglik_and_grad(&est.theta(), &obs, &noise).0;
        assert!(at_fit <= at_truth + 1e-9);
        assert!((at_fit - est.neg_loglik).abs() < 1e-12);
    }
}

#[test]
fn mle_stays_in_the_ball() {
    let theta = [2.0, 2.0, 1.0];
    let noise = NoiseModel::standard_normal();
    let obs = synthetic(2_000, &theta, &noise, 2);
    let est = fit_theta_mle(&obs, 1.0, &noise).unwrap();
    let l1: f64 = est.theta().iter().map(|v| v.abs()).sum();
    assert!(l1 <= 1.0 + 1e-9);
}

#[test]
fn degenerate_and_short_samples() {
    let noise = NoiseModel::standard_normal();
    let all_sales: Vec<Observation> = (0..20)
        .map(|i| Observation::new(&[i as f64, 1.0], 0.5, true))
        .collect();
    let est = fit_theta_mle(&all_sales, 3.0, &noise).unwrap();
    assert!(est.degenerate);
    assert!(!est.converged);
    assert!(matches!(
        fit_theta_mle(&all_sales[..3], 3.0, &noise),
        Err(Error::InsufficientData { .. })
    ));
}

#[test]
fn projection_matches_oracle_on_examples() {
    let v = [3.0, -1.0, 0.5];
    let p = project_l1_ball(&v, 2.0);
    // threshold 1: (2, 0, 0)
    assert!((p[0] - 2.0).abs() < 1e-12 && p[1] == 0.0 && p[2] == 0.0);
    assert_eq!(project_l1_ball(&[0.1, -0.2], 1.0), vec![0.1, -0.2]);
}

#[test]
fn match_store_integrity() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = MatchStore::new();
    let mut explored = HashSet::new();
    let mut exploited = HashSet::new();
    let mut pairs = 0usize;
    for _ in 0..1_000_000 {
        let id = BuyerId(rng.random_range(0..200_000));
        let explore = rng.random::<bool>();
        let x = [id.0 as f64, 0.0];
        let got = if explore {
            explored.insert(id);
            store
                .record_and_match(id, &x, Phase::Exploration, f64::NAN)
                .is_some()
        } else {
            exploited.insert(id);
            store
                .record_and_match(id, &x, Phase::Exploitation, 0.5)
                .is_some()
        };
        let want = explored.contains(&id) && exploited.contains(&id);
        assert_eq!(got, want);
        pairs += want as usize;
    }
    assert_eq!(store.n_pairs(), pairs);
    assert_eq!(store.exploration_len(), explored.len());
    assert_eq!(store.exploitation_len(), exploited.len());
    assert!(store.is_consistent());
    for p in store.pairs().iter().take(1_000) {
        assert_eq!(p.x0[0], p.id.0 as f64);
        assert_eq!(store.true_feature_if_matched(p.id), Some(&p.x0[..]));
    }
}

#[test]
fn gamma_regression_is_exact_with_constant_slope() {
    // uniform noise: g' = 1/2 everywhere on the support, so every displacement is
    // exactly -A^{-1} beta / 2 and the regression returns -beta for A = I
    let cfg = lower_bound_world();
    let th = PreferenceParams::new(cfg.market.beta.clone(), cfg.market.alpha, 1.0).unwrap();
    let noise = NoiseModel::uniform(-0.5, 0.5);
    let cost = MarginalCost::identity(2);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = MatchStore::new();
    for i in 0..50 {
        let x0 = vec![rng.random_range(0.0..0.17), rng.random_range(0.0..0.17)];
        let b = BuyerProfile {
            id: BuyerId(i),
            x0: x0.clone(),
            is_repeat: true,
        };
        let br = best_response(&b, &th, &cost, &noise).unwrap();
        let u = noise.price_fn_deriv(th.index(&br.x)).unwrap();
        store.record_and_match(b.id, &x0, Phase::Exploration, f64::NAN);
        store.record_and_match(b.id, &br.x, Phase::Exploitation, u);
    }
    let g = fit_gamma_ols(&store).unwrap();
    assert_eq!(g.n_pairs, 50);
    assert!((g.per_coordinate_denominator - 12.5).abs() < 1e-9);
    for (a, b) in g.gamma_hat.iter().zip(&th.beta) {
        assert!((a + b).abs() < 1e-9);
    }
}

#[test]
fn gamma_regression_needs_pairs() {
    assert!(matches!(
        fit_gamma_ols(&MatchStore::new()),
        Err(Error::EmptyStore)
    ));
}

fn small_sample() -> impl Strategy<Value = Vec<Observation>> {
    prop::collection::vec(
        (0.0f64..4.0, 0.0f64..4.0, 0.0f64..4.0, any::<bool>())
            .prop_map(|(a, b, p, s)| Observation::new(&[a, b], p, s)),
        5..40,
    )
}

proptest! {
    #[test]
    fn projection_matches_oracle(v in prop::collection::vec(-10.0f64..10.0, 1..8), r in 0.1f64..8.0) {
        let got = project_l1_ball(&v, r);
        let want = projection_oracle(&v, r);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!(got.iter().map(|x| x.abs()).sum::<f64>() <= r + 1e-9);
    }

    // ranges keep every probability well above the clamp, where convexity is exact
    #[test]
    fn likelihood_is_midpoint_convex(
        obs in small_sample(),
        a in prop::collection::vec(-0.5f64..0.5, 3),
        b in prop::collection::vec(-0.5f64..0.5, 3),
    ) {
        for noise in [NoiseModel::standard_normal(), NoiseModel::logistic(1.0)] {
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let f = |t: &[f64]| neg_loglik_and_grad(t, &obs, &noise).0;
            let avg = 0.5 * (f(&a) + f(&b));
            prop_assert!(f(&mid) <= avg + 1e-12 * avg.abs().max(1.0));
        }
    }
}
