use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stratprice::harness::{run_once, Simulation};
use stratprice::{
    best_response, fit_theta_mle, purchase, BuyerId, BuyerProfile, ExperimentConfig, MarginalCost,
    NoiseModel, Observation, PolicyKind, PreferenceParams,
};

fn price_fn(c: &mut Criterion) {
    for (name, m) in [
        ("price_fn/normal", NoiseModel::standard_normal()),
        ("price_fn/logistic", NoiseModel::logistic(1.0)),
        ("price_fn/uniform", NoiseModel::uniform(-0.5, 0.5)),
    ] {
        c.bench_function(name, |b| {
            b.iter(|| m.price_fn_with_deriv(black_box(0.7)).unwrap())
        });
    }
}

fn best_response_bench(c: &mut Criterion) {
    let theta = PreferenceParams::new(vec![1.0 / 3.0, 2.0 / 3.0], 0.5, 3.0).unwrap();
    let cost = MarginalCost::new(&[vec![0.25, 0.125], vec![0.125, 0.25]]).unwrap();
    let noise = NoiseModel::standard_normal();
    let buyer = BuyerProfile {
        id: BuyerId(0),
        x0: vec![2.0, 1.5],
        is_repeat: false,
    };
    c.bench_function("best_response/normal", |b| {
        b.iter(|| best_response(black_box(&buyer), &theta, &cost, &noise).unwrap())
    });
}

fn mle(c: &mut Criterion) {
    let noise = NoiseModel::standard_normal();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let obs: Vec<Observation> = (0..565)
        .map(|_| {
            let x = [rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)];
            let v = x[0] / 3.0 + 2.0 * x[1] / 3.0 + 0.5 + noise.sample(&mut rng);
            let p = rng.random_range(0.0..6.0);
            Observation::new(&x, p, purchase(v, p).is_sale())
        })
        .collect();
    c.bench_function("fit_theta_mle/565", |b| {
        b.iter(|| fit_theta_mle(black_box(&obs), 3.0, &noise).unwrap())
    });
}

fn short_run(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::default();
    cfg.schedule.horizon = 1_400;
    let sim = Simulation::from_config(&cfg).unwrap();
    let mut group = c.benchmark_group("run_once/1400");
    group.sample_size(20);
    for k in [
        PolicyKind::Nonstrategic,
        PolicyKind::StrategicKnown,
        PolicyKind::StrategicUnknown,
    ] {
        group.bench_function(k.name(), |b| b.iter(|| run_once(&sim, k, 1).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, price_fn, best_response_bench, mle, short_run);
criterion_main!(benches);
