//! Quick invariant checks over the numeric kernels, for `stratprice selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::estimation::{neg_loglik_and_grad, project_l1_ball, Observation, ThetaEstimate};
use crate::market::{best_response, BuyerId, BuyerProfile, MarginalCost, PreferenceParams};
use crate::noise::NoiseModel;
use crate::policy::{oracle_price, strategic_known_price};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, limit: f64) -> Check {
    Check {
        name,
        passed: worst <= limit,
        detail: format!("worst {worst:.3e} (limit {limit:.0e})"),
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

type Range = (f64, f64);

/// Each law with an index range for `g` and a target range for `phi^{-1}`.
fn models() -> [(NoiseModel, Range, Range); 3] {
    [
        (NoiseModel::uniform(-0.5, 0.5), (-0.45, 1.45), (-1.45, 0.45)),
        (NoiseModel::standard_normal(), (-18.0, 6.0), (-6.0, 6.0)),
        (NoiseModel::logistic(1.0), (-18.0, 6.0), (-6.0, 6.0)),
    ]
}

fn benchmark() -> (PreferenceParams, MarginalCost) {
    let theta = PreferenceParams::new(vec![1.0 / 3.0, 2.0 / 3.0], 0.5, 3.0).expect("valid");
    let cost = MarginalCost::new(&[vec![0.25, 0.125], vec![0.125, 0.25]]).expect("spd");
    (theta, cost)
}

/// Runs every check; each finishes in well under a second.
pub fn run_all() -> Vec<Check> {
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    for (m, _, (ylo, yhi)) in models() {
        for y in grid(ylo, yhi, 200) {
            let v = m.inv_virtual_valuation_numeric(y);
            worst = worst.max(match v.and_then(|v| m.virtual_valuation(v)) {
                Ok(back) => (back - y).abs(),
                Err(_) => f64::INFINITY,
            });
        }
    }
    out.push(check("virtual valuation round trip", worst, 1e-10));

    let unif = NoiseModel::uniform(-0.5, 0.5);
    let mut worst: f64 = 0.0;
    for u in grid(-0.45, 1.45, 200) {
        let closed = unif.price_fn_with_deriv(u).expect("in range");
        let numeric = unif.price_fn_with_deriv_numeric(u).expect("in range");
        worst = worst
            .max((closed.0 - numeric.0).abs())
            .max((closed.1 - numeric.1).abs());
    }
    out.push(check("uniform closed form vs numeric path", worst, 1e-10));

    let mut bad = 0usize;
    let mut worst_foc: f64 = 0.0;
    for (m, (lo, hi), _) in models() {
        let mut prev: Option<(f64, f64)> = None;
        for u in grid(lo, hi, 200) {
            let (p, d) = m.price_fn_with_deriv(u).unwrap_or((f64::NAN, f64::NAN));
            if !(d > 0.0 && d < 1.0) {
                bad += 1;
            }
            if let Some((u1, p1)) = prev {
                let slope = (p - p1) / (u - u1);
                if !(slope > 0.0 && slope < 1.0) {
                    bad += 1;
                }
            }
            prev = Some((u, p));
            // first-order condition p - (1 - F)/f at p - u, in hazard form
            let w = p - u;
            if let Ok(phi) = m.virtual_valuation(w) {
                worst_foc = worst_foc.max((phi + u).abs());
            }
        }
    }
    out.push(Check {
        name: "g' in (0, 1) and g 1-Lipschitz",
        passed: bad == 0,
        detail: format!("{bad} violations"),
    });
    out.push(check("pricing first-order condition", worst_foc, 1e-8));

    let (theta, cost) = benchmark();
    let normal = NoiseModel::standard_normal();
    let truth = ThetaEstimate::exact(&theta);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_br: f64 = 0.0;
    let mut worst_id: f64 = 0.0;
    for i in 0..100 {
        let x0 = vec![rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)];
        let b = BuyerProfile {
            id: BuyerId(i),
            x0: x0.clone(),
            is_repeat: false,
        };
        match best_response(&b, &theta, &cost, &normal) {
            Ok(br) => {
                worst_br = worst_br.max(br.residual);
                let p = strategic_known_price(&truth, &br.x, &cost, &normal);
                let star = oracle_price(&theta, &x0, &normal);
                worst_id = worst_id.max(match (p, star) {
                    (Ok(p), Ok(s)) => (p - s).abs(),
                    _ => f64::INFINITY,
                });
            }
            Err(_) => worst_br = f64::INFINITY,
        }
    }
    out.push(check("best-response residual", worst_br, 1e-8));
    out.push(check(
        "known-cost price undoes manipulation",
        worst_id,
        1e-8,
    ));

    let mut worst_grad: f64 = 0.0;
    for _ in 0..20 {
        let obs: Vec<Observation> = (0..30)
            .map(|_| {
                let x = [rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)];
                Observation::new(&x, rng.random_range(0.0..6.0), rng.random::<bool>())
            })
            .collect();
        let th: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
        let (_, g) = neg_loglik_and_grad(&th, &obs, &normal);
        for j in 0..3 {
            let h = 1e-6;
            let mut a = th.clone();
            let mut b = th.clone();
            a[j] += h;
            b[j] -= h;
            let fd = (neg_loglik_and_grad(&a, &obs, &normal).0
                - neg_loglik_and_grad(&b, &obs, &normal).0)
                / (2.0 * h);
            worst_grad = worst_grad.max((fd - g[j]).abs() / g[j].abs().max(1e-3));
        }
    }
    out.push(check(
        "likelihood gradient vs finite differences",
        worst_grad,
        1e-5,
    ));

    let mut worst_proj: f64 = 0.0;
    for _ in 0..100 {
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p = project_l1_ball(&v, 3.0);
        let l1: f64 = p.iter().map(|x| x.abs()).sum();
        worst_proj = worst_proj.max((l1 - 3.0).max(0.0));
    }
    out.push(check("l1 projection feasibility", worst_proj, 1e-12));

    out
}
