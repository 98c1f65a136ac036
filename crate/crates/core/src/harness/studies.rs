//! Estimator scaling studies and the uniform-noise lower-bound market.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::replicate::mean_stderr;
use super::sim::{run_once, Simulation};
use crate::config::{ExperimentConfig, NoiseConfig};
use crate::error::Result;
use crate::estimation::{fit_theta_mle, Observation};
use crate::market::{purchase, BuyerSource, CoordinateLaw};
use crate::policy::{uniform_price, PolicyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub size: f64,
    pub mean_sq_error: f64,
    pub stderr: f64,
    /// Replications that produced an estimate.
    pub n_used: usize,
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(points: &[ScalingPoint]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.size.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_sq_error.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Mean `||theta_hat - theta0||^2` when fitting on `a` exploration periods
/// drawn from the market in `cfg`, for each `a` in `sizes`.
pub fn theta_error_scaling(
    cfg: &ExperimentConfig,
    sizes: &[usize],
    reps: usize,
    base_seed: u64,
) -> Result<Vec<ScalingPoint>> {
    let world = cfg.validate()?;
    let cap = cfg.schedule.price_cap;
    let theta0 = world.theta.theta();
    sizes
        .iter()
        .map(|&a| {
            let errors: Vec<f64> = (0..reps as u64)
                .into_par_iter()
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(r));
                    rng.set_stream(a as u64);
                    let mut source = BuyerSource::new(world.features.clone());
                    let obs: Vec<Observation> = (0..a)
                        .map(|_| {
                            let b = source.sample_buyer(&mut rng);
                            let v = world.theta.index(&b.x0) + world.noise.sample(&mut rng);
                            let p = uniform_price(&mut rng, cap);
                            Observation::new(&b.x0, p, purchase(v, p).is_sale())
                        })
                        .collect();
                    let est = fit_theta_mle(&obs, world.theta.w_theta, &world.noise)?;
                    Ok(est
                        .theta()
                        .iter()
                        .zip(&theta0)
                        .map(|(x, y)| (x - y).powi(2))
                        .sum())
                })
                .collect::<Result<Vec<f64>>>()?;
            let (m, s) = mean_stderr(&errors);
            Ok(ScalingPoint {
                size: a as f64,
                mean_sq_error: m,
                stderr: s,
                n_used: errors.len(),
            })
        })
        .collect()
}

/// Mean `||gamma_hat - gamma||^2` at the end of full unknown-cost runs, for
/// each repeat rate. Runs that never matched a pair are left out and counted
/// in `reps - n_used`.
pub fn gamma_error_by_tau(
    cfg: &ExperimentConfig,
    taus: &[f64],
    reps: usize,
    base_seed: u64,
) -> Result<Vec<ScalingPoint>> {
    taus.iter()
        .map(|&tau| {
            let mut c = cfg.clone();
            c.market.tau = tau;
            let sim = Simulation::from_config(&c)?;
            let gamma = sim.world.gamma();
            let errors: Vec<Option<f64>> = (0..reps as u64)
                .into_par_iter()
                .map(|r| {
                    let tr = run_once(
                        &sim,
                        PolicyKind::StrategicUnknown,
                        base_seed.wrapping_add(r),
                    )?;
                    Ok(tr
                        .log
                        .final_gamma_hat
                        .map(|g| g.iter().zip(&gamma).map(|(x, y)| (x - y).powi(2)).sum()))
                })
                .collect::<Result<_>>()?;
            let used: Vec<f64> = errors.into_iter().flatten().collect();
            let (m, s) = mean_stderr(&used);
            Ok(ScalingPoint {
                size: tau,
                mean_sq_error: m,
                stderr: s,
                n_used: used.len(),
            })
        })
        .collect()
}

/// The uniform-noise market used for the linear-regret lower bound:
/// noise uniform on `(-1/2, 1/2)`, `A = I`, `B = 7/16`,
/// `beta0 = (1/2, 1/2)`, `alpha0 = 0`, and features uniform on
/// `[0, 0.17]^2` so that `||x0||_2 <= 1/4`. Prices use the true parameter.
pub fn lower_bound_world() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.market.beta = vec![0.5, 0.5];
    cfg.market.alpha = 0.0;
    cfg.market.w_theta = 1.0;
    cfg.market.w_x = 1.1;
    cfg.market.cost = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    cfg.market.features = vec![CoordinateLaw::Uniform { lo: 0.0, hi: 0.17 }; 2];
    cfg.market.noise = NoiseConfig::uniform(-0.5, 0.5);
    cfg.schedule.price_cap = 7.0 / 16.0;
    cfg.policy.inject_true_theta = true;
    cfg.policy.kinds = vec!["nonstrategic".into()];
    cfg
}
