//! A single simulated run of one policy.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, World};
use crate::error::{Error, Result};
use crate::estimation::{fit_theta_mle, Observation, ThetaEstimate};
use crate::market::{best_response, next_identity, purchase, BuyerId, BuyerProfile, BuyerSource};
use crate::policy::{uniform_price, BranchCounts, EpisodeSchedule, Phase, PolicyKind, PolicyState};

const STREAM_FEATURES: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_PRICES: u64 = 2;
const STREAM_IDENTITY: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Everything a run needs besides the policy and the seed.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub world: World,
    pub schedule: EpisodeSchedule,
    pub price_cap: f64,
    pub horizon: usize,
    /// Price with the true parameter instead of the per-episode estimate.
    pub inject_true_theta: bool,
}

impl Simulation {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let world = cfg.validate()?;
        Ok(Self {
            world,
            schedule: cfg.schedule()?,
            price_cap: cfg.schedule.price_cap,
            horizon: cfg.schedule.horizon,
            inject_true_theta: cfg.policy.inject_true_theta,
        })
    }
}

/// Per-episode diagnostics written to the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub exploration_len: usize,
    pub theta_hat: Option<Vec<f64>>,
    pub theta_sq_error: Option<f64>,
    pub converged: Option<bool>,
    pub degenerate: Option<bool>,
    pub mle_iterations: Option<usize>,
    pub gamma_hat: Option<Vec<f64>>,
    pub n_pairs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub policy: PolicyKind,
    pub seed: u64,
    pub episodes: Vec<EpisodeLog>,
    pub max_best_response_residual: f64,
    pub multiple_root_events: u64,
    /// Periods whose valuation fell outside `(0, B)`.
    pub valuations_out_of_range: u64,
    pub repeat_arrivals: u64,
    pub branch_counts: Option<BranchCounts>,
    pub final_gamma_hat: Option<Vec<f64>>,
    pub final_n_pairs: Option<usize>,
}

/// Per-period regret of one run. Index `i` holds period `t = i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub policy: PolicyKind,
    pub seed: u64,
    /// `p* 1(v >= p*) - p 1(v >= p)`.
    pub regret: Vec<f64>,
    /// `p* (1 - F(p* - u0)) - p (1 - F(p - u0))`.
    pub expected_regret: Vec<f64>,
    pub cum_regret: Vec<f64>,
    pub cum_expected_regret: Vec<f64>,
    pub exploration: Vec<bool>,
    pub log: RunLog,
}

impl RegretTrace {
    pub fn horizon(&self) -> usize {
        self.regret.len()
    }

    pub fn final_regret(&self) -> f64 {
        self.cum_regret.last().copied().unwrap_or(0.0)
    }

    pub fn final_expected_regret(&self) -> f64 {
        self.cum_expected_regret.last().copied().unwrap_or(0.0)
    }
}

fn cumsum(v: &[f64]) -> Vec<f64> {
    v.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Simulates periods `1..=horizon` of `policy` under `seed`.
///
/// Features, noise, exploration prices and identities come from separate
/// streams of the same seed, so different policies run with the same seed
/// face the same buyers and noise draws.
pub fn run_once(sim: &Simulation, policy: PolicyKind, seed: u64) -> Result<RegretTrace> {
    run_inner(sim, policy, seed).map_err(|(t, e)| Error::Run {
        seed,
        t,
        source: Box::new(e),
    })
}

fn run_inner(
    sim: &Simulation,
    kind: PolicyKind,
    seed: u64,
) -> std::result::Result<RegretTrace, (usize, Error)> {
    let world = &sim.world;
    let theta0 = &world.theta;
    let noise = &world.noise;
    let schedule = &sim.schedule;
    let horizon = sim.horizon;

    let mut feat_rng = stream(seed, STREAM_FEATURES);
    let mut noise_rng = stream(seed, STREAM_NOISE);
    let mut price_rng = stream(seed, STREAM_PRICES);
    let mut id_rng = stream(seed, STREAM_IDENTITY);

    let mut source = BuyerSource::new(world.features.clone());
    let mut policy =
        PolicyState::new(kind, Some(world.cost.clone()), sim.price_cap).map_err(|e| (0, e))?;
    let mut pool: Vec<BuyerProfile> = Vec::new();
    let mut obs: Vec<Observation> = Vec::new();
    let mut responses: HashMap<BuyerId, Vec<f64>> = HashMap::new();

    let mut regret = Vec::with_capacity(horizon);
    let mut expected = Vec::with_capacity(horizon);
    let mut exploration = Vec::with_capacity(horizon);
    let mut episodes: Vec<EpisodeLog> = Vec::new();
    let mut max_residual: f64 = 0.0;
    let mut multiple_roots = 0u64;
    let mut out_of_range = 0u64;
    let mut repeats = 0u64;

    for t in 1..=horizon {
        let (k, phase) = schedule.phase_of(t);
        if t == schedule.offset(k) {
            policy.clear_theta_hat();
            obs.clear();
            episodes.push(EpisodeLog {
                episode: k,
                exploration_len: schedule.exploration_len(k),
                theta_hat: None,
                theta_sq_error: None,
                converged: None,
                degenerate: None,
                mle_iterations: None,
                gamma_hat: None,
                n_pairs: None,
            });
        }

        let fresh = source.sample_buyer(&mut feat_rng);
        let z = noise.sample(&mut noise_rng);
        let buyer = match phase {
            Phase::Exploration => {
                pool.push(fresh.clone());
                fresh
            }
            Phase::Exploitation => {
                let b = next_identity(&mut id_rng, world.tau, &pool, fresh);
                repeats += b.is_repeat as u64;
                b
            }
        };

        let u0 = theta0.index(&buyer.x0);
        let v = u0 + z;
        if !(v > 0.0 && v < sim.price_cap) {
            out_of_range += 1;
        }
        let p_star = noise.price_fn(u0).map_err(|e| (t, e))?;

        let price = match (kind, phase) {
            (PolicyKind::Oracle, _) => p_star,
            (_, Phase::Exploration) => {
                let p = uniform_price(&mut price_rng, sim.price_cap);
                obs.push(Observation::new(&buyer.x0, p, purchase(v, p).is_sale()));
                policy.observe_exploration(buyer.id, &buyer.x0);
                p
            }
            (_, Phase::Exploitation) => {
                let x = match responses.get(&buyer.id) {
                    Some(x) => x.clone(),
                    None => {
                        let br = best_response(&buyer, theta0, &world.cost, noise)
                            .map_err(|e| (t, e))?;
                        max_residual = max_residual.max(br.residual);
                        multiple_roots += br.multiple_roots as u64;
                        if buyer.is_repeat {
                            responses.insert(buyer.id, br.x.clone());
                        }
                        br.x
                    }
                };
                policy
                    .exploitation_price(buyer.id, &x, noise)
                    .map_err(|e| (t, e))?
                    .0
            }
        };
        if kind == PolicyKind::Oracle && phase == Phase::Exploration {
            // keep the price stream aligned with the other policies
            uniform_price(&mut price_rng, sim.price_cap);
        }

        let sold_star = purchase(v, p_star).is_sale();
        let sold = purchase(v, price).is_sale();
        regret.push(p_star * sold_star as u8 as f64 - price * sold as u8 as f64);
        expected.push(noise.expected_revenue(p_star, u0) - noise.expected_revenue(price, u0));
        exploration.push(phase == Phase::Exploration);

        let last_exploration = t + 1 == schedule.offset(k) + schedule.exploration_len(k);
        if kind != PolicyKind::Oracle && phase == Phase::Exploration && last_exploration {
            let est = if sim.inject_true_theta {
                ThetaEstimate::exact(theta0)
            } else {
                fit_theta_mle(&obs, theta0.w_theta, noise).map_err(|e| (t, e))?
            };
            let log = episodes.last_mut().expect("episode opened");
            let th = est.theta();
            log.theta_sq_error = Some(
                th.iter()
                    .zip(theta0.theta())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum(),
            );
            log.theta_hat = Some(th);
            log.converged = Some(est.converged);
            log.degenerate = Some(est.degenerate);
            log.mle_iterations = Some(est.iterations);
            if !est.converged && !est.degenerate {
                log::warn!("seed {seed}: estimate for episode {k} stopped at the iteration cap");
            }
            policy.set_theta_hat(est);
        }

        let episode_end = t + 1 == schedule.offset(k + 1) || t == horizon;
        if episode_end && kind == PolicyKind::StrategicUnknown {
            let log = episodes.last_mut().expect("episode opened");
            log.n_pairs = policy.match_store().map(|s| s.n_pairs());
            log.gamma_hat = current_gamma(&policy);
        }
    }

    let final_gamma_hat = current_gamma(&policy);
    let cum_regret = cumsum(&regret);
    let cum_expected_regret = cumsum(&expected);
    Ok(RegretTrace {
        policy: kind,
        seed,
        regret,
        expected_regret: expected,
        cum_regret,
        cum_expected_regret,
        exploration,
        log: RunLog {
            policy: kind,
            seed,
            episodes,
            max_best_response_residual: max_residual,
            multiple_root_events: multiple_roots,
            valuations_out_of_range: out_of_range,
            repeat_arrivals: repeats,
            branch_counts: (kind == PolicyKind::StrategicUnknown).then(|| policy.branch_counts()),
            final_gamma_hat,
            final_n_pairs: policy.match_store().map(|s| s.n_pairs()),
        },
    })
}

/// The estimate from every pair currently on file, fitted on demand.
fn current_gamma(policy: &PolicyState) -> Option<Vec<f64>> {
    let store = policy.match_store()?;
    crate::estimation::fit_gamma_ols(store)
        .ok()
        .map(|g| g.gamma_hat)
}
