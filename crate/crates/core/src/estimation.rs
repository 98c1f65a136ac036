//! Exploration-phase maximum likelihood for `theta`, the least-squares
//! estimate of the manipulation direction `gamma = -A^{-1} beta`, and the
//! id-keyed store that pairs true with manipulated features.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{dot, BuyerId, MarketEvent, PreferenceParams};
use crate::noise::NoiseModel;
use crate::policy::Phase;

/// Probabilities inside the log-likelihood are clamped to this distance from 0 and 1.
pub const PROB_CLAMP: f64 = 1e-12;
pub const MLE_MAX_ITER: usize = 5000;
pub const MLE_GRAD_TOL: f64 = 1e-7;
pub const MLE_OBJ_TOL: f64 = 1e-12;

/// A posted price, the augmented feature `(x, 1)` it was posted to, and the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub price: f64,
    pub sale: bool,
}

impl Observation {
    pub fn new(features: &[f64], price: f64, sale: bool) -> Self {
        let mut x = features.to_vec();
        x.push(1.0);
        Self { x, price, sale }
    }
}

impl From<&MarketEvent> for Observation {
    fn from(e: &MarketEvent) -> Self {
        Observation::new(&e.x_revealed, e.price, e.outcome.is_sale())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub beta_hat: Vec<f64>,
    pub alpha_hat: f64,
    pub neg_loglik: f64,
    pub n_samples: usize,
    pub converged: bool,
    pub iterations: usize,
    /// All responses were identical, so the likelihood has no interior maximiser.
    pub degenerate: bool,
}

impl ThetaEstimate {
    /// Wraps a known parameter, e.g. to run a policy with the truth plugged in.
    pub fn exact(theta: &PreferenceParams) -> Self {
        Self {
            beta_hat: theta.beta.clone(),
            alpha_hat: theta.alpha,
            neg_loglik: f64::NAN,
            n_samples: 0,
            converged: true,
            iterations: 0,
            degenerate: false,
        }
    }

    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.beta_hat.clone();
        t.push(self.alpha_hat);
        t
    }

    /// `beta_hat^T x + alpha_hat` for an unaugmented feature vector.
    pub fn index(&self, x: &[f64]) -> f64 {
        dot(&self.beta_hat, x) + self.alpha_hat
    }
}

/// Negative mean log-likelihood and its gradient at `theta`.
///
/// With `w = p - theta^T x`, a sale contributes `log(1 - F(w))` and a
/// no-sale `log F(w)`. Probabilities are clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`; where a clamp is active the term is
/// constant and contributes nothing to the gradient.
pub fn neg_loglik_and_grad(
    theta: &[f64],
    obs: &[Observation],
    noise: &NoiseModel,
) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for o in obs {
        let w = o.price - dot(theta, &o.x);
        let (prob, coef) = if o.sale {
            // d/dtheta log(1 - F(w)) = f(w) / (1 - F(w)) x
            let p = noise.sf(w);
            (p, -noise.pdf(w) / p)
        } else {
            // d/dtheta log F(w) = -f(w) / F(w) x
            let p = noise.cdf(w);
            (p, noise.pdf(w) / p)
        };
        if prob <= PROB_CLAMP {
            value -= PROB_CLAMP.ln();
        } else if prob >= 1.0 - PROB_CLAMP {
            value -= (1.0 - PROB_CLAMP).ln();
        } else {
            value -= prob.ln();
            for (g, xi) in grad.iter_mut().zip(&o.x) {
                *g += coef * xi;
            }
        }
    }
    let n = obs.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (value / n, grad)
}

/// Euclidean projection onto `{ ||theta||_1 <= radius }` by sorting magnitudes.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    if radius <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shrink = 0.0;
    for (j, m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - radius) / (j + 1) as f64;
        if *m > t {
            shrink = t;
        } else {
            break;
        }
    }
    v.iter()
        .map(|x| x.signum() * (x.abs() - shrink).max(0.0))
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Maximises the mean log-likelihood over the l1 ball of radius `w_theta`
/// by projected gradient steps with Barzilai-Borwein step lengths and a
/// backtracking sufficient-decrease test. Starts at zero.
pub fn fit_theta_mle(
    obs: &[Observation],
    w_theta: f64,
    noise: &NoiseModel,
) -> Result<ThetaEstimate> {
    let Some(first) = obs.first() else {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    };
    let p = first.x.len();
    if let Some(bad) = obs.iter().find(|o| o.x.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: bad.x.len(),
        });
    }
    // d + 2 where p = d + 1
    if obs.len() < p + 1 {
        return Err(Error::InsufficientData {
            needed: p + 1,
            got: obs.len(),
        });
    }
    let degenerate = obs.iter().all(|o| o.sale) || obs.iter().all(|o| !o.sale);

    let mut theta = vec![0.0; p];
    let (mut value, mut grad) = neg_loglik_and_grad(&theta, obs, noise);
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MLE_MAX_ITER {
        iterations += 1;
        let (next, next_value) = loop {
            let trial: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let cand = project_l1_ball(&trial, w_theta);
            let diff: Vec<f64> = cand.iter().zip(&theta).map(|(c, t)| c - t).collect();
            let (cand_value, _) = neg_loglik_and_grad(&cand, obs, noise);
            let model = value + dot(&grad, &diff) + dot(&diff, &diff) / (2.0 * step);
            if cand_value <= model + 1e-15 * value.abs() || step < 1e-14 {
                break (cand, cand_value);
            }
            step *= 0.5;
        };
        let (_, next_grad) = neg_loglik_and_grad(&next, obs, noise);
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let change = (value - next_value).abs();
        theta = next;
        value = next_value;
        grad = next_grad;

        let unit: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - g).collect();
        let mapping = dist(&theta, &project_l1_ball(&unit, w_theta));
        if mapping <= MLE_GRAD_TOL || change <= MLE_OBJ_TOL {
            converged = true;
            break;
        }
        let sy = dot(&s, &y);
        step = if sy > 0.0 {
            (dot(&s, &s) / sy).clamp(1e-10, 1e10)
        } else {
            (step * 2.0).min(1e10)
        };
    }

    let (alpha_hat, beta_hat) = theta.split_last().expect("p >= 1");
    Ok(ThetaEstimate {
        beta_hat: beta_hat.to_vec(),
        alpha_hat: *alpha_hat,
        neg_loglik: value,
        n_samples: obs.len(),
        converged: converged && !degenerate,
        iterations,
        degenerate,
    })
}

/// A buyer seen in both phases: true features, manipulated features, and
/// `u = g'(theta_hat^T x)` at the exploitation-side observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub id: BuyerId,
    pub x0: Vec<f64>,
    pub x: Vec<f64>,
    pub u: f64,
}

impl MatchedPair {
    pub fn delta(&self) -> Vec<f64> {
        self.x.iter().zip(&self.x0).map(|(a, b)| a - b).collect()
    }
}

/// Exploration map, exploitation map and matched pairs.
#[derive(Debug, Clone, Default)]
pub struct MatchStore {
    e1: HashMap<BuyerId, Vec<f64>>,
    e2: HashMap<BuyerId, (Vec<f64>, f64)>,
    pairs: Vec<MatchedPair>,
}

impl MatchStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a revealed feature vector and returns the pair it completes, if any.
    /// `u` is only read for exploitation observations.
    pub fn record_and_match(
        &mut self,
        id: BuyerId,
        revealed: &[f64],
        phase: Phase,
        u: f64,
    ) -> Option<&MatchedPair> {
        let pair = match phase {
            Phase::Exploration => {
                self.e1.insert(id, revealed.to_vec());
                self.e2.get(&id).map(|(x, u)| MatchedPair {
                    id,
                    x0: revealed.to_vec(),
                    x: x.clone(),
                    u: *u,
                })
            }
            Phase::Exploitation => {
                self.e2.insert(id, (revealed.to_vec(), u));
                self.e1.get(&id).map(|x0| MatchedPair {
                    id,
                    x0: x0.clone(),
                    x: revealed.to_vec(),
                    u,
                })
            }
        };
        let pair = pair?;
        self.pairs.push(pair);
        self.pairs.last()
    }

    /// True features of `id` if it is known in both phases.
    pub fn true_feature_if_matched(&self, id: BuyerId) -> Option<&[f64]> {
        if self.e2.contains_key(&id) {
            self.e1.get(&id).map(Vec::as_slice)
        } else {
            None
        }
    }

    pub fn pairs(&self) -> &[MatchedPair] {
        &self.pairs
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn exploration_len(&self) -> usize {
        self.e1.len()
    }

    pub fn exploitation_len(&self) -> usize {
        self.e2.len()
    }

    /// Every pair's id is present in both maps.
    pub fn is_consistent(&self) -> bool {
        self.pairs
            .iter()
            .all(|p| self.e1.contains_key(&p.id) && self.e2.contains_key(&p.id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    pub gamma_hat: Vec<f64>,
    pub n_pairs: usize,
    /// `u^T u`.
    pub per_coordinate_denominator: f64,
}

/// Per-coordinate no-intercept least squares of the displacement
/// `delta_t = x_t - x0_t` on `u_t`.
pub fn fit_gamma_ols(store: &MatchStore) -> Result<GammaEstimate> {
    fit_gamma_pairs(store.pairs())
}

pub fn fit_gamma_pairs(pairs: &[MatchedPair]) -> Result<GammaEstimate> {
    let Some(first) = pairs.first() else {
        return Err(Error::EmptyStore);
    };
    let d = first.x.len();
    let mut num = vec![0.0; d];
    let mut den = 0.0;
    for p in pairs {
        den += p.u * p.u;
        for (j, (x, x0)) in p.x.iter().zip(&p.x0).enumerate() {
            num[j] += p.u * (x - x0);
        }
    }
    if !(den > 0.0) {
        return Err(Error::EmptyStore);
    }
    Ok(GammaEstimate {
        gamma_hat: num.iter().map(|n| n / den).collect(),
        n_pairs: pairs.len(),
        per_coordinate_denominator: den,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_no_sale_at_saturated_uniform() {
        let noise = NoiseModel::uniform(-0.5, 0.5);
        let obs = vec![Observation::new(&[0.0], 1.0, false)];
        let (v, g) = neg_loglik_and_grad(&[0.0, 0.0], &obs, &noise);
        // F(1) = 1 is clamped to 1 - 1e-12
        assert!(v.abs() < 1e-11);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn projection_inside_ball_is_identity() {
        assert_eq!(project_l1_ball(&[0.1, -0.2], 1.0), vec![0.1, -0.2]);
        let p = project_l1_ball(&[3.0, -1.0, 0.5], 1.0);
        assert!((p.iter().map(|x| x.abs()).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn single_sale_pushes_to_boundary() {
        let noise = NoiseModel::standard_normal();
        let obs = vec![
            Observation::new(&[0.0], 1.0, true),
            Observation::new(&[0.0], 1.0, true),
            Observation::new(&[0.0], 1.0, true),
        ];
        let est = fit_theta_mle(&obs, 5.0, &noise).unwrap();
        assert!(est.degenerate && !est.converged);
        assert!((est.beta_hat[0].abs() + est.alpha_hat.abs() - 5.0).abs() < 1e-9);
        // x = (0, 1): all mass goes to the intercept
        assert!((est.alpha_hat - 5.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_observations() {
        let noise = NoiseModel::standard_normal();
        let obs = vec![Observation::new(&[0.0, 1.0], 1.0, true)];
        assert!(matches!(
            fit_theta_mle(&obs, 5.0, &noise),
            Err(Error::InsufficientData { .. })
        ));
    }

    fn pair(id: u64, x0: Vec<f64>, x: Vec<f64>, u: f64) -> MatchedPair {
        MatchedPair {
            id: BuyerId(id),
            x0,
            x,
            u,
        }
    }

    #[test]
    fn gamma_exact_regression() {
        let gamma = [-0.4, 1.3];
        let pairs: Vec<_> = [0.2, 0.35, 0.5, 0.11]
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                pair(
                    i as u64,
                    vec![1.0, 2.0],
                    vec![1.0 + gamma[0] * u, 2.0 + gamma[1] * u],
                    u,
                )
            })
            .collect();
        let est = fit_gamma_pairs(&pairs).unwrap();
        assert!((est.gamma_hat[0] - gamma[0]).abs() < 1e-12);
        assert!((est.gamma_hat[1] - gamma[1]).abs() < 1e-12);
        assert_eq!(est.n_pairs, 4);
    }

    #[test]
    fn gamma_single_pair_is_ratio() {
        let est = fit_gamma_pairs(&[pair(0, vec![0.0], vec![-0.3], 0.6)]).unwrap();
        assert!((est.gamma_hat[0] + 0.5).abs() < 1e-15);
        assert!(matches!(
            fit_gamma_ols(&MatchStore::new()),
            Err(Error::EmptyStore)
        ));
    }

    #[test]
    fn store_matching_rules() {
        let mut s = MatchStore::new();
        assert!(s
            .record_and_match(BuyerId(1), &[1.0, 1.0], Phase::Exploration, f64::NAN)
            .is_none());
        assert!(s.true_feature_if_matched(BuyerId(1)).is_none());
        let p = s
            .record_and_match(BuyerId(1), &[0.5, 0.0], Phase::Exploitation, 0.3)
            .cloned()
            .unwrap();
        assert_eq!(p.delta(), vec![-0.5, -1.0]);
        assert_eq!(p.u, 0.3);
        assert_eq!(s.true_feature_if_matched(BuyerId(1)), Some(&[1.0, 1.0][..]));
        // a second visit adds a second pair
        assert!(s
            .record_and_match(BuyerId(1), &[0.5, 0.0], Phase::Exploitation, 0.3)
            .is_some());
        assert_eq!(s.n_pairs(), 2);
        // fresh exploitation id: no pair
        assert!(s
            .record_and_match(BuyerId(2), &[0.5, 0.0], Phase::Exploitation, 0.3)
            .is_none());
        assert!(s.is_consistent());
    }
}
