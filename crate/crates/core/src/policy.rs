//! Episodic explore-then-commit schedule and the pricing rules.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit_gamma_ols, GammaEstimate, MatchStore, ThetaEstimate};
use crate::market::{dot, BuyerId, MarginalCost, PreferenceParams};
use crate::noise::NoiseModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Exploration,
    Exploitation,
}

/// Doubling episodes `l_k = 2^(k-1) l0`, each opening with
/// `a_k = floor(sqrt(C_a l_k))` uniform-price periods.
///
/// Time starts at `t = 1`, so episode `k` covers
/// `[offset(k), offset(k+1))` with `offset(k) = l0 (2^(k-1) - 1) + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSchedule {
    l0: usize,
    c_a: f64,
}

impl EpisodeSchedule {
    pub fn new(l0: usize, c_a: f64) -> Result<Self> {
        if l0 < 2 {
            return Err(Error::config("schedule.l0", "must be at least 2"));
        }
        if !(c_a > 0.0 && c_a.is_finite()) {
            return Err(Error::config("schedule.c_a", "must be positive"));
        }
        Ok(Self { l0, c_a })
    }

    pub fn l0(&self) -> usize {
        self.l0
    }

    pub fn c_a(&self) -> f64 {
        self.c_a
    }

    pub fn episode_len(&self, k: usize) -> usize {
        self.l0 << (k - 1)
    }

    /// `floor(sqrt(C_a l_k))` before any clamping.
    pub fn raw_exploration_len(&self, k: usize) -> usize {
        ((self.c_a * self.episode_len(k) as f64).sqrt().floor() as usize).max(1)
    }

    /// Exploration length, clamped so at least one exploitation period remains.
    pub fn exploration_len(&self, k: usize) -> usize {
        self.raw_exploration_len(k).min(self.episode_len(k) - 1)
    }

    pub fn offset(&self, k: usize) -> usize {
        self.l0 * ((1usize << (k - 1)) - 1) + 1
    }

    pub fn episode_of(&self, t: usize) -> usize {
        assert!(t >= 1, "periods start at 1");
        // offset(k) <= t  <=>  2^(k-1) <= (t - 1) / l0 + 1
        let m = (t - 1) / self.l0 + 1;
        (usize::BITS - m.leading_zeros()) as usize
    }

    pub fn phase_of(&self, t: usize) -> (usize, Phase) {
        let k = self.episode_of(t);
        let phase = if t < self.offset(k) + self.exploration_len(k) {
            Phase::Exploration
        } else {
            Phase::Exploitation
        };
        (k, phase)
    }

    /// Episodes whose exploration length had to be clamped within `horizon`.
    pub fn clamped_episodes(&self, horizon: usize) -> Vec<usize> {
        (1..=self.episode_of(horizon.max(1)))
            .filter(|&k| self.raw_exploration_len(k) >= self.episode_len(k))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Oracle,
    #[serde(alias = "non_strategic")]
    Nonstrategic,
    StrategicKnown,
    StrategicUnknown,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Oracle,
        PolicyKind::Nonstrategic,
        PolicyKind::StrategicKnown,
        PolicyKind::StrategicUnknown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Oracle => "oracle",
            PolicyKind::Nonstrategic => "nonstrategic",
            PolicyKind::StrategicKnown => "strategic_known",
            PolicyKind::StrategicUnknown => "strategic_unknown",
        }
    }

    /// Whether the policy posts `g`-based prices, which buyers answer by manipulating.
    pub fn induces_manipulation(self) -> bool {
        self != PolicyKind::Oracle
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(PolicyKind::Oracle),
            "nonstrategic" | "non_strategic" => Ok(PolicyKind::Nonstrategic),
            "strategic_known" => Ok(PolicyKind::StrategicKnown),
            "strategic_unknown" => Ok(PolicyKind::StrategicUnknown),
            other => Err(Error::config(
                "policy.kinds",
                format!(
                    "unknown policy `{other}` (expected oracle, nonstrategic, strategic_known or strategic_unknown)"
                ),
            )),
        }
    }
}

/// Which pricing rule the unknown-cost policy used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownCostBranch {
    /// The buyer's true features are on file.
    Matched,
    /// Priced with the estimated manipulation direction.
    Debiased,
    /// No pairs yet, priced on revealed features.
    Plain,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCounts {
    pub matched: u64,
    pub debiased: u64,
    pub plain: u64,
}

impl BranchCounts {
    fn bump(&mut self, b: UnknownCostBranch) {
        match b {
            UnknownCostBranch::Matched => self.matched += 1,
            UnknownCostBranch::Debiased => self.debiased += 1,
            UnknownCostBranch::Plain => self.plain += 1,
        }
    }
}

/// An i.i.d. exploration price on the open interval `(0, cap)`.
pub fn uniform_price<R: Rng + ?Sized>(rng: &mut R, cap: f64) -> f64 {
    let u: f64 = rng.sample(Open01);
    cap * u
}

/// `g(theta0^T x0)`.
pub fn oracle_price(theta: &PreferenceParams, x0: &[f64], noise: &NoiseModel) -> Result<f64> {
    noise.price_fn(theta.index(x0))
}

/// `g(theta_hat^T x)` on the revealed features.
pub fn nonstrategic_price(theta_hat: &ThetaEstimate, x: &[f64], noise: &NoiseModel) -> Result<f64> {
    noise.price_fn(theta_hat.index(x))
}

/// `g(theta_hat^T x + beta_hat^T A^{-1} beta_hat g'(theta_hat^T x))`.
pub fn strategic_known_price(
    theta_hat: &ThetaEstimate,
    x: &[f64],
    cost: &MarginalCost,
    noise: &NoiseModel,
) -> Result<f64> {
    let u = theta_hat.index(x);
    let q = cost.inv_quad(&theta_hat.beta_hat);
    if !q.is_finite() {
        return Err(Error::SingularCost);
    }
    noise.price_fn(u + q * noise.price_fn_deriv(u)?)
}

/// `g(theta_hat^T x - beta_hat^T gamma_hat g'(theta_hat^T x))`.
pub fn debiased_price(
    theta_hat: &ThetaEstimate,
    x: &[f64],
    gamma_hat: &[f64],
    noise: &NoiseModel,
) -> Result<f64> {
    let u = theta_hat.index(x);
    let shift = -dot(&theta_hat.beta_hat, gamma_hat);
    noise.price_fn(u + shift * noise.price_fn_deriv(u)?)
}

/// Seller-side state of one policy within one run.
#[derive(Debug, Clone)]
pub struct PolicyState {
    kind: PolicyKind,
    theta_hat: Option<ThetaEstimate>,
    gamma_hat: Option<GammaEstimate>,
    match_store: Option<MatchStore>,
    cost: Option<MarginalCost>,
    price_cap: f64,
    branches: BranchCounts,
}

impl PolicyState {
    pub fn new(kind: PolicyKind, cost: Option<MarginalCost>, price_cap: f64) -> Result<Self> {
        if !(price_cap > 0.0) {
            return Err(Error::config("schedule.price_cap", "must be positive"));
        }
        if kind == PolicyKind::StrategicKnown && cost.is_none() {
            return Err(Error::config(
                "policy",
                "strategic_known needs the marginal cost matrix",
            ));
        }
        let match_store = (kind == PolicyKind::StrategicUnknown).then(MatchStore::new);
        let cost = if kind == PolicyKind::StrategicKnown {
            cost
        } else {
            None
        };
        Ok(Self {
            kind,
            theta_hat: None,
            gamma_hat: None,
            match_store,
            cost,
            price_cap,
            branches: BranchCounts::default(),
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn price_cap(&self) -> f64 {
        self.price_cap
    }

    pub fn theta_hat(&self) -> Option<&ThetaEstimate> {
        self.theta_hat.as_ref()
    }

    /// Replaces the estimate used for the coming exploitation phase.
    pub fn set_theta_hat(&mut self, est: ThetaEstimate) {
        self.theta_hat = Some(est);
    }

    /// Discards the current estimate at an episode boundary.
    pub fn clear_theta_hat(&mut self) {
        self.theta_hat = None;
    }

    pub fn match_store(&self) -> Option<&MatchStore> {
        self.match_store.as_ref()
    }

    pub fn gamma_hat(&self) -> Option<&GammaEstimate> {
        self.gamma_hat.as_ref()
    }

    pub fn branch_counts(&self) -> BranchCounts {
        self.branches
    }

    /// Files a truthful exploration observation (unknown-cost policy only).
    pub fn observe_exploration(&mut self, id: BuyerId, x0: &[f64]) {
        if let Some(store) = self.match_store.as_mut() {
            if store
                .record_and_match(id, x0, Phase::Exploration, f64::NAN)
                .is_some()
            {
                self.gamma_hat = None;
            }
        }
    }

    /// Posts an exploitation price to buyer `id` revealing `x`.
    ///
    /// For the unknown-cost policy the observation is filed in the match
    /// store first, so a buyer who completes a pair is priced on the true
    /// features it just matched.
    pub fn exploitation_price(
        &mut self,
        id: BuyerId,
        x: &[f64],
        noise: &NoiseModel,
    ) -> Result<(f64, Option<UnknownCostBranch>)> {
        let theta_hat = self.theta_hat.as_ref().ok_or_else(|| {
            Error::config("policy", "exploitation price requested before estimation")
        })?;
        match self.kind {
            PolicyKind::Oracle => Err(Error::config(
                "policy",
                "the oracle prices from true features",
            )),
            PolicyKind::Nonstrategic => Ok((nonstrategic_price(theta_hat, x, noise)?, None)),
            PolicyKind::StrategicKnown => {
                let cost = self.cost.as_ref().ok_or(Error::SingularCost)?;
                Ok((strategic_known_price(theta_hat, x, cost, noise)?, None))
            }
            PolicyKind::StrategicUnknown => {
                let u = noise.price_fn_deriv(theta_hat.index(x))?;
                let store = self.match_store.as_mut().expect("unknown-cost store");
                if store
                    .record_and_match(id, x, Phase::Exploitation, u)
                    .is_some()
                {
                    self.gamma_hat = None;
                }
                let (price, branch) = if let Some(x0) = store.true_feature_if_matched(id) {
                    (
                        noise.price_fn(theta_hat.index(x0))?,
                        UnknownCostBranch::Matched,
                    )
                } else if store.n_pairs() > 0 {
                    if self.gamma_hat.is_none() {
                        self.gamma_hat = Some(fit_gamma_ols(store)?);
                    }
                    let gamma = &self.gamma_hat.as_ref().expect("fitted").gamma_hat;
                    (
                        debiased_price(theta_hat, x, gamma, noise)?,
                        UnknownCostBranch::Debiased,
                    )
                } else {
                    (
                        nonstrategic_price(theta_hat, x, noise)?,
                        UnknownCostBranch::Plain,
                    )
                };
                self.branches.bump(branch);
                Ok((price, Some(branch)))
            }
        }
    }
}
