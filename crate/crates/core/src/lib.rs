//! Contextual dynamic pricing against buyers who manipulate their features.
//!
//! A seller posts prices to a stream of buyers whose valuation is linear in
//! their features plus noise. Buyers know the seller's pricing rule and shift
//! their revealed features to lower the price, paying a quadratic cost. The
//! crate simulates this market, implements the oracle, non-strategic and two
//! strategic explore-then-commit policies, and measures their regret.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod market;
pub mod noise;
pub mod policy;
pub mod roots;
pub mod selftest;

pub use config::{ExperimentConfig, MarketConfig, NoiseConfig, SweepConfig, World};
pub use error::{Error, Result};
pub use estimation::{
    fit_gamma_ols, fit_gamma_pairs, fit_theta_mle, neg_loglik_and_grad, project_l1_ball,
    GammaEstimate, MatchStore, MatchedPair, Observation, ThetaEstimate,
};
pub use market::{
    best_response, next_identity, purchase, valuation, BestResponse, BuyerId, BuyerProfile,
    BuyerSource, CoordinateLaw, FeatureLaw, MarginalCost, MarketEvent, Outcome, PreferenceParams,
};
pub use noise::{NoiseKind, NoiseModel};
pub use policy::{
    debiased_price, nonstrategic_price, oracle_price, strategic_known_price, uniform_price,
    BranchCounts, EpisodeSchedule, Phase, PolicyKind, PolicyState, UnknownCostBranch,
};
