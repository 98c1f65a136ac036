//! Buyers, valuations, purchase outcomes and strategic feature manipulation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::roots::{illinois, RootOptions};

/// Opaque buyer identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BuyerId(pub u64);

/// Valuation parameter `theta = (beta, alpha)` with its l1 bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceParams {
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub w_theta: f64,
}

impl PreferenceParams {
    pub fn new(beta: Vec<f64>, alpha: f64, w_theta: f64) -> Result<Self> {
        let p = Self {
            beta,
            alpha,
            w_theta,
        };
        if p.l1_norm() > w_theta + 1e-12 {
            return Err(Error::config(
                "market.theta",
                format!("||theta||_1 = {} exceeds w_theta = {w_theta}", p.l1_norm()),
            ));
        }
        Ok(p)
    }

    /// Splits a stacked `(beta..., alpha)` vector.
    pub fn from_theta(theta: &[f64], w_theta: f64) -> Result<Self> {
        let Some((&alpha, beta)) = theta.split_last() else {
            return Err(Error::config("market.theta", "theta must not be empty"));
        };
        Self::new(beta.to_vec(), alpha, w_theta)
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn l1_norm(&self) -> f64 {
        self.beta.iter().map(|b| b.abs()).sum::<f64>() + self.alpha.abs()
    }

    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.beta.clone();
        t.push(self.alpha);
        t
    }

    /// `beta^T x + alpha` for an unaugmented feature vector.
    pub fn index(&self, x: &[f64]) -> f64 {
        dot(&self.beta, x) + self.alpha
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric positive-definite marginal cost of manipulation.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCost {
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    lambda_min: f64,
    lambda_max: f64,
}

impl MarginalCost {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::config("market.cost", "cost matrix must be square"));
        }
        let a = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        Self::from_matrix(a)
    }

    pub fn identity(d: usize) -> Self {
        Self::from_matrix(DMatrix::identity(d, d)).expect("identity is SPD")
    }

    fn from_matrix(a: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        for i in 0..d {
            for j in 0..i {
                if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 {
                    return Err(Error::config(
                        "market.cost",
                        "cost matrix must be symmetric",
                    ));
                }
            }
        }
        let eig = SymmetricEigen::new(a.clone());
        let lambda_min = eig.eigenvalues.min();
        let lambda_max = eig.eigenvalues.max();
        if !(lambda_min > 0.0) || lambda_max / lambda_min > 1e12 {
            return Err(Error::SingularCost);
        }
        let a_inv = a.clone().cholesky().ok_or(Error::SingularCost)?.inverse();
        Ok(Self {
            a,
            a_inv,
            lambda_min,
            lambda_max,
        })
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::from_matrix(&self.a * s)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `A^{-1} b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        (&self.a_inv * DVector::from_column_slice(b))
            .iter()
            .copied()
            .collect()
    }

    /// `b^T A^{-1} b`.
    pub fn inv_quad(&self, b: &[f64]) -> f64 {
        dot(b, &self.solve(b))
    }

    /// `d^T A d`.
    pub fn quad(&self, d: &[f64]) -> f64 {
        let v = DVector::from_column_slice(d);
        v.dot(&(&self.a * &v))
    }
}

/// A buyer's identity and true features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuyerProfile {
    pub id: BuyerId,
    pub x0: Vec<f64>,
    pub is_repeat: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Sale,
    NoSale,
}

impl Outcome {
    pub fn is_sale(self) -> bool {
        self == Outcome::Sale
    }
}

/// One period of interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketEvent {
    pub t: usize,
    pub buyer: BuyerProfile,
    pub x_revealed: Vec<f64>,
    pub price: f64,
    pub valuation: f64,
    pub outcome: Outcome,
    pub noise: f64,
    /// Whether `0 < v < B` held for this draw.
    pub valuation_in_range: bool,
}

/// Law of a single feature coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoordinateLaw {
    Uniform { lo: f64, hi: f64 },
    Point { value: f64 },
}

impl CoordinateLaw {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CoordinateLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            CoordinateLaw::Point { value } => value,
        }
    }

    fn max_abs(&self) -> f64 {
        match *self {
            CoordinateLaw::Uniform { lo, hi } => lo.abs().max(hi.abs()),
            CoordinateLaw::Point { value } => value.abs(),
        }
    }
}

/// Distribution of true feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureLaw {
    PerCoordinate(Vec<CoordinateLaw>),
    /// Resample rows of an empirical pool uniformly with replacement.
    Empirical(Arc<Vec<Vec<f64>>>),
}

impl FeatureLaw {
    pub fn dim(&self) -> usize {
        match self {
            FeatureLaw::PerCoordinate(c) => c.len(),
            FeatureLaw::Empirical(rows) => rows.first().map_or(0, Vec::len),
        }
    }

    /// Largest `||(x, 1)||_2` the law can produce.
    pub fn max_augmented_norm(&self) -> f64 {
        let sq = match self {
            FeatureLaw::PerCoordinate(c) => c.iter().map(|l| l.max_abs().powi(2)).sum::<f64>(),
            FeatureLaw::Empirical(rows) => rows
                .iter()
                .map(|r| r.iter().map(|x| x * x).sum::<f64>())
                .fold(0.0, f64::max),
        };
        (sq + 1.0).sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            FeatureLaw::PerCoordinate(c) => c.iter().map(|l| l.sample(rng)).collect(),
            FeatureLaw::Empirical(rows) => {
                let idx = uniform_index(rng.random::<u64>(), rows.len());
                rows[idx].clone()
            }
        }
    }
}

/// Maps a uniform `u64` onto `0..len` with a single draw, so that the number
/// of values consumed from the stream never depends on `len`.
pub(crate) fn uniform_index(draw: u64, len: usize) -> usize {
    ((draw as u128 * len as u128) >> 64) as usize
}

/// Issues fresh buyers with unique ids.
#[derive(Debug, Clone)]
pub struct BuyerSource {
    law: FeatureLaw,
    next_id: u64,
}

impl BuyerSource {
    pub fn new(law: FeatureLaw) -> Self {
        Self { law, next_id: 0 }
    }

    pub fn law(&self) -> &FeatureLaw {
        &self.law
    }

    pub fn sample_buyer<R: Rng + ?Sized>(&mut self, rng: &mut R) -> BuyerProfile {
        let id = BuyerId(self.next_id);
        self.next_id += 1;
        BuyerProfile {
            id,
            x0: self.law.sample(rng),
            is_repeat: false,
        }
    }
}

/// `v = beta^T x0 + alpha + z`.
pub fn valuation(profile: &BuyerProfile, theta: &PreferenceParams, z: f64) -> Result<f64> {
    if profile.x0.len() != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            got: profile.x0.len(),
        });
    }
    Ok(theta.index(&profile.x0) + z)
}

/// A sale happens iff the valuation reaches the price; ties sell.
pub fn purchase(valuation: f64, price: f64) -> Outcome {
    if valuation >= price {
        Outcome::Sale
    } else {
        Outcome::NoSale
    }
}

/// Draws the buyer for an exploitation period: with probability `tau` a
/// uniformly chosen past exploration buyer returns, otherwise `fresh` arrives.
///
/// Exactly two values are drawn from `rng` on every call.
pub fn next_identity<R: Rng + ?Sized>(
    rng: &mut R,
    tau: f64,
    exploration_pool: &[BuyerProfile],
    fresh: BuyerProfile,
) -> BuyerProfile {
    let draw: f64 = rng.random();
    let pick: u64 = rng.random();
    if draw < tau && !exploration_pool.is_empty() {
        let mut b = exploration_pool[uniform_index(pick, exploration_pool.len())].clone();
        b.is_repeat = true;
        b
    } else {
        fresh
    }
}

/// Result of a buyer's manipulation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub x: Vec<f64>,
    /// `||x - x0 + A^{-1} beta g'(alpha + beta^T x)||_inf`.
    pub residual: f64,
    /// More than one stationary point was found; `x` is the cheapest.
    pub multiple_roots: bool,
    /// `C(x, x0)` at the returned point.
    pub total_cost: f64,
}

const SCAN_POINTS: usize = 32;

/// Total cost `g(alpha + beta^T x) + (x - x0)^T A (x - x0) / 2` a buyer pays
/// when the seller prices with `g`.
pub fn manipulation_cost(
    x: &[f64],
    x0: &[f64],
    theta: &PreferenceParams,
    cost: &MarginalCost,
    noise: &NoiseModel,
) -> Result<f64> {
    let delta: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    Ok(noise.price_fn(theta.index(x))? + 0.5 * cost.quad(&delta))
}

/// Solves `x = x0 - A^{-1} beta g'(alpha + beta^T x)`.
///
/// Writing `s = beta^T x` collapses the fixed point to the scalar equation
/// `h(s) = s - s0 + q g'(alpha + s) = 0` with `s0 = beta^T x0` and
/// `q = beta^T A^{-1} beta`. Because `0 < g' < 1` every root lies in
/// `[s0 - q, s0]`, which is scanned for sign changes before refining.
pub fn best_response(
    profile: &BuyerProfile,
    theta: &PreferenceParams,
    cost: &MarginalCost,
    noise: &NoiseModel,
) -> Result<BestResponse> {
    let d = theta.dim();
    if profile.x0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: profile.x0.len(),
        });
    }
    if cost.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: cost.dim(),
        });
    }
    let x0 = &profile.x0;
    let w = cost.solve(&theta.beta);
    let q = dot(&theta.beta, &w);
    if q <= 1e-300 {
        let total_cost = noise.price_fn(theta.index(x0))?;
        return Ok(BestResponse {
            x: x0.clone(),
            residual: 0.0,
            multiple_roots: false,
            total_cost,
        });
    }
    let s0 = dot(&theta.beta, x0);
    let alpha = theta.alpha;
    let h = |s: f64| -> Result<f64> { Ok(s - s0 + q * noise.price_fn_deriv(alpha + s)?) };

    let lo = s0 - q;
    let grid: Vec<f64> = (0..=SCAN_POINTS)
        .map(|i| lo + q * i as f64 / SCAN_POINTS as f64)
        .collect();
    let values = grid.iter().map(|&s| h(s)).collect::<Result<Vec<_>>>()?;

    let opts = RootOptions {
        tol: 1e-13,
        max_iter: 200,
    };
    let mut roots = Vec::new();
    let mut first_err = None;
    for i in 0..SCAN_POINTS {
        let (a, b) = (grid[i], grid[i + 1]);
        let (ha, hb) = (values[i], values[i + 1]);
        if ha == 0.0 {
            roots.push(a);
        } else if ha.signum() != hb.signum() && hb != 0.0 {
            // h is evaluated through a fallible inversion; a failure inside the
            // refinement is reported only if no other root is found.
            let f = |s: f64| h(s).unwrap_or(f64::NAN);
            match illinois(f, a, b, opts, "best response") {
                Ok(r) => roots.push(r),
                Err(e) => first_err = first_err.or(Some(e)),
            }
        }
    }
    if values[SCAN_POINTS] == 0.0 {
        roots.push(grid[SCAN_POINTS]);
    }
    if roots.is_empty() {
        return Err(first_err.unwrap_or(Error::NoConvergence {
            what: "best response",
            iterations: 0,
            residual: f64::NAN,
        }));
    }

    let multiple_roots = roots.len() > 1;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in roots {
        let c = (s0 - s) / q;
        let x: Vec<f64> = x0.iter().zip(&w).map(|(xi, wi)| xi - wi * c).collect();
        let total = manipulation_cost(&x, x0, theta, cost, noise)?;
        if best.as_ref().is_none_or(|(_, b)| total < *b) {
            best = Some((x, total));
        }
    }
    let (x, total_cost) = best.expect("at least one root");
    let slope = noise.price_fn_deriv(theta.index(&x))?;
    let residual = x
        .iter()
        .zip(x0)
        .zip(&w)
        .map(|((xi, x0i), wi)| (xi - x0i + wi * slope).abs())
        .fold(0.0, f64::max);
    Ok(BestResponse {
        x,
        residual,
        multiple_roots,
        total_cost,
    })
}
