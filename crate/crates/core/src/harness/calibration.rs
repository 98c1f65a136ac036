//! Builds a simulation world from loan application records.
//!
//! Each record's price is the present value of its monthly payments at a
//! fixed monthly rate minus the amount lent. The four applicant features are
//! standardised, a binary choice model with standard normal noise is fitted
//! to the whole dataset, and that fit is then treated as the truth when
//! replaying resampled applicants.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, NoiseConfig};
use crate::error::{Error, Result};
use crate::estimation::{fit_theta_mle, Observation};
use crate::market::dot;
use crate::noise::NoiseModel;

/// Required CSV columns, in the order they are written.
pub const LOAN_COLUMNS: [&str; 8] = [
    "amount_approved",
    "fico",
    "prime_rate",
    "competitor_rate",
    "monthly_payment",
    "term",
    "loan_amount",
    "outcome",
];

/// Feature columns, in model order.
pub const FEATURE_COLUMNS: [&str; 4] = ["amount_approved", "fico", "prime_rate", "competitor_rate"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanRecord {
    pub amount_approved: f64,
    pub fico: f64,
    pub prime_rate: f64,
    pub competitor_rate: f64,
    pub monthly_payment: f64,
    pub term: u32,
    pub loan_amount: f64,
    /// The applicant accepted the offer.
    pub outcome: bool,
}

impl LoanRecord {
    fn features(&self) -> [f64; 4] {
        [
            self.amount_approved,
            self.fico,
            self.prime_rate,
            self.competitor_rate,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Monthly discount rate.
    pub rate: f64,
    /// Prices are divided by this (dollars per price unit).
    pub price_scale: f64,
    /// l1 bound for the ground-truth fit.
    pub w_theta: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            rate: 0.0012,
            price_scale: 1000.0,
            w_theta: 20.0,
        }
    }
}

/// `sum_{t=1}^{term} (1 + rate)^{-t}` by direct summation.
pub fn annuity_factor(term: u32, rate: f64) -> f64 {
    let disc = 1.0 / (1.0 + rate);
    let mut acc = 0.0;
    let mut f = 1.0;
    for _ in 0..term {
        f *= disc;
        acc += f;
    }
    acc
}

/// Closed form `(1 - (1 + rate)^{-term}) / rate`.
pub fn annuity_factor_closed(term: u32, rate: f64) -> f64 {
    if rate == 0.0 {
        return term as f64;
    }
    (1.0 - (1.0 + rate).powi(-(term as i32))) / rate
}

/// Price of a record in scaled units.
pub fn loan_price(r: &LoanRecord, opts: &CalibrationOptions) -> f64 {
    (r.monthly_payment * annuity_factor(r.term, opts.rate) - r.loan_amount) / opts.price_scale
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "accept" | "accepted" => Some(true),
        "0" | "false" | "no" | "reject" | "rejected" => Some(false),
        _ => None,
    }
}

/// Reads records by header name; the first missing column is reported.
pub fn read_loan_csv(path: &Path) -> Result<Vec<LoanRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 8];
    for (slot, col) in idx.iter_mut().zip(LOAN_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| Error::Schema(col.to_string()))?;
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |col: &str| Error::Io(format!("row {}: cannot parse `{col}`", line + 2));
        let num = |i: usize| -> Result<f64> {
            rec.get(idx[i])
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad(LOAN_COLUMNS[i]))
        };
        let term = num(5)?;
        if term < 1.0 || term.fract() != 0.0 {
            return Err(bad("term"));
        }
        out.push(LoanRecord {
            amount_approved: num(0)?,
            fico: num(1)?,
            prime_rate: num(2)?,
            competitor_rate: num(3)?,
            monthly_payment: num(4)?,
            term: term as u32,
            loan_amount: num(6)?,
            outcome: rec
                .get(idx[7])
                .and_then(parse_bool)
                .ok_or_else(|| bad("outcome"))?,
        });
    }
    if out.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(out)
}

pub fn write_loan_csv(path: &Path, rows: &[LoanRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LOAN_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.amount_approved.to_string(),
            r.fico.to_string(),
            r.prime_rate.to_string(),
            r.competitor_rate.to_string(),
            r.monthly_payment.to_string(),
            r.term.to_string(),
            r.loan_amount.to_string(),
            (r.outcome as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Ground truth and applicant pool for replaying a loan dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedWorld {
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub feature_means: Vec<f64>,
    pub feature_sds: Vec<f64>,
    /// Standardised feature rows.
    pub pool: Vec<Vec<f64>>,
    pub rate: f64,
    pub price_scale: f64,
    pub n_rows: usize,
    pub n_dropped: usize,
    pub converged: bool,
}

impl CalibratedWorld {
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.beta.clone();
        t.push(self.alpha);
        t
    }

    /// Largest `||(x, 1)||_2` over the pool.
    pub fn max_augmented_norm(&self) -> f64 {
        self.pool
            .iter()
            .map(|r| (dot(r, r) + 1.0).sqrt())
            .fold(0.0, f64::max)
    }

    /// An experiment config that replays this world: block-diagonal cost,
    /// price cap 3, repeat rate 0.1%.
    pub fn to_config(&self, pool_path: PathBuf) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        let d = self.beta.len();
        let mut cost = vec![vec![0.0; d]; d];
        for (i, row) in cost.iter_mut().enumerate() {
            for (j, c) in row.iter_mut().enumerate() {
                if i / 2 == j / 2 {
                    *c = if i == j { 0.25 } else { 0.125 };
                }
            }
        }
        let l1: f64 = self.theta().iter().map(|v| v.abs()).sum();
        cfg.market.beta = self.beta.clone();
        cfg.market.alpha = self.alpha;
        cfg.market.w_theta = (l1 * 1.5).max(1.0).ceil();
        cfg.market.w_x = self.max_augmented_norm().ceil();
        cfg.market.tau = 0.001;
        cfg.market.cost = cost;
        cfg.market.features = Vec::new();
        cfg.market.feature_pool = Some(pool_path);
        cfg.market.noise = NoiseConfig::default();
        cfg.schedule.price_cap = 3.0;
        cfg
    }

    /// Writes the pool CSV and a TOML fragment that points at it.
    pub fn write_fragment(&self, out: &Path) -> Result<PathBuf> {
        let stem = out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "calibrated".into());
        let pool_name = format!("{stem}_pool.csv");
        let dir = out.parent().filter(|d| !d.as_os_str().is_empty());
        let pool_path = dir.map_or_else(|| PathBuf::from(&pool_name), |d| d.join(&pool_name));
        if let Some(d) = dir {
            std::fs::create_dir_all(d)?;
        }
        let mut w = csv::Writer::from_path(&pool_path)?;
        w.write_record(FEATURE_COLUMNS)?;
        for row in &self.pool {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;

        // the fragment refers to the pool relative to its own directory
        let cfg = self.to_config(PathBuf::from(&pool_name));
        let mut text = String::new();
        text.push_str(&format!(
            "# calibrated from {} rows ({} dropped with nonpositive price)\n",
            self.n_rows, self.n_dropped
        ));
        text.push_str(&format!(
            "# feature means {:?}\n# feature sds {:?}\n# monthly rate {}, price unit {}\n",
            self.feature_means, self.feature_sds, self.rate, self.price_scale
        ));
        text.push_str(&cfg.to_toml_string());
        std::fs::write(out, text)?;
        Ok(pool_path)
    }
}

/// Fits the ground-truth model to every record with a positive price.
pub fn calibrate_real_data(
    rows: &[LoanRecord],
    opts: &CalibrationOptions,
) -> Result<CalibratedWorld> {
    let priced: Vec<(&LoanRecord, f64)> = rows
        .iter()
        .map(|r| (r, loan_price(r, opts)))
        .filter(|(_, p)| *p > 0.0 && p.is_finite())
        .collect();
    let n_dropped = rows.len() - priced.len();
    if n_dropped > 0 {
        log::info!("dropped {n_dropped} rows with nonpositive price");
    }
    let n = priced.len();
    if n < FEATURE_COLUMNS.len() + 2 {
        return Err(Error::InsufficientData {
            needed: FEATURE_COLUMNS.len() + 2,
            got: n,
        });
    }
    let mut means = vec![0.0; 4];
    for (r, _) in &priced {
        for (m, x) in means.iter_mut().zip(r.features()) {
            *m += x / n as f64;
        }
    }
    let mut sds = vec![0.0; 4];
    for (r, _) in &priced {
        for ((s, x), m) in sds.iter_mut().zip(r.features()).zip(&means) {
            *s += (x - m).powi(2) / (n - 1) as f64;
        }
    }
    for (j, s) in sds.iter_mut().enumerate() {
        *s = s.sqrt();
        if !(*s > 0.0) {
            return Err(Error::config(
                FEATURE_COLUMNS[j],
                "column is constant and cannot be standardised",
            ));
        }
    }
    let standardise = |r: &LoanRecord| -> Vec<f64> {
        r.features()
            .iter()
            .zip(&means)
            .zip(&sds)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    };
    let pool: Vec<Vec<f64>> = priced.iter().map(|(r, _)| standardise(r)).collect();
    let obs: Vec<Observation> = priced
        .iter()
        .zip(&pool)
        .map(|((r, p), x)| Observation::new(x, *p, r.outcome))
        .collect();
    let est = fit_theta_mle(&obs, opts.w_theta, &NoiseModel::standard_normal())?;
    Ok(CalibratedWorld {
        beta: est.beta_hat,
        alpha: est.alpha_hat,
        feature_means: means,
        feature_sds: sds,
        pool,
        rate: opts.rate,
        price_scale: opts.price_scale,
        n_rows: rows.len(),
        n_dropped,
        converged: est.converged,
    })
}

/// Draws synthetic loan records whose standardised features follow
/// `N(0, 1)` and whose acceptances follow `theta_star` with normal noise.
/// Prices are uniform on `(0, price_cap)` in scaled units.
pub fn synthetic_loans<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    theta_star: &[f64],
    price_cap: f64,
    opts: &CalibrationOptions,
) -> Vec<LoanRecord> {
    const MEANS: [f64; 4] = [25_000.0, 720.0, 3.25, 4.5];
    const SDS: [f64; 4] = [8_000.0, 40.0, 0.5, 1.0];
    const TERMS: [u32; 4] = [36, 48, 60, 72];
    assert_eq!(theta_star.len(), 5, "four features plus intercept");
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..4).map(|_| StandardNormal.sample(rng)).collect();
            let raw: Vec<f64> = (0..4).map(|j| MEANS[j] + SDS[j] * z[j]).collect();
            let term = TERMS[rng.random_range(0..TERMS.len())];
            let price: f64 = price_cap * rng.random::<f64>();
            let loan_amount = raw[0];
            let monthly_payment =
                (loan_amount + price * opts.price_scale) / annuity_factor(term, opts.rate);
            let noise: f64 = StandardNormal.sample(rng);
            let v = dot(&theta_star[..4], &z) + theta_star[4] + noise;
            LoanRecord {
                amount_approved: raw[0],
                fico: raw[1],
                prime_rate: raw[2],
                competitor_rate: raw[3],
                monthly_payment,
                term,
                loan_amount,
                outcome: v >= price,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_term_price() {
        let r = LoanRecord {
            amount_approved: 1.0,
            fico: 1.0,
            prime_rate: 1.0,
            competitor_rate: 1.0,
            monthly_payment: 10_000.0,
            term: 1,
            loan_amount: 5_000.0,
            outcome: true,
        };
        let opts = CalibrationOptions {
            price_scale: 1.0,
            ..Default::default()
        };
        assert!((loan_price(&r, &opts) - (10_000.0 / 1.0012 - 5_000.0)).abs() < 1e-9);
    }

    #[test]
    fn annuity_forms_agree() {
        for term in [1, 12, 36, 60, 84] {
            let a = annuity_factor(term, 0.0012);
            let b = annuity_factor_closed(term, 0.0012);
            assert!((a - b).abs() < 1e-10, "{term}: {a} vs {b}");
        }
    }
}
