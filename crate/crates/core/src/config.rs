//! Experiment configuration as read from TOML, with defaults matching the
//! two-feature benchmark market, and its validation into runtime objects.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{CoordinateLaw, FeatureLaw, MarginalCost, PreferenceParams};
use crate::noise::{NoiseKind, NoiseModel};
use crate::policy::{EpisodeSchedule, PolicyKind};
use crate::roots::ROOT_TOL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// `uniform`, `normal` or `logistic`.
    pub kind: String,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub scale: Option<f64>,
    pub tol: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: "normal".into(),
            lo: None,
            hi: None,
            scale: None,
            tol: ROOT_TOL,
        }
    }
}

impl NoiseConfig {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self {
            kind: "uniform".into(),
            lo: Some(lo),
            hi: Some(hi),
            ..Self::default()
        }
    }

    pub fn noise_kind(&self) -> Result<NoiseKind> {
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| Error::config(format!("market.noise.{key}"), "required for this kind"))
        };
        match self.kind.as_str() {
            "uniform" => Ok(NoiseKind::Uniform {
                lo: need(self.lo, "lo")?,
                hi: need(self.hi, "hi")?,
            }),
            "normal" | "standard_normal" => Ok(NoiseKind::Normal),
            "logistic" => Ok(NoiseKind::Logistic {
                scale: need(self.scale, "scale")?,
            }),
            other => Err(Error::config(
                "market.noise.kind",
                format!("unknown noise kind `{other}` (expected uniform, normal or logistic)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub beta: Vec<f64>,
    pub alpha: f64,
    /// l1 bound on `(beta, alpha)`.
    pub w_theta: f64,
    /// l2 bound on the augmented feature vector `(x, 1)`.
    pub w_x: f64,
    /// Repeat buyer rate.
    pub tau: f64,
    /// Marginal cost matrix, row major.
    pub cost: Vec<Vec<f64>>,
    /// Multiplies `cost`.
    pub cost_scale: f64,
    pub features: Vec<CoordinateLaw>,
    /// CSV of feature rows to resample instead of `features`.
    pub feature_pool: Option<PathBuf>,
    pub noise: NoiseConfig,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            beta: vec![1.0 / 3.0, 2.0 / 3.0],
            alpha: 0.5,
            w_theta: 3.0,
            w_x: 6.0,
            tau: 0.0005,
            cost: vec![vec![0.25, 0.125], vec![0.125, 0.25]],
            cost_scale: 1.0,
            features: vec![CoordinateLaw::Uniform { lo: 0.0, hi: 4.0 }; 2],
            feature_pool: None,
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub l0: usize,
    pub c_a: f64,
    /// Upper end `B` of the exploration price range.
    pub price_cap: f64,
    pub horizon: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            l0: 200,
            c_a: 100.0,
            price_cap: 6.0,
            horizon: 12800,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kinds: Vec<String>,
    /// Skip estimation and price with the true parameter.
    pub inject_true_theta: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kinds: vec![
                "nonstrategic".into(),
                "strategic_known".into(),
                "strategic_unknown".into(),
            ],
            inject_true_theta: false,
        }
    }
}

impl PolicyConfig {
    pub fn policy_kinds(&self) -> Result<Vec<PolicyKind>> {
        if self.kinds.is_empty() {
            return Err(Error::config(
                "policy.kinds",
                "at least one policy is required",
            ));
        }
        self.kinds.iter().map(|k| k.parse()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationConfig {
    pub n_reps: usize,
    pub base_seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        Self {
            n_reps: 20,
            base_seed: 1,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub csv: PathBuf,
    pub run_log: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            csv: PathBuf::from("regret.csv"),
            run_log: PathBuf::from("run_log.jsonl"),
        }
    }
}

/// Grid for `stratprice sweep`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `B`, `l0`, `C_a`, `A-scale` or `tau`.
    pub axis: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub market: MarketConfig,
    pub schedule: ScheduleConfig,
    pub policy: PolicyConfig,
    pub replication: ReplicationConfig,
    pub output: OutputConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

/// Validated runtime objects built from a [`MarketConfig`].
#[derive(Debug, Clone)]
pub struct World {
    pub theta: PreferenceParams,
    pub cost: MarginalCost,
    pub noise: NoiseModel,
    pub features: FeatureLaw,
    pub tau: f64,
    pub w_x: f64,
}

impl World {
    /// `gamma = -A^{-1} beta`.
    pub fn gamma(&self) -> Vec<f64> {
        self.cost
            .solve(&self.theta.beta)
            .iter()
            .map(|v| -v)
            .collect()
    }
}

impl ExperimentConfig {
    /// Parses TOML. Relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(toml_key(&e), e.message()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.market.feature_pool.as_mut() {
            fix(p);
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn schedule(&self) -> Result<EpisodeSchedule> {
        EpisodeSchedule::new(self.schedule.l0, self.schedule.c_a)
    }

    pub fn policy_kinds(&self) -> Result<Vec<PolicyKind>> {
        self.policy.policy_kinds()
    }

    /// Checks every section and builds the market.
    pub fn validate(&self) -> Result<World> {
        let s = &self.schedule;
        let schedule = self.schedule()?;
        if !(s.price_cap > 0.0 && s.price_cap.is_finite()) {
            return Err(Error::config("schedule.price_cap", "must be positive"));
        }
        if s.horizon < s.l0 {
            return Err(Error::config(
                "schedule.horizon",
                "must be at least schedule.l0",
            ));
        }
        if self.replication.n_reps < 1 {
            return Err(Error::config("replication.n_reps", "must be at least 1"));
        }
        self.policy_kinds()?;
        let world = self.market.build(s.price_cap)?;
        // the first fit needs d + 2 exploration observations
        let needed = world.theta.dim() + 2;
        if !self.policy.inject_true_theta && schedule.exploration_len(1) < needed {
            return Err(Error::config(
                "schedule.c_a",
                format!("first exploration phase must have at least {needed} periods"),
            ));
        }
        Ok(world)
    }
}

impl MarketConfig {
    pub fn build(&self, price_cap: f64) -> Result<World> {
        let theta = PreferenceParams::new(self.beta.clone(), self.alpha, self.w_theta)
            .map_err(|e| Error::config("market.beta", e.to_string()))?;
        let d = theta.dim();
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::config("market.tau", "must lie in [0, 1)"));
        }
        if !(self.cost_scale > 0.0) {
            return Err(Error::config("market.cost_scale", "must be positive"));
        }
        let cost = MarginalCost::new(&self.cost)
            .and_then(|c| c.scaled(self.cost_scale))
            .map_err(|e| Error::config("market.cost", e.to_string()))?;
        if cost.dim() != d {
            return Err(Error::config(
                "market.cost",
                format!("is {0}x{0} but beta has {d} entries", cost.dim()),
            ));
        }
        let features = match &self.feature_pool {
            Some(path) => {
                let rows = read_feature_pool(path)?;
                FeatureLaw::Empirical(Arc::new(rows))
            }
            None => {
                for (j, law) in self.features.iter().enumerate() {
                    if let CoordinateLaw::Uniform { lo, hi } = law {
                        if !(lo <= hi) {
                            return Err(Error::config(
                                format!("market.features[{j}]"),
                                "uniform requires lo <= hi",
                            ));
                        }
                    }
                }
                FeatureLaw::PerCoordinate(self.features.clone())
            }
        };
        if features.dim() != d {
            return Err(Error::config(
                "market.features",
                format!("has dimension {} but beta has {d} entries", features.dim()),
            ));
        }
        if features.max_augmented_norm() > self.w_x + 1e-12 {
            return Err(Error::config(
                "market.w_x",
                format!(
                    "feature law reaches ||(x, 1)|| = {:.4} > w_x = {}",
                    features.max_augmented_norm(),
                    self.w_x
                ),
            ));
        }
        let kind = self.noise.noise_kind()?;
        let noise = NoiseModel::new(kind, -self.w_x * self.w_theta, price_cap, self.noise.tol)
            .map_err(|e| match e {
                Error::Config { key, reason } => Error::config(format!("market.{key}"), reason),
                other => other,
            })?;
        Ok(World {
            theta,
            cost,
            noise,
            features,
            tau: self.tau,
            w_x: self.w_x,
        })
    }
}

/// Reads a headerless or headed CSV of numeric feature rows.
pub fn read_feature_pool(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::config("market.feature_pool", format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::config("market.feature_pool", e.to_string()))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::config("market.feature_pool", "pool is empty"));
    }
    Ok(rows)
}

/// Best-effort dotted key for a TOML parse error.
fn toml_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    if let Some(rest) = msg.split("unknown field `").nth(1) {
        if let Some(field) = rest.split('`').next() {
            return field.to_string();
        }
    }
    "config".into()
}
