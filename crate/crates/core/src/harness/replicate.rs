//! Replicated runs, summary statistics, sweeps and CSV/JSONL output.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sim::{run_once, RegretTrace, RunLog, Simulation};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::policy::PolicyKind;

/// `c t^a` fitted by least squares of `ln C(t)` on `ln t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub exponent: f64,
    pub coefficient: f64,
}

/// Fits `curve[i] ~ c (i + 1)^a` over the last half of the curve.
/// Returns `None` if a value in the window is not positive.
pub fn fit_exponent(curve: &[f64]) -> Option<ExponentFit> {
    let n = curve.len();
    if n < 4 {
        return None;
    }
    let start = n / 2;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut m = 0.0;
    for (i, &c) in curve.iter().enumerate().skip(start) {
        if !(c > 0.0) {
            return None;
        }
        let x = ((i + 1) as f64).ln();
        let y = c.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        m += 1.0;
    }
    let mx = sx / m;
    let my = sy / m;
    let a = (sxy - m * mx * my) / (sxx - m * mx * mx);
    Some(ExponentFit {
        exponent: a,
        coefficient: (my - a * mx).exp(),
    })
}

/// Mean and standard error of the mean (zero for fewer than two values).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Standard error of a difference of two independent means.
pub fn pooled_stderr(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub policy: PolicyKind,
    pub base_seed: u64,
    pub n_reps: usize,
    pub mean_cum_regret: Vec<f64>,
    pub stderr_cum_regret: Vec<f64>,
    pub mean_cum_expected_regret: Vec<f64>,
    pub stderr_cum_expected_regret: Vec<f64>,
    /// Fit on the mean realized curve.
    pub fit: Option<ExponentFit>,
    /// Fit on the mean expected-regret curve.
    pub expected_fit: Option<ExponentFit>,
    /// 95% normal interval for the exponent from per-replication fits.
    pub exponent_ci: Option<(f64, f64)>,
    pub final_regrets: Vec<f64>,
    pub final_expected_regrets: Vec<f64>,
    pub warnings: Vec<String>,
    pub logs: Vec<RunLog>,
}

impl ReplicationSummary {
    pub fn horizon(&self) -> usize {
        self.mean_cum_regret.len()
    }

    pub fn final_mean(&self) -> f64 {
        self.mean_cum_regret.last().copied().unwrap_or(0.0)
    }

    pub fn final_stderr(&self) -> f64 {
        self.stderr_cum_regret.last().copied().unwrap_or(0.0)
    }

    pub fn final_expected_mean(&self) -> f64 {
        self.mean_cum_expected_regret.last().copied().unwrap_or(0.0)
    }

    pub fn final_expected_stderr(&self) -> f64 {
        self.stderr_cum_expected_regret
            .last()
            .copied()
            .unwrap_or(0.0)
    }

    /// Aggregates traces of one policy, in seed order.
    pub fn from_traces(policy: PolicyKind, base_seed: u64, traces: &[RegretTrace]) -> Self {
        let n = traces.len();
        let horizon = traces.first().map_or(0, RegretTrace::horizon);
        let mut warnings = Vec::new();
        let mut seeds: Vec<u64> = traces.iter().map(|t| t.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() < n {
            let w = format!(
                "{policy}: {} of {n} replications share a seed; standard errors are understated",
                n - seeds.len()
            );
            log::warn!("{w}");
            warnings.push(w);
        }
        let curve_stats = |pick: fn(&RegretTrace) -> &Vec<f64>| {
            let mut mean = vec![0.0; horizon];
            let mut se = vec![0.0; horizon];
            let mut column = vec![0.0; n];
            for i in 0..horizon {
                for (c, tr) in column.iter_mut().zip(traces) {
                    *c = pick(tr)[i];
                }
                let (m, s) = mean_stderr(&column);
                mean[i] = m;
                se[i] = s;
            }
            (mean, se)
        };
        let (mean_cum_regret, stderr_cum_regret) = curve_stats(|t| &t.cum_regret);
        let (mean_cum_expected_regret, stderr_cum_expected_regret) =
            curve_stats(|t| &t.cum_expected_regret);
        let per_rep: Vec<f64> = traces
            .iter()
            .filter_map(|t| fit_exponent(&t.cum_regret).map(|f| f.exponent))
            .collect();
        let exponent_ci = (per_rep.len() >= 2).then(|| {
            let (m, s) = mean_stderr(&per_rep);
            (m - 1.96 * s, m + 1.96 * s)
        });
        Self {
            policy,
            base_seed,
            n_reps: n,
            fit: fit_exponent(&mean_cum_regret),
            expected_fit: fit_exponent(&mean_cum_expected_regret),
            mean_cum_regret,
            stderr_cum_regret,
            mean_cum_expected_regret,
            stderr_cum_expected_regret,
            exponent_ci,
            final_regrets: traces.iter().map(RegretTrace::final_regret).collect(),
            final_expected_regrets: traces
                .iter()
                .map(RegretTrace::final_expected_regret)
                .collect(),
            warnings,
            logs: traces.iter().map(|t| t.log.clone()).collect(),
        }
    }
}

/// Runs `seeds.len()` replications of each policy. Policies share seeds, so
/// comparisons between them are paired. Results come back in input order
/// regardless of scheduling.
pub fn run_seeds(
    sim: &Simulation,
    policies: &[PolicyKind],
    seeds: &[u64],
) -> Result<Vec<Vec<RegretTrace>>> {
    let jobs: Vec<(usize, u64)> = (0..policies.len())
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results: Vec<Result<RegretTrace>> = jobs
        .par_iter()
        .map(|&(p, s)| run_once(sim, policies[p], s))
        .collect();
    let mut out: Vec<Vec<RegretTrace>> = policies.iter().map(|_| Vec::new()).collect();
    for ((p, _), r) in jobs.iter().zip(results) {
        out[*p].push(r?);
    }
    Ok(out)
}

/// `n_reps` replications with seeds `base_seed + i` for every policy.
pub fn run_replications(
    sim: &Simulation,
    policies: &[PolicyKind],
    n_reps: usize,
    base_seed: u64,
) -> Result<Vec<ReplicationSummary>> {
    let seeds: Vec<u64> = (0..n_reps as u64)
        .map(|i| base_seed.wrapping_add(i))
        .collect();
    let traces = run_seeds(sim, policies, &seeds)?;
    Ok(policies
        .iter()
        .zip(&traces)
        .map(|(&p, tr)| ReplicationSummary::from_traces(p, base_seed, tr))
        .collect())
}

/// Runs the replications described by a full config.
pub fn run_config(cfg: &ExperimentConfig) -> Result<Vec<ReplicationSummary>> {
    let sim = Simulation::from_config(cfg)?;
    let policies = cfg.policy_kinds()?;
    with_jobs(cfg.replication.jobs, || {
        run_replications(
            &sim,
            &policies,
            cfg.replication.n_reps,
            cfg.replication.base_seed,
        )
    })
}

/// Runs `f` on a pool of `jobs` threads, or the global pool when `jobs` is 0.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// The hyperparameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Exploration price cap `B`.
    B,
    L0,
    CA,
    /// Multiplier on the marginal cost matrix.
    AScale,
    Tau,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::B => "B",
            SweepAxis::L0 => "l0",
            SweepAxis::CA => "C_a",
            SweepAxis::AScale => "A-scale",
            SweepAxis::Tau => "tau",
        }
    }

    /// Returns `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        match self {
            SweepAxis::B => c.schedule.price_cap = value,
            SweepAxis::L0 => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::config(
                        "--values",
                        "l0 values must be positive integers",
                    ));
                }
                c.schedule.l0 = value as usize;
            }
            SweepAxis::CA => c.schedule.c_a = value,
            SweepAxis::AScale => c.market.cost_scale = cfg.market.cost_scale * value,
            SweepAxis::Tau => c.market.tau = value,
        }
        Ok(c)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "B" | "b" | "price_cap" => Ok(SweepAxis::B),
            "l0" | "L0" => Ok(SweepAxis::L0),
            "C_a" | "c_a" | "ca" => Ok(SweepAxis::CA),
            "A-scale" | "a_scale" | "a-scale" | "A" => Ok(SweepAxis::AScale),
            "tau" => Ok(SweepAxis::Tau),
            other => Err(Error::config(
                "--axis",
                format!("unknown axis `{other}` (expected B, l0, C_a, A-scale or tau)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
    pub summaries: Vec<ReplicationSummary>,
}

/// One set of summaries per grid value, all with the same seeds.
pub fn sensitivity_sweep(
    axis: SweepAxis,
    values: &[f64],
    cfg: &ExperimentConfig,
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::config("--values", "at least one value is required"));
    }
    let configs = values
        .iter()
        .map(|&v| axis.apply(cfg, v))
        .collect::<Result<Vec<_>>>()?;
    // validate every point before spending time on any of them
    for c in &configs {
        c.validate()?;
    }
    values
        .iter()
        .zip(&configs)
        .map(|(&value, c)| {
            Ok(SweepPoint {
                axis,
                value,
                summaries: run_config(c)?,
            })
        })
        .collect()
}

pub const TRACE_HEADER: [&str; 6] = [
    "policy",
    "seed_group",
    "t",
    "cum_regret_mean",
    "cum_regret_stderr",
    "cum_expected_regret_mean",
];

/// Writes the mean curves, one row per policy and period.
pub fn export_traces(summaries: &[ReplicationSummary], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    for s in summaries {
        let seed = s.base_seed.to_string();
        for i in 0..s.horizon() {
            w.write_record([
                s.policy.name(),
                seed.as_str(),
                &(i + 1).to_string(),
                &s.mean_cum_regret[i].to_string(),
                &s.stderr_cum_regret[i].to_string(),
                &s.mean_cum_expected_regret[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a JSON-lines run log: the effective config first, then one line
/// per replication.
pub fn write_run_log(
    cfg: &ExperimentConfig,
    summaries: &[ReplicationSummary],
    path: &Path,
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = serde_json::json!({ "effective_config": cfg });
    writeln!(f, "{header}")?;
    for s in summaries {
        for log in &s.logs {
            writeln!(
                f,
                "{}",
                serde_json::to_string(log).map_err(|e| Error::Io(e.to_string()))?
            )?;
        }
        let summary = serde_json::json!({
            "summary": s.policy,
            "n_reps": s.n_reps,
            "final_regret_mean": s.final_mean(),
            "final_regret_stderr": s.final_stderr(),
            "exponent": s.fit.map(|f| f.exponent),
            "exponent_ci": s.exponent_ci,
            "warnings": s.warnings,
        });
        writeln!(f, "{summary}")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_of_linear_curve_is_one() {
        let curve: Vec<f64> = (1..=1000).map(|t| 2.5 * t as f64).collect();
        let fit = fit_exponent(&curve).unwrap();
        assert!((fit.exponent - 1.0).abs() < 1e-9);
        assert!((fit.coefficient - 2.5).abs() < 1e-9);
    }

    #[test]
    fn exponent_of_square_root_curve() {
        let curve: Vec<f64> = (1..=1000).map(|t| (t as f64).sqrt()).collect();
        assert!((fit_exponent(&curve).unwrap().exponent - 0.5).abs() < 1e-9);
        assert!(fit_exponent(&[0.0; 10]).is_none());
    }

    #[test]
    fn stderr_of_constants_is_zero() {
        assert_eq!(mean_stderr(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert!((pooled_stderr(3.0, 4.0) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn axis_names_parse() {
        for (s, a) in [
            ("B", SweepAxis::B),
            ("l0", SweepAxis::L0),
            ("C_a", SweepAxis::CA),
            ("A-scale", SweepAxis::AScale),
            ("tau", SweepAxis::Tau),
        ] {
            assert_eq!(s.parse::<SweepAxis>().unwrap(), a);
            assert_eq!(a.name().parse::<SweepAxis>().unwrap(), a);
        }
    }
}
