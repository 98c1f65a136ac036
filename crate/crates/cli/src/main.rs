//! `stratprice`: run pricing experiments from TOML configs.
//!
//! Exit codes: 0 success, 2 configuration or input-schema error,
//! 3 simulation error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use stratprice::harness::{
    calibrate_real_data, export_traces, read_loan_csv, run_config, sensitivity_sweep,
    synthetic_loans, with_jobs, write_loan_csv, write_run_log, CalibrationOptions, SweepAxis,
};
use stratprice::{Error, ExperimentConfig, SweepConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_SIMULATION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "stratprice",
    version,
    about = "Dynamic pricing against feature-manipulating buyers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replications of every configured policy and write the mean regret curves.
    Run(Overrides),
    /// Repeat `run` across a grid of one hyperparameter.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// B, l0, C_a, A-scale or tau.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Fit a ground-truth model to loan records and write a config fragment.
    Calibrate {
        /// Input CSV with the loan columns.
        #[arg(long)]
        csv: PathBuf,
        /// Output TOML fragment; the feature pool is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Write this many synthetic records to --csv first.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Monthly discount rate.
        #[arg(long, default_value_t = 0.0012)]
        rate: f64,
        /// Dollars per price unit.
        #[arg(long, default_value_t = 1000.0)]
        price_scale: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Check the numeric kernels against their invariants.
    Selftest,
}

/// Flags that override config-file values.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// TOML config; built-in defaults are used without it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Policies to run (repeatable or comma-separated). `policy.kinds`.
    #[arg(long, value_delimiter = ',')]
    policy: Vec<String>,
    /// First replication seed. `replication.base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replications. `replication.n_reps`.
    #[arg(long)]
    reps: Option<usize>,
    /// Number of periods. `schedule.horizon`.
    #[arg(long)]
    horizon: Option<usize>,
    /// Worker threads, 0 for all cores. `replication.jobs`.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory; sets `output.csv` and `output.run_log` inside it.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if !self.policy.is_empty() {
            cfg.policy.kinds = self.policy.clone();
        }
        if let Some(s) = self.seed {
            cfg.replication.base_seed = s;
        }
        if let Some(r) = self.reps {
            cfg.replication.n_reps = r;
        }
        if let Some(h) = self.horizon {
            cfg.schedule.horizon = h;
        }
        if let Some(j) = self.jobs {
            cfg.replication.jobs = j;
        }
        if let Some(dir) = &self.out {
            cfg.output.csv = dir.join("regret.csv");
            cfg.output.run_log = dir.join("run_log.jsonl");
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Schema(_) => EXIT_CONFIG,
        _ => EXIT_SIMULATION,
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e))
}

fn cmd_run(o: &Overrides) -> ExitCode {
    let cfg = match o.load() {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let summaries = match run_config(&cfg) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    for s in &summaries {
        println!(
            "{:<18} final regret {:>10.3} +/- {:.3}  exponent {}",
            s.policy.name(),
            s.final_mean(),
            s.final_stderr(),
            s.fit
                .map_or_else(|| "n/a".to_string(), |f| format!("{:.3}", f.exponent))
        );
    }
    let written = export_traces(&summaries, &cfg.output.csv)
        .and_then(|_| write_run_log(&cfg, &summaries, &cfg.output.run_log));
    match written {
        Ok(()) => {
            println!(
                "wrote {} and {}",
                cfg.output.csv.display(),
                cfg.output.run_log.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn point_path(base: &Path, axis: SweepAxis, value: f64) -> PathBuf {
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "regret".into());
    let ext = base
        .extension()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    base.with_file_name(format!("{stem}_{}_{value}.{ext}", axis.name()))
}

fn cmd_sweep(o: &Overrides, axis: Option<&str>, values: Option<&[f64]>) -> ExitCode {
    let mut cfg = match o.load() {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let mut sweep = cfg.sweep.clone().unwrap_or_default();
    if let Some(a) = axis {
        sweep.axis = a.to_string();
    }
    if let Some(v) = values {
        sweep.values = v.to_vec();
    }
    let axis: SweepAxis = match sweep.axis.parse() {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    if sweep.values.is_empty() {
        return fail(&Error::Config {
            key: "--values".into(),
            reason: "at least one value is required".into(),
        });
    }
    cfg.sweep = Some(SweepConfig {
        axis: axis.name().into(),
        values: sweep.values.clone(),
    });
    let points = match with_jobs(cfg.replication.jobs, || {
        sensitivity_sweep(axis, &sweep.values, &cfg)
    }) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    let summary_path = cfg.output.csv.with_file_name("sweep_summary.csv");
    let result = (|| -> Result<(), Error> {
        let mut rows = vec![
            "axis,value,policy,n_reps,final_regret_mean,final_regret_stderr,exponent".to_string(),
        ];
        for p in &points {
            let csv = point_path(&cfg.output.csv, axis, p.value);
            let log = point_path(&cfg.output.run_log, axis, p.value);
            let point_cfg = axis.apply(&cfg, p.value)?;
            export_traces(&p.summaries, &csv)?;
            write_run_log(&point_cfg, &p.summaries, &log)?;
            for s in &p.summaries {
                println!(
                    "{}={:<8} {:<18} final regret {:>10.3} +/- {:.3}",
                    axis.name(),
                    p.value,
                    s.policy.name(),
                    s.final_mean(),
                    s.final_stderr()
                );
                rows.push(format!(
                    "{},{},{},{},{},{},{}",
                    axis.name(),
                    p.value,
                    s.policy.name(),
                    s.n_reps,
                    s.final_mean(),
                    s.final_stderr(),
                    s.fit.map_or(f64::NAN, |f| f.exponent)
                ));
            }
        }
        rows.push(String::new());
        std::fs::write(&summary_path, rows.join("\n"))?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            println!("wrote {}", summary_path.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn cmd_calibrate(
    csv: &Path,
    out: &Path,
    synthetic: Option<usize>,
    opts: CalibrationOptions,
    seed: u64,
) -> ExitCode {
    if let Some(n) = synthetic {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows = synthetic_loans(&mut rng, n, &[0.3, 0.4, -0.2, -0.3, 1.2], 3.0, &opts);
        if let Err(e) = write_loan_csv(csv, &rows) {
            return fail(&e);
        }
    }
    let rows = match read_loan_csv(csv) {
        Ok(r) => r,
        // unreadable or empty input is an input problem, not a simulation failure
        Err(Error::InsufficientData { .. }) => {
            return fail(&Error::Config {
                key: csv.display().to_string(),
                reason: "no data rows".into(),
            })
        }
        Err(Error::Io(msg)) => {
            return fail(&Error::Config {
                key: csv.display().to_string(),
                reason: msg,
            })
        }
        Err(e) => return fail(&e),
    };
    let world = match calibrate_real_data(&rows, &opts) {
        Ok(w) => w,
        Err(e @ Error::InsufficientData { .. }) => {
            return fail(&Error::Config {
                key: csv.display().to_string(),
                reason: e.to_string(),
            })
        }
        Err(e) => return fail(&e),
    };
    match world.write_fragment(out) {
        Ok(pool) => {
            println!(
                "theta {:?} from {} rows ({} dropped); wrote {} and {}",
                world.theta(),
                world.n_rows,
                world.n_dropped,
                out.display(),
                pool.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn cmd_selftest() -> ExitCode {
    let checks = stratprice::selftest::run_all();
    let mut ok = true;
    for c in &checks {
        println!(
            "[{}] {}: {}",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.detail
        );
        ok &= c.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_SIMULATION)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(o) => cmd_run(&o),
        Command::Sweep {
            overrides,
            axis,
            values,
        } => cmd_sweep(&overrides, axis.as_deref(), values.as_deref()),
        Command::Calibrate {
            csv,
            out,
            synthetic,
            rate,
            price_scale,
            seed,
        } => cmd_calibrate(
            &csv,
            &out,
            synthetic,
            CalibrationOptions {
                rate,
                price_scale,
                ..CalibrationOptions::default()
            },
            seed,
        ),
        Command::Selftest => cmd_selftest(),
    }
}
