//! Replication, export, sweeps, exponent fits, config handling and calibration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stratprice::harness::{
    calibrate_real_data, export_traces, fit_exponent, mean_stderr, pooled_stderr, read_loan_csv,
    run_config, run_replications, run_seeds, sensitivity_sweep, synthetic_loans, write_loan_csv,
    write_run_log, CalibrationOptions, ReplicationSummary, Simulation, SweepAxis, TRACE_HEADER,
};
use stratprice::{Error, ExperimentConfig, PolicyKind};

fn small_config(horizon: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.schedule.horizon = horizon;
    cfg.replication.n_reps = 3;
    cfg
}

#[test]
fn exponent_of_power_laws() {
    for a in [0.5, 2.0 / 3.0, 1.0] {
        let curve: Vec<f64> = (1..=10_000).map(|t| 3.0 * (t as f64).powf(a)).collect();
        let f = fit_exponent(&curve).unwrap();
        assert!((f.exponent - a).abs() < 1e-9);
        assert!((f.coefficient - 3.0).abs() < 1e-6);
    }
    assert!(fit_exponent(&[1.0, 2.0, 0.0, 3.0]).is_none());
}

#[test]
fn standard_errors() {
    let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
    assert!((m - 2.5).abs() < 1e-12);
    // sample sd sqrt(5/3), divided by 2
    assert!((s - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
    assert!((pooled_stderr(3.0, 4.0) - 5.0).abs() < 1e-12);
}

#[test]
fn empty_export_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    export_traces(&[], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.trim_end(), TRACE_HEADER.join(","));
}

#[test]
fn export_rows_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(4);
    cfg.schedule.l0 = 2;
    cfg.policy.inject_true_theta = true;
    let a = run_config(&cfg).unwrap();
    let b = run_config(&cfg).unwrap();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    export_traces(&a, &pa).unwrap();
    export_traces(&b, &pb).unwrap();
    let text = std::fs::read_to_string(&pa).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * a.len());
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
}

#[test]
fn run_log_lines_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(1_000);
    let s = run_config(&cfg).unwrap();
    let path = dir.path().join("log.jsonl");
    write_run_log(&cfg, &s, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() > 3 * s.len());
    for l in &lines {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v.is_object());
    }
    assert!(lines[0].contains("effective_config"));
}

#[test]
fn duplicate_seeds_warn() {
    let sim = Simulation::from_config(&small_config(1_000)).unwrap();
    let traces = run_seeds(&sim, &[PolicyKind::Nonstrategic], &[5, 5]).unwrap();
    let s = ReplicationSummary::from_traces(PolicyKind::Nonstrategic, 5, &traces[0]);
    assert!(!s.warnings.is_empty());
    assert_eq!(s.final_stderr(), 0.0);
}

#[test]
fn replication_means_match_traces() {
    let sim = Simulation::from_config(&small_config(1_000)).unwrap();
    let policies = [PolicyKind::Nonstrategic, PolicyKind::StrategicKnown];
    let s = run_replications(&sim, &policies, 3, 10).unwrap();
    let traces = run_seeds(&sim, &policies, &[10, 11, 12]).unwrap();
    for (summary, tr) in s.iter().zip(&traces) {
        let mean = tr.iter().map(|t| t.final_regret()).sum::<f64>() / 3.0;
        assert!((summary.final_mean() - mean).abs() < 1e-9);
        assert_eq!(summary.n_reps, 3);
    }
}

#[test]
fn single_point_sweep_equals_plain_run() {
    let mut cfg = small_config(1_000);
    cfg.policy.kinds = vec!["strategic_known".into()];
    let pts = sensitivity_sweep(SweepAxis::AScale, &[2.0], &cfg).unwrap();
    cfg.market.cost_scale = 2.0;
    let sim = Simulation::from_config(&cfg).unwrap();
    let direct = run_replications(&sim, &[PolicyKind::StrategicKnown], 3, 1).unwrap();
    assert_eq!(pts.len(), 1);
    assert_eq!(
        pts[0].summaries[0].mean_cum_regret,
        direct[0].mean_cum_regret
    );
}

#[test]
fn sweep_axes() {
    let cfg = small_config(1_000);
    assert!(matches!(
        sensitivity_sweep(SweepAxis::B, &[], &cfg),
        Err(Error::Config { .. })
    ));
    for (name, axis) in [
        ("B", SweepAxis::B),
        ("l0", SweepAxis::L0),
        ("C_a", SweepAxis::CA),
        ("tau", SweepAxis::Tau),
    ] {
        assert_eq!(name.parse::<SweepAxis>().unwrap(), axis);
    }
    let c = SweepAxis::L0.apply(&cfg, 150.0).unwrap();
    assert_eq!(c.schedule.l0, 150);
    assert!(SweepAxis::Tau.apply(&cfg, 1.5).unwrap().validate().is_err());
    assert!("width".parse::<SweepAxis>().is_err());
}

#[test]
fn config_toml_round_trip_and_errors() {
    let cfg = ExperimentConfig::default();
    let text = cfg.to_toml_string();
    let back = ExperimentConfig::from_toml_str(&text, std::path::Path::new(".")).unwrap();
    assert_eq!(back, cfg);

    let bad = "[market.noise]\nkind = \"cauchy\"\n";
    match ExperimentConfig::from_toml_str(bad, std::path::Path::new("."))
        .and_then(|c| c.validate().map(|_| c))
    {
        Err(Error::Config { key, .. }) => assert_eq!(key, "market.noise.kind"),
        other => panic!("expected config error, got {other:?}"),
    }
    let typo = "[schedule]\nhorizonn = 5\n";
    assert!(matches!(
        ExperimentConfig::from_toml_str(typo, std::path::Path::new(".")),
        Err(Error::Config { .. })
    ));
}

#[test]
fn first_exploration_must_support_a_fit() {
    let mut cfg = ExperimentConfig::default();
    cfg.schedule.l0 = 10;
    cfg.schedule.c_a = 1.0;
    match cfg.validate() {
        Err(Error::Config { key, .. }) => assert_eq!(key, "schedule.c_a"),
        other => panic!("expected config error, got {other:?}"),
    }
    cfg.policy.inject_true_theta = true;
    assert!(cfg.validate().is_ok());
}

#[test]
fn features_outside_the_norm_bound_are_rejected() {
    let mut cfg = ExperimentConfig::default();
    cfg.market.w_x = 1.0;
    assert!(cfg.validate().is_err());
}

#[test]
fn calibration_recovers_synthetic_truth() {
    let theta_star = [0.3, 0.4, -0.2, -0.3, 1.2];
    let opts = CalibrationOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = synthetic_loans(&mut rng, 100_000, &theta_star, 3.0, &opts);
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("loans.csv");
    write_loan_csv(&csv, &rows).unwrap();
    let rows = read_loan_csv(&csv).unwrap();
    let world = calibrate_real_data(&rows, &opts).unwrap();
    assert_eq!(world.n_dropped, 0);
    for (a, b) in world.theta().iter().zip(&theta_star) {
        assert!((a - b).abs() < 0.05, "{:?}", world.theta());
    }

    let fragment = dir.path().join("calibrated.toml");
    let pool = world.write_fragment(&fragment).unwrap();
    assert_eq!(pool, dir.path().join("calibrated_pool.csv"));
    let mut cfg = ExperimentConfig::from_file(&fragment).unwrap();
    assert_eq!(cfg.schedule.price_cap, 3.0);
    cfg.schedule.horizon = 500;
    cfg.replication.n_reps = 1;
    assert!(run_config(&cfg).is_ok());
}

#[test]
fn loan_schema_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(
        &path,
        "amount_approved,prime_rate,competitor_rate,monthly_payment,term,loan_amount,outcome\n1,1,1,1,1,1,1\n",
    )
    .unwrap();
    match read_loan_csv(&path) {
        Err(Error::Schema(col)) => assert_eq!(col, "fico"),
        other => panic!("expected schema error, got {other:?}"),
    }
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert!(read_loan_csv(&empty).is_err());
}
