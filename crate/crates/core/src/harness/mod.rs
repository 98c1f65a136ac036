//! Experiment harness: single runs, replications, sweeps, estimator
//! studies and the loan-data calibration pipeline.

pub mod calibration;
pub mod replicate;
pub mod sim;
pub mod studies;

pub use calibration::{
    annuity_factor, annuity_factor_closed, calibrate_real_data, read_loan_csv, synthetic_loans,
    write_loan_csv, CalibratedWorld, CalibrationOptions, LoanRecord,
};
pub use replicate::{
    export_traces, fit_exponent, mean_stderr, pooled_stderr, run_config, run_replications,
    run_seeds, sensitivity_sweep, with_jobs, write_run_log, ExponentFit, ReplicationSummary,
    SweepAxis, SweepPoint, TRACE_HEADER,
};
pub use sim::{run_once, EpisodeLog, RegretTrace, RunLog, Simulation};
pub use studies::{
    gamma_error_by_tau, loglog_slope, lower_bound_world, theta_error_scaling, ScalingPoint,
};
