//! CSV renderings with fixed headers. Floats use Rust's shortest
//! round-trip formatting, so equal values always print identically.

use std::fmt::Write;

use crate::bonds::MartingaleReport;
use crate::grid::GridSpec;
use crate::measure::SheetTestReport;
use crate::verify::{CheckStatus, VerificationReport};

pub const SIMULATE_HEADER: &str =
    "t_years,maturity_years,measure,estimate,std_error,ratio,z_score,effective_n";
pub const VERIFY_HEADER: &str =
    "check,where,estimate,expected,std_error,z_score,effective_n,status";
pub const COVARIANCE_HEADER: &str =
    "t1_years,maturity1_years,t2_years,maturity2_years,estimate,expected,std_error,z_score,effective_n";

pub fn martingale_csv(report: &MartingaleReport) -> String {
    let mut out = format!("{SIMULATE_HEADER}\n");
    for (measure, rows) in [
        ("reweighted", &report.reweighted),
        ("physical", &report.physical),
    ] {
        for r in rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.t_years,
                r.maturity_years,
                measure,
                r.estimate.mean,
                r.estimate.std_error,
                r.ratio,
                r.z_score,
                r.estimate.effective_n
            )
            .expect("writing to a String");
        }
    }
    out
}

pub fn verification_csv(report: &VerificationReport) -> String {
    let mut out = format!("{VERIFY_HEADER}\n");
    for c in &report.checks {
        let status = match c.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::ExpectedFailDetected => "expected_fail_detected",
            CheckStatus::ExpectedFailMissed => "expected_fail_missed",
        };
        writeln!(
            out,
            "{},\"{}\",{},{},{},{},{},{}",
            c.name, c.label, c.estimate, c.expected, c.std_error, c.z_score, c.effective_n, status
        )
        .expect("writing to a String");
    }
    out
}

pub fn covariance_csv(report: &SheetTestReport, grid: &GridSpec) -> String {
    let mut out = format!("{COVARIANCE_HEADER}\n");
    for r in &report.rows {
        let p = r.probe;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            grid.time(p.t1),
            grid.maturity(p.u1),
            grid.time(p.t2),
            grid.maturity(p.u2),
            r.estimate.mean,
            r.expected,
            r.estimate.std_error,
            r.z_score,
            r.estimate.effective_n
        )
        .expect("writing to a String");
    }
    out
}
