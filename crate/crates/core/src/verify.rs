//! Ensemble estimators, refinement studies and pass/fail reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided tail mass of the standard normal beyond 3, `erfc(3 / sqrt 2)`.
const TAIL_BEYOND_3: f64 = 2.699_796_063_260_207e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
    /// `(Σw)² / Σw²`; equals `n` for unweighted samples.
    pub effective_n: f64,
}

impl Estimate {
    pub fn z_score(&self, expected: f64) -> f64 {
        let d = self.mean - expected;
        if self.std_error > 0.0 {
            d / self.std_error
        } else if d == 0.0 {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    }
}

/// Associative merge of reduction state.
pub trait Merge {
    fn merge(&mut self, other: Self);
}

impl<T: Merge> Merge for Vec<T> {
    fn merge(&mut self, other: Self) {
        assert_eq!(
            self.len(),
            other.len(),
            "merging reductions of different shape"
        );
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}

/// Streaming statistics for weighted estimates, with weights held in log
/// space. Every quantity is stored relative to `exp(max_log)` (max-shift),
/// so weights far outside the f64 range still combine correctly. Second
/// moments are kept centered (Welford, merged with Chan's update) so a
/// single dominant weight does not wipe out the variance by cancellation.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedStats {
    n: u64,
    max_log: f64,
    sw: f64,
    swx: f64,
    /// Σ w².
    sww: f64,
    /// w²-weighted mean of x and centered sum Σ w² (x - mean)².
    q_mean: f64,
    q_m2: f64,
    /// Mean of y = w x over all samples and Σ (y - mean)².
    y_mean: f64,
    y_m2: f64,
}

impl Default for WeightedStats {
    fn default() -> Self {
        Self {
            n: 0,
            max_log: f64::NEG_INFINITY,
            sw: 0.0,
            swx: 0.0,
            sww: 0.0,
            q_mean: 0.0,
            q_m2: 0.0,
            y_mean: 0.0,
            y_m2: 0.0,
        }
    }
}

impl WeightedStats {
    pub fn count(&self) -> u64 {
        self.n
    }

    fn rescale(&mut self, new_max: f64) {
        if self.max_log == f64::NEG_INFINITY {
            self.max_log = new_max;
            return;
        }
        let a = (self.max_log - new_max).exp();
        let a2 = a * a;
        self.sw *= a;
        self.swx *= a;
        self.sww *= a2;
        self.q_m2 *= a2;
        self.y_mean *= a;
        self.y_m2 *= a2;
        self.max_log = new_max;
    }

    /// Adds one sample `x` with weight `exp(log_weight)`.
    #[inline]
    pub fn push(&mut self, log_weight: f64, x: f64) {
        self.n += 1;
        let w = if log_weight == f64::NEG_INFINITY {
            0.0
        } else {
            if log_weight > self.max_log {
                self.rescale(log_weight);
            }
            (log_weight - self.max_log).exp()
        };
        let y = w * x;
        let n = self.n as f64;
        let dy = y - self.y_mean;
        self.y_mean += dy / n;
        self.y_m2 += dy * dy * (n - 1.0) / n;
        if w > 0.0 {
            let w2 = w * w;
            self.sw += w;
            self.swx += y;
            let sww = self.sww + w2;
            let dq = x - self.q_mean;
            self.q_mean += dq * w2 / sww;
            self.q_m2 += dq * dq * w2 * self.sww / sww;
            self.sww = sww;
        }
    }

    fn effective_n(&self) -> f64 {
        if self.sww > 0.0 {
            self.sw * self.sw / self.sww
        } else {
            0.0
        }
    }

    /// Plain importance-sampling mean `(1/n) Σ w x` with its standard error.
    pub fn importance_estimate(&self) -> Estimate {
        let n = self.n as f64;
        if self.n == 0 || self.max_log == f64::NEG_INFINITY {
            return Estimate {
                mean: 0.0,
                std_error: 0.0,
                n: self.n,
                effective_n: 0.0,
            };
        }
        let scale = self.max_log.exp();
        let var = if self.n > 1 {
            self.y_m2 / (n - 1.0)
        } else {
            0.0
        };
        Estimate {
            mean: scale * self.y_mean,
            std_error: scale * (var / n).sqrt(),
            n: self.n,
            effective_n: self.effective_n(),
        }
    }

    /// Self-normalized mean `Σ w x / Σ w` with delta-method standard error.
    pub fn self_normalized_estimate(&self) -> Result<Estimate> {
        if self.sw <= 0.0 || self.sw.is_nan() {
            return Err(Error::ZeroWeights);
        }
        let mean = self.swx / self.sw;
        // Σ w² (x - mean)², split around the w²-weighted mean.
        let shift = self.q_mean - mean;
        let ss = self.q_m2 + self.sww * shift * shift;
        Ok(Estimate {
            mean,
            std_error: ss.sqrt() / self.sw,
            n: self.n,
            effective_n: self.effective_n(),
        })
    }
}

impl Merge for WeightedStats {
    fn merge(&mut self, mut other: Self) {
        if other.n == 0 {
            return;
        }
        let m = self.max_log.max(other.max_log);
        self.rescale(m);
        other.rescale(m);

        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let dy = other.y_mean - self.y_mean;
        self.y_mean += dy * nb / n;
        self.y_m2 += other.y_m2 + dy * dy * na * nb / n;
        self.n += other.n;

        let sww = self.sww + other.sww;
        if other.sww > 0.0 {
            let dq = other.q_mean - self.q_mean;
            self.q_mean += dq * other.sww / sww;
            self.q_m2 += other.q_m2 + dq * dq * self.sww * other.sww / sww;
        }
        self.sww = sww;
        self.sw += other.sw;
        self.swx += other.swx;
    }
}

/// Self-normalized importance-sampling mean of `values` under `weights`.
pub fn weighted_moments(values: &[f64], weights: &[f64]) -> Result<Estimate> {
    if values.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    let mut stats = WeightedStats::default();
    for (index, (&x, &w)) in values.iter().zip(weights).enumerate() {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidWeight { index, value: w });
        }
        stats.push(w.ln(), x);
    }
    stats.self_normalized_estimate()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementStudy {
    /// `(resolution, residual)` pairs used for the fit, by resolution.
    pub levels: Vec<(f64, f64)>,
    /// Negated least-squares slope of `ln residual` against `ln resolution`.
    pub order: f64,
    pub excluded: Vec<(f64, f64)>,
    pub note: Option<String>,
}

pub fn refinement_order(levels: &[(f64, f64)]) -> Result<RefinementStudy> {
    let mut sorted = levels.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (usable, excluded): (Vec<_>, Vec<_>) = sorted
        .into_iter()
        .partition(|&(n, r)| n > 0.0 && r > 0.0 && r.is_finite() && n.is_finite());
    if usable.len() < 3 {
        return Err(Error::TooFewLevels(usable.len()));
    }
    let xs: Vec<f64> = usable.iter().map(|l| l.0.ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|l| l.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let note = (!excluded.is_empty()).then(|| {
        format!(
            "{} level(s) with non-positive residual excluded",
            excluded.len()
        )
    });
    Ok(RefinementStudy {
        levels: usable,
        order: -sxy / sxx,
        excluded,
        note,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatPolicy {
    pub z_bound: f64,
    /// Weighted estimates with fewer effective samples are flagged.
    pub min_effective_n: f64,
}

impl Default for StatPolicy {
    fn default() -> Self {
        Self {
            z_bound: 3.0,
            min_effective_n: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// A negative control that deviated as it should.
    ExpectedFailDetected,
    /// A negative control that failed to deviate.
    ExpectedFailMissed,
}

impl CheckStatus {
    pub fn is_ok(self) -> bool {
        matches!(self, CheckStatus::Pass | CheckStatus::ExpectedFailDetected)
    }
}

/// How a check decides pass/fail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Criterion {
    /// `|z| <= bound`.
    ZScore { bound: f64 },
    /// `|estimate - expected| <= tol`.
    Absolute { tol: f64 },
    /// `|estimate - expected| <= bound * se + bias`, for estimates with a
    /// known deterministic discretization bias.
    ZScorePlusBias { bound: f64, bias: f64 },
    /// Negative control: flagged when `|estimate - expected| > threshold`.
    Deviation { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub label: String,
    pub estimate: f64,
    pub expected: f64,
    pub std_error: f64,
    pub z_score: f64,
    pub effective_n: f64,
    pub criterion: Criterion,
    pub status: CheckStatus,
    pub underpowered: bool,
}

impl CheckResult {
    pub fn evaluate(
        name: impl Into<String>,
        label: impl Into<String>,
        est: Estimate,
        expected: f64,
        criterion: Criterion,
        policy: &StatPolicy,
    ) -> Self {
        let z = est.z_score(expected);
        let dev = (est.mean - expected).abs();
        let status = match criterion {
            Criterion::ZScore { bound } => pass_if(z.abs() <= bound),
            Criterion::Absolute { tol } => pass_if(dev <= tol),
            Criterion::ZScorePlusBias { bound, bias } => {
                pass_if(dev <= bound * est.std_error + bias)
            }
            Criterion::Deviation { threshold } => {
                if dev > threshold {
                    CheckStatus::ExpectedFailDetected
                } else {
                    CheckStatus::ExpectedFailMissed
                }
            }
        };
        Self {
            name: name.into(),
            label: label.into(),
            estimate: est.mean,
            expected,
            std_error: est.std_error,
            z_score: z,
            effective_n: est.effective_n,
            criterion,
            status,
            underpowered: est.effective_n < policy.min_effective_n,
        }
    }
}

fn pass_if(ok: bool) -> CheckStatus {
    if ok {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
    /// Largest `|z|` among z-scored checks (negative controls excluded).
    pub max_abs_z: f64,
    pub z_bound: f64,
    pub count_exceeding: usize,
    /// Exceedances of `|z| > 3` expected by chance alone across the battery
    /// (Bonferroni count `m * P(|Z| > 3)`).
    pub expected_exceedances: f64,
    pub underpowered: bool,
    pub passed: bool,
}

impl VerificationReport {
    pub fn new(checks: Vec<CheckResult>, policy: &StatPolicy) -> Self {
        let scored: Vec<&CheckResult> = checks
            .iter()
            .filter(|c| !matches!(c.criterion, Criterion::Deviation { .. }))
            .collect();
        let max_abs_z = scored.iter().map(|c| c.z_score.abs()).fold(0.0, f64::max);
        let count_exceeding = scored.iter().filter(|c| c.z_score.abs() > 3.0).count();
        let passed = checks.iter().all(|c| c.status.is_ok());
        let underpowered = checks.iter().any(|c| c.underpowered);
        Self {
            expected_exceedances: scored.len() as f64 * TAIL_BEYOND_3,
            checks,
            max_abs_z,
            z_bound: policy.z_bound,
            count_exceeding,
            underpowered,
            passed,
        }
    }

    /// 0 when every check is satisfied, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned-column summary for terminals.
    pub fn to_text(&self) -> String {
        let header = [
            "check", "where", "estimate", "expected", "std_err", "z", "eff_n", "status",
        ];
        let rows: Vec<[String; 8]> = self
            .checks
            .iter()
            .map(|c| {
                [
                    c.name.clone(),
                    c.label.clone(),
                    format!("{:.6}", c.estimate),
                    format!("{:.6}", c.expected),
                    format!("{:.2e}", c.std_error),
                    format!("{:+.2}", c.z_score),
                    format!("{:.0}", c.effective_n),
                    format!(
                        "{}{}",
                        status_word(c.status),
                        if c.underpowered {
                            " (underpowered)"
                        } else {
                            ""
                        }
                    ),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(k, (c, w))| {
                    if k < 2 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header);
        for r in &rows {
            let cells: Vec<&str> = r.iter().map(String::as_str).collect();
            line(&mut out, &cells);
        }
        let _ = writeln!(
            out,
            "\nmax |z| = {:.2}; {} of {} z-scored checks beyond 3 (expected by chance: {:.3}); {}",
            self.max_abs_z,
            self.count_exceeding,
            self.checks
                .iter()
                .filter(|c| !matches!(c.criterion, Criterion::Deviation { .. }))
                .count(),
            self.expected_exceedances,
            if self.passed { "PASS" } else { "FAIL" }
        );
        out
    }
}

fn status_word(s: CheckStatus) -> &'static str {
    match s {
        CheckStatus::Pass => "pass",
        CheckStatus::Fail => "FAIL",
        CheckStatus::ExpectedFailDetected => "expected-fail-detected",
        CheckStatus::ExpectedFailMissed => "EXPECTED-FAIL-MISSED",
    }
}
