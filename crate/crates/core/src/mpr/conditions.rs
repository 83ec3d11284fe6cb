//! Integrability conditions and the L² identities behind them.
//!
//! All integrals use the product rule of [`GridSpec::time_weights`]
//! (left endpoint in t) and [`GridSpec::maturity_weights`] (trapezoid in u,
//! rectangle on the strip below `u_min`).

use serde::{Serialize, Serializer};

use super::{girsanov_kernel, lambda_from_eta, EtaSpec, EtaSurface, MprSurface};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::rng::PathStream;
use crate::sheet::SheetSampler;
use crate::verify::{Estimate, WeightedStats};
use crate::warp::{FieldKind, MaturityWarp};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    #[serde(serialize_with = "real")]
    pub c1_integral: f64,
    #[serde(serialize_with = "real")]
    pub c2_integral: f64,
    #[serde(serialize_with = "real")]
    pub thm2_integral: f64,
    #[serde(serialize_with = "real")]
    pub half_g_norm_sq: f64,
    #[serde(serialize_with = "real")]
    pub term1_norm_sq: f64,
    #[serde(serialize_with = "real")]
    pub term2_norm_sq: f64,
    pub t0_horizon: f64,
    pub n_time: usize,
    pub n_maturity: usize,
    pub u_min: f64,
    pub field_kind: String,
}

impl ConditionReport {
    /// The six condition values in a fixed order.
    pub fn values(&self) -> [f64; 6] {
        [
            self.c1_integral,
            self.c2_integral,
            self.thm2_integral,
            self.half_g_norm_sq,
            self.term1_norm_sq,
            self.term2_norm_sq,
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Infinite or NaN values are written as strings since JSON has no
/// representation for them.
fn real<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if x.is_nan() {
        s.serialize_str("nan")
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

pub(crate) fn kind_label(kind: &FieldKind) -> String {
    match kind {
        FieldKind::Normalized => "normalized".into(),
        FieldKind::Scaled(w) => match w {
            MaturityWarp::Sqrt => "scaled:sqrt".into(),
            MaturityWarp::Linear => "scaled:linear".into(),
            MaturityWarp::Power { exponent } => format!("scaled:power({exponent})"),
            MaturityWarp::Table { .. } => "scaled:table".into(),
        },
    }
}

fn integrate(grid: &GridSpec, mut f: impl FnMut(usize, usize) -> f64) -> f64 {
    let wt = grid.time_weights();
    let wu = grid.maturity_weights();
    let mut total = 0.0;
    for (i, &a) in wt.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (j, &b) in wu.iter().enumerate() {
            row += b * f(i, j);
        }
        total += a * row;
    }
    total
}

fn report_for_surface(
    eta: &EtaSurface,
    grid: &GridSpec,
    kind: &FieldKind,
) -> Result<ConditionReport> {
    let lambda = lambda_from_eta(eta, grid)?;
    let kernel = girsanov_kernel(eta, &lambda, kind, grid)?;
    let warp = kind.warp();
    let t0 = grid.t0_horizon();
    let mats = grid.maturities();
    let log_ratio: Vec<f64> = mats.iter().map(|&u| (t0 / u).ln()).collect();
    let tail: Vec<f64> = mats.iter().map(|&u| warp.h_prime_sq_tail(u, t0)).collect();
    let h: Vec<f64> = mats.iter().map(|&u| warp.h(u)).collect();
    let e = &eta.values;
    let l = &lambda.lambda;

    let c1 = integrate(grid, |i, j| {
        let (et, la) = (e[(i, j)], l[(i, j)]);
        log_ratio[j] * et * la / 2.0 + mats[j] * et * et
    });
    let c2 = 1.25 * t0 * eta_norm_sq(eta, grid);
    let thm2 = integrate(grid, |i, j| {
        let (et, la) = (e[(i, j)], l[(i, j)]);
        et * la * tail[j] / 2.0 + h[j] * h[j] * et * et
    });
    let g_sq = integrate(grid, |i, j| kernel.g[(i, j)].powi(2));
    let mut missing = None;
    let parts = |i: usize, j: usize| warp.kernel_parts(mats[j], l[(i, j)], e[(i, j)]);
    let term1 = integrate(grid, |i, j| match parts(i, j) {
        Some((a, _)) => a * a,
        None => {
            missing.get_or_insert(j);
            0.0
        }
    });
    let term2 = integrate(grid, |i, j| parts(i, j).map_or(0.0, |(_, b)| b * b));
    if let Some(node) = missing {
        return Err(Error::MissingDerivative {
            node,
            maturity: mats[node],
        });
    }

    Ok(ConditionReport {
        c1_integral: c1,
        c2_integral: c2,
        thm2_integral: thm2,
        half_g_norm_sq: 0.5 * g_sq,
        term1_norm_sq: term1,
        term2_norm_sq: term2,
        t0_horizon: t0,
        n_time: grid.n_time(),
        n_maturity: grid.n_maturity(),
        u_min: grid.u_min(),
        field_kind: kind_label(kind),
    })
}

fn eta_norm_sq(eta: &EtaSurface, grid: &GridSpec) -> f64 {
    integrate(grid, |i, j| eta.values[(i, j)].powi(2))
}

/// Condition integrals for a deterministic η.
///
/// `c1_integral` uses `log(T0 / u)` for the logarithm in the exponent.
pub fn evaluate_conditions(
    eta: &EtaSpec,
    grid: &GridSpec,
    kind: &FieldKind,
) -> Result<ConditionReport> {
    let surface = eta.realize_deterministic(grid)?;
    report_for_surface(&surface, grid, kind)
}

/// Per-path condition integrals for a grid-adapted η, plus Monte Carlo
/// estimates of their exponential moments.
#[derive(Debug, Clone, Serialize)]
pub struct AdaptedConditionReport {
    pub per_path: Vec<ConditionReport>,
    pub exp_c1: Estimate,
    pub exp_c2: Estimate,
    pub exp_thm2: Estimate,
    pub exp_half_g_norm_sq: Estimate,
    /// Always true: the exponential moments are sampled, not computed.
    pub estimate: bool,
}

pub fn evaluate_conditions_adapted(
    eta: &EtaSpec,
    grid: &GridSpec,
    kind: &FieldKind,
    n_paths: u64,
    seed: u64,
) -> Result<AdaptedConditionReport> {
    let sampler = match kind {
        FieldKind::Normalized => SheetSampler::plain(grid),
        FieldKind::Scaled(w) => SheetSampler::warped(grid, w)?,
    };
    let mut per_path = Vec::with_capacity(n_paths as usize);
    let mut stats = [(); 4].map(|_| WeightedStats::default());
    for p in 0..n_paths {
        let sheet = sampler.sample(&mut PathStream::new(seed, p));
        let surface = eta.realize(grid, Some(&sheet))?;
        let r = report_for_surface(&surface, grid, kind)?;
        // exp(x) is accumulated as a log-weight on the constant 1 so large
        // exponents do not overflow before the final scaling.
        for (s, x) in stats.iter_mut().zip([
            r.c1_integral,
            r.c2_integral,
            r.thm2_integral,
            r.half_g_norm_sq,
        ]) {
            s.push(x, 1.0);
        }
        per_path.push(r);
    }
    let [c1, c2, thm2, g] = stats.map(|s| s.importance_estimate());
    Ok(AdaptedConditionReport {
        per_path,
        exp_c1: c1,
        exp_c2: c2,
        exp_thm2: thm2,
        exp_half_g_norm_sq: g,
        estimate: true,
    })
}

/// Both sides of the Fubini chain
/// `∫∫ λ²/(4u) = (1/2) ∫∫ η λ log(T0/u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct L2Identity {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

pub fn check_l2_identity(eta: &EtaSpec, grid: &GridSpec) -> Result<L2Identity> {
    let surface = eta.realize_deterministic(grid)?;
    let MprSurface { lambda } = lambda_from_eta(&surface, grid)?;
    let t0 = grid.t0_horizon();
    let mats = grid.maturities();
    let lhs = integrate(grid, |i, j| lambda[(i, j)].powi(2) / (4.0 * mats[j]));
    let rhs = 0.5
        * integrate(grid, |i, j| {
            surface.values[(i, j)] * lambda[(i, j)] * (t0 / mats[j]).ln()
        });
    Ok(L2Identity {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

/// `(5 T0 / 2) ‖η‖² - ‖g‖²` for the normalized kernel; non-negative up to
/// quadrature error.
pub fn check_c2_bound(eta: &EtaSpec, grid: &GridSpec) -> Result<f64> {
    let surface = eta.realize_deterministic(grid)?;
    let lambda = lambda_from_eta(&surface, grid)?;
    let kernel = girsanov_kernel(&surface, &lambda, &FieldKind::Normalized, grid)?;
    let g_sq = integrate(grid, |i, j| kernel.g[(i, j)].powi(2));
    Ok(2.5 * grid.t0_horizon() * eta_norm_sq(&surface, grid) - g_sq)
}
