//! Scenario files.
//!
//! A scenario is a TOML document with `[grid]`, `[field]`, `[eta]`,
//! `[market]`, `[run]` sections and any number of `[[probe]]` tables.
//! Keys carrying a physical quantity name its unit.
//!
//! ```toml
//! [grid]
//! horizon_years = 1.0
//! time_steps = 256
//! maturity_steps = 63
//!
//! [field]
//! kind = "normalized"
//!
//! [eta]
//! kind = "constant"
//! value_per_year = 0.5
//!
//! [market]
//! sigma_per_sqrt_year = 0.2
//! rate_per_year = 0.03
//!
//! [run]
//! paths = 200000
//! seed = 20011004
//! checkpoints_years = [0.25, 0.5, 0.75, 1.0]
//! maturities_years = [0.5, 1.0]
//!
//! [[probe]]
//! t1_years = 1.0
//! maturity1_years = 0.25
//! t2_years = 1.0
//! maturity2_years = 1.0
//! ```

use ndarray::Array2;
use serde::Deserialize;

use crate::bonds::{InitialCurve, MarketParams, ShortRate, Volatility};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::measure::NodePair;
use crate::mpr::EtaSpec;
use crate::verify::StatPolicy;
use crate::warp::{FieldKind, MaturityWarp};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: GridSpec,
    pub kind: FieldKind,
    pub eta: EtaSpec,
    pub market: MarketParams,
    pub n_paths: u64,
    pub seed: u64,
    pub chunk_paths: u64,
    /// Time-node indices.
    pub checkpoints: Vec<usize>,
    /// Maturity-node indices.
    pub maturities: Vec<usize>,
    pub probes: Vec<NodePair>,
    pub martingale_tolerance: f64,
    pub negative_control_threshold: f64,
    pub policy: StatPolicy,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    grid: RawGrid,
    #[serde(default)]
    field: RawField,
    #[serde(default)]
    eta: RawEta,
    #[serde(default)]
    market: RawMarket,
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    probe: Vec<RawProbe>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    horizon_years: f64,
    time_steps: usize,
    maturity_steps: usize,
    min_maturity_years: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawField {
    kind: String,
    warp: Option<String>,
    warp_exponent: Option<f64>,
    warp_table_maturities_years: Option<Vec<f64>>,
    warp_table_values: Option<Vec<f64>>,
}

impl Default for RawField {
    fn default() -> Self {
        Self {
            kind: "normalized".into(),
            warp: None,
            warp_exponent: None,
            warp_table_maturities_years: None,
            warp_table_values: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEta {
    kind: String,
    value_per_year: Option<f64>,
    time_intercept: Option<f64>,
    time_slope_per_year: Option<f64>,
    maturity_scale_per_year: Option<f64>,
    maturity_exponent: Option<f64>,
    table_per_year: Option<Vec<Vec<f64>>>,
    base_per_year: Option<f64>,
    gain_per_year: Option<f64>,
}

impl Default for RawEta {
    fn default() -> Self {
        Self {
            kind: "zero".into(),
            value_per_year: None,
            time_intercept: None,
            time_slope_per_year: None,
            maturity_scale_per_year: None,
            maturity_exponent: None,
            table_per_year: None,
            base_per_year: None,
            gain_per_year: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarket {
    #[serde(default = "constant")]
    sigma_kind: String,
    #[serde(default = "default_sigma")]
    sigma_per_sqrt_year: f64,
    sigma_decay_per_year: Option<f64>,
    #[serde(default = "constant")]
    rate_kind: String,
    #[serde(default)]
    rate_per_year: f64,
    rate_slope_per_year_sq: Option<f64>,
    initial_curve: Option<Vec<f64>>,
}

fn constant() -> String {
    "constant".into()
}

fn default_sigma() -> f64 {
    0.2
}

impl Default for RawMarket {
    fn default() -> Self {
        Self {
            sigma_kind: constant(),
            sigma_per_sqrt_year: default_sigma(),
            sigma_decay_per_year: None,
            rate_kind: constant(),
            rate_per_year: 0.0,
            rate_slope_per_year_sq: None,
            initial_curve: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    paths: Option<u64>,
    seed: Option<u64>,
    chunk_paths: Option<u64>,
    checkpoints_years: Option<Vec<f64>>,
    maturities_years: Option<Vec<f64>>,
    martingale_tolerance: Option<f64>,
    negative_control_threshold: Option<f64>,
    z_bound: Option<f64>,
    min_effective_n: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProbe {
    t1_years: f64,
    maturity1_years: f64,
    t2_years: f64,
    maturity2_years: f64,
}

fn require<T>(value: Option<T>, field: &str, why: &str) -> Result<T> {
    value.ok_or_else(|| Error::config(field, format!("is required {why}")))
}

fn positive(value: f64, field: &str) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::config(
            field,
            format!("must be finite and > 0, got {value}"),
        ))
    }
}

fn finite(value: f64, field: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::config(field, format!("must be finite, got {value}")))
    }
}

fn grid_error(prefix: &str, e: Error) -> Error {
    match e {
        Error::InvalidGrid { field, constraint } => {
            let key = match field {
                "t0_horizon" => "horizon_years",
                "n_time" => "time_steps",
                "n_maturity" => "maturity_steps",
                "u_min" => "min_maturity_years",
                other => other,
            };
            Error::config(format!("{prefix}.{key}"), constraint)
        }
        Error::InvalidWarp(msg) => Error::config(format!("{prefix}.warp"), msg),
        e @ Error::NonMonotoneWarp { .. } => Error::config(format!("{prefix}.warp"), e.to_string()),
        other => other,
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("line {}", text[..s.start].lines().count().max(1)))
                .unwrap_or_else(|| "scenario".into());
            Error::config(field, e.message().to_string())
        })?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawScenario) -> Result<Self> {
        let g = &raw.grid;
        let grid = match g.min_maturity_years {
            Some(u) => {
                GridSpec::with_min_maturity(g.horizon_years, g.time_steps, g.maturity_steps, u)
            }
            None => GridSpec::new(g.horizon_years, g.time_steps, g.maturity_steps),
        }
        .map_err(|e| grid_error("grid", e))?;

        let kind = parse_field(&raw.field)?;
        if let FieldKind::Scaled(w) = &kind {
            w.validate(&grid).map_err(|e| grid_error("field", e))?;
        }
        let eta = parse_eta(&raw.eta)?;
        let market = parse_market(&raw.market)?;
        market.resolve(&grid).map_err(|e| match e {
            Error::Config { field, constraint } => {
                Error::config(format!("market.{field}"), constraint)
            }
            other => Error::config("market", other.to_string()),
        })?;

        let run = &raw.run;
        let n_paths = run.paths.unwrap_or(10_000);
        if n_paths == 0 {
            return Err(Error::config("run.paths", "must be >= 1"));
        }
        let chunk_paths = run.chunk_paths.unwrap_or(1024);
        if chunk_paths == 0 {
            return Err(Error::config("run.chunk_paths", "must be >= 1"));
        }

        let t0 = grid.t0_horizon();
        let checkpoints_years = run
            .checkpoints_years
            .clone()
            .unwrap_or_else(|| vec![0.25 * t0, 0.5 * t0, 0.75 * t0, t0]);
        let checkpoints = checkpoints_years
            .iter()
            .map(|&t| {
                grid.time_index(t).ok_or_else(|| {
                    Error::config(
                        "run.checkpoints_years",
                        format!("{t} is not a time node of the grid"),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let maturities = run
            .maturities_years
            .clone()
            .unwrap_or_else(|| vec![t0])
            .iter()
            .map(|&u| {
                grid.maturity_index(u).ok_or_else(|| {
                    Error::config(
                        "run.maturities_years",
                        format!("{u} is not a maturity node of the grid"),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if checkpoints.is_empty() || maturities.is_empty() {
            return Err(Error::config(
                "run",
                "needs at least one checkpoint and one maturity",
            ));
        }

        let probes = raw
            .probe
            .iter()
            .enumerate()
            .map(|(k, p)| {
                NodePair::from_years(
                    &grid,
                    p.t1_years,
                    p.maturity1_years,
                    p.t2_years,
                    p.maturity2_years,
                )
                .map_err(|e| match e {
                    Error::Config { field, constraint } => {
                        Error::config(format!("probe[{k}].{field}"), constraint)
                    }
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let defaults = StatPolicy::default();
        let policy = StatPolicy {
            z_bound: positive(run.z_bound.unwrap_or(defaults.z_bound), "run.z_bound")?,
            min_effective_n: finite(
                run.min_effective_n.unwrap_or(defaults.min_effective_n),
                "run.min_effective_n",
            )?,
        };

        Ok(Scenario {
            grid,
            kind,
            eta,
            market,
            n_paths,
            seed: run.seed.unwrap_or(0),
            chunk_paths,
            checkpoints,
            maturities,
            probes,
            martingale_tolerance: positive(
                run.martingale_tolerance.unwrap_or(0.01),
                "run.martingale_tolerance",
            )?,
            negative_control_threshold: positive(
                run.negative_control_threshold.unwrap_or(0.05),
                "run.negative_control_threshold",
            )?,
            policy,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_paths(mut self, n_paths: u64) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::config("n_paths", "must be >= 1"));
        }
        self.n_paths = n_paths;
        Ok(self)
    }

    /// Probes from the file, or a default battery snapped to grid nodes.
    pub fn probes_or_default(&self) -> Vec<NodePair> {
        if !self.probes.is_empty() {
            return self.probes.clone();
        }
        let g = &self.grid;
        let t0 = g.t0_horizon();
        let ti = |t: f64| ((t / g.dt()).round() as usize).min(g.n_time());
        let ui =
            |u: f64| (((u - g.u_min()) / g.du()).round().max(0.0) as usize).min(g.n_maturity());
        let pair = |t1: f64, u1: f64, t2: f64, u2: f64| NodePair {
            t1: ti(t1),
            u1: ui(u1),
            t2: ti(t2),
            u2: ui(u2),
        };
        let mut probes = vec![
            pair(t0, 0.25 * t0, t0, t0),
            pair(t0, t0, t0, t0),
            pair(t0, 0.5 * t0, t0, t0),
            pair(0.5 * t0, 0.25 * t0, t0, 0.75 * t0),
            pair(0.25 * t0, 0.5 * t0, 0.75 * t0, 0.5 * t0),
            pair(0.5 * t0, 0.25 * t0, 0.5 * t0, 0.25 * t0),
        ];
        probes.dedup();
        probes
    }
}

fn parse_field(raw: &RawField) -> Result<FieldKind> {
    match raw.kind.as_str() {
        "normalized" => Ok(FieldKind::Normalized),
        "scaled" => {
            let warp = match require(raw.warp.as_deref(), "field.warp", "for kind = \"scaled\"")? {
                "sqrt" => MaturityWarp::Sqrt,
                "linear" => MaturityWarp::Linear,
                "power" => MaturityWarp::power(require(
                    raw.warp_exponent,
                    "field.warp_exponent",
                    "for warp = \"power\"",
                )?)
                .map_err(|e| Error::config("field.warp_exponent", e.to_string()))?,
                "table" => MaturityWarp::table(
                    require(
                        raw.warp_table_maturities_years.clone(),
                        "field.warp_table_maturities_years",
                        "for warp = \"table\"",
                    )?,
                    require(
                        raw.warp_table_values.clone(),
                        "field.warp_table_values",
                        "for warp = \"table\"",
                    )?,
                )
                .map_err(|e| Error::config("field.warp_table_values", e.to_string()))?,
                other => {
                    return Err(Error::config(
                        "field.warp",
                        format!("unknown warp `{other}`; expected sqrt, linear, power or table"),
                    ))
                }
            };
            Ok(FieldKind::Scaled(warp))
        }
        other => Err(Error::config(
            "field.kind",
            format!("unknown kind `{other}`; expected normalized or scaled"),
        )),
    }
}

fn parse_eta(raw: &RawEta) -> Result<EtaSpec> {
    match raw.kind.as_str() {
        "zero" => Ok(EtaSpec::Zero),
        "constant" => Ok(EtaSpec::Constant(finite(
            require(raw.value_per_year, "eta.value_per_year", "for kind = \"constant\"")?,
            "eta.value_per_year",
        )?)),
        "separable" => {
            let a = finite(raw.time_intercept.unwrap_or(1.0), "eta.time_intercept")?;
            let b = finite(raw.time_slope_per_year.unwrap_or(0.0), "eta.time_slope_per_year")?;
            let c = finite(raw.maturity_scale_per_year.unwrap_or(1.0), "eta.maturity_scale_per_year")?;
            let p = finite(raw.maturity_exponent.unwrap_or(0.0), "eta.maturity_exponent")?;
            if p < 0.0 {
                return Err(Error::config("eta.maturity_exponent", "must be >= 0"));
            }
            Ok(EtaSpec::separable(move |t| a + b * t, move |u| c * u.powf(p)))
        }
        "piecewise" => {
            let rows = require(raw.table_per_year.clone(), "eta.table_per_year", "for kind = \"piecewise\"")?;
            let cols = rows.first().map_or(0, Vec::len);
            if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
                return Err(Error::config("eta.table_per_year", "must be a non-empty rectangular table"));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            if flat.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("eta.table_per_year", "entries must be finite"));
            }
            let n_rows = flat.len() / cols;
            EtaSpec::piecewise(Array2::from_shape_vec((n_rows, cols), flat).expect("rectangular"))
        }
        "sheet_feedback" => Ok(EtaSpec::sheet_feedback(
            finite(raw.base_per_year.unwrap_or(0.0), "eta.base_per_year")?,
            finite(raw.gain_per_year.unwrap_or(0.0), "eta.gain_per_year")?,
        )),
        other => Err(Error::config(
            "eta.kind",
            format!("unknown kind `{other}`; expected zero, constant, separable, piecewise or sheet_feedback"),
        )),
    }
}

fn parse_market(raw: &RawMarket) -> Result<MarketParams> {
    let sigma_level = finite(raw.sigma_per_sqrt_year, "market.sigma_per_sqrt_year")?;
    let sigma = match raw.sigma_kind.as_str() {
        "constant" => Volatility::Constant(sigma_level),
        "exponential" => Volatility::Exponential {
            level: sigma_level,
            decay: finite(
                require(
                    raw.sigma_decay_per_year,
                    "market.sigma_decay_per_year",
                    "for sigma_kind = \"exponential\"",
                )?,
                "market.sigma_decay_per_year",
            )?,
        },
        other => {
            return Err(Error::config(
                "market.sigma_kind",
                format!("unknown kind `{other}`; expected constant or exponential"),
            ))
        }
    };
    let rate = finite(raw.rate_per_year, "market.rate_per_year")?;
    let short_rate = match raw.rate_kind.as_str() {
        "constant" => ShortRate::Constant(rate),
        "linear" => ShortRate::Linear {
            initial: rate,
            slope: finite(
                raw.rate_slope_per_year_sq.unwrap_or(0.0),
                "market.rate_slope_per_year_sq",
            )?,
        },
        other => {
            return Err(Error::config(
                "market.rate_kind",
                format!("unknown kind `{other}`; expected constant or linear"),
            ))
        }
    };
    let initial_curve = match &raw.initial_curve {
        Some(p) => InitialCurve::Nodes(p.clone()),
        None => InitialCurve::FlatFromShortRate,
    };
    Ok(MarketParams {
        sigma,
        short_rate,
        initial_curve,
    })
}
