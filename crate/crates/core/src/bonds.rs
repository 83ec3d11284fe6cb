//! Discount-bond dynamics driven by the random field, and the discounted
//! martingale check.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::FieldPath;
use crate::grid::GridSpec;
use crate::measure::PathWeight;
use crate::mpr::{check_shape, MprSurface};
use crate::verify::{Estimate, Merge, StatPolicy, WeightedStats};

pub type SurfaceFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type CurveFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `σ(t, T)`.
#[derive(Clone)]
pub enum Volatility {
    Constant(f64),
    /// `level * exp(-decay * max(T - t, 0))`.
    Exponential {
        level: f64,
        decay: f64,
    },
    Custom(SurfaceFn),
}

/// Deterministic short rate `r(t)`.
#[derive(Clone)]
pub enum ShortRate {
    Constant(f64),
    /// `initial + slope * t`.
    Linear {
        initial: f64,
        slope: f64,
    },
    Custom(CurveFn),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCurve {
    /// `P(0, T) = exp(-r(0) T)`.
    FlatFromShortRate,
    /// One price per maturity node.
    Nodes(Vec<f64>),
}

impl fmt::Debug for Volatility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Volatility::Constant(s) => write!(f, "Constant({s})"),
            Volatility::Exponential { level, decay } => write!(f, "Exponential({level}, {decay})"),
            Volatility::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl fmt::Debug for ShortRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShortRate::Constant(r) => write!(f, "Constant({r})"),
            ShortRate::Linear { initial, slope } => write!(f, "Linear({initial}, {slope})"),
            ShortRate::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Volatility {
    pub fn at(&self, t: f64, maturity: f64) -> f64 {
        match self {
            Volatility::Constant(s) => *s,
            Volatility::Exponential { level, decay } => {
                level * (-decay * (maturity - t).max(0.0)).exp()
            }
            Volatility::Custom(f) => f(t, maturity),
        }
    }
}

impl ShortRate {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            ShortRate::Constant(r) => *r,
            ShortRate::Linear { initial, slope } => initial + slope * t,
            ShortRate::Custom(f) => f(t),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MarketParams {
    pub sigma: Volatility,
    pub short_rate: ShortRate,
    pub initial_curve: InitialCurve,
}

/// Market inputs evaluated on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedMarket {
    pub sigma: Array2<f64>,
    pub rate: Vec<f64>,
    /// `Σ_{k<i} r(t_k) Δt` per time node.
    pub cumulative_rate: Vec<f64>,
    pub log_initial: Vec<f64>,
}

impl MarketParams {
    pub fn resolve(&self, grid: &GridSpec) -> Result<ResolvedMarket> {
        let times = grid.times();
        let mats = grid.maturities();
        let sigma = Array2::from_shape_fn((times.len(), mats.len()), |(i, j)| {
            self.sigma.at(times[i], mats[j])
        });
        if let Some(((i, j), _)) = sigma.indexed_iter().find(|(_, s)| !s.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "sigma",
                time_node: i,
                maturity_node: j,
            });
        }
        let rate: Vec<f64> = times.iter().map(|&t| self.short_rate.at(t)).collect();
        if let Some((i, r)) = rate
            .iter()
            .enumerate()
            .find(|(_, r)| !(r.is_finite() && **r >= 0.0))
        {
            return Err(Error::config(
                "short_rate",
                format!("must be finite and >= 0, got {r} at time node {i}"),
            ));
        }
        let dt = grid.dt();
        let mut cumulative_rate = Vec::with_capacity(times.len());
        let mut acc = 0.0;
        for &r in &rate {
            cumulative_rate.push(acc);
            acc += r * dt;
        }
        let initial: Vec<f64> = match &self.initial_curve {
            InitialCurve::FlatFromShortRate => mats.iter().map(|&u| (-rate[0] * u).exp()).collect(),
            InitialCurve::Nodes(p) => {
                if p.len() != mats.len() {
                    return Err(Error::config(
                        "initial_curve",
                        format!(
                            "needs {} prices (one per maturity node), got {}",
                            mats.len(),
                            p.len()
                        ),
                    ));
                }
                p.clone()
            }
        };
        if let Some((j, p)) = initial
            .iter()
            .enumerate()
            .find(|(_, p)| !(**p > 0.0 && **p <= 1.0))
        {
            return Err(Error::config(
                "initial_curve",
                format!("prices must lie in (0, 1], got {p} at maturity node {j}"),
            ));
        }
        Ok(ResolvedMarket {
            sigma,
            rate,
            cumulative_rate,
            log_initial: initial.iter().map(|p| p.ln()).collect(),
        })
    }
}

/// Simulated `log P(t_i, u_j)` for one path.
#[derive(Debug, Clone, PartialEq)]
pub struct BondSurface {
    pub log_prices: Array2<f64>,
    pub cumulative_rate: Vec<f64>,
}

impl BondSurface {
    pub fn prices(&self) -> Array2<f64> {
        self.log_prices.mapv(f64::exp)
    }

    /// `D(t_i, u_j) = exp(-Σ_{k<i} r(t_k) Δt) P(t_i, u_j)`.
    #[inline]
    pub fn discounted_at(&self, i: usize, j: usize) -> f64 {
        (self.log_prices[(i, j)] - self.cumulative_rate[i]).exp()
    }
}

/// Per-step deterministic log drift `(r + λσ - σ²/2) Δt`, precomputed when λ
/// does not depend on the path.
#[derive(Debug, Clone)]
pub struct BondStepper {
    drift: Array2<f64>,
    sigma: Array2<f64>,
    log_initial: Vec<f64>,
    cumulative_rate: Vec<f64>,
}

impl BondStepper {
    pub fn new(market: &ResolvedMarket, lambda: &MprSurface, grid: &GridSpec) -> Result<Self> {
        check_shape(&lambda.lambda, grid, "lambda")?;
        check_shape(&market.sigma, grid, "sigma")?;
        let dt = grid.dt();
        let drift = Array2::from_shape_fn(lambda.lambda.dim(), |(i, j)| {
            let s = market.sigma[(i, j)];
            (market.rate[i] + lambda.lambda[(i, j)] * s - 0.5 * s * s) * dt
        });
        Ok(Self {
            drift,
            sigma: market.sigma.clone(),
            log_initial: market.log_initial.clone(),
            cumulative_rate: market.cumulative_rate.clone(),
        })
    }

    pub fn log_initial(&self) -> &[f64] {
        &self.log_initial
    }

    pub fn cumulative_rate(&self) -> &[f64] {
        &self.cumulative_rate
    }

    /// Log-Euler integration of column `j`, written into `out[i]`.
    pub fn column_into(&self, field: &Array2<f64>, j: usize, out: &mut [f64]) -> Result<()> {
        let mut x = self.log_initial[j];
        out[0] = x;
        for i in 0..field.nrows() - 1 {
            let dz = field[(i + 1, j)] - field[(i, j)];
            if !dz.is_finite() {
                return Err(Error::NonFinite {
                    quantity: "field increment",
                    time_node: i,
                    maturity_node: j,
                });
            }
            x += self.drift[(i, j)] + self.sigma[(i, j)] * dz;
            out[i + 1] = x;
        }
        Ok(())
    }

    pub fn simulate(&self, field: &Array2<f64>) -> Result<BondSurface> {
        let (rows, cols) = field.dim();
        let mut log_prices = Array2::zeros((rows, cols));
        let mut col = vec![0.0; rows];
        for j in 0..cols {
            self.column_into(field, j, &mut col)?;
            for (i, &x) in col.iter().enumerate() {
                log_prices[(i, j)] = x;
            }
        }
        Ok(BondSurface {
            log_prices,
            cumulative_rate: self.cumulative_rate.clone(),
        })
    }
}

/// Log-Euler scheme per maturity column:
/// `log P(t_{i+1}) = log P(t_i) + (r + λσ - σ²/2) Δt + σ ΔZ`.
pub fn simulate_bonds(
    params: &MarketParams,
    lambda: &MprSurface,
    field: &FieldPath,
    grid: &GridSpec,
) -> Result<BondSurface> {
    check_shape(&field.values, grid, "field")?;
    let market = params.resolve(grid)?;
    BondStepper::new(&market, lambda, grid)?.simulate(&field.values)
}

pub fn discounted_surface(bonds: &BondSurface) -> Array2<f64> {
    let mut out = bonds.log_prices.clone();
    for (mut row, &c) in out.rows_mut().into_iter().zip(&bonds.cumulative_rate) {
        row.mapv_inplace(|x| (x - c).exp());
    }
    out
}

/// Streaming estimates of `E[D(t, T) e^{L(t)}]` (reweighted) and `E[D(t, T)]`
/// (physical) at checkpoint/maturity nodes.
#[derive(Debug, Clone)]
pub struct MartingaleAccumulator {
    checkpoints: Vec<usize>,
    maturities: Vec<usize>,
    reweighted: Vec<WeightedStats>,
    physical: Vec<WeightedStats>,
}

impl MartingaleAccumulator {
    pub fn new(checkpoints: Vec<usize>, maturities: Vec<usize>) -> Self {
        let n = checkpoints.len() * maturities.len();
        Self {
            checkpoints,
            maturities,
            reweighted: vec![WeightedStats::default(); n],
            physical: vec![WeightedStats::default(); n],
        }
    }

    pub fn checkpoints(&self) -> &[usize] {
        &self.checkpoints
    }

    pub fn maturities(&self) -> &[usize] {
        &self.maturities
    }

    /// `discounted(i, j)` must return `D(t_i, u_j)` for the path.
    #[inline]
    pub fn observe_with(
        &mut self,
        discounted: impl Fn(usize, usize) -> f64,
        log_density_at: &[f64],
    ) {
        let mut k = 0;
        for &i in &self.checkpoints {
            for &j in &self.maturities {
                let d = discounted(i, j);
                self.reweighted[k].push(log_density_at[i], d);
                self.physical[k].push(0.0, d);
                k += 1;
            }
        }
    }

    pub fn observe(&mut self, bonds: &BondSurface, weight: &PathWeight) {
        self.observe_with(|i, j| bonds.discounted_at(i, j), &weight.log_density_at);
    }

    pub fn finish(
        &self,
        grid: &GridSpec,
        log_initial: &[f64],
        tolerance: f64,
        policy: &StatPolicy,
    ) -> MartingaleReport {
        let mut rows = Vec::new();
        let mut k = 0;
        for &i in &self.checkpoints {
            for &j in &self.maturities {
                let p0 = log_initial[j].exp();
                let row = |est: Estimate| MartingaleRow {
                    t_years: grid.time(i),
                    maturity_years: grid.maturity(j),
                    time_node: i,
                    maturity_node: j,
                    ratio: est.mean / p0,
                    ratio_std_error: est.std_error / p0,
                    z_score: est.z_score(p0),
                    initial_price: p0,
                    estimate: est,
                };
                rows.push((
                    row(self.reweighted[k].importance_estimate()),
                    row(self.physical[k].importance_estimate()),
                ));
                k += 1;
            }
        }
        let (reweighted, physical): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let underpowered = reweighted
            .iter()
            .any(|r| r.estimate.effective_n < policy.min_effective_n);
        let passed = reweighted
            .iter()
            .all(|r| (r.ratio - 1.0).abs() <= tolerance);
        MartingaleReport {
            reweighted,
            physical,
            tolerance,
            underpowered,
            passed,
        }
    }
}

impl Merge for MartingaleAccumulator {
    fn merge(&mut self, other: Self) {
        self.reweighted.merge(other.reweighted);
        self.physical.merge(other.physical);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleRow {
    pub t_years: f64,
    pub maturity_years: f64,
    pub time_node: usize,
    pub maturity_node: usize,
    pub estimate: Estimate,
    pub initial_price: f64,
    /// `estimate / P(0, T)`.
    pub ratio: f64,
    pub ratio_std_error: f64,
    /// `(estimate - P(0, T)) / std_error`.
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    /// Importance-sampled `E[D e^{L(t)}] / P(0,T)`, the no-arbitrage target.
    pub reweighted: Vec<MartingaleRow>,
    /// Unweighted `E[D] / P(0,T)`, which carries the risk premium.
    pub physical: Vec<MartingaleRow>,
    pub tolerance: f64,
    pub underpowered: bool,
    /// Every reweighted ratio within `tolerance` of 1.
    pub passed: bool,
}

/// Martingale check over an in-memory ensemble.
pub fn risk_neutral_check(
    bonds: &[BondSurface],
    weights: &[PathWeight],
    checkpoints: &[usize],
    maturities: &[usize],
    grid: &GridSpec,
    tolerance: f64,
    policy: &StatPolicy,
) -> Result<MartingaleReport> {
    if bonds.len() != weights.len() || bonds.is_empty() {
        return Err(Error::Shape(format!(
            "{} bond surfaces but {} weights",
            bonds.len(),
            weights.len()
        )));
    }
    let mut acc = MartingaleAccumulator::new(checkpoints.to_vec(), maturities.to_vec());
    for (b, w) in bonds.iter().zip(weights) {
        acc.observe(b, w);
    }
    let log_initial: Vec<f64> = bonds[0].log_prices.row(0).to_vec();
    Ok(acc.finish(grid, &log_initial, tolerance, policy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::build_field;
    use crate::mpr::{lambda_from_eta, EtaSpec};
    use crate::rng::PathStream;
    use crate::sheet::sample_sheet;
    use crate::warp::FieldKind;

    fn market(sigma: f64, r: f64) -> MarketParams {
        MarketParams {
            sigma: Volatility::Constant(sigma),
            short_rate: ShortRate::Constant(r),
            initial_curve: InitialCurve::FlatFromShortRate,
        }
    }

    fn lambda(eta: &EtaSpec, g: &GridSpec) -> MprSurface {
        lambda_from_eta(&eta.realize_deterministic(g).unwrap(), g).unwrap()
    }

    #[test]
    fn zero_vol_is_deterministic() {
        let g = GridSpec::new(1.0, 8, 7).unwrap();
        let z = build_field(
            &sample_sheet(&g, &mut PathStream::new(0, 0)),
            &FieldKind::Normalized,
            &g,
        )
        .unwrap();
        let b = simulate_bonds(
            &market(0.0, 0.03),
            &lambda(&EtaSpec::Constant(0.5), &g),
            &z,
            &g,
        )
        .unwrap();
        let d = discounted_surface(&b);
        for j in 0..g.maturity_nodes() {
            let p0 = (-0.03 * g.maturity(j)).exp();
            assert!((b.log_prices[(0, j)].exp() - p0).abs() < 1e-15);
            for i in 0..g.time_nodes() {
                assert!((d[(i, j)] - p0).abs() < 1e-14);
                let grown = p0 * (0.03 * g.time(i)).exp();
                assert!((b.prices()[(i, j)] - grown).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_rate_discounting_is_identity() {
        let g = GridSpec::new(1.0, 8, 7).unwrap();
        let z = build_field(
            &sample_sheet(&g, &mut PathStream::new(0, 0)),
            &FieldKind::Normalized,
            &g,
        )
        .unwrap();
        let b = simulate_bonds(&market(0.2, 0.0), &lambda(&EtaSpec::Zero, &g), &z, &g).unwrap();
        assert_eq!(discounted_surface(&b), b.prices());
    }

    #[test]
    fn constant_rate_discount_factor() {
        let g = GridSpec::new(1.0, 8, 7).unwrap();
        let m = market(0.2, 0.03).resolve(&g).unwrap();
        assert!((m.cumulative_rate[8] - 0.03).abs() < 1e-15);
        let z = build_field(
            &sample_sheet(&g, &mut PathStream::new(0, 0)),
            &FieldKind::Normalized,
            &g,
        )
        .unwrap();
        let b = simulate_bonds(&market(0.2, 0.03), &lambda(&EtaSpec::Zero, &g), &z, &g).unwrap();
        let d = discounted_surface(&b);
        let p = b.prices();
        for j in 0..g.maturity_nodes() {
            assert!((d[(8, j)] - p[(8, j)] * (-0.03f64).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn invalid_market_inputs() {
        let g = GridSpec::new(1.0, 4, 3).unwrap();
        let mut m = market(0.2, -0.01);
        assert!(m.resolve(&g).is_err());
        m.short_rate = ShortRate::Constant(0.01);
        m.initial_curve = InitialCurve::Nodes(vec![0.9; 3]);
        assert!(m.resolve(&g).is_err());
        m.initial_curve = InitialCurve::Nodes(vec![0.9, 0.8, 1.2, 0.5]);
        assert!(m.resolve(&g).is_err());
        m.sigma = Volatility::Constant(f64::INFINITY);
        assert!(m.resolve(&g).is_err());
    }

    #[test]
    fn non_finite_field_aborts() {
        let g = GridSpec::new(1.0, 4, 3).unwrap();
        let mut z = build_field(
            &sample_sheet(&g, &mut PathStream::new(0, 0)),
            &FieldKind::Normalized,
            &g,
        )
        .unwrap();
        z.values[(2, 1)] = f64::NAN;
        let err =
            simulate_bonds(&market(0.2, 0.0), &lambda(&EtaSpec::Zero, &g), &z, &g).unwrap_err();
        assert!(matches!(
            err,
            Error::NonFinite {
                time_node: 1,
                maturity_node: 1,
                ..
            }
        ));
    }

    #[test]
    fn classical_case_perfectly_correlated() {
        // a field constant across maturities: every column sees the same
        // Brownian increments, so log-price innovations coincide up to σ.
        let g = GridSpec::new(1.0, 32, 3).unwrap();
        let s = sample_sheet(&g, &mut PathStream::new(6, 0));
        let u0 = g.maturity(0);
        let col: Vec<f64> = (0..g.time_nodes())
            .map(|i| s.sheet[(i, 0)] / u0.sqrt())
            .collect();
        let field = FieldPath {
            values: Array2::from_shape_fn((g.time_nodes(), g.maturity_nodes()), |(i, _)| col[i]),
            kind: FieldKind::Normalized,
        };
        let params = MarketParams {
            sigma: Volatility::Exponential {
                level: 0.2,
                decay: 0.5,
            },
            short_rate: ShortRate::Constant(0.02),
            initial_curve: InitialCurve::FlatFromShortRate,
        };
        // T-independent price of risk λ(t) = 0.3
        let lam = MprSurface {
            lambda: Array2::from_elem((g.time_nodes(), g.maturity_nodes()), 0.3),
        };
        let b = simulate_bonds(&params, &lam, &field, &g).unwrap();
        let m = params.resolve(&g).unwrap();
        let innov = |j: usize| -> Vec<f64> {
            (0..g.n_time())
                .map(|i| {
                    let s = m.sigma[(i, j)];
                    let drift = (m.rate[i] + 0.3 * s - 0.5 * s * s) * g.dt();
                    (b.log_prices[(i + 1, j)] - b.log_prices[(i, j)] - drift) / s
                })
                .collect()
        };
        let (a, c) = (innov(0), innov(3));
        let corr = {
            let dot: f64 = a.iter().zip(&c).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nc: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nc)
        };
        assert!((corr - 1.0).abs() < 1e-12);
    }
}
