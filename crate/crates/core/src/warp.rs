//! Maturity warps `h` for the scaled random field `Z = W(t, h^2(T)) / h(T)`.
//!
//! The plain normalized field is the special case `h(u) = sqrt(u)`; every
//! computation for [`FieldKind::Normalized`] is routed through
//! [`MaturityWarp::Sqrt`] so the two agree bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MaturityWarp {
    /// `h(u) = sqrt(u)`.
    Sqrt,
    /// `h(u) = u`.
    Linear,
    /// `h(u) = u^p`, `p > 0`.
    Power { exponent: f64 },
    /// Piecewise-linear interpolation of `(maturity, h)` knots.
    Table {
        maturities: Vec<f64>,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "warp", rename_all = "snake_case")]
pub enum FieldKind {
    Normalized,
    Scaled(MaturityWarp),
}

impl FieldKind {
    pub fn warp(&self) -> MaturityWarp {
        match self {
            FieldKind::Normalized => MaturityWarp::Sqrt,
            FieldKind::Scaled(w) => w.clone(),
        }
    }
}

impl MaturityWarp {
    pub fn power(exponent: f64) -> Result<Self> {
        if !(exponent.is_finite() && exponent > 0.0) {
            return Err(Error::InvalidWarp(format!(
                "power exponent must be finite and > 0, got {exponent}"
            )));
        }
        Ok(MaturityWarp::Power { exponent })
    }

    pub fn table(maturities: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if maturities.len() != values.len() || maturities.len() < 2 {
            return Err(Error::InvalidWarp(format!(
                "table needs >= 2 knots of equal length, got {} maturities and {} values",
                maturities.len(),
                values.len()
            )));
        }
        if maturities.windows(2).any(|w| w[1] <= w[0] || w[1].is_nan()) {
            return Err(Error::InvalidWarp(
                "table maturities must be strictly increasing".into(),
            ));
        }
        if maturities.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(Error::InvalidWarp("table entries must be finite".into()));
        }
        Ok(MaturityWarp::Table { maturities, values })
    }

    pub fn h(&self, u: f64) -> f64 {
        match self {
            MaturityWarp::Sqrt => u.sqrt(),
            MaturityWarp::Linear => u,
            MaturityWarp::Power { exponent } => u.powf(*exponent),
            MaturityWarp::Table { maturities, values } => {
                let k = segment(maturities, u);
                let (u0, u1) = (maturities[k], maturities[k + 1]);
                let (h0, h1) = (values[k], values[k + 1]);
                h0 + (h1 - h0) * (u - u0) / (u1 - u0)
            }
        }
    }

    /// `h^2(u)`, computed without a round trip through `h` where possible.
    pub fn h_sq(&self, u: f64) -> f64 {
        match self {
            MaturityWarp::Sqrt => u,
            MaturityWarp::Linear => u * u,
            MaturityWarp::Power { exponent } => u.powf(2.0 * exponent),
            MaturityWarp::Table { .. } => {
                let h = self.h(u);
                h * h
            }
        }
    }

    /// `h'(u)`; `None` where the derivative does not exist (interior table
    /// knots with a slope change, or outside the table range).
    pub fn h_prime(&self, u: f64) -> Option<f64> {
        match self {
            MaturityWarp::Sqrt => Some(0.5 / u.sqrt()),
            MaturityWarp::Linear => Some(1.0),
            MaturityWarp::Power { exponent } => Some(exponent * u.powf(exponent - 1.0)),
            MaturityWarp::Table { maturities, values } => {
                let (first, last) = (maturities[0], maturities[maturities.len() - 1]);
                if u < first || u > last {
                    return None;
                }
                let slope =
                    |k: usize| (values[k + 1] - values[k]) / (maturities[k + 1] - maturities[k]);
                if let Some(k) = maturities.iter().position(|&m| m == u) {
                    if k > 0 && k + 1 < maturities.len() && slope(k - 1) != slope(k) {
                        return None;
                    }
                }
                Some(slope(segment(maturities, u)))
            }
        }
    }

    /// `∫_u^{T0} h'(τ)^2 dτ`, in closed form for every catalog entry.
    pub fn h_prime_sq_tail(&self, u: f64, t0: f64) -> f64 {
        match self {
            MaturityWarp::Sqrt => 0.25 * (t0 / u).ln(),
            MaturityWarp::Linear => t0 - u,
            MaturityWarp::Power { exponent: p } => {
                let q = 2.0 * p - 1.0;
                if q.abs() < 1e-12 {
                    p * p * (t0 / u).ln()
                } else {
                    p * p * (t0.powf(q) - u.powf(q)) / q
                }
            }
            MaturityWarp::Table { maturities, values } => {
                let mut acc = 0.0;
                for k in 0..maturities.len() - 1 {
                    let lo = maturities[k].max(u);
                    let hi = maturities[k + 1].min(t0);
                    if hi > lo {
                        let s = (values[k + 1] - values[k]) / (maturities[k + 1] - maturities[k]);
                        acc += s * s * (hi - lo);
                    }
                }
                acc
            }
        }
    }

    /// Girsanov kernel density in the maturity variable,
    /// `d/du (h(u) λ(u)) = h'(u) λ + h(u) η`.
    #[inline]
    pub fn kernel_at(&self, u: f64, lambda: f64, eta: f64) -> Option<f64> {
        let (a, b) = self.kernel_parts(u, lambda, eta)?;
        Some(a + b)
    }

    /// The two summands `(h'(u) λ, h(u) η)` of the kernel. For the square
    /// root warp the first is evaluated as `λ / (2 sqrt(u))`.
    #[inline]
    pub fn kernel_parts(&self, u: f64, lambda: f64, eta: f64) -> Option<(f64, f64)> {
        match self {
            MaturityWarp::Sqrt => {
                let s = u.sqrt();
                Some((lambda / (2.0 * s), s * eta))
            }
            _ => Some((self.h_prime(u)? * lambda, self.h(u) * eta)),
        }
    }

    /// Checks `h(u_min) > 0` and strict increase of `h^2` over every noise
    /// cell, the strip `(0, u_min]` included.
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if let MaturityWarp::Table { maturities, .. } = self {
            let (first, last) = (maturities[0], maturities[maturities.len() - 1]);
            if first > grid.u_min() || last < grid.t0_horizon() {
                return Err(Error::InvalidWarp(format!(
                    "table covers [{first}, {last}] but the grid needs [{}, {}]",
                    grid.u_min(),
                    grid.t0_horizon()
                )));
            }
        }
        let h0 = self.h(grid.u_min());
        if !(h0.is_finite() && h0 > 0.0) {
            return Err(Error::InvalidWarp(format!(
                "h(u_min) must be positive, got h({}) = {h0}",
                grid.u_min()
            )));
        }
        let mut prev_u = 0.0;
        let mut prev = 0.0;
        for (cell, u) in grid.maturities().into_iter().enumerate() {
            let cur = self.h_sq(u);
            if !(cur.is_finite() && cur > prev) {
                return Err(Error::NonMonotoneWarp {
                    cell,
                    lower: prev_u,
                    upper: u,
                    h_sq_lower: prev,
                    h_sq_upper: cur,
                });
            }
            prev_u = u;
            prev = cur;
        }
        Ok(())
    }

    /// Widths `h^2(u_j) - h^2(u_{j-1})` of the noise cells in the sheet's
    /// second coordinate, with `h^2(u_{-1}) = 0`.
    pub fn sheet_cell_widths(&self, grid: &GridSpec) -> Vec<f64> {
        let mut prev = 0.0;
        grid.maturities()
            .into_iter()
            .map(|u| {
                let cur = self.h_sq(u);
                let w = cur - prev;
                prev = cur;
                w
            })
            .collect()
    }
}

fn segment(knots: &[f64], u: f64) -> usize {
    let k = knots.partition_point(|&m| m <= u);
    k.saturating_sub(1).min(knots.len() - 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(1.0, 8, 15).unwrap()
    }

    #[test]
    fn constant_warp_is_rejected_with_cell() {
        let w = MaturityWarp::table(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        match w.validate(&grid()) {
            Err(Error::NonMonotoneWarp { cell, .. }) => assert_eq!(cell, 1),
            other => panic!("expected NonMonotoneWarp, got {other:?}"),
        }
    }

    #[test]
    fn catalog_warps_validate() {
        for w in [
            MaturityWarp::Sqrt,
            MaturityWarp::Linear,
            MaturityWarp::power(2.0).unwrap(),
            MaturityWarp::table(vec![0.0, 0.5, 1.0], vec![0.1, 0.4, 1.2]).unwrap(),
        ] {
            w.validate(&grid()).unwrap();
        }
        assert!(MaturityWarp::power(0.0).is_err());
    }

    #[test]
    fn sqrt_warp_has_identity_square() {
        let g = grid();
        assert_eq!(MaturityWarp::Sqrt.sheet_cell_widths(&g), g.cell_widths());
    }

    #[test]
    fn tail_integrals_match_numeric_quadrature() {
        let t0 = 1.0;
        let u = 0.2;
        for w in [
            MaturityWarp::Sqrt,
            MaturityWarp::Linear,
            MaturityWarp::power(2.0).unwrap(),
            MaturityWarp::power(0.5).unwrap(),
            MaturityWarp::table(vec![0.0, 0.5, 1.0], vec![0.1, 0.4, 1.2]).unwrap(),
        ] {
            // midpoint rule, fine enough for smooth integrands away from 0
            let n = 200_000;
            let h = (t0 - u) / n as f64;
            let numeric: f64 = (0..n)
                .map(|k| {
                    let x = u + (k as f64 + 0.5) * h;
                    w.h_prime(x).unwrap().powi(2) * h
                })
                .sum();
            let closed = w.h_prime_sq_tail(u, t0);
            assert!(
                (numeric - closed).abs() < 1e-6,
                "{w:?}: {numeric} vs {closed}"
            );
        }
    }

    #[test]
    fn table_derivative_missing_at_kink() {
        let w = MaturityWarp::table(vec![0.0, 0.5, 1.0], vec![0.1, 0.4, 1.2]).unwrap();
        assert!(w.h_prime(0.5).is_none());
        assert!(w.h_prime(0.25).is_some());
        assert!(w.h_prime(1.5).is_none());
    }
}
