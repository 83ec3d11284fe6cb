//! Uniform discretization of the calendar-time axis `[0, T0]` and the
//! maturity axis `[u_min, T0]`.
//!
//! Maturity node `j` closes the cell `(u_{j-1}, u_j]`, with `u_{-1} = 0`.
//! Cell 0 is the strip `(0, u_min]`, so a grid with `n_maturity` steps has
//! `n_maturity + 1` nodes and `n_maturity + 1` noise cells. With the default
//! `u_min = T0 / (n_maturity + 1)` every cell has the same width and the
//! nodes are `u_j = (j + 1) T0 / (n_maturity + 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when snapping a physical coordinate to a node.
const NODE_SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    t0_horizon: f64,
    n_time: usize,
    n_maturity: usize,
    u_min: f64,
}

impl GridSpec {
    /// Grid with the default lowest maturity `T0 / (n_maturity + 1)`.
    pub fn new(t0_horizon: f64, n_time: usize, n_maturity: usize) -> Result<Self> {
        Self::with_min_maturity(
            t0_horizon,
            n_time,
            n_maturity,
            t0_horizon / (n_maturity as f64 + 1.0),
        )
    }

    pub fn with_min_maturity(
        t0_horizon: f64,
        n_time: usize,
        n_maturity: usize,
        u_min: f64,
    ) -> Result<Self> {
        if !(t0_horizon.is_finite() && t0_horizon > 0.0) {
            return Err(Error::InvalidGrid {
                field: "t0_horizon",
                constraint: format!("must be finite and > 0, got {t0_horizon}"),
            });
        }
        if n_time == 0 {
            return Err(Error::InvalidGrid {
                field: "n_time",
                constraint: "must be >= 1".into(),
            });
        }
        if n_maturity == 0 {
            return Err(Error::InvalidGrid {
                field: "n_maturity",
                constraint: "must be >= 1".into(),
            });
        }
        if !(u_min.is_finite() && u_min > 0.0 && u_min < t0_horizon) {
            return Err(Error::InvalidGrid {
                field: "u_min",
                constraint: format!(
                    "must satisfy 0 < u_min < t0_horizon = {t0_horizon}, got {u_min}"
                ),
            });
        }
        Ok(Self {
            t0_horizon,
            n_time,
            n_maturity,
            u_min,
        })
    }

    pub fn t0_horizon(&self) -> f64 {
        self.t0_horizon
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn n_maturity(&self) -> usize {
        self.n_maturity
    }

    pub fn u_min(&self) -> f64 {
        self.u_min
    }

    pub fn dt(&self) -> f64 {
        self.t0_horizon / self.n_time as f64
    }

    pub fn du(&self) -> f64 {
        (self.t0_horizon - self.u_min) / self.n_maturity as f64
    }

    /// Number of time nodes, `n_time + 1`.
    pub fn time_nodes(&self) -> usize {
        self.n_time + 1
    }

    /// Number of maturity nodes (and of noise cells), `n_maturity + 1`.
    pub fn maturity_nodes(&self) -> usize {
        self.n_maturity + 1
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_time {
            self.t0_horizon
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn maturity(&self, j: usize) -> f64 {
        if j == self.n_maturity {
            self.t0_horizon
        } else {
            self.u_min + j as f64 * self.du()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.time_nodes()).map(|i| self.time(i)).collect()
    }

    pub fn maturities(&self) -> Vec<f64> {
        (0..self.maturity_nodes())
            .map(|j| self.maturity(j))
            .collect()
    }

    /// Widths of the maturity cells `(u_{j-1}, u_j]`, the first one being the
    /// strip `(0, u_min]`.
    pub fn cell_widths(&self) -> Vec<f64> {
        let nodes = self.maturities();
        let mut prev = 0.0;
        nodes
            .iter()
            .map(|&u| {
                let w = u - prev;
                prev = u;
                w
            })
            .collect()
    }

    /// Index of the time node equal to `t`, if any.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        let x = t / self.dt();
        let i = x.round();
        if i < 0.0 || i as usize > self.n_time {
            return None;
        }
        ((x - i).abs() <= NODE_SNAP_TOL * x.abs().max(1.0)).then_some(i as usize)
    }

    /// Index of the maturity node equal to `u`, if any.
    pub fn maturity_index(&self, u: f64) -> Option<usize> {
        let x = (u - self.u_min) / self.du();
        let j = x.round();
        if j < 0.0 || j as usize > self.n_maturity {
            return None;
        }
        ((x - j).abs() <= NODE_SNAP_TOL * x.abs().max(1.0)).then_some(j as usize)
    }

    /// Time-direction quadrature weights: left-endpoint rule, so the last
    /// node carries zero weight.
    pub fn time_weights(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..self.time_nodes())
            .map(|i| if i < self.n_time { dt } else { 0.0 })
            .collect()
    }

    /// Maturity-direction quadrature weights on `[0, T0]`: composite
    /// trapezoid on the nodes plus a rectangle `u_min * f(u_min)` for the
    /// strip below the first node.
    pub fn maturity_weights(&self) -> Vec<f64> {
        let widths = self.cell_widths();
        let n = self.maturity_nodes();
        (0..n)
            .map(|j| {
                let left = if j == 0 { widths[0] } else { 0.5 * widths[j] };
                let right = if j + 1 < n { 0.5 * widths[j + 1] } else { 0.0 };
                left + right
            })
            .collect()
    }
}
