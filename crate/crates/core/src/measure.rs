//! Discretized space-time change of measure.
//!
//! The kernel `g` is a drift density in the maturity variable. On a warped
//! grid the noise cell `l` has sheet width `Δv_l = h²(u_l) - h²(u_{l-1})`
//! while its maturity width is `w_l`, so the coefficient multiplying the
//! increment is `a_l = g_l w_l / Δv_l`. Under the reweighted measure the
//! increment then has mean `-g_l w_l Δt`, which is exactly the drift the
//! shifted sheet needs. On the plain grid `a = g`.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::FieldPath;
use crate::grid::GridSpec;
use crate::mpr::{check_shape, KernelGrid, MprSurface};
use crate::sheet::SheetPath;
use crate::verify::{Estimate, Merge, StatPolicy, WeightedStats};
use crate::warp::FieldKind;

/// Log Radon–Nikodym density process `L(t_i)` of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathWeight {
    pub log_density_at: Vec<f64>,
}

impl PathWeight {
    pub fn full(&self) -> f64 {
        *self.log_density_at.last().expect("at least two time nodes")
    }
}

/// Per-cell increment coefficients and per-row compensators of the density.
#[derive(Debug, Clone)]
pub struct DensityCoefficients {
    coef: Array2<f64>,
    half_qv: Vec<f64>,
}

impl DensityCoefficients {
    pub fn new(kernel: &KernelGrid, grid: &GridSpec) -> Result<Self> {
        check_shape(&kernel.g, grid, "kernel")?;
        let warp = kernel.kind.warp();
        let widths = grid.cell_widths();
        let sheet_widths = warp.sheet_cell_widths(grid);
        let ratio: Vec<f64> = widths
            .iter()
            .zip(&sheet_widths)
            .map(|(w, v)| w / v)
            .collect();
        let dt = grid.dt();
        let cells = grid.maturity_nodes();
        let mut coef = Array2::zeros((grid.n_time(), cells));
        let mut half_qv = vec![0.0; grid.n_time()];
        for k in 0..grid.n_time() {
            let mut q = 0.0;
            for l in 0..cells {
                let g = kernel.g[(k, l)];
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        quantity: "kernel",
                        time_node: k,
                        maturity_node: l,
                    });
                }
                let a = g * ratio[l];
                coef[(k, l)] = a;
                q += a * a * dt * sheet_widths[l];
            }
            half_qv[k] = 0.5 * q;
        }
        Ok(Self { coef, half_qv })
    }

    /// `Σ_k Σ_l a² Δt Δv`: the quadratic variation of the log density, so
    /// `Var[exp(L(T0))] = exp(this) - 1` for a deterministic kernel.
    pub fn total_quadratic_variation(&self) -> f64 {
        2.0 * self.half_qv.iter().sum::<f64>()
    }

    pub fn density_into(&self, sheet: &SheetPath, out: &mut Vec<f64>) {
        out.clear();
        let mut acc = 0.0;
        out.push(acc);
        for ((coef, inc), half_qv) in self
            .coef
            .rows()
            .into_iter()
            .zip(sheet.increments.rows())
            .zip(&self.half_qv)
        {
            let mut s = 0.0;
            for (a, x) in coef.iter().zip(inc.iter()) {
                s += a * x;
            }
            acc += -s - half_qv;
            out.push(acc);
        }
    }
}

/// `L(t_i) = -Σ_{k<i} Σ_l a_{kl} ΔW_{kl} - ½ Σ_{k<i} Σ_l a_{kl}² Δt Δv_l`,
/// with the kernel taken at the left time endpoint of each cell.
pub fn log_rn_density(
    kernel: &KernelGrid,
    sheet: &SheetPath,
    grid: &GridSpec,
) -> Result<PathWeight> {
    if sheet.increments.dim() != (grid.n_time(), grid.maturity_nodes()) {
        return Err(Error::Shape(format!(
            "increments are {:?}, grid expects {:?}",
            sheet.increments.dim(),
            (grid.n_time(), grid.maturity_nodes())
        )));
    }
    let coef = DensityCoefficients::new(kernel, grid)?;
    let mut out = Vec::with_capacity(grid.time_nodes());
    coef.density_into(sheet, &mut out);
    Ok(PathWeight {
        log_density_at: out,
    })
}

/// `Z̃(t_i, u_j) = Z(t_i, u_j) + Σ_{k<i} λ(t_k, u_j) Δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedField {
    pub values: Array2<f64>,
}

/// Cumulative left-endpoint time integral of λ, the deterministic part of
/// the shift when λ is deterministic.
pub fn lambda_time_integral(lambda: &MprSurface, grid: &GridSpec) -> Result<Array2<f64>> {
    check_shape(&lambda.lambda, grid, "lambda")?;
    let dt = grid.dt();
    let mut out = Array2::zeros(lambda.lambda.dim());
    for i in 1..grid.time_nodes() {
        for j in 0..grid.maturity_nodes() {
            out[(i, j)] = out[(i - 1, j)] + lambda.lambda[(i - 1, j)] * dt;
        }
    }
    Ok(out)
}

pub fn shift_field(
    field: &FieldPath,
    lambda: &MprSurface,
    grid: &GridSpec,
) -> Result<ShiftedField> {
    check_shape(&field.values, grid, "field")?;
    let shift = lambda_time_integral(lambda, grid)?;
    Ok(ShiftedField {
        values: &field.values + &shift,
    })
}

/// A pair of grid nodes `(t1, u1)`, `(t2, u2)` given by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NodePair {
    pub t1: usize,
    pub u1: usize,
    pub t2: usize,
    pub u2: usize,
}

impl NodePair {
    pub fn from_years(grid: &GridSpec, t1: f64, u1: f64, t2: f64, u2: f64) -> Result<Self> {
        let ti = |t: f64, name: &str| {
            grid.time_index(t)
                .ok_or_else(|| Error::config(name, format!("{t} is not a time node of the grid")))
        };
        let ui = |u: f64, name: &str| {
            grid.maturity_index(u).ok_or_else(|| {
                Error::config(name, format!("{u} is not a maturity node of the grid"))
            })
        };
        Ok(Self {
            t1: ti(t1, "t1_years")?,
            u1: ui(u1, "maturity1_years")?,
            t2: ti(t2, "t2_years")?,
            u2: ui(u2, "maturity2_years")?,
        })
    }

    pub fn label(&self, grid: &GridSpec) -> String {
        format!(
            "({}, {})x({}, {})",
            grid.time(self.t1),
            grid.maturity(self.u1),
            grid.time(self.t2),
            grid.maturity(self.u2)
        )
    }
}

/// `E[Z(t1,T1) Z(t2,T2)] = (t1 ∧ t2) h²(T1 ∧ T2) / (h(T1) h(T2))`; for the
/// normalized field this is `(t1 ∧ t2) sqrt((T1 ∧ T2) / (T1 ∨ T2))`.
pub fn field_covariance(kind: &FieldKind, grid: &GridSpec, probe: &NodePair) -> f64 {
    let t = grid.time(probe.t1.min(probe.t2));
    let (u1, u2) = (grid.maturity(probe.u1), grid.maturity(probe.u2));
    match kind {
        FieldKind::Normalized => t * (u1.min(u2) / u1.max(u2)).sqrt(),
        FieldKind::Scaled(w) => t * w.h_sq(u1.min(u2)) / (w.h(u1) * w.h(u2)),
    }
}

/// Streaming importance-sampled second moments `Σ w Z̃₁ Z̃₂ / Σ w` over an
/// ensemble, one weight per probe taken at the later probe time.
#[derive(Debug, Clone)]
pub struct SheetMomentAccumulator {
    probes: Vec<NodePair>,
    stats: Vec<WeightedStats>,
}

impl SheetMomentAccumulator {
    pub fn new(probes: Vec<NodePair>) -> Self {
        let stats = vec![WeightedStats::default(); probes.len()];
        Self { probes, stats }
    }

    pub fn observe(&mut self, values: &Array2<f64>, log_density_at: &[f64]) {
        for (p, s) in self.probes.iter().zip(&mut self.stats) {
            let x = values[(p.t1, p.u1)] * values[(p.t2, p.u2)];
            s.push(log_density_at[p.t1.max(p.t2)], x);
        }
    }

    pub fn estimates(&self) -> Result<Vec<Estimate>> {
        self.stats
            .iter()
            .map(|s| s.self_normalized_estimate())
            .collect()
    }

    pub fn finish(
        &self,
        kind: &FieldKind,
        grid: &GridSpec,
        policy: &StatPolicy,
    ) -> Result<SheetTestReport> {
        let rows = self
            .probes
            .iter()
            .zip(self.estimates()?)
            .map(|(p, est)| {
                let expected = field_covariance(kind, grid, p);
                ProbeRow {
                    probe: *p,
                    label: p.label(grid),
                    expected,
                    z_score: est.z_score(expected),
                    estimate: est,
                }
            })
            .collect::<Vec<_>>();
        let max_abs_z = rows.iter().map(|r| r.z_score.abs()).fold(0.0, f64::max);
        let count_exceeding = rows
            .iter()
            .filter(|r| r.z_score.abs() > policy.z_bound)
            .count();
        let underpowered = rows
            .iter()
            .any(|r| r.estimate.effective_n < policy.min_effective_n);
        Ok(SheetTestReport {
            passed: count_exceeding == 0 && !underpowered,
            rows,
            max_abs_z,
            count_exceeding,
            underpowered,
        })
    }
}

impl Merge for SheetMomentAccumulator {
    fn merge(&mut self, other: Self) {
        self.stats.merge(other.stats);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub probe: NodePair,
    pub label: String,
    pub estimate: Estimate,
    pub expected: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SheetTestReport {
    pub rows: Vec<ProbeRow>,
    pub max_abs_z: f64,
    pub count_exceeding: usize,
    /// Some probe had fewer effective samples than the policy requires.
    pub underpowered: bool,
    pub passed: bool,
}

/// Checks that the shifted field has the sheet covariance under the
/// reweighted measure.
pub fn weighted_sheet_test(
    shifted: &[ShiftedField],
    weights: &[PathWeight],
    probes: &[NodePair],
    kind: &FieldKind,
    grid: &GridSpec,
    policy: &StatPolicy,
) -> Result<SheetTestReport> {
    if shifted.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} shifted fields but {} weights",
            shifted.len(),
            weights.len()
        )));
    }
    let mut acc = SheetMomentAccumulator::new(probes.to_vec());
    for (z, w) in shifted.iter().zip(weights) {
        acc.observe(&z.values, &w.log_density_at);
    }
    acc.finish(kind, grid, policy)
}
