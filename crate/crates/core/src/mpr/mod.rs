//! Market price of risk: the density η, its maturity integral λ, the
//! Girsanov kernel g, and the integrability conditions.

mod conditions;
mod eta;

pub use conditions::{
    check_c2_bound, check_l2_identity, evaluate_conditions, evaluate_conditions_adapted,
    AdaptedConditionReport, ConditionReport, L2Identity,
};
pub use eta::{AdaptedRule, BlockTable, EtaSpec, EtaSurface, ScalarFn};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::warp::FieldKind;

/// `λ(t_i, u_j)` on grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MprSurface {
    pub lambda: Array2<f64>,
}

/// Girsanov kernel `g(t_i, u_j)` on grid nodes, in the maturity variable.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrid {
    pub g: Array2<f64>,
    pub kind: FieldKind,
}

/// Left-endpoint running integral of η in maturity:
/// `λ(u_0) = η(u_0) u_min`, `λ(u_{j+1}) = λ(u_j) + η(u_j) (u_{j+1} - u_j)`.
pub fn lambda_from_eta(eta: &EtaSurface, grid: &GridSpec) -> Result<MprSurface> {
    check_shape(&eta.values, grid, "eta")?;
    let widths = grid.cell_widths();
    let mut lambda = Array2::zeros(eta.values.dim());
    for (src, mut dst) in eta.values.rows().into_iter().zip(lambda.rows_mut()) {
        let mut acc = src[0] * widths[0];
        dst[0] = acc;
        for j in 1..src.len() {
            acc += src[j - 1] * widths[j];
            dst[j] = acc;
        }
    }
    Ok(MprSurface { lambda })
}

/// `g = h'(u) λ + h(u) η`; for the normalized field `g = λ / (2 sqrt(u)) + sqrt(u) η`.
pub fn girsanov_kernel(
    eta: &EtaSurface,
    lambda: &MprSurface,
    kind: &FieldKind,
    grid: &GridSpec,
) -> Result<KernelGrid> {
    check_shape(&eta.values, grid, "eta")?;
    check_shape(&lambda.lambda, grid, "lambda")?;
    let warp = kind.warp();
    let mats = grid.maturities();
    let mut g = Array2::zeros(eta.values.dim());
    for ((i, j), out) in g.indexed_iter_mut() {
        *out = warp
            .kernel_at(mats[j], lambda.lambda[(i, j)], eta.values[(i, j)])
            .ok_or(Error::MissingDerivative {
                node: j,
                maturity: mats[j],
            })?;
        if !out.is_finite() {
            return Err(Error::NonFinite {
                quantity: "kernel",
                time_node: i,
                maturity_node: j,
            });
        }
    }
    Ok(KernelGrid {
        g,
        kind: kind.clone(),
    })
}

/// `max_{i,j} |Σ_{l<=j} g(t_i, u_l) w_l - h(u_j) λ(t_i, u_j)|` with `w_l` the
/// maturity cell widths (strip included), `h(u) = sqrt(u)` for the
/// normalized field.
pub fn check_drift_identity(
    kernel: &KernelGrid,
    lambda: &MprSurface,
    kind: &FieldKind,
    grid: &GridSpec,
) -> Result<f64> {
    check_shape(&kernel.g, grid, "kernel")?;
    check_shape(&lambda.lambda, grid, "lambda")?;
    let warp = kind.warp();
    let widths = grid.cell_widths();
    let scale: Vec<f64> = grid.maturities().into_iter().map(|u| warp.h(u)).collect();
    let mut worst: f64 = 0.0;
    for (g_row, l_row) in kernel.g.rows().into_iter().zip(lambda.lambda.rows()) {
        let mut acc = 0.0;
        for j in 0..g_row.len() {
            acc += g_row[j] * widths[j];
            worst = worst.max((acc - scale[j] * l_row[j]).abs());
        }
    }
    Ok(worst)
}

pub(crate) fn check_shape(a: &Array2<f64>, grid: &GridSpec, what: &str) -> Result<()> {
    let expected = (grid.time_nodes(), grid.maturity_nodes());
    if a.dim() != expected {
        return Err(Error::Shape(format!(
            "{what} is {:?}, grid expects {:?}",
            a.dim(),
            expected
        )));
    }
    Ok(())
}
