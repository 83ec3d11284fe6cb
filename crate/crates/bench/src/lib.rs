//! Shared fixtures for the benchmarks.

use sheetbond_core::{girsanov_kernel, lambda_from_eta, EtaSpec, FieldKind, GridSpec, KernelGrid};

/// The reference grid: 256 time steps, 64 maturity cells on `[1/64, 1]`.
pub fn reference_grid() -> GridSpec {
    GridSpec::new(1.0, 256, 63).expect("valid grid")
}

pub fn constant_kernel(grid: &GridSpec, eta: f64) -> KernelGrid {
    let surface = EtaSpec::Constant(eta)
        .realize_deterministic(grid)
        .expect("finite");
    let lambda = lambda_from_eta(&surface, grid).expect("shape");
    girsanov_kernel(&surface, &lambda, &FieldKind::Normalized, grid).expect("sqrt warp")
}
