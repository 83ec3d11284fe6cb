//! Discretized space-time white noise and its Brownian sheet.

use std::io::Write;

use ndarray::Array2;

use crate::error::Result;
use crate::grid::GridSpec;
use crate::rng::PathStream;
use crate::warp::MaturityWarp;

/// One realization of the rectangle increments and the cumulated sheet.
///
/// `increments[(i, l)]` is the white-noise mass of
/// `[t_i, t_{i+1}) x (v_{l-1}, v_l]`, where `v` is the sheet's second
/// coordinate (`v = u` on the plain grid, `v = h^2(u)` on a warped one) and
/// `v_{-1} = 0`. `sheet[(i, j)] = W(t_i, v_j)` is the sum of increments with
/// `k < i`, `l <= j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SheetPath {
    pub increments: Array2<f64>,
    pub sheet: Array2<f64>,
}

impl SheetPath {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            increments: Array2::zeros((grid.n_time(), grid.maturity_nodes())),
            sheet: Array2::zeros((grid.time_nodes(), grid.maturity_nodes())),
        }
    }

    /// Debug dump: one line per time node, one column per maturity node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.sheet.rows() {
            let line: Vec<String> = row.iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Per-column standard deviations of the increments, precomputed once per
/// grid so that ensembles only pay for the normal draws.
#[derive(Debug, Clone)]
pub struct SheetSampler {
    std_devs: Vec<f64>,
    n_time: usize,
}

impl SheetSampler {
    pub fn plain(grid: &GridSpec) -> Self {
        Self::from_widths(grid, &grid.cell_widths())
    }

    pub fn warped(grid: &GridSpec, warp: &MaturityWarp) -> Result<Self> {
        warp.validate(grid)?;
        Ok(Self::from_widths(grid, &warp.sheet_cell_widths(grid)))
    }

    fn from_widths(grid: &GridSpec, widths: &[f64]) -> Self {
        let dt = grid.dt();
        Self {
            std_devs: widths.iter().map(|&w| (dt * w).sqrt()).collect(),
            n_time: grid.n_time(),
        }
    }

    pub fn column_variances(&self) -> Vec<f64> {
        self.std_devs.iter().map(|s| s * s).collect()
    }

    pub fn sample(&self, stream: &mut PathStream) -> SheetPath {
        let cols = self.std_devs.len();
        let mut path = SheetPath {
            increments: Array2::zeros((self.n_time, cols)),
            sheet: Array2::zeros((self.n_time + 1, cols)),
        };
        self.sample_into(stream, &mut path);
        path
    }

    /// Refills `path` in place. Draw order is row-major over cells.
    pub fn sample_into(&self, stream: &mut PathStream, path: &mut SheetPath) {
        let cols = self.std_devs.len();
        let inc = path
            .increments
            .as_slice_mut()
            .expect("increments are contiguous");
        for row in inc.chunks_exact_mut(cols) {
            for (x, &sd) in row.iter_mut().zip(&self.std_devs) {
                *x = sd * stream.standard_normal();
            }
        }
        cumulate(&path.increments, &mut path.sheet);
    }
}

/// `sheet[i+1][j] = sheet[i][j] + Σ_{l<=j} inc[i][l]`, row 0 zero.
fn cumulate(increments: &Array2<f64>, sheet: &mut Array2<f64>) {
    let cols = increments.ncols();
    let inc = increments.as_slice().expect("contiguous");
    let out = sheet.as_slice_mut().expect("contiguous");
    out[..cols].fill(0.0);
    for i in 0..increments.nrows() {
        let (done, rest) = out.split_at_mut((i + 1) * cols);
        let prev = &done[i * cols..];
        let next = &mut rest[..cols];
        let mut run = 0.0;
        for l in 0..cols {
            run += inc[i * cols + l];
            next[l] = prev[l] + run;
        }
    }
}

pub fn sample_sheet(grid: &GridSpec, stream: &mut PathStream) -> SheetPath {
    SheetSampler::plain(grid).sample(stream)
}

/// Samples the sheet directly at second coordinates `h^2(u_j)`; column `l`
/// has variance `Δt (h^2(u_l) - h^2(u_{l-1}))`.
pub fn sample_sheet_on_warped_grid(
    grid: &GridSpec,
    warp: &MaturityWarp,
    stream: &mut PathStream,
) -> Result<SheetPath> {
    Ok(SheetSampler::warped(grid, warp)?.sample(stream))
}
