use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::sheet::SheetPath;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Rule producing the η values of time row `i` from the sheet rows `0..=i`.
///
/// The view handed to the rule is truncated to those rows, so a rule cannot
/// look ahead. `W(t_i, ·)` only depends on increments of rows `< i`.
pub type AdaptedRule = Arc<dyn Fn(ArrayView2<'_, f64>, usize, &GridSpec, &mut [f64]) + Send + Sync>;

/// Piecewise-constant η on a uniform `rows x cols` block partition of
/// `[0, T0] x [0, T0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTable {
    pub values: Array2<f64>,
}

impl BlockTable {
    fn at(&self, t: f64, u: f64, t0: f64) -> f64 {
        let (rows, cols) = self.values.dim();
        let a = ((t / t0 * rows as f64).floor() as usize).min(rows - 1);
        let b = ((u / t0 * cols as f64).floor() as usize).min(cols - 1);
        self.values[(a, b)]
    }
}

/// Market-price-of-risk density `η(t, u)`.
#[derive(Clone)]
pub enum EtaSpec {
    Zero,
    Constant(f64),
    Separable { time: ScalarFn, maturity: ScalarFn },
    PiecewiseConstant(BlockTable),
    GridAdapted(AdaptedRule),
}

impl fmt::Debug for EtaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EtaSpec::Zero => write!(f, "Zero"),
            EtaSpec::Constant(c) => write!(f, "Constant({c})"),
            EtaSpec::Separable { .. } => write!(f, "Separable(..)"),
            EtaSpec::PiecewiseConstant(t) => write!(f, "PiecewiseConstant({:?})", t.values.dim()),
            EtaSpec::GridAdapted(_) => write!(f, "GridAdapted(..)"),
        }
    }
}

/// η realized on the grid nodes. Node `(t_i, u_j)` stands for the cell
/// `[t_i, t_{i+1}) x [u_j, u_{j+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaSurface {
    pub values: Array2<f64>,
}

impl EtaSpec {
    pub fn separable(
        time: impl Fn(f64) -> f64 + Send + Sync + 'static,
        maturity: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        EtaSpec::Separable {
            time: Arc::new(time),
            maturity: Arc::new(maturity),
        }
    }

    pub fn piecewise(values: Array2<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("piecewise table must be non-empty".into()));
        }
        Ok(EtaSpec::PiecewiseConstant(BlockTable { values }))
    }

    pub fn adapted(
        rule: impl Fn(ArrayView2<'_, f64>, usize, &GridSpec, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        EtaSpec::GridAdapted(Arc::new(rule))
    }

    /// `η(t_i, u_j) = base + gain * tanh(W(t_i, u_j))`: bounded and
    /// predictable feedback from the sheet.
    pub fn sheet_feedback(base: f64, gain: f64) -> Self {
        Self::adapted(move |rows, i, _grid, out| {
            for (o, &w) in out.iter_mut().zip(rows.row(i)) {
                *o = base + gain * w.tanh();
            }
        })
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, EtaSpec::GridAdapted(_))
    }

    /// Realizes η on the grid. Adapted kinds need the path's sheet.
    pub fn realize(&self, grid: &GridSpec, sheet: Option<&SheetPath>) -> Result<EtaSurface> {
        let shape = (grid.time_nodes(), grid.maturity_nodes());
        let t0 = grid.t0_horizon();
        let times = grid.times();
        let mats = grid.maturities();
        let values = match self {
            EtaSpec::Zero => Array2::zeros(shape),
            EtaSpec::Constant(c) => Array2::from_elem(shape, *c),
            EtaSpec::Separable { time, maturity } => {
                let f: Vec<f64> = times.iter().map(|&t| time(t)).collect();
                let k: Vec<f64> = mats.iter().map(|&u| maturity(u)).collect();
                Array2::from_shape_fn(shape, |(i, j)| f[i] * k[j])
            }
            EtaSpec::PiecewiseConstant(table) => {
                Array2::from_shape_fn(shape, |(i, j)| table.at(times[i], mats[j], t0))
            }
            EtaSpec::GridAdapted(rule) => {
                let sheet = sheet.ok_or_else(|| {
                    Error::Shape("grid-adapted eta needs a sampled sheet to realize".into())
                })?;
                if sheet.sheet.dim() != shape {
                    return Err(Error::Shape(format!(
                        "sheet is {:?}, grid expects {:?}",
                        sheet.sheet.dim(),
                        shape
                    )));
                }
                let mut out = Array2::zeros(shape);
                let mut row = vec![0.0; shape.1];
                for i in 0..shape.0 {
                    let visible = sheet.sheet.slice(ndarray::s![..=i, ..]);
                    rule(visible, i, grid, &mut row);
                    out.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
                }
                out
            }
        };
        for ((i, j), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    quantity: "eta",
                    time_node: i,
                    maturity_node: j,
                });
            }
        }
        Ok(EtaSurface { values })
    }

    /// Realization for deterministic kinds.
    pub fn realize_deterministic(&self, grid: &GridSpec) -> Result<EtaSurface> {
        if !self.is_deterministic() {
            return Err(Error::Shape(
                "eta is grid-adapted; realize it per path".into(),
            ));
        }
        self.realize(grid, None)
    }
}
