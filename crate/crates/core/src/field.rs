//! Random fields `Z(t, T)` built from a sampled sheet.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::sheet::SheetPath;
use crate::warp::FieldKind;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldPath {
    pub values: Array2<f64>,
    pub kind: FieldKind,
}

/// Normalized: `Z = W(t, u) / sqrt(u)`. Scaled: `Z = W(t, h^2(u)) / h(u)`.
///
/// The sheet must have been sampled on the grid matching `kind`.
pub fn build_field(sheet: &SheetPath, kind: &FieldKind, grid: &GridSpec) -> Result<FieldPath> {
    let expected = (grid.time_nodes(), grid.maturity_nodes());
    if sheet.sheet.dim() != expected {
        return Err(Error::Shape(format!(
            "sheet is {:?}, grid expects {:?}",
            sheet.sheet.dim(),
            expected
        )));
    }
    let mut values = Array2::zeros(expected);
    let scale = field_scales(kind, grid);
    fill_field(sheet, &scale, &mut values);
    Ok(FieldPath {
        values,
        kind: kind.clone(),
    })
}

/// `h(u_j)` per maturity node.
pub(crate) fn field_scales(kind: &FieldKind, grid: &GridSpec) -> Vec<f64> {
    let warp = kind.warp();
    grid.maturities().into_iter().map(|u| warp.h(u)).collect()
}

pub(crate) fn fill_field(sheet: &SheetPath, h: &[f64], out: &mut Array2<f64>) {
    for (src, mut dst) in sheet.sheet.rows().into_iter().zip(out.rows_mut()) {
        for ((d, &w), &hj) in dst.iter_mut().zip(src.iter()).zip(h) {
            *d = w / hj;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PathStream;
    use crate::sheet::{sample_sheet, sample_sheet_on_warped_grid};
    use crate::warp::MaturityWarp;

    #[test]
    fn zero_at_time_origin() {
        let g = GridSpec::new(1.0, 4, 7).unwrap();
        let s = sample_sheet(&g, &mut PathStream::new(2, 2));
        let z = build_field(&s, &FieldKind::Normalized, &g).unwrap();
        assert!(z.values.row(0).iter().all(|&x| x == 0.0));
        let u = g.maturities();
        for (j, uj) in u.iter().enumerate() {
            assert_eq!(z.values[(3, j)], s.sheet[(3, j)] / uj.sqrt());
        }
    }

    #[test]
    fn scaled_sqrt_is_bit_identical_to_normalized() {
        let g = GridSpec::new(1.0, 16, 15).unwrap();
        let s = sample_sheet(&g, &mut PathStream::new(11, 0));
        let sw = sample_sheet_on_warped_grid(&g, &MaturityWarp::Sqrt, &mut PathStream::new(11, 0))
            .unwrap();
        let a = build_field(&s, &FieldKind::Normalized, &g).unwrap();
        let b = build_field(&sw, &FieldKind::Scaled(MaturityWarp::Sqrt), &g).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let g = GridSpec::new(1.0, 4, 7).unwrap();
        let other = GridSpec::new(1.0, 5, 7).unwrap();
        let s = sample_sheet(&other, &mut PathStream::new(0, 0));
        assert!(build_field(&s, &FieldKind::Normalized, &g).is_err());
    }
}
