use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::ssm::ShapeModel;

use super::{mix_seed, run_trial, Corruption, CorruptionSpec, Method};

/// Rotation angles and translation magnitudes spanning the grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub angles: Vec<f64>,
    pub translations: Vec<f64>,
    /// Unit direction of the translation; the first axis when `None`.
    pub direction: Option<Vec<f64>>,
    /// Rotation axis, required in 3D.
    pub axis: Option<[f64; 3]>,
    pub threshold: f64,
    pub seed: u64,
}

impl GridSpec {
    /// `count` evenly spaced values from `lo` to `hi`.
    pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        match count {
            0 => Vec::new(),
            1 => vec![lo],
            _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
        }
    }

    fn offset(&self, dim: usize, magnitude: f64) -> Result<Vec<f64>> {
        let dir = match &self.direction {
            Some(d) => {
                if d.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: d.len() });
                }
                let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(n > 0.0) {
                    return Err(Error::Domain("translation direction must be nonzero".into()));
                }
                d.iter().map(|v| v / n).collect()
            }
            None => (0..dim).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect::<Vec<_>>(),
        };
        Ok(dir.iter().map(|v| v * magnitude).collect())
    }
}

/// Registration outcome for one `(angle, translation)` pair.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
    pub angle: f64,
    pub translation: f64,
    pub success: bool,
    pub accuracy: f64,
    pub max_error: f64,
    pub iterations: usize,
    pub error: Option<String>,
}

/// Cells in row-major order: one row per angle, one column per translation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SuccessGrid {
    pub angles: Vec<f64>,
    pub translations: Vec<f64>,
    pub cells: Vec<GridCell>,
}

impl SuccessGrid {
    pub fn cell(&self, row: usize, col: usize) -> &GridCell {
        &self.cells[row * self.translations.len() + col]
    }

    /// Success indicator per cell.
    pub fn counts(&self) -> Vec<Vec<usize>> {
        (0..self.angles.len())
            .map(|r| (0..self.translations.len()).map(|c| usize::from(self.cell(r, c).success)).collect())
            .collect()
    }

    /// Cellwise sum of success counts over grids sharing one layout.
    pub fn sum_counts(grids: &[SuccessGrid]) -> Result<Vec<Vec<usize>>> {
        let first = grids.first().ok_or_else(|| Error::EmptyInput("no grids".into()))?;
        let mut total = first.counts();
        for g in &grids[1..] {
            if g.angles != first.angles || g.translations != first.translations {
                return Err(Error::Domain("grids have different layouts".into()));
            }
            for (row, add) in total.iter_mut().zip(g.counts()) {
                row.iter_mut().zip(add).for_each(|(a, b)| *a += b);
            }
        }
        Ok(total)
    }
}

/// Rotates `x_true` about its centroid, translates it, and registers the
/// model to each such pose. Cells run in parallel with seeds derived from
/// the grid seed and the cell index. A failed registration is a miss.
pub fn success_grid(model: &ShapeModel, x_true: &PointSet, spec: &GridSpec, method: &Method) -> Result<SuccessGrid> {
    if !(spec.threshold > 0.0) {
        return Err(Error::Domain(format!("success threshold must be positive, got {}", spec.threshold)));
    }
    let cols = spec.translations.len();
    let jobs: Vec<(usize, usize)> = (0..spec.angles.len()).flat_map(|r| (0..cols).map(move |c| (r, c))).collect();
    let cells = jobs
        .par_iter()
        .map(|&(row, col)| {
            let index = (row * cols + col) as u64;
            let seed = mix_seed(spec.seed, index);
            let (angle, translation) = (spec.angles[row], spec.translations[col]);
            let corruption = Corruption::Compose {
                stages: vec![
                    Corruption::Rotate { angle, axis: spec.axis },
                    Corruption::Translate { offset: spec.offset(x_true.dim(), translation)? },
                ],
            };
            let cs = CorruptionSpec { corruption, seed };
            let rec = run_trial(model, x_true, &cs, &method.reseeded(seed), spec.threshold)?;
            Ok(GridCell {
                row,
                col,
                angle,
                translation,
                success: rec.success,
                accuracy: rec.accuracy,
                max_error: rec.max_error,
                iterations: rec.iterations,
                error: rec.error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuccessGrid { angles: spec.angles.clone(), translations: spec.translations.clone(), cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::contour_model;
    use crate::solver::DldConfig;

    #[test]
    fn linspace_hits_both_ends() {
        let a = GridSpec::linspace(-0.5, 0.5, 11);
        assert_eq!(a.len(), 11);
        assert_eq!(a[0], -0.5);
        assert_eq!(a[10], 0.5);
        assert!(a[5].abs() < 1e-15);
        assert_eq!(GridSpec::linspace(1.0, 2.0, 1), vec![1.0]);
    }

    #[test]
    fn grid_has_requested_layout_and_zero_cell_succeeds() {
        let model = contour_model(40, 4, 21).unwrap();
        let truth = model.mean_shape();
        let spec = GridSpec {
            angles: vec![-0.3, 0.0, 0.3],
            translations: vec![0.0, 0.1],
            direction: None,
            axis: None,
            threshold: 0.05,
            seed: 5,
        };
        let grid = success_grid(&model, &truth, &spec, &Method::Dld(DldConfig::default())).unwrap();
        assert_eq!(grid.cells.len(), 6);
        assert_eq!(grid.counts().len(), 3);
        assert!(grid.counts().iter().all(|r| r.len() == 2));
        let zero = grid.cell(1, 0);
        assert_eq!((zero.angle, zero.translation), (0.0, 0.0));
        assert!(zero.success);
        let again = success_grid(&model, &truth, &spec, &Method::Dld(DldConfig::default())).unwrap();
        assert_eq!(grid, again);
        let sum = SuccessGrid::sum_counts(&[grid.clone(), again]).unwrap();
        assert_eq!(sum[1][0], 2);
    }

    #[test]
    fn direction_must_match_dimension() {
        let spec = GridSpec {
            angles: vec![0.0],
            translations: vec![0.1],
            direction: Some(vec![1.0, 0.0, 0.0]),
            axis: None,
            threshold: 0.1,
            seed: 0,
        };
        assert!(spec.offset(2, 0.1).is_err());
        let ok = GridSpec { direction: Some(vec![3.0, 4.0]), ..spec };
        let o = ok.offset(2, 1.0).unwrap();
        assert!((o[0] - 0.6).abs() < 1e-15 && (o[1] - 0.8).abs() < 1e-15);
    }
}
