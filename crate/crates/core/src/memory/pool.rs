use crate::error::{Error, Result};
use crate::ndcore::Vector;

/// An `H × W` grid of `D`-dimensional feature vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    cells: Vec<Vector>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, cells: Vec<Vector>) -> Result<Self> {
        if height == 0 || width == 0 || cells.is_empty() {
            return Err(Error::Empty { op: "FeatureMap" });
        }
        if cells.len() != height * width {
            return Err(Error::DimMismatch {
                op: "FeatureMap",
                expected: height * width,
                got: cells.len(),
            });
        }
        let dim = cells[0].len();
        if let Some(bad) = cells.iter().find(|c| c.len() != dim) {
            return Err(Error::DimMismatch {
                op: "FeatureMap",
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Self { height, width, cells })
    }

    pub fn single(v: Vector) -> Self {
        Self {
            height: 1,
            width: 1,
            cells: vec![v],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Spatial average over all `H·W` positions.
pub fn mean_pool(map: &FeatureMap) -> Result<Vector> {
    let first = map.cells.first().ok_or(Error::Empty { op: "mean_pool" })?;
    let mut acc = vec![0.0; first.len()];
    for cell in &map.cells {
        for (a, v) in acc.iter_mut().zip(cell.iter()) {
            *a += v;
        }
    }
    let n = map.cells.len() as f64;
    Ok(Vector::from(acc.into_iter().map(|a| a / n).collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map() {
        let map = FeatureMap::new(3, 2, vec![Vector::filled(5, 1.25); 6]).unwrap();
        assert_eq!(mean_pool(&map).unwrap(), Vector::filled(5, 1.25));
    }

    #[test]
    fn single_cell_is_unchanged() {
        let v = Vector::from(vec![1.0, -2.0, 3.0]);
        assert_eq!(mean_pool(&FeatureMap::single(v.clone())).unwrap(), v);
    }

    #[test]
    fn basis_vectors_average() {
        let basis = (0..4)
            .map(|i| {
                let mut e = vec![0.0; 4];
                e[i] = 1.0;
                Vector::from(e)
            })
            .collect();
        let map = FeatureMap::new(2, 2, basis).unwrap();
        assert_eq!(mean_pool(&map).unwrap(), Vector::filled(4, 0.25));
    }

    #[test]
    fn empty_or_ragged_maps_are_rejected() {
        assert!(FeatureMap::new(0, 2, vec![]).is_err());
        assert!(FeatureMap::new(1, 2, vec![Vector::zeros(2)]).is_err());
        assert!(FeatureMap::new(1, 2, vec![Vector::zeros(2), Vector::zeros(3)]).is_err());
    }
}
