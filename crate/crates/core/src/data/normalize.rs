use std::ops::Range;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Standard deviations at or below this are treated as constant features.
const MIN_STD: f64 = 1e-12;

/// Per-feature z-scoring fitted on a set of training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose fitted std was zero; their std is stored as 1.
    pub degenerate: Vec<bool>,
    /// Row ranges the statistics were computed from.
    pub fitted_on: Vec<Range<usize>>,
}

/// Fits mean and population standard deviation over `rows` in a single
/// streaming (Welford) pass.
pub fn fit_normalizer(dataset: &Dataset, rows: &[Range<usize>]) -> Result<Normalizer> {
    let n_rows = dataset.n_rows();
    if rows.iter().all(|r| r.is_empty()) {
        return Err(Error::Data("normalizer needs at least one row".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.end > n_rows || r.start > r.end) {
        return Err(Error::Data(format!("row range {r:?} outside 0..{n_rows}")));
    }
    let d = dataset.n_features();
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    let mut count = 0.0;
    let features = dataset.features();
    for r in rows {
        for row in features.slice(ndarray::s![r.clone(), ..]).rows() {
            count += 1.0;
            for ((mu, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(row.iter()) {
                let delta = x - *mu;
                *mu += delta / count;
                *s += delta * (x - *mu);
            }
        }
    }
    let mut degenerate = vec![false; d];
    let std = m2
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let sd = (s / count).sqrt();
            if sd <= MIN_STD {
                degenerate[j] = true;
                log::warn!(
                    "feature {:?} is constant over the fitting rows; std set to 1",
                    dataset.feature_names().get(j).map(String::as_str).unwrap_or("?")
                );
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(Normalizer {
        mean,
        std,
        degenerate,
        fitted_on: rows.to_vec(),
    })
}

impl Normalizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.dim() {
            return Err(Error::shape("normalizer feature count", self.dim(), features.ncols()));
        }
        let mut out = features.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for ((x, mu), sd) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - mu) / sd;
            }
        }
        Ok(out)
    }
}

pub fn apply_normalizer(normalizer: &Normalizer, dataset: &Dataset) -> Result<Dataset> {
    Ok(dataset.with_features(normalizer.transform(dataset.view())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Provenance;
    use ndarray::array;

    fn ds(features: Array2<f64>) -> Dataset {
        let n = features.nrows();
        let names = (0..features.ncols()).map(|j| format!("f{j}")).collect();
        Dataset::new(features, (0..n as i64).collect(), names, Provenance::Synthetic).unwrap()
    }

    #[test]
    fn standardized_data_passes_through() {
        let x = array![[-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [1.0, 1.0]];
        let norm = fit_normalizer(&ds(x.clone()), &[0..4]).unwrap();
        assert_eq!(norm.mean, vec![0.0, 0.0]);
        assert_eq!(norm.std, vec![1.0, 1.0]);
        assert_eq!(norm.transform(x.view()).unwrap(), x);
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let x = array![[3.0, 1.0], [3.0, 2.0], [3.0, 5.0]];
        let data = ds(x);
        let norm = fit_normalizer(&data, &[0..3]).unwrap();
        assert_eq!(norm.degenerate, vec![true, false]);
        assert_eq!(norm.std[0], 1.0);
        let z = apply_normalizer(&norm, &data).unwrap();
        assert!(z.features().column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_pass_oracle_agreement() {
        let x = Array2::from_shape_fn((50, 3), |(i, j)| ((i * 13 + j * 7) as f64 * 0.61).sin() * (j + 1) as f64 * 100.0 + 5e3);
        let data = ds(x.clone());
        let ranges = [0..10, 30..50];
        let norm = fit_normalizer(&data, &ranges).unwrap();
        let rows: Vec<usize> = (0..10).chain(30..50).collect();
        for j in 0..3 {
            let vals: Vec<f64> = rows.iter().map(|&i| x[[i, j]]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((norm.mean[j] - mean).abs() < 1e-9, "mean {j}");
            assert!((norm.std[j] - var.sqrt()).abs() < 1e-9, "std {j}");
        }
        assert_eq!(norm.fitted_on, ranges.to_vec());
    }

    #[test]
    fn rejects_empty_or_out_of_range_rows() {
        let data = ds(array![[1.0], [2.0]]);
        assert!(fit_normalizer(&data, &[]).is_err());
        assert!(fit_normalizer(&data, &[1..1]).is_err());
        assert!(fit_normalizer(&data, &[0..3]).is_err());
    }
}
