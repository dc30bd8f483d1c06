//! Opt-in covariate standardization for the CLI.
//!
//! Columns are centred and scaled with statistics from one reference
//! dataset, every dataset in the run is mapped with the same statistics, and
//! fitted coefficients are mapped back to the original scale.

use ndarray::Array1;
use transqr::{CoefVector, Dataset, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    mean: Array1<f64>,
    sd: Array1<f64>,
}

impl Scaler {
    /// Column means and standard deviations of `reference`; a constant
    /// column keeps scale 1.
    pub fn fit(reference: &Dataset) -> Self {
        let x = reference.x();
        let n = x.nrows() as f64;
        let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty dataset");
        let sd = Array1::from_iter(x.columns().into_iter().zip(mean.iter()).map(|(col, &m)| {
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0).max(1.0);
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        }));
        Self { mean, sd }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let mut x = data.x().clone();
        for mut row in x.rows_mut() {
            row -= &self.mean;
            row /= &self.sd;
        }
        Dataset::with_sites(x, data.y().clone(), data.site_ids().to_vec())
    }

    /// Coefficients on the original covariate scale.
    pub fn unscale(&self, w: &CoefVector) -> CoefVector {
        let slopes = &w.slopes / &self.sd;
        let intercept = w.intercept - slopes.dot(&self.mean);
        CoefVector::new(intercept, slopes)
    }
}
