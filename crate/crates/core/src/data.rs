//! Shared data model and the non-smoothed check loss.

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// A quantile level strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(Error::InvalidParameter(format!(
                "quantile level must lie in (0, 1), got {tau}"
            )))
        }
    }

    /// The median.
    pub fn median() -> Self {
        Self(0.5)
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Intercept plus slope coefficients of a linear quantile model.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefVector {
    pub intercept: f64,
    pub slopes: Array1<f64>,
}

impl CoefVector {
    pub fn new(intercept: f64, slopes: Array1<f64>) -> Self {
        Self { intercept, slopes }
    }

    pub fn zeros(p: usize) -> Self {
        Self {
            intercept: 0.0,
            slopes: Array1::zeros(p),
        }
    }

    /// Number of slopes.
    pub fn p(&self) -> usize {
        self.slopes.len()
    }

    /// `intercept + x * slopes` for every row of `x`.
    pub fn predict(&self, x: &Array2<f64>) -> Array1<f64> {
        let mut out = x.dot(&self.slopes);
        out += self.intercept;
        out
    }

    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        self.intercept + row.dot(&self.slopes)
    }

    /// Flattened `[intercept, slopes...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.p() + 1);
        v.push(self.intercept);
        v.extend(self.slopes.iter().copied());
        v
    }

    /// Inverse of [`CoefVector::to_vec`].
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v.split_first() {
            Some((&b0, rest)) => Ok(Self::new(b0, Array1::from(rest.to_vec()))),
            None => Err(Error::DimensionMismatch(
                "coefficient vector needs at least an intercept".into(),
            )),
        }
    }

    /// Coordinatewise sum.
    pub fn add(&self, other: &CoefVector) -> CoefVector {
        CoefVector {
            intercept: self.intercept + other.intercept,
            slopes: &self.slopes + &other.slopes,
        }
    }

    /// Coordinatewise difference.
    pub fn sub(&self, other: &CoefVector) -> CoefVector {
        CoefVector {
            intercept: self.intercept - other.intercept,
            slopes: &self.slopes - &other.slopes,
        }
    }

    /// Sup-norm over intercept and slopes.
    pub fn max_abs(&self) -> f64 {
        self.slopes
            .iter()
            .fold(self.intercept.abs(), |m, v| m.max(v.abs()))
    }

    /// Indices of nonzero slopes.
    pub fn support(&self) -> Vec<usize> {
        self.slopes
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.slopes.iter().all(|v| v.is_finite())
    }

    /// Squared Euclidean distance between slope vectors.
    pub fn slope_sq_dist(&self, other: &CoefVector) -> f64 {
        self.slopes
            .iter()
            .zip(other.slopes.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum()
    }
}

/// One study: covariates, responses, and a per-row site label
/// (0 is the target, 1..K are sources).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    sites: Vec<usize>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>, site_id: usize) -> Result<Self> {
        let n = y.len();
        Self::with_sites(x, y, vec![site_id; n])
    }

    /// Builds a dataset whose rows may carry different site labels.
    pub fn with_sites(x: Array2<f64>, y: Array1<f64>, sites: Vec<usize>) -> Result<Self> {
        let (n, p) = x.dim();
        if n == 0 || p == 0 {
            return Err(Error::InvalidData(format!(
                "dataset needs n >= 1 and p >= 1, got n={n}, p={p}"
            )));
        }
        if y.len() != n || sites.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "x has {n} rows but y has {} and site labels {}",
                y.len(),
                sites.len()
            )));
        }
        if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite covariate at row {i}, column {j}"
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite response at row {i}"
            )));
        }
        Ok(Self { x, y, sites })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    /// Per-row site labels.
    pub fn site_ids(&self) -> &[usize] {
        &self.sites
    }

    /// The common site label, if every row shares one.
    pub fn site_id(&self) -> Option<usize> {
        let first = self.sites[0];
        self.sites.iter().all(|&s| s == first).then_some(first)
    }

    /// Relabels every row with `site_id`.
    pub fn relabel(mut self, site_id: usize) -> Self {
        self.sites.iter_mut().for_each(|s| *s = site_id);
        self
    }

    /// Rows at `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        if idx.is_empty() {
            return Err(Error::InvalidData("empty row subset".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(Error::DimensionMismatch(format!(
                "row index {bad} out of range for n={}",
                self.n()
            )));
        }
        Ok(Dataset {
            x: self.x.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
            sites: idx.iter().map(|&i| self.sites[i]).collect(),
        })
    }

    /// Same covariates, new responses.
    pub fn with_response(&self, y: Array1<f64>) -> Result<Dataset> {
        Dataset::with_sites(self.x.clone(), y, self.sites.clone())
    }

    /// Residuals `y - intercept - x * slopes`.
    pub fn residuals(&self, w: &CoefVector) -> Result<Array1<f64>> {
        self.check_coef(w)?;
        Ok(&self.y - &w.predict(&self.x))
    }

    pub(crate) fn check_coef(&self, w: &CoefVector) -> Result<()> {
        if w.p() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient vector has {} slopes but data has p={}",
                w.p(),
                self.p()
            )));
        }
        Ok(())
    }

    /// Splits a pooled dataset back into per-site datasets, ascending by label.
    pub fn split_by_site(&self) -> Vec<Dataset> {
        let mut labels: Vec<usize> = self.sites.clone();
        labels.sort_unstable();
        labels.dedup();
        labels
            .into_iter()
            .map(|site| {
                let idx: Vec<usize> = (0..self.n()).filter(|&i| self.sites[i] == site).collect();
                self.subset(&idx).expect("non-empty by construction")
            })
            .collect()
    }
}

/// Check (pinball) loss `r * (tau - 1{r <= 0})`.
#[inline]
pub fn check_loss(r: f64, tau: QuantileLevel) -> f64 {
    let t = tau.value();
    if r > 0.0 {
        t * r
    } else {
        (t - 1.0) * r
    }
}

/// Mean check loss of `w` over the rows of `data`.
pub fn empirical_check_loss(w: &CoefVector, data: &Dataset, tau: QuantileLevel) -> Result<f64> {
    let r = data.residuals(w)?;
    Ok(r.iter().map(|&ri| check_loss(ri, tau)).sum::<f64>() / data.n() as f64)
}

/// Row-concatenates datasets: sources in ascending site label, target rows last.
///
/// The sort is stable, so datasets sharing a label keep their input order.
/// Every row gets equal weight in the pooled objective.
pub fn pool_datasets(datasets: &[&Dataset]) -> Result<Dataset> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::InvalidData("cannot pool an empty list of datasets".into()))?;
    let p = first.p();
    if let Some(bad) = datasets.iter().find(|d| d.p() != p) {
        return Err(Error::DimensionMismatch(format!(
            "cannot pool datasets with p={p} and p={}",
            bad.p()
        )));
    }
    let mut ordered: Vec<&Dataset> = datasets.to_vec();
    // target (label 0) sorts after every source
    ordered.sort_by_key(|d| match d.sites[0] {
        0 => usize::MAX,
        s => s,
    });
    if ordered.len() == 1 {
        return Ok(ordered[0].clone());
    }
    let xs: Vec<_> = ordered.iter().map(|d| d.x.view()).collect();
    let ys: Vec<_> = ordered.iter().map(|d| d.y.view()).collect();
    let x = concatenate(Axis(0), &xs).expect("column counts checked");
    let y = concatenate(Axis(0), &ys).expect("1-d concatenation");
    let sites = ordered
        .iter()
        .flat_map(|d| d.sites.iter().copied())
        .collect();
    Ok(Dataset { x, y, sites })
}

/// Empirical tau-quantile of `values` (inverse of the empirical CDF).
pub fn empirical_quantile(values: &[f64], tau: QuantileLevel) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((n as f64 * tau.value()).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn tau(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(0.0, tau(0.5)), 0.0);
        assert_eq!(check_loss(1.0, tau(0.5)), 0.5);
        assert!((check_loss(-1.0, tau(0.2)) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn quantile_level_bounds() {
        assert!(QuantileLevel::new(0.0).is_err());
        assert!(QuantileLevel::new(1.0).is_err());
        assert!(QuantileLevel::new(f64::NAN).is_err());
        assert!(QuantileLevel::new(0.3).is_ok());
    }

    #[test]
    fn empirical_loss_examples() {
        let x = array![[1.0], [2.0]];
        let truth = CoefVector::new(0.5, array![2.0]);
        let y = truth.predict(&x);
        let d = Dataset::new(x.clone(), y.clone(), 0).unwrap();
        assert_eq!(empirical_check_loss(&truth, &d, tau(0.5)).unwrap(), 0.0);

        let d2 = Dataset::new(x, &y + &array![1.0, -1.0], 0).unwrap();
        assert!((empirical_check_loss(&truth, &d2, tau(0.5)).unwrap() - 0.5).abs() < 1e-15);

        let d3 = Dataset::new(array![[0.0]], array![2.0], 0).unwrap();
        let zero = CoefVector::zeros(1);
        assert!((empirical_check_loss(&zero, &d3, tau(0.2)).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn empirical_loss_dimension_mismatch() {
        let d = Dataset::new(array![[1.0, 2.0]], array![0.0], 0).unwrap();
        let w = CoefVector::zeros(3);
        assert!(matches!(
            empirical_check_loss(&w, &d, tau(0.5)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn dataset_rejects_bad_input() {
        assert!(Dataset::new(array![[f64::NAN]], array![0.0], 0).is_err());
        assert!(Dataset::new(array![[1.0]], array![f64::INFINITY], 0).is_err());
        assert!(Dataset::new(array![[1.0], [2.0]], array![0.0], 0).is_err());
        assert!(Dataset::new(Array2::zeros((0, 2)), Array1::zeros(0), 0).is_err());
    }

    fn ds(n: usize, p: usize, site: usize, offset: f64) -> Dataset {
        let x = Array2::from_shape_fn((n, p), |(i, j)| offset + (i * p + j) as f64);
        let y = Array1::from_shape_fn(n, |i| offset - i as f64);
        Dataset::new(x, y, site).unwrap()
    }

    #[test]
    fn pool_examples() {
        let t = ds(3, 2, 0, 0.0);
        assert_eq!(pool_datasets(&[&t]).unwrap(), t);

        let s = ds(5, 2, 1, 100.0);
        let pooled = pool_datasets(&[&t, &s]).unwrap();
        assert_eq!(pooled.n(), 8);
        // sources first, target last
        assert_eq!(pooled.site_ids()[..5], [1; 5]);
        assert_eq!(pooled.site_ids()[5..], [0; 3]);

        let parts = pooled.split_by_site();
        assert_eq!(parts[0], t);
        assert_eq!(parts[1], s);
    }

    #[test]
    fn pool_orders_sources_ascending() {
        let t = ds(2, 1, 0, 0.0);
        let s2 = ds(2, 1, 2, 20.0);
        let s1 = ds(2, 1, 1, 10.0);
        let pooled = pool_datasets(&[&t, &s2, &s1]).unwrap();
        assert_eq!(pooled.site_ids(), &[1, 1, 2, 2, 0, 0]);
    }

    #[test]
    fn pool_rejects_mismatched_p() {
        let a = ds(2, 1, 0, 0.0);
        let b = ds(2, 2, 1, 0.0);
        assert!(matches!(
            pool_datasets(&[&a, &b]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(pool_datasets(&[]).is_err());
    }

    #[test]
    fn empirical_quantile_picks_order_statistic() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(empirical_quantile(&v, tau(0.5)), 3.0);
        assert_eq!(empirical_quantile(&v, tau(0.2)), 1.0);
        assert_eq!(empirical_quantile(&v, tau(0.99)), 5.0);
    }

    proptest! {
        #[test]
        fn check_loss_identity(r in -1e3f64..1e3, t in 0.001f64..0.999) {
            let q = tau(t);
            let expected = t * r.max(0.0) + (1.0 - t) * (-r).max(0.0);
            prop_assert!((check_loss(r, q) - expected).abs() <= 1e-12 * (1.0 + r.abs()));
            prop_assert!(check_loss(r, q) >= 0.0);
        }

        #[test]
        fn check_loss_convex(r1 in -100f64..100.0, r2 in -100f64..100.0, lam in 0f64..=1.0, t in 0.01f64..0.99) {
            let q = tau(t);
            let mid = check_loss(lam * r1 + (1.0 - lam) * r2, q);
            let chord = lam * check_loss(r1, q) + (1.0 - lam) * check_loss(r2, q);
            prop_assert!(mid <= chord + 1e-9);
        }

        #[test]
        fn empirical_loss_permutation_invariant(seed in any::<u64>(), n in 2usize..30) {
            let mut rng = crate::rng::seeded(seed);
            let x = Array2::from_shape_fn((n, 3), |_| crate::rng::standard_normal(&mut rng));
            let y = Array1::from_shape_fn(n, |_| crate::rng::standard_normal(&mut rng));
            let d = Dataset::new(x, y, 0).unwrap();
            let perm = crate::rng::permutation(&mut rng, n);
            let dp = d.subset(&perm).unwrap();
            let w = CoefVector::new(0.3, ndarray::array![0.1, -0.2, 0.5]);
            let a = empirical_check_loss(&w, &d, tau(0.3)).unwrap();
            let b = empirical_check_loss(&w, &dp, tau(0.3)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
