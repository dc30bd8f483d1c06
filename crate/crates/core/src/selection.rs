//! Bandwidth defaults, lambda grids, cross-validation and BIC.

use crate::data::{check_loss, CoefVector, Dataset, QuantileLevel};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{permutation, seeded};
use crate::smoothing::{kernel_cdf, Bandwidth};
use crate::solver::{fit_l1_sqr, intercept_only_fit, FitConfig, SqrFit};

/// Lambda grid and fold settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub grid_size: usize,
    /// Smallest grid value as a fraction of `lambda_max`.
    pub grid_min_ratio: f64,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            grid_size: 50,
            grid_min_ratio: 0.01,
            seed: 0,
        }
    }
}

impl CvConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.folds < 2 || self.folds > n {
            return Err(Error::InvalidParameter(format!(
                "need 2 <= folds <= n, got folds={} with n={n}",
                self.folds
            )));
        }
        if self.grid_size == 0 {
            return Err(Error::InvalidParameter(
                "grid_size must be at least 1".into(),
            ));
        }
        if !(self.grid_min_ratio > 0.0 && self.grid_min_ratio <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "grid_min_ratio must lie in (0, 1], got {}",
                self.grid_min_ratio
            )));
        }
        Ok(())
    }
}

/// `max{0.05, sqrt(tau(1-tau)) (log p / n)^(1/4)}`.
pub fn default_bandwidth(tau: QuantileLevel, n: usize, p: usize) -> Bandwidth {
    let t = tau.value();
    let rate = ((p.max(1) as f64).ln() / n.max(1) as f64).powf(0.25);
    Bandwidth::new(((t * (1.0 - t)).sqrt() * rate).max(0.05)).expect("floored at 0.05")
}

/// Sup-norm of the slope gradient at the intercept-only smoothed fit: the
/// smallest lambda whose solution has all slopes at zero.
pub fn lambda_max(data: &Dataset, cfg: &FitConfig) -> f64 {
    let b = intercept_only_fit(data, cfg.kernel, cfg.tau, cfg.h);
    let h = cfg.h.value();
    let n = data.n() as f64;
    let weights = data
        .y()
        .mapv(|yi| (kernel_cdf(cfg.kernel, (b - yi) / h) - cfg.tau.value()) / n);
    data.x()
        .t()
        .dot(&weights)
        .iter()
        .fold(0.0, |m, v| m.max(v.abs()))
}

/// Log-spaced grid from `lambda_max` down to `grid_min_ratio * lambda_max`.
///
/// A constant response gives the single-element grid `[0]`.
pub fn lambda_grid(data: &Dataset, cfg: &FitConfig, cv: &CvConfig) -> Vec<f64> {
    let y = data.y();
    if y.iter().all(|&v| v == y[0]) {
        return vec![0.0];
    }
    let top = lambda_max(data, cfg);
    if !(top > f64::EPSILON) {
        return vec![0.0];
    }
    let m = cv.grid_size;
    if m == 1 {
        return vec![top];
    }
    let log_ratio = cv.grid_min_ratio.ln();
    (0..m)
        .map(|i| {
            if i == 0 {
                top
            } else if i == m - 1 {
                top * cv.grid_min_ratio
            } else {
                top * (log_ratio * i as f64 / (m - 1) as f64).exp()
            }
        })
        .collect()
}

/// Fits along `grid` (largest first), warm-starting each fit from the last.
pub fn fit_path(data: &Dataset, cfg: &FitConfig, grid: &[f64]) -> Result<Vec<SqrFit>> {
    let mut fits: Vec<SqrFit> = Vec::with_capacity(grid.len());
    for (index, &lambda) in grid.iter().enumerate() {
        let warm = fits.last().map(|f| f.coef.clone());
        let fit =
            fit_l1_sqr(data, &cfg.clone().with_lambda(lambda), warm.as_ref()).map_err(|e| {
                Error::GridFit {
                    index,
                    source: Box::new(e),
                }
            })?;
        fits.push(fit);
    }
    Ok(fits)
}

/// Outcome of a lambda search.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub lambda: f64,
    pub index: usize,
    pub grid: Vec<f64>,
    /// Criterion value per grid point (mean validation check loss, or BIC).
    pub curve: Vec<f64>,
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
        )
        .0
}

/// Fold label of every row: a seeded permutation dealt round-robin.
pub fn fold_labels(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let perm = permutation(&mut seeded(seed), n);
    let mut labels = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        labels[row] = pos % folds;
    }
    labels
}

fn mean_check_loss(w: &CoefVector, data: &Dataset, tau: QuantileLevel) -> f64 {
    let pred = w.predict(data.x());
    data.y()
        .iter()
        .zip(pred.iter())
        .map(|(y, f)| check_loss(y - f, tau))
        .sum::<f64>()
        / data.n() as f64
}

/// K-fold cross-validation over `grid` with explicit fold labels.
///
/// The criterion is the plain check loss on each held-out fold, averaged
/// over folds.
pub fn cv_select_with_folds(
    data: &Dataset,
    cfg: &FitConfig,
    grid: &[f64],
    labels: &[usize],
    folds: usize,
) -> Result<Selection> {
    if labels.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} fold labels for {} rows",
            labels.len(),
            data.n()
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    if grid.len() == 1 {
        return Ok(Selection {
            lambda: grid[0],
            index: 0,
            grid: grid.to_vec(),
            curve: vec![f64::NAN],
        });
    }
    let per_fold: Vec<Result<Vec<f64>>> = par::map_range(folds, |fold| {
        let (val_idx, train_idx): (Vec<usize>, Vec<usize>) =
            (0..data.n()).partition(|&i| labels[i] == fold);
        if val_idx.is_empty() {
            return Err(Error::InvalidParameter(format!("fold {fold} is empty")));
        }
        let train = data.subset(&train_idx)?;
        let val = data.subset(&val_idx)?;
        let fits = fit_path(&train, cfg, grid)?;
        Ok(fits
            .iter()
            .map(|f| mean_check_loss(&f.coef, &val, cfg.tau))
            .collect())
    });
    let mut curve = vec![0.0; grid.len()];
    for losses in per_fold {
        for (c, l) in curve.iter_mut().zip(losses?) {
            *c += l / folds as f64;
        }
    }
    let index = argmin(&curve);
    Ok(Selection {
        lambda: grid[index],
        index,
        grid: grid.to_vec(),
        curve,
    })
}

/// Seeded K-fold cross-validation over the default grid.
pub fn cv_select(data: &Dataset, cfg: &FitConfig, cv: &CvConfig) -> Result<Selection> {
    cv.validate(data.n())?;
    let grid = lambda_grid(data, cfg, cv);
    let labels = fold_labels(data.n(), cv.folds, cv.seed);
    cv_select_with_folds(data, cfg, &grid, &labels, cv.folds)
}

/// `log(sum rho_tau(r_i)) + |active| log(n) log(p) / (2n)`.
pub fn bic_value(fit: &CoefVector, data: &Dataset, tau: QuantileLevel) -> f64 {
    let n = data.n() as f64;
    let total = mean_check_loss(fit, data, tau) * n;
    let active = fit.slopes.iter().filter(|v| **v != 0.0).count() as f64;
    total.max(f64::MIN_POSITIVE).ln() + active * n.ln() * (data.p() as f64).ln() / (2.0 * n)
}

/// BIC over `grid`.
pub fn bic_select_on_grid(data: &Dataset, cfg: &FitConfig, grid: &[f64]) -> Result<Selection> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    let fits = fit_path(data, cfg, grid)?;
    let curve: Vec<f64> = fits
        .iter()
        .map(|f| bic_value(&f.coef, data, cfg.tau))
        .collect();
    let index = argmin(&curve);
    Ok(Selection {
        lambda: grid[index],
        index,
        grid: grid.to_vec(),
        curve,
    })
}

/// BIC over the default grid.
pub fn bic_select(data: &Dataset, cfg: &FitConfig, cv: &CvConfig) -> Result<Selection> {
    cv.validate(data.n())?;
    let grid = lambda_grid(data, cfg, cv);
    bic_select_on_grid(data, cfg, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;
    use ndarray::{Array1, Array2};

    fn tau(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    #[test]
    fn bandwidth_examples() {
        let h = default_bandwidth(tau(0.5), 950, 500).value();
        assert!((h - 0.142).abs() < 0.001, "{h}");
        assert_eq!(default_bandwidth(tau(0.5), 1_000_000_000, 2).value(), 0.05);
        let h = default_bandwidth(tau(0.5), 150, 500).value();
        assert!((h - 0.2256).abs() < 1e-4, "{h}");
        assert_eq!(default_bandwidth(tau(0.5), 100, 1).value(), 0.05);
    }

    #[test]
    fn bandwidth_monotone_in_n_and_p() {
        for t in [0.2, 0.5, 0.8] {
            let mut prev = f64::INFINITY;
            for n in [10, 50, 100, 1000, 10_000, 1_000_000] {
                let h = default_bandwidth(tau(t), n, 200).value();
                assert!(h <= prev);
                assert!(h >= 0.05);
                prev = h;
            }
            let mut prev = 0.0;
            for p in [1, 2, 10, 100, 10_000] {
                let h = default_bandwidth(tau(t), 300, p).value();
                assert!(h >= prev);
                prev = h;
            }
        }
    }

    fn sample(seed: u64, n: usize, p: usize, noise: f64) -> (Dataset, Vec<f64>) {
        let mut rng = seeded(seed);
        let mut beta = vec![0.0; p];
        for (j, v) in [(0, 1.5), (3, -1.0), (7, 2.0)] {
            if j < p {
                beta[j] = v;
            }
        }
        let x = Array2::from_shape_fn((n, p), |_| standard_normal(&mut rng));
        let y = Array1::from_shape_fn(n, |i| {
            0.5 + (0..p).map(|j| beta[j] * x[[i, j]]).sum::<f64>()
                + noise * standard_normal(&mut rng)
        });
        (Dataset::new(x, y, 0).unwrap(), beta)
    }

    fn cfg() -> FitConfig {
        FitConfig::new(tau(0.5), Bandwidth::new(0.2).unwrap(), 0.0)
    }

    #[test]
    fn constant_response_grid() {
        let d = Dataset::new(Array2::ones((10, 3)), Array1::from_elem(10, 2.0), 0).unwrap();
        assert_eq!(lambda_grid(&d, &cfg(), &CvConfig::default()), vec![0.0]);
    }

    #[test]
    fn grid_endpoints_and_top_fit() {
        let (d, _) = sample(1, 100, 10, 1.0);
        let grid = lambda_grid(&d, &cfg(), &CvConfig::default());
        assert_eq!(grid.len(), 50);
        let top = lambda_max(&d, &cfg());
        assert_eq!(grid[0], top);
        assert!((grid[49] - 0.01 * top).abs() <= 1e-15 * top);
        assert!(grid.windows(2).all(|w| w[0] > w[1]));
        let fit = fit_l1_sqr(&d, &cfg().with_lambda(grid[0]), None).unwrap();
        assert!(fit.coef.slopes.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_element_grid_is_returned() {
        let (d, _) = sample(2, 60, 5, 1.0);
        let cv = CvConfig {
            grid_size: 1,
            ..CvConfig::default()
        };
        let s = cv_select(&d, &cfg(), &cv).unwrap();
        assert_eq!(s.lambda, lambda_max(&d, &cfg()));
        let b = bic_select(&d, &cfg(), &cv).unwrap();
        assert_eq!(b.lambda, s.lambda);
    }

    #[test]
    fn fold_labels_balanced_and_deterministic() {
        let l = fold_labels(23, 5, 9);
        assert_eq!(l, fold_labels(23, 5, 9));
        for f in 0..5 {
            let c = l.iter().filter(|&&v| v == f).count();
            assert!(c == 4 || c == 5);
        }
    }

    #[test]
    fn cv_rejects_too_many_folds() {
        let (d, _) = sample(3, 4, 3, 1.0);
        let cv = CvConfig {
            folds: 5,
            ..CvConfig::default()
        };
        assert!(cv_select(&d, &cfg(), &cv).is_err());
    }

    #[test]
    fn cv_recovers_support_without_noise() {
        let (d, beta) = sample(4, 200, 20, 0.0);
        let cv = CvConfig::default().with_seed(17);
        let c = cfg();
        let s = cv_select(&d, &c, &cv).unwrap();
        let fit = fit_l1_sqr(&d, &c.clone().with_lambda(s.lambda), None).unwrap();
        let support = fit.coef.support();
        for (j, b) in beta.iter().enumerate() {
            if *b != 0.0 {
                assert!(support.contains(&j), "missing {j}: {support:?}");
            }
        }
        assert_eq!(cv_select(&d, &c, &cv).unwrap(), s);
    }

    #[test]
    fn bic_recovers_support_without_noise() {
        let (d, beta) = sample(5, 400, 20, 0.0);
        let c = cfg();
        let s = bic_select(&d, &c, &CvConfig::default()).unwrap();
        let fit = fit_l1_sqr(&d, &c.clone().with_lambda(s.lambda), None).unwrap();
        let support = fit.coef.support();
        for (j, b) in beta.iter().enumerate() {
            if *b != 0.0 {
                assert!(support.contains(&j), "missing {j}: {support:?}");
            }
        }
    }
}
