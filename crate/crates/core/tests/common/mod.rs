//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls the crate's smoothing or solver code: losses are
//! recomputed from their integral definitions, minimisers by brute force.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transqr::{CoefVector, Dataset, Kernel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Maclaurin series of erf; accurate to ~1e-16 for |x| <= 3.
pub fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        let add = term / (2 * n + 1) as f64;
        sum += add;
        if add.abs() < 1e-18 {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

/// Continued fraction for erfc, evaluated backwards; good for x >= 2.
pub fn erfc_continued_fraction(x: f64) -> f64 {
    let mut t = x;
    for k in (1..=300).rev() {
        t = x + (k as f64 / 2.0) / t;
    }
    (-x * x).exp() / (std::f64::consts::PI.sqrt() * t)
}

/// Standard normal CDF: erf series in the centre, continued fraction in the tails.
pub fn normal_cdf_series(t: f64) -> f64 {
    let x = t / std::f64::consts::SQRT_2;
    if x.abs() < 2.0 {
        0.5 * (1.0 + erf_series(x))
    } else if x > 0.0 {
        1.0 - 0.5 * erfc_continued_fraction(x)
    } else {
        0.5 * erfc_continued_fraction(-x)
    }
}

pub fn normal_density(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adapt(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adapt(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adapt(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adapt(f, a, b, fa, fm, fb, whole, tol, 50)
}

pub fn check(r: f64, tau: f64) -> f64 {
    r * (tau - if r <= 0.0 { 1.0 } else { 0.0 })
}

/// `E[check(r + h V)]` with `V` distributed by the kernel, by quadrature on
/// unit panels with an extra break at the kink `v = -r/h`.
pub fn smoothed_loss_quadrature(kernel: Kernel, tau: f64, h: f64, r: f64) -> f64 {
    let (lo, hi, dens): (f64, f64, Box<dyn Fn(f64) -> f64>) = match kernel {
        Kernel::Gaussian => (-40.0, 40.0, Box::new(normal_density)),
        Kernel::Uniform => (-1.0, 1.0, Box::new(|_| 0.5)),
    };
    let f = |v: f64| check(r + h * v, tau) * dens(v);
    let kink = -r / h;
    let mut breaks: Vec<f64> = (0..)
        .map(|i| lo + 0.5 * i as f64)
        .take_while(|&v| v < hi)
        .collect();
    breaks.push(hi);
    if kink > lo && kink < hi {
        breaks.push(kink);
        breaks.sort_by(f64::total_cmp);
    }
    breaks
        .windows(2)
        .map(|w| integrate(&f, w[0], w[1], 1e-15))
        .sum()
}

/// Golden-section minimisation of a unimodal function on `[a, b]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Student t(3) CDF in closed form.
pub fn t3_cdf(t: f64) -> f64 {
    let s3 = 3f64.sqrt();
    0.5 + (t / (s3 * (1.0 + t * t / 3.0)) + (t / s3).atan()) / std::f64::consts::PI
}

/// Quantile of an increasing CDF by bisection.
pub fn bisect_quantile(cdf: impl Fn(f64) -> f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (-100.0, 100.0);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if cdf(m) < p {
            lo = m;
        } else {
            hi = m;
        }
    }
    0.5 * (lo + hi)
}

/// Smoothed objective from the quadrature definition: mean over rows.
pub fn objective_by_quadrature(
    kernel: Kernel,
    tau: f64,
    h: f64,
    w: &CoefVector,
    data: &Dataset,
) -> f64 {
    let n = data.n();
    (0..n)
        .map(|i| {
            let r = data.y()[i] - w.intercept - data.x().row(i).dot(&w.slopes);
            smoothed_loss_quadrature(kernel, tau, h, r)
        })
        .sum::<f64>()
        / n as f64
}

/// Smoothed objective from the closed forms, written out independently.
pub fn objective_closed_form(
    kernel: Kernel,
    tau: f64,
    h: f64,
    w: &CoefVector,
    data: &Dataset,
) -> f64 {
    let n = data.n();
    (0..n)
        .map(|i| {
            let r = data.y()[i] - w.intercept - data.x().row(i).dot(&w.slopes);
            match kernel {
                Kernel::Gaussian => {
                    r * (tau - normal_cdf_series(-r / h)) + h * normal_density(r / h)
                }
                Kernel::Uniform => {
                    if r.abs() >= h {
                        check(r, tau)
                    } else {
                        tau * r + (r - h).powi(2) / (4.0 * h)
                    }
                }
            }
        })
        .sum::<f64>()
        / n as f64
}

/// Penalized objective with an unpenalized intercept.
pub fn penalized(
    kernel: Kernel,
    tau: f64,
    h: f64,
    lambda: f64,
    w: &CoefVector,
    data: &Dataset,
) -> f64 {
    objective_closed_form(kernel, tau, h, w, data)
        + lambda * w.slopes.iter().map(|v| v.abs()).sum::<f64>()
}

/// Brute-force minimiser over a regular grid with spacing `step` in every
/// coordinate, centred on `centre` and `half_width` steps wide; the grid is
/// re-centred until the minimiser is interior.
pub fn grid_search(
    f: impl Fn(&[f64]) -> f64,
    centre: &[f64],
    step: f64,
    half_width: i64,
) -> Vec<f64> {
    let d = centre.len();
    let mut c: Vec<f64> = centre.iter().map(|v| (v / step).round() * step).collect();
    for _ in 0..50 {
        let side = (2 * half_width + 1) as usize;
        let total = side.pow(d as u32);
        let mut best = (f64::INFINITY, vec![0i64; d]);
        let mut point = vec![0.0; d];
        for idx in 0..total {
            let mut rem = idx;
            let mut off = vec![0i64; d];
            for k in 0..d {
                off[k] = (rem % side) as i64 - half_width;
                rem /= side;
                point[k] = c[k] + off[k] as f64 * step;
            }
            let v = f(&point);
            if v < best.0 {
                best = (v, off);
            }
        }
        let interior = best.1.iter().all(|o| o.abs() < half_width);
        for k in 0..d {
            c[k] += best.1[k] as f64 * step;
        }
        if interior {
            return c;
        }
    }
    panic!("grid search did not settle");
}

/// Gaussian design with independent columns and a sparse linear signal.
pub fn random_study(seed: u64, n: usize, p: usize, signal: &[f64], noise: f64) -> Dataset {
    let mut r = rng(seed);
    let x = Array2::from_shape_fn((n, p), |_| gauss(&mut r));
    let y = Array1::from_shape_fn(n, |i| {
        0.3 + signal
            .iter()
            .enumerate()
            .map(|(j, b)| b * x[[i, j]])
            .sum::<f64>()
            + noise * gauss(&mut r)
    });
    Dataset::new(x, y, 0).unwrap()
}

/// Box-Muller normal, independent of the crate's inverse-CDF sampler.
pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = r.random::<f64>().max(1e-300);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
