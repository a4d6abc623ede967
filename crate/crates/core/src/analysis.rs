//! Fits applied to Monte Carlo traces.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, libm::sqrt(var / n as f64))
}

/// Ordinary least squares `y ≈ a + b x`; returns `(a, b)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Mean over the final 20% of the series (at least one point).
pub fn plateau(values: &[f64]) -> f64 {
    let k = libm::ceil(values.len() as f64 * 0.2).max(1.0) as usize;
    let tail = &values[values.len() - k.min(values.len())..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Exponential rate `b` in `a e^{−bt} + plateau`.
    pub rate: f64,
    pub plateau: f64,
    pub n_points: usize,
}

/// Fits `values ≈ a e^{−rate·t} + plateau` where the plateau is the mean of
/// the final 20% of the series and the rate is the negated least-squares
/// slope of `log(value − plateau)` over the points with `t` in `window`.
pub fn fit_decay(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    if times.len() != values.len() || times.is_empty() {
        return Err(Error::SizeMismatch { left: times.len(), right: values.len() });
    }
    let level = plateau(values);
    let (lo, hi) = window;
    let (ts, vs): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= lo && **t <= hi)
        .map(|(t, v)| (*t, *v))
        .unzip();
    if ts.len() < 4 {
        return Err(Error::FitDegenerate(alloc::format!(
            "{} points in the window, need at least 4",
            ts.len()
        )));
    }
    let flat_tol = 1e-12 * level.abs().max(1.0);
    if vs.iter().all(|v| (v - level).abs() <= flat_tol) {
        return Ok(DecayFit { rate: 0.0, plateau: level, n_points: ts.len() });
    }
    let mut logs = Vec::with_capacity(vs.len());
    for (t, v) in ts.iter().zip(&vs) {
        let excess = v - level;
        if !(excess > 0.0) {
            return Err(Error::FitDegenerate(alloc::format!(
                "value {v} at t = {t} is not above the plateau {level}"
            )));
        }
        logs.push(libm::log(excess));
    }
    let (_, slope) = linear_fit(&ts, &logs);
    Ok(DecayFit { rate: -slope, plateau: level, n_points: ts.len() })
}

/// Slope of `log(value)` against `log(param)`; needs at least three
/// positive points.
pub fn loglog_slope(params: &[f64], values: &[f64]) -> Result<f64> {
    if params.len() != values.len() {
        return Err(Error::SizeMismatch { left: params.len(), right: values.len() });
    }
    if params.len() < 3 {
        return Err(Error::invalid("a log-log slope needs at least three points"));
    }
    if params.iter().chain(values).any(|v| !(*v > 0.0)) {
        return Err(Error::FitDegenerate("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = params.iter().map(|v| libm::log(*v)).collect();
    let ly: Vec<f64> = values.iter().map(|v| libm::log(*v)).collect();
    Ok(linear_fit(&lx, &ly).1)
}
