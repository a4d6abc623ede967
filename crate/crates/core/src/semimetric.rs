//! The concave distance function `f` used to measure coupled particles.
//!
//! From the modulus `κ` and the diffusion coefficient `σ`:
//!
//! ```text
//! R₀ = inf{ s ≥ 0  : κ(r) ≥ 0 for all r ≥ s }
//! R₁ = inf{ s ≥ R₀ : s (s − R₀) κ(r) ≥ 8σ² for all r ≥ s }
//! φ(r) = exp(−(1/4σ²) ∫₀ʳ s κ₋(s) ds)        Φ(r) = ∫₀ʳ φ
//! c    = (∫₀^{R₁} Φ/φ)⁻¹                      g(r) = 1 − (c/2) ∫₀^{r∧R₁} Φ/φ
//! f(r) = ∫₀ʳ g φ
//! ```
//!
//! Past `R₁` the function is affine with slope `φ(R₀)/2`.
//!
//! The integrals are tabulated on a piecewise-uniform grid whose breakpoints
//! sit exactly on `R₀` and `R₁` (where `κ₋` and `g′` have kinks) and whose
//! spacing on `[R₀, R₁]` is four times finer. Each segment is integrated with
//! composite Simpson; odd nodes use the matching three-point half-panel rule
//! so that every node carries a fourth-order value.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Bisection target width for `R₀` and `R₁`.
const BISECT_WIDTH: f64 = 1e-12;
/// Scan resolution used to bracket `R₀` and `R₁`.
const SCAN_POINTS: usize = 20_000;

fn bisect(mut bad: f64, mut good: f64, ok: impl Fn(f64) -> bool) -> f64 {
    while (good - bad).abs() > BISECT_WIDTH {
        let mid = 0.5 * (bad + good);
        if ok(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good
}

/// Smallest `s` with `κ ≥ −tol` on `[s, r_max]`, refined by bisection.
pub fn compute_r0<K: Fn(f64) -> f64>(kappa: &K, r_max: f64, tol: f64) -> Result<f64> {
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(Error::invalid("r_max must be positive and finite"));
    }
    if !(kappa(r_max) > 0.0) {
        return Err(Error::HorizonTooSmall(alloc::format!(
            "kappa({r_max}) = {} is not positive",
            kappa(r_max)
        )));
    }
    let h = r_max / SCAN_POINTS as f64;
    let last_bad = (0..=SCAN_POINTS).rev().find(|&k| kappa(k as f64 * h) < -tol);
    match last_bad {
        None => Ok(0.0),
        Some(k) => {
            let lo = k as f64 * h;
            Ok(bisect(lo, lo + h, |r| kappa(r) >= -tol))
        }
    }
}

/// Smallest `s ≥ R₀` with `s (s − R₀) inf_{[s, r_max]} κ ≥ 8σ²`.
pub fn compute_r1<K: Fn(f64) -> f64>(kappa: &K, r0: f64, sigma: f64, r_max: f64) -> Result<f64> {
    if !(r_max > r0) {
        return Err(Error::HorizonTooSmall(alloc::format!(
            "r_max = {r_max} does not exceed R0 = {r0}"
        )));
    }
    let target = 8.0 * sigma * sigma;
    let h = (r_max - r0) / SCAN_POINTS as f64;
    let nodes: Vec<f64> = (0..=SCAN_POINTS).map(|k| r0 + k as f64 * h).collect();
    let mut suffix_min: Vec<f64> = nodes.iter().map(|&r| kappa(r)).collect();
    for k in (0..SCAN_POINTS).rev() {
        suffix_min[k] = suffix_min[k].min(suffix_min[k + 1]);
    }
    let inf_from = |s: f64| -> f64 {
        let idx = (libm::ceil((s - r0) / h).max(0.0) as usize).min(SCAN_POINTS);
        kappa(s).min(suffix_min[idx])
    };
    let ok = |s: f64| s * (s - r0) * inf_from(s) >= target;
    if ok(r0) {
        return Ok(r0);
    }
    let first = (1..=SCAN_POINTS).find(|&k| ok(nodes[k])).ok_or_else(|| {
        Error::HorizonTooSmall(alloc::format!(
            "s (s - R0) kappa never reaches 8 sigma^2 below r_max = {r_max}"
        ))
    })?;
    Ok(bisect(nodes[first - 1], nodes[first], ok))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemimetricOptions {
    /// Tabulation horizon; `max(4 R₁, 20)` when unset.
    pub r_max: Option<f64>,
    /// Number of base panels on `[0, r_max]`.
    pub n_grid: usize,
    /// `κ ≥ −tol` counts as nonnegative when locating `R₀`.
    pub kappa_tol: f64,
}

impl Default for SemimetricOptions {
    fn default() -> Self {
        SemimetricOptions {
            r_max: None,
            n_grid: 4096,
            kappa_tol: 1e-12,
        }
    }
}

/// Tabulated `f` and `f′ = g φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemimetricTable {
    pub r0: f64,
    pub r1: f64,
    pub c: f64,
    pub sigma: f64,
    pub grid: Vec<f64>,
    pub f_vals: Vec<f64>,
    pub f_prime_vals: Vec<f64>,
    pub phi_r0: f64,
    /// `φ(R₀)/2`, the lower equivalence constant.
    pub c_f: f64,
    /// Upper equivalence constant (always 1).
    pub c_f_upper: f64,
    r1_index: usize,
}

/// One uniform piece `[start, start + panels·h]` of the grid.
#[derive(Debug, Clone, Copy)]
struct Segment {
    first: usize,
    panels: usize,
    h: f64,
}

fn even_panels(len: f64, h: f64) -> usize {
    let n = libm::ceil(len / h) as usize;
    (n.max(2) + 1) & !1
}

/// Cumulative integral of nodal values, segment by segment.
fn cumulative(segments: &[Segment], vals: &[f64]) -> Vec<f64> {
    let mut out = alloc::vec![0.0; vals.len()];
    for seg in segments {
        let base = seg.first;
        let w = seg.h / 12.0;
        for k in 0..seg.panels {
            let i = base + k;
            let piece = if k % 2 == 0 {
                w * (5.0 * vals[i] + 8.0 * vals[i + 1] - vals[i + 2])
            } else {
                w * (-vals[i - 1] + 8.0 * vals[i] + 5.0 * vals[i + 1])
            };
            out[i + 1] = out[i] + piece;
        }
    }
    out
}

/// Builds the table for `κ`, `σ`.
pub fn build_semimetric<K: Fn(f64) -> f64>(kappa: &K, sigma: f64, opts: SemimetricOptions) -> Result<SemimetricTable> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be positive"));
    }
    if opts.n_grid < 2 {
        return Err(Error::invalid("n_grid must be at least 2"));
    }
    let (r0, r1) = match opts.r_max {
        Some(h) => {
            let r0 = compute_r0(kappa, h, opts.kappa_tol)?;
            (r0, compute_r1(kappa, r0, sigma, h)?)
        }
        None => locate_radii(kappa, sigma, opts.kappa_tol)?,
    };
    let r_max = opts.r_max.unwrap_or_else(|| (4.0 * r1).max(20.0));
    if !(r_max > r1) {
        return Err(Error::HorizonTooSmall(alloc::format!("r_max = {r_max} must exceed R1 = {r1}")));
    }
    if !(r1 > 0.0) {
        return Err(Error::NumericalFailure("R1 = 0: the contraction constant is infinite".into()));
    }

    let h = r_max / opts.n_grid as f64;
    let mut grid = alloc::vec![0.0];
    let mut segments = Vec::new();
    let mut r1_index = 0;
    for (a, b, refine) in [(0.0, r0, 1.0), (r0, r1, 4.0), (r1, r_max, 1.0)] {
        if b > a {
            let panels = even_panels(b - a, h / refine);
            let step = (b - a) / panels as f64;
            let first = grid.len() - 1;
            for k in 1..panels {
                grid.push(a + k as f64 * step);
            }
            grid.push(b);
            segments.push(Segment { first, panels, h: step });
        }
        if b == r1 {
            r1_index = grid.len() - 1;
        }
    }
    let r0_index = grid.iter().position(|&r| r == r0).unwrap_or(0);
    let inv4s2 = 1.0 / (4.0 * sigma * sigma);

    let neg_part: Vec<f64> = grid.iter().map(|&r| r * (-kappa(r)).max(0.0)).collect();
    let phi: Vec<f64> = cumulative(&segments, &neg_part)
        .into_iter()
        .map(|a| libm::exp(-a * inv4s2))
        .collect();
    let big_phi = cumulative(&segments, &phi);
    let ratio: Vec<f64> = big_phi.iter().zip(&phi).map(|(a, b)| a / b).collect();
    let ratio_int = cumulative(&segments, &ratio);
    let c = 1.0 / ratio_int[r1_index];
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::NumericalFailure(alloc::format!("contraction constant c = {c}")));
    }
    let f_prime_vals: Vec<f64> = (0..grid.len())
        .map(|i| {
            let g = if i >= r1_index {
                0.5
            } else {
                1.0 - 0.5 * c * ratio_int[i]
            };
            g * phi[i]
        })
        .collect();
    let f_vals = cumulative(&segments, &f_prime_vals);
    if f_vals.iter().chain(&f_prime_vals).any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite semimetric table".into()));
    }
    let phi_r0 = phi[r0_index];
    Ok(SemimetricTable {
        r0,
        r1,
        c,
        sigma,
        grid,
        f_vals,
        f_prime_vals,
        phi_r0,
        c_f: 0.5 * phi_r0,
        c_f_upper: 1.0,
        r1_index,
    })
}

/// Grows the search horizon until both radii are found.
fn locate_radii<K: Fn(f64) -> f64>(kappa: &K, sigma: f64, tol: f64) -> Result<(f64, f64)> {
    let mut horizon = 64.0;
    loop {
        let attempt = compute_r0(kappa, horizon, tol)
            .and_then(|r0| compute_r1(kappa, r0, sigma, horizon).map(|r1| (r0, r1)));
        match attempt {
            Ok(radii) => return Ok(radii),
            Err(Error::HorizonTooSmall(msg)) if horizon >= 1e6 => {
                return Err(Error::HorizonTooSmall(msg));
            }
            Err(Error::HorizonTooSmall(_)) => horizon *= 2.0,
            Err(e) => return Err(e),
        }
    }
}

/// Residual report for `f″ − (1/4σ²) r κ f′ + (c/2) f ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    /// Largest residual over the checked nodes (nonpositive when it holds).
    pub max_residual: f64,
    pub r_at_max: f64,
    pub threshold: f64,
    pub n_checked: usize,
    pub passed: bool,
}

impl SemimetricTable {
    pub fn r_max(&self) -> f64 {
        *self.grid.last().expect("grid is nonempty")
    }

    fn interval(&self, r: f64) -> usize {
        let k = self.grid.partition_point(|&g| g <= r);
        k.saturating_sub(1).min(self.grid.len() - 2)
    }

    /// `f(r)` by monotone cubic Hermite interpolation; affine past `r_max`.
    pub fn eval_f(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::invalid(alloc::format!("radius must be nonnegative, got {r}")));
        }
        let r_max = self.r_max();
        if r >= r_max {
            return Ok(self.f_vals[self.f_vals.len() - 1] + 0.5 * self.phi_r0 * (r - r_max));
        }
        let k = self.interval(r);
        let (x0, x1) = (self.grid[k], self.grid[k + 1]);
        let (y0, y1) = (self.f_vals[k], self.f_vals[k + 1]);
        let h = x1 - x0;
        let secant = (y1 - y0) / h;
        let (mut m0, mut m1) = (self.f_prime_vals[k], self.f_prime_vals[k + 1]);
        if secant <= 0.0 {
            m0 = 0.0;
            m1 = 0.0;
        } else {
            // Fritsch–Carlson limiter.
            let (a, b) = (m0 / secant, m1 / secant);
            let s = a * a + b * b;
            if s > 9.0 {
                let tau = 3.0 / libm::sqrt(s);
                m0 = tau * a * secant;
                m1 = tau * b * secant;
            }
        }
        let t = (r - x0) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        Ok((2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * m1)
    }

    /// Left derivative `f′(r)`, linearly interpolated from the table.
    pub fn eval_f_prime(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::invalid(alloc::format!("radius must be nonnegative, got {r}")));
        }
        if r >= self.r_max() {
            return Ok(0.5 * self.phi_r0);
        }
        let k = self.interval(r);
        let t = (r - self.grid[k]) / (self.grid[k + 1] - self.grid[k]);
        Ok((1.0 - t) * self.f_prime_vals[k] + t * self.f_prime_vals[k + 1])
    }

    /// Checks the differential inequality at every node except those within
    /// one cell of `R₁`, with `f″` from finite differences of `f′`.
    pub fn validate_lemma1<K: Fn(f64) -> f64>(&self, kappa: &K, sigma: f64) -> Lemma1Report {
        let n = self.grid.len();
        let fp = &self.f_prime_vals;
        let r1 = self.r1;
        let inv4s2 = 1.0 / (4.0 * sigma * sigma);
        let mut worst = f64::NEG_INFINITY;
        let mut r_at = 0.0;
        let mut checked = 0;
        for i in 0..n {
            let r = self.grid[i];
            let cell = if i == 0 {
                self.grid[1] - r
            } else if i == n - 1 {
                r - self.grid[i - 1]
            } else {
                (r - self.grid[i - 1]).max(self.grid[i + 1] - r)
            };
            if i == self.r1_index || (r - r1).abs() <= cell * (1.0 + 1e-9) {
                continue;
            }
            let second = if i == 0 {
                let h = self.grid[1] - self.grid[0];
                (-3.0 * fp[0] + 4.0 * fp[1] - fp[2]) / (2.0 * h)
            } else if i == n - 1 {
                let h = self.grid[i] - self.grid[i - 1];
                (3.0 * fp[i] - 4.0 * fp[i - 1] + fp[i - 2]) / (2.0 * h)
            } else {
                let h1 = r - self.grid[i - 1];
                let h2 = self.grid[i + 1] - r;
                -h2 / (h1 * (h1 + h2)) * fp[i - 1]
                    + (h2 - h1) / (h1 * h2) * fp[i]
                    + h1 / (h2 * (h1 + h2)) * fp[i + 1]
            };
            let residual = second - inv4s2 * r * kappa(r) * fp[i] + 0.5 * self.c * self.f_vals[i];
            checked += 1;
            if residual > worst {
                worst = residual;
                r_at = r;
            }
        }
        let threshold = 1e-4 * (self.c * self.f_vals[n - 1]).max(1.0);
        Lemma1Report {
            max_residual: worst,
            r_at_max: r_at,
            threshold,
            n_checked: checked,
            passed: worst <= threshold,
        }
    }
}
