//! Drifts, interaction kernels and disorder laws.
//!
//! A [`ModelSpec`] bundles the restoring force `F(x, ω)`, the interaction
//! kernel `Γ(x, ω, y, ω′)`, the diffusion coefficient `σ`, the disorder law
//! `ν`, the limit density `p` and the one-sided modulus `κ` with
//! `(F(x,ω) − F(y,ω))·(x − y) ≤ −κ(|x − y|)|x − y|²`.
//!
//! `κ` is always supplied in closed form. The builtin drifts derive it
//! themselves; custom drifts must provide one.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::semimetric::SemimetricTable;

pub type DriftFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type InteractionFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type KappaFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Restoring force `F(x, ω)`. Builtins act componentwise.
#[derive(Clone)]
pub enum Drift {
    /// `F(x) = −x`, potential `|x|²/2`.
    Ou,
    /// `F(x) = x − x³`, potential `x⁴/4 − x²/2`.
    DoubleWell,
    /// `F(x, ω) = −x³ + ωx` with scalar bounded disorder.
    DisorderedCubic,
    /// `F(x) = a·x`.
    Linear { slope: f64 },
    Custom(DriftFn),
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Ou => f.write_str("Ou"),
            Drift::DoubleWell => f.write_str("DoubleWell"),
            Drift::DisorderedCubic => f.write_str("DisorderedCubic"),
            Drift::Linear { slope } => write!(f, "Linear {{ slope: {slope} }}"),
            Drift::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Drift {
    #[inline]
    pub fn eval_into(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        match self {
            Drift::Ou => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = -xi;
                }
            }
            Drift::DoubleWell => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = xi - xi * xi * xi;
                }
            }
            Drift::DisorderedCubic => {
                let om = w[0];
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = -xi * xi * xi + om * xi;
                }
            }
            Drift::Linear { slope } => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = slope * xi;
                }
            }
            Drift::Custom(fun) => fun(x, w, out),
        }
    }
}

/// Interaction kernel `Γ(x, ω, y, ω′)`.
#[derive(Clone)]
pub enum Interaction {
    /// `Γ ≡ 0`.
    Zero,
    /// `Γ = K (y − x)`.
    LinearAttraction { k: f64 },
    /// `Γ = K sin(y − x)` componentwise; bounded by `K√d`.
    KuramotoLike { k: f64 },
    Custom(InteractionFn),
}

impl fmt::Debug for Interaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interaction::Zero => f.write_str("Zero"),
            Interaction::LinearAttraction { k } => write!(f, "LinearAttraction {{ k: {k} }}"),
            Interaction::KuramotoLike { k } => write!(f, "KuramotoLike {{ k: {k} }}"),
            Interaction::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Interaction {
    #[inline]
    pub fn eval_into(&self, x: &[f64], w: &[f64], y: &[f64], w2: &[f64], out: &mut [f64]) {
        match self {
            Interaction::Zero => out.fill(0.0),
            Interaction::LinearAttraction { k } => {
                for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
                    *o = k * (yi - xi);
                }
            }
            Interaction::KuramotoLike { k } => {
                for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
                    *o = k * libm::sin(yi - xi);
                }
            }
            Interaction::Custom(fun) => fun(x, w, y, w2, out),
        }
    }

    /// `Some(K)` when `Γ(x, ω, y, ω′) = K (y − x)`. Sums of such kernels over
    /// neighbours reduce to neighbour sums of positions.
    pub fn linear_coefficient(&self) -> Option<f64> {
        match self {
            Interaction::LinearAttraction { k } => Some(*k),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Interaction::Zero)
    }
}

/// One-sided modulus `κ(r)`.
#[derive(Clone)]
pub enum Kappa {
    Constant(f64),
    /// `a r² + b`
    Quadratic { a: f64, b: f64 },
    Custom(KappaFn),
}

impl fmt::Debug for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kappa::Constant(c) => write!(f, "Constant({c})"),
            Kappa::Quadratic { a, b } => write!(f, "Quadratic {{ a: {a}, b: {b} }}"),
            Kappa::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Kappa {
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Kappa::Constant(c) => *c,
            Kappa::Quadratic { a, b } => a * r * r + b,
            Kappa::Custom(fun) => fun(r),
        }
    }
}

/// Law `ν` of the per-particle disorder.
#[derive(Debug, Clone, PartialEq)]
pub enum DisorderLaw {
    /// No disorder (`d′ = 0`).
    None,
    /// Scalar uniform law on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl DisorderLaw {
    pub fn dim(&self) -> usize {
        match self {
            DisorderLaw::None => 0,
            DisorderLaw::Uniform { .. } => 1,
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            DisorderLaw::None => {}
            DisorderLaw::Uniform { lo, hi } => out[0] = lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

/// Lipschitz data of `Γ`.
///
/// `euclidean` is the constant in `|Γ(x,·,t,·) − Γ(y,·,s,·)| ≤ L(|x−y| + |t−s|)`.
/// Relative to the semimetric `f` the constant becomes `L / c_f`, because
/// `c_f r ≤ f(r)`; see [`Lipschitz::semimetric_constant`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Lipschitz {
    pub euclidean: f64,
    /// `L_∞` for bounded kernels.
    pub bound: Option<f64>,
}

impl Lipschitz {
    pub fn semimetric_constant(&self, c_f: f64) -> f64 {
        self.euclidean / c_f
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub dim_x: usize,
    pub dim_w: usize,
    pub drift: Drift,
    pub interaction: Interaction,
    pub sigma: f64,
    pub disorder: DisorderLaw,
    pub p: f64,
    pub kappa: Kappa,
    pub lipschitz: Lipschitz,
    pub gamma_at_origin_zero: bool,
}

/// Builder for [`ModelSpec`]; fills `κ` and the Lipschitz data for builtins.
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    dim_x: usize,
    drift: Drift,
    interaction: Interaction,
    sigma: f64,
    disorder: DisorderLaw,
    p: f64,
    kappa: Option<Kappa>,
    lipschitz: Option<Lipschitz>,
}

impl ModelBuilder {
    pub fn dim(mut self, d: usize) -> Self {
        self.dim_x = d;
        self
    }
    pub fn interaction(mut self, g: Interaction) -> Self {
        self.interaction = g;
        self
    }
    pub fn sigma(mut self, s: f64) -> Self {
        self.sigma = s;
        self
    }
    pub fn disorder(mut self, law: DisorderLaw) -> Self {
        self.disorder = law;
        self
    }
    pub fn p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }
    pub fn kappa(mut self, k: Kappa) -> Self {
        self.kappa = Some(k);
        self
    }
    pub fn lipschitz(mut self, l: Lipschitz) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let d = self.dim_x;
        if d == 0 {
            return Err(Error::invalid("state dimension must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(alloc::format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::invalid(alloc::format!("p must lie in [0, 1], got {}", self.p)));
        }
        if let DisorderLaw::Uniform { lo, hi } = self.disorder {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::invalid("uniform disorder needs finite lo <= hi"));
            }
        }
        let dim_w = self.disorder.dim();
        if matches!(self.drift, Drift::DisorderedCubic) && dim_w != 1 {
            return Err(Error::invalid("disordered_cubic needs a scalar disorder law"));
        }
        let kappa = match self.kappa {
            Some(k) => k,
            None => analytic_kappa(&self.drift, &self.disorder, d).ok_or_else(|| {
                Error::ModelRejected(String::from("custom drift needs an explicit kappa"))
            })?,
        };
        let lipschitz = match self.lipschitz {
            Some(l) => l,
            None => analytic_lipschitz(&self.interaction, d).ok_or_else(|| {
                Error::ModelRejected(String::from("custom interaction needs Lipschitz data"))
            })?,
        };
        let mut spec = ModelSpec {
            dim_x: d,
            dim_w,
            drift: self.drift,
            interaction: self.interaction,
            sigma: self.sigma,
            disorder: self.disorder,
            p: self.p,
            kappa,
            lipschitz,
            gamma_at_origin_zero: false,
        };
        let zx = vec![0.0; d];
        let zw = vec![0.0; dim_w];
        let mut g0 = vec![0.0; d];
        spec.interaction.eval_into(&zx, &zw, &zx, &zw, &mut g0);
        spec.gamma_at_origin_zero = g0.iter().all(|&v| v == 0.0);
        Ok(spec)
    }
}

fn analytic_kappa(drift: &Drift, disorder: &DisorderLaw, d: usize) -> Option<Kappa> {
    // Componentwise cubic: Σ_k (x_k − y_k)⁴ ≥ |x − y|⁴ / d.
    let quartic = 1.0 / (4.0 * d as f64);
    match drift {
        Drift::Ou => Some(Kappa::Constant(1.0)),
        Drift::DoubleWell => Some(Kappa::Quadratic { a: quartic, b: -1.0 }),
        Drift::DisorderedCubic => {
            let w_max = match disorder {
                DisorderLaw::Uniform { hi, .. } => *hi,
                DisorderLaw::None => 0.0,
            };
            Some(Kappa::Quadratic { a: quartic, b: -w_max })
        }
        Drift::Linear { slope } => Some(Kappa::Constant(-slope)),
        Drift::Custom(_) => None,
    }
}

fn analytic_lipschitz(g: &Interaction, d: usize) -> Option<Lipschitz> {
    match g {
        Interaction::Zero => Some(Lipschitz { euclidean: 0.0, bound: Some(0.0) }),
        Interaction::LinearAttraction { k } => Some(Lipschitz { euclidean: k.abs(), bound: None }),
        Interaction::KuramotoLike { k } => Some(Lipschitz {
            euclidean: k.abs(),
            bound: Some(k.abs() * libm::sqrt(d as f64)),
        }),
        Interaction::Custom(_) => None,
    }
}

impl ModelSpec {
    pub fn builder(drift: Drift) -> ModelBuilder {
        ModelBuilder {
            dim_x: 1,
            drift,
            interaction: Interaction::Zero,
            sigma: 1.0,
            disorder: DisorderLaw::None,
            p: 1.0,
            kappa: None,
            lipschitz: None,
        }
    }

    fn check_dims(&self, x: &[f64], w: &[f64]) -> Result<()> {
        if x.len() != self.dim_x {
            return Err(Error::DimensionMismatch { expected: self.dim_x, got: x.len() });
        }
        if w.len() != self.dim_w {
            return Err(Error::DimensionMismatch { expected: self.dim_w, got: w.len() });
        }
        Ok(())
    }

    /// `F(x, ω)`.
    pub fn eval_drift(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, w)?;
        let mut out = vec![0.0; self.dim_x];
        self.drift.eval_into(x, w, &mut out);
        Ok(out)
    }

    /// `Γ(x, ω, y, ω′)`.
    pub fn eval_interaction(&self, x: &[f64], w: &[f64], y: &[f64], w2: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, w)?;
        self.check_dims(y, w2)?;
        let mut out = vec![0.0; self.dim_x];
        self.interaction.eval_into(x, w, y, w2, &mut out);
        Ok(out)
    }

    pub fn kappa_at(&self, r: f64) -> f64 {
        self.kappa.eval(r)
    }

    pub fn is_bounded_interaction(&self) -> bool {
        self.lipschitz.bound.is_some()
    }
}

/// Named presets. Drift presets carry `Γ ≡ 0`; interaction presets use the
/// OU drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinModel {
    Ou,
    DoubleWell,
    DisorderedCubic,
    KuramotoLike,
    LinearAttraction,
}

impl BuiltinModel {
    pub const ALL: [BuiltinModel; 5] = [
        BuiltinModel::Ou,
        BuiltinModel::DoubleWell,
        BuiltinModel::DisorderedCubic,
        BuiltinModel::KuramotoLike,
        BuiltinModel::LinearAttraction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BuiltinModel::Ou => "ou",
            BuiltinModel::DoubleWell => "double_well",
            BuiltinModel::DisorderedCubic => "disordered_cubic",
            BuiltinModel::KuramotoLike => "kuramoto_like",
            BuiltinModel::LinearAttraction => "linear_attraction",
        }
    }

    /// Preset with `σ`, interaction strength `K` (ignored by drift presets)
    /// and, for `disordered_cubic`, disorder uniform on `[−1/2, 1/2]`.
    pub fn builder(self, sigma: f64, strength: f64) -> ModelBuilder {
        match self {
            BuiltinModel::Ou => ModelSpec::builder(Drift::Ou).sigma(sigma),
            BuiltinModel::DoubleWell => ModelSpec::builder(Drift::DoubleWell).sigma(sigma),
            BuiltinModel::DisorderedCubic => ModelSpec::builder(Drift::DisorderedCubic)
                .sigma(sigma)
                .disorder(DisorderLaw::Uniform { lo: -0.5, hi: 0.5 }),
            BuiltinModel::KuramotoLike => ModelSpec::builder(Drift::Ou)
                .sigma(sigma)
                .interaction(Interaction::KuramotoLike { k: strength }),
            BuiltinModel::LinearAttraction => ModelSpec::builder(Drift::Ou)
                .sigma(sigma)
                .interaction(Interaction::LinearAttraction { k: strength }),
        }
    }

    pub fn spec(self, sigma: f64, strength: f64) -> Result<ModelSpec> {
        self.builder(sigma, strength).build()
    }
}

impl FromStr for BuiltinModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BuiltinModel::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(alloc::format!("unknown model `{s}`")))
    }
}

/// Outcome of sampling the one-sided condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneSidedReport {
    /// `max (F(x,ω) − F(y,ω))·(x−y) + κ(|x−y|)|x−y|²` over the samples.
    pub max_violation: f64,
    pub n_pairs: usize,
    pub passed: bool,
}

pub const ONE_SIDED_TOLERANCE: f64 = 1e-9;

fn sample_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64, out: &mut [f64]) {
    let d = out.len();
    let mut norm2 = 0.0;
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
        norm2 += *v * *v;
    }
    let norm = libm::sqrt(norm2).max(f64::MIN_POSITIVE);
    let u: f64 = rng.random();
    let scale = radius * libm::pow(u, 1.0 / d as f64) / norm;
    for v in out.iter_mut() {
        *v *= scale;
    }
}

/// Samples `n_pairs` pairs uniformly in the ball of the given radius (with
/// disorder drawn from `ν`) and reports the largest violation of the
/// one-sided condition with the model's `κ`.
pub fn check_one_sided(m: &ModelSpec, n_pairs: usize, radius: f64, seed: u64) -> Result<OneSidedReport> {
    if n_pairs == 0 {
        return Err(Error::invalid("n_pairs must be at least 1"));
    }
    let d = m.dim_x;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x, mut y) = (vec![0.0; d], vec![0.0; d]);
    let mut w = vec![0.0; m.dim_w];
    let (mut fx, mut fy) = (vec![0.0; d], vec![0.0; d]);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_pairs {
        sample_ball(&mut rng, radius, &mut x);
        sample_ball(&mut rng, radius, &mut y);
        m.disorder.sample_into(&mut rng, &mut w);
        m.drift.eval_into(&x, &w, &mut fx);
        m.drift.eval_into(&y, &w, &mut fy);
        let mut inner = 0.0;
        let mut r2 = 0.0;
        for k in 0..d {
            let dz = x[k] - y[k];
            inner += (fx[k] - fy[k]) * dz;
            r2 += dz * dz;
        }
        let r = libm::sqrt(r2);
        worst = worst.max(inner + m.kappa.eval(r) * r2);
    }
    Ok(OneSidedReport {
        max_violation: worst,
        n_pairs,
        passed: worst <= ONE_SIDED_TOLERANCE,
    })
}

/// Numerical proxy for the constants in
/// `(F(x,ω) − F(y,ω))·(x−y) ≤ M_F − m_F |x−y|²`.
///
/// `m_F` is half the minimum of `κ` over the last quarter of `grid`;
/// `M_F = max_r (m_F − κ(r)) r²`, clamped at zero. Returns `(M_F, m_F)`.
pub fn derive_mf_constants(m: &ModelSpec, grid: &[f64]) -> Result<(f64, f64)> {
    mf_constants_for(&m.kappa, grid)
}

pub(crate) fn mf_constants_for(kappa: &Kappa, grid: &[f64]) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::invalid("radius grid is empty"));
    }
    let tail_start = grid.len() - grid.len().div_ceil(4);
    let tail_min = grid[tail_start..]
        .iter()
        .map(|&r| kappa.eval(r))
        .fold(f64::INFINITY, f64::min);
    if !(tail_min > 0.0) {
        return Err(Error::ModelRejected(alloc::format!(
            "kappa is not positive on the tail of the grid (min {tail_min})"
        )));
    }
    let m_f = 0.5 * tail_min;
    let big_m = grid
        .iter()
        .map(|&r| (m_f - kappa.eval(r)) * r * r)
        .fold(0.0, f64::max);
    Ok((big_m, m_f))
}

/// Monte Carlo estimate of `E[|ω|² + |F(0, ω)|²]` under `ν`.
pub fn disorder_second_moment(m: &ModelSpec, n_draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = vec![0.0; m.dim_x];
    let mut w = vec![0.0; m.dim_w];
    let mut f0 = vec![0.0; m.dim_x];
    let mut acc = 0.0;
    for _ in 0..n_draws {
        m.disorder.sample_into(&mut rng, &mut w);
        m.drift.eval_into(&zero, &w, &mut f0);
        acc += w.iter().map(|v| v * v).sum::<f64>() + f0.iter().map(|v| v * v).sum::<f64>();
    }
    acc / n_draws.max(1) as f64
}

/// Largest sampled ratio
/// `|Γ(x,ω,t,ω′) − Γ(y,ω,s,ω′)| / (f(|x−y|) + f(|t−s|))`.
pub fn lipschitz_ratio(m: &ModelSpec, table: &SemimetricTable, n_samples: usize, radius: f64, seed: u64) -> f64 {
    let d = m.dim_x;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [mut x, mut y, mut t, mut s, mut g1, mut g2] = core::array::from_fn(|_| vec![0.0; d]);
    let (mut w, mut w2) = (vec![0.0; m.dim_w], vec![0.0; m.dim_w]);
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        for v in [&mut x, &mut y, &mut t, &mut s] {
            sample_ball(&mut rng, radius, v);
        }
        m.disorder.sample_into(&mut rng, &mut w);
        m.disorder.sample_into(&mut rng, &mut w2);
        m.interaction.eval_into(&x, &w, &t, &w2, &mut g1);
        m.interaction.eval_into(&y, &w, &s, &w2, &mut g2);
        let num = libm::sqrt(g1.iter().zip(&g2).map(|(a, b)| (a - b) * (a - b)).sum());
        let den = table.eval_f(dist(&x, &y)).unwrap_or(0.0) + table.eval_f(dist(&t, &s)).unwrap_or(0.0);
        if den > 0.0 {
            worst = worst.max(num / den);
        }
    }
    worst
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum())
}
