//! Euler–Maruyama stepping of the particle system, of its nonlinear limit
//! and of the coupling between the two.
//!
//! Each step reads a snapshot of the pre-step state and writes fresh
//! buffers, and every Gaussian increment is addressed by
//! `(root, channel, step, particle)`. With the `parallel` feature particles
//! are updated on the rayon pool; the result does not depend on the number
//! of threads.
//!
//! The law `ρ̄_t` entering the nonlinear drift is approximated by an
//! empirical measure: either the nonlinear copies themselves
//! ([`EnsembleMode::SelfConsistent`]) or a separate reference ensemble that is
//! stepped alongside and never sees the copies
//! ([`EnsembleMode::FrozenReference`]).

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::models::ModelSpec;
use crate::rng::{sub_seed, Channel, NoiseKey};
use crate::semimetric::SemimetricTable;
use crate::transport::{sorted_matching_1d, w1_assignment, CostMetric, EmpiricalMeasure};

const TAG_IPS_INIT: u64 = 0x1;
const TAG_NL_INIT: u64 = 0x2;
const TAG_DISORDER: u64 = 0x3;
const TAG_REF_INIT: u64 = 0x4;
const TAG_REF_DISORDER: u64 = 0x5;

/// How the nonlinear drift integral is approximated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnsembleMode {
    /// Empirical measure of the `N` nonlinear copies themselves.
    #[default]
    SelfConsistent,
    /// Empirical measure of an attached reference ensemble.
    FrozenReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CouplingMode {
    /// Reflection where `|Z| ≥ δ`, synchronous where `|Z| ≤ δ/2`.
    #[default]
    Reflection,
    /// Same noise on both sides everywhere (`φ_r ≡ 0`).
    Synchronous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    pub dt: f64,
    pub scheme: Scheme,
    pub rng_root: u64,
    pub ensemble_mode: EnsembleMode,
    pub coupling: CouplingMode,
}

impl StepPlan {
    pub fn new(dt: f64, rng_root: u64) -> Self {
        StepPlan {
            dt,
            scheme: Scheme::EulerMaruyama,
            rng_root,
            ensemble_mode: EnsembleMode::SelfConsistent,
            coupling: CouplingMode::Reflection,
        }
    }

    pub fn with_mode(mut self, mode: EnsembleMode) -> Self {
        self.ensemble_mode = mode;
        self
    }

    pub fn with_coupling(mut self, coupling: CouplingMode) -> Self {
        self.coupling = coupling;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.dt > 0.0 && self.dt.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(alloc::format!("dt must be positive, got {}", self.dt)))
        }
    }
}

/// Initial law of the particle positions (isotropic across coordinates).
#[derive(Debug, Clone, PartialEq)]
pub enum InitLaw {
    /// Independent `N(mean, sd²)` coordinates.
    Normal { mean: f64, sd: f64 },
    /// Independent uniform coordinates on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// Dirac mass at a point.
    Point(Vec<f64>),
}

impl InitLaw {
    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            InitLaw::Normal { sd, .. } if !(*sd >= 0.0) => Err(Error::invalid("init sd must be >= 0")),
            InitLaw::Uniform { lo, hi } if !(lo <= hi) => Err(Error::invalid("init needs lo <= hi")),
            InitLaw::Point(p) if p.len() != dim => {
                Err(Error::DimensionMismatch { expected: dim, got: p.len() })
            }
            _ => Ok(()),
        }
    }

    fn sample_cloud(&self, n: usize, dim: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate(dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n * dim);
        match self {
            InitLaw::Normal { mean, sd } => {
                let law = Normal::new(*mean, *sd).map_err(|_| Error::invalid("bad normal law"))?;
                out.extend((0..n * dim).map(|_| law.sample(&mut rng)));
            }
            InitLaw::Uniform { lo, hi } => {
                use rand::Rng;
                out.extend((0..n * dim).map(|_| lo + (hi - lo) * rng.random::<f64>()));
            }
            InitLaw::Point(p) => {
                for _ in 0..n {
                    out.extend_from_slice(p);
                }
            }
        }
        Ok(out)
    }
}

/// `(φ_s(r), φ_r(r))`: `φ_r` vanishes below `δ/2`, equals one above `δ` and
/// follows `sin²(π(r − δ/2)/δ)` in between; `φ_s = √(1 − φ_r²)`.
#[inline]
pub fn cutoffs(r: f64, delta: f64) -> (f64, f64) {
    let phi_r = if r <= 0.5 * delta {
        0.0
    } else if r >= delta {
        1.0
    } else {
        let s = libm::sin(PI * (r - 0.5 * delta) / delta);
        s * s
    };
    (libm::sqrt(1.0 - phi_r * phi_r), phi_r)
}

/// Independent reference sample of the nonlinear law.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEnsemble {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl ReferenceEnsemble {
    pub fn len(&self, dim_x: usize) -> usize {
        self.x.len() / dim_x
    }
}

/// Paired particle system `(Xⁱ, X̄ⁱ, ωᵢ)`. After [`init_coupled`] the
/// pairing realizes an optimal initial matching.
#[derive(Debug, Clone)]
pub struct CoupledEnsemble<'g> {
    pub n: usize,
    pub dim_x: usize,
    pub dim_w: usize,
    pub x: Vec<f64>,
    pub x_bar: Vec<f64>,
    pub w: Vec<f64>,
    pub graph: &'g InteractionGraph,
    pub t: f64,
    pub delta: f64,
    pub step_index: u64,
    pub reference: Option<ReferenceEnsemble>,
}

/// Draws the two initial clouds and the disorder, then renumbers the
/// nonlinear side so that copy `i` is optimally matched with particle `i`.
///
/// With `shared_draws` both clouds come from the same random stream, so equal
/// laws give identical clouds.
pub fn init_coupled<'g>(
    m: &ModelSpec,
    g: &'g InteractionGraph,
    ips_init: &InitLaw,
    nl_init: &InitLaw,
    seed: u64,
    delta: f64,
    shared_draws: bool,
) -> Result<CoupledEnsemble<'g>> {
    let n = g.n_vertices();
    let x = ips_init.sample_cloud(n, m.dim_x, sub_seed(seed, TAG_IPS_INIT, 0))?;
    let nl_seed = if shared_draws { TAG_IPS_INIT } else { TAG_NL_INIT };
    let x_bar = nl_init.sample_cloud(n, m.dim_x, sub_seed(seed, nl_seed, 0))?;
    let w = sample_disorder(m, n, sub_seed(seed, TAG_DISORDER, 0));
    from_initial_states(m, g, x, x_bar, w, delta)
}

fn sample_disorder(m: &ModelSpec, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; n * m.dim_w];
    if m.dim_w > 0 {
        for chunk in w.chunks_mut(m.dim_w) {
            m.disorder.sample_into(&mut rng, chunk);
        }
    }
    w
}

/// Builds the ensemble from given clouds, renumbering `x_bar` along the
/// optimal matching `|X₀ⁱ − X̄₀^{τ(i)}|`.
pub fn from_initial_states<'g>(
    m: &ModelSpec,
    g: &'g InteractionGraph,
    x: Vec<f64>,
    x_bar: Vec<f64>,
    w: Vec<f64>,
    delta: f64,
) -> Result<CoupledEnsemble<'g>> {
    let n = g.n_vertices();
    let d = m.dim_x;
    if x.len() != n * d {
        return Err(Error::SizeMismatch { left: n * d, right: x.len() });
    }
    if x_bar.len() != n * d {
        return Err(Error::SizeMismatch { left: n * d, right: x_bar.len() });
    }
    if w.len() != n * m.dim_w {
        return Err(Error::SizeMismatch { left: n * m.dim_w, right: w.len() });
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    let perm = if n == 0 {
        Vec::new()
    } else if d == 1 {
        sorted_matching_1d(&x, &x_bar)?
    } else {
        let a = EmpiricalMeasure::new(x.clone(), d, 0)?;
        let b = EmpiricalMeasure::new(x_bar.clone(), d, 0)?;
        w1_assignment(&a, &b, CostMetric::Euclidean)?.1
    };
    let mut matched = Vec::with_capacity(n * d);
    for &j in &perm {
        matched.extend_from_slice(&x_bar[j * d..(j + 1) * d]);
    }
    Ok(CoupledEnsemble {
        n,
        dim_x: d,
        dim_w: m.dim_w,
        x,
        x_bar: matched,
        w,
        graph: g,
        t: 0.0,
        delta,
        step_index: 0,
        reference: None,
    })
}

/// Per-worker scratch space.
struct Scratch {
    drift: Vec<f64>,
    acc: Vec<f64>,
    tmp: Vec<f64>,
    sync: Vec<f64>,
    refl: Vec<f64>,
    e: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Scratch {
            drift: vec![0.0; d],
            acc: vec![0.0; d],
            tmp: vec![0.0; d],
            sync: vec![0.0; d],
            refl: vec![0.0; d],
            e: vec![0.0; d],
        }
    }
}

#[cfg(feature = "parallel")]
fn for_each_particle<F>(d: usize, out_a: &mut [f64], out_b: &mut [f64], f: F)
where
    F: Fn(usize, &mut Scratch, &mut [f64], &mut [f64]) + Sync + Send,
{
    use rayon::prelude::*;
    out_a
        .par_chunks_mut(d)
        .zip(out_b.par_chunks_mut(d))
        .enumerate()
        .for_each_init(|| Scratch::new(d), |s, (i, (a, b))| f(i, s, a, b));
}

#[cfg(not(feature = "parallel"))]
fn for_each_particle<F>(d: usize, out_a: &mut [f64], out_b: &mut [f64], f: F)
where
    F: Fn(usize, &mut Scratch, &mut [f64], &mut [f64]) + Sync + Send,
{
    let mut s = Scratch::new(d);
    for (i, (a, b)) in out_a.chunks_mut(d).zip(out_b.chunks_mut(d)).enumerate() {
        f(i, &mut s, a, b);
    }
}

/// Read-only view of a cloud used as the law in a mean-field integral.
struct LawSample<'a> {
    x: &'a [f64],
    w: &'a [f64],
    /// Coordinate means, filled only for linear kernels.
    mean: Vec<f64>,
}

impl<'a> LawSample<'a> {
    fn new(m: &ModelSpec, x: &'a [f64], w: &'a [f64]) -> Self {
        let d = m.dim_x;
        let mut mean = vec![0.0; d];
        if m.interaction.linear_coefficient().is_some() {
            let n = x.len() / d;
            for chunk in x.chunks(d) {
                for (mk, &v) in mean.iter_mut().zip(chunk) {
                    *mk += v;
                }
            }
            for mk in &mut mean {
                *mk /= n as f64;
            }
        }
        LawSample { x, w, mean }
    }

    /// `out += p ∫ Γ(x, ω, y, ω′) dμ(y, ω′)`.
    fn add_mean_field(&self, m: &ModelSpec, x: &[f64], w: &[f64], s_tmp: &mut [f64], out: &mut [f64]) {
        let p = m.p;
        if p == 0.0 || m.interaction.is_zero() {
            return;
        }
        if let Some(k) = m.interaction.linear_coefficient() {
            for ((o, &mk), &xk) in out.iter_mut().zip(&self.mean).zip(x) {
                *o += p * k * (mk - xk);
            }
            return;
        }
        let d = m.dim_x;
        let dw = m.dim_w;
        let n = self.x.len() / d;
        let scale = p / n as f64;
        let mut acc = vec![0.0; d];
        for j in 0..n {
            m.interaction.eval_into(
                x,
                w,
                &self.x[j * d..(j + 1) * d],
                &self.w[j * dw..(j + 1) * dw],
                s_tmp,
            );
            for (a, &v) in acc.iter_mut().zip(s_tmp.iter()) {
                *a += v;
            }
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o += scale * a;
        }
    }
}

/// Coordinate sums of all particles, used in place of neighbor sums for a
/// linear kernel on the complete graph.
fn complete_sum(m: &ModelSpec, g: &InteractionGraph, x: &[f64]) -> Option<Vec<f64>> {
    if m.interaction.linear_coefficient().is_none() || !g.is_complete() {
        return None;
    }
    let mut total = vec![0.0; m.dim_x];
    for chunk in x.chunks(m.dim_x) {
        for (t, &v) in total.iter_mut().zip(chunk) {
            *t += v;
        }
    }
    Some(total)
}

/// `F(xᵢ, ωᵢ) + (α_N/N) Σ_j ξ_ij Γ(xᵢ, ωᵢ, xⱼ, ωⱼ)`, written into `s.drift`.
fn ips_drift(
    m: &ModelSpec,
    g: &InteractionGraph,
    x: &[f64],
    w: &[f64],
    total: Option<&[f64]>,
    i: usize,
    s: &mut Scratch,
) {
    let d = m.dim_x;
    let dw = m.dim_w;
    let xi = &x[i * d..(i + 1) * d];
    let wi = &w[i * dw..(i + 1) * dw];
    m.drift.eval_into(xi, wi, &mut s.drift);
    if m.interaction.is_zero() {
        return;
    }
    let nbrs = g.neighbors(i);
    if nbrs.is_empty() {
        return;
    }
    let scale = g.alpha() / g.n_vertices() as f64;
    s.acc.fill(0.0);
    if let Some(k) = m.interaction.linear_coefficient() {
        let deg = nbrs.len() as f64;
        if let Some(total) = total {
            for (((o, &t), &xk), a) in s.drift.iter_mut().zip(total).zip(xi).zip(s.acc.iter_mut()) {
                *a = t - xk;
                *o += scale * k * (*a - deg * xk);
            }
            return;
        }
        for &j in nbrs {
            let xj = &x[j as usize * d..(j as usize + 1) * d];
            for (a, &v) in s.acc.iter_mut().zip(xj) {
                *a += v;
            }
        }
        for ((o, &a), &xk) in s.drift.iter_mut().zip(&s.acc).zip(xi) {
            *o += scale * k * (a - deg * xk);
        }
        return;
    }
    for &j in nbrs {
        let j = j as usize;
        m.interaction
            .eval_into(xi, wi, &x[j * d..(j + 1) * d], &w[j * dw..(j + 1) * dw], &mut s.tmp);
        for (a, &v) in s.acc.iter_mut().zip(s.tmp.iter()) {
            *a += v;
        }
    }
    for (o, &a) in s.drift.iter_mut().zip(s.acc.iter()) {
        *o += scale * a;
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl<'g> CoupledEnsemble<'g> {
    /// Attaches an independent reference ensemble of `size` particles drawn
    /// from `nl_init ⊗ ν`; required by [`EnsembleMode::FrozenReference`].
    pub fn attach_reference(&mut self, m: &ModelSpec, nl_init: &InitLaw, size: usize, seed: u64) -> Result<()> {
        if size == 0 {
            return Err(Error::invalid("reference ensemble must be nonempty"));
        }
        let x = nl_init.sample_cloud(size, m.dim_x, sub_seed(seed, TAG_REF_INIT, 0))?;
        let w = sample_disorder(m, size, sub_seed(seed, TAG_REF_DISORDER, 0));
        self.reference = Some(ReferenceEnsemble { x, w });
        Ok(())
    }

    fn check_model(&self, m: &ModelSpec) -> Result<()> {
        if m.dim_x != self.dim_x {
            return Err(Error::DimensionMismatch { expected: self.dim_x, got: m.dim_x });
        }
        if m.dim_w != self.dim_w {
            return Err(Error::DimensionMismatch { expected: self.dim_w, got: m.dim_w });
        }
        Ok(())
    }

    fn law_for_copies<'s>(&'s self, m: &ModelSpec, plan: &StepPlan) -> Result<LawSample<'s>> {
        match plan.ensemble_mode {
            EnsembleMode::SelfConsistent => Ok(LawSample::new(m, &self.x_bar, &self.w)),
            EnsembleMode::FrozenReference => {
                let r = self.reference.as_ref().ok_or_else(|| {
                    Error::invalid("frozen-reference mode needs an attached reference ensemble")
                })?;
                Ok(LawSample::new(m, &r.x, &r.w))
            }
        }
    }

    /// Self-consistent step of the reference ensemble.
    fn step_reference(&self, m: &ModelSpec, plan: &StepPlan) -> Result<Option<ReferenceEnsemble>> {
        let Some(r) = self.reference.as_ref() else {
            return Ok(None);
        };
        if plan.ensemble_mode != EnsembleMode::FrozenReference {
            return Ok(None);
        }
        let d = self.dim_x;
        let dw = self.dim_w;
        let law = LawSample::new(m, &r.x, &r.w);
        let key = NoiseKey::new(plan.rng_root, Channel::Reference);
        let amp = libm::sqrt(2.0 * plan.dt) * m.sigma;
        let dt = plan.dt;
        let step = self.step_index;
        let mut next = r.x.clone();
        let mut unused = vec![0.0; next.len()];
        for_each_particle(d, &mut next, &mut unused, |i, s, out, _| {
            let xi = &r.x[i * d..(i + 1) * d];
            let wi = &r.w[i * dw..(i + 1) * dw];
            m.drift.eval_into(xi, wi, &mut s.drift);
            law.add_mean_field(m, xi, wi, &mut s.tmp, &mut s.drift);
            key.stream(step, i as u64).fill_normal(&mut s.sync);
            for k in 0..d {
                out[k] = xi[k] + s.drift[k] * dt + amp * s.sync[k];
            }
        });
        if !all_finite(&next) {
            return Err(Error::BlowUp { step });
        }
        Ok(Some(ReferenceEnsemble { x: next, w: r.w.clone() }))
    }

    fn advance(&mut self, dt: f64) {
        self.step_index += 1;
        self.t = self.step_index as f64 * dt;
    }

    /// One Euler–Maruyama step of the particle system alone.
    pub fn step_ips(&mut self, m: &ModelSpec, plan: &StepPlan) -> Result<()> {
        plan.validate()?;
        self.check_model(m)?;
        let d = self.dim_x;
        let key = NoiseKey::new(plan.rng_root, Channel::Ips);
        let amp = libm::sqrt(2.0 * plan.dt) * m.sigma;
        let (dt, step, g) = (plan.dt, self.step_index, self.graph);
        let (x, w) = (&self.x, &self.w);
        let total = complete_sum(m, g, x);
        let total = total.as_deref();
        let mut next = vec![0.0; x.len()];
        let mut unused = vec![0.0; x.len()];
        for_each_particle(d, &mut next, &mut unused, |i, s, out, _| {
            ips_drift(m, g, x, w, total, i, s);
            key.stream(step, i as u64).fill_normal(&mut s.sync);
            for k in 0..d {
                out[k] = x[i * d + k] + s.drift[k] * dt + amp * s.sync[k];
            }
        });
        if !all_finite(&next) {
            return Err(Error::BlowUp { step });
        }
        self.x = next;
        self.advance(dt);
        Ok(())
    }

    /// One Euler–Maruyama step of the nonlinear copies alone.
    pub fn step_nonlinear_ensemble(&mut self, m: &ModelSpec, plan: &StepPlan) -> Result<()> {
        plan.validate()?;
        self.check_model(m)?;
        let d = self.dim_x;
        let dw = self.dim_w;
        let key = NoiseKey::new(plan.rng_root, Channel::Nonlinear);
        let amp = libm::sqrt(2.0 * plan.dt) * m.sigma;
        let (dt, step) = (plan.dt, self.step_index);
        let law = self.law_for_copies(m, plan)?;
        let (xb, w) = (&self.x_bar, &self.w);
        let mut next = vec![0.0; xb.len()];
        let mut unused = vec![0.0; xb.len()];
        for_each_particle(d, &mut next, &mut unused, |i, s, out, _| {
            let xi = &xb[i * d..(i + 1) * d];
            let wi = &w[i * dw..(i + 1) * dw];
            m.drift.eval_into(xi, wi, &mut s.drift);
            law.add_mean_field(m, xi, wi, &mut s.tmp, &mut s.drift);
            key.stream(step, i as u64).fill_normal(&mut s.sync);
            for k in 0..d {
                out[k] = xi[k] + s.drift[k] * dt + amp * s.sync[k];
            }
        });
        if !all_finite(&next) {
            return Err(Error::BlowUp { step });
        }
        let reference = self.step_reference(m, plan)?;
        self.x_bar = next;
        if reference.is_some() {
            self.reference = reference;
        }
        self.advance(dt);
        Ok(())
    }

    /// One joint step of the coupled system. The cutoffs and the reflection
    /// direction are taken at the pre-step difference `Zⁱ = Xⁱ − X̄ⁱ`.
    pub fn step_coupled(&mut self, m: &ModelSpec, plan: &StepPlan) -> Result<()> {
        plan.validate()?;
        self.check_model(m)?;
        let d = self.dim_x;
        let dw = self.dim_w;
        let sync_key = NoiseKey::new(plan.rng_root, Channel::Synchronous);
        let refl_key = NoiseKey::new(plan.rng_root, Channel::Reflection);
        let amp = libm::sqrt(2.0 * plan.dt) * m.sigma;
        let (dt, step, g, delta) = (plan.dt, self.step_index, self.graph, self.delta);
        let coupling = plan.coupling;
        let law = self.law_for_copies(m, plan)?;
        let (x, xb, w) = (&self.x, &self.x_bar, &self.w);
        let total = complete_sum(m, g, x);
        let total = total.as_deref();
        let mut next_x = vec![0.0; x.len()];
        let mut next_xb = vec![0.0; xb.len()];
        for_each_particle(d, &mut next_x, &mut next_xb, |i, s, out_x, out_xb| {
            let xi = &x[i * d..(i + 1) * d];
            let xbi = &xb[i * d..(i + 1) * d];
            let wi = &w[i * dw..(i + 1) * dw];

            // Particle-system side.
            ips_drift(m, g, x, w, total, i, s);
            for k in 0..d {
                out_x[k] = xi[k] + s.drift[k] * dt;
            }
            // Nonlinear side.
            m.drift.eval_into(xbi, wi, &mut s.drift);
            law.add_mean_field(m, xbi, wi, &mut s.tmp, &mut s.drift);
            for k in 0..d {
                out_xb[k] = xbi[k] + s.drift[k] * dt;
            }

            let mut r2 = 0.0;
            for k in 0..d {
                s.e[k] = xi[k] - xbi[k];
                r2 += s.e[k] * s.e[k];
            }
            let r = libm::sqrt(r2);
            let (phi_s, phi_r) = match coupling {
                CouplingMode::Synchronous => (1.0, 0.0),
                CouplingMode::Reflection => cutoffs(r, delta),
            };
            if r > 0.0 {
                for ek in s.e.iter_mut() {
                    *ek /= r;
                }
            } else {
                s.e.fill(0.0);
            }
            sync_key.stream(step, i as u64).fill_normal(&mut s.sync);
            refl_key.stream(step, i as u64).fill_normal(&mut s.refl);
            let e_dot: f64 = s.e.iter().zip(s.refl.iter()).map(|(a, b)| a * b).sum();
            for k in 0..d {
                let shared = phi_s * s.sync[k];
                out_x[k] += amp * (shared + phi_r * s.refl[k]);
                out_xb[k] += amp * (shared + phi_r * (s.refl[k] - 2.0 * s.e[k] * e_dot));
            }
        });
        if !all_finite(&next_x) || !all_finite(&next_xb) {
            return Err(Error::BlowUp { step });
        }
        let reference = self.step_reference(m, plan)?;
        self.x = next_x;
        self.x_bar = next_xb;
        if reference.is_some() {
            self.reference = reference;
        }
        self.advance(dt);
        Ok(())
    }

    /// Ensemble averages `(E|X̄|², E|X|²)`.
    pub fn moment_tracker(&self) -> (f64, f64) {
        let n = self.n.max(1) as f64;
        let m2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>() / n;
        (m2(&self.x_bar), m2(&self.x))
    }

    /// `|Zⁱ|` for every pair.
    pub fn pair_distances(&self) -> Vec<f64> {
        let d = self.dim_x;
        self.x
            .chunks(d)
            .zip(self.x_bar.chunks(d))
            .map(|(a, b)| libm::sqrt(a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()))
            .collect()
    }

    /// `(1/N) Σ |Zⁱ|`, the transport cost of the coupling itself.
    pub fn mean_pair_distance(&self) -> f64 {
        self.pair_distances().iter().sum::<f64>() / self.n.max(1) as f64
    }

    /// `(1/N) Σ f(|Zⁱ|)`.
    pub fn mean_semimetric(&self, table: &SemimetricTable) -> Result<f64> {
        let mut acc = 0.0;
        for r in self.pair_distances() {
            acc += table.eval_f(r)?;
        }
        Ok(acc / self.n.max(1) as f64)
    }

    /// Empirical measure of `(Xⁱ, ωᵢ)`.
    pub fn ips_measure(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::from_parts(&self.x, self.dim_x, &self.w, self.dim_w)
    }

    /// Empirical measure of `(X̄ⁱ, ωᵢ)`.
    pub fn nl_measure(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::from_parts(&self.x_bar, self.dim_x, &self.w, self.dim_w)
    }

    /// Empirical measure of the reference ensemble, if attached.
    pub fn reference_measure(&self) -> Option<Result<EmpiricalMeasure>> {
        self.reference
            .as_ref()
            .map(|r| EmpiricalMeasure::from_parts(&r.x, self.dim_x, &r.w, self.dim_w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_regular, FamilyTag};
    use crate::models::{BuiltinModel, Drift, Interaction, Kappa};

    #[test]
    fn cutoff_values() {
        assert_eq!(cutoffs(0.0, 0.1), (1.0, 0.0));
        assert_eq!(cutoffs(0.1, 0.1), (0.0, 1.0));
        let (s, r) = cutoffs(0.075, 0.1);
        assert!((s * s + r * r - 1.0).abs() < 1e-15);
        assert!(r > 0.0 && r < 1.0);
    }

    #[test]
    fn deterministic_euler_step() {
        let m = ModelSpec::builder(Drift::Ou).sigma(1e-300).build().unwrap();
        let g = InteractionGraph::from_edges(1, [], 1.0, FamilyTag::Custom).unwrap();
        let mut ens = from_initial_states(&m, &g, vec![1.0], vec![1.0], vec![], 0.1).unwrap();
        ens.step_ips(&m, &StepPlan::new(0.01, 0)).unwrap();
        assert!((ens.x[0] - 0.99).abs() < 1e-15);
        assert!((ens.t - 0.01).abs() < 1e-15);
    }

    #[test]
    fn initial_matching_renumbers() {
        let m = BuiltinModel::Ou.spec(1.0, 0.0).unwrap();
        let g = gen_regular(2, 0, 0).unwrap();
        let ens = from_initial_states(&m, &g, vec![0.0, 1.0], vec![1.0, 0.0], vec![], 0.1).unwrap();
        assert_eq!(ens.x_bar, vec![0.0, 1.0]);
        assert_eq!(ens.mean_pair_distance(), 0.0);
    }

    #[test]
    fn zero_difference_gets_identical_noise() {
        let m = BuiltinModel::DoubleWell.spec(1.0, 0.0).unwrap();
        let g = gen_regular(8, 0, 0).unwrap();
        let x = vec![0.3; 8];
        let mut ens = from_initial_states(&m, &g, x.clone(), x, vec![], 0.05).unwrap();
        for _ in 0..20 {
            ens.step_coupled(&m, &StepPlan::new(0.01, 4)).unwrap();
        }
        assert_eq!(ens.x, ens.x_bar);
    }

    #[test]
    fn one_dimensional_reflection_mirrors_noise() {
        let m = ModelSpec::builder(Drift::Linear { slope: 0.0 })
            .kappa(Kappa::Constant(0.0))
            .build()
            .unwrap();
        let g = gen_regular(16, 0, 0).unwrap();
        let x = vec![2.0; 16];
        let xb = vec![0.0; 16];
        let mut ens = from_initial_states(&m, &g, x, xb, vec![], 0.1).unwrap();
        ens.step_coupled(&m, &StepPlan::new(1e-4, 9)).unwrap();
        for i in 0..16 {
            let dx = ens.x[i] - 2.0;
            let dxb = ens.x_bar[i];
            assert!((dx + dxb).abs() < 1e-15, "noise must be mirrored");
            assert!(dx != 0.0);
        }
    }

    #[test]
    fn linear_fast_path_matches_generic_kernel() {
        use alloc::sync::Arc;
        let k = 0.7;
        let fast = ModelSpec::builder(Drift::DoubleWell)
            .interaction(Interaction::LinearAttraction { k })
            .p(0.6)
            .build()
            .unwrap();
        let slow = ModelSpec::builder(Drift::DoubleWell)
            .interaction(Interaction::Custom(Arc::new(move |x, _, y, _, out: &mut [f64]| {
                out[0] = k * (y[0] - x[0]);
            })))
            .lipschitz(fast.lipschitz)
            .p(0.6)
            .build()
            .unwrap();
        let g = crate::graph::gen_erdos_renyi(40, 0.3, 5).unwrap();
        let law = InitLaw::Normal { mean: 0.0, sd: 1.0 };
        let mut a = init_coupled(&fast, &g, &law, &law, 3, 0.05, false).unwrap();
        let mut b = a.clone();
        let plan = StepPlan::new(0.01, 11);
        for _ in 0..50 {
            a.step_coupled(&fast, &plan).unwrap();
            b.step_coupled(&slow, &plan).unwrap();
        }
        for (u, v) in a.x.iter().zip(&b.x).chain(a.x_bar.iter().zip(&b.x_bar)) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn frozen_mode_needs_reference() {
        let m = BuiltinModel::LinearAttraction.spec(1.0, 0.2).unwrap();
        let g = gen_regular(4, 3, 0).unwrap();
        let law = InitLaw::Normal { mean: 0.0, sd: 1.0 };
        let mut ens = init_coupled(&m, &g, &law, &law, 1, 0.1, false).unwrap();
        let plan = StepPlan::new(0.01, 0).with_mode(EnsembleMode::FrozenReference);
        assert!(ens.step_coupled(&m, &plan).is_err());
        ens.attach_reference(&m, &law, 64, 2).unwrap();
        ens.step_coupled(&m, &plan).unwrap();
    }

    #[test]
    fn blow_up_is_reported() {
        let m = ModelSpec::builder(Drift::Linear { slope: 1e200 })
            .kappa(Kappa::Constant(-1e200))
            .build()
            .unwrap();
        let g = gen_regular(2, 0, 0).unwrap();
        let mut ens = from_initial_states(&m, &g, vec![1e200, 1.0], vec![1.0, 1.0], vec![], 0.1)
            .unwrap();
        assert!(matches!(
            ens.step_ips(&m, &StepPlan::new(1.0, 0)),
            Err(Error::BlowUp { step: 0 })
        ));
    }

    #[test]
    fn init_law_dimension_checked() {
        let m = BuiltinModel::Ou.spec(1.0, 0.0).unwrap();
        let g = gen_regular(3, 0, 0).unwrap();
        let bad = InitLaw::Point(vec![0.0, 0.0]);
        let ok = InitLaw::Point(vec![0.0]);
        assert!(matches!(
            init_coupled(&m, &g, &bad, &ok, 0, 0.1, false),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_moments() {
        let m = BuiltinModel::Ou.spec(1.0, 0.0).unwrap();
        let g = gen_regular(3, 0, 0).unwrap();
        let ens = from_initial_states(&m, &g, vec![0.0; 3], vec![0.0; 3], vec![], 0.1).unwrap();
        assert_eq!(ens.moment_tracker(), (0.0, 0.0));
    }
}
