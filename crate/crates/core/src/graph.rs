//! Interaction graphs and their degree statistics.
//!
//! A graph is a directed 0/1 adjacency `ξ` stored row-wise (CSR): row `i`
//! lists the out-neighbours `j` with `ξ_ij = 1`. The interaction scaling
//! `α_N` lives on the graph because it is tied to the graph regime (for
//! instance `α_N = 1/q_N` for sparse Erdős–Rényi graphs).

use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::sub_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyTag {
    Regular,
    ErdosRenyi,
    Community,
    Custom,
}

impl FamilyTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FamilyTag::Regular => "regular",
            FamilyTag::ErdosRenyi => "erdos_renyi",
            FamilyTag::Community => "community",
            FamilyTag::Custom => "custom",
        }
    }
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FamilyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(FamilyTag::Regular),
            "erdos_renyi" => Ok(FamilyTag::ErdosRenyi),
            "community" => Ok(FamilyTag::Community),
            "custom" => Ok(FamilyTag::Custom),
            other => Err(Error::invalid(alloc::format!("unknown graph family `{other}`"))),
        }
    }
}

/// Directed interaction graph with scaling `α_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    n: usize,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    alpha: f64,
    family: FamilyTag,
}

impl InteractionGraph {
    /// Builds a graph from directed `(i, j)` pairs. Duplicates collapse to a
    /// single edge; self-loops and out-of-range indices are rejected.
    pub fn from_edges<I>(n: usize, edges: I, alpha: f64, family: FamilyTag) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        check_alpha(alpha)?;
        if n > u32::MAX as usize {
            return Err(Error::invalid("too many vertices"));
        }
        let mut rows: Vec<Vec<u32>> = (0..n).map(|_| Vec::new()).collect();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(alloc::format!(
                    "edge ({i}, {j}) out of range for {n} vertices"
                )));
            }
            if i == j {
                return Err(Error::invalid(alloc::format!("self-loop at vertex {i}")));
            }
            rows[i].push(j as u32);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for mut row in rows {
            row.sort_unstable();
            row.dedup();
            targets.extend_from_slice(&row);
            offsets.push(targets.len());
        }
        Ok(InteractionGraph {
            n,
            offsets,
            targets,
            alpha,
            family,
        })
    }

    fn from_rows(n: usize, rows: RowBuilder, alpha: f64, family: FamilyTag) -> Self {
        debug_assert_eq!(rows.offsets.len(), n + 1);
        InteractionGraph {
            n,
            offsets: rows.offsets,
            targets: rows.targets,
            alpha,
            family,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn family(&self) -> FamilyTag {
        self.family
    }

    /// Replaces `α_N`, e.g. with `1/q` for the sparse Erdős–Rényi regime.
    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        self.alpha = alpha;
        Ok(self)
    }

    pub fn with_family(mut self, family: FamilyTag) -> Self {
        self.family = family;
        self
    }

    /// Sorted out-neighbours of `i`.
    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.neighbors(i).iter().map(move |&j| (i, j as usize)))
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = alloc::vec![0usize; self.n];
        for &j in &self.targets {
            d[j as usize] += 1;
        }
        d
    }

    pub fn is_complete(&self) -> bool {
        self.n > 0 && self.edge_count() == self.n * (self.n - 1)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(alloc::format!("alpha must be positive, got {alpha}")))
    }
}

fn check_probability(name: &str, q: f64) -> Result<()> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(Error::invalid(alloc::format!("{name} must lie in [0, 1], got {q}")))
    }
}

struct RowBuilder {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl RowBuilder {
    fn new(n: usize) -> Self {
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        RowBuilder {
            offsets,
            targets: Vec::new(),
        }
    }

    fn push(&mut self, j: usize) {
        self.targets.push(j as u32);
    }

    fn end_row(&mut self) {
        self.offsets.push(self.targets.len());
    }
}

/// Circulant `degree`-regular digraph: `i -> i+1, ..., i+degree (mod n)`.
///
/// The construction is deterministic; `seed` is accepted so that every
/// generator shares one signature.
pub fn gen_regular(n: usize, degree: usize, _seed: u64) -> Result<InteractionGraph> {
    if degree >= n {
        return Err(Error::invalid(alloc::format!(
            "degree {degree} must be smaller than n = {n}"
        )));
    }
    let mut rows = RowBuilder::new(n);
    for i in 0..n {
        let mut row: Vec<usize> = (1..=degree).map(|k| (i + k) % n).collect();
        row.sort_unstable();
        for j in row {
            rows.push(j);
        }
        rows.end_row();
    }
    Ok(InteractionGraph::from_rows(n, rows, 1.0, FamilyTag::Regular))
}

/// Directed Erdős–Rényi graph: each ordered pair `i != j` independently with
/// probability `q`. `α_N` is set to 1.
pub fn gen_erdos_renyi(n: usize, q: f64, seed: u64) -> Result<InteractionGraph> {
    check_probability("q", q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = RowBuilder::new(n);
    for i in 0..n {
        for j in 0..n {
            if j != i && rng.random::<f64>() < q {
                rows.push(j);
            }
        }
        rows.end_row();
    }
    Ok(InteractionGraph::from_rows(n, rows, 1.0, FamilyTag::ErdosRenyi))
}

/// Parameters of a community (block) model with `blocks` groups of
/// `block_size` vertices each.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityParams {
    pub blocks: usize,
    pub block_size: usize,
    pub q_intra: f64,
    /// Row-major `blocks × blocks` table of inter-block probabilities; the
    /// diagonal is ignored. An empty table means no inter-block edges.
    pub q_inter: Vec<f64>,
}

impl CommunityParams {
    /// Same inter-block probability for every pair of distinct blocks.
    pub fn uniform(blocks: usize, block_size: usize, q_intra: f64, q_inter: f64) -> Self {
        CommunityParams {
            blocks,
            block_size,
            q_intra,
            q_inter: alloc::vec![q_inter; blocks * blocks],
        }
    }

    fn inter(&self, k: usize, l: usize) -> f64 {
        if self.q_inter.is_empty() {
            0.0
        } else {
            self.q_inter[k * self.blocks + l]
        }
    }

    fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.block_size == 0 {
            return Err(Error::invalid("community model needs blocks >= 1 and block_size >= 1"));
        }
        check_probability("q_intra", self.q_intra)?;
        if self.q_intra == 0.0 {
            return Err(Error::invalid("q_intra must be positive (alpha = 1/q_intra)"));
        }
        if !self.q_inter.is_empty() {
            if self.q_inter.len() != self.blocks * self.blocks {
                return Err(Error::invalid(alloc::format!(
                    "q_inter must have {} entries, got {}",
                    self.blocks * self.blocks,
                    self.q_inter.len()
                )));
            }
            for &q in &self.q_inter {
                check_probability("q_inter", q)?;
            }
        }
        Ok(())
    }
}

/// Community graph on `N = blocks · block_size` vertices; vertex `k·m + i` is
/// member `i` of block `k`. `α_N = 1/q_intra`.
pub fn gen_community(params: &CommunityParams, seed: u64) -> Result<InteractionGraph> {
    params.validate()?;
    let m = params.block_size;
    let n = params.blocks * m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = RowBuilder::new(n);
    for i in 0..n {
        let ki = i / m;
        for j in 0..n {
            if j == i {
                continue;
            }
            let kj = j / m;
            let q = if ki == kj { params.q_intra } else { params.inter(ki, kj) };
            if rng.random::<f64>() < q {
                rows.push(j);
            }
        }
        rows.end_row();
    }
    Ok(InteractionGraph::from_rows(
        n,
        rows,
        1.0 / params.q_intra,
        FamilyTag::Community,
    ))
}

/// Degree statistics of a graph relative to a limit density `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub d_out: Vec<usize>,
    pub d_in: Vec<usize>,
    /// `max_i α_N (d_i + d̃_i) / N`
    pub d_ng: f64,
    /// `max_i |α_N d_i / N − p|`
    pub i_ng: f64,
}

pub fn graph_stats(g: &InteractionGraph, p: f64) -> GraphStats {
    let d_out = g.out_degrees();
    let d_in = g.in_degrees();
    let n = g.n_vertices() as f64;
    let alpha = g.alpha();
    let mut d_ng = 0.0f64;
    let mut i_ng = 0.0f64;
    for (&o, &i) in d_out.iter().zip(&d_in) {
        d_ng = d_ng.max(alpha * (o + i) as f64 / n);
        i_ng = i_ng.max((alpha * o as f64 / n - p).abs());
    }
    GraphStats {
        d_out,
        d_in,
        d_ng,
        i_ng,
    }
}

/// A random-graph family indexed by its size, as used in concentration
/// checks of `d_i / (N q_N)` around `1/r`.
pub trait GraphFamily: Sync {
    fn generate(&self, n: usize, seed: u64) -> Result<InteractionGraph>;
    /// Intra-block edge probability `q_N` at size `n`.
    fn edge_probability(&self, n: usize) -> f64;
    /// Limit of `d_i / (N q_N)`, i.e. `1/r` for `r` blocks.
    fn target_ratio(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErdosRenyiFamily {
    pub q: f64,
}

impl GraphFamily for ErdosRenyiFamily {
    fn generate(&self, n: usize, seed: u64) -> Result<InteractionGraph> {
        gen_erdos_renyi(n, self.q, seed)
    }

    fn edge_probability(&self, _n: usize) -> f64 {
        self.q
    }

    fn target_ratio(&self) -> f64 {
        1.0
    }
}

/// Community family with fixed block count; `n` must be a multiple of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommunityFamily {
    pub blocks: usize,
    pub q_intra: f64,
    pub q_inter: f64,
}

impl GraphFamily for CommunityFamily {
    fn generate(&self, n: usize, seed: u64) -> Result<InteractionGraph> {
        if self.blocks == 0 || !n.is_multiple_of(self.blocks) {
            return Err(Error::invalid(alloc::format!(
                "n = {n} is not a multiple of {} blocks",
                self.blocks
            )));
        }
        let params =
            CommunityParams::uniform(self.blocks, n / self.blocks, self.q_intra, self.q_inter);
        gen_community(&params, seed)
    }

    fn edge_probability(&self, _n: usize) -> f64 {
        self.q_intra
    }

    fn target_ratio(&self) -> f64 {
        1.0 / self.blocks as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationRow {
    pub n: usize,
    /// Max over seeds and vertices of `|d_i/(N q_N) − 1/r|`.
    pub max_deviation: f64,
    /// Mean over seeds of the per-graph maximum.
    pub mean_max_deviation: f64,
    /// `sqrt(c log N / (N q_N))`
    pub bound: f64,
}

fn max_deviation(g: &InteractionGraph, q: f64, target: f64) -> f64 {
    let n = g.n_vertices();
    let denom = n as f64 * q;
    (0..n)
        .map(|i| (g.neighbors(i).len() as f64 / denom - target).abs())
        .fold(0.0, f64::max)
}

/// Empirical sup-deviation of normalized out-degrees against the
/// `sqrt(c log N / (N q_N))` envelope, one row per size.
pub fn verify_concentration<F: GraphFamily + ?Sized>(
    family: &F,
    sizes: &[usize],
    n_seeds: usize,
    c: f64,
    root_seed: u64,
) -> Result<Vec<ConcentrationRow>> {
    if sizes.is_empty() {
        return Err(Error::invalid("sizes must be nonempty"));
    }
    if n_seeds == 0 {
        return Err(Error::invalid("n_seeds must be at least 1"));
    }
    if !(c > 0.0) {
        return Err(Error::invalid("c must be positive"));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let q = family.edge_probability(n);
        let target = family.target_ratio();
        let one = |s: usize| -> Result<f64> {
            let g = family.generate(n, sub_seed(root_seed, n as u64, s as u64))?;
            Ok(max_deviation(&g, q, target))
        };
        #[cfg(feature = "parallel")]
        let devs: Vec<f64> = {
            use rayon::prelude::*;
            (0..n_seeds).into_par_iter().map(one).collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let devs: Vec<f64> = (0..n_seeds).map(one).collect::<Result<_>>()?;

        let max = devs.iter().copied().fold(0.0, f64::max);
        let mean = devs.iter().sum::<f64>() / n_seeds as f64;
        let nf = n as f64;
        rows.push(ConcentrationRow {
            n,
            max_deviation: max,
            mean_max_deviation: mean,
            bound: libm::sqrt(c * libm::log(nf) / (nf * q)),
        });
    }
    Ok(rows)
}

impl fmt::Display for ConcentrationRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.n, self.max_deviation, self.mean_max_deviation, self.bound
        )
    }
}

impl ConcentrationRow {
    pub fn csv_header() -> alloc::string::String {
        "n,max_deviation,mean_max_deviation,bound".to_string()
    }
}
