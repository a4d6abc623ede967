//! Exact L¹-Wasserstein distances between equal-size uniform empirical
//! measures.
//!
//! For two clouds of `N` points with weight `1/N` the optimal coupling can be
//! taken to be a permutation, so `W₁` is a linear assignment problem. It is
//! solved with the O(N³) Hungarian method; in one dimension the sorted
//! pairing is optimal and serves as an independent oracle.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Uniform empirical measure on points of `ℝ^{d+d′}` (state ⊕ disorder).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<f64>,
    state_dim: usize,
    disorder_dim: usize,
}

impl EmpiricalMeasure {
    /// Points stored row-major, `state_dim + disorder_dim` coordinates each.
    pub fn new(points: Vec<f64>, state_dim: usize, disorder_dim: usize) -> Result<Self> {
        let dim = state_dim + disorder_dim;
        if dim == 0 {
            return Err(Error::invalid("points need at least one coordinate"));
        }
        if points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::invalid(alloc::format!(
                "{} coordinates do not form a nonempty cloud of dimension {dim}",
                points.len()
            )));
        }
        Ok(EmpiricalMeasure {
            points,
            state_dim,
            disorder_dim,
        })
    }

    /// One-dimensional samples.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec(), 1, 0)
    }

    /// Interleaves per-particle states and disorders.
    pub fn from_parts(x: &[f64], dim_x: usize, w: &[f64], dim_w: usize) -> Result<Self> {
        if dim_x == 0 || !x.len().is_multiple_of(dim_x) {
            return Err(Error::invalid("state array does not match its dimension"));
        }
        let n = x.len() / dim_x;
        if w.len() != n * dim_w {
            return Err(Error::SizeMismatch { left: n * dim_w, right: w.len() });
        }
        let mut points = Vec::with_capacity(n * (dim_x + dim_w));
        for i in 0..n {
            points.extend_from_slice(&x[i * dim_x..(i + 1) * dim_x]);
            points.extend_from_slice(&w[i * dim_w..(i + 1) * dim_w]);
        }
        Self::new(points, dim_x, dim_w)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.state_dim + self.disorder_dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points[i * d..(i + 1) * d]
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let mut points = Vec::with_capacity(idx.len() * self.dim());
        for &i in idx {
            points.extend_from_slice(self.point(i));
        }
        EmpiricalMeasure {
            points,
            state_dim: self.state_dim,
            disorder_dim: self.disorder_dim,
        }
    }
}

/// Ground cost between two points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostMetric {
    /// Euclidean norm of the full difference.
    Euclidean,
    /// `|x − x′| + |ω − ω′|`, Euclidean on each block.
    #[default]
    StateDisorderSum,
}

fn norm(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum())
}

impl CostMetric {
    pub fn cost(self, a: &[f64], b: &[f64], state_dim: usize) -> f64 {
        match self {
            CostMetric::Euclidean => norm(a, b),
            CostMetric::StateDisorderSum => {
                norm(&a[..state_dim], &b[..state_dim]) + norm(&a[state_dim..], &b[state_dim..])
            }
        }
    }
}

/// `W₁` of two equal-size one-dimensional samples via sorting.
pub fn w1_sorted_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(Error::invalid("samples must be nonempty"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Optimal pairing of two one-dimensional samples: `perm[i]` is the index in
/// `b` matched with `a[i]`. Ties keep the original order.
pub fn sorted_matching_1d(a: &[f64], b: &[f64]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { left: a.len(), right: b.len() });
    }
    let mut ia: Vec<usize> = (0..a.len()).collect();
    let mut ib: Vec<usize> = (0..b.len()).collect();
    ia.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
    ib.sort_by(|&i, &j| b[i].total_cmp(&b[j]));
    let mut perm = vec![0; a.len()];
    for (&i, &j) in ia.iter().zip(&ib) {
        perm[i] = j;
    }
    Ok(perm)
}

fn check_pair(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { left: a.len(), right: b.len() });
    }
    if a.state_dim != b.state_dim || a.disorder_dim != b.disorder_dim {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(())
}

/// Exact `W₁` and an optimal permutation (`perm[i]` = index in `b` matched
/// with point `i` of `a`). Among optimal permutations the lexicographically
/// smallest is returned.
pub fn w1_assignment(a: &EmpiricalMeasure, b: &EmpiricalMeasure, metric: CostMetric) -> Result<(f64, Vec<usize>)> {
    check_pair(a, b)?;
    let n = a.len();
    let mut cost = Vec::with_capacity(n * n);
    for i in 0..n {
        let p = a.point(i);
        for j in 0..n {
            cost.push(metric.cost(p, b.point(j), a.state_dim));
        }
    }
    let perm = solve_assignment(&cost, n);
    let total: f64 = (0..n).map(|i| cost[i * n + perm[i]]).sum();
    Ok((total / n as f64, perm))
}

/// `W₁` with the cheapest exact method: sorting for scalar clouds, the
/// assignment solver otherwise.
pub fn w1(a: &EmpiricalMeasure, b: &EmpiricalMeasure, metric: CostMetric) -> Result<f64> {
    check_pair(a, b)?;
    if a.dim() == 1 {
        w1_sorted_1d(&a.points, &b.points)
    } else {
        w1_assignment(a, b, metric).map(|(d, _)| d)
    }
}

/// Minimum-cost perfect matching of a dense `n × n` cost matrix; returns
/// `row -> column`, lexicographically smallest among optimal matchings.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    let (mut row_to_col, u, v) = hungarian(cost, n);
    let scale = cost.iter().fold(1.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-12 * scale * n as f64;
    let optimum: f64 = (0..n).map(|i| cost[i * n + row_to_col[i]]).sum();
    let mut lex = row_to_col.clone();
    lexicographic_refine(cost, n, &u, &v, tol, &mut lex);
    let lex_cost: f64 = (0..n).map(|i| cost[i * n + lex[i]]).sum();
    if lex_cost <= optimum + tol {
        row_to_col = lex;
    }
    row_to_col
}

/// Shortest augmenting path Hungarian method with dual potentials.
fn hungarian(cost: &[f64], n: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        minv.fill(inf);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            let row = &cost[(i0 - 1) * n..i0 * n];
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[owner[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Every optimal matching uses only edges that are tight for an optimal dual
/// pair `(u, v)`. Walks rows in order and moves each onto its smallest tight
/// column whenever an alternating path through the unfixed rows allows it.
fn lexicographic_refine(cost: &[f64], n: usize, u: &[f64], v: &[f64], tol: f64, m: &mut [usize]) {
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| cost[i * n + j] - u[i] - v[j] <= tol).collect())
        .collect();
    let mut col_owner = vec![0usize; n];
    for (i, &j) in m.iter().enumerate() {
        col_owner[j] = i;
    }
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for i in 0..n {
        for &j in &tight[i] {
            if j >= m[i] {
                break;
            }
            let target = m[i];
            let start = col_owner[j];
            if start <= i {
                continue;
            }
            seen.fill(false);
            queue.clear();
            seen[start] = true;
            prev[start] = None;
            queue.push_back(start);
            let mut end = None;
            'bfs: while let Some(r) = queue.pop_front() {
                for &c in &tight[r] {
                    if c == j {
                        continue;
                    }
                    if c == target {
                        end = Some(r);
                        break 'bfs;
                    }
                    let next = col_owner[c];
                    if next > i && !seen[next] {
                        seen[next] = true;
                        prev[next] = Some((r, c));
                        queue.push_back(next);
                    }
                }
            }
            if let Some(last) = end {
                let mut r = last;
                let mut take = target;
                loop {
                    m[r] = take;
                    col_owner[take] = r;
                    match prev[r] {
                        Some((pr, c)) => {
                            take = c;
                            r = pr;
                        }
                        None => break,
                    }
                }
                m[i] = j;
                col_owner[j] = i;
                break;
            }
        }
    }
}

/// Estimate of `W₁(a, ρ)` from a large sample of `ρ`: the mean over
/// `n_draws` uniform subsamples of `ref_sample` (without replacement, same
/// size as `a`) of the exact distance. Biased upwards by the subsample's own
/// sampling error.
pub fn w1_to_reference(
    a: &EmpiricalMeasure,
    ref_sample: &EmpiricalMeasure,
    metric: CostMetric,
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    let needed = 10 * a.len();
    if ref_sample.len() < needed {
        return Err(Error::ReferenceTooSmall { got: ref_sample.len(), needed });
    }
    if n_draws < 10 {
        return Err(Error::invalid("at least 10 subsample draws are required"));
    }
    if a.dim() != ref_sample.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: ref_sample.dim() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..n_draws {
        let mut idx = sample(&mut rng, ref_sample.len(), a.len()).into_vec();
        idx.sort_unstable();
        acc += w1(a, &ref_sample.subset(&idx), metric)?;
    }
    Ok(acc / n_draws as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_examples() {
        assert_eq!(w1_sorted_1d(&[0.3, 2.0], &[0.3, 2.0]).unwrap(), 0.0);
        assert_eq!(w1_sorted_1d(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(w1_sorted_1d(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(w1_sorted_1d(&[0.0], &[1.0, 2.0]), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn identical_clouds_give_identity() {
        let a = EmpiricalMeasure::new(vec![0.0, 1.0, 2.0, 5.0, -1.0, 3.0], 2, 0).unwrap();
        let (d, perm) = w1_assignment(&a, &a, CostMetric::Euclidean).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(perm, vec![0, 1, 2]);
    }

    #[test]
    fn swap_in_the_plane() {
        let a = EmpiricalMeasure::new(vec![0.0, 0.0, 1.0, 0.0], 2, 0).unwrap();
        let b = EmpiricalMeasure::new(vec![1.0, 0.0, 0.0, 0.0], 2, 0).unwrap();
        let (d, perm) = w1_assignment(&a, &b, CostMetric::Euclidean).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(perm, vec![1, 0]);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        // Every permutation costs the same.
        let a = EmpiricalMeasure::from_scalars(&[0.0, 0.0, 0.0]).unwrap();
        let b = EmpiricalMeasure::from_scalars(&[1.0, 1.0, 1.0]).unwrap();
        let (_, perm) = w1_assignment(&a, &b, CostMetric::Euclidean).unwrap();
        assert_eq!(perm, vec![0, 1, 2]);
        // Two optimal matchings: {0->0, 1->1} and {0->1, 1->0}.
        let cost = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(solve_assignment(&cost, 2), vec![0, 1]);
        let cost = [2.0, 1.0, 1.0, 2.0];
        assert_eq!(solve_assignment(&cost, 2), vec![1, 0]);
    }

    #[test]
    fn state_disorder_cost_adds_blocks() {
        let a = EmpiricalMeasure::from_parts(&[0.0], 1, &[0.0], 1).unwrap();
        let b = EmpiricalMeasure::from_parts(&[3.0], 1, &[4.0], 1).unwrap();
        assert_eq!(w1_assignment(&a, &b, CostMetric::StateDisorderSum).unwrap().0, 7.0);
        assert_eq!(w1_assignment(&a, &b, CostMetric::Euclidean).unwrap().0, 5.0);
    }

    #[test]
    fn reference_guard() {
        let a = EmpiricalMeasure::from_scalars(&[0.0; 5]).unwrap();
        let r = EmpiricalMeasure::from_scalars(&[0.0; 49]).unwrap();
        assert!(matches!(
            w1_to_reference(&a, &r, CostMetric::Euclidean, 10, 0),
            Err(Error::ReferenceTooSmall { got: 49, needed: 50 })
        ));
    }

    #[test]
    fn empty_or_ragged_clouds_rejected() {
        assert!(EmpiricalMeasure::new(vec![], 1, 0).is_err());
        assert!(EmpiricalMeasure::new(vec![1.0, 2.0, 3.0], 2, 0).is_err());
        assert!(EmpiricalMeasure::new(vec![1.0], 0, 0).is_err());
    }
}
