//! Runs `(N, seed)` cells of the coupled system, aggregates over seeds and
//! writes the CSV/JSON outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use mfgraph_core::analysis::{self, mean_and_se, DecayFit};
use mfgraph_core::graph::graph_stats;
use mfgraph_core::models::{check_one_sided, derive_mf_constants, ModelSpec};
use mfgraph_core::rng::sub_seed;
use mfgraph_core::semimetric::{build_semimetric, SemimetricOptions, SemimetricTable};
use mfgraph_core::simulate::{init_coupled, StepPlan};
use mfgraph_core::transport::{w1, w1_to_reference};
use mfgraph_core::Error as CoreError;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::io::{format_snapshot, git_blob_hash, write_file};

const TAG_GRAPH: u64 = 1;
const TAG_INIT: u64 = 2;
const TAG_NOISE: u64 = 3;
const TAG_REFERENCE: u64 = 4;
const TAG_REF_W1: u64 = 5;

/// Statistics of one cell at one dump time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Record {
    pub t: f64,
    /// `W₁(μᴺ_t, μ̄ᴺ_t)` under the configured cost.
    pub w1: f64,
    pub w1_ref: Option<f64>,
    /// `(1/N) Σ f(|Zⁱ_t|)`
    pub mean_f_z: f64,
    /// `(1/N) Σ |Zⁱ_t|`
    pub mean_abs_z: f64,
    pub m2_nl: f64,
    pub m2_ips: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub n: usize,
    pub seed_index: usize,
    pub d_ng: f64,
    pub i_ng: f64,
    pub records: Vec<Record>,
    /// Step at which the state stopped being finite.
    pub blow_up: Option<u64>,
    pub snapshots: Vec<(u64, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    W1,
    W1Ref,
    MeanF,
    MeanAbsZ,
    M2Nl,
    M2Ips,
}

impl Quantity {
    pub fn of(self, r: &Record) -> Option<f64> {
        match self {
            Quantity::W1 => Some(r.w1),
            Quantity::W1Ref => r.w1_ref,
            Quantity::MeanF => Some(r.mean_f_z),
            Quantity::MeanAbsZ => Some(r.mean_abs_z),
            Quantity::M2Nl => Some(r.m2_nl),
            Quantity::M2Ips => Some(r.m2_ips),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let (mean, se) = mean_and_se(xs);
        Some(MeanSe { mean, se })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub n: usize,
    pub t: f64,
    pub n_cells: usize,
    pub w1: MeanSe,
    pub w1_ref: Option<MeanSe>,
    pub mean_f_z: MeanSe,
    pub mean_abs_z: MeanSe,
    pub m2_nl: MeanSe,
    pub m2_ips: MeanSe,
    pub d_ng: MeanSe,
    pub i_ng: MeanSe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemimetricSummary {
    pub r0: f64,
    pub r1: f64,
    pub c: f64,
    pub c_f: f64,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub semimetric: SemimetricSummary,
    /// Sorted by `(N, seed)`.
    pub cells: Vec<CellResult>,
    pub aggregate: Vec<AggregateRow>,
}

/// Builds the semimetric for the configured model.
pub fn semimetric_for(cfg: &ExperimentConfig, m: &ModelSpec) -> Result<SemimetricTable> {
    let kappa = |r: f64| m.kappa_at(r);
    let opts = SemimetricOptions { n_grid: cfg.semimetric_grid, ..Default::default() };
    Ok(build_semimetric(&kappa, m.sigma, opts)?)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let m = cfg.model()?;
    let one_sided = check_one_sided(&m, 10_000, 10.0, cfg.seed)?;
    if !one_sided.passed {
        return Err(CoreError::ModelRejected(format!(
            "one-sided condition violated by {}",
            one_sided.max_violation
        ))
        .into());
    }
    let table = semimetric_for(cfg, &m)?;
    let delta = cfg.delta.unwrap_or(1e-2 * table.r1);
    let jobs: Vec<(usize, usize)> = cfg
        .n_list
        .iter()
        .flat_map(|&n| (0..cfg.n_seeds).map(move |s| (n, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(n, s)| run_cell(cfg, &m, &table, delta, n, s))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate(&cfg.n_list, &cells);
    Ok(ExperimentResult {
        config: cfg.clone(),
        semimetric: SemimetricSummary { r0: table.r0, r1: table.r1, c: table.c, c_f: table.c_f, delta },
        cells,
        aggregate,
    })
}

fn cell_seed(root: u64, n: usize, s: usize) -> u64 {
    sub_seed(root, n as u64, s as u64)
}

/// One `(N, seed)` cell. A blow-up ends the cell but is not an error.
pub fn run_cell(
    cfg: &ExperimentConfig,
    m: &ModelSpec,
    table: &SemimetricTable,
    delta: f64,
    n: usize,
    s: usize,
) -> Result<CellResult> {
    let base = cell_seed(cfg.seed, n, s);
    let g = cfg.build_graph(n, sub_seed(base, TAG_GRAPH, 0))?;
    let stats = graph_stats(&g, m.p);
    let (ips_init, nl_init) = cfg.init_laws();
    let mut ens = init_coupled(
        m,
        &g,
        &ips_init,
        &nl_init,
        sub_seed(base, TAG_INIT, 0),
        delta,
        cfg.shared_initial_draws,
    )?;
    let mode = cfg.ensemble();
    if mode == mfgraph_core::EnsembleMode::FrozenReference {
        ens.attach_reference(m, &nl_init, cfg.reference_size, sub_seed(base, TAG_REFERENCE, 0))?;
    }
    let plan = StepPlan::new(cfg.dt, sub_seed(base, TAG_NOISE, 0))
        .with_mode(mode)
        .with_coupling(cfg.coupling_mode());
    let metric = cfg.cost_metric();
    let dumps = cfg.dump_steps();
    let snaps = cfg.snapshot_steps();
    let n_steps = cfg.n_steps();

    let mut cell = CellResult {
        n,
        seed_index: s,
        d_ng: stats.d_ng,
        i_ng: stats.i_ng,
        records: Vec::with_capacity(dumps.len()),
        blow_up: None,
        snapshots: Vec::new(),
    };
    let (mut next_dump, mut next_snap) = (0, 0);
    for step in 0..=n_steps {
        if dumps.get(next_dump) == Some(&step) {
            next_dump += 1;
            let ips = ens.ips_measure()?;
            let w1_ref = match (cfg.reference_w1, ens.reference_measure()) {
                (true, Some(r)) => Some(w1_to_reference(
                    &ips,
                    &r?,
                    metric,
                    cfg.reference_draws,
                    sub_seed(base, TAG_REF_W1, step),
                )?),
                _ => None,
            };
            let (m2_nl, m2_ips) = ens.moment_tracker();
            cell.records.push(Record {
                t: step as f64 * cfg.dt,
                w1: w1(&ips, &ens.nl_measure()?, metric)?,
                w1_ref,
                mean_f_z: ens.mean_semimetric(table)?,
                mean_abs_z: ens.mean_pair_distance(),
                m2_nl,
                m2_ips,
            });
        }
        if snaps.get(next_snap) == Some(&step) {
            next_snap += 1;
            cell.snapshots.push((step, format_snapshot(&ens)));
        }
        if step == n_steps {
            break;
        }
        match ens.step_coupled(m, &plan) {
            Ok(()) => {}
            Err(CoreError::BlowUp { step }) => {
                cell.blow_up = Some(step);
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(cell)
}

fn aggregate(n_list: &[usize], cells: &[CellResult]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    let mut sizes: Vec<usize> = n_list.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    for n in sizes {
        let group: Vec<&CellResult> = cells.iter().filter(|c| c.n == n).collect();
        let n_times = group.iter().map(|c| c.records.len()).max().unwrap_or(0);
        for k in 0..n_times {
            let live: Vec<(&CellResult, &Record)> =
                group.iter().filter_map(|c| c.records.get(k).map(|r| (*c, r))).collect();
            let col = |q: Quantity| -> Vec<f64> { live.iter().filter_map(|(_, r)| q.of(r)).collect() };
            let stat = |q: Quantity| MeanSe::of(&col(q)).expect("live cells are nonempty");
            let d_ng: Vec<f64> = live.iter().map(|(c, _)| c.d_ng).collect();
            let i_ng: Vec<f64> = live.iter().map(|(c, _)| c.i_ng).collect();
            rows.push(AggregateRow {
                n,
                t: live[0].1.t,
                n_cells: live.len(),
                w1: stat(Quantity::W1),
                w1_ref: MeanSe::of(&col(Quantity::W1Ref)),
                mean_f_z: stat(Quantity::MeanF),
                mean_abs_z: stat(Quantity::MeanAbsZ),
                m2_nl: stat(Quantity::M2Nl),
                m2_ips: stat(Quantity::M2Ips),
                d_ng: MeanSe::of(&d_ng).expect("nonempty"),
                i_ng: MeanSe::of(&i_ng).expect("nonempty"),
            });
        }
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentResult {
    pub fn cells_csv(&self) -> String {
        let mut out =
            String::from("n,seed,t,w1,w1_ref,mean_f_z,mean_abs_z,m2_nl,m2_ips,d_ng,i_ng\n");
        for c in &self.cells {
            for r in &c.records {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    c.n,
                    c.seed_index,
                    r.t,
                    r.w1,
                    opt(r.w1_ref),
                    r.mean_f_z,
                    r.mean_abs_z,
                    r.m2_nl,
                    r.m2_ips,
                    c.d_ng,
                    c.i_ng
                );
            }
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from(
            "n,t,n_cells,w1_mean,w1_se,w1_ref_mean,w1_ref_se,mean_f_z_mean,mean_f_z_se,\
             mean_abs_z_mean,mean_abs_z_se,m2_nl_mean,m2_nl_se,m2_ips_mean,m2_ips_se,d_ng_mean,i_ng_mean\n",
        );
        for a in &self.aggregate {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                a.n,
                a.t,
                a.n_cells,
                a.w1.mean,
                a.w1.se,
                opt(a.w1_ref.map(|v| v.mean)),
                opt(a.w1_ref.map(|v| v.se)),
                a.mean_f_z.mean,
                a.mean_f_z.se,
                a.mean_abs_z.mean,
                a.mean_abs_z.se,
                a.m2_nl.mean,
                a.m2_nl.se,
                a.m2_ips.mean,
                a.m2_ips.se,
                a.d_ng.mean,
                a.i_ng.mean
            );
        }
        out
    }

    /// Dump times and seed-averaged values of `q` for size `n`.
    pub fn series(&self, n: usize, q: Quantity) -> (Vec<f64>, Vec<f64>) {
        self.aggregate
            .iter()
            .filter(|a| a.n == n)
            .filter_map(|a| {
                let v = match q {
                    Quantity::W1 => Some(a.w1.mean),
                    Quantity::W1Ref => a.w1_ref.map(|v| v.mean),
                    Quantity::MeanF => Some(a.mean_f_z.mean),
                    Quantity::MeanAbsZ => Some(a.mean_abs_z.mean),
                    Quantity::M2Nl => Some(a.m2_nl.mean),
                    Quantity::M2Ips => Some(a.m2_ips.mean),
                };
                v.map(|v| (a.t, v))
            })
            .unzip()
    }

    /// Per-seed plateaus (mean over the final 20% of dump times) of `q`,
    /// summarized per size. Cells that blew up are left out.
    pub fn plateaus(&self, q: Quantity) -> Vec<SweepPoint> {
        let mut sizes = self.config.n_list.clone();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
            .into_iter()
            .map(|n| {
                let per_seed: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| c.n == n && c.blow_up.is_none())
                    .map(|c| {
                        let vals: Vec<f64> = c.records.iter().filter_map(|r| q.of(r)).collect();
                        analysis::plateau(&vals)
                    })
                    .collect();
                let (plateau, se) = mean_and_se(&per_seed);
                SweepPoint { param: n as f64, plateau, se, n_cells: per_seed.len() }
            })
            .collect()
    }

    pub fn failed_cells(&self) -> Vec<FailedCell> {
        self.cells
            .iter()
            .filter_map(|c| c.blow_up.map(|step| FailedCell { n: c.n, seed: c.seed_index, step }))
            .collect()
    }
}

/// Decay fit of the seed-averaged trace of `q` at size `n`.
pub fn fit_decay(result: &ExperimentResult, n: usize, q: Quantity, window: (f64, f64)) -> Result<DecayFit> {
    let (t, v) = result.series(n, q);
    Ok(analysis::fit_decay(&t, &v, window)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub param: f64,
    pub plateau: f64,
    pub se: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Slope of `log plateau` against `log param`.
    pub slope: f64,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,plateau,se\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.param, p.plateau, p.se);
        }
        out
    }
}

pub fn sweep_report(points: &[SweepPoint]) -> Result<SweepReport> {
    if points.len() < 3 {
        return Err(HarnessError::Config(format!(
            "a sweep needs at least 3 points, got {}",
            points.len()
        )));
    }
    let params: Vec<f64> = points.iter().map(|p| p.param).collect();
    let values: Vec<f64> = points.iter().map(|p| p.plateau).collect();
    let slope = analysis::loglog_slope(&params, &values)?;
    Ok(SweepReport { points: points.to_vec(), slope })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FailedCell {
    pub n: usize,
    pub seed: usize,
    pub step: u64,
}

/// Uniform-in-time check of the second moment of the nonlinear copies: after
/// a burn-in of `t_end/10` the trace stays below `3×` its value at
/// `t_end/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentMonitor {
    pub mid_value: f64,
    pub max_after_burn_in: f64,
    pub ratio: f64,
    pub passed: bool,
}

pub fn second_moment_monitor(times: &[f64], m2: &[f64], t_end: f64) -> MomentMonitor {
    let mid = times
        .iter()
        .zip(m2)
        .min_by(|a, b| (a.0 - t_end / 2.0).abs().total_cmp(&(b.0 - t_end / 2.0).abs()))
        .map(|(_, v)| *v)
        .unwrap_or(f64::NAN);
    let max_after = times
        .iter()
        .zip(m2)
        .filter(|(t, _)| **t >= t_end / 10.0)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let ratio = max_after / mid;
    MomentMonitor { mid_value: mid, max_after_burn_in: max_after, ratio, passed: ratio <= 3.0 }
}

/// `(2 p C_f L_Γ, m_F)`: the moment bound's smallness condition asks for
/// the first to be below the second. `m_F` is taken on a grid up to 10.
pub fn moment_hypothesis(m: &ModelSpec, table: &SemimetricTable) -> Result<(f64, f64)> {
    let grid: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
    let (_, m_f) = derive_mf_constants(m, &grid)?;
    let l_gamma = m.lipschitz.semimetric_constant(table.c_f);
    Ok((2.0 * m.p * table.c_f_upper * l_gamma, m_f))
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub outputs: BTreeMap<String, String>,
    pub semimetric: SemimetricSummary,
    pub failed_cells: Vec<FailedCell>,
    pub plateaus: Vec<SweepPoint>,
    pub sweep_slope: Option<f64>,
    pub aggregate: Vec<AggregateRow>,
}

/// Writes `cells.csv`, `aggregate.csv`, snapshots, optionally `sweep.csv`,
/// and the `summary.json` sidecar into `dir`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path, with_sweep: bool) -> Result<Summary> {
    let mut files: Vec<(String, String)> = vec![
        ("cells.csv".into(), result.cells_csv()),
        ("aggregate.csv".into(), result.aggregate_csv()),
    ];
    for c in &result.cells {
        for (step, text) in &c.snapshots {
            files.push((format!("snapshots/n{}_seed{}_step{}.csv", c.n, c.seed_index, step), text.clone()));
        }
    }
    let plateaus = result.plateaus(Quantity::W1);
    let mut sweep_slope = None;
    if with_sweep {
        let report = sweep_report(&plateaus)?;
        sweep_slope = Some(report.slope);
        files.push(("sweep.csv".into(), report.to_csv()));
    }
    let mut outputs = BTreeMap::new();
    for (name, text) in &files {
        write_file(&dir.join(name), text)?;
        outputs.insert(name.clone(), git_blob_hash(text.as_bytes()));
    }
    let summary = Summary {
        config_hash: git_blob_hash(serde_json::to_string(&result.config)?.as_bytes()),
        outputs,
        semimetric: result.semimetric,
        failed_cells: result.failed_cells(),
        plateaus,
        sweep_slope,
        aggregate: result.aggregate.clone(),
    };
    write_file(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
