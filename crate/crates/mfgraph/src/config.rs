//! Experiment and concentration-check configuration files (flat TOML).

use std::path::{Path, PathBuf};

use mfgraph_core::graph::{
    gen_community, gen_erdos_renyi, gen_regular, CommunityFamily, CommunityParams, ErdosRenyiFamily,
    GraphFamily, InteractionGraph,
};
use mfgraph_core::models::{DisorderLaw, Drift, Interaction, ModelSpec};
use mfgraph_core::simulate::{CouplingMode, EnsembleMode, InitLaw};
use mfgraph_core::transport::CostMetric;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftName {
    Ou,
    DoubleWell,
    DisorderedCubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InteractionName {
    #[default]
    None,
    LinearAttraction,
    KuramotoLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphName {
    Complete,
    Empty,
    Regular,
    ErdosRenyi,
    Community,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    SelfConsistent,
    FrozenReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CouplingName {
    #[default]
    Reflection,
    Synchronous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    #[default]
    StateDisorderSum,
    Euclidean,
}

fn one() -> f64 {
    1.0
}

fn default_reference_size() -> usize {
    8192
}

fn default_reference_draws() -> usize {
    10
}

fn default_grid() -> usize {
    4096
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub drift: DriftName,
    #[serde(default)]
    pub interaction: InteractionName,
    #[serde(default)]
    pub interaction_strength: f64,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "one")]
    pub p: f64,
    /// Disorder law `U[lo, hi]`; `disordered_cubic` defaults to `[−1/2, 1/2]`.
    pub disorder_lo: Option<f64>,
    pub disorder_hi: Option<f64>,

    pub graph: GraphName,
    pub degree: Option<usize>,
    pub q: Option<f64>,
    pub blocks: Option<usize>,
    pub q_inter: Option<f64>,
    /// Defaults to `1/q` for random families and 1 otherwise.
    pub alpha: Option<f64>,

    pub n_list: Vec<usize>,
    pub n_seeds: usize,
    #[serde(default)]
    pub seed: u64,
    pub dt: f64,
    pub t_end: f64,
    pub dump_every: Option<f64>,
    pub dump_times: Option<Vec<f64>>,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,

    /// Cutoff `δ`; `10⁻² R₁` when unset.
    pub delta: Option<f64>,
    #[serde(default)]
    pub coupling: CouplingName,
    #[serde(default)]
    pub ensemble_mode: ModeName,
    #[serde(default = "default_reference_size")]
    pub reference_size: usize,
    /// Also record the subsample estimate of `W₁` to the reference ensemble.
    #[serde(default)]
    pub reference_w1: bool,
    #[serde(default = "default_reference_draws")]
    pub reference_draws: usize,
    #[serde(default)]
    pub metric: MetricName,

    #[serde(default)]
    pub ips_init_mean: f64,
    #[serde(default = "one")]
    pub ips_init_sd: f64,
    #[serde(default)]
    pub nl_init_mean: f64,
    #[serde(default = "one")]
    pub nl_init_sd: f64,
    /// Draw both initial clouds from one stream (equal laws give equal clouds).
    #[serde(default)]
    pub shared_initial_draws: bool,

    #[serde(default = "default_grid")]
    pub semimetric_grid: usize,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if !(self.t_end > 0.0) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if !(self.dt > 0.0) || self.dt > self.t_end {
            return bad(format!("dt must be in (0, t_end], got {}", self.dt));
        }
        if self.n_seeds == 0 {
            return bad("n_seeds must be at least 1".into());
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return bad("n_list must be nonempty with positive sizes".into());
        }
        if self.dump_every.is_some() == self.dump_times.is_some() {
            return bad("set exactly one of dump_every and dump_times".into());
        }
        if let Some(h) = self.dump_every {
            if !(h > 0.0) {
                return bad("dump_every must be positive".into());
            }
        }
        for &t in self.dump_times.iter().flatten().chain(&self.snapshot_times) {
            if !(0.0..=self.t_end).contains(&t) {
                return bad(format!("dump time {t} outside [0, t_end]"));
            }
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return bad("delta must be positive".into());
            }
        }
        if self.ensemble_mode == ModeName::FrozenReference && self.reference_size == 0 {
            return bad("reference_size must be positive".into());
        }
        match self.graph {
            GraphName::Regular if self.degree.is_none() => bad("regular graphs need `degree`".into()),
            GraphName::ErdosRenyi if self.q.is_none() => bad("erdos_renyi graphs need `q`".into()),
            GraphName::Community if self.q.is_none() || self.blocks.is_none() => {
                bad("community graphs need `q` and `blocks`".into())
            }
            _ => Ok(()),
        }?;
        self.model()?;
        Ok(())
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let drift = match self.drift {
            DriftName::Ou => Drift::Ou,
            DriftName::DoubleWell => Drift::DoubleWell,
            DriftName::DisorderedCubic => Drift::DisorderedCubic,
        };
        let k = self.interaction_strength;
        let interaction = match self.interaction {
            InteractionName::None => Interaction::Zero,
            InteractionName::LinearAttraction => Interaction::LinearAttraction { k },
            InteractionName::KuramotoLike => Interaction::KuramotoLike { k },
        };
        let default_range = match self.drift {
            DriftName::DisorderedCubic => Some((-0.5, 0.5)),
            _ => None,
        };
        let range = match (self.disorder_lo, self.disorder_hi) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            (None, None) => default_range,
            _ => return Err(HarnessError::Config("set both disorder_lo and disorder_hi".into())),
        };
        let mut b = ModelSpec::builder(drift)
            .interaction(interaction)
            .sigma(self.sigma)
            .p(self.p);
        if let Some((lo, hi)) = range {
            b = b.disorder(DisorderLaw::Uniform { lo, hi });
        }
        Ok(b.build()?)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(match self.graph {
            GraphName::ErdosRenyi | GraphName::Community => 1.0 / self.q.unwrap_or(1.0),
            _ => 1.0,
        })
    }

    pub fn build_graph(&self, n: usize, seed: u64) -> Result<InteractionGraph> {
        let g = match self.graph {
            GraphName::Complete => gen_regular(n, n - 1, seed)?,
            GraphName::Empty => gen_regular(n, 0, seed)?,
            GraphName::Regular => gen_regular(n, self.degree.unwrap_or(0), seed)?,
            GraphName::ErdosRenyi => gen_erdos_renyi(n, self.q.unwrap_or(0.0), seed)?,
            GraphName::Community => {
                let blocks = self.blocks.unwrap_or(1);
                if !n.is_multiple_of(blocks) {
                    return Err(HarnessError::Config(format!(
                        "N = {n} is not a multiple of {blocks} blocks"
                    )));
                }
                let params = CommunityParams::uniform(
                    blocks,
                    n / blocks,
                    self.q.unwrap_or(0.0),
                    self.q_inter.unwrap_or(0.0),
                );
                gen_community(&params, seed)?
            }
        };
        Ok(g.with_alpha(self.alpha())?)
    }

    /// Dump times snapped to the step grid, as sorted unique step indices.
    pub fn dump_steps(&self) -> Vec<u64> {
        let n_steps = self.n_steps();
        let mut steps: Vec<u64> = match (&self.dump_times, self.dump_every) {
            (Some(ts), _) => ts.iter().map(|t| self.step_of(*t)).collect(),
            (None, Some(h)) => {
                let k_max = (self.t_end / h + 1e-9).floor() as u64;
                (0..=k_max).map(|k| self.step_of(k as f64 * h)).collect()
            }
            (None, None) => vec![n_steps],
        };
        steps.retain(|&s| s <= n_steps);
        steps.sort_unstable();
        steps.dedup();
        steps
    }

    pub fn snapshot_steps(&self) -> Vec<u64> {
        let mut steps: Vec<u64> = self.snapshot_times.iter().map(|t| self.step_of(*t)).collect();
        steps.sort_unstable();
        steps.dedup();
        steps
    }

    pub fn n_steps(&self) -> u64 {
        self.step_of(self.t_end)
    }

    fn step_of(&self, t: f64) -> u64 {
        (t / self.dt).round() as u64
    }

    pub fn init_laws(&self) -> (InitLaw, InitLaw) {
        (
            InitLaw::Normal { mean: self.ips_init_mean, sd: self.ips_init_sd },
            InitLaw::Normal { mean: self.nl_init_mean, sd: self.nl_init_sd },
        )
    }

    pub fn coupling_mode(&self) -> CouplingMode {
        match self.coupling {
            CouplingName::Reflection => CouplingMode::Reflection,
            CouplingName::Synchronous => CouplingMode::Synchronous,
        }
    }

    pub fn ensemble(&self) -> EnsembleMode {
        match self.ensemble_mode {
            ModeName::SelfConsistent => EnsembleMode::SelfConsistent,
            ModeName::FrozenReference => EnsembleMode::FrozenReference,
        }
    }

    pub fn cost_metric(&self) -> CostMetric {
        match self.metric {
            MetricName::StateDisorderSum => CostMetric::StateDisorderSum,
            MetricName::Euclidean => CostMetric::Euclidean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    ErdosRenyi,
    Community,
}

/// Input of the `verify-concentration` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationConfig {
    pub family: FamilyName,
    pub q: f64,
    #[serde(default = "one_block")]
    pub blocks: usize,
    #[serde(default)]
    pub q_inter: f64,
    pub sizes: Vec<usize>,
    pub n_seeds: usize,
    #[serde(default = "sixteen")]
    pub c: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one_block() -> usize {
    1
}

fn sixteen() -> f64 {
    16.0
}

impl ConcentrationConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(toml::from_str(&text)?)
    }

    pub fn family(&self) -> Box<dyn GraphFamily> {
        match self.family {
            FamilyName::ErdosRenyi => Box::new(ErdosRenyiFamily { q: self.q }),
            FamilyName::Community => Box::new(CommunityFamily {
                blocks: self.blocks,
                q_intra: self.q,
                q_inter: self.q_inter,
            }),
        }
    }
}
