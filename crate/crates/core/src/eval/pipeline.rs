//! Generate → train → build → score, per seed, and ablation sweeps on top.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{score_planning, ScoreReport};
use crate::error::Result;
use crate::mapping::{train, DmMode, EncoderMode, EncoderModel, LatentTuple, LossConfig, TrainConfig, TrainingTrace};
use crate::planner::PlannerConfig;
use crate::rng::mix;
use crate::roadmap::{optimize_tau, Clustering, RoadmapBuilder, TauSearch};
use crate::task::{generate_dataset, render_holdout, DatasetTuple, Observation, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub n_pairs: usize,
    /// Share of action pairs; the task default when absent.
    pub action_fraction: Option<f64>,
    pub ld: usize,
    pub hidden: usize,
    pub mode: EncoderMode,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub clustering: Clustering,
    pub c_max: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_tol: f64,
    pub planner: PlannerConfig,
    pub n_queries: usize,
    pub holdout: usize,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskKind::NormalStacking,
            n_pairs: 2500,
            action_fraction: None,
            ld: 12,
            hidden: 64,
            mode: EncoderMode::Stochastic,
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            clustering: Clustering::AVERAGE,
            c_max: 1,
            tau_min: 0.0,
            tau_max: 3.0,
            tau_tol: 1e-3,
            planner: PlannerConfig::default(),
            n_queries: 1000,
            holdout: 2500,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

/// Seed streams derived from one experiment seed.
pub mod streams {
    pub const DATASET: u64 = 1;
    pub const MODEL: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const HOLDOUT: u64 = 4;
    pub const QUERIES: u64 = 5;
    pub const APN: u64 = 6;
    pub const APN_HOLDOUT: u64 = 7;
    pub const OOD: u64 = 8;
}

impl ExperimentConfig {
    pub fn action_fraction(&self) -> f64 {
        self.action_fraction.unwrap_or_else(|| self.task.default_action_fraction())
    }

    pub fn seed_for(&self, seed: u64, stream: u64) -> u64 {
        mix(seed, stream)
    }

    pub fn baseline(mut self) -> Self {
        self.loss.gamma = 0.0;
        self
    }
}

/// Everything one seed produces before roadmap building.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub seed: u64,
    pub data: Vec<DatasetTuple>,
    pub model: EncoderModel,
    pub trace: TrainingTrace,
    pub latent: Vec<LatentTuple>,
    pub holdout: Vec<Observation>,
}

impl RunArtifacts {
    pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let data = generate_dataset(
            cfg.task,
            cfg.n_pairs,
            cfg.action_fraction(),
            cfg.seed_for(seed, streams::DATASET),
        )?;
        let model = EncoderModel::for_task(cfg.task, cfg.mode, cfg.hidden, cfg.ld, cfg.seed_for(seed, streams::MODEL));
        let (model, trace) = train(model, &data, &cfg.loss, &cfg.train, cfg.seed_for(seed, streams::TRAIN))?;
        let latent = model.encode_dataset(&data)?;
        let holdout = render_holdout(cfg.task, cfg.holdout, cfg.seed_for(seed, streams::HOLDOUT));
        Ok(RunArtifacts {
            seed,
            data,
            model,
            trace,
            latent,
            holdout,
        })
    }

    pub fn builder(&self, cfg: &ExperimentConfig, clustering: Clustering) -> Result<RoadmapBuilder> {
        RoadmapBuilder::new(&self.latent, cfg.loss.metric, clustering)
    }

    /// Optimizes the threshold and scores the resulting roadmap.
    pub fn evaluate(&self, cfg: &ExperimentConfig, builder: &RoadmapBuilder, c_max: usize) -> Result<(TauSearch, ScoreReport)> {
        let search = optimize_tau(builder, cfg.tau_min, cfg.tau_max, c_max, cfg.tau_tol)?;
        let score = score_planning(
            cfg.task,
            &search.roadmap,
            &self.model,
            &self.holdout,
            cfg.n_queries,
            cfg.seed_for(self.seed, streams::QUERIES),
            &cfg.planner,
        )?;
        Ok((search, score))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub final_dm: f64,
    pub min_action_dist: Option<f64>,
    pub max_no_action_dist: Option<f64>,
    pub tau: f64,
    pub regions: usize,
    pub edges: usize,
    pub components: usize,
    pub score: ScoreReport,
}

impl SeedOutcome {
    fn new(art: &RunArtifacts, search: &TauSearch, score: ScoreReport) -> Self {
        SeedOutcome {
            seed: art.seed,
            final_dm: art.trace.final_dm,
            min_action_dist: art.trace.final_separation.map(|s| s.0),
            max_no_action_dist: art.trace.final_separation.map(|s| s.1),
            tau: search.tau,
            regions: search.roadmap.n_regions(),
            edges: search.roadmap.edges.len(),
            components: search.roadmap.components,
            score,
        }
    }
}

/// Full pipeline for every configured seed; seeds run in parallel and come
/// back in configuration order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Vec<(u64, Result<SeedOutcome>)> {
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let out = (|| {
                let art = RunArtifacts::prepare(cfg, seed)?;
                let builder = art.builder(cfg, cfg.clustering)?;
                let (search, score) = art.evaluate(cfg, &builder, cfg.c_max)?;
                Ok(SeedOutcome::new(&art, &search, score))
            })();
            (seed, out)
        })
        .collect()
}

/// A model variant for the encoder-mode comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub mode: EncoderMode,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AblationSpec {
    CmaxSweep(Vec<usize>),
    /// `None` is the dynamic schedule, `Some(v)` a static minimum distance.
    DmMode(Vec<Option<f64>>),
    Clustering(Vec<Clustering>),
    LatentDim(Vec<usize>),
    DatasetSize(Vec<usize>),
    EncoderMode(Vec<ModelVariant>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub seed: u64,
    pub outcome: Option<SeedOutcome>,
    pub error: Option<String>,
}

impl AblationRow {
    fn failed(config: String, seed: u64, e: &crate::error::LsrError) -> Self {
        AblationRow {
            config,
            seed,
            outcome: None,
            error: Some(e.to_string()),
        }
    }

    fn from(config: String, seed: u64, r: Result<SeedOutcome>) -> Self {
        match r {
            Ok(o) => AblationRow {
                config,
                seed,
                outcome: Some(o),
                error: None,
            },
            Err(e) => AblationRow {
                config,
                seed,
                outcome: None,
                error: Some(e.to_string()),
            },
        }
    }
}

/// Runs every configuration of `spec` on every seed of `base`. Sweeps over
/// roadmap settings share one trained model per seed; failures are recorded
/// and the sweep continues.
pub fn run_ablation(base: &ExperimentConfig, spec: &AblationSpec) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    match spec {
        AblationSpec::CmaxSweep(values) => {
            for &seed in &base.seeds {
                let prepared = RunArtifacts::prepare(base, seed).and_then(|a| {
                    let b = a.builder(base, base.clustering)?;
                    Ok((a, b))
                });
                for &c in values {
                    let label = format!("c_max={c}");
                    rows.push(match &prepared {
                        Ok((a, b)) => AblationRow::from(label, seed, a.evaluate(base, b, c).map(|(s, sc)| SeedOutcome::new(a, &s, sc))),
                        Err(e) => AblationRow::failed(label, seed, e),
                    });
                }
            }
        }
        AblationSpec::Clustering(methods) => {
            for &seed in &base.seeds {
                let prepared = RunArtifacts::prepare(base, seed);
                for &m in methods {
                    let label = format!("clustering={}", m.name());
                    rows.push(match &prepared {
                        Ok(a) => {
                            let r = a.builder(base, m).and_then(|b| {
                                a.evaluate(base, &b, base.c_max).map(|(s, sc)| SeedOutcome::new(a, &s, sc))
                            });
                            AblationRow::from(label, seed, r)
                        }
                        Err(e) => AblationRow::failed(label, seed, e),
                    });
                }
            }
        }
        AblationSpec::DmMode(values) => {
            for v in values {
                let mut cfg = base.clone();
                let label = match v {
                    None => {
                        cfg.loss.dm_mode = DmMode::Dynamic;
                        "dm=dynamic".to_string()
                    }
                    Some(d) => {
                        cfg.loss.dm_mode = DmMode::Static;
                        cfg.loss.dm = *d;
                        format!("dm={d}")
                    }
                };
                rows.extend(per_seed(&cfg, &label));
            }
        }
        AblationSpec::LatentDim(lds) => {
            for &ld in lds {
                let cfg = ExperimentConfig { ld, ..base.clone() };
                rows.extend(per_seed(&cfg, &format!("ld={ld}")));
            }
        }
        AblationSpec::DatasetSize(sizes) => {
            for &n in sizes {
                let cfg = ExperimentConfig {
                    n_pairs: n,
                    ..base.clone()
                };
                rows.extend(per_seed(&cfg, &format!("pairs={n}")));
            }
        }
        AblationSpec::EncoderMode(variants) => {
            for v in variants {
                let mut cfg = ExperimentConfig {
                    mode: v.mode,
                    ..base.clone()
                };
                cfg.loss.gamma = v.gamma;
                if v.mode == EncoderMode::Deterministic {
                    cfg.loss.weight_decay = 1e-4;
                }
                rows.extend(per_seed(&cfg, &format!("mode={} gamma={}", v.mode.name(), v.gamma)));
            }
        }
    }
    rows
}

fn per_seed(cfg: &ExperimentConfig, label: &str) -> Vec<AblationRow> {
    run_experiment(cfg)
        .into_iter()
        .map(|(seed, r)| AblationRow::from(label.to_string(), seed, r))
        .collect()
}
