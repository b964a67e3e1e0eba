use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{pair_loss_grad, DmMode, LossBreakdown, LossConfig, Scratch};
use super::{EncoderMode, EncoderModel};
use crate::error::{LsrError, Result};
use crate::metric::MetricKind;
use crate::nn::{Optimizer, OptimizerKind};
use crate::rng::stream_rng;
use crate::task::DatasetTuple;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            optimizer: OptimizerKind::Adam { lr: 1e-3 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub beta: f64,
    /// Minimum action distance in force during this epoch.
    pub dm: f64,
    /// Mean per-pair loss terms.
    pub loss: LossBreakdown,
    /// Separation statistics, measured on epochs where the schedule is checked.
    pub min_action_dist: Option<f64>,
    pub max_no_action_dist: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<EpochRecord>,
    pub final_dm: f64,
    /// (min action distance, max no-action distance) after training.
    pub final_separation: Option<(f64, f64)>,
}

impl TrainingTrace {
    pub fn dm_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.dm).collect()
    }

    /// Epoch of the last increment of the minimum distance, if any.
    pub fn last_dm_change(&self) -> Option<usize> {
        self.records
            .windows(2)
            .filter(|w| w[1].dm != w[0].dm)
            .map(|w| w[1].epoch)
            .last()
    }
}

/// Minimum latent distance over action pairs and maximum over no-action
/// pairs, using mean codes. `None` if either kind is absent.
pub fn pair_separation(model: &EncoderModel, data: &[DatasetTuple], metric: MetricKind) -> Result<Option<(f64, f64)>> {
    let mut min_action = f64::INFINITY;
    let mut max_none = f64::NEG_INFINITY;
    for t in data {
        let d = metric.distance(&model.encode_mean(&t.obs1.features)?, &model.encode_mean(&t.obs2.features)?);
        if t.is_action() {
            min_action = min_action.min(d);
        } else {
            max_none = max_none.max(d);
        }
    }
    Ok((min_action.is_finite() && max_none.is_finite()).then_some((min_action, max_none)))
}

/// Mini-batch training with the augmented loss and the minimum-distance
/// schedule. Returns the trained model and a per-epoch trace.
pub fn train(
    mut model: EncoderModel,
    data: &[DatasetTuple],
    cfg: &LossConfig,
    tc: &TrainConfig,
    seed: u64,
) -> Result<(EncoderModel, TrainingTrace)> {
    if data.is_empty() {
        return Err(LsrError::EmptyDataset("training set"));
    }
    cfg.validate()?;
    if let Some(t) = data.iter().find(|t| t.obs1.dim() != model.obs_dim() || t.obs2.dim() != model.obs_dim()) {
        return Err(LsrError::DimensionMismatch {
            expected: model.obs_dim(),
            got: t.obs1.dim().max(t.obs2.dim()),
        });
    }
    let batch = tc.batch_size.max(1);
    let net = model.net;
    let ld = net.ld;
    let mut rng = stream_rng(seed, 0x7472_6e);
    let mut opt = Optimizer::new(tc.optimizer, model.params.len());
    let mut grad = vec![0.0; model.params.len()];
    let mut scratch = Scratch::new(&net);
    let mut eps1 = vec![0.0; ld];
    let mut eps2 = vec![0.0; ld];
    let stochastic = net.mode == EncoderMode::Stochastic;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut dm = cfg.dm;
    let mut trace = TrainingTrace::default();

    for epoch in 0..tc.epochs {
        let beta = cfg.beta_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for chunk in order.chunks(batch) {
            grad.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let t = &data[i];
                if stochastic {
                    for e in eps1.iter_mut().chain(eps2.iter_mut()) {
                        *e = rng.sample(StandardNormal);
                    }
                }
                sum += pair_loss_grad(
                    &net,
                    &model.params,
                    &t.obs1.features,
                    &t.obs2.features,
                    t.is_action(),
                    &eps1,
                    &eps2,
                    beta,
                    dm,
                    cfg,
                    scale,
                    Some(&mut grad),
                    &mut scratch,
                );
            }
            if cfg.weight_decay > 0.0 {
                for (g, p) in grad.iter_mut().zip(&model.params) {
                    *g += cfg.weight_decay * p;
                }
            }
            opt.step(&mut model.params, &grad);
        }
        let loss = sum.scaled(1.0 / data.len() as f64);
        if !loss.total.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(LsrError::Diverged {
                epoch,
                detail: format!("loss terms {loss:?}"),
            });
        }
        let mut record = EpochRecord {
            epoch,
            beta,
            dm,
            loss,
            min_action_dist: None,
            max_no_action_dist: None,
        };
        if cfg.dm_mode == DmMode::Dynamic && (epoch + 1) % cfg.k_epochs == 0 {
            if let Some((min_a, max_n)) = pair_separation(&model, data, cfg.metric)? {
                record.min_action_dist = Some(min_a);
                record.max_no_action_dist = Some(max_n);
                if max_n > min_a {
                    dm += cfg.delta_dm;
                }
            }
        }
        trace.records.push(record);
    }
    trace.final_dm = dm;
    trace.final_separation = pair_separation(&model, data, cfg.metric)?;
    model.loss = Some(*cfg);
    model.final_dm = dm;
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{generate_dataset, TaskKind};

    #[test]
    fn no_action_pairs_collapse() {
        let task = TaskKind::NormalStacking;
        let data = generate_dataset(task, 64, 0.0, 5).unwrap();
        let model = EncoderModel::for_task(task, EncoderMode::Deterministic, 16, 3, 1);
        let cfg = LossConfig {
            gamma: 1000.0,
            recon_weight: 0.0,
            ..LossConfig::default()
        };
        let tc = TrainConfig {
            epochs: 300,
            batch_size: 16,
            optimizer: OptimizerKind::Adam { lr: 1e-3 },
        };
        let gap = |m: &EncoderModel| {
            data.iter()
                .map(|t| MetricKind::L1.distance(&m.encode_mean(&t.obs1.features).unwrap(), &m.encode_mean(&t.obs2.features).unwrap()))
                .fold(0.0, f64::max)
        };
        let before = gap(&model);
        let (model, _) = train(model, &data, &cfg, &tc, 1).unwrap();
        // Non-smooth L1 objective: Adam settles within a few step sizes of zero.
        let after = gap(&model);
        assert!(after < 1e-2 && after < before / 20.0, "{before} -> {after}");
    }

    #[test]
    fn dm_trace_monotone_and_on_schedule() {
        let task = TaskKind::NormalStacking;
        let data = generate_dataset(task, 200, 0.65, 2).unwrap();
        let model = EncoderModel::for_task(task, EncoderMode::Stochastic, 16, 4, 2);
        let cfg = LossConfig {
            beta_ramp_epochs: 20,
            ..LossConfig::default()
        };
        let tc = TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        };
        let (model, trace) = train(model, &data, &cfg, &tc, 3).unwrap();
        let dms = trace.dm_values();
        assert_eq!(dms[0], 0.0);
        for w in trace.records.windows(2) {
            assert!(w[1].dm >= w[0].dm);
            if w[1].dm != w[0].dm {
                assert_eq!(w[1].epoch % cfg.k_epochs, 0);
            }
        }
        assert_eq!(model.final_dm, trace.final_dm);
    }

    #[test]
    fn static_dm_never_moves() {
        let task = TaskKind::RopeBox;
        let data = generate_dataset(task, 60, 0.5, 2).unwrap();
        let model = EncoderModel::for_task(task, EncoderMode::Stochastic, 8, 2, 2);
        let cfg = LossConfig::default().static_dm(3.0);
        let tc = TrainConfig {
            epochs: 6,
            ..TrainConfig::default()
        };
        let (_, trace) = train(model, &data, &cfg, &tc, 3).unwrap();
        assert!(trace.dm_values().iter().all(|&d| d == 3.0));
    }

    #[test]
    fn divergence_is_reported() {
        let task = TaskKind::NormalStacking;
        let data = generate_dataset(task, 20, 0.5, 2).unwrap();
        let model = EncoderModel::for_task(task, EncoderMode::Stochastic, 8, 2, 2);
        let tc = TrainConfig {
            epochs: 50,
            batch_size: 4,
            optimizer: OptimizerKind::Sgd { lr: 1e6 },
        };
        assert!(matches!(train(model, &data, &LossConfig::default(), &tc, 0), Err(LsrError::Diverged { .. })));
    }

    #[test]
    fn empty_dataset_rejected() {
        let model = EncoderModel::new(EncoderMode::Stochastic, 3, 2, 1, 0);
        assert!(train(model, &[], &LossConfig::default(), &TrainConfig::default(), 0).is_err());
    }
}
