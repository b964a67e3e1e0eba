//! Action proposal: a classifier over latent pairs (APN) and the edge-action
//! vote over roadmap edges (AAB).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LsrError, Result};
use crate::mapping::{EncoderModel, LatentTuple};
use crate::nn::{layout, tanh_backward, tanh_inplace, Dense, Optimizer, OptimizerKind};
use crate::planner::PlanResult;
use crate::rng::stream_rng;
use crate::roadmap::Roadmap;
use crate::task::{Action, DatasetTuple, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApnConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
}

impl Default for ApnConfig {
    fn default() -> Self {
        ApnConfig {
            hidden: 64,
            dropout: 0.3,
            lr: 1e-3,
            batch_size: 32,
            epochs: 500,
            validation_fraction: 0.15,
        }
    }
}

/// What the classifier reads: latent codes or decoded observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApnInput {
    Latent,
    Decoded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApnModel {
    pub task: TaskKind,
    pub input: ApnInput,
    /// Width of one side of the pair.
    pub side_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub params: Vec<f64>,
    l1: Dense,
    l2: Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApnTrace {
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
    pub train_accuracy: f64,
    pub n_train: usize,
    pub n_validation: usize,
}

/// One labelled example: both sides of a transition and the action id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledPair {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub label: usize,
}

impl ApnModel {
    pub fn new(task: TaskKind, input: ApnInput, side_dim: usize, hidden: usize, dropout: f64, seed: u64) -> Self {
        let n_actions = task.space().actions().len();
        let (layers, n) = layout(&[(2 * side_dim, hidden), (hidden, n_actions)]);
        let mut params = vec![0.0; n];
        let mut rng = stream_rng(seed, 0xa9_0);
        for l in &layers {
            l.init(&mut params, &mut rng);
        }
        ApnModel {
            task,
            input,
            side_dim,
            hidden,
            dropout,
            params,
            l1: layers[0],
            l2: layers[1],
        }
    }

    pub fn n_actions(&self) -> usize {
        self.l2.n_out
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.side_dim {
            return Err(LsrError::DimensionMismatch {
                expected: self.side_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
        self.check(x1)?;
        self.check(x2)?;
        let input: Vec<f64> = x1.iter().chain(x2).copied().collect();
        let mut h = vec![0.0; self.hidden];
        self.l1.forward(&self.params, &input, &mut h);
        tanh_inplace(&mut h);
        let mut out = vec![0.0; self.n_actions()];
        self.l2.forward(&self.params, &h, &mut out);
        Ok(out)
    }

    pub fn probabilities(&self, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.logits(x1, x2)?;
        softmax(&mut p);
        Ok(p)
    }

    /// Most probable action for the transition `x1 → x2`; lowest id on ties.
    pub fn propose(&self, x1: &[f64], x2: &[f64]) -> Result<Action> {
        let logits = self.logits(x1, x2)?;
        Ok(self.task.space().actions()[argmax(&logits)])
    }

    pub fn accuracy(&self, pairs: &[LabelledPair]) -> Result<f64> {
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let mut ok = 0;
        for p in pairs {
            ok += (argmax(&self.logits(&p.x1, &p.x2)?) == p.label) as usize;
        }
        Ok(100.0 * ok as f64 / pairs.len() as f64)
    }

    /// Cross-entropy gradient of one example, with a dropout mask on the
    /// hidden layer (inverted scaling). Returns the example's loss.
    fn accumulate(&self, p: &LabelledPair, mask: Option<&[f64]>, grad: &mut [f64]) -> f64 {
        let input: Vec<f64> = p.x1.iter().chain(&p.x2).copied().collect();
        let mut h = vec![0.0; self.hidden];
        self.l1.forward(&self.params, &input, &mut h);
        tanh_inplace(&mut h);
        let mut hd = h.clone();
        if let Some(m) = mask {
            hd.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
        let mut out = vec![0.0; self.n_actions()];
        self.l2.forward(&self.params, &hd, &mut out);
        softmax(&mut out);
        let loss = -out[p.label].max(1e-300).ln();
        out[p.label] -= 1.0;
        let mut gh = vec![0.0; self.hidden];
        self.l2.backward(&self.params, &hd, &out, grad, Some(&mut gh));
        if let Some(m) = mask {
            gh.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
        tanh_backward(&h, &mut gh);
        self.l1.backward(&self.params, &input, &gh, grad, None);
        loss
    }
}

fn softmax(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    v.iter_mut().for_each(|x| *x /= s);
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn label_of(task: TaskKind, action: &Action) -> Result<usize> {
    task.space()
        .action_id(action)
        .ok_or_else(|| LsrError::InvalidArgument(format!("{action} is not an action of task {task}")))
}

/// Labelled latent pairs from the action tuples.
pub fn latent_pairs(task: TaskKind, tuples: &[LatentTuple]) -> Result<Vec<LabelledPair>> {
    tuples
        .iter()
        .filter_map(|t| t.action.map(|a| (t, a)))
        .map(|(t, a)| {
            Ok(LabelledPair {
                x1: t.z1.clone(),
                x2: t.z2.clone(),
                label: label_of(task, &a)?,
            })
        })
        .collect()
}

/// Labelled pairs of decoded observations: each side encoded (mean) and
/// decoded back through the mapping model.
pub fn decoded_pairs(task: TaskKind, model: &EncoderModel, data: &[DatasetTuple]) -> Result<Vec<LabelledPair>> {
    let roundtrip = |x: &[f64]| -> Result<Vec<f64>> { Ok(model.decode(&model.encode_mean(x)?)?.features) };
    data.iter()
        .filter_map(|t| t.action.map(|a| (t, a)))
        .map(|(t, a)| {
            Ok(LabelledPair {
                x1: roundtrip(&t.obs1.features)?,
                x2: roundtrip(&t.obs2.features)?,
                label: label_of(task, &a)?,
            })
        })
        .collect()
}

/// Trains a classifier on `pairs` with dropout, holding out a validation
/// share; the weights with the best validation accuracy (then loss) win.
pub fn train_classifier(
    task: TaskKind,
    input: ApnInput,
    pairs: &[LabelledPair],
    cfg: &ApnConfig,
    seed: u64,
) -> Result<(ApnModel, ApnTrace)> {
    if pairs.is_empty() {
        return Err(LsrError::EmptyDataset("no labelled action pairs"));
    }
    if !(0.0..1.0).contains(&cfg.dropout) || !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(LsrError::InvalidArgument("dropout and validation fraction must lie in [0, 1)".into()));
    }
    let side = pairs[0].x1.len();
    let mut model = ApnModel::new(task, input, side, cfg.hidden, cfg.dropout, seed);
    let mut rng = stream_rng(seed, 0xa9_1);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((pairs.len() as f64 * cfg.validation_fraction).round() as usize).min(pairs.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<LabelledPair> = val_idx.iter().map(|&i| pairs[i].clone()).collect();
    let mut train: Vec<usize> = train_idx.to_vec();

    let val_score = |m: &ApnModel| -> Result<(f64, f64)> {
        let mut loss = 0.0;
        for p in &val {
            let pr = m.probabilities(&p.x1, &p.x2)?;
            loss -= pr[p.label].max(1e-300).ln();
        }
        Ok((m.accuracy(&val)?, loss))
    };

    let mut opt = Optimizer::new(OptimizerKind::Adam { lr: cfg.lr }, model.params.len());
    let mut grad = vec![0.0; model.params.len()];
    let mut mask = vec![0.0; cfg.hidden];
    let keep = 1.0 - cfg.dropout;
    let mut best = (model.params.clone(), 0usize, f64::NEG_INFINITY, f64::INFINITY);
    for epoch in 0..cfg.epochs {
        train.shuffle(&mut rng);
        for batch in train.chunks(cfg.batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                for m in mask.iter_mut() {
                    *m = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
                }
                let m = (cfg.dropout > 0.0).then_some(mask.as_slice());
                model.accumulate(&pairs[i], m, &mut grad);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut model.params, &grad);
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(LsrError::Diverged {
                epoch,
                detail: "non-finite classifier weights".into(),
            });
        }
        let (acc, loss) = if val.is_empty() { (0.0, 0.0) } else { val_score(&model)? };
        if acc > best.2 || (acc == best.2 && loss < best.3) {
            best = (model.params.clone(), epoch, acc, loss);
        }
    }
    if cfg.epochs > 0 {
        model.params = best.0;
    }
    let train_pairs: Vec<LabelledPair> = train.iter().map(|&i| pairs[i].clone()).collect();
    let trace = ApnTrace {
        best_epoch: best.1,
        best_validation_accuracy: best.2.max(0.0),
        train_accuracy: model.accuracy(&train_pairs)?,
        n_train: train_pairs.len(),
        n_validation: val.len(),
    };
    Ok((model, trace))
}

/// Trains the APN on latent action tuples (typically the augmented set).
pub fn train_apn(task: TaskKind, tuples: &[LatentTuple], cfg: &ApnConfig, seed: u64) -> Result<(ApnModel, ApnTrace)> {
    train_classifier(task, ApnInput::Latent, &latent_pairs(task, tuples)?, cfg, seed)
}

/// One action per roadmap edge (aligned with `roadmap.edges`): the most
/// frequent action among the edge's reference actions, smallest on ties.
pub fn aab_annotate(roadmap: &Roadmap) -> Result<Vec<Action>> {
    roadmap
        .edges
        .iter()
        .map(|e| {
            let mut counts: BTreeMap<Action, usize> = BTreeMap::new();
            for a in &e.actions {
                *counts.entry(*a).or_default() += 1;
            }
            counts
                .into_iter()
                .fold(None, |best: Option<(Action, usize)>, (a, c)| match best {
                    Some((_, bc)) if bc >= c => best,
                    _ => Some((a, c)),
                })
                .map(|(a, _)| a)
                .ok_or(LsrError::MissingAnnotation { from: e.from, to: e.to })
        })
        .collect()
}

pub enum ActionSource<'a> {
    Apn(&'a ApnModel),
    /// Annotations aligned with the roadmap's edges.
    Aab(&'a Roadmap, &'a [Action]),
}

/// Fills `plan.action_plan` with one action per consecutive node pair.
pub fn fill_action_plan(mut plan: PlanResult, source: &ActionSource<'_>) -> Result<PlanResult> {
    if plan.nodes.is_empty() {
        return Err(LsrError::InvalidArgument("empty plan".into()));
    }
    plan.action_plan = plan
        .nodes
        .windows(2)
        .enumerate()
        .map(|(k, w)| match source {
            ActionSource::Apn(apn) => match apn.input {
                ApnInput::Latent => apn.propose(&plan.latent_plan[k], &plan.latent_plan[k + 1]),
                ApnInput::Decoded => apn.propose(&plan.decoded_plan[k].features, &plan.decoded_plan[k + 1].features),
            },
            ActionSource::Aab(map, actions) => map
                .edges
                .binary_search_by_key(&(w[0], w[1]), |e| (e.from, e.to))
                .ok()
                .and_then(|i| actions.get(i).copied())
                .ok_or(LsrError::MissingAnnotation { from: w[0], to: w[1] }),
        })
        .collect::<Result<_>>()?;
    Ok(plan)
}

/// Share of roadmap edges whose AAB action, applied to the decoded state of
/// the source region, yields the decoded state of the target region.
pub fn aab_transition_accuracy(task: TaskKind, roadmap: &Roadmap, actions: &[Action], states: &[usize]) -> f64 {
    let space = task.space();
    if roadmap.edges.is_empty() {
        return 0.0;
    }
    let ok = roadmap
        .edges
        .iter()
        .zip(actions)
        .filter(|(e, a)| {
            space
                .action_id(a)
                .and_then(|id| space.apply(states[e.from], id))
                .is_some_and(|s| s == states[e.to])
        })
        .count();
    100.0 * ok as f64 / roadmap.edges.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadmap::oracle_fixture;
    use crate::task::Cell;

    fn pp(a: (u8, u8), b: (u8, u8)) -> Action {
        Action::PickPlace {
            pick: Cell { row: a.0, col: a.1 },
            release: Cell { row: b.0, col: b.1 },
        }
    }

    #[test]
    fn aab_majority_and_ties() {
        let mut map = oracle_fixture(&[(0, 1), (1, 2)], 3);
        let u = pp((0, 0), (1, 1));
        let v = pp((0, 1), (1, 1));
        map.edges[0].actions = vec![u, u, v];
        map.edges[1].actions = vec![v, u];
        let ann = aab_annotate(&map).unwrap();
        assert_eq!(ann, vec![u, u.min(v)]);
        assert_eq!(aab_annotate(&map).unwrap(), ann);
        map.edges[0].actions = vec![u, u, u];
        assert_eq!(aab_annotate(&map).unwrap()[0], u);
        map.edges[0].actions.clear();
        assert!(matches!(aab_annotate(&map), Err(LsrError::MissingAnnotation { from: 0, to: 1 })));
    }

    fn plan_of(map: &Roadmap, nodes: &[usize]) -> PlanResult {
        PlanResult {
            nodes: nodes.to_vec(),
            latent_plan: nodes.iter().map(|&k| map.representative(k).to_vec()).collect(),
            decoded_plan: Vec::new(),
            action_plan: Vec::new(),
            fallback_depth: 0,
            truncated: false,
        }
    }

    #[test]
    fn aab_fills_diamond() {
        let map = oracle_fixture(&[(0, 1), (0, 2), (1, 3), (2, 3)], 4);
        let ann = aab_annotate(&map).unwrap();
        let plan = fill_action_plan(plan_of(&map, &[0, 2, 3]), &ActionSource::Aab(&map, &ann)).unwrap();
        let expect: Vec<Action> = [(0, 2), (2, 3)].iter().map(|&(i, j)| map.edge(i, j).unwrap().actions[0]).collect();
        assert_eq!(plan.action_plan, expect);
        let single = fill_action_plan(plan_of(&map, &[1]), &ActionSource::Aab(&map, &ann)).unwrap();
        assert!(single.action_plan.is_empty());
        let bad = fill_action_plan(plan_of(&map, &[3, 0]), &ActionSource::Aab(&map, &ann));
        assert!(matches!(bad, Err(LsrError::MissingAnnotation { from: 3, to: 0 })));
    }

    #[test]
    fn forced_logits_pick_that_action() {
        let task = TaskKind::NormalStacking;
        let mut apn = ApnModel::new(task, ApnInput::Latent, 2, 4, 0.0, 1);
        apn.params.iter_mut().for_each(|p| *p = 0.0);
        let target = 17;
        apn.params[apn.l2.offset + apn.l2.n_in * apn.l2.n_out + target] = 5.0;
        assert_eq!(apn.propose(&[0.3, 0.1], &[0.3, 0.1]).unwrap(), task.space().actions()[target]);
        let p = apn.probabilities(&[1.0, 2.0], &[0.0, -1.0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(apn.propose(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn single_class_is_learned() {
        let task = TaskKind::RopeBox;
        let pairs: Vec<LabelledPair> = (0..40)
            .map(|k| LabelledPair {
                x1: vec![k as f64 / 40.0, 1.0],
                x2: vec![0.5, -(k as f64) / 40.0],
                label: 3,
            })
            .collect();
        let cfg = ApnConfig {
            epochs: 30,
            ..ApnConfig::default()
        };
        let (apn, trace) = train_classifier(task, ApnInput::Latent, &pairs, &cfg, 4).unwrap();
        assert_eq!(trace.train_accuracy, 100.0);
        assert_eq!(trace.n_validation, 6);
        assert_eq!(apn.accuracy(&pairs).unwrap(), 100.0);
        assert!(train_classifier(task, ApnInput::Latent, &[], &cfg, 4).is_err());
    }

    #[test]
    fn classifier_gradient_matches_finite_differences() {
        let task = TaskKind::RopeBox;
        let apn = ApnModel::new(task, ApnInput::Latent, 3, 5, 0.0, 9);
        let p = LabelledPair {
            x1: vec![0.2, -0.4, 0.9],
            x2: vec![-0.1, 0.3, 0.5],
            label: 7,
        };
        let mask = [2.0, 0.0, 2.0, 2.0, 0.0];
        let mut grad = vec![0.0; apn.params.len()];
        apn.accumulate(&p, Some(&mask), &mut grad);
        let h = 1e-5;
        for i in (0..apn.params.len()).step_by(7) {
            let eval = |d: f64| {
                let mut m = apn.clone();
                m.params[i] += d;
                let mut g = vec![0.0; m.params.len()];
                m.accumulate(&p, Some(&mask), &mut g)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }
}
