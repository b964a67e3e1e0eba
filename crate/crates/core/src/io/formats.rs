use std::path::Path;

use super::{fmt_f64, fmt_opt, fmt_vec, join, read_with, write_text, Container, Record, Writer};
use crate::apm::{ApnInput, ApnModel};
use crate::error::{LsrError, Result};
use crate::mapping::{EncoderMode, EncoderModel, LatentTuple, LossConfig, Network};
use crate::planner::PlanResult;
use crate::roadmap::{Clustering, CoveredRegion, Roadmap, RoadmapEdge};
use crate::task::{decode_state_id, Action, DatasetTuple, NoiseModel, Observation, TaskKind};
use crate::MetricKind;

const PARAMS_PER_LINE: usize = 8;

fn fmt_actions(actions: &[Action]) -> String {
    actions.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_actions(r: &Record<'_>, s: &str) -> Result<Vec<Action>> {
    s.split_whitespace().map(|a| r.parse(a, "action")).collect()
}

fn params_section(params: &[f64]) -> Vec<String> {
    params.chunks(PARAMS_PER_LINE).map(fmt_vec).collect()
}

fn read_params(c: &Container<'_>, expected: usize) -> Result<Vec<f64>> {
    let mut params = Vec::with_capacity(expected);
    for r in c.section("params")? {
        params.extend(r.floats(r.text)?);
    }
    if params.len() != expected {
        return Err(LsrError::parse(
            c.section_line("params"),
            format!("expected {expected} parameters, found {}", params.len()),
        ));
    }
    Ok(params)
}

fn tuple_record(z1: &[f64], z2: &[f64], s1: Option<usize>, s2: Option<usize>, action: Option<Action>) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        u8::from(action.is_some()),
        fmt_opt(s1),
        fmt_opt(s2),
        fmt_opt(action),
        fmt_vec(z1),
        fmt_vec(z2)
    )
}

struct RawTuple {
    x1: Vec<f64>,
    x2: Vec<f64>,
    s1: Option<usize>,
    s2: Option<usize>,
    action: Option<Action>,
}

fn parse_tuples(c: &Container<'_>, dim: usize) -> Result<Vec<RawTuple>> {
    c.section("tuples")?
        .iter()
        .map(|r| {
            let f = r.fields(6)?;
            let a: u8 = r.parse(f[0], "a-flag")?;
            let action: Option<Action> = r.opt(f[3], "action")?;
            if (a == 1) != action.is_some() || a > 1 {
                return Err(r.err("a-flag disagrees with the action field"));
            }
            let (x1, x2) = (r.floats(f[4])?, r.floats(f[5])?);
            if x1.len() != dim || x2.len() != dim {
                return Err(r.err(format!("expected {dim} features per side")));
            }
            Ok(RawTuple {
                x1,
                x2,
                s1: r.opt(f[1], "state id")?,
                s2: r.opt(f[2], "state id")?,
                action,
            })
        })
        .collect()
}

/// Training dataset with its generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub task: TaskKind,
    pub noise: NoiseModel,
    pub seed: u64,
    pub action_fraction: f64,
    pub tuples: Vec<DatasetTuple>,
}

pub fn write_dataset(path: &Path, d: &DatasetFile) -> Result<()> {
    let dim = d.tuples.first().map_or(0, |t| t.obs1.dim());
    let text = Writer::new("dataset")
        .header("task", d.task)
        .header("dim", dim)
        .header("states", d.task.space().len())
        .header("positional", fmt_f64(d.noise.positional))
        .header("lighting", fmt_f64(d.noise.lighting))
        .header("rope", fmt_f64(d.noise.rope))
        .header("offset_scale", fmt_f64(d.noise.offset_scale))
        .header("seed", d.seed)
        .header("action_fraction", fmt_f64(d.action_fraction))
        .section(
            "tuples",
            d.tuples
                .iter()
                .map(|t| tuple_record(&t.obs1.features, &t.obs2.features, t.obs1.state, t.obs2.state, t.action)),
        )
        .finish();
    write_text(path, &text)
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    read_with(path, |text| {
        let c = Container::parse(text, "dataset")?;
        let task: TaskKind = c.get("task")?;
        let dim: usize = c.get("dim")?;
        let tuples = parse_tuples(&c, dim)?
            .into_iter()
            .map(|t| DatasetTuple {
                obs1: Observation {
                    features: t.x1,
                    state: t.s1,
                },
                obs2: Observation {
                    features: t.x2,
                    state: t.s2,
                },
                action: t.action,
            })
            .collect();
        Ok(DatasetFile {
            task,
            noise: NoiseModel {
                positional: c.get("positional")?,
                lighting: c.get("lighting")?,
                rope: c.get("rope")?,
                offset_scale: c.get("offset_scale")?,
            },
            seed: c.get("seed")?,
            action_fraction: c.get("action_fraction")?,
            tuples,
        })
    })
}

/// Encoded dataset, tied to its sources by content hash.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFile {
    pub task: Option<TaskKind>,
    pub dataset_sha256: Option<String>,
    pub model_sha256: Option<String>,
    pub tuples: Vec<LatentTuple>,
}

pub fn write_latent(path: &Path, l: &LatentFile) -> Result<()> {
    let ld = l.tuples.first().map_or(0, |t| t.z1.len());
    let text = Writer::new("latent")
        .header("task", fmt_opt(l.task))
        .header("ld", ld)
        .header("dataset_sha256", fmt_opt(l.dataset_sha256.as_ref()))
        .header("model_sha256", fmt_opt(l.model_sha256.as_ref()))
        .section("tuples", l.tuples.iter().map(|t| tuple_record(&t.z1, &t.z2, t.s1, t.s2, t.action)))
        .finish();
    write_text(path, &text)
}

fn opt_header(c: &Container<'_>, key: &str) -> Option<String> {
    c.raw(key).filter(|v| *v != "-").map(str::to_string)
}

pub fn read_latent(path: &Path) -> Result<LatentFile> {
    read_with(path, |text| {
        let c = Container::parse(text, "latent")?;
        let task = match c.raw("task") {
            None | Some("-") => None,
            Some(_) => Some(c.get("task")?),
        };
        let tuples = parse_tuples(&c, c.get("ld")?)?
            .into_iter()
            .map(|t| LatentTuple {
                z1: t.x1,
                z2: t.x2,
                action: t.action,
                s1: t.s1,
                s2: t.s2,
            })
            .collect();
        Ok(LatentFile {
            task,
            dataset_sha256: opt_header(&c, "dataset_sha256"),
            model_sha256: opt_header(&c, "model_sha256"),
            tuples,
        })
    })
}

pub fn write_model(path: &Path, m: &EncoderModel) -> Result<()> {
    let loss = match &m.loss {
        Some(l) => serde_json::to_string(l)?,
        None => "-".into(),
    };
    let text = Writer::new("model")
        .header("task", fmt_opt(m.task))
        .header("mode", m.mode().name())
        .header("obs_dim", m.obs_dim())
        .header("hidden", m.net.hidden)
        .header("ld", m.ld())
        .header("seed", m.seed)
        .header("final_dm", fmt_f64(m.final_dm))
        .header("loss", loss)
        .section("params", params_section(&m.params))
        .finish();
    write_text(path, &text)
}

pub fn read_model(path: &Path) -> Result<EncoderModel> {
    read_with(path, |text| {
        let c = Container::parse(text, "model")?;
        let mode: EncoderMode = c.get("mode")?;
        let (obs_dim, hidden, ld): (usize, usize, usize) = (c.get("obs_dim")?, c.get("hidden")?, c.get("ld")?);
        if obs_dim == 0 || hidden == 0 || ld == 0 {
            return Err(LsrError::parse(1, "model dimensions must be positive"));
        }
        let (net, n) = Network::new(mode, obs_dim, hidden, ld);
        let task = match c.raw("task") {
            None | Some("-") => None,
            Some(_) => Some(c.get::<TaskKind>("task")?),
        };
        let loss: Option<LossConfig> = match c.raw("loss") {
            None | Some("-") => None,
            Some(s) => Some(serde_json::from_str(s)?),
        };
        Ok(EncoderModel {
            net,
            params: read_params(&c, n)?,
            task,
            seed: c.get("seed")?,
            loss,
            final_dm: c.get("final_dm")?,
        })
    })
}

/// Roadmap plus its provenance and optional per-edge action annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadmapFile {
    pub roadmap: Roadmap,
    pub latent_sha256: Option<String>,
    /// One action per edge, in edge order.
    pub annotations: Option<Vec<Action>>,
}

pub fn write_roadmap(path: &Path, f: &RoadmapFile) -> Result<()> {
    let m = &f.roadmap;
    if let Some(a) = &f.annotations {
        if a.len() != m.edges.len() {
            return Err(LsrError::DimensionMismatch {
                expected: m.edges.len(),
                got: a.len(),
            });
        }
    }
    let mut w = Writer::new("roadmap");
    w.header("metric", m.metric)
        .header("tau", fmt_f64(m.tau))
        .header("clustering", &m.clustering)
        .header("components", m.components)
        .header("ld", m.ld())
        .header("latent_sha256", fmt_opt(f.latent_sha256.as_ref()))
        .section(
            "points",
            m.points
                .iter()
                .zip(&m.point_states)
                .map(|(p, s)| format!("{}\t{}", fmt_opt(*s), fmt_vec(p))),
        )
        .section(
            "regions",
            m.regions.iter().map(|r| {
                format!(
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    fmt_f64(r.mu),
                    fmt_f64(r.sigma),
                    fmt_f64(r.epsilon),
                    r.representative,
                    join(&r.members),
                    fmt_vec(&r.mean)
                )
            }),
        )
        .section(
            "edges",
            m.edges.iter().map(|e| format!("{}\t{}\t{}", e.from, e.to, fmt_actions(&e.actions))),
        );
    if let Some(a) = &f.annotations {
        w.section("annotations", a.iter().map(ToString::to_string));
    }
    write_text(path, &w.finish())
}

pub fn read_roadmap(path: &Path) -> Result<RoadmapFile> {
    read_with(path, |text| {
        let c = Container::parse(text, "roadmap")?;
        let metric: MetricKind = c.get("metric")?;
        let tau: f64 = c.get("tau")?;
        let clustering: Clustering = c.get("clustering")?;
        let ld: usize = c.get("ld")?;
        let mut points = Vec::new();
        let mut point_states = Vec::new();
        for r in c.section("points")? {
            let f = r.fields(2)?;
            point_states.push(r.opt(f[0], "state id")?);
            let p = r.floats(f[1])?;
            if p.len() != ld {
                return Err(r.err(format!("expected {ld} coordinates")));
            }
            points.push(p);
        }
        let regions = c
            .section("regions")?
            .iter()
            .map(|r| {
                let f = r.fields(6)?;
                Ok(CoveredRegion {
                    mu: r.parse(f[0], "mu")?,
                    sigma: r.parse(f[1], "sigma")?,
                    epsilon: r.parse(f[2], "epsilon")?,
                    representative: r.parse(f[3], "representative")?,
                    members: r.indices(f[4])?,
                    mean: r.floats(f[5])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let edges = c
            .section("edges")?
            .iter()
            .map(|r| {
                let f = r.fields(3)?;
                Ok(RoadmapEdge {
                    from: r.parse(f[0], "region id")?,
                    to: r.parse(f[1], "region id")?,
                    actions: parse_actions(r, f[2])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n_edges = edges.len();
        let roadmap = Roadmap::from_parts(points, point_states, regions, edges, metric, tau, clustering)
            .map_err(|e| LsrError::parse(c.section_line("regions"), e.to_string()))?;
        let stored: usize = c.get("components")?;
        if stored != roadmap.components {
            return Err(LsrError::parse(
                1,
                format!("header claims {stored} components, graph has {}", roadmap.components),
            ));
        }
        let annotations = match c.section_opt("annotations") {
            None => None,
            Some(recs) => {
                if recs.len() != n_edges {
                    return Err(LsrError::parse(
                        c.section_line("annotations"),
                        format!("{} annotations for {n_edges} edges", recs.len()),
                    ));
                }
                Some(recs.iter().map(|r| r.parse(r.text, "action")).collect::<Result<Vec<_>>>()?)
            }
        };
        Ok(RoadmapFile {
            roadmap,
            latent_sha256: opt_header(&c, "latent_sha256"),
            annotations,
        })
    })
}

/// One visual plan as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredPlan {
    pub nodes: Vec<usize>,
    pub states: Vec<usize>,
    pub actions: Vec<Action>,
    pub latent: Vec<Vec<f64>>,
    pub fallback_depth: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanFile {
    pub task: TaskKind,
    pub start_state: usize,
    pub goal_state: usize,
    pub seed: u64,
    pub plans: Vec<StoredPlan>,
}

impl PlanFile {
    pub fn new(task: TaskKind, start_state: usize, goal_state: usize, seed: u64, plans: &[PlanResult]) -> Result<Self> {
        let plans = plans
            .iter()
            .map(|p| {
                Ok(StoredPlan {
                    nodes: p.nodes.clone(),
                    states: p
                        .decoded_plan
                        .iter()
                        .map(|o| decode_state_id(task, &o.features))
                        .collect::<Result<_>>()?,
                    actions: p.action_plan.clone(),
                    latent: p.latent_plan.clone(),
                    fallback_depth: p.fallback_depth,
                    truncated: p.truncated,
                })
            })
            .collect::<Result<_>>()?;
        Ok(PlanFile {
            task,
            start_state,
            goal_state,
            seed,
            plans,
        })
    }
}

pub fn write_plans(path: &Path, f: &PlanFile) -> Result<()> {
    let text = Writer::new("plan")
        .header("task", f.task)
        .header("start_state", f.start_state)
        .header("goal_state", f.goal_state)
        .header("seed", f.seed)
        .section(
            "plans",
            f.plans.iter().map(|p| {
                format!(
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    p.fallback_depth,
                    u8::from(p.truncated),
                    join(&p.nodes),
                    join(&p.states),
                    fmt_actions(&p.actions),
                    p.latent.iter().map(|z| fmt_vec(z)).collect::<Vec<_>>().join(";")
                )
            }),
        )
        .finish();
    write_text(path, &text)
}

pub fn read_plans(path: &Path) -> Result<PlanFile> {
    read_with(path, |text| {
        let c = Container::parse(text, "plan")?;
        let plans = c
            .section("plans")?
            .iter()
            .map(|r| {
                let f = r.fields(6)?;
                let latent = if f[5].is_empty() {
                    Vec::new()
                } else {
                    f[5].split(';').map(|z| r.floats(z)).collect::<Result<_>>()?
                };
                Ok(StoredPlan {
                    fallback_depth: r.parse(f[0], "fallback depth")?,
                    truncated: r.parse::<u8>(f[1], "truncation flag")? == 1,
                    nodes: r.indices(f[2])?,
                    states: r.indices(f[3])?,
                    actions: parse_actions(r, f[4])?,
                    latent,
                })
            })
            .collect::<Result<_>>()?;
        Ok(PlanFile {
            task: c.get("task")?,
            start_state: c.get("start_state")?,
            goal_state: c.get("goal_state")?,
            seed: c.get("seed")?,
            plans,
        })
    })
}

fn input_name(i: ApnInput) -> &'static str {
    match i {
        ApnInput::Latent => "latent",
        ApnInput::Decoded => "decoded",
    }
}

pub fn write_apn(path: &Path, m: &ApnModel, seed: u64) -> Result<()> {
    let text = Writer::new("apn")
        .header("task", m.task)
        .header("input", input_name(m.input))
        .header("side_dim", m.side_dim)
        .header("hidden", m.hidden)
        .header("dropout", fmt_f64(m.dropout))
        .header("seed", seed)
        .section("params", params_section(&m.params))
        .finish();
    write_text(path, &text)
}

pub fn read_apn(path: &Path) -> Result<ApnModel> {
    read_with(path, |text| {
        let c = Container::parse(text, "apn")?;
        let input = match c.raw("input") {
            Some("latent") => ApnInput::Latent,
            Some("decoded") => ApnInput::Decoded,
            other => return Err(LsrError::parse(1, format!("invalid APN input {other:?}"))),
        };
        let (side_dim, hidden): (usize, usize) = (c.get("side_dim")?, c.get("hidden")?);
        if side_dim == 0 || hidden == 0 {
            return Err(LsrError::parse(1, "APN dimensions must be positive"));
        }
        let mut m = ApnModel::new(c.get("task")?, input, side_dim, hidden, c.get("dropout")?, c.get("seed")?);
        m.params = read_params(&c, m.params.len())?;
        Ok(m)
    })
}
