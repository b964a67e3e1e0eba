//! Python bindings: datasets, mapping models, roadmaps, planning and scoring.

use std::path::PathBuf;

use lsr_core::apm::aab_annotate;
use lsr_core::eval::{relative_contrast as rc, score_planning, streams, ExperimentConfig};
use lsr_core::io::{self, DatasetFile, RoadmapFile};
use lsr_core::mapping::{train, EncoderMode, EncoderModel, LatentTuple};
use lsr_core::planner::{plan, PlannerConfig};
use lsr_core::rng::mix;
use lsr_core::roadmap::{optimize_tau, Clustering, RoadmapBuilder};
use lsr_core::task::{decode_state_id, generate_dataset, render, render_holdout, NoiseModel, TaskKind};
use lsr_core::{LsrError, MetricKind};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: LsrError) -> PyErr {
    match e {
        LsrError::Io(_) | LsrError::Format { .. } => PyIOError::new_err(e.to_string()),
        LsrError::InvalidArgument(_)
        | LsrError::InvalidState(_)
        | LsrError::DimensionMismatch { .. }
        | LsrError::RankOutOfRange { .. }
        | LsrError::Parse { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = LsrError>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// Training pairs of noisy observations.
#[pyclass(module = "lsr_py", frozen)]
struct Dataset {
    inner: DatasetFile,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (task, pairs=2500, seed=1, action_frac=None))]
    fn generate(py: Python<'_>, task: &str, pairs: usize, seed: u64, action_frac: Option<f64>) -> PyResult<Self> {
        let task: TaskKind = parse(task)?;
        let frac = action_frac.unwrap_or_else(|| task.default_action_fraction());
        let cfg = ExperimentConfig::default();
        let tuples = py
            .detach(|| generate_dataset(task, pairs, frac, cfg.seed_for(seed, streams::DATASET)))
            .map_err(py_err)?;
        Ok(Dataset {
            inner: DatasetFile {
                task,
                noise: NoiseModel::for_task(task),
                seed,
                action_fraction: frac,
                tuples,
            },
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        io::read_dataset(&path).map(|inner| Dataset { inner }).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_dataset(&path, &self.inner).map_err(py_err)
    }

    #[getter]
    fn task(&self) -> &'static str {
        self.inner.task.code()
    }

    #[getter]
    fn n_action(&self) -> usize {
        self.inner.tuples.iter().filter(|t| t.is_action()).count()
    }

    fn __len__(&self) -> usize {
        self.inner.tuples.len()
    }
}

/// Encoder/decoder pair trained with the action loss.
#[pyclass(module = "lsr_py", frozen)]
struct Model {
    inner: EncoderModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    #[pyo3(signature = (dataset, ld=12, hidden=64, mode="vae", gamma=100.0, epochs=200, seed=1))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        dataset: &Dataset,
        ld: usize,
        hidden: usize,
        mode: &str,
        gamma: f64,
        epochs: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let mode: EncoderMode = parse(mode)?;
        let mut cfg = ExperimentConfig::default();
        cfg.loss.gamma = gamma;
        cfg.train.epochs = epochs;
        let d = &dataset.inner;
        let model = EncoderModel::for_task(d.task, mode, hidden, ld, cfg.seed_for(seed, streams::MODEL));
        let (inner, _) = py
            .detach(|| train(model, &d.tuples, &cfg.loss, &cfg.train, cfg.seed_for(seed, streams::TRAIN)))
            .map_err(py_err)?;
        Ok(Model { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        io::read_model(&path).map(|inner| Model { inner }).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_model(&path, &self.inner).map_err(py_err)
    }

    #[getter]
    fn ld(&self) -> usize {
        self.inner.ld()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    #[getter]
    fn final_dm(&self) -> f64 {
        self.inner.final_dm
    }

    /// Posterior mean of one observation.
    fn encode(&self, features: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.encode_mean(&features).map_err(py_err)
    }

    fn decode(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.decode(&z).map(|o| o.features).map_err(py_err)
    }

    /// Task state the decoded observation of `z` shows.
    fn decode_state(&self, z: Vec<f64>) -> PyResult<usize> {
        let task = self.task()?;
        let x = self.inner.decode(&z).map_err(py_err)?;
        decode_state_id(task, &x.features).map_err(py_err)
    }

    /// Relative contrast of the encoded dataset.
    fn relative_contrast(&self, dataset: &Dataset) -> PyResult<f64> {
        let latent = self.encode_all(dataset)?;
        rc(&latent, MetricKind::L1).map(|r| r.rc).map_err(py_err)
    }
}

impl Model {
    fn task(&self) -> PyResult<TaskKind> {
        self.inner
            .task
            .ok_or_else(|| PyValueError::new_err("model does not record its task"))
    }

    fn encode_all(&self, dataset: &Dataset) -> PyResult<Vec<LatentTuple>> {
        self.inner.encode_dataset(&dataset.inner.tuples).map_err(py_err)
    }
}

/// Latent space roadmap with optional per-edge action annotations.
#[pyclass(module = "lsr_py", frozen)]
struct Roadmap {
    inner: RoadmapFile,
}

#[pymethods]
impl Roadmap {
    /// Encodes `dataset` and builds a roadmap with an optimized threshold.
    #[staticmethod]
    #[pyo3(signature = (model, dataset, c_max=1, tau_min=0.0, tau_max=3.0, clustering="avg"))]
    fn build(
        py: Python<'_>,
        model: &Model,
        dataset: &Dataset,
        c_max: usize,
        tau_min: f64,
        tau_max: f64,
        clustering: &str,
    ) -> PyResult<Self> {
        let clustering: Clustering = parse(clustering)?;
        let latent = model.encode_all(dataset)?;
        let roadmap = py
            .detach(|| {
                let b = RoadmapBuilder::new(&latent, MetricKind::L1, clustering)?;
                optimize_tau(&b, tau_min, tau_max, c_max, 1e-3).map(|s| s.roadmap)
            })
            .map_err(py_err)?;
        let annotations = Some(aab_annotate(&roadmap).map_err(py_err)?);
        Ok(Roadmap {
            inner: RoadmapFile {
                roadmap,
                latent_sha256: None,
                annotations,
            },
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        io::read_roadmap(&path).map(|inner| Roadmap { inner }).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_roadmap(&path, &self.inner).map_err(py_err)
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.roadmap.tau
    }

    #[getter]
    fn n_regions(&self) -> usize {
        self.inner.roadmap.n_regions()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.roadmap.edges.len()
    }

    #[getter]
    fn components(&self) -> usize {
        self.inner.roadmap.components
    }

    /// Visual plans between renders of two task states, as dicts with the
    /// region path, decoded state ids and annotated actions.
    #[pyo3(signature = (model, start_state, goal_state, seed=1))]
    fn plan<'py>(
        &self,
        py: Python<'py>,
        model: &Model,
        start_state: usize,
        goal_state: usize,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let task = model.task()?;
        let space = task.space();
        if start_state >= space.len() || goal_state >= space.len() {
            return Err(PyValueError::new_err(format!("state ids must be below {}", space.len())));
        }
        let s = render(task, space.state(start_state), mix(seed, 1)).map_err(py_err)?;
        let g = render(task, space.state(goal_state), mix(seed, 2)).map_err(py_err)?;
        let map = &self.inner.roadmap;
        let plans = plan(map, &model.inner, &s, &g, &PlannerConfig::default()).map_err(py_err)?;
        plans
            .iter()
            .map(|p| {
                let d = PyDict::new(py);
                let states: Vec<usize> = p
                    .decoded_plan
                    .iter()
                    .map(|o| decode_state_id(task, &o.features))
                    .collect::<lsr_core::Result<_>>()
                    .map_err(py_err)?;
                let actions: Vec<String> = match &self.inner.annotations {
                    Some(ann) => p
                        .nodes
                        .windows(2)
                        .map(|w| {
                            let k = map.edges.partition_point(|e| (e.from, e.to) < (w[0], w[1]));
                            ann[k].to_string()
                        })
                        .collect(),
                    None => Vec::new(),
                };
                d.set_item("nodes", p.nodes.clone())?;
                d.set_item("states", states)?;
                d.set_item("actions", actions)?;
                d.set_item("fallback_depth", p.fallback_depth)?;
                Ok(d)
            })
            .collect()
    }

    /// %All / %Any / %Trans over random holdout queries.
    #[pyo3(signature = (model, n_queries=1000, holdout=2500, seed=1))]
    fn score<'py>(
        &self,
        py: Python<'py>,
        model: &Model,
        n_queries: usize,
        holdout: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let task = model.task()?;
        let cfg = ExperimentConfig::default();
        let map = &self.inner.roadmap;
        let report = py
            .detach(|| {
                let obs = render_holdout(task, holdout, cfg.seed_for(seed, streams::HOLDOUT));
                score_planning(
                    task,
                    map,
                    &model.inner,
                    &obs,
                    n_queries,
                    cfg.seed_for(seed, streams::QUERIES),
                    &cfg.planner,
                )
            })
            .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("pct_all", report.pct_all)?;
        d.set_item("pct_any", report.pct_any)?;
        d.set_item("pct_trans", report.pct_trans)?;
        d.set_item("unreachable", report.unreachable)?;
        Ok(d)
    }
}

/// Number of distinct task states.
#[pyfunction]
fn n_states(task: &str) -> PyResult<usize> {
    Ok(parse::<TaskKind>(task)?.space().len())
}

/// Unique action catalogue of a task, as strings.
#[pyfunction]
fn actions(task: &str) -> PyResult<Vec<String>> {
    Ok(parse::<TaskKind>(task)?.space().actions().iter().map(ToString::to_string).collect())
}

#[pymodule]
fn lsr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_class::<Roadmap>()?;
    m.add_function(wrap_pyfunction!(n_states, m)?)?;
    m.add_function(wrap_pyfunction!(actions, m)?)?;
    Ok(())
}
