use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize, Serializer};

use super::{fmt_f64, sha256_file, write_text};
use crate::error::Result;
use crate::eval::{mean_std, AblationRow};

/// Content hash of one input or output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(FileHash {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Record of one tool invocation, written next to its primary output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub argv: Vec<String>,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

impl Manifest {
    pub fn new(tool: &str, argv: Vec<String>) -> Self {
        Manifest {
            tool: tool.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            argv,
            seeds: Vec::new(),
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.push(FileHash::of(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        self.outputs.push(FileHash::of(path)?);
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_text(path, &text)
    }
}

fn sig9<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&fmt_f64(*x))
}

fn sig9_opt<S: Serializer>(x: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_str(&fmt_f64(*v)),
        None => s.serialize_str(""),
    }
}

/// One configuration × seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub config: String,
    pub seed: u64,
    #[serde(serialize_with = "sig9_opt")]
    pub pct_all: Option<f64>,
    #[serde(serialize_with = "sig9_opt")]
    pub pct_any: Option<f64>,
    #[serde(serialize_with = "sig9_opt")]
    pub pct_trans: Option<f64>,
    pub n_queries: Option<usize>,
    pub unreachable: Option<usize>,
    pub truncated: Option<usize>,
    #[serde(serialize_with = "sig9_opt")]
    pub tau: Option<f64>,
    pub regions: Option<usize>,
    pub edges: Option<usize>,
    pub components: Option<usize>,
    #[serde(serialize_with = "sig9_opt")]
    pub final_dm: Option<f64>,
    #[serde(serialize_with = "sig9_opt")]
    pub min_action_dist: Option<f64>,
    #[serde(serialize_with = "sig9_opt")]
    pub max_no_action_dist: Option<f64>,
    pub error: String,
}

impl From<&AblationRow> for MetricRow {
    fn from(r: &AblationRow) -> Self {
        let o = r.outcome.as_ref();
        MetricRow {
            config: r.config.clone(),
            seed: r.seed,
            pct_all: o.map(|o| o.score.pct_all),
            pct_any: o.map(|o| o.score.pct_any),
            pct_trans: o.map(|o| o.score.pct_trans),
            n_queries: o.map(|o| o.score.n_queries),
            unreachable: o.map(|o| o.score.unreachable),
            truncated: o.map(|o| o.score.truncated),
            tau: o.map(|o| o.tau),
            regions: o.map(|o| o.regions),
            edges: o.map(|o| o.edges),
            components: o.map(|o| o.components),
            final_dm: o.map(|o| o.final_dm),
            min_action_dist: o.and_then(|o| o.min_action_dist),
            max_no_action_dist: o.and_then(|o| o.max_no_action_dist),
            error: r.error.clone().unwrap_or_default(),
        }
    }
}

/// Mean ± sample standard deviation per configuration over its successful seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config: String,
    pub seeds: usize,
    pub failed: usize,
    #[serde(serialize_with = "sig9")]
    pub pct_all_mean: f64,
    #[serde(serialize_with = "sig9")]
    pub pct_all_std: f64,
    #[serde(serialize_with = "sig9")]
    pub pct_any_mean: f64,
    #[serde(serialize_with = "sig9")]
    pub pct_any_std: f64,
    #[serde(serialize_with = "sig9")]
    pub pct_trans_mean: f64,
    #[serde(serialize_with = "sig9")]
    pub pct_trans_std: f64,
    #[serde(serialize_with = "sig9")]
    pub regions_mean: f64,
    #[serde(serialize_with = "sig9")]
    pub edges_mean: f64,
}

/// Rows sorted by (config, seed) so output does not depend on evaluation order;
/// configurations keep their first-appearance order.
fn sorted(rows: &[AblationRow]) -> Vec<MetricRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.config.as_str()) {
            order.push(&r.config);
        }
    }
    let rank = |c: &str| order.iter().position(|o| *o == c).unwrap_or(usize::MAX);
    let mut out: Vec<MetricRow> = rows.iter().map(MetricRow::from).collect();
    out.sort_by(|a, b| rank(&a.config).cmp(&rank(&b.config)).then(a.seed.cmp(&b.seed)));
    out
}

pub fn summarize(rows: &[AblationRow]) -> Vec<SummaryRow> {
    let rows = sorted(rows);
    let mut groups: Vec<(String, Vec<&MetricRow>)> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &rows {
        let k = *index.entry(&r.config).or_insert_with(|| {
            groups.push((r.config.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[k].1.push(r);
    }
    groups
        .into_iter()
        .map(|(config, rs)| {
            let ok: Vec<&MetricRow> = rs.iter().copied().filter(|r| r.error.is_empty()).collect();
            let stat = |f: fn(&MetricRow) -> Option<f64>| mean_std(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            let (all_m, all_s) = stat(|r| r.pct_all);
            let (any_m, any_s) = stat(|r| r.pct_any);
            let (tr_m, tr_s) = stat(|r| r.pct_trans);
            SummaryRow {
                config,
                seeds: rs.len(),
                failed: rs.len() - ok.len(),
                pct_all_mean: all_m,
                pct_all_std: all_s,
                pct_any_mean: any_m,
                pct_any_std: any_s,
                pct_trans_mean: tr_m,
                pct_trans_std: tr_s,
                regions_mean: stat(|r| r.regions.map(|v| v as f64)).0,
                edges_mean: stat(|r| r.edges.map(|v| v as f64)).0,
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    write_text(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per configuration × seed.
pub fn write_metrics(path: &Path, rows: &[AblationRow]) -> Result<()> {
    write_csv(path, &sorted(rows))
}

pub fn write_summary(path: &Path, rows: &[AblationRow]) -> Result<()> {
    write_csv(path, &summarize(rows))
}
