use std::path::{Path, PathBuf};

use lsr_core::apm::ApnConfig;
use lsr_core::eval::ExperimentConfig;
use serde::{Deserialize, Serialize};

/// Contents of a `--config` file: experiment settings at the top level, an
/// optional `[apn]` table and artifact locations under `[paths]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunFile {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    pub apn: ApnConfig,
    pub paths: Paths,
}

/// Relative paths are resolved against the run file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub latent: Option<PathBuf>,
    pub roadmap: Option<PathBuf>,
    pub apn: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunFile {
    pub fn load(path: &Path) -> lsr_core::Result<Self> {
        let mut rf: RunFile = lsr_core::io::load_toml(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut rf.paths;
        for slot in [
            &mut p.dataset,
            &mut p.model,
            &mut p.latent,
            &mut p.roadmap,
            &mut p.apn,
            &mut p.plan,
            &mut p.out,
        ] {
            if let Some(v) = slot.as_mut().filter(|v| v.is_relative()) {
                *v = base.join(&*v);
            }
        }
        Ok(rf)
    }

    pub fn first_seed(&self) -> u64 {
        self.experiment.seeds.first().copied().unwrap_or(1)
    }
}
