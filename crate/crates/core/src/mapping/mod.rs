//! Mapping module: observation encoder and generator trained with the
//! action-augmented loss.

mod loss;
mod train;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LsrError, Result};
use crate::nn::{layout, tanh_inplace, Dense};
use crate::rng::{mix, stream_rng};
use crate::task::{Action, DatasetTuple, Observation, TaskKind};

pub use loss::{action_loss, DmMode, LossBreakdown, LossConfig};
pub use train::{pair_separation, train, EpochRecord, TrainConfig, TrainingTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncoderMode {
    /// VAE-style: the encoder outputs a Gaussian posterior (mean, log-variance).
    #[serde(rename = "vae")]
    Stochastic,
    /// AE-style: the encoder outputs the latent code directly.
    #[serde(rename = "ae")]
    Deterministic,
}

impl EncoderMode {
    pub fn name(self) -> &'static str {
        match self {
            EncoderMode::Stochastic => "vae",
            EncoderMode::Deterministic => "ae",
        }
    }
}

impl std::str::FromStr for EncoderMode {
    type Err = LsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" | "stochastic" => Ok(EncoderMode::Stochastic),
            "ae" | "deterministic" => Ok(EncoderMode::Deterministic),
            other => Err(LsrError::InvalidArgument(format!("unknown encoder mode '{other}'"))),
        }
    }
}

/// Layer layout of the encoder (D → H → 2·ld or ld) and decoder (ld → H → D).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub mode: EncoderMode,
    pub obs_dim: usize,
    pub hidden: usize,
    pub ld: usize,
    pub enc1: Dense,
    pub enc2: Dense,
    pub dec1: Dense,
    pub dec2: Dense,
}

impl Network {
    pub fn new(mode: EncoderMode, obs_dim: usize, hidden: usize, ld: usize) -> (Self, usize) {
        let enc_out = match mode {
            EncoderMode::Stochastic => 2 * ld,
            EncoderMode::Deterministic => ld,
        };
        let (l, n) = layout(&[(obs_dim, hidden), (hidden, enc_out), (ld, hidden), (hidden, obs_dim)]);
        let net = Network {
            mode,
            obs_dim,
            hidden,
            ld,
            enc1: l[0],
            enc2: l[1],
            dec1: l[2],
            dec2: l[3],
        };
        (net, n)
    }

    pub fn enc_out(&self) -> usize {
        self.enc2.n_out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub net: Network,
    pub params: Vec<f64>,
    pub task: Option<TaskKind>,
    pub seed: u64,
    /// Loss configuration the model was trained with and the final minimum
    /// action distance reached.
    pub loss: Option<LossConfig>,
    pub final_dm: f64,
}

/// Latent encoding; `mu`/`logvar` are set for stochastic encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub z: Vec<f64>,
    pub mu: Option<Vec<f64>>,
    pub logvar: Option<Vec<f64>>,
}

/// Encoded training tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTuple {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub action: Option<Action>,
    /// Ground-truth state ids, when the source observations carry them.
    pub s1: Option<usize>,
    pub s2: Option<usize>,
}

impl LatentTuple {
    pub fn is_action(&self) -> bool {
        self.action.is_some()
    }
}

impl EncoderModel {
    /// Freshly initialized model (uniform ±1/√fan_in).
    pub fn new(mode: EncoderMode, obs_dim: usize, hidden: usize, ld: usize, seed: u64) -> Self {
        assert!(ld >= 1 && hidden >= 1 && obs_dim >= 1, "dimensions must be positive");
        let (net, n) = Network::new(mode, obs_dim, hidden, ld);
        let mut params = vec![0.0; n];
        let mut rng = stream_rng(seed, 0x696e_6974);
        for l in [net.enc1, net.enc2, net.dec1, net.dec2] {
            l.init(&mut params, &mut rng);
        }
        EncoderModel {
            net,
            params,
            task: None,
            seed,
            loss: None,
            final_dm: 0.0,
        }
    }

    pub fn for_task(task: TaskKind, mode: EncoderMode, hidden: usize, ld: usize, seed: u64) -> Self {
        let mut m = Self::new(mode, task.obs_dim(), hidden, ld, seed);
        m.task = Some(task);
        m
    }

    pub fn mode(&self) -> EncoderMode {
        self.net.mode
    }

    pub fn ld(&self) -> usize {
        self.net.ld
    }

    pub fn obs_dim(&self) -> usize {
        self.net.obs_dim
    }

    /// Raw encoder head: [mu, logvar] or the code.
    fn encoder_head(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.net.obs_dim {
            return Err(LsrError::DimensionMismatch {
                expected: self.net.obs_dim,
                got: x.len(),
            });
        }
        let mut h = vec![0.0; self.net.hidden];
        self.net.enc1.forward(&self.params, x, &mut h);
        tanh_inplace(&mut h);
        let mut e = vec![0.0; self.net.enc_out()];
        self.net.enc2.forward(&self.params, &h, &mut e);
        Ok(e)
    }

    /// Deterministic latent code: the posterior mean, or the AE code.
    pub fn encode_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut e = self.encoder_head(x)?;
        e.truncate(self.net.ld);
        Ok(e)
    }

    /// Encodes an observation. Stochastic encoders return the mean when
    /// `deterministic` is set and a reparameterized sample otherwise.
    pub fn encode(&self, obs: &Observation, deterministic: bool, seed: u64) -> Result<LatentPoint> {
        let e = self.encoder_head(&obs.features)?;
        let ld = self.net.ld;
        Ok(match self.net.mode {
            EncoderMode::Deterministic => LatentPoint {
                z: e,
                mu: None,
                logvar: None,
            },
            EncoderMode::Stochastic => {
                let (mu, lv) = (e[..ld].to_vec(), e[ld..].to_vec());
                let z = if deterministic {
                    mu.clone()
                } else {
                    let mut rng = stream_rng(seed, 0x656e_63);
                    sample_posterior(&mu, &lv, &mut rng)
                };
                LatentPoint {
                    z,
                    mu: Some(mu),
                    logvar: Some(lv),
                }
            }
        })
    }

    /// Decoder forward pass.
    pub fn decode(&self, z: &[f64]) -> Result<Observation> {
        if z.len() != self.net.ld {
            return Err(LsrError::DimensionMismatch {
                expected: self.net.ld,
                got: z.len(),
            });
        }
        let mut g = vec![0.0; self.net.hidden];
        self.net.dec1.forward(&self.params, z, &mut g);
        tanh_inplace(&mut g);
        let mut x = vec![0.0; self.net.obs_dim];
        self.net.dec2.forward(&self.params, &g, &mut x);
        Ok(Observation::unlabeled(x))
    }

    /// Encodes every tuple with deterministic (mean) codes.
    pub fn encode_dataset(&self, data: &[DatasetTuple]) -> Result<Vec<LatentTuple>> {
        data.iter()
            .map(|t| {
                Ok(LatentTuple {
                    z1: self.encode_mean(&t.obs1.features)?,
                    z2: self.encode_mean(&t.obs2.features)?,
                    action: t.action,
                    s1: t.obs1.state,
                    s2: t.obs2.state,
                })
            })
            .collect()
    }

    /// APN training set: for each action pair the posterior means plus `samples`
    /// posterior draws per observation, all labelled with the pair's action.
    pub fn augment_apn_dataset(&self, data: &[DatasetTuple], samples: usize, seed: u64) -> Result<Vec<LatentTuple>> {
        if self.net.mode == EncoderMode::Deterministic {
            return Err(LsrError::SamplingUnavailable);
        }
        let ld = self.net.ld;
        let mut rng = stream_rng(seed, 0x6170_6e);
        let mut out = Vec::new();
        for t in data.iter().filter(|t| t.is_action()) {
            let e1 = self.encoder_head(&t.obs1.features)?;
            let e2 = self.encoder_head(&t.obs2.features)?;
            let base = LatentTuple {
                z1: e1[..ld].to_vec(),
                z2: e2[..ld].to_vec(),
                action: t.action,
                s1: t.obs1.state,
                s2: t.obs2.state,
            };
            for _ in 0..samples {
                out.push(LatentTuple {
                    z1: sample_posterior(&e1[..ld], &e1[ld..], &mut rng),
                    z2: sample_posterior(&e2[..ld], &e2[ld..], &mut rng),
                    ..base.clone()
                });
            }
            out.push(base);
        }
        Ok(out)
    }

    /// Loss of one training pair and its gradient with respect to `params`.
    /// `eps1`/`eps2` are the reparameterization draws (ignored in
    /// deterministic mode).
    #[allow(clippy::too_many_arguments)]
    pub fn pair_loss(
        &self,
        x1: &[f64],
        x2: &[f64],
        is_action: bool,
        eps1: &[f64],
        eps2: &[f64],
        beta: f64,
        dm: f64,
        cfg: &LossConfig,
    ) -> Result<(LossBreakdown, Vec<f64>)> {
        let n = self.net.obs_dim;
        if x1.len() != n || x2.len() != n {
            return Err(LsrError::DimensionMismatch {
                expected: n,
                got: if x1.len() != n { x1.len() } else { x2.len() },
            });
        }
        if self.mode() == EncoderMode::Stochastic && (eps1.len() != self.net.ld || eps2.len() != self.net.ld) {
            return Err(LsrError::DimensionMismatch {
                expected: self.net.ld,
                got: eps1.len().min(eps2.len()),
            });
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut s = loss::Scratch::new(&self.net);
        let l = loss::pair_loss_grad(&self.net, &self.params, x1, x2, is_action, eps1, eps2, beta, dm, cfg, 1.0, Some(&mut grad), &mut s);
        Ok((l, grad))
    }

    /// Seed derived for a named purpose, so callers don't reuse streams.
    pub fn derived_seed(&self, salt: u64) -> u64 {
        mix(self.seed, salt)
    }
}

fn sample_posterior(mu: &[f64], logvar: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| m + (0.5 * lv).exp() * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{generate_dataset, render};

    #[test]
    fn encode_shapes_and_determinism() {
        let task = TaskKind::NormalStacking;
        let m = EncoderModel::for_task(task, EncoderMode::Stochastic, 16, 5, 3);
        let obs = render(task, task.space().state(0), 1).unwrap();
        let a = m.encode(&obs, true, 1).unwrap();
        let b = m.encode(&obs, true, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.z.len(), 5);
        let s = m.encode(&obs, false, 1).unwrap();
        assert_ne!(s.z, a.z);
        assert_eq!(s.mu, a.mu);
        assert!(m.encode(&Observation::unlabeled(vec![0.0; 3]), true, 0).is_err());
    }

    #[test]
    fn deterministic_mode_ignores_flag() {
        let m = EncoderModel::new(EncoderMode::Deterministic, 4, 8, 2, 1);
        let obs = Observation::unlabeled(vec![0.1, 0.2, -0.3, 0.4]);
        assert_eq!(m.encode(&obs, true, 0).unwrap().z, m.encode(&obs, false, 9).unwrap().z);
    }

    #[test]
    fn sampled_encodings_average_to_mean() {
        let task = TaskKind::HardStacking;
        let m = EncoderModel::for_task(task, EncoderMode::Stochastic, 16, 3, 8);
        let obs = render(task, task.space().state(10), 4).unwrap();
        let p = m.encode(&obs, true, 0).unwrap();
        let (mu, lv) = (p.mu.unwrap(), p.logvar.unwrap());
        let n = 10_000;
        let mut mean = vec![0.0; 3];
        for i in 0..n {
            let z = m.encode(&obs, false, i).unwrap().z;
            for (a, b) in mean.iter_mut().zip(z) {
                *a += b / n as f64;
            }
        }
        for k in 0..3 {
            let sd = (0.5 * lv[k]).exp();
            assert!((mean[k] - mu[k]).abs() <= 3.0 * sd / (n as f64).sqrt(), "dim {k}");
        }
    }

    #[test]
    fn untrained_decode_is_finite() {
        let m = EncoderModel::for_task(TaskKind::RopeBox, EncoderMode::Stochastic, 8, 4, 0);
        let x = m.decode(&[0.5, -0.5, 1.0, 0.0]).unwrap();
        assert_eq!(x.dim(), TaskKind::RopeBox.obs_dim());
        assert!(x.features.iter().all(|v| v.is_finite()));
        assert!(m.decode(&[0.0]).is_err());
    }

    #[test]
    fn apn_augmentation_sizes() {
        let task = TaskKind::NormalStacking;
        let data = generate_dataset(task, 40, 0.5, 2).unwrap();
        let m = EncoderModel::for_task(task, EncoderMode::Stochastic, 8, 3, 0);
        let means = m.augment_apn_dataset(&data, 0, 1).unwrap();
        assert_eq!(means.len(), 20);
        let aug = m.augment_apn_dataset(&data, 1, 1).unwrap();
        assert_eq!(aug.len(), 40);
        let actions: Vec<_> = data.iter().filter_map(|t| t.action).collect();
        for (i, pair) in aug.chunks(2).enumerate() {
            assert!(pair.iter().all(|t| t.action == Some(actions[i])));
        }
        let ae = EncoderModel::for_task(task, EncoderMode::Deterministic, 8, 3, 0);
        assert!(matches!(ae.augment_apn_dataset(&data, 1, 1), Err(LsrError::SamplingUnavailable)));
    }
}
