//! Augmented loss: ½(L_vae(x1) + L_vae(x2)) + γ·L_action, with backprop.

use serde::{Deserialize, Serialize};

use super::{EncoderMode, Network};
use crate::error::{LsrError, Result};
use crate::metric::MetricKind;
use crate::nn::{tanh_backward, tanh_inplace};

/// How the minimum action distance evolves during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DmMode {
    /// Start from `LossConfig::dm` and add `delta_dm` every `k_epochs` epochs
    /// while action and no-action distances still overlap.
    Dynamic,
    /// Keep `LossConfig::dm` fixed.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub beta_end: f64,
    pub beta_ramp_epochs: usize,
    pub gamma: f64,
    pub metric: MetricKind,
    pub dm: f64,
    pub dm_mode: DmMode,
    pub delta_dm: f64,
    pub k_epochs: usize,
    pub recon_weight: f64,
    pub weight_decay: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta_end: 2.0,
            beta_ramp_epochs: 160,
            gamma: 100.0,
            metric: MetricKind::L1,
            dm: 0.0,
            dm_mode: DmMode::Dynamic,
            delta_dm: 0.1,
            k_epochs: 5,
            recon_weight: 30.0,
            weight_decay: 0.0,
        }
    }
}

impl LossConfig {
    /// Same configuration without the action term.
    pub fn baseline(&self) -> Self {
        LossConfig { gamma: 0.0, ..*self }
    }

    pub fn static_dm(&self, dm: f64) -> Self {
        LossConfig {
            dm,
            dm_mode: DmMode::Static,
            ..*self
        }
    }

    /// Linear KL-weight ramp from 0 to `beta_end`.
    pub fn beta_at(&self, epoch: usize) -> f64 {
        if self.beta_ramp_epochs == 0 || epoch >= self.beta_ramp_epochs {
            self.beta_end
        } else {
            self.beta_end * epoch as f64 / self.beta_ramp_epochs as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LsrError::InvalidArgument(m.to_string()));
        if !(self.gamma >= 0.0) {
            return bad("gamma must be non-negative");
        }
        if !(self.dm >= 0.0) {
            return bad("dm must be non-negative");
        }
        if self.dm_mode == DmMode::Dynamic && (!(self.delta_dm > 0.0) || self.k_epochs == 0) {
            return bad("dynamic dm needs delta_dm > 0 and k_epochs >= 1");
        }
        Ok(())
    }
}

/// Action term: hinge `max(0, dm − d)` for action pairs, `d` otherwise.
pub fn action_loss(z1: &[f64], z2: &[f64], is_action: bool, dm: f64, metric: MetricKind) -> Result<f64> {
    if z1.len() != z2.len() {
        return Err(LsrError::DimensionMismatch {
            expected: z1.len(),
            got: z2.len(),
        });
    }
    let d = metric.distance(z1, z2);
    Ok(if is_action { (dm - d).max(0.0) } else { d })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// ½(recon(x1) + recon(x2)).
    pub recon: f64,
    /// ½(KL(x1) + KL(x2)), unweighted.
    pub kl: f64,
    /// Unweighted action term.
    pub action: f64,
    /// recon + β·kl + γ·action.
    pub total: f64,
}

impl std::ops::AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.recon += o.recon;
        self.kl += o.kl;
        self.action += o.action;
        self.total += o.total;
    }
}

impl LossBreakdown {
    pub fn scaled(self, s: f64) -> Self {
        LossBreakdown {
            recon: self.recon * s,
            kl: self.kl * s,
            action: self.action * s,
            total: self.total * s,
        }
    }
}

/// Per-observation forward cache.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    h: Vec<f64>,
    enc: Vec<f64>,
    z: Vec<f64>,
    g: Vec<f64>,
    xhat: Vec<f64>,
}

impl Trace {
    pub(crate) fn new(net: &Network) -> Self {
        Trace {
            h: vec![0.0; net.hidden],
            enc: vec![0.0; net.enc_out()],
            z: vec![0.0; net.ld],
            g: vec![0.0; net.hidden],
            xhat: vec![0.0; net.obs_dim],
        }
    }

    /// Latent code seen by the action term: the posterior mean in stochastic
    /// mode, the code itself in deterministic mode.
    fn code<'a>(&'a self, net: &Network) -> &'a [f64] {
        &self.enc[..net.ld]
    }
}

/// Reusable buffers for [`pair_loss_grad`].
#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    t1: Trace,
    t2: Trace,
    gxhat: Vec<f64>,
    gg: Vec<f64>,
    gz: Vec<f64>,
    genc: Vec<f64>,
    gh: Vec<f64>,
    gcode: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(net: &Network) -> Self {
        Scratch {
            t1: Trace::new(net),
            t2: Trace::new(net),
            gxhat: vec![0.0; net.obs_dim],
            gg: vec![0.0; net.hidden],
            gz: vec![0.0; net.ld],
            genc: vec![0.0; net.enc_out()],
            gh: vec![0.0; net.hidden],
            gcode: vec![0.0; net.ld],
        }
    }
}

fn forward(net: &Network, params: &[f64], x: &[f64], eps: &[f64], t: &mut Trace) -> (f64, f64) {
    net.enc1.forward(params, x, &mut t.h);
    tanh_inplace(&mut t.h);
    net.enc2.forward(params, &t.h, &mut t.enc);
    let ld = net.ld;
    let kl = match net.mode {
        EncoderMode::Stochastic => {
            let (mu, lv) = t.enc.split_at(ld);
            for i in 0..ld {
                t.z[i] = mu[i] + (0.5 * lv[i]).exp() * eps[i];
            }
            -0.5 * (0..ld).map(|i| 1.0 + lv[i] - mu[i] * mu[i] - lv[i].exp()).sum::<f64>()
        }
        EncoderMode::Deterministic => {
            t.z.copy_from_slice(&t.enc);
            0.0
        }
    };
    net.dec1.forward(params, &t.z, &mut t.g);
    tanh_inplace(&mut t.g);
    net.dec2.forward(params, &t.g, &mut t.xhat);
    let recon: f64 = t.xhat.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    (recon, kl)
}

/// Backward pass of one observation. `gcode` is the gradient flowing into the
/// action-term code; all gradients are scaled by `scale`.
#[allow(clippy::too_many_arguments)]
fn backward(
    net: &Network,
    params: &[f64],
    x: &[f64],
    eps: &[f64],
    t: &Trace,
    beta: f64,
    recon_weight: f64,
    scale: f64,
    gcode: &[f64],
    grad: &mut [f64],
    s: &mut ScratchBufs<'_>,
) {
    let ld = net.ld;
    // Pair objective carries ½ on each observation's VAE term.
    let half = 0.5 * scale;
    for ((g, a), b) in s.gxhat.iter_mut().zip(&t.xhat).zip(x) {
        *g = half * recon_weight * 2.0 * (a - b);
    }
    net.dec2.backward(params, &t.g, s.gxhat, grad, Some(s.gg));
    tanh_backward(&t.g, s.gg);
    net.dec1.backward(params, &t.z, s.gg, grad, Some(s.gz));

    match net.mode {
        EncoderMode::Stochastic => {
            let (mu, lv) = t.enc.split_at(ld);
            for i in 0..ld {
                let sd = (0.5 * lv[i]).exp();
                s.genc[i] = s.gz[i] + half * beta * mu[i] + scale * gcode[i];
                s.genc[ld + i] = s.gz[i] * eps[i] * 0.5 * sd + half * beta * 0.5 * (lv[i].exp() - 1.0);
            }
        }
        EncoderMode::Deterministic => {
            for i in 0..ld {
                s.genc[i] = s.gz[i] + scale * gcode[i];
            }
        }
    }
    net.enc2.backward(params, &t.h, s.genc, grad, Some(s.gh));
    tanh_backward(&t.h, s.gh);
    net.enc1.backward(params, x, s.gh, grad, None);
}

struct ScratchBufs<'a> {
    gxhat: &'a mut [f64],
    gg: &'a mut [f64],
    gz: &'a mut [f64],
    genc: &'a mut [f64],
    gh: &'a mut [f64],
}

/// Loss of one pair. When `grad` is given, adds `scale ×` the parameter
/// gradient into it. `eps1`/`eps2` are the reparameterization draws (ignored
/// in deterministic mode).
#[allow(clippy::too_many_arguments)]
pub(crate) fn pair_loss_grad(
    net: &Network,
    params: &[f64],
    x1: &[f64],
    x2: &[f64],
    is_action: bool,
    eps1: &[f64],
    eps2: &[f64],
    beta: f64,
    dm: f64,
    cfg: &LossConfig,
    scale: f64,
    grad: Option<&mut [f64]>,
    scratch: &mut Scratch,
) -> LossBreakdown {
    let (r1, k1) = forward(net, params, x1, eps1, &mut scratch.t1);
    let (r2, k2) = forward(net, params, x2, eps2, &mut scratch.t2);
    let c1 = scratch.t1.code(net);
    let c2 = scratch.t2.code(net);
    let d = cfg.metric.distance(c1, c2);
    let (action, active) = if is_action {
        ((dm - d).max(0.0), dm - d > 0.0)
    } else {
        (d, true)
    };
    let recon = 0.5 * cfg.recon_weight * (r1 + r2);
    let kl = 0.5 * (k1 + k2);
    let out = LossBreakdown {
        recon,
        kl,
        action,
        total: recon + beta * kl + cfg.gamma * action,
    };

    if let Some(grad) = grad {
        // d action / d c1; d action / d c2 is its negation.
        if active && cfg.gamma > 0.0 {
            cfg.metric.gradient(c1, c2, &mut scratch.gcode);
            let sign = if is_action { -cfg.gamma } else { cfg.gamma };
            for g in &mut scratch.gcode {
                *g *= sign;
            }
        } else {
            scratch.gcode.fill(0.0);
        }
        let Scratch {
            t1,
            t2,
            gxhat,
            gg,
            gz,
            genc,
            gh,
            gcode,
        } = scratch;
        let mut bufs = ScratchBufs { gxhat, gg, gz, genc, gh };
        backward(net, params, x1, eps1, t1, beta, cfg.recon_weight, scale, gcode, grad, &mut bufs);
        for g in gcode.iter_mut() {
            *g = -*g;
        }
        backward(net, params, x2, eps2, t2, beta, cfg.recon_weight, scale, gcode, grad, &mut bufs);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::EncoderModel;
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn action_loss_cases() {
        let z = [0.5, -1.0, 2.0];
        assert_eq!(action_loss(&z, &z, false, 1.0, MetricKind::L1).unwrap(), 0.0);
        let far = [3.5, -1.0, 2.0];
        assert_eq!(action_loss(&z, &far, true, 2.0, MetricKind::L1).unwrap(), 0.0);
        let near = [1.0, -0.5, 2.0]; // L1 distance 1.0
        let l = action_loss(&z, &near, true, 2.3, MetricKind::L1).unwrap();
        assert!((l - 1.3).abs() < 1e-12);
        assert!(action_loss(&z, &[0.0], true, 1.0, MetricKind::L1).is_err());
    }

    #[test]
    fn beta_ramp() {
        let cfg = LossConfig {
            beta_end: 2.0,
            beta_ramp_epochs: 400,
            ..LossConfig::default()
        };
        assert_eq!(cfg.beta_at(0), 0.0);
        assert_eq!(cfg.beta_at(200), 1.0);
        assert_eq!(cfg.beta_at(400), 2.0);
        assert_eq!(cfg.beta_at(1000), 2.0);
    }

    #[test]
    fn kl_vanishes_at_prior() {
        // Zero encoder output weights/biases give mu = 0, logvar = 0.
        let mut m = EncoderModel::new(EncoderMode::Stochastic, 4, 3, 2, 1);
        let enc2 = m.net.enc2;
        for p in &mut m.params[enc2.offset..enc2.offset + enc2.n_params()] {
            *p = 0.0;
        }
        let mut s = Scratch::new(&m.net);
        let x = [0.1, 0.2, 0.3, 0.4];
        let l = pair_loss_grad(&m.net, &m.params, &x, &x, false, &[0.0; 2], &[0.0; 2], 1.0, 0.0, &LossConfig::default(), 1.0, None, &mut s);
        assert_eq!(l.kl, 0.0);
        assert_eq!(l.action, 0.0);
    }

    #[test]
    fn perfect_deterministic_reconstruction_zero_loss() {
        // Identity-like decoder is hard to set up through tanh; instead use a
        // constant observation equal to the decoder's bias output.
        let mut m = EncoderModel::new(EncoderMode::Deterministic, 3, 2, 1, 4);
        let dec2 = m.net.dec2;
        for p in &mut m.params[dec2.offset..dec2.offset + dec2.n_in * dec2.n_out] {
            *p = 0.0;
        }
        let bias = m.params[dec2.offset + dec2.n_in * dec2.n_out..dec2.offset + dec2.n_params()].to_vec();
        let cfg = LossConfig {
            gamma: 0.0,
            ..LossConfig::default()
        };
        let mut s = Scratch::new(&m.net);
        let l = pair_loss_grad(&m.net, &m.params, &bias, &bias, false, &[], &[], 2.0, 0.0, &cfg, 1.0, None, &mut s);
        assert!(l.total.abs() < 1e-24, "{l:?}");
    }

    /// Central finite differences on random coordinates, per loss term.
    fn check_gradients(mode: EncoderMode, metric: MetricKind, cfg_of: impl Fn(LossConfig) -> LossConfig, is_action: bool, seed: u64) {
        let m = EncoderModel::new(mode, 6, 5, 3, seed);
        let mut rng = stream_rng(seed, 77);
        let x1: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps1: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let eps2: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let cfg = cfg_of(LossConfig {
            metric,
            ..LossConfig::default()
        });
        let beta = 1.3;
        let dm = 50.0; // keeps the hinge active for action pairs
        let mut s = Scratch::new(&m.net);
        let mut grad = vec![0.0; m.params.len()];
        pair_loss_grad(&m.net, &m.params, &x1, &x2, is_action, &eps1, &eps2, beta, dm, &cfg, 1.0, Some(&mut grad), &mut s);
        let f = |p: &[f64], s: &mut Scratch| {
            pair_loss_grad(&m.net, p, &x1, &x2, is_action, &eps1, &eps2, beta, dm, &cfg, 1.0, None, s).total
        };
        let h = 1e-5;
        for _ in 0..10 {
            let i = rng.random_range(0..m.params.len());
            let mut pp = m.params.clone();
            pp[i] += h;
            let mut pm = m.params.clone();
            pm[i] -= h;
            let fd = (f(&pp, &mut s) - f(&pm, &mut s)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "{mode:?} {metric:?} coord {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn gradients_per_term() {
        let recon_only = |c: LossConfig| LossConfig { gamma: 0.0, ..c };
        let kl_only = |c: LossConfig| LossConfig {
            gamma: 0.0,
            recon_weight: 0.0,
            ..c
        };
        let action_only = |c: LossConfig| LossConfig {
            recon_weight: 0.0,
            gamma: 3.0,
            ..c
        };
        for seed in 0..3 {
            check_gradients(EncoderMode::Stochastic, MetricKind::L1, recon_only, false, seed);
            check_gradients(EncoderMode::Stochastic, MetricKind::L1, kl_only, false, seed);
            check_gradients(EncoderMode::Deterministic, MetricKind::L1, recon_only, true, seed);
            for metric in [MetricKind::L1, MetricKind::L2, MetricKind::Linf] {
                for mode in [EncoderMode::Stochastic, EncoderMode::Deterministic] {
                    check_gradients(mode, metric, action_only, true, seed);
                    check_gradients(mode, metric, action_only, false, seed);
                }
            }
            check_gradients(EncoderMode::Stochastic, MetricKind::L1, |c| c, true, seed);
        }
    }
}
