//! Minimal dense-layer machinery over a flat parameter vector.
//!
//! Models own one `Vec<f64>` of parameters; layers are views described by
//! [`Dense`]. Keeping parameters flat makes the optimizers and the
//! finite-difference gradient checks straightforward.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully connected layer `y = W x + b`, `W` row-major `n_out × n_in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub offset: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    pub fn n_params(&self) -> usize {
        self.n_out * (self.n_in + 1)
    }

    fn w_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.n_out * self.n_in
    }

    fn b_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.n_out * self.n_in;
        start..start + self.n_out
    }

    pub fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        let w = &params[self.w_range()];
        let b = &params[self.b_range()];
        for (o, yo) in y.iter_mut().enumerate().take(self.n_out) {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            *yo = b[o] + dot(row, x);
        }
    }

    /// Accumulates parameter gradients into `grad` and, if requested, writes
    /// the input gradient into `gx`.
    pub fn backward(&self, params: &[f64], x: &[f64], gy: &[f64], grad: &mut [f64], gx: Option<&mut [f64]>) {
        let (w_start, b_start) = (self.offset, self.offset + self.n_out * self.n_in);
        {
            let gw = &mut grad[w_start..b_start];
            for (o, &g) in gy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &mut gw[o * self.n_in..(o + 1) * self.n_in];
                for (r, xi) in row.iter_mut().zip(x) {
                    *r += g * xi;
                }
            }
        }
        for (gb, g) in grad[b_start..b_start + self.n_out].iter_mut().zip(gy) {
            *gb += g;
        }
        if let Some(gx) = gx {
            gx.fill(0.0);
            let w = &params[self.w_range()];
            for (o, &g) in gy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &w[o * self.n_in..(o + 1) * self.n_in];
                for (gi, wi) in gx.iter_mut().zip(row) {
                    *gi += g * wi;
                }
            }
        }
    }

    /// Uniform in ±1/√fan_in for weights and biases.
    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        let bound = 1.0 / (self.n_in as f64).sqrt();
        for p in &mut params[self.offset..self.offset + self.n_params()] {
            *p = rng.random_range(-bound..bound);
        }
    }
}

/// Lays out consecutive dense layers; returns the layers and total size.
pub fn layout(shapes: &[(usize, usize)]) -> (Vec<Dense>, usize) {
    let mut offset = 0;
    let layers = shapes
        .iter()
        .map(|&(n_in, n_out)| {
            let d = Dense { offset, n_in, n_out };
            offset += d.n_params();
            d
        })
        .collect();
    (layers, offset)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * i + k] * b[4 * i + k];
        }
    }
    let mut s = acc[0] + acc[1] + acc[2] + acc[3];
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn tanh_inplace(v: &mut [f64]) {
    for x in v {
        *x = x.tanh();
    }
}

/// Backprop through tanh given its output `y`: `g *= 1 - y²`.
pub fn tanh_backward(y: &[f64], g: &mut [f64]) {
    for (gi, yi) in g.iter_mut().zip(y) {
        *gi *= 1.0 - yi * yi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam { lr: f64 },
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        let n = if matches!(kind, OptimizerKind::Adam { .. }) { n_params } else { 0 };
        Optimizer {
            kind,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam { lr } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
                    params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn dense_backward_matches_finite_differences() {
        let (layers, n) = layout(&[(5, 3)]);
        let l = layers[0];
        let mut p = vec![0.0; n];
        l.init(&mut p, &mut stream_rng(1, 0));
        let x = [0.3, -0.2, 0.9, 0.1, -0.7];
        let gy = [1.0, -2.0, 0.5];
        // Objective: gy · (W x + b).
        let f = |p: &[f64], x: &[f64]| {
            let mut y = [0.0; 3];
            l.forward(p, x, &mut y);
            dot(&y, &gy)
        };
        let mut grad = vec![0.0; n];
        let mut gx = [0.0; 5];
        l.backward(&p, &x, &gy, &mut grad, Some(&mut gx));
        let h = 1e-6;
        for i in 0..n {
            let mut pp = p.clone();
            pp[i] += h;
            let mut pm = p.clone();
            pm[i] -= h;
            assert!(((f(&pp, &x) - f(&pm, &x)) / (2.0 * h) - grad[i]).abs() < 1e-8);
        }
        for i in 0..5 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            assert!(((f(&p, &xp) - f(&p, &xm)) / (2.0 * h) - gx[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn optimizers_descend_a_quadratic() {
        for kind in [OptimizerKind::Sgd { lr: 0.1 }, OptimizerKind::Adam { lr: 0.05 }] {
            let mut p = vec![3.0, -2.0];
            let mut opt = Optimizer::new(kind, 2);
            for _ in 0..500 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
                opt.step(&mut p, &g);
            }
            assert!(p.iter().all(|x| x.abs() < 1e-2), "{kind:?}: {p:?}");
        }
    }
}
