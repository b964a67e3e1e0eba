use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::LsrError;

/// L_p metric on latent vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    #[default]
    L1,
    L2,
    Linf,
}

impl MetricKind {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            MetricKind::L1 => diffs.sum(),
            MetricKind::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            MetricKind::Linf => diffs.fold(0.0, f64::max),
        }
    }

    /// Writes d‖a − b‖/da into `out` (a subgradient where the norm is not
    /// differentiable).
    pub fn gradient(self, a: &[f64], b: &[f64], out: &mut [f64]) {
        match self {
            MetricKind::L1 => {
                for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                    *o = sign(x - y);
                }
            }
            MetricKind::L2 => {
                let n = self.distance(a, b);
                for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                    *o = if n > 0.0 { (x - y) / n } else { 0.0 };
                }
            }
            MetricKind::Linf => {
                out.fill(0.0);
                let mut arg = 0;
                let mut best = -1.0;
                for (i, (x, y)) in a.iter().zip(b).enumerate() {
                    let d = (x - y).abs();
                    if d > best {
                        best = d;
                        arg = i;
                    }
                }
                if !a.is_empty() {
                    out[arg] = sign(a[arg] - b[arg]);
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::L1 => "l1",
            MetricKind::L2 => "l2",
            MetricKind::Linf => "linf",
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = LsrError;

    fn from_str(s: &str) -> Result<Self, LsrError> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(MetricKind::L1),
            "l2" => Ok(MetricKind::L2),
            "linf" | "l_inf" | "inf" => Ok(MetricKind::Linf),
            other => Err(LsrError::InvalidArgument(format!("unknown metric '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const ALL: [MetricKind; 3] = [MetricKind::L1, MetricKind::L2, MetricKind::Linf];

    #[test]
    fn known_values() {
        let a = [0.0, 0.0];
        let b = [3.0, -4.0];
        assert_eq!(MetricKind::L1.distance(&a, &b), 7.0);
        assert_eq!(MetricKind::L2.distance(&a, &b), 5.0);
        assert_eq!(MetricKind::Linf.distance(&a, &b), 4.0);
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0..10.0f64, 3)
    }

    proptest! {
        #[test]
        fn metric_axioms(a in vec3(), b in vec3(), c in vec3()) {
            for m in ALL {
                prop_assert_eq!(m.distance(&a, &a), 0.0);
                prop_assert!((m.distance(&a, &b) - m.distance(&b, &a)).abs() < 1e-12);
                prop_assert!(m.distance(&a, &c) <= m.distance(&a, &b) + m.distance(&b, &c) + 1e-9);
            }
        }
    }
}
