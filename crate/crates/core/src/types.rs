//! Shared domain types: iterates, datasets, regularity constants and
//! trajectory records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint iterate `(x, y)` with outer parameter `x` and inner parameter `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl ParameterPair {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("x", "outer dimension must be at least 1"));
        }
        if y.is_empty() {
            return Err(Error::invalid("y", "inner dimension must be at least 1"));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("pair", "entries must be finite"));
        }
        Ok(Self { x, y })
    }

    pub fn zeros(d1: usize, d2: usize) -> Self {
        Self {
            x: vec![0.0; d1],
            y: vec![0.0; d2],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.x.len(), self.y.len())
    }

    /// Euclidean norm of the concatenation `(x, y)`.
    pub fn norm(&self) -> f64 {
        self.x.iter().chain(&self.y).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }
}

/// `sqrt(|a.x - b.x|^2 + |a.y - b.y|^2)`.
pub fn joint_norm(a: &ParameterPair, b: &ParameterPair) -> Result<f64> {
    if a.x.len() != b.x.len() {
        return Err(Error::DimensionMismatch {
            what: "outer parameter",
            expected: a.x.len(),
            got: b.x.len(),
        });
    }
    if a.y.len() != b.y.len() {
        return Err(Error::DimensionMismatch {
            what: "inner parameter",
            expected: a.y.len(),
            got: b.y.len(),
        });
    }
    let sq: f64 = a
        .x
        .iter()
        .zip(&b.x)
        .chain(a.y.iter().zip(&b.y))
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    Ok(sq.sqrt())
}

/// One sample record. The payload layout is owned by the problem that drew it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample(pub Vec<f64>);

impl Sample {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Sample {
    fn from(v: Vec<f64>) -> Self {
        Sample(v)
    }
}

/// An indexed finite sample set. Indexing is stable for the dataset's lifetime.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn get(&self, i: usize) -> Option<&Sample> {
        self.samples.get(i)
    }

    /// Copy of the dataset with position `i` replaced by `sample`.
    pub fn replace(&self, i: usize, sample: Sample) -> Result<Dataset> {
        if i >= self.samples.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.samples.len(),
            });
        }
        let mut samples = self.samples.clone();
        samples[i] = sample;
        Ok(Dataset { samples })
    }
}

impl std::ops::Index<usize> for Dataset {
    type Output = Sample;

    fn index(&self, i: usize) -> &Sample {
        &self.samples[i]
    }
}

/// Lipschitz, smoothness, strong-convexity and Hölder constants of `f` and `g`.
///
/// `grad_at_zero_sup` is `sup_z |∂f(0; z)|` and only enters the `alpha = 0`
/// self-bounding constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    pub lip_f: f64,
    pub lip_g: f64,
    pub smooth_f: f64,
    pub smooth_g: f64,
    pub mu_f: f64,
    pub mu_g: f64,
    pub alpha: f64,
    pub tau: f64,
    pub grad_at_zero_sup: f64,
}

impl RegularityConstants {
    pub fn validate(&self) -> Result<()> {
        // Smoothness may be infinite for nonsmooth losses.
        for (name, v) in [("smooth_f", self.smooth_f), ("smooth_g", self.smooth_g)] {
            if !(v >= 0.0) {
                return Err(Error::invalid(name, format!("must be nonnegative, got {v}")));
            }
        }
        let all = [
            ("lip_f", self.lip_f),
            ("lip_g", self.lip_g),
            ("mu_f", self.mu_f),
            ("mu_g", self.mu_g),
            ("tau", self.tau),
            ("grad_at_zero_sup", self.grad_at_zero_sup),
        ];
        for (name, v) in all {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha", format!("must lie in [0, 1], got {}", self.alpha)));
        }
        if self.mu_f > 0.0 && self.smooth_f > 0.0 && self.mu_f > self.smooth_f {
            return Err(Error::invalid("mu_f", "exceeds smooth_f"));
        }
        if self.mu_g > 0.0 && self.smooth_g > 0.0 && self.mu_g > self.smooth_g {
            return Err(Error::invalid("mu_g", "exceeds smooth_g"));
        }
        Ok(())
    }

    /// `max(smooth_f, smooth_g)`.
    pub fn smooth_max(&self) -> f64 {
        self.smooth_f.max(self.smooth_g)
    }
}

/// Snapshot of the iterate at the start of outer iteration `k`, after any
/// inner-state reset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub k: usize,
    pub pair: ParameterPair,
}

/// What a solver run produced.
///
/// `risk_path[k]` is the empirical outer risk after outer update `k + 1`, so
/// the last entry is the risk of `final_pair`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub checkpoints: Vec<Checkpoint>,
    pub risk_path: Vec<f64>,
    pub final_pair: ParameterPair,
}
