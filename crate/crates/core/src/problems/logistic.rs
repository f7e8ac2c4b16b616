//! Convex softplus pair: `f = log(1 + exp(⟨a, x⟩ + ⟨b, y⟩))` with the inner
//! loss of the same form on independent features.
//!
//! With `OuterLossKind::AbsMargin` the outer loss becomes
//! `scale · |⟨a, x⟩ + ⟨b, y⟩|`, which has `(0, τ)`-Hölder subgradients.

use serde::{Deserialize, Serialize};

use super::{check_finite_nonneg, check_positive, dot, sigmoid, softplus, BilevelProblem, Population, Regime};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::types::{RegularityConstants, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OuterLossKind {
    Softplus,
    AbsMargin { scale: f64 },
}

fn default_outer_loss() -> OuterLossKind {
    OuterLossKind::Softplus
}

fn default_feature_radius() -> f64 {
    1.0
}

fn default_region_radius() -> f64 {
    100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticParams {
    pub d1: usize,
    pub d2: usize,
    /// Norm of the random-direction feature means.
    #[serde(default)]
    pub feature_center: f64,
    #[serde(default = "default_feature_radius")]
    pub feature_radius: f64,
    #[serde(default = "default_region_radius")]
    pub region_radius: f64,
    #[serde(default = "default_outer_loss")]
    pub outer_loss: OuterLossKind,
}

impl LogisticParams {
    pub fn new(d1: usize, d2: usize) -> Self {
        Self {
            d1,
            d2,
            feature_center: 0.0,
            feature_radius: 1.0,
            region_radius: 100.0,
            outer_loss: OuterLossKind::Softplus,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LogisticProblem {
    d1: usize,
    d2: usize,
    outer_loss: OuterLossKind,
    region_radius: f64,
    constants: RegularityConstants,
}

#[derive(Clone, Debug)]
pub struct LogisticPopulation {
    outer_center: Vec<f64>,
    inner_center: Vec<f64>,
    radius: f64,
}

pub fn make_logistic_cc(
    params: &LogisticParams,
    stream: &mut RandomStream,
) -> Result<(LogisticProblem, LogisticPopulation)> {
    let (d1, d2) = (params.d1, params.d2);
    if d1 == 0 || d2 == 0 {
        return Err(Error::invalid("d1/d2", "dimensions must be at least 1"));
    }
    check_finite_nonneg("feature_center", params.feature_center)?;
    check_finite_nonneg("feature_radius", params.feature_radius)?;
    check_positive("region_radius", params.region_radius)?;
    let n = d1 + d2;
    let mut outer_center = stream.unit_vector(n);
    outer_center.iter_mut().for_each(|v| *v *= params.feature_center);
    let mut inner_center = stream.unit_vector(n);
    inner_center.iter_mut().for_each(|v| *v *= params.feature_center);

    // sup |(a, b)| over the feature distribution.
    let feat = params.feature_center + params.feature_radius;
    let (lip_f, smooth_f, alpha, tau, grad0) = match params.outer_loss {
        OuterLossKind::Softplus => (feat, 0.25 * feat * feat, 1.0, 0.25 * feat * feat, 0.5 * feat),
        OuterLossKind::AbsMargin { scale } => {
            check_positive("outer_loss.scale", scale)?;
            (scale * feat, f64::INFINITY, 0.0, 2.0 * scale * feat, scale * feat)
        }
    };
    let constants = RegularityConstants {
        lip_f,
        lip_g: feat,
        smooth_f,
        smooth_g: 0.25 * feat * feat,
        mu_f: 0.0,
        mu_g: 0.0,
        alpha,
        tau,
        grad_at_zero_sup: grad0,
    };
    constants.validate()?;
    Ok((
        LogisticProblem {
            d1,
            d2,
            outer_loss: params.outer_loss,
            region_radius: params.region_radius,
            constants,
        },
        LogisticPopulation {
            outer_center,
            inner_center,
            radius: params.feature_radius,
        },
    ))
}

impl LogisticProblem {
    fn margin(&self, x: &[f64], y: &[f64], s: &Sample) -> f64 {
        let (a, b) = s.values().split_at(self.d1);
        dot(a, x) + dot(b, y)
    }

    fn outer_slope(&self, m: f64) -> f64 {
        match self.outer_loss {
            OuterLossKind::Softplus => sigmoid(m),
            OuterLossKind::AbsMargin { scale } => scale * m.signum() * f64::from(m != 0.0),
        }
    }
}

impl BilevelProblem for LogisticProblem {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    fn regime(&self) -> Regime {
        Regime::Convex
    }

    fn constants(&self) -> &RegularityConstants {
        &self.constants
    }

    fn region_radius(&self) -> f64 {
        self.region_radius
    }

    fn outer_loss(&self, x: &[f64], y: &[f64], xi: &Sample) -> f64 {
        let m = self.margin(x, y, xi);
        match self.outer_loss {
            OuterLossKind::Softplus => softplus(m),
            OuterLossKind::AbsMargin { scale } => scale * m.abs(),
        }
    }

    fn inner_loss(&self, x: &[f64], y: &[f64], zeta: &Sample) -> f64 {
        softplus(self.margin(x, y, zeta))
    }

    fn outer_grad_x(&self, x: &[f64], y: &[f64], xi: &Sample, out: &mut [f64]) {
        let s = self.outer_slope(self.margin(x, y, xi));
        out.iter_mut().zip(&xi.values()[..self.d1]).for_each(|(o, a)| *o = s * a);
    }

    fn outer_grad_y(&self, x: &[f64], y: &[f64], xi: &Sample, out: &mut [f64]) {
        let s = self.outer_slope(self.margin(x, y, xi));
        out.iter_mut().zip(&xi.values()[self.d1..]).for_each(|(o, b)| *o = s * b);
    }

    fn inner_grad_x(&self, x: &[f64], y: &[f64], zeta: &Sample, out: &mut [f64]) {
        let s = sigmoid(self.margin(x, y, zeta));
        out.iter_mut().zip(&zeta.values()[..self.d1]).for_each(|(o, a)| *o = s * a);
    }

    fn inner_grad_y(&self, x: &[f64], y: &[f64], zeta: &Sample, out: &mut [f64]) {
        let s = sigmoid(self.margin(x, y, zeta));
        out.iter_mut().zip(&zeta.values()[self.d1..]).for_each(|(o, b)| *o = s * b);
    }
}

impl Population for LogisticPopulation {
    fn sample_outer(&self, stream: &mut RandomStream) -> Sample {
        let mut v = stream.in_ball(self.outer_center.len(), self.radius);
        v.iter_mut().zip(&self.outer_center).for_each(|(a, c)| *a += c);
        Sample(v)
    }

    fn sample_inner(&self, stream: &mut RandomStream) -> Sample {
        let mut v = stream.in_ball(self.inner_center.len(), self.radius);
        v.iter_mut().zip(&self.inner_center).for_each(|(a, c)| *a += c);
        Sample(v)
    }
}
