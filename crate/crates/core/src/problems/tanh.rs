//! Smooth nonconvex pair built from `tanh` features.
//!
//! `f(x, y; ξ) = ½|tanh(x) − a|² + ½|tanh(y) − b|²`,
//! `g(x, y; ζ) = ½|tanh(y) − M tanh(x) − c|²`, with every target entry
//! bounded by 1 in magnitude.

use serde::{Deserialize, Serialize};

use super::quadratic::build_matrix;
use super::{check_finite_nonneg, check_positive, BilevelProblem, MatrixSpec, Population, Regime};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::types::{RegularityConstants, Sample};

/// `sup |tanh''| = 4 / (3√3)`.
const TANH_CURVATURE: f64 = 0.769_800_358_919_501;

fn default_coupling() -> MatrixSpec {
    MatrixSpec::Scaled { norm: 1.0 }
}

fn default_center() -> f64 {
    0.5
}

fn default_spread() -> f64 {
    0.3
}

fn default_region_radius() -> f64 {
    100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TanhParams {
    pub d1: usize,
    pub d2: usize,
    #[serde(default = "default_coupling")]
    pub coupling: MatrixSpec,
    /// Target means are drawn entrywise from `[-target_center, target_center]`.
    #[serde(default = "default_center")]
    pub target_center: f64,
    /// Per-sample entrywise jitter around the mean.
    #[serde(default = "default_spread")]
    pub target_spread: f64,
    #[serde(default = "default_region_radius")]
    pub region_radius: f64,
}

impl TanhParams {
    pub fn new(d1: usize, d2: usize) -> Self {
        Self {
            d1,
            d2,
            coupling: default_coupling(),
            target_center: default_center(),
            target_spread: default_spread(),
            region_radius: default_region_radius(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TanhProblem {
    d1: usize,
    d2: usize,
    /// Row-major `d2 × d1`.
    m: Vec<f64>,
    region_radius: f64,
    constants: RegularityConstants,
}

#[derive(Clone, Debug)]
pub struct TanhPopulation {
    outer_center: Vec<f64>,
    inner_center: Vec<f64>,
    spread: f64,
}

/// `sup_t (|t| + B)(1 − t²)` over `t ∈ [0, 1]`, the largest coordinate slope
/// of `½(tanh u − a)²` when `|a| ≤ B`.
fn coordinate_lipschitz(bound: f64) -> f64 {
    let t = (-bound + (bound * bound + 3.0).sqrt()) / 3.0;
    (t + bound) * (1.0 - t * t)
}

pub fn make_smooth_ncnc(
    params: &TanhParams,
    stream: &mut RandomStream,
) -> Result<(TanhProblem, TanhPopulation)> {
    let (d1, d2) = (params.d1, params.d2);
    if d1 == 0 || d2 == 0 {
        return Err(Error::invalid("d1/d2", "dimensions must be at least 1"));
    }
    check_finite_nonneg("target_center", params.target_center)?;
    check_finite_nonneg("target_spread", params.target_spread)?;
    check_positive("region_radius", params.region_radius)?;
    let bound = params.target_center + params.target_spread;
    if bound > 1.0 {
        return Err(Error::invalid(
            "target_center + target_spread",
            format!("target magnitude {bound} exceeds 1"),
        ));
    }
    let m = build_matrix("coupling", &params.coupling, d2, d1, stream)?;
    let sigma = if m.iter().all(|v| *v == 0.0) {
        0.0
    } else {
        m.singular_values().max()
    };
    let row_sum = (0..d2)
        .map(|i| (0..d1).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let col_sum = (0..d1)
        .map(|j| (0..d2).map(|i| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);

    let c = params.target_center;
    let outer_center = (0..d1 + d2).map(|_| stream.uniform_range(-c, c)).collect();
    let inner_center = (0..d2).map(|_| stream.uniform_range(-c, c)).collect();

    let n = (d1 + d2) as f64;
    let smooth_f = 1.0 + 2.0 * (1.0 + bound) * 2.0 / (3.0 * 3f64.sqrt());
    let residual = 1.0 + row_sum + bound;
    let constants = RegularityConstants {
        lip_f: coordinate_lipschitz(bound) * n.sqrt(),
        lip_g: (1.0 + sigma * sigma).sqrt() * (d2 as f64).sqrt() * residual,
        smooth_f,
        smooth_g: 1.0 + sigma * sigma + TANH_CURVATURE * residual * col_sum.max(1.0),
        mu_f: 0.0,
        mu_g: 0.0,
        alpha: 1.0,
        tau: smooth_f,
        grad_at_zero_sup: bound * n.sqrt(),
    };
    constants.validate()?;

    let mut dense = Vec::with_capacity(d1 * d2);
    for i in 0..d2 {
        for j in 0..d1 {
            dense.push(m[(i, j)]);
        }
    }
    Ok((
        TanhProblem {
            d1,
            d2,
            m: dense,
            region_radius: params.region_radius,
            constants,
        },
        TanhPopulation {
            outer_center,
            inner_center,
            spread: params.target_spread,
        },
    ))
}

impl TanhProblem {
    /// `tanh(y) − M tanh(x) − c`.
    fn residual(&self, x: &[f64], y: &[f64], c: &[f64]) -> Vec<f64> {
        let tx: Vec<f64> = x.iter().map(|v| v.tanh()).collect();
        (0..self.d2)
            .map(|i| {
                let row = &self.m[i * self.d1..(i + 1) * self.d1];
                y[i].tanh() - row.iter().zip(&tx).map(|(a, b)| a * b).sum::<f64>() - c[i]
            })
            .collect()
    }
}

fn fit_loss(v: &[f64], t: &[f64]) -> f64 {
    0.5 * v.iter().zip(t).map(|(a, b)| (a.tanh() - b).powi(2)).sum::<f64>()
}

fn fit_grad(v: &[f64], t: &[f64], out: &mut [f64]) {
    for ((o, a), b) in out.iter_mut().zip(v).zip(t) {
        let th = a.tanh();
        *o = (th - b) * (1.0 - th * th);
    }
}

impl BilevelProblem for TanhProblem {
    fn name(&self) -> &'static str {
        "tanh"
    }

    fn dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    fn regime(&self) -> Regime {
        Regime::Nonconvex
    }

    fn constants(&self) -> &RegularityConstants {
        &self.constants
    }

    fn region_radius(&self) -> f64 {
        self.region_radius
    }

    fn outer_loss(&self, x: &[f64], y: &[f64], xi: &Sample) -> f64 {
        let (a, b) = xi.values().split_at(self.d1);
        fit_loss(x, a) + fit_loss(y, b)
    }

    fn inner_loss(&self, x: &[f64], y: &[f64], zeta: &Sample) -> f64 {
        0.5 * self.residual(x, y, zeta.values()).iter().map(|r| r * r).sum::<f64>()
    }

    fn outer_grad_x(&self, x: &[f64], _y: &[f64], xi: &Sample, out: &mut [f64]) {
        fit_grad(x, &xi.values()[..self.d1], out);
    }

    fn outer_grad_y(&self, _x: &[f64], y: &[f64], xi: &Sample, out: &mut [f64]) {
        fit_grad(y, &xi.values()[self.d1..], out);
    }

    fn inner_grad_x(&self, x: &[f64], y: &[f64], zeta: &Sample, out: &mut [f64]) {
        let r = self.residual(x, y, zeta.values());
        for (j, o) in out.iter_mut().enumerate() {
            let th = x[j].tanh();
            let s: f64 = (0..self.d2).map(|i| self.m[i * self.d1 + j] * r[i]).sum();
            *o = -(1.0 - th * th) * s;
        }
    }

    fn inner_grad_y(&self, x: &[f64], y: &[f64], zeta: &Sample, out: &mut [f64]) {
        let r = self.residual(x, y, zeta.values());
        for (i, o) in out.iter_mut().enumerate() {
            let th = y[i].tanh();
            *o = r[i] * (1.0 - th * th);
        }
    }
}

impl Population for TanhPopulation {
    fn sample_outer(&self, stream: &mut RandomStream) -> Sample {
        let s = self.spread;
        Sample(self.outer_center.iter().map(|c| c + stream.uniform_range(-s, s)).collect())
    }

    fn sample_inner(&self, stream: &mut RandomStream) -> Sample {
        let s = self.spread;
        Sample(self.inner_center.iter().map(|c| c + stream.uniform_range(-s, s)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_has_zero_loss() {
        let (p, _) = make_smooth_ncnc(&TanhParams::new(2, 2), &mut RandomStream::new(3)).unwrap();
        let (x0, y0) = ([0.3, -0.7], [1.1, 0.2]);
        let xi = Sample(x0.iter().chain(&y0).map(|v: &f64| v.tanh()).collect());
        assert_eq!(p.outer_loss(&x0, &y0, &xi), 0.0);
    }

    #[test]
    fn rejects_targets_above_one() {
        let mut params = TanhParams::new(1, 1);
        params.target_center = 0.8;
        params.target_spread = 0.3;
        assert!(make_smooth_ncnc(&params, &mut RandomStream::new(1)).is_err());
    }

    #[test]
    fn coordinate_lipschitz_matches_grid() {
        for bound in [0.0, 0.5, 1.0] {
            let grid = (0..=100_000)
                .map(|i| {
                    let t = i as f64 / 100_000.0;
                    (t + bound) * (1.0 - t * t)
                })
                .fold(0.0, f64::max);
            assert!((coordinate_lipschitz(bound) - grid).abs() < 1e-9);
        }
        assert!((coordinate_lipschitz(1.0) - 32.0 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn samples_within_bounds() {
        let (_, pop) = make_smooth_ncnc(&TanhParams::new(3, 2), &mut RandomStream::new(5)).unwrap();
        let mut s = RandomStream::new(6);
        for _ in 0..1000 {
            assert!(pop.sample_outer(&mut s).values().iter().all(|v| v.abs() <= 0.8));
        }
    }
}
