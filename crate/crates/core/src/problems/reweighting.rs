//! Data-reweighting hyperparameter problem on a two-Gaussian classification
//! task with label noise.
//!
//! The outer variable `x ∈ R^n` holds one weight logit per training example of
//! a fixed, corrupted training pool; the inner variable `y ∈ R^d` is a linear
//! classifier. The inner loss on pool example `j` is
//! `sigmoid(x_j) · ℓ(y; z_j, l_j) + (λ/2)|y|²` with logistic loss
//! `ℓ(y; z, l) = log(1 + exp(−l⟨y, z⟩))`.
//!
//! The validation loss of a classifier does not depend on the weights, so a
//! first-order method would never move `x`. The outer loss therefore scores
//! the classifier after one look-ahead step on the weighted pool objective:
//! `f(x, y; ξ) = ℓ(y − η_la ∇_y G(x, y); ξ)` where
//! `G(x, y) = (1/n) Σ_j sigmoid(x_j) ℓ(y; z_j, l_j) + (λ/2)|y|²`.
//!
//! Payload layouts: training `[j, label, z...]`, validation `[label, z...]`.

use serde::{Deserialize, Serialize};

use super::{check_finite_nonneg, check_positive, dot, norm, sigmoid, softplus, BilevelProblem, Population, Regime};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::types::{RegularityConstants, Sample};

/// `sup |sigmoid''| = sup |softplus'''| = 1 / (6√3)`.
const SIGMOID_CURVATURE: f64 = 0.096_225_044_864_937_63;

fn default_separation() -> f64 {
    1.5
}

fn default_noise() -> f64 {
    1.0
}

fn default_clip() -> f64 {
    4.0
}

fn default_ridge() -> f64 {
    0.1
}

fn default_lookahead() -> f64 {
    1.0
}

fn default_region_radius() -> f64 {
    100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReweightingParams {
    pub n_train: usize,
    pub d: usize,
    pub corruption_rate: f64,
    /// Distance of each class mean from the origin.
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Features are rescaled onto this norm ball.
    #[serde(default = "default_clip")]
    pub feature_clip: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_lookahead")]
    pub lookahead: f64,
    #[serde(default = "default_region_radius")]
    pub region_radius: f64,
}

impl ReweightingParams {
    pub fn new(n_train: usize, d: usize, corruption_rate: f64) -> Self {
        Self {
            n_train,
            d,
            corruption_rate,
            separation: default_separation(),
            noise: default_noise(),
            feature_clip: default_clip(),
            ridge: default_ridge(),
            lookahead: default_lookahead(),
            region_radius: default_region_radius(),
        }
    }
}

#[derive(Clone, Debug)]
struct Generator {
    mean: Vec<f64>,
    noise: f64,
    clip: f64,
}

impl Generator {
    /// Clean `(label, features)` draw.
    fn draw(&self, stream: &mut RandomStream) -> (f64, Vec<f64>) {
        let label = if stream.bernoulli(0.5) { 1.0 } else { -1.0 };
        let mut z: Vec<f64> = self
            .mean
            .iter()
            .map(|m| label * m + self.noise * stream.normal())
            .collect();
        let n = norm(&z);
        if n > self.clip {
            z.iter_mut().for_each(|v| *v *= self.clip / n);
        }
        (label, z)
    }
}

#[derive(Clone, Debug)]
pub struct ReweightingProblem {
    d: usize,
    /// Observed (possibly flipped) pool labels.
    labels: Vec<f64>,
    clean_labels: Vec<f64>,
    /// Row-major `n × d` pool features.
    features: Vec<f64>,
    ridge: f64,
    lookahead: f64,
    region_radius: f64,
    constants: RegularityConstants,
}

#[derive(Clone, Debug)]
pub struct ReweightingPopulation {
    generator: Generator,
    pool: Vec<Sample>,
}

pub fn make_data_reweighting(
    params: &ReweightingParams,
    stream: &mut RandomStream,
) -> Result<(ReweightingProblem, ReweightingPopulation)> {
    if params.n_train < 1 {
        return Err(Error::invalid("n_train", "need at least one training example"));
    }
    if params.d < 1 {
        return Err(Error::invalid("d", "feature dimension must be at least 1"));
    }
    if !(0.0..=1.0).contains(&params.corruption_rate) {
        return Err(Error::invalid(
            "corruption_rate",
            format!("must lie in [0, 1], got {}", params.corruption_rate),
        ));
    }
    check_finite_nonneg("separation", params.separation)?;
    check_finite_nonneg("noise", params.noise)?;
    check_positive("feature_clip", params.feature_clip)?;
    check_finite_nonneg("ridge", params.ridge)?;
    check_finite_nonneg("lookahead", params.lookahead)?;
    check_positive("region_radius", params.region_radius)?;

    let mut mean = stream.unit_vector(params.d);
    mean.iter_mut().for_each(|v| *v *= params.separation);
    let generator = Generator {
        mean,
        noise: params.noise,
        clip: params.feature_clip,
    };

    let n = params.n_train;
    let mut labels = Vec::with_capacity(n);
    let mut clean_labels = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * params.d);
    let mut pool = Vec::with_capacity(n);
    for j in 0..n {
        let (label, z) = generator.draw(stream);
        let observed = if stream.bernoulli(params.corruption_rate) {
            -label
        } else {
            label
        };
        let mut payload = Vec::with_capacity(params.d + 2);
        payload.push(j as f64);
        payload.push(observed);
        payload.extend_from_slice(&z);
        pool.push(Sample(payload));
        labels.push(observed);
        clean_labels.push(label);
        features.extend(z);
    }

    let constants = declared_constants(params);
    constants.validate()?;
    Ok((
        ReweightingProblem {
            d: params.d,
            labels,
            clean_labels,
            features,
            ridge: params.ridge,
            lookahead: params.lookahead,
            region_radius: params.region_radius,
            constants,
        },
        ReweightingPopulation { generator, pool },
    ))
}

fn declared_constants(params: &ReweightingParams) -> RegularityConstants {
    let z = params.feature_clip;
    let n = params.n_train as f64;
    let eta = params.lookahead;
    let lam = params.ridge;
    let rho = params.region_radius;
    // Operator-norm bound on the Jacobian of the look-ahead map (x, y) ↦ y'.
    let jac = eta * z / (4.0 * n.sqrt()) + 1.0 + eta * (lam + 0.25 * z * z);
    let lip_f = z * jac;
    let smooth_f = 0.25 * z * z * jac * jac
        + eta
            * (SIGMOID_CURVATURE * z * z / n
                + z.powi(3) / (16.0 * n.sqrt())
                + SIGMOID_CURVATURE * z.powi(3));
    let loss_sup = std::f64::consts::LN_2 + rho * z;
    RegularityConstants {
        lip_f,
        lip_g: 0.25 * loss_sup + z + lam * rho,
        smooth_f,
        smooth_g: SIGMOID_CURVATURE * loss_sup + 0.25 * z + 0.25 * z * z + lam,
        mu_f: 0.0,
        mu_g: 0.0,
        alpha: 1.0,
        tau: smooth_f,
        grad_at_zero_sup: lip_f,
    }
}

/// Logistic loss and the scalar `c` with `∇_y ℓ = c · z`.
#[inline]
fn loss_and_slope(y: &[f64], label: f64, z: &[f64]) -> (f64, f64) {
    let m = -label * dot(y, z);
    (softplus(m), -label * sigmoid(m))
}

impl ReweightingProblem {
    pub fn n_train(&self) -> usize {
        self.labels.len()
    }

    /// Number of pool labels that differ from the clean label.
    pub fn flipped_count(&self) -> usize {
        self.labels
            .iter()
            .zip(&self.clean_labels)
            .filter(|(a, b)| a != b)
            .count()
    }

    fn feature(&self, j: usize) -> &[f64] {
        &self.features[j * self.d..(j + 1) * self.d]
    }

    /// `∇_y G(x, y)` of the weighted pool objective.
    pub fn pool_inner_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = self.n_train() as f64;
        let mut grad: Vec<f64> = y.iter().map(|v| self.ridge * v).collect();
        for j in 0..self.n_train() {
            let z = self.feature(j);
            let (_, c) = loss_and_slope(y, self.labels[j], z);
            let w = sigmoid(x[j]) * c / n;
            grad.iter_mut().zip(z).for_each(|(g, zi)| *g += w * zi);
        }
        grad
    }

    /// Classifier after one look-ahead step on the weighted pool objective.
    pub fn lookahead_point(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let g = self.pool_inner_grad_y(x, y);
        y.iter().zip(&g).map(|(a, b)| a - self.lookahead * b).collect()
    }

    fn split_val<'a>(&self, xi: &'a Sample) -> (f64, &'a [f64]) {
        let v = xi.values();
        (v[0], &v[1..])
    }

    fn split_train<'a>(&self, zeta: &'a Sample) -> (usize, f64, &'a [f64]) {
        let v = zeta.values();
        (v[0] as usize, v[1], &v[2..])
    }
}

impl BilevelProblem for ReweightingProblem {
    fn name(&self) -> &'static str {
        "reweighting"
    }

    fn dims(&self) -> (usize, usize) {
        (self.n_train(), self.d)
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
        let (label, z) = self.split_val(xi);
        loss_and_slope(&self.lookahead_point(x, y), label, z).0
    }

    fn outer_losses(&self, x: &[f64], y: &[f64], samples: &[Sample]) -> Vec<f64> {
        let ahead = self.lookahead_point(x, y);
        samples
            .iter()
            .map(|s| {
                let (label, z) = self.split_val(s);
                loss_and_slope(&ahead, label, z).0
            })
            .collect()
    }

    fn inner_loss(&self, x: &[f64], y: &[f64], zeta: &Sample) -> f64 {
        let (j, label, z) = self.split_train(zeta);
        sigmoid(x[j]) * loss_and_slope(y, label, z).0 + 0.5 * self.ridge * dot(y, y)
    }

    fn outer_grad_x(&self, x: &[f64], y: &[f64], xi: &Sample, out: &mut [f64]) {
        let (label, zv) = self.split_val(xi);
        let ahead = self.lookahead_point(x, y);
        let (_, cv) = loss_and_slope(&ahead, label, zv);
        let scale = -self.lookahead / self.n_train() as f64;
        for (j, o) in out.iter_mut().enumerate() {
            let z = self.feature(j);
            let (_, c) = loss_and_slope(y, self.labels[j], z);
            let s = sigmoid(x[j]);
            *o = scale * s * (1.0 - s) * c * cv * dot(z, zv);
        }
    }

    fn outer_grad_y(&self, x: &[f64], y: &[f64], xi: &Sample, out: &mut [f64]) {
        let (label, zv) = self.split_val(xi);
        let ahead = self.lookahead_point(x, y);
        let (_, cv) = loss_and_slope(&ahead, label, zv);
        // v = ∇ℓ(y'; ξ); out = (I − η H) v with H = ∇²_yy G(x, y).
        let v: Vec<f64> = zv.iter().map(|a| cv * a).collect();
        let n = self.n_train() as f64;
        let mut hv: Vec<f64> = v.iter().map(|a| self.ridge * a).collect();
        for j in 0..self.n_train() {
            let z = self.feature(j);
            let m = -self.labels[j] * dot(y, z);
            let p = sigmoid(m);
            let w = sigmoid(x[j]) * p * (1.0 - p) * dot(z, &v) / n;
            hv.iter_mut().zip(z).for_each(|(h, zi)| *h += w * zi);
        }
        for ((o, a), h) in out.iter_mut().zip(&v).zip(&hv) {
            *o = a - self.lookahead * h;
        }
    }

    fn inner_grad_x(&self, x: &[f64], y: &[f64], zeta: &Sample, out: &mut [f64]) {
        let (j, label, z) = self.split_train(zeta);
        out.iter_mut().for_each(|o| *o = 0.0);
        let s = sigmoid(x[j]);
        out[j] = s * (1.0 - s) * loss_and_slope(y, label, z).0;
    }

    fn inner_grad_y(&self, x: &[f64], y: &[f64], zeta: &Sample, out: &mut [f64]) {
        let (j, label, z) = self.split_train(zeta);
        let (_, c) = loss_and_slope(y, label, z);
        let w = sigmoid(x[j]) * c;
        for ((o, zi), yi) in out.iter_mut().zip(z).zip(y) {
            *o = w * zi + self.ridge * yi;
        }
    }
}

impl Population for ReweightingPopulation {
    /// Clean validation draw.
    fn sample_outer(&self, stream: &mut RandomStream) -> Sample {
        let (label, z) = self.generator.draw(stream);
        let mut payload = Vec::with_capacity(z.len() + 1);
        payload.push(label);
        payload.extend(z);
        Sample(payload)
    }

    /// Uniform draw from the corrupted training pool.
    fn sample_inner(&self, stream: &mut RandomStream) -> Sample {
        self.pool[stream.index(self.pool.len())].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_pool_and_bad_rate() {
        let mut s = RandomStream::new(1);
        assert!(make_data_reweighting(&ReweightingParams::new(0, 3, 0.1), &mut s).is_err());
        assert!(make_data_reweighting(&ReweightingParams::new(5, 3, 1.5), &mut s).is_err());
    }

    #[test]
    fn clean_pool_has_no_flips() {
        let (p, _) =
            make_data_reweighting(&ReweightingParams::new(100, 3, 0.0), &mut RandomStream::new(2)).unwrap();
        assert_eq!(p.flipped_count(), 0);
    }

    #[test]
    fn large_margin_outer_loss_is_small() {
        let mut params = ReweightingParams::new(20, 2, 0.0);
        params.lookahead = 0.0;
        let (p, _) = make_data_reweighting(&params, &mut RandomStream::new(3)).unwrap();
        let x = vec![0.0; 20];
        let y = vec![10.0, 0.0];
        let xi = Sample(vec![1.0, 1.0, 0.0]);
        assert!(p.outer_loss(&x, &y, &xi) < 0.01);
        params.lookahead = 1.0;
        let (p, _) = make_data_reweighting(&params, &mut RandomStream::new(3)).unwrap();
        assert!(p.outer_loss(&x, &y, &xi) < 0.01);
    }

    #[test]
    fn features_are_clipped() {
        let mut params = ReweightingParams::new(500, 4, 0.2);
        params.feature_clip = 2.0;
        let (_, pop) = make_data_reweighting(&params, &mut RandomStream::new(4)).unwrap();
        let mut s = RandomStream::new(5);
        for _ in 0..500 {
            let xi = pop.sample_outer(&mut s);
            assert!(norm(&xi.values()[1..]) <= 2.0 + 1e-12);
        }
    }
}
