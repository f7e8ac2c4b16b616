#![allow(dead_code)]

use std::sync::Arc;

use bilevel_stability::problems::{
    make_data_reweighting, make_logistic_cc, make_quadratic_scsc, make_smooth_ncnc, BilevelProblem, LogisticParams,
    MatrixSpec, Population, ProblemInstance, QuadraticParams, Regime, ReweightingParams, TanhParams,
};
use bilevel_stability::{Dataset, ParameterPair, RandomStream, RegularityConstants, Sample};

pub fn quadratic(params: QuadraticParams, seed: u64) -> ProblemInstance {
    let (p, pop) = make_quadratic_scsc(&params, &mut RandomStream::new(seed)).unwrap();
    ProblemInstance {
        problem: Arc::new(p),
        population: Arc::new(pop),
    }
}

pub fn default_quadratic(seed: u64) -> ProblemInstance {
    let mut params = QuadraticParams::new(3, 2);
    params.p = MatrixSpec::Spectrum { lo: 0.5, hi: 1.5 };
    params.q = MatrixSpec::Spectrum { lo: 0.8, hi: 1.2 };
    params.coupling = MatrixSpec::Scaled { norm: 0.5 };
    params.target_center = 0.5;
    quadratic(params, seed)
}

pub fn logistic(seed: u64) -> ProblemInstance {
    let mut params = LogisticParams::new(3, 2);
    params.feature_center = 0.3;
    let (p, pop) = make_logistic_cc(&params, &mut RandomStream::new(seed)).unwrap();
    ProblemInstance {
        problem: Arc::new(p),
        population: Arc::new(pop),
    }
}

pub fn tanh(seed: u64) -> ProblemInstance {
    let (p, pop) = make_smooth_ncnc(&TanhParams::new(3, 2), &mut RandomStream::new(seed)).unwrap();
    ProblemInstance {
        problem: Arc::new(p),
        population: Arc::new(pop),
    }
}

pub fn reweighting(seed: u64) -> ProblemInstance {
    let (p, pop) = make_data_reweighting(&ReweightingParams::new(12, 4, 0.3), &mut RandomStream::new(seed)).unwrap();
    ProblemInstance {
        problem: Arc::new(p),
        population: Arc::new(pop),
    }
}

/// One instance of every family.
pub fn all_instances(seed: u64) -> Vec<ProblemInstance> {
    vec![default_quadratic(seed), logistic(seed), tanh(seed), reweighting(seed)]
}

/// Point drawn uniformly from the joint ball of the given radius.
pub fn random_pair(problem: &dyn BilevelProblem, radius: f64, s: &mut RandomStream) -> ParameterPair {
    let (d1, d2) = problem.dims();
    let v = s.in_ball(d1 + d2, radius);
    ParameterPair::new(v[..d1].to_vec(), v[d1..].to_vec()).unwrap()
}

/// Delegates everything to the wrapped problem but hides its exact oracles,
/// forcing Monte-Carlo estimation.
pub struct NoOracle(pub Arc<dyn BilevelProblem>);

impl BilevelProblem for NoOracle {
    fn name(&self) -> &'static str {
        self.0.name()
    }
    fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }
    fn regime(&self) -> Regime {
        self.0.regime()
    }
    fn constants(&self) -> &RegularityConstants {
        self.0.constants()
    }
    fn region_radius(&self) -> f64 {
        self.0.region_radius()
    }
    fn outer_loss(&self, x: &[f64], y: &[f64], xi: &Sample) -> f64 {
        self.0.outer_loss(x, y, xi)
    }
    fn inner_loss(&self, x: &[f64], y: &[f64], zeta: &Sample) -> f64 {
        self.0.inner_loss(x, y, zeta)
    }
    fn outer_grad_x(&self, x: &[f64], y: &[f64], xi: &Sample, out: &mut [f64]) {
        self.0.outer_grad_x(x, y, xi, out)
    }
    fn outer_grad_y(&self, x: &[f64], y: &[f64], xi: &Sample, out: &mut [f64]) {
        self.0.outer_grad_y(x, y, xi, out)
    }
    fn inner_grad_x(&self, x: &[f64], y: &[f64], zeta: &Sample, out: &mut [f64]) {
        self.0.inner_grad_x(x, y, zeta, out)
    }
    fn inner_grad_y(&self, x: &[f64], y: &[f64], zeta: &Sample, out: &mut [f64]) {
        self.0.inner_grad_y(x, y, zeta, out)
    }
}

/// The quadratic inner problem with a constant outer loss `f ≡ c`.
pub struct ConstantOuter {
    pub inner: Arc<dyn BilevelProblem>,
    pub value: f64,
}

impl BilevelProblem for ConstantOuter {
    fn name(&self) -> &'static str {
        "constant"
    }
    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }
    fn regime(&self) -> Regime {
        self.inner.regime()
    }
    fn constants(&self) -> &RegularityConstants {
        self.inner.constants()
    }
    fn region_radius(&self) -> f64 {
        self.inner.region_radius()
    }
    fn outer_loss(&self, _x: &[f64], _y: &[f64], _xi: &Sample) -> f64 {
        self.value
    }
    fn inner_loss(&self, x: &[f64], y: &[f64], zeta: &Sample) -> f64 {
        self.inner.inner_loss(x, y, zeta)
    }
    fn outer_grad_x(&self, _x: &[f64], _y: &[f64], _xi: &Sample, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn outer_grad_y(&self, _x: &[f64], _y: &[f64], _xi: &Sample, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn inner_grad_x(&self, x: &[f64], y: &[f64], zeta: &Sample, out: &mut [f64]) {
        self.inner.inner_grad_x(x, y, zeta, out)
    }
    fn inner_grad_y(&self, x: &[f64], y: &[f64], zeta: &Sample, out: &mut [f64]) {
        self.inner.inner_grad_y(x, y, zeta, out)
    }
}

/// Full-batch `∇_y G(x, y)` over a training set.
pub fn full_inner_grad_y(problem: &dyn BilevelProblem, x: &[f64], y: &[f64], d: &Dataset) -> Vec<f64> {
    let mut acc = vec![0.0; y.len()];
    let mut g = vec![0.0; y.len()];
    for s in d.samples() {
        problem.inner_grad_y(x, y, s, &mut g);
        acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    acc.iter_mut().for_each(|a| *a /= d.len() as f64);
    acc
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Draw datasets of sizes `(m1, m2)` from a fresh stream.
pub fn datasets(population: &dyn Population, m1: usize, m2: usize, seed: u64) -> (Dataset, Dataset) {
    let mut s = RandomStream::new(seed);
    (population.draw_outer(m1, &mut s), population.draw_inner(m2, &mut s))
}
