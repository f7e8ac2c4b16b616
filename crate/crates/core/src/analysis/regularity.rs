//! Empirical checks of declared regularity constants and analytic gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{BilevelProblem, Population};
use crate::rng::RandomStream;
use crate::types::{RegularityConstants, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub pairs: usize,
    pub region: f64,
    /// Largest sampled `|f(p) − f(q)| / |p − q|`.
    pub lip_f: f64,
    pub lip_g: f64,
    /// Largest sampled `|∇f(p) − ∇f(q)| / |p − q|`.
    pub smooth_f: f64,
    pub smooth_g: f64,
    /// Sampled pairs violating the strong-convexity inequality of `f` in
    /// `(x, y)` at the declared `mu_f`.
    pub convexity_violations_f: usize,
    /// Same for `g(x, ·)` in `y` at fixed `x` and declared `mu_g`.
    pub convexity_violations_g: usize,
    pub declared: RegularityConstants,
}

impl RegularityReport {
    /// Every empirical quotient is at most its declared constant.
    pub fn within_declared(&self) -> bool {
        let d = &self.declared;
        self.lip_f <= d.lip_f && self.lip_g <= d.lip_g && self.smooth_f <= d.smooth_f && self.smooth_g <= d.smooth_g
    }
}

fn joint_grad_f(p: &dyn BilevelProblem, x: &[f64], y: &[f64], s: &Sample) -> Vec<f64> {
    let mut gx = vec![0.0; x.len()];
    let mut gy = vec![0.0; y.len()];
    p.outer_grad_x(x, y, s, &mut gx);
    p.outer_grad_y(x, y, s, &mut gy);
    gx.extend(gy);
    gx
}

fn joint_grad_g(p: &dyn BilevelProblem, x: &[f64], y: &[f64], s: &Sample) -> Vec<f64> {
    let mut gx = vec![0.0; x.len()];
    let mut gy = vec![0.0; y.len()];
    p.inner_grad_x(x, y, s, &mut gx);
    p.inner_grad_y(x, y, s, &mut gy);
    gx.extend(gy);
    gx
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// `h(q) ≥ h(p) + ⟨∇h(p), q − p⟩ + μ/2 |q − p|²` up to rounding slack.
fn violates(hp: f64, hq: f64, grad_p: &[f64], p: &[f64], q: &[f64], mu: f64) -> bool {
    let lin: f64 = grad_p.iter().zip(q.iter().zip(p)).map(|(g, (a, b))| g * (a - b)).sum();
    let d2: f64 = q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    let rhs = hp + lin + 0.5 * mu * d2;
    hq < rhs - 1e-9 * (1.0 + hp.abs() + hq.abs() + lin.abs())
}

#[derive(Default)]
struct PairStats {
    lip_f: f64,
    lip_g: f64,
    smooth_f: f64,
    smooth_g: f64,
    viol_f: usize,
    viol_g: usize,
}

impl PairStats {
    fn merge(self, o: PairStats) -> PairStats {
        PairStats {
            lip_f: self.lip_f.max(o.lip_f),
            lip_g: self.lip_g.max(o.lip_g),
            smooth_f: self.smooth_f.max(o.smooth_f),
            smooth_g: self.smooth_g.max(o.smooth_g),
            viol_f: self.viol_f + o.viol_f,
            viol_g: self.viol_g + o.viol_g,
        }
    }
}

/// Difference quotients and convexity violations over `n_pairs` pairs drawn
/// uniformly from the joint ball of radius `region`. Pair `i` uses the stream
/// `stream.fork_indexed("pair", i)`, so the result does not depend on the
/// number of worker threads.
pub fn verify_regularity(
    problem: &dyn BilevelProblem,
    population: &dyn Population,
    n_pairs: usize,
    region: f64,
    stream: &RandomStream,
) -> Result<RegularityReport> {
    if n_pairs < 1 {
        return Err(Error::invalid("n_pairs", "need at least one pair"));
    }
    if !(region.is_finite() && region > 0.0) {
        return Err(Error::invalid("region", format!("must be positive, got {region}")));
    }
    let (d1, d2) = problem.dims();
    let declared = problem.constants().clone();
    let stats = (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let mut s = stream.fork_indexed("pair", i as u64);
            let p = s.in_ball(d1 + d2, region);
            let q = s.in_ball(d1 + d2, region);
            let xi = population.sample_outer(&mut s);
            let zeta = population.sample_inner(&mut s);
            let (px, py) = p.split_at(d1);
            let (qx, qy) = q.split_at(d1);
            let r = dist(&p, &q);
            let mut st = PairStats::default();
            if r == 0.0 {
                return st;
            }
            let (fp, fq) = (problem.outer_loss(px, py, &xi), problem.outer_loss(qx, qy, &xi));
            let (gp, gq) = (problem.inner_loss(px, py, &zeta), problem.inner_loss(qx, qy, &zeta));
            let gfp = joint_grad_f(problem, px, py, &xi);
            let gfq = joint_grad_f(problem, qx, qy, &xi);
            let ggp = joint_grad_g(problem, px, py, &zeta);
            let ggq = joint_grad_g(problem, qx, qy, &zeta);
            st.lip_f = (fp - fq).abs() / r;
            st.lip_g = (gp - gq).abs() / r;
            st.smooth_f = dist(&gfp, &gfq) / r;
            st.smooth_g = dist(&ggp, &ggq) / r;
            st.viol_f = usize::from(violates(fp, fq, &gfp, &p, &q, declared.mu_f));
            // Inner strong convexity is in y at fixed x.
            let gq_inner = problem.inner_loss(px, qy, &zeta);
            st.viol_g = usize::from(violates(gp, gq_inner, &ggp[d1..], py, qy, declared.mu_g));
            st
        })
        .reduce(PairStats::default, PairStats::merge);
    Ok(RegularityReport {
        pairs: n_pairs,
        region,
        lip_f: stats.lip_f,
        lip_g: stats.lip_g,
        smooth_f: stats.smooth_f,
        smooth_g: stats.smooth_g,
        convexity_violations_f: stats.viol_f,
        convexity_violations_g: stats.viol_g,
        declared,
    })
}

/// Worst relative error of each analytic partial gradient against central
/// differences at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub outer_x: f64,
    pub outer_y: f64,
    pub inner_x: f64,
    pub inner_y: f64,
}

impl GradientCheck {
    pub fn max(&self) -> f64 {
        self.outer_x.max(self.outer_y).max(self.inner_x).max(self.inner_y)
    }
}

/// `|a − n| / max(|a|, |n|, floor)` in the Euclidean norm.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    dist(analytic, numeric) / na.max(nn).max(floor)
}

/// Central differences of `h` at `v` with step `step · max(1, |v_i|)`.
pub fn central_difference(v: &[f64], step: f64, h: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut w = v.to_vec();
    (0..v.len())
        .map(|i| {
            let e = step * v[i].abs().max(1.0);
            w[i] = v[i] + e;
            let up = h(&w);
            w[i] = v[i] - e;
            let down = h(&w);
            w[i] = v[i];
            (up - down) / (2.0 * e)
        })
        .collect()
}

/// Compares all four analytic partial gradients with central differences.
pub fn gradient_check(
    problem: &dyn BilevelProblem,
    x: &[f64],
    y: &[f64],
    xi: &Sample,
    zeta: &Sample,
    step: f64,
    floor: f64,
) -> GradientCheck {
    let (d1, d2) = (x.len(), y.len());
    let mut ax = vec![0.0; d1];
    let mut ay = vec![0.0; d2];

    problem.outer_grad_x(x, y, xi, &mut ax);
    let nx = central_difference(x, step, |v| problem.outer_loss(v, y, xi));
    problem.outer_grad_y(x, y, xi, &mut ay);
    let ny = central_difference(y, step, |v| problem.outer_loss(x, v, xi));
    let outer_x = relative_error(&ax, &nx, floor);
    let outer_y = relative_error(&ay, &ny, floor);

    problem.inner_grad_x(x, y, zeta, &mut ax);
    let nx = central_difference(x, step, |v| problem.inner_loss(v, y, zeta));
    problem.inner_grad_y(x, y, zeta, &mut ay);
    let ny = central_difference(y, step, |v| problem.inner_loss(x, v, zeta));
    GradientCheck {
        outer_x,
        outer_y,
        inner_x: relative_error(&ax, &nx, floor),
        inner_y: relative_error(&ay, &ny, floor),
    }
}
