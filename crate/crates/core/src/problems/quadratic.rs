//! Strongly convex quadratic pair.
//!
//! `f(x, y; ξ) = ½(x−a)ᵀP(x−a) + ½(y−b)ᵀQ(y−b)` with `ξ = (a, b)` and
//! `g(x, y; ζ) = ½|y − Mx − c|²` with `ζ = c`. Targets are drawn uniformly from
//! a ball of `target_radius` around a fixed center.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{check_finite_nonneg, check_positive, BilevelProblem, Population, Regime};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::types::{Dataset, ParameterPair, RegularityConstants, Sample};

/// How to build one of the curvature or coupling matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixSpec {
    Identity,
    Zero,
    /// Values on the main diagonal.
    Diagonal { values: Vec<f64> },
    /// Random orthogonal frames around singular values evenly spaced in `[lo, hi]`.
    Spectrum { lo: f64, hi: f64 },
    /// Gaussian matrix rescaled to the given spectral norm.
    Scaled { norm: f64 },
    /// Explicit row-major entries.
    Dense { rows: Vec<Vec<f64>> },
}

fn default_identity() -> MatrixSpec {
    MatrixSpec::Identity
}

fn default_coupling() -> MatrixSpec {
    MatrixSpec::Zero
}

fn default_target_radius() -> f64 {
    1.0
}

fn default_region_radius() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticParams {
    pub d1: usize,
    pub d2: usize,
    #[serde(default = "default_identity")]
    pub p: MatrixSpec,
    #[serde(default = "default_identity")]
    pub q: MatrixSpec,
    #[serde(default = "default_coupling")]
    pub coupling: MatrixSpec,
    /// Norm of the (random-direction) centers of the target distributions.
    #[serde(default)]
    pub target_center: f64,
    #[serde(default = "default_target_radius")]
    pub target_radius: f64,
    #[serde(default = "default_region_radius")]
    pub region_radius: f64,
}

impl QuadraticParams {
    pub fn new(d1: usize, d2: usize) -> Self {
        Self {
            d1,
            d2,
            p: MatrixSpec::Identity,
            q: MatrixSpec::Identity,
            coupling: MatrixSpec::Zero,
            target_center: 0.0,
            target_radius: 1.0,
            region_radius: 10.0,
        }
    }
}

/// Row-major dense matrix used on the hot path.
#[derive(Clone, Debug, PartialEq)]
struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Dense {
    fn from_na(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    p: Dense,
    q: Dense,
    m: Dense,
    outer_center: Vec<f64>,
    inner_center: Vec<f64>,
    target_radius: f64,
    region_radius: f64,
    constants: RegularityConstants,
}

#[derive(Clone, Debug)]
pub struct QuadraticPopulation {
    outer_center: Vec<f64>,
    inner_center: Vec<f64>,
    target_radius: f64,
}

fn random_orthogonal(n: usize, stream: &mut RandomStream) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| stream.normal());
    g.qr().q()
}

fn evenly_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

pub(super) fn build_matrix(
    name: &'static str,
    spec: &MatrixSpec,
    rows: usize,
    cols: usize,
    stream: &mut RandomStream,
) -> Result<DMatrix<f64>> {
    let k = rows.min(cols);
    Ok(match spec {
        MatrixSpec::Identity => DMatrix::identity(rows, cols),
        MatrixSpec::Zero => DMatrix::zeros(rows, cols),
        MatrixSpec::Diagonal { values } => {
            if values.len() != k {
                return Err(Error::DimensionMismatch {
                    what: name,
                    expected: k,
                    got: values.len(),
                });
            }
            let mut m = DMatrix::zeros(rows, cols);
            for (i, v) in values.iter().enumerate() {
                m[(i, i)] = *v;
            }
            m
        }
        MatrixSpec::Spectrum { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && lo <= hi) {
                return Err(Error::invalid(name, format!("bad spectrum [{lo}, {hi}]")));
            }
            let sv = evenly_spaced(*lo, *hi, k);
            let u = random_orthogonal(rows, stream);
            let mut s = DMatrix::zeros(rows, cols);
            for (i, v) in sv.iter().enumerate() {
                s[(i, i)] = *v;
            }
            if rows == cols {
                &u * s * u.transpose()
            } else {
                let v = random_orthogonal(cols, stream);
                &u * s * v.transpose()
            }
        }
        MatrixSpec::Scaled { norm } => {
            check_finite_nonneg(name, *norm)?;
            let g = DMatrix::from_fn(rows, cols, |_, _| stream.normal());
            let top = g.singular_values().max();
            if top > 0.0 {
                g * (*norm / top)
            } else {
                g
            }
        }
        MatrixSpec::Dense { rows: entries } => {
            if entries.len() != rows || entries.iter().any(|r| r.len() != cols) {
                return Err(Error::invalid(name, format!("expected a {rows}x{cols} matrix")));
            }
            DMatrix::from_fn(rows, cols, |i, j| entries[i][j])
        }
    })
}

fn spd_spectrum(name: &'static str, m: &DMatrix<f64>) -> Result<(f64, f64)> {
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-10 * (1.0 + m.abs().max()) {
        return Err(Error::invalid(name, "curvature matrix must be symmetric"));
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let lo = eig.min();
    let hi = eig.max();
    if !(lo > 0.0) {
        return Err(Error::invalid(
            name,
            format!("curvature matrix is not positive definite (min eigenvalue {lo:.3e})"),
        ));
    }
    Ok((lo, hi))
}

/// Builds the strongly convex quadratic instance and its target distribution.
pub fn make_quadratic_scsc(
    params: &QuadraticParams,
    stream: &mut RandomStream,
) -> Result<(QuadraticProblem, QuadraticPopulation)> {
    let (d1, d2) = (params.d1, params.d2);
    if d1 == 0 || d2 == 0 {
        return Err(Error::invalid("d1/d2", "dimensions must be at least 1"));
    }
    check_finite_nonneg("target_center", params.target_center)?;
    check_finite_nonneg("target_radius", params.target_radius)?;
    check_positive("region_radius", params.region_radius)?;

    let p = build_matrix("p", &params.p, d1, d1, stream)?;
    let q = build_matrix("q", &params.q, d2, d2, stream)?;
    let m = build_matrix("coupling", &params.coupling, d2, d1, stream)?;
    let (p_lo, p_hi) = spd_spectrum("p", &p)?;
    let (q_lo, q_hi) = spd_spectrum("q", &q)?;
    let sigma = if m.iter().all(|v| *v == 0.0) {
        0.0
    } else {
        m.singular_values().max()
    };

    let mut outer_center = stream.unit_vector(d1 + d2);
    outer_center.iter_mut().for_each(|v| *v *= params.target_center);
    let mut inner_center = stream.unit_vector(d2);
    inner_center.iter_mut().for_each(|v| *v *= params.target_center);

    let rho = params.region_radius;
    let outer_bound = params.target_center + params.target_radius;
    let inner_bound = params.target_center + params.target_radius;
    let smooth_f = p_hi.max(q_hi);
    let coupling_gain = (1.0 + sigma * sigma).sqrt();
    let constants = RegularityConstants {
        lip_f: smooth_f * (rho + outer_bound),
        lip_g: coupling_gain * (coupling_gain * rho + inner_bound),
        smooth_f,
        smooth_g: 1.0 + sigma * sigma,
        mu_f: p_lo.min(q_lo),
        mu_g: 1.0,
        alpha: 1.0,
        tau: smooth_f,
        grad_at_zero_sup: smooth_f * outer_bound,
    };
    constants.validate()?;

    let problem = QuadraticProblem {
        p: Dense::from_na(&p),
        q: Dense::from_na(&q),
        m: Dense::from_na(&m),
        outer_center: outer_center.clone(),
        inner_center: inner_center.clone(),
        target_radius: params.target_radius,
        region_radius: rho,
        constants,
    };
    let population = QuadraticPopulation {
        outer_center,
        inner_center,
        target_radius: params.target_radius,
    };
    Ok((problem, population))
}

impl QuadraticProblem {
    pub fn p_matrix(&self) -> DMatrix<f64> {
        self.p.to_na()
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        self.q.to_na()
    }

    pub fn coupling_matrix(&self) -> DMatrix<f64> {
        self.m.to_na()
    }

    fn coupled(&self, x: &[f64], c: &[f64]) -> Vec<f64> {
        (0..self.m.rows)
            .map(|i| self.m.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c[i])
            .collect()
    }

    /// `y*_D(x) = Mx + mean(c)` for a finite training set.
    pub fn empirical_inner_solution(&self, x: &[f64], d_train: &Dataset) -> Result<Vec<f64>> {
        let c = mean_payload(d_train, 0, self.m.rows)?;
        Ok(self.coupled(x, &c))
    }

    /// Fixed point of full-batch first-order dynamics on finite datasets:
    /// `x = mean(a)`, `y = Mx + mean(c)`.
    pub fn empirical_stationary_point(
        &self,
        d_val: &Dataset,
        d_train: &Dataset,
    ) -> Result<ParameterPair> {
        let x = mean_payload(d_val, 0, self.p.rows)?;
        let y = self.empirical_inner_solution(&x, d_train)?;
        ParameterPair::new(x, y)
    }

    fn split<'a>(&self, xi: &'a Sample) -> (&'a [f64], &'a [f64]) {
        xi.values().split_at(self.p.rows)
    }
}

fn mean_payload(d: &Dataset, offset: usize, len: usize) -> Result<Vec<f64>> {
    if d.is_empty() {
        return Err(Error::EmptyDataset("quadratic targets"));
    }
    let mut acc = vec![0.0; len];
    for s in d.samples() {
        for (a, v) in acc.iter_mut().zip(&s.values()[offset..offset + len]) {
            *a += v;
        }
    }
    let n = d.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

fn quad_form(a: &Dense, v: &[f64], t: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..a.rows {
        let row = a.row(i);
        let mut s = 0.0;
        for j in 0..a.cols {
            s += row[j] * (v[j] - t[j]);
        }
        total += (v[i] - t[i]) * s;
    }
    0.5 * total
}

fn shifted_matvec(a: &Dense, v: &[f64], t: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = a.row(i).iter().zip(v.iter().zip(t)).map(|(p, (x, c))| p * (x - c)).sum();
    }
}

impl BilevelProblem for QuadraticProblem {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn dims(&self) -> (usize, usize) {
        (self.p.rows, self.q.rows)
    }

    fn regime(&self) -> Regime {
        Regime::StronglyConvex
    }

    fn constants(&self) -> &RegularityConstants {
        &self.constants
    }

    fn region_radius(&self) -> f64 {
        self.region_radius
    }

    fn outer_loss(&self, x: &[f64], y: &[f64], xi: &Sample) -> f64 {
        let (a, b) = self.split(xi);
        quad_form(&self.p, x, a) + quad_form(&self.q, y, b)
    }

    fn inner_loss(&self, x: &[f64], y: &[f64], zeta: &Sample) -> f64 {
        let c = zeta.values();
        let mut s = 0.0;
        for i in 0..self.m.rows {
            let r = y[i] - self.m.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - c[i];
            s += r * r;
        }
        0.5 * s
    }

    fn outer_grad_x(&self, x: &[f64], _y: &[f64], xi: &Sample, out: &mut [f64]) {
        let (a, _) = self.split(xi);
        shifted_matvec(&self.p, x, a, out);
    }

    fn outer_grad_y(&self, _x: &[f64], y: &[f64], xi: &Sample, out: &mut [f64]) {
        let (_, b) = self.split(xi);
        shifted_matvec(&self.q, y, b, out);
    }

    fn inner_grad_x(&self, x: &[f64], y: &[f64], zeta: &Sample, out: &mut [f64]) {
        let mut r = vec![0.0; self.m.rows];
        self.inner_grad_y(x, y, zeta, &mut r);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, ri) in r.iter().enumerate() {
            for (o, mij) in out.iter_mut().zip(self.m.row(i)) {
                *o -= mij * ri;
            }
        }
    }

    fn inner_grad_y(&self, x: &[f64], y: &[f64], zeta: &Sample, out: &mut [f64]) {
        let c = zeta.values();
        for (i, o) in out.iter_mut().enumerate() {
            *o = y[i] - self.m.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - c[i];
        }
    }

    fn inner_solution(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.coupled(x, &self.inner_center))
    }

    fn stationary_point(&self) -> Option<ParameterPair> {
        let x = self.outer_center[..self.p.rows].to_vec();
        let y = self.coupled(&x, &self.inner_center);
        Some(ParameterPair { x, y })
    }

    fn population_risk(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        let (a, b) = self.outer_center.split_at(self.p.rows);
        // Uniform ball of radius r in n dims has covariance r² / (n + 2) · I.
        let n = (self.p.rows + self.q.rows) as f64;
        let spread = self.target_radius * self.target_radius / (n + 2.0);
        let trace: f64 = (0..self.p.rows).map(|i| self.p.row(i)[i]).sum::<f64>()
            + (0..self.q.rows).map(|i| self.q.row(i)[i]).sum::<f64>();
        Some(quad_form(&self.p, x, a) + quad_form(&self.q, y, b) + 0.5 * spread * trace)
    }
}

impl Population for QuadraticPopulation {
    fn sample_outer(&self, stream: &mut RandomStream) -> Sample {
        let mut v = stream.in_ball(self.outer_center.len(), self.target_radius);
        v.iter_mut().zip(&self.outer_center).for_each(|(a, c)| *a += c);
        Sample(v)
    }

    fn sample_inner(&self, stream: &mut RandomStream) -> Sample {
        let mut v = stream.in_ball(self.inner_center.len(), self.target_radius);
        v.iter_mut().zip(&self.inner_center).for_each(|(a, c)| *a += c);
        Sample(v)
    }
}
