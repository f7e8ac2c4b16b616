//! Stability-to-generalization bounds and the per-algorithm stability
//! bounds, evaluated exactly as displayed.
//!
//! The finite sums are accumulated in log space: each term is
//! `log w_k + ½ log S_k` (l1) or `log w_k + log S_k` (l2) with
//! `S_k = 2 ℓ_f R_k + T² L_g²`, and the terms are combined by log-sum-exp.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::Regime;
use crate::solvers::scsc_stepsize_window;
use crate::types::RegularityConstants;

/// `ln e`, written out where the displayed bounds carry a factor `e`.
const LN_E: f64 = 1.0;

fn one() -> f64 {
    1.0
}

/// Constants the theorems leave free. All default to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeConstants {
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c2: f64,
    #[serde(default = "one")]
    pub c3: f64,
    #[serde(default = "one")]
    pub c4: f64,
    #[serde(default = "one")]
    pub c5: f64,
    #[serde(default = "one")]
    pub c6: f64,
}

impl Default for FreeConstants {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            c4: 1.0,
            c5: 1.0,
            c6: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityNorm {
    L1,
    L2,
}

impl StabilityNorm {
    pub fn as_str(&self) -> &'static str {
        match self {
            StabilityNorm::L1 => "l1",
            StabilityNorm::L2 => "l2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub constants: RegularityConstants,
    /// Stand-in for `E[R_{D_m1}(x_k, y_k)]`, `k = 1..K`.
    pub risk_path: Vec<f64>,
    pub free: FreeConstants,
    /// Overrides the window constant `C` of the SSGD strongly convex bound.
    pub c: Option<f64>,
    /// Overrides `C_1` of the TSGD strongly convex bound.
    pub c_1: Option<f64>,
    /// Trade-off parameter of the l2 generalization bound; `None` uses the
    /// minimizing value.
    pub gamma: Option<f64>,
    pub k: usize,
    pub t: usize,
    pub m1: usize,
}

impl BoundInputs {
    pub fn new(constants: RegularityConstants, risk_path: Vec<f64>, t: usize, m1: usize) -> Self {
        Self {
            k: risk_path.len(),
            constants,
            risk_path,
            free: FreeConstants::default(),
            c: None,
            c_1: None,
            gamma: None,
            t,
            m1,
        }
    }

    fn check(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::invalid("k", "need at least one outer iteration"));
        }
        if self.risk_path.len() != self.k {
            return Err(Error::DimensionMismatch {
                what: "risk_path",
                expected: self.k,
                got: self.risk_path.len(),
            });
        }
        if let Some(r) = self.risk_path.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::invalid("risk_path", format!("entries must be finite and nonnegative, got {r}")));
        }
        if self.m1 < 1 {
            return Err(Error::invalid("m1", "must be at least 1"));
        }
        if self.t < 1 {
            return Err(Error::invalid("t", "must be at least 1"));
        }
        let c = &self.constants;
        for (name, v) in [("smooth_f", c.smooth_f), ("smooth_g", c.smooth_g), ("lip_g", c.lip_g)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    fn ell(&self) -> Result<f64> {
        let ell = self.constants.smooth_max();
        if ell > 0.0 {
            Ok(ell)
        } else {
            Err(Error::invalid("ell", "max(smooth_f, smooth_g) must be positive"))
        }
    }

    /// `ln S_k` for `k = 1..K` with `S_k = 2 ℓ_f R_k + T² L_g²`.
    fn log_summands(&self) -> Vec<f64> {
        let c = &self.constants;
        let t = self.t as f64;
        self.risk_path
            .iter()
            .map(|r| (2.0 * c.smooth_f * r + t * t * c.lip_g * c.lip_g).ln())
            .collect()
    }
}

fn nonneg(name: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::invalid(name, format!("must be finite and nonnegative, got {v}")))
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn finish(log_value: f64) -> Result<f64> {
    if log_value == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let v = log_value.exp();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Overflow { log_value })
    }
}

/// `exp(log_prefactor) · Σ_k w_k S_k^{p}` with `log_w(k)` for 1-based `k`.
fn weighted_sum(
    inputs: &BoundInputs,
    which: StabilityNorm,
    log_prefactor: f64,
    log_w: impl Fn(usize) -> f64,
) -> Result<f64> {
    let power = match which {
        StabilityNorm::L1 => 0.5,
        StabilityNorm::L2 => 1.0,
    };
    let logs = inputs.log_summands();
    let lse = log_sum_exp(logs.iter().enumerate().map(|(i, s)| log_w(i + 1) + power * s));
    finish(log_prefactor + lse)
}

/// Generalization bound from l1 stability: `L_f β`.
pub fn bound_theorem1_l1(lip_f: f64, beta: f64) -> Result<f64> {
    Ok(nonneg("lip_f", lip_f)? * nonneg("beta", beta)?)
}

/// Generalization bound from l2 stability. With `gamma` it is
/// `(ℓ_f/γ) R + (ℓ_f + γ) β²/2`; without, `√(2 ℓ_f R) β + ℓ_f β²/2`.
pub fn bound_theorem1_l2(smooth_f: f64, beta_sq: f64, emp_risk: f64, gamma: Option<f64>) -> Result<f64> {
    let l = nonneg("smooth_f", smooth_f)?;
    let b2 = nonneg("beta_sq", beta_sq)?;
    let r = nonneg("emp_risk", emp_risk)?;
    match gamma {
        Some(g) => {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::invalid("gamma", format!("must be positive, got {g}")));
            }
            Ok(l / g * r + (l + g) * b2 / 2.0)
        }
        None => Ok((2.0 * l * r).sqrt() * b2.sqrt() + l * b2 / 2.0),
    }
}

/// `c_{α,τ}` of the self-bounding property.
pub fn self_bounding_constant(alpha: f64, tau: f64, grad_at_zero_sup: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", format!("must lie in [0, 1], got {alpha}")));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::invalid("tau", format!("must be positive, got {tau}")));
    }
    if alpha > 0.0 {
        Ok((1.0 + 1.0 / alpha).powf(alpha / (1.0 + alpha)) * tau.powf(1.0 / (1.0 + alpha)))
    } else {
        Ok(nonneg("grad_at_zero_sup", grad_at_zero_sup)? + tau)
    }
}

/// Hölder generalization bound `c²/(2γ) E[R^{2α/(1+α)}] + γ β²/2`.
pub fn bound_theorem1_holder(
    alpha: f64,
    tau: f64,
    grad_at_zero_sup: f64,
    gamma: f64,
    pop_risk_power_term: f64,
    beta_sq: f64,
) -> Result<f64> {
    let c = self_bounding_constant(alpha, tau, grad_at_zero_sup)?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::invalid("gamma", format!("must be positive, got {gamma}")));
    }
    let term = nonneg("pop_risk_power_term", pop_risk_power_term)?;
    let b2 = nonneg("beta_sq", beta_sq)?;
    Ok(c * c / (2.0 * gamma) * term + gamma * b2 / 2.0)
}

/// Stability bound for SSGD (strongly convex or convex pair). SSGD has no
/// inner loop, so `inputs.t` is ignored and the summands use `L_g²`.
pub fn beta_theorem2(regime: Regime, which: StabilityNorm, inputs: &BoundInputs) -> Result<f64> {
    let inputs = &BoundInputs { t: 1, ..inputs.clone() };
    inputs.check()?;
    let c = &inputs.constants;
    let (m1, k) = (inputs.m1 as f64, inputs.k as f64);
    match regime {
        Regime::StronglyConvex => {
            let big_c = match inputs.c {
                Some(v) => nonneg("C", v)?,
                None => scsc_stepsize_window(c.mu_f, c.mu_g, c.smooth_f, c.smooth_g)?.hi,
            };
            let log_pref = match which {
                StabilityNorm::L1 => (2.0 * big_c / m1).ln(),
                StabilityNorm::L2 => (4.0 * (m1 + k) * big_c * big_c / (m1 * m1)).ln() + LN_E,
            };
            weighted_sum(inputs, which, log_pref, |_| 0.0)
        }
        Regime::Convex => {
            let ell = inputs.ell()?;
            let c1 = nonneg("c1", inputs.free.c1)?;
            let log_pref = match which {
                StabilityNorm::L1 => {
                    (2f64.sqrt() * c1 * k.ln() / (m1 * ell)).ln() + (c1 - 1.0) * k.ln()
                }
                StabilityNorm::L2 => {
                    (2.0 * c1 * c1 * (m1 + k) * k.ln() * k.ln() / (m1 * m1 * ell * ell)).ln()
                        + LN_E
                        + (2.0 * c1 - 2.0) * k.ln()
                }
            };
            weighted_sum(inputs, which, log_pref, |_| 0.0)
        }
        Regime::Nonconvex => Err(Error::invalid("regime", "the SSGD bound covers sc-sc and c-c only")),
    }
}

/// `C_1` of the TSGD strongly convex bound, or an infeasibility error.
pub fn tsgd_window_constant(constants: &RegularityConstants, free: &FreeConstants, k: usize, t: usize) -> Result<f64> {
    let ell = constants.smooth_max();
    let (tf, kf) = (t as f64, k as f64);
    let (mu_f, mu_g) = (constants.mu_f, constants.mu_g);
    let discriminant = 4.0 * (tf * ell - mu_f - tf * mu_g).powi(2)
        - 2.0 * (1.0 + tf * tf) * ell * ell * (1.0 - free.c1 * tf.ln() / kf);
    if discriminant < 0.0 {
        return Err(Error::InfeasibleWindow { discriminant });
    }
    let c_1 = (2.0 * (tf * mu_g + mu_f - tf * ell) + discriminant.sqrt()) / (2.0 * (1.0 + tf * tf) * ell * ell);
    if c_1 > 0.0 && c_1.is_finite() {
        Ok(c_1)
    } else {
        Err(Error::invalid("C_1", format!("TSGD step window upper end {c_1} is not positive")))
    }
}

/// Stability bound for TSGD in each regime.
pub fn beta_theorem3(regime: Regime, which: StabilityNorm, inputs: &BoundInputs) -> Result<f64> {
    inputs.check()?;
    let (m1, k, t) = (inputs.m1 as f64, inputs.k as f64, inputs.t as f64);
    let f = &inputs.free;
    let ln2 = std::f64::consts::LN_2;
    let kk = inputs.k;
    match regime {
        Regime::StronglyConvex => {
            let c_1 = match inputs.c_1 {
                Some(v) => nonneg("C_1", v)?,
                None => tsgd_window_constant(&inputs.constants, f, inputs.k, inputs.t)?,
            };
            let log_pref = match which {
                StabilityNorm::L1 => (2.0 * c_1 / m1).ln() + 0.5 * f.c1 * t.ln(),
                StabilityNorm::L2 => {
                    (4.0 * (m1 + k) * c_1 * c_1 / (m1 * m1)).ln() + LN_E + f.c1 * t.ln()
                }
            };
            weighted_sum(inputs, which, log_pref, |_| 0.0)
        }
        Regime::Convex => {
            let ell = inputs.ell()?;
            let c2 = nonneg("c2", f.c2)?;
            match which {
                StabilityNorm::L1 => {
                    let log_pref = (2.0 * c2 * t.ln() / (m1 * (1.0 + t * t).sqrt() * k * ell)).ln()
                        + c2 * t.ln();
                    weighted_sum(inputs, which, log_pref, |j| 0.5 * (kk - j) as f64 * ln2)
                }
                StabilityNorm::L2 => {
                    let log_pref = (4.0 * c2 * c2 * (k + m1) * t.ln() * t.ln()
                        / (m1 * m1 * (1.0 + t * t) * k * k * ell * ell))
                        .ln()
                        + 2.0 * c2 * t.ln()
                        + LN_E;
                    weighted_sum(inputs, which, log_pref, |j| (kk - j) as f64 * ln2)
                }
            }
        }
        Regime::Nonconvex => {
            let ell = inputs.ell()?;
            let c4 = nonneg("c4", f.c4)?;
            let exponent = c4 * nonneg("c5", f.c5)? * t.powf(f.c6) * (1.0 + t * t).sqrt();
            match which {
                StabilityNorm::L1 => {
                    let log_pref = (2.0 * c4 / (m1 * ell)).ln();
                    weighted_sum(inputs, which, log_pref, |j| {
                        0.5 * (kk - j) as f64 * ln2 + exponent * (k / j as f64).ln()
                    })
                }
                StabilityNorm::L2 => {
                    let log_pref = (4.0 * (m1 + k) * c4 * c4 / (m1 * m1 * ell * ell)).ln() + LN_E;
                    weighted_sum(inputs, which, log_pref, |j| {
                        (kk - j) as f64 * ln2 + 2.0 * exponent * (k / j as f64).ln()
                    })
                }
            }
        }
    }
}

/// Serializable trace of one bound evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub theorem: String,
    pub regime: Regime,
    pub which: StabilityNorm,
    pub constants: RegularityConstants,
    pub free: FreeConstants,
    pub c: Option<f64>,
    pub c_1: Option<f64>,
    pub gamma: Option<f64>,
    pub inputs_hash: String,
    pub value: f64,
}

impl BoundRecord {
    pub fn new(theorem: &str, regime: Regime, which: StabilityNorm, inputs: &BoundInputs, value: f64) -> Self {
        Self {
            theorem: theorem.to_string(),
            regime,
            which,
            constants: inputs.constants.clone(),
            free: inputs.free,
            c: inputs.c,
            c_1: inputs.c_1,
            gamma: inputs.gamma,
            inputs_hash: inputs_hash(inputs),
            value,
        }
    }
}

/// 64-bit FNV-1a over the bit patterns of every numeric input, hex encoded.
pub fn inputs_hash(inputs: &BoundInputs) -> String {
    let c = &inputs.constants;
    let f = &inputs.free;
    let opt = |v: Option<f64>| v.map_or(u64::MAX, f64::to_bits);
    let mut words: Vec<u64> = vec![
        c.lip_f.to_bits(),
        c.lip_g.to_bits(),
        c.smooth_f.to_bits(),
        c.smooth_g.to_bits(),
        c.mu_f.to_bits(),
        c.mu_g.to_bits(),
        c.alpha.to_bits(),
        c.tau.to_bits(),
        c.grad_at_zero_sup.to_bits(),
        f.c1.to_bits(),
        f.c2.to_bits(),
        f.c3.to_bits(),
        f.c4.to_bits(),
        f.c5.to_bits(),
        f.c6.to_bits(),
        opt(inputs.c),
        opt(inputs.c_1),
        opt(inputs.gamma),
        inputs.k as u64,
        inputs.t as u64,
        inputs.m1 as u64,
    ];
    words.extend(inputs.risk_path.iter().map(|r| r.to_bits()));
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_constants() -> RegularityConstants {
        RegularityConstants {
            lip_f: 1.0,
            lip_g: 1.0,
            smooth_f: 1.0,
            smooth_g: 1.0,
            mu_f: 1.0,
            mu_g: 1.0,
            alpha: 1.0,
            tau: 1.0,
            grad_at_zero_sup: 0.0,
        }
    }

    #[test]
    fn ssgd_scsc_hand_case() {
        let inputs = BoundInputs::new(unit_constants(), vec![0.0], 1, 10);
        let c = (4.0 + 12f64.sqrt()) / 4.0;
        let b = beta_theorem2(Regime::StronglyConvex, StabilityNorm::L1, &inputs).unwrap();
        assert!((b - 2.0 * c / 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_summands_give_zero() {
        let mut c = unit_constants();
        c.lip_g = 0.0;
        let inputs = BoundInputs::new(c, vec![0.0; 5], 3, 10);
        for which in [StabilityNorm::L1, StabilityNorm::L2] {
            assert_eq!(beta_theorem2(Regime::StronglyConvex, which, &inputs).unwrap(), 0.0);
            assert_eq!(beta_theorem3(Regime::Nonconvex, which, &inputs).unwrap(), 0.0);
        }
    }

    #[test]
    fn overflow_is_reported() {
        let inputs = BoundInputs::new(unit_constants(), vec![1.0; 3000], 4, 10);
        assert!(matches!(
            beta_theorem3(Regime::Convex, StabilityNorm::L2, &inputs),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn risk_path_length_checked() {
        let mut inputs = BoundInputs::new(unit_constants(), vec![0.0; 3], 1, 10);
        inputs.k = 4;
        assert!(beta_theorem2(Regime::StronglyConvex, StabilityNorm::L1, &inputs).is_err());
    }
}
