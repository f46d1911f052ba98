//! Independent checks: exact propagator norms, envelope dominance, large-time
//! algebraic order, and closed-form Duhamel solutions of triangular systems.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm_scaled, CMatrix, C64, ZERO};
use crate::lyapunov::{DecayEnvelope, Defect1Envelope};

/// Relative slack under which a propagator still counts as dominated.
pub const DOMINANCE_SLACK: f64 = 1e-9;

/// A time-dependent upper bound for `|e^{-Ct}|_2^2`, evaluated in the log domain.
pub trait Envelope: Sync {
    fn log_bound(&self, t: f64) -> f64;
}

impl Envelope for DecayEnvelope {
    fn log_bound(&self, t: f64) -> f64 {
        self.log_eval(t)
    }
}

impl Envelope for Defect1Envelope {
    fn log_bound(&self, t: f64) -> f64 {
        2f64.ln() + (1.0 + self.weight_ratio * t * t).ln() - 2.0 * self.mu * t
    }
}

/// Envelope given by a closure returning `ln bound(t)`.
pub struct LogFnEnvelope<F: Fn(f64) -> f64 + Sync>(pub F);

impl<F: Fn(f64) -> f64 + Sync> Envelope for LogFnEnvelope<F> {
    fn log_bound(&self, t: f64) -> f64 {
        (self.0)(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub times: Vec<f64>,
    pub propagator_sq: Vec<f64>,
    pub bound: Vec<f64>,
    pub ratio: Vec<f64>,
    pub max_ratio: f64,
    pub dominated: bool,
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument("times must be finite and nonnegative".into()));
    }
    Ok(())
}

/// `ln |e^{-Ct}|_2^2`, finite even when the norm underflows.
pub fn log_propagator_sq(c: &CMatrix, t: f64) -> Result<f64> {
    let e = expm_scaled(c, -t)?;
    Ok(2.0 * e.log_spectral_norm()?)
}

/// `|e^{-Ct}|_2^2` at each time.
pub fn propagator_curve(c: &CMatrix, times: &[f64]) -> Result<Vec<f64>> {
    check_times(times)?;
    times.par_iter().map(|&t| log_propagator_sq(c, t).map(f64::exp)).collect()
}

/// `0` followed by `n - 1` log-spaced points from `t_max * 1e-4` to `t_max`.
pub fn log_spaced_times(t_max: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut out = vec![0.0];
    if n == 1 || t_max <= 0.0 {
        return out;
    }
    let lo = (t_max * 1e-4).ln();
    let hi = t_max.ln();
    for i in 0..n - 1 {
        let s = if n == 2 { 1.0 } else { i as f64 / (n - 2) as f64 };
        out.push((lo + s * (hi - lo)).exp());
    }
    *out.last_mut().unwrap() = t_max;
    out
}

/// `n` equally spaced points on `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Compares `|e^{-Ct}|_2^2` with an envelope; ratios are formed in the log domain.
pub fn check_dominance<E: Envelope>(c: &CMatrix, env: &E, times: &[f64]) -> Result<EnvelopeReport> {
    check_times(times)?;
    let logs: Vec<(f64, f64)> =
        times.par_iter().map(|&t| Ok((log_propagator_sq(c, t)?, env.log_bound(t)))).collect::<Result<_>>()?;
    Ok(report_from_logs(times, &logs))
}

/// Builds a report from `(ln propagator_sq, ln bound)` pairs.
pub fn report_from_logs(times: &[f64], logs: &[(f64, f64)]) -> EnvelopeReport {
    let ratio: Vec<f64> = logs.iter().map(|(p, b)| (p - b).exp()).collect();
    let max_ratio = ratio.iter().copied().fold(0.0, f64::max);
    EnvelopeReport {
        times: times.to_vec(),
        propagator_sq: logs.iter().map(|l| l.0.exp()).collect(),
        bound: logs.iter().map(|l| l.1.exp()).collect(),
        ratio,
        max_ratio,
        dominated: max_ratio <= 1.0 + DOMINANCE_SLACK && logs.iter().all(|l| !l.0.is_nan()),
    }
}

/// Least-squares slope of `ln(|e^{-Ct}|_2 e^{mu t})` against `ln t` on `[20, 60]`.
pub fn sharpness_order(c: &CMatrix, mu: f64) -> Result<f64> {
    sharpness_order_window(c, mu, 20.0, 60.0, 41)
}

pub fn sharpness_order_window(c: &CMatrix, mu: f64, t0: f64, t1: f64, n: usize) -> Result<f64> {
    if !(t0 > 0.0 && t1 > t0) || n < 2 {
        return Err(Error::InvalidArgument("slope window needs 0 < t0 < t1 and two points".into()));
    }
    let ts = linspace(t0, t1, n);
    let ys: Vec<f64> = ts.par_iter().map(|&t| Ok(0.5 * log_propagator_sq(c, t)? + mu * t)).collect::<Result<_>>()?;
    let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// `p(t) e^{-rate t}` with `p` given by ascending coefficients.
#[derive(Clone, Debug, PartialEq)]
struct ExpPoly {
    rate: C64,
    poly: Vec<C64>,
}

fn same_rate(a: C64, b: C64) -> bool {
    (a - b).norm() <= 1e-12 * (1.0 + a.norm().max(b.norm()))
}

fn add_term(terms: &mut Vec<ExpPoly>, term: ExpPoly) {
    if term.poly.iter().all(|c| *c == ZERO) {
        return;
    }
    if let Some(existing) = terms.iter_mut().find(|e| same_rate(e.rate, term.rate)) {
        if existing.poly.len() < term.poly.len() {
            existing.poly.resize(term.poly.len(), ZERO);
        }
        for (a, b) in existing.poly.iter_mut().zip(&term.poly) {
            *a += b;
        }
    } else {
        terms.push(term);
    }
}

fn poly_eval(p: &[C64], t: f64) -> C64 {
    p.iter().rev().fold(ZERO, |acc, c| acc * t + c)
}

fn poly_derivative(p: &[C64]) -> Vec<C64> {
    p.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect()
}

/// Terms of `int_0^t e^{-a(t-s)} p(s) e^{-lambda s} ds`.
fn duhamel_integral(a: C64, term: &ExpPoly) -> Vec<ExpPoly> {
    let lambda = term.rate;
    let c = a - lambda;
    if same_rate(a, lambda) {
        // e^{-a t} P(t) with P' = p, P(0) = 0
        let mut anti = vec![ZERO; term.poly.len() + 1];
        for (i, coef) in term.poly.iter().enumerate() {
            anti[i + 1] = coef / (i + 1) as f64;
        }
        return vec![ExpPoly { rate: a, poly: anti }];
    }
    // Q = sum_j (-1)^j p^{(j)} / c^{j+1}; result e^{-lambda t} Q(t) - e^{-a t} Q(0)
    let mut q = vec![ZERO; term.poly.len()];
    let mut deriv = term.poly.clone();
    let mut sign = 1.0;
    let mut cpow = c;
    while !deriv.is_empty() {
        for (qi, di) in q.iter_mut().zip(&deriv) {
            *qi += di * sign / cpow;
        }
        deriv = poly_derivative(&deriv);
        sign = -sign;
        cpow *= c;
    }
    let q0 = q[0];
    vec![ExpPoly { rate: lambda, poly: q }, ExpPoly { rate: a, poly: vec![-q0] }]
}

/// Solves `y' = -A y` for lower-triangular `A` by iterated Duhamel integrals in
/// closed form (each component a sum of polynomial-times-exponential terms).
pub fn duhamel_solve(a: &CMatrix, y0: &[C64], t: f64) -> Result<Vec<C64>> {
    let d = a.dim();
    if y0.len() != d {
        return Err(Error::DimensionMismatch(format!("state of length {} for dimension {d}", y0.len())));
    }
    if !a.is_lower_triangular() {
        return Err(Error::InvalidArgument("Duhamel solver needs a lower-triangular system".into()));
    }
    let mut comps: Vec<Vec<ExpPoly>> = Vec::with_capacity(d);
    for i in 0..d {
        let aii = a[(i, i)];
        let mut terms = Vec::new();
        add_term(&mut terms, ExpPoly { rate: aii, poly: vec![y0[i]] });
        for j in 0..i {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for src in &comps[j] {
                for mut piece in duhamel_integral(aii, src) {
                    piece.poly.iter_mut().for_each(|c| *c *= -aij);
                    add_term(&mut terms, piece);
                }
            }
        }
        comps.push(terms);
    }
    Ok(comps.iter().map(|terms| terms.iter().map(|e| poly_eval(&e.poly, t) * (-e.rate * t).exp()).sum()).collect())
}

/// Constant of the per-mode bound `(4/3)(1 + k^4 t^2) e^{-2 k^2 b t}` for the
/// first-order convection-diffusion sensitivity system with `|d lambda| <= 1`.
pub fn duhamel_mode_bound(_k: u32) -> f64 {
    4.0 / 3.0
}
