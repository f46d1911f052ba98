//! Convection-diffusion `u_t = -a(z) u_x + b(z) u_xx` on the torus with first and
//! second order sensitivities in `z`, mode by mode in Fourier space.
//!
//! Fourier convention: `u_k = int_0^{2 pi} u(x) e^{-ikx} dx`, so
//! `||u||^2 = (1/2 pi) sum_k |u_k|^2` and unit mass means `u_0 = 1`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarFn;
use crate::jordan::{JordanBlock, JordanStructure, DEFAULT_REL_TOL};
use crate::linalg::{expm, CMatrix, C64, ONE, ZERO};
use crate::lyapunov::{c_m_constant, decay_constant, maximize_on_interval, w_vector, DecayEnvelope, LyapunovForm};
use crate::models::{ModeEnvelope, TheoremRow};

/// Relative size below which `d lambda` (or `d^2 lambda`) counts as zero.
pub const CASE_TOL: f64 = 1e-10;

/// Constant of the second-order tilde-seminorm estimate, `15 * 9.75`.
pub const LEMMA_TILDE_CONSTANT: f64 = 146.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    pub a: ScalarFn,
    pub b: ScalarFn,
    pub b0: f64,
    pub sup_da: f64,
    pub sup_db: f64,
    pub sup_d2a: f64,
    pub sup_d2b: f64,
}

/// File format for coefficients; omitted bounds are estimated on the z grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub a: ScalarFn,
    pub b: ScalarFn,
    #[serde(default)]
    pub b0: Option<f64>,
    #[serde(default)]
    pub sup_da: Option<f64>,
    #[serde(default)]
    pub sup_db: Option<f64>,
    #[serde(default)]
    pub sup_d2a: Option<f64>,
    #[serde(default)]
    pub sup_d2b: Option<f64>,
}

impl CoefficientField {
    /// Estimates `b0` and the derivative sup-norms on `z_grid`.
    pub fn from_grid(a: ScalarFn, b: ScalarFn, z_grid: &[f64]) -> Result<Self> {
        Self::from_spec(
            CoefficientSpec { a, b, b0: None, sup_da: None, sup_db: None, sup_d2a: None, sup_d2b: None },
            z_grid,
        )
    }

    pub fn from_spec(spec: CoefficientSpec, z_grid: &[f64]) -> Result<Self> {
        spec.a.validate()?;
        spec.b.validate()?;
        if z_grid.is_empty() || z_grid.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidArgument("z grid must be finite and nonempty".into()));
        }
        let mut b_min = f64::INFINITY;
        let mut sups = [0.0f64; 4];
        for &z in z_grid {
            let (_, da, d2a) = spec.a.eval3(z);
            let (bv, db, d2b) = spec.b.eval3(z);
            b_min = b_min.min(bv);
            for (s, v) in sups.iter_mut().zip([da, db, d2a, d2b]) {
                *s = s.max(v.abs());
            }
        }
        let pick = |given: Option<f64>, est: f64, name: &str| -> Result<f64> {
            match given {
                None => Ok(est),
                Some(g) if g >= est * (1.0 - 1e-12) && g.is_finite() => Ok(g),
                Some(g) => Err(Error::InvalidArgument(format!("{name} = {g} is below the grid value {est}"))),
            }
        };
        let b0 = match spec.b0 {
            None => b_min,
            Some(g) if g <= b_min * (1.0 + 1e-12) => g,
            Some(g) => return Err(Error::InvalidArgument(format!("b0 = {g} exceeds min b = {b_min} on the grid"))),
        };
        if !(b0 > 0.0) {
            return Err(Error::InvalidArgument(format!("b0 must be positive, got {b0}")));
        }
        Ok(CoefficientField {
            b0,
            sup_da: pick(spec.sup_da, sups[0], "sup_da")?,
            sup_db: pick(spec.sup_db, sups[1], "sup_db")?,
            sup_d2a: pick(spec.sup_d2a, sups[2], "sup_d2a")?,
            sup_d2b: pick(spec.sup_d2b, sups[3], "sup_d2b")?,
            a: spec.a,
            b: spec.b,
        })
    }
}

/// `lambda_k = b + i a / k` and its first two `z` derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeLambda {
    pub lambda: C64,
    pub d1: C64,
    pub d2: C64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DefectCase {
    /// Diagonal system, pure exponential decay.
    Case1,
    /// `d lambda = 0`, `d^2 lambda != 0` (second order only).
    Case2,
    /// `d lambda != 0`.
    Case3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdModeBound {
    pub case: DefectCase,
    pub bound: ModeEnvelope,
}

pub fn lambda_k(field: &CoefficientField, k: i64, z: f64) -> Result<ModeLambda> {
    if k == 0 {
        return Err(Error::InvalidArgument("mode k = 0 is conserved, no sensitivity system".into()));
    }
    let kf = k as f64;
    let (a, da, d2a) = field.a.eval3(z);
    let (b, db, d2b) = field.b.eval3(z);
    Ok(ModeLambda { lambda: C64::new(b, a / kf), d1: C64::new(db, da / kf), d2: C64::new(d2b, d2a / kf) })
}

fn negligible(x: C64, lambda: C64) -> bool {
    x.norm() <= CASE_TOL * (1.0 + lambda.norm())
}

fn unit(dim: usize, i: usize) -> Vec<C64> {
    let mut e = vec![ZERO; dim];
    e[i] = ONE;
    e
}

/// `C_k = k^2 [[lambda, 0], [d lambda, lambda]]`.
pub fn first_order_system(field: &CoefficientField, k: i64, z: f64) -> Result<CMatrix> {
    let l = lambda_k(field, k, z)?;
    Ok(first_order_matrix(&l).scale_real((k * k) as f64))
}

fn first_order_matrix(l: &ModeLambda) -> CMatrix {
    CMatrix::from_rows(&[vec![l.lambda, ZERO], vec![l.d1, l.lambda]]).expect("2x2")
}

/// `D_k = k^2 [[lambda, 0, 0], [d lambda, lambda, 0], [d^2 lambda, 2 d lambda, lambda]]`.
pub fn second_order_system(field: &CoefficientField, k: i64, z: f64) -> Result<CMatrix> {
    let l = lambda_k(field, k, z)?;
    Ok(second_order_matrix(&l).scale_real((k * k) as f64))
}

fn second_order_matrix(l: &ModeLambda) -> CMatrix {
    CMatrix::from_rows(&[vec![l.lambda, ZERO, ZERO], vec![l.d1, l.lambda, ZERO], vec![l.d2, l.d1.scale(2.0), l.lambda]])
        .expect("3x3")
}

fn exact_exponential(b: f64, k: i64) -> ModeEnvelope {
    ModeEnvelope { envelope: DecayEnvelope { c_const: 1.0, mu: b, m: 1 }, time_scale: (k * k) as f64 }
}

/// Envelope of `|e^{-C_k t}|^2`. For `d lambda != 0` the Lyapunov construction
/// uses the chain `(e1, (d lambda/|d lambda|) e2)` with coupling `|d lambda|`
/// and unit weights, so `P_k(0) = I`.
pub fn first_order_envelope(field: &CoefficientField, k: i64, z: f64) -> Result<CdModeBound> {
    let l = lambda_k(field, k, z)?;
    if negligible(l.d1, l.lambda) {
        return Ok(CdModeBound { case: DefectCase::Case1, bound: exact_exponential(l.lambda.re, k) });
    }
    let kappa = l.d1.norm();
    let mut v1 = vec![ZERO; 2];
    v1[1] = l.d1 / kappa;
    let block = JordanBlock::with_coupling(l.lambda, vec![unit(2, 0), v1], kappa)?;
    let form =
        LyapunovForm::with_weights(JordanStructure::from_blocks(vec![block], DEFAULT_REL_TOL)?, &[vec![1.0, 1.0]])?;
    let envelope = decay_constant(&form)?;
    Ok(CdModeBound { case: DefectCase::Case3, bound: ModeEnvelope { envelope, time_scale: (k * k) as f64 } })
}

pub fn second_order_case(field: &CoefficientField, k: i64, z: f64) -> Result<DefectCase> {
    let l = lambda_k(field, k, z)?;
    Ok(classify_second(&l))
}

fn classify_second(l: &ModeLambda) -> DefectCase {
    if !negligible(l.d1, l.lambda) {
        DefectCase::Case3
    } else if !negligible(l.d2, l.lambda) {
        DefectCase::Case2
    } else {
        DefectCase::Case1
    }
}

/// `1 + (2 c_2 + 4 * 146.25 (1 + |d^2 lambda|^2)) max{1, |d lambda|^4}`.
pub fn case3_constant(d1_abs: f64, d2_abs: f64) -> f64 {
    let lemma = 4.0 * LEMMA_TILDE_CONSTANT * (1.0 + d2_abs * d2_abs);
    1.0 + (2.0 * c_m_constant(2) + lemma) * d1_abs.powi(4).max(1.0)
}

pub fn second_order_envelope(field: &CoefficientField, k: i64, z: f64) -> Result<CdModeBound> {
    let l = lambda_k(field, k, z)?;
    let scale = (k * k) as f64;
    let case = classify_second(&l);
    let envelope = match case {
        DefectCase::Case1 => return Ok(CdModeBound { case, bound: exact_exponential(l.lambda.re, k) }),
        DefectCase::Case2 => {
            let kappa = l.d2.norm();
            let mut v1 = vec![ZERO; 3];
            v1[2] = l.d2 / kappa;
            let blocks = vec![
                JordanBlock::with_coupling(l.lambda, vec![unit(3, 0), v1], kappa)?,
                JordanBlock::new(l.lambda, vec![unit(3, 1)])?,
            ];
            let form = LyapunovForm::with_weights(
                JordanStructure::from_blocks(blocks, DEFAULT_REL_TOL)?,
                &[vec![1.0, 1.0], vec![1.0]],
            )?;
            decay_constant(&form)?
        }
        DefectCase::Case3 => DecayEnvelope { c_const: case3_constant(l.d1.norm(), l.d2.norm()), mu: l.lambda.re, m: 3 },
    };
    Ok(CdModeBound { case, bound: ModeEnvelope { envelope, time_scale: scale } })
}

/// Jordan chain of the unscaled `D_k^H` for `d lambda != 0`:
/// `e1`, `(0, 1/conj(d lambda), 0)`, `(0, -conj(d2)/(2 conj(d1)^3), 1/(2 conj(d1)^2))`.
pub fn second_order_chain(field: &CoefficientField, k: i64, z: f64) -> Result<JordanBlock> {
    let l = lambda_k(field, k, z)?;
    if negligible(l.d1, l.lambda) {
        return Err(Error::InvalidArgument("second order chain needs d lambda != 0".into()));
    }
    let (c1, c2) = (l.d1.conj(), l.d2.conj());
    let v1 = vec![ZERO, c1.inv(), ZERO];
    let v2 = vec![ZERO, -c2 / (c1 * c1 * c1).scale(2.0), (c1 * c1).scale(2.0).inv()];
    JordanBlock::new(l.lambda, vec![unit(3, 0), v1, v2])
}

/// `conj(d^2 lambda) / (2 conj(d lambda)^2)`.
pub fn tilde_shift(field: &CoefficientField, k: i64, z: f64) -> Result<C64> {
    let l = lambda_k(field, k, z)?;
    let c1 = l.d1.conj();
    Ok(l.d2.conj() / (c1 * c1).scale(2.0))
}

/// `w~^3 = w^3 + tilde_shift * w^2` at time `t` (rescaled internally to `k^2 t`).
pub fn tilde_w3_vector(field: &CoefficientField, k: i64, z: f64, t: f64) -> Result<Vec<C64>> {
    let block = second_order_chain(field, k, z)?;
    let c = tilde_shift(field, k, z)?;
    let tau = (k * k) as f64 * t;
    let mut w = w_vector(&block, 3, tau)?;
    crate::linalg::axpy(c, &w_vector(&block, 2, tau)?, &mut w);
    Ok(w)
}

/// Coefficients `(tau^2/2 + s tau, tau, 1)` expressing `w~^3(tau)` in
/// `(w^1(0), w^2(0), w~^3(0))`, with `s` the tilde shift.
pub fn tilde_xi(shift: C64, tau: f64) -> [C64; 3] {
    [C64::new(0.5 * tau * tau, 0.0) + shift.scale(tau), C64::new(tau, 0.0), ONE]
}

/// `P~(0) = P^1 + |d1|^2 P^2 + 4 |d1|^4 P~^3` built from the chain; equals `I`.
pub fn tilde_p0(field: &CoefficientField, k: i64, z: f64) -> Result<CMatrix> {
    let l = lambda_k(field, k, z)?;
    let block = second_order_chain(field, k, z)?;
    let w1 = w_vector(&block, 1, 0.0)?;
    let w2 = w_vector(&block, 2, 0.0)?;
    let w3 = tilde_w3_vector(field, k, z, 0.0)?;
    let n2 = l.d1.norm_sqr();
    let p = &CMatrix::outer(&w1, &w1) + &CMatrix::outer(&w2, &w2).scale_real(n2);
    Ok(&p + &CMatrix::outer(&w3, &w3).scale_real(4.0 * n2 * n2))
}

/// Truncated Fourier coefficients for modes `-K..=K`, index `k + K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    #[serde(rename = "K")]
    pub k_max: usize,
    pub z: f64,
    pub u: Vec<C64>,
    pub v: Vec<C64>,
    #[serde(default)]
    pub w: Option<Vec<C64>>,
}

const MASS_TOL: f64 = 1e-8;

impl SpectralState {
    /// Periodic Gaussian bump of width `width` centred at `center + slope z`,
    /// with its exact `z` derivatives (order 1 or 2).
    pub fn gaussian(k_max: usize, z: f64, bump: &GaussianBump, order: u8) -> Result<Self> {
        check_order(order)?;
        let n = 2 * k_max + 1;
        let (mut u, mut v, mut w) = (vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]);
        for (i, k) in (-(k_max as i64)..=k_max as i64).enumerate() {
            let (uk, vk, wk) = bump.coefficients(k, z);
            u[i] = uk;
            v[i] = vk;
            w[i] = wk;
        }
        Ok(SpectralState { k_max, z, u, v, w: (order == 2).then_some(w) })
    }

    /// Coefficients from samples on the uniform grid `x_j = 2 pi j / N` by the
    /// rectangle rule, which is exact for trigonometric polynomials of degree `< N`.
    pub fn from_samples(k_max: usize, z: f64, u: &[f64], v: &[f64], w: Option<&[f64]>) -> Result<Self> {
        let n = u.len();
        if n < 2 * k_max + 1 || v.len() != n || w.is_some_and(|w| w.len() != n) {
            return Err(Error::InvalidArgument(format!("need {} aligned samples per component", 2 * k_max + 1)));
        }
        let project = |f: &[f64]| -> Vec<C64> {
            (-(k_max as i64)..=k_max as i64)
                .map(|k| {
                    let s: C64 = f
                        .iter()
                        .enumerate()
                        .map(|(j, &fj)| C64::from_polar(fj, -(k as f64) * 2.0 * PI * j as f64 / n as f64))
                        .sum();
                    s.scale(2.0 * PI / n as f64)
                })
                .collect()
        };
        let state = SpectralState { k_max, z, u: project(u), v: project(v), w: w.map(project) };
        state.validate()?;
        Ok(state.normalized())
    }

    pub fn order(&self) -> u8 {
        if self.w.is_some() {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = 2 * self.k_max + 1;
        if self.u.len() != n || self.v.len() != n || self.w.as_ref().is_some_and(|w| w.len() != n) {
            return Err(Error::Shape { dim: n, len: self.u.len() });
        }
        let c = self.k_max;
        let w0 = self.w.as_ref().map_or(ZERO, |w| w[c]);
        if (self.u[c] - ONE).norm() > MASS_TOL || self.v[c].norm() > MASS_TOL || w0.norm() > MASS_TOL {
            return Err(Error::InvalidArgument(format!(
                "state is not normalized: u_0 = {}, v_0 = {}, w_0 = {}",
                self.u[c], self.v[c], w0
            )));
        }
        Ok(())
    }

    fn normalized(mut self) -> Self {
        let c = self.k_max;
        self.u[c] = ONE;
        self.v[c] = ZERO;
        if let Some(w) = self.w.as_mut() {
            w[c] = ZERO;
        }
        self
    }

    pub fn mode(&self, k: i64) -> Vec<C64> {
        let i = (k + self.k_max as i64) as usize;
        let mut y = vec![self.u[i], self.v[i]];
        if let Some(w) = &self.w {
            y.push(w[i]);
        }
        y
    }

    /// `||y - y_inf||^2 = (1/2 pi) sum_{k != 0} |y_k|^2`.
    pub fn deviation_norm_sq(&self) -> f64 {
        let c = self.k_max;
        let mut s = 0.0;
        for i in (0..self.u.len()).filter(|&i| i != c) {
            s += self.u[i].norm_sqr() + self.v[i].norm_sqr();
            if let Some(w) = &self.w {
                s += w[i].norm_sqr();
            }
        }
        s / (2.0 * PI)
    }

    /// `u(x) = (1/2 pi) sum_k u_k e^{ikx}` on the uniform `n`-point grid.
    pub fn synthesize_u(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|j| {
                let x = 2.0 * PI * j as f64 / n as f64;
                let s: C64 = (-(self.k_max as i64)..=self.k_max as i64)
                    .zip(&self.u)
                    .map(|(k, uk)| uk * C64::from_polar(1.0, k as f64 * x))
                    .sum();
                s.re / (2.0 * PI)
            })
            .collect()
    }
}

fn check_order(order: u8) -> Result<()> {
    if order == 1 || order == 2 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sensitivity order must be 1 or 2, got {order}")))
    }
}

/// `u(x, z, 0) = (1/2 pi) sum_k e^{-k^2 width^2 / 2} e^{ik(x - center - slope z)}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub width: f64,
    pub center: f64,
    pub slope: f64,
}

impl Default for GaussianBump {
    fn default() -> Self {
        GaussianBump { width: 0.5, center: PI, slope: 0.3 }
    }
}

impl GaussianBump {
    /// `(u_k, v_k, w_k)` with `v = du/dz`, `w = d^2u/dz^2`.
    pub fn coefficients(&self, k: i64, z: f64) -> (C64, C64, C64) {
        let kf = k as f64;
        let u = C64::from_polar((-0.5 * kf * kf * self.width * self.width).exp(), -kf * (self.center + self.slope * z));
        let d = C64::new(0.0, -kf * self.slope);
        (u, d * u, d * d * u)
    }

    /// `(1/2 pi) sum_{|k| > K} |y_k|^2`, summed until the terms vanish.
    pub fn tail(&self, k_max: usize, order: u8) -> f64 {
        let mut s = 0.0;
        for k in (k_max as i64 + 1)..(k_max as i64 + 10_000) {
            let (u, v, w) = self.coefficients(k, 0.0);
            let term = u.norm_sqr() + v.norm_sqr() + if order == 2 { w.norm_sqr() } else { 0.0 };
            s += 2.0 * term;
            if term < 1e-300 {
                break;
            }
        }
        s / (2.0 * PI)
    }
}

/// Exact solution of every mode at time `t` via the matrix exponential; mode 0 stays fixed.
pub fn evolve_spectrum(field: &CoefficientField, state: &SpectralState, t: f64) -> Result<SpectralState> {
    state.validate()?;
    let k_max = state.k_max as i64;
    let order = state.order();
    let modes: Vec<Vec<C64>> = (-k_max..=k_max)
        .into_par_iter()
        .map(|k| {
            let y0 = state.mode(k);
            if k == 0 || t == 0.0 {
                return Ok(y0);
            }
            let s = if order == 2 {
                second_order_system(field, k, state.z)?
            } else {
                first_order_system(field, k, state.z)?
            };
            Ok(expm(&s, -t)?.mul_vec(&y0))
        })
        .collect::<Result<_>>()?;
    let mut out = state.clone();
    for (i, y) in modes.into_iter().enumerate() {
        out.u[i] = y[0];
        out.v[i] = y[1];
        if let Some(w) = out.w.as_mut() {
            w[i] = y[2];
        }
    }
    Ok(out.normalized())
}

/// Uniform mode constant from the coefficient sup-norms: `12 max{2, 1 + |a'|^2 + |b'|^2}`
/// for order 1, the Case-3 formula at the sup-norms for order 2.
pub fn uniform_mode_constant(field: &CoefficientField, order: u8) -> Result<f64> {
    check_order(order)?;
    let s1 = field.sup_da.powi(2) + field.sup_db.powi(2);
    Ok(if order == 1 {
        12.0 * (1.0 + s1).max(2.0)
    } else {
        let s2 = field.sup_d2a.powi(2) + field.sup_d2b.powi(2);
        case3_constant(s1.sqrt(), s2.sqrt())
    })
}

/// `max_t (1 + t^{2 order}) e^{-2 b0 t}`.
pub fn closed_form_fold_constant(b0: f64, order: u8) -> Result<f64> {
    check_order(order)?;
    if !(b0 > 0.0) {
        return Err(Error::InvalidArgument("b0 must be positive".into()));
    }
    let p = 2 * order as i32;
    Ok(maximize_on_interval(|t| (1.0 + t.powi(p)) * (-2.0 * b0 * t).exp(), 0.0, (p as f64 + 30.0) / b0))
}

/// Smallest `c` with `(1 + k^{4o} t^{2o}) e^{-2 k^2 b0 t} <= c (1 + t^{2o}) e^{-2 b0 t}`
/// for `1 <= k <= k_max` and all `t >= 0` (`o` the order).
pub fn fold_constant(b0: f64, order: u8, k_max: usize) -> Result<f64> {
    check_order(order)?;
    if !(b0 > 0.0) {
        return Err(Error::InvalidArgument("b0 must be positive".into()));
    }
    let p = 2 * order as i32;
    Ok((2..=k_max.max(1))
        .map(|k| {
            let k2 = (k * k) as f64;
            let g = 2.0 * (k2 - 1.0) * b0;
            let f = |t: f64| (1.0 + (k2 * t).powi(p)) / (1.0 + t.powi(p)) * (-g * t).exp();
            maximize_on_interval(f, 0.0, (p as f64 + 40.0) / g)
        })
        .fold(1.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub order: u8,
    pub b0: f64,
    pub mode_constant: f64,
    pub fold_constant: f64,
    pub closed_form_fold_constant: f64,
    pub global_constant: f64,
    pub initial_sup: f64,
    pub tail_estimate: f64,
    pub max_ratio: f64,
    pub holds: bool,
    pub rows: Vec<TheoremRow>,
}

/// Checks `sup_z ||y(t) - y_inf||^2 <= C (1 + t^{2 order}) e^{-2 b0 t} sup_z ||y(0) - y_inf||^2`
/// pointwise on the grids, `C = uniform_mode_constant * fold_constant`.
pub fn theorem_bound_check(
    field: &CoefficientField,
    bump: &GaussianBump,
    z_grid: &[f64],
    t_grid: &[f64],
    order: u8,
    k_max: usize,
) -> Result<TheoremReport> {
    check_order(order)?;
    if z_grid.is_empty() || t_grid.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidArgument("need a nonempty z grid and nonnegative times".into()));
    }
    let mode_constant = uniform_mode_constant(field, order)?;
    let fold = fold_constant(field.b0, order, k_max)?;
    let global = mode_constant * fold;
    let initial: Vec<SpectralState> =
        z_grid.iter().map(|&z| SpectralState::gaussian(k_max, z, bump, order)).collect::<Result<_>>()?;
    let initial_sup = initial.iter().map(SpectralState::deviation_norm_sq).fold(0.0, f64::max);
    let p = 2 * order as i32;
    let rows: Vec<TheoremRow> = initial
        .par_iter()
        .map(|s0| {
            t_grid
                .iter()
                .map(|&t| {
                    let norm_sq = evolve_spectrum(field, s0, t)?.deviation_norm_sq();
                    let bound = global * (1.0 + t.powi(p)) * (-2.0 * field.b0 * t).exp() * initial_sup;
                    Ok(TheoremRow { z: s0.z, t, norm_sq, bound, ratio: norm_sq / bound })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(TheoremReport {
        order,
        b0: field.b0,
        mode_constant,
        fold_constant: fold,
        closed_form_fold_constant: closed_form_fold_constant(field.b0, order)?,
        global_constant: global,
        initial_sup,
        tail_estimate: bump.tail(k_max, order),
        max_ratio,
        holds: max_ratio <= 1.0 + crate::oracle::DOMINANCE_SLACK,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jordan::verify_chain;
    use crate::linalg::{hermitian_extremes, quad_form};
    use crate::lyapunov::lower_bound_lemma_gap_complex;
    use crate::oracle::{check_dominance, duhamel_solve, linspace};
    use proptest::prelude::*;

    fn field(a: ScalarFn, b: ScalarFn) -> CoefficientField {
        CoefficientField::from_grid(a, b, &linspace(-3.0, 3.0, 61)).unwrap()
    }

    fn local_field(a: ScalarFn, b: ScalarFn) -> CoefficientField {
        CoefficientField::from_grid(a, b, &linspace(-0.5, 0.5, 11)).unwrap()
    }

    fn first_fixture() -> CoefficientField {
        field(ScalarFn::Poly { coeffs: vec![0.0, 1.0] }, ScalarFn::RationalSquare { offset: 2.0, amp: 1.0 })
    }

    fn second_fixture() -> CoefficientField {
        field(ScalarFn::Poly { coeffs: vec![0.0, 0.0, 0.5] }, ScalarFn::RationalSquare { offset: 2.0, amp: 0.5 })
    }

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() < 1e-12 * (1.0 + b.norm())
    }

    #[test]
    fn lambda_examples() {
        let f = field(ScalarFn::constant(0.0), ScalarFn::constant(1.0));
        assert_eq!(lambda_k(&f, 3, 0.7).unwrap().lambda, ONE);
        let f = field(ScalarFn::Poly { coeffs: vec![0.0, 1.0] }, ScalarFn::Poly { coeffs: vec![1.0, 0.0, 1.0] });
        let l = lambda_k(&f, 2, 1.0).unwrap();
        assert!(close(l.lambda, C64::new(2.0, 0.5)));
        assert!(close(l.d1, C64::new(2.0, 0.5)));
        assert!(lambda_k(&f, 0, 1.0).is_err());
        assert!(first_order_system(&f, 0, 1.0).is_err());
    }

    #[test]
    fn spectral_gap_is_b_at_unit_modes() {
        let f = first_fixture();
        for z in [-1.0, 0.0, 2.0] {
            let gaps: Vec<f64> = [1i64, -1, 2, 5]
                .iter()
                .map(|&k| {
                    let c = first_order_system(&f, k, z).unwrap();
                    c.diag()[0].re
                })
                .collect();
            assert_eq!(gaps[0], f.b.value(z));
            assert_eq!(gaps[1], f.b.value(z));
            assert!(gaps[2] > gaps[0] && gaps[3] > gaps[2]);
        }
    }

    #[test]
    fn field_bounds_validated() {
        let spec = CoefficientSpec {
            a: ScalarFn::Poly { coeffs: vec![0.0, 1.0] },
            b: ScalarFn::constant(1.0),
            b0: Some(2.0),
            sup_da: None,
            sup_db: None,
            sup_d2a: None,
            sup_d2b: None,
        };
        assert!(CoefficientField::from_spec(spec.clone(), &[0.0]).is_err());
        let ok = CoefficientSpec { b0: Some(0.5), sup_da: Some(1.5), ..spec.clone() };
        let f = CoefficientField::from_spec(ok, &[0.0, 1.0]).unwrap();
        assert_eq!((f.b0, f.sup_da), (0.5, 1.5));
        let low = CoefficientSpec { b0: None, sup_da: Some(0.5), ..spec };
        assert!(CoefficientField::from_spec(low, &[0.0]).is_err());
        let json = r#"{"a":{"kind":"const","value":0},"b":{"kind":"const","value":1},"b0":1}"#;
        let s: CoefficientSpec = serde_json::from_str(json).unwrap();
        assert_eq!(s.b0, Some(1.0));
    }

    #[test]
    fn first_order_constants() {
        let f = local_field(ScalarFn::constant(0.0), ScalarFn::Poly { coeffs: vec![2.0, 1.0] });
        let e = first_order_envelope(&f, 1, 0.0).unwrap();
        assert_eq!(e.case, DefectCase::Case3);
        assert!((e.bound.envelope.c_const - 24.0).abs() < 1e-12);
        assert_eq!(e.bound.envelope.m, 2);
        let f = field(ScalarFn::constant(1.0), ScalarFn::constant(2.0));
        let e = first_order_envelope(&f, 3, 0.0).unwrap();
        assert_eq!(e.case, DefectCase::Case1);
        assert_eq!(e.bound.eval(0.1), (-2.0 * 9.0 * 2.0 * 0.1f64).exp());
        let f = local_field(ScalarFn::Poly { coeffs: vec![0.0, 3.0] }, ScalarFn::Poly { coeffs: vec![2.0, 0.5] });
        for k in [1i64, 2, 3] {
            let d2 = 0.25 + 9.0 / (k * k) as f64;
            let e = first_order_envelope(&f, k, 0.0).unwrap();
            assert!((e.bound.envelope.c_const - 12.0 * (1.0 + d2).max(2.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn first_order_matches_shear_example() {
        // k = 1, lambda = 1, d lambda = 1 is the 2x2 shear with eps = 1 (transposed)
        let f = local_field(ScalarFn::constant(0.0), ScalarFn::Poly { coeffs: vec![1.0, 1.0] });
        let c = first_order_system(&f, 1, 0.0).unwrap();
        assert_eq!(c, CMatrix::from_real_rows(&[&[1.0, 0.0], &[1.0, 1.0]]).unwrap());
        assert_eq!(c.diag(), vec![ONE, ONE]);
    }

    #[test]
    fn first_order_dominance() {
        let f = first_fixture();
        for k in [1i64, 2, 4, 8] {
            for z in [-2.0, -0.5, 0.0, 0.3, 2.5] {
                let c = first_order_system(&f, k, z).unwrap();
                let e = first_order_envelope(&f, k, z).unwrap();
                let ts = linspace(0.0, 20.0 / (k * k) as f64, 100);
                let r = check_dominance(&c, &e.bound, &ts).unwrap();
                assert!(r.dominated, "k={k} z={z} ratio={}", r.max_ratio);
            }
        }
    }

    #[test]
    fn second_order_cases() {
        let f = second_fixture();
        assert_eq!(second_order_case(&f, 1, 0.0).unwrap(), DefectCase::Case2);
        assert_eq!(second_order_case(&f, 1, 1.0).unwrap(), DefectCase::Case3);
        let g = field(ScalarFn::constant(1.0), ScalarFn::constant(2.0));
        assert_eq!(second_order_case(&g, 2, 1.0).unwrap(), DefectCase::Case1);
        // rank of D - lambda I: 0, 1, 2 across the three cases
        for (fld, z, rank) in [(&g, 0.0, 0usize), (&f, 0.0, 1), (&f, 1.0, 2)] {
            let d = second_order_system(fld, 1, z).unwrap();
            let lam = d[(0, 0)];
            let (r, _) = crate::linalg::nullspace_rank(&d.shift(lam), 1e-12).unwrap();
            assert_eq!(r, rank);
        }
    }

    #[test]
    fn case3_constant_example() {
        assert_eq!(case3_constant(1.0, 1.0), 1183.0);
        let f = field(ScalarFn::constant(0.0), ScalarFn::Poly { coeffs: vec![2.0, 1.0, 0.5] });
        let e = second_order_envelope(&f, 1, 0.0).unwrap();
        assert_eq!(e.case, DefectCase::Case3);
        assert_eq!(e.bound.envelope.c_const, 1183.0);
        assert_eq!(e.bound.envelope.m, 3);
    }

    #[test]
    fn case2_constant_example() {
        let f = field(ScalarFn::constant(0.0), ScalarFn::Poly { coeffs: vec![2.0, 0.0, 0.5] });
        for k in [1i64, 3] {
            let e = second_order_envelope(&f, k, 0.0).unwrap();
            assert_eq!(e.case, DefectCase::Case2);
            assert!((e.bound.envelope.c_const - 24.0).abs() < 1e-12);
            let t = 0.2;
            let kk = (k * k) as f64;
            let expected = 24.0 * (1.0 + kk * kk * t * t) * (-2.0 * kk * 2.0 * t).exp();
            assert!((e.bound.eval(t) / expected - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn second_order_dominance_all_cases() {
        let f = second_fixture();
        for k in [1i64, 2, 4, 8] {
            for z in [-2.0, -1e-6, 0.0, 1e-3, 1.5] {
                let d = second_order_system(&f, k, z).unwrap();
                let e = second_order_envelope(&f, k, z).unwrap();
                let ts = linspace(0.0, 20.0 / (k * k) as f64, 100);
                let r = check_dominance(&d, &e.bound, &ts).unwrap();
                assert!(r.dominated, "k={k} z={z} ratio={}", r.max_ratio);
            }
        }
    }

    #[test]
    fn near_threshold_classification_is_harmless() {
        let f = local_field(ScalarFn::constant(0.0), ScalarFn::Poly { coeffs: vec![1.0, 0.0, 0.0, 1.0] });
        for z in [1e-6, 5e-6, 1e-5] {
            let d = second_order_system(&f, 1, z).unwrap();
            let e = second_order_envelope(&f, 1, z).unwrap();
            let r = check_dominance(&d, &e.bound, &linspace(0.0, 20.0, 100)).unwrap();
            assert!(r.dominated, "z={z}");
        }
    }

    #[test]
    fn case3_constant_bounded_in_collapse() {
        let f = second_fixture();
        let cap = 1.0 + 12.0 + 585.0 * (1.0 + f.sup_d2a.powi(2) + f.sup_d2b.powi(2));
        for z in [1e-1, 1e-2, 1e-4, 1e-6, 1e-8] {
            let e = second_order_envelope(&f, 1, z).unwrap();
            assert_eq!(e.case, DefectCase::Case3);
            assert!(e.bound.envelope.c_const <= cap);
        }
    }

    #[test]
    fn second_order_chain_and_tilde() {
        let f = second_fixture();
        for (k, z) in [(1i64, 0.7), (3, -1.2), (2, 0.05)] {
            let block = second_order_chain(&f, k, z).unwrap();
            let l = lambda_k(&f, k, z).unwrap();
            let s = JordanStructure::from_blocks(vec![block], DEFAULT_REL_TOL).unwrap();
            assert!(verify_chain(&second_order_matrix(&l), &s) < 1e-12);
            let w = tilde_w3_vector(&f, k, z, 0.0).unwrap();
            let c1 = l.d1.conj();
            assert!(w[0].norm() < 1e-15 && w[1].norm() < 1e-12 * (1.0 + w[2].norm()));
            assert!(close(w[2], (c1 * c1).scale(2.0).inv()));
            let p = tilde_p0(&f, k, z).unwrap();
            assert!((&p - &CMatrix::identity(3)).max_abs() < 1e-12);
        }
        assert!(tilde_w3_vector(&f, 1, 0.0, 0.0).is_err());
    }

    #[test]
    fn tilde_lemma_constant() {
        let f = second_fixture();
        for (k, z) in [(1i64, 0.3), (2, 1.0), (1, 0.01)] {
            let l = lambda_k(&f, k, z).unwrap();
            let d = second_order_system(&f, k, z).unwrap();
            let w0 = tilde_w3_vector(&f, k, z, 0.0).unwrap();
            let c = LEMMA_TILDE_CONSTANT * (1.0 + l.d2.norm_sqr()) / l.d1.norm_sqr().powi(2).min(1.0);
            let kk = (k * k) as f64;
            for t in linspace(0.0, 10.0 / kk, 50) {
                let prop = expm(&d, -t).unwrap();
                let env = c * (1.0 + kk.powi(4) * t.powi(4)) * (-2.0 * kk * l.lambda.re * t).exp();
                let p3 = CMatrix::outer(&w0, &w0);
                let q = prop.adjoint().matmul(&p3).matmul(&prop);
                assert!(hermitian_extremes(&q).unwrap().lambda_max <= env * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn mode_fold_inequality() {
        for b0 in [0.1, 0.45, 1.0, 2.0] {
            for order in [1u8, 2] {
                let c = fold_constant(b0, order, 32).unwrap();
                let p = 2 * order as i32;
                for k in 1..=32i64 {
                    let k2 = (k * k) as f64;
                    for t in linspace(0.0, 30.0, 601) {
                        let lhs = (1.0 + (k2 * t).powi(p)) * (-2.0 * k2 * b0 * t).exp();
                        let rhs = c * (1.0 + t.powi(p)) * (-2.0 * b0 * t).exp();
                        assert!(lhs <= rhs * (1.0 + 1e-9), "b0={b0} order={order} k={k} t={t}");
                    }
                }
            }
        }
        assert_eq!(fold_constant(1.0, 1, 32).unwrap(), 1.0);
    }

    #[test]
    fn closed_form_fold_constant_too_small_at_some_b0() {
        let b0 = 0.45;
        let c = closed_form_fold_constant(b0, 1).unwrap();
        assert_eq!(c, 1.0);
        let t = 0.4;
        let lhs = (1.0 + 16.0 * t * t) * (-8.0 * b0 * t).exp();
        assert!(lhs > c * (1.0 + t * t) * (-2.0 * b0 * t).exp());
        assert!(fold_constant(b0, 1, 32).unwrap() > 1.0);
    }

    #[test]
    fn evolve_identity_and_steady_state() {
        let f = second_fixture();
        let s0 = SpectralState::gaussian(8, 0.4, &GaussianBump::default(), 2).unwrap();
        assert_eq!(evolve_spectrum(&f, &s0, 0.0).unwrap(), s0);
        let n = 17;
        let mut steady = s0.clone();
        steady.u = vec![ZERO; n];
        steady.u[8] = ONE;
        steady.v = vec![ZERO; n];
        steady.w = Some(vec![ZERO; n]);
        assert_eq!(evolve_spectrum(&f, &steady, 3.0).unwrap(), steady);
        let mut bad = s0.clone();
        bad.u[8] = C64::new(2.0, 0.0);
        assert!(evolve_spectrum(&f, &bad, 1.0).is_err());
    }

    #[test]
    fn evolve_matches_duhamel() {
        let f = second_fixture();
        let s0 = SpectralState::gaussian(4, 0.8, &GaussianBump::default(), 2).unwrap();
        let t = 0.37;
        let s1 = evolve_spectrum(&f, &s0, t).unwrap();
        for k in [-3i64, 1, 4] {
            let d = second_order_system(&f, k, 0.8).unwrap();
            let y = duhamel_solve(&d, &s0.mode(k), t).unwrap();
            for (a, b) in y.iter().zip(s1.mode(k)) {
                assert!((a - b).norm() < 1e-12 * (1.0 + b.norm()));
            }
        }
        let f1 = first_fixture();
        let s0 = SpectralState::gaussian(3, -0.2, &GaussianBump::default(), 1).unwrap();
        let s1 = evolve_spectrum(&f1, &s0, t).unwrap();
        let l = lambda_k(&f1, 2, -0.2).unwrap();
        let e = (-l.lambda * 4.0 * t).exp();
        let y0 = s0.mode(2);
        let v = e * (y0[1] - l.d1 * 4.0 * t * y0[0]);
        assert!((s1.mode(2)[1] - v).norm() < 1e-12);
    }

    #[test]
    fn parseval_consistency() {
        let bump = GaussianBump::default();
        let s = SpectralState::gaussian(32, 0.0, &bump, 1).unwrap();
        let n = 512;
        let ux = s.synthesize_u(n);
        let l2: f64 = ux.iter().map(|u| u * u).sum::<f64>() * 2.0 * PI / n as f64;
        let parseval: f64 = s.u.iter().map(|c| c.norm_sqr()).sum::<f64>() / (2.0 * PI);
        assert!((l2 - parseval).abs() < 1e-6);
        assert!(bump.tail(32, 2) < 1e-6);
    }

    #[test]
    fn samples_round_trip() {
        let bump = GaussianBump { width: 0.7, center: 2.0, slope: 0.5 };
        let s = SpectralState::gaussian(6, 0.3, &bump, 2).unwrap();
        let n = 64;
        let synth = |c: &Vec<C64>| {
            let tmp = SpectralState { u: c.clone(), ..s.clone() };
            tmp.synthesize_u(n)
        };
        let (u, v, w) = (synth(&s.u), synth(&s.v), synth(s.w.as_ref().unwrap()));
        let back = SpectralState::from_samples(6, 0.3, &u, &v, Some(&w)).unwrap();
        for (a, b) in back.u.iter().zip(&s.u).chain(back.w.as_ref().unwrap().iter().zip(s.w.as_ref().unwrap())) {
            assert!((a - b).norm() < 1e-12);
        }
        let scaled: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
        assert!(SpectralState::from_samples(6, 0.3, &scaled, &v, None).is_err());
    }

    #[test]
    fn theorem_constant_coefficients() {
        let f = field(ScalarFn::constant(0.5), ScalarFn::constant(1.0));
        let r = theorem_bound_check(&f, &GaussianBump::default(), &[0.0, 1.0], &linspace(0.0, 5.0, 11), 1, 16).unwrap();
        assert!(r.holds);
        assert_eq!(r.mode_constant, 24.0);
        for row in &r.rows {
            let exact = row.norm_sq;
            assert!(exact <= (-2.0 * row.t).exp() * r.initial_sup * (1.0 + 1e-12));
        }
    }

    #[test]
    fn theorem_first_order_fixture() {
        let f = first_fixture();
        let z = linspace(-3.0, 3.0, 13);
        let r = theorem_bound_check(&f, &GaussianBump::default(), &z, &linspace(0.0, 6.0, 13), 1, 32).unwrap();
        assert!(r.holds, "max ratio {}", r.max_ratio);
        assert!(r.tail_estimate < 1e-6);
    }

    #[test]
    fn theorem_second_order_fixture() {
        let f = second_fixture();
        let mut z = linspace(-3.0, 3.0, 13);
        z.push(1e-6);
        let r = theorem_bound_check(&f, &GaussianBump::default(), &z, &linspace(0.0, 6.0, 13), 2, 16).unwrap();
        assert!(r.holds, "max ratio {}", r.max_ratio);
        assert!(r.global_constant.is_finite() && r.global_constant > 1.0);
    }

    proptest! {
        #[test]
        fn first_order_envelope_dominates(k in 1i64..6, z in -3.0f64..3.0) {
            let f = first_fixture();
            let c = first_order_system(&f, k, z).unwrap();
            let e = first_order_envelope(&f, k, z).unwrap();
            let ts = linspace(0.0, 10.0 / (k * k) as f64, 40);
            prop_assert!(check_dominance(&c, &e.bound, &ts).unwrap().dominated);
        }

        #[test]
        fn tilde_decay_identity(k in 1i64..4, z in 0.1f64..2.5, t in 0.0f64..2.0, re in -1.0f64..1.0, im in -1.0f64..1.0) {
            let f = second_fixture();
            let d = second_order_system(&f, k, z).unwrap();
            let y0 = vec![C64::new(re, im), C64::new(im, 0.3), C64::new(0.5, re)];
            let y = expm(&d, -t).unwrap().mul_vec(&y0);
            let wt = tilde_w3_vector(&f, k, z, t).unwrap();
            let w0 = tilde_w3_vector(&f, k, z, 0.0).unwrap();
            let b = f.b.value(z);
            let lhs = quad_form(&CMatrix::outer(&wt, &wt), &y);
            let rhs = (-2.0 * (k * k) as f64 * b * t).exp() * quad_form(&CMatrix::outer(&w0, &w0), &y0);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
        }

        #[test]
        fn tilde_lemma_slack(k in 1i64..4, z in 0.05f64..2.5, t in 0.0f64..3.0, theta in 0.05f64..0.95,
                             re in -1.0f64..1.0, im in -1.0f64..1.0) {
            let f = second_fixture();
            let block = second_order_chain(&f, k, z).unwrap();
            let shift = tilde_shift(&f, k, z).unwrap();
            let tau = (k * k) as f64 * t;
            let vectors = vec![
                w_vector(&block, 1, 0.0).unwrap(),
                w_vector(&block, 2, 0.0).unwrap(),
                tilde_w3_vector(&f, k, z, 0.0).unwrap(),
            ];
            let x = vec![C64::new(re, 0.2), C64::new(im, re), C64::new(0.4, im)];
            let xi = tilde_xi(shift, tau);
            let mut w = vec![ZERO; 3];
            for (v, c) in vectors.iter().zip(&xi) {
                crate::linalg::axpy(*c, v, &mut w);
            }
            let wt = tilde_w3_vector(&f, k, z, t).unwrap();
            prop_assert!(w.iter().zip(&wt).all(|(a, b)| (a - b).norm() < 1e-9 * (1.0 + b.norm())));
            let slack = lower_bound_lemma_gap_complex(&vectors, &xi, theta, &x).unwrap();
            prop_assert!(slack >= -1e-10);
        }
    }
}
