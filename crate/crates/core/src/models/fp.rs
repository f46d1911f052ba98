//! Fokker-Planck equation `f_t = (f_x + a(z) x f)_x` with uncertain drift and its
//! sensitivity `g = f_z`, expanded in the rescaled Hermite functions of
//! [`HermiteBasis`] with scale `a(z)`. The diffusion variant
//! `u_t = d(z) u_xx + (x u)_x` uses scale `1/d(z)`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarFn;
use crate::jordan::{JordanBlock, JordanStructure, DEFAULT_REL_TOL};
use crate::linalg::{expm, hermitian_extremes, CMatrix, C64, ONE, ZERO};
use crate::lyapunov::{decay_constant, DecayEnvelope, LyapunovForm};
use crate::models::hermite::HermiteBasis;
use crate::models::{ModeEnvelope, TheoremRow};

/// `|alpha|` below which the mode systems are treated as diagonal.
pub const ALPHA_TOL: f64 = 1e-12;

/// Tolerance on `f_0 = 1` and `g_0 = 0` for projected initial data.
pub const MASS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftField {
    pub a: ScalarFn,
    pub a0: f64,
    pub sup_da: f64,
}

impl DriftField {
    /// `a0 = min a` and `sup |a_z|` estimated on `z_grid`.
    pub fn from_grid(a: ScalarFn, z_grid: &[f64]) -> Result<Self> {
        a.validate()?;
        if z_grid.is_empty() || z_grid.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidArgument("z grid must be finite and nonempty".into()));
        }
        let (mut a0, mut l) = (f64::INFINITY, 0.0f64);
        for &z in z_grid {
            let (v, d, _) = a.eval3(z);
            a0 = a0.min(v);
            l = l.max(d.abs());
        }
        Self::new(a, a0, l)
    }

    pub fn new(a: ScalarFn, a0: f64, sup_da: f64) -> Result<Self> {
        if !(a0 > 0.0 && a0.is_finite()) {
            return Err(Error::InvalidArgument(format!("drift infimum must be positive, got {a0}")));
        }
        if !(sup_da >= 0.0 && sup_da.is_finite()) {
            return Err(Error::InvalidArgument(format!("sup |a_z| must be finite, got {sup_da}")));
        }
        Ok(DriftField { a, a0, sup_da })
    }

    /// `(a(z), alpha(z) = a_z/a)`.
    pub fn at(&self, z: f64) -> (f64, f64) {
        let (v, d, _) = self.a.eval3(z);
        (v, d / v)
    }

    fn checked_at(&self, z: f64) -> Result<(f64, f64)> {
        let (a, alpha) = self.at(z);
        if !(a >= self.a0 * (1.0 - 1e-12)) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("a({z}) = {a} below a0 = {}", self.a0)));
        }
        Ok((a, alpha))
    }

    /// `||a_z|| / a0`, an upper bound for `|alpha|`.
    pub fn alpha_bound(&self) -> f64 {
        self.sup_da / self.a0
    }
}

pub fn fp_gamma(k: usize) -> f64 {
    ((k as f64 - 1.0) / k as f64).sqrt()
}

/// `k = 1, 2`: `C_k = [[1, 0], [alpha, 1]]`; `k >= 3`:
/// `C_k = [[(k-2)/k, 0, 0], [0, 1, 0], [gamma alpha, alpha, 1]]`.
pub fn fp_unscaled_system(k: usize, alpha: f64) -> Result<CMatrix> {
    match k {
        0 => Err(Error::InvalidArgument("mode 0 is the conserved mass".into())),
        1 | 2 => CMatrix::from_real_rows(&[&[1.0, 0.0], &[alpha, 1.0]]),
        _ => {
            let kf = k as f64;
            CMatrix::from_real_rows(&[
                &[(kf - 2.0) / kf, 0.0, 0.0],
                &[0.0, 1.0, 0.0],
                &[fp_gamma(k) * alpha, alpha, 1.0],
            ])
        }
    }
}

/// `k a(z) C_k(z)`, the generator of `y_k' = -k a C_k y_k` with
/// `y_1 = (f_1, g_1)`, `y_2 = (f_2, g_2 + alpha/sqrt 2)`, `y_k = (f_{k-2}, f_k, g_k)`.
pub fn fp_mode_system(field: &DriftField, k: usize, z: f64) -> Result<CMatrix> {
    let (a, alpha) = field.checked_at(z)?;
    Ok(fp_unscaled_system(k, alpha)?.scale_real(k as f64 * a))
}

/// `alpha = 0`: `e^{-2kat}`; else `12 max{2, 1 + alpha^2} (1 + (kat)^2) e^{-2kat}`.
pub fn fp_envelope_k12(field: &DriftField, k: usize, z: f64) -> Result<ModeEnvelope> {
    if !(k == 1 || k == 2) {
        return Err(Error::InvalidArgument(format!("expected mode 1 or 2, got {k}")));
    }
    let (a, alpha) = field.checked_at(z)?;
    let envelope = if alpha.abs() <= ALPHA_TOL {
        DecayEnvelope { c_const: 1.0, mu: 1.0, m: 1 }
    } else {
        let block = JordanBlock::with_coupling(
            ONE,
            vec![vec![ZERO, ONE], vec![C64::new(alpha.signum(), 0.0), ZERO]],
            alpha.abs(),
        )?;
        let structure = JordanStructure::from_blocks(vec![block], DEFAULT_REL_TOL)?;
        decay_constant(&LyapunovForm::with_weights(structure, &[vec![1.0, 1.0]])?)?
    };
    Ok(ModeEnvelope { envelope, time_scale: k as f64 * a })
}

/// Form for `C_3` with `alpha != 0`: `e_1` at the gap `1/3`, and the chain
/// `(0, alpha, 0), (sqrt(3/2) alpha, 0, 1)` at `1` in the time-dependent construction
/// with weights `(alpha^{-2}, 1)`.
pub fn fp_k3_form(alpha: f64) -> Result<LyapunovForm> {
    if alpha.abs() <= ALPHA_TOL {
        return Err(Error::InvalidArgument("mode 3 is diagonal for alpha = 0".into()));
    }
    let r = C64::new(alpha, 0.0);
    let gap = JordanBlock::new(C64::new(1.0 / 3.0, 0.0), vec![vec![ONE, ZERO, ZERO]])?;
    let upper = JordanBlock::new(ONE, vec![vec![ZERO, r, ZERO], vec![r * 1.5f64.sqrt(), ZERO, ONE]])?;
    let structure = JordanStructure::from_blocks(vec![gap, upper], DEFAULT_REL_TOL)?;
    let mut form = LyapunovForm::with_weights(structure, &[vec![1.0], vec![1.0]])?;
    form.treat_as_case3(1, vec![alpha.powi(-2), 1.0])?;
    Ok(form)
}

/// `P~_3(z, 0) = [[1 + 3/2 alpha^2, 0, sqrt(3/2) alpha], [0, 1, 0], [sqrt(3/2) alpha, 0, 1]]`.
pub fn fp_p_tilde3(alpha: f64) -> CMatrix {
    let s = 1.5f64.sqrt() * alpha;
    CMatrix::from_real_rows(&[&[1.0 + 1.5 * alpha * alpha, 0.0, s], &[0.0, 1.0, 0.0], &[s, 0.0, 1.0]]).expect("3x3")
}

/// `delta = 1 + 3/4 alpha^2`, half the trace of the lower `2x2` block of `P~_3(0)`.
pub fn fp_delta(alpha: f64) -> f64 {
    1.0 + 0.75 * alpha * alpha
}

/// `alpha = 0`: `e^{-2at}`; else `ratio(P~_3) 12 max{2, 1 + alpha^2} e^{-2at}`.
pub fn fp_envelope_k3(field: &DriftField, z: f64) -> Result<ModeEnvelope> {
    let (a, alpha) = field.checked_at(z)?;
    let envelope = if alpha.abs() <= ALPHA_TOL {
        DecayEnvelope { c_const: 1.0, mu: 1.0 / 3.0, m: 1 }
    } else {
        decay_constant(&fp_k3_form(alpha)?)?
    };
    Ok(ModeEnvelope { envelope, time_scale: 3.0 * a })
}

/// `P~ = diag(1, 1, min{1, alpha^{-4}} / 2)`.
pub fn fp_p_k4(alpha: f64) -> CMatrix {
    let m = 0.5 * (alpha.powi(-4)).min(1.0);
    CMatrix::from_diag(&[ONE, ONE, C64::new(m, 0.0)])
}

/// `A_k = C_k^H P~ + P~ C_k - P~/2`.
pub fn fp_a_k4(k: usize, alpha: f64) -> Result<CMatrix> {
    if k < 4 {
        return Err(Error::InvalidArgument(format!("expected k >= 4, got {k}")));
    }
    let c = fp_unscaled_system(k, alpha)?;
    let p = fp_p_k4(alpha);
    Ok(&(&c.adjoint().matmul(&p) + &p.matmul(&c)) - &p.scale_real(0.5))
}

/// `det A_k = 9/8 p m - 3/8 gamma^2 n - 1/4 p n` with `p = 3/2 - 4/k`,
/// `m = min{1, alpha^{-4}}`, `n = min{alpha^2, alpha^{-6}}`.
pub fn fp_det_a_k4(k: usize, alpha: f64) -> f64 {
    let p = 1.5 - 4.0 / k as f64;
    let a2 = alpha * alpha;
    let m = (1.0 / (a2 * a2)).min(1.0);
    let n = a2.min(1.0 / (a2 * a2 * a2));
    let g2 = fp_gamma(k).powi(2);
    1.125 * p * m - 0.375 * g2 * n - 0.25 * p * n
}

/// Reduced determinant for `|alpha| >= 1`.
pub fn fp_f(k: f64, alpha2: f64, gamma: f64) -> f64 {
    (1.5 - 4.0 / k) * (2.25 - 0.5 / alpha2) - 0.75 * gamma * gamma / alpha2
}

/// Reduced determinant for `|alpha| <= 1`.
pub fn fp_g(k: f64, alpha2: f64, gamma: f64) -> f64 {
    (1.5 - 4.0 / k) * (2.25 - 0.5 * alpha2) - 0.75 * gamma * gamma * alpha2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct K4Check {
    pub minors: [f64; 3],
    pub det: f64,
    pub positive_definite: bool,
    pub envelope: ModeEnvelope,
}

/// Leading minors of `A_k(z)` and the envelope `2 max{1, alpha^4} e^{-2at}`.
pub fn fp_k4_check(field: &DriftField, k: usize, z: f64) -> Result<K4Check> {
    let (a, alpha) = field.checked_at(z)?;
    let m = fp_a_k4(k, alpha)?;
    let e = |i: usize, j: usize| m[(i, j)].re;
    let m1 = e(0, 0);
    let m2 = e(0, 0) * e(1, 1) - e(0, 1) * e(1, 0);
    let det = m.determinant().re;
    Ok(K4Check {
        minors: [m1, m2, det],
        det,
        positive_definite: m1 > 0.0 && m2 > 0.0 && det > 0.0,
        envelope: ModeEnvelope {
            envelope: DecayEnvelope { c_const: 2.0 * alpha.powi(4).max(1.0), mu: 1.0, m: 1 },
            time_scale: a,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpConstants {
    pub c12: f64,
    pub c3: f64,
    pub c4: f64,
    pub global: f64,
}

/// Uniform constants with `A = ||a_z|| / a0`: `C_{1,2} = 12 max{2, 1 + A^2}`,
/// `C_3 = (6 + 21/4 A^4) C_{1,2}`, `C_{>=4} = 2 (1 + A^4)` and
/// `C = 2 max{1, a0^2} (C_{1,2} + C_3 + C_{>=4})`.
pub fn fp_constants(field: &DriftField) -> FpConstants {
    let r = field.alpha_bound();
    let r2 = r * r;
    let c12 = 12.0 * (1.0 + r2).max(2.0);
    let c3 = (6.0 + 5.25 * r2 * r2) * c12;
    let c4 = 2.0 * (1.0 + r2 * r2);
    let global = 2.0 * field.a0.powi(2).max(1.0) * (c12 + c3 + c4);
    FpConstants { c12, c3, c4, global }
}

/// `(1 + a^2 t^2) e^{-2at}`, decreasing in `a` for every `t >= 0`.
pub fn fold_factor(a: f64, t: f64) -> f64 {
    (1.0 + a * a * t * t) * (-2.0 * a * t).exp()
}

/// Initial density `f(x, z) = h_0(x - c(z))` for the steady state of `a(z)`,
/// with `g = f_z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftedGaussian {
    pub shift: ScalarFn,
}

impl Default for ShiftedGaussian {
    fn default() -> Self {
        ShiftedGaussian { shift: ScalarFn::Sin { offset: 0.4, amp: 0.3, freq: 1.0 } }
    }
}

impl ShiftedGaussian {
    /// `(f, f_z)` at `x` for drift `(a, a_z)`.
    pub fn eval(&self, a: f64, da: f64, z: f64, x: f64) -> (f64, f64) {
        let (c, dc, _) = self.shift.eval3(z);
        let y = x - c;
        let f = (a / (2.0 * PI)).sqrt() * (-0.5 * a * y * y).exp();
        (f, f * (da / (2.0 * a) - 0.5 * da * y * y + a * y * dc))
    }

    /// `f_k = (c sqrt(a))^k / sqrt(k!)`.
    pub fn exact_f(&self, a: f64, z: f64, k_max: usize) -> Vec<f64> {
        let s = self.shift.value(z) * a.sqrt();
        let mut out = Vec::with_capacity(k_max + 1);
        let mut v = 1.0;
        for k in 0..=k_max {
            if k > 0 {
                v *= s / (k as f64).sqrt();
            }
            out.push(v);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpState {
    pub k_max: usize,
    pub z: f64,
    /// `f_0..=f_K`.
    pub f: Vec<f64>,
    /// `g_0..=g_K`, `g_0 = 0`.
    pub g: Vec<f64>,
}

impl FpState {
    /// Projection of `(f, g)` onto `h_0..=h_K` for the drift at `z`.
    pub fn project(
        field: &DriftField,
        z: f64,
        k_max: usize,
        f: impl Fn(f64) -> f64,
        g: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let (a, _) = field.checked_at(z)?;
        let basis = HermiteBasis::new(k_max, a)?;
        let state = FpState { k_max, z, f: basis.project(f), g: basis.project(g) };
        state.validate()?;
        Ok(FpState { g: std::iter::once(0.0).chain(state.g[1..].iter().copied()).collect(), ..state })
    }

    pub fn shifted_gaussian(field: &DriftField, z: f64, k_max: usize, init: &ShiftedGaussian) -> Result<Self> {
        let (a, da, _) = field.a.eval3(z);
        Self::project(field, z, k_max, |x| init.eval(a, da, z, x).0, |x| init.eval(a, da, z, x).1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.f.len() != self.k_max + 1 || self.g.len() != self.k_max + 1 {
            return Err(Error::DimensionMismatch(format!("expected {} coefficients", self.k_max + 1)));
        }
        if (self.f[0] - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument(format!("f has mass {} instead of 1", self.f[0])));
        }
        if self.g[0].abs() > MASS_TOL {
            return Err(Error::InvalidArgument(format!("g carries mass {}", self.g[0])));
        }
        Ok(())
    }

    /// `sum_{k>=1} f_k^2 + g_1^2 + (g_2 + alpha/sqrt 2)^2 + sum_{k>=3} g_k^2`.
    pub fn deviation_norm_sq(&self, field: &DriftField) -> f64 {
        let (_, alpha) = field.at(self.z);
        let mut s = 0.0;
        for k in 1..=self.k_max {
            let gk = if k == 2 { self.g[2] + alpha / 2f64.sqrt() } else { self.g[k] };
            s += self.f[k] * self.f[k] + gk * gk;
        }
        s
    }

    /// Time derivatives of the coefficients from the mode systems.
    pub fn rhs(&self, field: &DriftField) -> (Vec<f64>, Vec<f64>) {
        let (a, alpha) = field.at(self.z);
        let n = self.k_max;
        let df: Vec<f64> = (0..=n).map(|k| -(k as f64) * a * self.f[k]).collect();
        let mut dg = vec![0.0; n + 1];
        for k in 1..=n {
            let kf = k as f64;
            let lower = if k >= 3 { fp_gamma(k) * alpha * self.f[k - 2] } else { 0.0 };
            let shift = if k == 2 { alpha / 2f64.sqrt() } else { 0.0 };
            dg[k] = -kf * a * (lower + alpha * self.f[k] + self.g[k] + shift);
        }
        (df, dg)
    }
}

/// Exact solution of the truncated system at time `t` via the mode propagators.
pub fn fp_evolve(field: &DriftField, state: &FpState, t: f64) -> Result<FpState> {
    let (a, alpha) = field.checked_at(state.z)?;
    let n = state.k_max;
    let f: Vec<f64> = (0..=n).map(|k| (-(k as f64) * a * t).exp() * state.f[k]).collect();
    let mut g = vec![0.0; n + 1];
    let shift2 = alpha / 2f64.sqrt();
    for k in 1..=n {
        let prop = expm(&fp_mode_system(field, k, state.z)?, -t)?;
        g[k] = match k {
            1 => prop.mul_vec(&[C64::new(state.f[1], 0.0), C64::new(state.g[1], 0.0)])[1].re,
            2 => prop.mul_vec(&[C64::new(state.f[2], 0.0), C64::new(state.g[2] + shift2, 0.0)])[1].re - shift2,
            _ => {
                let y = [state.f[k - 2], state.f[k], state.g[k]].map(|v| C64::new(v, 0.0));
                prop.mul_vec(&y)[2].re
            }
        };
    }
    Ok(FpState { f, g, ..state.clone() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpTheoremReport {
    pub constants: FpConstants,
    pub a0: f64,
    pub alpha_bound: f64,
    pub initial_sup: f64,
    /// `sup_z sum_{K < k <= 2K}` of the squared initial coefficients.
    pub tail_estimate: f64,
    pub max_ratio: f64,
    pub holds: bool,
    pub rows: Vec<TheoremRow>,
}

/// Checks `||Phi(t) - Phi_inf||^2 <= C (1 + t^2) e^{-2 a0 t} sup_z ||Phi(0) - Phi_inf||^2`
/// on the grids for shifted-Gaussian initial data.
pub fn fp_theorem_check(
    field: &DriftField,
    init: &ShiftedGaussian,
    z_grid: &[f64],
    t_grid: &[f64],
    k_max: usize,
) -> Result<FpTheoremReport> {
    if z_grid.is_empty() || t_grid.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidArgument("need a nonempty z grid and nonnegative times".into()));
    }
    let constants = fp_constants(field);
    let initial: Vec<FpState> =
        z_grid.par_iter().map(|&z| FpState::shifted_gaussian(field, z, k_max, init)).collect::<Result<_>>()?;
    let initial_sup = initial.iter().map(|s| s.deviation_norm_sq(field)).fold(0.0, f64::max);
    let tail_estimate = z_grid
        .par_iter()
        .map(|&z| {
            let wide = FpState::shifted_gaussian(field, z, 2 * k_max, init)?;
            Ok(((k_max + 1)..=(2 * k_max)).map(|k| wide.f[k].powi(2) + wide.g[k].powi(2)).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let c = constants.global;
    let rows: Vec<TheoremRow> = initial
        .par_iter()
        .map(|s0| {
            t_grid
                .iter()
                .map(|&t| {
                    let norm_sq = fp_evolve(field, s0, t)?.deviation_norm_sq(field);
                    let bound = c * (1.0 + t * t) * (-2.0 * field.a0 * t).exp() * initial_sup;
                    Ok(TheoremRow { z: s0.z, t, norm_sq, bound, ratio: norm_sq / bound })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(FpTheoremReport {
        constants,
        a0: field.a0,
        alpha_bound: field.alpha_bound(),
        initial_sup,
        tail_estimate,
        max_ratio,
        holds: max_ratio <= 1.0 + crate::oracle::DOMINANCE_SLACK,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionField {
    pub d: ScalarFn,
    pub d0: f64,
    pub sup_dd: f64,
}

impl DiffusionField {
    pub fn from_grid(d: ScalarFn, z_grid: &[f64]) -> Result<Self> {
        d.validate()?;
        if z_grid.is_empty() || z_grid.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidArgument("z grid must be finite and nonempty".into()));
        }
        let (mut d0, mut l) = (f64::INFINITY, 0.0f64);
        for &z in z_grid {
            let (v, dd, _) = d.eval3(z);
            d0 = d0.min(v);
            l = l.max(dd.abs());
        }
        if !(d0 > 0.0) {
            return Err(Error::InvalidArgument(format!("diffusion infimum must be positive, got {d0}")));
        }
        Ok(DiffusionField { d, d0, sup_dd: l })
    }

    /// `(d(z), beta(z) = d_z/d)`.
    pub fn at(&self, z: f64) -> (f64, f64) {
        let (v, dd, _) = self.d.eval3(z);
        (v, dd / v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionMode {
    /// `A_k` in `(u_{k-2}, v_k)' = -A_k (u_{k-2}, v_k)`.
    pub matrix: CMatrix,
    pub eigenvalues: [f64; 2],
    /// Bound on the deviation from `(u_{k-2}, v_k)^infinity`; for `k = 2` the
    /// mass `u_0 = 1` is fixed and only `v_2` moves.
    pub envelope: DecayEnvelope,
}

/// `A_k = [[k-2, 0], [-beta sqrt((k-1)k), k]]`, from `v_t = L v + d_z u_xx`.
pub fn fp_diffusion_variant(field: &DiffusionField, k: usize, z: f64) -> Result<DiffusionMode> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("expected k >= 2, got {k}")));
    }
    let (_, beta) = field.at(z);
    let kf = k as f64;
    let matrix = CMatrix::from_real_rows(&[&[kf - 2.0, 0.0], &[-beta * ((kf - 1.0) * kf).sqrt(), kf]])?;
    let envelope = if k == 2 {
        DecayEnvelope { c_const: 1.0, mu: 2.0, m: 1 }
    } else {
        decay_constant(&LyapunovForm::new(JordanStructure::compute(&matrix, DEFAULT_REL_TOL)?)?)?
    };
    Ok(DiffusionMode { matrix, eigenvalues: [kf - 2.0, kf], envelope })
}

/// `max(1, sup_z max_{3 <= k <= K} C_k)` over the grid: the constant of `C e^{-t}`.
pub fn fp_diffusion_constant(field: &DiffusionField, z_grid: &[f64], k_max: usize) -> Result<f64> {
    let per_z = z_grid
        .par_iter()
        .map(|&z| {
            (3..=k_max).try_fold(1.0f64, |acc, k| Ok(acc.max(fp_diffusion_variant(field, k, z)?.envelope.c_const)))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_z.into_iter().fold(1.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionState {
    pub k_max: usize,
    pub z: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl DiffusionState {
    /// `u = h_0(x - c(z))` for diffusion `d(z)`, `v = u_z`, projected onto `h^_0..=h^_K`.
    pub fn shifted_gaussian(field: &DiffusionField, z: f64, k_max: usize, shift: &ScalarFn) -> Result<Self> {
        let (d, dd, _) = field.d.eval3(z);
        let (c, dc, _) = shift.eval3(z);
        let basis = HermiteBasis::new(k_max, 1.0 / d)?;
        let u = |x: f64| (-(x - c).powi(2) / (2.0 * d)).exp() / (2.0 * PI * d).sqrt();
        let u_coeffs = basis.project(u);
        let mut v_coeffs = basis.project(|x| {
            let y = x - c;
            u(x) * (-dd / (2.0 * d) + dd * y * y / (2.0 * d * d) + y * dc / d)
        });
        if (u_coeffs[0] - 1.0).abs() > MASS_TOL || v_coeffs[0].abs() > MASS_TOL {
            return Err(Error::InvalidArgument("initial data violates the mass constraint".into()));
        }
        v_coeffs[0] = 0.0;
        Ok(DiffusionState { k_max, z, u: u_coeffs, v: v_coeffs })
    }

    /// Squared distance to `u^inf = h^_0`, `v^inf = beta/sqrt 2 h^_2`.
    pub fn deviation_norm_sq(&self, field: &DiffusionField) -> f64 {
        let (_, beta) = field.at(self.z);
        let mut s = 0.0;
        for k in 0..=self.k_max {
            let du = if k == 0 { self.u[0] - 1.0 } else { self.u[k] };
            let dv = if k == 2 { self.v[2] - beta / 2f64.sqrt() } else { self.v[k] };
            s += du * du + dv * dv;
        }
        s
    }
}

pub fn fp_diffusion_evolve(field: &DiffusionField, state: &DiffusionState, t: f64) -> Result<DiffusionState> {
    let n = state.k_max;
    let u: Vec<f64> = (0..=n).map(|k| (-(k as f64) * t).exp() * state.u[k]).collect();
    let mut v = state.v.clone();
    if n >= 1 {
        v[1] = (-t).exp() * state.v[1];
    }
    for k in 2..=n {
        let m = fp_diffusion_variant(field, k, state.z)?;
        let y = [C64::new(state.u[k - 2], 0.0), C64::new(state.v[k], 0.0)];
        v[k] = expm(&m.matrix, -t)?.mul_vec(&y)[1].re;
    }
    Ok(DiffusionState { u, v, ..state.clone() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionReport {
    pub constant: f64,
    pub initial_sup: f64,
    pub max_ratio: f64,
    pub holds: bool,
    pub rows: Vec<TheoremRow>,
}

/// Checks `||(u, v)(t) - (u, v)^inf||^2 <= C e^{-t} sup_z ||(u, v)(0) - (u, v)^inf||^2`.
pub fn fp_diffusion_check(
    field: &DiffusionField,
    shift: &ScalarFn,
    z_grid: &[f64],
    t_grid: &[f64],
    k_max: usize,
) -> Result<DiffusionReport> {
    if z_grid.is_empty() || t_grid.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidArgument("need a nonempty z grid and nonnegative times".into()));
    }
    let constant = fp_diffusion_constant(field, z_grid, k_max)?;
    let initial: Vec<DiffusionState> =
        z_grid.par_iter().map(|&z| DiffusionState::shifted_gaussian(field, z, k_max, shift)).collect::<Result<_>>()?;
    let initial_sup = initial.iter().map(|s| s.deviation_norm_sq(field)).fold(0.0, f64::max);
    let rows: Vec<TheoremRow> = initial
        .par_iter()
        .map(|s0| {
            t_grid
                .iter()
                .map(|&t| {
                    let norm_sq = fp_diffusion_evolve(field, s0, t)?.deviation_norm_sq(field);
                    let bound = constant * (-t).exp() * initial_sup;
                    Ok(TheoremRow { z: s0.z, t, norm_sq, bound, ratio: norm_sq / bound })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(DiffusionReport {
        constant,
        initial_sup,
        max_ratio,
        holds: max_ratio <= 1.0 + crate::oracle::DOMINANCE_SLACK,
        rows,
    })
}

/// Condition number of `P~_3(0)`.
pub fn fp_k3_ratio(alpha: f64) -> Result<f64> {
    Ok(hermitian_extremes(&fp_p_tilde3(alpha))?.ratio())
}
