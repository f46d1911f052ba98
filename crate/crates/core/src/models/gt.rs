//! Goldstein-Taylor (two-velocity BGK) model with uncertain relaxation `sigma(z)`
//! and its first order sensitivity, in the variables
//! `y_k = (f+ + f-, f+ - f-, g+ + g-, g+ - g-)_k`.
//!
//! Fourier convention: `f(x) = sum_k f_k e^{ikx}`, unit mass means `y_{0,1} = 1`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarFn;
use crate::jordan::{JordanBlock, JordanStructure, DEFAULT_REL_TOL};
use crate::linalg::{expm, hermitian_extremes, CMatrix, C64, I, ONE, ZERO};
use crate::lyapunov::{c_m_constant, decay_constant, DecayEnvelope, LyapunovForm};
use crate::models::{ModeEnvelope, TheoremRow};
use crate::oracle::linspace;

/// Tail factor applied to the `|k| -> infinity` limit `2 I` of `P~_k`.
pub const TAIL_MARGIN: f64 = 1.1;

/// `|sigma_z|` below which a mode is treated as non-defective.
pub const DEFECT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationField {
    pub sigma: ScalarFn,
    pub sigma0: f64,
    pub sigma1: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

impl RelaxationField {
    /// Bounds estimated on `z_grid`; requires `0 < sigma0 <= sigma1 < 2`.
    pub fn from_grid(sigma: ScalarFn, z_grid: &[f64]) -> Result<Self> {
        sigma.validate()?;
        if z_grid.is_empty() || z_grid.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidArgument("z grid must be finite and nonempty".into()));
        }
        let (mut lo, mut hi, mut l) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
        for &z in z_grid {
            let (s, ds, _) = sigma.eval3(z);
            lo = lo.min(s);
            hi = hi.max(s);
            l = l.max(ds.abs());
        }
        Self::new(sigma, lo, hi, l)
    }

    pub fn new(sigma: ScalarFn, sigma0: f64, sigma1: f64, l: f64) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0 <= sigma1 && sigma1 < 2.0) {
            return Err(Error::InvalidArgument(format!("need 0 < sigma0 <= sigma1 < 2, got [{sigma0}, {sigma1}]")));
        }
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::InvalidArgument(format!("L must be finite and nonnegative, got {l}")));
        }
        Ok(RelaxationField { sigma, sigma0, sigma1, l })
    }

    fn at(&self, z: f64) -> (f64, f64) {
        let (s, ds, _) = self.sigma.eval3(z);
        (s, ds)
    }
}

/// `lambda_{+-,k} = sigma/2 +- i sqrt(k^2 - sigma^2/4)` for `k != 0`.
pub fn gt_eigenvalues(k: i64, sigma: f64) -> [C64; 2] {
    let w = ((k * k) as f64 - 0.25 * sigma * sigma).sqrt();
    [C64::new(0.5 * sigma, w), C64::new(0.5 * sigma, -w)]
}

fn matrix_at(k: i64, sigma: f64, sigma_z: f64) -> CMatrix {
    let ik = C64::new(0.0, k as f64);
    let s = C64::new(sigma, 0.0);
    CMatrix::from_rows(&[
        vec![ZERO, ik, ZERO, ZERO],
        vec![ik, s, ZERO, ZERO],
        vec![ZERO, ZERO, ZERO, ik],
        vec![ZERO, C64::new(sigma_z, 0.0), ik, s],
    ])
    .expect("4x4")
}

/// The 4x4 mode matrix `D_k(z)`, block lower-triangular with `A_k = [[0, ik], [ik, sigma]]`.
pub fn gt_mode_matrix(field: &RelaxationField, k: i64, z: f64) -> CMatrix {
    let (s, ds) = field.at(z);
    matrix_at(k, s, ds)
}

/// Eigenvector `(-i nu / k, 1, 0, 0)` of `D_k^H` for `conj(nu)`, `nu` an eigenvalue of `D_k`.
fn v0(k: i64, nu: C64) -> Vec<C64> {
    vec![-I * nu / k as f64, ONE, ZERO, ZERO]
}

fn v0_lower(k: i64, nu: C64) -> Vec<C64> {
    vec![ZERO, ZERO, -I * nu / k as f64, ONE]
}

/// Generalized eigenvector with unit coupling, `D_k^H v1 = conj(nu) v1 + v0`.
fn v1(k: i64, nu: C64, sigma_z: f64) -> Vec<C64> {
    let kf = k as f64;
    let q = ONE - nu * nu / (kf * kf);
    vec![I * nu * nu / (2.0 * kf.powi(3)), nu / (2.0 * kf * kf), -I * nu * q / (sigma_z * kf), q / sigma_z]
}

/// `(sigma_z / 2) v1`, continuous through `sigma_z = 0`.
fn v1_scaled(k: i64, nu: C64, sigma_z: f64) -> Vec<C64> {
    let kf = k as f64;
    let q = ONE - nu * nu / (kf * kf);
    vec![
        I * nu * nu * (sigma_z / (4.0 * kf.powi(3))),
        nu * (sigma_z / (4.0 * kf * kf)),
        -I * nu * q / (2.0 * kf),
        q * 0.5,
    ]
}

/// Analytic Jordan chains of `D_k^H` in the unit-coupling gauge: four eigenvectors
/// when `sigma_z = 0`, otherwise two chains of length two.
pub fn gt_chains(field: &RelaxationField, k: i64, z: f64) -> Result<Vec<JordanBlock>> {
    if k == 0 {
        return Err(Error::InvalidArgument("mode k = 0 has its own chain, see gt_mode_envelope".into()));
    }
    let (s, ds) = field.at(z);
    let eigs = gt_eigenvalues(k, s);
    if ds.abs() <= DEFECT_TOL {
        let mut blocks = Vec::with_capacity(4);
        for nu in eigs {
            blocks.push(JordanBlock::new(nu, vec![v0(k, nu)])?);
            blocks.push(JordanBlock::new(nu, vec![v0_lower(k, nu)])?);
        }
        return Ok(blocks);
    }
    eigs.iter().map(|&nu| JordanBlock::new(nu, vec![v0(k, nu), v1(k, nu, ds)])).collect()
}

/// Chains in the gauge used for the Lyapunov form: `(v0, sgn(sigma_z) (sigma_z/2) v1)`
/// with coupling `|sigma_z|/2`, so unit weights reproduce `beta = (1, sigma_z^2/4)`.
fn scaled_blocks(k: i64, sigma: f64, sigma_z: f64) -> Result<Vec<JordanBlock>> {
    let sign = if sigma_z < 0.0 { -1.0 } else { 1.0 };
    gt_eigenvalues(k, sigma)
        .iter()
        .map(|&nu| {
            let u = v1_scaled(k, nu, sigma_z).into_iter().map(|c| c * sign).collect();
            JordanBlock::with_coupling(nu, vec![v0(k, nu), u], 0.5 * sigma_z.abs())
        })
        .collect()
}

/// `P~_k(sigma, 0)` for `sigma_z = 0`: sum of the four eigenvector projections.
pub fn gt_p_case1(k: i64, sigma: f64) -> CMatrix {
    let mut p = CMatrix::zeros(4);
    for nu in gt_eigenvalues(k, sigma) {
        p = &p + &CMatrix::outer(&v0(k, nu), &v0(k, nu));
        p = &p + &CMatrix::outer(&v0_lower(k, nu), &v0_lower(k, nu));
    }
    p
}

/// `P~_k(sigma, sigma_z, 0) = sum_{+-} v0 v0^H + (sigma_z^2/4) v1 v1^H`, extended
/// continuously to `sigma_z = 0`.
pub fn gt_p_tilde(k: i64, sigma: f64, sigma_z: f64) -> CMatrix {
    let mut p = CMatrix::zeros(4);
    for nu in gt_eigenvalues(k, sigma) {
        let u = v1_scaled(k, nu, sigma_z);
        p = &p + &CMatrix::outer(&v0(k, nu), &v0(k, nu));
        p = &p + &CMatrix::outer(&u, &u);
    }
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtPMatrix {
    pub p: CMatrix,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub defective: bool,
}

/// `P_k(z, 0)` with the weight choice of the defective or non-defective case.
pub fn gt_p_matrix(field: &RelaxationField, k: i64, z: f64) -> Result<GtPMatrix> {
    if k == 0 {
        return Err(Error::InvalidArgument("P_k is defined for k != 0".into()));
    }
    let (s, ds) = field.at(z);
    let defective = ds.abs() > DEFECT_TOL;
    let p = if defective { gt_p_tilde(k, s, ds) } else { gt_p_case1(k, s) };
    let e = hermitian_extremes(&p)?;
    Ok(GtPMatrix { p, lambda_min: e.lambda_min, lambda_max: e.lambda_max, defective })
}

/// Box grid `[sigma0, sigma1] x [-L, L]` for the uniform constant sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub n_sigma: usize,
    pub n_sigma_z: usize,
}

impl Default for ParamBox {
    fn default() -> Self {
        ParamBox { n_sigma: 21, n_sigma_z: 21 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtUniformConstant {
    pub k_max: usize,
    pub margin: f64,
    /// Extremes of `P~_k` over `1 <= k <= k_max` and the box (defective weights).
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Extremes of the non-defective `P~_k` over `1 <= k <= k_max` and `sigma`.
    pub lambda_min_nd: f64,
    pub lambda_max_nd: f64,
    /// Grid values widened by the tail margin around the limit 2.
    pub lambda_min_uniform: f64,
    pub lambda_max_uniform: f64,
    pub lambda_min_nd_uniform: f64,
    pub lambda_max_nd_uniform: f64,
    /// `12 max{2, 1 + L^2}` for the zeroth mode.
    pub c0: f64,
    /// `12 (lambda_max / lambda_min) max{2, 1 + L^2/4}`.
    pub c_defective: f64,
    /// `lambda_max / lambda_min` of the non-defective construction.
    pub c_nondefective: f64,
    /// `max{c0, c_defective, 2 c_nondefective}`.
    pub c_global: f64,
}

/// Uniform-in-`(k, z)` constants from grid extremes. Modes `k > k_max` are covered by
/// widening toward the limit `2 I` by `TAIL_MARGIN`, a heuristic rather than a proof.
pub fn gt_uniform_constant(field: &RelaxationField, k_max: usize, grid: ParamBox) -> Result<GtUniformConstant> {
    if k_max == 0 || grid.n_sigma == 0 || grid.n_sigma_z == 0 {
        return Err(Error::InvalidArgument("need k_max >= 1 and a nonempty parameter box".into()));
    }
    let sigmas = linspace(field.sigma0, field.sigma1, grid.n_sigma);
    let slopes = linspace(-field.l, field.l, grid.n_sigma_z);
    if sigmas.iter().any(|&s| !(s > 0.0 && s < 2.0)) {
        return Err(Error::InvalidArgument("sigma grid leaves (0, 2)".into()));
    }
    let fold = |acc: (f64, f64), e: (f64, f64)| (acc.0.min(e.0), acc.1.max(e.1));
    let init = (f64::INFINITY, f64::NEG_INFINITY);
    let extremes = |p: &CMatrix| hermitian_extremes(p).map(|e| (e.lambda_min, e.lambda_max));
    let def = (1..=k_max as i64)
        .into_par_iter()
        .map(|k| {
            let mut acc = init;
            for &s in &sigmas {
                for &sz in &slopes {
                    acc = fold(acc, extremes(&gt_p_tilde(k, s, sz))?);
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(init, fold);
    let nd = (1..=k_max as i64)
        .into_par_iter()
        .map(|k| sigmas.iter().try_fold(init, |acc, &s| Ok::<_, Error>(fold(acc, extremes(&gt_p_case1(k, s))?))))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(init, fold);
    let widen = |(lo, hi): (f64, f64)| (lo.min(2.0 / TAIL_MARGIN), hi.max(2.0 * TAIL_MARGIN));
    let (dlo, dhi) = widen(def);
    let (nlo, nhi) = widen(nd);
    let l2 = field.l * field.l;
    let c0 = 12.0 * (1.0 + l2).max(2.0);
    let c_defective = 2.0 * c_m_constant(2) * dhi / dlo * (1.0 + 0.25 * l2).max(2.0);
    let c_nondefective = nhi / nlo;
    Ok(GtUniformConstant {
        k_max,
        margin: TAIL_MARGIN,
        lambda_min: def.0,
        lambda_max: def.1,
        lambda_min_nd: nd.0,
        lambda_max_nd: nd.1,
        lambda_min_uniform: dlo,
        lambda_max_uniform: dhi,
        lambda_min_nd_uniform: nlo,
        lambda_max_nd_uniform: nhi,
        c0,
        c_defective,
        c_nondefective,
        c_global: c0.max(c_defective).max(2.0 * c_nondefective),
    })
}

/// Per-mode bound on `|y_k(t) - y_k_inf|^2 / |y_k(0) - y_k_inf|^2`.
///
/// `k = 0`: bound for the `(y_2, y_4)` block (the other two components are conserved),
/// `12 max{2, 1 + sigma_z^2} (1 + t^2) e^{-2 sigma t}`, or `e^{-2 sigma t}` if `sigma_z = 0`.
/// `k != 0`: `C_k (1 + t^2) e^{-sigma t}` (defective) or `2 C_k e^{-sigma t}`.
pub fn gt_mode_envelope(field: &RelaxationField, k: i64, z: f64) -> Result<ModeEnvelope> {
    let (s, ds) = field.at(z);
    let envelope = if k == 0 {
        if ds.abs() <= DEFECT_TOL {
            DecayEnvelope { c_const: 1.0, mu: s, m: 1 }
        } else {
            decay_constant(&LyapunovForm::with_weights(
                JordanStructure::from_blocks(
                    vec![JordanBlock::with_coupling(
                        C64::new(s, 0.0),
                        vec![vec![ONE, ZERO], vec![ZERO, C64::new(ds.signum(), 0.0)]],
                        ds.abs(),
                    )?],
                    DEFAULT_REL_TOL,
                )?,
                &[vec![1.0, 1.0]],
            )?)?
        }
    } else if ds.abs() <= DEFECT_TOL {
        let blocks = gt_chains(field, k, z)?;
        let weights = vec![vec![1.0]; blocks.len()];
        let env = decay_constant(&LyapunovForm::with_weights(
            JordanStructure::from_blocks(blocks, DEFAULT_REL_TOL)?,
            &weights,
        )?)?;
        DecayEnvelope { c_const: 2.0 * env.c_const, ..env }
    } else {
        let structure = JordanStructure::from_blocks(scaled_blocks(k, s, ds)?, DEFAULT_REL_TOL)?;
        decay_constant(&LyapunovForm::with_weights(structure, &[vec![1.0, 1.0], vec![1.0, 1.0]])?)?
    };
    Ok(ModeEnvelope { envelope, time_scale: 1.0 })
}

/// Restriction of `D_0` to the `(y_2, y_4)` components.
pub fn gt_zero_mode_block(field: &RelaxationField, z: f64) -> CMatrix {
    let (s, ds) = field.at(z);
    CMatrix::from_real_rows(&[&[s, 0.0], &[ds, s]]).expect("2x2")
}

/// The Lyapunov form behind the `k != 0` envelope, for `P(t)` checks.
pub fn gt_lyapunov_form(field: &RelaxationField, k: i64, z: f64) -> Result<LyapunovForm> {
    let (s, ds) = field.at(z);
    if k == 0 {
        return Err(Error::InvalidArgument("k = 0 is handled on the (y_2, y_4) block".into()));
    }
    if ds.abs() <= DEFECT_TOL {
        let blocks = gt_chains(field, k, z)?;
        let weights = vec![vec![1.0]; blocks.len()];
        LyapunovForm::with_weights(JordanStructure::from_blocks(blocks, DEFAULT_REL_TOL)?, &weights)
    } else {
        let structure = JordanStructure::from_blocks(scaled_blocks(k, s, ds)?, DEFAULT_REL_TOL)?;
        LyapunovForm::with_weights(structure, &[vec![1.0, 1.0], vec![1.0, 1.0]])
    }
}

/// Initial data `f+- = (1 +- asymmetry)/2 * periodic Gaussian` centred at
/// `center +- slope z`, with `g = df/dz`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBump {
    pub width: f64,
    pub center: f64,
    pub slope: f64,
    pub asymmetry: f64,
}

impl Default for GtBump {
    fn default() -> Self {
        GtBump { width: 0.6, center: PI, slope: 0.4, asymmetry: 0.3 }
    }
}

impl GtBump {
    pub fn mode(&self, k: i64, z: f64) -> Vec<C64> {
        let kf = k as f64;
        let g = (-0.5 * kf * kf * self.width * self.width).exp();
        let fp = C64::from_polar(0.5 * (1.0 + self.asymmetry) * g, -kf * (self.center + self.slope * z));
        let fm = C64::from_polar(0.5 * (1.0 - self.asymmetry) * g, -kf * (self.center - self.slope * z));
        let gp = C64::new(0.0, -kf * self.slope) * fp;
        let gm = C64::new(0.0, kf * self.slope) * fm;
        vec![fp + fm, fp - fm, gp + gm, gp - gm]
    }
}

/// Modes `-K..=K` of `y`, index `k + K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtState {
    #[serde(rename = "K")]
    pub k_max: usize,
    pub z: f64,
    pub y: Vec<Vec<C64>>,
}

impl GtState {
    pub fn from_bump(k_max: usize, z: f64, bump: &GtBump) -> Self {
        GtState { k_max, z, y: (-(k_max as i64)..=k_max as i64).map(|k| bump.mode(k, z)).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.len() != 2 * self.k_max + 1 || self.y.iter().any(|v| v.len() != 4) {
            return Err(Error::Shape { dim: 2 * self.k_max + 1, len: self.y.len() });
        }
        let y0 = &self.y[self.k_max];
        if (y0[0] - ONE).norm() > 1e-8 || y0[2].norm() > 1e-8 {
            return Err(Error::InvalidArgument(format!("not normalized: total f mass {} and g mass {}", y0[0], y0[2])));
        }
        Ok(())
    }

    pub fn mode(&self, k: i64) -> &[C64] {
        &self.y[(k + self.k_max as i64) as usize]
    }

    /// `||Phi - Phi_inf||^2 = (1/4 pi) sum_k |y_k - y_k_inf|^2`.
    pub fn deviation_norm_sq(&self) -> f64 {
        let mut s = 0.0;
        for (i, v) in self.y.iter().enumerate() {
            for (j, c) in v.iter().enumerate() {
                let inf = if i == self.k_max && j == 0 { ONE } else { ZERO };
                s += (c - inf).norm_sqr();
            }
        }
        s / (4.0 * PI)
    }
}

/// Exact mode-wise evolution by the matrix exponential of `-D_k t`.
pub fn gt_evolve(field: &RelaxationField, state: &GtState, t: f64) -> Result<GtState> {
    state.validate()?;
    let k_max = state.k_max as i64;
    let y = (-k_max..=k_max)
        .into_par_iter()
        .map(|k| {
            let y0 = state.mode(k);
            if t == 0.0 {
                return Ok(y0.to_vec());
            }
            Ok(expm(&gt_mode_matrix(field, k, state.z), -t)?.mul_vec(y0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GtState { y, ..state.clone() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtTheoremReport {
    pub constants: GtUniformConstant,
    pub sigma0: f64,
    pub initial_sup: f64,
    pub max_ratio: f64,
    pub holds: bool,
    pub rows: Vec<TheoremRow>,
}

/// Checks `sup_z ||Phi(t) - Phi_inf||^2 <= C (1 + t^2) e^{-sigma0 t} sup_z ||Phi(0) - Phi_inf||^2`
/// on the grids with `C = c_global`.
pub fn gt_theorem_check(
    field: &RelaxationField,
    bump: &GtBump,
    z_grid: &[f64],
    t_grid: &[f64],
    k_max: usize,
    grid: ParamBox,
) -> Result<GtTheoremReport> {
    if z_grid.is_empty() || t_grid.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidArgument("need a nonempty z grid and nonnegative times".into()));
    }
    let constants = gt_uniform_constant(field, 64.max(k_max), grid)?;
    let initial: Vec<GtState> = z_grid.iter().map(|&z| GtState::from_bump(k_max, z, bump)).collect();
    let initial_sup = initial.iter().map(GtState::deviation_norm_sq).fold(0.0, f64::max);
    let c = constants.c_global;
    let rows: Vec<TheoremRow> = initial
        .par_iter()
        .map(|s0| {
            t_grid
                .iter()
                .map(|&t| {
                    let norm_sq = gt_evolve(field, s0, t)?.deviation_norm_sq();
                    let bound = c * (1.0 + t * t) * (-field.sigma0 * t).exp() * initial_sup;
                    Ok(TheoremRow { z: s0.z, t, norm_sq, bound, ratio: norm_sq / bound })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(GtTheoremReport {
        constants,
        sigma0: field.sigma0,
        initial_sup,
        max_ratio,
        holds: max_ratio <= 1.0 + crate::oracle::DOMINANCE_SLACK,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jordan::verify_chain;
    use crate::linalg::{eigenvalues, quad_form, spectral_norm};
    use crate::oracle::check_dominance;
    use proptest::prelude::*;

    fn tanh_field() -> RelaxationField {
        RelaxationField::from_grid(ScalarFn::Tanh { offset: 1.0, amp: 0.5, scale: 1.0 }, &linspace(-40.0, 40.0, 801))
            .unwrap()
    }

    #[test]
    fn field_validation() {
        assert!(RelaxationField::new(ScalarFn::constant(1.0), 0.0, 1.0, 0.0).is_err());
        assert!(RelaxationField::new(ScalarFn::constant(1.0), 1.0, 2.0, 0.0).is_err());
        let f = tanh_field();
        assert!((f.sigma0 - 0.5).abs() < 1e-12 && (f.sigma1 - 1.5).abs() < 1e-12);
        assert!((f.l - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_mode_spectrum() {
        let f = tanh_field();
        let d = gt_mode_matrix(&f, 0, 0.4);
        let s = f.sigma.value(0.4);
        let mut e: Vec<f64> = eigenvalues(&d).unwrap().iter().map(|c| c.re).collect();
        e.sort_by(f64::total_cmp);
        for (a, b) in e.iter().zip([0.0, 0.0, s, s]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn eigenvalue_formula() {
        let [p, m] = gt_eigenvalues(1, 1.0);
        assert!((p - C64::new(0.5, 3f64.sqrt() / 2.0)).norm() < 1e-15);
        assert!((m - C64::new(0.5, -3f64.sqrt() / 2.0)).norm() < 1e-15);
        let f = RelaxationField::new(ScalarFn::constant(1.3), 1.3, 1.3, 0.0).unwrap();
        for k in [1i64, -2, 5] {
            let mut e = eigenvalues(&gt_mode_matrix(&f, k, 0.0)).unwrap();
            e.sort_by(|a, b| a.im.total_cmp(&b.im));
            let [p, m] = gt_eigenvalues(k, 1.3);
            for (a, b) in e.iter().zip([m, m, p, p]) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn block_diagonal_without_slope() {
        let f = RelaxationField::new(ScalarFn::constant(1.0), 1.0, 1.0, 0.0).unwrap();
        let d = gt_mode_matrix(&f, 3, 0.0);
        assert_eq!(d[(3, 1)], ZERO);
        assert_eq!(gt_chains(&f, 3, 0.0).unwrap().len(), 4);
        assert!(!gt_p_matrix(&f, 3, 0.0).unwrap().defective);
    }

    #[test]
    fn chains_verify() {
        let f = tanh_field();
        for (k, z) in [(1i64, 0.3), (-2, -0.7), (5, 1.1), (1, 0.0)] {
            let blocks = gt_chains(&f, k, z).unwrap();
            let s = JordanStructure::from_blocks(blocks, DEFAULT_REL_TOL).unwrap();
            assert!(verify_chain(&gt_mode_matrix(&f, k, z), &s) < 1e-9);
            let form = gt_lyapunov_form(&f, k, z).unwrap();
            assert!(verify_chain(&gt_mode_matrix(&f, k, z), &form.structure) < 1e-9);
        }
        let c = RelaxationField::new(ScalarFn::constant(1.0), 1.0, 1.0, 0.0).unwrap();
        let s = JordanStructure::from_blocks(gt_chains(&c, 2, 0.0).unwrap(), DEFAULT_REL_TOL).unwrap();
        assert!(verify_chain(&gt_mode_matrix(&c, 2, 0.0), &s) < 1e-12);
    }

    #[test]
    fn p_matches_scaled_form() {
        let f = tanh_field();
        let (k, z) = (3i64, 0.2);
        let (s, ds) = f.at(z);
        let form = gt_lyapunov_form(&f, k, z).unwrap();
        let p = gt_p_matrix(&f, k, z).unwrap();
        assert!((&form.build_p(0.0).unwrap() - &p.p).max_abs() < 1e-12);
        // weights (1, sigma_z^2/4) on the unit-coupling chain
        let mut q = CMatrix::zeros(4);
        for b in gt_chains(&f, k, z).unwrap() {
            q = &q + &CMatrix::outer(&b.chain[0], &b.chain[0]);
            q = &q + &CMatrix::outer(&b.chain[1], &b.chain[1]).scale_real(ds * ds / 4.0);
        }
        assert!((&q - &gt_p_tilde(k, s, ds)).max_abs() < 1e-12);
    }

    #[test]
    fn p_tends_to_twice_identity() {
        let f = tanh_field();
        let mut prev = f64::INFINITY;
        for k in [4i64, 8, 16, 32, 64] {
            let mut worst: f64 = 0.0;
            for s in linspace(f.sigma0, f.sigma1, 11) {
                for sz in linspace(-f.l, f.l, 11) {
                    let d = &gt_p_tilde(k, s, sz) - &CMatrix::identity(4).scale_real(2.0);
                    worst = worst.max(spectral_norm(&d).unwrap());
                }
            }
            assert!(worst < prev);
            prev = worst;
        }
        assert!(prev < 0.15);
    }

    #[test]
    fn slope_limit_is_continuous_but_not_case1() {
        let (k, s) = (2i64, 1.2);
        let near = gt_p_tilde(k, s, 1e-9);
        let at = gt_p_tilde(k, s, 0.0);
        assert!((&near - &at).max_abs() < 1e-8);
        // the lower eigenvectors enter with weight 1 - sigma^2/(4 k^2) instead of 1
        let mut expected = CMatrix::zeros(4);
        let w = 1.0 - s * s / (4.0 * (k * k) as f64);
        for nu in gt_eigenvalues(k, s) {
            expected = &expected + &CMatrix::outer(&v0(k, nu), &v0(k, nu));
            expected = &expected + &CMatrix::outer(&v0_lower(k, nu), &v0_lower(k, nu)).scale_real(w);
        }
        assert!((&at - &expected).max_abs() < 1e-12);
        assert!((&at - &gt_p_case1(k, s)).max_abs() > 1e-3);
    }

    #[test]
    fn negative_modes_are_unitarily_similar() {
        let sign = CMatrix::from_diag(&[-ONE, ONE, -ONE, ONE]);
        for (k, s, sz) in [(1i64, 0.7, 0.3), (3, 1.5, -0.4)] {
            let p = gt_p_tilde(k, s, sz);
            let q = gt_p_tilde(-k, s, sz);
            assert!((&sign.matmul(&p).matmul(&sign) - &q).max_abs() < 1e-12);
        }
    }

    #[test]
    fn positive_definite_on_box() {
        let f = tanh_field();
        let u = gt_uniform_constant(&f, 64, ParamBox::default()).unwrap();
        assert!(u.lambda_min > 0.0 && u.lambda_min_nd > 0.0);
        assert!(u.c_global.is_finite() && u.c_global >= u.c0);
        assert!(u.lambda_min_uniform <= u.lambda_min && u.lambda_max_uniform >= u.lambda_max);
    }

    #[test]
    fn constant_sigma_uniform_constant() {
        let f = RelaxationField::new(ScalarFn::constant(1.0), 1.0, 1.0, 0.0).unwrap();
        let u = gt_uniform_constant(&f, 16, ParamBox { n_sigma: 1, n_sigma_z: 1 }).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for k in 1..=16 {
            let e = hermitian_extremes(&gt_p_case1(k, 1.0)).unwrap();
            lo = lo.min(e.lambda_min);
            hi = hi.max(e.lambda_max);
        }
        assert_eq!(u.lambda_min_nd, lo);
        assert_eq!(u.lambda_max_nd, hi);
        assert_eq!(u.c0, 24.0);
    }

    #[test]
    fn grid_enlargement_monotone() {
        let f = tanh_field();
        let small = gt_uniform_constant(&f, 8, ParamBox { n_sigma: 5, n_sigma_z: 5 }).unwrap();
        let big = gt_uniform_constant(&f, 8, ParamBox { n_sigma: 9, n_sigma_z: 9 }).unwrap();
        assert!(big.lambda_max >= small.lambda_max && big.lambda_min <= small.lambda_min);
        let more_k = gt_uniform_constant(&f, 16, ParamBox { n_sigma: 5, n_sigma_z: 5 }).unwrap();
        assert!(more_k.lambda_max >= small.lambda_max && more_k.lambda_min <= small.lambda_min);
    }

    #[test]
    fn zero_mode_constant() {
        let f = RelaxationField::new(ScalarFn::Poly { coeffs: vec![1.0, 1.0] }, 0.5, 1.5, 1.0).unwrap();
        let e = gt_mode_envelope(&f, 0, 0.0).unwrap();
        assert!((e.envelope.c_const - 24.0).abs() < 1e-12);
        assert_eq!(e.envelope.m, 2);
        assert_eq!(e.envelope.mu, 1.0);
    }

    #[test]
    fn gap_is_half_sigma() {
        let f = tanh_field();
        for k in [1i64, 2, 7, -3] {
            for z in [-1.0, 0.5] {
                assert!((gt_mode_envelope(&f, k, z).unwrap().envelope.mu - 0.5 * f.sigma.value(z)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mode_envelopes_dominate() {
        let f = tanh_field();
        let ts = linspace(0.0, 30.0, 61);
        for z in [-2.0, 0.0, 0.7] {
            let b = gt_zero_mode_block(&f, z);
            assert!(check_dominance(&b, &gt_mode_envelope(&f, 0, z).unwrap(), &ts).unwrap().dominated);
            for k in [1i64, -1, 2, 5, 12] {
                let d = gt_mode_matrix(&f, k, z);
                let r = check_dominance(&d, &gt_mode_envelope(&f, k, z).unwrap(), &ts).unwrap();
                assert!(r.dominated, "k={k} z={z} ratio={}", r.max_ratio);
            }
        }
        let c = RelaxationField::new(ScalarFn::constant(0.8), 0.8, 0.8, 0.0).unwrap();
        for k in [1i64, 3] {
            let r = check_dominance(&gt_mode_matrix(&c, k, 0.0), &gt_mode_envelope(&c, k, 0.0).unwrap(), &ts).unwrap();
            assert!(r.dominated);
        }
    }

    #[test]
    fn mass_conservation() {
        let f = tanh_field();
        let s0 = GtState::from_bump(8, 0.3, &GtBump::default());
        let s1 = gt_evolve(&f, &s0, 7.5).unwrap();
        assert!((s1.mode(0)[0] - ONE).norm() < 1e-14);
        assert!(s1.mode(0)[2].norm() < 1e-14);
        assert!(s1.mode(0)[1].norm() < s0.mode(0)[1].norm());
        assert_eq!(gt_evolve(&f, &s0, 0.0).unwrap(), s0);
        let mut bad = s0.clone();
        bad.y[8][2] = ONE;
        assert!(gt_evolve(&f, &bad, 1.0).is_err());
    }

    #[test]
    fn theorem_constant_sigma() {
        let f = RelaxationField::new(ScalarFn::constant(1.0), 1.0, 1.0, 0.0).unwrap();
        let bump = GtBump { slope: 0.0, ..GtBump::default() };
        let r =
            gt_theorem_check(&f, &bump, &[0.0], &linspace(0.0, 10.0, 21), 16, ParamBox { n_sigma: 1, n_sigma_z: 1 })
                .unwrap();
        assert!(r.holds);
        for row in &r.rows {
            assert!(row.norm_sq <= (-row.t).exp() * r.initial_sup * (1.0 + 1e-9) * r.constants.c_global);
        }
    }

    #[test]
    fn theorem_tanh_fixture() {
        let f = tanh_field();
        let r = gt_theorem_check(
            &f,
            &GtBump::default(),
            &linspace(-3.0, 3.0, 13),
            &linspace(0.0, 20.0, 21),
            32,
            ParamBox::default(),
        )
        .unwrap();
        assert!(r.holds, "max ratio {}", r.max_ratio);
    }

    proptest! {
        #[test]
        fn chain_residual_random(k in 1i64..30, z in -3.0f64..3.0, neg in proptest::bool::ANY) {
            let f = tanh_field();
            let k = if neg { -k } else { k };
            let s = JordanStructure::from_blocks(gt_chains(&f, k, z).unwrap(), DEFAULT_REL_TOL).unwrap();
            prop_assert!(verify_chain(&gt_mode_matrix(&f, k, z), &s) < 1e-9);
        }

        #[test]
        fn p_norm_decay(k in 1i64..10, z in -2.0f64..2.0, t in 0.0f64..10.0, re in -1.0f64..1.0, im in -1.0f64..1.0) {
            let f = tanh_field();
            let form = gt_lyapunov_form(&f, k, z).unwrap();
            let y0 = vec![C64::new(re, im), C64::new(0.3, re), C64::new(im, 0.5), C64::new(-0.2, 0.1)];
            let y = expm(&gt_mode_matrix(&f, k, z), -t).unwrap().mul_vec(&y0);
            let lhs = quad_form(&form.build_p(t).unwrap(), &y);
            let rhs = (-f.sigma.value(z) * t).exp() * quad_form(&form.build_p(0.0).unwrap(), &y0);
            prop_assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-15);
        }
    }
}
