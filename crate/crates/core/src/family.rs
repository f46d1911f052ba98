//! The 2x2 parameter family `C(z) = [[mu(z), mu'(z)], [0, mu(z)]]` and its
//! uniform-in-`z` propagator envelopes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarFn;
use crate::linalg::{CMatrix, C64, ZERO};
use crate::oracle::log_propagator_sq;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamFamily {
    pub mu: ScalarFn,
    pub mu_min: f64,
    pub z_grid: Vec<f64>,
}

impl ParamFamily {
    /// Checks `mu >= mu_min > 0` on the grid and the derivative against central differences.
    pub fn new(mu: ScalarFn, mu_min: f64, z_grid: Vec<f64>) -> Result<Self> {
        mu.validate()?;
        if !(mu_min > 0.0) {
            return Err(Error::InvalidArgument(format!("mu_min must be positive, got {mu_min}")));
        }
        if z_grid.is_empty() || z_grid.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidArgument("z grid must be finite and nonempty".into()));
        }
        for &z in &z_grid {
            let (v, d1, _) = mu.eval3(z);
            if v < mu_min * (1.0 - 1e-12) {
                return Err(Error::InvalidArgument(format!("mu({z}) = {v} below mu_min = {mu_min}")));
            }
            let h = 1e-5 * (1.0 + z.abs());
            let fd = (mu.value(z + h) - mu.value(z - h)) / (2.0 * h);
            if (fd - d1).abs() > 1e-5 * (1.0 + d1.abs()) {
                return Err(Error::InvalidArgument(format!("derivative of mu inconsistent at z = {z}")));
            }
        }
        Ok(ParamFamily { mu, mu_min, z_grid })
    }

    /// `mu(z) = mu_min + alpha z^2`.
    pub fn quadratic(alpha: f64, mu_min: f64, z_grid: Vec<f64>) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument("alpha must be positive".into()));
        }
        Self::new(ScalarFn::Poly { coeffs: vec![mu_min, 0.0, alpha] }, mu_min, z_grid)
    }

    /// `mu(z) = mu0 + alpha e^{beta z}`, infimum `mu0`.
    pub fn exponential(alpha: f64, beta: f64, mu0: f64, z_grid: Vec<f64>) -> Result<Self> {
        check_exponential(alpha, beta)?;
        Self::new(ScalarFn::Exp { offset: mu0, amp: alpha, rate: beta }, mu0, z_grid)
    }

    pub fn matrix(&self, z: f64) -> CMatrix {
        family_matrix(&self.mu, z)
    }
}

fn check_exponential(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0) || beta == 0.0 || !(beta.abs() < 2.0) {
        return Err(Error::InvalidArgument(format!("need alpha > 0 and 0 < |beta| < 2, got {alpha}, {beta}")));
    }
    Ok(())
}

pub fn family_matrix(mu: &ScalarFn, z: f64) -> CMatrix {
    let (v, d1, _) = mu.eval3(z);
    CMatrix::from_rows(&[vec![C64::new(v, 0.0), C64::new(d1, 0.0)], vec![ZERO, C64::new(v, 0.0)]])
        .expect("2x2 family matrix")
}

/// `f_1(z, t) = (1 + 4 alpha^2 z^2 t^2) e^{-2 alpha z^2 t}`.
pub fn f1(alpha: f64, z: f64, t: f64) -> f64 {
    (1.0 + 4.0 * alpha * alpha * z * z * t * t) * (-2.0 * alpha * z * z * t).exp()
}

/// `sup_z f_1(z, t)`: 1 for `alpha t <= 1/2`, else `2 alpha t e^{-(2 alpha t - 1)/(2 alpha t)}`.
pub fn sup_f1(alpha: f64, t: f64) -> f64 {
    let s = alpha * t;
    if s <= 0.5 {
        1.0
    } else {
        2.0 * s * (-(2.0 * s - 1.0) / (2.0 * s)).exp()
    }
}

/// `2 e^{-2 mu_min t} sup_z f_1(z, t)`.
pub fn uniform_envelope_quadratic(alpha: f64, mu_min: f64, t: f64) -> f64 {
    2.0 * (-2.0 * mu_min * t).exp() * sup_f1(alpha, t)
}

/// `2 e^{-2 mu0 t}` for `mu(z) = mu0 + alpha e^{beta z}`, `0 < |beta| < 2`.
pub fn uniform_envelope_exponential(alpha: f64, beta: f64, mu0: f64, t: f64) -> Result<f64> {
    check_exponential(alpha, beta)?;
    Ok(2.0 * (-2.0 * mu0 * t).exp())
}

/// Pointwise maximum over the family's grid of `|e^{-C(z) t}|_2^2`; a lower bound
/// for the true supremum over `z`.
pub fn grid_sup_envelope(fam: &ParamFamily, t_grid: &[f64]) -> Result<Vec<f64>> {
    t_grid
        .par_iter()
        .map(|&t| {
            let mut best = f64::NEG_INFINITY;
            for &z in &fam.z_grid {
                best = best.max(log_propagator_sq(&fam.matrix(z), t)?);
            }
            Ok(best.exp())
        })
        .collect()
}

/// Inserts all midpoints, so the refined grid contains the original one.
pub fn refine_grid(grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * grid.len());
    for w in grid.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    if let Some(last) = grid.last() {
        out.push(*last);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::linspace;
    use proptest::prelude::*;

    fn grid_max_f1(alpha: f64, t: f64) -> f64 {
        // f_1 depends on z only through s = alpha z^2 t; coarse grid in s, then a
        // fine grid around the coarse maximizer
        let g = |s: f64| (1.0 + 4.0 * alpha * t * s) * (-2.0 * s).exp();
        let s_max = 4.0 + 2.0 * alpha * t;
        let n = 20_000;
        let h = s_max / n as f64;
        let best = (0..=n).max_by(|&i, &j| g(i as f64 * h).total_cmp(&g(j as f64 * h))).unwrap();
        let lo = (best as f64 - 1.0).max(0.0) * h;
        linspace(lo, lo + 2.0 * h, 20_001).into_iter().map(g).fold(0.0, f64::max)
    }

    #[test]
    fn sup_f1_examples() {
        assert_eq!(sup_f1(1.0, 0.5), 1.0);
        assert_eq!(sup_f1(3.0, 0.0), 1.0);
        assert!((sup_f1(1.0, 1.0) - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
        let z_grid = linspace(-5.0, 5.0, 200_001);
        let brute = z_grid.iter().map(|&z| f1(1.0, z, 1.0)).fold(0.0, f64::max);
        assert!((brute - sup_f1(1.0, 1.0)).abs() < 1e-6);
    }

    #[test]
    fn family_matrix_examples() {
        let c = family_matrix(&ScalarFn::constant(2.0), 0.3);
        assert_eq!(c, CMatrix::identity(2).scale_real(2.0));
        let fam = ParamFamily::quadratic(0.5, 1.0, vec![0.0, 1.0]).unwrap();
        let c = fam.matrix(1.0);
        assert_eq!(c, CMatrix::from_real_rows(&[&[1.5, 1.0], &[0.0, 1.5]]).unwrap());
        assert!(fam.matrix(0.0).is_upper_triangular() && fam.matrix(0.0).is_lower_triangular());
    }

    #[test]
    fn quadratic_envelope_dominates_grid() {
        let (alpha, mu_min) = (0.8, 0.5);
        let fam = ParamFamily::quadratic(alpha, mu_min, linspace(-4.0, 4.0, 81)).unwrap();
        let ts = linspace(0.0, 12.0, 61);
        let sup = grid_sup_envelope(&fam, &ts).unwrap();
        for (t, s) in ts.iter().zip(&sup) {
            assert!(*s <= uniform_envelope_quadratic(alpha, mu_min, *t) * (1.0 + 1e-9));
        }
        assert_eq!(uniform_envelope_quadratic(1.0, 1.0, 0.4), 2.0 * (-0.8f64).exp());
    }

    #[test]
    fn quadratic_envelope_grows_linearly() {
        let alpha = 1.0;
        let g = |t: f64| sup_f1(alpha, t);
        let slope = (g(1e4) - g(1e3)) / 9e3;
        assert!((slope / (2.0 * alpha / std::f64::consts::E) - 1.0).abs() < 0.05);
    }

    #[test]
    fn exponential_envelope() {
        let fam = ParamFamily::exponential(1.0, 1.0, 1.0, linspace(-6.0, 3.0, 91)).unwrap();
        let ts = linspace(0.0, 10.0, 51);
        let sup = grid_sup_envelope(&fam, &ts).unwrap();
        for (t, s) in ts.iter().zip(&sup) {
            assert!(*s <= uniform_envelope_exponential(1.0, 1.0, 1.0, *t).unwrap() * (1.0 + 1e-9));
        }
        assert_eq!(uniform_envelope_exponential(1.0, 1.0, 1.0, 0.0).unwrap(), 2.0);
        assert!(uniform_envelope_exponential(1.0, 2.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn constant_family_is_scalar_decay() {
        let fam = ParamFamily::new(ScalarFn::constant(0.7), 0.7, vec![-1.0, 0.0, 1.0]).unwrap();
        let sup = grid_sup_envelope(&fam, &[0.0, 1.0, 3.0]).unwrap();
        for (t, s) in [0.0f64, 1.0, 3.0].iter().zip(&sup) {
            assert!((s - (-1.4 * t).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn family_validation() {
        assert!(ParamFamily::new(ScalarFn::constant(0.5), 1.0, vec![0.0]).is_err());
        assert!(ParamFamily::quadratic(1.0, 0.0, vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn sup_f1_matches_grid(alpha in 0.1f64..10.0, t in 0.1f64..10.0) {
            prop_assert!((sup_f1(alpha, t) - grid_max_f1(alpha, t)).abs() < 1e-6);
        }

        #[test]
        fn refinement_never_decreases(alpha in 0.1f64..3.0, t in 0.0f64..10.0, n in 2usize..20) {
            let coarse = ParamFamily::quadratic(alpha, 0.5, linspace(-3.0, 3.0, n)).unwrap();
            let fine = ParamFamily::quadratic(alpha, 0.5, refine_grid(&coarse.z_grid)).unwrap();
            let a = grid_sup_envelope(&coarse, &[t]).unwrap()[0];
            let b = grid_sup_envelope(&fine, &[t]).unwrap()[0];
            prop_assert!(b >= a);
        }
    }
}
