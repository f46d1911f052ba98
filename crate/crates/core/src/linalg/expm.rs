//! Matrix exponential by scaling and squaring with a truncated Taylor series.

use super::{check_finite, spectral_norm, CMatrix, C64};
use crate::error::Result;

const TAYLOR_MAX_TERMS: usize = 40;

/// `e^{At} = e^{log_scale} * matrix`, a factorization that survives exponent underflow.
#[derive(Clone, Debug)]
pub struct ScaledExp {
    pub matrix: CMatrix,
    pub log_scale: C64,
}

impl ScaledExp {
    pub fn to_matrix(&self) -> CMatrix {
        self.matrix.scale(self.log_scale.exp())
    }

    /// Natural log of the spectral norm of `e^{At}`.
    pub fn log_spectral_norm(&self) -> Result<f64> {
        Ok(spectral_norm(&self.matrix)?.ln() + self.log_scale.re)
    }
}

/// `e^{At}` split as a scalar exponential factor times a well-scaled matrix.
pub fn expm_scaled(a: &CMatrix, t: f64) -> Result<ScaledExp> {
    check_finite(a)?;
    if !t.is_finite() {
        return Err(crate::error::Error::NonFinite("time"));
    }
    let n = a.dim();
    let at = a.scale_real(t);
    let mean = at.trace() / n as f64;
    let max_re = at.diag().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    // Shift by the trace mean unless that would leave a large positive exponent in the remainder.
    let shift_re = if max_re - mean.re <= 40.0 { mean.re } else { max_re };
    let shift = C64::new(shift_re, mean.im);
    let b = at.shift(shift);

    let nrm = b.norm_one();
    let squarings = if nrm > 0.5 { (nrm / 0.5).log2().ceil() as i32 } else { 0 };
    let bs = b.scale_real(0.5f64.powi(squarings));

    let mut sum = CMatrix::identity(n);
    let mut term = CMatrix::identity(n);
    for k in 1..=TAYLOR_MAX_TERMS {
        term = term.matmul(&bs).scale_real(1.0 / k as f64);
        sum = &sum + &term;
        if k >= 3 && term.norm_one() <= 1e-18 * sum.norm_one() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum);
    }
    Ok(ScaledExp { matrix: sum, log_scale: shift })
}

/// `e^{At}`.
pub fn expm(a: &CMatrix, t: f64) -> Result<CMatrix> {
    Ok(expm_scaled(a, t)?.to_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_is_identity() {
        let a = CMatrix::from_real_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let e = expm(&a, 0.0).unwrap();
        assert!((&e - &CMatrix::identity(2)).max_abs() < 1e-15);
    }

    #[test]
    fn diagonal_case() {
        let a = CMatrix::from_real_rows(&[&[-1.0, 0.0], &[0.0, -2.0]]).unwrap();
        let e = expm(&a, 1.0).unwrap();
        assert!((e[(0, 0)].re - (-1.0f64).exp()).abs() < 1e-15);
        assert!((e[(1, 1)].re - (-2.0f64).exp()).abs() < 1e-16);
        assert_eq!(e[(0, 1)], C64::new(0.0, 0.0));
    }

    #[test]
    fn shear_propagator_closed_form() {
        for &eps in &[0.1, 1.0, 10.0] {
            let c = CMatrix::from_real_rows(&[&[1.0, eps], &[0.0, 1.0]]).unwrap();
            for i in 0..40 {
                let t = 20.0 * i as f64 / 39.0;
                let e = expm(&c, -t).unwrap();
                let got = spectral_norm(&e).unwrap().powi(2);
                let s = eps * t;
                let want = (-2.0 * t).exp() * (1.0 + s * s / 2.0 + (s * s + s.powi(4) / 4.0).sqrt());
                assert!(((got - want) / want).abs() < 1e-12, "eps={eps} t={t}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn rotation_generator() {
        let a = CMatrix::from_real_rows(&[&[0.0, -1.0], &[1.0, 0.0]]).unwrap();
        let t = 2.3f64;
        let e = expm(&a, t).unwrap();
        assert!((e[(0, 0)].re - t.cos()).abs() < 1e-14);
        assert!((e[(1, 0)].re - t.sin()).abs() < 1e-14);
    }

    #[test]
    fn log_domain_survives_underflow() {
        let a = CMatrix::from_real_rows(&[&[-2.0, 1.0], &[0.0, -2.0]]).unwrap();
        let s = expm_scaled(&a, 400.0).unwrap();
        let log_norm = s.log_spectral_norm().unwrap();
        // |e^{At}| = e^{-800} |[[1, 400], [0, 1]]|
        let want =
            -800.0 + spectral_norm(&CMatrix::from_real_rows(&[&[1.0, 400.0], &[0.0, 1.0]]).unwrap()).unwrap().ln();
        assert!((log_norm - want).abs() < 1e-10);
    }
}
