//! Rescaled Hermite functions `h_k(x) = sqrt(s) h~_k(x sqrt(s))` with
//! `h~_k(y) = He_k(y) e^{-y^2/2} / sqrt(2 pi k!)`, orthonormal in `L^2(1/h_0)`,
//! and Gauss-Hermite quadrature for projections onto them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, CMatrix, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermiteBasis {
    pub order: usize,
    /// `a(z)` for the drift model, `1/d(z)` for the diffusion model.
    pub scale: f64,
    /// Probabilists' Gauss-Hermite rule for the weight `e^{-y^2/2}`.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Normalized probabilists' polynomials `He_j(y)/sqrt(j!)` for `j = 0..=n`.
pub fn normalized_he(n: usize, y: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n >= 1 {
        p.push(y);
    }
    for j in 1..n {
        let next = (y * p[j] - (j as f64).sqrt() * p[j - 1]) / ((j + 1) as f64).sqrt();
        p.push(next);
    }
    p
}

/// `n`-point rule: Golub-Welsch nodes from the Jacobi matrix, Newton-polished,
/// weights `sqrt(2 pi) / (n p_{n-1}(y_i)^2)`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("quadrature needs at least one node".into()));
    }
    let mut jac = CMatrix::zeros(n);
    for j in 1..n {
        let b = C64::new((j as f64).sqrt(), 0.0);
        jac[(j - 1, j)] = b;
        jac[(j, j - 1)] = b;
    }
    let mut nodes = hermitian_eigen(&jac)?.values;
    for y in nodes.iter_mut() {
        for _ in 0..4 {
            let p = normalized_he(n, *y);
            let dp = (n as f64).sqrt() * p[n - 1];
            if dp == 0.0 {
                break;
            }
            *y -= p[n] / dp;
        }
    }
    let weights = nodes
        .iter()
        .map(|&y| {
            let p = normalized_he(n - 1, y);
            (2.0 * PI).sqrt() / (n as f64 * p[n - 1] * p[n - 1])
        })
        .collect();
    Ok((nodes, weights))
}

impl HermiteBasis {
    /// Basis up to `order` with a `2 order + 8` node rule.
    pub fn new(order: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("Hermite scale must be positive, got {scale}")));
        }
        let (nodes, weights) = gauss_hermite(2 * order + 8)?;
        Ok(HermiteBasis { order, scale, nodes, weights })
    }

    fn check(&self, k: usize) -> Result<()> {
        if k > self.order {
            return Err(Error::InvalidArgument(format!("Hermite index {k} exceeds order {}", self.order)));
        }
        Ok(())
    }

    /// `h_0, ..., h_n` at `x` (`n` may exceed `order` for identity checks).
    pub fn eval_all(&self, n: usize, x: f64) -> Vec<f64> {
        let y = x * self.scale.sqrt();
        let g = (self.scale / (2.0 * PI)).sqrt() * (-0.5 * y * y).exp();
        normalized_he(n, y).into_iter().map(|p| p * g).collect()
    }

    pub fn eval(&self, k: usize, x: f64) -> Result<f64> {
        self.check(k)?;
        Ok(self.eval_all(k, x)[k])
    }

    /// `d/dx h_k = -sqrt(s (k+1)) h_{k+1}`.
    pub fn derivative(&self, k: usize, x: f64) -> Result<f64> {
        self.check(k)?;
        let h = self.eval_all(k + 1, x);
        Ok(-(self.scale * (k + 1) as f64).sqrt() * h[k + 1])
    }

    /// `sum_k c_k h_k(x)`.
    pub fn synthesize(&self, coeffs: &[f64], x: f64) -> f64 {
        if coeffs.is_empty() {
            return 0.0;
        }
        self.eval_all(coeffs.len() - 1, x).iter().zip(coeffs).map(|(h, c)| h * c).sum()
    }

    /// `<phi, h_k>_{L^2(1/h_0)} = int phi(x) p_k(sqrt(s) x) dx` for `k = 0..=order`.
    pub fn project(&self, phi: impl Fn(f64) -> f64) -> Vec<f64> {
        let rs = self.scale.sqrt();
        let mut out = vec![0.0; self.order + 1];
        for (&y, &w) in self.nodes.iter().zip(&self.weights) {
            let f = w * (0.5 * y * y).exp() * phi(y / rs) / rs;
            if f == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(normalized_he(self.order, y)) {
                *o += f * p;
            }
        }
        out
    }

    /// Gram matrix `<h_j, h_k>_{L^2(1/h_0)}` by quadrature.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let n = self.order;
        let mut g = vec![vec![0.0; n + 1]; n + 1];
        for (&y, &w) in self.nodes.iter().zip(&self.weights) {
            let p = normalized_he(n, y);
            for j in 0..=n {
                for k in 0..=n {
                    g[j][k] += w * p[j] * p[k] / (2.0 * PI).sqrt();
                }
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::linspace;
    use proptest::prelude::*;

    #[test]
    fn h0_is_gaussian_steady_state() {
        let a = 1.7;
        let b = HermiteBasis::new(4, a).unwrap();
        for x in linspace(-3.0, 3.0, 13) {
            let expect = (a / (2.0 * PI)).sqrt() * (-0.5 * a * x * x).exp();
            assert!((b.eval(0, x).unwrap() - expect).abs() < 1e-15);
        }
        assert!(b.eval(5, 0.0).is_err());
    }

    #[test]
    fn small_rule_matches_moments() {
        let (y, w) = gauss_hermite(5).unwrap();
        let m = |p: i32| y.iter().zip(&w).map(|(y, w)| w * y.powi(p)).sum::<f64>() / (2.0 * PI).sqrt();
        assert!((m(0) - 1.0).abs() < 1e-14);
        assert!((m(2) - 1.0).abs() < 1e-13);
        assert!((m(4) - 3.0).abs() < 1e-12);
        assert!((m(8) - 105.0).abs() < 1e-10);
        assert!(m(3).abs() < 1e-13);
    }

    #[test]
    fn orthonormal_to_order_40() {
        let b = HermiteBasis::new(40, 0.8).unwrap();
        let g = b.gram();
        for j in 0..=40 {
            for k in 0..=40 {
                let target = if j == k { 1.0 } else { 0.0 };
                assert!((g[j][k] - target).abs() < 1e-8, "({j},{k}) {}", g[j][k]);
            }
        }
    }

    #[test]
    fn derivative_matches_differences() {
        let b = HermiteBasis::new(8, 1.3).unwrap();
        let h = 1e-5;
        for k in 0..=8 {
            for x in [-1.7, -0.2, 0.4, 2.1] {
                let fd = (b.eval(k, x + h).unwrap() - b.eval(k, x - h).unwrap()) / (2.0 * h);
                assert!((fd - b.derivative(k, x).unwrap()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn projection_of_shifted_gaussian() {
        // f(x) = h_0(x - c) has coefficients (c sqrt(a))^k / sqrt(k!)
        let (a, c) = (1.4, 0.7);
        let b = HermiteBasis::new(30, a).unwrap();
        let coeffs = b.project(|x| (a / (2.0 * PI)).sqrt() * (-0.5 * a * (x - c).powi(2)).exp());
        let mut expect = 1.0;
        for (k, got) in coeffs.iter().enumerate() {
            if k > 0 {
                expect *= c * a.sqrt() / (k as f64).sqrt();
            }
            assert!((got - expect).abs() < 1e-11, "k={k}");
        }
    }

    fn bare(order: usize, scale: f64) -> HermiteBasis {
        HermiteBasis { order, scale, nodes: vec![], weights: vec![] }
    }

    proptest! {
        #[test]
        fn multiplication_by_x(a in 0.2f64..4.0, x in -4.0f64..4.0, k in 0usize..20) {
            let b = bare(k + 2, a);
            let h = b.eval_all(k + 2, x);
            let lower = if k > 0 { (k as f64).sqrt() * h[k - 1] } else { 0.0 };
            let rhs = (((k + 1) as f64).sqrt() * h[k + 1] + lower) / a.sqrt();
            prop_assert!((x * h[k] - rhs).abs() < 1e-10);
        }

        #[test]
        fn x_times_derivative(a in 0.2f64..4.0, x in -4.0f64..4.0, k in 0usize..20) {
            let b = bare(k + 2, a);
            let h = b.eval_all(k + 2, x);
            let k1 = (k + 1) as f64;
            let rhs = -k1.sqrt() * ((k1 + 1.0).sqrt() * h[k + 2] + k1.sqrt() * h[k]);
            prop_assert!((x * b.derivative(k, x).unwrap() - rhs).abs() < 1e-10);
        }
    }
}
