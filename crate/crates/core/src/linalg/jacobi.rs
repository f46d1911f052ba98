//! Cyclic Jacobi methods: Hermitian eigen-decomposition and one-sided SVD.

use super::{CMatrix, C64, ONE, ZERO};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, `vectors[j]` belongs to `values[j]`.
    pub vectors: Vec<Vec<C64>>,
}

/// Singular value decomposition of a column list, singular values descending.
#[derive(Clone, Debug)]
pub struct Svd {
    pub sigma: Vec<f64>,
    /// Left singular vectors; zero vectors where `sigma == 0`.
    pub u: Vec<Vec<C64>>,
    /// Right singular vectors (orthonormal, length = number of columns).
    pub v: Vec<Vec<C64>>,
}

/// Unitary acting on coordinates (p, q) that annihilates the (p, q) entry of
/// the Hermitian 2x2 `[[app, apq], [conj(apq), aqq]]`.
///
/// Returned as `(c, s, e)` with `U = [[c, s], [-s e, c e]]`.
fn rotation(app: f64, aqq: f64, apq: C64) -> (f64, f64, C64) {
    let r = apq.norm();
    let e = apq.conj() / r;
    let tau = (aqq - app) / (2.0 * r);
    let t = if tau.abs() > 1e150 {
        0.5 / tau
    } else {
        let sgn = if tau >= 0.0 { 1.0 } else { -1.0 };
        sgn / (tau.abs() + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    (c, t * c, e)
}

/// `X <- X U` restricted to columns p, q of a column list.
fn rotate_columns(cols: &mut [Vec<C64>], p: usize, q: usize, (c, s, e): (f64, f64, C64)) {
    let (lo, hi) = cols.split_at_mut(q);
    let (xp, xq) = (&mut lo[p], &mut hi[0]);
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (ap, aq) = (*a, *b);
        *a = ap * c - aq * (s * e);
        *b = ap * s + aq * (c * e);
    }
}

pub fn hermitian_eigen(p: &CMatrix) -> Result<HermitianEigen> {
    let n = p.dim();
    // Work on the Hermitian part so tiny asymmetries cannot stall convergence.
    let mut a = CMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = (p[(i, j)] + p[(j, i)].conj()) * 0.5;
        }
    }
    let frob = a.frobenius_norm();
    let mut vecs: Vec<Vec<C64>> = (0..n)
        .map(|j| {
            let mut e = vec![ZERO; n];
            e[j] = ONE;
            e
        })
        .collect();
    let mut converged = n <= 1 || frob == 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for pi in 0..n {
            for qi in pi + 1..n {
                let apq = a[(pi, qi)];
                let app = a[(pi, pi)].re;
                let aqq = a[(qi, qi)].re;
                let r = apq.norm();
                if r <= f64::EPSILON * 0.5 * (app * aqq).abs().sqrt() || r <= 1e-18 * frob {
                    continue;
                }
                rotated = true;
                let rot = rotation(app, aqq, apq);
                let (c, s, e) = rot;
                // columns: A <- A U
                for i in 0..n {
                    let (x, y) = (a[(i, pi)], a[(i, qi)]);
                    a[(i, pi)] = x * c - y * (s * e);
                    a[(i, qi)] = x * s + y * (c * e);
                }
                // rows: A <- U^H A
                let ec = e.conj();
                for j in 0..n {
                    let (x, y) = (a[(pi, j)], a[(qi, j)]);
                    a[(pi, j)] = x * c - y * (s * ec);
                    a[(qi, j)] = x * s + y * (c * ec);
                }
                a[(pi, qi)] = ZERO;
                a[(qi, pi)] = ZERO;
                a[(pi, pi)] = C64::new(a[(pi, pi)].re, 0.0);
                a[(qi, qi)] = C64::new(a[(qi, qi)].re, 0.0);
                rotate_columns(&mut vecs, pi, qi, rot);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::NoConvergence("Hermitian Jacobi eigensolver"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    Ok(HermitianEigen {
        values: order.iter().map(|&i| a[(i, i)].re).collect(),
        vectors: order.iter().map(|&i| vecs[i].clone()).collect(),
    })
}

/// One-sided (Hestenes) Jacobi SVD of the `rows x cols.len()` matrix with the given columns.
pub fn svd_columns(cols: &[Vec<C64>], rows: usize) -> Result<Svd> {
    let n = cols.len();
    if cols.iter().any(|c| c.len() != rows) {
        return Err(Error::DimensionMismatch("SVD columns have unequal length".into()));
    }
    let mut w: Vec<Vec<C64>> = cols.to_vec();
    let mut v: Vec<Vec<C64>> = (0..n)
        .map(|j| {
            let mut e = vec![ZERO; n];
            e[j] = ONE;
            e
        })
        .collect();
    let mut converged = n <= 1;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let app: f64 = w[p].iter().map(|z| z.norm_sqr()).sum();
                let aqq: f64 = w[q].iter().map(|z| z.norm_sqr()).sum();
                if app == 0.0 || aqq == 0.0 {
                    continue;
                }
                let apq: C64 = w[p].iter().zip(&w[q]).map(|(a, b)| a.conj() * b).sum();
                if apq.norm() <= f64::EPSILON * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let rot = rotation(app, aqq, apq);
                rotate_columns(&mut w, p, q, rot);
                rotate_columns(&mut v, p, q, rot);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::NoConvergence("one-sided Jacobi SVD"));
    }
    let sig: Vec<f64> = w.iter().map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sig[j].total_cmp(&sig[i]));
    let u = order
        .iter()
        .map(|&j| if sig[j] > 0.0 { w[j].iter().map(|z| z / sig[j]).collect() } else { vec![ZERO; rows] })
        .collect();
    Ok(Svd { sigma: order.iter().map(|&j| sig[j]).collect(), u, v: order.iter().map(|&j| v[j].clone()).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{inner, norm};

    fn test_matrix(n: usize, seed: u64) -> CMatrix {
        // small deterministic LCG so these unit tests need no RNG crate
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let data = (0..n * n).map(|_| C64::new(next(), next())).collect();
        CMatrix::new(n, data).unwrap()
    }

    #[test]
    fn hermitian_eigen_reconstructs() {
        for seed in 1..6 {
            let a = test_matrix(5, seed);
            let h = &a + &a.adjoint();
            let eig = hermitian_eigen(&h).unwrap();
            for (lam, v) in eig.values.iter().zip(&eig.vectors) {
                let hv = h.mul_vec(v);
                let res: f64 = hv.iter().zip(v).map(|(a, b)| (a - b * lam).norm_sqr()).sum::<f64>().sqrt();
                assert!(res < 1e-13, "residual {res}");
                assert!((norm(v) - 1.0).abs() < 1e-14);
            }
            for i in 0..5 {
                for j in 0..i {
                    assert!(inner(&eig.vectors[i], &eig.vectors[j]).norm() < 1e-13);
                }
            }
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn svd_reconstructs() {
        for seed in 10..15 {
            let a = test_matrix(4, seed);
            let svd = svd_columns(&a.columns(), 4).unwrap();
            for j in 0..4 {
                let av = a.mul_vec(&svd.v[j]);
                let res: f64 =
                    av.iter().zip(&svd.u[j]).map(|(x, u)| (x - u * svd.sigma[j]).norm_sqr()).sum::<f64>().sqrt();
                assert!(res < 1e-13);
            }
            assert!(svd.sigma.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_of_rank_deficient_columns() {
        let x = vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(2.0, 0.0)];
        let cols = vec![x.clone(), x.iter().map(|z| z * 2.0).collect()];
        let svd = svd_columns(&cols, 3).unwrap();
        assert!(svd.sigma[1] < 1e-15 * svd.sigma[0]);
    }
}
