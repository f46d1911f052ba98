//! Scalar coefficient functions of the uncertainty variable `z` with first and
//! second derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarFn {
    Const {
        value: f64,
    },
    /// Ascending coefficients `c_0 + c_1 z + ...`.
    Poly {
        coeffs: Vec<f64>,
    },
    /// `offset + amp tanh(scale z)`.
    Tanh {
        offset: f64,
        amp: f64,
        scale: f64,
    },
    /// `offset + amp sin(freq z)`.
    Sin {
        offset: f64,
        amp: f64,
        freq: f64,
    },
    /// `offset + amp e^{rate z}`.
    Exp {
        offset: f64,
        amp: f64,
        rate: f64,
    },
    /// `offset + amp z^2 / (1 + z^2)`.
    RationalSquare {
        offset: f64,
        amp: f64,
    },
    /// Piecewise cubic Hermite interpolation of `(z, value, derivative)` samples,
    /// constant extrapolation of the end values outside the table.
    Tabulated {
        z: Vec<f64>,
        value: Vec<f64>,
        deriv: Vec<f64>,
    },
}

impl ScalarFn {
    pub fn constant(value: f64) -> Self {
        ScalarFn::Const { value }
    }

    pub fn validate(&self) -> Result<()> {
        if let ScalarFn::Tabulated { z, value, deriv } = self {
            if z.len() < 2 || z.len() != value.len() || z.len() != deriv.len() {
                return Err(Error::InvalidArgument("tabulated function needs >= 2 aligned samples".into()));
            }
            if z.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidArgument("tabulated z values must increase strictly".into()));
            }
        }
        Ok(())
    }

    /// `(f, f', f'')` at `z`.
    pub fn eval3(&self, z: f64) -> (f64, f64, f64) {
        match self {
            ScalarFn::Const { value } => (*value, 0.0, 0.0),
            ScalarFn::Poly { coeffs } => {
                let (mut f, mut d1, mut d2) = (0.0, 0.0, 0.0);
                for c in coeffs.iter().rev() {
                    d2 = d2 * z + 2.0 * d1;
                    d1 = d1 * z + f;
                    f = f * z + c;
                }
                (f, d1, d2)
            }
            ScalarFn::Tanh { offset, amp, scale } => {
                let th = (scale * z).tanh();
                let sech2 = 1.0 - th * th;
                (offset + amp * th, amp * scale * sech2, -2.0 * amp * scale * scale * th * sech2)
            }
            ScalarFn::Sin { offset, amp, freq } => {
                let (s, c) = (freq * z).sin_cos();
                (offset + amp * s, amp * freq * c, -amp * freq * freq * s)
            }
            ScalarFn::Exp { offset, amp, rate } => {
                let e = amp * (rate * z).exp();
                (offset + e, rate * e, rate * rate * e)
            }
            ScalarFn::RationalSquare { offset, amp } => {
                let q = 1.0 + z * z;
                (offset + amp * z * z / q, 2.0 * amp * z / (q * q), amp * (2.0 - 6.0 * z * z) / (q * q * q))
            }
            ScalarFn::Tabulated { z: zs, value, deriv } => tabulated(zs, value, deriv, z),
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        self.eval3(z).0
    }

    pub fn d1(&self, z: f64) -> f64 {
        self.eval3(z).1
    }

    pub fn d2(&self, z: f64) -> f64 {
        self.eval3(z).2
    }
}

fn tabulated(zs: &[f64], value: &[f64], deriv: &[f64], z: f64) -> (f64, f64, f64) {
    let n = zs.len();
    if z <= zs[0] {
        return (value[0], 0.0, 0.0);
    }
    if z >= zs[n - 1] {
        return (value[n - 1], 0.0, 0.0);
    }
    let i = zs.partition_point(|&x| x <= z) - 1;
    let h = zs[i + 1] - zs[i];
    let s = (z - zs[i]) / h;
    let (y0, y1, m0, m1) = (value[i], value[i + 1], deriv[i] * h, deriv[i + 1] * h);
    let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
    let h10 = s.powi(3) - 2.0 * s * s + s;
    let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
    let h11 = s.powi(3) - s * s;
    let f = h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1;
    let d00 = 6.0 * s * s - 6.0 * s;
    let d10 = 3.0 * s * s - 4.0 * s + 1.0;
    let d01 = -6.0 * s * s + 6.0 * s;
    let d11 = 3.0 * s * s - 2.0 * s;
    let d1 = (d00 * y0 + d10 * m0 + d01 * y1 + d11 * m1) / h;
    let e00 = 12.0 * s - 6.0;
    let e10 = 6.0 * s - 4.0;
    let e01 = -12.0 * s + 6.0;
    let e11 = 6.0 * s - 2.0;
    let d2 = (e00 * y0 + e10 * m0 + e01 * y1 + e11 * m1) / (h * h);
    (f, d1, d2)
}
