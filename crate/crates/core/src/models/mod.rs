//! Parameter-sensitivity models: convection-diffusion, Goldstein-Taylor and
//! Fokker-Planck.

use serde::{Deserialize, Serialize};

use crate::lyapunov::DecayEnvelope;
use crate::oracle::Envelope;

pub mod cd;
pub mod fp;
pub mod gt;
pub mod hermite;

/// One `(z, t)` sample of a global decay check: `ratio = norm_sq / bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremRow {
    pub z: f64,
    pub t: f64,
    pub norm_sq: f64,
    pub bound: f64,
    pub ratio: f64,
}

/// A decay envelope evaluated at the rescaled time `time_scale * t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeEnvelope {
    pub envelope: DecayEnvelope,
    pub time_scale: f64,
}

impl ModeEnvelope {
    pub fn eval(&self, t: f64) -> f64 {
        self.log_bound(t).exp()
    }
}

impl Envelope for ModeEnvelope {
    fn log_bound(&self, t: f64) -> f64 {
        self.envelope.log_eval(self.time_scale * t)
    }
}
