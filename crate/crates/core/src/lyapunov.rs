//! Lyapunov forms `P(t)` built from Jordan chains, and the decay envelopes they certify.
//!
//! Blocks are classified by their length and distance to the spectral gap `mu`:
//! length one (`Case1`), defective above the gap (`Case2`, time-independent weights
//! fixed by the gap distance), defective at the gap (`Case3`, time-dependent vectors
//! `w^m(t)` with free weights). `Case3Tilde` applies the time-dependent construction
//! to a block above the gap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jordan::{JordanBlock, JordanStructure};
use crate::linalg::{self, hermitian_eigen, hermitian_extremes, inner, quad_form, CMatrix, C64, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockCase {
    Case1,
    Case2,
    Case3,
    Case3Tilde,
}

/// Weights attached to one Jordan block.
///
/// `Case1`: `weights = [beta]`. `Case2`: `beta` scales the derived weights `b^1..b^l`
/// stored in `weights`. `Case3`/`Case3Tilde`: `weights = [beta^1, ..., beta^l]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockForm {
    pub case: BlockCase,
    pub beta: f64,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovForm {
    pub structure: JordanStructure,
    pub blocks: Vec<BlockForm>,
}

/// `|x(t)|^2 <= c_const (1 + t^{2(M-1)}) e^{-2 mu t} |x(0)|^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayEnvelope {
    #[serde(rename = "C_const")]
    pub c_const: f64,
    pub mu: f64,
    #[serde(rename = "M")]
    pub m: usize,
}

impl DecayEnvelope {
    pub fn eval(&self, t: f64) -> Result<f64> {
        envelope_eval(self, t)
    }

    /// Natural log of the envelope, finite where the envelope itself underflows.
    pub fn log_eval(&self, t: f64) -> f64 {
        let poly = if self.m > 1 { (1.0 + t.powi(2 * (self.m as i32 - 1))).ln() } else { 0.0 };
        self.c_const.ln() + poly - 2.0 * self.mu * t
    }
}

pub fn envelope_eval(env: &DecayEnvelope, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("envelope time must be nonnegative, got {t}")));
    }
    let poly = if env.m > 1 { 1.0 + t.powi(2 * (env.m as i32 - 1)) } else { 1.0 };
    Ok(env.c_const * poly * (-2.0 * env.mu * t).exp())
}

/// `b^j = c_j tau^{2(1-j)}` with `c_1 = 1`, `c_j = 1 + c_{j-1}^2`.
pub fn case2_weights(l: usize, tau: f64) -> Result<Vec<f64>> {
    if l == 0 {
        return Err(Error::InvalidArgument("block length must be positive".into()));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("gap distance tau must be positive, got {tau}")));
    }
    let mut c = 1.0;
    let mut out = Vec::with_capacity(l);
    for j in 1..=l {
        if j > 1 {
            c = 1.0 + c * c;
        }
        out.push(c * tau.powi(2 * (1 - j as i32)));
    }
    Ok(out)
}

/// `w^m(t) = sum_{k=1}^m (kappa t)^{m-k}/(m-k)! v^(k-1)`.
pub fn w_vector(block: &JordanBlock, m: usize, t: f64) -> Result<Vec<C64>> {
    if m == 0 || m > block.length() {
        return Err(Error::InvalidArgument(format!("w index {m} outside 1..={}", block.length())));
    }
    let s = block.coupling * t;
    let mut w = vec![ZERO; block.dim()];
    let mut coef = 1.0;
    // k runs from m down to 1, coefficient s^{m-k}/(m-k)!
    for (i, k) in (1..=m).rev().enumerate() {
        if i > 0 {
            coef *= s / i as f64;
        }
        linalg::axpy(C64::new(coef, 0.0), &block.chain[k - 1], &mut w);
    }
    Ok(w)
}

/// Weight on chain vector `v^(k)` for a `Case2` block (eigenvector first).
///
/// `b^j` multiplies `v^(l-j)`: the eigenvector carries the largest weight, which
/// is what the matrix inequality with rate `mu` requires. A coupling `kappa > 0`
/// rescales the gap distance to `tau / kappa`; a decoupled block takes the plain weights.
fn case2_chain_weights(block: &JordanBlock, tau: f64) -> Result<Vec<f64>> {
    let l = block.length();
    let tau_eff = if block.coupling > 0.0 { tau / block.coupling } else { tau };
    let b = case2_weights(l, tau_eff)?;
    Ok((0..l).map(|k| b[l - 1 - k]).collect())
}

impl LyapunovForm {
    /// Default weights: `beta = 1` for `Case1`/`Case2`, `beta^m = 1` for `Case3`.
    pub fn new(structure: JordanStructure) -> Result<Self> {
        let weights: Vec<Vec<f64>> = structure
            .blocks
            .iter()
            .enumerate()
            .map(|(n, b)| if b.length() > 1 && structure.at_gap(n) { vec![1.0; b.length()] } else { vec![1.0] })
            .collect();
        Self::with_weights(structure, &weights)
    }

    /// Explicit weights per block: one entry for `Case1`/`Case2`, `l_n` entries for `Case3`.
    pub fn with_weights(structure: JordanStructure, weights: &[Vec<f64>]) -> Result<Self> {
        if weights.len() != structure.blocks.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weight lists for {} blocks",
                weights.len(),
                structure.blocks.len()
            )));
        }
        let mu = structure.mu;
        let mut blocks = Vec::with_capacity(weights.len());
        for (n, (b, w)) in structure.blocks.iter().zip(weights).enumerate() {
            check_weights(w)?;
            let l = b.length();
            let form = if l == 1 {
                expect_len(w, 1, n)?;
                BlockForm { case: BlockCase::Case1, beta: w[0], weights: vec![w[0]] }
            } else if structure.at_gap(n) {
                expect_len(w, l, n)?;
                BlockForm { case: BlockCase::Case3, beta: 1.0, weights: w.clone() }
            } else {
                expect_len(w, 1, n)?;
                let tau = 2.0 * (b.eigenvalue.re - mu);
                if !(tau > 0.0) {
                    return Err(Error::InvalidArgument(format!("block {n} is not above the gap")));
                }
                let bw = case2_weights(l, if b.coupling > 0.0 { tau / b.coupling } else { tau })?;
                BlockForm { case: BlockCase::Case2, beta: w[0], weights: bw }
            };
            blocks.push(form);
        }
        Ok(LyapunovForm { structure, blocks })
    }

    /// Replaces the `Case2` construction of block `n` by the time-dependent one.
    pub fn treat_as_case3(&mut self, n: usize, weights: Vec<f64>) -> Result<()> {
        let b = self.structure.blocks.get(n).ok_or_else(|| Error::InvalidArgument(format!("no block {n}")))?;
        if self.blocks[n].case != BlockCase::Case2 {
            return Err(Error::InvalidArgument(format!("block {n} is not a defective block above the gap")));
        }
        check_weights(&weights)?;
        expect_len(&weights, b.length(), n)?;
        self.blocks[n] = BlockForm { case: BlockCase::Case3Tilde, beta: 1.0, weights };
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        self.structure.mu
    }

    pub fn dim(&self) -> usize {
        self.structure.dim()
    }

    /// Contribution of block `n` to `P(t)`.
    pub fn block_p(&self, n: usize, t: f64) -> Result<CMatrix> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
        }
        let b = &self.structure.blocks[n];
        let f = &self.blocks[n];
        let d = b.dim();
        let mut p = CMatrix::zeros(d);
        match f.case {
            BlockCase::Case1 => add_rank_one(&mut p, f.beta, &b.chain[0]),
            BlockCase::Case2 => {
                let tau = 2.0 * (b.eigenvalue.re - self.mu());
                for (k, wk) in case2_chain_weights(b, tau)?.iter().enumerate() {
                    add_rank_one(&mut p, f.beta * wk, &b.chain[k]);
                }
            }
            BlockCase::Case3 | BlockCase::Case3Tilde => {
                for (m, beta) in f.weights.iter().enumerate() {
                    let w = w_vector(b, m + 1, t)?;
                    add_rank_one(&mut p, *beta, &w);
                }
            }
        }
        Ok(p)
    }

    /// `P(t)`, Hermitian positive definite.
    pub fn build_p(&self, t: f64) -> Result<CMatrix> {
        let mut p = CMatrix::zeros(self.dim());
        for n in 0..self.blocks.len() {
            p = &p + &self.block_p(n, t)?;
        }
        Ok(p)
    }

    /// `V e^{Jt} Sigma(t) B (V e^{Jt})^H`; defined when no block uses the `Case2` construction.
    pub fn product_form_p(&self, t: f64) -> Result<CMatrix> {
        if self.blocks.iter().any(|f| f.case == BlockCase::Case2) {
            return Err(Error::InvalidArgument("product form needs time-dependent or rank-one blocks".into()));
        }
        let v = self.structure.chain_matrix();
        let ejt = linalg::expm(&self.structure.jordan_matrix(), t)?;
        let vt = v.matmul(&ejt);
        let mut diag = Vec::with_capacity(self.dim());
        for (b, f) in self.structure.blocks.iter().zip(&self.blocks) {
            let decay = (-2.0 * b.eigenvalue.re * t).exp();
            for m in 0..b.length() {
                let beta = if f.case == BlockCase::Case1 { f.beta } else { f.weights[m] };
                diag.push(C64::new(decay * beta, 0.0));
            }
        }
        Ok(vt.matmul(&CMatrix::from_diag(&diag)).matmul(&vt.adjoint()))
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("weights must be finite and positive, got {w:?}")));
    }
    Ok(())
}

fn expect_len(w: &[f64], l: usize, n: usize) -> Result<()> {
    if w.len() != l {
        return Err(Error::InvalidArgument(format!("block {n} needs {l} weights, got {}", w.len())));
    }
    Ok(())
}

fn add_rank_one(p: &mut CMatrix, weight: f64, v: &[C64]) {
    let d = v.len();
    for i in 0..d {
        for j in 0..d {
            p[(i, j)] += v[i] * v[j].conj() * weight;
        }
    }
}

/// Time-independent `P_eps` with `C^H P + P C >= 2(mu - eps) P`: the `Case2`
/// construction with `tau = 2 eps` applied to defective blocks at the gap.
pub fn build_p_epsilon(structure: &JordanStructure, eps: f64) -> Result<CMatrix> {
    let mu = structure.mu;
    if !(eps > 0.0) || eps >= mu {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, mu = {mu}), got {eps}")));
    }
    let mut p = CMatrix::zeros(structure.dim());
    for (n, b) in structure.blocks.iter().enumerate() {
        if b.length() == 1 {
            add_rank_one(&mut p, 1.0, &b.chain[0]);
            continue;
        }
        let tau = if structure.at_gap(n) { 2.0 * eps } else { 2.0 * (b.eigenvalue.re - mu) };
        for (k, wk) in case2_chain_weights(b, tau)?.iter().enumerate() {
            add_rank_one(&mut p, *wk, &b.chain[k]);
        }
    }
    Ok(p)
}

/// `c_1 = 1/2`, `c_M = 2^{M-2} prod_{j<M}(4j^2-1) prod_{j=2}^M sum_{k=1}^j 1/((j-k)!)^2`.
pub fn c_m_constant(m: usize) -> f64 {
    if m <= 1 {
        return 0.5;
    }
    let mut c = 2f64.powi(m as i32 - 2);
    for j in 1..m {
        let j = j as f64;
        c *= 4.0 * j * j - 1.0;
    }
    for j in 2..=m {
        let mut s = 0.0;
        let mut fact = 1.0;
        for i in 0..j {
            if i > 0 {
                fact *= i as f64;
            }
            s += 1.0 / (fact * fact);
        }
        c *= s;
    }
    c
}

/// `d_m(theta) = ((m-1)^2/theta - 1) / (1 - theta)`.
pub fn d_coefficient(m: usize, theta: f64) -> f64 {
    let k = (m as f64 - 1.0).powi(2);
    (k / theta - 1.0) / (1.0 - theta)
}

/// Weights in the gauge of a unit-coupling chain: `beta^m kappa^{2(m-1)}`.
fn unit_gauge_weights(block: &JordanBlock, weights: &[f64]) -> Vec<f64> {
    let k2 = block.coupling * block.coupling;
    weights.iter().enumerate().map(|(m, b)| b * k2.powi(m as i32)).collect()
}

/// `sum_m beta^m / min_{k<=m} beta^k`, evaluated in the unit-coupling gauge.
/// For a decoupled block this is the limit `l` of vanishing coupling.
fn weight_sum(block: &JordanBlock, weights: &[f64]) -> f64 {
    if block.coupling == 0.0 {
        return block.length() as f64;
    }
    let w = unit_gauge_weights(block, weights);
    let mut running_min = f64::INFINITY;
    let mut s = 0.0;
    for b in w {
        running_min = running_min.min(b);
        s += b / running_min;
    }
    s
}

/// Constant of the Euclidean envelope `C (1 + t^{2(M-1)}) e^{-2 mu t}`.
///
/// Forms with a block moved to the time-dependent construction above the gap are
/// delegated to [`tilde_constant`].
pub fn decay_constant(form: &LyapunovForm) -> Result<DecayEnvelope> {
    let mu = form.mu();
    if !(mu > 0.0) {
        return Err(Error::NotPositiveStable(mu));
    }
    if form.blocks.iter().any(|f| f.case == BlockCase::Case3Tilde) {
        return tilde_constant(form);
    }
    let m = form.structure.max_defective_block;
    let ratio = hermitian_extremes(&form.build_p(0.0)?)?.ratio();
    if m == 1 {
        return Ok(DecayEnvelope { c_const: ratio, mu, m });
    }
    let worst = form
        .structure
        .defective_gap_indices
        .iter()
        .map(|&n| weight_sum(&form.structure.blocks[n], &form.blocks[n].weights))
        .fold(0.0, f64::max);
    Ok(DecayEnvelope { c_const: 2.0 * ratio * c_m_constant(m) * worst, mu, m })
}

/// `sup_{t >= 0} (1 + t^p) e^{-2 g t}` for `g > 0`.
pub fn sup_poly_exp(p: u32, g: f64) -> Result<f64> {
    if !(g > 0.0) {
        return Err(Error::InvalidArgument(format!("decay gap must be positive, got {g}")));
    }
    if p == 0 {
        return Ok(1.0);
    }
    let f = |t: f64| (1.0 + t.powi(p as i32)) * (-2.0 * g * t).exp();
    Ok(maximize_on_interval(f, 0.0, 2.0 * p as f64 / g + 1.0))
}

/// Maximum of a unimodal-ish `f` on `[a, b]`: 4000-point grid, then golden-section
/// polish around the best grid point.
pub fn maximize_on_interval(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let n = 4000;
    let h = (b - a) / n as f64;
    let (mut best_t, mut best) = (a, f(a));
    for i in 1..=n {
        let t = a + i as f64 * h;
        let v = f(t);
        if v > best {
            best = v;
            best_t = t;
        }
    }
    let (mut lo, mut hi) = ((best_t - h).max(a), (best_t + h).min(b));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let x1 = hi - r * (hi - lo);
        let x2 = lo + r * (hi - lo);
        if f(x1) < f(x2) {
            lo = x1;
        } else {
            hi = x2;
        }
    }
    best.max(f(0.5 * (lo + hi)))
}

/// Constant for a form whose defective blocks above the gap use the time-dependent
/// construction, with no defective block at the gap.
///
/// `C~ = 2 ratio(P~(0)) c_l [sum_m beta^m / min_{k<=m} beta^k] S`, where
/// `S = sup_t (1 + t^{2(l-1)}) e^{-2(Re lambda - mu) t}` converts the block's own
/// algebraic factor into the envelope `C~ e^{-2 mu t}`; the maximum is taken over
/// all treated blocks.
pub fn tilde_constant(form: &LyapunovForm) -> Result<DecayEnvelope> {
    let mu = form.mu();
    if !(mu > 0.0) {
        return Err(Error::NotPositiveStable(mu));
    }
    if form.structure.max_defective_block != 1 {
        return Err(Error::InvalidArgument("modified constant needs all blocks at the gap to be non-defective".into()));
    }
    let treated: Vec<usize> =
        (0..form.blocks.len()).filter(|&n| form.blocks[n].case == BlockCase::Case3Tilde).collect();
    let ratio = hermitian_extremes(&form.build_p(0.0)?)?.ratio();
    if treated.is_empty() {
        return Ok(DecayEnvelope { c_const: ratio, mu, m: 1 });
    }
    let mut worst: f64 = 0.0;
    for &n in &treated {
        let b = &form.structure.blocks[n];
        let l = b.length();
        let s = sup_poly_exp(2 * (l as u32 - 1), b.eigenvalue.re - mu)?;
        worst = worst.max(c_m_constant(l) * weight_sum(b, &form.blocks[n].weights) * s);
    }
    Ok(DecayEnvelope { c_const: 2.0 * ratio * worst, mu, m: 1 })
}

/// Sharpened bound for a defect-one block at the gap:
/// `|x(t)|^2_{P_n(0)} <= 2 e^{-2 mu t} (1 + (beta^2/beta^1) t^2) |x(0)|^2_{P_n(0)}`,
/// with weights in the unit-coupling gauge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Defect1Envelope {
    pub mu: f64,
    pub weight_ratio: f64,
}

impl Defect1Envelope {
    pub fn eval(&self, t: f64) -> f64 {
        2.0 * (-2.0 * self.mu * t).exp() * (1.0 + self.weight_ratio * t * t)
    }
}

pub fn improved_defect1_envelope(form: &LyapunovForm, n: usize) -> Result<Defect1Envelope> {
    let b = form.structure.blocks.get(n).ok_or_else(|| Error::InvalidArgument(format!("no block {n}")))?;
    if b.length() != 2 || form.blocks[n].case != BlockCase::Case3 {
        return Err(Error::InvalidArgument(format!("block {n} is not a defect-one block at the gap")));
    }
    let w = unit_gauge_weights(b, &form.blocks[n].weights);
    Ok(Defect1Envelope { mu: form.mu(), weight_ratio: w[1] / w[0] })
}

/// Minimum eigenvalue of `C^H P + P C - 2 rate P`.
pub fn verify_matrix_inequality(c: &CMatrix, p: &CMatrix, rate: f64) -> Result<f64> {
    let dev = p.hermitian_deviation();
    if dev > 1e-10 * p.max_abs().max(1.0) {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let ch = c.adjoint();
    let s = &(&ch.matmul(p) + &p.matmul(c)) - &p.scale_real(2.0 * rate);
    Ok(hermitian_extremes(&s)?.lambda_min)
}

/// Slack of the lower bound
/// `|x|^2_{w w^H} >= (1-theta) xi_m^2 |x|^2_{Q^m} - ((m-1)^2/theta - 1) sum_{k<m} xi_k^2 |x|^2_{Q^k}`
/// with `w = sum_k xi_k v^k` and `Q^k = v^k (v^k)^H`.
pub fn lower_bound_lemma_gap(vectors: &[Vec<C64>], xi: &[f64], theta: f64, x: &[C64]) -> Result<f64> {
    if xi.last().is_some_and(|&c| !(c > 0.0)) {
        return Err(Error::InvalidArgument("leading coefficient must be positive".into()));
    }
    let xi: Vec<C64> = xi.iter().map(|&c| C64::new(c, 0.0)).collect();
    lower_bound_lemma_gap_complex(vectors, &xi, theta, x)
}

/// Same slack with complex coefficients; only the leading one has to be nonzero.
pub fn lower_bound_lemma_gap_complex(vectors: &[Vec<C64>], xi: &[C64], theta: f64, x: &[C64]) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!("theta must lie in (0, 1), got {theta}")));
    }
    let m = vectors.len();
    if m == 0 || xi.len() != m {
        return Err(Error::InvalidArgument("need one coefficient per vector".into()));
    }
    if xi[m - 1] == ZERO {
        return Err(Error::InvalidArgument("leading coefficient must be nonzero".into()));
    }
    let proj: Vec<f64> = vectors.iter().map(|v| inner(v, x).norm_sqr()).collect();
    let mut w = vec![ZERO; x.len()];
    for (v, c) in vectors.iter().zip(xi) {
        linalg::axpy(*c, v, &mut w);
    }
    let lhs = inner(&w, x).norm_sqr();
    let k = ((m - 1) as f64).powi(2) / theta - 1.0;
    let tail: f64 = (0..m - 1).map(|i| xi[i].norm_sqr() * proj[i]).sum();
    Ok(lhs - ((1.0 - theta) * xi[m - 1].norm_sqr() * proj[m - 1] - k * tail))
}

/// Heuristic Case-3 weights `beta^m = 1 / |v^(m-1)|^2`, which keep `P(0)` well
/// conditioned when chain vectors blow up near a non-defective limit.
pub fn suggest_weights(block: &JordanBlock) -> Vec<f64> {
    block
        .chain
        .iter()
        .map(|v| {
            let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            if n2 > 0.0 {
                1.0 / n2
            } else {
                1.0
            }
        })
        .collect()
}

/// `<x, C x>_P / (|x|_P |C x|_P)`.
pub fn p_angle(p: &CMatrix, c: &CMatrix, x: &[C64]) -> C64 {
    let cx = c.mul_vec(x);
    let num = inner(x, &p.mul_vec(&cx));
    num / (quad_form(p, x).sqrt() * quad_form(p, &cx).sqrt())
}

/// Operator norm of `C` induced by `|.|_P`, i.e. `|P^{1/2} C P^{-1/2}|_2`.
pub fn p_operator_norm(p: &CMatrix, c: &CMatrix) -> Result<f64> {
    let eig = hermitian_eigen(p)?;
    if eig.values[0] <= 0.0 {
        return Err(Error::InvalidArgument("P must be positive definite".into()));
    }
    let d = p.dim();
    let mut half = CMatrix::zeros(d);
    let mut inv_half = CMatrix::zeros(d);
    for (lam, v) in eig.values.iter().zip(&eig.vectors) {
        let o = CMatrix::outer(v, v);
        half = &half + &o.scale_real(lam.sqrt());
        inv_half = &inv_half + &o.scale_real(1.0 / lam.sqrt());
    }
    linalg::spectral_norm(&half.matmul(c).matmul(&inv_half))
}
