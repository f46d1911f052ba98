//! Jordan structure of `C^H`: eigenvalue clusters, block lengths, generalized
//! eigenvector chains and spectral gap data.
//!
//! A chain `v^(0), ..., v^(l-1)` of a block with eigenvalue `lambda` (an eigenvalue
//! of `C`) satisfies `C^H v^(k) = conj(lambda) v^(k) + kappa v^(k-1)` with
//! `v^(-1) = 0`. The coupling `kappa` is 1 for ordinary chains; analytic callers may
//! pass rescaled chains with another nonnegative coupling, which keeps families
//! with a vanishing off-diagonal entry representable at the collapse point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, eigenvalues, inner, norm, svd_columns, CMatrix, C64, ZERO};

pub const DEFAULT_REL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BlockJson", into = "BlockJson")]
pub struct JordanBlock {
    /// Eigenvalue of `C`; the chain uses its conjugate.
    pub eigenvalue: C64,
    pub chain: Vec<Vec<C64>>,
    pub coupling: f64,
}

#[derive(Serialize, Deserialize)]
struct BlockJson {
    eigenvalue: C64,
    length: usize,
    #[serde(default = "unit_coupling")]
    coupling: f64,
    chain: Vec<Vec<C64>>,
}

fn unit_coupling() -> f64 {
    1.0
}

impl TryFrom<BlockJson> for JordanBlock {
    type Error = Error;
    fn try_from(b: BlockJson) -> Result<Self> {
        if b.length != b.chain.len() {
            return Err(Error::InvalidArgument(format!(
                "block length {} does not match chain of {} vectors",
                b.length,
                b.chain.len()
            )));
        }
        JordanBlock::with_coupling(b.eigenvalue, b.chain, b.coupling)
    }
}

impl From<JordanBlock> for BlockJson {
    fn from(b: JordanBlock) -> Self {
        BlockJson { eigenvalue: b.eigenvalue, length: b.chain.len(), coupling: b.coupling, chain: b.chain }
    }
}

impl JordanBlock {
    pub fn new(eigenvalue: C64, chain: Vec<Vec<C64>>) -> Result<Self> {
        Self::with_coupling(eigenvalue, chain, 1.0)
    }

    pub fn with_coupling(eigenvalue: C64, chain: Vec<Vec<C64>>, coupling: f64) -> Result<Self> {
        if chain.is_empty() {
            return Err(Error::InvalidArgument("empty Jordan chain".into()));
        }
        let d = chain[0].len();
        if chain.iter().any(|v| v.len() != d) {
            return Err(Error::DimensionMismatch("chain vectors differ in length".into()));
        }
        if !(coupling >= 0.0 && coupling.is_finite()) {
            return Err(Error::InvalidArgument("chain coupling must be finite and nonnegative".into()));
        }
        Ok(JordanBlock { eigenvalue, chain, coupling })
    }

    pub fn length(&self) -> usize {
        self.chain.len()
    }

    pub fn dim(&self) -> usize {
        self.chain[0].len()
    }
}

/// Spectral gap data `(mu, M, I_mu)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapData {
    pub mu: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "I_mu")]
    pub i_mu: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JordanStructure {
    pub blocks: Vec<JordanBlock>,
    pub mu: f64,
    pub max_defective_block: usize,
    pub defective_gap_indices: Vec<usize>,
    pub rel_tol: f64,
}

impl JordanStructure {
    /// Analytic mode: wraps caller-supplied chains and derives the gap data.
    pub fn from_blocks(blocks: Vec<JordanBlock>, rel_tol: f64) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("structure needs at least one block".into()));
        }
        if !(rel_tol > 0.0) {
            return Err(Error::InvalidArgument("rel_tol must be positive".into()));
        }
        let d = blocks[0].dim();
        if blocks.iter().any(|b| b.dim() != d) {
            return Err(Error::DimensionMismatch("blocks live in different dimensions".into()));
        }
        let total: usize = blocks.iter().map(JordanBlock::length).sum();
        if total != d {
            return Err(Error::DimensionMismatch(format!("chains have {total} vectors in dimension {d}")));
        }
        let gap = gap_of(&blocks, rel_tol);
        Ok(JordanStructure { blocks, mu: gap.mu, max_defective_block: gap.m, defective_gap_indices: gap.i_mu, rel_tol })
    }

    /// Numerical mode: eigenvalues, clustering, defect-aware cluster merging, chains.
    pub fn compute(c: &CMatrix, rel_tol: f64) -> Result<Self> {
        let eigs = eigenvalues(c)?;
        let clusters = cluster_eigenvalues(&eigs, rel_tol);
        let clusters = merge_defective_clusters(c, clusters, rel_tol)?;
        jordan_chains(c, &clusters, rel_tol)
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].dim()
    }

    /// Matrix `V` whose columns are all chain vectors in block order.
    pub fn chain_matrix(&self) -> CMatrix {
        let cols: Vec<Vec<C64>> = self.blocks.iter().flat_map(|b| b.chain.iter().cloned()).collect();
        CMatrix::from_columns(&cols).expect("chain vectors form a square matrix")
    }

    /// Bidiagonal `J` with `C^H V = V J`.
    pub fn jordan_matrix(&self) -> CMatrix {
        let d = self.dim();
        let mut j = CMatrix::zeros(d);
        let mut offset = 0;
        for b in &self.blocks {
            for k in 0..b.length() {
                j[(offset + k, offset + k)] = b.eigenvalue.conj();
                if k > 0 {
                    j[(offset + k - 1, offset + k)] = C64::new(b.coupling, 0.0);
                }
            }
            offset += b.length();
        }
        j
    }

    pub fn gap(&self) -> GapData {
        GapData { mu: self.mu, m: self.max_defective_block, i_mu: self.defective_gap_indices.clone() }
    }

    /// Whether block `n` sits at the spectral gap (within the clustering tolerance).
    pub fn at_gap(&self, n: usize) -> bool {
        at_gap(self.blocks[n].eigenvalue.re, self.mu, self.rel_tol)
    }
}

fn at_gap(re: f64, mu: f64, rel_tol: f64) -> bool {
    (re - mu).abs() <= rel_tol * (1.0 + mu.abs())
}

fn gap_of(blocks: &[JordanBlock], rel_tol: f64) -> GapData {
    let mu = blocks.iter().map(|b| b.eigenvalue.re).fold(f64::INFINITY, f64::min);
    let i_mu: Vec<usize> = blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.length() > 1 && at_gap(b.eigenvalue.re, mu, rel_tol))
        .map(|(n, _)| n)
        .collect();
    let m = i_mu.iter().map(|&n| blocks[n].length()).max().unwrap_or(1);
    GapData { mu, m, i_mu }
}

/// `(mu, M, I_mu)`; fails if the structure is not positive stable.
pub fn spectral_gap_data(structure: &JordanStructure) -> Result<GapData> {
    if !(structure.mu > 0.0) {
        return Err(Error::NotPositiveStable(structure.mu));
    }
    Ok(structure.gap())
}

/// Single-linkage clustering: eigenvalues within `rel_tol * (1 + max|lambda|)` are merged.
/// Cluster values are means over members; clusters come out sorted by (Re, Im).
pub fn cluster_eigenvalues(eigs: &[C64], rel_tol: f64) -> Vec<(C64, usize)> {
    let n = eigs.len();
    let scale = 1.0 + eigs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = rel_tol * scale;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut i = i;
        while p[i] != r {
            let next = p[i];
            p[i] = r;
            i = next;
        }
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (eigs[i] - eigs[j]).norm() <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[rj] = ri;
                }
            }
        }
    }
    let mut groups: Vec<(usize, C64, usize)> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match groups.iter_mut().find(|g| g.0 == r) {
            Some(g) => {
                g.1 += eigs[i];
                g.2 += 1;
            }
            None => groups.push((r, eigs[i], 1)),
        }
    }
    let mut out: Vec<(C64, usize)> = groups.into_iter().map(|(_, s, m)| (s / m as f64, m)).collect();
    out.sort_by(|a, b| a.0.re.total_cmp(&b.0.re).then(a.0.im.total_cmp(&b.0.im)));
    out
}

/// Rank and kernel of `a^j`, with singular values measured against `max(|a|, base)^j`
/// so that a power that is zero up to roundoff has full nullity.
fn power_kernel(a: &CMatrix, base: f64, j: usize, rel_tol: f64) -> Result<(usize, Vec<Vec<C64>>)> {
    let p = a.pow(j as u32);
    let svd = svd_columns(&p.columns(), p.dim())?;
    let floor = rel_tol * linalg::spectral_norm(a)?.max(base).powi(j as i32);
    let rank = svd.sigma.iter().filter(|&&s| s > floor && s > 0.0).count();
    Ok((rank, svd.v[rank..].to_vec()))
}

/// Nullities of `(C^H - conj(lambda) I)^j` for `j = 1..=m`.
fn nullity_profile(ch: &CMatrix, lambda: C64, m: usize, rel_tol: f64) -> Result<Vec<usize>> {
    let a = ch.shift(lambda.conj());
    let d = ch.dim();
    let base = linalg::spectral_norm(ch)?;
    (1..=m).map(|j| power_kernel(&a, base, j, rel_tol).map(|(rank, _)| d - rank)).collect()
}

/// A nullity profile is consistent with a cluster of multiplicity `m` when it starts
/// at >= 1, ends at `m`, and its increments never grow.
fn profile_consistent(n: &[usize], m: usize) -> bool {
    if n.is_empty() || n[0] == 0 || n[m - 1] != m {
        return false;
    }
    let mut prev_n = 0;
    let mut prev_inc = usize::MAX;
    for &nj in n {
        if nj < prev_n {
            return false;
        }
        let inc = nj - prev_n;
        if inc > prev_inc {
            return false;
        }
        prev_inc = inc;
        prev_n = nj;
    }
    true
}

/// Merges clusters that a defective eigenvalue has split apart.
///
/// The eigenvalues of an `m`-dimensional Jordan block computed in floating point
/// spread over a radius of order `eps^(1/m)`, far beyond `rel_tol`. Starting from each
/// cluster, the nearest clusters are added while they lie within `rel_tol^(1/m)`
/// (relative, `m` the grown multiplicity) of the group mean; the largest prefix of that
/// group whose rank profile at its mean is consistent is merged.
pub fn merge_defective_clusters(c: &CMatrix, clusters: Vec<(C64, usize)>, rel_tol: f64) -> Result<Vec<(C64, usize)>> {
    let ch = c.adjoint();
    let scale = 1.0 + clusters.iter().map(|z| z.0.norm()).fold(0.0, f64::max);
    let mean_of = |group: &[(C64, usize)]| {
        let m: usize = group.iter().map(|g| g.1).sum();
        (group.iter().map(|g| g.0 * g.1 as f64).sum::<C64>() / m as f64, m)
    };
    let mut rest = clusters;
    let mut out = Vec::new();
    while !rest.is_empty() {
        let mut group = vec![rest.remove(0)];
        loop {
            let (mean, m) = mean_of(&group);
            let next = rest
                .iter()
                .enumerate()
                .map(|(i, z)| (i, (z.0 - mean).norm(), z.1))
                .filter(|&(_, dist, mz)| dist <= rel_tol.powf(1.0 / (m + mz) as f64) * scale)
                .min_by(|x, y| x.1.total_cmp(&y.1));
            match next {
                Some((i, _, _)) => group.push(rest.remove(i)),
                None => break,
            }
        }
        let mut keep = group.len();
        while keep > 1 {
            let (mean, m) = mean_of(&group[..keep]);
            if profile_consistent(&nullity_profile(&ch, mean, m, rel_tol)?, m) {
                break;
            }
            keep -= 1;
        }
        let tail = group.split_off(keep);
        out.push(mean_of(&group));
        for z in tail.into_iter().rev() {
            rest.insert(0, z);
        }
    }
    out.sort_by(|a, b| a.0.re.total_cmp(&b.0.re).then(a.0.im.total_cmp(&b.0.im)));
    Ok(out)
}

/// Orthonormal basis of the span of `vecs` (singular values above `tol * sigma_max`).
fn orthonormal_span(vecs: &[Vec<C64>], d: usize, tol: f64) -> Result<Vec<Vec<C64>>> {
    if vecs.is_empty() {
        return Ok(Vec::new());
    }
    let svd = svd_columns(vecs, d)?;
    let smax = svd.sigma[0];
    Ok(svd.u.into_iter().zip(&svd.sigma).filter(|(_, &s)| s > tol * smax && s > 0.0).map(|(u, _)| u).collect())
}

/// Chains for every cluster from the rank profile of `(C^H - conj(lambda) I)^j`.
///
/// Eigenvectors are normalized to unit length; each higher link is made orthogonal
/// to its chain's eigenvector, which is the minimum-norm solution of the link
/// equation for an isolated block.
pub fn jordan_chains(c: &CMatrix, clusters: &[(C64, usize)], rel_tol: f64) -> Result<JordanStructure> {
    let d = c.dim();
    let total: usize = clusters.iter().map(|c| c.1).sum();
    if total != d {
        return Err(Error::DimensionMismatch(format!("cluster multiplicities sum to {total}, expected {d}")));
    }
    let ch = c.adjoint();
    let mut blocks = Vec::new();
    for &(lambda, m) in clusters {
        let a = ch.shift(lambda.conj());
        let base = linalg::spectral_norm(&ch)?;
        let nul = nullity_profile(&ch, lambda, m, rel_tol)?;
        if !profile_consistent(&nul, m) {
            return Err(Error::RankProfile {
                re: lambda.re,
                im: lambda.im,
                detail: format!("nullities {nul:?} for multiplicity {m}"),
            });
        }
        // blocks of length >= j
        let at_least: Vec<usize> = (0..m).map(|j| nul[j] - if j == 0 { 0 } else { nul[j - 1] }).collect();
        let mut tops: Vec<(usize, Vec<C64>)> = Vec::new();
        for j in (1..=m).rev() {
            let exact = at_least[j - 1] - if j < m { at_least[j] } else { 0 };
            if exact == 0 {
                continue;
            }
            let (_, kj) = power_kernel(&a, base, j, rel_tol)?;
            let mut covered: Vec<Vec<C64>> = if j > 1 { power_kernel(&a, base, j - 1, rel_tol)?.1 } else { Vec::new() };
            for (l, u) in &tops {
                let mut w = u.clone();
                for _ in 0..(l - j) {
                    w = a.mul_vec(&w);
                }
                covered.push(w);
            }
            let q = orthonormal_span(&covered, d, rel_tol)?;
            let projected: Vec<Vec<C64>> = kj
                .iter()
                .map(|k| {
                    let mut p = k.clone();
                    for qv in &q {
                        let coef = inner(qv, k);
                        linalg::axpy(-coef, qv, &mut p);
                    }
                    p
                })
                .collect();
            let svd = svd_columns(&projected, d)?;
            if svd.sigma.len() < exact || svd.sigma[exact - 1] <= rel_tol * svd.sigma[0].max(1.0) {
                return Err(Error::RankProfile {
                    re: lambda.re,
                    im: lambda.im,
                    detail: format!("cannot find {exact} chain heads of length {j}"),
                });
            }
            for y in svd.v.iter().take(exact) {
                let mut u = vec![ZERO; d];
                for (coef, k) in y.iter().zip(&kj) {
                    linalg::axpy(*coef, k, &mut u);
                }
                tops.push((j, u));
            }
        }
        for (l, u) in tops {
            let mut chain = vec![u];
            for _ in 1..l {
                let next = a.mul_vec(chain.last().unwrap());
                chain.push(next);
            }
            chain.reverse();
            let s = norm(&chain[0]);
            for v in chain.iter_mut() {
                for z in v.iter_mut() {
                    *z /= s;
                }
            }
            for k in 1..l {
                let coef = inner(&chain[0], &chain[k]);
                for i in 0..l - k {
                    let src = chain[i].clone();
                    linalg::axpy(-coef, &src, &mut chain[k + i]);
                }
            }
            blocks.push(JordanBlock::new(lambda, chain)?);
        }
    }
    let structure = JordanStructure::from_blocks(blocks, rel_tol)?;
    let residual = verify_chain(c, &structure);
    let tol = 10.0 * rel_tol * linalg::spectral_norm(c)?.max(f64::MIN_POSITIVE);
    if residual > tol {
        return Err(Error::RankProfile {
            re: f64::NAN,
            im: f64::NAN,
            detail: format!("chain residual {residual:.3e} exceeds {tol:.3e}"),
        });
    }
    Ok(structure)
}

/// Largest residual `|C^H v^(k) - conj(lambda) v^(k) - kappa v^(k-1)|` over all links.
pub fn verify_chain(c: &CMatrix, structure: &JordanStructure) -> f64 {
    let ch = c.adjoint();
    let mut worst: f64 = 0.0;
    for b in &structure.blocks {
        let lb = b.eigenvalue.conj();
        for (k, v) in b.chain.iter().enumerate() {
            let mut r = ch.mul_vec(v);
            linalg::axpy(-lb, v, &mut r);
            if k > 0 {
                linalg::axpy(C64::new(-b.coupling, 0.0), &b.chain[k - 1], &mut r);
            }
            worst = worst.max(norm(&r));
        }
    }
    worst
}
