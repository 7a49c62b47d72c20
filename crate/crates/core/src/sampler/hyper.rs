//! Normal-Wishart hyperparameters of one side.

use crate::linalg::{cholesky, tri_solve, LinalgError, LowerTriangular, SquareMatrix};
use crate::real::{Dd, Real};
use crate::rng::{sample_mvn_prec, sample_wishart_prec, RandError, RngStream};
use crate::sampler::LatentMatrix;

/// Fixed prior over the mean and precision of one side's latent vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperPrior {
    pub mu0: Vec<f64>,
    pub beta0: f64,
    pub nu0: f64,
    pub w0_chol: LowerTriangular,
    w0_inv: SquareMatrix,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("beta0 must be positive, got {0}")]
    BetaNotPositive(f64),
    #[error("nu0 = {nu0} must be at least k = {k}")]
    NuTooSmall { nu0: f64, k: usize },
    #[error("mu0 has length {got}, scale factor has dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Inverse of `L·Lᵀ`, column by column through two triangular solves.
fn inverse_from_chol(l: &LowerTriangular) -> SquareMatrix {
    let k = l.k();
    let mut out = SquareMatrix::zeros(k);
    for c in 0..k {
        let mut e = vec![0.0; k];
        e[c] = 1.0;
        let y = tri_solve(l, &e, false);
        let x = tri_solve(l, &y, true);
        for (r, v) in x.into_iter().enumerate() {
            out.set(r, c, v);
        }
    }
    out.symmetrized()
}

impl HyperPrior {
    pub fn new(mu0: Vec<f64>, beta0: f64, nu0: f64, w0_chol: LowerTriangular) -> Result<Self, PriorError> {
        let k = w0_chol.k();
        if mu0.len() != k {
            return Err(PriorError::Dimension { expected: k, got: mu0.len() });
        }
        if !(beta0 > 0.0) {
            return Err(PriorError::BetaNotPositive(beta0));
        }
        if !(nu0 >= k as f64) {
            return Err(PriorError::NuTooSmall { nu0, k });
        }
        let w0_inv = inverse_from_chol(&w0_chol);
        Ok(HyperPrior { mu0, beta0, nu0, w0_chol, w0_inv })
    }

    /// μ0 = 0, β0 = 2, ν0 = k, W0 = I.
    pub fn default_for(k: usize) -> Self {
        HyperPrior::new(vec![0.0; k], 2.0, k as f64, LowerTriangular::identity(k)).expect("valid default prior")
    }

    pub fn k(&self) -> usize {
        self.mu0.len()
    }

    pub fn w0_inv(&self) -> &SquareMatrix {
        &self.w0_inv
    }
}

/// Mean and precision factor of the Gaussian prior over one side's rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub lambda_chol: LowerTriangular,
}

impl GaussianParams {
    pub fn standard(k: usize) -> Self {
        GaussianParams { mu: vec![0.0; k], lambda_chol: LowerTriangular::identity(k) }
    }
}

/// Count, sum and packed lower outer-product sum of a set of rows, in
/// double-double so that merging partial statistics from any split of the
/// rows gives the same rounded result.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperStats {
    k: usize,
    pub count: u64,
    sum: Vec<Dd>,
    outer: Vec<Dd>,
}

#[inline]
fn packed(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl HyperStats {
    pub fn zeros(k: usize) -> Self {
        HyperStats { k, count: 0, sum: vec![Dd::ZERO; k], outer: vec![Dd::ZERO; k * (k + 1) / 2] }
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.k);
        self.count += 1;
        for i in 0..self.k {
            self.sum[i] = self.sum[i] + Dd::from_f64(x[i]);
            for j in 0..=i {
                let p = packed(i, j);
                self.outer[p] = self.outer[p].add_prod(x[i], x[j]);
            }
        }
    }

    pub fn from_rows(items: &LatentMatrix, rows: impl IntoIterator<Item = usize>) -> Self {
        let mut s = HyperStats::zeros(items.k());
        for r in rows {
            s.push(items.row(r));
        }
        s
    }

    pub fn merge(&mut self, other: &HyperStats) {
        assert_eq!(self.k, other.k);
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += *b;
        }
        for (a, b) in self.outer.iter_mut().zip(&other.outer) {
            *a += *b;
        }
    }

    /// Flat encoding: count, then (hi, lo) pairs of the sum and outer sum.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + 2 * (self.sum.len() + self.outer.len()));
        v.push(self.count as f64);
        for d in self.sum.iter().chain(&self.outer) {
            v.push(d.hi());
            v.push(d.lo());
        }
        v
    }

    pub fn from_flat(k: usize, v: &[f64]) -> Option<Self> {
        let packed_len = k * (k + 1) / 2;
        if v.len() != 1 + 2 * (k + packed_len) || v[0] < 0.0 || v[0].fract() != 0.0 {
            return None;
        }
        let dd: Vec<Dd> = v[1..].chunks_exact(2).map(|c| Dd::new(c[0], c[1])).collect();
        Some(HyperStats { k, count: v[0] as u64, sum: dd[..k].to_vec(), outer: dd[k..].to_vec() })
    }
}

/// Parameters of the Normal-Wishart posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalWishartPosterior {
    pub mu: Vec<f64>,
    pub beta: f64,
    pub nu: f64,
    /// Inverse of the posterior Wishart scale.
    pub w_inv: SquareMatrix,
}

pub fn posterior(stats: &HyperStats, prior: &HyperPrior) -> NormalWishartPosterior {
    let k = prior.k();
    assert_eq!(stats.k, k);
    if stats.count == 0 {
        return NormalWishartPosterior {
            mu: prior.mu0.clone(),
            beta: prior.beta0,
            nu: prior.nu0,
            w_inv: prior.w0_inv.clone(),
        };
    }
    let n = stats.count as f64;
    let nd = Dd::from_f64(n);
    let beta = prior.beta0 + n;
    let betad = Dd::from_f64(beta);
    let mean: Vec<Dd> = stats.sum.iter().map(|&s| s / nd).collect();
    let mu: Vec<f64> = (0..k)
        .map(|i| ((Dd::from_f64(prior.beta0).mul_f64(prior.mu0[i]) + stats.sum[i]) / betad).to_f64())
        .collect();
    let shrink = Dd::from_f64(prior.beta0) * nd / betad;
    let d: Vec<Dd> = (0..k).map(|i| Dd::from_f64(prior.mu0[i]) - mean[i]).collect();
    let mut w_inv = SquareMatrix::zeros(k);
    for i in 0..k {
        for j in 0..=i {
            // N·S = Σ x xᵀ − N x̄ x̄ᵀ
            let scatter = stats.outer[packed(i, j)] - stats.sum[i] * mean[j];
            let v = Dd::from_f64(prior.w0_inv.get(i, j)) + scatter + shrink * d[i] * d[j];
            w_inv.set(i, j, v.to_f64());
            w_inv.set(j, i, v.to_f64());
        }
    }
    NormalWishartPosterior { mu, beta, nu: prior.nu0 + n, w_inv }
}

/// Draws (μ, Λ): Λ ~ Wishart(W*, ν*), then μ ~ N(μ*, (β*·Λ)⁻¹).
pub fn sample_posterior(post: &NormalWishartPosterior, stream: &mut RngStream) -> Result<GaussianParams, RandError> {
    let inv_scale = cholesky(&post.w_inv)?;
    let lambda = sample_wishart_prec(stream, &inv_scale, post.nu)?;
    let lambda_chol = cholesky(&lambda.symmetrized())?;
    let mean_prec = lambda_chol.scaled(post.beta.sqrt());
    let mu = sample_mvn_prec(stream, &post.mu, &mean_prec);
    Ok(GaussianParams { mu, lambda_chol })
}

pub fn sample_hyper_from_stats(stats: &HyperStats, prior: &HyperPrior, stream: &mut RngStream) -> Result<GaussianParams, RandError> {
    sample_posterior(&posterior(stats, prior), stream)
}

pub fn sample_hyper(items: &LatentMatrix, prior: &HyperPrior, stream: &mut RngStream) -> Result<GaussianParams, RandError> {
    let stats = HyperStats::from_rows(items, 0..items.count());
    sample_hyper_from_stats(&stats, prior, stream)
}
