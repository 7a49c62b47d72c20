//! Conditional draw of one user or movie vector.
//!
//! All three methods accumulate in double-double and round once at the end,
//! so their outputs agree bit for bit except when a result lies within
//! about 1e-30 (relative) of a rounding boundary.

use crate::linalg::{cholesky, tri_solve, GramPartial, LinalgError, LowerTriangular, SquareMatrix};
use crate::real::{Dd, Real};
use crate::rng::{std_normal, RngStream};
use crate::sampler::{GaussianParams, LatentMatrix};
use crate::sched::{AlgorithmChoice, WorkerCtx};

/// Quantities shared by every item update of one phase.
#[derive(Clone, Debug)]
pub struct PhaseParams {
    k: usize,
    alpha: f64,
    sqrt_alpha: Dd,
    prior_chol: LowerTriangular<Dd>,
    prior_prec: SquareMatrix<Dd>,
    prior_shift: Vec<Dd>,
}

impl PhaseParams {
    pub fn new(params: &GaussianParams, alpha: f64) -> Self {
        let prior_chol = LowerTriangular::<Dd>::from_f64(&params.lambda_chol);
        let prior_prec = prior_chol.reconstruct();
        let mu: Vec<Dd> = params.mu.iter().map(|&x| Dd::from_f64(x)).collect();
        let prior_shift = prior_prec.mul_vec(&mu);
        PhaseParams { k: params.mu.len(), alpha, sqrt_alpha: Dd::from_f64(alpha).sqrt(), prior_chol, prior_prec, prior_shift }
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

fn gram_range(k: usize, others: &[u32], values: &[f64], other: &LatentMatrix) -> GramPartial<Dd> {
    let mut g = GramPartial::zeros(k);
    for (&j, &r) in others.iter().zip(values) {
        g.push(other.row(j as usize), r);
    }
    g
}

/// Draws an item vector from N(μ*, (Λ*)⁻¹) with Λ* = Λ + α Σ o oᵀ and
/// Λ* μ* = Λ μ + α Σ r o over the item's ratings `(others[j], values[j])`.
///
/// `ctx` lets `ParallelChol` spread its chunks over the pool; without it the
/// chunks run in order on the calling thread.
pub fn update_item_in(
    others: &[u32],
    values: &[f64],
    other: &LatentMatrix,
    pp: &PhaseParams,
    stream: &mut RngStream,
    choice: AlgorithmChoice,
    ctx: Option<&WorkerCtx<'_>>,
) -> Result<Vec<f64>, LinalgError> {
    if others.len() != values.len() {
        return Err(LinalgError::LengthMismatch { rows: others.len(), weights: values.len() });
    }
    let k = pp.k;
    let alpha = Dd::from_f64(pp.alpha);
    let (factor, weighted) = match choice {
        AlgorithmChoice::RankOne => {
            let mut l = pp.prior_chol.clone();
            let mut weighted = vec![Dd::ZERO; k];
            let mut x = vec![Dd::ZERO; k];
            for (&j, &r) in others.iter().zip(values) {
                let o = other.row(j as usize);
                for i in 0..k {
                    x[i] = pp.sqrt_alpha.mul_f64(o[i]);
                    weighted[i] = weighted[i].add_prod(r, o[i]);
                }
                l.rank1_update_in_place(&mut x);
            }
            (l, weighted)
        }
        AlgorithmChoice::FullChol | AlgorithmChoice::ParallelChol(_) => {
            let partial = match choice {
                AlgorithmChoice::ParallelChol(chunks) if chunks > 1 && !others.is_empty() => {
                    let size = others.len().div_ceil(chunks);
                    let n = others.len().div_ceil(size);
                    let run = |c: usize| {
                        let lo = c * size;
                        let hi = (lo + size).min(others.len());
                        gram_range(k, &others[lo..hi], &values[lo..hi], other)
                    };
                    let parts = match ctx {
                        Some(ctx) => ctx.run_chunks(n, run),
                        None => (0..n).map(run).collect(),
                    };
                    let mut acc = GramPartial::zeros(k);
                    for p in &parts {
                        acc.merge(p);
                    }
                    acc
                }
                _ => gram_range(k, others, values, other),
            };
            let (gram, weighted) = partial.finish();
            let prec = pp.prior_prec.add(&gram.scaled(alpha));
            (cholesky(&prec)?, weighted)
        }
    };
    let weighted: Vec<Dd> = weighted.into_iter().map(|w| w * alpha).collect();
    let b: Vec<Dd> = pp.prior_shift.iter().zip(&weighted).map(|(&s, &w)| s + w).collect();
    let mut y = tri_solve(&factor, &b, false);
    for (yi, z) in y.iter_mut().zip(std_normal(stream, k)) {
        *yi += Dd::from_f64(z);
    }
    let x = tri_solve(&factor, &y, true);
    Ok(x.into_iter().map(|v| v.to_f64()).collect())
}

/// Single-threaded form of [`update_item_in`].
pub fn update_item(
    others: &[u32],
    values: &[f64],
    other: &LatentMatrix,
    params: &GaussianParams,
    alpha: f64,
    stream: &mut RngStream,
    choice: AlgorithmChoice,
) -> Result<Vec<f64>, LinalgError> {
    update_item_in(others, values, other, &PhaseParams::new(params, alpha), stream, choice, None)
}
