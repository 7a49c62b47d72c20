//! The Gibbs sampler: hyperparameter draws, per-item conditional updates,
//! prediction and the iteration loop.

mod engine;
mod hyper;
mod update;

pub use engine::{predict_and_score, run, Engine, IterationReport, RunReport, ScorePartial};
pub use hyper::{
    posterior, sample_hyper, sample_hyper_from_stats, sample_posterior, GaussianParams, HyperPrior, HyperStats,
    NormalWishartPosterior, PriorError,
};
pub use update::{update_item, update_item_in, PhaseParams};

use crate::dist::exchange::CommError;
use crate::linalg::LinalgError;
use crate::rng::RandError;
use crate::sched::SchedulerPolicy;
use thiserror::Error;

/// Dense `count × k` row-major matrix of latent vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMatrix {
    count: usize,
    k: usize,
    rows: Vec<f64>,
}

impl LatentMatrix {
    pub fn zeros(count: usize, k: usize) -> Self {
        LatentMatrix { count, k, rows: vec![0.0; count * k] }
    }

    /// Panics if `rows.len()` is not a multiple of `k`.
    pub fn from_rows(k: usize, rows: Vec<f64>) -> Self {
        assert!(k > 0 && rows.len() % k == 0, "row data does not match k");
        LatentMatrix { count: rows.len() / k, k, rows }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.rows[i * self.k..(i + 1) * self.k]
    }

    pub fn set_row(&mut self, i: usize, v: &[f64]) {
        self.row_mut(i).copy_from_slice(v);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rows
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().all(|x| x.is_finite())
    }

    /// `self[i] += other[i]` for each listed row.
    pub fn add_rows(&mut self, other: &LatentMatrix, rows: &[usize]) {
        for &i in rows {
            for (a, b) in self.row_mut(i).iter_mut().zip(other.row(i)) {
                *a += b;
            }
        }
    }

    pub fn scaled(&self, s: f64) -> LatentMatrix {
        LatentMatrix { count: self.count, k: self.k, rows: self.rows.iter().map(|x| x * s).collect() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub k: usize,
    pub iterations: usize,
    pub burn_in: usize,
    /// Precision of the rating noise.
    pub alpha: f64,
    pub seed: u64,
    pub prior_u: HyperPrior,
    pub prior_v: HyperPrior,
    /// Predictions are clamped to this range when set.
    pub clamp: Option<(f64, f64)>,
    pub policy: SchedulerPolicy,
}

impl SamplerConfig {
    /// 100 iterations, 20 burn-in, α = 2, default priors, one thread.
    pub fn new(k: usize) -> Self {
        SamplerConfig {
            k,
            iterations: 100,
            burn_in: 20,
            alpha: 2.0,
            seed: 0,
            prior_u: HyperPrior::default_for(k),
            prior_v: HyperPrior::default_for(k),
            clamp: None,
            policy: SchedulerPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |msg: String| Err(SamplerError::Config(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.burn_in > self.iterations {
            return bad(format!("burn-in {} exceeds iterations {}", self.burn_in, self.iterations));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.prior_u.k() != self.k || self.prior_v.k() != self.k {
            return bad("prior dimension differs from k".into());
        }
        if self.policy.threads == 0 || self.policy.threshold == 0 || self.policy.parallel_chunk == 0 {
            return bad("threads, threshold and parallel chunk must be at least 1".into());
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo <= hi) {
                return bad(format!("clamp range [{lo}, {hi}] is empty"));
            }
        }
        Ok(())
    }
}

/// Which side a phase updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Users,
    Movies,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Users => "user",
            Phase::Movies => "movie",
        })
    }
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("iteration {iteration}, {phase} {item}: {source}")]
    Item { iteration: usize, phase: Phase, item: usize, source: LinalgError },
    #[error("iteration {iteration}, {phase} {item}: update panicked: {message}")]
    Panicked { iteration: usize, phase: Phase, item: usize, message: String },
    #[error("iteration {iteration}, {phase} hyperparameters: {source}")]
    Hyper { iteration: usize, phase: Phase, source: RandError },
    #[error("iteration {iteration}: {source}")]
    Exchange { iteration: usize, source: CommError },
    #[error("ratings reference {got} {what} but the model has {expected}")]
    Shape { what: &'static str, expected: usize, got: usize },
}

/// Chain state. Accumulated sums hold the post-burn-in samples of the rows
/// this process owns.
#[derive(Clone, Debug)]
pub struct SamplerState {
    pub iteration: usize,
    pub alpha: f64,
    pub u: LatentMatrix,
    pub v: LatentMatrix,
    pub hyper_u: GaussianParams,
    pub hyper_v: GaussianParams,
    pub u_sum: LatentMatrix,
    pub v_sum: LatentMatrix,
    /// Running sum of post-burn-in predictions, one per test point.
    pub pred_sum: Vec<f64>,
    pub pred_count: usize,
}
