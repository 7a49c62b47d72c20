//! Iteration loop: hyperparameters and item updates for movies, then users,
//! then prediction.

use super::{
    sample_hyper_from_stats, update_item_in, GaussianParams, HyperStats, LatentMatrix, Phase, PhaseParams,
    SamplerConfig, SamplerError, SamplerState,
};
use crate::data::{RatingTriplet, RatingsMatrix};
use crate::dist::exchange::Exchanger;
use crate::dist::ItemKind;
use crate::real::{Dd, Real};
use crate::rng::{std_normal, stream_for, Side, StreamKey};
use crate::sched::{run_items, select_algorithm, SchedError};
use crate::timing::{ActivityClock, PhaseTimes};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

const TAG_HYPER_MOVIES: u8 = 0;
const TAG_HYPER_USERS: u8 = 1;
const TAG_SCORE: u8 = 2;
const TAG_MEAN_USERS: u8 = 3;
const TAG_MEAN_MOVIES: u8 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub rmse_sample: f64,
    pub rmse_avg: f64,
    pub updates_per_sec: f64,
    pub timing: PhaseTimes,
    pub wall_s: f64,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub history: Vec<IterationReport>,
    pub final_rmse_sample: Option<f64>,
    pub final_rmse_avg: Option<f64>,
    /// Posterior means, or the last sample when nothing was accumulated.
    pub u_mean: LatentMatrix,
    pub v_mean: LatentMatrix,
}

/// Squared-error sums over a set of test points; mergeable across nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScorePartial {
    pub count: u64,
    pub sq_sample: Dd,
    pub sq_avg: Dd,
}

impl ScorePartial {
    pub fn zero() -> Self {
        ScorePartial { count: 0, sq_sample: Dd::ZERO, sq_avg: Dd::ZERO }
    }

    pub fn merge(&mut self, other: &ScorePartial) {
        self.count += other.count;
        self.sq_sample += other.sq_sample;
        self.sq_avg += other.sq_avg;
    }

    pub fn to_flat(&self) -> Vec<f64> {
        vec![self.count as f64, self.sq_sample.hi(), self.sq_sample.lo(), self.sq_avg.hi(), self.sq_avg.lo()]
    }

    pub fn from_flat(v: &[f64]) -> Option<Self> {
        match v {
            &[n, a, b, c, d] if n >= 0.0 && n.fract() == 0.0 => {
                Some(ScorePartial { count: n as u64, sq_sample: Dd::new(a, b), sq_avg: Dd::new(c, d) })
            }
            _ => None,
        }
    }

    /// `(rmse_sample, rmse_avg)`; zero for an empty test set. Without
    /// accumulated predictions the average equals the sample.
    pub fn rmse(&self, have_average: bool) -> (f64, f64) {
        if self.count == 0 {
            return (0.0, 0.0);
        }
        let n = Dd::from_f64(self.count as f64);
        let sample = (self.sq_sample / n).sqrt().to_f64();
        let avg = if have_average { (self.sq_avg / n).sqrt().to_f64() } else { sample };
        (sample, avg)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Predicts every test point from the current sample, accumulating into the
/// running average once the chain is past burn-in, and returns the local
/// squared-error sums.
pub fn score_partial(
    state: &mut SamplerState,
    test: &[RatingTriplet],
    burn_in: usize,
    clamp: Option<(f64, f64)>,
) -> ScorePartial {
    let accumulate = state.iteration > burn_in;
    if accumulate {
        state.pred_count += 1;
    }
    let mut out = ScorePartial::zero();
    for (i, t) in test.iter().enumerate() {
        let mut p = dot(state.u.row(t.user), state.v.row(t.movie));
        if let Some((lo, hi)) = clamp {
            p = p.clamp(lo, hi);
        }
        let e = p - t.value;
        out.sq_sample = out.sq_sample.add_prod(e, e);
        if accumulate {
            state.pred_sum[i] += p;
            let e = state.pred_sum[i] / state.pred_count as f64 - t.value;
            out.sq_avg = out.sq_avg.add_prod(e, e);
        }
        out.count += 1;
    }
    out
}

/// `(rmse_sample, rmse_avg)` over `test` for the current state.
pub fn predict_and_score(
    state: &mut SamplerState,
    test: &[RatingTriplet],
    burn_in: usize,
    clamp: Option<(f64, f64)>,
) -> (f64, f64) {
    let partial = score_partial(state, test, burn_in, clamp);
    partial.rmse(state.pred_count > 0)
}

/// Runs the sampler on this process's share of the items. With no
/// exchanger, this process owns everything.
pub struct Engine<'a> {
    config: SamplerConfig,
    train: &'a RatingsMatrix,
    test: Vec<RatingTriplet>,
    owned_users: Vec<usize>,
    owned_movies: Vec<usize>,
    exchanger: Option<&'a Exchanger>,
    clock: Arc<ActivityClock>,
    state: SamplerState,
}

fn initial_matrix(seed: u64, count: usize, k: usize, parity: u64) -> LatentMatrix {
    let mut rows = Vec::with_capacity(count * k);
    for i in 0..count {
        let mut s = stream_for(StreamKey::new(seed, 0, Side::Noise, 2 * i as u64 + parity));
        rows.extend(std_normal(&mut s, k));
    }
    LatentMatrix { count, k, rows }
}

impl<'a> Engine<'a> {
    pub fn new(config: SamplerConfig, train: &'a RatingsMatrix, test: &[RatingTriplet]) -> Result<Self, SamplerError> {
        let users = (0..train.m()).collect();
        let movies = (0..train.n()).collect();
        Self::build(config, train, test.to_vec(), users, movies, None, Arc::new(ActivityClock::new()))
    }

    /// One node of a distributed run: `test` is this node's shard and the
    /// exchanger's clock is shared so overlap is measured.
    pub fn distributed(
        config: SamplerConfig,
        train: &'a RatingsMatrix,
        test: Vec<RatingTriplet>,
        owned_users: Vec<usize>,
        owned_movies: Vec<usize>,
        exchanger: &'a Exchanger,
    ) -> Result<Self, SamplerError> {
        let clock = exchanger.clock();
        Self::build(config, train, test, owned_users, owned_movies, Some(exchanger), clock)
    }

    fn build(
        config: SamplerConfig,
        train: &'a RatingsMatrix,
        test: Vec<RatingTriplet>,
        owned_users: Vec<usize>,
        owned_movies: Vec<usize>,
        exchanger: Option<&'a Exchanger>,
        clock: Arc<ActivityClock>,
    ) -> Result<Self, SamplerError> {
        config.validate()?;
        let (m, n, k) = (train.m(), train.n(), config.k);
        for t in &test {
            if t.user >= m {
                return Err(SamplerError::Shape { what: "users", expected: m, got: t.user + 1 });
            }
            if t.movie >= n {
                return Err(SamplerError::Shape { what: "movies", expected: n, got: t.movie + 1 });
            }
        }
        let state = SamplerState {
            iteration: 0,
            alpha: config.alpha,
            u: initial_matrix(config.seed, m, k, 0),
            v: initial_matrix(config.seed, n, k, 1),
            hyper_u: GaussianParams::standard(k),
            hyper_v: GaussianParams::standard(k),
            u_sum: LatentMatrix::zeros(m, k),
            v_sum: LatentMatrix::zeros(n, k),
            pred_sum: vec![0.0; test.len()],
            pred_count: 0,
        };
        Ok(Engine { config, train, test, owned_users, owned_movies, exchanger, clock, state })
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn is_done(&self) -> bool {
        self.state.iteration >= self.config.iterations
    }

    fn hyper(&mut self, phase: Phase, t: usize) -> Result<GaussianParams, SamplerError> {
        let (items, owned, prior, tag, slot) = match phase {
            Phase::Movies => (&self.state.v, &self.owned_movies, &self.config.prior_v, TAG_HYPER_MOVIES, 0),
            Phase::Users => (&self.state.u, &self.owned_users, &self.config.prior_u, TAG_HYPER_USERS, 1),
        };
        let mut stats = HyperStats::from_rows(items, owned.iter().copied());
        if let Some(ex) = self.exchanger {
            let parts = ex
                .allgather(t as u32, tag, stats.to_flat())
                .map_err(|source| SamplerError::Exchange { iteration: t, source })?;
            stats = HyperStats::zeros(self.config.k);
            for (node, flat) in parts.iter().enumerate() {
                let s = HyperStats::from_flat(self.config.k, flat).ok_or_else(|| SamplerError::Exchange {
                    iteration: t,
                    source: crate::dist::exchange::CommError::Malformed { peer: node, what: "hyper statistics".into() },
                })?;
                stats.merge(&s);
            }
        }
        let mut stream = stream_for(StreamKey::new(self.config.seed, t as u64, Side::Hyper, slot));
        sample_hyper_from_stats(&stats, prior, &mut stream).map_err(|source| SamplerError::Hyper { iteration: t, phase, source })
    }

    fn run_phase(&mut self, phase: Phase, t: usize) -> Result<(), SamplerError> {
        let cfg = &self.config;
        let (other, owned, ratings, params, side, kind) = match phase {
            Phase::Movies => (&self.state.u, &self.owned_movies, self.train.by_movie(), &self.state.hyper_v, Side::Movies, ItemKind::Movie),
            Phase::Users => (&self.state.v, &self.owned_users, self.train.by_user(), &self.state.hyper_u, Side::Users, ItemKind::User),
        };
        let pp = PhaseParams::new(params, cfg.alpha);
        let loads: Vec<usize> = owned.iter().map(|&i| ratings.row_nnz(i)).collect();
        let publisher = self.exchanger.map(|ex| ex.publisher(kind, t as u32));
        let outcome = {
            let _busy = self.clock.compute();
            run_items(&loads, &cfg.policy, |pos, ctx| {
                let item = owned[pos];
                let (idx, vals) = ratings.row(item);
                let choice = select_algorithm(idx.len(), cfg.k, &cfg.policy);
                let mut stream = stream_for(StreamKey::new(cfg.seed, t as u64, side, item as u64));
                let x = update_item_in(idx, vals, other, &pp, &mut stream, choice, Some(ctx))?;
                if let Some(p) = &publisher {
                    p.publish(item, &x);
                }
                Ok(x)
            })
        };
        let rows = match outcome {
            Ok((rows, _)) => rows,
            Err(SchedError::TaskFailed { item, error }) => {
                return Err(SamplerError::Item { iteration: t, phase, item: owned[item], source: error })
            }
            Err(SchedError::TaskPanicked { item, message }) => {
                return Err(SamplerError::Panicked { iteration: t, phase, item: owned[item], message })
            }
        };
        let owned = owned.clone();
        let target = match phase {
            Phase::Movies => &mut self.state.v,
            Phase::Users => &mut self.state.u,
        };
        for (item, x) in owned.iter().zip(&rows) {
            target.set_row(*item, x);
        }
        if let Some(ex) = self.exchanger {
            let received = ex.end_phase(kind, t as u32).map_err(|source| SamplerError::Exchange { iteration: t, source })?;
            for (item, x) in received {
                target.set_row(item, &x);
            }
        }
        Ok(())
    }

    /// One full iteration.
    pub fn step(&mut self) -> Result<IterationReport, SamplerError> {
        let t = self.state.iteration + 1;
        let started = Instant::now();
        let before = self.clock.snapshot();

        self.state.hyper_v = self.hyper(Phase::Movies, t)?;
        self.run_phase(Phase::Movies, t)?;
        self.state.hyper_u = self.hyper(Phase::Users, t)?;
        self.run_phase(Phase::Users, t)?;
        self.state.iteration = t;

        if t > self.config.burn_in {
            self.state.u_sum.add_rows(&self.state.u, &self.owned_users);
            self.state.v_sum.add_rows(&self.state.v, &self.owned_movies);
        }
        let mut score = score_partial(&mut self.state, &self.test, self.config.burn_in, self.config.clamp);
        if let Some(ex) = self.exchanger {
            let parts = ex
                .allgather(t as u32, TAG_SCORE, score.to_flat())
                .map_err(|source| SamplerError::Exchange { iteration: t, source })?;
            score = ScorePartial::zero();
            for (node, flat) in parts.iter().enumerate() {
                let s = ScorePartial::from_flat(flat).ok_or_else(|| SamplerError::Exchange {
                    iteration: t,
                    source: crate::dist::exchange::CommError::Malformed { peer: node, what: "score partial".into() },
                })?;
                score.merge(&s);
            }
        }
        let (rmse_sample, rmse_avg) = score.rmse(self.state.pred_count > 0);

        let wall = started.elapsed().as_secs_f64();
        let items = (self.train.m() + self.train.n()) as f64;
        Ok(IterationReport {
            iteration: t,
            rmse_sample,
            rmse_avg,
            updates_per_sec: if wall > 0.0 { items / wall } else { 0.0 },
            timing: self.clock.snapshot().since(&before),
            wall_s: wall,
        })
    }

    /// Posterior means of the owned rows (the current sample if nothing was
    /// accumulated); in a distributed run the rows of all nodes are
    /// gathered so every node returns full matrices.
    pub fn posterior_means(&self) -> Result<(LatentMatrix, LatentMatrix), SamplerError> {
        let s = &self.state;
        let (mut u, mut v) = if s.pred_count == 0 {
            (s.u.clone(), s.v.clone())
        } else {
            let c = 1.0 / s.pred_count as f64;
            (s.u_sum.scaled(c), s.v_sum.scaled(c))
        };
        if let Some(ex) = self.exchanger {
            let t = s.iteration as u32;
            for (tag, matrix, owned) in
                [(TAG_MEAN_USERS, &mut u, &self.owned_users), (TAG_MEAN_MOVIES, &mut v, &self.owned_movies)]
            {
                let k = matrix.k();
                let mut flat = Vec::with_capacity(owned.len() * (k + 1));
                for &i in owned {
                    flat.push(i as f64);
                    flat.extend_from_slice(matrix.row(i));
                }
                let parts = ex.allgather(t, tag, flat).map_err(|source| SamplerError::Exchange { iteration: s.iteration, source })?;
                for (node, part) in parts.iter().enumerate() {
                    if part.len() % (k + 1) != 0 {
                        return Err(SamplerError::Exchange {
                            iteration: s.iteration,
                            source: crate::dist::exchange::CommError::Malformed { peer: node, what: "posterior rows".into() },
                        });
                    }
                    for chunk in part.chunks_exact(k + 1) {
                        let i = chunk[0] as usize;
                        if i < matrix.count() {
                            matrix.set_row(i, &chunk[1..]);
                        }
                    }
                }
            }
        }
        Ok((u, v))
    }

    /// Runs the remaining iterations.
    pub fn run(mut self) -> Result<RunReport, SamplerError> {
        let mut history = Vec::with_capacity(self.config.iterations);
        while !self.is_done() {
            history.push(self.step()?);
        }
        let (u_mean, v_mean) = self.posterior_means()?;
        Ok(RunReport {
            final_rmse_sample: history.last().map(|r| r.rmse_sample),
            final_rmse_avg: history.last().map(|r| r.rmse_avg),
            history,
            u_mean,
            v_mean,
        })
    }
}

/// Single-process run over all items.
pub fn run(config: SamplerConfig, train: &RatingsMatrix, test: &[RatingTriplet]) -> Result<RunReport, SamplerError> {
    Engine::new(config, train, test)?.run()
}
