//! Shared-memory execution of one phase.
//!
//! Items are dealt out in contiguous, workload-balanced blocks to per-worker
//! deques. Idle workers steal from a random victim. A task may split its
//! item into chunk sub-tasks with [`WorkerCtx::run_chunks`]; those are pushed
//! on the owner's deque where thieves can pick them up, and the owner helps
//! execute pending work until its chunks are done.

use crossbeam_deque::{Steal, Stealer, Worker};
use std::any::Any;
use std::cell::Cell;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Per-item update method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AlgorithmChoice {
    /// Start from the prior factor and apply one rank-one update per rating.
    RankOne,
    /// Accumulate the Gram matrix, then factorize once.
    FullChol,
    /// Like `FullChol`, with the accumulation split into this many chunks
    /// that may run on different workers.
    ParallelChol(usize),
}

/// Forces one method for every item, bypassing [`select_algorithm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForcedAlgorithm {
    RankOne,
    FullChol,
    ParallelChol,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerPolicy {
    pub threads: usize,
    /// Items with at least this many ratings use the parallel method.
    pub threshold: usize,
    /// Ratings per sub-task for heavy items.
    pub parallel_chunk: usize,
    pub deterministic: bool,
    pub force: Option<ForcedAlgorithm>,
}

impl Default for SchedulerPolicy {
    fn default() -> Self {
        SchedulerPolicy { threads: 1, threshold: 1000, parallel_chunk: 256, deterministic: true, force: None }
    }
}

impl SchedulerPolicy {
    pub fn with_threads(threads: usize) -> Self {
        SchedulerPolicy { threads, ..Default::default() }
    }
}

pub fn select_algorithm(nnz: usize, _k: usize, policy: &SchedulerPolicy) -> AlgorithmChoice {
    let chunks = nnz.div_ceil(policy.parallel_chunk.max(1)).max(2);
    match policy.force {
        Some(ForcedAlgorithm::RankOne) => AlgorithmChoice::RankOne,
        Some(ForcedAlgorithm::FullChol) => AlgorithmChoice::FullChol,
        Some(ForcedAlgorithm::ParallelChol) => AlgorithmChoice::ParallelChol(chunks),
        None if nnz < policy.threshold => AlgorithmChoice::RankOne,
        None => AlgorithmChoice::ParallelChol(chunks),
    }
}

#[derive(Debug, Error)]
pub enum SchedError<E> {
    #[error("task for item {item} panicked: {message}")]
    TaskPanicked { item: usize, message: String },
    #[error("task for item {item} failed: {error}")]
    TaskFailed { item: usize, error: E },
}

/// What happened during one [`run_items`] call.
#[derive(Clone, Debug, Default)]
pub struct RunStats {
    pub wall: Duration,
    /// Time each worker spent inside top-level tasks.
    pub busy: Vec<Duration>,
    pub items_per_worker: Vec<usize>,
    pub steals: usize,
    pub chunks_executed: usize,
}

impl RunStats {
    /// Largest fraction of wall time any worker spent outside tasks.
    pub fn max_idle_fraction(&self) -> f64 {
        let wall = self.wall.as_secs_f64();
        if wall == 0.0 {
            return 0.0;
        }
        self.busy.iter().map(|b| 1.0 - b.as_secs_f64() / wall).fold(0.0, f64::max)
    }
}

trait ChunkJob {
    fn execute(&self, chunk: usize);
}

struct ChunkJobImpl<'f, T, F> {
    f: &'f F,
    slots: Vec<Mutex<Option<T>>>,
    remaining: AtomicUsize,
    panic: Mutex<Option<Box<dyn Any + Send>>>,
}

impl<T: Send, F: Fn(usize) -> T + Sync> ChunkJob for ChunkJobImpl<'_, T, F> {
    fn execute(&self, chunk: usize) {
        match panic::catch_unwind(AssertUnwindSafe(|| (self.f)(chunk))) {
            Ok(v) => *self.slots[chunk].lock().unwrap() = Some(v),
            Err(p) => {
                self.panic.lock().unwrap().get_or_insert(p);
            }
        }
        // Last access to `self`; the owner may free the job once it observes zero.
        self.remaining.fetch_sub(1, Ordering::AcqRel);
    }
}

#[derive(Clone, Copy)]
struct JobPtr(*const (dyn ChunkJob + 'static));

// SAFETY: the pointee is only shared while its owner blocks in `run_chunks`,
// and every `ChunkJob` implementation is `Sync` in what it touches.
unsafe impl Send for JobPtr {}

enum Task {
    Item(usize),
    Chunk(JobPtr, usize),
}

struct Shared<'a, T, E> {
    stealers: Vec<Stealer<Task>>,
    run_item: &'a (dyn Fn(usize, &WorkerCtx<'_>) -> Result<T, E> + Sync),
    results: Vec<Mutex<Option<T>>>,
    done_items: AtomicUsize,
    total_items: usize,
    abort: AtomicBool,
    failure: Mutex<Option<(usize, Failure<E>)>>,
    steals: AtomicUsize,
    chunks: AtomicUsize,
}

enum Failure<E> {
    Panic(String),
    Error(E),
}

/// Handle passed to every task; lets a task fan its item out into chunks.
pub struct WorkerCtx<'a> {
    index: usize,
    local: &'a Worker<Task>,
    stealers: &'a [Stealer<Task>],
    exec: &'a (dyn Fn(Task, &WorkerCtx<'_>) + Sync),
    rng: Cell<u64>,
    items: Cell<usize>,
}

impl<'a> WorkerCtx<'a> {
    pub fn worker_index(&self) -> usize {
        self.index
    }

    pub fn worker_count(&self) -> usize {
        self.stealers.len()
    }

    fn find_task(&self) -> Option<Task> {
        if let Some(t) = self.local.pop() {
            return Some(t);
        }
        let n = self.stealers.len();
        if n <= 1 {
            return None;
        }
        let mut x = self.rng.get();
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.rng.set(x);
        let start = (x % n as u64) as usize;
        for off in 0..n {
            let victim = (start + off) % n;
            if victim == self.index {
                continue;
            }
            loop {
                match self.stealers[victim].steal() {
                    Steal::Success(t) => return Some(t),
                    Steal::Retry => continue,
                    Steal::Empty => break,
                }
            }
        }
        None
    }

    /// Runs `f(0..n)` and returns the results in chunk order. Chunks other
    /// than the first are offered to thieves; this worker executes pending
    /// work until all of them have finished.
    pub fn run_chunks<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T> {
        if n <= 1 || self.stealers.len() <= 1 {
            return (0..n).map(&f).collect();
        }
        let job = ChunkJobImpl {
            f: &f,
            slots: (0..n).map(|_| Mutex::new(None)).collect(),
            remaining: AtomicUsize::new(n),
            panic: Mutex::new(None),
        };
        let dyn_job: &(dyn ChunkJob + '_) = &job;
        // SAFETY: lifetime erasure only; this frame outlives every use of the
        // pointer because we do not return before `remaining` reaches zero.
        let ptr = JobPtr(unsafe { std::mem::transmute::<*const (dyn ChunkJob + '_), *const (dyn ChunkJob + 'static)>(dyn_job) });
        for c in (1..n).rev() {
            self.local.push(Task::Chunk(ptr, c));
        }
        job.execute(0);
        while job.remaining.load(Ordering::Acquire) > 0 {
            match self.find_task() {
                Some(t) => (self.exec)(t, self),
                None => std::thread::yield_now(),
            }
        }
        if let Some(p) = job.panic.lock().unwrap().take() {
            panic::resume_unwind(p);
        }
        job.slots.into_iter().map(|s| s.into_inner().unwrap().expect("chunk result")).collect()
    }
}

fn panic_message(p: &(dyn Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

/// Deals items `0..loads.len()` into `workers` contiguous blocks of roughly
/// equal summed load.
fn deal(loads: &[usize], workers: usize) -> Vec<std::ops::Range<usize>> {
    let cost: Vec<f64> = loads.iter().map(|&l| 1.0 + l as f64).collect();
    let total: f64 = cost.iter().sum();
    let mut out = Vec::with_capacity(workers);
    let mut start = 0;
    let mut acc = 0.0;
    for w in 0..workers {
        let target = total * (w + 1) as f64 / workers as f64;
        let mut end = start;
        while end < loads.len() && (w + 1 == workers || acc + cost[end] * 0.5 <= target) {
            acc += cost[end];
            end += 1;
        }
        out.push(start..end);
        start = end;
    }
    out
}

/// Executes `task` once for every item `0..loads.len()` on `policy.threads`
/// workers with work stealing. `loads[i]` is item i's rating count, used for
/// the initial deal. Results come back in item order.
///
/// A failing or panicking task aborts the remaining items; the error with
/// the smallest item index among those observed is returned.
pub fn run_items<T, E, F>(loads: &[usize], policy: &SchedulerPolicy, task: F) -> Result<(Vec<T>, RunStats), SchedError<E>>
where
    T: Send,
    E: Send,
    F: Fn(usize, &WorkerCtx<'_>) -> Result<T, E> + Sync,
{
    let start = Instant::now();
    let n = loads.len();
    let threads = policy.threads.max(1);
    let deques: Vec<Worker<Task>> = (0..threads).map(|_| Worker::new_lifo()).collect();
    for (w, range) in deal(loads, threads).into_iter().enumerate() {
        for i in range.rev() {
            deques[w].push(Task::Item(i));
        }
    }
    let shared = Shared {
        stealers: deques.iter().map(|d| d.stealer()).collect(),
        run_item: &task,
        results: (0..n).map(|_| Mutex::new(None)).collect(),
        done_items: AtomicUsize::new(0),
        total_items: n,
        abort: AtomicBool::new(false),
        failure: Mutex::new(None),
        steals: AtomicUsize::new(0),
        chunks: AtomicUsize::new(0),
    };

    let mut busy = vec![Duration::ZERO; threads];
    let mut items_per_worker = vec![0usize; threads];
    let worker_loop = |index: usize, local: Worker<Task>| -> (Duration, usize) {
        let shared = &shared;
        let exec = |t: Task, ctx: &WorkerCtx<'_>| match t {
            Task::Chunk(ptr, c) => {
                shared.chunks.fetch_add(1, Ordering::Relaxed);
                // SAFETY: see `JobPtr`.
                unsafe { (*ptr.0).execute(c) }
            }
            Task::Item(i) => {
                ctx.items.set(ctx.items.get() + 1);
                if !shared.abort.load(Ordering::Relaxed) {
                    let out = panic::catch_unwind(AssertUnwindSafe(|| (shared.run_item)(i, ctx)));
                    let fail = match out {
                        Ok(Ok(v)) => {
                            *shared.results[i].lock().unwrap() = Some(v);
                            None
                        }
                        Ok(Err(e)) => Some(Failure::Error(e)),
                        Err(p) => Some(Failure::Panic(panic_message(p.as_ref()))),
                    };
                    if let Some(f) = fail {
                        shared.abort.store(true, Ordering::Relaxed);
                        let mut slot = shared.failure.lock().unwrap();
                        if slot.as_ref().map_or(true, |(j, _)| i < *j) {
                            *slot = Some((i, f));
                        }
                    }
                }
                shared.done_items.fetch_add(1, Ordering::AcqRel);
            }
        };
        let ctx = WorkerCtx {
            index,
            local: &local,
            stealers: &shared.stealers,
            exec: &exec,
            rng: Cell::new(0x9E37_79B9_7F4A_7C15 ^ (index as u64 + 1).wrapping_mul(0xD6E8_FEB8_6659_FD93)),
            items: Cell::new(0),
        };
        let mut busy = Duration::ZERO;
        while shared.done_items.load(Ordering::Acquire) < shared.total_items {
            let own = ctx.local.pop();
            let task = match own {
                Some(t) => Some(t),
                None => {
                    let t = ctx.find_task();
                    if t.is_some() {
                        shared.steals.fetch_add(1, Ordering::Relaxed);
                    }
                    t
                }
            };
            match task {
                Some(t) => {
                    let t0 = Instant::now();
                    exec(t, &ctx);
                    busy += t0.elapsed();
                }
                None => std::thread::yield_now(),
            }
        }
        (busy, ctx.items.get())
    };

    let mut deques = deques.into_iter();
    let first = deques.next().expect("at least one worker");
    std::thread::scope(|s| {
        let handles: Vec<_> = deques
            .enumerate()
            .map(|(i, d)| {
                let worker_loop = &worker_loop;
                s.spawn(move || worker_loop(i + 1, d))
            })
            .collect();
        let (b, it) = worker_loop(0, first);
        busy[0] = b;
        items_per_worker[0] = it;
        for (i, h) in handles.into_iter().enumerate() {
            let (b, it) = h.join().expect("scheduler worker panicked outside a task");
            busy[i + 1] = b;
            items_per_worker[i + 1] = it;
        }
    });

    let stats = RunStats {
        wall: start.elapsed(),
        busy,
        items_per_worker,
        steals: shared.steals.load(Ordering::Relaxed),
        chunks_executed: shared.chunks.load(Ordering::Relaxed),
    };
    if let Some((item, f)) = shared.failure.into_inner().unwrap() {
        return Err(match f {
            Failure::Panic(message) => SchedError::TaskPanicked { item, message },
            Failure::Error(error) => SchedError::TaskFailed { item, error },
        });
    }
    let results = shared.results.into_iter().map(|r| r.into_inner().unwrap().expect("every item ran")).collect();
    Ok((results, stats))
}

/// One timing of [`benchmark_update_methods`].
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub method: ForcedAlgorithm,
    pub nnz: usize,
    /// Median over the repetitions.
    pub seconds: f64,
}

/// Times one item update per method and rating count. The other side's
/// rows and the ratings are random; `ParallelChol` runs its chunks on
/// `threads` workers with the default chunk size.
pub fn benchmark_update_methods(k: usize, nnz_grid: &[usize], repetitions: usize, threads: usize) -> Vec<BenchRow> {
    use crate::rng::{stream_for, Side, StreamKey};
    use crate::sampler::{update_item_in, GaussianParams, LatentMatrix, PhaseParams};

    let repetitions = repetitions.max(1);
    let params = GaussianParams::standard(k);
    let pp = PhaseParams::new(&params, 2.0);
    let mut rows = Vec::new();
    for &nnz in nnz_grid {
        let mut s = stream_for(StreamKey::new(0, nnz as u64, Side::Noise, 7));
        let other = LatentMatrix::from_rows(k, (0..nnz.max(1) * k).map(|_| s.normal()).collect());
        let others: Vec<u32> = (0..nnz as u32).collect();
        let values: Vec<f64> = (0..nnz).map(|_| s.normal()).collect();
        let policy = SchedulerPolicy { force: Some(ForcedAlgorithm::ParallelChol), ..SchedulerPolicy::with_threads(threads) };
        for method in [ForcedAlgorithm::RankOne, ForcedAlgorithm::FullChol, ForcedAlgorithm::ParallelChol] {
            let choice = select_algorithm(nnz, k, &SchedulerPolicy { force: Some(method), ..policy.clone() });
            let mut times: Vec<f64> = (0..repetitions)
                .map(|rep| {
                    let mut stream = stream_for(StreamKey::new(1, rep as u64, Side::Movies, 0));
                    let start = Instant::now();
                    if method == ForcedAlgorithm::ParallelChol {
                        run_items(&[nnz], &policy, |_, ctx| {
                            update_item_in(&others, &values, &other, &pp, &mut stream.clone(), choice, Some(ctx))
                        })
                        .expect("benchmark update");
                    } else {
                        update_item_in(&others, &values, &other, &pp, &mut stream, choice, None).expect("benchmark update");
                    }
                    start.elapsed().as_secs_f64()
                })
                .collect();
            times.sort_by(f64::total_cmp);
            rows.push(BenchRow { method, nnz, seconds: times[times.len() / 2] });
        }
    }
    rows
}
