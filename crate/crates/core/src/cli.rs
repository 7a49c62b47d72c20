//! Command-line driver: flags, run modes, metrics and model files.

use crate::data::{build_ratings, load_ratings_file, split_stream, split_train_test, DataError, RatingTriplet, RatingsMatrix};
use crate::dist::cluster::{plan_topology, test_shard};
use crate::dist::exchange::{Exchanger, Topology, DEFAULT_BUFFER_CAPACITY};
use crate::dist::partition::{PartitionError, WorkloadModel};
use crate::dist::transport::{connect_mesh, loopback_mesh, Transport};
use crate::dist::wire::Handshake;
use crate::dist::{CommError, ItemKind};
use crate::sampler::{Engine, HyperPrior, IterationReport, LatentMatrix, SamplerConfig, SamplerError};
use crate::sched::{ForcedAlgorithm, SchedulerPolicy};
use clap::{Parser, ValueEnum};
use serde::Serialize;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::Duration;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TransportKind {
    /// All nodes as threads of this process.
    Loopback,
    /// One node per process, addresses from the hostfile.
    Tcp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmFlag {
    RankOne,
    FullChol,
    ParallelChol,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

/// Prediction clamping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClampMode {
    /// Clamp to the training range when ratings look like a bounded scale.
    Auto,
    Off,
    Range(f64, f64),
}

fn parse_clamp(s: &str) -> Result<ClampMode, String> {
    match s {
        "auto" => Ok(ClampMode::Auto),
        "off" => Ok(ClampMode::Off),
        _ => {
            let (a, b) = s.split_once(',').ok_or_else(|| format!("expected auto, off or MIN,MAX, got {s:?}"))?;
            let lo: f64 = a.trim().parse().map_err(|_| format!("bad lower bound {a:?}"))?;
            let hi: f64 = b.trim().parse().map_err(|_| format!("bad upper bound {b:?}"))?;
            if !(lo <= hi) {
                return Err(format!("empty range {lo},{hi}"));
            }
            Ok(ClampMode::Range(lo, hi))
        }
    }
}

#[derive(Parser, Debug, Clone)]
#[command(name = "bpmf", version, about = "Bayesian probabilistic matrix factorization by Gibbs sampling")]
struct Args {
    /// Training ratings (MatrixMarket coordinate or CSV user,movie,rating; .gz accepted)
    #[arg(long)]
    train: PathBuf,
    /// Held-out ratings to score every iteration
    #[arg(long, conflicts_with = "holdout")]
    test: Option<PathBuf>,
    /// Fraction of the training ratings to hold out instead of --test
    #[arg(long)]
    holdout: Option<f64>,
    /// Latent dimension
    #[arg(long, default_value_t = 32)]
    k: usize,
    /// Sampling iterations
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Iterations discarded before averaging predictions
    #[arg(long, default_value_t = 20)]
    burnin: usize,
    /// Rating noise precision
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Worker threads per node (default: available cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Rating count from which items use the parallel update
    #[arg(long, default_value_t = 1000)]
    threshold: usize,
    /// Ratings per sub-task of a heavy item
    #[arg(long, default_value_t = 256)]
    parallel_chunk: usize,
    /// Use one update method for every item
    #[arg(long, value_enum)]
    force_algorithm: Option<AlgorithmFlag>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of nodes
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// This process's node id (tcp transport)
    #[arg(long, default_value_t = 0)]
    node_id: usize,
    /// One host:port per line, line i for node i
    #[arg(long)]
    hostfile: Option<PathBuf>,
    #[arg(long, value_enum)]
    transport: Option<TransportKind>,
    /// Items buffered per destination before sending
    #[arg(long, default_value_t = DEFAULT_BUFFER_CAPACITY)]
    buffer_capacity: usize,
    /// Reorder users and movies to reduce traffic
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    reorder: Toggle,
    /// auto, off, or MIN,MAX
    #[arg(long, default_value = "auto", value_parser = parse_clamp)]
    clamp: ClampMode,
    /// Per-iteration key=value lines (default: stdout)
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Per-iteration JSON lines
    #[arg(long)]
    metrics_json: Option<PathBuf>,
    /// Directory for U.mm, V.mm and meta.json
    #[arg(long)]
    model_dir: Option<PathBuf>,
    /// Write zeros for wall-clock fields so outputs depend only on inputs
    #[arg(long)]
    reproducible: bool,
    /// Seconds to wait for peers
    #[arg(long, default_value_t = 60)]
    connect_timeout: u64,
}

/// Validated settings of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub holdout: Option<f64>,
    pub k: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub alpha: f64,
    pub threads: usize,
    pub threshold: usize,
    pub parallel_chunk: usize,
    pub force_algorithm: Option<ForcedAlgorithm>,
    pub seed: u64,
    pub p: usize,
    pub node_id: usize,
    pub hostfile: Option<PathBuf>,
    pub transport: TransportKind,
    pub buffer_capacity: usize,
    pub reorder: bool,
    pub clamp: ClampMode,
    pub metrics: Option<PathBuf>,
    pub metrics_json: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub reproducible: bool,
    pub connect_timeout: Duration,
}

#[derive(Debug, Error)]
pub enum CliError {
    /// `--help` or `--version`; the text goes to stdout and the exit is 0.
    #[error("{0}")]
    Info(String),
    #[error("{0}")]
    Usage(String),
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn parse_config<I, T>(argv: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let a = Args::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => CliError::Info(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    })?;
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    if a.burnin > a.iters {
        return Err(usage(format!("--burnin {} exceeds --iters {}", a.burnin, a.iters)));
    }
    if !(a.alpha > 0.0 && a.alpha.is_finite()) {
        return Err(usage(format!("--alpha must be positive, got {}", a.alpha)));
    }
    let threads = a.threads.unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    if a.threshold == 0 || a.parallel_chunk == 0 || a.buffer_capacity == 0 {
        return Err(usage("--threshold, --parallel-chunk and --buffer-capacity must be at least 1"));
    }
    if let Some(h) = a.holdout {
        if !(0.0..1.0).contains(&h) {
            return Err(usage(format!("--holdout must be in [0, 1), got {h}")));
        }
    }
    if a.p == 0 {
        return Err(usage("--p must be at least 1"));
    }
    if a.node_id >= a.p {
        return Err(usage(format!("--node-id {} out of range for --p {}", a.node_id, a.p)));
    }
    let transport = match a.transport {
        Some(t) => t,
        None if a.p > 1 && a.hostfile.is_some() => TransportKind::Tcp,
        None => TransportKind::Loopback,
    };
    if transport == TransportKind::Tcp && a.hostfile.is_none() {
        return Err(usage("--transport tcp requires --hostfile"));
    }
    if transport == TransportKind::Loopback && a.node_id != 0 {
        return Err(usage("--node-id applies to the tcp transport only"));
    }
    Ok(RunConfig {
        train: a.train,
        test: a.test,
        holdout: a.holdout,
        k: a.k,
        iterations: a.iters,
        burn_in: a.burnin,
        alpha: a.alpha,
        threads,
        threshold: a.threshold,
        parallel_chunk: a.parallel_chunk,
        force_algorithm: a.force_algorithm.map(|f| match f {
            AlgorithmFlag::RankOne => ForcedAlgorithm::RankOne,
            AlgorithmFlag::FullChol => ForcedAlgorithm::FullChol,
            AlgorithmFlag::ParallelChol => ForcedAlgorithm::ParallelChol,
        }),
        seed: a.seed,
        p: a.p,
        node_id: a.node_id,
        hostfile: a.hostfile,
        transport,
        buffer_capacity: a.buffer_capacity,
        reorder: a.reorder == Toggle::On,
        clamp: a.clamp,
        metrics: a.metrics,
        metrics_json: a.metrics_json,
        model_dir: a.model_dir,
        reproducible: a.reproducible,
        connect_timeout: Duration::from_secs(a.connect_timeout),
    })
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error("{context}: {source}")]
    Output { context: String, source: io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Data(_) | RunError::Input(_) | RunError::Partition(_) => 2,
            RunError::Sampler(SamplerError::Shape { .. }) => 2,
            RunError::Sampler(SamplerError::Config(_)) => 1,
            _ => 3,
        }
    }
}

fn output_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Output { context: path.display().to_string(), source }
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub iter: usize,
    pub rmse_sample: f64,
    pub rmse_avg: f64,
    pub updates_per_sec: f64,
    pub compute_s: f64,
    pub comm_s: f64,
    pub both_s: f64,
}

impl MetricsRecord {
    pub fn from_report(r: &IterationReport, reproducible: bool) -> Self {
        let clock = |x: f64| if reproducible { 0.0 } else { x };
        MetricsRecord {
            iter: r.iteration,
            rmse_sample: r.rmse_sample,
            rmse_avg: r.rmse_avg,
            updates_per_sec: clock(r.updates_per_sec),
            compute_s: clock(r.timing.compute_s),
            comm_s: clock(r.timing.comm_s),
            both_s: clock(r.timing.both_s),
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "iter={} rmse_sample={} rmse_avg={} updates_per_sec={:.3} compute_s={:.6} comm_s={:.6} both_s={:.6}",
            self.iter, self.rmse_sample, self.rmse_avg, self.updates_per_sec, self.compute_s, self.comm_s, self.both_s
        )
    }
}

struct MetricsSink {
    text: Box<dyn Write + Send>,
    text_name: String,
    json: Option<(BufWriter<File>, PathBuf)>,
    reproducible: bool,
}

impl MetricsSink {
    fn open(cfg: &RunConfig) -> Result<Self, RunError> {
        let (text, text_name): (Box<dyn Write + Send>, String) = match &cfg.metrics {
            Some(p) => (Box::new(BufWriter::new(File::create(p).map_err(output_err(p))?)), p.display().to_string()),
            None => (Box::new(io::stdout()), "stdout".into()),
        };
        let json = match &cfg.metrics_json {
            Some(p) => Some((BufWriter::new(File::create(p).map_err(output_err(p))?), p.clone())),
            None => None,
        };
        Ok(MetricsSink { text, text_name, json, reproducible: cfg.reproducible })
    }

    fn write(&mut self, r: &IterationReport) -> Result<(), RunError> {
        let rec = MetricsRecord::from_report(r, self.reproducible);
        let name = self.text_name.clone();
        let err = |source| RunError::Output { context: name.clone(), source };
        writeln!(self.text, "{}", rec.to_line()).map_err(err)?;
        self.text.flush().map_err(err)?;
        if let Some((w, p)) = &mut self.json {
            let line = serde_json::to_string(&rec).expect("metrics serialize");
            writeln!(w, "{line}").map_err(output_err(p))?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<(), RunError> {
        if let Some((mut w, p)) = self.json.take() {
            w.flush().map_err(output_err(&p))?;
        }
        self.text.flush().map_err(|source| RunError::Output { context: self.text_name.clone(), source })
    }
}

/// Dense MatrixMarket array file, column-major as the format requires.
pub fn write_dense_matrix_market(mut out: impl Write, m: &LatentMatrix, comment: &str) -> io::Result<()> {
    writeln!(out, "%%MatrixMarket matrix array real general")?;
    writeln!(out, "% {comment}")?;
    writeln!(out, "{} {}", m.count(), m.k())?;
    for c in 0..m.k() {
        for r in 0..m.count() {
            writeln!(out, "{}", m.row(r)[c])?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ModelMeta {
    k: usize,
    seed: u64,
    iterations: usize,
    burn_in: usize,
    users: usize,
    movies: usize,
    alpha: f64,
}

fn write_model(dir: &Path, cfg: &RunConfig, u: &LatentMatrix, v: &LatentMatrix) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(output_err(dir))?;
    for (name, m, what) in [("U.mm", u, "posterior mean of user vectors"), ("V.mm", v, "posterior mean of movie vectors")] {
        let path = dir.join(name);
        let mut w = BufWriter::new(File::create(&path).map_err(output_err(&path))?);
        write_dense_matrix_market(&mut w, m, what).and_then(|_| w.flush()).map_err(output_err(&path))?;
    }
    let meta = ModelMeta {
        k: cfg.k,
        seed: cfg.seed,
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        users: u.count(),
        movies: v.count(),
        alpha: cfg.alpha,
    };
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta).expect("meta serialize") + "\n").map_err(output_err(&path))
}

/// Training matrix and test points as the run will use them.
pub fn load_inputs(cfg: &RunConfig) -> Result<(RatingsMatrix, Vec<RatingTriplet>), RunError> {
    let file = load_ratings_file(&cfg.train)?;
    let (train, test) = match (&cfg.test, cfg.holdout) {
        (Some(path), _) => {
            let t = load_ratings_file(path)?;
            if let Some(bad) = t.triplets.iter().find(|x| x.user >= file.m || x.movie >= file.n) {
                return Err(RunError::Input(format!(
                    "{}: rating ({}, {}) lies outside the {}×{} training matrix",
                    path.display(),
                    bad.user + 1,
                    bad.movie + 1,
                    file.m,
                    file.n
                )));
            }
            (file.triplets, t.triplets)
        }
        (None, Some(h)) => {
            let (train, test) = split_train_test(&file.triplets, h, &mut split_stream(cfg.seed));
            (train, test.points)
        }
        (None, None) => (file.triplets, Vec::new()),
    };
    Ok((build_ratings(&train, file.m, file.n)?, test))
}

pub fn sampler_config(cfg: &RunConfig, train: &RatingsMatrix) -> SamplerConfig {
    let clamp = match cfg.clamp {
        ClampMode::Off => None,
        ClampMode::Range(lo, hi) => Some((lo, hi)),
        ClampMode::Auto if train.looks_bounded() => train.value_range(),
        ClampMode::Auto => None,
    };
    SamplerConfig {
        k: cfg.k,
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        alpha: cfg.alpha,
        seed: cfg.seed,
        prior_u: HyperPrior::default_for(cfg.k),
        prior_v: HyperPrior::default_for(cfg.k),
        clamp,
        policy: SchedulerPolicy {
            threads: cfg.threads,
            threshold: cfg.threshold,
            parallel_chunk: cfg.parallel_chunk,
            deterministic: true,
            force: cfg.force_algorithm,
        },
    }
}

fn read_hostfile(path: &Path) -> Result<Vec<String>, RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::Input(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from).collect())
}

/// Steps `engine` to the end, reporting each iteration to `sink`.
fn drive(mut engine: Engine<'_>, mut sink: Option<&mut MetricsSink>) -> Result<(LatentMatrix, LatentMatrix), RunError> {
    while !engine.is_done() {
        let report = engine.step()?;
        if let Some(s) = sink.as_deref_mut() {
            s.write(&report)?;
        }
    }
    Ok(engine.posterior_means()?)
}

fn run_as_node(
    cfg: &SamplerConfig,
    train: &RatingsMatrix,
    test: &[RatingTriplet],
    topo: Arc<Topology>,
    transport: Box<dyn Transport>,
    capacity: usize,
    sink: Option<&mut MetricsSink>,
) -> Result<(LatentMatrix, LatentMatrix), RunError> {
    let node = transport.node_id();
    let shard = test_shard(&topo, test, node);
    let users = topo.partition.owned(ItemKind::User, node);
    let movies = topo.partition.owned(ItemKind::Movie, node);
    let exchanger = Exchanger::start(transport, topo, cfg.k, capacity);
    let engine = Engine::distributed(cfg.clone(), train, shard, users, movies, &exchanger)?;
    let result = drive(engine, sink);
    exchanger.shutdown();
    result
}

/// Executes a run and writes its outputs.
pub fn main_run(cfg: &RunConfig) -> Result<(), RunError> {
    let (train, test) = load_inputs(cfg)?;
    let scfg = sampler_config(cfg, &train);
    let mut sink = MetricsSink::open(cfg)?;
    let (u, v) = if cfg.p == 1 {
        drive(Engine::new(scfg, &train, &test)?, Some(&mut sink))?
    } else {
        let topo = Arc::new(plan_topology(&train, &test, cfg.p, &WorkloadModel::for_k(cfg.k), cfg.reorder)?);
        let hello = Handshake::new(cfg.p, cfg.k, cfg.seed);
        match cfg.transport {
            TransportKind::Tcp => {
                let addrs = read_hostfile(cfg.hostfile.as_deref().expect("validated"))?;
                if addrs.len() != cfg.p {
                    return Err(RunError::Input(format!("hostfile lists {} nodes, --p is {}", addrs.len(), cfg.p)));
                }
                let t = connect_mesh(cfg.node_id, &addrs, &hello, cfg.connect_timeout)?;
                run_as_node(&scfg, &train, &test, topo, Box::new(t), cfg.buffer_capacity, Some(&mut sink))?
            }
            TransportKind::Loopback => {
                let timeout = cfg.connect_timeout;
                let results: Vec<Result<(LatentMatrix, LatentMatrix), RunError>> = thread::scope(|s| {
                    let mut sink = Some(&mut sink);
                    let handles: Vec<_> = loopback_mesh(cfg.p)
                        .into_iter()
                        .map(|mut t| {
                            let node_sink = if t.node_id() == 0 { sink.take() } else { None };
                            let (scfg, train, test, topo) = (&scfg, &train, &test, topo.clone());
                            s.spawn(move || {
                                t.handshake(&hello, timeout)?;
                                run_as_node(scfg, train, test, topo, Box::new(t), cfg.buffer_capacity, node_sink)
                            })
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("node thread panicked")).collect()
                });
                let mut first = None;
                for r in results {
                    let r = r?;
                    first.get_or_insert(r);
                }
                first.expect("at least one node")
            }
        }
    };
    sink.finish()?;
    if let Some(dir) = &cfg.model_dir {
        if cfg.transport == TransportKind::Loopback || cfg.node_id == 0 {
            write_model(dir, cfg, &u, &v)?;
        }
    }
    Ok(())
}

/// Parses `argv`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse_config(argv) {
        Err(CliError::Info(text)) => {
            print!("{text}");
            0
        }
        Err(CliError::Usage(msg)) => {
            eprint!("{msg}");
            if !msg.ends_with('\n') {
                eprintln!();
            }
            1
        }
        Ok(cfg) => match main_run(&cfg) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("bpmf: {e}");
                e.exit_code()
            }
        },
    }
}
