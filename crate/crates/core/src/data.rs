//! Rating ingestion, dual-orientation sparse storage, train/test splitting
//! and synthetic low-rank datasets.

use crate::rng::{stream_for, RngStream, Side, StreamKey};
use flate2::read::MultiGzDecoder;
use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate rating for user {user}, movie {movie}")]
    DuplicateEntry { user: usize, movie: usize },
    #[error("index ({user}, {movie}) out of bounds for a {m}x{n} matrix")]
    IndexOutOfBounds { user: usize, movie: usize, m: usize, n: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl DataError {
    fn parse(line: usize, msg: impl Into<String>) -> Self {
        DataError::Parse { line, msg: msg.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatingTriplet {
    pub user: usize,
    pub movie: usize,
    pub value: f64,
}

impl RatingTriplet {
    pub fn new(user: usize, movie: usize, value: f64) -> Self {
        RatingTriplet { user, movie, value }
    }
}

/// Triplets plus the declared matrix shape.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingsFile {
    pub m: usize,
    pub n: usize,
    pub triplets: Vec<RatingTriplet>,
}

/// One orientation of the compressed store: per item, the sorted indices on
/// the other side and the matching values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Compressed {
    offsets: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl Compressed {
    fn build(outer: usize, entries: impl Iterator<Item = (usize, usize, f64)> + Clone) -> Self {
        let mut offsets = vec![0usize; outer + 1];
        for (o, _, _) in entries.clone() {
            offsets[o + 1] += 1;
        }
        for i in 0..outer {
            offsets[i + 1] += offsets[i];
        }
        let nnz = offsets[outer];
        let mut fill = offsets.clone();
        let mut indices = vec![0u32; nnz];
        let mut values = vec![0.0; nnz];
        for (o, i, v) in entries {
            let at = fill[o];
            indices[at] = i as u32;
            values[at] = v;
            fill[o] += 1;
        }
        let mut c = Compressed { offsets, indices, values };
        c.sort_rows();
        c
    }

    fn sort_rows(&mut self) {
        for o in 0..self.offsets.len() - 1 {
            let (lo, hi) = (self.offsets[o], self.offsets[o + 1]);
            let idx = &self.indices[lo..hi];
            if idx.windows(2).all(|w| w[0] < w[1]) {
                continue;
            }
            let mut pairs: Vec<(u32, f64)> = idx.iter().copied().zip(self.values[lo..hi].iter().copied()).collect();
            pairs.sort_by_key(|p| p.0);
            for (slot, (i, v)) in pairs.into_iter().enumerate() {
                self.indices[lo + slot] = i;
                self.values[lo + slot] = v;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn row(&self, o: usize) -> (&[u32], &[f64]) {
        let (lo, hi) = (self.offsets[o], self.offsets[o + 1]);
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    #[inline]
    pub fn row_nnz(&self, o: usize) -> usize {
        self.offsets[o + 1] - self.offsets[o]
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

/// Sparse M×N rating matrix held both by user (rows) and by movie (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct RatingsMatrix {
    m: usize,
    n: usize,
    by_user: Compressed,
    by_movie: Compressed,
}

/// Builds both orientations. Rejects out-of-range indices and repeated
/// (user, movie) pairs.
pub fn build_ratings(triplets: &[RatingTriplet], m: usize, n: usize) -> Result<RatingsMatrix, DataError> {
    for t in triplets {
        if t.user >= m || t.movie >= n {
            return Err(DataError::IndexOutOfBounds { user: t.user, movie: t.movie, m, n });
        }
    }
    let it = triplets.iter().map(|t| (t.user, t.movie, t.value));
    let by_user = Compressed::build(m, it.clone());
    for u in 0..m {
        let (idx, _) = by_user.row(u);
        if let Some(w) = idx.windows(2).find(|w| w[0] == w[1]) {
            return Err(DataError::DuplicateEntry { user: u, movie: w[0] as usize });
        }
    }
    let by_movie = Compressed::build(n, triplets.iter().map(|t| (t.movie, t.user, t.value)));
    Ok(RatingsMatrix { m, n, by_user, by_movie })
}

impl RatingsMatrix {
    pub fn empty(m: usize, n: usize) -> Self {
        build_ratings(&[], m, n).expect("empty matrix is valid")
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.by_user.nnz()
    }

    pub fn by_user(&self) -> &Compressed {
        &self.by_user
    }

    pub fn by_movie(&self) -> &Compressed {
        &self.by_movie
    }

    /// Movies rated by `u`, ascending, with values.
    pub fn user(&self, u: usize) -> (&[u32], &[f64]) {
        self.by_user.row(u)
    }

    /// Users who rated `m`, ascending, with values.
    pub fn movie(&self, m: usize) -> (&[u32], &[f64]) {
        self.by_movie.row(m)
    }

    pub fn user_counts(&self) -> Vec<usize> {
        (0..self.m).map(|u| self.by_user.row_nnz(u)).collect()
    }

    pub fn movie_counts(&self) -> Vec<usize> {
        (0..self.n).map(|m| self.by_movie.row_nnz(m)).collect()
    }

    /// Triplets in user-major order.
    pub fn triplets(&self) -> Vec<RatingTriplet> {
        let mut out = Vec::with_capacity(self.nnz());
        for u in 0..self.m {
            let (idx, vals) = self.user(u);
            out.extend(idx.iter().zip(vals).map(|(&m, &v)| RatingTriplet::new(u, m as usize, v)));
        }
        out
    }

    /// Triplets enumerated through the by-movie store, sorted user-major.
    pub fn triplets_by_movie(&self) -> Vec<RatingTriplet> {
        let mut out = Vec::with_capacity(self.nnz());
        for m in 0..self.n {
            let (idx, vals) = self.movie(m);
            out.extend(idx.iter().zip(vals).map(|(&u, &v)| RatingTriplet::new(u as usize, m, v)));
        }
        out.sort_by_key(|t| (t.user, t.movie));
        out
    }

    /// Smallest and largest stored value.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        let vals = &self.by_user.values;
        if vals.is_empty() {
            return None;
        }
        Some(vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))))
    }

    /// True when every value is a whole multiple of 0.5, as for star ratings.
    pub fn looks_bounded(&self) -> bool {
        !self.by_user.values.is_empty() && self.by_user.values.iter().all(|v| (v * 2.0).fract() == 0.0)
    }
}

/// Held-out ratings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TestSet {
    pub points: Vec<RatingTriplet>,
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn open_maybe_gz(source: impl Read + 'static) -> io::Result<Box<dyn BufRead>> {
    let mut raw = BufReader::new(source);
    let head = raw.fill_buf()?;
    let gz = head.len() >= 2 && head[..2] == [0x1f, 0x8b];
    if gz {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(raw))))
    } else {
        Ok(Box::new(raw))
    }
}

fn io_err(path: &str) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_string(), source }
}

/// Reads a MatrixMarket `coordinate real general` file (optionally gzip
/// compressed). Indices are converted from 1-based to 0-based.
pub fn load_matrix_market(source: impl Read + 'static) -> Result<RatingsFile, DataError> {
    let reader = open_maybe_gz(source).map_err(io_err("<matrix market>"))?;
    parse_matrix_market(reader)
}

fn parse_matrix_market(reader: impl BufRead) -> Result<RatingsFile, DataError> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (no, header) = match lines.next() {
        Some((no, l)) => (no, l.map_err(io_err("<matrix market>"))?),
        None => return Err(DataError::parse(1, "empty input")),
    };
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens != ["%%matrixmarket", "matrix", "coordinate", "real", "general"] {
        return Err(DataError::parse(no, format!("unsupported header {header:?}")));
    }

    let mut dims: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    let mut seen = HashSet::new();
    for (no, line) in lines {
        let line = line.map_err(io_err("<matrix market>"))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        match dims {
            None => {
                if fields.len() != 3 {
                    return Err(DataError::parse(no, "expected dimension line \"M N NNZ\""));
                }
                let parse = |s: &str| s.parse::<usize>().map_err(|_| DataError::parse(no, format!("bad count {s:?}")));
                let d = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
                triplets.reserve(d.2);
                dims = Some(d);
            }
            Some((m, n, nnz)) => {
                if fields.len() != 3 {
                    return Err(DataError::parse(no, format!("expected \"row col value\", got {t:?}")));
                }
                let idx = |s: &str| match s.parse::<usize>() {
                    Ok(0) | Err(_) => Err(DataError::parse(no, format!("bad index {s:?}"))),
                    Ok(i) => Ok(i - 1),
                };
                let (user, movie) = (idx(fields[0])?, idx(fields[1])?);
                let value: f64 = fields[2].parse().map_err(|_| DataError::parse(no, format!("bad value {:?}", fields[2])))?;
                if !value.is_finite() {
                    return Err(DataError::parse(no, "non-finite value"));
                }
                if user >= m || movie >= n {
                    return Err(DataError::IndexOutOfBounds { user, movie, m, n });
                }
                if !seen.insert((user, movie)) {
                    return Err(DataError::DuplicateEntry { user, movie });
                }
                if triplets.len() == nnz {
                    return Err(DataError::parse(no, format!("more than the declared {nnz} entries")));
                }
                triplets.push(RatingTriplet { user, movie, value });
            }
        }
    }
    let (m, n, nnz) = dims.ok_or_else(|| DataError::parse(no, "missing dimension line"))?;
    if triplets.len() != nnz {
        return Err(DataError::parse(no, format!("declared {nnz} entries, found {}", triplets.len())));
    }
    Ok(RatingsFile { m, n, triplets })
}

/// Reads `user,movie,value[,...]` lines with 1-based ids (MovieLens
/// convention), optional header row, optionally gzip compressed. The shape
/// is the largest id seen on each side.
pub fn load_csv(source: impl Read + 'static) -> Result<RatingsFile, DataError> {
    let reader = open_maybe_gz(source).map_err(io_err("<csv>"))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut triplets = Vec::new();
    let mut seen = HashSet::new();
    let (mut m, mut n) = (0, 0);
    for (i, rec) in rdr.records().enumerate() {
        let no = i + 1;
        let rec = rec.map_err(|e| DataError::parse(no, e.to_string()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() < 3 {
            return Err(DataError::parse(no, "expected user,movie,value"));
        }
        if no == 1 && rec[0].parse::<f64>().is_err() {
            continue;
        }
        let idx = |s: &str| match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(DataError::parse(no, format!("bad id {s:?}"))),
            Ok(v) => Ok(v - 1),
        };
        let (user, movie) = (idx(&rec[0])?, idx(&rec[1])?);
        let value: f64 = rec[2].parse().map_err(|_| DataError::parse(no, format!("bad value {:?}", &rec[2])))?;
        if !value.is_finite() {
            return Err(DataError::parse(no, "non-finite value"));
        }
        if user >= u32::MAX as usize || movie >= u32::MAX as usize {
            return Err(DataError::IndexOutOfBounds { user, movie, m: u32::MAX as usize, n: u32::MAX as usize });
        }
        if !seen.insert((user, movie)) {
            return Err(DataError::DuplicateEntry { user, movie });
        }
        m = m.max(user + 1);
        n = n.max(movie + 1);
        triplets.push(RatingTriplet { user, movie, value });
    }
    Ok(RatingsFile { m, n, triplets })
}

/// Loads either format, chosen by content: MatrixMarket when the first line
/// starts with `%%MatrixMarket`, CSV otherwise.
pub fn load_ratings_file(path: &Path) -> Result<RatingsFile, DataError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(io_err(&name))?;
    let mut reader = open_maybe_gz(file).map_err(io_err(&name))?;
    let is_mm = reader.fill_buf().map_err(io_err(&name))?.starts_with(b"%%MatrixMarket");
    if is_mm {
        parse_matrix_market(reader)
    } else {
        load_csv(reader)
    }
}

pub fn write_matrix_market(mut out: impl Write, m: usize, n: usize, triplets: &[RatingTriplet]) -> io::Result<()> {
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "{m} {n} {}", triplets.len())?;
    for t in triplets {
        writeln!(out, "{} {} {}", t.user + 1, t.movie + 1, t.value)?;
    }
    Ok(())
}

/// Stream for [`split_train_test`]. Uses an iteration number the sampler
/// never reaches, so it cannot collide with sampling streams.
pub fn split_stream(seed: u64) -> RngStream {
    stream_for(StreamKey::new(seed, u64::MAX, Side::Noise, 0))
}

/// Stream for [`generate_synthetic`].
pub fn synthetic_stream(seed: u64) -> RngStream {
    stream_for(StreamKey::new(seed, u64::MAX, Side::Noise, 1))
}

/// Uniform random split by shuffled prefix: exactly
/// `round(holdout_fraction * len)` triplets are held out. Both halves keep
/// the input's relative order.
pub fn split_train_test(triplets: &[RatingTriplet], holdout_fraction: f64, stream: &mut RngStream) -> (Vec<RatingTriplet>, TestSet) {
    assert!((0.0..1.0).contains(&holdout_fraction), "holdout fraction must be in [0, 1)");
    let len = triplets.len();
    let take = (holdout_fraction * len as f64).round() as usize;
    let mut order: Vec<usize> = (0..len).collect();
    for i in 0..take {
        let j = i + stream.below((len - i) as u64) as usize;
        order.swap(i, j);
    }
    let mut held = vec![false; len];
    for &i in &order[..take] {
        held[i] = true;
    }
    let mut train = Vec::with_capacity(len - take);
    let mut test = Vec::with_capacity(take);
    for (t, h) in triplets.iter().zip(held) {
        if h {
            test.push(*t);
        } else {
            train.push(*t);
        }
    }
    (train, TestSet { points: test })
}

/// Synthetic low-rank data with its generating factors.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub m: usize,
    pub n: usize,
    pub k_true: usize,
    pub triplets: Vec<RatingTriplet>,
    /// m × k_true, row-major.
    pub u_true: Vec<f64>,
    /// n × k_true, row-major.
    pub v_true: Vec<f64>,
}

impl SyntheticData {
    pub fn clean_value(&self, user: usize, movie: usize) -> f64 {
        let k = self.k_true;
        self.u_true[user * k..(user + 1) * k].iter().zip(&self.v_true[movie * k..(movie + 1) * k]).map(|(a, b)| a * b).sum()
    }
}

/// Factors with entries `N(0, 1/√k_true)` so the clean ratings have unit
/// variance; `round(m·n·density)` distinct cells chosen uniformly (Floyd's
/// algorithm), each observed as `u·v + N(0, noise_sd²)`.
pub fn generate_synthetic(
    m: usize,
    n: usize,
    k_true: usize,
    density: f64,
    noise_sd: f64,
    stream: &mut RngStream,
) -> SyntheticData {
    assert!(density > 0.0 && density <= 1.0, "density must be in (0, 1]");
    assert!(k_true >= 1, "k_true must be at least 1");
    let sd = (k_true as f64).powf(-0.25);
    let u_true: Vec<f64> = (0..m * k_true).map(|_| sd * stream.normal()).collect();
    let v_true: Vec<f64> = (0..n * k_true).map(|_| sd * stream.normal()).collect();

    let total = (m * n) as u64;
    let want = ((total as f64) * density).round().min(total as f64) as u64;
    let mut chosen = HashSet::with_capacity(want as usize);
    for j in total - want..total {
        let r = stream.below(j + 1);
        if !chosen.insert(r) {
            chosen.insert(j);
        }
    }
    let mut cells: Vec<u64> = chosen.into_iter().collect();
    cells.sort_unstable();

    let mut data = SyntheticData { m, n, k_true, triplets: Vec::with_capacity(cells.len()), u_true, v_true };
    for c in cells {
        let (user, movie) = ((c / n as u64) as usize, (c % n as u64) as usize);
        let clean = data.clean_value(user, movie);
        let value = if noise_sd > 0.0 { clean + noise_sd * stream.normal() } else { clean };
        data.triplets.push(RatingTriplet { user, movie, value });
    }
    data
}
