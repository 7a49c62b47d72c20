//! Counter-based random streams and the samplers built on them.
//!
//! Every stream is identified by a [`StreamKey`]. The n-th 64-bit draw of a
//! stream is `philox4x32_10(counter = (n / 2, key hash), key = key hash)`,
//! lane `n % 2`, so draws depend only on the key and the draw index, never on
//! which thread, process or call order produced them.

use crate::linalg::{cholesky, tri_solve, LinalgError, LowerTriangular, SquareMatrix};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RandError {
    #[error("Wishart degrees of freedom {dof} must exceed k - 1 = {}", .k - 1)]
    DegreesOfFreedomTooSmall { dof: f64, k: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which part of the model a stream feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Side {
    Users = 0,
    Movies = 1,
    Hyper = 2,
    Noise = 3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub iteration: u64,
    pub side: Side,
    pub item: u64,
}

impl StreamKey {
    pub fn new(seed: u64, iteration: u64, side: Side, item: u64) -> Self {
        StreamKey { seed, iteration, side, item }
    }

    fn hash(&self) -> (u64, u64) {
        let mut h = splitmix64(self.seed ^ 0x243F_6A88_85A3_08D3);
        h = splitmix64(h ^ self.iteration);
        h = splitmix64(h ^ self.side as u64);
        h = splitmix64(h ^ self.item);
        (h, splitmix64(h ^ 0x1319_8A2E_0370_7344))
    }
}

#[inline]
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
pub fn philox4x32_10(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = ctr;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// A stream of draws for one key. Cheap to construct; a value type.
#[derive(Clone, Debug)]
pub struct RngStream {
    key: StreamKey,
    philox_key: [u32; 2],
    ctr_hi: [u32; 2],
    counter: u64,
    block_index: u64,
    block: [u32; 4],
}

pub fn stream_for(key: StreamKey) -> RngStream {
    let (a, b) = key.hash();
    RngStream {
        key,
        philox_key: [a as u32, (a >> 32) as u32],
        ctr_hi: [b as u32, (b >> 32) as u32],
        counter: 0,
        block_index: u64::MAX,
        block: [0; 4],
    }
}

impl RngStream {
    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// Number of 64-bit draws consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        let n = self.counter;
        self.counter += 1;
        let block = n / 2;
        if block != self.block_index {
            self.block = philox4x32_10(
                [block as u32, (block >> 32) as u32, self.ctr_hi[0], self.ctr_hi[1]],
                self.philox_key,
            );
            self.block_index = block;
        }
        let lane = (n % 2) as usize * 2;
        self.block[lane] as u64 | (self.block[lane + 1] as u64) << 32
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal by inversion, one uniform per variate.
    pub fn normal(&mut self) -> f64 {
        inverse_normal_cdf(self.uniform())
    }

    /// Gamma(shape, scale = 1) by Marsaglia–Tsang.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0, "gamma shape must be positive");
        if shape < 1.0 {
            let u = self.uniform();
            return self.gamma(shape + 1.0) * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.uniform();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    pub fn chi_square(&mut self, dof: f64) -> f64 {
        2.0 * self.gamma(0.5 * dof)
    }
}

/// `n` i.i.d. standard normal draws.
pub fn std_normal(stream: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| stream.normal()).collect()
}

/// Draws `x ~ N(mean, Λ⁻¹)` where `prec_chol · prec_cholᵀ = Λ`.
pub fn sample_mvn_prec(stream: &mut RngStream, mean: &[f64], prec_chol: &LowerTriangular) -> Vec<f64> {
    let z = std_normal(stream, mean.len());
    let dev = tri_solve(prec_chol, &z, true);
    mean.iter().zip(dev).map(|(m, d)| m + d).collect()
}

/// Bartlett factor `A`: lower triangular, `A_ii = sqrt(chi²(dof - i))`,
/// `A_ij ~ N(0, 1)` below the diagonal. Row by row, diagonal first.
fn bartlett(stream: &mut RngStream, k: usize, dof: f64) -> Result<SquareMatrix, RandError> {
    if !(dof > k as f64 - 1.0) {
        return Err(RandError::DegreesOfFreedomTooSmall { dof, k });
    }
    let mut a = SquareMatrix::zeros(k);
    for i in 0..k {
        a.set(i, i, stream.chi_square(dof - i as f64).sqrt());
        for j in 0..i {
            a.set(i, j, stream.normal());
        }
    }
    Ok(a)
}

fn outer_self(x: &SquareMatrix) -> SquareMatrix {
    x.matmul(&x.transpose()).symmetrized()
}

/// One draw from Wishart(W, dof) where `scale_chol · scale_cholᵀ = W`.
pub fn sample_wishart(stream: &mut RngStream, scale_chol: &LowerTriangular, dof: f64) -> Result<SquareMatrix, RandError> {
    let a = bartlett(stream, scale_chol.k(), dof)?;
    Ok(outer_self(&scale_chol.to_square().matmul(&a)))
}

/// One draw from Wishart(W, dof) given the factor of the inverse scale,
/// `inv_scale_chol · inv_scale_cholᵀ = W⁻¹`. Uses `L⁻ᵀ` as the factor of
/// `W`, applied by triangular solves.
pub fn sample_wishart_prec(stream: &mut RngStream, inv_scale_chol: &LowerTriangular, dof: f64) -> Result<SquareMatrix, RandError> {
    let k = inv_scale_chol.k();
    let a = bartlett(stream, k, dof)?;
    let mut x = SquareMatrix::zeros(k);
    for c in 0..k {
        let col: Vec<f64> = (0..k).map(|r| a.get(r, c)).collect();
        let solved = tri_solve(inv_scale_chol, &col, true);
        for (r, v) in solved.into_iter().enumerate() {
            x.set(r, c, v);
        }
    }
    Ok(outer_self(&x))
}

/// Same as [`sample_wishart`] followed by a factorization of the draw.
pub fn sample_wishart_chol(stream: &mut RngStream, scale_chol: &LowerTriangular, dof: f64) -> Result<LowerTriangular, RandError> {
    Ok(cholesky(&sample_wishart(stream, scale_chol, dof)?)?)
}

/// Inverse of the standard normal CDF (Wichura's AS241, PPND16).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const SPLIT1: f64 = 0.425;
    const SPLIT2: f64 = 5.0;
    const CONST1: f64 = 0.180625;
    const CONST2: f64 = 1.6;
    let q = p - 0.5;
    if q.abs() <= SPLIT1 {
        let r = CONST1 - q * q;
        return q * (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r + 67265.770927008700853) * r
            + 45921.953931549871457)
            * r
            + 13731.693765509461125)
            * r
            + 1971.5909503065514427)
            * r
            + 133.14166789178437745)
            * r
            + 3.387132872796366608)
            / (((((((r * 5226.495278852545925 + 28729.085735721942674) * r + 39307.89580009271061) * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= SPLIT2 {
        r -= CONST2;
        (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        r -= SPLIT2;
        (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn philox_known_answers() {
        assert_eq!(philox4x32_10([0; 4], [0; 2]), [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]);
        assert_eq!(
            philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]
        );
    }

    #[test]
    fn same_key_same_draws() {
        let key = StreamKey::new(7, 3, Side::Movies, 11);
        let a: Vec<u64> = {
            let mut s = stream_for(key);
            (0..100).map(|_| s.next_u64()).collect()
        };
        let mut s = stream_for(key);
        let b: Vec<u64> = (0..100).map(|_| s.next_u64()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn keys_differing_in_item_diverge() {
        let mut s0 = stream_for(StreamKey::new(7, 3, Side::Movies, 11));
        let mut s1 = stream_for(StreamKey::new(7, 3, Side::Movies, 12));
        let same = (0..64).filter(|_| s0.next_u64() == s1.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn std_normal_empty() {
        let mut s = stream_for(StreamKey::new(1, 0, Side::Noise, 0));
        assert!(std_normal(&mut s, 0).is_empty());
        assert_eq!(s.counter(), 0);
    }

    #[test]
    fn inverse_cdf_reference_points() {
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
        assert!((inverse_normal_cdf(0.975) - 1.959963984540054).abs() < 1e-14);
        assert!((inverse_normal_cdf(0.025) + 1.959963984540054).abs() < 1e-14);
        assert!((inverse_normal_cdf(1e-10) + 6.361340902404056).abs() < 1e-12);
    }

    #[test]
    fn wishart_rejects_small_dof() {
        let mut s = stream_for(StreamKey::new(1, 0, Side::Hyper, 0));
        let err = sample_wishart(&mut s, &LowerTriangular::identity(3), 1.5).unwrap_err();
        assert_eq!(err, RandError::DegreesOfFreedomTooSmall { dof: 1.5, k: 3 });
    }

    #[test]
    fn wishart_draws_are_spd() {
        let mut s = stream_for(StreamKey::new(2, 0, Side::Hyper, 0));
        let l = LowerTriangular::identity(4);
        for _ in 0..200 {
            let w = sample_wishart(&mut s, &l, 4.0).unwrap();
            assert!(cholesky(&w).is_ok());
        }
    }

    #[test]
    fn prec_and_scale_forms_agree_in_distribution_shape() {
        // With W = I both forms use the same Bartlett draws.
        let id = LowerTriangular::identity(3);
        let key = StreamKey::new(5, 1, Side::Hyper, 0);
        let a = sample_wishart(&mut stream_for(key), &id, 6.0).unwrap();
        let b = sample_wishart_prec(&mut stream_for(key), &id, 6.0).unwrap();
        assert_eq!(a, b);
    }
}
