#![allow(dead_code)]

use bpmf::data::{build_ratings, generate_synthetic, split_stream, split_train_test, synthetic_stream, RatingTriplet, RatingsMatrix, SyntheticData};
use bpmf::linalg::{LowerTriangular, SquareMatrix};
use bpmf::rng::RngStream;

pub struct Problem {
    pub data: SyntheticData,
    pub train: RatingsMatrix,
    pub test: Vec<RatingTriplet>,
}

/// Synthetic low-rank ratings with 20% of the cells held out.
pub fn synthetic(m: usize, n: usize, k_true: usize, density: f64, noise_sd: f64, seed: u64) -> Problem {
    let data = generate_synthetic(m, n, k_true, density, noise_sd, &mut synthetic_stream(seed));
    let (train, test) = split_train_test(&data.triplets, 0.2, &mut split_stream(seed));
    let train = build_ratings(&train, m, n).unwrap();
    Problem { data, train, test: test.points }
}

pub fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

/// Bᵀ·B + k·I for B with standard normal entries.
pub fn random_spd(k: usize, s: &mut RngStream) -> SquareMatrix {
    let b: Vec<f64> = (0..k * k).map(|_| s.normal()).collect();
    let mut a = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let dot: f64 = (0..k).map(|r| b[r * k + i] * b[r * k + j]).sum();
            a[i * k + j] = dot + if i == j { k as f64 } else { 0.0 };
        }
    }
    SquareMatrix::from_row_major(k, a).unwrap()
}

/// Lower factor with positive diagonal in [0.5, 1.5] and N(0, 0.5²) below.
pub fn random_factor(k: usize, s: &mut RngStream) -> LowerTriangular {
    let mut m = SquareMatrix::zeros(k);
    for i in 0..k {
        for j in 0..i {
            m.set(i, j, 0.5 * s.normal());
        }
        m.set(i, i, 0.5 + s.uniform());
    }
    LowerTriangular::from_lower(&m).unwrap()
}

/// ‖a − b‖_F / ‖b‖_F.
pub fn rel_err(a: &SquareMatrix, b: &SquareMatrix) -> f64 {
    let diff: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / b.frobenius_norm()
}

pub fn outer(v: &[f64]) -> SquareMatrix {
    let k = v.len();
    SquareMatrix::from_row_major(k, (0..k * k).map(|i| v[i / k] * v[i % k]).collect()).unwrap()
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &SquareMatrix) -> SquareMatrix {
    let k = a.k();
    let mut m: Vec<Vec<f64>> = (0..k).map(|i| {
        let mut row = a.row(i).to_vec();
        row.extend((0..k).map(|j| if i == j { 1.0 } else { 0.0 }));
        row
    }).collect();
    for c in 0..k {
        let piv = (c..k).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, piv);
        let d = m[c][c];
        m[c].iter_mut().for_each(|x| *x /= d);
        for r in 0..k {
            if r != c {
                let f = m[r][c];
                let pivot_row = m[c].clone();
                m[r].iter_mut().zip(&pivot_row).for_each(|(x, p)| *x -= f * p);
            }
        }
    }
    SquareMatrix::from_row_major(k, m.into_iter().flat_map(|r| r[k..].to_vec()).collect()).unwrap()
}
