mod common;

use bpmf::linalg::{cholesky, LowerTriangular, SquareMatrix};
use bpmf::rng::{sample_mvn_prec, sample_wishart, std_normal, stream_for, Side, StreamKey};
use common::{invert, random_spd};

fn key(item: u64) -> StreamKey {
    StreamKey::new(2024, 0, Side::Noise, item)
}

#[test]
fn uniform_draws_pass_kolmogorov_smirnov() {
    let n = 1_000_000;
    let mut s = stream_for(key(0));
    let mut u: Vec<f64> = (0..n).map(|_| s.uniform()).collect();
    u.sort_by(f64::total_cmp);
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &x)| f64::max((i + 1) as f64 / n as f64 - x, x - i as f64 / n as f64))
        .fold(0.0, f64::max);
    // Asymptotic critical value at the 0.01 level.
    assert!(d < 1.6276 / (n as f64).sqrt(), "D = {d}");
}

#[test]
fn keys_differing_only_in_item_differ_early() {
    for item in 0..100u64 {
        let a: Vec<u64> = {
            let mut s = stream_for(key(item));
            (0..64).map(|_| s.next_u64()).collect()
        };
        let mut s = stream_for(key(item + 1));
        let b: Vec<u64> = (0..64).map(|_| s.next_u64()).collect();
        assert!(a.iter().zip(&b).all(|(x, y)| x != y));
    }
}

#[test]
fn standard_normal_moments() {
    let x = std_normal(&mut stream_for(key(1)), 1_000_000);
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() <= 0.005, "mean {mean}");
    assert!((var - 1.0).abs() <= 0.01, "variance {var}");
    assert_eq!(std_normal(&mut stream_for(key(1)), 1000), x[..1000].to_vec());
}

fn covariance(samples: &[Vec<f64>]) -> SquareMatrix {
    let k = samples[0].len();
    let n = samples.len() as f64;
    let mean: Vec<f64> = (0..k).map(|j| samples.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let mut c = SquareMatrix::zeros(k);
    for i in 0..k {
        for j in 0..k {
            c.set(i, j, samples.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / (n - 1.0));
        }
    }
    c
}

#[test]
fn mvn_with_diagonal_precision() {
    let l = cholesky(&SquareMatrix::from_diag(&[4.0, 1.0])).unwrap();
    let mut s = stream_for(key(2));
    let xs: Vec<Vec<f64>> = (0..100_000).map(|_| sample_mvn_prec(&mut s, &[0.0, 0.0], &l)).collect();
    let c = covariance(&xs);
    assert!((c.get(0, 0) / 0.25 - 1.0).abs() < 0.05, "{}", c.get(0, 0));
    assert!((c.get(1, 1) - 1.0).abs() < 0.05, "{}", c.get(1, 1));
}

#[test]
fn mvn_covariance_is_inverse_precision() {
    let mut s = stream_for(key(3));
    let lambda = random_spd(4, &mut s).scaled(0.25);
    let l = cholesky(&lambda).unwrap();
    let mean = [1.0, -2.0, 0.5, 0.0];
    let xs: Vec<Vec<f64>> = (0..100_000).map(|_| sample_mvn_prec(&mut s, &mean, &l)).collect();
    let c = covariance(&xs);
    let want = invert(&lambda);
    let err = c.as_slice().iter().zip(want.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 0.05, "max covariance error {err}");
    for j in 0..4 {
        let m = xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64;
        assert!((m - mean[j]).abs() < 0.02);
    }
}

#[test]
fn scalar_wishart_is_chi_square() {
    let mut s = stream_for(key(4));
    let n = 100_000;
    let draws: Vec<f64> =
        (0..n).map(|_| sample_wishart(&mut s, &LowerTriangular::identity(1), 5.0).unwrap().get(0, 0)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    assert!((mean / 5.0 - 1.0).abs() < 0.02, "mean {mean}");
    assert!((var / 10.0 - 1.0).abs() < 0.05, "variance {var}");
}

#[test]
fn wishart_mean_is_dof_times_scale() {
    let mut s = stream_for(key(5));
    let w = random_spd(4, &mut s).scaled(0.25);
    let lw = cholesky(&w).unwrap();
    let dof = 6.5;
    let n = 10_000;
    let mut mean = SquareMatrix::zeros(4);
    for _ in 0..n {
        let x = sample_wishart(&mut s, &lw, dof).unwrap();
        assert!(cholesky(&x).is_ok(), "draw is not positive definite");
        mean = mean.add(&x.scaled(1.0 / n as f64));
    }
    for i in 0..4 {
        for j in 0..4 {
            // Off-diagonal entries can be near zero; scale by the diagonal.
            let scale = dof * (w.get(i, i) * w.get(j, j)).sqrt();
            let err = (mean.get(i, j) - dof * w.get(i, j)).abs() / scale;
            assert!(err < 0.05, "entry ({i},{j}): {} vs {}", mean.get(i, j), dof * w.get(i, j));
        }
    }
}
