mod common;

use bpmf::data::RatingTriplet;
use bpmf::linalg::{cholesky, LowerTriangular, SquareMatrix};
use bpmf::rng::{sample_mvn_prec, stream_for, Side, StreamKey};
use bpmf::sampler::{
    predict_and_score, run, sample_hyper, update_item, GaussianParams, HyperPrior, LatentMatrix, SamplerConfig,
    SamplerState,
};
use bpmf::sched::AlgorithmChoice;
use common::{bits, invert, random_spd, synthetic};
use proptest::prelude::*;

fn key(side: Side, item: u64) -> StreamKey {
    StreamKey::new(77, 1, side, item)
}

/// Posterior scale W* from its defining formula, inverted independently.
fn posterior_scale(items: &LatentMatrix, prior_w0: &SquareMatrix, beta0: f64, mu0: &[f64]) -> SquareMatrix {
    let (n, k) = (items.count() as f64, items.k());
    let xbar: Vec<f64> = (0..k).map(|j| (0..items.count()).map(|i| items.row(i)[j]).sum::<f64>() / n).collect();
    let beta = beta0 + n;
    let mut w_inv = invert(prior_w0);
    for i in 0..k {
        for j in 0..k {
            let scatter: f64 = (0..items.count()).map(|r| (items.row(r)[i] - xbar[i]) * (items.row(r)[j] - xbar[j])).sum();
            let shrink = beta0 * n / beta * (mu0[i] - xbar[i]) * (mu0[j] - xbar[j]);
            w_inv.set(i, j, w_inv.get(i, j) + scatter + shrink);
        }
    }
    invert(&w_inv)
}

#[test]
fn hyper_precision_mean_matches_posterior() {
    let k = 4;
    let mut s = stream_for(key(Side::Noise, 0));
    let items = LatentMatrix::from_rows(k, (0..12 * k).map(|_| s.normal()).collect());
    let prior = HyperPrior::default_for(k);
    let w = posterior_scale(&items, &SquareMatrix::identity(k), 2.0, &vec![0.0; k]);
    let nu = k as f64 + 12.0;
    let draws = 10_000;
    let mut mean = SquareMatrix::zeros(k);
    for d in 0..draws {
        let g = sample_hyper(&items, &prior, &mut stream_for(StreamKey::new(5, d, Side::Hyper, 0))).unwrap();
        mean = mean.add(&g.lambda_chol.reconstruct().scaled(1.0 / draws as f64));
    }
    for i in 0..k {
        for j in 0..k {
            let scale = nu * (w.get(i, i) * w.get(j, j)).sqrt();
            let err = (mean.get(i, j) - nu * w.get(i, j)).abs() / scale;
            assert!(err < 0.05, "({i},{j}): {} vs {}", mean.get(i, j), nu * w.get(i, j));
        }
    }
}

#[test]
fn hyper_draws_concentrate_on_generating_params() {
    let k = 4;
    let mut s = stream_for(key(Side::Noise, 1));
    let lambda = random_spd(k, &mut s).scaled(0.5);
    let l = cholesky(&lambda).unwrap();
    let mu = [1.0, -1.0, 0.5, 2.0];
    let mut rows = Vec::new();
    for _ in 0..10_000 {
        rows.extend(sample_mvn_prec(&mut s, &mu, &l));
    }
    let items = LatentMatrix::from_rows(k, rows);
    let g = sample_hyper(&items, &HyperPrior::default_for(k), &mut s).unwrap();
    let got = g.lambda_chol.reconstruct();
    for i in 0..k {
        assert!((g.mu[i] - mu[i]).abs() < 0.1 * mu[i].abs().max(1.0), "mu[{i}] = {}", g.mu[i]);
        for j in 0..k {
            let scale = (lambda.get(i, i) * lambda.get(j, j)).sqrt();
            assert!((got.get(i, j) - lambda.get(i, j)).abs() < 0.1 * scale, "Λ({i},{j})");
        }
    }
}

#[test]
fn scalar_update_matches_closed_form_posterior() {
    // Λ = 2, μ = 0.5, α = 3, users o = (1, -2, 0.5), ratings r = (1, 0, 2):
    // Λ* = 2 + 3·5.25, Λ*μ* = 1 + 3·(1 + 0 + 1).
    let other = LatentMatrix::from_rows(1, vec![1.0, -2.0, 0.5]);
    let params = GaussianParams { mu: vec![0.5], lambda_chol: LowerTriangular::from_lower(&SquareMatrix::from_diag(&[2f64.sqrt()])).unwrap() };
    let lam = 2.0 + 3.0 * 5.25;
    let mean = (1.0 + 3.0 * 2.0) / lam;
    let n = 100_000;
    let xs: Vec<f64> = (0..n)
        .map(|i| {
            let mut st = stream_for(StreamKey::new(1, i, Side::Movies, 0));
            update_item(&[0, 1, 2], &[1.0, 0.0, 2.0], &other, &params, 3.0, &mut st, AlgorithmChoice::RankOne).unwrap()[0]
        })
        .collect();
    let m = xs.iter().sum::<f64>() / n as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    assert!((m / mean - 1.0).abs() < 0.02, "mean {m} vs {mean}");
    assert!((v * lam - 1.0).abs() < 0.02, "variance {v} vs {}", 1.0 / lam);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn update_methods_are_bit_identical(k in 1usize..=16, nnz in 0usize..=2048, seed in any::<u64>()) {
        let mut s = stream_for(StreamKey::new(seed, 0, Side::Noise, 9));
        let other = LatentMatrix::from_rows(k, (0..nnz.max(1) * k).map(|_| s.normal()).collect());
        let idx: Vec<u32> = (0..nnz as u32).collect();
        let vals: Vec<f64> = (0..nnz).map(|_| s.normal()).collect();
        let params = GaussianParams { mu: (0..k).map(|_| s.normal()).collect(), lambda_chol: cholesky(&random_spd(k, &mut s)).unwrap() };
        let draw = |c| update_item(&idx, &vals, &other, &params, 2.5, &mut stream_for(StreamKey::new(seed, 1, Side::Users, 3)), c).unwrap();
        let a = draw(AlgorithmChoice::RankOne);
        prop_assert_eq!(bits(&a), bits(&draw(AlgorithmChoice::FullChol)));
        prop_assert_eq!(bits(&a), bits(&draw(AlgorithmChoice::ParallelChol(nnz.div_ceil(256).max(2)))));
    }
}

#[test]
fn processing_order_does_not_change_rows() {
    let p = synthetic(30, 20, 2, 0.4, 0.1, 3);
    let other = LatentMatrix::from_rows(2, (0..30 * 2).map(|i| (i as f64 * 0.37).sin()).collect());
    let params = GaussianParams::standard(2);
    let upd = |m: usize| {
        let (idx, vals) = p.train.movie(m);
        update_item(idx, vals, &other, &params, 4.0, &mut stream_for(key(Side::Movies, m as u64)), AlgorithmChoice::RankOne).unwrap()
    };
    let forward: Vec<Vec<f64>> = (0..20).map(upd).collect();
    let mut backward: Vec<Vec<f64>> = (0..20).rev().map(upd).collect();
    backward.reverse();
    assert_eq!(forward, backward);
}

fn state_with(u: Vec<f64>, v: Vec<f64>, k: usize, tests: usize) -> SamplerState {
    let (uc, vc) = (u.len() / k, v.len() / k);
    SamplerState {
        iteration: 1,
        alpha: 2.0,
        u: LatentMatrix::from_rows(k, u),
        v: LatentMatrix::from_rows(k, v),
        hyper_u: GaussianParams::standard(k),
        hyper_v: GaussianParams::standard(k),
        u_sum: LatentMatrix::zeros(uc, k),
        v_sum: LatentMatrix::zeros(vc, k),
        pred_sum: vec![0.0; tests],
        pred_count: 0,
    }
}

#[test]
fn exact_and_unit_offset_predictions() {
    let mut st = state_with(vec![1.0, 2.0], vec![3.0, -1.0], 1, 4);
    let exact = [RatingTriplet::new(0, 0, 3.0), RatingTriplet::new(1, 1, -2.0)];
    assert_eq!(predict_and_score(&mut st, &exact, 0, None), (0.0, 0.0));
    let off = [RatingTriplet::new(0, 0, 2.0), RatingTriplet::new(1, 1, -3.0), RatingTriplet::new(0, 1, -2.0), RatingTriplet::new(1, 0, 5.0)];
    let mut st = state_with(vec![1.0, 2.0], vec![3.0, -1.0], 1, 4);
    let (s, a) = predict_and_score(&mut st, &off, 0, None);
    assert_eq!((s, a), (1.0, 1.0));
}

#[test]
fn rmse_ignores_test_order() {
    let p = synthetic(40, 30, 3, 0.3, 0.2, 8);
    let k = 3;
    let u: Vec<f64> = (0..40 * k).map(|i| (i as f64 * 0.11).cos()).collect();
    let v: Vec<f64> = (0..30 * k).map(|i| (i as f64 * 0.23).sin()).collect();
    let mut reversed = p.test.clone();
    reversed.reverse();
    let a = predict_and_score(&mut state_with(u.clone(), v.clone(), k, p.test.len()), &p.test, 0, Some((-1.0, 1.0)));
    let b = predict_and_score(&mut state_with(u, v, k, p.test.len()), &reversed, 0, Some((-1.0, 1.0)));
    assert_eq!(a, b);
}

#[test]
fn zero_iterations_give_empty_history() {
    let p = synthetic(20, 10, 2, 0.5, 0.1, 1);
    let r = run(SamplerConfig { iterations: 0, burn_in: 0, ..SamplerConfig::new(2) }, &p.train, &p.test).unwrap();
    assert!(r.history.is_empty());
    assert_eq!(r.final_rmse_avg, None);
}

#[test]
fn same_seed_same_report() {
    let p = synthetic(50, 40, 3, 0.3, 0.1, 2);
    let cfg = SamplerConfig { iterations: 6, burn_in: 2, alpha: 25.0, seed: 9, ..SamplerConfig::new(3) };
    let a = run(cfg.clone(), &p.train, &p.test).unwrap();
    let b = run(cfg, &p.train, &p.test).unwrap();
    let rm = |r: &bpmf::sampler::RunReport| r.history.iter().flat_map(|h| [h.rmse_sample, h.rmse_avg]).collect::<Vec<_>>();
    assert_eq!(bits(&rm(&a)), bits(&rm(&b)));
    assert_eq!(bits(a.u_mean.as_slice()), bits(b.u_mean.as_slice()));
    assert_eq!(bits(a.v_mean.as_slice()), bits(b.v_mean.as_slice()));
}

#[test]
fn rmse_approaches_noise_floor_on_easy_data() {
    // Rank 1, dense: the chain converges quickly from any start.
    let p = synthetic(100, 80, 1, 0.5, 0.1, 4);
    let cfg = SamplerConfig { iterations: 60, burn_in: 20, alpha: 100.0, ..SamplerConfig::new(1) };
    let r = run(cfg, &p.train, &p.test).unwrap();
    let last = r.final_rmse_avg.unwrap();
    assert!(last < 0.13, "rmse_avg {last}");
}
