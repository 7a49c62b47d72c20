//! Serial Gibbs sampling on synthetic data, printing RMSE per iteration.

use bpmf::data::{build_ratings, generate_synthetic, split_stream, split_train_test, synthetic_stream};
use bpmf::sampler::{Engine, SamplerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_synthetic(200, 150, 4, 0.2, 0.3, &mut synthetic_stream(0));
    let (train, test) = split_train_test(&data.triplets, 0.2, &mut split_stream(0));
    let train = build_ratings(&train, data.m, data.n)?;

    let config = SamplerConfig { iterations: 40, burn_in: 10, alpha: 1.0 / 0.09, ..SamplerConfig::new(4) };
    let mut engine = Engine::new(config, &train, &test.points)?;
    while !engine.is_done() {
        let r = engine.step()?;
        println!("iter {:3}  rmse_sample {:.4}  rmse_avg {:.4}", r.iteration, r.rmse_sample, r.rmse_avg);
    }
    let (u, v) = engine.posterior_means()?;
    println!("posterior means: U {}x{}, V {}x{}", u.count(), u.k(), v.count(), v.k());
    Ok(())
}
