//! Four in-process nodes produce exactly the serial chain.

use bpmf::data::{build_ratings, generate_synthetic, split_stream, split_train_test, synthetic_stream};
use bpmf::dist::cluster::run_loopback;
use bpmf::dist::exchange::DEFAULT_BUFFER_CAPACITY;
use bpmf::sampler::{run, SamplerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_synthetic(120, 90, 4, 0.2, 0.2, &mut synthetic_stream(5));
    let (train, test) = split_train_test(&data.triplets, 0.2, &mut split_stream(5));
    let train = build_ratings(&train, data.m, data.n)?;
    let config = SamplerConfig { iterations: 10, burn_in: 3, alpha: 25.0, ..SamplerConfig::new(6) };

    let serial = run(config.clone(), &train, &test.points)?;
    let nodes = run_loopback(&config, &train, &test.points, 4, true, DEFAULT_BUFFER_CAPACITY)?;
    for node in &nodes {
        let sent: usize = node.stats.phases.iter().map(|p| p.sent.iter().sum::<usize>()).sum();
        let same = node.report.history.iter().zip(&serial.history).all(|(a, b)| a.rmse_avg.to_bits() == b.rmse_avg.to_bits());
        println!("node {}: {sent} items sent, {} frames, rmse_avg matches serial: {same}", node.node, node.stats.frames_sent);
    }
    println!("final rmse_avg {:.4}", serial.final_rmse_avg.unwrap_or(f64::NAN));
    Ok(())
}
